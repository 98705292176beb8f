//! File formats: little-endian f32 binaries with JSON sidecar headers for
//! images, sinograms and label maps; binary PGM (P5) and PNG export with
//! an HU display window; simple line-plot rendering; CSV tables.

use crate::error::{Error, Result};
use crate::geom::{ScanGeometry, Sinogram};
use crate::grid::ImageGrid;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// JSON sidecar describing a raster binary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: String,
    /// Row-major shape (images: [ny, nx]; sinograms: [n_views, n_det]).
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hu_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hu_intercept: Option<f64>,
    /// Companion weight binary (sinograms only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<String>,
}

/// Sidecar path for a binary path: `x.bin` -> `x.json`.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes raw f64 values as little-endian f32.
pub fn write_f32_bin(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a little-endian f32 binary into f64 values.
pub fn read_f32_bin(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Shape(format!(
            "{} is not a whole number of f32 values",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_sidecar(bin: &Path, sc: &Sidecar) -> Result<()> {
    let f = std::fs::File::create(sidecar_path(bin))?;
    serde_json::to_writer_pretty(BufWriter::new(f), sc)?;
    Ok(())
}

fn read_sidecar(bin: &Path) -> Result<Sidecar> {
    let f = std::fs::File::open(sidecar_path(bin))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Saves an image as f32 binary plus sidecar.
pub fn save_image(path: &Path, grid: &ImageGrid) -> Result<()> {
    write_f32_bin(path, &grid.values)?;
    write_sidecar(
        path,
        &Sidecar {
            kind: "image".into(),
            shape: vec![grid.ny, grid.nx],
            spacing: vec![grid.dy, grid.dx],
            offset: Some(vec![grid.offset_y, grid.offset_x]),
            hu_slope: Some(grid.hu_slope),
            hu_intercept: Some(grid.hu_intercept),
            weights_file: None,
        },
    )
}

pub fn load_image(path: &Path) -> Result<ImageGrid> {
    let sc = read_sidecar(path)?;
    if sc.kind != "image" || sc.shape.len() != 2 || sc.spacing.len() != 2 {
        return Err(Error::Shape(format!("{} is not a 2D image", path.display())));
    }
    let values = read_f32_bin(path)?;
    let (ny, nx) = (sc.shape[0], sc.shape[1]);
    let mut grid = ImageGrid::new(nx, ny, sc.spacing[1], sc.spacing[0], values)?;
    if let Some(off) = sc.offset {
        grid.offset_y = off[0];
        grid.offset_x = off[1];
    }
    if let Some(s) = sc.hu_slope {
        grid.hu_slope = s;
    }
    if let Some(i) = sc.hu_intercept {
        grid.hu_intercept = i;
    }
    Ok(grid)
}

/// Saves post-log values and weights as two binaries with sidecars; the
/// value sidecar records the weight file name.
pub fn save_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    let wpath = weights_path(path);
    write_f32_bin(path, &sino.values)?;
    write_f32_bin(&wpath, &sino.weights)?;
    let g = &sino.geometry;
    write_sidecar(
        path,
        &Sidecar {
            kind: "sinogram".into(),
            shape: vec![g.n_views, g.n_det],
            spacing: vec![g.det_spacing],
            offset: None,
            hu_slope: None,
            hu_intercept: None,
            weights_file: Some(
                wpath
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            ),
        },
    )?;
    write_sidecar(
        &wpath,
        &Sidecar {
            kind: "weights".into(),
            shape: vec![g.n_views, g.n_det],
            spacing: vec![g.det_spacing],
            offset: None,
            hu_slope: None,
            hu_intercept: None,
            weights_file: None,
        },
    )
}

/// Weight binary path for a sinogram path: `x.bin` -> `x.wts.bin`.
pub fn weights_path(sino_bin: &Path) -> PathBuf {
    let stem = sino_bin.file_stem().unwrap_or_default().to_string_lossy();
    sino_bin.with_file_name(format!("{stem}.wts.bin"))
}

/// Loads a sinogram; the geometry (from the experiment config) supplies
/// the ray layout and is validated against the stored shape.
pub fn load_sinogram(path: &Path, geom: &ScanGeometry) -> Result<Sinogram> {
    let sc = read_sidecar(path)?;
    if sc.kind != "sinogram" || sc.shape.len() != 2 {
        return Err(Error::Shape(format!("{} is not a sinogram", path.display())));
    }
    if sc.shape != vec![geom.n_views, geom.n_det] {
        return Err(Error::Shape(format!(
            "sinogram shape {:?} does not match geometry {}x{}",
            sc.shape, geom.n_views, geom.n_det
        )));
    }
    let values = read_f32_bin(path)?;
    let wfile = sc
        .weights_file
        .ok_or_else(|| Error::Shape("sinogram sidecar missing weights_file".into()))?;
    let weights = read_f32_bin(&path.with_file_name(wfile))?;
    Sinogram::new(geom.clone(), values, weights)
}

/// Saves a per-pixel label map (stored as f32 for uniformity).
pub fn save_labels(path: &Path, labels: &[usize], nx: usize, ny: usize) -> Result<()> {
    let vals: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    write_f32_bin(path, &vals)?;
    write_sidecar(
        path,
        &Sidecar {
            kind: "labels".into(),
            shape: vec![ny, nx],
            spacing: vec![1.0, 1.0],
            offset: None,
            hu_slope: None,
            hu_intercept: None,
            weights_file: None,
        },
    )
}

/// Maps HU values to 8-bit gray with a linear display window.
pub fn window_to_gray(values_hu: &[f64], window: (f64, f64)) -> Vec<u8> {
    let (lo, hi) = window;
    let scale = 255.0 / (hi - lo);
    values_hu
        .iter()
        .map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Writes a binary PGM (P5).
pub fn write_pgm(path: &Path, gray: &[u8], nx: usize, ny: usize) -> Result<()> {
    if gray.len() != nx * ny {
        return Err(Error::Shape("gray buffer does not match shape".into()));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P5\n{nx} {ny}\n255\n")?;
    w.write_all(gray)?;
    w.flush()?;
    Ok(())
}

/// Writes grayscale pixels as PGM or PNG depending on the extension.
pub fn write_gray_image(path: &Path, gray: &[u8], nx: usize, ny: usize) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => {
            let img = image::GrayImage::from_raw(nx as u32, ny as u32, gray.to_vec())
                .ok_or_else(|| Error::Shape("gray buffer does not match shape".into()))?;
            img.save(path)
                .map_err(|e| Error::Numerical(format!("PNG encode failed: {e}")))?;
            Ok(())
        }
        _ => write_pgm(path, gray, nx, ny),
    }
}

/// Renders series of y-values (x = index) as a simple line plot into an
/// 8-bit grayscale buffer: white background, black frame, one gray level
/// per series.
pub fn render_line_plot(series: &[&[f64]], width: usize, height: usize) -> Vec<u8> {
    let mut buf = vec![255u8; width * height];
    let margin = 10usize;
    let (x0, x1) = (margin, width - margin);
    let (y0, y1) = (margin, height - margin);
    for x in x0..x1 {
        buf[y0 * width + x] = 0;
        buf[(y1 - 1) * width + x] = 0;
    }
    for y in y0..y1 {
        buf[y * width + x0] = 0;
        buf[y * width + x1 - 1] = 0;
    }
    let finite: Vec<f64> = series
        .iter()
        .flat_map(|s| s.iter())
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    if finite.is_empty() {
        return buf;
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &finite {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let max_len = series.iter().map(|s| s.len()).max().unwrap_or(0);
    for (si, s) in series.iter().enumerate() {
        if s.len() < 2 {
            continue;
        }
        let shade = (40 + 60 * (si % 3)) as u8;
        let px = |i: usize| -> (i64, i64) {
            let fx = i as f64 / (max_len.max(2) - 1) as f64;
            let fy = (s[i] - lo) / (hi - lo);
            (
                (x0 as f64 + fx * (x1 - x0 - 1) as f64) as i64,
                (y1 as f64 - 1.0 - fy * (y1 - y0 - 1) as f64) as i64,
            )
        };
        for i in 1..s.len() {
            if !s[i - 1].is_finite() || !s[i].is_finite() {
                continue;
            }
            let (ax, ay) = px(i - 1);
            let (bx, by) = px(i);
            draw_line(&mut buf, width, height, ax, ay, bx, by, shade);
        }
    }
    buf
}

fn draw_line(buf: &mut [u8], w: usize, h: usize, mut x0: i64, mut y0: i64, x1: i64, y1: i64, shade: u8) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && x0 < w as i64 && y0 >= 0 && y0 < h as i64 {
            buf[y0 as usize * w + x0 as usize] = shade;
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Writes a CSV file with a fixed column order.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]: header plus string cells.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Shape("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{desk_phantom, rasterize_phantom};
    use std::f64::consts::PI;

    #[test]
    fn image_round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.bin");
        let grid = rasterize_phantom(&desk_phantom(0), 16, 12, 2.0, 2.0);
        save_image(&path, &grid).unwrap();
        let loaded = load_image(&path).unwrap();
        assert_eq!(loaded.nx, 16);
        assert_eq!(loaded.ny, 12);
        for (a, b) in grid.values.iter().zip(&loaded.values) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert_eq!(grid.hu_slope, loaded.hu_slope);
    }

    #[test]
    fn sinogram_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.bin");
        let geom = ScanGeometry::parallel(4, 6, 1.5, PI).unwrap();
        let values: Vec<f64> = (0..24).map(|i| i as f64 * 0.5).collect();
        let weights: Vec<f64> = (0..24).map(|i| 1.0 + i as f64).collect();
        let sino = Sinogram::new(geom.clone(), values, weights).unwrap();
        save_sinogram(&path, &sino).unwrap();
        let loaded = load_sinogram(&path, &geom).unwrap();
        for (a, b) in sino.values.iter().zip(&loaded.values) {
            assert_eq!(*a as f32 as f64, *b);
        }
        for (a, b) in sino.weights.iter().zip(&loaded.weights) {
            assert_eq!(*a as f32 as f64, *b);
        }
        // mismatched geometry is rejected
        let other = ScanGeometry::parallel(6, 4, 1.5, PI).unwrap();
        assert!(load_sinogram(&path, &other).is_err());
    }

    #[test]
    fn display_window_endpoints() {
        let gray = window_to_gray(&[800.0, 1000.0, 1200.0, 700.0, 1300.0], (800.0, 1200.0));
        assert_eq!(gray[0], 0);
        assert!(gray[1] == 127 || gray[1] == 128, "midpoint {}", gray[1]);
        assert_eq!(gray[2], 255);
        assert_eq!(gray[3], 0);
        assert_eq!(gray[4], 255);
    }

    #[test]
    fn pgm_has_valid_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        write_pgm(&path, &vec![7u8; 12], 4, 3).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(bytes.len(), b"P5\n4 3\n255\n".len() + 12);
    }

    #[test]
    fn plot_renders_nonuniform_buffer() {
        let ys: Vec<f64> = (0..50).map(|i| ((i as f64) * 0.3).sin()).collect();
        let buf = render_line_plot(&[&ys], 200, 120);
        assert_eq!(buf.len(), 200 * 120);
        assert!(buf.iter().any(|&v| v != 255));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            vec!["fbp".to_string(), "1".to_string()],
            vec!["ep".to_string(), "2".to_string()],
        ];
        write_csv(&path, &["method", "seed"], &rows).unwrap();
        let (header, back) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["method", "seed"]);
        assert_eq!(back, rows);
    }
}
