//! Image grids: 2D attenuation maps with physical spacing and HU metadata.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Linear attenuation coefficient of water in 1/mm (monoenergetic, ~70 keV).
/// Fixes the Hounsfield scale so that water maps to 1000 HU and air to 0 HU.
pub const MU_WATER_PER_MM: f64 = 0.02;

/// Default HU slope for the water = 1000 HU display convention.
pub const HU_SLOPE_DEFAULT: f64 = 1000.0 / MU_WATER_PER_MM;

/// A 2D attenuation image on a regular grid.
///
/// Values are linear attenuation coefficients in 1/mm, stored row-major
/// (`values[iy * nx + ix]`). Pixel `(ix, iy)` is centered at
/// `((ix - (nx-1)/2) * dx + offset_x, (iy - (ny-1)/2) * dy + offset_y)`
/// in world millimetres, with the rotation isocenter at the world origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub nx: usize,
    pub ny: usize,
    /// Pixel spacing in mm.
    pub dx: f64,
    pub dy: f64,
    /// Grid center offset from the isocenter in mm.
    pub offset_x: f64,
    pub offset_y: f64,
    /// Attenuation per pixel in 1/mm, row-major.
    pub values: Vec<f64>,
    /// Affine map to Hounsfield units: hu = hu_slope * att + hu_intercept.
    pub hu_slope: f64,
    pub hu_intercept: f64,
}

impl ImageGrid {
    /// A zero image with the water = 1000 HU convention and centered grid.
    pub fn zeros(nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        Self::new(nx, ny, dx, dy, vec![0.0; nx * ny])
    }

    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, values: Vec<f64>) -> Result<Self> {
        if nx < 1 || ny < 1 {
            return Err(Error::Shape(format!("grid size {nx}x{ny} must be >= 1")));
        }
        if !(dx > 0.0) || !(dy > 0.0) {
            return Err(Error::Shape(format!("pixel spacing {dx}x{dy} must be > 0")));
        }
        if values.len() != nx * ny {
            return Err(Error::Shape(format!(
                "value length {} != {nx}*{ny}",
                values.len()
            )));
        }
        Ok(ImageGrid {
            nx,
            ny,
            dx,
            dy,
            offset_x: 0.0,
            offset_y: 0.0,
            values,
            hu_slope: HU_SLOPE_DEFAULT,
            hu_intercept: 0.0,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    /// World x coordinate of the center of pixel column `ix`.
    pub fn pixel_x(&self, ix: usize) -> f64 {
        (ix as f64 - 0.5 * (self.nx as f64 - 1.0)) * self.dx + self.offset_x
    }

    /// World y coordinate of the center of pixel row `iy`.
    pub fn pixel_y(&self, iy: usize) -> f64 {
        (iy as f64 - 0.5 * (self.ny as f64 - 1.0)) * self.dy + self.offset_y
    }

    /// Attenuation (1/mm) for a Hounsfield-unit value.
    pub fn att_from_hu(&self, hu: f64) -> f64 {
        (hu - self.hu_intercept) / self.hu_slope
    }

    /// Hounsfield-unit value for an attenuation (1/mm).
    pub fn hu_from_att(&self, att: f64) -> f64 {
        self.hu_slope * att + self.hu_intercept
    }

    /// The image converted to Hounsfield units.
    pub fn to_hu(&self) -> Vec<f64> {
        self.values.iter().map(|&v| self.hu_from_att(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hu_round_trip() {
        let g = ImageGrid::zeros(4, 3, 0.5, 0.5).unwrap();
        for &v in &[0.0, 0.02, 0.045, 1.3e-3] {
            let hu = g.hu_from_att(v);
            let back = g.att_from_hu(hu);
            let rel = (back - v).abs() / v.abs().max(1e-30);
            assert!(rel < 1e-9, "round trip failed: {v} -> {hu} -> {back}");
        }
        // water = 1000 HU convention
        assert!((g.hu_from_att(MU_WATER_PER_MM) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ImageGrid::new(0, 4, 1.0, 1.0, vec![]).is_err());
        assert!(ImageGrid::new(2, 2, -1.0, 1.0, vec![0.0; 4]).is_err());
        assert!(ImageGrid::new(2, 2, 1.0, 1.0, vec![0.0; 3]).is_err());
    }

    #[test]
    fn pixel_centers_are_centered() {
        let g = ImageGrid::zeros(4, 4, 2.0, 2.0).unwrap();
        // symmetric around the isocenter
        assert!((g.pixel_x(0) + g.pixel_x(3)).abs() < 1e-12);
        assert!((g.pixel_y(1) + g.pixel_y(2)).abs() < 1e-12);
        assert!((g.pixel_x(1) - (-1.0)).abs() < 1e-12);
    }
}
