//! Built-in binary test objects.

use ndarray::Array2;

use crate::error::{ensure_positive, invalid, Result};
use crate::field::Grid;
use crate::measurement::ObjectMask;

/// Two vertical slits of width `a`, centres `d` apart, height `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleSlit {
    pub width: f64,
    pub separation: f64,
    pub height: f64,
}

impl Default for DoubleSlit {
    fn default() -> Self {
        Self {
            width: 100e-6,
            separation: 200e-6,
            height: 500e-6,
        }
    }
}

impl DoubleSlit {
    pub fn mask(&self, grid: &Grid) -> Result<ObjectMask> {
        ensure_positive("slit_width", self.width)?;
        ensure_positive("slit_separation", self.separation)?;
        ensure_positive("slit_height", self.height)?;
        if self.separation < self.width {
            return Err(invalid("slit_separation", "slits overlap"));
        }
        let t = Array2::from_shape_fn(grid.shape(), |(r, c)| {
            let (x, y) = (grid.x(c), grid.y(r));
            let in_slit = (x - self.separation / 2.0).abs() < self.width / 2.0
                || (x + self.separation / 2.0).abs() < self.width / 2.0;
            (in_slit && y.abs() < self.height / 2.0) as u8 as f64
        });
        ObjectMask::new(*grid, t).map_err(|_| invalid("object", "double slit is smaller than one pixel"))
    }
}

/// Annulus crossed by a vertical bar that overshoots it above and below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingGlyph {
    pub outer_radius: f64,
    pub ring_width: f64,
    pub bar_width: f64,
    pub bar_length: f64,
}

impl Default for RingGlyph {
    fn default() -> Self {
        Self {
            outer_radius: 400e-6,
            ring_width: 100e-6,
            bar_width: 100e-6,
            bar_length: 1000e-6,
        }
    }
}

impl RingGlyph {
    pub fn mask(&self, grid: &Grid) -> Result<ObjectMask> {
        ensure_positive("ring_radius", self.outer_radius)?;
        ensure_positive("ring_width", self.ring_width)?;
        ensure_positive("bar_width", self.bar_width)?;
        ensure_positive("bar_length", self.bar_length)?;
        if self.ring_width > self.outer_radius {
            return Err(invalid("ring_width", "wider than the ring radius"));
        }
        let inner = self.outer_radius - self.ring_width;
        let t = Array2::from_shape_fn(grid.shape(), |(r, c)| {
            let (x, y) = (grid.x(c), grid.y(r));
            let rho = x.hypot(y);
            let ring = rho < self.outer_radius && rho >= inner;
            let bar = x.abs() < self.bar_width / 2.0 && y.abs() < self.bar_length / 2.0;
            (ring || bar) as u8 as f64
        });
        ObjectMask::new(*grid, t).map_err(|_| invalid("object", "ring glyph is smaller than one pixel"))
    }
}

/// Places a transmittance image (values in `[0, 1]`, pixel size `pitch`)
/// centred on `grid` by nearest-neighbour sampling.
pub fn mask_from_image(image: &Array2<f64>, pitch: f64, grid: &Grid) -> Result<ObjectMask> {
    ensure_positive("mask_pitch", pitch)?;
    let (rows, cols) = image.dim();
    if rows == 0 || cols == 0 {
        return Err(invalid("object_file", "empty image"));
    }
    let t = Array2::from_shape_fn(grid.shape(), |(r, c)| {
        let u = grid.x(c) / pitch + cols as f64 / 2.0;
        let v = grid.y(r) / pitch + rows as f64 / 2.0;
        if u < 0.0 || v < 0.0 {
            return 0.0;
        }
        let (iu, iv) = (u.floor() as usize, v.floor() as usize);
        if iu < cols && iv < rows {
            image[(iv, iu)]
        } else {
            0.0
        }
    });
    ObjectMask::new(*grid, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_slit_pixel_counts() {
        let grid = Grid::square(256, 6.25e-6).unwrap();
        let mask = DoubleSlit::default().mask(&grid).unwrap();
        // each slit 100 um x 500 um = 16 x 80 pixels
        assert_eq!(mask.transmittance.sum(), 2.0 * 16.0 * 80.0);
        let support = mask.support();
        assert_eq!((support.rows, support.cols), (80, 48));
        // centre column pair lies in the gap
        assert_eq!(mask.transmittance[(128, 128)], 0.0);
    }

    #[test]
    fn ring_glyph_shape() {
        let grid = Grid::square(256, 6.25e-6).unwrap();
        let glyph = RingGlyph::default();
        let mask = glyph.mask(&grid).unwrap();
        let t = &mask.transmittance;
        // on the ring at +x, inside the hole, on the bar overshoot
        let col = |x: f64| (x / 6.25e-6 + 127.5).round() as usize;
        assert_eq!(t[(128, col(350e-6))], 1.0);
        assert_eq!(t[(128, col(200e-6))], 0.0);
        assert_eq!(t[(col(-450e-6), 128)], 1.0);
        assert_eq!(t[(col(-520e-6), 128)], 0.0);
        assert!(RingGlyph { ring_width: 1e-3, ..glyph }.mask(&grid).is_err());
    }

    #[test]
    fn image_masks_are_centred() {
        let grid = Grid::square(8, 1.0).unwrap();
        let mut img = Array2::zeros((2, 2));
        img[(0, 0)] = 1.0;
        let mask = mask_from_image(&img, 2.0, &grid).unwrap();
        // the top-left image pixel covers the 2x2 block just above-left of centre
        assert_eq!(mask.transmittance.sum(), 4.0);
        assert_eq!(mask.transmittance[(2, 2)], 1.0);
        assert_eq!(mask.transmittance[(3, 3)], 1.0);
        assert_eq!(mask.transmittance[(4, 4)], 0.0);
    }
}
