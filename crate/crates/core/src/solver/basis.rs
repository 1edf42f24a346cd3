//! Orthonormal image bases: the identity and the 2-D DCT-II.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Cartesian,
    Dct2,
}

impl BasisKind {
    pub fn name(&self) -> &'static str {
        match self {
            BasisKind::Cartesian => "cartesian",
            BasisKind::Dct2 => "dct2",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "cartesian" => Some(BasisKind::Cartesian),
            "dct2" | "dct" => Some(BasisKind::Dct2),
            _ => None,
        }
    }
}

/// Synthesis operator `x = Psi alpha` for `ny x nx` images.
#[derive(Debug, Clone)]
pub struct Basis {
    pub kind: BasisKind,
    pub nx: usize,
    pub ny: usize,
    /// Orthonormal DCT-II matrices, `C[k, n]`; empty for the cartesian kind.
    cx: Array2<f64>,
    cy: Array2<f64>,
}

/// `C[k, n] = s_k cos(pi (2n + 1) k / 2N)` with `s_0 = sqrt(1/N)`, else `sqrt(2/N)`.
fn dct_matrix(n: usize) -> Array2<f64> {
    let nf = n as f64;
    Array2::from_shape_fn((n, n), |(k, i)| {
        let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        s * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos()
    })
}

impl Basis {
    pub fn new(kind: BasisKind, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Empty("basis dimensions"));
        }
        let (cx, cy) = match kind {
            BasisKind::Cartesian => (Array2::zeros((0, 0)), Array2::zeros((0, 0))),
            BasisKind::Dct2 => (dct_matrix(nx), dct_matrix(ny)),
        };
        Ok(Self { kind, nx, ny, cx, cy })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, dim: (usize, usize)) -> Result<()> {
        if dim != (self.ny, self.nx) {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: dim.0 * dim.1,
            });
        }
        Ok(())
    }

    /// Analysis: `alpha = Psi^T x`.
    pub fn forward(&self, image: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(image.dim())?;
        Ok(match self.kind {
            BasisKind::Cartesian => image.to_owned(),
            BasisKind::Dct2 => self.cy.dot(&image).dot(&self.cx.t()),
        })
    }

    /// Synthesis: `x = Psi alpha`.
    pub fn inverse(&self, coefficients: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(coefficients.dim())?;
        Ok(match self.kind {
            BasisKind::Cartesian => coefficients.to_owned(),
            BasisKind::Dct2 => self.cy.t().dot(&coefficients).dot(&self.cx),
        })
    }

    /// [`Basis::forward`] on a raster vector.
    pub fn forward_flat(&self, image: ArrayView1<f64>) -> Result<Array1<f64>> {
        let view = self.as_image(image)?;
        Ok(Array1::from_iter(self.forward(view)?))
    }

    /// [`Basis::inverse`] on a raster vector.
    pub fn inverse_flat(&self, coefficients: ArrayView1<f64>) -> Result<Array1<f64>> {
        let view = self.as_image(coefficients)?;
        Ok(Array1::from_iter(self.inverse(view)?))
    }

    fn as_image<'a>(&self, flat: ArrayView1<'a, f64>) -> Result<ArrayView2<'a, f64>> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: flat.len(),
            });
        }
        flat.into_shape_with_order((self.ny, self.nx))
            .map_err(|e| Error::GridMismatch(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn image(ny: usize, nx: usize, seed: Vec<f64>) -> Array2<f64> {
        Array2::from_shape_fn((ny, nx), |(r, c)| seed[(r * nx + c) % seed.len()])
    }

    /// Textbook DCT-II by direct summation.
    fn dct_direct(x: &Array2<f64>) -> Array2<f64> {
        let (ny, nx) = x.dim();
        let s = |k: usize, n: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        Array2::from_shape_fn((ny, nx), |(u, v)| {
            let mut acc = 0.0;
            for r in 0..ny {
                for c in 0..nx {
                    acc += x[(r, c)]
                        * (PI * (2 * r + 1) as f64 * u as f64 / (2 * ny) as f64).cos()
                        * (PI * (2 * c + 1) as f64 * v as f64 / (2 * nx) as f64).cos();
                }
            }
            acc * s(u, ny) * s(v, nx)
        })
    }

    #[test]
    fn constant_image_has_only_a_dc_term() {
        let basis = Basis::new(BasisKind::Dct2, 8, 6).unwrap();
        let coef = basis.forward(Array2::from_elem((6, 8), 2.0).view()).unwrap();
        assert!((coef[(0, 0)] - 2.0 * 48f64.sqrt()).abs() < 1e-12);
        let rest: f64 = coef.iter().skip(1).map(|v| v.abs()).sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn matches_direct_summation() {
        let x = image(5, 7, vec![0.3, -1.2, 2.5, 0.0, 4.1, -0.7, 1.9, 3.3]);
        let basis = Basis::new(BasisKind::Dct2, 7, 5).unwrap();
        let fast = basis.forward(x.view()).unwrap();
        let slow = dct_direct(&x);
        assert!(fast.iter().zip(slow.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn cartesian_is_identity_and_shapes_are_checked() {
        let basis = Basis::new(BasisKind::Cartesian, 3, 2).unwrap();
        let x = image(2, 3, vec![1.0, 2.0, 3.0]);
        assert_eq!(basis.forward(x.view()).unwrap(), x);
        assert!(basis.forward(Array2::zeros((3, 3)).view()).is_err());
        assert!(basis.inverse_flat(Array1::zeros(5).view()).is_err());
    }

    proptest! {
        #[test]
        fn dct_is_orthonormal(ny in 1usize..12, nx in 1usize..12, seed in prop::collection::vec(-10.0f64..10.0, 1..40)) {
            let basis = Basis::new(BasisKind::Dct2, nx, ny).unwrap();
            let x = image(ny, nx, seed);
            let coef = basis.forward(x.view()).unwrap();
            let back = basis.inverse(coef.view()).unwrap();
            let max_err = back.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(max_err <= 1e-10);
            let (nx2, nc2) = (x.mapv(|v| v * v).sum(), coef.mapv(|v| v * v).sum());
            prop_assert!((nx2.sqrt() - nc2.sqrt()).abs() <= 1e-10 * nx2.sqrt().max(1e-300));
        }
    }
}
