//! Classical ghost imaging: second-order correlation between the reference
//! images and the bucket signal, and the speckle size it is limited by.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::FftDirection;

use crate::error::{Error, Result};
use crate::fft::fft2_inplace;
use crate::field::Grid;
use crate::measurement::{MeasurementVector, SensingMatrix, SpeckleEnsemble};

/// Realizations required before the speckle autocorrelation is trusted.
pub const MIN_SPECKLE_ENSEMBLE: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationImage {
    pub grid: Grid,
    pub values: Array2<f64>,
    pub k_used: usize,
}

/// Covariance estimator `g_j = 1/K sum_s (I_sj - mean_j)(B_s - mean_B)`.
pub fn correlate_gi(a: &SensingMatrix, y: &MeasurementVector) -> Result<CorrelationImage> {
    let k = a.rows();
    if k != y.len() {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: y.len(),
        });
    }
    if k < 2 {
        return Err(Error::InsufficientEnsemble { have: k, need: 2 });
    }
    let mean_b = y.values.sum() / k as f64;
    let centred = y.values.mapv(|b| b - mean_b);
    // sum_s (I_sj - mean_j) dB_s = sum_s I_sj dB_s because sum_s dB_s = 0
    let g = a.data.t().dot(&centred) / k as f64;
    let values = g
        .into_shape_with_order(a.grid.shape())
        .map_err(|e| Error::GridMismatch(e.to_string()))?;
    Ok(CorrelationImage {
        grid: a.grid,
        values,
        k_used: k,
    })
}

/// Radially averaged, normalized intensity autocovariance of an ensemble.
///
/// Returns `(radius in pixels, value)` pairs, one per integer radius bin, out
/// to half the smaller image side. Fluctuations are taken about the
/// per-pixel ensemble mean; the value at zero lag is 1.
pub fn speckle_autocorrelation(ensemble: &SpeckleEnsemble) -> Result<Vec<(f64, f64)>> {
    let k = ensemble.count();
    if k < 2 {
        return Err(Error::InsufficientEnsemble { have: k, need: 2 });
    }
    let (_, ny, nx) = ensemble.images.dim();
    let mean = ensemble.images.mean_axis(Axis(0)).expect("non-empty ensemble");
    let (py, px) = (2 * ny, 2 * nx);
    let mut power = Array2::<f64>::zeros((py, px));
    let mut buffer = Array2::<Complex64>::zeros((py, px));
    for image in ensemble.images.axis_iter(Axis(0)) {
        buffer.fill(Complex64::default());
        for ((r, c), v) in image.indexed_iter() {
            buffer[(r, c)] = Complex64::new(v - mean[(r, c)], 0.0);
        }
        fft2_inplace(&mut buffer, FftDirection::Forward);
        power.zip_mut_with(&buffer, |p, b| *p += b.norm_sqr());
    }
    let mut corr = power.mapv(|p| Complex64::new(p, 0.0));
    fft2_inplace(&mut corr, FftDirection::Inverse);

    let max_lag = nx.min(ny) / 2;
    let mut sums = vec![0.0; max_lag + 1];
    let mut radii = vec![0.0; max_lag + 1];
    let mut counts = vec![0usize; max_lag + 1];
    for dy in -(max_lag as isize)..=max_lag as isize {
        for dx in -(max_lag as isize)..=max_lag as isize {
            let radius = ((dx * dx + dy * dy) as f64).sqrt();
            let bin = radius.round() as usize;
            if bin > max_lag {
                continue;
            }
            let overlap = ((nx - dx.unsigned_abs()) * (ny - dy.unsigned_abs())) as f64;
            let value = corr[(dy.rem_euclid(py as isize) as usize, dx.rem_euclid(px as isize) as usize)].re / overlap;
            sums[bin] += value;
            radii[bin] += radius;
            counts[bin] += 1;
        }
    }
    let zero = sums[0];
    let peak = ensemble.images.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(zero > 1e-24 * peak * peak) {
        return Err(Error::FlatAutocorrelation);
    }
    Ok((0..=max_lag)
        .filter(|&b| counts[b] > 0)
        .map(|b| (radii[b] / counts[b] as f64, sums[b] / counts[b] as f64 / zero))
        .collect())
}

/// Full width at half maximum of the speckle autocorrelation, in meters.
pub fn speckle_fwhm(ensemble: &SpeckleEnsemble) -> Result<f64> {
    let k = ensemble.count();
    if k < MIN_SPECKLE_ENSEMBLE {
        return Err(Error::InsufficientEnsemble {
            have: k,
            need: MIN_SPECKLE_ENSEMBLE,
        });
    }
    let profile = speckle_autocorrelation(ensemble)?;
    let half = profile
        .windows(2)
        .find(|w| w[0].1 >= 0.5 && w[1].1 < 0.5)
        .map(|w| {
            let ((r0, v0), (r1, v1)) = (w[0], w[1]);
            r0 + (v0 - 0.5) / (v0 - v1) * (r1 - r0)
        })
        .ok_or(Error::FlatAutocorrelation)?;
    Ok(2.0 * half * ensemble.grid.pitch)
}
