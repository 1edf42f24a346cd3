//! Thin 2-D wrappers over `rustfft`.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

/// In-place unnormalized 2-D transform (rows, then columns).
pub(crate) fn fft2_inplace(data: &mut Array2<Complex64>, direction: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    let (ny, nx) = data.dim();

    let row_fft = planner.plan_fft(nx, direction);
    let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
    for mut row in data.axis_iter_mut(Axis(0)) {
        let slice = row
            .as_slice_mut()
            .expect("rows of a standard-layout array are contiguous");
        row_fft.process_with_scratch(slice, &mut scratch);
    }

    let col_fft = planner.plan_fft(ny, direction);
    let mut scratch = vec![Complex64::default(); col_fft.get_inplace_scratch_len()];
    let mut column = vec![Complex64::default(); ny];
    for mut col in data.axis_iter_mut(Axis(1)) {
        for (dst, src) in column.iter_mut().zip(col.iter()) {
            *dst = *src;
        }
        col_fft.process_with_scratch(&mut column, &mut scratch);
        for (dst, src) in col.iter_mut().zip(column.iter()) {
            *dst = *src;
        }
    }
}

/// 1-D unnormalized transform of a vector.
pub(crate) fn fft1(data: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft(data.len(), direction).process(data);
}

/// Spatial frequency of FFT bin `k` for `n` samples at `pitch` (numpy `fftfreq` order).
pub(crate) fn fft_freq(k: usize, n: usize, pitch: f64) -> f64 {
    let signed = if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    };
    signed / (n as f64 * pitch)
}
