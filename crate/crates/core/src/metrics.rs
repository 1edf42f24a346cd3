//! Image-quality and resolution measures.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::FftDirection;

use crate::error::{invalid, Error, Result};
use crate::fft::fft1;

/// Rayleigh dip: two peaks count as resolved below this valley-to-peak ratio.
pub const RAYLEIGH_DIP: f64 = 0.735;

/// Minimum spacing, in pixels, between the two peaks considered.
const MIN_PEAK_SPACING: usize = 2;

/// Direction of the profile taken through the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileAxis {
    /// Profile along x; the band selects rows.
    Horizontal,
    /// Profile along y; the band selects columns.
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvabilityReport {
    pub resolved: bool,
    /// Valley between the two peaks over their mean height; `None` without a
    /// second peak.
    pub dip_ratio: Option<f64>,
    /// Distance between the two peaks in meters.
    pub peak_separation: Option<f64>,
    /// Band-averaged profile after removing its minimum.
    pub profile: Array1<f64>,
}

/// Band-averaged 1-D profile of `image`.
pub fn band_profile(image: ArrayView2<f64>, axis: ProfileAxis, band: std::ops::Range<usize>) -> Result<Array1<f64>> {
    let (across, along) = match axis {
        ProfileAxis::Horizontal => (Axis(0), Axis(1)),
        ProfileAxis::Vertical => (Axis(1), Axis(0)),
    };
    if band.is_empty() || band.end > image.len_of(across) {
        return Err(invalid(
            "band",
            format!("{band:?} outside 0..{}", image.len_of(across)),
        ));
    }
    let mut profile = Array1::zeros(image.len_of(along));
    for i in band.clone() {
        profile += &image.index_axis(across, i);
    }
    Ok(profile / band.len() as f64)
}

/// Local maxima as `(centre index, height)`, with plateaus counted once.
/// End samples never count as peaks.
fn local_maxima(p: &Array1<f64>) -> Vec<(f64, f64)> {
    let n = p.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        let mut j = i;
        while j + 1 < n && p[j + 1] == p[i] {
            j += 1;
        }
        if j + 1 < n && p[i] > p[i - 1] && p[i] > p[j + 1] {
            peaks.push(((i + j) as f64 / 2.0, p[i]));
        }
        i = j + 1;
    }
    peaks
}

/// Two-point resolution test on a band-averaged profile.
///
/// `pitch` converts the peak separation to meters.
pub fn two_peak_resolvability(
    image: ArrayView2<f64>,
    axis: ProfileAxis,
    band: std::ops::Range<usize>,
    pitch: f64,
) -> Result<ResolvabilityReport> {
    let raw = band_profile(image, axis, band)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(invalid("image", "contains non-finite values"));
    }
    let floor = raw.fold(f64::INFINITY, |m, &v| m.min(v));
    let profile = raw.mapv(|v| v - floor);
    let top = profile.fold(0.0f64, |m, &v| m.max(v));
    if !(top > 0.0) {
        return Err(Error::NoPeaks);
    }
    let mut peaks = local_maxima(&profile);
    if peaks.is_empty() {
        return Err(Error::NoPeaks);
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let first = peaks[0];
    let second = peaks[1..]
        .iter()
        .find(|p| (p.0 - first.0).abs() >= MIN_PEAK_SPACING as f64)
        .copied();
    let Some(second) = second else {
        return Ok(ResolvabilityReport {
            resolved: false,
            dip_ratio: None,
            peak_separation: None,
            profile,
        });
    };
    let (lo, hi) = if first.0 < second.0 { (first.0, second.0) } else { (second.0, first.0) };
    let valley = (lo.ceil() as usize..=hi.floor() as usize)
        .map(|i| profile[i])
        .fold(f64::INFINITY, f64::min);
    let dip = (valley / ((first.1 + second.1) / 2.0)).clamp(0.0, 1.0);
    Ok(ResolvabilityReport {
        resolved: dip < RAYLEIGH_DIP,
        dip_ratio: Some(dip),
        peak_separation: Some((hi - lo) * pitch),
        profile,
    })
}

fn max_normalized(image: ArrayView2<f64>) -> Array2<f64> {
    let top = image.fold(0.0f64, |m, &v| m.max(v));
    if top > 0.0 {
        image.mapv(|v| v / top)
    } else {
        image.to_owned()
    }
}

/// Mean squared error between max-normalized images.
pub fn mse(recon: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    if recon.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: recon.len(),
        });
    }
    if !truth.iter().any(|&v| v > 0.0) {
        return Err(Error::ZeroTruth);
    }
    let (r, t) = (max_normalized(recon), max_normalized(truth));
    let sum: f64 = r.iter().zip(t.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sum / truth.len() as f64)
}

/// `10 log10(1 / mse)` in dB; infinite for a perfect match.
pub fn psnr(recon: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    Ok(psnr_from_mse(mse(recon, truth)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Pearson correlation between two images of equal size.
pub fn normalized_cross_correlation(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(invalid("image", "constant image has no correlation"));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Dominant period of a fringe profile, in the units of `pitch`.
///
/// The mean is removed, the profile zero-padded to `oversample` times its
/// length and transformed; the strongest spectral line beyond the central
/// lobe (the first local minimum of the magnitude) gives the period.
pub fn fringe_period(profile: &Array1<f64>, pitch: f64, oversample: usize) -> Result<f64> {
    let n = profile.len();
    if n < 4 {
        return Err(invalid("profile", "need at least 4 samples"));
    }
    let len = n * oversample.max(1);
    let mean = profile.sum() / n as f64;
    let mut buffer: Vec<Complex64> = (0..len)
        .map(|i| Complex64::new(if i < n { profile[i] - mean } else { 0.0 }, 0.0))
        .collect();
    fft1(&mut buffer, FftDirection::Forward);
    let magnitude: Vec<f64> = buffer[..len / 2].iter().map(|v| v.norm()).collect();
    let lobe_end = (1..magnitude.len() - 1)
        .find(|&i| magnitude[i] <= magnitude[i - 1] && magnitude[i] <= magnitude[i + 1])
        .ok_or(Error::NoPeaks)?;
    let (bin, _) = magnitude
        .iter()
        .enumerate()
        .skip(lobe_end)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::NoPeaks)?;
    if bin == 0 || magnitude[bin] == 0.0 {
        return Err(Error::NoPeaks);
    }
    Ok(len as f64 * pitch / bin as f64)
}
