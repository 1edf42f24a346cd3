//! The two detection arms: reference-camera speckle images and the bucket
//! signal behind the object, plus assembly of the linear problem `(A, y)`.
//!
//! The reference camera sits at the same distance from the source as the
//! object, so its images are the object-plane intensity box-averaged onto
//! camera pixels. The bucket detector integrates the far-field intensity of
//! the transmitted field over a square aperture centred on the axis.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{ensure_positive, invalid, Error, Result};
use crate::field::{
    far_field_distance, propagate, propagate_with, sample_source_screen, support_window, ComplexField, Grid, Hop,
    PropagationPath, SeparableKernel, SourceSpec, Window,
};

/// Realizations processed per parallel batch. Results are reduced in index
/// order, so the batch size never changes the output.
const BATCH: usize = 32;

/// Real amplitude transmittance of the object (phase is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub grid: Grid,
    pub transmittance: Array2<f64>,
}

impl ObjectMask {
    pub fn new(grid: Grid, transmittance: Array2<f64>) -> Result<Self> {
        if transmittance.dim() != grid.shape() {
            return Err(Error::GridMismatch(format!(
                "mask {:?} vs grid {:?}",
                transmittance.dim(),
                grid.shape()
            )));
        }
        if transmittance.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(invalid("transmittance", "entries must lie in [0, 1]"));
        }
        if !transmittance.iter().any(|&t| t > 0.0) {
            return Err(invalid("transmittance", "object is fully opaque"));
        }
        Ok(Self { grid, transmittance })
    }

    /// Bounding box of the transmitting pixels.
    pub fn support(&self) -> Window {
        support_window(&self.transmittance, |&t| t > 0.0).expect("validated non-empty")
    }

    /// `|T|^2` box-averaged onto the camera pixels of `camera`.
    pub fn intensity_on_camera(&self, camera: &CameraLayout) -> Array2<f64> {
        let block = camera.roi.slice(&self.transmittance).mapv(|t| t * t);
        box_average(block.view(), camera.factor)
    }
}

/// Test-arm geometry and reference camera pixel pitch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSpec {
    /// Object to bucket-detector distance.
    pub z1: f64,
    /// Side of the square receiving aperture.
    pub aperture: f64,
    pub camera_pitch: f64,
}

impl DetectorSpec {
    pub fn validate(&self, field_pitch: f64) -> Result<()> {
        ensure_positive("z1", self.z1)?;
        ensure_positive("aperture", self.aperture)?;
        ensure_positive("camera_pitch", self.camera_pitch)?;
        if self.camera_pitch < field_pitch * (1.0 - 1e-9) {
            return Err(invalid(
                "camera_pitch",
                format!("{} m is finer than the field grid pitch {} m", self.camera_pitch, field_pitch),
            ));
        }
        Ok(())
    }
}

/// Integer ratio `coarse / fine`, or an error if the pitches do not nest.
pub fn pitch_factor(coarse: f64, fine: f64) -> Result<usize> {
    let ratio = coarse / fine;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-6 * ratio {
        return Err(invalid(
            "camera_pitch",
            format!("{coarse} m is not an integer multiple of the field pitch {fine} m"),
        ));
    }
    Ok(factor as usize)
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn box_average(image: ArrayView2<f64>, factor: usize) -> Array2<f64> {
    let (rows, cols) = (image.nrows() / factor, image.ncols() / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = Array2::zeros((rows, cols));
    for ((r, c), v) in image.indexed_iter() {
        let (br, bc) = (r / factor, c / factor);
        if br < rows && bc < cols {
            out[(br, bc)] += v;
        }
    }
    out.mapv_inplace(|v| v * norm);
    out
}

/// Camera region of interest: `pixels x pixels` camera pixels centred on the
/// axis, each covering `factor x factor` object-grid pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraLayout {
    pub factor: usize,
    pub roi: Window,
    pub grid: Grid,
}

impl CameraLayout {
    pub fn new(object_grid: &Grid, camera_pitch: f64, pixels: usize) -> Result<Self> {
        let factor = pitch_factor(camera_pitch, object_grid.pitch)?;
        let side = pixels * factor;
        let roi = Window::centered(object_grid, side, side).map_err(|_| {
            invalid(
                "roi_pixels",
                format!("{pixels} camera pixels of {camera_pitch} m do not fit the field grid"),
            )
        })?;
        Ok(Self {
            factor,
            roi,
            grid: Grid::square(pixels, object_grid.pitch * factor as f64)?,
        })
    }
}

/// `K` reference-camera intensity images on one camera grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeckleEnsemble {
    pub grid: Grid,
    /// Shape `(K, ny, nx)`.
    pub images: Array3<f64>,
}

impl SpeckleEnsemble {
    pub fn new(grid: Grid, images: Array3<f64>) -> Result<Self> {
        let (_, ny, nx) = images.dim();
        if (ny, nx) != grid.shape() {
            return Err(Error::GridMismatch(format!(
                "images {ny}x{nx} vs camera grid {:?}",
                grid.shape()
            )));
        }
        if images.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("images", "intensities must be finite and nonnegative"));
        }
        Ok(Self { grid, images })
    }

    pub fn count(&self) -> usize {
        self.images.len_of(Axis(0))
    }
}

/// Row `s` is the raster (row-major, top-left first) reshape of image `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    pub grid: Grid,
    pub data: Array2<f64>,
}

impl SensingMatrix {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    /// The first `k` rows.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.rows() {
            return Err(invalid("K", format!("requested {k} of {} rows", self.rows())));
        }
        Ok(Self {
            grid: self.grid,
            data: self.data.slice(s![..k, ..]).to_owned(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Zero-mean Gaussian with standard deviation `sigma * mean(y)`.
    AdditiveGaussian { sigma: f64 },
    /// Photon counting with `scale` counts per unit signal.
    Poisson { scale: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::AdditiveGaussian { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            NoiseModel::AdditiveGaussian { sigma } => Err(invalid("noise_sigma", format!("{sigma} is not >= 0"))),
            NoiseModel::Poisson { scale } => ensure_positive("noise_scale", scale),
        }
    }
}

/// Bucket values `B_s`, in the same order as the rows of the sensing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: Array1<f64>,
    pub noise: NoiseModel,
}

impl MeasurementVector {
    pub fn noiseless(values: Array1<f64>) -> Self {
        Self {
            values,
            noise: NoiseModel::None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(invalid("K", format!("requested {k} of {} values", self.len())));
        }
        Ok(Self {
            values: self.values.slice(s![..k]).to_owned(),
            noise: self.noise,
        })
    }
}

/// Far-field intensity of `source_field` after `z`, box-averaged onto camera
/// pixels of `camera_pitch`.
pub fn reference_intensity(source_field: &ComplexField, z: f64, camera_pitch: f64) -> Result<Array2<f64>> {
    if let Some(support) = source_field.support() {
        let size = support.rows.max(support.cols) as f64 * source_field.grid.pitch;
        let onset = far_field_distance(size, source_field.wavelength)?;
        if z < onset {
            log::warn!("reference camera at {z} m is inside the far-field onset {onset} m");
        }
    }
    let out = propagate(source_field, z)?;
    let factor = pitch_factor(camera_pitch, out.grid.pitch)?;
    if out.grid.nx % factor != 0 || out.grid.ny % factor != 0 {
        return Err(invalid(
            "camera_pitch",
            format!("grid {}x{} is not divisible into {factor}-pixel bins", out.grid.ny, out.grid.nx),
        ));
    }
    Ok(box_average(out.intensity().view(), factor))
}

/// Fraction of each pixel of a 1-D grid axis covered by `[-half, half]`,
/// restricted to the covered span.
fn aperture_axis(n: usize, pitch: f64, coord: impl Fn(usize) -> f64, half: f64) -> Option<(usize, Vec<f64>)> {
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            let x = coord(i);
            let lo = (x - pitch / 2.0).max(-half);
            let hi = (x + pitch / 2.0).min(half);
            ((hi - lo) / pitch).clamp(0.0, 1.0)
        })
        .collect();
    let first = weights.iter().position(|&w| w > 0.0)?;
    let last = weights.iter().rposition(|&w| w > 0.0)?;
    Some((first, weights[first..=last].to_vec()))
}

/// Aperture window and per-axis coverage weights on a detector grid.
fn aperture_weights(grid: &Grid, aperture: f64) -> Result<(Window, Array1<f64>, Array1<f64>)> {
    let half = aperture / 2.0;
    if aperture > grid.extent_x().min(grid.extent_y()) {
        log::warn!(
            "aperture {aperture} m exceeds the detector grid ({} m); integrating over the whole grid",
            grid.extent_x().min(grid.extent_y())
        );
    }
    let narrow = || invalid("aperture", "aperture covers no detector pixel");
    let (c0, wx) = aperture_axis(grid.nx, grid.pitch, |i| grid.x(i), half).ok_or_else(narrow)?;
    let (r0, wy) = aperture_axis(grid.ny, grid.pitch, |i| grid.y(i), half).ok_or_else(narrow)?;
    let window = Window {
        row0: r0,
        col0: c0,
        rows: wy.len(),
        cols: wx.len(),
    };
    Ok((window, Array1::from(wx), Array1::from(wy)))
}

/// Energy of `|propagate(object_field * T, z1)|^2` over the aperture.
///
/// `object_field` is the illumination in the object plane and must live on
/// the object grid. Uses full-grid propagation; see [`AcquisitionPlan`] for
/// the windowed form used in bulk acquisition.
pub fn bucket_measure(object_field: &ComplexField, object: &ObjectMask, det: &DetectorSpec) -> Result<f64> {
    det.validate(object.grid.pitch)?;
    if object_field.grid != object.grid {
        return Err(Error::GridMismatch(format!(
            "illumination grid {:?} vs object grid {:?}",
            object_field.grid, object.grid
        )));
    }
    let mut masked = object_field.clone();
    masked.values.zip_mut_with(&object.transmittance, |u, &t| *u *= t);
    if masked.support().is_none() {
        return Ok(0.0);
    }
    let out = propagate_with(&masked, det.z1, PropagationPath::Auto)?;
    let (window, wx, wy) = aperture_weights(&out.grid, det.aperture)?;
    let block = window.slice(&out.values);
    let mut energy = 0.0;
    for ((r, c), v) in block.indexed_iter() {
        energy += wy[r] * wx[c] * v.norm_sqr();
    }
    Ok(energy * out.grid.pitch.powi(2))
}

/// Bucket detector behind the object, precomputed for a fixed object support.
#[derive(Debug, Clone)]
struct TestArm {
    gram_x: Array2<Complex64>,
    gram_y: Array2<Complex64>,
    factor: f64,
}

impl TestArm {
    fn plan(object: &ObjectMask, wavelength: f64, det: &DetectorSpec, path: PropagationPath) -> Result<(Self, Hop)> {
        let support = object.support();
        let hop = Hop::plan(&object.grid, wavelength, det.z1, path, &support)?;
        let (window, wx, wy) = aperture_weights(&hop.destination, det.aperture)?;
        let kernel = hop.kernel(&support, &window);
        let (gram_x, gram_y) = kernel.weighted_gram(&wx, &wy);
        let factor = hop.destination.pitch.powi(2) * kernel.scale.norm_sqr();
        Ok((Self { gram_x, gram_y, factor }, hop))
    }

    /// `B = p^2 |c|^2 sum conj(V) . (Gy V Gx^T)` for the masked support block `V`.
    fn bucket(&self, masked: &Array2<Complex64>) -> f64 {
        let projected = self.gram_y.dot(masked).dot(&self.gram_x.t());
        let energy: f64 = masked
            .iter()
            .zip(projected.iter())
            .map(|(v, p)| (v.conj() * p).re)
            .sum();
        (energy * self.factor).max(0.0)
    }
}

/// Mean test-detector intensity sampled on a coarse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffractionPattern {
    pub grid: Grid,
    pub values: Array2<f64>,
}

#[derive(Debug, Clone)]
struct PatternArm {
    kernel: SeparableKernel,
    grid: Grid,
}

impl PatternArm {
    /// `pixels x pixels` samples spanning about twice the aperture, spaced at
    /// an integer multiple of the native detector pitch.
    fn plan(object: &ObjectMask, hop: &Hop, aperture: f64, pixels: usize) -> Result<Self> {
        let native = hop.destination;
        let n = native.nx.min(native.ny);
        if pixels < 2 || pixels > n {
            return Err(invalid("pattern_pixels", format!("{pixels} outside 2..={n}")));
        }
        let step = ((2.0 * aperture / (pixels as f64 * native.pitch)).round() as usize).clamp(1, n / pixels);
        let span = pixels * step;
        let window = Window::centered(&native, span, span)
            .or_else(|_| Window::centered(&native, span - 1, span - 1))?;
        let mut kernel = hop.kernel(&object.support(), &window);
        kernel.kx = kernel.kx.slice(s![..;step, ..]).to_owned();
        kernel.ky = kernel.ky.slice(s![..;step, ..]).to_owned();
        Ok(Self {
            kernel,
            grid: Grid::square(pixels, native.pitch * step as f64)?,
        })
    }
}

/// Everything a single bulk acquisition produces.
#[derive(Debug, Clone)]
pub struct Acquisition {
    pub ensemble: SpeckleEnsemble,
    /// One vector per detector, in the order the detectors were given.
    pub buckets: Vec<MeasurementVector>,
    pub pattern: Option<DiffractionPattern>,
}

/// Precomputed kernels for acquiring many realizations through one object.
///
/// Source screens are drawn on the object grid's Fresnel-conjugate grid, so
/// a single source-to-object hop lands exactly on the object pixels. Only the
/// source envelope block and the object-plane window covering the camera ROI
/// and the object support are ever evaluated.
#[derive(Debug, Clone)]
pub struct AcquisitionPlan {
    source: SourceSpec,
    source_grid: Grid,
    illumination: SeparableKernel,
    camera: CameraLayout,
    roi: Window,
    support: Window,
    transmittance: Array2<f64>,
    arms: Vec<TestArm>,
    pattern: Option<PatternArm>,
}

impl AcquisitionPlan {
    /// `z` is the source to object (and source to camera) distance.
    pub fn new(
        source: &SourceSpec,
        object: &ObjectMask,
        z: f64,
        camera_pitch: f64,
        roi_pixels: usize,
        detectors: &[DetectorSpec],
        test_path: PropagationPath,
    ) -> Result<Self> {
        source.validate()?;
        ensure_positive("z", z)?;
        let grid = object.grid;
        if grid.nx != grid.ny {
            return Err(Error::GridMismatch("object grid must be square".into()));
        }
        if detectors.is_empty() {
            return Err(Error::Empty("detectors"));
        }
        let source_grid = Grid::square(grid.nx, source.wavelength * z / (grid.nx as f64 * grid.pitch))?;
        let source_window = crate::field::source_support(source, &source_grid)?;
        let onset = far_field_distance(source.diameter, source.wavelength)?;
        if z < onset {
            log::warn!("object plane at {z} m is inside the source far-field onset {onset} m");
        }
        let hop = Hop::plan(&source_grid, source.wavelength, z, PropagationPath::Fresnel, &source_window)?;
        debug_assert!((hop.destination.pitch - grid.pitch).abs() <= 1e-12 * grid.pitch);

        let camera = CameraLayout::new(&grid, camera_pitch, roi_pixels)?;
        let support = object.support();
        let window = camera.roi.union(&support);
        let illumination = hop.kernel(&source_window, &window);

        let mut arms = Vec::with_capacity(detectors.len());
        for det in detectors {
            det.validate(grid.pitch)?;
            let onset = far_field_distance(support.rows.max(support.cols) as f64 * grid.pitch, source.wavelength)?;
            if det.z1 < onset {
                log::warn!("bucket detector at z1 = {} m is inside the object far-field onset {onset} m", det.z1);
            }
            arms.push(TestArm::plan(object, source.wavelength, det, test_path)?.0);
        }

        Ok(Self {
            source: *source,
            source_grid,
            illumination,
            camera,
            roi: camera.roi.relative_to(&window),
            support: support.relative_to(&window),
            transmittance: support.slice(&object.transmittance).to_owned(),
            arms,
            pattern: None,
        })
    }

    /// Also accumulate the mean intensity pattern of detector `index`.
    pub fn with_pattern(
        mut self,
        object: &ObjectMask,
        det: &DetectorSpec,
        test_path: PropagationPath,
        pixels: usize,
    ) -> Result<Self> {
        let hop = Hop::plan(&object.grid, self.source.wavelength, det.z1, test_path, &object.support())?;
        self.pattern = Some(PatternArm::plan(object, &hop, det.aperture, pixels)?);
        Ok(self)
    }

    pub fn camera(&self) -> &CameraLayout {
        &self.camera
    }

    pub fn source_grid(&self) -> &Grid {
        &self.source_grid
    }

    fn realize(&self, index: u64) -> Result<Shot> {
        let screen = sample_source_screen(&self.source, &self.source_grid, index)?;
        let field = self.illumination.apply(screen.values.view());
        let intensity = self.roi.slice(&field).mapv(|v| v.norm_sqr());
        let image = box_average(intensity.view(), self.camera.factor);
        let mut masked = self.support.slice(&field).to_owned();
        masked.zip_mut_with(&self.transmittance, |u, &t| *u *= t);
        let buckets = self.arms.iter().map(|arm| arm.bucket(&masked)).collect();
        let pattern = self
            .pattern
            .as_ref()
            .map(|p| p.kernel.apply(masked.view()).mapv(|v| v.norm_sqr()));
        Ok(Shot { image, buckets, pattern })
    }

    /// Acquires realizations `first .. first + count` of the source.
    pub fn run(&self, count: usize, first: u64) -> Result<Acquisition> {
        if count == 0 {
            return Err(invalid("K", "need at least one realization"));
        }
        let (rows, cols) = self.camera.grid.shape();
        let mut images = Array3::zeros((count, rows, cols));
        let mut buckets = vec![Array1::zeros(count); self.arms.len()];
        let mut pattern_sum = self.pattern.as_ref().map(|p| Array2::<f64>::zeros(p.grid.shape()));

        for start in (0..count).step_by(BATCH) {
            let end = (start + BATCH).min(count);
            let shots: Vec<Shot> = (start..end)
                .into_par_iter()
                .map(|s| self.realize(first + s as u64))
                .collect::<Result<_>>()?;
            for (offset, shot) in shots.into_iter().enumerate() {
                let s = start + offset;
                images.index_axis_mut(Axis(0), s).assign(&shot.image);
                for (b, value) in buckets.iter_mut().zip(shot.buckets) {
                    b[s] = value;
                }
                if let (Some(sum), Some(p)) = (pattern_sum.as_mut(), shot.pattern) {
                    *sum += &p;
                }
            }
        }

        let pattern = self.pattern.as_ref().zip(pattern_sum).map(|(arm, sum)| DiffractionPattern {
            grid: arm.grid,
            values: sum / count as f64,
        });
        Ok(Acquisition {
            ensemble: SpeckleEnsemble {
                grid: self.camera.grid,
                images,
            },
            buckets: buckets.into_iter().map(MeasurementVector::noiseless).collect(),
            pattern,
        })
    }
}

struct Shot {
    image: Array2<f64>,
    buckets: Vec<f64>,
    pattern: Option<Array2<f64>>,
}

/// Camera region of interest used when none is specified.
pub const DEFAULT_ROI_PIXELS: usize = 64;

/// Acquires `k` paired reference images and bucket values.
pub fn acquire_ensemble(
    spec: &SourceSpec,
    object: &ObjectMask,
    det: &DetectorSpec,
    z: f64,
    k: usize,
) -> Result<(SpeckleEnsemble, MeasurementVector)> {
    let plan = AcquisitionPlan::new(
        spec,
        object,
        z,
        det.camera_pitch,
        DEFAULT_ROI_PIXELS,
        std::slice::from_ref(det),
        PropagationPath::Auto,
    )?;
    let mut acquisition = plan.run(k, 0)?;
    Ok((acquisition.ensemble, acquisition.buckets.remove(0)))
}

pub fn build_sensing_matrix(ensemble: &SpeckleEnsemble) -> Result<SensingMatrix> {
    let k = ensemble.count();
    if k == 0 {
        return Err(Error::Empty("ensemble"));
    }
    let n = ensemble.grid.len();
    let data = ensemble
        .images
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((k, n))
        .map_err(|e| Error::GridMismatch(e.to_string()))?;
    Ok(SensingMatrix {
        grid: ensemble.grid,
        data,
    })
}

pub fn add_noise(y: &MeasurementVector, model: NoiseModel, seed: u64) -> Result<MeasurementVector> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = match model {
        NoiseModel::None => y.values.clone(),
        NoiseModel::AdditiveGaussian { sigma } => {
            let mean = y.values.mean().unwrap_or(0.0);
            let spread = sigma * mean.abs();
            if spread == 0.0 {
                y.values.clone()
            } else {
                let normal = Normal::new(0.0, spread).map_err(|e| invalid("noise_sigma", e.to_string()))?;
                y.values.mapv(|v| v + normal.sample(&mut rng))
            }
        }
        NoiseModel::Poisson { scale } => y.values.mapv(|v| {
            let lambda = v * scale;
            if lambda > 0.0 {
                Poisson::new(lambda).map(|p| p.sample(&mut rng)).unwrap_or(lambda) / scale
            } else {
                0.0
            }
        }),
    };
    Ok(MeasurementVector { values, noise: model })
}

/// `rho = ||y - c A x|| / ||y||` with the scalar `c` fitted by least squares.
pub fn forward_residual(a: &SensingMatrix, y: &MeasurementVector, x_true: &Array2<f64>) -> Result<f64> {
    if a.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            actual: y.len(),
        });
    }
    if x_true.len() != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            actual: x_true.len(),
        });
    }
    let x = Array1::from_iter(x_true.iter().copied());
    let ax = a.data.dot(&x);
    let denom = ax.dot(&ax);
    let norm_y = y.values.dot(&y.values).sqrt();
    if denom == 0.0 {
        return Err(Error::ZeroTruth);
    }
    if norm_y == 0.0 {
        return Err(invalid("y", "measurement vector is zero"));
    }
    let c = ax.dot(&y.values) / denom;
    let residual = &y.values - &(ax * c);
    Ok(residual.dot(&residual).sqrt() / norm_y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{sample_source_field, Envelope};
    use ndarray::array;

    fn spec(diameter: f64, seed: u64) -> SourceSpec {
        SourceSpec {
            diameter,
            envelope: Envelope::UniformDisk,
            wavelength: 650e-9,
            seed,
        }
    }

    fn slab(grid: Grid, half_width: f64, half_height: f64) -> ObjectMask {
        let t = Array2::from_shape_fn(grid.shape(), |(r, c)| {
            (grid.x(c).abs() < half_width && grid.y(r).abs() < half_height) as u8 as f64
        });
        ObjectMask::new(grid, t).unwrap()
    }

    #[test]
    fn box_average_preserves_mean() {
        let img = Array2::from_shape_fn((8, 8), |(r, c)| (r * 8 + c) as f64);
        let half = box_average(img.view(), 2);
        assert_eq!(half.dim(), (4, 4));
        assert_eq!(half[(0, 0)], (0.0 + 1.0 + 8.0 + 9.0) / 4.0);
        assert!((half.mean().unwrap() - img.mean().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pitch_factor_requires_nesting() {
        assert_eq!(pitch_factor(25e-6, 6.25e-6).unwrap(), 4);
        assert!(pitch_factor(20e-6, 6.25e-6).is_err());
        assert!(pitch_factor(3e-6, 6.25e-6).is_err());
    }

    #[test]
    fn object_mask_validation() {
        let grid = Grid::square(4, 1e-6).unwrap();
        assert!(ObjectMask::new(grid, Array2::zeros((4, 4))).is_err());
        assert!(ObjectMask::new(grid, Array2::from_elem((4, 4), 1.5)).is_err());
        assert!(ObjectMask::new(grid, Array2::from_elem((3, 4), 1.0)).is_err());
        assert!(ObjectMask::new(grid, Array2::from_elem((4, 4), 0.5)).is_ok());
    }

    #[test]
    fn point_source_gives_uniform_far_field() {
        let grid = Grid::square(128, 20e-6).unwrap();
        let mut values = Array2::zeros(grid.shape());
        values[(64, 64)] = Complex64::new(1.0, 0.0);
        let field = ComplexField::new(grid, values, 650e-9).unwrap();
        let out_pitch = 650e-9 * 1.2 / (128.0 * 20e-6);
        let img = reference_intensity(&field, 1.2, out_pitch).unwrap();
        let mean = img.mean().unwrap();
        assert!(img.iter().all(|v| (v - mean).abs() < 1e-9 * mean));
    }

    #[test]
    fn coarser_camera_halves_pixels_and_keeps_mean() {
        let grid = Grid::square(128, 20e-6).unwrap();
        let field = sample_source_field(&spec(0.6e-3, 3), &grid, 0).unwrap();
        let p = 650e-9 * 1.2 / (128.0 * 20e-6);
        let fine = reference_intensity(&field, 1.2, p).unwrap();
        let coarse = reference_intensity(&field, 1.2, 2.0 * p).unwrap();
        assert_eq!(coarse.dim(), (fine.nrows() / 2, fine.ncols() / 2));
        let (mf, mc) = (fine.mean().unwrap(), coarse.mean().unwrap());
        assert!((mf - mc).abs() < 1e-12 * mf);
        assert!(reference_intensity(&field, 1.2, 1.5 * p).is_err());
    }

    #[test]
    fn opaque_and_open_objects_bound_the_bucket() {
        let grid = Grid::square(64, 10e-6).unwrap();
        let field = sample_source_field(&spec(0.2e-3, 2), &grid, 0).unwrap();
        let det = DetectorSpec {
            z1: 5e-3,
            aperture: 1.0,
            camera_pitch: 20e-6,
        };
        let open = ObjectMask::new(grid, Array2::from_elem(grid.shape(), 1.0)).unwrap();
        let b = bucket_measure(&field, &open, &det).unwrap();
        assert!((b - field.total_power()).abs() < 1e-6 * field.total_power());

        let mut dark = Array2::zeros(grid.shape());
        dark[(0, 0)] = 1.0;
        let corner = ObjectMask::new(grid, dark).unwrap();
        assert_eq!(bucket_measure(&field, &corner, &det).unwrap(), 0.0);

        let other = Grid::square(64, 11e-6).unwrap();
        let moved = ObjectMask::new(other, Array2::from_elem(other.shape(), 1.0)).unwrap();
        assert!(matches!(bucket_measure(&field, &moved, &det), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn partial_pixels_weighted_by_coverage() {
        let grid = Grid::square(8, 1.0).unwrap();
        let (window, wx, _) = aperture_weights(&grid, 3.0).unwrap();
        // centres at +-0.5, +-1.5; half aperture 1.5 covers half of the outer pair
        assert_eq!(window.cols, 4);
        assert_eq!(wx.to_vec(), vec![0.5, 1.0, 1.0, 0.5]);
    }

    /// Full-grid reference for one realization of a plan.
    fn full_route(
        source: &SourceSpec,
        object: &ObjectMask,
        z: f64,
        det: &DetectorSpec,
        camera: &CameraLayout,
        index: u64,
    ) -> (Array2<f64>, f64) {
        let n = object.grid.nx;
        let sgrid = Grid::square(n, source.wavelength * z / (n as f64 * object.grid.pitch)).unwrap();
        let sfield = sample_source_field(source, &sgrid, index).unwrap();
        let ofield = propagate_with(&sfield, z, PropagationPath::Fresnel).unwrap();
        let ofield = ComplexField::new(object.grid, ofield.values, source.wavelength).unwrap();
        let image = box_average(camera.roi.slice(&ofield.intensity()), camera.factor);
        (image, bucket_measure(&ofield, object, det).unwrap())
    }

    #[test]
    fn windowed_acquisition_matches_full_grid_route() {
        let source = spec(0.6e-3, 9);
        let grid = Grid::square(128, 25e-6).unwrap();
        let object = slab(grid, 120e-6, 200e-6);
        let z = 0.25;
        for z1 in [0.01, 0.2] {
            let det = DetectorSpec {
                z1,
                aperture: 1.3e-3,
                camera_pitch: 50e-6,
            };
            let plan = AcquisitionPlan::new(&source, &object, z, 50e-6, 24, &[det], PropagationPath::Auto).unwrap();
            let acq = plan.run(3, 5).unwrap();
            for s in 0..3 {
                let (image, bucket) = full_route(&source, &object, z, &det, plan.camera(), 5 + s as u64);
                let got = acq.ensemble.images.index_axis(Axis(0), s);
                let scale = image.iter().cloned().fold(0.0, f64::max);
                for (a, b) in got.iter().zip(image.iter()) {
                    assert!((a - b).abs() < 1e-9 * scale);
                }
                let fast = acq.buckets[0].values[s];
                assert!((fast - bucket).abs() < 1e-9 * bucket, "z1={z1}: {fast} vs {bucket}");
            }
        }
    }

    #[test]
    fn single_realization_is_reproducible() {
        let source = spec(0.6e-3, 4);
        let grid = Grid::square(128, 25e-6).unwrap();
        let object = slab(grid, 100e-6, 100e-6);
        let det = DetectorSpec {
            z1: 0.01,
            aperture: 1e-3,
            camera_pitch: 50e-6,
        };
        let plan = AcquisitionPlan::new(&source, &object, 0.25, 50e-6, 16, &[det], PropagationPath::Auto).unwrap();
        let a = plan.run(1, 0).unwrap();
        let b = plan.run(1, 0).unwrap();
        assert_eq!(a.ensemble, b.ensemble);
        assert_eq!(a.buckets, b.buckets);
        assert_eq!(a.ensemble.count(), 1);
    }

    #[test]
    fn sensing_matrix_uses_raster_order() {
        let grid = Grid::square(2, 1.0).unwrap();
        let ens = SpeckleEnsemble::new(grid, array![[[1.0, 2.0], [3.0, 4.0]]]).unwrap();
        let a = build_sensing_matrix(&ens).unwrap();
        assert_eq!(a.data, array![[1.0, 2.0, 3.0, 4.0]]);

        let same = SpeckleEnsemble::new(grid, Array3::from_shape_fn((3, 2, 2), |(_, r, c)| (r * 2 + c + 1) as f64)).unwrap();
        let a = build_sensing_matrix(&same).unwrap();
        let m = nalgebra::DMatrix::from_row_iterator(3, 4, a.data.iter().copied());
        assert_eq!(m.rank(1e-9), 1);

        let empty = SpeckleEnsemble::new(grid, Array3::zeros((0, 2, 2))).unwrap();
        assert!(matches!(build_sensing_matrix(&empty), Err(Error::Empty(_))));
    }

    #[test]
    fn noise_models() {
        let y = MeasurementVector::noiseless(Array1::from_elem(2000, 1.0));
        assert_eq!(add_noise(&y, NoiseModel::None, 1).unwrap().values, y.values);
        assert_eq!(
            add_noise(&y, NoiseModel::AdditiveGaussian { sigma: 0.0 }, 1).unwrap().values,
            y.values
        );
        let noisy = add_noise(&y, NoiseModel::AdditiveGaussian { sigma: 0.1 }, 1).unwrap();
        let sd = (noisy.values.mapv(|v| (v - 1.0).powi(2)).mean().unwrap()).sqrt();
        assert!((sd - 0.1).abs() < 0.01);
        let counted = add_noise(&y, NoiseModel::Poisson { scale: 1e6 }, 2).unwrap();
        assert!(counted.values.iter().all(|v| (v - 1.0).abs() < 0.01));
        assert!(add_noise(&y, NoiseModel::Poisson { scale: 0.0 }, 1).is_err());
        assert!(add_noise(&y, NoiseModel::AdditiveGaussian { sigma: -1.0 }, 1).is_err());
    }

    #[test]
    fn residual_vanishes_for_a_consistent_linear_model() {
        let grid = Grid::square(2, 1.0).unwrap();
        let a = SensingMatrix {
            grid,
            data: array![[1.0, 2.0, 0.0, 1.0], [0.5, 0.0, 3.0, 1.0], [2.0, 1.0, 1.0, 0.0]],
        };
        let x = array![[1.0, 0.0], [0.0, 2.0]];
        let y = MeasurementVector::noiseless(a.data.dot(&array![1.0, 0.0, 0.0, 2.0]) * 7.0);
        assert!(forward_residual(&a, &y, &x).unwrap() < 1e-12);
        let perturbed = MeasurementVector::noiseless(&y.values + &array![1.0, -1.0, 0.0]);
        assert!(forward_residual(&a, &perturbed, &x).unwrap() > 1e-3);
        assert!(matches!(forward_residual(&a, &y, &Array2::zeros((2, 2))), Err(Error::ZeroTruth)));
    }
}
