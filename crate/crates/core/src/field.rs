//! Scalar optical fields on uniform grids: pseudo-thermal source screens and
//! free-space propagation between planes.
//!
//! Two discrete propagators are provided. The transfer-function propagator
//! (paraxial angular spectrum) keeps the grid and conserves power exactly; it
//! is valid while `z <= N * pitch^2 / lambda`. The single-transform Fresnel
//! propagator rescales the pitch to `lambda * z / (N * pitch)` and is used for
//! long hops. Both factor into one 1-D kernel per axis, so besides the FFT
//! route over the whole grid they can be evaluated between arbitrary windows
//! with two small matrix products ([`SeparableKernel`]).

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftDirection;

use crate::error::{ensure_positive, invalid, Error, Result};
use crate::fft::{fft1, fft2_inplace, fft_freq};

/// Uniform square-pixel sampling of a plane, centred on the optical axis.
///
/// Pixel centres sit at `(i - (n - 1) / 2) * pitch`, so the origin falls on a
/// pixel corner for even `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub pitch: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, pitch: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(invalid("grid", format!("need at least 2x2 pixels, got {nx}x{ny}")));
        }
        ensure_positive("pitch", pitch)?;
        Ok(Self { nx, ny, pitch })
    }

    pub fn square(n: usize, pitch: f64) -> Result<Self> {
        Self::new(n, n, pitch)
    }

    pub fn extent_x(&self) -> f64 {
        self.nx as f64 * self.pitch
    }

    pub fn extent_y(&self) -> f64 {
        self.ny as f64 * self.pitch
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical x coordinate of the centre of column `col`.
    pub fn x(&self, col: usize) -> f64 {
        centered_index(col, self.nx) * self.pitch
    }

    /// Physical y coordinate of the centre of row `row`.
    pub fn y(&self, row: usize) -> f64 {
        centered_index(row, self.ny) * self.pitch
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }
}

#[inline]
pub(crate) fn centered_index(i: usize, n: usize) -> f64 {
    i as f64 - (n as f64 - 1.0) / 2.0
}

/// Rectangular block of pixels inside a parent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Window {
    pub fn full(grid: &Grid) -> Self {
        Self {
            row0: 0,
            col0: 0,
            rows: grid.ny,
            cols: grid.nx,
        }
    }

    /// `rows x cols` block centred in `grid`. Fails if it does not fit.
    pub fn centered(grid: &Grid, rows: usize, cols: usize) -> Result<Self> {
        if rows > grid.ny || cols > grid.nx || rows == 0 || cols == 0 {
            return Err(Error::GridMismatch(format!(
                "centred window {rows}x{cols} does not fit grid {}x{}",
                grid.ny, grid.nx
            )));
        }
        if !(grid.ny - rows).is_multiple_of(2) || !(grid.nx - cols).is_multiple_of(2) {
            return Err(Error::GridMismatch(format!(
                "window {rows}x{cols} cannot be centred exactly in grid {}x{}",
                grid.ny, grid.nx
            )));
        }
        Ok(Self {
            row0: (grid.ny - rows) / 2,
            col0: (grid.nx - cols) / 2,
            rows,
            cols,
        })
    }

    pub fn union(&self, other: &Window) -> Window {
        let row0 = self.row0.min(other.row0);
        let col0 = self.col0.min(other.col0);
        let row1 = (self.row0 + self.rows).max(other.row0 + other.rows);
        let col1 = (self.col0 + self.cols).max(other.col0 + other.cols);
        Window {
            row0,
            col0,
            rows: row1 - row0,
            cols: col1 - col0,
        }
    }

    pub fn contains(&self, other: &Window) -> bool {
        other.row0 >= self.row0
            && other.col0 >= self.col0
            && other.row0 + other.rows <= self.row0 + self.rows
            && other.col0 + other.cols <= self.col0 + self.cols
    }

    pub fn fits(&self, grid: &Grid) -> bool {
        self.row0 + self.rows <= grid.ny && self.col0 + self.cols <= grid.nx
    }

    /// This window expressed relative to the origin of `outer`.
    pub fn relative_to(&self, outer: &Window) -> Window {
        debug_assert!(outer.contains(self));
        Window {
            row0: self.row0 - outer.row0,
            col0: self.col0 - outer.col0,
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn slice<'a, T>(&self, array: &'a Array2<T>) -> ArrayView2<'a, T> {
        array.slice(s![
            self.row0..self.row0 + self.rows,
            self.col0..self.col0 + self.cols
        ])
    }

    /// Largest distance from the axis to an outer pixel edge along x and y.
    fn max_offset(&self, grid: &Grid) -> (f64, f64) {
        let half = grid.pitch / 2.0;
        let x = grid
            .x(self.col0)
            .abs()
            .max(grid.x(self.col0 + self.cols - 1).abs())
            + half;
        let y = grid
            .y(self.row0)
            .abs()
            .max(grid.y(self.row0 + self.rows - 1).abs())
            + half;
        (x, y)
    }
}

/// Sampled complex amplitude on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: Grid,
    pub values: Array2<Complex64>,
    pub wavelength: f64,
}

impl ComplexField {
    pub fn new(grid: Grid, values: Array2<Complex64>, wavelength: f64) -> Result<Self> {
        ensure_positive("wavelength", wavelength)?;
        if values.dim() != grid.shape() {
            return Err(Error::GridMismatch(format!(
                "values {:?} vs grid {:?}",
                values.dim(),
                grid.shape()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(invalid("values", "field contains non-finite samples"));
        }
        Ok(Self {
            grid,
            values,
            wavelength,
        })
    }

    /// `sum |u|^2 * pitch^2`.
    pub fn total_power(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.pitch.powi(2)
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    /// Bounding box of the non-zero samples, or `None` for an all-zero field.
    pub fn support(&self) -> Option<Window> {
        support_window(&self.values, |v| v.norm_sqr() > 0.0)
    }
}

pub(crate) fn support_window<T>(values: &Array2<T>, nonzero: impl Fn(&T) -> bool) -> Option<Window> {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for ((r, c), v) in values.indexed_iter() {
        if nonzero(v) {
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
    }
    (r0 != usize::MAX).then(|| Window {
        row0: r0,
        col0: c0,
        rows: r1 - r0 + 1,
        cols: c1 - c0 + 1,
    })
}

/// Amplitude profile of the laser spot on the ground glass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Envelope {
    /// Unit amplitude inside the diameter, zero outside.
    UniformDisk,
    /// Gaussian with 1/e amplitude radius `D / 2`, truncated at radius `D`.
    GaussianWaist,
}

impl Envelope {
    pub fn name(&self) -> &'static str {
        match self {
            Envelope::UniformDisk => "uniform_disk",
            Envelope::GaussianWaist => "gaussian_waist",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "uniform_disk" => Some(Envelope::UniformDisk),
            "gaussian_waist" => Some(Envelope::GaussianWaist),
            _ => None,
        }
    }
}

/// Pseudo-thermal source: a laser spot of transverse size `diameter` on a
/// rotating ground-glass disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub diameter: f64,
    pub envelope: Envelope,
    pub wavelength: f64,
    pub seed: u64,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("diameter", self.diameter)?;
        ensure_positive("wavelength", self.wavelength)
    }

    /// Radius beyond which the envelope is exactly zero.
    pub fn support_radius(&self) -> f64 {
        match self.envelope {
            Envelope::UniformDisk => self.diameter / 2.0,
            Envelope::GaussianWaist => self.diameter,
        }
    }

    fn amplitude(&self, r: f64) -> f64 {
        if r > self.support_radius() {
            return 0.0;
        }
        match self.envelope {
            Envelope::UniformDisk => 1.0,
            Envelope::GaussianWaist => {
                let w = self.diameter / 2.0;
                (-(r / w).powi(2)).exp()
            }
        }
    }
}

/// The non-zero block of one source realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceScreen {
    pub window: Window,
    pub values: Array2<Complex64>,
}

impl SourceScreen {
    pub fn embed(&self, grid: Grid, wavelength: f64) -> ComplexField {
        let mut values = Array2::zeros(grid.shape());
        values
            .slice_mut(s![
                self.window.row0..self.window.row0 + self.window.rows,
                self.window.col0..self.window.col0 + self.window.cols
            ])
            .assign(&self.values);
        ComplexField {
            grid,
            values,
            wavelength,
        }
    }
}

/// Random number stream for realization `index` of `seed`; streams are
/// independent of each other and of evaluation order.
pub(crate) fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Envelope support of `spec` on `grid`, with the grid-size precondition.
pub fn source_support(spec: &SourceSpec, grid: &Grid) -> Result<Window> {
    spec.validate()?;
    let required = 2.0 * spec.diameter;
    let extent = grid.extent_x().min(grid.extent_y());
    if extent < required {
        return Err(Error::GridTooSmall { extent, required });
    }
    let radius = spec.support_radius();
    let span = |n: usize, coord: &dyn Fn(usize) -> f64| -> Option<(usize, usize)> {
        let inside: Vec<usize> = (0..n).filter(|&i| coord(i).abs() <= radius).collect();
        Some((*inside.first()?, *inside.last()?))
    };
    let (c0, c1) = span(grid.nx, &|i| grid.x(i))
        .ok_or_else(|| invalid("diameter", "source is smaller than one pixel"))?;
    let (r0, r1) = span(grid.ny, &|i| grid.y(i))
        .ok_or_else(|| invalid("diameter", "source is smaller than one pixel"))?;
    Ok(Window {
        row0: r0,
        col0: c0,
        rows: r1 - r0 + 1,
        cols: c1 - c0 + 1,
    })
}

/// Draws the non-zero block of realization `realization_index`.
///
/// Every pixel inside the envelope gets an independent phase, uniform on
/// `[0, 2pi)`, drawn in raster order from the stream keyed by
/// `(spec.seed, realization_index)`.
pub fn sample_source_screen(
    spec: &SourceSpec,
    grid: &Grid,
    realization_index: u64,
) -> Result<SourceScreen> {
    let window = source_support(spec, grid)?;
    let mut rng = realization_rng(spec.seed, realization_index);
    let mut values = Array2::zeros((window.rows, window.cols));
    for r in 0..window.rows {
        let y = grid.y(window.row0 + r);
        for c in 0..window.cols {
            let x = grid.x(window.col0 + c);
            let amplitude = spec.amplitude(x.hypot(y));
            if amplitude > 0.0 {
                let phase = 2.0 * PI * rng.gen::<f64>();
                values[(r, c)] = Complex64::from_polar(amplitude, phase);
            }
        }
    }
    Ok(SourceScreen { window, values })
}

/// One realization of the ground-glass field, `envelope * exp(i phi)`.
pub fn sample_source_field(
    spec: &SourceSpec,
    grid: &Grid,
    realization_index: u64,
) -> Result<ComplexField> {
    Ok(sample_source_screen(spec, grid, realization_index)?.embed(*grid, spec.wavelength))
}

/// Which discrete propagator to use for a hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationPath {
    /// Transfer function when its sampling rule holds, otherwise Fresnel.
    Auto,
    AngularSpectrum,
    Fresnel,
}

impl PropagationPath {
    pub fn name(&self) -> &'static str {
        match self {
            PropagationPath::Auto => "auto",
            PropagationPath::AngularSpectrum => "angular_spectrum",
            PropagationPath::Fresnel => "fresnel",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "auto" => Some(PropagationPath::Auto),
            "angular_spectrum" => Some(PropagationPath::AngularSpectrum),
            "fresnel" => Some(PropagationPath::Fresnel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    TransferFunction,
    SingleFresnel,
}

/// A planned propagation from one grid to the destination plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    method: Method,
    pub source: Grid,
    pub destination: Grid,
    pub wavelength: f64,
    pub distance: f64,
}

/// Largest distance the transfer-function propagator samples without aliasing.
pub fn angular_spectrum_limit(grid: &Grid, wavelength: f64) -> f64 {
    grid.nx.min(grid.ny) as f64 * grid.pitch.powi(2) / wavelength
}

impl Hop {
    /// Resolves `path` for a field whose non-zero samples lie in `support`.
    pub fn plan(
        grid: &Grid,
        wavelength: f64,
        distance: f64,
        path: PropagationPath,
        support: &Window,
    ) -> Result<Self> {
        ensure_positive("distance", distance)?;
        ensure_positive("wavelength", wavelength)?;
        let limit = angular_spectrum_limit(grid, wavelength);
        let method = match path {
            PropagationPath::AngularSpectrum if distance > limit => {
                return Err(Error::SamplingViolation {
                    path: "angular-spectrum",
                    distance,
                    critical: limit,
                })
            }
            PropagationPath::AngularSpectrum => Method::TransferFunction,
            PropagationPath::Fresnel => Method::SingleFresnel,
            PropagationPath::Auto if distance <= limit => Method::TransferFunction,
            PropagationPath::Auto => Method::SingleFresnel,
        };
        let destination = match method {
            Method::TransferFunction => *grid,
            Method::SingleFresnel => {
                if grid.nx != grid.ny {
                    return Err(Error::GridMismatch(
                        "single-transform Fresnel needs a square grid".into(),
                    ));
                }
                // The input chirp exp(i pi r^2 / lambda z) must change by less
                // than pi per pixel over the illuminated region.
                let (rx, ry) = support.max_offset(grid);
                let critical = 2.0 * rx.max(ry) * grid.pitch / wavelength;
                if distance < critical {
                    return Err(Error::SamplingViolation {
                        path: "fresnel",
                        distance,
                        critical,
                    });
                }
                Grid::square(grid.nx, wavelength * distance / (grid.nx as f64 * grid.pitch))?
            }
        };
        Ok(Self {
            method,
            source: *grid,
            destination,
            wavelength,
            distance,
        })
    }

    pub fn is_angular_spectrum(&self) -> bool {
        self.method == Method::TransferFunction
    }

    fn carrier(&self) -> Complex64 {
        Complex64::cis(2.0 * PI * (self.distance / self.wavelength).fract())
    }

    fn scale(&self) -> Complex64 {
        match self.method {
            Method::TransferFunction => self.carrier(),
            Method::SingleFresnel => {
                let lz = self.wavelength * self.distance;
                self.carrier() * Complex64::new(0.0, -1.0) * (self.source.pitch.powi(2) / lz)
            }
        }
    }

    /// Full-grid propagation by FFT.
    pub fn apply(&self, field: &ComplexField) -> Result<ComplexField> {
        if field.grid != self.source {
            return Err(Error::GridMismatch("field grid differs from planned hop".into()));
        }
        let mut values = field.values.clone();
        match self.method {
            Method::TransferFunction => {
                let hx = self.transfer_1d(self.source.nx);
                let hy = self.transfer_1d(self.source.ny);
                fft2_inplace(&mut values, FftDirection::Forward);
                let norm = (self.source.nx * self.source.ny) as f64;
                let scale = self.scale() / norm;
                for ((r, c), v) in values.indexed_iter_mut() {
                    *v *= hy[r] * hx[c] * scale;
                }
                fft2_inplace(&mut values, FftDirection::Inverse);
            }
            Method::SingleFresnel => {
                let n = self.source.nx;
                let chirp_in = self.chirp(&self.source);
                let ramp = centered_ramp(n, 1.0);
                for ((r, c), v) in values.indexed_iter_mut() {
                    *v *= chirp_in[r] * chirp_in[c] * ramp[r] * ramp[c];
                }
                fft2_inplace(&mut values, FftDirection::Forward);
                let chirp_out = self.chirp(&self.destination);
                let post = centered_post(n);
                let scale = self.scale();
                for ((r, c), v) in values.indexed_iter_mut() {
                    *v *= chirp_out[r] * chirp_out[c] * post[r] * post[c] * scale;
                }
            }
        }
        Ok(ComplexField {
            grid: self.destination,
            values,
            wavelength: self.wavelength,
        })
    }

    /// Separable operator taking the `source_window` block of the input to the
    /// `destination_window` block of the output.
    pub fn kernel(&self, source_window: &Window, destination_window: &Window) -> SeparableKernel {
        let (kx, ky) = match self.method {
            Method::TransferFunction => {
                let hx = self.impulse_1d(self.source.nx);
                let hy = self.impulse_1d(self.source.ny);
                (
                    circulant_block(&hx, destination_window.col0, destination_window.cols, source_window.col0, source_window.cols),
                    circulant_block(&hy, destination_window.row0, destination_window.rows, source_window.row0, source_window.rows),
                )
            }
            Method::SingleFresnel => (
                self.fresnel_block(destination_window.col0, destination_window.cols, source_window.col0, source_window.cols),
                self.fresnel_block(destination_window.row0, destination_window.rows, source_window.row0, source_window.rows),
            ),
        };
        SeparableKernel {
            kx,
            ky,
            scale: self.scale(),
            source: *source_window,
            destination: *destination_window,
        }
    }

    fn transfer_1d(&self, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                let f = fft_freq(k, n, self.source.pitch);
                Complex64::cis(-PI * self.wavelength * self.distance * f * f)
            })
            .collect()
    }

    fn impulse_1d(&self, n: usize) -> Vec<Complex64> {
        let mut h = self.transfer_1d(n);
        fft1(&mut h, FftDirection::Inverse);
        let inv = 1.0 / n as f64;
        h.iter_mut().for_each(|v| *v *= inv);
        h
    }

    fn chirp(&self, grid: &Grid) -> Vec<Complex64> {
        let lz = self.wavelength * self.distance;
        (0..grid.nx)
            .map(|i| {
                let x = grid.x(i);
                Complex64::cis(PI * x * x / lz)
            })
            .collect()
    }

    fn fresnel_block(&self, out0: usize, out_len: usize, in0: usize, in_len: usize) -> Array2<Complex64> {
        let n = self.source.nx;
        let chirp_in = self.chirp(&self.source);
        let chirp_out = self.chirp(&self.destination);
        Array2::from_shape_fn((out_len, in_len), |(o, i)| {
            let (k, m) = (out0 + o, in0 + i);
            chirp_out[k] * chirp_in[m] * dft_phase(centered_index(m, n) * centered_index(k, n), n)
        })
    }
}

/// `exp(-2 pi i t / n)` with `t` reduced modulo `n` first.
fn dft_phase(t: f64, n: usize) -> Complex64 {
    Complex64::cis(-2.0 * PI * t.rem_euclid(n as f64) / n as f64)
}

/// Pre-transform ramp `exp(+2 pi i c m / n)` for the centred DFT.
fn centered_ramp(n: usize, sign: f64) -> Vec<Complex64> {
    let c = (n as f64 - 1.0) / 2.0;
    (0..n).map(|m| dft_phase(-sign * c * m as f64, n)).collect()
}

/// Post-transform factor `exp(+2 pi i c k / n) * exp(-2 pi i c^2 / n)`.
fn centered_post(n: usize) -> Vec<Complex64> {
    let c = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|k| dft_phase(-c * k as f64, n) * dft_phase(c * c, n))
        .collect()
}

fn circulant_block(h: &[Complex64], out0: usize, out_len: usize, in0: usize, in_len: usize) -> Array2<Complex64> {
    let n = h.len();
    Array2::from_shape_fn((out_len, in_len), |(o, i)| {
        let lag = (out0 + o + n - (in0 + i) % n) % n;
        h[lag]
    })
}

/// `out = scale * Ky * block * Kx^T`: a propagation restricted to windows.
#[derive(Debug, Clone)]
pub struct SeparableKernel {
    pub kx: Array2<Complex64>,
    pub ky: Array2<Complex64>,
    pub scale: Complex64,
    pub source: Window,
    pub destination: Window,
}

impl SeparableKernel {
    pub fn apply(&self, block: ArrayView2<Complex64>) -> Array2<Complex64> {
        debug_assert_eq!(block.dim(), (self.source.rows, self.source.cols));
        let mut out = self.ky.dot(&block).dot(&self.kx.t());
        out.mapv_inplace(|v| v * self.scale);
        out
    }

    /// Gram matrices `K^H diag(w) K` per axis, for energy integrals over a
    /// separable weighting of the destination pixels.
    pub fn weighted_gram(&self, wx: &Array1<f64>, wy: &Array1<f64>) -> (Array2<Complex64>, Array2<Complex64>) {
        (gram(&self.kx, wx), gram(&self.ky, wy))
    }
}

fn gram(k: &Array2<Complex64>, w: &Array1<f64>) -> Array2<Complex64> {
    let weighted = Array2::from_shape_fn(k.dim(), |(o, i)| k[(o, i)] * w[o]);
    let conj_t = k.t().mapv(|v| v.conj());
    conj_t.dot(&weighted)
}

/// Propagates `field` by `distance`, choosing the propagator automatically.
pub fn propagate(field: &ComplexField, distance: f64) -> Result<ComplexField> {
    propagate_with(field, distance, PropagationPath::Auto)
}

pub fn propagate_with(field: &ComplexField, distance: f64, path: PropagationPath) -> Result<ComplexField> {
    let support = field.support().unwrap_or_else(|| Window::full(&field.grid));
    Hop::plan(&field.grid, field.wavelength, distance, path, &support)?.apply(field)
}

/// Onset of the far field for an aperture: `2 a^2 / lambda`.
pub fn far_field_distance(aperture: f64, wavelength: f64) -> Result<f64> {
    ensure_positive("aperture", aperture)?;
    ensure_positive("wavelength", wavelength)?;
    Ok(2.0 * aperture * aperture / wavelength)
}

/// Transverse speckle size on the object plane, `lambda * z / D`.
pub fn speckle_size(wavelength: f64, z: f64, diameter: f64) -> Result<f64> {
    ensure_positive("wavelength", wavelength)?;
    ensure_positive("z", z)?;
    ensure_positive("diameter", diameter)?;
    Ok(wavelength * z / diameter)
}
