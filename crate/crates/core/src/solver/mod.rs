//! Sparse reconstruction: `min 1/2 ||y - A Psi alpha||^2 + tau ||alpha||_1`
//! by proximal gradient descent with backtracking.
//!
//! Internally the pixel columns of `A` are scaled to unit norm before the
//! basis transform (the penalty is applied to the coefficients of the scaled
//! image) and, optionally, the data term is
//! row-whitened (see [`whiten`]). The objective trace, the effective `tau`
//! and the optimality certificate all refer to that internal problem.

pub mod basis;
pub mod whiten;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{invalid, Error, Result};
use crate::measurement::{MeasurementVector, SensingMatrix};

pub use basis::{Basis, BasisKind};

/// Consecutive small decreases needed to declare convergence.
const PATIENCE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// Step carried over from the previous iteration, halved on failure.
    Backtracking,
    /// Barzilai-Borwein step clamped to `[1/L, 1e6/L]`, then backtracked.
    BarzilaiBorwein,
}

impl StepRule {
    pub fn name(&self) -> &'static str {
        match self {
            StepRule::Backtracking => "backtracking",
            StepRule::BarzilaiBorwein => "barzilai_borwein",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "backtracking" => Some(StepRule::Backtracking),
            "barzilai_borwein" | "bb" => Some(StepRule::BarzilaiBorwein),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMode {
    Absolute,
    /// `tau_eff = tau * ||B^T b||_inf` on the internal problem.
    RelativeToAtyInf,
}

impl TauMode {
    pub fn name(&self) -> &'static str {
        match self {
            TauMode::Absolute => "absolute",
            TauMode::RelativeToAtyInf => "relative",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "absolute" => Some(TauMode::Absolute),
            "relative" | "relative_to_aty_inf" => Some(TauMode::RelativeToAtyInf),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tau: f64,
    pub max_iters: usize,
    pub tol_rel_objective: f64,
    pub nonneg_project: bool,
    pub step_rule: StepRule,
    pub tau_mode: TauMode,
    pub normalize_columns: bool,
    /// Relative singular-value cutoff for row whitening; `None` disables it.
    pub whitening: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tau: 0.1,
            max_iters: 2000,
            tol_rel_objective: 1e-5,
            nonneg_project: true,
            step_rule: StepRule::BarzilaiBorwein,
            tau_mode: TauMode::RelativeToAtyInf,
            normalize_columns: true,
            whitening: None,
        }
    }
}

impl SolverOptions {
    /// Defaults with nonnegativity on for the cartesian basis only.
    pub fn for_basis(kind: BasisKind) -> Self {
        Self {
            nonneg_project: kind == BasisKind::Cartesian,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(invalid("tau", format!("{} must be finite and >= 0", self.tau)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if !(self.tol_rel_objective > 0.0) {
            return Err(invalid("tol", format!("{} must be > 0", self.tol_rel_objective)));
        }
        if let Some(cutoff) = self.whitening {
            if !(cutoff > 0.0 && cutoff < 1.0) {
                return Err(invalid("whiten_cutoff", format!("{cutoff} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// First-order optimality check of the internal problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Largest violation of the subgradient conditions.
    pub max_violation: f64,
    pub epsilon: f64,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.epsilon
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// `Psi alpha` reshaped to the camera grid, negatives clamped to zero.
    pub image: Array2<f64>,
    /// Basis coefficients of the unclamped image.
    pub coefficients: Array1<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub tau_effective: f64,
    pub kkt: KktReport,
    /// Rows of the internal data term (after whitening, if enabled).
    pub rank: usize,
}

/// `sign(v) max(|v| - t, 0)` elementwise.
pub fn soft_threshold(v: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
    if !(t >= 0.0) {
        return Err(invalid("threshold", format!("{t} must be >= 0")));
    }
    Ok(v.mapv(|x| shrink(x, t)))
}

#[inline]
fn shrink(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

fn check_dims(a: &SensingMatrix, y: &MeasurementVector, basis: &Basis) -> Result<()> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Empty("sensing matrix"));
    }
    if a.rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            actual: y.len(),
        });
    }
    if a.cols() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            actual: a.cols(),
        });
    }
    Ok(())
}

/// `1/2 ||y - A Psi alpha||^2 + tau ||alpha||_1`.
pub fn objective(a: &SensingMatrix, y: &MeasurementVector, basis: &Basis, alpha: ArrayView1<f64>, tau: f64) -> Result<f64> {
    check_dims(a, y, basis)?;
    let x = basis.inverse_flat(alpha)?;
    let r = &y.values - &a.data.dot(&x);
    Ok(0.5 * r.dot(&r) + tau * alpha.mapv(f64::abs).sum())
}

/// `A Psi` with rows mapped through the basis analysis operator.
fn effective_matrix(data: Array2<f64>, basis: &Basis) -> Result<Array2<f64>> {
    match basis.kind {
        BasisKind::Cartesian => Ok(data),
        BasisKind::Dct2 => {
            let mut m = Array2::zeros(data.dim());
            for (src, mut dst) in data.rows().into_iter().zip(m.rows_mut()) {
                dst.assign(&basis.forward_flat(src)?);
            }
            Ok(m)
        }
    }
}

/// The internal problem `min 1/2 ||b - B u||^2 + tau ||u||_1`, where `u` are
/// the basis coefficients of the image with pixels scaled by the column
/// norms of `A`.
struct Problem {
    matrix: Array2<f64>,
    target: Array1<f64>,
    /// Pixel-domain column norms.
    scale: Array1<f64>,
}

impl Problem {
    fn build(a: &SensingMatrix, y: &MeasurementVector, basis: &Basis, opts: &SolverOptions) -> Result<Self> {
        let mut data = a.data.clone();
        let scale = if opts.normalize_columns {
            let norms = data.map_axis(Axis(0), |c| c.dot(&c).sqrt());
            let norms = norms.mapv(|n| if n > 0.0 { n } else { 1.0 });
            data /= &norms;
            norms
        } else {
            Array1::ones(data.ncols())
        };
        let matrix = effective_matrix(data, basis)?;
        let (matrix, target) = match opts.whitening {
            Some(cutoff) => {
                let w = whiten::whiten(matrix.view(), y.values.view(), cutoff)?;
                (w.matrix, w.target)
            }
            None => (matrix, y.values.clone()),
        };
        Ok(Self { matrix, target, scale })
    }

    fn residual(&self, u: &Array1<f64>) -> Array1<f64> {
        self.matrix.dot(u) - &self.target
    }

    fn gradient(&self, residual: &Array1<f64>) -> Array1<f64> {
        self.matrix.t().dot(residual)
    }

    /// Upper estimate of `||B||_2^2` by power iteration.
    fn lipschitz(&self) -> f64 {
        let n = self.matrix.ncols();
        let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
        let mut estimate = 0.0;
        for _ in 0..50 {
            let w = self.matrix.t().dot(&self.matrix.dot(&v));
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                return 1.0;
            }
            let next = norm;
            v = w / norm;
            if (next - estimate).abs() <= 1e-6 * next {
                estimate = next;
                break;
            }
            estimate = next;
        }
        estimate * 1.01
    }
}

/// Proximal map of `eta * tau ||.||_1`, with the nonnegativity constraint
/// folded in when requested.
fn prox(v: &Array1<f64>, threshold: f64, nonneg: bool) -> Array1<f64> {
    if nonneg {
        v.mapv(|x| (x - threshold).max(0.0))
    } else {
        v.mapv(|x| shrink(x, threshold))
    }
}

/// Exact prox of `threshold ||u||_1` plus the constraint `Psi u >= 0`, by
/// Dykstra splitting. Both pieces have closed forms because `Psi` is
/// orthonormal.
fn nonneg_image_prox(v: Array1<f64>, threshold: f64, basis: &Basis) -> Result<Array1<f64>> {
    const SWEEPS: usize = 200;
    let project = |w: &Array1<f64>| -> Result<Array1<f64>> {
        let x = basis.inverse_flat(w.view())?.mapv(|p| p.max(0.0));
        basis.forward_flat(x.view())
    };
    let mut x = v;
    let mut p = Array1::zeros(x.len());
    let mut q = Array1::zeros(x.len());
    for _ in 0..SWEEPS {
        let y = prox(&(&x + &p), threshold, false);
        p = &x + &p - &y;
        let next = project(&(&y + &q))?;
        q = &y + &q - &next;
        let moved = (&next - &x).mapv(f64::abs).fold(0.0, |m: f64, &d| m.max(d));
        let size = next.mapv(f64::abs).fold(0.0, |m: f64, &d| m.max(d));
        x = next;
        if moved <= 1e-12 * size.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(x)
}

/// Subgradient conditions at `u` for the internal problem.
fn kkt(gradient: &Array1<f64>, u: &Array1<f64>, tau: f64, nonneg: bool, epsilon: f64) -> KktReport {
    let mut worst = 0.0f64;
    for (&g, &x) in gradient.iter().zip(u.iter()) {
        let violation = if x != 0.0 {
            (g + x.signum() * tau).abs()
        } else if nonneg {
            (-g - tau).max(0.0)
        } else {
            (g.abs() - tau).max(0.0)
        };
        worst = worst.max(violation);
    }
    KktReport {
        max_violation: worst,
        epsilon,
    }
}

pub fn solve_l1(a: &SensingMatrix, y: &MeasurementVector, basis: &Basis, opts: &SolverOptions) -> Result<ReconstructionResult> {
    opts.validate()?;
    check_dims(a, y, basis)?;
    let problem = Problem::build(a, y, basis, opts)?;
    let nonneg = opts.nonneg_project;
    let aty = problem.gradient(&problem.target).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
    let tau = match opts.tau_mode {
        TauMode::Absolute => opts.tau,
        TauMode::RelativeToAtyInf => opts.tau * aty,
    };
    let objective_at = |u: &Array1<f64>, r: &Array1<f64>| 0.5 * r.dot(r) + tau * u.mapv(f64::abs).sum();
    let step_prox = |v: Array1<f64>, threshold: f64| -> Result<Array1<f64>> {
        match (basis.kind, nonneg) {
            (BasisKind::Dct2, true) => nonneg_image_prox(v, threshold, basis),
            _ => Ok(prox(&v, threshold, nonneg)),
        }
    };

    let n = problem.matrix.ncols();
    let lipschitz = problem.lipschitz();
    let min_step = 1.0 / lipschitz;
    let mut u = Array1::<f64>::zeros(n);
    let mut r = problem.residual(&u);
    let mut g = problem.gradient(&r);
    let mut f = objective_at(&u, &r);
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut trace = vec![f];
    let mut step = min_step;
    let mut streak = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let smooth = 0.5 * r.dot(&r);
        let mut trial_step = step;
        let accepted = loop {
            let candidate = step_prox(&u - &(&g * trial_step), trial_step * tau)?;
            let r_new = problem.residual(&candidate);
            let f_new = objective_at(&candidate, &r_new);
            if !f_new.is_finite() {
                return Err(Error::NonFiniteObjective { iteration: iterations });
            }
            let delta = &candidate - &u;
            let model = smooth + g.dot(&delta) + delta.dot(&delta) / (2.0 * trial_step);
            let smooth_new = 0.5 * r_new.dot(&r_new);
            let sufficient = smooth_new <= model + 1e-12 * smooth.abs().max(f64::MIN_POSITIVE);
            if sufficient && f_new <= f {
                break Some((candidate, r_new, f_new, delta));
            }
            trial_step *= 0.5;
            if trial_step < 1e-12 * min_step {
                break None;
            }
        };
        let Some((u_new, r_new, f_new, delta)) = accepted else {
            // No descent available at machine precision: stationary.
            trace.push(f);
            converged = true;
            break;
        };
        let g_new = problem.gradient(&r_new);
        step = match opts.step_rule {
            StepRule::Backtracking => trial_step,
            StepRule::BarzilaiBorwein => {
                let dg = &g_new - &g;
                let sy = delta.dot(&dg);
                let ss = delta.dot(&delta);
                if sy > 0.0 && ss > 0.0 {
                    (ss / sy).clamp(min_step, 1e6 * min_step)
                } else {
                    min_step
                }
            }
        };
        let decrease = (f - f_new) / f.abs().max(f64::MIN_POSITIVE);
        u = u_new;
        r = r_new;
        g = g_new;
        f = f_new;
        trace.push(f);
        streak = if decrease < opts.tol_rel_objective { streak + 1 } else { 0 };
        if streak >= PATIENCE {
            converged = true;
            break;
        }
    }

    let kkt = match (basis.kind, nonneg) {
        (BasisKind::Dct2, true) => {
            let mapped = step_prox(&u - &(&g * min_step), min_step * tau)?;
            KktReport {
                max_violation: (&u - &mapped).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v)) / min_step,
                epsilon: 1e-4 * aty,
            }
        }
        _ => kkt(&g, &u, tau, nonneg, 1e-4 * aty),
    };
    let pixels = basis.inverse_flat(u.view())? / &problem.scale;
    let coefficients = basis.forward_flat(pixels.view())?;
    let image = pixels
        .mapv(|v| v.max(0.0))
        .into_shape_with_order((basis.ny, basis.nx))
        .map_err(|e| Error::GridMismatch(e.to_string()))?;
    Ok(ReconstructionResult {
        image,
        coefficients,
        objective_trace: trace,
        iterations_used: iterations,
        converged,
        tau_effective: tau,
        kkt,
        rank: problem.matrix.nrows(),
    })
}
