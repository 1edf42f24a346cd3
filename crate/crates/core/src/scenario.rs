//! End-to-end runs: acquisition, both reconstructions, metrics and the files
//! a run directory holds. Also the figure sweeps.

use std::fs;
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;

use crate::config::{ExperimentConfig, ObjectSpec};
use crate::error::{Error, Result};
use crate::field::{Grid, SourceSpec};
use crate::gi::correlate_gi;
use crate::io::{read_ensemble, write_ensemble, write_pgm, PgmImage};
use crate::measurement::{
    add_noise, build_sensing_matrix, forward_residual, AcquisitionPlan, CameraLayout, DetectorSpec,
    DiffractionPattern, MeasurementVector, ObjectMask, SensingMatrix,
};
use crate::metrics::{band_profile, fringe_period, mse, psnr_from_mse, two_peak_resolvability, ProfileAxis};
use crate::objects::mask_from_image;
use crate::solver::{solve_l1, Basis, BasisKind, ReconstructionResult};

/// Environment variable that pins the worker thread count.
pub const THREADS_ENV: &str = "GHOSTREC_THREADS";

/// Offsets the noise stream from the source stream of the same seed.
const NOISE_STREAM: u64 = 0x6e6f_6973_6500_0001;

fn stage<T>(name: &'static str, result: Result<T>) -> Result<T> {
    result.map_err(|source| Error::Stage {
        stage: name,
        source: Box::new(source),
    })
}

/// Sizes the global rayon pool from `GHOSTREC_THREADS` when it is set.
/// Results do not depend on the count; this only pins it for byte-level
/// reproducibility checks.
pub fn init_thread_pool_from_env() -> Result<()> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = text.trim().parse().map_err(|_| Error::ConfigInvalid {
        key: THREADS_ENV.into(),
        reason: format!("`{text}` is not a thread count"),
    })?;
    // a pool built earlier in the process wins; that is fine for tests
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn object_grid(cfg: &ExperimentConfig) -> Result<Grid> {
    Grid::square(cfg.grid_size, cfg.object_pitch)
}

pub fn build_object(cfg: &ExperimentConfig) -> Result<ObjectMask> {
    let grid = object_grid(cfg)?;
    match &cfg.object {
        ObjectSpec::DoubleSlit(slit) => slit.mask(&grid),
        ObjectSpec::RingGlyph(ring) => ring.mask(&grid),
        ObjectSpec::File { path, pitch } => mask_from_image(&PgmImage::read(path)?.to_values(), *pitch, &grid),
    }
}

pub fn source_spec(cfg: &ExperimentConfig, seed: u64) -> SourceSpec {
    SourceSpec {
        diameter: cfg.source_diameter,
        envelope: cfg.source_envelope,
        wavelength: cfg.wavelength,
        seed,
    }
}

pub fn detector(cfg: &ExperimentConfig) -> DetectorSpec {
    DetectorSpec {
        z1: cfg.z1,
        aperture: cfg.aperture,
        camera_pitch: cfg.camera_pitch,
    }
}

/// One metrics row. Optional fields are empty in the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub label: String,
    pub object: &'static str,
    pub basis: BasisKind,
    pub z1: f64,
    pub aperture: f64,
    pub camera_pitch: f64,
    pub k: usize,
    pub seed: u64,
    pub rho: f64,
    pub gi_mse: f64,
    pub gi_resolved: Option<bool>,
    pub gi_dip: Option<f64>,
    pub gisc_mse: f64,
    pub gisc_resolved: Option<bool>,
    pub gisc_dip: Option<f64>,
    pub gisc_separation: Option<f64>,
    pub tau_effective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rank: usize,
    pub kkt_violation: f64,
    pub kkt_epsilon: f64,
    pub kkt_passed: bool,
    pub trace_monotone: bool,
    pub fringe_period: Option<f64>,
    pub expected_fringe_period: Option<f64>,
}

pub const METRICS_HEADER: [&str; 28] = [
    "label",
    "object",
    "basis",
    "z1_m",
    "L1_m",
    "camera_pitch_m",
    "K",
    "seed",
    "rho",
    "gi_mse",
    "gi_psnr_db",
    "gi_resolved",
    "gi_dip",
    "gisc_mse",
    "gisc_psnr_db",
    "gisc_resolved",
    "gisc_dip",
    "gisc_separation_m",
    "tau_effective",
    "iterations",
    "converged",
    "rank",
    "kkt_violation",
    "kkt_epsilon",
    "kkt_passed",
    "trace_monotone",
    "fringe_period_m",
    "expected_fringe_period_m",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl RunMetrics {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.label.clone(),
            self.object.to_string(),
            self.basis.name().to_string(),
            self.z1.to_string(),
            self.aperture.to_string(),
            self.camera_pitch.to_string(),
            self.k.to_string(),
            self.seed.to_string(),
            self.rho.to_string(),
            self.gi_mse.to_string(),
            psnr_from_mse(self.gi_mse).to_string(),
            opt(self.gi_resolved),
            opt(self.gi_dip),
            self.gisc_mse.to_string(),
            psnr_from_mse(self.gisc_mse).to_string(),
            opt(self.gisc_resolved),
            opt(self.gisc_dip),
            opt(self.gisc_separation),
            self.tau_effective.to_string(),
            self.iterations.to_string(),
            self.converged.to_string(),
            self.rank.to_string(),
            self.kkt_violation.to_string(),
            self.kkt_epsilon.to_string(),
            self.kkt_passed.to_string(),
            self.trace_monotone.to_string(),
            opt(self.fringe_period),
            opt(self.expected_fringe_period),
        ]
    }
}

/// Writes a header and rows with the `csv` crate.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Everything one reconstruction produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub truth: Array2<f64>,
    pub gi: Array2<f64>,
    pub gisc: ReconstructionResult,
    pub pattern: Option<DiffractionPattern>,
}

/// Camera rows through the middle half of the slits; `None` for other objects.
pub fn slit_band(cfg: &ExperimentConfig, pixels: usize) -> Option<Range<usize>> {
    let ObjectSpec::DoubleSlit(slit) = &cfg.object else {
        return None;
    };
    let half = ((slit.height / 4.0 / cfg.camera_pitch).round() as usize).clamp(1, pixels / 2);
    Some(pixels / 2 - half..pixels / 2 + half)
}

fn measured_fringe_period(cfg: &ExperimentConfig, pattern: &DiffractionPattern) -> Result<Option<(f64, f64)>> {
    let ObjectSpec::DoubleSlit(slit) = &cfg.object else {
        return Ok(None);
    };
    let rows = pattern.grid.ny;
    let profile = band_profile(pattern.values.view(), ProfileAxis::Horizontal, rows / 2 - 1..rows / 2 + 2)?;
    let period = fringe_period(&profile, pattern.grid.pitch, 8)?;
    Ok(Some((period, cfg.wavelength * cfg.z1 / slit.separation)))
}

/// Reconstructs from one measurement vector and scores it against `truth`.
pub fn evaluate(
    cfg: &ExperimentConfig,
    label: &str,
    truth: &Array2<f64>,
    a: &SensingMatrix,
    clean: &MeasurementVector,
    pattern: Option<DiffractionPattern>,
) -> Result<RunOutcome> {
    let y = stage("noise", add_noise(clean, cfg.noise, cfg.seed ^ NOISE_STREAM))?;
    let rho = stage("forward residual", forward_residual(a, clean, truth))?;
    let gi = stage("correlation imaging", correlate_gi(a, &y))?.values;
    let basis = stage("basis", Basis::new(cfg.basis, a.grid.nx, a.grid.ny))?;
    let gisc = stage("sparse reconstruction", solve_l1(a, &y, &basis, &cfg.solver))?;
    log::info!(
        "{label}: tau {:.3e}, {} iterations, rank {}, kkt {:.2e} / {:.2e}",
        gisc.tau_effective,
        gisc.iterations_used,
        gisc.rank,
        gisc.kkt.max_violation,
        gisc.kkt.epsilon
    );

    let band = slit_band(cfg, a.grid.ny);
    let resolve = |image: &Array2<f64>| -> Result<Option<crate::metrics::ResolvabilityReport>> {
        band.clone()
            .map(|b| two_peak_resolvability(image.view(), ProfileAxis::Horizontal, b, cfg.camera_pitch))
            .transpose()
    };
    let gi_report = stage("metrics", resolve(&gi.mapv(|v| v.max(0.0))))?;
    let gisc_report = stage("metrics", resolve(&gisc.image))?;
    let fringes = match &pattern {
        Some(p) => stage("fringe period", measured_fringe_period(cfg, p))?,
        None => None,
    };
    let trace_monotone = gisc
        .objective_trace
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs());

    let metrics = RunMetrics {
        label: label.to_string(),
        object: cfg.object.name(),
        basis: cfg.basis,
        z1: cfg.z1,
        aperture: cfg.aperture,
        camera_pitch: cfg.camera_pitch,
        k: a.rows(),
        seed: cfg.seed,
        rho,
        gi_mse: stage("metrics", mse(gi.view(), truth.view()))?,
        gi_resolved: gi_report.as_ref().map(|r| r.resolved),
        gi_dip: gi_report.as_ref().and_then(|r| r.dip_ratio),
        gisc_mse: stage("metrics", mse(gisc.image.view(), truth.view()))?,
        gisc_resolved: gisc_report.as_ref().map(|r| r.resolved),
        gisc_dip: gisc_report.as_ref().and_then(|r| r.dip_ratio),
        gisc_separation: gisc_report.as_ref().and_then(|r| r.peak_separation),
        tau_effective: gisc.tau_effective,
        iterations: gisc.iterations_used,
        converged: gisc.converged,
        rank: gisc.rank,
        kkt_violation: gisc.kkt.max_violation,
        kkt_epsilon: gisc.kkt.epsilon,
        kkt_passed: gisc.kkt.passed(),
        trace_monotone,
        fringe_period: fringes.map(|f| f.0),
        expected_fringe_period: fringes.map(|f| f.1),
    };
    Ok(RunOutcome {
        metrics,
        truth: truth.clone(),
        gi,
        gisc,
        pattern,
    })
}

/// Writes images, metrics, the solver trace and `resolved.cfg` into `dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_pgm(&dir.join("truth.pgm"), outcome.truth.view(), cfg.pgm_depth)?;
    if let Some(p) = &outcome.pattern {
        write_pgm(&dir.join("pattern.pgm"), p.values.view(), cfg.pgm_depth)?;
    }
    write_pgm(&dir.join("gi.pgm"), outcome.gi.view(), cfg.pgm_depth)?;
    write_pgm(&dir.join("gisc.pgm"), outcome.gisc.image.view(), cfg.pgm_depth)?;
    write_csv(&dir.join("metrics.csv"), &METRICS_HEADER, [outcome.metrics.record()])?;
    write_csv(
        &dir.join("trace.csv"),
        &["iteration", "objective"],
        outcome
            .gisc
            .objective_trace
            .iter()
            .enumerate()
            .map(|(i, f)| vec![i.to_string(), f.to_string()]),
    )?;
    fs::write(dir.join("resolved.cfg"), cfg.emit())?;
    Ok(())
}

fn plan_for(cfg: &ExperimentConfig, object: &ObjectMask, detectors: &[DetectorSpec], seed: u64) -> Result<AcquisitionPlan> {
    AcquisitionPlan::new(
        &source_spec(cfg, seed),
        object,
        cfg.z,
        cfg.camera_pitch,
        cfg.roi_pixels,
        detectors,
        cfg.test_path,
    )
}

/// Full pipeline for one config; artifacts go to `cfg.output`.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    stage("config", cfg.validate())?;
    let object = stage("object", build_object(cfg))?;
    let det = detector(cfg);
    let plan = stage("acquisition setup", plan_for(cfg, &object, &[det], cfg.seed))?;
    let plan = stage(
        "acquisition setup",
        plan.with_pattern(&object, &det, cfg.test_path, cfg.pattern_pixels),
    )?;
    let mut acquisition = stage("acquisition", plan.run(cfg.k, 0))?;
    let clean = acquisition.buckets.remove(0);
    let a = stage("sensing matrix", build_sensing_matrix(&acquisition.ensemble))?;
    let truth = object.intensity_on_camera(plan.camera());
    let outcome = evaluate(cfg, "run", &truth, &a, &clean, acquisition.pattern.take())?;
    stage("output", write_artifacts(cfg, &outcome, &cfg.output))?;
    if cfg.dump_ensemble {
        stage(
            "output",
            write_ensemble(&cfg.output.join("ensemble.gisc"), &acquisition.ensemble, &clean),
        )?;
    }
    Ok(outcome)
}

/// Acquisition only: truth, mean pattern, the ensemble dump and
/// `resolved.cfg` are written to `cfg.output`.
pub fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    stage("config", cfg.validate())?;
    let object = stage("object", build_object(cfg))?;
    let det = detector(cfg);
    let plan = stage("acquisition setup", plan_for(cfg, &object, &[det], cfg.seed))?;
    let plan = stage(
        "acquisition setup",
        plan.with_pattern(&object, &det, cfg.test_path, cfg.pattern_pixels),
    )?;
    let acquisition = stage("acquisition", plan.run(cfg.k, 0))?;
    let dir = &cfg.output;
    stage("output", fs::create_dir_all(dir).map_err(Error::from))?;
    let truth = object.intensity_on_camera(plan.camera());
    stage("output", write_pgm(&dir.join("truth.pgm"), truth.view(), cfg.pgm_depth))?;
    if let Some(p) = &acquisition.pattern {
        stage("output", write_pgm(&dir.join("pattern.pgm"), p.values.view(), cfg.pgm_depth))?;
    }
    stage(
        "output",
        write_ensemble(&dir.join("ensemble.gisc"), &acquisition.ensemble, &acquisition.buckets[0]),
    )?;
    stage("output", fs::write(dir.join("resolved.cfg"), cfg.emit()).map_err(Error::from))?;
    Ok(())
}

/// Reconstructs from the first `cfg.k` realizations of an ensemble dump. The
/// truth comes from the config's object, so the dump must match its camera
/// layout.
pub fn reconstruct_dump(cfg: &ExperimentConfig, dump: &Path) -> Result<RunOutcome> {
    stage("config", cfg.validate())?;
    let (ensemble, y) = stage("ensemble", read_ensemble(dump))?;
    let object = stage("object", build_object(cfg))?;
    let camera = stage(
        "camera",
        CameraLayout::new(&object.grid, cfg.camera_pitch, cfg.roi_pixels),
    )?;
    if camera.grid.shape() != ensemble.grid.shape() {
        return Err(Error::Stage {
            stage: "ensemble",
            source: Box::new(Error::GridMismatch(format!(
                "dump images are {:?}, config camera is {:?}",
                ensemble.grid.shape(),
                camera.grid.shape()
            ))),
        });
    }
    let a = stage("sensing matrix", build_sensing_matrix(&ensemble))?;
    let (a, y) = (stage("ensemble", a.truncated(cfg.k))?, stage("ensemble", y.truncated(cfg.k))?);
    let truth = object.intensity_on_camera(&camera);
    let outcome = evaluate(cfg, "reconstruct", &truth, &a, &y, None)?;
    stage("output", write_artifacts(cfg, &outcome, &cfg.output))?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
}

impl Figure {
    pub fn name(&self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "fig2" => Some(Figure::Fig2),
            "fig3" => Some(Figure::Fig3),
            "fig4" => Some(Figure::Fig4),
            _ => None,
        }
    }

    /// The sweeps behind the figure, on top of `base` (solver, seed, grid).
    pub fn sweeps(&self, base: &ExperimentConfig) -> Vec<Sweep> {
        let mm = |v: &[f64]| v.iter().map(|x| x * 1e-3).collect::<Vec<_>>();
        match self {
            Figure::Fig2 => [("fine", 12.5e-6, 3000), ("coarse", 62.5e-6, 500)]
                .into_iter()
                .map(|(name, pitch, k)| Sweep {
                    name: format!("fig2-{name}"),
                    base: ExperimentConfig {
                        object: ObjectSpec::DoubleSlit(Default::default()),
                        z1: 0.5,
                        camera_pitch: pitch,
                        k,
                        ..base.clone()
                    },
                    axis: SweepAxis::Aperture(mm(&[1.6, 3.2, 6.4])),
                })
                .collect(),
            Figure::Fig3 => vec![Sweep {
                name: "fig3".into(),
                base: ExperimentConfig {
                    object: ObjectSpec::DoubleSlit(Default::default()),
                    aperture: 6.4e-3,
                    camera_pitch: 25e-6,
                    k: 1000,
                    ..base.clone()
                },
                axis: SweepAxis::Distance(mm(&[500.0, 200.0, 100.0, 10.0])),
            }],
            Figure::Fig4 => vec![Sweep {
                name: "fig4".into(),
                base: ExperimentConfig {
                    object: ObjectSpec::RingGlyph(Default::default()),
                    z1: 0.01,
                    aperture: 6.4e-3,
                    camera_pitch: 25e-6,
                    k: 2000,
                    ..base.clone()
                },
                axis: SweepAxis::Basis(vec![BasisKind::Cartesian, BasisKind::Dct2]),
            }],
        }
    }
}

/// The parameter that varies between the cells of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Aperture(Vec<f64>),
    Distance(Vec<f64>),
    Basis(Vec<BasisKind>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub name: String,
    pub base: ExperimentConfig,
    pub axis: SweepAxis,
}

impl Sweep {
    /// One config per cell, in axis order.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        match &self.axis {
            SweepAxis::Aperture(values) => values
                .iter()
                .map(|&aperture| ExperimentConfig { aperture, ..self.base.clone() })
                .collect(),
            SweepAxis::Distance(values) => values
                .iter()
                .map(|&z1| ExperimentConfig { z1, ..self.base.clone() })
                .collect(),
            SweepAxis::Basis(kinds) => kinds
                .iter()
                .map(|&basis| ExperimentConfig {
                    basis,
                    solver: crate::solver::SolverOptions {
                        nonneg_project: basis == BasisKind::Cartesian,
                        ..self.base.solver
                    },
                    ..self.base.clone()
                })
                .collect(),
        }
    }

    fn cell_label(&self, cell: &ExperimentConfig) -> String {
        match &self.axis {
            SweepAxis::Aperture(_) => format!("{}/L1={}mm", self.name, cell.aperture * 1e3),
            SweepAxis::Distance(_) => format!("{}/z1={}mm", self.name, cell.z1 * 1e3),
            SweepAxis::Basis(_) => format!("{}/basis={}", self.name, cell.basis.name()),
        }
    }

    /// Runs every cell for one seed. All cells share the same speckle
    /// realizations: detectors that differ only in aperture or distance are
    /// fed from a single acquisition.
    pub fn run_seed(&self, seed: u64) -> Result<Vec<RunOutcome>> {
        let cells: Vec<ExperimentConfig> = self
            .cells()
            .into_iter()
            .map(|c| ExperimentConfig { seed, ..c })
            .collect();
        let base = &cells[0];
        stage("config", base.validate())?;
        let object = stage("object", build_object(base))?;
        let detectors: Vec<DetectorSpec> = match self.axis {
            SweepAxis::Basis(_) => vec![detector(base)],
            _ => cells.iter().map(detector).collect(),
        };
        let plan = stage("acquisition setup", plan_for(base, &object, &detectors, seed))?;
        let acquisition = stage("acquisition", plan.run(base.k, 0))?;
        let a = stage("sensing matrix", build_sensing_matrix(&acquisition.ensemble))?;
        let truth = object.intensity_on_camera(plan.camera());
        cells
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                let y = &acquisition.buckets[i.min(acquisition.buckets.len() - 1)];
                evaluate(cell, &self.cell_label(cell), &truth, &a, y, None)
            })
            .collect()
    }
}

/// Per-cell aggregate over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub label: String,
    pub seeds: usize,
    pub mean_rho: f64,
    pub mean_gi_mse: f64,
    pub mean_gisc_mse: f64,
    pub gi_resolved: usize,
    pub gisc_resolved: usize,
    pub kkt_passed: usize,
    pub trace_monotone: usize,
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "cell",
    "seeds",
    "mean_rho",
    "mean_gi_mse",
    "mean_gisc_mse",
    "gi_resolved",
    "gisc_resolved",
    "kkt_passed",
    "trace_monotone",
];

impl CellSummary {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.label.clone(),
            self.seeds.to_string(),
            self.mean_rho.to_string(),
            self.mean_gi_mse.to_string(),
            self.mean_gisc_mse.to_string(),
            self.gi_resolved.to_string(),
            self.gisc_resolved.to_string(),
            self.kkt_passed.to_string(),
            self.trace_monotone.to_string(),
        ]
    }
}

/// Aggregates `rows[seed][cell]` by cell.
pub fn summarize(rows: &[Vec<RunMetrics>]) -> Vec<CellSummary> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let n = rows.len() as f64;
    (0..first.len())
        .map(|c| {
            let cell: Vec<&RunMetrics> = rows.iter().map(|r| &r[c]).collect();
            let mean = |f: fn(&RunMetrics) -> f64| cell.iter().map(|m| f(m)).sum::<f64>() / n;
            let count = |f: fn(&RunMetrics) -> bool| cell.iter().filter(|m| f(m)).count();
            CellSummary {
                label: first[c].label.clone(),
                seeds: cell.len(),
                mean_rho: mean(|m| m.rho),
                mean_gi_mse: mean(|m| m.gi_mse),
                mean_gisc_mse: mean(|m| m.gisc_mse),
                gi_resolved: count(|m| m.gi_resolved == Some(true)),
                gisc_resolved: count(|m| m.gisc_resolved == Some(true)),
                kkt_passed: count(|m| m.kkt_passed),
                trace_monotone: count(|m| m.trace_monotone),
            }
        })
        .collect()
}

/// Runs a sweep over `seeds` and returns per-seed rows, `rows[seed][cell]`.
pub fn run_sweep(sweep: &Sweep, seeds: Range<u64>) -> Result<Vec<Vec<RunMetrics>>> {
    seeds
        .map(|seed| {
            log::info!("{} seed {seed}", sweep.name);
            Ok(sweep.run_seed(seed)?.into_iter().map(|o| o.metrics).collect())
        })
        .collect()
}

/// Runs the figure's sweeps for `seeds` seeds starting at `base.seed` and
/// writes `cells.csv` (every run) and `summary.csv` (one row per cell) to
/// `base.output`.
pub fn reproduce(figure: Figure, base: &ExperimentConfig, seeds: usize) -> Result<Vec<CellSummary>> {
    if seeds == 0 {
        return Err(Error::ConfigInvalid {
            key: "seeds".into(),
            reason: "need at least one".into(),
        });
    }
    let mut all_rows = Vec::new();
    let mut summary = Vec::new();
    for sweep in figure.sweeps(base) {
        let rows = run_sweep(&sweep, base.seed..base.seed + seeds as u64)?;
        summary.extend(summarize(&rows));
        all_rows.extend(rows.into_iter().flatten());
    }
    let dir = &base.output;
    stage("output", fs::create_dir_all(dir).map_err(Error::from))?;
    stage(
        "output",
        write_csv(&dir.join("cells.csv"), &METRICS_HEADER, all_rows.iter().map(RunMetrics::record)),
    )?;
    stage(
        "output",
        write_csv(&dir.join("summary.csv"), &SUMMARY_HEADER, summary.iter().map(CellSummary::record)),
    )?;
    stage("output", fs::write(dir.join("resolved.cfg"), base.emit()).map_err(Error::from))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig_sweeps_have_the_documented_cells() {
        let base = ExperimentConfig::default();
        let fig2 = Figure::Fig2.sweeps(&base);
        assert_eq!(fig2.len(), 2);
        assert_eq!(fig2.iter().map(|s| s.cells().len()).sum::<usize>(), 6);
        assert_eq!(fig2[1].base.camera_pitch, 62.5e-6);
        let fig3 = &Figure::Fig3.sweeps(&base)[0];
        let z1: Vec<f64> = fig3.cells().iter().map(|c| c.z1).collect();
        assert_eq!(z1, vec![0.5, 0.2, 0.1, 0.01]);
        assert_eq!(fig3.base.k, 1000);
        let fig4 = &Figure::Fig4.sweeps(&base)[0];
        let cells = fig4.cells();
        assert_eq!(cells[1].basis, BasisKind::Dct2);
        assert!(!cells[1].solver.nonneg_project);
        assert!(cells[0].solver.nonneg_project);
        for f in [Figure::Fig2, Figure::Fig3, Figure::Fig4] {
            assert_eq!(Figure::parse(f.name()), Some(f));
        }
    }

    #[test]
    fn summary_averages_by_cell() {
        let row = |label: &str, mse: f64, ok: bool| RunMetrics {
            label: label.into(),
            object: "double_slit",
            basis: BasisKind::Cartesian,
            z1: 0.1,
            aperture: 1e-3,
            camera_pitch: 25e-6,
            k: 10,
            seed: 1,
            rho: 0.5,
            gi_mse: 0.2,
            gi_resolved: Some(false),
            gi_dip: None,
            gisc_mse: mse,
            gisc_resolved: Some(ok),
            gisc_dip: None,
            gisc_separation: None,
            tau_effective: 1.0,
            iterations: 3,
            converged: true,
            rank: 2,
            kkt_violation: 0.0,
            kkt_epsilon: 1.0,
            kkt_passed: true,
            trace_monotone: true,
            fringe_period: None,
            expected_fringe_period: None,
        };
        let rows = vec![
            vec![row("a", 0.1, true), row("b", 0.3, false)],
            vec![row("a", 0.3, false), row("b", 0.5, false)],
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].label, "a");
        assert!((s[0].mean_gisc_mse - 0.2).abs() < 1e-15);
        assert_eq!(s[0].gisc_resolved, 1);
        assert_eq!(s[1].gisc_resolved, 0);
        assert_eq!(s[1].seeds, 2);
        assert_eq!(row("a", 0.1, true).record().len(), METRICS_HEADER.len());
    }
}
