//! Flat `key = value` experiment configuration.
//!
//! Lengths take a unit suffix (`nm`, `um`, `µm`, `mm`, `cm`, `m`); a bare
//! number is read in metres. `#` starts a comment. Unknown keys are errors.
//! [`ExperimentConfig::emit`] writes every key, lengths in metres, and
//! parsing that text gives back an identical config.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::field::{Envelope, PropagationPath};
use crate::io::BitDepth;
use crate::measurement::NoiseModel;
use crate::objects::{DoubleSlit, RingGlyph};
use crate::solver::{BasisKind, SolverOptions, StepRule, TauMode};

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectSpec {
    DoubleSlit(DoubleSlit),
    RingGlyph(RingGlyph),
    /// PGM transmittance mask with the given pixel size.
    File { path: PathBuf, pitch: f64 },
}

impl ObjectSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectSpec::DoubleSlit(_) => "double_slit",
            ObjectSpec::RingGlyph(_) => "ring_glyph",
            ObjectSpec::File { .. } => "file",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub object: ObjectSpec,
    pub wavelength: f64,
    pub source_diameter: f64,
    pub source_envelope: Envelope,
    /// Source to object (and to reference camera).
    pub z: f64,
    /// Object to bucket detector.
    pub z1: f64,
    /// Side of the square bucket aperture.
    pub aperture: f64,
    pub camera_pitch: f64,
    pub roi_pixels: usize,
    pub grid_size: usize,
    pub object_pitch: f64,
    pub k: usize,
    pub seed: u64,
    pub noise: NoiseModel,
    pub test_path: PropagationPath,
    pub basis: BasisKind,
    pub solver: SolverOptions,
    pub pattern_pixels: usize,
    pub pgm_depth: BitDepth,
    pub output: PathBuf,
    pub dump_ensemble: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            object: ObjectSpec::DoubleSlit(DoubleSlit::default()),
            wavelength: 650e-9,
            source_diameter: 0.6e-3,
            source_envelope: Envelope::UniformDisk,
            z: 1.2,
            z1: 0.5,
            aperture: 6.4e-3,
            camera_pitch: 12.5e-6,
            roi_pixels: 64,
            grid_size: 2048,
            object_pitch: 6.25e-6,
            k: 3000,
            seed: 1,
            noise: NoiseModel::None,
            test_path: PropagationPath::Auto,
            basis: BasisKind::Cartesian,
            solver: default_solver(BasisKind::Cartesian),
            pattern_pixels: 128,
            pgm_depth: BitDepth::Sixteen,
            output: PathBuf::from("run"),
            dump_ensemble: false,
        }
    }
}

/// Reconstruction settings used unless a config overrides them.
pub fn default_solver(basis: BasisKind) -> SolverOptions {
    SolverOptions {
        tau: 1e-3,
        max_iters: 3000,
        tol_rel_objective: 1e-6,
        whitening: Some(1e-8),
        ..SolverOptions::for_basis(basis)
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::ConfigParse {
        line,
        reason: reason.into(),
    }
}

fn invalid_key(key: &str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Decimal exponent for each accepted unit suffix, longest first.
const UNITS: [(&str, i32); 6] = [("nm", -9), ("um", -6), ("µm", -6), ("mm", -3), ("cm", -2), ("m", 0)];

/// Parses `650nm`, `1.2m`, `6.25e-6` and the like into metres. The unit is
/// folded into the decimal exponent so the result is correctly rounded.
pub fn parse_length(text: &str) -> Option<f64> {
    let text = text.trim();
    let (number, exponent) = UNITS
        .iter()
        .find_map(|(suffix, exp)| text.strip_suffix(suffix).map(|n| (n.trim_end(), *exp)))
        .unwrap_or((text, 0));
    if number.is_empty() || number.chars().any(|c| c.is_alphabetic() && c != 'e' && c != 'E') {
        return None;
    }
    let (mantissa, own) = match number.find(['e', 'E']) {
        Some(at) => (&number[..at], number[at + 1..].parse::<i32>().ok()?),
        None => (number, 0),
    };
    format!("{mantissa}e{}", own + exponent).parse().ok()
}

fn parse_bool(text: &str) -> Option<bool> {
    match text {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// Object parameters collected before the object kind is known.
#[derive(Default)]
struct ObjectKeys {
    kind: Option<(String, usize)>,
    slit: DoubleSlit,
    ring: RingGlyph,
    file: Option<PathBuf>,
    file_pitch: Option<f64>,
}

/// Noise parameters collected before the model is known.
struct NoiseKeys {
    kind: String,
    sigma: f64,
    scale: f64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut object = ObjectKeys::default();
        let mut noise = NoiseKeys {
            kind: "none".into(),
            sigma: 0.0,
            scale: 1.0,
        };
        let mut solver_touched: Vec<&'static str> = Vec::new();
        let mut seen = std::collections::HashSet::new();

        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(parse_err(line, "empty key or value"));
            }
            if !seen.insert(key.to_string()) {
                return Err(parse_err(line, format!("duplicate key `{key}`")));
            }
            let length = || parse_length(value).ok_or_else(|| parse_err(line, format!("`{key}`: bad length `{value}`")));
            let number = || {
                value
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("`{key}`: bad number `{value}`")))
            };
            let integer = || {
                value
                    .parse::<u64>()
                    .map_err(|_| parse_err(line, format!("`{key}`: bad integer `{value}`")))
            };
            let word = |what: &str| parse_err(line, format!("`{key}`: unknown {what} `{value}`"));

            match key {
                "object" => object.kind = Some((value.to_string(), line)),
                "slit_width" => object.slit.width = length()?,
                "slit_separation" => object.slit.separation = length()?,
                "slit_height" => object.slit.height = length()?,
                "ring_radius" => object.ring.outer_radius = length()?,
                "ring_width" => object.ring.ring_width = length()?,
                "bar_width" => object.ring.bar_width = length()?,
                "bar_length" => object.ring.bar_length = length()?,
                "object_file" => object.file = Some(PathBuf::from(value)),
                "object_file_pitch" => object.file_pitch = Some(length()?),
                "wavelength" => cfg.wavelength = length()?,
                "source_diameter" => cfg.source_diameter = length()?,
                "source_envelope" => cfg.source_envelope = Envelope::parse(value).ok_or_else(|| word("envelope"))?,
                "z" => cfg.z = length()?,
                "z1" => cfg.z1 = length()?,
                "L1" => cfg.aperture = length()?,
                "camera_pitch" => cfg.camera_pitch = length()?,
                "roi_pixels" => cfg.roi_pixels = integer()? as usize,
                "grid_size" => cfg.grid_size = integer()? as usize,
                "object_pitch" => cfg.object_pitch = length()?,
                "K" => cfg.k = integer()? as usize,
                "seed" => cfg.seed = integer()?,
                "noise" => noise.kind = value.to_string(),
                "noise_sigma" => noise.sigma = number()?,
                "noise_scale" => noise.scale = number()?,
                "test_path" => cfg.test_path = PropagationPath::parse(value).ok_or_else(|| word("path"))?,
                "basis" => cfg.basis = BasisKind::parse(value).ok_or_else(|| word("basis"))?,
                "tau" => {
                    cfg.solver.tau = number()?;
                    solver_touched.push("tau");
                }
                "tau_mode" => cfg.solver.tau_mode = TauMode::parse(value).ok_or_else(|| word("tau mode"))?,
                "max_iters" => cfg.solver.max_iters = integer()? as usize,
                "tol" => cfg.solver.tol_rel_objective = number()?,
                "nonneg" => {
                    cfg.solver.nonneg_project = parse_bool(value).ok_or_else(|| word("flag"))?;
                    solver_touched.push("nonneg");
                }
                "step_rule" => cfg.solver.step_rule = StepRule::parse(value).ok_or_else(|| word("step rule"))?,
                "normalize_columns" => {
                    cfg.solver.normalize_columns = parse_bool(value).ok_or_else(|| word("flag"))?
                }
                "whiten_cutoff" => {
                    cfg.solver.whitening = if value == "none" { None } else { Some(number()?) }
                }
                "pattern_pixels" => cfg.pattern_pixels = integer()? as usize,
                "pgm_depth" => {
                    cfg.pgm_depth = u32::try_from(integer()?)
                        .ok()
                        .and_then(BitDepth::from_bits)
                        .ok_or_else(|| word("bit depth"))?
                }
                "output" => cfg.output = PathBuf::from(value),
                "dump_ensemble" => cfg.dump_ensemble = parse_bool(value).ok_or_else(|| word("flag"))?,
                _ => return Err(parse_err(line, format!("unknown key `{key}`"))),
            }
        }

        // nonnegativity follows the basis unless set explicitly
        if !solver_touched.contains(&"nonneg") {
            cfg.solver.nonneg_project = cfg.basis == BasisKind::Cartesian;
        }

        cfg.object = match object.kind {
            None => ObjectSpec::DoubleSlit(object.slit),
            Some((kind, line)) => match kind.as_str() {
                "double_slit" => ObjectSpec::DoubleSlit(object.slit),
                "ring_glyph" => ObjectSpec::RingGlyph(object.ring),
                "file" => ObjectSpec::File {
                    path: object.file.ok_or_else(|| invalid_key("object_file", "required when object = file"))?,
                    pitch: object.file_pitch.unwrap_or(cfg.object_pitch),
                },
                other => return Err(parse_err(line, format!("`object`: unknown object `{other}`"))),
            },
        };
        cfg.noise = match noise.kind.as_str() {
            "none" => NoiseModel::None,
            "gaussian" => NoiseModel::AdditiveGaussian { sigma: noise.sigma },
            "poisson" => NoiseModel::Poisson { scale: noise.scale },
            other => return Err(invalid_key("noise", format!("unknown model `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Key-level checks; physical consistency is left to the pipeline.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid_key(key, format!("must be > 0, got {v}")))
            }
        };
        for (key, v) in [
            ("wavelength", self.wavelength),
            ("source_diameter", self.source_diameter),
            ("z", self.z),
            ("z1", self.z1),
            ("L1", self.aperture),
            ("camera_pitch", self.camera_pitch),
            ("object_pitch", self.object_pitch),
        ] {
            positive(key, v)?;
        }
        match &self.object {
            ObjectSpec::DoubleSlit(s) => {
                positive("slit_width", s.width)?;
                positive("slit_separation", s.separation)?;
                positive("slit_height", s.height)?;
            }
            ObjectSpec::RingGlyph(r) => {
                positive("ring_radius", r.outer_radius)?;
                positive("ring_width", r.ring_width)?;
                positive("bar_width", r.bar_width)?;
                positive("bar_length", r.bar_length)?;
            }
            ObjectSpec::File { pitch, .. } => positive("object_file_pitch", *pitch)?,
        }
        if self.k == 0 {
            return Err(invalid_key("K", "need at least one measurement"));
        }
        if self.roi_pixels < 2 {
            return Err(invalid_key("roi_pixels", "need at least 2"));
        }
        if self.grid_size < 16 || !self.grid_size.is_power_of_two() {
            return Err(invalid_key("grid_size", "must be a power of two >= 16"));
        }
        if self.pattern_pixels < 2 {
            return Err(invalid_key("pattern_pixels", "need at least 2"));
        }
        match self.noise {
            NoiseModel::AdditiveGaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return Err(invalid_key("noise_sigma", "must be >= 0"))
            }
            NoiseModel::Poisson { scale } if !(scale > 0.0 && scale.is_finite()) => {
                return Err(invalid_key("noise_scale", "must be > 0"))
            }
            _ => {}
        }
        self.solver.validate().map_err(|e| match e {
            Error::InvalidArgument { name, reason } => invalid_key(name, reason),
            other => other,
        })
    }

    /// Every key, in a fixed order. Lengths are written in metres with the
    /// shortest digits that read back to the same value.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        let m = |v: f64| format!("{v:e}m");
        put("object", self.object.name().into());
        match &self.object {
            ObjectSpec::DoubleSlit(s) => {
                put("slit_width", m(s.width));
                put("slit_separation", m(s.separation));
                put("slit_height", m(s.height));
            }
            ObjectSpec::RingGlyph(r) => {
                put("ring_radius", m(r.outer_radius));
                put("ring_width", m(r.ring_width));
                put("bar_width", m(r.bar_width));
                put("bar_length", m(r.bar_length));
            }
            ObjectSpec::File { path, pitch } => {
                put("object_file", path.display().to_string());
                put("object_file_pitch", m(*pitch));
            }
        }
        put("wavelength", m(self.wavelength));
        put("source_diameter", m(self.source_diameter));
        put("source_envelope", self.source_envelope.name().into());
        put("z", m(self.z));
        put("z1", m(self.z1));
        put("L1", m(self.aperture));
        put("camera_pitch", m(self.camera_pitch));
        put("roi_pixels", self.roi_pixels.to_string());
        put("grid_size", self.grid_size.to_string());
        put("object_pitch", m(self.object_pitch));
        put("K", self.k.to_string());
        put("seed", self.seed.to_string());
        match self.noise {
            NoiseModel::None => put("noise", "none".into()),
            NoiseModel::AdditiveGaussian { sigma } => {
                put("noise", "gaussian".into());
                put("noise_sigma", format!("{sigma:e}"));
            }
            NoiseModel::Poisson { scale } => {
                put("noise", "poisson".into());
                put("noise_scale", format!("{scale:e}"));
            }
        }
        put("test_path", self.test_path.name().into());
        put("basis", self.basis.name().into());
        let s = &self.solver;
        put("tau", format!("{:e}", s.tau));
        put("tau_mode", s.tau_mode.name().into());
        put("max_iters", s.max_iters.to_string());
        put("tol", format!("{:e}", s.tol_rel_objective));
        put("nonneg", s.nonneg_project.to_string());
        put("step_rule", s.step_rule.name().into());
        put("normalize_columns", s.normalize_columns.to_string());
        put(
            "whiten_cutoff",
            s.whitening.map_or_else(|| "none".into(), |c| format!("{c:e}")),
        );
        put("pattern_pixels", self.pattern_pixels.to_string());
        put(
            "pgm_depth",
            match self.pgm_depth {
                BitDepth::Eight => "8".into(),
                BitDepth::Sixteen => "16".into(),
            },
        );
        put("output", self.output.display().to_string());
        put("dump_ensemble", self.dump_ensemble.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lengths_with_units() {
        assert_eq!(parse_length("650nm"), Some(650e-9));
        assert_eq!(parse_length("6.25 um"), Some(6.25e-6));
        assert_eq!(parse_length("6.25µm"), Some(6.25e-6));
        assert_eq!(parse_length("1200mm"), Some(1.2));
        assert_eq!(parse_length("1.5e1mm"), Some(15e-3));
        assert_eq!(parse_length("0.6"), Some(0.6));
        assert_eq!(parse_length("2cm"), Some(0.02));
        assert_eq!(parse_length("3km"), None);
        assert_eq!(parse_length("mm"), None);
        assert_eq!(parse_length("abc"), None);
    }

    #[test]
    fn minimal_config_takes_the_defaults() {
        let cfg = ExperimentConfig::parse("object = double_slit\n").unwrap();
        assert_eq!(cfg.wavelength, 650e-9);
        assert_eq!(cfg.source_diameter, 0.6e-3);
        assert_eq!(cfg.z, 1.2);
        assert_eq!(cfg.z1, 0.5);
        assert_eq!(
            cfg.object,
            ObjectSpec::DoubleSlit(DoubleSlit {
                width: 100e-6,
                separation: 200e-6,
                height: 500e-6
            })
        );
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn zero_distance_names_the_key() {
        let err = ExperimentConfig::parse("object = double_slit\nz1 = 0mm\n").unwrap_err();
        match err {
            Error::ConfigInvalid { key, .. } => assert_eq!(key, "z1"),
            other => panic!("unexpected {other}"),
        }
        let err = ExperimentConfig::parse("K = 0").unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref key, .. } if key == "K"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("# header\nz1 = 10mm\nfocus = 3\n").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 3, .. }), "{err}");
        let err = ExperimentConfig::parse("\nz1 10mm").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 2, .. }));
        let err = ExperimentConfig::parse("z1 = 1mm\nz1 = 2mm").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 2, .. }));
        let err = ExperimentConfig::parse("object = teapot").unwrap_err();
        assert!(matches!(err, Error::ConfigParse { line: 1, .. }));
    }

    #[test]
    fn nonnegativity_follows_the_basis() {
        let cfg = ExperimentConfig::parse("basis = dct2").unwrap();
        assert!(!cfg.solver.nonneg_project);
        let cfg = ExperimentConfig::parse("basis = dct2\nnonneg = true").unwrap();
        assert!(cfg.solver.nonneg_project);
    }

    #[test]
    fn file_objects_need_a_path() {
        let err = ExperimentConfig::parse("object = file").unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref key, .. } if key == "object_file"));
        let cfg = ExperimentConfig::parse("object = file\nobject_file = mask.pgm\nobject_file_pitch = 25um").unwrap();
        assert_eq!(
            cfg.object,
            ObjectSpec::File {
                path: "mask.pgm".into(),
                pitch: 25e-6
            }
        );
    }

    fn any_config() -> impl Strategy<Value = ExperimentConfig> {
        let lengths = prop::collection::vec(1e-9f64..10.0, 8);
        let object = prop_oneof![
            (1e-6f64..1e-3, 1e-3f64..2e-3, 1e-6f64..1e-3).prop_map(|(width, separation, height)| {
                ObjectSpec::DoubleSlit(DoubleSlit { width, separation, height })
            }),
            (5e-4f64..1e-3, 1e-6f64..4e-4).prop_map(|(outer_radius, ring_width)| {
                ObjectSpec::RingGlyph(RingGlyph { outer_radius, ring_width, ..RingGlyph::default() })
            }),
        ];
        let noise = prop_oneof![
            Just(NoiseModel::None),
            (0.0f64..1.0).prop_map(|sigma| NoiseModel::AdditiveGaussian { sigma }),
            (1e-3f64..1e6).prop_map(|scale| NoiseModel::Poisson { scale }),
        ];
        (
            lengths,
            object,
            noise,
            1usize..10_000,
            any::<u64>(),
            (1e-12f64..1.0, 1e-15f64..1e-1, prop::option::of(1e-15f64..0.5)),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(l, object, noise, k, seed, (tau, tol, whitening), dct, flag)| ExperimentConfig {
                object,
                wavelength: l[0],
                source_diameter: l[1],
                z: l[2],
                z1: l[3],
                aperture: l[4],
                camera_pitch: l[5],
                object_pitch: l[6],
                k,
                seed,
                noise,
                basis: if dct { BasisKind::Dct2 } else { BasisKind::Cartesian },
                solver: SolverOptions {
                    tau,
                    tol_rel_objective: tol,
                    whitening,
                    nonneg_project: flag,
                    normalize_columns: !flag,
                    step_rule: if flag { StepRule::Backtracking } else { StepRule::BarzilaiBorwein },
                    tau_mode: if flag { TauMode::Absolute } else { TauMode::RelativeToAtyInf },
                    ..SolverOptions::default()
                },
                source_envelope: if flag { Envelope::GaussianWaist } else { Envelope::UniformDisk },
                pgm_depth: if flag { BitDepth::Eight } else { BitDepth::Sixteen },
                dump_ensemble: flag,
                ..ExperimentConfig::default()
            })
    }

    proptest! {
        #[test]
        fn emit_then_parse_is_identity(cfg in any_config()) {
            let text = cfg.emit();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
