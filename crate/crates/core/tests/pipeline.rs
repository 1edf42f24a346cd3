use std::fs;

use ghostrec::config::{ExperimentConfig, ObjectSpec};
use ghostrec::gi::correlate_gi;
use ghostrec::io::PgmImage;
use ghostrec::measurement::{build_sensing_matrix, AcquisitionPlan};
use ghostrec::metrics::normalized_cross_correlation;
use ghostrec::objects::DoubleSlit;
use ghostrec::scenario::{self, build_object, detector, source_spec};
use ghostrec::Error;

fn quick_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "object = double_slit\nz1 = 10mm\ncamera_pitch = 25um\nK = 300\noutput = {}\n",
        dir.display()
    ))
    .unwrap()
}

#[test]
fn correlation_image_follows_coarse_objects() {
    // 6 mm source: speckle about 0.13 mm, well below the 0.4 mm slits
    let cfg = ExperimentConfig {
        source_diameter: 6e-3,
        object: ObjectSpec::DoubleSlit(DoubleSlit {
            width: 400e-6,
            separation: 800e-6,
            height: 1200e-6,
        }),
        camera_pitch: 25e-6,
        z1: 0.01,
        ..ExperimentConfig::default()
    };
    let object = build_object(&cfg).unwrap();
    let plan = AcquisitionPlan::new(
        &source_spec(&cfg, 7),
        &object,
        cfg.z,
        cfg.camera_pitch,
        cfg.roi_pixels,
        &[detector(&cfg)],
        cfg.test_path,
    )
    .unwrap();
    let acquisition = plan.run(3000, 0).unwrap();
    let a = build_sensing_matrix(&acquisition.ensemble).unwrap();
    let gi = correlate_gi(&a, &acquisition.buckets[0]).unwrap();
    let truth = object.intensity_on_camera(plan.camera());
    let ncc = normalized_cross_correlation(gi.values.view(), truth.view()).unwrap();
    assert!(ncc >= 0.8, "ncc {ncc}");
}

#[test]
fn run_directory_is_complete_and_images_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(&dir.path().join("run"));
    let outcome = scenario::run_scenario(&cfg).unwrap();
    let run = dir.path().join("run");
    for name in ["truth.pgm", "pattern.pgm", "gi.pgm", "gisc.pgm", "metrics.csv", "trace.csv", "resolved.cfg"] {
        assert!(run.join(name).is_file(), "{name} missing");
    }
    for name in ["truth.pgm", "pattern.pgm", "gi.pgm", "gisc.pgm"] {
        let bytes = fs::read(run.join(name)).unwrap();
        let image = PgmImage::read(&run.join(name)).unwrap();
        let again = dir.path().join("again.pgm");
        image.write(&again).unwrap();
        assert_eq!(fs::read(&again).unwrap(), bytes, "{name}");
    }
    let resolved = ExperimentConfig::parse(&fs::read_to_string(run.join("resolved.cfg")).unwrap()).unwrap();
    assert_eq!(resolved, cfg);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert_eq!(outcome.gisc.objective_trace.len() + 1, fs::read_to_string(run.join("trace.csv")).unwrap().lines().count());
}

#[test]
fn reconstructing_a_dump_matches_the_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let direct = scenario::run_scenario(&quick_config(&dir.path().join("direct"))).unwrap();
    let sim = quick_config(&dir.path().join("sim"));
    scenario::simulate(&sim).unwrap();
    let again = quick_config(&dir.path().join("again"));
    let replay = scenario::reconstruct_dump(&again, &dir.path().join("sim/ensemble.gisc")).unwrap();
    assert_eq!(replay.gisc.image, direct.gisc.image);
    assert_eq!(replay.gi, direct.gi);
    assert_eq!(
        fs::read(dir.path().join("sim/truth.pgm")).unwrap(),
        fs::read(dir.path().join("direct/truth.pgm")).unwrap()
    );

    // a dump from a different camera layout is refused
    let other = ExperimentConfig {
        roi_pixels: 32,
        ..quick_config(&dir.path().join("other"))
    };
    let err = scenario::reconstruct_dump(&other, &dir.path().join("sim/ensemble.gisc")).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "ensemble", .. }), "{err}");
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    // 10 um is not a whole number of 6.25 um object pixels
    let cfg = ExperimentConfig {
        camera_pitch: 10e-6,
        ..quick_config(dir.path())
    };
    let err = scenario::run_scenario(&cfg).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "acquisition setup", .. }), "{err}");
    assert!(err.to_string().starts_with("acquisition setup failed"));

    let cfg = ExperimentConfig {
        object: ObjectSpec::File {
            path: dir.path().join("missing.pgm"),
            pitch: 25e-6,
        },
        ..quick_config(dir.path())
    };
    assert!(matches!(
        scenario::run_scenario(&cfg).unwrap_err(),
        Error::Stage { stage: "object", .. }
    ));
}

#[test]
fn file_objects_reproduce_the_builtin_mask() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(&dir.path().join("a"));
    let builtin = build_object(&cfg).unwrap();
    // write the mask support at object resolution and read it back as a file object
    let window = builtin.support();
    let block = window.slice(&builtin.transmittance).to_owned();
    let path = dir.path().join("mask.pgm");
    ghostrec::io::write_pgm(&path, block.view(), ghostrec::io::BitDepth::Eight).unwrap();
    let from_file = ExperimentConfig {
        object: ObjectSpec::File {
            path,
            pitch: cfg.object_pitch,
        },
        ..cfg.clone()
    };
    let loaded = build_object(&from_file).unwrap();
    assert_eq!(loaded.transmittance, builtin.transmittance);
}
