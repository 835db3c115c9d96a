use std::fs;

use kawasaki_core::harness::{run, ExperimentConfig, RunOptions, StudyKind};
use kawasaki_core::ModelSpec;

fn small_simulation() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(&ModelSpec::double_well(16), StudyKind::Simulate, vec![(16, 4)]);
    cfg.ensemble = 3;
    cfg.horizon = 0.005;
    cfg.seed = 9;
    cfg.params.checkpoints = 2;
    cfg.params.pde_cells = 32;
    cfg.params.pde_dt = 1e-4;
    cfg.params.meso_grid = [-1.5, 1.5, 0.05];
    cfg
}

#[test]
fn simulate_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        workers: Some(1),
        out: Some(dir.path().to_path_buf()),
    };
    let report = run(&small_simulation(), &opts).unwrap();
    assert!(report.passed(), "{:?}", report.criteria);
    let scalars = fs::read_to_string(dir.path().join("scalars.csv")).unwrap();
    assert!(scalars.starts_with("traj,t,h1err,theta\n"));
    // three trajectories at three checkpoint times
    assert_eq!(scalars.lines().count(), 1 + 9);
    assert!(dir.path().join("blocks_N16.csv").exists());
    assert!(dir.path().join("pde_snapshots.csv").exists());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], report.config_hash);
    // no temp files left behind
    assert!(fs::read_dir(dir.path())
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn equal_hash_and_seed_give_equal_tables() {
    let cfg = small_simulation();
    let a = run(&cfg, &RunOptions::default()).unwrap();
    let b = run(
        &cfg,
        &RunOptions {
            workers: Some(1),
            out: None,
        },
    )
    .unwrap();
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(a.tables, b.tables);
    let mut other = cfg.clone();
    other.seed += 1;
    let c = run(&other, &RunOptions::default()).unwrap();
    assert_ne!(a.config_hash, c.config_hash);
    assert_ne!(a.tables["scalars"], c.tables["scalars"]);
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let studies = [
        ("free_energy.json", StudyKind::FreeEnergy),
        ("cramer.json", StudyKind::Cramer),
        ("phi.json", StudyKind::Phi),
        ("hessian.json", StudyKind::Hessian),
        ("linear_hydro.json", StudyKind::Converge),
        ("nonlinear_hydro.json", StudyKind::Converge),
        ("certify.json", StudyKind::Certify),
    ];
    for (file, study) in studies {
        let mut cfg = ExperimentConfig::load(&dir.join(file)).unwrap();
        cfg.study = Some(study);
        cfg.validate().unwrap_or_else(|e| panic!("{file}: {e}"));
    }
}

#[test]
fn failed_study_still_persists_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(&ModelSpec::double_well(8), StudyKind::FreeEnergy, vec![(8, 2)]);
    cfg.params.sigma_points = vec![400.0];
    let opts = RunOptions {
        workers: Some(1),
        out: Some(dir.path().to_path_buf()),
    };
    let err = run(&cfg, &opts).unwrap_err();
    assert!(err.is_numerical());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(json["error"].as_str().unwrap().contains("transfer"));
}
