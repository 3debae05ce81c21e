//! Stored runs, reloading and real-data curves through the public API.

use chmm::experiments::{
    export, learning_curve, load_result, phase_diagram, read_csv, real_curve, run_grid, AxisName, ExperimentConfig,
    ExportFormat, GridAxis, NetSchedule, Protocol, RealTask, RunOptions, RunStore,
};
use chmm::generator::{derive_target, sample_dataset, sample_generative_pair, Dataset, TransformSpec};
use chmm::rng::{StreamKey, StreamTag};
use chmm::Error;

fn small() -> ExperimentConfig {
    let base = ExperimentConfig::default();
    ExperimentConfig {
        input_dim: 30,
        hidden_dim: 12,
        source_latent: 8,
        target_latent: 8,
        source_samples: 300,
        axes: vec![GridAxis::linear(AxisName::TargetSamples, vec![0.5, 2.0])],
        protocols: vec![Protocol::Transferred, Protocol::RandomFeatures, Protocol::TheoryRandom],
        seeds: vec![1, 2],
        seed_schedule: None,
        lambda: 1e-2,
        n_test: 400,
        n_mc: 2000,
        source_training: NetSchedule {
            max_epochs: 4,
            ..base.source_training
        },
        ..base
    }
}

fn stored(dir: &std::path::Path, resume: bool) -> RunOptions {
    RunOptions {
        dir: Some(dir.to_path_buf()),
        resume,
        jobs: 1,
    }
}

#[test]
fn reloaded_run_matches_the_live_result() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    let live = learning_curve(&cfg, &stored(tmp.path(), false)).unwrap();
    let back = load_result(tmp.path()).unwrap();
    assert_eq!(back.records, live.records);
    assert_eq!(back.cells, live.cells);
    assert_eq!(back.counters, live.counters);
    assert_eq!(back.config_hash, cfg.hash());

    let manifest = RunStore::load_manifest(tmp.path()).unwrap();
    assert_eq!(manifest.cells_completed, 2);
    assert_eq!(manifest.counters.source_trainings, 2);
    assert_eq!(manifest.counters.readout_fits, 2 * 2 * 2);
}

#[test]
fn partial_run_reloads_what_exists_then_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    let full = learning_curve(&cfg, &stored(tmp.path(), false)).unwrap();
    let cells = tmp.path().join("cells");
    let first = std::fs::read_dir(&cells).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(first).unwrap();

    let partial = load_result(tmp.path()).unwrap();
    assert_eq!(partial.cells.len(), 1);
    assert_eq!(partial.records.len(), 3);

    assert!(
        learning_curve(&cfg, &stored(tmp.path(), false)).is_err(),
        "a finished directory needs resume"
    );
    let resumed = learning_curve(&cfg, &stored(tmp.path(), true)).unwrap();
    assert_eq!(resumed.records, full.records);
    assert_eq!(resumed.counters.readout_fits, 2 * 2);

    let mut other = cfg.clone();
    other.lambda = 0.5;
    assert!(learning_curve(&other, &stored(tmp.path(), true)).is_err());
}

#[test]
fn export_round_trips_through_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.protocols = vec![Protocol::TheoryTransferred, Protocol::TheoryRandom];
    cfg.axes = vec![
        GridAxis::linear(AxisName::TeacherAlignment, vec![0.0, 1.0]),
        GridAxis::linear(AxisName::TargetSamples, vec![0.5, 2.0]),
    ];
    let res = phase_diagram(&cfg, &RunOptions::default()).unwrap();
    let written = export(&res, tmp.path(), &[ExportFormat::Csv, ExportFormat::Heatmap]).unwrap();
    assert_eq!(written.len(), 2);
    let (names, rows) = read_csv(&written[0]).unwrap();
    assert_eq!(names, vec!["q_teacher", "M_target"]);
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let orig = res.record(&r.values, r.protocol).unwrap();
        assert_eq!(r.mean_error.to_bits(), orig.mean_error.to_bits());
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = small();
    let one = run_grid(
        &cfg,
        &RunOptions {
            jobs: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let three = run_grid(
        &cfg,
        &RunOptions {
            jobs: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(one.records, three.records);
    assert_eq!(one.counters, three.counters);
}

/// Generator samples standing in for externally supplied data.
fn synthetic_task(q: f64) -> RealTask {
    let source = sample_generative_pair(10, 40, 11).unwrap();
    let spec = TransformSpec {
        eta: 1.0,
        rho_sub: 0.0,
        q_teacher: q,
        target_latent_dim: 10,
    };
    let target = derive_target(&source, &spec, 11).unwrap();
    let draw = |pair, m, tag| -> Dataset { sample_dataset(pair, m, StreamKey::new(11, tag, 0)).unwrap() };
    RealTask {
        source: draw(&source, 2000, StreamTag::SourceData),
        target: draw(&target, 400, StreamTag::TargetData),
        test: draw(&target, 2000, StreamTag::TestData),
    }
}

fn real_config() -> ExperimentConfig {
    let base = ExperimentConfig::default();
    ExperimentConfig {
        hidden_dim: 20,
        axes: vec![GridAxis::linear(AxisName::TargetSamples, vec![1.0, 5.0])],
        protocols: vec![
            Protocol::Transferred,
            Protocol::RandomFeatures,
            Protocol::Scratch,
            Protocol::FineTuned,
        ],
        seeds: vec![3, 4, 5],
        seed_schedule: None,
        lambda: 1e-3,
        source_samples: usize::MAX,
        source_training: NetSchedule {
            max_epochs: 30,
            ..base.source_training
        },
        scratch_training: NetSchedule {
            max_epochs: 5,
            ..base.scratch_training
        },
        fine_tuning: NetSchedule {
            max_epochs: 3,
            ..base.fine_tuning
        },
        ..base
    }
}

#[test]
fn real_curve_transfers_features_from_an_identical_task() {
    let task = synthetic_task(1.0);
    let cfg = real_config();
    let res = real_curve(&cfg, &task, &RunOptions::default()).unwrap();
    assert_eq!(res.records.len(), 2 * 4);
    assert_eq!(res.counters.source_trainings, 3);
    assert_eq!(res.counters.readout_fits, 2 * 3 * 2);
    assert_eq!(res.counters.network_trainings, 2 * 3 * 2);
    for r in &res.records {
        assert_eq!(r.n_seeds, 3, "{r:?}");
        assert!((0.0..=1.0).contains(&r.mean_error));
    }
    let tf = res.record(&[1.0], Protocol::Transferred).unwrap().mean_error;
    let rf = res.record(&[1.0], Protocol::RandomFeatures).unwrap().mean_error;
    assert!(tf < rf, "TF {tf} should beat RF {rf} when source and target coincide");

    let again = real_curve(
        &cfg,
        &task,
        &RunOptions {
            jobs: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(again.records, res.records);
}

#[test]
fn real_curve_caps_the_source_set() {
    let task = synthetic_task(1.0);
    let mut cfg = real_config();
    cfg.protocols = vec![Protocol::Transferred];
    let full = real_curve(&cfg, &task, &RunOptions::default()).unwrap();
    cfg.source_samples = 100;
    let capped = real_curve(&cfg, &task, &RunOptions::default()).unwrap();
    assert_ne!(full.records, capped.records);
}

#[test]
fn real_curve_lists_every_problem() {
    let mut task = synthetic_task(0.5);
    task.test.inputs = task.test.inputs.slice(ndarray::s![.., ..39]).to_owned();
    let mut cfg = real_config();
    cfg.protocols.push(Protocol::TheoryTransferred);
    cfg.axes[0].values.push(100.0);
    let Err(Error::Config(msg)) = real_curve(&cfg, &task, &RunOptions::default()) else {
        panic!("expected a configuration error");
    };
    for needle in ["input dimensions differ", "theoryTF", "2000 target samples"] {
        assert!(msg.contains(needle), "`{needle}` missing from {msg}");
    }
    cfg.axes.push(GridAxis::linear(AxisName::Eta, vec![0.5]));
    let Err(Error::Config(msg)) = real_curve(&cfg, &task, &RunOptions::default()) else {
        panic!("expected a configuration error");
    };
    assert!(msg.contains("exactly one axis"));
}
