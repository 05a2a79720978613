use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use curvdesign::benchmarks::Target;
use curvdesign::design_space::{DesignBounds, DesignParams};
use curvdesign::encoding::{read_encodings, write_encodings, HistogramSpec};
use curvdesign::neural::TrainConfig;
use curvdesign::phase_field::SolverConfig;
use curvdesign::pipeline::*;
use curvdesign::Error;

fn small(n: usize, seed: u64) -> DatasetConfig {
    DatasetConfig {
        grid: 24,
        ..DatasetConfig::desk(n, seed)
    }
}

fn files(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    (
        std::fs::read(dir.join(THETA_FILE)).unwrap(),
        std::fs::read(dir.join(CHI_FILE)).unwrap(),
    )
}

#[test]
fn known_feasible_design_gives_one_pair() {
    let dir = tempfile::tempdir().unwrap();
    let theta = DesignParams::new(0.66, -0.38, 0.41, 1.21, 0.30, -0.46, -0.5);
    let cfg = DatasetConfig {
        bounds: DesignBounds::point(&theta),
        ..small(1, 0)
    };
    let m = generate_dataset(&cfg, dir.path(), 1).unwrap();
    assert_eq!(m.count, 1);
    let data = Dataset::load(dir.path()).unwrap();
    assert_eq!(data.thetas, vec![theta]);
    assert_eq!(m.records.iter().filter(|r| r.is_feasible()).count(), 1);
}

#[test]
fn stored_files_do_not_depend_on_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let ma = generate_dataset(&small(3, 7), a.path(), 1).unwrap();
    let mb = generate_dataset(&small(3, 7), b.path(), 3).unwrap();
    let mc = generate_dataset(&small(3, 7), c.path(), 3).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    assert_eq!(ma.records, mb.records);
    assert_eq!(mb, mc);
    assert_eq!(
        std::fs::read(b.path().join(MANIFEST_FILE)).unwrap(),
        std::fs::read(c.path().join(MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn resume_rolls_back_partial_writes() {
    let direct = tempfile::tempdir().unwrap();
    generate_dataset(&small(4, 11), direct.path(), 1).unwrap();

    let resumed = tempfile::tempdir().unwrap();
    generate_dataset(&small(2, 11), resumed.path(), 1).unwrap();
    // A crash between data and manifest writes leaves extra rows behind.
    let theta_path = resumed.path().join(THETA_FILE);
    let mut text = std::fs::read_to_string(&theta_path).unwrap();
    text.push_str("9,9,9,9,9,9,9\n");
    std::fs::write(&theta_path, text).unwrap();
    let spec = HistogramSpec::desk();
    curvdesign::encoding::append_encodings(
        &resumed.path().join(CHI_FILE),
        &spec,
        &[vec![0.5; spec.len()]],
    )
    .unwrap();

    let m = generate_dataset(&small(4, 11), resumed.path(), 2).unwrap();
    assert_eq!(m.count, 4);
    assert_eq!(files(direct.path()), files(resumed.path()));
    // Asking for fewer pairs than stored changes nothing.
    assert_eq!(generate_dataset(&small(3, 11), resumed.path(), 1).unwrap().count, 4);
}

#[test]
fn changed_recipe_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(1, 1), dir.path(), 1).unwrap();
    let other = DatasetConfig {
        grid: 16,
        ..small(1, 1)
    };
    assert!(matches!(
        generate_dataset(&other, dir.path(), 1),
        Err(Error::IncompatibleEncoding(_))
    ));
}

#[test]
fn stored_pairs_satisfy_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(10, 3);
    let m = generate_dataset(&cfg, dir.path(), 2).unwrap();
    let data = Dataset::load(dir.path()).unwrap();
    assert_eq!(data.len(), 10);
    for (theta, chi) in data.thetas.iter().zip(&data.chis) {
        assert!(cfg.bounds.contains(theta));
        let sum: f64 = chi.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
        assert!(chi.iter().all(|&v| v >= 0.0));
    }
    let k = cfg.histogram.len() as u64;
    let mut row = 0;
    for (i, r) in m.records.iter().enumerate() {
        assert_eq!(r.index, i as u64);
        if let SampleStatus::Feasible { row: rr, chi_offset } = r.status {
            assert_eq!(rr, row);
            assert_eq!(chi_offset, 36 + 4 * k * row);
            assert_eq!(r.theta, data.thetas[row as usize]);
            row += 1;
        }
    }
    assert_eq!(m.count, row);
    assert_eq!(m.attempted, m.records.len() as u64);
}

#[test]
fn collapsing_feasibility_aborts_with_records_saved() {
    let dir = tempfile::tempdir().unwrap();
    // Area-penalizing energy at a minority volume fraction never separates.
    let theta = DesignParams::new(0.1, 0.0, 0.1, 0.0, 0.0, 0.5, -0.8);
    let cfg = DatasetConfig {
        bounds: DesignBounds::point(&theta),
        abort_window: 4,
        abort_rate: 0.5,
        ..small(5, 0)
    };
    match generate_dataset(&cfg, dir.path(), 1) {
        Err(Error::FeasibilityAbort { rate, window }) => {
            assert_eq!(window, 4);
            assert!(rate < 0.5);
        }
        other => panic!("expected abort, got {other:?}"),
    }
    let m = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(m.attempted, 4);
    assert!(!m.rejection_summary().is_empty());
}

struct Trained {
    _dir: tempfile::TempDir,
    data: PathBuf,
    fnn: PathBuf,
    inn: PathBuf,
    inverse_train_loss: f64,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        generate_dataset(&small(24, 5), &data, 2).unwrap();
        let fnn = dir.path().join("models/f.mlp");
        let inn = dir.path().join("models/g.mlp");
        let fcfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            ..TrainConfig::forward_default()
        };
        train_forward_model(&data, Preset::Desk, &fcfg, &fnn).unwrap();
        let icfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            ..TrainConfig::inverse_default()
        };
        let report = train_inverse_model(&data, &fnn, Preset::Desk, &icfg, &inn).unwrap();
        Trained {
            inverse_train_loss: report.final_train_loss(),
            _dir: dir,
            data,
            fnn,
            inn,
        }
    })
}

#[test]
fn training_writes_checkpoints_scalers_and_curves() {
    let t = trained();
    for suffix in [".json", ".theta_scaler.json", ".chi_scaler.json", ".loss.csv"] {
        let mut p = t.fnn.as_os_str().to_owned();
        p.push(suffix);
        assert!(Path::new(&p).exists(), "{suffix}");
    }
    let csv = std::fs::read_to_string(loss_csv_path(&t.inn)).unwrap();
    assert_eq!(csv.lines().count(), 22);
    let models = Models::load(&t.fnn, &t.inn).unwrap();
    assert_eq!(models.spec, HistogramSpec::desk());
}

#[test]
fn training_targets_reconstruct_at_training_loss() {
    let t = trained();
    let models = Models::load(&t.fnn, &t.inn).unwrap();
    let data = Dataset::load(&t.data).unwrap();
    let (train, _) = split_indices(data.len(), TEST_FRACTION, 0);
    let dir = tempfile::tempdir().unwrap();
    let solver = SolverConfig::default();
    let mut total = 0.0;
    for &i in &train {
        let path = dir.path().join(format!("{i}.chi"));
        write_encodings(&path, data.spec(), &[data.chis[i].clone()]).unwrap();
        let stored = read_encodings(&path).unwrap().1.remove(0);
        let r = run_inverse_design(&TargetSource::Encoding(path), &models, &solver, None).unwrap();
        let a = models.chi_scaler.scale(&r.reconstructed.values).unwrap();
        let b = models.chi_scaler.scale(&stored).unwrap();
        total += a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    let mean = total / train.len() as f64;
    // Stored rows are f32, the training set f64.
    assert!(
        (mean - t.inverse_train_loss).abs() <= 1e-4 * t.inverse_train_loss,
        "{mean} vs {}",
        t.inverse_train_loss
    );
}

#[test]
fn benchmark_target_round_trip_emits_artifacts() {
    let t = trained();
    let models = Models::load(&t.fnn, &t.inn).unwrap();
    let solver = SolverConfig::default();
    let verify = VerifyConfig {
        grid: 24,
        ..Default::default()
    };
    let source = TargetSource::Benchmark(Box::new(Target::pns(32)));
    let r = run_inverse_design(&source, &models, &solver, Some(&verify)).unwrap();
    let sum: f64 = r.target.values.iter().sum();
    assert!((sum - 1.0).abs() < 1e-9);
    assert!(r.tv_reconstruction >= 0.0 && r.tv_reconstruction <= 1.0 + 1e-9);
    let out = tempfile::tempdir().unwrap();
    let summary = write_inverse_design(&r, Some(&verify), &solver, out.path()).unwrap();
    for f in ["theta.json", "summary.json", "target.chi", "reconstructed.chi", "comparison.csv", "field.raw", "energy.csv"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    assert_eq!(summary.verify_steps, r.verification.as_ref().map(|v| v.diagnostics.steps));
    let again = run_inverse_design(&source, &models, &solver, Some(&verify)).unwrap();
    assert_eq!(r, again);
}

#[test]
fn incompatible_targets_are_refused() {
    let t = trained();
    let models = Models::load(&t.fnn, &t.inn).unwrap();
    let solver = SolverConfig::default();
    let dir = tempfile::tempdir().unwrap();

    let junk = dir.path().join("junk.chi");
    std::fs::write(&junk, b"CHI1 not really").unwrap();
    let err = run_inverse_design(&TargetSource::Encoding(junk), &models, &solver, None).unwrap_err();
    assert!(matches!(err, Error::IncompatibleEncoding(_)));
    assert_eq!(err.exit_code(), 4);

    let other = dir.path().join("b20.chi");
    let spec = HistogramSpec::with_bins(20);
    write_encodings(&other, &spec, &[vec![1.0 / spec.len() as f64; spec.len()]]).unwrap();
    let err = run_inverse_design(&TargetSource::Encoding(other), &models, &solver, None).unwrap_err();
    assert!(matches!(err, Error::IncompatibleEncoding(_)));

    let err = Models::load(&t.fnn, &dir.path().join("missing.mlp")).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact(_)));
    assert_eq!(err.exit_code(), 4);

    // A forward checkpoint in the inverse slot.
    let err = Models::load(&t.fnn, &t.fnn).unwrap_err();
    assert!(matches!(err, Error::IncompatibleEncoding(_)));
}
