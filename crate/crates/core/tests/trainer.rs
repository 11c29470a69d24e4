mod common;

use std::collections::BTreeMap;

use common::tiny;
use vidalign::model::VideoTransformer;
use vidalign::train::{
    aggregate, aggregate_csv, mean_std, phase1_train, phase2_train, run_matrix, CellResult, EvalResult, LabelMode, MatrixSpec,
    Method, Phase1Config, Phase1Summary, Phase2Config, RunSummary, Variant,
};
use vidalign::Error;

fn trained_phase1() -> (VideoTransformer<f64>, vidalign::train::DomainData) {
    let data = tiny::data();
    let mut model = VideoTransformer::<f64>::new(tiny::model(), 7).unwrap();
    let out = phase1_train(&mut model, &data, &tiny::phase1(), 7).unwrap();
    assert!(out.frozen_unchanged());
    (model, data)
}

fn with_prefix(fp: &BTreeMap<String, String>, prefixes: &[&str]) -> BTreeMap<String, String> {
    fp.iter()
        .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(n, h)| (n.clone(), h.clone()))
        .collect()
}

#[test]
fn phase1_leaves_frozen_weights_untouched() {
    let data = tiny::data();
    let mut model = VideoTransformer::<f64>::new(tiny::model(), 7).unwrap();
    let before = model.params.fingerprint();
    let out = phase1_train(&mut model, &data, &tiny::phase1(), 7).unwrap();
    let after = model.params.fingerprint();
    assert!(out.frozen_unchanged());
    assert!(!out.frozen_before.is_empty());
    for (name, hash) in &before {
        let frozen = out.frozen_before.contains_key(name);
        assert_eq!(frozen, hash == &after[name], "{name}");
    }
    assert_eq!(with_prefix(&before, &["projection."]), with_prefix(&after, &["projection."]));
}

#[test]
fn phase2_leaves_spatial_encoder_and_projection_untouched() {
    let (trained, data) = trained_phase1();
    for method in [Method::Udavt, Method::Mmd, Method::Mcd, Method::Adversarial, Method::Infonce, Method::Vicreg] {
        let mut model = trained.clone();
        let cfg = Phase2Config { method, ..tiny::phase2() };
        let out = phase2_train(&mut model, &data, &cfg, 7).unwrap();
        assert!(out.frozen_unchanged(), "{method:?}");
        let keys: Vec<&String> = out.frozen_before.keys().collect();
        assert!(keys.iter().any(|k| k.starts_with("spatial.")) && keys.iter().any(|k| k.starts_with("projection.")));
        assert!(keys.iter().all(|k| !k.starts_with("temporal.") && !k.starts_with("classifier.")));
        // Spatial weights also match the Phase-I model itself.
        let frozen = ["spatial."];
        assert_eq!(with_prefix(&trained.params.fingerprint(), &frozen), with_prefix(&model.params.fingerprint(), &frozen));
        assert_ne!(
            with_prefix(&trained.params.fingerprint(), &["temporal."]),
            with_prefix(&model.params.fingerprint(), &["temporal."]),
            "{method:?} did not train the temporal encoder"
        );
    }
}

#[test]
fn source_only_phase2_changes_nothing() {
    let (trained, data) = trained_phase1();
    let mut model = trained.clone();
    let cfg = Phase2Config { method: Method::SourceOnly, ..tiny::phase2() };
    let out = phase2_train(&mut model, &data, &cfg, 7).unwrap();
    assert_eq!(model.params.fingerprint(), trained.params.fingerprint());
    assert!(out.target_test.is_some());
}

#[test]
fn training_is_bitwise_deterministic() {
    let run = || {
        let (mut model, data) = trained_phase1();
        let out = phase2_train(&mut model, &data, &tiny::phase2(), 7).unwrap();
        (model.params.fingerprint(), out.records)
    };
    let (fa, ra) = run();
    let (fb, rb) = run();
    assert_eq!(fa, fb);
    assert_eq!(ra, rb);
}

#[test]
fn zero_weight_alignment_ignores_the_labels_it_pairs_with() {
    // With alpha = 0 the alignment term carries no gradient, so the label
    // source used for pairing cannot influence the weights.
    let (trained, data) = trained_phase1();
    let fingerprint = |label_mode, use_queue| {
        let mut model = trained.clone();
        let cfg = Phase2Config { alpha: 0.0, label_mode, use_queue, ..tiny::phase2() };
        phase2_train(&mut model, &data, &cfg, 7).unwrap();
        model.params.fingerprint()
    };
    let base = fingerprint(LabelMode::Pseudo, true);
    assert_eq!(base, fingerprint(LabelMode::Random, true));
    assert_eq!(base, fingerprint(LabelMode::GroundTruth, false));
    // With a positive weight they do matter.
    let mut model = trained.clone();
    let cfg = Phase2Config { label_mode: LabelMode::Random, ..tiny::phase2() };
    phase2_train(&mut model, &data, &cfg, 7).unwrap();
    assert_ne!(base, model.params.fingerprint());
}

#[test]
fn unusable_pairs_raise_a_warning() {
    let (mut model, data) = trained_phase1();
    let cfg = Phase2Config { confidence_threshold: 1.0, ..tiny::phase2() };
    let out = phase2_train(&mut model, &data, &cfg, 7).unwrap();
    for rec in &out.records {
        assert_eq!(rec.zero_pair_fraction, Some(1.0));
        assert!(rec.warnings.iter().any(|w| w.contains("no usable pairs")), "{:?}", rec.warnings);
    }
}

#[test]
fn divergence_is_reported_as_a_numeric_error() {
    let data = tiny::data();
    let mut model = VideoTransformer::<f64>::new(tiny::model(), 7).unwrap();
    let cfg = Phase1Config { lr: 1e300, momentum: 0.0, ..tiny::phase1() };
    match phase1_train(&mut model, &data, &cfg, 7) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("phase 1") && msg.contains("batch"), "{msg}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
    let (mut model, data) = trained_phase1();
    let cfg = Phase2Config { lr: 1e300, momentum: 0.0, ..tiny::phase2() };
    assert!(matches!(phase2_train(&mut model, &data, &cfg, 7), Err(Error::Numeric(_))));
}

#[test]
fn confusion_matrix_counts_every_prediction() {
    let truth = [0, 0, 1, 2, 2, 2];
    let pred = [0, 1, 1, 2, 0, 2];
    let r = EvalResult::from_predictions(&pred, &truth, 3);
    assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 2]]);
    assert_eq!(r.accuracy, 4.0 / 6.0);
    assert_eq!(r.per_class, vec![0.5, 1.0, 2.0 / 3.0]);

    let (mut model, data) = trained_phase1();
    let out = phase2_train(&mut model, &data, &tiny::phase2(), 7).unwrap();
    let target = out.target_test.unwrap();
    let labels = data.target_test.labels();
    for (c, row) in target.confusion.iter().enumerate() {
        assert_eq!(row.iter().sum::<usize>(), labels.iter().filter(|&&l| l == c).count());
    }
    let diag: usize = (0..tiny::CLASSES).map(|c| target.confusion[c][c]).sum();
    assert_eq!(target.accuracy, diag as f64 / labels.len() as f64);
}

#[test]
fn matrix_runs_every_variant_and_aggregates() {
    let data = tiny::data();
    let (model, p1, p2) = (tiny::model(), tiny::phase1(), tiny::phase2());
    let spec = MatrixSpec {
        model: &model,
        phase1: &p1,
        phase2: &p2,
        variants: &Variant::ALL,
        seeds: &[3],
        config_hash: "abc",
        workers: 1,
    };
    let cells = run_matrix::<f32>(&spec, &data);
    assert_eq!(cells.len(), Variant::ALL.len());
    for (cell, v) in cells.iter().zip(Variant::ALL) {
        assert_eq!(cell.variant, v);
        let (summary, _) = cell.outcome.as_ref().unwrap();
        assert_eq!(summary.config_hash, "abc");
        assert!(summary.phase1.as_ref().unwrap().frozen_unchanged);
        assert!(summary.phase2.as_ref().unwrap().frozen_unchanged);
    }
    // Every variant starts from the same Phase-I model.
    let p1s: Vec<_> = cells.iter().map(|c| c.outcome.as_ref().unwrap().0.phase1.clone()).collect();
    assert!(p1s.windows(2).all(|w| w[0] == w[1]));
    let rows = aggregate(&cells, &Variant::ALL);
    for (row, cell) in rows.iter().zip(&cells) {
        assert_eq!((row.n, row.std), (1, 0.0));
        assert_eq!(row.mean, cell.outcome.as_ref().unwrap().0.target_accuracy().unwrap());
    }
    let csv = aggregate_csv(&rows, "abc", &[3]);
    assert!(csv.starts_with("# artifact_version=1 config_hash=abc seeds=3\n"));
    assert_eq!(csv.lines().count(), 2 + Variant::ALL.len());
}

fn fake_cell(variant: Variant, seed: u64, acc: Option<f64>) -> CellResult {
    let outcome = match acc {
        Some(a) => {
            let mut s = RunSummary::new("h", seed);
            s.phase1 = Some(Phase1Summary {
                source_train_acc: 1.0,
                source_test_acc: 1.0,
                target_test_acc: a,
                frozen_unchanged: true,
            });
            Ok((s, Vec::new()))
        }
        None => Err("boom".to_string()),
    };
    CellResult { variant, seed, outcome }
}

#[test]
fn aggregate_matches_a_direct_computation() {
    let accs = [0.5, 0.7, 0.65];
    let mut cells: Vec<CellResult> = accs.iter().enumerate().map(|(s, &a)| fake_cell(Variant::Udavt, s as u64, Some(a))).collect();
    cells.push(fake_cell(Variant::Udavt, 9, None));
    cells.push(fake_cell(Variant::Mmd, 0, Some(0.4)));
    let rows = aggregate(&cells, &[Variant::Mmd, Variant::Udavt, Variant::Vicreg]);
    let mean = accs.iter().sum::<f64>() / 3.0;
    let std = (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 2.0).sqrt();
    assert_eq!(rows[0].variant, Variant::Mmd);
    assert_eq!((rows[0].mean, rows[0].std, rows[0].n), (0.4, 0.0, 1));
    assert!((rows[1].mean - mean).abs() < 1e-15 && (rows[1].std - std).abs() < 1e-15);
    assert_eq!(rows[1].n, 3);
    assert_eq!(rows[1].failures, vec!["seed 9: boom".to_string()]);
    assert_eq!(rows[2].n, 0);
    assert!(rows[2].mean.is_nan());
    assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
}
