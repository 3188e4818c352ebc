use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::PathBuf;

use rawinst_core::audio::{
    synth_dataset, DatasetManifest, Labels, ManifestEntry, ManifestKind, SynthOptions,
};
use rawinst_core::models::{ModelGraph, Variant};
use rawinst_core::training::{
    evaluate_loss, make_folds, overfit_probe, train_model, train_model_with, EpochRecord, PlateauController,
    SegmentSet, StopReason, TrainConfig, TrainHistory, TrainHooks,
};
use rawinst_core::Error;

fn synth_train(dir: &std::path::Path, n: usize, seed: u64) -> DatasetManifest {
    let mut o = SynthOptions::new(n, 4, seed);
    o.kind = ManifestKind::TrainSegments;
    o.seconds = 1;
    synth_dataset(dir, &o).unwrap()
}

fn blank_manifest(n: usize) -> DatasetManifest {
    let entries = (0..n)
        .map(|i| ManifestEntry {
            path: PathBuf::from(format!("f{i}.wav")),
            labels: Labels::one_hot(i % 11),
            fold: None,
        })
        .collect();
    DatasetManifest::new(PathBuf::from("."), entries, ManifestKind::TrainSegments)
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 2,
        seed,
        ..TrainConfig::default()
    }
}

/// History with wall time zeroed, for bitwise comparison.
fn timeless(h: &TrainHistory) -> TrainHistory {
    let mut h = h.clone();
    h.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
    h
}

#[test]
fn irmas_sized_manifest_splits_into_equal_folds() {
    let mut m = blank_manifest(6705);
    m.assign_folds(5, 3);
    let folds = make_folds(&m, 5).unwrap();
    assert_eq!(folds[0].validation.len(), 1341);
    assert_eq!(folds[0].train.len(), 5364);

    let mut seen = BTreeSet::new();
    for f in &folds {
        let train: BTreeSet<_> = f.train.iter().collect();
        assert!(f.validation.iter().all(|i| !train.contains(i)));
        assert_eq!(f.train.len() + f.validation.len(), 6705);
        for &i in &f.validation {
            assert!(seen.insert(i), "entry {i} validated twice");
        }
    }
    assert_eq!(seen.len(), 6705);

    let mut again = blank_manifest(6705);
    again.assign_folds(5, 3);
    assert_eq!(make_folds(&again, 5).unwrap(), folds);
}

#[test]
fn fold_count_must_match_the_manifest() {
    let mut m = blank_manifest(20);
    m.assign_folds(5, 0);
    assert!(matches!(make_folds(&m, 4), Err(Error::Config(_))));
    m.entries[7].fold = None;
    assert!(matches!(make_folds(&m, 5), Err(Error::Config(_))));
}

#[test]
fn plateau_rule_on_a_flat_sequence() {
    let mut c = PlateauController::new(0.001, 0.9, 4, 7);
    let losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9];
    let decisions: Vec<_> = losses.iter().map(|&l| c.observe(l)).collect();
    let decayed: Vec<usize> = (0..9).filter(|&i| decisions[i].decayed).map(|i| i + 1).collect();
    assert_eq!(decayed, vec![6]);
    assert!((decisions[5].lr - 0.0009).abs() < 1e-15);
    assert_eq!(decisions.iter().position(|d| d.stop), Some(8));
    assert_eq!(c.best_epoch(), Some(2));
}

#[test]
fn empty_training_view_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_train(dir.path(), 4, 1);
    let val = SegmentSet::from_manifest(&m, &[0]).unwrap();
    let mut g = ModelGraph::<f32>::build(Variant::Fcn, 0).unwrap();
    let r = train_model(&mut g, &SegmentSet::new(), &val, &small_config(0));
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn training_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_train(dir.path(), 20, 5);
    let folds = make_folds(&m, 5).unwrap();
    let train = SegmentSet::from_manifest(&m, &folds[1].train).unwrap();
    let val = SegmentSet::from_manifest(&m, &folds[1].validation).unwrap();
    let run = || {
        let mut g = ModelGraph::<f32>::build(Variant::Fcn, 7).unwrap();
        let h = train_model(&mut g, &train, &val, &small_config(7)).unwrap();
        (g.to_checkpoint(), timeless(&h))
    };
    let (c1, h1) = run();
    let (c2, h2) = run();
    assert_eq!(h1, h2);
    assert!(c1 == c2, "checkpoints differ");
    assert_eq!(h1.epochs.len(), 2);
    assert_eq!(h1.stopped_reason, StopReason::MaxEpochs);
}

#[test]
fn validation_files_never_reach_a_training_batch() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_train(dir.path(), 15, 9);
    for split in make_folds(&m, 5).unwrap().iter().take(2) {
        let train = SegmentSet::from_manifest(&m, &split.train).unwrap();
        let val = SegmentSet::from_manifest(&m, &split.validation).unwrap();
        let log = RefCell::new(Vec::new());
        let mut hooks = TrainHooks {
            on_batch: Some(Box::new(|b| {
                log.borrow_mut()
                    .extend(b.segments.iter().map(|&i| train.source(i)))
            })),
            ..TrainHooks::default()
        };
        let mut g = ModelGraph::<f32>::build(Variant::Fcn, 1).unwrap();
        let mut cfg = small_config(1);
        cfg.max_epochs = 1;
        train_model_with(&mut g, &train, &val, &cfg, &mut hooks).unwrap();
        drop(hooks);
        let used: BTreeSet<usize> = log.into_inner().into_iter().collect();
        let held: BTreeSet<usize> = split.validation.iter().copied().collect();
        assert!(used.is_disjoint(&held), "fold {} leaks", split.fold);
        assert_eq!(used, split.train.iter().copied().collect());
    }
}

#[test]
fn batch_losses_are_finite_across_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_train(dir.path(), 10, 2);
    let folds = make_folds(&m, 5).unwrap();
    let train = SegmentSet::from_manifest(&m, &folds[0].train).unwrap();
    let val = SegmentSet::from_manifest(&m, &folds[0].validation).unwrap();
    for seed in 0..5 {
        let losses = RefCell::new(Vec::new());
        let mut hooks = TrainHooks {
            on_batch: Some(Box::new(|b| losses.borrow_mut().push(b.loss))),
            ..TrainHooks::default()
        };
        let mut g = ModelGraph::<f32>::build(Variant::Rfcn, seed).unwrap();
        let mut cfg = small_config(seed);
        cfg.max_epochs = 1;
        train_model_with(&mut g, &train, &val, &cfg, &mut hooks).unwrap();
        drop(hooks);
        let losses = losses.into_inner();
        // 8 segments in batches of 8 -> one batch per epoch.
        assert_eq!(losses.len(), 1);
        assert!(losses.iter().all(|l| l.is_finite()), "seed {seed}: {losses:?}");
    }
}

#[test]
fn restored_parameters_come_from_the_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_train(dir.path(), 10, 4);
    let folds = make_folds(&m, 5).unwrap();
    let train = SegmentSet::from_manifest(&m, &folds[2].train).unwrap();
    let val = SegmentSet::from_manifest(&m, &folds[2].validation).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        max_epochs: 5,
        lr_init: 0.01,
        lr_patience_epochs: 1,
        early_stop_patience: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut g = ModelGraph::<f32>::build(Variant::Fcn, 4).unwrap();
    let h = train_model(&mut g, &train, &val, &cfg).unwrap();
    let best = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(h.epochs[h.best_epoch - 1].val_loss, best);
    assert_eq!(evaluate_loss(&g, &val, cfg.batch_size).unwrap(), best);
    for w in h.epochs.windows(2) {
        assert!(w[1].lr <= w[0].lr);
        assert!(w[1].lr == w[0].lr || (w[1].lr - w[0].lr * 0.9).abs() < 1e-15);
    }
}

#[test]
fn zero_epoch_probe_reports_the_initial_loss() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_train(dir.path(), 4, 6);
    let set = SegmentSet::from_manifest(&m, &[0, 1, 2, 3]).unwrap();
    let mut g = ModelGraph::<f32>::build(Variant::Fcn, 0).unwrap();
    let before = g.to_checkpoint();
    let r = overfit_probe(&mut g, &set, 0, 0.001, None).unwrap();
    assert_eq!(r.epochs_run, 0);
    assert_eq!(r.final_loss, r.initial_loss);
    assert!(g.to_checkpoint() == before);
}

#[test]
fn history_text_has_one_row_per_epoch() {
    let h = TrainHistory {
        epochs: vec![
            EpochRecord {
                epoch: 1,
                train_loss: 0.7,
                val_loss: 0.6,
                lr: 0.001,
                seconds: 1.5,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.5,
                val_loss: 0.65,
                lr: 0.001,
                seconds: 1.4,
            },
        ],
        best_epoch: 1,
        stopped_reason: StopReason::MaxEpochs,
    };
    let text = h.to_text();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].split('\t').count(), 5);
    assert!(rows[0].starts_with("1\t0.700000\t0.600000\t"));
}

#[test]
#[ignore = "about an hour on one core; run with --ignored"]
fn two_layer_bigru_memorizes_sixteen_segments() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_train(dir.path(), 16, 8);
    let set = SegmentSet::from_manifest(&m, &(0..16).collect::<Vec<_>>()).unwrap();
    let mut g = ModelGraph::<f32>::build(Variant::BiGru2x128x64, 0).unwrap();
    let r = overfit_probe(&mut g, &set, 200, 0.003, Some(0.1)).unwrap();
    assert!(r.final_loss < 0.1, "{r:?}");
}
