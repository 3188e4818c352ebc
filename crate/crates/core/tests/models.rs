use rand::Rng;
use rawinst_core::models::{gradient_check, Mode, ModelCheck, ModelGraph, Variant};
use rawinst_core::rng;
use rawinst_core::tensor::{Adam, Tape, Tensor};
use rawinst_core::{Error, NUM_LABELS, SEGMENT_LEN};

fn random_batch(b: usize, len: usize, seed: u64) -> Tensor<f32> {
    let mut r = rng::stream(seed, "test/batch");
    let data = (0..b * len).map(|_| r.random_range(-1.0f32..1.0)).collect();
    Tensor::new(vec![b, 1, len], data).unwrap()
}

#[test]
fn parameter_counts_match_reported_sizes() {
    let expected = [
        (Variant::BiGru1x128, 103_435),
        (Variant::BiGru1x256, 403_467),
        (Variant::BiGru2x128x64, 225_675),
        (Variant::Dcnn, 1_142_299),
        (Variant::Fcn, 81_787),
        (Variant::Rfcn, 84_987),
        (Variant::Crnn(3), 359_046),
    ];
    for (v, n) in expected {
        let m = ModelGraph::<f32>::build(v, 1).unwrap();
        assert_eq!(m.param_count(), n, "{v}");
    }
}

#[test]
fn parameter_count_oracle_by_layer_formula() {
    // independent arithmetic: conv (k*cin+1)*cout, BN 4*c, GRU 3*(n*h + h*h + 2h)
    let conv = |cin: usize, cout: usize, k: usize| (k * cin + 1) * cout;
    let cells = [(1, 16, 3), (16, 32, 3), (32, 64, 3), (64, 64, 5), (64, 32, 5)];
    let stack: usize = cells
        .iter()
        .map(|&(i, o, k)| conv(i, o, k) + conv(o, o, k) + 4 * o)
        .sum();
    let gru = |n: usize, h: usize| 2 * 3 * (n * h + h * h + 2 * h);
    let fcn = stack + conv(32, 11, 1);
    let rfcn = fcn + conv(16, 64, 1) + conv(32, 64, 1);
    let crnn = |feat: usize| rfcn + gru(feat, 128) + gru(256, 64) + conv(128, 11, 1);
    for k in 2..=5u8 {
        let feat = [16, 32, 64, 64, 32][usize::from(k) - 1];
        let m = ModelGraph::<f32>::build(Variant::Crnn(k), 0).unwrap();
        assert_eq!(m.param_count(), crnn(feat), "crnn{k}");
    }
    assert_eq!(
        ModelGraph::<f32>::build(Variant::Fcn, 0).unwrap().param_count(),
        fcn
    );
    assert_eq!(
        ModelGraph::<f32>::build(Variant::BiGru1x128, 0)
            .unwrap()
            .param_count(),
        gru(1, 128) + 257 * 11
    );
    let fcn_model = ModelGraph::<f32>::build(Variant::Fcn, 0).unwrap();
    assert_eq!(
        fcn_model.trainable_param_count(),
        fcn - 2 * (16 + 32 + 64 + 64 + 32)
    );
}

#[test]
fn length_cascade_and_branch_dims() {
    let m = ModelGraph::<f32>::build(Variant::Rfcn, 0).unwrap();
    assert_eq!(m.cell_lengths().unwrap(), vec![7350, 2450, 816, 163, 32]);
    let dims: Vec<_> = (2..=5u8)
        .map(|k| {
            ModelGraph::<f32>::build(Variant::Crnn(k), 0)
                .unwrap()
                .branch_input_dims()
                .unwrap()
        })
        .collect();
    assert_eq!(dims, vec![(32, 2450), (64, 816), (64, 163), (32, 32)]);
}

#[test]
fn variant_tags_round_trip_and_reject_unknown() {
    for v in Variant::ALL {
        assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
    }
    assert!(matches!("crnn6".parse::<Variant>(), Err(Error::Config(_))));
    assert!(matches!("resnet".parse::<Variant>(), Err(Error::Config(_))));
    assert!(matches!(
        ModelGraph::<f32>::build(Variant::Crnn(1), 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn every_model_maps_batch_to_eleven_activations() {
    let x = random_batch(2, SEGMENT_LEN, 5);
    for v in Variant::ALL {
        let m = ModelGraph::<f32>::build(v, 3).unwrap();
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), &[2, NUM_LABELS], "{v}");
        assert!(y.data().iter().all(|p| *p > 0.0 && *p < 1.0), "{v}");
        assert_eq!(m.predict(&x).unwrap(), y, "{v} infer determinism");
    }
}

#[test]
fn wrong_input_length_is_a_shape_error() {
    let m = ModelGraph::<f32>::build(Variant::Fcn, 0).unwrap();
    let err = m.predict(&random_batch(1, 22_000, 0)).unwrap_err();
    assert!(matches!(err, Error::Shape(ref s) if s.contains("22050")), "{err}");
}

#[test]
fn silent_input_with_fresh_statistics_is_finite() {
    let m = ModelGraph::<f32>::build(Variant::Fcn, 0).unwrap();
    let y = m.predict(&Tensor::zeros(vec![1, 1, SEGMENT_LEN])).unwrap();
    assert!(y.all_finite());
}

#[test]
fn train_backward_reaches_every_trainable_parameter() {
    for v in Variant::ALL {
        let mut m = ModelGraph::<f32>::build(v, 9).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(random_batch(2, SEGMENT_LEN, 1));
        let logits = m.forward_logits(&mut tape, x, Mode::Train).unwrap();
        let y = Tensor::full(vec![2, NUM_LABELS], 0.5f32);
        let loss = tape.bce_with_logits(logits, &y).unwrap();
        let grads = tape.backward(loss).unwrap();
        grads.accumulate_into(&tape, m.params_mut());
        for p in m.params().iter().filter(|p| p.trainable()) {
            let g = p
                .grad
                .as_ref()
                .unwrap_or_else(|| panic!("{v}: no grad for {}", p.name));
            assert!(g.iter().all(|x| x.is_finite()), "{v}: {}", p.name);
        }
    }
}

fn zero_params(m: &mut ModelGraph<f32>, prefix: &str) {
    let mut hit = 0;
    for p in m.params_mut().iter_mut().filter(|p| p.name.starts_with(prefix)) {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        hit += 1;
    }
    assert!(hit > 0, "no parameter under {prefix}");
}

#[test]
fn rfcn_with_zeroed_skips_equals_fcn_bitwise() {
    let x = random_batch(2, SEGMENT_LEN, 11);
    for seed in [0, 1] {
        let fcn = ModelGraph::<f32>::build(Variant::Fcn, seed).unwrap();
        let mut rfcn = ModelGraph::<f32>::build(Variant::Rfcn, seed).unwrap();
        zero_params(&mut rfcn, "skip");
        let a = fcn.predict(&x).unwrap();
        let b = rfcn.predict(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn crnn_with_zeroed_branch_head_is_half_rfcn_logits() {
    let x = random_batch(1, SEGMENT_LEN, 12);
    let rfcn = ModelGraph::<f32>::build(Variant::Rfcn, 4).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let logits = rfcn.logits_pure(&mut tape, xv, Mode::Infer).unwrap();
    let half = tape.scale(logits, 0.5);
    let want = tape.sigmoid(half);
    let want = tape.value(want).clone();
    for k in 2..=5u8 {
        let mut crnn = ModelGraph::<f32>::build(Variant::Crnn(k), 4).unwrap();
        zero_params(&mut crnn, "branch.head.weight");
        zero_params(&mut crnn, "branch.head.bias");
        assert_eq!(crnn.predict(&x).unwrap().data(), want.data(), "crnn{k}");
    }
}

#[test]
fn single_step_decreases_loss_on_the_sample() {
    for v in Variant::ALL {
        let mode = if v.has_batch_norm() {
            Mode::Train
        } else {
            Mode::Infer
        };
        let mut failures = 0;
        for seed in 0..10u64 {
            let mut m = ModelGraph::<f32>::build(v, seed).unwrap();
            let x = random_batch(1, SEGMENT_LEN, 100 + seed);
            let mut r = rng::stream(seed, "test/labels");
            let y: Vec<f32> = (0..NUM_LABELS)
                .map(|_| if r.random::<bool>() { 1.0 } else { 0.0 })
                .collect();
            let y = Tensor::new(vec![1, NUM_LABELS], y).unwrap();
            let loss_now = |m: &ModelGraph<f32>| {
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let l = m.logits_pure(&mut tape, xv, mode).unwrap();
                let l = tape.bce_with_logits(l, &y).unwrap();
                tape.value(l).data()[0]
            };
            let before = loss_now(&m);
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let l = m.forward_logits(&mut tape, xv, mode).unwrap();
            let l = tape.bce_with_logits(l, &y).unwrap();
            tape.backward(l).unwrap().accumulate_into(&tape, m.params_mut());
            Adam::new(1e-3).step(m.params_mut()).unwrap();
            if loss_now(&m) >= before {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{v}: {failures} failures");
    }
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut m = ModelGraph::<f32>::build(Variant::Rfcn, 2).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(random_batch(2, SEGMENT_LEN, 3));
    m.forward_logits(&mut tape, x, Mode::Train).unwrap();
    rawinst_core::models::save_checkpoint(&m, &path).unwrap();
    let loaded = rawinst_core::models::load_checkpoint(&path).unwrap();
    for (a, b) in m.params().iter().zip(loaded.params().iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.tensor, b.tensor);
    }
    let probe = random_batch(1, SEGMENT_LEN, 4);
    assert_eq!(m.predict(&probe).unwrap(), loaded.predict(&probe).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let mut fresh = ModelGraph::<f32>::build(Variant::Rfcn, 0).unwrap();
    assert!(matches!(
        fresh.load_checkpoint_bytes(&bytes),
        Err(Error::Checkpoint(_))
    ));
    let mut other = ModelGraph::<f32>::build(Variant::Fcn, 0).unwrap();
    assert!(matches!(
        other.load_checkpoint_bytes(&m.to_checkpoint()),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn whole_model_gradients_match_finite_differences() {
    for v in [Variant::Fcn, Variant::Dcnn, Variant::Crnn(5), Variant::BiGru1x128] {
        let report = gradient_check(v, 1, &ModelCheck::reduced(v)).unwrap();
        assert!(report.passed(1e-4), "{v}:\n{report}");
    }
}

#[test]
fn running_statistics_path_agrees_with_finite_differences() {
    for v in [Variant::Fcn, Variant::Rfcn, Variant::Crnn(5)] {
        let check = ModelCheck {
            mode: Mode::Infer,
            ..ModelCheck::reduced(v)
        };
        let report = gradient_check(v, 2, &check).unwrap();
        assert!(report.passed(1e-4), "{v}:\n{report}");
    }
}
