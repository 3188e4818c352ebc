//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rawinst_core::audio::Labels;
use rawinst_core::eval::TrackPrediction;
use rawinst_core::tensor::Tensor;
use rawinst_core::NUM_LABELS;

pub fn rand_tensor(r: &mut impl Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

pub fn track(id: &str, scores: &[f64], truth: &[usize]) -> TrackPrediction {
    let mut s = [0.0; NUM_LABELS];
    s[..scores.len()].copy_from_slice(scores);
    let mut labels = Labels::default();
    truth.iter().for_each(|&l| labels.set(l, true));
    TrackPrediction {
        track_id: id.to_string(),
        scores: s,
        labels,
    }
}

/// LRAP by sorting: each true label's rank is the 1-based position of the
/// last label in descending order whose score equals its own.
pub fn lrap_by_sorting(preds: &[TrackPrediction], scope: &[usize]) -> f64 {
    let mut total = 0.0;
    for p in preds {
        let mut order = scope.to_vec();
        order.sort_by(|a, b| p.scores[*b].partial_cmp(&p.scores[*a]).unwrap());
        let truth: Vec<usize> = scope.iter().copied().filter(|&l| p.labels.get(l)).collect();
        let mut sum = 0.0;
        for &y in &truth {
            let rank = order.iter().rposition(|&l| p.scores[l] == p.scores[y]).unwrap() + 1;
            let hits = order[..rank].iter().filter(|&&l| p.labels.get(l)).count();
            sum += hits as f64 / rank as f64;
        }
        total += sum / truth.len() as f64;
    }
    total / preds.len() as f64
}

/// Confusion cells by enumerating every (track, label) pair.
pub fn f1_by_confusion(preds: &[TrackPrediction], t: f64, scope: &[usize]) -> (f64, f64, Vec<f64>) {
    let mut cells = vec![[0usize; 4]; scope.len()]; // tp, fp, fn, tn
    for p in preds {
        for (k, &l) in scope.iter().enumerate() {
            let cell = match (p.scores[l] >= t, p.labels.get(l)) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            cells[k][cell] += 1;
        }
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        if tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let per: Vec<f64> = cells.iter().map(|c| f1(c[0], c[1], c[2])).collect();
    let sum = |i: usize| cells.iter().map(|c| c[i]).sum::<usize>();
    let micro = f1(sum(0), sum(1), sum(2));
    (micro, per.iter().sum::<f64>() / per.len() as f64, per)
}

/// Random tracks over the first `n_labels` labels, each with at least one
/// true label; scores are coarsely quantized so ties occur.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<TrackPrediction>, Vec<usize>) {
    let n_labels = rng.random_range(2..=NUM_LABELS);
    let n_tracks = rng.random_range(1..=50);
    let scope: Vec<usize> = (0..n_labels).collect();
    let preds = (0..n_tracks)
        .map(|i| {
            let scores: Vec<f64> = (0..n_labels)
                .map(|_| f64::from(rng.random_range(0..20u8)) / 20.0 + 0.01)
                .collect();
            let mut truth: Vec<usize> = scope.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
            if truth.is_empty() {
                truth.push(rng.random_range(0..n_labels));
            }
            track(&format!("t{i:03}"), &scores, &truth)
        })
        .collect();
    (preds, scope)
}
