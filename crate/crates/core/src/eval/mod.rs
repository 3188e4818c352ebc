//! Track-level prediction and multi-label metrics.

mod metrics;

use std::fmt::Write as _;
use std::path::Path;

pub use metrics::{
    all_labels, f1_scores, f1_scores_over, instrument_report, instrument_report_over, lrap, lrap_over,
    threshold_sweep, EvalReport, F1Scores, LabelMetrics,
};

use crate::audio::{load_track, segment_clip, AudioClip, DatasetManifest, Labels, Segment};
use crate::error::{Error, Result};
use crate::models::ModelGraph;
use crate::tensor::Tensor;
use crate::{NUM_LABELS, SEGMENT_LEN};

/// Segments per inference batch.
const PREDICT_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackPrediction {
    pub track_id: String,
    pub scores: [f64; NUM_LABELS],
    pub labels: Labels,
}

impl TrackPrediction {
    /// Averages per-segment activations.
    pub fn from_activations(
        track_id: &str,
        activations: &[[f64; NUM_LABELS]],
        labels: Labels,
    ) -> Result<Self> {
        if activations.is_empty() {
            return Err(Error::Evaluation(format!("track {track_id} has no segments")));
        }
        let mut scores = [0.0; NUM_LABELS];
        for a in activations {
            for (s, v) in scores.iter_mut().zip(a) {
                *s += v;
            }
        }
        let n = activations.len() as f64;
        scores.iter_mut().for_each(|s| *s /= n);
        Ok(TrackPrediction {
            track_id: track_id.to_string(),
            scores,
            labels,
        })
    }
}

/// Infer-mode activations, one row per segment.
pub fn segment_activations(graph: &ModelGraph<f32>, segments: &[Segment]) -> Result<Vec<[f64; NUM_LABELS]>> {
    let mut out = Vec::with_capacity(segments.len());
    for chunk in segments.chunks(PREDICT_BATCH) {
        let mut x = Vec::with_capacity(chunk.len() * SEGMENT_LEN);
        for s in chunk {
            x.extend_from_slice(&s.waveform);
        }
        let p = graph.predict(&Tensor::new(vec![chunk.len(), 1, SEGMENT_LEN], x)?)?;
        for row in p.data().chunks_exact(NUM_LABELS) {
            let mut a = [0.0; NUM_LABELS];
            for (d, &v) in a.iter_mut().zip(row) {
                *d = f64::from(v);
            }
            out.push(a);
        }
    }
    Ok(out)
}

/// Segments a preprocessed clip and averages the model's activations.
pub fn predict_track(
    graph: &ModelGraph<f32>,
    clip: &AudioClip,
    labels: Labels,
    track_id: &str,
) -> Result<TrackPrediction> {
    let segments = segment_clip(clip, labels, track_id)?;
    let act = segment_activations(graph, &segments)?;
    TrackPrediction::from_activations(track_id, &act, labels)
}

/// Predicts every track of a manifest (track id = relative path).
pub fn predict_manifest(graph: &ModelGraph<f32>, manifest: &DatasetManifest) -> Result<Vec<TrackPrediction>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let clip = load_track(&manifest.full_path(e))?;
            predict_track(graph, &clip, e.labels, &e.path.to_string_lossy())
        })
        .collect()
}

/// One line per track: `track_id\tscores\tlabels`, comma-separated. Scores
/// use the shortest exact representation so a dump re-scores identically.
pub fn write_predictions(predictions: &[TrackPrediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        let scores: Vec<String> = p.scores.iter().map(|s| s.to_string()).collect();
        let labels: Vec<&str> = p
            .labels
            .as_array()
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect();
        let _ = writeln!(out, "{}\t{}\t{}", p.track_id, scores.join(","), labels.join(","));
    }
    out
}

pub fn read_predictions(text: &str) -> Result<Vec<TrackPrediction>> {
    let bad = |n: usize, why: &str| Error::Evaluation(format!("prediction dump line {}: {why}", n + 1));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, scores, labels] = fields[..] else {
            return Err(bad(n, "expected 3 tab-separated fields"));
        };
        let scores: Vec<f64> = scores
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(n, "unparsable score"))?;
        let labels: Vec<bool> = labels
            .split(',')
            .map(|s| match s {
                "1" => Ok(true),
                "0" => Ok(false),
                _ => Err(bad(n, "labels must be 0 or 1")),
            })
            .collect::<Result<_>>()?;
        let (Ok(scores), Ok(labels)) = (
            <[f64; NUM_LABELS]>::try_from(scores),
            <[bool; NUM_LABELS]>::try_from(labels),
        ) else {
            return Err(bad(n, "expected 11 scores and 11 labels"));
        };
        out.push(TrackPrediction {
            track_id: id.to_string(),
            scores,
            labels: Labels::from_bools(labels),
        });
    }
    Ok(out)
}

pub fn save_predictions(predictions: &[TrackPrediction], path: &Path) -> Result<()> {
    std::fs::write(path, write_predictions(predictions)).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<TrackPrediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_predictions(&text)
}
