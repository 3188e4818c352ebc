use crate::audio::{load_track, segment_clip, DatasetManifest, Labels, Segment};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::{NUM_LABELS, SEGMENT_LEN};

/// Normalized training segments held in memory, each tagged with the index
/// of the manifest entry (source file) it was cut from.
#[derive(Clone, Debug, Default)]
pub struct SegmentSet {
    waveforms: Vec<f32>,
    labels: Vec<Labels>,
    sources: Vec<usize>,
}

impl SegmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, segment: &Segment, source: usize) -> Result<()> {
        if segment.waveform.len() != SEGMENT_LEN {
            return Err(Error::shape(format!(
                "segment of {} samples, expected {SEGMENT_LEN}",
                segment.waveform.len()
            )));
        }
        self.waveforms.extend_from_slice(&segment.waveform);
        self.labels.push(segment.labels);
        self.sources.push(source);
        Ok(())
    }

    /// Loads, preprocesses and segments the given manifest entries.
    pub fn from_manifest(manifest: &DatasetManifest, entries: &[usize]) -> Result<Self> {
        let mut set = SegmentSet::new();
        for &i in entries {
            let entry = manifest
                .entries
                .get(i)
                .ok_or_else(|| Error::Manifest(format!("entry {i} out of range")))?;
            let path = manifest.full_path(entry);
            let clip = load_track(&path)?;
            for seg in segment_clip(&clip, entry.labels, &entry.path.to_string_lossy())? {
                set.push(&seg, i)?;
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn waveform(&self, i: usize) -> &[f32] {
        &self.waveforms[i * SEGMENT_LEN..(i + 1) * SEGMENT_LEN]
    }

    pub fn labels(&self, i: usize) -> Labels {
        self.labels[i]
    }

    /// Manifest entry the segment came from.
    pub fn source(&self, i: usize) -> usize {
        self.sources[i]
    }

    /// Subset by segment index.
    pub fn select(&self, idx: &[usize]) -> SegmentSet {
        let mut out = SegmentSet::new();
        for &i in idx {
            out.waveforms.extend_from_slice(self.waveform(i));
            out.labels.push(self.labels[i]);
            out.sources.push(self.sources[i]);
        }
        out
    }

    /// `([b, 1, 22050], [b, 11])` tensors for the given segments.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let mut x = Vec::with_capacity(idx.len() * SEGMENT_LEN);
        let mut y = Vec::with_capacity(idx.len() * NUM_LABELS);
        for &i in idx {
            x.extend_from_slice(self.waveform(i));
            y.extend_from_slice(&self.labels[i].to_f32());
        }
        (
            Tensor::new(vec![idx.len(), 1, SEGMENT_LEN], x).expect("sized"),
            Tensor::new(vec![idx.len(), NUM_LABELS], y).expect("sized"),
        )
    }
}

/// Manifest entry indices on each side of one cross-validation split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Splits at file level by the manifest's fold column: split `i` validates
/// on the files of fold `i` and trains on all others.
pub fn make_folds(manifest: &DatasetManifest, k: usize) -> Result<Vec<FoldSplit>> {
    let mut folds = Vec::with_capacity(manifest.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        let f = e.fold.ok_or_else(|| {
            Error::Config(format!("manifest entry {} ({}) has no fold", i, e.path.display()))
        })?;
        folds.push(f);
    }
    let assigned = folds.iter().max().map_or(0, |m| m + 1);
    if assigned != k {
        return Err(Error::Config(format!(
            "requested {k} folds but the manifest assigns {assigned}"
        )));
    }
    Ok((0..k)
        .map(|fold| {
            let (validation, train): (Vec<usize>, Vec<usize>) =
                (0..folds.len()).partition(|&i| folds[i] == fold);
            FoldSplit {
                fold,
                train,
                validation,
            }
        })
        .collect())
}
