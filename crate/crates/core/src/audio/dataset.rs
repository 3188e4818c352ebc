//! Dataset manifests for the IRMAS layouts and their text serialization.
//!
//! One entry per line: `<relative-path>\t<comma-separated-codes>\t<fold>`,
//! with `-` for an unassigned fold. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::Labels;
use crate::error::{Error, Result};
use crate::rng;
use crate::LABEL_CODES;

pub const NUM_FOLDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifestKind {
    TrainSegments,
    TestTracks,
}

impl ManifestKind {
    fn tag(self) -> &'static str {
        match self {
            ManifestKind::TrainSegments => "train-segments",
            ManifestKind::TestTracks => "test-tracks",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// Path relative to the manifest root.
    pub path: PathBuf,
    pub labels: Labels,
    pub fold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub label_names: Vec<String>,
    pub kind: ManifestKind,
}

impl DatasetManifest {
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>, kind: ManifestKind) -> Self {
        DatasetManifest {
            root,
            entries,
            label_names: LABEL_CODES.iter().map(|s| s.to_string()).collect(),
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn full_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Shuffles entries with the seeded fold stream and deals folds
    /// `0..k` round-robin.
    pub fn assign_folds(&mut self, k: usize, seed: u64) {
        let mut rng = rng::stream(seed, rng::FOLDS);
        self.entries.shuffle(&mut rng);
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.fold = Some(i % k);
        }
    }

    pub fn fold_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; NUM_FOLDS];
        for f in self.entries.iter().filter_map(|e| e.fold) {
            if f >= h.len() {
                h.resize(f + 1, 0);
            }
            h[f] += 1;
        }
        h
    }

    /// Number of label columns that occur anywhere in the manifest, counted
    /// as the prefix up to the highest active label.
    pub fn active_label_count(&self) -> usize {
        self.entries
            .iter()
            .filter_map(|e| (0..LABEL_CODES.len()).rev().find(|&i| e.labels.get(i)))
            .max()
            .map_or(0, |i| i + 1)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# rawinst manifest kind={}\n", self.kind.tag());
        for e in &self.entries {
            let fold = e.fold.map_or_else(|| "-".to_string(), |f| f.to_string());
            let path = e.path.to_string_lossy().replace('\\', "/");
            writeln!(s, "{path}\t{}\t{fold}", e.labels).unwrap();
        }
        s
    }

    pub fn parse(text: &str, root: PathBuf) -> Result<Self> {
        let mut kind = ManifestKind::TrainSegments;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if let Some(comment) = line.strip_prefix('#') {
                if comment.contains("kind=test-tracks") {
                    kind = ManifestKind::TestTracks;
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, codes, fold] = fields[..] else {
                return Err(Error::Manifest(format!(
                    "line {}: expected 3 tab-separated fields, got {}",
                    n + 1,
                    fields.len()
                )));
            };
            let labels = Labels::from_codes(codes.split(',').filter(|c| !c.is_empty()))?;
            let fold = match fold {
                "-" => None,
                f => {
                    let v: usize = f
                        .parse()
                        .map_err(|_| Error::Manifest(format!("line {}: bad fold `{f}`", n + 1)))?;
                    if v >= NUM_FOLDS {
                        return Err(Error::Manifest(format!(
                            "line {}: fold {v} outside 0..{NUM_FOLDS}",
                            n + 1
                        )));
                    }
                    Some(v)
                }
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(path),
                labels,
                fold,
            });
        }
        Ok(DatasetManifest::new(root, entries, kind))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; entry paths resolve against the file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }
}

fn sorted_dir(path: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut v: Vec<fs::DirEntry> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    v.sort_by_key(|e| e.file_name());
    Ok(v)
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Loads the IRMAS training layout: one directory per instrument code.
/// Entries are shuffled with `seed` and dealt into 5 folds.
pub fn load_irmas_train(root: &Path, seed: u64) -> Result<DatasetManifest> {
    let mut dirs = Vec::new();
    for e in sorted_dir(root)? {
        if e.path().is_dir() {
            dirs.push(e.file_name().to_string_lossy().to_string());
        }
    }
    let expected: Vec<String> = LABEL_CODES.iter().map(|s| s.to_string()).collect();
    if dirs != expected {
        let missing: Vec<&String> = expected.iter().filter(|c| !dirs.contains(c)).collect();
        let extra: Vec<&String> = dirs.iter().filter(|d| !expected.contains(d)).collect();
        return Err(Error::Manifest(format!(
            "{}: expected exactly the instrument directories {} (missing: {missing:?}, unexpected: {extra:?})",
            root.display(),
            LABEL_CODES.join(",")
        )));
    }
    let mut entries = Vec::new();
    for (i, code) in LABEL_CODES.iter().enumerate() {
        for e in sorted_dir(&root.join(code))? {
            let p = e.path();
            if p.is_file() && is_wav(&p) {
                entries.push(ManifestEntry {
                    path: PathBuf::from(code).join(e.file_name()),
                    labels: Labels::one_hot(i),
                    fold: None,
                });
            }
        }
    }
    let mut m = DatasetManifest::new(root.to_path_buf(), entries, ManifestKind::TrainSegments);
    m.assign_folds(NUM_FOLDS, seed);
    Ok(m)
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in sorted_dir(dir)? {
        let p = e.path();
        if p.is_dir() {
            collect_wavs(&p, out)?;
        } else if is_wav(&p) {
            out.push(p);
        }
    }
    Ok(())
}

/// Loads the IRMAS test layout: `(name.wav, name.txt)` pairs anywhere under
/// `root`, the text file listing one instrument code per line.
pub fn load_irmas_test(root: &Path) -> Result<DatasetManifest> {
    let mut wavs = Vec::new();
    collect_wavs(root, &mut wavs)?;
    let mut entries = Vec::with_capacity(wavs.len());
    for wav in wavs {
        let txt = wav.with_extension("txt");
        let text = fs::read_to_string(&txt)
            .map_err(|_| Error::Manifest(format!("{} has no label file {}", wav.display(), txt.display())))?;
        let labels = Labels::from_codes(text.lines().map(str::trim).filter(|l| !l.is_empty()))
            .map_err(|e| Error::Manifest(format!("{}: {e}", txt.display())))?;
        entries.push(ManifestEntry {
            path: wav.strip_prefix(root).unwrap_or(&wav).to_path_buf(),
            labels,
            fold: None,
        });
    }
    Ok(DatasetManifest::new(
        root.to_path_buf(),
        entries,
        ManifestKind::TestTracks,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut m = DatasetManifest::new(
            PathBuf::from("/data"),
            vec![
                ManifestEntry {
                    path: "pia/a.wav".into(),
                    labels: Labels::one_hot(6),
                    fold: Some(3),
                },
                ManifestEntry {
                    path: "x/b c.wav".into(),
                    labels: Labels::from_codes(["gel", "voi"]).unwrap(),
                    fold: None,
                },
            ],
            ManifestKind::TestTracks,
        );
        let text = m.to_text();
        assert!(text.contains("pia/a.wav\tpia\t3\n"));
        assert!(text.contains("x/b c.wav\tgel,voi\t-\n"));
        let back = DatasetManifest::parse(&text, PathBuf::from("/data")).unwrap();
        assert_eq!(back, m);
        m.kind = ManifestKind::TrainSegments;
        assert_eq!(
            DatasetManifest::parse(&m.to_text(), "/data".into()).unwrap().kind,
            m.kind
        );
    }

    #[test]
    fn round_robin_fold_histogram() {
        let entries = (0..6705)
            .map(|i| ManifestEntry {
                path: format!("{i}.wav").into(),
                labels: Labels::one_hot(i % 11),
                fold: None,
            })
            .collect();
        let mut m = DatasetManifest::new(PathBuf::new(), entries, ManifestKind::TrainSegments);
        m.assign_folds(NUM_FOLDS, 1);
        assert_eq!(m.fold_histogram(), vec![1341; 5]);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(DatasetManifest::parse("a.wav\tpia\n", PathBuf::new()).is_err());
        assert!(DatasetManifest::parse("a.wav\tpia\t7\n", PathBuf::new()).is_err());
        assert!(DatasetManifest::parse("a.wav\tzzz\t1\n", PathBuf::new()).is_err());
    }
}
