use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rawinst_core::audio::{
    load_irmas_test, load_irmas_train, load_track, synth_dataset, DatasetManifest, ManifestKind,
    SynthOptions, NUM_FOLDS,
};
use rawinst_core::eval::{
    all_labels, instrument_report_over, load_predictions, predict_manifest, predict_track, save_predictions,
    threshold_sweep, TrackPrediction,
};
use rawinst_core::models::{
    format_count, gradient_check, peek_variant, save_checkpoint, ModelCheck, ModelGraph, Variant,
};
use rawinst_core::tensor::gradcheck::op_gradient_suite;
use rawinst_core::training::{make_folds, train_model, FoldSelection, SegmentSet};
use rawinst_core::{Error, Result, LABEL_CODES, NUM_LABELS};

use crate::config::{LabelScope, RunConfig};
use crate::SynthArgs;

const MANIFEST_FILE: &str = "manifest.tsv";
const TOLERANCE: f64 = 1e-4;

/// Records files written under an output directory and lists them in
/// `outputs.txt` at the end.
struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.dir.join(rel.as_ref());
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.push(rel.as_ref().to_path_buf());
        Ok(p)
    }

    fn write(&mut self, rel: impl AsRef<Path>, text: &str) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    fn finish(mut self) -> Result<()> {
        let mut text = String::new();
        for f in &self.files {
            let _ = writeln!(text, "{}", f.display());
        }
        let _ = writeln!(text, "outputs.txt");
        self.files.clear();
        let p = self.dir.join("outputs.txt");
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

fn ensure_dir(root: &Path) -> Result<()> {
    match fs::metadata(root) {
        Ok(m) if m.is_dir() => Ok(()),
        Ok(_) => Err(Error::Manifest(format!("{} is not a directory", root.display()))),
        Err(e) => Err(Error::io(root, e)),
    }
}

/// A directory with `manifest.tsv` (synthetic sets) or the IRMAS training
/// layout; manifests without folds get them from `seed`.
fn train_manifest(root: &Path, seed: u64) -> Result<DatasetManifest> {
    ensure_dir(root)?;
    let listed = root.join(MANIFEST_FILE);
    if listed.is_file() {
        let mut m = DatasetManifest::read(&listed)?;
        if m.entries.iter().any(|e| e.fold.is_none()) {
            m.assign_folds(NUM_FOLDS, seed);
        }
        Ok(m)
    } else {
        load_irmas_train(root, seed)
    }
}

fn test_manifest(root: &Path) -> Result<DatasetManifest> {
    ensure_dir(root)?;
    let listed = root.join(MANIFEST_FILE);
    if listed.is_file() {
        DatasetManifest::read(&listed)
    } else {
        load_irmas_test(root)
    }
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let variant = cfg.require_model()?;
    cfg.train.validate()?;
    let folds_wanted: Vec<usize> = match cfg.train.fold {
        FoldSelection::All => (0..NUM_FOLDS).collect(),
        FoldSelection::One(k) if k < NUM_FOLDS => vec![k],
        FoldSelection::One(k) => {
            return Err(Error::Config(format!("fold {k} out of range 0..{NUM_FOLDS}")));
        }
    };
    let data = cfg.require_data()?;
    let out_dir = cfg.require_out()?;

    let manifest = train_manifest(data, cfg.train.seed)?;
    let splits = make_folds(&manifest, NUM_FOLDS)?;
    let all: Vec<usize> = (0..manifest.len()).collect();
    let segments = SegmentSet::from_manifest(&manifest, &all)?;
    log::info!("{} files, {} segments", manifest.len(), segments.len());

    let mut out = Outputs::create(out_dir)?;
    out.write("run.cfg", &cfg.to_text())?;
    let mut summary = String::from("fold\tbest_epoch\tbest_val_loss\tepochs\tstopped\n");
    let mut best_losses = Vec::new();
    for &k in &folds_wanted {
        let split = &splits[k];
        let mut in_val = vec![false; manifest.len()];
        split.validation.iter().for_each(|&i| in_val[i] = true);
        let (val_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..segments.len()).partition(|&s| in_val[segments.source(s)]);
        let train_set = segments.select(&train_idx);
        let val_set = segments.select(&val_idx);
        log::info!(
            "fold {k}: {} train / {} validation segments",
            train_set.len(),
            val_set.len()
        );

        let mut graph = ModelGraph::<f32>::build(variant, cfg.train.seed)?;
        let history = train_model(&mut graph, &train_set, &val_set, &cfg.train)?;
        let ckpt = out.path(format!("fold{k}/model.ckpt"))?;
        save_checkpoint(&graph, &ckpt)?;
        out.write(format!("fold{k}/history.tsv"), &history.to_text())?;

        let best = history.epochs[history.best_epoch - 1].val_loss;
        best_losses.push(best);
        let _ = writeln!(
            summary,
            "{k}\t{}\t{best:.6}\t{}\t{}",
            history.best_epoch,
            history.epochs.len(),
            history.stopped_reason.as_str()
        );
    }
    let (mean, std) = mean_std(&best_losses);
    let _ = writeln!(summary, "# mean_best_val_loss\t{mean:.6}\t{std:.6}");
    out.write("summary.tsv", &summary)?;
    print!("{summary}");
    out.finish()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Loads a checkpoint after checking it holds `expected`.
fn checked_checkpoint(path: &Path, expected: Variant) -> Result<ModelGraph<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (found, input_len) = peek_variant(&bytes)?;
    if found != expected {
        return Err(Error::Shape(format!(
            "{} holds a {found} model but --model is {expected}",
            path.display()
        )));
    }
    let mut graph = ModelGraph::<f32>::build_with_input_len(found, 0, input_len)?;
    graph.load_checkpoint_bytes(&bytes)?;
    Ok(graph)
}

fn scope_for(scope: LabelScope, predictions: &[TrackPrediction]) -> Vec<usize> {
    match scope {
        LabelScope::All => all_labels(),
        LabelScope::Active => (0..NUM_LABELS)
            .filter(|&l| predictions.iter().any(|p| p.labels.get(l)))
            .collect(),
    }
}

pub fn eval(cfg: &RunConfig, dump: Option<&Path>, sweep: bool) -> Result<()> {
    let out_dir = cfg.require_out()?;
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie in (0, 1), got {}",
            cfg.threshold
        )));
    }
    let mut out;
    let predictions = match dump {
        Some(path) => {
            let p = load_predictions(path)?;
            out = Outputs::create(out_dir)?;
            p
        }
        None => {
            let variant = cfg.require_model()?;
            let ckpt = cfg
                .checkpoint
                .as_deref()
                .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
            let data = cfg.require_data()?;
            let graph = checked_checkpoint(ckpt, variant)?;
            let manifest = test_manifest(data)?;
            log::info!("scoring {} tracks", manifest.len());
            let p = predict_manifest(&graph, &manifest)?;
            out = Outputs::create(out_dir)?;
            save_predictions(&p, &out.path("predictions.tsv")?)?;
            p
        }
    };
    out.write("run.cfg", &cfg.to_text())?;
    let scope = scope_for(cfg.labels, &predictions);
    let report = instrument_report_over(&predictions, cfg.threshold, &scope)?;
    out.write("report.txt", &report.to_table())?;
    out.write("report.tsv", &report.to_tsv())?;
    if sweep {
        let mut text = String::from("threshold\tf1_micro\tf1_macro\n");
        for (t, micro, macro_) in threshold_sweep(&predictions, &scope)? {
            let _ = writeln!(text, "{t:.2}\t{micro:.6}\t{macro_:.6}");
        }
        out.write("sweep.tsv", &text)?;
    }
    print!("{}", report.to_table());
    out.finish()
}

pub fn predict(wav: &Path, checkpoint: Option<&Path>, model: Option<Variant>, seed: u64) -> Result<()> {
    let graph = match (checkpoint, model) {
        (Some(path), Some(v)) => checked_checkpoint(path, v)?,
        (Some(path), None) => rawinst_core::models::load_checkpoint(path)?,
        (None, Some(v)) => ModelGraph::<f32>::build(v, seed)?,
        (None, None) => return Err(Error::Config("give --checkpoint or --model".into())),
    };
    let clip = load_track(wav)?;
    let p = predict_track(&graph, &clip, Default::default(), &wav.to_string_lossy())?;
    let mut ranked: Vec<(usize, f64)> = p.scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (l, s) in ranked {
        println!("{}:{s:.6}", LABEL_CODES[l]);
    }
    Ok(())
}

pub fn params(model: Variant) -> Result<()> {
    let g = ModelGraph::<f32>::build(model, 0)?;
    println!("{}", g.param_count());
    println!("rounded\t{}", format_count(g.param_count()));
    println!("trainable\t{}", g.trainable_param_count());
    Ok(())
}

pub fn gradcheck(seeds: u64, ops_only: bool) -> Result<()> {
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    let mut record = |label: String, err: f64| {
        worst = worst.max(err);
        let verdict = if err < TOLERANCE { "ok" } else { "FAIL" };
        println!("{verdict}\t{label}\t{err:.3e}");
        if err >= TOLERANCE {
            failed.push(label);
        }
    };
    for seed in 0..seeds {
        for r in op_gradient_suite(seed)? {
            record(format!("{} (seed {seed})", r.op), r.max_rel_err());
        }
    }
    if !ops_only {
        for v in Variant::ALL {
            let r = gradient_check(v, 0, &ModelCheck::reduced(v))?;
            record(format!("model {v}"), r.max_rel_err());
        }
    }
    println!("max relative error {worst:.3e} (tolerance {TOLERANCE:e})");
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "{} gradient checks failed: {}",
            failed.len(),
            failed.join(", ")
        )))
    }
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut opts = SynthOptions::new(a.tracks, a.classes, a.seed);
    opts.seconds = a.seconds;
    opts.max_polyphony = if a.mono { 1 } else { a.max_polyphony };
    opts.kind = match a.kind.as_str() {
        "train" => ManifestKind::TrainSegments,
        "test" => ManifestKind::TestTracks,
        k => {
            return Err(Error::Config(format!(
                "kind must be 'train' or 'test', got '{k}'"
            )))
        }
    };
    let m = synth_dataset(&a.out, &opts)?;
    println!("{} tracks written to {}", m.len(), a.out.display());
    Ok(())
}
