use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::Array2;
use rayon::prelude::*;
use somnoscat::bilstm::{
    ensemble_predict, feature_score, load_model, select_top_k, store_loss_trace, store_model, train,
    BilstmModel, TrainConfig, TrainSequence, TrainedModel,
};
use somnoscat::evaluate::{evaluate, evaluate_records, expand, fold_assignment, EvalReport, FoldTable, LabelledRecord};
use somnoscat::features::{load_features, store_features, Extractor, FeatureMatrix};
use somnoscat::preprocess::window_labels;
use somnoscat::record_io::{
    generate_synthetic, load_annotations, load_predictions, load_record, store_annotations, store_predictions,
    store_record, ArousalWindow, PredictionTrack, PsgRecord, ANNOTATION_FILE, HEADER_FILE, PREDICTION_FILE,
};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const RECORDS_DIR: &str = "records";
pub const FEATURES_DIR: &str = "features";
pub const MODELS_DIR: &str = "models";
pub const EVAL_DIR: &str = "eval";
pub const PLOTS_DIR: &str = "plots";
pub const ENSEMBLE_FILE: &str = "ensemble.txt";
pub const FEATURE_EXT: &str = "feat";

/// Resolved configuration plus the directory every artifact lives under.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub data_dir: PathBuf,
}

impl Context {
    pub fn records_dir(&self) -> PathBuf {
        self.data_dir.join(RECORDS_DIR)
    }

    pub fn features_dir(&self) -> PathBuf {
        self.data_dir.join(FEATURES_DIR)
    }

    pub fn models_dir(&self) -> PathBuf {
        self.data_dir.join(MODELS_DIR)
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.data_dir.join(EVAL_DIR)
    }

    fn pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.jobs)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Sorted names of the subdirectories of `dir` that hold a record header.
pub fn list_records(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.path().join(HEADER_FILE).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

fn list_feature_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == FEATURE_EXT) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Arousal layout of synthetic record `index`: every full 60 s block gets a
/// target window whose start moves with the record, and odd blocks also get
/// a 5 s non-target window at their end.
pub fn synth_windows(index: usize, duration_s: f64, target_len_s: f64) -> Vec<ArousalWindow> {
    let block = 60.0;
    let mut out = Vec::new();
    let mut k = 0usize;
    while (k as f64) * block < duration_s {
        let start = k as f64 * block;
        let avail = (duration_s - start).min(block);
        let mut offset = 10.0 + 5.0 * ((index + k) % 6) as f64;
        if offset + target_len_s > avail {
            offset = (avail - target_len_s - 5.0).max(0.0);
        }
        let target_end = offset + target_len_s;
        if target_end <= avail {
            out.push(ArousalWindow::target(start + offset, start + target_end));
        }
        if k % 2 == 1 && avail - target_end >= 10.0 {
            out.push(ArousalWindow::non_target(start + avail - 5.0, start + avail));
        }
        k += 1;
    }
    out
}

pub fn synth_id(index: usize) -> String {
    format!("synth_{index:03}")
}

/// Writes `synth.records` synthetic records with annotations.
pub fn cmd_synth(ctx: &Context) -> CliResult<Vec<String>> {
    let s = &ctx.config.synth;
    if s.records == 0 || !(s.target_len_s > 0.0) {
        return Err(CliError::Config("synth.records and synth.target_len_s must be positive".into()));
    }
    let root = ctx.records_dir();
    let mut ids = Vec::with_capacity(s.records);
    for i in 0..s.records {
        let id = synth_id(i);
        let windows = synth_windows(i, s.duration_s, s.target_len_s);
        let (record, labels) = generate_synthetic(ctx.config.seed.wrapping_add(i as u64), s.duration_s, &windows)?;
        let record = PsgRecord::new(id.clone(), record.channels().to_vec())?;
        let dir = root.join(&id);
        store_record(&record, &dir)?;
        store_annotations(&labels, dir.join(ANNOTATION_FILE))?;
        info!("synth {id}: {} samples, {} arousal windows", record.len(), windows.len());
        ids.push(id);
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractSummary {
    /// `(record id, rows, cols)` of every matrix written.
    pub written: Vec<(String, usize, usize)>,
    pub skipped: Vec<String>,
}

/// Featurizes every record in parallel; records that fail are logged and skipped.
pub fn cmd_extract(ctx: &Context) -> CliResult<ExtractSummary> {
    let set = ctx.config.feature_set()?;
    let extractor = Extractor::new(set, ctx.config.scatter_config()?)?;
    let ids = list_records(&ctx.records_dir())?;
    let out_dir = ctx.features_dir();
    create_dir(&out_dir)?;
    info!("extract {set}: {} records, {} columns", ids.len(), extractor.dim());

    let one = |id: &String| -> CliResult<FeatureMatrix> {
        let record = load_record(ctx.records_dir().join(id))?;
        let m = extractor.extract(&record)?;
        store_features(&m, out_dir.join(format!("{id}.{FEATURE_EXT}")))?;
        Ok(m)
    };
    let results: Vec<CliResult<FeatureMatrix>> = ctx.pool()?.install(|| ids.par_iter().map(one).collect());

    let mut summary = ExtractSummary {
        written: Vec::new(),
        skipped: Vec::new(),
    };
    for (id, r) in ids.iter().zip(results) {
        match r {
            Ok(m) => {
                info!("extract {id}: {} x {}", m.rows(), m.cols());
                summary.written.push((id.clone(), m.rows(), m.cols()));
            }
            Err(e) => {
                warn!("skipping {id}: {e}");
                summary.skipped.push(id.clone());
            }
        }
    }
    if summary.written.is_empty() {
        return Err(CliError::NoRecords(ctx.records_dir()));
    }
    Ok(summary)
}

fn to_array(m: &FeatureMatrix) -> Array2<f64> {
    Array2::from_shape_vec((m.rows(), m.cols()), m.data().to_vec()).expect("matrix shape is validated")
}

/// Feature matrices joined with their annotations, sorted by record id.
fn load_labelled(ctx: &Context) -> CliResult<(Vec<String>, Vec<String>, Vec<LabelledRecord>)> {
    let expected = ctx.config.feature_set()?.dim(&ctx.config.scatter_config()?);
    let files = list_feature_files(&ctx.features_dir())?;
    let mut columns: Option<Vec<String>> = None;
    let mut ids = Vec::new();
    let mut records = Vec::new();
    for path in files {
        let m = load_features(&path)?;
        if m.cols() != expected {
            return Err(CliError::Config(format!(
                "{} has {} columns but feature_set {} needs {expected}",
                path.display(),
                m.cols(),
                ctx.config.feature_set
            )));
        }
        match &columns {
            Some(c) if c != m.columns() => {
                return Err(CliError::Config(format!("{} has different column names", path.display())));
            }
            None => columns = Some(m.columns().to_vec()),
            _ => {}
        }
        let ann_path = ctx.records_dir().join(m.record_id()).join(ANNOTATION_FILE);
        if !ann_path.is_file() {
            warn!("skipping {}: no annotations", m.record_id());
            continue;
        }
        let track = load_annotations(&ann_path)?;
        let windows = window_labels(&track)?.labels;
        if windows.len() != m.rows() {
            return Err(somnoscat::Error::LengthMismatch {
                what: format!("window labels of {}", m.record_id()),
                expected: m.rows(),
                got: windows.len(),
            }
            .into());
        }
        ids.push(m.record_id().to_string());
        records.push(LabelledRecord {
            features: to_array(&m),
            window_labels: windows,
            sample_labels: track.labels().to_vec(),
        });
    }
    if records.is_empty() {
        return Err(CliError::NoRecords(ctx.features_dir()));
    }
    Ok((ids, columns.unwrap_or_default(), records))
}

/// Trains on `records`, optionally pre-training on all columns and
/// retraining on the `select_k` best-scoring ones.
fn fit(ctx: &Context, records: &[&LabelledRecord], cfg: &TrainConfig) -> CliResult<TrainedModel> {
    let seqs: Vec<TrainSequence> = records
        .iter()
        .map(|r| r.training_sequence())
        .collect::<somnoscat::Result<Vec<_>>>()?
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect();
    let net = ctx.config.network_config();
    if !ctx.config.train.pretrain_select {
        return Ok(train(&seqs, net, cfg, None)?);
    }
    let pre = train(&seqs, net, cfg, None)?;
    let top = select_top_k(&feature_score(&pre.model.network), ctx.config.train.select_k)?;
    info!("pre-training done (loss {:.4}); retraining on {} columns", pre.model.final_loss, top.len());
    Ok(train(&seqs, net, cfg, Some(top))?)
}

fn write_selection(path: &Path, model: &BilstmModel, names: &[String]) -> CliResult<()> {
    if let Some(cols) = &model.columns {
        let text: String = cols.iter().map(|&c| format!("{}\n", names[c])).collect();
        write_text(path, &text)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoints: Vec<PathBuf>,
    /// Held-out results when cross-validating.
    pub cv: Option<FoldTable>,
}

/// Single model on every record, or one model per fold with held-out scores.
pub fn cmd_train(ctx: &Context) -> CliResult<TrainSummary> {
    let cfg = ctx.config.train_config()?;
    let (ids, names, records) = load_labelled(ctx)?;
    let dir = ctx.models_dir();
    create_dir(&dir)?;
    let k = ctx.config.train.folds;

    let mut checkpoints = Vec::new();
    let mut cv = None;
    if k <= 1 {
        info!("training on {} records", records.len());
        let all: Vec<&LabelledRecord> = records.iter().collect();
        let run = fit(ctx, &all, &cfg)?;
        store_model(&run.model, dir.join("model.ckpt"))?;
        store_loss_trace(&run.loss_trace, dir.join("loss.csv"))?;
        write_selection(&dir.join("selection.txt"), &run.model, &names)?;
        info!("final loss {:.6} (restart {})", run.model.final_loss, run.restart);
        checkpoints.push(PathBuf::from("model.ckpt"));
    } else {
        let folds = fold_assignment(records.len(), k, cfg.seed)?;
        let mut reports = Vec::with_capacity(k);
        for (f, held) in folds.iter().enumerate() {
            let train_set: Vec<&LabelledRecord> = (0..records.len())
                .filter(|i| !held.contains(i))
                .map(|i| &records[i])
                .collect();
            let fold_cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(f as u64 + 1),
                ..cfg
            };
            let run = fit(ctx, &train_set, &fold_cfg)?;
            let held_records: Vec<&LabelledRecord> = held.iter().map(|&i| &records[i]).collect();
            let report = evaluate_records(std::slice::from_ref(&run.model), &held_records)?;
            let held_ids: Vec<&str> = held.iter().map(|&i| ids[i].as_str()).collect();
            info!(
                "fold {}: held out {:?}, AUPRC {:.4}, AUROC {:.4}",
                f + 1,
                held_ids,
                report.auprc,
                report.auroc
            );
            let name = format!("fold{}.ckpt", f + 1);
            store_model(&run.model, dir.join(&name))?;
            store_loss_trace(&run.loss_trace, dir.join(format!("loss_fold{}.csv", f + 1)))?;
            write_selection(&dir.join(format!("selection_fold{}.txt", f + 1)), &run.model, &names)?;
            checkpoints.push(PathBuf::from(name));
            reports.push(report);
        }
        let table = FoldTable { folds: reports };
        write_text(&dir.join("cv.txt"), &table.to_text())?;
        write_text(&dir.join("cv.csv"), &table.to_csv())?;
        cv = Some(table);
    }
    let manifest: String = checkpoints.iter().map(|p| format!("{}\n", p.display())).collect();
    write_text(&dir.join(ENSEMBLE_FILE), &manifest)?;
    Ok(TrainSummary { checkpoints, cv })
}

/// Checkpoints listed in the ensemble manifest.
pub fn load_ensemble(models_dir: &Path) -> CliResult<Vec<BilstmModel>> {
    let manifest = models_dir.join(ENSEMBLE_FILE);
    if !manifest.is_file() {
        return Err(CliError::MissingArtifact(manifest));
    }
    let text = fs::read_to_string(&manifest).map_err(|e| CliError::io(&manifest, e))?;
    let models: Vec<BilstmModel> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| load_model(models_dir.join(l.trim())))
        .collect::<somnoscat::Result<_>>()?;
    if models.is_empty() {
        return Err(somnoscat::Error::EmptyEnsemble.into());
    }
    Ok(models)
}

/// Writes each record's expanded ensemble probabilities to its `pred.f32`.
/// Returns `(record id, windows, samples)` per record.
pub fn cmd_predict(ctx: &Context) -> CliResult<Vec<(String, usize, usize)>> {
    let models = load_ensemble(&ctx.models_dir())?;
    let files = list_feature_files(&ctx.features_dir())?;
    let one = |path: &PathBuf| -> CliResult<(String, usize, usize)> {
        let m = load_features(path)?;
        let probs = expand(&ensemble_predict(&models, to_array(&m).view())?);
        let dir = ctx.records_dir().join(m.record_id());
        create_dir(&dir)?;
        store_predictions(&PredictionTrack::from_f64(&probs)?, dir.join(PREDICTION_FILE))?;
        Ok((m.record_id().to_string(), m.rows(), probs.len()))
    };
    let done: Vec<(String, usize, usize)> = ctx
        .pool()?
        .install(|| files.par_iter().map(one).collect::<CliResult<_>>())?;
    for (id, w, n) in &done {
        info!("predict {id}: {w} windows, {n} samples");
    }
    if done.is_empty() {
        return Err(CliError::NoRecords(ctx.features_dir()));
    }
    Ok(done)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    /// Per record; `None` when a class is absent from that record.
    pub records: Vec<(String, Option<EvalReport>)>,
    pub pooled: EvalReport,
}

impl EvaluateSummary {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<16}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
            "record", "AUPRC", "AUROC", "pos", "neg", "masked"
        );
        let row = |name: &str, r: &EvalReport| {
            format!(
                "{:<16}{:>10.4}{:>10.4}{:>10}{:>10}{:>10}\n",
                name, r.auprc, r.auroc, r.n_pos, r.n_neg, r.n_masked
            )
        };
        for (id, r) in &self.records {
            match r {
                Some(r) => s.push_str(&row(id, r)),
                None => s.push_str(&format!("{id:<16}{:>10}{:>10}\n", "n/a", "n/a")),
            }
        }
        s.push_str(&row("pooled", &self.pooled));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("record,auprc,auroc,n_pos,n_neg,n_masked\n");
        let row = |name: &str, r: &EvalReport| {
            format!("{name},{:?},{:?},{},{},{}\n", r.auprc, r.auroc, r.n_pos, r.n_neg, r.n_masked)
        };
        for (id, r) in &self.records {
            match r {
                Some(r) => s.push_str(&row(id, r)),
                None => s.push_str(&format!("{id},,,,,\n")),
            }
        }
        s.push_str(&row("pooled", &self.pooled));
        s
    }
}

/// Scores every record that has both annotations and predictions; the
/// annotation tail past the last full window is not scored.
pub fn cmd_evaluate(ctx: &Context) -> CliResult<EvaluateSummary> {
    let mut records = Vec::new();
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for id in list_records(&ctx.records_dir())? {
        let dir = ctx.records_dir().join(&id);
        let (ann, pred) = (dir.join(ANNOTATION_FILE), dir.join(PREDICTION_FILE));
        if !ann.is_file() || !pred.is_file() {
            warn!("skipping {id}: needs {ANNOTATION_FILE} and {PREDICTION_FILE}");
            continue;
        }
        let track = load_annotations(&ann)?;
        let probs: Vec<f64> = load_predictions(&pred)?.probs().iter().map(|&p| p as f64).collect();
        if probs.len() > track.len() {
            return Err(somnoscat::Error::LengthMismatch {
                what: format!("predictions of {id}"),
                expected: track.len(),
                got: probs.len(),
            }
            .into());
        }
        let y = &track.labels()[..probs.len()];
        let report = match evaluate(&probs, y) {
            Ok(r) => Some(r),
            Err(somnoscat::Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e.into()),
        };
        scores.extend_from_slice(&probs);
        labels.extend_from_slice(y);
        records.push((id, report));
    }
    if records.is_empty() {
        return Err(CliError::NoRecords(ctx.records_dir()));
    }
    let summary = EvaluateSummary {
        records,
        pooled: evaluate(&scores, &labels)?,
    };
    let dir = ctx.eval_dir();
    create_dir(&dir)?;
    write_text(&dir.join("report.txt"), &summary.to_text())?;
    write_text(&dir.join("report.csv"), &summary.to_csv())?;
    Ok(summary)
}

/// Writes `filterbank.csv` and `filterbank.svg` into `out_dir`.
pub fn cmd_plot_filterbank(out_dir: &Path) -> CliResult<(PathBuf, PathBuf)> {
    create_dir(out_dir)?;
    let net = somnoscat::scattering::ScatteringNet::standard();
    let curves = crate::plot::filter_curves(&net);
    let csv = out_dir.join("filterbank.csv");
    let svg = out_dir.join("filterbank.svg");
    write_text(&csv, &crate::plot::curves_csv(&curves))?;
    write_text(&svg, &crate::plot::curves_svg(&net, &curves))?;
    Ok((csv, svg))
}
