//! The subcommands as library calls. Each run lives in
//! `{output.dir}/{config hash}-s{seed}`:
//!
//! | file | written by |
//! |---|---|
//! | `config.txt`, `split.json` | `train` (also `synth`) |
//! | `data.csv` | `synth` |
//! | `checkpoint.txt`, `record.json`, `epochs.csv`, `diagnostics.csv` | `train` |
//! | `stream.csv`, `truth.csv`, `stream_store.txt` | `stream` |
//! | `report.json` | `eval` |

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ltc_core::datakit::{make_split, synth_seeded, Dataset, OcdSplit};
use ltc_core::evalkit::{evaluate, EvalReport, StreamResult};
use ltc_core::pipeline;

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig, KEYS};
use crate::error::{CliError, Result};
use crate::io;
use crate::report::{self, ReportJson, RunRecordJson, SplitManifest, SummaryRow};

pub const CONFIG_FILE: &str = "config.txt";
pub const SPLIT_FILE: &str = "split.json";
pub const DATA_FILE: &str = "data.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const RECORD_FILE: &str = "record.json";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const STREAM_FILE: &str = "stream.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const STREAM_STORE_FILE: &str = "stream_store.txt";
pub const REPORT_FILE: &str = "report.json";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data.source {
        DataSource::Synthetic => Ok(synth_seeded(&cfg.synthetic_spec())?),
        DataSource::Csv(path) => io::load_embeddings_csv(path),
    }
}

pub fn build_split(cfg: &RunConfig) -> Result<OcdSplit> {
    let data = load_dataset(cfg)?;
    Ok(make_split(&data, cfg.data.synth.k_known, cfg.data.train_fraction, cfg.seed)?)
}

fn manifest(cfg: &RunConfig, split: &OcdSplit) -> SplitManifest {
    SplitManifest::new(cfg.get("data.source").unwrap_or_default(), split)
}

fn write_run_header(cfg: &RunConfig, split: &OcdSplit, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.render()).map_err(|e| CliError::io(&path, e))?;
    report::write_json(&dir.join(SPLIT_FILE), &manifest(cfg, split))
}

/// Writes the dataset as an embeddings CSV (to `out`, or `data.csv` in the
/// run directory) plus the split manifest. Returns the CSV path.
pub fn synth(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let split = make_split(&data, cfg.data.synth.k_known, cfg.data.train_fraction, cfg.seed)?;
    let dir = cfg.run_dir();
    write_run_header(cfg, &split, &dir)?;
    let path = out.map_or_else(|| dir.join(DATA_FILE), Path::to_path_buf);
    io::save_embeddings_csv(&path, &data)?;
    Ok(path)
}

pub fn train(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let split = build_split(cfg)?;
    let dir = cfg.run_dir();
    write_run_header(cfg, &split, &dir)?;
    let t0 = Instant::now();
    let (model, record) = pipeline::train(&split, &cfg.train_config())?;
    let train_s = t0.elapsed().as_secs_f64();
    Checkpoint {
        params: model.params,
        store: model.store,
        tau: model.threshold.tau,
    }
    .save(&dir.join(CHECKPOINT_FILE))?;
    io::save_epochs_csv(&dir.join(EPOCHS_FILE), &record.epochs)?;
    io::save_diagnostics_csv(&dir.join(DIAGNOSTICS_FILE), &record.diagnostics)?;
    report::write_json(
        &dir.join(RECORD_FILE),
        &RunRecordJson::new(cfg.hash(), cfg.seed, &record, train_s),
    )?;
    Ok(dir)
}

fn update_record(dir: &Path, f: impl FnOnce(&mut RunRecordJson)) -> Result<()> {
    let path = dir.join(RECORD_FILE);
    if path.exists() {
        let mut rec: RunRecordJson = report::read_json(&path)?;
        f(&mut rec);
        report::write_json(&path, &rec)?;
    }
    Ok(())
}

/// Streams the query set through the trained checkpoint of this config.
pub fn stream(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    let ck = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
    let split = build_split(cfg)?;
    let manifest_path = dir.join(SPLIT_FILE);
    if manifest_path.exists() {
        let saved: SplitManifest = report::read_json(&manifest_path)?;
        if saved != manifest(cfg, &split) {
            return Err(CliError::Format(format!(
                "{}: rebuilt split differs from the one used for training",
                manifest_path.display()
            )));
        }
    }
    let t0 = Instant::now();
    let out = pipeline::run_stream(&ck.params, &ck.store, ck.tau, &split)?;
    let stream_s = t0.elapsed().as_secs_f64();
    io::save_stream_csv(&dir.join(STREAM_FILE), &out.records)?;
    io::save_truth_csv(&dir.join(TRUTH_FILE), &io::truth_rows(&split))?;
    Checkpoint {
        params: ck.params,
        store: out.store,
        tau: ck.tau,
    }
    .save(&dir.join(STREAM_STORE_FILE))?;
    update_record(&dir, |r| r.timings.stream_s = Some(stream_s))?;
    Ok(dir)
}

/// Scores a stream CSV against a truth CSV. Ids must agree row by row.
pub fn evaluate_files(stream_csv: &Path, truth_csv: &Path) -> Result<EvalReport> {
    let records = io::load_stream_csv(stream_csv)?;
    let truth = io::load_truth_csv(truth_csv)?;
    if records.len() != truth.len() {
        return Err(CliError::Format(format!(
            "{} has {} rows but {} has {}",
            stream_csv.display(),
            records.len(),
            truth_csv.display(),
            truth.len()
        )));
    }
    if let Some((r, t)) = records.iter().zip(&truth).find(|(r, t)| r.id != t.id) {
        return Err(CliError::Format(format!(
            "id mismatch: stream has {} where truth has {}",
            r.id, t.id
        )));
    }
    let old: BTreeSet<usize> = truth.iter().filter(|t| t.is_old).map(|t| t.label).collect();
    let classes: BTreeSet<usize> = truth.iter().map(|t| t.label).collect();
    let result = StreamResult::new(
        truth.iter().map(|t| t.label).collect(),
        records.iter().map(|r| r.prediction).collect(),
        old,
        classes.len(),
    )?;
    Ok(evaluate(&result)?)
}

/// Evaluates the run directory of this config and writes `report.json`.
pub fn eval(cfg: &RunConfig) -> Result<ReportJson> {
    let dir = cfg.run_dir();
    let t0 = Instant::now();
    let rep = ReportJson::from(&evaluate_files(&dir.join(STREAM_FILE), &dir.join(TRUTH_FILE))?);
    let eval_s = t0.elapsed().as_secs_f64();
    report::write_json(&dir.join(REPORT_FILE), &rep)?;
    update_record(&dir, |r| {
        r.report = Some(rep.clone());
        r.timings.eval_s = Some(eval_s);
    })?;
    Ok(rep)
}

/// `train`, `stream` and `eval` in sequence.
pub fn run(cfg: &RunConfig) -> Result<ReportJson> {
    train(cfg)?;
    stream(cfg)?;
    eval(cfg)
}

/// One full run per value of `axis`, concurrently on up to `jobs` threads.
/// Rows come back in the order of `values`.
pub fn sweep(cfg: &RunConfig, axis: &str, values: &[String], jobs: usize) -> Result<Vec<SummaryRow>> {
    if !KEYS.contains(&axis) || axis == "output.dir" {
        return Err(CliError::config(format!("cannot sweep over {axis:?}")));
    }
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(axis, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<ReportJson>>> = (0..configs.len()).map(|_| None).collect();
    for (chunk_cfgs, chunk_out) in configs.chunks(jobs).zip(results.chunks_mut(jobs)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk_cfgs.iter().map(|c| s.spawn(move || run(c))).collect();
            for (slot, h) in chunk_out.iter_mut().zip(handles) {
                *slot = Some(h.join().unwrap_or_else(|_| Err(CliError::Format("run panicked".into()))));
            }
        });
    }
    values
        .iter()
        .zip(results)
        .map(|(v, r)| {
            Ok(SummaryRow {
                name: format!("{axis}={v}"),
                report: r.expect("every slot is filled")?,
            })
        })
        .collect()
}

/// Collects `report.json` from every run directory under `dir`, sorted by
/// directory name.
pub fn collect_reports(dir: &Path) -> Result<Vec<SummaryRow>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut rows = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let path = entry.path().join(REPORT_FILE);
        if path.is_file() {
            rows.push(SummaryRow {
                name: entry.file_name().to_string_lossy().into_owned(),
                report: report::read_json(&path)?,
            });
        }
    }
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(rows)
}
