//! CSV files: embeddings, stream decisions, ground truth, training logs.
//!
//! Reals are written with Rust's shortest round-trip formatting, so reading a
//! file back gives the exact values that were written.

use std::fs::File;
use std::path::Path;

use ltc_core::datakit::{Dataset, OcdSplit};
use ltc_core::pipeline::{DiagnosticRow, EpochStats, StreamRecord};

use crate::error::{CliError, Result};

fn real(v: f64) -> String {
    format!("{v:?}")
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

fn header(path: &Path, r: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let got = r.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if got.iter().ne(expected.iter().copied()) {
        return Err(parse_err(path, 1, format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} from {raw:?}")))
}

/// Visits each data row with its 1-based file line number.
fn rows(path: &Path, expected_header: &[&str], mut f: impl FnMut(u64, &csv::StringRecord) -> Result<()>) -> Result<()> {
    let mut r = reader(path)?;
    header(path, &mut r, expected_header)?;
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected_header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", expected_header.len(), rec.len()),
            ));
        }
        f(line, &rec)?;
    }
    Ok(())
}

/// Header `label,f0,…,f{D-1}`, one sample per row.
pub fn save_embeddings_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut head = vec!["label".to_string()];
    head.extend((0..data.dim).map(|i| format!("f{i}")));
    write_rows(
        path,
        &head,
        data.samples.iter().zip(&data.labels).map(|(x, y)| {
            let mut row = vec![y.to_string()];
            row.extend(x.iter().map(|&v| real(v)));
            row
        }),
    )
}

pub fn load_embeddings_csv(path: &Path) -> Result<Dataset> {
    let mut r = reader(path)?;
    let head = r.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    if head.is_empty() || head.get(0) == Some("") {
        return Err(parse_err(path, 1, "empty file"));
    }
    let dim = head.len() - 1;
    let expected: Vec<String> = std::iter::once("label".to_string())
        .chain((0..dim).map(|i| format!("f{i}")))
        .collect();
    if head.iter().ne(expected.iter().map(String::as_str)) || dim == 0 {
        return Err(parse_err(path, 1, "expected header label,f0,f1,..."));
    }
    let names: Vec<&str> = expected.iter().map(String::as_str).collect();
    drop(r);
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    rows(path, &names, |line, rec| {
        labels.push(field(path, line, "label", &rec[0])?);
        let x = (1..=dim)
            .map(|i| {
                let v: f64 = field(path, line, &names[i], &rec[i])?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(path, line, format!("non-finite {}", names[i])))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(x);
        Ok(())
    })?;
    if samples.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    Ok(Dataset::new(samples, labels)?)
}

const STREAM_HEADER: [&str; 4] = ["id", "pred", "s_max", "spawned"];

pub fn save_stream_csv(path: &Path, records: &[StreamRecord]) -> Result<()> {
    let head: Vec<String> = STREAM_HEADER.iter().map(|s| s.to_string()).collect();
    write_rows(
        path,
        &head,
        records.iter().map(|r| {
            vec![
                r.id.to_string(),
                r.prediction.to_string(),
                real(r.s_max),
                u8::from(r.spawned).to_string(),
            ]
        }),
    )
}

pub fn load_stream_csv(path: &Path) -> Result<Vec<StreamRecord>> {
    let mut out = Vec::new();
    rows(path, &STREAM_HEADER, |line, rec| {
        let spawned: u8 = field(path, line, "spawned", &rec[3])?;
        out.push(StreamRecord {
            id: field(path, line, "id", &rec[0])?,
            prediction: field(path, line, "pred", &rec[1])?,
            s_max: field(path, line, "s_max", &rec[2])?,
            spawned: spawned != 0,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Withheld ground truth of the query stream, in stream order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruthRow {
    pub id: usize,
    pub label: usize,
    pub is_old: bool,
}

const TRUTH_HEADER: [&str; 3] = ["id", "label", "is_old"];

pub fn truth_rows(split: &OcdSplit) -> Vec<TruthRow> {
    split
        .query
        .iter()
        .map(|q| TruthRow {
            id: q.id,
            label: q.label,
            is_old: q.is_old,
        })
        .collect()
}

pub fn save_truth_csv(path: &Path, truth: &[TruthRow]) -> Result<()> {
    let head: Vec<String> = TRUTH_HEADER.iter().map(|s| s.to_string()).collect();
    write_rows(
        path,
        &head,
        truth
            .iter()
            .map(|t| vec![t.id.to_string(), t.label.to_string(), u8::from(t.is_old).to_string()]),
    )
}

pub fn load_truth_csv(path: &Path) -> Result<Vec<TruthRow>> {
    let mut out = Vec::new();
    rows(path, &TRUTH_HEADER, |line, rec| {
        let is_old: u8 = field(path, line, "is_old", &rec[2])?;
        out.push(TruthRow {
            id: field(path, line, "id", &rec[0])?,
            label: field(path, line, "label", &rec[1])?,
            is_old: is_old != 0,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn save_epochs_csv(path: &Path, epochs: &[EpochStats]) -> Result<()> {
    let head: Vec<String> = [
        "epoch", "ce", "sup", "mm", "mm_pos", "mm_neg", "total", "batches", "triggered_batches",
        "pseudo_samples", "tau",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    write_rows(
        path,
        &head,
        epochs.iter().map(|e| {
            vec![
                e.epoch.to_string(),
                real(e.ce),
                real(e.sup),
                real(e.mm),
                real(e.mm_pos),
                real(e.mm_neg),
                real(e.total),
                e.batches.to_string(),
                e.triggered_batches.to_string(),
                e.pseudo_samples.to_string(),
                real(e.tau),
            ]
        }),
    )
}

pub fn save_diagnostics_csv(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    let head: Vec<String> = [
        "epoch",
        "batch",
        "anchor",
        "entropy_before",
        "entropy_after",
        "density_before",
        "density_after",
        "objective_before",
        "objective_after",
        "grad_norm",
        "vanished",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    write_rows(
        path,
        &head,
        rows.iter().map(|r| {
            let d = &r.diagnostics;
            vec![
                r.epoch.to_string(),
                r.batch.to_string(),
                r.anchor.to_string(),
                real(d.entropy_before),
                real(d.entropy_after),
                real(d.density_before),
                real(d.density_after),
                real(d.objective_before),
                real(d.objective_after),
                real(d.grad_norm),
                u8::from(d.vanished).to_string(),
            ]
        }),
    )
}
