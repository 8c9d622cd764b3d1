//! Run persistence: `metrics.csv`, `config.json` and checkpoint files.
//!
//! `metrics.csv` holds one row per participating client per round followed by
//! one aggregate row with `client_id = -1`:
//!
//! ```text
//! round,client_id,n_k,loss_k,weighted_loss,drift,is_top,alpha,xi,grad_var,nat_acc,fgsm_acc,pgd20_acc
//! ```
//!
//! Client rows leave `xi`, `grad_var` and the accuracy columns blank. The
//! aggregate row carries the total sample count in `n_k`, the mean client
//! loss in `loss_k`, the summed weighted loss, the mean drift, and the
//! accuracies on evaluation rounds. Floats are written in shortest
//! round-trip form, so parsing the file recovers the in-memory values exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{ClientRecord, RoundReport};
use crate::nn::{read_checkpoint, write_checkpoint, ParamVector};
use crate::sim::RunArtifact;

pub const METRICS_HEADER: [&str; 13] = [
    "round",
    "client_id",
    "n_k",
    "loss_k",
    "weighted_loss",
    "drift",
    "is_top",
    "alpha",
    "xi",
    "grad_var",
    "nat_acc",
    "fgsm_acc",
    "pgd20_acc",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub client_id: i64,
    pub n_k: usize,
    pub loss_k: f64,
    pub weighted_loss: f64,
    pub drift: f64,
    pub is_top: Option<u8>,
    pub alpha: f64,
    pub xi: Option<i64>,
    pub grad_var: Option<f64>,
    pub nat_acc: Option<f64>,
    pub fgsm_acc: Option<f64>,
    pub pgd20_acc: Option<f64>,
}

impl MetricsRow {
    pub fn is_aggregate(&self) -> bool {
        self.client_id < 0
    }
}

fn client_row(round: usize, alpha: f64, c: &ClientRecord) -> MetricsRow {
    MetricsRow {
        round,
        client_id: c.client as i64,
        n_k: c.n,
        loss_k: c.loss,
        weighted_loss: c.weighted_loss,
        drift: c.drift,
        is_top: Some(u8::from(c.is_top)),
        alpha,
        xi: None,
        grad_var: None,
        nat_acc: None,
        fgsm_acc: None,
        pgd20_acc: None,
    }
}

/// All rows for one round, clients first.
pub fn rows_for_round(report: &RoundReport) -> Vec<MetricsRow> {
    let mut rows: Vec<MetricsRow> = report
        .clients
        .iter()
        .map(|c| client_row(report.round, report.alpha, c))
        .collect();
    rows.push(MetricsRow {
        round: report.round,
        client_id: -1,
        n_k: report.total_samples(),
        loss_k: report.mean_loss(),
        weighted_loss: report.total_weighted_loss(),
        drift: report.mean_drift,
        is_top: None,
        alpha: report.alpha,
        xi: Some(report.xi),
        grad_var: report.grad_variance,
        nat_acc: report.accuracy.map(|a| a.natural),
        fgsm_acc: report.accuracy.map(|a| a.fgsm),
        pgd20_acc: report.accuracy.map(|a| a.pgd20),
    });
    rows
}

/// Appends rounds to `metrics.csv`, flushing after each so an interrupted run
/// leaves a readable prefix.
pub struct MetricsWriter {
    writer: csv::Writer<BufWriter<File>>,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        writer
            .write_record(METRICS_HEADER)
            .map_err(|e| csv_error(path, e))?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            writer,
            path: path.to_path_buf(),
        })
    }

    pub fn write_round(&mut self, report: &RoundReport) -> Result<()> {
        for row in rows_for_round(report) {
            self.writer.serialize(row).map_err(|e| csv_error(&self.path, e))?;
        }
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn write_config(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), config)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

pub fn write_checkpoint_file(params: &ParamVector, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint_file(path: &Path) -> Result<ParamVector> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

/// Writes `metrics.csv`, `config.json` and `final.ckpt` for a finished run.
pub fn emit_metrics(artifact: &RunArtifact, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_config(&artifact.config, &dir.join("config.json"))?;
    let mut writer = MetricsWriter::create(&dir.join("metrics.csv"))?;
    for report in &artifact.reports {
        writer.write_round(report)?;
    }
    write_checkpoint_file(&artifact.final_params, &dir.join("final.ckpt"))
}

/// Per-client counts of `is_top = 1` rows.
pub fn topk_histogram(rows: &[MetricsRow]) -> Vec<usize> {
    let mut counts = Vec::new();
    for row in rows.iter().filter(|r| !r.is_aggregate()) {
        let id = row.client_id as usize;
        if id >= counts.len() {
            counts.resize(id + 1, 0);
        }
        if row.is_top == Some(1) {
            counts[id] += 1;
        }
    }
    counts
}
