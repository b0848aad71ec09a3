//! CSV/JSON artifacts of training and evaluation runs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{EpochLoss, HiddenRecord, LosoReport, Metrics, Prediction};
use crate::error::Result;

/// Shortest text that parses back to the same `f64`; scientific notation
/// outside `[1e-4, 1e15)` so tiny probabilities stay short.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

/// `sample_id,true,predicted,prob_0,...`
pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let c = predictions.first().map_or(0, |p| p.probabilities.len());
    let mut header = vec!["sample_id".to_string(), "true".into(), "predicted".into()];
    header.extend((0..c).map(|k| format!("prob_{k}")));
    w.write_record(&header)?;
    for p in predictions {
        let mut row = vec![
            p.sample_id.clone(),
            p.true_label.to_string(),
            p.predicted.to_string(),
        ];
        row.extend(p.probabilities.iter().map(|&v| fmt_f64(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FoldMetrics<'a> {
    held_out: &'a str,
    metrics: &'a Metrics,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    pooled: &'a Metrics,
    folds: Vec<FoldMetrics<'a>>,
}

pub fn write_metrics(path: &Path, pooled: &Metrics, folds: &[(String, Metrics)]) -> Result<()> {
    let file = MetricsFile {
        pooled,
        folds: folds
            .iter()
            .map(|(name, m)| FoldMetrics {
                held_out: name,
                metrics: m,
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &file)?;
    writeln!(w)?;
    Ok(())
}

/// `fold,layer{n},...` with the normalized weights of every fold.
pub fn write_aau_weights(path: &Path, layers: &[usize], rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["fold".to_string()];
    header.extend(layers.iter().map(|l| format!("layer{l}")));
    w.write_record(&header)?;
    for (fold, weights) in rows {
        let mut row = vec![fold.clone()];
        row.extend(weights.iter().map(|&v| fmt_f64(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// An `n x n` matrix with node indices as the header row.
pub fn write_lam(path: &Path, n: usize, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..n).map(|i| i.to_string()))?;
    for row in values.chunks(n) {
        w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

/// The `k` largest-magnitude entries of a symmetric-or-not `n x n` matrix,
/// as `(row, col, value)`, excluding the diagonal.
pub fn top_k_edges(values: &[f64], n: usize, k: usize) -> Vec<(usize, usize, f64)> {
    let mut edges: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, values[i * n + j]))
        .collect();
    edges.sort_by(|a, b| {
        b.2.abs()
            .total_cmp(&a.2.abs())
            .then((a.0, a.1).cmp(&(b.0, b.1)))
    });
    edges.truncate(k);
    edges
}

/// `hidden_layer{n}.csv` per trunk layer: `sample_id,label,f0,...`.
pub fn write_hidden(dir: &Path, records: &[HiddenRecord]) -> Result<Vec<PathBuf>> {
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let mut paths = Vec::new();
    for (slot, (layer, feats)) in first.layers.iter().enumerate() {
        let path = dir.join(format!("hidden_layer{layer}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["sample_id".to_string(), "label".into()];
        header.extend((0..feats.len()).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for r in records {
            let mut row = vec![r.sample_id.clone(), r.true_label.to_string()];
            row.extend(r.layers[slot].1.iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// `fold,epoch,total,me,aux`.
pub fn write_loss_trace(path: &Path, traces: &[(String, Vec<EpochLoss>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fold", "epoch", "total", "me", "aux"])?;
    for (fold, trace) in traces {
        for e in trace {
            w.write_record([
                fold.clone(),
                e.epoch.to_string(),
                fmt_f64(e.total),
                fmt_f64(e.me),
                fmt_f64(e.aux),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Everything an evaluation run exports, ready to be written to a directory.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub pooled: Option<Metrics>,
    pub folds: Vec<(String, Metrics)>,
    pub predictions: Vec<Prediction>,
    pub hidden: Vec<HiddenRecord>,
    pub constrained_layers: Vec<usize>,
    pub aau_weights: Vec<(String, Vec<f64>)>,
    /// Learnable adjacency per parameter name (averaged over folds).
    pub lams: BTreeMap<String, Vec<f64>>,
    pub loss_traces: Vec<(String, Vec<EpochLoss>)>,
    pub num_nodes: usize,
}

/// `trunk.layer3.gcn.lam` -> `lam_layer3.csv`; stream layers keep their
/// stream in the name: `lam_stream_b_layer1.csv`.
pub fn lam_file_name(param: &str) -> String {
    let stem = param.trim_end_matches(".gcn.lam");
    match stem.strip_prefix("trunk.") {
        Some(layer) => format!("lam_{layer}.csv"),
        None => format!("lam_{}.csv", stem.replace('.', "_")),
    }
}

impl RunArtifacts {
    pub fn from_loso(report: &LosoReport, num_nodes: usize) -> Self {
        let mut lams: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for f in &report.folds {
            for (name, v) in &f.lams {
                let acc = lams
                    .entry(name.clone())
                    .or_insert_with(|| vec![0.0; v.len()]);
                for (a, b) in acc.iter_mut().zip(v) {
                    *a += b / report.folds.len() as f64;
                }
            }
        }
        RunArtifacts {
            pooled: Some(report.pooled.clone()),
            folds: report
                .folds
                .iter()
                .map(|f| (f.held_out_subject.clone(), f.metrics.clone()))
                .collect(),
            predictions: report
                .folds
                .iter()
                .flat_map(|f| f.predictions.clone())
                .collect(),
            hidden: report.folds.iter().flat_map(|f| f.hidden.clone()).collect(),
            constrained_layers: report.constrained_layers.clone(),
            aau_weights: report
                .folds
                .iter()
                .filter_map(|f| {
                    f.aau_weights
                        .clone()
                        .map(|w| (f.held_out_subject.clone(), w))
                })
                .collect(),
            lams,
            loss_traces: report
                .folds
                .iter()
                .map(|f| (f.held_out_subject.clone(), f.loss_trace.clone()))
                .collect(),
            num_nodes,
        }
    }

    /// Writes every non-empty artifact; returns the files written.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if let Some(pooled) = &self.pooled {
            let p = dir.join("metrics.json");
            write_metrics(&p, pooled, &self.folds)?;
            written.push(p);
        }
        if !self.predictions.is_empty() {
            let p = dir.join("predictions.csv");
            write_predictions(&p, &self.predictions)?;
            written.push(p);
        }
        if !self.aau_weights.is_empty() {
            let p = dir.join("aau_weights.csv");
            write_aau_weights(&p, &self.constrained_layers, &self.aau_weights)?;
            written.push(p);
        }
        for (name, values) in &self.lams {
            let p = dir.join(lam_file_name(name));
            write_lam(&p, self.num_nodes, values)?;
            written.push(p);
        }
        written.extend(write_hidden(dir, &self.hidden)?);
        if !self.loss_traces.is_empty() {
            let p = dir.join("loss_trace.csv");
            write_loss_trace(&p, &self.loss_traces)?;
            written.push(p);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn float_text_round_trips() {
        for v in [
            0.0,
            1.0,
            0.25,
            -3.5e-300,
            2.85e-301,
            1e-4,
            9.99e-5,
            1e15,
            f64::MIN_POSITIVE,
        ] {
            let s = super::fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
            assert!(s.len() < 26, "{s}");
        }
    }

    use super::*;

    #[test]
    fn lam_file_names() {
        assert_eq!(lam_file_name("trunk.layer3.gcn.lam"), "lam_layer3.csv");
        assert_eq!(
            lam_file_name("stream_b.layer1.gcn.lam"),
            "lam_stream_b_layer1.csv"
        );
    }

    #[test]
    fn top_k_orders_by_magnitude() {
        let m = vec![9.0, 0.1, -0.5, 0.2, 9.0, 0.3, 0.4, -0.05, 9.0];
        let top = top_k_edges(&m, 3, 2);
        assert_eq!(top, vec![(0, 2, -0.5), (2, 0, 0.4)]);
    }

    #[test]
    fn predictions_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let preds = vec![Prediction {
            sample_id: "a".into(),
            subject_id: "s".into(),
            true_label: 1,
            predicted: 0,
            probabilities: vec![0.75, 0.25],
        }];
        write_predictions(&p, &preds).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(
            text,
            "sample_id,true,predicted,prob_0,prob_1\na,1,0,0.75,0.25\n"
        );
    }
}
