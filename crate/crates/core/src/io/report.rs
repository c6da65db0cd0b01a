//! Text reports: the Table-I-style metric table, training history, and the
//! clustering summary. All tab-delimited with a header row.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::spray::SpectralResult;
use crate::trainer::TrainHistory;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders the localization table: one row per explanation method, columns
/// for AUC and MA mean +- sd and the count of MA-undefined images. Absent
/// rows (ensemble Baseline) print `--`.
pub fn render_metric_report(report: &MetricReport) -> String {
    let mut out = String::from("method\tauc_mean\tauc_sd\tma_mean\tma_sd\tma_undefined\n");
    for row in &report.rows {
        if !row.available {
            out.push_str(&format!("{}\t--\t--\t--\t--\t--\n", row.name));
            continue;
        }
        let (auc_mean, auc_sd) = row.auc_mean_sd();
        let (ma_mean, ma_sd) = row.ma_mean_sd();
        let undefined = row.ma_undefined();
        if undefined == report.images {
            out.push_str(&format!(
                "{}\t{auc_mean:.4}\t{auc_sd:.4}\t--\t--\t{undefined}\n",
                row.name
            ));
        } else {
            out.push_str(&format!(
                "{}\t{auc_mean:.4}\t{auc_sd:.4}\t{ma_mean:.4}\t{ma_sd:.4}\t{undefined}\n",
                row.name
            ));
        }
    }
    out
}

/// Renders per-epoch training curves.
pub fn render_history(history: &TrainHistory) -> String {
    let mut out = String::from("epoch\ttrain_loss\ttrain_acc\theld_loss\theld_acc\n");
    for e in 0..history.train_loss.len() {
        out.push_str(&format!(
            "{e}\t{:.6}\t{:.4}\t{:.6}\t{:.4}\n",
            history.train_loss[e],
            history.train_accuracy[e],
            history.held_out_loss[e],
            history.held_out_accuracy[e],
        ));
    }
    out
}

/// Renders the clustering summary: selected k, leading eigenvalues, one row
/// per cluster (size, strength), and the 2-d embedding per sample.
pub fn render_spray_report(result: &SpectralResult, n_samples: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!("clusters\t{}\n", result.selected_k));
    out.push_str(&format!("samples\t{n_samples}\n"));
    out.push('\n');

    out.push_str("eigenvalue_index\teigenvalue\n");
    for (i, ev) in result.eigenvalues.iter().take(16).enumerate() {
        out.push_str(&format!("{i}\t{ev:.9}\n"));
    }
    out.push('\n');

    out.push_str("cluster\tsize\tstrength\n");
    for (c, strength) in result.strengths.iter().enumerate() {
        let size = result.labels.iter().filter(|&&l| l == c).count();
        out.push_str(&format!("{c}\t{size}\t{strength:.4}\n"));
    }
    out.push('\n');

    out.push_str("sample\tcluster\tembed_2\tembed_3\n");
    for (i, (label, coords)) in result.labels.iter().zip(&result.embedding).enumerate() {
        out.push_str(&format!(
            "{i}\t{label}\t{:.6}\t{:.6}\n",
            coords[0], coords[1]
        ));
    }
    out
}
