//! Linear evaluation of frozen embeddings: a multinomial logistic-regression
//! probe, classification metrics and collapse diagnostics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Split;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub iters: usize,
    pub lr: f64,
    /// Candidate L2 strengths; the one with the best validation accuracy wins.
    pub l2_grid: Vec<f64>,
    /// Standardize each embedding column with the training mean and std.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            lr: 0.1,
            l2_grid: vec![1e-4, 1e-2, 1.0],
            standardize: false,
        }
    }
}

/// Softmax classifier `argmax((z − μ) / σ · W + b)`; `μ = 0`, `σ = 1` unless
/// the probe was fit with standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub classes: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollapseMetrics {
    pub mean_dim_std: f64,
    pub mean_abs_offdiag_corr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub n_test: usize,
    pub collapse: Option<CollapseMetrics>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub l2: f64,
    pub val_accuracy: f64,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub micro_f1: MeanStd,
    pub collapse: CollapseMetrics,
    pub splits: Vec<SplitResult>,
}

impl ProtocolReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let pct = |m: &MeanStd| format!("{:6.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std);
        let _ = writeln!(s, "metric          value");
        let _ = writeln!(s, "accuracy      {}", pct(&self.accuracy));
        let _ = writeln!(s, "macro-F1      {}", pct(&self.macro_f1));
        let _ = writeln!(s, "micro-F1      {}", pct(&self.micro_f1));
        let _ = writeln!(s, "dim std       {:9.4}", self.collapse.mean_dim_std);
        let _ = writeln!(s, "|offdiag r|   {:9.4}", self.collapse.mean_abs_offdiag_corr);
        let _ = writeln!(s, "splits        {:6}", self.splits.len());
        s
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn check_labels(y: &[usize], classes: usize) -> Result<()> {
    if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
        return Err(Error::Protocol(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

impl LinearProbe {
    fn standardized(&self, z: &Tensor) -> Tensor {
        let mut out = z.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) * self.scale[c];
            }
        }
        out
    }

    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.weight.rows() {
            return Err(Error::shape(
                "probe",
                format!("embeddings have {} columns, probe expects {}", z.cols(), self.weight.rows()),
            ));
        }
        let mut out = self.standardized(z).matmul(&self.weight)?;
        for r in 0..out.rows() {
            for (v, b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Argmax class per row; ties go to the lower class index.
    pub fn predict(&self, z: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(z)?;
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect())
    }
}

/// Full-batch gradient descent on mean cross-entropy plus `l2/2 · ‖W‖²`,
/// from zero initialization.
pub fn fit_linear_probe(
    z_train: &Tensor,
    y_train: &[usize],
    classes: usize,
    l2: f64,
    cfg: &ProbeConfig,
) -> Result<LinearProbe> {
    if classes < 2 {
        return Err(Error::Protocol(format!("need at least 2 classes, got {classes}")));
    }
    if z_train.rows() != y_train.len() {
        return Err(Error::shape(
            "fit_linear_probe",
            format!("{} embeddings for {} labels", z_train.rows(), y_train.len()),
        ));
    }
    check_labels(y_train, classes)?;
    let mut seen = vec![false; classes];
    for &c in y_train {
        seen[c] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Protocol(format!("class {missing} has no training example")));
    }

    let (n, d) = z_train.shape();
    let (mean, scale) = if cfg.standardize {
        let mean = z_train.column_means();
        let scale = (0..d)
            .map(|c| {
                let var = (0..n).map(|r| (z_train.get(r, c) - mean[c]).powi(2)).sum::<f64>() / n as f64;
                if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 }
            })
            .collect();
        (mean, scale)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let mut probe = LinearProbe {
        weight: Tensor::zeros(d, classes),
        bias: vec![0.0; classes],
        classes,
        mean,
        scale,
    };
    let x = probe.standardized(z_train);
    let inv_n = 1.0 / n as f64;
    for _ in 0..cfg.iters {
        let mut p = x.matmul(&probe.weight)?;
        for r in 0..n {
            let row = p.row_mut(r);
            for (v, b) in row.iter_mut().zip(&probe.bias) {
                *v += b;
            }
            softmax_in_place(row);
            row[y_train[r]] -= 1.0;
        }
        let mut gw = x.transpose().matmul(&p)?;
        for (g, w) in gw.data_mut().iter_mut().zip(probe.weight.data()) {
            *g = *g * inv_n + l2 * w;
        }
        let gb: Vec<f64> = (0..classes)
            .map(|c| (0..n).map(|r| p.get(r, c)).sum::<f64>() * inv_n)
            .collect();
        for (w, g) in probe.weight.data_mut().iter_mut().zip(gw.data()) {
            *w -= cfg.lr * g;
        }
        for (b, g) in probe.bias.iter_mut().zip(&gb) {
            *b -= cfg.lr * g;
        }
    }
    if !probe.weight.is_finite() || probe.bias.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite {
            term: "probe",
            epoch: cfg.iters,
        });
    }
    Ok(probe)
}

/// Accuracy, per-class F1, macro-F1 and micro-F1 of `pred` against `truth`.
///
/// Macro-F1 averages over classes that occur in either the predictions or
/// the truth.
pub fn classification_metrics(pred: &[usize], truth: &[usize], classes: usize) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Protocol("empty test set".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "classification_metrics",
            format!("{} predictions for {} labels", pred.len(), truth.len()),
        ));
    }
    check_labels(truth, classes)?;
    check_labels(pred, classes)?;
    let (mut tp, mut fp, mut fn_) = (vec![0usize; classes], vec![0usize; classes], vec![0usize; classes]);
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 }
    };
    let per_class_f1: Vec<f64> = (0..classes).map(|c| f1(tp[c], fp[c], fn_[c])).collect();
    let present: Vec<usize> = (0..classes).filter(|&c| tp[c] + fp[c] + fn_[c] > 0).collect();
    let macro_f1 = present.iter().map(|&c| per_class_f1[c]).sum::<f64>() / present.len() as f64;
    let (stp, sfp, sfn) = (tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    Ok(EvalReport {
        accuracy: stp as f64 / truth.len() as f64,
        macro_f1,
        micro_f1: f1(stp, sfp, sfn),
        per_class_f1,
        n_test: truth.len(),
        collapse: None,
    })
}

pub fn evaluate(probe: &LinearProbe, z_test: &Tensor, y_test: &[usize]) -> Result<EvalReport> {
    if y_test.is_empty() {
        return Err(Error::Protocol("empty test set".into()));
    }
    if z_test.rows() != y_test.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} embeddings for {} labels", z_test.rows(), y_test.len()),
        ));
    }
    classification_metrics(&probe.predict(z_test)?, y_test, probe.classes)
}

/// Mean unbiased per-dimension standard deviation and mean absolute
/// off-diagonal correlation. Zero-variance dimensions have correlation 0
/// with everything.
pub fn collapse_metrics(z: &Tensor) -> Result<CollapseMetrics> {
    let (b, d) = z.shape();
    if b < 2 {
        return Err(Error::DegenerateBatch {
            op: "collapse_metrics",
            rows: b,
        });
    }
    let mean = z.column_means();
    let mut centered = z.clone();
    for r in 0..b {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let cov = centered.transpose().matmul(&centered)?.map(|v| v / (b - 1) as f64);
    let std: Vec<f64> = (0..d).map(|j| cov.get(j, j).max(0.0).sqrt()).collect();
    let mean_dim_std = std.iter().sum::<f64>() / d as f64;
    let mut off = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j && std[i] > 0.0 && std[j] > 0.0 {
                off += (cov.get(i, j) / (std[i] * std[j])).abs().min(1.0);
            }
        }
    }
    let pairs = d * (d - 1);
    Ok(CollapseMetrics {
        mean_dim_std,
        mean_abs_offdiag_corr: if pairs == 0 { 0.0 } else { off / pairs as f64 },
    })
}

fn labeled(idx: &[usize], labels: &[Option<usize>]) -> (Vec<usize>, Vec<usize>) {
    idx.iter().filter_map(|&i| labels[i].map(|y| (i, y))).unzip()
}

/// One probe per split: fit on its train part for every L2 in the grid,
/// keep the best on its validation part, report on its test part.
/// Unlabeled rows are skipped.
pub fn run_protocol(
    z: &Tensor,
    labels: &[Option<usize>],
    splits: &[Split],
    cfg: &ProbeConfig,
) -> Result<ProtocolReport> {
    if splits.is_empty() {
        return Err(Error::Protocol("need at least one split".into()));
    }
    if cfg.l2_grid.is_empty() {
        return Err(Error::Config("probe l2_grid is empty".into()));
    }
    if labels.len() != z.rows() {
        return Err(Error::shape(
            "run_protocol",
            format!("{} embeddings for {} labels", z.rows(), labels.len()),
        ));
    }
    let classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut results = Vec::with_capacity(splits.len());
    for (k, split) in splits.iter().enumerate() {
        split.validate(z.rows())?;
        let (tr_idx, tr_y) = labeled(&split.train, labels);
        let (va_idx, va_y) = labeled(&split.val, labels);
        let (te_idx, te_y) = labeled(&split.test, labels);
        if te_y.is_empty() {
            return Err(Error::Protocol(format!("split {k} has no labeled test nodes")));
        }
        if va_y.is_empty() && cfg.l2_grid.len() > 1 {
            return Err(Error::Protocol(format!("split {k} has no labeled validation nodes")));
        }
        let z_tr = z.select_rows(&tr_idx);
        let z_va = z.select_rows(&va_idx);
        let mut best: Option<(f64, f64, LinearProbe)> = None;
        for &l2 in &cfg.l2_grid {
            let probe = fit_linear_probe(&z_tr, &tr_y, classes, l2, cfg)
                .map_err(|e| Error::Protocol(format!("split {k}: {e}")))?;
            let acc = if va_y.is_empty() { 0.0 } else { evaluate(&probe, &z_va, &va_y)?.accuracy };
            if best.as_ref().is_none_or(|(_, a, _)| acc > *a) {
                best = Some((l2, acc, probe));
            }
        }
        let (l2, val_accuracy, probe) = best.expect("grid is non-empty");
        let report = evaluate(&probe, &z.select_rows(&te_idx), &te_y)?;
        results.push(SplitResult {
            l2,
            val_accuracy,
            report,
        });
    }
    let stat = |f: fn(&EvalReport) -> f64| MeanStd::of(&results.iter().map(|r| f(&r.report)).collect::<Vec<_>>());
    Ok(ProtocolReport {
        accuracy: stat(|r| r.accuracy),
        macro_f1: stat(|r| r.macro_f1),
        micro_f1: stat(|r| r.micro_f1),
        collapse: collapse_metrics(z)?,
        splits: results,
    })
}
