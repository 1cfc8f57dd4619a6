//! Per-dimension importance of the target layer for the forget task.
//!
//! Mean target-layer activations over forget and retain batches (`v_f`,
//! `v_r`) are fused into a raw importance vector, then max-normalised into
//! `[0, 1]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ToyModel;
use crate::numerics::{format_f64, Matrix};

/// Guard added to `max(raw)` during normalisation.
pub const EPS_NORM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// `log(1 + v_f / (v_r + ε))`
    Ratio,
    /// `ReLU(v_f − λ v_r)`
    Diff,
    /// `(v_f ⊙ v_r) / (mean(v_f) · mean(v_r) + ε)`
    Prod,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(Fusion::Ratio),
            "diff" => Ok(Fusion::Diff),
            "prod" => Ok(Fusion::Prod),
            other => Err(Error::InvalidArgument(format!("unknown fusion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub fusion: Fusion,
    /// ε for the ratio and product fusions.
    pub eps: f64,
    /// λ for the difference fusion.
    pub lambda: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            fusion: Fusion::Ratio,
            eps: 1e-6,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSummary {
    pub forget_mean: Vec<f64>,
    pub retain_mean: Vec<f64>,
    pub forget_batches: usize,
    pub retain_batches: usize,
}

impl ActivationSummary {
    pub fn new(forget_mean: Vec<f64>, retain_mean: Vec<f64>) -> Result<Self> {
        if forget_mean.len() != retain_mean.len() {
            return Err(Error::InvalidArgument(format!(
                "v_f has {} dimensions but v_r has {}",
                forget_mean.len(),
                retain_mean.len()
            )));
        }
        if forget_mean
            .iter()
            .chain(&retain_mean)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                op: "activation summary",
                index: 0,
            });
        }
        Ok(ActivationSummary {
            forget_mean,
            retain_mean,
            forget_batches: 1,
            retain_batches: 1,
        })
    }

    pub fn width(&self) -> usize {
        self.forget_mean.len()
    }
}

fn mean_activation(model: &ToyModel, batches: &[Matrix], side: &'static str) -> Result<Vec<f64>> {
    if batches.is_empty() || batches.iter().all(|b| b.rows() == 0) {
        return Err(Error::Empty(side));
    }
    let mut sum = vec![0.0; model.config.target];
    let mut n = 0usize;
    for b in batches {
        let h = model.target_activations(b)?;
        for (s, v) in sum.iter_mut().zip(h.sum_rows().data()) {
            *s += v;
        }
        n += b.rows();
    }
    Ok(sum.into_iter().map(|s| s / n as f64).collect())
}

/// Sample-weighted mean of `H(x)` over all forget and all retain batches.
pub fn summarize_activations(
    model: &ToyModel,
    forget: &[Matrix],
    retain: &[Matrix],
) -> Result<ActivationSummary> {
    let forget_mean = mean_activation(model, forget, "no forget batches to summarise")?;
    let retain_mean = mean_activation(model, retain, "no retain batches to summarise")?;
    Ok(ActivationSummary {
        forget_mean,
        retain_mean,
        forget_batches: forget.len(),
        retain_batches: retain.len(),
    })
}

fn check_finite(raw: Vec<f64>, op: &'static str) -> Result<Vec<f64>> {
    match raw.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(raw),
    }
}

pub fn fuse_ratio(s: &ActivationSummary, eps: f64) -> Result<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ratio fusion needs eps >= 0, got {eps}"
        )));
    }
    let raw = s
        .forget_mean
        .iter()
        .zip(&s.retain_mean)
        .map(|(&f, &r)| {
            if f == 0.0 {
                0.0
            } else {
                (f / (r + eps)).ln_1p()
            }
        })
        .collect();
    check_finite(raw, "ratio fusion")
}

pub fn fuse_diff(s: &ActivationSummary, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "diff fusion needs lambda >= 0, got {lambda}"
        )));
    }
    let raw = s
        .forget_mean
        .iter()
        .zip(&s.retain_mean)
        .map(|(&f, &r)| (f - lambda * r).max(0.0))
        .collect();
    check_finite(raw, "diff fusion")
}

pub fn fuse_prod(s: &ActivationSummary, eps: f64) -> Result<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prod fusion needs eps >= 0, got {eps}"
        )));
    }
    let d = s.width().max(1) as f64;
    let mean_f = s.forget_mean.iter().sum::<f64>() / d;
    let mean_r = s.retain_mean.iter().sum::<f64>() / d;
    let denom = mean_f * mean_r + eps;
    let raw = s
        .forget_mean
        .iter()
        .zip(&s.retain_mean)
        .map(|(&f, &r)| {
            let num = f * r;
            if num == 0.0 {
                0.0
            } else {
                num / denom
            }
        })
        .collect();
    check_finite(raw, "prod fusion")
}

/// `raw / (max(raw) + 1e-8)`.
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(0.0, f64::max);
    raw.iter().map(|v| v / (max + EPS_NORM)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub config: FusionConfig,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ImportanceMap {
    pub fn build(summary: &ActivationSummary, config: FusionConfig) -> Result<Self> {
        let raw = match config.fusion {
            Fusion::Ratio => fuse_ratio(summary, config.eps)?,
            Fusion::Diff => fuse_diff(summary, config.lambda)?,
            Fusion::Prod => fuse_prod(summary, config.eps)?,
        };
        let normalized = normalize(&raw);
        Ok(ImportanceMap {
            config,
            raw,
            normalized,
        })
    }

    pub fn width(&self) -> usize {
        self.raw.len()
    }

    /// `dim,raw,normalized` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "dim,raw,normalized")?;
        for (i, (r, n)) in self.raw.iter().zip(&self.normalized).enumerate() {
            writeln!(w, "{i},{},{}", format_f64(*r), format_f64(*n))?;
        }
        Ok(())
    }
}
