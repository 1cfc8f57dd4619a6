//! Forgetting and utility metrics, coefficient sweeps and method comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{EntangledDataset, LabeledSet};
use crate::error::{Error, Result};
use crate::model::{Task, ToyModel};
use crate::numerics::format_f64;
use crate::unlearn::{run_unlearning, UnlearnConfig};

/// Matched-retention window, absolute accuracy.
pub const MATCH_WINDOW: f64 = 0.02;
/// Window used when some method has no row inside [`MATCH_WINDOW`].
pub const WIDE_MATCH_WINDOW: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub forget_accuracy: f64,
    pub retain_accuracy: f64,
    pub forget_drift: f64,
    pub retain_drift: f64,
    pub chance_level: f64,
}

/// Mean Euclidean distance between the two models' target activations.
pub fn activation_drift(model: &ToyModel, frozen: &ToyModel, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("drift on an empty split"));
    }
    let h = model.target_activations(&set.features)?;
    let h0 = frozen.target_activations(&set.features)?;
    let total: f64 = (0..h.rows())
        .map(|i| {
            h.row(i)
                .iter()
                .zip(h0.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / h.rows() as f64)
}

/// Accuracy of each head on its own task's test split, plus drift from the
/// frozen model on the same splits.
pub fn evaluate(model: &ToyModel, frozen: &ToyModel, ds: &EntangledDataset) -> Result<EvalReport> {
    Ok(EvalReport {
        forget_accuracy: model.accuracy(&ds.forget.test, Task::Forget)?,
        retain_accuracy: model.accuracy(&ds.retain.test, Task::Retain)?,
        forget_drift: activation_drift(model, frozen, &ds.forget.test)?,
        retain_drift: activation_drift(model, frozen, &ds.retain.test)?,
        chance_level: 1.0 / model.config.forget_classes as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub c: f64,
    pub seed: u64,
    pub report: EvalReport,
    pub on_front: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub method: String,
    pub c: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// `a` is no worse on both objectives and strictly better on one.
pub fn dominates(a: &EvalReport, b: &EvalReport) -> bool {
    a.forget_accuracy <= b.forget_accuracy
        && a.retain_accuracy >= b.retain_accuracy
        && (a.forget_accuracy < b.forget_accuracy || a.retain_accuracy > b.retain_accuracy)
}

/// Indices of rows not dominated by any other row.
pub fn pareto_front(reports: &[EvalReport]) -> Vec<usize> {
    (0..reports.len())
        .filter(|&i| !reports.iter().any(|other| dominates(other, &reports[i])))
        .collect()
}

/// Values `start, start + step, …` not exceeding `stop`.
pub fn coefficient_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(Error::InvalidArgument(format!(
            "grid {start}:{stop}:{step} is empty or malformed"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

/// Parses `start:stop:step` or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::parse(format!("grid `{spec}`"), e))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => coefficient_grid(num(start)?, num(stop)?, num(step)?),
        [_] => {
            let v = spec.split(',').map(num).collect::<Result<Vec<_>>>()?;
            if v.is_empty() {
                return Err(Error::Empty("grid"));
            }
            Ok(v)
        }
        _ => Err(Error::parse(
            format!("grid `{spec}`"),
            "expected start:stop:step",
        )),
    }
}

impl SweepResult {
    pub fn from_rows(mut rows: Vec<SweepRow>, failures: Vec<SweepFailure>) -> SweepResult {
        rows.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.c.total_cmp(&b.c))
                .then(a.seed.cmp(&b.seed))
        });
        let reports: Vec<EvalReport> = rows.iter().map(|r| r.report).collect();
        let front = pareto_front(&reports);
        for (i, row) in rows.iter_mut().enumerate() {
            row.on_front = front.binary_search(&i).is_ok();
        }
        SweepResult { rows, failures }
    }

    /// Combines results and recomputes the front over the union.
    pub fn merge(parts: impl IntoIterator<Item = SweepResult>) -> SweepResult {
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for p in parts {
            rows.extend(p.rows);
            failures.extend(p.failures);
        }
        SweepResult::from_rows(rows, failures)
    }

    pub fn front(&self) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.on_front).collect()
    }

    pub const CSV_HEADER: &'static str =
        "method,c,seed,forget_acc,retain_acc,forget_drift,retain_drift,on_front";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.method,
                format_f64(r.c),
                r.seed,
                format_f64(r.report.forget_accuracy),
                format_f64(r.report.retain_accuracy),
                format_f64(r.report.forget_drift),
                format_f64(r.report.retain_drift),
                r.on_front
            )?;
        }
        Ok(())
    }

    /// Reads rows written by [`SweepResult::write_csv`]. Chance level is not
    /// stored and comes back as `NaN`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<SweepResult> {
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::parse("sweep csv", e))?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::parse(
                    format!("sweep csv line {}", i + 1),
                    "expected 8 fields",
                ));
            }
            let ctx = || format!("sweep csv line {}", i + 1);
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(ctx(), e));
            rows.push(SweepRow {
                method: f[0].to_string(),
                c: num(f[1])?,
                seed: f[2].parse().map_err(|e| Error::parse(ctx(), e))?,
                report: EvalReport {
                    forget_accuracy: num(f[3])?,
                    retain_accuracy: num(f[4])?,
                    forget_drift: num(f[5])?,
                    retain_drift: num(f[6])?,
                    chance_level: f64::NAN,
                },
                on_front: f[7] == "true",
            });
        }
        Ok(SweepResult::from_rows(rows, Vec::new()))
    }
}

/// One unlearning run per `(c, seed)` from the same frozen model, evaluated on
/// the dataset's test splits. Runs execute on up to `jobs` threads; failed
/// runs are collected rather than aborting the sweep.
pub fn sweep(
    base: &UnlearnConfig,
    label: &str,
    c_values: &[f64],
    seeds: &[u64],
    frozen: &ToyModel,
    ds: &EntangledDataset,
    jobs: usize,
) -> Result<SweepResult> {
    if c_values.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let points: Vec<(f64, u64)> = c_values
        .iter()
        .flat_map(|&c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let run = |&(c, seed): &(f64, u64)| -> std::result::Result<SweepRow, SweepFailure> {
        let cfg = UnlearnConfig {
            coefficient: c,
            seed,
            ..base.clone()
        };
        run_unlearning(frozen.clone(), frozen, ds, &cfg)
            .and_then(|out| evaluate(&out.model, frozen, ds))
            .map(|report| SweepRow {
                method: label.to_string(),
                c,
                seed,
                report,
                on_front: false,
            })
            .map_err(|e| SweepFailure {
                method: label.to_string(),
                c,
                seed,
                message: e.to_string(),
            })
    };
    let outcomes: Vec<_> = if jobs <= 1 {
        points.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| points.par_iter().map(run).collect())
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(SweepResult::from_rows(rows, failures))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSelection {
    pub method: String,
    pub row: Option<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// Best retain accuracy over every method's rows.
    pub max_retain: f64,
    pub window: f64,
    /// Set when the default window left some method without a candidate.
    pub widened: bool,
    pub selections: Vec<MethodSelection>,
    /// `(better, worse)`: every row of `worse` is dominated by a row of `better`.
    pub pareto_better: Vec<(String, String)>,
}

fn selection_order(a: &SweepRow, b: &SweepRow) -> std::cmp::Ordering {
    a.report
        .forget_accuracy
        .total_cmp(&b.report.forget_accuracy)
        .then(
            b.report
                .retain_accuracy
                .total_cmp(&a.report.retain_accuracy),
        )
        .then(a.c.total_cmp(&b.c))
        .then(a.seed.cmp(&b.seed))
}

/// Matched-retention comparison: per method, the lowest forget accuracy among
/// rows whose retain accuracy is within the window of the best retain
/// accuracy seen across all methods.
pub fn compare_methods(rows: &[SweepRow]) -> Result<ComparisonTable> {
    if rows.is_empty() {
        return Err(Error::Empty("no rows to compare"));
    }
    let mut by_method: BTreeMap<&str, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }
    let max_retain = rows
        .iter()
        .map(|r| r.report.retain_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let select = |window: f64| -> Vec<MethodSelection> {
        by_method
            .iter()
            .map(|(m, rs)| MethodSelection {
                method: m.to_string(),
                row: rs
                    .iter()
                    .filter(|r| r.report.retain_accuracy >= max_retain - window - 1e-12)
                    .min_by(|a, b| selection_order(a, b))
                    .map(|r| (*r).clone()),
            })
            .collect()
    };
    let mut window = MATCH_WINDOW;
    let mut selections = select(window);
    let widened = selections.iter().any(|s| s.row.is_none());
    if widened {
        window = WIDE_MATCH_WINDOW;
        selections = select(window);
    }
    let mut pareto_better = Vec::new();
    for (a, rows_a) in &by_method {
        for (b, rows_b) in &by_method {
            if a != b
                && rows_b
                    .iter()
                    .all(|rb| rows_a.iter().any(|ra| dominates(&ra.report, &rb.report)))
            {
                pareto_better.push((a.to_string(), b.to_string()));
            }
        }
    }
    Ok(ComparisonTable {
        max_retain,
        window,
        widened,
        selections,
        pareto_better,
    })
}

impl ComparisonTable {
    pub fn selected(&self, method: &str) -> Option<&SweepRow> {
        self.selections
            .iter()
            .find(|s| s.method == method)
            .and_then(|s| s.row.as_ref())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "matched retention: retain >= {:.4} (max {:.4}, window {:.2}{})",
            self.max_retain - self.window,
            self.max_retain,
            self.window,
            if self.widened { ", widened" } else { "" }
        );
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>6} {:>10} {:>10}",
            "method", "c", "seed", "forget", "retain"
        );
        for s in &self.selections {
            match &s.row {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "{:<24} {:>8.2} {:>6} {:>10.4} {:>10.4}",
                        s.method, r.c, r.seed, r.report.forget_accuracy, r.report.retain_accuracy
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{:<24} {:>8} {:>6} {:>10} {:>10}",
                        s.method, "-", "-", "-", "-"
                    );
                }
            }
        }
        for (better, worse) in &self.pareto_better {
            let _ = writeln!(out, "{better} is Pareto-better than {worse}");
        }
        out
    }
}

/// Median of a non-empty slice; mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
