use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use srmu_core::datagen::{generate, DatasetConfig, EntangledDataset};
use srmu_core::eval::{
    compare_methods, evaluate, median, parse_grid, sweep as run_sweep, ComparisonTable, SweepResult,
};
use srmu_core::manifest::RunManifest;
use srmu_core::misdirect::Variant;
use srmu_core::model::{
    pretrain as run_pretrain, Activation, ModelConfig, PretrainConfig, ToyModel,
};
use srmu_core::numerics::SeededRng;
use srmu_core::unlearn::{
    check_case, random_cases, run_unlearning_with, Method, StepRecord, UnlearnConfig,
    GRADCHECK_TOLERANCE,
};

use crate::config::{overlay, read_object, with_config};

const PRETRAIN_GATE: f64 = 0.90;
const PRETRAIN_GATE_MAX_RHO: f64 = 0.1;

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.with_context(|| format!("--{flag} is required"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GenDataFlags {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probability mass each class places on the shared vocabulary pool.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub sample_length: Option<usize>,
    #[arg(long)]
    pub classes_per_task: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub shared_fraction: Option<f64>,
    #[arg(long)]
    pub zipf_exponent: Option<f64>,
}

pub fn gen_data(flags: GenDataFlags, config: Option<&Path>) -> Result<()> {
    let f = with_config(flags, config)?;
    let out = required(f.out, "out")?;
    let d = DatasetConfig::default();
    let cfg = DatasetConfig {
        vocab_size: f.vocab_size.unwrap_or(d.vocab_size),
        sample_length: f.sample_length.unwrap_or(d.sample_length),
        classes_per_task: f.classes_per_task.unwrap_or(d.classes_per_task),
        train_per_class: f.train_per_class.unwrap_or(d.train_per_class),
        test_per_class: f.test_per_class.unwrap_or(d.test_per_class),
        rho: f.rho.unwrap_or(d.rho),
        shared_fraction: f.shared_fraction.unwrap_or(d.shared_fraction),
        zipf_exponent: f.zipf_exponent.unwrap_or(d.zipf_exponent),
    };
    let ds = generate(&cfg, f.seed.unwrap_or(0))?;
    ds.save(&out)?;
    println!("measured_overlap {:.6}", ds.measured_overlap);
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct PretrainFlags {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Width of the target layer.
    #[arg(long)]
    pub target_width: Option<usize>,
    /// `relu` or `linear`.
    #[arg(long)]
    pub target_activation: Option<String>,
}

fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "linear" => Ok(Activation::Linear),
        _ => bail!("unknown activation `{s}`"),
    }
}

pub fn pretrain(flags: PretrainFlags, config: Option<&Path>) -> Result<()> {
    let f = with_config(flags, config)?;
    let data = required(f.data, "data")?;
    let out = required(f.out, "out")?;
    let ds = EntangledDataset::load(&data)?;
    let m = ModelConfig::default();
    let mc = ModelConfig {
        input: ds.input_width(),
        hidden: f.hidden.unwrap_or(m.hidden),
        target: f.target_width.unwrap_or(m.target),
        forget_classes: ds.config.classes_per_task,
        retain_classes: ds.config.classes_per_task,
        target_activation: match &f.target_activation {
            Some(s) => parse_activation(s)?,
            None => m.target_activation,
        },
    };
    let p = PretrainConfig::default();
    let pc = PretrainConfig {
        epochs: f.epochs.unwrap_or(p.epochs),
        lr: f.lr.unwrap_or(p.lr),
        batch_size: f.batch_size.unwrap_or(p.batch_size),
    };
    let seed = f.seed.unwrap_or(0);
    let mut model = ToyModel::new(mc, seed)?;
    let report = run_pretrain(
        &mut model,
        &ds,
        &pc,
        &mut SeededRng::new(seed).split("pretrain"),
    )?;
    model.save(&out)?;
    write_json(&out.join("training_report.json"), &report)?;
    println!(
        "forget_accuracy {:.4} retain_accuracy {:.4}",
        report.forget_accuracy, report.retain_accuracy
    );
    if ds.config.rho <= PRETRAIN_GATE_MAX_RHO
        && (report.forget_accuracy < PRETRAIN_GATE || report.retain_accuracy < PRETRAIN_GATE)
    {
        bail!(
            "accuracy gate unmet: forget {:.4}, retain {:.4}, both must reach {PRETRAIN_GATE}",
            report.forget_accuracy,
            report.retain_accuracy
        );
    }
    Ok(())
}

/// Unlearning hyperparameters shared by `unlearn` and `sweep`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RunFlags {
    /// SRMU target variant.
    #[arg(long)]
    pub variant: Option<String>,
    /// Importance fusion: ratio, diff or prod.
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// global or per-step.
    #[arg(long)]
    pub importance_mode: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub summary_batches: Option<usize>,
    #[arg(long)]
    pub summary_batch_size: Option<usize>,
}

impl RunFlags {
    fn apply(&self, mut cfg: UnlearnConfig) -> Result<UnlearnConfig> {
        if let Some(v) = &self.variant {
            cfg.variant = v.parse()?;
        }
        if let Some(v) = &self.fusion {
            cfg.fusion.fusion = v.parse()?;
        }
        if let Some(v) = self.eps {
            cfg.fusion.eps = v;
        }
        if let Some(v) = self.lambda {
            cfg.fusion.lambda = v;
        }
        if let Some(v) = &self.importance_mode {
            cfg.importance_mode = v.parse()?;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.optimizer.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.optimizer.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.summary_batches {
            cfg.summary_batches = v;
        }
        if let Some(v) = self.summary_batch_size {
            cfg.summary_batch_size = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct UnlearnFlags {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pretrained checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Run output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// srmu, rmu or adaptive-rmu.
    #[arg(long)]
    pub method: Option<String>,
    /// c_map for SRMU, c for RMU, beta for Adaptive RMU.
    #[arg(long, visible_aliases = ["c-map", "c", "beta"])]
    pub coefficient: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunFlags,
}

pub fn unlearn(flags: UnlearnFlags, config: Option<&Path>) -> Result<()> {
    let mut replay: Option<RunManifest> = None;
    let f = match config {
        Some(p) => {
            let map = read_object(p)?;
            if map.contains_key("unlearn") {
                replay = Some(
                    serde_json::from_value(serde_json::Value::Object(map))
                        .context("reading run manifest")?,
                );
                flags
            } else {
                overlay(flags, map)?
            }
        }
        None => flags,
    };
    let data = required(f.data.clone(), "data")?;
    let checkpoint = required(f.checkpoint.clone(), "checkpoint")?;
    let out = required(f.out.clone(), "out")?;
    let ds = EntangledDataset::load(&data)?;
    let frozen = ToyModel::load(&checkpoint)?;

    let mut cfg = match &replay {
        Some(m) => {
            if m.dataset != ds.descriptor() {
                bail!("dataset at {} does not match the manifest", data.display());
            }
            if m.model != frozen.config || m.model_seed != frozen.seed {
                bail!(
                    "checkpoint at {} does not match the manifest",
                    checkpoint.display()
                );
            }
            m.unlearn.clone()
        }
        None => UnlearnConfig::default(),
    };
    if let Some(m) = &f.method {
        cfg.method = m.parse()?;
    }
    if let Some(c) = f.coefficient {
        cfg.coefficient = c;
    }
    if let Some(s) = f.seed {
        cfg.seed = s;
    }
    let cfg = f.run.apply(cfg)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let steps_path = out.join("steps.csv");
    let mut log = BufWriter::new(
        File::create(&steps_path).with_context(|| format!("creating {}", steps_path.display()))?,
    );
    writeln!(log, "{}", StepRecord::CSV_HEADER)?;
    let mut log_error = None;
    let result = run_unlearning_with(frozen.clone(), &frozen, &ds, &cfg, |r| {
        if log_error.is_none() {
            if let Err(e) = writeln!(log, "{}", r.csv_line()).and_then(|_| log.flush()) {
                log_error = Some(e);
            }
        }
    });
    log.flush()?;
    if let Some(e) = log_error {
        return Err(e).with_context(|| format!("writing {}", steps_path.display()));
    }
    let outcome =
        result.with_context(|| format!("partial step log kept at {}", steps_path.display()))?;

    let report = evaluate(&outcome.model, &frozen, &ds)?;
    write_json(&out.join("eval.json"), &report)?;
    let manifest = RunManifest::new(
        ds.descriptor(),
        frozen.config.clone(),
        frozen.seed,
        cfg,
        outcome.plan,
    );
    write_json(&out.join("manifest.json"), &manifest)?;
    outcome.model.save(&out.join("checkpoint"))?;
    println!(
        "forget_accuracy {:.4} retain_accuracy {:.4} forget_drift {:.4} retain_drift {:.4}",
        report.forget_accuracy, report.retain_accuracy, report.forget_drift, report.retain_drift
    );
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SweepFlags {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated methods; defaults to srmu.
    #[arg(long)]
    pub methods: Option<String>,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunFlags,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .with_context(|| format!("bad seed `{t}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

/// Sweep label: the method name, with the variant appended for SRMU ablations.
pub fn run_label(method: Method, variant: Variant) -> String {
    match (method, variant) {
        (Method::Srmu, v) if v != Variant::Full => format!("srmu/{v}"),
        (m, _) => m.as_str().to_string(),
    }
}

pub fn sweep(flags: SweepFlags, config: Option<&Path>) -> Result<()> {
    let f = with_config(flags, config)?;
    let data = required(f.data, "data")?;
    let checkpoint = required(f.checkpoint, "checkpoint")?;
    let out = required(f.out, "out")?;
    let grid = parse_grid(f.grid.as_deref().unwrap_or("1:170:10"))?;
    let seeds = parse_seeds(f.seeds.as_deref().unwrap_or("0"))?;
    let methods = f
        .methods
        .as_deref()
        .unwrap_or("srmu")
        .split(',')
        .map(|m| m.trim().parse::<Method>().map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let jobs = f
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let base = f.run.apply(UnlearnConfig::default())?;
    let ds = EntangledDataset::load(&data)?;
    let frozen = ToyModel::load(&checkpoint)?;

    let mut parts = Vec::new();
    for method in methods {
        let cfg = UnlearnConfig {
            method,
            ..base.clone()
        };
        parts.push(run_sweep(
            &cfg,
            &run_label(method, cfg.variant),
            &grid,
            &seeds,
            &frozen,
            &ds,
            jobs,
        )?);
    }
    let result = SweepResult::merge(parts);
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    result.write_csv(BufWriter::new(file))?;
    for fail in &result.failures {
        eprintln!(
            "failed: {} c={} seed={}: {}",
            fail.method, fail.c, fail.seed, fail.message
        );
    }
    println!(
        "{} runs ({} c-values x {} seeds per method), {} failed",
        result.rows.len() + result.failures.len(),
        grid.len(),
        seeds.len(),
        result.failures.len()
    );
    if result.rows.is_empty() {
        bail!("every run failed");
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct CompareFlags {
    /// Sweep CSV files.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Optional JSON output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SeedComparison {
    seed: u64,
    table: ComparisonTable,
}

#[derive(Debug, Serialize)]
struct MedianSelection {
    method: String,
    seeds: usize,
    forget_accuracy: f64,
    retain_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct CompareReport {
    per_seed: Vec<SeedComparison>,
    median: Vec<MedianSelection>,
}

pub fn compare(flags: CompareFlags) -> Result<()> {
    let mut parts = Vec::new();
    for path in &flags.inputs {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        parts.push(
            SweepResult::read_csv(BufReader::new(file))
                .with_context(|| format!("reading {}", path.display()))?,
        );
    }
    let rows = SweepResult::merge(parts).rows;
    let mut by_seed: BTreeMap<u64, Vec<_>> = BTreeMap::new();
    for r in rows {
        by_seed.entry(r.seed).or_default().push(r);
    }
    let mut per_seed = Vec::new();
    for (seed, rows) in by_seed {
        let table = compare_methods(&rows)?;
        println!("seed {seed}");
        print!("{}", table.to_text());
        per_seed.push(SeedComparison { seed, table });
    }
    let mut picks: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in &per_seed {
        for sel in &s.table.selections {
            if let Some(r) = &sel.row {
                let e = picks.entry(sel.method.clone()).or_default();
                e.0.push(r.report.forget_accuracy);
                e.1.push(r.report.retain_accuracy);
            }
        }
    }
    let median_rows: Vec<MedianSelection> = picks
        .into_iter()
        .filter_map(|(method, (f, r))| {
            Some(MedianSelection {
                method,
                seeds: f.len(),
                forget_accuracy: median(&f)?,
                retain_accuracy: median(&r)?,
            })
        })
        .collect();
    if per_seed.len() > 1 {
        println!("median over seeds");
        for m in &median_rows {
            println!(
                "{:<24} {:>6} {:>10.4} {:>10.4}",
                m.method, m.seeds, m.forget_accuracy, m.retain_accuracy
            );
        }
    }
    if let Some(out) = flags.out {
        write_json(
            &out,
            &CompareReport {
                per_seed,
                median: median_rows,
            },
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GradcheckFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of random (model, batch, method, variant) cases.
    #[arg(long)]
    pub cases: Option<usize>,
}

pub fn gradcheck(flags: GradcheckFlags, config: Option<&Path>) -> Result<()> {
    let f = with_config(flags, config)?;
    let cases = random_cases(f.cases.unwrap_or(20), f.seed.unwrap_or(0));
    let mut worst: f64 = 0.0;
    for case in &cases {
        let report = check_case(case)?;
        println!(
            "{:<24} alpha={:<7} c={:<8.4} rel_err={:.3e}",
            run_label(case.method, case.variant),
            case.alpha,
            case.coefficient,
            report.max_relative_error
        );
        worst = worst.max(report.max_relative_error);
    }
    if worst < GRADCHECK_TOLERANCE {
        println!("max rel err {worst:.3e} < 1e-4");
        Ok(())
    } else {
        bail!("max rel err {worst:.3e} exceeds 1e-4");
    }
}
