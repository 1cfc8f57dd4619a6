//! Representation-misdirection unlearning of the target layer.
//!
//! One run follows the same loop for every method:
//!
//! 1. Build the forget target: for SRMU an importance map from the frozen
//!    model plus a sign vector `V`; for RMU a unit direction `u`.
//! 2. For `T` steps, draw one forget and one retain batch, evaluate
//!    `L = L_forget + α · L_retain` on the target-layer activations, and take
//!    one AdamW step on `(W2, b2)` only.

mod gradcheck;
mod loss;
mod optim;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use gradcheck::{
    check_case, random_cases, GradcheckCase, GradcheckReport, GRADCHECK_TOLERANCE, GRADCHECK_WIDTH,
};
pub use loss::{forget_loss, forget_loss_with_grad, retain_loss, retain_loss_with_grad};
pub use optim::{AdamW, AdamWConfig};

use crate::datagen::{EntangledDataset, LabeledSet};
use crate::error::{Error, Result};
use crate::importance::{summarize_activations, FusionConfig, ImportanceMap};
use crate::misdirect::{build_target, MisdirectionSpec, RmuSpec, Variant};
use crate::model::{backprop_target_layer, ToyModel};
use crate::numerics::{format_f64, Matrix, SeededRng};

/// Tag recorded in manifests for the squared-error convention.
pub const SQUARED_ERROR_CONVENTION: &str = "mean_over_batch_mean_over_dims";

/// Learning rate used for experiments on the default toy widths. At the
/// default `5e-5` the target layer barely moves within 150 steps.
pub const DESK_SCALE_LR: f64 = 2e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Srmu,
    Rmu,
    AdaptiveRmu,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Srmu, Method::Rmu, Method::AdaptiveRmu];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Srmu => "srmu",
            Method::Rmu => "rmu",
            Method::AdaptiveRmu => "adaptive-rmu",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// When the SRMU importance map is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    /// Once before the loop, from fixed summary batches.
    Global,
    /// Recomputed every step from that step's forget and retain batches.
    PerStep,
}

impl std::str::FromStr for ImportanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "global" => Ok(ImportanceMode::Global),
            "per-step" => Ok(ImportanceMode::PerStep),
            _ => Err(Error::InvalidArgument(format!(
                "unknown importance mode `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub method: Method,
    pub variant: Variant,
    pub fusion: FusionConfig,
    pub importance_mode: ImportanceMode,
    /// Batches per side used to build the global importance map.
    pub summary_batches: usize,
    pub summary_batch_size: usize,
    pub alpha: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// `c_map` for SRMU, `c` for RMU, `β` for Adaptive RMU.
    pub coefficient: f64,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            method: Method::Srmu,
            variant: Variant::Full,
            fusion: FusionConfig::default(),
            importance_mode: ImportanceMode::Global,
            summary_batches: 8,
            summary_batch_size: 4,
            alpha: 1200.0,
            steps: 150,
            batch_size: 4,
            coefficient: 7.5,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lr must be > 0, got {}",
                self.optimizer.lr
            )));
        }
        if self.batch_size == 0 || self.summary_batches == 0 || self.summary_batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch sizes must be positive".into(),
            ));
        }
        if !self.coefficient.is_finite() {
            return Err(Error::InvalidArgument("coefficient must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub forget_loss: f64,
    pub retain_loss: f64,
    pub total_loss: f64,
    pub grad_norm: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,forget_loss,retain_loss,total_loss,grad_norm";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step,
            format_f64(self.forget_loss),
            format_f64(self.retain_loss),
            format_f64(self.total_loss),
            format_f64(self.grad_norm)
        )
    }
}

pub fn write_step_csv<W: Write>(mut w: W, records: &[StepRecord]) -> std::io::Result<()> {
    writeln!(w, "{}", StepRecord::CSV_HEADER)?;
    for r in records {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// How the forget target is obtained at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForgetTarget {
    /// One target for the whole run.
    Fixed { target: Vec<f64> },
    /// SRMU with the importance map rebuilt from every step's batches.
    PerStepImportance { spec: MisdirectionSpec },
    /// Adaptive RMU: coefficient `β · mean ‖H₀(x_f)‖` per batch.
    AdaptiveNorm { spec: RmuSpec },
}

/// Everything fixed before the first optimisation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnPlan {
    pub target: ForgetTarget,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub importance: Option<ImportanceMap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misdirection: Option<MisdirectionSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmu: Option<RmuSpec>,
}

impl UnlearnPlan {
    /// The forget target for one step's batch.
    pub fn target_for(
        &self,
        frozen: &ToyModel,
        cfg: &UnlearnConfig,
        forget_x: &Matrix,
        retain_x: &Matrix,
    ) -> Result<Vec<f64>> {
        match &self.target {
            ForgetTarget::Fixed { target } => Ok(target.clone()),
            ForgetTarget::PerStepImportance { spec } => {
                let summary = summarize_activations(
                    frozen,
                    std::slice::from_ref(forget_x),
                    std::slice::from_ref(retain_x),
                )?;
                let map = ImportanceMap::build(&summary, cfg.fusion)?;
                build_target(spec, &map.normalized)
            }
            ForgetTarget::AdaptiveNorm { spec } => {
                let h0 = frozen.target_activations(forget_x)?;
                let mean_norm = (0..h0.rows())
                    .map(|i| h0.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                    .sum::<f64>()
                    / h0.rows() as f64;
                crate::misdirect::rmu_target(spec, Some(mean_norm))
            }
        }
    }
}

fn sample_batch(set: &LabeledSet, size: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if set.is_empty() {
        return Err(Error::Empty("cannot draw a batch from an empty split"));
    }
    let idx: Vec<usize> = (0..size).map(|_| rng.below(set.len())).collect();
    set.features.select_rows(&idx)
}

/// Draws the summary batches used for the global importance map.
pub fn summary_batches(
    data: &EntangledDataset,
    cfg: &UnlearnConfig,
    rng: &mut SeededRng,
) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    let draw = |set: &LabeledSet, rng: &mut SeededRng| -> Result<Vec<Matrix>> {
        (0..cfg.summary_batches)
            .map(|_| sample_batch(set, cfg.summary_batch_size, rng))
            .collect()
    };
    let forget = draw(&data.forget.train, rng)?;
    let retain = draw(&data.retain.train, rng)?;
    Ok((forget, retain))
}

/// Builds the importance map, direction and target before the loop.
pub fn prepare(
    frozen: &ToyModel,
    data: &EntangledDataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnPlan> {
    cfg.validate()?;
    let root = SeededRng::new(cfg.seed);
    let d = frozen.config.target;
    match cfg.method {
        Method::Srmu => {
            let spec = MisdirectionSpec::sample(
                d,
                cfg.coefficient,
                cfg.variant,
                &mut root.split("direction"),
            )?;
            match cfg.importance_mode {
                ImportanceMode::Global => {
                    let (f, r) = summary_batches(data, cfg, &mut root.split("importance"))?;
                    let summary = summarize_activations(frozen, &f, &r)?;
                    let map = ImportanceMap::build(&summary, cfg.fusion)?;
                    let target = build_target(&spec, &map.normalized)?;
                    Ok(UnlearnPlan {
                        target: ForgetTarget::Fixed { target },
                        importance: Some(map),
                        misdirection: Some(spec),
                        rmu: None,
                    })
                }
                ImportanceMode::PerStep => Ok(UnlearnPlan {
                    target: ForgetTarget::PerStepImportance { spec: spec.clone() },
                    importance: None,
                    misdirection: Some(spec),
                    rmu: None,
                }),
            }
        }
        Method::Rmu => {
            let spec = RmuSpec::fixed(d, cfg.coefficient, &mut root.split("direction"))?;
            let target = crate::misdirect::rmu_target(&spec, None)?;
            Ok(UnlearnPlan {
                target: ForgetTarget::Fixed { target },
                importance: None,
                misdirection: None,
                rmu: Some(spec),
            })
        }
        Method::AdaptiveRmu => {
            let spec = RmuSpec::adaptive(d, cfg.coefficient, &mut root.split("direction"))?;
            Ok(UnlearnPlan {
                target: ForgetTarget::AdaptiveNorm { spec: spec.clone() },
                importance: None,
                misdirection: None,
                rmu: Some(spec),
            })
        }
    }
}

/// Value and target-layer gradient of `L_forget + α · L_retain`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub forget_loss: f64,
    pub retain_loss: f64,
    pub total_loss: f64,
    pub grad_w2: Matrix,
    pub grad_b2: Matrix,
}

pub fn total_loss_and_gradient(
    model: &ToyModel,
    frozen: &ToyModel,
    forget_x: &Matrix,
    retain_x: &Matrix,
    target: &[f64],
    alpha: f64,
) -> Result<LossEvaluation> {
    let tf = model.forward_capture(forget_x)?;
    let tr = model.forward_capture(retain_x)?;
    let h0 = frozen.target_activations(retain_x)?;
    let (lf, gf) = forget_loss_with_grad(&tf.target_activation, target)?;
    let (lr, mut gr) = retain_loss_with_grad(&tr.target_activation, &h0)?;
    gr.update_in_place("retain gradient", |_, g| alpha * g)?;
    let (mut gw, mut gb) = backprop_target_layer(model, &tf, &gf)?;
    let (gw_r, gb_r) = backprop_target_layer(model, &tr, &gr)?;
    gw.update_in_place("gradient sum", |i, v| v + gw_r.data()[i])?;
    gb.update_in_place("gradient sum", |i, v| v + gb_r.data()[i])?;
    Ok(LossEvaluation {
        forget_loss: lf,
        retain_loss: lr,
        total_loss: lf + alpha * lr,
        grad_w2: gw,
        grad_b2: gb,
    })
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub model: ToyModel,
    pub records: Vec<StepRecord>,
    pub plan: UnlearnPlan,
}

pub fn run_unlearning(
    model: ToyModel,
    frozen: &ToyModel,
    data: &EntangledDataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    run_unlearning_with(model, frozen, data, cfg, |_| {})
}

/// [`run_unlearning`] with a callback invoked after every completed step.
pub fn run_unlearning_with(
    mut model: ToyModel,
    frozen: &ToyModel,
    data: &EntangledDataset,
    cfg: &UnlearnConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<UnlearnOutcome> {
    if model.config != frozen.config {
        return Err(Error::InvalidArgument(
            "updated and frozen models differ in shape".into(),
        ));
    }
    if let Some(name) = model.first_frozen_difference(frozen) {
        return Err(Error::InvalidArgument(format!(
            "updated model must start from the frozen model; `{name}` differs"
        )));
    }
    let plan = prepare(frozen, data, cfg)?;
    let root = SeededRng::new(cfg.seed);
    let mut forget_rng = root.split("batches/forget");
    let mut retain_rng = root.split("batches/retain");
    let mut opt = AdamW::new(cfg.optimizer)?;
    let mut records = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let xf = sample_batch(&data.forget.train, cfg.batch_size, &mut forget_rng)?;
        let xr = sample_batch(&data.retain.train, cfg.batch_size, &mut retain_rng)?;
        let target = plan.target_for(frozen, cfg, &xf, &xr)?;
        let eval =
            total_loss_and_gradient(&model, frozen, &xf, &xr, &target, cfg.alpha).map_err(|e| {
                match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        phase: "unlearning",
                        step,
                    },
                    other => other,
                }
            })?;
        if !eval.total_loss.is_finite() {
            return Err(Error::Diverged {
                phase: "unlearning",
                step,
            });
        }
        let grad_norm =
            (eval.grad_w2.frobenius_norm().powi(2) + eval.grad_b2.frobenius_norm().powi(2)).sqrt();
        opt.step(
            &mut [&mut model.w2, &mut model.b2],
            &[&eval.grad_w2, &eval.grad_b2],
        )
        .map_err(|_| Error::Diverged {
            phase: "unlearning",
            step,
        })?;
        let record = StepRecord {
            step,
            forget_loss: eval.forget_loss,
            retain_loss: eval.retain_loss,
            total_loss: eval.total_loss,
            grad_norm,
        };
        on_step(&record);
        records.push(record);
    }

    if let Some(name) = model.first_frozen_difference(frozen) {
        return Err(Error::FrozenMutated(name));
    }
    Ok(UnlearnOutcome {
        model,
        records,
        plan,
    })
}
