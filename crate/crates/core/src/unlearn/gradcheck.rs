//! Finite-difference check of the target-layer gradient on a 6-unit model.

use serde::{Deserialize, Serialize};

use super::{total_loss_and_gradient, Method};
use crate::error::Result;
use crate::importance::{summarize_activations, FusionConfig, ImportanceMap};
use crate::misdirect::{build_target, rmu_target, MisdirectionSpec, RmuSpec, Variant};
use crate::model::{ModelConfig, ToyModel};
use crate::numerics::{finite_diff_gradient, max_relative_error, Matrix, SeededRng};

pub const GRADCHECK_WIDTH: usize = 6;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub seed: u64,
    pub method: Method,
    pub variant: Variant,
    pub alpha: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub case: GradcheckCase,
    pub max_relative_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

/// `n` cases cycling through every SRMU variant and both baselines, with
/// per-case seeds, α and coefficients drawn from `seed`.
pub fn random_cases(n: usize, seed: u64) -> Vec<GradcheckCase> {
    let combos: Vec<(Method, Variant)> = Variant::ALL
        .into_iter()
        .map(|v| (Method::Srmu, v))
        .chain([
            (Method::Rmu, Variant::Full),
            (Method::AdaptiveRmu, Variant::Full),
        ])
        .collect();
    let mut rng = SeededRng::new(seed).split("gradcheck/cases");
    (0..n)
        .map(|i| {
            let (method, variant) = combos[i % combos.len()];
            GradcheckCase {
                seed: rng.next_u64(),
                method,
                variant,
                alpha: [0.0, 1.0, 120.0, 1200.0][rng.below(4)],
                coefficient: rng.uniform(0.5, 10.0),
            }
        })
        .collect()
}

fn random_inputs(rows: usize, cols: usize, rng: &mut SeededRng) -> Result<Matrix> {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.uniform(0.0, 2.0)).collect(),
    )
}

fn case_target(
    case: &GradcheckCase,
    frozen: &ToyModel,
    xf: &Matrix,
    xr: &Matrix,
    rng: &SeededRng,
) -> Result<Vec<f64>> {
    let d = frozen.config.target;
    match case.method {
        Method::Srmu => {
            let summary =
                summarize_activations(frozen, std::slice::from_ref(xf), std::slice::from_ref(xr))?;
            let map = ImportanceMap::build(&summary, FusionConfig::default())?;
            let spec = MisdirectionSpec::sample(
                d,
                case.coefficient,
                case.variant,
                &mut rng.split("direction"),
            )?;
            build_target(&spec, &map.normalized)
        }
        Method::Rmu => {
            let spec = RmuSpec::fixed(d, case.coefficient, &mut rng.split("direction"))?;
            rmu_target(&spec, None)
        }
        Method::AdaptiveRmu => {
            let spec = RmuSpec::adaptive(d, case.coefficient, &mut rng.split("direction"))?;
            let h0 = frozen.target_activations(xf)?;
            let mean_norm = (0..h0.rows())
                .map(|i| h0.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                .sum::<f64>()
                / h0.rows() as f64;
            rmu_target(&spec, Some(mean_norm))
        }
    }
}

/// Compares the analytic `(W2, b2)` gradient of the total loss with central
/// differences. The updated model is a perturbed copy of the frozen one so
/// the retain term is active.
pub fn check_case(case: &GradcheckCase) -> Result<GradcheckReport> {
    let rng = SeededRng::new(case.seed);
    let config = ModelConfig {
        input: GRADCHECK_WIDTH,
        hidden: GRADCHECK_WIDTH,
        target: GRADCHECK_WIDTH,
        ..ModelConfig::default()
    };
    let frozen = ToyModel::new(config, rng.split("model").next_u64())?;
    let mut model = frozen.clone();
    let mut noise = rng.split("perturb");
    model
        .w2
        .update_in_place("perturb", |_, v| v + noise.uniform(-0.1, 0.1))?;
    model
        .b2
        .update_in_place("perturb", |_, v| v + noise.uniform(-0.1, 0.1))?;
    let mut data = rng.split("batches");
    let xf = random_inputs(4, GRADCHECK_WIDTH, &mut data)?;
    let xr = random_inputs(4, GRADCHECK_WIDTH, &mut data)?;
    let target = case_target(case, &frozen, &xf, &xr, &rng)?;

    let analytic = total_loss_and_gradient(&model, &frozen, &xf, &xr, &target, case.alpha)?;
    let loss_at = |m: &ToyModel| {
        total_loss_and_gradient(m, &frozen, &xf, &xr, &target, case.alpha)
            .map_or(f64::NAN, |e| e.total_loss)
    };
    let mut probe = model.clone();
    let numeric_w2 = finite_diff_gradient(
        |w| {
            probe.w2 = w.clone();
            loss_at(&probe)
        },
        &model.w2,
        STEP,
    )?;
    let mut probe = model.clone();
    let numeric_b2 = finite_diff_gradient(
        |b| {
            probe.b2 = b.clone();
            loss_at(&probe)
        },
        &model.b2,
        STEP,
    )?;
    let err = max_relative_error(&analytic.grad_w2, &numeric_w2, FLOOR)?.max(max_relative_error(
        &analytic.grad_b2,
        &numeric_b2,
        FLOOR,
    )?);
    Ok(GradcheckReport {
        case: *case,
        max_relative_error: err,
    })
}
