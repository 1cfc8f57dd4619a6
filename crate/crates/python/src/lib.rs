//! Python bindings for `srmu_core`.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use srmu_core::datagen::{generate, DatasetConfig, EntangledDataset};
use srmu_core::eval::{self, parse_grid};
use srmu_core::importance::{self as imp, ActivationSummary, Fusion, FusionConfig, ImportanceMap};
use srmu_core::misdirect::{self, MisdirectionSpec, Variant};
use srmu_core::model::{self, ModelConfig, PretrainConfig, Task, ToyModel};
use srmu_core::numerics::{Matrix, SeededRng};
use srmu_core::unlearn::{self, AdamWConfig, ImportanceMode, Method, UnlearnConfig};

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(py_err)
}

fn task(name: &str) -> PyResult<Task> {
    match name {
        "forget" => Ok(Task::Forget),
        "retain" => Ok(Task::Retain),
        other => Err(PyValueError::new_err(format!(
            "unknown task `{other}`, expected forget or retain"
        ))),
    }
}

fn summary(forget_mean: Vec<f64>, retain_mean: Vec<f64>) -> PyResult<ActivationSummary> {
    ActivationSummary::new(forget_mean, retain_mean).map_err(py_err)
}

/// Synthetic forget/retain dataset with controllable vocabulary overlap.
#[pyclass(name = "Dataset", module = "srmu", frozen)]
struct PyDataset {
    inner: EntangledDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (seed, rho=None, vocab_size=None, sample_length=None, train_per_class=None, test_per_class=None, zipf_exponent=None))]
    fn generate(
        seed: u64,
        rho: Option<f64>,
        vocab_size: Option<usize>,
        sample_length: Option<usize>,
        train_per_class: Option<usize>,
        test_per_class: Option<usize>,
        zipf_exponent: Option<f64>,
    ) -> PyResult<Self> {
        let d = DatasetConfig::default();
        let cfg = DatasetConfig {
            rho: rho.unwrap_or(d.rho),
            vocab_size: vocab_size.unwrap_or(d.vocab_size),
            sample_length: sample_length.unwrap_or(d.sample_length),
            train_per_class: train_per_class.unwrap_or(d.train_per_class),
            test_per_class: test_per_class.unwrap_or(d.test_per_class),
            zipf_exponent: zipf_exponent.unwrap_or(d.zipf_exponent),
            ..d
        };
        Ok(Self {
            inner: generate(&cfg, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: EntangledDataset::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn measured_overlap(&self) -> f64 {
        self.inner.measured_overlap
    }

    #[getter]
    fn input_width(&self) -> usize {
        self.inner.input_width()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Test-split feature rows for `task` ("forget" or "retain").
    fn test_features(&self, task_name: &str) -> PyResult<Vec<Vec<f64>>> {
        let split = match task(task_name)? {
            Task::Forget => &self.inner.forget,
            Task::Retain => &self.inner.retain,
        };
        let m = &split.test.features;
        Ok((0..m.rows()).map(|r| m.row(r).to_vec()).collect())
    }

    fn descriptor_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.descriptor()).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(seed={}, rho={}, overlap={:.4})",
            self.inner.seed, self.inner.config.rho, self.inner.measured_overlap
        )
    }
}

/// Two-layer trunk with a target layer and separate forget/retain heads.
#[pyclass(name = "Model", module = "srmu", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ToyModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input, seed, hidden=None, target=None))]
    fn new(
        input: usize,
        seed: u64,
        hidden: Option<usize>,
        target: Option<usize>,
    ) -> PyResult<Self> {
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            input,
            hidden: hidden.unwrap_or(d.hidden),
            target: target.unwrap_or(d.target),
            ..d
        };
        Ok(Self {
            inner: ToyModel::new(cfg, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ToyModel::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    /// Trains in place; returns the per-epoch losses.
    #[pyo3(signature = (dataset, seed, epochs=None, lr=None, batch_size=None))]
    fn pretrain(
        &mut self,
        dataset: &PyDataset,
        seed: u64,
        epochs: Option<usize>,
        lr: Option<f64>,
        batch_size: Option<usize>,
    ) -> PyResult<Vec<f64>> {
        let d = PretrainConfig::default();
        let cfg = PretrainConfig {
            epochs: epochs.unwrap_or(d.epochs),
            lr: lr.unwrap_or(d.lr),
            batch_size: batch_size.unwrap_or(d.batch_size),
        };
        let mut rng = SeededRng::new(seed).split("pretrain");
        let report =
            model::pretrain(&mut self.inner, &dataset.inner, &cfg, &mut rng).map_err(py_err)?;
        Ok(report.epoch_losses)
    }

    /// Test-split accuracy on "forget" or "retain".
    fn accuracy(&self, dataset: &PyDataset, task_name: &str) -> PyResult<f64> {
        let split = match task(task_name)? {
            Task::Forget => &dataset.inner.forget,
            Task::Retain => &dataset.inner.retain,
        };
        self.inner
            .accuracy(&split.test, task(task_name)?)
            .map_err(py_err)
    }

    fn target_activations(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = Matrix::from_rows(&rows).map_err(py_err)?;
        let h = self.inner.target_activations(&x).map_err(py_err)?;
        Ok((0..h.rows()).map(|r| h.row(r).to_vec()).collect())
    }

    #[getter]
    fn target_width(&self) -> usize {
        self.inner.config.target
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Model({}->{}->{}, seed={})",
            c.input, c.hidden, c.target, self.inner.seed
        )
    }
}

#[pyclass(name = "EvalReport", module = "srmu", frozen, get_all)]
struct PyEvalReport {
    forget_accuracy: f64,
    retain_accuracy: f64,
    forget_drift: f64,
    retain_drift: f64,
    chance_level: f64,
}

impl From<eval::EvalReport> for PyEvalReport {
    fn from(r: eval::EvalReport) -> Self {
        Self {
            forget_accuracy: r.forget_accuracy,
            retain_accuracy: r.retain_accuracy,
            forget_drift: r.forget_drift,
            retain_drift: r.retain_drift,
            chance_level: r.chance_level,
        }
    }
}

#[pymethods]
impl PyEvalReport {
    fn __repr__(&self) -> String {
        format!(
            "EvalReport(forget_accuracy={:.4}, retain_accuracy={:.4})",
            self.forget_accuracy, self.retain_accuracy
        )
    }
}

#[pyclass(name = "SweepRow", module = "srmu", frozen, get_all)]
struct PySweepRow {
    method: String,
    c: f64,
    seed: u64,
    forget_accuracy: f64,
    retain_accuracy: f64,
    forget_drift: f64,
    retain_drift: f64,
    on_front: bool,
}

impl PySweepRow {
    fn from_row(r: &eval::SweepRow) -> Self {
        Self {
            method: r.method.clone(),
            c: r.c,
            seed: r.seed,
            forget_accuracy: r.report.forget_accuracy,
            retain_accuracy: r.report.retain_accuracy,
            forget_drift: r.report.forget_drift,
            retain_drift: r.report.retain_drift,
            on_front: r.on_front,
        }
    }

    fn to_row(&self) -> eval::SweepRow {
        eval::SweepRow {
            method: self.method.clone(),
            c: self.c,
            seed: self.seed,
            report: eval::EvalReport {
                forget_accuracy: self.forget_accuracy,
                retain_accuracy: self.retain_accuracy,
                forget_drift: self.forget_drift,
                retain_drift: self.retain_drift,
                chance_level: 0.0,
            },
            on_front: self.on_front,
        }
    }
}

#[pymethods]
impl PySweepRow {
    fn __repr__(&self) -> String {
        format!(
            "SweepRow({}, c={}, seed={}, forget={:.4}, retain={:.4})",
            self.method, self.c, self.seed, self.forget_accuracy, self.retain_accuracy
        )
    }
}

#[pyfunction]
#[pyo3(signature = (forget_mean, retain_mean, eps=1e-6))]
fn fuse_ratio(forget_mean: Vec<f64>, retain_mean: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    imp::fuse_ratio(&summary(forget_mean, retain_mean)?, eps).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (forget_mean, retain_mean, lam=1.0))]
fn fuse_diff(forget_mean: Vec<f64>, retain_mean: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    imp::fuse_diff(&summary(forget_mean, retain_mean)?, lam).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (forget_mean, retain_mean, eps=1e-6))]
fn fuse_prod(forget_mean: Vec<f64>, retain_mean: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    imp::fuse_prod(&summary(forget_mean, retain_mean)?, eps).map_err(py_err)
}

#[pyfunction]
fn normalize(raw: Vec<f64>) -> Vec<f64> {
    imp::normalize(&raw)
}

/// Normalized importance map built from per-unit forget and retain activation means.
#[pyfunction]
#[pyo3(signature = (forget_mean, retain_mean, fusion="ratio", eps=1e-6, lam=1.0))]
fn importance_map(
    forget_mean: Vec<f64>,
    retain_mean: Vec<f64>,
    fusion: &str,
    eps: f64,
    lam: f64,
) -> PyResult<Vec<f64>> {
    let config = FusionConfig {
        fusion: parse::<Fusion>(fusion)?,
        eps,
        lambda: lam,
    };
    let map = ImportanceMap::build(&summary(forget_mean, retain_mean)?, config).map_err(py_err)?;
    Ok(map.normalized)
}

/// SRMU forget target for the given signs and normalized importance.
#[pyfunction]
#[pyo3(signature = (c_map, signs, importance, variant="full", unit_interval=None))]
fn build_target(
    c_map: f64,
    signs: Vec<f64>,
    importance: Vec<f64>,
    variant: &str,
    unit_interval: Option<Vec<f64>>,
) -> PyResult<Vec<f64>> {
    let spec = MisdirectionSpec {
        variant: parse::<Variant>(variant)?,
        c_map,
        signs,
        unit_interval,
    };
    misdirect::build_target(&spec, &importance).map_err(py_err)
}

#[pyfunction]
fn evaluate(model: &PyModel, frozen: &PyModel, dataset: &PyDataset) -> PyResult<PyEvalReport> {
    eval::evaluate(&model.inner, &frozen.inner, &dataset.inner)
        .map(Into::into)
        .map_err(py_err)
}

#[allow(clippy::too_many_arguments)]
fn unlearn_config(
    method: &str,
    coefficient: f64,
    variant: &str,
    fusion: &str,
    importance_mode: &str,
    lr: Option<f64>,
    steps: Option<usize>,
    alpha: Option<f64>,
    seed: u64,
) -> PyResult<UnlearnConfig> {
    let d = UnlearnConfig::default();
    let cfg = UnlearnConfig {
        method: parse::<Method>(method)?,
        variant: parse::<Variant>(variant)?,
        fusion: FusionConfig {
            fusion: parse::<Fusion>(fusion)?,
            ..d.fusion
        },
        importance_mode: parse::<ImportanceMode>(importance_mode)?,
        coefficient,
        optimizer: AdamWConfig::with_lr(lr.unwrap_or(unlearn::DESK_SCALE_LR)),
        steps: steps.unwrap_or(d.steps),
        alpha: alpha.unwrap_or(d.alpha),
        seed,
        ..d
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Runs one unlearning job from `frozen`; returns the updated model and the
/// per-step total losses.
#[pyfunction]
#[pyo3(signature = (frozen, dataset, method="srmu", coefficient=7.5, variant="full", fusion="ratio",
                    importance_mode="global", lr=None, steps=None, alpha=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn unlearn_run(
    py: Python<'_>,
    frozen: &PyModel,
    dataset: &PyDataset,
    method: &str,
    coefficient: f64,
    variant: &str,
    fusion: &str,
    importance_mode: &str,
    lr: Option<f64>,
    steps: Option<usize>,
    alpha: Option<f64>,
    seed: u64,
) -> PyResult<(PyModel, Vec<f64>)> {
    let cfg = unlearn_config(
        method,
        coefficient,
        variant,
        fusion,
        importance_mode,
        lr,
        steps,
        alpha,
        seed,
    )?;
    let out = py
        .detach(|| {
            unlearn::run_unlearning(frozen.inner.clone(), &frozen.inner, &dataset.inner, &cfg)
        })
        .map_err(py_err)?;
    let losses = out.records.iter().map(|r| r.total_loss).collect();
    Ok((PyModel { inner: out.model }, losses))
}

/// Unlearns at every coefficient of `grid` and every seed.
#[pyfunction]
#[pyo3(signature = (frozen, dataset, method="srmu", grid="1:170:10", seeds=vec![0], variant="full", lr=None, jobs=1))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    frozen: &PyModel,
    dataset: &PyDataset,
    method: &str,
    grid: &str,
    seeds: Vec<u64>,
    variant: &str,
    lr: Option<f64>,
    jobs: usize,
) -> PyResult<Vec<PySweepRow>> {
    let cfg = unlearn_config(method, 1.0, variant, "ratio", "global", lr, None, None, 0)?;
    let grid = parse_grid(grid).map_err(py_err)?;
    let label = if cfg.method == Method::Srmu && cfg.variant != Variant::Full {
        format!("srmu/{}", cfg.variant.as_str())
    } else {
        cfg.method.as_str().to_string()
    };
    let res = py
        .detach(|| {
            eval::sweep(
                &cfg,
                &label,
                &grid,
                &seeds,
                &frozen.inner,
                &dataset.inner,
                jobs.max(1),
            )
        })
        .map_err(py_err)?;
    if let Some(f) = res.failures.first() {
        return Err(PyValueError::new_err(format!(
            "{} c={} seed={}: {}",
            f.method, f.c, f.seed, f.message
        )));
    }
    Ok(res.rows.iter().map(PySweepRow::from_row).collect())
}

type Selections = Vec<(String, Option<PySweepRow>)>;

/// Matched-retention selection; returns `(method, selected row or None)`
/// pairs and the rendered table.
#[pyfunction]
fn compare(rows: Vec<PyRef<'_, PySweepRow>>) -> PyResult<(Selections, String)> {
    let rows: Vec<eval::SweepRow> = rows.iter().map(|r| r.to_row()).collect();
    let table = eval::compare_methods(&rows).map_err(py_err)?;
    let picks = table
        .selections
        .iter()
        .map(|s| (s.method.clone(), s.row.as_ref().map(PySweepRow::from_row)))
        .collect();
    Ok((picks, table.to_text()))
}

/// Largest relative error between analytic and finite-difference gradients
/// over `n` random cases.
#[pyfunction]
#[pyo3(signature = (n=20, seed=0))]
fn gradcheck(n: usize, seed: u64) -> PyResult<f64> {
    let mut worst = 0.0f64;
    for case in unlearn::random_cases(n, seed) {
        worst = worst.max(
            unlearn::check_case(&case)
                .map_err(py_err)?
                .max_relative_error,
        );
    }
    Ok(worst)
}

#[pymodule]
fn srmu(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEvalReport>()?;
    m.add_class::<PySweepRow>()?;
    m.add_function(wrap_pyfunction!(fuse_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_diff, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_prod, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(importance_map, m)?)?;
    m.add_function(wrap_pyfunction!(build_target, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(unlearn_run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("DESK_SCALE_LR", unlearn::DESK_SCALE_LR)?;
    m.add("GRADCHECK_TOLERANCE", unlearn::GRADCHECK_TOLERANCE)?;
    Ok(())
}
