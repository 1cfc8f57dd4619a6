//! Perturbation directions and activation targets.
//!
//! SRMU drives forget activations toward `c_map · (V ⊙ I_norm)` with a fixed
//! sign vector `V`. RMU drives them toward `c · u` for a random unit vector
//! `u`; Adaptive RMU replaces `c` with `β` times the mean activation norm of
//! the frozen model on the current forget batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Target construction used by SRMU and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `c_map · (V ⊙ I_norm)`
    Full,
    /// All-zero target.
    ZeroTarget,
    /// `c_map · V`, importance dropped.
    NoNormUniform,
    /// `c_map · I_norm`
    FixedPlus,
    /// `−c_map · I_norm`
    FixedMinus,
    /// `c_map · (r ⊙ I_norm)` with `r` uniform in `[0, 1)`.
    RandomUnitInterval,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::ZeroTarget,
        Variant::NoNormUniform,
        Variant::FixedPlus,
        Variant::FixedMinus,
        Variant::RandomUnitInterval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ZeroTarget => "zero-target",
            Variant::NoNormUniform => "no-norm-uniform",
            Variant::FixedPlus => "fixed-plus",
            Variant::FixedMinus => "fixed-minus",
            Variant::RandomUnitInterval => "random-unit-interval",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

/// `d` independent fair signs.
pub fn sample_direction(d: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "direction width must be positive".into(),
        ));
    }
    Ok((0..d).map(|_| rng.sign()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisdirectionSpec {
    pub variant: Variant,
    pub c_map: f64,
    /// `V ∈ {−1, +1}^d`, drawn once per run.
    pub signs: Vec<f64>,
    /// `r ∈ [0, 1)^d`, only for [`Variant::RandomUnitInterval`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_interval: Option<Vec<f64>>,
}

impl MisdirectionSpec {
    pub fn sample(d: usize, c_map: f64, variant: Variant, rng: &mut SeededRng) -> Result<Self> {
        if !c_map.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "c_map must be finite, got {c_map}"
            )));
        }
        let signs = sample_direction(d, rng)?;
        let unit_interval = (variant == Variant::RandomUnitInterval)
            .then(|| (0..d).map(|_| rng.next_f64()).collect());
        Ok(MisdirectionSpec {
            variant,
            c_map,
            signs,
            unit_interval,
        })
    }

    pub fn width(&self) -> usize {
        self.signs.len()
    }
}

/// Forget-side activation target for one SRMU run.
pub fn build_target(spec: &MisdirectionSpec, importance: &[f64]) -> Result<Vec<f64>> {
    let d = spec.width();
    if importance.len() != d {
        return Err(Error::InvalidArgument(format!(
            "importance map has {} dimensions, direction has {d}",
            importance.len()
        )));
    }
    let c = spec.c_map;
    let target: Vec<f64> = match spec.variant {
        Variant::Full => spec
            .signs
            .iter()
            .zip(importance)
            .map(|(v, i)| c * v * i)
            .collect(),
        Variant::ZeroTarget => vec![0.0; d],
        Variant::NoNormUniform => spec.signs.iter().map(|v| c * v).collect(),
        Variant::FixedPlus => importance.iter().map(|i| c * i).collect(),
        Variant::FixedMinus => importance.iter().map(|i| -c * i).collect(),
        Variant::RandomUnitInterval => {
            let r = spec.unit_interval.as_ref().ok_or_else(|| {
                Error::InvalidArgument("random-unit-interval spec without sampled r".into())
            })?;
            r.iter().zip(importance).map(|(r, i)| c * r * i).collect()
        }
    };
    // c_map = 0 gives −0.0 in some variants; keep the zero target canonical.
    Ok(target
        .into_iter()
        .map(|v| if v == 0.0 { 0.0 } else { v })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmuSpec {
    /// Unit-norm random direction.
    pub u: Vec<f64>,
    /// Fixed coefficient; unused when `adaptive` is set.
    pub c: f64,
    pub adaptive: bool,
    /// Norm multiplier for the adaptive rule.
    pub beta: f64,
}

/// Uniform `[0, 1)` entries scaled to unit Euclidean norm.
pub fn sample_unit_direction(d: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "direction width must be positive".into(),
        ));
    }
    loop {
        let raw: Vec<f64> = (0..d).map(|_| rng.next_f64()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return Ok(raw.into_iter().map(|v| v / norm).collect());
        }
    }
}

impl RmuSpec {
    pub fn fixed(d: usize, c: f64, rng: &mut SeededRng) -> Result<Self> {
        Ok(RmuSpec {
            u: sample_unit_direction(d, rng)?,
            c,
            adaptive: false,
            beta: 0.0,
        })
    }

    pub fn adaptive(d: usize, beta: f64, rng: &mut SeededRng) -> Result<Self> {
        Ok(RmuSpec {
            u: sample_unit_direction(d, rng)?,
            c: 0.0,
            adaptive: true,
            beta,
        })
    }

    /// Coefficient applied to `u`: `c`, or `β · norm` in adaptive mode.
    pub fn coefficient(&self, frozen_activation_norm: Option<f64>) -> Result<f64> {
        if !self.adaptive {
            return Ok(self.c);
        }
        match frozen_activation_norm {
            Some(n) if n.is_finite() && n >= 0.0 => Ok(self.beta * n),
            Some(n) => Err(Error::InvalidArgument(format!(
                "activation norm must be finite and >= 0, got {n}"
            ))),
            None => Err(Error::InvalidArgument(
                "adaptive RMU needs the frozen activation norm".into(),
            )),
        }
    }
}

pub fn rmu_target(spec: &RmuSpec, frozen_activation_norm: Option<f64>) -> Result<Vec<f64>> {
    let k = spec.coefficient(frozen_activation_norm)?;
    Ok(spec.u.iter().map(|u| k * u).collect())
}
