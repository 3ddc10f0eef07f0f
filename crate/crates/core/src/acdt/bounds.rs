use serde::Serialize;

use crate::configuration::epsilon_bound;
use crate::error::{Error, Result};
use crate::models::ModelKind;

/// Constant of the simplified sample floor `0.14·δ/ε²`.
pub const SIMPLIFIED_CONSTANT: f64 = 0.14;
/// Cap on the KL coefficient in the small-ε regime.
pub const W_COEFFICIENT_CAP: f64 = 0.79;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleBound {
    pub epsilon: f64,
    pub delta: f64,
    /// `(ln 2 / 9) · 6(δ−ε)³ / (δ³ − δ²ε + 3δε² − ε³) · δ/ε²`.
    pub general: f64,
    /// `w` in `W(ε, δ) = w · ε²/δ`, the per-sample KL bound in bits.
    pub w_coefficient: f64,
    /// `W(ε, δ)`.
    pub kl_per_sample: f64,
    /// `1 / (9 W)`: the sample count at which `T·W` reaches `1/9`.
    pub from_kl: f64,
    /// `0.14·δ/ε²`, reported when `10ε < δ`.
    pub simplified: Option<f64>,
}

/// Minimal number of samples any distinguisher needs for error below 1/3 on an
/// instance of the bounded family with parameters `(ε, δ)`.
pub fn lower_bound_samples(epsilon: f64, delta: f64) -> Result<SampleBound> {
    if !(epsilon > 0.0 && delta <= 0.5) {
        return Err(Error::Domain(format!(
            "need 0 < ε < δ ≤ 1/2, got ε = {epsilon}, δ = {delta}"
        )));
    }
    if epsilon >= delta {
        return Err(Error::Domain(format!(
            "ε = {epsilon} must be below δ = {delta}"
        )));
    }
    let (e, d) = (epsilon, delta);
    let ln2 = std::f64::consts::LN_2;
    let denom = d.powi(3) - d * d * e + 3.0 * d * e * e - e.powi(3);
    let general = ln2 / 9.0 * 6.0 * (d - e).powi(3) / denom * d / (e * e);
    let w_coefficient = (0.5 + d * d * e / (3.0 * (d - e).powi(3))) / ln2;
    let kl_per_sample = w_coefficient * e * e / d;
    let simplified = if 10.0 * e < d {
        if w_coefficient > W_COEFFICIENT_CAP {
            return Err(Error::Domain(format!(
                "W coefficient {w_coefficient} exceeds {W_COEFFICIENT_CAP} at ε = {e}, δ = {d}"
            )));
        }
        Some(SIMPLIFIED_CONSTANT * d / (e * e))
    } else {
        None
    };
    Ok(SampleBound {
        epsilon,
        delta,
        general,
        w_coefficient,
        kl_per_sample,
        from_kl: 1.0 / (9.0 * kl_per_sample),
        simplified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundModel {
    /// Sequential-PULL or broadcast-PULL, counted in steps.
    Steps,
    /// Parallel-PULL(k), counted in rounds.
    Rounds { k: usize },
    /// Parallel-PULL(k) with reliably detectable sources, counted in rounds.
    ReliableRounds { k: usize },
}

impl BoundModel {
    pub fn from_model(model: ModelKind, reliable_sources: bool) -> Result<Self> {
        match (model, reliable_sources) {
            (ModelKind::SequentialPull | ModelKind::BroadcastPull, false) => Ok(BoundModel::Steps),
            (ModelKind::SequentialPull | ModelKind::BroadcastPull, true) => {
                Ok(BoundModel::ReliableRounds { k: 1 })
            }
            (ModelKind::ParallelPull { k, .. }, false) => Ok(BoundModel::Rounds { k }),
            (ModelKind::ParallelPull { k, .. }, true) => Ok(BoundModel::ReliableRounds { k }),
            (ModelKind::ParallelPush, _) => Err(Error::Parameter(
                "the lower bound does not apply to parallel-PUSH".into(),
            )),
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            BoundModel::Steps => "steps",
            _ => "rounds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremBound {
    pub model: BoundModel,
    pub n: usize,
    pub s: usize,
    pub delta: f64,
    pub epsilon: f64,
    /// The bound in the model's time unit; `+∞` when no information flows, `0` when the
    /// gap is not below δ (no non-trivial bound).
    pub value: f64,
    pub unit: &'static str,
    /// The underlying sample bound, when defined.
    pub samples: Option<SampleBound>,
    pub warnings: Vec<String>,
}

/// Converts the sample bound into a time bound for the given model.
///
/// * steps: the sample bound itself, since one broadcast sample is one step;
/// * parallel-PULL(k) rounds: the sample bound divided by `k·n`;
/// * reliable sources: the cube root of the sample bound, which is the fixed point of
///   `T = c·n²δ / ((sT)²(1−2δ)²)`.
pub fn theorem_bound_rounds(model: BoundModel, n: usize, s: usize, delta: f64) -> Result<TheoremBound> {
    if n < 2 || s == 0 || s >= n {
        return Err(Error::Parameter(format!("need 1 <= s < n, got s = {s}, n = {n}")));
    }
    if !(0.0..=0.5).contains(&delta) {
        return Err(Error::Parameter(format!("δ = {delta} outside [0, 1/2]")));
    }
    if let BoundModel::Rounds { k } | BoundModel::ReliableRounds { k } = model {
        if k == 0 || k > n {
            return Err(Error::Parameter(format!("k = {k} outside 1..={n}")));
        }
    }
    let epsilon = epsilon_bound(n, s, delta);
    let mut out = TheoremBound {
        model,
        n,
        s,
        delta,
        epsilon,
        value: 0.0,
        unit: model.unit(),
        samples: None,
        warnings: Vec::new(),
    };
    if epsilon <= 0.0 {
        out.value = f64::INFINITY;
        out.warnings
            .push("1 − 2δ = 0: observations carry no information, the bound is infinite".into());
        return Ok(out);
    }
    let regime = (1.0 - 2.0 * delta) / (delta * s as f64 * n as f64);
    if regime > 0.1 {
        out.warnings.push(format!(
            "outside the theorem's regime: (1−2δ)/(δsn) = {regime:.4} > 1/10"
        ));
    }
    if epsilon >= delta {
        out.warnings.push(format!(
            "ε = {epsilon:.4} ≥ δ = {delta}: the sample bound is vacuous, reporting 0"
        ));
        return Ok(out);
    }
    let samples = lower_bound_samples(epsilon, delta)?;
    out.value = match model {
        BoundModel::Steps => samples.general,
        BoundModel::Rounds { k } => samples.general / (k * n) as f64,
        BoundModel::ReliableRounds { .. } => samples.general.cbrt(),
    };
    out.samples = Some(samples);
    Ok(out)
}
