//! Distances between finite distributions and the inequalities the lower bounds use.
//!
//! Divergences are in bits. Summation is compensated (Kahan).

use serde::Serialize;

use crate::error::{Error, Result};

/// Probabilities must sum to 1 within this tolerance.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

/// Budget on the number of histories enumerated by [`chain_rule_kl`].
pub const CHAIN_RULE_BUDGET: u128 = 1 << 24;

#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::default();
        for x in iter {
            k.add(x);
        }
        k
    }
}

/// Probability vector over `0..len` (symbol indices).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteDistribution {
    probs: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Distribution("empty support".into()));
        }
        if let Some(p) = probs.iter().find(|p| **p < 0.0 || !p.is_finite()) {
            return Err(Error::Distribution(format!("invalid probability {p}")));
        }
        let total = probs.iter().copied().collect::<KahanSum>().value();
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::Distribution(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(len: usize) -> Self {
        Self {
            probs: vec![1.0 / len as f64; len],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }
}

fn same_support(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// `½ Σ |P(x) − Q(x)|`.
pub fn total_variation(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    same_support(&p.probs, &q.probs)?;
    Ok(0.5 * l1_distance(&p.probs, &q.probs))
}

pub(crate) fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .collect::<KahanSum>()
        .value()
}

/// `Σ P(x) log2(P(x)/Q(x))` with `0·log(0/q) = 0`.
pub fn kl_divergence(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    same_support(&p.probs, &q.probs)?;
    kl_bits(&p.probs, &q.probs)
}

pub(crate) fn kl_bits(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut acc = KahanSum::default();
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            return Err(Error::AbsoluteContinuity { symbol: i, p: a });
        }
        acc.add(a * (a / b).log2());
    }
    // Gibbs: clamp tiny negative rounding
    Ok(acc.value().max(0.0))
}

/// A process over `Σ^T` given by conditional laws for the two types `η ∈ {0, 1}`.
pub trait ConditionalProcess {
    fn alphabet_size(&self) -> usize;

    /// `Pr(X_η^{(t)} = · | history)` where `t = history.len() + 1`.
    fn law(&self, eta: usize, history: &[u16]) -> Vec<f64>;
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainRuleReport {
    /// KL of the joint laws of the first `T` observations, enumerated directly.
    pub joint: f64,
    /// `E_{x^{<t} ~ P0} KL(P0(·|x^{<t}), P1(·|x^{<t}))` for `t = 1..=T`.
    pub per_step: Vec<f64>,
    pub chain_sum: f64,
}

/// Evaluates both sides of the KL chain rule by exhaustive enumeration of `Σ^T`.
pub fn chain_rule_kl<P: ConditionalProcess + ?Sized>(process: &P, horizon: usize) -> Result<ChainRuleReport> {
    let k = process.alphabet_size();
    let leaves = (k as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if leaves > CHAIN_RULE_BUDGET {
        return Err(Error::Budget {
            requested: leaves,
            budget: CHAIN_RULE_BUDGET,
        });
    }
    let mut joint = KahanSum::default();
    let mut per_step = vec![KahanSum::default(); horizon];
    let mut history = Vec::with_capacity(horizon);
    walk_chain(process, horizon, &mut history, 1.0, 1.0, &mut joint, &mut per_step)?;
    let per_step: Vec<f64> = per_step.iter().map(KahanSum::value).collect();
    let chain_sum = per_step.iter().copied().collect::<KahanSum>().value();
    Ok(ChainRuleReport {
        joint: joint.value(),
        per_step,
        chain_sum,
    })
}

fn walk_chain<P: ConditionalProcess + ?Sized>(
    process: &P,
    horizon: usize,
    history: &mut Vec<u16>,
    p0: f64,
    p1: f64,
    joint: &mut KahanSum,
    per_step: &mut [KahanSum],
) -> Result<()> {
    if p0 == 0.0 {
        return Ok(());
    }
    let t = history.len();
    if t == horizon {
        if p1 == 0.0 {
            return Err(Error::AbsoluteContinuity { symbol: 0, p: p0 });
        }
        joint.add(p0 * (p0 / p1).log2());
        return Ok(());
    }
    let l0 = process.law(0, history);
    let l1 = process.law(1, history);
    per_step[t].add(p0 * kl_bits(&l0, &l1)?);
    for m in 0..l0.len() {
        history.push(m as u16);
        walk_chain(process, horizon, history, p0 * l0[m], p1 * l1[m], joint, per_step)?;
        history.pop();
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct FloorBoundCheck {
    pub l1: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
    /// Whether every probability was inside `[δ, 1 − δ]`.
    pub precondition_met: bool,
}

/// `Σ |P − Q| ≤ 2(1 − 2δ)` for distributions floored at δ and capped at `1 − δ`.
pub fn l1_floor_bound_check(p: &FiniteDistribution, q: &FiniteDistribution, delta: f64) -> Result<FloorBoundCheck> {
    same_support(&p.probs, &q.probs)?;
    let tol = 1e-15;
    let precondition_met = p
        .probs
        .iter()
        .chain(&q.probs)
        .all(|&x| x >= delta - tol && x <= 1.0 - delta + tol);
    let l1 = l1_distance(&p.probs, &q.probs);
    let bound = 2.0 * (1.0 - 2.0 * delta);
    Ok(FloorBoundCheck {
        l1,
        bound,
        slack: bound - l1,
        holds: l1 <= bound + 1e-12,
        precondition_met,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// `|ln(1+x) − x + x²/2| ≤ |x|³ / (3(1−a)³)` for `|x| ≤ a < 1` (natural log).
pub fn taylor_log_bound_check(x: f64, a: f64) -> Result<TaylorCheck> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("a = {a} must lie in (0, 1)")));
    }
    if x.abs() > a {
        return Err(Error::Domain(format!("|x| = {} exceeds a = {a}", x.abs())));
    }
    let lhs = log_remainder(x).abs();
    let rhs = x.abs().powi(3) / (3.0 * (1.0 - a).powi(3));
    Ok(TaylorCheck {
        lhs,
        rhs,
        slack: rhs - lhs,
        holds: lhs <= rhs * (1.0 + 1e-12) + 1e-300,
    })
}

/// `ln(1+x) − x + x²/2`. Near zero the direct difference cancels to noise, so the
/// alternating series `Σ_{k≥3} (−1)^{k+1} x^k / k` is summed instead.
fn log_remainder(x: f64) -> f64 {
    if x.abs() >= 0.1 {
        return x.ln_1p() - x + 0.5 * x * x;
    }
    let mut acc = KahanSum::default();
    let mut power = x * x * x;
    for k in 3..60 {
        let term = power / k as f64;
        acc.add(if k % 2 == 1 { term } else { -term });
        if term.abs() <= f64::EPSILON * 1e-3 * acc.value().abs() {
            break;
        }
        power *= x;
    }
    acc.value()
}

#[derive(Debug, Clone, Serialize)]
pub struct NeymanPearson {
    /// `1 − TV(P, Q)`: the smallest `P(decide Q) + Q(decide P)` of any test.
    pub min_error: f64,
    /// Likelihood-ratio test: `true` where it decides for Q (`Q(x) > P(x)`).
    pub decide_q: Vec<bool>,
    /// Error sum of the likelihood-ratio test.
    pub test_error: f64,
    /// Best error over all `2^|support|` deterministic tests, when `|support| ≤ 16`.
    pub exhaustive_min: Option<f64>,
}

pub fn test_error(p: &[f64], q: &[f64], decide_q: &[bool]) -> f64 {
    p.iter()
        .zip(q)
        .zip(decide_q)
        .map(|((&a, &b), &d)| if d { a } else { b })
        .collect::<KahanSum>()
        .value()
}

pub fn neyman_pearson_error(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<NeymanPearson> {
    same_support(&p.probs, &q.probs)?;
    let min_error = 1.0 - total_variation(p, q)?;
    let decide_q: Vec<bool> = p.probs.iter().zip(&q.probs).map(|(a, b)| b > a).collect();
    let test_err = test_error(&p.probs, &q.probs, &decide_q);
    let exhaustive_min = (p.len() <= 16).then(|| {
        let k = p.len();
        let mut mask = vec![false; k];
        (0u32..1 << k)
            .map(|bits| {
                for (i, m) in mask.iter_mut().enumerate() {
                    *m = bits >> i & 1 == 1;
                }
                test_error(&p.probs, &q.probs, &mask)
            })
            .fold(f64::INFINITY, f64::min)
    });
    Ok(NeymanPearson {
        min_error,
        decide_q,
        test_error: test_err,
        exhaustive_min,
    })
}
