//! Adaptive coin distinguishing: instances, the bounded family, optimal distinguishers
//! and the closed-form lower bounds.
//!
//! An instance gives, for each hidden type η and every finite history, the law of the
//! next observation. Histories are symbol indices (`u16`).

mod bounds;
mod construct;
mod distinguisher;

use std::collections::HashMap;

use serde::Serialize;

pub use crate::infotheory::ConditionalProcess;
use crate::error::{Error, Result};
use crate::random::SharedRandomness;

pub use bounds::{
    lower_bound_samples, theorem_bound_rounds, BoundModel, SampleBound, TheoremBound,
    SIMPLIFIED_CONSTANT, W_COEFFICIENT_CAP,
};
pub use construct::{
    build_empirical_instance, build_exact_instance, EmpiricalInstance, CONSTRUCTION_BUDGET,
};
pub use distinguisher::{
    empirical_sample_complexity, optimal_distinguisher_error, DistinguisherReport, ErrorMode,
    MapTest, SampleComplexity, SearchOptions,
};

/// Exact-mode enumeration budget on `|Σ|^T`.
pub const EXACT_BUDGET: u128 = 1 << 20;

/// Symbols whose `|ε(m, x)|` is at most this are treated as ε-inactive.
pub const EPSILON_ZERO: f64 = 1e-12;

/// A coin-distinguishing instance.
pub trait AcdtInstance: ConditionalProcess + Sync {
    /// When the observations are i.i.d. given η, the two per-observation laws.
    fn iid_laws(&self) -> Option<[Vec<f64>; 2]> {
        None
    }
}

/// The canonical source instance: sources display η, everyone else displays `0`,
/// binary symmetric noise δ. Observations are i.i.d. given η.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CanonicalInstance {
    pub n: usize,
    pub s: usize,
    pub delta: f64,
}

impl CanonicalInstance {
    pub fn new(n: usize, s: usize, delta: f64) -> Result<Self> {
        if n == 0 || s > n {
            return Err(Error::Parameter(format!("invalid n = {n}, s = {s}")));
        }
        if !(0.0..=0.5).contains(&delta) {
            return Err(Error::Parameter(format!("δ = {delta} outside [0, 1/2]")));
        }
        Ok(Self { n, s, delta })
    }

    pub fn likelihoods(&self) -> [f64; 2] {
        crate::protocols::canonical_likelihoods(self.n, self.s, self.delta)
    }

    pub fn epsilon(&self) -> f64 {
        crate::configuration::epsilon_bound(self.n, self.s, self.delta)
    }
}

impl ConditionalProcess for CanonicalInstance {
    fn alphabet_size(&self) -> usize {
        2
    }

    fn law(&self, eta: usize, _history: &[u16]) -> Vec<f64> {
        let p = self.likelihoods()[eta];
        vec![1.0 - p, p]
    }
}

impl AcdtInstance for CanonicalInstance {
    fn iid_laws(&self) -> Option<[Vec<f64>; 2]> {
        Some([self.law(0, &[]), self.law(1, &[])])
    }
}

/// Fixed per-observation laws for the two types.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IidInstance {
    pub laws: [Vec<f64>; 2],
}

impl ConditionalProcess for IidInstance {
    fn alphabet_size(&self) -> usize {
        self.laws[0].len()
    }

    fn law(&self, eta: usize, _history: &[u16]) -> Vec<f64> {
        self.laws[eta].clone()
    }
}

impl AcdtInstance for IidInstance {
    fn iid_laws(&self) -> Option<[Vec<f64>; 2]> {
        Some(self.laws.clone())
    }
}

/// Instance defined by a closure `(η, history) -> law`.
pub struct FnInstance<F> {
    alphabet_size: usize,
    law: F,
}

impl<F> FnInstance<F>
where
    F: Fn(usize, &[u16]) -> Vec<f64> + Sync,
{
    pub fn new(alphabet_size: usize, law: F) -> Self {
        Self { alphabet_size, law }
    }
}

impl<F> ConditionalProcess for FnInstance<F>
where
    F: Fn(usize, &[u16]) -> Vec<f64> + Sync,
{
    fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    fn law(&self, eta: usize, history: &[u16]) -> Vec<f64> {
        (self.law)(eta, history)
    }
}

impl<F> AcdtInstance for FnInstance<F> where F: Fn(usize, &[u16]) -> Vec<f64> + Sync {}

/// Conditional laws stored per history up to a horizon. A law is `None` when the
/// history has probability zero under that type.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TabularInstance {
    pub alphabet_size: usize,
    pub horizon: usize,
    pub(crate) table: HashMap<Vec<u16>, [Option<Vec<f64>>; 2]>,
}

impl TabularInstance {
    pub fn new(alphabet_size: usize, horizon: usize) -> Self {
        Self {
            alphabet_size,
            horizon,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, history: Vec<u16>, laws: [Option<Vec<f64>>; 2]) {
        self.table.insert(history, laws);
    }

    pub fn get(&self, history: &[u16]) -> Option<&[Option<Vec<f64>>; 2]> {
        self.table.get(history)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl ConditionalProcess for TabularInstance {
    fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    /// Histories outside the table (or impossible for η) get the uniform law; they
    /// carry zero probability under η and never influence errors.
    fn law(&self, eta: usize, history: &[u16]) -> Vec<f64> {
        self.table
            .get(history)
            .and_then(|laws| laws[eta].clone())
            .unwrap_or_else(|| vec![1.0 / self.alphabet_size as f64; self.alphabet_size])
    }
}

impl AcdtInstance for TabularInstance {}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonProfile {
    /// `ε(m, x) = Pr(X_1 = m | x) − Pr(X_0 = m | x)`.
    pub per_symbol: Vec<f64>,
    /// `Σ_m |ε(m, x)|`.
    pub d: f64,
}

/// ℓ1 gap between the two conditional laws after `history`.
pub fn d_epsilon<I: AcdtInstance + ?Sized>(instance: &I, history: &[u16]) -> EpsilonProfile {
    profile_of(&instance.law(0, history), &instance.law(1, history))
}

fn profile_of(l0: &[f64], l1: &[f64]) -> EpsilonProfile {
    let per_symbol: Vec<f64> = l1.iter().zip(l0).map(|(a, b)| a - b).collect();
    let d = crate::infotheory::l1_distance(l1, l0);
    EpsilonProfile { per_symbol, d }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateMode {
    Exhaustive,
    Sampled,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundedFamilyCertificate {
    pub claimed_epsilon: f64,
    pub claimed_delta: f64,
    /// Largest `d_ε` over the checked histories.
    pub epsilon_max: f64,
    /// Smallest conditional probability of an ε-active symbol (either type).
    pub delta_observed: f64,
    pub horizon: usize,
    pub histories_checked: u64,
    pub mode: CertificateMode,
    pub pass: bool,
    /// A history where a condition fails.
    pub witness: Option<Vec<u16>>,
    pub witness_reason: Option<String>,
}

/// Checks membership in the bounded family with parameters `(ε, δ)` on all histories of
/// length `< horizon` (exhaustive when `Σ_L |Σ|^L ≤ budget`, sampled otherwise).
pub fn verify_bounded_family<I: AcdtInstance + ?Sized>(
    instance: &I,
    epsilon: f64,
    delta: f64,
    horizon: usize,
    budget: u128,
) -> BoundedFamilyCertificate {
    let k = instance.alphabet_size() as u128;
    let total: u128 = (0..horizon as u32)
        .map(|l| k.checked_pow(l).unwrap_or(u128::MAX))
        .fold(0u128, |a, b| a.saturating_add(b));
    let mut cert = BoundedFamilyCertificate {
        claimed_epsilon: epsilon,
        claimed_delta: delta,
        epsilon_max: 0.0,
        delta_observed: f64::INFINITY,
        horizon,
        histories_checked: 0,
        mode: CertificateMode::Exhaustive,
        pass: true,
        witness: None,
        witness_reason: None,
    };
    if total <= budget {
        let mut history = Vec::with_capacity(horizon);
        check_all(instance, horizon, &mut history, &mut cert);
    } else {
        cert.mode = CertificateMode::Sampled;
        let samples = budget.min(100_000) as u64;
        let rng = SharedRandomness::new(0x5eed_ce87);
        for i in 0..samples {
            let len = rng.below(0, i, 0, horizon.max(1));
            let eta = rng.below(0, i, 1, 2);
            let mut history = Vec::with_capacity(len);
            for j in 0..len {
                let law = instance.law(eta, &history);
                history.push(sample_index(&law, rng.unit(1, i, j as u64)) as u16);
            }
            check_one(instance, &history, &mut cert);
        }
    }
    if cert.delta_observed == f64::INFINITY {
        cert.delta_observed = 1.0;
    }
    cert
}

fn check_all<I: AcdtInstance + ?Sized>(
    instance: &I,
    horizon: usize,
    history: &mut Vec<u16>,
    cert: &mut BoundedFamilyCertificate,
) {
    if history.len() >= horizon {
        return;
    }
    check_one(instance, history, cert);
    for m in 0..instance.alphabet_size() {
        history.push(m as u16);
        check_all(instance, horizon, history, cert);
        history.pop();
    }
}

fn check_one<I: AcdtInstance + ?Sized>(instance: &I, history: &[u16], cert: &mut BoundedFamilyCertificate) {
    cert.histories_checked += 1;
    let l0 = instance.law(0, history);
    let l1 = instance.law(1, history);
    let profile = profile_of(&l0, &l1);
    cert.epsilon_max = cert.epsilon_max.max(profile.d);
    let mut fail = |reason: String| {
        if cert.pass {
            cert.pass = false;
            cert.witness = Some(history.to_vec());
            cert.witness_reason = Some(reason);
        }
    };
    if profile.d > cert.claimed_epsilon + EPSILON_ZERO {
        fail(format!("d_ε = {} exceeds ε = {}", profile.d, cert.claimed_epsilon));
    }
    for (m, e) in profile.per_symbol.iter().enumerate() {
        if e.abs() <= EPSILON_ZERO {
            continue;
        }
        let floor = l0[m].min(l1[m]);
        cert.delta_observed = cert.delta_observed.min(floor);
        if floor < cert.claimed_delta - EPSILON_ZERO {
            fail(format!(
                "symbol {m} has ε ≠ 0 but probability {floor} below δ = {}",
                cert.claimed_delta
            ));
        }
    }
}

pub(crate) fn sample_index(law: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in law.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eta_independent_instance_has_zero_gap() {
        let inst = FnInstance::new(3, |_eta, h: &[u16]| {
            let b = (h.len() % 3) as f64 * 0.1;
            vec![0.2 + b, 0.5 - b, 0.3]
        });
        for h in [&[][..], &[0, 1], &[2, 2, 2]] {
            assert_eq!(d_epsilon(&inst, h).d, 0.0);
        }
        let cert = verify_bounded_family(&inst, 0.0, 0.4, 5, EXACT_BUDGET);
        assert!(cert.pass);
        assert_eq!(cert.histories_checked, 1 + 3 + 9 + 27 + 81);
    }

    #[test]
    fn canonical_gap_equals_epsilon_bound() {
        let inst = CanonicalInstance::new(10, 1, 0.2).unwrap();
        let p = d_epsilon(&inst, &[1, 0, 1]);
        assert_abs_diff_eq!(p.d, 0.12, epsilon = 1e-15);
        assert_abs_diff_eq!(p.per_symbol.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        let cert = verify_bounded_family(&inst, inst.epsilon(), 0.2, 8, EXACT_BUDGET);
        assert!(cert.pass, "{cert:?}");
        assert_eq!(cert.mode, CertificateMode::Exhaustive);
        assert_abs_diff_eq!(cert.epsilon_max, 0.12, epsilon = 1e-15);
        assert_abs_diff_eq!(cert.delta_observed, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn floor_violation_has_witness() {
        // after seeing symbol 1 the active symbol drops to δ/2
        let delta = 0.2;
        let inst = FnInstance::new(2, move |eta, h: &[u16]| {
            let low = if h.last() == Some(&1) { delta / 2.0 } else { 0.3 };
            let p1 = if eta == 1 { low + 0.02 } else { low };
            vec![1.0 - p1, p1]
        });
        let cert = verify_bounded_family(&inst, 0.1, delta, 4, EXACT_BUDGET);
        assert!(!cert.pass);
        let w = cert.witness.unwrap();
        assert_eq!(w.last(), Some(&1));
        assert_abs_diff_eq!(cert.delta_observed, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn sampled_mode_when_over_budget() {
        let inst = CanonicalInstance::new(10, 1, 0.2).unwrap();
        let cert = verify_bounded_family(&inst, 0.12, 0.2, 30, 1000);
        assert_eq!(cert.mode, CertificateMode::Sampled);
        assert!(cert.pass);
        assert_eq!(cert.histories_checked, 1000);
    }

    proptest::proptest! {
        #[test]
        fn per_symbol_gaps_sum_to_zero(raw in proptest::collection::vec(0.001f64..1.0, 8)) {
            let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
            let inst = IidInstance { laws: [norm(&raw[..4]), norm(&raw[4..])] };
            let p = d_epsilon(&inst, &[]);
            proptest::prop_assert!(p.per_symbol.iter().sum::<f64>().abs() <= 1e-12);
        }
    }
}
