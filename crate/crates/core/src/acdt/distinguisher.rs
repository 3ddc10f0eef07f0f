use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use super::{sample_index, AcdtInstance, EXACT_BUDGET};
use crate::alphabet::Opinion;
use crate::error::{Error, Result};
use crate::harness::stats::{wilson, Z95};
use crate::infotheory::KahanSum;
use crate::random::{derive_seed, SharedRandomness};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ErrorMode {
    /// Exact Bayes error; fails when the instance is too large to enumerate.
    Exact,
    /// Monte Carlo estimate of the error of the exact posterior rule.
    MonteCarlo { trials: u64, seed: u64 },
    /// Exact when enumerable, Monte Carlo otherwise.
    Auto { trials: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistinguisherReport {
    pub horizon: usize,
    pub error: f64,
    /// Wilson 95% interval for Monte Carlo results, the point value otherwise.
    pub lower: f64,
    pub upper: f64,
    pub method: &'static str,
    pub trials: Option<u64>,
}

/// The maximum-a-posteriori test under a uniform prior: guess 1 exactly when the
/// history is strictly more likely under type 1.
pub struct MapTest<'a, I: ?Sized> {
    instance: &'a I,
}

impl<'a, I: AcdtInstance + ?Sized> MapTest<'a, I> {
    pub fn new(instance: &'a I) -> Self {
        Self { instance }
    }

    /// `ln Pr(x | η = 1) − ln Pr(x | η = 0)`; infinite when one side is impossible.
    pub fn log_likelihood_ratio(&self, history: &[u16]) -> f64 {
        let mut llr = 0.0;
        for t in 0..history.len() {
            let m = history[t] as usize;
            let l0 = self.instance.law(0, &history[..t])[m];
            let l1 = self.instance.law(1, &history[..t])[m];
            llr += step_llr(l0, l1);
            if llr.is_nan() {
                return 0.0;
            }
        }
        llr
    }

    pub fn decide(&self, history: &[u16]) -> Opinion {
        Opinion::from_bit(self.log_likelihood_ratio(history) > 0.0)
    }
}

fn step_llr(l0: f64, l1: f64) -> f64 {
    match (l0 > 0.0, l1 > 0.0) {
        (true, true) => l1.ln() - l0.ln(),
        (true, false) => f64::NEG_INFINITY,
        (false, true) => f64::INFINITY,
        (false, false) => 0.0,
    }
}

/// Bayes error of distinguishing η from `horizon` observations under a fair prior.
pub fn optimal_distinguisher_error<I: AcdtInstance + ?Sized>(
    instance: &I,
    horizon: usize,
    mode: ErrorMode,
) -> Result<DistinguisherReport> {
    if horizon == 0 {
        return Ok(point(0, 0.5, "exact-enumeration"));
    }
    let k = instance.alphabet_size();
    let iid = instance.iid_laws();
    let type_classes = compositions(horizon as u128, k as u128);
    let leaves = (k as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    let exact = |iid: &Option<[Vec<f64>; 2]>| -> Option<DistinguisherReport> {
        if let Some(laws) = iid {
            if type_classes <= EXACT_BUDGET {
                return Some(point(horizon, iid_exact(laws, horizon), "exact-type-class"));
            }
        }
        if leaves <= EXACT_BUDGET {
            return Some(point(horizon, enumerate_exact(instance, horizon), "exact-enumeration"));
        }
        None
    };
    match mode {
        ErrorMode::Exact => exact(&iid).ok_or(Error::Budget {
            requested: leaves.min(type_classes),
            budget: EXACT_BUDGET,
        }),
        ErrorMode::MonteCarlo { trials, seed } => Ok(monte_carlo(instance, iid, horizon, trials, seed)),
        ErrorMode::Auto { trials, seed } => match exact(&iid) {
            Some(r) => Ok(r),
            None => Ok(monte_carlo(instance, iid, horizon, trials, seed)),
        },
    }
}

fn point(horizon: usize, error: f64, method: &'static str) -> DistinguisherReport {
    DistinguisherReport {
        horizon,
        error,
        lower: error,
        upper: error,
        method,
        trials: None,
    }
}

/// Number of type classes (compositions of `t` into `k` parts), saturating.
fn compositions(t: u128, k: u128) -> u128 {
    if k == 0 {
        return 0;
    }
    // C(t + k − 1, k − 1)
    let mut c: u128 = 1;
    for i in 1..k {
        c = match c.checked_mul(t + i) {
            Some(v) => v / i,
            None => return u128::MAX,
        };
    }
    c
}

fn enumerate_exact<I: AcdtInstance + ?Sized>(instance: &I, horizon: usize) -> f64 {
    fn walk<I: AcdtInstance + ?Sized>(
        instance: &I,
        horizon: usize,
        history: &mut Vec<u16>,
        p: [f64; 2],
        acc: &mut KahanSum,
    ) {
        if history.len() == horizon {
            acc.add(0.5 * p[0].min(p[1]));
            return;
        }
        let l0 = instance.law(0, history);
        let l1 = instance.law(1, history);
        for m in 0..l0.len() {
            let next = [p[0] * l0[m], p[1] * l1[m]];
            if next[0] == 0.0 && next[1] == 0.0 {
                continue;
            }
            history.push(m as u16);
            walk(instance, horizon, history, next, acc);
            history.pop();
        }
    }
    let mut acc = KahanSum::default();
    walk(instance, horizon, &mut Vec::with_capacity(horizon), [1.0, 1.0], &mut acc);
    acc.value()
}

/// Exact error for i.i.d. observations by summing over type classes.
fn iid_exact(laws: &[Vec<f64>; 2], horizon: usize) -> f64 {
    let k = laws[0].len();
    let ln0: Vec<f64> = laws[0].iter().map(|p| p.ln()).collect();
    let ln1: Vec<f64> = laws[1].iter().map(|p| p.ln()).collect();
    let ln_t_fact = ln_gamma(horizon as f64 + 1.0);
    let mut acc = KahanSum::default();
    let mut counts = vec![0usize; k];
    fn term(c: usize, ln_p: f64) -> f64 {
        if c == 0 {
            0.0
        } else {
            c as f64 * ln_p
        }
    }
    fn rec(
        i: usize,
        left: usize,
        counts: &mut [usize],
        ln0: &[f64],
        ln1: &[f64],
        ln_t_fact: f64,
        acc: &mut KahanSum,
    ) {
        let k = counts.len();
        if i + 1 == k {
            counts[i] = left;
            let mut multi = ln_t_fact;
            let (mut a, mut b) = (0.0, 0.0);
            for (j, &c) in counts.iter().enumerate() {
                multi -= ln_gamma(c as f64 + 1.0);
                a += term(c, ln0[j]);
                b += term(c, ln1[j]);
            }
            let m = a.min(b);
            if m > f64::NEG_INFINITY {
                acc.add(0.5 * (multi + m).exp());
            }
            return;
        }
        for c in 0..=left {
            counts[i] = c;
            rec(i + 1, left - c, counts, ln0, ln1, ln_t_fact, acc);
        }
    }
    rec(0, horizon, &mut counts, &ln0, &ln1, ln_t_fact, &mut acc);
    acc.value()
}

fn monte_carlo<I: AcdtInstance + ?Sized>(
    instance: &I,
    iid: Option<[Vec<f64>; 2]>,
    horizon: usize,
    trials: u64,
    seed: u64,
) -> DistinguisherReport {
    let trials = trials.max(2);
    let rand = SharedRandomness::new(seed);
    let errors: u64 = (0..trials)
        .into_par_iter()
        .map(|i| {
            // stratified prior: even trials draw type 0, odd trials type 1
            let eta = (i % 2) as usize;
            let llr = match &iid {
                Some(laws) => iid_trial_llr(laws, eta, horizon, &rand, i),
                None => adaptive_trial_llr(instance, eta, horizon, &rand, i),
            };
            let guess = usize::from(llr > 0.0);
            u64::from(guess != eta)
        })
        .sum();
    let ci = wilson(errors, trials, Z95);
    DistinguisherReport {
        horizon,
        error: errors as f64 / trials as f64,
        lower: ci.lower,
        upper: ci.upper,
        method: "monte-carlo",
        trials: Some(trials),
    }
}

/// Draws the symbol counts of `horizon` i.i.d. observations as a chain of binomials.
fn iid_trial_llr(laws: &[Vec<f64>; 2], eta: usize, horizon: usize, rand: &SharedRandomness, trial: u64) -> f64 {
    let law = &laws[eta];
    let mut rng = rand.rng(trial, 0);
    let mut left = horizon as u64;
    let mut mass = 1.0;
    let mut llr = 0.0;
    for (m, &p) in law.iter().enumerate() {
        if left == 0 {
            break;
        }
        let c = if m + 1 == law.len() || mass <= p {
            left
        } else {
            let q = (p / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).expect("valid binomial").sample(&mut rng)
        };
        mass -= p;
        left -= c;
        if c > 0 {
            llr += c as f64 * step_llr(laws[0][m], laws[1][m]);
        }
    }
    if llr.is_nan() {
        0.0
    } else {
        llr
    }
}

fn adaptive_trial_llr<I: AcdtInstance + ?Sized>(
    instance: &I,
    eta: usize,
    horizon: usize,
    rand: &SharedRandomness,
    trial: u64,
) -> f64 {
    let mut history = Vec::with_capacity(horizon);
    let mut llr = 0.0;
    for t in 0..horizon {
        let l0 = instance.law(0, &history);
        let l1 = instance.law(1, &history);
        let law = if eta == 0 { &l0 } else { &l1 };
        let m = sample_index(law, rand.unit(trial, t as u64, 0));
        llr += step_llr(l0[m], l1[m]);
        if llr.is_infinite() {
            break;
        }
        history.push(m as u16);
    }
    if llr.is_nan() {
        0.0
    } else {
        llr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOptions {
    pub target: f64,
    pub mode: ErrorMode,
    pub max_horizon: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            target: 1.0 / 3.0,
            mode: ErrorMode::Auto {
                trials: 2000,
                seed: 0,
            },
            max_horizon: 1 << 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleComplexity {
    /// Smallest horizon whose error upper bound is at most the target.
    pub horizon: Option<usize>,
    pub report: Option<DistinguisherReport>,
    pub evaluations: Vec<DistinguisherReport>,
    /// The search hit `max_horizon` without reaching the target.
    pub exhausted: bool,
}

/// Doubling then bisection on the horizon; each probe is an
/// [`optimal_distinguisher_error`] evaluation with a probe-specific seed.
pub fn empirical_sample_complexity<I: AcdtInstance + ?Sized>(
    instance: &I,
    options: SearchOptions,
) -> Result<SampleComplexity> {
    let mut evaluations = Vec::new();
    let mut eval = |t: usize| -> Result<DistinguisherReport> {
        let mode = match options.mode {
            ErrorMode::Exact => ErrorMode::Exact,
            ErrorMode::MonteCarlo { trials, seed } => ErrorMode::MonteCarlo {
                trials,
                seed: derive_seed(seed, &[t as u64]),
            },
            ErrorMode::Auto { trials, seed } => ErrorMode::Auto {
                trials,
                seed: derive_seed(seed, &[t as u64]),
            },
        };
        let r = optimal_distinguisher_error(instance, t, mode)?;
        evaluations.push(r);
        Ok(r)
    };
    let accept = |r: &DistinguisherReport| r.upper <= options.target;
    let mut lo = 0usize;
    let mut hi = 1usize;
    let mut best;
    loop {
        let r = eval(hi)?;
        if accept(&r) {
            best = r;
            break;
        }
        if hi >= options.max_horizon {
            return Ok(SampleComplexity {
                horizon: None,
                report: None,
                evaluations,
                exhausted: true,
            });
        }
        lo = hi;
        hi = (hi * 2).min(options.max_horizon);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let r = eval(mid)?;
        if accept(&r) {
            hi = mid;
            best = r;
        } else {
            lo = mid;
        }
    }
    Ok(SampleComplexity {
        horizon: Some(hi),
        report: Some(best),
        evaluations,
        exhausted: false,
    })
}
