use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::convergence::{convergence_time, ConvergenceOptions};
use super::stats::{log_fit, log_log_fit, wilson, Interval, LinearFit, Z95};
use super::systems::{CanonicalObserverSystem, SimulatedSystem};
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::noise::NoiseMatrix;
use crate::protocols::PushTwoStage;
use crate::random::{derive_seed, SharedRandomness};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChernoffReport {
    pub n: usize,
    pub s: usize,
    pub rounds: u64,
    pub trials: u64,
    /// Mean of `|S(T)| − s`.
    pub mean_excess: f64,
    /// 95% normal interval for the mean.
    pub mean_ci: Interval,
    /// `s·T`, the mean of the dominating `Binomial(nT, s/n)` count.
    pub binomial_mean: f64,
    /// Empirical `Pr(|S(T)| > (11/10)·s·T)`.
    pub tail: f64,
    pub tail_ci: Interval,
    pub seed: u64,
}

/// Tracks `S(t)`, the sources together with every agent that has directly observed a
/// source, over `rounds` parallel-PULL(1) rounds (`n·rounds` observations).
///
/// Each non-source joins at the first round in which its own pull hits a source; those
/// rounds are independent geometric variables with success rate `s/n`, which is how a
/// trial is drawn.
pub fn chernoff_source_observers_check(n: usize, s: usize, rounds: u64, trials: u64, seed: u64) -> Result<ChernoffReport> {
    if s == 0 || s > n {
        return Err(Error::Parameter(format!("need 1 <= s <= n, got s = {s}, n = {n}")));
    }
    let trials = trials.max(2);
    let p = s as f64 / n as f64;
    let geometric = Geometric::new(p).map_err(|e| Error::Distribution(e.to_string()))?;
    let rand = SharedRandomness::new(seed);
    let excess: Vec<u64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rand.rng(i, 0);
            // failures before the first success, so the joining round is that plus one
            (0..n - s)
                .filter(|_| geometric.sample(&mut rng) < rounds)
                .count() as u64
        })
        .collect();
    let m = trials as f64;
    let mean = excess.iter().sum::<u64>() as f64 / m;
    let var = excess.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let half = Z95 * (var / m).sqrt();
    let limit = 1.1 * s as f64 * rounds as f64;
    let over = excess
        .iter()
        .filter(|&&x| (x + s as u64) as f64 > limit)
        .count() as u64;
    Ok(ChernoffReport {
        n,
        s,
        rounds,
        trials,
        mean_excess: mean,
        mean_ci: Interval {
            lower: mean - half,
            upper: mean + half,
        },
        binomial_mean: s as f64 * rounds as f64,
        tail: over as f64 / m,
        tail_ci: wilson(over, trials, Z95),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationPoint {
    pub n: usize,
    /// Convergence time in rounds, `None` if the cap was reached.
    pub time: Option<u64>,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub delta: f64,
    pub s: usize,
    pub trials: u64,
    pub seed: u64,
    pub push: Vec<SeparationPoint>,
    pub pull: Vec<SeparationPoint>,
    /// Time ratios between successive grid points.
    pub push_ratios: Vec<f64>,
    pub pull_ratios: Vec<f64>,
    /// PUSH time against `ln n`.
    pub push_log_fit: Option<LinearFit>,
    /// PULL time against `n` on log-log axes.
    pub pull_power_fit: Option<LinearFit>,
    pub push_max_ratio: f64,
    pub pull_min_ratio: f64,
    /// PUSH grows by at most 1.5× per grid step and PULL fits a power law of
    /// exponent at least 1.
    pub pass: bool,
    pub notes: Vec<String>,
}

/// Two-stage PUSH protocol on parallel-PUSH against the canonical observer on
/// parallel-PULL(1), over the same population sizes and noise level.
pub fn separation_experiment(ns: &[usize], delta: f64, s: usize, options: ConvergenceOptions) -> Result<SeparationReport> {
    if ns.len() < 2 {
        return Err(Error::Parameter("need at least two population sizes".into()));
    }
    let noise = NoiseMatrix::binary_symmetric(delta)?;
    let mut push = Vec::new();
    let mut pull = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let opts = |leg: u64| ConvergenceOptions {
            seed: derive_seed(options.seed, &[leg, i as u64]),
            ..options
        };
        let push_system = SimulatedSystem::new(PushTwoStage::for_population(n), noise.clone(), ModelKind::ParallelPush, n, s)?;
        let r = convergence_time(&push_system, opts(0))?;
        push.push(SeparationPoint {
            n,
            time: r.time,
            frequency: r.frequency,
        });
        let pull_system = CanonicalObserverSystem::new(ModelKind::pull(1), n, s, delta)?;
        let r = convergence_time(&pull_system, opts(1))?;
        pull.push(SeparationPoint {
            n,
            time: r.time,
            frequency: r.frequency,
        });
    }
    let ratios = |pts: &[SeparationPoint]| -> Vec<f64> {
        pts.windows(2)
            .map(|w| match (w[0].time, w[1].time) {
                (Some(a), Some(b)) => b as f64 / a as f64,
                _ => f64::NAN,
            })
            .collect()
    };
    let push_ratios = ratios(&push);
    let pull_ratios = ratios(&pull);
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let times = |pts: &[SeparationPoint]| -> Option<Vec<f64>> {
        pts.iter().map(|p| p.time.map(|t| t as f64)).collect()
    };
    let push_log_fit = times(&push).and_then(|t| log_fit(&xs, &t).ok());
    let pull_power_fit = times(&pull).and_then(|t| log_log_fit(&xs, &t).ok());
    let push_max_ratio = push_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pull_min_ratio = pull_ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mut notes = Vec::new();
    if delta == 0.0 {
        notes.push("without noise both models are fast; the separation needs δ > 0".into());
    }
    if push.iter().chain(&pull).any(|p| p.time.is_none()) {
        notes.push("some runs reached the horizon cap".into());
    }
    let pass = push_ratios.iter().all(|r| *r <= 1.5)
        && pull_power_fit.is_some_and(|f| f.slope >= 1.0);
    Ok(SeparationReport {
        delta,
        s,
        trials: options.trials,
        seed: options.seed,
        push,
        pull,
        push_ratios,
        pull_ratios,
        push_log_fit,
        pull_power_fit,
        push_max_ratio,
        pull_min_ratio,
        pass,
        notes,
    })
}
