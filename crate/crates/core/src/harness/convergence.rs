use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{wilson, Interval, Z95};
use crate::alphabet::Opinion;
use crate::error::Result;
use crate::random::derive_seed;

/// Longest dense window of per-time counters kept in memory; wider windows are strided.
const MAX_WINDOW: u64 = 1 << 20;

/// Something whose designated agent can be observed over repeated independent trials.
pub trait TrialSystem: Sync {
    fn label(&self) -> String;

    /// "steps" or "rounds".
    fn time_unit(&self) -> &'static str;

    /// Time after which the system no longer changes, if any.
    fn horizon(&self) -> Option<u64> {
        None
    }

    /// Runs one trial with correct opinion `eta` up to time `end`. For every recorded
    /// time `t = start + i·stride ≤ end` at which the designated agent guesses `eta`,
    /// increments `hits[i]`.
    fn run_trial(&self, seed: u64, eta: Opinion, start: u64, stride: u64, end: u64, hits: &mut [u32]) -> Result<()>;

    /// Number of correct guesses at time `t` over `trials` fresh trials, when the system
    /// can compute it without simulating every trial step by step.
    fn probe_count(&self, _seed: u64, _eta: Opinion, _t: u64, _trials: u64) -> Option<u64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceOptions {
    /// Trials per correct opinion and horizon probe.
    pub trials: u64,
    /// Accept when the Wilson lower bound reaches `2/3 − margin`.
    pub margin: f64,
    pub cap: u64,
    pub seed: u64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            trials: 2000,
            margin: 0.02,
            cap: 10_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    /// Smallest accepted time, `None` when the cap was reached first.
    pub time: Option<u64>,
    pub cap: u64,
    pub unit: String,
    /// Correct-guess frequency at `time` for the worse of the two correct opinions
    /// (at the cap when not converged).
    pub frequency: f64,
    pub ci: Interval,
    /// Frequencies for correct opinion 0 and 1 at the same time.
    pub per_opinion: [f64; 2],
    pub trials: u64,
    pub seed: u64,
    pub method: String,
}

impl ConvergenceResult {
    pub fn converged(&self) -> bool {
        self.time.is_some()
    }
}

struct Probe {
    time: u64,
    counts: [u64; 2],
}

/// Smallest time at which the designated agent holds the correct opinion with
/// probability at least 2/3, for both values of the correct opinion.
///
/// Systems with a closed-form probe use doubling then bisection with fresh trials at
/// every probe. The others are simulated: each doubling stage runs fresh trials to the
/// end of the stage and counts correct guesses at every time of the stage, so a single
/// pass resolves the whole stage.
pub fn convergence_time<S: TrialSystem + ?Sized>(system: &S, options: ConvergenceOptions) -> Result<ConvergenceResult> {
    let threshold = 2.0 / 3.0 - options.margin;
    let cap = match system.horizon() {
        Some(h) => options.cap.min(h.max(1)),
        None => options.cap,
    };
    let accept = |counts: [u64; 2]| {
        counts
            .iter()
            .all(|&c| wilson(c, options.trials, Z95).lower >= threshold)
    };
    let probe_mode = system
        .probe_count(options.seed, Opinion::Zero, 1, 1)
        .is_some();
    let (found, last, method) = if probe_mode {
        let (f, l) = search_by_probes(system, options, cap, &accept);
        (f, l, "probe")
    } else {
        let (f, l) = search_by_windows(system, options, cap, &accept)?;
        (f, l, "trajectory")
    };
    let probe = found.as_ref().unwrap_or(&last);
    let per_opinion = probe.counts.map(|c| c as f64 / options.trials as f64);
    let worst = probe.counts.iter().copied().min().unwrap_or(0);
    Ok(ConvergenceResult {
        time: found.as_ref().map(|p| p.time),
        cap,
        unit: system.time_unit().to_string(),
        frequency: worst as f64 / options.trials as f64,
        ci: wilson(worst, options.trials, Z95),
        per_opinion,
        trials: options.trials,
        seed: options.seed,
        method: method.to_string(),
    })
}

fn search_by_probes<S: TrialSystem + ?Sized>(
    system: &S,
    options: ConvergenceOptions,
    cap: u64,
    accept: &dyn Fn([u64; 2]) -> bool,
) -> (Option<Probe>, Probe) {
    let probe = |t: u64| -> Probe {
        let counts = Opinion::BOTH.map(|eta| {
            let seed = derive_seed(options.seed, &[eta.index() as u64, t]);
            system
                .probe_count(seed, eta, t, options.trials)
                .expect("probe mode")
        });
        Probe { time: t, counts }
    };
    let mut lo = 0;
    let mut hi = 1.min(cap);
    let mut best = loop {
        let p = probe(hi);
        if accept(p.counts) {
            break p;
        }
        if hi >= cap {
            return (None, p);
        }
        lo = hi;
        hi = (hi * 2).min(cap);
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let p = probe(mid);
        if accept(p.counts) {
            hi = mid;
            best = p;
        } else {
            lo = mid;
        }
    }
    let last = Probe {
        time: best.time,
        counts: best.counts,
    };
    (Some(best), last)
}

fn search_by_windows<S: TrialSystem + ?Sized>(
    system: &S,
    options: ConvergenceOptions,
    cap: u64,
    accept: &dyn Fn([u64; 2]) -> bool,
) -> Result<(Option<Probe>, Probe)> {
    // a known horizon that fits in one window is resolved in a single stage
    let single = system.horizon().is_some() && cap <= MAX_WINDOW;
    let mut start = 1u64;
    let mut end = if single { cap } else { 1 };
    let mut stage = 0u64;
    loop {
        let width = end - start + 1;
        let stride = width.div_ceil(MAX_WINDOW).max(1);
        let slots = (width - 1) / stride + 1;
        let mut counts = [Vec::new(), Vec::new()];
        for eta in Opinion::BOTH {
            let hits = (0..options.trials)
                .into_par_iter()
                .try_fold(
                    || vec![0u32; slots as usize],
                    |mut acc, trial| -> Result<Vec<u32>> {
                        let seed = derive_seed(options.seed, &[eta.index() as u64, stage, trial]);
                        system.run_trial(seed, eta, start, stride, end, &mut acc)?;
                        Ok(acc)
                    },
                )
                .try_reduce(
                    || vec![0u32; slots as usize],
                    |mut a, b| {
                        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                        Ok(a)
                    },
                )?;
            counts[eta.index()] = hits;
        }
        for i in 0..slots as usize {
            let c = [counts[0][i] as u64, counts[1][i] as u64];
            if accept(c) {
                let p = Probe {
                    time: start + i as u64 * stride,
                    counts: c,
                };
                return Ok((Some(p), Probe { time: 0, counts: [0, 0] }));
            }
        }
        if end >= cap {
            let i = slots as usize - 1;
            let last = Probe {
                time: start + i as u64 * stride,
                counts: [counts[0][i] as u64, counts[1][i] as u64],
            };
            return Ok((None, last));
        }
        start = end + 1;
        end = (end * 2).min(cap);
        stage += 1;
    }
}
