use crate::alphabet::{Alphabet, Opinion, Symbol};
use crate::error::{Error, Result};

use super::{source_opinion, AgentSetup, Observation, Protocol, StepContext};

/// Probability of receiving symbol `1` in the canonical instance for each correct
/// opinion: sources display η, every other agent displays `0`, binary symmetric noise δ.
///
/// `P_η(1) = (s/n)·(η ? 1−δ : δ) + (1 − s/n)·δ`.
pub fn canonical_likelihoods(n: usize, s: usize, delta: f64) -> [f64; 2] {
    let f = s as f64 / n as f64;
    [f * delta + (1.0 - f) * delta, f * (1.0 - delta) + (1.0 - f) * delta]
}

/// Optimal observer for the canonical instance.
///
/// Non-sources display `0` and keep the log-likelihood ratio `ln P_1(x)/P_0(x)` of
/// everything they received; the guess is its sign with ties going to `0`.
#[derive(Debug, Clone)]
pub struct BayesObserver {
    alphabet: Alphabet,
    n: usize,
    s: usize,
    delta: f64,
    log_ratio: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesState {
    pub is_source: bool,
    pub own: Option<Opinion>,
    pub log_ratio: f64,
    pub observations: u64,
}

impl BayesObserver {
    pub fn new(n: usize, s: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(Error::Parameter(format!("δ = {delta} outside (0, 1/2]")));
        }
        if s > n || n == 0 {
            return Err(Error::Parameter(format!("invalid population n = {n}, s = {s}")));
        }
        let [p0, p1] = canonical_likelihoods(n, s, delta);
        Ok(Self {
            alphabet: Alphabet::binary(),
            n,
            s,
            delta,
            log_ratio: [((1.0 - p1) / (1.0 - p0)).ln(), (p1 / p0).ln()],
        })
    }

    pub fn params(&self) -> (usize, usize, f64) {
        (self.n, self.s, self.delta)
    }

    /// Posterior probability that the correct opinion is 1 under a uniform prior.
    pub fn posterior_one(state: &BayesState) -> f64 {
        1.0 / (1.0 + (-state.log_ratio).exp())
    }
}

impl Protocol for BayesObserver {
    type State = BayesState;

    fn name(&self) -> &'static str {
        "bayes-observer"
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn init(&self, setup: &AgentSetup<'_>) -> BayesState {
        BayesState {
            is_source: setup.is_source,
            own: if setup.is_source {
                source_opinion(setup)
            } else {
                None
            },
            log_ratio: 0.0,
            observations: 0,
        }
    }

    fn displayed(&self, state: &BayesState) -> Symbol {
        self.alphabet
            .opinion_symbol(state.own.unwrap_or_default())
    }

    fn guess(&self, state: &BayesState) -> Opinion {
        match state.own {
            Some(o) => o,
            None => Opinion::from_bit(state.log_ratio > 0.0),
        }
    }

    fn on_observe(&self, state: &mut BayesState, obs: Observation, _ctx: &StepContext<'_>) {
        if state.is_source {
            return;
        }
        state.log_ratio += self.log_ratio[obs.received.index()];
        state.observations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::{epsilon_bound, AgentId, AgentRecord};
    use crate::random::SharedRandomness;

    #[test]
    fn likelihood_gap_is_half_epsilon() {
        for (n, s, d) in [(10, 1, 0.2), (32, 2, 0.1), (512, 1, 0.2), (7, 3, 0.45)] {
            let [p0, p1] = canonical_likelihoods(n, s, d);
            let gap = p1 - p0;
            assert!((gap - s as f64 / n as f64 * (1.0 - 2.0 * d)).abs() < 1e-15);
            // ℓ1 distance over both symbols
            let l1 = (p1 - p0).abs() + ((1.0 - p1) - (1.0 - p0)).abs();
            assert!((l1 - epsilon_bound(n, s, d)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_observations_guess_zero() {
        let p = BayesObserver::new(10, 1, 0.2).unwrap();
        let r = SharedRandomness::new(0);
        let record = AgentRecord {
            id: AgentId(1),
            state: 0,
            opinion: Opinion::Zero,
        };
        let st = p.init(&AgentSetup {
            record: &record,
            is_source: false,
            n: 10,
            s: 1,
            randomness: &r,
        });
        assert_eq!(BayesObserver::posterior_one(&st), 0.5);
        assert_eq!(p.guess(&st), Opinion::Zero);
    }

    #[test]
    fn rejects_bad_delta() {
        assert!(BayesObserver::new(10, 1, 0.0).is_err());
        assert!(BayesObserver::new(10, 1, 0.6).is_err());
        assert!(BayesObserver::new(10, 1, 0.5).is_ok());
    }
}
