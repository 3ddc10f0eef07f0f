//! Running sequential-PULL and parallel-PULL(k) protocols on top of broadcast-PULL.
//!
//! Sequential: every broadcast step, the shared coin elects one processing agent and
//! everyone else ignores the sample. The coin is read from the same address the native
//! sequential scheduler uses for its observer, so coupled runs coincide step by step.
//!
//! Parallel: a simulated round is `k·n` broadcast steps; step `i` of the round belongs to
//! agent `(i mod n) + 1`, which buffers it. At the last step of the round every agent
//! feeds its `k` buffered samples to the wrapped protocol in arrival order and closes
//! the round. Displays therefore stay fixed for the whole round, as in the native model.

use rayon::prelude::*;
use serde::Serialize;

use crate::alphabet::{Alphabet, Opinion, Symbol};
use crate::configuration::{charge_configuration, AgentId, ChargedConfiguration, NeutralConfiguration, SourceStateSpec};
use crate::error::{Error, Result};
use crate::harness::stats::{chi_square_two_sample, ks_two_sample, TestResult};
use crate::models::{ModelKind, Observer, Population, PopulationOptions};
use crate::noise::NoiseMatrix;
use crate::protocols::{AgentSetup, Observation, Protocol, StepContext};
use crate::random::{derive_seed, SharedRandomness, COMMON_STREAM};

/// A sequential-PULL protocol packaged for broadcast-PULL.
#[derive(Debug, Clone, Copy)]
pub struct SequentialInBroadcast<'a, P> {
    inner: &'a P,
    n: usize,
}

pub fn simulate_sequential_in_broadcast<P: Protocol>(protocol: &P, n: usize) -> SequentialInBroadcast<'_, P> {
    SequentialInBroadcast { inner: protocol, n }
}

impl<P> SequentialInBroadcast<'_, P> {
    /// The agent that processes broadcast step `step`.
    pub fn processor(&self, randomness: &SharedRandomness, step: u64) -> AgentId {
        AgentId::from_index(randomness.below(COMMON_STREAM, step, 0, self.n))
    }
}

impl<P: Protocol> Protocol for SequentialInBroadcast<'_, P> {
    type State = P::State;

    fn name(&self) -> &'static str {
        "sequential-in-broadcast"
    }

    fn alphabet(&self) -> &Alphabet {
        self.inner.alphabet()
    }

    fn init(&self, setup: &AgentSetup<'_>) -> P::State {
        self.inner.init(setup)
    }

    fn displayed(&self, state: &P::State) -> Symbol {
        self.inner.displayed(state)
    }

    fn guess(&self, state: &P::State) -> Opinion {
        self.inner.guess(state)
    }

    fn on_observe(&self, state: &mut P::State, observation: Observation, ctx: &StepContext<'_>) {
        if self.processor(ctx.randomness, ctx.time) == ctx.agent {
            self.inner.on_observe(state, observation, ctx);
        }
    }

    fn horizon(&self) -> Option<u64> {
        self.inner.horizon()
    }
}

/// A parallel-PULL(k) protocol packaged for broadcast-PULL.
#[derive(Debug, Clone, Copy)]
pub struct ParallelInBroadcast<'a, P> {
    inner: &'a P,
    n: usize,
    k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferedState<S> {
    pub inner: S,
    /// Samples received in the current simulated round, in arrival order.
    pub buffer: Vec<Observation>,
}

pub fn simulate_parallel_k_in_broadcast<P: Protocol>(
    protocol: &P,
    n: usize,
    k: usize,
) -> Result<ParallelInBroadcast<'_, P>> {
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k = {k} outside 1..={n}")));
    }
    Ok(ParallelInBroadcast { inner: protocol, n, k })
}

impl<P> ParallelInBroadcast<'_, P> {
    /// Broadcast steps per simulated round.
    pub fn steps_per_round(&self) -> u64 {
        (self.k * self.n) as u64
    }

    /// The agent that receives broadcast step `step`.
    pub fn receiver(&self, step: u64) -> AgentId {
        AgentId::from_index(((step % self.steps_per_round()) % self.n as u64) as usize)
    }
}

impl<P: Protocol> Protocol for ParallelInBroadcast<'_, P> {
    type State = BufferedState<P::State>;

    fn name(&self) -> &'static str {
        "parallel-in-broadcast"
    }

    fn alphabet(&self) -> &Alphabet {
        self.inner.alphabet()
    }

    fn init(&self, setup: &AgentSetup<'_>) -> Self::State {
        BufferedState {
            inner: self.inner.init(setup),
            buffer: Vec::with_capacity(self.k),
        }
    }

    fn displayed(&self, state: &Self::State) -> Symbol {
        self.inner.displayed(&state.inner)
    }

    fn guess(&self, state: &Self::State) -> Opinion {
        self.inner.guess(&state.inner)
    }

    fn on_observe(&self, state: &mut Self::State, observation: Observation, ctx: &StepContext<'_>) {
        let per_round = self.steps_per_round();
        if self.receiver(ctx.time) == ctx.agent {
            state.buffer.push(observation);
        }
        if ctx.time % per_round == per_round - 1 {
            let round_ctx = StepContext {
                agent: ctx.agent,
                time: ctx.time / per_round,
                randomness: ctx.randomness,
            };
            for obs in state.buffer.drain(..) {
                self.inner.on_observe(&mut state.inner, obs, &round_ctx);
            }
            self.inner.on_round_end(&mut state.inner, &round_ctx);
        }
    }

    fn horizon(&self) -> Option<u64> {
        self.inner.horizon().map(|h| h * self.steps_per_round())
    }
}

/// Runs `rounds` simulated rounds on a broadcast population and checks that exactly
/// `k·n` broadcast steps were spent per round. Returns the number of steps.
pub fn run_simulated_rounds<P: Protocol>(
    population: &mut Population<'_, ParallelInBroadcast<'_, P>>,
    wrapper: &ParallelInBroadcast<'_, P>,
    rounds: u64,
) -> Result<u64> {
    let start = population.time();
    if !start.is_multiple_of(wrapper.steps_per_round()) {
        return Err(Error::Parameter("population is not at a round boundary".into()));
    }
    for _ in 0..rounds * wrapper.steps_per_round() {
        population.step_broadcast();
    }
    let used = population.time() - start;
    if used != rounds * wrapper.steps_per_round() {
        return Err(Error::Parameter(format!(
            "step counter overhead {used} differs from {} per {rounds} rounds",
            wrapper.steps_per_round()
        )));
    }
    Ok(used)
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub steps: u64,
    pub identical: bool,
    /// First step (1-based) where the native and simulated traces disagree.
    pub first_mismatch: Option<u64>,
    pub final_states_equal: bool,
}

/// Runs native sequential-PULL and its broadcast simulation on the same seed and
/// compares the `(processor, observed, received)` triples step by step.
pub fn sequential_coupling_check<P: Protocol>(
    protocol: &P,
    noise: &NoiseMatrix,
    config: &ChargedConfiguration,
    seed: u64,
    steps: u64,
) -> Result<CouplingReport> {
    let randomness = SharedRandomness::new(seed);
    let options = PopulationOptions::default();
    let wrapper = simulate_sequential_in_broadcast(protocol, config.n());
    let mut native = Population::new(protocol, noise, config, randomness, options)?;
    let mut simulated = Population::new(&wrapper, noise, config, randomness, options)?;
    let mut first_mismatch = None;
    for t in 0..steps {
        let a = native.step_sequential();
        let b = simulated.step_broadcast();
        let processor = wrapper.processor(&randomness, t);
        let same = a.observer == Observer::Agent(processor)
            && a.observed == b.observed
            && a.displayed == b.displayed
            && a.received == b.received;
        if !same && first_mismatch.is_none() {
            first_mismatch = Some(t + 1);
        }
    }
    Ok(CouplingReport {
        steps,
        identical: first_mismatch.is_none(),
        first_mismatch,
        final_states_equal: native.states() == simulated.states(),
    })
}

fn pair_index(observer: AgentId, observed: AgentId, n: usize) -> usize {
    observer.index() * n + observed.index()
}

/// Chi-square homogeneity test of `(observer, observed)` pair counts: native
/// sequential-PULL against the broadcast simulation, on independent seeds.
pub fn sequential_pair_chi_square<P: Protocol>(
    protocol: &P,
    noise: &NoiseMatrix,
    config: &ChargedConfiguration,
    steps: u64,
    seed: u64,
) -> Result<TestResult> {
    let n = config.n();
    let options = PopulationOptions::default();
    let mut native_counts = vec![0u64; n * n];
    let mut native = Population::new(protocol, noise, config, SharedRandomness::new(derive_seed(seed, &[0])), options)?;
    for _ in 0..steps {
        let e = native.step_sequential();
        if let Observer::Agent(u) = e.observer {
            native_counts[pair_index(u, e.observed, n)] += 1;
        }
    }
    let wrapper = simulate_sequential_in_broadcast(protocol, n);
    let randomness = SharedRandomness::new(derive_seed(seed, &[1]));
    let mut sim = Population::new(&wrapper, noise, config, randomness, options)?;
    let mut sim_counts = vec![0u64; n * n];
    for t in 0..steps {
        let e = sim.step_broadcast();
        sim_counts[pair_index(wrapper.processor(&randomness, t), e.observed, n)] += 1;
    }
    chi_square_two_sample(&native_counts, &sim_counts)
}

/// Chi-square homogeneity test of `(agent, observed)` sample counts: native
/// parallel-PULL(k) with replacement against the broadcast simulation.
pub fn parallel_sample_chi_square<P: Protocol>(
    protocol: &P,
    noise: &NoiseMatrix,
    config: &ChargedConfiguration,
    k: usize,
    rounds: u64,
    seed: u64,
) -> Result<TestResult> {
    let n = config.n();
    let options = PopulationOptions {
        capture_trace: true,
        ..PopulationOptions::default()
    };
    let mut native_counts = vec![0u64; n * n];
    let mut native = Population::new(protocol, noise, config, SharedRandomness::new(derive_seed(seed, &[0])), options)?;
    for _ in 0..rounds {
        native.round_parallel_pull(k, false)?;
        for e in native.take_trace() {
            if let Observer::Agent(u) = e.observer {
                native_counts[pair_index(u, e.observed, n)] += 1;
            }
        }
    }
    let wrapper = simulate_parallel_k_in_broadcast(protocol, n, k)?;
    let randomness = SharedRandomness::new(derive_seed(seed, &[1]));
    let mut sim = Population::new(&wrapper, noise, config, randomness, PopulationOptions::default())?;
    let mut sim_counts = vec![0u64; n * n];
    for _ in 0..rounds * wrapper.steps_per_round() {
        let step = sim.time();
        let e = sim.step_broadcast();
        sim_counts[pair_index(wrapper.receiver(step), e.observed, n)] += 1;
    }
    chi_square_two_sample(&native_counts, &sim_counts)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceComparison {
    pub trials: usize,
    pub cap_rounds: u64,
    pub native_mean: f64,
    pub simulated_mean: f64,
    pub native_censored: usize,
    pub simulated_censored: usize,
    pub ks: TestResult,
    /// Broadcast steps per simulated round, checked on every trial.
    pub steps_per_round: u64,
}

/// First round (1-based) after which the designated agent guesses the correct opinion,
/// natively and through the reduction, over independent trials; compared by a
/// two-sample KS test. Runs that never get there count as `cap_rounds + 1`.
#[allow(clippy::too_many_arguments)]
pub fn parallel_convergence_ks<P: Protocol>(
    protocol: &P,
    noise: &NoiseMatrix,
    n: usize,
    s: usize,
    k: usize,
    trials: usize,
    cap_rounds: u64,
    seed: u64,
) -> Result<ConvergenceComparison> {
    let neutral = NeutralConfiguration::uniform(n)?;
    let spec = SourceStateSpec::DisplayOpinion;
    let wrapper = simulate_parallel_k_in_broadcast(protocol, n, k)?;
    let per_round = wrapper.steps_per_round();
    let run = |trial: usize, simulated: bool| -> Result<u64> {
        let randomness = SharedRandomness::new(derive_seed(seed, &[simulated as u64, trial as u64]));
        let config = charge_configuration(&neutral, s, &spec, 1, &randomness)?;
        let target = config.designated_agent().expect("s < n");
        let eta = config.correct_opinion;
        if simulated {
            let mut pop = Population::new(&wrapper, noise, &config, randomness, PopulationOptions::default())?;
            for r in 1..=cap_rounds {
                let used = run_simulated_rounds(&mut pop, &wrapper, 1)?;
                debug_assert_eq!(used, per_round);
                if pop.guess(target) == eta {
                    return Ok(r);
                }
            }
        } else {
            let mut pop = Population::new(protocol, noise, &config, randomness, PopulationOptions::default())?;
            for r in 1..=cap_rounds {
                pop.advance(ModelKind::pull(k))?;
                if pop.guess(target) == eta {
                    return Ok(r);
                }
            }
        }
        Ok(cap_rounds + 1)
    };
    let collect = |simulated: bool| -> Result<Vec<u64>> {
        (0..trials).into_par_iter().map(|t| run(t, simulated)).collect()
    };
    let native = collect(false)?;
    let simulated = collect(true)?;
    let as_f64 = |v: &[u64]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len().max(1) as f64;
    let censored = |v: &[u64]| v.iter().filter(|&&x| x > cap_rounds).count();
    Ok(ConvergenceComparison {
        trials,
        cap_rounds,
        native_mean: mean(&native),
        simulated_mean: mean(&simulated),
        native_censored: censored(&native),
        simulated_censored: censored(&simulated),
        ks: ks_two_sample(&as_f64(&native), &as_f64(&simulated))?,
        steps_per_round: per_round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{EchoProtocol, FixedDisplay, StructuredNoise};

    fn charged(n: usize, s: usize, seed: u64) -> ChargedConfiguration {
        let neutral = NeutralConfiguration::uniform(n).unwrap();
        charge_configuration(&neutral, s, &SourceStateSpec::DisplayOpinion, 1, &SharedRandomness::new(seed)).unwrap()
    }

    #[test]
    fn coupled_sequential_traces_are_identical() {
        let noise = NoiseMatrix::binary_symmetric(0.2).unwrap();
        let protocol = EchoProtocol::new(Alphabet::binary());
        let config = charged(7, 2, 3);
        let r = sequential_coupling_check(&protocol, &noise, &config, 11, 5000).unwrap();
        assert!(r.identical, "{r:?}");
        assert!(r.final_states_equal);
    }

    #[test]
    fn single_agent_processes_every_step() {
        let protocol = FixedDisplay::binary_zero();
        let wrapper = simulate_sequential_in_broadcast(&protocol, 1);
        let rand = SharedRandomness::new(5);
        for t in 0..100 {
            assert_eq!(wrapper.processor(&rand, t), AgentId(1));
        }
    }

    #[test]
    fn buffers_hold_k_samples_and_flush_at_round_end() {
        let noise = NoiseMatrix::binary_symmetric(0.1).unwrap();
        let protocol = EchoProtocol::new(Alphabet::binary());
        let (n, k) = (5, 3);
        let config = charged(n, 1, 2);
        let wrapper = simulate_parallel_k_in_broadcast(&protocol, n, k).unwrap();
        let mut pop = Population::new(&wrapper, &noise, &config, SharedRandomness::new(1), PopulationOptions::default()).unwrap();
        let before: Vec<_> = pop.states().iter().map(|s| s.inner.clone()).collect();
        for _ in 0..wrapper.steps_per_round() - 1 {
            pop.step_broadcast();
            let after: Vec<_> = pop.states().iter().map(|s| s.inner.clone()).collect();
            assert_eq!(after, before, "processed before the round ended");
        }
        assert!(pop.states().iter().all(|s| s.buffer.len() == k || (s.buffer.len() == k - 1)));
        let last = pop.states()[n - 1].buffer.len();
        assert_eq!(last, k - 1);
        pop.step_broadcast();
        assert!(pop.states().iter().all(|s| s.buffer.is_empty()));
        assert_eq!(pop.time(), (k * n) as u64);
        let used = run_simulated_rounds(&mut pop, &wrapper, 4).unwrap();
        assert_eq!(used, 4 * (k * n) as u64);
    }

    #[test]
    fn pair_frequencies_match() {
        let noise = NoiseMatrix::binary_symmetric(0.2).unwrap();
        let protocol = FixedDisplay::binary_zero();
        let config = charged(4, 1, 9);
        let seq = sequential_pair_chi_square(&protocol, &noise, &config, 100_000, 1).unwrap();
        assert!(seq.p_value > 0.001, "{seq:?}");
        let par = parallel_sample_chi_square(&protocol, &noise, &config, 1, 20_000, 2).unwrap();
        assert!(par.p_value > 0.001, "{par:?}");
    }

    #[test]
    fn structured_convergence_matches_through_reduction() {
        let noise = NoiseMatrix::five_level(0.2).unwrap();
        let protocol = StructuredNoise::five_level();
        let cmp = parallel_convergence_ks(&protocol, &noise, 20, 1, 1, 200, 200, 7).unwrap();
        assert_eq!(cmp.steps_per_round, 20);
        assert_eq!(cmp.native_censored + cmp.simulated_censored, 0);
        assert!(cmp.ks.p_value > 0.001, "{cmp:?}");
    }
}
