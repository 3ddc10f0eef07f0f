//! Interaction schedulers: who observes whom, and through which channel draw.
//!
//! Randomness addressing (all on the scheduler stream unless noted):
//!
//! | model      | draw                         | address                         |
//! |------------|------------------------------|---------------------------------|
//! | sequential | observer                     | common stream `(t, 0)`          |
//! | sequential | observed slot, channel       | `(t, 1)`, `(t, 2)`              |
//! | broadcast  | observed slot, channel       | `(t, 1)`, `(t, 2)`              |
//! | pull(k)    | j-th target of agent u       | `(r, 2(uk+j))`, `(r, 2(uk+j)+1)` |
//! | push       | target of agent u, channel   | `(r, 2u)`, `(r, 2u+1)`          |
//!
//! The sequential observer is read from the common stream so that the broadcast
//! reduction, which elects the processing agent with the shared coin, couples with it
//! draw for draw.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::{Opinion, Symbol};
use crate::configuration::{AgentId, ChargedConfiguration};
use crate::error::{Error, Result};
use crate::noise::NoiseMatrix;
use crate::protocols::{AgentSetup, Observation, Protocol, SenderInfo, StepContext};
use crate::random::{SharedRandomness, COMMON_STREAM, SCHEDULER_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    SequentialPull,
    BroadcastPull,
    ParallelPull {
        k: usize,
        #[serde(default)]
        without_replacement: bool,
    },
    ParallelPush,
}

impl ModelKind {
    pub fn pull(k: usize) -> Self {
        ModelKind::ParallelPull {
            k,
            without_replacement: false,
        }
    }

    pub fn is_synchronous(&self) -> bool {
        matches!(self, ModelKind::ParallelPull { .. } | ModelKind::ParallelPush)
    }

    pub fn time_unit(&self) -> &'static str {
        if self.is_synchronous() {
            "rounds"
        } else {
            "steps"
        }
    }

    pub fn label(&self) -> String {
        match self {
            ModelKind::SequentialPull => "sequential-pull".into(),
            ModelKind::BroadcastPull => "broadcast-pull".into(),
            ModelKind::ParallelPull { k, .. } => format!("parallel-pull({k})"),
            ModelKind::ParallelPush => "parallel-push".into(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let ModelKind::ParallelPull { k, .. } = *self {
            if k == 0 || k > n {
                return Err(Error::Parameter(format!("k = {k} outside 1..={n}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observer {
    Agent(AgentId),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationEvent {
    /// 1-based step or round.
    pub time: u64,
    pub observer: Observer,
    pub observed: AgentId,
    pub displayed: Symbol,
    pub received: Symbol,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PopulationOptions {
    /// Observers learn the identity and source status of whom they observed.
    pub reliable_sources: bool,
    pub capture_trace: bool,
}

/// A running population under one protocol, channel and charged configuration.
pub struct Population<'a, P: Protocol> {
    protocol: &'a P,
    noise: &'a NoiseMatrix,
    randomness: SharedRandomness,
    states: Vec<P::State>,
    is_source: Vec<bool>,
    slots: Vec<usize>,
    options: PopulationOptions,
    time: u64,
    trace: Vec<ObservationEvent>,
    display_buf: Vec<Symbol>,
    push_buf: Vec<(usize, usize, Symbol, Symbol)>,
}

impl<'a, P: Protocol> Population<'a, P> {
    pub fn new(
        protocol: &'a P,
        noise: &'a NoiseMatrix,
        config: &ChargedConfiguration,
        randomness: SharedRandomness,
        options: PopulationOptions,
    ) -> Result<Self> {
        if protocol.alphabet() != noise.alphabet() {
            return Err(Error::AlphabetMismatch(format!(
                "protocol {} and noise matrix use different alphabets",
                protocol.name()
            )));
        }
        let n = config.n();
        let s = config.s();
        let states = config
            .agents()
            .iter()
            .map(|record| {
                protocol.init(&AgentSetup {
                    record,
                    is_source: config.is_source(record.id),
                    n,
                    s,
                    randomness: &randomness,
                })
            })
            .collect();
        Ok(Self {
            protocol,
            noise,
            randomness,
            states,
            is_source: config.source_mask().to_vec(),
            slots: config.display_slots(),
            options,
            time: 0,
            trace: Vec::new(),
            display_buf: Vec::with_capacity(n),
            push_buf: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn states(&self) -> &[P::State] {
        &self.states
    }

    pub fn state(&self, id: AgentId) -> &P::State {
        &self.states[id.index()]
    }

    pub fn is_source(&self, id: AgentId) -> bool {
        self.is_source[id.index()]
    }

    pub fn displayed(&self, id: AgentId) -> Symbol {
        self.protocol.displayed(&self.states[id.index()])
    }

    pub fn guess(&self, id: AgentId) -> Opinion {
        self.protocol.guess(&self.states[id.index()])
    }

    pub fn displayed_all(&self) -> Vec<Symbol> {
        self.states.iter().map(|s| self.protocol.displayed(s)).collect()
    }

    pub fn trace(&self) -> &[ObservationEvent] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<ObservationEvent> {
        std::mem::take(&mut self.trace)
    }

    fn sender(&self, agent: usize) -> Option<SenderInfo> {
        self.options.reliable_sources.then(|| SenderInfo {
            id: AgentId::from_index(agent),
            is_source: self.is_source[agent],
        })
    }

    fn record(&mut self, event: ObservationEvent) {
        if self.options.capture_trace {
            self.trace.push(event);
        }
    }

    /// One sequential-PULL step: a uniform observer observes a uniform slot.
    pub fn step_sequential(&mut self) -> ObservationEvent {
        let t = self.time;
        let observer = self.randomness.below(COMMON_STREAM, t, 0, self.n());
        self.observe_one(observer)
    }

    /// One sequential-PULL step with the observer chosen by the caller. The observed
    /// agent and the channel draw use the same addresses as [`Self::step_sequential`].
    pub fn step_with_observer(&mut self, observer: AgentId) -> ObservationEvent {
        self.observe_one(observer.index())
    }

    fn observe_one(&mut self, observer: usize) -> ObservationEvent {
        let t = self.time;
        let slot = self.randomness.below(SCHEDULER_STREAM, t, 1, self.slots.len());
        let observed = self.slots[slot];
        let displayed = self.protocol.displayed(&self.states[observed]);
        let received = self
            .noise
            .sample(displayed, self.randomness.unit(SCHEDULER_STREAM, t, 2));
        let obs = Observation {
            received,
            sender: self.sender(observed),
        };
        let ctx = StepContext {
            agent: AgentId::from_index(observer),
            time: t,
            randomness: &self.randomness,
        };
        self.protocol.on_observe(&mut self.states[observer], obs, &ctx);
        self.time += 1;
        let event = ObservationEvent {
            time: self.time,
            observer: Observer::Agent(AgentId::from_index(observer)),
            observed: AgentId::from_index(observed),
            displayed,
            received,
        };
        self.record(event);
        event
    }

    /// One broadcast-PULL step: one uniform slot, one noisy sample, delivered to all.
    pub fn step_broadcast(&mut self) -> ObservationEvent {
        let t = self.time;
        let slot = self.randomness.below(SCHEDULER_STREAM, t, 1, self.slots.len());
        let observed = self.slots[slot];
        let displayed = self.protocol.displayed(&self.states[observed]);
        let received = self
            .noise
            .sample(displayed, self.randomness.unit(SCHEDULER_STREAM, t, 2));
        let sender = self.sender(observed);
        self.deliver_to_all(Observation { received, sender });
        let event = ObservationEvent {
            time: self.time,
            observer: Observer::All,
            observed: AgentId::from_index(observed),
            displayed,
            received,
        };
        self.record(event);
        event
    }

    /// Law of the symbol received by one broadcast-PULL sample in the current state.
    pub fn broadcast_law(&self) -> Vec<f64> {
        let k = self.noise.alphabet().len();
        let mut law = vec![0.0; k];
        let w = 1.0 / self.slots.len() as f64;
        for &agent in &self.slots {
            let row = self.noise.row(self.protocol.displayed(&self.states[agent]));
            for (acc, p) in law.iter_mut().zip(row) {
                *acc += w * p;
            }
        }
        law
    }

    /// Independent copy of the population (states, clock and randomness), without trace.
    pub fn fork(&self) -> Self {
        Self {
            protocol: self.protocol,
            noise: self.noise,
            randomness: self.randomness,
            states: self.states.clone(),
            is_source: self.is_source.clone(),
            slots: self.slots.clone(),
            options: self.options,
            time: self.time,
            trace: Vec::new(),
            display_buf: Vec::new(),
            push_buf: Vec::new(),
        }
    }

    /// Delivers a given broadcast observation to every agent and advances one step.
    /// Used to force identical received histories in coupled executions.
    pub fn deliver_to_all(&mut self, obs: Observation) {
        let t = self.time;
        for (i, state) in self.states.iter_mut().enumerate() {
            let ctx = StepContext {
                agent: AgentId::from_index(i),
                time: t,
                randomness: &self.randomness,
            };
            self.protocol.on_observe(state, obs, &ctx);
        }
        self.time += 1;
    }

    /// One parallel-PULL(k) round; returns the number of observations (always `k·n`).
    pub fn round_parallel_pull(&mut self, k: usize, without_replacement: bool) -> Result<usize> {
        let n = self.n();
        if k == 0 || k > n {
            return Err(Error::Parameter(format!("k = {k} outside 1..={n}")));
        }
        let r = self.time;
        self.display_buf.clear();
        for s in &self.states {
            self.display_buf.push(self.protocol.displayed(s));
        }
        let n_slots = self.slots.len();
        let mut picked: Vec<usize> = Vec::new();
        for u in 0..n {
            picked.clear();
            let mut attempt = 0u64;
            for j in 0..k {
                let base = 2 * (u as u64 * k as u64 + j as u64);
                let slot = if without_replacement {
                    loop {
                        let cand = self.randomness.below(
                            SCHEDULER_STREAM,
                            r,
                            base + (attempt << 40),
                            n_slots,
                        );
                        attempt += 1;
                        if !picked.contains(&cand) {
                            break cand;
                        }
                    }
                } else {
                    self.randomness.below(SCHEDULER_STREAM, r, base, n_slots)
                };
                picked.push(slot);
                let observed = self.slots[slot];
                let displayed = self.display_buf[observed];
                let received = self
                    .noise
                    .sample(displayed, self.randomness.unit(SCHEDULER_STREAM, r, base + 1));
                let obs = Observation {
                    received,
                    sender: self.sender(observed),
                };
                let ctx = StepContext {
                    agent: AgentId::from_index(u),
                    time: r,
                    randomness: &self.randomness,
                };
                self.protocol.on_observe(&mut self.states[u], obs, &ctx);
                if self.options.capture_trace {
                    self.trace.push(ObservationEvent {
                        time: r + 1,
                        observer: Observer::Agent(AgentId::from_index(u)),
                        observed: AgentId::from_index(observed),
                        displayed,
                        received,
                    });
                }
            }
        }
        self.end_round(r);
        Ok(k * n)
    }

    /// One parallel-PUSH round; returns the number of delivered pushes.
    ///
    /// Whether to push is decided on the state at the start of the round. Every push
    /// reaches its target (the contact itself is noiseless, the content is not); a target
    /// hit several times processes them in increasing sender order.
    pub fn round_parallel_push(&mut self) -> usize {
        let n = self.n();
        let r = self.time;
        self.push_buf.clear();
        for u in 0..n {
            let ctx = StepContext {
                agent: AgentId::from_index(u),
                time: r,
                randomness: &self.randomness,
            };
            if !self.protocol.wants_push(&self.states[u], &ctx) {
                continue;
            }
            let target = self.randomness.below(SCHEDULER_STREAM, r, 2 * u as u64, n);
            let displayed = self.protocol.displayed(&self.states[u]);
            let received = self
                .noise
                .sample(displayed, self.randomness.unit(SCHEDULER_STREAM, r, 2 * u as u64 + 1));
            self.push_buf.push((u, target, displayed, received));
        }
        let deliveries = std::mem::take(&mut self.push_buf);
        for &(u, target, displayed, received) in &deliveries {
            let obs = Observation {
                received,
                sender: self.sender(u),
            };
            let ctx = StepContext {
                agent: AgentId::from_index(target),
                time: r,
                randomness: &self.randomness,
            };
            self.protocol.on_observe(&mut self.states[target], obs, &ctx);
            if self.options.capture_trace {
                self.trace.push(ObservationEvent {
                    time: r + 1,
                    observer: Observer::Agent(AgentId::from_index(target)),
                    observed: AgentId::from_index(u),
                    displayed,
                    received,
                });
            }
        }
        let count = deliveries.len();
        self.push_buf = deliveries;
        self.end_round(r);
        count
    }

    fn end_round(&mut self, r: u64) {
        for (i, state) in self.states.iter_mut().enumerate() {
            let ctx = StepContext {
                agent: AgentId::from_index(i),
                time: r,
                randomness: &self.randomness,
            };
            self.protocol.on_round_end(state, &ctx);
        }
        self.time += 1;
    }

    /// Advances one step or round of `model`.
    pub fn advance(&mut self, model: ModelKind) -> Result<()> {
        match model {
            ModelKind::SequentialPull => {
                self.step_sequential();
            }
            ModelKind::BroadcastPull => {
                self.step_broadcast();
            }
            ModelKind::ParallelPull {
                k,
                without_replacement,
            } => {
                self.round_parallel_pull(k, without_replacement)?;
            }
            ModelKind::ParallelPush => {
                self.round_parallel_push();
            }
        }
        Ok(())
    }
}

/// Writes `time,observer,observed,displayed,received` rows; broadcast observers are `all`.
pub fn write_trace_csv<W: Write>(
    events: &[ObservationEvent],
    alphabet: &crate::alphabet::Alphabet,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "observer", "observed", "displayed", "received"])?;
    for e in events {
        let observer = match e.observer {
            Observer::Agent(id) => id.to_string(),
            Observer::All => "all".to_string(),
        };
        w.write_record([
            e.time.to_string(),
            observer,
            e.observed.to_string(),
            alphabet.label(e.displayed).to_string(),
            alphabet.label(e.received).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(
    events: &[ObservationEvent],
    alphabet: &crate::alphabet::Alphabet,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_trace_csv(events, alphabet, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::{ChargedConfiguration, NeutralConfiguration, SourceStateSpec};
    use crate::protocols::{EchoProtocol, FixedDisplay, PushTwoStage};

    fn config(n: usize, sources: &[u32], eta: Opinion) -> ChargedConfiguration {
        let ids: Vec<AgentId> = sources.iter().map(|&i| AgentId(i)).collect();
        ChargedConfiguration::with_sources(
            NeutralConfiguration::uniform(n).unwrap(),
            &ids,
            eta,
            &SourceStateSpec::DisplayOpinion,
            1,
        )
        .unwrap()
    }

    fn traced() -> PopulationOptions {
        PopulationOptions {
            reliable_sources: false,
            capture_trace: true,
        }
    }

    #[test]
    fn single_agent_observes_itself() {
        let p = FixedDisplay::binary_zero();
        let noise = NoiseMatrix::binary_symmetric(0.2).unwrap();
        let cfg = config(1, &[], Opinion::Zero);
        let mut pop = Population::new(&p, &noise, &cfg, SharedRandomness::new(1), traced()).unwrap();
        for _ in 0..50 {
            let e = pop.step_sequential();
            assert_eq!(e.observer, Observer::Agent(AgentId(1)));
            assert_eq!(e.observed, AgentId(1));
            let e = pop.step_broadcast();
            assert_eq!(e.observed, AgentId(1));
        }
    }

    #[test]
    fn sequential_pair_frequencies() {
        let p = FixedDisplay::binary_zero();
        let noise = NoiseMatrix::identity(crate::Alphabet::binary());
        let cfg = config(4, &[], Opinion::Zero);
        let mut pop = Population::new(&p, &noise, &cfg, SharedRandomness::new(2), PopulationOptions::default())
            .unwrap();
        let steps = 1_000_000;
        let mut counts = [[0u32; 4]; 4];
        for _ in 0..steps {
            let e = pop.step_sequential();
            let Observer::Agent(u) = e.observer else { unreachable!() };
            counts[u.index()][e.observed.index()] += 1;
        }
        for row in counts {
            for c in row {
                assert!((c as f64 / steps as f64 - 1.0 / 16.0).abs() < 0.001);
            }
        }
    }

    #[test]
    fn sequential_source_observation_rate() {
        let p = FixedDisplay::binary_zero();
        let noise = NoiseMatrix::identity(crate::Alphabet::binary());
        let cfg = config(10, &[3, 8], Opinion::One);
        let mut pop = Population::new(&p, &noise, &cfg, SharedRandomness::new(3), PopulationOptions::default())
            .unwrap();
        let steps = 1_000_000;
        let hits = (0..steps)
            .filter(|_| cfg.is_source(pop.step_sequential().observed))
            .count();
        assert!((hits as f64 / steps as f64 - 0.2).abs() < 0.002);
    }

    #[test]
    fn broadcast_shares_one_sample() {
        let p = EchoProtocol::new(crate::Alphabet::binary());
        let noise = NoiseMatrix::binary_symmetric(0.3).unwrap();
        let cfg = config(6, &[2], Opinion::One);
        let mut pop = Population::new(&p, &noise, &cfg, SharedRandomness::new(4), traced()).unwrap();
        let mut source_hits = 0;
        let steps = 100_000;
        for _ in 0..steps {
            let e = pop.step_broadcast();
            assert_eq!(e.observer, Observer::All);
            // every non-source echoes the one shared sample
            for id in (1..=6).map(AgentId) {
                if !cfg.is_source(id) {
                    assert_eq!(pop.displayed(id), e.received);
                }
            }
            source_hits += cfg.is_source(e.observed) as u32;
        }
        let f = source_hits as f64 / steps as f64;
        let sd = (1.0f64 / 6.0 * 5.0 / 6.0 / steps as f64).sqrt();
        assert!((f - 1.0 / 6.0).abs() < 4.0 * sd);
        assert_eq!(pop.trace().len(), steps);
    }

    #[test]
    fn pull_round_counts_and_k_check() {
        let p = FixedDisplay::binary_zero();
        let noise = NoiseMatrix::binary_symmetric(0.1).unwrap();
        let cfg = config(5, &[1], Opinion::Zero);
        let mut pop = Population::new(&p, &noise, &cfg, SharedRandomness::new(5), traced()).unwrap();
        assert_eq!(pop.round_parallel_pull(5, false).unwrap(), 25);
        assert_eq!(pop.trace().len(), 25);
        for u in 1..=5 {
            let c = pop
                .trace()
                .iter()
                .filter(|e| e.observer == Observer::Agent(AgentId(u)))
                .count();
            assert_eq!(c, 5);
        }
        assert!(pop.round_parallel_pull(0, false).is_err());
        assert!(pop.round_parallel_pull(6, false).is_err());
        pop.take_trace();
        pop.round_parallel_pull(5, true).unwrap();
        for u in 1..=5 {
            let mut seen: Vec<_> = pop
                .trace()
                .iter()
                .filter(|e| e.observer == Observer::Agent(AgentId(u)))
                .map(|e| e.observed)
                .collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 5, "without replacement covers everyone");
        }
    }

    #[test]
    fn pull_source_observers_per_round() {
        // k = 1, n = 1000, s = 1: number of agents observing the source is Binomial(1000, 1/1000)
        let p = FixedDisplay::binary_zero();
        let noise = NoiseMatrix::identity(crate::Alphabet::binary());
        let cfg = config(1000, &[17], Opinion::One);
        let mut pop = Population::new(&p, &noise, &cfg, SharedRandomness::new(6), traced()).unwrap();
        let rounds = 400;
        let mut total = 0usize;
        for _ in 0..rounds {
            pop.round_parallel_pull(1, false).unwrap();
            total += pop.take_trace().iter().filter(|e| e.observed == AgentId(17)).count();
        }
        let mean = total as f64 / rounds as f64;
        // sd of the mean is about sqrt(0.999 / 400) = 0.05
        assert!((mean - 1.0).abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn silent_population_never_pushes() {
        let p = PushTwoStage::for_population(20);
        let noise = NoiseMatrix::binary_symmetric(0.0).unwrap();
        let cfg = config(20, &[], Opinion::One);
        let mut pop = Population::new(&p, &noise, &cfg, SharedRandomness::new(7), traced()).unwrap();
        for _ in 0..100 {
            assert_eq!(pop.round_parallel_push(), 0);
        }
        assert!(pop.trace().is_empty());
    }

    #[test]
    fn trace_csv_header() {
        let p = FixedDisplay::binary_zero();
        let noise = NoiseMatrix::identity(crate::Alphabet::binary());
        let cfg = config(3, &[1], Opinion::One);
        let mut pop = Population::new(&p, &noise, &cfg, SharedRandomness::new(8), traced()).unwrap();
        pop.step_broadcast();
        let mut buf = Vec::new();
        write_trace_csv(pop.trace(), noise.alphabet(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,observer,observed,displayed,received\n1,all,"));
    }
}
