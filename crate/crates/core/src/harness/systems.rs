use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::convergence::TrialSystem;
use crate::alphabet::{Alphabet, Opinion};
use crate::configuration::{charge_with_opinion, NeutralConfiguration, SourceStateSpec};
use crate::error::{Error, Result};
use crate::models::{ModelKind, Population, PopulationOptions};
use crate::noise::NoiseMatrix;
use crate::protocols::{canonical_likelihoods, BayesObserver, Protocol, PushTwoStage, SourceWait, StructuredNoise};
use crate::random::SharedRandomness;

/// A protocol simulated agent by agent under one model and channel.
pub struct SimulatedSystem<P: Protocol> {
    pub protocol: P,
    pub noise: NoiseMatrix,
    pub model: ModelKind,
    pub neutral: NeutralConfiguration,
    pub s: usize,
    pub spec: SourceStateSpec,
    pub source_weight: u32,
    pub reliable_sources: bool,
}

impl<P: Protocol> SimulatedSystem<P> {
    pub fn new(protocol: P, noise: NoiseMatrix, model: ModelKind, n: usize, s: usize) -> Result<Self> {
        model.validate(n)?;
        if s == 0 || s >= n {
            return Err(Error::Parameter(format!("need 1 <= s < n, got s = {s}, n = {n}")));
        }
        if protocol.alphabet() != noise.alphabet() {
            return Err(Error::AlphabetMismatch(format!(
                "protocol {} and the noise matrix use different alphabets",
                protocol.name()
            )));
        }
        Ok(Self {
            protocol,
            noise,
            model,
            neutral: NeutralConfiguration::uniform(n)?,
            s,
            spec: SourceStateSpec::DisplayOpinion,
            source_weight: 1,
            reliable_sources: false,
        })
    }

    pub fn with_reliable_sources(mut self, reliable: bool) -> Self {
        self.reliable_sources = reliable;
        self
    }

    pub fn with_source_weight(mut self, weight: u32) -> Self {
        self.source_weight = weight;
        self
    }

    pub fn n(&self) -> usize {
        self.neutral.n()
    }

    /// Builds a charged population for one trial; the designated agent is the
    /// smallest-id non-source of this trial's configuration.
    pub fn population(&self, seed: u64, eta: Opinion, trace: bool) -> Result<(Population<'_, P>, crate::AgentId)> {
        let randomness = SharedRandomness::new(seed);
        let config = charge_with_opinion(&self.neutral, self.s, eta, &self.spec, self.source_weight, &randomness)?;
        let designated = config
            .designated_agent()
            .ok_or_else(|| Error::Configuration("no non-source agent".into()))?;
        let options = PopulationOptions {
            reliable_sources: self.reliable_sources,
            capture_trace: trace,
        };
        let pop = Population::new(&self.protocol, &self.noise, &config, randomness, options)?;
        Ok((pop, designated))
    }
}

impl<P: Protocol> TrialSystem for SimulatedSystem<P> {
    fn label(&self) -> String {
        format!("{} on {}", self.protocol.name(), self.model.label())
    }

    fn time_unit(&self) -> &'static str {
        self.model.time_unit()
    }

    fn horizon(&self) -> Option<u64> {
        self.protocol.horizon()
    }

    fn run_trial(&self, seed: u64, eta: Opinion, start: u64, stride: u64, end: u64, hits: &mut [u32]) -> Result<()> {
        let (mut pop, designated) = self.population(seed, eta, false)?;
        for t in 1..=end {
            pop.advance(self.model)?;
            if t >= start && (t - start).is_multiple_of(stride) && pop.guess(designated) == eta {
                hits[((t - start) / stride) as usize] += 1;
            }
        }
        Ok(())
    }
}

/// The optimal observer of the canonical instance, evaluated through its sufficient
/// statistic: after `m` samples the observer's guess depends only on how many of them
/// were `1`, which is `Binomial(m, P_η(1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalObserverSystem {
    pub model: ModelKind,
    pub n: usize,
    pub s: usize,
    pub delta: f64,
}

impl CanonicalObserverSystem {
    pub fn new(model: ModelKind, n: usize, s: usize, delta: f64) -> Result<Self> {
        model.validate(n)?;
        if matches!(model, ModelKind::ParallelPush) {
            return Err(Error::Parameter("the canonical observer pulls; push is not supported".into()));
        }
        if s == 0 || s >= n {
            return Err(Error::Parameter(format!("need 1 <= s < n, got s = {s}, n = {n}")));
        }
        if !(0.0..=0.5).contains(&delta) {
            return Err(Error::Parameter(format!("δ = {delta} outside [0, 1/2]")));
        }
        Ok(Self { model, n, s, delta })
    }

    /// The observer's guess after `ones` ones among `m` samples.
    pub fn decide(&self, ones: u64, m: u64) -> Opinion {
        let [p0, p1] = canonical_likelihoods(self.n, self.s, self.delta);
        let term = |c: u64, a: f64, b: f64| -> f64 {
            if c == 0 {
                0.0
            } else {
                match (a > 0.0, b > 0.0) {
                    (true, true) => c as f64 * (b.ln() - a.ln()),
                    (true, false) => f64::NEG_INFINITY,
                    (false, true) => f64::INFINITY,
                    (false, false) => 0.0,
                }
            }
        };
        let llr = term(ones, p0, p1) + term(m - ones, 1.0 - p0, 1.0 - p1);
        Opinion::from_bit(llr > 0.0)
    }

    fn samples_by(&self, t: u64, rng: &mut impl rand::Rng) -> u64 {
        match self.model {
            ModelKind::BroadcastPull => t,
            ModelKind::ParallelPull { k, .. } => k as u64 * t,
            ModelKind::SequentialPull => {
                Binomial::new(t, 1.0 / self.n as f64).expect("valid binomial").sample(rng)
            }
            ModelKind::ParallelPush => 0,
        }
    }
}

impl TrialSystem for CanonicalObserverSystem {
    fn label(&self) -> String {
        format!("canonical-observer on {}", self.model.label())
    }

    fn time_unit(&self) -> &'static str {
        self.model.time_unit()
    }

    fn run_trial(&self, seed: u64, eta: Opinion, start: u64, stride: u64, end: u64, hits: &mut [u32]) -> Result<()> {
        let r = SharedRandomness::new(seed);
        let p = canonical_likelihoods(self.n, self.s, self.delta)[eta.index()];
        let (mut m, mut ones) = (0u64, 0u64);
        for t in 1..=end {
            let fresh = match self.model {
                ModelKind::BroadcastPull => 1,
                ModelKind::ParallelPull { k, .. } => k as u64,
                ModelKind::SequentialPull => u64::from(r.unit(2, t, 0) < 1.0 / self.n as f64),
                ModelKind::ParallelPush => 0,
            };
            for _ in 0..fresh {
                m += 1;
                if r.unit(1, m, 0) < p {
                    ones += 1;
                }
            }
            if t >= start && (t - start).is_multiple_of(stride) && self.decide(ones, m) == eta {
                hits[((t - start) / stride) as usize] += 1;
            }
        }
        Ok(())
    }

    fn probe_count(&self, seed: u64, eta: Opinion, t: u64, trials: u64) -> Option<u64> {
        let r = SharedRandomness::new(seed);
        let p = canonical_likelihoods(self.n, self.s, self.delta)[eta.index()];
        let mut correct = 0;
        for i in 0..trials {
            let mut rng = r.rng(i, 0);
            let m = self.samples_by(t, &mut rng);
            let ones = Binomial::new(m, p).expect("valid binomial").sample(&mut rng);
            if self.decide(ones, m) == eta {
                correct += 1;
            }
        }
        Some(correct)
    }
}

/// Protocols available to configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    /// Optimal observer of the canonical instance, via its sufficient statistic.
    CanonicalObserver,
    /// The same observer simulated agent by agent.
    Bayes,
    /// Default-message protocol on the five-level consecutive channel (δ is the
    /// channel's step probability).
    Structured,
    /// Waits for direct source sightings; sources are reliably detectable.
    SourceWait,
    /// Two-stage spreading and amplification for parallel-PUSH.
    PushTwoStage,
}

impl ProtocolKind {
    pub fn label(&self) -> &'static str {
        match self {
            ProtocolKind::CanonicalObserver => "canonical-observer",
            ProtocolKind::Bayes => "bayes-observer",
            ProtocolKind::Structured => "structured",
            ProtocolKind::SourceWait => "source-wait",
            ProtocolKind::PushTwoStage => "push-two-stage",
        }
    }
}

/// One experimental system: protocol, model and population parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub protocol: ProtocolKind,
    pub model: ModelKind,
    pub n: usize,
    pub s: usize,
    pub delta: f64,
    #[serde(default = "one")]
    pub source_weight: u32,
}

fn one() -> u32 {
    1
}

impl SystemSpec {
    pub fn build(&self) -> Result<Box<dyn TrialSystem + Send>> {
        let (n, s, delta, model) = (self.n, self.s, self.delta, self.model);
        let weight = self.source_weight.max(1);
        Ok(match self.protocol {
            ProtocolKind::CanonicalObserver => {
                if weight != 1 {
                    return Err(Error::Parameter("the canonical observer has unit source weight".into()));
                }
                Box::new(CanonicalObserverSystem::new(model, n, s, delta)?)
            }
            ProtocolKind::Bayes => Box::new(
                SimulatedSystem::new(
                    BayesObserver::new(n, s, delta)?,
                    NoiseMatrix::binary_symmetric(delta)?,
                    model,
                    n,
                    s,
                )?
                .with_source_weight(weight),
            ),
            ProtocolKind::Structured => Box::new(
                SimulatedSystem::new(StructuredNoise::five_level(), NoiseMatrix::five_level(delta)?, model, n, s)?
                    .with_source_weight(weight),
            ),
            ProtocolKind::SourceWait => Box::new(
                SimulatedSystem::new(
                    SourceWait::new(Alphabet::binary()),
                    NoiseMatrix::binary_symmetric(delta)?,
                    model,
                    n,
                    s,
                )?
                .with_reliable_sources(true)
                .with_source_weight(weight),
            ),
            ProtocolKind::PushTwoStage => {
                if model != ModelKind::ParallelPush {
                    return Err(Error::Parameter("push-two-stage runs on parallel-push only".into()));
                }
                Box::new(
                    SimulatedSystem::new(
                        PushTwoStage::for_population(n),
                        NoiseMatrix::binary_symmetric(delta)?,
                        model,
                        n,
                        s,
                    )?
                    .with_source_weight(weight),
                )
            }
        })
    }

    /// Whether sources are reliably detectable in this system.
    pub fn reliable_sources(&self) -> bool {
        self.protocol == ProtocolKind::SourceWait
    }
}
