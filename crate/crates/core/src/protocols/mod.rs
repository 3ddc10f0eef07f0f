//! Agent behaviour contract and the concrete protocols.

use std::fmt;

use crate::alphabet::{Alphabet, Opinion, Symbol};
use crate::configuration::{AgentId, AgentRecord};
use crate::random::SharedRandomness;

mod bayes;
mod fixed;
mod push;
mod source_wait;
mod structured;

pub use bayes::{canonical_likelihoods, BayesObserver, BayesState};
pub use fixed::{EchoProtocol, FixedDisplay, SimpleState};
pub use push::{PushState, PushTwoStage};
pub use source_wait::{SourceWait, SourceWaitState};
pub use structured::{StructuredNoise, StructuredState};

/// What an agent knows when it is created.
#[derive(Debug, Clone, Copy)]
pub struct AgentSetup<'a> {
    pub record: &'a AgentRecord,
    pub is_source: bool,
    pub n: usize,
    pub s: usize,
    pub randomness: &'a SharedRandomness,
}

/// Identity of the observed agent. Only filled in when sources are reliably detectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SenderInfo {
    pub id: AgentId,
    pub is_source: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub received: Symbol,
    pub sender: Option<SenderInfo>,
}

impl Observation {
    pub fn anonymous(received: Symbol) -> Self {
        Self {
            received,
            sender: None,
        }
    }
}

/// Per-call context: the acting agent, the current time (step or round, 0-based) and
/// the shared random bits.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub agent: AgentId,
    pub time: u64,
    pub randomness: &'a SharedRandomness,
}

/// Behaviour of every agent in a run.
///
/// Implementations must be deterministic functions of the state, the observation, the
/// time and the shared randomness. A non-source agent must never read the correct
/// opinion; it only ever sees what the scheduler delivers.
pub trait Protocol: Sync {
    type State: Clone + Send + Sync + fmt::Debug + PartialEq;

    fn name(&self) -> &'static str;

    fn alphabet(&self) -> &Alphabet;

    fn init(&self, setup: &AgentSetup<'_>) -> Self::State;

    fn displayed(&self, state: &Self::State) -> Symbol;

    fn guess(&self, state: &Self::State) -> Opinion;

    fn on_observe(&self, state: &mut Self::State, observation: Observation, ctx: &StepContext<'_>);

    /// Called once per agent after every synchronous round.
    fn on_round_end(&self, _state: &mut Self::State, _ctx: &StepContext<'_>) {}

    /// Parallel-PUSH only: whether the agent sends its displayed message this round.
    fn wants_push(&self, _state: &Self::State, _ctx: &StepContext<'_>) -> bool {
        false
    }

    /// Time after which no agent changes state any more, if the protocol has one.
    fn horizon(&self) -> Option<u64> {
        None
    }
}

/// Opinion a source starts with: its refreshed state label when that names an
/// opinion, otherwise none.
pub(crate) fn source_opinion(setup: &AgentSetup<'_>) -> Option<Opinion> {
    match setup.record.state {
        0 => Some(Opinion::Zero),
        1 => Some(Opinion::One),
        _ => None,
    }
}
