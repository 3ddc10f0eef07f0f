use crate::alphabet::{Alphabet, Opinion, Symbol};

use super::{source_opinion, AgentSetup, Observation, Protocol, StepContext};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimpleState {
    pub is_source: bool,
    pub own: Option<Opinion>,
    pub shown: Symbol,
}

/// Sources display their opinion, everyone else displays one fixed symbol forever.
#[derive(Debug, Clone)]
pub struct FixedDisplay {
    alphabet: Alphabet,
    symbol: Symbol,
}

impl FixedDisplay {
    pub fn new(alphabet: Alphabet, symbol: Symbol) -> Self {
        Self { alphabet, symbol }
    }

    pub fn binary_zero() -> Self {
        Self::new(Alphabet::binary(), Symbol(0))
    }
}

fn init_simple(alphabet: &Alphabet, setup: &AgentSetup<'_>, default: Symbol) -> SimpleState {
    let own = if setup.is_source {
        source_opinion(setup)
    } else {
        None
    };
    SimpleState {
        is_source: setup.is_source,
        own,
        shown: own.map(|o| alphabet.opinion_symbol(o)).unwrap_or(default),
    }
}

impl Protocol for FixedDisplay {
    type State = SimpleState;

    fn name(&self) -> &'static str {
        "fixed-display"
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn init(&self, setup: &AgentSetup<'_>) -> SimpleState {
        init_simple(&self.alphabet, setup, self.symbol)
    }

    fn displayed(&self, state: &SimpleState) -> Symbol {
        state.shown
    }

    fn guess(&self, state: &SimpleState) -> Opinion {
        state.own.unwrap_or_default()
    }

    fn on_observe(&self, _state: &mut SimpleState, _obs: Observation, _ctx: &StepContext<'_>) {}
}

/// Non-sources repeat the last symbol they received; a history-dependent display used
/// to exercise the adaptive parts of the coin-distinguishing machinery.
#[derive(Debug, Clone)]
pub struct EchoProtocol {
    alphabet: Alphabet,
}

impl EchoProtocol {
    pub fn new(alphabet: Alphabet) -> Self {
        Self { alphabet }
    }
}

impl Protocol for EchoProtocol {
    type State = SimpleState;

    fn name(&self) -> &'static str {
        "echo"
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn init(&self, setup: &AgentSetup<'_>) -> SimpleState {
        init_simple(&self.alphabet, setup, Symbol(0))
    }

    fn displayed(&self, state: &SimpleState) -> Symbol {
        state.shown
    }

    fn guess(&self, state: &SimpleState) -> Opinion {
        state
            .own
            .or_else(|| self.alphabet.opinion_of(state.shown))
            .unwrap_or_default()
    }

    fn on_observe(&self, state: &mut SimpleState, obs: Observation, _ctx: &StepContext<'_>) {
        if !state.is_source {
            state.shown = obs.received;
        }
    }
}
