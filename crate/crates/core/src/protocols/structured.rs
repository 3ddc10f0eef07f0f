use crate::alphabet::{Alphabet, Opinion, Symbol};
use crate::error::{Error, Result};

use super::{source_opinion, AgentSetup, Observation, Protocol, StepContext};

/// Default-message protocol for the five-level consecutive channel.
///
/// Sources display `m1` or `m5`. Everyone else displays `m3` until it receives an
/// extreme symbol, then adopts that opinion and displays it forever.
#[derive(Debug, Clone)]
pub struct StructuredNoise {
    alphabet: Alphabet,
    default: Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredState {
    pub is_source: bool,
    pub adopted: Option<Opinion>,
}

impl StructuredNoise {
    pub fn new(alphabet: Alphabet) -> Result<Self> {
        if alphabet.len() != 5
            || alphabet.opinion_symbol(Opinion::Zero) != Symbol(0)
            || alphabet.opinion_symbol(Opinion::One) != Symbol(4)
        {
            return Err(Error::AlphabetMismatch(
                "structured-noise protocol needs five symbols with opinions at both ends".into(),
            ));
        }
        Ok(Self {
            alphabet,
            default: Symbol(2),
        })
    }

    pub fn five_level() -> Self {
        Self::new(Alphabet::five_level()).expect("five-level alphabet")
    }
}

impl Protocol for StructuredNoise {
    type State = StructuredState;

    fn name(&self) -> &'static str {
        "structured"
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn init(&self, setup: &AgentSetup<'_>) -> StructuredState {
        StructuredState {
            is_source: setup.is_source,
            adopted: if setup.is_source {
                source_opinion(setup)
            } else {
                None
            },
        }
    }

    fn displayed(&self, state: &StructuredState) -> Symbol {
        state
            .adopted
            .map(|o| self.alphabet.opinion_symbol(o))
            .unwrap_or(self.default)
    }

    fn guess(&self, state: &StructuredState) -> Opinion {
        state.adopted.unwrap_or_default()
    }

    fn on_observe(&self, state: &mut StructuredState, obs: Observation, _ctx: &StepContext<'_>) {
        if state.is_source || state.adopted.is_some() {
            return;
        }
        state.adopted = self.alphabet.opinion_of(obs.received);
    }
}
