use crate::alphabet::{Alphabet, Opinion, Symbol};

use super::{source_opinion, AgentSetup, Observation, Protocol, StepContext};

/// Baseline for reliably detectable sources: only direct sightings of a source count.
///
/// The first sighting fixes the guess; later sightings vote, ties keep the first.
#[derive(Debug, Clone)]
pub struct SourceWait {
    alphabet: Alphabet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceWaitState {
    pub is_source: bool,
    pub own: Option<Opinion>,
    pub first: Option<Opinion>,
    pub sightings: [u32; 2],
}

impl SourceWait {
    pub fn new(alphabet: Alphabet) -> Self {
        Self { alphabet }
    }
}

impl Protocol for SourceWait {
    type State = SourceWaitState;

    fn name(&self) -> &'static str {
        "source-wait"
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn init(&self, setup: &AgentSetup<'_>) -> SourceWaitState {
        SourceWaitState {
            is_source: setup.is_source,
            own: if setup.is_source {
                source_opinion(setup)
            } else {
                None
            },
            first: None,
            sightings: [0, 0],
        }
    }

    fn displayed(&self, state: &SourceWaitState) -> Symbol {
        self.alphabet
            .opinion_symbol(state.own.unwrap_or_default())
    }

    fn guess(&self, state: &SourceWaitState) -> Opinion {
        if let Some(own) = state.own {
            return own;
        }
        let [zeros, ones] = state.sightings;
        match zeros.cmp(&ones) {
            std::cmp::Ordering::Greater => Opinion::Zero,
            std::cmp::Ordering::Less => Opinion::One,
            std::cmp::Ordering::Equal => state.first.unwrap_or_default(),
        }
    }

    fn on_observe(&self, state: &mut SourceWaitState, obs: Observation, _ctx: &StepContext<'_>) {
        if state.is_source {
            return;
        }
        let Some(sender) = obs.sender else { return };
        if !sender.is_source {
            return;
        }
        if let Some(op) = self.alphabet.opinion_of(obs.received) {
            state.first.get_or_insert(op);
            state.sightings[op.index()] += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::{AgentId, AgentRecord};
    use crate::protocols::SenderInfo;
    use crate::random::SharedRandomness;

    #[test]
    fn ignores_non_sources_and_votes_on_sources() {
        let p = SourceWait::new(Alphabet::binary());
        let r = SharedRandomness::new(0);
        let record = AgentRecord {
            id: AgentId(1),
            state: 0,
            opinion: Opinion::Zero,
        };
        let mut st = p.init(&AgentSetup {
            record: &record,
            is_source: false,
            n: 10,
            s: 1,
            randomness: &r,
        });
        let ctx = StepContext {
            agent: AgentId(1),
            time: 0,
            randomness: &r,
        };
        let before = st.clone();
        let from = |id, is_source| {
            Some(SenderInfo {
                id: AgentId(id),
                is_source,
            })
        };
        p.on_observe(&mut st, Observation { received: Symbol(1), sender: from(4, false) }, &ctx);
        p.on_observe(&mut st, Observation::anonymous(Symbol(1)), &ctx);
        assert_eq!(st, before);
        assert_eq!(p.guess(&st), Opinion::Zero);

        p.on_observe(&mut st, Observation { received: Symbol(1), sender: from(2, true) }, &ctx);
        assert_eq!(p.guess(&st), Opinion::One);
        p.on_observe(&mut st, Observation { received: Symbol(0), sender: from(2, true) }, &ctx);
        assert_eq!(p.guess(&st), Opinion::One, "tie keeps the first sighting");
        p.on_observe(&mut st, Observation { received: Symbol(0), sender: from(2, true) }, &ctx);
        assert_eq!(p.guess(&st), Opinion::Zero);
    }
}
