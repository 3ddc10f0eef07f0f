use crate::alphabet::{Alphabet, Opinion, Symbol};
use crate::error::{Error, Result};

use super::{source_opinion, AgentSetup, Observation, Protocol, StepContext};

/// Two-stage protocol for parallel-PUSH.
///
/// Stage 1 (rounds `0..spread_rounds`) spreads a tentative opinion. Time is cut into
/// phases of `phase` rounds; a non-source adopts the first symbol pushed to it and only
/// starts pushing at the next phase boundary, which keeps the spreading tree shallow.
/// The tentative opinion becomes the agent's guess when stage 1 ends.
///
/// Stage 2 (`amplify_rounds` more rounds) amplifies the bias: every informed agent
/// pushes its guess each round, and at the end of every `window`-round window an agent
/// replaces its guess by the strict majority of what it received in the window (a tie
/// keeps the current guess). After both stages the state is frozen.
#[derive(Debug, Clone)]
pub struct PushTwoStage {
    alphabet: Alphabet,
    spread_rounds: u64,
    amplify_rounds: u64,
    phase: u64,
    window: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushState {
    pub is_source: bool,
    /// Tentative (stage 1) or current (stage 2) opinion; `None` until first contact.
    pub opinion: Option<Opinion>,
    pub committed: Option<Opinion>,
    pub contacted_at: Option<u64>,
    pub tally: [u32; 2],
}

impl PushTwoStage {
    pub fn new(spread_rounds: u64, amplify_rounds: u64, phase: u64, window: u64) -> Result<Self> {
        if phase == 0 || window == 0 {
            return Err(Error::Parameter("phase and window lengths must be positive".into()));
        }
        Ok(Self {
            alphabet: Alphabet::binary(),
            spread_rounds,
            amplify_rounds,
            phase,
            window,
        })
    }

    /// Stage lengths `8·⌈log2 n⌉` each, phases of 4 rounds, windows of 8 rounds.
    pub fn for_population(n: usize) -> Self {
        let stage = 8 * ceil_log2(n);
        Self::new(stage, stage, 4, 8).expect("positive lengths")
    }

    pub fn spread_rounds(&self) -> u64 {
        self.spread_rounds
    }

    pub fn amplify_rounds(&self) -> u64 {
        self.amplify_rounds
    }

    /// Whether the agent has been contacted (sources count as contacted).
    pub fn informed(state: &PushState) -> bool {
        state.opinion.is_some()
    }
}

pub(crate) fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        1
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}

impl Protocol for PushTwoStage {
    type State = PushState;

    fn name(&self) -> &'static str {
        "push-two-stage"
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn init(&self, setup: &AgentSetup<'_>) -> PushState {
        let own = if setup.is_source {
            source_opinion(setup)
        } else {
            None
        };
        PushState {
            is_source: setup.is_source,
            opinion: own,
            committed: own,
            contacted_at: own.map(|_| 0),
            tally: [0, 0],
        }
    }

    fn displayed(&self, state: &PushState) -> Symbol {
        self.alphabet
            .opinion_symbol(state.opinion.unwrap_or_default())
    }

    fn guess(&self, state: &PushState) -> Opinion {
        state.committed.unwrap_or_default()
    }

    fn wants_push(&self, state: &PushState, ctx: &StepContext<'_>) -> bool {
        let round = ctx.time;
        if round >= self.spread_rounds + self.amplify_rounds || state.opinion.is_none() {
            return false;
        }
        if state.is_source || round >= self.spread_rounds {
            return true;
        }
        let phase_start = round / self.phase * self.phase;
        state.contacted_at.is_some_and(|t| t < phase_start)
    }

    fn on_observe(&self, state: &mut PushState, obs: Observation, ctx: &StepContext<'_>) {
        let round = ctx.time;
        if state.is_source || round >= self.spread_rounds + self.amplify_rounds {
            return;
        }
        let Some(op) = self.alphabet.opinion_of(obs.received) else {
            return;
        };
        if round < self.spread_rounds {
            if state.opinion.is_none() {
                state.opinion = Some(op);
                state.contacted_at = Some(round);
            }
        } else {
            state.tally[op.index()] += 1;
        }
    }

    fn on_round_end(&self, state: &mut PushState, ctx: &StepContext<'_>) {
        let round = ctx.time;
        if state.is_source {
            return;
        }
        if round + 1 == self.spread_rounds {
            state.committed = state.opinion;
        }
        if round >= self.spread_rounds
            && round < self.spread_rounds + self.amplify_rounds
            && (round + 1 - self.spread_rounds).is_multiple_of(self.window)
        {
            let [zeros, ones] = state.tally;
            let majority = match zeros.cmp(&ones) {
                std::cmp::Ordering::Greater => Some(Opinion::Zero),
                std::cmp::Ordering::Less => Some(Opinion::One),
                std::cmp::Ordering::Equal => None,
            };
            if let Some(m) = majority {
                state.opinion = Some(m);
                state.committed = Some(m);
                state.contacted_at.get_or_insert(round);
            }
            state.tally = [0, 0];
        }
    }

    fn horizon(&self) -> Option<u64> {
        Some(self.spread_rounds + self.amplify_rounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log2_ceiling() {
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(100), 7);
        assert_eq!(ceil_log2(1024), 10);
        assert_eq!(ceil_log2(1025), 11);
        assert_eq!(PushTwoStage::for_population(1000).spread_rounds(), 80);
    }
}
