//! Neutral and charged initial configurations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alphabet::Opinion;
use crate::error::{Error, Result};
use crate::random::{SharedRandomness, CHARGE_STREAM};

/// Agent identity in `1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId(pub u32);

impl AgentId {
    pub fn from_index(index: usize) -> Self {
        AgentId(index as u32 + 1)
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: AgentId,
    /// Protocol-defined initial state label.
    pub state: u32,
    pub opinion: Opinion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeutralConfiguration {
    agents: Vec<AgentRecord>,
}

impl NeutralConfiguration {
    /// `n` agents, all in state 0 with opinion 0.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_records(
            (0..n)
                .map(|i| AgentRecord {
                    id: AgentId::from_index(i),
                    state: 0,
                    opinion: Opinion::Zero,
                })
                .collect(),
        )
    }

    /// Records must carry the identities `1..=n`, each once, in order.
    pub fn from_records(agents: Vec<AgentRecord>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::Configuration("population must be non-empty".into()));
        }
        for (i, a) in agents.iter().enumerate() {
            if a.id != AgentId::from_index(i) {
                return Err(Error::Configuration(format!(
                    "record {i} has identity {}, expected {}",
                    a.id,
                    i + 1
                )));
            }
        }
        Ok(Self { agents })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentRecord] {
        &self.agents
    }
}

/// How a source's initial state is refreshed once the correct opinion is known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SourceStateSpec {
    /// The source's state label becomes the opinion index; it displays η.
    #[default]
    DisplayOpinion,
    /// Explicit `(agent id, opinion) -> state` map; missing entries keep the neutral state.
    Table(BTreeMap<String, u32>),
}

impl SourceStateSpec {
    pub fn table_key(id: AgentId, opinion: Opinion) -> String {
        format!("{}:{}", id.0, opinion.index())
    }

    fn refresh(&self, record: &AgentRecord, eta: Opinion) -> u32 {
        match self {
            SourceStateSpec::DisplayOpinion => eta.index() as u32,
            SourceStateSpec::Table(map) => map
                .get(&Self::table_key(record.id, eta))
                .copied()
                .unwrap_or(record.state),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargedConfiguration {
    pub neutral: NeutralConfiguration,
    agents: Vec<AgentRecord>,
    sources: Vec<AgentId>,
    is_source: Vec<bool>,
    pub correct_opinion: Opinion,
    /// Each real source counts `source_weight` times when sampled.
    pub source_weight: u32,
}

impl ChargedConfiguration {
    /// Charges with an explicit source set and opinion. An empty source set is
    /// accepted here for diagnostics.
    pub fn with_sources(
        neutral: NeutralConfiguration,
        sources: &[AgentId],
        correct_opinion: Opinion,
        spec: &SourceStateSpec,
        source_weight: u32,
    ) -> Result<Self> {
        let n = neutral.n();
        if source_weight == 0 {
            return Err(Error::Configuration("source weight must be positive".into()));
        }
        let mut is_source = vec![false; n];
        for id in sources {
            if id.0 == 0 || id.index() >= n {
                return Err(Error::Configuration(format!("source {id} outside 1..={n}")));
            }
            if std::mem::replace(&mut is_source[id.index()], true) {
                return Err(Error::Configuration(format!("source {id} listed twice")));
            }
        }
        let mut sources = sources.to_vec();
        sources.sort();
        let agents = neutral
            .agents()
            .iter()
            .map(|r| {
                if is_source[r.id.index()] {
                    AgentRecord {
                        id: r.id,
                        state: spec.refresh(r, correct_opinion),
                        opinion: correct_opinion,
                    }
                } else {
                    r.clone()
                }
            })
            .collect();
        Ok(Self {
            neutral,
            agents,
            sources,
            is_source,
            correct_opinion,
            source_weight,
        })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn s(&self) -> usize {
        self.sources.len()
    }

    pub fn agents(&self) -> &[AgentRecord] {
        &self.agents
    }

    pub fn sources(&self) -> &[AgentId] {
        &self.sources
    }

    pub fn is_source(&self, id: AgentId) -> bool {
        self.is_source[id.index()]
    }

    pub fn source_mask(&self) -> &[bool] {
        &self.is_source
    }

    /// Smallest-id non-source agent.
    pub fn designated_agent(&self) -> Option<AgentId> {
        self.is_source
            .iter()
            .position(|s| !s)
            .map(AgentId::from_index)
    }

    /// Number of observable slots: every source appears `source_weight` times.
    pub fn effective_n(&self) -> usize {
        self.n() + (self.source_weight as usize - 1) * self.s()
    }

    /// Maps observable slot index to the agent index that controls it. The first `n`
    /// slots are the agents themselves, followed by the coordinated source copies.
    pub fn display_slots(&self) -> Vec<usize> {
        let mut slots: Vec<usize> = (0..self.n()).collect();
        for _ in 1..self.source_weight {
            slots.extend(self.sources.iter().map(|id| id.index()));
        }
        slots
    }

    /// Same configuration with the correct opinion replaced (sources refreshed again).
    pub fn with_opinion(&self, eta: Opinion, spec: &SourceStateSpec) -> Self {
        Self::with_sources(
            self.neutral.clone(),
            &self.sources,
            eta,
            spec,
            self.source_weight,
        )
        .expect("existing configuration is valid")
    }
}

/// Three-stage charging: uniform source set, fair-coin opinion, source state refresh.
pub fn charge_configuration(
    neutral: &NeutralConfiguration,
    s: usize,
    spec: &SourceStateSpec,
    source_weight: u32,
    randomness: &SharedRandomness,
) -> Result<ChargedConfiguration> {
    let eta = Opinion::from_bit(randomness.coin(CHARGE_STREAM, 1, 0));
    charge_with_opinion(neutral, s, eta, spec, source_weight, randomness)
}

/// Like [`charge_configuration`] but with a fixed correct opinion.
pub fn charge_with_opinion(
    neutral: &NeutralConfiguration,
    s: usize,
    eta: Opinion,
    spec: &SourceStateSpec,
    source_weight: u32,
    randomness: &SharedRandomness,
) -> Result<ChargedConfiguration> {
    let n = neutral.n();
    if s == 0 || s >= n {
        return Err(Error::Configuration(format!(
            "need 1 <= s < n, got s = {s}, n = {n}"
        )));
    }
    let sources = sample_source_set(n, s, randomness);
    ChargedConfiguration::with_sources(neutral.clone(), &sources, eta, spec, source_weight)
}

/// Partial Fisher-Yates over `1..=n` drawing from the charge stream.
fn sample_source_set(n: usize, s: usize, randomness: &SharedRandomness) -> Vec<AgentId> {
    if s * 8 < n {
        // sparse: rejection keeps this O(s)
        let mut chosen = Vec::with_capacity(s);
        let mut draw = 0u64;
        while chosen.len() < s {
            let pick = randomness.below(CHARGE_STREAM, 0, draw, n);
            draw += 1;
            if !chosen.contains(&pick) {
                chosen.push(pick);
            }
        }
        return chosen.into_iter().map(AgentId::from_index).collect();
    }
    let mut ids: Vec<usize> = (0..n).collect();
    for i in 0..s {
        let j = i + randomness.below(CHARGE_STREAM, 0, i as u64, n - i);
        ids.swap(i, j);
    }
    ids[..s].iter().map(|&i| AgentId::from_index(i)).collect()
}

/// Per-history ℓ1 gap bound `2 s (1 − 2δ) / n`.
pub fn epsilon_bound(n: usize, s: usize, delta: f64) -> f64 {
    2.0 * s as f64 * (1.0 - 2.0 * delta) / n as f64
}
