//! The instance seen by one agent of a broadcast-PULL protocol.
//!
//! Under broadcast-PULL every agent receives the same sequence, so the agent's view is
//! an adaptive coin-distinguishing instance whose conditional laws mix over the unknown
//! source set. The exact builder enumerates source sets and message outcomes; the
//! empirical builder counts next-symbol frequencies over simulated executions.

use std::collections::HashMap;

use serde::Serialize;

use super::{AcdtInstance, TabularInstance};
use crate::alphabet::{Opinion, Symbol};
use crate::configuration::{charge_with_opinion, AgentId, ChargedConfiguration, NeutralConfiguration, SourceStateSpec};
use crate::error::{Error, Result};
use crate::harness::stats::{wilson, Interval, Z95};
use crate::infotheory::ConditionalProcess;
use crate::models::{Population, PopulationOptions};
use crate::noise::NoiseMatrix;
use crate::protocols::{Observation, Protocol};
use crate::random::{derive_seed, SharedRandomness};

/// Work budget for the exact builder, in agent updates.
pub const CONSTRUCTION_BUDGET: u128 = 1 << 28;

/// Exact conditional laws of agent `observer`'s view up to `horizon` observations.
///
/// Source sets range uniformly over the `s`-subsets of the other agents and η is a fair
/// coin. Every execution shares the seed `seed`, so protocol-internal randomness is
/// fixed and the only uncertainty is the source set and the messages.
#[allow(clippy::too_many_arguments)]
pub fn build_exact_instance<P: Protocol>(
    protocol: &P,
    noise: &NoiseMatrix,
    n: usize,
    s: usize,
    observer: AgentId,
    horizon: usize,
    spec: &SourceStateSpec,
    seed: u64,
) -> Result<TabularInstance> {
    if observer.0 == 0 || observer.index() >= n {
        return Err(Error::Parameter(format!("observer {observer} outside 1..={n}")));
    }
    if s >= n {
        return Err(Error::Parameter(format!("need s < n, got s = {s}, n = {n}")));
    }
    let k = noise.alphabet().len();
    let others: Vec<usize> = (0..n).filter(|&i| i != observer.index()).collect();
    let sets = subsets(&others, s);
    let nodes: u128 = (0..horizon as u32)
        .map(|l| (k as u128).checked_pow(l).unwrap_or(u128::MAX))
        .fold(0u128, |a, b| a.saturating_add(b));
    let work = nodes
        .saturating_mul(sets.len() as u128)
        .saturating_mul(2 * n as u128);
    if work > CONSTRUCTION_BUDGET {
        return Err(Error::Budget {
            requested: work,
            budget: CONSTRUCTION_BUDGET,
        });
    }
    let neutral = NeutralConfiguration::uniform(n)?;
    let randomness = SharedRandomness::new(seed);
    let mut branches: [Vec<(f64, Population<'_, P>)>; 2] = [Vec::new(), Vec::new()];
    for eta in Opinion::BOTH {
        for set in &sets {
            let ids: Vec<AgentId> = set.iter().map(|&i| AgentId::from_index(i)).collect();
            let config = ChargedConfiguration::with_sources(neutral.clone(), &ids, eta, spec, 1)?;
            let pop = Population::new(protocol, noise, &config, randomness, PopulationOptions::default())?;
            branches[eta.index()].push((1.0 / sets.len() as f64, pop));
        }
    }
    let mut table = TabularInstance::new(k, horizon);
    let mut history = Vec::with_capacity(horizon);
    expand(&mut table, &mut history, horizon, branches, k);
    Ok(table)
}

type Branches<'a, P> = [Vec<(f64, Population<'a, P>)>; 2];

fn expand<P: Protocol>(
    table: &mut TabularInstance,
    history: &mut Vec<u16>,
    horizon: usize,
    branches: Branches<'_, P>,
    k: usize,
) {
    if history.len() >= horizon {
        return;
    }
    let mut laws: [Option<Vec<f64>>; 2] = [None, None];
    let mut per_branch: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for eta in 0..2 {
        let total: f64 = branches[eta].iter().map(|(w, _)| w).sum();
        per_branch[eta] = branches[eta].iter().map(|(_, p)| p.broadcast_law()).collect();
        if total > 0.0 {
            let mut law = vec![0.0; k];
            for ((w, _), q) in branches[eta].iter().zip(&per_branch[eta]) {
                for (acc, p) in law.iter_mut().zip(q) {
                    *acc += w / total * p;
                }
            }
            laws[eta] = Some(law);
        }
    }
    table.insert(history.clone(), laws);
    if history.len() + 1 == horizon {
        return;
    }
    for m in 0..k {
        let mut next: Branches<'_, P> = [Vec::new(), Vec::new()];
        for eta in 0..2 {
            for ((w, pop), q) in branches[eta].iter().zip(&per_branch[eta]) {
                let w = w * q[m];
                if w == 0.0 {
                    continue;
                }
                let mut child = pop.fork();
                child.deliver_to_all(Observation::anonymous(Symbol(m as u16)));
                next[eta].push((w, child));
            }
        }
        if next[0].is_empty() && next[1].is_empty() {
            continue;
        }
        history.push(m as u16);
        expand(table, history, horizon, next, k);
        history.pop();
    }
}

fn subsets(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], size: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < size - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, size, 0, &mut Vec::with_capacity(size), &mut out);
    out
}

/// Next-symbol counts per history prefix, gathered from simulated executions.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalInstance {
    pub alphabet_size: usize,
    pub horizon: usize,
    pub executions: u64,
    counts: HashMap<Vec<u16>, [Vec<u64>; 2]>,
}

impl EmpiricalInstance {
    pub fn counts(&self, history: &[u16]) -> Option<&[Vec<u64>; 2]> {
        self.counts.get(history)
    }

    /// Wilson 95% interval for `Pr(X_η = m | history)`.
    pub fn interval(&self, history: &[u16], eta: usize, m: usize) -> Interval {
        match self.counts.get(history) {
            Some(c) => wilson(c[eta][m], c[eta].iter().sum(), Z95),
            None => Interval { lower: 0.0, upper: 1.0 },
        }
    }
}

impl ConditionalProcess for EmpiricalInstance {
    fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    fn law(&self, eta: usize, history: &[u16]) -> Vec<f64> {
        let uniform = || vec![1.0 / self.alphabet_size as f64; self.alphabet_size];
        match self.counts.get(history) {
            Some(c) => {
                let total: u64 = c[eta].iter().sum();
                if total == 0 {
                    uniform()
                } else {
                    c[eta].iter().map(|&x| x as f64 / total as f64).collect()
                }
            }
            None => uniform(),
        }
    }
}

impl AcdtInstance for EmpiricalInstance {}

/// Monte Carlo version of [`build_exact_instance`]. Executions come in coupled pairs
/// that share the source set and all scheduler draws and differ only in η.
#[allow(clippy::too_many_arguments)]
pub fn build_empirical_instance<P: Protocol>(
    protocol: &P,
    noise: &NoiseMatrix,
    n: usize,
    s: usize,
    horizon: usize,
    executions: u64,
    spec: &SourceStateSpec,
    seed: u64,
) -> Result<EmpiricalInstance> {
    let k = noise.alphabet().len();
    let neutral = NeutralConfiguration::uniform(n)?;
    let mut counts: HashMap<Vec<u16>, [Vec<u64>; 2]> = HashMap::new();
    for i in 0..executions {
        let eta = Opinion::from_bit(i % 2 == 1);
        let randomness = SharedRandomness::new(derive_seed(seed, &[i / 2]));
        let config = charge_with_opinion(&neutral, s, eta, spec, 1, &randomness)?;
        let mut pop = Population::new(protocol, noise, &config, randomness, PopulationOptions::default())?;
        let mut history = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let event = pop.step_broadcast();
            let entry = counts
                .entry(history.clone())
                .or_insert_with(|| [vec![0; k], vec![0; k]]);
            entry[eta.index()][event.received.index()] += 1;
            history.push(event.received.0);
        }
    }
    Ok(EmpiricalInstance {
        alphabet_size: k,
        horizon,
        executions,
        counts,
    })
}
