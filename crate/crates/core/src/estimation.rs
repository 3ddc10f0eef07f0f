//! Estimating a message-confusion matrix from recorded interactions.
//!
//! Each record says which message was sent and how the receiver responded (a number,
//! binned into discrete response classes). With equal priors over messages, the
//! posterior that a response `v` came from message `i` is `p_i(v) = p(v|i) / Σ_k p(v|k)`,
//! and `δ(i, j) = Σ_v p(v|j) p_i(v)` is the chance that a message `j` is read as `i`.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::noise::NoiseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub sent_message: String,
    pub response_value: f64,
}

/// Response classes cut at increasing edges: `(-∞, e0), [e0, e1), …, [e_last, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseBins {
    edges: Vec<f64>,
}

impl ResponseBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(format!("bin edges must be finite and increasing: {edges:?}")));
        }
        Ok(Self { edges })
    }

    /// Speed classes 0–1, 1–5, 5–8 and above 8 (cm/s).
    pub fn speed_preset() -> Self {
        Self { edges: vec![1.0, 5.0, 8.0] }
    }

    /// Parses a comma-separated edge list such as `"1,5,8"`.
    pub fn parse(text: &str) -> Result<Self> {
        let edges = text
            .split(',')
            .map(|t| t.trim())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parameter(format!("bad bin edge {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, value: f64) -> usize {
        self.edges.partition_point(|&e| e <= value)
    }

    pub fn labels(&self) -> Vec<String> {
        let fmt = |x: f64| format!("{x}");
        (0..self.len())
            .map(|i| match (i, self.edges.len()) {
                (_, 0) => "all".to_string(),
                (0, _) => format!("<{}", fmt(self.edges[0])),
                (i, m) if i == m => format!(">={}", fmt(self.edges[m - 1])),
                (i, _) => format!("{}-{}", fmt(self.edges[i - 1]), fmt(self.edges[i])),
            })
            .collect()
    }
}

/// Handling of response bins that no record falls into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Smoothing {
    /// Drop bins that are empty for every message; they carry no probability.
    #[default]
    DropEmpty,
    /// Add a pseudo-count to every (message, bin) cell.
    Additive { pseudo_count: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionEstimate {
    pub messages: Vec<String>,
    /// Labels of the response bins that were kept.
    pub bins: Vec<String>,
    pub dropped_bins: Vec<String>,
    /// Raw counts, `counts[j][v]` over all bins (kept and dropped).
    pub counts: Vec<Vec<u64>>,
    pub smoothing: Smoothing,
    /// `likelihoods[j][v] = p(v | j)` over kept bins.
    pub likelihoods: Vec<Vec<f64>>,
    /// `posteriors[i][v] = p_i(v)`.
    pub posteriors: Vec<Vec<f64>>,
    /// `delta[i][j] = δ(i, j)`.
    pub delta: Vec<Vec<f64>>,
    pub min_delta: f64,
    pub records: u64,
}

/// Distinct messages in order of first appearance.
pub fn messages_from_records(records: &[InteractionRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.sent_message) {
            out.push(r.sent_message.clone());
        }
    }
    out
}

pub fn estimate_confusion(
    records: &[InteractionRecord],
    messages: &[String],
    bins: &ResponseBins,
    smoothing: Smoothing,
) -> Result<ConfusionEstimate> {
    if messages.len() < 2 {
        return Err(Error::Estimation("need at least two messages".into()));
    }
    let k = messages.len();
    let nb = bins.len();
    let mut counts = vec![vec![0u64; nb]; k];
    for r in records {
        let j = messages
            .iter()
            .position(|m| *m == r.sent_message)
            .ok_or_else(|| Error::Estimation(format!("record with unknown message {:?}", r.sent_message)))?;
        if !r.response_value.is_finite() {
            return Err(Error::Estimation(format!("non-finite response for {:?}", r.sent_message)));
        }
        counts[j][bins.index(r.response_value)] += 1;
    }
    for (j, row) in counts.iter().enumerate() {
        if row.iter().sum::<u64>() == 0 {
            return Err(Error::Estimation(format!("message {:?} has no records", messages[j])));
        }
    }
    let labels = bins.labels();
    let (kept, pseudo): (Vec<usize>, f64) = match smoothing {
        Smoothing::DropEmpty => (
            (0..nb).filter(|&v| counts.iter().any(|row| row[v] > 0)).collect(),
            0.0,
        ),
        Smoothing::Additive { pseudo_count } => {
            if !(pseudo_count > 0.0 && pseudo_count.is_finite()) {
                return Err(Error::Parameter(format!("pseudo-count {pseudo_count} must be positive")));
            }
            ((0..nb).collect(), pseudo_count)
        }
    };
    let likelihoods: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| {
            let total: f64 = kept.iter().map(|&v| row[v] as f64 + pseudo).sum();
            kept.iter().map(|&v| (row[v] as f64 + pseudo) / total).collect()
        })
        .collect();
    let nv = kept.len();
    let column: Vec<f64> = (0..nv).map(|v| likelihoods.iter().map(|l| l[v]).sum()).collect();
    let posteriors: Vec<Vec<f64>> = likelihoods
        .iter()
        .map(|l| (0..nv).map(|v| l[v] / column[v]).collect())
        .collect();
    let delta: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (0..nv).map(|v| likelihoods[j][v] * posteriors[i][v]).sum())
                .collect()
        })
        .collect();
    for j in 0..k {
        let s: f64 = (0..k).map(|i| delta[i][j]).sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Estimation(format!(
                "confusion column for {:?} sums to {s}",
                messages[j]
            )));
        }
    }
    let min_delta = delta.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(ConfusionEstimate {
        messages: messages.to_vec(),
        bins: kept.iter().map(|&v| labels[v].clone()).collect(),
        dropped_bins: (0..nb).filter(|v| !kept.contains(v)).map(|v| labels[v].clone()).collect(),
        counts,
        smoothing,
        likelihoods,
        posteriors,
        delta,
        min_delta,
        records: records.len() as u64,
    })
}

/// Channel whose row for sent message `j` is `(δ(i, j))_i`. The first and last
/// messages are the opinion symbols.
pub fn export_noise_matrix(estimate: &ConfusionEstimate) -> Result<NoiseMatrix> {
    let k = estimate.messages.len();
    if k < 2 || estimate.delta.len() != k {
        return Err(Error::Estimation("incomplete estimate".into()));
    }
    let alphabet = Alphabet::with_opinions(
        estimate.messages.clone(),
        &estimate.messages[0],
        &estimate.messages[k - 1],
    )?;
    let rows = (0..k)
        .map(|j| (0..k).map(|i| estimate.delta[i][j]).collect())
        .collect();
    NoiseMatrix::renormalized(alphabet, rows)
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<InteractionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sent_message", "response_value"] {
        return Err(Error::Estimation(format!(
            "expected header sent_message,response_value, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn read_records_file(path: impl AsRef<Path>) -> Result<Vec<InteractionRecord>> {
    read_records(std::fs::File::open(path)?)
}

/// Synthetic interaction data calibrated so that the speed preset yields a minimum
/// confusion close to 0.2. Not measured data.
pub const SYNTHETIC_ANT_CSV: &str = include_str!("../data/ant_synthetic.csv");
