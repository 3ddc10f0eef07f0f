//! Row-stochastic noise matrices and their ellipticity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::{Alphabet, Symbol};
use crate::error::{Error, Result};

/// Row sums must be within this distance of 1.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// Channel matrix: entry `(m, m')` is the probability that displayed `m` is received as `m'`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrix {
    alphabet: Alphabet,
    rows: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
}

impl NoiseMatrix {
    pub fn new(alphabet: Alphabet, rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = alphabet.len();
        if rows.len() != k {
            return Err(Error::NoiseMatrix(format!(
                "expected {k} rows, got {}",
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::NoiseMatrix(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) || v.is_nan() {
                    return Err(Error::EntryOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
                return Err(Error::NotStochastic {
                    row: i,
                    label: alphabet.labels()[i].clone(),
                    sum,
                });
            }
        }
        let cumulative = rows
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            alphabet,
            rows,
            cumulative,
        })
    }

    /// Divides every row by its sum. Only used when the caller asks for it.
    pub fn renormalized(alphabet: Alphabet, rows: Vec<Vec<f64>>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let sum: f64 = row.iter().sum();
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::NoiseMatrix(format!("row {i} cannot be normalized")));
                }
                Ok(row.into_iter().map(|v| v / sum).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Self::new(alphabet, rows)
    }

    pub fn identity(alphabet: Alphabet) -> Self {
        let k = alphabet.len();
        let rows = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(alphabet, rows).expect("identity is stochastic")
    }

    /// Every message is received as every symbol with probability `1/|Σ|`.
    pub fn uniform(alphabet: Alphabet) -> Self {
        let k = alphabet.len();
        let rows = vec![vec![1.0 / k as f64; k]; k];
        Self::renormalized(alphabet, rows).expect("uniform matrix is stochastic")
    }

    /// Binary symmetric channel flipping with probability `delta`.
    pub fn binary_symmetric(delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::Parameter(format!("flip probability {delta} not in [0,1]")));
        }
        Self::new(
            Alphabet::binary(),
            vec![vec![1.0 - delta, delta], vec![delta, 1.0 - delta]],
        )
    }

    /// `m_i` stays with probability `1 - 2q` (interior) or `1 - q` (ends) and moves to each
    /// neighbour with probability `q`; no other confusion is possible.
    pub fn consecutive(alphabet: Alphabet, q: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&q) {
            return Err(Error::Parameter(format!("neighbour probability {q} not in [0, 1/2]")));
        }
        let k = alphabet.len();
        let rows = (0..k)
            .map(|i| {
                let mut row = vec![0.0; k];
                let mut stay = 1.0;
                if i > 0 {
                    row[i - 1] = q;
                    stay -= q;
                }
                if i + 1 < k {
                    row[i + 1] = q;
                    stay -= q;
                }
                row[i] = stay;
                row
            })
            .collect();
        Self::new(alphabet, rows)
    }

    /// The five-level consecutive-noise channel used by the structured-noise protocol.
    pub fn five_level(q: f64) -> Result<Self> {
        Self::consecutive(Alphabet::five_level(), q)
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, displayed: Symbol) -> &[f64] {
        &self.rows[displayed.index()]
    }

    pub fn prob(&self, displayed: Symbol, received: Symbol) -> f64 {
        self.rows[displayed.index()][received.index()]
    }

    /// Maps a uniform draw `u ∈ [0,1)` to a received symbol for `displayed`.
    #[inline]
    pub fn sample(&self, displayed: Symbol, u: f64) -> Symbol {
        let cum = &self.cumulative[displayed.index()];
        let last = cum.len() - 1;
        for (j, &c) in cum[..last].iter().enumerate() {
            if u < c {
                return Symbol(j as u16);
            }
        }
        // skip trailing zero-probability symbols absorbed by rounding
        let mut j = last;
        while j > 0 && self.rows[displayed.index()][j] == 0.0 {
            j -= 1;
        }
        Symbol(j as u16)
    }

    /// Largest δ with every entry ≥ δ.
    pub fn uniform_delta(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest δ with `P[m][m'] ≥ δ` for all `m` and all `m'` in `targets`.
    pub fn relaxed_delta(&self, targets: &[Symbol]) -> f64 {
        self.rows
            .iter()
            .flat_map(|row| targets.iter().map(move |t| row[t.index()]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self, delta: f64, targets: &[Symbol]) -> EllipticityReport {
        let uniform_delta = self.uniform_delta();
        let relaxed_delta = self.relaxed_delta(targets);
        EllipticityReport {
            uniform_delta,
            relaxed_delta,
            relaxed_targets: targets.to_vec(),
            satisfies_uniform: uniform_delta >= delta,
            satisfies_relaxed: relaxed_delta >= delta,
            delta,
        }
    }

    pub fn to_json(&self) -> NoiseMatrixJson {
        let labels = self.alphabet.labels();
        NoiseMatrixJson {
            alphabet: labels.to_vec(),
            rows: self.rows.clone(),
            opinions: Some([
                self.alphabet
                    .label(self.alphabet.opinion_symbol(crate::Opinion::Zero))
                    .to_string(),
                self.alphabet
                    .label(self.alphabet.opinion_symbol(crate::Opinion::One))
                    .to_string(),
            ]),
        }
    }

    pub fn from_json(json: NoiseMatrixJson) -> Result<Self> {
        let alphabet = match &json.opinions {
            Some([zero, one]) => Alphabet::with_opinions(json.alphabet.clone(), zero, one)?,
            None => Alphabet::new(json.alphabet.clone())?,
        };
        Self::new(alphabet, json.rows)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }
}

/// Wire format: `{"alphabet": [...], "rows": [[...]]}` with optional opinion labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMatrixJson {
    pub alphabet: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opinions: Option<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticityReport {
    pub delta: f64,
    pub uniform_delta: f64,
    pub relaxed_delta: f64,
    pub relaxed_targets: Vec<Symbol>,
    pub satisfies_uniform: bool,
    pub satisfies_relaxed: bool,
}

/// Checks the uniform and relaxed criteria of `matrix` for a given δ and target set.
pub fn validate_noise_matrix(
    matrix: &NoiseMatrix,
    delta: f64,
    targets: &[Symbol],
) -> EllipticityReport {
    matrix.validate(delta, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::SharedRandomness;

    fn quad() -> Alphabet {
        Alphabet::new(["0", "1", "2", "3"]).unwrap()
    }

    #[test]
    fn uniform_four_symbols() {
        let p = NoiseMatrix::uniform(quad());
        assert_eq!(p.uniform_delta(), 0.25);
        let r = p.validate(0.25, &[Symbol(0)]);
        assert!(r.satisfies_uniform && r.satisfies_relaxed);
    }

    #[test]
    fn identity_never_uniform() {
        let p = NoiseMatrix::identity(quad());
        for d in [1e-9, 0.01, 0.25] {
            assert!(!p.validate(d, &[]).satisfies_uniform);
        }
    }

    #[test]
    fn five_level_fails_both_criteria() {
        let p = NoiseMatrix::five_level(0.2).unwrap();
        let ends = [Symbol(0), Symbol(4)];
        assert_eq!(p.prob(Symbol(2), Symbol(0)), 0.0);
        for d in [1e-6, 0.1] {
            let r = p.validate(d, &ends);
            assert!(!r.satisfies_uniform);
            assert!(!r.satisfies_relaxed);
        }
    }

    #[test]
    fn non_stochastic_row_is_named() {
        let err = NoiseMatrix::new(Alphabet::binary(), vec![vec![0.5, 0.5], vec![0.3, 0.6]])
            .unwrap_err();
        match err {
            Error::NotStochastic { row, label, .. } => {
                assert_eq!(row, 1);
                assert_eq!(label, "1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn renormalize_only_on_request() {
        let rows = vec![vec![2.0, 2.0], vec![1.0, 3.0]];
        assert!(NoiseMatrix::new(Alphabet::binary(), rows.clone()).is_err());
        let p = NoiseMatrix::renormalized(Alphabet::binary(), rows).unwrap();
        assert_eq!(p.row(Symbol(1)), &[0.25, 0.75]);
    }

    #[test]
    fn identity_sampling_is_exact() {
        let p = NoiseMatrix::identity(quad());
        let r = SharedRandomness::new(5);
        for i in 0..1000 {
            assert_eq!(p.sample(Symbol(2), r.unit(0, i, 0)), Symbol(2));
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let p = NoiseMatrix::uniform(quad());
        let r = SharedRandomness::new(11);
        let draws = 1_000_000u64;
        let mut counts = [0u64; 4];
        for i in 0..draws {
            counts[p.sample(Symbol(1), r.unit(0, i, 0)).index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.002, "{counts:?}");
        }
    }

    #[test]
    fn binary_symmetric_flip_rate() {
        let p = NoiseMatrix::binary_symmetric(0.2).unwrap();
        let r = SharedRandomness::new(12);
        let draws = 1_000_000u64;
        let flips = (0..draws)
            .filter(|&i| p.sample(Symbol(0), r.unit(0, i, 0)) == Symbol(1))
            .count();
        assert!((flips as f64 / draws as f64 - 0.2).abs() < 0.002);
    }

    #[test]
    fn sample_never_returns_impossible_symbol() {
        let p = NoiseMatrix::five_level(0.2).unwrap();
        assert_eq!(p.sample(Symbol(0), 0.999_999_999_999), Symbol(1));
        assert_eq!(p.sample(Symbol(2), 0.0), Symbol(1));
    }

    #[test]
    fn json_round_trip() {
        let p = NoiseMatrix::five_level(0.1).unwrap();
        let back = NoiseMatrix::from_json(
            serde_json::from_str(&serde_json::to_string(&p.to_json()).unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, p);
        let plain: NoiseMatrixJson =
            serde_json::from_str(r#"{"alphabet":["0","1"],"rows":[[0.9,0.1],[0.1,0.9]]}"#).unwrap();
        assert_eq!(NoiseMatrix::from_json(plain).unwrap().uniform_delta(), 0.1);
    }

    proptest::proptest! {
        #[test]
        fn uniform_delta_at_most_inverse_size(raw in proptest::collection::vec(0.01f64..1.0, 9)) {
            let rows: Vec<Vec<f64>> = raw.chunks(3).map(|c| c.to_vec()).collect();
            let p = NoiseMatrix::renormalized(Alphabet::new(["0", "1", "2"]).unwrap(), rows).unwrap();
            proptest::prop_assert!(p.uniform_delta() <= 1.0 / 3.0 + 1e-15);
            for row in p.rows() {
                proptest::prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOLERANCE);
            }
            let d = p.uniform_delta();
            proptest::prop_assert!(p.relaxed_delta(&[Symbol(0)]) >= d);
            proptest::prop_assert!(p.relaxed_delta(&[Symbol(1), Symbol(2)]) >= d);
        }
    }
}
