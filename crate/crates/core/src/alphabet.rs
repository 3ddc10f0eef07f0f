//! Message alphabets and the two opinion values.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a message in its [`Alphabet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Symbol(pub u16);

impl Symbol {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A binary opinion. `Zero` is the default guess everywhere a tie has to be broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Opinion {
    #[default]
    Zero,
    One,
}

impl Opinion {
    pub const BOTH: [Opinion; 2] = [Opinion::Zero, Opinion::One];

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Opinion::One
        } else {
            Opinion::Zero
        }
    }

    pub fn bit(self) -> bool {
        matches!(self, Opinion::One)
    }

    pub fn index(self) -> usize {
        self.bit() as usize
    }

    pub fn flip(self) -> Self {
        Opinion::from_bit(!self.bit())
    }
}

impl fmt::Display for Opinion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Ordered set of message labels with two designated opinion symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    labels: Vec<String>,
    opinions: [Symbol; 2],
}

impl Alphabet {
    /// Builds an alphabet whose opinion symbols are the labels `"0"` and `"1"`.
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        Self::with_opinions(labels, "0", "1")
    }

    /// Builds an alphabet where `zero` and `one` name the opinion symbols.
    pub fn with_opinions<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        zero: &str,
        one: &str,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::Alphabet(format!(
                "need at least two symbols, got {}",
                labels.len()
            )));
        }
        if labels.len() > u16::MAX as usize {
            return Err(Error::Alphabet("too many symbols".into()));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::Alphabet(format!("duplicate label {label:?}")));
            }
        }
        let find = |name: &str| {
            labels
                .iter()
                .position(|l| l == name)
                .map(|i| Symbol(i as u16))
                .ok_or_else(|| Error::Alphabet(format!("opinion symbol {name:?} missing")))
        };
        let opinions = [find(zero)?, find(one)?];
        if opinions[0] == opinions[1] {
            return Err(Error::Alphabet("opinion symbols must differ".into()));
        }
        Ok(Self { labels, opinions })
    }

    pub fn binary() -> Self {
        Self::new(["0", "1"]).expect("binary alphabet is valid")
    }

    /// The five-symbol alphabet `m1..m5` with `m1` = 0 and `m5` = 1.
    pub fn five_level() -> Self {
        Self::with_opinions(["m1", "m2", "m3", "m4", "m5"], "m1", "m5")
            .expect("five-level alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, symbol: Symbol) -> &str {
        &self.labels[symbol.index()]
    }

    pub fn symbol(&self, label: &str) -> Option<Symbol> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| Symbol(i as u16))
    }

    pub fn symbols(&self) -> impl Iterator<Item = Symbol> + '_ {
        (0..self.labels.len()).map(|i| Symbol(i as u16))
    }

    pub fn opinion_symbol(&self, opinion: Opinion) -> Symbol {
        self.opinions[opinion.index()]
    }

    pub fn opinion_of(&self, symbol: Symbol) -> Option<Opinion> {
        if symbol == self.opinions[0] {
            Some(Opinion::Zero)
        } else if symbol == self.opinions[1] {
            Some(Opinion::One)
        } else {
            None
        }
    }

    pub fn contains(&self, symbol: Symbol) -> bool {
        symbol.index() < self.labels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_and_duplicate() {
        assert!(Alphabet::new(["0"]).is_err());
        assert!(Alphabet::new(["0", "1", "0"]).is_err());
        assert!(Alphabet::new(["a", "b"]).is_err());
    }

    #[test]
    fn five_level_opinions() {
        let a = Alphabet::five_level();
        assert_eq!(a.opinion_symbol(Opinion::Zero), Symbol(0));
        assert_eq!(a.opinion_symbol(Opinion::One), Symbol(4));
        assert_eq!(a.opinion_of(Symbol(2)), None);
        assert_eq!(a.symbol("m3"), Some(Symbol(2)));
    }
}
