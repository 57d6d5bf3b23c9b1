use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of base immunotherapy targets.
pub const N_BASE_TARGETS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseTarget {
    Pd1,
    Pdl1,
    Ctla4,
}

impl BaseTarget {
    pub const ALL: [BaseTarget; N_BASE_TARGETS] = [BaseTarget::Pd1, BaseTarget::Pdl1, BaseTarget::Ctla4];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            BaseTarget::Pd1 => "PD-1",
            BaseTarget::Pdl1 => "PD-L1",
            BaseTarget::Ctla4 => "CTLA-4",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        let norm: String = token
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        match norm.as_str() {
            "PD1" => Some(BaseTarget::Pd1),
            "PDL1" => Some(BaseTarget::Pdl1),
            "CTLA4" => Some(BaseTarget::Ctla4),
            _ => None,
        }
    }
}

/// Multi-hot treatment target over {PD-1, PD-L1, CTLA-4}; at least one bit
/// is always set. Combinations such as `CTLA-4 + PD-1` set several bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TreatmentTarget {
    bits: [bool; N_BASE_TARGETS],
}

impl TreatmentTarget {
    pub fn from_bits(bits: [bool; N_BASE_TARGETS]) -> Result<Self> {
        if !bits.iter().any(|&b| b) {
            return Err(Error::Validation("treatment target has no bit set".into()));
        }
        Ok(Self { bits })
    }

    pub fn single(target: BaseTarget) -> Self {
        let mut bits = [false; N_BASE_TARGETS];
        bits[target.index()] = true;
        Self { bits }
    }

    pub fn combination(targets: &[BaseTarget]) -> Result<Self> {
        let mut bits = [false; N_BASE_TARGETS];
        for t in targets {
            bits[t.index()] = true;
        }
        Self::from_bits(bits)
    }

    pub fn bits(&self) -> [bool; N_BASE_TARGETS] {
        self.bits
    }

    pub fn contains(&self, target: BaseTarget) -> bool {
        self.bits[target.index()]
    }

    pub fn targets(&self) -> impl Iterator<Item = BaseTarget> + '_ {
        BaseTarget::ALL.into_iter().filter(|t| self.contains(*t))
    }

    pub fn multi_hot(&self) -> [f64; N_BASE_TARGETS] {
        self.bits.map(|b| if b { 1.0 } else { 0.0 })
    }
}

impl fmt::Display for TreatmentTarget {
    /// Canonical label; combinations list CTLA-4 first, e.g. `CTLA-4+PD-1`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order = [BaseTarget::Ctla4, BaseTarget::Pd1, BaseTarget::Pdl1];
        let labels: Vec<&str> = order
            .iter()
            .filter(|t| self.contains(**t))
            .map(|t| t.label())
            .collect();
        f.write_str(&labels.join("+"))
    }
}

impl FromStr for TreatmentTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bits = [false; N_BASE_TARGETS];
        for token in s.split('+') {
            let token = token.trim();
            if token.is_empty() {
                continue;
            }
            let t = BaseTarget::parse(token)
                .ok_or_else(|| Error::Validation(format!("unknown treatment token `{token}`")))?;
            bits[t.index()] = true;
        }
        Self::from_bits(bits).map_err(|_| Error::Validation(format!("empty treatment `{s}`")))
    }
}

impl TryFrom<String> for TreatmentTarget {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TreatmentTarget> for String {
    fn from(t: TreatmentTarget) -> String {
        t.to_string()
    }
}
