use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// QP range served by one trained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QpBand {
    /// QP ≤ 24
    Low,
    /// 25 ≤ QP ≤ 29
    Mid1,
    /// 30 ≤ QP ≤ 34
    Mid2,
    /// QP ≥ 35
    High,
}

impl QpBand {
    pub const ALL: [QpBand; 4] = [QpBand::Low, QpBand::Mid1, QpBand::Mid2, QpBand::High];

    pub fn from_qp(qp: u8) -> QpBand {
        match qp {
            0..=24 => QpBand::Low,
            25..=29 => QpBand::Mid1,
            30..=34 => QpBand::Mid2,
            _ => QpBand::High,
        }
    }

    /// QP used to generate training data for the band.
    pub fn representative_qp(self) -> u8 {
        match self {
            QpBand::Low => 22,
            QpBand::Mid1 => 27,
            QpBand::Mid2 => 32,
            QpBand::High => 37,
        }
    }

    /// Hint-phase epochs of the full-scale schedule: more for the heavily
    /// distorted high-QP bands.
    pub fn paper_n2(self) -> usize {
        match self {
            QpBand::Low | QpBand::Mid1 => 10,
            QpBand::Mid2 | QpBand::High => 20,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QpBand::Low => "low",
            QpBand::Mid1 => "mid1",
            QpBand::Mid2 => "mid2",
            QpBand::High => "high",
        }
    }
}

impl fmt::Display for QpBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for QpBand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        QpBand::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown QP band '{s}' (expected low, mid1, mid2 or high)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_partition_qps() {
        assert_eq!(QpBand::from_qp(0), QpBand::Low);
        assert_eq!(QpBand::from_qp(24), QpBand::Low);
        assert_eq!(QpBand::from_qp(25), QpBand::Mid1);
        assert_eq!(QpBand::from_qp(29), QpBand::Mid1);
        assert_eq!(QpBand::from_qp(30), QpBand::Mid2);
        assert_eq!(QpBand::from_qp(34), QpBand::Mid2);
        assert_eq!(QpBand::from_qp(35), QpBand::High);
        assert_eq!(QpBand::from_qp(51), QpBand::High);
        for b in QpBand::ALL {
            assert_eq!(QpBand::from_qp(b.representative_qp()), b);
            assert_eq!(b.name().parse::<QpBand>().unwrap(), b);
        }
        assert!("mid3".parse::<QpBand>().is_err());
    }

    #[test]
    fn hint_epochs() {
        assert_eq!(QpBand::Low.paper_n2(), 10);
        assert_eq!(QpBand::Mid1.paper_n2(), 10);
        assert_eq!(QpBand::Mid2.paper_n2(), 20);
        assert_eq!(QpBand::High.paper_n2(), 20);
    }
}
