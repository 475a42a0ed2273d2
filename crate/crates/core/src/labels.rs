//! Species codes and patch-level class labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The nine strains of the fungus scan collection, in report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Species {
    CA,
    CG,
    CL,
    CN,
    CP,
    CT,
    MF,
    SB,
    SC,
}

impl Species {
    pub const ALL: [Species; 9] = [
        Species::CA,
        Species::CG,
        Species::CL,
        Species::CN,
        Species::CP,
        Species::CT,
        Species::MF,
        Species::SB,
        Species::SC,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Species> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            Species::CA => "CA",
            Species::CG => "CG",
            Species::CL => "CL",
            Species::CN => "CN",
            Species::CP => "CP",
            Species::CT => "CT",
            Species::MF => "MF",
            Species::SB => "SB",
            Species::SC => "SC",
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Species::ALL
            .iter()
            .copied()
            .find(|sp| sp.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown species code {s:?}")))
    }
}

/// Class of a single patch: one of the species, or the extra background class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatchLabel {
    Species(Species),
    Background,
}

impl PatchLabel {
    /// Number of patch classes (nine species plus BG).
    pub const COUNT: usize = 10;

    /// Dense class index: species 0..9, BG = 9.
    pub fn index(self) -> usize {
        match self {
            PatchLabel::Species(s) => s.index(),
            PatchLabel::Background => 9,
        }
    }

    pub fn from_index(i: usize) -> Option<PatchLabel> {
        if i == 9 {
            Some(PatchLabel::Background)
        } else {
            Species::from_index(i).map(PatchLabel::Species)
        }
    }

    pub fn species(self) -> Option<Species> {
        match self {
            PatchLabel::Species(s) => Some(s),
            PatchLabel::Background => None,
        }
    }
}

impl fmt::Display for PatchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatchLabel::Species(s) => s.fmt(f),
            PatchLabel::Background => f.write_str("BG"),
        }
    }
}

impl FromStr for PatchLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("BG") {
            Ok(PatchLabel::Background)
        } else {
            s.parse().map(PatchLabel::Species)
        }
    }
}
