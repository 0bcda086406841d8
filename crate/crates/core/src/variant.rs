use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};

/// Which features are transmitted and how the receiver uses them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `S_f ‖ S_s ‖ S_p` sent side by side (three times the symbols).
    Full,
    /// Hierarchy-aware fusion, masks known at the receiver.
    Proposed,
    /// Hierarchy-aware fusion, masks withheld.
    Separate,
    /// Only the fused deep feature `S_f`.
    Basic,
    /// Spectral features of the LR cube alone.
    HsiOnly,
    /// Spatial features of the RGB image alone.
    RgbOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::Proposed,
        Variant::Separate,
        Variant::Basic,
        Variant::HsiOnly,
        Variant::RgbOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Proposed => "proposed",
            Variant::Separate => "separate",
            Variant::Basic => "basic",
            Variant::HsiOnly => "hsi_only",
            Variant::RgbOnly => "rgb_only",
        }
    }

    /// Number of `w₁×h₁×l` feature maps put on the channel.
    pub fn feature_maps_sent(self) -> u64 {
        match self {
            Variant::Full => 3,
            _ => 1,
        }
    }

    pub fn uses_fusion(self) -> bool {
        matches!(self, Variant::Proposed | Variant::Separate)
    }

    pub fn sends_masks(self) -> bool {
        self == Variant::Proposed
    }

    pub fn single_source(self) -> bool {
        matches!(self, Variant::HsiOnly | Variant::RgbOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().replace('_', "-") == s)
            .ok_or_else(|| invalid(format!("unknown variant `{s}`")))
    }
}
