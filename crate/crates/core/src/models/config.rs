use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureKind {
    /// Slices stacked on the channel axis, zero padded to `max_slices`.
    Stacked2d,
    /// Fully convolutional over (slice, row, column).
    Conv3d,
    /// Shared per-slice extractor pooled by learned slice weights.
    Attention,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 3] = [Self::Stacked2d, Self::Conv3d, Self::Attention];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Stacked2d => "stacked2d",
            Self::Conv3d => "conv3d",
            Self::Attention => "attention",
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::ArchitectureMismatch {
                expected: "stacked2d|conv3d|attention".into(),
                found: s.into(),
            })
    }
}

/// Which pair of box boundaries a model instance predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoxAxis {
    /// Left and right columns.
    #[serde(rename = "lr")]
    LeftRight,
    /// Top and bottom rows.
    #[serde(rename = "tb")]
    TopBottom,
}

impl BoxAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LeftRight => "lr",
            Self::TopBottom => "tb",
        }
    }
}

impl fmt::Display for BoxAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoxAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(Self::LeftRight),
            "tb" => Ok(Self::TopBottom),
            _ => Err(Error::ArchitectureMismatch {
                expected: "lr|tb".into(),
                found: s.into(),
            }),
        }
    }
}

/// Reduction between the last feature map and the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadPool {
    Average,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub kind: ArchitectureKind,
    pub height: usize,
    pub width: usize,
    pub max_slices: usize,
    /// Channels of the two stem convolutions, the residual block, the
    /// feature map at the pooling junction, and the head convolutions.
    pub widths: [usize; 4],
    pub attention_hidden: usize,
    pub head_pool: HeadPool,
}

impl ArchitectureConfig {
    pub fn new(kind: ArchitectureKind, size: usize, max_slices: usize) -> Self {
        Self {
            kind,
            height: size,
            width: size,
            max_slices,
            widths: [16, 32, 64, 64],
            attention_hidden: 16,
            head_pool: match kind {
                ArchitectureKind::Stacked2d => HeadPool::Flatten,
                _ => HeadPool::Average,
            },
        }
    }

    /// Tiny widths for gradient checks and fast tests.
    pub fn toy(kind: ArchitectureKind, size: usize, max_slices: usize) -> Self {
        Self {
            widths: [2, 3, 4, 4],
            attention_hidden: 3,
            ..Self::new(kind, size, max_slices)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Error::ArchitectureMismatch {
            expected: what.into(),
            found: format!("{self:?}"),
        };
        if self.height == 0 || self.width == 0 || self.max_slices == 0 {
            return Err(bad("non-zero image size and slice count"));
        }
        if self.widths.contains(&0) || self.attention_hidden == 0 {
            return Err(bad("non-zero widths"));
        }
        Ok(())
    }

    /// Spatial size of the head output after five stride-2 stages.
    pub fn head_dims(&self) -> (usize, usize) {
        let mut h = self.height;
        let mut w = self.width;
        for _ in 0..5 {
            h = h.div_ceil(2);
            w = w.div_ceil(2);
        }
        (h, w)
    }

    /// Checks that another config describes the same network.
    pub fn ensure_matches(&self, other: &ArchitectureConfig) -> Result<()> {
        if self != other {
            return Err(Error::ArchitectureMismatch {
                expected: serde_json::to_string(self)?,
                found: serde_json::to_string(other)?,
            });
        }
        Ok(())
    }
}
