//! Geometric prompts accepted by the decoder.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::SoftMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PointPrompt {
    pub x: usize,
    pub y: usize,
    /// Foreground (`true`) or background click.
    pub positive: bool,
}

/// Inclusive pixel box; `x0 <= x1`, `y0 <= y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxPrompt {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GeometricPrompt {
    Points(Vec<PointPrompt>),
    Box(BoxPrompt),
    CoarseMask(SoftMask),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Box,
    Point,
    Coarse,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Box, PromptKind::Point, PromptKind::Coarse];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Box => "box",
            PromptKind::Point => "point",
            PromptKind::Coarse => "coarse",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(PromptKind::Box),
            "point" => Ok(PromptKind::Point),
            "coarse" => Ok(PromptKind::Coarse),
            _ => Err(Error::invalid(format!(
                "unknown prompt kind `{s}` (box | point | coarse)"
            ))),
        }
    }
}

impl GeometricPrompt {
    pub fn kind(&self) -> PromptKind {
        match self {
            GeometricPrompt::Points(_) => PromptKind::Point,
            GeometricPrompt::Box(_) => PromptKind::Box,
            GeometricPrompt::CoarseMask(_) => PromptKind::Coarse,
        }
    }

    /// Checks coordinates against an `h x w` frame.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        match self {
            GeometricPrompt::Points(pts) => {
                if pts.is_empty() {
                    return Err(Error::invalid("point prompt with no points"));
                }
                for p in pts {
                    if p.x >= w || p.y >= h {
                        return Err(Error::invalid(format!(
                            "point ({}, {}) outside {w}x{h} frame",
                            p.x, p.y
                        )));
                    }
                }
            }
            GeometricPrompt::Box(b) => {
                if b.x1 >= w || b.y1 >= h {
                    return Err(Error::invalid(format!(
                        "box ({},{})-({},{}) outside {w}x{h} frame",
                        b.x0, b.y0, b.x1, b.y1
                    )));
                }
                if b.x0 > b.x1 || b.y0 > b.y1 {
                    return Err(Error::invalid(format!(
                        "box ({},{})-({},{}) is not well ordered",
                        b.x0, b.y0, b.x1, b.y1
                    )));
                }
            }
            GeometricPrompt::CoarseMask(m) => {
                if m.height != h || m.width != w || m.data.len() != h * w {
                    return Err(Error::invalid(format!(
                        "coarse mask {}x{} does not match {w}x{h} frame",
                        m.width, m.height
                    )));
                }
                if m.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::invalid("coarse mask values must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }
}
