//! Unbiased stochastic quantizers.
//!
//! Two families are provided:
//!
//! * the grid quantizer `Q_gamma`, which rounds each coordinate to one of the
//!   two neighbouring multiples of `gamma` (absolute variance bound), and
//! * the normalized quantizer `Q^s`, which rounds `|x_i| / ||x||` to one of
//!   `s + 1` levels in `[0, 1]` (variance bound relative to `||x||^2`).
//!
//! Both consume exactly one uniform draw per coordinate, whatever the input,
//! so random streams stay aligned across runs with different data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QdgdError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantizerKind {
    /// No quantization; transmitted states are exact.
    Exact,
    Grid { gamma: f64 },
    Normalized { s: u32 },
}

/// Which of the two variance conditions a quantizer satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantType {
    /// `E||Q(x) - x||^2 <= sigma^2`.
    Type1,
    /// `E||Q(x) - x||^2 <= sigma^2 ||x||^2`.
    Type2,
}

/// A quantizer together with the state dimension it acts on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuantizerSpec", into = "RawQuantizerSpec")]
pub struct QuantizerSpec {
    kind: QuantizerKind,
    dim: usize,
}

impl QuantizerSpec {
    pub fn new(kind: QuantizerKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(QdgdError::InvalidInput("quantizer dimension must be positive".into()));
        }
        match kind {
            QuantizerKind::Grid { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                return Err(QdgdError::InvalidInput(format!("grid step must be positive, got {gamma}")));
            }
            QuantizerKind::Normalized { s } if s < 2 => {
                return Err(QdgdError::InvalidInput(format!("normalized levels need s >= 2, got {s}")));
            }
            _ => {}
        }
        Ok(Self { kind, dim })
    }

    pub fn exact(dim: usize) -> Result<Self> {
        Self::new(QuantizerKind::Exact, dim)
    }

    pub fn grid(gamma: f64, dim: usize) -> Result<Self> {
        Self::new(QuantizerKind::Grid { gamma }, dim)
    }

    pub fn normalized(s: u32, dim: usize) -> Result<Self> {
        Self::new(QuantizerKind::Normalized { s }, dim)
    }

    pub fn kind(&self) -> QuantizerKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `None` for the exact (identity) quantizer.
    pub fn quant_type(&self) -> Option<QuantType> {
        match self.kind {
            QuantizerKind::Exact => None,
            QuantizerKind::Grid { .. } => Some(QuantType::Type1),
            QuantizerKind::Normalized { .. } => Some(QuantType::Type2),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.kind, QuantizerKind::Exact)
    }

    /// Writes `Q(x)` into `out`. For [`QuantizerKind::Exact`] this is a copy
    /// and no randomness is consumed.
    pub fn quantize_into<R: Rng + ?Sized>(&self, x: &[f64], out: &mut [f64], rng: &mut R) -> Result<()> {
        if x.len() != self.dim {
            return Err(QdgdError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if out.len() != x.len() {
            return Err(QdgdError::DimensionMismatch { expected: x.len(), got: out.len() });
        }
        match self.kind {
            QuantizerKind::Exact => {
                check_finite(x)?;
                out.copy_from_slice(x);
                Ok(())
            }
            QuantizerKind::Grid { gamma } => grid_into(x, gamma, out, rng),
            QuantizerKind::Normalized { s } => normalized_into(x, s, out, rng),
        }
    }

    pub fn quantize<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.quantize_into(x, &mut out, rng)?;
        Ok(out)
    }
}

/// Variance parameter `sigma^2` of a quantizer.
///
/// Grid: `n gamma^2 / 4`, the per-coordinate bound summed over `n`
/// independent coordinates. Normalized: `min(n / s^2, sqrt(n) / s)`, a
/// coefficient multiplying `||x||^2`.
pub fn variance_param(spec: &QuantizerSpec) -> f64 {
    let n = spec.dim as f64;
    match spec.kind {
        QuantizerKind::Exact => 0.0,
        QuantizerKind::Grid { gamma } => n * gamma * gamma / 4.0,
        QuantizerKind::Normalized { s } => {
            let s = s as f64;
            (n / (s * s)).min(n.sqrt() / s)
        }
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(QdgdError::InvalidInput("cannot quantize a non-finite value".into()))
    }
}

fn grid_into<R: Rng + ?Sized>(x: &[f64], gamma: f64, out: &mut [f64], rng: &mut R) -> Result<()> {
    check_finite(x)?;
    for (o, &v) in out.iter_mut().zip(x) {
        let k = (v / gamma).floor();
        let up = ((v - k * gamma) / gamma).clamp(0.0, 1.0);
        let u: f64 = rng.random();
        *o = if u < up { (k + 1.0) * gamma } else { k * gamma };
    }
    Ok(())
}

fn normalized_into<R: Rng + ?Sized>(x: &[f64], s: u32, out: &mut [f64], rng: &mut R) -> Result<()> {
    check_finite(x)?;
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let levels = s as f64;
    for (o, &v) in out.iter_mut().zip(x) {
        let u: f64 = rng.random();
        if norm == 0.0 || v == 0.0 {
            *o = 0.0;
            continue;
        }
        let ratio = v.abs() / norm;
        let scaled = ratio * levels;
        let l = scaled.floor().min(levels - 1.0);
        let up = (scaled - l).clamp(0.0, 1.0);
        let xi = if u < up { (l + 1.0) / levels } else { l / levels };
        *o = norm * v.signum() * xi;
    }
    Ok(())
}

/// Grid quantizer `Q_gamma` applied coordinatewise.
pub fn quantize_grid<R: Rng + ?Sized>(x: &[f64], gamma: f64, rng: &mut R) -> Result<Vec<f64>> {
    QuantizerSpec::grid(gamma, x.len())?.quantize(x, rng)
}

/// Normalized quantizer `Q^s`; the zero vector maps to itself.
pub fn quantize_normalized<R: Rng + ?Sized>(x: &[f64], s: u32, rng: &mut R) -> Result<Vec<f64>> {
    QuantizerSpec::normalized(s, x.len())?.quantize(x, rng)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuantizerSpec {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<u32>,
    dim: usize,
}

impl TryFrom<RawQuantizerSpec> for QuantizerSpec {
    type Error = QdgdError;

    fn try_from(raw: RawQuantizerSpec) -> Result<Self> {
        let kind = match (raw.kind.as_str(), raw.gamma, raw.s) {
            ("exact", None, None) => QuantizerKind::Exact,
            ("grid", Some(gamma), None) => QuantizerKind::Grid { gamma },
            ("normalized", None, Some(s)) => QuantizerKind::Normalized { s },
            (kind, gamma, s) => {
                return Err(QdgdError::Config(format!(
                    "bad quantizer: kind {kind:?} with gamma {gamma:?} and s {s:?} \
                     (expected exact, grid + gamma, or normalized + s)"
                )))
            }
        };
        QuantizerSpec::new(kind, raw.dim)
    }
}

impl From<QuantizerSpec> for RawQuantizerSpec {
    fn from(spec: QuantizerSpec) -> Self {
        let (kind, gamma, s) = match spec.kind {
            QuantizerKind::Exact => ("exact", None, None),
            QuantizerKind::Grid { gamma } => ("grid", Some(gamma), None),
            QuantizerKind::Normalized { s } => ("normalized", None, Some(s)),
        };
        Self { kind: kind.into(), gamma, s, dim: spec.dim }
    }
}
