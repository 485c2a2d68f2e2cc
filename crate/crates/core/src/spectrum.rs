//! Truncated latent codes ("spectra") and their spiking patterns.
//!
//! A spectrum is a length-`K` vector whose entries are either exactly `0.0`
//! or lie in the band `[a, b]` with `0 < a < b`. The truncation that produces
//! spectra maps values below the spiking threshold `a` to an exact zero and
//! caps values above the spiking bound `b` at `b`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Spiking threshold `a`, spiking bound `b`, and latent width `K`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumParams {
    pub a: f64,
    pub b: f64,
    pub k: usize,
}

impl SpectrumParams {
    pub fn new(a: f64, b: f64, k: usize) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParams(format!(
                "a and b must be finite, got a={a}, b={b}"
            )));
        }
        if !(0.0 < a && a < b) {
            return Err(Error::InvalidParams(format!(
                "need 0 < a < b, got a={a}, b={b}"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidParams("latent width K must be >= 1".into()));
        }
        Ok(Self { a, b, k })
    }

    /// Width of the spiking band `b - a`.
    pub fn band(&self) -> f64 {
        self.b - self.a
    }
}

/// A latent code: every entry is exactly `0.0` or lies in `[a, b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    /// Validates the entries against `p` and wraps them.
    pub fn new(values: Vec<f64>, p: &SpectrumParams) -> Result<Self> {
        if values.len() != p.k {
            return Err(Error::ShapeMismatch {
                expected: p.k,
                got: values.len(),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i, value: v });
            }
            if v != 0.0 && !(p.a <= v && v <= p.b) {
                return Err(Error::InvalidSpectrum(format!(
                    "entry {i} = {v} is neither 0 nor in [{}, {}]",
                    p.a, p.b
                )));
            }
        }
        Ok(Self { values })
    }

    /// The all-zero (dormant) spectrum.
    pub fn dormant(p: &SpectrumParams) -> Self {
        Self {
            values: vec![0.0; p.k],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_dormant(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// The spiking pattern: 1-based indices of the nonzero dimensions.
    pub fn pattern(&self) -> SpikingPattern {
        let dims = self
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i + 1)
            .collect();
        SpikingPattern { dims }
    }

    /// True iff the nonzero dimensions of `self` are exactly the dimensions
    /// of `pattern`.
    pub fn is_preserved_by(&self, pattern: &SpikingPattern) -> bool {
        self.pattern() == *pattern
    }

    /// Value at a 1-based latent dimension.
    pub fn value_at_dim(&self, dim: usize) -> f64 {
        self.values[dim - 1]
    }

    pub(crate) fn from_raw_unchecked(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Sorted, deduplicated 1-based latent dimension indices; empty for the
/// dormant pattern.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpikingPattern {
    dims: Vec<usize>,
}

impl SpikingPattern {
    /// Builds a pattern from dimension indices, sorting and deduplicating.
    /// Indices are 1-based and must not exceed `k`.
    pub fn new(mut dims: Vec<usize>, k: usize) -> Result<Self> {
        dims.sort_unstable();
        dims.dedup();
        if let Some(&d) = dims.iter().find(|&&d| d == 0 || d > k) {
            return Err(Error::InvalidPattern(format!(
                "dimension {d} outside 1..={k}"
            )));
        }
        Ok(Self { dims })
    }

    pub fn empty() -> Self {
        Self { dims: Vec::new() }
    }

    /// 1-based dimension indices, strictly increasing.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of spiking dimensions `L`.
    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// 0-based indices into a spectrum's value slice.
    pub fn zero_based(&self) -> impl Iterator<Item = usize> + '_ {
        self.dims.iter().map(|&d| d - 1)
    }

    /// Report label, e.g. `{2,3}`; `{}` for the dormant pattern.
    pub fn label(&self) -> String {
        let inner: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        format!("{{{}}}", inner.join(","))
    }

    /// Parses a label produced by [`SpikingPattern::label`].
    pub fn parse_label(s: &str, k: usize) -> Result<Self> {
        let trimmed = s.trim();
        let inner = trimmed
            .strip_prefix('{')
            .and_then(|t| t.strip_suffix('}'))
            .ok_or_else(|| Error::InvalidPattern(format!("bad pattern label {s:?}")))?;
        if inner.trim().is_empty() {
            return Ok(Self::empty());
        }
        let dims = inner
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidPattern(format!("bad pattern label {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, k)
    }
}

impl fmt::Display for SpikingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Componentwise truncation: values in `[a, b]` pass through, values above
/// `b` cap at `b`, values below `a` drop to an exact `0.0`.
///
/// Idempotent on its own output and monotone per component.
pub fn truncate(z_pre: &[f64], p: &SpectrumParams) -> Result<Spectrum> {
    if z_pre.len() != p.k {
        return Err(Error::ShapeMismatch {
            expected: p.k,
            got: z_pre.len(),
        });
    }
    let mut values = Vec::with_capacity(z_pre.len());
    for (i, &v) in z_pre.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: i, value: v });
        }
        values.push(truncate_one(v, p));
    }
    Ok(Spectrum { values })
}

#[inline]
pub(crate) fn truncate_one(v: f64, p: &SpectrumParams) -> f64 {
    if v < p.a {
        0.0
    } else if v > p.b {
        p.b
    } else {
        v
    }
}
