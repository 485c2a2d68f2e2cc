//! Compatibility gate, achieved description length, the sub-quantization
//! reconstruction check, and model selection over a finite candidate set.
//!
//! The achieved description length of a model on a sample set is
//! `log2(sum of certified pattern complexities at bound u/2)`. It is an
//! upper bound: the search behind each complexity settles for a good
//! qualified box, not a provably optimal one.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Codec;
use crate::pattern_stats::{census, dominant_ratio, DominantRatioReport, PatternCensus};
use crate::robustness::{
    certify_pattern, mix_seed, quantize_with_indices, CertBudget, Complexity,
    PatternCertification,
};
use crate::spectrum::{SpectrumParams, SpikingPattern};
use crate::support::euclidean;

/// Thresholds of the compatibility gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityParams {
    /// Per-sample reconstruction bound.
    pub u: f64,
    /// Minimum sample count.
    pub gamma1: f64,
    /// Minimum dominant ratio.
    pub gamma2: f64,
    /// Confidence level for the dominant ratio.
    pub p0: f64,
}

impl CompatibilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.u > 0.0 && self.gamma1 > 0.0 && self.gamma2 > 0.0) {
            return Err(Error::InvalidParams(
                "u, gamma1, gamma2 must all be positive".into(),
            ));
        }
        if !(0.0 < self.p0 && self.p0 < 1.0) {
            return Err(Error::OutOfRange(format!("p0 = {} outside (0, 1)", self.p0)));
        }
        Ok(())
    }
}

/// Everything the compatibility decision rests on; the flags are pure
/// functions of the other fields and can be recomputed from a serialized
/// report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub params: CompatibilityParams,
    pub n_samples: u64,
    pub max_recon_error: f64,
    pub per_sample_errors: Vec<f64>,
    pub census: PatternCensus,
    pub dominant: DominantRatioReport,
    pub condition_i: bool,
    pub condition_ii: bool,
    pub compatible: bool,
}

impl CompatibilityReport {
    /// Re-derives the flags from the recorded evidence.
    pub fn recompute_flags(&self) -> (bool, bool, bool) {
        let i = self.n_samples as f64 >= self.params.gamma1
            && self.max_recon_error <= self.params.u;
        let ii = self.dominant.delta() >= self.params.gamma2;
        (i, ii, i && ii)
    }
}

/// Encodes and decodes every sample and fills the gate evidence. No hidden
/// thresholds: every number the flags depend on is in the report.
pub fn check_compatibility(
    model: &dyn Codec,
    samples: &[Vec<f64>],
    params: &CompatibilityParams,
) -> Result<CompatibilityReport> {
    params.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("compatibility samples"));
    }
    let mut spectra = Vec::with_capacity(samples.len());
    let mut per_sample_errors = Vec::with_capacity(samples.len());
    let mut max_recon_error: f64 = 0.0;
    for x in samples {
        let z = model.encode(x)?;
        let recon = model.decode(&z);
        let err = euclidean(x, &recon);
        max_recon_error = max_recon_error.max(err);
        per_sample_errors.push(err);
        spectra.push(z);
    }
    let census = census(&spectra)?;
    let dominant = dominant_ratio(&census, params.p0)?;
    let condition_i =
        samples.len() as f64 >= params.gamma1 && max_recon_error <= params.u;
    let condition_ii = dominant.delta() >= params.gamma2;
    Ok(CompatibilityReport {
        params: *params,
        n_samples: samples.len() as u64,
        max_recon_error,
        per_sample_errors,
        census,
        dominant,
        condition_i,
        condition_ii,
        compatible: condition_i && condition_ii,
    })
}

/// One pattern's certified complexity; `certification` is `None` when the
/// search failed and the complexity is infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DlEntry {
    pub pattern: SpikingPattern,
    pub observed: u64,
    pub certification: Option<PatternCertification>,
}

impl DlEntry {
    pub fn complexity(&self) -> Complexity {
        match &self.certification {
            Some(c) => Complexity::Finite(c.complexity()),
            None => Complexity::Infinite,
        }
    }
}

/// Per-pattern certified complexities at bound `u/2`, their sum, and the
/// resulting bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptionLengthReport {
    /// Headline bound; complexities are certified at `cert_u`.
    pub u: f64,
    /// Bound each pattern was certified against, `u / 2`.
    pub cert_u: f64,
    pub params: SpectrumParams,
    pub entries: Vec<DlEntry>,
    pub total: Complexity,
    /// `log2(total)`, absent when some pattern failed to certify.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bits: Option<f64>,
    /// All complexities finite.
    pub regular: bool,
}

impl DescriptionLengthReport {
    pub fn entry(&self, pattern: &SpikingPattern) -> Option<&DlEntry> {
        self.entries.iter().find(|e| &e.pattern == pattern)
    }
}

/// Census over the samples, then a certified complexity at `u/2` for every
/// observed pattern. The infinity sentinel propagates into the total.
pub fn description_length(
    model: &dyn Codec,
    samples: &[Vec<f64>],
    u: f64,
    budget: &CertBudget,
) -> Result<DescriptionLengthReport> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::InvalidParams(format!("u must be positive, got {u}")));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("description-length samples"));
    }
    let mut spectra = Vec::with_capacity(samples.len());
    for x in samples {
        spectra.push(model.encode(x)?);
    }
    let census = census(&spectra)?;
    description_length_of_census(model, &census, u, budget)
}

/// Same as [`description_length`], starting from an existing census.
pub fn description_length_of_census(
    model: &dyn Codec,
    census: &PatternCensus,
    u: f64,
    budget: &CertBudget,
) -> Result<DescriptionLengthReport> {
    let cert_u = u / 2.0;
    let params = *model.spectrum_params();
    let mut entries = Vec::with_capacity(census.distinct());
    let mut total: Option<u128> = Some(0);
    for (i, (pattern, &observed)) in census.counts().iter().enumerate() {
        let pattern_budget = CertBudget {
            seed: mix_seed(budget.seed, i as u64),
            ..*budget
        };
        let certification = certify_pattern(model, pattern, cert_u, &pattern_budget, &params)?;
        match &certification {
            Some(c) => {
                total = total.map(|t| t.saturating_add(c.complexity()));
            }
            None => total = None,
        }
        entries.push(DlEntry {
            pattern: pattern.clone(),
            observed,
            certification,
        });
    }
    let total = match total {
        Some(t) => Complexity::Finite(t),
        None => Complexity::Infinite,
    };
    Ok(DescriptionLengthReport {
        u,
        cert_u,
        params,
        entries,
        bits: total.bits(),
        regular: total.is_finite(),
        total,
    })
}

/// Per-sample record of the sub-quantization check: the triangle-inequality
/// decomposition is kept so the transfer can be re-checked from the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubQuantSample {
    pub index: usize,
    pub pattern: SpikingPattern,
    pub pattern_seen: bool,
    pub unquantized_error: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub quantized_error: Option<f64>,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubQuantReport {
    pub u: f64,
    pub n: u64,
    pub successes: u64,
    /// Holdout samples whose pattern has no certified grid; they fail closed.
    pub unseen_pattern_failures: u64,
    pub fraction: f64,
    pub samples: Vec<SubQuantSample>,
}

/// Quantizes each holdout sample inside its pattern's certified grid and
/// checks the reconstruction against `u`. Requires a regular
/// description-length report computed at the same headline bound.
pub fn sub_quantization_check(
    model: &dyn Codec,
    holdout: &[Vec<f64>],
    u: f64,
    dl: &DescriptionLengthReport,
) -> Result<SubQuantReport> {
    if holdout.is_empty() {
        return Err(Error::EmptyInput("sub-quantization holdout"));
    }
    if !dl.regular {
        return Err(Error::NotCertified(
            "description length is not regular; some pattern has no certified grid".into(),
        ));
    }
    if dl.cert_u > u / 2.0 + 1e-12 {
        return Err(Error::NotCertified(format!(
            "grids were certified at {} which exceeds u/2 = {}",
            dl.cert_u,
            u / 2.0
        )));
    }
    let mut samples = Vec::with_capacity(holdout.len());
    let mut successes = 0u64;
    let mut unseen = 0u64;
    for (index, x) in holdout.iter().enumerate() {
        let z = model.encode(x)?;
        let pattern = z.pattern();
        let unquantized_error = euclidean(x, &model.decode(&z));
        let entry = dl.entry(&pattern).and_then(|e| e.certification.as_ref());
        let (pattern_seen, quantized_error) = match entry {
            None => (false, None),
            Some(cert) => {
                let (zq, _) = quantize_with_indices(&z, &cert.grid)?;
                (true, Some(euclidean(x, &model.decode(&zq))))
            }
        };
        let ok = quantized_error.is_some_and(|e| e <= u);
        if ok {
            successes += 1;
        }
        if !pattern_seen {
            unseen += 1;
        }
        samples.push(SubQuantSample {
            index,
            pattern,
            pattern_seen,
            unquantized_error,
            quantized_error,
            ok,
        });
    }
    Ok(SubQuantReport {
        u,
        n: holdout.len() as u64,
        successes,
        unseen_pattern_failures: unseen,
        fraction: successes as f64 / holdout.len() as f64,
        samples,
    })
}

/// Index of the compatible candidate with minimal bits; ties break toward
/// the smaller complexity total, then the lower maximum reconstruction
/// error. `None` when no candidate is compatible.
///
/// All candidates must share `(a, b, K)`; mixed lists are rejected.
pub fn select_best(
    candidates: &[(CompatibilityReport, DescriptionLengthReport)],
) -> Result<Option<usize>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("model candidates"));
    }
    let reference = candidates[0].1.params;
    for (i, (_, dl)) in candidates.iter().enumerate() {
        if dl.params != reference {
            return Err(Error::MixedCandidates(format!(
                "candidate {i} has (a, b, K) = ({}, {}, {}), expected ({}, {}, {})",
                dl.params.a, dl.params.b, dl.params.k, reference.a, reference.b, reference.k
            )));
        }
    }
    let mut best: Option<usize> = None;
    for (i, (compat, dl)) in candidates.iter().enumerate() {
        if !compat.compatible {
            continue;
        }
        let better = match best {
            None => true,
            Some(j) => {
                let (bc, bd) = &candidates[j];
                // bits is log2 of the total, so comparing totals orders bits
                match dl.total.cmp(&bd.total) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => {
                        compat.max_recon_error < bc.max_recon_error
                    }
                }
            }
        };
        if better {
            best = Some(i);
        }
    }
    Ok(best)
}

/// A census rebuilt from raw counts, for report assembly.
pub fn census_from_label_counts(
    labels: &BTreeMap<String, u64>,
    k: usize,
) -> Result<PatternCensus> {
    let mut counts = BTreeMap::new();
    for (label, &count) in labels {
        counts.insert(SpikingPattern::parse_label(label, k)?, count);
    }
    PatternCensus::from_counts(counts)
}
