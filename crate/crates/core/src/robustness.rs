//! Perturbation of spectra inside the spiking band, statistical robustness
//! certification of decoders, quantization grids, representation sets, and
//! certified pattern complexity.
//!
//! Certification is statistical, not formal: base spectra preserved by the
//! pattern are swept (dense lattice when cheap, uniform random otherwise) and
//! perturbed by all signed corner vectors plus random interior draws. The
//! certificate records budget, seed, and the worst observed deviation, so a
//! claim can be replayed.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::model::Decoder;
use crate::spectrum::{SpectrumParams, Spectrum, SpikingPattern};
use crate::support::euclidean;

/// Hard floor for the qualified-box search, as a fraction of the band width.
pub const ALPHA_MIN_FRACTION: f64 = 1.0 / (1 << 20) as f64;

/// Largest per-dimension grid count accepted before the box is considered
/// degenerate.
const MAX_GRID_COUNT: u64 = 1 << 40;

/// Per-dimension perturbation half-widths for a pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbBox {
    pattern: SpikingPattern,
    alphas: Vec<f64>,
}

impl PerturbBox {
    pub fn new(pattern: SpikingPattern, alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() != pattern.len() {
            return Err(Error::InvalidBox(format!(
                "{} alphas for a pattern of {} dims",
                alphas.len(),
                pattern.len()
            )));
        }
        if let Some(&a) = alphas.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidBox(format!("alpha must be positive, got {a}")));
        }
        Ok(Self { pattern, alphas })
    }

    /// The box of the dormant pattern: no dimensions, no half-widths.
    pub fn dormant() -> Self {
        Self {
            pattern: SpikingPattern::empty(),
            alphas: Vec::new(),
        }
    }

    pub fn pattern(&self) -> &SpikingPattern {
        &self.pattern
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// Midpoint quantization grid induced by a perturbation box.
///
/// Per dimension the count is the smallest integer strictly greater than
/// `(b - a) / (2 alpha)`, decided by exact rational comparison. Scales are
/// the midpoints of that many equal segments of `[a, b]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantGrid {
    pattern: SpikingPattern,
    alphas: Vec<f64>,
    counts: Vec<u64>,
    params: SpectrumParams,
}

impl QuantGrid {
    pub fn pattern(&self) -> &SpikingPattern {
        &self.pattern
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn params(&self) -> &SpectrumParams {
        &self.params
    }

    /// Midpoint scale `i` (0-based) on pattern slot `l`.
    pub fn scale(&self, l: usize, i: u64) -> f64 {
        let q = self.counts[l];
        debug_assert!(i < q);
        self.params.a + (2 * i + 1) as f64 * self.params.band() / (2.0 * q as f64)
    }

    /// All scales on pattern slot `l`, strictly increasing.
    pub fn scales(&self, l: usize) -> Vec<f64> {
        (0..self.counts[l]).map(|i| self.scale(l, i)).collect()
    }

    /// Number of grid codes, saturating at `u128::MAX`.
    pub fn size(&self) -> u128 {
        self.counts
            .iter()
            .fold(1u128, |acc, &q| acc.saturating_mul(q as u128))
    }

    pub fn log2_size(&self) -> f64 {
        self.counts.iter().map(|&q| (q as f64).log2()).sum()
    }
}

/// Exact rational representation of a finite f64.
fn rational_of(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::NonFinite { index: 0, value: x })
}

/// Smallest integer strictly greater than `band / (2 alpha)`, computed on the
/// exact rationals the f64 inputs denote.
pub fn grid_count(band: f64, alpha: f64) -> Result<u64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidBox(format!("alpha must be positive, got {alpha}")));
    }
    if !(band > 0.0 && band.is_finite()) {
        return Err(Error::InvalidParams(format!("band must be positive, got {band}")));
    }
    let ratio = rational_of(band)? / (BigRational::from_integer(BigInt::from(2)) * rational_of(alpha)?);
    let q = ratio.floor().to_integer() + BigInt::one();
    let q = q
        .to_u64()
        .filter(|&q| q <= MAX_GRID_COUNT)
        .ok_or_else(|| Error::InvalidBox(format!("alpha {alpha} yields an oversized grid")))?;
    Ok(q)
}

/// Builds the midpoint grid for a box.
pub fn build_grid(
    pattern: &SpikingPattern,
    alphas: &[f64],
    params: &SpectrumParams,
) -> Result<QuantGrid> {
    if alphas.len() != pattern.len() {
        return Err(Error::InvalidBox(format!(
            "{} alphas for a pattern of {} dims",
            alphas.len(),
            pattern.len()
        )));
    }
    let counts = alphas
        .iter()
        .map(|&a| grid_count(params.band(), a))
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantGrid {
        pattern: pattern.clone(),
        alphas: alphas.to_vec(),
        counts,
        params: *params,
    })
}

/// Perturbs the spiking dimensions of `z` by `eps` and clamps back into
/// `[a, b]`. Spiking dimensions never drop to zero: going below `a` clamps
/// to `a`, so the pattern is preserved.
pub fn perturb_truncate(
    z: &Spectrum,
    pattern: &SpikingPattern,
    eps: &[f64],
    params: &SpectrumParams,
) -> Result<Spectrum> {
    if !z.is_preserved_by(pattern) {
        return Err(Error::PatternMismatch {
            pattern: pattern.label(),
        });
    }
    if eps.len() != pattern.len() {
        return Err(Error::ShapeMismatch {
            expected: pattern.len(),
            got: eps.len(),
        });
    }
    if let Some((i, &e)) = eps.iter().enumerate().find(|(_, e)| !e.is_finite()) {
        return Err(Error::NonFinite { index: i, value: e });
    }
    let mut values = z.values().to_vec();
    for (l, idx) in pattern.zero_based().enumerate() {
        let w = values[idx] + eps[l];
        values[idx] = if w < params.a {
            params.a
        } else if w > params.b {
            params.b
        } else {
            w
        };
    }
    Ok(Spectrum::from_raw_unchecked(values))
}

/// Snaps each spiking value to the nearest grid scale; exact ties go to the
/// lower scale. The per-dimension displacement is at most `alpha`.
pub fn quantize(z: &Spectrum, grid: &QuantGrid) -> Result<Spectrum> {
    Ok(quantize_with_indices(z, grid)?.0)
}

/// Like [`quantize`] but also reports which scale index each dimension
/// snapped to, which identifies the grid code exactly.
pub fn quantize_with_indices(z: &Spectrum, grid: &QuantGrid) -> Result<(Spectrum, Vec<u64>)> {
    if !z.is_preserved_by(&grid.pattern) {
        return Err(Error::PatternMismatch {
            pattern: grid.pattern.label(),
        });
    }
    let params = &grid.params;
    let mut values = z.values().to_vec();
    let mut indices = Vec::with_capacity(grid.pattern.len());
    for (l, idx) in grid.pattern.zero_based().enumerate() {
        let q = grid.counts[l];
        let v = values[idx];
        let step = params.band() / q as f64;
        let j0 = (((v - params.a) / step).floor() as i64).clamp(0, q as i64 - 1);
        let mut best = j0.max(0) as u64;
        let mut best_dist = (v - grid.scale(l, best)).abs();
        for cand in [j0 - 1, j0 + 1] {
            if cand < 0 || cand >= q as i64 {
                continue;
            }
            let cand = cand as u64;
            let d = (v - grid.scale(l, cand)).abs();
            if d < best_dist || (d == best_dist && cand < best) {
                best = cand;
                best_dist = d;
            }
        }
        values[idx] = grid.scale(l, best);
        indices.push(best);
    }
    Ok((Spectrum::from_raw_unchecked(values), indices))
}

/// The finite set of quantized spectra a grid induces, enumerated
/// lexicographically over the pattern dimensions.
#[derive(Clone, Debug)]
pub struct RepresentationSet {
    grid: QuantGrid,
}

impl RepresentationSet {
    pub fn new(grid: QuantGrid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> &QuantGrid {
        &self.grid
    }

    pub fn size(&self) -> u128 {
        self.grid.size()
    }

    /// Quantized spectrum at a scale-index tuple.
    pub fn spectrum_at(&self, indices: &[u64]) -> Spectrum {
        debug_assert_eq!(indices.len(), self.grid.pattern.len());
        let mut values = vec![0.0; self.grid.params.k];
        for (l, idx) in self.grid.pattern.zero_based().enumerate() {
            values[idx] = self.grid.scale(l, indices[l]);
        }
        Spectrum::from_raw_unchecked(values)
    }

    /// Lexicographic enumeration (first pattern dimension most significant).
    pub fn iter(&self) -> RepresentationIter<'_> {
        RepresentationIter {
            set: self,
            indices: vec![0; self.grid.pattern.len()],
            done: false,
        }
    }
}

pub struct RepresentationIter<'a> {
    set: &'a RepresentationSet,
    indices: Vec<u64>,
    done: bool,
}

impl Iterator for RepresentationIter<'_> {
    type Item = (Vec<u64>, Spectrum);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let out = (
            self.indices.clone(),
            self.set.spectrum_at(&self.indices),
        );
        // odometer with the last dimension fastest
        let counts = &self.set.grid.counts;
        let mut d = self.indices.len();
        loop {
            if d == 0 {
                self.done = true;
                break;
            }
            d -= 1;
            self.indices[d] += 1;
            if self.indices[d] < counts[d] {
                break;
            }
            self.indices[d] = 0;
        }
        Some(out)
    }
}

/// Sampling budget for one certification pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertBudget {
    /// Random base spectra when the lattice sweep is too large; a value of
    /// zero yields a vacuous (never valid) certificate.
    pub base_points: usize,
    /// Random interior perturbations per base point, on top of the signed
    /// corner sweep.
    pub perturbs_per_point: usize,
    pub seed: u64,
    /// Search-time tightening factor in `(0, 1]`: the qualified-box search
    /// accepts boxes against `safety * U` and confirms against the full `U`.
    pub safety: f64,
}

impl Default for CertBudget {
    fn default() -> Self {
        Self {
            base_points: 48,
            perturbs_per_point: 12,
            seed: 0,
            safety: 1.0,
        }
    }
}

/// Evidence from one statistical certification pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub pattern: SpikingPattern,
    pub alphas: Vec<f64>,
    pub u: f64,
    pub base_points_tested: u64,
    pub perturbations_per_point: u64,
    pub checks: u64,
    pub violations: u64,
    pub max_observed_deviation: f64,
    pub seed: u64,
}

impl Certificate {
    /// Valid means zero violations over a nonzero number of checks.
    pub fn is_valid(&self) -> bool {
        self.violations == 0 && self.checks > 0
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} u={} checks={} violations={} max_dev={}",
            self.pattern.label(),
            self.u,
            self.checks,
            self.violations,
            self.max_observed_deviation
        )
    }
}

/// Base spectra preserved by a pattern: a dense lattice at resolution
/// `min(alpha) / 2` when the pattern is small and the lattice fits a million
/// points, uniform random draws otherwise.
fn base_spectra<R: Rng>(
    pattern: &SpikingPattern,
    alphas: &[f64],
    params: &SpectrumParams,
    budget: &CertBudget,
    rng: &mut R,
) -> Vec<Spectrum> {
    let l = pattern.len();
    if l == 0 {
        return vec![Spectrum::dormant(params)];
    }
    if budget.base_points == 0 {
        return Vec::new();
    }
    let res = alphas.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
    let band = params.band();
    let m = ((band / res).ceil() as u128 + 1).max(2);
    let lattice_size = m.checked_pow(l as u32);
    if l <= 3 && lattice_size.is_some_and(|s| s <= 1_000_000) {
        let m = m as u64;
        let mut out = Vec::with_capacity(lattice_size.unwrap() as usize);
        let mut idx = vec![0u64; l];
        loop {
            let mut values = vec![0.0; params.k];
            for (slot, dim) in pattern.zero_based().enumerate() {
                values[dim] = params.a + idx[slot] as f64 * band / (m - 1) as f64;
            }
            out.push(Spectrum::from_raw_unchecked(values));
            let mut d = l;
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < m {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
    (0..budget.base_points)
        .map(|_| {
            let mut values = vec![0.0; params.k];
            for dim in pattern.zero_based() {
                values[dim] = rng.random_range(params.a..=params.b);
            }
            Spectrum::from_raw_unchecked(values)
        })
        .collect()
}

/// Statistical certification of `U`-robustness of a decoder for one box.
///
/// A failing certificate is a result, not an error.
pub fn certify(
    decoder: &dyn Decoder,
    box_: &PerturbBox,
    u: f64,
    budget: &CertBudget,
    params: &SpectrumParams,
) -> Certificate {
    let pattern = &box_.pattern;
    let alphas = &box_.alphas;
    let l = pattern.len();
    let mut rng = ChaCha12Rng::seed_from_u64(budget.seed);

    let bases = base_spectra(pattern, alphas, params, budget, &mut rng);

    // signed corner sweep, capped for wide patterns
    let corner_signs: Vec<Vec<f64>> = if l <= 12 {
        (0..(1usize << l))
            .map(|mask| {
                (0..l)
                    .map(|bit| if mask >> bit & 1 == 1 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect()
    } else {
        (0..4096)
            .map(|_| {
                (0..l)
                    .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect()
    };

    let mut checks = 0u64;
    let mut violations = 0u64;
    let mut max_dev: f64 = 0.0;
    let mut eps = vec![0.0; l];
    for base in &bases {
        let decoded = decoder.decode(base);
        let mut run = |eps: &[f64]| {
            let perturbed = perturb_truncate(base, pattern, eps, params)
                .expect("base is preserved by the pattern");
            let dev = euclidean(&decoded, &decoder.decode(&perturbed));
            checks += 1;
            if dev > u {
                violations += 1;
            }
            if dev > max_dev {
                max_dev = dev;
            }
        };
        for signs in &corner_signs {
            for (e, (s, a)) in eps.iter_mut().zip(signs.iter().zip(alphas)) {
                *e = s * a;
            }
            run(&eps);
        }
        for _ in 0..budget.perturbs_per_point {
            for (e, &a) in eps.iter_mut().zip(alphas) {
                *e = rng.random_range(-a..a);
            }
            run(&eps);
        }
    }

    Certificate {
        pattern: pattern.clone(),
        alphas: alphas.to_vec(),
        u,
        base_points_tested: bases.len() as u64,
        perturbations_per_point: (corner_signs.len() + budget.perturbs_per_point) as u64,
        checks,
        violations,
        max_observed_deviation: max_dev,
        seed: budget.seed,
    }
}

pub(crate) fn mix_seed(seed: u64, counter: u64) -> u64 {
    seed.wrapping_add(counter.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Searches for a large qualified box: binary search on a shared half-width
/// over `[alpha_min, (b-a)/2]`, then per-dimension coordinate ascent (factor
/// 1.25, a dimension stops once its grid count reaches 1). The final box is
/// re-certified against the full `u` with a four-fold budget; on failure all
/// half-widths shrink until the confirmation passes or the floor is hit.
///
/// Returns `None` when not even the floor half-width certifies: the pattern
/// complexity is then treated as infinite.
pub fn search_qualified(
    decoder: &dyn Decoder,
    pattern: &SpikingPattern,
    u: f64,
    budget: &CertBudget,
    params: &SpectrumParams,
) -> Option<PerturbBox> {
    search_qualified_full(decoder, pattern, u, budget, params).map(|(b, _)| b)
}

pub(crate) fn search_qualified_full(
    decoder: &dyn Decoder,
    pattern: &SpikingPattern,
    u: f64,
    budget: &CertBudget,
    params: &SpectrumParams,
) -> Option<(PerturbBox, Certificate)> {
    let l = pattern.len();
    if l == 0 {
        let box_ = PerturbBox::dormant();
        let cert = certify(decoder, &box_, u, budget, params);
        return cert.is_valid().then_some((box_, cert));
    }

    let band = params.band();
    let alpha_min = band * ALPHA_MIN_FRACTION;
    let safety = if budget.safety > 0.0 && budget.safety <= 1.0 {
        budget.safety
    } else {
        1.0
    };
    let target = u * safety;

    let mut counter = 0u64;
    let mut try_box = |alphas: &[f64], threshold: f64, scale: usize| -> Certificate {
        counter += 1;
        let trial = CertBudget {
            base_points: budget.base_points * scale,
            perturbs_per_point: budget.perturbs_per_point * scale,
            seed: mix_seed(budget.seed, counter),
            safety,
        };
        let box_ = PerturbBox::new(pattern.clone(), alphas.to_vec()).expect("positive alphas");
        certify(decoder, &box_, threshold, &trial, params)
    };

    if !try_box(&vec![alpha_min; l], target, 1).is_valid() {
        return None;
    }

    let mut shared = alpha_min;
    let hi_cap = band / 2.0;
    if try_box(&vec![hi_cap; l], target, 1).is_valid() {
        shared = hi_cap;
    } else {
        let mut lo = alpha_min;
        let mut hi = hi_cap;
        while hi - lo > alpha_min {
            let mid = 0.5 * (lo + hi);
            if try_box(&vec![mid; l], target, 1).is_valid() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        shared = shared.max(lo);
    }

    let mut alphas = vec![shared; l];
    loop {
        let mut grew = false;
        for slot in 0..l {
            if grid_count(band, alphas[slot]).map_or(true, |q| q == 1) {
                continue;
            }
            let mut trial = alphas.clone();
            trial[slot] *= 1.25;
            if try_box(&trial, target, 1).is_valid() {
                alphas = trial;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }

    // confirmation against the full u with a heavier budget
    loop {
        let cert = try_box(&alphas, u, 4);
        if cert.is_valid() {
            let box_ = PerturbBox::new(pattern.clone(), alphas).expect("positive alphas");
            return Some((box_, cert));
        }
        for a in &mut alphas {
            *a *= 0.5;
        }
        if alphas.iter().any(|&a| a < alpha_min) {
            return None;
        }
    }
}

/// Certified complexity of a pattern: grid-code count of the best box found,
/// or the infinity sentinel when no box certifies.
///
/// Serialized as a decimal string (or `"inf"`): the counts exceed what the
/// text report formats can hold as integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Complexity {
    Finite(u128),
    Infinite,
}

impl Serialize for Complexity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Complexity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        if text == "inf" {
            return Ok(Complexity::Infinite);
        }
        text.parse::<u128>()
            .map(Complexity::Finite)
            .map_err(|_| serde::de::Error::custom(format!("bad complexity {text:?}")))
    }
}

impl Complexity {
    pub fn is_finite(&self) -> bool {
        matches!(self, Complexity::Finite(_))
    }

    pub fn finite(&self) -> Option<u128> {
        match self {
            Complexity::Finite(n) => Some(*n),
            Complexity::Infinite => None,
        }
    }

    pub fn bits(&self) -> Option<f64> {
        self.finite().map(|n| (n as f64).log2())
    }
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Complexity::Finite(n) => write!(f, "{n}"),
            Complexity::Infinite => write!(f, "inf"),
        }
    }
}

/// A certified box together with its grid; the unit of description-length
/// accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternCertification {
    pub grid: QuantGrid,
    pub certificate: Certificate,
}

impl PatternCertification {
    pub fn pattern(&self) -> &SpikingPattern {
        self.grid.pattern()
    }

    pub fn complexity(&self) -> u128 {
        self.grid.size()
    }
}

/// Runs the full search for one pattern and packages grid plus confirmation
/// certificate. `None` means the pattern could not be certified at `u`.
pub fn certify_pattern(
    decoder: &dyn Decoder,
    pattern: &SpikingPattern,
    u: f64,
    budget: &CertBudget,
    params: &SpectrumParams,
) -> Result<Option<PatternCertification>> {
    match search_qualified_full(decoder, pattern, u, budget, params) {
        None => Ok(None),
        Some((box_, certificate)) => {
            let grid = build_grid(box_.pattern(), box_.alphas(), params)?;
            Ok(Some(PatternCertification { grid, certificate }))
        }
    }
}

/// Certified complexity with the dormant shortcut: the empty pattern admits
/// exactly one spectrum, so its complexity is 1.
pub fn complexity(
    decoder: &dyn Decoder,
    pattern: &SpikingPattern,
    u: f64,
    budget: &CertBudget,
    params: &SpectrumParams,
) -> Complexity {
    if pattern.is_empty() {
        return Complexity::Finite(1);
    }
    match search_qualified(decoder, pattern, u, budget, params) {
        None => Complexity::Infinite,
        Some(box_) => match build_grid(box_.pattern(), box_.alphas(), params) {
            Ok(grid) => Complexity::Finite(grid.size()),
            Err(_) => Complexity::Infinite,
        },
    }
}
