//! Covering/packing bounds on the minimum number of quantized vectors that
//! represent a bounded distribution within `U`, usage accounting of grid
//! codes, numeric checks of the description-length lower bound, and
//! on-boundary pair counting.
//!
//! The essence is reported as an interval: `lower` is the size of a greedy
//! maximal packing with pairwise separation `> 2U` (no `U`-ball can serve
//! two such points), `upper` the size of a greedy max-coverage cover of the
//! support lattice with `U`-balls. Covering is certified at lattice
//! resolution only.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::mdl::DescriptionLengthReport;
use crate::model::Codec;
use crate::robustness::quantize_with_indices;
use crate::spectrum::SpikingPattern;
use crate::support::{dist2, euclidean, BoundedSupport};

/// Cap on the number of support lattice points.
pub const GRID_BUDGET: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssenceBounds {
    pub u: f64,
    pub grid_res: f64,
    /// Packing bound: no valid cover can be smaller.
    pub lower: u64,
    /// Greedy cover size: some cover of this size exists.
    pub upper: u64,
    pub grid_count: u64,
    pub cover_points: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Uniform spatial hash over points, used for radius queries.
struct CellIndex {
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl CellIndex {
    fn build(points: &[Vec<f64>], cell: f64) -> Self {
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &[f64], cell: f64) -> Vec<i64> {
        p.iter().map(|&v| (v / cell).floor() as i64).collect()
    }

    /// Indices of points within `radius` of `p` (assumes `radius <= cell`).
    fn within(&self, points: &[Vec<f64>], p: &[f64], radius: f64) -> Vec<usize> {
        let key = Self::key(p, self.cell);
        let dim = p.len();
        let r2 = radius * radius;
        let mut out = Vec::new();
        let mut offset = vec![-1i64; dim];
        loop {
            let neighbor: Vec<i64> = key.iter().zip(&offset).map(|(k, o)| k + o).collect();
            if let Some(bucket) = self.cells.get(&neighbor) {
                for &i in bucket {
                    if dist2(&points[i], p) <= r2 {
                        out.push(i);
                    }
                }
            }
            let mut d = dim;
            loop {
                if d == 0 {
                    out.sort_unstable();
                    return out;
                }
                d -= 1;
                offset[d] += 1;
                if offset[d] <= 1 {
                    break;
                }
                offset[d] = -1;
            }
        }
    }
}

/// Greedy max-coverage set cover with `U`-balls centered on lattice points,
/// lazy-evaluated; ties go to the lowest point index.
fn greedy_cover(points: &[Vec<f64>], u: f64) -> Vec<usize> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let index = CellIndex::build(points, u);
    let balls: Vec<Vec<usize>> = points
        .iter()
        .map(|p| index.within(points, p, u))
        .collect();
    let n = points.len();
    let mut covered = vec![false; n];
    let mut remaining = n;
    let mut heap: BinaryHeap<(usize, Reverse<usize>)> = (0..n)
        .map(|i| (balls[i].len(), Reverse(i)))
        .collect();
    let mut chosen = Vec::new();
    while remaining > 0 {
        let (stale_gain, Reverse(i)) = heap.pop().expect("uncovered points remain");
        let gain = balls[i].iter().filter(|&&j| !covered[j]).count();
        if gain == 0 {
            continue;
        }
        if gain < stale_gain {
            // coverage is submodular: a stale bound can only shrink, so
            // re-queueing keeps the greedy choice exact
            if let Some(&(top_gain, Reverse(top_i))) = heap.peek() {
                if (gain, Reverse(i)) < (top_gain, Reverse(top_i)) {
                    heap.push((gain, Reverse(i)));
                    continue;
                }
            }
        }
        chosen.push(i);
        for &j in &balls[i] {
            if !covered[j] {
                covered[j] = true;
                remaining -= 1;
            }
        }
    }
    chosen
}

/// Greedy maximal packing with pairwise separation strictly greater than
/// `2U`, grown in point index order.
fn greedy_packing(points: &[Vec<f64>], u: f64) -> Vec<usize> {
    let sep = 2.0 * u;
    let index = CellIndex::build(points, sep);
    let mut chosen: Vec<usize> = Vec::new();
    let mut chosen_set = vec![false; points.len()];
    for i in 0..points.len() {
        let near = index.within(points, &points[i], sep);
        if near.iter().all(|&j| !chosen_set[j]) {
            chosen.push(i);
            chosen_set[i] = true;
        }
    }
    chosen
}

/// Lattice-certified essence interval. Deterministic given the tie rules;
/// the seed is recorded for the report but the construction is sweep-based.
pub fn essence_bounds(
    support: &BoundedSupport,
    u: f64,
    grid_res: f64,
    seed: u64,
) -> Result<EssenceBounds> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::InvalidParams(format!("u must be positive, got {u}")));
    }
    if !(grid_res > 0.0) || grid_res > u / 4.0 + 1e-15 {
        return Err(Error::InvalidParams(format!(
            "grid_res must lie in (0, u/4], got {grid_res} with u = {u}"
        )));
    }
    let points = support.grid_points(grid_res, GRID_BUDGET)?;
    if points.is_empty() {
        return Err(Error::InvalidParams(
            "support lattice is empty at this resolution".into(),
        ));
    }

    let cover = greedy_cover(&points, u);
    let packing = greedy_packing(&points, u);

    // cover validity sweep: every lattice point within u of a cover point
    for p in &points {
        let ok = cover.iter().any(|&c| dist2(&points[c], p) <= u * u);
        if !ok {
            return Err(Error::InvalidParams(
                "internal: greedy cover left a lattice point uncovered".into(),
            ));
        }
    }
    assert!(
        packing.len() <= cover.len(),
        "packing {} exceeded cover {}",
        packing.len(),
        cover.len()
    );

    Ok(EssenceBounds {
        u,
        grid_res,
        lower: packing.len() as u64,
        upper: cover.len() as u64,
        grid_count: points.len() as u64,
        cover_points: cover.into_iter().map(|i| points[i].clone()).collect(),
        seed,
    })
}

mod big_int_serde {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize_u128<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize_u128<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }

    pub fn serialize_i128<S: Serializer>(v: &i128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize_i128<'de, D: Deserializer<'de>>(d: D) -> Result<i128, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

/// One pattern's representation-set size versus how many of its codes are
/// actually hit by samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternUsage {
    pub pattern: SpikingPattern,
    #[serde(
        serialize_with = "big_int_serde::serialize_u128",
        deserialize_with = "big_int_serde::deserialize_u128"
    )]
    pub set_size: u128,
    pub used: u64,
}

/// A grid code that at least one sample quantizes to, identified by its
/// scale-index tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsedCode {
    pub pattern: SpikingPattern,
    pub indices: Vec<u64>,
    pub decoded: Vec<f64>,
    pub hits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageAccounting {
    pub per_pattern: Vec<PatternUsage>,
    #[serde(
        serialize_with = "big_int_serde::serialize_u128",
        deserialize_with = "big_int_serde::deserialize_u128"
    )]
    pub total_set: u128,
    pub total_used: u64,
    /// Unused codes: `total_set - total_used`.
    #[serde(
        serialize_with = "big_int_serde::serialize_u128",
        deserialize_with = "big_int_serde::deserialize_u128"
    )]
    pub residual: u128,
    /// Used codes beyond the essence interval ends; may be negative.
    #[serde(
        serialize_with = "big_int_serde::serialize_i128",
        deserialize_with = "big_int_serde::deserialize_i128"
    )]
    pub redundancy_vs_lower: i128,
    #[serde(
        serialize_with = "big_int_serde::serialize_i128",
        deserialize_with = "big_int_serde::deserialize_i128"
    )]
    pub redundancy_vs_upper: i128,
    pub used_codes: Vec<UsedCode>,
}

/// Quantizes every sample inside its pattern's certified grid and marks the
/// codes that get hit. Requires a regular description-length report whose
/// census covers all sample patterns.
pub fn used_codes(
    model: &dyn Codec,
    samples: &[Vec<f64>],
    dl: &DescriptionLengthReport,
    essence: &EssenceBounds,
) -> Result<UsageAccounting> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("usage samples"));
    }
    if !dl.regular {
        return Err(Error::NotCertified(
            "description length is not regular; usage accounting needs certified grids".into(),
        ));
    }
    let mut hits: BTreeMap<(SpikingPattern, Vec<u64>), u64> = BTreeMap::new();
    for x in samples {
        let z = model.encode(x)?;
        let pattern = z.pattern();
        let cert = dl
            .entry(&pattern)
            .and_then(|e| e.certification.as_ref())
            .ok_or_else(|| {
                Error::NotCertified(format!("pattern {} has no certified grid", pattern.label()))
            })?;
        let (_, indices) = quantize_with_indices(&z, &cert.grid)?;
        *hits.entry((pattern, indices)).or_default() += 1;
    }

    let mut per_pattern = Vec::with_capacity(dl.entries.len());
    let mut total_set: u128 = 0;
    let mut total_used: u64 = 0;
    for entry in &dl.entries {
        let cert = entry.certification.as_ref().expect("report is regular");
        let used = hits
            .keys()
            .filter(|(p, _)| p == &entry.pattern)
            .count() as u64;
        let set_size = cert.complexity();
        total_set = total_set.saturating_add(set_size);
        total_used += used;
        per_pattern.push(PatternUsage {
            pattern: entry.pattern.clone(),
            set_size,
            used,
        });
    }

    let mut used_codes = Vec::with_capacity(hits.len());
    for ((pattern, indices), count) in &hits {
        let cert = dl
            .entry(pattern)
            .and_then(|e| e.certification.as_ref())
            .expect("pattern was certified above");
        let set = crate::robustness::RepresentationSet::new(cert.grid.clone());
        let z = set.spectrum_at(indices);
        used_codes.push(UsedCode {
            pattern: pattern.clone(),
            indices: indices.clone(),
            decoded: model.decode(&z),
            hits: *count,
        });
    }

    Ok(UsageAccounting {
        per_pattern,
        total_set,
        total_used,
        residual: total_set - total_used as u128,
        redundancy_vs_lower: total_used as i128 - essence.lower as i128,
        redundancy_vs_upper: total_used as i128 - essence.upper as i128,
        used_codes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Check {
    pub bits: f64,
    pub essence_lower: u64,
    pub essence_lower_bits: f64,
    pub holds: bool,
    pub margin_bits: f64,
}

/// Numeric check of the description-length lower bound: achieved bits must
/// be at least `log2` of the packing bound. A failure is reported, not
/// hidden; it indicts the certification quality of the model under test.
pub fn theorem1_check(dl: &DescriptionLengthReport, eb: &EssenceBounds) -> Result<Theorem1Check> {
    let bits = dl.bits.ok_or_else(|| {
        Error::NotCertified("description length is not regular; bits undefined".into())
    })?;
    let essence_lower_bits = (eb.lower.max(1) as f64).log2();
    Ok(Theorem1Check {
        bits,
        essence_lower: eb.lower,
        essence_lower_bits,
        holds: bits >= essence_lower_bits,
        margin_bits: bits - essence_lower_bits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Score {
    /// Residual plus redundancy against the packing bound.
    #[serde(
        serialize_with = "big_int_serde::serialize_i128",
        deserialize_with = "big_int_serde::deserialize_i128"
    )]
    pub vs_lower: i128,
    /// Residual plus redundancy against the greedy cover.
    #[serde(
        serialize_with = "big_int_serde::serialize_i128",
        deserialize_with = "big_int_serde::deserialize_i128"
    )]
    pub vs_upper: i128,
}

/// Ranking score: residual plus redundancy. Telescopes to
/// `total_set - essence`, so ranking by the score orders candidates exactly
/// like ranking by total representation-set size.
pub fn theorem2_score(ua: &UsageAccounting) -> Theorem2Score {
    let residual = i128::try_from(ua.residual).unwrap_or(i128::MAX);
    Theorem2Score {
        vs_lower: residual.saturating_add(ua.redundancy_vs_lower),
        vs_upper: residual.saturating_add(ua.redundancy_vs_upper),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub i: usize,
    pub j: usize,
    pub point_i: Vec<f64>,
    pub point_j: Vec<f64>,
    pub pattern_i: SpikingPattern,
    pub pattern_j: SpikingPattern,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    /// Pair distance threshold, `u / 2`.
    pub threshold: f64,
    pub count: u64,
    pub pairs: Vec<BoundaryPair>,
}

/// Counts pairs of essence cover points within `u/2` of each other whose
/// encodings carry distinct spiking patterns.
pub fn on_boundary_pairs(
    model: &dyn Codec,
    eb: &EssenceBounds,
    u: f64,
) -> Result<BoundaryReport> {
    let threshold = u / 2.0;
    let patterns: Vec<SpikingPattern> = eb
        .cover_points
        .iter()
        .map(|p| model.encode(p).map(|z| z.pattern()))
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    for i in 0..eb.cover_points.len() {
        for j in (i + 1)..eb.cover_points.len() {
            let d = euclidean(&eb.cover_points[i], &eb.cover_points[j]);
            if d <= threshold && patterns[i] != patterns[j] {
                pairs.push(BoundaryPair {
                    i,
                    j,
                    point_i: eb.cover_points[i].clone(),
                    point_j: eb.cover_points[j].clone(),
                    pattern_i: patterns[i].clone(),
                    pattern_j: patterns[j].clone(),
                    distance: d,
                });
            }
        }
    }
    Ok(BoundaryReport {
        threshold,
        count: pairs.len() as u64,
        pairs,
    })
}

/// Distinct patterns over the cover points, for reports.
pub fn cover_patterns(model: &dyn Codec, eb: &EssenceBounds) -> Result<BTreeSet<SpikingPattern>> {
    let mut out = BTreeSet::new();
    for p in &eb.cover_points {
        out.insert(model.encode(p)?.pattern());
    }
    Ok(out)
}
