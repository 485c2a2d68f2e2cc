//! Bounded data domains: membership, seeded sampling, and lattice
//! discretization used by the covering/packing machinery.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SupportShape {
    /// Uniform over the whole bounding box.
    HyperBox,
    /// Union of two disks in the plane; sampling is area-weighted.
    TwoDisks { centers: [[f64; 2]; 2], radius: f64 },
    /// Annulus in the plane.
    Ring {
        center: [f64; 2],
        inner: f64,
        outer: f64,
    },
    /// Finite point set; the lattice is the point set itself.
    Points { points: Vec<Vec<f64>> },
}

/// A bounded region of data space with a membership predicate and a seeded
/// uniform sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedSupport {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    shape: SupportShape,
}

impl BoundedSupport {
    pub fn hyper_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParams("bounds must be nonempty and equal length".into()));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l < u) {
                return Err(Error::InvalidParams(format!(
                    "need lower < upper per dimension, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self {
            dim: lower.len(),
            lower,
            upper,
            shape: SupportShape::HyperBox,
        })
    }

    pub fn two_disks(centers: [[f64; 2]; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParams("disk radius must be positive".into()));
        }
        let lower = vec![
            centers[0][0].min(centers[1][0]) - radius,
            centers[0][1].min(centers[1][1]) - radius,
        ];
        let upper = vec![
            centers[0][0].max(centers[1][0]) + radius,
            centers[0][1].max(centers[1][1]) + radius,
        ];
        Ok(Self {
            dim: 2,
            lower,
            upper,
            shape: SupportShape::TwoDisks { centers, radius },
        })
    }

    pub fn ring(center: [f64; 2], inner: f64, outer: f64) -> Result<Self> {
        if !(0.0 <= inner && inner < outer) {
            return Err(Error::InvalidParams(format!(
                "need 0 <= inner < outer, got {inner}, {outer}"
            )));
        }
        Ok(Self {
            dim: 2,
            lower: vec![center[0] - outer, center[1] - outer],
            upper: vec![center[0] + outer, center[1] + outer],
            shape: SupportShape::Ring {
                center,
                inner,
                outer,
            },
        })
    }

    /// Finite point set; bounds are the componentwise envelope (possibly
    /// degenerate for a single point).
    pub fn point_cloud(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud"));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidParams("points must have dimension >= 1".into()));
        }
        let mut lower = points[0].clone();
        let mut upper = points[0].clone();
        for p in &points {
            if p.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            for d in 0..dim {
                if !p[d].is_finite() {
                    return Err(Error::NonFinite {
                        index: d,
                        value: p[d],
                    });
                }
                lower[d] = lower[d].min(p[d]);
                upper[d] = upper[d].max(p[d]);
            }
        }
        Ok(Self {
            dim,
            lower,
            upper,
            shape: SupportShape::Points { points },
        })
    }

    pub fn single_point(point: Vec<f64>) -> Result<Self> {
        Self::point_cloud(vec![point])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn shape(&self) -> &SupportShape {
        &self.shape
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        if p.len() != self.dim {
            return false;
        }
        match &self.shape {
            SupportShape::HyperBox => p
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u),
            SupportShape::TwoDisks { centers, radius } => centers
                .iter()
                .any(|c| dist2(p, c) <= radius * radius),
            SupportShape::Ring {
                center,
                inner,
                outer,
            } => {
                let d2 = dist2(p, center);
                inner * inner <= d2 && d2 <= outer * outer
            }
            SupportShape::Points { points } => points.iter().any(|q| q == p),
        }
    }

    /// One uniform draw. Disk and ring shapes use rejection sampling inside
    /// their bounding boxes; a point cloud draws one of its points.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match &self.shape {
            SupportShape::HyperBox => self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(&l, &u)| rng.random_range(l..u))
                .collect(),
            SupportShape::TwoDisks { centers, radius } => {
                // equal radii, so the fair area weighting is a coin flip
                let c = if rng.random_bool(0.5) {
                    centers[0]
                } else {
                    centers[1]
                };
                loop {
                    let x = rng.random_range(c[0] - radius..c[0] + radius);
                    let y = rng.random_range(c[1] - radius..c[1] + radius);
                    if dist2(&[x, y], &c) <= radius * radius {
                        return vec![x, y];
                    }
                }
            }
            SupportShape::Ring {
                center,
                inner,
                outer,
            } => loop {
                let x = rng.random_range(center[0] - outer..center[0] + outer);
                let y = rng.random_range(center[1] - outer..center[1] + outer);
                let d2 = dist2(&[x, y], center);
                if inner * inner <= d2 && d2 <= outer * outer {
                    return vec![x, y];
                }
            },
            SupportShape::Points { points } => {
                points[rng.random_range(0..points.len())].clone()
            }
        }
    }

    /// `n` seeded uniform draws.
    pub fn sample_n(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::InvalidParams("sample count must be >= 1".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| self.sample(&mut rng)).collect())
    }

    /// Lattice points of the support at the given resolution: the bounding
    /// box is swept at step `res` (endpoints included) and filtered by
    /// membership. A point cloud returns its own points. `budget` caps the
    /// number of bounding-box lattice points scanned.
    pub fn grid_points(&self, res: f64, budget: u128) -> Result<Vec<Vec<f64>>> {
        if let SupportShape::Points { points } = &self.shape {
            return Ok(points.clone());
        }
        if !(res > 0.0 && res.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "grid resolution must be positive, got {res}"
            )));
        }
        let mut counts = Vec::with_capacity(self.dim);
        let mut total: u128 = 1;
        for (l, u) in self.lower.iter().zip(&self.upper) {
            let steps = ((u - l) / res).floor() as u128 + 1;
            counts.push(steps);
            total = total.saturating_mul(steps);
            if total > budget {
                return Err(Error::ResolutionExceeded {
                    points: total,
                    budget,
                });
            }
        }
        let mut out = Vec::new();
        let mut index = vec![0u128; self.dim];
        loop {
            let point: Vec<f64> = index
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(&i, (&l, &u))| (l + i as f64 * res).min(u))
                .collect();
            if self.contains(&point) {
                out.push(point);
            }
            // odometer increment
            let mut d = self.dim;
            loop {
                if d == 0 {
                    return Ok(out);
                }
                d -= 1;
                index[d] += 1;
                if index[d] < counts[d] {
                    break;
                }
                index[d] = 0;
            }
        }
    }
}

#[inline]
pub(crate) fn dist2(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Euclidean distance between two points.
pub fn euclidean(p: &[f64], q: &[f64]) -> f64 {
    dist2(p, q).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_disk_samples_satisfy_membership() {
        let s = BoundedSupport::two_disks([[2.0, 2.0], [5.0, 2.0]], 1.2).unwrap();
        let pts = s.sample_n(500, 1).unwrap();
        assert!(pts.iter().all(|p| s.contains(p)));
    }

    #[test]
    fn two_disk_sampling_is_deterministic() {
        let s = BoundedSupport::two_disks([[2.0, 2.0], [5.0, 2.0]], 1.2).unwrap();
        assert_eq!(s.sample_n(50, 9).unwrap(), s.sample_n(50, 9).unwrap());
    }

    #[test]
    fn two_disk_left_fraction_is_balanced() {
        let s = BoundedSupport::two_disks([[2.0, 2.0], [5.0, 2.0]], 1.2).unwrap();
        let pts = s.sample_n(10_000, 4).unwrap();
        let left = pts.iter().filter(|p| dist2(p, &[2.0, 2.0]) <= 1.44).count();
        let frac = left as f64 / 10_000.0;
        // 3 sigma for a fair binomial with n = 10^4
        assert!((frac - 0.5).abs() <= 3.0 * 0.005, "left fraction {frac}");
    }

    #[test]
    fn interval_grid_includes_endpoints() {
        let s = BoundedSupport::hyper_box(vec![0.0], vec![1.0]).unwrap();
        let g = s.grid_points(0.25, 1_000).unwrap();
        let flat: Vec<f64> = g.into_iter().map(|p| p[0]).collect();
        assert_eq!(flat, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn grid_budget_is_enforced() {
        let s = BoundedSupport::hyper_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            s.grid_points(1e-4, 1_000),
            Err(Error::ResolutionExceeded { .. })
        ));
    }

    #[test]
    fn single_point_cloud_grid_is_the_point() {
        let s = BoundedSupport::single_point(vec![1.0, 2.0]).unwrap();
        assert_eq!(s.grid_points(0.1, 100).unwrap(), vec![vec![1.0, 2.0]]);
        assert!(s.contains(&[1.0, 2.0]));
        assert!(!s.contains(&[1.0, 2.1]));
    }

    #[test]
    fn ring_membership() {
        let s = BoundedSupport::ring([0.0, 0.0], 1.0, 2.0).unwrap();
        assert!(!s.contains(&[0.0, 0.0]));
        assert!(s.contains(&[1.5, 0.0]));
        assert!(!s.contains(&[2.5, 0.0]));
        let pts = s.sample_n(200, 3).unwrap();
        assert!(pts.iter().all(|p| s.contains(p)));
    }
}
