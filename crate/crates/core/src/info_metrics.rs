//! Discrete entropy and mutual-information diagnostics between original and
//! reconstructed data, per dimension and totaled. Plug-in estimator over
//! equal-width bins; out-of-range values clamp to the edge bins and are
//! counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint histogram of an (original, reconstruction) value pair over equal
/// width bins; marginals derive from row/column sums.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram2D {
    bins: usize,
    lo: f64,
    hi: f64,
    joint: Vec<u64>,
    n: u64,
    clamped: u64,
}

impl Histogram2D {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidParams(format!("need >= 2 bins, got {bins}")));
        }
        if !(lo < hi) {
            return Err(Error::InvalidParams(format!(
                "need lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            bins,
            lo,
            hi,
            joint: vec![0; bins * bins],
            n: 0,
            clamped: 0,
        })
    }

    #[inline]
    fn bin_of(&self, v: f64) -> (usize, bool) {
        if v < self.lo {
            return (0, true);
        }
        if v > self.hi {
            return (self.bins - 1, true);
        }
        let t = (v - self.lo) / (self.hi - self.lo) * self.bins as f64;
        ((t.floor() as usize).min(self.bins - 1), false)
    }

    pub fn add(&mut self, x: f64, x_recon: f64) {
        let (i, ci) = self.bin_of(x);
        let (j, cj) = self.bin_of(x_recon);
        self.joint[i * self.bins + j] += 1;
        self.n += 1;
        if ci || cj {
            self.clamped += 1;
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn clamped(&self) -> u64 {
        self.clamped
    }

    pub fn joint(&self, i: usize, j: usize) -> u64 {
        self.joint[i * self.bins + j]
    }

    pub fn row_marginal(&self, i: usize) -> u64 {
        self.joint[i * self.bins..(i + 1) * self.bins].iter().sum()
    }

    pub fn col_marginal(&self, j: usize) -> u64 {
        (0..self.bins).map(|i| self.joint[i * self.bins + j]).sum()
    }

    /// Mutual information in bits; `0 log 0 = 0` throughout.
    pub fn mutual_information(&self) -> f64 {
        let n = self.n as f64;
        let rows: Vec<u64> = (0..self.bins).map(|i| self.row_marginal(i)).collect();
        let cols: Vec<u64> = (0..self.bins).map(|j| self.col_marginal(j)).collect();
        let mut acc = 0.0;
        for i in 0..self.bins {
            for j in 0..self.bins {
                let c = self.joint(i, j);
                if c == 0 {
                    continue;
                }
                let p = c as f64 / n;
                let pi = rows[i] as f64 / n;
                let qj = cols[j] as f64 / n;
                acc += p * (p / (pi * qj)).log2();
            }
        }
        acc
    }

    pub fn row_entropy(&self) -> f64 {
        entropy_of_counts((0..self.bins).map(|i| self.row_marginal(i)), self.n)
    }

    pub fn col_entropy(&self) -> f64 {
        entropy_of_counts((0..self.bins).map(|j| self.col_marginal(j)), self.n)
    }
}

fn entropy_of_counts(counts: impl Iterator<Item = u64>, n: u64) -> f64 {
    let n = n as f64;
    -counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyResult {
    pub bits: f64,
    /// Values outside the declared bounds, clamped into the edge bins.
    pub out_of_range: u64,
}

/// Plug-in discrete entropy of a scalar sequence over `bins` equal-width
/// bins spanning `[lo, hi]`.
pub fn discrete_entropy(seq: &[f64], lo: f64, hi: f64, bins: usize) -> Result<EntropyResult> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("entropy sequence"));
    }
    if bins < 2 {
        return Err(Error::InvalidParams(format!("need >= 2 bins, got {bins}")));
    }
    if !(lo < hi) {
        return Err(Error::InvalidParams(format!("need lo < hi, got [{lo}, {hi}]")));
    }
    let mut counts = vec![0u64; bins];
    let mut out_of_range = 0u64;
    for &v in seq {
        let (idx, clamped) = if v < lo {
            (0, true)
        } else if v > hi {
            (bins - 1, true)
        } else {
            let t = (v - lo) / (hi - lo) * bins as f64;
            ((t.floor() as usize).min(bins - 1), false)
        };
        counts[idx] += 1;
        if clamped {
            out_of_range += 1;
        }
    }
    Ok(EntropyResult {
        bits: entropy_of_counts(counts.into_iter(), seq.len() as u64),
        out_of_range,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimInfo {
    pub entropy_orig: f64,
    pub entropy_recon: f64,
    pub mutual_information: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutualInformationReport {
    pub bins: usize,
    pub per_dim: Vec<DimInfo>,
    pub total: f64,
    pub clamped: u64,
}

/// Per-dimension mutual information between paired original and
/// reconstructed datasets, and the summed total.
pub fn mutual_information(
    orig: &[Vec<f64>],
    recon: &[Vec<f64>],
    bounds: &[(f64, f64)],
    bins: usize,
) -> Result<MutualInformationReport> {
    if orig.is_empty() {
        return Err(Error::EmptyInput("mutual-information samples"));
    }
    if orig.len() != recon.len() {
        return Err(Error::ShapeMismatch {
            expected: orig.len(),
            got: recon.len(),
        });
    }
    let dim = bounds.len();
    for row in orig.iter().chain(recon) {
        if row.len() != dim {
            return Err(Error::ShapeMismatch {
                expected: dim,
                got: row.len(),
            });
        }
    }
    let mut per_dim = Vec::with_capacity(dim);
    let mut total = 0.0;
    let mut clamped = 0;
    for d in 0..dim {
        let (lo, hi) = bounds[d];
        let mut hist = Histogram2D::new(bins, lo, hi)?;
        for (x, y) in orig.iter().zip(recon) {
            hist.add(x[d], y[d]);
        }
        let info = DimInfo {
            entropy_orig: hist.row_entropy(),
            entropy_recon: hist.col_entropy(),
            mutual_information: hist.mutual_information(),
        };
        clamped += hist.clamped();
        total += info.mutual_information;
        per_dim.push(info);
    }
    Ok(MutualInformationReport {
        bins,
        per_dim,
        total,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn degenerate_sequence_has_zero_entropy() {
        let r = discrete_entropy(&[0.4; 100], 0.0, 1.0, 8).unwrap();
        assert_eq!(r.bits, 0.0);
        assert_eq!(r.out_of_range, 0);
    }

    #[test]
    fn uniform_four_bins_is_two_bits() {
        let seq = [0.1, 0.35, 0.6, 0.85];
        let r = discrete_entropy(&seq, 0.0, 1.0, 4).unwrap();
        assert!((r.bits - 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_values_clamp_and_count() {
        let r = discrete_entropy(&[-1.0, 0.5, 2.0], 0.0, 1.0, 4).unwrap();
        assert_eq!(r.out_of_range, 2);
    }

    #[test]
    fn empty_and_bad_arguments_are_rejected() {
        assert!(discrete_entropy(&[], 0.0, 1.0, 4).is_err());
        assert!(discrete_entropy(&[0.5], 0.0, 1.0, 1).is_err());
        assert!(discrete_entropy(&[0.5], 1.0, 0.0, 4).is_err());
    }

    #[test]
    fn large_uniform_sample_approaches_log2_bins() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let seq: Vec<f64> = (0..200_000).map(|_| rng.random_range(0.0..1.0)).collect();
        let r = discrete_entropy(&seq, 0.0, 1.0, 64).unwrap();
        assert!((r.bits - 6.0).abs() < 0.05, "entropy {}", r.bits);

        // direct-count oracle over the same binning
        let mut counts = vec![0u64; 64];
        for &v in &seq {
            counts[((v * 64.0).floor() as usize).min(63)] += 1;
        }
        let n = seq.len() as f64;
        let oracle: f64 = -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.log2()
            })
            .sum::<f64>();
        assert!((r.bits - oracle).abs() < 1e-12);
    }

    fn toy_dataset(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn identical_reconstruction_recovers_marginal_entropy() {
        let data = toy_dataset(5000, 2);
        let bounds = [(0.0, 1.0), (-1.0, 1.0)];
        let report = mutual_information(&data, &data, &bounds, 16).unwrap();
        for d in &report.per_dim {
            assert!((d.mutual_information - d.entropy_orig).abs() < 1e-9);
        }
    }

    #[test]
    fn shuffled_reconstruction_sits_in_the_permutation_null_band() {
        let data = toy_dataset(2000, 3);
        let bounds = [(0.0, 1.0), (-1.0, 1.0)];
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut shuffled = data.clone();
        shuffled.shuffle(&mut rng);
        let observed = mutual_information(&data, &shuffled, &bounds, 16)
            .unwrap()
            .total;

        let draws = 120;
        let mut nulls = Vec::with_capacity(draws);
        let mut perm = data.clone();
        for _ in 0..draws {
            perm.shuffle(&mut rng);
            nulls.push(mutual_information(&data, &perm, &bounds, 16).unwrap().total);
        }
        let mean = nulls.iter().sum::<f64>() / draws as f64;
        let var = nulls.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (draws - 1) as f64;
        let sigma = var.sqrt();
        assert!(
            (observed - mean).abs() <= 3.0 * sigma,
            "shuffled MI {observed} outside null band {mean} +- 3*{sigma}"
        );
    }

    #[test]
    fn small_noise_keeps_information_close_to_entropy() {
        let data = toy_dataset(8000, 5);
        let bounds = [(0.0, 1.0), (-1.0, 1.0)];
        let bins = 16;
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        // noise a hundredth of a bin width
        let recon: Vec<Vec<f64>> = data
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&bounds)
                    .map(|(&v, &(lo, hi))| {
                        let w = (hi - lo) / bins as f64 / 100.0;
                        v + rng.random_range(-w..w)
                    })
                    .collect()
            })
            .collect();
        let report = mutual_information(&data, &recon, &bounds, bins).unwrap();
        for d in &report.per_dim {
            assert!(
                d.entropy_orig - d.mutual_information < 0.1,
                "I = {} vs H = {}",
                d.mutual_information,
                d.entropy_orig
            );
        }
    }

    #[test]
    fn information_is_bounded_by_marginal_entropies() {
        let data = toy_dataset(1000, 7);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let recon: Vec<Vec<f64>> = data
            .iter()
            .map(|p| p.iter().map(|&v| v + rng.random_range(-0.2..0.2)).collect())
            .collect();
        let bounds = [(0.0, 1.0), (-1.0, 1.0)];
        let report = mutual_information(&data, &recon, &bounds, 12).unwrap();
        for d in &report.per_dim {
            assert!(d.mutual_information >= -1e-9);
            assert!(
                d.mutual_information
                    <= d.entropy_orig.min(d.entropy_recon) + 1e-9
            );
        }
    }

    #[test]
    fn permutation_of_sample_order_changes_nothing() {
        let data = toy_dataset(500, 9);
        let recon = toy_dataset(500, 10);
        let bounds = [(0.0, 1.0), (-1.0, 1.0)];
        let a = mutual_information(&data, &recon, &bounds, 8).unwrap();
        // permute PAIRS jointly
        let mut idx: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        idx.shuffle(&mut rng);
        let data2: Vec<Vec<f64>> = idx.iter().map(|&i| data[i].clone()).collect();
        let recon2: Vec<Vec<f64>> = idx.iter().map(|&i| recon[i].clone()).collect();
        let b = mutual_information(&data2, &recon2, &bounds, 8).unwrap();
        assert_eq!(a, b);
    }
}
