//! Acceptance suite. Each test covers one numbered criterion and prints one
//! pass line on success (run with `--nocapture` to see them); a failing
//! criterion fails its test.
//!
//!  1. dominant-ratio worked example (N0 = 8, delta = 1250, < 1 s)
//!  2. truncation semantics property sweep
//!  3. quantization bound and exact grid counts
//!  4. inclusion-exclusion vs Monte Carlo and exhaustive enumeration
//!  5. linear-decoder complexity oracle
//!  6. description-length lower bound on the two-circle pipeline
//!  7. sub-quantization transfer with zero violations
//!  8. essence oracle (unit interval and two-circle cover sweep)
//!  9. gradient check on 20 probes
//! 10. information diagnostics (identity and permutation-null)
//! 11. pipeline determinism up to timings

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use spectrum_mdl::essence::{essence_bounds, GRID_BUDGET};
use spectrum_mdl::info_metrics::mutual_information;
use spectrum_mdl::mdl::{check_compatibility, CompatibilityParams};
use spectrum_mdl::model::{gradient_check, Codec, Decoder, SpectrumVae};
use spectrum_mdl::net::Activation;
use spectrum_mdl::pattern_stats::{dominant_ratio, prob_all_observed, PatternCensus};
use spectrum_mdl::pipeline::{run_pipeline, PipelineOutput, RunConfig};
use spectrum_mdl::robustness::{
    build_grid, complexity, perturb_truncate, quantize, Complexity, CertBudget,
};
use spectrum_mdl::spectrum::{truncate, SpectrumParams, Spectrum, SpikingPattern};
use spectrum_mdl::support::{euclidean, BoundedSupport};

fn pass(n: u32, name: &str) {
    println!("acceptance criterion {n:2} ({name}): PASS");
}

fn census_of(counts: &[(Vec<usize>, u64)], k: usize) -> PatternCensus {
    let mut map = BTreeMap::new();
    for (dims, c) in counts {
        map.insert(SpikingPattern::new(dims.clone(), k).unwrap(), *c);
    }
    PatternCensus::from_counts(map).unwrap()
}

#[test]
fn criterion_01_dominant_ratio_worked_example() {
    let census = census_of(&[(vec![2, 3], 5000), (vec![2, 9], 5000)], 16);
    let start = Instant::now();
    let report = dominant_ratio(&census, 0.99).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(report.n0, 8, "N0 must be exactly 8");
    assert_eq!(report.delta_num, 10_000);
    assert_eq!(report.delta_den, 8);
    assert_eq!(report.delta(), 1250.0, "delta must be exactly 1250");
    assert!(report.probability_at_n0 >= 0.99);
    assert!(report.probability_at_n0_minus_1 < 0.99);
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "took {elapsed:?}, budget is 1 s"
    );
    pass(1, "dominant-ratio worked example");
}

#[test]
fn criterion_02_truncation_semantics() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_0002);
    let k = 10usize;
    let vectors_per_pair = 10_000usize; // 10^5 scalar components per (a, b)
    for _ in 0..5 {
        let a = rng.random_range(0.05..1.0);
        let b = a + rng.random_range(0.1..2.0);
        let p = SpectrumParams::new(a, b, k).unwrap();
        for _ in 0..vectors_per_pair {
            let pre: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..(b + 1.0))).collect();
            let z = truncate(&pre, &p).unwrap();
            // three-branch scalar oracle on every component
            for (i, &v) in pre.iter().enumerate() {
                let expect = if a <= v && v <= b {
                    v
                } else if v > b {
                    b
                } else {
                    0.0
                };
                assert_eq!(z.values()[i], expect, "component {i} of {v}");
            }
            // idempotence
            let z2 = truncate(z.values(), &p).unwrap();
            assert_eq!(z2, z);
            // perturbation never silences a spiking dim
            let pattern = z.pattern();
            if !pattern.is_empty() {
                let eps: Vec<f64> = (0..pattern.len())
                    .map(|_| rng.random_range(-2.0 * (b - a)..2.0 * (b - a)))
                    .collect();
                let perturbed = perturb_truncate(&z, &pattern, &eps, &p).unwrap();
                for idx in pattern.zero_based() {
                    assert!(
                        perturbed.values()[idx] >= a,
                        "spiking dim {idx} dropped to {}",
                        perturbed.values()[idx]
                    );
                }
                assert!(perturbed.is_preserved_by(&pattern), "pattern changed");
            }
        }
    }
    pass(2, "truncation semantics");
}

fn rational_of(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

#[test]
fn criterion_03_quantization_bound() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_0003);
    for _ in 0..1000 {
        let a = rng.random_range(0.05..2.0);
        let band = rng.random_range(0.3..3.0);
        let b = a + band;
        let p = SpectrumParams::new(a, b, 1).unwrap();
        let exponent = rng.random_range(-3.5..-0.3);
        let alpha = p.band() * 10f64.powf(exponent);
        let pattern = SpikingPattern::new(vec![1], 1).unwrap();
        let grid = build_grid(&pattern, &[alpha], &p).unwrap();
        let q = grid.counts()[0];

        // exact rational verification of the defining property:
        // Q - 1 <= (b - a) / (2 alpha) < Q
        let ratio = rational_of(p.band()) / (BigRational::from_integer(BigInt::from(2)) * rational_of(alpha));
        assert!(ratio.is_positive());
        let q_rat = BigRational::from_integer(BigInt::from(q));
        let q_minus_1 = &q_rat - BigRational::one();
        assert!(ratio < q_rat, "Q = {q} is not strictly greater than the ratio");
        assert!(q_minus_1 <= ratio, "Q = {q} is not the smallest such integer");

        for _ in 0..1000 {
            let v = rng.random_range(a..=b);
            let z = Spectrum::new(vec![v], &p).unwrap();
            let zq = quantize(&z, &grid).unwrap();
            assert!(
                (zq.values()[0] - v).abs() <= alpha,
                "displacement {} exceeds alpha {alpha}",
                (zq.values()[0] - v).abs()
            );
        }
    }
    pass(3, "quantization bound and exact grid counts");
}

/// Draws without replacement via a chain of hypergeometric draws; reports
/// whether every pattern was seen.
fn mc_all_observed(counts: &[u64], n0: u64, trials: u64, rng: &mut ChaCha12Rng) -> f64 {
    use rand_distr::Distribution;
    let total: u64 = counts.iter().sum();
    let mut hits = 0u64;
    for _ in 0..trials {
        let mut remaining_total = total;
        let mut draws = n0;
        let mut all = true;
        for &c in counts {
            let k = if draws == 0 {
                0
            } else {
                rand_distr::Hypergeometric::new(remaining_total, c, draws)
                    .unwrap()
                    .sample(rng)
            };
            if k == 0 {
                all = false;
                break;
            }
            remaining_total -= c;
            draws -= k;
        }
        if all {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

/// Exhaustive subset enumeration for tiny censuses.
fn enumerate_all_observed(counts: &[u64], n0: u64) -> f64 {
    let mut labels = Vec::new();
    for (m, &c) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat(m).take(c as usize));
    }
    let n = labels.len();
    let mut favorable = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1u32 << n) {
        if u64::from(mask.count_ones()) != n0 {
            continue;
        }
        total += 1;
        let mut seen = vec![false; counts.len()];
        for (i, &lab) in labels.iter().enumerate() {
            if mask >> i & 1 == 1 {
                seen[lab] = true;
            }
        }
        if seen.iter().all(|&s| s) {
            favorable += 1;
        }
    }
    favorable as f64 / total as f64
}

#[test]
fn criterion_04_inclusion_exclusion_vs_monte_carlo() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_0004);
    let trials = 100_000u64;
    let mut agree = 0u32;
    for case in 0..50 {
        let m = rng.random_range(2..=4usize);
        let counts: Vec<u64> = (0..m).map(|_| rng.random_range(1..=125u64)).collect();
        let n: u64 = counts.iter().sum();
        let census = census_of(
            &counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (vec![i + 1], c))
                .collect::<Vec<_>>(),
            8,
        );
        let n0 = rng.random_range(1..=n);
        let exact = prob_all_observed(&census, n0).unwrap();
        let mc = mc_all_observed(&counts, n0, trials, &mut rng);
        // standard error of the simulated frequency, at the exact p
        let se = (exact * (1.0 - exact) / trials as f64).sqrt();
        if (exact - mc).abs() <= 3.0 * se + 1e-12 {
            agree += 1;
        } else {
            println!(
                "criterion 4 case {case}: exact {exact} vs mc {mc} (3se = {})",
                3.0 * se
            );
        }
    }
    assert!(agree >= 48, "only {agree}/50 cases within 3 standard errors");

    // exhaustive-enumeration agreement on all censuses with N <= 12
    for _ in 0..25 {
        let m = rng.random_range(2..=4usize);
        let mut counts: Vec<u64> = (0..m).map(|_| rng.random_range(1..=4u64)).collect();
        while counts.iter().sum::<u64>() > 12 {
            counts.pop();
        }
        if counts.len() < 2 {
            continue;
        }
        let n: u64 = counts.iter().sum();
        let census = census_of(
            &counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (vec![i + 1], c))
                .collect::<Vec<_>>(),
            8,
        );
        for n0 in 1..=n {
            let exact = prob_all_observed(&census, n0).unwrap();
            let brute = enumerate_all_observed(&counts, n0);
            assert!(
                (exact - brute).abs() < 1e-12,
                "counts {counts:?} n0={n0}: {exact} vs {brute}"
            );
        }
    }
    pass(4, "inclusion-exclusion vs Monte Carlo");
}

struct SlopeDecoder {
    slope: f64,
}

impl Decoder for SlopeDecoder {
    fn decode(&self, z: &Spectrum) -> Vec<f64> {
        vec![self.slope * z.values()[0]]
    }

    fn output_dim(&self) -> usize {
        1
    }
}

#[test]
fn criterion_05_linear_decoder_complexity_oracle() {
    // band is exactly 1.0
    let p = SpectrumParams::new(0.5, 1.5, 2).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_0005);
    let pattern = SpikingPattern::new(vec![1], 2).unwrap();
    for case in 0..20 {
        let c = rng.random_range(0.5..8.0);
        let u = rng.random_range(0.05..0.6);
        let decoder = SlopeDecoder { slope: c };
        let budget = CertBudget {
            seed: 0x5EED_0005 ^ case,
            ..CertBudget::default()
        };
        let got = complexity(&decoder, &pattern, u, &budget, &p);
        // analytic: smallest integer strictly greater than c / (2u)
        let ratio = rational_of(c) / (BigRational::from_integer(BigInt::from(2)) * rational_of(u));
        let expect = (ratio.floor().to_integer() + BigInt::one())
            .to_i128()
            .unwrap();
        match got {
            Complexity::Finite(q) => {
                let q = q as i128;
                assert!(
                    (q - expect).abs() <= 1,
                    "case {case}: slope {c}, u {u}: complexity {q} vs analytic {expect}"
                );
            }
            Complexity::Infinite => panic!("case {case}: unexpected infinite complexity"),
        }
    }
    pass(5, "linear-decoder complexity oracle");
}

/// Two full pipeline runs of the committed two-circle study, shared by
/// criteria 6, 7, and 11.
struct Fixture {
    first: PipelineOutput,
    second: PipelineOutput,
    runtime_first: f64,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let config = RunConfig::two_circles_demo();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let first = run_pipeline(&config, d1.path()).unwrap();
        let runtime_first = start.elapsed().as_secs_f64();
        let second = run_pipeline(&config, d2.path()).unwrap();
        Fixture {
            first,
            second,
            runtime_first,
        }
    })
}

#[test]
fn criterion_06_theorem1_on_two_circle_pipeline() {
    let fx = fixture();
    let out = &fx.first;
    // gate: the model passes compatibility on the fresh 1000-sample holdout
    assert_eq!(out.holdout_data.len(), 1000);
    assert!(
        out.compat_holdout.compatible,
        "holdout compatibility failed: max err {} vs gate {}, delta {} vs {}",
        out.compat_holdout.max_recon_error,
        out.compat_holdout.params.u,
        out.compat_holdout.dominant.delta(),
        out.compat_holdout.params.gamma2
    );
    assert!(out.dl.regular, "some pattern failed to certify");
    let bits = out.dl.bits.unwrap();
    let lower_bits = (out.essence.lower as f64).log2();
    assert!(
        bits >= lower_bits,
        "achieved bits {bits} below essence lower bound {lower_bits}"
    );
    assert!(out.theorem1.holds);
    assert!(
        out.theorem1.margin_bits >= 0.0,
        "negative margin {}",
        out.theorem1.margin_bits
    );
    assert!(
        fx.runtime_first < 600.0,
        "pipeline took {} s, budget is 600 s",
        fx.runtime_first
    );

    // the compatibility report's numbers match an independent recomputation
    let recheck = check_compatibility(
        &out.model,
        &out.holdout_data,
        &CompatibilityParams {
            u: out.compat_holdout.params.u,
            gamma1: out.compat_holdout.params.gamma1,
            gamma2: out.compat_holdout.params.gamma2,
            p0: out.compat_holdout.params.p0,
        },
    )
    .unwrap();
    assert_eq!(recheck.census, out.compat_holdout.census);
    assert_eq!(recheck.dominant, out.compat_holdout.dominant);
    pass(6, "theorem-1 bound on the two-circle pipeline");
}

#[test]
fn criterion_07_sub_quantization_transfer() {
    let fx = fixture();
    let out = &fx.first;
    let u = out.manifest.config.analysis.u;
    assert!(!out.subquant.samples.is_empty());
    let mut violations = 0u32;
    for s in &out.subquant.samples {
        if s.pattern_seen && s.unquantized_error <= u / 2.0 {
            let q = s.quantized_error.expect("certified pattern quantizes");
            if q > u {
                violations += 1;
                println!(
                    "criterion 7 violation at sample {}: unquantized {} quantized {q}",
                    s.index, s.unquantized_error
                );
            }
        }
    }
    assert_eq!(violations, 0, "sub-quantization transfer violated");
    pass(7, "sub-quantization transfer");
}

#[test]
fn criterion_08_essence_oracle() {
    // 1-D uniform on [0, 1] with u = 0.25: the interval needs exactly two
    // quarter-radius balls, centered at 0.25 and 0.75
    let interval = BoundedSupport::hyper_box(vec![0.0], vec![1.0]).unwrap();
    let eb = essence_bounds(&interval, 0.25, 0.0625, 0).unwrap();
    assert_eq!(eb.lower, 2);
    assert_eq!(eb.upper, 2);
    let mut centers: Vec<f64> = eb.cover_points.iter().map(|p| p[0]).collect();
    centers.sort_by(f64::total_cmp);
    assert_eq!(centers, vec![0.25, 0.75]);

    // two-circle support: the greedy cover must pass a fresh full sweep at
    // grid_res = u/4
    let disks = BoundedSupport::two_disks([[2.0, 2.0], [5.0, 2.0]], 1.2).unwrap();
    let u = 0.3;
    let eb = essence_bounds(&disks, u, u / 4.0, 0).unwrap();
    assert!(eb.lower <= eb.upper);
    let grid = disks.grid_points(u / 4.0, GRID_BUDGET).unwrap();
    for point in &grid {
        let covered = eb
            .cover_points
            .iter()
            .any(|c| euclidean(c, point) <= u + 1e-12);
        assert!(covered, "grid point {point:?} left uncovered");
    }
    pass(8, "essence oracle");
}

#[test]
fn criterion_09_gradient_check() {
    let params = SpectrumParams::new(0.2, 1.0, 4).unwrap();
    let h = 1e-5;
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_0009);
    let mut accepted = 0u32;
    let mut attempts = 0u32;
    while accepted < 20 {
        attempts += 1;
        assert!(attempts < 500, "probe generation stalled");
        let seed = rng.random::<u64>();
        let model =
            SpectrumVae::seeded(params, 3, &[6], &[6], Activation::Tanh, seed).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        // precondition: every pre-activation clear of both breakpoints
        let pre = model.pre_activation(&x).unwrap();
        let clear = pre
            .iter()
            .all(|&v| (v - params.a).abs() > 10.0 * h && (v - params.b).abs() > 10.0 * h);
        if !clear {
            continue;
        }
        let rel = gradient_check(&model, &x, h).unwrap();
        assert!(
            rel <= 1e-4,
            "probe {accepted}: relative error {rel} exceeds 1e-4"
        );
        accepted += 1;
    }
    pass(9, "gradient check");
}

#[test]
fn criterion_10_information_diagnostics() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha12Rng::seed_from_u64(0x5EED_0010);
    let data: Vec<Vec<f64>> = (0..4000)
        .map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(-2.0..2.0)])
        .collect();
    let bounds = [(0.0, 1.0), (-2.0, 2.0)];

    // identity reconstruction: I equals the marginal entropy per dimension
    let identity = mutual_information(&data, &data, &bounds, 32).unwrap();
    for d in &identity.per_dim {
        assert!(
            (d.mutual_information - d.entropy_orig).abs() <= 1e-9,
            "I = {} vs H = {}",
            d.mutual_information,
            d.entropy_orig
        );
    }

    // shuffled reconstruction: total I inside the permutation-null 3-sigma band
    let mut shuffled = data.clone();
    shuffled.shuffle(&mut rng);
    let observed = mutual_information(&data, &shuffled, &bounds, 32).unwrap().total;
    let draws = 150;
    let mut nulls = Vec::with_capacity(draws);
    let mut perm = data.clone();
    for _ in 0..draws {
        perm.shuffle(&mut rng);
        nulls.push(mutual_information(&data, &perm, &bounds, 32).unwrap().total);
    }
    let mean = nulls.iter().sum::<f64>() / draws as f64;
    let sigma = (nulls.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (draws - 1) as f64)
        .sqrt();
    assert!(
        (observed - mean).abs() <= 3.0 * sigma,
        "shuffled total I {observed} outside {mean} +- 3*{sigma}"
    );
    pass(10, "information diagnostics");
}

#[test]
fn criterion_11_pipeline_determinism() {
    let fx = fixture();
    assert_eq!(
        fx.first.manifest.without_timings(),
        fx.second.manifest.without_timings(),
        "reruns from the same config disagree"
    );
    pass(11, "pipeline determinism");
}
