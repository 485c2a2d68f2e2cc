//! End-to-end study pipeline: dataset generation, training, census and
//! dominant ratio, compatibility, certification at `u/2`, description
//! length, sub-quantization check, essence bounds, usage accounting,
//! theorem checks, boundary report, information diagnostics, and report
//! emission (CSV, SVG, manifest).
//!
//! The headline bound is `analysis.u`. Following the description-length
//! construction, the compatibility gate runs at `u/2`, pattern grids are
//! certified at `u/2`, the sub-quantization check and the essence interval
//! use the full `u`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::essence::{
    essence_bounds, on_boundary_pairs, theorem1_check, theorem2_score, used_codes,
    BoundaryReport, EssenceBounds, Theorem1Check, Theorem2Score, UsageAccounting,
};
use crate::info_metrics::{mutual_information, DimInfo, MutualInformationReport};
use crate::io;
use crate::mdl::{
    check_compatibility, description_length_of_census, sub_quantization_check,
    CompatibilityParams, CompatibilityReport, DescriptionLengthReport, SubQuantReport,
};
use crate::model::{train, Codec, SpectrumVae, TrainConfig};
use crate::net::Activation;
use crate::pattern_stats::{census, dominant_ratio, DominantRatioReport, PatternCensus};
use crate::robustness::{CertBudget, Complexity, RepresentationSet};
use crate::spectrum::{SpectrumParams, Spectrum};
use crate::support::BoundedSupport;

pub const ARTIFACT_VERSION: &str = "0.1.0";

/// Codes drawn into the scatter plot are capped at this count; beyond it
/// only the codes actually used by samples are drawn.
const SVG_CODE_CAP: u128 = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetShape {
    TwoCircles { centers: [[f64; 2]; 2], radius: f64 },
    Ring { center: [f64; 2], inner: f64, outer: f64 },
    PointsFile { file: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_holdout: usize,
    pub shape: DatasetShape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub a: f64,
    pub b: f64,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub hidden_activation: String,
}

/// Training knobs; the shuffle seed derives from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sparsity_weight: f64,
    pub pattern_penalty_weight: f64,
    pub ste_band: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Headline reconstruction bound `U`.
    pub u: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub p0: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertConfig {
    pub base_points: usize,
    pub perturbs_per_point: usize,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_safety() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssenceConfig {
    /// Lattice resolution as a fraction of `u`; must not exceed 1/4.
    #[serde(default = "default_grid_res_factor")]
    pub grid_res_factor: f64,
}

fn default_grid_res_factor() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainParams,
    pub analysis: AnalysisConfig,
    pub certification: CertConfig,
    pub essence: EssenceConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParams(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn spectrum_params(&self) -> Result<SpectrumParams> {
        SpectrumParams::new(self.model.a, self.model.b, self.model.k)
    }

    pub fn validate(&self) -> Result<()> {
        self.spectrum_params()?;
        Activation::from_str(&self.model.hidden_activation)?;
        if !(self.analysis.u > 0.0) {
            return Err(Error::InvalidParams("analysis.u must be positive".into()));
        }
        if self.dataset.n_train == 0 || self.dataset.n_holdout == 0 {
            return Err(Error::InvalidParams(
                "dataset sample counts must be positive".into(),
            ));
        }
        if !(0.0 < self.essence.grid_res_factor && self.essence.grid_res_factor <= 0.25) {
            return Err(Error::InvalidParams(
                "essence.grid_res_factor must lie in (0, 1/4]".into(),
            ));
        }
        if !(0.0 < self.certification.safety && self.certification.safety <= 1.0) {
            return Err(Error::InvalidParams(
                "certification.safety must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// The two-circle demo study with desk-scale settings.
    pub fn two_circles_demo() -> Self {
        Self {
            seed: 7,
            dataset: DatasetConfig {
                n_train: 2000,
                n_holdout: 1000,
                shape: DatasetShape::TwoCircles {
                    centers: [[2.0, 2.0], [5.0, 2.0]],
                    radius: 1.2,
                },
            },
            model: ModelConfig {
                k: 6,
                a: 0.2,
                b: 1.0,
                encoder_hidden: vec![32],
                decoder_hidden: vec![32],
                hidden_activation: "tanh".into(),
            },
            train: TrainParams {
                epochs: 600,
                batch_size: 32,
                learning_rate: 0.02,
                sparsity_weight: 0.3,
                pattern_penalty_weight: 0.1,
                ste_band: 0.1,
            },
            analysis: AnalysisConfig {
                u: 1.0,
                gamma1: 1000.0,
                gamma2: 2.0,
                p0: 0.99,
                bins: 64,
            },
            certification: CertConfig {
                base_points: 48,
                perturbs_per_point: 12,
                safety: 0.9,
            },
            essence: EssenceConfig {
                grid_res_factor: 0.25,
            },
        }
    }
}

/// All per-stage seeds derive from the run seed by fixed offsets, so
/// subcommands can reproduce any stage of a full run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub train_data: u64,
    pub holdout_data: u64,
    pub model_init: u64,
    pub train_shuffle: u64,
    pub certification: u64,
    pub essence: u64,
}

impl DerivedSeeds {
    pub fn from_run_seed(seed: u64) -> Self {
        Self {
            train_data: seed,
            holdout_data: seed.wrapping_add(1),
            model_init: seed.wrapping_add(2),
            train_shuffle: seed.wrapping_add(3),
            certification: seed.wrapping_add(4),
            essence: seed.wrapping_add(5),
        }
    }
}

pub fn support_of(shape: &DatasetShape, base_dir: &Path) -> Result<BoundedSupport> {
    match shape {
        DatasetShape::TwoCircles { centers, radius } => {
            BoundedSupport::two_disks(*centers, *radius)
        }
        DatasetShape::Ring {
            center,
            inner,
            outer,
        } => BoundedSupport::ring(*center, *inner, *outer),
        DatasetShape::PointsFile { file } => {
            let path = base_dir.join(file);
            BoundedSupport::point_cloud(io::read_points_csv(&path)?)
        }
    }
}

/// Draws a dataset from a support. Point-file supports hand out their points
/// in file order; generated shapes sample uniformly with the given seed.
pub fn gen_data(support: &BoundedSupport, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    support.sample_n(n, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternCount {
    pub pattern: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusSummary {
    pub n: u64,
    pub m: usize,
    pub patterns: Vec<PatternCount>,
}

impl CensusSummary {
    fn of(census: &PatternCensus) -> Self {
        Self {
            n: census.total(),
            m: census.distinct(),
            patterns: census
                .counts()
                .iter()
                .map(|(p, &count)| PatternCount {
                    pattern: p.label(),
                    count,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatSummary {
    pub u: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub p0: f64,
    pub n_samples: u64,
    pub max_recon_error: f64,
    pub mean_recon_error: f64,
    pub delta: f64,
    pub n0: u64,
    pub condition_i: bool,
    pub condition_ii: bool,
    pub compatible: bool,
}

impl CompatSummary {
    fn of(report: &CompatibilityReport) -> Self {
        let mean = report.per_sample_errors.iter().sum::<f64>()
            / report.per_sample_errors.len() as f64;
        Self {
            u: report.params.u,
            gamma1: report.params.gamma1,
            gamma2: report.params.gamma2,
            p0: report.params.p0,
            n_samples: report.n_samples,
            max_recon_error: report.max_recon_error,
            mean_recon_error: mean,
            delta: report.dominant.delta(),
            n0: report.dominant.n0,
            condition_i: report.condition_i,
            condition_ii: report.condition_ii,
            compatible: report.compatible,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternComplexitySummary {
    pub pattern: String,
    pub observed: u64,
    pub alphas: Vec<f64>,
    pub grid_counts: Vec<u64>,
    pub complexity: Complexity,
    pub certificate_checks: u64,
    pub certificate_violations: u64,
    pub max_observed_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DlSummary {
    pub u: f64,
    pub cert_u: f64,
    pub regular: bool,
    pub total: Complexity,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bits: Option<f64>,
    pub per_pattern: Vec<PatternComplexitySummary>,
}

impl DlSummary {
    fn of(dl: &DescriptionLengthReport) -> Self {
        Self {
            u: dl.u,
            cert_u: dl.cert_u,
            regular: dl.regular,
            total: dl.total,
            bits: dl.bits,
            per_pattern: dl
                .entries
                .iter()
                .map(|e| match &e.certification {
                    Some(c) => PatternComplexitySummary {
                        pattern: e.pattern.label(),
                        observed: e.observed,
                        alphas: c.grid.alphas().to_vec(),
                        grid_counts: c.grid.counts().to_vec(),
                        complexity: Complexity::Finite(c.complexity()),
                        certificate_checks: c.certificate.checks,
                        certificate_violations: c.certificate.violations,
                        max_observed_deviation: c.certificate.max_observed_deviation,
                    },
                    None => PatternComplexitySummary {
                        pattern: e.pattern.label(),
                        observed: e.observed,
                        alphas: Vec::new(),
                        grid_counts: Vec::new(),
                        complexity: Complexity::Infinite,
                        certificate_checks: 0,
                        certificate_violations: 0,
                        max_observed_deviation: f64::NAN,
                    },
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubQuantSummary {
    pub u: f64,
    pub n: u64,
    pub successes: u64,
    pub unseen_pattern_failures: u64,
    pub fraction: f64,
    /// Fraction with un-quantized error within `u/2`; the quantized fraction
    /// can only be at least this large when the transfer holds.
    pub baseline_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssenceSummary {
    pub u: f64,
    pub grid_res: f64,
    pub lower: u64,
    pub upper: u64,
    pub grid_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub total_set: String,
    pub total_used: u64,
    pub residual: String,
    pub redundancy_vs_lower: String,
    pub redundancy_vs_upper: String,
}

impl UsageSummary {
    fn of(ua: &UsageAccounting) -> Self {
        Self {
            total_set: ua.total_set.to_string(),
            total_used: ua.total_used,
            residual: ua.residual.to_string(),
            redundancy_vs_lower: ua.redundancy_vs_lower.to_string(),
            redundancy_vs_upper: ua.redundancy_vs_upper.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySummary {
    pub threshold: f64,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoSummary {
    pub bins: usize,
    pub total: f64,
    pub per_dim: Vec<DimInfo>,
    pub clamped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Summary {
    /// The check is meaningful only for models passing the holdout gate.
    pub gated_on_holdout_compatibility: bool,
    #[serde(flatten)]
    pub check: Theorem1Check,
}

/// Every reported number of a run. Two runs from the same config produce
/// manifests identical up to the timing table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config: RunConfig,
    pub seeds: DerivedSeeds,
    pub census: CensusSummary,
    pub dominant: DominantRatioReport,
    pub compatibility_train: CompatSummary,
    pub compatibility_holdout: CompatSummary,
    pub description_length: DlSummary,
    pub sub_quantization: SubQuantSummary,
    pub essence: EssenceSummary,
    pub usage: UsageSummary,
    pub theorem1: Theorem1Summary,
    pub theorem2: Theorem2Score,
    pub boundary: BoundarySummary,
    pub info: InfoSummary,
    /// sha256 of every emitted file, keyed by file name.
    pub files: BTreeMap<String, String>,
    /// Wall-clock seconds per stage; excluded from determinism comparisons.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    /// Copy with the timing table cleared, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        out.timings.clear();
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParams(format!("manifest: {e}")))
    }

    /// Exit code contract: 0 ok, 2 incompatible, 3 certification failed.
    pub fn exit_code(&self) -> i32 {
        if !self.description_length.regular {
            3
        } else if !self.compatibility_train.compatible
            || !self.compatibility_holdout.compatible
        {
            2
        } else {
            0
        }
    }
}

/// Full in-memory results of a run, for callers that need more than the
/// manifest numbers.
pub struct PipelineOutput {
    pub manifest: RunManifest,
    pub model: SpectrumVae,
    pub train_data: Vec<Vec<f64>>,
    pub holdout_data: Vec<Vec<f64>>,
    pub compat_train: CompatibilityReport,
    pub compat_holdout: CompatibilityReport,
    pub dl: DescriptionLengthReport,
    pub subquant: SubQuantReport,
    pub essence: EssenceBounds,
    pub usage: UsageAccounting,
    pub theorem1: Theorem1Check,
    pub theorem2: Theorem2Score,
    pub boundary: BoundaryReport,
    pub info: MutualInformationReport,
}

struct StageClock {
    timings: BTreeMap<String, f64>,
}

impl StageClock {
    fn new() -> Self {
        Self {
            timings: BTreeMap::new(),
        }
    }

    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(name));
        self.timings
            .insert(name.to_string(), start.elapsed().as_secs_f64());
        out
    }
}

/// Runs the whole study and writes every artifact into `out_dir`.
pub fn run_pipeline(config: &RunConfig, out_dir: &Path) -> Result<PipelineOutput> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let seeds = DerivedSeeds::from_run_seed(config.seed);
    let params = config.spectrum_params()?;
    let hidden = Activation::from_str(&config.model.hidden_activation)?;
    let u = config.analysis.u;
    let mut clock = StageClock::new();

    // data
    let support = support_of(&config.dataset.shape, out_dir)?;
    let (train_data, holdout_data) = clock.run("gen-data", || {
        if let DatasetShape::PointsFile { .. } = config.dataset.shape {
            // file points are split in order: train first, holdout after
            let all = match support.shape() {
                crate::support::SupportShape::Points { points } => points.clone(),
                _ => unreachable!("points-file support is a point cloud"),
            };
            let need = config.dataset.n_train + config.dataset.n_holdout;
            if all.len() < need {
                return Err(Error::InvalidParams(format!(
                    "point file has {} rows, need {need}",
                    all.len()
                )));
            }
            let train = all[..config.dataset.n_train].to_vec();
            let holdout =
                all[config.dataset.n_train..config.dataset.n_train + config.dataset.n_holdout]
                    .to_vec();
            Ok((train, holdout))
        } else {
            Ok((
                gen_data(&support, config.dataset.n_train, seeds.train_data)?,
                gen_data(&support, config.dataset.n_holdout, seeds.holdout_data)?,
            ))
        }
    })?;
    for x in train_data.iter().chain(&holdout_data) {
        if !support.contains(x) {
            return Err(Error::InvalidParams(
                "generated sample escaped the declared support".into(),
            ));
        }
    }

    // model
    let dim = support.dim();
    let trained = clock.run("train", || {
        let init = SpectrumVae::seeded(
            params,
            dim,
            &config.model.encoder_hidden,
            &config.model.decoder_hidden,
            hidden,
            seeds.model_init,
        )?;
        let cfg = TrainConfig {
            seed: seeds.train_shuffle,
            epochs: config.train.epochs,
            batch_size: config.train.batch_size,
            learning_rate: config.train.learning_rate,
            sparsity_weight: config.train.sparsity_weight,
            pattern_penalty_weight: config.train.pattern_penalty_weight,
            ste_band: config.train.ste_band,
        };
        train(&init, &train_data, &cfg)
    })?;

    // census and dominant ratio on the training spectra
    let (train_spectra, train_census, dominant) = clock.run("census", || {
        let spectra = train_data
            .iter()
            .map(|x| trained.encode(x))
            .collect::<Result<Vec<Spectrum>>>()?;
        let c = census(&spectra)?;
        let d = dominant_ratio(&c, config.analysis.p0)?;
        Ok((spectra, c, d))
    })?;

    // compatibility at u/2 on both sample sets
    let compat_params = CompatibilityParams {
        u: u / 2.0,
        gamma1: config.analysis.gamma1,
        gamma2: config.analysis.gamma2,
        p0: config.analysis.p0,
    };
    let compat_train = clock.run("compatibility-train", || {
        check_compatibility(&trained, &train_data, &compat_params)
    })?;
    let compat_holdout = clock.run("compatibility-holdout", || {
        check_compatibility(&trained, &holdout_data, &compat_params)
    })?;

    // certified complexities at u/2
    let budget = CertBudget {
        base_points: config.certification.base_points,
        perturbs_per_point: config.certification.perturbs_per_point,
        seed: seeds.certification,
        safety: config.certification.safety,
    };
    let dl = clock.run("description-length", || {
        description_length_of_census(&trained, &train_census, u, &budget)
    })?;

    let subquant = clock.run("sub-quantization", || {
        if dl.regular {
            sub_quantization_check(&trained, &holdout_data, u, &dl)
        } else {
            // no certified grids; report every sample as failed-closed
            Ok(SubQuantReport {
                u,
                n: holdout_data.len() as u64,
                successes: 0,
                unseen_pattern_failures: holdout_data.len() as u64,
                fraction: 0.0,
                samples: Vec::new(),
            })
        }
    })?;

    let essence = clock.run("essence", || {
        essence_bounds(
            &support,
            u,
            u * config.essence.grid_res_factor,
            seeds.essence,
        )
    })?;

    let usage = clock.run("usage", || {
        if dl.regular {
            used_codes(&trained, &train_data, &dl, &essence)
        } else {
            Ok(UsageAccounting {
                per_pattern: Vec::new(),
                total_set: 0,
                total_used: 0,
                residual: 0,
                redundancy_vs_lower: -(essence.lower as i128),
                redundancy_vs_upper: -(essence.upper as i128),
                used_codes: Vec::new(),
            })
        }
    })?;

    let theorem1 = clock.run("theorem1", || {
        if dl.regular {
            theorem1_check(&dl, &essence)
        } else {
            Ok(Theorem1Check {
                bits: f64::INFINITY,
                essence_lower: essence.lower,
                essence_lower_bits: (essence.lower.max(1) as f64).log2(),
                holds: true,
                margin_bits: f64::INFINITY,
            })
        }
    })?;
    let theorem2 = theorem2_score(&usage);

    let boundary = clock.run("boundary", || on_boundary_pairs(&trained, &essence, u))?;

    let (info, holdout_recons) = clock.run("info", || {
        let recons = holdout_data
            .iter()
            .map(|x| trained.reconstruct(x))
            .collect::<Result<Vec<_>>>()?;
        let bounds: Vec<(f64, f64)> = support
            .lower()
            .iter()
            .zip(support.upper())
            .map(|(&l, &h)| (l, h))
            .collect();
        let report = mutual_information(&holdout_data, &recons, &bounds, config.analysis.bins)?;
        Ok((report, recons))
    })?;

    // artifact emission
    let mut files = BTreeMap::new();
    if let DatasetShape::PointsFile { file } = &config.dataset.shape {
        files.insert(
            format!("input:{file}"),
            io::file_digest(&out_dir.join(file))?,
        );
    }
    clock.run("emit", || {
        emit_artifacts(
            out_dir,
            config,
            &trained,
            &train_data,
            &holdout_data,
            &train_spectra,
            &train_census,
            &compat_train,
            &compat_holdout,
            &dl,
            &subquant,
            &essence,
            &usage,
            &boundary,
            &info,
            &holdout_recons,
            &mut files,
        )
    })?;

    let baseline_fraction = if subquant.samples.is_empty() {
        0.0
    } else {
        subquant
            .samples
            .iter()
            .filter(|s| s.unquantized_error <= u / 2.0 && s.pattern_seen)
            .count() as f64
            / subquant.n as f64
    };

    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config: config.clone(),
        seeds,
        census: CensusSummary::of(&train_census),
        dominant: dominant.clone(),
        compatibility_train: CompatSummary::of(&compat_train),
        compatibility_holdout: CompatSummary::of(&compat_holdout),
        description_length: DlSummary::of(&dl),
        sub_quantization: SubQuantSummary {
            u,
            n: subquant.n,
            successes: subquant.successes,
            unseen_pattern_failures: subquant.unseen_pattern_failures,
            fraction: subquant.fraction,
            baseline_fraction,
        },
        essence: EssenceSummary {
            u: essence.u,
            grid_res: essence.grid_res,
            lower: essence.lower,
            upper: essence.upper,
            grid_count: essence.grid_count,
        },
        usage: UsageSummary::of(&usage),
        theorem1: Theorem1Summary {
            gated_on_holdout_compatibility: compat_holdout.compatible,
            check: theorem1.clone(),
        },
        theorem2: theorem2.clone(),
        boundary: BoundarySummary {
            threshold: boundary.threshold,
            count: boundary.count,
        },
        info: InfoSummary {
            bins: info.bins,
            total: info.total,
            per_dim: info.per_dim.clone(),
            clamped: info.clamped,
        },
        files,
        timings: clock.timings.clone(),
    };
    std::fs::write(out_dir.join("manifest.toml"), manifest.to_toml())?;

    Ok(PipelineOutput {
        manifest,
        model: trained,
        train_data,
        holdout_data,
        compat_train,
        compat_holdout,
        dl,
        subquant,
        essence,
        usage,
        theorem1,
        theorem2,
        boundary,
        info,
    })
}

#[allow(clippy::too_many_arguments)]
fn emit_artifacts(
    out_dir: &Path,
    config: &RunConfig,
    model: &SpectrumVae,
    train_data: &[Vec<f64>],
    holdout_data: &[Vec<f64>],
    train_spectra: &[Spectrum],
    train_census: &PatternCensus,
    compat_train: &CompatibilityReport,
    compat_holdout: &CompatibilityReport,
    dl: &DescriptionLengthReport,
    subquant: &SubQuantReport,
    essence: &EssenceBounds,
    usage: &UsageAccounting,
    boundary: &BoundaryReport,
    info: &MutualInformationReport,
    holdout_recons: &[Vec<f64>],
    files: &mut BTreeMap<String, String>,
) -> Result<()> {
    let mut track = |name: &str| -> Result<()> {
        files.insert(name.to_string(), io::file_digest(&out_dir.join(name))?);
        Ok(())
    };

    io::write_points_csv(&out_dir.join("points_train.csv"), train_data)?;
    track("points_train.csv")?;
    io::write_points_csv(&out_dir.join("points_holdout.csv"), holdout_data)?;
    track("points_holdout.csv")?;
    io::write_points_csv(&out_dir.join("reconstructions_holdout.csv"), holdout_recons)?;
    track("reconstructions_holdout.csv")?;
    io::save_model(model, &out_dir.join("model.txt"))?;
    track("model.txt")?;
    io::write_spectra_csv(&out_dir.join("spectra_train.csv"), train_spectra)?;
    track("spectra_train.csv")?;

    let census_rows: Vec<Vec<String>> = train_census
        .counts()
        .iter()
        .map(|(p, &c)| vec![p.label(), c.to_string()])
        .collect();
    io::write_table_csv(&out_dir.join("census.csv"), &["pattern", "count"], &census_rows)?;
    track("census.csv")?;

    for (name, report) in [
        ("errors_train.csv", compat_train),
        ("errors_holdout.csv", compat_holdout),
    ] {
        let rows: Vec<Vec<String>> = report
            .per_sample_errors
            .iter()
            .enumerate()
            .map(|(i, e)| vec![i.to_string(), e.to_string()])
            .collect();
        io::write_table_csv(&out_dir.join(name), &["index", "error"], &rows)?;
        track(name)?;
    }

    let cert_rows: Vec<Vec<String>> = dl
        .entries
        .iter()
        .map(|e| match &e.certification {
            Some(c) => vec![
                e.pattern.label(),
                e.observed.to_string(),
                join_floats(c.grid.alphas()),
                join_ints(c.grid.counts()),
                c.complexity().to_string(),
                c.certificate.checks.to_string(),
                c.certificate.violations.to_string(),
                c.certificate.max_observed_deviation.to_string(),
                c.certificate.seed.to_string(),
            ],
            None => vec![
                e.pattern.label(),
                e.observed.to_string(),
                String::new(),
                String::new(),
                "inf".to_string(),
                "0".to_string(),
                "0".to_string(),
                String::new(),
                String::new(),
            ],
        })
        .collect();
    io::write_table_csv(
        &out_dir.join("certificates.csv"),
        &[
            "pattern",
            "observed",
            "alphas",
            "q_vector",
            "complexity",
            "checks",
            "violations",
            "max_observed_deviation",
            "seed",
        ],
        &cert_rows,
    )?;
    track("certificates.csv")?;

    // full certificate fields as a structured report document
    #[derive(Serialize)]
    struct CertificateDoc<'a> {
        artifact_version: &'a str,
        certificates: Vec<&'a crate::robustness::Certificate>,
    }
    let doc = CertificateDoc {
        artifact_version: ARTIFACT_VERSION,
        certificates: dl
            .entries
            .iter()
            .filter_map(|e| e.certification.as_ref().map(|c| &c.certificate))
            .collect(),
    };
    std::fs::write(
        out_dir.join("certificates.toml"),
        toml::to_string_pretty(&doc)
            .map_err(|e| Error::InvalidParams(format!("certificate report: {e}")))?,
    )?;
    track("certificates.toml")?;

    let sq_rows: Vec<Vec<String>> = subquant
        .samples
        .iter()
        .map(|s| {
            vec![
                s.index.to_string(),
                s.pattern.label(),
                s.pattern_seen.to_string(),
                s.unquantized_error.to_string(),
                s.quantized_error.map(|e| e.to_string()).unwrap_or_default(),
                s.ok.to_string(),
            ]
        })
        .collect();
    io::write_table_csv(
        &out_dir.join("subquant.csv"),
        &[
            "index",
            "pattern",
            "pattern_seen",
            "unquantized_error",
            "quantized_error",
            "ok",
        ],
        &sq_rows,
    )?;
    track("subquant.csv")?;

    io::write_points_csv(&out_dir.join("essence_cover.csv"), &essence.cover_points)?;
    track("essence_cover.csv")?;

    let usage_rows: Vec<Vec<String>> = usage
        .used_codes
        .iter()
        .map(|c| {
            vec![
                c.pattern.label(),
                join_ints(&c.indices),
                join_floats(&c.decoded),
                c.hits.to_string(),
            ]
        })
        .collect();
    io::write_table_csv(
        &out_dir.join("used_codes.csv"),
        &["pattern", "indices", "decoded", "hits"],
        &usage_rows,
    )?;
    track("used_codes.csv")?;

    let boundary_rows: Vec<Vec<String>> = boundary
        .pairs
        .iter()
        .map(|p| {
            vec![
                join_floats(&p.point_i),
                join_floats(&p.point_j),
                p.pattern_i.label(),
                p.pattern_j.label(),
                p.distance.to_string(),
            ]
        })
        .collect();
    io::write_table_csv(
        &out_dir.join("boundary_pairs.csv"),
        &["point_i", "point_j", "pattern_i", "pattern_j", "distance"],
        &boundary_rows,
    )?;
    track("boundary_pairs.csv")?;

    let info_rows: Vec<Vec<String>> = info
        .per_dim
        .iter()
        .enumerate()
        .map(|(d, i)| {
            vec![
                (d + 1).to_string(),
                i.entropy_orig.to_string(),
                i.entropy_recon.to_string(),
                i.mutual_information.to_string(),
            ]
        })
        .collect();
    io::write_table_csv(
        &out_dir.join("info.csv"),
        &["dim", "entropy_orig", "entropy_recon", "mutual_information"],
        &info_rows,
    )?;
    track("info.csv")?;

    let svg = scatter_svg(config, model, train_data, dl, usage);
    std::fs::write(out_dir.join("scatter.svg"), svg)?;
    track("scatter.svg")?;

    Ok(())
}

fn join_floats(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("|")
}

fn join_ints(vals: &[u64]) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("|")
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#4b0082", "#a0522d",
];

/// Scatter of the training data (gray dots) under the decoded grid codes
/// (squares colored per pattern). Only the first two data dimensions are
/// drawn.
fn scatter_svg(
    _config: &RunConfig,
    model: &SpectrumVae,
    data: &[Vec<f64>],
    dl: &DescriptionLengthReport,
    usage: &UsageAccounting,
) -> String {
    use std::fmt::Write as _;

    let total_codes = match dl.total {
        Complexity::Finite(n) => n,
        Complexity::Infinite => u128::MAX,
    };
    // decoded codes per pattern: everything when small, used codes otherwise
    let mut codes: Vec<(usize, Vec<f64>)> = Vec::new();
    if dl.regular && total_codes <= SVG_CODE_CAP {
        for (pi, entry) in dl.entries.iter().enumerate() {
            if let Some(cert) = &entry.certification {
                let set = RepresentationSet::new(cert.grid.clone());
                for (_, z) in set.iter() {
                    codes.push((pi, model.decoder().forward(z.values()).unwrap()));
                }
            }
        }
    } else {
        let order: Vec<_> = dl.entries.iter().map(|e| e.pattern.clone()).collect();
        for code in &usage.used_codes {
            let pi = order.iter().position(|p| p == &code.pattern).unwrap_or(0);
            codes.push((pi, code.decoded.clone()));
        }
    }

    let xy = |p: &[f64]| -> (f64, f64) {
        let x = p.first().copied().unwrap_or(0.0);
        let y = p.get(1).copied().unwrap_or(0.0);
        (x, y)
    };
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for p in data.iter().map(|p| xy(p)).chain(codes.iter().map(|(_, p)| xy(p))) {
        min_x = min_x.min(p.0);
        max_x = max_x.max(p.0);
        min_y = min_y.min(p.1);
        max_y = max_y.max(p.1);
    }
    if !min_x.is_finite() {
        (min_x, max_x, min_y, max_y) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad_x = (max_x - min_x).max(1e-9) * 0.05;
    let pad_y = (max_y - min_y).max(1e-9) * 0.05;
    min_x -= pad_x;
    max_x += pad_x;
    min_y -= pad_y;
    max_y += pad_y;

    let width = 800.0;
    let height = width * (max_y - min_y) / (max_x - min_x);
    let sx = |x: f64| (x - min_x) / (max_x - min_x) * width;
    let sy = |y: f64| height - (y - min_y) / (max_y - min_y) * height;

    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
    .unwrap();
    for p in data {
        let (x, y) = xy(p);
        writeln!(
            svg,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"1.5\" fill=\"#bbbbbb\"/>",
            sx(x),
            sy(y)
        )
        .unwrap();
    }
    for (pi, p) in &codes {
        let (x, y) = xy(p);
        let color = PALETTE[pi % PALETTE.len()];
        writeln!(
            svg,
            "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"6\" height=\"6\" fill=\"{color}\" \
             fill-opacity=\"0.9\"/>",
            sx(x) - 3.0,
            sy(y) - 3.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config() -> RunConfig {
        let mut cfg = RunConfig::two_circles_demo();
        cfg.dataset.n_train = 200;
        cfg.dataset.n_holdout = 80;
        cfg.model.k = 4;
        cfg.model.encoder_hidden = vec![12];
        cfg.model.decoder_hidden = vec![12];
        cfg.train.epochs = 5;
        cfg.analysis.u = 3.0;
        cfg.analysis.gamma1 = 50.0;
        cfg.analysis.gamma2 = 1.0;
        cfg.certification.base_points = 12;
        cfg.certification.perturbs_per_point = 4;
        cfg
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig::two_circles_demo();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut cfg = RunConfig::two_circles_demo();
        cfg.analysis.u = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::two_circles_demo();
        cfg.model.a = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::two_circles_demo();
        cfg.essence.grid_res_factor = 0.3;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::two_circles_demo();
        cfg.model.hidden_activation = "step".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn smoke_pipeline_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let start = std::time::Instant::now();
        let out = run_pipeline(&smoke_config(), dir.path()).unwrap();
        assert!(
            start.elapsed().as_secs_f64() < 60.0,
            "smoke run exceeded its one-minute budget"
        );
        for name in [
            "points_train.csv",
            "points_holdout.csv",
            "model.txt",
            "spectra_train.csv",
            "census.csv",
            "errors_train.csv",
            "errors_holdout.csv",
            "certificates.csv",
            "certificates.toml",
            "subquant.csv",
            "essence_cover.csv",
            "used_codes.csv",
            "boundary_pairs.csv",
            "info.csv",
            "reconstructions_holdout.csv",
            "scatter.svg",
        ] {
            assert!(dir.path().join(name).exists(), "missing {name}");
            assert!(out.manifest.files.contains_key(name), "untracked {name}");
        }
        assert!(dir.path().join("manifest.toml").exists());
        // manifest parses back
        let text = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        let back = RunManifest::from_toml(&text).unwrap();
        assert_eq!(back.without_timings(), out.manifest.without_timings());
    }

    #[test]
    fn pipeline_is_deterministic_up_to_timings() {
        let cfg = smoke_config();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run_pipeline(&cfg, d1.path()).unwrap();
        let b = run_pipeline(&cfg, d2.path()).unwrap();
        assert_eq!(
            a.manifest.without_timings(),
            b.manifest.without_timings()
        );
    }

    #[test]
    fn unreachable_gamma1_reports_incompatible_exit() {
        let mut cfg = smoke_config();
        cfg.analysis.gamma1 = 10_000.0;
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(&cfg, dir.path()).unwrap();
        assert!(!out.manifest.compatibility_train.compatible);
        assert_eq!(out.manifest.exit_code(), 2);
    }
}
