//! Command-line front end: dataset generation, training, census,
//! certification, description-length analysis, essence bounds, boundary
//! pairs, information diagnostics, and the full pipeline.
//!
//! Exit codes: 0 success, 2 no compatible model, 3 certification failed,
//! 4 configuration error.

use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use spectrum_mdl::error::Error;
use spectrum_mdl::essence::{essence_bounds, on_boundary_pairs, EssenceBounds};
use spectrum_mdl::info_metrics::mutual_information;
use spectrum_mdl::io;
use spectrum_mdl::mdl::{
    check_compatibility, description_length, select_best, sub_quantization_check,
    CompatibilityParams,
};
use spectrum_mdl::model::{train, Codec, SpectrumVae, TrainConfig};
use spectrum_mdl::pattern_stats::{census, dominant_ratio};
use spectrum_mdl::pipeline::{
    gen_data, run_pipeline, support_of, DatasetShape, DerivedSeeds, RunConfig,
};
use spectrum_mdl::robustness::CertBudget;
use spectrum_mdl::spectrum::Spectrum;

/// Output root when neither `--out` nor the environment variable is given.
const OUT_ENV: &str = "SPECTRUM_MDL_OUT";

const EXIT_INCOMPATIBLE: u8 = 2;
const EXIT_CERTIFICATION: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "spectrum-mdl", version, about = "Spectrum-coded autoencoder studies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ShapeArgs {
    /// Dataset shape: two-circles | ring | points-file
    #[arg(long, default_value = "two-circles")]
    spec: String,
    /// Disk centers as x1,y1,x2,y2 (two-circles)
    #[arg(long, default_value = "2,2,5,2")]
    centers: String,
    /// Disk radius (two-circles)
    #[arg(long, default_value_t = 1.2)]
    radius: f64,
    /// Ring center as x,y
    #[arg(long, default_value = "0,0")]
    center: String,
    /// Ring inner radius
    #[arg(long, default_value_t = 1.0)]
    inner: f64,
    /// Ring outer radius
    #[arg(long, default_value_t = 2.0)]
    outer: f64,
    /// Point file (points-file)
    #[arg(long)]
    file: Option<PathBuf>,
}

impl ShapeArgs {
    fn to_shape(&self) -> anyhow::Result<DatasetShape> {
        match self.spec.as_str() {
            "two-circles" => {
                let v = parse_list(&self.centers, 4)?;
                Ok(DatasetShape::TwoCircles {
                    centers: [[v[0], v[1]], [v[2], v[3]]],
                    radius: self.radius,
                })
            }
            "ring" => {
                let c = parse_list(&self.center, 2)?;
                Ok(DatasetShape::Ring {
                    center: [c[0], c[1]],
                    inner: self.inner,
                    outer: self.outer,
                })
            }
            "points-file" => {
                let file = self
                    .file
                    .as_ref()
                    .ok_or_else(|| anyhow::anyhow!("--file is required for points-file"))?;
                Ok(DatasetShape::PointsFile {
                    file: file.display().to_string(),
                })
            }
            other => anyhow::bail!("unknown dataset spec {other:?}"),
        }
    }
}

#[derive(Args, Clone)]
struct BudgetArgs {
    #[arg(long, default_value_t = 48)]
    base_points: usize,
    #[arg(long, default_value_t = 12)]
    perturbs_per_point: usize,
    /// Search-time tightening factor in (0, 1]
    #[arg(long, default_value_t = 1.0)]
    safety: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl BudgetArgs {
    fn to_budget(&self) -> CertBudget {
        CertBudget {
            base_points: self.base_points,
            perturbs_per_point: self.perturbs_per_point,
            safety: self.safety,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a dataset and write a point CSV
    GenData {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a point file using the config's model/train tables
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Weight-initialization seed
        #[arg(long)]
        init_seed: u64,
        /// Batch-shuffle seed
        #[arg(long)]
        shuffle_seed: u64,
    },
    /// Pattern census and dominant ratio of a model on a point file
    Census {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        p0: f64,
        /// Census CSV output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify every observed pattern at u/2 and report grids and complexities
    Certify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Headline bound U; grids certify at U/2
        #[arg(long)]
        u: f64,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compatibility + description length for one or more candidate models;
    /// exits 2 when no candidate is compatible
    Mdl {
        /// Candidate model files (repeatable)
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: Option<PathBuf>,
        /// Headline bound U; the gate runs at U/2
        #[arg(long)]
        u: f64,
        #[arg(long)]
        gamma1: f64,
        #[arg(long)]
        gamma2: f64,
        #[arg(long, default_value_t = 0.99)]
        p0: f64,
        #[command(flatten)]
        budget: BudgetArgs,
        /// TOML report output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Covering/packing interval of a support
    Essence {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long)]
        u: f64,
        #[arg(long, default_value_t = 0.25)]
        grid_res_factor: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cover-point CSV output
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// On-boundary pairs of a model over an essence cover
    Boundary {
        #[arg(long)]
        model: PathBuf,
        /// Cover points CSV (from `essence`)
        #[arg(long)]
        cover: PathBuf,
        #[arg(long)]
        u: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Discrete entropy / mutual information between paired point files
    Info {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// Per-dimension lower bounds, comma separated (defaults to the
        /// envelope of the original data)
        #[arg(long)]
        lo: Option<String>,
        #[arg(long)]
        hi: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full study pipeline from a config file
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $SPECTRUM_MDL_OUT or ./run-out)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_list(text: &str, expected: usize) -> anyhow::Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow::anyhow!("bad number list {text:?}"))?;
    anyhow::ensure!(
        vals.len() == expected,
        "expected {expected} numbers, got {} in {text:?}",
        vals.len()
    );
    Ok(vals)
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("run-out"))
}

fn load_points(path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    Ok(io::read_points_csv(path)?)
}

fn encode_all(model: &SpectrumVae, data: &[Vec<f64>]) -> anyhow::Result<Vec<Spectrum>> {
    Ok(data
        .iter()
        .map(|x| model.encode(x))
        .collect::<Result<_, _>>()?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            // configuration problems get the dedicated exit code
            let is_config = err
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e, Error::InvalidParams(_) | Error::OutOfRange(_)));
            if is_config {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::GenData {
            shape,
            n,
            seed,
            out,
        } => {
            let support = support_of(&shape.to_shape()?, Path::new("."))?;
            let points = gen_data(&support, n, seed)?;
            io::write_points_csv(&out, &points)?;
            println!("wrote {n} points to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train {
            config,
            data,
            out,
            init_seed,
            shuffle_seed,
        } => {
            let cfg = RunConfig::load(&config)?;
            cfg.validate()?;
            let points = load_points(&data)?;
            let params = cfg.spectrum_params()?;
            let hidden = cfg.model.hidden_activation.parse()?;
            let init = SpectrumVae::seeded(
                params,
                points[0].len(),
                &cfg.model.encoder_hidden,
                &cfg.model.decoder_hidden,
                hidden,
                init_seed,
            )?;
            let tc = TrainConfig {
                seed: shuffle_seed,
                epochs: cfg.train.epochs,
                batch_size: cfg.train.batch_size,
                learning_rate: cfg.train.learning_rate,
                sparsity_weight: cfg.train.sparsity_weight,
                pattern_penalty_weight: cfg.train.pattern_penalty_weight,
                ste_band: cfg.train.ste_band,
            };
            let trained = train(&init, &points, &tc)?;
            io::save_model(&trained, &out)?;
            println!("trained on {} samples, model at {}", points.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Census {
            model,
            data,
            p0,
            out,
        } => {
            let model = io::load_model(&model)?;
            let points = load_points(&data)?;
            let spectra = encode_all(&model, &points)?;
            let c = census(&spectra)?;
            let ratio = dominant_ratio(&c, p0)?;
            println!(
                "n={} m={} n0={} delta={}",
                c.total(),
                c.distinct(),
                ratio.n0,
                ratio.delta()
            );
            for (pattern, count) in c.counts() {
                println!("{} {}", pattern.label(), count);
            }
            if let Some(path) = out {
                let rows: Vec<Vec<String>> = c
                    .counts()
                    .iter()
                    .map(|(p, &n)| vec![p.label(), n.to_string()])
                    .collect();
                io::write_table_csv(&path, &["pattern", "count"], &rows)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Certify {
            model,
            data,
            u,
            budget,
            out,
        } => {
            let model = io::load_model(&model)?;
            let points = load_points(&data)?;
            let dl = description_length(&model, &points, u, &budget.to_budget())?;
            for e in &dl.entries {
                println!("{} complexity {}", e.pattern.label(), e.complexity());
            }
            println!(
                "total {} bits {}",
                dl.total,
                dl.bits.map(|b| b.to_string()).unwrap_or_else(|| "inf".into())
            );
            if let Some(path) = out {
                write_certificates_csv(&path, &dl)?;
            }
            if dl.regular {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(EXIT_CERTIFICATION))
            }
        }
        Cmd::Mdl {
            models,
            data,
            holdout,
            u,
            gamma1,
            gamma2,
            p0,
            budget,
            out,
        } => {
            let points = load_points(&data)?;
            let holdout_points = holdout.map(|p| load_points(&p)).transpose()?;
            let gate = CompatibilityParams {
                u: u / 2.0,
                gamma1,
                gamma2,
                p0,
            };
            let mut candidates = Vec::new();
            let mut lines = Vec::new();
            for (i, path) in models.iter().enumerate() {
                let model = io::load_model(path)?;
                let compat = check_compatibility(&model, &points, &gate)?;
                let dl = description_length(&model, &points, u, &budget.to_budget())?;
                let subquant = match (&holdout_points, dl.regular) {
                    (Some(h), true) => Some(sub_quantization_check(&model, h, u, &dl)?),
                    _ => None,
                };
                lines.push(format!(
                    "candidate {i} {}: compatible={} bits={} subquant_fraction={}",
                    path.display(),
                    compat.compatible,
                    dl.bits.map(|b| b.to_string()).unwrap_or_else(|| "inf".into()),
                    subquant
                        .as_ref()
                        .map(|s| s.fraction.to_string())
                        .unwrap_or_else(|| "-".into()),
                ));
                candidates.push((compat, dl));
            }
            let best = select_best(&candidates)?;
            for line in &lines {
                println!("{line}");
            }
            if let Some(path) = out {
                let mut doc = BTreeMap::new();
                for (i, (compat, dl)) in candidates.iter().enumerate() {
                    doc.insert(
                        format!("candidate_{i}"),
                        toml::toml! {
                            compatible = (compat.compatible)
                            max_recon_error = (compat.max_recon_error)
                            delta = (compat.dominant.delta())
                            bits = (dl.bits.unwrap_or(f64::INFINITY))
                            regular = (dl.regular)
                        },
                    );
                }
                let mut text = toml::to_string_pretty(&doc)?;
                text.push_str(&format!(
                    "best = {}\n",
                    best.map(|b| b.to_string()).unwrap_or_else(|| "none".into())
                ));
                std::fs::write(path, text)?;
            }
            match best {
                Some(i) => {
                    println!("best candidate: {i}");
                    Ok(ExitCode::SUCCESS)
                }
                None => {
                    println!("no compatible candidate");
                    Ok(ExitCode::from(EXIT_INCOMPATIBLE))
                }
            }
        }
        Cmd::Essence {
            shape,
            u,
            grid_res_factor,
            seed,
            out,
        } => {
            let support = support_of(&shape.to_shape()?, Path::new("."))?;
            let eb = essence_bounds(&support, u, u * grid_res_factor, seed)?;
            println!(
                "lower={} upper={} grid_points={}",
                eb.lower, eb.upper, eb.grid_count
            );
            if let Some(path) = out {
                io::write_points_csv(&path, &eb.cover_points)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Boundary {
            model,
            cover,
            u,
            out,
        } => {
            let model = io::load_model(&model)?;
            let cover_points = load_points(&cover)?;
            let eb = EssenceBounds {
                u,
                grid_res: 0.0,
                lower: 0,
                upper: cover_points.len() as u64,
                grid_count: 0,
                cover_points,
                seed: 0,
            };
            let report = on_boundary_pairs(&model, &eb, u)?;
            println!("pairs={} threshold={}", report.count, report.threshold);
            if let Some(path) = out {
                let rows: Vec<Vec<String>> = report
                    .pairs
                    .iter()
                    .map(|p| {
                        vec![
                            p.i.to_string(),
                            p.j.to_string(),
                            p.pattern_i.label(),
                            p.pattern_j.label(),
                            p.distance.to_string(),
                        ]
                    })
                    .collect();
                io::write_table_csv(
                    &path,
                    &["i", "j", "pattern_i", "pattern_j", "distance"],
                    &rows,
                )?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Info {
            orig,
            recon,
            bins,
            lo,
            hi,
            out,
        } => {
            let a = load_points(&orig)?;
            let b = load_points(&recon)?;
            let dim = a[0].len();
            let lo = match lo {
                Some(t) => parse_list(&t, dim)?,
                None => envelope(&a, f64::min),
            };
            let hi = match hi {
                Some(t) => parse_list(&t, dim)?,
                None => envelope(&a, f64::max),
            };
            let bounds: Vec<(f64, f64)> = lo.into_iter().zip(hi).collect();
            let report = mutual_information(&a, &b, &bounds, bins)?;
            for (d, i) in report.per_dim.iter().enumerate() {
                println!(
                    "dim {} H_orig={} H_recon={} I={}",
                    d + 1,
                    i.entropy_orig,
                    i.entropy_recon,
                    i.mutual_information
                );
            }
            println!("total={}", report.total);
            if let Some(path) = out {
                let rows: Vec<Vec<String>> = report
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
                    &path,
                    &["dim", "entropy_orig", "entropy_recon", "mutual_information"],
                    &rows,
                )?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            let out_dir = out.unwrap_or_else(default_out_dir);
            let output = run_pipeline(&cfg, &out_dir)?;
            let m = &output.manifest;
            println!("manifest: {}", out_dir.join("manifest.toml").display());
            println!(
                "census: n={} m={} delta={}",
                m.census.n, m.census.m, m.dominant.delta()
            );
            println!(
                "compatibility: train={} holdout={}",
                m.compatibility_train.compatible, m.compatibility_holdout.compatible
            );
            println!(
                "description length: total={} bits={}",
                m.description_length.total,
                m.description_length
                    .bits
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "inf".into())
            );
            println!(
                "essence: [{}, {}], theorem1 margin {} bits",
                m.essence.lower, m.essence.upper, m.theorem1.check.margin_bits
            );
            println!(
                "sub-quantization fraction: {}",
                m.sub_quantization.fraction
            );
            let seeds = DerivedSeeds::from_run_seed(cfg.seed);
            println!(
                "seeds: data={} holdout={} init={} shuffle={} cert={} essence={}",
                seeds.train_data,
                seeds.holdout_data,
                seeds.model_init,
                seeds.train_shuffle,
                seeds.certification,
                seeds.essence
            );
            Ok(ExitCode::from(m.exit_code() as u8))
        }
    }
}

fn envelope(points: &[Vec<f64>], pick: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let dim = points[0].len();
    let mut out = points[0].clone();
    for p in points {
        for d in 0..dim {
            out[d] = pick(out[d], p[d]);
        }
    }
    out
}

fn write_certificates_csv(
    path: &Path,
    dl: &spectrum_mdl::mdl::DescriptionLengthReport,
) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = dl
        .entries
        .iter()
        .map(|e| match &e.certification {
            Some(c) => vec![
                e.pattern.label(),
                e.observed.to_string(),
                c.grid
                    .alphas()
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("|"),
                c.grid
                    .counts()
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("|"),
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
        path,
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
        &rows,
    )?;
    Ok(())
}
