//! Command-line front end. Exit codes: 0 ok, 1 domain error, 2 usage error.
//! Log level comes from `DRIVESCENE_LOG` (default `warn`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use drivescene::agents::{extract_agents, AgentConfig};
use drivescene::corpus::{generate_synthetic_corpus, CorpusConfig};
use drivescene::ddpm::{self, BlurDenoiser, Denoiser, OracleDenoiser, Tensor, ZeroDenoiser};
use drivescene::io::{read_raster_any, read_scenario, scenario_to_string, write_raster_any, write_scenario, AgentRecord};
use drivescene::metrics::{evaluate, EvalConfig, GeoTopoScore};
use drivescene::pipeline::roundtrip;
use drivescene::raster::{rasterize, DEFAULT_SIZE, DEFAULT_STROKE};
use drivescene::scenario::{normalize_scenario, DEFAULT_RANGE, DEFAULT_V_MAX};
use drivescene::sim::{future_scenarios, rollout, RolloutConfig};
use drivescene::vectorize::{vectorize_scenario, LaneGraph, VectorizeConfig};

#[derive(Parser)]
#[command(name = "drivescene", version, about = "Driving-scenario rasters, lane graphs, diffusion numerics and rollouts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a scenario file as a feature-map raster (.png or binary).
    Rasterize {
        scenario: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SIZE)]
        size: usize,
        #[arg(long, default_value_t = DEFAULT_STROKE)]
        stroke: usize,
    },
    /// Recover a lane graph and agents from a raster.
    Vectorize {
        raster: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        raster_opts: RasterOpts,
        /// Maximum connector curvature, 1/m.
        #[arg(long, default_value_t = 0.2)]
        k_thresh: f64,
    },
    /// Print the agents decoded from a raster as JSON.
    ExtractAgents {
        raster: PathBuf,
        #[command(flatten)]
        raster_opts: RasterOpts,
    },
    /// Score a predicted scenario's lanes against a ground-truth scenario.
    Eval {
        gt: PathBuf,
        pred: PathBuf,
        #[command(flatten)]
        metric: MetricOpts,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Apply the forward noising process to a raster.
    Noise {
        raster: PathBuf,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = ddpm::DEFAULT_STEPS)]
        steps: usize,
        #[command(flatten)]
        raster_opts: RasterOpts,
    },
    /// Run ancestral sampling with a built-in denoiser.
    Sample {
        #[arg(long, default_value_t = DEFAULT_SIZE)]
        shape: usize,
        #[arg(long, value_enum, default_value_t = DenoiserKind::Blur)]
        denoiser: DenoiserKind,
        /// Clean raster the oracle denoiser reconstructs.
        #[arg(long, required_if_eq("denoiser", "oracle"))]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = ddpm::DEFAULT_STEPS)]
        steps: usize,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        raster_opts: RasterOpts,
    },
    /// Roll out K joint futures and write one scenario file per future.
    Simulate {
        scenario: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Seconds.
        #[arg(long, default_value_t = 8.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        /// Output directory.
        #[arg(short, long, default_value = ".")]
        output: PathBuf,
    },
    /// Rasterize, vectorize and score a scenario in one go.
    Roundtrip {
        scenario: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SIZE)]
        size: usize,
        #[command(flatten)]
        metric: MetricOpts,
        #[arg(long)]
        json: bool,
        /// Also write the vectorized scenario here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a seeded synthetic corpus of scenario files.
    GenCorpus {
        /// TOML corpus config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the config count.
        #[arg(long)]
        count: Option<usize>,
        #[arg(short, long, default_value = "corpus")]
        output: PathBuf,
    },
}

#[derive(clap::Args)]
struct RasterOpts {
    /// Scene side length in meters, used for PNG inputs and new rasters.
    #[arg(long, default_value_t = DEFAULT_RANGE)]
    range: f64,
    #[arg(long, default_value_t = DEFAULT_V_MAX)]
    v_max: f64,
}

#[derive(clap::Args)]
struct MetricOpts {
    #[arg(long, default_value_t = drivescene::metrics::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = drivescene::metrics::DEFAULT_SPACING)]
    interp: f64,
    #[arg(long, default_value_t = drivescene::metrics::DEFAULT_RADIUS)]
    radius: f64,
}

impl MetricOpts {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            spacing: self.interp,
            threshold: self.threshold,
            radius: self.radius,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DenoiserKind {
    Oracle,
    Zero,
    Blur,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("DRIVESCENE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Rasterize {
            scenario,
            output,
            size,
            stroke,
        } => {
            let s = normalize_scenario(&read_scenario(&scenario)?)?;
            let fm = rasterize(&s, size, size, stroke)?;
            write_raster_any(&fm, &output).with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Vectorize {
            raster,
            output,
            raster_opts,
            k_thresh,
        } => {
            let fm = read_raster_any(&raster, raster_opts.range)?;
            let vcfg = VectorizeConfig {
                k_thresh,
                ..Default::default()
            };
            let acfg = AgentConfig {
                v_max: raster_opts.v_max,
                ..Default::default()
            };
            let s = vectorize_scenario(&fm, &vcfg, &acfg)?;
            write_scenario(&s, &output)?;
            log::info!("{} lanes, {} agents", s.lanes.len(), s.agents.len());
        }
        Command::ExtractAgents { raster, raster_opts } => {
            let fm = read_raster_any(&raster, raster_opts.range)?;
            let cfg = AgentConfig {
                v_max: raster_opts.v_max,
                ..Default::default()
            };
            let records: Vec<AgentRecord> = extract_agents(&fm, &cfg)
                .iter()
                .map(|d| AgentRecord {
                    x: d.center.x,
                    y: d.center.y,
                    heading: d.heading,
                    speed: d.speed,
                    length: d.length,
                    width: d.width,
                    trajectory: None,
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&records)?);
        }
        Command::Eval { gt, pred, metric, json } => {
            let g = read_scenario(&gt)?;
            let p = read_scenario(&pred)?;
            let score = evaluate(&g.lanes, &p.lanes, &metric.config())?;
            report(&score, json)?;
        }
        Command::Noise {
            raster,
            t,
            seed,
            output,
            steps,
            raster_opts,
        } => {
            let fm = read_raster_any(&raster, raster_opts.range)?;
            let ns = ddpm::make_schedule(steps, ddpm::DEFAULT_BETA_START, ddpm::DEFAULT_BETA_END)?;
            if t > steps {
                bail!("--t {t} exceeds the schedule length {steps}");
            }
            let f0 = Tensor::from_feature_map(&fm);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eps = Tensor::standard_normal(f0.shape(), &mut rng);
            let ft = ddpm::forward_noise(&f0, t, &eps, &ns)?;
            write_raster_any(&ft.to_feature_map(fm.meters_per_pixel())?, &output)?;
        }
        Command::Sample {
            shape,
            denoiser,
            reference,
            seed,
            steps,
            output,
            raster_opts,
        } => {
            let ns = ddpm::make_schedule(steps, ddpm::DEFAULT_BETA_START, ddpm::DEFAULT_BETA_END)?;
            let mut mpp = raster_opts.range / shape as f64;
            let den: Box<dyn Denoiser> = match denoiser {
                DenoiserKind::Zero => Box::new(ZeroDenoiser),
                DenoiserKind::Blur => Box::new(BlurDenoiser::new(ns.clone())),
                DenoiserKind::Oracle => {
                    let path = reference.expect("clap enforces --reference for the oracle");
                    let fm = read_raster_any(&path, raster_opts.range)?;
                    if fm.width() != shape || fm.height() != shape {
                        bail!("reference raster is {}x{}, expected {shape}x{shape}", fm.width(), fm.height());
                    }
                    mpp = fm.meters_per_pixel();
                    Box::new(OracleDenoiser {
                        f0: Tensor::from_feature_map(&fm),
                        schedule: ns.clone(),
                    })
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = ddpm::sample(den.as_ref(), &ns, [3, shape, shape], &mut rng);
            write_raster_any(&x.to_feature_map(mpp)?, &output)?;
        }
        Command::Simulate {
            scenario,
            k,
            horizon,
            dt,
            output,
        } => {
            let s = read_scenario(&scenario)?;
            let map = LaneGraph::from_centerlines(&s.lanes, drivescene::metrics::DEFAULT_JOIN_TOL);
            let cfg = RolloutConfig {
                k,
                horizon,
                dt,
                ..Default::default()
            };
            let futures = rollout(&s, &map, &cfg)?;
            fs::create_dir_all(&output).with_context(|| format!("creating {}", output.display()))?;
            let stem = file_stem(&scenario);
            for (i, f) in future_scenarios(&s, &futures, dt).iter().enumerate() {
                let path = output.join(format!("{stem}_future{i}.json"));
                write_scenario(f, &path)?;
                println!("{}\tp={}", path.display(), futures[i].probability);
            }
        }
        Command::Roundtrip {
            scenario,
            size,
            metric,
            json,
            output,
        } => {
            let s = normalize_scenario(&read_scenario(&scenario)?)?;
            let rt = roundtrip(&s, size, &VectorizeConfig::default(), &metric.config())?;
            if let Some(path) = output {
                let mut v = drivescene::Scenario::new(rt.graph.centerlines(), vec![], s.range, s.v_max)?;
                v.metadata.insert("source".into(), "vectorized".into());
                write_scenario(&v, &path)?;
            }
            report(&rt.score, json)?;
        }
        Command::GenCorpus {
            config,
            seed,
            count,
            output,
        } => {
            let mut cfg = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    CorpusConfig::from_toml_str(&text)?
                }
                None => CorpusConfig::default(),
            };
            if let Some(n) = count {
                cfg.count = n;
            }
            let corpus = generate_synthetic_corpus(&cfg, seed)?;
            fs::create_dir_all(&output).with_context(|| format!("creating {}", output.display()))?;
            for (i, s) in corpus.iter().enumerate() {
                let path = output.join(format!("scenario_{i:04}.json"));
                fs::write(&path, scenario_to_string(s)).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("wrote {} scenarios to {}", corpus.len(), output.display());
        }
    }
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
}

fn report(score: &GeoTopoScore, json: bool) -> Result<()> {
    let mut out = std::io::stdout().lock();
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(score)?)?;
        return Ok(());
    }
    for (name, pr) in [("GEO", score.geo), ("TOPO", score.topo)] {
        writeln!(
            out,
            "{name:<5} precision {:.4}  recall {:.4}  f1 {:.4}",
            pr.precision, pr.recall, pr.f1
        )?;
    }
    writeln!(
        out,
        "matched {} of {} gt / {} pred vertices",
        score.matched_count, score.gt_vertices, score.pred_vertices
    )?;
    Ok(())
}
