//! Command-line front end: simulation, training, DoA, beamforming, patterns
//! and benchmark sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qsbeam::array_geometry::steering_vector;
use qsbeam::beamformer::{
    beam_pattern, forgetting_covariance, lcmv_weights, mvdr_weights, LcmvConstraints,
};
use qsbeam::bench::{
    datapath_sweep, efficiency_compare, feature_pool, latency_vs_batch, throughput_vs_snr,
    BenchResult,
};
use qsbeam::doa_pipeline::{
    run_doa, synthesize, train_model, AngleRange, DoaModel, DoaResult, Scenario,
};
use qsbeam::fixed_datapath::FixedPointFormat;
use qsbeam::signal_sim::write_snapshots;
use qsbeam::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "qsbeam",
    version,
    about = "Hybrid-array beamformer with QS-SVM direction finding"
)]
struct Cli {
    /// Scenario JSON; defaults to the built-in scene of each command.
    #[arg(long, global = true, visible_alias = "scenario", value_name = "JSON")]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; `.csv` selects CSV where a command supports it. Stdout if omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate array snapshots (binary file plus JSON sidecar with --out).
    Simulate {
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// Train the DoA classifier on simulated labelled spectra.
    Train {
        /// Class azimuths as start:stop:step degrees.
        #[arg(long)]
        classes: Option<AngleRange>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        samples_per_class: Option<usize>,
    },
    /// Estimate source directions with a trained model.
    Doa {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// MVDR/LCMV weights toward the scenario's true source directions.
    Beamform {
        #[arg(long, value_enum, default_value_t = MethodArg::Lcmv)]
        method: MethodArg,
        /// Pattern azimuth grid as start:stop:step degrees.
        #[arg(long)]
        grid: Option<AngleRange>,
        /// Forgetting factor of the streaming covariance update.
        #[arg(long, default_value_t = 0.99)]
        forgetting: f64,
    },
    /// Null-steered pattern from estimated directions.
    Pattern {
        #[arg(long)]
        model: Option<PathBuf>,
        /// A `doa` result to reuse instead of running the classifier.
        #[arg(long)]
        doa: Option<PathBuf>,
    },
    /// Benchmark sweeps.
    Bench {
        #[command(subcommand)]
        bench: BenchCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mvdr,
    Lcmv,
}

#[derive(Args)]
struct ModelArg {
    /// Trained model; trained on demand from the scenario if omitted.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Desired-source classification success rate against SNR.
    Throughput {
        #[command(flatten)]
        model: ModelArg,
        /// SNR values: start:stop:step or a comma list, in dB.
        #[arg(long, default_value = "-10:20:5", allow_hyphen_values = true)]
        snr: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Per-sample classification latency against batch size.
    Latency {
        #[command(flatten)]
        model: ModelArg,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "1,2,4,8,16,32,64,128,256"
        )]
        batch: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 256)]
        pool: usize,
    },
    /// Fixed-point inner-product latency, throughput and error per stage count.
    Datapath {
        #[arg(long, default_value_t = 140)]
        len: usize,
        #[arg(long, default_value = "18.12")]
        fmt: FixedPointFormat,
        /// Stage counts: `a..b` (inclusive) or a comma list.
        #[arg(long, default_value = "0..8")]
        stages: String,
        #[arg(long, default_value_t = 2)]
        fanin: u32,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Accuracy per element gain pattern under identical seeds.
    Efficiency {
        #[arg(long, value_delimiter = ',', default_value = "bowtie,dipole")]
        patterns: Vec<String>,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
        snr: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERICAL
            })
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))
}

fn scenario(cli: &Cli, default: fn() -> Scenario) -> Result<Scenario> {
    let mut sc = match &cli.config {
        Some(p) => Scenario::from_json(&read(p)?)?,
        None => default(),
    };
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    sc.validate()?;
    Ok(sc)
}

fn emit(cli: &Cli, content: &str) -> Result<()> {
    match &cli.out {
        Some(p) => Ok(std::fs::write(p, content)?),
        None => {
            print!("{content}");
            if !content.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn wants_csv(cli: &Cli) -> bool {
    cli.out
        .as_ref()
        .and_then(|p| p.extension())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_model(path: Option<&Path>, sc: &Scenario) -> Result<DoaModel> {
    let model = match path {
        Some(p) => DoaModel::from_json(&read(p)?)?,
        None => train_model(sc)?,
    };
    model.check_compatible(sc)?;
    Ok(model)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| config_error(format!("bad {what} value `{v}`")))
        })
        .collect()
}

fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    if s.contains(':') {
        Ok(s.parse::<AngleRange>()?.values())
    } else {
        parse_list(s, "SNR")
    }
}

fn parse_stages(s: &str) -> Result<Vec<u32>> {
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u32 = a
                .trim()
                .parse()
                .map_err(|_| config_error(format!("bad stage range `{s}`")))?;
            let b: u32 = b
                .trim()
                .parse()
                .map_err(|_| config_error(format!("bad stage range `{s}`")))?;
            if a > b {
                return Err(config_error(format!("empty stage range `{s}`")));
            }
            Ok((a..=b).collect())
        }
        None => parse_list(s, "stage"),
    }
}

fn bench_output(cli: &Cli, r: &BenchResult) -> Result<()> {
    if wants_csv(cli) {
        emit(cli, &r.to_csv())
    } else {
        emit(cli, &r.to_json()?)
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { snr, snapshots } => {
            let mut sc = scenario(cli, Scenario::fig3)?;
            if let Some(s) = snr {
                sc.snr_db = *s;
            }
            if let Some(l) = snapshots {
                sc.snapshots = *l;
            }
            sc.validate()?;
            let layout = sc.layout()?;
            let x = sc.simulate(&layout, sc.seed)?;
            if let Some(p) = &cli.out {
                write_snapshots(p, &x, sc.seed)?;
            }
            let summary = serde_json::json!({
                "elements": x.elements(),
                "snapshots": x.snapshots(),
                "mean_power": x.mean_power(),
                "seed": sc.seed,
                "scenario": sc,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Train {
            classes,
            eta,
            lambda,
            samples_per_class,
        } => {
            let mut sc = scenario(cli, Scenario::fig3)?;
            if let Some(c) = classes {
                sc.class_grid = *c;
            }
            if let Some(e) = eta {
                sc.training.eta = *e;
            }
            if let Some(l) = lambda {
                sc.training.lambda = *l;
            }
            if let Some(n) = samples_per_class {
                sc.training.samples_per_class = *n;
            }
            sc.validate()?;
            emit(cli, &train_model(&sc)?.to_json()?)
        }
        Command::Doa { model } => {
            let sc = scenario(cli, Scenario::fig3)?;
            let path = model
                .as_deref()
                .ok_or_else(|| Error::Untrained("no --model given".into()))?;
            let model = load_model(Some(path), &sc)?;
            let doa = run_doa(&sc, &model)?;
            let out = serde_json::json!({
                "estimated_az_deg": doa.estimated_az(),
                "desired_az_deg": doa.desired_estimate().az_deg,
                "result": doa,
                "scenario": sc,
            });
            emit(cli, &serde_json::to_string_pretty(&out)?)
        }
        Command::Beamform {
            method,
            grid,
            forgetting,
        } => {
            let mut sc = scenario(cli, Scenario::fig3)?;
            if let Some(g) = grid {
                sc.pattern_grid = *g;
            }
            let layout = sc.layout()?;
            let x = sc.simulate(&layout, sc.seed)?;
            let cov = forgetting_covariance(&x, *forgetting, sc.loading_factor)?;
            let desired = sc.desired().direction();
            let w = match method {
                MethodArg::Mvdr => {
                    mvdr_weights(&cov, &steering_vector(&layout, desired.phi, desired.theta)?)?
                }
                MethodArg::Lcmv => {
                    let mut dirs = vec![desired];
                    let mut resp = vec![qsbeam::linalg::ONE];
                    for (k, s) in sc.sources.iter().enumerate() {
                        if k != sc.desired_index {
                            dirs.push(s.direction());
                            resp.push(qsbeam::linalg::ZERO);
                        }
                    }
                    lcmv_weights(&cov, &LcmvConstraints::new(&layout, &dirs, &resp)?)?
                }
            };
            let grid = qsbeam::doa_pipeline::pattern_grid(&sc)?;
            let pattern = beam_pattern(&w, &layout, &grid)?;
            if wants_csv(cli) {
                emit(cli, &pattern.to_csv())
            } else {
                let a = steering_vector(&layout, desired.phi, desired.theta)?;
                let out = serde_json::json!({
                    "method": w.method,
                    "forgetting": forgetting,
                    "desired_response": [w.response(&a.values).re, w.response(&a.values).im],
                    "weights": w.values.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
                    "pattern": pattern.angles.iter().zip(&pattern.power_db)
                        .map(|(d, p)| [d.phi_deg(), d.theta_deg(), *p]).collect::<Vec<_>>(),
                    "scenario": sc,
                });
                emit(cli, &serde_json::to_string_pretty(&out)?)
            }
        }
        Command::Pattern { model, doa } => {
            let sc = scenario(cli, Scenario::fig3)?;
            let doa: DoaResult = match (doa, model) {
                (Some(p), _) => {
                    let v: serde_json::Value = serde_json::from_str(&read(p)?)?;
                    serde_json::from_value(v.get("result").cloned().unwrap_or(v))?
                }
                (None, Some(m)) => run_doa(&sc, &load_model(Some(m), &sc)?)?,
                (None, None) => {
                    return Err(Error::Untrained("pattern needs --model or --doa".into()))
                }
            };
            let (_, pattern) = synthesize(&sc, &doa)?;
            emit(cli, &pattern.to_csv())
        }
        Command::Bench { bench } => run_bench(cli, bench),
    }
}

fn run_bench(cli: &Cli, bench: &BenchCommand) -> Result<()> {
    let r = match bench {
        BenchCommand::Throughput { model, snr, trials } => {
            let sc = scenario(cli, Scenario::acquisition)?;
            let m = load_model(model.model.as_deref(), &sc)?;
            throughput_vs_snr(&sc, &m, &parse_snr_list(snr)?, *trials)?
        }
        BenchCommand::Latency {
            model,
            batch,
            runs,
            pool,
        } => {
            let sc = scenario(cli, Scenario::acquisition)?;
            let m = load_model(model.model.as_deref(), &sc)?;
            let samples = feature_pool(&sc, &m, *pool)?;
            latency_vs_batch(&m, &samples, batch, *runs)?
        }
        BenchCommand::Datapath {
            len,
            fmt,
            stages,
            fanin,
            trials,
        } => datapath_sweep(
            *len,
            fmt,
            &parse_stages(stages)?,
            *fanin,
            *trials,
            cli.seed.unwrap_or(1),
        )?,
        BenchCommand::Efficiency {
            patterns,
            trials,
            snr,
        } => {
            let mut sc = scenario(cli, Scenario::acquisition)?;
            sc.snr_db = *snr;
            efficiency_compare(&sc, patterns, *trials)?
        }
    };
    bench_output(cli, &r)
}
