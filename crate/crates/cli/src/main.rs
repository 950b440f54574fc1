//! `backpar`: synthesize observations, estimate, reconstruct and run studies.

use backpar_core::estimator::EstimatorDump;
use backpar_core::harness::study::{write_slopes_csv, write_study_outputs};
use backpar_core::harness::{
    convergence_slopes, mise_study_with, run_checks, Experiment, ExperimentConfig, StudyOptions,
};
use backpar_core::{Error, ObservationSet, SpectralField};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "backpar",
    version,
    about = "Backward parabolic reconstruction from noisy data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw one observation set from the manufactured problem.
    Synthesize(Single),
    /// Build the final-state and source estimators from one observation set.
    Estimate(Single),
    /// Reconstruct the trajectory from one observation set.
    Backward(Single),
    /// Monte-Carlo MISE sweep over the configured grid sizes.
    Study {
        #[command(flatten)]
        common: Common,
        /// Run replicates one by one (bit-exact regardless of machine).
        #[arg(long)]
        sequential: bool,
    },
    /// Run the built-in invariant suite.
    Check {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; stdout when absent (except for `study`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct Single {
    #[command(flatten)]
    common: Common,
    /// Points per axis; defaults to the first configured grid size.
    #[arg(long)]
    n: Option<usize>,
    /// Use a saved observation set instead of drawing one.
    #[arg(long)]
    observations: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("backpar: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::GridTooSmall { .. } => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Synthesize(s) => synthesize(&s),
        Command::Estimate(s) => estimate(&s),
        Command::Backward(s) => backward(&s),
        Command::Study { common, sequential } => study(&common, sequential),
        Command::Check { format } => check(format),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e {
        Failed::Checks => Ok(ExitCode::from(EXIT_NUMERICAL)),
        Failed::Lib(e) => Err(e),
    })
}

enum Failed {
    Checks,
    Lib(Error),
}

impl From<Error> for Failed {
    fn from(e: Error) -> Self {
        Failed::Lib(e)
    }
}

impl From<io::Error> for Failed {
    fn from(e: io::Error) -> Self {
        Failed::Lib(e.into())
    }
}

/// Writes to `dir/name` or, without a directory, to stdout.
fn sink(out: Option<&Path>, name: &str) -> Result<Box<dyn Write>, Error> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Box::new(BufWriter::new(File::create(dir.join(name))?)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

struct Run {
    exp: Experiment,
    n: usize,
    obs: ObservationSet,
}

fn prepare(s: &Single) -> Result<Run, Error> {
    let cfg = load(&s.common)?;
    let n = s.n.unwrap_or(cfg.grid_sizes[0]);
    let exp = Experiment::new(cfg)?;
    let obs = match &s.observations {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad observation file: {e}")))?
        }
        None => exp.observe(n, exp.cfg.seed)?,
    };
    let n = obs.grid.sizes()[0];
    if obs.grid.sizes() != exp.cfg.sizes(n).as_slice() {
        return Err(Error::Config(
            "observation grid does not match the config dimension".into(),
        ));
    }
    Ok(Run { exp, n, obs })
}

fn synthesize(s: &Single) -> Result<(), Failed> {
    let run = prepare(s)?;
    let out = s.common.out.as_deref();
    match s.common.format {
        Format::Json => {
            let mut w = sink(out, "observations.json")?;
            serde_json::to_writer_pretty(&mut w, &run.obs).map_err(Error::from)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut w = sink(out, "observations.csv")?;
            let d = run.obs.grid.dim();
            let coords: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
            let times: Vec<String> = run
                .obs
                .time_mesh
                .points()
                .iter()
                .map(|t| format!("g@{t}"))
                .collect();
            writeln!(w, "{},d,{}", coords.join(","), times.join(","))?;
            for (i, x) in run.obs.grid.points().enumerate() {
                let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
                row.push(run.obs.d_tilde[i].to_string());
                row.extend(run.obs.g_tilde.iter().map(|g| g[i].to_string()));
                writeln!(w, "{}", row.join(","))?;
            }
        }
    }
    Ok(())
}

fn estimate(s: &Single) -> Result<(), Failed> {
    let run = prepare(s)?;
    let params = run.exp.parameters(run.n)?;
    let (h_hat, g_hat) = run.exp.estimate(&run.obs, &params)?;
    let g_fields: &[SpectralField] = g_hat.as_ref().map_or(&[], |g| &g.fields);
    let out = s.common.out.as_deref();
    match s.common.format {
        Format::Json => {
            let dump = EstimatorDump {
                beta: params.beta_n,
                h_hat: &h_hat,
                g_hat: g_fields,
                params: &params,
            };
            let mut w = sink(out, "estimate.json")?;
            serde_json::to_writer_pretty(&mut w, &dump).map_err(Error::from)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let mut w = sink(out, "estimate.csv")?;
            writeln!(w, "p,h_hat")?;
            for (p, c) in h_hat.iter() {
                let label: Vec<String> = p.components().iter().map(u32::to_string).collect();
                writeln!(w, "{},{c}", label.join(" "))?;
            }
        }
    }
    Ok(())
}

fn backward(s: &Single) -> Result<(), Failed> {
    let run = prepare(s)?;
    let params = run.exp.parameters(run.n)?;
    let rec = run.exp.reconstruct(&run.obs, &params)?;
    let out = s.common.out.as_deref();
    match s.common.format {
        Format::Json => {
            let mut w = sink(out, "reconstruction.json")?;
            let json = serde_json::json!({
                "params": params,
                "reconstruction": rec.to_json_value(),
            });
            serde_json::to_writer_pretty(&mut w, &json).map_err(Error::from)?;
            writeln!(w)?;
        }
        Format::Csv => {
            let traj = rec.trajectory();
            let modes: Vec<_> = traj.terminal().iter().map(|(p, _)| p.clone()).collect();
            traj.write_csv(sink(out, "trajectory.csv")?, &modes)?;
        }
    }
    Ok(())
}

fn study(common: &Common, sequential: bool) -> Result<(), Failed> {
    let cfg = load(common)?;
    let mut opts = StudyOptions::from_env();
    opts.sequential = sequential;
    let report = mise_study_with(&cfg, &opts)?;
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from));
    match dir {
        Some(dir) => {
            write_study_outputs(&report, &dir)?;
            log::info!("wrote study outputs to {}", dir.display());
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            match common.format {
                Format::Csv => {
                    report.write_csv(&mut w)?;
                    if let Ok(slopes) = convergence_slopes(&report) {
                        writeln!(w)?;
                        write_slopes_csv(&slopes, &mut w)?;
                    }
                }
                Format::Json => {
                    let json = serde_json::json!({
                        "report": report,
                        "slopes": convergence_slopes(&report).ok(),
                    });
                    serde_json::to_writer_pretty(&mut w, &json).map_err(Error::from)?;
                    writeln!(w)?;
                }
            }
        }
    }
    Ok(())
}

fn check(format: Format) -> Result<(), Failed> {
    let results = run_checks();
    let mut out = io::stdout().lock();
    match format {
        Format::Csv => {
            for r in &results {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                writeln!(out, "{verdict} {}: {}", r.name, r.detail)?;
            }
        }
        Format::Json => {
            let json: Vec<_> = results
                .iter()
                .map(
                    |r| serde_json::json!({"name": r.name, "passed": r.passed, "detail": r.detail}),
                )
                .collect();
            serde_json::to_writer_pretty(&mut out, &json).map_err(Error::from)?;
            writeln!(out)?;
        }
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failed::Checks)
    }
}
