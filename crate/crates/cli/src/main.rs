//! `nojump`: batch analyses of killed Markov processes without negative jumps.

mod commands;
mod doc;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use commands::{Ctx, Suite, YaglomArgs};
use doc::ModelDocument;
use nojump::scale::Method;
use nojump::spectral::Rect;
use output::{hash_bytes, Out, RunMetadata, SEED_ENV};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_GAP: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Engine(#[from] nojump::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use nojump::Error as E;
        match self {
            CliError::Input(_) | CliError::Io(_) => EXIT_INPUT,
            CliError::Engine(e) => match e {
                E::Dimension(_) | E::Index(_) | E::InvalidArgument(_) | E::InvalidModel(_) | E::WrongCase(_) => {
                    EXIT_INPUT
                }
                E::GapViolation { .. } => EXIT_GAP,
                _ => commands::EXIT_VERIFY,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "nojump", version, about = "Scale functions, spectra and quasi-stationary laws")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Model document (JSON, schema version 1).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Master seed; the NOJUMP_SEED environment variable takes precedence.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Series truncation tolerance (overrides the document).
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Entrance classification of the right boundary over a truncation schedule.
    Classify,
    /// One row of W^(q) and Z^(q).
    Scale {
        /// `re,im`
        #[arg(long, default_value = "1,0")]
        q: String,
        #[arg(long, default_value_t = 0)]
        row: usize,
        #[arg(long, value_parser = ["volterra", "series"], default_value = "volterra")]
        method: String,
    },
    /// Zeros of D: the leading zeros and gap, or all zeros in `--rect`.
    Spectrum {
        /// `re_min,re_max,im_min,im_max`
        #[arg(long, allow_hyphen_values = true)]
        rect: Option<String>,
    },
    /// Quasi-stationary law, invariant function and Q-process law.
    Qsd,
    /// Monte Carlo convergence to the quasi-stationary law.
    Yaglom {
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        buckets: Option<usize>,
        /// Start index (ignored with --from-qsd).
        #[arg(long)]
        start: Option<usize>,
        /// Euler step for diffusions.
        #[arg(long)]
        step: Option<f64>,
        /// Draw starting points from the quasi-stationary law.
        #[arg(long)]
        from_qsd: bool,
    },
    /// Identity, oracle and semigroup checks.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let v: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n => Ok(v),
        _ => Err(CliError::Input(format!("--{what} expects {n} comma-separated numbers, got \"{s}\""))),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<(u64, &'static str), CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(|s| (s, "env"))
            .map_err(|_| CliError::Input(format!("{SEED_ENV}=\"{v}\" is not an unsigned integer"))),
        Err(_) => Ok(match flag {
            Some(s) => (s, "flag"),
            None => (42, "default"),
        }),
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let c = cli.common;
    let path = c.model.ok_or_else(|| CliError::Input("--model is required".into()))?;
    let bytes = std::fs::read(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::Input("model document is not UTF-8".into()))?;
    let mut doc = ModelDocument::parse(&text)?;
    if let Some(t) = c.tol {
        if t.is_nan() || t <= 0.0 {
            return Err(CliError::Input(format!("--tol must be positive, got {t}")));
        }
        doc.tolerances.tol = t;
    }
    let (seed, seed_source) = resolve_seed(c.seed)?;
    if c.workers > 0 {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(c.workers).build_global();
    }
    let command = match cli.cmd {
        Cmd::Classify => "classify",
        Cmd::Scale { .. } => "scale",
        Cmd::Spectrum { .. } => "spectrum",
        Cmd::Qsd => "qsd",
        Cmd::Yaglom { .. } => "yaglom",
        Cmd::Verify { .. } => "verify",
    };
    let meta = RunMetadata {
        artifact_version: env!("CARGO_PKG_VERSION"),
        command,
        model_hash: hash_bytes(&bytes),
        seed,
        seed_source,
        seed_env: SEED_ENV,
        workers: c.workers,
        generator: commands::generator_for(command),
        tolerances: doc.tolerances,
    };
    let mut ctx = Ctx {
        doc: &doc,
        meta,
        out: Out::new(&c.out)?,
    };
    let started = std::time::Instant::now();
    let code = match cli.cmd {
        Cmd::Classify => commands::classify(&mut ctx),
        Cmd::Scale { q, row, method } => {
            let v = parse_floats(&q, 2, "q")?;
            let method = if method == "series" { Method::Series } else { Method::Volterra };
            commands::scale(&mut ctx, Complex64::new(v[0], v[1]), row, method)
        }
        Cmd::Spectrum { rect } => {
            let rect = match rect {
                Some(r) => {
                    let v = parse_floats(&r, 4, "rect")?;
                    Some(Rect {
                        re_min: v[0],
                        re_max: v[1],
                        im_min: v[2],
                        im_max: v[3],
                    })
                }
                None => None,
            };
            commands::spectrum(&mut ctx, rect)
        }
        Cmd::Qsd => commands::qsd(&mut ctx),
        Cmd::Yaglom {
            paths,
            horizon,
            buckets,
            start,
            step,
            from_qsd,
        } => commands::yaglom(
            &mut ctx,
            &YaglomArgs {
                paths,
                horizon,
                buckets,
                start,
                step,
                from_qsd,
            },
        ),
        Cmd::Verify { suite } => commands::verify(&mut ctx, suite),
    }?;
    for p in &ctx.out.written {
        eprintln!("wrote {}", p.display());
    }
    eprintln!(
        "{command}: exit {code}, seed {seed} ({seed_source}), wall time {:.3} s",
        started.elapsed().as_secs_f64()
    );
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
