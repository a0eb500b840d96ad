//! Command-line front end for the efedsim simulator.
//!
//! Exit codes: 0 on success, 1 when a verdict or equivalence check fails,
//! 2 for usage, config and input errors.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use commands::{BandwidthArgs, Family, Outcome, PipelineArgs, SvdArgs, VerifyArgs};
use config::{parse_config, ConfigError, ExperimentConfig};

pub const OUT_DIR_ENV: &str = "EFEDSIM_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Geometric,
    Power,
}

#[derive(Debug, Parser)]
#[command(
    name = "efedsim",
    version,
    about = "Edge federation inference simulator"
)]
pub struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; falls back to $EFEDSIM_OUT_DIR, then stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the resolved configuration in canonical form and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read counts of a square product, centralized versus hierarchical.
    CostTable {
        #[arg(long, value_delimiter = ',', default_value = "5,10,100,10000")]
        dims: Vec<usize>,
    },
    /// Energy and compression sweep over the singular spectrum of a weight.
    SvdAnalyze {
        /// MxN, e.g. 768x2304.
        #[arg(long, value_parser = parse_shape)]
        shape: Option<(usize, usize)>,
        #[arg(long, default_value_t = 0.4)]
        keep_frac: f64,
        #[arg(long, value_enum, default_value = "geometric")]
        family: FamilyArg,
        /// Geometric ratio q or power exponent p.
        #[arg(long)]
        decay: Option<f64>,
        /// Raw matrix file instead of a synthetic spectrum.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        step: usize,
    },
    /// Memory-access reduce rate for low-rank weights.
    Bandwidth {
        #[arg(long, default_value_t = 3072)]
        m: usize,
        #[arg(long, default_value_t = 768)]
        n: usize,
        #[arg(long, default_value_t = 30)]
        t: usize,
        #[arg(long, default_value_t = 10)]
        batch: usize,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.2,0.3,0.4,0.5,0.6,0.7,0.8"
        )]
        ratios: Vec<f64>,
    },
    /// Run verification rounds and a federated pipeline over the configured topology.
    PipelineRun {
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
        /// Load model weights from a model file.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Verify softmax attention over random score matrices.
    VerifyDemo {
        /// Amount added to one claimed probability per matrix.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        tamper: f64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 8)]
        matrices: usize,
        #[arg(long, default_value_t = 16)]
        rows: usize,
        #[arg(long, default_value_t = 64)]
        cols: usize,
        #[arg(long, default_value_t = 16)]
        d: usize,
    },
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (m, n) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected MxN, got '{s}'"))?;
    let m: usize = m
        .trim()
        .parse()
        .map_err(|_| format!("bad row count in '{s}'"))?;
    let n: usize = n
        .trim()
        .parse()
        .map_err(|_| format!("bad column count in '{s}'"))?;
    if m == 0 || n == 0 {
        return Err("dimensions must be >= 1".into());
    }
    Ok((m, n))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn dispatch(cfg: &ExperimentConfig, cmd: &Command) -> Result<Outcome, CliError> {
    match cmd {
        Command::CostTable { dims } => commands::cost_table(dims),
        Command::SvdAnalyze {
            shape,
            keep_frac,
            family,
            decay,
            input,
            step,
        } => {
            let family = match family {
                FamilyArg::Geometric => Family::Geometric(decay.unwrap_or(0.99)),
                FamilyArg::Power => Family::Power(decay.unwrap_or(1.0)),
            };
            if let Some(d) = decay {
                if !d.is_finite() || *d <= 0.0 {
                    return Err(CliError::Usage("--decay must be a positive number".into()));
                }
            }
            commands::svd_analyze(&SvdArgs {
                shape: *shape,
                keep_frac: *keep_frac,
                family,
                input: input.as_deref(),
                step: *step,
            })
        }
        Command::Bandwidth {
            m,
            n,
            t,
            batch,
            ratios,
        } => commands::bandwidth(&BandwidthArgs {
            m: *m,
            n: *n,
            t: *t,
            batch: *batch,
            ratios,
        }),
        Command::PipelineRun {
            rounds,
            tolerance,
            model,
            save_model,
        } => commands::pipeline_run(
            cfg,
            &PipelineArgs {
                rounds: *rounds,
                tolerance: *tolerance,
                model: model.as_deref(),
                save_model: save_model.as_deref(),
            },
        ),
        Command::VerifyDemo {
            tamper,
            workers,
            matrices,
            rows,
            cols,
            d,
        } => commands::verify_demo(
            cfg,
            &VerifyArgs {
                tamper: *tamper,
                workers: *workers,
                matrices: *matrices,
                rows: *rows,
                cols: *cols,
                d: *d,
            },
        ),
    }
}

fn write_outputs(outcome: &Outcome, dir: Option<&Path>, digest: &str) -> Result<(), CliError> {
    match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
            let mut manifest = String::from("file,bytes\n");
            for f in &outcome.files {
                let path = dir.join(&f.name);
                std::fs::write(&path, &f.contents)
                    .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
                manifest.push_str(&format!("{},{}\n", f.name, f.contents.len()));
            }
            manifest.push_str(&format!("config_digest,{digest}\n"));
            std::fs::write(dir.join("manifest.csv"), manifest)
                .map_err(|e| CliError::Io(format!("cannot write manifest: {e}")))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let multi = outcome.files.len() > 1;
            for f in &outcome.files {
                if multi {
                    let _ = writeln!(out, "# {}", f.name);
                }
                let _ = out.write_all(f.contents.as_bytes());
            }
        }
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = load_config(cli)?;
    if cli.dump_config {
        print!("{}", cfg.canonical());
        return Ok(0);
    }
    let Some(cmd) = &cli.command else {
        return Err(CliError::Usage(
            "no subcommand given; try --help".to_string(),
        ));
    };
    let digest = cfg.digest();
    eprintln!("config digest {digest}");
    let outcome = dispatch(&cfg, cmd)?;
    for n in &outcome.notes {
        eprintln!("{n}");
    }
    let env_dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    let dir = cli.out.clone().or(env_dir);
    write_outputs(&outcome, dir.as_deref(), &digest)?;
    Ok(if outcome.success { 0 } else { 1 })
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
