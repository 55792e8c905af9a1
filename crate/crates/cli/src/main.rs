use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tfmlab_cli::commands;
use tfmlab_cli::config::{usage, Format, Model, RunConfig, UsageError};
use tfmlab_core::TfmError;

const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "tfmlab", version, about = "Transaction fee mechanism laboratory")]
struct Cli {
    /// Read settings from a TOML file; flags given on the command line override it.
    #[arg(long, global = true, env = "TFMLAB_CONFIG")]
    config: Option<PathBuf>,
    /// Write the effective configuration to this file before running.
    #[arg(long, global = true)]
    save_config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    #[arg(long, global = true, env = "TFMLAB_SEED")]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true, visible_aliases = ["out", "emit"], env = "TFMLAB_OUTPUT")]
    output: Option<PathBuf>,
    #[arg(long, global = true, env = "TFMLAB_FORMAT")]
    format: Option<Format>,
    #[arg(long, global = true, env = "TFMLAB_WORKERS")]
    workers: Option<usize>,
    #[arg(long, global = true, env = "TFMLAB_GRID")]
    grid: Option<String>,
    #[arg(long, global = true, env = "TFMLAB_BUDGET")]
    budget: Option<String>,
    /// Mechanism parameter, `key=value`; repeatable.
    #[arg(long = "param", short = 'p', global = true, value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// Shorthand for `--param k=K`.
    #[arg(long, short = 'k', global = true)]
    k: Option<usize>,
    /// Shorthand for `--param r=R`.
    #[arg(long, short = 'r', global = true)]
    r: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// List the mechanism catalog.
    Catalog,
    /// Check one property of one mechanism on a grid.
    Check {
        #[arg(long, short = 'm', env = "TFMLAB_MECHANISM")]
        mechanism: Option<String>,
        /// uic, mic, scp:C, global-scp, oca, oca:multi, oca:coordinated, oca:search, symmetry, bayes:uic, bayes:mic, bayes:scp:C
        #[arg(long, env = "TFMLAB_PROPERTY")]
        property: Option<String>,
        #[arg(long, env = "TFMLAB_MODEL")]
        model: Option<Model>,
        /// σ for OCA checks: declared, v, or affine:γ,c.
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long, visible_alias = "dist", env = "TFMLAB_DISTRIBUTION")]
        distribution: Option<String>,
        /// User counts for Bayesian checks, lo..hi.
        #[arg(long)]
        users: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run the classification or impossibility sweep.
    Sweep {
        /// classification or impossibility.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Produce a numeric table; `reserve` is the minimum reserve for MIC.
    Table {
        which: Option<String>,
        #[arg(long, visible_alias = "dist", env = "TFMLAB_DISTRIBUTION")]
        distribution: Option<String>,
        /// Comma-separated user counts.
        #[arg(long, visible_alias = "n", value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Apply the revelation transform and check outcome equivalence.
    Transform {
        #[arg(long, short = 'm', env = "TFMLAB_MECHANISM")]
        mechanism: Option<String>,
        /// single or multi.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Print one user's allocation and payment curve with the Myerson payment.
    Curve {
        #[arg(long, short = 'm', env = "TFMLAB_MECHANISM")]
        mechanism: Option<String>,
        /// Values of all users, comma separated.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        user: Option<u32>,
    },
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("{k}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn effective_config(cli: Cli) -> Result<RunConfig> {
    let name = match &cli.command {
        Command::Catalog => "catalog",
        Command::Check { .. } => "check",
        Command::Sweep { .. } => "sweep",
        Command::Table { .. } => "table",
        Command::Transform { .. } => "transform",
        Command::Curve { .. } => "curve",
    };
    let mut c = match &cli.config {
        Some(path) => {
            let c = RunConfig::load(path)?;
            if c.command != name {
                return Err(usage(format!(
                    "config file is for {:?} but the command is {name:?}",
                    c.command
                )));
            }
            c
        }
        None => RunConfig::new(name),
    };
    let common = cli.common;
    if let Some(seed) = common.seed {
        c.seed = seed;
    }
    if let Some(w) = common.workers {
        c.workers = w;
    }
    set(&mut c.output, common.output);
    set(&mut c.format, common.format);
    set(&mut c.grid, common.grid);
    set(&mut c.budget, common.budget);
    for (k, v) in common.params {
        c.params.insert(k, v);
    }
    if let Some(k) = common.k {
        c.params.insert("k".into(), k as f64);
    }
    if let Some(r) = common.r {
        c.params.insert("r".into(), r);
    }
    match cli.command {
        Command::Catalog => {}
        Command::Check {
            mechanism,
            property,
            model,
            sigma,
            distribution,
            users,
            samples,
        } => {
            set(&mut c.mechanism, mechanism);
            set(&mut c.property, property);
            set(&mut c.model, model);
            set(&mut c.sigma, sigma);
            set(&mut c.distribution, distribution);
            set(&mut c.users, users);
            set(&mut c.samples, samples);
        }
        Command::Sweep { mode } => set(&mut c.mode, mode),
        Command::Table {
            which,
            distribution,
            ns,
            samples,
        } => {
            set(&mut c.mode, which);
            set(&mut c.distribution, distribution);
            set(&mut c.ns, ns);
            set(&mut c.samples, samples);
        }
        Command::Transform { mechanism, mode } => {
            set(&mut c.mechanism, mechanism);
            set(&mut c.mode, mode);
        }
        Command::Curve {
            mechanism,
            profile,
            user,
        } => {
            set(&mut c.mechanism, mechanism);
            set(&mut c.profile, profile);
            set(&mut c.user, user);
        }
    }
    Ok(c)
}

fn real_main() -> Result<i32> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { i32::from(EXIT_USAGE) } else { 0 };
            let _ = e.print();
            return Ok(code);
        }
    };
    let save = cli.save_config.clone();
    let config = effective_config(cli)?;
    if let Some(path) = save {
        std::fs::write(&path, config.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    }
    let out = commands::run(&config)?;
    match &config.output {
        Some(path) => {
            std::fs::write(path, &out.body).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().write_all(out.body.as_bytes())?,
    }
    Ok(out.exit)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("tfmlab: {e:#}");
            let bad_input = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<TfmError>(), Some(TfmError::Spec(_)));
            ExitCode::from(if bad_input { EXIT_USAGE } else { 1 })
        }
    }
}
