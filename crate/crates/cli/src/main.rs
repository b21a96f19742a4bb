//! `linkmerge`: fit monotone links between datasets without shared
//! identifiers, simulate test data and score fits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use linkmerge::simlab::HFamily;
use linkmerge::NoiseSpec;

use config::{MisspecSpec, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "linkmerge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one link per matched context group.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fit: FitArgs,
        /// Match numeric context within this Euclidean radius instead of exactly.
        #[arg(long)]
        upsilon: Option<f64>,
    },
    /// Residualize on numeric context by least squares, then fit one link.
    FitSep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Write simulated x.csv, y.csv, truth.csv and holdout.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        /// power_abs, disc_flat or identity.
        #[arg(long)]
        h_family: Option<String>,
        /// Number of (x, y) holdout pairs; 0 skips the file.
        #[arg(long)]
        n_holdout: Option<usize>,
    },
    /// Score a fitted link against holdout pairs.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        link: Option<PathBuf>,
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long)]
        group: Option<String>,
    },
    /// Grid-MSE over sizes and noise laws, optionally with a misspecified run.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        repetitions: Option<usize>,
        /// Add the wrong-noise comparison with its default settings.
        #[arg(long)]
        misspecified: bool,
        /// power_abs, disc_flat or identity.
        #[arg(long)]
        h_family: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Dirac,
    Gaussian,
    Uniform,
    Student,
}

#[derive(Args)]
struct Common {
    /// JSON or TOML config, or any output of a previous run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, env = "LINKMERGE_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    noise: Option<Family>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Half-width of uniform noise.
    #[arg(long)]
    range: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    x_points: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    /// Deconvolution error radius used by the bands.
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long)]
    decreasing: bool,
    #[arg(long)]
    no_bands: bool,
}

fn noise_from_flags(c: &Common, current: NoiseSpec) -> Result<NoiseSpec, CliError> {
    let family = c.noise.unwrap_or(match current {
        NoiseSpec::Dirac => Family::Dirac,
        NoiseSpec::Gaussian { .. } => Family::Gaussian,
        NoiseSpec::Uniform { .. } => Family::Uniform,
        NoiseSpec::ScaledStudent { .. } => Family::Student,
    });
    let allowed: &[&str] = match family {
        Family::Dirac => &[],
        Family::Gaussian => &["sigma"],
        Family::Uniform => &["range"],
        Family::Student => &["scale", "nu"],
    };
    for (flag, v) in [
        ("sigma", c.sigma),
        ("range", c.range),
        ("scale", c.scale),
        ("nu", c.nu),
    ] {
        if v.is_some() && !allowed.contains(&flag) {
            return Err(CliError::Input(format!(
                "--{flag} does not apply to {} noise",
                family.to_possible_value().expect("named").get_name()
            )));
        }
    }
    // Parameters missing from the flags fall back to the loaded config.
    let (sigma, range, scale, nu) = match current {
        NoiseSpec::Gaussian { sigma } => (Some(sigma), None, None, None),
        NoiseSpec::Uniform { half_range } => (None, Some(half_range), None, None),
        NoiseSpec::ScaledStudent { scale, nu } => (None, None, Some(scale), Some(nu)),
        NoiseSpec::Dirac => (None, None, None, None),
    };
    let need = |flag: Option<f64>, fallback: Option<f64>, name: &str| {
        flag.or(fallback)
            .ok_or_else(|| CliError::Input(format!("--noise needs --{name}")))
    };
    let noise = match family {
        Family::Dirac => NoiseSpec::Dirac,
        Family::Gaussian => NoiseSpec::Gaussian {
            sigma: need(c.sigma, sigma, "sigma")?,
        },
        Family::Uniform => NoiseSpec::Uniform {
            half_range: need(c.range, range, "range")?,
        },
        Family::Student => NoiseSpec::ScaledStudent {
            scale: need(c.scale, scale, "scale")?,
            nu: need(c.nu, nu, "nu")?,
        },
    };
    noise.validate()?;
    Ok(noise)
}

fn parse_family(tag: &str) -> Result<HFamily, CliError> {
    serde_json::from_value(serde_json::json!({ "kind": tag }))
        .map_err(|_| CliError::Input(format!("unknown h family {tag:?}")))
}

fn base_config(c: &Common, command: &str) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.command = command.to_string();
    cfg.noise = noise_from_flags(c, cfg.noise)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.tau {
        cfg.tau = Some(t);
    }
    if let Some(d) = c.delta {
        cfg.delta = d;
    }
    if let Some(p) = c.x_points {
        cfg.x_points = p;
    }
    Ok(cfg)
}

fn apply_fit(cfg: &mut RunConfig, f: &FitArgs) {
    if f.x.is_some() {
        cfg.x = f.x.clone();
    }
    if f.y.is_some() {
        cfg.y = f.y.clone();
    }
    if f.psi.is_some() {
        cfg.psi = f.psi;
    }
    cfg.decreasing |= f.decreasing;
    if f.no_bands {
        cfg.bands = false;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, out_dir) = match &cli.command {
        Command::Fit {
            common,
            fit,
            upsilon,
        } => {
            let mut cfg = base_config(common, "fit")?;
            apply_fit(&mut cfg, fit);
            if upsilon.is_some() {
                cfg.upsilon = *upsilon;
            }
            (cfg, &common.out_dir)
        }
        Command::FitSep { common, fit } => {
            let mut cfg = base_config(common, "fit-sep")?;
            apply_fit(&mut cfg, fit);
            (cfg, &common.out_dir)
        }
        Command::Simulate {
            common,
            m,
            n,
            h_family,
            n_holdout,
        } => {
            let mut cfg = base_config(common, "simulate")?;
            cfg.m = m.unwrap_or(cfg.m);
            cfg.n = n.unwrap_or(cfg.n);
            cfg.n_holdout = n_holdout.unwrap_or(cfg.n_holdout);
            if let Some(tag) = h_family {
                cfg.h_family = parse_family(tag)?;
            }
            (cfg, &common.out_dir)
        }
        Command::Eval {
            common,
            link,
            holdout,
            group,
        } => {
            let mut cfg = base_config(common, "eval")?;
            if link.is_some() {
                cfg.link = link.clone();
            }
            if holdout.is_some() {
                cfg.holdout = holdout.clone();
            }
            if group.is_some() {
                cfg.group = group.clone();
            }
            (cfg, &common.out_dir)
        }
        Command::Experiment {
            common,
            repetitions,
            misspecified,
            h_family,
        } => {
            let mut cfg = base_config(common, "experiment")?;
            cfg.repetitions = repetitions.unwrap_or(cfg.repetitions);
            if *misspecified && cfg.misspecified.is_none() {
                cfg.misspecified = Some(MisspecSpec::default());
            }
            if let Some(tag) = h_family {
                cfg.h_family = parse_family(tag)?;
            }
            (cfg, &common.out_dir)
        }
    };
    cfg.validate()?;
    let written = match cfg.command.as_str() {
        "fit" => commands::fit(&cfg, out_dir)?,
        "fit-sep" => commands::fit_sep(&cfg, out_dir)?,
        "simulate" => commands::simulate_cmd(&cfg, out_dir)?,
        "eval" => {
            let (written, report) = commands::eval(&cfg, out_dir)?;
            print!("{report}");
            written
        }
        _ => commands::experiment(&cfg, out_dir)?,
    };
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
