//! Command-line frontend: argument parsing, the flat `key = value`
//! experiment file, and subcommand dispatch.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bounds::{mse_lower_bound, mse_lower_bound_complex};
use crate::channel::db_to_linear;
use crate::constellation::{check_symmetry, make_qam, shift, Constellation};
use crate::estimator::{em_estimate, EmOptions};
use crate::montecarlo::{self, run_trial_with, EstimatorKind, ExperimentConfig, PointSetup, SweepPoint};

/// Trial count restored by `--full`.
pub const FULL_TRIALS: usize = 5000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error(transparent)]
    Experiment(#[from] montecarlo::ConfigError),
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser, PartialEq)]
#[command(name = "fdshift", version, about = "Shifted-constellation channel estimation for full-duplex links")]
pub struct CliInvocation {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, PartialEq)]
pub enum Command {
    /// Run a Monte Carlo sweep described by a config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the trial count of the config file.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the master seed of the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Use 5000 trials per point.
        #[arg(long)]
        full: bool,
    },
    /// Print the per-coordinate MSE bound over a grid of parameters as CSV.
    Bound {
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        e: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        beta: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        sigma2: Vec<f64>,
    },
    /// Report whether an alphabet is symmetric about the origin.
    CheckConstellation {
        /// Constellation file with one `re,im` line per point.
        #[arg(long, conflicts_with = "qam", required_unless_present = "qam")]
        file: Option<PathBuf>,
        /// Use a generated square QAM of this order instead of a file.
        #[arg(long)]
        qam: Option<usize>,
        /// Bit energy for `--qam`.
        #[arg(long, default_value_t = 1.0)]
        eb: f64,
        /// Shift the alphabet with this energy fraction before checking.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = crate::constellation::DEFAULT_SYMMETRY_TOL)]
        tol: f64,
        /// Also write the checked alphabet to this file.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Run EM on one simulated frame and print its iteration trace.
    DemoEm {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        eb_n0_db: f64,
        #[arg(long, default_value_t = 0.2)]
        beta: f64,
        #[arg(long, default_value_t = -50.0, allow_negative_numbers = true)]
        sir_db: f64,
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        order: usize,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

pub fn parse_args<I, T>(argv: I) -> Result<CliInvocation, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    CliInvocation::try_parse_from(argv)
}

/// Dispatches a parsed invocation, writing human-readable output to `out`.
pub fn run(inv: &CliInvocation, out: &mut dyn Write) -> Result<(), CliError> {
    let w = |e: std::io::Error| CliError::Other(format!("stdout: {e}"));
    match &inv.command {
        Command::Sweep {
            config,
            out: dir,
            trials,
            seed,
            full,
        } => {
            let text = fs::read_to_string(config).map_err(io_err(config))?;
            let mut cfg = parse_config(&text)?;
            if *full {
                cfg.trials = FULL_TRIALS;
            }
            if let Some(t) = trials {
                cfg.trials = *t;
            }
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            let rows = montecarlo::sweep(&cfg)?;
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let csv_path = dir.join("sweep.csv");
            fs::write(&csv_path, montecarlo::to_csv(&rows)).map_err(io_err(&csv_path))?;
            let meta_path = dir.join("meta.txt");
            fs::write(&meta_path, metadata(&cfg)).map_err(io_err(&meta_path))?;
            writeln!(out, "wrote {} rows to {}", rows.len(), csv_path.display()).map_err(w)?;
        }
        Command::Bound { n, e, beta, sigma2 } => {
            if let Some(bad) = beta.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
                return Err(CliError::Other(format!("beta must lie in (0, 1], got {bad}")));
            }
            if n.contains(&0) || e.iter().chain(sigma2).any(|v| !(*v > 0.0)) {
                return Err(CliError::Other("n, e and sigma2 must be positive".into()));
            }
            writeln!(out, "n,e,beta,sigma2,bound,bound_complex,bound_db").map_err(w)?;
            for &n in n {
                for &e in e {
                    for &b in beta {
                        for &s2 in sigma2 {
                            let lb = mse_lower_bound(n, e, b, s2);
                            writeln!(
                                out,
                                "{n},{e},{b},{s2},{lb:.16e},{:.16e},{:.16e}",
                                mse_lower_bound_complex(n, e, b, s2),
                                montecarlo::to_db(lb)
                            )
                            .map_err(w)?;
                        }
                    }
                }
            }
        }
        Command::CheckConstellation {
            file,
            qam,
            eb,
            beta,
            tol,
            emit,
        } => {
            let base = match (file, qam) {
                (Some(path), _) => {
                    let text = fs::read_to_string(path).map_err(io_err(path))?;
                    Constellation::from_text(&text).map_err(|e| CliError::Other(e.to_string()))?
                }
                (None, Some(order)) => make_qam(*order, *eb).map_err(|e| CliError::Other(e.to_string()))?,
                (None, None) => return Err(CliError::Other("need --file or --qam".into())),
            };
            let checked = match beta {
                Some(b) => shift(&base, *b)
                    .map_err(|e| CliError::Other(e.to_string()))?
                    .alphabet()
                    .clone(),
                None => base,
            };
            if let Some(path) = emit {
                fs::write(path, checked.to_text()).map_err(io_err(path))?;
            }
            writeln!(out, "points: {}", checked.order()).map_err(w)?;
            writeln!(out, "average energy: {:.16e}", checked.avg_energy()).map_err(w)?;
            match check_symmetry(&checked, *tol) {
                Some(wit) => {
                    writeln!(
                        out,
                        "symmetric: witness c={}{:+}j, orbit length {}",
                        fmt_clean(wit.ratio.re),
                        fmt_clean(wit.ratio.im),
                        wit.orbit_length
                    )
                    .map_err(w)?;
                    writeln!(out, "permutation: {:?}", wit.permutation).map_err(w)?;
                    writeln!(out, "channels are NOT identifiable with this alphabet").map_err(w)?;
                }
                None => writeln!(out, "no symmetry witness: identifiable").map_err(w)?,
            }
        }
        Command::DemoEm {
            seed,
            eb_n0_db,
            beta,
            sir_db,
            n,
            order,
            max_iter,
            tol,
        } => demo_em(out, *seed, *eb_n0_db, *beta, *sir_db, *n, *order, EmOptions { max_iter: *max_iter, tol: *tol })?,
    }
    Ok(())
}

fn fmt_clean(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        0.0
    } else {
        x
    }
}

#[allow(clippy::too_many_arguments)]
fn demo_em(
    out: &mut dyn Write,
    seed: u64,
    eb_n0_db: f64,
    beta: f64,
    sir_db: f64,
    n: usize,
    order: usize,
    em: EmOptions,
) -> Result<(), CliError> {
    let w = |e: std::io::Error| CliError::Other(format!("stdout: {e}"));
    let cfg = ExperimentConfig {
        order,
        frame_len: n,
        betas: vec![beta],
        eb_n0_db: vec![eb_n0_db],
        sir_db: vec![sir_db],
        estimators: vec![EstimatorKind::Perfect],
        em,
        ..ExperimentConfig::default()
    };
    let setup = PointSetup::new(&cfg, SweepPoint { beta, eb_n0_db, sir_db })?;
    // Reuse the trial machinery for the draws, then run EM explicitly for its trace.
    let trial = run_trial_with(&setup, seed);
    let mut streams = crate::channel::TrialStreams::new(seed);
    let ch = streams.channels(&setup.fading);
    let (a_idx, b_idx) = streams.symbol_indices(n, order, order);
    let noise = streams.noise(n, ch.noise_var);
    let frame = crate::channel::assemble_frame(&setup.alphabet_a, &setup.alphabet_b, &a_idx, &b_idx, &noise, &ch);
    debug_assert_eq!(trial.channels, ch);

    let report = em_estimate(&frame.y, &frame.x_a, setup.alphabet_b.points(), ch.noise_var, &em)
        .map_err(|e| CliError::Other(e.to_string()))?;
    writeln!(out, "true h_aa = {:.6}  h_ba = {:.6}", ch.h_aa, ch.h_ba).map_err(w)?;
    writeln!(out, "iteration,loglik").map_err(w)?;
    for (i, ll) in report.loglik_trace.iter().enumerate() {
        writeln!(out, "{i},{ll:.10}").map_err(w)?;
    }
    let est = report.estimate;
    writeln!(out, "estimate h_aa = {:.6}  h_ba = {:.6}", est.h_aa(), est.h_ba()).map_err(w)?;
    writeln!(
        out,
        "iterations = {}  converged = {}  hessian_psd = {}",
        report.iterations, report.converged, report.hessian_psd
    )
    .map_err(w)?;
    writeln!(
        out,
        "|h_ba error|^2 = {:.6e}  bound = {:.6e}",
        (est.h_ba() - ch.h_ba).norm_sqr(),
        setup.bound()
    )
    .map_err(w)?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_one<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

/// Parses the flat `key = value` experiment format. Unset keys keep the
/// defaults of [`ExperimentConfig::default`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| CliError::Config { line: n + 1, reason };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let r: Result<(), String> = (|| {
            match key {
                "order" => cfg.order = parse_one(value)?,
                "frame_len" | "n" => cfg.frame_len = parse_one(value)?,
                "beta" => cfg.betas = parse_list(value)?,
                "beta_b" => cfg.beta_b = Some(parse_one(value)?),
                "eb_n0_db" => cfg.eb_n0_db = parse_list(value)?,
                "sir_db" => cfg.sir_db = parse_list(value)?,
                "rician_k" => cfg.rician_k = parse_one(value)?,
                "rician_k_db" => cfg.rician_k = db_to_linear(parse_one(value)?),
                "var_h_ba" => cfg.var_h_ba = parse_one(value)?,
                "n0" => cfg.n0 = parse_one(value)?,
                "trials" => cfg.trials = parse_one(value)?,
                "seed" => cfg.seed = parse_one(value)?,
                "estimators" => cfg.estimators = parse_list(value)?,
                "n_pilots" => cfg.n_pilots = parse_one(value)?,
                "pilot_energy_factor" => cfg.pilot_energy_factor = Some(parse_one(value)?),
                "em_max_iter" => cfg.em.max_iter = parse_one(value)?,
                "em_tol" => cfg.em.tol = parse_one(value)?,
                other => return Err(format!("unknown key `{other}`")),
            }
            Ok(())
        })();
        r.map_err(err)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Canonical config text; parsing it back yields the same config.
pub fn config_to_text(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "order = {}", cfg.order);
    let _ = writeln!(s, "frame_len = {}", cfg.frame_len);
    let _ = writeln!(s, "beta = {}", join(&cfg.betas));
    if let Some(b) = cfg.beta_b {
        let _ = writeln!(s, "beta_b = {b}");
    }
    let _ = writeln!(s, "eb_n0_db = {}", join(&cfg.eb_n0_db));
    let _ = writeln!(s, "sir_db = {}", join(&cfg.sir_db));
    let _ = writeln!(s, "rician_k = {}", cfg.rician_k);
    let _ = writeln!(s, "var_h_ba = {}", cfg.var_h_ba);
    let _ = writeln!(s, "n0 = {}", cfg.n0);
    let _ = writeln!(s, "trials = {}", cfg.trials);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "estimators = {}", join(&cfg.estimators));
    let _ = writeln!(s, "n_pilots = {}", cfg.n_pilots);
    if let Some(f) = cfg.pilot_energy_factor {
        let _ = writeln!(s, "pilot_energy_factor = {f}");
    }
    let _ = writeln!(s, "em_max_iter = {}", cfg.em.max_iter);
    let _ = writeln!(s, "em_tol = {}", cfg.em.tol);
    s
}

/// Contents of `meta.txt`: enough to rerun the sweep bit-for-bit.
pub fn metadata(cfg: &ExperimentConfig) -> String {
    let text = config_to_text(cfg);
    let digest = Sha256::digest(text.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let mut s = String::new();
    let _ = writeln!(s, "tool = fdshift {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "config_sha256 = {hex}");
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "trials = {}", cfg.trials);
    let _ = writeln!(
        s,
        "mse_convention = mse_* and bound are per complex gain, E|h_hat - h|^2; per-coordinate values are half"
    );
    let _ = writeln!(s, "bit_labeling = reflected Gray per I/Q axis, symbol index bits MSB first");
    let _ = writeln!(s, "energy = E = Eb*log2(M) before the shift, noise variance = n0");
    let _ = writeln!(s, "\n# config");
    s.push_str(&text);
    s
}
