//! Trial orchestration, parameter sweeps and aggregation.
//!
//! Every `(sweep point, trial)` pair gets its own seed derived from the
//! master seed, so trials can run in any order on any number of threads and
//! the aggregated output stays bit-identical.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{ls_pilot_estimate, perfect_csi, PilotLayout};
use crate::bounds::{mse_lower_bound, mse_lower_bound_complex};
use crate::channel::{assemble_frame, db_to_linear, ChannelPair, FadingConfig, TrialStreams};
use crate::constellation::{make_qam, shift, Constellation, ShiftedConstellation};
use crate::detection::cancel_and_detect;
use crate::estimator::{em_estimate, EmOptions, ParamVector};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid experiment configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Em,
    Pilot,
    Perfect,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Em => "em",
            EstimatorKind::Pilot => "pilot",
            EstimatorKind::Perfect => "perfect",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "em" => Ok(EstimatorKind::Em),
            "pilot" => Ok(EstimatorKind::Pilot),
            "perfect" => Ok(EstimatorKind::Perfect),
            other => Err(ConfigError::Invalid(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub order: usize,
    pub frame_len: usize,
    pub betas: Vec<f64>,
    /// Shift fraction for node b; `None` reuses each grid value of `betas`.
    pub beta_b: Option<f64>,
    pub eb_n0_db: Vec<f64>,
    pub sir_db: Vec<f64>,
    pub rician_k: f64,
    pub var_h_ba: f64,
    pub n0: f64,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub n_pilots: usize,
    /// Pilot energy multiplier; `None` matches the shifted scheme's frame energy.
    pub pilot_energy_factor: Option<f64>,
    pub em: EmOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            order: 16,
            frame_len: 128,
            betas: vec![0.2],
            beta_b: None,
            eb_n0_db: vec![10.0],
            sir_db: vec![-50.0],
            rician_k: 1.0,
            var_h_ba: 1.0,
            n0: 1.0,
            trials: 500,
            seed: 1,
            estimators: vec![EstimatorKind::Em, EstimatorKind::Pilot, EstimatorKind::Perfect],
            n_pilots: 64,
            pilot_energy_factor: None,
            em: EmOptions::default(),
        }
    }
}

/// One point of the Cartesian sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub beta: f64,
    pub eb_n0_db: f64,
    pub sir_db: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !matches!(self.order, 4 | 16 | 64) {
            return bad(format!("order must be 4, 16 or 64, got {}", self.order));
        }
        if self.frame_len < 4 {
            return bad(format!("frame length must be at least 4, got {}", self.frame_len));
        }
        if self.betas.is_empty() || self.eb_n0_db.is_empty() || self.sir_db.is_empty() {
            return bad("sweep grids must be non-empty".into());
        }
        if let Some(b) = self.betas.iter().chain(&self.beta_b).find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return bad(format!("beta must lie in (0, 1], got {b}"));
        }
        if self.eb_n0_db.iter().chain(&self.sir_db).any(|v| !v.is_finite()) {
            return bad("non-finite grid value".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return bad("no estimators selected".into());
        }
        if !(self.rician_k >= 0.0 && self.var_h_ba > 0.0 && self.n0 > 0.0) {
            return bad("rician_k must be >= 0, var_h_ba and n0 > 0".into());
        }
        if self.estimators.contains(&EstimatorKind::Pilot) && (self.n_pilots < 2 || self.n_pilots > self.frame_len) {
            return bad(format!("n_pilots must lie in [2, {}], got {}", self.frame_len, self.n_pilots));
        }
        if self.pilot_energy_factor.is_some_and(|f| !(f > 0.0)) {
            return bad("pilot_energy_factor must be positive".into());
        }
        if self.em.max_iter == 0 || !(self.em.tol > 0.0) {
            return bad("em_max_iter must be >= 1 and em_tol > 0".into());
        }
        Ok(())
    }

    /// Grid points in row-major order: beta outermost, then Eb/N0, then SIR.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.betas.len() * self.eb_n0_db.len() * self.sir_db.len());
        for &beta in &self.betas {
            for &eb_n0_db in &self.eb_n0_db {
                for &sir_db in &self.sir_db {
                    out.push(SweepPoint { beta, eb_n0_db, sir_db });
                }
            }
        }
        out
    }

    /// Pre-shift average symbol energy at `eb_n0_db` (`N0` fixed, `E = Eb log2 M`).
    pub fn symbol_energy(&self, eb_n0_db: f64) -> f64 {
        db_to_linear(eb_n0_db) * self.n0 * (self.order as f64).log2()
    }
}

/// Everything a trial needs at one sweep point, built once per point.
#[derive(Debug, Clone)]
pub struct PointSetup {
    pub point: SweepPoint,
    pub base: Constellation,
    pub alphabet_a: ShiftedConstellation,
    pub alphabet_b: ShiftedConstellation,
    pub fading: FadingConfig,
    pub layout: Option<PilotLayout>,
    pub estimators: Vec<EstimatorKind>,
    pub em: EmOptions,
    pub frame_len: usize,
}

impl PointSetup {
    pub fn new(cfg: &ExperimentConfig, point: SweepPoint) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let err = |e: crate::constellation::ConstellationError| ConfigError::Invalid(e.to_string());
        let eb = db_to_linear(point.eb_n0_db) * cfg.n0;
        let base = make_qam(cfg.order, eb).map_err(err)?;
        let alphabet_a = shift(&base, point.beta).map_err(err)?;
        let alphabet_b = shift(&base, cfg.beta_b.unwrap_or(point.beta)).map_err(err)?;
        let fading = FadingConfig {
            var_h_ba: cfg.var_h_ba,
            sir_db: point.sir_db,
            rician_k: cfg.rician_k,
            n0: cfg.n0,
        };
        let layout = if cfg.estimators.contains(&EstimatorKind::Pilot) {
            let l = match cfg.pilot_energy_factor {
                Some(f) => PilotLayout::new((0..cfg.n_pilots).collect(), cfg.frame_len, f),
                None => PilotLayout::leading(cfg.n_pilots, cfg.frame_len, point.beta),
            };
            Some(l.map_err(|e| ConfigError::Invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(PointSetup {
            point,
            base,
            alphabet_a,
            alphabet_b,
            fading,
            layout,
            estimators: cfg.estimators.clone(),
            em: cfg.em,
            frame_len: cfg.frame_len,
        })
    }

    pub fn noise_var(&self) -> f64 {
        self.fading.n0
    }

    /// Per-coordinate variance bound at this point.
    pub fn bound_per_coordinate(&self) -> f64 {
        mse_lower_bound(self.frame_len, self.base.avg_energy(), self.point.beta, self.noise_var())
    }

    /// Bound on `E|h_hat - h|^2` at this point.
    pub fn bound(&self) -> f64 {
        mse_lower_bound_complex(self.frame_len, self.base.avg_energy(), self.point.beta, self.noise_var())
    }
}

/// Result of one estimator on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutcome {
    pub kind: EstimatorKind,
    /// `None` when the estimator failed (degenerate trial).
    pub estimate: Option<ParamVector>,
    /// Squared error per coordinate `[re, im]`.
    pub sq_err_haa: [f64; 2],
    pub sq_err_hba: [f64; 2],
    pub bit_errors: usize,
    pub bits: usize,
}

impl EstimatorOutcome {
    pub fn degenerate(&self) -> bool {
        self.estimate.is_none()
    }

    /// `|h_hat_aa - h_aa|^2`.
    pub fn sq_err_haa_complex(&self) -> f64 {
        self.sq_err_haa[0] + self.sq_err_haa[1]
    }

    /// `|h_hat_ba - h_ba|^2`.
    pub fn sq_err_hba_complex(&self) -> f64 {
        self.sq_err_hba[0] + self.sq_err_hba[1]
    }

    fn failed(kind: EstimatorKind) -> Self {
        EstimatorOutcome {
            kind,
            estimate: None,
            sq_err_haa: [0.0; 2],
            sq_err_hba: [0.0; 2],
            bit_errors: 0,
            bits: 0,
        }
    }

    fn scored(kind: EstimatorKind, est: ParamVector, truth: &ParamVector, bit_errors: usize, bits: usize) -> Self {
        let sq = |l: usize| (est.0[l] - truth.0[l]).powi(2);
        EstimatorOutcome {
            kind,
            estimate: Some(est),
            sq_err_haa: [sq(0), sq(1)],
            sq_err_hba: [sq(2), sq(3)],
            bit_errors,
            bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub channels: ChannelPair,
    pub outcomes: Vec<EstimatorOutcome>,
    pub em_iterations: Option<usize>,
    pub em_converged: Option<bool>,
}

impl TrialResult {
    pub fn outcome(&self, kind: EstimatorKind) -> Option<&EstimatorOutcome> {
        self.outcomes.iter().find(|o| o.kind == kind)
    }
}

/// Convenience wrapper: builds the point setup and runs one trial.
pub fn run_trial(cfg: &ExperimentConfig, point: SweepPoint, seed: u64) -> Result<TrialResult, ConfigError> {
    let setup = PointSetup::new(cfg, point)?;
    Ok(run_trial_with(&setup, seed))
}

/// Draws one channel/symbol/noise realisation and runs every selected
/// estimator on it. The pilot scheme sees the same gains, node-a/node-b
/// symbol draws and noise, but with unshifted data symbols and pilots.
pub fn run_trial_with(setup: &PointSetup, seed: u64) -> TrialResult {
    let n = setup.frame_len;
    let order = setup.base.order();
    let mut streams = TrialStreams::new(seed);
    let ch = streams.channels(&setup.fading);
    let (a_idx, b_idx) = streams.symbol_indices(n, order, order);
    let noise = streams.noise(n, ch.noise_var);
    let frame = assemble_frame(&setup.alphabet_a, &setup.alphabet_b, &a_idx, &b_idx, &noise, &ch);
    let truth = ParamVector::from_channels(&ch);
    let alphabet_b = setup.alphabet_b.alphabet();

    let mut outcomes = Vec::with_capacity(setup.estimators.len());
    let mut em_iterations = None;
    let mut em_converged = None;
    for &kind in &setup.estimators {
        let outcome = match kind {
            EstimatorKind::Em => match em_estimate(&frame.y, &frame.x_a, alphabet_b.points(), ch.noise_var, &setup.em) {
                Ok(report) => {
                    em_iterations = Some(report.iterations);
                    em_converged = Some(report.converged);
                    let det = cancel_and_detect(&frame.y, &frame.x_a, &report.estimate, alphabet_b, &frame.b_indices);
                    EstimatorOutcome::scored(kind, report.estimate, &truth, det.bit_errors, det.bits_hat.len())
                }
                Err(_) => EstimatorOutcome::failed(kind),
            },
            EstimatorKind::Perfect => {
                let est = perfect_csi(&ch);
                let det = cancel_and_detect(&frame.y, &frame.x_a, &est, alphabet_b, &frame.b_indices);
                EstimatorOutcome::scored(kind, est, &truth, det.bit_errors, det.bits_hat.len())
            }
            EstimatorKind::Pilot => {
                let layout = setup.layout.as_ref().expect("pilot layout built for pilot estimator");
                pilot_trial(setup, layout, &mut streams, &a_idx, &b_idx, &noise, &ch, &truth)
            }
        };
        outcomes.push(outcome);
    }

    TrialResult {
        seed,
        channels: ch,
        outcomes,
        em_iterations,
        em_converged,
    }
}

#[allow(clippy::too_many_arguments)]
fn pilot_trial(
    setup: &PointSetup,
    layout: &PilotLayout,
    streams: &mut TrialStreams,
    a_idx: &[usize],
    b_idx: &[usize],
    noise: &[Complex64],
    ch: &ChannelPair,
    truth: &ParamVector,
) -> EstimatorOutcome {
    let base = setup.base.points();
    let amp = layout.amplitude();
    let pilot_idx: Vec<usize> = (0..layout.n_pilots())
        .map(|_| streams.pilots.random_range(0..base.len()))
        .collect();
    let pilots: Vec<Complex64> = pilot_idx.iter().map(|&k| base[k] * amp).collect();

    let mut x_a: Vec<Complex64> = a_idx.iter().map(|&k| base[k]).collect();
    let mut x_b: Vec<Complex64> = b_idx.iter().map(|&k| base[k]).collect();
    for (&pos, p) in layout.positions().iter().zip(&pilots) {
        x_a[pos] *= amp;
        x_b[pos] = *p;
    }
    let y: Vec<Complex64> = x_a
        .iter()
        .zip(&x_b)
        .zip(noise)
        .map(|((a, b), w)| ch.h_aa * a + ch.h_ba * b + w)
        .collect();

    let est = match ls_pilot_estimate(&y, &x_a, &pilots, layout) {
        Ok(e) => e,
        Err(_) => return EstimatorOutcome::failed(EstimatorKind::Pilot),
    };
    let data = layout.data_positions();
    if data.is_empty() {
        return EstimatorOutcome::scored(EstimatorKind::Pilot, est, truth, 0, 0);
    }
    let pick = |v: &[Complex64]| data.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let tx: Vec<usize> = data.iter().map(|&i| b_idx[i]).collect();
    let det = cancel_and_detect(&pick(&y), &pick(&x_a), &est, &setup.base, &tx);
    EstimatorOutcome::scored(EstimatorKind::Pilot, est, truth, det.bit_errors, det.bits_hat.len())
}

/// Seed of trial `trial` at grid point `point`.
pub fn trial_seed(master: u64, point: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ point as u64) ^ trial as u64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One CSV row: an estimator's aggregate at one sweep point. MSE and bound
/// are per complex gain (`E|h_hat - h|^2`, two coordinates).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub point: SweepPoint,
    pub estimator: EstimatorKind,
    pub mse_hba: f64,
    pub mse_haa: f64,
    /// Pooled bit error rate; `None` when no data bits were sent.
    pub ber: Option<f64>,
    pub bit_errors: usize,
    pub bits: usize,
    pub bound: f64,
    pub trials_used: usize,
    pub degenerate: usize,
    pub mean_em_iterations: Option<f64>,
}

impl AggregateRow {
    pub fn mse_hba_db(&self) -> f64 {
        to_db(self.mse_hba)
    }

    pub fn mse_haa_db(&self) -> f64 {
        to_db(self.mse_haa)
    }

    pub fn bound_db(&self) -> f64 {
        to_db(self.bound)
    }

    pub fn mse_hba_per_coordinate(&self) -> f64 {
        self.mse_hba / 2.0
    }

    pub fn bound_per_coordinate(&self) -> f64 {
        self.bound / 2.0
    }
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Folds the trials of one point into one row per estimator.
pub fn aggregate(setup: &PointSetup, trials: &[TrialResult]) -> Vec<AggregateRow> {
    let iterations: Vec<usize> = trials.iter().filter_map(|t| t.em_iterations).collect();
    let mean_iter = (!iterations.is_empty())
        .then(|| iterations.iter().sum::<usize>() as f64 / iterations.len() as f64);
    setup
        .estimators
        .iter()
        .map(|&kind| {
            let mut used = 0usize;
            let mut degenerate = 0usize;
            let (mut se_ba, mut se_aa) = (0.0, 0.0);
            let (mut bit_errors, mut bits) = (0usize, 0usize);
            for o in trials.iter().filter_map(|t| t.outcome(kind)) {
                if o.degenerate() {
                    degenerate += 1;
                    continue;
                }
                used += 1;
                se_ba += o.sq_err_hba_complex();
                se_aa += o.sq_err_haa_complex();
                bit_errors += o.bit_errors;
                bits += o.bits;
            }
            let mean = |s: f64| if used > 0 { s / used as f64 } else { f64::NAN };
            AggregateRow {
                point: setup.point,
                estimator: kind,
                mse_hba: mean(se_ba),
                mse_haa: mean(se_aa),
                ber: (bits > 0).then(|| bit_errors as f64 / bits as f64),
                bit_errors,
                bits,
                bound: setup.bound(),
                trials_used: used,
                degenerate,
                mean_em_iterations: (kind == EstimatorKind::Em).then_some(mean_iter).flatten(),
            }
        })
        .collect()
}

/// Runs every grid point, trials in parallel, and aggregates.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<AggregateRow>, ConfigError> {
    let setups = cfg
        .points()
        .into_iter()
        .map(|p| PointSetup::new(cfg, p))
        .collect::<Result<Vec<_>, _>>()?;
    let trials = cfg.trials;
    let results: Vec<TrialResult> = (0..setups.len() * trials)
        .into_par_iter()
        .map(|slot| {
            let (p, t) = (slot / trials, slot % trials);
            run_trial_with(&setups[p], trial_seed(cfg.seed, p, t))
        })
        .collect();
    Ok(setups
        .iter()
        .zip(results.chunks(trials))
        .flat_map(|(setup, chunk)| aggregate(setup, chunk))
        .collect())
}

pub const CSV_HEADER: &str =
    "beta,eb_n0_db,sir_db,estimator,mse_hba,mse_hba_db,mse_haa,mse_haa_db,ber,bound,bound_db,trials_used,degenerate";

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "nan".to_string()
    }
}

/// CSV text with header; floats carry 17 significant digits.
pub fn to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f(r.point.beta),
            fmt_f(r.point.eb_n0_db),
            fmt_f(r.point.sir_db),
            r.estimator,
            fmt_f(r.mse_hba),
            fmt_f(r.mse_hba_db()),
            fmt_f(r.mse_haa),
            fmt_f(r.mse_haa_db()),
            fmt_f(r.ber.unwrap_or(f64::NAN)),
            fmt_f(r.bound),
            fmt_f(r.bound_db()),
            r.trials_used,
            r.degenerate
        );
    }
    out
}
