//! Fading gains, AWGN, and received-frame synthesis for the two-node
//! full-duplex link `y = h_aa x_a + h_ba x_b + w`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::constellation::ShiftedConstellation;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("symbol vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("negative or non-finite noise variance {0}")]
    NoiseVariance(f64),
}

/// Residual self-interference gain, communication gain, and noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPair {
    pub h_aa: Complex64,
    pub h_ba: Complex64,
    pub noise_var: f64,
}

/// Channel statistics for one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingConfig {
    /// Rayleigh variance of the communication channel.
    pub var_h_ba: f64,
    /// Signal-to-interference ratio `var_h_ba / var_h_aa` in dB.
    pub sir_db: f64,
    /// Rician K-factor of the residual SI channel, linear.
    pub rician_k: f64,
    /// Noise power spectral density; the per-sample noise variance.
    pub n0: f64,
}

impl Default for FadingConfig {
    fn default() -> Self {
        FadingConfig {
            var_h_ba: 1.0,
            sir_db: -50.0,
            rician_k: 1.0,
            n0: 1.0,
        }
    }
}

impl FadingConfig {
    pub fn var_h_aa(&self) -> f64 {
        self.var_h_ba / db_to_linear(self.sir_db)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Circularly-symmetric complex Gaussian draw with total variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sd * re, sd * im)
}

/// Rayleigh communication gain, `CN(0, var_h_ba)`.
pub fn sample_h_ba<R: Rng + ?Sized>(cfg: &FadingConfig, rng: &mut R) -> Complex64 {
    complex_gaussian(cfg.var_h_ba, rng)
}

/// Rician SI gain with a uniformly distributed line-of-sight phase.
pub fn sample_h_aa<R: Rng + ?Sized>(cfg: &FadingConfig, rng: &mut R) -> Complex64 {
    let zeta = rng.random_range(0.0..TAU);
    rician_gain(cfg, zeta, rng)
}

/// Rician SI gain for a given LOS phase `zeta`; only the diffuse part is drawn.
pub fn rician_gain<R: Rng + ?Sized>(cfg: &FadingConfig, zeta: f64, rng: &mut R) -> Complex64 {
    let k = cfg.rician_k;
    let var = cfg.var_h_aa();
    let los = (k / (k + 1.0)).sqrt() * var.sqrt() * Complex64::from_polar(1.0, zeta);
    let diffuse = (1.0 / (k + 1.0)).sqrt() * complex_gaussian(var, rng);
    los + diffuse
}

/// `y_i = h_aa x_a_i + h_ba x_b_i + w_i`, `w_i ~ CN(0, noise_var)`.
/// A zero noise variance yields the noiseless superposition.
pub fn synthesize_frame<R: Rng + ?Sized>(
    x_a: &[Complex64],
    x_b: &[Complex64],
    ch: &ChannelPair,
    rng: &mut R,
) -> Result<Vec<Complex64>, FrameError> {
    if x_a.len() != x_b.len() {
        return Err(FrameError::LengthMismatch(x_a.len(), x_b.len()));
    }
    if !(ch.noise_var >= 0.0 && ch.noise_var.is_finite()) {
        return Err(FrameError::NoiseVariance(ch.noise_var));
    }
    Ok(x_a
        .iter()
        .zip(x_b)
        .map(|(a, b)| {
            let clean = ch.h_aa * a + ch.h_ba * b;
            if ch.noise_var > 0.0 {
                clean + complex_gaussian(ch.noise_var, rng)
            } else {
                clean
            }
        })
        .collect())
}

/// Signal-to-interference-plus-noise ratio (linear) for bit energy `eb`.
pub fn sinr(cfg: &FadingConfig, eb: f64, order: usize) -> f64 {
    let sir = db_to_linear(cfg.sir_db);
    let snr = cfg.var_h_ba * (order as f64).log2() * eb / cfg.n0;
    1.0 / (1.0 / sir + 1.0 / snr)
}

/// One transmitted frame at node a: both nodes' symbols and the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub x_a: Vec<Complex64>,
    pub x_b: Vec<Complex64>,
    /// Alphabet indices of node b's symbols; their labels are the payload bits.
    pub b_indices: Vec<usize>,
    pub y: Vec<Complex64>,
}

/// Independent generator streams for one trial. Every stream is a ChaCha8
/// keyed by the trial seed with its own stream id, so the draws of one
/// quantity never depend on how many draws another quantity consumed.
#[derive(Debug, Clone)]
pub struct TrialStreams {
    pub h_ba: ChaCha8Rng,
    pub h_aa: ChaCha8Rng,
    pub zeta: ChaCha8Rng,
    pub symbols_a: ChaCha8Rng,
    pub symbols_b: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub pilots: ChaCha8Rng,
}

impl TrialStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        TrialStreams {
            h_ba: stream(0),
            h_aa: stream(1),
            zeta: stream(2),
            symbols_a: stream(3),
            symbols_b: stream(4),
            noise: stream(5),
            pilots: stream(6),
        }
    }

    /// Draws the channel pair for this trial.
    pub fn channels(&mut self, cfg: &FadingConfig) -> ChannelPair {
        let h_ba = sample_h_ba(cfg, &mut self.h_ba);
        let zeta = self.zeta.random_range(0.0..TAU);
        let h_aa = rician_gain(cfg, zeta, &mut self.h_aa);
        ChannelPair {
            h_aa,
            h_ba,
            noise_var: cfg.n0,
        }
    }

    /// Uniform symbol indices for both nodes.
    pub fn symbol_indices(&mut self, n: usize, order_a: usize, order_b: usize) -> (Vec<usize>, Vec<usize>) {
        let a = (0..n).map(|_| self.symbols_a.random_range(0..order_a)).collect();
        let b = (0..n).map(|_| self.symbols_b.random_range(0..order_b)).collect();
        (a, b)
    }

    /// `n` noise samples of variance `noise_var`.
    pub fn noise(&mut self, n: usize, noise_var: f64) -> Vec<Complex64> {
        (0..n).map(|_| complex_gaussian(noise_var, &mut self.noise)).collect()
    }
}

/// Builds a frame from index draws and pre-drawn noise so that several
/// schemes can share one noise realisation.
pub fn assemble_frame(
    alphabet_a: &ShiftedConstellation,
    alphabet_b: &ShiftedConstellation,
    a_indices: &[usize],
    b_indices: &[usize],
    noise: &[Complex64],
    ch: &ChannelPair,
) -> Frame {
    let x_a: Vec<Complex64> = a_indices.iter().map(|&k| alphabet_a.points()[k]).collect();
    let x_b: Vec<Complex64> = b_indices.iter().map(|&k| alphabet_b.points()[k]).collect();
    let y = x_a
        .iter()
        .zip(&x_b)
        .zip(noise)
        .map(|((a, b), w)| ch.h_aa * a + ch.h_ba * b + w)
        .collect();
    Frame {
        x_a,
        x_b,
        b_indices: b_indices.to_vec(),
        y,
    }
}
