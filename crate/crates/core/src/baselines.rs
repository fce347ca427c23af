//! Reference estimators: joint least squares on pilot positions, and
//! perfect channel knowledge.

use num_complex::Complex64;
use thiserror::Error;

use crate::channel::ChannelPair;
use crate::estimator::ParamVector;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("invalid pilot layout: {0}")]
    Layout(String),
    #[error("pilot design is rank deficient")]
    RankDeficient,
    #[error("input lengths differ: {0}")]
    LengthMismatch(String),
}

/// Where the pilots sit in a frame and how much energy each carries
/// relative to a data symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotLayout {
    positions: Vec<usize>,
    frame_len: usize,
    energy_factor: f64,
}

impl PilotLayout {
    pub fn new(mut positions: Vec<usize>, frame_len: usize, energy_factor: f64) -> Result<Self, BaselineError> {
        positions.sort_unstable();
        positions.dedup();
        if positions.len() < 2 {
            return Err(BaselineError::Layout("need at least two distinct pilots".into()));
        }
        if positions.last().is_some_and(|&p| p >= frame_len) {
            return Err(BaselineError::Layout(format!(
                "pilot position outside frame of {frame_len}"
            )));
        }
        if !(energy_factor > 0.0 && energy_factor.is_finite()) {
            return Err(BaselineError::Layout(format!(
                "energy factor must be positive, got {energy_factor}"
            )));
        }
        Ok(PilotLayout {
            positions,
            frame_len,
            energy_factor,
        })
    }

    /// Pilots in the first `n_pilots` slots, scaled so the frame's expected
    /// energy equals that of an all-data frame shifted with `beta`.
    pub fn leading(n_pilots: usize, frame_len: usize, beta: f64) -> Result<Self, BaselineError> {
        if n_pilots > frame_len {
            return Err(BaselineError::Layout(format!(
                "{n_pilots} pilots in a frame of {frame_len}"
            )));
        }
        Self::new(
            (0..n_pilots).collect(),
            frame_len,
            energy_parity_factor(frame_len, n_pilots, beta),
        )
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn n_pilots(&self) -> usize {
        self.positions.len()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn energy_factor(&self) -> f64 {
        self.energy_factor
    }

    /// Amplitude multiplier applied to a unit-energy-scaled pilot symbol.
    pub fn amplitude(&self) -> f64 {
        self.energy_factor.sqrt()
    }

    pub fn is_pilot(&self, index: usize) -> bool {
        self.positions.binary_search(&index).is_ok()
    }

    /// Frame indices that carry data.
    pub fn data_positions(&self) -> Vec<usize> {
        (0..self.frame_len).filter(|&i| !self.is_pilot(i)).collect()
    }

    /// Expected frame energy for data symbols of average energy `energy`.
    pub fn expected_frame_energy(&self, energy: f64) -> f64 {
        let p = self.n_pilots() as f64;
        let d = (self.frame_len - self.n_pilots()) as f64;
        energy * (p * self.energy_factor + d)
    }
}

/// Pilot energy multiplier that spends the whole extra `beta` budget of an
/// `n`-symbol frame on `n_pilots` pilots.
pub fn energy_parity_factor(n: usize, n_pilots: usize, beta: f64) -> f64 {
    1.0 + beta * n as f64 / n_pilots as f64
}

/// Expected energy of an all-data frame whose alphabet was shifted with `beta`.
pub fn shifted_frame_energy(n: usize, energy: f64, beta: f64) -> f64 {
    n as f64 * energy * (1.0 + beta)
}

/// Joint least squares of `(h_aa, h_ba)` from the pilot positions.
///
/// `pilots[j]` is node b's (scaled) pilot at `layout.positions()[j]`; `x_a`
/// is node a's full transmitted frame.
pub fn ls_pilot_estimate(
    y: &[Complex64],
    x_a: &[Complex64],
    pilots: &[Complex64],
    layout: &PilotLayout,
) -> Result<ParamVector, BaselineError> {
    if y.len() != x_a.len() || y.len() != layout.frame_len() || pilots.len() != layout.n_pilots() {
        return Err(BaselineError::LengthMismatch(format!(
            "{} observations, {} known symbols, {} pilots for a layout of {}/{}",
            y.len(),
            x_a.len(),
            pilots.len(),
            layout.n_pilots(),
            layout.frame_len()
        )));
    }
    // Gram matrix [[g_aa, g_ab], [conj g_ab, g_bb]] and right-hand side A^H y.
    let mut g_aa = 0.0;
    let mut g_bb = 0.0;
    let mut g_ab = Complex64::new(0.0, 0.0);
    let mut r_a = Complex64::new(0.0, 0.0);
    let mut r_b = Complex64::new(0.0, 0.0);
    for (&i, p) in layout.positions().iter().zip(pilots) {
        let a = x_a[i];
        g_aa += a.norm_sqr();
        g_bb += p.norm_sqr();
        g_ab += a.conj() * p;
        r_a += a.conj() * y[i];
        r_b += p.conj() * y[i];
    }
    let det = g_aa * g_bb - g_ab.norm_sqr();
    let scale = (g_aa + g_bb) * (g_aa + g_bb);
    if !(det > 1e-12 * scale) {
        return Err(BaselineError::RankDeficient);
    }
    let h_aa = (g_bb * r_a - g_ab * r_b) / det;
    let h_ba = (g_aa * r_b - g_ab.conj() * r_a) / det;
    Ok(ParamVector::from_gains(h_aa, h_ba))
}

/// The true gains, for the known-channel reference curve.
pub fn perfect_csi(ch: &ChannelPair) -> ParamVector {
    ParamVector::from_channels(ch)
}
