//! Expectation-maximisation estimator for the SI and communication gains.
//!
//! Node b's symbols are hidden data drawn uniformly from a known (shifted)
//! alphabet; node a's own symbols are known. The E-step computes the
//! per-observation posterior over node b's alphabet, the M-step solves the
//! resulting weighted least-squares problem in closed form.

use num_complex::Complex64;
use thiserror::Error;

use crate::channel::ChannelPair;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("input lengths differ: {0}")]
    LengthMismatch(String),
    #[error("singular M-step system at iteration {iteration} (s1*s4 - s2^2 - s3^2 = {det:e})")]
    DegenerateUpdate { iteration: usize, det: f64 },
    #[error("non-finite update at iteration {iteration}")]
    Diverged { iteration: usize, loglik_trace: Vec<f64> },
}

/// `[Re h_aa, Im h_aa, Re h_ba, Im h_ba]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamVector(pub [f64; 4]);

impl ParamVector {
    pub fn from_gains(h_aa: Complex64, h_ba: Complex64) -> Self {
        ParamVector([h_aa.re, h_aa.im, h_ba.re, h_ba.im])
    }

    pub fn from_channels(ch: &ChannelPair) -> Self {
        Self::from_gains(ch.h_aa, ch.h_ba)
    }

    pub fn h_aa(&self) -> Complex64 {
        Complex64::new(self.0[0], self.0[1])
    }

    pub fn h_ba(&self) -> Complex64 {
        Complex64::new(self.0[2], self.0[3])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_inputs(y: &[Complex64], x_a: &[Complex64], alphabet: &[Complex64], noise_var: f64) -> Result<(), EstimatorError> {
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(EstimatorError::InvalidParameter(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    if y.len() != x_a.len() {
        return Err(EstimatorError::LengthMismatch(format!(
            "{} observations, {} known symbols",
            y.len(),
            x_a.len()
        )));
    }
    if alphabet.is_empty() {
        return Err(EstimatorError::InvalidParameter("empty alphabet".into()));
    }
    Ok(())
}

/// Marginal log-likelihood of the observations, node b's symbols summed out.
pub fn log_likelihood(
    y: &[Complex64],
    x_a: &[Complex64],
    phi: &ParamVector,
    alphabet: &[Complex64],
    noise_var: f64,
) -> Result<f64, EstimatorError> {
    check_inputs(y, x_a, alphabet, noise_var)?;
    Ok(log_likelihood_unchecked(y, x_a, phi, alphabet, noise_var))
}

fn log_likelihood_unchecked(
    y: &[Complex64],
    x_a: &[Complex64],
    phi: &ParamVector,
    alphabet: &[Complex64],
    noise_var: f64,
) -> f64 {
    let m = alphabet.len() as f64;
    let n = y.len() as f64;
    let (h_aa, h_ba) = (phi.h_aa(), phi.h_ba());
    let mut exps = vec![0.0; alphabet.len()];
    let total: f64 = y
        .iter()
        .zip(x_a)
        .map(|(yi, ai)| {
            let base = yi - h_aa * ai;
            for (e, xk) in exps.iter_mut().zip(alphabet) {
                *e = -(base - h_ba * xk).norm_sqr() / noise_var;
            }
            log_sum_exp(&exps)
        })
        .sum();
    -n * (m * std::f64::consts::PI * noise_var).ln() + total
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Posterior responsibilities, `M` rows (alphabet) by `N` columns (observations).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    order: usize,
    len: usize,
    // column-major: entry (k, i) at i * order + k
    data: Vec<f64>,
}

impl PosteriorMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[i * self.order + k]
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.order..(i + 1) * self.order]
    }

    /// Builds a matrix from explicit columns, e.g. one-hot known symbols.
    pub fn from_columns(order: usize, columns: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(order * columns.len());
        for col in columns {
            assert_eq!(col.len(), order, "posterior column length");
            data.extend_from_slice(col);
        }
        PosteriorMatrix {
            order,
            len: columns.len(),
            data,
        }
    }

    /// Degenerate posterior that puts all mass on the given indices.
    pub fn one_hot(order: usize, indices: &[usize]) -> Self {
        let mut data = vec![0.0; order * indices.len()];
        for (i, &k) in indices.iter().enumerate() {
            data[i * order + k] = 1.0;
        }
        PosteriorMatrix {
            order,
            len: indices.len(),
            data,
        }
    }
}

/// E-step: softmax over the alphabet of `-|y_i - h_ba x_k - h_aa x_a_i|^2 / noise_var`.
pub fn posterior_matrix(
    y: &[Complex64],
    x_a: &[Complex64],
    phi: &ParamVector,
    alphabet: &[Complex64],
    noise_var: f64,
) -> Result<PosteriorMatrix, EstimatorError> {
    check_inputs(y, x_a, alphabet, noise_var)?;
    Ok(posterior_unchecked(y, x_a, phi, alphabet, noise_var))
}

fn posterior_unchecked(
    y: &[Complex64],
    x_a: &[Complex64],
    phi: &ParamVector,
    alphabet: &[Complex64],
    noise_var: f64,
) -> PosteriorMatrix {
    let order = alphabet.len();
    let (h_aa, h_ba) = (phi.h_aa(), phi.h_ba());
    let mut data = vec![0.0; order * y.len()];
    for (i, (yi, ai)) in y.iter().zip(x_a).enumerate() {
        let col = &mut data[i * order..(i + 1) * order];
        let base = yi - h_aa * ai;
        for (t, xk) in col.iter_mut().zip(alphabet) {
            *t = -(base - h_ba * xk).norm_sqr() / noise_var;
        }
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for t in col.iter_mut() {
            *t = (*t - max).exp();
            sum += *t;
        }
        for t in col.iter_mut() {
            *t /= sum;
        }
    }
    PosteriorMatrix {
        order,
        len: y.len(),
        data,
    }
}

/// Sufficient statistics of the M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepAccumulators {
    pub s: [f64; 4],
    pub v: [f64; 4],
}

impl MStepAccumulators {
    /// All sums use the shifted symbols, for node a as well as node b.
    pub fn collect(
        t: &PosteriorMatrix,
        y: &[Complex64],
        x_a: &[Complex64],
        alphabet: &[Complex64],
    ) -> Self {
        let mut s1 = 0.0;
        let mut cross = Complex64::new(0.0, 0.0); // s2 + j s3
        let mut s4 = 0.0;
        let mut ya = Complex64::new(0.0, 0.0); // v1 + j v2
        let mut yb = Complex64::new(0.0, 0.0); // v3 + j v4
        for (i, (yi, ai)) in y.iter().zip(x_a).enumerate() {
            let mut mean = Complex64::new(0.0, 0.0);
            let mut energy = 0.0;
            for (tk, xk) in t.column(i).iter().zip(alphabet) {
                mean += tk * xk;
                energy += tk * xk.norm_sqr();
            }
            s1 += ai.norm_sqr();
            cross += ai * mean.conj();
            s4 += energy;
            ya += ai.conj() * yi;
            yb += yi * mean.conj();
        }
        MStepAccumulators {
            s: [s1, cross.re, cross.im, s4],
            v: [ya.re, ya.im, yb.re, yb.im],
        }
    }

    /// The normal-equation matrix `S` with `S phi = v`.
    pub fn s_matrix(&self) -> [[f64; 4]; 4] {
        let [s1, s2, s3, s4] = self.s;
        [
            [s1, 0.0, s2, s3],
            [0.0, s1, -s3, s2],
            [s2, -s3, s4, 0.0],
            [s3, s2, 0.0, s4],
        ]
    }

    /// `s1 s4 - s2^2 - s3^2`; `det S` is its square.
    pub fn det_condition(&self) -> f64 {
        let [s1, s2, s3, s4] = self.s;
        s1 * s4 - s2 * s2 - s3 * s3
    }

    /// Sylvester's criterion on `S` (the Hessian of the M-step cost is `2S`).
    pub fn hessian_psd(&self) -> bool {
        let s1 = self.s[0];
        let d = self.det_condition();
        s1 > 0.0 && s1 * s1 > 0.0 && s1 * d > 0.0 && d * d > 0.0
    }

    pub fn is_singular(&self) -> bool {
        let s1 = self.s[0];
        !(self.det_condition() > SINGULAR_REL * s1 * s1)
    }

    /// Closed-form solution of `S phi = v`.
    pub fn solve(&self) -> ParamVector {
        let [s1, s2, s3, s4] = self.s;
        let [v1, v2, v3, v4] = self.v;
        let d = self.det_condition();
        ParamVector([
            (-s2 * v3 - s3 * v4 + s4 * v1) / d,
            (-s2 * v4 + s3 * v3 + s4 * v2) / d,
            (s1 * v3 - s2 * v1 + s3 * v2) / d,
            (s1 * v4 - s2 * v2 - s3 * v1) / d,
        ])
    }
}

/// Relative singularity threshold on `s1 s4 - s2^2 - s3^2` against `s1^2`.
pub const SINGULAR_REL: f64 = 1e-12;

/// M-step: the minimiser of `sum_i sum_k T_ki |y_i - h_ba x_k - h_aa x_a_i|^2`.
pub fn m_step(
    t: &PosteriorMatrix,
    y: &[Complex64],
    x_a: &[Complex64],
    alphabet: &[Complex64],
) -> Result<ParamVector, EstimatorError> {
    if y.len() != x_a.len() || t.len() != y.len() || t.order() != alphabet.len() {
        return Err(EstimatorError::LengthMismatch(format!(
            "posterior {}x{}, {} observations, {} known symbols, alphabet of {}",
            t.order(),
            t.len(),
            y.len(),
            x_a.len(),
            alphabet.len()
        )));
    }
    let acc = MStepAccumulators::collect(t, y, x_a, alphabet);
    if acc.is_singular() {
        return Err(EstimatorError::DegenerateUpdate {
            iteration: 0,
            det: acc.det_condition(),
        });
    }
    Ok(acc.solve())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the infinity-norm parameter change drops below this.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmReport {
    pub estimate: ParamVector,
    pub iterations: usize,
    /// Log-likelihood of the initial point followed by one entry per update.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// Whether every M-step system passed Sylvester's criterion.
    pub hessian_psd: bool,
}

/// Runs EM from `phi = 0` until the update stalls or `max_iter` is hit.
pub fn em_estimate(
    y: &[Complex64],
    x_a: &[Complex64],
    alphabet: &[Complex64],
    noise_var: f64,
    opts: &EmOptions,
) -> Result<EmReport, EstimatorError> {
    em_estimate_from(y, x_a, alphabet, noise_var, opts, ParamVector::default())
}

/// [`em_estimate`] from an arbitrary starting point. Every experiment in
/// this crate starts from zero; this exists for diagnostics.
///
/// With a zero-mean alphabet and `start.h_ba() == 0` the posteriors stay
/// uniform and `h_ba` never leaves zero.
pub fn em_estimate_from(
    y: &[Complex64],
    x_a: &[Complex64],
    alphabet: &[Complex64],
    noise_var: f64,
    opts: &EmOptions,
    start: ParamVector,
) -> Result<EmReport, EstimatorError> {
    check_inputs(y, x_a, alphabet, noise_var)?;
    if y.len() < 4 {
        return Err(EstimatorError::InvalidParameter(format!(
            "need at least 4 observations, got {}",
            y.len()
        )));
    }
    if !start.is_finite() {
        return Err(EstimatorError::InvalidParameter("non-finite starting point".into()));
    }
    let mut phi = start;
    let mut trace = vec![log_likelihood_unchecked(y, x_a, &phi, alphabet, noise_var)];
    let mut hessian_psd = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let t = posterior_unchecked(y, x_a, &phi, alphabet, noise_var);
        let acc = MStepAccumulators::collect(&t, y, x_a, alphabet);
        if acc.is_singular() {
            return Err(EstimatorError::DegenerateUpdate {
                iteration: iterations,
                det: acc.det_condition(),
            });
        }
        hessian_psd &= acc.hessian_psd();
        let next = acc.solve();
        if !next.is_finite() {
            return Err(EstimatorError::Diverged {
                iteration: iterations,
                loglik_trace: trace,
            });
        }
        trace.push(log_likelihood_unchecked(y, x_a, &next, alphabet, noise_var));
        let step = next.max_abs_diff(&phi);
        phi = next;
        if step < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(EmReport {
        estimate: phi,
        iterations,
        loglik_trace: trace,
        converged,
        hessian_psd,
    })
}
