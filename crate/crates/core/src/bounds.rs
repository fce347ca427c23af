//! Fisher information of the symbol-conditional observation model and the
//! closed-form per-coordinate MSE bound derived from its symbol average.

use num_complex::Complex64;

use crate::estimator::EstimatorError;

/// 4x4 information matrix over `[Re h_aa, Im h_aa, Re h_ba, Im h_ba]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherMatrix(pub [[f64; 4]; 4]);

impl FisherMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row][col]
    }

    /// Checks the equal-diagonal / rotational block pattern to `tol`.
    pub fn has_block_structure(&self, tol: f64) -> bool {
        let m = &self.0;
        let eq = |a: f64, b: f64| (a - b).abs() <= tol;
        eq(m[0][0], m[1][1])
            && eq(m[2][2], m[3][3])
            && eq(m[0][2], m[2][0])
            && eq(m[0][2], m[1][3])
            && eq(m[1][3], m[3][1])
            && eq(m[1][2], m[2][1])
            && eq(m[1][2], -m[0][3])
            && eq(m[0][3], m[3][0])
            && eq(m[0][1], 0.0)
            && eq(m[2][3], 0.0)
    }
}

/// Information matrix of `y | x_b` for known shifted symbols of both nodes.
///
/// With `a = x_a_i`, `b = x_b_i` and the scale `2 / noise_var` summed over the frame:
/// `i11 = i22 = |a|^2`, `i33 = i44 = |b|^2`,
/// `i13 = i24 = Re a Re b + Im a Im b`, `i23 = -i14 = Re a Im b - Im a Re b`.
pub fn fim_conditional(
    x_a: &[Complex64],
    x_b: &[Complex64],
    noise_var: f64,
) -> Result<FisherMatrix, EstimatorError> {
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(EstimatorError::InvalidParameter(format!(
            "noise variance must be positive, got {noise_var}"
        )));
    }
    if x_a.len() != x_b.len() {
        return Err(EstimatorError::LengthMismatch(format!(
            "{} vs {} symbols",
            x_a.len(),
            x_b.len()
        )));
    }
    let (mut ea, mut eb, mut dot, mut wedge) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in x_a.iter().zip(x_b) {
        ea += a.norm_sqr();
        eb += b.norm_sqr();
        dot += a.re * b.re + a.im * b.im;
        wedge += a.re * b.im - a.im * b.re;
    }
    let k = 2.0 / noise_var;
    let (ea, eb, dot, wedge) = (k * ea, k * eb, k * dot, k * wedge);
    Ok(FisherMatrix([
        [ea, 0.0, dot, -wedge],
        [0.0, ea, wedge, dot],
        [dot, wedge, eb, 0.0],
        [-wedge, dot, 0.0, eb],
    ]))
}

/// Expectation of [`fim_conditional`] over uniform symbols of a zero-mean
/// alphabet with pre-shift energy `energy`, shifted by `sqrt(beta * energy)`.
pub fn fim_avg(n: usize, energy: f64, beta: f64, noise_var: f64) -> FisherMatrix {
    let k = 2.0 * n as f64 * energy / noise_var;
    let d = k * (1.0 + beta);
    let o = k * beta;
    FisherMatrix([
        [d, 0.0, o, 0.0],
        [0.0, d, 0.0, o],
        [o, 0.0, d, 0.0],
        [0.0, o, 0.0, d],
    ])
}

/// Closed-form inverse of [`fim_avg`].
pub fn fim_avg_inverse(n: usize, energy: f64, beta: f64, noise_var: f64) -> [[f64; 4]; 4] {
    let k = noise_var / (2.0 * n as f64 * energy);
    let d = k * (1.0 + beta) / (1.0 + 2.0 * beta);
    let o = -k * beta / (1.0 + 2.0 * beta);
    [
        [d, 0.0, o, 0.0],
        [0.0, d, 0.0, o],
        [o, 0.0, d, 0.0],
        [0.0, o, 0.0, d],
    ]
}

/// Per-coordinate variance bound `(noise_var / 2NE) (1 + beta) / (1 + 2 beta)`,
/// `E` being the pre-shift average symbol energy.
pub fn mse_lower_bound(n: usize, energy: f64, beta: f64, noise_var: f64) -> f64 {
    noise_var / (2.0 * n as f64 * energy) * (1.0 + beta) / (1.0 + 2.0 * beta)
}

/// Bound on `E|h_hat - h|^2` for one complex gain: two coordinates.
pub fn mse_lower_bound_complex(n: usize, energy: f64, beta: f64, noise_var: f64) -> f64 {
    2.0 * mse_lower_bound(n, energy, beta, noise_var)
}
