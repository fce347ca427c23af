//! SI cancellation followed by minimum-distance decisions on node b's symbols.

use num_complex::Complex64;
use thiserror::Error;

use crate::constellation::Constellation;
use crate::estimator::ParamVector;

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("bit streams differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty bit stream")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub symbols_hat: Vec<usize>,
    pub bits_hat: Vec<u8>,
    pub symbol_errors: usize,
    pub bit_errors: usize,
}

/// `argmin_k |y_i - h_aa x_a_i - h_ba x_k|^2`, lowest index on ties.
pub fn detect(y: &[Complex64], x_a: &[Complex64], est: &ParamVector, alphabet: &[Complex64]) -> Vec<usize> {
    let (h_aa, h_ba) = (est.h_aa(), est.h_ba());
    let hyps: Vec<Complex64> = alphabet.iter().map(|x| h_ba * x).collect();
    y.iter()
        .zip(x_a)
        .map(|(yi, ai)| {
            let clean = yi - h_aa * ai;
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, h) in hyps.iter().enumerate() {
                let d = (clean - h).norm_sqr();
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Detects node b's symbols and scores them against the transmitted indices.
pub fn cancel_and_detect(
    y: &[Complex64],
    x_a: &[Complex64],
    est: &ParamVector,
    alphabet: &Constellation,
    tx_indices: &[usize],
) -> DetectionResult {
    let symbols_hat = detect(y, x_a, est, alphabet.points());
    let bits_hat: Vec<u8> = symbols_hat.iter().flat_map(|&k| alphabet.label_bits(k)).collect();
    let symbol_errors = symbols_hat.iter().zip(tx_indices).filter(|(a, b)| a != b).count();
    let bit_errors = symbols_hat
        .iter()
        .zip(tx_indices)
        .map(|(&a, &b)| {
            alphabet
                .label_bits(a)
                .zip(alphabet.label_bits(b))
                .filter(|(x, y)| x != y)
                .count()
        })
        .sum();
    DetectionResult {
        symbols_hat,
        bits_hat,
        symbol_errors,
        bit_errors,
    }
}

/// Fraction of differing bits.
pub fn ber(tx_bits: &[u8], rx_bits: &[u8]) -> Result<f64, DetectionError> {
    if tx_bits.len() != rx_bits.len() {
        return Err(DetectionError::LengthMismatch(tx_bits.len(), rx_bits.len()));
    }
    if tx_bits.is_empty() {
        return Err(DetectionError::Empty);
    }
    let diff = tx_bits.iter().zip(rx_bits).filter(|(a, b)| a != b).count();
    Ok(diff as f64 / tx_bits.len() as f64)
}
