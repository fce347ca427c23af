//! Square-QAM alphabets, the real-axis asymmetry shift, and origin-symmetry
//! detection.
//!
//! Points are indexed by their bit label: for a square QAM of order `M`
//! the upper `log2(M)/2` bits of the index select the in-phase level and the
//! lower bits the quadrature level, each through a reflected Gray code. The
//! bits carried by point `k` are therefore the binary digits of `k`.

use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConstellationError {
    #[error("unsupported constellation order {0} (expected 4, 16 or 64)")]
    UnsupportedOrder(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed constellation line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// An ordered modulation alphabet with its average symbol energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    avg_energy: f64,
    bits_per_symbol: usize,
}

impl Constellation {
    /// Wraps an arbitrary point list. Points must be distinct and finite.
    pub fn from_points(points: Vec<Complex64>) -> Result<Self, ConstellationError> {
        if points.is_empty() {
            return Err(ConstellationError::InvalidParameter(
                "constellation needs at least one point".into(),
            ));
        }
        if points.iter().any(|p| !p.re.is_finite() || !p.im.is_finite()) {
            return Err(ConstellationError::InvalidParameter(
                "non-finite constellation point".into(),
            ));
        }
        for (i, a) in points.iter().enumerate() {
            if points[i + 1..].iter().any(|b| a == b) {
                return Err(ConstellationError::InvalidParameter(format!(
                    "duplicate constellation point {a}"
                )));
            }
        }
        let avg_energy = mean_energy(&points);
        let bits_per_symbol = usize::BITS as usize - 1 - points.len().leading_zeros() as usize;
        Ok(Constellation {
            points,
            avg_energy,
            bits_per_symbol,
        })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn avg_energy(&self) -> f64 {
        self.avg_energy
    }

    /// Number of whole bits labelled onto each point (`floor(log2 M)`).
    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn mean(&self) -> Complex64 {
        self.points.iter().sum::<Complex64>() / self.points.len() as f64
    }

    /// Bits of point `index`, most significant first.
    pub fn label_bits(&self, index: usize) -> impl Iterator<Item = u8> + '_ {
        let nb = self.bits_per_symbol;
        (0..nb).map(move |b| ((index >> (nb - 1 - b)) & 1) as u8)
    }

    /// One `re,im` line per point, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = writeln!(out, "{:.16e},{:.16e}", p.re, p.im);
        }
        out
    }

    /// Parses the `re,im` line format. Blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self, ConstellationError> {
        let mut points = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: String| ConstellationError::Parse {
                line: n + 1,
                reason,
            };
            let (re, im) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected `re,im`".into()))?;
            let re: f64 = re.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let im: f64 = im.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            points.push(Complex64::new(re, im));
        }
        Constellation::from_points(points)
    }
}

fn mean_energy(points: &[Complex64]) -> f64 {
    points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = g;
    g >>= 1;
    while g != 0 {
        b ^= g;
        g >>= 1;
    }
    b
}

/// Square Gray-labelled QAM with average energy `bit_energy * log2(order)`.
pub fn make_qam(order: usize, bit_energy: f64) -> Result<Constellation, ConstellationError> {
    if !matches!(order, 4 | 16 | 64) {
        return Err(ConstellationError::UnsupportedOrder(order));
    }
    if !(bit_energy > 0.0 && bit_energy.is_finite()) {
        return Err(ConstellationError::InvalidParameter(format!(
            "bit energy must be positive, got {bit_energy}"
        )));
    }
    let bits = order.trailing_zeros() as usize;
    let half = bits / 2;
    let levels = 1usize << half;
    let amplitude = |gray: usize| 2.0 * gray_decode(gray) as f64 - (levels as f64 - 1.0);

    // Unit-spaced grid energy: 2 (L^2 - 1) / 3.
    let grid_energy = 2.0 * ((levels * levels) as f64 - 1.0) / 3.0;
    let scale = (bit_energy * bits as f64 / grid_energy).sqrt();
    let points = (0..order)
        .map(|k| {
            let i = amplitude(k >> half);
            let q = amplitude(k & (levels - 1));
            Complex64::new(i * scale, q * scale)
        })
        .collect();
    Constellation::from_points(points)
}

/// A base alphabet translated by the real constant `s = sqrt(beta * E)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedConstellation {
    base: Constellation,
    beta: f64,
    shift: f64,
    shifted: Constellation,
}

impl ShiftedConstellation {
    pub fn base(&self) -> &Constellation {
        &self.base
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// The translated alphabet, same index order as the base.
    pub fn alphabet(&self) -> &Constellation {
        &self.shifted
    }

    pub fn points(&self) -> &[Complex64] {
        self.shifted.points()
    }

    /// Pre-shift average energy `E`.
    pub fn base_energy(&self) -> f64 {
        self.base.avg_energy()
    }
}

/// Tolerance on the base mean, relative to the RMS amplitude.
const ZERO_MEAN_TOL: f64 = 1e-9;

pub fn shift(base: &Constellation, beta: f64) -> Result<ShiftedConstellation, ConstellationError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(ConstellationError::InvalidParameter(format!(
            "beta must lie in (0, 1], got {beta}"
        )));
    }
    let rms = base.avg_energy().sqrt();
    if base.mean().norm() > ZERO_MEAN_TOL * rms.max(f64::MIN_POSITIVE) {
        return Err(ConstellationError::InvalidParameter(
            "base constellation must have zero mean".into(),
        ));
    }
    let s = (beta * base.avg_energy()).sqrt();
    if !(s > 0.0) {
        return Err(ConstellationError::InvalidParameter(
            "shift underflowed to zero".into(),
        ));
    }
    let points: Vec<Complex64> = base.points().iter().map(|p| p + s).collect();
    let shifted = Constellation {
        avg_energy: mean_energy(&points),
        bits_per_symbol: base.bits_per_symbol,
        points,
    };
    Ok(ShiftedConstellation {
        base: base.clone(),
        beta,
        shift: s,
        shifted,
    })
}

/// Evidence that an alphabet is invariant under rotation by `ratio`:
/// `points[k] == ratio * points[permutation[k]]` for all `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryWitness {
    pub permutation: Vec<usize>,
    pub ratio: Complex64,
    pub orbit_length: usize,
}

impl SymmetryWitness {
    /// Largest `|x_k - c x_g(k)|` over the alphabet.
    pub fn max_residual(&self, points: &[Complex64]) -> f64 {
        points
            .iter()
            .zip(&self.permutation)
            .map(|(x, &g)| (x - self.ratio * points[g]).norm())
            .fold(0.0, f64::max)
    }
}

pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-9;

/// Searches for a unit-modulus `c != 1` and a permutation `g` with
/// `x_k = c x_g(k)`. Candidates are the ratios between one anchor point of
/// maximal modulus and every other point of equal modulus; `c = -1` is tried
/// first when it is a candidate.
pub fn check_symmetry(c: &Constellation, tol: f64) -> Option<SymmetryWitness> {
    let pts = c.points();
    let m = pts.len();
    let (anchor, anchor_norm) = pts
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.norm()))
        .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    if anchor_norm <= tol {
        return None;
    }

    let mut candidates: Vec<Complex64> = pts
        .iter()
        .filter(|p| (p.norm() - anchor_norm).abs() <= tol)
        .map(|p| pts[anchor] / p)
        .filter(|r| (r - 1.0).norm() > tol)
        .collect();
    candidates.sort_by(|a, b| a.re.total_cmp(&b.re).then(b.im.total_cmp(&a.im)));

    'candidate: for ratio in candidates {
        let ratio = ratio / ratio.norm();
        let mut used = vec![false; m];
        let mut perm = vec![0usize; m];
        for (k, x) in pts.iter().enumerate() {
            let hit = (0..m).find(|&j| !used[j] && (x - ratio * pts[j]).norm() <= tol);
            match hit {
                Some(j) => {
                    used[j] = true;
                    perm[k] = j;
                }
                None => continue 'candidate,
            }
        }
        let orbit_length = rotation_order(pts, &perm, tol);
        return Some(SymmetryWitness {
            permutation: perm,
            ratio,
            orbit_length,
        });
    }
    None
}

/// Order of the rotation: lcm of the cycle lengths of `perm` over nonzero points.
fn rotation_order(pts: &[Complex64], perm: &[usize], tol: f64) -> usize {
    let mut seen = vec![false; perm.len()];
    let mut order = 1usize;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut k = start;
        while !seen[k] {
            seen[k] = true;
            k = perm[k];
            len += 1;
        }
        if pts[start].norm() > tol {
            order = lcm(order, len);
        }
    }
    order
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}
