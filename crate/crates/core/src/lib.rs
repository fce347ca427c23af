//! Blind estimation of the self-interference and communication channels of
//! a full-duplex link.
//!
//! Symmetric alphabets such as QAM leave the communication gain ambiguous up
//! to a rotation. Shifting every point by a real constant removes the
//! symmetry, after which an EM estimator recovers both gains from data
//! symbols alone. The crate also provides the matching Fisher-information
//! bound, pilot-based and perfect-knowledge baselines, and a reproducible
//! Monte Carlo harness.

pub mod baselines;
pub mod bounds;
pub mod channel;
pub mod cli;
pub mod constellation;
pub mod detection;
pub mod estimator;
pub mod montecarlo;

pub use num_complex::Complex64;
