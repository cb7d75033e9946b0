#![allow(dead_code)]

//! Reference levels frozen from `oracles::derive_reference_noise`.

/// Largest grid sigma whose oracle bit accuracy (b = 64) reaches this.
pub const SIGMA_STAR_MIN_ORACLE_ACC: f64 = 0.995;
/// Oracle accuracy 0.99605 here (400 trials).
pub const SIGMA_STAR: f64 = 1.5;

/// Largest sigma at which the 2048-bit (b = 8) oracle accuracy reaches this.
pub const CAPACITY_MIN_ORACLE_ACC: f64 = 0.85;
/// Oracle accuracies 0.9932, 0.9731, 0.9309, 0.8599 for b = 64, 32, 16, 8.
pub const CAPACITY_SIGMA: f64 = 1.7;
