//! Null-score collection, tail fitting, and threshold selection.

mod gpd;
mod ttest;

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

pub use gpd::{
    fit_exceedances, fit_tail, solve_threshold, GpdFit, DEFAULT_QUANTILE, MIN_EXCEEDANCES,
    MIN_NULL_SAMPLES, XI_BRACKET, XI_ZERO_TOL,
};
pub use ttest::{t_test, TTestResult};

use crate::codec::KeyedTemplate;
use crate::detector::Verifier;
use crate::error::{Error, Result};
use crate::keyspace::{Nonce, SecretKey};
use crate::latent::Latent;
use crate::payload::Payload;
use crate::rng::trial_rng;

/// Where null latents come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NullSource {
    /// Fresh i.i.d. standard normal latents.
    Random,
    /// Latents watermarked under an independent key.
    WrongKey,
}

impl fmt::Display for NullSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NullSource::Random => "random",
            NullSource::WrongKey => "wrongkey",
        })
    }
}

impl FromStr for NullSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(NullSource::Random),
            "wrongkey" => Ok(NullSource::WrongKey),
            other => Err(Error::Parameter(format!(
                "unknown null source {other:?} (expected random or wrongkey)"
            ))),
        }
    }
}

/// Null statistics `S` for `n` independent trials under `source`.
///
/// Trial `i` draws from its own stream, so the output is identical for any
/// thread count. With `claimed` set, every trial is scored in claimed mode
/// against that payload; otherwise blind.
pub fn null_scores(
    verifier: &Verifier,
    source: NullSource,
    n: usize,
    seed: u64,
    claimed: Option<&Payload>,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyRequest("null sample"));
    }
    let params = *verifier.params();
    let payload_len = verifier.payload_len();
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let nonce = Nonce::random(&mut rng);
            let latent = match source {
                NullSource::Random => {
                    let v: Vec<f32> = (0..params.d)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    Latent::new(v)?
                }
                NullSource::WrongKey => {
                    let other = SecretKey::random(&mut rng);
                    let m = match claimed {
                        Some(m) => m.clone(),
                        None => Payload::random(&mut rng, payload_len),
                    };
                    KeyedTemplate::new(&other, params)?
                        .embed(nonce, &m, verifier.codebook())?
                        .latent
                }
            };
            Ok(verifier.detect(&latent, nonce, claimed, f64::INFINITY)?.statistic)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub schema: u32,
    pub source: NullSource,
    pub claimed: bool,
    pub alpha: f64,
    pub tau: f64,
    #[serde(flatten)]
    pub fit: GpdFit,
}

/// Collects `n` null scores, fits their tail above quantile `q`, and solves
/// for the threshold with modelled false-positive rate `alpha`.
pub fn calibrate(
    verifier: &Verifier,
    source: NullSource,
    n: usize,
    alpha: f64,
    q: f64,
    seed: u64,
    claimed: Option<&Payload>,
) -> Result<(CalibrationReport, Vec<f64>)> {
    if n < MIN_NULL_SAMPLES {
        return Err(Error::Parameter(format!(
            "calibration needs at least {MIN_NULL_SAMPLES} null samples, got {n}"
        )));
    }
    let scores = null_scores(verifier, source, n, seed, claimed)?;
    let report = calibrate_scores(&scores, alpha, q, source, claimed.is_some())?;
    Ok((report, scores))
}

/// Tail fit and threshold from precomputed null scores.
pub fn calibrate_scores(
    scores: &[f64],
    alpha: f64,
    q: f64,
    source: NullSource,
    claimed: bool,
) -> Result<CalibrationReport> {
    let fit = fit_tail(scores, q)?;
    let tau = solve_threshold(&fit, alpha)?;
    Ok(CalibrationReport {
        schema: 1,
        source,
        claimed,
        alpha,
        tau,
        fit,
    })
}

/// Fraction of scores at or above `tau` (the detector's decision rule).
pub fn empirical_exceedance(scores: &[f64], tau: f64) -> f64 {
    scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64
}
