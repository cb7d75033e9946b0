//! Monte Carlo robustness and capacity sweeps.
//!
//! Each grid point runs `trials` independent embed → channel → detect
//! cycles. Trial `i` uses the same key, payload, and nonce at every grid
//! point, so points differ only in the channel and its noise draw.

use std::fmt::Write as _;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{apply_channel, ChannelKind, ChannelSpec};
use crate::codebook::{canonical_codebook, Codebook};
use crate::codec::KeyedTemplate;
use crate::detector::{DetectionMode, Verifier, REFERENCE_TAU};
use crate::error::{Error, Result};
use crate::keyspace::{Nonce, SecretKey};
use crate::payload::Payload;
use crate::rng::trial_rng;
use crate::template::TemplateParams;

pub const CSV_HEADER: &str = "channel,severity,trials,bit_acc,tpr,mean_S,wall_ms";
pub const ATTACKED_LABEL: &str = "attacked-avg";

const CHANNEL_SALT: u64 = 0x6368_616e_6e65_6c00;

#[derive(Debug, Clone, PartialEq)]
pub enum PayloadPolicy {
    Fixed(Payload),
    RandomPerTrial,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KeyPolicy {
    Fixed(SecretKey),
    FreshPerTrial,
}

/// Sweep definition. Nonces are always fresh per trial.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub params: TemplateParams,
    pub codebook: Codebook,
    pub channel_grid: Vec<ChannelKind>,
    pub trials: usize,
    pub payload_policy: PayloadPolicy,
    pub key_policy: KeyPolicy,
    pub mode: DetectionMode,
    pub tau: f64,
    pub seed: u64,
}

impl SweepConfig {
    pub fn new(params: TemplateParams, channel_grid: Vec<ChannelKind>, trials: usize, seed: u64) -> Self {
        Self {
            params,
            codebook: canonical_codebook(),
            channel_grid,
            trials,
            payload_policy: PayloadPolicy::RandomPerTrial,
            key_policy: KeyPolicy::FreshPerTrial,
            mode: DetectionMode::Claimed,
            tau: REFERENCE_TAU,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.trials == 0 {
            return Err(Error::Parameter("sweep needs at least one trial".into()));
        }
        if self.channel_grid.is_empty() {
            return Err(Error::Parameter("channel grid is empty".into()));
        }
        for c in &self.channel_grid {
            c.validate()?;
        }
        if self.codebook.s() != self.params.s {
            return Err(Error::Parameter(format!(
                "codebook permutes {} blocks but groups hold s={}",
                self.codebook.s(),
                self.params.s
            )));
        }
        if let PayloadPolicy::Fixed(m) = &self.payload_policy {
            let want = self.params.groups() * self.codebook.k() as usize;
            if m.len() != want {
                return Err(Error::Payload(format!(
                    "fixed payload has {} bits, expected {want}",
                    m.len()
                )));
            }
        }
        Ok(())
    }

    /// Parses a flat `key = value` sweep file (`#` starts a comment).
    ///
    /// Keys: `d`, `q`, `b`, `trials`, `seed`, `tau`, `mode` (`claimed` or
    /// `blind`), `payload` (`random` or hex), `key` (`fresh` or hex),
    /// `channels` (`default` or a comma-separated list of channel specs).
    pub fn parse(text: &str) -> Result<Self> {
        let defaults = TemplateParams::default();
        let (mut d, mut q, mut b) = (defaults.d, defaults.q, defaults.b);
        let mut trials = 100usize;
        let mut seed = 0u64;
        let mut tau = REFERENCE_TAU;
        let mut mode = DetectionMode::Claimed;
        let mut payload: Option<String> = None;
        let mut key = KeyPolicy::FreshPerTrial;
        let mut channels = default_attack_grid_with_clean();

        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("sweep config line {}: expected key = value", no + 1)))?;
            let (name, value) = (name.trim(), value.trim());
            let bad = |what: &str| Error::Parameter(format!("sweep config line {}: bad {what} {value:?}", no + 1));
            match name {
                "d" => d = value.parse().map_err(|_| bad("d"))?,
                "q" => q = value.parse().map_err(|_| bad("q"))?,
                "b" => b = value.parse().map_err(|_| bad("b"))?,
                "trials" => trials = value.parse().map_err(|_| bad("trials"))?,
                "seed" => seed = value.parse().map_err(|_| bad("seed"))?,
                "tau" => tau = value.parse().map_err(|_| bad("tau"))?,
                "mode" => {
                    mode = match value {
                        "claimed" => DetectionMode::Claimed,
                        "blind" => DetectionMode::Blind,
                        _ => return Err(bad("mode")),
                    }
                }
                "payload" => payload = (value != "random").then(|| value.to_string()),
                "key" => {
                    key = if value == "fresh" {
                        KeyPolicy::FreshPerTrial
                    } else {
                        KeyPolicy::Fixed(SecretKey::from_hex(value)?)
                    }
                }
                "channels" => {
                    channels = if value == "default" {
                        default_attack_grid_with_clean()
                    } else {
                        value
                            .split(',')
                            .map(|c| c.trim().parse())
                            .collect::<Result<Vec<_>>>()?
                    }
                }
                other => {
                    return Err(Error::Parameter(format!(
                        "sweep config line {}: unknown key {other:?}",
                        no + 1
                    )))
                }
            }
        }
        let params = TemplateParams::new(d, q, b)?;
        let mut cfg = Self::new(params, channels, trials, seed);
        cfg.tau = tau;
        cfg.mode = mode;
        cfg.key_policy = key;
        if let Some(hex) = payload {
            let len = params.groups() * cfg.codebook.k() as usize;
            cfg.payload_policy = PayloadPolicy::Fixed(Payload::from_hex(&hex, len)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Nine latent-space attack proxies.
pub fn default_attack_grid() -> Vec<ChannelKind> {
    [
        "gauss:0.5",
        "gauss:1",
        "drop:0.1",
        "drop:0.3",
        "scale:0.5",
        "scale:2",
        "erase:0.1",
        "erase:0.25",
        "scale:0.8+gauss:0.5",
    ]
    .iter()
    .map(|s| s.parse().expect("built-in channel spec"))
    .collect()
}

/// `none` followed by [`default_attack_grid`].
pub fn default_attack_grid_with_clean() -> Vec<ChannelKind> {
    let mut grid = vec![ChannelKind::None];
    grid.extend(default_attack_grid());
    grid
}

/// Additive Gaussian channels at each `sigma`.
pub fn gaussian_grid(sigmas: &[f64]) -> Vec<ChannelKind> {
    sigmas
        .iter()
        .map(|&sigma| {
            if sigma == 0.0 {
                ChannelKind::None
            } else {
                ChannelKind::AdditiveGaussian { sigma }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub channel: String,
    pub severity: Option<f64>,
    pub trials: usize,
    pub bit_acc: f64,
    pub tpr: f64,
    pub mean_s: f64,
    pub wall_ms: f64,
}

impl SweepRow {
    /// Row with `wall_ms` cleared, for reproducibility comparisons.
    pub fn timeless(&self) -> Self {
        Self {
            wall_ms: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Mean over every row whose channel is not `none`.
    pub attacked: Option<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in self.rows.iter().chain(&self.attacked) {
            let severity = row.severity.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.1}",
                row.channel, severity, row.trials, row.bit_acc, row.tpr, row.mean_s, row.wall_ms
            );
        }
        out
    }

    /// Whitespace-separated columns for gnuplot, one line per grid point.
    pub fn to_gnuplot(&self) -> String {
        let mut out = String::from("# index severity bit_acc tpr mean_S channel\n");
        for (i, row) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i} {} {:.6} {:.6} {:.6} \"{}\"",
                row.severity.unwrap_or(0.0),
                row.bit_acc,
                row.tpr,
                row.mean_s,
                row.channel
            );
        }
        out
    }

    pub fn timeless(&self) -> Self {
        Self {
            rows: self.rows.iter().map(SweepRow::timeless).collect(),
            attacked: self.attacked.as_ref().map(SweepRow::timeless),
        }
    }
}

struct Trial {
    bit_acc: f64,
    statistic: f64,
    detected: bool,
}

struct TrialSetup {
    verifier: Verifier,
    payload: Payload,
    latent: crate::latent::Latent,
    nonce: Nonce,
}

fn setup_trial(cfg: &SweepConfig, shared: Option<&Verifier>, trial: u64) -> Result<TrialSetup> {
    let mut rng = trial_rng(cfg.seed, trial);
    let key = match &cfg.key_policy {
        KeyPolicy::Fixed(k) => k.clone(),
        KeyPolicy::FreshPerTrial => SecretKey::random(&mut rng),
    };
    let nonce = Nonce::random(&mut rng);
    let payload = match &cfg.payload_policy {
        PayloadPolicy::Fixed(m) => m.clone(),
        PayloadPolicy::RandomPerTrial => {
            Payload::random(&mut rng, cfg.params.groups() * cfg.codebook.k() as usize)
        }
    };
    let verifier = match shared {
        Some(v) => v.clone(),
        None => Verifier::from_keyed(KeyedTemplate::new(&key, cfg.params)?, cfg.codebook.clone())?,
    };
    let latent = verifier.keyed().embed(nonce, &payload, &cfg.codebook)?.latent;
    Ok(TrialSetup {
        verifier,
        payload,
        latent,
        nonce,
    })
}

fn run_trial(cfg: &SweepConfig, setup: &TrialSetup, channel: &ChannelKind, point: u64, trial: u64) -> Result<Trial> {
    let channel_seed = trial_rng(cfg.seed ^ CHANNEL_SALT, (point << 32) | trial).next_u64();
    let received = apply_channel(&setup.latent, &ChannelSpec::new(channel.clone(), channel_seed)?)?;
    let claimed = match cfg.mode {
        DetectionMode::Claimed => Some(&setup.payload),
        DetectionMode::Blind => None,
    };
    let report = setup.verifier.detect(&received, setup.nonce, claimed, cfg.tau)?;
    Ok(Trial {
        bit_acc: report.decoded_payload.bit_accuracy(&setup.payload)?,
        statistic: report.statistic,
        detected: report.decision,
    })
}

/// Runs every grid point in order; trials within a point run in parallel
/// and are reduced in trial order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let shared = match &cfg.key_policy {
        KeyPolicy::Fixed(k) => Some(Verifier::from_keyed(
            KeyedTemplate::new(k, cfg.params)?,
            cfg.codebook.clone(),
        )?),
        KeyPolicy::FreshPerTrial => None,
    };

    let mut rows = Vec::with_capacity(cfg.channel_grid.len());
    for (point, channel) in cfg.channel_grid.iter().enumerate() {
        let start = Instant::now();
        let trials: Vec<Trial> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| {
                let setup = setup_trial(cfg, shared.as_ref(), t)?;
                run_trial(cfg, &setup, channel, point as u64, t)
            })
            .collect::<Result<_>>()?;
        let n = trials.len() as f64;
        rows.push(SweepRow {
            channel: channel.to_string(),
            severity: Some(channel.severity()),
            trials: trials.len(),
            bit_acc: trials.iter().map(|t| t.bit_acc).sum::<f64>() / n,
            tpr: trials.iter().filter(|t| t.detected).count() as f64 / n,
            mean_s: trials.iter().map(|t| t.statistic).sum::<f64>() / n,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    let attacked = attacked_average(
        cfg.channel_grid
            .iter()
            .zip(&rows)
            .filter(|(c, _)| **c != ChannelKind::None)
            .map(|(_, r)| r),
    );
    Ok(SweepTable { rows, attacked })
}

/// Arithmetic mean of the metric columns; `None` for an empty input.
pub fn attacked_average<'a>(rows: impl IntoIterator<Item = &'a SweepRow>) -> Option<SweepRow> {
    let rows: Vec<&SweepRow> = rows.into_iter().collect();
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    Some(SweepRow {
        channel: ATTACKED_LABEL.to_string(),
        severity: None,
        trials: rows.iter().map(|r| r.trials).sum(),
        bit_acc: mean(|r| r.bit_acc),
        tpr: mean(|r| r.tpr),
        mean_s: mean(|r| r.mean_s),
        wall_ms: rows.iter().map(|r| r.wall_ms).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub b: usize,
    pub payload_bits: usize,
    pub row: SweepRow,
}

/// One sweep per block size `b` under a single channel; other settings come
/// from `base`.
pub fn capacity_sweep(base: &SweepConfig, block_sizes: &[usize], channel: &ChannelKind) -> Result<Vec<CapacityPoint>> {
    if block_sizes.is_empty() {
        return Err(Error::Parameter("capacity sweep needs at least one block size".into()));
    }
    block_sizes
        .iter()
        .map(|&b| {
            let params = TemplateParams::with_group_size(base.params.d, base.params.q, b, base.params.s)?;
            let cfg = SweepConfig {
                params,
                channel_grid: vec![channel.clone()],
                ..base.clone()
            };
            let row = run_sweep(&cfg)?.rows.remove(0);
            Ok(CapacityPoint {
                b,
                payload_bits: params.groups() * base.codebook.k() as usize,
                row,
            })
        })
        .collect()
}
