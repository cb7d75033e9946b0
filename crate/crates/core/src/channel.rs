//! Simulated latent-space distortion channel.
//!
//! These are proxies for inversion error and pixel-space attacks, not
//! reproductions of them: `scale` stands in for brightness-like gain and
//! `erase` for crop/drop-like structured loss. Severities here do not map
//! onto pixel-space severities.
//!
//! Grammar: `none`, `gauss:SIGMA`, `drop:P[:FILL]`, `scale:A`,
//! `erase:FRACTION[:CHUNK]`, joined with `+` to compose in order.
//! `FILL` is a number; without it dropped elements get fresh `N(0,1)` noise.
//! `CHUNK` defaults to 64 elements.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::latent::Latent;

pub const DEFAULT_ERASE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Noise,
    Value(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelKind {
    None,
    AdditiveGaussian { sigma: f64 },
    ElementDropout { p: f64, fill: Fill },
    GlobalScale { a: f64 },
    BlockErasure { fraction: f64, chunk: usize },
    Compose(Vec<ChannelKind>),
}

impl ChannelKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        match *self {
            ChannelKind::None => Ok(()),
            ChannelKind::AdditiveGaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad(format!("gaussian sigma must be >= 0, got {sigma}"))
            }
            ChannelKind::ElementDropout { p, fill } => {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("dropout probability must lie in [0, 1], got {p}"));
                }
                match fill {
                    Fill::Value(v) if !v.is_finite() => bad("dropout fill must be finite".into()),
                    _ => Ok(()),
                }
            }
            ChannelKind::GlobalScale { a } if !(a > 0.0 && a.is_finite()) => {
                bad(format!("scale factor must be > 0, got {a}"))
            }
            ChannelKind::BlockErasure { fraction, chunk } => {
                if !(0.0..=1.0).contains(&fraction) {
                    bad(format!("erasure fraction must lie in [0, 1], got {fraction}"))
                } else if chunk == 0 {
                    bad("erasure chunk must be positive".into())
                } else {
                    Ok(())
                }
            }
            ChannelKind::Compose(ref stages) => {
                if stages.is_empty() {
                    return bad("compose needs at least one stage".into());
                }
                stages.iter().try_for_each(ChannelKind::validate)
            }
            _ => Ok(()),
        }
    }

    /// Primary parameter of the first stage; 0 for `none`.
    pub fn severity(&self) -> f64 {
        match self {
            ChannelKind::None => 0.0,
            ChannelKind::AdditiveGaussian { sigma } => *sigma,
            ChannelKind::ElementDropout { p, .. } => *p,
            ChannelKind::GlobalScale { a } => *a,
            ChannelKind::BlockErasure { fraction, .. } => *fraction,
            ChannelKind::Compose(stages) => stages.first().map_or(0.0, ChannelKind::severity),
        }
    }

    fn apply(&self, values: &mut [f32], rng: &mut ChaCha8Rng) {
        match *self {
            ChannelKind::None => {}
            ChannelKind::AdditiveGaussian { sigma } => {
                if sigma > 0.0 {
                    for v in values.iter_mut() {
                        let n: f64 = rng.sample(StandardNormal);
                        *v = (*v as f64 + sigma * n) as f32;
                    }
                }
            }
            ChannelKind::ElementDropout { p, fill } => {
                for v in values.iter_mut() {
                    if rng.random_bool(p) {
                        *v = match fill {
                            Fill::Noise => rng.sample(StandardNormal),
                            Fill::Value(x) => x,
                        };
                    }
                }
            }
            ChannelKind::GlobalScale { a } => {
                for v in values.iter_mut() {
                    *v = (*v as f64 * a) as f32;
                }
            }
            ChannelKind::BlockErasure { fraction, chunk } => {
                let chunks = values.len().div_ceil(chunk);
                let erase = ((fraction * chunks as f64).round() as usize).min(chunks);
                let mut picked = sample(rng, chunks, erase).into_vec();
                picked.sort_unstable();
                for c in picked {
                    let end = ((c + 1) * chunk).min(values.len());
                    for v in &mut values[c * chunk..end] {
                        *v = rng.sample(StandardNormal);
                    }
                }
            }
            ChannelKind::Compose(ref stages) => {
                for stage in stages {
                    stage.apply(values, rng);
                }
            }
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelKind::None => f.write_str("none"),
            ChannelKind::AdditiveGaussian { sigma } => write!(f, "gauss:{sigma}"),
            ChannelKind::ElementDropout { p, fill: Fill::Noise } => write!(f, "drop:{p}"),
            ChannelKind::ElementDropout { p, fill: Fill::Value(x) } => write!(f, "drop:{p}:{x}"),
            ChannelKind::GlobalScale { a } => write!(f, "scale:{a}"),
            ChannelKind::BlockErasure { fraction, chunk } if *chunk == DEFAULT_ERASE_CHUNK => {
                write!(f, "erase:{fraction}")
            }
            ChannelKind::BlockErasure { fraction, chunk } => write!(f, "erase:{fraction}:{chunk}"),
            ChannelKind::Compose(stages) => {
                let parts: Vec<String> = stages.iter().map(ToString::to_string).collect();
                f.write_str(&parts.join("+"))
            }
        }
    }
}

fn parse_stage(text: &str) -> Result<ChannelKind> {
    let mut parts = text.trim().split(':');
    let name = parts.next().unwrap_or_default();
    let args: Vec<&str> = parts.collect();
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Parameter(format!("bad number {s:?} in channel stage {text:?}")))
    };
    let arity = |min: usize, max: usize| -> Result<()> {
        if args.len() < min || args.len() > max {
            Err(Error::Parameter(format!("wrong number of arguments in channel stage {text:?}")))
        } else {
            Ok(())
        }
    };
    let kind = match name {
        "none" => {
            arity(0, 0)?;
            ChannelKind::None
        }
        "gauss" => {
            arity(1, 1)?;
            ChannelKind::AdditiveGaussian { sigma: num(args[0])? }
        }
        "drop" => {
            arity(1, 2)?;
            let fill = match args.get(1) {
                Some(v) => Fill::Value(num(v)? as f32),
                None => Fill::Noise,
            };
            ChannelKind::ElementDropout { p: num(args[0])?, fill }
        }
        "scale" => {
            arity(1, 1)?;
            ChannelKind::GlobalScale { a: num(args[0])? }
        }
        "erase" => {
            arity(1, 2)?;
            let chunk = match args.get(1) {
                Some(c) => c
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parameter(format!("bad chunk size in {text:?}")))?,
                None => DEFAULT_ERASE_CHUNK,
            };
            ChannelKind::BlockErasure { fraction: num(args[0])?, chunk }
        }
        _ => return Err(Error::Parameter(format!("unknown channel stage {text:?}"))),
    };
    kind.validate()?;
    Ok(kind)
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let stages = text
            .split('+')
            .map(parse_stage)
            .collect::<Result<Vec<_>>>()?;
        Ok(if stages.len() == 1 {
            stages.into_iter().next().unwrap()
        } else {
            ChannelKind::Compose(stages)
        })
    }
}

/// A distortion together with its evaluation seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub seed: u64,
}

impl ChannelSpec {
    pub fn new(kind: ChannelKind, seed: u64) -> Result<Self> {
        kind.validate()?;
        Ok(Self { kind, seed })
    }

    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        Self::new(text.parse()?, seed)
    }

    pub fn none() -> Self {
        Self {
            kind: ChannelKind::None,
            seed: 0,
        }
    }
}

/// Applies the channel; output depends only on `z` and `spec`.
pub fn apply_channel(z: &Latent, spec: &ChannelSpec) -> Result<Latent> {
    spec.kind.validate()?;
    let mut values = z.values().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    spec.kind.apply(&mut values, &mut rng);
    Latent::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latent(d: usize, seed: u64) -> Latent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Latent::new((0..d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn parse_grammar() {
        assert_eq!("none".parse::<ChannelKind>().unwrap(), ChannelKind::None);
        assert_eq!(
            "gauss:0.3".parse::<ChannelKind>().unwrap(),
            ChannelKind::AdditiveGaussian { sigma: 0.3 }
        );
        assert_eq!(
            "drop:0.2".parse::<ChannelKind>().unwrap(),
            ChannelKind::ElementDropout { p: 0.2, fill: Fill::Noise }
        );
        assert_eq!(
            "drop:0.2:0".parse::<ChannelKind>().unwrap(),
            ChannelKind::ElementDropout { p: 0.2, fill: Fill::Value(0.0) }
        );
        assert_eq!("scale:1.5".parse::<ChannelKind>().unwrap(), ChannelKind::GlobalScale { a: 1.5 });
        assert_eq!(
            "erase:0.25".parse::<ChannelKind>().unwrap(),
            ChannelKind::BlockErasure { fraction: 0.25, chunk: 64 }
        );
        let c = "gauss:0.1+drop:0.1".parse::<ChannelKind>().unwrap();
        assert_eq!(
            c,
            ChannelKind::Compose(vec![
                ChannelKind::AdditiveGaussian { sigma: 0.1 },
                ChannelKind::ElementDropout { p: 0.1, fill: Fill::Noise },
            ])
        );
        assert_eq!(c.to_string(), "gauss:0.1+drop:0.1");
        assert_eq!(c.severity(), 0.1);
        for bad in ["", "gauss", "gauss:-1", "drop:1.5", "scale:0", "erase:2", "erase:0.5:0", "blur:3", "gauss:0.1+"] {
            assert!(bad.parse::<ChannelKind>().is_err(), "{bad:?} parsed");
        }
    }

    #[test]
    fn identity_channels() {
        let z = latent(1000, 1);
        assert_eq!(apply_channel(&z, &ChannelSpec::none()).unwrap(), z);
        let zero = ChannelSpec::parse("gauss:0", 7).unwrap();
        assert_eq!(apply_channel(&z, &zero).unwrap(), z);
        assert_eq!(apply_channel(&z, &ChannelSpec::parse("drop:0", 7).unwrap()).unwrap(), z);
        assert_eq!(apply_channel(&z, &ChannelSpec::parse("erase:0", 7).unwrap()).unwrap(), z);
    }

    #[test]
    fn gaussian_perturbation_variance() {
        let z = latent(16384, 2);
        let out = apply_channel(&z, &ChannelSpec::parse("gauss:0.5", 3).unwrap()).unwrap();
        let diffs: Vec<f64> = out.values().iter().zip(z.values()).map(|(a, b)| (*a - *b) as f64).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.25).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn deterministic_under_seed() {
        let z = latent(2048, 4);
        let spec = ChannelSpec::parse("gauss:0.3+drop:0.1+erase:0.2+scale:1.2", 11).unwrap();
        assert_eq!(apply_channel(&z, &spec).unwrap(), apply_channel(&z, &spec).unwrap());
        let other = ChannelSpec { seed: 12, ..spec.clone() };
        assert_ne!(apply_channel(&z, &spec).unwrap(), apply_channel(&z, &other).unwrap());
    }

    #[test]
    fn scale_and_dropout_and_erasure() {
        let z = latent(4096, 5);
        let scaled = apply_channel(&z, &ChannelSpec::parse("scale:2", 0).unwrap()).unwrap();
        assert!(scaled.values().iter().zip(z.values()).all(|(a, b)| *a == 2.0 * b));

        let dropped = apply_channel(&z, &ChannelSpec::parse("drop:0.25:0", 1).unwrap()).unwrap();
        let zeros = dropped.values().iter().filter(|v| **v == 0.0).count() as f64 / 4096.0;
        assert!((zeros - 0.25).abs() < 0.03, "dropout fraction {zeros}");

        let erased = apply_channel(&z, &ChannelSpec::parse("erase:0.25:64", 2).unwrap()).unwrap();
        let touched = (0..64)
            .filter(|c| (c * 64..(c + 1) * 64).any(|i| erased.values()[i] != z.values()[i]))
            .count();
        assert_eq!(touched, 16);
    }
}
