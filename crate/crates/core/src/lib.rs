//! Structural watermarking of Gaussian diffusion latents.
//!
//! A key-derived canonical latent is split into rank bins and blocks; the
//! payload is written by permuting blocks within groups and then scattering
//! all blocks with a per-image keyed permutation. The values of the latent
//! are never changed, only their positions.

pub mod bench;
pub mod calibration;
pub mod channel;
pub mod codebook;
pub mod codec;
pub mod detector;
pub mod error;
pub mod keyspace;
pub mod latent;
pub mod payload;
mod rng;
pub mod template;

pub use channel::{apply_channel, ChannelKind, ChannelSpec};
pub use codebook::{canonical_codebook, Codebook, Permutation};
pub use codec::{embed, embed_with_latent, KeyedTemplate, LatentRecord, WatermarkedLatent};
pub use detector::{detect, DetectionMode, DetectionReport, Verifier, REFERENCE_TAU};
pub use error::{Error, Result};
pub use keyspace::{Nonce, SecretKey};
pub use latent::Latent;
pub use payload::Payload;
pub use template::{build_template, IndexTemplate, TemplateParams};
