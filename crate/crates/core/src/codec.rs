//! Payload embedding: within-group block permutation followed by the
//! nonce-keyed global block placement permutation.

use std::io::{Read, Write};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::keyspace::{gaussian_stream, kdf, prp, Nonce, SecretKey, LABEL_LATENT, LABEL_PDSR};
use crate::latent::Latent;
use crate::payload::Payload;
use crate::template::{build_template, IndexTemplate, TemplateParams};

/// The key-deterministic canonical latent `z`.
pub fn canonical_latent(key: &SecretKey, d: usize) -> Result<Latent> {
    let values = gaussian_stream(key, LABEL_LATENT, d)?;
    Ok(Latent::from_vec_unchecked(values.into_iter().map(|v| v as f32).collect()))
}

/// Canonical latent and template for one key, shared by embedding and
/// verification.
#[derive(Debug, Clone)]
pub struct KeyedTemplate {
    key: SecretKey,
    latent: Latent,
    template: IndexTemplate,
}

impl KeyedTemplate {
    pub fn new(key: &SecretKey, params: TemplateParams) -> Result<Self> {
        params.validate()?;
        let latent = canonical_latent(key, params.d)?;
        let template = build_template(key, &latent, params)?;
        Ok(Self {
            key: key.clone(),
            latent,
            template,
        })
    }

    /// Uses an externally supplied latent in place of the canonical one.
    /// The verifier must later be given the same latent.
    pub fn with_latent(key: &SecretKey, latent: Latent, params: TemplateParams) -> Result<Self> {
        let template = build_template(key, &latent, params)?;
        Ok(Self {
            key: key.clone(),
            latent,
            template,
        })
    }

    pub fn key(&self) -> &SecretKey {
        &self.key
    }

    pub fn latent(&self) -> &Latent {
        &self.latent
    }

    pub fn template(&self) -> &IndexTemplate {
        &self.template
    }

    pub fn params(&self) -> &TemplateParams {
        self.template.params()
    }

    pub fn embed(&self, nonce: Nonce, payload: &Payload, cb: &Codebook) -> Result<WatermarkedLatent> {
        check_codebook(self.params(), cb)?;
        let encoded = se_encode(&self.latent, &self.template, cb, payload)?;
        pdsr_apply(&encoded, &self.key, nonce, &self.template)
    }
}

/// A watermarked initial latent together with its public nonce.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkedLatent {
    pub latent: Latent,
    pub nonce: Nonce,
    pub params: TemplateParams,
}

pub(crate) fn check_codebook(params: &TemplateParams, cb: &Codebook) -> Result<()> {
    if cb.s() != params.s {
        return Err(Error::Parameter(format!(
            "codebook permutes {} blocks but groups hold s={}",
            cb.s(),
            params.s
        )));
    }
    Ok(())
}

/// Expected payload length `G * k`.
pub fn payload_len(params: &TemplateParams, cb: &Codebook) -> usize {
    params.groups() * cb.k() as usize
}

/// Within-group block permutation: slot `j` of group `g` receives the
/// block at position `sigma_g(j)` where `sigma_g = Enc(m_g)`.
pub fn se_encode(z: &Latent, tpl: &IndexTemplate, cb: &Codebook, m: &Payload) -> Result<Latent> {
    let params = tpl.params();
    check_codebook(params, cb)?;
    z.expect_len(params.d)?;
    let expected = payload_len(params, cb);
    if m.len() != expected {
        return Err(Error::Payload(format!(
            "payload has {} bits, expected G*k = {expected}",
            m.len()
        )));
    }
    let chunks = m.chunks(cb.k())?;
    let src = z.values();
    let mut out = src.to_vec();
    for (g, &chunk) in chunks.iter().enumerate() {
        let sigma = cb.enc(chunk)?;
        for j in 0..params.s {
            let dst_block = tpl.block_at(j, g);
            let src_block = tpl.block_at(sigma.get(j), g);
            for (&di, &si) in dst_block.iter().zip(src_block) {
                out[di] = src[si];
            }
        }
    }
    Ok(Latent::from_vec_unchecked(out))
}

/// Block placement permutation `tau(r)` over the `N` blocks.
pub fn pdsr_permutation(key: &SecretKey, nonce: Nonce, blocks: usize) -> Result<Vec<usize>> {
    prp(&kdf(key, &nonce), LABEL_PDSR, blocks)
}

fn move_blocks(input: &[f32], tpl: &IndexTemplate, tau: &[usize], forward: bool) -> Vec<f32> {
    let mut out = input.to_vec();
    for (n, &t) in tau.iter().enumerate() {
        let (dst, src) = if forward { (n, t) } else { (t, n) };
        for (&di, &si) in tpl.block(dst).iter().zip(tpl.block(src)) {
            out[di] = input[si];
        }
    }
    out
}

/// `z_p[I_n] = z_e[I_tau(n)]`.
pub fn pdsr_apply(z_e: &Latent, key: &SecretKey, nonce: Nonce, tpl: &IndexTemplate) -> Result<WatermarkedLatent> {
    let params = *tpl.params();
    z_e.expect_len(params.d)?;
    let tau = pdsr_permutation(key, nonce, params.blocks())?;
    Ok(WatermarkedLatent {
        latent: Latent::from_vec_unchecked(move_blocks(z_e.values(), tpl, &tau, true)),
        nonce,
        params,
    })
}

/// `z_e[I_n] = z_p[I_tau^-1(n)]`, the exact inverse of [`pdsr_apply`].
pub fn pdsr_undo(z_p: &Latent, key: &SecretKey, nonce: Nonce, tpl: &IndexTemplate) -> Result<Latent> {
    let params = tpl.params();
    z_p.expect_len(params.d)?;
    let tau = pdsr_permutation(key, nonce, params.blocks())?;
    Ok(Latent::from_vec_unchecked(move_blocks(z_p.values(), tpl, &tau, false)))
}

/// Regenerates `z` from `key` and embeds `m`.
pub fn embed(
    key: &SecretKey,
    nonce: Nonce,
    m: &Payload,
    params: TemplateParams,
    cb: &Codebook,
) -> Result<WatermarkedLatent> {
    KeyedTemplate::new(key, params)?.embed(nonce, m, cb)
}

/// Embeds into an externally supplied latent `z`; detection must use
/// [`crate::detector::Verifier::with_latent`] on the same `z`.
pub fn embed_with_latent(
    key: &SecretKey,
    nonce: Nonce,
    z: Latent,
    m: &Payload,
    params: TemplateParams,
    cb: &Codebook,
) -> Result<WatermarkedLatent> {
    KeyedTemplate::with_latent(key, z, params)?.embed(nonce, m, cb)
}

pub const LATENT_MAGIC: &[u8; 4] = b"SMK1";

/// On-disk latent: `"SMK1"`, little-endian `u32` D, Q, b, k, the 16-byte
/// nonce, then D little-endian `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub params: TemplateParams,
    pub k: u32,
    pub nonce: Nonce,
    pub latent: Latent,
}

impl LatentRecord {
    pub fn from_watermarked(w: &WatermarkedLatent, k: u32) -> Self {
        Self {
            params: w.params,
            k,
            nonce: w.nonce,
            latent: w.latent.clone(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + 4 * self.latent.len());
        out.extend_from_slice(LATENT_MAGIC);
        for field in [self.params.d, self.params.q, self.params.b] {
            out.extend_from_slice(&(field as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(self.nonce.as_bytes());
        for v in self.latent.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 16 + 16;
        if bytes.len() < HEADER {
            return Err(Error::Format(format!(
                "latent file truncated: {} bytes, header needs {HEADER}",
                bytes.len()
            )));
        }
        if &bytes[..4] != LATENT_MAGIC {
            return Err(Error::Format("missing SMK1 magic".into()));
        }
        let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (d, q, b, k) = (field(0) as usize, field(1) as usize, field(2) as usize, field(3));
        let params = TemplateParams::new(d, q, b).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let nonce = Nonce::from_bytes(bytes[20..36].try_into().unwrap());
        let body = &bytes[HEADER..];
        if body.len() != 4 * d {
            return Err(Error::Format(format!(
                "latent body holds {} bytes, header declares {} values",
                body.len(),
                d
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            params,
            k,
            nonce,
            latent: Latent::new(values)?,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}
