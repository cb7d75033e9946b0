//! Detection and payload decoding by codebook matching against the
//! regenerated canonical latent.

use serde::Serialize;

use crate::codebook::{Codebook, Permutation};
use crate::codec::{check_codebook, pdsr_undo, payload_len, KeyedTemplate};
use crate::error::{Error, Result};
use crate::keyspace::{Nonce, SecretKey};
use crate::latent::Latent;
use crate::payload::Payload;
use crate::template::{IndexTemplate, TemplateParams};

/// Stabilizer in the margin denominator.
pub const MARGIN_EPS: f64 = 1e-12;

/// Detection threshold used for the reference operating point (FPR 1e-6).
pub const REFERENCE_TAU: f64 = 0.005542;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionMode {
    /// Margins against the codewords of a claimed payload.
    Claimed,
    /// Margins between the best and second-best codeword.
    Blind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub decoded_payload: Payload,
    pub group_margins: Vec<f64>,
    pub statistic: f64,
    pub decision: bool,
    pub threshold: f64,
    pub mode: DetectionMode,
    /// Fraction of decoded bits agreeing with the claimed payload.
    pub bit_accuracy: Option<f64>,
    /// `scores[g][v] = d_g(sigma_v)`, when requested.
    pub per_group_scores: Option<Vec<Vec<f64>>>,
}

/// Serializable view of a [`DetectionReport`].
#[derive(Debug, Clone, Serialize)]
pub struct ReportRecord<'a> {
    pub schema: u32,
    pub mode: DetectionMode,
    pub statistic: f64,
    pub threshold: f64,
    pub decision: bool,
    pub payload_hex: String,
    pub margins: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bit_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<&'a [Vec<f64>]>,
}

impl DetectionReport {
    pub fn record(&self) -> ReportRecord<'_> {
        ReportRecord {
            schema: 1,
            mode: self.mode,
            statistic: self.statistic,
            threshold: self.threshold,
            decision: self.decision,
            payload_hex: self.decoded_payload.to_hex(),
            margins: &self.group_margins,
            bit_accuracy: self.bit_accuracy,
            scores: self.per_group_scores.as_deref(),
        }
    }
}

/// Result of matching one group against the codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDecode {
    pub sigma_hat: Permutation,
    pub chunk: u32,
    pub d_min: f64,
    pub d_second: f64,
    pub scores: Vec<f64>,
}

/// `max(0, (d_comp - d_tgt) / (d_comp + eps))`.
pub fn margin(d_tgt: f64, d_comp: f64, eps: f64) -> f64 {
    ((d_comp - d_tgt) / (d_comp + eps)).max(0.0)
}

// Eight independent lanes so the reduction vectorizes without reassociation.
fn block_sqdist(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            lanes[l] += d * d;
        }
    }
    let mut total: f64 = lanes.iter().map(|&v| v as f64).sum();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = (x - y) as f64;
        total += d * d;
    }
    total
}

fn gather_group(z: &[f32], tpl: &IndexTemplate, g: usize, out: &mut Vec<f32>) {
    out.clear();
    for n in tpl.group(g) {
        out.extend(tpl.block(n).iter().map(|&i| z[i]));
    }
}

fn check_lengths(z_hat_e: &Latent, z_ref: &Latent, tpl: &IndexTemplate) -> Result<()> {
    z_hat_e.expect_len(tpl.params().d)?;
    z_ref.expect_len(tpl.params().d)
}

/// `d_g(sigma) = sum_j || z_hat_e[I_{j,g}] - z[I_{sigma(j),g}] ||^2`.
pub fn group_score(
    z_hat_e: &Latent,
    z_ref: &Latent,
    tpl: &IndexTemplate,
    g: usize,
    sigma: &Permutation,
) -> Result<f64> {
    check_lengths(z_hat_e, z_ref, tpl)?;
    let p = tpl.params();
    if g >= p.groups() {
        return Err(Error::Index { index: g, limit: p.groups() });
    }
    if sigma.len() != p.s {
        return Err(Error::Data(format!("permutation of {} does not match s={}", sigma.len(), p.s)));
    }
    let mut obs = Vec::new();
    let mut reference = Vec::new();
    gather_group(z_hat_e.values(), tpl, g, &mut obs);
    gather_group(z_ref.values(), tpl, g, &mut reference);
    let b = p.b;
    Ok((0..p.s)
        .map(|j| {
            let src = sigma.get(j);
            block_sqdist(&obs[j * b..(j + 1) * b], &reference[src * b..(src + 1) * b])
        })
        .sum())
}

// Scores every codeword for one group; ties resolve to the lowest index.
fn match_group(obs: &[f32], reference: &[f32], b: usize, cb: &Codebook, ops: &mut u64) -> GroupDecode {
    let s = cb.s();
    let mut scores = Vec::with_capacity(cb.len());
    let mut d_min = f64::INFINITY;
    let mut d_second = f64::INFINITY;
    let mut best = 0usize;
    for (v, sigma) in cb.codewords().iter().enumerate() {
        let mut d = 0.0;
        for j in 0..s {
            let src = sigma.get(j);
            d += block_sqdist(&obs[j * b..(j + 1) * b], &reference[src * b..(src + 1) * b]);
            *ops += b as u64;
        }
        if d < d_min {
            d_second = d_min;
            d_min = d;
            best = v;
        } else if d < d_second {
            d_second = d;
        }
        scores.push(d);
    }
    GroupDecode {
        sigma_hat: cb.codewords()[best].clone(),
        chunk: best as u32,
        d_min,
        d_second,
        scores,
    }
}

/// Best-matching codeword for group `g`, with the best and runner-up scores.
pub fn decode_group(
    z_hat_e: &Latent,
    z_ref: &Latent,
    tpl: &IndexTemplate,
    cb: &Codebook,
    g: usize,
) -> Result<GroupDecode> {
    check_lengths(z_hat_e, z_ref, tpl)?;
    check_codebook(tpl.params(), cb)?;
    let p = tpl.params();
    if g >= p.groups() {
        return Err(Error::Index { index: g, limit: p.groups() });
    }
    let mut obs = Vec::new();
    let mut reference = Vec::new();
    gather_group(z_hat_e.values(), tpl, g, &mut obs);
    gather_group(z_ref.values(), tpl, g, &mut reference);
    Ok(match_group(&obs, &reference, p.b, cb, &mut 0))
}

/// Per-key verification state: canonical latent, template, and the
/// reference blocks of every group gathered contiguously.
#[derive(Debug, Clone)]
pub struct Verifier {
    keyed: KeyedTemplate,
    codebook: Codebook,
    reference: Vec<f32>,
}

impl Verifier {
    pub fn new(key: &SecretKey, params: TemplateParams, codebook: Codebook) -> Result<Self> {
        Self::from_keyed(KeyedTemplate::new(key, params)?, codebook)
    }

    /// Verifier for latents embedded with [`crate::codec::embed_with_latent`].
    pub fn with_latent(key: &SecretKey, z: Latent, params: TemplateParams, codebook: Codebook) -> Result<Self> {
        Self::from_keyed(KeyedTemplate::with_latent(key, z, params)?, codebook)
    }

    pub fn from_keyed(keyed: KeyedTemplate, codebook: Codebook) -> Result<Self> {
        check_codebook(keyed.params(), &codebook)?;
        let tpl = keyed.template();
        let groups = keyed.params().groups();
        let mut reference = Vec::with_capacity(keyed.params().d);
        let mut buf = Vec::new();
        for g in 0..groups {
            gather_group(keyed.latent().values(), tpl, g, &mut buf);
            reference.extend_from_slice(&buf);
        }
        Ok(Self {
            keyed,
            codebook,
            reference,
        })
    }

    pub fn params(&self) -> &TemplateParams {
        self.keyed.params()
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn keyed(&self) -> &KeyedTemplate {
        &self.keyed
    }

    pub fn payload_len(&self) -> usize {
        payload_len(self.params(), &self.codebook)
    }

    /// Undoes the block placement permutation of a query latent.
    pub fn align(&self, z_query: &Latent, nonce: Nonce) -> Result<Latent> {
        pdsr_undo(z_query, self.keyed.key(), nonce, self.keyed.template())
    }

    /// Decodes every group of an aligned latent. `ops` accumulates the
    /// number of element comparisons performed.
    pub fn decode_aligned(&self, z_hat_e: &Latent, ops: &mut u64) -> Result<Vec<GroupDecode>> {
        let p = self.params();
        z_hat_e.expect_len(p.d)?;
        let span = p.s * p.b;
        let mut obs = Vec::with_capacity(span);
        Ok((0..p.groups())
            .map(|g| {
                gather_group(z_hat_e.values(), self.keyed.template(), g, &mut obs);
                match_group(&obs, &self.reference[g * span..(g + 1) * span], p.b, &self.codebook, ops)
            })
            .collect())
    }

    pub fn detect(
        &self,
        z_query: &Latent,
        nonce: Nonce,
        claimed: Option<&Payload>,
        tau_det: f64,
    ) -> Result<DetectionReport> {
        self.detect_with(z_query, nonce, claimed, tau_det, false)
    }

    /// As [`Verifier::detect`], optionally keeping the full score matrix.
    pub fn detect_with(
        &self,
        z_query: &Latent,
        nonce: Nonce,
        claimed: Option<&Payload>,
        tau_det: f64,
        keep_scores: bool,
    ) -> Result<DetectionReport> {
        z_query.expect_len(self.params().d)?;
        let k = self.codebook.k();
        let claimed_chunks = match claimed {
            Some(m) => {
                if m.len() != self.payload_len() {
                    return Err(Error::Data(format!(
                        "claimed payload has {} bits, expected {}",
                        m.len(),
                        self.payload_len()
                    )));
                }
                Some(m.chunks(k)?)
            }
            None => None,
        };
        let aligned = self.align(z_query, nonce)?;
        let decodes = self.decode_aligned(&aligned, &mut 0)?;

        let group_margins: Vec<f64> = match &claimed_chunks {
            Some(chunks) => decodes
                .iter()
                .zip(chunks)
                .map(|(dg, &target)| {
                    let d_tgt = dg.scores[target as usize];
                    let d_comp = dg
                        .scores
                        .iter()
                        .enumerate()
                        .filter(|&(v, _)| v != target as usize)
                        .map(|(_, &d)| d)
                        .fold(f64::INFINITY, f64::min);
                    margin(d_tgt, d_comp, MARGIN_EPS)
                })
                .collect(),
            None => decodes
                .iter()
                .map(|dg| margin(dg.d_min, dg.d_second, MARGIN_EPS))
                .collect(),
        };
        let statistic = group_margins.iter().sum::<f64>() / group_margins.len() as f64;
        let chunks: Vec<u32> = decodes.iter().map(|dg| dg.chunk).collect();
        let decoded_payload = Payload::from_chunks(&chunks, k)?;
        let bit_accuracy = match claimed {
            Some(m) => Some(decoded_payload.bit_accuracy(m)?),
            None => None,
        };
        Ok(DetectionReport {
            decoded_payload,
            group_margins,
            statistic,
            decision: statistic >= tau_det,
            threshold: tau_det,
            mode: if claimed.is_some() {
                DetectionMode::Claimed
            } else {
                DetectionMode::Blind
            },
            bit_accuracy,
            per_group_scores: keep_scores.then(|| decodes.into_iter().map(|d| d.scores).collect()),
        })
    }
}

/// One-shot detection: regenerates the reference from `key`, undoes the
/// placement permutation under `nonce`, and decodes every group.
pub fn detect(
    z_query: &Latent,
    key: &SecretKey,
    nonce: Nonce,
    params: TemplateParams,
    cb: &Codebook,
    claimed_payload: Option<&Payload>,
    tau_det: f64,
) -> Result<DetectionReport> {
    Verifier::new(key, params, cb.clone())?.detect(z_query, nonce, claimed_payload, tau_det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::canonical_codebook;
    use crate::codec::{embed, se_encode};
    use crate::keyspace::{KEY_LEN, NONCE_LEN};
    use crate::template::build_template_unshuffled;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn key(b: u8) -> SecretKey {
        SecretKey::from_bytes([b; KEY_LEN])
    }

    #[test]
    fn margin_cases() {
        assert!((margin(0.0, 2.0, 1e-12) - 1.0).abs() < 1e-12);
        assert_eq!(margin(1.0, 1.0, 1e-12), 0.0);
        assert_eq!(margin(3.0, 1.0, 1e-12), 0.0);
    }

    #[test]
    fn two_block_score_arithmetic() {
        // s=2, b=1: reference blocks (1.0, 3.0), observed (3.0, 1.0)
        let z_ref = Latent::new(vec![1.0, 3.0]).unwrap();
        let obs = Latent::new(vec![3.0, 1.0]).unwrap();
        let params = TemplateParams::new(2, 2, 1).unwrap();
        let tpl = build_template_unshuffled(&z_ref, params).unwrap();
        let id = Permutation::identity(2);
        let swap = Permutation::new(vec![1, 0]).unwrap();
        assert_eq!(group_score(&obs, &z_ref, &tpl, 0, &id).unwrap(), 8.0);
        assert_eq!(group_score(&obs, &z_ref, &tpl, 0, &swap).unwrap(), 0.0);
        assert!(group_score(&obs, &z_ref, &tpl, 1, &id).is_err());
        assert!(group_score(&Latent::new(vec![0.0]).unwrap(), &z_ref, &tpl, 0, &id).is_err());
    }

    #[test]
    fn exact_match_scores_zero_and_decodes() {
        let params = TemplateParams::new(1024, 4, 16).unwrap();
        let cb = canonical_codebook();
        let kt = KeyedTemplate::new(&key(1), params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chunks: Vec<u32> = (0..params.groups()).map(|_| rng.random_range(0..16)).collect();
        let m = Payload::from_chunks(&chunks, 4).unwrap();
        let z_e = se_encode(kt.latent(), kt.template(), &cb, &m).unwrap();
        for (g, &c) in chunks.iter().enumerate() {
            let sigma = cb.enc(c).unwrap();
            assert_eq!(group_score(&z_e, kt.latent(), kt.template(), g, sigma).unwrap(), 0.0);
            let dg = decode_group(&z_e, kt.latent(), kt.template(), &cb, g).unwrap();
            assert_eq!(dg.chunk, c);
            assert_eq!(&dg.sigma_hat, sigma);
            assert_eq!(dg.d_min, 0.0);
            assert!(dg.d_second > 0.0);
            for (v, w) in cb.codewords().iter().enumerate() {
                let direct = group_score(&z_e, kt.latent(), kt.template(), g, w).unwrap();
                assert_eq!(direct.to_bits(), dg.scores[v].to_bits());
                assert!(direct >= 0.0);
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // a constant latent makes every codeword score identically
        let params = TemplateParams::new(16, 4, 4).unwrap();
        let z = Latent::new(vec![0.5; 16]).unwrap();
        let tpl = build_template_unshuffled(&z, params).unwrap();
        let dg = decode_group(&z, &z, &tpl, &canonical_codebook(), 0).unwrap();
        assert_eq!(dg.chunk, 0);
        assert_eq!(dg.d_min, dg.d_second);
    }

    #[test]
    fn clean_detection_both_modes() {
        let params = TemplateParams::default();
        let cb = canonical_codebook();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Payload::random(&mut rng, 256);
        let nonce = Nonce::random(&mut rng);
        let w = embed(&key(9), nonce, &m, params, &cb).unwrap();
        let verifier = Verifier::new(&key(9), params, cb).unwrap();
        for claimed in [Some(&m), None] {
            let rep = verifier.detect(&w.latent, nonce, claimed, REFERENCE_TAU).unwrap();
            assert_eq!(rep.decoded_payload, m);
            assert!(rep.group_margins.iter().all(|&mg| (mg - 1.0).abs() < 1e-9));
            assert!(rep.statistic > 0.999 && rep.decision);
            let mean = rep.group_margins.iter().sum::<f64>() / rep.group_margins.len() as f64;
            assert_eq!(rep.statistic, mean);
        }
        let rep = verifier.detect(&w.latent, nonce, Some(&m), REFERENCE_TAU).unwrap();
        assert_eq!(rep.mode, DetectionMode::Claimed);
        assert_eq!(rep.bit_accuracy, Some(1.0));
    }

    #[test]
    fn wrong_claim_gives_zero_margins() {
        let params = TemplateParams::new(1024, 4, 16).unwrap();
        let cb = canonical_codebook();
        let nonce = Nonce::from_bytes([5; NONCE_LEN]);
        let m = Payload::zeros(64);
        let w = embed(&key(3), nonce, &m, params, &cb).unwrap();
        let other = Payload::from_chunks(&[1; 16], 4).unwrap();
        let rep = detect(&w.latent, &key(3), nonce, params, &cb, Some(&other), REFERENCE_TAU).unwrap();
        assert!(rep.group_margins.iter().all(|&mg| mg == 0.0));
        assert!(!rep.decision);
        assert_eq!(rep.bit_accuracy, Some(0.75));
    }

    #[test]
    fn detect_dimension_errors() {
        let params = TemplateParams::new(64, 4, 4).unwrap();
        let cb = canonical_codebook();
        let v = Verifier::new(&key(1), params, cb).unwrap();
        let nonce = Nonce::from_bytes([0; NONCE_LEN]);
        assert!(matches!(
            v.detect(&Latent::new(vec![0.0; 63]).unwrap(), nonce, None, 0.5),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            v.detect(&Latent::new(vec![0.0; 64]).unwrap(), nonce, Some(&Payload::zeros(8)), 0.5),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn operation_count_is_exact() {
        let params = TemplateParams::default();
        let v = Verifier::new(&key(2), params, canonical_codebook()).unwrap();
        let mut ops = 0;
        v.decode_aligned(v.keyed().latent(), &mut ops).unwrap();
        assert_eq!(ops, 64 * 16 * 4 * 64);
    }

    #[test]
    fn report_record_fields() {
        let params = TemplateParams::new(64, 4, 4).unwrap();
        let cb = canonical_codebook();
        let nonce = Nonce::from_bytes([1; NONCE_LEN]);
        let w = embed(&key(4), nonce, &Payload::zeros(16), params, &cb).unwrap();
        let verifier = Verifier::new(&key(4), params, cb).unwrap();
        let rep = verifier.detect_with(&w.latent, nonce, None, 0.1, true).unwrap();
        let json = serde_json::to_value(rep.record()).unwrap();
        assert_eq!(json["schema"], 1);
        assert_eq!(json["mode"], "blind");
        assert_eq!(json["payload_hex"], "0000");
        assert_eq!(json["decision"], true);
        assert_eq!(json["margins"].as_array().unwrap().len(), 4);
        assert_eq!(json["scores"].as_array().unwrap().len(), 4);
        assert!(json.get("bit_accuracy").is_none());
        assert!(!json.to_string().contains(&key(4).to_hex()));
    }
}
