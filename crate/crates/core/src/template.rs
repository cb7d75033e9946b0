//! Separability-guided index template: elements are ranked by magnitude,
//! split into `Q` equal quantile bins, each bin is key-shuffled and cut into
//! blocks of `b` indices, and group `g` aligns block `g` of every bin.
//!
//! All indices here are 0-based. Block `t` of bin `q` has flat block number
//! `n = q * T + t`, which is the order used by the block placement
//! permutation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyspace::{bin_shuffle_label, prp, SecretKey};
use crate::latent::Latent;

/// Template geometry. `s` (group size) always equals `q` (bin count).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateParams {
    pub d: usize,
    pub q: usize,
    pub b: usize,
    pub s: usize,
}

impl Default for TemplateParams {
    /// `4 x 64 x 64` latent, 4 bins, 64-element blocks.
    fn default() -> Self {
        Self {
            d: 16384,
            q: 4,
            b: 64,
            s: 4,
        }
    }
}

impl TemplateParams {
    pub fn new(d: usize, q: usize, b: usize) -> Result<Self> {
        Self::with_group_size(d, q, b, q)
    }

    pub fn with_group_size(d: usize, q: usize, b: usize, s: usize) -> Result<Self> {
        let p = Self { d, q, b, s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { d, q, b, s } = *self;
        if d == 0 || q == 0 || b == 0 {
            return Err(Error::Parameter(format!(
                "template sizes must be positive (D={d}, Q={q}, b={b})"
            )));
        }
        if d % q != 0 {
            return Err(Error::Parameter(format!("D={d} is not divisible by Q={q}")));
        }
        if (d / q) % b != 0 {
            return Err(Error::Parameter(format!(
                "bin length {} is not divisible by b={b}",
                d / q
            )));
        }
        if s != q {
            return Err(Error::Parameter(format!(
                "group size s={s} must equal the bin count Q={q}"
            )));
        }
        Ok(())
    }

    /// `l = D / Q`.
    pub fn bin_len(&self) -> usize {
        self.d / self.q
    }

    /// `T = l / b`.
    pub fn blocks_per_bin(&self) -> usize {
        self.bin_len() / self.b
    }

    /// `G = T`.
    pub fn groups(&self) -> usize {
        self.blocks_per_bin()
    }

    /// `N = D / b`.
    pub fn blocks(&self) -> usize {
        self.d / self.b
    }
}

#[derive(Debug, Clone, Copy)]
enum BinOrdering<'a> {
    Keyed(&'a SecretKey),
    #[cfg(test)]
    Identity,
}

/// Index structure `(pi, B_q, I_{q,t}, G_g)` for one key and canonical latent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTemplate {
    params: TemplateParams,
    rank: Vec<usize>,
    bins: Vec<Vec<usize>>,
    blocks: Vec<usize>,
}

/// Builds the template for `z` under `key`.
pub fn build_template(key: &SecretKey, z: &Latent, params: TemplateParams) -> Result<IndexTemplate> {
    build(BinOrdering::Keyed(key), z, params)
}

#[cfg(test)]
pub(crate) fn build_template_unshuffled(z: &Latent, params: TemplateParams) -> Result<IndexTemplate> {
    build(BinOrdering::Identity, z, params)
}

fn build(ordering: BinOrdering<'_>, z: &Latent, params: TemplateParams) -> Result<IndexTemplate> {
    params.validate()?;
    z.expect_len(params.d)?;
    let values = z.values();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("latent contains non-finite values".into()));
    }

    // stable: equal magnitudes keep ascending original index
    let mut rank: Vec<usize> = (0..params.d).collect();
    rank.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()));

    let len = params.bin_len();
    let bins: Vec<Vec<usize>> = rank.chunks_exact(len).map(<[usize]>::to_vec).collect();

    let mut blocks = Vec::with_capacity(params.d);
    for (q, bin) in bins.iter().enumerate() {
        match ordering {
            BinOrdering::Keyed(key) => {
                let order = prp(key, &bin_shuffle_label(q + 1), len)?;
                blocks.extend(order.iter().map(|&i| bin[i]));
            }
            #[cfg(test)]
            BinOrdering::Identity => blocks.extend_from_slice(bin),
        }
    }

    Ok(IndexTemplate {
        params,
        rank,
        bins,
        blocks,
    })
}

impl IndexTemplate {
    pub fn params(&self) -> &TemplateParams {
        &self.params
    }

    /// Magnitude ranking `pi`, ascending.
    pub fn rank(&self) -> &[usize] {
        &self.rank
    }

    /// Bin `q` in rank order (before the keyed shuffle).
    pub fn bin(&self, q: usize) -> &[usize] {
        &self.bins[q]
    }

    /// Block number `n` of the flat block list.
    pub fn block(&self, n: usize) -> &[usize] {
        let b = self.params.b;
        &self.blocks[n * b..(n + 1) * b]
    }

    /// Flat block number of block `t` in bin `q`.
    pub fn block_number(&self, q: usize, t: usize) -> usize {
        q * self.params.blocks_per_bin() + t
    }

    /// Block `I_{q,t}`.
    pub fn block_at(&self, q: usize, t: usize) -> &[usize] {
        self.block(self.block_number(q, t))
    }

    /// Flat block numbers of group `g`, one per bin in bin order.
    pub fn group(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.params.q).map(move |q| self.block_number(q, g))
    }

    /// Concatenated blocks in flat order; a permutation of `0..D`.
    pub fn block_order(&self) -> &[usize] {
        &self.blocks
    }

    fn check(&self, q: usize, g: usize) -> Result<()> {
        if q >= self.params.q {
            return Err(Error::Index {
                index: q,
                limit: self.params.q,
            });
        }
        if g >= self.params.groups() {
            return Err(Error::Index {
                index: g,
                limit: self.params.groups(),
            });
        }
        Ok(())
    }
}

/// Values of `z` at block `I_{q,g}`, in tuple order.
pub fn block_values(z: &Latent, tpl: &IndexTemplate, q: usize, g: usize) -> Result<Vec<f32>> {
    tpl.check(q, g)?;
    z.expect_len(tpl.params.d)?;
    let v = z.values();
    Ok(tpl.block_at(q, g).iter().map(|&i| v[i]).collect())
}

/// Writes `values` into block `I_{q,g}` of `z`.
pub fn scatter_block(z: &mut [f32], tpl: &IndexTemplate, q: usize, g: usize, values: &[f32]) -> Result<()> {
    tpl.check(q, g)?;
    if z.len() != tpl.params.d || values.len() != tpl.params.b {
        return Err(Error::Data("scatter dimensions do not match the template".into()));
    }
    for (&i, &v) in tpl.block_at(q, g).iter().zip(values) {
        z[i] = v;
    }
    Ok(())
}
