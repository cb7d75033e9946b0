//! Balanced permutation codebooks mapping `k`-bit chunks to within-group
//! block orders.
//!
//! A codeword `sigma` sends group slot `j` the block from bin `sigma[j]`.
//! Codewords are stored 0-based; the text format and [`Permutation::one_based`]
//! use the 1-based notation of the published table.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// A permutation of `0..s`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &v in &map {
            if v >= map.len() || std::mem::replace(&mut seen[v], true) {
                return Err(Error::Parameter(format!("{map:?} is not a permutation")));
            }
        }
        Ok(Self(map))
    }

    pub fn from_one_based(map: &[usize]) -> Result<Self> {
        if map.contains(&0) {
            return Err(Error::Parameter(format!("{map:?} is not 1-based")));
        }
        Self::new(map.iter().map(|&v| v - 1).collect())
    }

    pub fn identity(s: usize) -> Self {
        Self((0..s).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Source position for slot `j`.
    pub fn get(&self, j: usize) -> usize {
        self.0[j]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|v| v + 1).collect()
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(usize::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// The canonical 16-word balanced codebook over `S_4`, rows `v = 0..15`.
pub const CANONICAL_TABLE: [[usize; 4]; 16] = [
    [1, 2, 4, 3],
    [1, 3, 2, 4],
    [1, 3, 4, 2],
    [1, 4, 3, 2],
    [2, 1, 4, 3],
    [2, 3, 1, 4],
    [2, 4, 1, 3],
    [2, 4, 3, 1],
    [3, 1, 2, 4],
    [3, 2, 1, 4],
    [3, 2, 4, 1],
    [3, 4, 1, 2],
    [4, 1, 2, 3],
    [4, 1, 3, 2],
    [4, 2, 3, 1],
    [4, 3, 2, 1],
];

#[derive(Debug, Clone)]
pub struct Codebook {
    codewords: Vec<Permutation>,
    index: HashMap<Permutation, u32>,
    k: u32,
    s: usize,
}

impl Codebook {
    /// Validates and wraps an explicit codeword list (entry `v` encodes chunk `v`).
    ///
    /// Requires `2^k` distinct permutations of a common length `s`, with each
    /// source index appearing exactly `2^k / s` times at every position.
    pub fn new(codewords: Vec<Permutation>) -> Result<Self> {
        let size = codewords.len();
        if size < 2 || !size.is_power_of_two() {
            return Err(Error::Parameter(format!(
                "codebook size {size} is not a power of two >= 2"
            )));
        }
        let k = size.trailing_zeros();
        let s = codewords[0].len();
        if s == 0 || codewords.iter().any(|c| c.len() != s) {
            return Err(Error::Parameter("codewords have inconsistent lengths".into()));
        }
        let mut index = HashMap::with_capacity(size);
        for (v, c) in codewords.iter().enumerate() {
            if index.insert(c.clone(), v as u32).is_some() {
                return Err(Error::Parameter(format!("duplicate codeword {c:?}")));
            }
        }
        if !size.is_multiple_of(s) {
            return Err(Error::Parameter(format!(
                "{size} codewords cannot be balanced over {s} positions"
            )));
        }
        let per_cell = size / s;
        for pos in 0..s {
            let mut counts = vec![0usize; s];
            for c in &codewords {
                counts[c.get(pos)] += 1;
            }
            if counts.iter().any(|&n| n != per_cell) {
                return Err(Error::Parameter(format!(
                    "codebook is unbalanced at position {}: {counts:?}",
                    pos + 1
                )));
            }
        }
        Ok(Self {
            codewords,
            index,
            k,
            s,
        })
    }

    /// Bits per group.
    pub fn k(&self) -> u32 {
        self.k
    }

    /// Permutation length (group size).
    pub fn s(&self) -> usize {
        self.s
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn codewords(&self) -> &[Permutation] {
        &self.codewords
    }

    pub fn enc(&self, chunk: u32) -> Result<&Permutation> {
        self.codewords.get(chunk as usize).ok_or_else(|| {
            Error::Payload(format!("chunk {chunk} does not fit in {} bits", self.k))
        })
    }

    pub fn dec(&self, sigma: &Permutation) -> Result<u32> {
        self.index
            .get(sigma)
            .copied()
            .ok_or_else(|| Error::NotACodeword(sigma.one_based()))
    }

    /// Parses the text format: line `v` holds codeword `v` as comma-separated
    /// 1-based indices.
    pub fn parse(text: &str) -> Result<Self> {
        let mut codewords = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let entries = line
                .split(',')
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("codebook line {}: {e}", line_no + 1)))?;
            codewords.push(Permutation::from_one_based(&entries)?);
        }
        Self::new(codewords)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.codewords {
            let parts: Vec<String> = c.one_based().iter().map(usize::to_string).collect();
            out.push_str(&parts.join(","));
            out.push('\n');
        }
        out
    }
}

/// The canonical `s = 4`, `k = 4` codebook.
pub fn canonical_codebook() -> Codebook {
    let words = CANONICAL_TABLE
        .iter()
        .map(|row| Permutation::from_one_based(row).expect("canonical row is a permutation"))
        .collect();
    Codebook::new(words).expect("canonical codebook is balanced")
}

/// Free-function form of [`Codebook::enc`].
pub fn enc(cb: &Codebook, chunk: u32) -> Result<&Permutation> {
    cb.enc(chunk)
}

/// Free-function form of [`Codebook::dec`].
pub fn dec(cb: &Codebook, sigma: &Permutation) -> Result<u32> {
    cb.dec(sigma)
}
