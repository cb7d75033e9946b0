use crate::error::{Error, Result};

/// A flat noise latent of `D` elements.
///
/// Multi-dimensional latents (e.g. `4 x 64 x 64`) are flattened row-major
/// over `(C, H, W)` before they reach this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent(Vec<f32>);

impl Latent {
    /// Wraps `values`, rejecting NaN and infinities.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite latent value at index {i}")));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    pub(crate) fn expect_len(&self, d: usize) -> Result<()> {
        if self.0.len() != d {
            return Err(Error::Data(format!(
                "latent has {} elements, expected {d}",
                self.0.len()
            )));
        }
        Ok(())
    }

    /// Values sorted by IEEE total order; equal outputs mean equal multisets bitwise.
    pub fn sorted_bits(&self) -> Vec<u32> {
        let mut v: Vec<f32> = self.0.clone();
        v.sort_by(f32::total_cmp);
        v.into_iter().map(f32::to_bits).collect()
    }
}

impl AsRef<[f32]> for Latent {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}
