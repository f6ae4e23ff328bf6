//! Polynomial basis over multi-indices for local polynomial fits.
//!
//! A basis of order p over v continuous coordinates contains one entry per
//! multi-index k with |k| <= p. Entries are grouped by total degree, and
//! within each degree block the multi-indices are ordered lexicographically
//! with the last coordinate given priority. This ordering is frozen: local
//! coefficient vectors are only meaningful relative to it, so it must never
//! change between runs or versions.
//!
//! For order 2 over two coordinates with displacement (a, b) the basis
//! vector reads (1, a, b, a^2, ab, b^2).

use crate::error::{Error, Result};

/// Enumerated multi-index basis with a frozen ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexBasis {
    order: usize,
    dimension: usize,
    /// Flattened multi-indices, `dimension` entries each. The first index is
    /// always the zero multi-index, so the intercept sits at position 0.
    indices: Vec<u32>,
}

/// Number of multi-indices of total degree exactly `k` over `dim` coordinates.
pub fn indices_of_degree(k: usize, dim: usize) -> usize {
    if dim == 0 {
        return usize::from(k == 0);
    }
    // C(k + dim - 1, dim - 1)
    binomial(k + dim - 1, dim - 1)
}

/// Total basis size for order `p` over `dim` coordinates.
pub fn basis_size(p: usize, dim: usize) -> usize {
    (0..=p).map(|k| indices_of_degree(k, dim)).sum()
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    let mut num = 1usize;
    for i in 0..k {
        num = num * (n - i) / (i + 1);
    }
    num
}

impl MultiIndexBasis {
    pub fn new(order: usize, dimension: usize) -> Self {
        let mut indices = Vec::new();
        let mut scratch = vec![0u32; dimension];
        for degree in 0..=order {
            let mut block = Vec::new();
            enumerate_degree(degree as u32, dimension, &mut scratch, 0, &mut block);
            // Ascending in the last coordinate first, then the one before it,
            // and so on.
            block.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
            for idx in block {
                indices.extend_from_slice(&idx);
            }
        }
        let basis = MultiIndexBasis { order, dimension, indices };
        debug_assert_eq!(basis.len(), basis_size(order, dimension));
        basis
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Basis size N_p.
    pub fn len(&self) -> usize {
        match self.dimension {
            0 => 1,
            dim => self.indices.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The i-th multi-index.
    pub fn multi_index(&self, i: usize) -> &[u32] {
        &self.indices[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Iterate over multi-indices in the frozen order.
    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.len()).map(move |i| self.multi_index(i))
    }

    /// Evaluate the basis at displacement `x - center` into `out`.
    ///
    /// Entry i equals the displacement raised to the i-th multi-index; the
    /// first entry is always 1.
    pub fn eval_into(&self, x: &[f64], center: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if x.len() != self.dimension || center.len() != self.dimension {
            return Err(Error::Shape(format!(
                "basis expects {} coordinates, got {} and {}",
                self.dimension,
                x.len(),
                center.len()
            )));
        }
        out.clear();
        if self.dimension == 0 {
            out.push(1.0);
            return Ok(());
        }
        // Power table: powers[s][e] = (x_s - center_s)^e.
        let mut powers = vec![1.0; self.dimension * (self.order + 1)];
        for s in 0..self.dimension {
            let d = x[s] - center[s];
            let row = &mut powers[s * (self.order + 1)..(s + 1) * (self.order + 1)];
            for e in 1..=self.order {
                row[e] = row[e - 1] * d;
            }
        }
        for i in 0..self.len() {
            let idx = self.multi_index(i);
            let mut v = 1.0;
            for (s, &e) in idx.iter().enumerate() {
                v *= powers[s * (self.order + 1) + e as usize];
            }
            out.push(v);
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], center: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        self.eval_into(x, center, &mut out)?;
        Ok(out)
    }
}

fn enumerate_degree(
    remaining: u32,
    dimension: usize,
    scratch: &mut [u32],
    pos: usize,
    out: &mut Vec<Vec<u32>>,
) {
    if dimension == 0 {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if pos == dimension - 1 {
        scratch[pos] = remaining;
        out.push(scratch.to_vec());
        return;
    }
    for v in 0..=remaining {
        scratch[pos] = v;
        enumerate_degree(remaining - v, dimension, scratch, pos + 1, out);
    }
}
