use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Standard deviation of the embedding initialiser.
pub const EMBEDDING_INIT_STD: f64 = 0.01;

/// `rows × dim` lookup matrix for one categorical feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Embedding {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn normal(rows: usize, dim: usize, rng: &mut Rng) -> Self {
        let dist = Normal::new(0.0, EMBEDDING_INIT_STD).expect("valid std");
        let mut e = Self::zeros(rows, dim);
        for v in &mut e.data {
            *v = dist.sample(rng);
        }
        e
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }
}

/// One embedding matrix per categorical feature, looked up and concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    tables: Vec<Embedding>,
}

impl EmbeddingTable {
    pub fn new(tables: Vec<Embedding>) -> Self {
        Self { tables }
    }

    pub fn normal(cardinalities: &[usize], dim: usize, rng: &mut Rng) -> Self {
        Self::new(cardinalities.iter().map(|&c| Embedding::normal(c, dim, rng)).collect())
    }

    pub fn tables(&self) -> &[Embedding] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [Embedding] {
        &mut self.tables
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.rows).collect()
    }

    /// Total width of the concatenated lookups.
    pub fn width(&self) -> usize {
        self.tables.iter().map(|t| t.dim).sum()
    }

    pub fn check(&self, indices: &[u32]) -> Result<()> {
        if indices.len() != self.tables.len() {
            return Err(Error::DimensionMismatch {
                expected: self.tables.len(),
                actual: indices.len(),
                context: "categorical feature count",
            });
        }
        for (f, (&i, t)) in indices.iter().zip(&self.tables).enumerate() {
            if i as usize >= t.rows {
                return Err(Error::Schema(format!(
                    "categorical feature {f}: index {i} outside cardinality {}",
                    t.rows
                )));
            }
        }
        Ok(())
    }

    /// Appends the looked-up rows to `out`. Indices must be checked.
    pub fn lookup_into(&self, indices: &[u32], out: &mut Vec<f64>) {
        for (&i, t) in indices.iter().zip(&self.tables) {
            out.extend_from_slice(t.row(i as usize));
        }
    }

    /// Scatters a gradient over the concatenated lookup back onto the rows.
    pub fn accumulate_grads(&self, indices: &[u32], grad: &[f64], grads: &mut [Vec<f64>]) {
        let mut offset = 0;
        for ((&i, t), g) in indices.iter().zip(&self.tables).zip(grads.iter_mut()) {
            let row = &mut g[i as usize * t.dim..(i as usize + 1) * t.dim];
            for (r, v) in row.iter_mut().zip(&grad[offset..offset + t.dim]) {
                *r += v;
            }
            offset += t.dim;
        }
    }

    pub(crate) fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.tables.iter().map(|t| t.data.as_slice())
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.tables.iter_mut().map(|t| t.data.as_mut_slice())
    }

    pub(crate) fn shapes(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.tables.iter().map(|t| vec![t.rows, t.dim])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_scatter() {
        let table = EmbeddingTable::new(vec![
            Embedding {
                rows: 2,
                dim: 2,
                data: vec![1.0, 2.0, 3.0, 4.0],
            },
            Embedding {
                rows: 3,
                dim: 1,
                data: vec![5.0, 6.0, 7.0],
            },
        ]);
        let mut out = Vec::new();
        table.lookup_into(&[1, 2], &mut out);
        assert_eq!(out, vec![3.0, 4.0, 7.0]);
        let mut grads = vec![vec![0.0; 4], vec![0.0; 3]];
        table.accumulate_grads(&[1, 2], &[0.1, 0.2, 0.3], &mut grads);
        assert_eq!(grads, vec![vec![0.0, 0.0, 0.1, 0.2], vec![0.0, 0.0, 0.3]]);
        assert!(table.check(&[2, 0]).is_err());
        assert!(table.check(&[0]).is_err());
    }
}
