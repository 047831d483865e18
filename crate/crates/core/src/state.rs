//! Layout of the stacked composite state `v = (∇u, h, ψ)`.
//!
//! A state is a flat vector built from blocks. An unconstrained block holds
//! `rows` scalars; curl-free and divergence-free blocks hold `rows x N`
//! matrices stored row-major.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    Unconstrained,
    CurlFree,
    DivFree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: ConstraintKind,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub dim: usize,
    pub blocks: Vec<Block>,
}

impl StateLayout {
    pub fn new(dim: usize, blocks: Vec<Block>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(shape(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if blocks.iter().any(|b| b.rows == 0) {
            return Err(shape("blocks must have at least one row"));
        }
        Ok(Self { dim, blocks })
    }

    pub fn scalar(dim: usize) -> Self {
        Self {
            dim,
            blocks: vec![Block {
                kind: ConstraintKind::Unconstrained,
                rows: 1,
            }],
        }
    }

    pub fn block_width(&self, b: &Block) -> usize {
        match b.kind {
            ConstraintKind::Unconstrained => b.rows,
            _ => b.rows * self.dim,
        }
    }

    /// Total number of scalar components.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| self.block_width(b)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offsets of each block in the flat state vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut o = 0;
        for b in &self.blocks {
            out.push(o);
            o += self.block_width(b);
        }
        out
    }

    /// Iterate over `(kind, offset, rows)` triples.
    pub fn iter(&self) -> impl Iterator<Item = (ConstraintKind, usize, usize)> + '_ {
        self.blocks
            .iter()
            .zip(self.offsets())
            .map(|(b, o)| (b.kind, o, b.rows))
    }

    /// Per-component constraint kind.
    pub fn component_kinds(&self) -> Vec<ConstraintKind> {
        let mut out = Vec::with_capacity(self.len());
        for b in &self.blocks {
            out.extend(std::iter::repeat_n(b.kind, self.block_width(b)));
        }
        out
    }

    pub fn check_value(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.len() {
            return Err(shape(format!(
                "{what}: expected {} components, got {}",
                self.len(),
                v.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_and_offsets() {
        let l = StateLayout::new(
            2,
            vec![
                Block {
                    kind: ConstraintKind::CurlFree,
                    rows: 1,
                },
                Block {
                    kind: ConstraintKind::DivFree,
                    rows: 2,
                },
                Block {
                    kind: ConstraintKind::Unconstrained,
                    rows: 3,
                },
            ],
        )
        .unwrap();
        assert_eq!(l.len(), 2 + 4 + 3);
        assert_eq!(l.offsets(), vec![0, 2, 6]);
        assert_eq!(l.component_kinds()[5], ConstraintKind::DivFree);
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(StateLayout::new(4, vec![]).is_err());
    }
}
