use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One block of the observation window: `sizes[j]` points along axis `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub sizes: Vec<usize>,
}

impl Block {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidParameter("block must have at least one axis".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "block sizes must be >= 1, got {sizes:?}"
            )));
        }
        Ok(Self { sizes })
    }

    /// Cube with `n` points along each of `dim` axes.
    pub fn cube(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn volume(&self) -> usize {
        self.sizes.iter().product()
    }
}

/// Product window `prod_i {0..n_i}` over `p` blocks, row-major in axis order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub blocks: Vec<Block>,
}

impl LatticeSpec {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidParameter("lattice needs at least one block".into()));
        }
        Ok(Self { blocks })
    }

    /// Lattice from per-block size lists.
    pub fn from_sizes(sizes: &[&[usize]]) -> Result<Self> {
        Self::new(sizes.iter().map(|s| Block::new(s.to_vec())).collect::<Result<_>>()?)
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Block::dim).collect()
    }

    /// Per-axis sizes across all blocks.
    pub fn shape(&self) -> Vec<usize> {
        self.blocks.iter().flat_map(|b| b.sizes.iter().copied()).collect()
    }

    pub fn total_points(&self) -> usize {
        self.blocks.iter().map(Block::volume).product()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(Block::dim).sum()
    }

    /// Checks that block dimensions equal `dims`.
    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        let own = self.block_dims();
        if own.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: own.len(),
            });
        }
        for (&a, &b) in own.iter().zip(dims) {
            if a != b {
                return Err(Error::DimensionMismatch { expected: b, got: a });
            }
        }
        Ok(())
    }

    /// Range of axis indices belonging to block `i`.
    pub fn axis_range(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.blocks[..i].iter().map(Block::dim).sum();
        start..start + self.blocks[i].dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let l = LatticeSpec::from_sizes(&[&[3, 4], &[5]]).unwrap();
        assert_eq!(l.total_points(), 60);
        assert_eq!(l.shape(), vec![3, 4, 5]);
        assert_eq!(l.block_dims(), vec![2, 1]);
        assert_eq!(l.axis_range(1), 2..3);
        assert!(l.check_dims(&[2, 1]).is_ok());
        assert!(l.check_dims(&[1, 2]).is_err());
        assert!(Block::new(vec![0]).is_err());
    }
}
