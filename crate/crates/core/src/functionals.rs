//! Lattice sums of `phi(B_k)`: the full p-domain functional, its marginal
//! versions and the excursion volume.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::fieldsim::FieldSample;
use crate::hermite::HermiteSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Full,
    /// Sum over block `block` with the coordinates of the other axes fixed.
    Marginal {
        block: usize,
        frozen: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalValue {
    pub value: f64,
    pub kind: FunctionalKind,
}

impl FunctionalValue {
    pub fn full(sample: &FieldSample, phi: &HermiteSpec) -> Self {
        Self {
            value: evaluate(sample, phi),
            kind: FunctionalKind::Full,
        }
    }

    pub fn marginal(sample: &FieldSample, phi: &HermiteSpec, block: usize, frozen: &[usize]) -> Result<Self> {
        Ok(Self {
            value: marginal_evaluate(sample, phi, block, frozen)?,
            kind: FunctionalKind::Marginal {
                block,
                frozen: frozen.to_vec(),
            },
        })
    }
}

/// `sum_k phi(B_k)` over the whole lattice.
pub fn evaluate(sample: &FieldSample, phi: &HermiteSpec) -> f64 {
    sample.values.iter().map(|&x| phi.eval(x)).sum()
}

/// `sum phi(B)` over the points of block `block`, with every axis outside
/// that block fixed at `frozen` (given in axis order).
pub fn marginal_evaluate(sample: &FieldSample, phi: &HermiteSpec, block: usize, frozen: &[usize]) -> Result<f64> {
    let lattice = sample.lattice();
    if block >= lattice.blocks.len() {
        return Err(Error::InvalidParameter(format!(
            "block index {block} out of range for {} blocks",
            lattice.blocks.len()
        )));
    }
    let shape = lattice.shape();
    let axes = lattice.axis_range(block);
    let expected = shape.len() - axes.len();
    if frozen.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: frozen.len(),
        });
    }
    let strides = fft::strides(&shape);
    let mut base = 0;
    let mut fixed = frozen.iter();
    for axis in (0..shape.len()).filter(|a| !axes.contains(a)) {
        let &c = fixed.next().expect("length checked");
        if c >= shape[axis] {
            return Err(Error::OutOfRange {
                coordinate: c,
                size: shape[axis],
            });
        }
        base += c * strides[axis];
    }
    let block_shape = &shape[axes.clone()];
    let block_strides = &strides[axes];
    let mut sum = 0.0;
    fft::for_each_index(block_shape, |idx| {
        let pos = base + idx.iter().zip(block_strides).map(|(i, s)| i * s).sum::<usize>();
        sum += phi.eval(sample.values[pos]);
    });
    Ok(sum)
}

/// Number of lattice points with `B_k >= level`.
pub fn excursion_volume(sample: &FieldSample, level: f64) -> f64 {
    sample.values.iter().filter(|&&x| x >= level).count() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{CompositeCovariance, FactorCovariance};
    use crate::fieldsim::{build_sampler, Provenance};
    use crate::lattice::LatticeSpec;
    use proptest::prelude::*;

    fn zeros(sizes: &[&[usize]]) -> FieldSample {
        let lattice = LatticeSpec::from_sizes(sizes).unwrap();
        FieldSample {
            values: vec![0.0; lattice.total_points()],
            provenance: Provenance {
                covariance: "zero".into(),
                lattice,
                seed: 0,
                replicate_id: 0,
            },
        }
    }

    fn random_sample(seed: u64) -> FieldSample {
        let cov = CompositeCovariance::separable(vec![
            FactorCovariance::cauchy(0.8, 1).unwrap(),
            FactorCovariance::exponential(1.5, 2).unwrap(),
        ])
        .unwrap();
        let lattice = LatticeSpec::from_sizes(&[&[4], &[3, 5]]).unwrap();
        build_sampler(&cov, &lattice).unwrap().draw(seed, 0)
    }

    #[test]
    fn zero_sample_examples() {
        let z = zeros(&[&[3], &[4]]);
        assert_eq!(evaluate(&z, &HermiteSpec::pure(2).unwrap()), -12.0);
        assert_eq!(evaluate(&z, &HermiteSpec::indicator(0.0).unwrap()), 12.0);
        assert_eq!(
            marginal_evaluate(&z, &HermiteSpec::pure(2).unwrap(), 1, &[2]).unwrap(),
            -4.0
        );
        let one = zeros(&[&[1], &[1]]);
        assert_eq!(
            marginal_evaluate(&one, &HermiteSpec::pure(2).unwrap(), 0, &[0]).unwrap(),
            -1.0
        );
    }

    #[test]
    fn pure_one_is_the_sum() {
        let s = random_sample(4);
        let sum: f64 = s.values.iter().sum();
        assert_eq!(evaluate(&s, &HermiteSpec::pure(1).unwrap()), sum);
    }

    #[test]
    fn marginal_slices_sum_to_full() {
        let s = random_sample(7);
        let phi = HermiteSpec::pure(3).unwrap();
        let full = evaluate(&s, &phi);
        let mut by_block0 = 0.0;
        for a in 0..3 {
            for b in 0..5 {
                by_block0 += marginal_evaluate(&s, &phi, 0, &[a, b]).unwrap();
            }
        }
        let by_block1: f64 = (0..4).map(|a| marginal_evaluate(&s, &phi, 1, &[a]).unwrap()).sum();
        assert!((full - by_block0).abs() < 1e-12 * (1.0 + full.abs()));
        assert!((full - by_block1).abs() < 1e-12 * (1.0 + full.abs()));
        let v = FunctionalValue::marginal(&s, &phi, 1, &[2]).unwrap();
        assert_eq!(
            v.kind,
            FunctionalKind::Marginal {
                block: 1,
                frozen: vec![2]
            }
        );
    }

    #[test]
    fn marginal_errors() {
        let s = random_sample(1);
        let phi = HermiteSpec::pure(2).unwrap();
        assert!(matches!(
            marginal_evaluate(&s, &phi, 1, &[4]),
            Err(Error::OutOfRange { coordinate: 4, size: 4 })
        ));
        assert!(matches!(
            marginal_evaluate(&s, &phi, 0, &[0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(marginal_evaluate(&s, &phi, 2, &[]).is_err());
    }

    #[test]
    fn excursion_examples() {
        let s = random_sample(2);
        assert_eq!(excursion_volume(&s, -1e9), 60.0);
        assert_eq!(excursion_volume(&s, 1e9), 0.0);
    }

    proptest! {
        #[test]
        fn excursion_equals_indicator_functional(seed in 0u64..1000, level in -2.0f64..2.0) {
            let s = random_sample(seed);
            prop_assert_eq!(excursion_volume(&s, level), evaluate(&s, &HermiteSpec::indicator(level).unwrap()));
        }

        #[test]
        fn linear_in_phi(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let s = random_sample(seed);
            let h2 = HermiteSpec::pure(2).unwrap();
            let ind = HermiteSpec::indicator(0.3).unwrap();
            let combo = HermiteSpec::custom(move |x| {
                a * crate::hermite::hermite_eval(2, x) + b * if x >= 0.3 { 1.0 } else { 0.0 }
            });
            let lhs = evaluate(&s, &combo);
            let rhs = a * evaluate(&s, &h2) + b * evaluate(&s, &ind);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
