//! Brute-force Gaussian moments of Hermite products by pairing
//! enumeration (Wick/Isserlis with the no-self-pairing diagram rule), for
//! certifying the closed forms in `chaoscalc` on tiny lattices.

use crate::covariance::CompositeCovariance;
use crate::error::{Error, Result};
use crate::kernel::grid_points;
use crate::lattice::LatticeSpec;

/// Largest total Hermite degree the enumeration accepts.
pub const MAX_DEGREE: usize = 16;
/// Largest lattice for functional moments.
pub const MAX_POINTS: usize = 4;

/// `E[prod_j H_{q_j}(X_{k_j})]` for a centered Gaussian vector with unit
/// variances and covariance `cov`.
#[derive(Debug, Clone, PartialEq)]
pub struct WickProblem {
    pub cov: Vec<Vec<f64>>,
    /// `(point index k_j, order q_j)`.
    pub monomial: Vec<(usize, usize)>,
}

impl WickProblem {
    fn validate(&self) -> Result<()> {
        let m = self.cov.len();
        for (i, row) in self.cov.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            if (row[i] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "diagonal entry {i} is {} instead of 1",
                    row[i]
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if (v - self.cov[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if let Some(&(k, _)) = self.monomial.iter().find(|(k, _)| *k >= m) {
            return Err(Error::OutOfRange { coordinate: k, size: m });
        }
        let degree: usize = self.monomial.iter().map(|(_, q)| q).sum();
        if degree > MAX_DEGREE {
            return Err(Error::SizeLimit(format!(
                "total Hermite degree {degree} exceeds {MAX_DEGREE}"
            )));
        }
        Ok(())
    }
}

/// Sum over perfect matchings of the half-edges (`q_j` per factor) that
/// never pair two half-edges of the same factor; each matched pair
/// contributes the covariance of its points.
pub fn wick_moment(problem: &WickProblem) -> Result<f64> {
    problem.validate()?;
    let degree: usize = problem.monomial.iter().map(|(_, q)| q).sum();
    if degree % 2 == 1 {
        return Ok(0.0);
    }
    let points: Vec<usize> = problem.monomial.iter().map(|(k, _)| *k).collect();
    let mut remaining: Vec<usize> = problem.monomial.iter().map(|(_, q)| *q).collect();
    Ok(match_half_edges(&problem.cov, &points, &mut remaining))
}

/// Fixes one half-edge of the first factor with half-edges left and pairs
/// it with each of the `remaining[j]` half-edges of every other factor.
fn match_half_edges(cov: &[Vec<f64>], points: &[usize], remaining: &mut [usize]) -> f64 {
    let Some(i) = remaining.iter().position(|&r| r > 0) else {
        return 1.0;
    };
    remaining[i] -= 1;
    let mut total = 0.0;
    for j in i + 1..remaining.len() {
        if remaining[j] == 0 {
            continue;
        }
        let weight = remaining[j] as f64 * cov[points[i]][points[j]];
        remaining[j] -= 1;
        total += weight * match_half_edges(cov, points, remaining);
        remaining[j] += 1;
    }
    remaining[i] += 1;
    total
}

/// `E[Y[q]^order]` for `Y[q] = sum_k H_q(B_k)` on a lattice of at most
/// four points, summing `wick_moment` over every ordered point tuple.
pub fn oracle_functional_moment(
    cov: &CompositeCovariance,
    lattice: &LatticeSpec,
    q: usize,
    order: usize,
) -> Result<f64> {
    lattice.check_dims(&cov.block_dims())?;
    let n = lattice.total_points();
    if n > MAX_POINTS {
        return Err(Error::SizeLimit(format!(
            "oracle lattices are limited to {MAX_POINTS} points, got {n}"
        )));
    }
    if order != 2 && order != 4 {
        return Err(Error::InvalidParameter(format!(
            "moment order must be 2 or 4, got {order}"
        )));
    }
    if q * order > MAX_DEGREE {
        return Err(Error::SizeLimit(format!(
            "q = {q} at order {order} exceeds degree {MAX_DEGREE}"
        )));
    }
    let pts = grid_points(&lattice.shape());
    let mut matrix = vec![vec![0.0; n]; n];
    for (i, a) in pts.iter().enumerate() {
        for (j, b) in pts.iter().enumerate() {
            let lag: Vec<i64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            matrix[i][j] = cov.eval(&lag)?;
        }
    }
    let mut total = 0.0;
    let tuples = n.pow(order as u32);
    for t in 0..tuples {
        let mut rest = t;
        let monomial = (0..order)
            .map(|_| {
                let k = rest % n;
                rest /= n;
                (k, q)
            })
            .collect();
        total += wick_moment(&WickProblem {
            cov: matrix.clone(),
            monomial,
        })?;
    }
    Ok(total)
}
