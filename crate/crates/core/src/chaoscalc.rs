//! Exact chaos-calculus quantities of `Y[q] = sum_k H_q(B_k)` on a
//! lattice: variances, contraction norms, fourth cumulants, the total
//! variation bound, the additive variance split, gamma quotients and the
//! reduction ratio.
//!
//! With `f = sum_k e_k^{(x) q}` and `<e_k, e_l> = C(k - l)`,
//! `Var(Y[q]) = q! |f|^2 = q! sum_{k,l} C(k-l)^q` and
//! `|f (x)_r f|^2 = tr((C^{q-r} C^r)^2)` with elementwise powers, so every
//! quantity is a pair sum or a small graph sum over stationary kernel
//! matrices. Separable models factor over blocks.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::covariance::{CompositeCovariance, Weighted};
use crate::error::{Error, Result};
use crate::hermite::{factorial, hermite_rank, HermiteSpec, DEFAULT_RANK_TOL, MAX_ORDER};
use crate::kernel::{cycle_trace, k4_sum, LagTable};
use crate::lattice::{Block, LatticeSpec};

/// Largest kernel matrix (grid points) for 4-cycle traces.
pub const CYCLE_LIMIT: usize = 16_384;
/// Largest kernel matrix for the complete-graph sum used at `q = 3`.
pub const K4_LIMIT: usize = 512;

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check_order(q: usize) -> Result<()> {
    if q == 0 || q > MAX_ORDER {
        Err(Error::InvalidParameter(format!(
            "chaos order must lie in 1..={MAX_ORDER}, got {q}"
        )))
    } else {
        Ok(())
    }
}

/// Kernel tables in the shape that the model factors into.
enum Tables {
    Factors(Vec<LagTable>),
    Additive(LagTable, LagTable),
    Full(LagTable),
}

fn tables(cov: &CompositeCovariance, lattice: &LatticeSpec) -> Result<Tables> {
    lattice.check_dims(&cov.block_dims())?;
    Ok(match cov {
        CompositeCovariance::Separable(factors) => Tables::Factors(
            factors
                .iter()
                .zip(&lattice.blocks)
                .map(|(f, b)| LagTable::new(&b.sizes, |l| f.eval(l)))
                .collect::<Result<_>>()?,
        ),
        CompositeCovariance::Additive { k1, k2 } => Tables::Additive(
            LagTable::new(&lattice.blocks[0].sizes, |l| k1.eval(l))?,
            LagTable::new(&lattice.blocks[1].sizes, |l| k2.eval(l))?,
        ),
        _ => full_table(cov, lattice)?,
    })
}

fn full_table(cov: &CompositeCovariance, lattice: &LatticeSpec) -> Result<Tables> {
    lattice.check_dims(&cov.block_dims())?;
    Ok(Tables::Full(LagTable::new(&lattice.shape(), |l| cov.eval(l))?))
}

/// `Var(Y[q])`. Separable models use the product of per-block pair sums,
/// everything else the direct lag sum over the full lattice.
pub fn variance_hermite(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize) -> Result<f64> {
    check_order(q)?;
    Ok(factorial(q) * kernel_norm2(&tables(cov, lattice)?, q))
}

/// `q! sum_{k,l} C(k - l)^q` over the full lattice, ignoring structure.
pub fn variance_hermite_direct(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize) -> Result<f64> {
    check_order(q)?;
    Ok(factorial(q) * kernel_norm2(&full_table(cov, lattice)?, q))
}

/// `|f|^2 = sum_{k,l} C(k-l)^q`.
fn kernel_norm2(t: &Tables, q: usize) -> f64 {
    let p = q as u32;
    match t {
        Tables::Factors(ts) => ts.iter().map(|t| t.pair_sum(p)).product(),
        Tables::Full(t) => t.pair_sum(p),
        Tables::Additive(t1, t2) => (0..=q)
            .map(|k| binomial(q, k) * t1.pair_sum(k as u32) * t2.pair_sum((q - k) as u32))
            .sum(),
    }
}

/// `sum_q a_q^2 Var(Y[q])` for `q = 1..` over the given coefficients.
pub fn variance_from_coefficients(
    cov: &CompositeCovariance,
    lattice: &LatticeSpec,
    coefficients: &[f64],
) -> Result<f64> {
    if coefficients.len() > MAX_ORDER + 1 {
        return Err(Error::InvalidParameter(format!(
            "at most {} coefficients",
            MAX_ORDER + 1
        )));
    }
    let t = tables(cov, lattice)?;
    Ok(coefficients
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, a)| **a != 0.0)
        .map(|(q, a)| a * a * factorial(q) * kernel_norm2(&t, q))
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiVariance {
    /// Truncated variance `sum_{q=1}^{Qmax} a_q^2 Var(Y[q])`.
    pub value: f64,
    /// Upper bound on the dropped chaoses, `sum_{q>Qmax} q! a_q^2` times
    /// `sum |C|^{Qmax+1}` (valid since `|C| <= 1`).
    pub tail_bound: f64,
}

/// Variance of `sum_k phi(B_k)` with a conservative truncation bound.
pub fn variance_phi(cov: &CompositeCovariance, lattice: &LatticeSpec, phi: &HermiteSpec) -> Result<PhiVariance> {
    let a = phi.coefficients()?;
    let value = variance_from_coefficients(cov, lattice, a)?;
    let kept: f64 = a.iter().enumerate().map(|(q, v)| factorial(q) * v * v).sum();
    let dropped = (phi.second_moment()? - kept).max(0.0);
    let tail_bound = if dropped == 0.0 {
        0.0
    } else {
        let p = (a.len()) as u32;
        let abs_sum = match tables(cov, lattice)? {
            Tables::Factors(ts) => ts.iter().map(|t| t.abs_pair_sum(p)).product(),
            Tables::Full(t) => t.abs_pair_sum(p),
            Tables::Additive(..) => match full_table(cov, lattice)? {
                Tables::Full(t) => t.abs_pair_sum(p),
                _ => unreachable!(),
            },
        };
        dropped * abs_sum
    };
    Ok(PhiVariance { value, tail_bound })
}

fn check_contraction(q: usize, r: usize) -> Result<()> {
    check_order(q)?;
    if r == 0 || r >= q {
        return Err(Error::InvalidParameter(format!(
            "contraction index r must lie in 1..{q}, got {r}"
        )));
    }
    Ok(())
}

fn check_size(points: usize, limit: usize, what: &str) -> Result<()> {
    if points > limit {
        Err(Error::SizeLimit(format!(
            "{what} limited to {limit} points per kernel matrix, got {points}"
        )))
    } else {
        Ok(())
    }
}

/// `|f (x)_r f|^2` on `q`-th chaos kernels of the lattice.
pub fn contraction_norm(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize, r: usize) -> Result<f64> {
    check_contraction(q, r)?;
    contraction_from_tables(&tables(cov, lattice)?, q, r)
}

/// Same quantity from the full-lattice kernel, ignoring structure.
pub fn contraction_norm_direct(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize, r: usize) -> Result<f64> {
    check_contraction(q, r)?;
    contraction_from_tables(&full_table(cov, lattice)?, q, r)
}

fn contraction_from_tables(t: &Tables, q: usize, r: usize) -> Result<f64> {
    let (a, b) = (r as u32, (q - r) as u32);
    match t {
        Tables::Factors(ts) => {
            let mut value = 1.0;
            for t in ts {
                check_size(t.points(), CYCLE_LIMIT, "contraction traces")?;
                value *= cycle_trace([&t.pow(b), &t.pow(a), &t.pow(b), &t.pow(a)]);
            }
            Ok(value)
        }
        Tables::Full(t) => {
            check_size(t.points(), CYCLE_LIMIT, "contraction traces")?;
            Ok(cycle_trace([&t.pow(b), &t.pow(a), &t.pow(b), &t.pow(a)]))
        }
        Tables::Additive(t1, t2) => {
            check_size(t1.points().max(t2.points()), CYCLE_LIMIT, "contraction traces")?;
            Ok(additive_cycle(t1, t2, [b, a, b, a]))
        }
    }
}

/// Cycle trace of `(K1 (+) K2)^{p_e}` edges, expanded binomially into
/// per-block traces (power 0 on a block is the all-ones kernel).
fn additive_cycle(t1: &LagTable, t2: &LagTable, powers: [u32; 4]) -> f64 {
    let mut pow1: HashMap<u32, LagTable> = HashMap::new();
    let mut pow2: HashMap<u32, LagTable> = HashMap::new();
    let max = *powers.iter().max().unwrap_or(&0);
    for p in 0..=max {
        pow1.insert(p, t1.pow(p));
        pow2.insert(p, t2.pow(p));
    }
    let mut cache1: HashMap<[u32; 4], f64> = HashMap::new();
    let mut cache2: HashMap<[u32; 4], f64> = HashMap::new();
    let mut total = 0.0;
    for k0 in 0..=powers[0] {
        for k1 in 0..=powers[1] {
            for k2 in 0..=powers[2] {
                for k3 in 0..=powers[3] {
                    let k = [k0, k1, k2, k3];
                    let rest = [powers[0] - k0, powers[1] - k1, powers[2] - k2, powers[3] - k3];
                    let weight: f64 = (0..4).map(|e| binomial(powers[e] as usize, k[e] as usize)).product();
                    let c1 = *cache1
                        .entry(k)
                        .or_insert_with(|| cycle_trace([&pow1[&k[0]], &pow1[&k[1]], &pow1[&k[2]], &pow1[&k[3]]]));
                    let c2 = *cache2.entry(rest).or_insert_with(|| {
                        cycle_trace([&pow2[&rest[0]], &pow2[&rest[1]], &pow2[&rest[2]], &pow2[&rest[3]]])
                    });
                    total += weight * c1 * c2;
                }
            }
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourthCumulant {
    /// `E[Y~^4] - 3` of the normalized functional, or an upper bound.
    pub value: f64,
    /// False when `value` is only an upper bound (`q >= 4`).
    pub exact: bool,
}

/// Fourth cumulant of `Y[q] / sqrt(Var Y[q])`.
///
/// With `c_r = |f (x)_r f|^2` and `s_r` the symmetrized counterpart,
/// `kappa_4 = sum_r binom(q,r)^2 (c_r + binom(2q-2r, q-r) s_r) / |f|^4`.
/// For `q = 2`, `s_1 = c_1`. For `q = 3`, `s_2 = c_2 = c_1` and
/// `s_1 = (2 c_1 + 4 K) / 6` where `K` sums `C` over all six edges of a
/// 4-tuple. For `q >= 4` the bound `s_r <= c_r` is used.
pub fn fourth_cumulant(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize) -> Result<FourthCumulant> {
    check_order(q)?;
    let t = tables(cov, lattice)?;
    let norm2 = kernel_norm2(&t, q);
    if !(norm2 > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    if q == 1 {
        return Ok(FourthCumulant {
            value: 0.0,
            exact: true,
        });
    }
    let norm4 = norm2 * norm2;
    let contraction = |r: usize| contraction_from_tables(&t, q, r.min(q - r));
    match q {
        2 => Ok(FourthCumulant {
            value: 12.0 * contraction(1)? / norm4,
            exact: true,
        }),
        3 => {
            let c1 = contraction(1)?;
            let k = match &t {
                Tables::Factors(ts) => {
                    let mut v = 1.0;
                    for t in ts {
                        check_size(t.points(), K4_LIMIT, "the q = 3 six-edge sum")?;
                        v *= k4_sum(t);
                    }
                    v
                }
                Tables::Full(t) => {
                    check_size(t.points(), K4_LIMIT, "the q = 3 six-edge sum")?;
                    k4_sum(t)
                }
                Tables::Additive(..) => {
                    let Tables::Full(full) = full_table(cov, lattice)? else {
                        unreachable!()
                    };
                    check_size(full.points(), K4_LIMIT, "the q = 3 six-edge sum")?;
                    k4_sum(&full)
                }
            };
            Ok(FourthCumulant {
                value: (54.0 * c1 + 36.0 * k) / norm4,
                exact: true,
            })
        }
        _ => {
            let mut bound = 0.0;
            for r in 1..q {
                bound += binomial(q, r).powi(2) * (1.0 + binomial(2 * q - 2 * r, q - r)) * contraction(r)?;
            }
            Ok(FourthCumulant {
                value: bound / norm4,
                exact: false,
            })
        }
    }
}

/// `c_q = sqrt((4/q) sum_{r=1}^{q-1} r r!^2 binom(q,r)^4 (2q-2r)!)`.
pub fn tv_constant(q: usize) -> f64 {
    let s: f64 = (1..q)
        .map(|r| r as f64 * factorial(r).powi(2) * binomial(q, r).powi(4) * factorial(2 * q - 2 * r))
        .sum();
    (4.0 / q as f64 * s).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvBound {
    /// `min(raw, 1)`.
    pub bound: f64,
    pub raw: f64,
    /// Per-block fourth cumulants used in the product.
    pub factor_cumulants: Vec<f64>,
    pub exact: bool,
}

/// Total variation bound `c_q prod_i sqrt(kappa_4(Y_i[q]))` from the
/// marginal fourth cumulants of a separable model.
pub fn tv_bound(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize) -> Result<TvBound> {
    let CompositeCovariance::Separable(factors) = cov else {
        return Err(Error::UnsupportedStructure(
            "the product TV bound needs a separable covariance".into(),
        ));
    };
    if q < 2 {
        return Err(Error::InvalidParameter("the TV bound needs q >= 2".into()));
    }
    lattice.check_dims(&cov.block_dims())?;
    let mut exact = true;
    let mut factor_cumulants = Vec::with_capacity(factors.len());
    for (f, block) in factors.iter().zip(&lattice.blocks) {
        let single = CompositeCovariance::Separable(vec![f.clone()]);
        let k = fourth_cumulant(&single, &LatticeSpec::new(vec![block.clone()])?, q)?;
        exact &= k.exact;
        factor_cumulants.push(k.value);
    }
    let raw = tv_constant(q) * factor_cumulants.iter().map(|k| k.max(0.0).sqrt()).product::<f64>();
    Ok(TvBound {
        bound: raw.min(1.0),
        raw,
        factor_cumulants,
        exact,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveVariance {
    /// `binom(q,k)^2 V_1(k) V_2(q-k)` for `k = 0..=q`.
    pub terms: Vec<f64>,
    pub total: f64,
}

/// `Var(Y[q]) = sum_k binom(q,k)^2 V_1(k) V_2(q-k)` with
/// `V_i(k) = k! sum K_i^k` over block pairs and `V_i(0) = vol_i^2`.
pub fn additive_variance(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize) -> Result<AdditiveVariance> {
    check_order(q)?;
    let Tables::Additive(t1, t2) = tables(cov, lattice)? else {
        return Err(Error::UnsupportedStructure(
            "additive variance needs an additive covariance".into(),
        ));
    };
    let v = |t: &LagTable, k: usize| factorial(k) * t.pair_sum(k as u32);
    let terms: Vec<f64> = (0..=q)
        .map(|k| binomial(q, k).powi(2) * v(&t1, k) * v(&t2, q - k))
        .collect();
    Ok(AdditiveVariance {
        total: terms.iter().sum(),
        terms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaQuotient {
    /// `sum_{x,y} K(x-y)^q / vol^2` over the block.
    pub exact: f64,
    /// `sum_{|x| <= n} K(x)^q / n^d` with `n` the longest block side.
    pub surrogate: f64,
}

pub fn gamma_quotient(k: &Weighted, block: &Block, q: usize) -> Result<GammaQuotient> {
    check_order(q)?;
    if block.dim() != k.model.dim() {
        return Err(Error::DimensionMismatch {
            expected: k.model.dim(),
            got: block.dim(),
        });
    }
    let t = LagTable::new(&block.sizes, |l| k.eval(l))?;
    let vol = block.volume() as f64;
    let exact = t.pair_sum(q as u32) / (vol * vol);
    let n = *block.sizes.iter().max().expect("nonempty block");
    let side = 2 * n + 1;
    let ball = vec![side; block.dim()];
    let radius2 = (n * n) as i64;
    let mut sum = 0.0;
    let mut err = None;
    let mut lag = vec![0i64; block.dim()];
    crate::fft::for_each_index(&ball, |idx| {
        if err.is_some() {
            return;
        }
        for (l, &i) in lag.iter_mut().zip(idx) {
            *l = i as i64 - n as i64;
        }
        if lag.iter().map(|l| l * l).sum::<i64>() <= radius2 {
            match k.eval(&lag) {
                Ok(v) => sum += v.powi(q as i32),
                Err(e) => err = Some(e),
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(GammaQuotient {
        exact,
        surrogate: sum / (n as f64).powi(block.dim() as i32),
    })
}

/// `Var(sum phi(B)) / (a_R^2 Var(Y[R]))` over the truncated expansion.
pub fn reduction_ratio(cov: &CompositeCovariance, lattice: &LatticeSpec, coefficients: &[f64]) -> Result<f64> {
    let rank = hermite_rank(coefficients, DEFAULT_RANK_TOL)?;
    let total = variance_from_coefficients(cov, lattice, coefficients)?;
    let leading = coefficients[rank].powi(2) * variance_hermite(cov, lattice, rank)?;
    if !(leading > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok(total / leading)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub q: usize,
    pub variance: f64,
    /// `r -> |f (x)_r f|^2` for `r = 1..q-1`.
    pub contraction_norms: BTreeMap<usize, f64>,
    pub fourth_cumulant: f64,
    pub fourth_cumulant_exact: bool,
    pub tv_bound: Option<TvBound>,
    pub notes: Vec<String>,
}

/// All diagnostics for one `(cov, lattice, q)`.
pub fn chaos_report(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize) -> Result<ChaosReport> {
    let variance = variance_hermite(cov, lattice, q)?;
    let mut notes = vec![match cov {
        CompositeCovariance::Separable(_) => "separable: per-block factorization".to_string(),
        CompositeCovariance::Additive { .. } => "additive: binomial expansion over blocks".to_string(),
        _ => "full-lattice kernel".to_string(),
    }];
    let mut contraction_norms = BTreeMap::new();
    for r in 1..q {
        if r <= q - r {
            contraction_norms.insert(r, contraction_norm(cov, lattice, q, r)?);
        } else {
            let mirrored = contraction_norms[&(q - r)];
            contraction_norms.insert(r, mirrored);
        }
    }
    let k4 = fourth_cumulant(cov, lattice, q)?;
    if !k4.exact {
        notes.push(format!("fourth cumulant is an upper bound for q = {q}"));
    }
    let tv_bound = match cov {
        CompositeCovariance::Separable(_) if q >= 2 => Some(tv_bound(cov, lattice, q)?),
        _ => None,
    };
    Ok(ChaosReport {
        q,
        variance,
        contraction_norms,
        fourth_cumulant: k4.value,
        fourth_cumulant_exact: k4.exact,
        tv_bound,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::FactorCovariance;
    use approx::assert_relative_eq;

    fn white(n: usize) -> (CompositeCovariance, LatticeSpec) {
        (
            CompositeCovariance::separable(vec![FactorCovariance::white_noise(1).unwrap()]).unwrap(),
            LatticeSpec::from_sizes(&[&[n]]).unwrap(),
        )
    }

    fn point2() -> LatticeSpec {
        LatticeSpec::from_sizes(&[&[1], &[1]]).unwrap()
    }

    fn sep2(h: f64, beta: f64) -> CompositeCovariance {
        CompositeCovariance::separable(vec![
            FactorCovariance::fgn(h).unwrap(),
            FactorCovariance::cauchy(beta, 1).unwrap(),
        ])
        .unwrap()
    }

    /// Brute-force `q! sum_{x,y} C(x-y)^q` over explicit lattice pairs.
    fn brute_variance(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize) -> f64 {
        let pts = crate::kernel::grid_points(&lattice.shape());
        let mut s = 0.0;
        for a in &pts {
            for b in &pts {
                let lag: Vec<i64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                s += cov.eval(&lag).unwrap().powi(q as i32);
            }
        }
        factorial(q) * s
    }

    /// Brute-force 4-fold contraction sum.
    fn brute_contraction(cov: &CompositeCovariance, lattice: &LatticeSpec, q: usize, r: usize) -> f64 {
        let pts = crate::kernel::grid_points(&lattice.shape());
        let n = pts.len();
        let mut c = vec![0.0; n * n];
        for (i, a) in pts.iter().enumerate() {
            for (j, b) in pts.iter().enumerate() {
                let lag: Vec<i64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                c[i * n + j] = cov.eval(&lag).unwrap();
            }
        }
        let (r, s) = (r as i32, (q - r) as i32);
        // nested partial sums keep the rounding error of the 4-fold sum small
        (0..n)
            .map(|x| {
                (0..n)
                    .map(|y| {
                        (0..n)
                            .map(|z| {
                                (0..n)
                                    .map(|u| {
                                        c[x * n + z].powi(r)
                                            * c[y * n + u].powi(r)
                                            * c[x * n + y].powi(s)
                                            * c[z * n + u].powi(s)
                                    })
                                    .sum::<f64>()
                            })
                            .sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn variance_examples() {
        for q in 1..=5 {
            let (cov, _) = white(1);
            let l = LatticeSpec::from_sizes(&[&[1]]).unwrap();
            assert_eq!(variance_hermite(&cov, &l, q).unwrap(), factorial(q));
        }
        let (cov, l) = white(7);
        assert_eq!(variance_hermite(&cov, &l, 2).unwrap(), 14.0);
        assert_eq!(
            variance_from_coefficients(&cov, &l, &[0.0, 1.0, 0.0, 1.0]).unwrap(),
            49.0
        );
        let l = LatticeSpec::from_sizes(&[&[5], &[4]]).unwrap();
        let cov = sep2(0.7, 0.9);
        for q in 1..=4 {
            let f = variance_hermite(&cov, &l, q).unwrap();
            assert_relative_eq!(f, variance_hermite_direct(&cov, &l, q).unwrap(), max_relative = 1e-12);
            assert_relative_eq!(f, brute_variance(&cov, &l, q), max_relative = 1e-12);
        }
        assert!(variance_hermite(&cov, &l, 31).is_err());
    }

    #[test]
    fn variance_phi_examples() {
        let l = LatticeSpec::from_sizes(&[&[6]]).unwrap();
        let cov = CompositeCovariance::separable(vec![FactorCovariance::fgn(0.8).unwrap()]).unwrap();
        let pure = variance_phi(&cov, &l, &HermiteSpec::pure(2).unwrap()).unwrap();
        assert_eq!(pure.value, variance_hermite(&cov, &l, 2).unwrap());
        assert_eq!(pure.tail_bound, 0.0);

        let (cov, _) = white(1);
        let one = LatticeSpec::from_sizes(&[&[1]]).unwrap();
        let ind = variance_phi(&cov, &one, &HermiteSpec::indicator(0.0).unwrap()).unwrap();
        // a_0 is not part of the variance: 0.25 = sum_{q>=1} q! a_q^2
        assert!((ind.value - 0.25).abs() <= ind.tail_bound + 1e-14);
        assert!(ind.tail_bound > 0.0 && ind.tail_bound < 0.03);
    }

    #[test]
    fn contraction_examples() {
        let (cov, l) = white(9);
        assert_eq!(contraction_norm(&cov, &l, 2, 1).unwrap(), 9.0);
        let p = point2();
        let cov = sep2(0.3, 1.0);
        for q in 2..=5 {
            for r in 1..q {
                assert_relative_eq!(contraction_norm(&cov, &p, q, r).unwrap(), 1.0, max_relative = 1e-15);
            }
        }
        let l = LatticeSpec::from_sizes(&[&[6], &[6]]).unwrap();
        let cov = sep2(0.35, 0.7);
        for q in 2..=4 {
            for r in 1..q {
                let fact = contraction_norm(&cov, &l, q, r).unwrap();
                assert_relative_eq!(fact, brute_contraction(&cov, &l, q, r), max_relative = 1e-12);
                assert_relative_eq!(
                    fact,
                    contraction_norm(&cov, &l, q, q - r).unwrap(),
                    max_relative = 1e-12
                );
                let bound = (variance_hermite(&cov, &l, q).unwrap() / factorial(q)).powi(2);
                assert!(fact <= bound * (1.0 + 1e-12));
            }
        }
        assert!(contraction_norm(&cov, &l, 3, 0).is_err());
        assert!(contraction_norm(&cov, &l, 3, 3).is_err());
    }

    #[test]
    fn additive_contraction_matches_brute_force() {
        let cov = CompositeCovariance::additive(
            Weighted {
                weight: 0.35,
                model: FactorCovariance::cauchy(0.4, 1).unwrap(),
            },
            Weighted {
                weight: 0.65,
                model: FactorCovariance::exponential(1.3, 1).unwrap(),
            },
        )
        .unwrap();
        let l = LatticeSpec::from_sizes(&[&[4], &[3]]).unwrap();
        for q in 2..=3 {
            for r in 1..q {
                assert_relative_eq!(
                    contraction_norm(&cov, &l, q, r).unwrap(),
                    brute_contraction(&cov, &l, q, r),
                    max_relative = 1e-12
                );
            }
        }
        let g = CompositeCovariance::gneiting(
            FactorCovariance::cauchy(1.2, 1).unwrap(),
            FactorCovariance::cauchy(0.9, 1).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(
            contraction_norm(&g, &l, 2, 1).unwrap(),
            brute_contraction(&g, &l, 2, 1),
            max_relative = 1e-12
        );
    }

    #[test]
    fn fourth_cumulant_single_point() {
        let p = point2();
        let cov = sep2(0.6, 2.0);
        assert_eq!(fourth_cumulant(&cov, &p, 1).unwrap().value, 0.0);
        assert_relative_eq!(fourth_cumulant(&cov, &p, 2).unwrap().value, 12.0, max_relative = 1e-14);
        // E[H_3^4] / 36 - 3 = 3348 / 36 - 3
        assert_relative_eq!(fourth_cumulant(&cov, &p, 3).unwrap().value, 90.0, max_relative = 1e-14);
        let k4 = fourth_cumulant(&cov, &p, 4).unwrap();
        assert!(!k4.exact);
        // E[H_4^4] = 368064; at one point the bound is attained
        assert_relative_eq!(k4.value, 368_064.0 / 576.0 - 3.0, max_relative = 1e-14);
    }

    #[test]
    fn tv_constants_and_clamp() {
        assert_relative_eq!(tv_constant(2), 8.0, max_relative = 1e-15);
        assert_relative_eq!(tv_constant(3), 4320f64.sqrt(), max_relative = 1e-15);
        let b = tv_bound(&sep2(0.3, 1.0), &point2(), 2).unwrap();
        assert_relative_eq!(b.raw, 96.0, max_relative = 1e-14);
        assert_eq!(b.bound, 1.0);
        let add = CompositeCovariance::additive(
            Weighted {
                weight: 0.5,
                model: FactorCovariance::white_noise(1).unwrap(),
            },
            Weighted {
                weight: 0.5,
                model: FactorCovariance::white_noise(1).unwrap(),
            },
        )
        .unwrap();
        assert!(matches!(
            tv_bound(&add, &point2(), 2),
            Err(Error::UnsupportedStructure(_))
        ));
    }

    #[test]
    fn tv_bound_dominance_for_fbs() {
        let cov = sep2(0.3, 1.5);
        let l = LatticeSpec::from_sizes(&[&[64], &[32]]).unwrap();
        let b = tv_bound(&cov, &l, 2).unwrap();
        for (j, &kj) in b.factor_cumulants.iter().enumerate() {
            if b.factor_cumulants[1 - j] <= 1.0 {
                assert!(b.raw <= tv_constant(2) * kj.sqrt() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn additive_variance_examples() {
        let cov = CompositeCovariance::additive(
            Weighted {
                weight: 0.3,
                model: FactorCovariance::white_noise(1).unwrap(),
            },
            Weighted {
                weight: 0.7,
                model: FactorCovariance::white_noise(1).unwrap(),
            },
        )
        .unwrap();
        let av = additive_variance(&cov, &point2(), 1).unwrap();
        assert_relative_eq!(av.terms[0], 0.7, max_relative = 1e-15);
        assert_relative_eq!(av.terms[1], 0.3, max_relative = 1e-15);
        assert_relative_eq!(av.total, 1.0, max_relative = 1e-15);

        let cov = CompositeCovariance::additive(
            Weighted {
                weight: 0.42,
                model: FactorCovariance::cauchy(0.3, 2).unwrap(),
            },
            Weighted {
                weight: 0.58,
                model: FactorCovariance::fgn(0.8).unwrap(),
            },
        )
        .unwrap();
        let l = LatticeSpec::from_sizes(&[&[2, 2], &[2]]).unwrap();
        for q in 1..=3 {
            let av = additive_variance(&cov, &l, q).unwrap();
            assert_eq!(av.terms.len(), q + 1);
            assert!(av.terms.iter().all(|&t| t >= 0.0));
            assert_relative_eq!(av.total, brute_variance(&cov, &l, q), max_relative = 1e-12);
            assert_relative_eq!(av.total, variance_hermite(&cov, &l, q).unwrap(), max_relative = 1e-12);
        }
    }

    #[test]
    fn gamma_examples() {
        let n = 9usize;
        let constant = FactorCovariance::tabulated(1, (-(n as i64)..=n as i64).map(|l| (vec![l], 1.0))).unwrap();
        let g = gamma_quotient(
            &Weighted {
                weight: 0.4,
                model: constant,
            },
            &Block::cube(1, n).unwrap(),
            3,
        )
        .unwrap();
        assert_relative_eq!(g.exact, 0.4f64.powi(3), max_relative = 1e-14);
        let g = gamma_quotient(
            &Weighted {
                weight: 0.4,
                model: FactorCovariance::white_noise(1).unwrap(),
            },
            &Block::cube(1, n).unwrap(),
            2,
        )
        .unwrap();
        assert_relative_eq!(g.exact, 0.16 / n as f64, max_relative = 1e-14);
    }

    #[test]
    fn gamma_slope_for_long_memory_cauchy() {
        let k = Weighted {
            weight: 1.0,
            model: FactorCovariance::cauchy(0.3, 1).unwrap(),
        };
        let pts: Vec<(f64, f64)> = (6..=12)
            .map(|e| {
                let n = 1usize << e;
                let g = gamma_quotient(&k, &Block::cube(1, n).unwrap(), 2).unwrap();
                ((n as f64).ln(), g.exact.ln())
            })
            .collect();
        let m = pts.len() as f64;
        let (mx, my) = (
            pts.iter().map(|p| p.0).sum::<f64>() / m,
            pts.iter().map(|p| p.1).sum::<f64>() / m,
        );
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 0.6).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn reduction_ratio_examples() {
        let (cov, l) = white(5);
        assert_eq!(reduction_ratio(&cov, &l, &[0.0, 0.0, 1.0]).unwrap(), 1.0);
        let one = LatticeSpec::from_sizes(&[&[1]]).unwrap();
        assert_relative_eq!(
            reduction_ratio(&cov, &one, &[0.0, 0.0, 1.0, 0.0, 1.0]).unwrap(),
            13.0,
            max_relative = 1e-15
        );
        let long = CompositeCovariance::separable(vec![FactorCovariance::cauchy(0.3, 1).unwrap()]).unwrap();
        let coeffs = crate::hermite::indicator_coefficients(0.5, 12);
        let ratios: Vec<f64> = [16usize, 64, 256, 1024]
            .iter()
            .map(|&n| reduction_ratio(&long, &LatticeSpec::from_sizes(&[&[n]]).unwrap(), &coeffs).unwrap())
            .collect();
        assert!(ratios.iter().all(|&r| r >= 1.0));
        assert!(ratios.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{ratios:?}");
    }

    #[test]
    fn report_serializes() {
        let l = LatticeSpec::from_sizes(&[&[8], &[8]]).unwrap();
        let rep = chaos_report(&sep2(0.3, 1.0), &l, 3).unwrap();
        assert_eq!(rep.contraction_norms.len(), 2);
        assert_eq!(rep.contraction_norms[&1], rep.contraction_norms[&2]);
        assert!(rep.fourth_cumulant >= 0.0 && rep.fourth_cumulant_exact);
        let json = serde_json::to_string(&rep).unwrap();
        let back: ChaosReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }
}
