//! Probabilists' Hermite polynomials, Hermite coefficients of test
//! functions and the Hermite rank.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_QMAX: usize = 20;
pub const DEFAULT_RANK_TOL: f64 = 1e-12;
/// Largest chaos order for which `q!` is handled.
pub const MAX_ORDER: usize = 30;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `H_q(x)` by the three-term recurrence.
pub fn hermite_eval(q: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if q == 0 {
        return prev;
    }
    for k in 1..q {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `[H_0(x), ..., H_qmax(x)]`.
pub fn hermite_all(qmax: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(qmax + 1);
    out.push(1.0);
    if qmax >= 1 {
        out.push(x);
    }
    for k in 1..qmax {
        let next = x * out[k] - k as f64 * out[k - 1];
        out.push(next);
    }
    out
}

/// Orthonormal Hermite values `H_k(x) / sqrt(k!)` for `k = 0..=n`.
fn orthonormal_all(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(x);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
        out.push(next);
    }
    out
}

pub fn factorial(q: usize) -> f64 {
    (1..=q).map(|k| k as f64).product()
}

/// Gauss-Hermite rule for the standard Gaussian measure (weights sum to 1).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// `n`-point rule: Golub-Welsch nodes, one Newton polish step, weights
    /// `1 / sum_{k<n} p_k(x)^2` from the orthonormal recurrence.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("quadrature needs at least one node".into()));
        }
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(f64::total_cmp);
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..2 {
                let p = orthonormal_all(n, *x);
                // p_n' = sqrt(n) p_{n-1}
                let dp = (n as f64).sqrt() * p[n - 1];
                if dp != 0.0 {
                    *x -= p[n] / dp;
                }
            }
            let p = orthonormal_all(n - 1, *x);
            weights.push(1.0 / p.iter().map(|v| v * v).sum::<f64>());
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NumericalFailure("Gauss-Hermite weights not finite".into()));
        }
        Ok(Self { nodes, weights })
    }

    /// `E[f(N)]` under the rule.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Pointwise test function.
pub type CustomFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PhiKind {
    /// `H_q`.
    Pure(usize),
    /// `1_{[a, inf)}`.
    Indicator(f64),
    Custom(CustomFn),
}

impl fmt::Debug for PhiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiKind::Pure(q) => write!(f, "Pure({q})"),
            PhiKind::Indicator(a) => write!(f, "Indicator({a})"),
            PhiKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// A test function `phi` with its truncated Hermite expansion.
#[derive(Clone, Debug)]
pub struct HermiteSpec {
    kind: PhiKind,
    qmax: usize,
    coefficients: OnceLock<Vec<f64>>,
}

impl HermiteSpec {
    pub fn pure(q: usize) -> Result<Self> {
        if q == 0 || q > MAX_ORDER {
            return Err(Error::InvalidParameter(format!(
                "pure Hermite order must lie in 1..={MAX_ORDER}, got {q}"
            )));
        }
        Ok(Self::with_kind(PhiKind::Pure(q), DEFAULT_QMAX.max(q)))
    }

    pub fn indicator(level: f64) -> Result<Self> {
        if !level.is_finite() {
            return Err(Error::InvalidParameter("indicator level must be finite".into()));
        }
        Ok(Self::with_kind(PhiKind::Indicator(level), DEFAULT_QMAX))
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::with_kind(PhiKind::Custom(Arc::new(f)), DEFAULT_QMAX)
    }

    fn with_kind(kind: PhiKind, qmax: usize) -> Self {
        Self {
            kind,
            qmax,
            coefficients: OnceLock::new(),
        }
    }

    /// Same function with a different truncation order.
    pub fn with_qmax(self, qmax: usize) -> Result<Self> {
        if qmax == 0 || qmax > MAX_ORDER {
            return Err(Error::InvalidParameter(format!("qmax must lie in 1..={MAX_ORDER}")));
        }
        if let PhiKind::Pure(q) = self.kind {
            if q > qmax {
                return Err(Error::InvalidParameter(format!("qmax {qmax} below pure order {q}")));
            }
        }
        Ok(Self::with_kind(self.kind, qmax))
    }

    pub fn kind(&self) -> &PhiKind {
        &self.kind
    }

    pub fn qmax(&self) -> usize {
        self.qmax
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            PhiKind::Pure(q) => hermite_eval(*q, x),
            PhiKind::Indicator(a) => {
                if x >= *a {
                    1.0
                } else {
                    0.0
                }
            }
            PhiKind::Custom(f) => f(x),
        }
    }

    /// `a_0..=a_qmax`, computed once.
    pub fn coefficients(&self) -> Result<&[f64]> {
        if let Some(c) = self.coefficients.get() {
            return Ok(c);
        }
        let c = hermite_coefficients(self, self.qmax)?;
        Ok(self.coefficients.get_or_init(|| c))
    }

    /// `E[phi(N)^2]`, closed form except for custom functions.
    pub fn second_moment(&self) -> Result<f64> {
        match &self.kind {
            PhiKind::Pure(q) => Ok(factorial(*q)),
            PhiKind::Indicator(a) => Ok(normal_sf(*a)),
            PhiKind::Custom(f) => {
                let n = 2 * self.qmax + 32;
                let coarse = GaussHermite::new(n)?.expect(|x| f(x) * f(x));
                let fine = GaussHermite::new(2 * n)?.expect(|x| f(x) * f(x));
                if (coarse - fine).abs() > 1e-8 * (1.0 + fine.abs()) {
                    return Err(Error::NumericalFailure("E[phi(N)^2] did not converge".into()));
                }
                Ok(fine)
            }
        }
    }

    pub fn rank(&self) -> Result<usize> {
        hermite_rank(self.coefficients()?, DEFAULT_RANK_TOL)
    }
}

/// `a_q = E[phi(N) H_q(N)] / q!` for `q = 0..=qmax`.
///
/// Pure orders are exact unit vectors and indicators use
/// `a_0 = P(N >= a)`, `a_q = density(a) H_{q-1}(a) / q!`. Custom functions go
/// through Gauss-Hermite quadrature with `2 qmax + 32` nodes, checked
/// against twice as many.
pub fn hermite_coefficients(phi: &HermiteSpec, qmax: usize) -> Result<Vec<f64>> {
    if qmax > MAX_ORDER {
        return Err(Error::InvalidParameter(format!("qmax must be <= {MAX_ORDER}")));
    }
    match &phi.kind {
        PhiKind::Pure(q) => {
            let mut a = vec![0.0; qmax + 1];
            if *q <= qmax {
                a[*q] = 1.0;
            }
            Ok(a)
        }
        PhiKind::Indicator(level) => Ok(indicator_coefficients(*level, qmax)),
        PhiKind::Custom(f) => {
            let n = 2 * qmax + 32;
            let coarse = quadrature_coefficients(|x| f(x), qmax, n)?;
            let fine = quadrature_coefficients(|x| f(x), qmax, 2 * n)?;
            for q in 0..=qmax {
                // compare on the orthonormal scale sqrt(q!) a_q
                let scale = factorial(q).sqrt();
                let diff = (coarse[q] - fine[q]).abs() * scale;
                if diff > 1e-8 * (1.0 + fine[q].abs() * scale) {
                    return Err(Error::NumericalFailure(format!(
                        "Hermite coefficient a_{q} did not converge ({} vs {})",
                        coarse[q], fine[q]
                    )));
                }
            }
            Ok(fine)
        }
    }
}

/// Closed-form coefficients of `1_{[a, inf)}`.
pub fn indicator_coefficients(level: f64, qmax: usize) -> Vec<f64> {
    let tail = normal_sf(level);
    let density = INV_SQRT_2PI * (-0.5 * level * level).exp();
    let h = hermite_all(qmax.saturating_sub(1), level);
    let mut a = Vec::with_capacity(qmax + 1);
    a.push(tail);
    for q in 1..=qmax {
        a.push(density * h[q - 1] / factorial(q));
    }
    a
}

/// `P(N >= x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Coefficients by an `nodes`-point Gauss-Hermite rule.
pub fn quadrature_coefficients(f: impl Fn(f64) -> f64, qmax: usize, nodes: usize) -> Result<Vec<f64>> {
    let rule = GaussHermite::new(nodes)?;
    let mut acc = vec![0.0; qmax + 1];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let fx = f(x);
        if !fx.is_finite() {
            return Err(Error::NumericalFailure(format!("phi({x}) is not finite")));
        }
        for (slot, p) in acc.iter_mut().zip(orthonormal_all(qmax, x)) {
            *slot += w * fx * p;
        }
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(q, v)| v / factorial(q).sqrt())
        .collect())
}

/// Smallest `q >= 1` with `|a_q| > tol`.
pub fn hermite_rank(coefficients: &[f64], tol: f64) -> Result<usize> {
    coefficients
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| a.abs() > tol)
        .map(|(q, _)| q)
        .ok_or(Error::DegenerateFunction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn recurrence_examples() {
        assert_eq!(hermite_eval(2, 1.0), 0.0);
        assert_eq!(hermite_eval(3, 2.0), 2.0);
        assert_eq!(hermite_eval(4, 0.0), 3.0);
    }

    proptest! {
        #[test]
        fn recurrence_matches_explicit(x in -5.0f64..5.0) {
            let explicit = [
                1.0,
                x,
                x * x - 1.0,
                x * x * x - 3.0 * x,
                x.powi(4) - 6.0 * x * x + 3.0,
                x.powi(5) - 10.0 * x.powi(3) + 15.0 * x,
            ];
            for (q, e) in explicit.iter().enumerate() {
                prop_assert!((hermite_eval(q, x) - e).abs() <= 1e-12 * (1.0 + e.abs()));
            }
            prop_assert_eq!(hermite_all(5, x)[5], hermite_eval(5, x));
        }
    }

    #[test]
    fn orthogonality_under_quadrature() {
        let rule = GaussHermite::new(2 * DEFAULT_QMAX + 32).unwrap();
        assert_abs_diff_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        for m in 0..=12 {
            for n in 0..=12 {
                let ip = rule.expect(|x| hermite_eval(m, x) * hermite_eval(n, x));
                let expected = if m == n { factorial(n) } else { 0.0 };
                let scaled = (ip - expected) / (factorial(m) * factorial(n)).sqrt();
                assert!(scaled.abs() < 1e-10, "m={m} n={n}: {ip}");
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        let a = HermiteSpec::pure(3).unwrap().coefficients().unwrap().to_vec();
        assert_eq!(a[3], 1.0);
        assert_eq!(a.iter().sum::<f64>(), 1.0);

        let sq = HermiteSpec::custom(|x| x * x);
        let a = sq.coefficients().unwrap();
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a[2], 1.0, epsilon = 1e-12);
        for (q, v) in a.iter().enumerate() {
            if q != 0 && q != 2 {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
            }
        }

        let ind = HermiteSpec::indicator(0.0).unwrap();
        let a = ind.coefficients().unwrap();
        assert_abs_diff_eq!(a[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 0.3989422804014327, epsilon = 1e-15);
    }

    #[test]
    fn indicator_closed_form_matches_quadrature() {
        // Gauss-Hermite is poor for a step, so integrate density * H_q over
        // [a, 14] with composite Simpson instead
        for &level in &[-1.0, 0.0, 0.7] {
            let closed = indicator_coefficients(level, 8);
            let steps = 40_000;
            let h = (14.0 - level) / steps as f64;
            for q in 0..=8 {
                let g = |x: f64| INV_SQRT_2PI * (-0.5 * x * x).exp() * hermite_eval(q, x);
                let mut s = g(level) + g(14.0);
                for k in 1..steps {
                    s += g(level + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
                }
                let simpson = s * h / 3.0 / factorial(q);
                assert_abs_diff_eq!(closed[q], simpson, epsilon = 1e-11);
            }
            let quad = quadrature_coefficients(|x| if x >= level { 1.0 } else { 0.0 }, 4, 400).unwrap();
            for q in 0..=4 {
                assert!((closed[q] - quad[q]).abs() < 5e-2, "level={level} q={q}");
            }
        }
        // smooth surrogate with an exact answer: a_q of exp(x) is e^{1/2} / q!
        let quad = quadrature_coefficients(f64::exp, 10, 72).unwrap();
        for (q, v) in quad.iter().enumerate() {
            assert_abs_diff_eq!(*v, 0.5f64.exp() / factorial(q), epsilon = 1e-12);
        }
    }

    #[test]
    fn custom_step_fails_to_converge() {
        let step = HermiteSpec::custom(|x| if x >= 0.3 { 1.0 } else { 0.0 });
        assert!(matches!(step.coefficients(), Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(HermiteSpec::indicator(0.0).unwrap().rank().unwrap(), 1);
        assert_eq!(hermite_rank(&[1.0, 0.0, 1.0], 1e-12).unwrap(), 2);
        assert_eq!(HermiteSpec::pure(5).unwrap().rank().unwrap(), 5);
        assert!(matches!(
            hermite_rank(&[1.0, 0.0, 0.0], 1e-12),
            Err(Error::DegenerateFunction)
        ));
        // level 1 indicator: a_2 = density * H_1(1) / 2 is nonzero, a_1 too
        assert_eq!(HermiteSpec::indicator(1.0).unwrap().rank().unwrap(), 1);
    }

    #[test]
    fn parseval_for_indicator() {
        for &level in &[-0.5, 0.0, 1.2] {
            let a = indicator_coefficients(level, 30);
            let tail = normal_sf(level);
            let mut partial = 0.0;
            let mut last_gap = f64::INFINITY;
            for (q, v) in a.iter().enumerate() {
                partial += factorial(q) * v * v;
                let gap = tail - partial;
                assert!(gap >= -1e-12 && gap <= last_gap + 1e-15);
                last_gap = gap;
            }
            assert!(last_gap < 0.05);
        }
    }
}
