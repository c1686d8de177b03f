//! Factor and composite covariance functions on integer lattices.
//!
//! A [`FactorCovariance`] lives on one block `Z^{d_i}`; a
//! [`CompositeCovariance`] combines blocks into the covariance of the full
//! field, either as a product (separable), through the Gneiting
//! construction, as a weighted sum (additive), or as a single isotropic
//! function spanning several declared blocks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// Relative slack allowed on the most negative embedding eigenvalue.
pub const EMBEDDING_TOLERANCE: f64 = 1e-10;

/// Parametric family of a single-block covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// Fractional Gaussian noise `r_H`, one-dimensional.
    Fgn { hurst: f64 },
    /// `(1 + |x|^2)^{-beta/2}`.
    Cauchy { beta: f64 },
    /// `exp(-|x| / scale)`.
    Exponential { scale: f64 },
    /// Unit mass at lag zero.
    WhiteNoise,
    /// Explicit lag table; lags missing from the table are errors.
    Tabulated(BTreeMap<Vec<i64>, f64>),
}

/// Long-range behaviour of a family, used by the limit classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Memory {
    /// Zero at every nonzero lag.
    Delta,
    /// Faster than any power.
    Exponential,
    /// `|C(x)| ~ constant * |x|^{-exponent}` with constant slowly varying part.
    PowerLaw { exponent: f64, constant: f64 },
}

impl Memory {
    /// Whether `sum |C|^power` over `Z^dim` is finite.
    pub fn summable_at(&self, power: u32, dim: usize) -> bool {
        match *self {
            Memory::Delta | Memory::Exponential => true,
            Memory::PowerLaw { exponent, .. } => exponent * power as f64 > dim as f64,
        }
    }

    /// Decay exponent (infinite for non-power-law families).
    pub fn exponent(&self) -> f64 {
        match *self {
            Memory::PowerLaw { exponent, .. } => exponent,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorCovariance {
    family: Family,
    dim: usize,
}

impl FactorCovariance {
    pub fn fgn(hurst: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "hurst must lie in (0, 1), got {hurst}"
            )));
        }
        Ok(Self {
            family: Family::Fgn { hurst },
            dim: 1,
        })
    }

    pub fn cauchy(beta: f64, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            family: Family::Cauchy { beta },
            dim,
        })
    }

    pub fn exponential(scale: f64, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        Ok(Self {
            family: Family::Exponential { scale },
            dim,
        })
    }

    pub fn white_noise(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            family: Family::WhiteNoise,
            dim,
        })
    }

    /// Tabulated covariance. The table must hold lag zero with value 1;
    /// negative lags may be omitted (evenness is used on lookup).
    pub fn tabulated(dim: usize, entries: impl IntoIterator<Item = (Vec<i64>, f64)>) -> Result<Self> {
        check_dim(dim)?;
        let mut table = BTreeMap::new();
        for (lag, value) in entries {
            if lag.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: lag.len(),
                });
            }
            if !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite table value at lag {lag:?}"
                )));
            }
            table.insert(lag, value);
        }
        match table.get(&vec![0; dim]) {
            Some(v) if (v - 1.0).abs() <= 1e-12 => {}
            _ => {
                return Err(Error::InvalidParameter(
                    "tabulated covariance must have value 1 at lag 0".into(),
                ))
            }
        }
        Ok(Self {
            family: Family::Tabulated(table),
            dim,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Short label used in reports, e.g. `cauchy(beta=0.3,d=1)`.
    pub fn label(&self) -> String {
        match &self.family {
            Family::Fgn { hurst } => format!("fgn(H={hurst})"),
            Family::Cauchy { beta } => format!("cauchy(beta={beta},d={})", self.dim),
            Family::Exponential { scale } => format!("exponential(a={scale},d={})", self.dim),
            Family::WhiteNoise => format!("white_noise(d={})", self.dim),
            Family::Tabulated(t) => format!("tabulated({} lags,d={})", t.len(), self.dim),
        }
    }

    /// Covariance at an integer lag.
    pub fn eval(&self, lag: &[i64]) -> Result<f64> {
        if lag.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: lag.len(),
            });
        }
        match &self.family {
            Family::Fgn { hurst } => Ok(fgn_at(*hurst, lag[0] as f64)),
            Family::WhiteNoise => Ok(if lag.iter().all(|&z| z == 0) { 1.0 } else { 0.0 }),
            Family::Tabulated(table) => {
                if let Some(v) = table.get(lag) {
                    return Ok(*v);
                }
                let neg: Vec<i64> = lag.iter().map(|z| -z).collect();
                table
                    .get(&neg)
                    .copied()
                    .ok_or_else(|| Error::MissingLag { lag: lag.to_vec() })
            }
            Family::Cauchy { .. } | Family::Exponential { .. } => {
                let sq: f64 = lag.iter().map(|&z| (z as f64) * (z as f64)).sum();
                self.eval_sq_norm(sq)
            }
        }
    }

    /// Closed-form evaluation at a real-valued argument.
    pub fn eval_continuous(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        match &self.family {
            Family::Fgn { hurst } => Ok(fgn_at(*hurst, x[0])),
            Family::Tabulated(_) | Family::WhiteNoise => Err(Error::UnsupportedStructure(format!(
                "{} has no continuous-argument evaluation",
                self.label()
            ))),
            _ => self.eval_sq_norm(x.iter().map(|v| v * v).sum()),
        }
    }

    /// Evaluation through the squared Euclidean norm, for isotropic families.
    pub fn eval_sq_norm(&self, sq: f64) -> Result<f64> {
        match &self.family {
            Family::Cauchy { beta } => Ok((1.0 + sq).powf(-beta / 2.0)),
            Family::Exponential { scale } => Ok((-sq.sqrt() / scale).exp()),
            _ => Err(Error::UnsupportedStructure(format!(
                "{} is not an isotropic closed-form family",
                self.label()
            ))),
        }
    }

    /// Tail metadata; `None` for tabulated models.
    pub fn memory(&self) -> Option<Memory> {
        match &self.family {
            Family::Fgn { hurst } => {
                if (hurst - 0.5).abs() < 1e-15 {
                    Some(Memory::Delta)
                } else {
                    Some(Memory::PowerLaw {
                        exponent: 2.0 - 2.0 * hurst,
                        constant: (hurst * (2.0 * hurst - 1.0)).abs(),
                    })
                }
            }
            Family::Cauchy { beta } => Some(Memory::PowerLaw {
                exponent: *beta,
                constant: 1.0,
            }),
            Family::Exponential { .. } => Some(Memory::Exponential),
            Family::WhiteNoise => Some(Memory::Delta),
            Family::Tabulated(_) => None,
        }
    }

    /// Whether the covariance is nonnegative at every lag; `None` when unknown.
    pub fn nonnegative(&self) -> Option<bool> {
        match &self.family {
            Family::Fgn { hurst } => Some(*hurst >= 0.5),
            Family::Tabulated(t) => Some(t.values().all(|&v| v >= 0.0)),
            _ => Some(true),
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::InvalidParameter("dimension must be positive".into()))
    } else {
        Ok(())
    }
}

/// `r_H(u) = (|u+1|^{2H} + |u-1|^{2H} - 2|u|^{2H}) / 2`.
///
/// For `|u| >= 2` the second difference is summed as the binomial series
/// `|u|^{2H} sum_j binom(2H, 2j) u^{-2j}`, whose terms share one sign, so
/// there is no cancellation in the far tail.
pub fn fgn_at(hurst: f64, u: f64) -> f64 {
    let a = 2.0 * hurst;
    let u = u.abs();
    if u < 2.0 {
        return 0.5 * ((u + 1.0).powf(a) + (u - 1.0).abs().powf(a) - 2.0 * u.powf(a));
    }
    let x2 = 1.0 / (u * u);
    // binom(a, 2) x^2 + binom(a, 4) x^4 + ...
    let mut coef = a * (a - 1.0) / 2.0;
    let mut power = x2;
    let mut sum = 0.0;
    for j in 1..200 {
        let term = coef * power;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
        let k = 2.0 * j as f64;
        coef *= (a - k) * (a - k - 1.0) / ((k + 1.0) * (k + 2.0));
        power *= x2;
    }
    u.powf(a) * sum
}

/// A factor scaled by a positive weight: `K(x) = weight * model(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weighted {
    pub weight: f64,
    pub model: FactorCovariance,
}

impl Weighted {
    pub fn eval(&self, lag: &[i64]) -> Result<f64> {
        Ok(self.weight * self.model.eval(lag)?)
    }
}

/// Covariance of the whole field on `Z^d`, `d = sum d_i`.
#[derive(Debug, Clone, PartialEq)]
pub enum CompositeCovariance {
    /// `C(x) = prod_i C_i(x_i)`.
    Separable(Vec<FactorCovariance>),
    /// `C(x1, x2) = c2(x2) c1(x1 c2(x2)^{2/d1})`.
    Gneiting { c1: FactorCovariance, c2: FactorCovariance },
    /// `C(x1, x2) = w1 k1(x1) + w2 k2(x2)`, `w1 + w2 = 1`.
    Additive { k1: Weighted, k2: Weighted },
    /// One function of the full lag vector, observed over several blocks.
    Isotropic {
        model: FactorCovariance,
        block_dims: Vec<usize>,
    },
}

/// Structure tag used in reports and configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    Separable,
    Gneiting,
    Additive,
    Isotropic,
}

impl CompositeCovariance {
    pub fn separable(factors: Vec<FactorCovariance>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter(
                "separable covariance needs at least one factor".into(),
            ));
        }
        Ok(Self::Separable(factors))
    }

    /// Gneiting model. `c1` must be completely monotone in the squared norm
    /// (Cauchy or exponential) and `c2` a Cauchy factor with `beta <= d1`, so
    /// that `c2^{-2/d1} - 1` is a Bernstein function.
    pub fn gneiting(c1: FactorCovariance, c2: FactorCovariance) -> Result<Self> {
        match c1.family() {
            Family::Cauchy { .. } | Family::Exponential { .. } => {}
            _ => {
                return Err(Error::UnsupportedStructure(format!(
                    "Gneiting c1 must be a closed-form isotropic family, got {}",
                    c1.label()
                )))
            }
        }
        match c2.family() {
            Family::Cauchy { beta } if *beta <= c1.dim() as f64 => {}
            _ => {
                return Err(Error::UnsupportedStructure(format!(
                    "Gneiting c2 must be cauchy with beta <= d1 = {}, got {}",
                    c1.dim(),
                    c2.label()
                )))
            }
        }
        Ok(Self::Gneiting { c1, c2 })
    }

    pub fn additive(k1: Weighted, k2: Weighted) -> Result<Self> {
        for (i, k) in [&k1, &k2].into_iter().enumerate() {
            if !(k.weight > 0.0 && k.weight.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "additive weight w{} must be positive, got {}",
                    i + 1,
                    k.weight
                )));
            }
        }
        if (k1.weight + k2.weight - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "additive weights must sum to 1, got {} + {}",
                k1.weight, k2.weight
            )));
        }
        Ok(Self::Additive { k1, k2 })
    }

    pub fn isotropic(model: FactorCovariance, block_dims: Vec<usize>) -> Result<Self> {
        if block_dims.iter().sum::<usize>() != model.dim() || block_dims.contains(&0) {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: block_dims.iter().sum(),
            });
        }
        Ok(Self::Isotropic { model, block_dims })
    }

    pub fn kind(&self) -> StructureKind {
        match self {
            Self::Separable(_) => StructureKind::Separable,
            Self::Gneiting { .. } => StructureKind::Gneiting,
            Self::Additive { .. } => StructureKind::Additive,
            Self::Isotropic { .. } => StructureKind::Isotropic,
        }
    }

    /// Dimension of each block, in lattice axis order.
    pub fn block_dims(&self) -> Vec<usize> {
        match self {
            Self::Separable(f) => f.iter().map(FactorCovariance::dim).collect(),
            Self::Gneiting { c1, c2 } => vec![c1.dim(), c2.dim()],
            Self::Additive { k1, k2 } => vec![k1.model.dim(), k2.model.dim()],
            Self::Isotropic { block_dims, .. } => block_dims.clone(),
        }
    }

    /// Human-readable model identifier used in sample provenance and reports.
    pub fn label(&self) -> String {
        match self {
            Self::Separable(f) => f.iter().map(FactorCovariance::label).collect::<Vec<_>>().join(" x "),
            Self::Gneiting { c1, c2 } => format!("gneiting[{} | {}]", c1.label(), c2.label()),
            Self::Additive { k1, k2 } => format!(
                "additive[{}*{} + {}*{}]",
                k1.weight,
                k1.model.label(),
                k2.weight,
                k2.model.label()
            ),
            Self::Isotropic { model, block_dims } => format!("isotropic[{} over {block_dims:?}]", model.label()),
        }
    }

    pub fn total_dim(&self) -> usize {
        self.block_dims().iter().sum()
    }

    /// Covariance at an integer lag of the full lattice.
    pub fn eval(&self, lag: &[i64]) -> Result<f64> {
        let d = self.total_dim();
        if lag.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: lag.len(),
            });
        }
        match self {
            Self::Separable(factors) => {
                let mut offset = 0;
                let mut value = 1.0;
                for f in factors {
                    value *= f.eval(&lag[offset..offset + f.dim()])?;
                    offset += f.dim();
                }
                Ok(value)
            }
            Self::Gneiting { c1, c2 } => {
                let (x1, x2) = lag.split_at(c1.dim());
                let sq1: f64 = x1.iter().map(|&z| (z as f64).powi(2)).sum();
                let outer = c2.eval(x2)?;
                let shrink = outer.powf(2.0 / c1.dim() as f64);
                Ok(outer * c1.eval_sq_norm(sq1 * shrink)?)
            }
            Self::Additive { k1, k2 } => {
                let (x1, x2) = lag.split_at(k1.model.dim());
                Ok(k1.eval(x1)? + k2.eval(x2)?)
            }
            Self::Isotropic { model, .. } => model.eval(lag),
        }
    }

    /// Separable bounds of a Gneiting covariance at `lag`:
    /// `c2(x2) c1(x1) <= C <= c2(x2) c1(x1 c2(diam)^{2/d1})`, where `diam`
    /// is the diameter of the block-2 window.
    pub fn gneiting_sandwich(&self, lag: &[i64], domain_diameter2: f64) -> Result<(f64, f64)> {
        let Self::Gneiting { c1, c2 } = self else {
            return Err(Error::UnsupportedStructure(
                "sandwich bounds need a Gneiting covariance".into(),
            ));
        };
        let d = c1.dim() + c2.dim();
        if lag.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: lag.len(),
            });
        }
        let (x1, x2) = lag.split_at(c1.dim());
        let sq1: f64 = x1.iter().map(|&z| (z as f64).powi(2)).sum();
        let outer = c2.eval(x2)?;
        let floor = c2.eval_sq_norm(domain_diameter2 * domain_diameter2)?;
        let lower = outer * c1.eval_sq_norm(sq1)?;
        let upper = outer * c1.eval_sq_norm(sq1 * floor.powf(2.0 / c1.dim() as f64))?;
        Ok((lower, upper))
    }
}

/// Circulant-embedding spectrum of a factor on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub embedding_sizes: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

impl SpectrumReport {
    pub(crate) fn from_eigenvalues(embedding_sizes: Vec<usize>, eigenvalues: Vec<f64>) -> Self {
        let min_eigenvalue = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let max_eigenvalue = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            embedding_sizes,
            eigenvalues,
            min_eigenvalue,
            max_eigenvalue,
        }
    }

    /// Nonnegative up to `EMBEDDING_TOLERANCE * max`.
    pub fn is_nonnegative(&self) -> bool {
        self.min_eigenvalue >= -EMBEDDING_TOLERANCE * self.max_eigenvalue.abs()
    }
}

/// Spectrum of the minimal circulant embedding (`2(n-1)` per axis) of a
/// factor covariance restricted to a grid with the given per-axis sizes.
pub fn embedding_spectrum(model: &FactorCovariance, sizes: &[usize]) -> Result<SpectrumReport> {
    embedding_spectrum_scaled(model, sizes, 0)
}

pub(crate) fn embedding_spectrum_scaled(
    model: &FactorCovariance,
    sizes: &[usize],
    doublings: u32,
) -> Result<SpectrumReport> {
    if sizes.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: sizes.len(),
        });
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidParameter("grid sizes must be positive".into()));
    }
    let m: Vec<usize> = sizes.iter().map(|&n| fft::embedding_len(n, doublings)).collect();
    let eig = fft::embedding_eigenvalues(&m, |lag| model.eval(lag))?;
    Ok(SpectrumReport::from_eigenvalues(m, eig))
}
