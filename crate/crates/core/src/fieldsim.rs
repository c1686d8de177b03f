//! Exact Gaussian field sampling on a lattice by circulant embedding, with
//! per-factor spectra for separable models and a dense fallback.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{embedding_spectrum_scaled, CompositeCovariance, SpectrumReport};
use crate::error::{Error, Result};
use crate::fft::{self, MultiFft};
use crate::lattice::LatticeSpec;

/// Largest lattice handled by the dense fallback.
pub const DENSE_LIMIT: usize = 4096;
/// Embedding doublings tried before giving up on circulant embedding.
pub const MAX_DOUBLINGS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    KroneckerCirculant,
    FullCirculant,
    /// Independent block fields `sqrt(w1) B1(x1) + sqrt(w2) B2(x2)`.
    AdditiveCirculant,
    DenseCholesky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub covariance: String,
    pub lattice: LatticeSpec,
    pub seed: u64,
    pub replicate_id: u64,
}

/// One realization, row-major over the lattice axes.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl FieldSample {
    pub fn lattice(&self) -> &LatticeSpec {
        &self.provenance.lattice
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat little-endian f64 dump in row-major order.
    pub fn write_le(&self, mut out: impl Write) -> std::io::Result<()> {
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Circulant {
        embed_shape: Vec<usize>,
        /// `sqrt(lambda / M)` on the embedding grid.
        amplitude: Vec<f64>,
        fft: MultiFft,
    },
    Dense(DMatrix<f64>),
    /// `(sqrt(weight), block shape, factor)` per block.
    Additive(Vec<(f64, Vec<usize>, Factor)>),
}

#[derive(Debug, Clone)]
pub struct Sampler {
    method: SamplerMethod,
    exact: bool,
    shape: Vec<usize>,
    lattice: LatticeSpec,
    label: String,
    min_eigenvalue: f64,
    factor: Factor,
}

/// Chooses the sampling method for `cov` on `lattice`.
pub fn build_sampler(cov: &CompositeCovariance, lattice: &LatticeSpec) -> Result<Sampler> {
    lattice.check_dims(&cov.block_dims())?;
    let preferred = match cov {
        CompositeCovariance::Separable(_) => SamplerMethod::KroneckerCirculant,
        CompositeCovariance::Additive { .. } => SamplerMethod::AdditiveCirculant,
        _ => SamplerMethod::FullCirculant,
    };
    match build_sampler_with(cov, lattice, preferred) {
        Err(Error::NonEmbeddable { min_eigenvalue }) => {
            if lattice.total_points() <= DENSE_LIMIT {
                let mut s = build_sampler_with(cov, lattice, SamplerMethod::DenseCholesky)?;
                s.min_eigenvalue = min_eigenvalue;
                Ok(s)
            } else {
                Err(Error::NonEmbeddable { min_eigenvalue })
            }
        }
        other => other,
    }
}

/// Builds a sampler with a forced method.
pub fn build_sampler_with(cov: &CompositeCovariance, lattice: &LatticeSpec, method: SamplerMethod) -> Result<Sampler> {
    lattice.check_dims(&cov.block_dims())?;
    let shape = lattice.shape();
    let (factor, min_eigenvalue) = match method {
        SamplerMethod::KroneckerCirculant => {
            let CompositeCovariance::Separable(factors) = cov else {
                return Err(Error::UnsupportedStructure(
                    "Kronecker circulant sampling needs a separable covariance".into(),
                ));
            };
            let mut embed_shape = Vec::new();
            let mut spectrum = vec![1.0];
            let mut min_eig = f64::INFINITY;
            for (f, block) in factors.iter().zip(&lattice.blocks) {
                let report = embeddable_spectrum(|d| embedding_spectrum_scaled(f, &block.sizes, d))?;
                min_eig = min_eig.min(report.min_eigenvalue);
                embed_shape.extend_from_slice(&report.embedding_sizes);
                spectrum = spectrum
                    .iter()
                    .flat_map(|&a| report.eigenvalues.iter().map(move |&b| a * b))
                    .collect();
            }
            (circulant_factor(embed_shape, spectrum), min_eig)
        }
        SamplerMethod::FullCirculant => {
            let report = embeddable_spectrum(|d| {
                let m: Vec<usize> = shape.iter().map(|&n| fft::embedding_len(n, d)).collect();
                let eig = fft::embedding_eigenvalues(&m, |lag| cov.eval(lag))?;
                Ok(SpectrumReport::from_eigenvalues(m, eig))
            })?;
            let min_eig = report.min_eigenvalue;
            (circulant_factor(report.embedding_sizes, report.eigenvalues), min_eig)
        }
        SamplerMethod::AdditiveCirculant => {
            let CompositeCovariance::Additive { k1, k2 } = cov else {
                return Err(Error::UnsupportedStructure(
                    "additive sampling needs an additive covariance".into(),
                ));
            };
            let mut parts = Vec::new();
            let mut min_eig = f64::INFINITY;
            for (k, block) in [k1, k2].into_iter().zip(&lattice.blocks) {
                let report = embeddable_spectrum(|d| embedding_spectrum_scaled(&k.model, &block.sizes, d))?;
                min_eig = min_eig.min(report.min_eigenvalue);
                let f = circulant_factor(report.embedding_sizes, report.eigenvalues);
                parts.push((k.weight.sqrt(), block.sizes.clone(), f));
            }
            (Factor::Additive(parts), min_eig)
        }
        SamplerMethod::DenseCholesky => {
            let n = lattice.total_points();
            if n > DENSE_LIMIT {
                return Err(Error::SizeLimit(format!(
                    "dense sampling limited to {DENSE_LIMIT} points, lattice has {n}"
                )));
            }
            (Factor::Dense(dense_root(cov, &shape)?), f64::NAN)
        }
    };
    Ok(Sampler {
        method,
        exact: true,
        shape,
        lattice: lattice.clone(),
        label: cov.label(),
        min_eigenvalue,
        factor,
    })
}

/// Tries the minimal embedding, then up to `MAX_DOUBLINGS` doublings. Returns
/// a clipped nonnegative spectrum or `NonEmbeddable` with the least negative
/// minimum seen.
fn embeddable_spectrum(spectrum_at: impl Fn(u32) -> Result<SpectrumReport>) -> Result<SpectrumReport> {
    let mut best_min = f64::NEG_INFINITY;
    for d in 0..=MAX_DOUBLINGS {
        let mut report = match spectrum_at(d) {
            Ok(r) => r,
            // a tabulated model cannot be evaluated on the larger embedding
            Err(Error::MissingLag { .. }) if d > 0 => break,
            Err(e) => return Err(e),
        };
        if report.is_nonnegative() {
            for e in &mut report.eigenvalues {
                *e = e.max(0.0);
            }
            return Ok(report);
        }
        best_min = best_min.max(report.min_eigenvalue);
    }
    Err(Error::NonEmbeddable {
        min_eigenvalue: best_min,
    })
}

fn circulant_factor(embed_shape: Vec<usize>, eigenvalues: Vec<f64>) -> Factor {
    let total = eigenvalues.len() as f64;
    Factor::Circulant {
        fft: MultiFft::new(&embed_shape),
        amplitude: eigenvalues.iter().map(|&l| (l / total).sqrt()).collect(),
        embed_shape,
    }
}

/// Symmetric square root `V sqrt(max(L, 0))` of the lattice covariance
/// matrix; unlike a Cholesky factor it also handles singular matrices.
fn dense_root(cov: &CompositeCovariance, shape: &[usize]) -> Result<DMatrix<f64>> {
    let mut points = Vec::new();
    fft::for_each_index(shape, |idx| {
        points.push(idx.iter().map(|&k| k as i64).collect::<Vec<_>>())
    });
    let n = points.len();
    let mut matrix = DMatrix::zeros(n, n);
    let mut lag = vec![0i64; shape.len()];
    for i in 0..n {
        for j in i..n {
            for (axis, l) in lag.iter_mut().enumerate() {
                *l = points[i][axis] - points[j][axis];
            }
            let v = cov.eval(&lag)?;
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(matrix);
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-8 * max.max(1.0) {
        return Err(Error::NumericalFailure(format!(
            "lattice covariance matrix is not positive semidefinite (min eigenvalue {min:e})"
        )));
    }
    let mut root = eig.eigenvectors;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        root.column_mut(k).scale_mut(s);
    }
    Ok(root)
}

impl Sampler {
    pub fn method(&self) -> SamplerMethod {
        self.method
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    /// Minimum raw embedding eigenvalue seen while building (NaN when the
    /// dense method was forced).
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Embedding grid of the circulant methods.
    pub fn embedding_shape(&self) -> Option<&[usize]> {
        match &self.factor {
            Factor::Circulant { embed_shape, .. } => Some(embed_shape),
            _ => None,
        }
    }

    /// Deterministic in `(seed, replicate_id)`; each replicate id selects an
    /// independent ChaCha stream.
    pub fn draw(&self, seed: u64, replicate_id: u64) -> FieldSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate_id);
        let values = draw_factor(&self.factor, &self.shape, &mut rng);
        FieldSample {
            values,
            provenance: Provenance {
                covariance: self.label.clone(),
                lattice: self.lattice.clone(),
                seed,
                replicate_id,
            },
        }
    }
}

fn draw_factor(factor: &Factor, shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    match factor {
        Factor::Circulant {
            embed_shape,
            amplitude,
            fft,
        } => {
            let mut data: Vec<Complex64> = amplitude
                .iter()
                .map(|&a| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(a * re, a * im)
                })
                .collect();
            fft.forward(&mut data);
            let strides = fft::strides(embed_shape);
            let mut out = Vec::with_capacity(shape.iter().product());
            fft::for_each_index(shape, |idx| {
                let pos: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
                out.push(data[pos].re);
            });
            out
        }
        Factor::Additive(parts) => {
            let fields: Vec<Vec<f64>> = parts
                .iter()
                .map(|(scale, block, f)| draw_factor(f, block, rng).iter().map(|v| scale * v).collect())
                .collect();
            let mut out = Vec::with_capacity(shape.iter().product());
            for a in &fields[0] {
                out.extend(fields[1].iter().map(|b| a + b));
            }
            out
        }
        Factor::Dense(root) => {
            let z: Vec<f64> = (0..root.ncols()).map(|_| rng.sample(StandardNormal)).collect();
            (root * nalgebra::DVector::from_vec(z)).iter().copied().collect()
        }
    }
}
