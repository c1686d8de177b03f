//! Monte Carlo experiments over a ladder of growing lattices: replicate
//! functionals, standardize, and compare moments, KS distance and decay
//! rates with the exact chaos quantities and the regime classifier.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaoscalc::{self, ChaosReport};
use crate::covariance::{CompositeCovariance, FactorCovariance, Weighted};
use crate::error::{Error, Result};
use crate::fieldsim::{build_sampler, SamplerMethod};
use crate::functionals::evaluate;
use crate::hermite::{normal_sf, HermiteSpec, PhiKind};
use crate::kernel::ordered_map;
use crate::lattice::{Block, LatticeSpec};
use crate::ratelab::{classify, GrowthSpec, RegimeVerdict};

pub const SCHEMA: &str = "hermfield.experiment.v1";
/// Fewest replicates accepted for a statistical verdict.
pub const MIN_REPLICATES: usize = 100;
/// Two-sided 99% standard normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;
/// Asymptotic 1% critical value of `sqrt(n) D_n`.
pub const KS_CRIT_1PCT: f64 = 1.6276;
/// Largest relative truncation tail for which a truncated variance still
/// counts as exact.
const EXACT_TAIL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorSpec {
    Fgn { hurst: f64 },
    Cauchy { beta: f64, dim: usize },
    Exponential { scale: f64, dim: usize },
    WhiteNoise { dim: usize },
}

impl FactorSpec {
    pub fn build(&self) -> Result<FactorCovariance> {
        match *self {
            FactorSpec::Fgn { hurst } => FactorCovariance::fgn(hurst),
            FactorSpec::Cauchy { beta, dim } => FactorCovariance::cauchy(beta, dim),
            FactorSpec::Exponential { scale, dim } => FactorCovariance::exponential(scale, dim),
            FactorSpec::WhiteNoise { dim } => FactorCovariance::white_noise(dim),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            FactorSpec::Fgn { .. } => 1,
            FactorSpec::Cauchy { dim, .. } | FactorSpec::Exponential { dim, .. } | FactorSpec::WhiteNoise { dim } => {
                dim
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "structure", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    Separable {
        factors: Vec<FactorSpec>,
    },
    Gneiting {
        c1: FactorSpec,
        c2: FactorSpec,
    },
    Additive {
        factors: Vec<FactorSpec>,
        weights: Vec<f64>,
    },
    Isotropic {
        model: FactorSpec,
        block_dims: Vec<usize>,
    },
}

impl CovarianceSpec {
    pub fn build(&self) -> Result<CompositeCovariance> {
        match self {
            CovarianceSpec::Separable { factors } => {
                CompositeCovariance::separable(factors.iter().map(FactorSpec::build).collect::<Result<_>>()?)
            }
            CovarianceSpec::Gneiting { c1, c2 } => CompositeCovariance::gneiting(c1.build()?, c2.build()?),
            CovarianceSpec::Additive { factors, weights } => {
                if factors.len() != 2 || weights.len() != 2 {
                    return Err(Error::InvalidParameter(
                        "additive models take exactly two factors and weights".into(),
                    ));
                }
                CompositeCovariance::additive(
                    Weighted {
                        weight: weights[0],
                        model: factors[0].build()?,
                    },
                    Weighted {
                        weight: weights[1],
                        model: factors[1].build()?,
                    },
                )
            }
            CovarianceSpec::Isotropic { model, block_dims } => {
                CompositeCovariance::isotropic(model.build()?, block_dims.clone())
            }
        }
    }

    pub fn block_dims(&self) -> Vec<usize> {
        match self {
            CovarianceSpec::Separable { factors } | CovarianceSpec::Additive { factors, .. } => {
                factors.iter().map(FactorSpec::dim).collect()
            }
            CovarianceSpec::Gneiting { c1, c2 } => vec![c1.dim(), c2.dim()],
            CovarianceSpec::Isotropic { block_dims, .. } => block_dims.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiSpec {
    Pure { q: usize },
    Indicator { level: f64 },
}

impl PhiSpec {
    pub fn build(&self) -> Result<HermiteSpec> {
        match *self {
            PhiSpec::Pure { q } => HermiteSpec::pure(q),
            PhiSpec::Indicator { level } => HermiteSpec::indicator(level),
        }
    }
}

/// Either explicit per-block side lengths per rung, or `t` values with
/// per-block exponents, block `i` getting side `round(t^exponents[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rungs: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<f64>>,
}

impl LadderSpec {
    /// Side lengths per rung and block.
    pub fn sides(&self, blocks: usize) -> Result<Vec<Vec<usize>>> {
        match (&self.rungs, &self.t, &self.exponents) {
            (Some(r), None, None) => Ok(r.clone()),
            (None, Some(t), e) => {
                let e = e.clone().unwrap_or_else(|| vec![1.0; blocks]);
                Ok(t.iter()
                    .map(|&t| {
                        e.iter()
                            .map(|&g| ((t as f64).powf(g).round() as usize).max(1))
                            .collect()
                    })
                    .collect())
            }
            _ => Err(Error::InvalidParameter(
                "ladder needs either `rungs` or `t` (with optional `exponents`)".into(),
            )),
        }
    }

    /// Growth exponents for the classifier: declared ones, or the log-ratio
    /// of last to first rung per block, scaled so the largest is 1.
    pub fn growth(&self, blocks: usize) -> Result<GrowthSpec> {
        if let Some(e) = &self.exponents {
            return Ok(GrowthSpec { exponents: e.clone() });
        }
        let sides = self.sides(blocks)?;
        let (first, last) = (&sides[0], &sides[sides.len() - 1]);
        let logs: Vec<f64> = first
            .iter()
            .zip(last)
            .map(|(&a, &b)| (b as f64 / a as f64).ln())
            .collect();
        let max = logs.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Ok(GrowthSpec::uniform(blocks));
        }
        Ok(GrowthSpec {
            exponents: logs.iter().map(|l| l / max).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Normality,
    KurtosisSeries,
    RateFit,
    ChaosReports,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub name: String,
    pub seed: u64,
    pub replicates: usize,
    pub outputs: BTreeSet<OutputKind>,
    pub covariance: CovarianceSpec,
    pub phi: PhiSpec,
    pub ladder: LadderSpec,
}

impl ExperimentConfig {
    /// Canonical TOML text; hashing and persistence use this form.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn lattices(&self) -> Result<Vec<LatticeSpec>> {
        let dims = self.covariance.block_dims();
        self.ladder
            .sides(dims.len())?
            .iter()
            .map(|sides| {
                if sides.len() != dims.len() {
                    return Err(Error::DimensionMismatch {
                        expected: dims.len(),
                        got: sides.len(),
                    });
                }
                LatticeSpec::new(
                    dims.iter()
                        .zip(sides)
                        .map(|(&d, &n)| Block::cube(d, n))
                        .collect::<Result<_>>()?,
                )
            })
            .collect()
    }
}

/// Statistic with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// 99% normal-approximation interval.
    pub fn ci99(&self) -> (f64, f64) {
        (self.value - Z99 * self.stderr, self.value + Z99 * self.stderr)
    }

    pub fn ci99_contains(&self, x: f64) -> bool {
        let (lo, hi) = self.ci99();
        lo <= x && x <= hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub n: usize,
    pub mean: Estimate,
    pub variance: Estimate,
    pub skewness: Estimate,
    pub excess_kurtosis: Estimate,
    /// One-sample Kolmogorov-Smirnov distance to N(0, 1).
    pub ks: f64,
    pub ks_critical: f64,
}

impl NormalityReport {
    /// Kurtosis 99% interval contains 0 and KS below its 1% critical value.
    pub fn gaussian(&self) -> bool {
        self.excess_kurtosis.ci99_contains(0.0) && self.ks < self.ks_critical
    }
}

/// `(mean, unbiased variance, skewness, excess kurtosis)` from power sums
/// of centered data.
fn moments(n: f64, s: [f64; 4]) -> [f64; 4] {
    let mean = s[0] / n;
    let m2 = s[1] / n - mean * mean;
    let m3 = s[2] / n - 3.0 * mean * s[1] / n + 2.0 * mean.powi(3);
    let m4 = s[3] / n - 4.0 * mean * s[2] / n + 6.0 * mean * mean * s[1] / n - 3.0 * mean.powi(4);
    [mean, m2 * n / (n - 1.0), m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0]
}

/// Moments with leave-one-out jackknife errors and the KS distance to the
/// standard normal.
pub fn normality_report(samples: &[f64]) -> Result<NormalityReport> {
    let n = samples.len();
    if n < MIN_REPLICATES {
        return Err(Error::TooFewSamples {
            needed: MIN_REPLICATES,
            got: n,
        });
    }
    let center = samples.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = samples.iter().map(|v| v - center).collect();
    let mut s = [0.0; 4];
    for &v in &x {
        let v2 = v * v;
        s[0] += v;
        s[1] += v2;
        s[2] += v2 * v;
        s[3] += v2 * v2;
    }
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(s[1] > 1e-24 * n as f64 * scale.max(f64::MIN_POSITIVE).powi(2)) || scale == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let nf = n as f64;
    let full = moments(nf, s);
    let mut acc = [[0.0; 2]; 4];
    let loo: Vec<[f64; 4]> = x
        .iter()
        .map(|&v| {
            let v2 = v * v;
            moments(nf - 1.0, [s[0] - v, s[1] - v2, s[2] - v2 * v, s[3] - v2 * v2])
        })
        .collect();
    for m in &loo {
        for k in 0..4 {
            acc[k][0] += m[k];
        }
    }
    for m in &loo {
        for k in 0..4 {
            acc[k][1] += (m[k] - acc[k][0] / nf).powi(2);
        }
    }
    let est = |k: usize, value: f64| Estimate {
        value,
        stderr: ((nf - 1.0) / nf * acc[k][1]).sqrt(),
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ks = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let cdf = normal_sf(-v);
            (cdf - i as f64 / nf).max((i + 1) as f64 / nf - cdf)
        })
        .fold(0.0, f64::max);
    Ok(NormalityReport {
        n,
        mean: est(0, full[0] + center),
        variance: est(1, full[1]),
        skewness: est(2, full[2]),
        excess_kurtosis: est(3, full[3]),
        ks,
        ks_critical: KS_CRIT_1PCT / nf.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Least-squares slope of `log value` against `log n`.
pub fn rate_fit(series: &[(f64, f64)]) -> Result<RateFit> {
    if series.len() < 4 {
        return Err(Error::TooFewSamples {
            needed: 4,
            got: series.len(),
        });
    }
    if let Some(&(n, v)) = series.iter().find(|(n, v)| !(*n > 0.0 && *v > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs positive n and values, got ({n}, {v})"
        )));
    }
    let pts: Vec<(f64, f64)> = series.iter().map(|&(n, v)| (n.ln(), v.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(RateFit {
        slope,
        stderr: (ssr / (m - 2.0) / sxx).sqrt(),
        intercept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    Exact,
    /// Exact variance unavailable; the sample moments were used.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungResult {
    pub rung: usize,
    pub sides: Vec<usize>,
    pub points: usize,
    pub sampler: SamplerMethod,
    pub exact_mean: f64,
    pub exact_variance: Option<f64>,
    pub standardization: Standardization,
    /// Moments of the standardized functional.
    pub stats: NormalityReport,
    pub gaussian: bool,
    /// Exact fourth cumulant of the rank chaos, with exactness flag.
    pub exact_fourth_cumulant: Option<(f64, bool)>,
    pub chaos_report: Option<ChaosReport>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub code_version: String,
    pub rungs: Vec<RungResult>,
    /// Fit of the exact fourth cumulant (else the empirical kurtosis)
    /// against the largest block side.
    pub rate_fit: Option<RateFit>,
    pub regime: Option<RegimeVerdict>,
    /// Gaussian verdict at the largest rung.
    pub monte_carlo_gaussian: Option<bool>,
    /// Whether the classifier and the Monte Carlo verdict agree, when the
    /// classifier decides the limit.
    pub agreement: Option<bool>,
    pub notes: Vec<String>,
}

/// Validates the invariants a run relies on; the config parser reports the
/// same problems with key paths.
fn check_config(config: &ExperimentConfig) -> Result<()> {
    if config.replicates < MIN_REPLICATES {
        return Err(Error::TooFewSamples {
            needed: MIN_REPLICATES,
            got: config.replicates,
        });
    }
    Ok(())
}

/// Runs every rung of the ladder. Replicate `r` of every rung uses ChaCha
/// stream `r` of the config seed, and all reductions run in replicate
/// order, so the result does not depend on the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    check_config(config)?;
    let cov = config.covariance.build()?;
    let phi = config.phi.build()?;
    let lattices = config.lattices()?;
    let rank = phi.rank()?;
    let mut notes = Vec::new();
    let mut rungs = Vec::with_capacity(lattices.len());
    for (i, lattice) in lattices.iter().enumerate() {
        let rung = run_rung(config, &cov, &phi, rank, i, lattice).map_err(|e| Error::Rung {
            rung: i,
            source: Box::new(e),
        })?;
        rungs.push(rung);
    }
    let wants = |k: OutputKind| config.outputs.contains(&k);
    let rate_fit = if wants(OutputKind::RateFit) {
        let series: Vec<(f64, f64)> = rungs
            .iter()
            .map(|r| {
                let n = *r.sides.iter().max().expect("nonempty lattice") as f64;
                (
                    n,
                    r.exact_fourth_cumulant
                        .map(|k| k.0)
                        .unwrap_or(r.stats.excess_kurtosis.value),
                )
            })
            .collect();
        match rate_fit(&series) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(format!("rate fit skipped: {e}"));
                None
            }
        }
    } else {
        None
    };
    let regime = match config
        .ladder
        .growth(lattices[0].blocks.len())
        .and_then(|g| classify(&cov, rank, &g))
    {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("classifier: {e}"));
            None
        }
    };
    let monte_carlo_gaussian = wants(OutputKind::Normality).then(|| rungs.last().expect("nonempty ladder").gaussian);
    let agreement = match (&regime, monte_carlo_gaussian) {
        (Some(v), Some(mc)) => v.gaussian_limit.map(|g| g == mc),
        _ => None,
    };
    Ok(ExperimentResult {
        config: config.clone(),
        config_hash: config.hash()?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        rungs,
        rate_fit,
        regime,
        monte_carlo_gaussian,
        agreement,
        notes,
    })
}

fn run_rung(
    config: &ExperimentConfig,
    cov: &CompositeCovariance,
    phi: &HermiteSpec,
    rank: usize,
    index: usize,
    lattice: &LatticeSpec,
) -> Result<RungResult> {
    let sampler = build_sampler(cov, lattice)?;
    let points = lattice.total_points();
    let mut notes = Vec::new();
    let a = phi.coefficients()?;
    let exact_mean = a[0] * points as f64;
    let exact_variance = match phi.kind() {
        PhiKind::Pure(q) => chaoscalc::variance_hermite(cov, lattice, *q).map(|v| (v, 0.0)),
        _ => chaoscalc::variance_phi(cov, lattice, phi).map(|v| (v.value, v.tail_bound)),
    };
    let exact_variance = match exact_variance {
        Ok((v, tail)) if tail <= EXACT_TAIL_TOL * v && v > 0.0 => Some(v),
        Ok((v, tail)) => {
            notes.push(format!(
                "truncated variance {v:e} has tail bound {tail:e}; standardizing empirically"
            ));
            None
        }
        Err(e) => {
            notes.push(format!("exact variance unavailable: {e}"));
            None
        }
    };
    let values = ordered_map(config.replicates, |r| {
        evaluate(&sampler.draw(config.seed, r as u64), phi)
    });
    let (center, scale, standardization) = match exact_variance {
        Some(v) => (exact_mean, v.sqrt(), Standardization::Exact),
        None => {
            let n = values.len() as f64;
            let m = values.iter().sum::<f64>() / n;
            let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, v.sqrt(), Standardization::Empirical)
        }
    };
    if !(scale > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let standardized: Vec<f64> = values.iter().map(|x| (x - center) / scale).collect();
    let stats = normality_report(&standardized)?;
    let wants = |k: OutputKind| config.outputs.contains(&k);
    let exact_fourth_cumulant = if wants(OutputKind::KurtosisSeries) || wants(OutputKind::RateFit) {
        match chaoscalc::fourth_cumulant(cov, lattice, rank) {
            Ok(k) => Some((k.value, k.exact)),
            Err(e) => {
                notes.push(format!("exact fourth cumulant unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    let chaos_report = if wants(OutputKind::ChaosReports) {
        match chaoscalc::chaos_report(cov, lattice, rank) {
            Ok(r) => Some(r),
            Err(e) => {
                notes.push(format!("chaos report unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    Ok(RungResult {
        rung: index,
        sides: lattice.blocks.iter().map(|b| b.sizes[0]).collect(),
        points,
        sampler: sampler.method(),
        exact_mean,
        exact_variance,
        standardization,
        gaussian: stats.gaussian(),
        stats,
        exact_fourth_cumulant,
        chaos_report,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::hermite_eval;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn config(cov: CovarianceSpec, q: usize, rungs: Vec<Vec<usize>>, replicates: usize) -> ExperimentConfig {
        ExperimentConfig {
            schema: SCHEMA.into(),
            name: "t".into(),
            seed: 7,
            replicates,
            outputs: [OutputKind::Normality, OutputKind::KurtosisSeries]
                .into_iter()
                .collect(),
            covariance: cov,
            phi: PhiSpec::Pure { q },
            ladder: LadderSpec {
                rungs: Some(rungs),
                t: None,
                exponents: None,
            },
        }
    }

    #[test]
    fn null_normals() {
        let r = normality_report(&normals(100_000, 3)).unwrap();
        assert!(r.excess_kurtosis.value.abs() < 5.0 * r.excess_kurtosis.stderr);
        assert!(r.ks < 0.01);
        assert!(r.gaussian());
        // jackknife errors near the textbook sqrt(24/n), sqrt(6/n), sqrt(2/n)
        assert!((r.excess_kurtosis.stderr / (24.0f64 / 1e5).sqrt() - 1.0).abs() < 0.1);
        assert!((r.skewness.stderr / (6.0f64 / 1e5).sqrt() - 1.0).abs() < 0.1);
        assert!((r.variance.stderr / (2.0f64 / 1e5).sqrt() - 1.0).abs() < 0.1);
    }

    #[test]
    fn degenerate_and_short() {
        assert!(matches!(
            normality_report(&vec![2.5; 500]),
            Err(Error::DegenerateVariance)
        ));
        assert!(matches!(
            normality_report(&[0.0; 99]),
            Err(Error::TooFewSamples { needed: 100, got: 99 })
        ));
    }

    #[test]
    fn hermite_two_kurtosis_is_twelve() {
        let h2: Vec<f64> = normals(200_000, 9)
            .iter()
            .map(|&x| hermite_eval(2, x) / 2f64.sqrt())
            .collect();
        let r = normality_report(&h2).unwrap();
        assert!(
            (r.excess_kurtosis.value - 12.0).abs() < 5.0 * r.excess_kurtosis.stderr,
            "{:?}",
            r.excess_kurtosis
        );
        assert!(!r.gaussian());
    }

    /// Two-pass sample moments as an oracle for the power-sum formulas.
    fn two_pass(x: &[f64]) -> [f64; 4] {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let c = |p: i32| x.iter().map(|v| (v - m).powi(p)).sum::<f64>() / n;
        [
            m,
            c(2) * n / (n - 1.0),
            c(3) / c(2).powf(1.5),
            c(4) / c(2).powi(2) - 3.0,
        ]
    }

    #[test]
    fn ks_matches_sorted_definition() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 - 100.0) / 40.0).collect();
        let r = normality_report(&x).unwrap();
        let mut d: f64 = 0.0;
        for (i, &v) in x.iter().enumerate() {
            let f = 1.0 - normal_sf(v);
            d = d
                .max((f - i as f64 / 200.0).abs())
                .max(((i + 1) as f64 / 200.0 - f).abs());
        }
        assert_relative_eq!(r.ks, d, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn power_sums_match_two_pass(seed in 0u64..500, shift in -1e3f64..1e3, spread in 0.1f64..10.0) {
            let x: Vec<f64> = normals(150, seed).iter().map(|v| shift + spread * v.powi(3)).collect();
            let r = normality_report(&x).unwrap();
            let o = two_pass(&x);
            let got = [r.mean.value, r.variance.value, r.skewness.value, r.excess_kurtosis.value];
            for k in 0..4 {
                prop_assert!((got[k] - o[k]).abs() <= 1e-8 * (1.0 + o[k].abs()), "{k}: {} vs {}", got[k], o[k]);
            }
        }

        #[test]
        fn affine_invariance_of_shape(seed in 0u64..200, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let x = normals(300, seed);
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let rx = normality_report(&x).unwrap();
            let ry = normality_report(&y).unwrap();
            prop_assert!((rx.excess_kurtosis.value - ry.excess_kurtosis.value).abs() < 1e-9);
            prop_assert!((rx.skewness.value - ry.skewness.value).abs() < 1e-9);
        }
    }

    #[test]
    fn rate_fit_examples() {
        let s: Vec<(f64, f64)> = [8.0, 16.0, 32.0, 64.0, 128.0].iter().map(|&n| (n, 3.5 / n)).collect();
        let f = rate_fit(&s).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-9);
        assert!(f.stderr < 1e-9);
        assert!(rate_fit(&s[..3]).is_err());
        let bad = vec![(1.0, 1.0), (2.0, 0.0), (3.0, 1.0), (4.0, 1.0)];
        assert!(matches!(rate_fit(&bad), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn ladder_sides_and_growth() {
        let l = LadderSpec {
            rungs: None,
            t: Some(vec![16, 256]),
            exponents: Some(vec![1.0, 0.5]),
        };
        assert_eq!(l.sides(2).unwrap(), vec![vec![16, 4], vec![256, 16]]);
        assert_eq!(l.growth(2).unwrap().exponents, vec![1.0, 0.5]);
        let r = LadderSpec {
            rungs: Some(vec![vec![8, 4], vec![64, 8]]),
            t: None,
            exponents: None,
        };
        let g = r.growth(2).unwrap().exponents;
        assert_relative_eq!(g[1], 1.0 / 3.0, max_relative = 1e-12);
        let both = LadderSpec {
            rungs: Some(vec![vec![8]]),
            t: Some(vec![8]),
            exponents: None,
        };
        assert!(both.sides(1).is_err());
    }

    #[test]
    fn white_noise_experiment_is_gaussian() {
        let cov = CovarianceSpec::Separable {
            factors: vec![FactorSpec::WhiteNoise { dim: 1 }],
        };
        let res = run_experiment(&config(cov, 2, vec![vec![64]], 2000)).unwrap();
        let r = &res.rungs[0];
        assert!(
            r.stats.excess_kurtosis.ci99_contains(0.0),
            "{:?}",
            r.stats.excess_kurtosis
        );
        assert_eq!(r.standardization, Standardization::Exact);
        assert_relative_eq!(r.exact_variance.unwrap(), 128.0, max_relative = 1e-14);
        assert_relative_eq!(r.exact_fourth_cumulant.unwrap().0, 12.0 / 64.0, max_relative = 1e-12);
    }

    #[test]
    fn bridges_for_separable_q2() {
        let cov = CovarianceSpec::Separable {
            factors: vec![FactorSpec::Fgn { hurst: 0.8 }, FactorSpec::Cauchy { beta: 0.5, dim: 1 }],
        };
        let res = run_experiment(&config(cov, 2, vec![vec![6, 5], vec![12, 10]], 4000)).unwrap();
        for r in &res.rungs {
            // standardized with the exact variance, so the sample variance must be near 1
            let v = r.stats.variance;
            assert!((v.value - 1.0).abs() < 5.0 * v.stderr, "variance {v:?}");
            let k = r.stats.excess_kurtosis;
            let exact = r.exact_fourth_cumulant.unwrap();
            assert!(exact.1);
            assert!(
                (k.value - exact.0).abs() < 5.0 * k.stderr,
                "kurtosis {k:?} vs {exact:?}"
            );
        }
    }

    #[test]
    fn indicator_uses_truncated_variance_flag() {
        let cov = CovarianceSpec::Separable {
            factors: vec![FactorSpec::Exponential { scale: 1.0, dim: 1 }],
        };
        let mut c = config(cov, 2, vec![vec![32]], 200);
        c.phi = PhiSpec::Indicator { level: 0.5 };
        let res = run_experiment(&c).unwrap();
        let r = &res.rungs[0];
        assert_eq!(r.standardization, Standardization::Empirical);
        assert!(r.stats.mean.value.abs() < 1e-12);
        assert_relative_eq!(r.exact_mean, 32.0 * normal_sf(0.5), max_relative = 1e-14);
    }

    #[test]
    fn deterministic_and_rung_errors() {
        let cov = CovarianceSpec::Separable {
            factors: vec![FactorSpec::Cauchy { beta: 0.4, dim: 1 }, FactorSpec::Fgn { hurst: 0.3 }],
        };
        let c = config(cov, 2, vec![vec![8, 8], vec![16, 16]], 300);
        let a = serde_json::to_string(&run_experiment(&c).unwrap()).unwrap();
        let b = serde_json::to_string(&run_experiment(&c).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut short = c.clone();
        short.replicates = 50;
        assert!(matches!(run_experiment(&short), Err(Error::TooFewSamples { .. })));
        let mut bad = c;
        bad.ladder.rungs = Some(vec![vec![8, 8], vec![16]]);
        assert!(run_experiment(&bad).is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let cov = CovarianceSpec::Separable {
            factors: vec![FactorSpec::WhiteNoise { dim: 2 }],
        };
        let a = config(cov, 2, vec![vec![4]], 100);
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = 8;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
