//! Browser bindings for the demo page: draw a separable field, trace the
//! exact fourth cumulant of a 1-D Hermite variation, classify a config.

use hermfield::chaoscalc::fourth_cumulant;
use hermfield::cli::parse_config;
use hermfield::covariance::{CompositeCovariance, FactorCovariance};
use hermfield::fieldsim::build_sampler;
use hermfield::lattice::LatticeSpec;
use hermfield::ratelab::{classify, critical_hurst, rate_g};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest side accepted by `sample_field`.
pub const MAX_SIDE: usize = 512;
/// Largest series length accepted by `kappa_curve`.
pub const MAX_CURVE_EXP: u32 = 11;

fn js(e: hermfield::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn factor(family: &str, param: f64) -> Result<FactorCovariance, hermfield::Error> {
    match family {
        "fgn" => FactorCovariance::fgn(param),
        "cauchy" => FactorCovariance::cauchy(param, 1),
        "exponential" => FactorCovariance::exponential(param, 1),
        "white_noise" => FactorCovariance::white_noise(1),
        other => Err(hermfield::Error::InvalidParameter(format!("unknown family `{other}`"))),
    }
}

/// One draw of a separable field on an `n x n` grid, row-major.
#[wasm_bindgen]
pub fn sample_field(
    family1: &str,
    param1: f64,
    family2: &str,
    param2: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    if n == 0 || n > MAX_SIDE {
        return Err(JsError::new(&format!("side must lie in 1..={MAX_SIDE}")));
    }
    let cov = CompositeCovariance::separable(vec![
        factor(family1, param1).map_err(js)?,
        factor(family2, param2).map_err(js)?,
    ])
    .map_err(js)?;
    let lattice = LatticeSpec::from_sizes(&[&[n], &[n]]).map_err(js)?;
    let sampler = build_sampler(&cov, &lattice).map_err(js)?;
    Ok(sampler.draw(seed, 0).values)
}

/// Exact fourth cumulant of `sum H_q(X_k)` for fGn over `n = 2^4..2^max_exp`,
/// next to the rate function where it applies. JSON rows `{n, kappa4, exact, g}`.
#[wasm_bindgen]
pub fn kappa_curve(hurst: f64, q: usize, max_exp: u32) -> Result<String, JsError> {
    if !(4..=MAX_CURVE_EXP).contains(&max_exp) {
        return Err(JsError::new(&format!("max_exp must lie in 4..={MAX_CURVE_EXP}")));
    }
    let cov = CompositeCovariance::separable(vec![FactorCovariance::fgn(hurst).map_err(js)?]).map_err(js)?;
    let mut rows = Vec::new();
    for e in 4..=max_exp {
        let n = 1usize << e;
        let k = fourth_cumulant(&cov, &LatticeSpec::from_sizes(&[&[n]]).map_err(js)?, q).map_err(js)?;
        let g = if q >= 2 && hurst <= critical_hurst(q) {
            rate_g(q, hurst, n as f64).ok()
        } else {
            None
        };
        rows.push(json!({ "n": n, "kappa4": k.value, "exact": k.exact, "g": g }));
    }
    Ok(serde_json::to_string(&rows)?)
}

/// Regime verdict for an experiment config given as TOML text.
#[wasm_bindgen]
pub fn classify_config(text: &str) -> Result<String, JsError> {
    let config = parse_config(text).map_err(js)?;
    let cov = config.covariance.build().map_err(js)?;
    let rank = config.phi.build().map_err(js)?.rank().map_err(js)?;
    let growth = config.ladder.growth(cov.block_dims().len()).map_err(js)?;
    let verdict = classify(&cov, rank, &growth).map_err(js)?;
    Ok(serde_json::to_string_pretty(&verdict)?)
}
