//! Row-major multi-dimensional FFTs and the circulant-embedding helpers
//! shared by the sampler and the exact chaos computations.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;

/// Forward/inverse FFT over a row-major array of the given shape.
#[derive(Clone)]
pub struct MultiFft {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for MultiFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultiFft").field("shape", &self.shape).finish()
    }
}

impl MultiFft {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&m| planner.plan_fft_forward(m)).collect();
        let inverse = shape.iter().map(|&m| planner.plan_fft_inverse(m)).collect();
        Self {
            shape: shape.to_vec(),
            forward,
            inverse,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.forward);
    }

    /// Unnormalized inverse transform, in place (no 1/N factor).
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &self.inverse);
    }

    fn apply(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len());
        let ndim = self.shape.len();
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        for axis in 0..ndim {
            let m = self.shape[axis];
            if m <= 1 {
                continue;
            }
            let stride: usize = self.shape[axis + 1..].iter().product();
            let plan = &plans[axis];
            scratch.resize(plan.get_inplace_scratch_len(), Complex64::default());
            if stride == 1 {
                for chunk in data.chunks_exact_mut(m) {
                    plan.process_with_scratch(chunk, &mut scratch);
                }
                continue;
            }
            line.resize(m, Complex64::default());
            let block = m * stride;
            for outer in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, value) in line.iter().enumerate() {
                        data[base + k * stride] = *value;
                    }
                }
            }
        }
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        s[axis] = s[axis + 1] * shape[axis + 1];
    }
    s
}

/// Calls `f` with every multi-index of `shape` in row-major order.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut axis = shape.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Minimal circulant embedding length for `n` lattice points, scaled by
/// `2^doublings`.
pub(crate) fn embedding_len(n: usize, doublings: u32) -> usize {
    if n <= 1 {
        1
    } else {
        (2 * (n - 1)) << doublings
    }
}

/// Signed lag represented by position `k` on a periodic axis of length `m`.
pub(crate) fn wrapped_lag(k: usize, m: usize) -> i64 {
    if 2 * k <= m {
        k as i64
    } else {
        k as i64 - m as i64
    }
}

/// Eigenvalues of the circulant embedding of a stationary kernel on a
/// periodic grid of shape `m`: the FFT of the wrapped lag sequence.
pub(crate) fn embedding_eigenvalues(m: &[usize], kernel: impl Fn(&[i64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut data = Vec::with_capacity(m.iter().product());
    let mut lag = vec![0i64; m.len()];
    let mut err = None;
    for_each_index(m, |idx| {
        if err.is_some() {
            return;
        }
        for (axis, &k) in idx.iter().enumerate() {
            lag[axis] = wrapped_lag(k, m[axis]);
        }
        match kernel(&lag) {
            Ok(v) => data.push(Complex64::new(v, 0.0)),
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    MultiFft::new(m).forward(&mut data);
    Ok(data.into_iter().map(|c| c.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_naive_dft_2d() {
        let shape = [3usize, 4];
        let data: Vec<Complex64> = (0..12)
            .map(|i| Complex64::new(i as f64 * 0.3 - 1.0, (i * i) as f64 * 0.01))
            .collect();
        let mut fast = data.clone();
        MultiFft::new(&shape).forward(&mut fast);
        for k0 in 0..3 {
            for k1 in 0..4 {
                let mut acc = Complex64::default();
                for j0 in 0..3 {
                    for j1 in 0..4 {
                        let phase = -2.0 * std::f64::consts::PI * ((k0 * j0) as f64 / 3.0 + (k1 * j1) as f64 / 4.0);
                        acc += data[j0 * 4 + j1] * Complex64::from_polar(1.0, phase);
                    }
                }
                assert!((acc - fast[k0 * 4 + k1]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn wrapped_lags_are_symmetric() {
        let m = 6;
        let lags: Vec<i64> = (0..m).map(|k| wrapped_lag(k, m)).collect();
        assert_eq!(lags, vec![0, 1, 2, 3, -2, -1]);
    }

    #[test]
    fn row_major_strides() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        let mut seen = Vec::new();
        for_each_index(&[2, 2], |i| seen.push(i.to_vec()));
        assert_eq!(seen, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }
}
