//! Stationary kernel matrices `[k(x - y)]` on a rectangular grid: lag
//! tables, pair sums, fast matrix-vector products and the graph sums
//! (4-cycles and the complete graph on 4 vertices) behind the chaos
//! diagnostics.

use num_complex::Complex64;

use crate::error::Result;
use crate::fft::{self, MultiFft};

/// Grids up to this many points use dense products.
const DENSE_OPERATOR_LIMIT: usize = 128;

/// Values of a stationary kernel on every lag of a grid,
/// `-(n_j - 1) ..= n_j - 1` per axis.
#[derive(Debug, Clone)]
pub(crate) struct LagTable {
    sizes: Vec<usize>,
    ext: Vec<usize>,
    strides: Vec<usize>,
    values: Vec<f64>,
}

impl LagTable {
    pub fn new(sizes: &[usize], kernel: impl Fn(&[i64]) -> Result<f64>) -> Result<Self> {
        let ext: Vec<usize> = sizes.iter().map(|&n| 2 * n - 1).collect();
        let mut values = Vec::with_capacity(ext.iter().product());
        let mut lag = vec![0i64; sizes.len()];
        let mut err = None;
        fft::for_each_index(&ext, |idx| {
            if err.is_some() {
                return;
            }
            for (axis, &k) in idx.iter().enumerate() {
                lag[axis] = k as i64 - (sizes[axis] as i64 - 1);
            }
            match kernel(&lag) {
                Ok(v) => values.push(v),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            strides: fft::strides(&ext),
            ext,
            values,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn points(&self) -> usize {
        self.sizes.iter().product()
    }

    #[inline]
    pub fn at(&self, lag: &[i64]) -> f64 {
        let mut pos = 0;
        for ((&l, &n), &s) in lag.iter().zip(&self.sizes).zip(&self.strides) {
            pos += (l + n as i64 - 1) as usize * s;
        }
        self.values[pos]
    }

    /// Elementwise power; power 0 is the all-ones kernel.
    pub fn pow(&self, p: u32) -> Self {
        Self {
            values: self.values.iter().map(|v| v.powi(p as i32)).collect(),
            ..self.clone()
        }
    }

    /// `sum_{x,y} k(x - y)^p` over grid pairs, as a lag sum weighted by
    /// the number of pairs at each lag.
    pub fn pair_sum(&self, p: u32) -> f64 {
        self.weighted_lag_sum(|v| v.powi(p as i32))
    }

    pub fn abs_pair_sum(&self, p: u32) -> f64 {
        self.weighted_lag_sum(|v| v.abs().powi(p as i32))
    }

    fn weighted_lag_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut sum = 0.0;
        let mut i = 0;
        fft::for_each_index(&self.ext, |idx| {
            let mut weight = 1.0;
            for (axis, &k) in idx.iter().enumerate() {
                let n = self.sizes[axis] as i64;
                weight *= (n - (k as i64 - (n - 1)).abs()) as f64;
            }
            sum += weight * f(self.values[i]);
            i += 1;
        });
        sum
    }

    /// Dense matrix entries, row-major over grid points.
    pub fn dense(&self) -> Vec<f64> {
        let coords = grid_points(&self.sizes);
        let n = coords.len();
        let mut m = vec![0.0; n * n];
        let mut lag = vec![0i64; self.sizes.len()];
        for (i, a) in coords.iter().enumerate() {
            for (j, b) in coords.iter().enumerate() {
                for (axis, l) in lag.iter_mut().enumerate() {
                    *l = a[axis] - b[axis];
                }
                m[i * n + j] = self.at(&lag);
            }
        }
        m
    }

    /// Column `z` of the kernel matrix.
    pub fn column(&self, coords: &[Vec<i64>], z: usize) -> Vec<f64> {
        let mut lag = vec![0i64; self.sizes.len()];
        coords
            .iter()
            .map(|x| {
                for (axis, l) in lag.iter_mut().enumerate() {
                    *l = x[axis] - coords[z][axis];
                }
                self.at(&lag)
            })
            .collect()
    }
}

/// Row-major integer coordinates of every grid point.
pub(crate) fn grid_points(sizes: &[usize]) -> Vec<Vec<i64>> {
    let mut out = Vec::with_capacity(sizes.iter().product());
    fft::for_each_index(sizes, |idx| out.push(idx.iter().map(|&k| k as i64).collect()));
    out
}

/// Matrix-vector product with a stationary kernel matrix.
pub(crate) enum StationaryOp {
    Dense {
        n: usize,
        matrix: Vec<f64>,
    },
    Fft {
        sizes: Vec<usize>,
        embed: Vec<usize>,
        spectrum: Vec<Complex64>,
        fft: MultiFft,
    },
}

impl StationaryOp {
    pub fn new(table: &LagTable) -> Self {
        let n = table.points();
        if n <= DENSE_OPERATOR_LIMIT {
            return Self::Dense {
                n,
                matrix: table.dense(),
            };
        }
        let sizes = table.sizes().to_vec();
        let embed: Vec<usize> = sizes.iter().map(|&n| 2 * n - 1).collect();
        let mut data = Vec::with_capacity(embed.iter().product());
        let mut lag = vec![0i64; sizes.len()];
        fft::for_each_index(&embed, |idx| {
            for (axis, &k) in idx.iter().enumerate() {
                lag[axis] = if k < sizes[axis] {
                    k as i64
                } else {
                    k as i64 - embed[axis] as i64
                };
            }
            data.push(Complex64::new(table.at(&lag), 0.0));
        });
        let fft = MultiFft::new(&embed);
        fft.forward(&mut data);
        let scale = 1.0 / data.len() as f64;
        for c in &mut data {
            *c *= scale;
        }
        Self::Fft {
            sizes,
            embed,
            spectrum: data,
            fft,
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Dense { n, matrix } => matrix
                .chunks_exact(*n)
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect(),
            Self::Fft {
                sizes,
                embed,
                spectrum,
                fft,
            } => {
                let estrides = fft::strides(embed);
                let mut buf = vec![Complex64::default(); spectrum.len()];
                let mut positions = Vec::with_capacity(v.len());
                fft::for_each_index(sizes, |idx| {
                    positions.push(idx.iter().zip(&estrides).map(|(i, s)| i * s).sum::<usize>());
                });
                for (&p, &x) in positions.iter().zip(v) {
                    buf[p] = Complex64::new(x, 0.0);
                }
                fft.forward(&mut buf);
                for (b, s) in buf.iter_mut().zip(spectrum) {
                    *b *= s;
                }
                fft.inverse(&mut buf);
                positions.iter().map(|&p| buf[p].re).collect()
            }
        }
    }
}

/// Runs `f` on `0..n` (in parallel when enabled) and returns results in
/// index order, so reductions over them are schedule independent.
pub(crate) fn ordered_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// `tr(E1 E2 E3 E4) = sum_{x,y,u,z} E1(x-y) E2(y-u) E3(u-z) E4(z-x)` for
/// symmetric stationary kernels on a common grid, as
/// `sum_u <E1 e2_u, E4 e3_u>` with `e_u` the kernel columns.
pub(crate) fn cycle_trace(e: [&LagTable; 4]) -> f64 {
    if let Some(j) = e.iter().position(|t| t.values.iter().all(|&v| v == 1.0)) {
        // tr(J A B C) = 1^T A B C 1
        let mut v = vec![1.0; e[0].points()];
        for k in (1..4).rev() {
            v = StationaryOp::new(e[(j + k) % 4]).apply(&v);
        }
        return v.iter().sum();
    }
    let coords = grid_points(e[0].sizes());
    let op1 = StationaryOp::new(e[0]);
    let op4 = StationaryOp::new(e[3]);
    let terms = ordered_map(coords.len(), |u| {
        let a = op1.apply(&e[1].column(&coords, u));
        let b = op4.apply(&e[2].column(&coords, u));
        a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
    });
    terms.iter().sum()
}

/// `sum_{a,b,c,d} C_ab C_ac C_ad C_bc C_bd C_cd` over grid 4-tuples:
/// for each pair `(a, b)`, `C_ab * w^T C w` with `w_c = C_ac C_bc`.
pub(crate) fn k4_sum(table: &LagTable) -> f64 {
    let coords = grid_points(table.sizes());
    let n = coords.len();
    let op = StationaryOp::new(table);
    let columns: Vec<Vec<f64>> = (0..n).map(|z| table.column(&coords, z)).collect();
    let rows = ordered_map(n, |a| {
        let mut acc = 0.0;
        for b in a..n {
            let cab = columns[b][a];
            if cab == 0.0 {
                continue;
            }
            let w: Vec<f64> = columns[a].iter().zip(&columns[b]).map(|(x, y)| x * y).collect();
            let cw = op.apply(&w);
            let quad: f64 = w.iter().zip(&cw).map(|(x, y)| x * y).sum();
            acc += if a == b { cab * quad } else { 2.0 * cab * quad };
        }
        acc
    });
    rows.iter().sum()
}
