//! Zero-padded FFT convolution of a grid array with a translation-invariant
//! stencil defined on integer cell offsets.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub(crate) struct StencilConvolver {
    dim: usize,
    dims: [usize; 3],
    pdims: [usize; 3],
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    khat: Vec<Complex<f64>>,
}

impl StencilConvolver {
    /// `out[i] = sum_j data[j] * stencil(i - j)` over the grid `dims`.
    pub fn new(dims: &[usize], stencil: impl Fn([i64; 3]) -> f64) -> Self {
        let dim = dims.len();
        let mut d = [1; 3];
        let mut p = [1; 3];
        for a in 0..dim {
            d[a] = dims[a];
            p[a] = 2 * dims[a];
        }
        let mut planner = FftPlanner::new();
        let forward: Vec<_> = (0..dim).map(|a| planner.plan_fft_forward(p[a])).collect();
        let inverse: Vec<_> = (0..dim).map(|a| planner.plan_fft_inverse(p[a])).collect();
        let total = p[0] * p[1] * p[2];
        let mut k = vec![Complex::new(0.0, 0.0); total];
        let range = |a: usize| -> std::ops::RangeInclusive<i64> {
            if a < dim {
                -(d[a] as i64 - 1)..=(d[a] as i64 - 1)
            } else {
                0..=0
            }
        };
        for o2 in range(2) {
            for o1 in range(1) {
                for o0 in range(0) {
                    let idx = [
                        o0.rem_euclid(p[0] as i64) as usize,
                        o1.rem_euclid(p[1] as i64) as usize,
                        o2.rem_euclid(p[2] as i64) as usize,
                    ];
                    k[idx[0] + p[0] * (idx[1] + p[1] * idx[2])] = Complex::new(stencil([o0, o1, o2]), 0.0);
                }
            }
        }
        let mut conv = StencilConvolver {
            dim,
            dims: d,
            pdims: p,
            forward,
            inverse,
            khat: Vec::new(),
        };
        conv.transform(&mut k, true);
        conv.khat = k;
        conv
    }

    fn transform(&self, buf: &mut [Complex<f64>], forward: bool) {
        let p = self.pdims;
        for a in 0..self.dim {
            let plan = if forward { &self.forward[a] } else { &self.inverse[a] };
            let stride = match a {
                0 => 1,
                1 => p[0],
                _ => p[0] * p[1],
            };
            let len = p[a];
            let mut line = vec![Complex::new(0.0, 0.0); len];
            let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            let total = p[0] * p[1] * p[2];
            for start in 0..total {
                // first element of each line along axis a has coordinate 0 on that axis
                if (start / stride) % len != 0 {
                    continue;
                }
                for (t, l) in line.iter_mut().enumerate() {
                    *l = buf[start + t * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (t, l) in line.iter().enumerate() {
                    buf[start + t * stride] = *l;
                }
            }
        }
    }

    pub fn apply(&self, data: &[f64]) -> Vec<f64> {
        let d = self.dims;
        let p = self.pdims;
        let total = p[0] * p[1] * p[2];
        let mut buf = vec![Complex::new(0.0, 0.0); total];
        for i2 in 0..d[2] {
            for i1 in 0..d[1] {
                for i0 in 0..d[0] {
                    buf[i0 + p[0] * (i1 + p[1] * i2)] = Complex::new(data[i0 + d[0] * (i1 + d[1] * i2)], 0.0);
                }
            }
        }
        self.transform(&mut buf, true);
        for (b, k) in buf.iter_mut().zip(&self.khat) {
            *b *= k;
        }
        self.transform(&mut buf, false);
        let scale = 1.0 / total as f64;
        let mut out = vec![0.0; d[0] * d[1] * d[2]];
        for i2 in 0..d[2] {
            for i1 in 0..d[1] {
                for i0 in 0..d[0] {
                    out[i0 + d[0] * (i1 + d[1] * i2)] = buf[i0 + p[0] * (i1 + p[1] * i2)].re * scale;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_convolution() {
        let dims = [5usize, 4];
        let data: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let st = |o: [i64; 3]| 1.0 / (1.0 + (o[0] * o[0] + 2 * o[1] * o[1]) as f64) + 0.1 * o[0] as f64;
        let conv = StencilConvolver::new(&dims, st);
        let out = conv.apply(&data);
        for i1 in 0..4i64 {
            for i0 in 0..5i64 {
                let mut s = 0.0;
                for j1 in 0..4i64 {
                    for j0 in 0..5i64 {
                        s += data[(j0 + 5 * j1) as usize] * st([i0 - j0, i1 - j1, 0]);
                    }
                }
                assert!((out[(i0 + 5 * i1) as usize] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn three_dimensional_delta() {
        let dims = [3usize, 3, 3];
        let mut data = vec![0.0; 27];
        data[13] = 1.0;
        let conv = StencilConvolver::new(&dims, |o| (o[0] + 10 * o[1] + 100 * o[2]) as f64);
        let out = conv.apply(&data);
        for i in 0..27i64 {
            let (a, b, c) = (i % 3 - 1, (i / 3) % 3 - 1, i / 9 - 1);
            assert!((out[i as usize] - (a + 10 * b + 100 * c) as f64).abs() < 1e-9);
        }
    }
}
