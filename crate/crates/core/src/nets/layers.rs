//! Network primitives with explicit forward caches and hand-derived
//! backward passes. Activations are per-image, channel-major `[C, H, W]`.

use super::tensor::Tensor;
use rand::Rng;

/// 2-D convolution, kernel k x k with pad (k-1)/2, configurable stride.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Tensor, // [co, ci, k, k]
    pub b: Tensor, // [co]
    pub stride: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(ci: usize, co: usize, k: usize, stride: usize, rng: &mut R) -> Conv2d {
        Conv2d {
            w: Tensor::kaiming(&[co, ci, k, k], ci * k * k, rng),
            b: Tensor::zeros(&[co]),
            stride,
        }
    }

    fn k(&self) -> usize {
        self.w.shape[3]
    }

    fn pad(&self) -> usize {
        (self.k() - 1) / 2
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.k();
        let p = self.pad();
        ((h + 2 * p - k) / self.stride + 1, (w + 2 * p - k) / self.stride + 1)
    }

    /// Zero-padded copy of a `[C,H,W]` activation.
    fn padded(&self, x: &Tensor) -> (Tensor, usize, usize) {
        let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
        let p = self.pad();
        let (ph, pw) = (h + 2 * p, w + 2 * p);
        let mut out = Tensor::zeros(&[c, ph, pw]);
        for ch in 0..c {
            for r in 0..h {
                let src = (ch * h + r) * w;
                let dst = (ch * ph + r + p) * pw + p;
                out.data[dst..dst + w].copy_from_slice(&x.data[src..src + w]);
            }
        }
        (out, ph, pw)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (ci, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
        debug_assert_eq!(ci, self.w.shape[1]);
        let co = self.w.shape[0];
        let k = self.k();
        let s = self.stride;
        let (oh, ow) = self.out_hw(h, w);
        let (xp, ph, pw) = self.padded(x);
        let mut y = Tensor::zeros(&[co, oh, ow]);
        for o in 0..co {
            let ybase = o * oh * ow;
            y.data[ybase..ybase + oh * ow].fill(self.b.data[o]);
            for i in 0..ci {
                let wbase = ((o * ci) + i) * k * k;
                let xbase = i * ph * pw;
                for u in 0..k {
                    for v in 0..k {
                        let wv = self.w.data[wbase + u * k + v];
                        if wv == 0.0 {
                            continue;
                        }
                        for oi in 0..oh {
                            let xrow = xbase + (oi * s + u) * pw + v;
                            let yrow = ybase + oi * ow;
                            if s == 1 {
                                for oj in 0..ow {
                                    y.data[yrow + oj] += wv * xp.data[xrow + oj];
                                }
                            } else {
                                for oj in 0..ow {
                                    y.data[yrow + oj] += wv * xp.data[xrow + oj * s];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns dx.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, gw: &mut Tensor, gb: &mut Tensor) -> Tensor {
        let (ci, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
        let co = self.w.shape[0];
        let k = self.k();
        let s = self.stride;
        let (oh, ow) = (dy.shape[1], dy.shape[2]);
        let p = self.pad();
        let (xp, ph, pw) = self.padded(x);
        let mut dxp = Tensor::zeros(&[ci, ph, pw]);

        for o in 0..co {
            let ybase = o * oh * ow;
            let mut db = 0.0;
            for t in 0..oh * ow {
                db += dy.data[ybase + t];
            }
            gb.data[o] += db;
            for i in 0..ci {
                let wbase = ((o * ci) + i) * k * k;
                let xbase = i * ph * pw;
                for u in 0..k {
                    for v in 0..k {
                        let wv = self.w.data[wbase + u * k + v];
                        let mut dw = 0.0;
                        for oi in 0..oh {
                            let xrow = xbase + (oi * s + u) * pw + v;
                            let yrow = ybase + oi * ow;
                            for oj in 0..ow {
                                let g = dy.data[yrow + oj];
                                dw += g * xp.data[xrow + oj * s];
                                dxp.data[xrow + oj * s] += wv * g;
                            }
                        }
                        gw.data[wbase + u * k + v] += dw;
                    }
                }
            }
        }

        // Crop padding off dx.
        let mut dx = Tensor::zeros(&[ci, h, w]);
        for i in 0..ci {
            for r in 0..h {
                let src = (i * ph + r + p) * pw + p;
                let dst = (i * h + r) * w;
                dx.data[dst..dst + w].copy_from_slice(&dxp.data[src..src + w]);
            }
        }
        dx
    }
}

/// Fully connected layer on flat vectors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor, // [out, in]
    pub b: Tensor, // [out]
}

impl Linear {
    pub fn new<R: Rng>(din: usize, dout: usize, rng: &mut R) -> Linear {
        Linear {
            w: Tensor::kaiming(&[dout, din], din, rng),
            b: Tensor::zeros(&[dout]),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (dout, din) = (self.w.shape[0], self.w.shape[1]);
        debug_assert_eq!(x.len(), din);
        let mut y = self.b.data.clone();
        for o in 0..dout {
            let row = &self.w.data[o * din..(o + 1) * din];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            y[o] += acc;
        }
        y
    }

    pub fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        gw: &mut Tensor,
        gb: &mut Tensor,
    ) -> Vec<f64> {
        let (dout, din) = (self.w.shape[0], self.w.shape[1]);
        let mut dx = vec![0.0; din];
        for o in 0..dout {
            let g = dy[o];
            gb.data[o] += g;
            let row = &self.w.data[o * din..(o + 1) * din];
            let grow = &mut gw.data[o * din..(o + 1) * din];
            for i in 0..din {
                grow[i] += g * x[i];
                dx[i] += row[i] * g;
            }
        }
        dx
    }
}

pub fn relu(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward through ReLU given the pre-activation values.
pub fn relu_backward(pre: &[f64], dy: &mut [f64]) {
    for (d, p) in dy.iter_mut().zip(pre) {
        if *p <= 0.0 {
            *d = 0.0;
        }
    }
}

/// 2x2 average pooling with stride 2 (odd trailing rows/cols dropped).
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for oi in 0..oh {
            for oj in 0..ow {
                let r = 2 * oi;
                let cidx = 2 * oj;
                let base = ch * h * w;
                let s = x.data[base + r * w + cidx]
                    + x.data[base + r * w + cidx + 1]
                    + x.data[base + (r + 1) * w + cidx]
                    + x.data[base + (r + 1) * w + cidx + 1];
                y.data[(ch * oh + oi) * ow + oj] = s * 0.25;
            }
        }
    }
    y
}

pub fn avg_pool2_backward(dy: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let (c, oh, ow) = (dy.shape[0], dy.shape[1], dy.shape[2]);
    let mut dx = Tensor::zeros(&[c, in_h, in_w]);
    for ch in 0..c {
        for oi in 0..oh {
            for oj in 0..ow {
                let g = dy.data[(ch * oh + oi) * ow + oj] * 0.25;
                let base = ch * in_h * in_w;
                let (r, cidx) = (2 * oi, 2 * oj);
                dx.data[base + r * in_w + cidx] += g;
                dx.data[base + r * in_w + cidx + 1] += g;
                dx.data[base + (r + 1) * in_w + cidx] += g;
                dx.data[base + (r + 1) * in_w + cidx + 1] += g;
            }
        }
    }
    dx
}

/// Global average pool `[C,H,W] -> [C]`.
pub fn global_avg_pool(x: &Tensor) -> Vec<f64> {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let hw = (h * w) as f64;
    (0..c)
        .map(|ch| x.data[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / hw)
        .collect()
}

pub fn global_avg_pool_backward(dy: &[f64], c: usize, h: usize, w: usize) -> Tensor {
    let mut dx = Tensor::zeros(&[c, h, w]);
    let hw = (h * w) as f64;
    for ch in 0..c {
        let g = dy[ch] / hw;
        dx.data[ch * h * w..(ch + 1) * h * w].fill(g);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn finite_diff_check<F: Fn(&Tensor) -> f64>(f: F, x: &Tensor, dx: &Tensor, tol: f64) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data[i] += h;
            xm.data[i] -= h;
            let num = (f(&xp) - f(&xm)) / (2.0 * h);
            let denom = num.abs().max(dx.data[i].abs()).max(1.0);
            assert!(
                ((num - dx.data[i]) / denom).abs() < tol,
                "index {i}: numeric {num} vs analytic {}",
                dx.data[i]
            );
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = derive_rng(3, "conv", &[]);
        for &(k, stride) in &[(3usize, 1usize), (3, 2), (1, 1), (1, 2)] {
            let conv = Conv2d::new(2, 3, k, stride, &mut rng);
            let mut x = Tensor::zeros(&[2, 6, 6]);
            for v in &mut x.data {
                *v = rng.gen_range(-1.0..1.0);
            }
            let y = conv.forward(&x);
            // Scalar objective: weighted sum of outputs.
            let wsum: Vec<f64> = (0..y.len()).map(|i| ((i % 7) as f64 - 3.0) / 3.0).collect();
            let mut dy = y.zeros_like();
            dy.data.copy_from_slice(&wsum);
            let mut gw = conv.w.zeros_like();
            let mut gb = conv.b.zeros_like();
            let dx = conv.backward(&x, &dy, &mut gw, &mut gb);

            let objective = |xt: &Tensor| -> f64 {
                conv.forward(xt).data.iter().zip(&wsum).map(|(a, b)| a * b).sum()
            };
            finite_diff_check(objective, &x, &dx, 1e-6);

            // Weight gradient check on a few entries.
            let h = 1e-6;
            for i in [0usize, conv.w.len() / 2, conv.w.len() - 1] {
                let mut cp = conv.clone();
                cp.w.data[i] += h;
                let up = cp.forward(&x).data.iter().zip(&wsum).map(|(a, b)| a * b).sum::<f64>();
                let mut cm = conv.clone();
                cm.w.data[i] -= h;
                let dn = cm.forward(&x).data.iter().zip(&wsum).map(|(a, b)| a * b).sum::<f64>();
                let num = (up - dn) / (2.0 * h);
                assert!((num - gw.data[i]).abs() < 1e-5, "k={k} s={stride} w[{i}]");
            }
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = derive_rng(4, "lin", &[]);
        let lin = Linear::new(5, 3, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy = vec![0.3, -0.7, 1.1];
        let mut gw = lin.w.zeros_like();
        let mut gb = lin.b.zeros_like();
        let dx = lin.backward(&x, &dy, &mut gw, &mut gb);
        let h = 1e-6;
        for i in 0..5 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fp: f64 = lin.forward(&xp).iter().zip(&dy).map(|(a, b)| a * b).sum();
            let fm: f64 = lin.forward(&xm).iter().zip(&dy).map(|(a, b)| a * b).sum();
            assert!(((fp - fm) / (2.0 * h) - dx[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn pooling_shapes_and_gradients() {
        let mut x = Tensor::zeros(&[1, 4, 4]);
        for (i, v) in x.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let y = avg_pool2(&x);
        assert_eq!(y.shape, vec![1, 2, 2]);
        assert_eq!(y.data[0], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        let mut dy = y.zeros_like();
        dy.fill(1.0);
        let dx = avg_pool2_backward(&dy, 4, 4);
        assert!(dx.data.iter().all(|&v| (v - 0.25).abs() < 1e-12));

        let g = global_avg_pool(&x);
        assert!((g[0] - 7.5).abs() < 1e-12);
        let dg = global_avg_pool_backward(&[16.0], 1, 4, 4);
        assert!(dg.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
