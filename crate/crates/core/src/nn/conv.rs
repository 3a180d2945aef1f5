//! Same-padded 2-D convolution (cross-correlation) with odd square kernels.
//!
//! Weights are stored as `[out, in, k * k]` and biases as `[out, 1, 1]`.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{dim_err, param_err, Result};

fn kernel_size(w: &Tensor) -> Result<usize> {
    let kk = w.shape()[2];
    let k = (kk as f64).sqrt().round() as usize;
    if k * k != kk || k.is_multiple_of(2) {
        return Err(param_err(format!("kernel must be odd and square, got {kk} taps")));
    }
    Ok(k)
}

fn check(x: &Tensor, w: &Tensor) -> Result<usize> {
    if w.shape()[1] != x.shape()[0] {
        return Err(dim_err(w.shape()[1], x.shape()[0]));
    }
    kernel_size(w)
}

/// Adds `wgt * shift(src, di, dj)` into `dst`, zero outside the plane.
fn accumulate_shifted(dst: &mut [f64], src: &[f64], h: usize, w: usize, di: isize, dj: isize, wgt: f64) {
    let (i0, i1) = ((-di).max(0) as usize, (h as isize - di).min(h as isize).max(0) as usize);
    let (j0, j1) = ((-dj).max(0) as usize, (w as isize - dj).min(w as isize).max(0) as usize);
    for i in i0..i1 {
        let si = (i as isize + di) as usize;
        let d = &mut dst[i * w + j0..i * w + j1];
        let s = &src[si * w + (j0 as isize + dj) as usize..si * w + (j1 as isize + dj) as usize];
        for (a, b) in d.iter_mut().zip(s) {
            *a += wgt * b;
        }
    }
}

fn shifted_dot(a: &[f64], src: &[f64], h: usize, w: usize, di: isize, dj: isize) -> f64 {
    let (i0, i1) = ((-di).max(0) as usize, (h as isize - di).min(h as isize).max(0) as usize);
    let (j0, j1) = ((-dj).max(0) as usize, (w as isize - dj).min(w as isize).max(0) as usize);
    let mut s = 0.0;
    for i in i0..i1 {
        let si = (i as isize + di) as usize;
        let x = &a[i * w + j0..i * w + j1];
        let y = &src[si * w + (j0 as isize + dj) as usize..si * w + (j1 as isize + dj) as usize];
        s += x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    }
    s
}

pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let k = check(x, w)?;
    let [ci, h, wd] = x.shape();
    let co = w.shape()[0];
    if b.shape() != [co, 1, 1] {
        return Err(dim_err([co, 1, 1], b.shape()));
    }
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros([co, h, wd]);
    out.data_mut()
        .par_chunks_mut(h * wd)
        .enumerate()
        .for_each(|(o, plane)| {
            plane.fill(b.data()[o]);
            for c in 0..ci {
                let taps = &w.data()[(o * ci + c) * k * k..(o * ci + c + 1) * k * k];
                for (t, &wgt) in taps.iter().enumerate() {
                    if wgt != 0.0 {
                        let di = (t / k) as isize - r;
                        let dj = (t % k) as isize - r;
                        accumulate_shifted(plane, x.plane(c), h, wd, di, dj, wgt);
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients with respect to input, weights and bias.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let k = check(x, w)?;
    let [ci, h, wd] = x.shape();
    let co = w.shape()[0];
    if g.shape() != [co, h, wd] {
        return Err(dim_err([co, h, wd], g.shape()));
    }
    let r = (k / 2) as isize;

    let mut gx = Tensor::zeros(x.shape());
    gx.data_mut()
        .par_chunks_mut(h * wd)
        .enumerate()
        .for_each(|(c, plane)| {
            for o in 0..co {
                let taps = &w.data()[(o * ci + c) * k * k..(o * ci + c + 1) * k * k];
                for (t, &wgt) in taps.iter().enumerate() {
                    if wgt != 0.0 {
                        let di = (t / k) as isize - r;
                        let dj = (t % k) as isize - r;
                        accumulate_shifted(plane, g.plane(o), h, wd, -di, -dj, wgt);
                    }
                }
            }
        });

    let mut gw = Tensor::zeros(w.shape());
    gw.data_mut()
        .par_chunks_mut(ci * k * k)
        .enumerate()
        .for_each(|(o, row)| {
            for c in 0..ci {
                for t in 0..k * k {
                    let di = (t / k) as isize - r;
                    let dj = (t % k) as isize - r;
                    row[c * k * k + t] = shifted_dot(g.plane(o), x.plane(c), h, wd, di, dj);
                }
            }
        });

    let gb_data = (0..co).map(|o| g.plane(o).iter().sum()).collect();
    let gb = Tensor::from_vec([co, 1, 1], gb_data)?;
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let [ci, h, wd] = x.shape();
        let co = w.shape()[0];
        let k = (w.shape()[2] as f64).sqrt() as usize;
        let r = (k / 2) as isize;
        let mut out = Tensor::zeros([co, h, wd]);
        for o in 0..co {
            for i in 0..h {
                for j in 0..wd {
                    let mut s = b.data()[o];
                    for c in 0..ci {
                        for a in 0..k {
                            for bb in 0..k {
                                let si = i as isize + a as isize - r;
                                let sj = j as isize + bb as isize - r;
                                if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < wd {
                                    s += w.data()[(o * ci + c) * k * k + a * k + bb]
                                        * x.plane(c)[si as usize * wd + sj as usize];
                                }
                            }
                        }
                    }
                    out.plane_mut(o)[i * wd + j] = s;
                }
            }
        }
        out
    }

    fn seq(shape: [usize; 3], a: f64) -> Tensor {
        let n = shape.iter().product::<usize>();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64) * a).sin()).collect()).unwrap()
    }

    #[test]
    fn matches_direct_sum() {
        let x = seq([2, 5, 6], 0.7);
        let w = seq([3, 2, 9], 1.3);
        let b = seq([3, 1, 1], 2.1);
        let fast = conv2d_forward(&x, &w, &b).unwrap();
        let slow = naive(&x, &w, &b);
        for (a, c) in fast.data().iter().zip(slow.data()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        let x = seq([2, 4, 5], 0.3);
        let w = seq([3, 2, 9], 0.9);
        let zero_b = Tensor::zeros([3, 1, 1]);
        let g = seq([3, 4, 5], 1.7);
        let (gx, gw, gb) = conv2d_backward(&x, &w, &g).unwrap();
        let lhs = conv2d_forward(&x, &w, &zero_b).unwrap().dot(&g);
        assert!((lhs - gx.dot(&x)).abs() < 1e-10);
        assert!((lhs - gw.dot(&w)).abs() < 1e-10);
        let ones = Tensor::filled([3, 1, 1], 1.0);
        let zero_w = Tensor::zeros(w.shape());
        let bias_only = conv2d_forward(&x, &zero_w, &ones).unwrap().dot(&g);
        assert!((bias_only - gb.data().iter().sum::<f64>()).abs() < 1e-10);
    }

    #[test]
    fn rejects_even_kernel_and_channel_mismatch() {
        let x = Tensor::zeros([2, 3, 3]);
        assert!(conv2d_forward(&x, &Tensor::zeros([1, 2, 4]), &Tensor::zeros([1, 1, 1])).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros([1, 3, 9]), &Tensor::zeros([1, 1, 1])).is_err());
    }
}
