//! Low-level layer math: im2col convolution, max pooling, dense layers and
//! their gradients. Feature maps are (channels, height, width); all math is
//! f32.
//!
//! Large matrix products split their column range across rayon workers;
//! every output element is still computed by the same scalar loop, so
//! results are bit-identical regardless of thread count.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

/// `a (m,k) . b (k,n)` with the columns of `b` processed in parallel chunks.
pub fn matmul(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Array2<f32> {
    let (m, _) = a.dim();
    let (_, n) = b.dim();
    const CHUNK: usize = 2048;
    if n <= CHUNK {
        return a.dot(&b);
    }
    let mut out = Array2::zeros((m, n));
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK)
        .map(|j| (j, (j + CHUNK).min(n)))
        .collect();
    let results: Vec<Array2<f32>> = chunks
        .par_iter()
        .map(|&(j0, j1)| a.dot(&b.slice(s![.., j0..j1])))
        .collect();
    for (&(j0, j1), block) in chunks.iter().zip(results) {
        out.slice_mut(s![.., j0..j1]).assign(&block);
    }
    out
}

/// Unfold (C,H,W) into a (C*kh*kw, out_h*out_w) patch matrix with zero
/// padding `pad` and stride 1.
pub fn im2col(input: &Array3<f32>, kh: usize, kw: usize, pad: usize) -> Array2<f32> {
    let (c, h, w) = input.dim();
    let out_h = h + 2 * pad - kh + 1;
    let out_w = w + 2 * pad - kw + 1;
    let mut cols = Array2::zeros((c * kh * kw, out_h * out_w));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..out_h {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..out_w {
                        let ix = (ox + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[(row, oy * out_w + ox)] = input[(ci, iy as usize, ix as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the inverse of [`im2col`]: fold a patch-gradient matrix back
/// into an input-shaped gradient.
pub fn col2im(
    cols: &Array2<f32>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> Array3<f32> {
    let out_h = h + 2 * pad - kh + 1;
    let out_w = w + 2 * pad - kw + 1;
    let mut input = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..out_h {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..out_w {
                        let ix = (ox + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        input[(ci, iy as usize, ix as usize)] += cols[(row, oy * out_w + ox)];
                    }
                }
            }
        }
    }
    input
}

/// Convolution forward pass (pre-activation). Weights are
/// (out_c, in_c, kh, kw).
pub fn conv_forward(
    input: &Array3<f32>,
    weights: &ndarray::Array4<f32>,
    bias: &Array1<f32>,
    pad: usize,
) -> Array3<f32> {
    let (out_c, in_c, kh, kw) = weights.dim();
    let (c, h, w) = input.dim();
    assert_eq!(c, in_c, "channel mismatch: input {c}, weights {in_c}");
    let out_h = h + 2 * pad - kh + 1;
    let out_w = w + 2 * pad - kw + 1;
    let cols = im2col(input, kh, kw, pad);
    let wmat = weights
        .view()
        .into_shape_with_order((out_c, in_c * kh * kw))
        .expect("contiguous weights");
    let mut out = matmul(wmat, cols.view());
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(bias.iter()) {
        row += b;
    }
    out.into_shape_with_order((out_c, out_h, out_w))
        .expect("conv output reshape")
}

/// Gradients of a convolution. `dpre` is the loss gradient at the
/// pre-activation output. Returns (dweights, dbias, dinput).
pub fn conv_backward(
    input: &Array3<f32>,
    weights: &ndarray::Array4<f32>,
    pad: usize,
    dpre: &Array3<f32>,
    need_dinput: bool,
) -> (ndarray::Array4<f32>, Array1<f32>, Option<Array3<f32>>) {
    let (out_c, in_c, kh, kw) = weights.dim();
    let (_, h, w) = input.dim();
    let (_, out_h, out_w) = dpre.dim();
    let dmat = dpre
        .view()
        .into_shape_with_order((out_c, out_h * out_w))
        .expect("contiguous dpre");
    let cols = im2col(input, kh, kw, pad);
    let dw = matmul(dmat.view(), cols.t())
        .into_shape_with_order((out_c, in_c, kh, kw))
        .expect("dw reshape");
    let db = dmat.sum_axis(Axis(1));
    let dinput = need_dinput.then(|| {
        let wmat = weights
            .view()
            .into_shape_with_order((out_c, in_c * kh * kw))
            .expect("contiguous weights");
        let dcols = matmul(wmat.t(), dmat.view());
        col2im(&dcols, in_c, h, w, kh, kw, pad)
    });
    (dw, db, dinput)
}

/// Max pooling with a square window and matching stride; output size floors.
/// Returns the pooled map and the flat argmax index of each winner for the
/// backward pass.
pub fn maxpool_forward(input: &Array3<f32>, size: usize) -> (Array3<f32>, Vec<usize>) {
    let (c, h, w) = input.dim();
    let out_h = h / size;
    let out_w = w / size;
    let mut out = Array3::zeros((c, out_h, out_w));
    let mut argmax = vec![0usize; c * out_h * out_w];
    for ci in 0..c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..size {
                    for kx in 0..size {
                        let (iy, ix) = (oy * size + ky, ox * size + kx);
                        let v = input[(ci, iy, ix)];
                        if v > best {
                            best = v;
                            best_idx = (ci * h + iy) * w + ix;
                        }
                    }
                }
                out[(ci, oy, ox)] = best;
                argmax[(ci * out_h + oy) * out_w + ox] = best_idx;
            }
        }
    }
    (out, argmax)
}

/// Route pooled gradients back to each window's argmax.
pub fn maxpool_backward(
    dout: &Array3<f32>,
    argmax: &[usize],
    input_dim: (usize, usize, usize),
) -> Array3<f32> {
    let mut dinput = Array3::zeros(input_dim);
    let flat = dinput.as_slice_mut().expect("contiguous dinput");
    for (g, &idx) in dout.iter().zip(argmax) {
        flat[idx] += g;
    }
    dinput
}

/// Dense forward pass (pre-activation): `w (out, in) . x + b`.
pub fn dense_forward(input: &Array1<f32>, weights: &Array2<f32>, bias: &Array1<f32>) -> Array1<f32> {
    weights.dot(input) + bias
}

/// Gradients of a dense layer. Returns (dweights, dbias, dinput).
pub fn dense_backward(
    input: &Array1<f32>,
    weights: &Array2<f32>,
    dpre: &Array1<f32>,
    need_dinput: bool,
) -> (Array2<f32>, Array1<f32>, Option<Array1<f32>>) {
    // explicit outer product; keeps the gradient in standard layout
    let mut dw = Array2::zeros((dpre.len(), input.len()));
    for (i, &g) in dpre.iter().enumerate() {
        dw.row_mut(i).assign(&input.mapv(|v| v * g));
    }
    let db = dpre.clone();
    let dinput = need_dinput.then(|| weights.t().dot(dpre));
    (dw, db, dinput)
}

pub fn relu(x: &mut ndarray::ArrayViewMut1<f32>) {
    x.mapv_inplace(|v| v.max(0.0));
}

pub fn relu_map(x: &Array3<f32>) -> Array3<f32> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_vec(x: &Array1<f32>) -> Array1<f32> {
    x.mapv(|v| v.max(0.0))
}

pub fn sigmoid_vec(x: &Array1<f32>) -> Array1<f32> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Numerically stable softmax.
pub fn softmax_vec(x: &Array1<f32>) -> Array1<f32> {
    let max = x.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps = x.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    exps / sum
}
