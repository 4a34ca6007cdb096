//! Raw forward/backward kernels over flat row-major buffers.
//!
//! Shapes are validated by the tape before these are called; the kernels
//! themselves only `debug_assert!`.

/// `c (m×n) = a (m×k) · b (k×n)`, optionally accumulating into `c`.
///
/// `a_t` / `b_t` select the transposed view of the stored operand: when
/// set, `a` is stored as k×m (resp. `b` as n×k).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly the extents described by the strides
    // above (checked by the debug assertions and by every caller's shape
    // validation), and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y += W·x` for row-major `W: y.len() × x.len()`.
pub(crate) fn matvec_add(w: &[f32], x: &[f32], y: &mut [f32]) {
    let n = x.len();
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(n)) {
        *yi += dot(row, x);
    }
}

/// `y += Wᵀ·g` for row-major `W: g.len() × y.len()`.
pub(crate) fn matvec_t_add(w: &[f32], g: &[f32], y: &mut [f32]) {
    let n = y.len();
    for (&gi, row) in g.iter().zip(w.chunks_exact(n)) {
        if gi != 0.0 {
            y.iter_mut().zip(row).for_each(|(a, &b)| *a += gi * b);
        }
    }
}

/// `W += g·xᵀ`.
pub(crate) fn outer_add(g: &[f32], x: &[f32], w: &mut [f32]) {
    let n = x.len();
    for (&gi, row) in g.iter().zip(w.chunks_exact_mut(n)) {
        if gi != 0.0 {
            row.iter_mut().zip(x).for_each(|(a, &b)| *a += gi * b);
        }
    }
}

/// Dot product with eight independent partial sums so it vectorises.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut total: f32 = acc.iter().sum();
    for k in chunks * 8..a.len() {
        total += a[k] * b[k];
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - self.kw) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    /// Columns of the unfolded patch matrix.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

pub(crate) fn im2col(g: &ConvGeom, input: &[f32], cols: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let src_row = &plane[(oy * g.stride + ky) * g.w..];
                    let d = &mut dst[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        d.copy_from_slice(&src_row[kx..kx + ow]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = src_row[ox * g.stride + kx];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im_add(g: &ConvGeom, cols: &[f32], grad_input: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    for ci in 0..g.c_in {
        let plane = &mut grad_input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let base = (oy * g.stride + ky) * g.w + kx;
                    let s = &src[oy * ow..(oy + 1) * ow];
                    if g.stride == 1 {
                        for (d, v) in plane[base..base + ow].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (ox, v) in s.iter().enumerate() {
                            plane[base + ox * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Returns `(output C_out×P, unfolded patches K×P)`.
pub(crate) fn conv2d_forward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    bias: &[f32],
) -> (Vec<f32>, Vec<f32>) {
    let (k, p) = (g.patch(), g.positions());
    let mut cols = vec![0.0; k * p];
    im2col(g, input, &mut cols);
    let mut out = vec![0.0; g.c_out * p];
    for (co, row) in out.chunks_exact_mut(p).enumerate() {
        row.fill(bias[co]);
    }
    gemm(g.c_out, k, p, weight, false, &cols, false, &mut out, true);
    (out, cols)
}

pub(crate) fn conv2d_backward_params(
    g: &ConvGeom,
    grad_out: &[f32],
    cols: &[f32],
    grad_weight: &mut [f32],
    grad_bias: &mut [f32],
) {
    let (k, p) = (g.patch(), g.positions());
    gemm(g.c_out, p, k, grad_out, false, cols, true, grad_weight, true);
    for (gb, row) in grad_bias.iter_mut().zip(grad_out.chunks_exact(p)) {
        *gb += row.iter().sum::<f32>();
    }
}

pub(crate) fn conv2d_backward_input(
    g: &ConvGeom,
    grad_out: &[f32],
    weight: &[f32],
    grad_input: &mut [f32],
) {
    let (k, p) = (g.patch(), g.positions());
    let mut grad_cols = vec![0.0; k * p];
    gemm(k, g.c_out, p, weight, true, grad_out, false, &mut grad_cols, false);
    col2im_add(g, &grad_cols, grad_input);
}

/// Max pooling over `size×size` windows. Ties go to the first maximum in
/// row-major window order. Returns the output and the flat input index of
/// each window's winner.
pub(crate) fn maxpool_forward(
    input: &[f32],
    (c, h, w): (usize, usize, usize),
    size: usize,
    stride: usize,
) -> (Vec<f32>, Vec<u32>) {
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + (oy * stride) * w + ox * stride;
                let mut best = input[best_idx];
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx as u32);
            }
        }
    }
    (out, argmax)
}

/// `D[i,j] = sqrt(sum_f (t[f,i] - r[f,j])^2 + eps)` for `F×S` inputs.
/// Accumulates in `f64`.
pub(crate) fn pairwise_euclidean_forward(
    test: &[f32],
    reference: &[f32],
    features: usize,
    frames: usize,
    eps: f64,
) -> Vec<f32> {
    let t_cols = transpose(test, features, frames);
    let r_cols = transpose(reference, features, frames);
    let mut out = vec![0.0f32; frames * frames];
    for i in 0..frames {
        let ti = &t_cols[i * features..(i + 1) * features];
        for j in 0..frames {
            let rj = &r_cols[j * features..(j + 1) * features];
            let ss: f64 = ti
                .iter()
                .zip(rj)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
            out[i * frames + j] = (ss + eps).sqrt() as f32;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn pairwise_euclidean_backward(
    test: &[f32],
    reference: &[f32],
    dist: &[f32],
    grad_out: &[f32],
    features: usize,
    frames: usize,
    mut grad_test: Option<&mut [f32]>,
    mut grad_ref: Option<&mut [f32]>,
) {
    // dD[i,j]/dt[f,i] = (t[f,i] - r[f,j]) / D[i,j] = -dD[i,j]/dr[f,j]
    let coef: Vec<f64> = grad_out
        .iter()
        .zip(dist)
        .map(|(&g, &d)| g as f64 / d as f64)
        .collect();
    let t_cols = transpose(test, features, frames);
    let r_cols = transpose(reference, features, frames);
    let mut gt = vec![0.0f64; features * frames];
    let mut gr = vec![0.0f64; features * frames];
    for i in 0..frames {
        let ti = &t_cols[i * features..(i + 1) * features];
        for j in 0..frames {
            let c = coef[i * frames + j];
            if c == 0.0 {
                continue;
            }
            let rj = &r_cols[j * features..(j + 1) * features];
            for f in 0..features {
                let v = c * (ti[f] as f64 - rj[f] as f64);
                gt[i * features + f] += v;
                gr[j * features + f] -= v;
            }
        }
    }
    for f in 0..features {
        for i in 0..frames {
            if let Some(g) = grad_test.as_deref_mut() {
                g[f * frames + i] += gt[i * features + f] as f32;
            }
        }
        for j in 0..frames {
            if let Some(g) = grad_ref.as_deref_mut() {
                g[f * frames + j] += gr[j * features + f] as f32;
            }
        }
    }
}

fn transpose(m: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

/// Numerically stable softmax in `f64`.
pub(crate) fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&z| (z as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label` via log-sum-exp.
pub(crate) fn softmax_xent(logits: &[f32], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = max
        + logits
            .iter()
            .map(|&z| (z as f64 - max).exp())
            .sum::<f64>()
            .ln();
    (lse - logits[label] as f64, softmax(logits))
}
