//! Independent double-precision reference implementations used as test
//! oracles. Nothing here calls into the crate's kernels.

#![allow(dead_code)]

use std::collections::BTreeMap;

pub mod gradcheck;

/// Activation pattern (ReLU signs, pooling winners) seen during a forward
/// pass. Finite differences are only trusted when it is unchanged.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Pattern(pub Vec<u32>);

pub fn conv2d(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    wt: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    let oh = (h - kh) / stride + 1;
    let ow = (w - kw) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias[o];
                for ci in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            acc += wt[((o * c + ci) * kh + ky) * kw + kx]
                                * x[(ci * h + y * stride + ky) * w + xx * stride + kx];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    (out, (co, oh, ow))
}

pub fn relu(x: &[f64], pat: &mut Pattern) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            pat.0.push((v > 0.0) as u32);
            v.max(0.0)
        })
        .collect()
}

/// 2×2 stride-2 max pooling; the first maximum in row-major order wins.
pub fn maxpool2(x: &[f64], (c, h, w): (usize, usize, usize), pat: &mut Pattern) -> (Vec<f64>, (usize, usize, usize)) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for k in 0..4 {
                    let v = x[(ch * h + 2 * y + k / 2) * w + 2 * xx + k % 2];
                    if v > best {
                        best = v;
                        arg = k;
                    }
                }
                pat.0.push(arg as u32);
                out.push(best);
            }
        }
    }
    (out, (c, oh, ow))
}

pub fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(i, &bi)| bi + (0..n).map(|j| w[i * n + j] * x[j]).sum::<f64>())
        .collect()
}

/// `D[i,j] = sqrt(sum_f (t[f,i] - r[f,j])^2 + eps)` for `F×S` inputs.
pub fn euclidean(t: &[f64], r: &[f64], f: usize, s: usize, eps: f64) -> Vec<f64> {
    let mut d = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            let sq: f64 = (0..f).map(|k| (t[k * s + i] - r[k * s + j]).powi(2)).sum();
            d[i * s + j] = (sq + eps).sqrt();
        }
    }
    d
}

pub fn xent(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub type Params = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn p<'a>(params: &'a Params, name: &str) -> &'a [f64] {
    &params[name].1
}

fn shape(params: &Params, name: &str) -> Vec<usize> {
    params[name].0.clone()
}

/// Classifier logits on a `1×S×S` image (inference mode).
pub fn classifier(params: &Params, image: &[f64], s: usize, pat: &mut Pattern) -> Vec<f64> {
    let ws = shape(params, "conv1.weight");
    let (x, dims) = conv2d(image, (1, s, s), p(params, "conv1.weight"), (ws[0], ws[2], ws[3]), p(params, "conv1.bias"), 1);
    let x = relu(&x, pat);
    let (x, dims) = maxpool2(&x, dims, pat);
    let ws = shape(params, "conv2.weight");
    let (x, dims) = conv2d(&x, dims, p(params, "conv2.weight"), (ws[0], ws[2], ws[3]), p(params, "conv2.bias"), 1);
    let x = relu(&x, pat);
    let (x, _) = maxpool2(&x, dims, pat);
    let x = affine(&x, p(params, "fc1.weight"), p(params, "fc1.bias"));
    let x = relu(&x, pat);
    affine(&x, p(params, "fc2.weight"), p(params, "fc2.bias"))
}

/// Front-end `F×S` → `32×S` (conv F×1 + ReLU).
pub fn frontend(params: &Params, rep: &[f64], f: usize, s: usize, pat: &mut Pattern) -> Vec<f64> {
    let ws = shape(params, "frontend.weight");
    let (x, _) = conv2d(rep, (1, f, s), p(params, "frontend.weight"), (ws[0], ws[2], ws[3]), p(params, "frontend.bias"), 1);
    relu(&x, pat)
}

pub fn proposed_logits(params: &Params, test: &[f64], reference: &[f64], f: usize, s: usize, pat: &mut Pattern) -> Vec<f64> {
    let c = shape(params, "frontend.weight")[0];
    let t = frontend(params, test, f, s, pat);
    let r = frontend(params, reference, f, s, pat);
    let d = euclidean(&t, &r, c, s, 1e-12);
    classifier(params, &d, s, pat)
}

pub fn bcnn1_logits(params: &Params, seg: &[f64], f: usize, pat: &mut Pattern) -> Vec<f64> {
    let ws = shape(params, "conv1.weight");
    let (x, _) = conv2d(seg, (1, f, 16), p(params, "conv1.weight"), (ws[0], ws[2], ws[3]), p(params, "conv1.bias"), 1);
    let x = relu(&x, pat);
    let c1 = ws[0];
    let ws = shape(params, "conv2.weight");
    let (x, _) = conv2d(&x, (c1, 1, 16), p(params, "conv2.weight"), (ws[0], ws[2], ws[3]), p(params, "conv2.bias"), 1);
    let x = relu(&x, pat);
    let x = affine(&x, p(params, "fc1.weight"), p(params, "fc1.bias"));
    let x = relu(&x, pat);
    affine(&x, p(params, "fc2.weight"), p(params, "fc2.bias"))
}

/// Denominator floor for [`rel_err`]: gradients smaller than this are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-2;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central difference of `f` along coordinate `i` of `x` with step `h`, or
/// `None` when the activation pattern differs anywhere within `guard` of
/// the point (probed at `±h` and `±guard`).
pub fn central_diff<F>(x: &mut [f64], i: usize, h: f64, guard: f64, f: F) -> Option<f64>
where
    F: Fn(&[f64], &mut Pattern) -> f64,
{
    let orig = x[i];
    let mut eval = |delta: f64| {
        x[i] = orig + delta;
        let mut pat = Pattern::default();
        let v = f(x, &mut pat);
        (v, pat)
    };
    let (_, p0) = eval(0.0);
    let (fp, pp) = eval(h);
    let (fm, pm) = eval(-h);
    let mut same = pp == p0 && pm == p0;
    if same && guard > h {
        same = eval(guard).1 == p0 && eval(-guard).1 == p0;
    }
    x[i] = orig;
    same.then(|| (fp - fm) / (2.0 * h))
}

pub fn mean64(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
