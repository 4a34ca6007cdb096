use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Added under the square root of every Euclidean distance.
pub const EUCLIDEAN_EPS: f64 = 1e-12;

/// Posterior floor applied before KL divergences.
pub const KL_FLOOR: f64 = 1e-10;

/// Forward-only frame-pair Euclidean distances (see [`super::Tape::pairwise_euclidean`]).
pub fn pairwise_euclidean(test: &Tensor, reference: &Tensor, eps: f64) -> Result<Tensor> {
    if test.rank() != 2 || test.shape() != reference.shape() {
        return Err(Error::dim(
            "pairwise_euclidean",
            format!("test {:?} vs reference {:?}", test.shape(), reference.shape()),
        ));
    }
    let (f, s) = (test.shape()[0], test.shape()[1]);
    let d = kernels::pairwise_euclidean_forward(test.data(), reference.data(), f, s, eps);
    Tensor::new(vec![s, s], d)
}

/// Frame-pair KL divergences `D[i,j] = KL(t_i || r_j)` between two `F×S`
/// posterior maps. Each column is clamped at `floor` and renormalised to
/// sum to one first. Not differentiable; the result is a plain tensor.
pub fn pairwise_kl(test: &Tensor, reference: &Tensor, floor: f64) -> Result<Tensor> {
    if test.rank() != 2 || test.shape() != reference.shape() {
        return Err(Error::dim(
            "pairwise_kl",
            format!("test {:?} vs reference {:?}", test.shape(), reference.shape()),
        ));
    }
    if !test.all_finite() || !reference.all_finite() {
        return Err(Error::Input("pairwise_kl: non-finite input value".into()));
    }
    let (f, s) = (test.shape()[0], test.shape()[1]);
    let t = normalized_columns(test, floor);
    let r = normalized_columns(reference, floor);
    let log_t: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let log_r: Vec<f64> = r.iter().map(|v| v.ln()).collect();

    // KL(t_i||r_j) = sum_f t ln t - sum_f t ln r
    let neg_entropy: Vec<f64> = (0..s)
        .map(|i| (0..f).map(|k| t[i * f + k] * log_t[i * f + k]).sum())
        .collect();
    let mut out = Vec::with_capacity(s * s);
    for i in 0..s {
        let ti = &t[i * f..(i + 1) * f];
        for j in 0..s {
            let lr = &log_r[j * f..(j + 1) * f];
            let cross: f64 = ti.iter().zip(lr).map(|(a, b)| a * b).sum();
            // Rounding can leave a tiny negative for identical columns.
            out.push((neg_entropy[i] - cross).max(0.0) as f32);
        }
    }
    Tensor::new(vec![s, s], out)
}

/// Column-major (frame-major) copy with each frame clamped and renormalised.
fn normalized_columns(m: &Tensor, floor: f64) -> Vec<f64> {
    let (f, s) = (m.shape()[0], m.shape()[1]);
    let mut cols = vec![0.0f64; f * s];
    for j in 0..s {
        let col = &mut cols[j * f..(j + 1) * f];
        for (k, c) in col.iter_mut().enumerate() {
            *c = (m.data()[k * s + j] as f64).max(floor);
        }
        let total: f64 = col.iter().sum();
        col.iter_mut().for_each(|c| *c /= total);
    }
    cols
}
