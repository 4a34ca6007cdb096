use super::features::FeatureMatrix;
use crate::error::{Error, Result};

/// Frames per B-CNN1 segment (160 ms at 10 ms frames).
pub const SEGMENT_FRAMES: usize = 16;
/// Hop between consecutive segments (50 % overlap).
pub const SEGMENT_HOP: usize = 8;

/// Frame indices kept when shrinking `n` frames to `s`: `floor(k·n/s)`.
pub fn retained_indices(n: usize, s: usize) -> Vec<usize> {
    (0..s).map(|k| k * n / s).collect()
}

/// `(before, after)` padding frames when growing `n` frames to `s`; an odd
/// remainder goes at the end.
pub fn padding_split(n: usize, s: usize) -> (usize, usize) {
    let total = s - n;
    (total / 2, total - total / 2)
}

/// Fixes the representation length to `s` frames.
///
/// Longer inputs drop frames at regular intervals; shorter inputs are padded
/// on both sides with frames whose every entry equals the maximum value of
/// the representation.
pub fn resize_representation(rep: &FeatureMatrix, s: usize) -> Result<FeatureMatrix> {
    if s == 0 {
        return Err(Error::Input("target length must be at least 1".into()));
    }
    let (f, n) = (rep.features(), rep.frames());
    let out = match n.cmp(&s) {
        std::cmp::Ordering::Equal => return Ok(rep.clone()),
        std::cmp::Ordering::Greater => {
            let keep = retained_indices(n, s);
            let mut data = Vec::with_capacity(f * s);
            for row in rep.data().chunks_exact(n) {
                data.extend(keep.iter().map(|&k| row[k]));
            }
            data
        }
        std::cmp::Ordering::Less => {
            let pad = rep.max_value();
            let (before, after) = padding_split(n, s);
            let mut data = Vec::with_capacity(f * s);
            for row in rep.data().chunks_exact(n) {
                data.extend(std::iter::repeat_n(pad, before));
                data.extend_from_slice(row);
                data.extend(std::iter::repeat_n(pad, after));
            }
            data
        }
    };
    FeatureMatrix::new(f, s, out)
}

/// `ln(max(x, floor))` elementwise; rejects negative entries.
pub fn log_transform(rep: &FeatureMatrix, floor: f32) -> Result<FeatureMatrix> {
    if let Some(v) = rep.data().iter().find(|&&v| v < 0.0 || v.is_nan()) {
        return Err(Error::Input(format!("log transform of negative value {v}")));
    }
    Ok(rep.map(|x| x.max(floor).ln()))
}

/// Number of segments produced for `n` frames.
pub fn segment_count(n: usize) -> usize {
    if n < SEGMENT_FRAMES {
        0
    } else {
        (n - SEGMENT_FRAMES) / SEGMENT_HOP + 1
    }
}

/// Splits into 16-frame windows with hop 8, dropping a trailing partial
/// window. Inputs shorter than 16 frames yield nothing (and a warning).
pub fn segment(rep: &FeatureMatrix) -> Vec<FeatureMatrix> {
    let count = segment_count(rep.frames());
    if count == 0 {
        log::warn!(
            "utterance with {} frames is shorter than one {SEGMENT_FRAMES}-frame segment; skipped",
            rep.frames()
        );
    }
    (0..count)
        .map(|k| {
            rep.frame_window(k * SEGMENT_HOP, SEGMENT_FRAMES)
                .expect("window within bounds")
        })
        .collect()
}
