//! Corpus ingestion, representation resizing and normalisation, STFT and
//! segmentation for the segment baseline, and the synthetic corpus
//! generator.

mod features;
mod manifest;
mod stft;
mod synth;
mod transform;
mod zscore;

pub use features::{FeatureMatrix, FEATURE_MAGIC};
pub use manifest::{FeatureKind, Label, Manifest, ManifestMeta, UtteranceRecord};
pub use stft::{
    hann, read_wav, stft_logmag, write_wav, FFT_SIZE, FRAME_SAMPLES, SAMPLE_RATE, STFT_BINS,
};
pub use synth::{synth_corpus, SynthConfig, AP_BLOCKS, AP_FEATURES};
pub(crate) use synth::subseed;
pub use transform::{
    log_transform, padding_split, resize_representation, retained_indices, segment,
    segment_count, SEGMENT_FRAMES, SEGMENT_HOP,
};
pub use zscore::{zscore_apply, zscore_fit, ZScoreFit, ZScoreStats, STD_FLOOR};

/// Floor used before taking logs of posteriors.
pub const LOG_FLOOR: f32 = 1e-10;
