//! Frame-level feature extraction: power spectrograms, MFCC + delta-delta,
//! SpecAugment masking, a binary feature cache, and spectrogram image export.

mod augment;
mod cache;
mod image;
mod mfcc;

pub use augment::spec_augment;
pub use cache::{read_feature_cache, write_feature_cache};
pub use image::{export_spectrogram_pgm, export_spectrogram_svg};
pub use mfcc::{append_delta_delta, mfcc, power_spectrogram};

use serde::{Deserialize, Serialize};

/// Framing and MFCC settings. 40 cepstra over 64 mel filters with 25 ms
/// windows and a 10 ms hop at 16 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub delta_window: usize,
    pub log_floor: f64,
    /// When true, features are static + delta + delta-delta (3F); default is
    /// the literal static + delta-delta reading (2F).
    pub include_delta: bool,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
            n_mels: 64,
            n_mfcc: 40,
            delta_window: 2,
            log_floor: 1e-10,
            include_delta: false,
        }
    }
}

impl FrameConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        ((self.window_ms / 1000.0) * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.hop_ms / 1000.0) * sample_rate as f64).round() as usize
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        if self.n_mfcc > self.n_mels {
            return Err(FeatureError::InvalidConfig(format!(
                "n_mfcc ({}) must not exceed n_mels ({})",
                self.n_mfcc, self.n_mels
            )));
        }
        if self.n_fft < self.window_samples(sample_rate) {
            return Err(FeatureError::InvalidConfig(format!(
                "n_fft ({}) must cover the window ({} samples)",
                self.n_fft,
                self.window_samples(sample_rate)
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(FeatureError::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Static MFCC, before temporal derivatives are appended.
    Mfcc,
    /// MFCC plus delta-delta (the classifier input).
    MfccDd,
    /// Frozen self-supervised context features.
    Ssl,
    /// Linear-frequency power spectrogram.
    Spectrogram,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Mfcc => 0,
            FeatureKind::MfccDd => 1,
            FeatureKind::Ssl => 2,
            FeatureKind::Spectrogram => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Mfcc),
            1 => Some(FeatureKind::MfccDd),
            2 => Some(FeatureKind::Ssl),
            3 => Some(FeatureKind::Spectrogram),
            _ => None,
        }
    }
}

/// T x F frame-level feature sequence, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub frame_hop_ms: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>, frame_hop_ms: f64, kind: FeatureKind) -> Self {
        assert_eq!(frames * dim, data.len(), "feature matrix size mismatch");
        Self { frames, dim, data, frame_hop_ms, kind }
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// SpecAugment settings: contiguous time frames and feature bins are
/// zero-filled. Mask widths clamp to the matrix dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub time_mask_len: usize,
    pub freq_mask_len: usize,
    pub n_time_masks: usize,
    pub n_freq_masks: usize,
    pub fill: f32,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { time_mask_len: 20, freq_mask_len: 50, n_time_masks: 1, n_freq_masks: 1, fill: 0.0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("clip too short: {0}")]
    TooShort(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt feature cache: {0}")]
    CorruptCache(String),
    #[error("feature cache version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
