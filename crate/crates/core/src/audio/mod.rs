//! Recording ingestion and pre-processing: WAV decoding, amplitude
//! normalization, energy-based silence removal, and resampling to 16 kHz.

mod manifest;
mod resample;
mod sad;
mod wav;

pub use manifest::{DatasetManifest, Label, ManifestEntry, PathCheck, Task};
pub use resample::resample;
pub use sad::remove_silence;
pub use wav::{read_wav, write_wav_16bit};

use serde::{Deserialize, Serialize};

pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with its sample rate. Samples are dimensionless amplitudes,
/// nominally in [-1, 1] after normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    /// Set when normalization saw an all-zero clip and left it unchanged.
    pub silent_warning: bool,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self { samples, sample_rate, silent_warning: false }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Silence-removal settings. The threshold is relative to the loudest
/// analysis window of the clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SadConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub threshold_db: f64,
    pub min_voiced_ms: f64,
}

impl Default for SadConfig {
    fn default() -> Self {
        Self { frame_ms: 25.0, hop_ms: 10.0, threshold_db: -40.0, min_voiced_ms: 100.0 }
    }
}

impl SadConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        if !(self.hop_ms > 0.0 && self.frame_ms >= self.hop_ms) {
            return Err(AudioError::InvalidConfig(format!(
                "frame_ms ({}) must be >= hop_ms ({}) > 0",
                self.frame_ms, self.hop_ms
            )));
        }
        if self.threshold_db >= 0.0 {
            return Err(AudioError::InvalidConfig(format!(
                "threshold_db ({}) must be negative",
                self.threshold_db
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("empty audio: {0}")]
    EmptyAudio(String),
    #[error("all silent: retained {retained_ms:.1} ms below minimum {min_ms:.1} ms")]
    AllSilent { retained_ms: f64, min_ms: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scales samples so the peak magnitude is exactly 1. An all-zero clip is
/// returned unchanged with `silent_warning` set, so the pipeline fails later
/// with a clearer `AllSilent` error.
pub fn normalize_amplitude(clip: &AudioClip) -> AudioClip {
    let peak = clip.samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()));
    if peak == 0.0 {
        let mut out = clip.clone();
        out.silent_warning = true;
        return out;
    }
    AudioClip {
        samples: clip.samples.iter().map(|&s| s / peak).collect(),
        sample_rate: clip.sample_rate,
        silent_warning: clip.silent_warning,
    }
}
