//! Acoustic respiratory screening toolkit.
//!
//! The crate covers the full pipeline from raw WAV recordings to a detection
//! probability: pre-processing (amplitude normalization, silence removal,
//! resampling), MFCC and self-supervised feature extraction, a BiLSTM + FFN
//! classifier trained with a from-scratch reverse-mode autodiff engine,
//! cross-task parameter-averaging pre-training, a contrastive self-supervised
//! pre-trainer with Gumbel-softmax quantization, and a cross-validation /
//! ROC-AUC / score-fusion evaluation harness.

pub mod audio;
pub mod config;
pub mod eval;
pub mod features;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scores;
pub mod ssl;
pub mod synth;
