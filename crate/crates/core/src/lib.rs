//! Projection-data extraction for transmission ultrasound CT.
//!
//! Raw acquisition records are gated, detrended and split into wave packets;
//! each packet yields one peak-to-trough amplitude through one of five
//! extractors (gradient, FFT, wavelet, ANN, SVM). Amplitudes are assembled
//! into sinograms and reconstructed by filtered back-projection against a
//! digital phantom. A synthetic scanner supplies labelled ground truth.

pub mod config;
pub mod error;
pub mod eval;
pub mod extract;
pub mod extrema;
pub mod ml;
pub mod par;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
pub mod tomo;
pub mod waveform;

pub use error::{Error, Result};
