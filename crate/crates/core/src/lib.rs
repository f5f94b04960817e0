//! Sleep-arousal detection from polysomnography: preprocessing, physiology
//! features, wavelet scattering features and a bidirectional LSTM classifier.

pub mod bilstm;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod physio;
pub mod preprocess;
pub mod record_io;
pub mod scattering;
pub mod spectral;

pub use error::{Error, Result};
