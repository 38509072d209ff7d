//! Finite-blocklength coding over the complex AWGN channel: the normal
//! approximation, a convolutional autoencoder trained from scratch, and
//! polar and Reed-Muller baselines over Gray QAM.

pub mod channel;
pub mod cnn_ae;
pub mod error;
pub mod harness;
pub mod modem;
pub mod nngraph;
pub mod polar;
pub mod reed_muller;
pub mod theory;

pub use error::{Error, Result};

pub use channel::{Codeword, NoiseSpec};
pub use cnn_ae::{AeConfig, AeModel, CodeRate, TrainConfig, TrainReport};
pub use harness::{Candidate, FepReport, RatePoint, Scheme};
pub use theory::{FblParams, LogTerm, SnrPoint};
