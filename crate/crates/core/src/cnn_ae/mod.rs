//! Convolutional autoencoder that learns a joint code and modulation for a
//! fixed blocklength and rate.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{derive_config, AeConfig, CodeRate, DEFAULT_KERNEL};
pub use model::{bits_to_tensor, build_model, threshold, AeModel, Block, Forward, ShapeRow, Stage};
pub use train::{non_increasing_fraction, random_bits, smoothed, train, TrainConfig, TrainReport};
