//! Patch-wise contrastive domain adaptation for semantic segmentation, at
//! desk scale.
//!
//! The crate bundles a small reverse-mode autodiff engine, a tiny
//! segmentation network with patch-wise latent projectors, label-space
//! pyramid disparity, cross-domain pair mining, the loss suite, Fourier
//! style translation, a synthetic two-domain benchmark, and the two-phase
//! training loop that ties them together.

pub mod ablate;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod disparity;
pub mod eval;
pub mod fda;
pub mod grid;
pub mod imageio;
pub mod labels;
pub mod losses;
pub mod pairing;
pub mod pipeline;
pub mod segnet;
pub mod train;

use thiserror::Error;

/// Any failure surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Image(#[from] imageio::ImageError),
    #[error(transparent)]
    Labels(#[from] labels::LabelError),
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error(transparent)]
    Disparity(#[from] disparity::DisparityError),
    #[error(transparent)]
    Pairing(#[from] pairing::PairingError),
    #[error(transparent)]
    Fda(#[from] fda::FdaError),
    #[error(transparent)]
    Model(#[from] segnet::SegNetError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Image(_) => "image",
            Error::Labels(_) => "labels",
            Error::Grid(_) => "grid",
            Error::Disparity(_) => "disparity",
            Error::Pairing(_) => "pairing",
            Error::Fda(_) => "fda",
            Error::Model(_) => "model",
            Error::Train(_) => "train",
            Error::Eval(_) => "eval",
            Error::Io(_) => "io",
        }
    }
}
