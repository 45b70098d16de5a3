//! fastdiff: a small conditional diffusion engine that trains and samples an
//! ε-denoiser on the same few time steps of a linear-β schedule.
//!
//! The crate provides the dense schedule and few-step grids ([`schedule`]),
//! a self-contained tensor/autodiff/optimizer stack ([`numerics`]), a compact
//! conditional U-Net ε-predictor ([`denoiser`]), forward corruption, training
//! and deterministic/ancestral samplers with closed-form Gaussian oracles
//! ([`diffusion`]), synthetic paired-image tasks and ingestion ([`datasets`]),
//! PSNR/SSIM ([`metrics`]), and the CLI command layer ([`commands`]).

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod datasets;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod schedule;

pub use error::{Error, Result};
