//! Low-bit quantization toolkit for diffusion denoisers.
//!
//! The pipeline quantizes a small trained denoiser with residual
//! mixed-precision weight quantizers, initializes low-rank adapters from the
//! quantization residual and fine-tunes them with an output alignment loss
//! plus a temporal relation distillation term.

pub mod cli;
pub mod error;
pub mod mpq_search;
pub mod mtrd;
pub mod numkit;
pub mod oolri;
pub mod quantizer;
pub mod toydiff;

pub use error::{Error, Result};
