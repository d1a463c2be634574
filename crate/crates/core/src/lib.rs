//! Unrolled convolutional dictionary learning for image denoising and
//! joint demosaicing-denoising.
//!
//! The network alternates strided convolutional analysis, synthesis and
//! noise-adaptive thresholding; its parameters are learned end to end with
//! hand-written gradients.

// `!(x >= 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod error;
pub mod eval;
pub mod export;
pub mod grad;
pub mod image;
pub mod io;
pub mod model;
pub mod noise;
pub mod solvers;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::{Image, MaskSignal};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/convolution.md")]
    mod convolution {}
    #[doc = include_str!("../../../book/src/sparse-coding.md")]
    mod sparse_coding {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/demosaicing.md")]
    mod demosaicing {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
