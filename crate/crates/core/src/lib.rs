//! Multi-level RGB-D fusion for object classification: a self-contained
//! tensor autodiff engine, miniature residual backbones, per-level projection
//! blocks, gated recurrent fusion, a training harness, and a synthetic
//! complementary-modality benchmark.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod image;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use params::{ParamId, ParamSet};
pub use scalar::{Dtype, Scalar};
pub use tape::{Activation, BnMode, Tape, VarId};
pub use tensor::Tensor;
