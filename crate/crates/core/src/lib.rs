//! Text-guided segmentation of dense remote-sensing scenes.
//!
//! The crate is `no_std` (it needs `alloc`) and carries everything that is
//! pure computation: a small dense tensor type with reverse-mode autodiff,
//! the vision / text / fusion / decoder blocks, the caption checking
//! pipeline, synthetic scene generation and the evaluation metrics. File
//! formats, configuration and the command-line driver live in the `mpers`
//! crate.

#![no_std]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod autograd;
pub mod caption;
pub mod decoder;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod lqga;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod tensor;
pub mod text;
pub mod train;
pub mod vision;

pub use self::autograd::{Grads, Graph, Var};
pub use self::error::{Error, Result};
pub use self::param::{ParamId, ParamStore};
pub use self::scalar::Scalar;
pub use self::tensor::Tensor;
