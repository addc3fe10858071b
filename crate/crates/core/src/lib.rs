//! Forecasting with automatically learned implicit graphs.
//!
//! The model encodes each node's input window with an LSTM, learns a sparse
//! row-stochastic adjacency from trainable logits through Gumbel-Softmax edge
//! sampling ([`agl`]), propagates over the learned graph and an optional
//! pre-defined graph ([`gnn`]), and fuses the own/implicit/pre-defined
//! channels with per-node attention ([`arl`]) before a linear multi-horizon
//! output head.
//!
//! Everything here is pure computation over `alloc`; file formats, the CLI,
//! and checkpoints live in the `relgraph` crate.
#![no_std]

extern crate alloc;

pub mod agl;
pub mod arl;
pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gnn;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{grad_check, grad_check_many, Tape, Var};
pub use error::{Error, Result};
pub use model::{Mode, Model, ModelConfig, ParamGroup, ParamStore};
pub use tensor::Tensor;
pub use train::{ModelState, TrainConfig};
