//! File formats, checkpoints, and the `relgraph` command line on top of
//! [`relgraph_core`].
//!
//! Every verb of the binary is a function in [`run`], so experiments can be
//! scripted without spawning processes.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, SyntheticConfig};
pub use error::{Error, Result};
pub use relgraph_core;
