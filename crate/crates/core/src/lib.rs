//! FAST dynamic functional connectivity with Hodge decomposition of windowed
//! edge flows and nonparametric group statistics.

pub mod error;
pub mod fast;
pub mod hodge;
pub mod io;
pub mod pipeline;
pub mod signal;
pub mod simplicial;

pub use error::{Error, Result};
pub mod stats;
pub mod synth;
