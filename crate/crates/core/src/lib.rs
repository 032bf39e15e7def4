//! Deep graph matching with learned embeddings and a Sinkhorn assignment layer.
//!
//! Pipeline: intra-graph convolution ([`embed`]) → optional cross-graph
//! aggregation → bilinear affinity → log-domain Sinkhorn ([`assign`]) →
//! permutation or offset loss ([`losses`]). [`baselines`] holds the classical
//! pairwise-affinity machinery and spectral matching; [`harness`] trains,
//! evaluates, and sweeps on synthetic or stored pairs.

pub mod assign;
pub mod baselines;
pub mod diffcore;
pub mod embed;
mod error;
pub mod graphs;
pub mod harness;
pub mod losses;
pub mod par;

pub use error::{Error, Result};
