//! Hierarchical fusion of long- and short-term user interests for
//! click-through-rate prediction in product search.
//!
//! The crate is a desk-scale, fully inspectable implementation of the HIFN
//! architecture: a GRU over the recent behavior window feeding three interest
//! encoders (query-, target-, and causal-dependent), a gated fusion of those
//! into a short-term interest vector, attention over older behaviors for the
//! long-term interest, an adaptive fusion weight between the two horizons,
//! and a self-supervised disentanglement objective built on interest proxies
//! and pairwise ranking losses.
//!
//! Everything runs on a small double-precision autodiff kernel ([`tape`]) so
//! every gradient can be verified against finite differences, and on a
//! synthetic behavior-log generator ([`synth`]) whose ground-truth factor
//! tags make the qualitative claims (fusion-weight ordering by behavior cost,
//! ablation directions, disentanglement constraints) testable properties.
//!
//! See the `examples/` directory for one runnable entry point per capability,
//! and the `hifn` binary for the batch pipeline
//! (`synth → prepare → train → eval / ablate / alpha-report`).

pub mod checkpoint;
pub mod data;
pub mod disentangle;
pub mod gradcheck;
pub mod gru;
pub mod metrics;
pub mod model;
pub mod report;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use tape::{KernelError, Tape, Var};
pub use tensor::{GradStore, ParamId, Params, Tensor};
