//! Desk-scale laboratory for studying how finetuned models hedge on
//! unfamiliar inputs, and for training them out of it.
//!
//! The crate builds synthetic long-tailed knowledge worlds, pretrains and
//! finetunes a small embedding-plus-readout model on them, and measures how
//! the model's predictions drift toward an input-independent "hedged"
//! prediction as queries become less familiar. On top of that core it
//! implements the two mitigation recipes under study: relabeling unfamiliar
//! finetuning examples with an abstain response, and policy-gradient
//! finetuning against reward functions (scripted or learned) that favor
//! abstention over fabrication — including conservative reward models whose
//! own hedge is pushed toward low rewards.
//!
//! Modules map one-to-one onto the experiment surface:
//!
//! - [`world`] — synthetic worlds, Zipf corpora, finetune/eval splits
//! - [`nnet`] — embeddings + readout heads, exact gradients, optimizers
//! - [`unfamiliarity`] — the three familiarity metrics and quantile buckets
//! - [`hedging`] — closed-form hedged predictions plus a brute-force oracle
//! - [`sft`] — supervised finetuning with relabel / inject / rebalance
//! - [`rl`] — REINFORCE and clipped-surrogate policy-gradient finetuning
//! - [`rmod`] — reward-model data generation, training, calibration
//! - [`harness`] — declarative experiment pipelines, reports, charts

pub mod error;
pub mod harness;
pub mod hedging;
pub mod nnet;
pub mod rl;
pub mod rmod;
pub mod rng;
pub mod sft;
pub mod stats;
pub mod unfamiliarity;
pub mod world;

pub use error::{Error, Result};
