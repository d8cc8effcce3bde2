//! Self-training for end-to-end speech translation on toy-scale models.
//!
//! The crate covers the full pipeline: manifests, log-mel features, a unigram
//! subword tokenizer, back-off n-gram LMs, a small autodiff library with the
//! LSTM encoder-decoder and CTC models, training, decoding, evaluation and the
//! pseudo-labeling experiment driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod exec;
pub mod frontend;
pub mod ngram;
pub mod nnet;
pub mod optim;
pub mod pipeline;
pub mod subword;
pub mod synthtask;
pub mod textio;

pub use error::{Error, Result};
