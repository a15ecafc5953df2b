//! Similarity-guided source-domain selection for few-shot slot tagging, and a
//! shared-private prototype tagger trained with exact reverse-mode gradients.

// Validation uses negated comparisons so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod selection;
pub mod similarity;
pub mod spnet;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
