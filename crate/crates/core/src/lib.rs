//! Self-supervised speech pre-training with width-limited causal attention,
//! and machine-ABX evaluation of the learned representations.
//!
//! The guide in `book/` walks through the pieces; its code blocks run as
//! doc-tests of this crate.

pub mod abx;
pub mod config;
pub mod corpus;
pub mod error;
pub mod nn;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub struct Autodiff;
    #[doc = include_str!("../../../book/src/model.md")]
    pub struct Model;
    #[doc = include_str!("../../../book/src/objectives.md")]
    pub struct Objectives;
    #[doc = include_str!("../../../book/src/corpus.md")]
    pub struct Corpus;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/abx.md")]
    pub struct Abx;
    #[doc = include_str!("../../../book/src/verification.md")]
    pub struct Verification;
}
