//! Gradient estimators for on-policy distillation, local support matching
//! on the teacher's top-K tokens, and the exact enumeration oracles that
//! verify them.
//!
//! The guide in `book/` walks through each piece;
//! its Rust snippets are compiled as doc-tests of this crate.

pub mod error;
pub mod estimators;
pub mod experiment;
pub mod frame;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod support;
pub mod toy;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/variance.md")]
    mod variance {}
    #[doc = include_str!("../../../book/src/toy.md")]
    mod toy {}
    #[doc = include_str!("../../../book/src/support-matching.md")]
    mod support_matching {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
