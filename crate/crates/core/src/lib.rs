//! Temporal normalizing flows for time-dependent Fokker-Planck equations.
//!
//! See the book under `book/` for a walk through the modules.

pub mod adi;
pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod jet;
pub mod metrics;
pub mod problem;
pub mod residual;
pub mod tape;
pub mod train;

pub use error::{Error, Result};

/// The book's snippets, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/jets.md")]
    mod jets {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/residual.md")]
    mod residual {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/references.md")]
    mod references {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
