//! Pathogenicity scoring for genetic variants with attention networks over a
//! variant-gene graph.
//!
//! The guide in `book/` walks through each part; its code blocks are compiled
//! and run as doctests of this crate.

pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/autodiff.md")]
mod book_autodiff {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/graph.md")]
mod book_graph {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/gat.md")]
mod book_gat {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/favor.md")]
mod book_favor {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
mod book_metrics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/formats.md")]
mod book_formats {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
