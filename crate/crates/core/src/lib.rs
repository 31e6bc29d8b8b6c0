//! Query-efficient flattening of hierarchical clustering ensembles.
//!
//! Given several hierarchical clustering trees over the same units, a
//! [`search::Search`] asks an oracle whether pairs of units belong together
//! and returns a partition built from the trees' nodes. Answers are cached
//! and closed under transitivity, and purity facts learned in one tree are
//! shared with all the others, so each tree added to the ensemble costs few
//! extra questions.
//!
//! The crate also supplies the pieces around the search: a synthetic
//! drifting-waveform generator ([`datagen`]), the tree ensemble builder
//! ([`treegen`]), evaluation metrics ([`metrics`]) and a seeded benchmark
//! sweep ([`bench`]).

pub mod bench;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod leafset;
pub mod metrics;
pub mod oracle;
pub mod search;
pub mod treegen;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/forests.md")]
    mod forests {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
