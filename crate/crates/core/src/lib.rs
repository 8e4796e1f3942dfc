//! Building blocks for a shared network of language models: a versioned
//! model registry, an output cache, workflow graphs, a model-assignment
//! planner with memory and reflection, a deterministic execution runtime,
//! a GPU-pool simulator and a hash-chained revenue ledger.
//!
//! The guide in `book/` walks through each piece; its code listings are
//! compiled and run as doctests of this crate.

pub mod cache;
pub mod canonical;
pub mod clock;
pub mod digest;
pub mod ledger;
pub mod pathfinder;
pub mod registry;
pub mod runtime;
pub mod sim;
pub mod text;
pub mod workflow;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/registry.md")]
    mod registry {}
    #[doc = include_str!("../../../book/src/cache.md")]
    mod cache {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/runtime.md")]
    mod runtime {}
    #[doc = include_str!("../../../book/src/ledger.md")]
    mod ledger {}
    #[doc = include_str!("../../../book/src/sim.md")]
    mod sim {}
}
