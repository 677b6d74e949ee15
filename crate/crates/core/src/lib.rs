//! Topological mapping, belief-based localisation and expected-free-energy
//! planning for a mobile agent, exercised in a deterministic 2D simulator.

pub mod agent;
pub mod categorical;
pub mod counts;
pub mod error;
pub mod eval;
pub mod harness;
pub mod inference;
pub mod learning;
pub mod map;
pub mod model;
pub mod perception;
pub mod planning;
pub mod sim;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/beliefs.md")]
    mod beliefs {}
    #[doc = include_str!("../../../book/src/map.md")]
    mod map {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
