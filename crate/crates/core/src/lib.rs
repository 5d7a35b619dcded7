//! Optimal consumption under habit formation in finite discrete-time
//! securities markets, complete or incomplete.
//!
//! The building blocks are an [`tree::EventTree`] carrying the information
//! structure, a [`market::MarketModel`] with its payoff spaces and
//! state-price densities, and [`preferences::HabitPreferences`]. The
//! [`solvers`] find optimal consumption plans and [`analysis`] probes their
//! qualitative properties.

// `!(x > 0.0)` rejects NaN along with non-positive values, and index loops
// follow the (level, atom) notation of the recursions.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod generate;
pub mod lp;
pub mod market;
pub mod preferences;
pub mod solvers;
pub mod tree;

pub use error::{Error, Result};
