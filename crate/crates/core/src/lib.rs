//! Anonymous pricing versus optimal revenue in large k-unit markets.
//!
//! - [`dists`]: triangular agents, markets, revenue curves, and the
//!   iron / flatten / decompose reduction to triangular agents.
//! - [`orderstats`]: exact and Poisson-approximate order-statistic CDFs.
//! - [`mechanisms`]: revenue of AP, SPP, OPT and the ex-ante relaxation.
//! - [`worstcase`]: the worst-case instance and its bound constants.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dists;
pub mod error;
pub mod mechanisms;
pub mod numeric;
pub mod orderstats;
pub mod worstcase;

pub use dists::{Market, PiecewiseDistribution, RevenueCurve, TriangularAgent};
pub use error::{Error, Result};
pub use mechanisms::{GapReport, Mechanism, Pricing, RevenueReport, DEFAULT_SEED};
pub use orderstats::{OrderStatProfile, Sandwich};
pub use worstcase::{BoundTable, WorstCase, WorstCaseRow, WorstCaseSolution};
