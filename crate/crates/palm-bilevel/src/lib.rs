//! Solver library for bilevel programs whose lower level couples to the upper
//! decisions through bilinear constraint terms.

pub mod lp_core;
pub mod model;
pub mod reformulation;
