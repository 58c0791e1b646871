//! Independent oracles used by the test suites. Everything here is written
//! from first principles (flat vectors, linear scans, textbook recursions) so
//! it shares no logic with the implementations it checks.

pub mod refbook;
pub mod series;

pub use refbook::{canonical_book, CanonLevel, CanonOrder, ReferenceBook};
