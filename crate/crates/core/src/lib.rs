//! Generative order-flow engine.
//!
//! The crate is organized as a pipeline over exchange messages:
//!
//! - [`feed`]: the canonical order-flow message, a binary wire codec for an
//!   ITCH-style record stream, session filtering, and a synthetic generator
//!   for desk-scale data.
//! - [`lob`]: full-depth level-3 limit order book with price-time priority.
//! - [`preprocess`]: stationarization of messages into relative-price /
//!   inter-arrival coordinates and the inverse reconstruction.
//! - [`vocab`]: the partitioned token vocabulary and the 24-slot message
//!   encoding, with per-slot legality masks for constrained sampling.
//! - [`model`]: a decoder-only transformer (RMSNorm, RoPE, causal attention,
//!   attention-sink streaming KV cache), training, and nucleus sampling.
//! - [`sim`]: the discrete event simulator that drives
//!   generate -> decode -> error-correct -> apply -> append.
//! - [`stylized`]: the statistical suite (returns, kurtosis, autocorrelation,
//!   DFA, rescaled range, flow distributions) used to evaluate traces.

pub mod feed;
pub mod lob;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod sim;
pub mod stylized;
pub mod vocab;

pub use feed::{MsgKind, OrderFlowMessage, Side};
pub use lob::{BookEvent, BookSnapshot, OrderBook};
pub use preprocess::{PreMessage, Stationarizer};
pub use vocab::{TokenizedMessage, Vocabulary};
