//! Canonical order-flow messages, the binary wire codec, session filtering,
//! and synthetic feed generation.
//!
//! A feed is a time-ordered stream of five message kinds that fully
//! determines the evolution of a limit order book. The wire format is an
//! ITCH-style record stream (big-endian, length-prefixed records, 6-byte
//! timestamps, 4-decimal fixed-point prices) wrapped in a versioned
//! container header carrying the symbol table.

mod synth;
mod wire;

pub use synth::{synth_feed, SynthParams};
pub use wire::{parse_feed, write_feed, FeedWriteError, ParseError, ParseReport, ParsedFeed};

use serde::{Deserialize, Serialize};

pub const NS_PER_SEC: u64 = 1_000_000_000;

/// Relative prices past this many ticks from the mid are truncated.
pub const MAX_PRICE_REL_TICKS: i64 = 999;
/// Order sizes above this are truncated.
pub const MAX_SIZE_SHARES: u32 = 9_999;
/// Inter-arrival seconds above this are truncated (one token per component).
pub const MAX_DT_SECS: u64 = 999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Bid => 0,
            Side::Ask => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MsgKind {
    /// New limit order.
    Add,
    /// Execution of a visible limit order (full or partial) at its display price.
    Execute,
    /// Execution printed at a price different from the display price.
    ExecuteAtPrice,
    /// Cancellation of a limit order (full or partial).
    Cancel,
    /// Replacement: old order removed, new order queued at the tail of its level.
    Replace,
}

impl MsgKind {
    pub const ALL: [MsgKind; 5] = [
        MsgKind::Add,
        MsgKind::Execute,
        MsgKind::ExecuteAtPrice,
        MsgKind::Cancel,
        MsgKind::Replace,
    ];

    pub fn index(self) -> usize {
        match self {
            MsgKind::Add => 0,
            MsgKind::Execute => 1,
            MsgKind::ExecuteAtPrice => 2,
            MsgKind::Cancel => 3,
            MsgKind::Replace => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<MsgKind> {
        MsgKind::ALL.get(i).copied()
    }

    /// Every kind except `Add` refers to an order already resting in the book.
    pub fn is_referential(self) -> bool {
        !matches!(self, MsgKind::Add)
    }

    pub fn label(self) -> &'static str {
        match self {
            MsgKind::Add => "add",
            MsgKind::Execute => "execute",
            MsgKind::ExecuteAtPrice => "execute_at_price",
            MsgKind::Cancel => "cancel",
            MsgKind::Replace => "replace",
        }
    }
}

/// One exchange event. Prices are integer ticks (1 tick = $0.01), timestamps
/// are nanoseconds since midnight.
///
/// Field use by kind (fields not listed are `None`):
///
/// | kind           | `order_id`  | `size`        | `price`       | extras                                  |
/// |----------------|-------------|---------------|---------------|-----------------------------------------|
/// | Add            | new order   | shares        | limit price   |                                         |
/// | Execute        | resting     | fill shares   | display price |                                         |
/// | ExecuteAtPrice | resting     | fill shares   | display price | `exec_or_new_price` = print price       |
/// | Cancel         | resting     | canceled      | display price | `remaining_size` = left after deletion  |
/// | Replace        | old order   | new shares    | old price     | `new_order_id`, `exec_or_new_price` =   |
/// |                |             |               |               | new price, `remaining_size` = old shares|
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderFlowMessage {
    pub timestamp_ns: u64,
    pub kind: MsgKind,
    pub order_id: u64,
    pub side: Side,
    pub size: u32,
    pub price: i64,
    pub remaining_size: Option<u32>,
    pub new_order_id: Option<u64>,
    pub exec_or_new_price: Option<i64>,
    pub symbol_id: u16,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MessageInvariantError {
    ZeroSize,
    NonPositivePrice,
    MissingField(&'static str),
    UnexpectedField(&'static str),
}

impl core::fmt::Display for MessageInvariantError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::ZeroSize => write!(f, "size must be >= 1"),
            Self::NonPositivePrice => write!(f, "price must be positive"),
            Self::MissingField(name) => write!(f, "missing required field {name}"),
            Self::UnexpectedField(name) => write!(f, "field {name} not applicable to this kind"),
        }
    }
}

impl std::error::Error for MessageInvariantError {}

impl OrderFlowMessage {
    /// Checks the per-kind field matrix: required fields present, inapplicable
    /// fields absent, sizes and prices in range.
    pub fn validate(&self) -> Result<(), MessageInvariantError> {
        use MessageInvariantError::*;
        if self.size == 0 {
            return Err(ZeroSize);
        }
        if self.price <= 0 {
            return Err(NonPositivePrice);
        }
        let expect = |present: bool, required: bool, name: &'static str| {
            if required && !present {
                Err(MissingField(name))
            } else if !required && present {
                Err(UnexpectedField(name))
            } else {
                Ok(())
            }
        };
        match self.kind {
            MsgKind::Add | MsgKind::Execute => {
                expect(self.remaining_size.is_some(), false, "remaining_size")?;
                expect(self.new_order_id.is_some(), false, "new_order_id")?;
                expect(self.exec_or_new_price.is_some(), false, "exec_or_new_price")?;
            }
            MsgKind::ExecuteAtPrice => {
                expect(self.remaining_size.is_some(), false, "remaining_size")?;
                expect(self.new_order_id.is_some(), false, "new_order_id")?;
                expect(self.exec_or_new_price.is_some(), true, "exec_or_new_price")?;
            }
            MsgKind::Cancel => {
                expect(self.remaining_size.is_some(), true, "remaining_size")?;
                expect(self.new_order_id.is_some(), false, "new_order_id")?;
                expect(self.exec_or_new_price.is_some(), false, "exec_or_new_price")?;
            }
            MsgKind::Replace => {
                expect(self.remaining_size.is_some(), true, "remaining_size")?;
                expect(self.new_order_id.is_some(), true, "new_order_id")?;
                expect(self.exec_or_new_price.is_some(), true, "exec_or_new_price")?;
            }
        }
        if let Some(p) = self.exec_or_new_price {
            if p <= 0 {
                return Err(NonPositivePrice);
            }
        }
        Ok(())
    }
}

/// Session window plus generator parameters for synthetic feeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeedConfig {
    pub symbol_id: u16,
    /// Session open, inclusive. Default 9:30:00 ET as ns since midnight.
    pub session_open_ns: u64,
    /// Session close, exclusive. Default 16:00:00 ET.
    pub session_close_ns: u64,
    pub synth: SynthParams,
}

impl Default for FeedConfig {
    fn default() -> Self {
        Self {
            symbol_id: 0,
            session_open_ns: (9 * 3600 + 30 * 60) * NS_PER_SEC,
            session_close_ns: 16 * 3600 * NS_PER_SEC,
            synth: SynthParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeedConfigError {
    SessionOrder,
    NonPositiveIntensity,
    WeightsNotNormalized(f64),
}

impl core::fmt::Display for FeedConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::SessionOrder => write!(f, "session open must precede close"),
            Self::NonPositiveIntensity => write!(f, "message intensities must be positive"),
            Self::WeightsNotNormalized(s) => write!(f, "mixture weights sum to {s}, expected 1"),
        }
    }
}

impl std::error::Error for FeedConfigError {}

impl FeedConfig {
    pub fn validate(&self) -> Result<(), FeedConfigError> {
        if self.session_open_ns >= self.session_close_ns {
            return Err(FeedConfigError::SessionOrder);
        }
        self.synth.validate()
    }
}

/// Retains messages with `open <= timestamp < close`, preserving order.
/// Open is inclusive, close is exclusive: prints at the closing time belong
/// to the close auction and are dropped.
pub fn filter_session(msgs: &[OrderFlowMessage], config: &FeedConfig) -> Vec<OrderFlowMessage> {
    msgs.iter()
        .filter(|m| {
            m.timestamp_ns >= config.session_open_ns && m.timestamp_ns < config.session_close_ns
        })
        .copied()
        .collect()
}
