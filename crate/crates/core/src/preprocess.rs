//! Stationarization: raw messages -> 18-field shift-invariant representation
//! (relative prices in ticks from the previous mid, split time fields,
//! reference fields resolved against a replayed book) and the inverse
//! reconstruction used at inference time.

use serde::{Deserialize, Serialize};

use crate::feed::{
    MsgKind, OrderFlowMessage, Side, MAX_DT_SECS, MAX_PRICE_REL_TICKS, MAX_SIZE_SHARES, NS_PER_SEC,
};
use crate::lob::{BookError, OrderBook, RestingOrder};

/// The stationary 18-field message. `order_id`, `price_abs`, `old_id`, and
/// `old_price_abs` are carried raw and never tokenized; reference fields are
/// absent (`None`, tokenized as NaN) for limit orders.
///
/// Field use by kind:
/// - `price_rel`: the message's own price in ticks from the mid prevailing
///   before it was applied. For `Replace` this is the new quote price, for
///   `ExecuteAtPrice` the print price; both locate the old order through the
///   reference fields instead.
/// - `size`: shares for `Add`, fill size for executions, canceled size for
///   `Cancel`; absent for `Replace` (the new size travels in `size_aux`).
/// - `size_aux`: remaining-after-deletion for `Cancel`, new size for `Replace`.
/// - `ref_price_rel`: the matched resting order's price relative to the same
///   mid, so that `old_price_abs = mid + ref_price_rel` at reconstruction.
/// - `ref_size` / `ref_time_*`: the matched order's resting size and entry time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreMessage {
    pub symbol_id: u16,
    pub order_id: Option<u64>,
    pub kind: MsgKind,
    pub side: Side,
    pub price_abs: Option<i64>,
    pub price_rel: Option<i32>,
    pub size: Option<u32>,
    pub size_aux: Option<u32>,
    pub dt_s: u32,
    pub dt_ns: u32,
    pub time_s: u32,
    pub time_ns: u32,
    pub old_id: Option<u64>,
    pub old_price_abs: Option<i64>,
    pub ref_price_rel: Option<i32>,
    pub ref_size: Option<u32>,
    pub ref_time_s: Option<u32>,
    pub ref_time_ns: Option<u32>,
}

impl PreMessage {
    pub fn timestamp_ns(&self) -> u64 {
        self.time_s as u64 * NS_PER_SEC + self.time_ns as u64
    }

    /// Copy with the never-tokenized fields cleared, i.e. exactly what
    /// survives an encode/decode round trip.
    pub fn tokenizable(&self) -> PreMessage {
        PreMessage {
            order_id: None,
            price_abs: None,
            old_id: None,
            old_price_abs: None,
            ..*self
        }
    }
}

/// Tracks the current and previous mid in half-ticks (the mean of an odd
/// spread is a half-tick). Defined whenever both book sides are nonempty;
/// between defined states the last seen mid is carried.
#[derive(Clone, Copy, Debug, Default)]
pub struct MidTracker {
    current: Option<i64>,
    previous: Option<i64>,
}

impl MidTracker {
    pub fn update(&mut self, book: &OrderBook) {
        if let Some(mid) = book.snapshot().mid_half {
            self.previous = self.current;
            self.current = Some(mid);
        }
    }

    /// Mid in half-ticks as of the last update.
    pub fn mid_half(&self) -> Option<i64> {
        self.current
    }

    pub fn previous_half(&self) -> Option<i64> {
        self.previous
    }
}

/// Relative price in whole ticks of `price` against a half-tick mid. When the
/// mid falls between ticks the result is rounded toward the order's own side
/// (down for bids, up for asks), which never flips the sign across the book.
pub fn price_rel_ticks(side: Side, price: i64, mid_half: i64) -> i64 {
    let twice = 2 * price - mid_half;
    match side {
        Side::Bid => twice.div_euclid(2),
        Side::Ask => -((-twice).div_euclid(2)),
    }
}

/// Inverse of [`price_rel_ticks`]: absolute tick price from a relative price.
pub fn price_from_rel(side: Side, rel: i64, mid_half: i64) -> i64 {
    let twice = mid_half + 2 * rel;
    match side {
        Side::Bid => -((-twice).div_euclid(2)),
        Side::Ask => twice.div_euclid(2),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PreprocessError {
    /// Referential message targets an order absent from the replayed book.
    MissingTarget {
        index: usize,
        order_id: u64,
    },
    Book {
        index: usize,
        source: BookError,
    },
}

impl core::fmt::Display for PreprocessError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::MissingTarget { index, order_id } => {
                write!(
                    f,
                    "message {index}: target order {order_id} not in replayed book"
                )
            }
            Self::Book { index, source } => write!(f, "message {index}: {source}"),
        }
    }
}

impl std::error::Error for PreprocessError {}

/// Counters for the truncation applied to out-of-range fields.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClampStats {
    pub messages: u64,
    pub clamped_messages: u64,
    pub price_rel: u64,
    pub sizes: u64,
    pub dt_seconds: u64,
}

impl ClampStats {
    pub fn clamp_rate(&self) -> f64 {
        if self.messages == 0 {
            0.0
        } else {
            self.clamped_messages as f64 / self.messages as f64
        }
    }
}

fn clamp_rel(rel: i64, hit: &mut bool) -> i32 {
    if rel.abs() > MAX_PRICE_REL_TICKS {
        *hit = true;
        (MAX_PRICE_REL_TICKS * rel.signum()) as i32
    } else {
        rel as i32
    }
}

fn clamp_size(size: u32, hit: &mut bool) -> u32 {
    if size > MAX_SIZE_SHARES {
        *hit = true;
        MAX_SIZE_SHARES
    } else {
        size
    }
}

/// Builds the stationary form of one message given the pre-application mid,
/// the previous timestamp, and the matched resting order for referential
/// kinds. Shared by the feed preprocessor and the simulator (which re-derives
/// the canonical context tokens of every applied message).
pub fn build_pre_message(
    msg: &OrderFlowMessage,
    mid_half_before: Option<i64>,
    prev_ts: Option<u64>,
    target: Option<&RestingOrder>,
    stats: &mut ClampStats,
) -> PreMessage {
    let mut hit = false;
    // Before any mid exists the message's own price anchors the frame.
    let own_price = match msg.kind {
        MsgKind::Replace | MsgKind::ExecuteAtPrice => msg.exec_or_new_price.expect("validated"),
        _ => msg.price,
    };
    let mid_half = mid_half_before.unwrap_or(2 * own_price);

    let price_rel = clamp_rel(price_rel_ticks(msg.side, own_price, mid_half), &mut hit);

    let gap = prev_ts
        .map(|p| msg.timestamp_ns.saturating_sub(p))
        .unwrap_or(0);
    let dt_ns = (gap % NS_PER_SEC) as u32;
    let mut dt_s = gap / NS_PER_SEC;
    if dt_s > MAX_DT_SECS {
        hit = true;
        stats.dt_seconds += 1;
        dt_s = MAX_DT_SECS;
    }

    let (size, size_aux) = match msg.kind {
        MsgKind::Add | MsgKind::Execute | MsgKind::ExecuteAtPrice => {
            (Some(clamp_size(msg.size, &mut hit)), None)
        }
        MsgKind::Cancel => (
            Some(clamp_size(msg.size, &mut hit)),
            Some(clamp_size(msg.remaining_size.expect("validated"), &mut hit)),
        ),
        MsgKind::Replace => (None, Some(clamp_size(msg.size, &mut hit))),
    };

    let (old_id, old_price_abs, ref_price_rel, ref_size, ref_time_s, ref_time_ns) = match target {
        Some(t) => (
            Some(t.order_id),
            Some(t.price),
            Some(clamp_rel(
                price_rel_ticks(t.side, t.price, mid_half),
                &mut hit,
            )),
            Some(clamp_size(t.size, &mut hit)),
            Some((t.entry_time_ns / NS_PER_SEC) as u32),
            Some((t.entry_time_ns % NS_PER_SEC) as u32),
        ),
        None => (None, None, None, None, None, None),
    };

    stats.messages += 1;
    if hit {
        stats.clamped_messages += 1;
    }

    PreMessage {
        symbol_id: msg.symbol_id,
        // For Replace the primary id is the id the order carries going
        // forward; the old id travels in `old_id`.
        order_id: Some(msg.new_order_id.unwrap_or(msg.order_id)),
        kind: msg.kind,
        side: msg.side,
        price_abs: Some(own_price),
        price_rel: Some(price_rel),
        size,
        size_aux,
        dt_s: dt_s as u32,
        dt_ns,
        time_s: (msg.timestamp_ns / NS_PER_SEC) as u32,
        time_ns: (msg.timestamp_ns % NS_PER_SEC) as u32,
        old_id,
        old_price_abs,
        ref_price_rel,
        ref_size,
        ref_time_s,
        ref_time_ns,
    }
}

/// Streaming stationarizer: replays messages through an internal book,
/// resolves reference fields against it, and tracks the rolling mid.
#[derive(Clone, Debug)]
pub struct Stationarizer {
    book: OrderBook,
    mid: MidTracker,
    prev_ts: Option<u64>,
    index: usize,
    stats: ClampStats,
}

impl Default for Stationarizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Stationarizer {
    pub fn new() -> Self {
        Self {
            book: OrderBook::new(),
            mid: MidTracker::default(),
            prev_ts: None,
            index: 0,
            stats: ClampStats::default(),
        }
    }

    pub fn book(&self) -> &OrderBook {
        &self.book
    }

    /// Mid (half-ticks) that the *next* pushed message will be made relative to.
    pub fn mid_half(&self) -> Option<i64> {
        self.mid.mid_half()
    }

    pub fn prev_ts(&self) -> Option<u64> {
        self.prev_ts
    }

    pub fn stats(&self) -> ClampStats {
        self.stats
    }

    /// Stationarizes one message and applies it to the internal book.
    pub fn push(&mut self, msg: &OrderFlowMessage) -> Result<PreMessage, PreprocessError> {
        let index = self.index;
        let target = if msg.kind.is_referential() {
            Some(
                self.book
                    .get(msg.order_id)
                    .ok_or(PreprocessError::MissingTarget {
                        index,
                        order_id: msg.order_id,
                    })?,
            )
        } else {
            None
        };
        let pre = build_pre_message(
            msg,
            self.mid.mid_half(),
            self.prev_ts,
            target.as_ref(),
            &mut self.stats,
        );
        self.book
            .apply(msg)
            .map_err(|source| PreprocessError::Book { index, source })?;
        self.mid.update(&self.book);
        self.prev_ts = Some(msg.timestamp_ns);
        self.index += 1;
        Ok(pre)
    }
}

/// Stationarizes a whole feed. The feed must be replayable.
pub fn stationarize(
    msgs: &[OrderFlowMessage],
) -> Result<(Vec<PreMessage>, ClampStats), PreprocessError> {
    let mut st = Stationarizer::new();
    let mut out = Vec::with_capacity(msgs.len());
    for msg in msgs {
        out.push(st.push(msg)?);
    }
    Ok((out, st.stats()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResolveError {
    MissingField(&'static str),
    /// The reconstructed price level does not exist on the message's side.
    NoSuchLevel {
        side: Side,
        price: i64,
    },
    /// Level exists but no order matches the reference time and size.
    NoMatchingOrder {
        side: Side,
        price: i64,
    },
}

impl core::fmt::Display for ResolveError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::MissingField(name) => write!(f, "cannot reconstruct: field {name} absent"),
            Self::NoSuchLevel { side, price } => {
                write!(f, "no {side:?} level at {price} ticks")
            }
            Self::NoMatchingOrder { side, price } => {
                write!(f, "no matching order at {side:?} {price} ticks")
            }
        }
    }
}

impl std::error::Error for ResolveError {}

/// Reconstructs the message timestamp: previous timestamp plus the
/// inter-arrival split, or the absolute time fields for a stream head.
pub fn reconstruct_timestamp(pre: &PreMessage, prev_ts: Option<u64>) -> u64 {
    match prev_ts {
        Some(p) => p + pre.dt_s as u64 * NS_PER_SEC + pre.dt_ns as u64,
        None => pre.timestamp_ns(),
    }
}

/// Exact inverse of stationarization for replayable streams: reconstructs
/// absolute prices and the timestamp, and resolves the referential target by
/// searching the book level for the order matching the reference entry time
/// and size. Lenient resolution (queue-head substitution) lives in the
/// simulator's error-correction, not here.
pub fn destationarize(
    pre: &PreMessage,
    prev_ts: Option<u64>,
    mid_half: Option<i64>,
    book: &OrderBook,
) -> Result<OrderFlowMessage, ResolveError> {
    let rel = pre
        .price_rel
        .ok_or(ResolveError::MissingField("price_rel"))? as i64;
    let own_price = match mid_half {
        Some(m) => price_from_rel(pre.side, rel, m),
        None => pre
            .price_abs
            .ok_or(ResolveError::MissingField("price_abs"))?,
    };
    let timestamp_ns = reconstruct_timestamp(pre, prev_ts);

    if !pre.kind.is_referential() {
        return Ok(OrderFlowMessage {
            timestamp_ns,
            kind: pre.kind,
            order_id: pre.order_id.unwrap_or(0),
            side: pre.side,
            size: pre.size.ok_or(ResolveError::MissingField("size"))?,
            price: own_price,
            remaining_size: None,
            new_order_id: None,
            exec_or_new_price: None,
            symbol_id: pre.symbol_id,
        });
    }

    let ref_rel = pre
        .ref_price_rel
        .ok_or(ResolveError::MissingField("ref_price_rel"))? as i64;
    // old absolute price = current mid + reference relative price
    let old_price = match mid_half {
        Some(m) => price_from_rel(pre.side, ref_rel, m),
        None => pre
            .old_price_abs
            .ok_or(ResolveError::MissingField("old_price_abs"))?,
    };
    let level_price = match pre.kind {
        MsgKind::Replace | MsgKind::ExecuteAtPrice => old_price,
        _ => own_price,
    };
    let level = book
        .level(pre.side, level_price)
        .ok_or(ResolveError::NoSuchLevel {
            side: pre.side,
            price: level_price,
        })?;
    let ref_entry = pre
        .ref_time_s
        .zip(pre.ref_time_ns)
        .map(|(s, ns)| s as u64 * NS_PER_SEC + ns as u64)
        .ok_or(ResolveError::MissingField("ref_time"))?;
    let ref_size = pre.ref_size.ok_or(ResolveError::MissingField("ref_size"))?;
    let target = level
        .iter()
        .find(|o| o.entry_time_ns == ref_entry && o.size == ref_size)
        .ok_or(ResolveError::NoMatchingOrder {
            side: pre.side,
            price: level_price,
        })?;

    let msg = match pre.kind {
        MsgKind::Execute => OrderFlowMessage {
            timestamp_ns,
            kind: pre.kind,
            order_id: target.order_id,
            side: pre.side,
            size: pre.size.ok_or(ResolveError::MissingField("size"))?,
            price: target.price,
            remaining_size: None,
            new_order_id: None,
            exec_or_new_price: None,
            symbol_id: pre.symbol_id,
        },
        MsgKind::ExecuteAtPrice => OrderFlowMessage {
            timestamp_ns,
            kind: pre.kind,
            order_id: target.order_id,
            side: pre.side,
            size: pre.size.ok_or(ResolveError::MissingField("size"))?,
            price: target.price,
            remaining_size: None,
            new_order_id: None,
            exec_or_new_price: Some(own_price),
            symbol_id: pre.symbol_id,
        },
        MsgKind::Cancel => OrderFlowMessage {
            timestamp_ns,
            kind: pre.kind,
            order_id: target.order_id,
            side: pre.side,
            size: pre.size.ok_or(ResolveError::MissingField("size"))?,
            price: target.price,
            remaining_size: Some(pre.size_aux.ok_or(ResolveError::MissingField("size_aux"))?),
            new_order_id: None,
            exec_or_new_price: None,
            symbol_id: pre.symbol_id,
        },
        MsgKind::Replace => OrderFlowMessage {
            timestamp_ns,
            kind: pre.kind,
            order_id: target.order_id,
            side: pre.side,
            size: pre.size_aux.ok_or(ResolveError::MissingField("size_aux"))?,
            price: target.price,
            remaining_size: Some(target.size),
            new_order_id: pre.order_id,
            exec_or_new_price: Some(own_price),
            symbol_id: pre.symbol_id,
        },
        MsgKind::Add => unreachable!(),
    };
    Ok(msg)
}
