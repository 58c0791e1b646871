//! Intensity-driven zero-intelligence feed generator.
//!
//! This is a test fixture, not a market model: it produces deterministic,
//! internally consistent feeds (every referential message targets an order
//! resting in the replayed book at generation time) with configurable
//! type/size/inter-arrival marginals, including mass at round-lot sizes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{FeedConfigError, MsgKind, OrderFlowMessage, Side, MAX_SIZE_SHARES, NS_PER_SEC};
use crate::lob::OrderBook;
use crate::rng::Rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    /// First message timestamp; defaults to 9:25 ET so warmup precedes the open.
    pub start_time_ns: u64,
    pub start_price_ticks: i64,
    /// Mean inter-arrival gap in nanoseconds (exponential).
    pub mean_gap_ns: f64,
    /// Relative arrival intensities per kind, ordered as `MsgKind::ALL`.
    pub intensities: [f64; 5],
    /// Size mixture weights: [round-lot mass, odd-size mass]; sums to 1.
    pub size_mixture: [f64; 2],
    /// Geometric parameter for tick offsets of quotes from the reference price.
    pub offset_geom_p: f64,
    pub full_cancel_prob: f64,
    /// Initial price ladder depth per side.
    pub warmup_levels: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 1,
            start_time_ns: (9 * 3600 + 25 * 60) * NS_PER_SEC,
            start_price_ticks: 17_000,
            mean_gap_ns: 2_000_000.0,
            intensities: [0.55, 0.08, 0.005, 0.30, 0.065],
            size_mixture: [0.30, 0.70],
            offset_geom_p: 0.35,
            full_cancel_prob: 0.6,
            warmup_levels: 10,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), FeedConfigError> {
        if self.intensities.iter().any(|&w| w <= 0.0) {
            return Err(FeedConfigError::NonPositiveIntensity);
        }
        let s: f64 = self.size_mixture.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(FeedConfigError::WeightsNotNormalized(s));
        }
        Ok(())
    }
}

struct Generator<'a> {
    p: &'a SynthParams,
    symbol_id: u16,
    rng: Rng,
    book: OrderBook,
    /// Deterministic pool of live order ids (the book's own id index is a
    /// HashMap and must never be iterated).
    live: Vec<u64>,
    live_pos: HashMap<u64, usize>,
    next_id: u64,
    ts: u64,
    out: Vec<OrderFlowMessage>,
}

impl<'a> Generator<'a> {
    fn track(&mut self, id: u64) {
        self.live_pos.insert(id, self.live.len());
        self.live.push(id);
    }

    fn untrack_if_gone(&mut self, id: u64) {
        if self.book.get(id).is_some() {
            return;
        }
        if let Some(pos) = self.live_pos.remove(&id) {
            let last = self.live.pop().unwrap();
            if pos < self.live.len() {
                self.live[pos] = last;
                self.live_pos.insert(last, pos);
            }
        }
    }

    fn advance_clock(&mut self) {
        let gap = self.rng.exponential(self.p.mean_gap_ns).max(1.0) as u64;
        self.ts += gap.clamp(1, 900 * NS_PER_SEC);
    }

    fn draw_size(&mut self) -> u32 {
        if self.rng.next_f64() < self.p.size_mixture[0] {
            let lots = 1 + self.rng.geometric(0.5) as u32;
            (lots * 100).min(MAX_SIZE_SHARES / 100 * 100)
        } else {
            let mut s = self.rng.range_incl(1, 399) as u32;
            if s % 100 == 0 {
                s += 1;
            }
            s
        }
    }

    /// Reference price for quoting: the side-rounded mid when two-sided,
    /// otherwise the best same-side quote or the starting price.
    fn reference_price(&mut self, side: Side) -> i64 {
        let snap = self.book.snapshot();
        if let Some(mid_half) = snap.mid_half {
            match side {
                Side::Bid => mid_half.div_euclid(2),
                Side::Ask => (mid_half + 1).div_euclid(2),
            }
        } else {
            self.book
                .best_price(side)
                .or_else(|| self.book.best_price(side.opposite()))
                .unwrap_or(self.p.start_price_ticks)
        }
    }

    fn quote_price(&mut self, side: Side) -> i64 {
        let reference = self.reference_price(side);
        let offset = (self.rng.geometric(self.p.offset_geom_p) as i64).min(998);
        let raw = match side {
            Side::Bid => reference - offset,
            Side::Ask => reference + offset,
        };
        // Historical adds never cross; clamp inside the opposite best quote.
        let clamped = match (side, self.book.best_price(side.opposite())) {
            (Side::Bid, Some(ask)) => raw.min(ask - 1),
            (Side::Ask, Some(bid)) => raw.max(bid + 1),
            _ => raw,
        };
        clamped.max(1)
    }

    fn push(&mut self, msg: OrderFlowMessage) {
        self.book
            .apply(&msg)
            .expect("generator produced inconsistent message");
        match msg.kind {
            MsgKind::Add => self.track(msg.order_id),
            MsgKind::Replace => {
                let new_id = msg.new_order_id.unwrap();
                self.untrack_if_gone(msg.order_id);
                if self.book.get(new_id).is_some() {
                    self.track(new_id);
                }
            }
            _ => self.untrack_if_gone(msg.order_id),
        }
        self.out.push(msg);
    }

    fn emit_add(&mut self) {
        let side = if self.rng.chance(0.5) {
            Side::Bid
        } else {
            Side::Ask
        };
        let price = self.quote_price(side);
        let id = self.next_id;
        self.next_id += 1;
        let msg = OrderFlowMessage {
            timestamp_ns: self.ts,
            kind: MsgKind::Add,
            order_id: id,
            side,
            size: self.draw_size(),
            price,
            remaining_size: None,
            new_order_id: None,
            exec_or_new_price: None,
            symbol_id: self.symbol_id,
        };
        self.push(msg);
    }

    fn pick_live(&mut self) -> Option<u64> {
        if self.live.is_empty() {
            return None;
        }
        let idx = self.rng.below(self.live.len() as u64) as usize;
        Some(self.live[idx])
    }

    fn emit_execute(&mut self, at_price: bool) -> bool {
        // Executions consume the head of a best level (price-time priority).
        let preferred = if self.rng.chance(0.5) {
            Side::Bid
        } else {
            Side::Ask
        };
        let side = [preferred, preferred.opposite()]
            .into_iter()
            .find(|&s| self.book.best_price(s).is_some());
        let Some(side) = side else { return false };
        let best = self.book.best_price(side).unwrap();
        let target = *self.book.level(side, best).unwrap().front().unwrap();
        let fill = if self.rng.chance(0.5) || target.size == 1 {
            target.size
        } else {
            self.rng.range_incl(1, target.size as u64 - 1) as u32
        };
        let exec_price = if at_price {
            // Print one tick inside the display price when possible.
            let shifted = match side {
                Side::Bid => target.price + 1,
                Side::Ask => target.price - 1,
            };
            Some(shifted.max(1))
        } else {
            None
        };
        let msg = OrderFlowMessage {
            timestamp_ns: self.ts,
            kind: if at_price {
                MsgKind::ExecuteAtPrice
            } else {
                MsgKind::Execute
            },
            order_id: target.order_id,
            side,
            size: fill,
            price: target.price,
            remaining_size: None,
            new_order_id: None,
            exec_or_new_price: exec_price,
            symbol_id: self.symbol_id,
        };
        self.push(msg);
        true
    }

    fn emit_cancel(&mut self) -> bool {
        let Some(id) = self.pick_live() else {
            return false;
        };
        let target = self.book.get(id).unwrap();
        let full = self.rng.chance(self.p.full_cancel_prob) || target.size == 1;
        let canceled = if full {
            target.size
        } else {
            self.rng.range_incl(1, target.size as u64 - 1) as u32
        };
        let msg = OrderFlowMessage {
            timestamp_ns: self.ts,
            kind: MsgKind::Cancel,
            order_id: id,
            side: target.side,
            size: canceled,
            price: target.price,
            remaining_size: Some(target.size - canceled),
            new_order_id: None,
            exec_or_new_price: None,
            symbol_id: self.symbol_id,
        };
        self.push(msg);
        true
    }

    fn emit_replace(&mut self) -> bool {
        let Some(id) = self.pick_live() else {
            return false;
        };
        let target = self.book.get(id).unwrap();
        let shift = self.rng.range_incl(0, 4) as i64 - 2;
        let raw = target.price + shift;
        let new_price = match (target.side, self.book.best_price(target.side.opposite())) {
            (Side::Bid, Some(ask)) => raw.min(ask - 1),
            (Side::Ask, Some(bid)) => raw.max(bid + 1),
            _ => raw,
        }
        .max(1);
        let new_id = self.next_id;
        self.next_id += 1;
        let msg = OrderFlowMessage {
            timestamp_ns: self.ts,
            kind: MsgKind::Replace,
            order_id: id,
            side: target.side,
            size: self.draw_size(),
            price: target.price,
            remaining_size: Some(target.size),
            new_order_id: Some(new_id),
            exec_or_new_price: Some(new_price),
            symbol_id: self.symbol_id,
        };
        self.push(msg);
        true
    }
}

/// Generates `n_messages` deterministic, replay-consistent messages.
pub fn synth_feed(
    params: &SynthParams,
    symbol_id: u16,
    n_messages: usize,
) -> Vec<OrderFlowMessage> {
    let mut g = Generator {
        p: params,
        symbol_id,
        rng: Rng::new(params.seed),
        book: OrderBook::new(),
        live: Vec::new(),
        live_pos: HashMap::new(),
        next_id: 1,
        ts: params.start_time_ns,
        out: Vec::with_capacity(n_messages),
    };

    // Warmup ladder so referential kinds have targets from the start.
    let mut level = 1i64;
    while g.out.len() < n_messages && level <= params.warmup_levels as i64 {
        for side in [Side::Bid, Side::Ask] {
            if g.out.len() >= n_messages {
                break;
            }
            let price = match side {
                Side::Bid => params.start_price_ticks - level,
                Side::Ask => params.start_price_ticks + level,
            };
            let id = g.next_id;
            g.next_id += 1;
            let size = g.draw_size();
            let msg = OrderFlowMessage {
                timestamp_ns: g.ts,
                kind: MsgKind::Add,
                order_id: id,
                side,
                size,
                price: price.max(1),
                remaining_size: None,
                new_order_id: None,
                exec_or_new_price: None,
                symbol_id,
            };
            g.push(msg);
            g.advance_clock();
        }
        level += 1;
    }

    while g.out.len() < n_messages {
        let kind = MsgKind::ALL[g.rng.weighted(&params.intensities)];
        let emitted = match kind {
            MsgKind::Add => {
                g.emit_add();
                true
            }
            MsgKind::Execute => g.emit_execute(false),
            MsgKind::ExecuteAtPrice => g.emit_execute(true),
            MsgKind::Cancel => g.emit_cancel(),
            MsgKind::Replace => g.emit_replace(),
        };
        if !emitted {
            // Empty book for a referential kind; fall back to a quote.
            g.emit_add();
        }
        g.advance_clock();
    }
    g.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feed::write_feed;
    use crate::lob::replay;

    #[test]
    fn zero_messages_is_empty() {
        assert!(synth_feed(&SynthParams::default(), 0, 0).is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SynthParams::default();
        let a = synth_feed(&p, 0, 5_000);
        let b = synth_feed(&p, 0, 5_000);
        assert_eq!(a, b);
        assert_eq!(write_feed(&a).unwrap(), write_feed(&b).unwrap());
        let c = synth_feed(&SynthParams { seed: 2, ..p }, 0, 5_000);
        assert_ne!(a, c);
    }

    #[test]
    fn replays_with_zero_referential_errors() {
        let msgs = synth_feed(&SynthParams::default(), 0, 20_000);
        assert_eq!(msgs.len(), 20_000);
        let book = replay(&msgs).expect("synthetic feed must replay cleanly");
        assert!(book.order_count() > 0);
    }

    #[test]
    fn timestamps_strictly_increase() {
        let msgs = synth_feed(&SynthParams::default(), 0, 5_000);
        for w in msgs.windows(2) {
            assert!(w[0].timestamp_ns < w[1].timestamp_ns);
        }
    }

    #[test]
    fn messages_satisfy_invariants_and_limits() {
        let msgs = synth_feed(&SynthParams::default(), 0, 20_000);
        for m in &msgs {
            m.validate().unwrap();
            assert!(m.size <= MAX_SIZE_SHARES);
        }
        let kinds: std::collections::HashSet<_> = msgs.iter().map(|m| m.kind).collect();
        assert_eq!(kinds.len(), 5, "all five kinds generated");
    }

    #[test]
    fn round_lot_mass_matches_config() {
        let msgs = synth_feed(&SynthParams::default(), 0, 100_000);
        let adds: Vec<u32> = msgs
            .iter()
            .filter(|m| m.kind == MsgKind::Add)
            .map(|m| m.size)
            .collect();
        let round = adds.iter().filter(|&&s| s % 100 == 0).count() as f64;
        let mass = round / adds.len() as f64;
        assert!((mass - 0.30).abs() < 0.02, "round-lot mass {mass}");
    }
}
