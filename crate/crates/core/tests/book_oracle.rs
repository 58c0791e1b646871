//! Order book equivalence against the brute-force list-scan reference:
//! full state (every level, every queue position) compared after every
//! message, plus trade-sequence equality for crossing flows.

use oflow_core::feed::{synth_feed, MsgKind, OrderFlowMessage, Side, SynthParams};
use oflow_core::lob::{BookEvent, OrderBook};
use oflow_core::rng::Rng;
use oflow_testkit::{canonical_book, ReferenceBook};

fn assert_books_equal(book: &OrderBook, oracle: &ReferenceBook, at: usize) {
    assert_eq!(
        canonical_book(book),
        oracle.canonical(),
        "state diverged after message {at}"
    );
}

#[test]
fn synthetic_feed_full_state_equivalence() {
    let msgs = synth_feed(&SynthParams::default(), 0, 10_000);
    let mut book = OrderBook::new();
    let mut oracle = ReferenceBook::new();
    for (i, msg) in msgs.iter().enumerate() {
        let events = book.apply(msg).unwrap();
        let ref_trades = oracle.apply(msg).unwrap();
        let trades: Vec<(u64, i64, u32)> = events
            .iter()
            .filter_map(|e| match e {
                BookEvent::Trade {
                    maker_id,
                    price,
                    size,
                    ..
                } => Some((*maker_id, *price, *size)),
                _ => None,
            })
            .collect();
        let oracle_trades: Vec<(u64, i64, u32)> = ref_trades
            .iter()
            .map(|t| (t.maker_id, t.price, t.size))
            .collect();
        assert_eq!(
            trades, oracle_trades,
            "trade sequence diverged at message {i}"
        );
        assert_books_equal(&book, &oracle, i);
    }
}

/// Replay throughput contract: a million-message feed replays in seconds.
#[test]
fn replay_of_one_million_messages_is_fast() {
    let msgs = synth_feed(&SynthParams::default(), 0, 1_000_000);
    let t0 = std::time::Instant::now();
    let book = oflow_core::lob::replay(&msgs).expect("clean replay");
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(book.order_count() > 0);
    assert!(elapsed < 30.0, "replay took {elapsed:.1}s");
}

/// Random marketable flow: crossing adds and replaces that the generator
/// never emits, exercising multi-level matching against the oracle.
#[test]
fn crossing_flow_matches_oracle() {
    let mut rng = Rng::new(77);
    let mut book = OrderBook::new();
    let mut oracle = ReferenceBook::new();
    let mut next_id = 1u64;
    let mut live: Vec<u64> = Vec::new();
    let mut ts = 1_000u64;

    for i in 0..4_000 {
        ts += 1 + rng.below(1_000);
        let roll = rng.next_f64();
        let msg = if roll < 0.72 || live.is_empty() {
            // adds around 10_000 ticks, frequently crossing
            let side = if rng.next_f64() < 0.5 {
                Side::Bid
            } else {
                Side::Ask
            };
            let price = 10_000 + rng.below(21) as i64 - 10;
            let id = next_id;
            next_id += 1;
            OrderFlowMessage {
                timestamp_ns: ts,
                kind: MsgKind::Add,
                order_id: id,
                side,
                size: 1 + rng.below(300) as u32,
                price,
                remaining_size: None,
                new_order_id: None,
                exec_or_new_price: None,
                symbol_id: 0,
            }
        } else {
            let id = live[rng.below(live.len() as u64) as usize];
            let Some(resting) = book.get(id) else {
                continue;
            };
            match rng.below(3) {
                0 => OrderFlowMessage {
                    timestamp_ns: ts,
                    kind: MsgKind::Execute,
                    order_id: id,
                    side: resting.side,
                    size: 1 + rng.below(resting.size as u64) as u32,
                    price: resting.price,
                    remaining_size: None,
                    new_order_id: None,
                    exec_or_new_price: None,
                    symbol_id: 0,
                },
                1 => {
                    let canceled = 1 + rng.below(resting.size as u64) as u32;
                    OrderFlowMessage {
                        timestamp_ns: ts,
                        kind: MsgKind::Cancel,
                        order_id: id,
                        side: resting.side,
                        size: canceled,
                        price: resting.price,
                        remaining_size: Some(resting.size - canceled),
                        new_order_id: None,
                        exec_or_new_price: None,
                        symbol_id: 0,
                    }
                }
                _ => {
                    let new_id = next_id;
                    next_id += 1;
                    // replacement price may cross the market
                    let new_price = 10_000 + rng.below(21) as i64 - 10;
                    OrderFlowMessage {
                        timestamp_ns: ts,
                        kind: MsgKind::Replace,
                        order_id: id,
                        side: resting.side,
                        size: 1 + rng.below(400) as u32,
                        price: resting.price,
                        remaining_size: Some(resting.size),
                        new_order_id: Some(new_id),
                        exec_or_new_price: Some(new_price),
                        symbol_id: 0,
                    }
                }
            }
        };

        let events = book.apply(&msg).unwrap();
        let ref_trades = oracle.apply(&msg).unwrap();
        let trades: Vec<(u64, i64, u32)> = events
            .iter()
            .filter_map(|e| match e {
                BookEvent::Trade {
                    maker_id,
                    price,
                    size,
                    ..
                } => Some((*maker_id, *price, *size)),
                _ => None,
            })
            .collect();
        assert_eq!(
            trades,
            ref_trades
                .iter()
                .map(|t| (t.maker_id, t.price, t.size))
                .collect::<Vec<_>>(),
            "trades diverged at step {i}"
        );
        assert_books_equal(&book, &oracle, i);

        // refresh the live-id pool
        live.clear();
        for side in [Side::Bid, Side::Ask] {
            for (_, queue) in book.iter_side(side) {
                live.extend(queue.iter().map(|o| o.order_id));
            }
        }
    }
}
