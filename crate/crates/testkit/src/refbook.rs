//! Brute-force list-scan order book: one flat vector of live orders, arrival
//! counter for priority, O(n) scans everywhere. The canonical-state view lets
//! tests compare every level and every queue position against a real book.

use oflow_core::feed::{MsgKind, OrderFlowMessage, Side};
use oflow_core::lob::OrderBook;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CanonOrder {
    pub order_id: u64,
    pub size: u32,
    pub entry_time_ns: u64,
}

pub type CanonLevel = (Side, i64, Vec<CanonOrder>);

#[derive(Clone, Copy, Debug)]
struct LiveOrder {
    order_id: u64,
    side: Side,
    price: i64,
    size: u32,
    entry_time_ns: u64,
    seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefTrade {
    pub maker_id: u64,
    pub price: i64,
    pub size: u32,
}

#[derive(Clone, Debug, Default)]
pub struct ReferenceBook {
    orders: Vec<LiveOrder>,
    next_seq: u64,
}

impl ReferenceBook {
    pub fn new() -> Self {
        Self::default()
    }

    fn find(&self, order_id: u64) -> Option<usize> {
        self.orders.iter().position(|o| o.order_id == order_id)
    }

    /// Index of the highest-priority opposite order a taker at `limit` crosses:
    /// best price first, then earliest arrival.
    fn best_crossing(&self, taker: Side, limit: i64) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, o) in self.orders.iter().enumerate() {
            if o.side == taker {
                continue;
            }
            let crosses = match taker {
                Side::Bid => limit >= o.price,
                Side::Ask => limit <= o.price,
            };
            if !crosses {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let cur = &self.orders[b];
                    let better_price = match taker {
                        Side::Bid => o.price < cur.price,
                        Side::Ask => o.price > cur.price,
                    };
                    if better_price || (o.price == cur.price && o.seq < cur.seq) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best
    }

    fn enqueue(&mut self, order_id: u64, side: Side, price: i64, size: u32, ts: u64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.orders.push(LiveOrder {
            order_id,
            side,
            price,
            size,
            entry_time_ns: ts,
            seq,
        });
    }

    fn match_and_rest(
        &mut self,
        order_id: u64,
        side: Side,
        price: i64,
        mut qty: u32,
        ts: u64,
        trades: &mut Vec<RefTrade>,
    ) {
        while qty > 0 {
            let Some(i) = self.best_crossing(side, price) else {
                break;
            };
            let fill = qty.min(self.orders[i].size);
            trades.push(RefTrade {
                maker_id: self.orders[i].order_id,
                price: self.orders[i].price,
                size: fill,
            });
            self.orders[i].size -= fill;
            qty -= fill;
            if self.orders[i].size == 0 {
                self.orders.remove(i);
            }
        }
        if qty > 0 {
            self.enqueue(order_id, side, price, qty, ts);
        }
    }

    pub fn apply(&mut self, msg: &OrderFlowMessage) -> Result<Vec<RefTrade>, String> {
        let mut trades = Vec::new();
        match msg.kind {
            MsgKind::Add => {
                self.match_and_rest(
                    msg.order_id,
                    msg.side,
                    msg.price,
                    msg.size,
                    msg.timestamp_ns,
                    &mut trades,
                );
            }
            MsgKind::Execute | MsgKind::ExecuteAtPrice => {
                let i = self
                    .find(msg.order_id)
                    .ok_or_else(|| format!("no order {}", msg.order_id))?;
                if msg.size > self.orders[i].size {
                    return Err(format!(
                        "fill {} > resting {}",
                        msg.size, self.orders[i].size
                    ));
                }
                let price = match msg.kind {
                    MsgKind::ExecuteAtPrice => {
                        msg.exec_or_new_price.unwrap_or(self.orders[i].price)
                    }
                    _ => self.orders[i].price,
                };
                trades.push(RefTrade {
                    maker_id: msg.order_id,
                    price,
                    size: msg.size,
                });
                self.orders[i].size -= msg.size;
                if self.orders[i].size == 0 {
                    self.orders.remove(i);
                }
            }
            MsgKind::Cancel => {
                let i = self
                    .find(msg.order_id)
                    .ok_or_else(|| format!("no order {}", msg.order_id))?;
                if msg.size > self.orders[i].size {
                    return Err(format!(
                        "cancel {} > resting {}",
                        msg.size, self.orders[i].size
                    ));
                }
                self.orders[i].size -= msg.size;
                if self.orders[i].size == 0 {
                    self.orders.remove(i);
                }
            }
            MsgKind::Replace => {
                let i = self
                    .find(msg.order_id)
                    .ok_or_else(|| format!("no order {}", msg.order_id))?;
                let side = self.orders[i].side;
                self.orders.remove(i);
                let new_id = msg.new_order_id.ok_or("replace without new id")?;
                let new_price = msg.exec_or_new_price.ok_or("replace without new price")?;
                self.match_and_rest(
                    new_id,
                    side,
                    new_price,
                    msg.size,
                    msg.timestamp_ns,
                    &mut trades,
                );
            }
        }
        Ok(trades)
    }

    /// Full canonical state: levels sorted by (side, price), queues in
    /// arrival order.
    pub fn canonical(&self) -> Vec<CanonLevel> {
        let mut out: Vec<CanonLevel> = Vec::new();
        for side in [Side::Bid, Side::Ask] {
            let mut prices: Vec<i64> = self
                .orders
                .iter()
                .filter(|o| o.side == side)
                .map(|o| o.price)
                .collect();
            prices.sort_unstable();
            prices.dedup();
            for price in prices {
                let mut queue: Vec<&LiveOrder> = self
                    .orders
                    .iter()
                    .filter(|o| o.side == side && o.price == price)
                    .collect();
                queue.sort_by_key(|o| o.seq);
                out.push((
                    side,
                    price,
                    queue
                        .into_iter()
                        .map(|o| CanonOrder {
                            order_id: o.order_id,
                            size: o.size,
                            entry_time_ns: o.entry_time_ns,
                        })
                        .collect(),
                ));
            }
        }
        out
    }
}

/// Canonicalizes a production book into the same shape as
/// [`ReferenceBook::canonical`].
pub fn canonical_book(book: &OrderBook) -> Vec<CanonLevel> {
    let mut out = Vec::new();
    for side in [Side::Bid, Side::Ask] {
        for (price, queue) in book.iter_side(side) {
            out.push((
                side,
                price,
                queue
                    .iter()
                    .map(|o| CanonOrder {
                        order_id: o.order_id,
                        size: o.size,
                        entry_time_ns: o.entry_time_ns,
                    })
                    .collect(),
            ));
        }
    }
    out
}
