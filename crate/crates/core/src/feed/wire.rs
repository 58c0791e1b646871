//! Binary wire codec: a versioned container header (magic, version, symbol
//! table) followed by big-endian length-prefixed records in the ITCH 5.0
//! layout for the supported kinds.
//!
//! Supported record kinds: `A` add, `F` add with attribution, `E` order
//! executed, `C` order executed with price, `X` order cancel (partial),
//! `D` order delete (full), `U` order replace. `P` (hidden execution) records
//! are parsed and dropped; unknown kinds are skipped and counted.
//!
//! Referential records (`E`, `C`, `X`, `D`, `U`) carry no side or price on
//! the wire, so the parser maintains a live-order map reconstructed from the
//! stream itself. Records referencing an order id never added in the stream
//! are skipped and counted in the report.

use std::collections::HashMap;

use super::{MsgKind, OrderFlowMessage, Side};

pub const FEED_MAGIC: [u8; 8] = *b"OFEEDBIN";
pub const FEED_VERSION: u16 = 1;

/// Wire prices are 4-decimal fixed point; internal prices are ticks (cents).
const WIRE_PRICE_PER_TICK: u64 = 100;
const MAX_ENCODABLE_TICKS: i64 = (u32::MAX as i64) / WIRE_PRICE_PER_TICK as i64;
const MAX_TIMESTAMP_NS: u64 = (1 << 48) - 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseError {
    BadMagic,
    UnsupportedVersion(u16),
    /// Record or header cut off; offset is the byte position of the record.
    Truncated {
        offset: usize,
    },
    Malformed {
        offset: usize,
        what: &'static str,
    },
    /// Wire price with sub-tick decimals (last two digits nonzero).
    PriceNotTickAligned {
        offset: usize,
    },
    /// Execution or cancel for more shares than the order has resting.
    SizeUnderflow {
        offset: usize,
        order_id: u64,
    },
    /// Timestamps must be non-decreasing within a feed.
    TimeRegression {
        offset: usize,
    },
}

impl core::fmt::Display for ParseError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::BadMagic => write!(f, "not a feed file (bad magic)"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported feed version {v}"),
            Self::Truncated { offset } => write!(f, "truncated record at byte {offset}"),
            Self::Malformed { offset, what } => {
                write!(f, "malformed record at byte {offset}: {what}")
            }
            Self::PriceNotTickAligned { offset } => {
                write!(f, "price not tick aligned at byte {offset}")
            }
            Self::SizeUnderflow { offset, order_id } => {
                write!(f, "size underflow for order {order_id} at byte {offset}")
            }
            Self::TimeRegression { offset } => write!(f, "timestamp regression at byte {offset}"),
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub records: u64,
    /// Records of a kind outside the supported subset, skipped.
    pub unknown_kinds: u64,
    /// Hidden executions (`P` records), parsed and dropped.
    pub hidden_executions: u64,
    /// Referential records whose order id was not live in this stream, skipped.
    pub unresolved_refs: u64,
}

#[derive(Clone, Debug)]
pub struct ParsedFeed {
    pub messages: Vec<OrderFlowMessage>,
    pub symbols: Vec<(u16, String)>,
    pub report: ParseReport,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeedWriteError {
    PriceOutOfRange { index: usize, ticks: i64 },
    TimestampOutOfRange { index: usize },
    TimeRegression { index: usize },
    UnknownSymbol { index: usize, symbol_id: u16 },
    Invariant { index: usize, reason: String },
}

impl core::fmt::Display for FeedWriteError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::PriceOutOfRange { index, ticks } => {
                write!(
                    f,
                    "message {index}: price {ticks} ticks not encodable as fixed point"
                )
            }
            Self::TimestampOutOfRange { index } => {
                write!(f, "message {index}: timestamp exceeds 48-bit wire range")
            }
            Self::TimeRegression { index } => write!(f, "message {index}: timestamp regression"),
            Self::UnknownSymbol { index, symbol_id } => {
                write!(f, "message {index}: symbol {symbol_id} missing from table")
            }
            Self::Invariant { index, reason } => write!(f, "message {index}: {reason}"),
        }
    }
}

impl std::error::Error for FeedWriteError {}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        if self.pos + n > self.buf.len() {
            return Err(ParseError::Truncated { offset: self.pos });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, ParseError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ParseError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, ParseError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, ParseError> {
        Ok(self.take(1)?[0])
    }

    fn ts48(&mut self) -> Result<u64, ParseError> {
        let b = self.take(6)?;
        Ok(u64::from_be_bytes([
            0, 0, b[0], b[1], b[2], b[3], b[4], b[5],
        ]))
    }
}

#[derive(Clone, Copy)]
struct LiveOrder {
    side: Side,
    price: i64,
    size: u32,
}

fn wire_price_to_ticks(wire: u32, offset: usize) -> Result<i64, ParseError> {
    if wire as u64 % WIRE_PRICE_PER_TICK != 0 {
        return Err(ParseError::PriceNotTickAligned { offset });
    }
    Ok((wire as u64 / WIRE_PRICE_PER_TICK) as i64)
}

/// Parses a container-wrapped record stream into canonical messages.
pub fn parse_feed(bytes: &[u8]) -> Result<ParsedFeed, ParseError> {
    if bytes.is_empty() {
        return Ok(ParsedFeed {
            messages: Vec::new(),
            symbols: Vec::new(),
            report: ParseReport::default(),
        });
    }
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != FEED_MAGIC {
        return Err(ParseError::BadMagic);
    }
    let version = r.u16()?;
    if version != FEED_VERSION {
        return Err(ParseError::UnsupportedVersion(version));
    }
    let sym_count = r.u16()?;
    let mut symbols = Vec::with_capacity(sym_count as usize);
    for _ in 0..sym_count {
        let id = r.u16()?;
        let name = r.take(8)?;
        let name = String::from_utf8_lossy(name).trim_end().to_string();
        symbols.push((id, name));
    }

    let mut live: HashMap<u64, LiveOrder> = HashMap::new();
    let mut messages = Vec::new();
    let mut report = ParseReport::default();
    let mut last_ts = 0u64;

    while r.pos < bytes.len() {
        let rec_offset = r.pos;
        let length = r.u16()? as usize;
        if length == 0 {
            return Err(ParseError::Malformed {
                offset: rec_offset,
                what: "zero-length record",
            });
        }
        let body_end = r.pos + length;
        if body_end > bytes.len() {
            return Err(ParseError::Truncated { offset: rec_offset });
        }
        report.records += 1;
        let kind = r.u8()?;
        match kind {
            b'A' | b'F' | b'E' | b'C' | b'X' | b'D' | b'U' | b'P' => {}
            _ => {
                report.unknown_kinds += 1;
                r.pos = body_end;
                continue;
            }
        }
        let symbol_id = r.u16()?;
        let _tracking = r.u16()?;
        let ts = r.ts48()?;

        let mut emit = |msg: OrderFlowMessage| {
            messages.push(msg);
        };

        match kind {
            b'A' | b'F' => {
                let order_id = r.u64()?;
                let side = match r.u8()? {
                    b'B' => Side::Bid,
                    b'S' => Side::Ask,
                    _ => {
                        return Err(ParseError::Malformed {
                            offset: rec_offset,
                            what: "bad side",
                        })
                    }
                };
                let shares = r.u32()?;
                let _stock = r.take(8)?;
                let price = wire_price_to_ticks(r.u32()?, rec_offset)?;
                if kind == b'F' {
                    let _mpid = r.take(4)?;
                }
                if shares == 0 {
                    return Err(ParseError::Malformed {
                        offset: rec_offset,
                        what: "zero shares",
                    });
                }
                live.insert(
                    order_id,
                    LiveOrder {
                        side,
                        price,
                        size: shares,
                    },
                );
                emit(OrderFlowMessage {
                    timestamp_ns: ts,
                    kind: MsgKind::Add,
                    order_id,
                    side,
                    size: shares,
                    price,
                    remaining_size: None,
                    new_order_id: None,
                    exec_or_new_price: None,
                    symbol_id,
                });
            }
            b'E' | b'C' => {
                let order_id = r.u64()?;
                let executed = r.u32()?;
                let _match_no = r.u64()?;
                let exec_price = if kind == b'C' {
                    let _printable = r.u8()?;
                    Some(wire_price_to_ticks(r.u32()?, rec_offset)?)
                } else {
                    None
                };
                let Some(order) = live.get_mut(&order_id) else {
                    report.unresolved_refs += 1;
                    r.pos = body_end;
                    continue;
                };
                if executed > order.size || executed == 0 {
                    return Err(ParseError::SizeUnderflow {
                        offset: rec_offset,
                        order_id,
                    });
                }
                let (side, price) = (order.side, order.price);
                order.size -= executed;
                if order.size == 0 {
                    live.remove(&order_id);
                }
                emit(OrderFlowMessage {
                    timestamp_ns: ts,
                    kind: if kind == b'E' {
                        MsgKind::Execute
                    } else {
                        MsgKind::ExecuteAtPrice
                    },
                    order_id,
                    side,
                    size: executed,
                    price,
                    remaining_size: None,
                    new_order_id: None,
                    exec_or_new_price: exec_price,
                    symbol_id,
                });
            }
            b'X' | b'D' => {
                let order_id = r.u64()?;
                let canceled_wire = if kind == b'X' { Some(r.u32()?) } else { None };
                let Some(order) = live.get_mut(&order_id) else {
                    report.unresolved_refs += 1;
                    r.pos = body_end;
                    continue;
                };
                // Order Delete removes the full resting size; Order Cancel
                // removes the stated partial amount.
                let canceled = canceled_wire.unwrap_or(order.size);
                if canceled > order.size || canceled == 0 {
                    return Err(ParseError::SizeUnderflow {
                        offset: rec_offset,
                        order_id,
                    });
                }
                let (side, price) = (order.side, order.price);
                order.size -= canceled;
                let remaining = order.size;
                if remaining == 0 {
                    live.remove(&order_id);
                }
                emit(OrderFlowMessage {
                    timestamp_ns: ts,
                    kind: MsgKind::Cancel,
                    order_id,
                    side,
                    size: canceled,
                    price,
                    remaining_size: Some(remaining),
                    new_order_id: None,
                    exec_or_new_price: None,
                    symbol_id,
                });
            }
            b'U' => {
                let old_id = r.u64()?;
                let new_id = r.u64()?;
                let shares = r.u32()?;
                let new_price = wire_price_to_ticks(r.u32()?, rec_offset)?;
                if shares == 0 {
                    return Err(ParseError::Malformed {
                        offset: rec_offset,
                        what: "zero shares",
                    });
                }
                let Some(old) = live.remove(&old_id) else {
                    report.unresolved_refs += 1;
                    r.pos = body_end;
                    continue;
                };
                live.insert(
                    new_id,
                    LiveOrder {
                        side: old.side,
                        price: new_price,
                        size: shares,
                    },
                );
                emit(OrderFlowMessage {
                    timestamp_ns: ts,
                    kind: MsgKind::Replace,
                    order_id: old_id,
                    side: old.side,
                    size: shares,
                    price: old.price,
                    remaining_size: Some(old.size),
                    new_order_id: Some(new_id),
                    exec_or_new_price: Some(new_price),
                    symbol_id,
                });
            }
            b'P' => {
                report.hidden_executions += 1;
                r.pos = body_end;
                continue;
            }
            _ => unreachable!(),
        }
        if r.pos != body_end {
            return Err(ParseError::Malformed {
                offset: rec_offset,
                what: "record length mismatch",
            });
        }
        let emitted_ts = messages.last().map(|m| m.timestamp_ns).unwrap_or(last_ts);
        if emitted_ts < last_ts {
            return Err(ParseError::TimeRegression { offset: rec_offset });
        }
        last_ts = emitted_ts;
    }

    Ok(ParsedFeed {
        messages,
        symbols,
        report,
    })
}

fn symbol_name(symbols: &[(u16, String)], id: u16) -> Option<[u8; 8]> {
    let name = &symbols.iter().find(|(sid, _)| *sid == id)?.1;
    let mut out = [b' '; 8];
    for (i, b) in name.bytes().take(8).enumerate() {
        out[i] = b;
    }
    Some(out)
}

fn push_ticks(out: &mut Vec<u8>, ticks: i64, index: usize) -> Result<(), FeedWriteError> {
    if ticks <= 0 || ticks > MAX_ENCODABLE_TICKS {
        return Err(FeedWriteError::PriceOutOfRange { index, ticks });
    }
    out.extend_from_slice(&((ticks as u64 * WIRE_PRICE_PER_TICK) as u32).to_be_bytes());
    Ok(())
}

/// Serializes messages with an explicit symbol table.
pub fn write_feed_with_symbols(
    msgs: &[OrderFlowMessage],
    symbols: &[(u16, String)],
) -> Result<Vec<u8>, FeedWriteError> {
    let mut out = Vec::with_capacity(16 + symbols.len() * 10 + msgs.len() * 38);
    out.extend_from_slice(&FEED_MAGIC);
    out.extend_from_slice(&FEED_VERSION.to_be_bytes());
    out.extend_from_slice(&(symbols.len() as u16).to_be_bytes());
    for (id, name) in symbols {
        out.extend_from_slice(&id.to_be_bytes());
        let mut padded = [b' '; 8];
        for (i, b) in name.bytes().take(8).enumerate() {
            padded[i] = b;
        }
        out.extend_from_slice(&padded);
    }

    let mut match_no = 0u64;
    let mut last_ts = 0u64;
    for (index, msg) in msgs.iter().enumerate() {
        msg.validate().map_err(|e| FeedWriteError::Invariant {
            index,
            reason: e.to_string(),
        })?;
        if msg.timestamp_ns > MAX_TIMESTAMP_NS {
            return Err(FeedWriteError::TimestampOutOfRange { index });
        }
        if msg.timestamp_ns < last_ts {
            return Err(FeedWriteError::TimeRegression { index });
        }
        last_ts = msg.timestamp_ns;
        let stock = symbol_name(symbols, msg.symbol_id).ok_or(FeedWriteError::UnknownSymbol {
            index,
            symbol_id: msg.symbol_id,
        })?;

        let body_start = out.len();
        out.extend_from_slice(&[0, 0]); // length patched below
        let kind = match msg.kind {
            MsgKind::Add => b'A',
            MsgKind::Execute => b'E',
            MsgKind::ExecuteAtPrice => b'C',
            MsgKind::Cancel => {
                if msg.remaining_size == Some(0) {
                    b'D'
                } else {
                    b'X'
                }
            }
            MsgKind::Replace => b'U',
        };
        out.push(kind);
        out.extend_from_slice(&msg.symbol_id.to_be_bytes());
        out.extend_from_slice(&0u16.to_be_bytes()); // tracking number
        out.extend_from_slice(&msg.timestamp_ns.to_be_bytes()[2..8]);
        match kind {
            b'A' => {
                out.extend_from_slice(&msg.order_id.to_be_bytes());
                out.push(if msg.side == Side::Bid { b'B' } else { b'S' });
                out.extend_from_slice(&msg.size.to_be_bytes());
                out.extend_from_slice(&stock);
                push_ticks(&mut out, msg.price, index)?;
            }
            b'E' | b'C' => {
                out.extend_from_slice(&msg.order_id.to_be_bytes());
                out.extend_from_slice(&msg.size.to_be_bytes());
                match_no += 1;
                out.extend_from_slice(&match_no.to_be_bytes());
                if kind == b'C' {
                    out.push(b'Y');
                    push_ticks(&mut out, msg.exec_or_new_price.unwrap(), index)?;
                }
            }
            b'X' => {
                out.extend_from_slice(&msg.order_id.to_be_bytes());
                out.extend_from_slice(&msg.size.to_be_bytes());
            }
            b'D' => {
                out.extend_from_slice(&msg.order_id.to_be_bytes());
            }
            b'U' => {
                out.extend_from_slice(&msg.order_id.to_be_bytes());
                out.extend_from_slice(&msg.new_order_id.unwrap().to_be_bytes());
                out.extend_from_slice(&msg.size.to_be_bytes());
                push_ticks(&mut out, msg.exec_or_new_price.unwrap(), index)?;
            }
            _ => unreachable!(),
        }
        let length = (out.len() - body_start - 2) as u16;
        out[body_start..body_start + 2].copy_from_slice(&length.to_be_bytes());
    }
    Ok(out)
}

/// Serializes messages, deriving the symbol table from the symbol ids present.
pub fn write_feed(msgs: &[OrderFlowMessage]) -> Result<Vec<u8>, FeedWriteError> {
    let mut ids: Vec<u16> = msgs.iter().map(|m| m.symbol_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let symbols: Vec<(u16, String)> = ids.into_iter().map(|id| (id, format!("SYM{id}"))).collect();
    write_feed_with_symbols(msgs, &symbols)
}
