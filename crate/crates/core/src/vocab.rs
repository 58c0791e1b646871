//! Partitioned token vocabulary and the bidirectional mapping between
//! stationary messages and fixed 24-slot token vectors.
//!
//! Id space (contiguous, non-overlapping, stable):
//!
//! ```text
//! [0..3)          SPECIAL   mask=0, nan=1, sink=2
//! [3..8)          TYPE      add, execute, execute-at-price, cancel, replace
//! [8..10)         SIDE      bid, ask
//! [10..12)        SIGN      plus, minus
//! [12..1012)      PRICE_MAG 0..=999 (shared by both price magnitudes)
//! [1012..2012)    TIME_COMP 0..=999 (shared by all time components)
//! [2012..12012)   SIZE      0..=9999 (shared by all size fields)
//! [12012..12012+S) TICKER   symbol ids
//! ```
//!
//! Base size is exactly 3+5+2+2+1000+1000+10000 = 12,012; the total is
//! 12,012 + S. Fields with the same underlying unit share one range.

use serde::{Deserialize, Serialize};

use crate::feed::{MsgKind, Side};
use crate::preprocess::PreMessage;
use crate::rng::fnv1a64;

pub const MASK_ID: u16 = 0;
pub const NAN_ID: u16 = 1;
pub const SINK_ID: u16 = 2;

pub const TYPE_BASE: u16 = 3;
pub const SIDE_BASE: u16 = 8;
pub const SIGN_BASE: u16 = 10;
pub const PRICE_MAG_BASE: u16 = 12;
pub const TIME_COMP_BASE: u16 = 1_012;
pub const SIZE_BASE: u16 = 2_012;
pub const TICKER_BASE: u16 = 12_012;

pub const BASE_VOCAB_SIZE: u32 = 12_012;
pub const MSG_TOKENS: usize = 24;
/// Bumped whenever the slot layout or id assignment changes.
pub const LAYOUT_VERSION: u16 = 1;

/// Fixed 24-slot token vector for one message.
///
/// Slot layout: 0 ticker, 1 type, 2 side, 3 price sign, 4 price magnitude,
/// 5 size, 6 size_aux, 7 dt seconds, 8-10 dt nanoseconds (base-1000 digits),
/// 11-12 time seconds (base-1000), 13-15 time nanoseconds, 16 ref price sign,
/// 17 ref price magnitude, 18 ref size, 19-20 ref time seconds,
/// 21-23 ref time nanoseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedMessage(pub [u16; MSG_TOKENS]);

#[derive(Clone, Debug, PartialEq)]
pub enum VocabError {
    TickerCount(u16),
    FieldOutOfRange { slot: usize, value: u64 },
    IllegalToken { slot: usize, id: u16 },
}

impl core::fmt::Display for VocabError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::TickerCount(s) => write!(f, "ticker count {s} outside 1..=1000"),
            Self::FieldOutOfRange { slot, value } => {
                write!(f, "value {value} does not fit slot {slot}")
            }
            Self::IllegalToken { slot, id } => write!(f, "token {id} illegal in slot {slot}"),
        }
    }
}

impl std::error::Error for VocabError {}

/// The set of ids legal in one slot: a contiguous range plus, where the slot
/// is nullable, the NaN id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotMask {
    pub start: u16,
    pub len: u16,
    pub nan_allowed: bool,
}

impl SlotMask {
    pub fn contains(&self, id: u16) -> bool {
        (id >= self.start && id < self.start + self.len) || (self.nan_allowed && id == NAN_ID)
    }

    pub fn card(&self) -> usize {
        self.len as usize + self.nan_allowed as usize
    }

    /// Legal ids, NaN first when allowed, then the range in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.nan_allowed
            .then_some(NAN_ID)
            .into_iter()
            .chain(self.start..self.start + self.len)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ticker_count: u16,
    masks: [SlotMask; MSG_TOKENS],
}

/// Builds the vocabulary for `S` ticker symbols; total size is 12,012 + S.
pub fn build_vocab(ticker_count: u16) -> Result<Vocabulary, VocabError> {
    Vocabulary::new(ticker_count)
}

impl Vocabulary {
    pub fn new(ticker_count: u16) -> Result<Self, VocabError> {
        if ticker_count == 0 || ticker_count > 1_000 {
            return Err(VocabError::TickerCount(ticker_count));
        }
        let ticker = SlotMask {
            start: TICKER_BASE,
            len: ticker_count,
            nan_allowed: false,
        };
        let typ = SlotMask {
            start: TYPE_BASE,
            len: 5,
            nan_allowed: false,
        };
        let side = SlotMask {
            start: SIDE_BASE,
            len: 2,
            nan_allowed: false,
        };
        let sign = |nan| SlotMask {
            start: SIGN_BASE,
            len: 2,
            nan_allowed: nan,
        };
        let mag = |nan| SlotMask {
            start: PRICE_MAG_BASE,
            len: 1_000,
            nan_allowed: nan,
        };
        let time = |nan| SlotMask {
            start: TIME_COMP_BASE,
            len: 1_000,
            nan_allowed: nan,
        };
        let size = |nan| SlotMask {
            start: SIZE_BASE,
            len: 10_000,
            nan_allowed: nan,
        };
        let masks = [
            ticker,     // 0
            typ,        // 1
            side,       // 2
            sign(true), // 3
            mag(true),  // 4
            size(true), // 5 size (absent for replace)
            size(true), // 6 size_aux (absent for add/execute)
            time(false),
            time(false),
            time(false),
            time(false), // 7..=10 dt
            time(false),
            time(false), // 11..=12 time seconds
            time(false),
            time(false),
            time(false), // 13..=15 time nanoseconds
            sign(true),
            mag(true),  // 16..=17 ref price
            size(true), // 18 ref size
            time(true),
            time(true), // 19..=20 ref time seconds
            time(true),
            time(true),
            time(true), // 21..=23 ref time nanoseconds
        ];
        Ok(Self {
            ticker_count,
            masks,
        })
    }

    pub fn ticker_count(&self) -> u16 {
        self.ticker_count
    }

    pub fn size(&self) -> u32 {
        BASE_VOCAB_SIZE + self.ticker_count as u32
    }

    /// Stable fingerprint of (layout version, ticker count, range bases);
    /// checkpoints carry it so incompatible tokenizers are refused.
    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&LAYOUT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&self.ticker_count.to_le_bytes());
        for base in [
            TYPE_BASE,
            SIDE_BASE,
            SIGN_BASE,
            PRICE_MAG_BASE,
            TIME_COMP_BASE,
            SIZE_BASE,
            TICKER_BASE,
        ] {
            bytes.extend_from_slice(&base.to_le_bytes());
        }
        fnv1a64(&bytes)
    }

    /// Precomputed legality mask for a slot. O(1).
    pub fn slot_mask(&self, slot: usize) -> &SlotMask {
        &self.masks[slot]
    }

    pub fn encode(&self, pre: &PreMessage) -> Result<TokenizedMessage, VocabError> {
        let mut t = [NAN_ID; MSG_TOKENS];

        if pre.symbol_id >= self.ticker_count {
            return Err(VocabError::FieldOutOfRange {
                slot: 0,
                value: pre.symbol_id as u64,
            });
        }
        t[0] = TICKER_BASE + pre.symbol_id;
        t[1] = TYPE_BASE + pre.kind.index() as u16;
        t[2] = SIDE_BASE + pre.side.index() as u16;

        let put_signed =
            |t: &mut [u16; MSG_TOKENS], s_slot: usize, v: Option<i32>| -> Result<(), VocabError> {
                if let Some(v) = v {
                    let mag = v.unsigned_abs();
                    if mag > 999 {
                        return Err(VocabError::FieldOutOfRange {
                            slot: s_slot + 1,
                            value: mag as u64,
                        });
                    }
                    t[s_slot] = SIGN_BASE + (v < 0) as u16;
                    t[s_slot + 1] = PRICE_MAG_BASE + mag as u16;
                }
                Ok(())
            };
        let put_size =
            |t: &mut [u16; MSG_TOKENS], slot: usize, v: Option<u32>| -> Result<(), VocabError> {
                if let Some(v) = v {
                    if v > 9_999 {
                        return Err(VocabError::FieldOutOfRange {
                            slot,
                            value: v as u64,
                        });
                    }
                    t[slot] = SIZE_BASE + v as u16;
                }
                Ok(())
            };
        let time_tok = |slot: usize, v: u32| -> Result<u16, VocabError> {
            if v > 999 {
                return Err(VocabError::FieldOutOfRange {
                    slot,
                    value: v as u64,
                });
            }
            Ok(TIME_COMP_BASE + v as u16)
        };

        put_signed(&mut t, 3, pre.price_rel)?;
        put_size(&mut t, 5, pre.size)?;
        put_size(&mut t, 6, pre.size_aux)?;

        t[7] = time_tok(7, pre.dt_s)?;
        for (i, d) in base1000_digits::<3>(pre.dt_ns).into_iter().enumerate() {
            t[8 + i] = time_tok(8 + i, d)?;
        }
        for (i, d) in base1000_digits::<2>(pre.time_s).into_iter().enumerate() {
            t[11 + i] = time_tok(11 + i, d)?;
        }
        for (i, d) in base1000_digits::<3>(pre.time_ns).into_iter().enumerate() {
            t[13 + i] = time_tok(13 + i, d)?;
        }

        put_signed(&mut t, 16, pre.ref_price_rel)?;
        put_size(&mut t, 18, pre.ref_size)?;
        if let Some(s) = pre.ref_time_s {
            for (i, d) in base1000_digits::<2>(s).into_iter().enumerate() {
                t[19 + i] = time_tok(19 + i, d)?;
            }
        }
        if let Some(ns) = pre.ref_time_ns {
            for (i, d) in base1000_digits::<3>(ns).into_iter().enumerate() {
                t[21 + i] = time_tok(21 + i, d)?;
            }
        }

        // NaN is only representable where the slot is nullable.
        for (slot, &id) in t.iter().enumerate() {
            if !self.masks[slot].contains(id) {
                return Err(VocabError::FieldOutOfRange {
                    slot,
                    value: id as u64,
                });
            }
        }
        Ok(TokenizedMessage(t))
    }

    pub fn decode(&self, tok: &TokenizedMessage) -> Result<PreMessage, VocabError> {
        for (slot, &id) in tok.0.iter().enumerate() {
            if !self.masks[slot].contains(id) {
                return Err(VocabError::IllegalToken { slot, id });
            }
        }
        let t = &tok.0;
        let sign_mag = |s_slot: usize| -> Option<i32> {
            if t[s_slot] == NAN_ID || t[s_slot + 1] == NAN_ID {
                return None;
            }
            let mag = (t[s_slot + 1] - PRICE_MAG_BASE) as i32;
            Some(if t[s_slot] == SIGN_BASE + 1 {
                -mag
            } else {
                mag
            })
        };
        let size_at = |slot: usize| -> Option<u32> {
            (t[slot] != NAN_ID).then(|| (t[slot] - SIZE_BASE) as u32)
        };
        let time_at = |slot: usize| -> Option<u32> {
            (t[slot] != NAN_ID).then(|| (t[slot] - TIME_COMP_BASE) as u32)
        };
        let join = |digits: &[Option<u32>]| -> Option<u32> {
            digits
                .iter()
                .try_fold(0u32, |acc, d| d.map(|d| acc * 1_000 + d))
        };

        Ok(PreMessage {
            symbol_id: t[0] - TICKER_BASE,
            order_id: None,
            kind: MsgKind::from_index((t[1] - TYPE_BASE) as usize).unwrap(),
            side: if t[2] == SIDE_BASE {
                Side::Bid
            } else {
                Side::Ask
            },
            price_abs: None,
            price_rel: sign_mag(3),
            size: size_at(5),
            size_aux: size_at(6),
            dt_s: time_at(7).unwrap(),
            dt_ns: join(&[time_at(8), time_at(9), time_at(10)]).unwrap(),
            time_s: join(&[time_at(11), time_at(12)]).unwrap(),
            time_ns: join(&[time_at(13), time_at(14), time_at(15)]).unwrap(),
            old_id: None,
            old_price_abs: None,
            ref_price_rel: sign_mag(16),
            ref_size: size_at(18),
            ref_time_s: join(&[time_at(19), time_at(20)]),
            ref_time_ns: join(&[time_at(21), time_at(22), time_at(23)]),
        })
    }
}

/// Big-endian base-1000 digits of `v`, most significant first.
fn base1000_digits<const N: usize>(v: u32) -> [u32; N] {
    let mut out = [0u32; N];
    let mut rest = v;
    for i in (0..N).rev() {
        out[i] = rest % 1_000;
        rest /= 1_000;
    }
    debug_assert_eq!(rest, 0, "value {v} too wide for {N} base-1000 digits");
    out
}
