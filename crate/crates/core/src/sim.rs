//! Discrete event simulator: the book is seeded from history, the last
//! `context_messages` messages form the prompt, and the loop runs
//! generate -> decode -> error-correct -> apply -> append, recording a trace.
//!
//! A discarded attempt leaves no trace in the state: the KV cache is
//! truncated back to the message boundary and the pre-attempt logits are
//! restored, so the retry sees an identical prompt while the sampling stream
//! advances (which guarantees progress).

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::feed::{MsgKind, OrderFlowMessage, Side};
use crate::lob::{BookEvent, BookSnapshot, OrderBook, RestingOrder};
use crate::model::{generate_message, Model, SampleError, SampleParams, StreamState};
use crate::preprocess::{
    build_pre_message, price_from_rel, reconstruct_timestamp, ClampStats, MidTracker, PreMessage,
    PreprocessError, Stationarizer,
};
use crate::rng::Rng;
use crate::vocab::{TokenizedMessage, Vocabulary, MSG_TOKENS, SINK_ID};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    /// Nominal session position of the trial start; the book is seeded from
    /// all history up to here. Default 10:00 ET.
    pub start_time_ns: u64,
    /// Prompt/context window in whole messages.
    pub context_messages: usize,
    /// Accepted-message budget.
    pub budget_messages: u64,
    /// Optional safety rail; budget_messages is the deterministic stop.
    pub wall_clock_limit_s: Option<f64>,
    pub sample: SampleParams,
    pub seed: u64,
    pub trial_id: u32,
    /// Abort after this many consecutive discards.
    pub max_consecutive_discards: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            start_time_ns: 36_000 * crate::feed::NS_PER_SEC,
            context_messages: 8,
            budget_messages: 1_000,
            wall_clock_limit_s: None,
            sample: SampleParams::default(),
            seed: 0,
            trial_id: 0,
            max_consecutive_discards: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DiscardReason {
    /// A required field decoded as NaN.
    MissingField {
        field: String,
    },
    /// Reference price level absent on that side of the book.
    NoSuchLevel {
        side: Side,
        price: i64,
    },
    ZeroSize,
    NonPositivePrice {
        price: i64,
    },
    ApplyFailed {
        detail: String,
    },
}

impl core::fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::MissingField { field } => write!(f, "required field {field} is NaN"),
            Self::NoSuchLevel { side, price } => write!(f, "no {side:?} level at {price}"),
            Self::ZeroSize => write!(f, "zero size"),
            Self::NonPositivePrice { price } => write!(f, "non-positive price {price}"),
            Self::ApplyFailed { detail } => write!(f, "book apply failed: {detail}"),
        }
    }
}

#[derive(Debug)]
pub enum SimError {
    VocabMismatch {
        model: usize,
        vocab: u32,
    },
    ContextTooLarge {
        context_tokens: usize,
        model_limit: usize,
    },
    InsufficientHistory {
        have: usize,
        need: usize,
    },
    MidUndefinedAfterInit,
    Preprocess(PreprocessError),
    Sample(SampleError),
    TraceSink(String),
    /// Livelock guard tripped: too many consecutive discards.
    Livelock {
        consecutive: u32,
        attempts: u64,
        last_reason: String,
    },
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::VocabMismatch { model, vocab } => {
                write!(f, "model vocab {model} != tokenizer vocab {vocab}")
            }
            Self::ContextTooLarge { context_tokens, model_limit } => {
                write!(f, "context of {context_tokens} tokens exceeds model limit {model_limit}")
            }
            Self::InsufficientHistory { have, need } => {
                write!(f, "history has {have} messages, prompt needs {need}")
            }
            Self::MidUndefinedAfterInit => write!(f, "book has no mid after history replay"),
            Self::Preprocess(e) => write!(f, "history preprocessing failed: {e}"),
            Self::Sample(e) => write!(f, "sampling failed: {e}"),
            Self::TraceSink(e) => write!(f, "trace sink failed: {e}"),
            Self::Livelock { consecutive, attempts, last_reason } => write!(
                f,
                "aborted after {consecutive} consecutive discards ({attempts} attempts, last: {last_reason})"
            ),
        }
    }
}

impl std::error::Error for SimError {}

impl From<PreprocessError> for SimError {
    fn from(e: PreprocessError) -> Self {
        Self::Preprocess(e)
    }
}

impl From<SampleError> for SimError {
    fn from(e: SampleError) -> Self {
        Self::Sample(e)
    }
}

/// One generation attempt, as recorded in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u64,
    /// "accepted", "corrected", or "discarded".
    pub outcome: String,
    pub reason: Option<String>,
    pub msg: Option<OrderFlowMessage>,
    /// Canonical slot tokens appended to the context (accepted) or the raw
    /// generated tokens (discarded).
    pub tokens: [u16; MSG_TOKENS],
    pub best_bid: Option<i64>,
    pub best_ask: Option<i64>,
    pub mid_half: Option<i64>,
    pub spread: Option<i64>,
    /// Sampler state after the attempt; a resumed run continues from here.
    pub rng_state: [u64; 4],
    pub accepted_count: u64,
}

pub trait TraceSink {
    fn record(&mut self, rec: &AttemptRecord) -> std::io::Result<()>;
}

impl TraceSink for Vec<AttemptRecord> {
    fn record(&mut self, rec: &AttemptRecord) -> std::io::Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimCounters {
    pub attempts: u64,
    pub accepted: u64,
    pub corrected: u64,
    pub discarded: u64,
}

impl SimCounters {
    pub fn discard_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.discarded as f64 / self.attempts as f64
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimSummary {
    pub counters: SimCounters,
    pub discard_rate: f64,
    pub wall_clock_s: f64,
    pub seed: u64,
    pub trial_id: u32,
    pub final_best_bid: Option<i64>,
    pub final_best_ask: Option<i64>,
}

pub enum StepOutcome {
    Accepted {
        msg: OrderFlowMessage,
        events: Vec<BookEvent>,
        corrected: bool,
    },
    /// Carries the raw generated slot tokens for the discard log.
    Discarded {
        reason: DiscardReason,
        tokens: TokenizedMessage,
    },
}

pub struct SimState<'m> {
    model: &'m Model<f32>,
    vocab: Vocabulary,
    pub config: SimConfig,
    book: OrderBook,
    mid: MidTracker,
    stream: StreamState<f32>,
    ctx: VecDeque<TokenizedMessage>,
    last_logits: Vec<f32>,
    prev_ts: u64,
    next_order_id: u64,
    rng: Rng,
    symbol_id: u16,
    pub counters: SimCounters,
    clamps: ClampStats,
    attempt: u64,
}

/// Seeds the book from all of `history`, stationarizes and tokenizes the
/// trailing `context_messages` as the prompt, and primes the KV cache with
/// sink + prompt.
pub fn init_sim<'m>(
    history: &[OrderFlowMessage],
    model: &'m Model<f32>,
    vocab: &Vocabulary,
    config: SimConfig,
) -> Result<SimState<'m>, SimError> {
    if vocab.size() as usize != model.config.vocab_size {
        return Err(SimError::VocabMismatch {
            model: model.config.vocab_size,
            vocab: vocab.size(),
        });
    }
    let context_tokens = config.context_messages * MSG_TOKENS;
    if context_tokens + 1 > model.config.max_context_tokens {
        return Err(SimError::ContextTooLarge {
            context_tokens: context_tokens + 1,
            model_limit: model.config.max_context_tokens,
        });
    }
    if history.len() < config.context_messages.max(1) {
        return Err(SimError::InsufficientHistory {
            have: history.len(),
            need: config.context_messages.max(1),
        });
    }

    let mut st = Stationarizer::new();
    let mut tail: VecDeque<PreMessage> = VecDeque::with_capacity(config.context_messages);
    for msg in history {
        let pre = st.push(msg)?;
        if tail.len() == config.context_messages {
            tail.pop_front();
        }
        tail.push_back(pre);
    }
    if st.mid_half().is_none() {
        return Err(SimError::MidUndefinedAfterInit);
    }

    let mut ctx = VecDeque::with_capacity(config.context_messages);
    let mut stream = StreamState::new(&model.config, true);
    let mut last_logits = model
        .forward_stream(&[SINK_ID as u32], &mut stream)
        .pop()
        .expect("sink produces logits");
    for pre in &tail {
        let toks = vocab.encode(pre).expect("stationarized prompt encodes");
        let ids: Vec<u32> = toks.0.iter().map(|&t| t as u32).collect();
        last_logits = model.forward_stream(&ids, &mut stream).pop().unwrap();
        ctx.push_back(toks);
    }

    let next_order_id = history
        .iter()
        .flat_map(|m| [Some(m.order_id), m.new_order_id])
        .flatten()
        .max()
        .unwrap_or(0)
        + 1;

    let mut mid = MidTracker::default();
    mid.update(st.book());
    let symbol_id = history.last().unwrap().symbol_id;
    let prev_ts = history.last().unwrap().timestamp_ns;
    let rng = Rng::derive(config.seed, config.trial_id as u64);

    Ok(SimState {
        model,
        vocab: vocab.clone(),
        config,
        book: st.book().clone(),
        mid,
        stream,
        ctx,
        last_logits,
        prev_ts,
        next_order_id,
        rng,
        symbol_id,
        counters: SimCounters::default(),
        clamps: ClampStats::default(),
        attempt: 0,
    })
}

/// Rebuilds a running simulation from `history` plus the `accepted` messages
/// of an interrupted trace, then restores the sampler and counters.
///
/// The rolling KV cache is path-dependent: entries keep the values they were
/// computed with under the window that was current when their token was fed.
/// Replaying sink + original prompt + every accepted message with the same
/// eviction schedule the live loop uses reproduces the cache bit for bit, so
/// the continuation is exactly what the uninterrupted run would have produced.
pub fn resume_sim<'m>(
    history: &[OrderFlowMessage],
    accepted: &[OrderFlowMessage],
    model: &'m Model<f32>,
    vocab: &Vocabulary,
    config: SimConfig,
    rng_state: [u64; 4],
    counters: SimCounters,
    attempt: u64,
) -> Result<SimState<'m>, SimError> {
    let mut state = init_sim(history, model, vocab, config)?;
    for msg in accepted {
        let target = if msg.kind.is_referential() {
            Some(state.book.get(msg.order_id).ok_or(SimError::Preprocess(
                PreprocessError::MissingTarget {
                    index: 0,
                    order_id: msg.order_id,
                },
            ))?)
        } else {
            None
        };
        let pre = build_pre_message(
            msg,
            state.mid.mid_half(),
            Some(state.prev_ts),
            target.as_ref(),
            &mut state.clamps,
        );
        let tokens = vocab.encode(&pre).expect("accepted message encodes");
        state
            .book
            .apply(msg)
            .map_err(|source| SimError::Preprocess(PreprocessError::Book { index: 0, source }))?;
        if matches!(msg.kind, MsgKind::Add | MsgKind::Replace) {
            state.next_order_id = state
                .next_order_id
                .max(msg.new_order_id.unwrap_or(msg.order_id) + 1);
        }
        if state.ctx.len() == state.config.context_messages {
            state.stream.evict_front(MSG_TOKENS, model.config.d_model);
            state.ctx.pop_front();
        }
        let ids: Vec<u32> = tokens.0.iter().map(|&t| t as u32).collect();
        state.last_logits = model.forward_stream(&ids, &mut state.stream).pop().unwrap();
        state.ctx.push_back(tokens);
        state.prev_ts = msg.timestamp_ns;
        state.mid.update(&state.book);
    }
    state.restore_progress(rng_state, counters, attempt);
    Ok(state)
}

/// Outcome of the reference-resolution procedure for one referential message.
pub enum Correction {
    /// An order at the level matches the reference entry time and size.
    Valid(ResolvedRef),
    /// Level exists but the reference was repaired (partial match or
    /// queue-head substitution).
    Corrected(ResolvedRef),
    Reject(DiscardReason),
}

pub struct ResolvedRef {
    pub target: RestingOrder,
}

/// The error-correction procedure for referential messages:
/// 1. resolve the reference price level (for replace/execute-at-price via
///    `old_price_abs = mid + ref_price_rel`); absent level -> reject;
/// 2. an order matching the reference entry time *and* size -> valid;
/// 3. otherwise an order matching time *or* size -> corrected to that order;
/// 4. otherwise -> corrected to the head of the level's priority queue.
pub fn error_correct(
    book: &OrderBook,
    side: Side,
    level_price: i64,
    ref_entry_ns: u64,
    ref_size: u32,
) -> Correction {
    let Some(level) = book.level(side, level_price) else {
        return Correction::Reject(DiscardReason::NoSuchLevel {
            side,
            price: level_price,
        });
    };
    if let Some(o) = level
        .iter()
        .find(|o| o.entry_time_ns == ref_entry_ns && o.size == ref_size)
    {
        return Correction::Valid(ResolvedRef { target: *o });
    }
    if let Some(o) = level
        .iter()
        .find(|o| o.entry_time_ns == ref_entry_ns || o.size == ref_size)
    {
        return Correction::Corrected(ResolvedRef { target: *o });
    }
    let head = level.front().expect("empty levels are removed");
    Correction::Corrected(ResolvedRef { target: *head })
}

impl<'m> SimState<'m> {
    pub fn book(&self) -> &OrderBook {
        &self.book
    }

    pub fn context(&self) -> &VecDeque<TokenizedMessage> {
        &self.ctx
    }

    pub fn stream_len(&self) -> usize {
        self.stream.len()
    }

    pub fn stream_evicted(&self) -> u64 {
        self.stream.evicted()
    }

    pub fn last_logits(&self) -> &[f32] {
        &self.last_logits
    }

    pub fn prev_timestamp(&self) -> u64 {
        self.prev_ts
    }

    pub fn clamp_stats(&self) -> ClampStats {
        self.clamps
    }

    pub fn rng_state(&self) -> [u64; 4] {
        self.rng.state()
    }

    /// Used by trace resume: restores the sampler and counters.
    pub fn restore_progress(&mut self, rng_state: [u64; 4], counters: SimCounters, attempt: u64) {
        self.rng = Rng::from_state(rng_state);
        self.counters = counters;
        self.attempt = attempt;
    }

    /// Recomputes next-token logits from scratch over sink + current context
    /// with a fresh cache. Before any eviction this equals the incremental
    /// state's logits exactly; after eviction the rolling cache intentionally
    /// retains keys/values computed under the older window, so only token
    /// bookkeeping remains comparable.
    pub fn recompute_logits(&self) -> Vec<f32> {
        let mut fresh = StreamState::new(&self.model.config, true);
        let mut ids = vec![SINK_ID as u32];
        for toks in &self.ctx {
            ids.extend(toks.0.iter().map(|&t| t as u32));
        }
        self.model.forward_stream(&ids, &mut fresh).pop().unwrap()
    }

    fn resolve(
        &mut self,
        pre: &PreMessage,
    ) -> Result<(OrderFlowMessage, Option<RestingOrder>, bool), DiscardReason> {
        let missing = |f: &'static str| DiscardReason::MissingField { field: f.into() };
        let ts = reconstruct_timestamp(pre, Some(self.prev_ts));
        let mid = self
            .mid
            .mid_half()
            .expect("mid checked at init, carried thereafter");
        let rel = pre.price_rel.ok_or_else(|| missing("price_rel"))? as i64;
        let own_price = price_from_rel(pre.side, rel, mid);
        if own_price <= 0 {
            return Err(DiscardReason::NonPositivePrice { price: own_price });
        }

        if pre.kind == MsgKind::Add {
            let size = pre.size.ok_or_else(|| missing("size"))?;
            if size == 0 {
                return Err(DiscardReason::ZeroSize);
            }
            let msg = OrderFlowMessage {
                timestamp_ns: ts,
                kind: MsgKind::Add,
                order_id: self.next_order_id,
                side: pre.side,
                size,
                price: own_price,
                remaining_size: None,
                new_order_id: None,
                exec_or_new_price: None,
                symbol_id: self.symbol_id,
            };
            return Ok((msg, None, false));
        }

        let ref_rel = pre.ref_price_rel.ok_or_else(|| missing("ref_price_rel"))? as i64;
        let ref_size = pre.ref_size.ok_or_else(|| missing("ref_size"))?;
        let ref_entry = pre
            .ref_time_s
            .zip(pre.ref_time_ns)
            .map(|(s, ns)| s as u64 * crate::feed::NS_PER_SEC + ns as u64)
            .ok_or_else(|| missing("ref_time"))?;
        let level_price = match pre.kind {
            MsgKind::Replace | MsgKind::ExecuteAtPrice => price_from_rel(pre.side, ref_rel, mid),
            _ => own_price,
        };
        if level_price <= 0 {
            return Err(DiscardReason::NonPositivePrice { price: level_price });
        }

        let (resolved, mut was_corrected) =
            match error_correct(&self.book, pre.side, level_price, ref_entry, ref_size) {
                Correction::Valid(r) => (r, false),
                Correction::Corrected(r) => (r, true),
                Correction::Reject(reason) => return Err(reason),
            };
        let target = resolved.target;

        let msg = match pre.kind {
            MsgKind::Execute | MsgKind::ExecuteAtPrice => {
                let want = pre.size.ok_or_else(|| missing("size"))?;
                if want == 0 {
                    return Err(DiscardReason::ZeroSize);
                }
                // Corrected fills clamp to the substituted order's resting size.
                let fill = want.min(target.size);
                if fill != want {
                    was_corrected = true;
                }
                OrderFlowMessage {
                    timestamp_ns: ts,
                    kind: pre.kind,
                    order_id: target.order_id,
                    side: target.side,
                    size: fill,
                    price: target.price,
                    remaining_size: None,
                    new_order_id: None,
                    exec_or_new_price: (pre.kind == MsgKind::ExecuteAtPrice).then_some(own_price),
                    symbol_id: self.symbol_id,
                }
            }
            MsgKind::Cancel => {
                let want = pre.size.ok_or_else(|| missing("size"))?;
                if want == 0 {
                    return Err(DiscardReason::ZeroSize);
                }
                let canceled = want.min(target.size);
                if canceled != want {
                    was_corrected = true;
                }
                OrderFlowMessage {
                    timestamp_ns: ts,
                    kind: MsgKind::Cancel,
                    order_id: target.order_id,
                    side: target.side,
                    size: canceled,
                    price: target.price,
                    remaining_size: Some(target.size - canceled),
                    new_order_id: None,
                    exec_or_new_price: None,
                    symbol_id: self.symbol_id,
                }
            }
            MsgKind::Replace => {
                let new_size = pre.size_aux.ok_or_else(|| missing("size_aux"))?;
                if new_size == 0 {
                    return Err(DiscardReason::ZeroSize);
                }
                OrderFlowMessage {
                    timestamp_ns: ts,
                    kind: MsgKind::Replace,
                    order_id: target.order_id,
                    side: target.side,
                    size: new_size,
                    price: target.price,
                    remaining_size: Some(target.size),
                    new_order_id: Some(self.next_order_id),
                    exec_or_new_price: Some(own_price),
                    symbol_id: self.symbol_id,
                }
            }
            MsgKind::Add => unreachable!(),
        };
        Ok((msg, Some(target), was_corrected))
    }

    /// One generation attempt. Accepted messages mutate the book, context,
    /// and stream; discarded attempts leave all three untouched.
    ///
    /// The context invariant `ctx <= context_messages` plus
    /// `context_messages * 24 + 1 <= max_context_tokens` guarantees the KV
    /// cache always has room for the 24 generated tokens, so a mid-attempt
    /// rollback never has to undo an eviction.
    pub fn step(&mut self) -> Result<StepOutcome, SimError> {
        debug_assert!(
            self.stream.content_len() + MSG_TOKENS <= self.model.config.max_context_tokens
        );
        let mark = self.stream.checkpoint();
        let saved_logits = std::mem::take(&mut self.last_logits);
        self.attempt += 1;
        self.counters.attempts += 1;

        let generated = generate_message(
            self.model,
            &mut self.stream,
            &saved_logits,
            &self.vocab,
            &self.config.sample,
            &mut self.rng,
        );
        let (tokens, _next_logits) = match generated {
            Ok(out) => out,
            Err(e) => {
                self.stream.truncate(mark, self.model.config.d_model);
                self.last_logits = saved_logits;
                return Err(e.into());
            }
        };
        let pre = self
            .vocab
            .decode(&tokens)
            .expect("slot masks guarantee decodable output");

        match self.resolve(&pre) {
            Ok((msg, target, corrected)) => {
                let mid_before = self.mid.mid_half();
                let prev_before = Some(self.prev_ts);
                let events = match self.book.apply(&msg) {
                    Ok(ev) => ev,
                    Err(e) => {
                        // Clamping makes this unreachable for referential
                        // kinds; treat any residual failure as a discard.
                        self.stream.truncate(mark, self.model.config.d_model);
                        self.last_logits = saved_logits;
                        self.counters.discarded += 1;
                        return Ok(StepOutcome::Discarded {
                            reason: DiscardReason::ApplyFailed {
                                detail: e.to_string(),
                            },
                            tokens,
                        });
                    }
                };
                // Only adds and replaces assign a fresh id; keeping the
                // counter in sync with ids actually used lets a resumed run
                // rederive it as max(seen ids) + 1.
                if matches!(msg.kind, MsgKind::Add | MsgKind::Replace) {
                    self.next_order_id += 1;
                }
                // Canonical context entry: re-stationarize the applied message
                // so the prompt always holds ground truth, then replace the
                // generated tokens in the KV cache with the canonical ones.
                // When the window is full the oldest message is evicted before
                // the append.
                let canon = build_pre_message(
                    &msg,
                    mid_before,
                    prev_before,
                    target.as_ref(),
                    &mut self.clamps,
                );
                let canon_tokens = self
                    .vocab
                    .encode(&canon)
                    .expect("canonical message encodes");
                self.stream.truncate(mark, self.model.config.d_model);
                if self.ctx.len() == self.config.context_messages {
                    self.stream
                        .evict_front(MSG_TOKENS, self.model.config.d_model);
                    self.ctx.pop_front();
                }
                let ids: Vec<u32> = canon_tokens.0.iter().map(|&t| t as u32).collect();
                self.last_logits = self
                    .model
                    .forward_stream(&ids, &mut self.stream)
                    .pop()
                    .unwrap();
                self.ctx.push_back(canon_tokens);

                self.prev_ts = msg.timestamp_ns;
                self.mid.update(&self.book);
                self.counters.accepted += 1;
                if corrected {
                    self.counters.corrected += 1;
                }
                Ok(StepOutcome::Accepted {
                    msg,
                    events,
                    corrected,
                })
            }
            Err(reason) => {
                self.stream.truncate(mark, self.model.config.d_model);
                self.last_logits = saved_logits;
                self.counters.discarded += 1;
                Ok(StepOutcome::Discarded { reason, tokens })
            }
        }
    }

    /// Runs until the accepted budget (or wall-clock rail) is reached,
    /// recording every attempt. Deterministic per seed when the wall clock
    /// is not the binding limit.
    pub fn run(&mut self, sink: &mut dyn TraceSink) -> Result<SimSummary, SimError> {
        let t0 = Instant::now();
        let mut consecutive = 0u32;
        while self.counters.accepted < self.config.budget_messages {
            if let Some(limit) = self.config.wall_clock_limit_s {
                if t0.elapsed().as_secs_f64() > limit {
                    break;
                }
            }
            let outcome = self.step()?;
            let snap = self.book.snapshot();
            let (outcome_str, reason, msg, tokens) = match &outcome {
                StepOutcome::Accepted { msg, corrected, .. } => {
                    let label = if *corrected { "corrected" } else { "accepted" };
                    (label, None, Some(*msg), self.ctx.back().unwrap().0)
                }
                StepOutcome::Discarded { reason, tokens } => {
                    ("discarded", Some(reason.to_string()), None, tokens.0)
                }
            };
            sink.record(&AttemptRecord {
                attempt: self.attempt,
                outcome: outcome_str.to_string(),
                reason,
                msg,
                tokens,
                best_bid: snap.best_bid,
                best_ask: snap.best_ask,
                mid_half: snap.mid_half,
                spread: snap.spread,
                rng_state: self.rng.state(),
                accepted_count: self.counters.accepted,
            })
            .map_err(|e| SimError::TraceSink(e.to_string()))?;

            match &outcome {
                StepOutcome::Discarded { reason, .. } => {
                    consecutive += 1;
                    if consecutive >= self.config.max_consecutive_discards {
                        return Err(SimError::Livelock {
                            consecutive,
                            attempts: self.attempt,
                            last_reason: reason.to_string(),
                        });
                    }
                }
                StepOutcome::Accepted { .. } => consecutive = 0,
            }
        }
        let snap = self.book.snapshot();
        Ok(SimSummary {
            counters: self.counters,
            discard_rate: self.counters.discard_rate(),
            wall_clock_s: t0.elapsed().as_secs_f64(),
            seed: self.config.seed,
            trial_id: self.config.trial_id,
            final_best_bid: snap.best_bid,
            final_best_ask: snap.best_ask,
        })
    }

    /// Digest of everything a retry can observe; used to verify that
    /// discards are side-effect free.
    pub fn observable_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.book.state_hash().to_le_bytes());
        for toks in &self.ctx {
            for &t in &toks.0 {
                bytes.extend_from_slice(&t.to_le_bytes());
            }
        }
        bytes.extend_from_slice(&(self.stream.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&self.prev_ts.to_le_bytes());
        for &l in &self.last_logits {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
        crate::rng::fnv1a64(&bytes)
    }

    pub fn snapshot(&self) -> BookSnapshot {
        self.book.snapshot()
    }
}
