//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with `--nocapture` to see them).
//!
//! Criteria 1-6, 8, 9 check exact structural identities and estimator/
//! mechanism properties; criterion 7 is the end-to-end desk-scale run.

use std::process::Command;
use std::time::Instant;

use oflow_core::feed::{synth_feed, MsgKind, SynthParams};
use oflow_core::model::{
    rmsnorm, rope, sample_token, Model, ModelConfig, ParamSet, SampleParams, StreamState,
    TrainParams, Trainer,
};
use oflow_core::preprocess::stationarize;
use oflow_core::rng::Rng;
use oflow_core::sim::{error_correct, init_sim, Correction, SimConfig, StepOutcome};
use oflow_core::vocab::{Vocabulary, MSG_TOKENS, SINK_ID};
use oflow_testkit::series::{
    ar1, chi2_crit_99, fgn_hosking, gaussian, markov2_tokens, random_walk,
};
use oflow_testkit::{canonical_book, ReferenceBook};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Mean cross-entropy of one next-token prediction.
fn ce(logits: &[f32], target: u32) -> f64 {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let sum: f64 = logits.iter().map(|&z| ((z as f64) - max).exp()).sum();
    max + sum.ln() - logits[target as usize] as f64
}

#[test]
fn criterion_1_tokenization_identities() {
    let t0 = Instant::now();
    // vocabulary size is exactly 12,012 + S
    for s in [1u16, 7, 98, 1000] {
        assert_eq!(
            Vocabulary::new(s).unwrap().size(),
            12_012 + s as u32,
            "S={s}"
        );
    }
    // the reported corpus arithmetic: messages x 24 = tokens
    assert_eq!(91_124_274u64 * MSG_TOKENS as u64, 2_186_982_576u64);

    // 1e5 synthetic messages round-trip with zero failures
    let msgs = synth_feed(&SynthParams::default(), 3, 100_000);
    let (pres, _) = stationarize(&msgs).unwrap();
    let vocab = Vocabulary::new(98).unwrap();
    let mut tokens = 0usize;
    let mut failures = 0usize;
    for pre in &pres {
        let t = vocab.encode(pre).unwrap();
        tokens += t.0.len();
        if vocab.decode(&t).unwrap() != pre.tokenizable() {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
    assert_eq!(tokens, 24 * msgs.len(), "token count identity");
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 1 min");
    println!(
        "[criterion 1] tokenization identities: PASS (vocab 12,012+S exact; 100000 round trips, 0 failures; 24n tokens; {elapsed:.1}s)"
    );
}

#[test]
fn criterion_2_lob_oracle_equivalence() {
    let t0 = Instant::now();
    let msgs = synth_feed(&SynthParams::default(), 0, 10_000);
    let mut book = oflow_core::OrderBook::new();
    let mut oracle = ReferenceBook::new();
    for (i, msg) in msgs.iter().enumerate() {
        book.apply(msg).unwrap();
        oracle.apply(msg).unwrap();
        assert_eq!(
            canonical_book(&book),
            oracle.canonical(),
            "full book state diverged from the brute-force reference after message {i}"
        );
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 1 min");
    println!(
        "[criterion 2] LOB oracle equivalence: PASS (10000 messages, full state at every step; {elapsed:.1}s)"
    );
}

#[test]
fn criterion_3_transformer_mechanisms() {
    let t0 = Instant::now();

    // (a) causality: permuting future tokens leaves earlier logits unchanged
    let config = ModelConfig {
        vocab_size: 64,
        ..ModelConfig::toy(64, 48)
    };
    let model: Model<f32> = Model::init(config.clone(), 31).unwrap();
    let mut rng = Rng::new(32);
    let tokens: Vec<u32> = (0..24).map(|_| rng.below(64) as u32).collect();
    let base = model.forward_full(&tokens);
    for cut in [3usize, 10, 20] {
        let mut permuted = tokens.clone();
        permuted[cut + 1..].reverse();
        let out = model.forward_full(&permuted);
        for t in 0..=cut {
            assert_eq!(base[t], out[t], "causality violated at position {t}");
        }
    }

    // (b) streaming KV cache equals full recompute within 1e-5 relative
    let tokens: Vec<u32> = (0..100).map(|_| rng.below(64) as u32).collect();
    let config_b = ModelConfig {
        vocab_size: 64,
        ..ModelConfig::toy(64, 120)
    };
    let model_b: Model<f32> = Model::init(config_b.clone(), 33).unwrap();
    let full = model_b.forward_full(&tokens);
    let mut st = StreamState::new(&config_b, false);
    let mut kv_err = 0.0f64;
    for (t, &tok) in tokens.iter().enumerate() {
        let row = model_b.forward_stream(&[tok], &mut st).pop().unwrap();
        for (a, b) in row.iter().zip(&full[t]) {
            kv_err = kv_err.max(rel_err(*a as f64, *b as f64));
        }
    }
    assert!(kv_err < 1e-5, "kv-cache relative error {kv_err:.2e}");

    // (c) finite-difference gradient check, 8-dim single layer, f64
    let gc_config = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        vocab_size: 32,
        max_context_tokens: 24,
        rope_base: 10_000.0,
        ffn_hidden: 16,
        dropout: 0.0,
    };
    let mut gc_model: Model<f64> = Model::init(gc_config.clone(), 34).unwrap();
    let content: Vec<u32> = (0..12).map(|_| rng.below(32) as u32).collect();
    let mut grads = ParamSet::zeros(&gc_config);
    gc_model.loss_and_grad(&content, &mut grads, None);
    let h = 1e-4;
    let mut grad_err = 0.0f64;
    let names: Vec<String> = grads.tensors().iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let len = grads
            .tensors()
            .iter()
            .find(|(n, _)| *n == name)
            .unwrap()
            .1
            .len();
        for i in 0..len {
            let analytic = grads.tensors().iter().find(|(n, _)| *n == name).unwrap().1[i];
            fn nudge(model: &mut Model<f64>, name: &str, i: usize, d: f64) {
                let mut ts = model.params.tensors_mut();
                ts.iter_mut().find(|(n, _)| n == name).unwrap().1[i] += d;
            }
            nudge(&mut gc_model, &name, i, h);
            let plus = gc_model.loss(&content);
            nudge(&mut gc_model, &name, i, -2.0 * h);
            let minus = gc_model.loss(&content);
            nudge(&mut gc_model, &name, i, h);
            let fd = (plus - minus) / (2.0 * h);
            grad_err = grad_err.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6));
        }
    }
    assert!(
        grad_err < 1e-4,
        "gradient check max relative error {grad_err:.2e}"
    );

    // (d) RMSNorm scale invariance and RoPE relative-offset property at 1e-6
    let mut norm_err = 0.0f64;
    let gain = vec![1.0f64; 32];
    for _ in 0..50 {
        let x: Vec<f64> = (0..32).map(|_| rng.gauss() * 100.0).collect();
        let c = 10f64.powf(rng.next_f64() * 3.0 - 1.0);
        let xc: Vec<f64> = x.iter().map(|&v| v * c).collect();
        let mut y = vec![0.0; 32];
        let mut yc = vec![0.0; 32];
        rmsnorm(&x, &gain, &mut y);
        rmsnorm(&xc, &gain, &mut yc);
        for (a, b) in y.iter().zip(&yc) {
            norm_err = norm_err.max(rel_err(*a, *b));
        }
    }
    assert!(
        norm_err < 1e-6,
        "rmsnorm scale invariance error {norm_err:.2e}"
    );

    let mut rope_err = 0.0f64;
    for _ in 0..50 {
        let q: Vec<f64> = (0..16).map(|_| rng.gauss()).collect();
        let k: Vec<f64> = (0..16).map(|_| rng.gauss()).collect();
        let dot = |m: usize, n: usize| -> f64 {
            rope(&q, m, 16, 10_000.0)
                .iter()
                .zip(rope(&k, n, 16, 10_000.0))
                .map(|(a, b)| a * b)
                .sum()
        };
        rope_err = rope_err.max((dot(5, 3) - dot(7, 5)).abs());
        rope_err = rope_err.max((dot(205, 203) - dot(7, 5)).abs());
    }
    assert!(rope_err < 1e-6, "rope offset property error {rope_err:.2e}");

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "runtime {elapsed:.1}s exceeds 5 min");
    println!(
        "[criterion 3] transformer mechanisms: PASS (causality exact; kv err {kv_err:.1e}; grad err {grad_err:.1e}; norm err {norm_err:.1e}; rope err {rope_err:.1e}; {elapsed:.1}s)"
    );
}

/// Toy model trained 2k steps on a second-order Markov corpus; streaming
/// held-out loss at well past 4x the training context must sit within 10% of
/// the within-context loss when the pinned sink is present. The sink-ablated
/// sliding window is reported alongside and must be worse.
#[test]
fn criterion_4_attention_sink_streaming() {
    let t0 = Instant::now();
    let l = 48usize;
    let corpus = markov2_tokens(32, 3, 100_000, 7, 70);
    let held = markov2_tokens(32, 3, 16 * l, 7, 71);
    let config = ModelConfig::toy(64, l);
    let params = TrainParams {
        steps: 2_000,
        seq_tokens: l,
        micro_batch: 4,
        grad_accum: 1,
        lr: 1.5e-3,
        align: 1,
        seed: 3,
        ..TrainParams::default()
    };
    let mut trainer = Trainer::<f32>::new(Model::init(config.clone(), 11).unwrap(), params);
    trainer.run(&corpus, 2_000).unwrap();
    let model = &trainer.model;

    let mut within = 0.0;
    let mut windows = 0;
    for w in held.chunks_exact(l) {
        within += model.loss(w);
        windows += 1;
    }
    within /= windows as f64;

    // streaming with the pinned sink, far beyond the training context
    let mut st = StreamState::new(&config, true);
    let mut logits = model
        .forward_stream(&[SINK_ID as u32], &mut st)
        .pop()
        .unwrap();
    let mut sink_loss = 0.0;
    for &t in &held {
        sink_loss += ce(&logits, t);
        logits = model.forward_stream(&[t], &mut st).pop().unwrap();
    }
    sink_loss /= held.len() as f64;
    assert!(
        st.evicted() as usize > 10 * l,
        "stream must run deep into the eviction regime"
    );

    // ablated: plain sliding window, no sink anywhere
    let mut st2 = StreamState::new(&config, false);
    let mut logits2 = model.forward_stream(&[held[0]], &mut st2).pop().unwrap();
    let mut ablated_loss = 0.0;
    for &t in &held[1..] {
        ablated_loss += ce(&logits2, t);
        logits2 = model.forward_stream(&[t], &mut st2).pop().unwrap();
    }
    ablated_loss /= (held.len() - 1) as f64;

    let ratio = sink_loss / within;
    assert!(
        (ratio - 1.0).abs() <= 0.10,
        "streaming loss {sink_loss:.4} vs within-context {within:.4}: ratio {ratio:.3} outside 10%"
    );
    assert!(
        ablated_loss > sink_loss,
        "sink-ablated loss {ablated_loss:.4} should exceed sink loss {sink_loss:.4}"
    );
    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "[criterion 4] attention-sink streaming: PASS (within-context {within:.4}, streaming+sink {sink_loss:.4} (ratio {ratio:.3}), sink-ablated {ablated_loss:.4} (+{:.1}%, direction asserted, magnitude reported); {elapsed:.1}s)",
        100.0 * (ablated_loss / sink_loss - 1.0)
    );
}

#[test]
fn criterion_5_sampling_correctness() {
    let t0 = Instant::now();
    let vocab = Vocabulary::new(98).unwrap();
    let vsz = vocab.size() as usize;
    let mut rng = Rng::new(50);
    let logits: Vec<f64> = (0..vsz).map(|_| rng.gauss()).collect();
    let params = SampleParams {
        temperature: 1.02,
        top_p: 0.98,
        seed: 0,
    };

    // (a) an illegal id is never emitted across 1e6 draws (rotating slots)
    let mut draw_rng = Rng::new(51);
    for i in 0..1_000_000u32 {
        let mask = vocab.slot_mask((i % MSG_TOKENS as u32) as usize);
        let id = sample_token(&logits, &params, mask, &mut draw_rng).unwrap();
        debug_assert!(mask.contains(id));
        if !mask.contains(id) {
            panic!("illegal id {id} emitted for slot {}", i % 24);
        }
    }

    // (b) temperature -> 0 equals argmax over the legal set
    for _ in 0..100 {
        let ls: Vec<f64> = (0..vsz).map(|_| rng.gauss()).collect();
        let mask = vocab.slot_mask(rng.below(24) as usize);
        let cold = SampleParams {
            temperature: 1e-9,
            top_p: 1.0,
            seed: 0,
        };
        let drawn = sample_token(&ls, &cold, mask, &mut draw_rng).unwrap();
        let argmax = mask
            .ids()
            .max_by(|&a, &b| {
                ls[a as usize]
                    .partial_cmp(&ls[b as usize])
                    .unwrap()
                    .then(b.cmp(&a)) // ties break toward the lower id
            })
            .unwrap();
        assert_eq!(drawn, argmax, "temperature->0 must equal argmax");
    }

    // (c) unconstrained draws match softmax (chi-squared at alpha = 0.01)
    let k = 64usize;
    let sub_logits: Vec<f64> = (0..k).map(|_| rng.gauss()).collect();
    let mask = oflow_core::vocab::SlotMask {
        start: 0,
        len: k as u16,
        nan_allowed: false,
    };
    let free = SampleParams {
        temperature: 1.0,
        top_p: 1.0,
        seed: 0,
    };
    let n_draws = 200_000usize;
    let mut counts = vec![0u64; k];
    for _ in 0..n_draws {
        counts[sample_token(&sub_logits, &free, &mask, &mut draw_rng).unwrap() as usize] += 1;
    }
    let zmax = sub_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mass: f64 = sub_logits.iter().map(|z| (z - zmax).exp()).sum();
    let mut chi2 = 0.0;
    for i in 0..k {
        let expected = (sub_logits[i] - zmax).exp() / mass * n_draws as f64;
        chi2 += (counts[i] as f64 - expected).powi(2) / expected;
    }
    let crit = chi2_crit_99(k - 1);
    assert!(
        chi2 < crit,
        "chi2 {chi2:.1} exceeds the 1% critical value {crit:.1}"
    );

    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "[criterion 5] sampling correctness: PASS (0 illegal in 1e6 draws; argmax limit; chi2 {chi2:.1} < {crit:.1}; {elapsed:.1}s)"
    );
}

#[test]
fn criterion_6_error_correction_branches() {
    let t0 = Instant::now();
    use oflow_core::feed::{OrderFlowMessage, Side};
    let add = |id: u64, side: Side, size: u32, price: i64, ts: u64| OrderFlowMessage {
        timestamp_ns: ts,
        kind: MsgKind::Add,
        order_id: id,
        side,
        size,
        price,
        remaining_size: None,
        new_order_id: None,
        exec_or_new_price: None,
        symbol_id: 0,
    };
    let mut book = oflow_core::OrderBook::new();
    book.apply(&add(1, Side::Bid, 100, 17_000, 1_000)).unwrap();
    book.apply(&add(2, Side::Bid, 50, 17_000, 2_000)).unwrap();
    book.apply(&add(3, Side::Ask, 80, 17_004, 3_000)).unwrap();

    // branch 1: valid reference (entry time and size both match)
    assert!(matches!(
        error_correct(&book, Side::Bid, 17_000, 2_000, 50),
        Correction::Valid(r) if r.target.order_id == 2
    ));
    // branch 2a: level exists, one field matches -> corrected to that order
    assert!(matches!(
        error_correct(&book, Side::Bid, 17_000, 1_000, 999),
        Correction::Corrected(r) if r.target.order_id == 1
    ));
    // branch 2b: level exists, nothing matches -> queue-head substitution
    assert!(matches!(
        error_correct(&book, Side::Bid, 17_000, 4_242, 999),
        Correction::Corrected(r) if r.target.order_id == 1
    ));
    // branch 3: level absent -> reject (discard)
    assert!(matches!(
        error_correct(&book, Side::Bid, 16_999, 1_000, 100),
        Correction::Reject(_)
    ));

    // branch 4: a discarded attempt leaves the retry state identical
    let history = synth_feed(&SynthParams::default(), 0, 400);
    let vocab = Vocabulary::new(4).unwrap();
    let model: Model<f32> = Model::init(ModelConfig::toy(vocab.size() as usize, 192), 61).unwrap();
    let cfg = SimConfig {
        context_messages: 7,
        budget_messages: 100,
        seed: 62,
        ..SimConfig::default()
    };
    let mut state = init_sim(&history, &model, &vocab, cfg).unwrap();
    let mut discards = 0;
    for _ in 0..80 {
        let before = state.observable_hash();
        if let StepOutcome::Discarded { .. } = state.step().unwrap() {
            discards += 1;
            assert_eq!(
                state.observable_hash(),
                before,
                "discard must be side-effect free"
            );
        }
        if discards >= 10 {
            break;
        }
    }
    assert!(
        discards >= 10,
        "need discards to exercise the retry branch, saw {discards}"
    );

    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "[criterion 6] error-correction branches: PASS (valid / partial-match / queue-head / reject / {discards} identical retries; {elapsed:.1}s)"
    );
}

/// End-to-end desk scale: train the toy model on a synthetic feed, then
/// generate >= 10^4 accepted messages; the trace must replay cleanly through
/// the brute-force book oracle. The discard rate is reported next to the
/// reference value (~7%), not asserted: model scale differs.
#[test]
fn criterion_7_end_to_end_desk_scale() {
    let t0 = Instant::now();
    let history_len = 60_000usize;
    let msgs = synth_feed(&SynthParams::default(), 0, history_len);
    let (pres, _) = stationarize(&msgs).unwrap();
    let vocab = Vocabulary::new(4).unwrap();
    let mut corpus: Vec<u32> = Vec::with_capacity(pres.len() * MSG_TOKENS);
    for pre in &pres {
        corpus.extend(vocab.encode(pre).unwrap().0.iter().map(|&t| t as u32));
    }

    let config = ModelConfig::toy(vocab.size() as usize, 192);
    let params = TrainParams {
        steps: 600,
        seq_tokens: 192,
        micro_batch: 2,
        grad_accum: 1,
        lr: 1e-3,
        align: MSG_TOKENS,
        seed: 71,
        ..TrainParams::default()
    };
    let mut trainer = Trainer::<f32>::new(Model::init(config, 72).unwrap(), params);
    trainer.run(&corpus, 600).unwrap();
    let train_s = t0.elapsed().as_secs_f64();
    let final_loss = *trainer.loss_history.last().unwrap();

    let sim_cfg = SimConfig {
        context_messages: 7,
        budget_messages: 10_000,
        seed: 73,
        start_time_ns: msgs.last().unwrap().timestamp_ns + 1,
        ..SimConfig::default()
    };
    let mut state = init_sim(&msgs, &trainer.model, &vocab, sim_cfg).unwrap();
    let mut trace: Vec<oflow_core::sim::AttemptRecord> = Vec::new();
    let summary = state.run(&mut trace).unwrap();
    assert!(
        summary.counters.accepted >= 10_000,
        "accepted {}",
        summary.counters.accepted
    );

    // replay history + accepted messages through the independent oracle
    let mut oracle = ReferenceBook::new();
    for m in &msgs {
        oracle.apply(m).expect("history replays through the oracle");
    }
    let mut type_counts = [0u64; 5];
    for rec in &trace {
        if let Some(m) = rec.msg {
            oracle.apply(&m).unwrap_or_else(|e| {
                panic!("trace does not replay at attempt {}: {e}", rec.attempt)
            });
            type_counts[m.kind.index()] += 1;
        }
    }
    assert_eq!(
        canonical_book(state.book()),
        oracle.canonical(),
        "final book equals oracle"
    );

    let total: u64 = type_counts.iter().sum();
    let freqs: Vec<f64> = type_counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect();
    // Generated type frequencies track the training corpus within 10
    // percentage points.
    let mut corpus_freq = [0.0f64; 5];
    for m in &msgs {
        corpus_freq[m.kind.index()] += 1.0 / msgs.len() as f64;
    }
    for k in 0..5 {
        assert!(
            (freqs[k] - corpus_freq[k]).abs() < 0.10,
            "{}: generated {:.3} vs corpus {:.3}",
            MsgKind::ALL[k].label(),
            freqs[k],
            corpus_freq[k]
        );
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 1_800.0, "runtime {elapsed:.0}s exceeds 30 min");
    println!(
        "[criterion 7] end-to-end desk scale: PASS ({} accepted / {} attempts; discard rate {:.2}% (reference: ~7%); \
         type freqs add/exec/execp/cancel/replace = {:.3}/{:.3}/{:.3}/{:.3}/{:.3}; train loss {final_loss:.3}; train {train_s:.0}s, total {elapsed:.0}s)",
        summary.counters.accepted,
        summary.counters.attempts,
        100.0 * summary.discard_rate,
        freqs[0],
        freqs[1],
        freqs[2],
        freqs[3],
        freqs[4],
    );
}

#[test]
fn criterion_8_estimator_validation() {
    let t0 = Instant::now();
    use oflow_core::stylized::{acf, dfa_alpha, excess_kurtosis, hurst_rs};

    let white = gaussian(1 << 14, 81);
    let dfa_white = dfa_alpha(&white).unwrap();
    assert!(
        (dfa_white.alpha - 0.5).abs() < 0.05,
        "white-noise alpha {}",
        dfa_white.alpha
    );
    assert_eq!(
        dfa_white.gamma,
        2.0 - 2.0 * dfa_white.alpha,
        "gamma identity exact"
    );

    let walk = random_walk(1 << 14, 82);
    let dfa_walk = dfa_alpha(&walk).unwrap();
    assert!(
        (dfa_walk.alpha - 1.5).abs() < 0.05,
        "random-walk alpha {}",
        dfa_walk.alpha
    );

    let fgn = fgn_hosking(0.7, 1 << 14, 83);
    let h_fgn = hurst_rs(&fgn).unwrap();
    assert!((h_fgn.h - 0.7).abs() < 0.07, "fGn H {}", h_fgn.h);

    let h_white = hurst_rs(&white).unwrap();
    assert!(
        (h_white.h - 0.5).abs() < 0.05,
        "white-noise H {}",
        h_white.h
    );
    assert!(
        h_white.ci95.0 <= 0.5 && 0.5 <= h_white.ci95.1,
        "white-noise CI {:?} must cover 0.5",
        h_white.ci95
    );

    let gauss = gaussian(1_000_000, 84);
    let kurt = excess_kurtosis(&gauss).unwrap();
    assert!(kurt.abs() < 0.1, "gaussian excess kurtosis {kurt}");

    let ar = ar1(0.5, 100_000, 85);
    let curve = acf(&ar, 3).unwrap();
    assert!(
        (curve.values[1] - 0.5).abs() < 0.02,
        "AR(1) acf(1) {}",
        curve.values[1]
    );

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "runtime {elapsed:.1}s exceeds 5 min");
    println!(
        "[criterion 8] estimator validation: PASS (DFA {:.3}/{:.3}; H(fGn 0.7) {:.3}; H(white) {:.3} CI [{:.3},{:.3}]; kurt {kurt:.3}; acf1 {:.3}; {elapsed:.1}s)",
        dfa_white.alpha, dfa_walk.alpha, h_fgn.h, h_white.h, h_white.ci95.0, h_white.ci95.1, curve.values[1]
    );
}

/// Re-running `evaluate` on the same trace produces byte-identical outputs.
#[test]
fn criterion_9_report_determinism() {
    let t0 = Instant::now();
    let bin = env!("CARGO_BIN_EXE_oflow");
    let dir = std::env::temp_dir().join(format!("oflow-accept9-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let p = |name: &str| dir.join(name).display().to_string();

    let ok = |out: std::process::Output, what: &str| {
        assert!(
            out.status.success(),
            "{what} failed: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let run = |args: &[&str], what: &str| {
        ok(Command::new(bin).args(args).output().unwrap(), what);
    };

    run(
        &["synth", "--n", "4000", "--seed", "7", "-o", &p("feed.bin")],
        "synth",
    );
    run(
        &[
            "preprocess",
            &p("feed.bin"),
            "-o",
            &p("pre.bin"),
            "--keep-all",
        ],
        "preprocess",
    );
    run(
        &[
            "tokenize",
            &p("pre.bin"),
            "-o",
            &p("toks.bin"),
            "--tickers",
            "4",
        ],
        "tokenize",
    );
    run(
        &[
            "train",
            &p("toks.bin"),
            "-o",
            &p("run"),
            "--steps",
            "40",
            "--seq-tokens",
            "96",
            "--micro-batch",
            "2",
            "--context-tokens",
            "192",
        ],
        "train",
    );
    run(
        &[
            "simulate",
            "--checkpoint",
            &p("run/checkpoint.bin"),
            "--history",
            &p("feed.bin"),
            "-o",
            &p("sims"),
            "--trials",
            "1",
            "--seed",
            "1",
            "--budget-messages",
            "150",
            "--context-messages",
            "7",
            "--start-time-ns",
            "33904000000000",
        ],
        "simulate",
    );
    for report in ["report_a", "report_b"] {
        run(
            &[
                "evaluate",
                "--trace",
                &p("sims/trial_000"),
                "--empirical",
                &p("feed.bin"),
                "--history",
                &p("feed.bin"),
                "-o",
                &p(report),
                "--delta",
                "0.05",
            ],
            "evaluate",
        );
    }

    let mut compared = 0;
    for entry in std::fs::read_dir(dir.join("report_a")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name == "manifest.json" {
            continue; // carries the creation timestamp by design
        }
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(dir.join("report_b").join(&name))
            .unwrap_or_else(|_| panic!("missing {name} in rerun"));
        assert_eq!(a, b, "{name} differs between reruns");
        compared += 1;
    }
    assert!(
        compared >= 10,
        "expected the full figure set, compared {compared}"
    );
    let _ = std::fs::remove_dir_all(&dir);
    let elapsed = t0.elapsed().as_secs_f64();
    println!(
        "[criterion 9] report determinism: PASS ({compared} output files byte-identical across reruns; {elapsed:.1}s)"
    );
}
