//! Training-loop behavior: the gradient-accumulation identity, loss descent
//! on a trivially learnable corpus, the unigram-entropy baseline, and exact
//! checkpoint resume.

use oflow_core::model::{Checkpoint, Model, ModelConfig, TrainParams, Trainer};
use oflow_testkit::series::markov_tokens;

fn tiny_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        vocab_size: vocab,
        max_context_tokens: 24,
        rope_base: 10_000.0,
        ffn_hidden: 64,
        dropout: 0.0,
    }
}

/// k=4 accumulation with micro-batch 2 takes the same step as one batch of 8:
/// both draw the same eight windows and sum into one gradient buffer.
#[test]
fn grad_accumulation_identity() {
    let corpus = markov_tokens(16, 3, 4_000, 40, 140);
    let config = tiny_config(32);
    let params_batched = TrainParams {
        steps: 3,
        seq_tokens: 24,
        micro_batch: 8,
        grad_accum: 1,
        align: 1,
        seed: 9,
        ..TrainParams::default()
    };
    let params_accum = TrainParams {
        micro_batch: 2,
        grad_accum: 4,
        ..params_batched.clone()
    };

    let mut a = Trainer::<f32>::new(Model::init(config.clone(), 77).unwrap(), params_batched);
    let mut b = Trainer::<f32>::new(Model::init(config, 77).unwrap(), params_accum);
    for _ in 0..3 {
        let la = a.step_once(&corpus).unwrap();
        let lb = b.step_once(&corpus).unwrap();
        assert!((la - lb).abs() < 1e-6, "losses diverged: {la} vs {lb}");
    }
    for ((na, ta), (nb, tb)) in a
        .model
        .params
        .tensors()
        .iter()
        .zip(b.model.params.tensors().iter())
    {
        assert_eq!(na, nb);
        for (x, y) in ta.iter().zip(tb.iter()) {
            assert!((x - y).abs() < 1e-6, "{na}: {x} vs {y}");
        }
    }
}

/// On a two-symbol repeating corpus the 50-step smoothed loss never rises.
#[test]
fn loss_descends_on_repeating_corpus() {
    let corpus: Vec<u32> = (0..2_000).map(|i| 3 + (i % 2) as u32).collect();
    let config = tiny_config(8);
    let params = TrainParams {
        steps: 250,
        seq_tokens: 16,
        micro_batch: 2,
        align: 1,
        lr: 3e-3,
        seed: 4,
        ..TrainParams::default()
    };
    let mut trainer = Trainer::<f32>::new(Model::init(config, 5).unwrap(), params);
    trainer.run(&corpus, 250).unwrap();
    let losses = &trainer.loss_history;
    let smoothed: Vec<f64> = losses
        .windows(50)
        .map(|w| w.iter().sum::<f64>() / 50.0)
        .collect();
    for (i, w) in smoothed.windows(2).enumerate() {
        assert!(
            w[1] <= w[0] + 1e-3,
            "smoothed loss rose at step {i}: {} -> {}",
            w[0],
            w[1]
        );
    }
    assert!(
        losses.last().unwrap() < &0.05,
        "alternating corpus should be learned"
    );
}

/// A trained model must beat the unigram entropy of its corpus.
#[test]
fn beats_unigram_baseline() {
    let corpus = markov_tokens(24, 3, 20_000, 41, 141);
    let mut counts = vec![0u64; 32];
    for &t in &corpus {
        counts[t as usize] += 1;
    }
    let n = corpus.len() as f64;
    let unigram_entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();

    let config = tiny_config(32);
    let params = TrainParams {
        steps: 300,
        seq_tokens: 24,
        micro_batch: 4,
        align: 1,
        lr: 3e-3,
        seed: 6,
        ..TrainParams::default()
    };
    let mut trainer = Trainer::<f32>::new(Model::init(config, 7).unwrap(), params);
    trainer.run(&corpus, 300).unwrap();

    let held_out = markov_tokens(24, 3, 2_000, 41, 142);
    let mut eval_loss = 0.0;
    let mut windows = 0;
    for w in held_out.chunks_exact(24) {
        eval_loss += trainer.model.loss(w);
        windows += 1;
    }
    eval_loss /= windows as f64;
    assert!(
        eval_loss < unigram_entropy,
        "held-out loss {eval_loss:.3} should beat unigram entropy {unigram_entropy:.3}"
    );
}

/// Restoring a checkpoint reproduces the exact loss trajectory the
/// uninterrupted run would have produced.
#[test]
fn resume_reproduces_loss_trajectory() {
    let corpus = markov_tokens(16, 3, 6_000, 43, 143);
    let config = tiny_config(32);
    let params = TrainParams {
        steps: 40,
        seq_tokens: 24,
        micro_batch: 2,
        align: 1,
        seed: 11,
        ..TrainParams::default()
    };

    // Uninterrupted run: 40 steps.
    let mut full = Trainer::<f32>::new(Model::init(config.clone(), 13).unwrap(), params.clone());
    full.run(&corpus, 40).unwrap();

    // Interrupted run: 25 steps, checkpoint through bytes, 15 more.
    let mut first = Trainer::<f32>::new(Model::init(config, 13).unwrap(), params);
    first.run(&corpus, 25).unwrap();
    let bytes = Checkpoint::from_trainer(&first, 0xabcd).to_bytes();
    let restored = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(restored.vocab_hash, 0xabcd);
    assert_eq!(restored.step, 25);
    let mut resumed = restored.into_trainer();
    resumed.run(&corpus, 15).unwrap();

    let tail: Vec<f64> = full.loss_history[25..].to_vec();
    assert_eq!(
        resumed.loss_history, tail,
        "resumed trajectory must match exactly"
    );
}

#[test]
fn corpus_too_short_is_an_error() {
    let config = tiny_config(8);
    let params = TrainParams {
        seq_tokens: 100,
        ..TrainParams::default()
    };
    let mut t = Trainer::<f32>::new(Model::init(config, 1).unwrap(), params);
    assert!(t.step_once(&[3, 4, 5]).is_err());
}
