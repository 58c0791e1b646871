//! Cross-entropy training: Adam, linear warmup, gradient accumulation, and
//! deterministic resume. Gradients from all sequences of a step accumulate
//! into one buffer and are averaged once, so k micro-batches of size b take
//! the identical optimizer step as one batch of size k*b.

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamSet, Real};
use crate::rng::Rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainParams {
    pub steps: u64,
    /// Content tokens per training sequence (the sink is prepended on top).
    pub seq_tokens: usize,
    pub micro_batch: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accum: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    /// Window starts are aligned to this many tokens (24 keeps whole messages).
    pub align: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            steps: 500,
            seq_tokens: 192,
            micro_batch: 4,
            grad_accum: 1,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            warmup_steps: 20,
            align: 24,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    CorpusTooShort {
        corpus: usize,
        needed: usize,
    },
    /// Loss became non-finite; carries the step and the last finite losses.
    NanLoss {
        step: u64,
        recent: Vec<f64>,
    },
    BadParam(&'static str),
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::CorpusTooShort { corpus, needed } => {
                write!(
                    f,
                    "corpus of {corpus} tokens shorter than one window ({needed})"
                )
            }
            Self::NanLoss { step, recent } => {
                write!(
                    f,
                    "non-finite loss at step {step}; recent losses {recent:?}"
                )
            }
            Self::BadParam(what) => write!(f, "invalid training parameter: {what}"),
        }
    }
}

impl std::error::Error for TrainError {}

#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub params: TrainParams,
    pub step: u64,
    adam_m: ParamSet<T>,
    adam_v: ParamSet<T>,
    data_rng: Rng,
    dropout_rng: Rng,
    pub loss_history: Vec<f64>,
}

pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub losses: Vec<f64>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, params: TrainParams) -> Self {
        let adam_m = ParamSet::zeros(&model.config);
        let adam_v = ParamSet::zeros(&model.config);
        let data_rng = Rng::derive(params.seed, 0xdada);
        let dropout_rng = Rng::derive(params.seed, 0xd0);
        Self {
            model,
            params,
            step: 0,
            adam_m,
            adam_v,
            data_rng,
            dropout_rng,
            loss_history: Vec::new(),
        }
    }

    pub fn optimizer_state(&self) -> (&ParamSet<T>, &ParamSet<T>) {
        (&self.adam_m, &self.adam_v)
    }

    pub fn rng_states(&self) -> ([u64; 4], [u64; 4]) {
        (self.data_rng.state(), self.dropout_rng.state())
    }

    pub(crate) fn restore(
        model: Model<T>,
        params: TrainParams,
        step: u64,
        adam_m: ParamSet<T>,
        adam_v: ParamSet<T>,
        data_rng: [u64; 4],
        dropout_rng: [u64; 4],
    ) -> Self {
        Self {
            model,
            params,
            step,
            adam_m,
            adam_v,
            data_rng: Rng::from_state(data_rng),
            dropout_rng: Rng::from_state(dropout_rng),
            loss_history: Vec::new(),
        }
    }

    fn sample_window<'c>(&mut self, corpus: &'c [u32]) -> &'c [u32] {
        let w = self.params.seq_tokens;
        let align = self.params.align.max(1);
        let n_starts = (corpus.len() - w) / align + 1;
        let start = self.data_rng.below(n_starts as u64) as usize * align;
        &corpus[start..start + w]
    }

    /// One optimizer step (grad_accum micro-batches). Returns the mean loss
    /// over all sequences in the step.
    pub fn step_once(&mut self, corpus: &[u32]) -> Result<f64, TrainError> {
        let p = self.params.clone();
        if p.micro_batch == 0 || p.grad_accum == 0 || p.seq_tokens < 2 {
            return Err(TrainError::BadParam("micro_batch, grad_accum, seq_tokens"));
        }
        if corpus.len() < p.seq_tokens {
            return Err(TrainError::CorpusTooShort {
                corpus: corpus.len(),
                needed: p.seq_tokens,
            });
        }
        let mut grads = ParamSet::zeros(&self.model.config);
        let n_seqs = p.micro_batch * p.grad_accum;
        let mut loss_sum = 0.0;
        let use_dropout = self.model.config.dropout > 0.0;
        for _ in 0..n_seqs {
            let window: Vec<u32> = self.sample_window(corpus).to_vec();
            let rng = use_dropout.then_some(&mut self.dropout_rng);
            loss_sum += self.model.loss_and_grad(&window, &mut grads, rng);
        }
        let loss = loss_sum / n_seqs as f64;
        if !loss.is_finite() {
            let recent: Vec<f64> = self.loss_history.iter().rev().take(5).copied().collect();
            return Err(TrainError::NanLoss {
                step: self.step,
                recent,
            });
        }
        grads.scale(T::from_f64(1.0 / n_seqs as f64));

        self.step += 1;
        let t = self.step;
        let warm = if p.warmup_steps > 0 {
            (t as f64 / p.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let bias = (1.0 - p.beta2.powi(t as i32)).sqrt() / (1.0 - p.beta1.powi(t as i32));
        let lr_t = T::from_f64(p.lr * warm * bias);
        let b1 = T::from_f64(p.beta1);
        let b2 = T::from_f64(p.beta2);
        let one_m_b1 = T::from_f64(1.0 - p.beta1);
        let one_m_b2 = T::from_f64(1.0 - p.beta2);
        let eps = T::from_f64(p.eps);

        let g_tensors = grads.tensors();
        let w_tensors = self.model.params.tensors_mut();
        let m_tensors = self.adam_m.tensors_mut();
        let v_tensors = self.adam_v.tensors_mut();
        for (((gw, ww), mw), vw) in g_tensors
            .iter()
            .zip(w_tensors)
            .zip(m_tensors)
            .zip(v_tensors)
        {
            debug_assert_eq!(gw.0, ww.0);
            let (g, w, m, v) = (gw.1, ww.1, mw.1, vw.1);
            for i in 0..g.len() {
                m[i] = b1 * m[i] + one_m_b1 * g[i];
                v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
                let upd = lr_t * m[i] / (v[i].sqrt() + eps);
                w[i] = w[i] - upd;
            }
        }
        self.loss_history.push(loss);
        Ok(loss)
    }

    pub fn run(&mut self, corpus: &[u32], steps: u64) -> Result<(), TrainError> {
        for _ in 0..steps {
            self.step_once(corpus)?;
        }
        Ok(())
    }
}

/// Trains a fresh model on a token corpus. Deterministic given the seeds in
/// `config`/`params`.
pub fn train<T: Real>(
    corpus: &[u32],
    config: ModelConfig,
    params: TrainParams,
    model_seed: u64,
) -> Result<TrainOutcome<T>, TrainError> {
    let model = Model::init(config, model_seed).map_err(|_| TrainError::BadParam("config"))?;
    let mut trainer = Trainer::new(model, params.clone());
    trainer.run(corpus, params.steps)?;
    Ok(TrainOutcome {
        model: trainer.model.clone(),
        losses: trainer.loss_history.clone(),
    })
}
