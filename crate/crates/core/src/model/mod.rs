//! Decoder-only transformer world agent.
//!
//! Pre-norm residual blocks: RMSNorm -> causal self-attention with rotary
//! position embeddings -> add, RMSNorm -> gated FFN -> add, with a final norm
//! and a weight-tied output head. Inference streams through a rolling KV
//! cache with a pinned attention-sink token ([`stream`]); training is plain
//! full-sequence teacher forcing with explicit backprop ([`train`]).
//!
//! Everything is generic over [`Real`] so the same code runs in f32 for
//! training and f64 for finite-difference gradient checks.

mod checkpoint;
mod sample;
mod stream;
mod train;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use sample::{generate_message, sample_token, SampleError, SampleParams};
pub use stream::StreamState;
pub use train::{train, TrainError, TrainOutcome, TrainParams, Trainer};

use crate::rng::Rng;
use crate::vocab::MSG_TOKENS;

/// Scalar abstraction: f32 in production, f64 for gradient checks.
pub trait Real:
    Copy
    + PartialOrd
    + core::fmt::Debug
    + core::ops::Add<Output = Self>
    + core::ops::Sub<Output = Self>
    + core::ops::Mul<Output = Self>
    + core::ops::Div<Output = Self>
    + core::ops::Neg<Output = Self>
    + core::ops::AddAssign
    + core::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

const RMS_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    /// KV capacity in content tokens; one extra slot is reserved for the
    /// sink. Must hold whole messages (divisible by 24).
    pub max_context_tokens: usize,
    pub rope_base: f64,
    pub ffn_hidden: usize,
    pub dropout: f32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConfigError {
    HeadsDivideModel,
    OddHeadDim,
    ContextNotMessageAligned(usize),
    VocabTooSmall,
    Empty(&'static str),
}

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::HeadsDivideModel => write!(f, "d_model must be divisible by n_heads"),
            Self::OddHeadDim => write!(f, "head dimension must be even for rotary embeddings"),
            Self::ContextNotMessageAligned(l) => {
                write!(
                    f,
                    "max_context_tokens {l} must be divisible by {MSG_TOKENS}"
                )
            }
            Self::VocabTooSmall => write!(f, "vocab must cover the special tokens"),
            Self::Empty(what) => write!(f, "{what} must be nonzero"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 8/3 multiplier rounded up to a multiple of 64.
fn default_ffn_hidden(d_model: usize) -> usize {
    let raw = (d_model * 8).div_ceil(3);
    raw.div_ceil(64) * 64
}

impl ModelConfig {
    /// Production-scale configuration: 768 dims, 12 layers, 12 heads,
    /// 432-message context.
    pub fn reference(vocab_size: usize) -> Self {
        Self {
            d_model: 768,
            n_layers: 12,
            n_heads: 12,
            vocab_size,
            max_context_tokens: 10_368,
            rope_base: 10_000.0,
            ffn_hidden: default_ffn_hidden(768),
            dropout: 0.0,
        }
    }

    /// Desk-scale configuration: 64 dims, 2 layers, 4 heads.
    pub fn toy(vocab_size: usize, max_context_tokens: usize) -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            vocab_size,
            max_context_tokens,
            rope_base: 10_000.0,
            ffn_hidden: default_ffn_hidden(64),
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.ffn_hidden == 0 {
            return Err(ConfigError::Empty("model dimensions"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ConfigError::HeadsDivideModel);
        }
        if self.head_dim() % 2 != 0 {
            return Err(ConfigError::OddHeadDim);
        }
        if self.max_context_tokens == 0 || self.max_context_tokens % MSG_TOKENS != 0 {
            return Err(ConfigError::ContextNotMessageAligned(
                self.max_context_tokens,
            ));
        }
        if self.vocab_size < 4 {
            return Err(ConfigError::VocabTooSmall);
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Total parameter count (embeddings are tied to the output head).
    pub fn param_count(&self) -> u64 {
        let d = self.d_model as u64;
        let f = self.ffn_hidden as u64;
        let per_layer = 2 * d + 4 * d * d + 3 * d * f;
        self.vocab_size as u64 * d + d + self.n_layers as u64 * per_layer
    }
}

#[derive(Clone, Debug)]
pub struct LayerParams<T> {
    pub attn_norm: Vec<T>,
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub wo: Vec<T>,
    pub ffn_norm: Vec<T>,
    pub w_gate: Vec<T>,
    pub w_up: Vec<T>,
    pub w_down: Vec<T>,
}

/// All trainable tensors; also reused as the container for gradients and
/// Adam moments.
#[derive(Clone, Debug)]
pub struct ParamSet<T> {
    pub embed: Vec<T>,
    pub final_norm: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let f = config.ffn_hidden;
        let z = |n: usize| vec![T::ZERO; n];
        Self {
            embed: z(config.vocab_size * d),
            final_norm: z(d),
            layers: (0..config.n_layers)
                .map(|_| LayerParams {
                    attn_norm: z(d),
                    wq: z(d * d),
                    wk: z(d * d),
                    wv: z(d * d),
                    wo: z(d * d),
                    ffn_norm: z(d),
                    w_gate: z(f * d),
                    w_up: z(f * d),
                    w_down: z(d * f),
                })
                .collect(),
        }
    }

    /// Tensors in a fixed, documented order (the checkpoint manifest order).
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = vec![
            ("embed".into(), self.embed.as_slice()),
            ("final_norm".into(), self.final_norm.as_slice()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.attn_norm"), &l.attn_norm));
            out.push((format!("layer{i}.wq"), &l.wq));
            out.push((format!("layer{i}.wk"), &l.wk));
            out.push((format!("layer{i}.wv"), &l.wv));
            out.push((format!("layer{i}.wo"), &l.wo));
            out.push((format!("layer{i}.ffn_norm"), &l.ffn_norm));
            out.push((format!("layer{i}.w_gate"), &l.w_gate));
            out.push((format!("layer{i}.w_up"), &l.w_up));
            out.push((format!("layer{i}.w_down"), &l.w_down));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out: Vec<(String, &mut Vec<T>)> = vec![
            ("embed".into(), &mut self.embed),
            ("final_norm".into(), &mut self.final_norm),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.attn_norm"), &mut l.attn_norm));
            out.push((format!("layer{i}.wq"), &mut l.wq));
            out.push((format!("layer{i}.wk"), &mut l.wk));
            out.push((format!("layer{i}.wv"), &mut l.wv));
            out.push((format!("layer{i}.wo"), &mut l.wo));
            out.push((format!("layer{i}.ffn_norm"), &mut l.ffn_norm));
            out.push((format!("layer{i}.w_gate"), &mut l.w_gate));
            out.push((format!("layer{i}.w_up"), &mut l.w_up));
            out.push((format!("layer{i}.w_down"), &mut l.w_down));
        }
        out
    }

    pub fn scale(&mut self, by: T) {
        for (_, t) in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= by;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> Model<T> {
    /// Random N(0, 0.02) init; output-side projections are scaled down by
    /// sqrt(2 * n_layers), following the usual residual-stream convention.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = Rng::derive(seed, 0x6d6f_6465);
        let mut params = ParamSet::zeros(&config);
        let residual_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        for (name, t) in params.tensors_mut() {
            if name.ends_with("norm") {
                t.iter_mut().for_each(|x| *x = T::ONE);
                continue;
            }
            let std = if name.ends_with(".wo") || name.ends_with(".w_down") {
                0.02 * residual_scale
            } else {
                0.02
            };
            t.iter_mut()
                .for_each(|x| *x = T::from_f64(rng.gauss() * std));
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> u64 {
        self.config.param_count()
    }
}

// ---- math kernels ---------------------------------------------------------
// All summations run in ascending index order so the streaming and
// full-sequence paths produce bit-identical floats.

#[inline]
pub(crate) fn matvec<T: Real>(w: &[T], x: &[T], out_dim: usize, in_dim: usize, y: &mut [T]) {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = T::ZERO;
        for i in 0..in_dim {
            acc += row[i] * x[i];
        }
        y[o] = acc;
    }
}

/// dx += W^T dy
#[inline]
pub(crate) fn matvec_t_acc<T: Real>(
    w: &[T],
    dy: &[T],
    out_dim: usize,
    in_dim: usize,
    dx: &mut [T],
) {
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let g = dy[o];
        for i in 0..in_dim {
            dx[i] += g * row[i];
        }
    }
}

/// dW += dy x^T
#[inline]
pub(crate) fn outer_acc<T: Real>(dw: &mut [T], dy: &[T], x: &[T], out_dim: usize, in_dim: usize) {
    for o in 0..out_dim {
        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
        let g = dy[o];
        for i in 0..in_dim {
            row[i] += g * x[i];
        }
    }
}

/// y_i = gain_i * x_i / sqrt(mean(x^2) + eps). Returns the inverse RMS.
pub fn rmsnorm<T: Real>(x: &[T], gain: &[T], y: &mut [T]) -> T {
    let mut ms = T::ZERO;
    for &v in x {
        ms += v * v;
    }
    let n = T::from_f64(x.len() as f64);
    let inv = T::ONE / (ms / n + T::from_f64(RMS_EPS)).sqrt();
    for i in 0..x.len() {
        y[i] = gain[i] * x[i] * inv;
    }
    inv
}

/// Backward of [`rmsnorm`]: accumulates the gain gradient and adds dx
/// into `dx`.
pub(crate) fn rmsnorm_backward<T: Real>(
    dy: &[T],
    x: &[T],
    gain: &[T],
    inv: T,
    dgain: &mut [T],
    dx: &mut [T],
) {
    let n = T::from_f64(x.len() as f64);
    let mut dot = T::ZERO;
    for i in 0..x.len() {
        dgain[i] += dy[i] * x[i] * inv;
        dot += dy[i] * gain[i] * x[i];
    }
    let k = inv * inv * inv / n * dot;
    for i in 0..x.len() {
        dx[i] += dy[i] * gain[i] * inv - k * x[i];
    }
}

/// Rotation angles for one position: per head-local pair i the angle is
/// `pos * base^(-2i/head_dim)`.
pub(crate) fn rope_angles(
    pos: usize,
    head_dim: usize,
    base: f64,
    cos: &mut [f64],
    sin: &mut [f64],
) {
    let half = head_dim / 2;
    for i in 0..half {
        let freq = base.powf(-2.0 * i as f64 / head_dim as f64);
        let angle = pos as f64 * freq;
        cos[i] = angle.cos();
        sin[i] = angle.sin();
    }
}

/// Applies the pairwise 2D rotations in place across all heads of `x`
/// (length d_model). `inverse` rotates by the negated angle (the backward).
pub(crate) fn rope_rotate<T: Real>(
    x: &mut [T],
    head_dim: usize,
    cos: &[f64],
    sin: &[f64],
    inverse: bool,
) {
    let half = head_dim / 2;
    for head in x.chunks_mut(head_dim) {
        for i in 0..half {
            let c = T::from_f64(cos[i]);
            let s = T::from_f64(if inverse { -sin[i] } else { sin[i] });
            let a = head[2 * i];
            let b = head[2 * i + 1];
            head[2 * i] = a * c - b * s;
            head[2 * i + 1] = a * s + b * c;
        }
    }
}

/// Rotary embedding of a query/key vector at `position`. Positions are
/// cache-relative during streaming; position 0 is the identity.
pub fn rope<T: Real>(qk: &[T], position: usize, head_dim: usize, base: f64) -> Vec<T> {
    let mut out = qk.to_vec();
    let half = head_dim / 2;
    let mut cos = vec![0.0; half];
    let mut sin = vec![0.0; half];
    rope_angles(position, head_dim, base, &mut cos, &mut sin);
    rope_rotate(&mut out, head_dim, &cos, &sin, false);
    out
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    T::ONE / (T::ONE + (-z).exp())
}

#[inline]
pub(crate) fn silu<T: Real>(z: T) -> T {
    z * sigmoid(z)
}

#[inline]
pub(crate) fn silu_prime<T: Real>(z: T) -> T {
    let s = sigmoid(z);
    s * (T::ONE + z * (T::ONE - s))
}

/// Numerically stable in-place softmax.
pub(crate) fn softmax_inplace<T: Real>(scores: &mut [T]) {
    let mut max = scores[0];
    for &s in scores.iter() {
        if s > max {
            max = s;
        }
    }
    let mut sum = T::ZERO;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    let inv = T::ONE / sum;
    for s in scores.iter_mut() {
        *s *= inv;
    }
}

// ---- full-sequence forward/backward ---------------------------------------

pub(crate) struct LayerCache<T> {
    x_in: Vec<T>,
    inv1: Vec<T>,
    n1: Vec<T>,
    qr: Vec<T>,
    kr: Vec<T>,
    v: Vec<T>,
    /// Attention weights, `[head][t][s]` flattened, zero above the diagonal.
    aw: Vec<T>,
    ctx: Vec<T>,
    x2: Vec<T>,
    inv2: Vec<T>,
    n2: Vec<T>,
    gpre: Vec<T>,
    upre: Vec<T>,
    act: Vec<T>,
    drop_attn: Option<Vec<T>>,
    drop_ffn: Option<Vec<T>>,
}

pub(crate) struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    invf: Vec<T>,
    /// Final normed hidden states; logits for position t are `embed * nf[t]`.
    pub(crate) nf: Vec<T>,
}

impl<T: Real> Model<T> {
    fn rope_tables(&self, len: usize) -> (Vec<f64>, Vec<f64>) {
        let half = self.config.head_dim() / 2;
        let mut cos = vec![0.0; len * half];
        let mut sin = vec![0.0; len * half];
        for t in 0..len {
            rope_angles(
                t,
                self.config.head_dim(),
                self.config.rope_base,
                &mut cos[t * half..(t + 1) * half],
                &mut sin[t * half..(t + 1) * half],
            );
        }
        (cos, sin)
    }

    /// Full causal forward pass with positions 0..len, keeping every
    /// intermediate needed by the backward pass.
    pub(crate) fn forward_cached(
        &self,
        tokens: &[u32],
        dropout_rng: Option<&mut Rng>,
    ) -> ForwardCache<T> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let nh = cfg.n_heads;
        let f = cfg.ffn_hidden;
        let t_len = tokens.len();
        let half = hd / 2;
        let (cos, sin) = self.rope_tables(t_len);
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());
        let mut dropout_rng = dropout_rng;

        let mut x = vec![T::ZERO; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            debug_assert!((tok as usize) < cfg.vocab_size, "token id out of range");
            let row = &self.params.embed[tok as usize * d..(tok as usize + 1) * d];
            x[t * d..(t + 1) * d].copy_from_slice(row);
        }

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lp in &self.params.layers {
            let mut lc = LayerCache {
                x_in: x.clone(),
                inv1: vec![T::ZERO; t_len],
                n1: vec![T::ZERO; t_len * d],
                qr: vec![T::ZERO; t_len * d],
                kr: vec![T::ZERO; t_len * d],
                v: vec![T::ZERO; t_len * d],
                aw: vec![T::ZERO; nh * t_len * t_len],
                ctx: vec![T::ZERO; t_len * d],
                x2: vec![T::ZERO; t_len * d],
                inv2: vec![T::ZERO; t_len],
                n2: vec![T::ZERO; t_len * d],
                gpre: vec![T::ZERO; t_len * f],
                upre: vec![T::ZERO; t_len * f],
                act: vec![T::ZERO; t_len * f],
                drop_attn: None,
                drop_ffn: None,
            };

            for t in 0..t_len {
                lc.inv1[t] = rmsnorm(
                    &lc.x_in[t * d..(t + 1) * d],
                    &lp.attn_norm,
                    &mut lc.n1[t * d..(t + 1) * d],
                );
                let n1 = &lc.n1[t * d..(t + 1) * d];
                matvec(&lp.wq, n1, d, d, &mut lc.qr[t * d..(t + 1) * d]);
                matvec(&lp.wk, n1, d, d, &mut lc.kr[t * d..(t + 1) * d]);
                matvec(&lp.wv, n1, d, d, &mut lc.v[t * d..(t + 1) * d]);
                let (c, s) = (
                    &cos[t * half..(t + 1) * half],
                    &sin[t * half..(t + 1) * half],
                );
                rope_rotate(&mut lc.qr[t * d..(t + 1) * d], hd, c, s, false);
                rope_rotate(&mut lc.kr[t * d..(t + 1) * d], hd, c, s, false);
            }

            for h in 0..nh {
                let off = h * hd;
                for t in 0..t_len {
                    let q = &lc.qr[t * d + off..t * d + off + hd];
                    let row_start = (h * t_len + t) * t_len;
                    let aw_row = &mut lc.aw[row_start..row_start + t_len];
                    for s in 0..=t {
                        let k = &lc.kr[s * d + off..s * d + off + hd];
                        let mut acc = T::ZERO;
                        for i in 0..hd {
                            acc += q[i] * k[i];
                        }
                        aw_row[s] = acc * scale;
                    }
                    softmax_inplace(&mut aw_row[..=t]);
                    let ctx = &mut lc.ctx[t * d + off..t * d + off + hd];
                    for s in 0..=t {
                        let w = aw_row[s];
                        let v = &lc.v[s * d + off..s * d + off + hd];
                        for i in 0..hd {
                            ctx[i] += w * v[i];
                        }
                    }
                }
            }

            let drop_p = cfg.dropout as f64;
            let make_mask = |len: usize, rng: &mut Option<&mut Rng>| -> Option<Vec<T>> {
                let rng = rng.as_deref_mut()?;
                if drop_p <= 0.0 {
                    return None;
                }
                let keep = 1.0 - drop_p;
                Some(
                    (0..len)
                        .map(|_| {
                            if rng.next_f64() < keep {
                                T::from_f64(1.0 / keep)
                            } else {
                                T::ZERO
                            }
                        })
                        .collect(),
                )
            };
            lc.drop_attn = make_mask(t_len * d, &mut dropout_rng);

            for t in 0..t_len {
                let mut ao = vec![T::ZERO; d];
                matvec(&lp.wo, &lc.ctx[t * d..(t + 1) * d], d, d, &mut ao);
                if let Some(mask) = &lc.drop_attn {
                    for i in 0..d {
                        ao[i] *= mask[t * d + i];
                    }
                }
                for i in 0..d {
                    lc.x2[t * d + i] = lc.x_in[t * d + i] + ao[i];
                }
                lc.inv2[t] = rmsnorm(
                    &lc.x2[t * d..(t + 1) * d],
                    &lp.ffn_norm,
                    &mut lc.n2[t * d..(t + 1) * d],
                );
                let n2 = &lc.n2[t * d..(t + 1) * d];
                matvec(&lp.w_gate, n2, f, d, &mut lc.gpre[t * f..(t + 1) * f]);
                matvec(&lp.w_up, n2, f, d, &mut lc.upre[t * f..(t + 1) * f]);
                for i in 0..f {
                    lc.act[t * f + i] = silu(lc.gpre[t * f + i]) * lc.upre[t * f + i];
                }
            }

            lc.drop_ffn = make_mask(t_len * d, &mut dropout_rng);
            for t in 0..t_len {
                let mut dn = vec![T::ZERO; d];
                matvec(&lp.w_down, &lc.act[t * f..(t + 1) * f], d, f, &mut dn);
                if let Some(mask) = &lc.drop_ffn {
                    for i in 0..d {
                        dn[i] *= mask[t * d + i];
                    }
                }
                for i in 0..d {
                    x[t * d + i] = lc.x2[t * d + i] + dn[i];
                }
            }
            layers.push(lc);
        }

        let mut invf = vec![T::ZERO; t_len];
        let mut nf = vec![T::ZERO; t_len * d];
        for t in 0..t_len {
            invf[t] = rmsnorm(
                &x[t * d..(t + 1) * d],
                &self.params.final_norm,
                &mut nf[t * d..(t + 1) * d],
            );
        }
        ForwardCache {
            layers,
            x_final: x,
            invf,
            nf,
        }
    }

    /// Logits for every input position; positions are 0..len (prepend the
    /// sink yourself if the stream carries one). Causal: logits at position
    /// i depend only on tokens 0..=i.
    pub fn forward_full(&self, tokens: &[u32]) -> Vec<Vec<T>> {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let cache = self.forward_cached(tokens, None);
        (0..tokens.len())
            .map(|t| {
                let mut logits = vec![T::ZERO; v];
                matvec(
                    &self.params.embed,
                    &cache.nf[t * d..(t + 1) * d],
                    v,
                    d,
                    &mut logits,
                );
                logits
            })
            .collect()
    }

    /// Mean next-token cross-entropy over `content`, with the sink prepended
    /// and excluded from the targets.
    pub fn loss(&self, content: &[u32]) -> f64 {
        assert!(content.len() >= 2, "loss needs at least two tokens");
        let mut inputs = Vec::with_capacity(content.len());
        inputs.push(crate::vocab::SINK_ID as u32);
        inputs.extend_from_slice(&content[..content.len() - 1]);
        let cache = self.forward_cached(&inputs, None);
        self.ce_from_cache(&cache, content, None)
    }

    /// Streams logits row by row from the cache: returns the mean CE and,
    /// when `grads` is given, accumulates d(embed) and fills d(nf).
    fn ce_from_cache(
        &self,
        cache: &ForwardCache<T>,
        targets: &[u32],
        mut grads: Option<(&mut ParamSet<T>, &mut Vec<T>)>,
    ) -> f64 {
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let n = targets.len();
        let inv_n = 1.0 / n as f64;
        let mut logits = vec![T::ZERO; v];
        let mut total = 0.0f64;
        for (t, &target) in targets.iter().enumerate() {
            let nf = &cache.nf[t * d..(t + 1) * d];
            matvec(&self.params.embed, nf, v, d, &mut logits);
            let mut max = logits[0];
            for &z in &logits {
                if z > max {
                    max = z;
                }
            }
            let mut sum = 0.0f64;
            for &z in &logits {
                sum += (z - max).to_f64().exp();
            }
            let lse = max.to_f64() + sum.ln();
            total += lse - logits[target as usize].to_f64();

            if let Some((g, dnf)) = grads.as_mut() {
                let dnf_row = &mut dnf[t * d..(t + 1) * d];
                for (vi, &z) in logits.iter().enumerate() {
                    let mut p = ((z - max).to_f64().exp() / sum) * inv_n;
                    if vi == target as usize {
                        p -= inv_n;
                    }
                    let p = T::from_f64(p);
                    let erow = &self.params.embed[vi * d..(vi + 1) * d];
                    let grow = &mut g.embed[vi * d..(vi + 1) * d];
                    for i in 0..d {
                        grow[i] += p * nf[i];
                        dnf_row[i] += p * erow[i];
                    }
                }
            }
        }
        total * inv_n
    }

    /// Forward + backward over one sequence: prepends the sink, computes the
    /// mean next-token CE, and accumulates gradients into `grads`.
    pub fn loss_and_grad(
        &self,
        content: &[u32],
        grads: &mut ParamSet<T>,
        dropout_rng: Option<&mut Rng>,
    ) -> f64 {
        assert!(content.len() >= 2);
        let cfg = &self.config;
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let nh = cfg.n_heads;
        let f = cfg.ffn_hidden;
        let half = hd / 2;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());

        let mut inputs = Vec::with_capacity(content.len());
        inputs.push(crate::vocab::SINK_ID as u32);
        inputs.extend_from_slice(&content[..content.len() - 1]);
        let t_len = inputs.len();
        let cache = self.forward_cached(&inputs, dropout_rng);

        let mut dnf = vec![T::ZERO; t_len * d];
        let loss = self.ce_from_cache(&cache, content, Some((grads, &mut dnf)));

        let mut dx = vec![T::ZERO; t_len * d];
        for t in 0..t_len {
            rmsnorm_backward(
                &dnf[t * d..(t + 1) * d],
                &cache.x_final[t * d..(t + 1) * d],
                &self.params.final_norm,
                cache.invf[t],
                &mut grads.final_norm,
                &mut dx[t * d..(t + 1) * d],
            );
        }

        let (cos, sin) = self.rope_tables(t_len);
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            let lp = &self.params.layers[l];
            let gl = &mut grads.layers[l];

            // ffn branch; dx holds d(x3) and doubles as the residual carry
            let mut d_n2 = vec![T::ZERO; t_len * d];
            for t in 0..t_len {
                let mut d_dn = dx[t * d..(t + 1) * d].to_vec();
                if let Some(mask) = &lc.drop_ffn {
                    for i in 0..d {
                        d_dn[i] *= mask[t * d + i];
                    }
                }
                outer_acc(&mut gl.w_down, &d_dn, &lc.act[t * f..(t + 1) * f], d, f);
                let mut d_act = vec![T::ZERO; f];
                matvec_t_acc(&lp.w_down, &d_dn, d, f, &mut d_act);
                let mut d_g = vec![T::ZERO; f];
                let mut d_u = vec![T::ZERO; f];
                for i in 0..f {
                    let g = lc.gpre[t * f + i];
                    d_g[i] = d_act[i] * lc.upre[t * f + i] * silu_prime(g);
                    d_u[i] = d_act[i] * silu(g);
                }
                let n2 = &lc.n2[t * d..(t + 1) * d];
                outer_acc(&mut gl.w_gate, &d_g, n2, f, d);
                outer_acc(&mut gl.w_up, &d_u, n2, f, d);
                matvec_t_acc(&lp.w_gate, &d_g, f, d, &mut d_n2[t * d..(t + 1) * d]);
                matvec_t_acc(&lp.w_up, &d_u, f, d, &mut d_n2[t * d..(t + 1) * d]);
            }
            for t in 0..t_len {
                rmsnorm_backward(
                    &d_n2[t * d..(t + 1) * d],
                    &lc.x2[t * d..(t + 1) * d],
                    &lp.ffn_norm,
                    lc.inv2[t],
                    &mut gl.ffn_norm,
                    &mut dx[t * d..(t + 1) * d],
                );
            }

            // attention branch
            let mut d_ctx = vec![T::ZERO; t_len * d];
            for t in 0..t_len {
                let mut d_ao = dx[t * d..(t + 1) * d].to_vec();
                if let Some(mask) = &lc.drop_attn {
                    for i in 0..d {
                        d_ao[i] *= mask[t * d + i];
                    }
                }
                outer_acc(&mut gl.wo, &d_ao, &lc.ctx[t * d..(t + 1) * d], d, d);
                matvec_t_acc(&lp.wo, &d_ao, d, d, &mut d_ctx[t * d..(t + 1) * d]);
            }

            let mut d_qr = vec![T::ZERO; t_len * d];
            let mut d_kr = vec![T::ZERO; t_len * d];
            let mut d_v = vec![T::ZERO; t_len * d];
            for h in 0..nh {
                let off = h * hd;
                for t in 0..t_len {
                    let row_start = (h * t_len + t) * t_len;
                    let aw_row = &lc.aw[row_start..row_start + t_len];
                    let dctx = &d_ctx[t * d + off..t * d + off + hd];
                    let mut d_aw = vec![T::ZERO; t + 1];
                    for s in 0..=t {
                        let v = &lc.v[s * d + off..s * d + off + hd];
                        let mut acc = T::ZERO;
                        for i in 0..hd {
                            acc += dctx[i] * v[i];
                        }
                        d_aw[s] = acc;
                        let dv = &mut d_v[s * d + off..s * d + off + hd];
                        let w = aw_row[s];
                        for i in 0..hd {
                            dv[i] += w * dctx[i];
                        }
                    }
                    let mut dot = T::ZERO;
                    for s in 0..=t {
                        dot += aw_row[s] * d_aw[s];
                    }
                    let q = &lc.qr[t * d + off..t * d + off + hd];
                    for s in 0..=t {
                        let dscore = aw_row[s] * (d_aw[s] - dot) * scale;
                        let k = &lc.kr[s * d + off..s * d + off + hd];
                        {
                            let dq = &mut d_qr[t * d + off..t * d + off + hd];
                            for i in 0..hd {
                                dq[i] += dscore * k[i];
                            }
                        }
                        let dk = &mut d_kr[s * d + off..s * d + off + hd];
                        for i in 0..hd {
                            dk[i] += dscore * q[i];
                        }
                    }
                }
            }

            let mut d_n1 = vec![T::ZERO; t_len * d];
            for t in 0..t_len {
                let (c, s) = (
                    &cos[t * half..(t + 1) * half],
                    &sin[t * half..(t + 1) * half],
                );
                rope_rotate(&mut d_qr[t * d..(t + 1) * d], hd, c, s, true);
                rope_rotate(&mut d_kr[t * d..(t + 1) * d], hd, c, s, true);
                let n1 = &lc.n1[t * d..(t + 1) * d];
                outer_acc(&mut gl.wq, &d_qr[t * d..(t + 1) * d], n1, d, d);
                outer_acc(&mut gl.wk, &d_kr[t * d..(t + 1) * d], n1, d, d);
                outer_acc(&mut gl.wv, &d_v[t * d..(t + 1) * d], n1, d, d);
                matvec_t_acc(
                    &lp.wq,
                    &d_qr[t * d..(t + 1) * d],
                    d,
                    d,
                    &mut d_n1[t * d..(t + 1) * d],
                );
                matvec_t_acc(
                    &lp.wk,
                    &d_kr[t * d..(t + 1) * d],
                    d,
                    d,
                    &mut d_n1[t * d..(t + 1) * d],
                );
                matvec_t_acc(
                    &lp.wv,
                    &d_v[t * d..(t + 1) * d],
                    d,
                    d,
                    &mut d_n1[t * d..(t + 1) * d],
                );
            }
            for t in 0..t_len {
                rmsnorm_backward(
                    &d_n1[t * d..(t + 1) * d],
                    &lc.x_in[t * d..(t + 1) * d],
                    &lp.attn_norm,
                    lc.inv1[t],
                    &mut gl.attn_norm,
                    &mut dx[t * d..(t + 1) * d],
                );
            }
        }

        for (t, &tok) in inputs.iter().enumerate() {
            let grow = &mut grads.embed[tok as usize * d..(tok as usize + 1) * d];
            for i in 0..d {
                grow[i] += dx[t * d + i];
            }
        }
        loss
    }
}
