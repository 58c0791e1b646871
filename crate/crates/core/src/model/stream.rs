//! Rolling KV cache for streaming inference.
//!
//! Keys are cached unrotated; at attention time each entry is rotated at its
//! current cache index, so rotary positions are cache-relative and reassign
//! themselves automatically after eviction. Slot 0 pins the sink token's K/V
//! when the stream carries one: it is never evicted, which keeps the softmax
//! a place to offload attention mass after the window starts rolling.

use super::{
    matvec, rmsnorm, rope_angles, rope_rotate, silu, softmax_inplace, Model, ModelConfig, Real,
};

#[derive(Clone, Debug)]
pub struct StreamState<T> {
    /// Per-layer unrotated keys and values, flat `[len * d_model]`.
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    len: usize,
    /// Maximum number of content (non-sink) entries.
    capacity: usize,
    pin_sink: bool,
    evicted: u64,
    processed: u64,
}

impl<T: Real> StreamState<T> {
    /// `pin_sink` reserves slot 0 for the first token fed, which is then
    /// never evicted. Capacity counts content tokens only.
    pub fn new(config: &ModelConfig, pin_sink: bool) -> Self {
        Self {
            k: vec![Vec::new(); config.n_layers],
            v: vec![Vec::new(); config.n_layers],
            len: 0,
            capacity: config.max_context_tokens,
            pin_sink,
            evicted: 0,
            processed: 0,
        }
    }

    /// Cache rows currently held, including the pinned sink.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn pinned(&self) -> usize {
        (self.pin_sink && self.len > 0) as usize
    }

    /// Non-sink entries currently held.
    pub fn content_len(&self) -> usize {
        self.len - self.pinned()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    /// Total tokens ever fed through this state.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Rollback point for [`truncate`](Self::truncate).
    pub fn checkpoint(&self) -> usize {
        self.len
    }

    /// Drops cache rows beyond `len` (undoes appends since a checkpoint;
    /// evictions cannot be undone).
    pub fn truncate(&mut self, len: usize, d_model: usize) {
        assert!(len <= self.len, "cannot truncate forward");
        for layer in self.k.iter_mut().chain(self.v.iter_mut()) {
            layer.truncate(len * d_model);
        }
        self.len = len;
    }

    /// Removes the `n` oldest non-sink entries.
    pub fn evict_front(&mut self, n: usize, d_model: usize) {
        let pinned = self.pinned();
        let n = n.min(self.len - pinned);
        if n == 0 {
            return;
        }
        let start = pinned * d_model;
        for layer in self.k.iter_mut().chain(self.v.iter_mut()) {
            layer.drain(start..start + n * d_model);
        }
        self.len -= n;
        self.evicted += n as u64;
    }
}

impl<T: Real> Model<T> {
    /// Feeds `tokens` (the new suffix only) through the rolling cache and
    /// returns one logits vector per token. At capacity the oldest non-sink
    /// entry is evicted before each append.
    pub fn forward_stream(&self, tokens: &[u32], st: &mut StreamState<T>) -> Vec<Vec<T>> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let nh = cfg.n_heads;
        let f = cfg.ffn_hidden;
        let half = hd / 2;
        let vsz = cfg.vocab_size;
        let scale = T::from_f64(1.0 / (hd as f64).sqrt());

        let mut out = Vec::with_capacity(tokens.len());
        let mut cos = vec![0.0; half];
        let mut sin = vec![0.0; half];
        let mut kr = vec![T::ZERO; d];

        for &tok in tokens {
            assert!((tok as usize) < vsz, "token id out of range");
            if st.content_len() == st.capacity {
                st.evict_front(1, d);
            }
            let pos = st.len; // index this token will occupy
            let mut x = self.params.embed[tok as usize * d..(tok as usize + 1) * d].to_vec();
            let mut n1 = vec![T::ZERO; d];
            let mut q = vec![T::ZERO; d];
            let mut ctx = vec![T::ZERO; d];
            let mut proj = vec![T::ZERO; d];
            let mut gpre = vec![T::ZERO; f];
            let mut upre = vec![T::ZERO; f];
            let mut act = vec![T::ZERO; f];
            let mut scores = vec![T::ZERO; (pos + 1) * nh];

            for (l, lp) in self.params.layers.iter().enumerate() {
                rmsnorm(&x, &lp.attn_norm, &mut n1);
                matvec(&lp.wq, &n1, d, d, &mut q);
                let kv_at = st.k[l].len();
                st.k[l].resize(kv_at + d, T::ZERO);
                st.v[l].resize(kv_at + d, T::ZERO);
                matvec(&lp.wk, &n1, d, d, &mut st.k[l][kv_at..kv_at + d]);
                matvec(&lp.wv, &n1, d, d, &mut st.v[l][kv_at..kv_at + d]);

                rope_angles(pos, hd, cfg.rope_base, &mut cos, &mut sin);
                rope_rotate(&mut q, hd, &cos, &sin, false);

                let win = pos + 1;
                // Rotate each cached key at its *current* index: positions
                // are cache-relative, so they reassign after eviction.
                for s in 0..win {
                    rope_angles(s, hd, cfg.rope_base, &mut cos, &mut sin);
                    kr.copy_from_slice(&st.k[l][s * d..(s + 1) * d]);
                    rope_rotate(&mut kr, hd, &cos, &sin, false);
                    for h in 0..nh {
                        let off = h * hd;
                        let mut acc = T::ZERO;
                        for i in 0..hd {
                            acc += q[off + i] * kr[off + i];
                        }
                        scores[h * win + s] = acc * scale;
                    }
                }
                ctx.iter_mut().for_each(|c| *c = T::ZERO);
                for h in 0..nh {
                    let off = h * hd;
                    let row = &mut scores[h * win..(h + 1) * win];
                    softmax_inplace(row);
                    let chead = &mut ctx[off..off + hd];
                    for s in 0..win {
                        let w = row[s];
                        let vrow = &st.v[l][s * d + off..s * d + off + hd];
                        for i in 0..hd {
                            chead[i] += w * vrow[i];
                        }
                    }
                }
                matvec(&lp.wo, &ctx, d, d, &mut proj);
                for i in 0..d {
                    x[i] += proj[i];
                }
                rmsnorm(&x, &lp.ffn_norm, &mut n1);
                matvec(&lp.w_gate, &n1, f, d, &mut gpre);
                matvec(&lp.w_up, &n1, f, d, &mut upre);
                for i in 0..f {
                    act[i] = silu(gpre[i]) * upre[i];
                }
                matvec(&lp.w_down, &act, d, f, &mut proj);
                for i in 0..d {
                    x[i] += proj[i];
                }
            }
            st.len += 1;
            st.processed += 1;

            let mut nf = vec![T::ZERO; d];
            rmsnorm(&x, &self.params.final_norm, &mut nf);
            let mut logits = vec![T::ZERO; vsz];
            matvec(&self.params.embed, &nf, vsz, d, &mut logits);
            out.push(logits);
        }
        out
    }
}
