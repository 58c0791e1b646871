//! Constrained nucleus sampling.
//!
//! Pipeline: mask illegal ids to -inf, divide logits by temperature, softmax,
//! keep the smallest probability-sorted prefix whose cumulative mass reaches
//! top-p (always at least one id), renormalize, draw with the seeded
//! generator. Ties sort by (probability desc, id asc) for cross-platform
//! determinism.

use serde::{Deserialize, Serialize};

use super::{Model, Real, StreamState};
use crate::rng::Rng;
use crate::vocab::{SlotMask, TokenizedMessage, Vocabulary, MSG_TOKENS};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SampleParams {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            temperature: 1.02,
            top_p: 0.98,
            seed: 0,
        }
    }
}

impl SampleParams {
    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.temperature > 0.0) {
            return Err(SampleError::BadTemperature(self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SampleError::BadTopP(self.top_p));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleError {
    BadTemperature(f64),
    BadTopP(f64),
    NoLegalTokens,
}

impl core::fmt::Display for SampleError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::BadTemperature(t) => write!(f, "temperature {t} must be > 0"),
            Self::BadTopP(p) => write!(f, "top_p {p} must be in (0, 1]"),
            Self::NoLegalTokens => write!(f, "no legal token has finite probability"),
        }
    }
}

impl std::error::Error for SampleError {}

/// Draws one token id restricted to `legal`.
pub fn sample_token<T: Real>(
    logits: &[T],
    params: &SampleParams,
    legal: &SlotMask,
    rng: &mut Rng,
) -> Result<u16, SampleError> {
    params.validate()?;
    // Masking to -inf and softmaxing over the survivors is the same thing as
    // softmaxing over the legal set only.
    let mut cand: Vec<(u16, f64)> = legal
        .ids()
        .map(|id| (id, logits[id as usize].to_f64() / params.temperature))
        .filter(|(_, z)| z.is_finite())
        .collect();
    if cand.is_empty() {
        return Err(SampleError::NoLegalTokens);
    }
    let zmax = cand
        .iter()
        .map(|&(_, z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (_, z) in cand.iter_mut() {
        *z = (*z - zmax).exp();
        total += *z;
    }
    for (_, z) in cand.iter_mut() {
        *z /= total;
    }

    // Nucleus truncation. With top_p = 1 the nucleus is the whole legal set
    // and the sort is skipped. Ties order by (probability desc, id asc); the
    // comparator is total, so the unstable sort is still deterministic.
    if params.top_p < 1.0 {
        cand.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut cum = 0.0;
        let mut keep = cand.len();
        for (i, &(_, p)) in cand.iter().enumerate() {
            cum += p;
            if cum >= params.top_p {
                keep = i + 1;
                break;
            }
        }
        cand.truncate(keep.max(1));
    }
    let mass: f64 = cand.iter().map(|&(_, p)| p).sum();

    let mut dart = rng.next_f64() * mass;
    let mut last_positive = None;
    for &(id, p) in &cand {
        if p <= 0.0 {
            continue;
        }
        last_positive = Some(id);
        dart -= p;
        if dart <= 0.0 {
            return Ok(id);
        }
    }
    last_positive.ok_or(SampleError::NoLegalTokens)
}

/// Autoregressively samples the 24 slots of one message, constraining each
/// slot to its legal id set. `last_logits` must be the logits emitted after
/// the previous context token; returns the tokens and the logits that follow
/// the completed message.
pub fn generate_message<T: Real>(
    model: &Model<T>,
    state: &mut StreamState<T>,
    last_logits: &[T],
    vocab: &Vocabulary,
    params: &SampleParams,
    rng: &mut Rng,
) -> Result<(TokenizedMessage, Vec<T>), SampleError> {
    let mut tokens = [0u16; MSG_TOKENS];
    let mut logits: Vec<T> = last_logits.to_vec();
    for slot in 0..MSG_TOKENS {
        let id = sample_token(&logits, params, vocab.slot_mask(slot), rng)?;
        tokens[slot] = id;
        logits = model
            .forward_stream(&[id as u32], state)
            .pop()
            .expect("one logits row per fed token");
    }
    Ok((TokenizedMessage(tokens), logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::NAN_ID;

    fn mask(start: u16, len: u16, nan: bool) -> SlotMask {
        SlotMask {
            start,
            len,
            nan_allowed: nan,
        }
    }

    #[test]
    fn temperature_limit_is_argmax() {
        let logits: Vec<f64> = vec![0.1, 2.0, -1.0, 1.9, 0.0, 5.0];
        let legal = mask(0, 5, false); // id 5 (the global max) is illegal
        let mut rng = Rng::new(1);
        let params = SampleParams {
            temperature: 1e-6,
            top_p: 1.0,
            seed: 0,
        };
        for _ in 0..50 {
            assert_eq!(sample_token(&logits, &params, &legal, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn illegal_ids_never_emitted() {
        let mut rng = Rng::new(2);
        let logits: Vec<f64> = (0..64).map(|i| (i % 7) as f64 * 0.3).collect();
        let legal = mask(10, 4, true);
        let params = SampleParams {
            temperature: 1.02,
            top_p: 0.98,
            seed: 0,
        };
        for _ in 0..10_000 {
            let id = sample_token(&logits, &params, &legal, &mut rng).unwrap();
            assert!(legal.contains(id));
            assert!(id == NAN_ID || (10..14).contains(&id));
        }
    }

    #[test]
    fn top_p_keeps_smallest_covering_prefix() {
        // probs ~ [0.6, 0.3, 0.1]: top_p=0.85 keeps exactly the first two.
        let logits = vec![0.6f64.ln(), 0.3f64.ln(), 0.1f64.ln()];
        let legal = mask(0, 3, false);
        let params = SampleParams {
            temperature: 1.0,
            top_p: 0.85,
            seed: 0,
        };
        let mut rng = Rng::new(3);
        let mut seen = [0u32; 3];
        for _ in 0..20_000 {
            seen[sample_token(&logits, &params, &legal, &mut rng).unwrap() as usize] += 1;
        }
        assert_eq!(seen[2], 0, "tail id must be truncated");
        // renormalized: P(0) = 2/3
        let p0 = seen[0] as f64 / 20_000.0;
        assert!((p0 - 2.0 / 3.0).abs() < 0.02, "p0 {p0}");
    }

    #[test]
    fn always_keeps_at_least_one_id() {
        let logits = vec![0.0f64; 4];
        let legal = mask(2, 1, false);
        let params = SampleParams {
            temperature: 5.0,
            top_p: 1e-12,
            seed: 0,
        };
        let mut rng = Rng::new(4);
        assert_eq!(sample_token(&logits, &params, &legal, &mut rng).unwrap(), 2);
    }

    #[test]
    fn neg_infinite_legal_set_errors() {
        let logits = vec![f64::NEG_INFINITY; 4];
        let legal = mask(0, 4, false);
        let params = SampleParams::default();
        let mut rng = Rng::new(5);
        assert_eq!(
            sample_token(&logits, &params, &legal, &mut rng),
            Err(SampleError::NoLegalTokens)
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let logits = vec![0.0f64; 4];
        let legal = mask(0, 4, false);
        let mut rng = Rng::new(6);
        assert!(sample_token(
            &logits,
            &SampleParams {
                temperature: 0.0,
                top_p: 0.9,
                seed: 0
            },
            &legal,
            &mut rng
        )
        .is_err());
        assert!(sample_token(
            &logits,
            &SampleParams {
                temperature: 1.0,
                top_p: 1.5,
                seed: 0
            },
            &legal,
            &mut rng
        )
        .is_err());
    }
}
