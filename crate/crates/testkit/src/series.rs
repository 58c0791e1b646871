//! Synthetic stochastic processes with known exponents, for estimator
//! validation, plus a couple of distribution constants used by tests.

use oflow_core::rng::Rng;

pub fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| rng.gauss()).collect()
}

/// Standard Laplace (b = 1); excess kurtosis is exactly 3.
pub fn laplace(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let u = rng.next_f64() - 0.5;
            -u.signum() * (1.0 - 2.0 * u.abs()).ln()
        })
        .collect()
}

/// Random walk: cumulative sum of unit Gaussian increments.
pub fn random_walk(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let mut acc = 0.0;
    (0..n)
        .map(|_| {
            acc += rng.gauss();
            acc
        })
        .collect()
}

/// AR(1) process x_t = phi x_{t-1} + eps_t with unit-variance innovations.
pub fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    // burn-in to forget the zero start
    for _ in 0..100 {
        x = phi * x + rng.gauss();
    }
    for _ in 0..n {
        x = phi * x + rng.gauss();
        out.push(x);
    }
    out
}

/// Exact fractional Gaussian noise via the Hosking (Durbin-Levinson)
/// recursion. O(n^2) time, which is fine at test scale.
///
/// The autocovariance of fGn with Hurst index `h` is
/// gamma(k) = ((k+1)^{2h} - 2 k^{2h} + (k-1)^{2h}) / 2.
pub fn fgn_hosking(h: f64, n: usize, seed: u64) -> Vec<f64> {
    assert!(h > 0.0 && h < 1.0);
    let mut rng = Rng::new(seed);
    let gamma = |k: usize| -> f64 {
        if k == 0 {
            return 1.0;
        }
        let k = k as f64;
        0.5 * ((k + 1.0).powf(2.0 * h) - 2.0 * k.powf(2.0 * h) + (k - 1.0).powf(2.0 * h))
    };

    let mut x = Vec::with_capacity(n);
    x.push(rng.gauss());
    let mut phi: Vec<f64> = Vec::new();
    let mut v = 1.0;
    for t in 1..n {
        let mut acc = gamma(t);
        for (j, &p) in phi.iter().enumerate() {
            acc -= p * gamma(t - 1 - j);
        }
        let k = acc / v;
        let prev = phi.clone();
        phi.push(0.0);
        for j in 0..t {
            phi[j] = if j < t - 1 {
                prev[j] - k * prev[t - 2 - j]
            } else {
                k
            };
        }
        v *= 1.0 - k * k;
        let mean: f64 = phi.iter().enumerate().map(|(j, &p)| p * x[t - 1 - j]).sum();
        x.push(mean + v.max(0.0).sqrt() * rng.gauss());
    }
    x
}

/// Token stream from a sharpened first-order Markov chain over ids
/// `[first, first + n_states)`. Locally predictable, so a short attention
/// window suffices for near-optimal next-token prediction; used as the
/// corpus for streaming-loss experiments.
///
/// `chain_seed` fixes the transition matrix, `path_seed` the trajectory:
/// held-out data shares the chain but not the path.
pub fn markov_tokens(
    n_states: usize,
    first: u32,
    len: usize,
    chain_seed: u64,
    path_seed: u64,
) -> Vec<u32> {
    let mut chain_rng = Rng::new(chain_seed);
    // Random row-stochastic matrix, sharpened so each state has ~2-3
    // plausible successors.
    let mut rows = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let mut row: Vec<f64> = (0..n_states)
            .map(|_| chain_rng.next_f64().powi(6))
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= total);
        rows.push(row);
    }
    let mut rng = Rng::new(path_seed);
    let mut state = 0usize;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let u = rng.next_f64();
        let mut cum = 0.0;
        let mut next = n_states - 1;
        for (j, &w) in rows[state].iter().enumerate() {
            cum += w;
            if u < cum {
                next = j;
                break;
            }
        }
        state = next;
        out.push(first + state as u32);
    }
    out
}

/// Second-order Markov token stream over ids `[first, first + n_states)`.
/// Optimal prediction needs exactly the two previous tokens, which forces a
/// trained model to move attention mass around; that makes the dedicated
/// sink token load-bearing in streaming-ablation experiments.
pub fn markov2_tokens(
    n_states: usize,
    first: u32,
    len: usize,
    chain_seed: u64,
    path_seed: u64,
) -> Vec<u32> {
    let mut chain_rng = Rng::new(chain_seed);
    let mut rows = Vec::with_capacity(n_states * n_states);
    for _ in 0..n_states * n_states {
        let mut row: Vec<f64> = (0..n_states)
            .map(|_| chain_rng.next_f64().powi(8))
            .collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= total);
        rows.push(row);
    }
    let mut rng = Rng::new(path_seed);
    let (mut p2, mut p1) = (0usize, 0usize);
    (0..len)
        .map(|_| {
            let row = &rows[p2 * n_states + p1];
            let u = rng.next_f64();
            let mut cum = 0.0;
            let mut next = n_states - 1;
            for (j, &w) in row.iter().enumerate() {
                cum += w;
                if u < cum {
                    next = j;
                    break;
                }
            }
            p2 = p1;
            p1 = next;
            first + next as u32
        })
        .collect()
}

/// Upper 1% critical value of the chi-squared distribution via the
/// Wilson-Hilferty cube approximation (accurate to ~0.1% for df >= 5).
pub fn chi2_crit_99(df: usize) -> f64 {
    let k = df as f64;
    let z = 2.326_347_874_040_841; // Phi^{-1}(0.99)
    let t = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    k * t * t * t
}
