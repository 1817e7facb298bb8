//! Seeded Monte Carlo with reproducible substreams.
//!
//! Work is split into a fixed number of chunks, each driven by its own ChaCha
//! stream derived from `(seed, key, chunk)`. Chunk sums are combined by a
//! fixed-order pairwise reduction, so results are bitwise identical for any
//! rayon thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type McRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for the substream identified by `keys` under `seed`.
pub fn stream_rng(seed: u64, keys: &[u64]) -> McRng {
    let mut h = mix(seed);
    for &k in keys {
        h = mix(h ^ mix(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McPlan {
    /// Number of calls to the sampling closure.
    pub draws: usize,
    pub seed: u64,
    pub chunks: usize,
}

impl McPlan {
    pub fn new(draws: usize, seed: u64) -> Self {
        Self {
            draws: draws.max(1),
            seed,
            chunks: 64,
        }
    }

    fn chunk_range(&self, c: usize) -> (usize, usize) {
        let chunks = self.chunks.clamp(1, self.draws);
        let lo = self.draws * c / chunks;
        let hi = self.draws * (c + 1) / chunks;
        (lo, hi)
    }
}

/// Sample mean and its standard error for each of `K` components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<const K: usize> {
    pub mean: [f64; K],
    pub stderr: [f64; K],
}

/// Estimate `E[f]` where each call of `f` writes one draw into the provided
/// zeroed buffer. Antithetic pairs belong inside a single call.
pub fn estimate<const K: usize, F>(plan: &McPlan, key: u64, f: F) -> McEstimate<K>
where
    F: Fn(&mut McRng, &mut [f64; K]) + Sync,
{
    let chunks = plan.chunks.clamp(1, plan.draws);
    let partial: Vec<([f64; K], [f64; K])> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let (lo, hi) = plan.chunk_range(c);
            let mut rng = stream_rng(plan.seed, &[key, c as u64]);
            let mut sum = [0.0; K];
            let mut sq = [0.0; K];
            for _ in lo..hi {
                let mut v = [0.0; K];
                f(&mut rng, &mut v);
                for k in 0..K {
                    sum[k] += v[k];
                    sq[k] += v[k] * v[k];
                }
            }
            (sum, sq)
        })
        .collect();
    let (sum, sq) = pairwise(&partial);
    let n = plan.draws as f64;
    let mut mean = [0.0; K];
    let mut stderr = [0.0; K];
    for k in 0..K {
        mean[k] = sum[k] / n;
        let var = if plan.draws > 1 {
            ((sq[k] - n * mean[k] * mean[k]) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        stderr[k] = (var / n).sqrt();
    }
    McEstimate { mean, stderr }
}

fn pairwise<const K: usize>(parts: &[([f64; K], [f64; K])]) -> ([f64; K], [f64; K]) {
    match parts.len() {
        0 => ([0.0; K], [0.0; K]),
        1 => parts[0],
        n => {
            let (a, b) = parts.split_at(n / 2);
            let (sa, qa) = pairwise(a);
            let (sb, qb) = pairwise(b);
            let mut s = [0.0; K];
            let mut q = [0.0; K];
            for k in 0..K {
                s[k] = sa[k] + sb[k];
                q[k] = qa[k] + qb[k];
            }
            (s, q)
        }
    }
}
