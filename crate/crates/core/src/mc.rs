//! Chunked Monte Carlo accumulation.
//!
//! Sample `i` belongs to chunk `i / CHUNK`, and chunk `c` draws from
//! `key.substream(c)`. Chunk sums are reduced in chunk order, so results do
//! not depend on how many worker threads run the chunks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{CounterRng, StreamKey};

pub const CHUNK: usize = 1024;

/// Sums `width` statistics over `count` samples. `per_sample` adds one
/// sample's contribution to the accumulator it is handed.
pub fn accumulate<F>(count: usize, key: StreamKey, width: usize, per_sample: F) -> Vec<f64>
where
    F: Fn(&mut CounterRng, &mut [f64]) + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let partial: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = key.substream(c as u64).rng();
            let mut acc = vec![0.0; width];
            let len = CHUNK.min(count - c * CHUNK);
            for _ in 0..len {
                per_sample(&mut rng, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for acc in partial {
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    /// Sample standard deviation over √count.
    pub stderr: f64,
    pub count: usize,
    pub key: u64,
}

impl MCEstimate {
    pub fn from_sums(sum: f64, sum_sq: f64, count: usize, key: StreamKey) -> Self {
        let n = count as f64;
        let mean = sum / n;
        let var = if count > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        Self { value: mean, stderr: (var / n).sqrt(), count, key: key.0 }
    }

    /// value ± z·stderr
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.value - z * self.stderr, self.value + z * self.stderr)
    }
}

/// Mean and standard error of a scalar observable of the stream.
pub fn estimate<F>(count: usize, key: StreamKey, f: F) -> MCEstimate
where
    F: Fn(&mut CounterRng) -> f64 + Sync,
{
    let sums = accumulate(count, key, 2, |rng, acc| {
        let v = f(rng);
        acc[0] += v;
        acc[1] += v * v;
    });
    MCEstimate::from_sums(sums[0], sums[1], count, key)
}
