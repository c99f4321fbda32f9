//! Counter-based random streams.
//!
//! A stream is identified by a 64-bit key. The `i`-th raw draw of a stream is
//! `mix(key + (i + 1) * GOLDEN)`, where `mix` is the SplitMix64 finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//! z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//! z =  z ^ (z >> 31)
//! ```
//!
//! with wrapping 64-bit arithmetic and `GOLDEN = 0x9e3779b97f4a7c15`.
//! Keys are derived without shared state:
//!
//! ```text
//! seed_stream(seed, label) = mix(seed ^ mix(fnv1a64(label)))
//! substream(key, index)    = mix(key ^ mix(index ^ 0xd1b54a32d192ed03))
//! ```
//!
//! `fnv1a64` is 64-bit FNV-1a over the UTF-8 bytes of the label (offset
//! `0xcbf29ce484222325`, prime `0x100000001b3`). Uniforms use the top 53 bits:
//! `u = ((raw >> 11) + 1) * 2^-53`, which lies in (0, 1]. Standard normals
//! come in Box–Muller pairs from two consecutive uniforms `(u1, u2)`:
//! `sqrt(-2 ln u1) * cos(2π u2)` first, then the matching `sin` value.
//!
//! Any implementation following these constants reproduces the same draws.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SUBSTREAM_SALT: u64 = 0xd1b5_4a32_d192_ed03;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Key of an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey(pub u64);

impl StreamKey {
    pub fn substream(self, index: u64) -> StreamKey {
        StreamKey(mix(self.0 ^ mix(index ^ SUBSTREAM_SALT)))
    }

    pub fn rng(self) -> CounterRng {
        CounterRng::new(self.0)
    }
}

pub fn seed_stream(seed: u64, label: &str) -> StreamKey {
    StreamKey(mix(seed ^ mix(fnv1a64(label.as_bytes()))))
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0, spare_normal: None }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on (0, 1].
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_normal();
        }
    }
}
