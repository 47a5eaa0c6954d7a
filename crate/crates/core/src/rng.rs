//! Counter-based uniform random numbers.
//!
//! Entry `k` of a stream with key `s` is
//!
//! ```text
//! z = splitmix64_mix(s + (k + 1) * 0x9E3779B97F4A7C15)
//! u = (z >> 11) * 2^-53            // in [0, 1)
//! x = 2u - 1                       // in [-1, 1)
//! ```
//!
//! where `splitmix64_mix` is the SplitMix64 output finalizer. A named
//! sub-stream is keyed by `splitmix64_mix(s ^ fnv1a64(name))`. Every value is a
//! pure function of `(seed, name, k)`, so any implementation can reproduce
//! the sequences from a seed.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug)]
pub struct UniformStream {
    key: u64,
    counter: u64,
}

impl UniformStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: seed,
            counter: 0,
        }
    }

    /// Independent stream derived from this one's key and a name.
    pub fn substream(&self, name: &str) -> Self {
        Self {
            key: mix(self.key ^ fnv1a64(name.as_bytes())),
            counter: 0,
        }
    }

    pub fn at(&self, k: u64) -> f64 {
        let z = mix(self
            .key
            .wrapping_add(k.wrapping_add(1).wrapping_mul(GOLDEN)));
        let u = (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        2.0 * u - 1.0
    }

    pub fn next_f64(&mut self) -> f64 {
        let x = self.at(self.counter);
        self.counter += 1;
        x
    }

    pub fn fill(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_f64()).collect()
    }
}

impl Iterator for UniformStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_f64())
    }
}
