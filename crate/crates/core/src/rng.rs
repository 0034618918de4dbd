//! Counter-based random numbers.
//!
//! Every draw is a pure function of a key, so a field value at a given
//! time-space site or the `i`-th variate of a replica can be regenerated
//! without replaying any sequential state. This is what makes replicas
//! reproducible regardless of how they are scheduled across workers.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a two-word key.
#[inline]
pub fn hash2(a: u64, b: u64) -> u64 {
    mix64(mix64(a) ^ b.wrapping_mul(GOLDEN).rotate_left(17))
}

/// Hash of a three-word key.
#[inline]
pub fn hash3(a: u64, b: u64, c: u64) -> u64 {
    hash2(hash2(a, b), c)
}

/// Maps 64 random bits to the open interval (0, 1).
#[inline]
pub fn to_open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
}

/// Packs up to four lattice coordinates (|x_i| < 2^15) into one word.
#[inline]
pub fn pack_coords(x: &[i32]) -> u64 {
    x.iter().enumerate().fold(0u64, |acc, (i, &c)| {
        acc | ((((c + 0x8000) as u64) & 0xffff) << (16 * i))
    })
}

/// Uniform attached to the environment site `(t, x)` of the field keyed by `seed`.
#[inline]
pub fn site_uniform(seed: u64, t: usize, x: &[i32]) -> f64 {
    keyed_uniform(row_key(seed, t), pack_coords(x))
}

/// Key shared by all sites of time `t`; `site_uniform(seed, t, x)` equals
/// `keyed_uniform(row_key(seed, t), pack_coords(x))`.
#[inline]
pub fn row_key(seed: u64, t: usize) -> u64 {
    hash2(seed, t as u64)
}

/// SplitMix64 output at position `packed` of the sequence keyed by `key`.
#[inline]
pub fn keyed_uniform(key: u64, packed: u64) -> f64 {
    to_open_unit(mix64(key.wrapping_add(packed.wrapping_mul(GOLDEN))))
}

/// A keyed stream: `uniform(i)` is the `i`-th variate of the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: hash2(seed, stream),
        }
    }

    /// Child stream, e.g. one per replica.
    pub fn substream(&self, index: u64) -> Self {
        Self {
            key: hash2(self.key, index),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        to_open_unit(hash2(self.key, index))
    }
}

/// Seed of the environment field used by replica `replica` of an experiment.
pub fn replica_seed(seed: u64, replica: u64) -> u64 {
    hash3(seed, 0x7265_706c_6963_61, replica)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_interval_is_open() {
        assert!(to_open_unit(0) > 0.0);
        assert!(to_open_unit(u64::MAX) < 1.0);
    }

    #[test]
    fn pack_is_injective_on_small_boxes() {
        let mut seen = std::collections::HashSet::new();
        for a in -3..=3 {
            for b in -3..=3 {
                for c in -3..=3 {
                    assert!(seen.insert(pack_coords(&[a, b, c])));
                }
            }
        }
    }

    #[test]
    fn uniforms_look_uniform() {
        let s = Stream::new(11, 3);
        let n = 200_000;
        let mean = (0..n).map(|i| s.uniform(i)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "{mean}");
        let below = (0..n).filter(|&i| s.uniform(i) < 0.1).count() as f64 / n as f64;
        assert!((below - 0.1).abs() < 0.003, "{below}");
    }

    #[test]
    fn streams_are_distinct() {
        let a = Stream::new(1, 0);
        let b = Stream::new(1, 1);
        assert_ne!(a.uniform(0), b.uniform(0));
        assert_eq!(a.substream(5).uniform(9), Stream::new(1, 0).substream(5).uniform(9));
    }
}
