use serde::{Deserialize, Serialize};

/// Hashed n-gram bag projected through a seeded Gaussian matrix. The matrix
/// is never materialized: entry `(bucket, j)` is regenerated from a counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuiltinEncoderSpec {
    pub dim: usize,
    pub seed: u64,
    pub ngram_orders: Vec<usize>,
    pub hash_buckets: u64,
}

impl Default for BuiltinEncoderSpec {
    fn default() -> Self {
        BuiltinEncoderSpec {
            dim: 256,
            seed: 0x5eed_e4be_d000_0001,
            ngram_orders: vec![1, 2, 3],
            hash_buckets: 1 << 16,
        }
    }
}

/// Lowercase, treat everything except alphanumerics, `-` and `_` as a
/// separator.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>, basis: u64) -> u64 {
    let mut h = basis;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in (0, 1], never zero so the logarithm stays finite.
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Two independent standard normals for counter `c` under `seed`.
fn gaussian_pair(seed: u64, c: u64) -> (f64, f64) {
    let k = splitmix64(seed ^ splitmix64(c));
    let u1 = unit_open(k);
    let u2 = unit_open(splitmix64(k));
    let r = libm::sqrt(-2.0 * libm::log(u1));
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * libm::cos(theta), r * libm::sin(theta))
}

#[derive(Debug, Clone)]
pub struct BuiltinEncoder {
    spec: BuiltinEncoderSpec,
}

impl BuiltinEncoder {
    pub fn new(spec: BuiltinEncoderSpec) -> Self {
        assert!(spec.dim >= 1, "encoder dim must be positive");
        assert!(spec.hash_buckets >= 1, "need at least one hash bucket");
        BuiltinEncoder { spec }
    }

    pub fn spec(&self) -> &BuiltinEncoderSpec {
        &self.spec
    }

    /// Sparse bucket counts, sorted by bucket.
    fn bag(&self, tokens: &[String]) -> Vec<(u64, f64)> {
        let mut buckets: Vec<u64> = Vec::new();
        for &n in &self.spec.ngram_orders {
            if n == 0 || n > tokens.len() {
                continue;
            }
            for w in tokens.windows(n) {
                let basis = 0xcbf2_9ce4_8422_2325 ^ (n as u64).wrapping_mul(0x1000_0000_01b3);
                let bytes = w.iter().enumerate().flat_map(|(i, t)| {
                    let sep = if i == 0 { None } else { Some(0x1f) };
                    sep.into_iter().chain(t.bytes())
                });
                buckets.push(fnv1a(bytes, basis) % self.spec.hash_buckets);
            }
        }
        buckets.sort_unstable();
        let mut out: Vec<(u64, f64)> = Vec::new();
        for b in buckets {
            match out.last_mut() {
                Some((last, c)) if *last == b => *c += 1.0,
                _ => out.push((b, 1.0)),
            }
        }
        out
    }

    fn row_into(&self, bucket: u64, weight: f64, acc: &mut [f64]) {
        let dim = self.spec.dim as u64;
        let pairs = dim.div_ceil(2);
        for p in 0..pairs {
            let (g0, g1) = gaussian_pair(self.spec.seed, bucket * pairs + p);
            let j = (2 * p) as usize;
            acc[j] += weight * g0;
            if j + 1 < acc.len() {
                acc[j + 1] += weight * g1;
            }
        }
    }

    pub fn encode(&self, text: &str) -> Vec<f32> {
        let tokens = tokenize(text);
        let bag = self.bag(&tokens);
        let mut acc = vec![0.0f64; self.spec.dim];
        if bag.is_empty() {
            // Reserved counter range past every real bucket.
            self.row_into(self.spec.hash_buckets, 1.0, &mut acc);
        } else {
            for &(b, w) in &bag {
                self.row_into(b, w, &mut acc);
            }
        }
        let norm = libm::sqrt(acc.iter().map(|x| x * x).sum::<f64>());
        acc.iter().map(|x| (x / norm) as f32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
    }

    #[test]
    fn tokenizer_keeps_hyphens_and_underscores() {
        assert_eq!(tokenize("(pick-up Block_3)"), ["pick-up", "block_3"]);
        assert_eq!(tokenize("  A, and B. "), ["a", "and", "b"]);
        assert!(tokenize("(),.").is_empty());
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let e = BuiltinEncoder::new(BuiltinEncoderSpec::default());
        let a = e.encode("Block b1 is on block b2.");
        let b = e.encode("Block b1 is on block b2.");
        assert_eq!(a, b);
        assert_eq!(a.len(), 256);
        assert!((cos(&a, &a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_a_fixed_unit_vector() {
        let e = BuiltinEncoder::new(BuiltinEncoderSpec::default());
        let a = e.encode("");
        assert_eq!(a, e.encode(" .,; "));
        assert!((cos(&a, &a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shared_tokens_are_closer() {
        let e = BuiltinEncoder::new(BuiltinEncoderSpec::default());
        let a = e.encode("Block A is clear");
        let b = e.encode("Block B is clear");
        let c = e.encode("(sail l0 l1)");
        assert!(cos(&a, &b) > cos(&a, &c));
    }

    #[test]
    fn odd_dimension_is_filled() {
        let e = BuiltinEncoder::new(BuiltinEncoderSpec {
            dim: 7,
            ..Default::default()
        });
        let v = e.encode("x y");
        assert_eq!(v.len(), 7);
        assert!(v.iter().all(|x| *x != 0.0));
    }

    #[test]
    fn seed_changes_the_projection() {
        let a = BuiltinEncoder::new(BuiltinEncoderSpec::default()).encode("on b1 b2");
        let b = BuiltinEncoder::new(BuiltinEncoderSpec {
            seed: 7,
            ..Default::default()
        })
        .encode("on b1 b2");
        assert_ne!(a, b);
    }
}
