use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::{EmbeddingError, SparseRows};
use crate::nn::round_f32;

/// Hashed character n-gram embeddings.
///
/// A token is padded as `<token>`; every character n-gram with
/// `n_min ≤ n ≤ n_max` and the whole token itself are hashed into `buckets`
/// rows, and the token vector is the mean of those rows. Rows start from a
/// deterministic function of `(hash_seed, bucket)`, so only rows that were
/// changed by training are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordHashEmbedder {
    pub buckets: usize,
    pub dim: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub hash_seed: u64,
    /// Rows that differ from their seeded initial value.
    pub rows: BTreeMap<usize, Array1<f64>>,
}

/// 32-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Marks the whole-word key; never occurs inside UTF-8 text.
const WORD_MARKER: u8 = 0xFF;

pub fn subword_embed(e: &SubwordHashEmbedder, token: &str) -> Result<Array1<f64>, EmbeddingError> {
    e.embed(token)
}

impl SubwordHashEmbedder {
    pub const DEFAULT_BUCKETS: usize = 1 << 21;

    pub fn new(buckets: usize, dim: usize, n_min: usize, n_max: usize, hash_seed: u64) -> Self {
        assert!(buckets >= 1, "at least one bucket");
        assert!(1 <= n_min && n_min <= n_max, "need 1 <= n_min <= n_max");
        assert!(dim > 0);
        SubwordHashEmbedder {
            buckets,
            dim,
            n_min,
            n_max,
            hash_seed,
            rows: BTreeMap::new(),
        }
    }

    /// 2^21 buckets, n-grams of 3 to 6 characters.
    pub fn with_defaults(dim: usize, hash_seed: u64) -> Self {
        Self::new(Self::DEFAULT_BUCKETS, dim, 3, 6, hash_seed)
    }

    /// Bucket indices for the token's n-grams (with repeats) followed by the
    /// whole-word bucket.
    pub fn bucket_ids(&self, token: &str) -> Result<Vec<usize>, EmbeddingError> {
        if token.is_empty() {
            return Err(EmbeddingError::EmptyToken);
        }
        let padded: Vec<char> = std::iter::once('<')
            .chain(token.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut ids = Vec::new();
        let mut buf = String::new();
        for n in self.n_min..=self.n_max {
            if n > padded.len() {
                break;
            }
            for window in padded.windows(n) {
                buf.clear();
                buf.extend(window);
                ids.push(fnv1a(buf.as_bytes()) as usize % self.buckets);
            }
        }
        let mut word = Vec::with_capacity(token.len() + 1);
        word.push(WORD_MARKER);
        word.extend_from_slice(token.as_bytes());
        ids.push(fnv1a(&word) as usize % self.buckets);
        Ok(ids)
    }

    /// Seeded initial value of a bucket row, uniform in `[-1, 1]`.
    pub fn initial_row(&self, bucket: usize) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.hash_seed ^ (bucket as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let dist = Uniform::new_inclusive(-1.0, 1.0).unwrap();
        (0..self.dim)
            .map(|_| round_f32(dist.sample(&mut rng)))
            .collect()
    }

    pub fn row(&self, bucket: usize) -> Array1<f64> {
        match self.rows.get(&bucket) {
            Some(r) => r.clone(),
            None => self.initial_row(bucket),
        }
    }

    pub fn embed(&self, token: &str) -> Result<Array1<f64>, EmbeddingError> {
        let ids = self.bucket_ids(token)?;
        let mut out = Array1::zeros(self.dim);
        for &b in &ids {
            match self.rows.get(&b) {
                Some(r) => out += r,
                None => out += &self.initial_row(b),
            }
        }
        Ok(out / ids.len() as f64)
    }

    /// Scatters `d_out` back onto the buckets that formed the token.
    pub fn backward(
        &self,
        token: &str,
        d_out: ArrayView1<f64>,
        grad: &mut SparseRows,
    ) -> Result<(), EmbeddingError> {
        let ids = self.bucket_ids(token)?;
        let share = 1.0 / ids.len() as f64;
        for b in ids {
            grad.add(b, d_out, share);
        }
        Ok(())
    }

    /// Mutable access to a row, materialising it from its seed if needed.
    pub fn row_mut(&mut self, bucket: usize) -> &mut Array1<f64> {
        if !self.rows.contains_key(&bucket) {
            let init = self.initial_row(bucket);
            self.rows.insert(bucket, init);
        }
        self.rows.get_mut(&bucket).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Transparent reference: enumerate substrings by character position.
    fn reference_ngrams(token: &str, n_min: usize, n_max: usize) -> Vec<String> {
        let padded: Vec<char> = format!("<{token}>").chars().collect();
        let mut out = Vec::new();
        for start in 0..padded.len() {
            for end in start + 1..=padded.len() {
                let n = end - start;
                if n >= n_min && n <= n_max {
                    out.push(padded[start..end].iter().collect());
                }
            }
        }
        out
    }

    fn reference_embed(e: &SubwordHashEmbedder, token: &str) -> Array1<f64> {
        let mut keys: Vec<Vec<u8>> = reference_ngrams(token, e.n_min, e.n_max)
            .into_iter()
            .map(String::into_bytes)
            .collect();
        let mut word = vec![0xFF];
        word.extend(token.bytes());
        keys.push(word);
        let mut sum = Array1::zeros(e.dim);
        for k in &keys {
            sum += &e.row(fnv1a(k) as usize % e.buckets);
        }
        sum / keys.len() as f64
    }

    fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0x811c9dc5);
        assert_eq!(fnv1a(b"a"), 0xe40c292c);
        assert_eq!(fnv1a(b"foobar"), 0xbf9cf968);
    }

    #[test]
    fn single_char_token_matches_reference() {
        let e = SubwordHashEmbedder::new(1 << 16, 8, 3, 6, 7);
        assert_eq!(reference_ngrams("a", 3, 6), vec!["<a>"]);
        assert_eq!(e.bucket_ids("a").unwrap().len(), 2);
        let got = e.embed("a").unwrap();
        let want = reference_embed(&e, "a");
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn multibyte_tokens_match_reference() {
        let e = SubwordHashEmbedder::new(1 << 20, 4, 2, 5, 1);
        for tok in ["groß", "ノドアカ", "/etc/fstab"] {
            let got = e.embed(tok).unwrap();
            let want = reference_embed(&e, tok);
            assert!((&got - &want).iter().all(|d| d.abs() < 1e-12), "{tok}");
        }
    }

    #[test]
    fn deterministic_and_empty() {
        let e = SubwordHashEmbedder::with_defaults(16, 3);
        assert_eq!(e.embed("wireless").unwrap(), e.embed("wireless").unwrap());
        assert!(matches!(e.embed(""), Err(EmbeddingError::EmptyToken)));
    }

    #[test]
    fn shared_ngrams_raise_similarity() {
        let e = SubwordHashEmbedder::with_defaults(64, 42);
        let u1 = "http://paste.ubuntu.com/1403448/";
        let u2 = "http://paste.ubuntu.com/14545476/";
        let v1 = e.embed(u1).unwrap();
        let v2 = e.embed(u2).unwrap();
        let w = e.embed("wireless").unwrap();
        // Shared n-gram count oracle: the URLs share many n-grams, the word none.
        let g1: std::collections::HashSet<String> =
            reference_ngrams(u1, 3, 6).into_iter().collect();
        let g2: std::collections::HashSet<String> =
            reference_ngrams(u2, 3, 6).into_iter().collect();
        let gw: std::collections::HashSet<String> =
            reference_ngrams("wireless", 3, 6).into_iter().collect();
        assert!(g1.intersection(&g2).count() > 50);
        assert_eq!(g1.intersection(&gw).count(), 0);
        assert!(cosine(&v1, &v2) > cosine(&v1, &w));
        assert!(cosine(&v1, &v2) > 0.5);
    }

    #[test]
    fn backward_spreads_mean() {
        let e = SubwordHashEmbedder::new(1 << 10, 3, 3, 3, 0);
        let mut g = SparseRows::default();
        e.backward("ab", ndarray::aview1(&[1.0, 2.0, 3.0]), &mut g)
            .unwrap();
        // "<ab>" has two trigrams plus the word bucket.
        let total: f64 = g.rows.values().map(|r| r[0]).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
