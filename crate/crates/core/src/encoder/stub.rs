//! Deterministic hashing encoder used for tests and synthetic experiments.
//!
//! Each subword maps to a pseudo-random vector seeded by its string, nudged
//! by a smaller vector keyed on the subword's position parity, then passed
//! through the language's orthogonal transform when one is configured.

use std::collections::BTreeMap;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{EncoderAdapter, Subword};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, fnv1a64_extend};

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix { n, data }
    }

    pub fn apply(&self, v: &[f32]) -> Vec<f32> {
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter().zip(v).map(|(a, &b)| a * f64::from(b)).sum::<f64>() as f32
            })
            .collect()
    }

    /// max |(M Mᵀ - I)_ij|
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| self.data[i * n + k] * self.data[j * n + k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Haar-ish random orthogonal matrix via modified Gram–Schmidt on a Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut impl rand::Rng) -> Matrix {
    let mut rows: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect()).collect();
    for i in 0..n {
        for j in 0..i {
            let (done, rest) = rows.split_at_mut(i);
            let dot: f64 = rest[0].iter().zip(&done[j]).map(|(a, b)| a * b).sum();
            for (a, b) in rest[0].iter_mut().zip(&done[j]) {
                *a -= dot * b;
            }
        }
        let norm = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in &mut rows[i] {
            *a /= norm;
        }
    }
    Matrix { n, data: rows.into_iter().flatten().collect() }
}

/// Orthogonal matrix that fixes the first `shared` coordinates and rotates the rest.
pub fn block_orthogonal(dim: usize, shared: usize, rng: &mut impl rand::Rng) -> Matrix {
    assert!(shared <= dim);
    let mut m = Matrix::identity(dim);
    let k = dim - shared;
    if k > 0 {
        let r = random_orthogonal(k, rng);
        for i in 0..k {
            for j in 0..k {
                m.data[(shared + i) * dim + shared + j] = r.data[i * k + j];
            }
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct StubEncoder {
    dim: usize,
    subword_limit: usize,
    hash_seed: u64,
    /// Maximum characters per word piece.
    piece_len: usize,
    /// Mean added to every component of a subword vector before scaling.
    token_mean: f64,
    /// Per-component scale; defaults to `1/sqrt(dim)`.
    scale: f64,
    parity_weight: f64,
    transforms: BTreeMap<String, Matrix>,
}

impl StubEncoder {
    pub fn new(dim: usize, hash_seed: u64) -> Self {
        StubEncoder {
            dim,
            subword_limit: super::DEFAULT_SUBWORD_LIMIT,
            hash_seed,
            piece_len: 4,
            token_mean: 0.25,
            scale: 1.0 / (dim.max(1) as f64).sqrt(),
            parity_weight: 0.05,
            transforms: BTreeMap::new(),
        }
    }

    pub fn with_subword_limit(mut self, limit: usize) -> Self {
        self.subword_limit = limit;
        self
    }

    pub fn with_piece_len(mut self, n: usize) -> Self {
        self.piece_len = n.max(1);
        self
    }

    pub fn with_token_mean(mut self, mean: f64) -> Self {
        self.token_mean = mean;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_parity_weight(mut self, w: f64) -> Self {
        self.parity_weight = w;
        self
    }

    pub fn with_transform(mut self, language: &str, m: Matrix) -> Result<Self> {
        if m.n != self.dim {
            return Err(Error::DimMismatch { what: "language transform", expected: self.dim, found: m.n });
        }
        self.transforms.insert(language.to_string(), m);
        Ok(self)
    }

    /// Gives each language an independent block rotation that leaves the
    /// first `shared` coordinates untouched.
    pub fn with_block_transforms(mut self, languages: &[&str], shared: usize, seed: u64) -> Result<Self> {
        if shared > self.dim {
            return Err(Error::Config(format!("shared dims {shared} exceed dim {}", self.dim)));
        }
        for lang in languages {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64_extend(fnv1a64(&seed.to_le_bytes()), lang.as_bytes()));
            let m = block_orthogonal(self.dim, shared, &mut rng);
            self.transforms.insert(lang.to_string(), m);
        }
        Ok(self)
    }

    pub fn transform(&self, language: &str) -> Option<&Matrix> {
        self.transforms.get(language)
    }

    fn hashed_vector(&self, key: &str, salt: u8) -> Vec<f64> {
        let h = fnv1a64_extend(fnv1a64(&self.hash_seed.to_le_bytes()), key.as_bytes());
        let h = fnv1a64_extend(h, &[salt]);
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        (0..self.dim).map(|_| (rng.random_range(-1.0..1.0) + self.token_mean) * self.scale).collect()
    }

    /// Untransformed vector for `subword` at a position of the given parity.
    pub fn latent_vector(&self, subword: &str, parity: usize) -> Vec<f32> {
        let base = self.hashed_vector(subword, 0);
        let nudge = self.hashed_vector(subword, 1 + (parity % 2) as u8);
        base.iter().zip(&nudge).map(|(b, n)| (b + self.parity_weight * n) as f32).collect()
    }
}

impl EncoderAdapter for StubEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn subword_limit(&self) -> usize {
        self.subword_limit
    }

    fn fingerprint(&self) -> String {
        let mut h = fnv1a64(b"transforms");
        for (lang, m) in &self.transforms {
            h = fnv1a64_extend(h, lang.as_bytes());
            for x in &m.data {
                h = fnv1a64_extend(h, &x.to_le_bytes());
            }
        }
        format!(
            "stub-v1:d{}:seed{}:piece{}:limit{}:mean{}:scale{}:parity{}:t{h:016x}",
            self.dim, self.hash_seed, self.piece_len, self.subword_limit, self.token_mean, self.scale, self.parity_weight
        )
    }

    fn tokenize(&self, text: &str, _language: &str) -> Vec<Subword> {
        let mut out = Vec::new();
        let mut word: Vec<char> = Vec::new();
        let mut word_start = 0;
        let flush = |word: &mut Vec<char>, start: usize, out: &mut Vec<Subword>| {
            for (k, piece) in word.chunks(self.piece_len).enumerate() {
                let s = start + k * self.piece_len;
                let mut text: String = piece.iter().collect();
                if k > 0 {
                    text.insert_str(0, "##");
                }
                out.push(Subword { text, start: s, end: s + piece.len() });
            }
            word.clear();
        };
        for (i, c) in text.chars().enumerate() {
            if c.is_alphanumeric() {
                if word.is_empty() {
                    word_start = i;
                }
                word.push(c);
                continue;
            }
            flush(&mut word, word_start, &mut out);
            if !c.is_whitespace() {
                out.push(Subword { text: c.to_string(), start: i, end: i + 1 });
            }
        }
        flush(&mut word, word_start, &mut out);
        out
    }

    fn encode(&self, subwords: &[Subword], language: &str) -> Vec<Vec<f32>> {
        let transform = self.transforms.get(language);
        subwords
            .iter()
            .enumerate()
            .map(|(pos, s)| {
                let v = self.latent_vector(&s.text, pos);
                match transform {
                    Some(m) => m.apply(&v),
                    None => v,
                }
            })
            .collect()
    }
}
