//! Deterministic stand-in encoders for tests and desk-scale experiments.
//!
//! Images go through a subsampled randomized Hadamard transform of the
//! centered pixel bytes: `P = S H D / sqrt(n)` where `D` is a seeded sign
//! flip, `H` the Walsh-Hadamard matrix and `S` a seeded choice of `dim`
//! rows. `P` has orthonormal rows, so `P P^T = I` and inner products of
//! crops survive the projection up to the discarded components. Text is a
//! bag of words, each word mapped to a seeded Gaussian vector.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{EncoderSpec, ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::image_store::Raster;

/// A seeded `dim x n` projection with orthonormal rows.
#[derive(Debug, Clone)]
pub struct SrhtProjection {
    n: usize,
    signs: Vec<f64>,
    rows: Vec<usize>,
}

impl SrhtProjection {
    /// `n` must be a power of two no smaller than `dim`.
    pub fn new(seed: u64, n: usize, dim: usize) -> Self {
        assert!(n.is_power_of_two() && n >= dim, "n={n} dim={dim}");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).rotate_left(32));
        let signs = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let rows = sample(&mut rng, n, dim).into_vec();
        Self { n, signs, rows }
    }

    /// Padded input length for `len` values projected to `dim` outputs.
    pub fn padded_len(len: usize, dim: usize) -> usize {
        len.max(dim).max(1).next_power_of_two()
    }

    pub fn input_len(&self) -> usize {
        self.n
    }

    pub fn output_dim(&self) -> usize {
        self.rows.len()
    }

    /// `P x`, zero-padding `x` to the transform length.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert!(x.len() <= self.n);
        let mut buf = vec![0.0; self.n];
        for (i, v) in x.iter().enumerate() {
            buf[i] = v * self.signs[i];
        }
        fwht(&mut buf);
        let scale = 1.0 / (self.n as f64).sqrt();
        self.rows.iter().map(|&r| buf[r] * scale).collect()
    }

    /// `P^T y`, of length [`SrhtProjection::input_len`].
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows.len());
        let mut buf = vec![0.0; self.n];
        for (&r, v) in self.rows.iter().zip(y) {
            buf[r] = *v;
        }
        fwht(&mut buf);
        let scale = 1.0 / (self.n as f64).sqrt();
        buf.iter_mut()
            .zip(&self.signs)
            .for_each(|(b, s)| *b *= s * scale);
        buf
    }
}

/// In-place unnormalized fast Walsh-Hadamard transform.
fn fwht(buf: &mut [f64]) {
    let n = buf.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(h * 2) {
            for j in i..i + h {
                let (a, b) = (buf[j], buf[j + h]);
                buf[j] = a + b;
                buf[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Maps a byte to `[-1, 1]`.
pub fn center_byte(b: u8) -> f64 {
    (f64::from(b) - 127.5) / 127.5
}

/// Inverse of [`center_byte`], rounding and clamping.
pub fn quantize_byte(v: f64) -> u8 {
    (v * 127.5 + 127.5).round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone)]
pub struct StubEncoder {
    spec: EncoderSpec,
    seed: u64,
}

impl StubEncoder {
    pub fn new(spec: EncoderSpec, seed: u64) -> Self {
        Self { spec, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    /// The projection applied to an input of `len` bytes.
    pub fn projection_for(&self, len: usize) -> SrhtProjection {
        let n = SrhtProjection::padded_len(len, self.spec.output_dim);
        SrhtProjection::new(self.seed, n, self.spec.output_dim)
    }

    /// Seeded Gaussian vector of one word, scaled to unit expected norm.
    pub fn word_vector(&self, word: &str) -> Vec<f32> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(word.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let scale = 1.0 / (self.spec.output_dim as f64).sqrt();
        (0..self.spec.output_dim)
            .map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as f32)
            .collect()
    }
}

impl ImageEncoder for StubEncoder {
    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn encode_image(&self, image: &Raster) -> Result<Vec<f32>> {
        if image.pixels.is_empty() {
            return Err(Error::Contract("empty image".into()));
        }
        let centered: Vec<f64> = image.pixels.iter().map(|&b| center_byte(b)).collect();
        Ok(self
            .projection_for(centered.len())
            .apply(&centered)
            .into_iter()
            .map(|v| v as f32)
            .collect())
    }
}

impl TextEncoder for StubEncoder {
    fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f32>> {
        let mut acc = vec![0.0f64; self.spec.output_dim];
        for word in text.split_whitespace().take(self.spec.text_max_tokens) {
            for (a, v) in acc.iter_mut().zip(self.word_vector(word)) {
                *a += f64::from(v);
            }
        }
        Ok(acc.into_iter().map(|v| v as f32).collect())
    }
}
