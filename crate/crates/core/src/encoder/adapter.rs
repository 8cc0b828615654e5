//! Residual adapter heads, L2 normalization and dot-product scoring.
//!
//! A head maps a raw embedding `f` to `F = f + relu(f W1) W2`. With `W2 = 0`
//! it is the identity, which is how freshly initialized heads start.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, NORM_TOLERANCE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadSide {
    Mention,
    Entity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterHead {
    /// `dim x hidden`
    pub w1: Array2<f32>,
    /// `hidden x dim`
    pub w2: Array2<f32>,
}

/// Intermediate values of a batched forward pass, kept for backprop.
pub struct HeadCache {
    input: Array2<f32>,
    pre: Array2<f32>,
    hidden: Array2<f32>,
}

impl AdapterHead {
    pub fn from_weights(w1: Array2<f32>, w2: Array2<f32>) -> Result<Self> {
        if w1.nrows() != w2.ncols() || w1.ncols() != w2.nrows() {
            return Err(Error::Config(format!(
                "adapter shapes do not compose: W1 {:?}, W2 {:?}",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(Self { w1, w2 })
    }

    /// All-zero head: exactly the identity map.
    pub fn identity(dim: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((dim, hidden)),
            w2: Array2::zeros((hidden, dim)),
        }
    }

    /// `W1 ~ N(0, w1_std^2)`, `W2 = 0`.
    pub fn init(dim: usize, hidden: usize, w1_std: f32, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0f32, w1_std).expect("finite std");
        Self {
            w1: Array2::from_shape_simple_fn((dim, hidden), || normal.sample(rng)),
            w2: Array2::zeros((hidden, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    pub fn forward(&self, f: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        Ok(self.forward_cached(f)?.0)
    }

    pub fn forward_cached(&self, f: ArrayView2<'_, f32>) -> Result<(Array2<f32>, HeadCache)> {
        if f.ncols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: f.ncols(),
            });
        }
        let pre = f.dot(&self.w1);
        let hidden = pre.mapv(|v| v.max(0.0));
        let out = &f + &hidden.dot(&self.w2);
        Ok((
            out,
            HeadCache {
                input: f.to_owned(),
                pre,
                hidden,
            },
        ))
    }

    /// Gradients of `W1` and `W2` given the gradient of the head output.
    pub fn backward(&self, cache: &HeadCache, d_out: ArrayView2<'_, f32>) -> (Array2<f32>, Array2<f32>) {
        let d_w2 = cache.hidden.t().dot(&d_out);
        let mut d_pre = d_out.dot(&self.w2.t());
        d_pre.zip_mut_with(&cache.pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let d_w1 = cache.input.t().dot(&d_pre);
        (d_w1, d_w2)
    }

    pub fn save(&self, path: impl AsRef<Path>, side: HeadSide) -> Result<()> {
        let path = path.as_ref();
        let m = EmbeddingMatrix::from_rows(
            self.dim() * self.hidden(),
            [
                ("W1".to_string(), self.w1.iter().copied().collect()),
                ("W2".to_string(), self.w2.iter().copied().collect()),
            ],
        )?;
        m.save(path)?;
        let meta = HeadMeta {
            dim: self.dim(),
            hidden: self.hidden(),
            side,
        };
        let sidecar = sidecar_path(path);
        fs::write(&sidecar, serde_json::to_string(&meta).expect("meta serializes"))
            .map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, HeadSide)> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path);
        let raw = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: HeadMeta =
            serde_json::from_str(&raw).map_err(|e| Error::parse(sidecar.display().to_string(), e))?;
        let m = EmbeddingMatrix::load(path)?;
        if m.keys() != ["W1", "W2"] || m.dim() != meta.dim * meta.hidden {
            return Err(Error::Format(format!(
                "{} does not hold W1/W2 of shape {}x{}",
                path.display(),
                meta.dim,
                meta.hidden
            )));
        }
        let w1 = Array2::from_shape_vec((meta.dim, meta.hidden), m.row(0).to_vec())
            .map_err(|e| Error::Format(e.to_string()))?;
        let w2 = Array2::from_shape_vec((meta.hidden, meta.dim), m.row(1).to_vec())
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok((Self { w1, w2 }, meta.side))
    }
}

#[derive(Serialize, Deserialize)]
struct HeadMeta {
    dim: usize,
    hidden: usize,
    side: HeadSide,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// `F = f + relu(f W1) W2` for a single vector.
pub fn adapt(f: &[f32], head: &AdapterHead) -> Result<Vec<f32>> {
    let view = ArrayView2::from_shape((1, f.len()), f).expect("1-row view");
    Ok(head.forward(view)?.into_raw_vec_and_offset().0)
}

/// A vector with unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f32>);

impl UnitVector {
    /// Accepts an already normalized vector, checking its norm.
    pub fn new(v: Vec<f32>) -> Result<Self> {
        let norm = l2(&v);
        if (norm - 1.0).abs() > f64::from(NORM_TOLERANCE) {
            return Err(Error::Contract(format!("vector has norm {norm}, not 1")));
        }
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt()
}

pub fn normalize(v: &[f32]) -> Result<UnitVector> {
    let norm = l2(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(UnitVector(
        v.iter().map(|x| (f64::from(*x) / norm) as f32).collect(),
    ))
}

/// Dot product of two unit vectors, accumulated in f64.
pub fn score(a: &UnitVector, b: &UnitVector) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(dot(a.as_slice(), b.as_slice()))
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum::<f64>() as f32
}

/// Row-wise L2 normalization; returns unit rows and the original norms.
pub fn normalize_rows(x: &Array2<f32>) -> Result<(Array2<f32>, Array1<f32>)> {
    let norms: Array1<f32> = x
        .axis_iter(Axis(0))
        .map(|r| r.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt() as f32)
        .collect();
    if norms.iter().any(|n| *n == 0.0 || !n.is_finite()) {
        return Err(Error::DegenerateEmbedding);
    }
    let mut out = x.clone();
    for (mut row, n) in out.axis_iter_mut(Axis(0)).zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    Ok((out, norms))
}

/// Backprop through `z = x / |x|`, row-wise.
pub fn normalize_rows_backward(
    unit: ArrayView2<'_, f32>,
    norms: ArrayView1<'_, f32>,
    d_unit: ArrayView2<'_, f32>,
) -> Array2<f32> {
    let mut dx = d_unit.to_owned();
    for ((mut g, z), n) in dx.axis_iter_mut(Axis(0)).zip(unit.axis_iter(Axis(0))).zip(norms) {
        let proj = g.dot(&z);
        g.zip_mut_with(&z, |gi, zi| *gi = (*gi - zi * proj) / n);
    }
    dx
}

/// The mention-side and entity-side heads of one linking model.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPair {
    pub mention: AdapterHead,
    pub entity: AdapterHead,
}

impl HeadPair {
    pub fn identity(dim: usize, hidden: usize) -> Self {
        Self {
            mention: AdapterHead::identity(dim, hidden),
            entity: AdapterHead::identity(dim, hidden),
        }
    }

    pub fn init(dim: usize, hidden: usize, w1_std: f32, rng: &mut impl Rng) -> Self {
        Self {
            mention: AdapterHead::init(dim, hidden, w1_std, rng),
            entity: AdapterHead::init(dim, hidden, w1_std, rng),
        }
    }

    pub const MENTION_FILE: &'static str = "mention_head.bin";
    pub const ENTITY_FILE: &'static str = "entity_head.bin";

    /// Writes both heads (and their sidecars) into `dir`.
    pub fn checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.mention.save(dir.join(Self::MENTION_FILE), HeadSide::Mention)?;
        self.entity.save(dir.join(Self::ENTITY_FILE), HeadSide::Entity)
    }

    pub fn restore(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (mention, ms) = AdapterHead::load(dir.join(Self::MENTION_FILE))?;
        let (entity, es) = AdapterHead::load(dir.join(Self::ENTITY_FILE))?;
        if ms != HeadSide::Mention || es != HeadSide::Entity {
            return Err(Error::Format("head files have swapped sides".into()));
        }
        Ok(Self { mention, entity })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_w2_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = AdapterHead::init(6, 10, 0.5, &mut rng);
        let f = [0.3, -1.2, 4.0, 0.0, 7.5, -0.01];
        assert_eq!(adapt(&f, &head).unwrap(), f.to_vec());
    }

    #[test]
    fn zero_input_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut head = AdapterHead::init(3, 5, 1.0, &mut rng);
        head.w2.fill(0.7);
        assert_eq!(adapt(&[0.0; 3], &head).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn hand_computed_adapter() {
        let eye = array![[1.0f32, 0.0], [0.0, 1.0]];
        let head = AdapterHead::from_weights(eye.clone(), eye).unwrap();
        assert_eq!(adapt(&[1.0, -1.0], &head).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn adapter_dim_mismatch() {
        let head = AdapterHead::identity(4, 8);
        assert!(matches!(adapt(&[1.0; 3], &head), Err(Error::DimMismatch { expected: 4, actual: 3 })));
        assert!(AdapterHead::from_weights(Array2::zeros((4, 8)), Array2::zeros((4, 8))).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[3.0, 4.0]).unwrap().as_slice(), &[0.6, 0.8]);
        let u = normalize(&[0.6, 0.8]).unwrap();
        let again = normalize(u.as_slice()).unwrap();
        for (a, b) in u.as_slice().iter().zip(again.as_slice()) {
            assert!((a - b).abs() <= 1e-7);
        }
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::DegenerateEmbedding)));
    }

    #[test]
    fn score_examples() {
        let a = normalize(&[0.6, 0.8]).unwrap();
        assert!((score(&a, &a).unwrap() - 1.0).abs() < 1e-7);
        let x = UnitVector::new(vec![1.0, 0.0]).unwrap();
        let y = UnitVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(score(&x, &y).unwrap(), 0.0);
        assert!((score(&a, &x).unwrap() - 0.6).abs() < 1e-7);
        assert!(UnitVector::new(vec![3.0, 4.0]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pair = HeadPair::init(4, 8, 0.1, &mut rng);
        pair.entity.w2.fill(-0.25);
        pair.checkpoint(dir.path()).unwrap();
        assert_eq!(HeadPair::restore(dir.path()).unwrap(), pair);

        let first = fs::read(dir.path().join(HeadPair::MENTION_FILE)).unwrap();
        HeadPair::restore(dir.path()).unwrap().checkpoint(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(HeadPair::MENTION_FILE)).unwrap(), first);
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        HeadPair::identity(2, 3).checkpoint(dir.path()).unwrap();
        let p = dir.path().join(HeadPair::ENTITY_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[1] = b'?';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(HeadPair::restore(dir.path()), Err(Error::Format(_))));
        bytes[1] = b'N';
        bytes[4] = 7;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(HeadPair::restore(dir.path()), Err(Error::Version { found: 7, .. })));
    }

    proptest! {
        #[test]
        fn normalization_is_scale_invariant(
            v in prop::collection::vec(-100.0f32..100.0, 1..32),
            c in 0.001f32..1000.0,
        ) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let a = normalize(&v).unwrap();
            let scaled: Vec<f32> = v.iter().map(|x| x * c).collect();
            let b = normalize(&scaled).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
            let n: f64 = b.as_slice().iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn score_symmetric_and_bounded(
            a in prop::collection::vec(-10.0f32..10.0, 8),
            b in prop::collection::vec(-10.0f32..10.0, 8),
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let (a, b) = (normalize(&a).unwrap(), normalize(&b).unwrap());
            let ab = score(&a, &b).unwrap();
            prop_assert_eq!(ab, score(&b, &a).unwrap());
            prop_assert!(ab.abs() <= 1.0 + 1e-6);
        }
    }
}
