//! Contrastive fine-tuning of adapter heads with in-batch negatives.
//!
//! Each batch holds mentions of pairwise distinct gold entities; row `i` of
//! the batch score matrix scores mention `i` against every entity of the
//! batch and its diagonal entry is the positive.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::adapter::{normalize_rows, normalize_rows_backward};
use crate::encoder::{AdapterHead, HeadPair};
use crate::error::{Error, Result};
use crate::image_store::ImageStore;
use crate::kb::KnowledgeBase;
use crate::mention::MentionDataset;
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_mention: f64,
    pub lr_entity: f64,
    pub temperature: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Adapter hidden width.
    pub hidden: usize,
    /// Standard deviation of the initial `W1` entries (`W2` starts at zero).
    pub w1_init_std: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::visual_pretrained()
    }
}

impl TrainConfig {
    /// Defaults for a pipeline on a face-recognition style visual backbone.
    pub fn visual_pretrained() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 20,
            lr_mention: 2e-4,
            lr_entity: 2e-4,
            temperature: 0.07,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            hidden: 1024,
            w1_init_std: 0.01,
            seed: 0,
        }
    }

    /// Defaults for a pipeline on an image-text dual encoder.
    pub fn image_text_pretrained() -> Self {
        Self {
            lr_mention: 2e-6,
            lr_entity: 2e-6,
            ..Self::visual_pretrained()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        for (name, lr) in [("lr_mention", self.lr_mention), ("lr_entity", self.lr_entity)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn check_scores(scores: ArrayView2<'_, f32>, temperature: f64) -> Result<()> {
    if scores.nrows() != scores.ncols() {
        return Err(Error::Contract(format!(
            "score matrix must be square, got {:?}",
            scores.shape()
        )));
    }
    if scores.nrows() < 2 {
        return Err(Error::Contract("score matrix needs at least 2 rows".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    Ok(())
}

/// Mean over rows of `-log softmax(S[i] / tau)[i]`.
pub fn contrastive_loss(scores: ArrayView2<'_, f32>, temperature: f64) -> Result<f64> {
    Ok(contrastive_loss_grad(scores, temperature)?.0)
}

/// Loss and its gradient with respect to the score matrix.
pub fn contrastive_loss_grad(scores: ArrayView2<'_, f32>, temperature: f64) -> Result<(f64, Array2<f32>)> {
    check_scores(scores, temperature)?;
    let n = scores.nrows();
    let mut grad = Array2::<f32>::zeros((n, n));
    let mut total = 0.0f64;
    for (i, row) in scores.axis_iter(Axis(0)).enumerate() {
        let logits: Vec<f64> = row.iter().map(|&s| f64::from(s) / temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - logits[i];
        for (j, l) in logits.iter().enumerate() {
            let p = (l - log_z).exp();
            let target = if i == j { 1.0 } else { 0.0 };
            grad[[i, j]] = ((p - target) / (temperature * n as f64)) as f32;
        }
    }
    Ok(((total / n as f64).max(0.0), grad))
}

/// Gradients of the batch loss for both heads.
pub struct HeadGrads {
    pub mention: (Array2<f32>, Array2<f32>),
    pub entity: (Array2<f32>, Array2<f32>),
}

/// Forward and backward pass for one batch of raw embeddings, row `i` of
/// `mentions` paired with row `i` of `entities`.
pub fn batch_loss_and_grads(
    heads: &HeadPair,
    mentions: ArrayView2<'_, f32>,
    entities: ArrayView2<'_, f32>,
    temperature: f64,
) -> Result<(f64, HeadGrads)> {
    let (fm, cache_m) = heads.mention.forward_cached(mentions)?;
    let (fe, cache_e) = heads.entity.forward_cached(entities)?;
    let (zm, nm) = normalize_rows(&fm)?;
    let (ze, ne) = normalize_rows(&fe)?;
    let scores = zm.dot(&ze.t());
    let (loss, d_scores) = contrastive_loss_grad(scores.view(), temperature)?;
    let d_zm = d_scores.dot(&ze);
    let d_ze = d_scores.t().dot(&zm);
    let d_fm = normalize_rows_backward(zm.view(), nm.view(), d_zm.view());
    let d_fe = normalize_rows_backward(ze.view(), ne.view(), d_ze.view());
    Ok((
        loss,
        HeadGrads {
            mention: heads.mention.backward(&cache_m, d_fm.view()),
            entity: heads.entity.backward(&cache_e, d_fe.view()),
        },
    ))
}

/// Adam with decoupled weight decay, over a fixed list of parameter matrices.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
}

impl AdamW {
    pub fn new(lr: f64, cfg: &TrainConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Array2<f32>], grads: &[&Array2<f32>]) {
        if self.lr == 0.0 {
            return;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let decay = (1.0 - self.lr * self.weight_decay) as f32;
        let step_size = (self.lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            ndarray::Zip::from(&mut **p)
                .and(&**g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w *= decay;
                    *w -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: LrPair,
    pub tau: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrPair {
    pub mention: f64,
    pub entity: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub heads: HeadPair,
    pub history: Vec<EpochLog>,
    /// Mentions left out because their gold entity lacks the pipeline's modality.
    pub skipped: Vec<String>,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.mean_loss).collect()
    }

    /// One JSON object per epoch.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.history {
            writeln!(f, "{}", serde_json::to_string(e).expect("log serializes"))
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Splits training rows into batches with pairwise distinct gold entities.
/// Rows that end up alone in a batch have no negatives and are dropped.
pub fn assemble_batches(golds: &[&str], batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let distinct: HashSet<&str> = golds.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Config(format!(
            "in-batch negatives need at least 2 distinct gold entities, found {}",
            distinct.len()
        )));
    }
    let mut remaining: Vec<usize> = (0..golds.len()).collect();
    remaining.shuffle(rng);
    let mut batches = Vec::new();
    while !remaining.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut used = HashSet::new();
        let mut deferred = Vec::new();
        for i in remaining {
            if batch.len() < batch_size && used.insert(golds[i]) {
                batch.push(i);
            } else {
                deferred.push(i);
            }
        }
        if batch.len() >= 2 {
            batches.push(batch);
        }
        remaining = deferred;
    }
    Ok(batches)
}

/// Trains from precomputed raw embeddings. `mention_rows[i]` is paired with
/// `entity_rows[golds[i]]`.
pub fn train_on_embeddings(
    mention_rows: ArrayView2<'_, f32>,
    golds: &[&str],
    entity_rows: &BTreeMap<String, Vec<f32>>,
    init: HeadPair,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if mention_rows.nrows() != golds.len() {
        return Err(Error::DimMismatch {
            expected: mention_rows.nrows(),
            actual: golds.len(),
        });
    }
    let dim = init.mention.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batches = assemble_batches(golds, cfg.batch_size, &mut rng)?;

    let entity_of = |i: usize| -> Result<&Vec<f32>> {
        entity_rows
            .get(golds[i])
            .ok_or_else(|| Error::Contract(format!("no entity embedding for {}", golds[i])))
    };
    let mut batch_data = Vec::with_capacity(batches.len());
    for batch in &batches {
        let m = mention_rows.select(Axis(0), batch);
        let mut e = Array2::<f32>::zeros((batch.len(), dim));
        for (r, &i) in batch.iter().enumerate() {
            let row = entity_of(i)?;
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            e.row_mut(r).assign(&ndarray::ArrayView1::from(row.as_slice()));
        }
        batch_data.push((m, e));
    }

    let mut heads = init;
    let shapes = [heads.mention.w1.dim(), heads.mention.w2.dim()];
    let mut opt_m = AdamW::new(cfg.lr_mention, cfg, &shapes);
    let mut opt_e = AdamW::new(cfg.lr_entity, cfg, &shapes);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut order: Vec<usize> = (0..batches.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut losses = vec![0.0f64; batches.len()];
        for &b in &order {
            let (m, e) = &batch_data[b];
            let (loss, g) = batch_loss_and_grads(&heads, m.view(), e.view(), cfg.temperature)?;
            losses[b] = loss;
            let AdapterHead { w1, w2 } = &mut heads.mention;
            opt_m.step(&mut [w1, w2], &[&g.mention.0, &g.mention.1]);
            let AdapterHead { w1, w2 } = &mut heads.entity;
            opt_e.step(&mut [w1, w2], &[&g.entity.0, &g.entity.1]);
        }
        // summed in batch order, not visiting order, so the mean is order-free
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        history.push(EpochLog {
            epoch,
            mean_loss,
            lr: LrPair {
                mention: cfg.lr_mention,
                entity: cfg.lr_entity,
            },
            tau: cfg.temperature,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome {
        heads,
        history,
        skipped: Vec::new(),
    })
}

/// Encodes the labeled training mentions and their gold entities with the
/// pipeline's frozen encoders, then trains a fresh head pair seeded from
/// `cfg.seed`.
pub fn train(
    dataset: &MentionDataset,
    kb: &KnowledgeBase,
    pipeline: &Pipeline,
    store: &dyn ImageStore,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = pipeline.spec.output_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_4ead);
    let init = HeadPair::init(dim, cfg.hidden, cfg.w1_init_std, &mut rng);
    train_with_init(dataset, kb, pipeline, store, init, cfg)
}

pub fn train_with_init(
    dataset: &MentionDataset,
    kb: &KnowledgeBase,
    pipeline: &Pipeline,
    store: &dyn ImageStore,
    init: HeadPair,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let modality = pipeline.modality();
    let mut entity_rows = BTreeMap::new();
    let mut mention_data = Vec::new();
    let mut golds = Vec::new();
    let mut skipped = Vec::new();
    for m in dataset.mentions() {
        let gold = m
            .gold_entity_id
            .as_deref()
            .ok_or_else(|| Error::MissingGold(m.mention_id.clone()))?;
        let entity = kb.get(gold).ok_or_else(|| Error::UnknownEntity {
            mention_id: m.mention_id.clone(),
            entity_id: gold.to_string(),
        })?;
        if !crate::encoder::has_modality(entity, modality) {
            skipped.push(m.mention_id.clone());
            continue;
        }
        if !entity_rows.contains_key(gold) {
            entity_rows.insert(gold.to_string(), pipeline.raw_entity(entity, store)?);
        }
        mention_data.extend(pipeline.raw_mention(m, store)?);
        golds.push(gold);
    }
    let dim = pipeline.spec.output_dim;
    let mentions = Array2::from_shape_vec((golds.len(), dim), mention_data)
        .map_err(|e| Error::Contract(e.to_string()))?;
    let mut outcome = train_on_embeddings(mentions.view(), &golds, &entity_rows, init, cfg)?;
    outcome.skipped = skipped;
    Ok(outcome)
}
