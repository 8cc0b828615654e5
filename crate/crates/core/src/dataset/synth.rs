//! Synthetic knowledge bases and mention sets with controlled difficulty.
//!
//! Mention crops are built in pixel space so that their stub embeddings hit
//! chosen target vectors. Per channel (visual and image-text) a mention is
//! either *easy*, its target being the gold entity's direction plus a little
//! isotropic noise, or *hard*, its target being `s * u_gold + lambda * n`
//! where `n` lives in a fixed low-rank nuisance subspace of that channel and
//! is mostly a fixed offset of the gold entity plus some per-mention jitter.
//! A mention is easy with probability `s`, the separability:
//!
//! * `s = 1`: every mention is easy and zero-shot R@1 is 1;
//! * `s = 0`: every target is pure nuisance and linking is at chance.
//!
//! The nuisance is a systematic gap between mention and entity embeddings
//! confined to a shared subspace, so an adapter head can learn to undo it;
//! this is what fine-tuning recovers.
//!
//! Crops are 64x64 gray; an image with `m` mentions is `64m x 64` with the
//! crops side by side. The image-text target is placed on the crop, so the
//! whole-image and crop embeddings coincide for single-mention images.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::stub::{center_byte, quantize_byte, SrhtProjection};
use crate::encoder::{entity_text, EncoderSpec, ImageEncoder, StubEncoder, TextEncoder, TextMode};
use crate::error::{Error, Result};
use crate::image_store::{MemImageStore, Raster};
use crate::kb::{Entity, KnowledgeBase};
use crate::pipeline::Pipeline;
use crate::mention::{BBox, ImageMentions, MentionDataset, SplitTag, VisualMention};

pub const CROP_SIDE: u32 = 64;

/// Seeds of the stub encoders the data was constructed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubSeeds {
    pub visual: u64,
    pub image_text: u64,
}

impl StubSeeds {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            visual: seed.wrapping_mul(2).wrapping_add(0x5157),
            image_text: seed.wrapping_mul(2).wrapping_add(0x7e47),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_images: usize,
    pub dim: usize,
    pub seed: u64,
    /// Separability of the visual channel.
    pub separability: f64,
    /// Separability of the image-text channel; defaults to `separability`.
    pub text_separability: Option<f64>,
    /// Draws one uniform per mention so that the visual and textual hard
    /// sets are disjoint whenever the separabilities allow it.
    pub complementary: bool,
    /// Fraction of images carrying two mentions.
    pub multi_mention_rate: f64,
    /// Exponent of the Zipf law over gold entities.
    pub zipf_exponent: f64,
    /// Whether entities get an image; without images only textual linking
    /// is possible.
    pub entity_images: bool,
    pub text_mode: TextMode,
    /// Rank of the nuisance subspace, capped at `dim`.
    pub nuisance_rank: usize,
    /// Standard deviation of a competitor's score on a hard mention.
    pub noise_sigma: f64,
    /// Share of a hard mention's nuisance that is drawn per mention; the
    /// rest is a fixed offset of its gold entity.
    pub nuisance_jitter: f64,
    /// Isotropic noise scale of easy mentions.
    pub easy_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 64,
            n_images: 256,
            dim: 512,
            seed: 0,
            separability: 0.6,
            text_separability: None,
            complementary: false,
            multi_mention_rate: 0.08,
            zipf_exponent: 0.5,
            entity_images: true,
            text_mode: TextMode::NameDesc,
            nuisance_rank: 16,
            noise_sigma: 0.6,
            nuisance_jitter: 0.25,
            easy_noise: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities < 2 {
            return Err(Error::Config("synthetic data needs at least 2 entities".into()));
        }
        for s in [Some(self.separability), self.text_separability].into_iter().flatten() {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config(format!("separability {s} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.nuisance_jitter) {
            return Err(Error::Config("nuisance_jitter outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.multi_mention_rate) {
            return Err(Error::Config("multi_mention_rate outside [0, 1]".into()));
        }
        if self.dim == 0 || self.dim > (CROP_SIDE * CROP_SIDE) as usize / 2 {
            return Err(Error::Config(format!("dim must be in 1..={}", CROP_SIDE * CROP_SIDE / 2)));
        }
        if self.nuisance_rank == 0 {
            return Err(Error::Config("nuisance_rank must be positive".into()));
        }
        Ok(())
    }

    pub fn text_sep(&self) -> f64 {
        self.text_separability.unwrap_or(self.separability)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub kb: KnowledgeBase,
    pub dataset: MentionDataset,
    pub store: MemImageStore,
    pub seeds: StubSeeds,
    pub dim: usize,
    pub text_mode: TextMode,
}

impl SynthData {
    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec::stub(self.dim)
    }

    /// Zero-shot image-to-image pipeline matching the generator's encoders.
    pub fn v2v_pipeline(&self) -> Pipeline {
        Pipeline::stub_v2v(self.encoder_spec(), self.seeds.visual)
    }

    /// Zero-shot image-to-text pipeline matching the generator's encoders.
    pub fn v2t_pipeline(&self) -> Pipeline {
        Pipeline::stub_v2t(self.encoder_spec(), self.seeds.image_text, self.text_mode)
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ren", "ta", "zu", "vo", "shi", "an", "bel", "cor", "dra", "el", "fen", "gi", "hal", "is", "jor", "ke",
    "lum", "mar", "no", "pra", "quin",
];

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Orthonormal basis of a random `rank`-dimensional subspace.
fn random_basis(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while basis.len() < rank {
        let mut v = gaussian(rng, dim, 1.0);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    basis
}

struct Channel {
    basis: Vec<Vec<f64>>,
    /// Per-entity nuisance coordinates, unit vectors in the subspace.
    offsets: Vec<Vec<f64>>,
    lambda: f64,
    jitter: f64,
}

impl Channel {
    fn new(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let r = cfg.nuisance_rank.min(cfg.dim);
        Self {
            basis: random_basis(rng, cfg.dim, r),
            offsets: (0..cfg.n_entities).map(|_| unit(&gaussian(rng, r, 1.0))).collect(),
            lambda: cfg.noise_sigma * (cfg.dim as f64).sqrt(),
            jitter: cfg.nuisance_jitter,
        }
    }

    /// Target direction for a mention of entity `e` with unit direction `u`.
    fn target(&self, rng: &mut ChaCha8Rng, e: usize, u: &[f64], hard: bool, s: f64, easy_noise: f64) -> Vec<f64> {
        let dim = u.len();
        if !hard {
            let g = gaussian(rng, dim, easy_noise / (dim as f64).sqrt());
            return unit(&u.iter().zip(&g).map(|(a, b)| a + b).collect::<Vec<_>>());
        }
        let r = self.basis.len();
        let own = unit(&gaussian(rng, r, 1.0));
        let (a, b) = ((1.0 - self.jitter).sqrt(), self.jitter.sqrt());
        let z = unit(&self.offsets[e].iter().zip(&own).map(|(x, y)| a * x + b * y).collect::<Vec<_>>());
        let mut t: Vec<f64> = u.iter().map(|x| s * x).collect();
        for (b, zi) in self.basis.iter().zip(&z) {
            t.iter_mut().zip(b).for_each(|(x, y)| *x += self.lambda * zi * y);
        }
        if t.iter().all(|x| *x == 0.0) {
            return u.to_vec();
        }
        unit(&t)
    }
}

/// Norm of each target embedding of a crop.
const TARGET_NORM: f64 = 9.0;
const PIXEL_STD: f64 = 0.2;
const PROJECTION_SWEEPS: usize = 40;

/// Finds pixels `x` in `[-1, 1]` with `P_j x = t_j` for every constraint by
/// alternating projections, starting from `x0`.
fn solve_crop(x0: Vec<f64>, constraints: &[(&SrhtProjection, Vec<f64>)]) -> Vec<u8> {
    let mut x = x0;
    for sweep in 0..PROJECTION_SWEEPS {
        for (p, t) in constraints {
            let r: Vec<f64> = p.apply(&x).iter().zip(t).map(|(a, b)| b - a).collect();
            let corr = p.apply_transpose(&r);
            x.iter_mut().zip(corr).for_each(|(a, c)| *a += c);
        }
        if sweep + 1 < PROJECTION_SWEEPS {
            x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        }
    }
    x.into_iter().map(quantize_byte).collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let seeds = StubSeeds::from_seed(cfg.seed);
    let spec = EncoderSpec::stub(cfg.dim);
    let visual = StubEncoder::new(spec.clone(), seeds.visual);
    let textual = StubEncoder::new(spec.clone(), seeds.image_text);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = MemImageStore::new();

    let vocab: Vec<String> = (0..400)
        .map(|_| {
            let n = 2 + rng.random_range(0..2);
            word(&mut rng, n)
        })
        .collect();
    let mut entities = Vec::with_capacity(cfg.n_entities);
    let mut used_names = HashSet::new();
    for i in 0..cfg.n_entities {
        let name = loop {
            let n = format!("{} {}", capitalize(&word(&mut rng, 2)), capitalize(&word(&mut rng, 3)));
            if used_names.insert(n.clone()) {
                break n;
            }
        };
        let desc_len = rng.random_range(6..=10);
        let description = (0..desc_len)
            .map(|_| vocab.choose(&mut rng).expect("vocab").as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let entity_id = format!("Q{}", 1000 + i);
        let image_ref = if cfg.entity_images {
            let px: Vec<u8> = (0..CROP_SIDE * CROP_SIDE).map(|_| rng.random()).collect();
            let r = format!("entities/{entity_id}.png");
            store.insert_raster(r.clone(), &Raster::gray(CROP_SIDE, CROP_SIDE, px));
            Some(r)
        } else {
            None
        };
        entities.push(Entity {
            entity_id,
            name,
            description,
            image_ref,
        });
    }

    let mut images = Vec::with_capacity(cfg.n_images);
    if cfg.n_images > 0 {
        let crop_len = (CROP_SIDE * CROP_SIDE) as usize;
        let proj_v = visual.projection_for(crop_len);
        let proj_t = textual.projection_for(crop_len);
        let chan_v = Channel::new(&mut rng, cfg);
        let chan_t = Channel::new(&mut rng, cfg);

        // entity directions under each channel
        let mut dir_v = Vec::with_capacity(entities.len());
        let mut dir_t = Vec::with_capacity(entities.len());
        for e in &entities {
            dir_v.push(match &e.image_ref {
                Some(r) => {
                    let raster = Raster::decode(r, &crate::image_store::ImageStore::read_bytes(&store, r)?)?;
                    Some(unit(&visual.encode_image(&raster)?.iter().map(|v| f64::from(*v)).collect::<Vec<_>>()))
                }
                None => None,
            });
            let text = entity_text(e, cfg.text_mode, spec.text_max_tokens);
            dir_t.push(unit(&textual.encode_text(&text)?.iter().map(|v| f64::from(*v)).collect::<Vec<_>>()));
        }

        let mut popularity: Vec<usize> = (0..entities.len()).collect();
        popularity.shuffle(&mut rng);
        let weights: Vec<f64> = (0..entities.len())
            .map(|r| 1.0 / ((r + 1) as f64).powf(cfg.zipf_exponent))
            .collect();
        let zipf = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        let n_multi = (cfg.n_images as f64 * cfg.multi_mention_rate).round() as usize;
        let multi: HashSet<usize> = sample(&mut rng, cfg.n_images, n_multi).into_iter().collect();
        let (s_v, s_t) = (cfg.separability, cfg.text_sep());

        for img in 0..cfg.n_images {
            let m = if multi.contains(&img) { 2 } else { 1 };
            let image_ref = format!("images/img_{img:05}.png");
            let mut golds: Vec<usize> = Vec::with_capacity(m);
            while golds.len() < m {
                let g = popularity[zipf.sample(&mut rng)];
                if !golds.contains(&g) {
                    golds.push(g);
                }
            }
            let width = CROP_SIDE * m as u32;
            let mut pixels = vec![0u8; (width * CROP_SIDE) as usize];
            let mut mentions = Vec::with_capacity(m);
            for (slot, &g) in golds.iter().enumerate() {
                let (hard_v, hard_t) = if cfg.complementary {
                    let u: f64 = rng.random();
                    (u < 1.0 - s_v, u >= s_t)
                } else {
                    (!rng.random_bool(s_v), !rng.random_bool(s_t))
                };
                let mut constraints = Vec::with_capacity(2);
                if let Some(u) = &dir_v[g] {
                    let t = chan_v.target(&mut rng, g, u, hard_v, s_v, cfg.easy_noise);
                    constraints.push((&proj_v, t.iter().map(|v| v * TARGET_NORM).collect()));
                }
                let t = chan_t.target(&mut rng, g, &dir_t[g], hard_t, s_t, cfg.easy_noise);
                constraints.push((&proj_t, t.iter().map(|v| v * TARGET_NORM).collect()));
                let x0 = gaussian(&mut rng, crop_len, PIXEL_STD);
                let crop = solve_crop(x0, &constraints);
                for row in 0..CROP_SIDE as usize {
                    let dst = row * width as usize + slot * CROP_SIDE as usize;
                    let src = row * CROP_SIDE as usize;
                    pixels[dst..dst + CROP_SIDE as usize].copy_from_slice(&crop[src..src + CROP_SIDE as usize]);
                }
                mentions.push(VisualMention {
                    mention_id: format!("m{img:05}_{slot}"),
                    image_ref: image_ref.clone(),
                    bbox: BBox::new(slot as u32 * CROP_SIDE, 0, CROP_SIDE, CROP_SIDE),
                    gold_entity_id: Some(entities[g].entity_id.clone()),
                });
            }
            store.insert_raster(image_ref.clone(), &Raster::gray(width, CROP_SIDE, pixels));
            images.push(ImageMentions { image_ref, mentions });
        }
    }

    Ok(SynthData {
        kb: KnowledgeBase::new(entities)?,
        dataset: MentionDataset::new(images, SplitTag::Unsplit)?,
        store,
        seeds,
        dim: cfg.dim,
        text_mode: cfg.text_mode,
    })
}

/// Mean squared deviation of centered pixels from zero; a sanity measure of
/// how natural the generated crops look.
pub fn pixel_std(raster: &Raster) -> f64 {
    let n = raster.pixels.len() as f64;
    (raster.pixels.iter().map(|&b| center_byte(b).powi(2)).sum::<f64>() / n).sqrt()
}
