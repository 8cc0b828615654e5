//! Mention and entity encoders behind one interface.
//!
//! Pretrained backbones are external: they plug in through [`ImageEncoder`]
//! and [`TextEncoder`] and are looked up by id in an [`EncoderRegistry`].
//! The crate ships only the deterministic [`stub::StubEncoder`].

pub mod adapter;
pub mod stub;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Modality, Result};
use crate::image_store::{ImageStore, Raster};
use crate::kb::Entity;
use crate::mention::VisualMention;

pub use adapter::{adapt, normalize, score, AdapterHead, HeadPair, HeadSide, UnitVector};
pub use stub::StubEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    VisualPretrained,
    TextPretrained,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub output_dim: usize,
    /// Side length images are resized to before a pretrained backbone.
    pub image_size: u32,
    pub text_max_tokens: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Stub,
            output_dim: 512,
            image_size: 224,
            text_max_tokens: 77,
        }
    }
}

impl EncoderSpec {
    pub fn stub(output_dim: usize) -> Self {
        Self {
            output_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 || self.image_size == 0 || self.text_max_tokens == 0 {
            return Err(Error::Config(format!(
                "encoder spec fields must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which part of the image represents a mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MentionMode {
    /// The bounding-box region.
    Crop,
    /// The full image, i.e. the mention's visual context.
    WholeImage,
}

/// Which entity fields make up the textual description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    Name,
    NameDesc,
}

pub trait ImageEncoder: Send + Sync {
    fn output_dim(&self) -> usize;
    fn encode_image(&self, image: &Raster) -> Result<Vec<f32>>;
}

pub trait TextEncoder: Send + Sync {
    fn output_dim(&self) -> usize;
    fn encode_text(&self, text: &str) -> Result<Vec<f32>>;
}

/// Resizes to the square input size of a pretrained backbone.
pub fn preprocess(image: &Raster, spec: &EncoderSpec) -> Raster {
    use image::imageops::{resize, FilterType};
    let s = spec.image_size;
    match image.channels {
        1 => {
            let g = image::GrayImage::from_raw(image.width, image.height, image.pixels.clone())
                .expect("raster buffer");
            Raster::gray(s, s, resize(&g, s, s, FilterType::Triangle).into_raw())
        }
        _ => {
            let c = image::RgbImage::from_raw(image.width, image.height, image.pixels.clone())
                .expect("raster buffer");
            Raster {
                width: s,
                height: s,
                channels: 3,
                pixels: resize(&c, s, s, FilterType::Triangle).into_raw(),
            }
        }
    }
}

fn check_dim(spec: &EncoderSpec, encoder_dim: usize) -> Result<()> {
    if encoder_dim != spec.output_dim {
        return Err(Error::Config(format!(
            "encoder produces {encoder_dim}-d vectors but spec asks for {}",
            spec.output_dim
        )));
    }
    Ok(())
}

fn check_output(spec: &EncoderSpec, v: Vec<f32>) -> Result<Vec<f32>> {
    if v.len() != spec.output_dim {
        return Err(Error::DimMismatch {
            expected: spec.output_dim,
            actual: v.len(),
        });
    }
    Ok(v)
}

/// Raw mention embedding `f^m`.
pub fn encode_mention(
    mention: &VisualMention,
    spec: &EncoderSpec,
    mode: MentionMode,
    encoder: &dyn ImageEncoder,
    store: &dyn ImageStore,
) -> Result<Vec<f32>> {
    check_dim(spec, encoder.output_dim())?;
    let image = store.load(&mention.image_ref)?;
    let input = match mode {
        MentionMode::Crop => image.crop(&mention.bbox).map_err(|_| Error::InvalidBBox {
            mention_id: mention.mention_id.clone(),
            reason: format!("box outside {}x{} image", image.width, image.height),
        })?,
        MentionMode::WholeImage => image,
    };
    check_output(spec, encoder.encode_image(&input)?)
}

/// The text fed to a text encoder: `name` or `name. description`, cut to
/// `max_words` whitespace-separated words.
pub fn entity_text(entity: &Entity, mode: TextMode, max_words: usize) -> String {
    let full = match mode {
        TextMode::NameDesc if entity.has_description() => {
            format!("{}. {}", entity.name, entity.description.trim())
        }
        _ => entity.name.clone(),
    };
    full.split_whitespace()
        .take(max_words)
        .collect::<Vec<_>>()
        .join(" ")
}

/// How an entity is embedded.
#[derive(Clone, Copy)]
pub enum EntityEncoder<'a> {
    Visual(&'a dyn ImageEncoder),
    Textual(&'a dyn TextEncoder, TextMode),
}

impl EntityEncoder<'_> {
    pub fn modality(&self) -> Modality {
        match self {
            EntityEncoder::Visual(_) => Modality::Visual,
            EntityEncoder::Textual(..) => Modality::Textual,
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            EntityEncoder::Visual(e) => e.output_dim(),
            EntityEncoder::Textual(e, _) => e.output_dim(),
        }
    }
}

/// True if the entity carries what `modality` needs.
pub fn has_modality(entity: &Entity, modality: Modality) -> bool {
    match modality {
        Modality::Visual => entity.has_image(),
        Modality::Textual => !entity.name.trim().is_empty() || entity.has_description(),
    }
}

/// Raw entity embedding `f^e`.
pub fn encode_entity(
    entity: &Entity,
    spec: &EncoderSpec,
    encoder: EntityEncoder<'_>,
    store: &dyn ImageStore,
) -> Result<Vec<f32>> {
    check_dim(spec, encoder.output_dim())?;
    let modality = encoder.modality();
    if !has_modality(entity, modality) {
        return Err(Error::MissingModality {
            entity_id: entity.entity_id.clone(),
            modality,
        });
    }
    let v = match encoder {
        EntityEncoder::Visual(enc) => {
            let image_ref = entity.image_ref.as_deref().expect("checked by has_modality");
            enc.encode_image(&store.load(image_ref)?)?
        }
        EntityEncoder::Textual(enc, mode) => {
            enc.encode_text(&entity_text(entity, mode, spec.text_max_tokens))?
        }
    };
    check_output(spec, v)
}

/// Externally supplied encoders, addressed as `plugin:<id>`.
#[derive(Default, Clone)]
pub struct EncoderRegistry {
    image: BTreeMap<String, Arc<dyn ImageEncoder>>,
    text: BTreeMap<String, Arc<dyn TextEncoder>>,
}

impl EncoderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_image(&mut self, id: impl Into<String>, enc: Arc<dyn ImageEncoder>) {
        self.image.insert(id.into(), enc);
    }

    pub fn register_text(&mut self, id: impl Into<String>, enc: Arc<dyn TextEncoder>) {
        self.text.insert(id.into(), enc);
    }

    pub fn image(&self, id: &str) -> Result<Arc<dyn ImageEncoder>> {
        self.image
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown image encoder plugin {id:?}")))
    }

    pub fn text(&self, id: &str) -> Result<Arc<dyn TextEncoder>> {
        self.text
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown text encoder plugin {id:?}")))
    }
}
