//! A complete bi-encoder: frozen encoders for both sides plus optional
//! adapter heads. Linkers, the trainer and the CLI all work in terms of
//! pipelines.

use std::sync::Arc;

use crate::encoder::{
    adapt, encode_entity, encode_mention, normalize, EncoderSpec, EntityEncoder, HeadPair,
    ImageEncoder, MentionMode, StubEncoder, TextEncoder, TextMode, UnitVector,
};
use crate::error::{Modality, Result};
use crate::image_store::ImageStore;
use crate::kb::Entity;
use crate::mention::VisualMention;

#[derive(Clone)]
pub enum EntitySide {
    Visual(Arc<dyn ImageEncoder>),
    Textual(Arc<dyn TextEncoder>, TextMode),
}

#[derive(Clone)]
pub struct Pipeline {
    pub name: String,
    pub spec: EncoderSpec,
    pub mention_encoder: Arc<dyn ImageEncoder>,
    pub mention_mode: MentionMode,
    pub entity_side: EntitySide,
    /// `None` is the zero-shot pipeline.
    pub heads: Option<HeadPair>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("name", &self.name)
            .field("modality", &self.modality())
            .field("mention_mode", &self.mention_mode)
            .field("adapted", &self.heads.is_some())
            .finish()
    }
}

impl Pipeline {
    /// Image-to-image linking with one stub visual encoder on both sides.
    pub fn stub_v2v(spec: EncoderSpec, seed: u64) -> Self {
        let enc = Arc::new(StubEncoder::new(spec.clone(), seed));
        Self {
            name: "v2v".into(),
            spec,
            mention_encoder: enc.clone(),
            mention_mode: MentionMode::Crop,
            entity_side: EntitySide::Visual(enc),
            heads: None,
        }
    }

    /// Image-to-text linking with a stub image-text encoder.
    pub fn stub_v2t(spec: EncoderSpec, seed: u64, text_mode: TextMode) -> Self {
        let enc = Arc::new(StubEncoder::new(spec.clone(), seed));
        Self {
            name: "v2t".into(),
            spec,
            mention_encoder: enc.clone(),
            mention_mode: MentionMode::WholeImage,
            entity_side: EntitySide::Textual(enc, text_mode),
            heads: None,
        }
    }

    pub fn with_heads(mut self, heads: HeadPair) -> Self {
        self.heads = Some(heads);
        self
    }

    pub fn with_mode(mut self, mode: MentionMode) -> Self {
        self.mention_mode = mode;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn modality(&self) -> Modality {
        match self.entity_side {
            EntitySide::Visual(_) => Modality::Visual,
            EntitySide::Textual(..) => Modality::Textual,
        }
    }

    pub fn text_mode(&self) -> Option<TextMode> {
        match self.entity_side {
            EntitySide::Visual(_) => None,
            EntitySide::Textual(_, m) => Some(m),
        }
    }

    pub fn raw_mention(&self, mention: &VisualMention, store: &dyn ImageStore) -> Result<Vec<f32>> {
        encode_mention(
            mention,
            &self.spec,
            self.mention_mode,
            self.mention_encoder.as_ref(),
            store,
        )
    }

    pub fn raw_entity(&self, entity: &Entity, store: &dyn ImageStore) -> Result<Vec<f32>> {
        let enc = match &self.entity_side {
            EntitySide::Visual(e) => EntityEncoder::Visual(e.as_ref()),
            EntitySide::Textual(e, mode) => EntityEncoder::Textual(e.as_ref(), *mode),
        };
        encode_entity(entity, &self.spec, enc, store)
    }

    /// Adapted and normalized mention embedding `F^m / |F^m|`.
    pub fn finish_mention(&self, raw: &[f32]) -> Result<UnitVector> {
        match &self.heads {
            Some(h) => normalize(&adapt(raw, &h.mention)?),
            None => normalize(raw),
        }
    }

    pub fn finish_entity(&self, raw: &[f32]) -> Result<UnitVector> {
        match &self.heads {
            Some(h) => normalize(&adapt(raw, &h.entity)?),
            None => normalize(raw),
        }
    }

    pub fn embed_mention(&self, mention: &VisualMention, store: &dyn ImageStore) -> Result<UnitVector> {
        self.finish_mention(&self.raw_mention(mention, store)?)
    }

    pub fn embed_entity(&self, entity: &Entity, store: &dyn ImageStore) -> Result<UnitVector> {
        self.finish_entity(&self.raw_entity(entity, store)?)
    }
}
