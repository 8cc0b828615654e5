//! Model directories and input loading.
//!
//! A model directory holds `index.emb` (final, normalized entity
//! embeddings), `index.json` (how to rebuild the pipeline and index) and,
//! when fine-tuned, the two head checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vnel::dataset::StubSeeds;
use vnel::embedding::EmbeddingMatrix;
use vnel::encoder::{EncoderSpec, HeadPair, MentionMode, TextMode};
use vnel::image_store::FsImageStore;
use vnel::kb::{load_kb, KnowledgeBase};
use vnel::linker::{Backend, EntityIndex, Linker};
use vnel::mention::{parse_manifest, MentionDataset};
use vnel::pipeline::Pipeline;
use vnel::Modality;

use crate::args::{EncoderArgs, MentionModeArg, Subtask, TextModeArg};
use crate::CliError;

pub const INDEX_EMB: &str = "index.emb";
pub const INDEX_META: &str = "index.json";

/// Enough to rebuild a pipeline's encoders deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub subtask: String,
    pub encoder: String,
    pub seed: u64,
    pub dim: usize,
    pub text_mode: TextMode,
    pub mention_mode: MentionMode,
}

impl PipelineSpec {
    pub fn from_args(a: &EncoderArgs) -> Result<Self, CliError> {
        let subtask = match a.subtask {
            Subtask::V2v => "v2v",
            Subtask::V2t => "v2t",
            Subtask::V2vt => {
                return Err(CliError::Usage(
                    "v2vt combines two models; build or train v2v and v2t separately".into(),
                ))
            }
        };
        let default_mode = if subtask == "v2v" { MentionMode::Crop } else { MentionMode::WholeImage };
        Ok(Self {
            subtask: subtask.into(),
            encoder: a.encoder.clone(),
            seed: a.seed,
            dim: a.dim,
            text_mode: match a.text_mode {
                TextModeArg::Name => TextMode::Name,
                TextModeArg::NameDesc => TextMode::NameDesc,
            },
            mention_mode: match a.mention_mode {
                None => default_mode,
                Some(MentionModeArg::Crop) => MentionMode::Crop,
                Some(MentionModeArg::WholeImage) => MentionMode::WholeImage,
            },
        })
    }

    pub fn build(&self, heads: Option<HeadPair>) -> Result<Pipeline, CliError> {
        if self.encoder != "stub" {
            return Err(vnel::Error::Config(format!(
                "encoder {} is not available in this build; only `stub` is registered",
                self.encoder
            ))
            .into());
        }
        let spec = EncoderSpec::stub(self.dim);
        spec.validate()?;
        let seeds = StubSeeds::from_seed(self.seed);
        let p = if self.subtask == "v2v" {
            Pipeline::stub_v2v(spec, seeds.visual)
        } else {
            Pipeline::stub_v2t(spec, seeds.image_text, self.text_mode)
        };
        let p = p.with_mode(self.mention_mode);
        Ok(match heads {
            Some(h) => p.with_heads(h),
            None => p,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub pipeline: PipelineSpec,
    pub backend: Backend,
    pub modality: Modality,
    pub excluded: Vec<String>,
    pub adapted: bool,
}

pub fn save_model(dir: &Path, spec: &PipelineSpec, linker: &Linker) -> Result<(), CliError> {
    linker.index.embeddings().save(dir.join(INDEX_EMB))?;
    if let Some(h) = &linker.pipeline.heads {
        h.checkpoint(dir)?;
    }
    let meta = ModelMeta {
        pipeline: spec.clone(),
        backend: linker.index.backend(),
        modality: linker.index.modality(),
        excluded: linker.index.excluded().to_vec(),
        adapted: linker.pipeline.heads.is_some(),
    };
    write_json(&dir.join(INDEX_META), &meta)
}

pub fn load_meta(dir: &Path) -> Result<ModelMeta, CliError> {
    let path = dir.join(INDEX_META);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        vnel::Error::Parse {
            location: path.display().to_string(),
            reason: e.to_string(),
        }
        .into()
    })
}

pub fn load_model(dir: &Path) -> Result<(ModelMeta, Linker), CliError> {
    let meta = load_meta(dir)?;
    let heads = if meta.adapted { Some(HeadPair::restore(dir)?) } else { None };
    let pipeline = meta.pipeline.build(heads)?;
    let m = EmbeddingMatrix::load(dir.join(INDEX_EMB))?;
    let index = EntityIndex::from_embeddings(m, meta.modality, meta.excluded.clone(), meta.backend)?;
    Ok((meta, Linker::new(pipeline, index)?))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn base_dir(file: &Path) -> Result<PathBuf, CliError> {
    let parent = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::canonicalize(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))
}

fn absolute(root: &Path, r: &str) -> String {
    if Path::new(r).is_absolute() {
        r.to_string()
    } else {
        root.join(r).display().to_string()
    }
}

/// Knowledge base with image references made absolute against its file.
pub fn load_kb_abs(path: &Path) -> Result<KnowledgeBase, CliError> {
    let root = base_dir(path)?;
    let kb = load_kb(path)?;
    let entities = kb
        .iter()
        .cloned()
        .map(|mut e| {
            e.image_ref = e.image_ref.map(|r| if r.is_empty() { r } else { absolute(&root, &r) });
            e
        })
        .collect();
    Ok(KnowledgeBase::new(entities)?)
}

/// Manifest with image references made absolute against its file.
pub fn load_manifest_abs(path: &Path) -> Result<MentionDataset, CliError> {
    let root = base_dir(path)?;
    Ok(parse_manifest(path)?.map_image_refs(|r| absolute(&root, r)))
}

/// A store for absolute references.
pub fn abs_store() -> FsImageStore {
    FsImageStore::new("/")
}

/// Like `load_manifest_abs` but also checks every image and bounding box.
pub fn load_mentions_checked(path: &Path) -> Result<MentionDataset, CliError> {
    let ds = load_manifest_abs(path)?;
    ds.validate_images(&abs_store())?;
    Ok(ds)
}

pub fn absolutize(path: &Path, r: &str) -> Result<String, CliError> {
    Ok(absolute(&base_dir(path)?, r))
}
