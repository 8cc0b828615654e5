//! Visual mentions and mention manifests.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_store::{FsImageStore, ImageStore};
use crate::kb::KnowledgeBase;

/// Pixel rectangle `(x, y, w, h)`; serialized as a 4-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }
}

impl From<[u32; 4]> for BBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One region of one image to be linked. The full image is the mention's
/// visual context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisualMention {
    pub mention_id: String,
    pub image_ref: String,
    pub bbox: BBox,
    pub gold_entity_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Dev,
    Test,
    Unsplit,
}

/// All mentions of a single image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageMentions {
    pub image_ref: String,
    pub mentions: Vec<VisualMention>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionDataset {
    images: Vec<ImageMentions>,
    pub split: SplitTag,
}

impl MentionDataset {
    /// Checks id uniqueness and box sizes. Image bounds need the pixels and
    /// are checked by [`MentionDataset::validate_images`].
    pub fn new(images: Vec<ImageMentions>, split: SplitTag) -> Result<Self> {
        let mut seen = HashSet::new();
        for img in &images {
            for m in &img.mentions {
                if m.image_ref != img.image_ref {
                    return Err(Error::Contract(format!(
                        "mention {} filed under image {} but references {}",
                        m.mention_id, img.image_ref, m.image_ref
                    )));
                }
                if !seen.insert(m.mention_id.as_str()) {
                    return Err(Error::DuplicateMention(m.mention_id.clone()));
                }
                if m.bbox.w == 0 || m.bbox.h == 0 {
                    return Err(Error::InvalidBBox {
                        mention_id: m.mention_id.clone(),
                        reason: format!("zero-sized box {:?}", <[u32; 4]>::from(m.bbox)),
                    });
                }
            }
        }
        Ok(Self { images, split })
    }

    pub fn images(&self) -> &[ImageMentions] {
        &self.images
    }

    pub fn mentions(&self) -> impl Iterator<Item = &VisualMention> {
        self.images.iter().flat_map(|i| i.mentions.iter())
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn mention_count(&self) -> usize {
        self.images.iter().map(|i| i.mentions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.mention_count() == 0
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    /// mention_id -> gold entity id, for labeled mentions.
    pub fn gold(&self) -> BTreeMap<String, String> {
        self.mentions()
            .filter_map(|m| {
                m.gold_entity_id
                    .as_ref()
                    .map(|g| (m.mention_id.clone(), g.clone()))
            })
            .collect()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.mentions().all(|m| m.gold_entity_id.is_some())
    }

    /// Every image must be readable and every box must fit inside it.
    pub fn validate_images(&self, store: &dyn ImageStore) -> Result<()> {
        for img in &self.images {
            let (w, h) = store.dimensions(&img.image_ref)?;
            for m in &img.mentions {
                let b = m.bbox;
                if u64::from(b.x) + u64::from(b.w) > u64::from(w)
                    || u64::from(b.y) + u64::from(b.h) > u64::from(h)
                {
                    return Err(Error::InvalidBBox {
                        mention_id: m.mention_id.clone(),
                        reason: format!(
                            "box {:?} outside {w}x{h} image {}",
                            <[u32; 4]>::from(b),
                            img.image_ref
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn validate_gold(&self, kb: &KnowledgeBase) -> Result<()> {
        for m in self.mentions() {
            if let Some(g) = &m.gold_entity_id {
                if !kb.contains(g) {
                    return Err(Error::UnknownEntity {
                        mention_id: m.mention_id.clone(),
                        entity_id: g.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Rewrites every image reference, e.g. to make a manifest portable
    /// across directories.
    pub fn map_image_refs(mut self, mut f: impl FnMut(&str) -> String) -> Self {
        for img in &mut self.images {
            let new_ref = f(&img.image_ref);
            for m in &mut img.mentions {
                m.image_ref = new_ref.clone();
            }
            img.image_ref = new_ref;
        }
        self
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    image: String,
    mentions: Vec<ManifestMention>,
}

#[derive(Serialize, Deserialize)]
struct ManifestMention {
    mention_id: String,
    bbox: [i64; 4],
    #[serde(default)]
    entity_id: Option<String>,
}

/// Parses a manifest without touching images or a knowledge base.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<MentionDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut images = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestLine = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), lineno + 1), e))?;
        let mut mentions = Vec::with_capacity(rec.mentions.len());
        for m in rec.mentions {
            let [x, y, w, h] = m.bbox;
            let in_range = |v: i64| u32::try_from(v).ok();
            let bbox = match (in_range(x), in_range(y), in_range(w), in_range(h)) {
                (Some(x), Some(y), Some(w), Some(h)) => BBox::new(x, y, w, h),
                _ => {
                    return Err(Error::InvalidBBox {
                        mention_id: m.mention_id,
                        reason: format!("coordinates out of range {:?}", m.bbox),
                    })
                }
            };
            mentions.push(VisualMention {
                mention_id: m.mention_id,
                image_ref: rec.image.clone(),
                bbox,
                gold_entity_id: m.entity_id,
            });
        }
        images.push(ImageMentions {
            image_ref: rec.image,
            mentions,
        });
    }
    MentionDataset::new(images, SplitTag::Unsplit)
}

/// Loads a manifest, resolving images relative to the manifest's directory.
pub fn load_mentions(path: impl AsRef<Path>) -> Result<MentionDataset> {
    let path = path.as_ref();
    let root = path.parent().unwrap_or(Path::new("."));
    load_mentions_with(path, &FsImageStore::new(root), None)
}

/// Loads a manifest and checks it against an image store and, optionally,
/// the knowledge base its gold labels point into.
pub fn load_mentions_with(
    path: impl AsRef<Path>,
    store: &dyn ImageStore,
    kb: Option<&KnowledgeBase>,
) -> Result<MentionDataset> {
    let ds = parse_manifest(path)?;
    ds.validate_images(store)?;
    if let Some(kb) = kb {
        ds.validate_gold(kb)?;
    }
    Ok(ds)
}

pub fn save_mentions(ds: &MentionDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for img in ds.images() {
        let line = ManifestLine {
            image: img.image_ref.clone(),
            mentions: img
                .mentions
                .iter()
                .map(|m| ManifestMention {
                    mention_id: m.mention_id.clone(),
                    bbox: <[u32; 4]>::from(m.bbox).map(i64::from),
                    entity_id: m.gold_entity_id.clone(),
                })
                .collect(),
        };
        let s = serde_json::to_string(&line).expect("manifest line serializes");
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_store::{MemImageStore, Raster};

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn image_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let mut mem = MemImageStore::new();
        mem.insert_raster("img/a.png", &Raster::gray(10, 8, vec![0; 80]));
        mem.write_to_dir(dir.path()).unwrap();
        dir
    }

    #[test]
    fn single_mention_manifest() {
        let dir = image_dir();
        let p = write(
            dir.path(),
            "m.jsonl",
            r#"{"image":"img/a.png","mentions":[{"mention_id":"m1","bbox":[1,1,4,4],"entity_id":"Q1"}]}"#,
        );
        let ds = load_mentions(&p).unwrap();
        assert_eq!(ds.mention_count(), 1);
        assert_eq!(ds.image_count(), 1);
        let m = ds.mentions().next().unwrap();
        assert_eq!(m.bbox, BBox::new(1, 1, 4, 4));
        assert_eq!(m.gold_entity_id.as_deref(), Some("Q1"));
    }

    #[test]
    fn zero_width_box_rejected() {
        let dir = image_dir();
        let p = write(
            dir.path(),
            "m.jsonl",
            r#"{"image":"img/a.png","mentions":[{"mention_id":"m1","bbox":[1,1,0,4],"entity_id":null}]}"#,
        );
        let err = load_mentions(&p).unwrap_err();
        assert!(matches!(err, Error::InvalidBBox { ref mention_id, .. } if mention_id == "m1"));
    }

    #[test]
    fn box_outside_image_names_mention() {
        let dir = image_dir();
        let p = write(
            dir.path(),
            "m.jsonl",
            r#"{"image":"img/a.png","mentions":[{"mention_id":"ok","bbox":[0,0,10,8]},{"mention_id":"bad","bbox":[8,0,4,4]}]}"#,
        );
        let err = load_mentions(&p).unwrap_err();
        assert!(matches!(err, Error::InvalidBBox { ref mention_id, .. } if mention_id == "bad"));
        let p = write(
            dir.path(),
            "neg.jsonl",
            r#"{"image":"img/a.png","mentions":[{"mention_id":"neg","bbox":[-1,0,4,4]}]}"#,
        );
        assert!(matches!(load_mentions(&p).unwrap_err(), Error::InvalidBBox { .. }));
    }

    #[test]
    fn missing_image_rejected() {
        let dir = image_dir();
        let p = write(
            dir.path(),
            "m.jsonl",
            r#"{"image":"img/none.png","mentions":[{"mention_id":"m1","bbox":[0,0,1,1]}]}"#,
        );
        assert!(load_mentions(&p).unwrap_err().is_io());
    }

    #[test]
    fn duplicate_mention_ids_rejected() {
        let dir = image_dir();
        let p = write(
            dir.path(),
            "m.jsonl",
            concat!(
                r#"{"image":"img/a.png","mentions":[{"mention_id":"m1","bbox":[0,0,1,1]}]}"#,
                "\n",
                r#"{"image":"img/a.png","mentions":[{"mention_id":"m1","bbox":[0,0,2,2]}]}"#,
            ),
        );
        assert!(matches!(load_mentions(&p).unwrap_err(), Error::DuplicateMention(id) if id == "m1"));
    }

    #[test]
    fn unresolvable_gold_with_kb() {
        let dir = image_dir();
        let p = write(
            dir.path(),
            "m.jsonl",
            r#"{"image":"img/a.png","mentions":[{"mention_id":"m1","bbox":[0,0,1,1],"entity_id":"Q404"}]}"#,
        );
        let kb = KnowledgeBase::new(vec![crate::kb::Entity {
            entity_id: "Q1".into(),
            name: "x".into(),
            description: "y".into(),
            image_ref: None,
        }])
        .unwrap();
        let err = load_mentions_with(&p, &FsImageStore::new(dir.path()), Some(&kb)).unwrap_err();
        assert!(matches!(err, Error::UnknownEntity { ref entity_id, .. } if entity_id == "Q404"));
    }
}
