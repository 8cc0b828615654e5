//! Automated construction filters over crawled image-caption records.
//!
//! Records are kept when the caption names at least one person, the image
//! shows one to three faces, and the image bytes were not seen before.
//! Face detection and caption NER sit behind traits so real models can be
//! plugged in; simple deterministic detectors are provided for tests.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image_store::{ImageStore, Raster};
use crate::kb::KnowledgeBase;
use crate::mention::BBox;

/// Fewest and most faces a kept image may show.
pub const MIN_FACES: usize = 1;
pub const MAX_FACES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub image: String,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f32,
}

/// Byte offsets of a PERSON span in a caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

pub trait FaceDetector {
    fn detect(&self, image: &Raster) -> Vec<Detection>;
}

pub trait PersonNer {
    fn persons(&self, text: &str) -> Vec<Span>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    IoError,
    NoPersonCaption,
    FaceCount,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub image: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<CandidateRecord>,
    pub rejected: Vec<Rejection>,
}

pub fn construction_filter(
    records: &[CandidateRecord],
    store: &dyn ImageStore,
    faces: &dyn FaceDetector,
    ner: &dyn PersonNer,
) -> FilterOutcome {
    let mut seen: HashSet<[u8; 32]> = HashSet::new();
    let mut out = FilterOutcome::default();
    for rec in records {
        let reject = |out: &mut FilterOutcome, reason| {
            out.rejected.push(Rejection {
                image: rec.image.clone(),
                reason,
            })
        };
        let Ok(bytes) = store.read_bytes(&rec.image) else {
            reject(&mut out, RejectReason::IoError);
            continue;
        };
        let Ok(raster) = Raster::decode(&rec.image, &bytes) else {
            reject(&mut out, RejectReason::IoError);
            continue;
        };
        if ner.persons(&rec.caption).is_empty() {
            reject(&mut out, RejectReason::NoPersonCaption);
            continue;
        }
        let n = faces.detect(&raster).len();
        if !(MIN_FACES..=MAX_FACES).contains(&n) {
            reject(&mut out, RejectReason::FaceCount);
            continue;
        }
        let digest: [u8; 32] = Sha256::digest(&bytes).into();
        if !seen.insert(digest) {
            reject(&mut out, RejectReason::Duplicate);
            continue;
        }
        out.kept.push(rec.clone());
    }
    out
}

/// Counts bright blobs: 4-connected regions of pixels at or above
/// `threshold` covering at least `min_area` pixels.
#[derive(Debug, Clone, Copy)]
pub struct BlobFaceDetector {
    pub threshold: u8,
    pub min_area: usize,
}

impl Default for BlobFaceDetector {
    fn default() -> Self {
        Self {
            threshold: 250,
            min_area: 4,
        }
    }
}

impl FaceDetector for BlobFaceDetector {
    fn detect(&self, image: &Raster) -> Vec<Detection> {
        let (w, h) = (image.width as usize, image.height as usize);
        let c = image.channels as usize;
        let bright: Vec<bool> = image
            .pixels
            .chunks_exact(c)
            .map(|px| px.iter().map(|&v| u32::from(v)).sum::<u32>() >= u32::from(self.threshold) * c as u32)
            .collect();
        let mut seen = vec![false; w * h];
        let mut out = Vec::new();
        for start in 0..w * h {
            if !bright[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            let (mut x0, mut y0, mut x1, mut y1, mut area) = (w, h, 0, 0, 0);
            while let Some(p) = queue.pop_front() {
                let (x, y) = (p % w, p / w);
                area += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                let mut push = |q: usize| {
                    if bright[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                };
                if x > 0 {
                    push(p - 1);
                }
                if x + 1 < w {
                    push(p + 1);
                }
                if y > 0 {
                    push(p - w);
                }
                if y + 1 < h {
                    push(p + w);
                }
            }
            if area >= self.min_area {
                out.push(Detection {
                    bbox: BBox::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32),
                    confidence: 1.0,
                });
            }
        }
        out
    }
}

fn is_capitalized(word: &str) -> bool {
    let mut chars = word.chars();
    matches!(chars.next(), Some(c) if c.is_uppercase()) && chars.clone().next().is_some() && chars.all(|c| c.is_lowercase())
}

/// Word spans with their byte offsets, punctuation trimmed.
fn words(text: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive(char::is_whitespace) {
        let trimmed = raw.trim_end();
        let core = trimmed.trim_matches(|c: char| !c.is_alphanumeric());
        if !core.is_empty() {
            let start = offset + trimmed.find(core).unwrap_or(0);
            out.push((start, start + core.len(), core));
        }
        offset += raw.len();
    }
    out
}

/// Treats two consecutive capitalized words as a person name.
#[derive(Debug, Clone, Copy, Default)]
pub struct CapitalizedBigramNer;

impl PersonNer for CapitalizedBigramNer {
    fn persons(&self, text: &str) -> Vec<Span> {
        let ws = words(text);
        ws.windows(2)
            .filter(|p| is_capitalized(p[0].2) && is_capitalized(p[1].2))
            .map(|p| Span {
                start: p[0].0,
                end: p[1].1,
            })
            .collect()
    }
}

/// Matches known person names word by word.
#[derive(Debug, Clone, Default)]
pub struct GazetteerNer {
    names: BTreeSet<Vec<String>>,
    longest: usize,
}

impl GazetteerNer {
    pub fn new<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let names: BTreeSet<Vec<String>> = names
            .into_iter()
            .map(|n| n.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .filter(|n| !n.is_empty())
            .collect();
        let longest = names.iter().map(Vec::len).max().unwrap_or(0);
        Self { names, longest }
    }

    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        Self::new(kb.iter().map(|e| e.name.as_str()))
    }
}

impl PersonNer for GazetteerNer {
    fn persons(&self, text: &str) -> Vec<Span> {
        let ws = words(text);
        let mut out = Vec::new();
        for i in 0..ws.len() {
            for len in (1..=self.longest.min(ws.len() - i)).rev() {
                let key: Vec<String> = ws[i..i + len].iter().map(|w| w.2.to_string()).collect();
                if self.names.contains(&key) {
                    out.push(Span {
                        start: ws[i].0,
                        end: ws[i + len - 1].1,
                    });
                    break;
                }
            }
        }
        out
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<CandidateRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(format!("{}:{}", path.display(), n + 1), e))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        writeln!(w, "{}", serde_json::to_string(it).expect("record serializes")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_records(records: &[CandidateRecord], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(records, path.as_ref())
}

pub fn write_rejections(rejections: &[Rejection], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(rejections, path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_store::MemImageStore;

    /// A 32x8 gray image with `n` bright 2x2 squares.
    pub(crate) fn faces_image(n: usize, salt: u8) -> Raster {
        let (w, h) = (32u32, 8u32);
        let mut px = vec![salt % 200; (w * h) as usize];
        for f in 0..n {
            let x0 = f * 4;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                px[(dy + 2) * w as usize + x0 + dx] = 255;
            }
        }
        Raster::gray(w, h, px)
    }

    #[test]
    fn blob_detector_counts_squares() {
        let d = BlobFaceDetector::default();
        for n in 0..6 {
            assert_eq!(d.detect(&faces_image(n, 0)).len(), n);
        }
    }

    #[test]
    fn bigram_ner() {
        let ner = CapitalizedBigramNer;
        let s = ner.persons("Photo of Ada Lovelace, at the lab.");
        assert_eq!(s.len(), 1);
        assert_eq!(&"Photo of Ada Lovelace, at the lab."[s[0].start..s[0].end], "Ada Lovelace");
        assert!(ner.persons("a quiet street at night").is_empty());
    }

    #[test]
    fn gazetteer_ner() {
        let ner = GazetteerNer::new(["Kira Tomba", "Zed"]);
        assert_eq!(ner.persons("Zed met Kira Tomba.").len(), 2);
        assert!(ner.persons("Kira alone").is_empty());
    }

    #[test]
    fn face_count_bounds_and_duplicates() {
        let mut store = MemImageStore::new();
        let mut records = Vec::new();
        for n in 0..5 {
            let name = format!("f{n}.png");
            store.insert_raster(name.clone(), &faces_image(n, n as u8));
            records.push(CandidateRecord {
                image: name,
                caption: "Ada Lovelace".into(),
            });
        }
        store.insert_raster("dup.png", &faces_image(2, 2));
        records.push(CandidateRecord {
            image: "dup.png".into(),
            caption: "Ada Lovelace again".into(),
        });
        records.push(CandidateRecord {
            image: "missing.png".into(),
            caption: "Ada Lovelace".into(),
        });
        records.push(CandidateRecord {
            image: "f1.png".into(),
            caption: "nobody here".into(),
        });
        let out = construction_filter(&records, &store, &BlobFaceDetector::default(), &CapitalizedBigramNer);
        let kept: Vec<&str> = out.kept.iter().map(|r| r.image.as_str()).collect();
        assert_eq!(kept, ["f1.png", "f2.png", "f3.png"]);
        let reasons: Vec<(&str, RejectReason)> = out.rejected.iter().map(|r| (r.image.as_str(), r.reason)).collect();
        assert_eq!(
            reasons,
            [
                ("f0.png", RejectReason::FaceCount),
                ("f4.png", RejectReason::FaceCount),
                ("dup.png", RejectReason::Duplicate),
                ("missing.png", RejectReason::IoError),
                ("f1.png", RejectReason::NoPersonCaption),
            ]
        );
        let again = construction_filter(&out.kept, &store, &BlobFaceDetector::default(), &CapitalizedBigramNer);
        assert_eq!(again.kept, out.kept);
        assert!(again.rejected.is_empty());
    }

    #[test]
    fn rejection_log_format() {
        let r = Rejection {
            image: "a.png".into(),
            reason: RejectReason::NoPersonCaption,
        };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"image":"a.png","reason":"no-person-caption"}"#);
    }
}
