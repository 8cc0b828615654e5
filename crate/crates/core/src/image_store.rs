//! Image access: decoded rasters, cropping, and pluggable storage backends.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::mention::BBox;

/// A decoded 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn gray(width: u32, height: u32, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), (width * height) as usize, "gray raster size");
        Self {
            width,
            height,
            channels: 1,
            pixels,
        }
    }

    pub fn contains(&self, bbox: &BBox) -> bool {
        bbox.w > 0
            && bbox.h > 0
            && u64::from(bbox.x) + u64::from(bbox.w) <= u64::from(self.width)
            && u64::from(bbox.y) + u64::from(bbox.h) <= u64::from(self.height)
    }

    /// Copies the pixels inside `bbox`. The box must lie inside the image.
    pub fn crop(&self, bbox: &BBox) -> Result<Raster> {
        if !self.contains(bbox) {
            return Err(Error::Contract(format!(
                "bbox {bbox:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let c = self.channels as usize;
        let row_len = self.width as usize * c;
        let mut pixels = Vec::with_capacity(bbox.w as usize * bbox.h as usize * c);
        for y in bbox.y..bbox.y + bbox.h {
            let start = y as usize * row_len + bbox.x as usize * c;
            pixels.extend_from_slice(&self.pixels[start..start + bbox.w as usize * c]);
        }
        Ok(Raster {
            width: bbox.w,
            height: bbox.h,
            channels: self.channels,
            pixels,
        })
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let img = match self.channels {
            1 => DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
                    .expect("raster dimensions match pixel buffer"),
            ),
            3 => DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
                    .expect("raster dimensions match pixel buffer"),
            ),
            n => panic!("unsupported channel count {n}"),
        };
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("png encoding into memory");
        out.into_inner()
    }

    pub fn decode(image_ref: &str, bytes: &[u8]) -> Result<Raster> {
        let img = ImageReader::new(Cursor::new(bytes))
            .with_guessed_format()
            .map_err(|e| image_err(image_ref, e))?
            .decode()
            .map_err(|e| image_err(image_ref, e))?;
        Ok(match img {
            DynamicImage::ImageLuma8(g) => Raster {
                width: g.width(),
                height: g.height(),
                channels: 1,
                pixels: g.into_raw(),
            },
            other => {
                let rgb = other.to_rgb8();
                Raster {
                    width: rgb.width(),
                    height: rgb.height(),
                    channels: 3,
                    pixels: rgb.into_raw(),
                }
            }
        })
    }
}

fn image_err(image_ref: &str, e: impl std::fmt::Display) -> Error {
    Error::Image {
        image: image_ref.to_string(),
        reason: e.to_string(),
    }
}

/// Source of image bytes addressed by the string references found in
/// knowledge bases and mention manifests.
pub trait ImageStore: Send + Sync {
    fn read_bytes(&self, image_ref: &str) -> Result<Vec<u8>>;

    fn load(&self, image_ref: &str) -> Result<Raster> {
        Raster::decode(image_ref, &self.read_bytes(image_ref)?)
    }

    /// Width and height, read from the header where possible.
    fn dimensions(&self, image_ref: &str) -> Result<(u32, u32)> {
        let bytes = self.read_bytes(image_ref)?;
        ImageReader::new(Cursor::new(bytes))
            .with_guessed_format()
            .map_err(|e| image_err(image_ref, e))?
            .into_dimensions()
            .map_err(|e| image_err(image_ref, e))
    }
}

/// Images on disk; relative references resolve against `root`.
#[derive(Debug, Clone)]
pub struct FsImageStore {
    root: PathBuf,
}

impl FsImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, image_ref: &str) -> PathBuf {
        let p = Path::new(image_ref);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

impl ImageStore for FsImageStore {
    fn read_bytes(&self, image_ref: &str) -> Result<Vec<u8>> {
        let path = self.resolve(image_ref);
        std::fs::read(&path).map_err(|e| Error::io(path, e))
    }

    fn dimensions(&self, image_ref: &str) -> Result<(u32, u32)> {
        let path = self.resolve(image_ref);
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "image not found"),
            ));
        }
        image::image_dimensions(&path).map_err(|e| image_err(image_ref, e))
    }
}

/// In-memory images keyed by reference, holding encoded file bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemImageStore {
    files: BTreeMap<String, Vec<u8>>,
}

impl MemImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_bytes(&mut self, image_ref: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(image_ref.into(), bytes);
    }

    pub fn insert_raster(&mut self, image_ref: impl Into<String>, raster: &Raster) {
        self.insert_bytes(image_ref, raster.encode_png());
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes every image under `dir`, creating subdirectories as needed.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

impl ImageStore for MemImageStore {
    fn read_bytes(&self, image_ref: &str) -> Result<Vec<u8>> {
        self.files.get(image_ref).cloned().ok_or_else(|| {
            Error::io(
                image_ref,
                std::io::Error::new(std::io::ErrorKind::NotFound, "image not in store"),
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: u32, h: u32) -> Raster {
        Raster::gray(w, h, (0..w * h).map(|i| i as u8).collect())
    }

    #[test]
    fn crop_copies_rows() {
        let r = ramp(4, 3);
        let c = r.crop(&BBox::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.pixels, vec![5, 6, 9, 10]);
        assert!(r.crop(&BBox::new(3, 0, 2, 1)).is_err());
        assert!(r.crop(&BBox::new(0, 0, 0, 1)).is_err());
    }

    #[test]
    fn png_roundtrip_in_memory() {
        let r = ramp(7, 5);
        let mut store = MemImageStore::new();
        store.insert_raster("a.png", &r);
        assert_eq!(store.load("a.png").unwrap(), r);
        assert_eq!(store.dimensions("a.png").unwrap(), (7, 5));
        assert!(store.load("missing.png").unwrap_err().is_io());
    }

    #[test]
    fn fs_store_resolves_relative_refs() {
        let dir = tempfile::tempdir().unwrap();
        let mut mem = MemImageStore::new();
        mem.insert_raster("sub/x.png", &ramp(3, 2));
        mem.write_to_dir(dir.path()).unwrap();
        let fs = FsImageStore::new(dir.path());
        assert_eq!(fs.dimensions("sub/x.png").unwrap(), (3, 2));
        assert_eq!(fs.load("sub/x.png").unwrap(), ramp(3, 2));
        assert!(fs.dimensions("nope.png").unwrap_err().is_io());
    }
}
