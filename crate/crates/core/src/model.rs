//! Domain types shared by every stage: the tissue taxonomy, labeled images,
//! patches, and the dataset manifest.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of tissue classes a classifier can output.
pub const NUM_CLASSES: usize = 7;

/// Mask code for unlabeled or background pixels.
pub const UNLABELED: u8 = 0;

/// Default patch side in pixels.
pub const DEFAULT_PATCH_SIDE: u32 = 20;

/// The seven chronic-wound tissue types, numbered 1..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TissueClass {
    Necrotic = 1,
    Sloughy = 2,
    HealthyGranulating = 3,
    UnhealthyGranulating = 4,
    HyperGranulating = 5,
    Infected = 6,
    Epithelizing = 7,
}

impl TissueClass {
    pub const ALL: [TissueClass; NUM_CLASSES] = [
        TissueClass::Necrotic,
        TissueClass::Sloughy,
        TissueClass::HealthyGranulating,
        TissueClass::UnhealthyGranulating,
        TissueClass::HyperGranulating,
        TissueClass::Infected,
        TissueClass::Epithelizing,
    ];

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1..=7 => Ok(Self::ALL[usize::from(code - 1)]),
            _ => Err(Error::OutOfRange(u32::from(code))),
        }
    }

    /// Class for a zero-based index in `0..7`.
    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or(Error::OutOfRange(index as u32 + 1))
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Zero-based index, `code - 1`.
    pub fn index(self) -> usize {
        usize::from(self.code() - 1)
    }

    pub fn name(self) -> &'static str {
        match self {
            TissueClass::Necrotic => "necrotic",
            TissueClass::Sloughy => "sloughy",
            TissueClass::HealthyGranulating => "healthy_granulating",
            TissueClass::UnhealthyGranulating => "unhealthy_granulating",
            TissueClass::HyperGranulating => "hyper_granulating",
            TissueClass::Infected => "infected",
            TissueClass::Epithelizing => "epithelizing",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }
}

impl fmt::Display for TissueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Overlay color for a mask code.
pub fn class_palette(code: u8) -> Result<[u8; 3]> {
    Ok(match code {
        0 => [128, 128, 128],
        1 => [0, 0, 0],
        2 => [255, 255, 0],
        3 => [255, 105, 105],
        4 => [139, 0, 0],
        5 => [255, 0, 255],
        6 => [0, 128, 0],
        7 => [255, 192, 203],
        _ => return Err(Error::OutOfRange(u32::from(code))),
    })
}

/// An RGB image with its pixel-level class mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    id: String,
    pixels: RgbImage,
    mask: GrayImage,
}

impl LabeledImage {
    /// Validates that dimensions agree and all mask codes are in `0..=7`.
    pub fn new(id: impl Into<String>, pixels: RgbImage, mask: GrayImage) -> Result<Self> {
        if pixels.dimensions() != mask.dimensions() {
            return Err(Error::DimensionMismatch {
                image_width: pixels.width(),
                image_height: pixels.height(),
                mask_width: mask.width(),
                mask_height: mask.height(),
            });
        }
        validate_mask(&mask)?;
        Ok(Self {
            id: id.into(),
            pixels,
            mask,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn mask(&self) -> &GrayImage {
        &self.mask
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

fn validate_mask(mask: &GrayImage) -> Result<()> {
    for (col, row, px) in mask.enumerate_pixels() {
        if px[0] as usize > NUM_CLASSES {
            return Err(Error::InvalidMaskValue {
                value: px[0],
                row,
                col,
            });
        }
    }
    Ok(())
}

/// An `n x n` block cut from a source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub pixels: RgbImage,
    pub grid_row: u32,
    pub grid_col: u32,
    pub source_id: String,
}

impl Patch {
    pub fn side(&self) -> u32 {
        self.pixels.width()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPatch {
    pub patch: Patch,
    pub label: TissueClass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub patch_side: u32,
}

impl DatasetManifest {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.image_id.as_str())
    }
}

const MANIFEST_HEADER: [&str; 3] = ["image_id", "image_path", "mask_path"];

/// Reads a manifest CSV (`image_id,image_path,mask_path`).
///
/// Relative paths are resolved against the manifest's directory. Both paths
/// of every entry must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let mut header_seen = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if !header_seen {
            if record.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
                return Err(parse_err(
                    line,
                    format!("expected header `{}`", MANIFEST_HEADER.join(",")),
                ));
            }
            header_seen = true;
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let image_id = record[0].to_string();
        if image_id.is_empty() {
            return Err(parse_err(line, "empty image_id".into()));
        }
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateId(image_id));
        }
        let image_path = base.join(&record[1]);
        let mask_path = base.join(&record[2]);
        for p in [&image_path, &mask_path] {
            if !p.exists() {
                return Err(Error::FileNotFound(p.clone()));
            }
        }
        entries.push(ManifestEntry {
            image_id,
            image_path,
            mask_path,
        });
    }
    if !header_seen {
        return Err(parse_err(1, "missing header".into()));
    }
    Ok(DatasetManifest {
        entries,
        patch_side: DEFAULT_PATCH_SIDE,
    })
}

/// Writes a manifest CSV. Paths are written as given.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::from("image_id,image_path,mask_path\n");
    for e in entries {
        out.push_str(&format!(
            "{},{},{}\n",
            e.image_id,
            e.image_path.display(),
            e.mask_path.display()
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Decodes any supported image as 8-bit RGB, dropping alpha.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Loads a single-channel 8-bit mask.
pub fn load_mask(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match img {
        image::DynamicImage::ImageLuma8(m) => Ok(m),
        other => Err(Error::Decode {
            path: path.to_path_buf(),
            message: format!("mask must be 8-bit single-channel, found {:?}", other.color()),
        }),
    }
}

pub fn load_labeled_image(entry: &ManifestEntry) -> Result<LabeledImage> {
    let pixels = load_rgb(&entry.image_path)?;
    let mask = load_mask(&entry.mask_path)?;
    LabeledImage::new(entry.image_id.clone(), pixels, mask)
}

pub fn save_mask(path: &Path, mask: &GrayImage) -> Result<()> {
    save_png(path, mask)
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    save_png(path, img)
}

fn save_png<P, C>(path: &Path, img: &image::ImageBuffer<P, C>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}
