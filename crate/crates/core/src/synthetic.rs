//! Deterministic color-texture wound images for tests, demos and benches.
//!
//! Each image shows one dominant tissue class on a skin-colored background,
//! with a smaller inset region of a second class. Sizes are deliberately not
//! multiples of the patch side, so edge strips get discarded.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    load_manifest, save_mask, save_rgb, write_manifest, DatasetManifest, LabeledImage, ManifestEntry, TissueClass,
    UNLABELED,
};

const BACKGROUND: [u8; 3] = [196, 158, 128];
const NOISE: i32 = 14;
const MARGIN: u32 = 8;

/// Base color of each class, indexed by [`TissueClass::index`].
pub const CLASS_COLORS: [[u8; 3]; 7] = [
    [38, 30, 28],
    [222, 204, 120],
    [204, 62, 72],
    [112, 32, 84],
    [250, 142, 108],
    [108, 152, 58],
    [232, 202, 216],
];

fn texture(class: TissueClass, x: u32, y: u32) -> i32 {
    let period = 3 + class.index() as u32;
    if (x / period + y / (period + 1)) % 2 == 0 {
        10
    } else {
        -10
    }
}

fn paint(base: [u8; 3], shade: i32, rng: &mut ChaCha8Rng) -> Rgb<u8> {
    Rgb(base.map(|c| (i32::from(c) + shade + rng.random_range(-NOISE..=NOISE)).clamp(0, 255) as u8))
}

/// Image `variant` of `class`. The same arguments always give the same image.
pub fn synthetic_image(class: TissueClass, variant: u32, seed: u64) -> LabeledImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(class.code()) << 32) ^ u64::from(variant));
    let width = 70 + 20 * (variant % 3) + rng.random_range(0..10);
    let height = 62 + 14 * ((variant + class.index() as u32) % 3) + rng.random_range(0..10);
    let secondary = TissueClass::ALL[(class.index() + 1 + variant as usize) % 7];
    let inset = (
        width / 2 + rng.random_range(0..6),
        height / 2 + rng.random_range(0..6),
        width - MARGIN,
        height - MARGIN,
    );

    let mut pixels = RgbImage::new(width, height);
    let mut mask = GrayImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let inside = x >= MARGIN && y >= MARGIN && x < width - MARGIN && y < height - MARGIN;
            let (code, px) = if !inside {
                (UNLABELED, paint(BACKGROUND, 0, &mut rng))
            } else {
                let c = if x >= inset.0 && y >= inset.1 && x < inset.2 && y < inset.3 && variant > 0 {
                    secondary
                } else {
                    class
                };
                (c.code(), paint(CLASS_COLORS[c.index()], texture(c, x, y), &mut rng))
            };
            pixels.put_pixel(x, y, px);
            mask.put_pixel(x, y, Luma([code]));
        }
    }
    let id = format!("{}_{variant}", class.name());
    LabeledImage::new(id, pixels, mask).expect("generated image is consistent")
}

/// `per_class` images of every class, class-major.
pub fn synthetic_dataset(per_class: u32, seed: u64) -> Vec<LabeledImage> {
    TissueClass::ALL
        .iter()
        .flat_map(|&c| (0..per_class).map(move |v| synthetic_image(c, v, seed)))
        .collect()
}

/// Writes images, masks and `manifest.csv` (relative paths) into `dir`.
pub fn write_dataset(dir: &Path, images: &[LabeledImage]) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(images.len());
    for img in images {
        let image_path = format!("{}.png", img.id());
        let mask_path = format!("{}_mask.png", img.id());
        save_rgb(&dir.join(&image_path), img.pixels())?;
        save_mask(&dir.join(&mask_path), img.mask())?;
        entries.push(ManifestEntry {
            image_id: img.id().to_string(),
            image_path: image_path.into(),
            mask_path: mask_path.into(),
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    load_manifest(&manifest)
}
