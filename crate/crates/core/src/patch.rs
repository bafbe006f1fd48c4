//! Grid partitioning, majority labeling and patch resizing.

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabeledImage, LabeledPatch, Patch, TissueClass, NUM_CLASSES};

/// Non-overlapping `patch_side` grid over an image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: u32,
    pub cols: u32,
    pub patch_side: u32,
    pub source_id: String,
}

impl PatchGrid {
    pub fn new(width: u32, height: u32, patch_side: u32, source_id: &str) -> Result<Self> {
        if patch_side < 2 {
            return Err(Error::InvalidArgument(format!(
                "patch side must be at least 2, got {patch_side}"
            )));
        }
        if width < patch_side || height < patch_side {
            return Err(Error::ImageTooSmall {
                width,
                height,
                patch_side,
            });
        }
        Ok(Self {
            rows: height / patch_side,
            cols: width / patch_side,
            patch_side,
            source_id: source_id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Covered area `(width, height)`; partial edge strips are excluded.
    pub fn covered(&self) -> (u32, u32) {
        (self.cols * self.patch_side, self.rows * self.patch_side)
    }

    pub fn cells(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
    }
}

fn crop_rgb(img: &RgbImage, x0: u32, y0: u32, side: u32) -> RgbImage {
    RgbImage::from_fn(side, side, |x, y| *img.get_pixel(x0 + x, y0 + y))
}

fn crop_codes(mask: &GrayImage, x0: u32, y0: u32, side: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity((side * side) as usize);
    for y in 0..side {
        for x in 0..side {
            out.push(mask.get_pixel(x0 + x, y0 + y)[0]);
        }
    }
    out
}

/// Cuts an RGB image into row-major patches. Partial strips at the right and
/// bottom edges are discarded.
pub fn patchify_rgb(pixels: &RgbImage, source_id: &str, patch_side: u32) -> Result<(Vec<Patch>, PatchGrid)> {
    let grid = PatchGrid::new(pixels.width(), pixels.height(), patch_side, source_id)?;
    let patches = grid
        .cells()
        .map(|(r, c)| Patch {
            pixels: crop_rgb(pixels, c * patch_side, r * patch_side, patch_side),
            grid_row: r,
            grid_col: c,
            source_id: source_id.to_string(),
        })
        .collect();
    Ok((patches, grid))
}

pub fn patchify(image: &LabeledImage, patch_side: u32) -> Result<(Vec<Patch>, PatchGrid)> {
    patchify_rgb(image.pixels(), image.id(), patch_side)
}

/// Most frequent labeled class in a block of mask codes.
///
/// Code 0 does not vote; ties go to the lowest class code; an all-zero block
/// yields `None`.
pub fn majority_label(codes: &[u8]) -> Option<TissueClass> {
    let mut counts = [0usize; NUM_CLASSES + 1];
    for &c in codes {
        counts[usize::from(c).min(NUM_CLASSES)] += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    for code in 1..=NUM_CLASSES {
        let n = counts[code];
        if n > 0 && best.is_none_or(|(_, m)| n > m) {
            best = Some((code, n));
        }
    }
    best.map(|(code, _)| TissueClass::ALL[code - 1])
}

/// Per-class patch counts of one image (`counts[c.index()]`).
pub type ClassCounts = [u32; NUM_CLASSES];

#[derive(Debug, Clone)]
pub struct ImagePatches {
    pub grid: PatchGrid,
    pub patches: Vec<LabeledPatch>,
    pub counts: ClassCounts,
    /// Patches with no labeled pixel.
    pub dropped: usize,
}

pub fn labeled_patches(image: &LabeledImage, patch_side: u32) -> Result<ImagePatches> {
    let (patches, grid) = patchify(image, patch_side)?;
    let mut counts = [0u32; NUM_CLASSES];
    let mut dropped = 0;
    let mut out = Vec::with_capacity(patches.len());
    for patch in patches {
        let codes = crop_codes(
            image.mask(),
            patch.grid_col * patch_side,
            patch.grid_row * patch_side,
            patch_side,
        );
        match majority_label(&codes) {
            Some(label) => {
                counts[label.index()] += 1;
                out.push(LabeledPatch { patch, label });
            }
            None => dropped += 1,
        }
    }
    Ok(ImagePatches {
        grid,
        patches: out,
        counts,
        dropped,
    })
}

/// Bilinear resize to `target_side x target_side` with edge clamping.
///
/// Sample positions use pixel-center alignment, so an equal-size resize is
/// the identity.
pub fn resize_patch(pixels: &RgbImage, target_side: u32) -> Result<RgbImage> {
    let (w, h) = pixels.dimensions();
    if target_side < w.max(h) {
        return Err(Error::InvalidArgument(format!(
            "target side {target_side} is smaller than patch side {}",
            w.max(h)
        )));
    }
    let xs = axis_weights(w, target_side);
    let ys = axis_weights(h, target_side);
    let src = pixels.as_raw();
    let stride = w as usize * 3;
    let mut out = RgbImage::new(target_side, target_side);
    let buf: &mut [u8] = &mut out;
    let row_len = target_side as usize * 3;
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        let row = &mut buf[oy * row_len..(oy + 1) * row_len];
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..3 {
                let p = |y: usize, x: usize| f64::from(src[y * stride + x * 3 + ch]);
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                row[ox * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

fn axis_weights(src: u32, dst: u32) -> Vec<(usize, usize, f64)> {
    let scale = f64::from(src) / f64::from(dst);
    let last = (src - 1) as f64;
    (0..dst)
        .map(|i| {
            let s = ((f64::from(i) + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src as usize - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}
