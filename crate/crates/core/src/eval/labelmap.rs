//! Dense per-patch predictions painted back onto an image.

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::bundle::ModelBundle;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::Featurizer;
use crate::model::{class_palette, UNLABELED};
use crate::patch::{patchify_rgb, PatchGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub grid: PatchGrid,
    /// Class codes over the covered grid area, `floor(W/n)*n x floor(H/n)*n`.
    pub codes: GrayImage,
    /// Full-size blend of the source with the palette; margins use code 0.
    pub overlay: RgbImage,
}

impl LabelMap {
    /// The code map rendered with [`class_palette`].
    pub fn colorized(&self) -> RgbImage {
        RgbImage::from_fn(self.codes.width(), self.codes.height(), |x, y| {
            Rgb(class_palette(self.codes.get_pixel(x, y)[0]).expect("codes are valid"))
        })
    }
}

pub fn blend(src: [u8; 3], palette: [u8; 3]) -> [u8; 3] {
    std::array::from_fn(|i| ((f64::from(src[i]) + f64::from(palette[i])) * 0.5).round() as u8)
}

pub fn predict_label_map(
    pixels: &RgbImage,
    bundle: &ModelBundle,
    featurizer: &Featurizer,
    exec: Exec,
) -> Result<LabelMap> {
    if featurizer.descriptor() != bundle.descriptor {
        return Err(Error::TagMismatch {
            expected: bundle.descriptor.to_string(),
            actual: featurizer.descriptor().to_string(),
        });
    }
    let n = bundle.patch_side;
    let (patches, grid) = patchify_rgb(pixels, "", n)?;
    let predictions = exec.try_map(&patches, |p| {
        let fv = featurizer.featurize(p)?;
        bundle.predict(fv.values())
    })?;

    let (cw, ch) = grid.covered();
    let mut codes = GrayImage::new(cw, ch);
    for (p, class) in patches.iter().zip(&predictions) {
        for y in 0..n {
            for x in 0..n {
                codes.put_pixel(p.grid_col * n + x, p.grid_row * n + y, Luma([class.code()]));
            }
        }
    }
    let overlay = RgbImage::from_fn(pixels.width(), pixels.height(), |x, y| {
        let code = if x < cw && y < ch { codes.get_pixel(x, y)[0] } else { UNLABELED };
        Rgb(blend(pixels.get_pixel(x, y).0, class_palette(code).expect("codes are valid")))
    });
    Ok(LabelMap { grid, codes, overlay })
}
