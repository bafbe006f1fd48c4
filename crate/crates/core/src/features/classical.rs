//! Color histograms and uniform local binary patterns.

use image::RgbImage;

use super::{DescriptorTag, FeatureVector};
use crate::error::{Error, Result};

/// Bins per channel for RGB and HSV histograms.
pub const COLOR_BINS: usize = 32;

/// Number of uniform LBP(8,1) bins: 58 uniform patterns plus one catch-all.
pub const LBP_BINS: usize = 59;

/// Per-channel 32-bin histograms, R‖G‖B, each block summing to 1.
pub fn rgb_histogram(pixels: &RgbImage) -> FeatureVector {
    let mut hist = vec![0.0; 3 * COLOR_BINS];
    for p in pixels.pixels() {
        for ch in 0..3 {
            hist[ch * COLOR_BINS + usize::from(p[ch] / 8)] += 1.0;
        }
    }
    normalize(&mut hist, pixels.len() / 3);
    FeatureVector::new(DescriptorTag::Rgb, hist)
}

/// Hexcone RGB to HSV: hue in degrees `[0, 360)`, saturation and value in
/// `[0, 1]`. Hue is 0 for achromatic pixels.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max / 255.0;
    let s = if max == 0.0 { 0.0 } else { delta / max };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h >= 360.0 {
        h -= 360.0;
    }
    (h, s, v)
}

fn bin_of(value: f64, upper: f64) -> usize {
    ((value / upper * COLOR_BINS as f64) as usize).min(COLOR_BINS - 1)
}

/// Per-channel 32-bin histograms over H‖S‖V, each block summing to 1.
pub fn hsv_histogram(pixels: &RgbImage) -> FeatureVector {
    let mut hist = vec![0.0; 3 * COLOR_BINS];
    for p in pixels.pixels() {
        let (h, s, v) = rgb_to_hsv(p.0);
        hist[bin_of(h, 360.0)] += 1.0;
        hist[COLOR_BINS + bin_of(s, 1.0)] += 1.0;
        hist[2 * COLOR_BINS + bin_of(v, 1.0)] += 1.0;
    }
    normalize(&mut hist, pixels.len() / 3);
    FeatureVector::new(DescriptorTag::Hsv, hist)
}

fn normalize(hist: &mut [f64], count: usize) {
    let n = count as f64;
    for v in hist {
        *v /= n;
    }
}

/// Circular neighbor offsets `(dx, dy)`, clockwise from the top-left.
const NEIGHBORS: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// Number of 0/1 transitions in the circular bit string of `pattern`.
pub fn circular_transitions(pattern: u8) -> u32 {
    (pattern ^ pattern.rotate_right(1)).count_ones()
}

/// Maps each 8-bit pattern to its uniform bin. Uniform patterns are numbered
/// in increasing pattern order; everything else lands in bin 58.
pub fn uniform_bin_table() -> [u8; 256] {
    let mut table = [(LBP_BINS - 1) as u8; 256];
    let mut next = 0u8;
    for p in 0..=255u8 {
        if circular_transitions(p) <= 2 {
            table[usize::from(p)] = next;
            next += 1;
        }
    }
    debug_assert_eq!(usize::from(next), LBP_BINS - 1);
    table
}

/// ITU-R 601 luma.
pub fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2])
}

/// LBP(8,1) codes over a grayscale grid, interior pixels only, row-major.
///
/// Bit `i` is set when neighbor `i` is at least as bright as the center.
pub fn lbp_codes(gray: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut codes = Vec::with_capacity(width.saturating_sub(2) * height.saturating_sub(2));
    for y in 1..height.saturating_sub(1) {
        for x in 1..width.saturating_sub(1) {
            let center = gray[y * width + x];
            let mut code = 0u8;
            for (bit, (dx, dy)) in NEIGHBORS.iter().enumerate() {
                let nx = (x as i32 + dx) as usize;
                let ny = (y as i32 + dy) as usize;
                if gray[ny * width + nx] >= center {
                    code |= 1 << bit;
                }
            }
            codes.push(code);
        }
    }
    codes
}

/// Normalized 59-bin uniform LBP(8,1) histogram over interior pixels.
pub fn lbp_histogram(pixels: &RgbImage) -> Result<FeatureVector> {
    let (w, h) = pixels.dimensions();
    if w < 3 || h < 3 {
        return Err(Error::PatchTooSmall(w.min(h), 3));
    }
    let gray: Vec<f64> = pixels.pixels().map(|p| luma(p.0)).collect();
    Ok(lbp_histogram_gray(&gray, w as usize, h as usize))
}

pub(crate) fn lbp_histogram_gray(gray: &[f64], width: usize, height: usize) -> FeatureVector {
    let table = uniform_bin_table();
    let codes = lbp_codes(gray, width, height);
    let mut hist = vec![0.0; LBP_BINS];
    for &c in &codes {
        hist[usize::from(table[usize::from(c)])] += 1.0;
    }
    normalize(&mut hist, codes.len());
    FeatureVector::new(DescriptorTag::Lbp, hist)
}

/// HSV‖LBP concatenation (155 values).
pub fn concat_hsv_lbp(hsv: &FeatureVector, lbp: &FeatureVector) -> Result<FeatureVector> {
    for (fv, want) in [(hsv, DescriptorTag::Hsv), (lbp, DescriptorTag::Lbp)] {
        if fv.tag() != want {
            return Err(Error::TagMismatch {
                expected: want.to_string(),
                actual: fv.tag().to_string(),
            });
        }
    }
    let mut values = Vec::with_capacity(hsv.dim() + lbp.dim());
    values.extend_from_slice(hsv.values());
    values.extend_from_slice(lbp.values());
    Ok(FeatureVector::new(DescriptorTag::HsvLbp, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn solid(c: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(20, 20, Rgb(c))
    }

    #[test]
    fn rgb_histogram_extremes() {
        let black = rgb_histogram(&solid([0, 0, 0]));
        assert_eq!(black.dim(), 96);
        for ch in 0..3 {
            assert_eq!(black.values()[ch * 32], 1.0);
        }
        assert_eq!(black.values().iter().sum::<f64>(), 3.0);

        let white = rgb_histogram(&solid([255, 255, 255]));
        for ch in 0..3 {
            assert_eq!(white.values()[ch * 32 + 31], 1.0);
        }
    }

    #[test]
    fn hsv_reference_points() {
        assert_eq!(rgb_to_hsv([255, 0, 0]), (0.0, 1.0, 1.0));
        assert_eq!(rgb_to_hsv([128, 128, 128]), (0.0, 0.0, 128.0 / 255.0));
        // max = G = 200, min = 64, delta = 136
        let (h, s, v) = rgb_to_hsv([64, 200, 130]);
        let h_expected = 60.0 * ((130.0 - 64.0) / 136.0 + 2.0);
        assert!((h - h_expected).abs() < 1e-12);
        assert!((h - 149.117_647_058_823_5).abs() < 1e-9);
        assert!((s - 0.68).abs() < 1e-12);
        assert!((v - 200.0 / 255.0).abs() < 1e-12);
        // magenta-ish hue wraps into [0, 360)
        let (h, _, _) = rgb_to_hsv([255, 0, 1]);
        assert!((0.0..360.0).contains(&h));
        assert_eq!(rgb_to_hsv([0, 0, 0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hsv_histogram_gray_and_red() {
        let gray = hsv_histogram(&solid([90, 90, 90]));
        assert_eq!(gray.values()[0], 1.0);
        assert_eq!(gray.values()[32], 1.0);

        let red = hsv_histogram(&solid([255, 0, 0]));
        assert_eq!(red.values()[0], 1.0);
        assert_eq!(red.values()[32 + 31], 1.0);
        assert_eq!(red.values()[64 + 31], 1.0);
    }

    #[test]
    fn uniform_table_has_58_uniform_patterns() {
        let table = uniform_bin_table();
        let uniform = (0..=255u8).filter(|&p| circular_transitions(p) <= 2).count();
        assert_eq!(uniform, 58);
        assert_eq!(table[0], 0);
        assert_eq!(table[255], 57);
        // 0b0101_0101 has 8 transitions
        assert_eq!(table[0b0101_0101], 58);
    }

    #[test]
    fn lbp_constant_patch() {
        let h = lbp_histogram(&solid([40, 50, 60])).unwrap();
        assert_eq!(h.dim(), 59);
        assert_eq!(h.values()[57], 1.0);
    }

    #[test]
    fn lbp_single_bright_pixel() {
        let mut img = solid([10, 10, 10]);
        img.put_pixel(10, 10, Rgb([250, 250, 250]));
        let h = lbp_histogram(&img).unwrap();
        // Interior is 18x18 = 324 pixels. The bright pixel sees only darker
        // neighbors (pattern 0); every other interior pixel sees neighbors
        // that are equal or brighter (pattern 255).
        assert!((h.values()[0] - 1.0 / 324.0).abs() < 1e-15);
        assert!((h.values()[57] - 323.0 / 324.0).abs() < 1e-15);
    }

    #[test]
    fn lbp_hand_evaluated_neighborhood() {
        // 3x3 gray grid; only the center is coded.
        let gray = [6.0, 11.0, 14.0, 9.0, 10.0, 10.0, 19.0, 0.0, 22.0];
        // neighbors clockwise from top-left: 6, 11, 14, 10, 22, 0, 19, 9
        // >= 10 ?                           0   1   1   1   1  0   1  0
        let codes = lbp_codes(&gray, 3, 3);
        assert_eq!(codes, vec![0b0101_1110]);
    }

    #[test]
    fn lbp_rejects_tiny_patches() {
        let img = RgbImage::new(2, 5);
        assert!(matches!(lbp_histogram(&img), Err(Error::PatchTooSmall(2, 3))));
    }

    #[test]
    fn concat_layout() {
        let hsv = hsv_histogram(&solid([1, 2, 3]));
        let lbp = lbp_histogram(&solid([1, 2, 3])).unwrap();
        let both = concat_hsv_lbp(&hsv, &lbp).unwrap();
        assert_eq!(both.dim(), 155);
        assert_eq!(both.tag(), DescriptorTag::HsvLbp);
        assert_eq!(both.values()[0], hsv.values()[0]);
        assert_eq!(both.values()[96], lbp.values()[0]);
        assert!((both.values().iter().sum::<f64>() - 4.0).abs() < 1e-12);
        assert!(matches!(concat_hsv_lbp(&lbp, &hsv), Err(Error::TagMismatch { .. })));
    }

    fn patch_strategy() -> impl Strategy<Value = RgbImage> {
        proptest::collection::vec(any::<u8>(), 20 * 20 * 3)
            .prop_map(|v| RgbImage::from_raw(20, 20, v).unwrap())
    }

    proptest! {
        #[test]
        fn color_histograms_ignore_pixel_order(img in patch_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut px: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
            px.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = RgbImage::from_raw(20, 20, px.concat()).unwrap();
            prop_assert_eq!(rgb_histogram(&img), rgb_histogram(&shuffled));
            prop_assert_eq!(hsv_histogram(&img), hsv_histogram(&shuffled));
        }

        #[test]
        fn lbp_is_offset_invariant(
            gray in proptest::collection::vec(0.0f64..200.0, 20 * 20),
            offset in -50i32..50,
        ) {
            // integer-valued grays so the offset is exact
            let gray: Vec<f64> = gray.iter().map(|g| g.floor()).collect();
            let shifted: Vec<f64> = gray.iter().map(|g| g + f64::from(offset)).collect();
            prop_assert_eq!(lbp_histogram_gray(&gray, 20, 20), lbp_histogram_gray(&shifted, 20, 20));
        }

        #[test]
        fn histograms_are_normalized(img in patch_strategy()) {
            for fv in [rgb_histogram(&img), hsv_histogram(&img)] {
                for block in fv.values().chunks(32) {
                    prop_assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(block.iter().all(|&v| v >= 0.0));
                }
            }
            let lbp = lbp_histogram(&img).unwrap();
            prop_assert_eq!(lbp.dim(), 59);
            prop_assert!((lbp.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
