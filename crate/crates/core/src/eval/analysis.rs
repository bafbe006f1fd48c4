//! Excitation and inhibition mean images for the most influential features.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::model::LabeledPatch;
use crate::pca::PcaModel;
use crate::svm::SvmModel;

pub const DEFAULT_TOP_DIMS: usize = 10;
pub const DEFAULT_FRACTION: f64 = 0.1;

/// Per-pixel mean of a set of equally sized patches, channel-interleaved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanImage {
    pub side: u32,
    pub values: Vec<f64>,
}

impl MeanImage {
    pub fn of(patches: &[&RgbImage]) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::NotEnoughPatches("mean of zero patches".into()))?;
        let (w, h) = first.dimensions();
        if w != h || patches.iter().any(|p| p.dimensions() != (w, h)) {
            let bad = patches.iter().find(|p| p.dimensions() != (w, w)).unwrap_or(first);
            return Err(Error::ShapeMismatch {
                expected: format!("{w}x{w}"),
                actual: format!("{}x{}", bad.width(), bad.height()),
            });
        }
        let mut sums = vec![0u64; (w * h * 3) as usize];
        for p in patches {
            for (s, &v) in sums.iter_mut().zip(p.as_raw()) {
                *s += u64::from(v);
            }
        }
        let n = patches.len() as f64;
        Ok(Self {
            side: w,
            values: sums.into_iter().map(|s| s as f64 / n).collect(),
        })
    }

    pub fn channel_mean(&self, channel: usize) -> f64 {
        let vals: Vec<f64> = self.values.iter().skip(channel).step_by(3).copied().collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    pub fn to_rgb(&self) -> RgbImage {
        let raw = self.values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        RgbImage::from_raw(self.side, self.side, raw).expect("buffer matches side")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanImagePair {
    pub feature_index: usize,
    pub score: f64,
    pub excitation: MeanImage,
    pub inhibition: MeanImage,
    /// Patches averaged on each side.
    pub support_count: usize,
}

/// Per-dimension influence of a trained classifier: the summed absolute
/// one-vs-rest weights, expressed in the original descriptor space.
pub fn contribution_scores(svm: &SvmModel, pca: Option<&PcaModel>) -> Vec<f64> {
    let weights = svm.input_space_weights();
    let mapped: Vec<Vec<f64>> = match pca {
        None => weights,
        Some(p) => weights
            .iter()
            .map(|w| {
                let mut out = vec![0.0; p.dim()];
                for (wk, comp) in w.iter().zip(p.components()) {
                    for (o, c) in out.iter_mut().zip(comp) {
                        *o += wk * c;
                    }
                }
                out
            })
            .collect(),
    };
    let d = mapped.first().map_or(0, Vec::len);
    (0..d).map(|j| mapped.iter().map(|w| w[j].abs()).sum()).collect()
}

/// Population variance of each feature dimension.
pub fn variance_scores(features: &[FeatureVector]) -> Vec<f64> {
    let Some(first) = features.first() else {
        return Vec::new();
    };
    let n = features.len() as f64;
    (0..first.dim())
        .map(|j| {
            let mean = features.iter().map(|f| f.values()[j]).sum::<f64>() / n;
            features.iter().map(|f| (f.values()[j] - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

/// Builds excitation/inhibition pairs for the `top_dims` highest-scoring
/// dimensions. `scores` defaults to [`variance_scores`].
pub fn mean_activation_images(
    patches: &[LabeledPatch],
    features: &[FeatureVector],
    top_dims: usize,
    fraction: f64,
    scores: Option<&[f64]>,
) -> Result<Vec<MeanImagePair>> {
    if patches.len() != features.len() {
        return Err(Error::Alignment(format!(
            "{} patches but {} feature vectors",
            patches.len(),
            features.len()
        )));
    }
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside (0, 0.5]")));
    }
    if top_dims == 0 {
        return Err(Error::InvalidArgument("top_dims must be at least 1".into()));
    }
    let dim = features.first().map_or(0, FeatureVector::dim);
    if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    let support = (fraction * patches.len() as f64).floor() as usize;
    if support == 0 {
        return Err(Error::NotEnoughPatches(format!(
            "fraction {fraction} of {} patches selects none",
            patches.len()
        )));
    }
    let owned;
    let scores = match scores {
        Some(s) if s.len() != dim => {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: s.len(),
            })
        }
        Some(s) => s,
        None => {
            owned = variance_scores(features);
            &owned
        }
    };

    let mut ranked: Vec<usize> = (0..dim).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ranked.truncate(top_dims);

    ranked
        .into_iter()
        .map(|j| {
            let mut order: Vec<usize> = (0..patches.len()).collect();
            order.sort_by(|&a, &b| features[a].values()[j].total_cmp(&features[b].values()[j]).then(a.cmp(&b)));
            let pick = |idx: &[usize]| -> Vec<&RgbImage> { idx.iter().map(|&i| &patches[i].patch.pixels).collect() };
            Ok(MeanImagePair {
                feature_index: j,
                score: scores[j],
                excitation: MeanImage::of(&pick(&order[order.len() - support..]))?,
                inhibition: MeanImage::of(&pick(&order[..support]))?,
                support_count: support,
            })
        })
        .collect()
}
