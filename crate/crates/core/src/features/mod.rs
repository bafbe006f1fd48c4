//! Patch descriptors: classical color/texture histograms and CNN activations.

pub mod classical;
pub mod dnn;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Patch;
use crate::patch::resize_patch;
use dnn::{DnnLayer, ExtractorKind, ExtractorSpec, FeatureExtractor, PreprocessSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum DescriptorTag {
    Rgb = 1,
    Hsv = 2,
    Lbp = 3,
    HsvLbp = 4,
    Fc6 = 5,
    Fc7 = 6,
    Fc8 = 7,
}

impl DescriptorTag {
    pub fn dim(self) -> usize {
        match self {
            DescriptorTag::Rgb | DescriptorTag::Hsv => 96,
            DescriptorTag::Lbp => 59,
            DescriptorTag::HsvLbp => 155,
            DescriptorTag::Fc6 | DescriptorTag::Fc7 => 4096,
            DescriptorTag::Fc8 => 1000,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        use DescriptorTag::*;
        [Rgb, Hsv, Lbp, HsvLbp, Fc6, Fc7, Fc8]
            .into_iter()
            .find(|t| t.code() == code)
    }

    pub fn is_dnn(self) -> bool {
        matches!(self, DescriptorTag::Fc6 | DescriptorTag::Fc7 | DescriptorTag::Fc8)
    }
}

impl fmt::Display for DescriptorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptorTag::Rgb => "RGB",
            DescriptorTag::Hsv => "HSV",
            DescriptorTag::Lbp => "LBP",
            DescriptorTag::HsvLbp => "HSV_LBP",
            DescriptorTag::Fc6 => "FC6",
            DescriptorTag::Fc7 => "FC7",
            DescriptorTag::Fc8 => "FC8",
        })
    }
}

/// A raw patch descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    tag: DescriptorTag,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(tag: DescriptorTag, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { tag, values }
    }

    pub fn tag(&self) -> DescriptorTag {
        self.tag
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Descriptor selector as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Descriptor {
    Rgb,
    Hsv,
    Lbp,
    #[serde(rename = "hsv+lbp")]
    HsvLbp,
    Fc6,
    Fc7,
    Fc8,
    Stub6,
    Stub7,
    Stub8,
}

impl Descriptor {
    pub const ALL: [Descriptor; 10] = [
        Descriptor::Rgb,
        Descriptor::Hsv,
        Descriptor::Lbp,
        Descriptor::HsvLbp,
        Descriptor::Fc6,
        Descriptor::Fc7,
        Descriptor::Fc8,
        Descriptor::Stub6,
        Descriptor::Stub7,
        Descriptor::Stub8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Descriptor::Rgb => "rgb",
            Descriptor::Hsv => "hsv",
            Descriptor::Lbp => "lbp",
            Descriptor::HsvLbp => "hsv+lbp",
            Descriptor::Fc6 => "fc6",
            Descriptor::Fc7 => "fc7",
            Descriptor::Fc8 => "fc8",
            Descriptor::Stub6 => "stub6",
            Descriptor::Stub7 => "stub7",
            Descriptor::Stub8 => "stub8",
        }
    }

    pub fn tag(self) -> DescriptorTag {
        match self {
            Descriptor::Rgb => DescriptorTag::Rgb,
            Descriptor::Hsv => DescriptorTag::Hsv,
            Descriptor::Lbp => DescriptorTag::Lbp,
            Descriptor::HsvLbp => DescriptorTag::HsvLbp,
            Descriptor::Fc6 | Descriptor::Stub6 => DescriptorTag::Fc6,
            Descriptor::Fc7 | Descriptor::Stub7 => DescriptorTag::Fc7,
            Descriptor::Fc8 | Descriptor::Stub8 => DescriptorTag::Fc8,
        }
    }

    pub fn dnn_layer(self) -> Option<DnnLayer> {
        match self.tag() {
            DescriptorTag::Fc6 => Some(DnnLayer::Fc6),
            DescriptorTag::Fc7 => Some(DnnLayer::Fc7),
            DescriptorTag::Fc8 => Some(DnnLayer::Fc8),
            _ => None,
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Descriptor::Fc6 | Descriptor::Fc7 | Descriptor::Fc8)
    }

    /// PCA is applied by default to network activations only.
    pub fn pca_by_default(self) -> bool {
        self.tag().is_dnn()
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Descriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Descriptor::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown descriptor `{s}` (expected one of {})",
                    Descriptor::ALL.map(|d| d.name()).join(", ")
                ))
            })
    }
}

/// Turns patches into feature vectors for a chosen descriptor.
pub struct Featurizer {
    descriptor: Descriptor,
    network: Option<(Box<dyn FeatureExtractor>, PreprocessSpec)>,
}

impl fmt::Debug for Featurizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Featurizer")
            .field("descriptor", &self.descriptor)
            .finish_non_exhaustive()
    }
}

impl Featurizer {
    /// `model_dir` is required for `fc6`/`fc7`/`fc8` and ignored otherwise.
    pub fn new(descriptor: Descriptor, model_dir: Option<&Path>) -> Result<Self> {
        let network = match descriptor.dnn_layer() {
            None => None,
            Some(layer) if !descriptor.needs_model() => {
                let pre = PreprocessSpec::default();
                let ex = dnn::load_extractor(&ExtractorSpec::stub(layer), &pre)?;
                Some((ex, pre))
            }
            Some(layer) => {
                let dir = model_dir.ok_or_else(|| Error::ModelLoad {
                    path: layer.model_file_name().into(),
                    message: format!(
                        "descriptor {descriptor} needs a model directory containing `{}`",
                        layer.model_file_name()
                    ),
                })?;
                let spec = ExtractorSpec::from_model_dir(layer, dir)?;
                let pre = PreprocessSpec::from_model_dir(dir)?;
                let ex = dnn::load_extractor(&spec, &pre)?;
                Some((ex, pre))
            }
        };
        Ok(Self { descriptor, network })
    }

    /// Featurizer backed by an explicit extractor spec.
    pub fn with_extractor(spec: &ExtractorSpec, pre: PreprocessSpec) -> Result<Self> {
        let descriptor = match (spec.kind, spec.layer) {
            (ExtractorKind::Stub, DnnLayer::Fc6) => Descriptor::Stub6,
            (ExtractorKind::Stub, DnnLayer::Fc7) => Descriptor::Stub7,
            (ExtractorKind::Stub, DnnLayer::Fc8) => Descriptor::Stub8,
            (ExtractorKind::OnnxModel, DnnLayer::Fc6) => Descriptor::Fc6,
            (ExtractorKind::OnnxModel, DnnLayer::Fc7) => Descriptor::Fc7,
            (ExtractorKind::OnnxModel, DnnLayer::Fc8) => Descriptor::Fc8,
        };
        let ex = dnn::load_extractor(spec, &pre)?;
        Ok(Self {
            descriptor,
            network: Some((ex, pre)),
        })
    }

    pub fn descriptor(&self) -> Descriptor {
        self.descriptor
    }

    pub fn tag(&self) -> DescriptorTag {
        self.descriptor.tag()
    }

    pub fn featurize(&self, patch: &Patch) -> Result<FeatureVector> {
        let px = &patch.pixels;
        match (&self.network, self.descriptor) {
            (Some((ex, pre)), _) => ex.extract(&resize_patch(px, pre.target_side)?),
            (None, Descriptor::Rgb) => Ok(classical::rgb_histogram(px)),
            (None, Descriptor::Hsv) => Ok(classical::hsv_histogram(px)),
            (None, Descriptor::Lbp) => classical::lbp_histogram(px),
            (None, Descriptor::HsvLbp) => {
                classical::concat_hsv_lbp(&classical::hsv_histogram(px), &classical::lbp_histogram(px)?)
            }
            (None, d) => unreachable!("network descriptor {d} without extractor"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    #[test]
    fn descriptor_names_round_trip() {
        for d in Descriptor::ALL {
            assert_eq!(d.name().parse::<Descriptor>().unwrap(), d);
        }
        assert!("sift".parse::<Descriptor>().is_err());
    }

    #[test]
    fn featurizer_dims() {
        let patch = Patch {
            pixels: RgbImage::from_fn(20, 20, |x, y| image::Rgb([x as u8 * 9, y as u8 * 7, 40])),
            grid_row: 0,
            grid_col: 0,
            source_id: "a".into(),
        };
        for d in [
            Descriptor::Rgb,
            Descriptor::Hsv,
            Descriptor::Lbp,
            Descriptor::HsvLbp,
            Descriptor::Stub8,
        ] {
            let f = Featurizer::new(d, None).unwrap();
            let fv = f.featurize(&patch).unwrap();
            assert_eq!(fv.dim(), d.tag().dim(), "{d}");
            assert_eq!(fv.tag(), d.tag());
        }
    }

    #[test]
    fn network_descriptor_without_model_dir_names_file() {
        let err = Featurizer::new(Descriptor::Fc6, None).unwrap_err();
        assert!(err.to_string().contains("alexnet_fc6.onnx"), "{err}");
    }

    #[test]
    fn tag_codes_round_trip() {
        for d in Descriptor::ALL {
            let t = d.tag();
            assert_eq!(DescriptorTag::from_code(t.code()), Some(t));
        }
        assert_eq!(DescriptorTag::from_code(0), None);
    }
}
