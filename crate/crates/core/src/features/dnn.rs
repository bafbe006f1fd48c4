//! Fully-connected layer activations of a frozen CNN as patch features.
//!
//! Graphs are consumed as ONNX files (`alexnet_fc6.onnx`, `alexnet_fc7.onnx`,
//! `alexnet_fc8.onnx`, input `1x3x227x227`, one output) plus a JSON sidecar
//! (`alexnet_meta.json`) describing the input normalization. A hash-seeded
//! stub stands in for the network when no model files are available.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DescriptorTag, FeatureVector};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Network input side expected by the exported graphs.
pub const DNN_INPUT_SIDE: u32 = 227;

pub const META_FILE: &str = "alexnet_meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DnnLayer {
    Fc6,
    Fc7,
    Fc8,
}

impl DnnLayer {
    pub fn expected_dim(self) -> usize {
        match self {
            DnnLayer::Fc6 | DnnLayer::Fc7 => 4096,
            DnnLayer::Fc8 => 1000,
        }
    }

    pub fn tag(self) -> DescriptorTag {
        match self {
            DnnLayer::Fc6 => DescriptorTag::Fc6,
            DnnLayer::Fc7 => DescriptorTag::Fc7,
            DnnLayer::Fc8 => DescriptorTag::Fc8,
        }
    }

    pub fn model_file_name(self) -> &'static str {
        match self {
            DnnLayer::Fc6 => "alexnet_fc6.onnx",
            DnnLayer::Fc7 => "alexnet_fc7.onnx",
            DnnLayer::Fc8 => "alexnet_fc8.onnx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtractorKind {
    OnnxModel,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub layer: DnnLayer,
    pub model_path: Option<PathBuf>,
    pub expected_dim: usize,
}

impl ExtractorSpec {
    pub fn stub(layer: DnnLayer) -> Self {
        Self {
            kind: ExtractorKind::Stub,
            layer,
            model_path: None,
            expected_dim: layer.expected_dim(),
        }
    }

    pub fn onnx(layer: DnnLayer, model_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: ExtractorKind::OnnxModel,
            layer,
            model_path: Some(model_path.into()),
            expected_dim: layer.expected_dim(),
        }
    }

    /// ONNX spec for the conventionally named graph inside `dir`.
    pub fn from_model_dir(layer: DnnLayer, dir: &Path) -> Result<Self> {
        let path = dir.join(layer.model_file_name());
        if !path.is_file() {
            return Err(Error::ModelLoad {
                path,
                message: format!("model file `{}` not found", layer.model_file_name()),
            });
        }
        Ok(Self::onnx(layer, path))
    }

    fn validate(&self) -> Result<()> {
        if self.expected_dim != self.layer.expected_dim() {
            return Err(Error::InvalidArgument(format!(
                "{:?} has dimension {}, not {}",
                self.layer,
                self.layer.expected_dim(),
                self.expected_dim
            )));
        }
        if self.kind == ExtractorKind::OnnxModel && self.model_path.is_none() {
            return Err(Error::InvalidArgument("ONNX extractor requires a model path".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Input normalization baked into an exported graph.
///
/// `channel_means[p]` is subtracted from output plane `p`, after reordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    #[serde(default = "default_side", alias = "input_side")]
    pub target_side: u32,
    pub channel_means: [f64; 3],
    pub channel_order: ChannelOrder,
    pub scale: f64,
}

fn default_side() -> u32 {
    DNN_INPUT_SIDE
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            target_side: DNN_INPUT_SIDE,
            channel_means: [0.0; 3],
            channel_order: ChannelOrder::Rgb,
            scale: 1.0,
        }
    }
}

impl PreprocessSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if spec.target_side != DNN_INPUT_SIDE {
            return Err(Error::InvalidArgument(format!(
                "sidecar input side {} does not match {DNN_INPUT_SIDE}",
                spec.target_side
            )));
        }
        Ok(spec)
    }

    /// Loads `alexnet_meta.json` from `dir`.
    pub fn from_model_dir(dir: &Path) -> Result<Self> {
        Self::load(&dir.join(META_FILE))
    }
}

/// Converts a resized RGB image into a channel-major `3 x S x S` tensor.
pub fn preprocess(image: &RgbImage, spec: &PreprocessSpec) -> Result<Vec<f32>> {
    let side = spec.target_side;
    if image.dimensions() != (side, side) {
        return Err(Error::ShapeMismatch {
            expected: format!("{side}x{side}x3"),
            actual: format!("{}x{}x3", image.width(), image.height()),
        });
    }
    let plane = (side * side) as usize;
    let order: [usize; 3] = match spec.channel_order {
        ChannelOrder::Rgb => [0, 1, 2],
        ChannelOrder::Bgr => [2, 1, 0],
    };
    let mut out = vec![0f32; 3 * plane];
    for (i, px) in image.pixels().enumerate() {
        for (p, &src) in order.iter().enumerate() {
            out[p * plane + i] = (f64::from(px[src]) * spec.scale - spec.channel_means[p]) as f32;
        }
    }
    Ok(out)
}

/// A frozen feature extractor. Loaded extractors are shareable across threads.
pub trait FeatureExtractor: Send + Sync {
    fn layer(&self) -> DnnLayer;

    /// Features for one `target_side x target_side` RGB image.
    fn extract(&self, image: &RgbImage) -> Result<FeatureVector>;
}

/// Deterministic pseudo-random activations seeded by a hash of the input.
#[derive(Debug, Clone)]
pub struct StubExtractor {
    layer: DnnLayer,
    side: u32,
}

impl StubExtractor {
    pub fn new(layer: DnnLayer, side: u32) -> Self {
        Self { layer, side }
    }
}

impl FeatureExtractor for StubExtractor {
    fn layer(&self) -> DnnLayer {
        self.layer
    }

    fn extract(&self, image: &RgbImage) -> Result<FeatureVector> {
        if image.dimensions() != (self.side, self.side) {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0}x3", self.side),
                actual: format!("{}x{}x3", image.width(), image.height()),
            });
        }
        let mut hasher = Sha256::new();
        hasher.update([self.layer as u8]);
        hasher.update(image.width().to_le_bytes());
        hasher.update(image.height().to_le_bytes());
        hasher.update(image.as_raw());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let values = (0..self.layer.expected_dim())
            .map(|_| rng.random::<f64>())
            .collect();
        Ok(FeatureVector::new(self.layer.tag(), values))
    }
}

#[cfg(feature = "onnx")]
mod onnx {
    use super::*;
    use tract_onnx::prelude::*;

    pub struct OnnxExtractor {
        layer: DnnLayer,
        pre: PreprocessSpec,
        plan: std::sync::Arc<TypedRunnableModel>,
        path: PathBuf,
    }

    impl OnnxExtractor {
        pub fn load(path: &Path, layer: DnnLayer, pre: PreprocessSpec) -> Result<Self> {
            let load_err = |e: TractError| Error::ModelLoad {
                path: path.to_path_buf(),
                message: format!("{e:#}"),
            };
            let side = pre.target_side as usize;
            let model = tract_onnx::onnx()
                .model_for_path(path)
                .map_err(load_err)?
                .with_input_fact(0, f32::fact([1, 3, side, side]).into())
                .map_err(load_err)?
                .into_optimized()
                .map_err(load_err)?;
            let fact = model.output_fact(0).map_err(load_err)?;
            if let Some(shape) = fact.shape.as_concrete() {
                let dim: usize = shape.iter().product();
                if dim != layer.expected_dim() {
                    return Err(Error::OutputDimMismatch {
                        expected: layer.expected_dim(),
                        actual: dim,
                    });
                }
            }
            let plan = model.into_runnable().map_err(load_err)?;
            Ok(Self {
                layer,
                pre,
                plan,
                path: path.to_path_buf(),
            })
        }
    }

    impl FeatureExtractor for OnnxExtractor {
        fn layer(&self) -> DnnLayer {
            self.layer
        }

        fn extract(&self, image: &RgbImage) -> Result<FeatureVector> {
            let side = self.pre.target_side as usize;
            let data = preprocess(image, &self.pre)?;
            let infer_err = |e: TractError| Error::Inference(format!("{}: {e:#}", self.path.display()));
            let input = Tensor::from_shape(&[1, 3, side, side], &data).map_err(infer_err)?;
            let outputs = self.plan.run(tvec!(input.into())).map_err(infer_err)?;
            let out = outputs
                .first()
                .ok_or_else(|| Error::Inference("graph produced no output".into()))?;
            let view = out.to_plain_array_view::<f32>().map_err(infer_err)?;
            if view.len() != self.layer.expected_dim() {
                return Err(Error::OutputDimMismatch {
                    expected: self.layer.expected_dim(),
                    actual: view.len(),
                });
            }
            let values: Vec<f64> = view.iter().map(|&v| f64::from(v)).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Inference("non-finite activation".into()));
            }
            Ok(FeatureVector::new(self.layer.tag(), values))
        }
    }
}

#[cfg(feature = "onnx")]
pub use onnx::OnnxExtractor;

/// Instantiates the extractor described by `spec`.
pub fn load_extractor(spec: &ExtractorSpec, pre: &PreprocessSpec) -> Result<Box<dyn FeatureExtractor>> {
    spec.validate()?;
    match spec.kind {
        ExtractorKind::Stub => Ok(Box::new(StubExtractor::new(spec.layer, pre.target_side))),
        ExtractorKind::OnnxModel => {
            let path = spec.model_path.as_deref().expect("validated");
            if !path.is_file() {
                return Err(Error::ModelLoad {
                    path: path.to_path_buf(),
                    message: "model file not found".into(),
                });
            }
            load_onnx(path, spec.layer, pre)
        }
    }
}

#[cfg(feature = "onnx")]
fn load_onnx(path: &Path, layer: DnnLayer, pre: &PreprocessSpec) -> Result<Box<dyn FeatureExtractor>> {
    Ok(Box::new(OnnxExtractor::load(path, layer, pre.clone())?))
}

#[cfg(not(feature = "onnx"))]
fn load_onnx(path: &Path, _layer: DnnLayer, _pre: &PreprocessSpec) -> Result<Box<dyn FeatureExtractor>> {
    Err(Error::ModelLoad {
        path: path.to_path_buf(),
        message: "built without the `onnx` feature".into(),
    })
}

/// One-shot extraction; loads the extractor for a single image.
pub fn extract(image: &RgbImage, spec: &ExtractorSpec, pre: &PreprocessSpec) -> Result<FeatureVector> {
    load_extractor(spec, pre)?.extract(image)
}

/// Order-preserving batched extraction, bitwise equal to mapping
/// [`FeatureExtractor::extract`] over `images`.
pub fn extract_batch(
    extractor: &dyn FeatureExtractor,
    images: &[RgbImage],
    batch_size: usize,
    exec: Exec,
) -> Result<Vec<FeatureVector>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for batch in images.chunks(batch_size) {
        out.extend(exec.try_map(batch, |img| extractor.extract(img))?);
    }
    Ok(out)
}
