#![cfg(feature = "onnx")]

use std::path::PathBuf;

use image::{Rgb, RgbImage};
use tissue_core::eval::cv::{run_cv, CvConfig, EvalConfig};
use tissue_core::features::dnn::{load_extractor, DnnLayer, ExtractorSpec, PreprocessSpec};
use tissue_core::model::{load_manifest, Patch};
use tissue_core::{Descriptor, Error, Featurizer, ImageOrder, SvmParams};

fn fixture(dir: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/onnx").join(dir)
}

// Mirrors the weights written by make_fixtures.py.
fn weight(j: usize, c: usize) -> f64 {
    ((j * 3 + c) % 7) as f64 / 10.0 - 0.3
}

fn bias(j: usize) -> f64 {
    (j % 5) as f64 / 100.0
}

fn expected(color: [u8; 3], dim: usize, relu: bool) -> Vec<f64> {
    let means = [0.5, 0.25, 0.125];
    let pooled: Vec<f64> = (0..3).map(|c| f64::from(color[c]) / 255.0 - means[c]).collect();
    (0..dim)
        .map(|j| {
            let v = (0..3).map(|c| weight(j, c) * pooled[c]).sum::<f64>() + bias(j);
            if relu {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect()
}

fn patch(color: [u8; 3]) -> Patch {
    Patch {
        pixels: RgbImage::from_pixel(20, 20, Rgb(color)),
        grid_row: 0,
        grid_col: 0,
        source_id: "p".into(),
    }
}

#[test]
fn graphs_produce_predicted_activations() {
    let dir = fixture("models");
    for (descriptor, dim, relu) in [(Descriptor::Fc6, 4096, true), (Descriptor::Fc7, 4096, true), (Descriptor::Fc8, 1000, false)] {
        let f = Featurizer::new(descriptor, Some(&dir)).unwrap();
        for color in [[200, 30, 90], [0, 0, 0], [255, 255, 255]] {
            let got = f.featurize(&patch(color)).unwrap();
            assert_eq!(got.dim(), dim);
            let want = expected(color, dim, relu);
            for (g, w) in got.values().iter().zip(&want) {
                assert!((g - w).abs() < 1e-4, "{descriptor} {color:?}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn wrong_output_dimension_is_reported() {
    let dir = fixture("wrong_dim");
    let spec = ExtractorSpec::from_model_dir(DnnLayer::Fc6, &dir).unwrap();
    let pre = PreprocessSpec::from_model_dir(&dir).unwrap();
    match load_extractor(&spec, &pre) {
        Err(Error::OutputDimMismatch { expected: 4096, actual: 10 }) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("wrong-dimension graph accepted"),
    }
}

#[test]
fn missing_model_names_the_file() {
    let dir = fixture("wrong_dim");
    let err = Featurizer::new(Descriptor::Fc8, Some(&dir)).unwrap_err();
    assert!(err.to_string().contains("alexnet_fc8.onnx"), "{err}");
}

#[test]
fn fc6_pipeline_on_fixture() {
    let manifest = load_manifest(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic/manifest.csv")).unwrap();
    let f = Featurizer::new(Descriptor::Fc6, Some(&fixture("models"))).unwrap();
    let config = CvConfig {
        descriptor: Descriptor::Fc6,
        patch_side: 20,
        order: ImageOrder::DescendingTotal,
        eval: EvalConfig {
            k: 3,
            pca_m: Some(18),
            svm: SvmParams::default(),
        },
    };
    let run = run_cv(&manifest, &f, &config).unwrap();
    assert_eq!(run.table.dim, 4096);
    assert_eq!(run.report.pooled.confusion.total() as usize, run.table.rows.len());
    assert!(run.report.overall.is_some_and(|v| (0.0..=100.0).contains(&v)));
}
