//! Image-level k-fold cross validation.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{macro_overall, mean_of_folds, ConfusionMatrix};
use crate::cache::{FeatureRow, FeatureTable};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::features::{Descriptor, Featurizer};
use crate::folds::{balance_folds, FoldAssignment, ImageOrder, ImagePatchCounts};
use crate::model::{load_labeled_image, DatasetManifest, TissueClass, NUM_CLASSES};
use crate::patch::{labeled_patches, ImagePatches};
use crate::pca::{pca_fit_with, PcaModel};
use crate::svm::{svm_train_with, SvmModel, SvmParams};

/// Loads every manifest image and cuts labeled patches, in manifest order.
pub fn load_patches(manifest: &DatasetManifest, patch_side: u32, exec: Exec) -> Result<Vec<ImagePatches>> {
    exec.try_map(&manifest.entries, |entry| {
        let image = load_labeled_image(entry)?;
        labeled_patches(&image, patch_side)
    })
}

pub fn patch_counts(manifest: &DatasetManifest, images: &[ImagePatches]) -> Vec<ImagePatchCounts> {
    manifest
        .entries
        .iter()
        .zip(images)
        .map(|(e, p)| ImagePatchCounts::new(e.image_id.clone(), p.counts))
        .collect()
}

/// Featurizes every labeled patch into a feature table (features stored as
/// `f32`, exactly as written to disk).
pub fn build_table(
    manifest: &DatasetManifest,
    images: &[ImagePatches],
    featurizer: &Featurizer,
    exec: Exec,
) -> Result<FeatureTable> {
    let ids: Vec<String> = manifest.ids().map(String::from).collect();
    let flat: Vec<(u32, &crate::model::LabeledPatch)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, ip)| ip.patches.iter().map(move |p| (i as u32, p)))
        .collect();
    let rows = exec.try_map(&flat, |&(image_index, lp)| {
        let fv = featurizer.featurize(&lp.patch)?;
        Ok::<_, Error>(FeatureRow {
            image_index,
            grid_row: grid_u16(lp.patch.grid_row)?,
            grid_col: grid_u16(lp.patch.grid_col)?,
            label: lp.label,
            features: fv.values().iter().map(|&v| v as f32).collect(),
        })
    })?;
    let mut table = FeatureTable::new(featurizer.tag(), featurizer.tag().dim(), ids);
    table.rows = rows;
    Ok(table)
}

fn grid_u16(v: u32) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("grid index {v} exceeds u16")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    /// Number of PCA components, or `None` to train on raw descriptors.
    pub pca_m: Option<usize>,
    pub svm: SvmParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 3,
            pca_m: None,
            svm: SvmParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub descriptor: String,
    pub dim: usize,
    pub k: usize,
    pub pca_m: Option<usize>,
    pub svm: SvmParams,
    pub images: usize,
    pub patches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_images: usize,
    pub test_images: usize,
    /// Sorted ids of the images held out in this fold.
    pub test_image_ids: Vec<String>,
    pub train_patches: usize,
    pub test_patches: usize,
    pub confusion: ConfusionMatrix,
    pub per_class_accuracy: [Option<f64>; NUM_CLASSES],
    pub overall: Option<f64>,
    pub svm_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledMetrics {
    pub confusion: ConfusionMatrix,
    pub per_class_accuracy: [Option<f64>; NUM_CLASSES],
    pub overall: Option<f64>,
}

/// Cross-validation results. The headline per-class accuracies are the
/// mean of the per-fold values; `overall` is their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_config: RunConfig,
    pub per_class_accuracy: [Option<f64>; NUM_CLASSES],
    pub overall: Option<f64>,
    pub pooled: PooledMetrics,
    pub per_fold: Vec<FoldReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::format("report", e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let c = &self.run_config;
        let mut out = String::new();
        writeln!(out, "descriptor  {} (dim {})", c.descriptor, c.dim).unwrap();
        writeln!(
            out,
            "folds       {}    pca {}    C {}    tol {}    max_iter {}    seed {}",
            c.k,
            c.pca_m.map_or_else(|| "off".to_string(), |m| m.to_string()),
            c.svm.c,
            c.svm.tol,
            c.svm.max_iter,
            c.svm.seed
        )
        .unwrap();
        writeln!(out, "images      {}    patches {}", c.images, c.patches).unwrap();
        out.push('\n');
        write!(out, "{:<24}", "").unwrap();
        for f in &self.per_fold {
            write!(out, "{:>9}", format!("fold {}", f.fold)).unwrap();
        }
        writeln!(out, "{:>9}{:>9}", "mean", "pooled").unwrap();
        for class in TissueClass::ALL {
            write!(out, "{:<24}", class.name()).unwrap();
            for f in &self.per_fold {
                write!(out, "{:>9}", fmt(f.per_class_accuracy[class.index()])).unwrap();
            }
            writeln!(
                out,
                "{:>9}{:>9}",
                fmt(self.per_class_accuracy[class.index()]),
                fmt(self.pooled.per_class_accuracy[class.index()])
            )
            .unwrap();
        }
        write!(out, "{:<24}", "overall").unwrap();
        for f in &self.per_fold {
            write!(out, "{:>9}", fmt(f.overall)).unwrap();
        }
        writeln!(out, "{:>9}{:>9}", fmt(self.overall), fmt(self.pooled.overall)).unwrap();
        out.push_str("\npooled confusion (rows = true, cols = predicted)\n");
        for row in &self.pooled.confusion.0 {
            for v in row {
                write!(out, "{v:>7}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Fitted reducer and classifier for one set of training rows.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub pca: Option<PcaModel>,
    pub svm: SvmModel,
    pub converged: bool,
}

impl TrainedModels {
    pub fn reduce(&self, x: Vec<f64>) -> Result<Vec<f64>> {
        match &self.pca {
            Some(p) => p.transform(&x),
            None => Ok(x),
        }
    }

    pub fn predict(&self, x: Vec<f64>) -> Result<TissueClass> {
        self.svm.predict(&self.reduce(x)?)
    }
}

pub fn train_models(
    rows: &[&FeatureRow],
    pca_m: Option<usize>,
    svm: &SvmParams,
    exec: Exec,
) -> Result<TrainedModels> {
    let xs: Vec<Vec<f64>> = exec.map(rows, |r| r.features_f64());
    let labels: Vec<TissueClass> = rows.iter().map(|r| r.label).collect();
    let (pca, xs) = match pca_m {
        Some(m) => {
            let fit = pca_fit_with(&xs, m, exec)?;
            if let Some(w) = fit.warning {
                log::warn!("PCA: {w:?}");
            }
            let model = fit.model;
            let reduced = model.transform_batch(&xs, exec)?;
            (Some(model), reduced)
        }
        None => (None, xs),
    };
    let fit = svm_train_with(&xs, &labels, svm, exec)?;
    Ok(TrainedModels {
        pca,
        converged: fit.reports.iter().all(|r| r.converged),
        svm: fit.model,
    })
}

/// Cross-validates a feature table under a fixed image-to-fold assignment.
pub fn evaluate_table(table: &FeatureTable, folds: &[(String, usize)], config: &EvalConfig) -> Result<EvalReport> {
    evaluate_table_with(table, folds, config, Exec::default())
}

pub fn evaluate_table_with(
    table: &FeatureTable,
    folds: &[(String, usize)],
    config: &EvalConfig,
    exec: Exec,
) -> Result<EvalReport> {
    let k = config.k;
    if k < 2 {
        return Err(Error::BadK(k));
    }
    table.validate()?;
    let mut fold_by_id = HashMap::with_capacity(folds.len());
    for (id, f) in folds {
        if *f >= k {
            return Err(Error::InvalidArgument(format!("image `{id}` assigned to fold {f} but k = {k}")));
        }
        if fold_by_id.insert(id.as_str(), *f).is_some() {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    let fold_of_image: Vec<Option<usize>> = table.image_ids.iter().map(|id| fold_by_id.get(id.as_str()).copied()).collect();
    let row_fold: Vec<usize> = table
        .rows
        .iter()
        .map(|r| {
            fold_of_image[r.image_index as usize].ok_or_else(|| {
                Error::InvalidArgument(format!("image `{}` has no fold assignment", table.image_id(r)))
            })
        })
        .collect::<Result<_>>()?;

    let fold_reports = exec.map_range(k, |fold| evaluate_fold(table, &row_fold, fold, config, exec));
    let per_fold: Vec<FoldReport> = fold_reports.into_iter().collect::<Result<_>>()?;

    let mut pooled = ConfusionMatrix::default();
    per_fold.iter().for_each(|f| pooled.add(&f.confusion));
    let fold_acc: Vec<_> = per_fold.iter().map(|f| f.per_class_accuracy).collect();
    let per_class_accuracy = mean_of_folds(&fold_acc);
    let pooled_acc = pooled.per_class_accuracy();
    let images_with_rows: HashSet<u32> = table.rows.iter().map(|r| r.image_index).collect();

    Ok(EvalReport {
        run_config: RunConfig {
            descriptor: table.tag.to_string(),
            dim: table.dim,
            k,
            pca_m: config.pca_m,
            svm: config.svm,
            images: images_with_rows.len(),
            patches: table.rows.len(),
        },
        overall: macro_overall(&per_class_accuracy),
        per_class_accuracy,
        pooled: PooledMetrics {
            confusion: pooled,
            per_class_accuracy: pooled_acc,
            overall: macro_overall(&pooled_acc),
        },
        per_fold,
    })
}

fn evaluate_fold(
    table: &FeatureTable,
    row_fold: &[usize],
    fold: usize,
    config: &EvalConfig,
    exec: Exec,
) -> Result<FoldReport> {
    let (test, train): (Vec<_>, Vec<_>) = table
        .rows
        .iter()
        .zip(row_fold)
        .partition(|(_, &f)| f == fold);
    let train: Vec<&FeatureRow> = train.into_iter().map(|(r, _)| r).collect();
    let test: Vec<&FeatureRow> = test.into_iter().map(|(r, _)| r).collect();

    let train_ids: HashSet<&str> = train.iter().map(|r| table.image_id(r)).collect();
    let test_ids: BTreeSet<&str> = test.iter().map(|r| table.image_id(r)).collect();
    if let Some(shared) = test_ids.iter().find(|id| train_ids.contains(*id)) {
        return Err(Error::Leakage {
            fold,
            image_id: shared.to_string(),
        });
    }
    let classes: HashSet<TissueClass> = train.iter().map(|r| r.label).collect();
    if classes.len() < 2 {
        return Err(Error::InsufficientClassCoverage {
            fold,
            classes: classes.len(),
        });
    }

    let svm = SvmParams {
        seed: config.svm.seed.wrapping_add(fold as u64),
        ..config.svm
    };
    let models = train_models(&train, config.pca_m, &svm, exec)?;
    let predictions = exec.try_map(&test, |r| models.predict(r.features_f64()))?;
    let mut confusion = ConfusionMatrix::default();
    for (r, p) in test.iter().zip(predictions) {
        confusion.record(r.label, p);
    }
    let per_class_accuracy = confusion.per_class_accuracy();
    Ok(FoldReport {
        fold,
        train_images: train_ids.len(),
        test_images: test_ids.len(),
        test_image_ids: test_ids.iter().map(|s| s.to_string()).collect(),
        train_patches: train.len(),
        test_patches: test.len(),
        confusion,
        overall: macro_overall(&per_class_accuracy),
        per_class_accuracy,
        svm_converged: models.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub descriptor: Descriptor,
    pub patch_side: u32,
    pub order: ImageOrder,
    pub eval: EvalConfig,
}

/// Everything an in-process cross-validation run produced.
#[derive(Debug, Clone)]
pub struct CvRun {
    pub counts: Vec<ImagePatchCounts>,
    pub assignment: FoldAssignment,
    pub table: FeatureTable,
    pub report: EvalReport,
}

/// Patches, balances folds, featurizes and cross-validates a dataset.
pub fn run_cv(manifest: &DatasetManifest, featurizer: &Featurizer, config: &CvConfig) -> Result<CvRun> {
    run_cv_with(manifest, featurizer, config, Exec::default())
}

pub fn run_cv_with(
    manifest: &DatasetManifest,
    featurizer: &Featurizer,
    config: &CvConfig,
    exec: Exec,
) -> Result<CvRun> {
    if featurizer.descriptor() != config.descriptor {
        return Err(Error::InvalidArgument(format!(
            "featurizer is {} but config names {}",
            featurizer.descriptor(),
            config.descriptor
        )));
    }
    if config.eval.k < 2 {
        return Err(Error::BadK(config.eval.k));
    }
    if manifest.entries.len() < config.eval.k {
        return Err(Error::InvalidArgument(format!(
            "{} images cannot fill {} folds",
            manifest.entries.len(),
            config.eval.k
        )));
    }
    let images = load_patches(manifest, config.patch_side, exec)?;
    let counts = patch_counts(manifest, &images);
    let assignment = balance_folds(&counts, config.eval.k, config.order)?;
    let table = build_table(manifest, &images, featurizer, exec)?;
    let report = evaluate_table_with(&table, &assignment.folds, &config.eval, exec)?;
    Ok(CvRun {
        counts,
        assignment,
        table,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DescriptorTag;

    fn table_with(images: &[(&str, TissueClass, usize, f32)]) -> FeatureTable {
        let ids = images.iter().map(|(id, ..)| id.to_string()).collect();
        let mut t = FeatureTable::new(DescriptorTag::Rgb, 2, ids);
        for (i, &(_, label, n, x)) in images.iter().enumerate() {
            for j in 0..n {
                t.rows.push(FeatureRow {
                    image_index: i as u32,
                    grid_row: j as u16,
                    grid_col: 0,
                    label,
                    features: vec![x + 0.01 * j as f32, -x],
                });
            }
        }
        t
    }

    #[test]
    fn separable_table_scores_perfectly() {
        use TissueClass::*;
        let t = table_with(&[
            ("a", Necrotic, 5, -3.0),
            ("b", Sloughy, 5, 3.0),
            ("c", Necrotic, 5, -3.2),
            ("d", Sloughy, 5, 3.1),
        ]);
        let folds = vec![("a".into(), 0), ("b".into(), 0), ("c".into(), 1), ("d".into(), 1)];
        let r = evaluate_table(&t, &folds, &EvalConfig { k: 2, ..Default::default() }).unwrap();
        assert_eq!(r.overall, Some(100.0));
        assert_eq!(r.pooled.confusion.total(), 20);
        assert_eq!(r.per_fold.len(), 2);
        assert_eq!(r.per_class_accuracy[2], None);
        assert_eq!(r.pooled.confusion.row_total(0), 10);
        let back = EvalReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().contains("necrotic"));
    }

    #[test]
    fn training_fold_needs_two_classes() {
        use TissueClass::*;
        let t = table_with(&[("a", Necrotic, 3, 0.0), ("b", Sloughy, 3, 1.0)]);
        let folds = vec![("a".into(), 0), ("b".into(), 1)];
        let r = evaluate_table(&t, &folds, &EvalConfig { k: 2, ..Default::default() });
        assert!(matches!(r, Err(Error::InsufficientClassCoverage { .. })));
    }

    #[test]
    fn unassigned_images_are_rejected() {
        use TissueClass::*;
        let t = table_with(&[("a", Necrotic, 3, 0.0), ("b", Sloughy, 3, 1.0)]);
        let r = evaluate_table(&t, &[("a".into(), 0)], &EvalConfig { k: 2, ..Default::default() });
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let r = evaluate_table(&t, &[("a".into(), 0), ("b".into(), 5)], &EvalConfig { k: 2, ..Default::default() });
        assert!(r.is_err());
    }
}
