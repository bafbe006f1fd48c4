//! A trained classifier saved as a directory:
//!
//! ```text
//! bundle.json   descriptor, patch side, whether pca.bin is present
//! pca.bin       optional PCA1 model
//! svm.bin       SVM1 model
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::FeatureTable;
use crate::error::{Error, Result};
use crate::eval::cv::{train_models, TrainedModels};
use crate::exec::Exec;
use crate::features::Descriptor;
use crate::pca::PcaModel;
use crate::svm::{SvmModel, SvmParams};

const MANIFEST: &str = "bundle.json";
const PCA_FILE: &str = "pca.bin";
const SVM_FILE: &str = "svm.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleManifest {
    descriptor: Descriptor,
    patch_side: u32,
    pca: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub descriptor: Descriptor,
    pub patch_side: u32,
    pub pca: Option<PcaModel>,
    pub svm: SvmModel,
}

impl ModelBundle {
    /// Checks that the reducer and classifier dimensions chain together.
    pub fn validate(&self) -> Result<()> {
        let input = self.descriptor.tag().dim();
        let svm_in = match &self.pca {
            Some(p) if p.dim() != input => {
                return Err(Error::DimMismatch {
                    expected: input,
                    actual: p.dim(),
                })
            }
            Some(p) => p.n_components(),
            None => input,
        };
        if self.svm.dim() != svm_in {
            return Err(Error::DimMismatch {
                expected: svm_in,
                actual: self.svm.dim(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, features: &[f64]) -> Result<crate::model::TissueClass> {
        match &self.pca {
            Some(p) => self.svm.predict(&p.transform(features)?),
            None => self.svm.predict(features),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = BundleManifest {
            descriptor: self.descriptor,
            patch_side: self.patch_side,
            pca: self.pca.is_some(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = dir.join(MANIFEST);
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        if let Some(p) = &self.pca {
            p.save(&dir.join(PCA_FILE))?;
        }
        self.svm.save(&dir.join(SVM_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: BundleManifest =
            serde_json::from_str(&text).map_err(|e| Error::format("bundle manifest", e.to_string()))?;
        let pca = manifest
            .pca
            .then(|| PcaModel::load(&dir.join(PCA_FILE)))
            .transpose()?;
        let bundle = Self {
            descriptor: manifest.descriptor,
            patch_side: manifest.patch_side,
            pca,
            svm: SvmModel::load(&dir.join(SVM_FILE))?,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Fits a bundle on every row of a feature table.
pub fn train_bundle(
    table: &FeatureTable,
    descriptor: Descriptor,
    patch_side: u32,
    pca_m: Option<usize>,
    svm: &SvmParams,
    exec: Exec,
) -> Result<ModelBundle> {
    if descriptor.tag() != table.tag {
        return Err(Error::TagMismatch {
            expected: descriptor.tag().to_string(),
            actual: table.tag.to_string(),
        });
    }
    table.validate()?;
    let rows: Vec<_> = table.rows.iter().collect();
    let TrainedModels { pca, svm, .. } = train_models(&rows, pca_m, svm, exec)?;
    let bundle = ModelBundle {
        descriptor,
        patch_side,
        pca,
        svm,
    };
    bundle.validate()?;
    Ok(bundle)
}
