//! Patch-based classification of chronic-wound tissue into seven classes.
//!
//! The pipeline cuts labeled wound images into `n x n` patches, describes
//! each patch with a color/texture histogram or a pretrained network
//! activation, optionally reduces it with PCA, and classifies it with
//! one-vs-rest linear SVMs. Evaluation runs k-fold cross validation over
//! whole images, with folds balanced on per-class patch counts.
//!
//! Data-parallel stages take an [`Exec`]; with the default `parallel`
//! feature it runs on rayon, otherwise sequentially. Both give identical
//! results.

pub mod bundle;
pub mod cache;
pub mod error;
pub mod eval;
pub mod exec;
pub mod features;
pub mod folds;
pub mod model;
pub mod patch;
pub mod pca;
pub mod svm;
pub mod synthetic;

pub use bundle::{train_bundle, ModelBundle};
pub use cache::{FeatureRow, FeatureTable};
pub use error::{Error, Result};
pub use eval::{run_cv, EvalReport};
pub use exec::Exec;
pub use features::{Descriptor, DescriptorTag, FeatureVector, Featurizer};
pub use folds::{balance_folds, FoldAssignment, ImageOrder, ImagePatchCounts};
pub use model::{DatasetManifest, LabeledImage, LabeledPatch, Patch, TissueClass, NUM_CLASSES};
pub use pca::{pca_fit, PcaModel};
pub use svm::{svm_train, SvmModel, SvmParams};
