use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TissueClass, NUM_CLASSES};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn record(&mut self, truth: TissueClass, predicted: TissueClass) {
        self.0[truth.index()][predicted.index()] += 1;
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.0[class].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    /// Per-class recall in percent; `None` for classes with no samples.
    pub fn per_class_accuracy(&self) -> [Option<f64>; NUM_CLASSES] {
        std::array::from_fn(|c| {
            let n = self.row_total(c);
            (n > 0).then(|| 100.0 * self.0[c][c] as f64 / n as f64)
        })
    }
}

/// Unweighted mean of per-class accuracies.
pub fn aggregate_overall(per_class: &[f64]) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::EmptyInput("no per-class accuracies".into()));
    }
    if let Some(v) = per_class.iter().find(|v| !(0.0..=100.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!("accuracy {v} outside [0, 100]")));
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Macro mean over the defined entries; `None` if none are defined.
pub fn macro_overall(per_class: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    aggregate_overall(&defined).ok()
}

/// Entry-wise mean over folds, skipping folds where a class is absent.
pub fn mean_of_folds(folds: &[[Option<f64>; NUM_CLASSES]]) -> [Option<f64>; NUM_CLASSES] {
    std::array::from_fn(|c| {
        let vals: Vec<f64> = folds.iter().filter_map(|f| f[c]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    })
}
