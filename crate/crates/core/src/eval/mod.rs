pub mod analysis;
pub mod cv;
pub mod labelmap;
pub mod metrics;

pub use analysis::{contribution_scores, mean_activation_images, variance_scores, MeanImage, MeanImagePair};
pub use cv::{evaluate_table, run_cv, CvConfig, CvRun, EvalConfig, EvalReport, FoldReport, RunConfig};
pub use labelmap::{predict_label_map, LabelMap};
pub use metrics::{aggregate_overall, macro_overall, ConfusionMatrix};
