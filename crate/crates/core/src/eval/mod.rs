//! Scoring predictions against ground truth: per-class IoU, the modular
//! inference pipeline, report tables and overlays.

mod iou;
mod overlay;
mod pipeline;
mod report;

pub use iou::{iou_per_class, IouCounts};
pub use overlay::{overlay, write_overlays, PALETTE};
pub use pipeline::{content_from_vessel_map, modular_inference, EvalMode, ModularOutput, NetSet};
pub use report::{
    evaluate_with_predictions, reports_to_csv, run_benchmark, write_report, ClassRow, MetricsReport, CSV_HEADER,
};
