//! Data plumbing and the benchmark harness.

pub mod eval;
pub mod experiment;
pub mod ingest;
pub mod mask;
pub mod preprocess;
pub mod synthetic;
pub mod table;

pub use eval::{aggregate, evaluate_mae, mae, Aggregate};
pub use experiment::{run_experiment, EvaluationReport, ExperimentConfig, ExperimentOutput, Mode};
pub use ingest::{ingest_csv, RawTable};
pub use mask::{apply_mask, Cell, MaskPlan, MaskUnit, MaskedTruth};
pub use preprocess::{discretise_hourly, standardise, StandardisationRecord};
pub use synthetic::{generate_synthetic_window, generate_windows, SyntheticConfig, SyntheticWindow};
pub use table::{Column, ColumnRole, ObservationTable};
