//! Configuration, presets and the seeded simulation and analysis runs.

mod config;
mod pipeline;
pub mod presets;
mod run;

pub use config::{
    AnalysisConfig, BudgetConfig, CenterDelayPolicy, CrossoverSpec, ExperimentConfig, LengthGrid, Segment,
};
pub use pipeline::{candidate_rate, click_probability_bound, simulate_segment, SegmentTags};
pub use run::{
    analytic_system, analyze_segments, evaluate_budget, output_dir, run_analyze, run_budget, run_simulate,
    split_segments, visibility_curve_file, window_capture, write_analysis, AnalysisReport, BasisReport, BudgetManifest,
    BudgetReport, Calibration, ChannelFile, CurveReport, RateReport, RunInfo, RunManifest, SegmentData,
    SystemBreakdown, BUDGET_CURVE_FILE, BUDGET_MANIFEST_FILE, BUDGET_MARKERS_FILE, HISTOGRAM_FILE, MANIFEST_FILE,
    PEAKS_FILE, SUMMARY_FILE,
};
