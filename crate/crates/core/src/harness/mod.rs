//! Closed-loop experiments: trajectories, sensor degradation, runs and sweeps.

pub mod degrade;
pub mod run;
pub mod sweep;
pub mod trajectory;

pub use degrade::{degrade, DegradationSpec, Degrader};
pub use run::{
    build_controller, run_closed_loop, run_experiment, tracking_errors, write_run_outputs, EstimatorConfig,
    ExperimentConfig, FieldSetup, MetricsRow, RunMetrics, RunOutcome,
};
pub use sweep::{read_results, report, summarize, sweep, write_results, SummaryRow, SweepAxis, SweepRow, SweepSpec};
pub use trajectory::{corridor_trajectory, s_trajectory, Corridor, Trajectory, TrajectorySample};
