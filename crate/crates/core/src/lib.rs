//! Planar magnetic robot control under low-rate, noisy pose feedback.
//!
//! The crate is organized bottom-up:
//!
//! * [`field_oracle`]: segment Biot–Savart surrogate for the coil fields and
//!   the bilinear lookup-table model built from it.
//! * [`zernike`]: Zernike basis, least-squares field fitting and analytic
//!   field and gradient evaluation.
//! * [`dynamics`]: planar rigid-body model with anisotropic drag, RK4
//!   integration and the ground-truth plant.
//! * [`estimator`]: pose Kalman filter fed by the NMPC prediction.
//! * [`nmpc`]: single-shooting NMPC that outputs coil currents directly.
//! * [`baselines`]: two-layer comparison controllers and current allocation.
//! * [`harness`]: trajectories, feedback degradation, closed-loop runs,
//!   sweeps and report files.

pub mod baselines;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod field;
pub mod field_oracle;
pub mod harness;
pub mod math;
pub mod nmpc;
pub mod zernike;

pub use dynamics::{CoilCurrents, Plant, Pose, RobotParams, RobotState};
pub use error::{Error, Result};
pub use estimator::{PoseEstimate, SensorReading};
pub use field::{FieldModel, UnitResponse};
pub use field_oracle::{CoilSpec, FieldSampleGrid, LookupFieldModel};
pub use harness::{ExperimentConfig, RunMetrics};
pub use nmpc::{NmpcConfig, NmpcSolution};
pub use zernike::{DiskFrame, FitReport, ZernikeBasis, ZernikeFieldModel};

/// Vacuum permeability (T·m/A).
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Half edge length of the square workspace (mm).
pub const WORKSPACE_HALF: f64 = 50.0;
