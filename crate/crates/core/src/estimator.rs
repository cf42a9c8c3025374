//! Pose Kalman filter fed by the NMPC prediction, and rate reconstruction.
//!
//! The filter state is the pose only. The propagated mean is the pose the
//! controller predicted for this instant, so the prediction step reduces to
//! a covariance inflation by `Q`.

use log::warn;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::Pose;
use crate::error::{Error, Result};
use crate::math::wrap_angle;

/// Smallest eigenvalue kept in a posterior covariance.
const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub valid: bool,
}

impl SensorReading {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    Fused,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Covariance of (x mm, y mm, θ rad).
    pub covariance: Matrix3<f64>,
    pub source: EstimateSource,
}

/// Per-step prediction accuracy behind the default process covariance.
pub const DEFAULT_PROCESS_SIGMA_MM: f64 = 0.69;
pub const DEFAULT_PROCESS_SIGMA_DEG: f64 = 6.0;

/// Diagonal process covariance for per-step prediction errors (mm, rad).
pub fn process_covariance(sigma_mm: f64, sigma_theta: f64) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(
        sigma_mm * sigma_mm,
        sigma_mm * sigma_mm,
        sigma_theta * sigma_theta,
    ))
}

pub fn default_process_covariance() -> Matrix3<f64> {
    process_covariance(DEFAULT_PROCESS_SIGMA_MM, DEFAULT_PROCESS_SIGMA_DEG.to_radians())
}

/// Measurement covariance for per-axis noise `sigma_mm` and `sigma_theta` (rad).
/// Variances are floored so a noise-free sensor still gives a valid filter.
pub fn measurement_covariance(sigma_mm: f64, sigma_theta: f64) -> Matrix3<f64> {
    let f = |s: f64| (s * s).max(1e-6);
    Matrix3::from_diagonal(&Vector3::new(f(sigma_mm), f(sigma_mm), f(sigma_theta)))
}

fn finite3(m: &Matrix3<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn pose_finite(p: &Pose) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.theta.is_finite()
}

/// Symmetrizes and floors eigenvalues. Returns whether a repair was needed.
fn repair_covariance(p: &mut Matrix3<f64>) -> bool {
    let sym = (*p + p.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= EIGEN_FLOOR {
        *p = sym;
        return false;
    }
    let floored = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    *p = eig.eigenvectors * Matrix3::from_diagonal(&floored) * eig.eigenvectors.transpose();
    true
}

/// One filter cycle: inflate by `q` around `predicted`, then fuse `measurement` if present.
pub fn kf_step(
    prev: &PoseEstimate,
    predicted: Pose,
    measurement: Option<&SensorReading>,
    q: &Matrix3<f64>,
    rm: &Matrix3<f64>,
) -> Result<PoseEstimate> {
    if !finite3(&prev.covariance) || !pose_finite(&predicted) || !finite3(q) || !finite3(rm) {
        return Err(Error::EstimatorFault("non-finite filter input".into()));
    }
    let prior = prev.covariance + q;
    let mean = Pose::new(predicted.x, predicted.y, wrap_angle(predicted.theta));
    let z = match measurement.filter(|m| m.valid) {
        None => {
            return Ok(PoseEstimate {
                pose: mean,
                covariance: prior,
                source: EstimateSource::Predicted,
            })
        }
        Some(z) => z,
    };
    if !pose_finite(&z.pose()) {
        return Err(Error::EstimatorFault("non-finite measurement".into()));
    }
    let innovation = Vector3::new(z.x - mean.x, z.y - mean.y, wrap_angle(z.theta - mean.theta));
    let s = prior + rm;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::EstimatorFault("singular innovation covariance".into()))?;
    let gain = prior * s_inv;
    let dx = gain * innovation;
    let ikh = Matrix3::identity() - gain;
    let mut cov = ikh * prior * ikh.transpose() + gain * rm * gain.transpose();
    if repair_covariance(&mut cov) {
        warn!("posterior covariance repaired (eigenvalue floor)");
    }
    Ok(PoseEstimate {
        pose: Pose::new(mean.x + dx.x, mean.y + dx.y, wrap_angle(mean.theta + dx.z)),
        covariance: cov,
        source: EstimateSource::Fused,
    })
}

/// Finite-difference rates `(vx, vy, ω)` with the angle difference wrapped.
pub fn estimate_rates(current: &Pose, previous: &Pose, dt: f64) -> Result<(f64, f64, f64)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInterval(dt));
    }
    Ok((
        (current.x - previous.x) / dt,
        (current.y - previous.y) / dt,
        wrap_angle(current.theta - previous.theta) / dt,
    ))
}

/// Stateful wrapper holding the running estimate and the noise models.
#[derive(Debug, Clone)]
pub struct KalmanFilter {
    pub estimate: PoseEstimate,
    pub q: Matrix3<f64>,
    pub rm: Matrix3<f64>,
}

impl KalmanFilter {
    /// Starts at `initial` with covariance `rm` (one measurement's worth of knowledge).
    pub fn new(initial: Pose, q: Matrix3<f64>, rm: Matrix3<f64>) -> Self {
        Self {
            estimate: PoseEstimate {
                pose: initial,
                covariance: rm,
                source: EstimateSource::Fused,
            },
            q,
            rm,
        }
    }

    pub fn step(&mut self, predicted: Pose, measurement: Option<&SensorReading>) -> Result<PoseEstimate> {
        self.estimate = kf_step(&self.estimate, predicted, measurement, &self.q, &self.rm)?;
        Ok(self.estimate)
    }
}
