//! Feedback degradation: rate reduction plus Gaussian pose noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::Pose;
use crate::error::{Error, Result};
use crate::estimator::SensorReading;
use crate::math::wrap_angle;

/// Orientation noise per millimetre of position noise when none is given (deg/mm).
pub const THETA_DEG_PER_MM: f64 = 2.5;

/// Slack on the due-time comparison so that exact multiples of the period fire.
const DUE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationSpec {
    pub rate_hz: f64,
    /// Per-axis position noise (mm).
    pub sigma_mm: f64,
    /// Orientation noise (deg). Defaults to `THETA_DEG_PER_MM * sigma_mm`.
    pub sigma_theta_deg: Option<f64>,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            rate_hz: 25.5,
            sigma_mm: 0.0,
            sigma_theta_deg: None,
        }
    }
}

impl DegradationSpec {
    pub fn new(rate_hz: f64, sigma_mm: f64) -> Self {
        Self {
            rate_hz,
            sigma_mm,
            sigma_theta_deg: None,
        }
    }

    pub fn sigma_theta(&self) -> f64 {
        self.sigma_theta_deg
            .unwrap_or(THETA_DEG_PER_MM * self.sigma_mm)
            .to_radians()
    }

    pub fn validate(&self) -> Result<()> {
        let theta_ok = self.sigma_theta_deg.is_none_or(|s| s >= 0.0 && s.is_finite());
        if !(self.rate_hz > 0.0
            && self.rate_hz.is_finite()
            && self.sigma_mm >= 0.0
            && self.sigma_mm.is_finite()
            && theta_ok)
        {
            return Err(Error::Config(format!(
                "degradation needs rate > 0 and sigma >= 0 (rate {}, sigma {})",
                self.rate_hz, self.sigma_mm
            )));
        }
        Ok(())
    }
}

/// Turns the truth pose stream into sparse noisy readings.
///
/// Emission times follow a due-time schedule advanced by whole periods, so the
/// long-run rate is exact and each reading is late by less than one control period.
#[derive(Debug, Clone)]
pub struct Degrader {
    period: f64,
    sigma: f64,
    sigma_theta: f64,
    due: f64,
    rng: ChaCha8Rng,
}

impl Degrader {
    pub fn new(spec: &DegradationSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            period: 1.0 / spec.rate_hz,
            sigma: spec.sigma_mm,
            sigma_theta: spec.sigma_theta(),
            due: f64::NEG_INFINITY,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Reading for the truth pose at time `t`, or `None` between emissions.
    pub fn observe(&mut self, t: f64, truth: &Pose) -> Option<SensorReading> {
        if self.due == f64::NEG_INFINITY {
            self.due = t;
        }
        if t + DUE_EPS < self.due {
            return None;
        }
        while self.due <= t + DUE_EPS {
            self.due += self.period;
        }
        // Always three draws per emission so streams stay aligned across sigmas.
        let nx: f64 = StandardNormal.sample(&mut self.rng);
        let ny: f64 = StandardNormal.sample(&mut self.rng);
        let nt: f64 = StandardNormal.sample(&mut self.rng);
        Some(SensorReading {
            t,
            x: truth.x + self.sigma * nx,
            y: truth.y + self.sigma * ny,
            theta: wrap_angle(truth.theta + self.sigma_theta * nt),
            valid: true,
        })
    }
}

/// Applies `spec` to a truth stream sampled every `dt`.
pub fn degrade(truth: &[Pose], dt: f64, spec: &DegradationSpec, seed: u64) -> Result<Vec<Option<SensorReading>>> {
    let mut d = Degrader::new(spec, seed)?;
    Ok(truth
        .iter()
        .enumerate()
        .map(|(k, p)| d.observe(k as f64 * dt, p))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(n: usize) -> Vec<Pose> {
        vec![Pose::new(1.0, -2.0, 0.5); n]
    }

    #[test]
    fn identity_degradation() {
        let truth: Vec<Pose> = (0..50).map(|k| Pose::new(k as f64, 0.0, 0.01 * k as f64)).collect();
        let out = degrade(&truth, 0.04, &DegradationSpec::new(25.5, 0.0), 1).unwrap();
        for (r, p) in out.iter().zip(&truth) {
            let r = r.expect("every step");
            assert_eq!((r.x, r.y, r.theta), (p.x, p.y, p.theta));
        }
    }

    #[test]
    fn three_hertz_spacing() {
        let out = degrade(&still(2500), 0.04, &DegradationSpec::new(3.0, 0.0), 1).unwrap();
        let idx: Vec<usize> = out
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_some())
            .map(|(k, _)| k)
            .collect();
        let gaps: Vec<usize> = idx.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| *g == 8 || *g == 9));
        let rate = (idx.len() - 1) as f64 / ((idx[idx.len() - 1] - idx[0]) as f64 * 0.04);
        assert!((rate - 3.0).abs() < 0.01);
    }

    #[test]
    fn noise_statistics() {
        let out = degrade(&still(10_000), 0.04, &DegradationSpec::new(30.0, 2.0), 7).unwrap();
        let ex: Vec<f64> = out.iter().flatten().map(|r| r.x - 1.0).collect();
        let et: Vec<f64> = out.iter().flatten().map(|r| wrap_angle(r.theta - 0.5)).collect();
        assert_eq!(ex.len(), 10_000);
        let sx = crate::math::std_dev(&ex);
        assert!((sx - 2.0).abs() < 0.1, "{sx}");
        let st = crate::math::std_dev(&et).to_degrees();
        assert!((st - 5.0).abs() < 0.25, "{st}");
    }

    #[test]
    fn same_seed_same_noise() {
        let a = degrade(&still(100), 0.04, &DegradationSpec::new(10.0, 1.0), 3).unwrap();
        let b = degrade(&still(100), 0.04, &DegradationSpec::new(10.0, 1.0), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(DegradationSpec::new(0.0, 1.0).validate().is_err());
        assert!(DegradationSpec::new(3.0, -1.0).validate().is_err());
    }
}
