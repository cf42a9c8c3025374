//! Reference trajectories sampled at the control period.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::Pose;
use crate::error::{Error, Result};
use crate::math::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    /// Heading is stored continuous (unwrapped).
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub name: String,
    pub dt: f64,
    pub samples: Vec<TrajectorySample>,
    pub corridor: Option<Corridor>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// `count` poses starting at step `k`, padded with the final pose.
    pub fn window(&self, k: usize, count: usize) -> Vec<Pose> {
        let last = self.samples.len() - 1;
        (0..count).map(|i| self.samples[(k + i).min(last)].pose).collect()
    }
}

/// A path made of straight and circular pieces, parameterized by arc length.
#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Line {
        start: Vec2,
        heading: f64,
        length: f64,
    },
    /// Signed sweep: positive is counter-clockwise.
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Piece {
    fn length(&self) -> f64 {
        match self {
            Piece::Line { length, .. } => *length,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Point and tangent heading at arc length `s` into the piece.
    fn at(&self, s: f64) -> (Vec2, f64) {
        match *self {
            Piece::Line { start, heading, .. } => (start + Vec2::new(heading.cos(), heading.sin()) * s, heading),
            Piece::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let dir = sweep.signum();
                let a = start_angle + dir * s / radius;
                (center + Vec2::new(a.cos(), a.sin()) * radius, a + dir * PI / 2.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Path {
    pieces: Vec<Piece>,
}

impl Path {
    fn length(&self) -> f64 {
        self.pieces.iter().map(Piece::length).sum()
    }

    /// Point and continuous heading at arc length `s`.
    fn at(&self, s: f64) -> (Vec2, f64) {
        let mut rest = s.max(0.0);
        for (i, p) in self.pieces.iter().enumerate() {
            if rest <= p.length() || i + 1 == self.pieces.len() {
                return p.at(rest.min(p.length()));
            }
            rest -= p.length();
        }
        unreachable!("paths are non-empty")
    }
}

fn sample_path(path: &Path, duration: f64, dt: f64) -> Vec<TrajectorySample> {
    let steps = (duration / dt).round() as usize;
    let len = path.length();
    let mut out = Vec::with_capacity(steps + 1);
    let mut prev: Option<f64> = None;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let (p, mut h) = path.at(len * t / duration);
        // Keep the heading continuous across piece boundaries.
        if let Some(ph) = prev {
            h += (2.0 * PI) * ((ph - h) / (2.0 * PI)).round();
        }
        prev = Some(h);
        out.push(TrajectorySample {
            t,
            pose: Pose::new(p.x, p.y, h),
        });
    }
    out
}

/// Constant-speed S-curve inside a `size × size` box centered on the origin:
/// straight, counter-clockwise half-turn, straight back, clockwise half-turn,
/// straight out. Starts at the lower-left corner heading +x.
pub fn s_trajectory(duration: f64, size: f64, dt: f64) -> Result<Trajectory> {
    if !(duration > 0.0 && size > 0.0 && dt > 0.0) {
        return Err(Error::Config("S-curve needs positive duration, size and dt".into()));
    }
    let h = size / 2.0;
    let r = size / 4.0;
    let long = size - r;
    let path = Path {
        pieces: vec![
            Piece::Line {
                start: Vec2::new(-h, -h),
                heading: 0.0,
                length: long,
            },
            Piece::Arc {
                center: Vec2::new(h - r, -h + r),
                radius: r,
                start_angle: -PI / 2.0,
                sweep: PI,
            },
            Piece::Line {
                start: Vec2::new(h - r, 0.0),
                heading: PI,
                length: size - 2.0 * r,
            },
            Piece::Arc {
                center: Vec2::new(-h + r, r),
                radius: r,
                start_angle: -PI / 2.0,
                sweep: -PI,
            },
            Piece::Line {
                start: Vec2::new(-h + r, h),
                heading: 0.0,
                length: long,
            },
        ],
    };
    Ok(Trajectory {
        name: "s_curve".into(),
        dt,
        samples: sample_path(&path, duration, dt),
        corridor: None,
    })
}

/// U-shaped channel: a lower half-annulus joined to two vertical arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corridor {
    /// Center of the half-circle (mm).
    pub center: [f64; 2],
    /// Centerline radius (mm).
    pub radius: f64,
    /// Arm length above the center (mm).
    pub arm_length: f64,
    pub width: f64,
    /// Lateral offset of the path toward the posterior (outer) wall (mm).
    pub posterior_bias: f64,
    /// Required clearance from the anterior (inner) wall (mm).
    pub anterior_margin: f64,
    /// Travel speed along the path (mm/s).
    pub speed: f64,
    /// Station-keeping time at the far end (s).
    pub dwell: f64,
    /// Duration of the in-place half-turn (s).
    pub flip: f64,
}

impl Default for Corridor {
    fn default() -> Self {
        Self {
            center: [0.0, 5.0],
            radius: 20.0,
            arm_length: 15.0,
            width: 5.0,
            posterior_bias: 1.0,
            anterior_margin: 1.0,
            speed: 5.0,
            dwell: 4.0,
            flip: 2.0,
        }
    }
}

impl Corridor {
    /// Signed distance from the centerline, positive toward the posterior (outer) wall.
    pub fn lateral_offset(&self, p: Vec2) -> f64 {
        let c = Vec2::new(self.center[0], self.center[1]);
        if p.y >= c.y {
            (p.x - c.x).abs() - self.radius
        } else {
            (p - c).norm() - self.radius
        }
    }

    pub fn anterior_violation(&self, p: Vec2) -> bool {
        self.lateral_offset(p) < -self.width / 2.0
    }

    pub fn posterior_violation(&self, p: Vec2) -> bool {
        self.lateral_offset(p) > self.width / 2.0
    }

    fn path(&self, offset: f64) -> Path {
        let c = Vec2::new(self.center[0], self.center[1]);
        let r = self.radius + offset;
        Path {
            pieces: vec![
                Piece::Line {
                    start: c + Vec2::new(-r, self.arm_length),
                    heading: -PI / 2.0,
                    length: self.arm_length,
                },
                Piece::Arc {
                    center: c,
                    radius: r,
                    start_angle: PI,
                    sweep: PI,
                },
                Piece::Line {
                    start: c + Vec2::new(r, 0.0),
                    heading: PI / 2.0,
                    length: self.arm_length,
                },
            ],
        }
    }

    /// Boundary polylines `(anterior, posterior)` sampled every `step` mm.
    pub fn boundaries(&self, step: f64) -> (Vec<Vec2>, Vec<Vec2>) {
        let side = |offset: f64| {
            let path = self.path(offset);
            let n = (path.length() / step).ceil() as usize;
            (0..=n)
                .map(|i| path.at(path.length() * i as f64 / n as f64).0)
                .collect()
        };
        (side(-self.width / 2.0), side(self.width / 2.0))
    }

    pub fn validate(&self) -> Result<()> {
        let half = self.width / 2.0;
        if !(self.width > 0.0 && self.radius > half && self.speed > 0.0 && self.dwell >= 0.0 && self.flip > 0.0) {
            return Err(Error::Config("corridor geometry must be positive".into()));
        }
        if half + self.posterior_bias < self.anterior_margin || self.posterior_bias >= half {
            return Err(Error::Config(format!(
                "a {} mm channel cannot keep {} mm anterior clearance with a {} mm bias",
                self.width, self.anterior_margin, self.posterior_bias
            )));
        }
        Ok(())
    }
}

/// Traverse, dwell, half-turn in place, return along the same path.
pub fn corridor_trajectory(corridor: &Corridor, dt: f64) -> Result<Trajectory> {
    corridor.validate()?;
    let path = corridor.path(corridor.posterior_bias);
    let travel = path.length() / corridor.speed;
    let out_leg = sample_path(&path, travel, dt);
    let steps = |d: f64| (d / dt).round() as usize;
    let mut samples = out_leg.clone();
    let end = *samples.last().expect("non-empty leg");
    let mut t = end.t;
    for _ in 0..steps(corridor.dwell) {
        t += dt;
        samples.push(TrajectorySample { t, pose: end.pose });
    }
    let n_flip = steps(corridor.flip).max(1);
    for i in 1..=n_flip {
        t += dt;
        let mut pose = end.pose;
        pose.theta += PI * i as f64 / n_flip as f64;
        samples.push(TrajectorySample { t, pose });
    }
    for s in out_leg.iter().rev().skip(1) {
        t += dt;
        samples.push(TrajectorySample {
            t,
            pose: Pose::new(s.pose.x, s.pose.y, s.pose.theta + PI),
        });
    }
    Ok(Trajectory {
        name: "corridor".into(),
        dt,
        samples,
        corridor: Some(*corridor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s_curve_properties() {
        let tr = s_trajectory(30.0, 43.0, 0.04).unwrap();
        assert_eq!(tr.len(), 751);
        let first = tr.samples[0].pose;
        assert!((first.x + 21.5).abs() < 1e-12 && (first.y + 21.5).abs() < 1e-12);
        for s in &tr.samples {
            assert!(s.pose.x.abs() <= 21.5 + 1e-9 && s.pose.y.abs() <= 21.5 + 1e-9);
        }
        let steps: Vec<f64> = tr
            .samples
            .windows(2)
            .map(|w| (w[1].pose.position() - w[0].pose.position()).norm() / 0.04)
            .collect();
        let speed = (43.0 * 2.0 + 43.0 / 2.0 * PI) / 30.0;
        // Chords on arcs are marginally shorter than the arc.
        assert!(steps.iter().all(|v| (v - speed).abs() <= 0.01 * speed));
        assert!(tr
            .samples
            .windows(2)
            .all(|w| (w[1].pose.theta - w[0].pose.theta).abs() < PI));
        let last = tr.samples.last().unwrap().pose;
        assert!((last.x - 21.5).abs() < 1e-9 && (last.y - 21.5).abs() < 1e-9);
        assert!(last.theta.abs() < 1e-9);
    }

    #[test]
    fn corridor_properties() {
        let c = Corridor::default();
        let tr = corridor_trajectory(&c, 0.04).unwrap();
        for s in &tr.samples {
            let off = c.lateral_offset(s.pose.position());
            assert!(off + c.width / 2.0 >= c.anterior_margin - 1e-9);
            assert!(off < c.width / 2.0);
        }
        // Dwell then flip at the far end.
        let travel = (2.0 * c.arm_length + PI * (c.radius + c.posterior_bias)) / c.speed;
        let k_end = (travel / 0.04).round() as usize;
        let far = tr.samples[k_end].pose;
        assert_eq!(tr.samples[k_end + 100].pose, far);
        let flipped = tr.samples[k_end + 100 + 50].pose;
        assert_eq!(far.position(), flipped.position());
        assert!(((flipped.theta - far.theta) - PI).abs() < 1e-9);
        assert!(tr
            .samples
            .windows(2)
            .all(|w| (w[1].pose.theta - w[0].pose.theta).abs() < 0.5));
    }

    #[test]
    fn impossible_clearance_is_a_config_error() {
        let c = Corridor {
            width: 1.0,
            anterior_margin: 2.0,
            posterior_bias: 0.0,
            ..Corridor::default()
        };
        assert!(corridor_trajectory(&c, 0.04).is_err());
    }
}
