//! Small planar helpers shared across modules.

use std::f64::consts::PI;

pub use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Counter-clockwise rotation by `angle` radians.
pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let two_pi = 2.0 * PI;
    let mut w = (angle + PI).rem_euclid(two_pi);
    // rem_euclid may round up to exactly 2π for tiny negative inputs.
    if w >= two_pi {
        w -= two_pi;
    }
    let w = w - PI;
    if w <= -PI {
        PI
    } else {
        w
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for a single value.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(-6.2) - (2.0 * PI - 6.2)).abs() < 1e-12);
        for k in -20..20 {
            let a = 0.37 * k as f64;
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI);
            assert!(((a - w) / (2.0 * PI)).fract().abs() < 1e-9 || ((a - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn rotation_quarter_turn() {
        let r = rotation(PI / 2.0);
        let v = r * Vec2::new(1.0, 0.0);
        assert!((v - Vec2::new(0.0, 1.0)).norm() < 1e-15);
    }
}
