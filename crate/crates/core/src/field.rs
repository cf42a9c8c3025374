//! The field-model abstraction shared by the Zernike and lookup-table models.
//!
//! Positions are in millimetres, fields in tesla per ampere, gradients in
//! T/(A·m) and gradient derivatives in T/(A·m²). Gradient matrices are laid
//! out as `G[(i, j)] = ∂B_i/∂x_j`.

use crate::error::{Error, Result};
use crate::math::{Mat2, Vec2};

/// Unit-current response of one coil at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitResponse {
    pub field: Vec2,
    pub gradient: Mat2,
    /// `hessian[k] = ∂G/∂x_k`.
    pub hessian: [Mat2; 2],
}

impl Default for UnitResponse {
    fn default() -> Self {
        Self {
            field: Vec2::zeros(),
            gradient: Mat2::zeros(),
            hessian: [Mat2::zeros(); 2],
        }
    }
}

/// Axis-aligned rectangle in which a model may be queried (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub min: Vec2,
    pub max: Vec2,
}

impl Domain {
    pub fn square(half: f64) -> Self {
        Self {
            min: Vec2::new(-half, -half),
            max: Vec2::new(half, half),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }
}

/// A linear-in-current planar field model.
pub trait FieldModel: Send + Sync {
    fn coil_count(&self) -> usize;

    /// Region where evaluation is valid.
    fn domain(&self) -> Domain;

    /// Writes the unit-current response of every coil at `point` into `out`.
    /// Gradient derivatives are only filled in when `hessian` is set.
    fn unit_responses(&self, point: Vec2, out: &mut [UnitResponse], hessian: bool) -> Result<()>;

    /// Superposed field for the given currents (T).
    fn field(&self, point: Vec2, currents: &[f64]) -> Result<Vec2> {
        let responses = self.responses(point, currents.len())?;
        Ok(responses
            .iter()
            .zip(currents)
            .fold(Vec2::zeros(), |acc, (r, &i)| acc + r.field * i))
    }

    /// Superposed gradient for the given currents (T/m).
    fn gradient(&self, point: Vec2, currents: &[f64]) -> Result<Mat2> {
        let responses = self.responses(point, currents.len())?;
        Ok(responses
            .iter()
            .zip(currents)
            .fold(Mat2::zeros(), |acc, (r, &i)| acc + r.gradient * i))
    }

    #[doc(hidden)]
    fn responses(&self, point: Vec2, n_currents: usize) -> Result<Vec<UnitResponse>> {
        let n = self.coil_count();
        if n_currents != n {
            return Err(Error::CurrentCount {
                got: n_currents,
                expected: n,
            });
        }
        let mut out = vec![UnitResponse::default(); n];
        self.unit_responses(point, &mut out, false)?;
        Ok(out)
    }
}
