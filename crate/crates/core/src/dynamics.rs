//! Planar rigid-body robot with anisotropic viscous drag, driven by the
//! magnetic wrench of the coil field.
//!
//! External units are mm, rad, mm/s and rad/s; the physics is evaluated in SI.
//! With `p` in mm and `v` in mm/s the translational rows read
//! `v̇ = 1e3·(Gᵀm − D·1e-3·v)/mass` in mm/s².

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Dyn, OMatrix, SMatrix, SVector, U6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, FieldModel, UnitResponse};
use crate::math::{rotation, wrap_angle, Mat2, Vec2};
use crate::WORKSPACE_HALF;

pub type StateVector = SVector<f64, 6>;
pub type StateMatrix = SMatrix<f64, 6, 6>;
pub type InputMatrix = OMatrix<f64, U6, Dyn>;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl RobotState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            x: pose.x,
            y: pose.y,
            theta: wrap_angle(pose.theta),
            ..Self::default()
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.theta)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::new(self.x, self.y, self.theta, self.vx, self.vy, self.omega)
    }

    /// Builds a state from a vector, wrapping the angle.
    pub fn from_vector(z: &StateVector) -> Self {
        Self {
            x: z[0],
            y: z[1],
            theta: wrap_angle(z[2]),
            vx: z[3],
            vy: z[4],
            omega: z[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// Translational plus rotational kinetic energy (J).
    pub fn kinetic_energy(&self, params: &RobotParams) -> f64 {
        let v = self.velocity() * 1e-3;
        0.5 * params.mass * v.norm_squared() + 0.5 * params.inertia * self.omega * self.omega
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// kg
    pub mass: f64,
    /// kg·m²
    pub inertia: f64,
    /// A·m²
    pub moment: f64,
    /// Body-frame unit vector of the dipole.
    pub moment_axis: [f64; 2],
    /// N·s/m, along the body axis
    pub d_par: f64,
    /// N·s/m, across the body axis
    pub d_perp: f64,
    /// N·m·s/rad
    pub d_rot: f64,
}

/// Water–glycerin mixture matched to blood viscosity (Pa·s).
pub const DEFAULT_VISCOSITY: f64 = 6e-3;

/// Printed-body density (kg/m³).
pub const DEFAULT_DENSITY: f64 = 1200.0;

impl RobotParams {
    /// Slender-cylinder estimate: uniform-density mass and inertia, and
    /// Stokes drag from the Tirado–de la Torre end-corrected slender-body
    /// coefficients. The transverse coefficient is taken as twice the axial one.
    pub fn from_cylinder(length_mm: f64, diameter_mm: f64, density: f64, viscosity: f64, moment: f64) -> Self {
        let (l, r) = (length_mm * 1e-3, 0.5 * diameter_mm * 1e-3);
        let p = length_mm / diameter_mm;
        let mass = density * PI * r * r * l;
        let inertia = mass * (l * l / 12.0 + r * r / 4.0);
        let d_par = 2.0 * PI * viscosity * l / (p.ln() - 0.207 + 0.980 / p - 0.133 / (p * p));
        let d_rot = PI * viscosity * l.powi(3) / (3.0 * (p.ln() - 0.662 + 0.917 / p - 0.050 / (p * p)));
        Self {
            mass,
            inertia,
            moment,
            moment_axis: [1.0, 0.0],
            d_par,
            d_perp: 2.0 * d_par,
            d_rot,
        }
    }

    /// 16 × 2.8 mm magnet robot.
    pub fn magnet_robot() -> Self {
        Self::from_cylinder(16.0, 2.8, DEFAULT_DENSITY, DEFAULT_VISCOSITY, 1.35e-3)
    }

    /// 7.4 × 2.8 mm drug-delivery capsule.
    pub fn capsule() -> Self {
        Self::from_cylinder(7.4, 2.8, DEFAULT_DENSITY, DEFAULT_VISCOSITY, 8.9e-4)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.mass,
            self.inertia,
            self.moment,
            self.d_par,
            self.d_perp,
            self.d_rot,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("robot parameters must be finite and positive".into()));
        }
        if self.d_perp < self.d_par {
            return Err(Error::Config("slender body needs d_perp >= d_par".into()));
        }
        let n = self.moment_axis[0].hypot(self.moment_axis[1]);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Config("moment axis must be a unit vector".into()));
        }
        Ok(())
    }

    /// World-frame dipole moment at heading `theta` (A·m²).
    pub fn moment_vector(&self, theta: f64) -> Vec2 {
        rotation(theta) * Vec2::new(self.moment_axis[0], self.moment_axis[1]) * self.moment
    }
}

/// Ordered per-coil currents (A).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoilCurrents(pub Vec<f64>);

impl CoilCurrents {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn within(&self, limit: f64) -> bool {
        self.max_abs() <= limit
    }
}

/// Force (N) and torque (N·m) on the dipole.
pub fn magnetic_wrench(params: &RobotParams, theta: f64, field: Vec2, gradient: &Mat2) -> (Vec2, f64) {
    let m = params.moment_vector(theta);
    (gradient.transpose() * m, m.x * field.y - m.y * field.x)
}

/// Drag matrix `R(θ)·diag(d_par, d_perp)·R(θ)ᵀ` (N·s/m).
pub fn drag_matrix(theta: f64, params: &RobotParams) -> Mat2 {
    let r = rotation(theta);
    r * Mat2::new(params.d_par, 0.0, 0.0, params.d_perp) * r.transpose()
}

/// Result of one dynamics evaluation.
#[derive(Debug, Clone)]
pub struct Derivative {
    pub rate: StateVector,
    /// The position lay outside the model domain and the field was taken at the clamped point.
    pub outside: bool,
}

/// State rate and its Jacobians with respect to state and currents.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub rate: StateVector,
    pub a: StateMatrix,
    pub b: InputMatrix,
    pub outside: bool,
}

fn totals(responses: &[UnitResponse], currents: &[f64]) -> (Vec2, Mat2) {
    responses
        .iter()
        .zip(currents)
        .fold((Vec2::zeros(), Mat2::zeros()), |(b, g), (r, &i)| {
            (b + r.field * i, g + r.gradient * i)
        })
}

fn rate_from(state: &RobotState, params: &RobotParams, field: Vec2, gradient: &Mat2) -> StateVector {
    let (force, torque) = magnetic_wrench(params, state.theta, field, gradient);
    let drag = drag_matrix(state.theta, params) * state.velocity() * 1e-3;
    let acc = (force - drag) * (1e3 / params.mass);
    let alpha = (torque - params.d_rot * state.omega) / params.inertia;
    StateVector::new(state.vx, state.vy, state.omega, acc.x, acc.y, alpha)
}

fn query_point(model: &dyn FieldModel, state: &RobotState) -> (Vec2, [bool; 2]) {
    let p = state.position();
    let d = model.domain();
    let q = d.clamp(p);
    (q, [q.x != p.x, q.y != p.y])
}

/// Continuous-time state rate under the given currents.
pub fn state_derivative(
    state: &RobotState,
    currents: &[f64],
    model: &dyn FieldModel,
    params: &RobotParams,
) -> Result<Derivative> {
    let mut buf = vec![UnitResponse::default(); model.coil_count()];
    derivative_with(state, currents, model, params, &mut buf)
}

fn derivative_with(
    state: &RobotState,
    currents: &[f64],
    model: &dyn FieldModel,
    params: &RobotParams,
    buf: &mut [UnitResponse],
) -> Result<Derivative> {
    check_currents(model, currents)?;
    let (q, clamped) = query_point(model, state);
    model.unit_responses(q, buf, false)?;
    let (field, gradient) = totals(buf, currents);
    Ok(Derivative {
        rate: rate_from(state, params, field, &gradient),
        outside: clamped[0] || clamped[1],
    })
}

fn check_currents(model: &dyn FieldModel, currents: &[f64]) -> Result<()> {
    if currents.len() != model.coil_count() {
        return Err(Error::CurrentCount {
            got: currents.len(),
            expected: model.coil_count(),
        });
    }
    Ok(())
}

/// State rate with analytic Jacobians. Position derivatives along a clamped
/// axis are zero, matching the clamped field query.
pub fn linearize(
    state: &RobotState,
    currents: &[f64],
    model: &dyn FieldModel,
    params: &RobotParams,
    buf: &mut [UnitResponse],
) -> Result<Linearization> {
    check_currents(model, currents)?;
    let (q, clamped) = query_point(model, state);
    model.unit_responses(q, buf, true)?;
    let (field, gradient) = totals(buf, currents);
    let hessian = buf.iter().zip(currents).fold([Mat2::zeros(); 2], |h, (r, &i)| {
        [h[0] + r.hessian[0] * i, h[1] + r.hessian[1] * i]
    });
    let rate = rate_from(state, params, field, &gradient);

    let m = params.moment_vector(state.theta);
    let dm = Vec2::new(-m.y, m.x);
    let r = rotation(state.theta);
    let dr = Mat2::new(-r[(1, 0)], -r[(1, 1)], r[(0, 0)], r[(0, 1)]);
    let diag = Mat2::new(params.d_par, 0.0, 0.0, params.d_perp);
    let drag = r * diag * r.transpose();
    let ddrag = dr * diag * r.transpose() + r * diag * dr.transpose();
    let v = state.velocity();
    let (inv_m, inv_j) = (1.0 / params.mass, 1.0 / params.inertia);

    let mut a = StateMatrix::zeros();
    a[(0, 3)] = 1.0;
    a[(1, 4)] = 1.0;
    a[(2, 5)] = 1.0;
    for k in 0..2 {
        if clamped[k] {
            continue;
        }
        // ∂(Gᵀm)_j/∂p_k with p in mm is 1e-3·(H_kᵀ m)_j; the 1e3 of the rate cancels it.
        let dforce = hessian[k].transpose() * m;
        a[(3, k)] = dforce.x * inv_m;
        a[(4, k)] = dforce.y * inv_m;
        a[(5, k)] = 1e-3 * (m.x * gradient[(1, k)] - m.y * gradient[(0, k)]) * inv_j;
    }
    let dacc = (gradient.transpose() * dm - ddrag * v * 1e-3) * (1e3 * inv_m);
    a[(3, 2)] = dacc.x;
    a[(4, 2)] = dacc.y;
    a[(5, 2)] = -m.dot(&field) * inv_j;
    for i in 0..2 {
        for j in 0..2 {
            a[(3 + i, 3 + j)] = -drag[(i, j)] * inv_m;
        }
    }
    a[(5, 5)] = -params.d_rot * inv_j;

    let mut b = InputMatrix::zeros(buf.len());
    for (c, resp) in buf.iter().enumerate() {
        let f = resp.gradient.transpose() * m * (1e3 * inv_m);
        b[(3, c)] = f.x;
        b[(4, c)] = f.y;
        b[(5, c)] = (m.x * resp.field.y - m.y * resp.field.x) * inv_j;
    }
    Ok(Linearization {
        rate,
        a,
        b,
        outside: clamped[0] || clamped[1],
    })
}

/// Classical RK4 step of length `dt` (s); the angle is re-wrapped.
pub fn integrate_step(
    state: &RobotState,
    currents: &[f64],
    dt: f64,
    model: &dyn FieldModel,
    params: &RobotParams,
) -> Result<RobotState> {
    let mut buf = vec![UnitResponse::default(); model.coil_count()];
    integrate_with(state, currents, dt, model, params, &mut buf)
}

fn integrate_with(
    state: &RobotState,
    currents: &[f64],
    dt: f64,
    model: &dyn FieldModel,
    params: &RobotParams,
    buf: &mut [UnitResponse],
) -> Result<RobotState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInterval(dt));
    }
    let z = state.to_vector();
    let at = |z: StateVector| RobotState {
        x: z[0],
        y: z[1],
        theta: z[2],
        vx: z[3],
        vy: z[4],
        omega: z[5],
    };
    let f = |z: StateVector, buf: &mut [UnitResponse]| -> Result<StateVector> {
        Ok(derivative_with(&at(z), currents, model, params, buf)?.rate)
    };
    let k1 = f(z, buf)?;
    let k2 = f(z + k1 * (0.5 * dt), buf)?;
    let k3 = f(z + k2 * (0.5 * dt), buf)?;
    let k4 = f(z + k3 * dt, buf)?;
    let next = z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    let out = RobotState::from_vector(&next);
    if !out.is_finite() {
        return Err(Error::IntegrationBlowup { state: *state });
    }
    Ok(out)
}

/// One RK4 step together with its sensitivities `Φ = ∂z⁺/∂z` and `Γ = ∂z⁺/∂I`.
#[derive(Debug, Clone)]
pub struct StepSensitivity {
    pub next: RobotState,
    pub phi: StateMatrix,
    pub gamma: InputMatrix,
}

/// Reusable scratch space for repeated dynamics evaluations.
pub struct Workspace {
    buf: Vec<UnitResponse>,
}

impl Workspace {
    pub fn new(coils: usize) -> Self {
        Self {
            buf: vec![UnitResponse::default(); coils],
        }
    }

    pub fn integrate(
        &mut self,
        state: &RobotState,
        currents: &[f64],
        dt: f64,
        model: &dyn FieldModel,
        params: &RobotParams,
    ) -> Result<RobotState> {
        integrate_with(state, currents, dt, model, params, &mut self.buf)
    }

    /// RK4 step with forward sensitivities propagated through every stage.
    pub fn integrate_sensitivity(
        &mut self,
        state: &RobotState,
        currents: &[f64],
        dt: f64,
        model: &dyn FieldModel,
        params: &RobotParams,
    ) -> Result<StepSensitivity> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInterval(dt));
        }
        let z = state.to_vector();
        let at = |z: StateVector| RobotState {
            x: z[0],
            y: z[1],
            theta: z[2],
            vx: z[3],
            vy: z[4],
            omega: z[5],
        };
        let eye = StateMatrix::identity();
        let l1 = linearize(&at(z), currents, model, params, &mut self.buf)?;
        let (dk1z, dk1u) = (l1.a, l1.b.clone());
        let l2 = linearize(&at(z + l1.rate * (0.5 * dt)), currents, model, params, &mut self.buf)?;
        let dk2z = l2.a * (eye + dk1z * (0.5 * dt));
        let dk2u = &l2.b + l2.a * &dk1u * (0.5 * dt);
        let l3 = linearize(&at(z + l2.rate * (0.5 * dt)), currents, model, params, &mut self.buf)?;
        let dk3z = l3.a * (eye + dk2z * (0.5 * dt));
        let dk3u = &l3.b + l3.a * &dk2u * (0.5 * dt);
        let l4 = linearize(&at(z + l3.rate * dt), currents, model, params, &mut self.buf)?;
        let dk4z = l4.a * (eye + dk3z * dt);
        let dk4u = &l4.b + l4.a * &dk3u * dt;
        let next = z + (l1.rate + l2.rate * 2.0 + l3.rate * 2.0 + l4.rate) * (dt / 6.0);
        let phi = eye + (dk1z + dk2z * 2.0 + dk3z * 2.0 + dk4z) * (dt / 6.0);
        let gamma = (dk1u + dk2u * 2.0 + dk3u * 2.0 + dk4u) * (dt / 6.0);
        let out = RobotState::from_vector(&next);
        if !out.is_finite() {
            return Err(Error::IntegrationBlowup { state: *state });
        }
        Ok(StepSensitivity { next: out, phi, gamma })
    }
}

/// Ground-truth simulator: sub-stepped RK4 with inelastic workspace walls.
pub struct Plant {
    state: RobotState,
    params: RobotParams,
    model: Arc<dyn FieldModel>,
    substeps: usize,
    walls: Domain,
    work: Workspace,
    wall_contacts: usize,
}

impl Plant {
    pub fn new(initial: RobotState, params: RobotParams, model: Arc<dyn FieldModel>, substeps: usize) -> Self {
        let n = model.coil_count();
        Self {
            state: initial,
            params,
            model,
            substeps: substeps.max(1),
            walls: Domain::square(WORKSPACE_HALF),
            work: Workspace::new(n),
            wall_contacts: 0,
        }
    }

    pub fn state(&self) -> RobotState {
        self.state
    }

    pub fn params(&self) -> &RobotParams {
        &self.params
    }

    pub fn wall_contacts(&self) -> usize {
        self.wall_contacts
    }

    /// Advances the truth by one control period `dt` (s).
    pub fn advance(&mut self, currents: &[f64], dt: f64) -> Result<RobotState> {
        let h = dt / self.substeps as f64;
        for _ in 0..self.substeps {
            let mut s = self
                .work
                .integrate(&self.state, currents, h, self.model.as_ref(), &self.params)?;
            let (lo, hi) = (self.walls.min, self.walls.max);
            if s.x < lo.x || s.x > hi.x {
                s.x = s.x.clamp(lo.x, hi.x);
                s.vx = 0.0;
                self.wall_contacts += 1;
            }
            if s.y < lo.y || s.y > hi.y {
                s.y = s.y.clamp(lo.y, hi.y);
                s.vy = 0.0;
                self.wall_contacts += 1;
            }
            self.state = s;
        }
        Ok(self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Uniform field `b0` plus constant gradient from one coil.
    struct Affine {
        b0: Vec2,
        g: Mat2,
    }

    impl FieldModel for Affine {
        fn coil_count(&self) -> usize {
            1
        }
        fn domain(&self) -> Domain {
            Domain::square(WORKSPACE_HALF)
        }
        fn unit_responses(&self, p: Vec2, out: &mut [UnitResponse], _h: bool) -> Result<()> {
            out[0] = UnitResponse {
                field: self.b0 + self.g * p * 1e-3,
                gradient: self.g,
                hessian: [Mat2::zeros(); 2],
            };
            Ok(())
        }
    }

    fn null_model() -> Affine {
        Affine {
            b0: Vec2::zeros(),
            g: Mat2::zeros(),
        }
    }

    #[test]
    fn default_parameters() {
        let p = RobotParams::magnet_robot();
        p.validate().unwrap();
        assert!((p.mass - 1.18e-4).abs() < 2e-6);
        assert!((p.d_perp / p.d_par - 2.0).abs() < 1e-12);
        RobotParams::capsule().validate().unwrap();
    }

    #[test]
    fn wrench_cases() {
        let p = RobotParams::magnet_robot();
        let (_, tau) = magnetic_wrench(&p, 0.0, Vec2::new(3e-3, 0.0), &Mat2::zeros());
        assert_eq!(tau, 0.0);
        let (f, tau) = magnetic_wrench(&p, 0.0, Vec2::new(0.0, 2e-3), &Mat2::zeros());
        assert!((tau - p.moment * 2e-3).abs() < 1e-18);
        assert_eq!(f, Vec2::zeros());
    }

    #[test]
    fn drag_matrix_cases() {
        let p = RobotParams::magnet_robot();
        let d0 = drag_matrix(0.0, &p);
        assert!((d0 - Mat2::new(p.d_par, 0.0, 0.0, p.d_perp)).norm() < 1e-18);
        let d1 = drag_matrix(PI / 2.0, &p);
        assert!((d1 - Mat2::new(p.d_perp, 0.0, 0.0, p.d_par)).norm() < 1e-15 * p.d_perp);
    }

    #[test]
    fn free_derivatives() {
        let p = RobotParams::magnet_robot();
        let m = null_model();
        let rest = RobotState::default();
        assert_eq!(
            state_derivative(&rest, &[0.0], &m, &p).unwrap().rate,
            StateVector::zeros()
        );
        let moving = RobotState { vx: 10.0, ..rest };
        let d = state_derivative(&moving, &[0.0], &m, &p).unwrap().rate;
        assert!((d[3] + p.d_par * 10.0 / p.mass).abs() < 1e-9);
        let spinning = RobotState { omega: 2.0, ..rest };
        let d = state_derivative(&spinning, &[0.0], &m, &p).unwrap().rate;
        assert!((d[5] + p.d_rot * 2.0 / p.inertia).abs() < 1e-9);
        let out = RobotState { x: 60.0, ..rest };
        assert!(state_derivative(&out, &[0.0], &m, &p).unwrap().outside);
    }

    #[test]
    fn exponential_decay() {
        let p = RobotParams::magnet_robot();
        let m = null_model();
        // Plant sub-step: pointwise relative error.
        let mut s = RobotState {
            vx: 20.0,
            ..RobotState::default()
        };
        for _ in 0..100 {
            s = integrate_step(&s, &[0.0], 0.01, &m, &p).unwrap();
        }
        let exact = 20.0 * (-p.d_par / p.mass).exp();
        assert!(((s.vx - exact) / exact).abs() < 1e-6, "{} vs {}", s.vx, exact);
        assert!(s.vy == 0.0 && s.x > 0.0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = RobotParams::magnet_robot();
        let m = Affine {
            b0: Vec2::new(2e-3, -1e-3),
            g: Mat2::new(0.02, 0.01, 0.01, -0.03),
        };
        let s = RobotState {
            x: 3.0,
            y: -4.0,
            theta: 0.7,
            vx: 5.0,
            vy: -2.0,
            omega: 0.3,
        };
        let mut buf = vec![UnitResponse::default(); 1];
        let lin = linearize(&s, &[2.0], &m, &p, &mut buf).unwrap();
        let z = s.to_vector();
        let at = |z: StateVector| RobotState {
            x: z[0],
            y: z[1],
            theta: z[2],
            vx: z[3],
            vy: z[4],
            omega: z[5],
        };
        for k in 0..6 {
            let h = 1e-5;
            let mut zp = z;
            let mut zm = z;
            zp[k] += h;
            zm[k] -= h;
            let fd = (state_derivative(&at(zp), &[2.0], &m, &p).unwrap().rate
                - state_derivative(&at(zm), &[2.0], &m, &p).unwrap().rate)
                / (2.0 * h);
            for i in 0..6 {
                let scale = lin.a.column(k).amax().max(1.0);
                assert!((fd[i] - lin.a[(i, k)]).abs() <= 1e-6 * scale, "A[{i},{k}]");
            }
        }
    }
}
