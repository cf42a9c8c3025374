//! Comparison controllers: two-layer wrench controllers with current
//! allocation (PID and linear MPC), and the NMPC variants that differ only in
//! their pose source or field model.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{drag_matrix, Pose, RobotParams, RobotState};
use crate::error::{Error, Result};
use crate::estimator::{estimate_rates, KalmanFilter, SensorReading};
use crate::field::{FieldModel, UnitResponse};
use crate::math::{wrap_angle, Vec2};
use crate::nmpc::{angle_error, NmpcController, SolverStatus};

/// Desired force (N) and torque (N·m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WrenchCommand {
    pub force: Vec2,
    pub torque: f64,
}

impl WrenchCommand {
    pub fn is_finite(&self) -> bool {
        self.force.x.is_finite() && self.force.y.is_finite() && self.torque.is_finite()
    }
}

/// Linear map from coil currents to `(F_x, F_y, τ)` at one pose.
#[derive(Debug, Clone)]
pub struct AllocationMap {
    pub pose: Pose,
    pub matrix: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl AllocationMap {
    pub fn build(model: &dyn FieldModel, pose: Pose, params: &RobotParams) -> Result<Self> {
        let n = model.coil_count();
        let mut resp = vec![UnitResponse::default(); n];
        let q = model.domain().clamp(pose.position());
        model.unit_responses(q, &mut resp, false)?;
        let m = params.moment_vector(pose.theta);
        let mut a = DMatrix::zeros(3, n);
        for (c, r) in resp.iter().enumerate() {
            let f = r.gradient.transpose() * m;
            a[(0, c)] = f.x;
            a[(1, c)] = f.y;
            a[(2, c)] = m.x * r.field.y - m.y * r.field.x;
        }
        // Rows carry different units, so rank is judged on the row-normalized map.
        let scales: Vec<f64> = (0..3).map(|i| a.row(i).norm()).collect();
        let mut scaled = a.clone();
        for (i, s) in scales.iter().enumerate() {
            if *s > 0.0 {
                scaled.row_mut(i).scale_mut(1.0 / s);
            }
        }
        let svd = scaled.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-8 * smax && smax > 0.0)
            .count();
        if rank < 3 {
            return Err(Error::ActuationSingularity { rank });
        }
        let pinv = a
            .clone()
            .pseudo_inverse(0.0)
            .map_err(|e| Error::SolverFault(format!("allocation pseudo-inverse: {e}")))?;
        Ok(Self { pose, matrix: a, pinv })
    }

    pub fn apply(&self, currents: &[f64]) -> WrenchCommand {
        let w = &self.matrix * DMatrix::from_column_slice(currents.len(), 1, currents);
        WrenchCommand {
            force: Vec2::new(w[0], w[1]),
            torque: w[2],
        }
    }
}

/// Minimum-norm currents realizing `cmd`, uniformly scaled into `|I| ≤ i_max`.
pub fn allocate_currents(cmd: &WrenchCommand, map: &AllocationMap, i_max: f64) -> Vec<f64> {
    let w = DMatrix::from_column_slice(3, 1, &[cmd.force.x, cmd.force.y, cmd.torque]);
    let mut i: Vec<f64> = (&map.pinv * w).iter().copied().collect();
    let peak = i.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > i_max {
        let k = i_max / peak;
        i.iter_mut().for_each(|v| *v *= k);
    }
    i
}

/// Allocation map rebuilt only after the pose moves far enough.
#[derive(Debug, Clone)]
pub struct AllocationCache {
    pub distance_mm: f64,
    pub angle_rad: f64,
    map: Option<AllocationMap>,
    rebuilds: usize,
}

impl AllocationCache {
    pub fn new(distance_mm: f64, angle_rad: f64) -> Self {
        Self {
            distance_mm,
            angle_rad,
            map: None,
            rebuilds: 0,
        }
    }

    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn get(&mut self, model: &dyn FieldModel, pose: Pose, params: &RobotParams) -> Result<&AllocationMap> {
        let stale = match &self.map {
            None => true,
            Some(m) => {
                (m.pose.position() - pose.position()).norm() >= self.distance_mm
                    || angle_error(pose.theta, m.pose.theta).abs() >= self.angle_rad
            }
        };
        if stale {
            self.map = Some(AllocationMap::build(model, pose, params)?);
            self.rebuilds += 1;
        }
        Ok(self.map.as_ref().expect("just built"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    /// `[x (N/mm), y (N/mm), θ (N·m/rad)]`
    pub kp: [f64; 3],
    /// per second
    pub ki: [f64; 3],
    /// seconds
    pub kd: [f64; 3],
    /// Clamp on the integrated error `[mm·s, mm·s, rad·s]`.
    pub integral_limit: [f64; 3],
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: [1.2e-5, 1.2e-5, 8e-7],
            ki: [1.5e-5, 1.5e-5, 2e-7],
            kd: [2.5e-6, 2.5e-6, 4e-8],
            integral_limit: [5.0, 5.0, 1.0],
        }
    }
}

/// Independent PID loops on x, y and the wrapped heading error.
#[derive(Debug, Clone)]
pub struct PidController {
    pub gains: PidGains,
    integral: [f64; 3],
    previous: Option<[f64; 3]>,
}

impl PidController {
    pub fn new(gains: PidGains) -> Self {
        Self {
            gains,
            integral: [0.0; 3],
            previous: None,
        }
    }

    pub fn step(&mut self, pose: &Pose, target: &Pose, dt: f64) -> WrenchCommand {
        let e = [
            target.x - pose.x,
            target.y - pose.y,
            angle_error(target.theta, pose.theta),
        ];
        let g = self.gains;
        let mut out = [0.0; 3];
        for i in 0..3 {
            self.integral[i] = (self.integral[i] + e[i] * dt).clamp(-g.integral_limit[i], g.integral_limit[i]);
            let de = match self.previous {
                Some(p) if dt > 0.0 => {
                    let d = e[i] - p[i];
                    (if i == 2 { wrap_angle(d) } else { d }) / dt
                }
                _ => 0.0,
            };
            out[i] = g.kp[i] * e[i] + g.ki[i] * self.integral[i] + g.kd[i] * de;
        }
        self.previous = Some(e);
        WrenchCommand {
            force: Vec2::new(out[0], out[1]),
            torque: out[2],
        }
    }
}

pub fn pid_controller(pid: &mut PidController, pose: &Pose, target: &Pose, dt: f64) -> WrenchCommand {
    pid.step(pose, target, dt)
}

type M6 = SMatrix<f64, 6, 6>;
type M63 = SMatrix<f64, 6, 3>;
type M3 = SMatrix<f64, 3, 3>;
type V6 = SVector<f64, 6>;
type V3 = SVector<f64, 3>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearMpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Diagonal state weight on `(x, y, θ, vx, vy, ω)` in mm, rad, mm/s, rad/s.
    pub q: [f64; 6],
    pub q_terminal: [f64; 6],
    /// Diagonal input weight on `(F_x, F_y, τ)` in µN and µN·m.
    pub r: [f64; 3],
    /// µN
    pub force_max: f64,
    /// µN·m
    pub torque_max: f64,
}

impl Default for LinearMpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.04,
            q: [10.0, 10.0, 2.0, 0.0, 0.0, 0.0],
            q_terminal: [50.0, 50.0, 10.0, 0.0, 0.0, 0.0],
            r: [2e-3, 2e-3, 2e-2],
            force_max: 150.0,
            torque_max: 6.0,
        }
    }
}

/// Finite-horizon LQ tracking on the frozen-drag double integrator.
#[derive(Debug, Clone)]
pub struct LinearMpc {
    pub config: LinearMpcConfig,
    pub params: RobotParams,
}

/// Discrete model and the Riccati solution of one instance.
#[derive(Debug, Clone)]
pub struct LqPlan {
    pub a: M6,
    pub b: M63,
    /// First-step wrench (µN, µN·m), unclamped.
    pub first: V3,
    gains: Vec<(SMatrix<f64, 3, 6>, V3)>,
    refs: Vec<V6>,
}

impl LinearMpc {
    pub fn new(config: LinearMpcConfig, params: RobotParams) -> Self {
        Self { config, params }
    }

    /// Zero-order-hold discretization with the drag matrix frozen at `theta`.
    pub fn discretize(&self, theta: f64) -> (M6, M63) {
        let p = &self.params;
        let d = drag_matrix(theta, p);
        let mut ac = SMatrix::<f64, 9, 9>::zeros();
        ac[(0, 3)] = 1.0;
        ac[(1, 4)] = 1.0;
        ac[(2, 5)] = 1.0;
        for i in 0..2 {
            for j in 0..2 {
                ac[(3 + i, 3 + j)] = -d[(i, j)] / p.mass;
            }
            ac[(3 + i, 6 + i)] = 1e-3 / p.mass;
        }
        ac[(5, 5)] = -p.d_rot / p.inertia;
        ac[(5, 8)] = 1e-6 / p.inertia;
        let e = (ac * self.config.dt).exp();
        (
            e.fixed_view::<6, 6>(0, 0).into_owned(),
            e.fixed_view::<6, 3>(0, 6).into_owned(),
        )
    }

    /// Riccati recursion for the references `targets[k]`, `k = 0..=N`.
    pub fn plan(&self, state: &RobotState, targets: &[Pose]) -> LqPlan {
        let cfg = &self.config;
        let n = cfg.horizon;
        let (a, b) = self.discretize(state.theta);
        let q = M6::from_diagonal(&V6::from_column_slice(&cfg.q));
        let qn = M6::from_diagonal(&V6::from_column_slice(&cfg.q_terminal));
        let r = M3::from_diagonal(&V3::from_column_slice(&cfg.r));
        // Headings unwrapped around the current angle so errors stay short.
        let refs: Vec<V6> = (0..=n)
            .map(|k| {
                let t = &targets[k.min(targets.len() - 1)];
                V6::new(t.x, t.y, state.theta + angle_error(t.theta, state.theta), 0.0, 0.0, 0.0)
            })
            .collect();
        let mut p = qn;
        let mut pv = qn * refs[n];
        let mut gains = vec![(SMatrix::<f64, 3, 6>::zeros(), V3::zeros()); n];
        for k in (0..n).rev() {
            let btp = b.transpose() * p;
            let h = (r + btp * b).try_inverse().expect("R > 0 keeps the Hessian invertible");
            let kk = h * btp * a;
            let kf = h * b.transpose() * pv;
            let acl = a - b * kk;
            p = q + a.transpose() * p * acl;
            p = (p + p.transpose()) * 0.5;
            pv = q * refs[k] + acl.transpose() * pv;
            gains[k] = (kk, kf);
        }
        let z0 = state.to_vector();
        let first = -gains[0].0 * z0 + gains[0].1;
        LqPlan {
            a,
            b,
            first,
            gains,
            refs,
        }
    }

    /// Quadratic objective of the input sequence `inputs` from `state`.
    pub fn objective(&self, plan: &LqPlan, state: &RobotState, inputs: &[V3]) -> f64 {
        let cfg = &self.config;
        let mut z = state.to_vector();
        let mut j = 0.0;
        let w = |d: &V6, q: &[f64; 6]| (0..6).map(|i| q[i] * d[i] * d[i]).sum::<f64>();
        for (k, u) in inputs.iter().enumerate() {
            j += w(&(z - plan.refs[k]), &cfg.q) + (0..3).map(|i| cfg.r[i] * u[i] * u[i]).sum::<f64>();
            z = plan.a * z + plan.b * u;
        }
        j + w(&(z - plan.refs[inputs.len()]), &cfg.q_terminal)
    }

    /// The optimal open-loop input sequence of `plan`.
    pub fn rollout_inputs(&self, plan: &LqPlan, state: &RobotState) -> Vec<V3> {
        let mut z = state.to_vector();
        plan.gains
            .iter()
            .map(|(k, f)| {
                let u = -k * z + f;
                z = plan.a * z + plan.b * u;
                u
            })
            .collect()
    }

    /// First clamped wrench and the model's predicted pose one step ahead.
    pub fn step(&self, state: &RobotState, targets: &[Pose]) -> (WrenchCommand, Pose) {
        let plan = self.plan(state, targets);
        let f = Vec2::new(plan.first[0], plan.first[1]);
        let f = f.map(|v| v.clamp(-self.config.force_max, self.config.force_max));
        let tau = plan.first[2].clamp(-self.config.torque_max, self.config.torque_max);
        let u = V3::new(f.x, f.y, tau);
        let z1 = plan.a * state.to_vector() + plan.b * u;
        (
            WrenchCommand {
                force: f * 1e-6,
                torque: tau * 1e-6,
            },
            Pose::new(z1[0], z1[1], wrap_angle(z1[2])),
        )
    }
}

pub fn linear_mpc(mpc: &LinearMpc, state: &RobotState, targets: &[Pose]) -> WrenchCommand {
    mpc.step(state, targets).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "proposed")]
    Proposed,
    #[serde(rename = "b1_no_kf")]
    B1NoKf,
    #[serde(rename = "b2_pid_lut")]
    B2PidLut,
    #[serde(rename = "b3_lmpc_lut")]
    B3LmpcLut,
    #[serde(rename = "b4_lmpc_zernike")]
    B4LmpcZernike,
    #[serde(rename = "b5_nmpc_lut")]
    B5NmpcLut,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 6] = [
        ControllerKind::Proposed,
        ControllerKind::B1NoKf,
        ControllerKind::B2PidLut,
        ControllerKind::B3LmpcLut,
        ControllerKind::B4LmpcZernike,
        ControllerKind::B5NmpcLut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Proposed => "proposed",
            ControllerKind::B1NoKf => "b1_no_kf",
            ControllerKind::B2PidLut => "b2_pid_lut",
            ControllerKind::B3LmpcLut => "b3_lmpc_lut",
            ControllerKind::B4LmpcZernike => "b4_lmpc_zernike",
            ControllerKind::B5NmpcLut => "b5_nmpc_lut",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown controller {name:?}")))
    }

    /// True for controllers that consume the lookup-table field model.
    pub fn uses_lookup(self) -> bool {
        matches!(
            self,
            ControllerKind::B2PidLut | ControllerKind::B3LmpcLut | ControllerKind::B5NmpcLut
        )
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How a controller turns sensor readings into the pose it acts on.
pub enum PoseSource {
    /// Kalman fusion with the previous step's prediction.
    Kalman(KalmanFilter),
    /// The fresh measurement if any, otherwise the previous prediction.
    RawOrPredicted,
    /// The fresh measurement if any, otherwise the last measurement.
    HoldLast,
}

/// Control law and the field model it uses.
pub enum ControlLaw {
    Nmpc(NmpcController),
    Pid {
        pid: PidController,
        model: Arc<dyn FieldModel>,
        cache: AllocationCache,
    },
    Lmpc {
        mpc: LinearMpc,
        model: Arc<dyn FieldModel>,
        cache: AllocationCache,
    },
}

/// What the harness needs from one control period.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub currents: Vec<f64>,
    /// Pose the law acted on.
    pub estimate: Pose,
    /// Pose the law predicts for the next control instant, when it has a model.
    pub predicted: Option<Pose>,
    pub status: Option<SolverStatus>,
    pub iterations: usize,
    pub solve_time: Duration,
    pub fault: bool,
}

/// A pose source wired to a control law.
pub struct Controller {
    pub kind: ControllerKind,
    source: PoseSource,
    law: ControlLaw,
    params: RobotParams,
    dt: f64,
    i_max: f64,
    last_pose: Pose,
    last_measurement: Pose,
    prediction: Pose,
    held: Vec<f64>,
}

impl Controller {
    pub fn new(
        kind: ControllerKind,
        source: PoseSource,
        law: ControlLaw,
        params: RobotParams,
        dt: f64,
        i_max: f64,
        initial: Pose,
    ) -> Self {
        let n = match &law {
            ControlLaw::Nmpc(c) => c.model().coil_count(),
            ControlLaw::Pid { model, .. } | ControlLaw::Lmpc { model, .. } => model.coil_count(),
        };
        Self {
            kind,
            source,
            law,
            params,
            dt,
            i_max,
            last_pose: initial,
            last_measurement: initial,
            prediction: initial,
            held: vec![0.0; n],
        }
    }

    fn select_pose(&mut self, measurement: Option<&SensorReading>) -> Result<Pose> {
        let fresh = measurement.filter(|m| m.valid).map(SensorReading::pose);
        if let Some(p) = fresh {
            self.last_measurement = p;
        }
        Ok(match &mut self.source {
            PoseSource::Kalman(kf) => kf.step(self.prediction, measurement)?.pose,
            PoseSource::RawOrPredicted => fresh.unwrap_or(self.prediction),
            PoseSource::HoldLast => self.last_measurement,
        })
    }

    /// One control period: pick the pose, reconstruct rates, run the law.
    pub fn step(&mut self, measurement: Option<&SensorReading>, targets: &[Pose]) -> Result<StepOutput> {
        let pose = self.select_pose(measurement)?;
        // Rates come from the predicted pose change over the step. Differencing
        // the corrected pose would turn every measurement jump into a velocity
        // spike that the prediction then carries through the feedback gap.
        let moved = if matches!(self.law, ControlLaw::Pid { .. }) {
            pose
        } else {
            self.prediction
        };
        let (vx, vy, omega) = estimate_rates(&moved, &self.last_pose, self.dt)?;
        self.last_pose = pose;
        let state = RobotState {
            x: pose.x,
            y: pose.y,
            theta: wrap_angle(pose.theta),
            vx,
            vy,
            omega,
        };
        let started = Instant::now();
        let out = match &mut self.law {
            ControlLaw::Nmpc(c) => {
                let o = c.control_step(&state, targets);
                StepOutput {
                    currents: o.currents,
                    estimate: pose,
                    predicted: Some(o.predicted),
                    status: o.status,
                    iterations: o.iterations,
                    solve_time: o.solve_time,
                    fault: o.fault,
                }
            }
            ControlLaw::Pid { pid, model, cache } => {
                let cmd = pid.step(&pose, &targets[0], self.dt);
                let currents = allocate_or_hold(cmd, model.as_ref(), cache, pose, &self.params, self.i_max, &self.held);
                StepOutput {
                    currents,
                    estimate: pose,
                    predicted: None,
                    status: None,
                    iterations: 0,
                    solve_time: started.elapsed(),
                    fault: false,
                }
            }
            ControlLaw::Lmpc { mpc, model, cache } => {
                let (cmd, predicted) = mpc.step(&state, targets);
                let currents = allocate_or_hold(cmd, model.as_ref(), cache, pose, &self.params, self.i_max, &self.held);
                StepOutput {
                    currents,
                    estimate: pose,
                    predicted: Some(predicted),
                    status: None,
                    iterations: 0,
                    solve_time: started.elapsed(),
                    fault: false,
                }
            }
        };
        if let Some(p) = out.predicted {
            self.prediction = p;
        }
        self.held = out.currents.clone();
        Ok(out)
    }
}

fn allocate_or_hold(
    cmd: WrenchCommand,
    model: &dyn FieldModel,
    cache: &mut AllocationCache,
    pose: Pose,
    params: &RobotParams,
    i_max: f64,
    held: &[f64],
) -> Vec<f64> {
    match cache.get(model, pose, params) {
        Ok(map) if cmd.is_finite() => allocate_currents(&cmd, map, i_max),
        Ok(_) => held.to_vec(),
        Err(e) => {
            log::warn!("allocation failed, holding previous currents: {e}");
            held.to_vec()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain;
    use crate::math::Mat2;

    /// Three coils with independent force and torque channels.
    struct Toy;

    impl FieldModel for Toy {
        fn coil_count(&self) -> usize {
            4
        }
        fn domain(&self) -> Domain {
            Domain::square(50.0)
        }
        fn unit_responses(&self, _p: Vec2, out: &mut [UnitResponse], _h: bool) -> Result<()> {
            out[0].gradient = Mat2::new(0.01, 0.0, 0.0, 0.0);
            out[1].gradient = Mat2::new(0.0, 0.01, 0.01, 0.0);
            out[2].field = Vec2::new(0.0, 1e-3);
            out[3].field = Vec2::new(1e-3, 1e-3);
            out[3].gradient = Mat2::new(0.0, 0.0, 0.0, 0.02);
            Ok(())
        }
    }

    #[test]
    fn allocation_properties() {
        let p = RobotParams::magnet_robot();
        let map = AllocationMap::build(&Toy, Pose::default(), &p).unwrap();
        assert!(allocate_currents(&WrenchCommand::default(), &map, 30.0)
            .iter()
            .all(|v| *v == 0.0));
        let cmd = WrenchCommand {
            force: Vec2::new(2e-5, -1e-5),
            torque: 3e-7,
        };
        let i = allocate_currents(&cmd, &map, 30.0);
        let back = map.apply(&i);
        assert!((back.force - cmd.force).norm() <= 1e-8 * cmd.force.norm());
        assert!((back.torque - cmd.torque).abs() <= 1e-8 * cmd.torque.abs());
        let half = WrenchCommand {
            force: cmd.force * 0.5,
            torque: cmd.torque * 0.5,
        };
        let i2 = allocate_currents(&half, &map, 30.0);
        assert!(i
            .iter()
            .zip(&i2)
            .all(|(a, b)| (a * 0.5 - b).abs() <= 1e-12 * a.abs().max(1e-12)));
        let huge = WrenchCommand {
            force: cmd.force * 1e6,
            torque: cmd.torque * 1e6,
        };
        let i3 = allocate_currents(&huge, &map, 30.0);
        assert!(i3.iter().all(|v| v.abs() <= 30.0 + 1e-9));
    }

    #[test]
    fn singular_map_is_rejected() {
        struct Flat;
        impl FieldModel for Flat {
            fn coil_count(&self) -> usize {
                2
            }
            fn domain(&self) -> Domain {
                Domain::square(50.0)
            }
            fn unit_responses(&self, _p: Vec2, out: &mut [UnitResponse], _h: bool) -> Result<()> {
                out[0].field = Vec2::new(0.0, 1e-3);
                out[1].field = Vec2::new(0.0, 2e-3);
                Ok(())
            }
        }
        let r = AllocationMap::build(&Flat, Pose::default(), &RobotParams::magnet_robot());
        assert!(matches!(r, Err(Error::ActuationSingularity { .. })));
    }

    #[test]
    fn pid_cases() {
        let mut pid = PidController::new(PidGains {
            kp: [2e-6, 0.0, 0.0],
            ki: [0.0; 3],
            kd: [0.0; 3],
            integral_limit: [1.0; 3],
        });
        let zero = pid.step(&Pose::default(), &Pose::default(), 0.04);
        assert_eq!(zero, WrenchCommand::default());
        let cmd = pid.step(&Pose::default(), &Pose::new(1.0, 0.0, 0.0), 0.04);
        assert!((cmd.force.x - 2e-6).abs() < 1e-18);
        let mut pid = PidController::new(PidGains {
            kp: [0.0, 0.0, 1.0],
            ..PidGains::default()
        });
        pid.gains.ki = [0.0; 3];
        pid.gains.kd = [0.0; 3];
        let c = pid.step(&Pose::new(0.0, 0.0, 3.1), &Pose::new(0.0, 0.0, -3.1), 0.04);
        assert!(c.torque.abs() <= std::f64::consts::PI);
        assert!(c.torque > 0.0);
    }

    #[test]
    fn lmpc_rest_at_target_is_zero() {
        let mpc = LinearMpc::new(LinearMpcConfig::default(), RobotParams::magnet_robot());
        let s = RobotState {
            x: 3.0,
            y: -2.0,
            theta: 0.4,
            ..RobotState::default()
        };
        let (cmd, _) = mpc.step(&s, &[s.pose()]);
        assert!(cmd.force.norm() < 1e-15 && cmd.torque.abs() < 1e-15);
    }

    #[test]
    fn lmpc_first_input_is_stationary() {
        let mpc = LinearMpc::new(LinearMpcConfig::default(), RobotParams::magnet_robot());
        let s = RobotState {
            x: 1.0,
            y: -2.0,
            theta: 0.3,
            vx: 2.0,
            ..RobotState::default()
        };
        let targets = [Pose::new(4.0, 1.0, 0.8)];
        let plan = mpc.plan(&s, &targets);
        let inputs = mpc.rollout_inputs(&plan, &s);
        let j0 = mpc.objective(&plan, &s, &inputs);
        for i in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut u = inputs.clone();
                u[0][i] += sign * 1e-3;
                assert!(mpc.objective(&plan, &s, &u) > j0);
            }
        }
    }

    #[test]
    fn lmpc_decouples_at_zero_heading() {
        let mpc = LinearMpc::new(LinearMpcConfig::default(), RobotParams::magnet_robot());
        let (a, b) = mpc.discretize(0.0);
        assert_eq!(a[(3, 4)], 0.0);
        assert_eq!(a[(4, 3)], 0.0);
        assert_eq!(b[(3, 1)], 0.0);
        assert_eq!(b[(4, 0)], 0.0);
    }

    #[test]
    fn names_round_trip() {
        for k in ControllerKind::ALL {
            assert_eq!(ControllerKind::from_name(k.name()).unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
    }
}
