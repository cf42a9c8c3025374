//! Unified NMPC: coil currents are the decision variables, states come from
//! an RK4 rollout through the field model (single shooting).
//!
//! The loss gradient is accumulated backwards through the rollout using the
//! per-step sensitivities `Φ_k = ∂x_{k+1}/∂x_k` and `Γ_k = ∂x_{k+1}/∂I_k`.
//! Currents are kept feasible by a forward clamp that enforces the box and the
//! rate limit step by step, and the loss is minimized by projected L-BFGS.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dynamics::{Pose, RobotParams, RobotState, StateVector, Workspace};
use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::math::wrap_angle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmpcConfig {
    pub horizon: usize,
    /// s
    pub dt: f64,
    /// Position weight (per mm²).
    pub q_p: [[f64; 2]; 2],
    /// Orientation weight (per rad²).
    pub q_theta: f64,
    /// Per-coil current weight (per A²).
    pub r: Vec<f64>,
    /// Per-coil current-change weight (per A²).
    pub s: Vec<f64>,
    pub p: [[f64; 2]; 2],
    pub q_theta_n: f64,
    /// A
    pub i_max: f64,
    /// A per step
    pub di_max: f64,
    /// Half edge of the soft workspace box (mm).
    pub box_half: f64,
    /// Weight of the squared hinge outside the box (per mm²).
    pub box_weight: f64,
    pub max_iterations: usize,
    /// Relative projected-gradient tolerance.
    pub tolerance: f64,
    /// Soft wall-clock deadline (s). Off by default so runs are reproducible.
    pub deadline: Option<f64>,
    pub memory: usize,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        Self::for_coils(8)
    }
}

impl NmpcConfig {
    pub fn for_coils(n: usize) -> Self {
        let q = 10.0;
        Self {
            horizon: 20,
            dt: 0.04,
            q_p: [[q, 0.0], [0.0, q]],
            q_theta: 2.0,
            r: vec![1.0; n],
            s: vec![0.5; n],
            p: [[5.0 * q, 0.0], [0.0, 5.0 * q]],
            q_theta_n: 10.0,
            i_max: 30.0,
            di_max: 5.0,
            box_half: 45.0,
            box_weight: 1e3,
            max_iterations: 50,
            tolerance: 1e-6,
            deadline: None,
            memory: 8,
        }
    }

    /// Tuning used by the closed-loop experiments. Compared with the
    /// defaults it charges thirty times more per ampere, because the surrogate
    /// robot moves tens of mm/s per ampere and the default weights amplify
    /// sensor noise into large currents. Heading is weighted so that a radian
    /// costs about as much as 5 mm.
    pub fn closed_loop(n: usize) -> Self {
        let r = 30.0;
        let q_theta = 300.0;
        Self {
            q_theta,
            r: vec![r; n],
            s: vec![0.5 * r; n],
            q_theta_n: 5.0 * q_theta,
            ..Self::for_coils(n)
        }
    }

    pub fn coils(&self) -> usize {
        self.r.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || !(self.dt > 0.0) {
            return Err(Error::Config("NMPC needs horizon >= 1 and dt > 0".into()));
        }
        if self.r.len() != self.s.len() {
            return Err(Error::Config("R and S must have one entry per coil".into()));
        }
        let psd = |m: &[[f64; 2]; 2]| {
            let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
            b == c && a >= 0.0 && d >= 0.0 && a * d - b * c >= 0.0
        };
        let scalars = [self.q_theta, self.q_theta_n, self.box_weight];
        if !psd(&self.q_p)
            || !psd(&self.p)
            || scalars.iter().any(|v| !(*v >= 0.0))
            || self.r.iter().chain(&self.s).any(|v| !(*v >= 0.0))
        {
            return Err(Error::Config("NMPC weights must be positive semi-definite".into()));
        }
        if !(self.i_max > 0.0 && self.di_max > 0.0) {
            return Err(Error::Config("current and rate limits must be positive".into()));
        }
        Ok(())
    }
}

/// Heading error wrapped to (−π, π].
pub fn angle_error(theta: f64, theta_desired: f64) -> f64 {
    wrap_angle(theta - theta_desired)
}

fn quad(m: &[[f64; 2]; 2], e: [f64; 2]) -> f64 {
    e[0] * (m[0][0] * e[0] + m[0][1] * e[1]) + e[1] * (m[1][0] * e[0] + m[1][1] * e[1])
}

fn quad_grad(m: &[[f64; 2]; 2], e: [f64; 2]) -> [f64; 2] {
    [
        (m[0][0] + m[0][0]) * e[0] + (m[0][1] + m[1][0]) * e[1],
        (m[1][0] + m[0][1]) * e[0] + (m[1][1] + m[1][1]) * e[1],
    ]
}

fn pose_error(state: &RobotState, target: &Pose) -> ([f64; 2], f64) {
    (
        [state.x - target.x, state.y - target.y],
        angle_error(state.theta, target.theta),
    )
}

/// `eᵀQ_p e + q_θ e_θ² + IᵀRI + ΔIᵀSΔI` with `ΔI = I_k − I_{k−1}`.
pub fn stage_cost(state: &RobotState, current: &[f64], previous: &[f64], target: &Pose, config: &NmpcConfig) -> f64 {
    let (e, et) = pose_error(state, target);
    let mut cost = quad(&config.q_p, e) + config.q_theta * et * et;
    for c in 0..current.len() {
        let d = current[c] - previous[c];
        cost += config.r[c] * current[c] * current[c] + config.s[c] * d * d;
    }
    cost
}

/// `eᵀP e + q_{θ,N} e_θ²`.
pub fn terminal_cost(state: &RobotState, target: &Pose, config: &NmpcConfig) -> f64 {
    let (e, et) = pose_error(state, target);
    quad(&config.p, e) + config.q_theta_n * et * et
}

/// Squared hinge on the soft workspace box.
pub fn box_penalty(state: &RobotState, config: &NmpcConfig) -> f64 {
    let h = |v: f64| (v.abs() - config.box_half).max(0.0);
    config.box_weight * (h(state.x).powi(2) + h(state.y).powi(2))
}

fn box_penalty_grad(state: &RobotState, config: &NmpcConfig) -> [f64; 2] {
    let g = |v: f64| 2.0 * config.box_weight * (v.abs() - config.box_half).max(0.0) * v.signum();
    [g(state.x), g(state.y)]
}

fn target_at(targets: &[Pose], k: usize) -> &Pose {
    &targets[k.min(targets.len() - 1)]
}

/// Loss of a rollout: stage costs for `k = 0..N−1`, the terminal cost at
/// `x_N`, and the workspace penalty on `x_1..x_N`.
///
/// `trajectory` holds `x_0..x_N`, `currents` holds `I_0..I_{N−1}` and
/// `targets` is indexed by step (the last entry is reused past its end).
pub fn total_loss(
    trajectory: &[RobotState],
    currents: &[Vec<f64>],
    targets: &[Pose],
    previous: &[f64],
    config: &NmpcConfig,
) -> f64 {
    let n = currents.len();
    debug_assert_eq!(trajectory.len(), n + 1);
    let mut loss = 0.0;
    for k in 0..n {
        let prev = if k == 0 { previous } else { &currents[k - 1] };
        loss += stage_cost(&trajectory[k], &currents[k], prev, target_at(targets, k), config);
        loss += box_penalty(&trajectory[k + 1], config);
    }
    loss + terminal_cost(&trajectory[n], target_at(targets, n), config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    Budget,
    Deadline,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct NmpcSolution {
    /// `I_0..I_{N−1}`
    pub currents: Vec<Vec<f64>>,
    /// `x_1..x_N`
    pub states: Vec<RobotState>,
    pub loss: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    /// Loss (and gradient) evaluations, including the start candidates.
    pub evaluations: usize,
    pub wall_time: Duration,
}

/// One optimal-control instance.
pub struct Problem<'a> {
    pub model: &'a dyn FieldModel,
    pub params: &'a RobotParams,
    pub config: &'a NmpcConfig,
    pub initial: RobotState,
    pub targets: &'a [Pose],
    /// Current applied during the previous control period.
    pub previous: &'a [f64],
}

impl Problem<'_> {
    fn nc(&self) -> usize {
        self.previous.len()
    }

    /// Forward clamp onto the box and rate-limit set, in place.
    pub fn project(&self, u: &mut [f64]) {
        let nc = self.nc();
        let (imax, di) = (self.config.i_max, self.config.di_max);
        for k in 0..self.config.horizon {
            for c in 0..nc {
                let prev = if k == 0 { self.previous[c] } else { u[(k - 1) * nc + c] };
                let lo = (-imax).max(prev - di);
                let hi = imax.min(prev + di);
                let v = &mut u[k * nc + c];
                *v = if lo <= hi {
                    v.clamp(lo, hi)
                } else {
                    prev.clamp(-imax, imax)
                };
            }
        }
    }

    /// True when `u` satisfies the box and rate limits exactly.
    pub fn feasible(&self, u: &[f64]) -> bool {
        let nc = self.nc();
        (0..self.config.horizon).all(|k| {
            (0..nc).all(|c| {
                let v = u[k * nc + c];
                let prev = if k == 0 { self.previous[c] } else { u[(k - 1) * nc + c] };
                v.abs() <= self.config.i_max && (v - prev).abs() <= self.config.di_max + 1e-12
            })
        })
    }

    fn split(&self, u: &[f64]) -> Vec<Vec<f64>> {
        u.chunks(self.nc()).map(|c| c.to_vec()).collect()
    }

    /// Rolls out `u` and returns `x_0..x_N`.
    pub fn rollout(&self, u: &[f64], work: &mut Workspace) -> Result<Vec<RobotState>> {
        let nc = self.nc();
        let mut traj = Vec::with_capacity(self.config.horizon + 1);
        traj.push(self.initial);
        for k in 0..self.config.horizon {
            let next = work.integrate(
                &traj[k],
                &u[k * nc..(k + 1) * nc],
                self.config.dt,
                self.model,
                self.params,
            )?;
            traj.push(next);
        }
        Ok(traj)
    }

    pub fn loss(&self, u: &[f64], work: &mut Workspace) -> Result<f64> {
        let traj = self.rollout(u, work)?;
        Ok(total_loss(
            &traj,
            &self.split(u),
            self.targets,
            self.previous,
            self.config,
        ))
    }

    /// Loss and its gradient with respect to every current, by reverse accumulation.
    pub fn loss_and_gradient(&self, u: &[f64], work: &mut Workspace) -> Result<(f64, Vec<f64>)> {
        let (n, nc, cfg) = (self.config.horizon, self.nc(), self.config);
        let mut traj = Vec::with_capacity(n + 1);
        let mut sens = Vec::with_capacity(n);
        traj.push(self.initial);
        for k in 0..n {
            let s = work.integrate_sensitivity(&traj[k], &u[k * nc..(k + 1) * nc], cfg.dt, self.model, self.params)?;
            traj.push(s.next);
            sens.push(s);
        }
        let loss = total_loss(&traj, &self.split(u), self.targets, self.previous, cfg);

        let state_grad = |k: usize| -> StateVector {
            let x = &traj[k];
            let (e, et) = pose_error(x, target_at(self.targets, k));
            let (gp, wt) = if k == n {
                (quad_grad(&cfg.p, e), cfg.q_theta_n)
            } else {
                (quad_grad(&cfg.q_p, e), cfg.q_theta)
            };
            let gb = box_penalty_grad(x, cfg);
            StateVector::new(gp[0] + gb[0], gp[1] + gb[1], 2.0 * wt * et, 0.0, 0.0, 0.0)
        };

        let mut grad = vec![0.0; n * nc];
        // Direct current terms: R on I_k and S on I_k − I_{k−1}.
        for k in 0..n {
            for c in 0..nc {
                let i = u[k * nc + c];
                let prev = if k == 0 { self.previous[c] } else { u[(k - 1) * nc + c] };
                grad[k * nc + c] += 2.0 * cfg.r[c] * i + 2.0 * cfg.s[c] * (i - prev);
                if k > 0 {
                    grad[(k - 1) * nc + c] -= 2.0 * cfg.s[c] * (i - prev);
                }
            }
        }
        let mut lambda = state_grad(n);
        for k in (0..n).rev() {
            let gu = sens[k].gamma.transpose() * lambda;
            for c in 0..nc {
                grad[k * nc + c] += gu[c];
            }
            if k > 0 {
                lambda = sens[k].phi.transpose() * lambda + state_grad(k);
            }
        }
        Ok((loss, grad))
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(loss, |u|²)` ordering with the smaller current norm winning ties.
fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Two-loop L-BFGS direction `−H g`.
fn lbfgs_direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / norm2(y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Solves one NMPC instance. `warm_start` is the previous period's solution;
/// it is shifted by one step with the last current repeated.
pub fn solve(problem: &Problem, warm_start: Option<&NmpcSolution>) -> Result<NmpcSolution> {
    let start = Instant::now();
    let cfg = problem.config;
    let (n, nc) = (cfg.horizon, problem.nc());
    if problem.model.coil_count() != nc || cfg.coils() != nc {
        return Err(Error::CurrentCount {
            got: nc,
            expected: problem.model.coil_count(),
        });
    }
    if !problem.initial.is_finite() {
        return Err(Error::SolverFault("non-finite initial state".into()));
    }
    let mut work = Workspace::new(nc);
    let deadline = cfg.deadline.map(Duration::from_secs_f64);

    // Start candidates: projected zero and projected warm shift.
    let mut candidates = vec![vec![0.0; n * nc]];
    if let Some(w) = warm_start {
        let mut u = Vec::with_capacity(n * nc);
        for k in 0..n {
            let src = w
                .currents
                .get(k + 1)
                .or(w.currents.last())
                .expect("non-empty warm start");
            u.extend_from_slice(src);
        }
        candidates.push(u);
    }
    let mut evaluations = 0;
    let mut best: Option<(Vec<f64>, (f64, f64))> = None;
    for mut u in candidates {
        problem.project(&mut u);
        evaluations += 1;
        let f = problem.loss(&u, &mut work)?;
        if !f.is_finite() {
            continue;
        }
        let key = (f, norm2(&u));
        if best.as_ref().is_none_or(|(_, b)| better(key, *b)) {
            best = Some((u, key));
        }
    }
    let (mut u, _) = best.ok_or_else(|| Error::SolverFault("non-finite loss at every start point".into()))?;

    evaluations += 1;
    let (mut f, mut g) = problem.loss_and_gradient(&u, &mut work)?;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut status = SolverStatus::Budget;
    let mut iterations = 0;
    let c1 = 1e-4;

    while iterations < cfg.max_iterations {
        // Projected-gradient stationarity test.
        let mut probe: Vec<f64> = u.iter().zip(&g).map(|(x, gi)| x - gi).collect();
        problem.project(&mut probe);
        let pg = probe.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if pg <= cfg.tolerance * (1.0 + f.abs()) {
            status = SolverStatus::Converged;
            break;
        }
        if deadline.is_some_and(|d| start.elapsed() >= d) {
            status = SolverStatus::Deadline;
            break;
        }
        iterations += 1;

        let mut accepted: Option<(Vec<f64>, f64)> = None;
        // L-BFGS direction first, then a scaled projected-gradient step.
        for attempt in 0..2 {
            let dir = if attempt == 0 && !memory.is_empty() {
                let d = lbfgs_direction(&g, &memory);
                if dot(&d, &g) < 0.0 {
                    d
                } else {
                    continue;
                }
            } else {
                let scale = match memory.back() {
                    Some((s, y, _)) => (dot(s, y) / norm2(y)).max(1e-12),
                    None => 1.0 / g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12),
                };
                g.iter().map(|v| -v * scale).collect()
            };
            let mut alpha = 1.0;
            for _ in 0..30 {
                let mut trial: Vec<f64> = u.iter().zip(&dir).map(|(x, d)| x + alpha * d).collect();
                problem.project(&mut trial);
                let step: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
                let decrease = dot(&g, &step);
                if norm2(&step) == 0.0 || decrease >= 0.0 {
                    alpha *= 0.5;
                    continue;
                }
                evaluations += 1;
                let ft = problem.loss(&trial, &mut work)?;
                if ft.is_finite() && ft <= f + c1 * decrease {
                    accepted = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            memory.clear();
        }
        let Some((trial, _)) = accepted else {
            status = SolverStatus::Stalled;
            break;
        };
        evaluations += 1;
        let (ft, gt) = problem.loss_and_gradient(&trial, &mut work)?;
        let s: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s).sqrt() * norm2(&y).sqrt() {
            if memory.len() == cfg.memory.max(1) {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let stalled = f - ft <= 1e-12 * (1.0 + f.abs());
        u = trial;
        f = ft;
        g = gt;
        if stalled {
            status = SolverStatus::Converged;
            break;
        }
    }

    let traj = problem.rollout(&u, &mut work)?;
    let currents = problem.split(&u);
    let loss = total_loss(&traj, &currents, problem.targets, problem.previous, cfg);
    Ok(NmpcSolution {
        currents,
        states: traj[1..].to_vec(),
        loss,
        status,
        iterations,
        evaluations,
        wall_time: start.elapsed(),
    })
}

/// Output of one receding-horizon step.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub currents: Vec<f64>,
    /// Predicted pose one period ahead under the applied currents.
    pub predicted: Pose,
    pub status: Option<SolverStatus>,
    pub iterations: usize,
    pub solve_time: Duration,
    /// The solver failed and the zero-current safe action was applied.
    pub fault: bool,
}

/// Receding-horizon loop state: warm start and the last applied current.
pub struct NmpcController {
    pub config: NmpcConfig,
    pub params: RobotParams,
    model: Arc<dyn FieldModel>,
    warm: Option<NmpcSolution>,
    applied: Vec<f64>,
}

impl NmpcController {
    pub fn new(config: NmpcConfig, params: RobotParams, model: Arc<dyn FieldModel>) -> Result<Self> {
        config.validate()?;
        if config.coils() != model.coil_count() {
            return Err(Error::CurrentCount {
                got: config.coils(),
                expected: model.coil_count(),
            });
        }
        let n = model.coil_count();
        Ok(Self {
            config,
            params,
            model,
            warm: None,
            applied: vec![0.0; n],
        })
    }

    pub fn model(&self) -> &Arc<dyn FieldModel> {
        &self.model
    }

    pub fn last_solution(&self) -> Option<&NmpcSolution> {
        self.warm.as_ref()
    }

    /// Solves from `state`, applies `I_0` and reports the predicted `x_1` pose.
    pub fn control_step(&mut self, state: &RobotState, targets: &[Pose]) -> ControlOutput {
        let problem = Problem {
            model: self.model.as_ref(),
            params: &self.params,
            config: &self.config,
            initial: *state,
            targets,
            previous: &self.applied,
        };
        match solve(&problem, self.warm.as_ref()) {
            Ok(sol) => {
                let out = ControlOutput {
                    currents: sol.currents[0].clone(),
                    predicted: sol.states[0].pose(),
                    status: Some(sol.status),
                    iterations: sol.iterations,
                    solve_time: sol.wall_time,
                    fault: false,
                };
                self.applied = out.currents.clone();
                self.warm = Some(sol);
                out
            }
            Err(e) => {
                log::warn!("NMPC solve failed, applying zero currents: {e}");
                let zero = vec![0.0; self.applied.len()];
                let predicted = Workspace::new(zero.len())
                    .integrate(state, &zero, self.config.dt, self.model.as_ref(), &self.params)
                    .map(|s| s.pose())
                    .unwrap_or_else(|_| state.pose());
                self.applied = zero.clone();
                self.warm = None;
                ControlOutput {
                    currents: zero,
                    predicted,
                    status: None,
                    iterations: 0,
                    solve_time: Duration::ZERO,
                    fault: true,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn angle_error_cases() {
        assert_eq!(angle_error(0.0, 0.0), 0.0);
        assert!((angle_error(1.5 * PI, 0.0) + PI / 2.0).abs() < 1e-12);
        assert!((angle_error(-PI + 0.01, PI - 0.01) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn stage_cost_cases() {
        let mut cfg = NmpcConfig::for_coils(2);
        let target = Pose::default();
        let zero = [0.0, 0.0];
        assert_eq!(stage_cost(&RobotState::default(), &zero, &zero, &target, &cfg), 0.0);
        cfg.q_p = [[1.0, 0.0], [0.0, 1.0]];
        let s = RobotState {
            x: 1.0,
            y: 2.0,
            ..RobotState::default()
        };
        assert_eq!(stage_cost(&s, &zero, &zero, &target, &cfg), 5.0);
        cfg.r = vec![0.0, 0.0];
        let i = [1.5, -2.0];
        assert_eq!(stage_cost(&RobotState::default(), &i, &i, &target, &cfg), 0.0);
    }

    #[test]
    fn default_weight_ratios() {
        let cfg = NmpcConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.q_p[0][0], 10.0 * cfg.r[0]);
        assert_eq!(cfg.r[0], 2.0 * cfg.s[0]);
    }
}
