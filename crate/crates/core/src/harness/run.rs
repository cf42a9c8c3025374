//! Single closed-loop experiments and their CSV outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    AllocationCache, ControlLaw, Controller, ControllerKind, LinearMpc, LinearMpcConfig, PidController, PidGains,
    PoseSource,
};
use crate::dynamics::{Plant, Pose, RobotParams, RobotState};
use crate::error::{Error, Result};
use crate::estimator::{
    measurement_covariance, process_covariance, KalmanFilter, DEFAULT_PROCESS_SIGMA_DEG, DEFAULT_PROCESS_SIGMA_MM,
};
use crate::field::FieldModel;
use crate::field_oracle::{CoilSpec, GridGeometry, LookupFieldModel, SizeClass};
use crate::math::{mean, rms, wrap_angle};
use crate::nmpc::{NmpcConfig, NmpcController};
use crate::zernike::{FitOptions, FitReport, ZernikeFieldModel};

use super::degrade::{DegradationSpec, Degrader};
use super::trajectory::{corridor_trajectory, s_trajectory, Corridor, Trajectory};

/// Grid pitch for the fitting samples and the lookup tables (mm).
pub const GRID_SPACING: f64 = 2.0;

/// Central-difference step for the lookup gradient tables (mm).
const LOOKUP_STEP: f64 = 0.5;

/// Zernike order used for each coil size in the default field setup.
pub fn default_order(class: SizeClass) -> u32 {
    match class {
        SizeClass::Large => 3,
        SizeClass::Small | SizeClass::Medium => 4,
    }
}

/// The field models shared by every run: fitted Zernike model for the
/// proposed controller, lookup tables for the baselines and the plant.
pub struct FieldSetup {
    pub coils: Vec<CoilSpec>,
    pub zernike: Arc<ZernikeFieldModel>,
    pub lookup: Arc<LookupFieldModel>,
    pub reports: Vec<(SizeClass, FitReport)>,
}

impl FieldSetup {
    pub fn build(coils: &[CoilSpec]) -> Result<Self> {
        let geometry = GridGeometry::workspace(GRID_SPACING)?;
        let (zernike, reports) = ZernikeFieldModel::fit_coils(coils, geometry, default_order, &FitOptions::default())?;
        let lookup = LookupFieldModel::from_coils(coils, geometry, LOOKUP_STEP)?;
        Ok(Self {
            coils: coils.to_vec(),
            zernike: Arc::new(zernike),
            lookup: Arc::new(lookup),
            reports,
        })
    }

    /// Setup for the default eight-coil array, built once per process.
    pub fn shared() -> Result<&'static FieldSetup> {
        static SETUP: OnceLock<std::result::Result<FieldSetup, String>> = OnceLock::new();
        SETUP
            .get_or_init(|| FieldSetup::build(&CoilSpec::default_set()).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Config(format!("default field setup failed: {e}")))
    }

    /// Ground truth for the simulated plant.
    pub fn plant_model(&self) -> Arc<dyn FieldModel> {
        self.lookup.clone()
    }

    pub fn model_for(&self, kind: ControllerKind) -> Arc<dyn FieldModel> {
        if kind.uses_lookup() {
            self.lookup.clone()
        } else {
            self.zernike.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SCurveSpec {
    /// s
    pub duration: f64,
    /// Edge of the bounding square (mm).
    pub size: f64,
}

impl Default for SCurveSpec {
    fn default() -> Self {
        Self {
            duration: 30.0,
            size: 43.0,
        }
    }
}

/// Process noise of the pose filter, as per-step prediction error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub process_sigma_mm: f64,
    pub process_sigma_deg: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            process_sigma_mm: DEFAULT_PROCESS_SIGMA_MM,
            process_sigma_deg: DEFAULT_PROCESS_SIGMA_DEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// One of the `ControllerKind` names.
    pub controller: String,
    /// `s_curve` or `corridor`.
    pub trajectory: String,
    pub s_curve: SCurveSpec,
    pub corridor: Corridor,
    pub degradation: DegradationSpec,
    pub seeds: Vec<u64>,
    /// `magnet` or `capsule`.
    pub robot: String,
    /// Replaces the named robot's parameters when set.
    pub robot_params: Option<RobotParams>,
    /// Control period (s).
    pub control_dt: f64,
    pub plant_substeps: usize,
    pub nmpc: NmpcConfig,
    pub estimator: EstimatorConfig,
    pub pid: PidGains,
    pub lmpc: LinearMpcConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            controller: ControllerKind::Proposed.name().into(),
            trajectory: "s_curve".into(),
            s_curve: SCurveSpec::default(),
            corridor: Corridor::default(),
            degradation: DegradationSpec::default(),
            seeds: vec![0, 1, 2],
            robot: "magnet".into(),
            robot_params: None,
            control_dt: 0.04,
            plant_substeps: 4,
            nmpc: NmpcConfig::closed_loop(8),
            estimator: EstimatorConfig::default(),
            pid: PidGains::default(),
            lmpc: LinearMpcConfig::default(),
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> Result<ControllerKind> {
        ControllerKind::from_name(&self.controller)
    }

    pub fn robot_params(&self) -> Result<RobotParams> {
        let p = match (self.robot_params, self.robot.as_str()) {
            (Some(p), _) => p,
            (None, "magnet") => RobotParams::magnet_robot(),
            (None, "capsule") => RobotParams::capsule(),
            (None, other) => return Err(Error::Config(format!("unknown robot {other:?}"))),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn build_trajectory(&self) -> Result<Trajectory> {
        match self.trajectory.as_str() {
            "s_curve" => s_trajectory(self.s_curve.duration, self.s_curve.size, self.control_dt),
            "corridor" => corridor_trajectory(&self.corridor, self.control_dt),
            other => Err(Error::Config(format!("unknown trajectory {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.control_dt > 0.0 && self.plant_substeps > 0) {
            return Err(Error::Config("control_dt and plant_substeps must be positive".into()));
        }
        if (self.nmpc.dt - self.control_dt).abs() > 1e-12 || (self.lmpc.dt - self.control_dt).abs() > 1e-12 {
            return Err(Error::Config("controller step must equal control_dt".into()));
        }
        self.kind()?;
        self.robot_params()?;
        self.degradation.validate()?;
        self.nmpc.validate()?;
        let e = self.estimator;
        if !(e.process_sigma_mm > 0.0
            && e.process_sigma_deg > 0.0
            && e.process_sigma_mm.is_finite()
            && e.process_sigma_deg.is_finite())
        {
            return Err(Error::Config("estimator process noise must be positive".into()));
        }
        if self.trajectory == "corridor" {
            self.corridor.validate()?;
        } else if self.trajectory != "s_curve" {
            return Err(Error::Config(format!("unknown trajectory {:?}", self.trajectory)));
        }
        Ok(())
    }
}

/// Wires the pose source and control law for `kind`.
pub fn build_controller(
    kind: ControllerKind,
    config: &ExperimentConfig,
    setup: &FieldSetup,
    params: RobotParams,
    initial: Pose,
) -> Result<Controller> {
    let model = setup.model_for(kind);
    let d = &config.degradation;
    let kalman = || {
        PoseSource::Kalman(KalmanFilter::new(
            initial,
            process_covariance(
                config.estimator.process_sigma_mm,
                config.estimator.process_sigma_deg.to_radians(),
            ),
            measurement_covariance(d.sigma_mm, d.sigma_theta()),
        ))
    };
    let cache = || AllocationCache::new(1.0, 2f64.to_radians());
    let nmpc = |model: Arc<dyn FieldModel>| -> Result<ControlLaw> {
        Ok(ControlLaw::Nmpc(NmpcController::new(
            config.nmpc.clone(),
            params,
            model,
        )?))
    };
    let lmpc = |model: Arc<dyn FieldModel>| ControlLaw::Lmpc {
        mpc: LinearMpc::new(config.lmpc.clone(), params),
        model,
        cache: cache(),
    };
    let (source, law) = match kind {
        ControllerKind::Proposed | ControllerKind::B5NmpcLut => (kalman(), nmpc(model)?),
        ControllerKind::B1NoKf => (PoseSource::RawOrPredicted, nmpc(model)?),
        ControllerKind::B2PidLut => (
            PoseSource::HoldLast,
            ControlLaw::Pid {
                pid: PidController::new(config.pid),
                model,
                cache: cache(),
            },
        ),
        ControllerKind::B3LmpcLut | ControllerKind::B4LmpcZernike => (PoseSource::RawOrPredicted, lmpc(model)),
    };
    Ok(Controller::new(
        kind,
        source,
        law,
        params,
        config.control_dt,
        config.nmpc.i_max,
        initial,
    ))
}

/// One control period of the run log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub seed: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
    pub x_desired: f64,
    pub y_desired: f64,
    pub theta_desired: f64,
    pub x_estimate: f64,
    pub y_estimate: f64,
    pub theta_estimate: f64,
    pub measured: bool,
    /// Semicolon-separated applied currents (A).
    pub currents: String,
}

/// Tracking and timing summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// mm
    pub rms_position: f64,
    /// deg, on wrapped errors
    pub rms_orientation: f64,
    /// mm
    pub max_position_error: f64,
    /// Steps outside the corridor walls, or workspace wall contacts without a corridor.
    pub boundary_violations: usize,
    pub anterior_violations: usize,
    /// RMS of one-step predicted minus actual position (mm), for predicting controllers.
    pub prediction_rms_position: Option<f64>,
    /// deg
    pub prediction_rms_orientation: Option<f64>,
    /// RMS of the estimate the controller acted on against truth (mm).
    pub estimate_rms_position: f64,
    /// RMS of the raw readings against truth (mm), over emitted readings.
    pub measurement_rms_position: f64,
    pub solver_faults: usize,
    pub steps: usize,
    /// ms
    pub mean_solver_time: f64,
    /// ms
    pub median_solver_time: f64,
    /// Hz
    pub achieved_rate: f64,
}

/// Position and wrapped orientation error statistics `(rms mm, rms deg, max mm)`.
pub fn tracking_errors(truth: &[Pose], desired: &[Pose]) -> (f64, f64, f64) {
    let pos: Vec<f64> = truth
        .iter()
        .zip(desired)
        .map(|(a, b)| (a.position() - b.position()).norm())
        .collect();
    let ang: Vec<f64> = truth
        .iter()
        .zip(desired)
        .map(|(a, b)| wrap_angle(a.theta - b.theta).to_degrees())
        .collect();
    (rms(&pos), rms(&ang), pos.iter().cloned().fold(0.0, f64::max))
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Result of one seed.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub controller: ControllerKind,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub log: Vec<LogRow>,
    pub trajectory: Trajectory,
    /// Per-step solve times.
    pub solve_times: Vec<Duration>,
    /// The run aborted on a controller or plant fault; the log is partial.
    pub fault: Option<String>,
}

/// Runs `config` with one `seed`: sense, estimate, control, actuate, repeat.
pub fn run_closed_loop(config: &ExperimentConfig, setup: &FieldSetup, seed: u64) -> Result<RunOutcome> {
    config.validate()?;
    let kind = config.kind()?;
    let params = config.robot_params()?;
    let trajectory = config.build_trajectory()?;
    let dt = config.control_dt;
    let start = trajectory.samples[0].pose;
    let initial = Pose::new(start.x, start.y, wrap_angle(start.theta));
    let mut plant = Plant::new(
        RobotState::at_rest(initial),
        params,
        setup.plant_model(),
        config.plant_substeps,
    );
    let mut controller = build_controller(kind, config, setup, params, initial)?;
    let mut degrader = Degrader::new(&config.degradation, seed)?;
    let horizon = config.nmpc.horizon.max(config.lmpc.horizon);

    let n = trajectory.len();
    let mut log = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let mut pred_pos = Vec::new();
    let mut pred_ang = Vec::new();
    let mut est_err = Vec::with_capacity(n);
    let mut meas_err = Vec::new();
    let mut solve_times = Vec::with_capacity(n);
    let mut solver_faults = 0;
    let mut violations = (0, 0);
    let mut fault = None;

    for k in 0..n {
        let t = trajectory.samples[k].t;
        let state = plant.state();
        let pose = state.pose();
        truth.push(pose);
        if let Some(c) = &trajectory.corridor {
            let p = pose.position();
            if c.anterior_violation(p) {
                violations.0 += 1;
                violations.1 += 1;
            } else if c.posterior_violation(p) {
                violations.0 += 1;
            }
        }
        let reading = degrader.observe(t, &pose);
        if let Some(r) = &reading {
            meas_err.push((r.pose().position() - pose.position()).norm());
        }
        let desired = trajectory.samples[k].pose;
        let mut row = LogRow {
            seed,
            t,
            x: state.x,
            y: state.y,
            theta: state.theta,
            vx: state.vx,
            vy: state.vy,
            omega: state.omega,
            x_desired: desired.x,
            y_desired: desired.y,
            theta_desired: desired.theta,
            x_estimate: f64::NAN,
            y_estimate: f64::NAN,
            theta_estimate: f64::NAN,
            measured: reading.is_some(),
            currents: String::new(),
        };
        if k + 1 == n {
            log.push(row);
            break;
        }
        let targets = trajectory.window(k, horizon + 1);
        let out = match controller.step(reading.as_ref(), &targets) {
            Ok(o) => o,
            Err(e) => {
                log.push(row);
                fault = Some(format!("controller fault at t = {t:.3} s: {e}"));
                break;
            }
        };
        est_err.push((out.estimate.position() - pose.position()).norm());
        solve_times.push(out.solve_time);
        solver_faults += usize::from(out.fault);
        row.x_estimate = out.estimate.x;
        row.y_estimate = out.estimate.y;
        row.theta_estimate = out.estimate.theta;
        row.currents = out.currents.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        log.push(row);
        let next = match plant.advance(&out.currents, dt) {
            Ok(s) => s,
            Err(e) => {
                fault = Some(format!("plant fault at t = {t:.3} s: {e}"));
                break;
            }
        };
        if let Some(p) = out.predicted {
            pred_pos.push((p.position() - next.position()).norm());
            pred_ang.push(wrap_angle(p.theta - next.theta).to_degrees());
        }
    }

    let desired: Vec<Pose> = trajectory.samples.iter().take(truth.len()).map(|s| s.pose).collect();
    let (rms_position, rms_orientation, max_position_error) = tracking_errors(&truth, &desired);
    let ms: Vec<f64> = solve_times.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    let mean_ms = if ms.is_empty() { 0.0 } else { mean(&ms) };
    let boundary_violations = if trajectory.corridor.is_some() {
        violations.0
    } else {
        plant.wall_contacts()
    };
    let predicted = !pred_pos.is_empty();
    let metrics = RunMetrics {
        rms_position,
        rms_orientation,
        max_position_error,
        boundary_violations,
        anterior_violations: violations.1,
        prediction_rms_position: predicted.then(|| rms(&pred_pos)),
        prediction_rms_orientation: predicted.then(|| rms(&pred_ang)),
        estimate_rms_position: rms(&est_err),
        measurement_rms_position: rms(&meas_err),
        solver_faults,
        steps: solve_times.len(),
        mean_solver_time: mean_ms,
        median_solver_time: median(&ms),
        achieved_rate: 1.0 / dt.max(mean_ms * 1e-3),
    };
    Ok(RunOutcome {
        controller: kind,
        seed,
        metrics,
        log,
        trajectory,
        solve_times,
        fault,
    })
}

/// Runs every seed of `config` concurrently; results are in seed order.
pub fn run_experiment(config: &ExperimentConfig, setup: &FieldSetup) -> Result<Vec<RunOutcome>> {
    config.validate()?;
    config
        .seeds
        .par_iter()
        .map(|&s| run_closed_loop(config, setup, s))
        .collect()
}

/// Deterministic columns of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub controller: String,
    pub trajectory: String,
    pub rate_hz: f64,
    pub sigma_mm: f64,
    pub seed: u64,
    pub rms_position: f64,
    pub rms_orientation: f64,
    pub max_position_error: f64,
    pub boundary_violations: usize,
    pub anterior_violations: usize,
    pub prediction_rms_position: Option<f64>,
    pub prediction_rms_orientation: Option<f64>,
    pub estimate_rms_position: f64,
    pub measurement_rms_position: f64,
    pub solver_faults: usize,
    pub steps: usize,
    pub fault: bool,
}

impl MetricsRow {
    pub fn new(config: &ExperimentConfig, run: &RunOutcome) -> Self {
        let m = &run.metrics;
        Self {
            controller: run.controller.name().into(),
            trajectory: run.trajectory.name.clone(),
            rate_hz: config.degradation.rate_hz,
            sigma_mm: config.degradation.sigma_mm,
            seed: run.seed,
            rms_position: m.rms_position,
            rms_orientation: m.rms_orientation,
            max_position_error: m.max_position_error,
            boundary_violations: m.boundary_violations,
            anterior_violations: m.anterior_violations,
            prediction_rms_position: m.prediction_rms_position,
            prediction_rms_orientation: m.prediction_rms_orientation,
            estimate_rms_position: m.estimate_rms_position,
            measurement_rms_position: m.measurement_rms_position,
            solver_faults: m.solver_faults,
            steps: m.steps,
            fault: run.fault.is_some(),
        }
    }
}

/// Wall-clock columns, kept out of `metrics.csv` so that file is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct TimingRow {
    controller: String,
    seed: u64,
    mean_solver_time_ms: f64,
    median_solver_time_ms: f64,
    max_solver_time_ms: f64,
    achieved_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct OverlayRow {
    series: String,
    seed: Option<u64>,
    index: usize,
    x: f64,
    y: f64,
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the per-seed metrics, timing, log and overlay files into `dir`.
pub fn write_run_outputs(dir: &Path, config: &ExperimentConfig, runs: &[RunOutcome]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(
        &dir.join("metrics.csv"),
        runs.iter().map(|r| MetricsRow::new(config, r)),
    )?;
    write_csv(
        &dir.join("timing.csv"),
        runs.iter().map(|r| TimingRow {
            controller: r.controller.name().into(),
            seed: r.seed,
            mean_solver_time_ms: r.metrics.mean_solver_time,
            median_solver_time_ms: r.metrics.median_solver_time,
            max_solver_time_ms: r.solve_times.iter().map(|d| d.as_secs_f64() * 1e3).fold(0.0, f64::max),
            achieved_rate_hz: r.metrics.achieved_rate,
        }),
    )?;
    write_csv(&dir.join("trajectory_log.csv"), runs.iter().flat_map(|r| r.log.iter()))?;
    write_csv(&dir.join("figure_overlay.csv"), overlay_rows(runs))?;
    Ok(())
}

fn overlay_rows(runs: &[RunOutcome]) -> Vec<OverlayRow> {
    let mut rows = Vec::new();
    let Some(first) = runs.first() else {
        return rows;
    };
    let point = |series: &str, seed, index, x, y| OverlayRow {
        series: series.into(),
        seed,
        index,
        x,
        y,
    };
    for (i, s) in first.trajectory.samples.iter().enumerate() {
        rows.push(point("desired", None, i, s.pose.x, s.pose.y));
    }
    for r in runs {
        for (i, l) in r.log.iter().enumerate() {
            rows.push(point("actual", Some(r.seed), i, l.x, l.y));
        }
    }
    if let Some(c) = &first.trajectory.corridor {
        let (anterior, posterior) = c.boundaries(0.5);
        for (i, p) in anterior.iter().enumerate() {
            rows.push(point("anterior_boundary", None, i, p.x, p.y));
        }
        for (i, p) in posterior.iter().enumerate() {
            rows.push(point("posterior_boundary", None, i, p.x, p.y));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offset_metric() {
        let desired: Vec<Pose> = (0..20).map(|k| Pose::new(k as f64, 0.0, 0.0)).collect();
        let truth: Vec<Pose> = desired.iter().map(|p| Pose::new(p.x, p.y + 1.0, p.theta)).collect();
        let (rp, ro, max) = tracking_errors(&truth, &desired);
        assert!((rp - 1.0).abs() < 1e-12 && ro == 0.0 && (max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orientation_rms_wraps() {
        let target = 180f64.to_radians();
        let truth = [
            Pose::new(0.0, 0.0, 179f64.to_radians()),
            Pose::new(0.0, 0.0, -179f64.to_radians()),
        ];
        let (_, ro, _) = tracking_errors(&truth, &[Pose::new(0.0, 0.0, target); 2]);
        assert!((ro - 1.0).abs() < 1e-9, "{ro}");
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = ExperimentConfig {
            seeds: vec![],
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            controller: "nope".into(),
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let json = serde_json::to_string(&ExperimentConfig::default()).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ExperimentConfig::default());
        let partial: ExperimentConfig = serde_json::from_str(r#"{"controller": "b2_pid_lut"}"#).unwrap();
        assert_eq!(partial.kind().unwrap(), ControllerKind::B2PidLut);
    }
}
