//! Parameter sweeps over feedback rate and noise, and the figure data built from them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::ControllerKind;
use crate::error::{Error, Result};
use crate::math::{mean, std_dev};

use super::run::{run_closed_loop, write_csv, ExperimentConfig, FieldSetup, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Feedback rate at the base noise level.
    Rate,
    /// Noise level at the base feedback rate.
    Noise,
    /// Feedback rate at a fixed nonzero noise level.
    RateAtFixedNoise,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Rate => "rate",
            SweepAxis::Noise => "noise",
            SweepAxis::RateAtFixedNoise => "rate_at_fixed_noise",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        [SweepAxis::Rate, SweepAxis::Noise, SweepAxis::RateAtFixedNoise]
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis {name:?}")))
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Rate | SweepAxis::RateAtFixedNoise => vec![3.0, 5.0, 10.0, 15.0, 20.0, 25.5],
            SweepAxis::Noise => vec![0.0, 0.5, 1.0, 2.0, 3.0],
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            SweepAxis::Rate => "figure_error_vs_rate.csv",
            SweepAxis::Noise => "figure_error_vs_noise.csv",
            SweepAxis::RateAtFixedNoise => "figure_error_vs_rate_fixed_noise.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub controllers: Vec<String>,
    /// Noise level for `RateAtFixedNoise` (mm).
    pub fixed_sigma: f64,
    /// Template for every run; its controller and degradation fields are overwritten.
    pub base: ExperimentConfig,
}

impl SweepSpec {
    pub fn new(axis: SweepAxis, base: ExperimentConfig) -> Self {
        Self {
            axis,
            values: axis.default_values(),
            controllers: ControllerKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            fixed_sigma: 2.0,
            base,
        }
    }

    /// The run configuration for one condition.
    pub fn condition(&self, controller: &str, value: f64) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.controller = controller.into();
        match self.axis {
            SweepAxis::Rate => cfg.degradation.rate_hz = value,
            SweepAxis::Noise => cfg.degradation.sigma_mm = value,
            SweepAxis::RateAtFixedNoise => {
                cfg.degradation.rate_hz = value;
                cfg.degradation.sigma_mm = self.fixed_sigma;
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.controllers.is_empty() {
            return Err(Error::Config(
                "sweep needs at least one value and one controller".into(),
            ));
        }
        for c in &self.controllers {
            ControllerKind::from_name(c)?;
        }
        self.base.validate()
    }
}

/// One row of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub controller: String,
    pub rate_hz: f64,
    pub sigma_mm: f64,
    pub seed: u64,
    pub rms_position: f64,
    pub rms_orientation: f64,
    pub max_position_error: f64,
    pub boundary_violations: usize,
    pub anterior_violations: usize,
    pub prediction_rms_position: Option<f64>,
    pub solver_faults: usize,
    pub fault: bool,
    /// Empty unless the run could not be completed.
    pub error: String,
}

impl SweepRow {
    fn new(axis: SweepAxis, value: f64, m: MetricsRow, error: String) -> Self {
        Self {
            axis,
            value,
            controller: m.controller,
            rate_hz: m.rate_hz,
            sigma_mm: m.sigma_mm,
            seed: m.seed,
            rms_position: m.rms_position,
            rms_orientation: m.rms_orientation,
            max_position_error: m.max_position_error,
            boundary_violations: m.boundary_violations,
            anterior_violations: m.anterior_violations,
            prediction_rms_position: m.prediction_rms_position,
            solver_faults: m.solver_faults,
            fault: m.fault,
            error,
        }
    }
}

/// Runs controllers × values × seeds on up to `workers` threads (all cores when `None`).
/// Failed runs are recorded with `fault` set and NaN metrics; the sweep continues.
pub fn sweep(spec: &SweepSpec, setup: &FieldSetup, workers: Option<usize>) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let jobs: Vec<(String, f64, u64)> = spec
        .controllers
        .iter()
        .flat_map(|c| {
            spec.values
                .iter()
                .flat_map(move |&v| spec.base.seeds.iter().map(move |&s| (c.clone(), v, s)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|(c, v, s)| {
                let cfg = spec.condition(c, *v);
                match run_closed_loop(&cfg, setup, *s) {
                    Ok(run) => SweepRow::new(
                        spec.axis,
                        *v,
                        MetricsRow::new(&cfg, &run),
                        run.fault.clone().unwrap_or_default(),
                    ),
                    Err(e) => SweepRow::new(spec.axis, *v, failed_row(&cfg, *s), e.to_string()),
                }
            })
            .collect()
    });
    Ok(rows)
}

fn failed_row(cfg: &ExperimentConfig, seed: u64) -> MetricsRow {
    MetricsRow {
        controller: cfg.controller.clone(),
        trajectory: cfg.trajectory.clone(),
        rate_hz: cfg.degradation.rate_hz,
        sigma_mm: cfg.degradation.sigma_mm,
        seed,
        rms_position: f64::NAN,
        rms_orientation: f64::NAN,
        max_position_error: f64::NAN,
        boundary_violations: 0,
        anterior_violations: 0,
        prediction_rms_position: None,
        prediction_rms_orientation: None,
        estimate_rms_position: f64::NAN,
        measurement_rms_position: f64::NAN,
        solver_faults: 0,
        steps: 0,
        fault: true,
    }
}

pub fn write_results(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn read_results(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

/// Mean and spread of one (axis, controller, value) condition over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis: SweepAxis,
    pub controller: String,
    pub value: f64,
    pub trials: usize,
    pub faults: usize,
    pub mean_rms_position: f64,
    pub std_rms_position: f64,
    pub mean_rms_orientation: f64,
    pub std_rms_orientation: f64,
    pub mean_max_position_error: f64,
    pub boundary_violations: usize,
}

/// Groups completed runs by condition, in axis, controller and value order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(SweepAxis, String, u64), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        // Non-negative floats order like their bit patterns.
        let key = (r.axis, r.controller.clone(), r.value.to_bits());
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((axis, controller, bits), g)| {
            let ok: Vec<&&SweepRow> = g.iter().filter(|r| !r.fault).collect();
            let pos: Vec<f64> = ok.iter().map(|m| m.rms_position).collect();
            let ang: Vec<f64> = ok.iter().map(|m| m.rms_orientation).collect();
            let max: Vec<f64> = ok.iter().map(|m| m.max_position_error).collect();
            SummaryRow {
                axis,
                controller,
                value: f64::from_bits(bits),
                trials: g.len(),
                faults: g.len() - ok.len(),
                mean_rms_position: mean(&pos),
                std_rms_position: std_dev(&pos),
                mean_rms_orientation: mean(&ang),
                std_rms_orientation: std_dev(&ang),
                mean_max_position_error: mean(&max),
                boundary_violations: ok.iter().map(|m| m.boundary_violations).sum(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct FigureRow<'a> {
    controller: &'a str,
    value: f64,
    mean_rms_position: f64,
    std_rms_position: f64,
}

/// Writes `summary.csv` and one `figure_*.csv` per axis present in `rows`.
pub fn report(rows: &[SweepRow], dir: &Path) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::Config("results table is empty".into()));
    }
    fs::create_dir_all(dir)?;
    let summary = summarize(rows);
    write_csv(&dir.join("summary.csv"), &summary)?;
    let mut axes: Vec<SweepAxis> = summary.iter().map(|s| s.axis).collect();
    axes.dedup();
    for axis in axes {
        let fig = summary.iter().filter(|s| s.axis == axis).map(|s| FigureRow {
            controller: &s.controller,
            value: s.value,
            mean_rms_position: s.mean_rms_position,
            std_rms_position: s.std_rms_position,
        });
        write_csv(&dir.join(axis.file_name()), fig)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(controller: &str, value: f64, seed: u64, rms: f64) -> SweepRow {
        let cfg = ExperimentConfig {
            controller: controller.into(),
            ..ExperimentConfig::default()
        };
        let mut m = failed_row(&cfg, seed);
        m.rms_position = rms;
        m.rms_orientation = 2.0 * rms;
        m.max_position_error = 3.0 * rms;
        m.fault = false;
        SweepRow::new(SweepAxis::Rate, value, m, String::new())
    }

    #[test]
    fn summary_matches_hand_means() {
        let rows = vec![
            row("proposed", 3.0, 0, 1.0),
            row("proposed", 3.0, 1, 2.0),
            row("proposed", 3.0, 2, 6.0),
            row("proposed", 25.5, 0, 0.5),
            row("b2_pid_lut", 3.0, 0, 4.0),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 3);
        let p3 = s.iter().find(|r| r.controller == "proposed" && r.value == 3.0).unwrap();
        assert_eq!(p3.trials, 3);
        assert!((p3.mean_rms_position - 3.0).abs() < 1e-12);
        assert!((p3.mean_rms_orientation - 6.0).abs() < 1e-12);
        assert!((p3.std_rms_position - 7f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn results_round_trip_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("proposed", 3.0, 0, 1.0), row("proposed", 5.0, 0, 2.0)];
        let path = dir.path().join("results.csv");
        write_results(&path, &rows).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].rms_position, 2.0);
        let summary = report(&back, dir.path()).unwrap();
        assert_eq!(summary.len(), 2);
        assert!(dir.path().join("figure_error_vs_rate.csv").exists());
        assert!(report(&[], dir.path()).is_err());
    }

    #[test]
    fn conditions_override_degradation() {
        let spec = SweepSpec::new(SweepAxis::RateAtFixedNoise, ExperimentConfig::default());
        let c = spec.condition("b1_no_kf", 3.0);
        assert_eq!((c.degradation.rate_hz, c.degradation.sigma_mm), (3.0, 2.0));
        assert_eq!(spec.values, vec![3.0, 5.0, 10.0, 15.0, 20.0, 25.5]);
        assert!(SweepAxis::from_name("noise").is_ok());
    }
}
