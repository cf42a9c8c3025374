use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use magctl_core::dynamics::{Pose, RobotParams, RobotState};
use magctl_core::field::{FieldModel, UnitResponse};
use magctl_core::harness::{s_trajectory, FieldSetup};
use magctl_core::math::Vec2;
use magctl_core::nmpc::{solve, NmpcConfig, Problem};

fn field_eval(c: &mut Criterion) {
    let setup = FieldSetup::shared().expect("field setup");
    let point = Vec2::new(12.5, -7.25);
    let mut out = vec![UnitResponse::default(); setup.coils.len()];
    let mut group = c.benchmark_group("unit_responses");
    group.bench_function("zernike", |b| {
        b.iter(|| setup.zernike.unit_responses(black_box(point), &mut out, true).unwrap())
    });
    group.bench_function("lookup", |b| {
        b.iter(|| setup.lookup.unit_responses(black_box(point), &mut out, true).unwrap())
    });
    group.finish();
}

fn nmpc_solve(c: &mut Criterion) {
    let setup = FieldSetup::shared().expect("field setup");
    let params = RobotParams::magnet_robot();
    let config = NmpcConfig::closed_loop(setup.coils.len());
    let traj = s_trajectory(40.0, 43.0, config.dt).unwrap();
    let targets = traj.window(100, config.horizon + 1);
    let start = targets[0];
    let initial = RobotState::at_rest(Pose::new(start.x + 1.0, start.y - 1.0, start.theta));
    let previous = vec![0.0; setup.coils.len()];
    let mut group = c.benchmark_group("nmpc_cold_solve");
    group.sample_size(20);
    for (name, model) in [
        ("zernike", setup.zernike.clone() as std::sync::Arc<dyn FieldModel>),
        ("lookup", setup.lookup.clone()),
    ] {
        let problem = Problem {
            model: model.as_ref(),
            params: &params,
            config: &config,
            initial,
            targets: &targets,
            previous: &previous,
        };
        group.bench_function(name, |b| b.iter(|| solve(black_box(&problem), None).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, field_eval, nmpc_solve);
criterion_main!(benches);
