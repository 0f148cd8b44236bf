use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use nalgebra::Vector3;
use std::hint::black_box;

use rvc_core::eye_sim::TissueState;
use rvc_core::geometry::{so3_exp, so3_log, RotVec};
use rvc_core::oct::{auto_plane_at_tip, render_bscan, OctConfig};
use rvc_core::robot::{forward_kinematics, jacobian, Key, RobotModel};
use rvc_core::{ClientMessage, Scenario, SimConfig, Simulation};

fn ticks(c: &mut Criterion) {
    let mut g = c.benchmark_group("tick");
    g.throughput(Throughput::Elements(1000));
    g.bench_function("navigate_1000", |b| {
        b.iter_batched(
            || {
                let mut sim = Simulation::new(Scenario::default(), SimConfig::default(), 1).unwrap();
                sim.apply(&ClientMessage::key_down(Key::Left)).unwrap();
                sim.apply(&ClientMessage::key_down(Key::D)).unwrap();
                sim
            },
            |mut sim| {
                for _ in 0..1000 {
                    black_box(sim.tick());
                }
                sim
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn bscan(c: &mut Criterion) {
    let scenario = Scenario::default();
    let tissue = TissueState::new(&scenario);
    let plane = auto_plane_at_tip(&scenario.target_wall_point().0, &scenario).unwrap();
    let cfg = OctConfig::default();
    c.bench_function("render_bscan", |b| {
        let mut tick = 0;
        b.iter(|| {
            tick += 1;
            black_box(render_bscan(&scenario, &tissue, None, &plane, &cfg, 7, tick, 0.0))
        })
    });
}

fn kinematics(c: &mut Criterion) {
    let model = RobotModel::default();
    // The starting pose of a trial.
    let q = Simulation::new(Scenario::default(), SimConfig::default(), 0)
        .unwrap()
        .joints();
    c.bench_function("forward_kinematics", |b| {
        b.iter(|| forward_kinematics(black_box(&q), &model))
    });
    c.bench_function("jacobian", |b| b.iter(|| jacobian(black_box(&q), &model)));
    let r = so3_exp(&RotVec(Vector3::new(0.4, -1.1, 2.0)));
    c.bench_function("so3_log", |b| b.iter(|| so3_log(black_box(&r))));
}

criterion_group!(benches, ticks, bscan, kinematics);
criterion_main!(benches);
