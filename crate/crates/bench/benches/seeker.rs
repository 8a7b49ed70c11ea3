use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dpnes_core::mechanism::stochastic_quantize;
use dpnes_core::seeker::{BroadcastPolicy, Init, Seeker};
use dpnes_core::{Channel, MechanismParams, QuadraticGame, Schedules, Streams, Topology};
use std::hint::black_box;

fn engine(c: &mut Criterion) {
    let game = QuadraticGame::energy().instance().unwrap();
    let topo = Topology::ring(5, 0.5).unwrap();
    let s = Schedules::energy();
    let private = Seeker::new(&game, &topo, &s, BroadcastPolicy::Private(MechanismParams::energy())).unwrap();

    c.bench_function("run_1500_private", |b| b.iter(|| private.run(black_box(1500), &Init::Uniform, 1, 1).unwrap()));

    let streams = Streams::new(1);
    let x0 = Init::Uniform.resolve(&game, &streams).unwrap();
    c.bench_function("step_private", |b| {
        b.iter_batched(
            || {
                let mut players = private.init_players(&x0).unwrap();
                private.step(&mut players, 0, &streams).unwrap();
                players
            },
            |mut players| private.step(&mut players, black_box(1), &streams).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn mechanism(c: &mut Criterion) {
    let streams = Streams::new(3);
    c.bench_function("quantize_1000", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for k in 0..1000 {
                acc += stochastic_quantize(black_box(22.5), 15.0, streams.uniform(0, Channel::Quantizer, k))
                    .unwrap()
                    .output;
            }
            acc
        })
    });
}

fn topology(c: &mut Criterion) {
    c.bench_function("topology_ring_50", |b| b.iter(|| Topology::ring(black_box(50), 0.5).unwrap()));
    c.bench_function("ne_oracle", |b| {
        let q = QuadraticGame::energy();
        b.iter(|| black_box(&q).ne_oracle().unwrap())
    });
}

criterion_group!(benches, engine, mechanism, topology);
criterion_main!(benches);
