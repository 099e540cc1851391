use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rectiflow::config::{Config, TaskKind};
use rectiflow::flow::transport;
use rectiflow::nets::{Activation, VelocityFieldConfig};
use rectiflow::pipeline::Trainer;
use rectiflow::{Direction, SeededRng, Tape, VelocityField};

fn matmul_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_backward");
    for n in [32usize, 128, 256] {
        let mut rng = SeededRng::new(1);
        let a = rng.normal_tensor(&[n, n]);
        let b = rng.normal_tensor(&[n, n]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.leaf(a.clone()).unwrap();
                let w = tape.leaf(b.clone()).unwrap();
                let y = tape.matmul(x, w).unwrap();
                let loss = tape.sum_sq(y).unwrap();
                black_box(tape.backward(loss).unwrap());
            })
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("training_step");
    group.sample_size(20);
    let mut style = Config::for_task(TaskKind::StyleTransfer);
    style.set("corpus_size", "1000").unwrap();
    for (name, config) in [("gauss2d", Config::for_task(TaskKind::Gauss2d)), ("style_transfer", style)] {
        let mut trainer = Trainer::new(&config).unwrap();
        group.bench_function(name, |bench| bench.iter(|| black_box(trainer.step_once().unwrap())));
    }
    group.finish();
}

fn euler_transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("transport_256x2");
    let mut rng = SeededRng::new(3);
    let config = VelocityFieldConfig { latent_dim: 2, hidden_dims: vec![256, 256], time_embed_dim: 32, activation: Activation::Relu };
    let field = VelocityField::new(config, &mut rng);
    let start = rng.normal_tensor(&[256, 2]);
    for steps in [1usize, 10, 100] {
        group.bench_with_input(BenchmarkId::from_parameter(steps), &steps, |bench, &steps| {
            bench.iter(|| black_box(transport(&field, &start, Direction::Forward, steps).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul_backward, training_step, euler_transport);
criterion_main!(benches);
