use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use fedvox::models::{build_model, ArchName, ArchSpec, TransferMode};
use fedvox::nn::Part;
use fedvox::par::Exec;
use fedvox::seed;

const BATCH: usize = 16;
const SIZE: usize = 64;

fn inputs() -> Vec<Vec<f32>> {
    let mut rng = seed::rng(7);
    (0..BATCH).map(|_| (0..SIZE * SIZE).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect()
}

fn exec_paths(c: &mut Criterion) {
    let xs = inputs();
    let refs: Vec<&[f32]> = xs.iter().map(|x| x.as_slice()).collect();
    let labels: Vec<usize> = (0..BATCH).map(|i| i % 2).collect();
    for name in ArchName::ALL {
        let spec = ArchSpec { input_size: SIZE, input_pool: 1, param_budget: 0, ..ArchSpec::default_for(name) };
        let mut model = build_model(&spec, 1).unwrap();
        model.set_transfer_mode(TransferMode::FullFinetune);

        let mut group = c.benchmark_group(format!("grads/{name}"));
        group.sample_size(10);
        for (label, exec) in [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)] {
            group.bench_with_input(BenchmarkId::from_parameter(label), &exec, |b, &exec| {
                b.iter(|| model.net.loss_and_grads(&model.params, Part::Full, &refs, &labels, exec).unwrap())
            });
        }
        group.finish();

        let mut group = c.benchmark_group(format!("logits/{name}"));
        group.sample_size(10);
        for (label, exec) in [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)] {
            group.bench_with_input(BenchmarkId::from_parameter(label), &exec, |b, &exec| b.iter(|| model.logits(&refs, exec).unwrap()));
        }
        group.finish();
    }
}

criterion_group!(benches, exec_paths);
criterion_main!(benches);
