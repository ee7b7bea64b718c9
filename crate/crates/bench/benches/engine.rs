use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fedtopo_core::nn::{self, default_arch};
use fedtopo_core::{ParamSet, Tensor};

fn batch(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    // cheap deterministic pixels in [0, 1)
    let data = (0..n).map(|i| ((i * 7919) % 255) as f32 / 255.0).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn engine(c: &mut Criterion) {
    let arch = default_arch();
    let params: ParamSet<f32> = nn::init_params(&arch, 0);
    let mut g = c.benchmark_group("engine");
    for size in [1usize, 32, 128] {
        let x = batch(&arch.input().batched(size));
        let labels: Vec<u8> = (0..size).map(|i| (i % 10) as u8).collect();
        g.throughput(Throughput::Elements(size as u64));
        g.bench_with_input(BenchmarkId::new("forward", size), &x, |b, x| {
            b.iter(|| nn::forward(&arch, &params, x).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("loss_and_grad", size), &x, |b, x| {
            b.iter(|| nn::loss_and_grad(&arch, &params, x, &labels).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, engine);
criterion_main!(benches);
