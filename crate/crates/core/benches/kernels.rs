use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use mlbin::kernels::{ml_dot_bitplane, ml_dot_integer, DotPath, PreparedMatrix};
use mlbin::quant::MultiLevelTensor;
use mlbin::tensor::{pack_signs, xnor_popcount_dot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn xnor(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("xnor_popcount_dot");
    for n in [64usize, 1024, 4096] {
        let a: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (pa, pb) = (pack_signs(&a).unwrap(), pack_signs(&b).unwrap());
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| xnor_popcount_dot(black_box(&pa), black_box(&pb)).unwrap())
        });
    }
    g.finish();
}

fn ml_dot(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = c.benchmark_group("ml_dot_k256");
    for levels in [1u32, 3, 5] {
        let x = MultiLevelTensor::quantize(vec![256], &values(&mut rng, 256), levels, -1).unwrap();
        let w = MultiLevelTensor::quantize(vec![256], &values(&mut rng, 256), levels, -2).unwrap();
        g.bench_with_input(BenchmarkId::new("bitplane", levels), &levels, |bench, _| {
            bench.iter(|| ml_dot_bitplane(black_box(&x), black_box(&w)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("integer", levels), &levels, |bench, _| {
            bench.iter(|| ml_dot_integer(black_box(&x), black_box(&w)).unwrap())
        });
    }
    g.finish();
}

fn matvec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (rows, cols) = (128usize, 128usize);
    let w = MultiLevelTensor::quantize(vec![rows, cols], &values(&mut rng, rows * cols), 5, -2).unwrap();
    let x = MultiLevelTensor::quantize(vec![cols], &values(&mut rng, cols), 5, -1).unwrap();
    let prepared = PreparedMatrix::new(&w).unwrap();
    let mut g = c.benchmark_group("matvec_128x128_5x5");
    g.bench_function("bitplane", |b| b.iter(|| prepared.matvec(black_box(&x), None, DotPath::Bitplane).unwrap()));
    g.bench_function("integer", |b| b.iter(|| prepared.matvec(black_box(&x), None, DotPath::Integer).unwrap()));
    g.finish();
}

criterion_group!(benches, xnor, ml_dot, matvec);
criterion_main!(benches);
