use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use valveseg::tensor::{conv2d, conv2d_backward, transposed_conv2d, ConvGeometry, Tensor};

fn filled(shape: [usize; 4]) -> Tensor<f32> {
    Tensor::from_fn(shape, |[n, c, y, x]| {
        ((n * 31 + c * 17 + y * 7 + x) % 13) as f32 / 13.0 - 0.5
    })
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for (cin, cout, size, stride) in [(3, 16, 64, 1), (16, 16, 64, 2), (32, 32, 32, 1), (64, 128, 16, 2)] {
        let x = filled([8, cin, size, size]);
        let w = filled([cout, cin, 3, 3]);
        let b = vec![0.0; cout];
        let geom = ConvGeometry::new(stride, 1);
        let id = format!("{cin}->{cout}@{size}/s{stride}");
        group.bench_function(BenchmarkId::new("forward", &id), |bn| {
            bn.iter(|| conv2d(black_box(&x), &w, &b, geom).unwrap())
        });
        let g = conv2d(&x, &w, &b, geom).unwrap();
        group.bench_function(BenchmarkId::new("backward", &id), |bn| {
            bn.iter(|| conv2d_backward(black_box(&x), &w, &g, geom, true).unwrap())
        });
    }
    group.finish();
}

fn upsample(c: &mut Criterion) {
    let x = filled([8, 4, 32, 32]);
    let w = filled([4, 4, 4, 4]);
    c.bench_function("transposed_conv2d_4x4_s2", |bn| {
        bn.iter(|| transposed_conv2d(black_box(&x), &w, ConvGeometry::new(2, 1)).unwrap())
    });
}

criterion_group!(benches, conv, upsample);
criterion_main!(benches);
