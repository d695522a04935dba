use criterion::{criterion_group, criterion_main, Criterion};
use valveseg::fcn::predict;
use valveseg::tensor::Sgd;
use valveseg_bench::{batch, content_net, train_step};

fn network(c: &mut Criterion) {
    let b = batch(8, 64);
    let net = content_net();
    c.bench_function("content_net_forward_b8_64px", |bn| {
        bn.iter(|| predict(&net.forward(&b.images, Some(&b.planes)).unwrap()))
    });
    let mut net = content_net();
    let mut opt = Sgd::new(0.01, 0.9);
    c.bench_function("content_net_train_step_b8_64px", |bn| {
        bn.iter(|| train_step(&mut net, &mut opt, &b))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = network
}
criterion_main!(benches);
