use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use retrac_bench::toy_fixture;
use retrac_core::attribution::{AttributionConfig, Attributor, Method};
use retrac_core::model::LossMetric;
use retrac_core::rng;
use retrac_core::trainer::Replayer;

fn loss_and_grad(c: &mut Criterion) {
    let f = toy_fixture();
    let params = &f.run.checkpoints.last().unwrap().params;
    let x0 = f.data.sample(0).unwrap();
    let eps = rng::gaussian(3, x0.len());
    c.bench_function("loss_and_grad", |b| {
        b.iter(|| {
            f.model
                .loss_and_grad(params, &f.schedule, x0, 500, &eps, LossMetric::default())
                .unwrap()
        })
    });
}

fn test_gradient(c: &mut Criterion) {
    let f = toy_fixture();
    let replayer = Replayer::new(&f.model, &f.schedule, &f.data);
    let checkpoint = f.run.checkpoints.last().unwrap();
    let z = f.data.sample(3).unwrap();
    let mut group = c.benchmark_group("test_gradient");
    group.sample_size(10);
    for n_t in [10, 50, 1000] {
        let cfg = AttributionConfig {
            n_t,
            ..AttributionConfig::new(Method::Retrac)
        };
        let att = Attributor::new(replayer, &f.run.log, vec![checkpoint], cfg).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n_t), &n_t, |b, _| {
            b.iter(|| att.test_gradient(z, checkpoint, true).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, loss_and_grad, test_gradient);
criterion_main!(benches);
