use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gta_core::costmodel::plan_cost;
use gta_core::mapper::plan;
use gta_core::precision::{limb_multiply, DataType};
use gta_core::scheduler::{schedule, ScheduleOptions};
use gta_core::syssim::simulate;
use gta_core::workloads::catalog;
use gta_core::{ArrayShape, Dataflow, GemmOperands, GtaConfig, Knobs, PGemmOp, Timing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn arithmetic(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [DataType::Int16, DataType::Fp32, DataType::Int64] {
        let spec = kind.spec();
        let max = spec.max_magnitude() as i128;
        c.bench_function(&format!("limb_multiply/{kind}"), |b| {
            b.iter_batched(
                || (rng.gen_range(-max..=max), rng.gen_range(-max..=max)),
                |(x, y)| limb_multiply(x, y, spec).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

fn simulator(c: &mut Criterion) {
    let op: PGemmOp = "M=32,N=32,K=32,prec=int16".parse().unwrap();
    let data = GemmOperands::random(&op, &mut ChaCha8Rng::seed_from_u64(2));
    let shape = ArrayShape::of_pes(32, 32);
    for df in Dataflow::ALL {
        let p = plan(&op, &shape, df, Knobs::default()).unwrap();
        c.bench_function(&format!("simulate/32x32x32-int16/{df}"), |b| {
            b.iter(|| simulate(&op, &data, &shape, df, &p).unwrap())
        });
    }
}

fn cost_model(c: &mut Criterion) {
    let op: PGemmOp = "M=729,N=256,K=2400,prec=int8".parse().unwrap();
    let shape = ArrayShape::of_pes(32, 32);
    let p = plan(&op, &shape, Dataflow::Os, Knobs::default()).unwrap();
    c.bench_function("plan_cost/alexnet-conv2", |b| b.iter(|| plan_cost(black_box(&p), Timing::default())));
}

fn scheduler(c: &mut Criterion) {
    let cfg = GtaConfig::default();
    let options = ScheduleOptions::default();
    let workloads = catalog();
    let conv2 = workloads
        .iter()
        .find(|w| w.name == "ALI")
        .and_then(|w| w.gemms().find(|(l, _)| *l == "conv2"))
        .map(|(_, g)| *g)
        .unwrap();
    let mut group = c.benchmark_group("schedule");
    group.sample_size(10);
    group.bench_function("alexnet-conv2", |b| b.iter(|| schedule(&conv2, &cfg, &options).unwrap()));
    group.finish();
}

criterion_group!(benches, arithmetic, simulator, cost_model, scheduler);
criterion_main!(benches);
