//! Throughput of the search workloads, parallel (rayon) against the
//! sequential fallback. Build with `--no-default-features` to drop rayon
//! from the binary entirely; this suite compares both code paths in one
//! run.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use envadapt::gasearch::{candidate_space, FitnessEvaluator, OffloadPattern};
use envadapt::minilang::analyze::analyze;
use envadapt::minilang::{parse, BlockLib, InputBinding};
use envadapt::par;
use envadapt::patterndb::CostFormula;
use envadapt::perfsim::CostModel;
use std::collections::BTreeMap;
use std::path::Path;

fn model() -> CostModel {
    CostModel {
        cpu_op_cost: 1.0,
        gpu_speedup: 10.0,
        kernel_launch: 100.0,
        xfer_latency: 50.0,
        xfer_per_byte: 0.01,
        elem_bytes: 8.0,
        accel_formulas: BTreeMap::<String, CostFormula>::new(),
        noise_sigma: 0.0,
        noise_seed: 0,
    }
}

fn load(name: &str) -> envadapt::minilang::Ast {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures/corpus")
        .join(format!("{name}.elc"));
    parse(name, &std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Evaluate every pattern of the full space, with and without rayon.
fn bench_exhaustive_scan(c: &mut Criterion) {
    let ast = load("ga_a");
    let analysis = analyze(&ast);
    let space = candidate_space(&analysis);
    let n = space.len();
    let input = InputBinding::empty();
    let lib = BlockLib::empty();
    let m = model();
    let mut group = c.benchmark_group("exhaustive_scan");
    group.sample_size(10);
    for (label, parallel) in [("parallel", true), ("sequential", false)] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &parallel, |b, &p| {
            b.iter(|| {
                // Fresh evaluator per iteration: the memo must not amortize
                // across samples.
                let ev = FitnessEvaluator::new(&ast, &analysis, &m, &input, &lib, None).unwrap();
                let masks: Vec<u64> = (0..1u64 << n).collect();
                let times = if p {
                    par::map_collect(&masks, |mask| {
                        ev.fitness(&OffloadPattern::from_mask(*mask, space.loop_map.clone()))
                    })
                } else {
                    par::map_collect_seq(&masks, |mask| {
                        ev.fitness(&OffloadPattern::from_mask(*mask, space.loop_map.clone()))
                    })
                };
                times.iter().cloned().fold(f64::INFINITY, f64::min)
            })
        });
    }
    group.finish();
}

/// One GA generation's worth of fitness evaluations.
fn bench_population_eval(c: &mut Criterion) {
    let ast = load("ga_c");
    let analysis = analyze(&ast);
    let space = candidate_space(&analysis);
    let n = space.len();
    let input = InputBinding::empty();
    let lib = BlockLib::empty();
    let m = model();
    let population: Vec<OffloadPattern> = (0..64u64)
        .map(|i| OffloadPattern::from_mask(i.wrapping_mul(0x9e37_79b9), space.loop_map.clone()))
        .map(|p| OffloadPattern::new(p.bits[..n].to_vec(), space.loop_map.clone()))
        .collect();
    let mut group = c.benchmark_group("population_eval");
    group.sample_size(10);
    for (label, parallel) in [("parallel", true), ("sequential", false)] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &parallel, |b, &p| {
            b.iter(|| {
                let ev = FitnessEvaluator::new(&ast, &analysis, &m, &input, &lib, None).unwrap();
                if p {
                    par::map_collect(&population, |pat| ev.fitness(pat))
                } else {
                    par::map_collect_seq(&population, |pat| ev.fitness(pat))
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_exhaustive_scan, bench_population_eval);
criterion_main!(benches);
