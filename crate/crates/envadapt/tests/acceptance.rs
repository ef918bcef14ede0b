//! Acceptance suite. Each test enforces one release criterion at its stated
//! tolerance and prints a single judgment line.

mod common;

use common::*;
use envadapt::gasearch::{
    brute_force, candidate_space, run_ga, FitnessEvaluator, GaConfig, OffloadPattern,
};
use envadapt::lifecycle::{operate, LogEntry, OperatePolicy, ProposalKind, WorkloadTrace};
use envadapt::minilang::analyze::analyze;
use envadapt::minilang::{interpret, parse, InterpOptions};
use envadapt::patterndb::{match_blocks, substitute, PatternDb};
use envadapt::perfsim::simulate;
use envadapt::placement::{
    evaluate_placement, solve_placement, AppModel, AppModelFile, Component, Flow, LinkSpec, Mode,
    NodeKind, NodeSpec, PlaceError, Topology,
};
use envadapt::resource::{compute_ratio, plan_at_k, size_resources, BaseTimes, ScalingModel};
use envadapt::shadow::shadow_run;
use envadapt::transfer::{compute_directives, insert_directives, naive_directives};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

fn pass(line: &str) {
    println!("[PASS] {line}");
}

/// Criterion 1: simulated offloaded output traces are bit-identical to the
/// reference interpreter across the corpus, all GA-explored patterns, and
/// ten fuzzed inputs each. Exact; under two minutes.
#[test]
fn criterion_1_semantic_preservation() {
    let started = Instant::now();
    let lib = corpus_lib();
    let model = corpus_model();
    let corpus = load_corpus();
    assert!(corpus.len() >= 20, "corpus must hold at least 20 programs");
    let mut checked = 0u64;
    for (name, ast) in &corpus {
        for pattern in explored_patterns(ast, &lib, &model) {
            let dirs = compute_directives(ast, &pattern).unwrap();
            let annotated = insert_directives(ast, &dirs).unwrap();
            for seed in 0..10 {
                let input = fuzz_input(ast, 1000 + seed);
                let reference = interpret(ast, &input, &lib, &InterpOptions::default())
                    .unwrap_or_else(|e| panic!("{name}: {e}"));
                let report = simulate(&annotated, &pattern, &model, &input, &lib)
                    .unwrap_or_else(|e| panic!("{name}: {e}"));
                assert_eq!(
                    report.output, reference.trace,
                    "{name} {:?} seed {seed}: simulated trace diverged",
                    pattern.bits
                );
                checked += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "criterion 1 overran its budget: {elapsed:?}"
    );
    pass(&format!(
        "criterion 1: semantic preservation exact on {} corpus programs ({checked} runs) in {elapsed:.1?}",
        corpus.len()
    ));
}

/// Criterion 2: on five programs with 8-12 offloadable loops, the GA lands
/// within 5% of the brute-force optimum in at least 90% of 20 seeds and
/// never beats it. Under five minutes.
#[test]
fn criterion_2_ga_vs_brute_force() {
    let started = Instant::now();
    let lib = corpus_lib();
    let model = corpus_model();
    let programs = ["ga_a", "ga_b", "ga_c", "ga_d", "ga_e"];
    for name in programs {
        let text = std::fs::read_to_string(corpus_dir().join(format!("{name}.elc"))).unwrap();
        let ast = parse(name, &text).unwrap();
        let analysis = analyze(&ast);
        let space = candidate_space(&analysis);
        assert!(
            (8..=12).contains(&space.len()),
            "{name}: expected 8-12 offloadable loops, got {}",
            space.len()
        );
        let input = fuzz_input(&ast, 0);
        let evaluator =
            FitnessEvaluator::new(&ast, &analysis, &model, &input, &lib, None).unwrap();
        let (_, best_time) = brute_force(&space, &evaluator, 20).unwrap();
        let mut within = 0;
        for seed in 0..20u64 {
            let cfg = GaConfig {
                population: 16,
                generations: 20,
                seed,
                ..Default::default()
            };
            let result = run_ga(&space, &cfg, &evaluator).unwrap();
            assert!(
                result.best_time >= best_time,
                "{name} seed {seed}: GA reported a better-than-optimal time"
            );
            if result.best_time <= best_time * 1.05 {
                within += 1;
            }
        }
        assert!(
            within >= 18,
            "{name}: only {within}/20 seeds within 5% of the optimum"
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 300,
        "criterion 2 overran its budget: {elapsed:?}"
    );
    pass(&format!(
        "criterion 2: GA within 5% of brute force on 5 programs x 20 seeds in {elapsed:.1?}"
    ));
}

/// Criterion 3: on the nested-loop family, hoisted transfers fire exactly
/// 1/k as often as the per-loop baseline for every transferred variable,
/// and total simulated time strictly improves.
#[test]
fn criterion_3_transfer_hoisting() {
    let lib = corpus_lib();
    let model = corpus_model();
    for k in [10u64, 50, 100] {
        let text =
            std::fs::read_to_string(corpus_dir().join(format!("nested_hoist_{k}.elc"))).unwrap();
        let ast = parse("nested", &text).unwrap();
        let analysis = analyze(&ast);
        let inner = analysis
            .iter()
            .find(|l| l.depth == 1 && l.parallelizable)
            .expect("inner offloadable loop");
        let space = candidate_space(&analysis);
        let bits = space.loop_map.iter().map(|l| *l == inner.id).collect();
        let pattern = OffloadPattern::new(bits, space.loop_map.clone());
        let hoisted = compute_directives(&ast, &pattern).unwrap();
        let naive = naive_directives(&ast, &pattern).unwrap();
        // Identical (kind, variable) multisets, so per-variable counts are
        // the directive execution counts.
        let keys = |ds: &[envadapt::transfer::TransferDirective]| {
            let mut v: Vec<(envadapt::transfer::TransferKind, String)> =
                ds.iter().map(|d| (d.kind, d.var.clone())).collect();
            v.sort();
            v
        };
        assert_eq!(keys(&hoisted), keys(&naive), "trip {k}: variable sets differ");
        let input = fuzz_input(&ast, 3);
        let h = simulate(
            &insert_directives(&ast, &hoisted).unwrap(),
            &pattern,
            &model,
            &input,
            &lib,
        )
        .unwrap();
        let n = simulate(
            &insert_directives(&ast, &naive).unwrap(),
            &pattern,
            &model,
            &input,
            &lib,
        )
        .unwrap();
        assert_eq!(
            h.transfer_events as usize,
            hoisted.len(),
            "trip {k}: each hoisted directive must fire exactly once"
        );
        assert_eq!(
            n.transfer_events,
            h.transfer_events * k,
            "trip {k}: baseline must fire exactly k per variable"
        );
        assert!(
            h.total < n.total,
            "trip {k}: hoisting must strictly improve total time"
        );
        assert_eq!(h.output, n.output);
    }
    pass("criterion 3: hoisted transfers fire exactly 1/k of the baseline for k in {10, 50, 100}");
}

/// Criterion 4: the stale-read-faulting shadow interpreter raises zero
/// faults across corpus x explored patterns x fuzzed inputs, with traces
/// equal to the reference interpreter.
#[test]
fn criterion_4_shadow_memory_safety() {
    let lib = corpus_lib();
    let model = corpus_model();
    let mut runs = 0u64;
    for (name, ast) in load_corpus() {
        for pattern in explored_patterns(&ast, &lib, &model) {
            let dirs = compute_directives(&ast, &pattern).unwrap();
            let annotated = insert_directives(&ast, &dirs).unwrap();
            for seed in 0..10 {
                let input = fuzz_input(&ast, 2000 + seed);
                let reference =
                    interpret(&ast, &input, &lib, &InterpOptions::default()).unwrap();
                let shadow = shadow_run(&annotated, &pattern, &input, &lib)
                    .unwrap_or_else(|e| panic!("{name}: {e}"));
                assert!(
                    shadow.faults.is_empty(),
                    "{name} {:?} seed {seed}: stale reads {:?}",
                    pattern.bits,
                    shadow.faults
                );
                assert_eq!(
                    shadow.trace, reference.trace,
                    "{name} {:?} seed {seed}: shadow trace diverged",
                    pattern.bits
                );
                runs += 1;
            }
        }
    }
    pass(&format!(
        "criterion 4: zero shadow faults across {runs} corpus runs"
    ));
}

/// Criterion 5: the engineered ratio examples reproduce (4,1) and (8,2);
/// sizing keeps the ratio exactly and picks the minimal multiplier; the
/// post-sizing imbalance stays within 2x when caps do not bind. Checked on
/// 1000 random instances against exhaustive scans.
#[test]
fn criterion_5_resource_ratio() {
    let model = ScalingModel {
        max_cpu_units: 64,
        max_device_units: 16,
        price_cpu: 1.0,
        price_device: 4.0,
        ..Default::default()
    };
    // The illustrative pair and its doubling.
    let ratio = compute_ratio(400.0, 100.0, &model).unwrap();
    assert_eq!((ratio.cpu_units, ratio.device_units), (4, 1));
    let base = BaseTimes {
        cpu_time: 800.0,
        device_time: 200.0,
        transfer_time: 0.0,
    };
    let ratio2 = compute_ratio(base.cpu_time, base.device_time, &model).unwrap();
    let plan = size_resources(&ratio2, 110.0, 1e12, &model, &base).unwrap();
    assert_eq!((plan.cpu_units, plan.device_units), (8, 2));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let max_c = rng.gen_range(4u32..32);
        let max_g = rng.gen_range(4u32..16);
        let m = ScalingModel {
            max_cpu_units: max_c,
            max_device_units: max_g,
            price_cpu: rng.gen_range(1u32..5) as f64,
            price_device: rng.gen_range(1u32..9) as f64,
            ..Default::default()
        };
        let cpu = rng.gen_range(1u32..2000) as f64;
        let dev = rng.gen_range(1u32..2000) as f64;
        let r = compute_ratio(cpu, dev, &m).unwrap();
        // Log-imbalance optimality against a full grid scan.
        let imb = |c: u32, g: u32| ((cpu / c as f64) / (dev / g as f64)).ln().abs();
        let chosen = imb(r.cpu_units, r.device_units);
        for c in 1..=max_c {
            for g in 1..=max_g {
                assert!(
                    chosen <= imb(c, g) + 1e-9,
                    "case {case}: ({},{}) beaten by ({c},{g})",
                    r.cpu_units,
                    r.device_units
                );
            }
        }
        // Balance within 2x whenever the chosen pair sits inside the caps.
        if r.cpu_units < max_c && r.device_units < max_g {
            let hi = (cpu / r.cpu_units as f64).max(dev / r.device_units as f64);
            let lo = (cpu / r.cpu_units as f64).min(dev / r.device_units as f64);
            assert!(
                hi / lo <= 2.0 + 1e-9,
                "case {case}: imbalance {} at interior optimum",
                hi / lo
            );
        }
        // Sizing: ratio preservation and k-minimality against a k-scan.
        let base = BaseTimes {
            cpu_time: cpu,
            device_time: dev,
            transfer_time: rng.gen_range(0u32..50) as f64,
        };
        let target = rng.gen_range(1u32..1500) as f64;
        match size_resources(&r, target, 1e12, &m, &base) {
            Ok(plan) => {
                assert_eq!(
                    plan.cpu_units * r.device_units,
                    plan.device_units * r.cpu_units,
                    "case {case}: ratio not preserved"
                );
                assert!(plan.est_latency <= target);
                for smaller in 1..plan.k {
                    let p = plan_at_k(&r, smaller, &m, &base);
                    assert!(
                        p.est_latency > target,
                        "case {case}: k={} already satisfies the target",
                        smaller
                    );
                }
            }
            Err(_) => {
                let mut k = 1;
                while r.cpu_units * k <= m.max_cpu_units && r.device_units * k <= m.max_device_units
                {
                    let p = plan_at_k(&r, k, &m, &base);
                    assert!(
                        p.est_latency > target,
                        "case {case}: infeasible verdict but k={k} fits"
                    );
                    k += 1;
                }
            }
        }
    }
    pass("criterion 5: (4,1) and (8,2) reproduced; ratio optimality, preservation, and k-minimality hold on 1000 random instances");
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Topology, AppModel, f64) {
    let n_nodes = rng.gen_range(2usize..=6);
    let kinds = [NodeKind::Cloud, NodeKind::Edge, NodeKind::Gw];
    let nodes: Vec<NodeSpec> = (0..n_nodes)
        .map(|i| NodeSpec {
            id: format!("n{i}"),
            kind: kinds[rng.gen_range(0..kinds.len())],
            capacity: 100.0,
            unit_price: rng.gen_range(1u32..9) as f64,
            available: rng.gen_range(1u32..8) as f64,
        })
        .collect();
    // Random tree keeps the graph connected; extra links add shortcuts.
    let mut links = Vec::new();
    for i in 1..n_nodes {
        let j = rng.gen_range(0..i);
        links.push(LinkSpec {
            a: format!("n{i}"),
            b: format!("n{j}"),
            latency: rng.gen_range(1u32..40) as f64 * 0.01,
            bandwidth: rng.gen_range(1u32..10) as f64 * 1e5,
        });
    }
    if n_nodes > 2 && rng.gen_bool(0.5) {
        links.push(LinkSpec {
            a: "n0".into(),
            b: format!("n{}", n_nodes - 1),
            latency: rng.gen_range(1u32..40) as f64 * 0.01,
            bandwidth: rng.gen_range(1u32..10) as f64 * 1e5,
        });
    }
    let topo = Topology { nodes, links };
    let n_comps = rng.gen_range(1usize..=3);
    let components: Vec<Component> = (0..n_comps)
        .map(|i| Component {
            id: format!("c{i}"),
            demand: rng.gen_range(1u32..4) as f64,
            work: rng.gen_range(100u32..5000) as f64,
        })
        .collect();
    let mut flows = Vec::new();
    for i in 1..n_comps {
        flows.push(Flow {
            src: format!("c{}", i - 1),
            dst: format!("c{i}"),
            bytes_per_request: rng.gen_range(1u32..100) as f64 * 1000.0,
        });
    }
    let mut pinned = BTreeMap::new();
    if rng.gen_bool(0.3) {
        pinned.insert("c0".to_string(), format!("n{}", rng.gen_range(0..n_nodes)));
    }
    let app = AppModel {
        components,
        flows,
        pinned,
    };
    let op_cost = 1e-4;
    (topo, app, op_cost)
}

/// Oracle: enumerate every assignment by counting, evaluate each, keep the
/// best under the same mode key.
fn oracle_solve(
    topo: &Topology,
    app: &AppModel,
    mode: Mode,
    op_cost: f64,
) -> Result<(BTreeMap<String, String>, f64, f64), PlaceError> {
    let ids: Vec<String> = {
        let mut v: Vec<String> = topo.nodes.iter().map(|n| n.id.clone()).collect();
        v.sort();
        v
    };
    let eligible: Vec<Vec<String>> = app
        .components
        .iter()
        .map(|c| match app.pinned.get(&c.id) {
            Some(n) => vec![n.clone()],
            None => ids
                .iter()
                .filter(|n| topo.node(n).map(|s| s.kind != NodeKind::Device) == Some(true))
                .cloned()
                .collect(),
        })
        .collect();
    type BestEntry = ((f64, f64, Vec<String>), BTreeMap<String, String>, f64, f64);
    let mut counters = vec![0usize; app.components.len()];
    let mut best: Option<BestEntry> = None;
    loop {
        if eligible.iter().any(|e| e.is_empty()) {
            break;
        }
        let assign: BTreeMap<String, String> = app
            .components
            .iter()
            .zip(&counters)
            .map(|(c, i)| (c.id.clone(), eligible_at(&eligible, c, app, *i)))
            .collect();
        fn eligible_at(e: &[Vec<String>], c: &Component, app: &AppModel, i: usize) -> String {
            let idx = app.components.iter().position(|x| x.id == c.id).unwrap();
            e[idx][i].clone()
        }
        if let Ok((latency, _thr, cost)) = evaluate_placement(topo, app, &assign, op_cost) {
            let (objective, feasible) = match mode {
                Mode::MaxPerfUnderBudget(b) => (latency, cost <= b + 1e-9),
                Mode::MinCostUnderLatency(l) => (cost, latency <= l + 1e-9),
            };
            if feasible {
                let stack: Vec<String> = app
                    .components
                    .iter()
                    .map(|c| assign[&c.id].clone())
                    .collect();
                let key = (objective, cost, stack);
                let better = match &best {
                    None => true,
                    Some((k, ..)) => key < *k,
                };
                if better {
                    best = Some((key, assign, latency, cost));
                }
            }
        }
        // Advance the mixed-radix counter.
        let mut d = 0;
        loop {
            if d == counters.len() {
                return best
                    .map(|(_, a, l, c)| (a, l, c))
                    .ok_or(PlaceError::Infeasible);
            }
            counters[d] += 1;
            if counters[d] < eligible[d].len() {
                break;
            }
            counters[d] = 0;
            d += 1;
        }
    }
    best.map(|(_, a, l, c)| (a, l, c))
        .ok_or(PlaceError::Infeasible)
}

/// Criterion 6: the solver matches independent exhaustive enumeration on
/// 100 seeded random instances in both modes, and the shipped scenario
/// places the analysis component on the edge under the 0.5 bound.
#[test]
fn criterion_6_placement_exactness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..100 {
        let (topo, app, op_cost) = random_instance(&mut rng);
        let budget = rng.gen_range(1u32..40) as f64;
        let bound = rng.gen_range(1u32..300) as f64 * 0.01;
        for mode in [
            Mode::MaxPerfUnderBudget(budget),
            Mode::MinCostUnderLatency(bound),
        ] {
            let got = solve_placement(&topo, &app, mode, op_cost);
            let want = oracle_solve(&topo, &app, mode, op_cost);
            match (got, want) {
                (Ok(plan), Ok((assign, latency, cost))) => {
                    assert_eq!(plan.assign, assign, "case {case} {mode:?}");
                    assert_eq!(plan.latency, latency, "case {case} {mode:?}");
                    assert_eq!(plan.cost, cost, "case {case} {mode:?}");
                    match mode {
                        Mode::MaxPerfUnderBudget(b) => assert!(plan.cost <= b + 1e-9),
                        Mode::MinCostUnderLatency(l) => assert!(plan.latency <= l + 1e-9),
                    }
                }
                (Err(PlaceError::Infeasible), Err(PlaceError::Infeasible)) => {}
                (g, w) => panic!("case {case} {mode:?}: solver {g:?} vs oracle {w:?}"),
            }
        }
    }
    // Shipped scenario: the latency bound forces the edge even though the
    // cloud is cheaper.
    let topo = Topology::from_json(
        &std::fs::read_to_string(fixtures_dir().join("placement_demo/topology.json")).unwrap(),
    )
    .unwrap();
    let app = AppModelFile::from_json(
        &std::fs::read_to_string(fixtures_dir().join("placement_demo/appmodel.json")).unwrap(),
    )
    .unwrap()
    .resolve(2.0, 6000.0);
    let plan = solve_placement(&topo, &app, Mode::MinCostUnderLatency(0.5), 1e-4).unwrap();
    assert_eq!(plan.assign["analysis"], "edge");
    assert!(plan.latency <= 0.5);
    let relaxed = solve_placement(&topo, &app, Mode::MinCostUnderLatency(10.0), 1e-4).unwrap();
    assert_eq!(
        relaxed.assign["analysis"], "cloud",
        "without the bound the cheaper cloud must win"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "criterion 6 overran: {elapsed:?}");
    pass(&format!(
        "criterion 6: solver equals exhaustive enumeration on 100 instances x 2 modes; demo picks the edge ({elapsed:.1?})"
    ));
}

/// Criterion 7: the renamed transform matches at similarity >= 0.8, the
/// substitution preserves outputs on 50 fuzzed inputs, and the kernel beats
/// the loop nest at n=1024 under the shipped cost model.
#[test]
fn criterion_7_pattern_substitution() {
    let db = PatternDb::load(&fixtures_dir().join("demo/patterns.json")).unwrap();
    let lib = db.block_lib();
    let text = std::fs::read_to_string(corpus_dir().join("fft_handwritten.elc")).unwrap();
    let ast = parse("fft_handwritten", &text).unwrap();
    let matches = match_blocks(&ast, &db);
    let m = matches
        .iter()
        .find(|m| m.kernel_id == "fft_kernel_v1")
        .expect("renamed transform must match the registered pattern");
    assert!(
        m.similarity >= 0.8,
        "similarity {} below threshold",
        m.similarity
    );
    assert_eq!(m.size_elems, 1024);
    let substituted = substitute(&ast, m).unwrap();
    for seed in 0..50 {
        let input = fuzz_input(&ast, 3000 + seed);
        let a = interpret(&ast, &input, &lib, &InterpOptions::default()).unwrap();
        let b = interpret(&substituted, &input, &lib, &InterpOptions::default()).unwrap();
        assert_eq!(a.trace, b.trace, "seed {seed}: outputs changed");
    }
    // Simulated time: kernel formula against the interpreted loop nest.
    let model = corpus_model();
    let analysis = analyze(&ast);
    let zero = OffloadPattern::all_zero(candidate_space(&analysis).loop_map);
    let input = fuzz_input(&ast, 1);
    let before = simulate(&ast, &zero, &model, &input, &lib).unwrap();
    let sub_analysis = analyze(&substituted);
    let sub_zero = OffloadPattern::all_zero(candidate_space(&sub_analysis).loop_map);
    let after = simulate(&substituted, &sub_zero, &model, &input, &lib).unwrap();
    assert!(
        after.total < before.total,
        "kernel must beat the nest: {} vs {}",
        after.total,
        before.total
    );
    // Name-equal library call path matches at exactly 1.0.
    let call_text = std::fs::read_to_string(corpus_dir().join("fft_call.elc")).unwrap();
    let call_ast = parse("fft_call", &call_text).unwrap();
    let call_matches = match_blocks(&call_ast, &db);
    assert!(call_matches
        .iter()
        .any(|m| m.kernel_id == "fft_kernel_v1" && m.similarity == 1.0));
    pass(&format!(
        "criterion 7: renamed transform matched at {:.3}, outputs exact on 50 inputs, kernel {:.0} vs nest {:.0}",
        m.similarity, after.total, before.total
    ));
}

/// Criterion 8: the two-phase trace yields a hard-logic swap within one
/// window of the shift with >= 10% net improvement; the flat trace yields
/// zero proposals.
#[test]
fn criterion_8_reconfiguration_scenario() {
    let demo = fixtures_dir().join("demo");
    let loaded = envadapt::pipeline::load_env(&demo.join("pipeline_sqlnosql.json"), None, true)
        .unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut approve = |_: &envadapt::lifecycle::ReconfigProposal| true;
    envadapt::pipeline::run_full(loaded, out.path(), &mut approve).unwrap();
    let search = envadapt::pipeline::read_artifact(out.path(), "search.json", "t").unwrap();
    let resource = envadapt::pipeline::read_artifact(out.path(), "resource.json", "t").unwrap();
    let placement = envadapt::pipeline::read_artifact(out.path(), "placement.json", "t").unwrap();
    let build_state = || {
        let env = envadapt::pipeline::load_env(&demo.join("pipeline_sqlnosql.json"), None, true)
            .unwrap()
            .env;
        envadapt::pipeline::state_from_artifacts(env, &search, &resource, &placement).unwrap()
    };
    let policy = OperatePolicy {
        latency_threshold: 1.0,
        period: 50.0,
        window: 20,
        gain_bar: 0.1,
        auto_approve: true,
        penalty_resource: 0.0,
        penalty_placement: 5.0,
        penalty_soft: 1.0,
        penalty_hard: 2.0,
    };

    // Two-phase trace: sql-heavy then nosql-heavy, shift at t=25.
    let trace = WorkloadTrace::from_csv(
        &std::fs::read_to_string(demo.join("trace_shift.csv")).unwrap(),
    )
    .unwrap();
    let mut approve = |_: &envadapt::lifecycle::ReconfigProposal| true;
    let (log, final_state) = operate(build_state(), &trace, &policy, &mut approve).unwrap();
    let proposals: Vec<(f64, ProposalKind)> = log
        .events
        .iter()
        .filter_map(|e| match &e.entry {
            LogEntry::Proposal { kind, .. } => Some((e.time, *kind)),
            _ => None,
        })
        .collect();
    assert_eq!(proposals.len(), 1, "expected exactly one proposal: {proposals:?}");
    assert_eq!(proposals[0].1, ProposalKind::HardLogic);
    assert!(
        proposals[0].0 <= 25.0 + policy.window as f64,
        "swap proposed at t={}, more than one window after the shift",
        proposals[0].0
    );
    let applied: Vec<f64> = log
        .events
        .iter()
        .filter_map(|e| match &e.entry {
            LogEntry::Applied { .. } => Some(e.time),
            _ => None,
        })
        .collect();
    assert_eq!(applied.len(), 1);
    assert_eq!(final_state.code.active_kernel.as_deref(), Some("nosql_kernel_v1"));
    let penalties = log
        .events
        .iter()
        .filter(|e| matches!(e.entry, LogEntry::MigrationPenalty { .. }))
        .count();
    assert_eq!(penalties, 1, "exactly one migration penalty spike");
    // Window means: last before the swap vs the mean over the next full
    // window (penalty spike included), net improvement >= 10%.
    let swap_t = applied[0];
    let means: Vec<(f64, f64)> = log
        .events
        .iter()
        .filter_map(|e| match &e.entry {
            LogEntry::Measurement { window_mean, .. } => Some((e.time, *window_mean)),
            _ => None,
        })
        .collect();
    let pre = means
        .iter()
        .rev()
        .find(|(t, _)| *t <= swap_t)
        .expect("pre-swap measurement")
        .1;
    let post_window: Vec<f64> = means
        .iter()
        .filter(|(t, _)| *t > swap_t)
        .take(policy.window)
        .map(|(_, m)| *m)
        .collect();
    assert_eq!(post_window.len(), policy.window, "trace too short after swap");
    let post = *post_window.last().unwrap();
    let improvement = (pre - post) / pre;
    assert!(
        improvement >= 0.10,
        "post-swap window mean improved only {:.1}% (pre {pre:.3}, post {post:.3})",
        improvement * 100.0
    );

    // Flat trace, threshold never reached, period longer than the trace.
    let flat = WorkloadTrace::from_csv(
        &std::fs::read_to_string(demo.join("trace_flat.csv")).unwrap(),
    )
    .unwrap();
    let mut approve = |_: &envadapt::lifecycle::ReconfigProposal| true;
    let (flat_log, flat_state) = operate(build_state(), &flat, &policy, &mut approve).unwrap();
    assert_eq!(flat_state.version, 0);
    assert!(
        flat_log
            .events
            .iter()
            .all(|e| matches!(e.entry, LogEntry::Measurement { .. })),
        "flat trace must produce measurements only"
    );
    // Timestamps stay monotone in every log.
    for w in log.events.windows(2) {
        assert!(w[1].time >= w[0].time && w[1].seq == w[0].seq + 1);
    }
    pass(&format!(
        "criterion 8: hard-logic swap at t={} with {:.0}% window improvement; flat trace stayed quiet",
        proposals[0].0,
        improvement * 100.0
    ));
}

/// Criterion 9: the full pipeline and the chained subcommands produce
/// byte-identical artifacts and reports under a fixed seed, and re-running
/// a step reproduces its output.
#[test]
fn criterion_9_pipeline_determinism_and_composability() {
    let config = fixtures_dir().join("demo/pipeline.json");
    let bin = env!("CARGO_BIN_EXE_envadapt");
    let full_dir = tempfile::tempdir().unwrap();
    let chain_dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin)
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let cfg = config.to_str().unwrap();
    let full_out = full_dir.path().to_str().unwrap();
    let chain_out = chain_dir.path().to_str().unwrap();
    run(&["full", "--config", cfg, "--out", full_out, "--seed", "1", "--yes"]);
    for step in ["analyze", "search", "tune", "place", "verify"] {
        run(&[step, "--config", cfg, "--out", chain_out, "--seed", "1", "--yes"]);
    }
    let artifacts = [
        "analysis.json",
        "search.json",
        "resource.json",
        "placement.json",
        "verification.json",
        "report.json",
    ];
    for name in artifacts {
        let a = std::fs::read(full_dir.path().join(name)).unwrap();
        let b = std::fs::read(chain_dir.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between full and chained runs");
    }
    // Idempotence: re-running a step on unchanged inputs reproduces bytes.
    let before = std::fs::read(chain_dir.path().join("search.json")).unwrap();
    run(&["search", "--config", cfg, "--out", chain_out, "--seed", "1", "--yes"]);
    let after = std::fs::read(chain_dir.path().join("search.json")).unwrap();
    assert_eq!(before, after, "search step is not idempotent");
    pass("criterion 9: full run and chained subcommands are byte-identical; steps are idempotent");
}
