//! Shared helpers for the integration suites: corpus access, deterministic
//! fuzz inputs, and the fixed cost model the corpus checks run under.

#![allow(dead_code)]

use envadapt::gasearch::{candidate_space, OffloadPattern};
use envadapt::minilang::analyze::analyze;
use envadapt::minilang::{parse, Ast, BlockLib, ElemKind, InputBinding};
use envadapt::patterndb::PatternDb;
use envadapt::perfsim::CostModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn corpus_dir() -> PathBuf {
    fixtures_dir().join("corpus")
}

/// Every corpus program, parsed, sorted by file name.
pub fn load_corpus() -> Vec<(String, Ast)> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory exists")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().map(|e| e == "elc").unwrap_or(false))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&p).expect("corpus file readable");
            let ast = parse(&name, &text).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, ast)
        })
        .collect()
}

/// The registered block library every corpus run uses (programs with `call`
/// statements need it; it is harmless otherwise).
pub fn corpus_lib() -> BlockLib {
    let db = PatternDb::load(&fixtures_dir().join("demo/patterns.json")).expect("pattern db");
    db.block_lib()
}

/// Fixed cost model for corpus-level checks: offload pays for itself only
/// when compute amortizes launch and transfer costs.
pub fn corpus_model() -> CostModel {
    CostModel {
        cpu_op_cost: 1.0,
        gpu_speedup: 10.0,
        kernel_launch: 100.0,
        xfer_latency: 50.0,
        xfer_per_byte: 0.01,
        elem_bytes: 8.0,
        accel_formulas: [
            (
                "fft_kernel_v1".to_string(),
                envadapt::patterndb::CostFormula {
                    fixed: 300.0,
                    per_element: 0.5,
                },
            ),
            (
                "sql_kernel_v1".to_string(),
                envadapt::patterndb::CostFormula {
                    fixed: 300.0,
                    per_element: 0.5,
                },
            ),
            (
                "nosql_kernel_v1".to_string(),
                envadapt::patterndb::CostFormula {
                    fixed: 300.0,
                    per_element: 0.5,
                },
            ),
            (
                "matmul_kernel_v1".to_string(),
                envadapt::patterndb::CostFormula {
                    fixed: 300.0,
                    per_element: 2.0,
                },
            ),
        ]
        .into_iter()
        .collect(),
        noise_sigma: 0.0,
        noise_seed: 0,
    }
}

/// Deterministic input binding for a program: every declared variable gets
/// small exactly-representable values.
pub fn fuzz_input(ast: &Ast, seed: u64) -> InputBinding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = std::collections::BTreeMap::new();
    for d in &ast.decls {
        let value = match (d.kind, d.len) {
            (ElemKind::Int, None) => serde_json::json!(rng.gen_range(-3i64..8)),
            (ElemKind::Float, None) => {
                serde_json::json!(rng.gen_range(-20i64..60) as f64 * 0.25)
            }
            (ElemKind::Int, Some(n)) => {
                let vals: Vec<i64> = (0..n).map(|_| rng.gen_range(-5i64..30)).collect();
                serde_json::json!(vals)
            }
            (ElemKind::Float, Some(n)) => {
                let vals: Vec<f64> = (0..n)
                    .map(|_| rng.gen_range(-40i64..80) as f64 * 0.125)
                    .collect();
                serde_json::json!(vals)
            }
        };
        map.insert(d.name.clone(), value);
    }
    InputBinding(map)
}

/// All shape-valid offload patterns a short GA run explores on the program,
/// the all-zero baseline included.
pub fn explored_patterns(ast: &Ast, lib: &BlockLib, model: &CostModel) -> Vec<OffloadPattern> {
    use envadapt::gasearch::{run_ga, FitnessEvaluator, GaConfig};
    use envadapt::transfer::validate_pattern_shape;

    let analysis = analyze(ast);
    let space = candidate_space(&analysis);
    let input = fuzz_input(ast, 0);
    let evaluator = FitnessEvaluator::new(ast, &analysis, model, &input, lib, None)
        .expect("baseline evaluates");
    if !space.is_empty() {
        let cfg = GaConfig {
            population: 8,
            generations: 6,
            seed: 11,
            ..Default::default()
        };
        run_ga(&space, &cfg, &evaluator).expect("ga runs");
    }
    evaluator
        .explored()
        .into_iter()
        .map(|bits| OffloadPattern::new(bits, space.loop_map.clone()))
        .filter(|p| validate_pattern_shape(p, &analysis).is_ok())
        .collect()
}
