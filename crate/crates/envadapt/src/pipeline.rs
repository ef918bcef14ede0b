//! End-to-end orchestration. Each step reads and writes versioned JSON
//! artifacts, so the full run and the per-step subcommands compose through
//! files and produce identical bytes for a fixed seed.

use crate::gasearch::{GaConfig, OffloadPattern, SearchResult};
use crate::lifecycle::{
    choose_code_config, operate, verify_deployment, CodeConfig, EnvConfig, OperateLog,
    OperatePolicy, ReconfigProposal, SystemState, VerificationReport, WorkloadTrace,
};
use crate::minilang::analyze::{analyze, LoopInfo};
use crate::minilang::ast::{pretty_print, LoopId};
use crate::minilang::{interpret, parse, InterpOptions};
use crate::patterndb::{match_blocks, BlockMatch, PatternDb};
use crate::perfsim::{CostModel, Testcase};
use crate::placement::{solve_placement, AppModelFile, Mode, PlaceError, PlacementPlan, Topology};
use crate::resource::{
    compute_ratio, size_resources_from, BaseTimes, RatioPair, ResourceError, ResourcePlan,
    ScalingModel,
};
use crate::transfer::TransferDirective;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
/// Bounded number of Step5 -> Step4 retries when placement is infeasible.
pub const PLACEMENT_RETRY_BUDGET: u32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read `{path}`: {err}")]
    Io { path: String, err: String },
    #[error("config: {0}")]
    Config(String),
    #[error("step {step}: {msg}")]
    Step { step: &'static str, msg: String },
    #[error("infeasible at step {step}: {msg}")]
    Infeasible { step: &'static str, msg: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Infeasible { .. } => 2,
            _ => 1,
        }
    }
}

fn step_err<E: std::fmt::Display>(step: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Step {
        step,
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: String,
    pub testcases: String,
    pub cost_model: String,
    pub pattern_db: String,
    pub topology: String,
    pub scaling: String,
    pub ga: String,
    pub appmodel: String,
    pub perf_target: f64,
    pub budget: f64,
    #[serde(default)]
    pub auto_approve: bool,
    #[serde(default)]
    pub seed: u64,
    /// Latency bound for the placement solver; defaults to `perf_target`.
    #[serde(default)]
    pub placement_latency_bound: Option<f64>,
    /// Workload trace enabling the operate step.
    #[serde(default)]
    pub trace: Option<String>,
    #[serde(default)]
    pub operate_policy: Option<String>,
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    })
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<(PipelineConfig, PathBuf), PipelineError> {
        let text = read_file(path)?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((cfg, base))
    }
}

/// Everything loaded from disk, with CLI overrides applied.
pub struct LoadedEnv {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
    pub env: EnvConfig,
    pub policy: Option<OperatePolicy>,
    pub trace: Option<WorkloadTrace>,
}

pub fn load_env(
    config_path: &Path,
    seed_override: Option<u64>,
    auto_approve_override: bool,
) -> Result<LoadedEnv, PipelineError> {
    let (mut config, base_dir) = PipelineConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if auto_approve_override {
        config.auto_approve = true;
    }
    let resolve = |p: &str| base_dir.join(p);

    let source_text = read_file(&resolve(&config.source))?;
    let name = Path::new(&config.source)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "program".into());
    let source = parse(&name, &source_text).map_err(step_err("analyze"))?;

    let db = PatternDb::load(&resolve(&config.pattern_db)).map_err(step_err("analyze"))?;
    let lib = db.block_lib();
    let model =
        CostModel::from_json(&read_file(&resolve(&config.cost_model))?).map_err(step_err("analyze"))?;
    model.validate().map_err(PipelineError::Config)?;
    let scaling = ScalingModel::from_json(&read_file(&resolve(&config.scaling))?)
        .map_err(step_err("tune"))?;
    let topology =
        Topology::from_json(&read_file(&resolve(&config.topology))?).map_err(step_err("place"))?;
    let appmodel = AppModelFile::from_json(&read_file(&resolve(&config.appmodel))?)
        .map_err(step_err("place"))?;
    let testcases: Vec<Testcase> =
        serde_json::from_str(&read_file(&resolve(&config.testcases))?)
            .map_err(step_err("verify"))?;
    if testcases.is_empty() {
        return Err(PipelineError::Config("testcases must not be empty".into()));
    }
    let mut ga = GaConfig::from_json(&read_file(&resolve(&config.ga))?).map_err(step_err("search"))?;
    ga.seed = config.seed;

    let policy = match &config.operate_policy {
        Some(p) => Some(
            serde_json::from_str::<OperatePolicy>(&read_file(&resolve(p))?)
                .map_err(step_err("operate"))?,
        ),
        None => None,
    };
    let trace = match &config.trace {
        Some(p) => Some(WorkloadTrace::from_csv(&read_file(&resolve(p))?).map_err(step_err("operate"))?),
        None => None,
    };

    let env = EnvConfig {
        source,
        db,
        lib,
        model,
        scaling,
        topology,
        appmodel,
        testcases,
        ga,
        perf_target: config.perf_target,
        budget: config.budget,
        placement_bound: config.placement_latency_bound.unwrap_or(config.perf_target),
    };
    Ok(LoadedEnv {
        config,
        base_dir,
        env,
        policy,
        trace,
    })
}

// ---- artifacts ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisArtifact {
    pub schema_version: u32,
    pub program: String,
    pub loops: Vec<LoopInfo>,
    pub parallelizable_count: usize,
    pub matches: Vec<BlockMatch>,
    pub profile_iterations: BTreeMap<LoopId, u64>,
    pub profile_ops: BTreeMap<LoopId, u64>,
    pub total_ops: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchArtifact {
    pub schema_version: u32,
    pub active_kernel: Option<String>,
    pub substituted_source: String,
    pub annotated_source: String,
    pub loop_map: Vec<LoopId>,
    pub pattern_bits: Vec<bool>,
    pub best_time: f64,
    pub history: Vec<(f64, f64)>,
    pub evaluations: u64,
    pub cache_hits: u64,
    pub directives: Vec<TransferDirective>,
    pub base: BaseTimes,
    pub total_ops: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceArtifact {
    pub schema_version: u32,
    pub ratio: RatioPair,
    pub plan: ResourcePlan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacementArtifact {
    pub schema_version: u32,
    pub mode: String,
    pub latency_bound: f64,
    pub plan: PlacementPlan,
    /// Resource plan after Step5 -> Step4 retries (equals the tune output
    /// when no retry was needed).
    pub final_resource: ResourcePlan,
    pub retries: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyArtifact {
    pub schema_version: u32,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub verdict: String,
    pub analysis: AnalysisArtifact,
    pub search: SearchArtifact,
    pub resource: ResourceArtifact,
    pub placement: PlacementArtifact,
    pub verification: VerifyArtifact,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperateArtifact {
    pub schema_version: u32,
    pub measurements: usize,
    pub triggers: usize,
    pub proposals: usize,
    pub applied: usize,
    pub final_version: u64,
    pub final_cpu_units: u32,
    pub final_device_units: u32,
    pub final_active_kernel: Option<String>,
}

pub fn write_artifact<T: Serialize>(
    out_dir: &Path,
    name: &str,
    value: &T,
) -> Result<PathBuf, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Io {
        path: out_dir.display().to_string(),
        err: e.to_string(),
    })?;
    let path = out_dir.join(name);
    let text = serde_json::to_string_pretty(value).expect("artifacts serialize") + "\n";
    std::fs::write(&path, text).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    })?;
    Ok(path)
}

pub fn read_artifact<T: for<'de> Deserialize<'de>>(
    out_dir: &Path,
    name: &str,
    step: &'static str,
) -> Result<T, PipelineError> {
    let path = out_dir.join(name);
    let text = read_file(&path)?;
    serde_json::from_str(&text).map_err(step_err(step))
}

// ---- steps ----

/// Step 1-2 analysis: loop structure, def/use, parallelizability, pattern
/// matches, and a profile of the design-time case.
pub fn step_analyze(env: &EnvConfig) -> Result<AnalysisArtifact, PipelineError> {
    let loops = analyze(&env.source);
    let matches = match_blocks(&env.source, &env.db);
    let design = &env.testcases[0];
    let run = interpret(
        &env.source,
        &design.input,
        &env.lib,
        &InterpOptions::default(),
    )
    .map_err(step_err("analyze"))?;
    Ok(AnalysisArtifact {
        schema_version: SCHEMA_VERSION,
        program: env.source.name.clone(),
        parallelizable_count: loops.iter().filter(|l| l.parallelizable).count(),
        loops,
        matches,
        profile_iterations: run.profile.iterations,
        profile_ops: run.profile.ops,
        total_ops: run.profile.total_ops,
    })
}

/// Step 2-3: pick the kernel substitution and offload pattern that minimize
/// simulated time, and record the directives and time split.
pub fn step_search(env: &EnvConfig) -> Result<SearchArtifact, PipelineError> {
    let code = choose_code_config(env).map_err(step_err("search"))?;
    Ok(SearchArtifact {
        schema_version: SCHEMA_VERSION,
        active_kernel: code.active_kernel.clone(),
        substituted_source: pretty_print(&code.substituted),
        annotated_source: pretty_print(&code.annotated),
        loop_map: code.pattern.loop_map.clone(),
        pattern_bits: code.pattern.bits.clone(),
        best_time: code.search.best_time,
        history: code.search.history.clone(),
        evaluations: code.search.evaluations,
        cache_hits: code.search.cache_hits,
        directives: code.directives.clone(),
        base: code.base,
        total_ops: code.total_ops,
    })
}

/// Step 4: ratio from the measured split, then the smallest amount meeting
/// the performance target within budget.
pub fn step_tune(
    env: &EnvConfig,
    search: &SearchArtifact,
) -> Result<ResourceArtifact, PipelineError> {
    let ratio = derive_ratio(env, &search.base)?;
    let plan = size_resources_from(
        &ratio,
        env.perf_target,
        env.budget,
        &env.scaling,
        &search.base,
        1,
    )
    .map_err(|e| match e {
        ResourceError::Infeasible { .. } => PipelineError::Infeasible {
            step: "tune",
            msg: e.to_string(),
        },
        other => PipelineError::Step {
            step: "tune",
            msg: other.to_string(),
        },
    })?;
    Ok(ResourceArtifact {
        schema_version: SCHEMA_VERSION,
        ratio,
        plan,
    })
}

fn derive_ratio(env: &EnvConfig, base: &BaseTimes) -> Result<RatioPair, PipelineError> {
    if base.device_time > 0.0 && base.cpu_time > 0.0 {
        compute_ratio(base.cpu_time, base.device_time, &env.scaling).map_err(step_err("tune"))
    } else {
        // Nothing ran on one side; fall back to a balanced pair.
        Ok(RatioPair {
            cpu_units: 1,
            device_units: 1,
            warning: Some("one-sided time split; defaulting to a 1:1 ratio".into()),
        })
    }
}

/// Step 5 with the back-edge to Step 4: on infeasible placement, retry with
/// the next larger resource multiplier, a bounded number of times.
pub fn step_place(
    env: &EnvConfig,
    search: &SearchArtifact,
    resource: &ResourceArtifact,
) -> Result<PlacementArtifact, PipelineError> {
    let mut plan = resource.plan.clone();
    let mut retries = 0;
    loop {
        let app = env.appmodel.resolve(
            (plan.cpu_units + plan.device_units) as f64,
            search.total_ops as f64,
        );
        match solve_placement(
            &env.topology,
            &app,
            Mode::MinCostUnderLatency(env.placement_bound),
            env.model.cpu_op_cost,
        ) {
            Ok(placed) => {
                return Ok(PlacementArtifact {
                    schema_version: SCHEMA_VERSION,
                    mode: "min_cost_under_latency".into(),
                    latency_bound: env.placement_bound,
                    plan: placed,
                    final_resource: plan,
                    retries,
                });
            }
            Err(PlaceError::Infeasible) => {
                if retries >= PLACEMENT_RETRY_BUDGET {
                    return Err(PipelineError::Infeasible {
                        step: "place",
                        msg: format!(
                            "no feasible placement after {retries} resource retries"
                        ),
                    });
                }
                retries += 1;
                plan = size_resources_from(
                    &resource.ratio,
                    env.perf_target,
                    env.budget,
                    &env.scaling,
                    &search.base,
                    plan.k + 1,
                )
                .map_err(|e| PipelineError::Infeasible {
                    step: "place",
                    msg: format!("retry {retries}: {e}"),
                })?;
            }
            Err(other) => {
                return Err(PipelineError::Step {
                    step: "place",
                    msg: other.to_string(),
                })
            }
        }
    }
}

/// Rebuild the deployed system state from artifacts.
pub fn state_from_artifacts(
    env: EnvConfig,
    search: &SearchArtifact,
    resource: &ResourceArtifact,
    placement: &PlacementArtifact,
) -> Result<SystemState, PipelineError> {
    let substituted =
        parse(&env.source.name, &search.substituted_source).map_err(step_err("verify"))?;
    let annotated =
        parse(&env.source.name, &search.annotated_source).map_err(step_err("verify"))?;
    let matches = match_blocks(&env.source, &env.db);
    let code = CodeConfig {
        active_kernel: search.active_kernel.clone(),
        matches,
        substituted,
        annotated,
        pattern: OffloadPattern::new(search.pattern_bits.clone(), search.loop_map.clone()),
        directives: search.directives.clone(),
        search: SearchResult {
            best: OffloadPattern::new(search.pattern_bits.clone(), search.loop_map.clone()),
            best_time: search.best_time,
            history: search.history.clone(),
            evaluations: search.evaluations,
            cache_hits: search.cache_hits,
        },
        base: search.base,
        total_ops: search.total_ops,
    };
    Ok(SystemState {
        version: 0,
        env,
        code,
        ratio: resource.ratio.clone(),
        resource: placement.final_resource.clone(),
        placement: placement.plan.clone(),
    })
}

/// Step 6: run the test cases, assemble the final report.
pub fn step_verify(
    env: EnvConfig,
    analysis: AnalysisArtifact,
    search: SearchArtifact,
    resource: ResourceArtifact,
    placement: PlacementArtifact,
) -> Result<(SystemState, PipelineReport), PipelineError> {
    let state = state_from_artifacts(env, &search, &resource, &placement)?;
    let report =
        verify_deployment(&state, &state.env.testcases).map_err(step_err("verify"))?;
    let verdict = if report.pass { "pass" } else { "fail" };
    let pipeline_report = PipelineReport {
        schema_version: SCHEMA_VERSION,
        verdict: verdict.into(),
        analysis,
        search,
        resource,
        placement,
        verification: VerifyArtifact {
            schema_version: SCHEMA_VERSION,
            report,
        },
    };
    Ok((state, pipeline_report))
}

/// Write each verified case's output trace: one value per line, floats with
/// nine significant digits.
pub fn write_case_traces(out_dir: &Path, verify: &VerifyArtifact) -> Result<(), PipelineError> {
    for case in &verify.report.cases {
        let text: String = case
            .trace
            .iter()
            .map(|v| crate::minilang::format_trace_value(*v) + "\n")
            .collect();
        let path = out_dir.join(format!("trace_{}.txt", case.id));
        std::fs::write(&path, text).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            err: e.to_string(),
        })?;
    }
    Ok(())
}

/// Step 7: watch the workload trace and reconfigure.
pub fn step_operate(
    state: SystemState,
    trace: &WorkloadTrace,
    policy: &OperatePolicy,
    approve: &mut dyn FnMut(&ReconfigProposal) -> bool,
) -> Result<(OperateLog, OperateArtifact, SystemState), PipelineError> {
    let (log, final_state) = operate(state, trace, policy, approve).map_err(step_err("operate"))?;
    let count = |f: &dyn Fn(&crate::lifecycle::LogEntry) -> bool| {
        log.events.iter().filter(|e| f(&e.entry)).count()
    };
    let artifact = OperateArtifact {
        schema_version: SCHEMA_VERSION,
        measurements: count(&|e| matches!(e, crate::lifecycle::LogEntry::Measurement { .. })),
        triggers: count(&|e| matches!(e, crate::lifecycle::LogEntry::Trigger { .. })),
        proposals: count(&|e| matches!(e, crate::lifecycle::LogEntry::Proposal { .. })),
        applied: count(&|e| matches!(e, crate::lifecycle::LogEntry::Applied { .. })),
        final_version: final_state.version,
        final_cpu_units: final_state.resource.cpu_units,
        final_device_units: final_state.resource.device_units,
        final_active_kernel: final_state.code.active_kernel.clone(),
    };
    Ok((log, artifact, final_state))
}

/// The whole flow, writing every artifact into `out_dir`.
pub fn run_full(
    loaded: LoadedEnv,
    out_dir: &Path,
    approve: &mut dyn FnMut(&ReconfigProposal) -> bool,
) -> Result<PipelineReport, PipelineError> {
    let analysis = step_analyze(&loaded.env)?;
    write_artifact(out_dir, "analysis.json", &analysis)?;
    let search = step_search(&loaded.env)?;
    write_artifact(out_dir, "search.json", &search)?;
    let resource = step_tune(&loaded.env, &search)?;
    write_artifact(out_dir, "resource.json", &resource)?;
    let placement = step_place(&loaded.env, &search, &resource)?;
    write_artifact(out_dir, "placement.json", &placement)?;
    let (state, report) = step_verify(loaded.env, analysis, search, resource, placement)?;
    write_artifact(out_dir, "verification.json", &report.verification)?;
    write_artifact(out_dir, "report.json", &report)?;
    write_case_traces(out_dir, &report.verification)?;
    if let Some(trace) = &loaded.trace {
        let policy = loaded.policy.as_ref().ok_or_else(|| PipelineError::Config(
            "a trace is configured but operate_policy is missing".into(),
        ))?;
        let mut policy = policy.clone();
        policy.auto_approve = policy.auto_approve || loaded.config.auto_approve;
        let (log, artifact, _) = step_operate(state, trace, &policy, approve)?;
        let path = out_dir.join("operate_log.jsonl");
        std::fs::write(&path, log.to_jsonl()).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            err: e.to_string(),
        })?;
        write_artifact(out_dir, "operate.json", &artifact)?;
    }
    Ok(report)
}
