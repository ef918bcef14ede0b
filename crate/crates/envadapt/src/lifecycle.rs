//! Deployment verification and runtime operation: measure test cases against
//! the deployed configuration, watch a workload trace, trial-simulate
//! alternative configurations against the observed request mix, and apply
//! approved reconfigurations.

use crate::gasearch::{candidate_space, run_ga, FitnessEvaluator, GaConfig, OffloadPattern, SearchResult};
use crate::minilang::analyze::analyze;
use crate::minilang::ast::{renumber_loops, Ast};
use crate::minilang::{BlockLib, Value};
use crate::patterndb::{match_blocks, substitute, BlockMatch, PatternDb};
use crate::perfsim::{measure, CostModel, DeployablePlan, Testcase};
use crate::placement::{solve_placement, AppModel, AppModelFile, Mode, PlacementPlan, Topology};
use crate::resource::{plan_at_k, BaseTimes, RatioPair, ResourcePlan, ScalingModel};
use crate::transfer::{compute_directives, insert_directives, TransferDirective};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LifecycleError {
    #[error("proposal was built against state version {proposal} but the system is at {state}")]
    StaleProposal { proposal: u64, state: u64 },
    #[error("trace kind `{0}` has no matching test case")]
    UnknownKind(String),
    #[error("trace times must be non-decreasing (index {0})")]
    UnorderedTrace(usize),
    #[error("code derivation failed: {0}")]
    Derivation(String),
    #[error(transparent)]
    Sim(#[from] crate::perfsim::SimError),
}

/// One derived code configuration: substitution choice, offload pattern,
/// transfer directives, and the measured single-unit time split.
#[derive(Debug, Clone)]
pub struct CodeConfig {
    pub active_kernel: Option<String>,
    pub matches: Vec<BlockMatch>,
    pub substituted: Ast,
    pub annotated: Ast,
    pub pattern: OffloadPattern,
    pub directives: Vec<TransferDirective>,
    pub search: SearchResult,
    pub base: BaseTimes,
    pub total_ops: u64,
}

/// Immutable environment a deployment runs in.
pub struct EnvConfig {
    pub source: Ast,
    pub db: PatternDb,
    pub lib: BlockLib,
    pub model: CostModel,
    pub scaling: ScalingModel,
    pub topology: Topology,
    pub appmodel: AppModelFile,
    pub testcases: Vec<Testcase>,
    pub ga: GaConfig,
    pub perf_target: f64,
    pub budget: f64,
    /// Latency bound for the placement solver.
    pub placement_bound: f64,
}

impl EnvConfig {
    /// The assumed workload: the first test case.
    pub fn design_case(&self) -> &Testcase {
        &self.testcases[0]
    }

    pub fn case_by_id(&self, id: &str) -> Option<&Testcase> {
        self.testcases.iter().find(|t| t.id == id)
    }
}

/// Derive code for one substitution choice: substitute the chosen kernel's
/// matches, search offload patterns with the GA, and attach directives.
pub fn derive_code_config(
    env: &EnvConfig,
    kernel: Option<&str>,
    case: &Testcase,
) -> Result<CodeConfig, LifecycleError> {
    let all_matches = match_blocks(&env.source, &env.db);
    let mut substituted = env.source.clone();
    for m in &all_matches {
        if Some(m.kernel_id.as_str()) == kernel {
            substituted =
                substitute(&substituted, m).map_err(|e| LifecycleError::Derivation(e.to_string()))?;
        }
    }
    renumber_loops(&mut substituted);
    let analysis = analyze(&substituted);
    let space = candidate_space(&analysis);
    let evaluator = FitnessEvaluator::new(
        &substituted,
        &analysis,
        &env.model,
        &case.input,
        &env.lib,
        env.ga.penalty,
    )?;
    let (pattern, search) = if space.is_empty() {
        let zero = OffloadPattern::all_zero(space.loop_map.clone());
        let time = evaluator.fitness(&zero);
        (
            zero.clone(),
            SearchResult {
                best: zero,
                best_time: time,
                history: Vec::new(),
                evaluations: evaluator.evaluations(),
                cache_hits: evaluator.cache_hits(),
            },
        )
    } else {
        let search =
            run_ga(&space, &env.ga, &evaluator).map_err(|e| LifecycleError::Derivation(e.to_string()))?;
        (search.best.clone(), search)
    };
    let directives = compute_directives(&substituted, &pattern)
        .map_err(|e| LifecycleError::Derivation(e.to_string()))?;
    let annotated = insert_directives(&substituted, &directives)
        .map_err(|e| LifecycleError::Derivation(e.to_string()))?;
    let report = crate::perfsim::simulate(&annotated, &pattern, &env.model, &case.input, &env.lib)?;
    let interp = crate::minilang::interpret(
        &substituted,
        &case.input,
        &env.lib,
        &crate::minilang::InterpOptions::default(),
    )
    .map_err(crate::perfsim::SimError::from)?;
    Ok(CodeConfig {
        active_kernel: kernel.map(str::to_string),
        matches: all_matches,
        substituted,
        annotated,
        pattern,
        directives,
        search,
        base: BaseTimes {
            cpu_time: report.cpu_time,
            device_time: report.device_time,
            transfer_time: report.transfer_time,
        },
        total_ops: interp.profile.total_ops,
    })
}

/// Kernel substitution candidates: no kernel, or any matched kernel. One
/// hard-logic slot is assumed, so candidates are single kernels.
pub fn kernel_candidates(env: &EnvConfig) -> Vec<Option<String>> {
    let mut out: Vec<Option<String>> = vec![None];
    for m in match_blocks(&env.source, &env.db) {
        if !out.iter().any(|k| k.as_deref() == Some(m.kernel_id.as_str())) {
            out.push(Some(m.kernel_id.clone()));
        }
    }
    out
}

/// Try every kernel candidate and keep the fastest configuration under the
/// design-time case.
pub fn choose_code_config(env: &EnvConfig) -> Result<CodeConfig, LifecycleError> {
    let case = env.design_case().clone();
    let mut best: Option<CodeConfig> = None;
    for kernel in kernel_candidates(env) {
        let cfg = derive_code_config(env, kernel.as_deref(), &case)?;
        let better = match &best {
            None => true,
            Some(b) => cfg.search.best_time < b.search.best_time,
        };
        if better {
            best = Some(cfg);
        }
    }
    best.ok_or_else(|| LifecycleError::Derivation("no candidate configuration".into()))
}

/// The deployed system: environment plus the currently active configuration.
pub struct SystemState {
    pub version: u64,
    pub env: EnvConfig,
    pub code: CodeConfig,
    pub ratio: RatioPair,
    pub resource: ResourcePlan,
    pub placement: PlacementPlan,
}

impl SystemState {
    pub fn deployable(&self) -> DeployablePlan {
        DeployablePlan {
            ast: self.code.annotated.clone(),
            pattern: self.code.pattern.clone(),
            cpu_units: self.resource.cpu_units,
            device_units: self.resource.device_units,
            cpu_serial_frac: self.env.scaling.cpu_serial_frac,
            device_serial_frac: self.env.scaling.device_serial_frac,
        }
    }

    /// Placement-facing application model at the current resource plan.
    pub fn app_model(&self) -> AppModel {
        self.env.appmodel.resolve(
            (self.resource.cpu_units + self.resource.device_units) as f64,
            self.code.total_ops as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub latency: f64,
    pub throughput: f64,
    /// None when the case sets no latency requirement.
    pub latency_ok: Option<bool>,
    /// None when the case carries no expected output.
    pub output_match: Option<bool>,
    pub first_diff: Option<usize>,
    /// Measured output trace; written to a per-case file, not the report.
    #[serde(skip)]
    pub trace: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub cases: Vec<CaseResult>,
    pub pass: bool,
    pub cpu_units: u32,
    pub device_units: u32,
    pub resource_cost: f64,
    pub placement_cost: f64,
    pub placement_node_summary: BTreeMap<String, String>,
}

fn outputs_match(expected: &[serde_json::Value], got: &[Value]) -> Option<usize> {
    let n = expected.len().max(got.len());
    for i in 0..n {
        let e = expected.get(i).and_then(|v| v.as_f64());
        let g = got.get(i).map(|v| v.as_f64());
        if e != g {
            return Some(i);
        }
    }
    None
}

/// Run every test case against the deployed configuration: measure latency
/// and throughput, compare regression outputs exactly, and summarize the
/// resources for the service-start decision.
pub fn verify_deployment(
    state: &SystemState,
    testcases: &[Testcase],
) -> Result<VerificationReport, LifecycleError> {
    let plan = state.deployable();
    let mut cases = Vec::new();
    let mut pass = true;
    for tc in testcases {
        let m = measure(&plan, tc, &state.env.model, &state.env.lib)?;
        let latency_ok = tc.required_latency.map(|bound| m.latency <= bound);
        let (output_match, first_diff) = match &tc.expected_output {
            Some(exp) => match outputs_match(exp, &m.output) {
                None => (Some(true), None),
                Some(i) => (Some(false), Some(i)),
            },
            None => (None, None),
        };
        if latency_ok == Some(false) || output_match == Some(false) {
            pass = false;
        }
        cases.push(CaseResult {
            id: tc.id.clone(),
            latency: m.latency,
            throughput: m.throughput,
            latency_ok,
            output_match,
            first_diff,
            trace: m.output,
        });
    }
    Ok(VerificationReport {
        cases,
        pass,
        cpu_units: state.resource.cpu_units,
        device_units: state.resource.device_units,
        resource_cost: state.resource.cost,
        placement_cost: state.placement.cost,
        placement_node_summary: state.placement.assign.clone(),
    })
}

// ---- runtime operation ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    pub events: Vec<TraceEvent>,
}

impl WorkloadTrace {
    /// Parse `time,kind,rate` rows (header required).
    pub fn from_csv(text: &str) -> Result<WorkloadTrace, LifecycleError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut events = Vec::new();
        for rec in rdr.deserialize::<TraceEvent>() {
            let ev = rec.map_err(|e| LifecycleError::Derivation(format!("trace: {e}")))?;
            events.push(ev);
        }
        for (i, w) in events.windows(2).enumerate() {
            if w[1].time < w[0].time {
                return Err(LifecycleError::UnorderedTrace(i + 1));
            }
        }
        Ok(WorkloadTrace { events })
    }
}

fn default_period() -> f64 {
    50.0
}
fn default_window() -> usize {
    20
}
fn default_gain_bar() -> f64 {
    0.10
}
fn default_penalty_placement() -> f64 {
    5.0
}
fn default_penalty_soft() -> f64 {
    1.0
}
fn default_penalty_hard() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatePolicy {
    /// Periodic review interval in trace time units.
    #[serde(default = "default_period")]
    pub period: f64,
    pub latency_threshold: f64,
    /// Rolling window length in requests.
    #[serde(default = "default_window")]
    pub window: usize,
    /// Minimum net latency gain a proposal must clear.
    #[serde(default = "default_gain_bar")]
    pub gain_bar: f64,
    #[serde(default)]
    pub auto_approve: bool,
    /// Migration penalties (one-time latency spikes) per proposal kind.
    #[serde(default)]
    pub penalty_resource: f64,
    #[serde(default = "default_penalty_placement")]
    pub penalty_placement: f64,
    #[serde(default = "default_penalty_soft")]
    pub penalty_soft: f64,
    #[serde(default = "default_penalty_hard")]
    pub penalty_hard: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    ResourceAmount,
    Placement,
    SoftLogic,
    HardLogic,
}

pub enum ProposalPayload {
    Resource(ResourcePlan),
    Placement(PlacementPlan),
    SoftLogic(Box<CodeConfig>),
    HardLogic(Box<CodeConfig>),
}

pub struct ReconfigProposal {
    pub kind: ProposalKind,
    /// Fractional latency improvement the trial simulation predicts.
    pub expected_latency_gain: f64,
    pub expected_cost_delta: f64,
    pub migration_penalty: f64,
    pub base_version: u64,
    pub payload: ProposalPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Measurement {
        kind: String,
        rate: f64,
        latency: f64,
        window_mean: f64,
    },
    MigrationPenalty {
        amount: f64,
    },
    Trigger {
        reason: String,
    },
    NoProposal,
    Proposal {
        kind: ProposalKind,
        expected_latency_gain: f64,
        expected_cost_delta: f64,
        migration_penalty: f64,
    },
    Decision {
        approved: bool,
    },
    Applied {
        kind: ProposalKind,
        new_version: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    pub time: f64,
    #[serde(flatten)]
    pub entry: LogEntry,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperateLog {
    pub events: Vec<LogEvent>,
}

impl OperateLog {
    fn push(&mut self, time: f64, entry: LogEntry) {
        let seq = self.events.len() as u64;
        self.events.push(LogEvent { seq, time, entry });
    }

    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("log serializes"))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}

/// The recent request window: (kind, rate) per request, oldest first.
#[derive(Debug, Clone)]
pub struct ReplayWindow {
    pub events: Vec<(String, f64)>,
}

impl ReplayWindow {
    pub fn from_window(window: &VecDeque<(String, f64)>) -> ReplayWindow {
        ReplayWindow {
            events: window.iter().cloned().collect(),
        }
    }

    pub fn kinds(&self) -> Vec<String> {
        let mut out: Vec<String> = self.events.iter().map(|(k, _)| k.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    /// The most frequent kind; ties go to the lexicographically first.
    pub fn dominant_kind(&self) -> Option<String> {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for (k, _) in &self.events {
            *counts.entry(k).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
            .map(|(k, _)| k.to_string())
    }

    /// Mean effective latency over the window events for the given
    /// per-kind base latencies. This is exactly what the measurement loop
    /// reports for a window under the same configuration.
    pub fn replay(&self, base_by_kind: &BTreeMap<String, f64>) -> f64 {
        if self.events.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .events
            .iter()
            .map(|(k, rate)| effective_latency(base_by_kind[k.as_str()], *rate))
            .sum();
        sum / self.events.len() as f64
    }
}

/// Latency under load: the per-request latency inflated by utilization when
/// the offered rate exceeds the service rate.
fn effective_latency(base: f64, rate: f64) -> f64 {
    base * (rate * base).max(1.0)
}

struct LatencyCache {
    by_key: HashMap<(u64, String), f64>,
}

fn base_latency(
    state: &SystemState,
    kind: &str,
    cache: &mut LatencyCache,
) -> Result<f64, LifecycleError> {
    if let Some(v) = cache.by_key.get(&(state.version, kind.to_string())) {
        return Ok(*v);
    }
    let tc = state
        .env
        .case_by_id(kind)
        .ok_or_else(|| LifecycleError::UnknownKind(kind.to_string()))?;
    let m = measure(&state.deployable(), tc, &state.env.model, &state.env.lib)?;
    cache
        .by_key
        .insert((state.version, kind.to_string()), m.latency);
    Ok(m.latency)
}

/// Window latency of an arbitrary candidate configuration: replay the
/// window's requests against its measured per-kind latencies.
fn window_latency_of(
    env: &EnvConfig,
    annotated: &Ast,
    pattern: &OffloadPattern,
    cpu_units: u32,
    device_units: u32,
    window: &ReplayWindow,
) -> Result<f64, LifecycleError> {
    let plan = DeployablePlan {
        ast: annotated.clone(),
        pattern: pattern.clone(),
        cpu_units,
        device_units,
        cpu_serial_frac: env.scaling.cpu_serial_frac,
        device_serial_frac: env.scaling.device_serial_frac,
    };
    let mut base = BTreeMap::new();
    for kind in window.kinds() {
        let tc = env
            .case_by_id(&kind)
            .ok_or_else(|| LifecycleError::UnknownKind(kind.clone()))?;
        let m = measure(&plan, tc, &env.model, &env.lib)?;
        base.insert(kind, m.latency);
    }
    Ok(window.replay(&base))
}

fn current_window_latency(
    state: &SystemState,
    window: &ReplayWindow,
) -> Result<f64, LifecycleError> {
    window_latency_of(
        &state.env,
        &state.code.annotated,
        &state.code.pattern,
        state.resource.cpu_units,
        state.resource.device_units,
        window,
    )
}

/// Re-run the adaptation pipeline against the observed workload mix and
/// return the best candidate whose net gain (after amortizing the migration
/// penalty over the review period) clears the policy bar.
pub fn trial_simulate(
    state: &SystemState,
    window: &ReplayWindow,
    policy: &OperatePolicy,
) -> Result<Option<ReconfigProposal>, LifecycleError> {
    if window.events.is_empty() {
        return Ok(None);
    }
    let current = current_window_latency(state, window)?;
    if current <= 0.0 {
        return Ok(None);
    }
    let mut best: Option<ReconfigProposal> = None;
    let mut consider = |cand: ReconfigProposal, net_gain: f64| {
        if net_gain <= policy.gain_bar {
            return;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                cand.expected_latency_gain - cand.migration_penalty / policy.period
                    > b.expected_latency_gain - b.migration_penalty / policy.period
            }
        };
        if better {
            best = Some(cand);
        }
    };
    let net = |gain: f64, penalty: f64| gain - penalty / policy.period;

    // Resource amount: only when the current mix breaches the threshold;
    // scale the ratio up to the smallest multiplier that restores it.
    if current > policy.latency_threshold {
        let mut k = state.resource.k + 1;
        while state.ratio.cpu_units * k <= state.env.scaling.max_cpu_units
            && state.ratio.device_units * k <= state.env.scaling.max_device_units
        {
            let plan = plan_at_k(&state.ratio, k, &state.env.scaling, &state.code.base);
            let cand_latency = window_latency_of(
                &state.env,
                &state.code.annotated,
                &state.code.pattern,
                plan.cpu_units,
                plan.device_units,
                window,
            )?;
            if cand_latency <= policy.latency_threshold {
                let gain = (current - cand_latency) / current;
                consider(
                    ReconfigProposal {
                        kind: ProposalKind::ResourceAmount,
                        expected_latency_gain: gain,
                        expected_cost_delta: plan.cost - state.resource.cost,
                        migration_penalty: policy.penalty_resource,
                        base_version: state.version,
                        payload: ProposalPayload::Resource(plan),
                    },
                    net(gain, policy.penalty_resource),
                );
                break;
            }
            k += 1;
        }
    }

    // Placement: re-solve under the current demand.
    if let Ok(plan) = solve_placement(
        &state.env.topology,
        &state.app_model(),
        Mode::MinCostUnderLatency(state.env.placement_bound),
        state.env.model.cpu_op_cost,
    ) {
        if plan.assign != state.placement.assign && state.placement.latency > 0.0 {
            let gain = (state.placement.latency - plan.latency) / state.placement.latency;
            consider(
                ReconfigProposal {
                    kind: ProposalKind::Placement,
                    expected_latency_gain: gain,
                    expected_cost_delta: plan.cost - state.placement.cost,
                    migration_penalty: policy.penalty_placement,
                    base_version: state.version,
                    payload: ProposalPayload::Placement(plan),
                },
                net(gain, policy.penalty_placement),
            );
        }
    }

    // Soft and hard logic: re-derive code against the dominant observed
    // kind, for the current kernel (soft) and every other candidate (hard).
    let dominant = window.dominant_kind().expect("window non-empty");
    let dom_case = state
        .env
        .case_by_id(&dominant)
        .ok_or_else(|| LifecycleError::UnknownKind(dominant.clone()))?
        .clone();
    for kernel in kernel_candidates(&state.env) {
        let cfg = derive_code_config(&state.env, kernel.as_deref(), &dom_case)?;
        let cand_latency = window_latency_of(
            &state.env,
            &cfg.annotated,
            &cfg.pattern,
            state.resource.cpu_units,
            state.resource.device_units,
            window,
        )?;
        let gain = (current - cand_latency) / current;
        let is_hard = kernel.as_deref() != state.code.active_kernel.as_deref();
        let (kind, penalty) = if is_hard {
            (ProposalKind::HardLogic, policy.penalty_hard)
        } else {
            (ProposalKind::SoftLogic, policy.penalty_soft)
        };
        let payload = if is_hard {
            ProposalPayload::HardLogic(Box::new(cfg))
        } else {
            ProposalPayload::SoftLogic(Box::new(cfg))
        };
        consider(
            ReconfigProposal {
                kind,
                expected_latency_gain: gain,
                expected_cost_delta: 0.0,
                migration_penalty: penalty,
                base_version: state.version,
                payload,
            },
            net(gain, penalty),
        );
    }

    Ok(best)
}

/// Apply an approved proposal, producing the next system state.
pub fn apply_reconfig(
    state: SystemState,
    proposal: ReconfigProposal,
) -> Result<SystemState, LifecycleError> {
    if proposal.base_version != state.version {
        return Err(LifecycleError::StaleProposal {
            proposal: proposal.base_version,
            state: state.version,
        });
    }
    let mut next = state;
    next.version += 1;
    match proposal.payload {
        ProposalPayload::Resource(plan) => next.resource = plan,
        ProposalPayload::Placement(plan) => next.placement = plan,
        ProposalPayload::SoftLogic(cfg) | ProposalPayload::HardLogic(cfg) => next.code = *cfg,
    }
    Ok(next)
}

/// Drive the deployed system through a workload trace: measure a rolling
/// latency window, review on threshold breach or periodically, and apply
/// approved reconfigurations. Returns the full log and the final state.
pub fn operate(
    state: SystemState,
    trace: &WorkloadTrace,
    policy: &OperatePolicy,
    approve: &mut dyn FnMut(&ReconfigProposal) -> bool,
) -> Result<(OperateLog, SystemState), LifecycleError> {
    let mut st = state;
    let mut log = OperateLog::default();
    let mut cache = LatencyCache {
        by_key: HashMap::new(),
    };
    let mut window: VecDeque<f64> = VecDeque::new();
    let mut window_kinds: VecDeque<(String, f64)> = VecDeque::new();
    let mut last_review = trace.events.first().map(|e| e.time).unwrap_or(0.0);
    let mut pending_penalty = 0.0;

    for ev in &trace.events {
        let base = base_latency(&st, &ev.kind, &mut cache)?;
        let mut latency = effective_latency(base, ev.rate);
        if pending_penalty > 0.0 {
            latency += pending_penalty;
            log.push(
                ev.time,
                LogEntry::MigrationPenalty {
                    amount: pending_penalty,
                },
            );
            pending_penalty = 0.0;
        }
        window.push_back(latency);
        window_kinds.push_back((ev.kind.clone(), ev.rate));
        while window.len() > policy.window {
            window.pop_front();
            window_kinds.pop_front();
        }
        let mean = window.iter().sum::<f64>() / window.len() as f64;
        log.push(
            ev.time,
            LogEntry::Measurement {
                kind: ev.kind.clone(),
                rate: ev.rate,
                latency,
                window_mean: mean,
            },
        );

        let over_threshold = mean > policy.latency_threshold;
        let periodic = ev.time - last_review >= policy.period;
        if !(over_threshold || periodic) {
            continue;
        }
        last_review = ev.time;
        log.push(
            ev.time,
            LogEntry::Trigger {
                reason: if over_threshold {
                    "latency threshold".into()
                } else {
                    "periodic review".into()
                },
            },
        );
        let replay = ReplayWindow::from_window(&window_kinds);
        match trial_simulate(&st, &replay, policy)? {
            None => log.push(ev.time, LogEntry::NoProposal),
            Some(p) => {
                log.push(
                    ev.time,
                    LogEntry::Proposal {
                        kind: p.kind,
                        expected_latency_gain: p.expected_latency_gain,
                        expected_cost_delta: p.expected_cost_delta,
                        migration_penalty: p.migration_penalty,
                    },
                );
                let approved = policy.auto_approve || approve(&p);
                log.push(ev.time, LogEntry::Decision { approved });
                if approved {
                    let kind = p.kind;
                    let penalty = p.migration_penalty;
                    st = apply_reconfig(st, p)?;
                    log.push(
                        ev.time,
                        LogEntry::Applied {
                            kind,
                            new_version: st.version,
                        },
                    );
                    pending_penalty = penalty;
                    window.clear();
                    window_kinds.clear();
                }
            }
        }
    }
    Ok((log, st))
}
