//! Operation scenarios: verification failure detection, stale proposals,
//! trial-simulation behavior per proposal kind, prediction honesty, and the
//! load-doubling resource response.

mod common;

use common::fixtures_dir;
use envadapt::lifecycle::{
    apply_reconfig, operate, trial_simulate, verify_deployment, LogEntry, OperatePolicy,
    ProposalKind, ReplayWindow, SystemState, WorkloadTrace,
};
use envadapt::pipeline::{load_env, read_artifact, run_full, state_from_artifacts};
use envadapt::placement::PlacementPlan;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;
use tempfile::TempDir;

fn policy() -> OperatePolicy {
    OperatePolicy {
        latency_threshold: 1.0,
        period: 50.0,
        window: 20,
        gain_bar: 0.1,
        auto_approve: true,
        penalty_resource: 0.0,
        penalty_placement: 5.0,
        penalty_soft: 1.0,
        penalty_hard: 2.0,
    }
}

/// Deploy the two-service app once and cache the artifact directory.
fn deployed_artifacts() -> &'static (TempDir, PathBuf) {
    static DEPLOY: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    DEPLOY.get_or_init(|| {
        let config = fixtures_dir().join("demo/pipeline_sqlnosql.json");
        let out = tempfile::tempdir().unwrap();
        let loaded = load_env(&config, None, true).unwrap();
        let mut approve = |_: &envadapt::lifecycle::ReconfigProposal| true;
        run_full(loaded, out.path(), &mut approve).unwrap();
        let path = out.path().to_path_buf();
        (out, path)
    })
}

fn deployed_state() -> SystemState {
    let (_, out) = deployed_artifacts();
    let config = fixtures_dir().join("demo/pipeline_sqlnosql.json");
    let env = load_env(&config, None, true).unwrap().env;
    let search = read_artifact(out, "search.json", "t").unwrap();
    let resource = read_artifact(out, "resource.json", "t").unwrap();
    let placement = read_artifact(out, "placement.json", "t").unwrap();
    state_from_artifacts(env, &search, &resource, &placement).unwrap()
}

fn window_of(kind: &str, rate: f64, len: usize) -> ReplayWindow {
    ReplayWindow {
        events: (0..len).map(|_| (kind.to_string(), rate)).collect(),
    }
}

#[test]
fn verification_passes_and_reports_resources() {
    let state = deployed_state();
    let report = verify_deployment(&state, &state.env.testcases).unwrap();
    assert!(report.pass);
    assert_eq!(report.cases.len(), 2);
    assert!(report.cpu_units >= 1 && report.device_units >= 1);
    assert!(report.resource_cost > 0.0);
}

#[test]
fn latency_bound_violation_fails_verification() {
    let state = deployed_state();
    let mut cases = state.env.testcases.clone();
    cases[0].required_latency = Some(1e-9);
    let report = verify_deployment(&state, &cases).unwrap();
    assert!(!report.pass);
    assert_eq!(report.cases[0].latency_ok, Some(false));
}

#[test]
fn output_mismatch_detected_with_first_diff_index() {
    let state = deployed_state();
    let mut cases = state.env.testcases.clone();
    // Correct golden trace first.
    let honest = verify_deployment(&state, &cases).unwrap();
    assert!(honest.pass);
    // Now inject a semantics bug into the stored expectation: the second
    // value is wrong.
    let plan = state.deployable();
    let m = envadapt::perfsim::measure(&plan, &cases[0], &state.env.model, &state.env.lib)
        .unwrap();
    let mut golden: Vec<serde_json::Value> = m
        .output
        .iter()
        .map(|v| serde_json::json!(v.as_f64()))
        .collect();
    golden[1] = serde_json::json!(-12345.0);
    cases[0].expected_output = Some(golden);
    let report = verify_deployment(&state, &cases).unwrap();
    assert!(!report.pass);
    assert_eq!(report.cases[0].output_match, Some(false));
    assert_eq!(report.cases[0].first_diff, Some(1));
}

#[test]
fn trial_is_quiescent_on_design_workload() {
    let state = deployed_state();
    // The design-time assumption: sql requests at a modest rate.
    let window = window_of("sql", 0.5, 20);
    let proposal = trial_simulate(&state, &window, &policy()).unwrap();
    assert!(proposal.is_none(), "no gain should exist at the fixed point");
}

#[test]
fn quiescence_holds_under_periodic_review() {
    let state = deployed_state();
    // Long flat trace: periodic reviews fire, reconfigurations never do.
    let mut csv = String::from("time,kind,rate\n");
    for t in 0..200 {
        csv.push_str(&format!("{t},sql,0.5\n"));
    }
    let trace = WorkloadTrace::from_csv(&csv).unwrap();
    let mut approve = |_: &envadapt::lifecycle::ReconfigProposal| true;
    let (log, final_state) = operate(state, &trace, &policy(), &mut approve).unwrap();
    let triggers = log
        .events
        .iter()
        .filter(|e| matches!(e.entry, LogEntry::Trigger { .. }))
        .count();
    assert!(triggers >= 3, "periodic reviews should fire on a long trace");
    assert!(log
        .events
        .iter()
        .all(|e| !matches!(e.entry, LogEntry::Proposal { .. })));
    assert_eq!(final_state.version, 0);
}

#[test]
fn stale_proposal_rejected_on_second_apply() {
    let state = deployed_state();
    let window = window_of("nosql", 0.5, 20);
    let p1 = trial_simulate(&state, &window, &policy())
        .unwrap()
        .expect("nosql-heavy window must produce a proposal");
    let p2 = trial_simulate(&state, &window, &policy())
        .unwrap()
        .expect("same window, same proposal");
    let next = apply_reconfig(state, p1).unwrap();
    assert_eq!(next.version, 1);
    let err = match apply_reconfig(next, p2) {
        Err(e) => e,
        Ok(_) => panic!("second apply must be stale"),
    };
    assert!(matches!(
        err,
        envadapt::lifecycle::LifecycleError::StaleProposal { .. }
    ));
}

#[test]
fn placement_gain_is_proposed_when_current_placement_is_suboptimal() {
    let mut state = deployed_state();
    // Rewire the topology so the cheap cloud is also the fast choice, then
    // strand the deployment on a now-slow edge.
    for link in &mut state.env.topology.links {
        if link.a == "gw" && link.b == "edge" {
            link.latency = 2.0;
        }
    }
    state.env.topology.links.push(envadapt::placement::LinkSpec {
        a: "gw".into(),
        b: "cloud".into(),
        latency: 0.05,
        bandwidth: 1e7,
    });
    let mut worse_assign: BTreeMap<String, String> = BTreeMap::new();
    for comp in state.placement.assign.keys() {
        worse_assign.insert(comp.clone(), "edge".to_string());
    }
    let (latency, throughput, cost) = envadapt::placement::evaluate_placement(
        &state.env.topology,
        &state.app_model(),
        &worse_assign,
        state.env.model.cpu_op_cost,
    )
    .unwrap();
    state.placement = PlacementPlan {
        assign: worse_assign,
        latency,
        throughput,
        cost,
        objective_value: cost,
    };
    let window = window_of("sql", 0.5, 20);
    let proposal = trial_simulate(&state, &window, &policy())
        .unwrap()
        .expect("re-solving must find the better placement");
    assert_eq!(proposal.kind, ProposalKind::Placement);
    let new_latency = match &proposal.payload {
        envadapt::lifecycle::ProposalPayload::Placement(p) => p.latency,
        _ => unreachable!(),
    };
    let expected_gain = (latency - new_latency) / latency;
    assert!(expected_gain > 0.0);
    assert!(
        (proposal.expected_latency_gain - expected_gain).abs() < 1e-9,
        "gain must equal (old - new) / old"
    );
}

#[test]
fn best_net_gain_candidate_wins() {
    // On a nosql-heavy window, both a hard swap (huge gain) and possibly a
    // placement change exist; the returned proposal must carry the maximum
    // net gain among candidates.
    let state = deployed_state();
    let window = window_of("nosql", 0.5, 20);
    let p = trial_simulate(&state, &window, &policy())
        .unwrap()
        .expect("proposal expected");
    assert_eq!(p.kind, ProposalKind::HardLogic);
    assert!(p.expected_latency_gain > 0.5, "swap gain should dominate");
}

/// Prediction honesty: on a steady workload, the realized post-swap window
/// mean (penalty excluded) improves by at least 99% of the predicted gain.
#[test]
fn applied_proposal_prediction_matches_realization() {
    // Observation runs must not reconfigure mid-trace.
    let observe_policy = OperatePolicy {
        auto_approve: false,
        ..policy()
    };
    let steady_trace = || {
        let mut csv = String::from("time,kind,rate\n");
        for t in 0..20 {
            csv.push_str(&format!("{t},nosql,0.5\n"));
        }
        WorkloadTrace::from_csv(&csv).unwrap()
    };
    let last_mean = |state: SystemState| {
        let mut decline = |_: &envadapt::lifecycle::ReconfigProposal| false;
        let (log, _) = operate(state, &steady_trace(), &observe_policy, &mut decline).unwrap();
        log.events
            .iter()
            .rev()
            .find_map(|e| match &e.entry {
                LogEntry::Measurement { window_mean, .. } => Some(*window_mean),
                _ => None,
            })
            .unwrap()
    };
    let pre = last_mean(deployed_state());
    let state = deployed_state();
    let window = window_of("nosql", 0.5, 20);
    let proposal = trial_simulate(&state, &window, &policy()).unwrap().unwrap();
    let expected = proposal.expected_latency_gain;
    let next = apply_reconfig(state, proposal).unwrap();
    let post = last_mean(next);
    let realized = (pre - post) / pre;
    assert!(
        realized >= expected * 0.99,
        "realized {realized:.4} fell short of predicted {expected:.4}"
    );
}

/// Doubling the request rate drives a resource-amount proposal that keeps
/// the unit ratio.
#[test]
fn load_doubling_scales_resources_keeping_ratio() {
    let mut state = deployed_state();
    // Allow the ratio to scale for this scenario.
    state.env.scaling.max_device_units = 16;
    let ratio = (state.ratio.cpu_units, state.ratio.device_units);
    let trace = WorkloadTrace::from_csv(
        &std::fs::read_to_string(fixtures_dir().join("demo/trace_load.csv")).unwrap(),
    )
    .unwrap();
    let p = OperatePolicy {
        latency_threshold: 0.25,
        period: 200.0,
        ..policy()
    };
    let mut approve = |_: &envadapt::lifecycle::ReconfigProposal| true;
    let (log, final_state) = operate(state, &trace, &p, &mut approve).unwrap();
    let kinds: Vec<ProposalKind> = log
        .events
        .iter()
        .filter_map(|e| match &e.entry {
            LogEntry::Proposal { kind, .. } => Some(*kind),
            _ => None,
        })
        .collect();
    assert_eq!(kinds, vec![ProposalKind::ResourceAmount]);
    assert_eq!(final_state.version, 1);
    assert!(final_state.resource.k > 1, "units must scale up");
    assert_eq!(
        (
            final_state.resource.cpu_units / final_state.resource.k,
            final_state.resource.device_units / final_state.resource.k
        ),
        ratio,
        "the unit ratio must be kept"
    );
    // Resource changes carry no downtime: no migration penalty events.
    assert!(log
        .events
        .iter()
        .all(|e| !matches!(e.entry, LogEntry::MigrationPenalty { .. })));
}

#[test]
fn unknown_trace_kind_is_an_error() {
    let state = deployed_state();
    let trace = WorkloadTrace::from_csv("time,kind,rate\n0,unheard_of,1.0\n").unwrap();
    let mut approve = |_: &envadapt::lifecycle::ReconfigProposal| true;
    let err = match operate(state, &trace, &policy(), &mut approve) {
        Err(e) => e,
        Ok(_) => panic!("unknown kind must error"),
    };
    assert!(matches!(
        err,
        envadapt::lifecycle::LifecycleError::UnknownKind(_)
    ));
}

#[test]
fn unordered_trace_rejected() {
    let err = WorkloadTrace::from_csv("time,kind,rate\n5,sql,1\n3,sql,1\n").unwrap_err();
    assert!(matches!(
        err,
        envadapt::lifecycle::LifecycleError::UnorderedTrace(1)
    ));
}
