//! Command-line front end. `full` drives the whole flow; each subcommand
//! runs one step from the serialized artifacts of the previous steps.

use clap::{Args, Parser, Subcommand};
use envadapt::lifecycle::ReconfigProposal;
use envadapt::pipeline::{
    load_env, read_artifact, run_full, step_analyze, step_operate, step_place, step_search,
    step_tune, step_verify, write_artifact, AnalysisArtifact, PipelineError, PlacementArtifact,
    ResourceArtifact, SearchArtifact,
};
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "envadapt",
    about = "Adapt a program to a heterogeneous environment: offload search, transfer hoisting, kernel substitution, resource sizing, placement, verification, and runtime reconfiguration over a simulated cost model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long, default_value = "envadapt-out")]
    out: PathBuf,
    /// Override the search seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Approve service start and reconfigurations without prompting.
    #[arg(long = "yes", short = 'y')]
    yes: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole flow: analyze, search, tune, place, verify, operate.
    Full(Common),
    /// Parse and analyze the program; match functional blocks.
    Analyze(Common),
    /// Search offload patterns and substitutions; emit directives.
    Search(Common),
    /// Derive the resource ratio and size the amounts.
    Tune(Common),
    /// Solve component placement on the topology.
    Place(Common),
    /// Verify the deployment against the test cases.
    Verify(Common),
    /// Replay a workload trace and reconfigure as needed.
    Operate(Common),
}

fn prompt_approval(question: &str) -> bool {
    print!("{question} [y/N] ");
    std::io::stdout().flush().ok();
    let mut line = String::new();
    if std::io::stdin().read_line(&mut line).is_err() {
        return false;
    }
    matches!(line.trim(), "y" | "Y" | "yes")
}

fn approver(auto: bool) -> impl FnMut(&ReconfigProposal) -> bool {
    move |p: &ReconfigProposal| {
        if auto {
            return true;
        }
        prompt_approval(&format!(
            "apply {:?} reconfiguration (expected gain {:.1}%, cost delta {:+.2})?",
            p.kind,
            p.expected_latency_gain * 100.0,
            p.expected_cost_delta
        ))
    }
}

fn run(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Full(c) => {
            let loaded = load_env(&c.config, c.seed, c.yes)?;
            let auto = loaded.config.auto_approve;
            let mut approve = approver(auto);
            let report = run_full(loaded, &c.out, &mut approve)?;
            println!(
                "pattern: {} of {} loops offloaded, kernel {:?}, best time {:.3}",
                report.search.pattern_bits.iter().filter(|b| **b).count(),
                report.search.pattern_bits.len(),
                report.search.active_kernel,
                report.search.best_time
            );
            println!(
                "resources: {} cpu + {} device units, cost {:.2}",
                report.placement.final_resource.cpu_units,
                report.placement.final_resource.device_units,
                report.placement.final_resource.cost
            );
            println!(
                "placement: {:?} (latency {:.4}, cost {:.2})",
                report.placement.plan.assign, report.placement.plan.latency, report.placement.plan.cost
            );
            println!("verification: {}", report.verdict);
            if report.verdict != "pass" {
                return Err(PipelineError::Step {
                    step: "verify",
                    msg: "verification failed".into(),
                });
            }
            let start = auto || prompt_approval("start the service with this configuration?");
            println!(
                "service start: {}",
                if start { "approved" } else { "declined" }
            );
            Ok(())
        }
        Command::Analyze(c) => {
            let loaded = load_env(&c.config, c.seed, c.yes)?;
            let analysis = step_analyze(&loaded.env)?;
            let path = write_artifact(&c.out, "analysis.json", &analysis)?;
            println!(
                "{} loops, {} parallelizable, {} matches -> {}",
                analysis.loops.len(),
                analysis.parallelizable_count,
                analysis.matches.len(),
                path.display()
            );
            Ok(())
        }
        Command::Search(c) => {
            let loaded = load_env(&c.config, c.seed, c.yes)?;
            let search = step_search(&loaded.env)?;
            let path = write_artifact(&c.out, "search.json", &search)?;
            println!(
                "best time {:.3} with {} of {} loops offloaded ({} evaluations, {} cache hits) -> {}",
                search.best_time,
                search.pattern_bits.iter().filter(|b| **b).count(),
                search.pattern_bits.len(),
                search.evaluations,
                search.cache_hits,
                path.display()
            );
            Ok(())
        }
        Command::Tune(c) => {
            let loaded = load_env(&c.config, c.seed, c.yes)?;
            let search: SearchArtifact = read_artifact(&c.out, "search.json", "tune")?;
            let resource = step_tune(&loaded.env, &search)?;
            let path = write_artifact(&c.out, "resource.json", &resource)?;
            println!(
                "ratio {}:{} (k={}), units {} cpu + {} device, est latency {:.3}, cost {:.2} -> {}",
                resource.ratio.cpu_units,
                resource.ratio.device_units,
                resource.plan.k,
                resource.plan.cpu_units,
                resource.plan.device_units,
                resource.plan.est_latency,
                resource.plan.cost,
                path.display()
            );
            if let Some(w) = &resource.ratio.warning {
                println!("warning: {w}");
            }
            Ok(())
        }
        Command::Place(c) => {
            let loaded = load_env(&c.config, c.seed, c.yes)?;
            let search: SearchArtifact = read_artifact(&c.out, "search.json", "place")?;
            let resource: ResourceArtifact = read_artifact(&c.out, "resource.json", "place")?;
            let placement = step_place(&loaded.env, &search, &resource)?;
            let path = write_artifact(&c.out, "placement.json", &placement)?;
            println!(
                "assignment {:?}, latency {:.4}, cost {:.2}, {} retries -> {}",
                placement.plan.assign,
                placement.plan.latency,
                placement.plan.cost,
                placement.retries,
                path.display()
            );
            Ok(())
        }
        Command::Verify(c) => {
            let loaded = load_env(&c.config, c.seed, c.yes)?;
            let auto = loaded.config.auto_approve;
            let analysis: AnalysisArtifact = read_artifact(&c.out, "analysis.json", "verify")?;
            let search: SearchArtifact = read_artifact(&c.out, "search.json", "verify")?;
            let resource: ResourceArtifact = read_artifact(&c.out, "resource.json", "verify")?;
            let placement: PlacementArtifact = read_artifact(&c.out, "placement.json", "verify")?;
            let (_, report) = step_verify(loaded.env, analysis, search, resource, placement)?;
            write_artifact(&c.out, "verification.json", &report.verification)?;
            let path = write_artifact(&c.out, "report.json", &report)?;
            envadapt::pipeline::write_case_traces(&c.out, &report.verification)?;
            for case in &report.verification.report.cases {
                println!(
                    "case {}: latency {:.3}, throughput {:.5}, output {}, bound {}",
                    case.id,
                    case.latency,
                    case.throughput,
                    match case.output_match {
                        Some(true) => "match",
                        Some(false) => "MISMATCH",
                        None => "n/a",
                    },
                    match case.latency_ok {
                        Some(true) => "ok",
                        Some(false) => "VIOLATED",
                        None => "n/a",
                    }
                );
            }
            println!("verdict: {} -> {}", report.verdict, path.display());
            if report.verdict != "pass" {
                return Err(PipelineError::Step {
                    step: "verify",
                    msg: "verification failed".into(),
                });
            }
            let start = auto || prompt_approval("start the service with this configuration?");
            println!(
                "service start: {}",
                if start { "approved" } else { "declined" }
            );
            Ok(())
        }
        Command::Operate(c) => {
            let loaded = load_env(&c.config, c.seed, c.yes)?;
            let auto = loaded.config.auto_approve;
            let search: SearchArtifact = read_artifact(&c.out, "search.json", "operate")?;
            let resource: ResourceArtifact = read_artifact(&c.out, "resource.json", "operate")?;
            let placement: PlacementArtifact = read_artifact(&c.out, "placement.json", "operate")?;
            let trace = loaded.trace.clone().ok_or_else(|| {
                PipelineError::Config("operate needs `trace` in the pipeline config".into())
            })?;
            let policy = loaded.policy.clone().ok_or_else(|| {
                PipelineError::Config("operate needs `operate_policy` in the pipeline config".into())
            })?;
            let mut policy = policy;
            policy.auto_approve = policy.auto_approve || auto;
            let state = envadapt::pipeline::state_from_artifacts(
                loaded.env, &search, &resource, &placement,
            )?;
            let mut approve = approver(policy.auto_approve);
            let (log, artifact, _) = step_operate(state, &trace, &policy, &mut approve)?;
            let log_path = c.out.join("operate_log.jsonl");
            std::fs::write(&log_path, log.to_jsonl()).map_err(|e| PipelineError::Io {
                path: log_path.display().to_string(),
                err: e.to_string(),
            })?;
            let path = write_artifact(&c.out, "operate.json", &artifact)?;
            println!(
                "{} measurements, {} triggers, {} proposals, {} applied, final version {} -> {}",
                artifact.measurements,
                artifact.triggers,
                artifact.proposals,
                artifact.applied,
                artifact.final_version,
                path.display()
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
