//! Component placement on a cloud/edge/gateway topology: exact search over
//! all feasible assignments, maximizing performance under a budget or
//! minimizing cost under a latency bound.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlaceError {
    #[error("node `{0}` over capacity")]
    CapacityExceeded(String),
    #[error("no path between `{0}` and `{1}`")]
    Disconnected(String, String),
    #[error("component `{0}` violates its pinning")]
    PinnedViolated(String),
    #[error("no assignment satisfies the constraints")]
    Infeasible,
    #[error("assignment space {size} exceeds the exact-search cap {cap}")]
    SearchSpaceTooLarge { size: u128, cap: u128 },
    #[error("unknown node or component `{0}`")]
    UnknownId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Cloud,
    Edge,
    Gw,
    Device,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    /// Total compute units the node offers.
    pub capacity: f64,
    /// Cost per allocated unit per period.
    pub unit_price: f64,
    /// Units still free for new components.
    pub available: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub latency: f64,
    /// Bytes per time unit.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
}

impl Topology {
    pub fn from_json(text: &str) -> Result<Topology, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    /// Compute units the component needs at its node.
    pub demand: f64,
    /// Operations per request.
    pub work: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flow {
    /// Component id, or a node id for fixed endpoints such as a camera.
    pub src: String,
    /// Component id.
    pub dst: String,
    pub bytes_per_request: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppModel {
    pub components: Vec<Component>,
    #[serde(default)]
    pub flows: Vec<Flow>,
    /// Component -> node for fixed placements.
    #[serde(default)]
    pub pinned: BTreeMap<String, String>,
}

impl AppModel {
    pub fn from_json(text: &str) -> Result<AppModel, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// On-disk application model. A component may omit `demand` or `work` to
/// take them from the sized resource plan and the measured profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppModelFile {
    pub components: Vec<ComponentFile>,
    #[serde(default)]
    pub flows: Vec<Flow>,
    #[serde(default)]
    pub pinned: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentFile {
    pub id: String,
    #[serde(default)]
    pub demand: Option<f64>,
    #[serde(default)]
    pub work: Option<f64>,
}

impl AppModelFile {
    pub fn from_json(text: &str) -> Result<AppModelFile, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn resolve(&self, default_demand: f64, default_work: f64) -> AppModel {
        AppModel {
            components: self
                .components
                .iter()
                .map(|c| Component {
                    id: c.id.clone(),
                    demand: c.demand.unwrap_or(default_demand),
                    work: c.work.unwrap_or(default_work),
                })
                .collect(),
            flows: self.flows.clone(),
            pinned: self.pinned.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    MaxPerfUnderBudget(f64),
    MinCostUnderLatency(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub assign: BTreeMap<String, String>,
    pub latency: f64,
    pub throughput: f64,
    pub cost: f64,
    pub objective_value: f64,
}

/// All-pairs shortest path latencies plus the bottleneck bandwidth along
/// each chosen path.
struct Paths {
    idx: BTreeMap<String, usize>,
    latency: Vec<Vec<f64>>,
    min_bw: Vec<Vec<f64>>,
}

fn build_paths(topo: &Topology) -> Paths {
    let n = topo.nodes.len();
    let idx: BTreeMap<String, usize> = topo
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| (node.id.clone(), i))
        .collect();
    let inf = f64::INFINITY;
    let mut latency = vec![vec![inf; n]; n];
    let mut min_bw = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        latency[i][i] = 0.0;
        min_bw[i][i] = inf;
    }
    for l in &topo.links {
        let (Some(&a), Some(&b)) = (idx.get(&l.a), idx.get(&l.b)) else {
            continue;
        };
        // Symmetric links; keep the better of duplicate entries.
        if l.latency < latency[a][b] {
            latency[a][b] = l.latency;
            latency[b][a] = l.latency;
            min_bw[a][b] = l.bandwidth;
            min_bw[b][a] = l.bandwidth;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = latency[i][k] + latency[k][j];
                if via < latency[i][j] {
                    latency[i][j] = via;
                    min_bw[i][j] = min_bw[i][k].min(min_bw[k][j]);
                }
            }
        }
    }
    Paths {
        idx,
        latency,
        min_bw,
    }
}

/// Score one complete assignment.
///
/// Latency: the serial sum over flows of path latency plus
/// bytes / bottleneck bandwidth (zero for colocated endpoints), plus each
/// component's compute time `work * cpu_op_cost / demand`. Throughput is the
/// reciprocal of the slowest single stage. Cost sums demand times the
/// assigned node's unit price.
pub fn evaluate_placement(
    topo: &Topology,
    app: &AppModel,
    assign: &BTreeMap<String, String>,
    cpu_op_cost: f64,
) -> Result<(f64, f64, f64), PlaceError> {
    let paths = build_paths(topo);
    // Pinning and capacity checks.
    for (comp, node) in &app.pinned {
        if assign.get(comp) != Some(node) {
            return Err(PlaceError::PinnedViolated(comp.clone()));
        }
    }
    let mut used: BTreeMap<&str, f64> = BTreeMap::new();
    for c in &app.components {
        let node = assign
            .get(&c.id)
            .ok_or_else(|| PlaceError::UnknownId(c.id.clone()))?;
        topo.node(node)
            .ok_or_else(|| PlaceError::UnknownId(node.clone()))?;
        *used.entry(node.as_str()).or_default() += c.demand;
    }
    for (node, load) in &used {
        let spec = topo.node(node).expect("checked above");
        if *load > spec.available + 1e-9 {
            return Err(PlaceError::CapacityExceeded(node.to_string()));
        }
    }
    let resolve = |id: &str| -> Result<usize, PlaceError> {
        let node_id = assign.get(id).map(|s| s.as_str()).unwrap_or(id);
        paths
            .idx
            .get(node_id)
            .copied()
            .ok_or_else(|| PlaceError::UnknownId(id.to_string()))
    };
    let mut latency = 0.0;
    let mut bottleneck: f64 = 0.0;
    for f in &app.flows {
        let a = resolve(&f.src)?;
        let b = resolve(&f.dst)?;
        if a == b {
            continue;
        }
        let lat = paths.latency[a][b];
        if !lat.is_finite() {
            return Err(PlaceError::Disconnected(f.src.clone(), f.dst.clone()));
        }
        let net = lat + f.bytes_per_request / paths.min_bw[a][b];
        latency += net;
        bottleneck = bottleneck.max(net);
    }
    let mut cost = 0.0;
    for c in &app.components {
        let node = topo.node(&assign[&c.id]).expect("checked above");
        let compute = c.work * cpu_op_cost / c.demand.max(f64::MIN_POSITIVE);
        latency += compute;
        bottleneck = bottleneck.max(compute);
        cost += c.demand * node.unit_price;
    }
    let throughput = if bottleneck > 0.0 {
        1.0 / bottleneck
    } else {
        f64::INFINITY
    };
    Ok((latency, throughput, cost))
}

pub const SEARCH_SPACE_CAP: u128 = 1_000_000;

/// Exact placement: enumerate all feasible assignments and keep the best
/// under the mode's objective. Ties break toward lower cost, then
/// lexicographically smaller node assignment.
pub fn solve_placement(
    topo: &Topology,
    app: &AppModel,
    mode: Mode,
    cpu_op_cost: f64,
) -> Result<PlacementPlan, PlaceError> {
    // Eligible nodes per component, in sorted node order for determinism.
    let mut sorted_nodes: Vec<&NodeSpec> = topo.nodes.iter().collect();
    sorted_nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let mut eligible: Vec<Vec<&NodeSpec>> = Vec::new();
    for c in &app.components {
        if let Some(pin) = app.pinned.get(&c.id) {
            let node = topo.node(pin).ok_or_else(|| PlaceError::UnknownId(pin.clone()))?;
            eligible.push(vec![node]);
        } else {
            eligible.push(
                sorted_nodes
                    .iter()
                    .filter(|n| n.kind != NodeKind::Device)
                    .copied()
                    .collect(),
            );
        }
    }
    let size: u128 = eligible.iter().map(|e| e.len() as u128).product();
    if size > SEARCH_SPACE_CAP {
        return Err(PlaceError::SearchSpaceTooLarge {
            size,
            cap: SEARCH_SPACE_CAP,
        });
    }

    struct Best {
        key: (f64, f64, Vec<String>),
        plan: PlacementPlan,
    }
    let mut best: Option<Best> = None;
    let mut assign: BTreeMap<String, String> = BTreeMap::new();
    let mut stack: Vec<String> = Vec::new();

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        topo: &Topology,
        app: &AppModel,
        eligible: &[Vec<&NodeSpec>],
        depth: usize,
        remaining: &mut BTreeMap<String, f64>,
        assign: &mut BTreeMap<String, String>,
        stack: &mut Vec<String>,
        mode: Mode,
        cpu_op_cost: f64,
        best: &mut Option<Best>,
    ) {
        if depth == app.components.len() {
            let Ok((latency, throughput, cost)) =
                evaluate_placement(topo, app, assign, cpu_op_cost)
            else {
                return;
            };
            let (objective, feasible) = match mode {
                Mode::MaxPerfUnderBudget(budget) => (latency, cost <= budget + 1e-9),
                Mode::MinCostUnderLatency(bound) => (cost, latency <= bound + 1e-9),
            };
            if !feasible {
                return;
            }
            let key = (objective, cost, stack.clone());
            let better = match best {
                None => true,
                Some(b) => key < b.key,
            };
            if better {
                *best = Some(Best {
                    key,
                    plan: PlacementPlan {
                        assign: assign.clone(),
                        latency,
                        throughput,
                        cost,
                        objective_value: objective,
                    },
                });
            }
            return;
        }
        let comp = &app.components[depth];
        for node in &eligible[depth] {
            let free = remaining.get(&node.id).copied().unwrap_or(0.0);
            if comp.demand > free + 1e-9 {
                continue;
            }
            *remaining.get_mut(&node.id).unwrap() -= comp.demand;
            assign.insert(comp.id.clone(), node.id.clone());
            stack.push(node.id.clone());
            recurse(
                topo, app, eligible, depth + 1, remaining, assign, stack, mode, cpu_op_cost, best,
            );
            stack.pop();
            assign.remove(&comp.id);
            *remaining.get_mut(&node.id).unwrap() += comp.demand;
        }
    }

    let mut remaining: BTreeMap<String, f64> =
        topo.nodes.iter().map(|n| (n.id.clone(), n.available)).collect();
    recurse(
        topo,
        app,
        &eligible,
        0,
        &mut remaining,
        &mut assign,
        &mut stack,
        mode,
        cpu_op_cost,
        &mut best,
    );
    best.map(|b| b.plan).ok_or(PlaceError::Infeasible)
}
