//! Simulated heterogeneous verification environment.
//!
//! Executes an offload-annotated program under a parametric cost model and
//! reports execution time split into CPU, device, and transfer components.
//! The functional output always equals the reference interpreter's: offload
//! never changes semantics here, it only changes where time is spent.

use crate::gasearch::OffloadPattern;
use crate::minilang::analyze::analyze;
use crate::minilang::ast::{Ast, ElemKind, Expr, ExprKind, LValue, LoopId, Stmt, StmtKind};
use crate::minilang::interp::apply_binop;
use crate::minilang::{BlockDef, BlockLib, InputBinding, Memory, RuntimeError, Value};
use crate::patterndb::CostFormula;
use crate::transfer::{validate_pattern_shape, TransferError};
use rand::SeedableRng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("kernel `{0}` has no cost formula in the model (not housed)")]
    UnhousedKernel(String),
    #[error(transparent)]
    PatternShapeMismatch(#[from] TransferError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

fn default_elem_bytes() -> f64 {
    8.0
}

/// Parameters of the simulated environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostModel {
    /// Time per operation on one CPU unit.
    pub cpu_op_cost: f64,
    /// Device speedup over the CPU op rate; > 0.
    pub gpu_speedup: f64,
    /// Time added per dynamic execution of an offloaded loop.
    pub kernel_launch: f64,
    /// Fixed time per transfer.
    pub xfer_latency: f64,
    /// Time per transferred byte.
    pub xfer_per_byte: f64,
    /// Bytes per element.
    #[serde(default = "default_elem_bytes")]
    pub elem_bytes: f64,
    /// Per-kernel execution cost formulas; a kernel must appear here to be
    /// usable ("housed" on the accelerator).
    #[serde(default)]
    pub accel_formulas: BTreeMap<String, CostFormula>,
    /// Relative stddev of multiplicative measurement noise; 0 disables.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

impl CostModel {
    pub fn from_json(text: &str) -> Result<CostModel, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.cpu_op_cost < 0.0
            || self.kernel_launch < 0.0
            || self.xfer_latency < 0.0
            || self.xfer_per_byte < 0.0
            || self.elem_bytes < 0.0
            || self.noise_sigma < 0.0
        {
            return Err("cost model fields must be non-negative".into());
        }
        if self.gpu_speedup <= 0.0 {
            return Err("gpu_speedup must be positive".into());
        }
        Ok(())
    }
}

/// Cost breakdown of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub total: f64,
    pub cpu_time: f64,
    pub device_time: f64,
    pub transfer_time: f64,
    pub transfer_events: u64,
    pub transfer_bytes: u64,
    #[serde(skip)]
    pub output: Vec<Value>,
}

struct SimExec<'a> {
    lib: &'a BlockLib,
    model: &'a CostModel,
    mem: Memory,
    trace: Vec<Value>,
    offloaded: std::collections::BTreeSet<LoopId>,
    device_depth: u32,
    /// Suppresses op accounting while an accelerator kernel's reference body
    /// provides semantics (its cost comes from the formula).
    accel_depth: u32,
    /// Loop ids inside a block body are local to the block and never refer
    /// to offloaded main-program loops.
    block_depth: u32,
    cpu_ops: u64,
    device_ops: u64,
    launches: u64,
    accel_time: f64,
    transfer_time: f64,
    transfer_events: u64,
    transfer_bytes: u64,
    while_budget: u64,
    kinds: HashMap<String, ElemKind>,
    lens: HashMap<String, Option<u64>>,
}

impl SimExec<'_> {
    fn op(&mut self) {
        if self.accel_depth > 0 {
            return;
        }
        if self.device_depth > 0 {
            self.device_ops += 1;
        } else {
            self.cpu_ops += 1;
        }
    }

    fn fire_transfer(&mut self, var: &str) {
        let elems = self.lens.get(var).copied().flatten().unwrap_or(1);
        let bytes = elems as f64 * self.model.elem_bytes;
        self.transfer_events += 1;
        self.transfer_bytes += bytes as u64;
        self.transfer_time += self.model.xfer_latency + bytes * self.model.xfer_per_byte;
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, SimError> {
        match &e.kind {
            ExprKind::Int(v) => Ok(Value::Int(*v)),
            ExprKind::Float(v) => Ok(Value::Float(*v)),
            ExprKind::Var(n) => Ok(self.mem.read_scalar(n)),
            ExprKind::Index(n, idx) => {
                let iv = self.eval(idx)?;
                let i = match iv {
                    Value::Int(i) => i,
                    Value::Float(_) => {
                        return Err(RuntimeError::NonIntegerIndex { pos: idx.pos }.into())
                    }
                };
                let len = match self.mem.slots.get(n.as_str()) {
                    Some(crate::minilang::interp::Slot::Array(items)) => items.len() as i64,
                    _ => 0,
                };
                if i < 0 || i >= len {
                    return Err(RuntimeError::OutOfBounds {
                        array: n.clone(),
                        index: i,
                        pos: idx.pos,
                    }
                    .into());
                }
                self.op();
                match self.mem.slots.get(n.as_str()) {
                    Some(crate::minilang::interp::Slot::Array(items)) => Ok(items[i as usize]),
                    _ => Ok(Value::Int(0)),
                }
            }
            ExprKind::Binary(op, l, r) => {
                let a = self.eval(l)?;
                let b = self.eval(r)?;
                self.op();
                Ok(apply_binop(*op, a, b, e.pos)?)
            }
            ExprKind::Neg(i) => {
                let v = self.eval(i)?;
                self.op();
                Ok(match v {
                    Value::Int(x) => Value::Int(-x),
                    Value::Float(x) => Value::Float(-x),
                })
            }
        }
    }

    fn assign(&mut self, target: &LValue, v: Value) -> Result<(), SimError> {
        match target {
            LValue::Scalar(n) => {
                let kind = self.kinds.get(n.as_str()).copied().unwrap_or(ElemKind::Int);
                self.op();
                self.mem.write_scalar(n, v.convert(kind));
            }
            LValue::Element(n, idx) => {
                let iv = self.eval(idx)?;
                let i = match iv {
                    Value::Int(i) => i,
                    Value::Float(_) => {
                        return Err(RuntimeError::NonIntegerIndex { pos: idx.pos }.into())
                    }
                };
                let kind = self.kinds.get(n.as_str()).copied().unwrap_or(ElemKind::Int);
                self.op();
                if let Some(crate::minilang::interp::Slot::Array(items)) = self.mem.slots.get_mut(n.as_str()) {
                    if i < 0 || i as usize >= items.len() {
                        return Err(RuntimeError::OutOfBounds {
                            array: n.clone(),
                            index: i,
                            pos: idx.pos,
                        }
                        .into());
                    }
                    items[i as usize] = v.convert(kind);
                }
            }
        }
        Ok(())
    }

    fn exec_block(
        &mut self,
        def: &BlockDef,
        caller_arrays: &[String],
        as_kernel: bool,
    ) -> Result<(), SimError> {
        if caller_arrays.len() != def.array_params.len() {
            return Err(RuntimeError::BlockArity {
                name: def.name.clone(),
                expected: def.array_params.len(),
                got: caller_arrays.len(),
            }
            .into());
        }
        let mut inner = Memory::initialize(&def.ast.decls, &InputBinding::empty())?;
        for ((pname, plen), cname) in def.array_params.iter().zip(caller_arrays) {
            let caller_len = self.lens.get(cname).copied().flatten().unwrap_or(1);
            if caller_len != *plen {
                return Err(RuntimeError::BlockLengthMismatch {
                    caller: cname.clone(),
                    caller_len,
                    param: pname.clone(),
                    param_len: *plen,
                }
                .into());
            }
            if let Some(slot) = self.mem.slots.get(cname) {
                inner.slots.insert(pname.clone(), slot.clone());
            }
        }
        let saved_mem = std::mem::replace(&mut self.mem, inner);
        let saved_kinds = std::mem::take(&mut self.kinds);
        let saved_lens = std::mem::take(&mut self.lens);
        self.kinds = def
            .ast
            .decls
            .iter()
            .map(|d| (d.name.clone(), d.kind))
            .collect();
        self.lens = def
            .ast
            .decls
            .iter()
            .map(|d| (d.name.clone(), d.len))
            .collect();
        if as_kernel {
            self.accel_depth += 1;
        }
        self.block_depth += 1;
        let result = self.exec_stmts(&def.ast.stmts);
        self.block_depth -= 1;
        if as_kernel {
            self.accel_depth -= 1;
        }
        let inner = std::mem::replace(&mut self.mem, saved_mem);
        self.kinds = saved_kinds;
        self.lens = saved_lens;
        result?;
        for ((pname, _), cname) in def.array_params.iter().zip(caller_arrays) {
            if let Some(slot) = inner.slots.get(pname) {
                self.mem.slots.insert(cname.clone(), slot.clone());
            }
        }
        Ok(())
    }

    fn exec_stmts(&mut self, stmts: &[Stmt]) -> Result<(), SimError> {
        for s in stmts {
            self.exec_stmt(s)?;
        }
        Ok(())
    }

    fn exec_stmt(&mut self, s: &Stmt) -> Result<(), SimError> {
        // Transfer directives fire per dynamic execution of the anchor:
        // copy-ins before, copy-outs after.
        for v in &s.xfer_in {
            self.fire_transfer(v);
        }
        match &s.kind {
            StmtKind::Assign { target, value } => {
                let v = self.eval(value)?;
                self.assign(target, v)?;
            }
            StmtKind::For {
                id,
                var,
                init,
                bound,
                step,
                body,
            } => {
                let entering_device = self.offloaded.contains(id)
                    && self.device_depth == 0
                    && self.block_depth == 0;
                if entering_device {
                    self.device_depth += 1;
                    self.launches += 1;
                }
                let init_v = self.eval(init)?;
                self.mem.write_scalar(var, init_v.convert(ElemKind::Int));
                loop {
                    let cur = self.mem.read_scalar(var);
                    let b = self.eval(bound)?;
                    if !(cur.as_f64() < b.as_f64()) {
                        break;
                    }
                    self.exec_stmts(body)?;
                    let cur = self.mem.read_scalar(var);
                    let next = match cur {
                        Value::Int(v) => Value::Int(v + *step),
                        Value::Float(v) => Value::Int(v.trunc() as i64 + *step),
                    };
                    self.mem.write_scalar(var, next);
                }
                if entering_device {
                    self.device_depth -= 1;
                }
            }
            StmtKind::While { id, cond, body } => {
                let mut steps: u64 = 0;
                loop {
                    let c = self.eval(cond)?;
                    if !c.is_truthy() {
                        break;
                    }
                    steps += 1;
                    if steps > self.while_budget {
                        return Err(RuntimeError::DivergentLoop { id: *id }.into());
                    }
                    self.exec_stmts(body)?;
                }
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let c = self.eval(cond)?;
                if c.is_truthy() {
                    self.exec_stmts(then_body)?;
                } else {
                    self.exec_stmts(else_body)?;
                }
            }
            StmtKind::Call { name, args } => {
                let def = self
                    .lib
                    .by_name(name)
                    .ok_or_else(|| RuntimeError::UnknownBlock {
                        name: name.clone(),
                        pos: s.pos,
                    })?
                    .clone();
                let mut arrays = Vec::new();
                for a in args {
                    if let ExprKind::Var(n) = &a.kind {
                        if self.lens.get(n.as_str()).copied().flatten().is_some() {
                            arrays.push(n.clone());
                            continue;
                        }
                    }
                    self.eval(a)?;
                }
                // A plain call runs on the CPU at CPU op cost.
                self.exec_block(&def, &arrays, false)?;
            }
            StmtKind::Output(e) => {
                let v = self.eval(e)?;
                self.op();
                self.trace.push(v);
            }
            StmtKind::AccelCall {
                kernel_id,
                inputs,
                outputs,
                size_elems,
            } => {
                let formula = self
                    .model
                    .accel_formulas
                    .get(kernel_id)
                    .copied()
                    .ok_or_else(|| SimError::UnhousedKernel(kernel_id.clone()))?;
                self.accel_time += formula.fixed + formula.per_element * *size_elems as f64;
                for v in inputs {
                    self.fire_transfer(v);
                }
                for v in outputs {
                    self.fire_transfer(v);
                }
                let def = self
                    .lib
                    .by_kernel(kernel_id)
                    .ok_or_else(|| RuntimeError::UnknownKernel {
                        kernel_id: kernel_id.clone(),
                        pos: s.pos,
                    })?
                    .clone();
                let mut arrays: Vec<String> = Vec::new();
                for n in inputs.iter().chain(outputs) {
                    if !arrays.contains(n)
                        && self.lens.get(n.as_str()).copied().flatten().is_some()
                    {
                        arrays.push(n.clone());
                    }
                }
                self.exec_block(&def, &arrays, true)?;
            }
        }
        for v in &s.xfer_out {
            self.fire_transfer(v);
        }
        Ok(())
    }
}

trait ValueConv {
    fn convert(self, kind: ElemKind) -> Value;
}

impl ValueConv for Value {
    fn convert(self, kind: ElemKind) -> Value {
        match (kind, self) {
            (ElemKind::Int, Value::Float(v)) => Value::Int(v.trunc() as i64),
            (ElemKind::Float, Value::Int(v)) => Value::Float(v as f64),
            _ => self,
        }
    }
}

fn pattern_noise_key(pattern: &OffloadPattern) -> u64 {
    use std::collections::hash_map::DefaultHasher;
    use std::hash::{Hash, Hasher};
    let mut h = DefaultHasher::new();
    pattern.bits.hash(&mut h);
    h.finish()
}

/// Simulate one run of an annotated program under the cost model.
///
/// Accounting:
/// - every op outside offloaded loops adds `cpu_op_cost` to CPU time;
/// - each dynamic execution of an offloaded loop adds `kernel_launch`, and
///   ops inside it add `cpu_op_cost / gpu_speedup` to device time;
/// - each directive execution adds `xfer_latency + bytes * xfer_per_byte`
///   with `bytes = element count * elem_bytes`;
/// - an accelerator call adds `fixed + per_element * n` to device time plus
///   its input/output transfers.
pub fn simulate(
    ast: &Ast,
    pattern: &OffloadPattern,
    model: &CostModel,
    input: &InputBinding,
    lib: &BlockLib,
) -> Result<ExecutionReport, SimError> {
    let analysis = analyze(ast);
    validate_pattern_shape(pattern, &analysis)?;
    let mem = Memory::initialize(&ast.decls, input)?;
    let mut exec = SimExec {
        lib,
        model,
        mem,
        trace: Vec::new(),
        offloaded: pattern.offloaded_ids(),
        device_depth: 0,
        accel_depth: 0,
        block_depth: 0,
        cpu_ops: 0,
        device_ops: 0,
        launches: 0,
        accel_time: 0.0,
        transfer_time: 0.0,
        transfer_events: 0,
        transfer_bytes: 0,
        while_budget: 100_000_000,
        kinds: ast.decls.iter().map(|d| (d.name.clone(), d.kind)).collect(),
        lens: ast.decls.iter().map(|d| (d.name.clone(), d.len)).collect(),
    };
    exec.exec_stmts(&ast.stmts)?;

    let mut cpu_time = exec.cpu_ops as f64 * model.cpu_op_cost;
    let mut device_time = exec.launches as f64 * model.kernel_launch
        + exec.device_ops as f64 * model.cpu_op_cost / model.gpu_speedup
        + exec.accel_time;
    let mut transfer_time = exec.transfer_time;
    if model.noise_sigma > 0.0 {
        let seed = model.noise_seed ^ pattern_noise_key(pattern);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dist = rand_distr::Normal::new(1.0, model.noise_sigma).expect("sigma validated");
        let mut factor = || dist.sample(&mut rng).max(0.0);
        cpu_time *= factor();
        device_time *= factor();
        transfer_time *= factor();
    }
    Ok(ExecutionReport {
        total: cpu_time + device_time + transfer_time,
        cpu_time,
        device_time,
        transfer_time,
        transfer_events: exec.transfer_events,
        transfer_bytes: exec.transfer_bytes,
        output: exec.trace,
    })
}

/// A complete code configuration ready for measurement: annotated program,
/// offload pattern, and allocated resource units.
#[derive(Debug, Clone)]
pub struct DeployablePlan {
    pub ast: Ast,
    pub pattern: OffloadPattern,
    pub cpu_units: u32,
    pub device_units: u32,
    pub cpu_serial_frac: f64,
    pub device_serial_frac: f64,
}

impl DeployablePlan {
    pub fn unscaled(ast: Ast, pattern: OffloadPattern) -> Self {
        DeployablePlan {
            ast,
            pattern,
            cpu_units: 1,
            device_units: 1,
            cpu_serial_frac: 0.0,
            device_serial_frac: 0.0,
        }
    }
}

/// One test case to measure: an input plus how many identical requests the
/// service handles back to back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Testcase {
    pub id: String,
    pub input: InputBinding,
    pub request_count: u64,
    #[serde(default)]
    pub required_latency: Option<f64>,
    #[serde(default)]
    pub tags: Vec<String>,
    /// Expected output trace for regression cases.
    #[serde(default)]
    pub expected_output: Option<Vec<serde_json::Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfMeasurement {
    pub latency: f64,
    pub throughput: f64,
    pub cpu_time: f64,
    pub device_time: f64,
    pub transfer_time: f64,
    #[serde(skip)]
    pub output: Vec<Value>,
}

/// Amdahl-style scaling: `t * (serial + (1 - serial) / units)`.
pub fn scaled_time(t: f64, units: u32, serial_frac: f64) -> f64 {
    t * (serial_frac + (1.0 - serial_frac) / units.max(1) as f64)
}

/// Measure a deployable plan against one test case: latency is the scaled
/// bottleneck side plus transfers; requests are served serially.
pub fn measure(
    plan: &DeployablePlan,
    testcase: &Testcase,
    model: &CostModel,
    lib: &BlockLib,
) -> Result<PerfMeasurement, SimError> {
    let report = simulate(&plan.ast, &plan.pattern, model, &testcase.input, lib)?;
    let cpu_scaled = scaled_time(report.cpu_time, plan.cpu_units, plan.cpu_serial_frac);
    let dev_scaled = scaled_time(report.device_time, plan.device_units, plan.device_serial_frac);
    let latency = cpu_scaled.max(dev_scaled) + report.transfer_time;
    let makespan = testcase.request_count as f64 * latency;
    let throughput = if makespan > 0.0 {
        testcase.request_count as f64 / makespan
    } else {
        f64::INFINITY
    };
    Ok(PerfMeasurement {
        latency,
        throughput,
        cpu_time: report.cpu_time,
        device_time: report.device_time,
        transfer_time: report.transfer_time,
        output: report.output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasearch::candidate_space;
    use crate::minilang::parse;

    fn model() -> CostModel {
        CostModel {
            cpu_op_cost: 1.0,
            gpu_speedup: 10.0,
            kernel_launch: 100.0,
            xfer_latency: 50.0,
            xfer_per_byte: 0.01,
            elem_bytes: 8.0,
            accel_formulas: Default::default(),
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    fn loop_1000() -> Ast {
        parse(
            "t",
            "int a[1000]; int b[1000]; for(i=0;i<1000;i=i+1){a[i]=b[i]*2;}",
        )
        .unwrap()
    }

    #[test]
    fn all_cpu_costs_three_ops_per_iteration() {
        let ast = loop_1000();
        let analysis = analyze(&ast);
        let space = candidate_space(&analysis);
        let pattern = OffloadPattern::all_zero(space.loop_map);
        let r = simulate(&ast, &pattern, &model(), &InputBinding::empty(), &BlockLib::empty())
            .unwrap();
        assert_eq!(r.cpu_time, 3000.0);
        assert_eq!(r.device_time, 0.0);
        assert_eq!(r.transfer_time, 0.0);
        assert_eq!(r.total, 3000.0);
    }

    #[test]
    fn offloaded_loop_with_transfers() {
        let mut ast = loop_1000();
        // copyin b + copyout a anchored at the loop itself.
        ast.stmts[0].xfer_in = vec!["b".into()];
        ast.stmts[0].xfer_out = vec!["a".into()];
        let analysis = analyze(&ast);
        let space = candidate_space(&analysis);
        let pattern = OffloadPattern::new(vec![true], space.loop_map);
        let r = simulate(&ast, &pattern, &model(), &InputBinding::empty(), &BlockLib::empty())
            .unwrap();
        // device: launch 100 + 3000 ops / speedup 10 = 400
        assert_eq!(r.device_time, 400.0);
        // transfers: 2 x (50 + 8000 * 0.01) = 260
        assert_eq!(r.transfer_time, 260.0);
        assert_eq!(r.transfer_events, 2);
        assert_eq!(r.transfer_bytes, 16000);
        assert_eq!(r.cpu_time, 0.0);
        assert_eq!(r.total, 660.0);
    }

    #[test]
    fn empty_program_zero_report() {
        let ast = parse("t", "").unwrap();
        let pattern = OffloadPattern::all_zero(vec![]);
        let r = simulate(&ast, &pattern, &model(), &InputBinding::empty(), &BlockLib::empty())
            .unwrap();
        assert_eq!(r.total, 0.0);
        assert_eq!(r.transfer_events, 0);
        assert!(r.output.is_empty());
    }

    #[test]
    fn additivity_and_determinism() {
        let ast = loop_1000();
        let analysis = analyze(&ast);
        let space = candidate_space(&analysis);
        for mask in 0..2u64 {
            let pattern = OffloadPattern::from_mask(mask, space.loop_map.clone());
            let a = simulate(&ast, &pattern, &model(), &InputBinding::empty(), &BlockLib::empty())
                .unwrap();
            let b = simulate(&ast, &pattern, &model(), &InputBinding::empty(), &BlockLib::empty())
                .unwrap();
            assert_eq!(a, b);
            assert_eq!(a.total, a.cpu_time + a.device_time + a.transfer_time);
        }
    }

    #[test]
    fn cost_monotonicity() {
        let ast = loop_1000();
        let analysis = analyze(&ast);
        let space = candidate_space(&analysis);
        let pattern = OffloadPattern::new(vec![true], space.loop_map.clone());
        let mut last_cpu = -1.0;
        for c in [0.5, 1.0, 2.0, 4.0] {
            let mut m = model();
            m.cpu_op_cost = c;
            let zero = OffloadPattern::all_zero(space.loop_map.clone());
            let r = simulate(&ast, &zero, &m, &InputBinding::empty(), &BlockLib::empty()).unwrap();
            assert!(r.cpu_time >= last_cpu);
            last_cpu = r.cpu_time;
        }
        let mut last_dev = f64::INFINITY;
        for s in [1.0, 2.0, 10.0, 100.0] {
            let mut m = model();
            m.gpu_speedup = s;
            let r = simulate(&ast, &pattern, &m, &InputBinding::empty(), &BlockLib::empty())
                .unwrap();
            assert!(r.device_time <= last_dev);
            last_dev = r.device_time;
        }
    }

    #[test]
    fn noise_is_seeded_and_deterministic() {
        let ast = loop_1000();
        let analysis = analyze(&ast);
        let space = candidate_space(&analysis);
        let pattern = OffloadPattern::new(vec![true], space.loop_map.clone());
        let mut m = model();
        m.noise_sigma = 0.1;
        m.noise_seed = 9;
        let a = simulate(&ast, &pattern, &m, &InputBinding::empty(), &BlockLib::empty()).unwrap();
        let b = simulate(&ast, &pattern, &m, &InputBinding::empty(), &BlockLib::empty()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total, a.cpu_time + a.device_time + a.transfer_time);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let ast = parse(
            "t",
            "int s; int a[4]; for(i=0;i<4;i=i+1){s=s+a[i];}",
        )
        .unwrap();
        let pattern = OffloadPattern::new(vec![true], vec![crate::minilang::LoopId(0)]);
        let err = simulate(&ast, &pattern, &model(), &InputBinding::empty(), &BlockLib::empty())
            .unwrap_err();
        assert!(matches!(err, SimError::PatternShapeMismatch(_)));
    }

    #[test]
    fn unhoused_kernel_rejected() {
        let db = crate::patterndb::PatternDb::from_json(
            r#"[{"name":"scale2","reference_source":"float v[8]; for(i=0;i<8;i=i+1){v[i]=v[i]*2.0;}","kernel_id":"scale2_v1","fixed_cost":1.0,"per_element_cost":0.1,"min_similarity":0.8}]"#,
        )
        .unwrap();
        let lib = db.block_lib();
        let ast = parse("t", "float x[8]; accel scale2_v1 in(x) out(x) size(8);").unwrap();
        let pattern = OffloadPattern::all_zero(vec![]);
        // No formula for the kernel in the model: not housed.
        let err =
            simulate(&ast, &pattern, &model(), &InputBinding::empty(), &lib).unwrap_err();
        assert_eq!(err, SimError::UnhousedKernel("scale2_v1".into()));
    }

    #[test]
    fn measure_single_and_serial_requests() {
        let ast = loop_1000();
        let analysis = analyze(&ast);
        let space = candidate_space(&analysis);
        let pattern = OffloadPattern::all_zero(space.loop_map);
        let plan = DeployablePlan::unscaled(ast, pattern);
        let one = Testcase {
            id: "one".into(),
            input: InputBinding::empty(),
            request_count: 1,
            required_latency: None,
            tags: vec![],
            expected_output: None,
        };
        let m = measure(&plan, &one, &model(), &BlockLib::empty()).unwrap();
        assert_eq!(m.latency, 3000.0);
        let ten = Testcase {
            request_count: 10,
            ..one.clone()
        };
        let m10 = measure(&plan, &ten, &model(), &BlockLib::empty()).unwrap();
        // Serial service: throughput = 10 / (10 * total).
        assert_eq!(m10.throughput, 10.0 / 30000.0);
        let again = measure(&plan, &ten, &model(), &BlockLib::empty()).unwrap();
        assert_eq!(m10, again);
    }

    #[test]
    fn resource_scaling_in_measure() {
        let ast = loop_1000();
        let analysis = analyze(&ast);
        let space = candidate_space(&analysis);
        let pattern = OffloadPattern::all_zero(space.loop_map);
        let mut plan = DeployablePlan::unscaled(ast, pattern);
        plan.cpu_units = 4;
        let tc = Testcase {
            id: "t".into(),
            input: InputBinding::empty(),
            request_count: 1,
            required_latency: None,
            tags: vec![],
            expected_output: None,
        };
        let m = measure(&plan, &tc, &model(), &BlockLib::empty()).unwrap();
        assert_eq!(m.latency, 750.0);
    }
}
