//! Reference interpreter: deterministic execution, output tracing, and exact
//! per-loop profiling.

use super::ast::*;
use super::RuntimeError;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Runtime value. Ints and floats follow the declared element kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(v) => v as f64,
            Value::Float(v) => v,
        }
    }

    pub fn is_truthy(self) -> bool {
        match self {
            Value::Int(v) => v != 0,
            Value::Float(v) => v != 0.0,
        }
    }

    fn convert_to(self, kind: ElemKind) -> Value {
        match (kind, self) {
            (ElemKind::Int, Value::Float(v)) => Value::Int(v.trunc() as i64),
            (ElemKind::Float, Value::Int(v)) => Value::Float(v as f64),
            _ => self,
        }
    }
}

/// Print one trace value: ints as decimal, floats with nine significant
/// digits in scientific notation.
pub fn format_trace_value(v: Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Float(f) => format!("{f:.8e}"),
    }
}

/// Initial values for declared variables; unbound variables start at zero.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct InputBinding(pub BTreeMap<String, serde_json::Value>);

impl InputBinding {
    pub fn empty() -> Self {
        InputBinding(BTreeMap::new())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    Scalar(Value),
    Array(Vec<Value>),
}

/// Program memory: one slot per declared variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Memory {
    pub slots: HashMap<String, Slot>,
}

impl Memory {
    /// Zero-initialize from declarations, then overlay the input binding.
    pub fn initialize(decls: &[Decl], input: &InputBinding) -> Result<Memory, RuntimeError> {
        let mut slots = HashMap::new();
        for d in decls {
            let zero = match d.kind {
                ElemKind::Int => Value::Int(0),
                ElemKind::Float => Value::Float(0.0),
            };
            let slot = match d.len {
                Some(n) => Slot::Array(vec![zero; n as usize]),
                None => Slot::Scalar(zero),
            };
            slots.insert(d.name.clone(), slot);
        }
        for (name, json) in &input.0 {
            let decl = decls
                .iter()
                .find(|d| d.name == *name)
                .ok_or_else(|| RuntimeError::UnknownInput { name: name.clone() })?;
            let conv = |j: &serde_json::Value| -> Result<Value, RuntimeError> {
                let f = j.as_f64().ok_or_else(|| RuntimeError::BadInput {
                    name: name.clone(),
                    reason: "expected a number".into(),
                })?;
                Ok(match decl.kind {
                    ElemKind::Int => {
                        if f.fract() != 0.0 {
                            return Err(RuntimeError::BadInput {
                                name: name.clone(),
                                reason: "int variable bound to a non-integral number".into(),
                            });
                        }
                        Value::Int(f as i64)
                    }
                    ElemKind::Float => Value::Float(f),
                })
            };
            let slot = match (decl.len, json) {
                (Some(n), serde_json::Value::Array(items)) => {
                    if items.len() as u64 != n {
                        return Err(RuntimeError::BadInput {
                            name: name.clone(),
                            reason: format!("array length {} != declared {}", items.len(), n),
                        });
                    }
                    Slot::Array(items.iter().map(conv).collect::<Result<_, _>>()?)
                }
                (None, j) if !j.is_array() => Slot::Scalar(conv(j)?),
                _ => {
                    return Err(RuntimeError::BadInput {
                        name: name.clone(),
                        reason: "scalar/array shape mismatch".into(),
                    })
                }
            };
            slots.insert(name.clone(), slot);
        }
        Ok(Memory { slots })
    }

    pub fn read_scalar(&self, name: &str) -> Value {
        match self.slots.get(name) {
            Some(Slot::Scalar(v)) => *v,
            _ => Value::Int(0),
        }
    }

    pub fn write_scalar(&mut self, name: &str, v: Value) {
        self.slots.insert(name.to_string(), Slot::Scalar(v));
    }
}

/// Exact per-loop execution counts for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    /// Loop id -> body iterations executed.
    pub iterations: BTreeMap<LoopId, u64>,
    /// Loop id -> operations executed inside the loop body (nested included).
    pub ops: BTreeMap<LoopId, u64>,
    /// Operations executed by the whole program.
    pub total_ops: u64,
}

/// A registered functional block: a parsed ELC body plus its array
/// parameters in declaration order.
#[derive(Debug, Clone)]
pub struct BlockDef {
    pub name: String,
    pub kernel_id: String,
    pub ast: Ast,
    /// Array parameter declarations (name, length) in order.
    pub array_params: Vec<(String, u64)>,
}

/// Registry of callable blocks, addressable by block name and by kernel id.
#[derive(Debug, Clone, Default)]
pub struct BlockLib {
    defs: Vec<BlockDef>,
}

impl BlockLib {
    pub fn new(defs: Vec<BlockDef>) -> Self {
        BlockLib { defs }
    }

    pub fn empty() -> Self {
        BlockLib::default()
    }

    pub fn by_name(&self, name: &str) -> Option<&BlockDef> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn by_kernel(&self, kernel_id: &str) -> Option<&BlockDef> {
        self.defs.iter().find(|d| d.kernel_id == kernel_id)
    }
}

#[derive(Debug, Clone)]
pub struct InterpOptions {
    /// Iteration budget per while-loop execution before DivergentLoop.
    pub while_budget: u64,
    /// Loops whose iteration order is reversed (order-independence checks).
    pub reverse_loops: Vec<LoopId>,
    /// Record per-loop dynamic def/use variable sets.
    pub record_dep_events: bool,
    /// Record per-iteration read/write address sets for this loop.
    pub record_iter_effects: Option<LoopId>,
}

impl Default for InterpOptions {
    fn default() -> Self {
        InterpOptions {
            while_budget: 100_000_000,
            reverse_loops: Vec::new(),
            record_dep_events: false,
            record_iter_effects: None,
        }
    }
}

/// Addresses one loop iteration touched: (variable, element index) pairs,
/// `None` index for scalars. Loop-variable bookkeeping is excluded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterEffects {
    pub writes: std::collections::BTreeSet<(String, Option<i64>)>,
    pub reads: std::collections::BTreeSet<(String, Option<i64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpResult {
    pub trace: Vec<Value>,
    pub profile: ProfileReport,
    pub memory: Memory,
    /// Dynamic defs/uses per loop, when recording was requested.
    pub dyn_defs: BTreeMap<LoopId, std::collections::BTreeSet<String>>,
    pub dyn_uses: BTreeMap<LoopId, std::collections::BTreeSet<String>>,
    /// Per execution of the recorded loop, per iteration.
    pub iter_effects: Vec<Vec<IterEffects>>,
}

struct Interp<'a> {
    lib: &'a BlockLib,
    opts: &'a InterpOptions,
    mem: Memory,
    trace: Vec<Value>,
    profile: ProfileReport,
    /// Stack of loop ids currently executing (for op attribution).
    loop_stack: Vec<LoopId>,
    /// Inside a block body: ops count toward enclosing loops, but block-local
    /// loops are not profiled and dep events are not recorded.
    in_block: bool,
    dyn_defs: BTreeMap<LoopId, std::collections::BTreeSet<String>>,
    dyn_uses: BTreeMap<LoopId, std::collections::BTreeSet<String>>,
    kinds: HashMap<String, ElemKind>,
    /// Declared array lengths in the current scope; None for scalars.
    lens: HashMap<String, Option<u64>>,
    iter_effects: Vec<Vec<IterEffects>>,
    /// Depth of the recorded loop on the stack, when active.
    iter_recording: bool,
}

impl<'a> Interp<'a> {
    fn op(&mut self) {
        self.profile.total_ops += 1;
        for id in &self.loop_stack {
            *self.profile.ops.entry(*id).or_insert(0) += 1;
        }
    }

    fn record_use(&mut self, name: &str) {
        if self.opts.record_dep_events && !self.in_block {
            for id in &self.loop_stack {
                self.dyn_uses
                    .entry(*id)
                    .or_default()
                    .insert(name.to_string());
            }
        }
    }

    fn record_def(&mut self, name: &str) {
        if self.opts.record_dep_events && !self.in_block {
            for id in &self.loop_stack {
                self.dyn_defs
                    .entry(*id)
                    .or_default()
                    .insert(name.to_string());
            }
        }
    }

    fn record_iter_read(&mut self, name: &str, index: Option<i64>) {
        if self.iter_recording && !self.in_block {
            if let Some(iter) = self.iter_effects.last_mut().and_then(|g| g.last_mut()) {
                iter.reads.insert((name.to_string(), index));
            }
        }
    }

    fn record_iter_write(&mut self, name: &str, index: Option<i64>) {
        if self.iter_recording && !self.in_block {
            if let Some(iter) = self.iter_effects.last_mut().and_then(|g| g.last_mut()) {
                iter.writes.insert((name.to_string(), index));
            }
        }
    }

    fn index_of(&mut self, arr: &str, idx: &Expr) -> Result<usize, RuntimeError> {
        let v = self.eval(idx)?;
        let i = match v {
            Value::Int(i) => i,
            Value::Float(_) => return Err(RuntimeError::NonIntegerIndex { pos: idx.pos }),
        };
        let len = match self.mem.slots.get(arr) {
            Some(Slot::Array(items)) => items.len() as i64,
            _ => 0,
        };
        if i < 0 || i >= len {
            return Err(RuntimeError::OutOfBounds {
                array: arr.to_string(),
                index: i,
                pos: idx.pos,
            });
        }
        Ok(i as usize)
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, RuntimeError> {
        match &e.kind {
            ExprKind::Int(v) => Ok(Value::Int(*v)),
            ExprKind::Float(v) => Ok(Value::Float(*v)),
            ExprKind::Var(name) => {
                self.record_use(name);
                self.record_iter_read(name, None);
                Ok(self.mem.read_scalar(name))
            }
            ExprKind::Index(name, idx) => {
                let i = self.index_of(name, idx)?;
                self.record_use(name);
                self.record_iter_read(name, Some(i as i64));
                self.op(); // element load
                match self.mem.slots.get(name) {
                    Some(Slot::Array(items)) => Ok(items[i]),
                    _ => Ok(Value::Int(0)),
                }
            }
            ExprKind::Binary(op, l, r) => {
                let a = self.eval(l)?;
                let b = self.eval(r)?;
                self.op();
                apply_binop(*op, a, b, e.pos)
            }
            ExprKind::Neg(inner) => {
                let v = self.eval(inner)?;
                self.op();
                Ok(match v {
                    Value::Int(i) => Value::Int(-i),
                    Value::Float(f) => Value::Float(-f),
                })
            }
        }
    }

    fn assign(&mut self, target: &LValue, value: Value) -> Result<(), RuntimeError> {
        match target {
            LValue::Scalar(name) => {
                let kind = self.kinds.get(name).copied().unwrap_or(ElemKind::Int);
                self.record_def(name);
                self.record_iter_write(name, None);
                self.op(); // store
                self.mem.write_scalar(name, value.convert_to(kind));
            }
            LValue::Element(name, idx) => {
                let i = self.index_of(name, idx)?;
                let kind = self.kinds.get(name).copied().unwrap_or(ElemKind::Int);
                self.record_def(name);
                self.record_iter_write(name, Some(i as i64));
                self.op(); // store
                if let Some(Slot::Array(items)) = self.mem.slots.get_mut(name) {
                    items[i] = value.convert_to(kind);
                }
            }
        }
        Ok(())
    }

    fn run_block_call(&mut self, name: &str, args: &[Expr], pos: Pos) -> Result<(), RuntimeError> {
        let def = self
            .lib
            .by_name(name)
            .ok_or_else(|| RuntimeError::UnknownBlock {
                name: name.to_string(),
                pos,
            })?
            .clone();
        // Array arguments in order map onto the block's array parameters.
        let mut arrays = Vec::new();
        for a in args {
            if let ExprKind::Index(..) = a.kind {
                // Element arguments are evaluated but not bound.
                self.eval(a)?;
            } else if let ExprKind::Var(n) = &a.kind {
                if matches!(self.mem.slots.get(n.as_str()), Some(Slot::Array(_))) {
                    arrays.push(n.clone());
                } else {
                    self.eval(a)?;
                }
            } else {
                self.eval(a)?;
            }
        }
        self.exec_block_def(&def, &arrays, pos)
    }

    fn exec_block_def(
        &mut self,
        def: &BlockDef,
        caller_arrays: &[String],
        pos: Pos,
    ) -> Result<(), RuntimeError> {
        let _ = pos;
        if caller_arrays.len() != def.array_params.len() {
            return Err(RuntimeError::BlockArity {
                name: def.name.clone(),
                expected: def.array_params.len(),
                got: caller_arrays.len(),
            });
        }
        // Fresh zeroed locals; parameters copy in from the caller arrays.
        let mut inner = Memory::initialize(&def.ast.decls, &InputBinding::empty())?;
        for ((pname, plen), cname) in def.array_params.iter().zip(caller_arrays) {
            let caller_len = self.lens.get(cname).copied().flatten().unwrap_or(1);
            if caller_len != *plen {
                return Err(RuntimeError::BlockLengthMismatch {
                    caller: cname.clone(),
                    caller_len,
                    param: pname.clone(),
                    param_len: *plen,
                });
            }
            self.record_use(cname);
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
        let was_in_block = self.in_block;
        self.in_block = true;
        let result = self.exec_stmts(&def.ast.stmts);
        self.in_block = was_in_block;
        let inner = std::mem::replace(&mut self.mem, saved_mem);
        self.kinds = saved_kinds;
        self.lens = saved_lens;
        result?;
        for ((pname, _), cname) in def.array_params.iter().zip(caller_arrays) {
            self.record_def(cname);
            if let Some(slot) = inner.slots.get(pname) {
                self.mem.slots.insert(cname.clone(), slot.clone());
            }
        }
        Ok(())
    }

    fn exec_stmts(&mut self, stmts: &[Stmt]) -> Result<(), RuntimeError> {
        for s in stmts {
            self.exec_stmt(s)?;
        }
        Ok(())
    }

    fn exec_stmt(&mut self, s: &Stmt) -> Result<(), RuntimeError> {
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
                let recording_here =
                    self.opts.record_iter_effects == Some(*id) && !self.in_block;
                if recording_here {
                    self.iter_effects.push(Vec::new());
                }
                // Header mechanics: the loop variable's own writes and reads
                // are bookkeeping, not body effects, and are not counted.
                let init_v = self.eval(init)?;
                self.mem.write_scalar(var, init_v.convert_to(ElemKind::Int));
                if self.opts.reverse_loops.contains(id) && !self.in_block {
                    // Precompute the iteration sequence, then run it reversed.
                    let mut ivals = Vec::new();
                    let mut iv = match self.mem.read_scalar(var) {
                        Value::Int(v) => v,
                        Value::Float(v) => v.trunc() as i64,
                    };
                    loop {
                        let b = self.eval(bound)?;
                        if !(Value::Int(iv).as_f64() < b.as_f64()) {
                            break;
                        }
                        ivals.push(iv);
                        iv += *step;
                    }
                    for &v in ivals.iter().rev() {
                        self.mem.write_scalar(var, Value::Int(v));
                        if !self.in_block {
                            *self.profile.iterations.entry(*id).or_insert(0) += 1;
                        }
                        if recording_here {
                            self.iter_effects.last_mut().unwrap().push(IterEffects::default());
                            self.iter_recording = true;
                        }
                        self.loop_stack.push(*id);
                        let r = self.exec_stmts(body);
                        self.loop_stack.pop();
                        if recording_here {
                            self.iter_recording = false;
                        }
                        r?;
                    }
                    // The loop variable exits with the same value as a
                    // forward run.
                    self.mem.write_scalar(var, Value::Int(iv));
                    return Ok(());
                }
                loop {
                    let cur = self.mem.read_scalar(var);
                    let b = self.eval(bound)?;
                    if !(cur.as_f64() < b.as_f64()) {
                        break;
                    }
                    if !self.in_block {
                        *self.profile.iterations.entry(*id).or_insert(0) += 1;
                    }
                    if recording_here {
                        self.iter_effects.last_mut().unwrap().push(IterEffects::default());
                        self.iter_recording = true;
                    }
                    self.loop_stack.push(*id);
                    let r = self.exec_stmts(body);
                    self.loop_stack.pop();
                    if recording_here {
                        self.iter_recording = false;
                    }
                    r?;
                    let cur = self.mem.read_scalar(var);
                    let next = match cur {
                        Value::Int(v) => Value::Int(v + *step),
                        Value::Float(v) => Value::Int(v.trunc() as i64 + *step),
                    };
                    self.mem.write_scalar(var, next);
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
                    if steps > self.opts.while_budget {
                        return Err(RuntimeError::DivergentLoop { id: *id });
                    }
                    if !self.in_block {
                        *self.profile.iterations.entry(*id).or_insert(0) += 1;
                    }
                    self.loop_stack.push(*id);
                    let r = self.exec_stmts(body);
                    self.loop_stack.pop();
                    r?;
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
                self.run_block_call(name, args, s.pos)?;
            }
            StmtKind::Output(e) => {
                let v = self.eval(e)?;
                self.op(); // emit
                self.trace.push(v);
            }
            StmtKind::AccelCall {
                kernel_id,
                inputs,
                outputs,
                ..
            } => {
                let def = self
                    .lib
                    .by_kernel(kernel_id)
                    .ok_or_else(|| RuntimeError::UnknownKernel {
                        kernel_id: kernel_id.clone(),
                        pos: s.pos,
                    })?
                    .clone();
                // Bound arrays: inputs then outputs, first occurrence wins.
                let mut arrays: Vec<String> = Vec::new();
                for n in inputs.iter().chain(outputs) {
                    if !arrays.contains(n) && self.lens.get(n.as_str()).copied().flatten().is_some()
                    {
                        arrays.push(n.clone());
                    }
                }
                self.exec_block_def(&def, &arrays, s.pos)?;
            }
        }
        Ok(())
    }
}

pub fn apply_binop(op: BinOp, a: Value, b: Value, pos: Pos) -> Result<Value, RuntimeError> {
    use BinOp::*;
    if op.is_comparison() {
        let (x, y) = (a.as_f64(), b.as_f64());
        let r = match op {
            Lt => x < y,
            Le => x <= y,
            Gt => x > y,
            Ge => x >= y,
            Eq => x == y,
            Ne => x != y,
            _ => unreachable!(),
        };
        return Ok(Value::Int(r as i64));
    }
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Ok(Value::Int(match op {
            Add => x.wrapping_add(y),
            Sub => x.wrapping_sub(y),
            Mul => x.wrapping_mul(y),
            Div => {
                if y == 0 {
                    return Err(RuntimeError::DivisionByZero { pos });
                }
                x.wrapping_div(y)
            }
            _ => unreachable!(),
        })),
        _ => {
            let (x, y) = (a.as_f64(), b.as_f64());
            Ok(Value::Float(match op {
                Add => x + y,
                Sub => x - y,
                Mul => x * y,
                Div => {
                    if y == 0.0 {
                        return Err(RuntimeError::DivisionByZero { pos });
                    }
                    x / y
                }
                _ => unreachable!(),
            }))
        }
    }
}

/// Execute the program on the given input. Deterministic: the same input
/// always yields a bit-identical trace and profile.
pub fn interpret(
    ast: &Ast,
    input: &InputBinding,
    lib: &BlockLib,
    opts: &InterpOptions,
) -> Result<InterpResult, RuntimeError> {
    let mem = Memory::initialize(&ast.decls, input)?;
    let mut interp = Interp {
        lib,
        opts,
        mem,
        trace: Vec::new(),
        profile: ProfileReport::default(),
        loop_stack: Vec::new(),
        in_block: false,
        dyn_defs: BTreeMap::new(),
        dyn_uses: BTreeMap::new(),
        kinds: ast.decls.iter().map(|d| (d.name.clone(), d.kind)).collect(),
        lens: ast.decls.iter().map(|d| (d.name.clone(), d.len)).collect(),
        iter_effects: Vec::new(),
        iter_recording: false,
    };
    interp.exec_stmts(&ast.stmts)?;
    Ok(InterpResult {
        trace: interp.trace,
        profile: interp.profile,
        memory: interp.mem,
        dyn_defs: interp.dyn_defs,
        dyn_uses: interp.dyn_uses,
        iter_effects: interp.iter_effects,
    })
}
