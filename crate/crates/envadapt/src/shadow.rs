//! Shadow interpreter: executes an annotated program with separate host and
//! device memories, applies transfer directives literally, and flags every
//! read of stale data. A correct set of directives produces the reference
//! trace with zero faults; a missing or misplaced transfer surfaces here.
//!
//! Both memories start from the same initial image (declarations plus input
//! binding). Host statements touch host memory, offloaded loop bodies touch
//! device memory, and loop-variable bookkeeping writes both sides. A copy-in
//! fires before each dynamic execution of its anchor, a copy-out after.

use crate::gasearch::OffloadPattern;
use crate::minilang::ast::{Ast, ElemKind, Expr, ExprKind, LValue, LoopId, Stmt, StmtKind};
use crate::minilang::interp::apply_binop;
use crate::minilang::{BlockDef, BlockLib, InputBinding, Memory, RuntimeError, Value};
use std::collections::{BTreeSet, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Host,
    Device,
}

/// One stale read: the reading side's copy is older than the other side's.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowFault {
    pub side: Side,
    pub var: String,
    /// Element index for arrays.
    pub index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowReport {
    pub trace: Vec<Value>,
    pub faults: Vec<ShadowFault>,
}

#[derive(Clone)]
enum VSlot {
    Scalar(Value, u64),
    Array(Vec<Value>, Vec<u64>),
}

struct SideMem {
    slots: HashMap<String, VSlot>,
}

impl SideMem {
    fn from_memory(mem: &Memory) -> SideMem {
        let slots = mem
            .slots
            .iter()
            .map(|(k, v)| {
                let vs = match v {
                    crate::minilang::interp::Slot::Scalar(x) => VSlot::Scalar(*x, 0),
                    crate::minilang::interp::Slot::Array(items) => {
                        VSlot::Array(items.clone(), vec![0; items.len()])
                    }
                };
                (k.clone(), vs)
            })
            .collect();
        SideMem { slots }
    }
}

struct Shadow<'a> {
    lib: &'a BlockLib,
    host: SideMem,
    device: SideMem,
    /// Block-local plain memory while a functional block executes.
    block_mem: Vec<Memory>,
    device_depth: u32,
    next_version: u64,
    trace: Vec<Value>,
    faults: Vec<ShadowFault>,
    offloaded: BTreeSet<LoopId>,
    kinds: HashMap<String, ElemKind>,
    while_budget: u64,
}

impl Shadow<'_> {
    fn side(&self) -> Side {
        if self.device_depth > 0 {
            Side::Device
        } else {
            Side::Host
        }
    }

    fn mems(&mut self, side: Side) -> (&mut SideMem, &SideMem) {
        // (reading/writing side, other side) without aliasing trouble.
        match side {
            Side::Host => (&mut self.host, &self.device),
            Side::Device => (&mut self.device, &self.host),
        }
    }

    fn bump(&mut self) -> u64 {
        self.next_version += 1;
        self.next_version
    }

    fn read_scalar(&mut self, name: &str) -> Value {
        if let Some(mem) = self.block_mem.last() {
            return mem.read_scalar(name);
        }
        let side = self.side();
        let (own, other) = match side {
            Side::Host => (&self.host, &self.device),
            Side::Device => (&self.device, &self.host),
        };
        let (v, own_ver) = match own.slots.get(name) {
            Some(VSlot::Scalar(v, ver)) => (*v, *ver),
            _ => (Value::Int(0), 0),
        };
        let other_ver = match other.slots.get(name) {
            Some(VSlot::Scalar(_, ver)) => *ver,
            _ => 0,
        };
        if other_ver > own_ver {
            self.faults.push(ShadowFault {
                side,
                var: name.to_string(),
                index: None,
            });
        }
        v
    }

    fn write_scalar(&mut self, name: &str, v: Value, both_sides: bool) {
        if let Some(mem) = self.block_mem.last_mut() {
            mem.write_scalar(name, v);
            return;
        }
        let ver = self.bump();
        let side = self.side();
        if both_sides {
            self.host.slots.insert(name.into(), VSlot::Scalar(v, ver));
            self.device.slots.insert(name.into(), VSlot::Scalar(v, ver));
        } else {
            let (own, _) = self.mems(side);
            own.slots.insert(name.into(), VSlot::Scalar(v, ver));
        }
    }

    fn array_len(&self, name: &str) -> Option<usize> {
        if let Some(mem) = self.block_mem.last() {
            return match mem.slots.get(name) {
                Some(crate::minilang::interp::Slot::Array(items)) => Some(items.len()),
                _ => None,
            };
        }
        match self.host.slots.get(name) {
            Some(VSlot::Array(items, _)) => Some(items.len()),
            _ => None,
        }
    }

    fn read_elem(&mut self, name: &str, i: usize) -> Value {
        if let Some(mem) = self.block_mem.last() {
            return match mem.slots.get(name) {
                Some(crate::minilang::interp::Slot::Array(items)) => items[i],
                _ => Value::Int(0),
            };
        }
        let side = self.side();
        let (own, other) = match side {
            Side::Host => (&self.host, &self.device),
            Side::Device => (&self.device, &self.host),
        };
        let (v, own_ver) = match own.slots.get(name) {
            Some(VSlot::Array(items, vers)) => (items[i], vers[i]),
            _ => (Value::Int(0), 0),
        };
        let other_ver = match other.slots.get(name) {
            Some(VSlot::Array(_, vers)) => vers[i],
            _ => 0,
        };
        if other_ver > own_ver {
            self.faults.push(ShadowFault {
                side,
                var: name.to_string(),
                index: Some(i),
            });
        }
        v
    }

    fn write_elem(&mut self, name: &str, i: usize, v: Value) {
        if let Some(mem) = self.block_mem.last_mut() {
            if let Some(crate::minilang::interp::Slot::Array(items)) = mem.slots.get_mut(name) {
                items[i] = v;
            }
            return;
        }
        let ver = self.bump();
        let side = self.side();
        let (own, _) = self.mems(side);
        if let Some(VSlot::Array(items, vers)) = own.slots.get_mut(name) {
            items[i] = v;
            vers[i] = ver;
        }
    }

    /// Literal transfer: copy values and versions across, whole variable.
    fn transfer(&mut self, var: &str, to_device: bool) {
        let (src, dst) = if to_device {
            (&self.host, &mut self.device)
        } else {
            (&self.device, &mut self.host)
        };
        if let Some(slot) = src.slots.get(var) {
            dst.slots.insert(var.to_string(), slot.clone());
        }
    }

    fn kind_of(&self, name: &str) -> ElemKind {
        self.kinds.get(name).copied().unwrap_or(ElemKind::Int)
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, RuntimeError> {
        match &e.kind {
            ExprKind::Int(v) => Ok(Value::Int(*v)),
            ExprKind::Float(v) => Ok(Value::Float(*v)),
            ExprKind::Var(n) => Ok(self.read_scalar(n)),
            ExprKind::Index(n, idx) => {
                let iv = self.eval(idx)?;
                let i = match iv {
                    Value::Int(i) => i,
                    Value::Float(_) => return Err(RuntimeError::NonIntegerIndex { pos: idx.pos }),
                };
                let len = self.array_len(n).unwrap_or(0) as i64;
                if i < 0 || i >= len {
                    return Err(RuntimeError::OutOfBounds {
                        array: n.clone(),
                        index: i,
                        pos: idx.pos,
                    });
                }
                Ok(self.read_elem(n, i as usize))
            }
            ExprKind::Binary(op, l, r) => {
                let a = self.eval(l)?;
                let b = self.eval(r)?;
                apply_binop(*op, a, b, e.pos)
            }
            ExprKind::Neg(i) => Ok(match self.eval(i)? {
                Value::Int(x) => Value::Int(-x),
                Value::Float(x) => Value::Float(-x),
            }),
        }
    }

    fn convert(&self, name: &str, v: Value) -> Value {
        match (self.kind_of(name), v) {
            (ElemKind::Int, Value::Float(x)) => Value::Int(x.trunc() as i64),
            (ElemKind::Float, Value::Int(x)) => Value::Float(x as f64),
            _ => v,
        }
    }

    fn exec_block(
        &mut self,
        def: &BlockDef,
        caller_arrays: &[String],
    ) -> Result<(), RuntimeError> {
        if caller_arrays.len() != def.array_params.len() {
            return Err(RuntimeError::BlockArity {
                name: def.name.clone(),
                expected: def.array_params.len(),
                got: caller_arrays.len(),
            });
        }
        let mut inner = Memory::initialize(&def.ast.decls, &InputBinding::empty())?;
        // Parameters copy in from the caller on the current side, with
        // staleness checks element by element.
        for ((pname, plen), cname) in def.array_params.iter().zip(caller_arrays) {
            let caller_len = self.array_len(cname).unwrap_or(1) as u64;
            if caller_len != *plen {
                return Err(RuntimeError::BlockLengthMismatch {
                    caller: cname.clone(),
                    caller_len,
                    param: pname.clone(),
                    param_len: *plen,
                });
            }
            let items: Vec<Value> = (0..caller_len as usize)
                .map(|i| self.read_elem(cname, i))
                .collect();
            inner
                .slots
                .insert(pname.clone(), crate::minilang::interp::Slot::Array(items));
        }
        let saved_kinds = std::mem::take(&mut self.kinds);
        self.kinds = def
            .ast
            .decls
            .iter()
            .map(|d| (d.name.clone(), d.kind))
            .collect();
        self.block_mem.push(inner);
        let result = self.exec_stmts(&def.ast.stmts);
        let inner = self.block_mem.pop().expect("pushed above");
        self.kinds = saved_kinds;
        result?;
        for ((pname, _plen), cname) in def.array_params.iter().zip(caller_arrays) {
            if let Some(crate::minilang::interp::Slot::Array(items)) = inner.slots.get(pname) {
                for (i, v) in items.clone().into_iter().enumerate() {
                    self.write_elem(cname, i, v);
                }
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
        if self.block_mem.is_empty() {
            for v in &s.xfer_in {
                self.transfer(v, true);
            }
        }
        match &s.kind {
            StmtKind::Assign { target, value } => {
                let v = self.eval(value)?;
                match target {
                    LValue::Scalar(n) => {
                        let cv = self.convert(n, v);
                        self.write_scalar(n, cv, false);
                    }
                    LValue::Element(n, idx) => {
                        let iv = self.eval(idx)?;
                        let i = match iv {
                            Value::Int(i) => i,
                            Value::Float(_) => {
                                return Err(RuntimeError::NonIntegerIndex { pos: idx.pos })
                            }
                        };
                        let len = self.array_len(n).unwrap_or(0) as i64;
                        if i < 0 || i >= len {
                            return Err(RuntimeError::OutOfBounds {
                                array: n.clone(),
                                index: i,
                                pos: idx.pos,
                            });
                        }
                        let cv = self.convert(n, v);
                        self.write_elem(n, i as usize, cv);
                    }
                }
            }
            StmtKind::For {
                id,
                var,
                init,
                bound,
                step,
                body,
            } => {
                let entering = self.offloaded.contains(id)
                    && self.device_depth == 0
                    && self.block_mem.is_empty();
                if entering {
                    self.device_depth += 1;
                }
                let init_v = self.eval(init)?;
                let iv = match init_v {
                    Value::Int(v) => v,
                    Value::Float(v) => v.trunc() as i64,
                };
                // Loop-variable bookkeeping is control state on both sides.
                self.write_scalar(var, Value::Int(iv), true);
                loop {
                    let cur = self.read_scalar(var);
                    let b = self.eval(bound)?;
                    if !(cur.as_f64() < b.as_f64()) {
                        break;
                    }
                    self.exec_stmts(body)?;
                    let cur = match self.read_scalar(var) {
                        Value::Int(v) => v,
                        Value::Float(v) => v.trunc() as i64,
                    };
                    self.write_scalar(var, Value::Int(cur + *step), true);
                }
                if entering {
                    self.device_depth -= 1;
                }
            }
            StmtKind::While { id, cond, body } => {
                let mut steps = 0u64;
                loop {
                    let c = self.eval(cond)?;
                    if !c.is_truthy() {
                        break;
                    }
                    steps += 1;
                    if steps > self.while_budget {
                        return Err(RuntimeError::DivergentLoop { id: *id });
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
                        if self.array_len(n).is_some() {
                            arrays.push(n.clone());
                            continue;
                        }
                    }
                    self.eval(a)?;
                }
                self.exec_block(&def, &arrays)?;
            }
            StmtKind::Output(e) => {
                let v = self.eval(e)?;
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
                // The kernel owns its transfers: bound arrays sync down, the
                // body runs device-side, outputs come back.
                let mut arrays: Vec<String> = Vec::new();
                for n in inputs.iter().chain(outputs) {
                    if !arrays.contains(n) && self.array_len(n).is_some() {
                        arrays.push(n.clone());
                    }
                }
                for v in &arrays {
                    self.transfer(v, true);
                }
                self.device_depth += 1;
                let r = self.exec_block(&def, &arrays);
                self.device_depth -= 1;
                r?;
                for v in outputs {
                    self.transfer(v, false);
                }
            }
        }
        if self.block_mem.is_empty() {
            for v in &s.xfer_out {
                self.transfer(v, false);
            }
        }
        Ok(())
    }
}

/// Run the annotated program under shadow semantics.
pub fn shadow_run(
    ast: &Ast,
    pattern: &OffloadPattern,
    input: &InputBinding,
    lib: &BlockLib,
) -> Result<ShadowReport, RuntimeError> {
    let init = Memory::initialize(&ast.decls, input)?;
    let mut sh = Shadow {
        lib,
        host: SideMem::from_memory(&init),
        device: SideMem::from_memory(&init),
        block_mem: Vec::new(),
        device_depth: 0,
        next_version: 0,
        trace: Vec::new(),
        faults: Vec::new(),
        offloaded: pattern.offloaded_ids(),
        kinds: ast.decls.iter().map(|d| (d.name.clone(), d.kind)).collect(),
        while_budget: 100_000_000,
    };
    sh.exec_stmts(&ast.stmts)?;
    Ok(ShadowReport {
        trace: sh.trace,
        faults: sh.faults,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gasearch::{candidate_space, OffloadPattern};
    use crate::minilang::analyze::analyze;
    use crate::minilang::{interpret, parse, InterpOptions};
    use crate::transfer::{compute_directives, insert_directives};

    fn pattern_for(ast: &Ast, ids: &[u32]) -> OffloadPattern {
        let analysis = analyze(ast);
        let space = candidate_space(&analysis);
        let bits = space.loop_map.iter().map(|l| ids.contains(&l.0)).collect();
        OffloadPattern::new(bits, space.loop_map)
    }

    const SRC: &str = "int b[40]; int acc[40];\n\
                       for(i=0;i<40;i=i+1){b[i]=i*3;}\n\
                       for(p=0;p<40;p=p+1){acc[p]=p;}\n\
                       for(t=0;t<20;t=t+1){\n\
                         for(j=0;j<40;j=j+1){acc[j]=acc[j]+b[j];}\n\
                       }\n\
                       output acc[7];\n\
                       output acc[39];";

    #[test]
    fn correct_directives_produce_reference_trace_without_faults() {
        let ast = parse("t", SRC).unwrap();
        let pattern = pattern_for(&ast, &[3]);
        let dirs = compute_directives(&ast, &pattern).unwrap();
        let annotated = insert_directives(&ast, &dirs).unwrap();
        let lib = BlockLib::empty();
        let input = InputBinding::empty();
        let reference = interpret(&ast, &input, &lib, &InterpOptions::default()).unwrap();
        let shadow = shadow_run(&annotated, &pattern, &input, &lib).unwrap();
        assert_eq!(shadow.trace, reference.trace);
        assert!(shadow.faults.is_empty(), "faults: {:?}", shadow.faults);
    }

    #[test]
    fn missing_copyin_faults_on_stale_device_read() {
        let ast = parse("t", SRC).unwrap();
        let pattern = pattern_for(&ast, &[3]);
        // Deliberately drop every copy-in: the device reads the initial
        // image while the host has newer data.
        let dirs: Vec<_> = compute_directives(&ast, &pattern)
            .unwrap()
            .into_iter()
            .filter(|d| d.kind == crate::transfer::TransferKind::Copyout)
            .collect();
        let annotated = insert_directives(&ast, &dirs).unwrap();
        let lib = BlockLib::empty();
        let input = InputBinding::empty();
        let shadow = shadow_run(&annotated, &pattern, &input, &lib).unwrap();
        assert!(
            !shadow.faults.is_empty(),
            "expected stale device reads to fault"
        );
        assert!(shadow
            .faults
            .iter()
            .all(|f| f.side == Side::Device && (f.var == "b" || f.var == "acc")));
    }

    #[test]
    fn missing_copyout_faults_on_stale_host_read() {
        let ast = parse("t", SRC).unwrap();
        let pattern = pattern_for(&ast, &[3]);
        let dirs: Vec<_> = compute_directives(&ast, &pattern)
            .unwrap()
            .into_iter()
            .filter(|d| d.kind == crate::transfer::TransferKind::Copyin)
            .collect();
        let annotated = insert_directives(&ast, &dirs).unwrap();
        let lib = BlockLib::empty();
        let input = InputBinding::empty();
        let shadow = shadow_run(&annotated, &pattern, &input, &lib).unwrap();
        assert!(shadow
            .faults
            .iter()
            .any(|f| f.side == Side::Host && f.var == "acc"));
    }

    #[test]
    fn naive_directives_are_also_safe() {
        let ast = parse("t", SRC).unwrap();
        let pattern = pattern_for(&ast, &[3]);
        let dirs = crate::transfer::naive_directives(&ast, &pattern).unwrap();
        let annotated = insert_directives(&ast, &dirs).unwrap();
        let lib = BlockLib::empty();
        let input = InputBinding::empty();
        let reference = interpret(&ast, &input, &lib, &InterpOptions::default()).unwrap();
        let shadow = shadow_run(&annotated, &pattern, &input, &lib).unwrap();
        assert_eq!(shadow.trace, reference.trace);
        assert!(shadow.faults.is_empty(), "faults: {:?}", shadow.faults);
    }
}
