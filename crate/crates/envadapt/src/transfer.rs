//! Explicit data-transfer directives for offloaded loops.
//!
//! A copy-in moves a variable host-to-device, a copy-out device-to-host.
//! Both are anchored at the offloaded loop or the highest enclosing loop the
//! hoisting rules allow, and execute once per dynamic execution of the
//! anchor statement (copy-in on entry, copy-out on exit). Hoisting to an
//! outer loop turns per-iteration transfers into one-shot transfers.

use crate::gasearch::OffloadPattern;
use crate::minilang::analyze::{analyze, LoopInfo};
use crate::minilang::ast::{Ast, Expr, ExprKind, LValue, LoopId, Stmt, StmtKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TransferError {
    #[error("offload pattern sets a bit on loop {id}: {reason}")]
    PatternShapeMismatch { id: LoopId, reason: String },
    #[error("directive anchor {0:?} does not exist in the program")]
    UnknownAnchor(Anchor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransferKind {
    Copyin,
    Copyout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Anchor {
    Loop(LoopId),
    /// Program top level. Never produced by the rules here; kept for schema
    /// completeness.
    Top,
}

/// One transfer of one variable, attached immediately before its anchor loop.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransferDirective {
    pub kind: TransferKind,
    pub var: String,
    pub anchor: Anchor,
}

/// Validate that a pattern only offloads parallelizable loops and never nests
/// one offloaded loop inside another.
pub fn validate_pattern_shape(
    pattern: &OffloadPattern,
    analysis: &[LoopInfo],
) -> Result<(), TransferError> {
    let by_id: BTreeMap<LoopId, &LoopInfo> = analysis.iter().map(|l| (l.id, l)).collect();
    let offloaded = pattern.offloaded_ids();
    for id in &offloaded {
        let info = by_id
            .get(id)
            .ok_or_else(|| TransferError::PatternShapeMismatch {
                id: *id,
                reason: "no such loop".into(),
            })?;
        if !info.parallelizable {
            return Err(TransferError::PatternShapeMismatch {
                id: *id,
                reason: info.reason.clone(),
            });
        }
        let mut cur = info.parent;
        while let Some(p) = cur {
            if offloaded.contains(&p) {
                return Err(TransferError::PatternShapeMismatch {
                    id: *id,
                    reason: format!("nested inside offloaded loop {p}"),
                });
            }
            cur = by_id.get(&p).and_then(|l| l.parent);
        }
    }
    Ok(())
}

/// CPU-side variable events with enough position information to decide
/// ordering and body containment. Offloaded subtrees are device code and do
/// not contribute.
struct CpuEvents {
    /// Per loop: variables written by CPU statements inside its body.
    writes_in: BTreeMap<LoopId, BTreeSet<String>>,
    /// Per loop: variables read by CPU statements inside its body.
    reads_in: BTreeMap<LoopId, BTreeSet<String>>,
    /// All CPU statement writes in the program.
    program_writes: BTreeSet<String>,
    /// (preorder index, enclosing loops, variable) per CPU read.
    read_events: Vec<(usize, BTreeSet<LoopId>, String)>,
    /// Preorder statement index of each loop statement.
    loop_idx: BTreeMap<LoopId, usize>,
    /// Proper loop ancestors of each loop, innermost first.
    ancestors: BTreeMap<LoopId, Vec<LoopId>>,
}

struct EventWalker<'a> {
    offloaded: &'a BTreeSet<LoopId>,
    stack: Vec<LoopId>,
    next_idx: usize,
    ev: CpuEvents,
}

impl EventWalker<'_> {
    fn write(&mut self, var: &str) {
        self.ev.program_writes.insert(var.to_string());
        for l in &self.stack {
            self.ev
                .writes_in
                .entry(*l)
                .or_default()
                .insert(var.to_string());
        }
    }

    fn read(&mut self, var: &str, idx: usize) {
        for l in &self.stack {
            self.ev
                .reads_in
                .entry(*l)
                .or_default()
                .insert(var.to_string());
        }
        self.ev
            .read_events
            .push((idx, self.stack.iter().copied().collect(), var.to_string()));
    }

    fn expr_reads(&mut self, e: &Expr, idx: usize) {
        match &e.kind {
            ExprKind::Int(_) | ExprKind::Float(_) => {}
            ExprKind::Var(n) => self.read(n, idx),
            ExprKind::Index(n, i) => {
                self.read(n, idx);
                self.expr_reads(i, idx);
            }
            ExprKind::Binary(_, l, r) => {
                self.expr_reads(l, idx);
                self.expr_reads(r, idx);
            }
            ExprKind::Neg(i) => self.expr_reads(i, idx),
        }
    }

    fn record_loop(&mut self, id: LoopId, idx: usize) {
        self.ev.loop_idx.insert(id, idx);
        let mut anc: Vec<LoopId> = self.stack.clone();
        anc.reverse();
        self.ev.ancestors.insert(id, anc);
    }

    fn walk(&mut self, stmts: &[Stmt]) {
        for s in stmts {
            let idx = self.next_idx;
            self.next_idx += 1;
            match &s.kind {
                StmtKind::Assign { target, value } => {
                    self.expr_reads(value, idx);
                    match target {
                        LValue::Scalar(n) => self.write(n),
                        LValue::Element(n, i) => {
                            self.expr_reads(i, idx);
                            self.write(n);
                        }
                    }
                }
                StmtKind::For {
                    id,
                    init,
                    bound,
                    body,
                    ..
                } => {
                    self.record_loop(*id, idx);
                    if self.offloaded.contains(id) {
                        continue; // device code
                    }
                    self.expr_reads(init, idx);
                    self.expr_reads(bound, idx);
                    self.stack.push(*id);
                    self.walk(body);
                    self.stack.pop();
                }
                StmtKind::While { id, cond, body } => {
                    self.record_loop(*id, idx);
                    // While loops are never offloaded.
                    self.expr_reads(cond, idx);
                    self.stack.push(*id);
                    self.walk(body);
                    self.stack.pop();
                }
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                } => {
                    self.expr_reads(cond, idx);
                    self.walk(then_body);
                    self.walk(else_body);
                }
                StmtKind::Call { args, .. } => {
                    for a in args {
                        if let ExprKind::Var(n) = &a.kind {
                            self.read(n, idx);
                            self.write(n);
                        } else {
                            self.expr_reads(a, idx);
                        }
                    }
                }
                StmtKind::Output(e) => self.expr_reads(e, idx),
                StmtKind::AccelCall {
                    inputs, outputs, ..
                } => {
                    for n in inputs {
                        self.read(n, idx);
                    }
                    for n in outputs {
                        self.write(n);
                    }
                }
            }
        }
    }
}

fn collect_cpu_events(ast: &Ast, offloaded: &BTreeSet<LoopId>) -> CpuEvents {
    let mut w = EventWalker {
        offloaded,
        stack: Vec::new(),
        next_idx: 0,
        ev: CpuEvents {
            writes_in: BTreeMap::new(),
            reads_in: BTreeMap::new(),
            program_writes: BTreeSet::new(),
            read_events: Vec::new(),
            loop_idx: BTreeMap::new(),
            ancestors: BTreeMap::new(),
        },
    };
    w.walk(&ast.stmts);
    w.ev
}

/// A write to `arr` inside the loop that provably covers every element:
/// `for (v = 0; v < N; v = v + 1)` with constant `N >= len(arr)` and every
/// write site directly in the body at offset `v`. Such arrays need no
/// copy-in even when the device image is stale.
fn fully_overwritten(loop_stmt: &Stmt, arr: &str, arr_len: u64) -> bool {
    let (var, init, bound, step, body) = match &loop_stmt.kind {
        StmtKind::For {
            var,
            init,
            bound,
            step,
            body,
            ..
        } => (var, init, bound, step, body),
        _ => return false,
    };
    if init.as_const_int() != Some(0) || *step != 1 {
        return false;
    }
    match bound.as_const_int() {
        Some(b) if b >= arr_len as i64 => {}
        _ => return false,
    }
    fn writes_somewhere(stmts: &[Stmt], arr: &str) -> bool {
        stmts.iter().any(|s| match &s.kind {
            StmtKind::Assign { target, .. } => target.name() == arr,
            StmtKind::For { body, .. } | StmtKind::While { body, .. } => {
                writes_somewhere(body, arr)
            }
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => writes_somewhere(then_body, arr) || writes_somewhere(else_body, arr),
            StmtKind::Call { args, .. } => args
                .iter()
                .any(|a| matches!(&a.kind, ExprKind::Var(n) if n == arr)),
            StmtKind::AccelCall { outputs, .. } => outputs.iter().any(|n| n == arr),
            _ => false,
        })
    }
    let mut saw = false;
    for s in body {
        match &s.kind {
            StmtKind::Assign {
                target: LValue::Element(n, idx),
                ..
            } if n == arr => {
                match &idx.kind {
                    ExprKind::Var(v) if v == var => saw = true,
                    _ => return false,
                }
            }
            _ => {
                if writes_somewhere(std::slice::from_ref(s), arr) {
                    return false;
                }
            }
        }
    }
    saw
}

fn find_loop_stmt(stmts: &[Stmt], id: LoopId) -> Option<&Stmt> {
    for s in stmts {
        match &s.kind {
            StmtKind::For { id: sid, body, .. } | StmtKind::While { id: sid, body, .. } => {
                if *sid == id {
                    return Some(s);
                }
                if let Some(f) = find_loop_stmt(body, id) {
                    return Some(f);
                }
            }
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                if let Some(f) =
                    find_loop_stmt(then_body, id).or_else(|| find_loop_stmt(else_body, id))
                {
                    return Some(f);
                }
            }
            _ => {}
        }
    }
    None
}

/// Compute hoisted transfer directives for an offload pattern.
///
/// Copy-in: a variable the offloaded loop touches that has a CPU-side
/// definition is transferred before the highest enclosing loop whose body
/// contains no CPU-side write of it; with no enclosing loop free of such
/// writes, the offloaded loop itself anchors the transfer. Arrays the loop
/// provably overwrites in full skip the copy-in.
///
/// Copy-out: a variable the offloaded loop writes that CPU-side code later
/// references (a host-staged copy-in of another loop counts as a reference)
/// is transferred after the highest enclosing loop whose body contains no
/// CPU-side reference or write of it.
pub fn compute_directives(
    ast: &Ast,
    pattern: &OffloadPattern,
) -> Result<Vec<TransferDirective>, TransferError> {
    let analysis = analyze(ast);
    validate_pattern_shape(pattern, &analysis)?;
    let offloaded = pattern.offloaded_ids();
    let ev = collect_cpu_events(ast, &offloaded);
    let by_id: BTreeMap<LoopId, &LoopInfo> = analysis.iter().map(|l| (l.id, l)).collect();

    let mut directives: BTreeSet<TransferDirective> = BTreeSet::new();
    // (variable, anchor loop) of every emitted copy-in: these are CPU-side
    // reference points for the copy-out pass.
    let mut copyin_sites: Vec<(String, LoopId)> = Vec::new();

    for id in &offloaded {
        let info = by_id[id];
        let candidates: BTreeSet<&String> = info
            .uses
            .union(&info.defs)
            .filter(|v| !info.local_loop_vars.contains(*v))
            .collect();
        for var in candidates {
            if !ev.program_writes.contains(var.as_str()) {
                // Never written by CPU statements: the device image of the
                // initial state is current.
                continue;
            }
            let def_only = info.defs.contains(var.as_str()) && !info.uses.contains(var.as_str());
            if def_only {
                let stmt = find_loop_stmt(&ast.stmts, *id).expect("loop exists");
                let len = ast.elem_count(var);
                if fully_overwritten(stmt, var, len) {
                    continue;
                }
            }
            // Walk the ancestor chain upward while bodies stay free of
            // CPU-side writes of var.
            let mut anchor = *id;
            for a in &ev.ancestors[id] {
                let blocked = ev
                    .writes_in
                    .get(a)
                    .map(|s| s.contains(var.as_str()))
                    .unwrap_or(false);
                if blocked {
                    break;
                }
                anchor = *a;
            }
            directives.insert(TransferDirective {
                kind: TransferKind::Copyin,
                var: (*var).clone(),
                anchor: Anchor::Loop(anchor),
            });
            copyin_sites.push(((*var).clone(), anchor));
        }
    }

    // Copy-out pass. Copy-in sites act as CPU-side reads positioned just
    // before their anchor loop.
    let mut cpu_reads = ev.read_events.clone();
    for (var, anchor) in &copyin_sites {
        let idx = ev.loop_idx[anchor];
        let enclosing: BTreeSet<LoopId> = ev.ancestors[anchor].iter().copied().collect();
        cpu_reads.push((idx, enclosing, var.clone()));
    }
    // Loops whose body contains a copy-in site of var.
    let mut copyin_within: BTreeMap<&str, BTreeSet<LoopId>> = BTreeMap::new();
    for (var, anchor) in &copyin_sites {
        for a in &ev.ancestors[anchor] {
            copyin_within.entry(var.as_str()).or_default().insert(*a);
        }
    }

    for id in &offloaded {
        let info = by_id[id];
        let loop_pos = ev.loop_idx[id];
        let loop_loops: BTreeSet<LoopId> = ev.ancestors[id].iter().copied().collect();
        for var in info
            .defs
            .iter()
            .filter(|v| !info.local_loop_vars.contains(*v))
        {
            let referenced_after = cpu_reads.iter().any(|(idx, enclosing, v)| {
                v == var && (*idx > loop_pos || !enclosing.is_disjoint(&loop_loops))
            });
            if !referenced_after {
                continue;
            }
            let mut anchor = *id;
            for a in &ev.ancestors[id] {
                let writes = ev
                    .writes_in
                    .get(a)
                    .map(|s| s.contains(var.as_str()))
                    .unwrap_or(false);
                let reads = ev
                    .reads_in
                    .get(a)
                    .map(|s| s.contains(var.as_str()))
                    .unwrap_or(false);
                let staged = copyin_within
                    .get(var.as_str())
                    .map(|s| s.contains(a))
                    .unwrap_or(false);
                if writes || reads || staged {
                    break;
                }
                anchor = *a;
            }
            directives.insert(TransferDirective {
                kind: TransferKind::Copyout,
                var: var.clone(),
                anchor: Anchor::Loop(anchor),
            });
        }
    }

    Ok(directives.into_iter().collect())
}

/// Baseline without hoisting: every used variable copies in and every
/// defined variable copies out at the offloaded loop itself.
pub fn naive_directives(
    ast: &Ast,
    pattern: &OffloadPattern,
) -> Result<Vec<TransferDirective>, TransferError> {
    let analysis = analyze(ast);
    validate_pattern_shape(pattern, &analysis)?;
    let mut out = BTreeSet::new();
    for id in pattern.offloaded_ids() {
        let info = analysis.iter().find(|l| l.id == id).expect("validated");
        for var in info
            .uses
            .iter()
            .filter(|v| !info.local_loop_vars.contains(*v))
        {
            out.insert(TransferDirective {
                kind: TransferKind::Copyin,
                var: var.clone(),
                anchor: Anchor::Loop(id),
            });
        }
        for var in info
            .defs
            .iter()
            .filter(|v| !info.local_loop_vars.contains(*v))
        {
            out.insert(TransferDirective {
                kind: TransferKind::Copyout,
                var: var.clone(),
                anchor: Anchor::Loop(id),
            });
        }
    }
    Ok(out.into_iter().collect())
}

/// Attach directives to their anchor loops. Duplicate (kind, var, anchor)
/// triples collapse to one annotation.
pub fn insert_directives(
    ast: &Ast,
    directives: &[TransferDirective],
) -> Result<Ast, TransferError> {
    let mut out = ast.clone();
    fn find_mut(stmts: &mut [Stmt], id: LoopId) -> Option<&mut Stmt> {
        for s in stmts {
            if s.loop_id() == Some(id) {
                return Some(s);
            }
            match &mut s.kind {
                StmtKind::For { body, .. } | StmtKind::While { body, .. } => {
                    if let Some(f) = find_mut(body, id) {
                        return Some(f);
                    }
                }
                StmtKind::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    if let Some(f) = find_mut(then_body, id) {
                        return Some(f);
                    }
                    if let Some(f) = find_mut(else_body, id) {
                        return Some(f);
                    }
                }
                _ => {}
            }
        }
        None
    }
    for d in directives {
        let id = match d.anchor {
            Anchor::Loop(id) => id,
            Anchor::Top => return Err(TransferError::UnknownAnchor(d.anchor)),
        };
        let stmt = find_mut(&mut out.stmts, id).ok_or(TransferError::UnknownAnchor(d.anchor))?;
        match d.kind {
            TransferKind::Copyin => {
                if !stmt.xfer_in.contains(&d.var) {
                    stmt.xfer_in.push(d.var.clone());
                    stmt.xfer_in.sort();
                }
            }
            TransferKind::Copyout => {
                if !stmt.xfer_out.contains(&d.var) {
                    stmt.xfer_out.push(d.var.clone());
                    stmt.xfer_out.sort();
                }
            }
        }
    }
    Ok(out)
}
