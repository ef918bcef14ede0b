//! Static loop analysis: structure, def/use sets, parallelizability.

use super::ast::*;
use super::AnalysisError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Analysis record for one loop, in preorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopInfo {
    pub id: LoopId,
    /// Nesting depth, 0 for top-of-nest loops.
    pub depth: u32,
    pub parent: Option<LoopId>,
    /// Variables written by statements in the body, nested loops included.
    /// For-loop header bookkeeping of loop variables is not a write.
    pub defs: BTreeSet<String>,
    /// Variables read in the body (nested loops and header bound/init
    /// expressions included; a loop variable's own bookkeeping is not a read).
    pub uses: BTreeSet<String>,
    pub parallelizable: bool,
    /// Empty iff parallelizable.
    pub reason: String,
    /// Exact iteration count when the header is fully constant.
    pub static_trip: Option<u64>,
    /// The loop's own variable, for `for` loops.
    pub var: Option<String>,
    /// Loop variables of this loop and of `for` loops nested inside it.
    /// These are regenerated on the device and never transferred.
    pub local_loop_vars: BTreeSet<String>,
}

/// Variable effect events produced by a body walk.
#[derive(Default)]
struct Effects {
    defs: BTreeSet<String>,
    uses: BTreeSet<String>,
    loop_vars: BTreeSet<String>,
    has_while: bool,
    has_output: bool,
    has_call: bool,
    /// (array, index expr) for every array element write.
    array_writes: Vec<(String, Expr)>,
    /// (array, index expr) for every array element read.
    array_reads: Vec<(String, Expr)>,
    scalar_writes: BTreeSet<String>,
}

fn expr_reads(e: &Expr, eff: &mut Effects) {
    match &e.kind {
        ExprKind::Int(_) | ExprKind::Float(_) => {}
        ExprKind::Var(n) => {
            eff.uses.insert(n.clone());
        }
        ExprKind::Index(n, idx) => {
            eff.uses.insert(n.clone());
            eff.array_reads.push((n.clone(), (**idx).clone()));
            expr_reads(idx, eff);
        }
        ExprKind::Binary(_, l, r) => {
            expr_reads(l, eff);
            expr_reads(r, eff);
        }
        ExprKind::Neg(i) => expr_reads(i, eff),
    }
}

fn walk_stmts(stmts: &[Stmt], eff: &mut Effects) {
    for s in stmts {
        match &s.kind {
            StmtKind::Assign { target, value } => {
                expr_reads(value, eff);
                match target {
                    LValue::Scalar(n) => {
                        eff.defs.insert(n.clone());
                        eff.scalar_writes.insert(n.clone());
                    }
                    LValue::Element(n, idx) => {
                        eff.defs.insert(n.clone());
                        eff.array_writes.push((n.clone(), (**idx).clone()));
                        expr_reads(idx, eff);
                    }
                }
            }
            StmtKind::For {
                var,
                init,
                bound,
                body,
                ..
            } => {
                // Header init/bound expressions are genuine reads; the loop
                // variable itself is bookkeeping.
                expr_reads(init, eff);
                expr_reads(bound, eff);
                eff.loop_vars.insert(var.clone());
                walk_stmts(body, eff);
            }
            StmtKind::While { cond, body, .. } => {
                eff.has_while = true;
                expr_reads(cond, eff);
                walk_stmts(body, eff);
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                // Path-insensitive: both branches contribute.
                expr_reads(cond, eff);
                walk_stmts(then_body, eff);
                walk_stmts(else_body, eff);
            }
            StmtKind::Call { args, .. } => {
                eff.has_call = true;
                for a in args {
                    if let ExprKind::Var(n) = &a.kind {
                        // Array arguments pass in/out; conservatively both.
                        eff.uses.insert(n.clone());
                        eff.defs.insert(n.clone());
                    } else {
                        expr_reads(a, eff);
                    }
                }
            }
            StmtKind::Output(e) => {
                eff.has_output = true;
                expr_reads(e, eff);
            }
            StmtKind::AccelCall {
                inputs, outputs, ..
            } => {
                eff.has_call = true;
                for n in inputs {
                    eff.uses.insert(n.clone());
                }
                for n in outputs {
                    eff.defs.insert(n.clone());
                }
            }
        }
    }
}

/// Classify an index expression as `var + c`, returning c.
fn unit_offset(idx: &Expr, var: &str) -> Option<i64> {
    match &idx.kind {
        ExprKind::Var(n) if n == var => Some(0),
        ExprKind::Binary(BinOp::Add, l, r) => match (&l.kind, &r.kind) {
            (ExprKind::Var(n), _) if n == var => r.as_const_int(),
            (_, ExprKind::Var(n)) if n == var => l.as_const_int(),
            _ => None,
        },
        ExprKind::Binary(BinOp::Sub, l, r) => match (&l.kind, &r.kind) {
            (ExprKind::Var(n), _) if n == var => r.as_const_int().map(|c| -c),
            _ => None,
        },
        _ => None,
    }
}

fn classify_loop(s: &Stmt) -> (bool, String) {
    let (var, body) = match &s.kind {
        StmtKind::For { var, body, .. } => (var, body),
        StmtKind::While { .. } => return (false, "while loop has no bounded index form".into()),
        _ => unreachable!("classify_loop on non-loop"),
    };
    let mut eff = Effects::default();
    walk_stmts(body, &mut eff);
    if eff.has_while {
        return (false, "nested while loop in body".into());
    }
    if eff.has_output {
        return (false, "output statement in loop body".into());
    }
    if eff.has_call {
        return (false, "functional block call in loop body".into());
    }
    // Scalar writes break order-independence; assignments to nested loop
    // variables outside their own header count like any other write.
    if let Some(name) = eff.scalar_writes.iter().next() {
        if eff.uses.contains(name) {
            return (false, format!("scalar recurrence on {name}"));
        }
        return (false, format!("scalar {name} assigned in loop body"));
    }
    // Array writes must be var + c with one offset per array, and reads of a
    // written array must use the same offset.
    let mut write_offsets: std::collections::BTreeMap<&str, i64> = Default::default();
    for (arr, idx) in &eff.array_writes {
        match unit_offset(idx, var) {
            None => return (false, format!("non-unit index form for array {arr}")),
            Some(c) => {
                if let Some(prev) = write_offsets.get(arr.as_str()) {
                    if *prev != c {
                        return (false, format!("loop-carried dependence on {arr}"));
                    }
                } else {
                    write_offsets.insert(arr, c);
                }
            }
        }
    }
    for (arr, idx) in &eff.array_reads {
        if let Some(c_w) = write_offsets.get(arr.as_str()) {
            match unit_offset(idx, var) {
                Some(c) if c == *c_w => {}
                _ => return (false, format!("loop-carried dependence on {arr}")),
            }
        }
    }
    (true, String::new())
}

fn static_trip(s: &Stmt) -> Option<u64> {
    if let StmtKind::For {
        init, bound, step, ..
    } = &s.kind
    {
        let a = init.as_const_int()?;
        let b = bound.as_const_int()?;
        let st = *step;
        if b <= a {
            return Some(0);
        }
        return Some((((b - a) + st - 1) / st) as u64);
    }
    None
}

/// Produce one [`LoopInfo`] per loop in preorder.
pub fn analyze(ast: &Ast) -> Vec<LoopInfo> {
    let mut out = Vec::new();
    fn visit(stmts: &[Stmt], depth: u32, parent: Option<LoopId>, out: &mut Vec<LoopInfo>) {
        for s in stmts {
            match &s.kind {
                StmtKind::For { id, var, body, .. } => {
                    let mut eff = Effects::default();
                    walk_stmts(body, &mut eff);
                    // Header bound/init of the loop itself are uses of the
                    // loop: the device re-evaluates them.
                    if let StmtKind::For { init, bound, .. } = &s.kind {
                        expr_reads(init, &mut eff);
                        expr_reads(bound, &mut eff);
                    }
                    let (parallelizable, reason) = classify_loop(s);
                    let mut local_loop_vars = eff.loop_vars.clone();
                    local_loop_vars.insert(var.clone());
                    out.push(LoopInfo {
                        id: *id,
                        depth,
                        parent,
                        defs: eff.defs.clone(),
                        uses: eff.uses.clone(),
                        parallelizable,
                        reason,
                        static_trip: static_trip(s),
                        var: Some(var.clone()),
                        local_loop_vars,
                    });
                    visit(body, depth + 1, Some(*id), out);
                }
                StmtKind::While { id, cond, body } => {
                    let mut eff = Effects::default();
                    walk_stmts(body, &mut eff);
                    expr_reads(cond, &mut eff);
                    let (parallelizable, reason) = classify_loop(s);
                    out.push(LoopInfo {
                        id: *id,
                        depth,
                        parent,
                        defs: eff.defs.clone(),
                        uses: eff.uses.clone(),
                        parallelizable,
                        reason,
                        static_trip: None,
                        var: None,
                        local_loop_vars: eff.loop_vars.clone(),
                    });
                    visit(body, depth + 1, Some(*id), out);
                }
                StmtKind::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    visit(then_body, depth, parent, out);
                    visit(else_body, depth, parent, out);
                }
                _ => {}
            }
        }
    }
    visit(&ast.stmts, 0, None, &mut out);
    out.sort_by_key(|i| i.id);
    out
}

/// Variables written and read by a statement span (nested loops included,
/// loop-variable bookkeeping excluded from writes).
pub fn span_effects(stmts: &[Stmt]) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut eff = Effects::default();
    walk_stmts(stmts, &mut eff);
    (eff.defs, eff.uses)
}

/// Loop variables of all `for` loops in a statement span.
pub fn span_loop_vars(stmts: &[Stmt]) -> BTreeSet<String> {
    let mut eff = Effects::default();
    walk_stmts(stmts, &mut eff);
    eff.loop_vars
}

/// Parallelizability judgment for one loop.
pub fn check_parallelizable(ast: &Ast, id: LoopId) -> Result<(bool, String), AnalysisError> {
    fn find(stmts: &[Stmt], id: LoopId) -> Option<&Stmt> {
        for s in stmts {
            match &s.kind {
                StmtKind::For { id: sid, body, .. } | StmtKind::While { id: sid, body, .. } => {
                    if *sid == id {
                        return Some(s);
                    }
                    if let Some(f) = find(body, id) {
                        return Some(f);
                    }
                }
                StmtKind::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    if let Some(f) = find(then_body, id).or_else(|| find(else_body, id)) {
                        return Some(f);
                    }
                }
                _ => {}
            }
        }
        None
    }
    let stmt = find(&ast.stmts, id).ok_or(AnalysisError::UnknownLoopId(id))?;
    Ok(classify_loop(stmt))
}
