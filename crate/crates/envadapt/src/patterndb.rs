//! Code-pattern database: registered functional blocks with accelerator
//! kernel descriptors, token-based clone matching, and block substitution.

use crate::minilang::analyze::span_effects;
use crate::minilang::ast::{stmt_at, stmt_at_mut, Stmt, StmtKind, StmtPath};
use crate::minilang::{parse, Ast, BlockDef, BlockLib, ExprKind};
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("pattern db field `{0}` is invalid or missing")]
    SchemaError(String),
    #[error("duplicate kernel id `{0}`")]
    DuplicateKernel(String),
    #[error("pattern `{name}` reference source does not parse: {err}")]
    BadReference { name: String, err: String },
    #[error("cannot read pattern db: {0}")]
    Io(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("matched region changed since matching; re-run match_blocks")]
    RegionStale,
}

/// Cost of one kernel execution: `fixed + per_element * n` time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostFormula {
    pub fixed: f64,
    pub per_element: f64,
}

/// One registered pattern: a reference implementation, its normalized token
/// signature, and the kernel that replaces it.
#[derive(Debug, Clone)]
pub struct PatternRecord {
    pub name: String,
    pub signature: Vec<&'static str>,
    pub kernel_id: String,
    pub cost_formula: CostFormula,
    pub min_similarity: f64,
    pub reference: Ast,
}

#[derive(Debug, Clone, Default)]
pub struct PatternDb {
    pub records: Vec<PatternRecord>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    name: Option<String>,
    reference_source: Option<String>,
    kernel_id: Option<String>,
    fixed_cost: Option<f64>,
    per_element_cost: Option<f64>,
    min_similarity: Option<f64>,
}

impl PatternDb {
    pub fn from_json(text: &str) -> Result<PatternDb, DbError> {
        let raw: Vec<RawRecord> =
            serde_json::from_str(text).map_err(|e| DbError::Io(e.to_string()))?;
        let mut records = Vec::new();
        let mut kernel_ids = BTreeSet::new();
        for r in raw {
            let name = r.name.ok_or_else(|| DbError::SchemaError("name".into()))?;
            let source = r
                .reference_source
                .ok_or_else(|| DbError::SchemaError("reference_source".into()))?;
            let kernel_id = r
                .kernel_id
                .ok_or_else(|| DbError::SchemaError("kernel_id".into()))?;
            let fixed = r
                .fixed_cost
                .filter(|c| *c >= 0.0)
                .ok_or_else(|| DbError::SchemaError("fixed_cost".into()))?;
            let per_element = r
                .per_element_cost
                .filter(|c| *c >= 0.0)
                .ok_or_else(|| DbError::SchemaError("per_element_cost".into()))?;
            let min_similarity = r
                .min_similarity
                .filter(|s| *s > 0.0 && *s <= 1.0)
                .ok_or_else(|| DbError::SchemaError("min_similarity".into()))?;
            if !kernel_ids.insert(kernel_id.clone()) {
                return Err(DbError::DuplicateKernel(kernel_id));
            }
            let reference = parse(&name, &source).map_err(|e| DbError::BadReference {
                name: name.clone(),
                err: e.to_string(),
            })?;
            if reference.decls.iter().all(|d| d.len.is_none()) {
                return Err(DbError::SchemaError(format!(
                    "reference_source of `{name}` declares no arrays"
                )));
            }
            let signature = token_signature(&reference.stmts);
            records.push(PatternRecord {
                name,
                signature,
                kernel_id,
                cost_formula: CostFormula { fixed, per_element },
                min_similarity,
                reference,
            });
        }
        Ok(PatternDb { records })
    }

    pub fn load(path: &std::path::Path) -> Result<PatternDb, DbError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DbError::Io(format!("{}: {e}", path.display())))?;
        PatternDb::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn by_kernel(&self, kernel_id: &str) -> Option<&PatternRecord> {
        self.records.iter().find(|r| r.kernel_id == kernel_id)
    }

    /// Registry the interpreter uses to execute `call` statements and
    /// accelerator calls.
    pub fn block_lib(&self) -> BlockLib {
        let defs = self
            .records
            .iter()
            .map(|r| BlockDef {
                name: r.name.clone(),
                kernel_id: r.kernel_id.clone(),
                ast: r.reference.clone(),
                array_params: r
                    .reference
                    .decls
                    .iter()
                    .filter_map(|d| d.len.map(|n| (d.name.clone(), n)))
                    .collect(),
            })
            .collect();
        BlockLib::new(defs)
    }
}

/// Normalized token sequence of a statement span: identifiers become `ID`,
/// numeric literals become `NUM`, keywords and operators stay verbatim.
pub fn token_signature(stmts: &[Stmt]) -> Vec<&'static str> {
    fn expr(e: &crate::minilang::Expr, out: &mut Vec<&'static str>) {
        match &e.kind {
            ExprKind::Int(_) | ExprKind::Float(_) => out.push("NUM"),
            ExprKind::Var(_) => out.push("ID"),
            ExprKind::Index(_, i) => {
                out.push("ID");
                out.push("[");
                expr(i, out);
                out.push("]");
            }
            ExprKind::Binary(op, l, r) => {
                expr(l, out);
                out.push(op.symbol());
                expr(r, out);
            }
            ExprKind::Neg(i) => {
                out.push("-");
                expr(i, out);
            }
        }
    }
    fn stmt(s: &Stmt, out: &mut Vec<&'static str>) {
        match &s.kind {
            StmtKind::Assign { target, value } => {
                match target {
                    crate::minilang::LValue::Scalar(_) => out.push("ID"),
                    crate::minilang::LValue::Element(_, i) => {
                        out.push("ID");
                        out.push("[");
                        expr(i, out);
                        out.push("]");
                    }
                }
                out.push("=");
                expr(value, out);
                out.push(";");
            }
            StmtKind::For {
                init, bound, body, ..
            } => {
                out.extend(["for", "(", "ID", "="]);
                expr(init, out);
                out.extend([";", "ID", "<"]);
                expr(bound, out);
                out.extend([";", "ID", "=", "ID", "+", "NUM", ")", "{"]);
                for b in body {
                    stmt(b, out);
                }
                out.push("}");
            }
            StmtKind::While { cond, body, .. } => {
                out.extend(["while", "("]);
                expr(cond, out);
                out.extend([")", "{"]);
                for b in body {
                    stmt(b, out);
                }
                out.push("}");
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                out.extend(["if", "("]);
                expr(cond, out);
                out.extend([")", "{"]);
                for b in then_body {
                    stmt(b, out);
                }
                out.push("}");
                if !else_body.is_empty() {
                    out.extend(["else", "{"]);
                    for b in else_body {
                        stmt(b, out);
                    }
                    out.push("}");
                }
            }
            StmtKind::Call { args, .. } => {
                out.extend(["call", "ID", "("]);
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push(",");
                    }
                    expr(a, out);
                }
                out.extend([")", ";"]);
            }
            StmtKind::Output(e) => {
                out.push("output");
                expr(e, out);
                out.push(";");
            }
            StmtKind::AccelCall { .. } => {
                out.extend(["accel", "ID", ";"]);
            }
        }
    }
    let mut out = Vec::new();
    for s in stmts {
        stmt(s, &mut out);
    }
    out
}

/// Length of the longest common subsequence, rolling-row dynamic program.
pub fn lcs_len(a: &[&'static str], b: &[&'static str]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
        cur.fill(0);
    }
    prev[b.len()]
}

/// LCS-ratio similarity over normalized tokens.
pub fn similarity(a: &[&'static str], b: &[&'static str]) -> f64 {
    let denom = a.len().max(b.len());
    if denom == 0 {
        return 1.0;
    }
    lcs_len(a, b) as f64 / denom as f64
}

/// One matched region, ready for substitution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMatch {
    pub pattern_name: String,
    pub kernel_id: String,
    pub region: StmtPath,
    pub similarity: f64,
    /// Element count of the region's dominant array; drives the kernel cost
    /// formula.
    pub size_elems: u64,
    /// Fingerprint of the region subtree, used to detect stale matches.
    pub fingerprint: u64,
}

fn region_fingerprint(s: &Stmt, path: &[usize]) -> u64 {
    let mut stripped = s.clone();
    fn strip(s: &mut Stmt) {
        s.pos = Default::default();
        match &mut s.kind {
            StmtKind::For { body, .. } | StmtKind::While { body, .. } => {
                body.iter_mut().for_each(strip)
            }
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                then_body.iter_mut().for_each(strip);
                else_body.iter_mut().for_each(strip);
            }
            _ => {}
        }
    }
    strip(&mut stripped);
    let mut h = DefaultHasher::new();
    path.hash(&mut h);
    format!("{stripped:?}").hash(&mut h);
    h.finish()
}

/// Dominant array of a region: the referenced array with the largest
/// declared length.
fn dominant_array_len(ast: &Ast, region: &Stmt) -> u64 {
    let (defs, uses) = span_effects(std::slice::from_ref(region));
    defs.union(&uses)
        .filter_map(|n| ast.decl(n).and_then(|d| d.len))
        .max()
        .unwrap_or(0)
}

fn candidate_regions(ast: &Ast) -> Vec<(StmtPath, bool)> {
    // (path, is_call); loop candidates are maximal nests: loops not enclosed
    // by another loop. Calls are candidates anywhere.
    fn visit_one(
        s: &Stmt,
        prefix: &mut StmtPath,
        inside_loop: bool,
        out: &mut Vec<(StmtPath, bool)>,
    ) {
        match &s.kind {
            StmtKind::For { body, .. } | StmtKind::While { body, .. } => {
                if !inside_loop {
                    out.push((prefix.clone(), false));
                }
                for (i, b) in body.iter().enumerate() {
                    prefix.push(i);
                    visit_one(b, prefix, true, out);
                    prefix.pop();
                }
            }
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                for (i, b) in then_body.iter().chain(else_body).enumerate() {
                    prefix.push(i);
                    visit_one(b, prefix, inside_loop, out);
                    prefix.pop();
                }
            }
            StmtKind::Call { .. } => out.push((prefix.clone(), true)),
            _ => {}
        }
    }
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    for (i, s) in ast.stmts.iter().enumerate() {
        prefix.push(i);
        visit_one(s, &mut prefix, false, &mut out);
        prefix.pop();
    }
    out
}

fn overlaps(a: &[usize], b: &[usize]) -> bool {
    let n = a.len().min(b.len());
    a[..n] == b[..n]
}

/// Match every candidate region against the pattern db.
///
/// Loop nests match by token similarity; a `call` statement whose name
/// equals a pattern name matches that pattern at similarity 1.0. Matches
/// below a record's `min_similarity` are dropped, the rest are sorted by
/// similarity descending, and overlapping regions keep the better match.
pub fn match_blocks(ast: &Ast, db: &PatternDb) -> Vec<BlockMatch> {
    let mut found: Vec<BlockMatch> = Vec::new();
    for (path, is_call) in candidate_regions(ast) {
        let stmt = stmt_at(ast, &path).expect("candidate path is valid");
        if is_call {
            if let StmtKind::Call { name, .. } = &stmt.kind {
                if let Some(rec) = db.records.iter().find(|r| &r.name == name) {
                    found.push(BlockMatch {
                        pattern_name: rec.name.clone(),
                        kernel_id: rec.kernel_id.clone(),
                        region: path.clone(),
                        similarity: 1.0,
                        size_elems: dominant_array_len(ast, stmt),
                        fingerprint: region_fingerprint(stmt, &path),
                    });
                }
            }
            continue;
        }
        let sig = token_signature(std::slice::from_ref(stmt));
        for rec in &db.records {
            let sim = similarity(&sig, &rec.signature);
            if sim >= rec.min_similarity {
                found.push(BlockMatch {
                    pattern_name: rec.name.clone(),
                    kernel_id: rec.kernel_id.clone(),
                    region: path.clone(),
                    similarity: sim,
                    size_elems: dominant_array_len(ast, stmt),
                    fingerprint: region_fingerprint(stmt, &path),
                });
            }
        }
    }
    found.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.pattern_name.cmp(&b.pattern_name))
            .then_with(|| a.region.cmp(&b.region))
    });
    let mut kept: Vec<BlockMatch> = Vec::new();
    for m in found {
        if kept.iter().all(|k| !overlaps(&k.region, &m.region)) {
            kept.push(m);
        }
    }
    kept
}

/// Replace a matched region with an accelerator call bound to the region's
/// arrays. The interpreter executes the registered reference implementation
/// for the kernel, so program outputs are unchanged.
pub fn substitute(ast: &Ast, m: &BlockMatch) -> Result<Ast, MatchError> {
    let current = stmt_at(ast, &m.region).ok_or(MatchError::RegionStale)?;
    if region_fingerprint(current, &m.region) != m.fingerprint {
        return Err(MatchError::RegionStale);
    }
    let (defs, uses) = span_effects(std::slice::from_ref(current));
    let arrays_only = |set: &BTreeSet<String>| -> Vec<String> {
        set.iter()
            .filter(|n| ast.decl(n).map(|d| d.len.is_some()) == Some(true))
            .cloned()
            .collect()
    };
    let inputs = arrays_only(&uses);
    let outputs = arrays_only(&defs);
    let mut new_ast = ast.clone();
    let slot = stmt_at_mut(&mut new_ast, &m.region).ok_or(MatchError::RegionStale)?;
    let pos = slot.pos;
    *slot = Stmt::new(
        StmtKind::AccelCall {
            kernel_id: m.kernel_id.clone(),
            inputs,
            outputs,
            size_elems: m.size_elems,
        },
        pos,
    );
    Ok(new_ast)
}
