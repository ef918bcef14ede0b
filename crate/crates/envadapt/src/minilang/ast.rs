//! Syntax tree for ELC programs.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, col {}", self.line, self.col)
    }
}

/// Identity of a loop statement; dense 0..L-1 in preorder over the program.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct LoopId(pub u32);

impl fmt::Display for LoopId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Element type of a scalar or array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElemKind {
    Int,
    Float,
}

/// One variable declaration. `len` is `Some` for arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decl {
    pub name: String,
    pub kind: ElemKind,
    pub len: Option<u64>,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExprKind {
    Int(i64),
    Float(f64),
    Var(String),
    Index(String, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

impl Expr {
    pub fn new(kind: ExprKind, pos: Pos) -> Self {
        Expr { kind, pos }
    }

    /// Constant integer value, if the expression is a literal.
    pub fn as_const_int(&self) -> Option<i64> {
        match self.kind {
            ExprKind::Int(v) => Some(v),
            ExprKind::Neg(ref e) => e.as_const_int().map(|v| -v),
            _ => None,
        }
    }
}

/// Assignment target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LValue {
    Scalar(String),
    Element(String, Box<Expr>),
}

impl LValue {
    pub fn name(&self) -> &str {
        match self {
            LValue::Scalar(n) => n,
            LValue::Element(n, _) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StmtKind {
    Assign {
        target: LValue,
        value: Expr,
    },
    For {
        id: LoopId,
        var: String,
        init: Expr,
        bound: Expr,
        step: i64,
        body: Vec<Stmt>,
    },
    While {
        id: LoopId,
        cond: Expr,
        body: Vec<Stmt>,
    },
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
    },
    Call {
        name: String,
        args: Vec<Expr>,
    },
    Output(Expr),
    /// Region replaced by a registered accelerator kernel.
    AccelCall {
        kernel_id: String,
        inputs: Vec<String>,
        outputs: Vec<String>,
        size_elems: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub pos: Pos,
    /// Variables transferred host-to-device immediately before this statement
    /// (meaningful on loop statements only).
    pub xfer_in: Vec<String>,
    /// Variables transferred device-to-host immediately after this statement.
    pub xfer_out: Vec<String>,
}

impl Stmt {
    pub fn new(kind: StmtKind, pos: Pos) -> Self {
        Stmt {
            kind,
            pos,
            xfer_in: Vec::new(),
            xfer_out: Vec::new(),
        }
    }

    pub fn is_loop(&self) -> bool {
        matches!(self.kind, StmtKind::For { .. } | StmtKind::While { .. })
    }

    pub fn loop_id(&self) -> Option<LoopId> {
        match self.kind {
            StmtKind::For { id, .. } | StmtKind::While { id, .. } => Some(id),
            _ => None,
        }
    }
}

/// A parsed ELC program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ast {
    pub name: String,
    pub decls: Vec<Decl>,
    pub stmts: Vec<Stmt>,
}

impl Ast {
    /// Number of loop statements in the program.
    pub fn loop_count(&self) -> usize {
        fn walk(stmts: &[Stmt], n: &mut usize) {
            for s in stmts {
                match &s.kind {
                    StmtKind::For { body, .. } | StmtKind::While { body, .. } => {
                        *n += 1;
                        walk(body, n);
                    }
                    StmtKind::If {
                        then_body,
                        else_body,
                        ..
                    } => {
                        walk(then_body, n);
                        walk(else_body, n);
                    }
                    _ => {}
                }
            }
        }
        let mut n = 0;
        walk(&self.stmts, &mut n);
        n
    }

    pub fn decl(&self, name: &str) -> Option<&Decl> {
        self.decls.iter().find(|d| d.name == name)
    }

    /// Element count a transfer of `name` moves: array length, or 1 for scalars.
    pub fn elem_count(&self, name: &str) -> u64 {
        self.decl(name).and_then(|d| d.len).unwrap_or(1)
    }

    /// Structural equality ignoring source positions.
    pub fn structurally_equal(&self, other: &Ast) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.strip_positions();
        b.strip_positions();
        a.decls == b.decls && a.stmts == b.stmts
    }

    pub fn strip_positions(&mut self) {
        for d in &mut self.decls {
            d.pos = Pos::default();
        }
        fn strip_expr(e: &mut Expr) {
            e.pos = Pos::default();
            match &mut e.kind {
                ExprKind::Index(_, i) => strip_expr(i),
                ExprKind::Binary(_, l, r) => {
                    strip_expr(l);
                    strip_expr(r);
                }
                ExprKind::Neg(i) => strip_expr(i),
                _ => {}
            }
        }
        fn strip_stmts(stmts: &mut [Stmt]) {
            for s in stmts {
                s.pos = Pos::default();
                match &mut s.kind {
                    StmtKind::Assign { target, value } => {
                        if let LValue::Element(_, i) = target {
                            strip_expr(i);
                        }
                        strip_expr(value);
                    }
                    StmtKind::For {
                        init, bound, body, ..
                    } => {
                        strip_expr(init);
                        strip_expr(bound);
                        strip_stmts(body);
                    }
                    StmtKind::While { cond, body, .. } => {
                        strip_expr(cond);
                        strip_stmts(body);
                    }
                    StmtKind::If {
                        cond,
                        then_body,
                        else_body,
                    } => {
                        strip_expr(cond);
                        strip_stmts(then_body);
                        strip_stmts(else_body);
                    }
                    StmtKind::Call { args, .. } => args.iter_mut().for_each(strip_expr),
                    StmtKind::Output(e) => strip_expr(e),
                    StmtKind::AccelCall { .. } => {}
                }
            }
        }
        strip_stmts(&mut self.stmts);
    }
}

/// Path from the program root to one statement: an index per nesting level.
/// For `if` statements the two branches are addressed as one virtual list,
/// then-branch first.
pub type StmtPath = Vec<usize>;

fn child_at(s: &Stmt, idx: usize) -> Option<&Stmt> {
    match &s.kind {
        StmtKind::For { body, .. } | StmtKind::While { body, .. } => body.get(idx),
        StmtKind::If {
            then_body,
            else_body,
            ..
        } => {
            if idx < then_body.len() {
                then_body.get(idx)
            } else {
                else_body.get(idx - then_body.len())
            }
        }
        _ => None,
    }
}

/// Resolve a statement path, if still valid.
pub fn stmt_at<'a>(ast: &'a Ast, path: &[usize]) -> Option<&'a Stmt> {
    let (&first, rest) = path.split_first()?;
    let mut cur = ast.stmts.get(first)?;
    for &idx in rest {
        cur = child_at(cur, idx)?;
    }
    Some(cur)
}

fn child_at_mut(s: &mut Stmt, idx: usize) -> Option<&mut Stmt> {
    match &mut s.kind {
        StmtKind::For { body, .. } | StmtKind::While { body, .. } => body.get_mut(idx),
        StmtKind::If {
            then_body,
            else_body,
            ..
        } => {
            if idx < then_body.len() {
                then_body.get_mut(idx)
            } else {
                else_body.get_mut(idx - then_body.len())
            }
        }
        _ => None,
    }
}

pub fn stmt_at_mut<'a>(ast: &'a mut Ast, path: &[usize]) -> Option<&'a mut Stmt> {
    let (&first, rest) = path.split_first()?;
    let mut cur = ast.stmts.get_mut(first)?;
    for &idx in rest {
        cur = child_at_mut(cur, idx)?;
    }
    Some(cur)
}

fn fmt_expr(e: &Expr, out: &mut String) {
    match &e.kind {
        ExprKind::Int(v) => out.push_str(&v.to_string()),
        ExprKind::Float(v) => {
            let s = format!("{v:?}");
            // Debug formatting of f64 always round-trips and keeps a dot or
            // exponent, so the lexer reads it back as a float.
            out.push_str(&s);
        }
        ExprKind::Var(n) => out.push_str(n),
        ExprKind::Index(n, i) => {
            out.push_str(n);
            out.push('[');
            fmt_expr(i, out);
            out.push(']');
        }
        ExprKind::Binary(op, l, r) => {
            let prec = |e: &Expr| match &e.kind {
                ExprKind::Binary(o, ..) if o.is_comparison() => 0,
                ExprKind::Binary(BinOp::Add, ..) | ExprKind::Binary(BinOp::Sub, ..) => 1,
                ExprKind::Binary(..) => 2,
                _ => 3,
            };
            let my = if op.is_comparison() {
                0
            } else if matches!(op, BinOp::Add | BinOp::Sub) {
                1
            } else {
                2
            };
            let wrap_l = prec(l) < my;
            // Right operand needs parens at equal precedence too: - and /
            // are left-associative.
            let wrap_r = prec(r) <= my;
            if wrap_l {
                out.push('(');
            }
            fmt_expr(l, out);
            if wrap_l {
                out.push(')');
            }
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            if wrap_r {
                out.push('(');
            }
            fmt_expr(r, out);
            if wrap_r {
                out.push(')');
            }
        }
        ExprKind::Neg(i) => {
            out.push_str("-(");
            fmt_expr(i, out);
            out.push(')');
        }
    }
}

fn fmt_stmt(s: &Stmt, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    for v in &s.xfer_in {
        out.push_str(&pad);
        out.push_str(&format!("#pragma xfer copyin({v})\n"));
    }
    for v in &s.xfer_out {
        out.push_str(&pad);
        out.push_str(&format!("#pragma xfer copyout({v})\n"));
    }
    out.push_str(&pad);
    match &s.kind {
        StmtKind::Assign { target, value } => {
            match target {
                LValue::Scalar(n) => out.push_str(n),
                LValue::Element(n, i) => {
                    out.push_str(n);
                    out.push('[');
                    fmt_expr(i, out);
                    out.push(']');
                }
            }
            out.push_str(" = ");
            fmt_expr(value, out);
            out.push_str(";\n");
        }
        StmtKind::For {
            var,
            init,
            bound,
            step,
            body,
            ..
        } => {
            out.push_str(&format!("for ({var} = "));
            fmt_expr(init, out);
            out.push_str(&format!("; {var} < "));
            fmt_expr(bound, out);
            out.push_str(&format!("; {var} = {var} + {step}) {{\n"));
            for b in body {
                fmt_stmt(b, indent + 1, out);
            }
            out.push_str(&pad);
            out.push_str("}\n");
        }
        StmtKind::While { cond, body, .. } => {
            out.push_str("while (");
            fmt_expr(cond, out);
            out.push_str(") {\n");
            for b in body {
                fmt_stmt(b, indent + 1, out);
            }
            out.push_str(&pad);
            out.push_str("}\n");
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            out.push_str("if (");
            fmt_expr(cond, out);
            out.push_str(") {\n");
            for b in then_body {
                fmt_stmt(b, indent + 1, out);
            }
            out.push_str(&pad);
            out.push('}');
            if !else_body.is_empty() {
                out.push_str(" else {\n");
                for b in else_body {
                    fmt_stmt(b, indent + 1, out);
                }
                out.push_str(&pad);
                out.push('}');
            }
            out.push('\n');
        }
        StmtKind::Call { name, args } => {
            out.push_str(&format!("call {name}("));
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                fmt_expr(a, out);
            }
            out.push_str(");\n");
        }
        StmtKind::Output(e) => {
            out.push_str("output ");
            fmt_expr(e, out);
            out.push_str(";\n");
        }
        StmtKind::AccelCall {
            kernel_id,
            inputs,
            outputs,
            size_elems,
        } => {
            out.push_str(&format!(
                "accel {kernel_id} in({}) out({}) size({size_elems});\n",
                inputs.join(", "),
                outputs.join(", ")
            ));
        }
    }
}

/// Reassign loop ids densely in preorder. Needed after a transform removes
/// loops, so that printing and re-parsing reproduces the same ids.
pub fn renumber_loops(ast: &mut Ast) {
    fn visit(stmts: &mut [Stmt], next: &mut u32) {
        for s in stmts {
            match &mut s.kind {
                StmtKind::For { id, body, .. } | StmtKind::While { id, body, .. } => {
                    *id = LoopId(*next);
                    *next += 1;
                    visit(body, next);
                }
                StmtKind::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    visit(then_body, next);
                    visit(else_body, next);
                }
                _ => {}
            }
        }
    }
    let mut next = 0;
    visit(&mut ast.stmts, &mut next);
}

/// Render the program back to ELC source. Parsing the result yields a
/// structurally equal tree with identical loop ids.
pub fn pretty_print(ast: &Ast) -> String {
    let mut out = String::new();
    for d in &ast.decls {
        let kw = match d.kind {
            ElemKind::Int => "int",
            ElemKind::Float => "float",
        };
        match d.len {
            Some(n) => out.push_str(&format!("{kw} {}[{n}];\n", d.name)),
            None => out.push_str(&format!("{kw} {};\n", d.name)),
        }
    }
    for s in &ast.stmts {
        fmt_stmt(s, 0, &mut out);
    }
    out
}
