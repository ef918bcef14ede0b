//! Recursive-descent parser for ELC.

use super::ast::*;
use super::lexer::{lex, Spanned, Tok};
use super::ParseError;
use std::collections::HashMap;

struct Parser {
    toks: Vec<Spanned>,
    idx: usize,
    /// name -> (is_array, auto-declared loop var)
    vars: HashMap<String, bool>,
    decls: Vec<Decl>,
    next_loop: u32,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.idx)
    }

    fn pos(&self) -> Pos {
        self.toks
            .get(self.idx)
            .map(|t| t.pos)
            .or_else(|| self.toks.last().map(|t| t.pos))
            .unwrap_or_default()
    }

    fn bump(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> ParseError {
        let found = self
            .peek()
            .map(|t| t.tok.describe())
            .unwrap_or_else(|| "end of input".into());
        ParseError::Syntax {
            pos: self.pos(),
            expected: format!("{expected}, found {found}"),
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<Pos, ParseError> {
        match self.peek() {
            Some(t) if &t.tok == tok => Ok(self.bump().unwrap().pos),
            _ => Err(self.err(what)),
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        match self.peek() {
            Some(Spanned {
                tok: Tok::Ident(_), ..
            }) => {
                let t = self.bump().unwrap();
                if let Tok::Ident(name) = t.tok {
                    Ok((name, t.pos))
                } else {
                    unreachable!()
                }
            }
            _ => Err(self.err(what)),
        }
    }

    fn check_declared(&self, name: &str, pos: Pos) -> Result<bool, ParseError> {
        match self.vars.get(name) {
            Some(&is_array) => Ok(is_array),
            None => Err(ParseError::UndeclaredVariable {
                name: name.to_string(),
                pos,
            }),
        }
    }

    fn ensure_loop_var(&mut self, name: &str, pos: Pos) -> Result<(), ParseError> {
        match self.vars.get(name) {
            Some(&true) => Err(ParseError::Syntax {
                pos,
                expected: format!("scalar loop variable, `{name}` is an array"),
            }),
            Some(&false) => Ok(()),
            None => {
                self.vars.insert(name.to_string(), false);
                self.decls.push(Decl {
                    name: name.to_string(),
                    kind: ElemKind::Int,
                    len: None,
                    pos,
                });
                Ok(())
            }
        }
    }

    // ---- expressions ----

    fn parse_primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Int(v)) => {
                self.bump();
                Ok(Expr::new(ExprKind::Int(v), pos))
            }
            Some(Tok::Float(v)) => {
                self.bump();
                Ok(Expr::new(ExprKind::Float(v), pos))
            }
            Some(Tok::Minus) => {
                self.bump();
                let inner = self.parse_primary()?;
                // Fold negation of literals so `-3` is a constant.
                match inner.kind {
                    ExprKind::Int(v) => Ok(Expr::new(ExprKind::Int(-v), pos)),
                    ExprKind::Float(v) => Ok(Expr::new(ExprKind::Float(-v), pos)),
                    _ => Ok(Expr::new(ExprKind::Neg(Box::new(inner)), pos)),
                }
            }
            Some(Tok::LParen) => {
                self.bump();
                let e = self.parse_expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.bump();
                let is_array = self.check_declared(&name, pos)?;
                if self.peek().map(|t| &t.tok) == Some(&Tok::LBracket) {
                    if !is_array {
                        return Err(ParseError::Syntax {
                            pos,
                            expected: format!("array variable, `{name}` is a scalar"),
                        });
                    }
                    self.bump();
                    let idx = self.parse_expr()?;
                    self.expect(&Tok::RBracket, "`]`")?;
                    Ok(Expr::new(ExprKind::Index(name, Box::new(idx)), pos))
                } else {
                    if is_array {
                        return Err(ParseError::Syntax {
                            pos,
                            expected: format!("indexed access, `{name}` is an array"),
                        });
                    }
                    Ok(Expr::new(ExprKind::Var(name), pos))
                }
            }
            _ => Err(self.err("expression")),
        }
    }

    fn parse_term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_primary()?;
        loop {
            let op = match self.peek().map(|t| &t.tok) {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            let pos = self.bump().unwrap().pos;
            let rhs = self.parse_primary()?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos);
        }
        Ok(lhs)
    }

    fn parse_additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_term()?;
        loop {
            let op = match self.peek().map(|t| &t.tok) {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            let pos = self.bump().unwrap().pos;
            let rhs = self.parse_term()?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos);
        }
        Ok(lhs)
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.parse_additive()?;
        let op = match self.peek().map(|t| &t.tok) {
            Some(Tok::Lt) => BinOp::Lt,
            Some(Tok::Le) => BinOp::Le,
            Some(Tok::Gt) => BinOp::Gt,
            Some(Tok::Ge) => BinOp::Ge,
            Some(Tok::EqEq) => BinOp::Eq,
            Some(Tok::Ne) => BinOp::Ne,
            _ => return Ok(lhs),
        };
        let pos = self.bump().unwrap().pos;
        let rhs = self.parse_additive()?;
        Ok(Expr::new(
            ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
            pos,
        ))
    }

    // ---- statements ----

    fn parse_block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(&Tok::LBrace, "`{`")?;
        let mut body = Vec::new();
        while self.peek().map(|t| &t.tok) != Some(&Tok::RBrace) {
            if self.peek().is_none() {
                return Err(self.err("`}`"));
            }
            body.push(self.parse_stmt()?);
        }
        self.bump();
        Ok(body)
    }

    fn parse_for(&mut self, pos: Pos) -> Result<Stmt, ParseError> {
        self.expect(&Tok::LParen, "`(`")?;
        let (var, vpos) = self.expect_ident("loop variable")?;
        self.ensure_loop_var(&var, vpos)?;
        self.expect(&Tok::Assign, "`=`")?;
        let init = self.parse_expr()?;
        self.expect(&Tok::Semi, "`;`")?;
        let (cvar, cpos) = self.expect_ident("loop variable in condition")?;
        if cvar != var {
            return Err(ParseError::Syntax {
                pos: cpos,
                expected: format!("`{var}` in loop condition"),
            });
        }
        self.expect(&Tok::Lt, "`<`")?;
        let bound = self.parse_expr()?;
        self.expect(&Tok::Semi, "`;`")?;
        let (uvar, upos) = self.expect_ident("loop variable in update")?;
        if uvar != var {
            return Err(ParseError::Syntax {
                pos: upos,
                expected: format!("`{var}` in loop update"),
            });
        }
        self.expect(&Tok::Assign, "`=`")?;
        let (u2, u2pos) = self.expect_ident("loop variable in update")?;
        if u2 != var {
            return Err(ParseError::Syntax {
                pos: u2pos,
                expected: format!("`{var}` on the right of the update"),
            });
        }
        self.expect(&Tok::Plus, "`+`")?;
        let step = match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Int(v)) if v > 0 => {
                self.bump();
                v
            }
            _ => return Err(self.err("positive integer step")),
        };
        self.expect(&Tok::RParen, "`)`")?;
        let id = LoopId(self.next_loop);
        self.next_loop += 1;
        let body = self.parse_block()?;
        Ok(Stmt::new(
            StmtKind::For {
                id,
                var,
                init,
                bound,
                step,
                body,
            },
            pos,
        ))
    }

    fn parse_stmt(&mut self) -> Result<Stmt, ParseError> {
        // Gather pragmas; they attach to the loop that follows.
        let mut xin = Vec::new();
        let mut xout = Vec::new();
        while let Some(Spanned {
            tok: Tok::Pragma { .. },
            ..
        }) = self.peek()
        {
            let t = self.bump().unwrap();
            if let Tok::Pragma { copyout, var } = t.tok {
                let pos = t.pos;
                self.check_declared(&var, pos)?;
                if copyout {
                    xout.push(var);
                } else {
                    xin.push(var);
                }
            }
        }
        let pos = self.pos();
        let mut stmt = match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::KwFor) => {
                self.bump();
                self.parse_for(pos)?
            }
            Some(Tok::KwWhile) => {
                self.bump();
                self.expect(&Tok::LParen, "`(`")?;
                let cond = self.parse_expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                let id = LoopId(self.next_loop);
                self.next_loop += 1;
                let body = self.parse_block()?;
                Stmt::new(StmtKind::While { id, cond, body }, pos)
            }
            Some(Tok::KwIf) => {
                self.bump();
                self.expect(&Tok::LParen, "`(`")?;
                let cond = self.parse_expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                let then_body = self.parse_block()?;
                let else_body = if self.peek().map(|t| &t.tok) == Some(&Tok::KwElse) {
                    self.bump();
                    self.parse_block()?
                } else {
                    Vec::new()
                };
                Stmt::new(
                    StmtKind::If {
                        cond,
                        then_body,
                        else_body,
                    },
                    pos,
                )
            }
            Some(Tok::KwCall) => {
                self.bump();
                let (name, _) = self.expect_ident("block name")?;
                self.expect(&Tok::LParen, "`(`")?;
                let mut args = Vec::new();
                if self.peek().map(|t| &t.tok) != Some(&Tok::RParen) {
                    loop {
                        // A bare array name is legal as a call argument: the
                        // array is passed in/out by reference.
                        let arg = match self.peek().map(|t| t.tok.clone()) {
                            Some(Tok::Ident(n))
                                if self.vars.get(&n) == Some(&true)
                                    && matches!(
                                        self.toks.get(self.idx + 1).map(|t| &t.tok),
                                        Some(Tok::Comma) | Some(Tok::RParen)
                                    ) =>
                            {
                                let apos = self.bump().unwrap().pos;
                                Expr::new(ExprKind::Var(n), apos)
                            }
                            _ => self.parse_expr()?,
                        };
                        args.push(arg);
                        if self.peek().map(|t| &t.tok) == Some(&Tok::Comma) {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(&Tok::RParen, "`)`")?;
                self.expect(&Tok::Semi, "`;`")?;
                Stmt::new(StmtKind::Call { name, args }, pos)
            }
            Some(Tok::KwOutput) => {
                self.bump();
                let e = self.parse_expr()?;
                self.expect(&Tok::Semi, "`;`")?;
                Stmt::new(StmtKind::Output(e), pos)
            }
            Some(Tok::KwAccel) => {
                self.bump();
                let (kernel_id, _) = self.expect_ident("kernel id")?;
                let clause = |p: &mut Self, kw: &str| -> Result<Vec<String>, ParseError> {
                    let (w, wpos) = p.expect_ident(kw)?;
                    if w != kw {
                        return Err(ParseError::Syntax {
                            pos: wpos,
                            expected: format!("`{kw}` clause"),
                        });
                    }
                    p.expect(&Tok::LParen, "`(`")?;
                    let mut names = Vec::new();
                    if p.peek().map(|t| &t.tok) != Some(&Tok::RParen) {
                        loop {
                            let (n, npos) = p.expect_ident("variable")?;
                            p.check_declared(&n, npos)?;
                            names.push(n);
                            if p.peek().map(|t| &t.tok) == Some(&Tok::Comma) {
                                p.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    p.expect(&Tok::RParen, "`)`")?;
                    Ok(names)
                };
                let inputs = clause(self, "in")?;
                let outputs = clause(self, "out")?;
                let (w, wpos) = self.expect_ident("size")?;
                if w != "size" {
                    return Err(ParseError::Syntax {
                        pos: wpos,
                        expected: "`size` clause".into(),
                    });
                }
                self.expect(&Tok::LParen, "`(`")?;
                let size_elems = match self.peek().map(|t| t.tok.clone()) {
                    Some(Tok::Int(v)) if v >= 0 => {
                        self.bump();
                        v as u64
                    }
                    _ => return Err(self.err("element count")),
                };
                self.expect(&Tok::RParen, "`)`")?;
                self.expect(&Tok::Semi, "`;`")?;
                Stmt::new(
                    StmtKind::AccelCall {
                        kernel_id,
                        inputs,
                        outputs,
                        size_elems,
                    },
                    pos,
                )
            }
            Some(Tok::Ident(name)) => {
                self.bump();
                let is_array = self.check_declared(&name, pos)?;
                let target = if self.peek().map(|t| &t.tok) == Some(&Tok::LBracket) {
                    if !is_array {
                        return Err(ParseError::Syntax {
                            pos,
                            expected: format!("array variable, `{name}` is a scalar"),
                        });
                    }
                    self.bump();
                    let idx = self.parse_expr()?;
                    self.expect(&Tok::RBracket, "`]`")?;
                    LValue::Element(name, Box::new(idx))
                } else {
                    if is_array {
                        return Err(ParseError::Syntax {
                            pos,
                            expected: format!("indexed assignment, `{name}` is an array"),
                        });
                    }
                    LValue::Scalar(name)
                };
                self.expect(&Tok::Assign, "`=`")?;
                let value = self.parse_expr()?;
                self.expect(&Tok::Semi, "`;`")?;
                Stmt::new(StmtKind::Assign { target, value }, pos)
            }
            Some(Tok::KwInt) | Some(Tok::KwFloat) => {
                return Err(ParseError::Syntax {
                    pos,
                    expected: "statement; declarations must precede statements".into(),
                })
            }
            _ => return Err(self.err("statement")),
        };
        if (!xin.is_empty() || !xout.is_empty()) && !stmt.is_loop() {
            return Err(ParseError::Syntax {
                pos,
                expected: "loop statement after transfer pragma".into(),
            });
        }
        stmt.xfer_in = xin;
        stmt.xfer_out = xout;
        Ok(stmt)
    }

    fn parse_decl(&mut self, kind: ElemKind) -> Result<(), ParseError> {
        let (name, pos) = self.expect_ident("variable name")?;
        if self.vars.contains_key(&name) {
            return Err(ParseError::Syntax {
                pos,
                expected: format!("fresh name, `{name}` already declared"),
            });
        }
        let len = if self.peek().map(|t| &t.tok) == Some(&Tok::LBracket) {
            self.bump();
            let n = match self.peek().map(|t| t.tok.clone()) {
                Some(Tok::Int(v)) if v > 0 => {
                    self.bump();
                    v as u64
                }
                _ => return Err(self.err("positive array length")),
            };
            self.expect(&Tok::RBracket, "`]`")?;
            Some(n)
        } else {
            None
        };
        self.expect(&Tok::Semi, "`;`")?;
        self.vars.insert(name.clone(), len.is_some());
        self.decls.push(Decl {
            name,
            kind,
            len,
            pos,
        });
        Ok(())
    }
}

/// Parse ELC source into an [`Ast`]. Loop ids are assigned densely in source
/// order, which equals preorder over the finished tree.
pub fn parse(name: &str, text: &str) -> Result<Ast, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        idx: 0,
        vars: HashMap::new(),
        decls: Vec::new(),
        next_loop: 0,
    };
    // Declarations first.
    loop {
        match p.peek().map(|t| t.tok.clone()) {
            Some(Tok::KwInt) => {
                p.bump();
                p.parse_decl(ElemKind::Int)?;
            }
            Some(Tok::KwFloat) => {
                p.bump();
                p.parse_decl(ElemKind::Float)?;
            }
            _ => break,
        }
    }
    let mut stmts = Vec::new();
    while p.peek().is_some() {
        stmts.push(p.parse_stmt()?);
    }
    Ok(Ast {
        name: name.to_string(),
        decls: p.decls,
        stmts,
    })
}
