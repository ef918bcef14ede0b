//! Frontend for the ELC mini-language: parsing, static loop analysis, and a
//! reference interpreter with loop profiling.
//!
//! The grammar is documented in `docs/elc-grammar.md` at the repository root.

pub mod analyze;
pub mod ast;
pub mod interp;
pub mod lexer;
pub mod parser;

pub use analyze::{analyze, check_parallelizable, LoopInfo};
pub use ast::{Ast, BinOp, Decl, ElemKind, Expr, ExprKind, LValue, LoopId, Pos, Stmt, StmtKind};
pub use interp::{
    format_trace_value, interpret, BlockDef, BlockLib, InputBinding, InterpOptions, InterpResult, IterEffects,
    Memory, ProfileReport, Value,
};
pub use parser::parse;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {pos}: expected {expected}")]
    Syntax { pos: Pos, expected: String },
    #[error("undeclared variable `{name}` at {pos}")]
    UndeclaredVariable { name: String, pos: Pos },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RuntimeError {
    #[error("index {index} out of bounds for array `{array}` at {pos}")]
    OutOfBounds { array: String, index: i64, pos: Pos },
    #[error("loop {id} exceeded the step budget and looks divergent")]
    DivergentLoop { id: LoopId },
    #[error("division by zero at {pos}")]
    DivisionByZero { pos: Pos },
    #[error("array index is not an integer at {pos}")]
    NonIntegerIndex { pos: Pos },
    #[error("no functional block registered under `{name}` at {pos}")]
    UnknownBlock { name: String, pos: Pos },
    #[error("no kernel registered under `{kernel_id}` at {pos}")]
    UnknownKernel { kernel_id: String, pos: Pos },
    #[error("block `{name}` expects {expected} array arguments, got {got}")]
    BlockArity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("array `{caller}` has length {caller_len} but block parameter `{param}` needs {param_len}")]
    BlockLengthMismatch {
        caller: String,
        caller_len: u64,
        param: String,
        param_len: u64,
    },
    #[error("input binds unknown variable `{name}`")]
    UnknownInput { name: String },
    #[error("input for `{name}` does not match its declaration: {reason}")]
    BadInput { name: String, reason: String },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalysisError {
    #[error("unknown loop id {0}")]
    UnknownLoopId(LoopId),
}
