//! The restricted robot command language.
//!
//! Programs are brace-delimited statement lists: assignments, calls,
//! `if`/`else`, `while`, `for i in range(a, b)` and `return`. The only
//! callable names are registry functions and the pure builtins; there are
//! no user-defined functions, imports or host access.

pub mod ast;
pub mod builtins;
mod interp;
mod lexer;
mod parser;
pub mod value;

use std::fmt;

pub use ast::{CallSite, Expr, ExprKind, Pos, Program, Stmt, StmtKind};
pub use builtins::{builtins, Arity, Builtin};
pub use interp::{
    execute, execute_observed, ApiCall, EventKind, ExecLimits, ExecTrace, HaltReason, Observer,
    Outcome, TraceEvent,
};
pub use lexer::KEYWORDS;
pub use parser::parse_program;
pub use value::Value;

/// Name used for the language in prompts and code-fence labels.
pub const LANGUAGE_NAME: &str = "robocmd";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct SyntaxError {
    pub line: u32,
    pub column: u32,
    pub expected: Vec<String>,
    pub found: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "syntax error at {}:{}: expected {}, found {}",
            self.line,
            self.column,
            self.expected.join(" or "),
            self.found
        )
    }
}
