//! Syntax tree for the robot command language.

use std::fmt;

use serde::{Deserialize, Serialize};

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub column: u32,
}

impl Pos {
    pub fn new(line: u32, column: u32) -> Self {
        Self { line, column }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// A parsed program. Keeps the source it was parsed from so composed skills
/// can be persisted verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub statements: Vec<Stmt>,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Assign {
        target: String,
        value: Expr,
    },
    Expr(Expr),
    If {
        cond: Expr,
        then_block: Vec<Stmt>,
        else_block: Option<Vec<Stmt>>,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    /// `for var in range(start, end) { ... }`, iterating start..end-1.
    ForRange {
        var: String,
        start: Expr,
        end: Expr,
        body: Vec<Stmt>,
    },
    Return(Option<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Number(f64),
    Str(String),
    Bool(bool),
    List(Vec<Expr>),
    Record(Vec<(String, Expr)>),
    Var(String),
    Unary {
        op: UnaryOp,
        operand: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Index {
        target: Box<Expr>,
        index: Box<Expr>,
    },
    Field {
        target: Box<Expr>,
        name: String,
    },
    Call {
        name: String,
        args: Vec<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
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
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::And => "and",
            BinaryOp::Or => "or",
        }
    }
}

/// A call site found while walking a program.
#[derive(Debug, Clone, PartialEq)]
pub struct CallSite<'a> {
    pub name: &'a str,
    pub args: &'a [Expr],
    pub pos: Pos,
}

impl Program {
    /// Every call site in source order (outer calls before their arguments).
    pub fn call_sites(&self) -> Vec<CallSite<'_>> {
        let mut out = Vec::new();
        for stmt in &self.statements {
            collect_stmt(stmt, &mut out);
        }
        out
    }
}

fn collect_stmt<'a>(stmt: &'a Stmt, out: &mut Vec<CallSite<'a>>) {
    match &stmt.kind {
        StmtKind::Assign { value, .. } => collect_expr(value, out),
        StmtKind::Expr(e) => collect_expr(e, out),
        StmtKind::If {
            cond,
            then_block,
            else_block,
        } => {
            collect_expr(cond, out);
            then_block.iter().for_each(|s| collect_stmt(s, out));
            if let Some(block) = else_block {
                block.iter().for_each(|s| collect_stmt(s, out));
            }
        }
        StmtKind::While { cond, body } => {
            collect_expr(cond, out);
            body.iter().for_each(|s| collect_stmt(s, out));
        }
        StmtKind::ForRange {
            start, end, body, ..
        } => {
            collect_expr(start, out);
            collect_expr(end, out);
            body.iter().for_each(|s| collect_stmt(s, out));
        }
        StmtKind::Return(Some(e)) => collect_expr(e, out),
        StmtKind::Return(None) => {}
    }
}

fn collect_expr<'a>(expr: &'a Expr, out: &mut Vec<CallSite<'a>>) {
    match &expr.kind {
        ExprKind::Number(_) | ExprKind::Str(_) | ExprKind::Bool(_) | ExprKind::Var(_) => {}
        ExprKind::List(items) => items.iter().for_each(|e| collect_expr(e, out)),
        ExprKind::Record(fields) => fields.iter().for_each(|(_, e)| collect_expr(e, out)),
        ExprKind::Unary { operand, .. } => collect_expr(operand, out),
        ExprKind::Binary { lhs, rhs, .. } => {
            collect_expr(lhs, out);
            collect_expr(rhs, out);
        }
        ExprKind::Index { target, index } => {
            collect_expr(target, out);
            collect_expr(index, out);
        }
        ExprKind::Field { target, .. } => collect_expr(target, out),
        ExprKind::Call { name, args } => {
            out.push(CallSite {
                name,
                args,
                pos: expr.pos,
            });
            args.iter().for_each(|e| collect_expr(e, out));
        }
    }
}
