//! Tree-walking interpreter with a step budget and call-depth limit.
//!
//! Every trace event consumes one step of the budget: assignments, branch
//! decisions (including each loop-condition check) and API calls. Builtin
//! calls are free. When a limit is hit the run halts and a final `error`
//! event is appended past the last counted step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::ast::*;
use super::builtins;
use super::value::Value;
use crate::registry::{ApiFunction, BoundRegistry, FunctionBody};
use crate::worlds::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecLimits {
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_max_call_depth")]
    pub max_call_depth: u32,
}

fn default_max_steps() -> u64 {
    100_000
}

fn default_max_call_depth() -> u32 {
    32
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self {
            max_steps: default_max_steps(),
            max_call_depth: default_max_call_depth(),
        }
    }
}

impl ExecLimits {
    pub fn new(max_steps: u64, max_call_depth: u32) -> Self {
        Self {
            max_steps: max_steps.max(1),
            max_call_depth: max_call_depth.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ApiCall,
    Assign,
    Branch,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCall {
    pub name: String,
    pub args: Vec<Value>,
    pub returned: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum HaltReason {
    StepBudgetExceeded,
    DepthExceeded,
    RuntimeError { message: String, line: u32, column: u32 },
}

impl std::fmt::Display for HaltReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HaltReason::StepBudgetExceeded => write!(f, "step budget exceeded"),
            HaltReason::DepthExceeded => write!(f, "call depth exceeded"),
            HaltReason::RuntimeError {
                message,
                line,
                column,
            } => write!(f, "runtime error at {line}:{column}: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Halted(HaltReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecTrace {
    pub seed: u64,
    pub events: Vec<TraceEvent>,
    pub api_calls: Vec<ApiCall>,
    pub outcome: Outcome,
    /// Steps consumed from the budget.
    pub steps: u64,
    /// Top-level variables when execution stopped.
    pub globals: BTreeMap<String, Value>,
    pub returned: Option<Value>,
}

impl ExecTrace {
    pub fn halted_reason(&self) -> Option<&HaltReason> {
        match &self.outcome {
            Outcome::Completed => None,
            Outcome::Halted(reason) => Some(reason),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

pub type Observer<'o> = dyn FnMut(&TraceEvent, &dyn World) + 'o;

/// Runs `program` against the bound world.
///
/// The seed is recorded in the trace; the language has no randomness of
/// its own, so the trace is fully determined by program, world state and
/// limits.
pub fn execute(
    program: &Program,
    bound: &mut BoundRegistry<'_>,
    limits: ExecLimits,
    seed: u64,
) -> ExecTrace {
    run(program, bound, limits, seed, None)
}

/// Like [`execute`], calling `observer` after each counted event with the
/// world as it is after that event.
pub fn execute_observed(
    program: &Program,
    bound: &mut BoundRegistry<'_>,
    limits: ExecLimits,
    seed: u64,
    observer: &mut Observer<'_>,
) -> ExecTrace {
    run(program, bound, limits, seed, Some(observer))
}

fn run(
    program: &Program,
    bound: &mut BoundRegistry<'_>,
    limits: ExecLimits,
    seed: u64,
    observer: Option<&mut Observer<'_>>,
) -> ExecTrace {
    let mut machine = Machine {
        bound,
        limits,
        steps: 0,
        depth: 0,
        events: Vec::new(),
        api_calls: Vec::new(),
        observer,
    };
    let mut globals = BTreeMap::new();
    let result = machine.block(&program.statements, &mut globals);
    let (outcome, returned) = match result {
        Ok(Flow::Normal) => (Outcome::Completed, None),
        Ok(Flow::Return(v)) => (Outcome::Completed, Some(v)),
        Err(reason) => {
            let step = machine.steps + 1;
            machine.events.push(TraceEvent {
                step,
                kind: EventKind::Error,
                payload: serde_json::to_value(&reason).expect("halt reason serializes"),
            });
            (Outcome::Halted(reason), None)
        }
    };
    ExecTrace {
        seed,
        events: machine.events,
        api_calls: machine.api_calls,
        outcome,
        steps: machine.steps,
        globals,
        returned,
    }
}

enum Flow {
    Normal,
    Return(Value),
}

type Env = BTreeMap<String, Value>;

struct Machine<'b, 'w, 'o, 'f> {
    bound: &'b mut BoundRegistry<'w>,
    limits: ExecLimits,
    steps: u64,
    depth: u32,
    events: Vec<TraceEvent>,
    api_calls: Vec<ApiCall>,
    observer: Option<&'o mut Observer<'f>>,
}

fn runtime(message: impl Into<String>, pos: Pos) -> HaltReason {
    HaltReason::RuntimeError {
        message: message.into(),
        line: pos.line,
        column: pos.column,
    }
}

impl Machine<'_, '_, '_, '_> {
    fn emit(&mut self, kind: EventKind, payload: serde_json::Value) -> Result<(), HaltReason> {
        if self.steps >= self.limits.max_steps {
            return Err(HaltReason::StepBudgetExceeded);
        }
        self.steps += 1;
        let event = TraceEvent {
            step: self.steps,
            kind,
            payload,
        };
        if let Some(observer) = self.observer.as_mut() {
            observer(&event, &*self.bound.world);
        }
        self.events.push(event);
        Ok(())
    }

    fn block(&mut self, stmts: &[Stmt], env: &mut Env) -> Result<Flow, HaltReason> {
        for stmt in stmts {
            if let Flow::Return(v) = self.stmt(stmt, env)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn condition(&mut self, cond: &Expr, env: &mut Env, construct: &str) -> Result<bool, HaltReason> {
        let taken = match self.eval(cond, env)? {
            Value::Bool(b) => b,
            other => {
                return Err(runtime(
                    format!("{construct} condition must be boolean, got {}", other.kind_name()),
                    cond.pos,
                ))
            }
        };
        self.emit(
            EventKind::Branch,
            json!({"construct": construct, "taken": taken, "line": cond.pos.line}),
        )?;
        Ok(taken)
    }

    fn stmt(&mut self, stmt: &Stmt, env: &mut Env) -> Result<Flow, HaltReason> {
        match &stmt.kind {
            StmtKind::Assign { target, value } => {
                let v = self.eval(value, env)?;
                self.emit(EventKind::Assign, json!({"name": target, "value": &v}))?;
                env.insert(target.clone(), v);
            }
            StmtKind::Expr(e) => {
                self.eval(e, env)?;
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                if self.condition(cond, env, "if")? {
                    return self.block(then_block, env);
                } else if let Some(block) = else_block {
                    return self.block(block, env);
                }
            }
            StmtKind::While { cond, body } => {
                while self.condition(cond, env, "while")? {
                    if let Flow::Return(v) = self.block(body, env)? {
                        return Ok(Flow::Return(v));
                    }
                }
            }
            StmtKind::ForRange {
                var,
                start,
                end,
                body,
            } => {
                let lo = self.number(start, env, "range start")?;
                let hi = self.number(end, env, "range end")?;
                let mut i = lo;
                loop {
                    let taken = i < hi;
                    self.emit(
                        EventKind::Branch,
                        json!({"construct": "for", "taken": taken, "line": stmt.pos.line}),
                    )?;
                    if !taken {
                        break;
                    }
                    env.insert(var.clone(), Value::Number(i));
                    if let Flow::Return(v) = self.block(body, env)? {
                        return Ok(Flow::Return(v));
                    }
                    i += 1.0;
                }
            }
            StmtKind::Return(value) => {
                let v = match value {
                    Some(e) => self.eval(e, env)?,
                    None => Value::None,
                };
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn number(&mut self, e: &Expr, env: &mut Env, what: &str) -> Result<f64, HaltReason> {
        match self.eval(e, env)? {
            Value::Number(n) if n.is_finite() => Ok(n),
            other => Err(runtime(
                format!("{what} must be a finite number, got {other}"),
                e.pos,
            )),
        }
    }

    fn eval(&mut self, e: &Expr, env: &mut Env) -> Result<Value, HaltReason> {
        Ok(match &e.kind {
            ExprKind::Number(n) => Value::Number(*n),
            ExprKind::Str(s) => Value::Str(s.clone()),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::List(items) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(self.eval(item, env)?);
                }
                Value::List(out)
            }
            ExprKind::Record(fields) => {
                let mut out = BTreeMap::new();
                for (k, v) in fields {
                    let v = self.eval(v, env)?;
                    out.insert(k.clone(), v);
                }
                Value::Record(out)
            }
            ExprKind::Var(name) => env
                .get(name)
                .cloned()
                .ok_or_else(|| runtime(format!("undefined variable `{name}`"), e.pos))?,
            ExprKind::Unary { op, operand } => {
                let v = self.eval(operand, env)?;
                match (op, v) {
                    (UnaryOp::Neg, Value::Number(n)) => Value::Number(-n),
                    (UnaryOp::Not, Value::Bool(b)) => Value::Bool(!b),
                    (op, v) => {
                        return Err(runtime(
                            format!("cannot apply {op:?} to {}", v.kind_name()),
                            e.pos,
                        ))
                    }
                }
            }
            ExprKind::Binary { op, lhs, rhs } => self.binary(*op, lhs, rhs, env, e.pos)?,
            ExprKind::Index { target, index } => {
                let t = self.eval(target, env)?;
                let i = self.eval(index, env)?;
                index_value(&t, &i).map_err(|m| runtime(m, e.pos))?
            }
            ExprKind::Field { target, name } => {
                let t = self.eval(target, env)?;
                match &t {
                    Value::Record(map) => map
                        .get(name)
                        .cloned()
                        .ok_or_else(|| runtime(format!("record has no field `{name}`"), e.pos))?,
                    other => {
                        return Err(runtime(
                            format!("field access on {}", other.kind_name()),
                            e.pos,
                        ))
                    }
                }
            }
            ExprKind::Call { name, args } => {
                let mut values = Vec::with_capacity(args.len());
                for a in args {
                    values.push(self.eval(a, env)?);
                }
                self.call(name, values, e.pos)?
            }
        })
    }

    fn binary(
        &mut self,
        op: BinaryOp,
        lhs: &Expr,
        rhs: &Expr,
        env: &mut Env,
        pos: Pos,
    ) -> Result<Value, HaltReason> {
        if matches!(op, BinaryOp::And | BinaryOp::Or) {
            let l = match self.eval(lhs, env)? {
                Value::Bool(b) => b,
                other => return Err(runtime(format!("`{}` needs booleans, got {}", op.symbol(), other.kind_name()), pos)),
            };
            if (op == BinaryOp::And && !l) || (op == BinaryOp::Or && l) {
                return Ok(Value::Bool(l));
            }
            return match self.eval(rhs, env)? {
                Value::Bool(b) => Ok(Value::Bool(b)),
                other => Err(runtime(format!("`{}` needs booleans, got {}", op.symbol(), other.kind_name()), pos)),
            };
        }
        let l = self.eval(lhs, env)?;
        let r = self.eval(rhs, env)?;
        let mismatch = |l: &Value, r: &Value| {
            runtime(
                format!(
                    "cannot apply `{}` to {} and {}",
                    op.symbol(),
                    l.kind_name(),
                    r.kind_name()
                ),
                pos,
            )
        };
        Ok(match op {
            BinaryOp::Eq => Value::Bool(l == r),
            BinaryOp::Ne => Value::Bool(l != r),
            BinaryOp::Add => match (&l, &r) {
                (Value::Number(a), Value::Number(b)) => Value::Number(a + b),
                (Value::Str(a), Value::Str(b)) => Value::Str(format!("{a}{b}")),
                (Value::List(a), Value::List(b)) => {
                    Value::List(a.iter().chain(b.iter()).cloned().collect())
                }
                _ => return Err(mismatch(&l, &r)),
            },
            BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => {
                let (Value::Number(a), Value::Number(b)) = (&l, &r) else {
                    return Err(mismatch(&l, &r));
                };
                match op {
                    BinaryOp::Sub => Value::Number(a - b),
                    BinaryOp::Mul => Value::Number(a * b),
                    _ => {
                        if *b == 0.0 {
                            return Err(runtime("division by zero", pos));
                        }
                        Value::Number(a / b)
                    }
                }
            }
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
                let ord = match (&l, &r) {
                    (Value::Number(a), Value::Number(b)) => a.partial_cmp(b),
                    (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
                    _ => return Err(mismatch(&l, &r)),
                };
                let Some(ord) = ord else {
                    return Err(runtime("comparison with NaN", pos));
                };
                Value::Bool(match op {
                    BinaryOp::Lt => ord.is_lt(),
                    BinaryOp::Le => ord.is_le(),
                    BinaryOp::Gt => ord.is_gt(),
                    _ => ord.is_ge(),
                })
            }
            BinaryOp::And | BinaryOp::Or => unreachable!("handled above"),
        })
    }

    fn call(&mut self, name: &str, args: Vec<Value>, pos: Pos) -> Result<Value, HaltReason> {
        if let Some(func) = self.bound.registry().get(name).cloned() {
            return self.call_api(&func, args, pos);
        }
        if let Some(builtin) = builtins::lookup(name) {
            if !builtin.arity.accepts(args.len()) {
                return Err(runtime(
                    format!(
                        "{name} expects {} arguments, got {}",
                        builtin.arity.describe(),
                        args.len()
                    ),
                    pos,
                ));
            }
            return (builtin.func)(&args).map_err(|m| runtime(m, pos));
        }
        Err(runtime(format!("unknown function `{name}`"), pos))
    }

    fn call_api(&mut self, func: &ApiFunction, args: Vec<Value>, pos: Pos) -> Result<Value, HaltReason> {
        func.check_args(&args).map_err(|m| runtime(m, pos))?;
        if self.depth + 1 > self.limits.max_call_depth {
            return Err(HaltReason::DepthExceeded);
        }
        match &func.body {
            FunctionBody::Primitive => {
                // Budget is checked before the effect so a halted run never
                // leaves an unrecorded world mutation.
                if self.steps >= self.limits.max_steps {
                    return Err(HaltReason::StepBudgetExceeded);
                }
                let returned = self
                    .bound
                    .world
                    .invoke(&func.name, &args)
                    .map_err(|err| runtime(format!("{}: {err}", func.name), pos))?;
                self.api_calls.push(ApiCall {
                    name: func.name.clone(),
                    args: args.clone(),
                    returned: returned.clone(),
                });
                self.emit(
                    EventKind::ApiCall,
                    json!({"name": &func.name, "args": &args, "returned": &returned}),
                )?;
                Ok(returned)
            }
            FunctionBody::Composed(body) => {
                let mut frame: Env = func
                    .params
                    .iter()
                    .map(|p| p.name.clone())
                    .zip(args)
                    .collect();
                self.depth += 1;
                let result = self.block(&body.program.statements, &mut frame);
                self.depth -= 1;
                Ok(match result? {
                    Flow::Normal => Value::None,
                    Flow::Return(v) => v,
                })
            }
        }
    }
}

fn index_value(target: &Value, index: &Value) -> Result<Value, String> {
    match (target, index) {
        (Value::List(items), Value::Number(n)) => {
            if n.fract() != 0.0 || *n < 0.0 || *n as usize >= items.len() {
                return Err(format!("index {n} out of range for list of length {}", items.len()));
            }
            Ok(items[*n as usize].clone())
        }
        (Value::Record(map), Value::Str(key)) => map
            .get(key)
            .cloned()
            .ok_or_else(|| format!("record has no field `{key}`")),
        (t, i) => Err(format!("cannot index {} with {}", t.kind_name(), i.kind_name())),
    }
}
