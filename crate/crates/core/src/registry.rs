//! The high-level robot function library.
//!
//! A registry lists the functions a model may call, renders them into the
//! prompt, and binds them to a world backend. Primitive functions map to a
//! world effect of the same name; composed functions carry a parsed body
//! that is run by the interpreter. Registries are values: `register` and
//! `compose` return a new registry and leave the receiver untouched.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsl::{self, parse_program, ExecLimits, ExecTrace, Program, SyntaxError, Value};
use crate::worlds::World;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Number,
    String,
    Boolean,
    /// A list of arbitrary values (e.g. waypoints, layout records).
    List,
    ListOfNumber,
    Record,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Number => "number",
            ParamKind::String => "string",
            ParamKind::Boolean => "boolean",
            ParamKind::List => "list",
            ParamKind::ListOfNumber => "list-of-number",
            ParamKind::Record => "record",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ParamKind::Number | ParamKind::ListOfNumber)
    }

    pub fn accepts(self, value: &Value) -> bool {
        match (self, value) {
            (ParamKind::Number, Value::Number(_))
            | (ParamKind::String, Value::Str(_))
            | (ParamKind::Boolean, Value::Bool(_))
            | (ParamKind::List, Value::List(_))
            | (ParamKind::Record, Value::Record(_)) => true,
            (ParamKind::ListOfNumber, Value::List(items)) => {
                items.iter().all(|v| matches!(v, Value::Number(_)))
            }
            _ => false,
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default)]
    pub description: String,
}

impl ParamSpec {
    pub fn new(name: &str, kind: ParamKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            unit: None,
            description: String::new(),
        }
    }

    pub fn number(name: &str, unit: &str) -> Self {
        Self::new(name, ParamKind::Number).with_unit(unit)
    }

    pub fn with_unit(mut self, unit: &str) -> Self {
        self.unit = Some(unit.to_string());
        self
    }

    pub fn with_description(mut self, description: &str) -> Self {
        self.description = description.to_string();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionBody {
    Primitive,
    Composed(ComposedBody),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedBody {
    pub program: Program,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiFunction {
    pub name: String,
    pub params: Vec<ParamSpec>,
    pub returns: Option<ParamKind>,
    pub description: String,
    pub body: FunctionBody,
}

impl ApiFunction {
    pub fn primitive(
        name: &str,
        params: Vec<ParamSpec>,
        returns: Option<ParamKind>,
        description: &str,
    ) -> Self {
        Self {
            name: name.to_string(),
            params,
            returns,
            description: description.to_string(),
            body: FunctionBody::Primitive,
        }
    }

    pub fn is_composed(&self) -> bool {
        matches!(self.body, FunctionBody::Composed(_))
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }

    /// Runtime argument check: arity plus kind of every value.
    pub fn check_args(&self, args: &[Value]) -> Result<(), String> {
        if args.len() != self.params.len() {
            return Err(format!(
                "{} expects {} arguments, got {}",
                self.name,
                self.params.len(),
                args.len()
            ));
        }
        for (param, arg) in self.params.iter().zip(args) {
            if !param.kind.accepts(arg) {
                return Err(format!(
                    "{}: parameter `{}` expects {}, got {}",
                    self.name,
                    param.name,
                    param.kind,
                    arg.kind_name()
                ));
            }
        }
        Ok(())
    }

    /// `name(param: kind [unit], ...) -> returns`, then U+2014 and the description.
    pub fn signature_line(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| match &p.unit {
                Some(unit) => format!("{}: {} [{}]", p.name, p.kind, unit),
                None => format!("{}: {}", p.name, p.kind),
            })
            .collect();
        let returns = self.returns.map_or("none", ParamKind::as_str);
        format!(
            "{}({}) -> {} \u{2014} {}",
            self.name,
            params.join(", "),
            returns,
            self.description
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("function `{0}` is already registered")]
    DuplicateName(String),
    #[error("`{0}` is not a valid identifier")]
    InvalidIdentifier(String),
    #[error("`{0}` is reserved by the language")]
    ReservedName(String),
    #[error("parameter `{param}` appears twice in `{function}`")]
    DuplicateParam { function: String, param: String },
    #[error("parameter `{param}` of `{function}` has a unit but kind {kind}")]
    UnitOnNonNumeric {
        function: String,
        param: String,
        kind: ParamKind,
    },
    #[error("`{0}` must be registered with compose, not register")]
    NotPrimitive(String),
    #[error("call to unregistered function `{0}`")]
    UnresolvedCall(String),
    #[error("`{function}` takes {expected} arguments but is called with {found}")]
    ArityMismatch {
        function: String,
        expected: String,
        found: usize,
    },
    #[error("`{0}` calls itself")]
    SelfRecursion(String),
    #[error("body does not parse: {0}")]
    Syntax(#[from] SyntaxError),
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("world has no effect named `{0}`")]
    MissingBackendEffect(String),
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, Default)]
pub struct ApiRegistry {
    functions: Vec<ApiFunction>,
    index: HashMap<String, usize>,
}

impl PartialEq for ApiRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.functions == other.functions
    }
}

impl ApiRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ApiFunction> {
        self.index.get(name).map(|&i| &self.functions[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Functions in registration order.
    pub fn functions(&self) -> impl Iterator<Item = &ApiFunction> {
        self.functions.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.iter().map(|f| f.name.as_str())
    }

    fn check_signature(&self, name: &str, params: &[ParamSpec]) -> Result<(), RegistryError> {
        if !is_identifier(name) {
            return Err(RegistryError::InvalidIdentifier(name.to_string()));
        }
        if dsl::KEYWORDS.contains(&name)
            || dsl::builtins::lookup(name).is_some()
            || name == "range"
        {
            return Err(RegistryError::ReservedName(name.to_string()));
        }
        if self.contains(name) {
            return Err(RegistryError::DuplicateName(name.to_string()));
        }
        let mut seen = HashSet::new();
        for p in params {
            if !is_identifier(&p.name) || dsl::KEYWORDS.contains(&p.name.as_str()) {
                return Err(RegistryError::InvalidIdentifier(p.name.clone()));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(RegistryError::DuplicateParam {
                    function: name.to_string(),
                    param: p.name.clone(),
                });
            }
            if p.unit.is_some() && !p.kind.is_numeric() {
                return Err(RegistryError::UnitOnNonNumeric {
                    function: name.to_string(),
                    param: p.name.clone(),
                    kind: p.kind,
                });
            }
        }
        Ok(())
    }

    fn with(&self, func: ApiFunction) -> Self {
        let mut next = self.clone();
        next.index.insert(func.name.clone(), next.functions.len());
        next.functions.push(func);
        next
    }

    /// Returns a registry extended with the primitive `func`.
    pub fn register(&self, func: ApiFunction) -> Result<Self, RegistryError> {
        if func.is_composed() {
            return Err(RegistryError::NotPrimitive(func.name));
        }
        self.check_signature(&func.name, &func.params)?;
        Ok(self.with(func))
    }

    /// Returns a registry extended with a function whose body is a program
    /// over already-registered functions.
    pub fn compose(
        &self,
        name: &str,
        params: Vec<ParamSpec>,
        returns: Option<ParamKind>,
        description: &str,
        body: Program,
    ) -> Result<Self, RegistryError> {
        self.check_signature(name, &params)?;
        for call in body.call_sites() {
            if call.name == name {
                return Err(RegistryError::SelfRecursion(name.to_string()));
            }
        }
        for call in body.call_sites() {
            if let Some(func) = self.get(call.name) {
                if func.arity() != call.args.len() {
                    return Err(RegistryError::ArityMismatch {
                        function: call.name.to_string(),
                        expected: func.arity().to_string(),
                        found: call.args.len(),
                    });
                }
            } else if let Some(builtin) = dsl::builtins::lookup(call.name) {
                if !builtin.arity.accepts(call.args.len()) {
                    return Err(RegistryError::ArityMismatch {
                        function: call.name.to_string(),
                        expected: builtin.arity.describe(),
                        found: call.args.len(),
                    });
                }
            } else {
                return Err(RegistryError::UnresolvedCall(call.name.to_string()));
            }
        }
        Ok(self.with(ApiFunction {
            name: name.to_string(),
            params,
            returns,
            description: description.to_string(),
            body: FunctionBody::Composed(ComposedBody { program: body }),
        }))
    }

    /// Convenience wrapper over [`compose`](Self::compose) taking source text.
    pub fn compose_source(
        &self,
        name: &str,
        params: Vec<ParamSpec>,
        description: &str,
        source: &str,
    ) -> Result<Self, RegistryError> {
        let body = parse_program(source)?;
        self.compose(name, params, None, description, body)
    }

    /// One line per function in registration order.
    pub fn render_prompt_section(&self) -> Result<String, RegistryError> {
        if self.is_empty() {
            return Err(RegistryError::EmptyRegistry);
        }
        let mut out = String::new();
        for func in &self.functions {
            out.push_str(&func.signature_line());
            out.push('\n');
        }
        Ok(out)
    }

    /// Binds every primitive to the matching effect of `world`.
    pub fn bind<'w>(&self, world: &'w mut dyn World) -> Result<BoundRegistry<'w>, RegistryError> {
        let effects = world.effect_names();
        for func in &self.functions {
            if !func.is_composed() && !effects.contains(&func.name.as_str()) {
                return Err(RegistryError::MissingBackendEffect(func.name.clone()));
            }
        }
        Ok(BoundRegistry {
            registry: self.clone(),
            world,
        })
    }

    pub fn from_descriptors(descriptors: &[FunctionDescriptor]) -> Result<Self, RegistryError> {
        descriptors
            .iter()
            .try_fold(Self::new(), |reg, d| reg.add_descriptor(d))
    }

    pub fn add_descriptor(&self, d: &FunctionDescriptor) -> Result<Self, RegistryError> {
        match &d.body {
            None => self.register(ApiFunction::primitive(
                &d.name,
                d.params.clone(),
                d.returns,
                &d.description,
            )),
            Some(source) => {
                let body = parse_program(source)?;
                self.compose(&d.name, d.params.clone(), d.returns, &d.description, body)
            }
        }
    }

    pub fn to_descriptors(&self) -> Vec<FunctionDescriptor> {
        self.functions
            .iter()
            .map(|f| FunctionDescriptor {
                name: f.name.clone(),
                params: f.params.clone(),
                returns: f.returns,
                description: f.description.clone(),
                body: match &f.body {
                    FunctionBody::Primitive => None,
                    FunctionBody::Composed(c) => Some(c.program.source.clone()),
                },
            })
            .collect()
    }
}

/// Serialized form of a registry entry; composed functions keep their
/// source in `body`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDescriptor {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub returns: Option<ParamKind>,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
}

/// A registry bound to a live world: the callable table used by the
/// interpreter. Only registered names are invocable, whatever else the
/// world exposes.
pub struct BoundRegistry<'w> {
    registry: ApiRegistry,
    pub(crate) world: &'w mut dyn World,
}

impl<'w> BoundRegistry<'w> {
    pub fn registry(&self) -> &ApiRegistry {
        &self.registry
    }

    pub fn world(&self) -> &dyn World {
        &*self.world
    }

    pub fn invocable_names(&self) -> Vec<&str> {
        self.registry.names().collect()
    }

    /// Calls one registered function with literal arguments.
    pub fn invoke(
        &mut self,
        name: &str,
        args: &[Value],
        limits: ExecLimits,
    ) -> Result<ExecTrace, RegistryError> {
        if !self.registry.contains(name) {
            return Err(RegistryError::UnresolvedCall(name.to_string()));
        }
        let source = format!(
            "{name}({})",
            args.iter().map(dsl_literal).collect::<Vec<_>>().join(", ")
        );
        let program = parse_program(&source)?;
        Ok(dsl::execute(&program, self, limits, 0))
    }
}

/// Renders a value as command-language source.
pub fn dsl_literal(value: &Value) -> String {
    match value {
        Value::None => "[]".into(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => {
            if n.is_finite() {
                format!("{n:?}")
            } else {
                "0".into()
            }
        }
        Value::Str(s) => serde_json::to_string(s).expect("string serializes"),
        Value::List(items) => format!(
            "[{}]",
            items.iter().map(dsl_literal).collect::<Vec<_>>().join(", ")
        ),
        Value::Record(map) => format!(
            "{{{}}}",
            map.iter()
                .map(|(k, v)| format!("{}: {}", serde_json::to_string(k).expect("key"), dsl_literal(v)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}
