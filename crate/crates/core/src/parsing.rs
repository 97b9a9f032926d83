//! Extraction of structured payloads from free-form model replies, and
//! static validation of extracted programs against a registry.
//!
//! Extraction never fails: malformed regions are skipped and reported as
//! warnings next to whatever could be extracted.

use serde::{Deserialize, Serialize};

use crate::dsl::{builtins, Expr, ExprKind, Pos, Program};
use crate::prompting::{ResponseDirective, ResponseMode};
use crate::registry::{ApiRegistry, ParamKind};
use crate::worlds::normalize_deg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Code,
    List,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedBlock {
    pub tag: Option<String>,
    pub kind: BlockKind,
    pub content: String,
    /// Character offsets `[start, end)` of the whole region, delimiters
    /// included.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Extraction {
    pub blocks: Vec<TaggedBlock>,
    pub warnings: Vec<String>,
}

impl Extraction {
    pub fn contents(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.content.as_str()).collect()
    }
}

/// Converts byte offsets into character offsets in one forward pass.
struct CharIndex<'a> {
    text: &'a str,
    byte: usize,
    chars: usize,
}

impl<'a> CharIndex<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, byte: 0, chars: 0 }
    }

    /// `byte` must not decrease between calls.
    fn at(&mut self, byte: usize) -> usize {
        debug_assert!(byte >= self.byte);
        self.chars += self.text[self.byte..byte].chars().count();
        self.byte = byte;
        self.chars
    }
}

/// Finds every `<tag>...</tag>` region in document order.
///
/// Same-name nesting is not supported: when a close tag arrives, the most
/// recent open tag wins and any earlier unclosed opens are dropped with a
/// warning, so returned spans never overlap. Unmatched tags yield no block.
pub fn extract_tagged(text: &str, tag: &str) -> Extraction {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Extraction::default();
    let mut pending: Vec<usize> = Vec::new();
    let mut index = CharIndex::new(text);
    let mut at = 0;
    loop {
        let next_open = text[at..].find(&open).map(|i| i + at);
        let next_close = text[at..].find(&close).map(|i| i + at);
        match (next_open, next_close) {
            (Some(o), c) if c.is_none_or(|c| o < c) => {
                pending.push(o);
                at = o + open.len();
            }
            (_, Some(c)) => {
                if let Some(o) = pending.pop() {
                    for dropped in pending.drain(..) {
                        out.warnings.push(format!(
                            "unclosed <{tag}> at character {} ignored",
                            CharIndex::new(text).at(dropped)
                        ));
                    }
                    let start = index.at(o);
                    let end = index.at(c + close.len());
                    out.blocks.push(TaggedBlock {
                        tag: Some(tag.to_string()),
                        kind: BlockKind::Code,
                        content: text[o + open.len()..c].to_string(),
                        span: (start, end),
                    });
                } else {
                    out.warnings.push(format!(
                        "stray </{tag}> at character {}",
                        CharIndex::new(text).at(c)
                    ));
                }
                at = c + close.len();
            }
            _ => break,
        }
    }
    for o in pending {
        out.warnings.push(format!(
            "unclosed <{tag}> at character {} ignored",
            CharIndex::new(text).at(o)
        ));
    }
    out
}

/// Finds triple-backtick fenced regions; the info string, if any, becomes
/// the block tag.
pub fn extract_code_fences(text: &str) -> Extraction {
    let mut out = Extraction::default();
    let mut index = CharIndex::new(text);
    let mut open: Option<(usize, Option<String>, usize)> = None;
    let mut body_lines: Vec<&str> = Vec::new();
    let mut line_start = 0;
    for raw in text.split_inclusive('\n') {
        let line = raw.trim_end_matches(['\n', '\r']);
        let trimmed = line.trim_start();
        let line_end = line_start + raw.len();
        match &open {
            None => {
                if let Some(rest) = trimmed.strip_prefix("```") {
                    let label = rest.trim();
                    let label = (!label.is_empty()).then(|| label.to_string());
                    open = Some((line_start, label, line_start + line.len()));
                    body_lines.clear();
                }
            }
            Some((start, label, _)) => {
                if trimmed.trim_end() == "```" {
                    let start_chars = index.at(*start);
                    let end_chars = index.at(line_start + line.len());
                    out.blocks.push(TaggedBlock {
                        tag: label.clone(),
                        kind: BlockKind::Code,
                        content: body_lines.join("\n"),
                        span: (start_chars, end_chars),
                    });
                    open = None;
                } else {
                    body_lines.push(line);
                }
            }
        }
        line_start = line_end;
    }
    if let Some((start, _, _)) = open {
        out.warnings.push(format!(
            "unterminated code fence at character {}",
            CharIndex::new(text).at(start)
        ));
    }
    out
}

fn numbered_item(line: &str) -> Option<(u64, &str)> {
    let trimmed = line.trim_start();
    let digits = trimmed.len() - trimmed.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    let n: u64 = trimmed[..digits].parse().ok()?;
    let rest = &trimmed[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some((n, rest.trim()))
}

/// Longest run of lines `1. a`, `2. b`, ... numbered consecutively from 1.
/// Blank lines inside a run are skipped; any other line ends it. Ties go to
/// the earliest run.
pub fn extract_numbered_list(text: &str) -> Vec<String> {
    let mut best: Vec<String> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match numbered_item(line) {
            Some((n, item)) if n == current.len() as u64 + 1 && !current.is_empty() => {
                current.push(item.to_string());
            }
            Some((1, item)) => {
                if current.len() > best.len() {
                    best = std::mem::take(&mut current);
                }
                current = vec![item.to_string()];
            }
            _ => {
                if current.len() > best.len() {
                    best = std::mem::take(&mut current);
                }
                current.clear();
            }
        }
    }
    if current.len() > best.len() {
        best = current;
    }
    best
}

/// Forward distance and turn angle of a closed-loop navigation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub forward_m: f64,
    /// Degrees in (-180, 180], counterclockwise positive.
    pub turn_deg: f64,
}

impl ActionCommand {
    /// Canonical text form accepted by [`parse_action_line`].
    pub fn render(&self) -> String {
        format!("forward {}, turn {}", self.forward_m, self.turn_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed action line: {reason}")]
pub struct MalformedAction {
    pub reason: String,
}

fn malformed(reason: &str) -> MalformedAction {
    MalformedAction {
        reason: reason.to_string(),
    }
}

struct Scanner<'a> {
    rest: &'a str,
}

impl<'a> Scanner<'a> {
    fn ws(&mut self) {
        self.rest = self.rest.trim_start();
    }

    fn keyword(&mut self, kw: &str) -> bool {
        self.ws();
        if self.rest.len() >= kw.len() && self.rest[..kw.len()].eq_ignore_ascii_case(kw) {
            self.rest = &self.rest[kw.len()..];
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Option<f64> {
        self.ws();
        let bytes = self.rest.as_bytes();
        let mut i = 0;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        let digits_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let mut digits = i - digits_start;
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            let frac_start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            digits += i - frac_start;
        }
        if digits == 0 {
            return None;
        }
        let value: f64 = self.rest[..i].parse().ok()?;
        self.rest = &self.rest[i..];
        value.is_finite().then_some(value)
    }
}

/// Parses `forward <number>, turn <number>` (case-insensitive, any
/// whitespace). The turn is normalized into (-180, 180].
pub fn parse_action_line(text: &str) -> Result<ActionCommand, MalformedAction> {
    let mut s = Scanner { rest: text };
    if !s.keyword("forward") {
        return Err(malformed("expected `forward <meters>, turn <degrees>`"));
    }
    let forward = s.number().ok_or_else(|| malformed("forward distance is not a number"))?;
    if forward < 0.0 {
        return Err(malformed("forward distance must be non-negative"));
    }
    s.ws();
    if !s.keyword(",") {
        return Err(malformed("expected `,` after the forward distance"));
    }
    if !s.keyword("turn") {
        return Err(malformed("expected `turn <degrees>`"));
    }
    let turn = s.number().ok_or_else(|| malformed("turn angle is not a number"))?;
    s.ws();
    if !s.rest.is_empty() {
        return Err(malformed("unexpected text after the action"));
    }
    Ok(ActionCommand {
        forward_m: forward + 0.0,
        turn_deg: normalize_deg(turn) + 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    UnknownFunction,
    ArityMismatch,
    KindMismatch,
    UnstructuredResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub subject: String,
    pub expected: String,
    pub found: String,
    pub location: Pos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<String>,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            ViolationKind::UnknownFunction => {
                write!(f, "line {}: unknown function `{}`", self.location, self.subject)?;
                if let Some(s) = &self.suggestion {
                    write!(f, " (did you mean `{s}`?)")?;
                }
                Ok(())
            }
            ViolationKind::ArityMismatch => write!(
                f,
                "line {}: `{}` expects {} arguments, found {}",
                self.location, self.subject, self.expected, self.found
            ),
            ViolationKind::KindMismatch => write!(
                f,
                "line {}: `{}` expects {}, found {}",
                self.location, self.subject, self.expected, self.found
            ),
            ViolationKind::UnstructuredResponse => {
                write!(f, "reply had no {} block", self.expected)
            }
        }
    }
}

/// Levenshtein distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

pub const SUGGESTION_DISTANCE: usize = 2;

fn suggest(name: &str, registry: &ApiRegistry) -> Option<String> {
    registry
        .names()
        .map(|n| (edit_distance(name, n), n))
        .filter(|(d, _)| *d <= SUGGESTION_DISTANCE)
        .min_by_key(|(d, _)| *d)
        .map(|(_, n)| n.to_string())
}

/// Kind of a literal argument, when that is knowable without running.
fn literal_kind(expr: &Expr) -> Option<&'static str> {
    Some(match &expr.kind {
        ExprKind::Number(_) => "number",
        ExprKind::Unary { operand, .. } if matches!(operand.kind, ExprKind::Number(_)) => "number",
        ExprKind::Str(_) => "string",
        ExprKind::Bool(_) => "boolean",
        ExprKind::List(items) => {
            if items.iter().all(|e| literal_kind(e) == Some("number")) {
                "list-of-number"
            } else {
                "list"
            }
        }
        ExprKind::Record(_) => "record",
        _ => return None,
    })
}

fn literal_accepts(kind: ParamKind, lit: &str) -> bool {
    match kind {
        ParamKind::List => lit == "list" || lit == "list-of-number",
        ParamKind::ListOfNumber => lit == "list-of-number",
        other => other.as_str() == lit,
    }
}

/// Checks every call site: the name must be registered (or a builtin), the
/// argument count must match, and literal arguments must have the declared
/// kind. Returns one violation per failed check, in source order.
pub fn validate_program(program: &Program, registry: &ApiRegistry) -> Vec<Violation> {
    let mut out = Vec::new();
    for call in program.call_sites() {
        if let Some(func) = registry.get(call.name) {
            if func.arity() != call.args.len() {
                out.push(Violation {
                    kind: ViolationKind::ArityMismatch,
                    subject: call.name.to_string(),
                    expected: func.arity().to_string(),
                    found: call.args.len().to_string(),
                    location: call.pos,
                    suggestion: None,
                });
                continue;
            }
            for (param, arg) in func.params.iter().zip(call.args) {
                if let Some(lit) = literal_kind(arg) {
                    if !literal_accepts(param.kind, lit) {
                        out.push(Violation {
                            kind: ViolationKind::KindMismatch,
                            subject: format!("{}.{}", call.name, param.name),
                            expected: param.kind.to_string(),
                            found: lit.to_string(),
                            location: arg.pos,
                            suggestion: None,
                        });
                    }
                }
            }
        } else if let Some(b) = builtins::lookup(call.name) {
            if !b.arity.accepts(call.args.len()) {
                out.push(Violation {
                    kind: ViolationKind::ArityMismatch,
                    subject: call.name.to_string(),
                    expected: b.arity.describe(),
                    found: call.args.len().to_string(),
                    location: call.pos,
                    suggestion: None,
                });
            }
        } else {
            out.push(Violation {
                kind: ViolationKind::UnknownFunction,
                subject: call.name.to_string(),
                expected: "a registered function".to_string(),
                found: call.name.to_string(),
                location: call.pos,
                suggestion: suggest(call.name, registry),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseClass {
    Ok,
    UnstructuredResponse,
}

/// Whether a reply carries the structure the directive asked for.
pub fn classify_response(text: &str, directive: &ResponseDirective) -> ResponseClass {
    let ok = match directive.mode {
        ResponseMode::CodeInTag => {
            let tag = directive.tag_name.as_deref().unwrap_or("code");
            !extract_tagged(text, tag).blocks.is_empty()
        }
        ResponseMode::NumberedList => !extract_numbered_list(text).is_empty(),
        ResponseMode::ConstrainedAction => parse_action_line(text.trim()).is_ok(),
        ResponseMode::FreeText => !text.trim().is_empty(),
    };
    if ok {
        ResponseClass::Ok
    } else {
        ResponseClass::UnstructuredResponse
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;
    use crate::registry::{ApiFunction, ParamSpec};

    fn drone_registry() -> ApiRegistry {
        ApiRegistry::new()
            .register(ApiFunction::primitive(
                "fly_to",
                vec![
                    ParamSpec::number("x", "meters"),
                    ParamSpec::number("y", "meters"),
                    ParamSpec::number("z", "meters"),
                ],
                None,
                "flies to a point",
            ))
            .unwrap()
    }

    #[test]
    fn single_tag() {
        let e = extract_tagged("ok <code>fly_to(1,2,3)</code>", "code");
        assert_eq!(e.contents(), vec!["fly_to(1,2,3)"]);
        assert_eq!(e.blocks[0].span, (3, 29));
        assert!(e.warnings.is_empty());
        assert!(extract_tagged("no tags here", "code").blocks.is_empty());
    }

    #[test]
    fn two_regions_spans() {
        // "a<c>x</c>bb<c>yz</c>": first region 1..9, second 11..20.
        let e = extract_tagged("a<c>x</c>bb<c>yz</c>", "c");
        assert_eq!(e.contents(), vec!["x", "yz"]);
        assert_eq!(e.blocks[0].span, (1, 9));
        assert_eq!(e.blocks[1].span, (11, 20));
    }

    #[test]
    fn spans_count_characters_not_bytes() {
        let e = extract_tagged("é<c>ü</c>", "c");
        assert_eq!(e.blocks[0].span, (1, 9));
        assert_eq!(e.blocks[0].content, "ü");
    }

    #[test]
    fn unmatched_and_nested_tags() {
        let e = extract_tagged("<c>never closed", "c");
        assert!(e.blocks.is_empty());
        assert_eq!(e.warnings.len(), 1);
        let e = extract_tagged("<c>outer <c>inner</c> tail</c>", "c");
        assert_eq!(e.contents(), vec!["inner"]);
        assert_eq!(e.warnings.len(), 2);
    }

    #[test]
    fn fences() {
        let text = "Here you go:\n```robocmd\ntakeoff()\nfly_to(1, 2, 3)\n```\nDone.";
        let e = extract_code_fences(text);
        assert_eq!(e.blocks.len(), 1);
        assert_eq!(e.blocks[0].tag.as_deref(), Some("robocmd"));
        assert_eq!(e.blocks[0].content, "takeoff()\nfly_to(1, 2, 3)");
        let e = extract_code_fences("```\nunterminated");
        assert!(e.blocks.is_empty());
        assert_eq!(e.warnings.len(), 1);
    }

    #[test]
    fn numbered_lists() {
        assert_eq!(extract_numbered_list("1. go\n2. grab"), vec!["go", "grab"]);
        assert!(extract_numbered_list("2. go\n3. grab").is_empty());
        let text = "Plan:\n1. a\n2. b\nSome prose\n1. c\n2. d\n3. e\nmore";
        assert_eq!(extract_numbered_list(text), vec!["c", "d", "e"]);
        assert!(extract_numbered_list("1.5 meters").is_empty());
    }

    #[test]
    fn action_lines() {
        assert_eq!(
            parse_action_line("forward 2.0, turn 30").unwrap(),
            ActionCommand { forward_m: 2.0, turn_deg: 30.0 }
        );
        assert_eq!(
            parse_action_line("Forward 0, turn -190").unwrap(),
            ActionCommand { forward_m: 0.0, turn_deg: 170.0 }
        );
        assert!(parse_action_line("I think we should go forward").is_err());
        assert!(parse_action_line("forward 1, turn 2. Then stop.").is_err());
        assert!(parse_action_line("forward -1, turn 0").is_err());
        assert!(parse_action_line("  FORWARD   1.5 ,TURN  -45  ").is_ok());
    }

    #[test]
    fn validator_cases() {
        let reg = drone_registry();
        let ok = parse_program("fly_to(1, 2, 3)").unwrap();
        assert!(validate_program(&ok, &reg).is_empty());

        let typo = parse_program("flyto(1, 2, 3)").unwrap();
        let v = validate_program(&typo, &reg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::UnknownFunction);
        assert_eq!(v[0].subject, "flyto");
        assert_eq!(v[0].suggestion.as_deref(), Some("fly_to"));

        let short = parse_program("fly_to(1, 2)").unwrap();
        let v = validate_program(&short, &reg);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::ArityMismatch);
        assert_eq!((v[0].expected.as_str(), v[0].found.as_str()), ("3", "2"));

        let kind = parse_program("fly_to(\"up\", 2, 3)").unwrap();
        let v = validate_program(&kind, &reg);
        assert_eq!(v[0].kind, ViolationKind::KindMismatch);
        assert_eq!(v[0].location, Pos::new(1, 8));
    }

    #[test]
    fn distant_names_get_no_suggestion() {
        let reg = drone_registry();
        let p = parse_program("teleport(1, 2, 3)").unwrap();
        assert_eq!(validate_program(&p, &reg)[0].suggestion, None);
    }

    #[test]
    fn classify() {
        let code = ResponseDirective::code_in_tag("code");
        assert_eq!(classify_response("x <code>a()</code>", &code), ResponseClass::Ok);
        assert_eq!(
            classify_response("Sure! I would fly the drone up.", &code),
            ResponseClass::UnstructuredResponse
        );
        let list = ResponseDirective::numbered_list();
        assert_eq!(classify_response("1. a\n2. b", &list), ResponseClass::Ok);
    }
}
