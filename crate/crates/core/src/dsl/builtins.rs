//! Pure helper functions available in every world.

use super::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }

    pub fn describe(self) -> String {
        match self {
            Arity::Exact(k) => k.to_string(),
            Arity::AtLeast(k) => format!("at least {k}"),
        }
    }
}

pub type BuiltinFn = fn(&[Value]) -> Result<Value, String>;

#[derive(Clone, Copy)]
pub struct Builtin {
    pub name: &'static str,
    pub arity: Arity,
    pub func: BuiltinFn,
}

impl std::fmt::Debug for Builtin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Builtin")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .finish()
    }
}

const TABLE: &[Builtin] = &[
    Builtin { name: "abs", arity: Arity::Exact(1), func: abs },
    Builtin { name: "min", arity: Arity::AtLeast(1), func: min },
    Builtin { name: "max", arity: Arity::AtLeast(1), func: max },
    Builtin { name: "len", arity: Arity::Exact(1), func: len },
    Builtin { name: "sqrt", arity: Arity::Exact(1), func: sqrt },
    Builtin { name: "sin", arity: Arity::Exact(1), func: sin },
    Builtin { name: "cos", arity: Arity::Exact(1), func: cos },
    Builtin { name: "atan2", arity: Arity::Exact(2), func: atan2 },
    Builtin { name: "pi", arity: Arity::Exact(0), func: pi },
    Builtin { name: "clamp", arity: Arity::Exact(3), func: clamp },
    Builtin { name: "floor", arity: Arity::Exact(1), func: floor },
    Builtin { name: "is_none", arity: Arity::Exact(1), func: is_none },
];

/// The builtin table, identical for every world.
pub fn builtins() -> &'static [Builtin] {
    TABLE
}

pub fn lookup(name: &str) -> Option<&'static Builtin> {
    TABLE.iter().find(|b| b.name == name)
}

fn num(args: &[Value], i: usize, fname: &str) -> Result<f64, String> {
    args[i].as_number().ok_or_else(|| {
        format!(
            "{fname}: argument {} must be a number, got {}",
            i + 1,
            args[i].kind_name()
        )
    })
}

fn abs(a: &[Value]) -> Result<Value, String> {
    Ok(num(a, 0, "abs")?.abs().into())
}

fn sqrt(a: &[Value]) -> Result<Value, String> {
    let x = num(a, 0, "sqrt")?;
    if x < 0.0 {
        return Err(format!("sqrt of negative number {x}"));
    }
    Ok(x.sqrt().into())
}

fn sin(a: &[Value]) -> Result<Value, String> {
    Ok(num(a, 0, "sin")?.sin().into())
}

fn cos(a: &[Value]) -> Result<Value, String> {
    Ok(num(a, 0, "cos")?.cos().into())
}

fn atan2(a: &[Value]) -> Result<Value, String> {
    Ok(num(a, 0, "atan2")?.atan2(num(a, 1, "atan2")?).into())
}

fn pi(_: &[Value]) -> Result<Value, String> {
    Ok(std::f64::consts::PI.into())
}

fn floor(a: &[Value]) -> Result<Value, String> {
    Ok(num(a, 0, "floor")?.floor().into())
}

fn is_none(a: &[Value]) -> Result<Value, String> {
    Ok(Value::Bool(matches!(a[0], Value::None)))
}

fn clamp(a: &[Value]) -> Result<Value, String> {
    let (x, lo, hi) = (num(a, 0, "clamp")?, num(a, 1, "clamp")?, num(a, 2, "clamp")?);
    if lo > hi {
        return Err(format!("clamp: lower bound {lo} exceeds upper bound {hi}"));
    }
    Ok(x.clamp(lo, hi).into())
}

fn len(a: &[Value]) -> Result<Value, String> {
    match &a[0] {
        Value::List(items) => Ok((items.len() as f64).into()),
        Value::Str(s) => Ok((s.chars().count() as f64).into()),
        other => Err(format!("len: expected list or string, got {}", other.kind_name())),
    }
}

/// min/max accept either several numbers or one list of numbers.
fn fold_numbers(a: &[Value], fname: &str, pick: fn(f64, f64) -> f64) -> Result<Value, String> {
    let items: &[Value] = match a {
        [Value::List(items)] => items,
        _ => a,
    };
    let mut acc: Option<f64> = None;
    for (i, item) in items.iter().enumerate() {
        let x = item
            .as_number()
            .ok_or_else(|| format!("{fname}: element {} is not a number", i + 1))?;
        acc = Some(acc.map_or(x, |m| pick(m, x)));
    }
    acc.map(Value::Number)
        .ok_or_else(|| format!("{fname}: empty list"))
}

fn min(a: &[Value]) -> Result<Value, String> {
    fold_numbers(a, "min", f64::min)
}

fn max(a: &[Value]) -> Result<Value, String> {
    fold_numbers(a, "max", f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(name: &str, args: &[Value]) -> Value {
        (lookup(name).unwrap().func)(args).unwrap()
    }

    #[test]
    fn analytic_values() {
        assert_eq!(call("atan2", &[1.0.into(), 1.0.into()]), Value::Number(std::f64::consts::FRAC_PI_4));
        assert_eq!(call("clamp", &[7.0.into(), 0.0.into(), 5.0.into()]), Value::Number(5.0));
        assert_eq!(call("len", &[Value::numbers(&[1.0, 2.0, 3.0])]), Value::Number(3.0));
        assert_eq!(call("floor", &[(-1.5).into()]), Value::Number(-2.0));
        assert_eq!(call("min", &[Value::numbers(&[4.0, -2.0, 9.0])]), Value::Number(-2.0));
        assert_eq!(call("max", &[3.0.into(), 8.0.into()]), Value::Number(8.0));
        assert_eq!(call("is_none", &[Value::None]), Value::Bool(true));
        assert_eq!(call("is_none", &[0.0.into()]), Value::Bool(false));
    }

    #[test]
    fn table_is_complete() {
        let names: Vec<_> = builtins().iter().map(|b| b.name).collect();
        for expected in ["abs", "min", "max", "len", "sqrt", "sin", "cos", "atan2", "pi", "clamp", "floor", "is_none"] {
            assert!(names.contains(&expected), "{expected}");
        }
    }

    #[test]
    fn errors_are_reported() {
        assert!((lookup("sqrt").unwrap().func)(&[(-1.0).into()]).is_err());
        assert!((lookup("abs").unwrap().func)(&["x".into()]).is_err());
        assert!((lookup("min").unwrap().func)(&[Value::List(vec![])]).is_err());
    }
}
