//! Guard predicates and transition actions.
//!
//! Guards are side-effect free. They see a read-only variable store and the
//! payload of the event being processed. Actions may write variables or
//! generate events.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::Event;

/// Variable store shared by guards and actions.
pub type Vars = BTreeMap<String, f64>;

/// Comparison operator used by [`Condition`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl Cmp {
    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Lt => lhs < rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Eq => lhs == rhs,
            Cmp::Ne => lhs != rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
            Cmp::Eq => "==",
            Cmp::Ne => "!=",
        }
    }
}

/// User-supplied guard predicate.
pub type CustomGuard = Arc<dyn Fn(&Vars, &Event) -> bool + Send + Sync>;

/// A boolean predicate over a variable store and an event payload.
///
/// Comparisons against a missing variable or payload key are false.
#[derive(Clone, Default)]
pub enum Condition {
    #[default]
    Always,
    Never,
    Var {
        name: String,
        cmp: Cmp,
        value: f64,
    },
    Payload {
        key: String,
        cmp: Cmp,
        value: f64,
    },
    HasPayload(String),
    Not(Box<Condition>),
    All(Vec<Condition>),
    Any(Vec<Condition>),
    Custom(CustomGuard),
}

impl Condition {
    pub fn var(name: impl Into<String>, cmp: Cmp, value: f64) -> Self {
        Condition::Var {
            name: name.into(),
            cmp,
            value,
        }
    }

    pub fn payload(key: impl Into<String>, cmp: Cmp, value: f64) -> Self {
        Condition::Payload {
            key: key.into(),
            cmp,
            value,
        }
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&Vars, &Event) -> bool + Send + Sync + 'static,
    {
        Condition::Custom(Arc::new(f))
    }

    pub fn eval(&self, vars: &Vars, event: &Event) -> bool {
        match self {
            Condition::Always => true,
            Condition::Never => false,
            Condition::Var { name, cmp, value } => {
                vars.get(name).is_some_and(|v| cmp.apply(*v, *value))
            }
            Condition::Payload { key, cmp, value } => event
                .payload
                .get(key)
                .is_some_and(|v| cmp.apply(*v, *value)),
            Condition::HasPayload(key) => event.payload.contains_key(key),
            Condition::Not(inner) => !inner.eval(vars, event),
            Condition::All(all) => all.iter().all(|c| c.eval(vars, event)),
            Condition::Any(any) => any.iter().any(|c| c.eval(vars, event)),
            Condition::Custom(f) => f(vars, event),
        }
    }

    /// Evaluates against a variable store only, with an empty event.
    pub fn eval_vars(&self, vars: &Vars) -> bool {
        self.eval(vars, &Event::empty())
    }
}

impl fmt::Debug for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Always => write!(f, "true"),
            Condition::Never => write!(f, "false"),
            Condition::Var { name, cmp, value } => write!(f, "{name} {} {value}", cmp.symbol()),
            Condition::Payload { key, cmp, value } => {
                write!(f, "_event.{key} {} {value}", cmp.symbol())
            }
            Condition::HasPayload(key) => write!(f, "has(_event.{key})"),
            Condition::Not(inner) => write!(f, "!({inner:?})"),
            Condition::All(all) => f.debug_tuple("all").field(all).finish(),
            Condition::Any(any) => f.debug_tuple("any").field(any).finish(),
            Condition::Custom(_) => write!(f, "<custom>"),
        }
    }
}

/// Operand of an action: a constant, a payload entry of the triggering
/// event, or a variable. Missing entries read as 0.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Const(f64),
    Payload(String),
    Var(String),
}

impl Value {
    pub(crate) fn resolve(&self, vars: &Vars, event: &Event) -> f64 {
        match self {
            Value::Const(v) => *v,
            Value::Payload(key) => event.payload.get(key).copied().unwrap_or(0.0),
            Value::Var(name) => vars.get(name).copied().unwrap_or(0.0),
        }
    }
}

/// Executable content attached to state entry/exit and to transitions.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    /// Queue an internal event, processed before the macrostep returns.
    Raise {
        event: String,
        payload: Vec<(String, Value)>,
    },
    /// Emit an event to the outside world (returned from `dispatch`).
    Emit {
        event: String,
        payload: Vec<(String, Value)>,
    },
    Set {
        var: String,
        value: Value,
    },
    Add {
        var: String,
        value: Value,
    },
}

impl Action {
    pub fn raise(event: impl Into<String>) -> Self {
        Action::Raise {
            event: event.into(),
            payload: Vec::new(),
        }
    }

    pub fn emit(event: impl Into<String>) -> Self {
        Action::Emit {
            event: event.into(),
            payload: Vec::new(),
        }
    }

    /// Emits `event` carrying one entry copied from the triggering event.
    pub fn emit_payload(event: impl Into<String>, key: impl Into<String>) -> Self {
        let key = key.into();
        Action::Emit {
            event: event.into(),
            payload: vec![(key.clone(), Value::Payload(key))],
        }
    }

    pub fn set(var: impl Into<String>, value: f64) -> Self {
        Action::Set {
            var: var.into(),
            value: Value::Const(value),
        }
    }

    pub fn add(var: impl Into<String>, delta: f64) -> Self {
        Action::Add {
            var: var.into(),
            value: Value::Const(delta),
        }
    }
}
