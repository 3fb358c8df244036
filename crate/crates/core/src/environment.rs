//! Shared environment: named variables updated synchronously once per tick,
//! a derived context label, per-agent channels and neighbor messaging.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    ActionSet, AgentError, AgentRuntime, AgentSpec, BehaviorPlan, BodyConfig, Direction, Percept,
    COMM_CHANNEL,
};
use crate::statechart::{Condition, TraceKind, Tracer, Vars};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("agent `{agent}` addresses unknown channel `{channel}`")]
    UnknownChannel { agent: String, channel: String },
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("variable `{name}` became {value} at tick {tick}")]
    NonFiniteVariable { name: String, tick: u64, value: f64 },
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("the last context rule must always match")]
    NoCatchAllContext,
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Read-only view handed to variable update rules.
pub struct UpdateInput<'a> {
    /// Tick being completed.
    pub tick: u64,
    pub vars: &'a Vars,
    /// Summed effects of the tick, keyed by resolved channel.
    pub effects: &'a BTreeMap<String, f64>,
}

impl UpdateInput<'_> {
    pub fn var(&self, name: &str) -> f64 {
        self.vars.get(name).copied().unwrap_or(0.0)
    }

    pub fn effect(&self, channel: &str) -> f64 {
        self.effects.get(channel).copied().unwrap_or(0.0)
    }
}

pub type UpdateRule = Arc<dyn Fn(&UpdateInput<'_>) -> f64 + Send + Sync>;

#[derive(Clone)]
struct Variable {
    name: String,
    initial: f64,
    rule: UpdateRule,
}

/// Static description of an environment.
#[derive(Clone)]
pub struct EnvironmentDef {
    variables: Vec<Variable>,
    contexts: Vec<(String, Condition)>,
    agents: Vec<String>,
    neighbors: BTreeMap<String, Vec<String>>,
}

impl fmt::Debug for EnvironmentDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvironmentDef")
            .field(
                "variables",
                &self.variables.iter().map(|v| &v.name).collect::<Vec<_>>(),
            )
            .field("contexts", &self.contexts)
            .field("agents", &self.agents)
            .field("neighbors", &self.neighbors)
            .finish()
    }
}

impl EnvironmentDef {
    /// `contexts` are tried in order; the last rule must be
    /// [`Condition::Always`].
    pub fn new(agents: Vec<String>, contexts: Vec<(String, Condition)>) -> Result<Self, EnvError> {
        if !matches!(contexts.last(), Some((_, Condition::Always))) {
            return Err(EnvError::NoCatchAllContext);
        }
        Ok(EnvironmentDef {
            variables: Vec::new(),
            contexts,
            neighbors: agents.iter().map(|a| (a.clone(), Vec::new())).collect(),
            agents,
        })
    }

    pub fn variable<F>(
        mut self,
        name: impl Into<String>,
        initial: f64,
        rule: F,
    ) -> Result<Self, EnvError>
    where
        F: Fn(&UpdateInput<'_>) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        if self.variables.iter().any(|v| v.name == name) {
            return Err(EnvError::DuplicateVariable(name));
        }
        self.variables.push(Variable {
            name,
            initial,
            rule: Arc::new(rule),
        });
        Ok(self)
    }

    /// Declares that `agent` receives messages sent by `from`.
    pub fn neighbors_of(mut self, agent: &str, from: Vec<String>) -> Result<Self, EnvError> {
        for a in from.iter().chain(std::iter::once(&agent.to_string())) {
            if !self.agents.contains(a) {
                return Err(EnvError::UnknownAgent(a.clone()));
            }
        }
        self.neighbors.insert(agent.to_string(), from);
        Ok(self)
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn neighbors(&self, agent: &str) -> &[String] {
        self.neighbors.get(agent).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn variable_names(&self) -> impl Iterator<Item = &str> {
        self.variables.iter().map(|v| v.name.as_str())
    }

    pub fn has_variable(&self, name: &str) -> bool {
        self.variables.iter().any(|v| v.name == name)
    }

    /// `channel@agent` when such a variable exists, else `channel`.
    pub fn resolve_channel(&self, agent: &str, channel: &str) -> String {
        let own = format!("{channel}@{agent}");
        if self.has_variable(&own) {
            own
        } else {
            channel.to_string()
        }
    }

    fn select_context(&self, vars: &Vars) -> String {
        self.contexts
            .iter()
            .find(|(_, c)| c.eval_vars(vars))
            .map(|(name, _)| name.clone())
            .expect("last context rule always matches")
    }

    pub fn initial_state(&self) -> EnvironmentState {
        let variables: Vars = self
            .variables
            .iter()
            .map(|v| (v.name.clone(), v.initial))
            .collect();
        EnvironmentState {
            tick: 0,
            context: self.select_context(&variables),
            variables,
            pending_effects: Vec::new(),
            comm_mailbox: self
                .agents
                .iter()
                .map(|a| (a.clone(), Vec::new()))
                .collect(),
            comm_outbox: self
                .agents
                .iter()
                .map(|a| (a.clone(), Vec::new()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub agent: String,
    /// Resolved channel (variable name).
    pub channel: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentState {
    pub tick: u64,
    pub variables: Vars,
    pub context: String,
    pub pending_effects: Vec<Effect>,
    /// Messages readable this tick, per receiving agent.
    pub comm_mailbox: BTreeMap<String, Vec<f64>>,
    /// Messages sent this tick, delivered on the next one.
    pub comm_outbox: BTreeMap<String, Vec<f64>>,
}

impl EnvironmentState {
    pub fn var(&self, name: &str) -> Option<f64> {
        self.variables.get(name).copied()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            tick: self.tick,
            variables: self.variables.clone(),
            context: self.context.clone(),
        }
    }
}

/// Reads one value per enabled input device of `body`. A `comm` input reads
/// the mean of this tick's messages, or 0 without messages.
pub fn perceive(
    def: &EnvironmentDef,
    state: &EnvironmentState,
    agent: &str,
    body: &BodyConfig,
) -> Result<Percept, EnvError> {
    let mut out = Percept::default();
    for d in body.enabled_inputs() {
        let v = if d.is_comm() {
            let inbox = state
                .comm_mailbox
                .get(agent)
                .ok_or_else(|| EnvError::UnknownAgent(agent.to_string()))?;
            if inbox.is_empty() {
                0.0
            } else {
                inbox.iter().sum::<f64>() / inbox.len() as f64
            }
        } else {
            let ch = def.resolve_channel(agent, &d.channel);
            state.var(&ch).ok_or_else(|| EnvError::UnknownChannel {
                agent: agent.to_string(),
                channel: ch,
            })?
        };
        out.0.insert(d.id.clone(), v);
    }
    Ok(out)
}

/// Queues the effects of `actions`. Messages on the `comm` channel go to the
/// outboxes of every agent that lists `agent` as a neighbor.
pub fn apply_effects(
    def: &EnvironmentDef,
    state: &mut EnvironmentState,
    agent: &str,
    body: &BodyConfig,
    actions: &ActionSet,
    tracer: &mut Tracer,
) -> Result<(), EnvError> {
    if !def.agents.iter().any(|a| a == agent) {
        return Err(EnvError::UnknownAgent(agent.to_string()));
    }
    for (device, act) in &actions.0 {
        let unknown = || EnvError::UnknownChannel {
            agent: agent.to_string(),
            channel: device.clone(),
        };
        let d = body.device(device).ok_or_else(unknown)?;
        if d.direction != Direction::Output {
            return Err(unknown());
        }
        let value = act.value();
        if d.is_comm() {
            for (receiver, senders) in &def.neighbors {
                if senders.iter().any(|s| s == agent) {
                    state
                        .comm_outbox
                        .get_mut(receiver)
                        .expect("declared agent")
                        .push(value);
                }
            }
            tracer.record(
                TraceKind::Perturbed,
                || COMM_CHANNEL.to_string(),
                || format!("{value}"),
            );
            continue;
        }
        let channel = def.resolve_channel(agent, &d.channel);
        if !def.has_variable(&channel) {
            return Err(EnvError::UnknownChannel {
                agent: agent.to_string(),
                channel,
            });
        }
        tracer.record(
            TraceKind::Perturbed,
            || channel.clone(),
            || format!("{value}"),
        );
        state.pending_effects.push(Effect {
            agent: agent.to_string(),
            channel,
            value,
        });
    }
    Ok(())
}

/// Advances one tick. Every variable is recomputed from the same snapshot
/// and the summed pending effects, then the context is re-selected and the
/// outboxes become next tick's mailboxes.
pub fn step_env(
    def: &EnvironmentDef,
    state: &mut EnvironmentState,
    tracer: &mut Tracer,
) -> Result<(), EnvError> {
    let mut effects: BTreeMap<String, f64> = BTreeMap::new();
    for e in state.pending_effects.drain(..) {
        *effects.entry(e.channel).or_insert(0.0) += e.value;
    }
    let input = UpdateInput {
        tick: state.tick,
        vars: &state.variables,
        effects: &effects,
    };
    let mut next = Vars::new();
    for v in &def.variables {
        let value = (v.rule)(&input);
        if !value.is_finite() {
            return Err(EnvError::NonFiniteVariable {
                name: v.name.clone(),
                tick: state.tick,
                value,
            });
        }
        next.insert(v.name.clone(), value);
    }
    state.tick += 1;
    tracer.set_agent("env");
    if tracer.is_enabled() {
        for (name, value) in &next {
            if state.variables.get(name) != Some(value) {
                tracer.record(TraceKind::Perturbed, || name.clone(), || format!("{value}"));
            }
        }
    }
    state.variables = next;
    let context = def.select_context(&state.variables);
    if context != state.context {
        tracer.record(
            TraceKind::Perturbed,
            || "context".into(),
            || context.clone(),
        );
    }
    state.context = context;
    for (agent, outbox) in state.comm_outbox.iter_mut() {
        *state.comm_mailbox.get_mut(agent).expect("declared agent") = std::mem::take(outbox);
    }
    Ok(())
}

/// Environment values after one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub variables: Vars,
    pub context: String,
}

/// Per-tick snapshots of one episode, ticks 1..=T.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub snapshots: Vec<Snapshot>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// CSV with a `tick,<variables...>,context` header.
    pub fn to_csv(&self) -> String {
        let Some(first) = self.snapshots.first() else {
            return String::new();
        };
        let names: Vec<&String> = first.variables.keys().collect();
        let mut out = String::from("tick");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push_str(",context\n");
        for s in &self.snapshots {
            out.push_str(&s.tick.to_string());
            for n in &names {
                out.push(',');
                out.push_str(&s.variables[*n].to_string());
            }
            out.push(',');
            out.push_str(&s.context);
            out.push('\n');
        }
        out
    }
}

/// Runs a homogeneous population for `ticks` ticks. Each tick every agent
/// (in declaration order) perceives the current state and queues effects,
/// then the environment advances.
pub fn simulate(
    def: &EnvironmentDef,
    spec: &AgentSpec,
    ticks: u64,
    tracer: &mut Tracer,
) -> Result<EpisodeTrace, EnvError> {
    let plan = BehaviorPlan::new(spec)?;
    let mut state = def.initial_state();
    tracer.set_tick(0);
    let mut agents = def
        .agents
        .iter()
        .map(|a| AgentRuntime::new(Arc::clone(&plan), a.clone(), tracer))
        .collect::<Result<Vec<_>, _>>()?;
    let mut trace = EpisodeTrace {
        snapshots: Vec::with_capacity(ticks as usize),
    };
    for _ in 0..ticks {
        tracer.set_tick(state.tick);
        for rt in &mut agents {
            let percept = perceive(def, &state, rt.agent_id(), &spec.body)?;
            let actions = rt.step(&percept, tracer)?;
            apply_effects(def, &mut state, rt.agent_id(), &spec.body, &actions, tracer)?;
        }
        step_env(def, &mut state, tracer)?;
        trace.snapshots.push(state.snapshot());
    }
    Ok(trace)
}
