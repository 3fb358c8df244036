//! Append-only engine trace.
//!
//! One line per occurrence: `tick<TAB>agent<TAB>kind<TAB>subject<TAB>detail`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Entered,
    Exited,
    Fired,
    Emitted,
    Perturbed,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Entered => "entered",
            TraceKind::Exited => "exited",
            TraceKind::Fired => "fired",
            TraceKind::Emitted => "emitted",
            TraceKind::Perturbed => "perturbed",
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "entered" => TraceKind::Entered,
            "exited" => TraceKind::Exited,
            "fired" => TraceKind::Fired,
            "emitted" => TraceKind::Emitted,
            "perturbed" => TraceKind::Perturbed,
            other => return Err(format!("unknown trace kind `{other}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    /// Agent id, or `env` for environment occurrences.
    pub agent: String,
    pub kind: TraceKind,
    pub subject: String,
    pub detail: String,
}

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.tick,
            clean(&self.agent),
            self.kind,
            clean(&self.subject),
            clean(&self.detail)
        )
    }
}

impl FromStr for TraceEvent {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut parts = line.splitn(5, '\t');
        let mut next = |name: &str| {
            parts
                .next()
                .ok_or_else(|| format!("trace line is missing the {name} field"))
        };
        let tick = next("tick")?
            .parse()
            .map_err(|e| format!("bad tick: {e}"))?;
        let agent = next("agent")?.to_string();
        let kind = next("kind")?.parse()?;
        let subject = next("subject")?.to_string();
        let detail = next("detail")?.to_string();
        Ok(TraceEvent {
            tick,
            agent,
            kind,
            subject,
            detail,
        })
    }
}

/// Collects trace events stamped with the current tick and agent.
///
/// A disabled tracer records nothing and skips all formatting work.
#[derive(Clone, Debug, Default)]
pub struct Tracer {
    enabled: bool,
    tick: u64,
    agent: String,
    events: Vec<TraceEvent>,
}

impl Tracer {
    pub fn new(agent: impl Into<String>) -> Self {
        Tracer {
            enabled: true,
            tick: 0,
            agent: agent.into(),
            events: Vec::new(),
        }
    }

    pub fn disabled() -> Self {
        Tracer::default()
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn set_agent(&mut self, agent: impl Into<String>) {
        if self.enabled {
            self.agent = agent.into();
        }
    }

    pub fn agent(&self) -> &str {
        &self.agent
    }

    /// Records an event. `detail` is only evaluated when enabled.
    pub fn record<S, D>(&mut self, kind: TraceKind, subject: S, detail: D)
    where
        S: FnOnce() -> String,
        D: FnOnce() -> String,
    {
        if self.enabled {
            self.events.push(TraceEvent {
                tick: self.tick,
                agent: self.agent.clone(),
                kind,
                subject: subject(),
                detail: detail(),
            });
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn take(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn extend(&mut self, events: impl IntoIterator<Item = TraceEvent>) {
        if self.enabled {
            self.events.extend(events);
        }
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

/// Renders a trace as newline-terminated lines.
pub fn render_trace(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&ev.to_string());
        out.push('\n');
    }
    out
}
