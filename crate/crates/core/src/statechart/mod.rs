//! Hierarchical statechart engine.
//!
//! Charts are trees of basic, XOR-composite and AND-composite states with
//! `event [guard] / actions` transitions, shallow history and join
//! transitions (several sources in orthogonal regions). A chart is validated
//! once by [`Statechart::build`] and is immutable afterwards; all runtime
//! state lives in a [`Configuration`].
//!
//! Step semantics are run-to-completion: an external event is processed
//! together with every internal event it causes before `dispatch` returns.
//! Within one microstep a maximal conflict-free set of enabled transitions
//! fires, chosen by priority (deeper source first, then declaration order).

mod engine;
mod guard;
mod trace;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

pub use engine::Macrostep;
pub use guard::{Action, Cmp, Condition, Value, Vars};
pub use trace::{render_trace, TraceEvent, TraceKind, Tracer};

/// Default bound on internal events plus completion microsteps per macrostep.
pub const DEFAULT_INTERNAL_STEP_BOUND: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StateKind {
    Basic,
    Xor,
    And,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum HistoryKind {
    #[default]
    None,
    Shallow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateNode {
    pub id: String,
    pub kind: StateKind,
    pub children: Vec<String>,
    pub initial: Option<String>,
    pub history: HistoryKind,
    /// The default entry of this composite goes through its history
    /// pseudo-state: resume the remembered child, or `initial` on first entry.
    pub default_to_history: bool,
    pub entry_actions: Vec<Action>,
    pub exit_actions: Vec<Action>,
}

impl StateNode {
    pub fn basic(id: impl Into<String>) -> Self {
        StateNode {
            id: id.into(),
            kind: StateKind::Basic,
            children: Vec::new(),
            initial: None,
            history: HistoryKind::None,
            default_to_history: false,
            entry_actions: Vec::new(),
            exit_actions: Vec::new(),
        }
    }

    pub fn xor<I, S>(id: impl Into<String>, children: I, initial: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        StateNode {
            kind: StateKind::Xor,
            children: children.into_iter().map(Into::into).collect(),
            initial: Some(initial.into()),
            ..StateNode::basic(id)
        }
    }

    pub fn and<I, S>(id: impl Into<String>, regions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        StateNode {
            kind: StateKind::And,
            children: regions.into_iter().map(Into::into).collect(),
            ..StateNode::basic(id)
        }
    }

    pub fn with_history(mut self) -> Self {
        self.history = HistoryKind::Shallow;
        self
    }

    /// Shallow history that is also the default entry (the "H" default).
    pub fn with_default_history(mut self) -> Self {
        self.history = HistoryKind::Shallow;
        self.default_to_history = true;
        self
    }

    pub fn on_entry(mut self, action: Action) -> Self {
        self.entry_actions.push(action);
        self
    }

    pub fn on_exit(mut self, action: Action) -> Self {
        self.exit_actions.push(action);
        self
    }
}

/// Where a transition leads.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Target {
    State(String),
    /// The shallow-history pseudo-state of an XOR composite.
    History(String),
}

impl Target {
    pub fn state(id: impl Into<String>) -> Self {
        Target::State(id.into())
    }

    pub fn history(id: impl Into<String>) -> Self {
        Target::History(id.into())
    }

    fn state_id(&self) -> &str {
        match self {
            Target::State(s) | Target::History(s) => s,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::State(s) => f.write_str(s),
            Target::History(s) => write!(f, "H({s})"),
        }
    }
}

impl From<&str> for Target {
    fn from(s: &str) -> Self {
        Target::State(s.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub name: Option<String>,
    /// More than one source encodes a join.
    pub sources: Vec<String>,
    pub target: Target,
    /// `None` is a completion transition.
    pub event: Option<String>,
    pub guard: Condition,
    pub actions: Vec<Action>,
}

impl Transition {
    pub fn new(source: impl Into<String>, target: impl Into<Target>) -> Self {
        Transition {
            name: None,
            sources: vec![source.into()],
            target: target.into(),
            event: None,
            guard: Condition::Always,
            actions: Vec::new(),
        }
    }

    pub fn join<I, S>(sources: I, target: impl Into<Target>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Transition {
            sources: sources.into_iter().map(Into::into).collect(),
            ..Transition::new(String::new(), target)
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn on(mut self, event: impl Into<String>) -> Self {
        self.event = Some(event.into());
        self
    }

    pub fn when(mut self, guard: Condition) -> Self {
        self.guard = guard;
        self
    }

    pub fn then(mut self, action: Action) -> Self {
        self.actions.push(action);
        self
    }
}

/// An event with a scalar payload. Keys are unique by construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Event {
    pub id: String,
    pub payload: BTreeMap<String, f64>,
}

impl Event {
    pub fn new(id: impl Into<String>) -> Self {
        Event {
            id: id.into(),
            payload: BTreeMap::new(),
        }
    }

    pub(crate) fn empty() -> Self {
        Event::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: f64) -> Self {
        self.payload.insert(key.into(), value);
        self
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)?;
        if !self.payload.is_empty() {
            f.write_str("{")?;
            for (i, (k, v)) in self.payload.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{k}={v}")?;
            }
            f.write_str("}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChartError {
    #[error("duplicate state id `{0}`")]
    DuplicateId(String),
    #[error("`{from}` references unknown state `{missing}`")]
    DanglingReference { from: String, missing: String },
    #[error("malformed state `{id}`: {reason}")]
    MalformedComposite { id: String, reason: String },
    #[error("illegal join `{transition}`: {reason}")]
    IllegalJoin { transition: String, reason: String },
    #[error("invalid history target in `{transition}`: `{state}` has no shallow history")]
    InvalidHistoryTarget { transition: String, state: String },
    #[error("expected exactly one root state, found {0}")]
    RootCount(usize),
    #[error("livelock: more than {bound} internal steps in one macrostep")]
    LivelockDetected { bound: usize },
    #[error("unknown state `{0}`")]
    UnknownState(String),
}

#[derive(Clone, Copy, Debug)]
enum ResolvedTarget {
    State(usize),
    History(usize),
}

#[derive(Clone, Debug)]
struct CompiledTransition {
    label: String,
    sources: Vec<usize>,
    target: ResolvedTarget,
    /// Least common XOR ancestor strictly containing sources and target;
    /// `None` means the whole chart is exited and re-entered.
    domain: Option<usize>,
    depth: usize,
}

/// Active states plus shallow-history memory and the variable store.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    active: Vec<bool>,
    history: Vec<Option<usize>>,
    pub vars: Vars,
}

/// A validated, immutable statechart.
#[derive(Clone, Debug)]
pub struct Statechart {
    nodes: Vec<StateNode>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    initial: Vec<Option<usize>>,
    depth: Vec<usize>,
    /// Nodes in document (pre-)order.
    order: Vec<usize>,
    pos: Vec<usize>,
    /// Exclusive end of each node's subtree in `order`.
    end: Vec<usize>,
    root: usize,
    transitions: Vec<Transition>,
    compiled: Vec<CompiledTransition>,
    by_event: HashMap<String, Vec<usize>>,
    completion: Vec<usize>,
    step_bound: usize,
}

impl Statechart {
    pub fn build(nodes: Vec<StateNode>, transitions: Vec<Transition>) -> Result<Self, ChartError> {
        let n = nodes.len();
        let mut index = HashMap::with_capacity(n);
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.id.clone(), i).is_some() {
                return Err(ChartError::DuplicateId(node.id.clone()));
            }
        }
        let lookup = |from: &str, id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| ChartError::DanglingReference {
                    from: from.to_string(),
                    missing: id.to_string(),
                })
        };

        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut initial = vec![None; n];
        for (i, node) in nodes.iter().enumerate() {
            let malformed = |reason: &str| ChartError::MalformedComposite {
                id: node.id.clone(),
                reason: reason.to_string(),
            };
            for child in &node.children {
                let c = lookup(&node.id, child)?;
                if parent[c].is_some() || c == i {
                    return Err(ChartError::MalformedComposite {
                        id: child.clone(),
                        reason: "state has more than one parent".into(),
                    });
                }
                parent[c] = Some(i);
                children[i].push(c);
            }
            match node.kind {
                StateKind::Basic => {
                    if !node.children.is_empty() || node.initial.is_some() {
                        return Err(malformed("basic state with children or initial"));
                    }
                }
                StateKind::Xor => {
                    let init = node
                        .initial
                        .as_deref()
                        .ok_or_else(|| malformed("xor composite without initial"))?;
                    if node.children.is_empty() {
                        return Err(malformed("xor composite without children"));
                    }
                    let c = lookup(&node.id, init)?;
                    if !node.children.iter().any(|ch| ch == init) {
                        return Err(malformed("initial is not a child"));
                    }
                    initial[i] = Some(c);
                }
                StateKind::And => {
                    if node.children.len() < 2 {
                        return Err(malformed("and composite needs at least two regions"));
                    }
                    if node.initial.is_some() {
                        return Err(malformed("and composite cannot have an initial"));
                    }
                }
            }
            if node.history == HistoryKind::Shallow && node.kind != StateKind::Xor {
                return Err(malformed("history is only permitted on xor composites"));
            }
            if node.default_to_history && node.history != HistoryKind::Shallow {
                return Err(malformed("default history entry without shallow history"));
            }
        }
        // Regions of an AND state must themselves be composites.
        for (i, node) in nodes.iter().enumerate() {
            if node.kind == StateKind::And {
                if let Some(&c) = children[i]
                    .iter()
                    .find(|&&c| nodes[c].kind == StateKind::Basic)
                {
                    return Err(ChartError::MalformedComposite {
                        id: node.id.clone(),
                        reason: format!("region `{}` is not a composite", nodes[c].id),
                    });
                }
            }
        }

        let roots: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(ChartError::RootCount(roots.len()));
        }
        let root = roots[0];

        let mut order = Vec::with_capacity(n);
        let mut depth = vec![0; n];
        let mut pos = vec![usize::MAX; n];
        let mut end = vec![0; n];
        fn walk(
            node: usize,
            d: usize,
            children: &[Vec<usize>],
            order: &mut Vec<usize>,
            depth: &mut [usize],
            pos: &mut [usize],
            end: &mut [usize],
        ) {
            pos[node] = order.len();
            depth[node] = d;
            order.push(node);
            for &c in &children[node] {
                walk(c, d + 1, children, order, depth, pos, end);
            }
            end[node] = order.len();
        }
        walk(
            root, 0, &children, &mut order, &mut depth, &mut pos, &mut end,
        );
        if order.len() != n {
            let stray = (0..n).find(|&i| pos[i] == usize::MAX).unwrap_or(0);
            return Err(ChartError::MalformedComposite {
                id: nodes[stray].id.clone(),
                reason: "state is not reachable from the root".into(),
            });
        }

        let mut chart = Statechart {
            nodes,
            index,
            parent,
            children,
            initial,
            depth,
            order,
            pos,
            end,
            root,
            transitions: Vec::new(),
            compiled: Vec::with_capacity(transitions.len()),
            by_event: HashMap::new(),
            completion: Vec::new(),
            step_bound: DEFAULT_INTERNAL_STEP_BOUND,
        };
        for (i, t) in transitions.iter().enumerate() {
            let compiled = chart.compile(i, t)?;
            chart.compiled.push(compiled);
        }
        chart.transitions = transitions;

        let mut ranked: Vec<usize> = (0..chart.compiled.len()).collect();
        ranked.sort_by_key(|&i| (std::cmp::Reverse(chart.compiled[i].depth), i));
        for i in ranked {
            match &chart.transitions[i].event {
                Some(e) => chart.by_event.entry(e.clone()).or_default().push(i),
                None => chart.completion.push(i),
            }
        }
        Ok(chart)
    }

    fn compile(&self, i: usize, t: &Transition) -> Result<CompiledTransition, ChartError> {
        let label = t.name.clone().unwrap_or_else(|| format!("t{i}"));
        if t.sources.is_empty() {
            return Err(ChartError::IllegalJoin {
                transition: label,
                reason: "transition has no source".into(),
            });
        }
        let mut sources = Vec::with_capacity(t.sources.len());
        for s in &t.sources {
            let idx = self
                .index
                .get(s)
                .copied()
                .ok_or_else(|| ChartError::DanglingReference {
                    from: label.clone(),
                    missing: s.clone(),
                })?;
            if sources.contains(&idx) {
                return Err(ChartError::IllegalJoin {
                    transition: label,
                    reason: format!("source `{s}` listed twice"),
                });
            }
            sources.push(idx);
        }
        let target_idx = self
            .index
            .get(t.target.state_id())
            .copied()
            .ok_or_else(|| ChartError::DanglingReference {
                from: label.clone(),
                missing: t.target.state_id().to_string(),
            })?;
        let target = match t.target {
            Target::State(_) => ResolvedTarget::State(target_idx),
            Target::History(_) => {
                if self.nodes[target_idx].history != HistoryKind::Shallow {
                    return Err(ChartError::InvalidHistoryTarget {
                        transition: label,
                        state: t.target.state_id().to_string(),
                    });
                }
                ResolvedTarget::History(target_idx)
            }
        };

        for (a_i, &a) in sources.iter().enumerate() {
            for &b in &sources[a_i + 1..] {
                if let Err(reason) = self.orthogonal(a, b) {
                    return Err(ChartError::IllegalJoin {
                        transition: label,
                        reason,
                    });
                }
            }
        }

        let domain = self.lcca(&sources, target_idx);
        let depth = sources.iter().map(|&s| self.depth[s]).max().unwrap_or(0);
        Ok(CompiledTransition {
            label,
            sources,
            target,
            domain,
            depth,
        })
    }

    /// Two states are orthogonal when their least common ancestor is an AND
    /// state and they sit in different regions of it.
    fn orthogonal(&self, a: usize, b: usize) -> Result<(), String> {
        if self.is_descendant_or_self(a, b) || self.is_descendant_or_self(b, a) {
            return Err(format!(
                "`{}` and `{}` are nested",
                self.nodes[a].id, self.nodes[b].id
            ));
        }
        let mut lca = self.parent[a];
        while let Some(l) = lca {
            if self.is_descendant_or_self(b, l) {
                break;
            }
            lca = self.parent[l];
        }
        match lca {
            Some(l) if self.nodes[l].kind == StateKind::And => Ok(()),
            _ => Err(format!(
                "`{}` and `{}` are not in orthogonal regions",
                self.nodes[a].id, self.nodes[b].id
            )),
        }
    }

    fn lcca(&self, sources: &[usize], target: usize) -> Option<usize> {
        let mut anc = self.parent[sources[0]];
        while let Some(a) = anc {
            if self.nodes[a].kind == StateKind::Xor
                && sources.iter().all(|&s| self.is_strict_descendant(s, a))
                && self.is_strict_descendant(target, a)
            {
                return Some(a);
            }
            anc = self.parent[a];
        }
        None
    }

    pub(crate) fn is_strict_descendant(&self, node: usize, ancestor: usize) -> bool {
        self.pos[ancestor] < self.pos[node] && self.pos[node] < self.end[ancestor]
    }

    fn is_descendant_or_self(&self, node: usize, ancestor: usize) -> bool {
        node == ancestor || self.is_strict_descendant(node, ancestor)
    }

    /// Overrides the bound on internal events and completion microsteps.
    pub fn with_internal_step_bound(mut self, bound: usize) -> Self {
        self.step_bound = bound;
        self
    }

    pub fn internal_step_bound(&self) -> usize {
        self.step_bound
    }

    pub fn nodes(&self) -> &[StateNode] {
        &self.nodes
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn node(&self, id: &str) -> Option<&StateNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn root_id(&self) -> &str {
        &self.nodes[self.root].id
    }

    pub fn parent_of(&self, id: &str) -> Option<&str> {
        let i = *self.index.get(id)?;
        self.parent[i].map(|p| self.nodes[p].id.as_str())
    }

    pub fn depth_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|&i| self.depth[i])
    }

    /// `(depth of deepest source, declaration index)`; deeper sources win.
    pub fn priority(&self, transition: usize) -> (usize, usize) {
        (self.compiled[transition].depth, transition)
    }

    /// Label used for a transition in traces (`name` or `t<index>`).
    pub fn transition_label(&self, transition: usize) -> &str {
        &self.compiled[transition].label
    }

    fn idx(&self, id: &str) -> Result<usize, ChartError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| ChartError::UnknownState(id.to_string()))
    }

    pub fn is_active(&self, config: &Configuration, id: &str) -> bool {
        self.index
            .get(id)
            .is_some_and(|&i| config.active.get(i).copied().unwrap_or(false))
    }

    /// Active state ids in document order.
    pub fn active_states(&self, config: &Configuration) -> Vec<&str> {
        self.order
            .iter()
            .filter(|&&i| config.active[i])
            .map(|&i| self.nodes[i].id.as_str())
            .collect()
    }

    /// The active child of an XOR composite, if the composite is active.
    pub fn active_child(&self, config: &Configuration, id: &str) -> Option<&str> {
        let i = *self.index.get(id)?;
        self.children[i]
            .iter()
            .find(|&&c| config.active[c])
            .map(|&c| self.nodes[c].id.as_str())
    }

    pub fn history_memory(&self, config: &Configuration) -> BTreeMap<&str, &str> {
        config
            .history
            .iter()
            .enumerate()
            .filter_map(|(h, c)| c.map(|c| (self.nodes[h].id.as_str(), self.nodes[c].id.as_str())))
            .collect()
    }

    /// Seeds the shallow-history memory of `composite` with `child`.
    pub fn remember(
        &self,
        config: &mut Configuration,
        composite: &str,
        child: &str,
    ) -> Result<(), ChartError> {
        let h = self.idx(composite)?;
        let c = self.idx(child)?;
        if self.nodes[h].history != HistoryKind::Shallow || self.parent[c] != Some(h) {
            return Err(ChartError::InvalidHistoryTarget {
                transition: "remember".into(),
                state: composite.to_string(),
            });
        }
        config.history[h] = Some(c);
        Ok(())
    }

    /// Checks the structural invariants of a configuration: root active,
    /// exactly one active child per active XOR, all regions of an active AND,
    /// and every active non-root state has an active parent.
    pub fn check_configuration(&self, config: &Configuration) -> Result<(), String> {
        if !config.active[self.root] {
            return Err("root is not active".into());
        }
        for i in 0..self.nodes.len() {
            let id = &self.nodes[i].id;
            if config.active[i] {
                if let Some(p) = self.parent[i] {
                    if !config.active[p] {
                        return Err(format!("`{id}` is active but its parent is not"));
                    }
                }
                let active_children = self.children[i]
                    .iter()
                    .filter(|&&c| config.active[c])
                    .count();
                match self.nodes[i].kind {
                    StateKind::Xor if active_children != 1 => {
                        return Err(format!("xor `{id}` has {active_children} active children"));
                    }
                    StateKind::And if active_children != self.children[i].len() => {
                        return Err(format!("and `{id}` has an inactive region"));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body_input() -> Vec<StateNode> {
        vec![
            StateNode::xor("input", ["disabled", "enabled"], "disabled").with_history(),
            StateNode::basic("disabled"),
            StateNode::basic("enabled"),
        ]
    }

    #[test]
    fn single_basic_root_is_valid() {
        let chart = Statechart::build(vec![StateNode::basic("root")], vec![]).unwrap();
        assert_eq!(chart.nodes().len(), 1);
        assert_eq!(chart.root_id(), "root");
    }

    #[test]
    fn body_input_with_history_is_valid() {
        let chart = Statechart::build(body_input(), vec![]).unwrap();
        assert_eq!(chart.node("input").unwrap().history, HistoryKind::Shallow);
    }

    #[test]
    fn and_with_one_region_is_malformed() {
        let err = Statechart::build(
            vec![
                StateNode::and("root", ["r"]),
                StateNode::xor("r", ["a"], "a"),
                StateNode::basic("a"),
            ],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, ChartError::MalformedComposite { .. }));
    }

    #[test]
    fn structural_errors() {
        let dup = Statechart::build(vec![StateNode::basic("a"), StateNode::basic("a")], vec![]);
        assert_eq!(dup.unwrap_err(), ChartError::DuplicateId("a".into()));

        let dangling = Statechart::build(vec![StateNode::xor("r", ["x"], "x")], vec![]);
        assert!(matches!(
            dangling.unwrap_err(),
            ChartError::DanglingReference { .. }
        ));

        let no_initial = StateNode {
            initial: None,
            ..StateNode::xor("r", ["a"], "a")
        };
        let err = Statechart::build(vec![no_initial, StateNode::basic("a")], vec![]).unwrap_err();
        assert!(matches!(err, ChartError::MalformedComposite { .. }));

        let two_roots =
            Statechart::build(vec![StateNode::basic("a"), StateNode::basic("b")], vec![]);
        assert_eq!(two_roots.unwrap_err(), ChartError::RootCount(2));

        let history_on_basic =
            Statechart::build(vec![StateNode::basic("a").with_history()], vec![]);
        assert!(matches!(
            history_on_basic.unwrap_err(),
            ChartError::MalformedComposite { .. }
        ));

        let basic_region = Statechart::build(
            vec![
                StateNode::and("p", ["r", "b"]),
                StateNode::xor("r", ["a"], "a"),
                StateNode::basic("a"),
                StateNode::basic("b"),
            ],
            vec![],
        );
        assert!(matches!(
            basic_region.unwrap_err(),
            ChartError::MalformedComposite { .. }
        ));
    }

    fn parallel() -> Vec<StateNode> {
        vec![
            StateNode::xor("top", ["p", "out"], "p"),
            StateNode::and("p", ["r1", "r2"]),
            StateNode::xor("r1", ["a", "b"], "a"),
            StateNode::xor("r2", ["c", "d"], "c"),
            StateNode::basic("a"),
            StateNode::basic("b"),
            StateNode::basic("c"),
            StateNode::basic("d"),
            StateNode::basic("out"),
        ]
    }

    #[test]
    fn join_sources_must_be_orthogonal() {
        let ok = Statechart::build(parallel(), vec![Transition::join(["b", "d"], "out")]);
        assert!(ok.is_ok());

        let same_region = Statechart::build(parallel(), vec![Transition::join(["a", "b"], "out")]);
        assert!(matches!(
            same_region.unwrap_err(),
            ChartError::IllegalJoin { .. }
        ));

        let nested = Statechart::build(parallel(), vec![Transition::join(["r1", "a"], "out")]);
        assert!(matches!(
            nested.unwrap_err(),
            ChartError::IllegalJoin { .. }
        ));
    }

    #[test]
    fn history_target_requires_history() {
        let err = Statechart::build(
            parallel(),
            vec![Transition::new("out", Target::history("r1"))],
        )
        .unwrap_err();
        assert!(matches!(err, ChartError::InvalidHistoryTarget { .. }));
    }

    #[test]
    fn priority_prefers_deeper_sources() {
        let chart = Statechart::build(
            parallel(),
            vec![
                Transition::new("p", "out").on("e"),
                Transition::new("a", "b").on("e"),
            ],
        )
        .unwrap();
        assert_eq!(chart.priority(0), (1, 0));
        assert_eq!(chart.priority(1), (3, 1));
    }
}
