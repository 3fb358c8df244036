use std::collections::VecDeque;

use super::guard::{Action, Vars};
use super::trace::{TraceEvent, TraceKind, Tracer};
use super::{
    ChartError, CompiledTransition, Configuration, Event, HistoryKind, ResolvedTarget, StateKind,
    Statechart,
};

/// Result of one run-to-completion step.
#[derive(Clone, Debug)]
pub struct Macrostep {
    pub config: Configuration,
    pub emitted: Vec<Event>,
    pub trace: Vec<TraceEvent>,
}

/// Scratch state for one macrostep.
struct Run<'a> {
    cfg: Configuration,
    snapshot: Vars,
    queue: VecDeque<Event>,
    emitted: Vec<Event>,
    tracer: &'a mut Tracer,
}

impl Statechart {
    /// Enters the default configuration: root, the initial child of each
    /// entered XOR (or its remembered child for default-history composites)
    /// and every region of each entered AND. Entry actions run outermost
    /// first. History memory starts empty.
    pub fn initialize(&self) -> Configuration {
        self.initialize_traced(&mut Tracer::disabled()).0
    }

    /// Like [`initialize`](Self::initialize), also returning the events
    /// raised or emitted by entry actions. They are not processed here.
    pub fn initialize_traced(&self, tracer: &mut Tracer) -> (Configuration, Vec<Event>) {
        let n = self.nodes.len();
        let mut run = Run {
            cfg: Configuration {
                active: vec![false; n],
                history: vec![None; n],
                vars: Vars::new(),
            },
            snapshot: Vars::new(),
            queue: VecDeque::new(),
            emitted: Vec::new(),
            tracer,
        };
        let mut enter = vec![false; n];
        self.add_descendants(self.root, &run.cfg, &mut enter);
        self.enter_marked(&enter, &mut run, &Event::empty());
        let mut emitted = run.emitted;
        emitted.extend(run.queue);
        (run.cfg, emitted)
    }

    /// Processes one external event to completion with a fresh trace stamped
    /// `tick 0`, agent `chart`.
    pub fn dispatch(&self, config: &Configuration, event: &Event) -> Result<Macrostep, ChartError> {
        let mut tracer = Tracer::new("chart");
        let (config, emitted) = self.dispatch_traced(config, event, &mut tracer)?;
        Ok(Macrostep {
            config,
            emitted,
            trace: tracer.into_events(),
        })
    }

    /// Processes one external event to completion. Internal events raised by
    /// actions are queued FIFO; completion transitions are tried after every
    /// microstep. On error the input configuration is untouched.
    pub fn dispatch_traced(
        &self,
        config: &Configuration,
        event: &Event,
        tracer: &mut Tracer,
    ) -> Result<(Configuration, Vec<Event>), ChartError> {
        let mut run = Run {
            cfg: config.clone(),
            snapshot: config.vars.clone(),
            queue: VecDeque::from([event.clone()]),
            emitted: Vec::new(),
            tracer,
        };
        let empty = Event::empty();
        let mut steps = 0usize;
        let mut first = true;
        while let Some(ev) = run.queue.pop_front() {
            if !first {
                steps += 1;
                if steps > self.step_bound {
                    return Err(ChartError::LivelockDetected {
                        bound: self.step_bound,
                    });
                }
            }
            first = false;
            let Some(candidates) = self.by_event.get(&ev.id) else {
                continue;
            };
            let selected = self.select(candidates, &run.cfg, &run.snapshot, &ev);
            if selected.is_empty() {
                continue;
            }
            self.microstep(&selected, &mut run, &ev);
            loop {
                let selected = self.select(&self.completion, &run.cfg, &run.snapshot, &empty);
                if selected.is_empty() {
                    break;
                }
                steps += 1;
                if steps > self.step_bound {
                    return Err(ChartError::LivelockDetected {
                        bound: self.step_bound,
                    });
                }
                self.microstep(&selected, &mut run, &empty);
            }
            if run.queue.len() > self.step_bound {
                return Err(ChartError::LivelockDetected {
                    bound: self.step_bound,
                });
            }
        }
        Ok((run.cfg, run.emitted))
    }

    /// Doc-order range `[start, end)` exited by a transition.
    fn exit_range(&self, t: &CompiledTransition) -> (usize, usize) {
        match t.domain {
            Some(d) => (self.pos[d] + 1, self.end[d]),
            None => (0, self.order.len()),
        }
    }

    /// Greedy maximal conflict-free selection over priority-sorted
    /// candidates. Two transitions conflict when their exit sets overlap,
    /// which for tree-shaped domains means overlapping ranges.
    fn select(
        &self,
        candidates: &[usize],
        cfg: &Configuration,
        snapshot: &Vars,
        ev: &Event,
    ) -> Vec<usize> {
        let mut chosen: Vec<usize> = Vec::new();
        let mut ranges: Vec<(usize, usize)> = Vec::new();
        for &ti in candidates {
            let t = &self.compiled[ti];
            if !t.sources.iter().all(|&s| cfg.active[s]) {
                continue;
            }
            if !self.transitions[ti].guard.eval(snapshot, ev) {
                continue;
            }
            let (s, e) = self.exit_range(t);
            if ranges.iter().any(|&(rs, re)| s < re && rs < e) {
                continue;
            }
            ranges.push((s, e));
            chosen.push(ti);
        }
        chosen
    }

    fn microstep(&self, selected: &[usize], run: &mut Run<'_>, ev: &Event) {
        let n = self.nodes.len();
        let mut exit = vec![false; n];
        for &ti in selected {
            let (s, e) = self.exit_range(&self.compiled[ti]);
            for &node in &self.order[s..e] {
                if run.cfg.active[node] {
                    exit[node] = true;
                }
            }
        }
        for (h, _) in exit.iter().enumerate().filter(|(_, &x)| x) {
            if self.nodes[h].history == HistoryKind::Shallow {
                run.cfg.history[h] = self.children[h]
                    .iter()
                    .copied()
                    .find(|&c| run.cfg.active[c]);
            }
        }
        for &node in self.order.iter().rev() {
            if !exit[node] {
                continue;
            }
            self.run_actions(&self.nodes[node].exit_actions, run, ev);
            run.cfg.active[node] = false;
            run.tracer.record(
                TraceKind::Exited,
                || self.nodes[node].id.clone(),
                String::new,
            );
        }

        for &ti in selected {
            let t = &self.compiled[ti];
            run.tracer.record(
                TraceKind::Fired,
                || t.label.clone(),
                || {
                    let spec = &self.transitions[ti];
                    let mut d = spec.sources.join("+");
                    d.push_str(" -> ");
                    d.push_str(&spec.target.to_string());
                    match &spec.event {
                        Some(e) => {
                            d.push_str(" on ");
                            d.push_str(e);
                        }
                        None => d.push_str(" on <completion>"),
                    }
                    d
                },
            );
            self.run_actions(&self.transitions[ti].actions, run, ev);
        }

        let mut enter = vec![false; n];
        for &ti in selected {
            let t = &self.compiled[ti];
            let anchor = match t.target {
                ResolvedTarget::State(s) => {
                    self.add_descendants(s, &run.cfg, &mut enter);
                    s
                }
                ResolvedTarget::History(h) => {
                    let child = run.cfg.history[h]
                        .or(self.initial[h])
                        .expect("xor has initial");
                    self.add_descendants(child, &run.cfg, &mut enter);
                    child
                }
            };
            self.add_ancestors(anchor, t.domain, &run.cfg, &mut enter);
        }
        self.enter_marked(&enter, run, ev);
    }

    fn enter_marked(&self, enter: &[bool], run: &mut Run<'_>, ev: &Event) {
        for &node in &self.order {
            if !enter[node] {
                continue;
            }
            run.cfg.active[node] = true;
            run.tracer.record(
                TraceKind::Entered,
                || self.nodes[node].id.clone(),
                String::new,
            );
            self.run_actions(&self.nodes[node].entry_actions, run, ev);
        }
    }

    fn default_child(&self, node: usize, cfg: &Configuration) -> usize {
        let remembered = if self.nodes[node].default_to_history {
            cfg.history[node]
        } else {
            None
        };
        remembered
            .or(self.initial[node])
            .expect("validated xor composite has an initial child")
    }

    fn add_descendants(&self, node: usize, cfg: &Configuration, enter: &mut [bool]) {
        enter[node] = true;
        match self.nodes[node].kind {
            StateKind::Basic => {}
            StateKind::Xor => {
                let child = self.default_child(node, cfg);
                self.add_descendants(child, cfg, enter);
            }
            StateKind::And => {
                for &c in &self.children[node] {
                    if !self.marked_in_subtree(c, enter) {
                        self.add_descendants(c, cfg, enter);
                    }
                }
            }
        }
    }

    /// Marks the proper ancestors of `node` strictly below `domain`, filling
    /// in the default entry of untouched regions of entered AND states.
    fn add_ancestors(
        &self,
        node: usize,
        domain: Option<usize>,
        cfg: &Configuration,
        enter: &mut [bool],
    ) {
        let mut anc = self.parent[node];
        while let Some(a) = anc {
            if Some(a) == domain {
                break;
            }
            enter[a] = true;
            if self.nodes[a].kind == StateKind::And {
                for &c in &self.children[a] {
                    if !self.marked_in_subtree(c, enter) {
                        self.add_descendants(c, cfg, enter);
                    }
                }
            }
            anc = self.parent[a];
        }
    }

    fn marked_in_subtree(&self, node: usize, marks: &[bool]) -> bool {
        self.order[self.pos[node]..self.end[node]]
            .iter()
            .any(|&i| marks[i])
    }

    fn run_actions(&self, actions: &[Action], run: &mut Run<'_>, ev: &Event) {
        for action in actions {
            match action {
                Action::Set { var, value } => {
                    let v = value.resolve(&run.cfg.vars, ev);
                    run.cfg.vars.insert(var.clone(), v);
                }
                Action::Add { var, value } => {
                    let v = value.resolve(&run.cfg.vars, ev);
                    *run.cfg.vars.entry(var.clone()).or_insert(0.0) += v;
                }
                Action::Raise { event, payload } | Action::Emit { event, payload } => {
                    let mut out = Event::new(event.clone());
                    for (k, v) in payload {
                        out.payload.insert(k.clone(), v.resolve(&run.cfg.vars, ev));
                    }
                    let internal = matches!(action, Action::Raise { .. });
                    run.tracer.record(
                        TraceKind::Emitted,
                        || out.id.clone(),
                        || {
                            let scope = if internal { "internal" } else { "external" };
                            format!("{scope} {out}")
                        },
                    );
                    if internal {
                        run.queue.push_back(out);
                    } else {
                        run.emitted.push(out);
                    }
                }
            }
        }
    }
}
