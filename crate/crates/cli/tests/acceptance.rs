//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use embodied_core::agent::{
    configure_body, derive_controller, ActionSet, Actuation, AgentRuntime, AgentSpec, BehaviorPlan,
    BodyConfig, DeviceSpec, Percept,
};
use embodied_core::controller::{
    input_neuron_id, output_neuron_id, sigmoid, Connection, ControllerState, ControllerTopology,
    Layer, Neuron,
};
use embodied_core::environment::{
    apply_effects, perceive, step_env, EnvError, EpisodeTrace, Snapshot,
};
use embodied_core::evaluation::{
    digest_of, evaluate_episode, DecisionPolicy, ScoreRule, StructuralPolicy,
};
use embodied_core::search::{initial_spec, run_search, SearchConfig, Task};
use embodied_core::statechart::{
    Action, ChartError, Cmp, Condition, Configuration, Event, StateKind, StateNode, Statechart,
    Target, TraceEvent, TraceKind, Tracer, Transition,
};
use embodied_core::streetlight::{
    build_streetlight_scenario, Ambient, LevelValues, StreetLightParams, LEVELS, LIGHTING_SENSOR,
    LIGHT_SWITCH, MOTION_SENSOR, WIRELESS_SPEAKER,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("statechart-semantics", statechart_semantics),
        ("body-controller-mapping", body_controller_mapping),
        ("adjust-restriction", adjust_restriction),
        ("embodiment-loop", embodiment_loop),
        ("neural-evaluation", neural_evaluation),
        ("structural-oracle", structural_oracle),
        ("training-sanity", training_sanity),
        ("determinism", determinism),
        ("score-linearity", score_linearity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Statechart semantics

const EVENTS: [&str; 5] = ["a", "b", "c", "d", "e"];

struct ChartGen<'r> {
    rng: &'r mut ChaCha8Rng,
    nodes: Vec<StateNode>,
    next: usize,
}

impl ChartGen<'_> {
    fn fresh(&mut self) -> String {
        self.next += 1;
        format!("s{}", self.next - 1)
    }

    fn action(&mut self) -> Action {
        match self.rng.random_range(0..10) {
            0 => Action::raise(EVENTS[self.rng.random_range(0..EVENTS.len())]),
            1..=5 => Action::add("x", 1.0),
            _ => Action::set("y", self.rng.random_range(0..3) as f64),
        }
    }

    fn decorate(&mut self, mut node: StateNode) -> StateNode {
        if self.rng.random_bool(0.2) {
            let a = self.action();
            node = node.on_entry(a);
        }
        if self.rng.random_bool(0.2) {
            let a = self.action();
            node = node.on_exit(a);
        }
        node
    }

    /// Generates a subtree and returns its root id. `composite` forces an XOR.
    fn state(&mut self, depth: usize, composite: bool) -> String {
        let id = self.fresh();
        let roll = self.rng.random::<f64>();
        let node = if !composite && (depth >= 4 || roll < 0.4) {
            StateNode::basic(&id)
        } else if composite || roll < 0.8 {
            let n = self.rng.random_range(1..=3);
            let children: Vec<String> = (0..n).map(|_| self.state(depth + 1, false)).collect();
            let initial = children[self.rng.random_range(0..n)].clone();
            let mut node = StateNode::xor(&id, children, initial);
            match self.rng.random_range(0..4) {
                0 => node = node.with_history(),
                1 => node = node.with_default_history(),
                _ => {}
            }
            node
        } else {
            let n = self.rng.random_range(2..=3);
            let regions: Vec<String> = (0..n).map(|_| self.state(depth + 1, true)).collect();
            StateNode::and(&id, regions)
        };
        let node = self.decorate(node);
        self.nodes.push(node);
        id
    }
}

/// Structural view of a chart, built from its node list.
struct Shape {
    nodes: HashMap<String, StateNode>,
    parent: HashMap<String, String>,
    root: String,
}

impl Shape {
    fn new(nodes: &[StateNode]) -> Self {
        let mut parent = HashMap::new();
        for n in nodes {
            for c in &n.children {
                parent.insert(c.clone(), n.id.clone());
            }
        }
        let root = nodes
            .iter()
            .find(|n| !parent.contains_key(&n.id))
            .unwrap()
            .id
            .clone();
        Shape {
            nodes: nodes.iter().map(|n| (n.id.clone(), n.clone())).collect(),
            parent,
            root,
        }
    }

    fn strictly_inside(&self, id: &str, ancestor: &str) -> bool {
        let mut cur = self.parent.get(id);
        while let Some(p) = cur {
            if p == ancestor {
                return true;
            }
            cur = self.parent.get(p);
        }
        false
    }

    fn descendants(&self, id: &str) -> Vec<String> {
        let mut out = vec![id.to_string()];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.nodes[&out[i]].children.iter().cloned());
            i += 1;
        }
        out
    }
}

fn random_chart(rng: &mut ChaCha8Rng) -> (Vec<StateNode>, Vec<Transition>) {
    let mut g = ChartGen {
        rng,
        nodes: Vec::new(),
        next: 0,
    };
    g.state(0, true);
    let nodes = g.nodes;
    let rng = g.rng;
    let shape = Shape::new(&nodes);
    let states: Vec<&str> = nodes
        .iter()
        .map(|n| n.id.as_str())
        .filter(|id| *id != shape.root)
        .collect();
    let histories: Vec<&str> = nodes
        .iter()
        .filter(|n| n.history != Default::default())
        .map(|n| n.id.as_str())
        .collect();
    let ands: Vec<&StateNode> = nodes.iter().filter(|n| n.kind == StateKind::And).collect();

    let mut transitions = Vec::new();
    for _ in 0..rng.random_range(3..=12) {
        let target = if !histories.is_empty() && rng.random_bool(0.25) {
            Target::history(histories[rng.random_range(0..histories.len())])
        } else {
            Target::state(states[rng.random_range(0..states.len())])
        };
        let mut t = if !ands.is_empty() && rng.random_bool(0.15) {
            let a = ands[rng.random_range(0..ands.len())];
            let r1 = rng.random_range(0..a.children.len());
            let r2 = (r1 + rng.random_range(1..a.children.len())) % a.children.len();
            let pick = |rng: &mut ChaCha8Rng, region: &str| {
                let d = shape.descendants(region);
                d[rng.random_range(0..d.len())].clone()
            };
            let s1 = pick(rng, &a.children[r1]);
            let s2 = pick(rng, &a.children[r2]);
            Transition::join([s1, s2], target)
        } else {
            Transition::new(states[rng.random_range(0..states.len())], target)
        };
        if rng.random_bool(0.9) {
            t = t.on(EVENTS[rng.random_range(0..EVENTS.len())]);
        } else {
            // Completion transitions need a guard that eventually closes.
            t = t.when(Condition::var("x", Cmp::Lt, rng.random_range(1..6) as f64));
        }
        match rng.random_range(0..6) {
            0 => t = t.when(Condition::var("y", Cmp::Ne, 1.0)),
            1 => t = t.when(Condition::payload("p", Cmp::Gt, 0.5)),
            2 => t = t.when(Condition::Not(Box::new(Condition::var("x", Cmp::Gt, 8.0)))),
            _ => {}
        }
        for _ in 0..rng.random_range(0..3) {
            t = t.then(match rng.random_range(0..4) {
                0 => Action::raise(EVENTS[rng.random_range(0..EVENTS.len())]),
                1 => Action::emit("out"),
                _ => Action::add("x", 1.0),
            });
        }
        transitions.push(t);
    }
    (nodes, transitions)
}

/// Independent well-formedness check over the active set.
fn config_violation(shape: &Shape, active: &BTreeSet<String>) -> Option<String> {
    if !active.contains(&shape.root) {
        return Some("root inactive".into());
    }
    for (id, node) in &shape.nodes {
        let on = active.contains(id);
        let kids = node.children.iter().filter(|c| active.contains(*c)).count();
        if on {
            if let Some(p) = shape.parent.get(id) {
                if !active.contains(p) {
                    return Some(format!("{id} active without parent {p}"));
                }
            }
            match node.kind {
                StateKind::Xor if kids != 1 => {
                    return Some(format!("xor {id} has {kids} active children"))
                }
                StateKind::And if kids != node.children.len() => {
                    return Some(format!(
                        "and {id} has {kids}/{} regions",
                        node.children.len()
                    ))
                }
                _ => {}
            }
        } else if kids > 0 {
            return Some(format!("{id} inactive with active children"));
        }
    }
    None
}

/// Replays trace events to track the active set and shallow history, and
/// checks which child every entered XOR state picks.
#[derive(Default)]
struct EntryOracle {
    active: BTreeSet<String>,
    last_child: HashMap<String, String>,
    memory: HashMap<String, String>,
    targets: Vec<Target>,
    entering: bool,
    /// Composite just entered → expected child and whether memory was used.
    pending: HashMap<String, (String, Option<bool>)>,
    restored: usize,
    first_entries: usize,
    defaults: usize,
}

impl EntryOracle {
    fn feed(&mut self, shape: &Shape, events: &[TraceEvent]) -> Result<(), String> {
        for ev in events {
            match ev.kind {
                TraceKind::Exited | TraceKind::Fired if self.entering => {
                    self.entering = false;
                    self.targets.clear();
                }
                _ => {}
            }
            match ev.kind {
                TraceKind::Fired => {
                    let target = ev
                        .detail
                        .split(" -> ")
                        .nth(1)
                        .and_then(|s| s.split(" on ").next())
                        .ok_or_else(|| format!("unparsable fired detail `{}`", ev.detail))?;
                    self.targets.push(
                        match target.strip_prefix("H(").and_then(|s| s.strip_suffix(')')) {
                            Some(h) => Target::history(h),
                            None => Target::state(target),
                        },
                    );
                }
                TraceKind::Exited => {
                    let id = &ev.subject;
                    if !self.active.remove(id) {
                        return Err(format!("exited inactive {id}"));
                    }
                    if shape.nodes[id].history != Default::default() {
                        if let Some(c) = self.last_child.get(id) {
                            self.memory.insert(id.clone(), c.clone());
                        }
                    }
                }
                TraceKind::Entered => {
                    self.entering = true;
                    let id = ev.subject.clone();
                    if !self.active.insert(id.clone()) {
                        return Err(format!("entered active {id}"));
                    }
                    if let Some(p) = shape.parent.get(&id) {
                        self.last_child.insert(p.clone(), id.clone());
                        if let Some((expected, via_memory)) = self.pending.remove(p) {
                            if expected != id {
                                return Err(format!("{p} entered {id}, expected {expected}"));
                            }
                            match via_memory {
                                Some(true) => self.restored += 1,
                                Some(false) => self.first_entries += 1,
                                None => self.defaults += 1,
                            }
                        }
                    }
                    let node = &shape.nodes[&id];
                    if node.kind != StateKind::Xor {
                        continue;
                    }
                    let on_path = self.targets.iter().any(|t| match t {
                        Target::State(s) | Target::History(s) => shape.strictly_inside(s, &id),
                    });
                    if on_path {
                        continue;
                    }
                    let initial = node.initial.clone().unwrap();
                    let via_history =
                        node.default_to_history || self.targets.contains(&Target::history(&id));
                    let expected = if via_history {
                        match self.memory.get(&id) {
                            Some(m) => (m.clone(), Some(true)),
                            None => (initial, Some(false)),
                        }
                    } else {
                        (initial, None)
                    };
                    self.pending.insert(id, expected);
                }
                _ => {}
            }
        }
        if let Some((p, (c, _))) = self.pending.iter().next() {
            return Err(format!("{p} entered without entering {c}"));
        }
        Ok(())
    }
}

fn active_set(chart: &Statechart, cfg: &Configuration) -> BTreeSet<String> {
    chart
        .active_states(cfg)
        .into_iter()
        .map(String::from)
        .collect()
}

fn check_one_chart(seed: u64, stats: &mut [usize; 6]) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nodes, transitions) = random_chart(&mut rng);
    let shape = Shape::new(&nodes);
    let chart = Statechart::build(nodes, transitions)
        .map_err(|e| format!("valid chart rejected: {e}"))?
        .with_internal_step_bound(500);
    let mut oracle = EntryOracle::default();
    let mut tracer = Tracer::new("chart");
    let (mut cfg, _) = chart.initialize_traced(&mut tracer);
    oracle.feed(&shape, &tracer.take())?;
    let mut steps = 0;
    for _ in 0..rng.random_range(1..=20) {
        let mut ev = Event::new(EVENTS[rng.random_range(0..EVENTS.len())]);
        if rng.random_bool(0.5) {
            ev = ev.with("p", rng.random::<f64>());
        }
        let mut step_trace = Tracer::new("chart");
        match chart.dispatch_traced(&cfg, &ev, &mut step_trace) {
            Ok((next, _)) => {
                oracle.feed(&shape, &step_trace.take())?;
                cfg = next;
                steps += 1;
            }
            Err(ChartError::LivelockDetected { .. }) => stats[5] += 1,
            Err(e) => return Err(format!("dispatch: {e}")),
        }
        let active = active_set(&chart, &cfg);
        if let Some(v) = config_violation(&shape, &active) {
            return Err(v);
        }
        if active != oracle.active {
            return Err(format!(
                "trace replay {:?} differs from {:?}",
                oracle.active, active
            ));
        }
    }
    stats[0] += 1;
    stats[1] += steps;
    stats[2] += oracle.restored;
    stats[3] += oracle.first_entries;
    stats[4] += oracle.defaults;
    Ok(())
}

/// Body device charts start disabled and resume the remembered state.
fn device_chart_entry() -> Result<(), String> {
    let devices = [DeviceSpec::input("s", "x"), DeviceSpec::output("o", "y")];
    let all_on: BTreeMap<String, bool> = devices.iter().map(|d| (d.id.clone(), true)).collect();
    let first = configure_body(&devices, &BTreeMap::new(), None, &mut Tracer::disabled())
        .map_err(|e| e.to_string())?;
    ensure(devices.iter().all(|d| !first.is_enabled(&d.id)), || {
        "first entry is not disabled".into()
    })?;
    let on = configure_body(&devices, &all_on, None, &mut Tracer::disabled())
        .map_err(|e| e.to_string())?;
    let again = configure_body(
        &devices,
        &BTreeMap::new(),
        Some(&on),
        &mut Tracer::disabled(),
    )
    .map_err(|e| e.to_string())?;
    ensure(devices.iter().all(|d| again.is_enabled(&d.id)), || {
        "history did not restore enabled".into()
    })
}

fn statechart_semantics() -> Outcome {
    let start = Instant::now();
    let mut stats = [0usize; 6];
    for seed in 0..1200u64 {
        check_one_chart(seed, &mut stats).map_err(|e| format!("chart seed {seed}: {e}"))?;
    }
    device_chart_entry()?;
    let elapsed = start.elapsed();
    ensure(stats[2] > 0 && stats[3] > 0, || {
        format!("history paths not exercised: {stats:?}")
    })?;
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} charts, {} macrosteps, {} history restores, {} first entries, {} plain defaults, {} livelocks caught",
        stats[0], stats[1], stats[2], stats[3], stats[4], stats[5]
    ))
}

// ---------------------------------------------------------------------------
// Body ↔ controller mapping

/// A task over an arbitrary inventory: the score is the summed output of a
/// short synthetic episode.
struct Synthetic {
    devices: Vec<DeviceSpec>,
    initial: BTreeMap<String, bool>,
    rules: Vec<ScoreRule>,
}

impl Task for Synthetic {
    fn devices(&self) -> &[DeviceSpec] {
        &self.devices
    }

    fn initial_selection(&self) -> BTreeMap<String, bool> {
        self.initial.clone()
    }

    fn rules(&self) -> &[ScoreRule] {
        &self.rules
    }

    fn run_episode(&self, spec: &AgentSpec, tracer: &mut Tracer) -> Result<EpisodeTrace, EnvError> {
        let plan = BehaviorPlan::new(spec)?;
        let mut rt = AgentRuntime::new(plan.clone(), "a", tracer)?;
        let mut snapshots = Vec::new();
        for t in 0..6u64 {
            let percept = Percept(
                plan.input_devices()
                    .iter()
                    .enumerate()
                    .map(|(k, d)| (d.clone(), ((t + k as u64) as f64 * 0.37).sin().abs()))
                    .collect(),
            );
            let acts = rt.step(&percept, tracer)?;
            let total: f64 = acts.0.values().map(Actuation::value).sum();
            snapshots.push(Snapshot {
                tick: t + 1,
                variables: [("out".to_string(), total)].into_iter().collect(),
                context: "all".into(),
            });
        }
        Ok(EpisodeTrace { snapshots })
    }
}

fn random_inventory(rng: &mut ChaCha8Rng) -> Vec<DeviceSpec> {
    (0..rng.random_range(1..=7))
        .map(|i| {
            let (id, ch) = (format!("d{i}"), format!("ch{i}"));
            if rng.random_bool(0.5) {
                DeviceSpec::input(id, ch)
            } else {
                let d = DeviceSpec::output(id, ch);
                match rng.random_range(0..4) {
                    0 | 1 => d,
                    k => d.with_levels((0..k + 1).map(|j| format!("L{j}"))),
                }
            }
        })
        .collect()
}

fn mapping_violation(spec: &AgentSpec) -> Option<String> {
    let expect = |devs: Vec<&DeviceSpec>, name: fn(&str) -> String| -> BTreeSet<String> {
        devs.iter().map(|d| name(&d.id)).collect()
    };
    let have = |layer: Layer| -> BTreeSet<String> {
        spec.controller
            .neurons_in(layer)
            .map(|n| n.id.clone())
            .collect()
    };
    let want_in = expect(spec.body.enabled_inputs(), input_neuron_id);
    let want_out = expect(spec.body.enabled_outputs(), output_neuron_id);
    if have(Layer::Input) != want_in {
        return Some(format!(
            "inputs {:?} vs body {:?}",
            have(Layer::Input),
            want_in
        ));
    }
    if have(Layer::Output) != want_out {
        return Some(format!(
            "outputs {:?} vs body {:?}",
            have(Layer::Output),
            want_out
        ));
    }
    if spec
        .controller
        .neurons
        .iter()
        .any(|n| n.layer != Layer::Hidden && !n.enabled)
    {
        return Some("disabled device neuron".into());
    }
    spec.check_consistency().err().map(|e| e.to_string())
}

fn body_controller_mapping() -> Outcome {
    let results: Vec<Result<(usize, usize), String>> = (0..500u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let devices = random_inventory(&mut rng);
            let mut checks = 0;
            let selection: BTreeMap<String, bool> = devices
                .iter()
                .map(|d| (d.id.clone(), rng.random_bool(0.6)))
                .collect();
            let mut body = configure_body(&devices, &selection, None, &mut Tracer::disabled())
                .map_err(|e| e.to_string())?;
            for d in &devices {
                if body.is_enabled(&d.id) != selection[&d.id] {
                    return Err(format!("seed {seed}: {} not configured as selected", d.id));
                }
            }
            let mut controller = derive_controller(&body, None, &mut rng);
            for _ in 0..4 {
                let spec = AgentSpec {
                    agent_id: "a".into(),
                    body: body.clone(),
                    controller: controller.clone(),
                };
                if let Some(v) = mapping_violation(&spec) {
                    return Err(format!("seed {seed}: {v}"));
                }
                checks += 1;
                let d = &devices[rng.random_range(0..devices.len())];
                let flip = [(d.id.clone(), !body.is_enabled(&d.id))]
                    .into_iter()
                    .collect();
                let next = configure_body(&devices, &flip, Some(&body), &mut Tracer::disabled())
                    .map_err(|e| e.to_string())?;
                if next != body.flipped(&d.id).map_err(|e| e.to_string())? {
                    return Err(format!(
                        "seed {seed}: flip of {} touched other devices",
                        d.id
                    ));
                }
                controller = derive_controller(&next, Some(&controller), &mut rng);
                body = next;
            }

            let task = Synthetic {
                initial: devices
                    .iter()
                    .map(|d| (d.id.clone(), rng.random_bool(0.7)))
                    .collect(),
                devices,
                rules: vec![ScoreRule::minimize("out", [("all", 1.0)])],
            };
            let structural = if task.devices.len() <= 5 && rng.random_bool(0.5) {
                StructuralPolicy::Exhaustive
            } else {
                StructuralPolicy::FlipOne
            };
            let config = SearchConfig {
                lambda: 3,
                policy: DecisionPolicy {
                    patience: 1,
                    budget: 8,
                    structural,
                    ..DecisionPolicy::default()
                },
                ..SearchConfig::new(seed)
            };
            let out = run_search(&task, &config, &mut Tracer::disabled())
                .map_err(|e| format!("seed {seed}: {e}"))?;
            let mut reconfigured = 0;
            for g in &out.generations {
                let mut specs = vec![&g.parent];
                if g.command == "reconfigure" {
                    reconfigured += g.candidates.len();
                    specs.extend(g.candidates.iter().map(|c| &c.spec));
                }
                for s in specs {
                    if let Some(v) = mapping_violation(s) {
                        return Err(format!("seed {seed} generation {}: {v}", g.generation));
                    }
                    checks += 1;
                }
            }
            Ok((checks, reconfigured))
        })
        .collect();
    let mut checks = 0;
    let mut reconfigured = 0;
    for r in results {
        let (c, n) = r?;
        checks += c;
        reconfigured += n;
    }
    ensure(reconfigured > 0, || {
        "no reconfigure candidates produced".into()
    })?;
    Ok(format!(
        "500 inventories, {checks} configurations checked ({reconfigured} reconfigure candidates), 0 violations"
    ))
}

// ---------------------------------------------------------------------------
// Adjust restriction

fn adjust_restriction() -> Outcome {
    let mut params = StreetLightParams::new(6);
    params.episode_ticks = 100;
    params.search.generations = 50;
    params.search.patience = 4;
    let s = build_streetlight_scenario(params, 11).map_err(|e| e.to_string())?;
    let out = run_search(&s, &s.params.search_config(11), &mut Tracer::disabled())
        .map_err(|e| e.to_string())?;
    ensure(out.generations.len() == 50, || {
        format!("{} generations", out.generations.len())
    })?;
    let mut adjusted = 0;
    let mut reconfigures = 0;
    for g in &out.generations {
        match g.command.as_str() {
            "adjust" => {
                let body = digest_of(&g.parent.body);
                let neurons = digest_of(&g.parent.controller.neurons);
                for c in &g.candidates {
                    ensure(digest_of(&c.spec.body) == body, || {
                        format!("generation {}: body changed", g.generation)
                    })?;
                    ensure(digest_of(&c.spec.controller.neurons) == neurons, || {
                        format!("generation {}: neurons changed", g.generation)
                    })?;
                    ensure(c.spec.agent_id == g.parent.agent_id, || {
                        "agent id changed".into()
                    })?;
                    adjusted += 1;
                }
            }
            "reconfigure" => reconfigures += 1,
            _ => {}
        }
    }
    ensure(adjusted > 0 && reconfigures > 0, || {
        format!("adjust {adjusted}, reconfigure {reconfigures}")
    })?;
    Ok(format!(
        "{adjusted} adjust candidates share body and neuron digests with their parent ({reconfigures} reconfigure generations in the run)"
    ))
}

// ---------------------------------------------------------------------------
// Embodiment loop

fn switch_controller(bias: f64) -> AgentSpec {
    let devices = embodied_core::streetlight::all_devices();
    let body = BodyConfig {
        enabled: devices
            .iter()
            .map(|d| {
                (
                    d.id.clone(),
                    d.id == LIGHTING_SENSOR || d.id == LIGHT_SWITCH,
                )
            })
            .collect(),
        devices,
    };
    let mut out = Neuron::new(output_neuron_id(LIGHT_SWITCH), Layer::Output);
    out.bias = bias;
    AgentSpec {
        agent_id: "light".into(),
        body,
        controller: ControllerTopology {
            neurons: vec![
                Neuron::new(input_neuron_id(LIGHTING_SENSOR), Layer::Input),
                out,
            ],
            connections: vec![Connection {
                id: 0,
                from: input_neuron_id(LIGHTING_SENSOR),
                to: output_neuron_id(LIGHT_SWITCH),
                weight: 0.0,
                enabled: true,
            }],
        },
    }
}

/// Two scripted ticks; returns the brightness percepts and the chosen levels.
fn scripted_loop(
    ambient: f64,
    contribution: LevelValues,
    bias: f64,
) -> Result<(Vec<f64>, Vec<String>), String> {
    let mut p = StreetLightParams::new(1);
    p.ambient = Ambient::Constant { value: ambient };
    p.light_contribution = contribution;
    p.people_rate = 0.0;
    let s = build_streetlight_scenario(p, 0).map_err(|e| e.to_string())?;
    let def = s.environment();
    let spec = switch_controller(bias);
    let plan = BehaviorPlan::new(&spec).map_err(|e| e.to_string())?;
    let mut tracer = Tracer::disabled();
    let mut rt = AgentRuntime::new(plan, "light-0", &mut tracer).map_err(|e| e.to_string())?;
    let mut state = def.initial_state();
    let (mut seen, mut levels) = (Vec::new(), Vec::new());
    for _ in 0..2 {
        let percept = perceive(def, &state, "light-0", &spec.body).map_err(|e| e.to_string())?;
        seen.push(
            percept
                .get(LIGHTING_SENSOR)
                .ok_or("no brightness percept")?,
        );
        let acts: ActionSet = rt.step(&percept, &mut tracer).map_err(|e| e.to_string())?;
        match acts.get(LIGHT_SWITCH) {
            Some(Actuation::Level { label, .. }) => levels.push(label.clone()),
            other => return Err(format!("switch actuation {other:?}")),
        }
        apply_effects(def, &mut state, "light-0", &spec.body, &acts, &mut tracer)
            .map_err(|e| e.to_string())?;
        step_env(def, &mut state, &mut tracer).map_err(|e| e.to_string())?;
    }
    let percept = perceive(def, &state, "light-0", &spec.body).map_err(|e| e.to_string())?;
    seen.push(
        percept
            .get(LIGHTING_SENSOR)
            .ok_or("no brightness percept")?,
    );
    Ok((seen, levels))
}

fn embodiment_loop() -> Outcome {
    let contribution = LevelValues {
        off: 0.0,
        dim: 0.3,
        on: 0.6,
    };
    let cases = [
        // (ambient, bias, level, expected brightness after the first tick)
        (0.2, 20.0, "ON", (0.2f64 + 0.6).clamp(0.0, 1.0)),
        (0.2, -20.0, "OFF", 0.2),
        (0.55, 20.0, "ON", 1.0),
        (0.1, 0.0, "DIM", 0.1 + 0.3),
    ];
    for (ambient, bias, level, after) in cases {
        let (seen, levels) = scripted_loop(ambient, contribution.clone(), bias)?;
        let expected = [ambient, after, after];
        for (t, (got, want)) in seen.iter().zip(expected).enumerate() {
            ensure((got - want).abs() <= 1e-12, || {
                format!("ambient {ambient} {level}: brightness percept at tick {t} is {got}, expected {want}")
            })?;
        }
        ensure(levels.iter().all(|l| l == level), || {
            format!("levels {levels:?}, expected {level}")
        })?;
    }
    ensure(LEVELS == ["OFF", "DIM", "ON"], || "level labels".into())?;
    Ok(format!(
        "{} scripted two-tick loops match the closed form",
        cases.len()
    ))
}

// ---------------------------------------------------------------------------
// Neural evaluation

fn random_topology(rng: &mut ChaCha8Rng) -> ControllerTopology {
    let n = rng.random_range(2..=8);
    let neurons: Vec<Neuron> = (0..n)
        .map(|i| {
            let layer = match i {
                0 => Layer::Input,
                1 => Layer::Output,
                _ => [Layer::Input, Layer::Hidden, Layer::Hidden, Layer::Output]
                    [rng.random_range(0..4)],
            };
            let mut nr = Neuron::new(format!("n{i}"), layer);
            nr.bias = rng.random_range(-2.0..2.0);
            nr.enabled = rng.random_bool(0.9);
            nr
        })
        .collect();
    let connections = (0..rng.random_range(0..=3 * n))
        .map(|id| Connection {
            id: id as u64,
            from: format!("n{}", rng.random_range(0..n)),
            to: format!("n{}", rng.random_range(0..n)),
            weight: rng.random_range(-3.0..3.0),
            enabled: rng.random_bool(0.85),
        })
        .collect();
    ControllerTopology {
        neurons,
        connections,
    }
}

/// Brute-force reference: edge classes via a transitive-closure matrix and
/// the forward pass as a fixed-point iteration.
struct Reference {
    forward: Vec<(usize, usize, f64)>,
    recurrent: Vec<(usize, usize, f64)>,
    recurrent_ids: BTreeSet<u64>,
}

impl Reference {
    fn new(t: &ControllerTopology) -> Self {
        let n = t.neurons.len();
        let idx = |id: &str| t.neurons.iter().position(|x| x.id == id);
        let mut reach = vec![vec![false; n]; n];
        let (mut forward, mut recurrent, mut recurrent_ids) =
            (Vec::new(), Vec::new(), BTreeSet::new());
        for c in &t.connections {
            let (Some(u), Some(v)) = (idx(&c.from), idx(&c.to)) else {
                continue;
            };
            if !c.enabled
                || !t.neurons[u].enabled
                || !t.neurons[v].enabled
                || t.neurons[v].layer == Layer::Input
            {
                continue;
            }
            if u == v || reach[v][u] {
                recurrent.push((u, v, c.weight));
                recurrent_ids.insert(c.id);
                continue;
            }
            forward.push((u, v, c.weight));
            let from: Vec<usize> = (0..n).filter(|&a| a == u || reach[a][u]).collect();
            let to: Vec<usize> = (0..n).filter(|&b| b == v || reach[v][b]).collect();
            for &a in &from {
                for &b in &to {
                    reach[a][b] = true;
                }
            }
        }
        Reference {
            forward,
            recurrent,
            recurrent_ids,
        }
    }

    fn step(
        &self,
        t: &ControllerTopology,
        prev: &[f64],
        inputs: &BTreeMap<String, f64>,
    ) -> Vec<f64> {
        let n = t.neurons.len();
        let computed = |i: usize| t.neurons[i].enabled && t.neurons[i].layer != Layer::Input;
        let mut cur = vec![0.0; n];
        for (i, nr) in t.neurons.iter().enumerate() {
            if let Some(&v) = inputs.get(&nr.id) {
                cur[i] = v;
            }
        }
        for _ in 0..=n {
            let mut next = cur.clone();
            for i in (0..n).filter(|&i| computed(i)) {
                let mut sum = t.neurons[i].bias;
                sum += self
                    .forward
                    .iter()
                    .filter(|e| e.1 == i)
                    .map(|&(u, _, w)| w * cur[u])
                    .sum::<f64>();
                sum += self
                    .recurrent
                    .iter()
                    .filter(|e| e.1 == i)
                    .map(|&(u, _, w)| w * prev[u])
                    .sum::<f64>();
                next[i] = 1.0 / (1.0 + (-sum).exp());
            }
            cur = next;
        }
        cur
    }
}

fn neural_evaluation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut tested, mut with_recurrence, mut compared) = (0, 0, 0);
    let mut worst = 0.0f64;
    while with_recurrence < 150 {
        let t = random_topology(&mut rng);
        let reference = Reference::new(&t);
        let got_ids: BTreeSet<u64> = t.recurrent_connections().into_iter().collect();
        ensure(got_ids == reference.recurrent_ids, || {
            format!(
                "recurrent edges {got_ids:?} vs reference {:?}",
                reference.recurrent_ids
            )
        })?;
        tested += 1;
        if !reference.recurrent.is_empty() {
            with_recurrence += 1;
        }
        let mut state = ControllerState::default();
        let mut prev = vec![0.0; t.neurons.len()];
        for _ in 0..6 {
            let inputs: BTreeMap<String, f64> = t
                .neurons
                .iter()
                .filter(|n| n.enabled && n.layer == Layer::Input)
                .map(|n| (n.id.clone(), rng.random_range(-1.0..1.0)))
                .collect();
            let (outputs, next) = t.eval_net(&state, &inputs).map_err(|e| e.to_string())?;
            let want = reference.step(&t, &prev, &inputs);
            for (i, nr) in t.neurons.iter().enumerate() {
                if !nr.enabled || nr.layer == Layer::Input {
                    ensure(!next.activation.contains_key(&nr.id), || {
                        format!("{} should not be computed", nr.id)
                    })?;
                    continue;
                }
                let got = next.activation[&nr.id];
                let err = (got - want[i]).abs();
                worst = worst.max(err);
                ensure(err <= 1e-12, || {
                    format!("{}: {got} vs reference {}", nr.id, want[i])
                })?;
                if nr.layer == Layer::Output {
                    ensure(outputs.get(&nr.id) == Some(&got), || {
                        format!("output {} missing", nr.id)
                    })?;
                }
                compared += 1;
            }
            state = next;
            prev = want;
        }
    }
    ensure(
        (sigmoid(0.3) - 1.0 / (1.0 + (-0.3f64).exp())).abs() < 1e-15,
        || "sigmoid".into(),
    )?;
    Ok(format!(
        "{tested} topologies ({with_recurrence} with recurrent edges), {compared} activations, max error {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Structural oracle

fn restrict(full: &AgentSpec, devices: &[DeviceSpec], mask: u64) -> AgentSpec {
    let enabled: BTreeMap<String, bool> = devices
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.clone(), mask >> i & 1 == 1))
        .collect();
    let keep = |neuron: &str| {
        let device = neuron.split_once(':').map_or(neuron, |(_, d)| d);
        enabled.get(device).copied().unwrap_or(true)
    };
    let neurons: Vec<Neuron> = full
        .controller
        .neurons
        .iter()
        .filter(|n| keep(&n.id))
        .cloned()
        .collect();
    let connections = full
        .controller
        .connections
        .iter()
        .filter(|c| keep(&c.from) && keep(&c.to))
        .cloned()
        .collect();
    AgentSpec {
        agent_id: full.agent_id.clone(),
        body: BodyConfig {
            devices: devices.to_vec(),
            enabled,
        },
        controller: ControllerTopology {
            neurons,
            connections,
        },
    }
}

fn structural_oracle() -> Outcome {
    let mut tied = 0;
    let summaries: Vec<Result<bool, String>> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let mut p = StreetLightParams::new(4);
            p.episode_ticks = 80;
            p.devices = [
                LIGHTING_SENSOR,
                MOTION_SENSOR,
                WIRELESS_SPEAKER,
                LIGHT_SWITCH,
            ]
            .map(String::from)
            .to_vec();
            let s = build_streetlight_scenario(p, seed).map_err(|e| e.to_string())?;
            let devices = s.devices().to_vec();
            let config = SearchConfig {
                policy: DecisionPolicy {
                    patience: 0,
                    budget: 2,
                    structural: StructuralPolicy::Exhaustive,
                    ..DecisionPolicy::default()
                },
                ..SearchConfig::new(seed)
            };
            let out =
                run_search(&s, &config, &mut Tracer::disabled()).map_err(|e| e.to_string())?;
            let full = &out.generations[0].parent;
            let scores: Vec<f64> = (0..16)
                .map(|mask| {
                    let spec = restrict(full, &devices, mask);
                    if spec.body.check_behavior_ready().is_err() {
                        return Ok(f64::INFINITY);
                    }
                    s.evaluate(&spec, 0, &mut Tracer::disabled())
                        .map(|r| r.score)
                        .map_err(|e| e.to_string())
                })
                .collect::<Result<_, String>>()?;
            let candidates = &out.generations[1].candidates;
            ensure(candidates.len() == 16, || {
                format!("seed {seed}: {} candidates", candidates.len())
            })?;
            for (mask, c) in candidates.iter().enumerate() {
                ensure(c.record.score == scores[mask], || {
                    format!(
                        "seed {seed} mask {mask:04b}: candidate {} vs oracle {}",
                        c.record.score, scores[mask]
                    )
                })?;
            }
            let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let argmin: Vec<u64> = (0..16).filter(|&m| scores[m as usize] == min).collect();
            let best_mask = devices
                .iter()
                .enumerate()
                .filter(|(_, d)| out.best.body.is_enabled(&d.id))
                .map(|(i, _)| 1u64 << i)
                .sum::<u64>();
            ensure(out.best_record.score == min, || {
                format!(
                    "seed {seed}: search best {} vs brute-force min {min}",
                    out.best_record.score
                )
            })?;
            ensure(argmin.contains(&best_mask), || {
                format!("seed {seed}: mask {best_mask:04b} not in argmin {argmin:?}")
            })?;
            Ok(argmin.len() > 1)
        })
        .collect();
    for r in summaries {
        tied += r? as usize;
    }
    Ok(format!("10 seeds, search best equals the 16-subset brute-force minimum ({tied} seeds with tied argmin)"))
}

// ---------------------------------------------------------------------------
// Training sanity

fn training_params() -> StreetLightParams {
    let mut p = StreetLightParams::new(10);
    p.episode_ticks = 200;
    p.search.lambda = 4;
    // The initial evaluation plus 30 candidate generations.
    p.search.generations = 31;
    p
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn train(seed: u64) -> Result<(Vec<f64>, f64), String> {
    let s = build_streetlight_scenario(training_params(), seed).map_err(|e| e.to_string())?;
    let out = run_search(&s, &s.params.search_config(seed), &mut Tracer::disabled())
        .map_err(|e| e.to_string())?;
    let baselines = (0..20u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(1_000_000 + k);
            let spec =
                initial_spec(&s, &mut rng, &mut Tracer::disabled()).map_err(|e| e.to_string())?;
            s.evaluate(&spec, 0, &mut Tracer::disabled())
                .map(|r| r.score)
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<f64>, String>>()?;
    Ok((
        out.history.iter().map(|r| r.score).collect(),
        median(baselines),
    ))
}

fn training_sanity() -> Outcome {
    let start = Instant::now();
    let single = build_streetlight_scenario(training_params(), 0).map_err(|e| e.to_string())?;
    run_search(
        &single,
        &single.params.search_config(0),
        &mut Tracer::disabled(),
    )
    .map_err(|e| e.to_string())?;
    let single_run = start.elapsed();
    ensure(single_run < Duration::from_secs(60), || {
        format!("single run took {single_run:?}")
    })?;

    let runs: Vec<Result<(Vec<f64>, f64), String>> =
        (0..20u64).into_par_iter().map(train).collect();
    let mut beat = 0;
    for (seed, r) in runs.into_iter().enumerate() {
        let (history, median) = r?;
        ensure(history.windows(2).all(|w| w[1] <= w[0]), || {
            format!("seed {seed}: best-so-far increased")
        })?;
        if *history.last().unwrap() < median {
            beat += 1;
        }
    }
    ensure(beat >= 18, || {
        format!("only {beat}/20 seeds beat the random-controller median")
    })?;
    Ok(format!(
        "single run {:.2}s, best-so-far non-increasing, {beat}/20 seeds beat the random-controller median",
        single_run.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// Determinism

fn scenario_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/streetlight.json")
}

fn cli_run_into(dir: &Path, jobs: usize) -> Result<(), String> {
    let args: Vec<String> = [
        "embodied-sim",
        "run",
        "--scenario",
        scenario_file().to_str().unwrap(),
        "--seed",
        "7",
        "--trace",
        "--jobs",
        &jobs.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]
    .map(String::from)
    .to_vec();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = embodied_sim::cli_run_with(args, &mut out, &mut err);
    ensure(code == 0, || {
        format!("exit {code}: {}", String::from_utf8_lossy(&err))
    })
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dirs = ["a", "b", "c"].map(|d| tmp.path().join(d));
    cli_run_into(&dirs[0], 1)?;
    cli_run_into(&dirs[1], 1)?;
    cli_run_into(&dirs[2], 4)?;
    let files = [
        "metrics.csv",
        "best_agent.json",
        "trace.log",
        "run_manifest.json",
    ];
    for f in files {
        let read = |d: &PathBuf| std::fs::read(d.join(f)).map_err(|e| format!("{f}: {e}"));
        let base = read(&dirs[0])?;
        ensure(!base.is_empty(), || format!("{f} is empty"))?;
        ensure(read(&dirs[1])? == base, || {
            format!("{f} differs between identical runs")
        })?;
        ensure(read(&dirs[2])? == base, || {
            format!("{f} differs between --jobs 4 and --jobs 1")
        })?;
    }
    Ok(format!(
        "{} output files byte-identical across reruns and --jobs 1/4",
        files.len()
    ))
}

// ---------------------------------------------------------------------------
// Score linearity

fn score_linearity() -> Outcome {
    let mut checked = 0;
    for seed in 0..3u64 {
        let mut p = StreetLightParams::new(5);
        p.episode_ticks = 120;
        let s = build_streetlight_scenario(p, seed).map_err(|e| e.to_string())?;
        let traces = (0..16u64)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 * seed + k);
                let spec = initial_spec(&s, &mut rng, &mut Tracer::disabled())
                    .map_err(|e| e.to_string())?;
                s.run_episode(&spec, &mut Tracer::disabled())
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, String>>()?;
        let score_all = |rules: &[ScoreRule]| -> Result<Vec<f64>, String> {
            traces
                .iter()
                .map(|t| {
                    evaluate_episode(t, rules, 0, String::new())
                        .map(|r| r.score)
                        .map_err(|e| e.to_string())
                })
                .collect()
        };
        let argmin = |v: &[f64]| -> BTreeSet<usize> {
            let m = v.iter().cloned().fold(f64::INFINITY, f64::min);
            (0..v.len()).filter(|&i| v[i] == m).collect()
        };
        let base = score_all(s.rules())?;
        for c in [1e-3, 0.37, 2.0, 7.5, 1e3] {
            let rules: Vec<ScoreRule> = s.rules().iter().map(|r| r.scaled(c)).collect();
            let scaled = score_all(&rules)?;
            for (a, b) in base.iter().zip(&scaled) {
                let want = c * a;
                ensure((b - want).abs() <= 1e-12 * want.abs(), || {
                    format!("c={c}: {b} vs {want}")
                })?;
                checked += 1;
            }
            ensure(argmin(&base) == argmin(&scaled), || {
                format!("c={c}: argmin changed")
            })?;
        }
    }
    Ok(format!(
        "{checked} scaled scores within 1e-12 relative, argmin unchanged for 5 factors"
    ))
}
