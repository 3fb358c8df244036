//! The per-tick behavior loop: perception, decision, effector.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{level_threshold, ActionSet, Actuation, AgentError, AgentSpec, DeviceSpec, Percept};
use crate::controller::{
    output_neuron_id, CompiledNet, ControllerState, ControllerTopology, Layer,
};
use crate::statechart::{
    Action, Cmp, Condition, Configuration, Event, StateNode, Statechart, Tracer, Transition, Value,
};

pub(crate) const PERTURB: &str = "perturb";
pub(crate) const CONTROLLER_SET: &str = "controller_set";
pub(crate) const DECIDED: &str = "decided";
const SET: &str = "set";
const ACTUATE: &str = "actuate";
const ACT: &str = "act";

fn level_guard(output: &str, j: usize, levels: usize) -> Condition {
    let mut parts = vec![Condition::HasPayload(output.to_string())];
    if j > 0 {
        parts.push(Condition::payload(
            output,
            Cmp::Ge,
            level_threshold(j, levels),
        ));
    }
    if j + 1 < levels {
        parts.push(Condition::payload(
            output,
            Cmp::Lt,
            level_threshold(j + 1, levels),
        ));
    }
    Condition::All(parts)
}

/// Builds the behavior chart for the given enabled inputs and outputs.
///
/// `perception` runs one region per sensor, an `inputs` region and a
/// `controller` region. Once inputs are processed and the controller is
/// ready, a join enters `running_neural_network`. The `decided` event
/// carries the network outputs into `effector`, where each output region
/// settles on a level (or a continuous value) and emits `act`. A final join
/// over all effector regions returns to `perception`.
pub fn behavior_chart(
    inputs: &[&DeviceSpec],
    outputs: &[&DeviceSpec],
) -> Result<Statechart, AgentError> {
    if inputs.is_empty() {
        return Err(AgentError::BehaviorNotConfigured("no enabled input".into()));
    }
    if outputs.is_empty() {
        return Err(AgentError::BehaviorNotConfigured(
            "no enabled output".into(),
        ));
    }
    let mut nodes = Vec::new();
    let mut ts = Vec::new();

    let mut perception = Vec::new();
    for d in inputs {
        let (region, waiting, sensed) = (
            format!("sense:{}", d.id),
            format!("sense:{}.waiting", d.id),
            format!("sense:{}.sensed", d.id),
        );
        nodes.push(StateNode::basic(&waiting));
        nodes.push(StateNode::basic(&sensed));
        nodes.push(StateNode::xor(
            &region,
            [waiting.clone(), sensed.clone()],
            waiting.clone(),
        ));
        ts.push(
            Transition::new(waiting.as_str(), sensed.as_str())
                .named(region.clone())
                .on(PERTURB)
                .when(Condition::HasPayload(d.id.clone()))
                .then(Action::raise(SET)),
        );
        perception.push(region);
    }
    nodes.push(StateNode::basic("collecting"));
    nodes.push(StateNode::basic("processing_inputs"));
    nodes.push(StateNode::xor(
        "inputs",
        ["collecting", "processing_inputs"],
        "collecting",
    ));
    ts.push(
        Transition::new("collecting", "processing_inputs")
            .named("inputs_set")
            .on(SET),
    );
    nodes.push(StateNode::basic("configuring_controller"));
    nodes.push(StateNode::basic("controller_ready"));
    nodes.push(
        StateNode::xor(
            "controller",
            ["configuring_controller", "controller_ready"],
            "configuring_controller",
        )
        .with_default_history(),
    );
    ts.push(
        Transition::new("configuring_controller", "controller_ready")
            .named(CONTROLLER_SET)
            .on(CONTROLLER_SET),
    );
    perception.push("inputs".into());
    perception.push("controller".into());
    nodes.push(StateNode::and("perception", perception));

    nodes.push(StateNode::basic("running_neural_network"));
    nodes.push(StateNode::xor(
        "decision",
        ["running_neural_network"],
        "running_neural_network",
    ));
    ts.push(
        Transition::join(
            ["processing_inputs", "controller_ready"],
            "running_neural_network",
        )
        .named("inputs_ready"),
    );
    ts.push(
        Transition::new("running_neural_network", "effector")
            .named(DECIDED)
            .on(DECIDED)
            .then(Action::Raise {
                event: ACTUATE.into(),
                payload: outputs
                    .iter()
                    .map(|d| (d.id.clone(), Value::Payload(d.id.clone())))
                    .collect(),
            }),
    );

    let mut regions = Vec::new();
    let mut done_states = Vec::new();
    for d in outputs {
        let (region, pending, done) = (
            format!("act:{}", d.id),
            format!("act:{}.pending", d.id),
            format!("act:{}.done", d.id),
        );
        nodes.push(StateNode::basic(&pending));
        if d.output_levels.is_empty() {
            nodes.push(StateNode::basic(&done));
            ts.push(
                Transition::new(pending.as_str(), done.as_str())
                    .named(format!("{region}:value"))
                    .on(ACTUATE)
                    .when(Condition::HasPayload(d.id.clone()))
                    .then(Action::emit_payload(ACT, d.id.clone())),
            );
        } else {
            let k = d.output_levels.len();
            let mut levels = Vec::new();
            for (j, label) in d.output_levels.iter().enumerate() {
                let state = format!("act:{}.{label}", d.id);
                nodes.push(StateNode::basic(&state));
                ts.push(
                    Transition::new(pending.as_str(), state.as_str())
                        .named(format!("{region}:{label}"))
                        .on(ACTUATE)
                        .when(level_guard(&d.id, j, k))
                        .then(Action::Emit {
                            event: ACT.into(),
                            payload: vec![(d.id.clone(), Value::Const(j as f64))],
                        }),
                );
                levels.push(state);
            }
            let first = levels[0].clone();
            nodes.push(StateNode::xor(&done, levels, first));
        }
        nodes.push(StateNode::xor(
            &region,
            [pending.clone(), done.clone()],
            pending,
        ));
        regions.push(region);
        done_states.push(done);
    }
    if regions.len() >= 2 {
        nodes.push(StateNode::and("effector", regions));
    } else {
        let first = regions[0].clone();
        nodes.push(StateNode::xor("effector", regions, first));
    }
    ts.push(Transition::join(done_states, "perception").named("actuated"));

    nodes.push(StateNode::xor(
        "behavior",
        ["perception", "decision", "effector"],
        "perception",
    ));
    Ok(Statechart::build(nodes, ts)?)
}

/// Everything agents of one genotype share: the behavior chart, the
/// compiled network and device ↔ neuron wiring.
#[derive(Debug)]
pub struct BehaviorPlan {
    spec: AgentSpec,
    chart: Statechart,
    net: CompiledNet,
    /// Input device per network input slot.
    inputs: Vec<String>,
    /// (device, neuron index, levels) per enabled output.
    outputs: Vec<(String, usize, Vec<String>)>,
}

impl BehaviorPlan {
    pub fn new(spec: &AgentSpec) -> Result<Arc<BehaviorPlan>, AgentError> {
        spec.body.check_behavior_ready()?;
        spec.check_consistency()?;
        let ins = spec.body.enabled_inputs();
        let outs = spec.body.enabled_outputs();
        let chart = behavior_chart(&ins, &outs)?;
        let topo: &ControllerTopology = &spec.controller;
        let inputs = topo
            .neurons
            .iter()
            .filter(|n| n.enabled && n.layer == Layer::Input)
            .map(|n| n.id.trim_start_matches("in:").to_string())
            .collect();
        let outputs = outs
            .iter()
            .map(|d| {
                let id = output_neuron_id(&d.id);
                let idx = topo
                    .neurons
                    .iter()
                    .position(|n| n.id == id)
                    .expect("consistency checked");
                (d.id.clone(), idx, d.output_levels.clone())
            })
            .collect();
        Ok(Arc::new(BehaviorPlan {
            net: CompiledNet::new(topo),
            spec: spec.clone(),
            chart,
            inputs,
            outputs,
        }))
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn chart(&self) -> &Statechart {
        &self.chart
    }

    pub fn input_devices(&self) -> &[String] {
        &self.inputs
    }
}

/// Live state of one agent: behavior configuration and last activations.
#[derive(Clone, Debug)]
pub struct AgentRuntime {
    plan: Arc<BehaviorPlan>,
    agent_id: String,
    config: Configuration,
    activation: Vec<f64>,
}

impl AgentRuntime {
    /// Enters the behavior chart and marks the controller as set, leaving
    /// the agent waiting for its first percept.
    pub fn new(
        plan: Arc<BehaviorPlan>,
        agent_id: impl Into<String>,
        tracer: &mut Tracer,
    ) -> Result<Self, AgentError> {
        let agent_id = agent_id.into();
        tracer.set_agent(agent_id.clone());
        let (config, _) = plan.chart.initialize_traced(tracer);
        let (config, _) =
            plan.chart
                .dispatch_traced(&config, &Event::new(CONTROLLER_SET), tracer)?;
        let activation = vec![0.0; plan.spec.controller.neurons.len()];
        Ok(AgentRuntime {
            plan,
            agent_id,
            config,
            activation,
        })
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn plan(&self) -> &Arc<BehaviorPlan> {
        &self.plan
    }

    pub fn configuration(&self) -> &Configuration {
        &self.config
    }

    pub fn controller_state(&self) -> ControllerState {
        ControllerState {
            activation: self
                .plan
                .spec
                .controller
                .neurons
                .iter()
                .zip(&self.activation)
                .map(|(n, &a)| (n.id.clone(), a))
                .collect(),
        }
    }

    /// One perception → decision → effector pass. The percept must hold
    /// exactly one value per enabled input device.
    pub fn step(
        &mut self,
        percept: &Percept,
        tracer: &mut Tracer,
    ) -> Result<ActionSet, AgentError> {
        let plan = Arc::clone(&self.plan);
        if percept.len() != plan.inputs.len()
            || plan.inputs.iter().any(|d| percept.get(d).is_none())
        {
            return Err(AgentError::PerceptMismatch(format!(
                "got {:?}, expected {:?}",
                percept.0.keys().collect::<Vec<_>>(),
                plan.inputs
            )));
        }
        tracer.set_agent(self.agent_id.clone());
        let perturb = Event {
            id: PERTURB.into(),
            payload: percept.0.clone(),
        };
        let (cfg, _) = plan.chart.dispatch_traced(&self.config, &perturb, tracer)?;
        if !plan.chart.is_active(&cfg, "running_neural_network") {
            return Err(AgentError::BehaviorNotConfigured(
                "perception did not complete".into(),
            ));
        }
        let inputs: Vec<f64> = plan.inputs.iter().map(|d| percept.0[d]).collect();
        let act = plan
            .net
            .eval(&self.activation, &inputs, &plan.spec.controller)?;
        let mut decided = Event::new(DECIDED);
        for (dev, idx, _) in &plan.outputs {
            decided = decided.with(dev.clone(), act[*idx]);
        }
        let (cfg, emitted) = plan.chart.dispatch_traced(&cfg, &decided, tracer)?;
        if !plan.chart.is_active(&cfg, "perception") {
            return Err(AgentError::BehaviorNotConfigured(
                "effector did not settle".into(),
            ));
        }

        let mut values = BTreeMap::new();
        for ev in emitted.iter().filter(|e| e.id == ACT) {
            values.extend(ev.payload.iter().map(|(k, v)| (k.clone(), *v)));
        }
        let mut actions = ActionSet::default();
        for (dev, _, levels) in &plan.outputs {
            let v = *values.get(dev).ok_or_else(|| {
                AgentError::BehaviorNotConfigured(format!("no actuation for `{dev}`"))
            })?;
            let a = if levels.is_empty() {
                Actuation::Continuous(v)
            } else {
                let index = v as usize;
                Actuation::Level {
                    index,
                    label: levels[index].clone(),
                }
            };
            actions.0.insert(dev.clone(), a);
        }
        self.config = cfg;
        self.activation = act;
        Ok(actions)
    }
}
