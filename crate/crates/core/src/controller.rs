//! Neural-network controller: neurons, weighted (possibly recurrent)
//! connections, synchronous evaluation and connection-level mutation.
//!
//! Evaluation is one synchronous step. Connections are split into forward
//! and recurrent edges by scanning them in declaration order: an edge is
//! recurrent when it would close a cycle among the forward edges accepted so
//! far (self-loops always do). Forward edges read this tick's upstream
//! activation in topological order; recurrent edges read the previous tick's
//! activation from [`ControllerState`]. Edges into input neurons are inert,
//! since input activations are clamped to the percept.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("input `{neuron}` is not finite ({value})")]
    NonFiniteInput { neuron: String, value: f64 },
    #[error("no value supplied for input neuron `{0}`")]
    MissingInput(String),
    #[error("`{0}` is not an enabled input neuron")]
    UnknownInput(String),
    #[error("invalid mutation policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Input,
    Hidden,
    Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neuron {
    pub id: String,
    pub layer: Layer,
    pub enabled: bool,
    #[serde(default)]
    pub bias: f64,
}

impl Neuron {
    pub fn new(id: impl Into<String>, layer: Layer) -> Self {
        Neuron {
            id: id.into(),
            layer,
            enabled: true,
            bias: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub id: u64,
    pub from: String,
    pub to: String,
    pub weight: f64,
    pub enabled: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerTopology {
    pub neurons: Vec<Neuron>,
    pub connections: Vec<Connection>,
}

/// Previous-tick activations of non-input neurons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub activation: BTreeMap<String, f64>,
}

/// Parameters of the connection-level ("adjust") mutation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationPolicy {
    pub weight_sigma: f64,
    pub toggle_prob: f64,
    pub add_prob: f64,
}

impl Default for MutationPolicy {
    fn default() -> Self {
        MutationPolicy {
            weight_sigma: 0.3,
            toggle_prob: 0.05,
            add_prob: 0.1,
        }
    }
}

impl MutationPolicy {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.weight_sigma > 0.0 && self.weight_sigma.is_finite()) {
            return Err(ControllerError::InvalidPolicy(format!(
                "weight_sigma must be > 0, got {}",
                self.weight_sigma
            )));
        }
        for (name, p) in [
            ("toggle_prob", self.toggle_prob),
            ("add_prob", self.add_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ControllerError::InvalidPolicy(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn input_neuron_id(device: &str) -> String {
    format!("in:{device}")
}

pub fn output_neuron_id(device: &str) -> String {
    format!("out:{device}")
}

impl ControllerTopology {
    pub fn neuron(&self, id: &str) -> Option<&Neuron> {
        self.neurons.iter().find(|n| n.id == id)
    }

    pub fn neurons_in(&self, layer: Layer) -> impl Iterator<Item = &Neuron> {
        self.neurons.iter().filter(move |n| n.layer == layer)
    }

    pub fn count(&self, layer: Layer) -> usize {
        self.neurons_in(layer).filter(|n| n.enabled).count()
    }

    fn next_connection_id(&self) -> u64 {
        self.connections.iter().map(|c| c.id + 1).max().unwrap_or(0)
    }

    /// A connection only carries signal when it and both endpoints are enabled.
    pub fn is_effective(&self, c: &Connection) -> bool {
        let enabled = |id: &str| self.neuron(id).is_some_and(|n| n.enabled);
        c.enabled && enabled(&c.from) && enabled(&c.to)
    }

    /// Input and output neurons for the given device ids, fully connected
    /// input→output with weights drawn from N(0, 1).
    pub fn full_bipartite<R: Rng + ?Sized>(
        inputs: &[String],
        outputs: &[String],
        rng: &mut R,
    ) -> Self {
        Self::derive(inputs, outputs, None, rng)
    }

    /// Rebuilds the topology for a new set of input/output devices.
    ///
    /// Neurons are created for exactly the listed devices (hidden neurons of
    /// `prior` are kept). Connections of `prior` whose endpoints both survive
    /// keep their id, weight and flag. Every input→output pair that touches a
    /// newly created neuron gets a fresh connection with an N(0, 1) weight.
    pub fn derive<R: Rng + ?Sized>(
        inputs: &[String],
        outputs: &[String],
        prior: Option<&ControllerTopology>,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let carried = |id: &str, layer: Layer| {
            prior
                .and_then(|p| p.neuron(id))
                .filter(|n| n.layer == layer)
                .cloned()
        };
        let mut neurons = Vec::with_capacity(inputs.len() + outputs.len());
        let mut fresh = BTreeSet::new();
        for (devices, layer, name) in [
            (inputs, Layer::Input, input_neuron_id as fn(&str) -> String),
            (outputs, Layer::Output, output_neuron_id),
        ] {
            for d in devices {
                let id = name(d);
                match carried(&id, layer) {
                    Some(n) => neurons.push(Neuron { enabled: true, ..n }),
                    None => {
                        fresh.insert(id.clone());
                        neurons.push(Neuron::new(id, layer));
                    }
                }
            }
        }
        if let Some(p) = prior {
            neurons.extend(p.neurons_in(Layer::Hidden).cloned());
        }

        let alive: BTreeSet<&str> = neurons.iter().map(|n| n.id.as_str()).collect();
        let mut connections: Vec<Connection> = prior
            .map(|p| {
                p.connections
                    .iter()
                    .filter(|c| alive.contains(c.from.as_str()) && alive.contains(c.to.as_str()))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        let mut next_id = prior.map_or(0, |p| p.next_connection_id());
        for i in inputs {
            for o in outputs {
                let (from, to) = (input_neuron_id(i), output_neuron_id(o));
                if fresh.contains(&from) || fresh.contains(&to) {
                    connections.push(Connection {
                        id: next_id,
                        from,
                        to,
                        weight: normal.sample(rng),
                        enabled: true,
                    });
                    next_id += 1;
                }
            }
        }
        ControllerTopology {
            neurons,
            connections,
        }
    }

    /// One synchronous evaluation step. See the module docs for edge timing.
    pub fn eval_net(
        &self,
        state: &ControllerState,
        inputs: &BTreeMap<String, f64>,
    ) -> Result<(BTreeMap<String, f64>, ControllerState), ControllerError> {
        let net = CompiledNet::new(self);
        let mut input_values = Vec::with_capacity(net.inputs.len());
        for &i in &net.inputs {
            let id = &self.neurons[i].id;
            let v = *inputs
                .get(id)
                .ok_or_else(|| ControllerError::MissingInput(id.clone()))?;
            input_values.push(v);
        }
        if let Some(extra) = inputs
            .keys()
            .find(|k| !net.inputs.iter().any(|&i| &self.neurons[i].id == *k))
        {
            return Err(ControllerError::UnknownInput(extra.clone()));
        }
        let prev: Vec<f64> = self
            .neurons
            .iter()
            .map(|n| state.activation.get(&n.id).copied().unwrap_or(0.0))
            .collect();
        let act = net.eval(&prev, &input_values, self)?;
        let mut outputs = BTreeMap::new();
        let mut next = ControllerState::default();
        for &i in &net.order {
            next.activation.insert(self.neurons[i].id.clone(), act[i]);
            if self.neurons[i].layer == Layer::Output {
                outputs.insert(self.neurons[i].id.clone(), act[i]);
            }
        }
        Ok((outputs, next))
    }

    /// Ids of effective connections classified as recurrent.
    pub fn recurrent_connections(&self) -> Vec<u64> {
        let net = CompiledNet::new(self);
        net.recurrent_ids
    }

    /// Perturbs weights, toggles connections and possibly adds one new
    /// connection. Neurons are never touched.
    pub fn mutate_connections<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        policy: &MutationPolicy,
    ) -> Result<ControllerTopology, ControllerError> {
        policy.validate()?;
        let noise = Normal::new(0.0, policy.weight_sigma)
            .map_err(|e| ControllerError::InvalidPolicy(e.to_string()))?;
        let mut out = self.clone();
        for c in &mut out.connections {
            c.weight += noise.sample(rng);
            if rng.random::<f64>() < policy.toggle_prob {
                c.enabled = !c.enabled;
            }
        }
        if rng.random::<f64>() < policy.add_prob {
            let existing: BTreeSet<(&str, &str)> = self
                .connections
                .iter()
                .map(|c| (c.from.as_str(), c.to.as_str()))
                .collect();
            let enabled: Vec<&Neuron> = self.neurons.iter().filter(|n| n.enabled).collect();
            let mut candidates = Vec::new();
            for from in &enabled {
                for to in enabled.iter().filter(|n| n.layer != Layer::Input) {
                    if !existing.contains(&(from.id.as_str(), to.id.as_str())) {
                        candidates.push((from.id.clone(), to.id.clone()));
                    }
                }
            }
            if !candidates.is_empty() {
                let (from, to) = candidates.swap_remove(rng.random_range(0..candidates.len()));
                out.connections.push(Connection {
                    id: self.next_connection_id(),
                    from,
                    to,
                    weight: noise.sample(rng),
                    enabled: true,
                });
            }
        }
        Ok(out)
    }
}

/// Index-based evaluation plan for a topology.
#[derive(Clone, Debug)]
pub struct CompiledNet {
    /// Enabled input neurons, in declaration order.
    inputs: Vec<usize>,
    /// Enabled non-input neurons in forward topological order.
    order: Vec<usize>,
    /// Per neuron: (source, weight) of incoming forward edges.
    forward_in: Vec<Vec<(usize, f64)>>,
    /// Per neuron: (source, weight) of incoming recurrent edges.
    recurrent_in: Vec<Vec<(usize, f64)>>,
    recurrent_ids: Vec<u64>,
}

impl CompiledNet {
    pub fn new(topology: &ControllerTopology) -> Self {
        let n = topology.neurons.len();
        let index: BTreeMap<&str, usize> = topology
            .neurons
            .iter()
            .enumerate()
            .map(|(i, nr)| (nr.id.as_str(), i))
            .collect();
        let mut forward_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut forward_in = vec![Vec::new(); n];
        let mut recurrent_in = vec![Vec::new(); n];
        let mut recurrent_ids = Vec::new();
        for c in &topology.connections {
            let (Some(&from), Some(&to)) = (index.get(c.from.as_str()), index.get(c.to.as_str()))
            else {
                continue;
            };
            if !(c.enabled && topology.neurons[from].enabled && topology.neurons[to].enabled) {
                continue;
            }
            if topology.neurons[to].layer == Layer::Input {
                continue;
            }
            if from == to || reaches(&forward_adj, to, from) {
                recurrent_in[to].push((from, c.weight));
                recurrent_ids.push(c.id);
            } else {
                forward_adj[from].push(to);
                forward_in[to].push((from, c.weight));
            }
        }

        let inputs: Vec<usize> = (0..n)
            .filter(|&i| topology.neurons[i].enabled && topology.neurons[i].layer == Layer::Input)
            .collect();
        let computed: Vec<bool> = (0..n)
            .map(|i| topology.neurons[i].enabled && topology.neurons[i].layer != Layer::Input)
            .collect();
        let mut indegree = vec![0usize; n];
        for (to, ins) in forward_in.iter().enumerate() {
            indegree[to] = ins.iter().filter(|(from, _)| computed[*from]).count();
        }
        let mut ready: BinaryHeap<Reverse<usize>> = (0..n)
            .filter(|&i| computed[i] && indegree[i] == 0)
            .map(Reverse)
            .collect();
        let mut order = Vec::new();
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &j in &forward_adj[i] {
                if computed[j] {
                    indegree[j] -= 1;
                    if indegree[j] == 0 {
                        ready.push(Reverse(j));
                    }
                }
            }
        }
        debug_assert_eq!(order.len(), computed.iter().filter(|&&c| c).count());
        CompiledNet {
            inputs,
            order,
            forward_in,
            recurrent_in,
            recurrent_ids,
        }
    }

    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    /// Evaluates one tick. `prev` holds last tick's activation per neuron
    /// index; `inputs` follows the order of enabled input neurons.
    pub fn eval(
        &self,
        prev: &[f64],
        inputs: &[f64],
        topology: &ControllerTopology,
    ) -> Result<Vec<f64>, ControllerError> {
        let mut act = vec![0.0; prev.len()];
        for (&i, &v) in self.inputs.iter().zip(inputs) {
            if !v.is_finite() {
                return Err(ControllerError::NonFiniteInput {
                    neuron: topology.neurons[i].id.clone(),
                    value: v,
                });
            }
            act[i] = v;
        }
        for &i in &self.order {
            let mut sum = topology.neurons[i].bias;
            for &(from, w) in &self.forward_in[i] {
                sum += w * act[from];
            }
            for &(from, w) in &self.recurrent_in[i] {
                sum += w * prev[from];
            }
            act[i] = sigmoid(sum);
        }
        Ok(act)
    }

    /// Neuron indices evaluated each tick, in evaluation order.
    pub fn computed(&self) -> &[usize] {
        &self.order
    }
}

fn reaches(adj: &[Vec<usize>], start: usize, goal: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        if v == goal {
            return true;
        }
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        stack.extend(adj[v].iter().copied());
    }
    false
}
