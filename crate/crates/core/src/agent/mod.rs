//! Embodied agents: device inventory, body configuration, controller
//! derivation and the perception → decision → effector loop.

mod behavior;
mod body;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    input_neuron_id, output_neuron_id, ControllerError, ControllerTopology, Layer,
};
use crate::statechart::ChartError;

pub use behavior::{behavior_chart, AgentRuntime, BehaviorPlan};
pub use body::{body_chart, configure_body};

/// Channel name reserved for agent-to-agent messaging.
pub const COMM_CHANNEL: &str = "comm";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("invalid device `{id}`: {reason}")]
    InvalidDevice { id: String, reason: String },
    #[error("behavior not configured: {0}")]
    BehaviorNotConfigured(String),
    #[error("percept does not match enabled inputs: {0}")]
    PerceptMismatch(String),
    #[error("controller does not match body: {0}")]
    InconsistentController(String),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub direction: Direction,
    /// Environment variable sensed or perturbed, or [`COMM_CHANNEL`].
    pub channel: String,
    /// Discrete actuation levels, lowest first. Empty means continuous.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub output_levels: Vec<String>,
}

impl DeviceSpec {
    pub fn input(id: impl Into<String>, channel: impl Into<String>) -> Self {
        DeviceSpec {
            id: id.into(),
            direction: Direction::Input,
            channel: channel.into(),
            output_levels: Vec::new(),
        }
    }

    pub fn output(id: impl Into<String>, channel: impl Into<String>) -> Self {
        DeviceSpec {
            direction: Direction::Output,
            ..DeviceSpec::input(id, channel)
        }
    }

    pub fn with_levels<I, S>(mut self, levels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.output_levels = levels.into_iter().map(Into::into).collect();
        self
    }

    pub fn is_comm(&self) -> bool {
        self.channel == COMM_CHANNEL
    }
}

pub(crate) fn validate_devices(devices: &[DeviceSpec]) -> Result<(), AgentError> {
    let mut seen = BTreeSet::new();
    for d in devices {
        let invalid = |reason: &str| AgentError::InvalidDevice {
            id: d.id.clone(),
            reason: reason.to_string(),
        };
        if d.id.is_empty() || d.id.contains(['.', ':']) {
            return Err(invalid(
                "device ids must be non-empty and free of `.` and `:`",
            ));
        }
        if !seen.insert(d.id.as_str()) {
            return Err(invalid("duplicate device id"));
        }
        if d.channel.is_empty() {
            return Err(invalid("empty channel"));
        }
        if d.direction == Direction::Input && !d.output_levels.is_empty() {
            return Err(invalid("input devices cannot have output levels"));
        }
        if d.output_levels.len() == 1 {
            return Err(invalid("a discrete output needs at least two levels"));
        }
        let labels: BTreeSet<&str> = d.output_levels.iter().map(String::as_str).collect();
        if labels.len() != d.output_levels.len()
            || labels.iter().any(|l| l.is_empty() || l.contains('.'))
        {
            return Err(invalid(
                "level labels must be unique, non-empty and free of `.`",
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyConfig {
    pub devices: Vec<DeviceSpec>,
    pub enabled: BTreeMap<String, bool>,
}

impl BodyConfig {
    pub fn is_enabled(&self, device: &str) -> bool {
        self.enabled.get(device).copied().unwrap_or(false)
    }

    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.id == id)
    }

    fn enabled_in(&self, direction: Direction) -> impl Iterator<Item = &DeviceSpec> {
        self.devices
            .iter()
            .filter(move |d| d.direction == direction && self.is_enabled(&d.id))
    }

    /// Enabled input devices, in declaration order.
    pub fn enabled_inputs(&self) -> Vec<&DeviceSpec> {
        self.enabled_in(Direction::Input).collect()
    }

    /// Enabled output devices, in declaration order.
    pub fn enabled_outputs(&self) -> Vec<&DeviceSpec> {
        self.enabled_in(Direction::Output).collect()
    }

    pub fn input_ids(&self) -> Vec<String> {
        self.enabled_in(Direction::Input)
            .map(|d| d.id.clone())
            .collect()
    }

    pub fn output_ids(&self) -> Vec<String> {
        self.enabled_in(Direction::Output)
            .map(|d| d.id.clone())
            .collect()
    }

    /// Behavior can only start with at least one input and one output.
    pub fn check_behavior_ready(&self) -> Result<(), AgentError> {
        if self.enabled_in(Direction::Input).next().is_none() {
            return Err(AgentError::BehaviorNotConfigured("no enabled input".into()));
        }
        if self.enabled_in(Direction::Output).next().is_none() {
            return Err(AgentError::BehaviorNotConfigured(
                "no enabled output".into(),
            ));
        }
        Ok(())
    }

    /// Returns a copy with `device`'s enabled bit flipped.
    pub fn flipped(&self, device: &str) -> Result<BodyConfig, AgentError> {
        if self.device(device).is_none() {
            return Err(AgentError::UnknownDevice(device.to_string()));
        }
        let mut out = self.clone();
        let bit = out.enabled.entry(device.to_string()).or_insert(false);
        *bit = !*bit;
        Ok(out)
    }
}

/// Neurons mirror the body: one input neuron per enabled input device and
/// one output neuron per enabled output device. Surviving connections of
/// `prior` keep their weights; new ones are drawn from N(0, 1).
pub fn derive_controller<R: Rng + ?Sized>(
    body: &BodyConfig,
    prior: Option<&ControllerTopology>,
    rng: &mut R,
) -> ControllerTopology {
    ControllerTopology::derive(&body.input_ids(), &body.output_ids(), prior, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    pub body: BodyConfig,
    pub controller: ControllerTopology,
}

impl AgentSpec {
    /// Checks that the enabled input/output neurons are exactly the neurons
    /// of the enabled input/output devices.
    pub fn check_consistency(&self) -> Result<(), AgentError> {
        for (layer, expected) in [
            (
                Layer::Input,
                self.body
                    .input_ids()
                    .iter()
                    .map(|d| input_neuron_id(d))
                    .collect::<BTreeSet<_>>(),
            ),
            (
                Layer::Output,
                self.body
                    .output_ids()
                    .iter()
                    .map(|d| output_neuron_id(d))
                    .collect(),
            ),
        ] {
            let actual: BTreeSet<String> = self
                .controller
                .neurons_in(layer)
                .filter(|n| n.enabled)
                .map(|n| n.id.clone())
                .collect();
            if actual != expected {
                return Err(AgentError::InconsistentController(format!(
                    "{layer:?} neurons {actual:?} but body enables {expected:?}"
                )));
            }
        }
        Ok(())
    }
}

/// One value per enabled input device.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Percept(pub BTreeMap<String, f64>);

impl Percept {
    pub fn get(&self, device: &str) -> Option<f64> {
        self.0.get(device).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actuation {
    Level { index: usize, label: String },
    Continuous(f64),
}

impl Actuation {
    /// Numeric value routed to the environment: the level index for
    /// discrete devices, the raw value otherwise.
    pub fn value(&self) -> f64 {
        match self {
            Actuation::Level { index, .. } => *index as f64,
            Actuation::Continuous(v) => *v,
        }
    }
}

/// One actuation per enabled output device.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionSet(pub BTreeMap<String, Actuation>);

impl ActionSet {
    pub fn get(&self, device: &str) -> Option<&Actuation> {
        self.0.get(device)
    }
}

/// Lower bound of level `i` out of `levels` equal-width bins over [0, 1].
pub fn level_threshold(i: usize, levels: usize) -> f64 {
    i as f64 / levels as f64
}

/// Equal-width quantizer of a [0, 1] value onto `levels` bins. Values below
/// 0 map to the lowest level and values at or above 1 to the highest.
pub fn quantize(value: f64, levels: usize) -> usize {
    (1..levels)
        .filter(|&i| value >= level_threshold(i, levels))
        .count()
}
