//! Street lights on a line. Each light senses its local brightness and
//! people flow, talks to neighbors over a wireless link and drives a
//! three-level switch. The task trades energy against darkness where
//! people are.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentSpec, DeviceSpec, COMM_CHANNEL};
use crate::controller::MutationPolicy;
use crate::environment::{simulate, EnvError, EnvironmentDef, EpisodeTrace, UpdateInput};
use crate::evaluation::{DecisionPolicy, ScoreRule, StructuralPolicy};
use crate::search::{SearchConfig, Task};
use crate::statechart::{Cmp, Condition, Tracer};

pub const LIGHTING_SENSOR: &str = "lighting_sensor";
pub const MOTION_SENSOR: &str = "motion_sensor";
pub const WIRELESS_IN: &str = "wireless_in";
pub const WIRELESS_SPEAKER: &str = "wireless_speaker";
pub const LIGHT_SWITCH: &str = "light_switch";
pub const LEVELS: [&str; 3] = ["OFF", "DIM", "ON"];

/// The full device inventory of one light, in canonical order.
pub fn all_devices() -> Vec<DeviceSpec> {
    vec![
        DeviceSpec::input(LIGHTING_SENSOR, "brightness"),
        DeviceSpec::input(MOTION_SENSOR, "people_flow"),
        DeviceSpec::input(WIRELESS_IN, COMM_CHANNEL),
        DeviceSpec::output(WIRELESS_SPEAKER, COMM_CHANNEL),
        DeviceSpec::output(LIGHT_SWITCH, "light").with_levels(LEVELS),
    ]
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("`{field}` {reason}")]
    Range { field: String, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn range(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Range {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Ambient {
    /// Peaks at `max` at tick 0 and bottoms out at `min` half a period later.
    Cosine {
        /// Ticks per day. Defaults to half an episode.
        #[serde(default)]
        period: Option<u64>,
        #[serde(default)]
        min: f64,
        #[serde(default = "one")]
        max: f64,
    },
    Constant {
        value: f64,
    },
}

impl Default for Ambient {
    fn default() -> Self {
        Ambient::Cosine {
            period: None,
            min: 0.0,
            max: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelValues {
    pub off: f64,
    pub dim: f64,
    pub on: f64,
}

impl LevelValues {
    fn get(&self, level: usize) -> f64 {
        match level {
            0 => self.off,
            1 => self.dim,
            _ => self.on,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextWeights {
    pub day: f64,
    pub night: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParams {
    #[serde(default = "default_lambda")]
    pub lambda: usize,
    /// Number of generations, counting the initial evaluation.
    #[serde(default = "default_generations")]
    pub generations: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub mutation: MutationPolicy,
    #[serde(default)]
    pub structural: StructuralPolicy,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            lambda: default_lambda(),
            generations: default_generations(),
            patience: default_patience(),
            mutation: MutationPolicy::default(),
            structural: StructuralPolicy::default(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_lambda() -> usize {
    4
}
fn default_generations() -> usize {
    DecisionPolicy::default().budget
}
fn default_patience() -> usize {
    DecisionPolicy::default().patience
}
fn default_ticks() -> u64 {
    200
}
fn default_people_rate() -> f64 {
    0.2
}
fn default_people_decay() -> f64 {
    0.5
}
fn default_contribution() -> LevelValues {
    LevelValues {
        off: 0.0,
        dim: 0.3,
        on: 0.6,
    }
}
fn default_spillover() -> f64 {
    0.2
}
fn default_radius() -> usize {
    1
}
fn default_target() -> f64 {
    0.6
}
fn default_energy_weight() -> ContextWeights {
    ContextWeights {
        day: 2.0,
        night: 1.0,
    }
}
fn default_darkness_weight() -> ContextWeights {
    ContextWeights {
        day: 5.0,
        night: 5.0,
    }
}
fn default_daylight() -> f64 {
    0.5
}
fn default_devices() -> Vec<String> {
    all_devices().into_iter().map(|d| d.id).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreetLightParams {
    pub n_lights: usize,
    #[serde(default = "default_ticks")]
    pub episode_ticks: u64,
    #[serde(default)]
    pub ambient: Ambient,
    /// Per-tick arrival probability at each light.
    #[serde(default = "default_people_rate")]
    pub people_rate: f64,
    /// Fraction of last tick's flow that lingers.
    #[serde(default = "default_people_decay")]
    pub people_decay: f64,
    #[serde(default = "default_contribution")]
    pub light_contribution: LevelValues,
    /// Share of a neighbor's contribution reaching this light.
    #[serde(default = "default_spillover")]
    pub spillover: f64,
    #[serde(default = "default_radius")]
    pub neighbor_radius: usize,
    #[serde(default = "default_target")]
    pub target_brightness: f64,
    /// Energy per tick at ON; DIM draws half, OFF nothing.
    #[serde(default = "one")]
    pub energy_on: f64,
    #[serde(default = "default_energy_weight")]
    pub energy_weight: ContextWeights,
    #[serde(default = "default_darkness_weight")]
    pub darkness_weight: ContextWeights,
    /// Share of each day labelled `day`, centered on the ambient peak.
    #[serde(default = "default_daylight")]
    pub daylight_fraction: f64,
    /// Device subset carried by every light.
    #[serde(default = "default_devices")]
    pub devices: Vec<String>,
    /// Initial enabled bits; unlisted devices start enabled.
    #[serde(default)]
    pub initial_enabled: BTreeMap<String, bool>,
    #[serde(default)]
    pub search: SearchParams,
}

impl StreetLightParams {
    pub fn new(n_lights: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "n_lights": n_lights })).expect("defaults")
    }

    /// Fills defaults that depend on other fields.
    pub fn resolved(mut self) -> Self {
        if let Ambient::Cosine {
            period: p @ None, ..
        } = &mut self.ambient
        {
            *p = Some((self.episode_ticks / 2).max(1));
        }
        self
    }

    pub fn day_length(&self) -> u64 {
        match self.ambient {
            Ambient::Cosine {
                period: Some(p), ..
            } => p,
            _ => (self.episode_ticks / 2).max(1),
        }
    }

    pub fn ambient_at(&self, tick: u64) -> f64 {
        match self.ambient {
            Ambient::Cosine { min, max, .. } => {
                let phase = (tick % self.day_length()) as f64 / self.day_length() as f64;
                min + (max - min) * 0.5 * (1.0 + (TAU * phase).cos())
            }
            Ambient::Constant { value } => value,
        }
    }

    pub fn time_of_day(&self, tick: u64) -> f64 {
        (tick % self.day_length()) as f64 / self.day_length() as f64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let unit = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(range(field, format!("must lie in [0, 1], got {v}")))
            }
        };
        let nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(range(field, format!("must be finite and >= 0, got {v}")))
            }
        };
        if self.n_lights == 0 {
            return Err(range("n_lights", "must be at least 1"));
        }
        if self.episode_ticks == 0 {
            return Err(range("episode_ticks", "must be at least 1"));
        }
        match self.ambient {
            Ambient::Cosine { period, min, max } => {
                if period == Some(0) {
                    return Err(range("ambient.period", "must be at least 1"));
                }
                unit("ambient.min", min)?;
                unit("ambient.max", max)?;
                if min > max {
                    return Err(range("ambient.min", "must not exceed ambient.max"));
                }
            }
            Ambient::Constant { value } => unit("ambient.value", value)?,
        }
        unit("people_rate", self.people_rate)?;
        unit("people_decay", self.people_decay)?;
        let c = &self.light_contribution;
        if c.off != 0.0 {
            return Err(range("light_contribution.off", "must be 0"));
        }
        nonneg("light_contribution.dim", c.dim)?;
        nonneg("light_contribution.on", c.on)?;
        if c.dim > c.on {
            return Err(range(
                "light_contribution.dim",
                "must not exceed light_contribution.on",
            ));
        }
        nonneg("spillover", self.spillover)?;
        if self.neighbor_radius == 0 {
            return Err(range("neighbor_radius", "must be at least 1"));
        }
        unit("target_brightness", self.target_brightness)?;
        nonneg("energy_on", self.energy_on)?;
        nonneg("energy_weight.day", self.energy_weight.day)?;
        nonneg("energy_weight.night", self.energy_weight.night)?;
        nonneg("darkness_weight.day", self.darkness_weight.day)?;
        nonneg("darkness_weight.night", self.darkness_weight.night)?;
        unit("daylight_fraction", self.daylight_fraction)?;
        let known = default_devices();
        let mut seen = BTreeSet::new();
        if self.devices.is_empty() {
            return Err(range("devices", "must name at least one device"));
        }
        for d in &self.devices {
            if !known.contains(d) {
                return Err(range("devices", format!("unknown device `{d}`")));
            }
            if !seen.insert(d) {
                return Err(range("devices", format!("`{d}` listed twice")));
            }
        }
        for d in self.initial_enabled.keys() {
            if !seen.contains(d) {
                return Err(range(
                    "initial_enabled",
                    format!("`{d}` is not a carried device"),
                ));
            }
        }
        if self.search.lambda == 0 {
            return Err(range("search.lambda", "must be at least 1"));
        }
        if self.search.generations == 0 {
            return Err(range("search.generations", "must be at least 1"));
        }
        self.search
            .mutation
            .validate()
            .map_err(|e| range("search.mutation", e.to_string()))?;
        Ok(())
    }

    /// Search settings for a run with `seed`.
    pub fn search_config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            seed,
            lambda: self.search.lambda,
            policy: DecisionPolicy {
                patience: self.search.patience,
                budget: self.search.generations,
                mutation: self.search.mutation,
                structural: self.search.structural,
            },
            jobs: 1,
        }
    }
}

pub fn agent_id(i: usize) -> String {
    format!("light-{i}")
}

/// Indices within `radius` of `i` on a line of `n`, excluding `i`.
pub fn line_neighbors(i: usize, n: usize, radius: usize) -> Vec<usize> {
    (i.saturating_sub(radius)..=(i + radius).min(n - 1))
        .filter(|&j| j != i)
        .collect()
}

/// Seeded people flow per tick (0..=episode_ticks) and light: each tick the
/// flow decays and a Bernoulli arrival tops it up.
pub fn people_flow_table(params: &StreetLightParams, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let n = params.n_lights;
    let mut rows = vec![vec![0.0; n]];
    for _ in 0..params.episode_ticks {
        let prev = rows.last().expect("non-empty");
        let next = prev
            .iter()
            .map(|f| {
                let arrival = if rng.random::<f64>() < params.people_rate {
                    1.0
                } else {
                    0.0
                };
                params.people_decay * f + (1.0 - params.people_decay) * arrival
            })
            .collect();
        rows.push(next);
    }
    rows
}

struct Model {
    params: StreetLightParams,
    neighbors: Vec<Vec<usize>>,
    light_vars: Vec<String>,
    flows: Vec<Vec<f64>>,
}

impl Model {
    fn levels(&self, u: &UpdateInput<'_>) -> Vec<usize> {
        self.light_vars
            .iter()
            .map(|v| u.effect(v).round().clamp(0.0, 2.0) as usize)
            .collect()
    }

    fn flow(&self, tick: u64, i: usize) -> f64 {
        let row = (tick as usize).min(self.flows.len() - 1);
        self.flows[row][i]
    }

    fn brightness(&self, tick: u64, levels: &[usize], i: usize) -> f64 {
        let c = &self.params.light_contribution;
        let spill: f64 = self.neighbors[i].iter().map(|&j| c.get(levels[j])).sum();
        local_brightness(
            self.params.ambient_at(tick),
            c.get(levels[i]),
            self.params.spillover,
            spill,
        )
    }
}

/// `clamp(ambient + own + spillover · Σ neighbor contributions, 0, 1)`.
pub fn local_brightness(ambient: f64, own: f64, spillover: f64, neighbor_sum: f64) -> f64 {
    (ambient + own + spillover * neighbor_sum).clamp(0.0, 1.0)
}

/// Energy drawn at a level index: 0, half or full `energy_on`.
pub fn level_energy(energy_on: f64, level: usize) -> f64 {
    energy_on * [0.0, 0.5, 1.0][level.min(2)]
}

/// A built scenario: environment, devices and score rules.
pub struct StreetLight {
    pub params: StreetLightParams,
    pub seed: u64,
    def: EnvironmentDef,
    devices: Vec<DeviceSpec>,
    rules: Vec<ScoreRule>,
}

impl std::fmt::Debug for StreetLight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StreetLight")
            .field("params", &self.params)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Builds the environment for `params`, with people flow drawn from `seed`.
///
/// Variables per light `i`: `light@light-i` (level index), `brightness@light-i`
/// and `people_flow@light-i`. Globals: `time_of_day`, `ambient`, `energy`
/// (summed over lights) and `service_gap` (Σ flow · max(0, target −
/// brightness)). Effects queued at tick t shape the values seen at t + 1.
pub fn build_streetlight_scenario(
    params: StreetLightParams,
    seed: u64,
) -> Result<StreetLight, ScenarioError> {
    let params = params.resolved();
    params.validate()?;
    let n = params.n_lights;
    let agents: Vec<String> = (0..n).map(agent_id).collect();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| line_neighbors(i, n, params.neighbor_radius))
        .collect();
    let model = Arc::new(Model {
        light_vars: agents.iter().map(|a| format!("light@{a}")).collect(),
        flows: people_flow_table(&params, seed),
        neighbors: neighbors.clone(),
        params: params.clone(),
    });

    let half = params.daylight_fraction / 2.0;
    let contexts = vec![
        (
            "day".to_string(),
            Condition::Any(vec![
                Condition::var("time_of_day", Cmp::Lt, half),
                Condition::var("time_of_day", Cmp::Ge, 1.0 - half),
            ]),
        ),
        ("night".to_string(), Condition::Always),
    ];
    let mut def = EnvironmentDef::new(agents.clone(), contexts)?;
    let m = model.clone();
    def = def.variable("time_of_day", 0.0, move |u| {
        m.params.time_of_day(u.tick + 1)
    })?;
    let m = model.clone();
    def = def.variable("ambient", params.ambient_at(0), move |u| {
        m.params.ambient_at(u.tick + 1)
    })?;
    let dark = vec![0usize; n];
    for (i, a) in agents.iter().enumerate() {
        let m = model.clone();
        def = def.variable(format!("light@{a}"), 0.0, move |u| m.levels(u)[i] as f64)?;
        let m = model.clone();
        def = def.variable(
            format!("brightness@{a}"),
            model.brightness(0, &dark, i),
            move |u| m.brightness(u.tick + 1, &m.levels(u), i),
        )?;
        let m = model.clone();
        def = def.variable(format!("people_flow@{a}"), model.flow(0, i), move |u| {
            m.flow(u.tick + 1, i)
        })?;
    }
    let m = model.clone();
    def = def.variable("energy", 0.0, move |u| {
        m.levels(u)
            .iter()
            .map(|&l| level_energy(m.params.energy_on, l))
            .sum()
    })?;
    let m = model.clone();
    def = def.variable("service_gap", 0.0, move |u| {
        let levels = m.levels(u);
        (0..m.params.n_lights)
            .map(|i| {
                let b = m.brightness(u.tick + 1, &levels, i);
                m.flow(u.tick + 1, i) * (m.params.target_brightness - b).max(0.0)
            })
            .sum()
    })?;
    for (i, a) in agents.iter().enumerate() {
        def = def.neighbors_of(a, neighbors[i].iter().map(|&j| agents[j].clone()).collect())?;
    }

    let devices = all_devices()
        .into_iter()
        .filter(|d| params.devices.contains(&d.id))
        .collect();
    let w = |cw: &ContextWeights| [("day", cw.day), ("night", cw.night)];
    let rules = vec![
        ScoreRule::minimize("energy", w(&params.energy_weight)),
        ScoreRule::minimize("service_gap", w(&params.darkness_weight)),
    ];
    Ok(StreetLight {
        params,
        seed,
        def,
        devices,
        rules,
    })
}

impl StreetLight {
    pub fn environment(&self) -> &EnvironmentDef {
        &self.def
    }

    /// One row per tick and light: `tick,light,brightness,level,flow`.
    pub fn per_light_csv(&self, trace: &EpisodeTrace) -> String {
        let mut out = String::from("tick,light,brightness,level,flow\n");
        for s in &trace.snapshots {
            for i in 0..self.params.n_lights {
                let a = agent_id(i);
                let v = |prefix: &str| s.variables[&format!("{prefix}@{a}")];
                let level = v("light") as usize;
                out.push_str(&format!(
                    "{},{a},{},{},{}\n",
                    s.tick,
                    v("brightness"),
                    LEVELS[level.min(2)],
                    v("people_flow")
                ));
            }
        }
        out
    }
}

impl Task for StreetLight {
    fn devices(&self) -> &[DeviceSpec] {
        &self.devices
    }

    fn initial_selection(&self) -> BTreeMap<String, bool> {
        self.devices
            .iter()
            .map(|d| {
                (
                    d.id.clone(),
                    self.params
                        .initial_enabled
                        .get(&d.id)
                        .copied()
                        .unwrap_or(true),
                )
            })
            .collect()
    }

    fn rules(&self) -> &[ScoreRule] {
        &self.rules
    }

    fn run_episode(&self, spec: &AgentSpec, tracer: &mut Tracer) -> Result<EpisodeTrace, EnvError> {
        simulate(&self.def, spec, self.params.episode_ticks, tracer)
    }
}
