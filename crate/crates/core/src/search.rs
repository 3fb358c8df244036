//! (1+λ) search over agent configurations driven by the evaluation policy,
//! with the system lifecycle tracked by a statechart.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{configure_body, derive_controller, AgentError, AgentSpec, DeviceSpec};
use crate::controller::ControllerError;
use crate::environment::{EnvError, EpisodeTrace};
use crate::evaluation::{
    config_digest, decide, evaluate_episode, DecisionPolicy, EvalError, EvaluationRecord,
    ReconfigurationCommand, ScoreRule, StructuralPolicy,
};
use crate::statechart::{
    ChartError, Configuration, Event, StateNode, Statechart, Tracer, Transition,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("lambda must be at least 1")]
    ZeroLambda,
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("jobs must be at least 1")]
    ZeroJobs,
    #[error("exhaustive search over {0} devices is too large")]
    TooManyDevices(usize),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(EnvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Chart(#[from] ChartError),
}

impl From<EnvError> for SearchError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Agent(a) => SearchError::Agent(a),
            other => SearchError::Env(other),
        }
    }
}

/// A task the search can optimize: a device inventory plus an episode
/// runner and its score rules.
pub trait Task: Sync {
    fn devices(&self) -> &[DeviceSpec];
    fn initial_selection(&self) -> BTreeMap<String, bool>;
    fn rules(&self) -> &[ScoreRule];
    fn run_episode(&self, spec: &AgentSpec, tracer: &mut Tracer) -> Result<EpisodeTrace, EnvError>;

    /// Runs and scores one episode.
    fn evaluate(
        &self,
        spec: &AgentSpec,
        episode: u64,
        tracer: &mut Tracer,
    ) -> Result<EvaluationRecord, SearchError> {
        let trace = self.run_episode(spec, tracer)?;
        Ok(evaluate_episode(
            &trace,
            self.rules(),
            episode,
            config_digest(spec),
        )?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub seed: u64,
    pub lambda: usize,
    pub policy: DecisionPolicy,
    /// Worker threads for candidate episodes. Results do not depend on it.
    #[serde(skip)]
    pub jobs: usize,
}

impl SearchConfig {
    pub fn new(seed: u64) -> Self {
        SearchConfig {
            seed,
            lambda: 4,
            policy: DecisionPolicy::default(),
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub spec: AgentSpec,
    pub record: EvaluationRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    /// `initial`, `adjust` or `reconfigure`.
    pub command: String,
    pub parent: AgentSpec,
    pub candidates: Vec<Candidate>,
    /// Incumbent after this generation.
    pub best: EvaluationRecord,
    /// Mean over this generation's candidates, or the initial score.
    pub mean_score: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: AgentSpec,
    pub best_record: EvaluationRecord,
    /// Incumbent record after each generation.
    pub history: Vec<EvaluationRecord>,
    pub generations: Vec<GenerationLog>,
}

/// Deterministic RNG for candidate `index` of `generation`.
pub fn candidate_rng(seed: u64, generation: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | index as u64);
    rng
}

/// Lifecycle of the whole system: configure, behave, perturb, evaluate,
/// then adjust or reconfigure and go round again.
pub fn lifecycle_chart() -> Statechart {
    let nodes = vec![
        StateNode::basic("reconfigure_agent"),
        StateNode::basic("adjust_connections"),
        StateNode::xor(
            "agent_configuration",
            ["reconfigure_agent", "adjust_connections"],
            "reconfigure_agent",
        ),
        StateNode::basic("agent_behavior"),
        StateNode::basic("environment"),
        StateNode::basic("task_evaluation"),
        StateNode::xor(
            "embodied_agent",
            [
                "agent_configuration",
                "agent_behavior",
                "environment",
                "task_evaluation",
            ],
            "agent_configuration",
        ),
        StateNode::basic("idle"),
        StateNode::basic("stopped"),
        StateNode::xor("system", ["idle", "embodied_agent", "stopped"], "idle"),
    ];
    let transitions = vec![
        Transition::new("idle", "embodied_agent")
            .named("initialize")
            .on("initialize"),
        Transition::new("agent_configuration", "agent_behavior")
            .named("configured")
            .on("set"),
        Transition::new("agent_behavior", "environment")
            .named("perturb")
            .on("perturb"),
        Transition::new("environment", "task_evaluation")
            .named("evaluate")
            .on("set"),
        Transition::new("task_evaluation", "reconfigure_agent")
            .named("reconfigure")
            .on("reconfigure"),
        Transition::new("task_evaluation", "adjust_connections")
            .named("adjust")
            .on("adjust"),
        Transition::new("embodied_agent", "stopped")
            .named("stop")
            .on("stop"),
    ];
    Statechart::build(nodes, transitions).expect("lifecycle chart is well formed")
}

struct Lifecycle {
    chart: Statechart,
    config: Configuration,
}

impl Lifecycle {
    fn new(tracer: &mut Tracer) -> Self {
        let chart = lifecycle_chart();
        let (config, _) = chart.initialize_traced(tracer);
        Lifecycle { chart, config }
    }

    fn fire(&mut self, events: &[&str], tracer: &mut Tracer) -> Result<(), ChartError> {
        for e in events {
            let (c, _) = self
                .chart
                .dispatch_traced(&self.config, &Event::new(*e), tracer)?;
            self.config = c;
        }
        Ok(())
    }
}

/// All-devices-as-selected body with a fresh N(0, 1) controller.
pub fn initial_spec<T: Task + ?Sized>(
    task: &T,
    rng: &mut impl Rng,
    tracer: &mut Tracer,
) -> Result<AgentSpec, SearchError> {
    let body = configure_body(task.devices(), &task.initial_selection(), None, tracer)?;
    let controller = derive_controller(&body, None, rng);
    Ok(AgentSpec {
        agent_id: "agent".into(),
        body,
        controller,
    })
}

/// Enabled-set `mask` (bit i = device i) as a selection map.
pub fn mask_selection(devices: &[DeviceSpec], mask: u64) -> BTreeMap<String, bool> {
    devices
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.clone(), mask >> i & 1 == 1))
        .collect()
}

fn spawn(
    task: &(impl Task + ?Sized),
    command: &ReconfigurationCommand,
    incumbent: &AgentSpec,
    frozen: &AgentSpec,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AgentSpec, SearchError> {
    let mut quiet = Tracer::disabled();
    match command {
        ReconfigurationCommand::Adjust(policy) => Ok(AgentSpec {
            controller: incumbent.controller.mutate_connections(rng, policy)?,
            ..incumbent.clone()
        }),
        ReconfigurationCommand::Reconfigure(StructuralPolicy::FlipOne) => {
            let devices = task.devices();
            let d = &devices[rng.random_range(0..devices.len())];
            let selection = [(d.id.clone(), !incumbent.body.is_enabled(&d.id))]
                .into_iter()
                .collect();
            let body = configure_body(devices, &selection, Some(&incumbent.body), &mut quiet)?;
            let controller = derive_controller(&body, Some(&incumbent.controller), rng);
            Ok(AgentSpec {
                body,
                controller,
                ..incumbent.clone()
            })
        }
        ReconfigurationCommand::Reconfigure(StructuralPolicy::Exhaustive) => {
            let selection = mask_selection(task.devices(), index as u64);
            let body = configure_body(
                task.devices(),
                &selection,
                Some(&incumbent.body),
                &mut quiet,
            )?;
            let controller = derive_controller(&body, Some(&frozen.controller), rng);
            Ok(AgentSpec {
                body,
                controller,
                ..incumbent.clone()
            })
        }
    }
}

/// Scores a candidate; bodies that cannot behave score +∞.
fn score(
    task: &(impl Task + ?Sized),
    spec: &AgentSpec,
    episode: u64,
) -> Result<EvaluationRecord, SearchError> {
    match task.evaluate(spec, episode, &mut Tracer::disabled()) {
        Err(SearchError::Agent(AgentError::BehaviorNotConfigured(_))) => Ok(EvaluationRecord {
            episode,
            score: f64::INFINITY,
            breakdown: BTreeMap::new(),
            config_digest: config_digest(spec),
        }),
        other => other,
    }
}

/// Runs the search until the policy says stop. Generation 0 evaluates the
/// initial spec; every later generation spawns candidates from the
/// incumbent and keeps the first strictly better one.
pub fn run_search<T: Task + ?Sized>(
    task: &T,
    config: &SearchConfig,
    tracer: &mut Tracer,
) -> Result<SearchOutcome, SearchError> {
    if config.lambda == 0 {
        return Err(SearchError::ZeroLambda);
    }
    if config.policy.budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    if config.jobs == 0 {
        return Err(SearchError::ZeroJobs);
    }
    config.policy.mutation.validate()?;
    let n_devices = task.devices().len();
    if config.policy.structural == StructuralPolicy::Exhaustive && n_devices > 16 {
        return Err(SearchError::TooManyDevices(n_devices));
    }
    let pool = if config.jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.jobs)
                .build()
                .expect("thread pool"),
        )
    } else {
        None
    };

    tracer.set_agent("search");
    tracer.set_tick(0);
    let mut life = Lifecycle::new(tracer);
    life.fire(&["initialize"], tracer)?;

    let mut rng = candidate_rng(config.seed, 0, 0);
    let mut best = initial_spec(task, &mut rng, &mut Tracer::disabled())?;
    let frozen = best.clone();
    tracer.set_agent("search");
    life.fire(&["set", "perturb", "set"], tracer)?;
    let mut best_record = score(task, &best, 0)?;
    let mut episodes = 1u64;
    let mut history = vec![best_record.clone()];
    let mut generations = vec![GenerationLog {
        generation: 0,
        command: "initial".into(),
        parent: best.clone(),
        candidates: Vec::new(),
        best: best_record.clone(),
        mean_score: best_record.score,
    }];

    while let Some(command) = decide(&history, &config.policy) {
        let generation = history.len();
        tracer.set_tick(generation as u64);
        life.fire(&[command.name(), "set"], tracer)?;
        let count = match command {
            ReconfigurationCommand::Reconfigure(StructuralPolicy::Exhaustive) => {
                1usize << n_devices
            }
            _ => config.lambda,
        };
        let run_one = |i: usize| -> Result<Candidate, SearchError> {
            let mut rng = candidate_rng(config.seed, generation, i);
            let spec = spawn(task, &command, &best, &frozen, i, &mut rng)?;
            let record = score(task, &spec, episodes + i as u64)?;
            Ok(Candidate { spec, record })
        };
        let results: Vec<Result<Candidate, SearchError>> = match &pool {
            Some(pool) => pool.install(|| (0..count).into_par_iter().map(run_one).collect()),
            None => (0..count).map(run_one).collect(),
        };
        let candidates = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        episodes += count as u64;
        life.fire(&["perturb", "set"], tracer)?;

        let parent = best.clone();
        let mut winner: Option<usize> = None;
        for (i, c) in candidates.iter().enumerate() {
            let bar = winner.map_or(best_record.score, |w| candidates[w].record.score);
            if c.record.score < bar {
                winner = Some(i);
            }
        }
        if let Some(w) = winner {
            best = candidates[w].spec.clone();
            best_record = candidates[w].record.clone();
        }
        let mean_score = candidates.iter().map(|c| c.record.score).sum::<f64>() / count as f64;
        history.push(best_record.clone());
        generations.push(GenerationLog {
            generation,
            command: command.name().into(),
            parent,
            candidates,
            best: best_record.clone(),
            mean_score,
        });
    }
    tracer.set_tick(history.len() as u64);
    life.fire(&["stop"], tracer)?;

    Ok(SearchOutcome {
        best,
        best_record,
        history,
        generations,
    })
}
