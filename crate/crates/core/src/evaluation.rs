//! Context-weighted episode scoring and the adjust/reconfigure policy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentSpec, BodyConfig};
use crate::controller::{ControllerTopology, MutationPolicy};
use crate::environment::EpisodeTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("score rule reads unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("score rule for `{variable}` has no weight for context `{context}`")]
    MissingContextWeight { variable: String, context: String },
    #[error("episode trace is empty")]
    EmptyTrace,
    #[error("invalid score rule for `{variable}`: {reason}")]
    InvalidRule { variable: String, reason: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Goal {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRule {
    pub variable: String,
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub direction: Goal,
}

impl ScoreRule {
    pub fn minimize<I, S>(variable: impl Into<String>, weights: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        ScoreRule {
            variable: variable.into(),
            weights: weights.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            direction: Goal::Minimize,
        }
    }

    /// Weights must be finite, non-negative and cover every context.
    pub fn validate(&self, contexts: &[&str]) -> Result<(), EvalError> {
        for (ctx, w) in &self.weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(EvalError::InvalidRule {
                    variable: self.variable.clone(),
                    reason: format!("weight for `{ctx}` must be finite and >= 0, got {w}"),
                });
            }
        }
        for ctx in contexts {
            if !self.weights.contains_key(*ctx) {
                return Err(EvalError::MissingContextWeight {
                    variable: self.variable.clone(),
                    context: ctx.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> ScoreRule {
        ScoreRule {
            weights: self
                .weights
                .iter()
                .map(|(k, w)| (k.clone(), w * c))
                .collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub episode: u64,
    /// Lower is better.
    pub score: f64,
    pub breakdown: BTreeMap<String, f64>,
    pub config_digest: String,
}

/// Hex SHA-256 of the canonical JSON of a value.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(&bytes))
}

/// Digest of the (body, controller) pair.
pub fn config_digest(spec: &AgentSpec) -> String {
    #[derive(Serialize)]
    struct Genotype<'a> {
        body: &'a BodyConfig,
        controller: &'a ControllerTopology,
    }
    digest_of(&Genotype {
        body: &spec.body,
        controller: &spec.controller,
    })
}

/// Σ over ticks and rules of `weight(context_t) · value(variable, t)`, with
/// maximized variables negated. The breakdown sums per context and the
/// score is the sum of the breakdown.
pub fn evaluate_episode(
    trace: &EpisodeTrace,
    rules: &[ScoreRule],
    episode: u64,
    config_digest: String,
) -> Result<EvaluationRecord, EvalError> {
    if trace.is_empty() {
        return Err(EvalError::EmptyTrace);
    }
    let mut breakdown: BTreeMap<String, f64> = BTreeMap::new();
    for snap in &trace.snapshots {
        let slot = breakdown.entry(snap.context.clone()).or_insert(0.0);
        for rule in rules {
            let value = *snap
                .variables
                .get(&rule.variable)
                .ok_or_else(|| EvalError::UnknownVariable(rule.variable.clone()))?;
            let weight = *rule.weights.get(&snap.context).ok_or_else(|| {
                EvalError::MissingContextWeight {
                    variable: rule.variable.clone(),
                    context: snap.context.clone(),
                }
            })?;
            let signed = match rule.direction {
                Goal::Minimize => value,
                Goal::Maximize => -value,
            };
            *slot += weight * signed;
        }
    }
    Ok(EvaluationRecord {
        episode,
        score: breakdown.values().sum(),
        breakdown,
        config_digest,
    })
}

/// How a reconfigure step chooses structural candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralPolicy {
    /// Each candidate flips one uniformly chosen device.
    #[default]
    FlipOne,
    /// One candidate per enabled-set, all derived from the initial
    /// controller so connection weights stay frozen.
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconfigurationCommand {
    Adjust(MutationPolicy),
    Reconfigure(StructuralPolicy),
}

impl ReconfigurationCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ReconfigurationCommand::Adjust(_) => "adjust",
            ReconfigurationCommand::Reconfigure(_) => "reconfigure",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionPolicy {
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub mutation: MutationPolicy,
    #[serde(default)]
    pub structural: StructuralPolicy,
}

fn default_patience() -> usize {
    10
}

fn default_budget() -> usize {
    200
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        DecisionPolicy {
            patience: default_patience(),
            budget: default_budget(),
            mutation: MutationPolicy::default(),
            structural: StructuralPolicy::default(),
        }
    }
}

/// Trailing records that do not strictly beat the best score before them.
/// The first record has nothing to beat and counts as stale.
pub fn stale_count(history: &[EvaluationRecord]) -> usize {
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for (i, r) in history.iter().enumerate() {
        if i > 0 && r.score < best {
            stale = 0;
        } else {
            stale += 1;
        }
        best = best.min(r.score);
    }
    stale
}

/// `None` stops the search once `budget` records exist. Otherwise adjust
/// while the best score improved within the last `patience` records and
/// reconfigure after that.
pub fn decide(
    history: &[EvaluationRecord],
    policy: &DecisionPolicy,
) -> Option<ReconfigurationCommand> {
    if history.len() >= policy.budget {
        return None;
    }
    if stale_count(history) >= policy.patience {
        Some(ReconfigurationCommand::Reconfigure(policy.structural))
    } else {
        Some(ReconfigurationCommand::Adjust(policy.mutation))
    }
}
