//! Online loops for the graph-structured method, the full-pool baseline and
//! the single-model baseline.
//!
//! Every step draws one randomization `u` shared by all models, picks a
//! model, builds its prediction set, then updates the miscoverage level and
//! weight of each model in the step's candidate set:
//!
//! | method   | candidates              | loss fed to the weight update |
//! |----------|-------------------------|-------------------------------|
//! | `gmocp`  | neighbours of one node  | pinball loss / inclusion prob |
//! | `mocp`   | all models              | raw pinball loss              |
//! | `single` | the fixed model         | (weight unused)               |
//!
//! True-label scores are appended to every model's history at every step,
//! whatever the method.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{
    damping_exponent, importance_loss, miss_gradient, pinball_loss, sf_ogd_update, AdaptationError,
    AdaptationParams, ModelState,
};
use crate::conformal::{
    alpha_bar, prediction_set_unchecked, threshold, ConformalError, ProbabilityVector, ScoreParams,
};
use crate::data_io::{Stream, StreamRecord};
use crate::graph::{select_model_log, GraphError, GraphParams, GraphRealization};
use crate::rng::RunRngs;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step {t}: {reason}")]
    Record { t: usize, reason: String },
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Adaptation(#[from] AdaptationError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Which online procedure to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Gmocp,
    Mocp,
    Single(usize),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Gmocp => f.write_str("gmocp"),
            Method::Mocp => f.write_str("mocp"),
            Method::Single(m) => write!(f, "single:{m}"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gmocp" => Ok(Method::Gmocp),
            "mocp" => Ok(Method::Mocp),
            _ => s
                .strip_prefix("single:")
                .and_then(|m| m.parse().ok())
                .map(Method::Single)
                .ok_or_else(|| {
                    format!("unknown method {s:?} (expected gmocp, mocp or single:<model>)")
                }),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

/// All hyperparameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha_target: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub eta_e: f64,
    pub n_trials: usize,
    pub n_selective: usize,
    pub score_params: ScoreParams,
    pub seed: u64,
    pub warmup: usize,
    pub method: Method,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha_target: 0.1,
            eta: 0.05,
            epsilon: 0.5,
            eta_e: 0.1,
            n_trials: 1,
            n_selective: 1,
            score_params: ScoreParams::default(),
            seed: 0,
            warmup: 50,
            method: Method::Gmocp,
        }
    }
}

impl RunConfig {
    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }

    pub fn adaptation(&self) -> AdaptationParams {
        AdaptationParams {
            alpha_target: self.alpha_target,
            eta: self.eta,
            epsilon: self.epsilon,
            b_scale: match self.method {
                Method::Gmocp => damping_exponent(self.n_selective),
                _ => 0,
            },
        }
    }

    pub fn graph(&self, n_models: usize) -> GraphParams {
        GraphParams {
            n_models,
            n_selective: self.n_selective,
            n_trials: self.n_trials,
            eta_e: self.eta_e,
        }
    }

    /// Checks every parameter against a stream with `n_models` models and
    /// `length` records.
    pub fn validate(&self, n_models: usize, length: usize) -> Result<(), EngineError> {
        self.adaptation().validate()?;
        self.graph(n_models).validate()?;
        self.score_params.validate()?;
        if let Method::Single(m) = self.method {
            if m >= n_models {
                return Err(EngineError::Config(format!(
                    "single model {m} out of range for {n_models} models"
                )));
            }
        }
        if self.warmup >= length {
            return Err(EngineError::Config(format!(
                "warmup {} leaves no evaluation steps in a stream of {length}",
                self.warmup
            )));
        }
        Ok(())
    }
}

/// Log entry for one evaluated step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Step index counted from 1 after warmup.
    pub t: usize,
    pub chosen_model: usize,
    pub set_size: usize,
    pub covered: bool,
    /// Number of model states updated this step.
    pub updates_performed: usize,
    /// Miscoverage level the chosen model used to build the set.
    pub alpha_of_chosen: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: RunConfig,
    pub coverage: f64,
    pub avg_width: f64,
    pub runtime_seconds: f64,
    pub updates_total: u64,
    pub per_step: Vec<StepOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub coverage: f64,
    pub avg_width: f64,
    pub runtime_seconds: f64,
}

/// Coverage and average width recomputed from the per-step log.
pub fn evaluate(report: &RunReport) -> Metrics {
    let n = report.per_step.len().max(1) as f64;
    Metrics {
        coverage: report.per_step.iter().filter(|s| s.covered).count() as f64 / n,
        avg_width: report
            .per_step
            .iter()
            .map(|s| s.set_size as f64)
            .sum::<f64>()
            / n,
        runtime_seconds: report.runtime_seconds,
    }
}

/// Streaming state of one run: feed labeled records with [`step`](Self::step).
#[derive(Debug, Clone)]
pub struct OnlineConformal {
    config: RunConfig,
    graph: GraphParams,
    adaptation: AdaptationParams,
    models: Vec<ModelState>,
    n_labels: usize,
    rngs: RunRngs,
    steps: usize,
    log_weights: Vec<f64>,
    scores: Vec<f64>,
    last_graph: Option<GraphRealization>,
}

/// What happened at one raw step, before warmup filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStep {
    pub chosen_model: usize,
    pub set_size: usize,
    pub covered: bool,
    pub candidates: Vec<usize>,
    pub alpha_of_chosen: f64,
}

impl OnlineConformal {
    pub fn new(config: RunConfig, n_models: usize, n_labels: usize) -> Result<Self, EngineError> {
        config.validate(n_models, usize::MAX)?;
        if n_labels < 2 {
            return Err(EngineError::Config(format!(
                "need at least 2 labels, got {n_labels}"
            )));
        }
        Ok(Self {
            graph: config.graph(n_models),
            adaptation: config.adaptation(),
            models: (0..n_models)
                .map(|_| ModelState::new(config.alpha_target))
                .collect(),
            n_labels,
            rngs: RunRngs::new(config.seed),
            steps: 0,
            log_weights: vec![0.0; n_models],
            scores: vec![0.0; n_models],
            last_graph: None,
            config,
        })
    }

    pub fn models(&self) -> &[ModelState] {
        &self.models
    }

    /// Labeled steps consumed so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Graph sampled at the most recent step (graph-structured method only).
    pub fn last_graph(&self) -> Option<&GraphRealization> {
        self.last_graph.as_ref()
    }

    fn check_record(&self, record: &StreamRecord, t: usize) -> Result<(), EngineError> {
        record
            .validate(self.models.len(), self.n_labels)
            .map_err(|reason| EngineError::Record { t, reason })
    }

    /// Predicts for `record`, then learns from its label.
    pub fn step(&mut self, record: &StreamRecord) -> Result<RawStep, EngineError> {
        let t = self.steps + 1;
        self.check_record(record, t)?;
        let n_models = self.models.len();
        let u: f64 = self.rngs.score.random();
        for (lw, m) in self.log_weights.iter_mut().zip(&self.models) {
            *lw = m.log_weight();
        }

        let (chosen, candidates, inclusion) = match self.config.method {
            Method::Gmocp => {
                let real = GraphRealization::sample(
                    &self.graph,
                    &self.log_weights,
                    &mut self.rngs.graph,
                    &mut self.rngs.node,
                )?;
                let chosen =
                    select_model_log(&real.candidate_set, &self.log_weights, &mut self.rngs.model)?;
                let real = self.last_graph.insert(real);
                (
                    chosen,
                    real.candidate_set.clone(),
                    Some(real.inclusion_probs.as_slice()),
                )
            }
            Method::Mocp => {
                let all: Vec<usize> = (0..n_models).collect();
                let chosen = select_model_log(&all, &self.log_weights, &mut self.rngs.model)?;
                (chosen, all, None)
            }
            Method::Single(m) => (m, vec![m], None),
        };

        let params = self.config.score_params;
        for (m, score) in self.scores.iter_mut().enumerate() {
            *score = ProbabilityVector::new_unchecked(record.row(m)).score_unchecked(
                record.label,
                &params,
                u,
            );
        }

        let state = &mut self.models[chosen];
        let alpha_of_chosen = state.alpha;
        let qhat = threshold(state.history.sorted(), alpha_of_chosen, t)?;
        let set = prediction_set_unchecked(
            ProbabilityVector::new_unchecked(record.row(chosen)),
            &params,
            u,
            qhat,
        );
        let covered = set.contains(record.label);

        let target = self.adaptation.alpha_target;
        for &m in &candidates {
            let state = &mut self.models[m];
            let alpha = state.alpha;
            let sorted = state.history.sorted();
            let qhat_m = threshold(sorted, alpha, t)?;
            let best = alpha_bar(sorted, self.scores[m], t)?;
            let missed = self.scores[m] > qhat_m;
            let loss = pinball_loss(best, alpha, target);
            let estimate = match inclusion {
                Some(q) => importance_loss(loss, q[m], true)?,
                None => loss,
            };
            state.apply_loss(estimate, self.adaptation.epsilon, self.adaptation.b_scale);
            sf_ogd_update(state, miss_gradient(missed, target), self.adaptation.eta);
        }

        for (state, &score) in self.models.iter_mut().zip(&self.scores) {
            state.history.push(score)?;
        }
        self.steps = t;
        Ok(RawStep {
            chosen_model: chosen,
            set_size: set.len(),
            covered,
            candidates,
            alpha_of_chosen,
        })
    }
}

/// Runs `config.method` over the whole stream.
pub fn run(stream: &Stream, config: &RunConfig) -> Result<RunReport, EngineError> {
    config.validate(stream.n_models(), stream.len())?;
    let mut engine = OnlineConformal::new(config.clone(), stream.n_models(), stream.n_labels())?;
    let mut per_step = Vec::with_capacity(stream.len() - config.warmup);
    let start = Instant::now();
    for (i, record) in stream.records.iter().enumerate() {
        let raw = engine.step(record)?;
        if i >= config.warmup {
            per_step.push(StepOutcome {
                t: i + 1 - config.warmup,
                chosen_model: raw.chosen_model,
                set_size: raw.set_size,
                covered: raw.covered,
                updates_performed: raw.candidates.len(),
                alpha_of_chosen: raw.alpha_of_chosen,
            });
        }
    }
    let runtime_seconds = start.elapsed().as_secs_f64();
    let mut report = RunReport {
        config: config.clone(),
        coverage: 0.0,
        avg_width: 0.0,
        runtime_seconds,
        updates_total: per_step.iter().map(|s| s.updates_performed as u64).sum(),
        per_step,
    };
    let metrics = evaluate(&report);
    report.coverage = metrics.coverage;
    report.avg_width = metrics.avg_width;
    Ok(report)
}

pub fn gmocp_run(stream: &Stream, config: &RunConfig) -> Result<RunReport, EngineError> {
    run(stream, &config.with_method(Method::Gmocp))
}

pub fn mocp_run(stream: &Stream, config: &RunConfig) -> Result<RunReport, EngineError> {
    run(stream, &config.with_method(Method::Mocp))
}

pub fn single_run(
    stream: &Stream,
    config: &RunConfig,
    model: usize,
) -> Result<RunReport, EngineError> {
    run(stream, &config.with_method(Method::Single(model)))
}
