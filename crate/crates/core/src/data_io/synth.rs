//! Synthetic drifting probability streams.
//!
//! Each simulated model has a quality trajectory `quality_m(t)`: the
//! probability that its top-ranked label is the true one at step `t`.
//! Gradual drift moves every quality along a phase-shifted sinusoid;
//! abrupt drift holds qualities constant within segments and permutes
//! which model plays which role at each boundary.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::stream::{Stream, StreamHeader, StreamRecord};
use super::DataError;
use crate::rng::{stream_rng, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DriftKind {
    /// `quality = base + amplitude * sin(2 pi t / period + phase_m)`.
    Gradual { period: usize, amplitude: f64 },
    /// Piecewise-constant qualities over `segments` equal-length segments.
    Abrupt { segments: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftProfile {
    pub kind: DriftKind,
    /// Quality level of each model before drift is applied.
    pub base_quality: Vec<f64>,
}

impl DriftProfile {
    /// No drift at all: every step is exchangeable.
    pub fn stationary(base_quality: Vec<f64>) -> Self {
        Self {
            kind: DriftKind::Gradual {
                period: 1,
                amplitude: 0.0,
            },
            base_quality,
        }
    }
}

/// Metadata embedded in the header of generated streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorMeta {
    pub drift: DriftProfile,
    pub seed: u64,
}

/// Parameters of a synthetic stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_labels: usize,
    pub length: usize,
    pub model_names: Vec<String>,
    pub drift: DriftProfile,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Eight models over 20 labels for 3000 steps: six strong, one medium
    /// and one weak, with gradual drift.
    fn default() -> Self {
        let mut names: Vec<String> = (0..6).map(|i| format!("strong-{i}")).collect();
        names.push("medium-0".into());
        names.push("weak-0".into());
        let mut base = vec![0.75; 6];
        base.extend([0.45, 0.15]);
        Self {
            n_labels: 20,
            length: 3000,
            model_names: names,
            drift: DriftProfile {
                kind: DriftKind::Gradual {
                    period: 1000,
                    amplitude: 0.1,
                },
                base_quality: base,
            },
            seed: 0,
        }
    }
}

/// Per-step quality of every model, fixed once the segment permutations
/// have been drawn.
#[derive(Debug, Clone)]
pub struct QualitySchedule {
    profile: DriftProfile,
    n_labels: usize,
    length: usize,
    permutations: Vec<Vec<usize>>,
}

impl QualitySchedule {
    pub fn new<R: Rng + ?Sized>(
        profile: &DriftProfile,
        n_labels: usize,
        length: usize,
        rng: &mut R,
    ) -> Result<Self, DataError> {
        let m = profile.base_quality.len();
        let invalid = |msg: String| Err(DataError::Generator(msg));
        if m == 0 {
            return invalid("drift profile has no models".into());
        }
        if let Some(q) = profile
            .base_quality
            .iter()
            .find(|q| !(0.0..=1.0).contains(*q))
        {
            return invalid(format!("quality {q} is not in [0, 1]"));
        }
        let chance = 1.0 / n_labels as f64;
        if profile.base_quality.iter().all(|&q| q <= chance) {
            return invalid(format!(
                "every model is at or below chance level 1/{n_labels}"
            ));
        }
        let permutations = match profile.kind {
            DriftKind::Gradual { period, amplitude } => {
                if period == 0 || !(0.0..=1.0).contains(&amplitude) {
                    return invalid(
                        "gradual drift needs period >= 1 and amplitude in [0, 1]".into(),
                    );
                }
                Vec::new()
            }
            DriftKind::Abrupt { segments } => {
                if segments == 0 || segments > length {
                    return invalid(format!(
                        "{segments} segments for a stream of length {length}"
                    ));
                }
                let mut perms = vec![(0..m).collect::<Vec<_>>()];
                for _ in 1..segments {
                    let mut p: Vec<usize> = (0..m).collect();
                    p.shuffle(rng);
                    perms.push(p);
                }
                perms
            }
        };
        Ok(Self {
            profile: profile.clone(),
            n_labels,
            length,
            permutations,
        })
    }

    /// Segment index of 1-based step `t` under abrupt drift.
    pub fn segment(&self, t: usize) -> usize {
        let segments = self.permutations.len().max(1);
        ((t - 1) * segments / self.length).min(segments - 1)
    }

    /// Quality of `model` at 1-based step `t`.
    pub fn quality(&self, model: usize, t: usize) -> f64 {
        let base = &self.profile.base_quality;
        match self.profile.kind {
            DriftKind::Gradual { period, amplitude } => {
                let m = base.len() as f64;
                let phase = std::f64::consts::TAU * (t as f64 / period as f64 + model as f64 / m);
                // drift never pushes a model below chance unless it starts there
                let floor = base[model].min(1.0 / self.n_labels as f64);
                (base[model] + amplitude * phase.sin()).clamp(floor, 1.0)
            }
            DriftKind::Abrupt { .. } => base[self.permutations[self.segment(t)][model]],
        }
    }
}

/// Draws one model's probability row for a step with true label `label`.
///
/// The top-ranked label is correct with probability `quality`; otherwise it
/// is a uniformly chosen wrong label, and with probability `quality` the
/// true label is placed second. The remaining mass is symmetric Dirichlet
/// noise.
pub fn emit_probabilities<R: Rng + ?Sized>(
    n_labels: usize,
    label: usize,
    quality: f64,
    rng: &mut R,
) -> Vec<f64> {
    let correct = rng.random_bool(quality);
    let top = if correct {
        label
    } else {
        let other = rng.random_range(0..n_labels - 1);
        if other >= label {
            other + 1
        } else {
            other
        }
    };
    let noise: Vec<f64> = (0..n_labels).map(|_| Exp1.sample(rng)).collect();
    let noise_total: f64 = noise.iter().sum();
    let confidence = 0.25 + 0.6 * quality;
    let mut probs: Vec<f64> = noise
        .iter()
        .map(|x| (1.0 - confidence) * x / noise_total)
        .collect();
    probs[top] += confidence;

    let argmax = |p: &[f64], skip: Option<usize>| {
        (0..p.len())
            .filter(|&i| Some(i) != skip)
            .max_by(|&a, &b| p[a].total_cmp(&p[b]))
            .unwrap()
    };
    let best = argmax(&probs, None);
    if best != top {
        probs.swap(best, top);
    }
    if !correct && rng.random_bool(quality) {
        let second = argmax(&probs, Some(top));
        probs.swap(second, label);
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

/// Generates a full stream from `spec`, deterministically per seed.
pub fn generate_stream(spec: &SyntheticSpec) -> Result<Stream, DataError> {
    if spec.n_labels < 2 {
        return Err(DataError::Generator(format!(
            "need at least 2 labels, got {}",
            spec.n_labels
        )));
    }
    if spec.length == 0 {
        return Err(DataError::Generator(
            "stream length must be positive".into(),
        ));
    }
    if spec.model_names.len() != spec.drift.base_quality.len() {
        return Err(DataError::Generator(format!(
            "{} model names for {} quality levels",
            spec.model_names.len(),
            spec.drift.base_quality.len()
        )));
    }
    let mut rng = stream_rng(spec.seed, RngStream::Data);
    let schedule = QualitySchedule::new(&spec.drift, spec.n_labels, spec.length, &mut rng)?;
    let n_models = spec.model_names.len();
    let records = (1..=spec.length)
        .map(|t| {
            let label = rng.random_range(0..spec.n_labels);
            let probs = (0..n_models)
                .map(|m| emit_probabilities(spec.n_labels, label, schedule.quality(m, t), &mut rng))
                .collect();
            StreamRecord { t, label, probs }
        })
        .collect();
    let header = StreamHeader {
        n_models,
        n_labels: spec.n_labels,
        length: spec.length,
        model_names: spec.model_names.clone(),
        generator: Some(GeneratorMeta {
            drift: spec.drift.clone(),
            seed: spec.seed,
        }),
    };
    Stream::new(header, records)
}
