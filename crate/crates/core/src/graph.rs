//! Bipartite selection graphs between selective nodes and model nodes.
//!
//! Each step, every selective node draws `N` model nodes from the
//! connection PMF (a mix of the normalized model weights and a uniform
//! exploration term). One selective node is then chosen in proportion to
//! the summed weight of its models, and its neighbours become the
//! candidate set for that step.
//!
//! Weights are handled in the log domain internally. The linear-weight
//! functions are thin wrappers for callers holding plain weights.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("no model weights supplied")]
    NoModels,
    #[error("weight {value} of model {index} is not positive and finite")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("exploration rate {0} must lie in [0, 1]")]
    InvalidExploration(f64),
    #[error("graph needs at least one {0}")]
    EmptyDimension(&'static str),
    #[error("expected {expected} entries, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("selective node {0} has no edges")]
    EmptyRow(usize),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("candidate model {0} out of range")]
    CandidateOutOfRange(usize),
    #[error("probability mass function is not valid")]
    InvalidPmf,
}

/// Graph dimensions and exploration rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub n_models: usize,
    pub n_selective: usize,
    pub n_trials: usize,
    pub eta_e: f64,
}

impl GraphParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.n_models == 0 {
            return Err(GraphError::EmptyDimension("model node"));
        }
        if self.n_selective == 0 {
            return Err(GraphError::EmptyDimension("selective node"));
        }
        if self.n_trials == 0 {
            return Err(GraphError::EmptyDimension("trial"));
        }
        if !(0.0..=1.0).contains(&self.eta_e) {
            return Err(GraphError::InvalidExploration(self.eta_e));
        }
        Ok(())
    }
}

/// `J x M` boolean adjacency; row `j` lists the models attached to
/// selective node `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n_selective: usize,
    n_models: usize,
    edges: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n_selective: usize, n_models: usize) -> Self {
        Self {
            n_selective,
            n_models,
            edges: vec![false; n_selective * n_models],
        }
    }

    /// Builds an adjacency from explicit neighbour lists.
    pub fn from_rows(n_models: usize, rows: &[&[usize]]) -> Result<Self, GraphError> {
        let mut adj = Self::empty(rows.len(), n_models);
        for (j, row) in rows.iter().enumerate() {
            for &m in *row {
                if m >= n_models {
                    return Err(GraphError::CandidateOutOfRange(m));
                }
                adj.connect(j, m);
            }
        }
        Ok(adj)
    }

    pub fn n_selective(&self) -> usize {
        self.n_selective
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn row(&self, j: usize) -> &[bool] {
        &self.edges[j * self.n_models..(j + 1) * self.n_models]
    }

    pub fn is_connected(&self, j: usize, m: usize) -> bool {
        self.edges[j * self.n_models + m]
    }

    pub fn connect(&mut self, j: usize, m: usize) {
        self.edges[j * self.n_models + m] = true;
    }

    /// Models attached to selective node `j`, ascending.
    pub fn neighbours(&self, j: usize) -> Vec<usize> {
        self.row(j)
            .iter()
            .enumerate()
            .filter_map(|(m, &e)| e.then_some(m))
            .collect()
    }

    pub fn degree(&self, j: usize) -> usize {
        self.row(j).iter().filter(|&&e| e).count()
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalized `exp(log_values)`.
pub(crate) fn softmax(log_values: &[f64]) -> Vec<f64> {
    let max = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_values.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn to_log_weights(weights: &[f64]) -> Result<Vec<f64>, GraphError> {
    if weights.is_empty() {
        return Err(GraphError::NoModels);
    }
    weights
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value.is_finite() && value > 0.0 {
                Ok(value.ln())
            } else {
                Err(GraphError::NonPositiveWeight { index, value })
            }
        })
        .collect()
}

/// `(1 - eta_e) * w_m / sum(w) + eta_e / M` from linear weights.
pub fn connection_pmf(weights: &[f64], eta_e: f64) -> Result<Vec<f64>, GraphError> {
    connection_pmf_log(&to_log_weights(weights)?, eta_e)
}

/// [`connection_pmf`] from log weights.
pub fn connection_pmf_log(log_weights: &[f64], eta_e: f64) -> Result<Vec<f64>, GraphError> {
    if log_weights.is_empty() {
        return Err(GraphError::NoModels);
    }
    if !(0.0..=1.0).contains(&eta_e) {
        return Err(GraphError::InvalidExploration(eta_e));
    }
    let uniform = eta_e / log_weights.len() as f64;
    Ok(softmax(log_weights)
        .into_iter()
        .map(|w| (1.0 - eta_e) * w + uniform)
        .collect())
}

/// Draws `N` model nodes per selective node from `pmf`. Repeated draws of
/// the same model collapse into a single edge.
pub fn generate_graph<R: Rng + ?Sized>(
    params: &GraphParams,
    pmf: &[f64],
    rng: &mut R,
) -> Result<Adjacency, GraphError> {
    params.validate()?;
    if pmf.len() != params.n_models {
        return Err(GraphError::DimensionMismatch {
            expected: params.n_models,
            found: pmf.len(),
        });
    }
    let dist = WeightedIndex::new(pmf).map_err(|_| GraphError::InvalidPmf)?;
    let mut adj = Adjacency::empty(params.n_selective, params.n_models);
    for j in 0..params.n_selective {
        for _ in 0..params.n_trials {
            adj.connect(j, dist.sample(rng));
        }
    }
    Ok(adj)
}

/// `u_j = sum of w_m over models attached to node j`, from linear weights.
pub fn node_weights(adjacency: &Adjacency, weights: &[f64]) -> Result<Vec<f64>, GraphError> {
    if weights.len() != adjacency.n_models() {
        return Err(GraphError::DimensionMismatch {
            expected: adjacency.n_models(),
            found: weights.len(),
        });
    }
    (0..adjacency.n_selective())
        .map(|j| {
            if adjacency.degree(j) == 0 {
                return Err(GraphError::EmptyRow(j));
            }
            Ok(adjacency.neighbours(j).iter().map(|&m| weights[m]).sum())
        })
        .collect()
}

/// `log u_j` for every selective node.
pub fn node_log_weights(
    adjacency: &Adjacency,
    log_weights: &[f64],
) -> Result<Vec<f64>, GraphError> {
    if log_weights.len() != adjacency.n_models() {
        return Err(GraphError::DimensionMismatch {
            expected: adjacency.n_models(),
            found: log_weights.len(),
        });
    }
    (0..adjacency.n_selective())
        .map(|j| {
            let row = adjacency.row(j);
            if !row.contains(&true) {
                return Err(GraphError::EmptyRow(j));
            }
            Ok(log_sum_exp(
                row.iter()
                    .zip(log_weights)
                    .filter_map(|(&e, &lw)| e.then_some(lw)),
            ))
        })
        .collect()
}

/// Selection PMF over selective nodes, `u_j / sum(u)`.
pub fn node_pmf(log_node_weights: &[f64]) -> Vec<f64> {
    softmax(log_node_weights)
}

/// Samples an index from a non-negative weight vector.
pub fn sample_index<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> Result<usize, GraphError> {
    let dist = WeightedIndex::new(pmf).map_err(|_| GraphError::InvalidPmf)?;
    Ok(dist.sample(rng))
}

/// Picks a selective node from `node_pmf` and returns it with its
/// neighbours.
pub fn select_node_and_candidates<R: Rng + ?Sized>(
    adjacency: &Adjacency,
    node_pmf: &[f64],
    rng: &mut R,
) -> Result<(usize, Vec<usize>), GraphError> {
    if node_pmf.len() != adjacency.n_selective() {
        return Err(GraphError::DimensionMismatch {
            expected: adjacency.n_selective(),
            found: node_pmf.len(),
        });
    }
    let j = sample_index(node_pmf, rng)?;
    Ok((j, adjacency.neighbours(j)))
}

/// Samples one candidate with probability proportional to its weight.
pub fn select_model<R: Rng + ?Sized>(
    candidates: &[usize],
    weights: &[f64],
    rng: &mut R,
) -> Result<usize, GraphError> {
    select_model_log(candidates, &to_log_weights(weights)?, rng)
}

/// [`select_model`] from log weights.
pub fn select_model_log<R: Rng + ?Sized>(
    candidates: &[usize],
    log_weights: &[f64],
    rng: &mut R,
) -> Result<usize, GraphError> {
    if candidates.is_empty() {
        return Err(GraphError::EmptyCandidates);
    }
    if let Some(&bad) = candidates.iter().find(|&&m| m >= log_weights.len()) {
        return Err(GraphError::CandidateOutOfRange(bad));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let local: Vec<f64> = candidates.iter().map(|&m| log_weights[m]).collect();
    Ok(candidates[sample_index(&softmax(&local), rng)?])
}

/// `q_m = sum_j p'_j * (1 - (1 - p_m)^N)`.
pub fn inclusion_probability(
    node_pmf: &[f64],
    connection_pmf: &[f64],
    n_trials: usize,
) -> Vec<f64> {
    let node_mass: f64 = node_pmf.iter().sum();
    let trials = i32::try_from(n_trials).unwrap_or(i32::MAX);
    connection_pmf
        .iter()
        .map(|&p| node_mass * (1.0 - (1.0 - p).powi(trials)))
        .collect()
}

/// Everything sampled and derived for one step's graph.
#[derive(Debug, Clone)]
pub struct GraphRealization {
    pub adjacency: Adjacency,
    pub connection_pmf: Vec<f64>,
    pub log_node_weights: Vec<f64>,
    pub node_pmf: Vec<f64>,
    pub chosen_node: usize,
    pub candidate_set: Vec<usize>,
    pub inclusion_probs: Vec<f64>,
}

impl GraphRealization {
    /// Samples the graph, then the selective node, for the given weights.
    pub fn sample<G: Rng + ?Sized, N: Rng + ?Sized>(
        params: &GraphParams,
        log_weights: &[f64],
        graph_rng: &mut G,
        node_rng: &mut N,
    ) -> Result<Self, GraphError> {
        let connection_pmf = connection_pmf_log(log_weights, params.eta_e)?;
        let adjacency = generate_graph(params, &connection_pmf, graph_rng)?;
        let log_node_weights = node_log_weights(&adjacency, log_weights)?;
        let node_pmf = node_pmf(&log_node_weights);
        let (chosen_node, candidate_set) =
            select_node_and_candidates(&adjacency, &node_pmf, node_rng)?;
        let inclusion_probs = inclusion_probability(&node_pmf, &connection_pmf, params.n_trials);
        Ok(Self {
            adjacency,
            connection_pmf,
            log_node_weights,
            node_pmf,
            chosen_node,
            candidate_set,
            inclusion_probs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, RngStream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const DRAWS: usize = 100_000;

    fn params(m: usize, j: usize, n: usize, eta_e: f64) -> GraphParams {
        GraphParams {
            n_models: m,
            n_selective: j,
            n_trials: n,
            eta_e,
        }
    }

    fn within_three_se(count: usize, draws: usize, p: f64) -> bool {
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        (count as f64 / draws as f64 - p).abs() <= 3.0 * se
    }

    #[test]
    fn connection_pmf_examples() {
        let uniform = connection_pmf(&[5.0, 1.0, 0.2, 3.0], 1.0).unwrap();
        for p in uniform {
            assert_abs_diff_eq!(p, 0.25, epsilon = 1e-12);
        }
        let p = connection_pmf(&[2.0, 1.0, 1.0], 0.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);
        for p in connection_pmf(&[3.0; 5], 0.37).unwrap() {
            assert_abs_diff_eq!(p, 0.2, epsilon = 1e-12);
        }
        assert!(matches!(
            connection_pmf(&[0.0, 0.0], 0.5),
            Err(GraphError::NonPositiveWeight { .. })
        ));
        assert!(matches!(
            connection_pmf(&[], 0.5),
            Err(GraphError::NoModels)
        ));
        assert!(connection_pmf(&[1.0], 1.5).is_err());
    }

    #[test]
    fn single_trial_single_node_has_one_edge() {
        let mut rng = stream_rng(3, RngStream::Graph);
        let adj = generate_graph(&params(6, 1, 1, 0.0), &[1.0 / 6.0; 6], &mut rng).unwrap();
        assert_eq!(adj.degree(0), 1);
    }

    #[test]
    fn graph_is_deterministic_per_seed() {
        let p = params(5, 4, 3, 0.2);
        let pmf = connection_pmf(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.2).unwrap();
        let a = generate_graph(&p, &pmf, &mut stream_rng(11, RngStream::Graph)).unwrap();
        let b = generate_graph(&p, &pmf, &mut stream_rng(11, RngStream::Graph)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_trial_connection_frequency() {
        let p = params(2, 1, 2, 0.0);
        let mut rng = stream_rng(5, RngStream::Graph);
        let hits = (0..DRAWS)
            .filter(|_| {
                generate_graph(&p, &[0.5, 0.5], &mut rng)
                    .unwrap()
                    .is_connected(0, 0)
            })
            .count();
        assert!(within_three_se(hits, DRAWS, 0.75), "{hits}");
    }

    #[test]
    fn node_weight_examples() {
        let adj = Adjacency::from_rows(3, &[&[0, 1], &[2]]).unwrap();
        assert_eq!(
            node_weights(&adj, &[2.0, 1.0, 4.0]).unwrap(),
            vec![3.0, 4.0]
        );
        let full = Adjacency::from_rows(3, &[&[0, 1, 2]]).unwrap();
        assert_eq!(node_weights(&full, &[2.0, 1.0, 4.0]).unwrap(), vec![7.0]);
        let dup = Adjacency::from_rows(3, &[&[1, 1, 1]]).unwrap();
        assert_eq!(node_weights(&dup, &[2.0, 1.0, 4.0]).unwrap(), vec![1.0]);
        let hole = Adjacency::from_rows(3, &[&[0], &[]]).unwrap();
        assert!(matches!(
            node_weights(&hole, &[1.0; 3]),
            Err(GraphError::EmptyRow(1))
        ));

        let logs = node_log_weights(&adj, &[2f64.ln(), 0.0, 4f64.ln()]).unwrap();
        assert_abs_diff_eq!(logs[0].exp(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(logs[1].exp(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn node_selection_frequency() {
        let adj = Adjacency::from_rows(2, &[&[0], &[1]]).unwrap();
        let pmf = node_pmf(&[3f64.ln(), 0.0]);
        let mut rng = stream_rng(9, RngStream::Node);
        let mut hits = 0;
        for _ in 0..DRAWS {
            let (j, cands) = select_node_and_candidates(&adj, &pmf, &mut rng).unwrap();
            assert_eq!(cands, adj.neighbours(j));
            hits += usize::from(j == 0);
        }
        assert!(within_three_se(hits, DRAWS, 0.75), "{hits}");

        let single = Adjacency::from_rows(2, &[&[0, 1]]).unwrap();
        let (j, c) = select_node_and_candidates(&single, &[1.0], &mut rng).unwrap();
        assert_eq!((j, c), (0, vec![0, 1]));
    }

    #[test]
    fn model_selection_frequency() {
        let mut rng = stream_rng(13, RngStream::Model);
        let w = [2.0, 1.0, 4.0];
        let hits = (0..DRAWS)
            .filter(|_| select_model(&[0, 1], &w, &mut rng).unwrap() == 0)
            .count();
        assert!(within_three_se(hits, DRAWS, 2.0 / 3.0), "{hits}");
        assert_eq!(select_model(&[2], &w, &mut rng).unwrap(), 2);
        assert!(matches!(
            select_model(&[], &w, &mut rng),
            Err(GraphError::EmptyCandidates)
        ));

        let eq = [1.0; 4];
        let hits = (0..DRAWS)
            .filter(|_| select_model(&[1, 3], &eq, &mut rng).unwrap() == 3)
            .count();
        assert!(within_three_se(hits, DRAWS, 0.5), "{hits}");
    }

    #[test]
    fn inclusion_examples() {
        let q = inclusion_probability(&[1.0], &[0.3, 0.7], 1);
        assert_abs_diff_eq!(q[0], 0.3, epsilon = 1e-12);
        let q = inclusion_probability(&[0.4, 0.6], &[0.5, 0.5], 2);
        assert_abs_diff_eq!(q[0], 0.75, epsilon = 1e-12);
        let q = inclusion_probability(&[0.5, 0.5], &[1.0, 0.0], 7);
        assert_abs_diff_eq!(q[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn log_weights_survive_extreme_gaps() {
        let lw = [0.0, -5000.0, -5000.0];
        let adj = Adjacency::from_rows(3, &[&[1, 2], &[0]]).unwrap();
        let pmf = node_pmf(&node_log_weights(&adj, &lw).unwrap());
        assert!(pmf.iter().all(|p| p.is_finite()));
        let mut rng = stream_rng(1, RngStream::Model);
        let m = select_model_log(&[1, 2], &lw, &mut rng).unwrap();
        assert!(m == 1 || m == 2);
    }

    #[test]
    fn full_exploration_ignores_weights() {
        let p = params(3, 2, 2, 1.0);
        let a = connection_pmf(&[100.0, 1.0, 0.01], 1.0).unwrap();
        let b = connection_pmf(&[1.0, 1.0, 1.0], 1.0).unwrap();
        let ga = generate_graph(&p, &a, &mut stream_rng(4, RngStream::Graph)).unwrap();
        let gb = generate_graph(&p, &b, &mut stream_rng(4, RngStream::Graph)).unwrap();
        assert_eq!(ga, gb);
    }

    proptest! {
        #[test]
        fn realization_invariants(
            log_w in prop::collection::vec(-30.0f64..5.0, 1..12),
            j in 1usize..6,
            n in 1usize..6,
            eta_e in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let p = params(log_w.len(), j, n, eta_e);
            let r = GraphRealization::sample(
                &p, &log_w,
                &mut stream_rng(seed, RngStream::Graph),
                &mut stream_rng(seed, RngStream::Node),
            ).unwrap();
            for pmf in [&r.connection_pmf, &r.node_pmf] {
                prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(pmf.iter().all(|&p| p >= 0.0));
            }
            for row in 0..j {
                let d = r.adjacency.degree(row);
                prop_assert!((1..=n).contains(&d));
            }
            prop_assert_eq!(&r.candidate_set, &r.adjacency.neighbours(r.chosen_node));
            prop_assert!(!r.candidate_set.is_empty() && r.candidate_set.len() <= n);
            for &m in &r.candidate_set {
                prop_assert!(r.inclusion_probs[m] > 0.0 && r.inclusion_probs[m] <= 1.0 + 1e-12);
            }
        }
    }
}
