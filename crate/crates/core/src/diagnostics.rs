//! Monte Carlo estimates over repeated graph realizations.
//!
//! Used to check the inclusion probabilities and the importance-weighted
//! loss estimates against their closed forms. Draws are split into fixed
//! chunks with their own seeds, so the estimate does not depend on how
//! many threads run it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adaptation::importance_loss;
use crate::graph::{
    connection_pmf_log, generate_graph, inclusion_probability, node_log_weights, node_pmf,
    select_node_and_candidates, GraphError, GraphParams,
};
use crate::runner::{map_batch, Execution};

const CHUNK: usize = 4096;

/// How the selective node is picked in each realization.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeSampling {
    /// A fixed PMF over selective nodes, independent of the sampled graph.
    Fixed(Vec<f64>),
    /// The weight-proportional PMF of the sampled graph itself.
    Realized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InclusionEstimate {
    pub draws: usize,
    /// Fraction of realizations in which each model was a candidate.
    pub frequencies: Vec<f64>,
    /// Average importance-weighted loss per model.
    pub mean_importance_loss: Vec<f64>,
    /// `1 - (1 - p_m)^N` for the connection PMF in use.
    pub closed_form: Vec<f64>,
}

/// Samples `draws` graphs and candidate sets for fixed weights and losses.
pub fn estimate_inclusion(
    params: &GraphParams,
    log_weights: &[f64],
    losses: &[f64],
    nodes: &NodeSampling,
    draws: usize,
    seed: u64,
    exec: Execution,
) -> Result<InclusionEstimate, GraphError> {
    params.validate()?;
    let conn = connection_pmf_log(log_weights, params.eta_e)?;
    if losses.len() != conn.len() {
        return Err(GraphError::DimensionMismatch {
            expected: conn.len(),
            found: losses.len(),
        });
    }
    if let NodeSampling::Fixed(p) = nodes {
        if p.len() != params.n_selective {
            return Err(GraphError::DimensionMismatch {
                expected: params.n_selective,
                found: p.len(),
            });
        }
    }
    let closed_form = inclusion_probability(&[1.0], &conn, params.n_trials);
    let chunks: Vec<(u64, usize)> = (0..draws.div_ceil(CHUNK))
        .map(|c| (c as u64, CHUNK.min(draws - c * CHUNK)))
        .collect();
    let m = conn.len();

    let partials = map_batch(
        &chunks,
        exec,
        |&(chunk, size)| -> Result<(Vec<usize>, Vec<f64>), GraphError> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let mut hits = vec![0usize; m];
            let mut loss_sum = vec![0.0; m];
            for _ in 0..size {
                let adj = generate_graph(params, &conn, &mut rng)?;
                let pmf = match nodes {
                    NodeSampling::Fixed(p) => p.clone(),
                    NodeSampling::Realized => node_pmf(&node_log_weights(&adj, log_weights)?),
                };
                let q = inclusion_probability(&pmf, &conn, params.n_trials);
                let (_, candidates) = select_node_and_candidates(&adj, &pmf, &mut rng)?;
                for &c in &candidates {
                    hits[c] += 1;
                    loss_sum[c] += importance_loss(losses[c], q[c], true)
                        .map_err(|_| GraphError::InvalidPmf)?;
                }
            }
            Ok((hits, loss_sum))
        },
    );

    let mut hits = vec![0usize; m];
    let mut loss_sum = vec![0.0; m];
    for part in partials {
        let (h, l) = part?;
        for i in 0..m {
            hits[i] += h[i];
            loss_sum[i] += l[i];
        }
    }
    let n = draws.max(1) as f64;
    Ok(InclusionEstimate {
        draws,
        frequencies: hits.iter().map(|&h| h as f64 / n).collect(),
        mean_importance_loss: loss_sum.iter().map(|&l| l / n).collect(),
        closed_form,
    })
}
