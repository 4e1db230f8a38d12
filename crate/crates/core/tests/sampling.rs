use gmocp_core::diagnostics::{estimate_inclusion, NodeSampling};
use gmocp_core::graph::GraphParams;
use gmocp_core::runner::Execution;

const DRAWS: usize = 200_000;
const LOG_WEIGHTS: [f64; 6] = [0.0, -0.5, 0.8, -1.5, 0.3, -2.5];

fn se(q: f64) -> f64 {
    (q * (1.0 - q) / DRAWS as f64).sqrt()
}

#[test]
fn fixed_node_inclusion_matches_closed_form_across_grid() {
    // 4 SE per comparison keeps the whole grid's false-alarm rate below 0.2%.
    for (n, j, pmf) in [
        (1, 1, vec![1.0]),
        (2, 3, vec![0.2, 0.5, 0.3]),
        (5, 2, vec![0.9, 0.1]),
        (8, 4, vec![0.25; 4]),
    ] {
        let params = GraphParams {
            n_models: 6,
            n_selective: j,
            n_trials: n,
            eta_e: 0.2,
        };
        let est = estimate_inclusion(
            &params,
            &LOG_WEIGHTS,
            &[1.0; 6],
            &NodeSampling::Fixed(pmf),
            DRAWS,
            11,
            Execution::Parallel,
        )
        .unwrap();
        for m in 0..6 {
            let (f, q) = (est.frequencies[m], est.closed_form[m]);
            assert!(
                (f - q).abs() <= 4.0 * se(q),
                "N={n} J={j} m={m}: {f} vs {q}"
            );
            assert!((est.mean_importance_loss[m] - f / q).abs() < 1e-9);
        }
    }
}

#[test]
fn realized_node_pmf_favours_heavy_models() {
    // With the node PMF taken from the sampled graph, nodes holding heavy
    // models are picked more often, so the closed form understates their
    // inclusion and overstates that of light models.
    let params = GraphParams {
        n_models: 6,
        n_selective: 4,
        n_trials: 1,
        eta_e: 0.2,
    };
    let est = estimate_inclusion(
        &params,
        &LOG_WEIGHTS,
        &[1.0; 6],
        &NodeSampling::Realized,
        DRAWS,
        12,
        Execution::Parallel,
    )
    .unwrap();
    let z = |m: usize| (est.frequencies[m] - est.closed_form[m]) / se(est.closed_form[m]);
    assert!(z(2) > 10.0, "heaviest model z = {}", z(2));
    assert!(z(5) < -10.0, "lightest model z = {}", z(5));
}

#[test]
fn single_node_graphs_are_unbiased_even_when_realized() {
    let params = GraphParams {
        n_models: 6,
        n_selective: 1,
        n_trials: 3,
        eta_e: 0.2,
    };
    let est = estimate_inclusion(
        &params,
        &LOG_WEIGHTS,
        &[1.0; 6],
        &NodeSampling::Realized,
        DRAWS,
        13,
        Execution::Parallel,
    )
    .unwrap();
    for m in 0..6 {
        let q = est.closed_form[m];
        assert!((est.frequencies[m] - q).abs() <= 4.0 * se(q));
    }
}

#[test]
fn sequential_fallback_matches_parallel() {
    let params = GraphParams {
        n_models: 6,
        n_selective: 3,
        n_trials: 2,
        eta_e: 0.1,
    };
    let nodes = NodeSampling::Realized;
    let a = estimate_inclusion(
        &params,
        &LOG_WEIGHTS,
        &[0.3; 6],
        &nodes,
        20_000,
        1,
        Execution::Sequential,
    )
    .unwrap();
    let b = estimate_inclusion(
        &params,
        &LOG_WEIGHTS,
        &[0.3; 6],
        &nodes,
        20_000,
        1,
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(a, b);
}
