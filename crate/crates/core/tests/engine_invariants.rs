use gmocp_core::data_io::{generate_stream, DriftProfile, SyntheticSpec};
use gmocp_core::engine::{gmocp_run, mocp_run, single_run, Method, OnlineConformal, RunConfig};
use proptest::prelude::*;

fn stream(models: usize, labels: usize, length: usize, seed: u64) -> gmocp_core::data_io::Stream {
    generate_stream(&SyntheticSpec {
        n_labels: labels,
        length,
        model_names: (0..models).map(|m| format!("m{m}")).collect(),
        drift: DriftProfile::stationary((0..models).map(|m| 0.9 - 0.1 * m as f64).collect()),
        seed,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_logs_are_consistent(
        models in 1usize..6,
        labels in 2usize..12,
        n in 1usize..5,
        j in 1usize..4,
        seed in 0u64..1000,
        alpha in 0.05f64..0.5,
    ) {
        let s = stream(models, labels, 150, seed);
        let cfg = RunConfig { n_trials: n, n_selective: j, seed, alpha_target: alpha, warmup: 10, ..RunConfig::default() };
        for report in [gmocp_run(&s, &cfg).unwrap(), mocp_run(&s, &cfg).unwrap(), single_run(&s, &cfg, models - 1).unwrap()] {
            prop_assert_eq!(report.per_step.len(), 140);
            prop_assert!(report.per_step.iter().enumerate().all(|(i, st)| st.t == i + 1));
            prop_assert!(report.per_step.iter().all(|st| st.set_size <= labels && st.chosen_model < models));
            prop_assert!(report.per_step.iter().all(|st| (0.0..=1.0).contains(&st.alpha_of_chosen)));
            let updates: u64 = report.per_step.iter().map(|st| st.updates_performed as u64).sum();
            prop_assert_eq!(updates, report.updates_total);
            match report.config.method {
                Method::Gmocp => prop_assert!(report.per_step.iter().all(|st| (1..=n.min(models)).contains(&st.updates_performed))),
                Method::Mocp => prop_assert!(report.per_step.iter().all(|st| st.updates_performed == models)),
                Method::Single(m) => prop_assert!(report.per_step.iter().all(|st| st.updates_performed == 1 && st.chosen_model == m)),
            }
        }
    }
}

#[test]
fn empty_and_full_sets_follow_the_clamps() {
    let s = stream(2, 5, 40, 3);
    let mut engine = OnlineConformal::new(
        RunConfig {
            seed: 1,
            ..RunConfig::default()
        },
        2,
        5,
    )
    .unwrap();
    let first = engine.step(&s.records[0]).unwrap();
    assert_eq!(first.set_size, 5);
    assert!(first.covered);
}

#[test]
fn weights_move_only_for_importance_weighted_candidates() {
    let s = stream(4, 10, 200, 9);
    let mut engine = OnlineConformal::new(
        RunConfig {
            n_trials: 2,
            n_selective: 2,
            ..RunConfig::default()
        },
        4,
        10,
    )
    .unwrap();
    let mut touched = [false; 4];
    for r in &s.records {
        let before: Vec<f64> = engine.models().iter().map(|m| m.log_weight()).collect();
        let raw = engine.step(r).unwrap();
        for (m, state) in engine.models().iter().enumerate() {
            if state.log_weight() != before[m] {
                assert!(raw.candidates.contains(&m));
                touched[m] = true;
            }
            assert!(state.log_weight() <= before[m]);
        }
    }
    assert!(touched.iter().all(|&t| t));
}
