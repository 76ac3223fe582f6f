use celab::env::{apply_action, enumerate_actions, JointDistribution};
use celab::equilibrium::ce_solve_max_welfare;
use celab::estimation::{estimate_payoff, reorder, EstimationOptions, ViewShape, ROW_SLACK};
use celab::fixtures;
use celab::game::Bimatrix;
use celab::lp::LpStatus;
use celab::training::{standardize, SIGMA_EPS};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn simplex(h: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, h).prop_map(|raw| {
        let s: f64 = raw.iter().sum::<f64>().max(1e-12);
        let mut p: Vec<f64> = raw.iter().map(|x| x / s).collect();
        if p.iter().sum::<f64>() == 0.0 {
            p[0] = 1.0;
        }
        p
    })
}

fn reward_grid() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..12, 1usize..8).prop_flat_map(|(m, n)| {
        prop::collection::vec(
            prop::collection::vec(prop_oneof![3 => -2.0f64..2.0, 1 => Just(0.25)], n),
            m,
        )
    })
}

proptest! {
    #[test]
    fn standardized_columns_are_centred_and_scaled(grid in reward_grid()) {
        let out = standardize(&grid);
        let m = grid.len() as f64;
        for n in 0..grid[0].len() {
            let col: Vec<f64> = grid.iter().map(|r| r[n]).collect();
            let mean = col.iter().sum::<f64>() / m;
            let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m).sqrt();
            let z: Vec<f64> = out.iter().map(|r| r[n]).collect();
            if sd <= SIGMA_EPS {
                prop_assert!(z.iter().all(|&v| v == 0.0));
            } else {
                let zm = z.iter().sum::<f64>() / m;
                let zs = (z.iter().map(|x| (x - zm).powi(2)).sum::<f64>() / m).sqrt();
                prop_assert!(zm.abs() < 1e-9);
                prop_assert!((zs - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn actions_keep_states_on_the_simplex(
        (h, start, picks) in (2usize..6).prop_flat_map(|h| (Just(h), simplex(h), prop::collection::vec(any::<prop::sample::Index>(), 1..40))),
        theta in prop_oneof![Just(0.02), Just(0.05), Just(0.25), Just(0.5)],
    ) {
        let actions = enumerate_actions(h, theta).unwrap();
        let mut s = JointDistribution::new(start).unwrap();
        for pick in picks {
            let j = pick.index(actions.len());
            let next = apply_action(&s, actions.deltas(j));
            prop_assert!(next.probs().iter().all(|&x| x >= 0.0));
            prop_assert!((next.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in s.probs()[..h - 1].iter().zip(&next.probs()[..h - 1]) {
                prop_assert!((a - b).abs() <= theta + 1e-12);
            }
            s = next;
        }
        let still = apply_action(&s, actions.deltas(actions.identity_index()));
        prop_assert_eq!(still.probs(), s.probs());
    }

    #[test]
    fn reorder_permutation_round_trips(v in prop::collection::vec(0.0f64..1.0, 2..9), rotated: bool) {
        let h = v.len();
        let p = JointDistribution::uniform(h);
        let view = reorder(&v, &p, None, rotated).unwrap();
        prop_assert!(view.v_bar_main.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(view.unpermute(&view.v_bar_main), v.clone());
        let mut idx = view.opponent_index.clone();
        idx.sort_unstable();
        prop_assert_eq!(idx, (0..h).collect::<Vec<_>>());
    }

    #[test]
    fn feasible_estimates_satisfy_every_row(seed in any::<u64>(), known_role in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let game = fixtures::random_2x2_multiple_equilibria(&mut rng);
        let bm = Bimatrix::from_game(&game).unwrap();
        let p = ce_solve_max_welfare(&bm).unwrap().distribution;
        let known = if known_role == 0 { bm.row_payoff.clone() } else { bm.col_payoff.clone() };
        let shape = ViewShape { rows: 2, cols: 2, known_role };
        let report = estimate_payoff(&known, &p, shape, None, EstimationOptions::default()).unwrap();
        if report.status == LpStatus::Optimal {
            let x = report.estimate.as_ref().unwrap();
            prop_assert!(x.iter().all(|&v| v >= -ROW_SLACK));
            prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(report.min_slack().unwrap() >= -ROW_SLACK);
        } else {
            prop_assert!(report.infeasibility.is_some());
        }
    }
}
