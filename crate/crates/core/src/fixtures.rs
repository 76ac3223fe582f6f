//! Reference games used by tests, benches and the CLI.

use rand::Rng;

use crate::game::{NormalFormGame, PayoffVector};

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn two_player(menus: [&[&str]; 2], v1: Vec<f64>, v2: Vec<f64>) -> NormalFormGame {
    NormalFormGame::new(
        labels(&["p1", "p2"]),
        vec![labels(menus[0]), labels(menus[1])],
        vec![Some(PayoffVector::from_raw(v1)), Some(PayoffVector::from_raw(v2))],
    )
    .expect("fixture is well formed")
}

/// The U/D x L/R game used in the reference experiment.
pub fn reference_game() -> NormalFormGame {
    two_player(
        [&["U", "D"], &["L", "R"]],
        vec![0.3571, 0.4286, 0.2143, 0.0],
        vec![0.3571, 0.2143, 0.4286, 0.0],
    )
}

/// Chicken with payoffs (6,6) (2,7) (7,2) (0,0), each side scaled by 1/15.
pub fn chicken() -> NormalFormGame {
    two_player(
        [&["C", "D"], &["C", "D"]],
        vec![6.0 / 15.0, 2.0 / 15.0, 7.0 / 15.0, 0.0],
        vec![6.0 / 15.0, 7.0 / 15.0, 2.0 / 15.0, 0.0],
    )
}

/// Normalized matching-pennies-style game: no pure equilibrium.
pub fn matching_pennies() -> NormalFormGame {
    two_player(
        [&["H", "T"], &["H", "T"]],
        vec![0.5, 0.0, 0.0, 0.5],
        vec![0.0, 0.5, 0.5, 0.0],
    )
}

/// Prisoner's-dilemma-like game: defection strictly dominant for both.
pub fn prisoners_dilemma() -> NormalFormGame {
    // (3,3) (0,5) (5,0) (1,1)
    two_player(
        [&["C", "D"], &["C", "D"]],
        vec![3.0 / 9.0, 0.0, 5.0 / 9.0, 1.0 / 9.0],
        vec![3.0 / 9.0, 5.0 / 9.0, 0.0, 1.0 / 9.0],
    )
}

fn three_player_game(raw: [[f64; 8]; 3]) -> NormalFormGame {
    let menus = vec![labels(&["C", "D"]), labels(&["C", "D"]), labels(&["C", "D"])];
    let payoffs = raw
        .iter()
        .map(|v| {
            let sum: f64 = v.iter().sum();
            Some(PayoffVector::from_raw(v.iter().map(|x| x / sum).collect()))
        })
        .collect();
    NormalFormGame::new(labels(&["p1", "p2", "p3"]), menus, payoffs).expect("fixture is well formed")
}

/// Three players with C/D menus, cells ordered `(p1, p2, p3)` with p3
/// fastest. Each player's best response is C exactly when the other two
/// agree, so every pairwise slice has two pure equilibria: coordination
/// when the fixed player plays C, anti-coordination when it plays D. In
/// every slice one of the two equilibria is better for both players
/// (all-C first, then CDD, DCD, DDC).
pub fn three_player() -> NormalFormGame {
    three_player_game([
        [10.0, 1.0, 1.0, 8.0, 2.0, 6.0, 4.0, 3.0],
        [10.0, 1.0, 2.0, 8.0, 1.0, 6.0, 4.0, 3.0],
        [10.0, 2.0, 1.0, 8.0, 1.0, 6.0, 4.0, 3.0],
    ])
}

/// Three players whose utility depends on their own decision and the
/// number of others playing D. Slices are chicken when the fixed player
/// plays C and coordination when it plays D.
pub fn three_player_chicken() -> NormalFormGame {
    let utility = |own: usize, daring_others: usize| -> f64 {
        match (own, daring_others) {
            (0, 0) => 6.0,
            (0, 1) => 2.0,
            (0, _) => 1.0,
            (_, 0) => 7.0,
            (_, 1) => 0.0,
            _ => 1.5,
        }
    };
    let mut raw = [[0.0; 8]; 3];
    for (i, v) in raw.iter_mut().enumerate() {
        for (h, x) in v.iter_mut().enumerate() {
            let profile = [(h >> 2) & 1, (h >> 1) & 1, h & 1];
            let others = (0..3).filter(|&j| j != i && profile[j] == 1).count();
            *x = utility(profile[i], others);
        }
    }
    three_player_game(raw)
}

fn random_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// A random normalized 2x2 game satisfying the unequal-reward restriction.
pub fn random_2x2<R: Rng + ?Sized>(rng: &mut R) -> NormalFormGame {
    loop {
        let g = two_player([&["U", "D"], &["L", "R"]], random_vector(rng, 4), random_vector(rng, 4));
        if crate::game::validate_game(&g).restriction_ok() {
            return g;
        }
    }
}

/// Like [`random_2x2`] but rejecting games with fewer than two equilibria.
pub fn random_2x2_multiple_equilibria<R: Rng + ?Sized>(rng: &mut R) -> NormalFormGame {
    loop {
        let g = random_2x2(rng);
        if crate::game::validate_game(&g).admits_multiple_equilibria == Some(true) {
            return g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::nash_equilibria;
    use crate::game::validate_game;

    #[test]
    fn three_player_slices_have_two_pure_equilibria() {
        for g in [three_player(), three_player_chicken()] {
            assert!(validate_game(&g).restriction_ok());
            for (a, b, c) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
                for d in 0..2 {
                    let mut fixed = vec![0; 3];
                    fixed[c] = d;
                    let bm = g.view(a, b, &fixed).unwrap().bimatrix(&g).unwrap();
                    assert_eq!(nash_equilibria(&bm).len(), 3, "slice ({a}, {b}) with {c} at {d}");
                }
            }
        }
    }
}
