//! Finite normal-form games over an explicit list of joint decision sets.

use serde::{Deserialize, Serialize};

use crate::env::JointDistribution;
use crate::error::{invalid, Error, Result};

/// Tolerance on the unit sum of a payoff vector.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Inputs whose sum is within this of one are rescaled (with a warning).
pub const RENORMALIZE_TOL: f64 = 1e-6;

/// One joint outcome: a pure decision per player, `p_1` first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSet {
    /// Zero-based position in the game's decision-set order.
    pub index: usize,
    pub decisions: Vec<usize>,
    pub labels: Vec<String>,
}

/// A player's utility per decision set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PayoffVector(Vec<f64>);

impl PayoffVector {
    /// Wraps raw values without checking normalization; see [`validate_game`].
    pub fn from_raw(values: Vec<f64>) -> Self {
        PayoffVector(values)
    }

    /// Ingestion path: rejects negative or non-finite entries and sums off
    /// by more than [`RENORMALIZE_TOL`]; rescales sums that are close.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if let Some((h, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(invalid(format!("payoff entry {} is {v}; entries must be finite and >= 0", h + 1)));
        }
        let sum: f64 = values.iter().sum();
        let gap = (sum - 1.0).abs();
        if gap <= NORMALIZATION_TOL {
            Ok(PayoffVector(values))
        } else if gap <= RENORMALIZE_TOL {
            log::warn!("payoff vector sums to {sum}; renormalizing");
            Ok(PayoffVector(values.into_iter().map(|v| v / sum).collect()))
        } else {
            Err(invalid(format!("payoff vector sums to {sum}, expected 1")))
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, h: usize) -> f64 {
        self.0[h]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFormGame {
    players: Vec<String>,
    menus: Vec<Vec<String>>,
    decision_sets: Vec<DecisionSet>,
    payoffs: Vec<Option<PayoffVector>>,
}

impl NormalFormGame {
    /// `payoffs[i]` is `None` when player `i`'s vector is unknown.
    pub fn new(players: Vec<String>, menus: Vec<Vec<String>>, payoffs: Vec<Option<PayoffVector>>) -> Result<Self> {
        if players.len() < 2 {
            return Err(invalid("a game needs at least two players"));
        }
        if menus.len() != players.len() || payoffs.len() != players.len() {
            return Err(invalid("players, decisions and payoffs must have one entry per player"));
        }
        for (i, p) in players.iter().enumerate() {
            if players[..i].contains(p) {
                return Err(invalid(format!("duplicate player id `{p}`")));
            }
        }
        if let Some(i) = menus.iter().position(|m| m.is_empty()) {
            return Err(invalid(format!("player `{}` has no decisions", players[i])));
        }
        let h: usize = menus.iter().map(Vec::len).product();
        for (p, v) in players.iter().zip(&payoffs) {
            if let Some(v) = v {
                if v.len() != h {
                    return Err(invalid(format!("payoff vector of `{p}` has {} entries, expected {h}", v.len())));
                }
            }
        }
        let mut decision_sets = Vec::with_capacity(h);
        for index in 0..h {
            let decisions = decode(&menus, index);
            let labels = decisions.iter().zip(&menus).map(|(&d, m)| m[d].clone()).collect();
            decision_sets.push(DecisionSet { index, decisions, labels });
        }
        Ok(NormalFormGame { players, menus, decision_sets, payoffs })
    }

    /// Two players with `rows x cols` menus labelled `r1.. / c1..`.
    pub fn bimatrix(row: Option<Vec<f64>>, col: Option<Vec<f64>>, rows: usize, cols: usize) -> Result<Self> {
        let menus = vec![
            (1..=rows).map(|i| format!("r{i}")).collect(),
            (1..=cols).map(|i| format!("c{i}")).collect(),
        ];
        NormalFormGame::new(
            vec!["p1".into(), "p2".into()],
            menus,
            vec![row.map(PayoffVector::from_raw), col.map(PayoffVector::from_raw)],
        )
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    pub fn menus(&self) -> &[Vec<String>] {
        &self.menus
    }

    pub fn num_decision_sets(&self) -> usize {
        self.decision_sets.len()
    }

    pub fn decision_sets(&self) -> &[DecisionSet] {
        &self.decision_sets
    }

    pub fn player_index(&self, id: &str) -> Result<usize> {
        self.players
            .iter()
            .position(|p| p == id)
            .ok_or_else(|| invalid(format!("no player `{id}`")))
    }

    pub fn payoff(&self, player: usize) -> Option<&PayoffVector> {
        self.payoffs[player].as_ref()
    }

    pub fn require_payoff(&self, player: usize) -> Result<&PayoffVector> {
        self.payoff(player).ok_or_else(|| Error::UnknownPayoff(self.players[player].clone()))
    }

    pub fn with_payoff(&self, player: usize, payoff: Option<PayoffVector>) -> Result<Self> {
        let mut payoffs = self.payoffs.clone();
        payoffs[player] = payoff;
        NormalFormGame::new(self.players.clone(), self.menus.clone(), payoffs)
    }

    /// Row-major index with player 1 outermost.
    pub fn cell_index(&self, decisions: &[usize]) -> usize {
        decisions.iter().zip(&self.menus).fold(0, |acc, (&d, m)| acc * m.len() + d)
    }

    /// The two-player game between `a` and `b` with every other player held
    /// at the decision given in `fixed` (indexed by player; entries for `a`
    /// and `b` are ignored).
    pub fn view(&self, a: usize, b: usize, fixed: &[usize]) -> Result<GameView> {
        if a == b || a >= self.num_players() || b >= self.num_players() {
            return Err(invalid(format!("bad player pair ({a}, {b})")));
        }
        if fixed.len() != self.num_players() {
            return Err(invalid("fixed decisions must have one entry per player"));
        }
        let rows = self.menus[a].len();
        let cols = self.menus[b].len();
        let mut cells = Vec::with_capacity(rows * cols);
        let mut profile = fixed.to_vec();
        for r in 0..rows {
            for c in 0..cols {
                profile[a] = r;
                profile[b] = c;
                cells.push(self.cell_index(&profile));
            }
        }
        Ok(GameView { row_player: a, col_player: b, rows, cols, cells })
    }
}

fn decode(menus: &[Vec<String>], mut index: usize) -> Vec<usize> {
    let mut out = vec![0; menus.len()];
    for (slot, m) in out.iter_mut().zip(menus).rev() {
        *slot = index % m.len();
        index /= m.len();
    }
    out
}

/// Cells of a two-player slice of a larger game, row-major over
/// `(row_player decision, col_player decision)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameView {
    pub row_player: usize,
    pub col_player: usize,
    pub rows: usize,
    pub cols: usize,
    /// Global decision-set index of each view cell.
    pub cells: Vec<usize>,
}

impl GameView {
    pub fn restrict(&self, v: &PayoffVector) -> Vec<f64> {
        self.cells.iter().map(|&h| v.get(h)).collect()
    }

    pub fn bimatrix(&self, game: &NormalFormGame) -> Result<Bimatrix> {
        let row = self.restrict(game.require_payoff(self.row_player)?);
        let col = self.restrict(game.require_payoff(self.col_player)?);
        Bimatrix::new(self.rows, self.cols, row, col)
    }
}

/// Two-player payoffs, row-major. Entries need not be normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bimatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_payoff: Vec<f64>,
    pub col_payoff: Vec<f64>,
}

impl Bimatrix {
    pub fn new(rows: usize, cols: usize, row_payoff: Vec<f64>, col_payoff: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || row_payoff.len() != rows * cols || col_payoff.len() != rows * cols {
            return Err(invalid(format!("bimatrix shape {rows}x{cols} does not match payoff lengths")));
        }
        Ok(Bimatrix { rows, cols, row_payoff, col_payoff })
    }

    pub fn from_game(game: &NormalFormGame) -> Result<Self> {
        if game.num_players() != 2 {
            return Err(invalid(format!("expected a two-player game, got {} players", game.num_players())));
        }
        game.view(0, 1, &[0, 0])?.bimatrix(game)
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn at(&self, r: usize, c: usize) -> (f64, f64) {
        let k = r * self.cols + c;
        (self.row_payoff[k], self.col_payoff[k])
    }

    /// Payoff of `player` (0 = row, 1 = column) in cell `k`.
    pub fn payoff(&self, player: usize, k: usize) -> f64 {
        if player == 0 {
            self.row_payoff[k]
        } else {
            self.col_payoff[k]
        }
    }
}

/// Σ_h ρ_h · v_h.
pub fn expected_reward(state: &JointDistribution, payoff: &PayoffVector) -> Result<f64> {
    if state.len() != payoff.len() {
        return Err(invalid(format!(
            "state has {} components but payoff has {}",
            state.len(),
            payoff.len()
        )));
    }
    Ok(state.probs().iter().zip(payoff.values()).map(|(p, v)| p * v).sum())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub normalization: Vec<String>,
    pub restriction: Vec<String>,
    /// Equilibrium count of the two-player game; `None` for other player
    /// counts or when a payoff is unknown.
    pub equilibria: Option<usize>,
    pub admits_multiple_equilibria: Option<bool>,
}

impl ValidationReport {
    pub fn normalization_ok(&self) -> bool {
        self.normalization.is_empty()
    }

    pub fn restriction_ok(&self) -> bool {
        self.restriction.is_empty()
    }
}

/// Normalization, the unequal-reward restriction (own payoffs must differ
/// across own decisions whenever the others' decisions are fixed) and, for
/// two-player games, the equilibrium count.
pub fn validate_game(game: &NormalFormGame) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (i, id) in game.players().iter().enumerate() {
        let Some(v) = game.payoff(i) else { continue };
        for (h, &x) in v.values().iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                report.normalization.push(format!("{id}: entry {} is {x}", h + 1));
            }
        }
        let sum: f64 = v.values().iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            report.normalization.push(format!("{id}: entries sum to {sum}"));
        }
        for ds in game.decision_sets() {
            if ds.decisions[i] != 0 {
                continue;
            }
            let mut profile = ds.decisions.clone();
            let cells: Vec<usize> = (0..game.menus()[i].len())
                .map(|d| {
                    profile[i] = d;
                    game.cell_index(&profile)
                })
                .collect();
            for x in 0..cells.len() {
                for y in x + 1..cells.len() {
                    if v.get(cells[x]) == v.get(cells[y]) {
                        report.restriction.push(format!(
                            "{id}: v[{}] == v[{}] with the other players fixed",
                            cells[x] + 1,
                            cells[y] + 1
                        ));
                    }
                }
            }
        }
    }
    if game.num_players() == 2 {
        if let Ok(bm) = Bimatrix::from_game(game) {
            let n = crate::equilibrium::nash_equilibria(&bm).len();
            report.equilibria = Some(n);
            report.admits_multiple_equilibria = Some(n >= 2);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn decision_sets_are_row_major() {
        let g = fixtures::chicken();
        let labels: Vec<_> = g.decision_sets().iter().map(|d| d.labels.join(",")).collect();
        assert_eq!(labels, ["C,C", "C,D", "D,C", "D,D"]);
        let g3 = fixtures::three_player();
        assert_eq!(g3.num_decision_sets(), 8);
        assert_eq!(g3.decision_sets()[5].decisions, vec![1, 0, 1]);
        assert_eq!(g3.cell_index(&[1, 0, 1]), 5);
    }

    #[test]
    fn expected_reward_examples() {
        let v1 = fixtures::reference_game().payoff(0).unwrap().clone();
        let uniform = JointDistribution::uniform(4);
        assert!((expected_reward(&uniform, &v1).unwrap() - 0.25).abs() < 1e-12);
        let d2 = JointDistribution::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((expected_reward(&d2, &v1).unwrap() - 0.4286).abs() < 1e-12);
        let third = JointDistribution::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]).unwrap();
        // Reported to four decimals.
        assert!((expected_reward(&third, &v1).unwrap() - 0.3333).abs() < 5e-5);
        assert!(expected_reward(&JointDistribution::uniform(3), &v1).is_err());
    }

    #[test]
    fn validation_examples() {
        let r = validate_game(&fixtures::reference_game());
        assert!(r.normalization_ok() && r.restriction_ok());
        // Strictly dominant strategies on both sides: a single equilibrium.
        assert_eq!(r.equilibria, Some(1));

        let r = validate_game(&fixtures::chicken());
        assert!(r.normalization_ok() && r.restriction_ok());
        assert_eq!(r.equilibria, Some(3));

        let bad = NormalFormGame::bimatrix(Some(vec![0.5, 0.5, 0.5, -0.5]), None, 2, 2).unwrap();
        assert!(!validate_game(&bad).normalization_ok());

        let tie = NormalFormGame::bimatrix(Some(vec![0.3, 0.2, 0.3, 0.2]), None, 2, 2).unwrap();
        let r = validate_game(&tie);
        assert!(r.normalization_ok());
        assert!(!r.restriction_ok());
    }

    #[test]
    fn ingestion_renormalizes_close_sums() {
        let v = PayoffVector::normalized(vec![0.3571, 0.4286, 0.2143, 0.0]).unwrap();
        assert!((v.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let v = PayoffVector::normalized(vec![0.25, 0.25, 0.25, 0.2500005]).unwrap();
        assert!((v.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(PayoffVector::normalized(vec![0.5, 0.6]).is_err());
        assert!(PayoffVector::normalized(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn views_pick_the_right_cells() {
        let g = fixtures::three_player();
        let v = g.view(0, 2, &[0, 1, 0]).unwrap();
        // p1 x p3 with p2 fixed to its second decision.
        assert_eq!(v.cells, vec![2, 3, 6, 7]);
        let v = g.view(1, 2, &[1, 0, 0]).unwrap();
        assert_eq!(v.cells, vec![4, 5, 6, 7]);
    }
}
