//! Nash and correlated equilibria of two-player views.

use serde::{Deserialize, Serialize};

use crate::env::JointDistribution;
use crate::error::{precondition, Error, Result};
use crate::game::Bimatrix;
use crate::lp::{solve_lp, LinearProgram, LpStatus};

/// Slack allowed when comparing payoffs for best responses.
const BEST_RESPONSE_SLACK: f64 = 1e-12;
/// Slack allowed on correlated-equilibrium deviation rows.
pub const CE_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NashKind {
    Pure,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashEquilibrium {
    pub kind: NashKind,
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
    /// Expected payoffs (row, column).
    pub payoffs: (f64, f64),
}

impl NashEquilibrium {
    pub fn welfare(&self) -> f64 {
        self.payoffs.0 + self.payoffs.1
    }

    /// The product distribution over cells.
    pub fn joint(&self) -> JointDistribution {
        let mut p = Vec::with_capacity(self.row_strategy.len() * self.col_strategy.len());
        for r in &self.row_strategy {
            for c in &self.col_strategy {
                p.push(r * c);
            }
        }
        JointDistribution::with_tolerance(p, 1e-9).expect("product of simplex points")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeSolution {
    pub status: LpStatus,
    pub distribution: JointDistribution,
    pub welfare: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeCheck {
    pub is_ce: bool,
    /// Largest gain any player gets from a swap deviation (<= 0 when no
    /// deviation pays).
    pub max_violation: f64,
}

fn player_menu(bm: &Bimatrix, player: usize) -> usize {
    if player == 0 {
        bm.rows
    } else {
        bm.cols
    }
}

fn cell(bm: &Bimatrix, player: usize, own: usize, other: usize) -> usize {
    if player == 0 {
        own * bm.cols + other
    } else {
        other * bm.cols + own
    }
}

/// The welfare-maximization LP over the correlated-equilibrium polytope.
///
/// One row per player and ordered pair of own decisions `(a, a')`:
/// `Σ_o ρ(a, o) [u(a, o) - u(a', o)] >= 0`, then `Σρ = 1` and `ρ >= 0`.
pub fn build_ce_constraints(bm: &Bimatrix) -> LinearProgram {
    let n = bm.cells();
    let objective = (0..n).map(|k| bm.row_payoff[k] + bm.col_payoff[k]).collect();
    let mut lp = LinearProgram::new(objective);
    for player in 0..2 {
        let own = player_menu(bm, player);
        let other = player_menu(bm, 1 - player);
        for a in 0..own {
            for alt in 0..own {
                if a == alt {
                    continue;
                }
                let mut row = vec![0.0; n];
                for o in 0..other {
                    let k = cell(bm, player, a, o);
                    row[k] = bm.payoff(player, k) - bm.payoff(player, cell(bm, player, alt, o));
                }
                lp.add_ge(row, 0.0);
            }
        }
    }
    lp.add_eq(vec![1.0; n], 1.0);
    lp
}

pub fn ce_solve_max_welfare(bm: &Bimatrix) -> Result<CeSolution> {
    let lp = build_ce_constraints(bm);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Internal(format!("correlated-equilibrium LP is {:?}", sol.status)));
    }
    // Clean off round-off so the result is an exact simplex point.
    let mut p: Vec<f64> = sol.x.iter().map(|&x| if x.abs() < 1e-13 { 0.0 } else { x.max(0.0) }).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    let distribution = JointDistribution::with_tolerance(p, 1e-9)?;
    let welfare = welfare(bm, &distribution);
    Ok(CeSolution { status: sol.status, distribution, welfare })
}

pub fn welfare(bm: &Bimatrix, dist: &JointDistribution) -> f64 {
    dist.probs()
        .iter()
        .enumerate()
        .map(|(k, p)| p * (bm.row_payoff[k] + bm.col_payoff[k]))
        .sum()
}

/// Exhaustive deviation check, written independently of the LP rows.
pub fn is_ce(bm: &Bimatrix, dist: &JointDistribution) -> CeCheck {
    let p = dist.probs();
    let mut worst = f64::NEG_INFINITY;
    // Row player told `r` considers playing `alt` instead.
    for r in 0..bm.rows {
        for alt in 0..bm.rows {
            if alt == r {
                continue;
            }
            let gain: f64 = (0..bm.cols)
                .map(|c| p[r * bm.cols + c] * (bm.at(alt, c).0 - bm.at(r, c).0))
                .sum();
            worst = worst.max(gain);
        }
    }
    for c in 0..bm.cols {
        for alt in 0..bm.cols {
            if alt == c {
                continue;
            }
            let gain: f64 = (0..bm.rows)
                .map(|r| p[r * bm.cols + c] * (bm.at(r, alt).1 - bm.at(r, c).1))
                .sum();
            worst = worst.max(gain);
        }
    }
    let worst = if worst == f64::NEG_INFINITY { 0.0 } else { worst };
    CeCheck { is_ce: worst <= CE_SLACK, max_violation: worst }
}

pub fn pure_nash(bm: &Bimatrix) -> Vec<NashEquilibrium> {
    let mut out = Vec::new();
    for r in 0..bm.rows {
        for c in 0..bm.cols {
            let (u, v) = bm.at(r, c);
            let row_best = (0..bm.rows).all(|x| bm.at(x, c).0 <= u + BEST_RESPONSE_SLACK);
            let col_best = (0..bm.cols).all(|y| bm.at(r, y).1 <= v + BEST_RESPONSE_SLACK);
            if row_best && col_best {
                let mut rs = vec![0.0; bm.rows];
                let mut cs = vec![0.0; bm.cols];
                rs[r] = 1.0;
                cs[c] = 1.0;
                out.push(NashEquilibrium { kind: NashKind::Pure, row_strategy: rs, col_strategy: cs, payoffs: (u, v) });
            }
        }
    }
    out
}

/// The fully mixed equilibrium of a 2x2 view, if both indifference
/// solutions fall strictly inside (0, 1).
pub fn mixed_ne_2x2(bm: &Bimatrix) -> Result<Option<NashEquilibrium>> {
    if bm.rows != 2 || bm.cols != 2 {
        return Err(precondition(format!("mixed solver needs a 2x2 view, got {}x{}", bm.rows, bm.cols)));
    }
    let a = |r, c| bm.at(r, c).0;
    let b = |r, c| bm.at(r, c).1;
    if a(0, 0) == a(1, 0) || a(0, 1) == a(1, 1) || b(0, 0) == b(0, 1) || b(1, 0) == b(1, 1) {
        return Err(precondition("unequal-reward restriction violated"));
    }
    // Row mixes p on row 0 so that the column player is indifferent.
    let p = (b(1, 1) - b(1, 0)) / (b(0, 0) - b(1, 0) - b(0, 1) + b(1, 1));
    // Column mixes q on column 0 so that the row player is indifferent.
    let q = (a(1, 1) - a(0, 1)) / (a(0, 0) - a(0, 1) - a(1, 0) + a(1, 1));
    let inside = |x: f64| x.is_finite() && x > 0.0 && x < 1.0;
    if !(inside(p) && inside(q)) {
        return Ok(None);
    }
    let row_payoff = q * a(0, 0) + (1.0 - q) * a(0, 1);
    let col_payoff = p * b(0, 0) + (1.0 - p) * b(1, 0);
    Ok(Some(NashEquilibrium {
        kind: NashKind::Mixed,
        row_strategy: vec![p, 1.0 - p],
        col_strategy: vec![q, 1.0 - q],
        payoffs: (row_payoff, col_payoff),
    }))
}

/// Pure equilibria of any view plus the mixed one for 2x2 views that
/// satisfy the unequal-reward restriction.
pub fn nash_equilibria(bm: &Bimatrix) -> Vec<NashEquilibrium> {
    let mut all = pure_nash(bm);
    if bm.rows == 2 && bm.cols == 2 {
        if let Ok(Some(m)) = mixed_ne_2x2(bm) {
            all.push(m);
        }
    }
    all
}

/// Whether `point` (row payoff, column payoff) is a convex combination of
/// the equilibrium payoff pairs.
pub fn ne_hull_contains(equilibria: &[NashEquilibrium], point: (f64, f64)) -> Result<bool> {
    if equilibria.is_empty() {
        return Err(precondition("no equilibria to span a hull"));
    }
    let k = equilibria.len();
    let mut lp = LinearProgram::new(vec![0.0; k]);
    lp.add_eq(equilibria.iter().map(|e| e.payoffs.0).collect(), point.0);
    lp.add_eq(equilibria.iter().map(|e| e.payoffs.1).collect(), point.1);
    lp.add_eq(vec![1.0; k], 1.0);
    Ok(solve_lp(&lp)?.status == LpStatus::Optimal)
}

/// Expected (row, column) payoffs under a joint distribution.
pub fn expected_payoffs(bm: &Bimatrix, dist: &JointDistribution) -> (f64, f64) {
    dist.probs().iter().enumerate().fold((0.0, 0.0), |(u, v), (k, p)| {
        (u + p * bm.row_payoff[k], v + p * bm.col_payoff[k])
    })
}
