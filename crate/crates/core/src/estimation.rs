//! Recovering an opponent's payoff vector from a correlated distribution.
//!
//! The known vector is sorted ascending and the distribution follows the
//! same permutation. Between neighbouring outcomes in that order each
//! player exerts a "tension" (probability times payoff step); the balance of
//! the two players' tensions is constrained in a direction read off the
//! probability profile. Together with the opponent's own rationality rows,
//! the simplex constraints and a mixed-equilibrium sign pattern, this gives
//! an LP whose optimum is the estimate.

use serde::{Deserialize, Serialize};

use crate::env::JointDistribution;
use crate::equilibrium::ce_solve_max_welfare;
use crate::error::{invalid, Result};
use crate::game::Bimatrix;
use crate::lp::{solve_lp, LinearProgram, LpStatus};

/// Default tolerance under which probabilities compare as equal when
/// picking senses.
pub const TIE_TOL: f64 = 1e-9;
/// Minimum gap forced between the opponent's payoffs across its own
/// decisions in the mixed-equilibrium rows.
pub const MIXING_MARGIN: f64 = 1e-6;
/// Slack used when checking emitted rows against a solution.
pub const ROW_SLACK: f64 = 1e-9;
/// Default L∞ tolerance of the round-trip check.
pub const ROUND_TRIP_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReorderedView {
    /// `permutation[k]` is the original index at sorted position `k`.
    pub permutation: Vec<usize>,
    pub v_bar_main: Vec<f64>,
    pub p_bar: Vec<f64>,
    pub d_bar: Vec<String>,
    /// `opponent_index[k]` is the unknown that sits at sorted position `k`.
    pub opponent_index: Vec<usize>,
}

impl ReorderedView {
    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// Maps a sorted-order sequence back to original order.
    pub fn unpermute(&self, sorted: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; sorted.len()];
        for (k, &h) in self.permutation.iter().enumerate() {
            out[h] = sorted[k];
        }
        out
    }
}

/// Stable ascending sort of `v_main`; ties keep original order. With
/// `rotated`, the opponent's sorted sequence is additionally shifted left by
/// one position (its first element moves to the end).
pub fn reorder(v_main: &[f64], p: &JointDistribution, labels: Option<&[String]>, rotated: bool) -> Result<ReorderedView> {
    let h = v_main.len();
    if p.len() != h {
        return Err(invalid(format!("distribution has {} entries, payoff has {h}", p.len())));
    }
    if labels.is_some_and(|l| l.len() != h) {
        return Err(invalid("one label per decision set is required"));
    }
    let mut permutation: Vec<usize> = (0..h).collect();
    permutation.sort_by(|&a, &b| v_main[a].total_cmp(&v_main[b]));
    let opponent_index = if rotated {
        (0..h).map(|k| permutation[(k + 1) % h]).collect()
    } else {
        permutation.clone()
    };
    Ok(ReorderedView {
        v_bar_main: permutation.iter().map(|&i| v_main[i]).collect(),
        p_bar: permutation.iter().map(|&i| p.probs()[i]).collect(),
        d_bar: permutation
            .iter()
            .map(|&i| labels.map_or_else(|| format!("D{}", i + 1), |l| l[i].clone()))
            .collect(),
        opponent_index,
        permutation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Ge,
    Eq,
    Le,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    Outgoing,
    Incoming,
    OpponentRationality,
    MixedEquilibrium,
}

impl ConstraintFamily {
    pub const ALL: [ConstraintFamily; 4] = [
        ConstraintFamily::Outgoing,
        ConstraintFamily::Incoming,
        ConstraintFamily::OpponentRationality,
        ConstraintFamily::MixedEquilibrium,
    ];
}

/// `coefficients · x  (sense)  rhs` over the unknowns in original order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub family: ConstraintFamily,
    /// Window length for tension rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    /// Sorted position (tension rows) or decision pair (rationality rows).
    pub position: usize,
    pub coefficients: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    /// Signed slack: non-negative when satisfied.
    pub fn slack(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coefficients.iter().zip(x).map(|(a, b)| a * b).sum();
        match self.sense {
            Sense::Ge => lhs - self.rhs,
            Sense::Le => self.rhs - lhs,
            Sense::Eq => -(lhs - self.rhs).abs(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }
}

/// A tension row whose probability profile matched no sense branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unmatched {
    pub family: ConstraintFamily,
    pub window: usize,
    pub position: usize,
}

#[derive(Clone, Copy)]
struct Cmp(f64);

impl Cmp {
    fn lt(self, a: f64, b: f64) -> bool {
        a < b - self.0
    }

    fn le(self, a: f64, b: f64) -> bool {
        a <= b + self.0
    }
}

fn outgoing_sense(c: Cmp, prev: f64, cur: f64, next: f64) -> Option<Sense> {
    if c.lt(prev, cur) && c.le(cur, next) {
        Some(Sense::Ge)
    } else if c.le(prev, cur) && c.le(next, cur) {
        Some(Sense::Eq)
    } else if c.lt(cur, prev) && c.le(next, cur) {
        Some(Sense::Le)
    } else {
        None
    }
}

fn incoming_sense(c: Cmp, prev: f64, cur: f64, next: f64) -> Option<Sense> {
    if c.lt(cur, prev) && c.le(next, cur) {
        Some(Sense::Ge)
    } else if c.le(prev, cur) && c.le(next, cur) {
        Some(Sense::Eq)
    } else if c.lt(prev, cur) && c.le(cur, next) {
        Some(Sense::Le)
    } else {
        None
    }
}

/// Outgoing and incoming tension rows for every sorted position and window
/// length `L = 1..=H/2`, indices taken cyclically.
///
/// Outgoing: `ρ̄[h+L](v̄1[h+L] - v̄1[h]) - ρ̄[h-L](v̄2[h-L] - v̄2[h])`.
/// Incoming: `ρ̄[h](v̄1[h] - v̄1[h-L]) - ρ̄[h](v̄2[h] - v̄2[h-L])`, where at the
/// last position the opponent term looks forward to position `L - 1`.
/// Probabilities within `tie_tol` of each other compare as equal.
pub fn build_tension_constraints(view: &ReorderedView, tie_tol: f64) -> (Vec<Constraint>, Vec<Unmatched>) {
    let cmp = Cmp(tie_tol);
    let h_len = view.len();
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    let (p, v1, opp) = (&view.p_bar, &view.v_bar_main, &view.opponent_index);
    for l in 1..=h_len / 2 {
        for h in 0..h_len {
            let prev = (h + h_len - l) % h_len;
            let next = (h + l) % h_len;

            match outgoing_sense(cmp, p[prev], p[h], p[next]) {
                Some(sense) => {
                    let mut coefficients = vec![0.0; h_len];
                    coefficients[opp[prev]] -= p[prev];
                    coefficients[opp[h]] += p[prev];
                    let constant = p[next] * (v1[next] - v1[h]);
                    rows.push(Constraint {
                        family: ConstraintFamily::Outgoing,
                        window: Some(l),
                        position: h,
                        coefficients,
                        sense,
                        rhs: -constant,
                    });
                }
                None => unmatched.push(Unmatched { family: ConstraintFamily::Outgoing, window: l, position: h }),
            }

            match incoming_sense(cmp, p[prev], p[h], p[next]) {
                Some(sense) => {
                    let opp_prev = if h == h_len - 1 { l - 1 } else { prev };
                    let mut coefficients = vec![0.0; h_len];
                    coefficients[opp[h]] -= p[h];
                    coefficients[opp[opp_prev]] += p[h];
                    let constant = p[h] * (v1[h] - v1[prev]);
                    rows.push(Constraint {
                        family: ConstraintFamily::Incoming,
                        window: Some(l),
                        position: h,
                        coefficients,
                        sense,
                        rhs: -constant,
                    });
                }
                None => unmatched.push(Unmatched { family: ConstraintFamily::Incoming, window: l, position: h }),
            }
        }
    }
    for u in &unmatched {
        log::debug!("no sense for {:?} row at position {} (L = {})", u.family, u.position, u.window);
    }
    (rows, unmatched)
}

/// The two-player shape the estimate lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewShape {
    pub rows: usize,
    pub cols: usize,
    /// 0 when the known player picks rows, 1 when it picks columns.
    pub known_role: usize,
}

impl ViewShape {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    fn cell(&self, player: usize, own: usize, other: usize) -> usize {
        if player == 0 {
            own * self.cols + other
        } else {
            other * self.cols + own
        }
    }

    fn menu(&self, player: usize) -> usize {
        if player == 0 {
            self.rows
        } else {
            self.cols
        }
    }
}

/// Rationality rows of the unknown player under `p`, linear in its payoffs.
pub fn opponent_rationality_constraints(shape: ViewShape, p: &JointDistribution) -> Vec<Constraint> {
    let player = 1 - shape.known_role;
    let (own, other) = (shape.menu(player), shape.menu(1 - player));
    let mut rows = Vec::new();
    for a in 0..own {
        for alt in (0..own).filter(|&alt| alt != a) {
            let mut coefficients = vec![0.0; shape.cells()];
            for o in 0..other {
                let k = shape.cell(player, a, o);
                coefficients[k] += p.probs()[k];
                coefficients[shape.cell(player, alt, o)] -= p.probs()[k];
            }
            rows.push(Constraint {
                family: ConstraintFamily::OpponentRationality,
                window: None,
                position: a * own + alt,
                coefficients,
                sense: Sense::Ge,
                rhs: 0.0,
            });
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MixedEquilibriumRows {
    Applied,
    /// The known player's own payoff differences rule out interior mixing,
    /// so no opponent vector can complete a mixed equilibrium.
    NotApplicable { reason: String },
}

/// Sign-pattern rows that give a 2x2 view two pure equilibria and an
/// interior mixed one: the opponent's payoff differences across its own
/// decisions must share signs with the known player's, column by column
/// (row by row for a column-picking opponent), with a margin.
pub fn mixed_equilibrium_constraints(shape: ViewShape, known: &[f64]) -> (Vec<Constraint>, MixedEquilibriumRows) {
    if shape.rows != 2 || shape.cols != 2 {
        let reason = format!("{}x{} view; mixing rows are defined for 2x2 only", shape.rows, shape.cols);
        return (Vec::new(), MixedEquilibriumRows::NotApplicable { reason });
    }
    let known_player = shape.known_role;
    let opp = 1 - known_player;
    // Known player's gain from its first decision over its second, against
    // each of the opponent's decisions.
    let diffs: Vec<f64> = (0..2)
        .map(|o| known[shape.cell(known_player, 0, o)] - known[shape.cell(known_player, 1, o)])
        .collect();
    if diffs[0] * diffs[1] >= 0.0 {
        let reason = format!("known player's differences {:?} do not change sign", diffs);
        return (Vec::new(), MixedEquilibriumRows::NotApplicable { reason });
    }
    // Opponent's gain from its decision `o` over the other, against the
    // known player's decision `o`.
    let mut rows = Vec::new();
    for (o, &d) in diffs.iter().enumerate() {
        let mut coefficients = vec![0.0; 4];
        coefficients[shape.cell(opp, 0, o)] += 1.0;
        coefficients[shape.cell(opp, 1, o)] -= 1.0;
        let (sense, rhs) = if d > 0.0 { (Sense::Ge, MIXING_MARGIN) } else { (Sense::Le, -MIXING_MARGIN) };
        rows.push(Constraint {
            family: ConstraintFamily::MixedEquilibrium,
            window: None,
            position: o,
            coefficients,
            sense,
            rhs,
        });
    }
    (rows, MixedEquilibriumRows::Applied)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub rotated: bool,
    pub tie_tol: f64,
    pub round_trip: bool,
    pub round_trip_tol: f64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions { rotated: false, tie_tol: TIE_TOL, round_trip: true, round_trip_tol: ROUND_TRIP_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Infeasibility {
    /// Indices into the report's constraint list of rows with no unknowns
    /// that fail on their own.
    pub trivially_violated: Vec<usize>,
    /// Families with at least one row violated at the least-violation point.
    pub violated_families: Vec<ConstraintFamily>,
    /// Families whose removal alone makes the program feasible.
    pub dropping_restores: Vec<ConstraintFamily>,
    /// Rows violated at the least-violation point.
    pub violated_rows: Vec<usize>,
    /// Minimum total violation over the simplex.
    pub total_violation: f64,
    /// The simplex point attaining it. Diagnostic only; not an estimate.
    pub closest: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub distribution: Vec<f64>,
    pub linf: f64,
    pub tolerance: f64,
    pub matches: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub shape: ViewShape,
    pub rotated: bool,
    pub view: ReorderedView,
    pub constraints: Vec<Constraint>,
    pub unmatched: Vec<Unmatched>,
    pub mixed_equilibrium: MixedEquilibriumRows,
    pub status: LpStatus,
    /// Original order; present when the program is optimal.
    pub estimate: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub infeasibility: Option<Infeasibility>,
    pub round_trip: Option<RoundTrip>,
}

impl EstimationReport {
    /// Smallest slack of any emitted row at the estimate.
    pub fn min_slack(&self) -> Option<f64> {
        let x = self.estimate.as_ref()?;
        Some(self.constraints.iter().map(|c| c.slack(x)).fold(f64::INFINITY, f64::min))
    }
}

fn program(n: usize, objective: &[f64], rows: &[&Constraint]) -> LinearProgram {
    let mut lp = LinearProgram::new(objective.to_vec());
    for c in rows {
        match c.sense {
            Sense::Ge => lp.add_ge(c.coefficients.clone(), c.rhs),
            Sense::Le => lp.add_le(c.coefficients.clone(), c.rhs),
            Sense::Eq => lp.add_eq(c.coefficients.clone(), c.rhs),
        }
    }
    lp.add_eq(vec![1.0; n], 1.0);
    lp
}

/// Estimates the opponent's payoffs in a two-player view from the known
/// player's payoffs and a distribution both players settled on.
///
/// Maximizes `p · x` subject to the tension rows, the opponent's
/// rationality rows, the mixed-equilibrium rows (when they apply), `x >= 0`
/// and `Σx = 1`. An infeasible program is reported, not relaxed.
pub fn estimate_payoff(
    known: &[f64],
    p: &JointDistribution,
    shape: ViewShape,
    labels: Option<&[String]>,
    options: EstimationOptions,
) -> Result<EstimationReport> {
    let n = shape.cells();
    if known.len() != n || p.len() != n {
        return Err(invalid(format!(
            "{}x{} view needs {n} entries, got payoff {} and distribution {}",
            shape.rows,
            shape.cols,
            known.len(),
            p.len()
        )));
    }
    if shape.known_role > 1 {
        return Err(invalid("known role must be 0 (rows) or 1 (columns)"));
    }
    let view = reorder(known, p, labels, options.rotated)?;
    let (mut constraints, unmatched) = build_tension_constraints(&view, options.tie_tol);
    constraints.extend(opponent_rationality_constraints(shape, p));
    let (mixed, mixed_status) = mixed_equilibrium_constraints(shape, known);
    constraints.extend(mixed);

    let all: Vec<&Constraint> = constraints.iter().collect();
    let sol = solve_lp(&program(n, p.probs(), &all))?;
    let mut report = EstimationReport {
        shape,
        rotated: options.rotated,
        view,
        constraints,
        unmatched,
        mixed_equilibrium: mixed_status,
        status: sol.status,
        estimate: None,
        objective: None,
        infeasibility: None,
        round_trip: None,
    };
    match sol.status {
        LpStatus::Optimal => {
            let x: Vec<f64> = sol.x.iter().map(|&v| if v.abs() < 1e-13 { 0.0 } else { v }).collect();
            report.objective = Some(sol.objective);
            if options.round_trip {
                report.round_trip = Some(round_trip(known, &x, p, shape, options.round_trip_tol)?);
            }
            report.estimate = Some(x);
        }
        LpStatus::Infeasible => report.infeasibility = Some(diagnose(&report.constraints, n, p)?),
        LpStatus::Unbounded => {
            // Σx = 1 with x >= 0 bounds the program; this would be a solver fault.
            return Err(crate::Error::Internal("estimation LP reported unbounded".into()));
        }
    }
    Ok(report)
}

fn diagnose(constraints: &[Constraint], n: usize, p: &JointDistribution) -> Result<Infeasibility> {
    let trivially_violated = constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_constant() && c.slack(&vec![0.0; n]) < -ROW_SLACK)
        .map(|(i, _)| i)
        .collect();
    let mut dropping_restores = Vec::new();
    for family in ConstraintFamily::ALL {
        if !constraints.iter().any(|c| c.family == family) {
            continue;
        }
        let kept: Vec<&Constraint> = constraints.iter().filter(|c| c.family != family).collect();
        if solve_lp(&program(n, p.probs(), &kept))?.status == LpStatus::Optimal {
            dropping_restores.push(family);
        }
    }
    let (closest, violations) = least_violation(constraints, n)?;
    let violated_rows: Vec<usize> = (0..constraints.len()).filter(|&i| violations[i] > ROW_SLACK).collect();
    let mut violated_families: Vec<ConstraintFamily> = violated_rows.iter().map(|&i| constraints[i].family).collect();
    violated_families.sort();
    violated_families.dedup();
    Ok(Infeasibility {
        trivially_violated,
        violated_families,
        dropping_restores,
        total_violation: violations.iter().sum(),
        violated_rows,
        closest,
    })
}

/// Elastic program: one non-negative slack per row side, total slack
/// minimized over the simplex. Returns the minimizer and each row's slack.
fn least_violation(constraints: &[Constraint], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let slots: Vec<usize> = constraints.iter().map(|c| if c.sense == Sense::Eq { 2 } else { 1 }).collect();
    let width = n + slots.iter().sum::<usize>();
    let mut objective = vec![-1.0; width];
    objective[..n].iter_mut().for_each(|o| *o = 0.0);
    let mut lp = LinearProgram::new(objective);
    let mut at = n;
    for (c, &k) in constraints.iter().zip(&slots) {
        let mut row = c.coefficients.clone();
        row.resize(width, 0.0);
        match c.sense {
            Sense::Ge => {
                row[at] = 1.0;
                lp.add_ge(row, c.rhs);
            }
            Sense::Le => {
                row[at] = -1.0;
                lp.add_le(row, c.rhs);
            }
            Sense::Eq => {
                row[at] = 1.0;
                row[at + 1] = -1.0;
                lp.add_eq(row, c.rhs);
            }
        }
        at += k;
    }
    let mut simplex = vec![1.0; n];
    simplex.resize(width, 0.0);
    lp.add_eq(simplex, 1.0);
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(crate::Error::Internal(format!("elastic program is {:?}", sol.status)));
    }
    let mut at = n;
    let violations = slots
        .iter()
        .map(|&k| {
            let v = sol.x[at..at + k].iter().sum();
            at += k;
            v
        })
        .collect();
    Ok((sol.x[..n].to_vec(), violations))
}

/// Solves the welfare-maximizing equilibrium with the estimate in place of
/// the unknown vector and compares it to `p`.
pub fn round_trip(known: &[f64], estimate: &[f64], p: &JointDistribution, shape: ViewShape, tol: f64) -> Result<RoundTrip> {
    let (row, col) = if shape.known_role == 0 {
        (known.to_vec(), estimate.to_vec())
    } else {
        (estimate.to_vec(), known.to_vec())
    };
    let bm = Bimatrix::new(shape.rows, shape.cols, row, col)?;
    let ce = ce_solve_max_welfare(&bm)?;
    let linf = ce.distribution.linf_distance(p);
    Ok(RoundTrip { distribution: ce.distribution.probs().to_vec(), linf, tolerance: tol, matches: linf <= tol })
}
