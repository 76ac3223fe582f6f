//! The simplex world the agents move in: states are distributions over the
//! decision sets, actions nudge the first `H - 1` probabilities by a fixed
//! step and the last probability absorbs the remainder.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, precondition, Result};
use crate::exec::{self, Execution};

const SIMPLEX_TOL: f64 = 1e-12;

/// A point on the probability simplex over decision sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointDistribution(Vec<f64>);

impl JointDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(probs, SIMPLEX_TOL)
    }

    /// Accepts sums within `tol` of one (file-sourced decimals).
    pub fn with_tolerance(probs: Vec<f64>, tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < -tol || **p > 1.0 + tol) {
            return Err(invalid(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(invalid(format!("probabilities sum to {sum}")));
        }
        Ok(JointDistribution(probs))
    }

    pub fn uniform(h: usize) -> Self {
        JointDistribution(vec![1.0 / h as f64; h])
    }

    pub fn point_mass(h: usize, at: usize) -> Self {
        let mut p = vec![0.0; h];
        p[at] = 1.0;
        JointDistribution(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn linf_distance(&self, other: &JointDistribution) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Elementwise mean of equally sized states.
    pub fn mean<'a>(states: impl IntoIterator<Item = &'a JointDistribution>) -> Result<Self> {
        let mut acc: Option<Vec<f64>> = None;
        let mut count = 0usize;
        for s in states {
            let a = acc.get_or_insert_with(|| vec![0.0; s.len()]);
            if a.len() != s.len() {
                return Err(invalid("states of different width"));
            }
            a.iter_mut().zip(&s.0).for_each(|(x, y)| *x += y);
            count += 1;
        }
        let acc = acc.ok_or_else(|| invalid("mean of no states"))?;
        Ok(JointDistribution(acc.into_iter().map(|x| x / count as f64).collect()))
    }
}

/// The `3^(H-1)` step actions in canonical ternary order (first component
/// most significant, digit order `-θ < 0 < +θ`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    pub h: usize,
    pub theta: f64,
    actions: Vec<Vec<f64>>,
}

impl ActionSet {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn deltas(&self, j: usize) -> &[f64] {
        &self.actions[j]
    }

    /// Index of the all-zero action.
    pub fn identity_index(&self) -> usize {
        (self.actions.len() - 1) / 2
    }
}

pub fn enumerate_actions(h: usize, theta: f64) -> Result<ActionSet> {
    if h < 2 {
        return Err(precondition(format!("need at least two decision sets, got {h}")));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(precondition(format!("step size {theta} outside (0, 1]")));
    }
    let width = h - 1;
    let count = 3usize.pow(width as u32);
    let steps = [-theta, 0.0, theta];
    let actions = (0..count)
        .map(|mut j| {
            let mut d = vec![0.0; width];
            for slot in d.iter_mut().rev() {
                *slot = steps[j % 3];
                j /= 3;
            }
            d
        })
        .collect();
    Ok(ActionSet { h, theta, actions })
}

/// Moves the first `H - 1` components by `deltas`, clamping into `[0, 1]`.
/// If the implied last component would go negative, the increases are
/// rolled back in proportion to their size until it reaches zero.
pub fn apply_action(state: &JointDistribution, deltas: &[f64]) -> JointDistribution {
    let p = state.probs();
    let h = p.len();
    debug_assert_eq!(deltas.len(), h - 1);
    let mut next: Vec<f64> = p[..h - 1]
        .iter()
        .zip(deltas)
        .map(|(x, d)| (x + d).clamp(0.0, 1.0))
        .collect();
    let head: f64 = next.iter().sum();
    if head > 1.0 {
        let increases: Vec<f64> = next.iter().zip(p).map(|(n, o)| (n - o).max(0.0)).collect();
        let total: f64 = increases.iter().sum();
        let excess = head - 1.0;
        if total > 0.0 {
            let keep = (1.0 - excess / total).max(0.0);
            for ((n, o), inc) in next.iter_mut().zip(p).zip(&increases) {
                if *inc > 0.0 {
                    *n = o + inc * keep;
                }
            }
        }
    }
    let head: f64 = next.iter().sum();
    next.push((1.0 - head).max(0.0));
    JointDistribution(next)
}

/// Anything that maps `(current, previous)` states to a distribution over
/// the action set.
pub trait Policy: Sync {
    fn action_distribution(&self, current: &JointDistribution, previous: &JointDistribution) -> Result<Vec<f64>>;
}

/// Always picks the same action; handy for deterministic rollouts.
#[derive(Clone, Debug)]
pub struct FixedPolicy {
    pub action: usize,
    pub num_actions: usize,
}

impl Policy for FixedPolicy {
    fn action_distribution(&self, _: &JointDistribution, _: &JointDistribution) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.num_actions];
        p[self.action] = 1.0;
        Ok(p)
    }
}

/// Inverse-CDF draw over the canonical action order.
pub fn sample_action<R: Rng + ?Sized>(distribution: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (j, p) in distribution.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left the cumulative sum just below one: take the last
    // action with nonzero mass.
    distribution.iter().rposition(|&p| p > 0.0).unwrap_or(distribution.len() - 1)
}

/// Choices and visited states of `M` rounds. `states[m][0]` is the start
/// state and `choices[m][n]` moved the agent from `states[m][n]` to
/// `states[m][n + 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBatch {
    pub num_actions: usize,
    pub choices: Vec<Vec<usize>>,
    pub states: Vec<Vec<JointDistribution>>,
}

impl EpisodeBatch {
    pub fn rounds(&self) -> usize {
        self.states.len()
    }

    pub fn steps(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn one_hot(&self, m: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_actions];
        v[self.choices[m][n]] = 1.0;
        v
    }

    /// CSV rows `round,step,action_index,rho_1..rho_H`, one per visited
    /// state; the action column is empty on the final state of a round.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let h = self.states.first().and_then(|r| r.first()).map_or(0, JointDistribution::len);
        write!(out, "round,step,action_index")?;
        for k in 1..=h {
            write!(out, ",rho_{k}")?;
        }
        writeln!(out)?;
        for (m, (states, choices)) in self.states.iter().zip(&self.choices).enumerate() {
            for (n, s) in states.iter().enumerate() {
                write!(out, "{},{},", m + 1, n + 1)?;
                if let Some(a) = choices.get(n) {
                    write!(out, "{a}")?;
                }
                for p in s.probs() {
                    write!(out, ",{p}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Smallest admissible number of states per round, `ceil(1/θ)`.
pub fn min_steps(theta: f64) -> usize {
    // Guard against 1/0.02 = 49.999... style rounding.
    let inv = 1.0 / theta;
    let r = inv.round();
    if (inv - r).abs() < 1e-9 {
        r as usize
    } else {
        inv.ceil() as usize
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RolloutSpec {
    pub rounds: usize,
    pub steps: usize,
    pub seed: u64,
    /// Extra stream coordinates (epoch, player, ...) mixed into each
    /// round's RNG seed.
    pub stream: [u64; 2],
}

/// Plays `rounds` independent rounds of `steps` states each from the
/// uniform start state. Round `m` draws from its own RNG stream, so the
/// batch is identical under sequential and parallel execution.
pub fn rollout<P: Policy>(policy: &P, actions: &ActionSet, spec: RolloutSpec, exec: Execution) -> Result<EpisodeBatch> {
    if spec.rounds == 0 {
        return Err(precondition("need at least one round"));
    }
    let need = min_steps(actions.theta);
    if spec.steps < need || spec.steps < 2 {
        return Err(precondition(format!(
            "{} states per round is below ceil(1/θ) = {need}",
            spec.steps
        )));
    }
    let start = JointDistribution::uniform(actions.h);
    let rounds = exec::try_map_indexed(exec, spec.rounds, |m| {
        let mut rng = exec::stream_rng(spec.seed, &[spec.stream[0], spec.stream[1], m as u64]);
        let mut states = Vec::with_capacity(spec.steps);
        let mut choices = Vec::with_capacity(spec.steps - 1);
        states.push(start.clone());
        for n in 0..spec.steps - 1 {
            let previous = if n == 0 { &start } else { &states[n - 1] };
            let dist = policy.action_distribution(&states[n], previous)?;
            let a = sample_action(&dist, &mut rng);
            let next = apply_action(&states[n], actions.deltas(a));
            choices.push(a);
            states.push(next);
        }
        Ok((choices, states))
    })?;
    let (choices, states) = rounds.into_iter().unzip();
    Ok(EpisodeBatch { num_actions: actions.len(), choices, states })
}

/// Elementwise midpoint of two players' state trajectories.
pub fn average_states(a: &EpisodeBatch, b: &EpisodeBatch) -> Result<Vec<Vec<JointDistribution>>> {
    if a.rounds() != b.rounds() || a.steps() != b.steps() {
        return Err(invalid(format!(
            "batch shapes differ: {}x{} vs {}x{}",
            a.rounds(),
            a.steps(),
            b.rounds(),
            b.steps()
        )));
    }
    a.states
        .iter()
        .zip(&b.states)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(x, y)| {
                    if x.len() != y.len() {
                        return Err(invalid("state widths differ"));
                    }
                    Ok(JointDistribution(x.0.iter().zip(&y.0).map(|(p, q)| 0.5 * (p + q)).collect()))
                })
                .collect()
        })
        .collect()
}
