//! Self-play learning of a joint distribution.
//!
//! Each epoch both agents play `M` rounds from the uniform state, their
//! trajectories are averaged pointwise, each agent scores the averaged
//! states with its own payoffs, and the scores (discounted toward the end
//! of the round and standardized per step across rounds) weight a log-loss
//! update of the agent's policy. Training stops once the mean terminal
//! state stops moving.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{self, average_states, enumerate_actions, ActionSet, EpisodeBatch, JointDistribution, RolloutSpec};
use crate::error::{invalid, precondition, Error, Result};
use crate::exec::{self, Execution};
use crate::game::{expected_reward, PayoffVector};
use crate::optim::Adam;
use crate::policy::{accumulate_gradients, forward, loss, LossKind, NetworkParameters, Widths};

/// Columns with a smaller standard deviation standardize to zero.
pub const SIGMA_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Rounds per epoch (`M`).
    pub rounds: usize,
    /// States per round (`N`); each round takes `N - 1` actions.
    pub steps: usize,
    pub theta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Number of trailing epochs inspected by the stop rule (`K`).
    pub stability_window: usize,
    /// L∞ spread allowed across the window; defaults to `2θ`.
    pub stability_tol: Option<f64>,
    pub analyzer_width: usize,
    pub hidden_width: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig::desk_scale(0)
    }
}

impl TrainingConfig {
    pub fn desk_scale(seed: u64) -> Self {
        TrainingConfig {
            rounds: 16,
            steps: 60,
            theta: 0.02,
            gamma: 0.99,
            learning_rate: 1e-3,
            max_epochs: 300,
            stability_window: 10,
            stability_tol: None,
            analyzer_width: 8,
            hidden_width: 16,
            loss: LossKind::TwoSided,
            seed,
            execution: Execution::Parallel,
        }
    }

    pub fn full_scale(seed: u64) -> Self {
        TrainingConfig {
            rounds: 40,
            steps: 200,
            theta: 0.005,
            max_epochs: 500,
            analyzer_width: 64,
            hidden_width: 128,
            ..TrainingConfig::desk_scale(seed)
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.stability_tol.unwrap_or(2.0 * self.theta)
    }

    pub fn widths(&self, h: usize, actions: usize) -> Widths {
        Widths { input: h, analyzer: self.analyzer_width, hidden: self.hidden_width, output: actions }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(format!("discount {} outside [0, 1]", self.gamma)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(precondition(format!("step size {} outside (0, 1]", self.theta)));
        }
        if self.rounds < 2 {
            return Err(precondition("standardization needs at least two rounds"));
        }
        let need = env::min_steps(self.theta);
        if self.steps < need.max(2) {
            return Err(precondition(format!(
                "{} states per round is below ceil(1/θ) = {need}",
                self.steps
            )));
        }
        if self.stability_window == 0 || self.max_epochs == 0 {
            return Err(invalid("stability window and epoch cap must be positive"));
        }
        if self.analyzer_width == 0 || self.hidden_width == 0 {
            return Err(invalid("layer widths must be positive"));
        }
        Ok(())
    }
}

/// `M x N` reward matrices at each post-processing stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTensor {
    pub raw: Vec<Vec<f64>>,
    pub discounted: Vec<Vec<f64>>,
    pub standardized: Vec<Vec<f64>>,
}

/// Scores averaged states, discounts by `γ^(N - n)` and standardizes each
/// step column across rounds (population standard deviation).
pub fn shape_rewards(avg_states: &[Vec<JointDistribution>], payoff: &PayoffVector, gamma: f64) -> Result<RewardTensor> {
    let m = avg_states.len();
    if m < 2 {
        return Err(precondition(format!("standardization needs at least two rounds, got {m}")));
    }
    let n = avg_states[0].len();
    if avg_states.iter().any(|r| r.len() != n) {
        return Err(invalid("rounds have different lengths"));
    }
    let raw: Vec<Vec<f64>> = avg_states
        .iter()
        .map(|row| row.iter().map(|s| expected_reward(s, payoff)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let discount: Vec<f64> = (0..n).map(|i| gamma.powi((n - 1 - i) as i32)).collect();
    let discounted = standardize_input(&raw, &discount);
    Ok(RewardTensor { standardized: standardize(&discounted), raw, discounted })
}

fn standardize_input(raw: &[Vec<f64>], discount: &[f64]) -> Vec<Vec<f64>> {
    raw.iter().map(|row| row.iter().zip(discount).map(|(r, d)| r * d).collect()).collect()
}

/// Column-wise `(x - μ) / σ`; columns with `σ <= SIGMA_EPS` become zeros.
pub fn standardize(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = values.len();
    let n = values.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; n]; m];
    for col in 0..n {
        let mu = values.iter().map(|r| r[col]).sum::<f64>() / m as f64;
        let var = values.iter().map(|r| (r[col] - mu).powi(2)).sum::<f64>() / m as f64;
        let sigma = var.sqrt();
        if sigma > SIGMA_EPS {
            for (o, r) in out.iter_mut().zip(values) {
                o[col] = (r[col] - mu) / sigma;
            }
        }
    }
    out
}

/// One Adam step on the summed weighted log loss of a batch.
///
/// The choice made at state `n` is weighted by the shaped reward of the
/// state it led to (`n + 1`). Per-round gradients are computed in parallel
/// and summed in round order.
pub fn update_policy(
    params: &mut NetworkParameters,
    adam: &mut Adam,
    batch: &EpisodeBatch,
    rewards: &RewardTensor,
    kind: LossKind,
    exec: Execution,
) -> Result<f64> {
    if rewards.standardized.len() != batch.rounds()
        || rewards.standardized.iter().any(|r| r.len() != batch.steps())
    {
        return Err(invalid("rewards and batch are not aligned"));
    }
    let snapshot: &NetworkParameters = params;
    let per_round = exec::try_map_indexed(exec, batch.rounds(), |m| {
        let mut grad = vec![0.0; snapshot.len()];
        let mut total = 0.0;
        let states = &batch.states[m];
        for (n, &choice) in batch.choices[m].iter().enumerate() {
            if choice >= batch.num_actions {
                return Err(invalid(format!("choice {choice} outside the action set")));
            }
            let weight = rewards.standardized[m][n + 1];
            if weight == 0.0 {
                continue;
            }
            let previous = if n == 0 { &states[0] } else { &states[n - 1] };
            let trace = forward(snapshot, states[n].probs(), previous.probs())?;
            let target = batch.one_hot(m, n);
            total += loss(kind, trace.output(), &target, weight);
            accumulate_gradients(snapshot, &trace, &target, weight, kind, &mut grad)?;
        }
        Ok((grad, total))
    })?;
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for (g, l) in per_round {
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        total += l;
    }
    if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            layer: params.layers.len() - 1,
            detail: format!("epoch loss is {total}"),
        });
    }
    adam.step(&mut params.values, &grad);
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// 0 for the first agent of the pair, 1 for the second.
    pub player: usize,
    pub mean_terminal_reward: f64,
    pub terminal_state: Vec<f64>,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Mean terminal averaged state over the last stability window.
    pub distribution: JointDistribution,
    pub stable: bool,
    pub epochs: usize,
    pub history: Vec<EpochRecord>,
    pub agents: [NetworkParameters; 2],
    /// Last epoch's trajectories, one batch per agent.
    pub last_batches: [EpisodeBatch; 2],
}

impl TrainOutcome {
    /// Mean terminal reward of `player` in the final epoch.
    pub fn final_reward(&self, player: usize) -> f64 {
        self.history
            .iter()
            .rev()
            .find(|r| r.player == player)
            .map_or(f64::NAN, |r| r.mean_terminal_reward)
    }
}

/// Writes `epoch,player,mean_terminal_reward,rho_1..rho_H`.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], labels: [&str; 2], mut out: W) -> Result<()> {
    let h = history.first().map_or(0, |r| r.terminal_state.len());
    write!(out, "epoch,player,mean_terminal_reward")?;
    for k in 1..=h {
        write!(out, ",rho_{k}")?;
    }
    writeln!(out)?;
    for r in history {
        write!(out, "{},{},{}", r.epoch, labels[r.player], r.mean_terminal_reward)?;
        for p in &r.terminal_state {
            write!(out, ",{p}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

struct Agent {
    params: NetworkParameters,
    adam: Adam,
}

/// Trains two agents against each other until the mean terminal averaged
/// state is stable or the epoch cap is hit. Each agent's update only sees
/// its own payoffs and the shared averaged states.
pub fn train_pair(payoff_a: &PayoffVector, payoff_b: &PayoffVector, config: &TrainingConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let h = payoff_a.len();
    if payoff_b.len() != h {
        return Err(invalid(format!("payoff widths differ: {h} vs {}", payoff_b.len())));
    }
    let actions = enumerate_actions(h, config.theta)?;
    let widths = config.widths(h, actions.len());
    let mut agents: Vec<Agent> = (0..2u64)
        .map(|p| {
            let mut rng = exec::stream_rng(config.seed, &[u64::MAX, p]);
            let params = NetworkParameters::init(widths, &mut rng);
            let adam = Adam::new(params.len(), config.learning_rate);
            Agent { params, adam }
        })
        .collect();
    let payoffs = [payoff_a, payoff_b];
    let tol = config.tolerance();
    let mut window: VecDeque<JointDistribution> = VecDeque::with_capacity(config.stability_window);
    let mut history = Vec::with_capacity(2 * config.max_epochs);
    let mut stable = false;
    let mut epochs = 0;
    let mut last_batches = None;

    for epoch in 0..config.max_epochs {
        epochs = epoch + 1;
        let batches = rollout_pair(&agents, &actions, config, epoch)?;
        let avg = average_states(&batches[0], &batches[1])?;
        let terminal = JointDistribution::mean(avg.iter().map(|r| r.last().expect("non-empty round")))?;
        for (p, agent) in agents.iter_mut().enumerate() {
            let rewards = shape_rewards(&avg, payoffs[p], config.gamma)?;
            let mean_terminal_reward =
                rewards.raw.iter().map(|r| *r.last().expect("non-empty round")).sum::<f64>() / config.rounds as f64;
            let epoch_loss =
                update_policy(&mut agent.params, &mut agent.adam, &batches[p], &rewards, config.loss, config.execution)
                    .map_err(|e| match e {
                        Error::Numeric { layer, detail } => {
                            Error::Numeric { layer, detail: format!("epoch {epoch}, agent {p}: {detail}") }
                        }
                        other => other,
                    })?;
            history.push(EpochRecord {
                epoch,
                player: p,
                mean_terminal_reward,
                terminal_state: terminal.probs().to_vec(),
                loss: epoch_loss,
            });
        }
        if window.len() == config.stability_window {
            window.pop_front();
        }
        window.push_back(terminal);
        last_batches = Some(batches);
        if window.len() == config.stability_window && spread(&window) <= tol {
            stable = true;
            break;
        }
    }
    if !stable {
        log::warn!("no stable state after {epochs} epochs");
    }
    let distribution = JointDistribution::mean(window.iter())?;
    let [a, b] = [agents.remove(0).params, agents.remove(0).params];
    let last_batches = last_batches.expect("at least one epoch ran");
    Ok(TrainOutcome { distribution, stable, epochs, history, agents: [a, b], last_batches })
}

fn rollout_pair(agents: &[Agent], actions: &ActionSet, config: &TrainingConfig, epoch: usize) -> Result<[EpisodeBatch; 2]> {
    let batch = |p: usize| {
        let spec = RolloutSpec {
            rounds: config.rounds,
            steps: config.steps,
            seed: config.seed,
            stream: [epoch as u64, p as u64],
        };
        env::rollout(&agents[p].params, actions, spec, config.execution)
    };
    Ok([batch(0)?, batch(1)?])
}

/// Largest per-component range across the window.
fn spread(window: &VecDeque<JointDistribution>) -> f64 {
    let h = window[0].len();
    (0..h)
        .map(|k| {
            let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.probs()[k]), hi.max(s.probs()[k]))
            });
            hi - lo
        })
        .fold(0.0, f64::max)
}
