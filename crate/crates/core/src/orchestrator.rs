//! The main player's discovery loop over pairwise interactions.
//!
//! Every unordered pair of players, with the remaining players pinned to
//! one pure decision each, is a task. A task whose pair already has one
//! known side is played out (trained, or solved exactly in oracle mode) and
//! the other side's payoffs are estimated from the resulting distribution.
//! Once both sides of a task are known its equilibrium is solved directly,
//! without any interaction. Knowledge is tracked per decision set, so an
//! opponent's vector fills in block by block.

use serde::{Deserialize, Serialize};

use crate::env::JointDistribution;
use crate::equilibrium::{ce_solve_max_welfare, is_ce, nash_equilibria};
use crate::error::{invalid, Result};
use crate::estimation::{estimate_payoff, EstimationOptions, EstimationReport, ViewShape};
use crate::exec;
use crate::game::{Bimatrix, GameView, NormalFormGame};
use crate::lp::LpStatus;
use crate::training::{train_pair, TrainingConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumSource {
    /// Self-play training between the two agents.
    #[default]
    Learned,
    /// Exact welfare-maximizing equilibrium of the true slice (no training).
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub main_player: String,
    /// Players whose vectors the main player is handed up front, besides
    /// its own.
    pub given: Vec<String>,
    pub source: EquilibriumSource,
    pub training: TrainingConfig,
    pub estimation: EstimationOptions,
}

impl PipelineConfig {
    pub fn new(main_player: impl Into<String>, training: TrainingConfig) -> Self {
        PipelineConfig {
            main_player: main_player.into(),
            given: Vec::new(),
            source: EquilibriumSource::Learned,
            training,
            estimation: EstimationOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionTask {
    pub id: usize,
    pub player_a: usize,
    pub player_b: usize,
    /// One decision per player; the entries of the pair are unused.
    pub fixed: Vec<usize>,
}

/// One task per unordered pair and decision profile of the other players,
/// pairs in lexicographic order, profiles with the earliest player
/// outermost.
pub fn build_task_set(game: &NormalFormGame) -> Vec<InteractionTask> {
    let n = game.num_players();
    let mut tasks = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let others: Vec<usize> = (0..n).filter(|&p| p != a && p != b).collect();
            let combos: usize = others.iter().map(|&p| game.menus()[p].len()).product();
            for mut k in 0..combos {
                let mut fixed = vec![0; n];
                for &p in others.iter().rev() {
                    let m = game.menus()[p].len();
                    fixed[p] = k % m;
                    k /= m;
                }
                tasks.push(InteractionTask { id: tasks.len(), player_a: a, player_b: b, fixed });
            }
        }
    }
    tasks
}

/// Whether the pair's slice has at least two Nash equilibria. Needs both
/// players' true vectors; `None` when either is missing.
pub fn against_set(game: &NormalFormGame, task: &InteractionTask) -> Result<Option<bool>> {
    let view = game.view(task.player_a, task.player_b, &task.fixed)?;
    if game.payoff(task.player_a).is_none() || game.payoff(task.player_b).is_none() {
        return Ok(None);
    }
    Ok(Some(nash_equilibria(&view.bimatrix(game)?).len() >= 2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Given,
    Estimated,
    Unknown,
}

/// What the main player knows: per player and decision set, a payoff or
/// nothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub players: Vec<String>,
    pub provenance: Vec<Provenance>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl KnowledgeBase {
    fn view_known(&self, player: usize, view: &GameView) -> bool {
        view.cells.iter().all(|&h| self.cells[player][h].is_some())
    }

    /// The player's payoffs on the slice, rescaled to sum to one.
    fn view_vector(&self, player: usize, view: &GameView) -> Option<Vec<f64>> {
        let raw: Option<Vec<f64>> = view.cells.iter().map(|&h| self.cells[player][h]).collect();
        normalize(raw?)
    }

    pub fn is_complete(&self, player: usize) -> bool {
        self.cells[player].iter().all(Option::is_some)
    }
}

fn normalize(v: Vec<f64>) -> Option<Vec<f64>> {
    let s: f64 = v.iter().sum();
    (s > 0.0).then(|| v.into_iter().map(|x| x / s).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    /// Played out and the opponent's slice estimated.
    Interacted,
    /// Both sides known; equilibrium solved without interaction.
    Analytic,
    /// Played out, but the estimation program was infeasible.
    EstimationInfeasible,
    /// Training hit the epoch cap without a stable distribution.
    Unstable,
    /// Never processable; see `reason`.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seed: u64,
    pub epochs: usize,
    pub stable: bool,
    pub final_rewards: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRecord {
    pub distribution: Vec<f64>,
    pub welfare: f64,
    pub is_ce: bool,
    pub max_violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: usize,
    pub players: [String; 2],
    /// Decision labels of every other player.
    pub fixed: Vec<(String, String)>,
    pub cells: Vec<usize>,
    pub status: TaskStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub interaction: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated_player: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationReport>,
    /// Welfare-maximizing equilibrium under the knowledge base's vectors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<EquilibriumRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffRecord {
    pub player: String,
    pub provenance: Provenance,
    /// One entry per decision set; `null` where still unknown.
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub status: RunStatus,
    pub training_runs: usize,
    pub tasks: Vec<TaskRecord>,
    /// One record per player, in game order.
    pub payoffs: Vec<PayoffRecord>,
}

impl Manifest {
    pub fn task(&self, a: &str, b: &str) -> impl Iterator<Item = &TaskRecord> {
        let (a, b) = (a.to_string(), b.to_string());
        self.tasks.iter().filter(move |t| (t.players[0] == a && t.players[1] == b) || (t.players[0] == b && t.players[1] == a))
    }

    /// Structural checks: task ids are `0..n` in order, every recorded
    /// equilibrium passes the deviation check, and the run status agrees
    /// with the task statuses.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (i, t) in self.tasks.iter().enumerate() {
            if t.id != i {
                return Err(format!("task {i} carries id {}", t.id));
            }
            if let Some(e) = &t.equilibrium {
                if !e.is_ce {
                    return Err(format!("task {i}: equilibrium violates a deviation row by {}", e.max_violation));
                }
            }
            let done = matches!(t.status, TaskStatus::Interacted | TaskStatus::Analytic);
            if done != t.equilibrium.is_some() {
                return Err(format!("task {i}: status {:?} inconsistent with its equilibrium", t.status));
            }
            if t.status == TaskStatus::Analytic && t.interaction {
                return Err(format!("task {i}: analytic task marked as interacting"));
            }
        }
        let all_done = self.tasks.iter().all(|t| matches!(t.status, TaskStatus::Interacted | TaskStatus::Analytic));
        let expected = if all_done { RunStatus::Complete } else { RunStatus::Partial };
        if expected != self.status {
            return Err(format!("run status {:?} but tasks imply {:?}", self.status, expected));
        }
        Ok(())
    }
}

/// Runs the loop until every task is done or a full pass makes no
/// progress.
///
/// `game` holds the true vectors the simulated players act on; the main
/// player starts out knowing only its own vector and those in
/// `config.given`.
pub fn run_pipeline(game: &NormalFormGame, config: &PipelineConfig) -> Result<Manifest> {
    let main = game.player_index(&config.main_player)?;
    game.require_payoff(main)?;
    let n = game.num_players();
    let mut kb = KnowledgeBase {
        players: game.players().to_vec(),
        provenance: vec![Provenance::Unknown; n],
        cells: vec![vec![None; game.num_decision_sets()]; n],
    };
    let mut given = vec![main];
    for id in &config.given {
        given.push(game.player_index(id)?);
    }
    for &p in &given {
        kb.provenance[p] = Provenance::Given;
        kb.cells[p] = game.require_payoff(p)?.values().iter().map(|&v| Some(v)).collect();
    }

    let tasks = build_task_set(game);
    let mut records: Vec<Option<TaskRecord>> = vec![None; tasks.len()];
    let mut training_runs = 0;
    loop {
        let mut progress = false;
        for task in &tasks {
            if records[task.id].is_some() {
                continue;
            }
            let view = game.view(task.player_a, task.player_b, &task.fixed)?;
            let known_a = kb.view_known(task.player_a, &view);
            let known_b = kb.view_known(task.player_b, &view);
            let record = if known_a && known_b {
                Some(analytic(game, &kb, task, &view)?)
            } else if known_a || known_b {
                if against_set(game, task)? != Some(true) {
                    continue;
                }
                let known = if known_a { 0 } else { 1 };
                let (rec, trained) = interact(game, &mut kb, task, &view, known, config)?;
                training_runs += usize::from(trained);
                Some(rec)
            } else {
                None
            };
            if let Some(r) = record {
                records[task.id] = Some(r);
                progress = true;
            }
        }
        if !progress || records.iter().all(Option::is_some) {
            break;
        }
    }

    let tasks: Vec<TaskRecord> = tasks
        .iter()
        .zip(records)
        .map(|(task, rec)| match rec {
            Some(r) => Ok(r),
            None => stalled(game, &kb, task),
        })
        .collect::<Result<_>>()?;
    let complete = tasks.iter().all(|t| matches!(t.status, TaskStatus::Interacted | TaskStatus::Analytic));
    let payoffs = (0..n)
        .map(|p| PayoffRecord { player: kb.players[p].clone(), provenance: kb.provenance[p], values: kb.cells[p].clone() })
        .collect();
    Ok(Manifest {
        config: config.clone(),
        status: if complete { RunStatus::Complete } else { RunStatus::Partial },
        training_runs,
        tasks,
        payoffs,
    })
}

fn base_record(game: &NormalFormGame, task: &InteractionTask, view: &GameView, status: TaskStatus) -> TaskRecord {
    let fixed = (0..game.num_players())
        .filter(|&p| p != task.player_a && p != task.player_b)
        .map(|p| (game.players()[p].clone(), game.menus()[p][task.fixed[p]].clone()))
        .collect();
    TaskRecord {
        id: task.id,
        players: [game.players()[task.player_a].clone(), game.players()[task.player_b].clone()],
        fixed,
        cells: view.cells.clone(),
        status,
        reason: None,
        interaction: false,
        observed: None,
        training: None,
        estimated_player: None,
        estimation: None,
        equilibrium: None,
    }
}

fn kb_bimatrix(kb: &KnowledgeBase, task: &InteractionTask, view: &GameView) -> Result<Bimatrix> {
    let row = kb.view_vector(task.player_a, view).ok_or_else(|| invalid("row payoffs unknown"))?;
    let col = kb.view_vector(task.player_b, view).ok_or_else(|| invalid("column payoffs unknown"))?;
    Bimatrix::new(view.rows, view.cols, row, col)
}

fn solve_known(kb: &KnowledgeBase, task: &InteractionTask, view: &GameView) -> Result<EquilibriumRecord> {
    let bm = kb_bimatrix(kb, task, view)?;
    let ce = ce_solve_max_welfare(&bm)?;
    let check = is_ce(&bm, &ce.distribution);
    Ok(EquilibriumRecord {
        distribution: ce.distribution.probs().to_vec(),
        welfare: ce.welfare,
        is_ce: check.is_ce,
        max_violation: check.max_violation,
    })
}

fn analytic(game: &NormalFormGame, kb: &KnowledgeBase, task: &InteractionTask, view: &GameView) -> Result<TaskRecord> {
    let mut rec = base_record(game, task, view, TaskStatus::Analytic);
    rec.equilibrium = Some(solve_known(kb, task, view)?);
    Ok(rec)
}

fn interact(
    game: &NormalFormGame,
    kb: &mut KnowledgeBase,
    task: &InteractionTask,
    view: &GameView,
    known: usize,
    config: &PipelineConfig,
) -> Result<(TaskRecord, bool)> {
    let pair = [task.player_a, task.player_b];
    let (k, u) = (pair[known], pair[1 - known]);
    let truth: Vec<Vec<f64>> = pair
        .iter()
        .map(|&p| normalize(view.restrict(game.require_payoff(p)?)).ok_or_else(|| invalid("all-zero slice")))
        .collect::<Result<_>>()?;
    let mut rec = base_record(game, task, view, TaskStatus::Interacted);
    rec.interaction = true;
    rec.estimated_player = Some(game.players()[u].clone());

    let (observed, trained) = match config.source {
        EquilibriumSource::Oracle => {
            let bm = Bimatrix::new(view.rows, view.cols, truth[0].clone(), truth[1].clone())?;
            (ce_solve_max_welfare(&bm)?.distribution, false)
        }
        EquilibriumSource::Learned => {
            let seed = exec::stream_seed(config.training.seed, &[task.id as u64]);
            let cfg = TrainingConfig { seed, ..config.training.clone() };
            let a = crate::game::PayoffVector::from_raw(truth[0].clone());
            let b = crate::game::PayoffVector::from_raw(truth[1].clone());
            let out = train_pair(&a, &b, &cfg)?;
            rec.training = Some(TrainingSummary {
                seed,
                epochs: out.epochs,
                stable: out.stable,
                final_rewards: [out.final_reward(0), out.final_reward(1)],
            });
            if !out.stable {
                rec.status = TaskStatus::Unstable;
                rec.observed = Some(out.distribution.probs().to_vec());
                rec.reason = Some(format!("no stable distribution within {} epochs", out.epochs));
                return Ok((rec, true));
            }
            (out.distribution, true)
        }
    };
    rec.observed = Some(observed.probs().to_vec());

    let known_vec = kb.view_vector(k, view).expect("checked by caller");
    let labels: Vec<String> = view.cells.iter().map(|&h| game.decision_sets()[h].labels.join(",")).collect();
    let shape = ViewShape { rows: view.rows, cols: view.cols, known_role: known };
    let mut options = config.estimation;
    let observed = if trained {
        // Learned probabilities are only resolved to the environment's step.
        options.tie_tol = options.tie_tol.max(config.training.theta);
        snap(&observed, config.training.theta)?
    } else {
        observed
    };
    let report = estimate_payoff(&known_vec, &observed, shape, Some(&labels), options)?;
    if report.status != LpStatus::Optimal {
        rec.status = TaskStatus::EstimationInfeasible;
        rec.reason = Some("tension program infeasible; see estimation.infeasibility".into());
        rec.estimation = Some(report);
        return Ok((rec, trained));
    }
    // Each slice estimate sums to one; with no information about how the
    // opponent's mass splits across slices, every slice gets an equal share.
    let blocks = (game.num_decision_sets() / view.cells.len()) as f64;
    let x = report.estimate.as_ref().expect("optimal report has an estimate");
    for (&h, &v) in view.cells.iter().zip(x) {
        kb.cells[u][h].get_or_insert(v / blocks);
    }
    if kb.provenance[u] == Provenance::Unknown {
        kb.provenance[u] = Provenance::Estimated;
    }
    rec.estimation = Some(report);
    rec.equilibrium = Some(solve_known(kb, task, view)?);
    Ok((rec, trained))
}

/// Zeroes entries below `tol` and renormalizes.
pub fn snap(dist: &JointDistribution, tol: f64) -> Result<JointDistribution> {
    let v: Vec<f64> = dist.probs().iter().map(|&x| if x < tol { 0.0 } else { x }).collect();
    let s: f64 = v.iter().sum();
    if s <= 0.0 {
        return Ok(dist.clone());
    }
    JointDistribution::with_tolerance(v.into_iter().map(|x| x / s).collect(), 1e-9)
}

fn stalled(game: &NormalFormGame, kb: &KnowledgeBase, task: &InteractionTask) -> Result<TaskRecord> {
    let view = game.view(task.player_a, task.player_b, &task.fixed)?;
    let mut rec = base_record(game, task, &view, TaskStatus::Stalled);
    let known = [kb.view_known(task.player_a, &view), kb.view_known(task.player_b, &view)];
    rec.reason = Some(match (known, against_set(game, task)?) {
        ([false, false], _) => "neither side's payoffs became known".into(),
        (_, None) => "opponent has no payoff vector to play with".into(),
        (_, Some(false)) => "slice has fewer than two equilibria".into(),
        _ => "not processed".into(),
    });
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn oracle(main: &str) -> PipelineConfig {
        PipelineConfig { source: EquilibriumSource::Oracle, ..PipelineConfig::new(main, TrainingConfig::desk_scale(1)) }
    }

    #[test]
    fn task_sets() {
        assert_eq!(build_task_set(&fixtures::chicken()).len(), 1);
        let tasks = build_task_set(&fixtures::three_player());
        let pairs: Vec<_> = tasks.iter().map(|t| (t.player_a, t.player_b, t.fixed.clone())).collect();
        assert_eq!(
            pairs,
            vec![
                (0, 1, vec![0, 0, 0]),
                (0, 1, vec![0, 0, 1]),
                (0, 2, vec![0, 0, 0]),
                (0, 2, vec![0, 1, 0]),
                (1, 2, vec![0, 0, 0]),
                (1, 2, vec![1, 0, 0]),
            ]
        );
        assert!(tasks.iter().all(|t| t.player_a < t.player_b));
    }

    #[test]
    fn against_examples() {
        let chicken = build_task_set(&fixtures::chicken());
        assert_eq!(against_set(&fixtures::chicken(), &chicken[0]).unwrap(), Some(true));
        let pd = fixtures::prisoners_dilemma();
        assert_eq!(against_set(&pd, &build_task_set(&pd)[0]).unwrap(), Some(false));
        let hidden = pd.with_payoff(1, None).unwrap();
        assert_eq!(against_set(&hidden, &build_task_set(&hidden)[0]).unwrap(), None);
    }

    #[test]
    fn three_players_oracle_run() {
        let m = run_pipeline(&fixtures::three_player(), &oracle("p1")).unwrap();
        assert_eq!(m.status, RunStatus::Complete, "{:#?}", m.tasks);
        m.validate().unwrap();
        assert_eq!(m.training_runs, 0);
        for t in m.task("p2", "p3") {
            assert_eq!(t.status, TaskStatus::Analytic);
            assert!(!t.interaction);
        }
        assert_eq!(m.tasks.iter().filter(|t| t.interaction).count(), 4);
        assert_eq!(m.payoffs[1].provenance, Provenance::Estimated);
        assert!(m.payoffs[2].values.iter().all(Option::is_some));
    }

    #[test]
    fn all_given_means_no_interaction() {
        let cfg = PipelineConfig { given: vec!["p2".into(), "p3".into()], ..oracle("p1") };
        let m = run_pipeline(&fixtures::three_player(), &cfg).unwrap();
        assert_eq!(m.status, RunStatus::Complete);
        assert!(m.tasks.iter().all(|t| t.status == TaskStatus::Analytic));
        m.validate().unwrap();
    }

    #[test]
    fn dominant_strategies_stall() {
        let m = run_pipeline(&fixtures::prisoners_dilemma(), &oracle("p1")).unwrap();
        assert_eq!(m.status, RunStatus::Partial);
        assert_eq!(m.tasks[0].status, TaskStatus::Stalled);
        assert!(m.tasks[0].reason.as_deref().unwrap().contains("fewer than two"));
        m.validate().unwrap();
    }

    #[test]
    fn infeasible_estimation_is_reported() {
        let m = run_pipeline(&fixtures::chicken(), &oracle("p1")).unwrap();
        assert_eq!(m.status, RunStatus::Partial);
        assert_eq!(m.tasks[0].status, TaskStatus::EstimationInfeasible);
        assert!(m.tasks[0].estimation.as_ref().unwrap().infeasibility.is_some());
        m.validate().unwrap();
    }

    #[test]
    fn snap_drops_sub_resolution_mass() {
        let d = JointDistribution::new(vec![0.005, 0.0, 0.3, 0.695]).unwrap();
        let s = snap(&d, 0.02).unwrap();
        assert_eq!(s.probs()[0], 0.0);
        assert!((s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s.probs()[2] - 0.3 / 0.995).abs() < 1e-12);
    }

    #[test]
    fn unknown_main_player_is_an_error() {
        assert!(run_pipeline(&fixtures::chicken(), &oracle("p9")).is_err());
        let hidden = fixtures::chicken().with_payoff(0, None).unwrap();
        assert!(run_pipeline(&hidden, &oracle("p1")).is_err());
    }
}
