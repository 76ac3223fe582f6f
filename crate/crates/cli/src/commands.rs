use std::io::Write;

use celab::env::JointDistribution;
use celab::equilibrium::{ce_solve_max_welfare, expected_payoffs, is_ce, nash_equilibria, ne_hull_contains};
use celab::estimation::{estimate_payoff, EstimationOptions, ViewShape};
use celab::exec::Execution;
use celab::game::{Bimatrix, GameView, NormalFormGame, PayoffVector};
use celab::lp::LpStatus;
use celab::orchestrator::{run_pipeline, EquilibriumSource, PipelineConfig, RunStatus};
use celab::policy::{Checkpoint, LossKind};
use celab::training::{train_pair, write_history_csv, TrainingConfig};
use serde_json::json;

use crate::gamefile::{load_distribution, load_game};
use crate::output::Outputs;
use crate::{
    exit, EstimateArgs, Failure, LossArg, PipelineArgs, Preset, SliceArgs, SolveArgs, SolveMode, SourceArg, TrainArgs,
    TrainingArgs,
};

struct Slice {
    a: usize,
    b: usize,
    view: GameView,
    fixed: Vec<(String, String)>,
}

impl Slice {
    fn resolve(game: &NormalFormGame, args: &SliceArgs) -> Result<Self, Failure> {
        let (a, b) = match &args.pair {
            Some(p) => {
                let (x, y) = p
                    .split_once(',')
                    .ok_or_else(|| Failure::input(format!("--pair `{p}`: expected two comma-separated player ids")))?;
                (game.player_index(x.trim())?, game.player_index(y.trim())?)
            }
            None => (0, 1),
        };
        if a == b {
            return Err(Failure::input("--pair needs two different players"));
        }
        let mut fixed: Vec<Option<usize>> = vec![None; game.num_players()];
        for spec in &args.fix {
            let (p, d) = spec
                .split_once('=')
                .ok_or_else(|| Failure::input(format!("--fix `{spec}`: expected PLAYER=DECISION")))?;
            let i = game.player_index(p)?;
            if i == a || i == b {
                return Err(Failure::input(format!("--fix `{spec}`: `{p}` is one of the pair")));
            }
            let k = game.menus()[i]
                .iter()
                .position(|m| m == d)
                .ok_or_else(|| Failure::input(format!("--fix `{spec}`: `{p}` has no decision `{d}`")))?;
            fixed[i] = Some(k);
        }
        let mut profile = vec![0; game.num_players()];
        let mut labels = Vec::new();
        for (i, f) in fixed.iter().enumerate() {
            if i == a || i == b {
                continue;
            }
            let id = &game.players()[i];
            let k = f.ok_or_else(|| Failure::input(format!("player `{id}` is not in the pair; add --fix {id}=<decision>")))?;
            profile[i] = k;
            labels.push((id.clone(), game.menus()[i][k].clone()));
        }
        let view = game.view(a, b, &profile)?;
        Ok(Slice { a, b, view, fixed: labels })
    }

    /// The player's slice payoffs rescaled to sum to one.
    fn payoff(&self, game: &NormalFormGame, player: usize) -> Result<PayoffVector, Failure> {
        let raw = self.view.restrict(game.require_payoff(player)?);
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Failure::input(format!("`{}` has no positive payoff on this slice", game.players()[player])));
        }
        Ok(PayoffVector::from_raw(raw.into_iter().map(|v| v / sum).collect()))
    }

    fn bimatrix(&self, game: &NormalFormGame) -> Result<Bimatrix, Failure> {
        let row = self.payoff(game, self.a)?;
        let col = self.payoff(game, self.b)?;
        Ok(Bimatrix::new(self.view.rows, self.view.cols, row.values().to_vec(), col.values().to_vec())?)
    }

    fn cell_labels(&self, game: &NormalFormGame) -> Vec<String> {
        let (ra, rb) = (&game.menus()[self.a], &game.menus()[self.b]);
        ra.iter().flat_map(|r| rb.iter().map(move |c| format!("{r}/{c}"))).collect()
    }

    fn ids(&self, game: &NormalFormGame) -> [String; 2] {
        [game.players()[self.a].clone(), game.players()[self.b].clone()]
    }
}

fn training_config(args: &TrainingArgs) -> Result<TrainingConfig, Failure> {
    let mut c = match args.preset {
        Preset::Desk => TrainingConfig::desk_scale(args.seed),
        Preset::Full => TrainingConfig::full_scale(args.seed),
    };
    c.rounds = args.rounds.unwrap_or(c.rounds);
    c.steps = args.steps.unwrap_or(c.steps);
    c.theta = args.theta.unwrap_or(c.theta);
    c.gamma = args.gamma.unwrap_or(c.gamma);
    c.learning_rate = args.learning_rate.unwrap_or(c.learning_rate);
    c.max_epochs = args.epochs.unwrap_or(c.max_epochs);
    c.stability_window = args.window.unwrap_or(c.stability_window);
    c.stability_tol = args.tol.or(c.stability_tol);
    c.analyzer_width = args.analyzer_width.unwrap_or(c.analyzer_width);
    c.hidden_width = args.hidden_width.unwrap_or(c.hidden_width);
    if let Some(l) = args.loss {
        c.loss = match l {
            LossArg::TwoSided => LossKind::TwoSided,
            LossArg::Reinforce => LossKind::Reinforce,
        };
    }
    if args.sequential {
        c.execution = Execution::Sequential;
    }
    c.validate()?;
    Ok(c)
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::from(celab::Error::from(e)))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn parse_point(s: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::input(format!("--point `{s}`: expected two comma-separated numbers"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    let x: f64 = x.trim().parse().map_err(|_| bad())?;
    let y: f64 = y.trim().parse().map_err(|_| bad())?;
    Ok((x, y))
}

pub fn solve(args: SolveArgs) -> Result<u8, Failure> {
    let game = load_game(&args.game)?;
    let slice = Slice::resolve(&game, &args.slice)?;
    let bm = slice.bimatrix(&game)?;
    let points = args.points.iter().map(|p| parse_point(p)).collect::<Result<Vec<_>, _>>()?;
    let out = match &args.out_dir {
        Some(dir) => Some(Outputs::prepare(dir, &["solve.json".into()], args.force)?),
        None => None,
    };

    let mut doc = json!({
        "command": "solve",
        "game": args.game.display().to_string(),
        "players": slice.ids(&game),
        "fixed": slice.fixed,
    });
    let want = |m: SolveMode| args.mode == SolveMode::All || args.mode == m;
    let nash = nash_equilibria(&bm);
    if want(SolveMode::Ne) {
        doc["nash"] = json!(nash);
    }
    let ce = ce_solve_max_welfare(&bm)?;
    let ce_payoffs = expected_payoffs(&bm, &ce.distribution);
    if want(SolveMode::Ce) {
        let check = is_ce(&bm, &ce.distribution);
        doc["correlated"] = json!({
            "distribution": ce.distribution,
            "labels": slice.cell_labels(&game),
            "welfare": ce.welfare,
            "payoffs": ce_payoffs,
            "is_ce": check.is_ce,
            "max_violation": check.max_violation,
        });
    }
    if want(SolveMode::Hull) {
        let mut verdicts = vec![json!({
            "label": "correlated",
            "point": ce_payoffs,
            "inside": ne_hull_contains(&nash, ce_payoffs)?,
        })];
        for p in points {
            verdicts.push(json!({"label": "user", "point": p, "inside": ne_hull_contains(&nash, p)?}));
        }
        doc["hull"] = json!(verdicts);
    }
    print_json(&doc)?;
    if let Some(out) = out {
        out.json("solve.json", &doc)?;
    }
    Ok(exit::OK)
}

pub fn train(args: TrainArgs) -> Result<u8, Failure> {
    let game = load_game(&args.game)?;
    let slice = Slice::resolve(&game, &args.slice)?;
    let config = training_config(&args.training)?;
    let pa = slice.payoff(&game, slice.a)?;
    let pb = slice.payoff(&game, slice.b)?;
    let ids = slice.ids(&game);
    let names: Vec<String> = ["history.csv", "distribution.json", "network_1.json", "network_2.json", "trajectories_1.csv", "trajectories_2.csv"]
        .map(String::from)
        .to_vec();
    let out = Outputs::prepare(&args.output.out_dir, &names, args.output.force)?;

    let outcome = train_pair(&pa, &pb, &config)?;
    let config_json = serde_json::to_string(&config).map_err(|e| Failure::from(celab::Error::from(e)))?;
    let header = |what: &str| {
        vec![
            ("celab", what.to_string()),
            ("game", args.game.display().to_string()),
            ("players", ids.join(",")),
            ("seed", config.seed.to_string()),
            ("config", config_json.clone()),
        ]
    };
    out.csv("history.csv", &header("train history"), |w| write_history_csv(&outcome.history, [&ids[0], &ids[1]], w))?;
    for (k, batch) in outcome.last_batches.iter().enumerate() {
        let what = format!("final-epoch trajectories of {}", ids[k]);
        out.csv(&format!("trajectories_{}.csv", k + 1), &header(&what), |w| batch.write_csv(w))?;
    }
    for (k, agent) in outcome.agents.iter().enumerate() {
        out.json(
            &format!("network_{}.json", k + 1),
            &json!({
                "command": "train",
                "player": ids[k],
                "seed": config.seed,
                "config": config,
                "network": Checkpoint::from_params(agent, config.seed),
            }),
        )?;
    }
    let rewards = [outcome.final_reward(0), outcome.final_reward(1)];
    out.json(
        "distribution.json",
        &json!({
            "command": "train",
            "game": args.game.display().to_string(),
            "players": ids,
            "fixed": slice.fixed,
            "seed": config.seed,
            "config": config,
            "stable": outcome.stable,
            "epochs": outcome.epochs,
            "final_rewards": rewards,
            "labels": slice.cell_labels(&game),
            "distribution": outcome.distribution,
        }),
    )?;

    println!(
        "{} after {} epochs; distribution {:?}; final rewards {}={:.4} {}={:.4}",
        if outcome.stable { "stable" } else { "not stable" },
        outcome.epochs,
        outcome.distribution.probs(),
        ids[0],
        rewards[0],
        ids[1],
        rewards[1]
    );
    println!("artifacts in {}", args.output.out_dir.display());
    Ok(if outcome.stable { exit::OK } else { exit::UNSTABLE })
}

pub fn estimate(args: EstimateArgs) -> Result<u8, Failure> {
    let game = load_game(&args.game)?;
    let slice = Slice::resolve(&game, &args.slice)?;
    let known = game.player_index(&args.known)?;
    let known_role = if known == slice.a {
        0
    } else if known == slice.b {
        1
    } else {
        return Err(Failure::input(format!("`{}` is not one of the slice's players", args.known)));
    };
    let opponent = if known_role == 0 { slice.b } else { slice.a };
    let v = slice.payoff(&game, known)?;
    let p: JointDistribution = load_distribution(&args.distribution)?;
    let shape = ViewShape { rows: slice.view.rows, cols: slice.view.cols, known_role };
    if p.len() != shape.cells() {
        return Err(Failure::input(format!(
            "{}: distribution has {} entries, the slice has {}",
            args.distribution.display(),
            p.len(),
            shape.cells()
        )));
    }
    let mut options = EstimationOptions { rotated: args.rotated, round_trip: !args.no_round_trip, ..Default::default() };
    if let Some(t) = args.tie_tol {
        if !(t >= 0.0) {
            return Err(Failure::input("--tie-tol must be non-negative"));
        }
        options.tie_tol = t;
    }
    let out = Outputs::prepare(&args.output.out_dir, &["estimation.json".into()], args.output.force)?;
    let labels = slice.cell_labels(&game);
    let report = estimate_payoff(v.values(), &p, shape, Some(&labels), options)?;

    out.json(
        "estimation.json",
        &json!({
            "command": "estimate",
            "game": args.game.display().to_string(),
            "distribution_file": args.distribution.display().to_string(),
            "known": args.known,
            "opponent": game.players()[opponent],
            "fixed": slice.fixed,
            "config": options,
            "distribution": p,
            "report": report,
        }),
    )?;

    let code = match report.status {
        LpStatus::Optimal => {
            println!("estimate for {}: {:?}", game.players()[opponent], report.estimate.as_deref().unwrap_or_default());
            if let Some(rt) = &report.round_trip {
                println!(
                    "round trip: {} (L-inf {:.3e}, tolerance {:.0e})",
                    if rt.matches { "matches" } else { "differs" },
                    rt.linf,
                    rt.tolerance
                );
            }
            exit::OK
        }
        _ => {
            let families = report
                .infeasibility
                .as_ref()
                .map(|i| i.violated_families.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(", "))
                .unwrap_or_default();
            println!("estimation infeasible; violated families: {families}");
            exit::PARTIAL
        }
    };
    println!("report in {}", out.path("estimation.json").display());
    Ok(code)
}

pub fn pipeline(args: PipelineArgs) -> Result<u8, Failure> {
    let game = load_game(&args.game)?;
    let training = training_config(&args.training)?;
    let mut config = PipelineConfig::new(args.main.clone(), training);
    config.given = args.given.clone();
    config.source = match args.source {
        SourceArg::Learned => EquilibriumSource::Learned,
        SourceArg::Oracle => EquilibriumSource::Oracle,
    };
    config.estimation.rotated = args.rotated;
    let out = Outputs::prepare(&args.output.out_dir, &["manifest.json".into()], args.output.force)?;
    let manifest = run_pipeline(&game, &config)?;
    out.json("manifest.json", &manifest)?;

    for t in &manifest.tasks {
        let fixed: Vec<String> = t.fixed.iter().map(|(p, d)| format!("{p}={d}")).collect();
        let mut line = format!("task {} {}-{}", t.id, t.players[0], t.players[1]);
        if !fixed.is_empty() {
            line.push_str(&format!(" [{}]", fixed.join(" ")));
        }
        line.push_str(&format!(": {}", serde_json::to_value(t.status).map_or_else(|_| String::new(), |v| v.as_str().unwrap_or_default().to_string())));
        if let Some(r) = &t.reason {
            line.push_str(&format!(" ({r})"));
        }
        println!("{line}");
    }
    let status = match manifest.status {
        RunStatus::Complete => "complete",
        RunStatus::Partial => "partial",
    };
    println!("run {status}; {} training runs; manifest in {}", manifest.training_runs, out.path("manifest.json").display());
    Ok(if manifest.status == RunStatus::Complete { exit::OK } else { exit::PARTIAL })
}
