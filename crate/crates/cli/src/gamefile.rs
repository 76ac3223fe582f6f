//! Game and distribution files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use celab::env::JointDistribution;
use celab::game::{validate_game, NormalFormGame, PayoffVector};
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameFile {
    players: Vec<String>,
    decisions: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    payoffs: BTreeMap<String, Option<Vec<f64>>>,
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.split(" at line ").next().unwrap_or_default();
        Failure::input(format!("{}: line {}, column {}: {msg}", path.display(), e.line(), e.column()))
    })
}

pub fn load_game(path: &Path) -> Result<NormalFormGame, Failure> {
    let file: GameFile = parse_json(path, &read(path)?)?;
    let at = |field: String, msg: String| Failure::input(format!("{}: field `{field}`: {msg}", path.display()));

    let keys = file.decisions.keys().map(|k| ("decisions", k)).chain(file.payoffs.keys().map(|k| ("payoffs", k)));
    for (section, key) in keys {
        if !file.players.contains(key) {
            return Err(at(format!("{section}.{key}"), "not listed in `players`".into()));
        }
    }
    let mut menus = Vec::with_capacity(file.players.len());
    let mut payoffs = Vec::with_capacity(file.players.len());
    for p in &file.players {
        let menu = file
            .decisions
            .get(p)
            .ok_or_else(|| at(format!("decisions.{p}"), "missing".into()))?;
        menus.push(menu.clone());
        let payoff = match file.payoffs.get(p).cloned().flatten() {
            Some(v) => Some(PayoffVector::normalized(v).map_err(|e| at(format!("payoffs.{p}"), e.to_string()))?),
            None => None,
        };
        payoffs.push(payoff);
    }
    let game = NormalFormGame::new(file.players, menus, payoffs).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    for msg in validate_game(&game).restriction {
        log::warn!("{}: {msg}", path.display());
    }
    Ok(game)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DistributionFile {
    Bare(Vec<f64>),
    Wrapped { distribution: Vec<f64> },
}

/// Accepts a bare JSON array or any object with a `distribution` field
/// (such as the output of `celab train`).
pub fn load_distribution(path: &Path) -> Result<JointDistribution, Failure> {
    let text = read(path)?;
    let probs = match parse_json::<DistributionFile>(path, &text) {
        Ok(DistributionFile::Bare(v)) | Ok(DistributionFile::Wrapped { distribution: v }) => v,
        Err(_) => {
            // Re-parse as a plain value so the error carries a position.
            let _: serde_json::Value = parse_json(path, &text)?;
            return Err(Failure::input(format!(
                "{}: expected an array of probabilities or an object with a `distribution` array",
                path.display()
            )));
        }
    };
    JointDistribution::with_tolerance(probs, 1e-6).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}
