use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{train_on, write_text, TrainConfig, Trainer};
use crate::data::Corpus;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport, HeldOutSet, OracleRegressor};
use crate::model::{LossBundle, SkipPosition};

pub const ABLATION_REPORT: &str = "ablation.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationEntry {
    pub skip_position: String,
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub final_losses: LossBundle,
    pub eval: Option<EvalReport>,
}

/// Per-position results and the directional identity checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub entries: Vec<AblationEntry>,
    /// Positions ordered by identity score, best first.
    pub identity_ranking: Vec<String>,
    /// `None` when a position is missing or nothing was evaluated.
    pub p2_at_least_none: Option<bool>,
    pub p1_highest: Option<bool>,
    /// Checks that did not hold. Directional failures are reported, not hidden.
    pub red_flags: Vec<String>,
}

impl AblationReport {
    fn score(&self, skip: SkipPosition) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.skip_position == skip.name())
            .and_then(|e| e.eval.as_ref())
            .map(|r| r.identity_score)
    }

    fn summarize(&mut self) {
        let mut scored: Vec<(String, f64)> = self
            .entries
            .iter()
            .filter_map(|e| e.eval.as_ref().map(|r| (e.skip_position.clone(), r.identity_score)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        self.identity_ranking = scored.iter().map(|s| s.0.clone()).collect();

        self.p2_at_least_none = match (self.score(SkipPosition::P2), self.score(SkipPosition::None)) {
            (Some(p2), Some(none)) => Some(p2 >= none),
            _ => None,
        };
        self.p1_highest = self
            .score(SkipPosition::P1)
            .filter(|_| scored.len() > 1)
            .map(|p1| scored.iter().all(|s| p1 >= s.1));
        self.red_flags.clear();
        if self.p2_at_least_none == Some(false) {
            self.red_flags
                .push("identity score of p2 is below the no-connection control".into());
        }
        if self.p1_highest == Some(false) {
            self.red_flags.push(format!(
                "p1 does not have the highest identity score (ranking: {})",
                self.identity_ranking.join(" > ")
            ));
        }
    }
}

/// Trains one model per skip position with identical data order and seed.
///
/// Each run writes into `<output_dir>/<position>`; the report goes to
/// `<output_dir>/ablation.json`. Evaluation runs when `held_out` is given.
pub fn run_ablation(
    config: &TrainConfig,
    positions: &[SkipPosition],
    corpus: &Corpus,
    held_out: Option<(&HeldOutSet, &OracleRegressor)>,
) -> Result<AblationReport> {
    config.validate()?;
    let mut report = AblationReport {
        entries: Vec::new(),
        identity_ranking: Vec::new(),
        p2_at_least_none: None,
        p1_highest: None,
        red_flags: Vec::new(),
    };
    for &skip in positions {
        let mut cfg = config.clone();
        cfg.skip_position = skip;
        cfg.output_dir = config.output_dir.join(skip.name());
        log::info!("ablation: training {skip}");
        let outcome = train_on(Trainer::new(cfg)?, corpus)?;
        let eval = match held_out {
            Some((set, oracle)) => Some(evaluate(&outcome.trainer.params, set, oracle)?),
            None => None,
        };
        report.entries.push(AblationEntry {
            skip_position: skip.name().to_string(),
            checkpoint: outcome.final_checkpoint,
            steps: outcome.trainer.global_step,
            final_losses: outcome.history.last().map(|r| r.losses).unwrap_or_default(),
            eval,
        });
    }
    report.summarize();
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&config.output_dir.join(ABLATION_REPORT), &json)?;
    Ok(report)
}
