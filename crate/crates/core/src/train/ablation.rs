//! The multi-seed ablation matrix.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::report::{final_window, RunReport, Summary};
use super::trainer::{Progress, Trainer};
use crate::data::Corpus;
use crate::mel2mel::{Mel2Mel, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// One report per seed, or the error that stopped this variant.
    pub runs: Result<Vec<RunReport>, String>,
}

impl AblationRow {
    fn pooled(&self, pick: impl Fn(&super::report::CheckpointRecord) -> f64) -> Option<Summary> {
        let runs = self.runs.as_ref().ok()?;
        let values: Vec<f64> = runs
            .iter()
            .flat_map(|r| final_window(&r.checkpoints, r.train_losses.len() as u64).iter().map(&pick))
            .collect();
        Some(Summary::of(&values))
    }

    /// Final-window training loss pooled over seeds.
    pub fn train(&self) -> Option<Summary> {
        self.pooled(|c| c.train_loss)
    }

    /// Final-window validation loss pooled over seeds.
    pub fn validation(&self) -> Option<Summary> {
        self.pooled(|c| c.validation_loss)
    }

    /// Mean final-window validation loss of each seed.
    pub fn validation_per_seed(&self) -> Option<Vec<f64>> {
        Some(self.runs.as_ref().ok()?.iter().map(|r| r.validation.mean).collect())
    }
}

/// An expected ordering `worse > better` of mean validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub worse: Variant,
    pub better: Variant,
    pub holds_per_seed: Vec<bool>,
    pub passed: bool,
}

impl TrendCheck {
    pub fn describe(&self) -> String {
        let held = self.holds_per_seed.iter().filter(|&&h| h).count();
        format!(
            "{} > {}: {held}/{} seeds [{}]",
            self.worse.label(),
            self.better.label(),
            self.holds_per_seed.len(),
            if self.passed { "pass" } else { "warn" }
        )
    }
}

/// Orderings the reference results lead us to expect.
pub const EXPECTED_TRENDS: [(Variant, Variant); 3] = [
    (Variant::FrameOnly, Variant::Proposed),
    (Variant::OnsetOnly, Variant::Proposed),
    (Variant::Film2Only, Variant::Film1Only),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub trends: Vec<TrendCheck>,
}

/// An ordering passes when it holds in all but at most a third of the seeds.
pub fn trend_threshold(seeds: usize) -> usize {
    seeds - seeds / 3
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    fn evaluate_trends(&mut self) {
        self.trends = EXPECTED_TRENDS
            .iter()
            .filter_map(|&(worse, better)| {
                let w = self.row(worse)?.validation_per_seed()?;
                let b = self.row(better)?.validation_per_seed()?;
                let holds_per_seed: Vec<bool> = w.iter().zip(&b).map(|(w, b)| w > b).collect();
                let passed = holds_per_seed.iter().filter(|&&h| h).count() >= trend_threshold(holds_per_seed.len());
                Some(TrendCheck {
                    worse,
                    better,
                    holds_per_seed,
                    passed,
                })
            })
            .collect();
    }

    /// Markdown table in the reference layout, losses scaled by 10³, followed
    /// by the trend flags.
    pub fn render(&self) -> String {
        let mut out = String::from("| Variations | Train loss (×10³) | Validation loss (×10³) |\n|---|---|---|\n");
        for row in &self.rows {
            match (&row.runs, row.train(), row.validation()) {
                (Ok(_), Some(t), Some(v)) => {
                    out.push_str(&format!("| {} | {} | {} |\n", row.variant.label(), t.format_scaled(1e3), v.format_scaled(1e3)))
                }
                (Err(e), _, _) => out.push_str(&format!("| {} | failed: {e} | |\n", row.variant.label())),
                _ => out.push_str(&format!("| {} | n/a | n/a |\n", row.variant.label())),
            }
        }
        for t in &self.trends {
            out.push_str(&format!("\n{}", t.describe()));
        }
        out.push('\n');
        out
    }
}

/// Trains every variant with every seed on identical data; the proposed
/// model's row comes first.
pub fn run_ablation_suite(
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    corpus: &Corpus,
    mut observer: impl FnMut(Variant, u64, &Progress),
) -> AblationTable {
    let mut ordered: Vec<Variant> = variants.to_vec();
    ordered.sort_by_key(|&v| v != Variant::Proposed);
    ordered.dedup();
    let rows = ordered
        .into_iter()
        .map(|variant| {
            let runs = seeds
                .iter()
                .map(|&seed| {
                    let config = TrainConfig {
                        variant,
                        seed,
                        ..base.clone()
                    };
                    let mut trainer = Trainer::<Mel2Mel>::new(config, corpus)?;
                    trainer.run(variant.label(), |p| {
                        observer(variant, seed, p);
                        ControlFlow::Continue(())
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string());
            AblationRow { variant, runs }
        })
        .collect();
    let mut table = AblationTable {
        seeds: seeds.to_vec(),
        rows,
        trends: Vec::new(),
    };
    table.evaluate_trends();
    table
}
