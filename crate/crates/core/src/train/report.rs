//! Loss histories and checkpoint-window statistics.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub iteration: u64,
    /// Mean training loss over the iterations since the previous checkpoint.
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }

    /// `mean ± std` scaled by `scale`.
    pub fn format_scaled(&self, scale: f64) -> String {
        format!("{:.3} ± {:.3}", self.mean * scale, self.std * scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub config: TrainConfig,
    /// Training loss at every completed iteration, in order.
    pub train_losses: Vec<f64>,
    pub checkpoints: Vec<CheckpointRecord>,
    /// Statistics over the checkpoints in the final tenth of the run.
    pub train: Summary,
    pub validation: Summary,
}

/// Checkpoints whose iteration lies in the final 10% of `total`, widened to
/// the last two when fewer qualify.
pub fn final_window(checkpoints: &[CheckpointRecord], total: u64) -> &[CheckpointRecord] {
    let threshold = total - total / 10;
    let inside = checkpoints.iter().filter(|c| c.iteration >= threshold).count();
    let n = inside.max(2).min(checkpoints.len());
    &checkpoints[checkpoints.len() - n..]
}

impl RunReport {
    pub fn new(label: impl Into<String>, config: TrainConfig, train_losses: Vec<f64>, checkpoints: Vec<CheckpointRecord>) -> Self {
        let completed = train_losses.len() as u64;
        let window = final_window(&checkpoints, completed);
        let train = Summary::of(&window.iter().map(|c| c.train_loss).collect::<Vec<_>>());
        let validation = Summary::of(&window.iter().map(|c| c.validation_loss).collect::<Vec<_>>());
        Self {
            label: label.into(),
            config,
            train_losses,
            checkpoints,
            train,
            validation,
        }
    }

    pub fn initial_loss(&self) -> f64 {
        self.train_losses.first().copied().unwrap_or(f64::NAN)
    }

    /// One JSON object per line: the run header, each iteration, each
    /// checkpoint, then the summary.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        let mut line = |v: serde_json::Value| {
            out.push_str(&v.to_string());
            out.push('\n');
        };
        line(serde_json::json!({"record": "run", "label": self.label, "config": self.config}));
        for (i, loss) in self.train_losses.iter().enumerate() {
            line(serde_json::json!({"record": "iteration", "iteration": i, "train_loss": loss}));
        }
        for c in &self.checkpoints {
            line(serde_json::json!({"record": "checkpoint", "iteration": c.iteration, "train_loss": c.train_loss, "validation_loss": c.validation_loss}));
        }
        line(serde_json::json!({"record": "summary", "train": self.train, "validation": self.validation}));
        out
    }

    pub fn table_row(&self) -> String {
        format!(
            "| {} | {} | {} |",
            self.label,
            self.train.format_scaled(1e3),
            self.validation.format_scaled(1e3)
        )
    }
}
