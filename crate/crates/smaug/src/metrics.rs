//! Metrics CSV: one row per train step or evaluation.

use std::path::Path;

use smaug_core::trainer::MetricsRow;

pub const COLUMNS: [&str; 18] = [
    "step",
    "episodes",
    "l_td",
    "l_d",
    "l_var",
    "mean_r_mi",
    "mean_r_f",
    "eval_return",
    "eval_success_rate",
    "eval_std",
    "epsilon",
    "train_steps",
    "mean_q",
    "grad_norm",
    "traj_accuracy",
    "action_accuracy",
    "obs_mse",
    "reward_mse",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn format_row(row: &MetricsRow) -> String {
    let t = row.train.as_ref();
    let e = row.eval.as_ref();
    let cells = [
        row.step.to_string(),
        row.episodes.to_string(),
        cell(t.map(|m| m.l_td)),
        cell(t.and_then(|m| m.l_d)),
        cell(t.and_then(|m| m.l_var)),
        cell(t.map(|m| m.mean_r_mi)),
        cell(t.map(|m| m.mean_r_f)),
        cell(e.map(|s| s.mean_return)),
        cell(e.map(|s| s.success_rate)),
        cell(e.map(|s| s.std_return)),
        row.epsilon.to_string(),
        row.train_steps.to_string(),
        cell(t.map(|m| m.mean_q)),
        cell(t.map(|m| m.grad_norm)),
        cell(t.and_then(|m| m.traj_accuracy)),
        cell(t.and_then(|m| m.action_accuracy)),
        cell(t.and_then(|m| m.obs_mse)),
        cell(t.and_then(|m| m.reward_mse)),
    ];
    cells.join(",")
}

/// Accumulated CSV text, flushed atomically on demand.
#[derive(Clone, Debug)]
pub struct MetricsLog {
    text: String,
    rows: usize,
}

impl Default for MetricsLog {
    fn default() -> Self {
        Self::new()
    }
}

impl MetricsLog {
    pub fn new() -> Self {
        let mut text = COLUMNS.join(",");
        text.push('\n');
        Self { text, rows: 0 }
    }

    pub fn push(&mut self, row: &MetricsRow) {
        self.text.push_str(&format_row(row));
        self.text.push('\n');
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        crate::io::write_atomic(path, self.text.as_bytes())
    }
}

/// Rows of a metrics CSV as `(header, records)`; empty cells become `None`.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>), String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or("empty CSV")?.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<Option<f64>> = line
            .split(',')
            .map(|c| if c.is_empty() { Ok(None) } else { c.parse().map(Some) })
            .collect::<Result<_, _>>()
            .map_err(|e| format!("row {}: {e}", n + 1))?;
        if cells.len() != header.len() {
            return Err(format!("row {} has {} cells, header has {}", n + 1, cells.len(), header.len()));
        }
        rows.push(cells);
    }
    Ok((header, rows))
}
