//! Grids of Monte Carlo batches.

use serde::Serialize;

use super::config::{Mode, ScenarioConfig, SweepCell};
use super::montecarlo::{run_batch, BatchSummary};
use super::sim::Scenario;
use crate::error::{Error, Result};

/// The standard comparison grid: the four loss pairs, both single-tier
/// baselines and the ideal cloud.
pub fn standard_grid() -> Vec<SweepCell> {
    let cell = |name: &str, mode, cloud_loss, edge_loss| SweepCell {
        name: name.to_owned(),
        mode,
        cloud_loss,
        edge_loss,
        disturbance: None,
    };
    vec![
        cell("loss_0_0", Mode::Proposed, Some(0.0), Some(0.0)),
        cell("loss_80_0", Mode::Proposed, Some(0.8), Some(0.0)),
        cell("loss_80_80", Mode::Proposed, Some(0.8), Some(0.8)),
        cell("loss_100_80", Mode::Proposed, Some(1.0), Some(0.8)),
        cell("edge_only_80", Mode::Proposed, None, Some(0.8)),
        cell("onboard_only", Mode::OnboardLaw, None, None),
        cell("ideal_cloud", Mode::IdealCloud, Some(0.0), None),
    ]
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub summary: BatchSummary,
    /// Relative cost increase over the `ideal_cloud` row, when present.
    pub degradation: Option<f64>,
}

/// Runs every cell of `grid` (or the config's own grid, or the standard one).
pub fn sweep(base: &ScenarioConfig, grid: &[SweepCell]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for cell in grid {
        let cfg = base.with_cell(cell)?;
        let scenario = Scenario::new(cfg)?;
        let summary = run_batch(&scenario, base.run.seed, base.run.runs)?;
        rows.push(SweepRow {
            cell: cell.clone(),
            summary,
            degradation: None,
        });
    }
    let ideal = rows
        .iter()
        .find(|r| r.cell.mode == Mode::IdealCloud)
        .map(|r| r.summary.clone());
    if let Some(ideal) = ideal {
        for r in &mut rows {
            r.degradation = Some(r.summary.degradation(&ideal));
        }
    }
    Ok(rows)
}

/// The grid a config asks for: its own `[[sweep]]` cells, else the standard grid.
pub fn grid_of(cfg: &ScenarioConfig) -> Vec<SweepCell> {
    if cfg.sweep.is_empty() {
        standard_grid()
    } else {
        cfg.sweep.clone()
    }
}

/// Fixed-width comparison table.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:<14} {:>12} {:>10} {:>7} {:>7} {:>7} {:>7} {:>8} {:>9}\n",
        "cell", "mean cost", "std", "cloud", "edge", "buffer", "onbrd", "c-orig", "degr"
    );
    for r in rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{:<14} {:>12.4} {:>10.4} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>8.3} {:>9}\n",
            r.cell.name,
            s.average_cost.mean,
            s.average_cost.std_dev,
            s.cloud_fraction.mean,
            s.edge_fraction.mean,
            s.buffer_fraction.mean,
            s.onboard_fraction.mean,
            s.cloud_origin.mean,
            r.degradation.map_or("-".to_owned(), |d| format!("{:+.2}%", 100.0 * d)),
        ));
    }
    out
}
