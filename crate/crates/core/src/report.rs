//! Grid renders of a schedule, comparison tables and sweep CSVs.

use std::fmt::Write;

use crate::conv::LayerSpec;
use crate::exec::{validate_strategy, CostModel, HardwareSpec, Strategy};
use crate::strategy::GroupSchedule;

/// Fill colours, indexed by group index modulo 12.
pub const PALETTE: [&str; 12] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
    "#86bcb6", "#d4a6c8",
];

const CELL: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridRender {
    /// One line per output row, labels right-aligned and space separated.
    pub ascii: String,
    pub svg: String,
}

/// 1-based group label of every output position; 0 where no group covers it.
pub fn group_labels(schedule: &GroupSchedule, layer: &LayerSpec) -> Vec<Vec<usize>> {
    let mut labels = vec![vec![0; layer.w_out()]; layer.h_out()];
    for (k, group) in schedule.groups().iter().enumerate() {
        for p in group {
            if layer.contains_patch(*p) {
                labels[p.i][p.j] = k + 1;
            }
        }
    }
    labels
}

pub fn render_strategy_grid(schedule: &GroupSchedule, layer: &LayerSpec) -> GridRender {
    let labels = group_labels(schedule, layer);
    let width = schedule.len().max(1).to_string().len();
    let mut ascii = String::new();
    for row in &labels {
        let cells: Vec<String> = row.iter().map(|l| format!("{l:>width$}")).collect();
        ascii.push_str(&cells.join(" "));
        ascii.push('\n');
    }

    let (w, h) = (layer.w_out() * CELL, layer.h_out() * CELL);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    for (i, row) in labels.iter().enumerate() {
        for (j, &label) in row.iter().enumerate() {
            let (x, y) = (j * CELL, i * CELL);
            let fill = if label == 0 { "#ffffff" } else { PALETTE[(label - 1) % PALETTE.len()] };
            let _ = writeln!(
                svg,
                r##"  <rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#333333"/>"##
            );
            let _ = writeln!(
                svg,
                r#"  <text x="{}" y="{}" font-family="monospace" font-size="12" text-anchor="middle" dominant-baseline="central">{label}</text>"#,
                x + CELL / 2,
                y + CELL / 2
            );
        }
    }
    svg.push_str("</svg>\n");
    GridRender { ascii, svg }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompareRow {
    pub strategy: String,
    pub duration: u64,
    pub peak_footprint: u64,
    pub load_traffic: u64,
    pub write_traffic: u64,
    pub steps: usize,
    pub valid: bool,
    pub violations: usize,
}

/// Validates and prices each named strategy against the same layer and platform.
pub fn compare(
    strategies: &[(String, Strategy)],
    layer: &LayerSpec,
    hw: &HardwareSpec,
    cost: &CostModel,
    nb_data_reload: usize,
) -> Vec<CompareRow> {
    strategies
        .iter()
        .map(|(name, s)| {
            let report = validate_strategy(s, layer, hw, cost, nb_data_reload);
            CompareRow {
                strategy: name.clone(),
                duration: report.metrics.total_duration,
                peak_footprint: report.metrics.peak_footprint,
                load_traffic: report.metrics.load_traffic,
                write_traffic: report.metrics.write_traffic,
                steps: s.steps.len(),
                valid: report.is_valid(),
                violations: report.violations.len(),
            }
        })
        .collect()
}

pub fn format_table(rows: &[CompareRow]) -> String {
    let name_w = rows.iter().map(|r| r.strategy.len()).max().unwrap_or(0).max("strategy".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>10}  {:>8}  {:>10}  {:>8}  {:>6}  valid",
        "strategy", "duration", "peak", "loads", "writes", "steps"
    );
    for r in rows {
        let valid = if r.valid { "yes".to_string() } else { format!("no ({})", r.violations) };
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>10}  {:>8}  {:>10}  {:>8}  {:>6}  {valid}",
            r.strategy, r.duration, r.peak_footprint, r.load_traffic, r.write_traffic, r.steps
        );
    }
    out
}

/// `100 * (best_heuristic - candidate) / best_heuristic`.
pub fn gain_percent(best_heuristic: u64, candidate: u64) -> f64 {
    if best_heuristic == 0 {
        return 0.0;
    }
    100.0 * (best_heuristic as f64 - candidate as f64) / best_heuristic as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepPoint {
    pub axis: usize,
    pub rows: Vec<CompareRow>,
}

/// Comparison tables along one axis, such as group size or input size.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SweepResult {
    pub axis_name: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn new(axis_name: impl Into<String>) -> Self {
        SweepResult { axis_name: axis_name.into(), points: Vec::new() }
    }

    pub fn push(&mut self, axis: usize, rows: Vec<CompareRow>) {
        self.points.push(SweepPoint { axis, rows });
    }

    /// Duration series of one strategy; `None` where it was not run.
    pub fn durations(&self, strategy: &str) -> Vec<Option<u64>> {
        self.series(strategy, |r| r.duration)
    }

    pub fn peak_footprints(&self, strategy: &str) -> Vec<Option<u64>> {
        self.series(strategy, |r| r.peak_footprint)
    }

    fn series(&self, strategy: &str, f: impl Fn(&CompareRow) -> u64) -> Vec<Option<u64>> {
        self.points.iter().map(|p| p.rows.iter().find(|r| r.strategy == strategy).map(&f)).collect()
    }

    /// Gain of `candidate` over the best of `heuristics` at every point
    /// where all of them were run.
    pub fn gains(&self, candidate: &str, heuristics: &[&str]) -> Vec<Option<f64>> {
        self.points
            .iter()
            .map(|p| {
                let find = |name: &str| p.rows.iter().find(|r| r.strategy == name).map(|r| r.duration);
                let best = heuristics.iter().map(|h| find(h)).collect::<Option<Vec<u64>>>()?.into_iter().min()?;
                Some(gain_percent(best, find(candidate)?))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,strategy,duration,peak_footprint,load_traffic,write_traffic\n");
        for p in &self.points {
            for r in &p.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    p.axis, r.strategy, r.duration, r.peak_footprint, r.load_traffic, r.write_traffic
                );
            }
        }
        out
    }
}
