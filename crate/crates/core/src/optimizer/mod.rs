//! Optimal patch grouping.
//!
//! [`build_model`] states the problem as a 0-1 program over patch-to-group
//! and pixel-in-group variables. [`solve`] searches it exactly with a
//! branch-and-bound over ordered groupings, then falls back to local search
//! when the budget is too short to close the tree.

mod instance;
mod lp;
mod model;
mod oracle;
mod polish;
mod search;
mod seed;

use std::fmt;
use std::time::{Duration, Instant};

use crate::conv::LayerSpec;
use crate::exec::{HardwareSpec, Strategy};
use crate::strategy::{compile_with_provenance, GroupSchedule, S1Params, StrategyError};

pub use lp::to_lp;
pub use model::{build_model, Constraint, IlpModel, LinExpr, Sense, Var, VarFamily};
pub use oracle::{brute_force_optimum, BRUTE_FORCE_LIMIT};

use instance::Instance;
use search::{Incumbent, SharedIncumbent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OptimizeError {
    InvalidGroupCount {
        k: usize,
        k_min: usize,
        k_max: usize,
    },
    InvalidStart(String),
    /// The search closed without finding any feasible grouping.
    Infeasible,
    /// The budget ran out before any feasible grouping was found.
    NoIncumbent,
    InstanceTooLarge {
        patches: usize,
        limit: usize,
    },
    Strategy(StrategyError),
}

impl fmt::Display for OptimizeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizeError::InvalidGroupCount { k, k_min, k_max } => {
                write!(f, "group count {k} outside [{k_min}, {k_max}]")
            }
            OptimizeError::InvalidStart(why) => write!(f, "invalid start: {why}"),
            OptimizeError::Infeasible => f.write_str("no feasible grouping exists"),
            OptimizeError::NoIncumbent => f.write_str("budget exhausted before a feasible grouping was found"),
            OptimizeError::InstanceTooLarge { patches, limit } => {
                write!(f, "{patches} patches, exhaustive search is limited to {limit}")
            }
            OptimizeError::Strategy(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for OptimizeError {}

impl From<StrategyError> for OptimizeError {
    fn from(e: StrategyError) -> Self {
        OptimizeError::Strategy(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    ProvedOptimal,
    /// Local search converged before the budget; optimality not proved.
    Feasible,
    Timeout,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::ProvedOptimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Total wall-clock budget. `None` means no limit.
    pub budget: Option<Duration>,
    /// Time given to the exact search before switching to local search.
    pub polish_after: Duration,
    pub workers: usize,
    /// Prime the search with row, zigzag and band-sweep groupings.
    pub seed_heuristics: bool,
    pub mip_start: Option<GroupSchedule>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            budget: None,
            polish_after: Duration::from_secs(60),
            workers: 1,
            seed_heuristics: true,
            mip_start: None,
        }
    }
}

impl SolveOptions {
    pub fn with_budget(budget: Duration) -> Self {
        SolveOptions { budget: Some(budget), ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub schedule: GroupSchedule,
    pub objective: u64,
    pub status: SolveStatus,
    pub wall_time: Duration,
    pub nodes: u64,
    /// Objective of the MIP start, if one was given.
    pub start_objective: Option<u64>,
    /// Pixels shared with the previous group, per group.
    pub overlaps: Vec<usize>,
}

/// Full variable assignment for a schedule.
pub fn schedule_to_mip_start(model: &IlpModel, schedule: &GroupSchedule) -> Result<Vec<i64>, OptimizeError> {
    model.encode(schedule)
}

pub fn solution_to_schedule(model: &IlpModel, values: &[i64]) -> GroupSchedule {
    model.decode(values)
}

/// Compiles a solution into an executable strategy.
pub fn solution_strategy(solution: &Solution, layer: &LayerSpec, hw: &HardwareSpec) -> Result<Strategy, OptimizeError> {
    Ok(compile_with_provenance(&solution.schedule, layer, hw, "optimized")?)
}

/// Objective of a schedule under the model, or `None` if it breaks a constraint.
pub fn evaluate_schedule(model: &IlpModel, schedule: &GroupSchedule) -> Option<u64> {
    let inst = Instance::from_model(model);
    start_incumbent(&inst, model, schedule).ok().map(|inc| inc.objective)
}

fn start_incumbent(inst: &Instance, model: &IlpModel, start: &GroupSchedule) -> Result<Incumbent, OptimizeError> {
    let groups: Vec<Vec<usize>> = start.without_empty().to_linear(&model.layer);
    if !inst.is_partition(&groups) {
        return Err(OptimizeError::InvalidStart("not a partition of the patches".into()));
    }
    match inst.evaluate(&groups) {
        Some(obj) => Ok(Incumbent::new(inst, obj, groups)),
        None => Err(OptimizeError::InvalidStart(
            "violates the group count, group size, memory or reload constraints".into(),
        )),
    }
}

/// Solves the grouping problem for `model.groups` groups.
pub fn solve(model: &IlpModel, options: &SolveOptions) -> Result<Solution, OptimizeError> {
    let started = Instant::now();
    let inst = Instance::from_model(model);
    let mut start_objective = None;
    let shared = SharedIncumbent::new(None);
    if let Some(start) = &options.mip_start {
        let inc = start_incumbent(&inst, model, start)?;
        start_objective = Some(inc.objective);
        shared.offer(inc);
    }
    if options.seed_heuristics {
        for (obj, groups) in seed::seeds(&inst) {
            shared.offer(Incumbent::new(&inst, obj, groups));
        }
    }

    let deadline = options.budget.map(|b| started + b);
    let search_deadline = match deadline {
        Some(d) => Some(d.min(started + options.polish_after)),
        None => Some(started + options.polish_after),
    };
    let outcome = search::branch_and_bound(&inst, &shared, search_deadline, options.workers.max(1));

    let (groups, objective, status) = if outcome.closed {
        let inc = shared.snapshot().ok_or(OptimizeError::Infeasible)?;
        (inc.groups, inc.objective, SolveStatus::ProvedOptimal)
    } else {
        let inc = shared.snapshot().ok_or(OptimizeError::NoIncumbent)?;
        let mut groups = inc.groups;
        let (objective, _) = polish::polish(&inst, &mut groups, deadline).ok_or(OptimizeError::NoIncumbent)?;
        let expired = deadline.is_some_and(|d| Instant::now() >= d);
        (groups, objective, if expired { SolveStatus::Timeout } else { SolveStatus::Feasible })
    };

    let fps: Vec<_> = groups.iter().map(|g| inst.footprint(g)).collect();
    let overlaps = (0..fps.len()).map(|k| if k == 0 { 0 } else { fps[k].intersection(&fps[k - 1]).count() }).collect();
    Ok(Solution {
        schedule: GroupSchedule::from_linear(&model.layer, &groups),
        objective,
        status,
        wall_time: started.elapsed(),
        nodes: outcome.nodes,
        start_objective,
        overlaps,
    })
}

/// Builds the model for `groups` groups and solves it.
pub fn optimize(
    layer: &LayerSpec,
    hw: &HardwareSpec,
    params: &S1Params,
    groups: usize,
    nb_data_reload: usize,
    options: &SolveOptions,
) -> Result<Solution, OptimizeError> {
    let model = build_model(layer, hw, params, groups, nb_data_reload)?;
    solve(&model, options)
}
