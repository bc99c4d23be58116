//! Exhaustive reference optimum for tiny layers. Every ordered grouping is
//! compiled to a strategy and priced by the executor, so it shares no code
//! with the search beyond the compiler.

use std::collections::BTreeMap;

use crate::conv::{LayerSpec, PixelId};
use crate::exec::{strategy_duration, CostModel, HardwareSpec};
use crate::strategy::{compile, GroupSchedule, S1Params};

use super::OptimizeError;

/// Largest patch count the enumeration accepts.
pub const BRUTE_FORCE_LIMIT: usize = 7;

/// Minimum load duration over groupings with at most `groups` groups,
/// ties broken towards the lexicographically smallest per-patch group index.
pub fn brute_force_optimum(
    layer: &LayerSpec,
    hw: &HardwareSpec,
    params: &S1Params,
    groups: usize,
    nb_data_reload: usize,
) -> Result<(GroupSchedule, u64), OptimizeError> {
    let n = layer.num_patches();
    if n > BRUTE_FORCE_LIMIT {
        return Err(OptimizeError::InstanceTooLarge { patches: n, limit: BRUTE_FORCE_LIMIT });
    }
    if groups < params.k_min || groups > params.k_max {
        return Err(OptimizeError::InvalidGroupCount { k: groups, k_min: params.k_min, k_max: params.k_max });
    }
    let cost = CostModel::loads_only();
    let mut best: Option<(u64, GroupSchedule)> = None;
    let mut assign = vec![0usize; n];
    loop {
        if let Some(schedule) = schedule_of(layer, &assign, groups, params.nb_patches_max) {
            if let Ok(strategy) = compile(&schedule, layer, hw) {
                let mut loads: BTreeMap<PixelId, usize> = BTreeMap::new();
                for step in &strategy.steps {
                    for px in &step.load_inputs {
                        *loads.entry(*px).or_default() += 1;
                    }
                }
                if loads.values().all(|&c| c <= nb_data_reload) {
                    let d = strategy_duration(&strategy, layer, hw, &cost);
                    if best.as_ref().is_none_or(|(b, _)| d < *b) {
                        best = Some((d, schedule));
                    }
                }
            }
        }
        // next vector in lexicographic order
        let mut p = n;
        loop {
            if p == 0 {
                return best.map(|(d, s)| (s, d)).ok_or(OptimizeError::Infeasible);
            }
            p -= 1;
            assign[p] += 1;
            if assign[p] < groups {
                break;
            }
            assign[p] = 0;
        }
    }
}

/// Groups of an assignment whose used indices form a prefix, each within the size cap.
fn schedule_of(layer: &LayerSpec, assign: &[usize], groups: usize, max: usize) -> Option<GroupSchedule> {
    let mut members = vec![Vec::new(); groups];
    for (p, &k) in assign.iter().enumerate() {
        members[k].push(p);
    }
    let used = members.iter().take_while(|m| !m.is_empty()).count();
    if members[used..].iter().any(|m| !m.is_empty()) || members.iter().any(|m| m.len() > max) {
        return None;
    }
    members.truncate(used);
    Some(GroupSchedule::from_linear(layer, &members))
}
