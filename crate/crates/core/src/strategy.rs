//! Group schedules (ordered partitions of the patch set), the heuristics
//! that produce them, and the compiler that turns a schedule into steps.

use std::collections::BTreeSet;
use std::fmt;

use crate::conv::{LayerSpec, Patch, PixelId};
use crate::exec::{outputs_of, Flush, HardwareSpec, KernelId, Step, Strategy, WritePolicy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrategyError {
    ZeroGroupSize,
    AcceleratorTooSmall { nbop_pe: u64, per_patch: u64 },
    PatchOutOfRange { group: usize, patch: Patch },
    DuplicatePatch(Patch),
    MissingPatch(Patch),
    EmptyGroup(usize),
    GroupTooLarge { group: usize, size: usize, max: usize },
    CapacityExceeded { step: usize, footprint: u64, capacity: u64 },
}

impl fmt::Display for StrategyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyError::ZeroGroupSize => write!(f, "group size must be at least 1"),
            StrategyError::AcceleratorTooSmall { nbop_pe, per_patch } => write!(
                f,
                "accelerator offers {nbop_pe} MAC per invocation, one patch over all kernels needs {per_patch}"
            ),
            StrategyError::PatchOutOfRange { group, patch } => {
                write!(f, "group {}: patch {patch} outside the output grid", group + 1)
            }
            StrategyError::DuplicatePatch(p) => write!(f, "patch {p} assigned more than once"),
            StrategyError::MissingPatch(p) => write!(f, "patch {p} not assigned to any group"),
            StrategyError::EmptyGroup(g) => write!(f, "group {} is empty", g + 1),
            StrategyError::GroupTooLarge { group, size, max } => {
                write!(f, "group {} holds {size} patches, at most {max} allowed", group + 1)
            }
            StrategyError::CapacityExceeded { step, footprint, capacity } => {
                write!(f, "step {step}: footprint {footprint} exceeds on-chip capacity {capacity}")
            }
        }
    }
}

impl std::error::Error for StrategyError {}

/// Groups in execution order; group `k` is processed at step `k + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupSchedule {
    groups: Vec<BTreeSet<Patch>>,
}

impl GroupSchedule {
    pub fn new(groups: Vec<BTreeSet<Patch>>) -> Self {
        GroupSchedule { groups }
    }

    pub fn from_vecs(groups: Vec<Vec<Patch>>) -> Self {
        GroupSchedule { groups: groups.into_iter().map(|g| g.into_iter().collect()).collect() }
    }

    /// Groups of row-major linear patch ids.
    pub fn from_linear(layer: &LayerSpec, groups: &[Vec<usize>]) -> Self {
        GroupSchedule {
            groups: groups.iter().map(|g| g.iter().map(|&id| layer.patch_from_linear(id)).collect()).collect(),
        }
    }

    /// Splits a patch order into consecutive chunks of `group_size`.
    pub fn chunked(order: &[Patch], group_size: usize) -> Result<Self, StrategyError> {
        if group_size == 0 {
            return Err(StrategyError::ZeroGroupSize);
        }
        Ok(GroupSchedule { groups: order.chunks(group_size).map(|c| c.iter().copied().collect()).collect() })
    }

    pub fn groups(&self) -> &[BTreeSet<Patch>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn to_linear(&self, layer: &LayerSpec) -> Vec<Vec<usize>> {
        self.groups.iter().map(|g| g.iter().map(|p| p.linear(layer)).collect()).collect()
    }

    /// Same schedule with empty groups dropped.
    pub fn without_empty(&self) -> Self {
        GroupSchedule { groups: self.groups.iter().filter(|g| !g.is_empty()).cloned().collect() }
    }

    /// 0-based group index of every patch, indexed by linear patch id.
    pub fn assignment(&self, layer: &LayerSpec) -> Vec<Option<usize>> {
        let mut out = vec![None; layer.num_patches()];
        for (k, g) in self.groups.iter().enumerate() {
            for p in g {
                if let Some(slot) = out.get_mut(p.linear(layer)) {
                    *slot = Some(k);
                }
            }
        }
        out
    }

    /// Checks that the groups partition the patch set and respect `max_group`.
    pub fn check(&self, layer: &LayerSpec, max_group: usize) -> Result<(), StrategyError> {
        let mut seen = BTreeSet::new();
        for (k, g) in self.groups.iter().enumerate() {
            if g.is_empty() {
                return Err(StrategyError::EmptyGroup(k));
            }
            if g.len() > max_group {
                return Err(StrategyError::GroupTooLarge { group: k, size: g.len(), max: max_group });
            }
            for p in g {
                if !layer.contains_patch(*p) {
                    return Err(StrategyError::PatchOutOfRange { group: k, patch: *p });
                }
                if !seen.insert(*p) {
                    return Err(StrategyError::DuplicatePatch(*p));
                }
            }
        }
        if let Some(p) = layer.patch_set().iter().find(|p| !seen.contains(p)) {
            return Err(StrategyError::MissingPatch(p));
        }
        Ok(())
    }

    pub fn footprint(&self, layer: &LayerSpec, group: usize) -> BTreeSet<PixelId> {
        group_footprint(layer, &self.groups[group])
    }
}

pub fn group_footprint<'a>(layer: &LayerSpec, patches: impl IntoIterator<Item = &'a Patch>) -> BTreeSet<PixelId> {
    patches.into_iter().flat_map(|p| layer.patch_footprint(*p)).collect()
}

/// Per-step patch capacity of the accelerator and the resulting step-count range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct S1Params {
    pub nb_patches_max: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl S1Params {
    pub fn with_max(layer: &LayerSpec, nb_patches_max: usize) -> Result<Self, StrategyError> {
        if nb_patches_max == 0 {
            return Err(StrategyError::ZeroGroupSize);
        }
        let k_max = layer.num_patches();
        Ok(S1Params { nb_patches_max, k_min: k_max.div_ceil(nb_patches_max), k_max })
    }
}

/// `nb_patches_max = floor(nbop_pe / (nb_op_value * c_out))`.
pub fn s1_params(layer: &LayerSpec, hw: &HardwareSpec) -> Result<S1Params, StrategyError> {
    let per_patch = (layer.nb_op_value() * layer.c_out()) as u64;
    let max = hw.nbop_pe / per_patch;
    if max == 0 {
        return Err(StrategyError::AcceleratorTooSmall { nbop_pe: hw.nbop_pe, per_patch });
    }
    S1Params::with_max(layer, max as usize)
}

pub fn row_major_order(layer: &LayerSpec) -> Vec<Patch> {
    layer.patch_set().iter().collect()
}

/// Even rows left to right, odd rows right to left.
pub fn boustrophedon_order(layer: &LayerSpec) -> Vec<Patch> {
    let (h_out, w_out) = (layer.h_out(), layer.w_out());
    let mut order = Vec::with_capacity(h_out * w_out);
    for i in 0..h_out {
        if i % 2 == 0 {
            order.extend((0..w_out).map(|j| Patch::new(i, j)));
        } else {
            order.extend((0..w_out).rev().map(|j| Patch::new(i, j)));
        }
    }
    order
}

/// One patch per step, row-major.
pub fn gen_s1_baseline(layer: &LayerSpec) -> GroupSchedule {
    GroupSchedule::chunked(&row_major_order(layer), 1).expect("group size 1")
}

pub fn gen_row_by_row(layer: &LayerSpec, group_size: usize) -> Result<GroupSchedule, StrategyError> {
    GroupSchedule::chunked(&row_major_order(layer), group_size)
}

pub fn gen_zigzag(layer: &LayerSpec, group_size: usize) -> Result<GroupSchedule, StrategyError> {
    GroupSchedule::chunked(&boustrophedon_order(layer), group_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Heuristic {
    RowByRow,
    ZigZag,
    S1Baseline,
}

impl Heuristic {
    pub const ALL: [Heuristic; 3] = [Heuristic::RowByRow, Heuristic::ZigZag, Heuristic::S1Baseline];

    pub fn name(&self) -> &'static str {
        match self {
            Heuristic::RowByRow => "rowbyrow",
            Heuristic::ZigZag => "zigzag",
            Heuristic::S1Baseline => "s1-baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rowbyrow" | "row-by-row" | "row" => Some(Heuristic::RowByRow),
            "zigzag" => Some(Heuristic::ZigZag),
            "s1-baseline" | "s1baseline" | "baseline" => Some(Heuristic::S1Baseline),
            _ => None,
        }
    }

    /// `group_size` is ignored by the baseline.
    pub fn generate(&self, layer: &LayerSpec, group_size: usize) -> Result<GroupSchedule, StrategyError> {
        match self {
            Heuristic::RowByRow => gen_row_by_row(layer, group_size),
            Heuristic::ZigZag => gen_zigzag(layer, group_size),
            Heuristic::S1Baseline => Ok(gen_s1_baseline(layer)),
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Memory occupancy in elements while group `patches` is on chip: its input
/// pixels, every kernel, and its freshly computed outputs.
pub fn group_memory(layer: &LayerSpec, footprint_pixels: usize, patches: usize) -> u64 {
    (footprint_pixels * layer.c_in + layer.n_kernels * layer.kernel_elements() + patches * layer.c_out()) as u64
}

/// Emits one step per group. Pixels stay resident only while the current
/// group needs them; results are written during the following step and the
/// last group's results in the terminal flush. All kernels are loaded at
/// step 1 and released by the flush.
pub fn compile(schedule: &GroupSchedule, layer: &LayerSpec, hw: &HardwareSpec) -> Result<Strategy, StrategyError> {
    compile_with_provenance(schedule, layer, hw, "schedule")
}

pub fn compile_with_provenance(
    schedule: &GroupSchedule,
    layer: &LayerSpec,
    hw: &HardwareSpec,
    provenance: &str,
) -> Result<Strategy, StrategyError> {
    let all_kernels: BTreeSet<KernelId> = (0..layer.n_kernels).collect();
    let mut resident: BTreeSet<PixelId> = BTreeSet::new();
    let mut pending = BTreeSet::new();
    let mut steps = Vec::with_capacity(schedule.len());
    for (k, group) in schedule.groups().iter().enumerate() {
        let footprint = group_footprint(layer, group);
        let memory = group_memory(layer, footprint.len(), group.len());
        if memory > hw.size_mem {
            return Err(StrategyError::CapacityExceeded { step: k + 1, footprint: memory, capacity: hw.size_mem });
        }
        let compute: BTreeSet<_> = group.iter().flat_map(|p| outputs_of(*p, layer)).collect();
        steps.push(Step {
            free_inputs: resident.difference(&footprint).copied().collect(),
            free_kernels: BTreeSet::new(),
            write_back: std::mem::take(&mut pending),
            load_inputs: footprint.difference(&resident).copied().collect(),
            load_kernels: if k == 0 { all_kernels.clone() } else { BTreeSet::new() },
            compute: compute.clone(),
        });
        pending = compute;
        resident = footprint;
    }
    let flush = Flush {
        free_inputs: resident,
        free_kernels: if steps.is_empty() { BTreeSet::new() } else { all_kernels },
        write_back: pending,
    };
    Ok(Strategy { steps, flush, write_policy: WritePolicy::NextStep, provenance: provenance.to_string() })
}
