//! Step semantics of an n-step computation on the accelerator: the six
//! actions of a step, on-chip memory bookkeeping, duration, and the
//! numeric simulation that checks a strategy against the reference
//! convolution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::conv::{check_operands, reference_convolution, LayerSpec, Patch, PixelId, ShapeError, Tensor3};

pub type KernelId = usize;

/// Default bound on how many times one pixel or kernel may be loaded.
pub const DEFAULT_NB_DATA_RELOAD: usize = 2;

/// Platform description. Capacities are in scalar elements, times in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub nbop_pe: u64,
    pub size_mem: u64,
    pub t_l: u64,
    pub t_w: u64,
    pub t_acc: u64,
    pub dram_size: u64,
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("nbop_pe", self.nbop_pe),
            ("size_mem", self.size_mem),
            ("t_l", self.t_l),
            ("t_w", self.t_w),
            ("t_acc", self.t_acc),
            ("dram_size", self.dram_size),
        ] {
            if v == 0 {
                return Err(format!("{name} must be strictly positive"));
            }
        }
        Ok(())
    }
}

/// Which transfers are priced by [`step_duration`]. Loads of input pixels
/// and the compute invocation are always priced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub count_kernel_load: bool,
    pub count_write_back: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { count_kernel_load: false, count_write_back: true }
    }
}

impl CostModel {
    /// Loads and compute invocations only: `t_l * sum |I_slice| + n * t_acc`.
    pub fn loads_only() -> Self {
        CostModel { count_kernel_load: false, count_write_back: false }
    }
}

/// One scalar of the output tensor `O[l, i, j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutputElementId {
    pub l: usize,
    pub i: usize,
    pub j: usize,
}

impl OutputElementId {
    pub fn patch(&self) -> Patch {
        Patch { i: self.i, j: self.j }
    }
}

impl fmt::Display for OutputElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "O[{},{},{}]", self.l, self.i, self.j)
    }
}

/// Every output channel of a patch's spatial position.
pub fn outputs_of(patch: Patch, layer: &LayerSpec) -> impl Iterator<Item = OutputElementId> {
    (0..layer.c_out()).map(move |l| OutputElementId { l, i: patch.i, j: patch.j })
}

/// One offloading step. Actions run in field order: frees, write-back,
/// loads, then the compute of `compute`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub free_inputs: BTreeSet<PixelId>,
    pub free_kernels: BTreeSet<KernelId>,
    pub write_back: BTreeSet<OutputElementId>,
    pub load_inputs: BTreeSet<PixelId>,
    pub load_kernels: BTreeSet<KernelId>,
    pub compute: BTreeSet<OutputElementId>,
}

/// Actions appended after the last step so the on-chip memory ends empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flush {
    pub free_inputs: BTreeSet<PixelId>,
    pub free_kernels: BTreeSet<KernelId>,
    pub write_back: BTreeSet<OutputElementId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WritePolicy {
    /// Results of step i are written during step i+1; the last step's
    /// results during the terminal flush.
    NextStep,
    /// Hand-written strategy; no policy assumed.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub steps: Vec<Step>,
    pub flush: Flush,
    pub write_policy: WritePolicy,
    pub provenance: String,
}

fn distinct_positions(elements: &BTreeSet<OutputElementId>) -> usize {
    elements.iter().map(|e| (e.i, e.j)).collect::<BTreeSet<_>>().len()
}

impl Step {
    /// Output positions written back; one write moves all channels of a position.
    pub fn write_positions(&self) -> usize {
        distinct_positions(&self.write_back)
    }

    pub fn is_empty(&self) -> bool {
        self.free_inputs.is_empty()
            && self.free_kernels.is_empty()
            && self.write_back.is_empty()
            && self.load_inputs.is_empty()
            && self.load_kernels.is_empty()
            && self.compute.is_empty()
    }

    pub fn duration(&self, layer: &LayerSpec, hw: &HardwareSpec, cost: &CostModel) -> u64 {
        step_duration(self, !self.compute.is_empty(), layer, hw, cost)
    }
}

impl Flush {
    pub fn write_positions(&self) -> usize {
        distinct_positions(&self.write_back)
    }

    pub fn duration(&self, hw: &HardwareSpec, cost: &CostModel) -> u64 {
        if cost.count_write_back {
            self.write_positions() as u64 * hw.t_w
        } else {
            0
        }
    }
}

/// `(|I_slice| + |K_sub|) * t_l + |W| * t_w + t_acc`, with loads counted in
/// pixels (a kernel counts as `h_k * w_k` pixels) and writes in output
/// positions.
pub fn step_duration(
    step: &Step,
    includes_compute: bool,
    layer: &LayerSpec,
    hw: &HardwareSpec,
    cost: &CostModel,
) -> u64 {
    let mut loads = step.load_inputs.len() as u64;
    if cost.count_kernel_load {
        loads += (step.load_kernels.len() * layer.h_k * layer.w_k) as u64;
    }
    let mut d = loads * hw.t_l;
    if cost.count_write_back {
        d += step.write_positions() as u64 * hw.t_w;
    }
    if includes_compute {
        d += hw.t_acc;
    }
    d
}

/// Sum of the step durations plus the terminal flush.
pub fn strategy_duration(strategy: &Strategy, layer: &LayerSpec, hw: &HardwareSpec, cost: &CostModel) -> u64 {
    let steps: u64 = strategy.steps.iter().map(|s| s.duration(layer, hw, cost)).sum();
    steps + strategy.flush.duration(hw, cost)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryState {
    pub inputs: BTreeSet<PixelId>,
    pub kernels: BTreeSet<KernelId>,
    pub outputs: BTreeSet<OutputElementId>,
}

impl MemoryState {
    /// Occupancy in scalar elements.
    pub fn footprint(&self, layer: &LayerSpec) -> u64 {
        (self.inputs.len() * layer.c_in + self.kernels.len() * layer.kernel_elements() + self.outputs.len()) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty() && self.kernels.is_empty() && self.outputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Item {
    Pixel(PixelId),
    Kernel(KernelId),
    Output(OutputElementId),
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Item::Pixel(p) => write!(f, "pixel ({},{})", p.h, p.w),
            Item::Kernel(k) => write!(f, "kernel {k}"),
            Item::Output(o) => write!(f, "{o}"),
        }
    }
}

/// A broken rule. Step numbers are 1-based; the flush reports the last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    FreeAbsent { step: usize, item: Item },
    RedundantLoad { step: usize, item: Item },
    WriteUncomputed { step: usize, element: OutputElementId },
    ComputeNotResident { step: usize, element: OutputElementId },
    Recomputed { step: usize, element: OutputElementId },
    CapacityExceeded { step: usize, footprint: u64, capacity: u64 },
    OpsBudgetExceeded { step: usize, required: u64, budget: u64 },
    LoadNotConsumed { step: usize, item: Item },
    ReloadLimit { item: Item, count: usize, limit: usize },
    FinalMemoryNonEmpty { inputs: usize, kernels: usize, outputs: usize },
    WriteCount { element: OutputElementId, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    FreeAbsent,
    RedundantLoad,
    WriteUncomputed,
    ComputeNotResident,
    Recomputed,
    CapacityExceeded,
    OpsBudgetExceeded,
    LoadNotConsumed,
    ReloadLimit,
    FinalMemoryNonEmpty,
    WriteCount,
}

impl Violation {
    pub fn kind(&self) -> ViolationKind {
        match self {
            Violation::FreeAbsent { .. } => ViolationKind::FreeAbsent,
            Violation::RedundantLoad { .. } => ViolationKind::RedundantLoad,
            Violation::WriteUncomputed { .. } => ViolationKind::WriteUncomputed,
            Violation::ComputeNotResident { .. } => ViolationKind::ComputeNotResident,
            Violation::Recomputed { .. } => ViolationKind::Recomputed,
            Violation::CapacityExceeded { .. } => ViolationKind::CapacityExceeded,
            Violation::OpsBudgetExceeded { .. } => ViolationKind::OpsBudgetExceeded,
            Violation::LoadNotConsumed { .. } => ViolationKind::LoadNotConsumed,
            Violation::ReloadLimit { .. } => ViolationKind::ReloadLimit,
            Violation::FinalMemoryNonEmpty { .. } => ViolationKind::FinalMemoryNonEmpty,
            Violation::WriteCount { .. } => ViolationKind::WriteCount,
        }
    }

    pub fn step(&self) -> Option<usize> {
        match self {
            Violation::FreeAbsent { step, .. }
            | Violation::RedundantLoad { step, .. }
            | Violation::WriteUncomputed { step, .. }
            | Violation::ComputeNotResident { step, .. }
            | Violation::Recomputed { step, .. }
            | Violation::CapacityExceeded { step, .. }
            | Violation::OpsBudgetExceeded { step, .. }
            | Violation::LoadNotConsumed { step, .. } => Some(*step),
            _ => None,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FreeAbsent { step, item } => write!(f, "step {step}: {item} is not resident"),
            Violation::RedundantLoad { step, item } => write!(f, "step {step}: {item} loaded while already resident"),
            Violation::WriteUncomputed { step, element } => {
                write!(f, "step {step}: write-back of {element} which was never computed")
            }
            Violation::ComputeNotResident { step, element } => {
                write!(f, "step {step}: operands of {element} are not resident")
            }
            Violation::Recomputed { step, element } => write!(f, "step {step}: {element} computed twice"),
            Violation::CapacityExceeded { step, footprint, capacity } => {
                write!(f, "step {step}: footprint {footprint} exceeds on-chip capacity {capacity}")
            }
            Violation::OpsBudgetExceeded { step, required, budget } => {
                write!(f, "step {step}: {required} MAC operations exceed the accelerator budget {budget}")
            }
            Violation::LoadNotConsumed { step, item } => {
                write!(f, "step {step}: {item} loaded but not used by the step's compute")
            }
            Violation::ReloadLimit { item, count, limit } => {
                write!(f, "{item} loaded {count} times (limit {limit})")
            }
            Violation::FinalMemoryNonEmpty { inputs, kernels, outputs } => {
                write!(f, "on-chip memory not empty at the end: {inputs} pixels, {kernels} kernels, {outputs} outputs")
            }
            Violation::WriteCount { element, count } => write!(f, "{element} written {count} times"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecError {
    Violation(Violation),
    Shape(ShapeError),
    DramTooSmall { required: u64, capacity: u64 },
    Mismatch { element: OutputElementId, expected: f64, actual: Option<f64> },
}

impl fmt::Display for ExecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecError::Violation(v) => v.fmt(f),
            ExecError::Shape(e) => e.fmt(f),
            ExecError::DramTooSmall { required, capacity } => {
                write!(f, "DRAM holds {capacity} elements, layer needs {required}")
            }
            ExecError::Mismatch { element, expected, actual: Some(actual) } => {
                write!(f, "{element} is {actual}, reference is {expected}")
            }
            ExecError::Mismatch { element, expected, actual: None } => {
                write!(f, "{element} never reached DRAM (reference {expected})")
            }
        }
    }
}

impl std::error::Error for ExecError {}

impl From<ShapeError> for ExecError {
    fn from(e: ShapeError) -> Self {
        ExecError::Shape(e)
    }
}

impl From<Violation> for ExecError {
    fn from(v: Violation) -> Self {
        ExecError::Violation(v)
    }
}

/// What one step did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub loaded_pixels: BTreeSet<PixelId>,
    pub loaded_kernels: BTreeSet<KernelId>,
    pub freed_pixels: BTreeSet<PixelId>,
    pub freed_kernels: BTreeSet<KernelId>,
    pub written: BTreeSet<OutputElementId>,
    pub computed: BTreeSet<OutputElementId>,
    pub ops: u64,
    pub footprint: u64,
    pub input_footprint: u64,
    pub duration: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlushTrace {
    pub freed_pixels: usize,
    pub freed_kernels: usize,
    pub written: BTreeSet<OutputElementId>,
    pub duration: u64,
}

/// Aggregate outcome of running a strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metrics {
    pub traces: Vec<StepTrace>,
    pub flush: FlushTrace,
    pub total_duration: u64,
    pub peak_footprint: u64,
    /// Input pixels moved DRAM to chip.
    pub load_traffic: u64,
    pub kernel_loads: u64,
    /// Output positions moved chip to DRAM.
    pub write_traffic: u64,
}

#[derive(Serialize)]
struct StepRecord {
    step: usize,
    i_slice: usize,
    w: usize,
    k_sub: usize,
    footprint: u64,
    delta: u64,
}

#[derive(Serialize)]
struct FlushRecord {
    flush: bool,
    w: usize,
    delta: u64,
    total_delta: u64,
}

impl Metrics {
    fn from_traces(traces: Vec<StepTrace>, flush: FlushTrace) -> Self {
        let total_duration = traces.iter().map(|t| t.duration).sum::<u64>() + flush.duration;
        let peak_footprint = traces.iter().map(|t| t.footprint).max().unwrap_or(0);
        let load_traffic = traces.iter().map(|t| t.loaded_pixels.len() as u64).sum();
        let kernel_loads = traces.iter().map(|t| t.loaded_kernels.len() as u64).sum();
        let write_traffic = traces.iter().map(|t| distinct_positions(&t.written) as u64).sum::<u64>()
            + distinct_positions(&flush.written) as u64;
        Metrics { traces, flush, total_duration, peak_footprint, load_traffic, kernel_loads, write_traffic }
    }

    pub fn footprints(&self) -> Vec<u64> {
        self.traces.iter().map(|t| t.footprint).collect()
    }

    pub fn step_durations(&self) -> Vec<u64> {
        self.traces.iter().map(|t| t.duration).collect()
    }

    /// One JSON object per step, then one for the terminal flush.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.traces {
            let rec = StepRecord {
                step: t.step,
                i_slice: t.loaded_pixels.len(),
                w: distinct_positions(&t.written),
                k_sub: t.loaded_kernels.len(),
                footprint: t.footprint,
                delta: t.duration,
            };
            out.push_str(&serde_json::to_string(&rec).expect("plain record"));
            out.push('\n');
        }
        let rec = FlushRecord {
            flush: true,
            w: distinct_positions(&self.flush.written),
            delta: self.flush.duration,
            total_delta: self.total_duration,
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record"));
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone)]
struct Numeric<'a> {
    input: &'a Tensor3,
    kernels: &'a [Tensor3],
    onchip_inputs: HashMap<PixelId, Vec<f64>>,
    onchip_outputs: HashMap<OutputElementId, f64>,
    dram_output: BTreeMap<OutputElementId, f64>,
}

/// Executes steps one at a time against an evolving on-chip state.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    layer: &'a LayerSpec,
    hw: &'a HardwareSpec,
    cost: CostModel,
    state: MemoryState,
    computed: BTreeSet<OutputElementId>,
    write_counts: BTreeMap<OutputElementId, usize>,
    pixel_loads: BTreeMap<PixelId, usize>,
    kernel_loads: BTreeMap<KernelId, usize>,
    steps_done: usize,
    numeric: Option<Numeric<'a>>,
}

impl<'a> Simulator<'a> {
    pub fn new(layer: &'a LayerSpec, hw: &'a HardwareSpec, cost: CostModel) -> Self {
        Simulator {
            layer,
            hw,
            cost,
            state: MemoryState::default(),
            computed: BTreeSet::new(),
            write_counts: BTreeMap::new(),
            pixel_loads: BTreeMap::new(),
            kernel_loads: BTreeMap::new(),
            steps_done: 0,
            numeric: None,
        }
    }

    /// Also carries data values so compute results can be checked.
    pub fn with_data(
        layer: &'a LayerSpec,
        hw: &'a HardwareSpec,
        cost: CostModel,
        input: &'a Tensor3,
        kernels: &'a [Tensor3],
    ) -> Result<Self, ExecError> {
        check_operands(input, kernels, layer)?;
        let required =
            (layer.input_elements() + layer.n_kernels * layer.kernel_elements() + layer.output_elements()) as u64;
        if required > hw.dram_size {
            return Err(ExecError::DramTooSmall { required, capacity: hw.dram_size });
        }
        let mut sim = Simulator::new(layer, hw, cost);
        sim.numeric = Some(Numeric {
            input,
            kernels,
            onchip_inputs: HashMap::new(),
            onchip_outputs: HashMap::new(),
            dram_output: BTreeMap::new(),
        });
        Ok(sim)
    }

    pub fn state(&self) -> &MemoryState {
        &self.state
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    fn free_and_write(
        &mut self,
        step_no: usize,
        free_inputs: &BTreeSet<PixelId>,
        free_kernels: &BTreeSet<KernelId>,
        write_back: &BTreeSet<OutputElementId>,
        violations: &mut Vec<Violation>,
    ) {
        // a1, a2
        for p in free_inputs {
            if !self.state.inputs.remove(p) {
                violations.push(Violation::FreeAbsent { step: step_no, item: Item::Pixel(*p) });
            } else if let Some(n) = &mut self.numeric {
                n.onchip_inputs.remove(p);
            }
        }
        for k in free_kernels {
            if !self.state.kernels.remove(k) {
                violations.push(Violation::FreeAbsent { step: step_no, item: Item::Kernel(*k) });
            }
        }
        // a3
        for e in write_back {
            if self.state.outputs.remove(e) {
                *self.write_counts.entry(*e).or_default() += 1;
                if let Some(n) = &mut self.numeric {
                    if let Some(v) = n.onchip_outputs.remove(e) {
                        n.dram_output.insert(*e, v);
                    }
                }
            } else if self.computed.contains(e) {
                *self.write_counts.entry(*e).or_default() += 1;
                violations.push(Violation::FreeAbsent { step: step_no, item: Item::Output(*e) });
            } else {
                violations.push(Violation::WriteUncomputed { step: step_no, element: *e });
            }
        }
    }

    /// Applies every action of `step`, recording violations instead of
    /// stopping at the first one.
    pub fn apply_step(&mut self, step: &Step) -> (StepTrace, Vec<Violation>) {
        let step_no = self.steps_done + 1;
        let mut violations = Vec::new();
        self.free_and_write(step_no, &step.free_inputs, &step.free_kernels, &step.write_back, &mut violations);

        // a4, a5
        for p in &step.load_inputs {
            if !self.state.inputs.insert(*p) {
                violations.push(Violation::RedundantLoad { step: step_no, item: Item::Pixel(*p) });
                continue;
            }
            *self.pixel_loads.entry(*p).or_default() += 1;
            if let Some(n) = &mut self.numeric {
                let values = (0..self.layer.c_in).map(|c| n.input.get(c, p.h, p.w)).collect();
                n.onchip_inputs.insert(*p, values);
            }
        }
        for k in &step.load_kernels {
            if !self.state.kernels.insert(*k) {
                violations.push(Violation::RedundantLoad { step: step_no, item: Item::Kernel(*k) });
                continue;
            }
            *self.kernel_loads.entry(*k).or_default() += 1;
        }

        // a6
        let mut used_pixels = BTreeSet::new();
        let mut used_kernels = BTreeSet::new();
        let mut computed = BTreeSet::new();
        for e in &step.compute {
            let footprint = self.layer.patch_footprint(e.patch());
            used_kernels.insert(e.l);
            used_pixels.extend(footprint.iter().copied());
            let resident = self.state.kernels.contains(&e.l) && footprint.iter().all(|p| self.state.inputs.contains(p));
            if !resident {
                violations.push(Violation::ComputeNotResident { step: step_no, element: *e });
                continue;
            }
            if self.computed.contains(e) {
                violations.push(Violation::Recomputed { step: step_no, element: *e });
                continue;
            }
            if let Some(n) = &mut self.numeric {
                let kernel = &n.kernels[e.l];
                let mut acc = 0.0;
                for (idx, p) in footprint.iter().enumerate() {
                    let (h, w) = (idx / self.layer.w_k, idx % self.layer.w_k);
                    let values = &n.onchip_inputs[p];
                    for (c, v) in values.iter().enumerate() {
                        acc += v * kernel.get(c, h, w);
                    }
                }
                n.onchip_outputs.insert(*e, acc);
            }
            self.computed.insert(*e);
            self.state.outputs.insert(*e);
            computed.insert(*e);
        }
        let ops = (step.compute.len() * self.layer.nb_op_value()) as u64;
        if ops > self.hw.nbop_pe {
            violations.push(Violation::OpsBudgetExceeded { step: step_no, required: ops, budget: self.hw.nbop_pe });
        }
        for p in step.load_inputs.difference(&used_pixels) {
            violations.push(Violation::LoadNotConsumed { step: step_no, item: Item::Pixel(*p) });
        }
        for k in step.load_kernels.difference(&used_kernels) {
            violations.push(Violation::LoadNotConsumed { step: step_no, item: Item::Kernel(*k) });
        }

        let footprint = self.state.footprint(self.layer);
        if footprint > self.hw.size_mem {
            violations.push(Violation::CapacityExceeded { step: step_no, footprint, capacity: self.hw.size_mem });
        }

        self.steps_done += 1;
        let trace = StepTrace {
            step: step_no,
            loaded_pixels: step.load_inputs.clone(),
            loaded_kernels: step.load_kernels.clone(),
            freed_pixels: step.free_inputs.clone(),
            freed_kernels: step.free_kernels.clone(),
            written: step.write_back.clone(),
            computed,
            ops,
            footprint,
            input_footprint: (self.state.inputs.len() * self.layer.c_in) as u64,
            duration: step.duration(self.layer, self.hw, &self.cost),
        };
        (trace, violations)
    }

    /// Strict variant of [`Simulator::apply_step`]: on error the simulator
    /// is left as it was before the call.
    pub fn execute_step(&mut self, step: &Step) -> Result<StepTrace, ExecError> {
        let snapshot = self.clone();
        let (trace, violations) = self.apply_step(step);
        match violations.into_iter().next() {
            None => Ok(trace),
            Some(v) => {
                *self = snapshot;
                Err(v.into())
            }
        }
    }

    pub fn apply_flush(&mut self, flush: &Flush) -> (FlushTrace, Vec<Violation>) {
        let step_no = self.steps_done.max(1);
        let mut violations = Vec::new();
        self.free_and_write(step_no, &flush.free_inputs, &flush.free_kernels, &flush.write_back, &mut violations);
        let trace = FlushTrace {
            freed_pixels: flush.free_inputs.len(),
            freed_kernels: flush.free_kernels.len(),
            written: flush.write_back.clone(),
            duration: flush.duration(self.hw, &self.cost),
        };
        (trace, violations)
    }

    /// End-of-strategy checks: empty memory, each output written exactly
    /// once, and the reload bound.
    pub fn finish_checks(&self, nb_data_reload: usize) -> Vec<Violation> {
        let mut violations = Vec::new();
        if !self.state.is_empty() {
            violations.push(Violation::FinalMemoryNonEmpty {
                inputs: self.state.inputs.len(),
                kernels: self.state.kernels.len(),
                outputs: self.state.outputs.len(),
            });
        }
        let d = self.layer.output_dims();
        for l in 0..d.c_out {
            for i in 0..d.h_out {
                for j in 0..d.w_out {
                    let element = OutputElementId { l, i, j };
                    let count = self.write_counts.get(&element).copied().unwrap_or(0);
                    if count != 1 {
                        violations.push(Violation::WriteCount { element, count });
                    }
                }
            }
        }
        for (p, &count) in &self.pixel_loads {
            if count > nb_data_reload {
                violations.push(Violation::ReloadLimit { item: Item::Pixel(*p), count, limit: nb_data_reload });
            }
        }
        for (k, &count) in &self.kernel_loads {
            if count > nb_data_reload {
                violations.push(Violation::ReloadLimit { item: Item::Kernel(*k), count, limit: nb_data_reload });
            }
        }
        violations
    }

    /// Output tensor as assembled in DRAM; `None` where nothing was written.
    fn dram_output(&self) -> Option<&BTreeMap<OutputElementId, f64>> {
        self.numeric.as_ref().map(|n| &n.dram_output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub metrics: Metrics,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind() == kind)
    }
}

/// Replays the whole strategy and lists every broken rule. Never fails.
pub fn validate_strategy(
    strategy: &Strategy,
    layer: &LayerSpec,
    hw: &HardwareSpec,
    cost: &CostModel,
    nb_data_reload: usize,
) -> ValidationReport {
    let mut sim = Simulator::new(layer, hw, *cost);
    let mut violations = Vec::new();
    let mut traces = Vec::with_capacity(strategy.steps.len());
    for step in &strategy.steps {
        let (trace, v) = sim.apply_step(step);
        traces.push(trace);
        violations.extend(v);
    }
    let (flush, v) = sim.apply_flush(&strategy.flush);
    violations.extend(v);
    violations.extend(sim.finish_checks(nb_data_reload));
    ValidationReport { violations, metrics: Metrics::from_traces(traces, flush) }
}

/// Runs the strategy without data and returns its metrics, failing on the
/// first broken step rule.
pub fn simulate(
    strategy: &Strategy,
    layer: &LayerSpec,
    hw: &HardwareSpec,
    cost: &CostModel,
) -> Result<Metrics, ExecError> {
    let mut sim = Simulator::new(layer, hw, *cost);
    run_steps(&mut sim, strategy)
}

fn run_steps(sim: &mut Simulator<'_>, strategy: &Strategy) -> Result<Metrics, ExecError> {
    let mut traces = Vec::with_capacity(strategy.steps.len());
    for step in &strategy.steps {
        traces.push(sim.execute_step(step)?);
    }
    let (flush, violations) = sim.apply_flush(&strategy.flush);
    if let Some(v) = violations.into_iter().next() {
        return Err(v.into());
    }
    // the reload bound is a validation concern, not an execution error
    if let Some(v) = sim.finish_checks(usize::MAX).into_iter().next() {
        return Err(v.into());
    }
    Ok(Metrics::from_traces(traces, flush))
}

/// Executes the strategy on real data and checks the DRAM output image
/// against [`reference_convolution`].
pub fn run_and_verify(
    strategy: &Strategy,
    input: &Tensor3,
    kernels: &[Tensor3],
    layer: &LayerSpec,
    hw: &HardwareSpec,
    cost: &CostModel,
) -> Result<(Tensor3, Metrics), ExecError> {
    let mut sim = Simulator::with_data(layer, hw, *cost, input, kernels)?;
    let metrics = run_steps(&mut sim, strategy)?;
    let reference = reference_convolution(input, kernels, layer)?;
    let dram = sim.dram_output().expect("simulator carries data");
    let d = layer.output_dims();
    let mut out = Tensor3::zeros(d.c_out, d.h_out, d.w_out);
    for l in 0..d.c_out {
        for i in 0..d.h_out {
            for j in 0..d.w_out {
                let element = OutputElementId { l, i, j };
                let expected = reference.get(l, i, j);
                match dram.get(&element) {
                    Some(&v) if v == expected => out.set(l, i, j, v),
                    actual => return Err(ExecError::Mismatch { element, expected, actual: actual.copied() }),
                }
            }
        }
    }
    Ok((out, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(h: usize, w: usize) -> PixelId {
        PixelId { h, w }
    }

    fn unit_hw() -> HardwareSpec {
        HardwareSpec { nbop_pe: 1000, size_mem: 10_000, t_l: 3, t_w: 5, t_acc: 7, dram_size: 100_000 }
    }

    /// 1x3x3 input, one 1x3x3 kernel: a single patch covers everything.
    fn single_patch() -> (LayerSpec, Strategy) {
        let layer = LayerSpec::new(1, 3, 3, 1, 3, 3, 1, 1).unwrap();
        let all: BTreeSet<_> = layer.patch_footprint(Patch::new(0, 0)).into_iter().collect();
        let out = OutputElementId { l: 0, i: 0, j: 0 };
        let step =
            Step { load_inputs: all.clone(), load_kernels: [0].into(), compute: [out].into(), ..Step::default() };
        let flush = Flush { free_inputs: all, free_kernels: [0].into(), write_back: [out].into() };
        (layer, Strategy { steps: vec![step], flush, write_policy: WritePolicy::NextStep, provenance: "manual".into() })
    }

    #[test]
    fn single_step_duration() {
        let (layer, s) = single_patch();
        let hw = unit_hw();
        assert_eq!(strategy_duration(&s, &layer, &hw, &CostModel::default()), 9 * 3 + 5 + 7);
        let with_kernel = CostModel { count_kernel_load: true, count_write_back: true };
        assert_eq!(strategy_duration(&s, &layer, &hw, &with_kernel), 9 * 3 + 9 * 3 + 5 + 7);
        assert_eq!(strategy_duration(&s, &layer, &hw, &CostModel::loads_only()), 9 * 3 + 7);
    }

    #[test]
    fn empty_step_is_identity() {
        let (layer, s) = single_patch();
        let hw = unit_hw();
        let mut sim = Simulator::new(&layer, &hw, CostModel::default());
        sim.execute_step(&s.steps[0]).unwrap();
        let before = sim.state().clone();
        let t = sim.execute_step(&Step::default()).unwrap();
        assert_eq!(sim.state(), &before);
        assert_eq!(t.duration, 0);
        assert_eq!(step_duration(&Step::default(), false, &layer, &hw, &CostModel::default()), 0);
    }

    #[test]
    fn run_and_verify_single_step() {
        let (layer, s) = single_patch();
        let hw = unit_hw();
        let input = Tensor3::from_fn(1, 3, 3, |_, h, w| (h * 3 + w) as f64 - 4.0);
        let kernel = Tensor3::from_fn(1, 3, 3, |_, h, w| (h + 2 * w) as f64 - 3.0);
        let (out, m) =
            run_and_verify(&s, &input, std::slice::from_ref(&kernel), &layer, &hw, &CostModel::default()).unwrap();
        assert_eq!(out, reference_convolution(&input, &[kernel], &layer).unwrap());
        assert_eq!(m.total_duration, 9 * 3 + 5 + 7);
        assert_eq!(m.load_traffic, 9);
        assert_eq!(m.write_traffic, 1);
        assert_eq!(m.peak_footprint, 9 + 9 + 1);
    }

    #[test]
    fn strict_errors_leave_state_untouched() {
        let (layer, s) = single_patch();
        let hw = unit_hw();
        let mut sim = Simulator::new(&layer, &hw, CostModel::default());
        let bad = Step { free_inputs: [px(0, 0)].into(), ..Step::default() };
        let err = sim.execute_step(&bad).unwrap_err();
        assert_eq!(err, ExecError::Violation(Violation::FreeAbsent { step: 1, item: Item::Pixel(px(0, 0)) }));
        assert_eq!(sim.steps_done(), 0);
        sim.execute_step(&s.steps[0]).unwrap();

        let small = HardwareSpec { size_mem: 18, ..hw };
        let mut sim = Simulator::new(&layer, &small, CostModel::default());
        assert!(matches!(
            sim.execute_step(&s.steps[0]),
            Err(ExecError::Violation(Violation::CapacityExceeded { step: 1, footprint: 19, capacity: 18 }))
        ));

        let weak = HardwareSpec { nbop_pe: 8, ..hw };
        let mut sim = Simulator::new(&layer, &weak, CostModel::default());
        assert!(matches!(
            sim.execute_step(&s.steps[0]),
            Err(ExecError::Violation(Violation::OpsBudgetExceeded { required: 9, budget: 8, .. }))
        ));
    }

    #[test]
    fn write_of_uncomputed_element() {
        let (layer, _) = single_patch();
        let hw = unit_hw();
        let mut sim = Simulator::new(&layer, &hw, CostModel::default());
        let step = Step { write_back: [OutputElementId { l: 0, i: 0, j: 0 }].into(), ..Step::default() };
        assert!(matches!(
            sim.execute_step(&step),
            Err(ExecError::Violation(Violation::WriteUncomputed { step: 1, .. }))
        ));
    }

    #[test]
    fn dram_capacity_checked() {
        let (layer, s) = single_patch();
        let hw = HardwareSpec { dram_size: 18, ..unit_hw() };
        let t = Tensor3::zeros(1, 3, 3);
        let err = run_and_verify(&s, &t, std::slice::from_ref(&t), &layer, &hw, &CostModel::default()).unwrap_err();
        assert_eq!(err, ExecError::DramTooSmall { required: 19, capacity: 18 });
    }

    #[test]
    fn trace_log_is_one_line_per_step() {
        let (layer, s) = single_patch();
        let hw = unit_hw();
        let m = simulate(&s, &layer, &hw, &CostModel::default()).unwrap();
        let log = m.to_jsonl();
        let lines: Vec<_> = log.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], r#"{"step":1,"i_slice":9,"w":0,"k_sub":1,"footprint":19,"delta":34}"#);
        assert_eq!(lines[1], r#"{"flush":true,"w":1,"delta":5,"total_delta":39}"#);
    }
}
