//! Experiment configuration, strategy CSV interchange and seeded operands.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::conv::{LayerSpec, Padding, Tensor3};
use crate::exec::{CostModel, HardwareSpec, DEFAULT_NB_DATA_RELOAD};
use crate::strategy::{s1_params, GroupSchedule, Heuristic, S1Params};

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

fn yes() -> bool {
    true
}

fn default_reload() -> usize {
    DEFAULT_NB_DATA_RELOAD
}

fn default_budget() -> f64 {
    60.0
}

fn default_workers() -> usize {
    1
}

/// Flat key/value experiment description.
///
/// `h_in`/`w_in` are the unpadded input size; `padding` adds that many zero
/// rows and columns on every side. Exactly one of `strategy` (a generator
/// name or `optimize`) and `strategy_csv` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub n_kernels: usize,
    pub h_k: usize,
    pub w_k: usize,
    #[serde(default = "one")]
    pub s_h: usize,
    #[serde(default = "one")]
    pub s_w: usize,
    #[serde(default)]
    pub padding: usize,

    pub nbop_pe: u64,
    pub size_mem: u64,
    #[serde(default = "one_u64")]
    pub t_l: u64,
    #[serde(default = "one_u64")]
    pub t_w: u64,
    #[serde(default = "one_u64")]
    pub t_acc: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dram_size: Option<u64>,

    #[serde(default)]
    pub count_kernel_load: bool,
    #[serde(default = "yes")]
    pub count_write_back: bool,
    #[serde(default = "default_reload")]
    pub nb_data_reload: usize,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nb_patches_max: Option<usize>,

    /// Seconds.
    #[serde(default = "default_budget")]
    pub solver_budget: f64,
    /// Seconds of exact search before local search takes over.
    #[serde(default = "default_budget")]
    pub polish_after: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Group count for the optimizer; the minimum when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrategySource {
    Generator { heuristic: Heuristic, group_size: Option<usize> },
    Csv(PathBuf),
    Optimize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io { path: PathBuf, message: String },
    Parse(String),
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, message } => write!(f, "{}: {message}", path.display()),
            ConfigError::Parse(m) => write!(f, "config parse error: {m}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Fails for values TOML cannot hold, such as integers above `i64::MAX`.
    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Reads and checks a config file. A relative `strategy_csv` is resolved
    /// against the config's directory and must exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut config = Self::parse(&text)?;
        if let Some(csv) = &config.strategy_csv {
            if csv.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.strategy_csv = Some(base.join(csv));
            }
        }
        if let Some(csv) = &config.strategy_csv {
            if !csv.exists() {
                return Err(ConfigError::Io { path: csv.clone(), message: "strategy file not found".into() });
            }
        }
        Ok(config)
    }

    fn check(&self) -> Result<(), ConfigError> {
        self.layer()?;
        self.hardware().validate().map_err(ConfigError::Invalid)?;
        self.source()?;
        if !(self.solver_budget >= 0.0 && self.polish_after >= 0.0) {
            return Err(ConfigError::Invalid("solver_budget and polish_after must be non-negative".into()));
        }
        if self.nb_data_reload == 0 {
            return Err(ConfigError::Invalid("nb_data_reload must be at least 1".into()));
        }
        Ok(())
    }

    pub fn layer(&self) -> Result<LayerSpec, ConfigError> {
        let p = self.padding;
        LayerSpec::new(
            self.c_in,
            self.h_in + 2 * p,
            self.w_in + 2 * p,
            self.n_kernels,
            self.h_k,
            self.w_k,
            self.s_h,
            self.s_w,
        )
        .map(|l| l.with_padding(Padding { top: p, bottom: p, left: p, right: p }))
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// DRAM defaults to exactly what the layer needs.
    pub fn hardware(&self) -> HardwareSpec {
        let dram_size = self.dram_size.unwrap_or_else(|| {
            self.layer()
                .map_or(0, |l| (l.input_elements() + l.n_kernels * l.kernel_elements() + l.output_elements()) as u64)
        });
        HardwareSpec {
            nbop_pe: self.nbop_pe,
            size_mem: self.size_mem,
            t_l: self.t_l,
            t_w: self.t_w,
            t_acc: self.t_acc,
            dram_size,
        }
    }

    pub fn cost(&self) -> CostModel {
        CostModel { count_kernel_load: self.count_kernel_load, count_write_back: self.count_write_back }
    }

    pub fn s1_params(&self) -> Result<S1Params, ConfigError> {
        let layer = self.layer()?;
        let params = match self.nb_patches_max {
            Some(max) => S1Params::with_max(&layer, max),
            None => s1_params(&layer, &self.hardware()),
        };
        params.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn source(&self) -> Result<StrategySource, ConfigError> {
        match (&self.strategy, &self.strategy_csv) {
            (Some(_), Some(_)) => Err(ConfigError::Invalid("set either strategy or strategy_csv, not both".into())),
            (None, None) => Err(ConfigError::Invalid("no strategy source: set strategy or strategy_csv".into())),
            (None, Some(path)) => Ok(StrategySource::Csv(path.clone())),
            (Some(name), None) if name.eq_ignore_ascii_case("optimize") => Ok(StrategySource::Optimize),
            (Some(name), None) => match Heuristic::parse(name) {
                Some(heuristic) => Ok(StrategySource::Generator { heuristic, group_size: self.group_size }),
                None => Err(ConfigError::Invalid(format!("unknown strategy `{name}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvError {
    /// 1-based line number; 1 is the header.
    pub row: usize,
    pub message: String,
}

impl fmt::Display for CsvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "strategy CSV row {}: {}", self.row, self.message)
    }
}

impl std::error::Error for CsvError {}

/// `step,patch_ids` then one row per group, ids row-major and `;`-separated.
pub fn write_strategy_csv(schedule: &GroupSchedule, layer: &LayerSpec) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["step", "patch_ids"]).expect("in-memory write");
    for (k, ids) in schedule.to_linear(layer).iter().enumerate() {
        let ids: Vec<String> = ids.iter().map(|id| id.to_string()).collect();
        w.write_record([(k + 1).to_string(), ids.join(";")]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

pub fn parse_strategy_csv(text: &str, layer: &LayerSpec) -> Result<GroupSchedule, CsvError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut groups = Vec::new();
    let mut seen = vec![None; layer.num_patches()];
    for (n, record) in reader.records().enumerate() {
        let row = n + 1;
        let err = |message: String| CsvError { row, message };
        let record = record.map_err(|e| err(e.to_string()))?;
        if row == 1 {
            if record.len() != 2 || &record[0] != "step" || &record[1] != "patch_ids" {
                return Err(err("expected header `step,patch_ids`".into()));
            }
            continue;
        }
        if record.len() != 2 {
            return Err(err(format!("expected 2 fields, found {}", record.len())));
        }
        let step: usize = record[0].parse().map_err(|_| err(format!("bad step number `{}`", &record[0])))?;
        if step != groups.len() + 1 {
            return Err(err(format!("step {step} out of sequence, expected {}", groups.len() + 1)));
        }
        let mut group = Vec::new();
        for tok in record[1].split(';').map(str::trim).filter(|t| !t.is_empty()) {
            let id: usize = tok.parse().map_err(|_| err(format!("bad patch id `{tok}`")))?;
            if id >= layer.num_patches() {
                return Err(err(format!("patch id {id} out of range (layer has {} patches)", layer.num_patches())));
            }
            if let Some(first) = seen[id] {
                return Err(err(format!("patch id {id} already listed in row {first}")));
            }
            seen[id] = Some(row);
            group.push(id);
        }
        if group.is_empty() {
            return Err(err("empty group".into()));
        }
        groups.push(group);
    }
    if groups.is_empty() {
        return Err(CsvError { row: 1, message: "no groups".into() });
    }
    Ok(GroupSchedule::from_linear(layer, &groups))
}

/// Integer-valued input and kernels in [-8, 8]. The input is drawn at its
/// unpadded size and then padded with zeros.
pub fn random_operands(layer: &LayerSpec, seed: u64) -> (Tensor3, Vec<Tensor3>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let p = layer.padding;
    let (h, w) = (layer.h_in - p.top - p.bottom, layer.w_in - p.left - p.right);
    let mut draw = |c, h, w| Tensor3::from_fn(c, h, w, |_, _, _| rng.gen_range(-8i32..=8) as f64);
    let input = draw(layer.c_in, h, w).pad(p);
    let kernels = (0..layer.n_kernels).map(|_| draw(layer.c_in, layer.h_k, layer.w_k)).collect();
    (input, kernels)
}
