//! Configuration-driven experiments.
//!
//! A spec is a TOML file describing a graph, a synthetic dataset, a list of
//! algorithms and a list of seeds. Every `(algorithm, seed)` cell runs
//! independently and writes
//!
//! ```text
//! <output_dir>/<scenario>/<algorithm>/<seed>/metrics.csv
//! <output_dir>/<scenario>/<algorithm>/<seed>/A_snapshot_<k>.csv   (and .dot)
//! <output_dir>/<scenario>/<algorithm>/<seed>/summary.json
//! ```
//!
//! plus `manifest.json` (resolved spec, version, timestamp) and
//! `experiment_summary.json` at the scenario level.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::generate_dataset;
use crate::didgd::InitRule;
use crate::engine::{self, Mode, RunConfig};
use crate::graph::{generate_er_digraph, DirectedGraph};
use crate::metrics::{records_to_csv, IterationRecord};
use crate::mixing::{metropolis_weights, uniform_in_weights, MixingMatrix};
use crate::problems::{estimate_constants, SamplingConfig, SigmoidClassifier, SignMode, DEFAULT_LAMBDA};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    ErConvergence,
    RingOutlier,
    Custom,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::ErConvergence => "er_convergence",
            Scenario::RingOutlier => "ring_outlier",
            Scenario::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSpec {
    /// Resampled per seed until strongly connected.
    ErdosRenyi { n: usize, p: f64 },
    /// `0 → 1 → … → n−1 → 0`.
    Ring { n: usize },
    /// Directed cycle visiting `order`.
    Cycle { order: Vec<usize> },
    EdgeList { path: PathBuf },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialWeights {
    #[default]
    Metropolis,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// Dirichlet concentration shared by all agents.
    pub alpha: f64,
    /// Per-agent concentrations; overrides `alpha`.
    pub alphas: Option<Vec<f64>>,
    pub samples_per_agent: usize,
    pub dim: usize,
    pub classes: usize,
    pub lambda: f64,
    pub sign_mode: SignMode,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            alphas: None,
            samples_per_agent: 100,
            dim: 10,
            classes: 10,
            lambda: DEFAULT_LAMBDA,
            sign_mode: SignMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub name: String,
    #[serde(flatten)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Worker threads for concurrent cells; 0 picks the core count.
    pub workers: usize,
    pub graph: Option<GraphSpec>,
    pub initial_weights: InitialWeights,
    pub data: DataSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    /// Name of the reference algorithm for speedups.
    pub baseline: Option<String>,
    /// Fixed stationarity threshold; derived from the baseline when absent.
    pub threshold: Option<f64>,
    /// The derived threshold is the baseline's stationarity at this share of
    /// its run.
    pub threshold_fraction: f64,
    /// Scale of the Gaussian initial parameters.
    pub init_scale: f64,
    /// Sample pairs for estimating the smoothness constant.
    pub smoothness_samples: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: Scenario::ErConvergence,
            output_dir: PathBuf::from("out"),
            seeds: vec![0, 1, 2],
            workers: 0,
            graph: None,
            initial_weights: InitialWeights::Metropolis,
            data: DataSpec::default(),
            algorithms: Vec::new(),
            baseline: None,
            threshold: None,
            threshold_fraction: 0.6,
            init_scale: 0.1,
            smoothness_samples: 20,
        }
    }
}

/// One problem found while validating a spec.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn algorithm(name: &str, mode: Mode, iterations: usize, stride: usize) -> AlgorithmSpec {
    AlgorithmSpec {
        name: name.to_string(),
        run: RunConfig {
            mode,
            iterations,
            record_stride: stride,
            ..RunConfig::default()
        },
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Fills scenario defaults for everything left unspecified.
    pub fn resolve(mut self) -> Self {
        match self.scenario {
            Scenario::ErConvergence => {
                self.graph.get_or_insert(GraphSpec::ErdosRenyi { n: 20, p: 0.6 });
                if self.algorithms.is_empty() {
                    self.algorithms = vec![
                        algorithm("didgd", Mode::Didgd, 2000, 10),
                        algorithm("d3gd_central", Mode::D3gdCentral, 2000, 10),
                        algorithm("d3gd_decentralized", Mode::D3gdDecentralized, 2000, 10),
                    ];
                }
            }
            Scenario::RingOutlier => {
                // Ring A → C → D → B → A with A = 0, B = 1, C = 2, D = 3.
                self.graph.get_or_insert(GraphSpec::Cycle { order: vec![0, 2, 3, 1] });
                if self.data.alphas.is_none() {
                    self.data.alphas = Some(vec![0.1, 100.0, 100.0, 100.0]);
                }
                if self.algorithms.is_empty() {
                    self.algorithms = vec![
                        algorithm("didgd", Mode::Didgd, 1000, 10),
                        algorithm("d3gd_central", Mode::D3gdCentral, 1000, 10),
                        algorithm("d3gd_decentralized", Mode::D3gdDecentralized, 1000, 10),
                    ];
                }
            }
            Scenario::Custom => {}
        }
        if self.baseline.is_none() {
            self.baseline = self
                .algorithms
                .iter()
                .find(|a| a.run.mode == Mode::Didgd)
                .or(self.algorithms.first())
                .map(|a| a.name.clone());
        }
        self
    }

    pub fn num_agents(&self) -> Option<usize> {
        match self.graph.as_ref()? {
            GraphSpec::ErdosRenyi { n, .. } | GraphSpec::Ring { n } => Some(*n),
            GraphSpec::Cycle { order } => Some(order.len()),
            GraphSpec::EdgeList { .. } => self.data.alphas.as_ref().map(Vec::len),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        let mut push = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.to_string(),
                message,
            })
        };
        if self.seeds.is_empty() {
            push("seeds", "must list at least one seed".into());
        }
        match &self.graph {
            None => push("graph", format!("required for scenario {}", self.scenario.name())),
            Some(GraphSpec::ErdosRenyi { n, p }) => {
                if *n == 0 {
                    push("graph.n", "must be positive".into());
                }
                if !(0.0..=1.0).contains(p) {
                    push("graph.p", format!("{p} outside [0, 1]"));
                }
            }
            Some(GraphSpec::Ring { n }) if *n == 0 => push("graph.n", "must be positive".into()),
            Some(GraphSpec::Cycle { order }) => {
                let mut seen = order.clone();
                seen.sort_unstable();
                if order.is_empty() || seen.iter().enumerate().any(|(i, &v)| i != v) {
                    push("graph.order", "must be a permutation of 0..n".into());
                }
            }
            Some(GraphSpec::EdgeList { .. }) if self.data.alphas.is_none() => {
                push("data.alphas", "required with an edge-list graph (fixes the agent count)".into())
            }
            _ => {}
        }
        let d = &self.data;
        if !(d.alpha > 0.0) {
            push("data.alpha", "must be positive".into());
        }
        if let Some(a) = &d.alphas {
            if a.iter().any(|v| !(*v > 0.0)) {
                push("data.alphas", "entries must be positive".into());
            }
            if let Some(n) = self.num_agents() {
                if a.len() != n {
                    push("data.alphas", format!("has {} entries for {n} agents", a.len()));
                }
            }
        }
        if d.samples_per_agent == 0 {
            push("data.samples_per_agent", "must be positive".into());
        }
        if d.dim == 0 {
            push("data.dim", "must be positive".into());
        }
        if d.classes == 0 {
            push("data.classes", "must be positive".into());
        }
        if !(d.lambda >= 0.0) {
            push("data.lambda", "must be nonnegative".into());
        }
        if self.algorithms.is_empty() {
            push("algorithms", "must list at least one algorithm".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, a) in self.algorithms.iter().enumerate() {
            let field = format!("algorithms[{i}]");
            if a.name.is_empty() || !a.name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
                push(&format!("{field}.name"), format!("{:?} is not a valid directory name", a.name));
            }
            if !names.insert(a.name.as_str()) {
                push(&format!("{field}.name"), format!("duplicate name {:?}", a.name));
            }
            if let Err(e) = a.run.validate() {
                push(&field, e.to_string());
            }
        }
        if let Some(b) = &self.baseline {
            if !self.algorithms.iter().any(|a| &a.name == b) {
                push("baseline", format!("{b:?} is not a listed algorithm"));
            }
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            push("threshold_fraction", "must lie in (0, 1]".into());
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0) {
                push("threshold", "must be positive".into());
            }
        }
        if !(self.init_scale >= 0.0) {
            push("init_scale", "must be nonnegative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Validation as an [`Error`] listing every offending field.
    pub fn check(&self) -> Result<()> {
        self.validate().map_err(|errs| {
            Error::Validation(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })
    }
}

/// Parses `text`, fills defaults, applies `key=value` overrides (dotted
/// paths; array positions by index or `*` for all) and validates.
pub fn load_spec(text: &str, overrides: &[String]) -> Result<ExperimentSpec> {
    let spec = ExperimentSpec::from_toml(text)?.resolve();
    let spec = if overrides.is_empty() {
        spec
    } else {
        let mut value = toml::Value::try_from(&spec).map_err(|e| Error::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let s: ExperimentSpec = value.try_into().map_err(|e: toml::de::Error| Error::Validation(e.to_string()))?;
        s.resolve()
    };
    spec.check()?;
    Ok(spec)
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let value = parse_override_value(raw.trim());
    set_path(root, &path, &value).map_err(|m| Error::Validation(format!("override {key}: {m}")))
}

fn set_path(node: &mut toml::Value, path: &[&str], value: &toml::Value) -> std::result::Result<(), String> {
    let (head, rest) = path.split_first().ok_or("empty key")?;
    match node {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(head.to_string(), value.clone());
                Ok(())
            } else {
                let child = t
                    .entry(head.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                set_path(child, rest, value)
            }
        }
        toml::Value::Array(items) => {
            let targets: Vec<usize> = if *head == "*" {
                (0..items.len()).collect()
            } else {
                let i: usize = head.parse().map_err(|_| format!("{head:?} is not an index"))?;
                if i >= items.len() {
                    return Err(format!("index {i} out of range"));
                }
                vec![i]
            };
            for i in targets {
                if rest.is_empty() {
                    items[i] = value.clone();
                } else {
                    set_path(&mut items[i], rest, value)?;
                }
            }
            Ok(())
        }
        _ => Err(format!("cannot descend into {head:?}")),
    }
}

/// First recorded iteration with stationarity `≤ tau`.
pub fn iterations_to_threshold(records: &[IterationRecord], tau: f64) -> Option<usize> {
    records.iter().find(|r| r.stationarity <= tau).map(|r| r.k)
}

/// `iters_baseline(τ) / iters_candidate(τ)` with first-crossing semantics;
/// `None` if either never crosses.
pub fn summarize_speedup(baseline: &[IterationRecord], candidate: &[IterationRecord], tau: f64) -> Option<f64> {
    let b = iterations_to_threshold(baseline, tau)?;
    let c = iterations_to_threshold(candidate, tau)?;
    match (b, c) {
        (0, 0) => Some(1.0),
        (_, 0) => None,
        _ => Some(b as f64 / c as f64),
    }
}

/// The baseline's stationarity at `fraction` of its run: the first record
/// at or after that iteration.
pub fn derived_threshold(baseline: &[IterationRecord], fraction: f64) -> Option<f64> {
    let last = baseline.last()?.k;
    let target = (fraction * last as f64).round() as usize;
    baseline.iter().find(|r| r.k >= target).map(|r| r.stationarity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub algorithm: String,
    pub mode: Mode,
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub iterations: usize,
    pub smoothness: f64,
    pub threshold: Option<f64>,
    pub iterations_to_threshold: Option<usize>,
    /// `null` when undefined (a run never reached the threshold).
    pub speedup_vs_baseline: Option<f64>,
    pub min_stationarity: Option<f64>,
    pub final_record: Option<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub seeds: usize,
    pub failures: usize,
    pub median_speedup: Option<f64>,
    pub speedups: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    /// Seconds since the Unix epoch; the only nondeterministic field.
    pub created_unix: u64,
    pub spec: ExperimentSpec,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub dir: PathBuf,
    pub cells: Vec<CellSummary>,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

/// Graph, initial weights and problem shared by every algorithm of a seed.
pub struct SeedSetup {
    pub a0: MixingMatrix,
    pub problem: SigmoidClassifier,
    pub smoothness: f64,
}

pub fn build_graph(spec: &GraphSpec, seed: u64) -> Result<DirectedGraph> {
    match spec {
        GraphSpec::ErdosRenyi { n, p } => generate_er_digraph(*n, *p, seed),
        GraphSpec::Ring { n } => DirectedGraph::ring(*n),
        GraphSpec::Cycle { order } => DirectedGraph::directed_cycle(order),
        GraphSpec::EdgeList { path } => DirectedGraph::from_edge_list(&fs::read_to_string(path)?, None),
    }
}

pub fn build_seed(spec: &ExperimentSpec, seed: u64) -> Result<SeedSetup> {
    let gspec = spec
        .graph
        .as_ref()
        .ok_or_else(|| Error::Validation("graph: missing".into()))?;
    let graph = Arc::new(build_graph(gspec, seed)?);
    let a0 = match spec.initial_weights {
        InitialWeights::Metropolis => metropolis_weights(graph.clone())?,
        InitialWeights::Uniform => uniform_in_weights(graph.clone())?,
    };
    let n = graph.n();
    let d = &spec.data;
    let alphas = d.alphas.clone().unwrap_or_else(|| vec![d.alpha; n]);
    let data = Arc::new(generate_dataset(&alphas, d.classes, d.samples_per_agent, d.dim, seed)?);
    let problem = SigmoidClassifier::new(data, d.lambda, d.sign_mode)?;
    let sampling = SamplingConfig {
        samples: spec.smoothness_samples.max(1),
        seed,
        ..SamplingConfig::default()
    };
    let smoothness = estimate_constants(&problem, &sampling).l_hat.max(f64::MIN_POSITIVE);
    Ok(SeedSetup { a0, problem, smoothness })
}

/// Per-cell run configuration: seeded initialization and the estimated
/// smoothness unless the spec fixes one.
pub fn cell_config(spec: &ExperimentSpec, alg: &AlgorithmSpec, seed: u64, smoothness: f64) -> RunConfig {
    let mut run = alg.run.clone();
    run.init = InitRule::Gaussian {
        scale: spec.init_scale,
        seed,
    };
    run.smoothness = Some(run.smoothness.unwrap_or(smoothness));
    if let engine::ActiveSet::Random { m, .. } = run.active_set {
        run.active_set = engine::ActiveSet::Random { m, seed };
    }
    run
}

struct CellOutcome {
    alg: usize,
    seed: u64,
    records: Vec<IterationRecord>,
    smoothness: f64,
    error: Option<String>,
}

fn cell_dir(root: &Path, alg: &str, seed: u64) -> PathBuf {
    root.join(alg).join(seed.to_string())
}

fn run_cell(spec: &ExperimentSpec, root: &Path, alg_idx: usize, seed: u64, setup: &Result<SeedSetup>) -> CellOutcome {
    let alg = &spec.algorithms[alg_idx];
    let mut records = Vec::new();
    let fail = |records, smoothness, e: Error| CellOutcome {
        alg: alg_idx,
        seed,
        records,
        smoothness,
        error: Some(e.to_string()),
    };
    let setup = match setup {
        Ok(s) => s,
        Err(e) => return fail(records, f64::NAN, Error::Validation(format!("seed setup failed: {e}"))),
    };
    let dir = cell_dir(root, &alg.name, seed);
    if let Err(e) = fs::create_dir_all(&dir) {
        return fail(records, setup.smoothness, e.into());
    }
    let config = cell_config(spec, alg, seed, setup.smoothness);
    let result = engine::run_d3gd(&setup.problem, &setup.a0, &config, &mut records);
    let write = |result: &Result<engine::RunOutput>| -> Result<()> {
        fs::write(dir.join("metrics.csv"), records_to_csv(&records))?;
        if let Ok(out) = result {
            for s in &out.snapshots {
                fs::write(dir.join(format!("A_snapshot_{}.csv", s.iteration)), s.weights.to_csv())?;
                fs::write(dir.join(format!("A_snapshot_{}.dot", s.iteration)), s.weights.to_dot())?;
            }
        }
        Ok(())
    };
    let written = write(&result);
    let error = match (result, written) {
        (Err(e), _) | (Ok(_), Err(e)) => Some(e.to_string()),
        _ => None,
    };
    CellOutcome {
        alg: alg_idx,
        seed,
        records,
        smoothness: setup.smoothness,
        error,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Runs every `(algorithm, seed)` cell of a validated spec. Cell failures
/// are recorded in the report, not returned as errors.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.check()?;
    let root = spec.output_dir.join(spec.scenario.name());
    fs::create_dir_all(&root)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        spec: spec.clone(),
    };
    write_json(&root.join("manifest.json"), &manifest)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Validation(format!("workers: {e}")))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        let setups: BTreeMap<u64, Result<SeedSetup>> = spec
            .seeds
            .par_iter()
            .map(|&s| (s, build_seed(spec, s)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        let cells: Vec<(usize, u64)> = (0..spec.algorithms.len())
            .flat_map(|a| spec.seeds.iter().map(move |&s| (a, s)))
            .collect();
        cells
            .par_iter()
            .map(|&(a, s)| run_cell(spec, &root, a, s, &setups[&s]))
            .collect()
    });

    let baseline_idx = spec
        .baseline
        .as_ref()
        .and_then(|b| spec.algorithms.iter().position(|a| &a.name == b));
    let baseline_of = |seed: u64| {
        baseline_idx.and_then(|b| outcomes.iter().find(|o| o.alg == b && o.seed == seed && o.error.is_none()))
    };
    let mut cells = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let alg = &spec.algorithms[o.alg];
        let base = baseline_of(o.seed);
        let threshold = spec
            .threshold
            .or_else(|| base.and_then(|b| derived_threshold(&b.records, spec.threshold_fraction)));
        let (hit, speedup) = match (threshold, o.error.is_none()) {
            (Some(t), true) => (
                iterations_to_threshold(&o.records, t),
                base.and_then(|b| summarize_speedup(&b.records, &o.records, t)),
            ),
            _ => (None, None),
        };
        let summary = CellSummary {
            algorithm: alg.name.clone(),
            mode: alg.run.mode,
            seed: o.seed,
            status: if o.error.is_none() { "ok" } else { "failed" }.to_string(),
            error: o.error.clone(),
            iterations: alg.run.iterations,
            smoothness: o.smoothness,
            threshold,
            iterations_to_threshold: hit,
            speedup_vs_baseline: speedup,
            min_stationarity: o.records.iter().map(|r| r.stationarity).reduce(f64::min),
            final_record: o.records.last().cloned(),
        };
        let dir = cell_dir(&root, &alg.name, o.seed);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("summary.json"), &summary)?;
        cells.push(summary);
    }
    let algorithms: Vec<AlgorithmSummary> = spec
        .algorithms
        .iter()
        .map(|a| {
            let mine: Vec<&CellSummary> = cells.iter().filter(|c| c.algorithm == a.name).collect();
            let speedups: Vec<Option<f64>> = mine.iter().map(|c| c.speedup_vs_baseline).collect();
            AlgorithmSummary {
                algorithm: a.name.clone(),
                seeds: mine.len(),
                failures: mine.iter().filter(|c| c.error.is_some()).count(),
                median_speedup: median(speedups.iter().flatten().copied().collect()),
                speedups,
            }
        })
        .collect();
    write_json(&root.join("experiment_summary.json"), &algorithms)?;
    Ok(ExperimentReport { dir: root, cells, algorithms })
}

/// Collects every cell `summary.json` under `dir`, sorted by path.
pub fn summarize(dir: &Path) -> Result<Vec<CellSummary>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.file_name().is_some_and(|n| n == "summary.json") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths)?;
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        })
        .collect()
}
