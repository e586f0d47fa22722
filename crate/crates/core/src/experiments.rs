//! Monte-Carlo support-recovery experiments.
//!
//! A grid is the Cartesian product of methods, input dimensions `m`, inlier
//! counts `n*` and contamination ratios `ε`. Each repetition draws a fresh
//! sparse precision difference, samples `n = n* / (1 - ε)` rows per side,
//! contaminates them and fits every requested method on the same data.
//!
//! Every repetition seeds its own generator from
//! [`derive_seed`]`(master_seed, cell, rep)`, where the cell key leaves out
//! the method. Results therefore do not depend on execution order or on the
//! number of worker threads, and all methods see common random numbers.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    contaminate, make_sparse_difference, total_size, DiagonalPair, GaussianSpec, LabeledDataset, OutlierModel,
    Placement, Rounding, SparseDifference,
};
use crate::diagnostics::support_metrics;
use crate::features::{FeatureMap, ParamVector, ThetaConvention};
use crate::io::format_f64;
use crate::model::{Method, ObjectiveSpec, PrecomputedFeatures};
use crate::optim::{fit, lambda_schedule, SolverConfig};
use crate::weights::{WeightFn, WeightSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Off-diagonal sparse difference, optionally contaminated.
    Robustness,
    /// Diagonal sparse difference with bounded or unbounded ratio.
    Unboundedness,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Robustness => "robustness",
            Scenario::Unboundedness => "unboundedness",
        }
    }
}

/// Outlier component `N(mean * 1_m, cov_scale * I_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutlierSpec {
    pub mean: f64,
    pub cov_scale: f64,
}

impl Default for OutlierSpec {
    fn default() -> Self {
        Self {
            mean: 100.0,
            cov_scale: 1.0,
        }
    }
}

impl OutlierSpec {
    pub fn model(&self, m: usize) -> Result<OutlierModel> {
        OutlierModel::isotropic(m, self.mean, self.cov_scale)
    }
}

/// Solver options shared by every fit; `λ` is set per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iter: usize,
    pub tol: f64,
    pub backtrack_shrink: f64,
    pub initial_step: f64,
    pub restart: bool,
    pub kkt_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let c = SolverConfig::<f64>::default();
        Self {
            max_iter: c.max_iter,
            tol: c.tol,
            backtrack_shrink: c.backtrack_shrink,
            initial_step: c.initial_step,
            restart: c.restart,
            kkt_tol: c.kkt_tol,
        }
    }
}

impl SolverSettings {
    pub fn with_lambda(&self, lambda: f64) -> SolverConfig<f64> {
        SolverConfig {
            lambda,
            max_iter: self.max_iter,
            tol: self.tol,
            backtrack_shrink: self.backtrack_shrink,
            initial_step: self.initial_step,
            restart: self.restart,
            kkt_tol: self.kkt_tol,
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::ConventionalDre, Method::WeightedDre]
}

fn default_pairs() -> Vec<DiagonalPair> {
    vec![DiagonalPair::Bounded, DiagonalPair::Unbounded]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Input dimensions `m`.
    pub dims: Vec<usize>,
    /// Per-side inlier counts `n*`.
    pub n_grid: Vec<usize>,
    #[serde(default = "ExperimentConfig::default_k")]
    pub k: usize,
    #[serde(default = "ExperimentConfig::default_magnitude")]
    pub magnitude: f64,
    /// Contamination ratios, applied to both sides.
    #[serde(default = "ExperimentConfig::default_eps")]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub outliers: OutlierSpec,
    pub lambda0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0_dre: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0_wdre: Option<f64>,
    #[serde(default)]
    pub weight: WeightSpec,
    /// Ratio cases of the unboundedness scenario.
    #[serde(default = "default_pairs")]
    pub diagonal_pairs: Vec<DiagonalPair>,
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub solver: SolverSettings,
    /// Convention for the true parameter; it only affects `l2` errors.
    #[serde(default = "ExperimentConfig::default_convention")]
    pub theta_convention: ThetaConvention,
    #[serde(default)]
    pub rounding: Rounding,
    /// Wall-clock times make the CSV non-reproducible, so they are opt-in.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    fn default_k() -> usize {
        4
    }

    fn default_magnitude() -> f64 {
        0.4
    }

    fn default_eps() -> Vec<f64> {
        vec![0.0]
    }

    fn default_convention() -> ThetaConvention {
        ThetaConvention::SumSplit
    }

    /// Desk-scale robustness grid.
    pub fn robustness() -> Self {
        Self {
            scenario: Scenario::Robustness,
            methods: default_methods(),
            dims: vec![20, 30],
            n_grid: vec![1000, 2000, 4000, 8000],
            k: 4,
            magnitude: 0.4,
            eps: vec![0.0, 0.2],
            outliers: OutlierSpec::default(),
            lambda0: 5.0,
            lambda0_dre: None,
            lambda0_wdre: None,
            weight: WeightSpec::default(),
            diagonal_pairs: default_pairs(),
            repetitions: 50,
            master_seed: 0,
            solver: SolverSettings::default(),
            theta_convention: ThetaConvention::SumSplit,
            rounding: Rounding::Strict,
            record_wall_time: false,
        }
    }

    /// Desk-scale unboundedness grid.
    ///
    /// The weight has amplitude 0.5. With `λ` held fixed the amplitude rescales
    /// the smooth loss against the penalty, so it acts like a factor of 2 on `λ₀`.
    pub fn unboundedness() -> Self {
        Self {
            scenario: Scenario::Unboundedness,
            dims: vec![20],
            eps: vec![0.0],
            lambda0: 4.0,
            weight: WeightSpec {
                amplitude: 0.5,
                ..WeightSpec::default()
            },
            ..Self::robustness()
        }
    }

    /// `λ₀` for a method, honouring per-method overrides.
    pub fn lambda0_for(&self, method: Method) -> f64 {
        match method {
            Method::ConventionalDre => self.lambda0_dre,
            Method::WeightedDre => self.lambda0_wdre,
        }
        .unwrap_or(self.lambda0)
    }

    /// The labels that appear in the `scenario` column.
    pub fn scenario_labels(&self) -> Vec<String> {
        match self.scenario {
            Scenario::Robustness => vec![self.scenario.as_str().to_string()],
            Scenario::Unboundedness => self
                .diagonal_pairs
                .iter()
                .map(|p| format!("{}-{}", self.scenario.as_str(), p.as_str()))
                .collect(),
        }
    }

    /// Data-generating cells: the grid without the method axis.
    pub fn data_cells(&self) -> Vec<DataCell> {
        let placements: Vec<(String, Placement)> = match self.scenario {
            Scenario::Robustness => vec![(self.scenario.as_str().to_string(), Placement::OffDiagonalDisjoint)],
            Scenario::Unboundedness => self
                .diagonal_pairs
                .iter()
                .map(|&p| (format!("{}-{}", self.scenario.as_str(), p.as_str()), Placement::Diagonal(p)))
                .collect(),
        };
        let mut out = Vec::new();
        for (label, placement) in &placements {
            for &m in &self.dims {
                for &n_star in &self.n_grid {
                    for &eps in &self.eps {
                        out.push(DataCell {
                            scenario: label.clone(),
                            placement: *placement,
                            m,
                            n_star,
                            eps,
                        });
                    }
                }
            }
        }
        out.sort_by(|a, b| a.order(b));
        out.dedup_by(|a, b| a.order(b) == Ordering::Equal);
        out
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        let mut out: Vec<CellKey> = self
            .data_cells()
            .into_iter()
            .flat_map(|c| methods.iter().map(move |&method| CellKey { method, data: c.clone() }))
            .collect();
        out.sort_by(|a, b| a.order(b));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.dims.iter().any(|&m| m == 0) {
            return bad("dims must be positive".into());
        }
        if self.n_grid.iter().any(|&n| n == 0) {
            return bad("n_grid entries must be positive".into());
        }
        if self.scenario == Scenario::Unboundedness && self.diagonal_pairs.is_empty() {
            return bad("diagonal_pairs must not be empty for the unboundedness scenario".into());
        }
        for l0 in [Some(self.lambda0), self.lambda0_dre, self.lambda0_wdre].into_iter().flatten() {
            if !(l0 > 0.0 && l0.is_finite()) {
                return bad(format!("lambda0 must be positive, got {l0}"));
            }
        }
        if !(self.magnitude.is_finite() && self.magnitude != 0.0) {
            return bad(format!("magnitude must be finite and nonzero, got {}", self.magnitude));
        }
        self.solver.with_lambda(0.0).validate()?;
        for &m in &self.dims {
            self.weight.resolve::<f64>(m)?;
            self.outliers.model(m)?;
        }
        for cell in self.data_cells() {
            total_size(cell.n_star, cell.eps, self.rounding).map_err(|e| {
                Error::InvalidParameter(format!("cell {}: {e}", cell.describe()))
            })?;
        }
        Ok(())
    }

    /// The config with every dimension-dependent default written out.
    pub fn resolved(&self) -> ResolvedConfig {
        ResolvedConfig {
            config: self.clone(),
            weights: self
                .dims
                .iter()
                .map(|&m| ResolvedWeight {
                    m,
                    weight: self.weight.materialized(m),
                })
                .collect(),
            lambda0_dre: self.lambda0_for(Method::ConventionalDre),
            lambda0_wdre: self.lambda0_for(Method::WeightedDre),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedWeight {
    pub m: usize,
    pub weight: WeightSpec,
}

/// An [`ExperimentConfig`] together with the values its defaults resolve to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    pub weights: Vec<ResolvedWeight>,
    pub lambda0_dre: f64,
    pub lambda0_wdre: f64,
}

/// A data-generating cell. Every method in a cell is fit on the same draws.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCell {
    pub scenario: String,
    pub placement: Placement,
    pub m: usize,
    pub n_star: usize,
    pub eps: f64,
}

impl DataCell {
    fn order(&self, other: &Self) -> Ordering {
        self.scenario
            .cmp(&other.scenario)
            .then(self.m.cmp(&other.m))
            .then(self.n_star.cmp(&other.n_star))
            .then(self.eps.total_cmp(&other.eps))
    }

    pub fn describe(&self) -> String {
        format!("(scenario={}, m={}, n*={}, eps={})", self.scenario, self.m, self.n_star, self.eps)
    }

    /// Stable 64-bit identifier of the cell, independent of method.
    pub fn id(&self) -> u64 {
        let mut h = fnv1a(self.scenario.as_bytes());
        for v in [self.m as u64, self.n_star as u64, self.eps.to_bits()] {
            h = splitmix64(h ^ v);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub method: Method,
    pub data: DataCell,
}

impl CellKey {
    fn order(&self, other: &Self) -> Ordering {
        self.data
            .scenario
            .cmp(&other.data.scenario)
            .then(self.method.as_str().cmp(other.method.as_str()))
            .then(self.data.m.cmp(&other.data.m))
            .then(self.data.n_star.cmp(&other.data.n_star))
            .then(self.data.eps.total_cmp(&other.data.eps))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of repetition `rep` in the cell with identifier `cell_id`.
pub fn derive_seed(master_seed: u64, cell_id: u64, rep: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ cell_id) ^ rep as u64)
}

/// One repetition's draws: the design plus contaminated samples of both sides.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub design: SparseDifference,
    pub reference: LabeledDataset,
    pub target: LabeledDataset,
}

/// Draws the data of repetition `rep` in `cell`.
pub fn draw_replicate(cfg: &ExperimentConfig, cell: &DataCell, rep: usize) -> Result<Replicate> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, cell.id(), rep));
    let design = make_sparse_difference(cell.m, cfg.k, cfg.magnitude, cell.placement, &mut rng)?;
    let n = total_size(cell.n_star, cell.eps, cfg.rounding)?;
    let outliers = cfg.outliers.model(cell.m)?;
    let mut side = |precision: &Array2<f64>| -> Result<LabeledDataset> {
        let clean = GaussianSpec::new(precision.clone())?.sample(n, &mut rng);
        contaminate(clean.view(), cell.eps, &outliers, cfg.rounding, &mut rng)
    };
    let reference = side(&design.lambda_p)?;
    let target = side(&design.lambda_q)?;
    Ok(Replicate {
        design,
        reference,
        target,
    })
}

/// Outcome of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub rep: usize,
    pub converged: bool,
    /// Exact support recovery by a converged fit.
    pub success: bool,
    pub signed_success: bool,
    /// `None` when the fit returned an error.
    pub l2_error: Option<f64>,
    pub iterations: usize,
    pub error: Option<String>,
    pub wall_s: f64,
}

fn objective_spec(cfg: &ExperimentConfig, method: Method, map: &FeatureMap) -> Result<ObjectiveSpec<f64>> {
    let weight = match method {
        Method::ConventionalDre => WeightFn::unit(),
        Method::WeightedDre => cfg.weight.resolve(map.input_dim())?,
    };
    Ok(ObjectiveSpec::new(method, weight, map.clone()))
}

/// `λ = λ₀ sqrt(ln d / n*)` for a cell.
pub fn cell_lambda(cfg: &ExperimentConfig, method: Method, m: usize, n_star: usize) -> Result<f64> {
    let d = FeatureMap::new(m)?.dim();
    lambda_schedule(cfg.lambda0_for(method), d as f64, n_star)
}

fn fit_one(
    cfg: &ExperimentConfig,
    method: Method,
    cell: &DataCell,
    data: &Replicate,
    theta_star: &ParamVector<f64>,
) -> Result<(bool, bool, bool, f64, usize)> {
    let map = FeatureMap::new(cell.m)?;
    let spec = objective_spec(cfg, method, &map)?;
    let features = PrecomputedFeatures::new(&spec, data.reference.samples.view(), data.target.samples.view())?;
    let lambda = cell_lambda(cfg, method, cell.m, cell.n_star)?;
    let res = fit(&spec, &features, &cfg.solver.with_lambda(lambda))?;
    let metrics = support_metrics(&res.theta_hat, &data.design.support, Some(theta_star))?;
    let exact = res.converged && metrics.exact_recovery;
    let signed = exact && metrics.signed_recovery == Some(true);
    Ok((res.converged, exact, signed, metrics.l2_error.unwrap_or(f64::NAN), res.iterations))
}

/// Draws repetition `rep` of `cell` and fits each method in `methods` on it.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    cell: &DataCell,
    methods: &[Method],
    rep: usize,
) -> Result<Vec<RepOutcome>> {
    let data = draw_replicate(cfg, cell, rep)?;
    let map = FeatureMap::new(cell.m)?;
    let theta_star = data.design.theta_star(&map, cfg.theta_convention)?;
    Ok(methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let out = fit_one(cfg, method, cell, &data, &theta_star);
            let wall_s = start.elapsed().as_secs_f64();
            match out {
                Ok((converged, success, signed_success, l2, iterations)) => RepOutcome {
                    rep,
                    converged,
                    success,
                    signed_success,
                    l2_error: Some(l2),
                    iterations,
                    error: None,
                    wall_s,
                },
                Err(e) => RepOutcome {
                    rep,
                    converged: false,
                    success: false,
                    signed_success: false,
                    l2_error: None,
                    iterations: 0,
                    error: Some(e.to_string()),
                    wall_s,
                },
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub scenario: String,
    pub method: Method,
    pub m: usize,
    pub d: usize,
    pub n_star: usize,
    pub eps: f64,
    pub lambda0: f64,
    pub lambda: f64,
    pub repetitions: usize,
    pub success_rate: f64,
    pub signed_success_rate: f64,
    pub mean_l2: f64,
    pub median_l2: f64,
    pub n_converged: usize,
    /// `repetitions - n_converged`.
    pub n_failed: usize,
    /// Fits that returned an error, a subset of `n_failed`.
    pub n_errors: usize,
    /// Summed fit time, `NaN` unless wall times are recorded.
    pub wall_s: f64,
}

/// Median of finite values, `NaN` for none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregates per-repetition outcomes, in repetition order, into a cell row.
pub fn aggregate(cfg: &ExperimentConfig, key: &CellKey, outcomes: &[RepOutcome]) -> Result<CellResult> {
    let d = FeatureMap::new(key.data.m)?.dim();
    let reps = outcomes.len();
    let count = |f: fn(&RepOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count();
    let n_converged = count(|o| o.converged);
    let l2: Vec<f64> = outcomes.iter().filter_map(|o| o.l2_error).filter(|v| v.is_finite()).collect();
    let mean_l2 = if l2.is_empty() {
        f64::NAN
    } else {
        l2.iter().sum::<f64>() / l2.len() as f64
    };
    let wall_s = if cfg.record_wall_time {
        outcomes.iter().map(|o| o.wall_s).sum()
    } else {
        f64::NAN
    };
    Ok(CellResult {
        scenario: key.data.scenario.clone(),
        method: key.method,
        m: key.data.m,
        d,
        n_star: key.data.n_star,
        eps: key.data.eps,
        lambda0: cfg.lambda0_for(key.method),
        lambda: cell_lambda(cfg, key.method, key.data.m, key.data.n_star)?,
        repetitions: reps,
        success_rate: count(|o| o.success) as f64 / reps as f64,
        signed_success_rate: count(|o| o.signed_success) as f64 / reps as f64,
        mean_l2,
        median_l2: median(&l2),
        n_converged,
        n_failed: reps - n_converged,
        n_errors: count(|o| o.error.is_some()),
        wall_s,
    })
}

/// Per-repetition outcomes of one cell.
pub fn run_cell_outcomes(cfg: &ExperimentConfig, key: &CellKey) -> Result<Vec<RepOutcome>> {
    cfg.validate()?;
    (0..cfg.repetitions)
        .map(|rep| run_replicate(cfg, &key.data, &[key.method], rep).map(|mut v| v.remove(0)))
        .collect()
}

pub fn run_cell(cfg: &ExperimentConfig, key: &CellKey) -> Result<CellResult> {
    let outcomes = run_cell_outcomes(cfg, key)?;
    aggregate(cfg, key, &outcomes)
}

/// A cell whose data could not be generated.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub key: CellKey,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// Completed cells in artifact order.
    pub cells: Vec<CellResult>,
    /// Per-repetition outcomes, parallel to `cells`.
    pub outcomes: Vec<Vec<RepOutcome>>,
    pub failures: Vec<CellFailure>,
}

impl GridOutcome {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_results_csv(out, &self.cells)
    }
}

/// Runs the whole grid on `threads` workers (`None`: all cores).
///
/// The result is identical for every thread count.
pub fn run_grid(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<GridOutcome> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::InvalidParameter("thread count must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::ThreadPool(e.to_string()))?;

    let mut methods = cfg.methods.clone();
    methods.sort_by_key(|m| m.as_str());
    methods.dedup();
    let data_cells = cfg.data_cells();
    let tasks: Vec<(usize, usize)> = (0..data_cells.len())
        .flat_map(|c| (0..cfg.repetitions).map(move |r| (c, r)))
        .collect();
    let results: Vec<Result<Vec<RepOutcome>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, r)| run_replicate(cfg, &data_cells[c], &methods, r))
            .collect()
    });

    let mut per_cell: Vec<std::result::Result<Vec<Vec<RepOutcome>>, String>> =
        vec![Ok(Vec::with_capacity(cfg.repetitions)); data_cells.len()];
    for (&(c, _), res) in tasks.iter().zip(results) {
        let slot = &mut per_cell[c];
        match (slot.as_mut(), res) {
            (Ok(v), Ok(o)) => v.push(o),
            (Ok(_), Err(e)) => *slot = Err(e.to_string()),
            (Err(_), _) => {}
        }
    }

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, res) in data_cells.iter().zip(per_cell) {
        for (mi, &method) in methods.iter().enumerate() {
            let key = CellKey {
                method,
                data: cell.clone(),
            };
            match &res {
                Ok(reps) => {
                    let outcomes: Vec<RepOutcome> = reps.iter().map(|r| r[mi].clone()).collect();
                    let row = aggregate(cfg, &key, &outcomes)?;
                    rows.push((key, row, outcomes));
                }
                Err(msg) => failures.push(CellFailure {
                    key,
                    message: msg.clone(),
                }),
            }
        }
    }
    rows.sort_by(|a, b| a.0.order(&b.0));
    failures.sort_by(|a, b| a.key.order(&b.key));
    let (cells, outcomes) = rows.into_iter().map(|(_, r, o)| (r, o)).unzip();
    Ok(GridOutcome {
        cells,
        outcomes,
        failures,
    })
}

pub const RESULTS_HEADER: [&str; 15] = [
    "scenario",
    "method",
    "m",
    "d",
    "n_star",
    "eps",
    "lambda0",
    "lambda",
    "repetitions",
    "success_rate",
    "signed_success_rate",
    "mean_l2",
    "median_l2",
    "n_converged",
    "wall_s",
];

pub fn write_results_csv<W: Write>(out: W, rows: &[CellResult]) -> Result<()> {
    let to_err = |e: csv::Error| Error::InvalidParameter(format!("writing results: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER).map_err(to_err)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.method.as_str().to_string(),
            r.m.to_string(),
            r.d.to_string(),
            r.n_star.to_string(),
            format_f64(r.eps),
            format_f64(r.lambda0),
            format_f64(r.lambda),
            r.repetitions.to_string(),
            format_f64(r.success_rate),
            format_f64(r.signed_success_rate),
            format_f64(r.mean_l2),
            format_f64(r.median_l2),
            r.n_converged.to_string(),
            format_f64(r.wall_s),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "results".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_results_file(path: &Path, rows: &[CellResult]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    write_results_csv(std::io::BufWriter::new(file), rows)
}

/// Smallest true magnitude on the support, next to `λ sqrt(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaMin {
    /// `min_{t∈S} |θ*_t|`, `+∞` for an empty support.
    pub min_abs_theta: f64,
    pub lambda_sqrt_k: f64,
    pub empty_support: bool,
}

/// Evaluates the design drawn for repetition 0 of `key`.
pub fn betamin_check(cfg: &ExperimentConfig, key: &CellKey) -> Result<BetaMin> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, key.data.id(), 0));
    let design = make_sparse_difference(key.data.m, cfg.k, cfg.magnitude, key.data.placement, &mut rng)?;
    let map = FeatureMap::new(key.data.m)?;
    let theta = design.theta_star(&map, cfg.theta_convention)?;
    let min_abs_theta = design
        .support
        .iter()
        .map(|&t| theta.values()[t].abs())
        .fold(f64::INFINITY, f64::min);
    let lambda = cell_lambda(cfg, key.method, key.data.m, key.data.n_star)?;
    Ok(BetaMin {
        min_abs_theta,
        lambda_sqrt_k: lambda * (design.support.len() as f64).sqrt(),
        empty_support: design.support.is_empty(),
    })
}
