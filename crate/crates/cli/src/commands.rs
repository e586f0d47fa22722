use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{Array1, Array2};
use robust_dre::datagen::{outlier_count, DiagonalPair, LabeledDataset, Rounding};
use robust_dre::diagnostics::{assumption_audit, leverage_stats, AssumptionReport, LeverageReport, ThetaBox};
use robust_dre::experiments::{
    draw_replicate, run_grid, ExperimentConfig, OutlierSpec, ResolvedConfig, Scenario, SolverSettings,
};
use robust_dre::features::{FeatureMap, ParamVector, ThetaConvention};
use robust_dre::io::{read_dataset_csv, write_dataset_csv};
use robust_dre::model::{Method, ObjectiveSpec, PrecomputedFeatures};
use robust_dre::optim::{fit, lambda_schedule};
use robust_dre::weights::WeightSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{apply_overrides, defaults, finish, read_json, set_path};

/// How a command finished, beyond plain success.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
    Partial,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

impl Common {
    /// File contents if `--config` was given, else `fallback`; then `--set`.
    fn load(&self, fallback: Value, early: impl FnOnce(&mut Value) -> Result<()>) -> Result<Value> {
        let mut value = match &self.config {
            Some(path) => read_json(path)?,
            None => fallback,
        };
        early(&mut value)?;
        apply_overrides(&mut value, &self.sets)?;
        Ok(value)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit_json<T: Serialize>(output: Option<&Path>, file_name: &str, value: &T) -> Result<()> {
    match output {
        Some(dir) => {
            ensure_dir(dir)?;
            write_json(&dir.join(file_name), value)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn matrix_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn read_pair(reference: &Path, target: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let p = read_dataset_csv(reference)?;
    let q = read_dataset_csv(target)?;
    if p.dim() != q.dim() {
        bail!(
            "dimension mismatch: {} has {} columns, {} has {}",
            reference.display(),
            p.dim(),
            target.display(),
            q.dim()
        );
    }
    if p.dim() == 0 {
        bail!("{} has no feature columns", reference.display());
    }
    Ok((p, q))
}

fn objective_spec(method: Method, weight: &WeightSpec, map: FeatureMap) -> Result<ObjectiveSpec<f64>> {
    Ok(match method {
        Method::ConventionalDre => ObjectiveSpec::conventional(map),
        Method::WeightedDre => ObjectiveSpec::weighted(weight.resolve(map.input_dim())?, map),
    })
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub scenario: Scenario,
    pub m: usize,
    /// Rows per side, outliers included.
    pub n: usize,
    pub k: usize,
    pub magnitude: f64,
    pub eps: f64,
    pub outliers: OutlierSpec,
    /// Ratio case for the unboundedness scenario.
    pub diagonal_pair: DiagonalPair,
    pub seed: u64,
    pub rounding: Rounding,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Robustness,
            m: 20,
            n: 1000,
            k: 4,
            magnitude: 0.4,
            eps: 0.0,
            outliers: OutlierSpec::default(),
            diagonal_pair: DiagonalPair::Unbounded,
            seed: 0,
            rounding: Rounding::Strict,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportEntry {
    pub t: usize,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaStar {
    pub direct: Vec<f64>,
    pub sum_split: Vec<f64>,
}

/// Ground truth written next to generated data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub scenario: String,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub lambda_p: Vec<Vec<f64>>,
    pub lambda_q: Vec<Vec<f64>>,
    pub support: Vec<SupportEntry>,
    pub theta_star: ThetaStar,
}

pub struct GenDataArgs {
    pub common: Common,
    pub scenario: Option<Scenario>,
    pub round_contamination: bool,
}

/// Writes `reference.csv`, `target.csv` and `truth.json`.
///
/// The draw is repetition 0 of the matching experiment cell, so the files
/// can be reproduced from an experiment config with the same seed.
pub fn gen_data(args: &GenDataArgs) -> Result<Status> {
    let c = &args.common;
    let value = c.load(defaults(&GenDataConfig::default()), |v| {
        if let Some(s) = args.scenario {
            set_path(v, "scenario", defaults(&s))?;
        }
        if let Some(seed) = c.seed {
            set_path(v, "seed", seed.into())?;
        }
        if args.round_contamination {
            set_path(v, "rounding", defaults(&Rounding::Round))?;
        }
        Ok(())
    })?;
    let g: GenDataConfig = finish(value, "gen-data")?;
    let n_out = outlier_count(g.eps, g.n, g.rounding)?;
    let exp = ExperimentConfig {
        scenario: g.scenario,
        dims: vec![g.m],
        n_grid: vec![g.n - n_out],
        k: g.k,
        magnitude: g.magnitude,
        eps: vec![g.eps],
        outliers: g.outliers,
        diagonal_pairs: vec![g.diagonal_pair],
        repetitions: 1,
        master_seed: g.seed,
        rounding: g.rounding,
        ..ExperimentConfig::robustness()
    };
    exp.validate()?;
    let cell = exp.data_cells().remove(0);
    let data = draw_replicate(&exp, &cell, 0)?;
    if data.reference.len() != g.n {
        bail!("eps = {} and n = {} do not round to a consistent inlier count", g.eps, g.n);
    }

    let dir = c.output.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    write_dataset_csv(&dir.join("reference.csv"), &data.reference)?;
    write_dataset_csv(&dir.join("target.csv"), &data.target)?;
    let map = FeatureMap::new(g.m)?;
    let direct = data.design.theta_star(&map, ThetaConvention::Direct)?;
    let split = data.design.theta_star(&map, ThetaConvention::SumSplit)?;
    let truth = Truth {
        scenario: cell.scenario.clone(),
        m: g.m,
        d: map.dim(),
        k: g.k,
        seed: g.seed,
        lambda_p: matrix_rows(&data.design.lambda_p),
        lambda_q: matrix_rows(&data.design.lambda_q),
        support: data
            .design
            .support
            .iter()
            .map(|&t| {
                let (i, j) = map.pair(t);
                SupportEntry { t, i, j }
            })
            .collect(),
        theta_star: ThetaStar {
            direct: direct.into_values().to_vec(),
            sum_split: split.into_values().to_vec(),
        },
    };
    write_json(&dir.join("truth.json"), &truth)?;
    Ok(Status::Ok)
}

// --------------------------------------------------------------------- fit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub method: Method,
    pub weight: WeightSpec,
    /// Fixed `λ`; when absent `λ = λ₀ sqrt(ln d / n)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub lambda0: f64,
    pub solver: SolverSettings,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::WeightedDre,
            weight: WeightSpec::default(),
            lambda: None,
            lambda0: 5.0,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaEntry {
    pub t: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub method: Method,
    pub m: usize,
    pub d: usize,
    pub lambda: f64,
    /// Nonzero coordinates of `θ̂` only.
    pub theta_hat: Vec<ThetaEntry>,
    pub support: Vec<usize>,
    pub objective_final: f64,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<AssumptionReport>,
}

impl FitReport {
    fn dense_theta(&self) -> Result<ParamVector<f64>> {
        let mut theta = Array1::zeros(self.d);
        for e in &self.theta_hat {
            if e.t >= self.d {
                bail!("theta entry {} out of range for d = {}", e.t, self.d);
            }
            theta[e.t] = e.value;
        }
        Ok(ParamVector::new(theta))
    }
}

pub struct FitArgs {
    pub common: Common,
    pub reference: PathBuf,
    pub target: PathBuf,
    pub method: Option<Method>,
    pub lambda: Option<f64>,
    /// Audit the Fisher information at the fitted `θ̂`.
    pub diagnostics: bool,
}

/// Sample size for the `λ` schedule: the smaller per-side inlier count, or
/// the smaller row count when labels are absent.
fn schedule_n(p: &LabeledDataset, q: &LabeledDataset) -> usize {
    let side = |ds: &LabeledDataset| if ds.has_labels() { ds.n_inlier() } else { ds.len() };
    side(p).min(side(q))
}

pub fn fit_cmd(args: &FitArgs) -> Result<Status> {
    let c = &args.common;
    let value = c.load(defaults(&FitConfig::default()), |v| {
        if let Some(m) = args.method {
            set_path(v, "method", defaults(&m))?;
        }
        if let Some(l) = args.lambda {
            set_path(v, "lambda", l.into())?;
        }
        Ok(())
    })?;
    let cfg: FitConfig = finish(value, "fit")?;
    let (p, q) = read_pair(&args.reference, &args.target)?;
    let map = FeatureMap::new(p.dim())?;
    let d = map.dim();
    let spec = objective_spec(cfg.method, &cfg.weight, map.clone())?;
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => lambda_schedule(cfg.lambda0, d as f64, schedule_n(&p, &q))?,
    };
    let features = PrecomputedFeatures::new(&spec, p.samples.view(), q.samples.view())?;
    let res = fit(&spec, &features, &cfg.solver.with_lambda(lambda))?;
    let support = res.theta_hat.support();
    let diagnostics = if args.diagnostics && !support.is_empty() {
        Some(assumption_audit(&spec, &features, &res.theta_hat, &support)?)
    } else {
        None
    };
    let theta = res.theta_hat.values();
    let report = FitReport {
        method: cfg.method,
        m: p.dim(),
        d,
        lambda,
        theta_hat: support
            .iter()
            .map(|&t| {
                let (i, j) = map.pair(t);
                ThetaEntry { t, i, j, value: theta[t] }
            })
            .collect(),
        support,
        objective_final: res.objective(),
        loss: res.loss,
        iterations: res.iterations,
        converged: res.converged,
        kkt_residual: res.kkt_residual,
        diagnostics,
    };
    emit_json(c.output.as_deref(), "fit.json", &report)?;
    Ok(if report.converged { Status::Ok } else { Status::NotConverged })
}

// -------------------------------------------------------------- experiment

pub struct ExperimentArgs {
    pub common: Common,
    pub scenario: Option<Scenario>,
    pub threads: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub full_scale: bool,
    pub round_contamination: bool,
    pub quiet: bool,
}

/// Accepts a plain experiment config or a previously written resolved config.
fn unwrap_resolved(mut value: Value) -> Value {
    if let Some(obj) = value.as_object_mut() {
        if obj.contains_key("config") && obj.contains_key("weights") {
            return obj.remove("config").expect("checked above");
        }
    }
    value
}

pub fn experiment(args: &ExperimentArgs) -> Result<Status> {
    let c = &args.common;
    let base = match args.scenario.unwrap_or(Scenario::Robustness) {
        Scenario::Robustness => ExperimentConfig::robustness(),
        Scenario::Unboundedness => ExperimentConfig::unboundedness(),
    };
    let mut value = match &c.config {
        Some(path) => unwrap_resolved(read_json(path)?),
        None => defaults(&base),
    };
    if c.config.is_some() {
        if let Some(s) = args.scenario {
            set_path(&mut value, "scenario", defaults(&s))?;
        }
    }
    if let Some(seed) = c.seed {
        set_path(&mut value, "master_seed", seed.into())?;
    }
    if let Some(methods) = &args.methods {
        set_path(&mut value, "methods", defaults(methods))?;
    }
    if args.full_scale {
        set_path(&mut value, "dims", serde_json::json!([50, 100, 200]))?;
        set_path(&mut value, "repetitions", 200.into())?;
    }
    if args.round_contamination {
        set_path(&mut value, "rounding", defaults(&Rounding::Round))?;
    }
    apply_overrides(&mut value, &c.sets)?;
    let cfg: ExperimentConfig = finish(value, "experiment")?;
    cfg.validate()?;

    let dir = c.output.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    let resolved: ResolvedConfig = cfg.resolved();
    write_json(&dir.join("resolved_config.json"), &resolved)?;
    let grid = run_grid(&cfg, args.threads)?;
    let results = dir.join("results.csv");
    let file = fs::File::create(&results).with_context(|| format!("writing {}", results.display()))?;
    grid.write_csv(std::io::BufWriter::new(file))?;
    if !args.quiet {
        for cell in &grid.cells {
            eprintln!(
                "{} {} m={} n*={} eps={}: success {:.2}, median l2 {:.4}, converged {}/{}",
                cell.scenario,
                cell.method.as_str(),
                cell.m,
                cell.n_star,
                cell.eps,
                cell.success_rate,
                cell.median_l2,
                cell.n_converged,
                cell.repetitions
            );
        }
    }
    for f in &grid.failures {
        eprintln!("failed {} {}: {}", f.key.method.as_str(), f.key.data.describe(), f.message);
    }
    Ok(if grid.is_partial() { Status::Partial } else { Status::Ok })
}

// ---------------------------------------------------------------- diagnose

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    pub method: Method,
    pub weight: WeightSpec,
    /// Half-width of the box `Θ = [-r, r]^d` used by the leverage maxima.
    pub box_radius: f64,
    /// Which packing of `θ*` to read from a truth file.
    pub theta_convention: ThetaConvention,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            method: Method::WeightedDre,
            weight: WeightSpec::default(),
            box_radius: 1.0,
            theta_convention: ThetaConvention::SumSplit,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub method: Method,
    pub m: usize,
    pub d: usize,
    pub theta_source: String,
    pub support: Vec<usize>,
    pub assumption: Option<AssumptionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumption_skipped: Option<String>,
    pub leverage: Option<LeverageReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leverage_skipped: Option<String>,
}

pub struct DiagnoseArgs {
    pub common: Common,
    pub reference: PathBuf,
    pub target: PathBuf,
    /// A fit report or a truth file.
    pub theta: Option<PathBuf>,
}

fn load_theta(path: &Path, d: usize, convention: ThetaConvention) -> Result<(ParamVector<f64>, Vec<usize>)> {
    let value = read_json(path)?;
    let (theta, support) = if value.get("theta_hat").is_some() {
        let report: FitReport =
            serde_json::from_value(value).with_context(|| format!("reading fit report {}", path.display()))?;
        (report.dense_theta()?, report.support)
    } else if value.get("theta_star").is_some() {
        let truth: Truth =
            serde_json::from_value(value).with_context(|| format!("reading truth file {}", path.display()))?;
        let v = match convention {
            ThetaConvention::Direct => truth.theta_star.direct,
            ThetaConvention::SumSplit => truth.theta_star.sum_split,
        };
        (ParamVector::new(Array1::from(v)), truth.support.iter().map(|e| e.t).collect())
    } else {
        bail!("{} is neither a fit report nor a truth file", path.display());
    };
    if theta.len() != d {
        bail!("{} holds a parameter of length {}, data imply d = {d}", path.display(), theta.len());
    }
    if let Some(&t) = support.iter().find(|&&t| t >= d) {
        bail!("{}: support index {t} out of range for d = {d}", path.display());
    }
    Ok((theta, support))
}

/// Reports violated assumptions rather than failing on them.
pub fn diagnose(args: &DiagnoseArgs) -> Result<Status> {
    let c = &args.common;
    let value = c.load(defaults(&DiagnoseConfig::default()), |_| Ok(()))?;
    let cfg: DiagnoseConfig = finish(value, "diagnose")?;
    if !(cfg.box_radius >= 0.0 && cfg.box_radius.is_finite()) {
        bail!("box_radius must be finite and non-negative, got {}", cfg.box_radius);
    }
    let (p, q) = read_pair(&args.reference, &args.target)?;
    let map = FeatureMap::new(p.dim())?;
    let d = map.dim();
    let (theta, support, source) = match &args.theta {
        Some(path) => {
            let (t, s) = load_theta(path, d, cfg.theta_convention)?;
            (t, s, path.display().to_string())
        }
        None => (ParamVector::zeros(d), Vec::new(), "zero".to_string()),
    };
    let spec = objective_spec(cfg.method, &cfg.weight, map.clone())?;
    let features = PrecomputedFeatures::new(&spec, p.samples.view(), q.samples.view())?;

    let (assumption, assumption_skipped) = if support.is_empty() {
        (None, Some("empty support: no active block to audit".to_string()))
    } else if d > spec.hessian_limit() {
        (None, Some(format!("d = {d} exceeds the Hessian limit {}", spec.hessian_limit())))
    } else {
        (Some(assumption_audit(&spec, &features, &theta, &support)?), None)
    };

    let (leverage, leverage_skipped) = if !p.has_labels() || !q.has_labels() {
        (None, Some("inlier/outlier labels are absent".to_string()))
    } else {
        let weight = spec.weight();
        let theta_box = ThetaBox::uniform(d, -cfg.box_radius, cfg.box_radius)?;
        (Some(leverage_stats(&p, &q, weight, &map, &theta_box, &support)?), None)
    };

    let report = DiagnoseReport {
        method: cfg.method,
        m: p.dim(),
        d,
        theta_source: source,
        support,
        assumption,
        assumption_skipped,
        leverage,
        leverage_skipped,
    };
    emit_json(c.output.as_deref(), "diagnose.json", &report)?;
    Ok(Status::Ok)
}
