//! Replicated experiments: size and tail of the supremum over the indicator
//! class, the chaining bounds for each `(model, n)`, contraction checks, and
//! log-log rate fits.
//!
//! Replicate `r` of group `(model i, size j)` always draws from the stream
//! `StreamKey::new(master_seed, i, j, r)`, and per-replicate results are
//! collected in replicate order, so output never depends on the worker count.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaining::{
    polynomial_rate_bound, rate_exponent, AccuracyPolicy, ConstantsPolicy, DepthTable,
    WeightPolicy, MAX_DEPTH, MIN_DYADIC_DEPTH,
};
use crate::empirical::sup_deviation_in_place;
use crate::error::{Error, Result};
use crate::gaussmodel::{
    build_covariance, CovarianceKind, CovarianceMatrix, CovarianceSpec, DeltaMode, MAX_N,
};
use crate::hermite::{project_indicator, HermiteCoefficients, MAX_DEGREE};
use crate::normal;
use crate::rng::StreamKey;

pub const CSV_HEADER: &str =
    "model,n,delta_n,mean_sup,stderr,lambda,emp_tail,tail_bound,size_bound,refined_bound,seed";

/// Default memory budget for one experiment.
pub const DEFAULT_MEMORY_CAP: u64 = 2 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default = "unit_sd")]
    pub s: f64,
    #[serde(flatten)]
    pub kind: CovarianceKind,
}

fn unit_sd() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, s: f64, kind: CovarianceKind) -> Self {
        Self {
            name: name.into(),
            s,
            kind,
        }
    }

    pub fn spec(&self, n: usize) -> CovarianceSpec {
        CovarianceSpec::new(n, self.s, self.kind.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthPolicy {
    /// The dyadic depth minimizing the refined bound, per group.
    #[default]
    Auto,
    Fixed(u32),
}

impl DepthPolicy {
    fn fixed(self) -> Option<u32> {
        match self {
            DepthPolicy::Auto => None,
            DepthPolicy::Fixed(m) => Some(m),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundOptions {
    pub depth: DepthPolicy,
    pub weights: WeightPolicy,
    pub accuracy: AccuracyPolicy,
    /// Polynomial order for the rate exponent `2p/(2p+3)`.
    pub p: u32,
    pub delta_mode: DeltaMode,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            depth: DepthPolicy::Auto,
            weights: WeightPolicy::Default,
            accuracy: AccuracyPolicy::Exact,
            p: 6,
            delta_mode: DeltaMode::Absolute,
        }
    }
}

impl BoundOptions {
    pub fn constants_policy(&self) -> ConstantsPolicy {
        ConstantsPolicy {
            weights: self.weights,
            accuracy: self.accuracy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub models: Vec<ModelSpec>,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub master_seed: u64,
    pub lambda_grid: Vec<f64>,
    pub bound: BoundOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_memory_bytes: Option<u64>,
}

impl Default for ExperimentConfig {
    /// iid, AR(1) with ρ = 0.5 and equicorrelated with ρ = 0.5 at
    /// `n = 2^6 … 2^13`, 500 replicates.
    fn default() -> Self {
        Self {
            models: vec![
                ModelSpec::new("iid", 1.0, CovarianceKind::Iid),
                ModelSpec::new("ar1", 1.0, CovarianceKind::Ar1 { rho: 0.5 }),
                ModelSpec::new(
                    "equicorrelated",
                    1.0,
                    CovarianceKind::Equicorrelated { rho: 0.5 },
                ),
            ],
            n_grid: (6..=13).map(|k| 1usize << k).collect(),
            replicates: 500,
            master_seed: 20_240_601,
            lambda_grid: vec![0.05, 0.1, 0.2, 0.3, 0.5],
            bound: BoundOptions::default(),
            max_memory_bytes: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let field = e.to_string();
            Error::config("<document>", field)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks every invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        let mut names = HashSet::new();
        for (i, m) in self.models.iter().enumerate() {
            if m.name.is_empty() || m.name.contains([',', '\n', '"']) {
                return Err(Error::config(
                    format!("models[{i}].name"),
                    "must be non-empty without commas, quotes or newlines",
                ));
            }
            if !names.insert(&m.name) {
                return Err(Error::config(
                    format!("models[{i}].name"),
                    format!("duplicate name {:?}", m.name),
                ));
            }
            if !(m.s.is_finite() && m.s > 0.0) {
                return Err(Error::config(
                    format!("models[{i}].s"),
                    format!("must be positive, got {}", m.s),
                ));
            }
            if let Err((field, msg)) = m.kind.validate() {
                return Err(Error::config(format!("models[{i}].{field}"), msg));
            }
        }
        if self.n_grid.is_empty() {
            return Err(Error::config(
                "n_grid",
                "at least one sample size is required",
            ));
        }
        for (j, &n) in self.n_grid.iter().enumerate() {
            if n == 0 {
                return Err(Error::config(
                    format!("n_grid[{j}]"),
                    "sample sizes must be positive",
                ));
            }
            if j > 0 && n <= self.n_grid[j - 1] {
                return Err(Error::config(
                    format!("n_grid[{j}]"),
                    "sample sizes must be strictly increasing",
                ));
            }
        }
        if self.replicates < 2 {
            return Err(Error::config(
                "replicates",
                format!("need at least 2, got {}", self.replicates),
            ));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::config(
                "lambda_grid",
                "at least one threshold is required",
            ));
        }
        for (l, &lambda) in self.lambda_grid.iter().enumerate() {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(Error::config(
                    format!("lambda_grid[{l}]"),
                    format!("must be positive, got {lambda}"),
                ));
            }
        }
        if self.bound.p == 0 {
            return Err(Error::config(
                "bound.p",
                "polynomial order must be at least 1",
            ));
        }
        if let DepthPolicy::Fixed(m) = self.bound.depth {
            if !(MIN_DYADIC_DEPTH..=MAX_DEPTH).contains(&m) {
                return Err(Error::config(
                    "bound.depth",
                    format!("fixed depth must be in {MIN_DYADIC_DEPTH}..={MAX_DEPTH}, got {m}"),
                ));
            }
        }
        if self.max_memory_bytes == Some(0) {
            return Err(Error::config("max_memory_bytes", "must be positive"));
        }
        Ok(())
    }

    /// Bytes needed: dense factors (`n(n+1)/2` doubles, for non-structured
    /// kinds), one sup per replicate, and a path buffer per worker.
    pub fn memory_estimate(&self, workers: usize) -> u64 {
        let r = self.replicates as u64;
        let mut total = 0u64;
        for m in &self.models {
            let dense = !matches!(
                m.kind,
                CovarianceKind::Iid
                    | CovarianceKind::Ar1 { .. }
                    | CovarianceKind::Equicorrelated { .. }
            );
            for &n in &self.n_grid {
                let n = n as u64;
                let factor = if dense {
                    4 * n * (n + 1) + 8 * n * n
                } else {
                    16 * n
                };
                total = total.max(factor + 8 * r + 16 * n * workers.max(1) as u64);
            }
        }
        total
    }

    /// Refuses configurations beyond the size or memory caps.
    pub fn check_resources(&self, workers: usize) -> Result<()> {
        if let Some((j, &n)) = self.n_grid.iter().enumerate().find(|(_, &n)| n > MAX_N) {
            return Err(Error::ResourceLimit(format!(
                "n_grid[{j}] = {n} exceeds the supported maximum {MAX_N}; drop sizes above {MAX_N}"
            )));
        }
        let cap = self.max_memory_bytes.unwrap_or(DEFAULT_MEMORY_CAP);
        let need = self.memory_estimate(workers);
        if need > cap {
            return Err(Error::ResourceLimit(format!(
                "estimated memory {need} bytes exceeds the cap of {cap} bytes; reduce the largest n for \
                 non-structured models, the replicate count, or the worker count"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub lambda: f64,
    pub emp_tail: f64,
    /// Binomial standard error `√(p(1 − p)/R)`.
    pub stderr: f64,
    pub tail_bound: f64,
}

/// Results for one `(model, n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub model: String,
    pub n: usize,
    pub delta_n: f64,
    pub mean_sup: f64,
    pub stderr: f64,
    pub tails: Vec<TailPoint>,
    /// Chaining size bound of the net used for `refined_bound`.
    pub size_bound: f64,
    pub refined_bound: f64,
    pub depth: u32,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub groups: Vec<GroupResult>,
}

impl ExperimentResult {
    pub fn groups_for<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a GroupResult> + 'a {
        self.groups.iter().filter(move |g| g.model == model)
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))
}

/// Builds every covariance model before any sampling so that configuration
/// problems surface first.
fn prepare_models(config: &ExperimentConfig) -> Result<Vec<Vec<CovarianceMatrix>>> {
    config
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            config
                .n_grid
                .iter()
                .map(|&n| {
                    let cov = build_covariance(&m.spec(n)).map_err(|e| match e {
                        Error::Io { .. } | Error::ResourceLimit(_) => e,
                        other => {
                            Error::config(format!("models[{i}]"), format!("at n = {n}: {other}"))
                        }
                    })?;
                    cov.bound_delta(config.bound.delta_mode)
                        .map_err(|e| Error::config(format!("models[{i}]"), e.to_string()))?;
                    Ok(cov)
                })
                .collect()
        })
        .collect()
}

/// Sup-deviations of `R` replicates, in replicate order.
fn replicate_sups(
    pool: &rayon::ThreadPool,
    cov: &CovarianceMatrix,
    key: StreamKey,
    replicates: usize,
) -> Result<Vec<f64>> {
    let s = cov.s();
    pool.install(|| {
        (0..replicates as u64)
            .into_par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(z, x), r| {
                    let mut rng = key.with_replicate(r).rng();
                    cov.sample_into(&mut rng, z, x)?;
                    Ok(sup_deviation_in_place(x, s))
                },
            )
            .collect()
    })
}

/// Runs every `(model, n)` group: mean sup-deviation with its standard error,
/// empirical tails with binomial errors, and the chaining bounds.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<ExperimentResult> {
    config.validate()?;
    config.check_resources(workers)?;
    let models = prepare_models(config)?;
    let table = DepthTable::cached(config.bound.constants_policy())?;
    let pool = build_pool(workers)?;
    let fixed = config.bound.depth.fixed();
    let r = config.replicates as f64;

    let mut groups = Vec::with_capacity(config.models.len() * config.n_grid.len());
    for (i, (spec, covs)) in config.models.iter().zip(&models).enumerate() {
        for (j, cov) in covs.iter().enumerate() {
            let started = Instant::now();
            let n = cov.n();
            let key = StreamKey::new(config.master_seed, i as u32, j as u32, 0);
            let sups = replicate_sups(&pool, cov, key, config.replicates)?;

            let mean = sups.iter().sum::<f64>() / r;
            let var = sups.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
            let delta_n = cov.bound_delta(config.bound.delta_mode)?;
            let refined = match fixed {
                Some(m) => table.refined(delta_n, n, (-(m as f64)).exp2())?,
                None => table.best_refined(delta_n, n)?,
            };
            let tails = config
                .lambda_grid
                .iter()
                .map(|&lambda| {
                    let hits = sups.iter().filter(|&&v| v >= lambda).count() as f64;
                    let p = hits / r;
                    Ok(TailPoint {
                        lambda,
                        emp_tail: p,
                        stderr: (p * (1.0 - p) / r).sqrt(),
                        tail_bound: table.class_tail(delta_n, n, lambda, fixed)?.value,
                    })
                })
                .collect::<Result<Vec<_>>>()?;

            let group = GroupResult {
                model: spec.name.clone(),
                n,
                delta_n,
                mean_sup: mean,
                stderr: (var / r).sqrt(),
                tails,
                size_bound: refined.size_part,
                refined_bound: refined.value,
                depth: refined.depth,
                delta: refined.delta,
                c1: refined.constants.c1,
                c2: refined.constants.c2,
                wall_time: started.elapsed(),
            };
            log::info!(
                "{} n={} mean={:.5} ± {:.5} ({:.2?})",
                group.model,
                n,
                group.mean_sup,
                group.stderr,
                group.wall_time
            );
            groups.push(group);
        }
    }
    Ok(ExperimentResult {
        config: config.clone(),
        groups,
    })
}

/// `estimate_size` and `empirical_tail` are one pass over the same replicates.
pub fn estimate_size(config: &ExperimentConfig, workers: usize) -> Result<ExperimentResult> {
    run_experiment(config, workers)
}

pub fn render_csv(result: &ExperimentResult) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    let seed = result.config.master_seed;
    for g in &result.groups {
        for t in &g.tails {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                g.model,
                g.n,
                g.delta_n,
                g.mean_sup,
                g.stderr,
                t.lambda,
                t.emp_tail,
                t.tail_bound,
                g.size_bound,
                g.refined_bound,
                seed
            );
        }
    }
    out
}

pub fn render_json(result: &ExperimentResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(result)? + "\n")
}

/// gnuplot data: one block per model, columns `log_n log_mean log_bound`
/// (natural logs, bound = refined bound).
pub fn render_plot_data(result: &ExperimentResult) -> String {
    let mut out = String::new();
    for (b, m) in result.config.models.iter().enumerate() {
        if b > 0 {
            out.push_str("\n\n");
        }
        let _ = writeln!(out, "# model {}\n# log_n log_mean log_bound", m.name);
        for g in result.groups_for(&m.name) {
            let _ = writeln!(
                out,
                "{} {} {}",
                (g.n as f64).ln(),
                g.mean_sup.ln(),
                g.refined_bound.ln()
            );
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares `y = slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("need at least two paired points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("fit points must be finite"));
    }
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("all x values coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Log-log fit; every `y` must be positive and at least four points are needed.
pub fn fit_log_log(n: &[f64], y: &[f64]) -> Result<LinearFit> {
    if n.len() < 4 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 4 points, got {}",
            n.len()
        )));
    }
    if n.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("rate fit needs positive sizes and values"));
    }
    let lx: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: String,
    pub points: usize,
    /// Monte Carlo mean sup-deviation.
    pub size: LinearFit,
    /// The refined bound at its optimized resolution.
    pub refined_bound: LinearFit,
    /// `min_x x^{3/2} a + c_p x^{−p}` with `a = √Δ_n / n`.
    pub rate_curve: LinearFit,
    pub p: u32,
    pub exponent: f64,
}

/// Per-model log-log fits of the mean size and of the bound curves against `n`.
pub fn fit_rate(result: &ExperimentResult) -> Result<Vec<RateFit>> {
    let p = result.config.bound.p;
    result
        .config
        .models
        .iter()
        .map(|m| {
            let groups: Vec<&GroupResult> = result.groups_for(&m.name).collect();
            let n: Vec<f64> = groups.iter().map(|g| g.n as f64).collect();
            let mean: Vec<f64> = groups.iter().map(|g| g.mean_sup).collect();
            let refined: Vec<f64> = groups.iter().map(|g| g.refined_bound).collect();
            let curve: Vec<f64> = groups
                .iter()
                .map(|g| polynomial_rate_bound(g.delta_n.sqrt() / g.n as f64, p))
                .collect();
            let fit = |y: &[f64]| {
                fit_log_log(&n, y).map_err(|e| Error::invalid(format!("model {}: {e}", m.name)))
            };
            Ok(RateFit {
                model: m.name.clone(),
                points: groups.len(),
                size: fit(&mean)?,
                refined_bound: fit(&refined)?,
                rate_curve: fit(&curve)?,
                p,
                exponent: rate_exponent(p),
            })
        })
        .collect()
}

/// Writes `name → contents` into `dir` only after every file has been staged,
/// so a failure leaves no partial output behind.
pub fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        let res = std::fs::File::create(&tmp).and_then(|mut f| {
            f.write_all(contents.as_bytes())?;
            f.sync_all()
        });
        if let Err(e) = res {
            for (t, _) in &staged {
                let _ = std::fs::remove_file(t);
            }
            let _ = std::fs::remove_file(&tmp);
            return Err(Error::io(tmp, e));
        }
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, target) in staged {
        std::fs::rename(&tmp, &target).map_err(|e| Error::io(target, e))?;
    }
    Ok(())
}

/// Piecewise-constant `f(t) = values[j]` where `j = #{breakpoints < t}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != breakpoints.len() + 1 {
            return Err(Error::invalid(
                "a step function needs one more value than breakpoints",
            ));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("step function data must be finite"));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("breakpoints must be strictly increasing"));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    /// `1_{t ≤ α} − c`
    pub fn indicator(alpha: f64, offset: f64) -> Result<Self> {
        Self::new(vec![alpha], vec![1.0 - offset, -offset])
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        self.values[self.breakpoints.partition_point(|&b| b < t)]
    }

    fn cells(&self, s: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let edge = move |j: usize| match j {
            0 => 0.0,
            j if j > self.breakpoints.len() => 1.0,
            j => normal::cdf(self.breakpoints[j - 1] / s),
        };
        self.values
            .iter()
            .enumerate()
            .map(move |(j, &v)| (v, edge(j + 1) - edge(j)))
    }

    pub fn mean(&self, s: f64) -> f64 {
        self.cells(s).map(|(v, p)| v * p).sum()
    }

    pub fn second_moment(&self, s: f64) -> f64 {
        self.cells(s).map(|(v, p)| v * v * p).sum()
    }

    pub fn difference(&self, other: &Self) -> Self {
        let mut breakpoints: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(&other.breakpoints)
            .copied()
            .collect();
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        let mut values = Vec::with_capacity(breakpoints.len() + 1);
        // value on each cell, read at its right end (cells are left-open)
        for &b in &breakpoints {
            values.push(self.evaluate(b) - other.evaluate(b));
        }
        values.push(self.evaluate(f64::INFINITY) - other.evaluate(f64::INFINITY));
        Self {
            breakpoints,
            values,
        }
    }

    /// Hermite expansion up to `truncation`, built from exact indicator expansions.
    pub fn hermite(&self, s: f64, truncation: usize) -> Result<HermiteCoefficients> {
        let mut c = vec![0.0; truncation + 1];
        c[0] = *self.values.last().expect("nonempty");
        for (j, &b) in self.breakpoints.iter().enumerate() {
            let jump = self.values[j] - self.values[j + 1];
            let ind = project_indicator(b, s, truncation)?;
            for (ci, v) in c.iter_mut().zip(&ind.c) {
                *ci += jump * v;
            }
        }
        HermiteCoefficients::new(s, c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Hermite(HermiteCoefficients),
    Step(StepFunction),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionConfig {
    pub spec: CovarianceSpec,
    pub replicates: usize,
    pub master_seed: u64,
    /// Largest relative `L²` residual accepted when a step function has to
    /// be expanded in the Hermite basis.
    pub projection_tolerance: f64,
    pub delta_mode: DeltaMode,
}

impl ContractionConfig {
    pub fn new(spec: CovarianceSpec, replicates: usize, master_seed: u64) -> Self {
        Self {
            spec,
            replicates,
            master_seed,
            projection_tolerance: 1e-6,
            delta_mode: DeltaMode::Absolute,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub n: usize,
    pub replicates: usize,
    pub delta_n: f64,
    /// `‖f − g‖²` of the centered difference.
    pub norm_sq: f64,
    /// `(Δ_n / n²) ‖f − g‖²`
    pub bound: f64,
    /// Monte Carlo `E[P̂_n(f) − P̂_n(g)]²`.
    pub mc: f64,
    pub stderr: f64,
    pub ratio: Option<f64>,
    /// `mc ≤ bound + 3·stderr`
    pub passed: bool,
}

impl ContractionReport {
    /// `|mc − bound| ≤ z·stderr`, for cases where the bound is an equality.
    pub fn matches_bound(&self, z: f64) -> bool {
        (self.mc - self.bound).abs() <= z * self.stderr + 1e-15
    }
}

enum Difference {
    Hermite(HermiteCoefficients),
    Step(StepFunction),
}

impl Difference {
    /// Mean and variance under `γ_s`.
    fn moments(&self, s: f64) -> (f64, f64) {
        match self {
            Difference::Hermite(h) => (h.mean(), h.c[1..].iter().map(|v| v * v).sum()),
            Difference::Step(st) => {
                let mean = st.mean(s);
                (mean, (st.second_moment(s) - mean * mean).max(0.0))
            }
        }
    }
}

fn step_to_hermite(step: &StepFunction, s: f64, tolerance: f64) -> Result<HermiteCoefficients> {
    let h = step.hermite(s, MAX_DEGREE)?;
    let mean = step.mean(s);
    let var = step.second_moment(s) - mean * mean;
    let captured: f64 = h.c[1..].iter().map(|v| v * v).sum();
    let residual = (var - captured).max(0.0);
    if var > 0.0 && residual > tolerance * var {
        return Err(Error::Numerical(format!(
            "Hermite projection of the step function leaves relative L² residual {:.3e} \
             (tolerance {tolerance:.1e}); the bound would concern the truncation, not the function",
            residual / var
        )));
    }
    Ok(h)
}

/// Monte Carlo check of `E[P̂_n(f) − P̂_n(g)]² ≤ (Δ_n / n²) ‖f − g‖²`, with
/// `P̂_n(h) = (1/n) Σ (h(X_i) − E h)`.
pub fn verify_contraction(
    config: &ContractionConfig,
    f: &TestFunction,
    g: &TestFunction,
    workers: usize,
) -> Result<ContractionReport> {
    if config.replicates < 2 {
        return Err(Error::config("replicates", "need at least 2"));
    }
    let cov = build_covariance(&config.spec)?;
    let s = cov.s();
    let n = cov.n();
    let delta_n = cov.bound_delta(config.delta_mode)?;
    let check_s = |h: &HermiteCoefficients| {
        if h.s != s {
            Err(Error::invalid(format!(
                "expansion uses s = {} but the model has s = {s}",
                h.s
            )))
        } else {
            Ok(())
        }
    };
    let tol = config.projection_tolerance;
    let diff = match (f, g) {
        (TestFunction::Hermite(a), TestFunction::Hermite(b)) => {
            check_s(a)?;
            check_s(b)?;
            Difference::Hermite(a.difference(b)?)
        }
        (TestFunction::Step(a), TestFunction::Step(b)) => Difference::Step(a.difference(b)),
        (TestFunction::Hermite(a), TestFunction::Step(b)) => {
            check_s(a)?;
            Difference::Hermite(a.difference(&step_to_hermite(b, s, tol)?)?)
        }
        (TestFunction::Step(a), TestFunction::Hermite(b)) => {
            check_s(b)?;
            Difference::Hermite(step_to_hermite(a, s, tol)?.difference(b)?)
        }
    };
    let (mean, norm_sq) = diff.moments(s);
    let bound = delta_n / (n as f64 * n as f64) * norm_sq;

    let pool = build_pool(workers)?;
    let key = StreamKey::from_seed(config.master_seed);
    let squares: Vec<f64> = pool.install(|| {
        (0..config.replicates as u64)
            .into_par_iter()
            .map_init(
                || (Vec::new(), Vec::new(), Vec::new()),
                |(z, x, buf), r| {
                    let mut rng = key.with_replicate(r).rng();
                    cov.sample_into(&mut rng, z, x)?;
                    let total: f64 = match &diff {
                        Difference::Hermite(h) => {
                            x.iter().map(|&t| h.evaluate_with(t, buf) - mean).sum()
                        }
                        Difference::Step(st) => x.iter().map(|&t| st.evaluate(t) - mean).sum(),
                    };
                    let avg = total / n as f64;
                    Ok(avg * avg)
                },
            )
            .collect::<Result<_>>()
    })?;
    let r = squares.len() as f64;
    let mc = squares.iter().sum::<f64>() / r;
    let var = squares.iter().map(|v| (v - mc).powi(2)).sum::<f64>() / (r - 1.0);
    let stderr = (var / r).sqrt();
    Ok(ContractionReport {
        n,
        replicates: config.replicates,
        delta_n,
        norm_sq,
        bound,
        mc,
        stderr,
        ratio: (bound > 0.0).then(|| mc / bound),
        passed: mc <= bound + 3.0 * stderr + 1e-15,
    })
}
