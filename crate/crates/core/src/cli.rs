//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
//! 3 refused for resource reasons.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::chaining::{
    self, AccuracyPolicy, ChainingConstants, ConstantsPolicy, DepthTable, QuantileNet, WeightPolicy,
};
use crate::error::{Error, Result};
use crate::gaussmodel::{build_covariance, CovarianceKind, CovarianceSpec, DeltaMode};
use crate::hermite::{self, BivariateCovariance, HermiteDegree};
use crate::montecarlo::{self, ExperimentConfig, ExperimentResult, RateFit};
use crate::quadrature::QuadratureRule;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "hermchain",
    version,
    about = "Hermite identities, chaining bounds and Monte Carlo checks for empirical processes of Gaussian sequences"
)]
pub struct RunConfig {
    /// Increase log detail on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the Hermite generating function, orthonormality and cross-moment identities.
    HermiteCheck(HermiteCheckArgs),
    /// Print Δ_n, chaining constants and every bound for one model.
    Bound(BoundArgs),
    /// Run the Monte Carlo experiment and write CSV, JSON and plot data.
    Simulate(SimulateArgs),
    /// Fit log-log convergence rates from results (or from a fresh run).
    RateFit(RateFitArgs),
}

#[derive(Debug, Args)]
pub struct HermiteCheckArgs {
    /// Largest Hermite degree checked (at most 200).
    #[arg(long, default_value_t = 20)]
    pub max_degree: usize,
    /// Every residual must be strictly below this.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Directory for hermite_check.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Iid,
    Ar1,
    Equicorrelated,
    PowerDecay,
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DeltaModeArg {
    Signed,
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Default,
    Optimized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AccuracyArg {
    Exact,
    Majorant,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Covariance model.
    #[arg(long, value_enum, default_value_t = KindArg::Iid)]
    pub kind: KindArg,
    /// Correlation parameter for ar1 and equicorrelated.
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Decay exponent for power_decay.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// CSV matrix for explicit.
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Path length.
    #[arg(long)]
    pub n: usize,
    /// Marginal standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    /// Net depth (at least 2); by default the depth minimizing the refined bound.
    #[arg(long)]
    pub depth: Option<u32>,
    /// Chaining weights.
    #[arg(long, value_enum, default_value_t = WeightsArg::Default)]
    pub weights: WeightsArg,
    /// Per-level accuracies: exact, or the 2^{-k/2} majorant.
    #[arg(long, value_enum, default_value_t = AccuracyArg::Exact)]
    pub accuracy: AccuracyArg,
    /// Tail thresholds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.5")]
    pub lambda: Vec<f64>,
    /// Polynomial order for the rate exponent.
    #[arg(long, default_value_t = 6)]
    pub p: u32,
    /// Δ_n as Σ d_ij (signed) or Σ |d_ij| (absolute).
    #[arg(long, value_enum, default_value_t = DeltaModeArg::Signed)]
    pub delta_mode: DeltaModeArg,
    /// Use this Δ_n instead of the model's.
    #[arg(long)]
    pub delta_n: Option<f64>,
    /// Use this C1 instead of the net's (requires --c2).
    #[arg(long, requires = "c2")]
    pub c1: Option<f64>,
    /// Use this C2 instead of the net's (requires --c1).
    #[arg(long, requires = "c1")]
    pub c2: Option<f64>,
    /// Directory for bound.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment config (JSON); the built-in default suite if omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RateFitArgs {
    /// results.json from a previous simulate run.
    #[arg(long, conflicts_with_all = ["config", "seed"])]
    pub results: Option<PathBuf>,
    /// Experiment config to run when --results is not given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Directory for summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(cfg) => cfg,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cfg.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(&cfg.command, out) {
        Ok(passed) => {
            if passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ResourceLimit(_) => EXIT_RESOURCE,
        Error::Numerical(_) => EXIT_CHECK_FAILED,
        _ => EXIT_USAGE,
    }
}

fn execute(cmd: &Command, out: &mut dyn Write) -> Result<bool> {
    match cmd {
        Command::HermiteCheck(a) => cmd_hermite_check(a, out),
        Command::Bound(a) => cmd_bound(a, out).map(|_| true),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::RateFit(a) => cmd_rate_fit(a, out).map(|_| true),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub identity: &'static str,
    pub k: usize,
    pub l: usize,
    /// `s` for orthonormality, `ρ` for cross moments, `λ` for the generating function.
    pub param: f64,
    /// `t` for the generating function.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub value: f64,
    pub expected: f64,
    pub residual: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub max_degree: usize,
    pub tolerance: f64,
    pub checks: Vec<IdentityCheck>,
    /// Largest residual per identity.
    pub max_residual: Vec<(&'static str, f64)>,
    pub passed: bool,
}

impl IdentityReport {
    pub fn failures(&self) -> impl Iterator<Item = &IdentityCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn max_residual_of(&self, identity: &str) -> Option<f64> {
        self.max_residual
            .iter()
            .find(|(name, _)| *name == identity)
            .map(|(_, v)| *v)
    }
}

const SCALES: [f64; 3] = [0.5, 1.0, 3.0];
const RHOS: [f64; 5] = [-0.9, -0.5, 0.0, 0.5, 0.9];
const GRID: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
const GENERATING_TRUNCATION: usize = 40;
const CROSS_MOMENT_MAX: usize = 5;

/// Orthonormality for `k, l ≤ max_degree` at `s ∈ {0.5, 1, 3}`; for
/// `max_degree ≥ 1` also the generating function on a 5×5 grid in
/// `[−1, 1]²` (degree 40) and cross moments by 2-D quadrature for
/// `k, l ≤ min(max_degree, 5)`. A check passes when its residual is strictly
/// below `tolerance`.
pub fn hermite_check(max_degree: usize, tolerance: f64) -> Result<IdentityReport> {
    let top = HermiteDegree::new(max_degree)?;
    if !(tolerance >= 0.0) {
        return Err(Error::invalid(format!(
            "tolerance must be non-negative, got {tolerance}"
        )));
    }
    let mut checks = Vec::new();
    let mut push = |identity, k, l, param, t, value: f64, expected: f64| {
        let residual = (value - expected).abs();
        checks.push(IdentityCheck {
            identity,
            k,
            l,
            param,
            t,
            value,
            expected,
            residual,
            passed: residual < tolerance,
        });
    };

    let rule = QuadratureRule::for_degree(2 * top.get())?;
    for s in SCALES {
        for k in 0..=top.get() {
            for l in 0..=top.get() {
                let (hk, hl) = (HermiteDegree::new(k)?, HermiteDegree::new(l)?);
                let v = hermite::inner_product_gamma(hk, hl, s, &rule)?;
                push(
                    "orthonormality",
                    k,
                    l,
                    s,
                    None,
                    v,
                    f64::from(u8::from(k == l)),
                );
            }
        }
    }

    if top.get() >= 1 {
        for lambda in GRID {
            for t in GRID {
                let v = hermite::generating_function_partial(lambda, t, GENERATING_TRUNCATION)?;
                let target = (lambda * t - lambda * lambda / 2.0).exp();
                push(
                    "generating_function",
                    GENERATING_TRUNCATION,
                    0,
                    lambda,
                    Some(t),
                    v,
                    target,
                );
            }
        }
        let rule = QuadratureRule::gauss_hermite(crate::quadrature::DEFAULT_ORDER)?;
        let kmax = top.get().min(CROSS_MOMENT_MAX);
        for rho in RHOS {
            let cov = BivariateCovariance::with_correlation(rho)?;
            for k in 0..=kmax {
                for l in 0..=kmax {
                    let (hk, hl) = (HermiteDegree::new(k)?, HermiteDegree::new(l)?);
                    let v = hermite::cross_moment_quadrature(hk, hl, cov, &rule)?;
                    let exact = hermite::cross_moment(hk, hl, rho)?;
                    push("cross_moment", k, l, rho, None, v, exact);
                }
            }
        }
    }

    let mut max_residual: Vec<(&'static str, f64)> = Vec::new();
    for c in &checks {
        match max_residual.iter_mut().find(|(n, _)| *n == c.identity) {
            Some((_, v)) => *v = v.max(c.residual),
            None => max_residual.push((c.identity, c.residual)),
        }
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(IdentityReport {
        max_degree,
        tolerance,
        checks,
        max_residual,
        passed,
    })
}

pub fn cmd_hermite_check(args: &HermiteCheckArgs, out: &mut dyn Write) -> Result<bool> {
    let report = hermite_check(args.max_degree, args.tolerance)?;
    let mut text = format!(
        "hermite-check: max degree {}, tolerance {:e}, {} checks\n",
        report.max_degree,
        report.tolerance,
        report.checks.len()
    );
    for (name, r) in &report.max_residual {
        text.push_str(&format!("  {name:<20} max residual {r:.3e}\n"));
    }
    let failures: Vec<&IdentityCheck> = report.failures().collect();
    for f in failures.iter().take(10) {
        text.push_str(&format!(
            "  FAIL {} (k={}, l={}, param={}{}) value {} expected {} residual {:.3e}\n",
            f.identity,
            f.k,
            f.l,
            f.param,
            f.t.map(|t| format!(", t={t}")).unwrap_or_default(),
            f.value,
            f.expected,
            f.residual
        ));
    }
    if failures.len() > 10 {
        text.push_str(&format!("  … {} more failures\n", failures.len() - 10));
    }
    text.push_str(if report.passed { "PASS\n" } else { "FAIL\n" });
    if let Some(dir) = &args.out {
        let json = serde_json::to_string_pretty(&report)? + "\n";
        montecarlo::write_outputs(dir, &[("hermite_check.json", json)])?;
    }
    emit(out, &text)?;
    Ok(report.passed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundTail {
    pub lambda: f64,
    /// Chaining tail bound for the net.
    pub net: f64,
    /// Tail bound for the whole class.
    pub class: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub model: String,
    pub n: usize,
    pub s: f64,
    pub delta_mode: DeltaMode,
    pub delta_n: f64,
    pub net: Option<chaining::NetExport>,
    pub constants: ChainingConstants,
    pub tails: Vec<BoundTail>,
    pub size_bound: f64,
    pub refined_bound: f64,
    pub refined_delta: f64,
    pub optimized_rate: Option<chaining::RateOptimum>,
    pub p: u32,
    pub exponent: f64,
}

fn bound_spec(a: &BoundArgs) -> Result<CovarianceSpec> {
    let need = |v: Option<f64>, flag: &str| {
        v.ok_or_else(|| Error::config(flag, format!("--{flag} is required for this kind")))
    };
    let kind = match a.kind {
        KindArg::Iid => CovarianceKind::Iid,
        KindArg::Ar1 => CovarianceKind::Ar1 {
            rho: need(a.rho, "rho")?,
        },
        KindArg::Equicorrelated => CovarianceKind::Equicorrelated {
            rho: need(a.rho, "rho")?,
        },
        KindArg::PowerDecay => CovarianceKind::PowerDecay {
            alpha: need(a.alpha, "alpha")?,
        },
        KindArg::Explicit => CovarianceKind::Explicit {
            path: a
                .path
                .clone()
                .ok_or_else(|| Error::config("path", "--path is required for explicit"))?,
        },
    };
    Ok(CovarianceSpec::new(a.n, a.s, kind))
}

pub fn bound_report(a: &BoundArgs) -> Result<BoundReport> {
    let spec = bound_spec(a)?;
    if let Err((field, msg)) = spec.kind.validate() {
        return Err(Error::config(field, msg));
    }
    let mode = match a.delta_mode {
        DeltaModeArg::Signed => DeltaMode::Signed,
        DeltaModeArg::Absolute => DeltaMode::Absolute,
    };
    let cov = build_covariance(&spec)?;
    let delta_n = match a.delta_n {
        Some(d) if !(d.is_finite() && d >= 0.0) => {
            return Err(Error::config(
                "delta-n",
                format!("must be non-negative, got {d}"),
            ))
        }
        Some(d) => d,
        None => cov.bound_delta(mode)?,
    };
    if let Some((i, l)) = a.lambda.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
        return Err(Error::config(
            format!("lambda[{i}]"),
            format!("must be positive, got {l}"),
        ));
    }
    if a.p == 0 {
        return Err(Error::config("p", "must be at least 1"));
    }
    if let Some(m) = a
        .depth
        .filter(|m| !(chaining::MIN_DYADIC_DEPTH..=chaining::MAX_DEPTH).contains(m))
    {
        return Err(Error::config(
            "depth",
            format!(
                "must be in {}..={}, got {m}",
                chaining::MIN_DYADIC_DEPTH,
                chaining::MAX_DEPTH
            ),
        ));
    }
    let policy = ConstantsPolicy {
        weights: match a.weights {
            WeightsArg::Default => WeightPolicy::Default,
            WeightsArg::Optimized => WeightPolicy::Optimized,
        },
        accuracy: match a.accuracy {
            AccuracyArg::Exact => AccuracyPolicy::Exact,
            AccuracyArg::Majorant => AccuracyPolicy::Majorant,
        },
    };
    let table = DepthTable::cached(policy)?;
    let n = a.n;
    let refined = match a.depth {
        Some(m) => {
            table
                .constants(m)
                .map_err(|e| Error::config("depth", e.to_string()))?;
            table.refined(delta_n, n, (-(m as f64)).exp2())?
        }
        None => table.best_refined(delta_n, n)?,
    };
    let depth = refined.depth;
    let net = QuantileNet::new(depth, a.s)?;
    let mut constants = refined.constants.clone();
    if let (Some(c1), Some(c2)) = (a.c1, a.c2) {
        if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(Error::config("c1", "C1 and C2 must be positive"));
        }
        constants.c1 = c1;
        constants.c2 = c2;
    }
    let overridden = a.c1.is_some();
    let tails = a
        .lambda
        .iter()
        .map(|&lambda| {
            let net_tail = chaining::tail_bound(&constants, delta_n, n, lambda)?;
            let class = if overridden {
                net_tail
            } else {
                table.class_tail(delta_n, n, lambda, a.depth)?.value
            };
            Ok(BoundTail {
                lambda,
                net: net_tail,
                class,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let size_bound = chaining::size_bound(&constants, delta_n, n)?;
    let refined_bound = size_bound + refined.additive;
    let scale = delta_n.sqrt() / n as f64;
    let optimized_rate = (scale > 0.0 && scale < 1.0)
        .then(|| chaining::optimized_rate(delta_n, n, a.p, policy))
        .transpose()?;
    Ok(BoundReport {
        model: spec.kind.to_string(),
        n,
        s: a.s,
        delta_mode: mode,
        delta_n,
        net: Some(net.export()),
        constants,
        tails,
        size_bound,
        refined_bound,
        refined_delta: refined.delta,
        optimized_rate,
        p: a.p,
        exponent: chaining::rate_exponent(a.p),
    })
}

pub fn cmd_bound(a: &BoundArgs, out: &mut dyn Write) -> Result<BoundReport> {
    let r = bound_report(a)?;
    let mut text = String::new();
    text.push_str(&format!(
        "model          {}  n = {}  s = {}\n",
        r.model, r.n, r.s
    ));
    text.push_str(&format!(
        "delta_n        {} ({:?})\n",
        r.delta_n, r.delta_mode
    ));
    if let Some(net) = &r.net {
        text.push_str(&format!(
            "net            depth {}  levels {}  pair counts {:?}\n",
            net.depth,
            net.depth + 1,
            net.pair_counts
        ));
    }
    text.push_str(&format!("C1             {}\n", r.constants.c1));
    text.push_str(&format!("C2             {}\n", r.constants.c2));
    for t in &r.tails {
        text.push_str(&format!(
            "tail_bound     lambda = {}  net {}  class {}\n",
            t.lambda, t.net, t.class
        ));
    }
    text.push_str(&format!("size_bound     {}\n", r.size_bound));
    text.push_str(&format!(
        "refined_bound  {} (delta = {})\n",
        r.refined_bound, r.refined_delta
    ));
    match &r.optimized_rate {
        Some(o) => text.push_str(&format!(
            "optimized_rate delta* = {}  g* = {}  refined at delta* = {}\n",
            o.delta_star, o.g_star, o.refined.value
        )),
        None => text.push_str("optimized_rate n/a (sqrt(delta_n)/n outside (0, 1))\n"),
    }
    text.push_str(&format!(
        "exponent       {} (p = {})\n",
        exponent_text(r.p),
        r.p
    ));
    if let Some(dir) = &a.out {
        let json = serde_json::to_string_pretty(&r)? + "\n";
        montecarlo::write_outputs(dir, &[("bound.json", json)])?;
    }
    emit(out, &text)?;
    Ok(r)
}

/// `2p/(2p+3)` as a reduced fraction.
fn exponent_text(p: u32) -> String {
    let (mut a, mut b) = (2 * p as u64, 2 * p as u64 + 3);
    let g = gcd(a, b);
    a /= g;
    b /= g;
    format!("{a}/{b}")
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    config.validate()?;
    Ok(config)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dominance {
    pub model: String,
    pub n: usize,
    pub lambda: Option<f64>,
    pub bound: &'static str,
    pub estimate: f64,
    pub slack: f64,
    pub limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub rate_fits: Vec<RateFit>,
    /// Every `(estimate − 2·stderr) > bound` found; empty when all bounds hold.
    pub dominance_violations: Vec<Dominance>,
}

/// Bound dominance with two standard errors of slack.
pub fn dominance_violations(result: &ExperimentResult) -> Vec<Dominance> {
    let mut v = Vec::new();
    for g in &result.groups {
        for (name, limit) in [
            ("size_bound", g.size_bound),
            ("refined_bound", g.refined_bound),
        ] {
            if g.mean_sup - 2.0 * g.stderr > limit {
                v.push(Dominance {
                    model: g.model.clone(),
                    n: g.n,
                    lambda: None,
                    bound: name,
                    estimate: g.mean_sup,
                    slack: 2.0 * g.stderr,
                    limit,
                });
            }
        }
        for t in &g.tails {
            if t.emp_tail - 2.0 * t.stderr > t.tail_bound {
                v.push(Dominance {
                    model: g.model.clone(),
                    n: g.n,
                    lambda: Some(t.lambda),
                    bound: "tail_bound",
                    estimate: t.emp_tail,
                    slack: 2.0 * t.stderr,
                    limit: t.tail_bound,
                });
            }
        }
    }
    v
}

pub fn summarize(result: &ExperimentResult) -> Result<Summary> {
    let rate_fits = if result.config.n_grid.len() >= 4 {
        montecarlo::fit_rate(result)?
    } else {
        Vec::new()
    };
    Ok(Summary {
        rate_fits,
        dominance_violations: dominance_violations(result),
    })
}

fn fits_text(summary: &Summary) -> String {
    let mut text = String::new();
    for f in &summary.rate_fits {
        text.push_str(&format!(
            "{:<16} size slope {:+.4} (r² {:.4})  refined-bound slope {:+.4}  rate-curve slope {:+.4}\n",
            f.model, f.size.slope, f.size.r_squared, f.refined_bound.slope, f.rate_curve.slope
        ));
    }
    text
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<bool> {
    let config = load_config(a.config.as_deref(), a.seed)?;
    let workers = a.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(Error::config("workers", "must be at least 1"));
    }
    config.check_resources(workers)?;
    let result = montecarlo::run_experiment(&config, workers)?;
    let summary = summarize(&result)?;
    montecarlo::write_outputs(
        &a.out,
        &[
            ("results.csv", montecarlo::render_csv(&result)),
            ("results.json", montecarlo::render_json(&result)?),
            ("plot.dat", montecarlo::render_plot_data(&result)),
            (
                "summary.json",
                serde_json::to_string_pretty(&summary)? + "\n",
            ),
        ],
    )?;
    let mut text = format!(
        "simulate: {} groups, {} replicates each, written to {}\n",
        result.groups.len(),
        config.replicates,
        a.out.display()
    );
    text.push_str(&fits_text(&summary));
    for d in &summary.dominance_violations {
        text.push_str(&format!(
            "  VIOLATION {} n={} lambda={:?} {}: estimate {} > {}\n",
            d.model, d.n, d.lambda, d.bound, d.estimate, d.limit
        ));
    }
    emit(out, &text)?;
    Ok(summary.dominance_violations.is_empty())
}

pub fn cmd_rate_fit(a: &RateFitArgs, out: &mut dyn Write) -> Result<Summary> {
    let result: ExperimentResult = match &a.results {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::config("results", e.to_string()))?
        }
        None => {
            let config = load_config(a.config.as_deref(), a.seed)?;
            let workers = a.workers.unwrap_or_else(default_workers);
            montecarlo::run_experiment(&config, workers)?
        }
    };
    if result.config.n_grid.len() < 4 {
        return Err(Error::config(
            "n_grid",
            "rate fits need at least 4 sample sizes",
        ));
    }
    let summary = summarize(&result)?;
    if let Some(dir) = &a.out {
        montecarlo::write_outputs(
            dir,
            &[(
                "summary.json",
                serde_json::to_string_pretty(&summary)? + "\n",
            )],
        )?;
    }
    emit(out, &fits_text(&summary))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run_from(
            std::iter::once("hermchain").chain(args.iter().copied()),
            &mut buf,
        );
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn hermite_check_passes_at_default_tolerance() {
        let report = hermite_check(20, 1e-8).unwrap();
        assert!(report.passed, "{:?}", report.failures().next());
        assert!(report.max_residual_of("generating_function").unwrap() < 1e-9);
    }

    #[test]
    fn hermite_check_degree_zero() {
        let report = hermite_check(0, 1e-8).unwrap();
        assert!(report.passed);
        assert!(report.checks.iter().all(|c| c.k == 0 && c.l == 0));
    }

    #[test]
    fn zero_tolerance_fails() {
        let (code, text) = run(&["hermite-check", "--max-degree", "4", "--tolerance", "0"]);
        assert_eq!(code, EXIT_CHECK_FAILED);
        assert!(text.contains("FAIL"));
    }

    #[test]
    fn bound_with_given_constants() {
        let (code, text) = run(&[
            "bound", "--n", "100", "--depth", "4", "--lambda", "10", "--c1", "10", "--c2",
            "11.9375",
        ]);
        assert_eq!(code, EXIT_OK, "{text}");
        assert!(text.contains("net 0.119375"), "{text}");
        assert!(text.contains("2/3") || text.contains("4/5"));
    }

    #[test]
    fn bound_prints_rate_exponent() {
        let (code, text) = run(&["bound", "--n", "100", "--p", "3"]);
        assert_eq!(code, EXIT_OK);
        assert!(text.contains("exponent       2/3"), "{text}");
    }

    #[test]
    fn bound_degenerate_delta() {
        let mut buf = Vec::new();
        let args = BoundArgs::try_parse_from_for_test(&["--n", "50", "--delta-n", "0"]);
        let r = cmd_bound(&args, &mut buf).unwrap();
        assert!(r.tails.iter().all(|t| t.net == 0.0 && t.class == 0.0));
    }

    #[test]
    fn negative_correlation_refused_in_signed_mode() {
        let (code, _) = run(&["bound", "--kind", "ar1", "--rho", "-0.4", "--n", "20"]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _) = run(&[
            "bound",
            "--kind",
            "ar1",
            "--rho",
            "-0.4",
            "--n",
            "20",
            "--delta-mode",
            "absolute",
        ]);
        assert_eq!(code, EXIT_OK);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(&["bound"]).0, EXIT_USAGE);
        assert_eq!(run(&["bound", "--kind", "ar1", "--n", "5"]).0, EXIT_USAGE);
        assert_eq!(run(&["nonsense"]).0, EXIT_USAGE);
    }

    impl BoundArgs {
        fn try_parse_from_for_test(args: &[&str]) -> Self {
            match RunConfig::try_parse_from(["hermchain", "bound"].iter().chain(args)) {
                Ok(RunConfig {
                    command: Command::Bound(b),
                    ..
                }) => b,
                other => panic!("{other:?}"),
            }
        }
    }
}
