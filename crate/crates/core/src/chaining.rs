//! Chaining bounds for the centered indicator class.
//!
//! A depth-`m` quantile net places thresholds at `α_i = s·Φ⁻¹(i/2^m)`. Level
//! `π_k` keeps every `2^{m−k}`-th threshold, so in Φ-coordinates it is the dyadic
//! grid `{i/2^k}`; the two endpoints are both the zero function. Because the
//! `L²(γ)` distance between two indicators only depends on the Φ-gap `p`
//! through `√(p − p²)`, which is symmetric under `p ↦ 1 − p`, the class behaves
//! like a circle of circumference one and everything below is computed there.
//!
//! Given per-level accuracies `a_k = sup_f ‖f − π_k f‖₂`, pair counts `N_k` (the
//! number of distinct `(π_{k+1} f, π_k f)`), and non-decreasing weights `q_k`:
//!
//! ```text
//! C1 = 2 Σ_k a_k q_k        C2 = Σ_k N_k / q_k²
//! P(sup |P̂_n f| ≥ λ) ≤ C1² C2 Δ_n / (λ² n²)
//! E sup |P̂_n f|     ≤ 2 C1 √C2 √Δ_n / n
//! ```
//!
//! The refined bound for the whole class adds the discretization error of the
//! depth-`m` net at resolution `δ ∈ (2^{−m−1}, 2^{−m}]`: moving `α` to the
//! nearest grid threshold shifts the empirical CDF side by at most `2δ` and
//! the centering `Φ(α/s)` by at most another `2δ`, hence `size_bound + 4δ`.

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::empirical::{level_distance, IndicatorFunction};
use crate::error::{Error, Result};
use crate::normal;

pub const MAX_DEPTH: u32 = 30;

/// Smallest depth reachable with a dyadic resolution `δ = 2^{−m} < 1/2`.
pub const MIN_DYADIC_DEPTH: u32 = 2;

/// Levels up to this depth get their pair counts by sweeping the whole class.
const FULL_SWEEP_MAX: u32 = 16;

/// Largest depth whose thresholds are listed in JSON exports.
const EXPORT_THRESHOLDS_MAX: u32 = 16;

/// Index of `π_k(f)` for the indicator at Φ-level `u`: `i` stands for the level
/// `i/2^k`, and 0 is the zero function. Ties go to the smaller threshold, the
/// zero function (`α = −∞`) being the smallest of all.
pub fn level_index(k: u32, u: f64) -> u64 {
    let cells = (1u64 << k) as f64;
    let lo = (u * cells).floor();
    let d_lo = u - lo / cells;
    let d_hi = (lo + 1.0) / cells - u;
    let hi_is_zero = lo + 1.0 >= cells;
    let pick_hi = d_hi < d_lo || (d_hi == d_lo && hi_is_zero);
    let i = if pick_hi { lo + 1.0 } else { lo } as u64;
    if i >= 1u64 << k {
        0
    } else {
        i
    }
}

/// Worst distance to the nearer endpoint of a Φ-cell of the given width: the
/// maximum of `√(p − p²)` is reached mid-cell.
fn cell_worst_distance(width: f64) -> f64 {
    level_distance(0.0, 0.5 * width)
}

fn count_pairs(
    coarse: u32,
    fine: u32,
    points: impl Iterator<Item = f64>,
    keep: Option<u64>,
) -> u64 {
    let mut seen = HashSet::new();
    for u in points {
        let c = level_index(coarse, u);
        if keep.is_some_and(|v| v != c) {
            continue;
        }
        seen.insert((level_index(fine, u), c));
    }
    seen.len() as u64
}

/// Distinct `(π_fine f, π_coarse f)` over the whole class, `fine ∈ {coarse, coarse + 1}`.
///
/// Projections are constant between tie points, which sit at odd multiples of
/// `2^{−fine−1}`, so sampling every multiple of `2^{−coarse−3}` visits every
/// tie point and every open arc between them.
fn enumerate_pairs(coarse: u32, fine: u32) -> u64 {
    let res = coarse + 3;
    let steps = 1u64 << res;
    if coarse <= FULL_SWEEP_MAX {
        let points = (0..=steps).map(|j| j as f64 / steps as f64);
        return count_pairs(coarse, fine, points, None);
    }
    // Rotating the circle by 2^{−coarse} maps both levels onto themselves, so
    // every coarse element carries the same number of pairs. Count those of the
    // element at Φ = 1/2 and scale.
    let centre = 0.5;
    let step = 1.0 / steps as f64;
    let points = (-4i64..=4).map(|j| centre + j as f64 * step);
    let keep = level_index(coarse, centre);
    count_pairs(coarse, fine, points, Some(keep)) * (1u64 << coarse)
}

struct PairTable {
    /// `(π_{k+1}, π_k)` pairs, `k = 0..MAX_DEPTH`.
    transition: Vec<u64>,
    /// Distinct elements of `π_k`, `k = 0..=MAX_DEPTH`.
    distinct: Vec<u64>,
}

fn pair_table() -> &'static PairTable {
    static TABLE: OnceLock<PairTable> = OnceLock::new();
    TABLE.get_or_init(|| PairTable {
        transition: (0..MAX_DEPTH).map(|k| enumerate_pairs(k, k + 1)).collect(),
        distinct: (0..=MAX_DEPTH).map(|k| enumerate_pairs(k, k)).collect(),
    })
}

/// The nested levels `{0} = π_0 ⊂ π_1 ⊂ … ⊂ π_m` of a dyadic quantile net.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileNet {
    depth: u32,
    s: f64,
    accuracies: Vec<f64>,
    pair_counts: Vec<u64>,
}

/// `build_quantile_net`: depth `1 ≤ m ≤ 30`.
pub fn build_quantile_net(depth: u32, s: f64) -> Result<QuantileNet> {
    QuantileNet::new(depth, s)
}

impl QuantileNet {
    pub fn new(depth: u32, s: f64) -> Result<Self> {
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::invalid(format!(
                "net depth must be in 1..={MAX_DEPTH}, got {depth}"
            )));
        }
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::invalid(format!(
                "standard deviation must be positive, got {s}"
            )));
        }
        let table = pair_table();
        let accuracies = (0..=depth)
            .map(|k| cell_worst_distance((-(k as f64)).exp2()))
            .collect();
        let pair_counts = (0..=depth)
            .map(|k| {
                if k < depth {
                    table.transition[k as usize]
                } else {
                    // π_{m+1} = π_m
                    table.distinct[k as usize]
                }
            })
            .collect();
        Ok(Self {
            depth,
            s,
            accuracies,
            pair_counts,
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `α_i = s·Φ⁻¹(i/2^m)`, `i = 0..=2^m`.
    pub fn threshold(&self, i: u64) -> f64 {
        let cells = (1u64 << self.depth) as f64;
        self.s * normal::quantile(i as f64 / cells)
    }

    /// Thresholds of `π_k`, i.e. `α_{i·2^{m−k}}` for `0 ≤ i ≤ 2^k`.
    pub fn level_thresholds(&self, k: u32) -> Result<Vec<f64>> {
        self.check_level(k)?;
        if k > 24 {
            return Err(Error::invalid(format!("level {k} is too large to list")));
        }
        let stride = 1u64 << (self.depth - k);
        Ok((0..=1u64 << k)
            .map(|i| self.threshold(i * stride))
            .collect())
    }

    /// `J_k`: 1 for `π_0`, `2^k + 1` listed thresholds otherwise.
    pub fn cardinality(&self, k: u32) -> u64 {
        if k == 0 {
            1
        } else {
            (1u64 << k.min(self.depth)) + 1
        }
    }

    pub fn accuracy(&self, k: u32) -> f64 {
        self.accuracies[k as usize]
    }

    pub fn accuracies(&self) -> &[f64] {
        &self.accuracies
    }

    pub fn pair_count(&self, k: u32) -> u64 {
        self.pair_counts[k as usize]
    }

    pub fn pair_counts(&self) -> &[u64] {
        &self.pair_counts
    }

    fn check_level(&self, k: u32) -> Result<()> {
        if k > self.depth {
            return Err(Error::invalid(format!(
                "level {k} exceeds net depth {}",
                self.depth
            )));
        }
        Ok(())
    }

    /// `π_k(f)`: the closest element of level `k`, ties toward the smaller threshold.
    pub fn project(&self, k: u32, f: &IndicatorFunction) -> Result<IndicatorFunction> {
        self.check_level(k)?;
        if f.s() != self.s {
            return Err(Error::invalid(
                "indicator and net use different standard deviations",
            ));
        }
        if f.is_zero() {
            return IndicatorFunction::zero(self.s);
        }
        let i = level_index(k, f.level());
        if i == 0 {
            return IndicatorFunction::zero(self.s);
        }
        IndicatorFunction::new(self.threshold(i << (self.depth - k)), self.s)
    }

    pub fn profile(&self) -> LevelProfile {
        LevelProfile {
            accuracies: self.accuracies.clone(),
            pair_counts: self.pair_counts.iter().map(|&c| c as f64).collect(),
        }
    }

    /// The same counts with the `2^{−k/2}` accuracy majorant.
    pub fn majorant_profile(&self) -> LevelProfile {
        LevelProfile {
            accuracies: (0..=self.depth)
                .map(|k| (-(k as f64) / 2.0).exp2())
                .collect(),
            pair_counts: self.pair_counts.iter().map(|&c| c as f64).collect(),
        }
    }

    pub fn export(&self) -> NetExport {
        let thresholds = (self.depth <= EXPORT_THRESHOLDS_MAX)
            .then(|| (1..1u64 << self.depth).map(|i| self.threshold(i)).collect());
        NetExport {
            depth: self.depth,
            s: self.s,
            interior_thresholds: thresholds,
            cardinalities: (0..=self.depth).map(|k| self.cardinality(k)).collect(),
            accuracies: self.accuracies.clone(),
            pair_counts: self.pair_counts.clone(),
        }
    }
}

/// `net_projection`
pub fn net_projection(
    net: &QuantileNet,
    k: u32,
    f: &IndicatorFunction,
) -> Result<IndicatorFunction> {
    net.project(k, f)
}

/// JSON view of a net. Endpoint thresholds `±∞` are implicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetExport {
    pub depth: u32,
    pub s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interior_thresholds: Option<Vec<f64>>,
    pub cardinalities: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub pair_counts: Vec<u64>,
}

/// Accuracies `a_k` and pair counts `N_k`, `k = 0..=m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelProfile {
    pub accuracies: Vec<f64>,
    pub pair_counts: Vec<f64>,
}

impl LevelProfile {
    pub fn new(accuracies: Vec<f64>, pair_counts: Vec<f64>) -> Result<Self> {
        if accuracies.is_empty() || accuracies.len() != pair_counts.len() {
            return Err(Error::invalid(format!(
                "profile needs equal, nonzero lengths (got {} accuracies, {} counts)",
                accuracies.len(),
                pair_counts.len()
            )));
        }
        if accuracies
            .iter()
            .chain(&pair_counts)
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::invalid(
                "accuracies and pair counts must be positive",
            ));
        }
        Ok(Self {
            accuracies,
            pair_counts,
        })
    }

    pub fn depth(&self) -> usize {
        self.accuracies.len() - 1
    }
}

/// Positive, non-decreasing `q_0 … q_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ChainWeights(Vec<f64>);

impl ChainWeights {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::invalid("weights are empty"));
        }
        if let Some(k) = q.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!(
                "weight q_{k} = {} is not positive",
                q[k]
            )));
        }
        if let Some(k) = q.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!(
                "weights must be non-decreasing: q_{} = {} > q_{} = {}",
                k,
                q[k],
                k + 1,
                q[k + 1]
            )));
        }
        Ok(Self(q))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|q| q * c).collect())
    }
}

impl TryFrom<Vec<f64>> for ChainWeights {
    type Error = Error;
    fn try_from(q: Vec<f64>) -> Result<Self> {
        Self::new(q)
    }
}

impl From<ChainWeights> for Vec<f64> {
    fn from(w: ChainWeights) -> Vec<f64> {
        w.0
    }
}

/// `q_k = 2^{k/2}`.
pub fn default_weights(depth: u32) -> ChainWeights {
    ChainWeights((0..=depth).map(|k| (k as f64 / 2.0).exp2()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainingConstants {
    pub c1: f64,
    pub c2: f64,
    pub depth: usize,
    pub weights: ChainWeights,
    pub accuracies: Vec<f64>,
    pub pair_counts: Vec<f64>,
}

impl ChainingConstants {
    /// `C1 √C2`
    pub fn product(&self) -> f64 {
        self.c1 * self.c2.sqrt()
    }
}

fn c1_c2(profile: &LevelProfile, q: &[f64]) -> (f64, f64) {
    let c1 = 2.0
        * profile
            .accuracies
            .iter()
            .zip(q)
            .map(|(a, q)| a * q)
            .sum::<f64>();
    let c2 = profile
        .pair_counts
        .iter()
        .zip(q)
        .map(|(n, q)| n / (q * q))
        .sum::<f64>();
    (c1, c2)
}

/// `C1 = 2 Σ a_k q_k`, `C2 = Σ N_k / q_k²` over `k = 0..=m`.
pub fn chaining_constants(
    profile: &LevelProfile,
    weights: &ChainWeights,
) -> Result<ChainingConstants> {
    if weights.len() != profile.accuracies.len() {
        return Err(Error::invalid(format!(
            "{} weights for a profile of depth {}",
            weights.len(),
            profile.depth()
        )));
    }
    let (c1, c2) = c1_c2(profile, weights.as_slice());
    if !(c1.is_finite() && c2.is_finite() && c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Numerical(format!(
            "degenerate constants C1 = {c1}, C2 = {c2}"
        )));
    }
    Ok(ChainingConstants {
        c1,
        c2,
        depth: profile.depth(),
        weights: weights.clone(),
        accuracies: profile.accuracies.clone(),
        pair_counts: profile.pair_counts.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightOptimization {
    pub weights: ChainWeights,
    /// `C1 √C2` at the returned weights.
    pub objective: f64,
    pub default_objective: f64,
    pub iterations: usize,
    /// Projected-gradient residual in log-weights.
    pub stationarity: f64,
    pub converged: bool,
}

const OPT_TOLERANCE: f64 = 1e-8;
const OPT_MAX_SWEEPS: usize = 20_000;

/// Minimizes `C1 √C2` over non-decreasing positive weights by projected
/// block coordinate descent, starting from [`default_weights`].
///
/// A move sets a contiguous run `q_i … q_j` to one common value, the
/// closed-form minimizer `q = (N A' / (a B'))^{1/3}` with `A'`, `B'` summed over
/// the other levels, clamped to the neighbours. Moves that merge unequal
/// values are kept only if the objective drops. Every non-stationary feasible point admits such a move,
/// including splitting a tied run. The objective is convex in `log q`, and
/// the stopping rule is the projected-gradient residual in those
/// coordinates. Weights are reported normalized to `q_0 = 1`.
pub fn optimize_weights(profile: &LevelProfile) -> WeightOptimization {
    let m = profile.depth();
    let start = default_weights(m as u32);
    let default_objective = objective(profile, start.as_slice());
    let mut q = start.0.clone();
    if m == 0 {
        return WeightOptimization {
            weights: start,
            objective: default_objective,
            default_objective,
            iterations: 0,
            stationarity: 0.0,
            converged: true,
        };
    }

    let mut iterations = 0;
    let mut current = default_objective;
    let mut stationarity = projected_gradient_residual(profile, &q);
    let mut trial = q.clone();
    while stationarity >= OPT_TOLERANCE && iterations < OPT_MAX_SWEEPS {
        let mut improved = false;
        for lo in 0..=m {
            for hi in lo..=m {
                // on a tied run the update is an exact line minimization;
                // merging unequal values must also lower the objective
                let tied = q[lo..=hi].iter().all(|&x| x == q[lo]);
                trial.copy_from_slice(&q);
                if !block_update(profile, &mut trial, lo, hi) {
                    continue;
                }
                let value = objective(profile, &trial);
                if tied || value < current {
                    current = value.min(current);
                    q.copy_from_slice(&trial);
                    improved = true;
                }
            }
        }
        iterations += 1;
        stationarity = projected_gradient_residual(profile, &q);
        if !improved {
            break;
        }
    }

    let scale = q[0];
    q.iter_mut().for_each(|v| *v /= scale);
    let obj = objective(profile, &q);
    let (weights, obj) = if obj <= default_objective {
        (q, obj)
    } else {
        (start.0.clone(), default_objective)
    };
    WeightOptimization {
        weights: ChainWeights(weights),
        objective: obj,
        default_objective,
        iterations,
        stationarity,
        converged: stationarity < OPT_TOLERANCE,
    }
}

fn objective(profile: &LevelProfile, q: &[f64]) -> f64 {
    let (c1, c2) = c1_c2(profile, q);
    c1 * c2.sqrt()
}

/// Sets `q[lo..=hi]` to their common optimal value, clamped to the
/// neighbours. Returns whether anything changed.
fn block_update(profile: &LevelProfile, q: &mut [f64], lo: usize, hi: usize) -> bool {
    let (mut a_in, mut n_in, mut a_out, mut b_out) = (0.0, 0.0, 0.0, 0.0);
    for (k, &qk) in q.iter().enumerate() {
        let (a, n) = (profile.accuracies[k], profile.pair_counts[k]);
        if (lo..=hi).contains(&k) {
            a_in += a;
            n_in += n;
        } else {
            a_out += a * qk;
            b_out += n / (qk * qk);
        }
    }
    if a_out == 0.0 || b_out == 0.0 {
        return false;
    }
    let mut v = (n_in * a_out / (a_in * b_out)).cbrt();
    if lo > 0 {
        v = v.max(q[lo - 1]);
    }
    if hi + 1 < q.len() {
        v = v.min(q[hi + 1]);
    }
    if q[lo..=hi].iter().all(|&x| x == v) {
        return false;
    }
    q[lo..=hi].iter_mut().for_each(|x| *x = v);
    true
}

/// `‖y − P(y − ∇L(y))‖_∞` with `y = log q`, `L = log(C1 √C2)` and `P` the
/// projection onto non-decreasing sequences.
fn projected_gradient_residual(profile: &LevelProfile, q: &[f64]) -> f64 {
    let y: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let sa: f64 = profile.accuracies.iter().zip(q).map(|(a, q)| a * q).sum();
    let sb: f64 = profile
        .pair_counts
        .iter()
        .zip(q)
        .map(|(n, q)| n / (q * q))
        .sum();
    let stepped: Vec<f64> = (0..q.len())
        .map(|k| {
            let grad =
                profile.accuracies[k] * q[k] / sa - profile.pair_counts[k] / (q[k] * q[k]) / sb;
            y[k] - grad
        })
        .collect();
    let projected = isotonic_projection(&stepped);
    y.iter()
        .zip(&projected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Least-squares projection onto non-decreasing sequences (pool adjacent violators).
fn isotonic_projection(x: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(x.len());
    for &v in x {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (v2, c2) = blocks[blocks.len() - 1];
            let (v1, c1) = blocks[blocks.len() - 2];
            if v1 <= v2 {
                break;
            }
            blocks.pop();
            let merged = (v1 * c1 as f64 + v2 * c2 as f64) / (c1 + c2) as f64;
            *blocks.last_mut().unwrap() = (merged, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, c)| std::iter::repeat_n(v, c))
        .collect()
}

fn check_sample(delta_n: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    if !(delta_n.is_finite() && delta_n >= 0.0) {
        return Err(Error::invalid(format!(
            "Δ_n must be non-negative, got {delta_n}"
        )));
    }
    Ok(())
}

/// `min(1, C1² C2 Δ_n / (λ² n²))`
pub fn tail_bound(c: &ChainingConstants, delta_n: f64, n: usize, lambda: f64) -> Result<f64> {
    Ok(raw_tail_bound(c, delta_n, n, lambda)?.min(1.0))
}

/// The tail bound before clipping at 1.
pub fn raw_tail_bound(c: &ChainingConstants, delta_n: f64, n: usize, lambda: f64) -> Result<f64> {
    check_sample(delta_n, n)?;
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("λ must be positive, got {lambda}")));
    }
    let n = n as f64;
    Ok(c.c1 * c.c1 * c.c2 * delta_n / (lambda * lambda * n * n))
}

/// `2 C1 √C2 √Δ_n / n`
pub fn size_bound(c: &ChainingConstants, delta_n: f64, n: usize) -> Result<f64> {
    check_sample(delta_n, n)?;
    Ok(2.0 * c.product() * delta_n.sqrt() / n as f64)
}

/// `u + C1² C2 Δ_n / (u n²)`, the bound before choosing `u`.
pub fn size_bound_at(c: &ChainingConstants, delta_n: f64, n: usize, u: f64) -> Result<f64> {
    check_sample(delta_n, n)?;
    if !(u > 0.0) {
        return Err(Error::invalid(format!("u must be positive, got {u}")));
    }
    let n = n as f64;
    Ok(u + c.c1 * c.c1 * c.c2 * delta_n / (u * n * n))
}

/// The minimizing `u* = C1 √C2 √Δ_n / n`.
pub fn size_bound_optimal_u(c: &ChainingConstants, delta_n: f64, n: usize) -> Result<f64> {
    check_sample(delta_n, n)?;
    Ok(c.product() * delta_n.sqrt() / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolicy {
    #[default]
    Default,
    Optimized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyPolicy {
    /// Exact `sup_f ‖f − π_k f‖₂`.
    #[default]
    Exact,
    /// `2^{−k/2}`
    Majorant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsPolicy {
    pub weights: WeightPolicy,
    pub accuracy: AccuracyPolicy,
}

/// Builds the net of the given depth and its constants under `policy`.
pub fn constants_for_depth(
    depth: u32,
    s: f64,
    policy: ConstantsPolicy,
) -> Result<(QuantileNet, ChainingConstants)> {
    let net = QuantileNet::new(depth, s)?;
    let profile = match policy.accuracy {
        AccuracyPolicy::Exact => net.profile(),
        AccuracyPolicy::Majorant => net.majorant_profile(),
    };
    let weights = match policy.weights {
        WeightPolicy::Default => default_weights(depth),
        WeightPolicy::Optimized => optimize_weights(&profile).weights,
    };
    let constants = chaining_constants(&profile, &weights)?;
    Ok((net, constants))
}

/// Depth `m ≥ 1` with `2^{−m−1} < δ ≤ 2^{−m}`.
pub fn depth_for_resolution(delta: f64) -> Result<u32> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::invalid(format!(
            "resolution δ must lie in (0, 1/2), got {delta}"
        )));
    }
    let mut m = 1;
    while delta <= (-((m + 1) as f64)).exp2() {
        m += 1;
        if m > MAX_DEPTH {
            return Err(Error::invalid(format!(
                "resolution δ = {delta} needs a net deeper than {MAX_DEPTH}"
            )));
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedBound {
    pub value: f64,
    pub delta: f64,
    pub depth: u32,
    /// `2 C1 √C2 √Δ_n / n` for the depth-`m` net.
    pub size_part: f64,
    /// `4δ`
    pub additive: f64,
    pub constants: ChainingConstants,
}

/// Constants for every depth `1..=MAX_DEPTH` under one policy. They do not
/// depend on `Δ_n` or `n`, so one table serves every bound evaluation.
#[derive(Clone, Debug)]
pub struct DepthTable {
    policy: ConstantsPolicy,
    constants: Vec<ChainingConstants>,
}

/// Upper bound on `P(sup_{f∈F} |P̂_n f| ≥ λ)` for the whole class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTail {
    pub value: f64,
    /// Depth achieving it, `None` when no depth beats the trivial bound 1.
    pub depth: Option<u32>,
}

impl DepthTable {
    pub fn new(policy: ConstantsPolicy) -> Result<Self> {
        let constants = (1..=MAX_DEPTH)
            .map(|m| constants_for_depth(m, 1.0, policy).map(|(_, c)| c))
            .collect::<Result<_>>()?;
        Ok(Self { policy, constants })
    }

    /// Shared table for `policy`, built on first use.
    pub fn cached(policy: ConstantsPolicy) -> Result<&'static Self> {
        static TABLES: [OnceLock<std::result::Result<DepthTable, String>>; 4] =
            [const { OnceLock::new() }; 4];
        let slot = match (policy.weights, policy.accuracy) {
            (WeightPolicy::Default, AccuracyPolicy::Exact) => 0,
            (WeightPolicy::Default, AccuracyPolicy::Majorant) => 1,
            (WeightPolicy::Optimized, AccuracyPolicy::Exact) => 2,
            (WeightPolicy::Optimized, AccuracyPolicy::Majorant) => 3,
        };
        TABLES[slot]
            .get_or_init(|| Self::new(policy).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|msg| Error::Numerical(msg.clone()))
    }

    pub fn policy(&self) -> ConstantsPolicy {
        self.policy
    }

    pub fn constants(&self, depth: u32) -> Result<&ChainingConstants> {
        if !(1..=MAX_DEPTH).contains(&depth) {
            return Err(Error::invalid(format!(
                "net depth must be in 1..={MAX_DEPTH}, got {depth}"
            )));
        }
        Ok(&self.constants[depth as usize - 1])
    }

    /// `size_bound(m) + 4δ` with `m` from [`depth_for_resolution`].
    pub fn refined(&self, delta_n: f64, n: usize, delta: f64) -> Result<RefinedBound> {
        check_sample(delta_n, n)?;
        let depth = depth_for_resolution(delta)?;
        let constants = self.constants(depth)?.clone();
        let size_part = size_bound(&constants, delta_n, n)?;
        Ok(RefinedBound {
            value: size_part + 4.0 * delta,
            delta,
            depth,
            size_part,
            additive: 4.0 * delta,
            constants,
        })
    }

    /// The smallest refined bound over dyadic resolutions `δ = 2^{−m}`, `m = 2..=30`.
    pub fn best_refined(&self, delta_n: f64, n: usize) -> Result<RefinedBound> {
        let mut best: Option<RefinedBound> = None;
        for m in MIN_DYADIC_DEPTH..=MAX_DEPTH {
            let b = self.refined(delta_n, n, (-(m as f64)).exp2())?;
            if best.as_ref().is_none_or(|cur| b.value < cur.value) {
                best = Some(b);
            }
        }
        Ok(best.expect("at least one depth"))
    }

    /// Tail bound for the whole class: the net at depth `m` is within `4·2^{−m}`
    /// of the class supremum pathwise, so
    /// `P(sup_F ≥ λ) ≤ min(1, C1² C2 Δ_n / ((λ − 4·2^{−m})² n²))`,
    /// minimized over `m` unless `depth` pins it.
    pub fn class_tail(
        &self,
        delta_n: f64,
        n: usize,
        lambda: f64,
        depth: Option<u32>,
    ) -> Result<ClassTail> {
        check_sample(delta_n, n)?;
        if !(lambda > 0.0) {
            return Err(Error::invalid(format!("λ must be positive, got {lambda}")));
        }
        let depths = match depth {
            Some(m) => {
                self.constants(m)?;
                m..=m
            }
            None => 1..=MAX_DEPTH,
        };
        let mut best = ClassTail {
            value: 1.0,
            depth: None,
        };
        for m in depths {
            let shift = 4.0 * (-(m as f64)).exp2();
            if lambda <= shift {
                continue;
            }
            let v = tail_bound(&self.constants[m as usize - 1], delta_n, n, lambda - shift)?;
            if v < best.value {
                best = ClassTail {
                    value: v,
                    depth: Some(m),
                };
            }
        }
        Ok(best)
    }
}

/// `size_bound(m) + 4δ` with `m` from [`depth_for_resolution`].
pub fn refined_size_bound(
    delta_n: f64,
    n: usize,
    delta: f64,
    policy: ConstantsPolicy,
) -> Result<RefinedBound> {
    DepthTable::cached(policy)?.refined(delta_n, n, delta)
}

/// The smallest refined bound over dyadic resolutions `δ = 2^{−m}`, `m = 2..=30`.
pub fn best_refined_bound(delta_n: f64, n: usize, policy: ConstantsPolicy) -> Result<RefinedBound> {
    DepthTable::cached(policy)?.best_refined(delta_n, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateOptimum {
    /// `√Δ_n / n`
    pub scale: f64,
    pub x_star: f64,
    /// `e^{−x*}`
    pub delta_star: f64,
    /// `min_x x^{3/2}·scale + e^{−x}`
    pub g_star: f64,
    /// `1.5·scale·√x* − e^{−x*}`
    pub stationarity: f64,
    /// Explicit refined bound at `δ*` (clamped into the admissible range).
    pub refined: RefinedBound,
    pub order: u32,
    /// `2p / (2p + 3)`
    pub exponent: f64,
}

/// `2p / (2p + 3)`
pub fn rate_exponent(order: u32) -> f64 {
    let p = order as f64;
    2.0 * p / (2.0 * p + 3.0)
}

/// Minimizes `g(x) = x^{3/2} a + e^{−x}` with `a = √Δ_n / n`.
///
/// `g` is strictly convex on `x > 0` with `g'(0⁺) = −1`, so its minimizer is
/// the unique root of `g'(x) = 1.5 a √x − e^{−x}`, located by bisection on a
/// doubling bracket.
pub fn optimized_rate(
    delta_n: f64,
    n: usize,
    order: u32,
    policy: ConstantsPolicy,
) -> Result<RateOptimum> {
    check_sample(delta_n, n)?;
    if order == 0 {
        return Err(Error::invalid("polynomial order p must be at least 1"));
    }
    let a = delta_n.sqrt() / n as f64;
    if !(a > 0.0) {
        return Err(Error::invalid("√Δ_n / n must be positive"));
    }
    if a >= 1.0 {
        return Err(Error::invalid(format!(
            "√Δ_n / n = {a} ≥ 1: no decay regime"
        )));
    }
    let x_star = minimize_rate_objective(a);
    let g = |x: f64| x.powf(1.5) * a + (-x).exp();
    let delta_star = (-x_star).exp();
    let admissible = delta_star.clamp((-(MAX_DEPTH as f64)).exp2(), 0.5 - f64::EPSILON);
    let refined = refined_size_bound(delta_n, n, admissible, policy)?;
    Ok(RateOptimum {
        scale: a,
        x_star,
        delta_star,
        g_star: g(x_star),
        stationarity: 1.5 * a * x_star.sqrt() - (-x_star).exp(),
        refined,
        order,
        exponent: rate_exponent(order),
    })
}

fn minimize_rate_objective(a: f64) -> f64 {
    let deriv = |x: f64| 1.5 * a * x.sqrt() - (-x).exp();
    let mut hi = 1.0;
    while deriv(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `min_x x^{3/2} a + c_p x^{−p}` with `c_p = sup_x x^p e^{−x} = (p/e)^p`,
/// the polynomial majorant of `g` used to read off the `a^{2p/(2p+3)}` rate.
pub fn polynomial_rate_bound(scale: f64, order: u32) -> f64 {
    let p = order as f64;
    let cp = (p / std::f64::consts::E).powf(p);
    // stationary point: 1.5 a x^{1/2} = p c_p x^{−p−1}
    let x = (p * cp / (1.5 * scale)).powf(1.0 / (p + 1.5));
    x.powf(1.5) * scale + cp * x.powf(-p)
}
