//! Normalized (probabilists') Hermite polynomials
//!
//! `H_k = ((-1)^k / √k!) · e^{t²/2} · dᵏ/dtᵏ e^{-t²/2}`, so `H_0 = 1`, `H_1 = t`,
//! `H_2 = (t² − 1)/√2`, and `{H_k(t/s)}` is an orthonormal basis of `L²(γ_s)`
//! for the centered Gaussian law `γ_s` with standard deviation `s`.
//!
//! Evaluation always goes through the normalized three-term recurrence
//!
//! ```text
//! H_{k+1}(t) = (t·H_k(t) − √k·H_{k−1}(t)) / √(k+1)
//! ```
//!
//! which stays well conditioned at large `k`. The identities that make this
//! basis useful (generating function, orthonormality, bivariate cross moments)
//! are exposed as numerical checks.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::QuadratureRule;

/// Highest supported degree.
pub const MAX_DEGREE: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct HermiteDegree(usize);

impl HermiteDegree {
    pub fn new(k: usize) -> Result<Self> {
        if k > MAX_DEGREE {
            return Err(Error::invalid(format!(
                "Hermite degree {k} exceeds the cap {MAX_DEGREE}"
            )));
        }
        Ok(Self(k))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for HermiteDegree {
    type Error = Error;
    fn try_from(k: usize) -> Result<Self> {
        Self::new(k)
    }
}

impl From<HermiteDegree> for usize {
    fn from(k: HermiteDegree) -> usize {
        k.0
    }
}

/// Fills `out` with `H_0(t), …, H_max(t)`. No input validation.
pub(crate) fn hermite_values_unchecked(max: usize, t: f64, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    if max == 0 {
        return;
    }
    out.push(t);
    for k in 1..max {
        let next = (t * out[k] - (k as f64).sqrt() * out[k - 1]) / ((k + 1) as f64).sqrt();
        out.push(next);
    }
}

fn check_finite(t: f64, name: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {t}")))
    }
}

fn check_sd(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "standard deviation must be positive and finite, got {s}"
        )))
    }
}

/// `H_k(t)`.
pub fn hermite_eval(k: HermiteDegree, t: f64) -> Result<f64> {
    check_finite(t, "t")?;
    let mut buf = Vec::with_capacity(k.0 + 1);
    hermite_values_unchecked(k.0, t, &mut buf);
    let v = buf[k.0];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("H_{}({t}) overflows", k.0)))
    }
}

/// All of `H_0(t), …, H_k(t)`.
pub fn hermite_all(k: HermiteDegree, t: f64) -> Result<Vec<f64>> {
    check_finite(t, "t")?;
    let mut buf = Vec::with_capacity(k.0 + 1);
    hermite_values_unchecked(k.0, t, &mut buf);
    Ok(buf)
}

/// `Σ_{k=0}^{K} H_k(t) λᵏ / √k!`, the truncated expansion of `exp(λt − λ²/2)`.
pub fn generating_function_partial(lambda: f64, t: f64, truncation: usize) -> Result<f64> {
    check_finite(lambda, "lambda")?;
    check_finite(t, "t")?;
    let k = HermiteDegree::new(truncation)?;
    let mut h = Vec::with_capacity(k.0 + 1);
    hermite_values_unchecked(k.0, t, &mut h);
    let mut coef = 1.0;
    let mut sum = 0.0;
    for (j, hj) in h.iter().enumerate() {
        if j > 0 {
            coef *= lambda / (j as f64).sqrt();
        }
        sum += coef * hj;
    }
    Ok(sum)
}

/// `∫ H_k(t/s) H_l(t/s) dγ_s(t)` by Gauss–Hermite quadrature.
pub fn inner_product_gamma(
    k: HermiteDegree,
    l: HermiteDegree,
    s: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_sd(s)?;
    let need = k.0 + l.0 + 1;
    if rule.order() < need {
        return Err(Error::invalid(format!(
            "quadrature order {} is below k + l + 1 = {need}",
            rule.order()
        )));
    }
    let top = k.0.max(l.0);
    let mut buf = Vec::with_capacity(top + 1);
    Ok(rule.integrate(s, |t| {
        hermite_values_unchecked(top, t / s, &mut buf);
        buf[k.0] * buf[l.0]
    }))
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho.abs() <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "correlation must lie in [-1, 1], got {rho}"
        )))
    }
}

/// Closed form `E[H_k(U/√σ₁₁) H_l(V/√σ₂₂)] = δ_kl ρᵏ` with `ρ = σ₁₂/√(σ₁₁σ₂₂)`.
///
/// `k = l = 0` gives 1 for every `ρ`.
pub fn cross_moment(k: HermiteDegree, l: HermiteDegree, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    if k != l {
        return Ok(0.0);
    }
    Ok(rho.powi(k.0 as i32))
}

/// A 2×2 covariance `[[σ₁₁, σ₁₂], [σ₁₂, σ₂₂]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BivariateCovariance {
    pub var_u: f64,
    pub var_v: f64,
    pub cov_uv: f64,
}

impl BivariateCovariance {
    pub fn new(var_u: f64, var_v: f64, cov_uv: f64) -> Result<Self> {
        let cov = Self {
            var_u,
            var_v,
            cov_uv,
        };
        if !(var_u > 0.0 && var_v > 0.0 && var_u.is_finite() && var_v.is_finite()) {
            return Err(Error::invalid("variances must be positive and finite"));
        }
        check_rho(cov.correlation())?;
        Ok(cov)
    }

    pub fn with_correlation(rho: f64) -> Result<Self> {
        Self::new(1.0, 1.0, rho)
    }

    pub fn correlation(&self) -> f64 {
        self.cov_uv / (self.var_u * self.var_v).sqrt()
    }

    /// `(U, V) = (a·z₁, b·z₁ + c·z₂)` for independent standard normals.
    fn factor(&self) -> (f64, f64, f64) {
        let a = self.var_u.sqrt();
        let b = self.cov_uv / a;
        let c = (self.var_v - b * b).max(0.0).sqrt();
        (a, b, c)
    }
}

/// `E[H_k(U/√σ₁₁) H_l(V/√σ₂₂)]` by tensor-product Gauss–Hermite quadrature.
pub fn cross_moment_quadrature(
    k: HermiteDegree,
    l: HermiteDegree,
    cov: BivariateCovariance,
    rule: &QuadratureRule,
) -> Result<f64> {
    if 2 * rule.order() < k.0 + l.0 + 1 {
        return Err(Error::invalid(format!(
            "quadrature order {} cannot integrate degree {} exactly",
            rule.order(),
            k.0 + l.0
        )));
    }
    let (a, b, c) = cov.factor();
    let (su, sv) = (cov.var_u.sqrt(), cov.var_v.sqrt());
    let mut hu = Vec::new();
    let mut hv = Vec::new();
    let mut total = 0.0;
    for (&z1, &w1) in rule.nodes().iter().zip(rule.weights()) {
        hermite_values_unchecked(k.0, a * z1 / su, &mut hu);
        let hk = hu[k.0];
        let inner: f64 = rule
            .nodes()
            .iter()
            .zip(rule.weights())
            .map(|(&z2, &w2)| {
                hermite_values_unchecked(l.0, (b * z1 + c * z2) / sv, &mut hv);
                w2 * hv[l.0]
            })
            .sum();
        total += w1 * hk * inner;
    }
    Ok(total)
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub draws: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
            draws: n,
        }
    }

    /// `|mean − target| ≤ z·stderr`, with a floor for zero-variance samples.
    pub fn within(&self, target: f64, z: f64) -> bool {
        (self.mean - target).abs() <= z * self.stderr + 1e-12
    }
}

/// Monte Carlo estimate of the same bivariate moment.
pub fn cross_moment_monte_carlo<R: Rng + ?Sized>(
    k: HermiteDegree,
    l: HermiteDegree,
    cov: BivariateCovariance,
    draws: usize,
    rng: &mut R,
) -> Result<MeanEstimate> {
    if draws < 2 {
        return Err(Error::invalid("need at least two draws"));
    }
    let (a, b, c) = cov.factor();
    let (su, sv) = (cov.var_u.sqrt(), cov.var_v.sqrt());
    let mut hu = Vec::new();
    let mut hv = Vec::new();
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            hermite_values_unchecked(k.0, a * z1 / su, &mut hu);
            hermite_values_unchecked(l.0, (b * z1 + c * z2) / sv, &mut hv);
            hu[k.0] * hv[l.0]
        })
        .collect();
    Ok(MeanEstimate::from_samples(&samples))
}

/// Coefficients `c_k = ∫ f(t) H_k(t/s) dγ_s(t)`, `k = 0..=K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiteCoefficients {
    pub s: f64,
    pub c: Vec<f64>,
}

impl HermiteCoefficients {
    pub fn new(s: f64, c: Vec<f64>) -> Result<Self> {
        check_sd(s)?;
        if c.is_empty() {
            return Err(Error::invalid("coefficient vector is empty"));
        }
        if c.len() > MAX_DEGREE + 1 {
            return Err(Error::invalid(format!(
                "{} coefficients exceed degree cap {MAX_DEGREE}",
                c.len()
            )));
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("coefficient c_{i} is not finite")));
        }
        Ok(Self { s, c })
    }

    pub fn degree(&self) -> usize {
        self.c.len() - 1
    }

    /// `Σ c_k²`, which equals `‖f_K‖²` for the truncated expansion.
    pub fn norm_sq(&self) -> f64 {
        self.c.iter().map(|v| v * v).sum()
    }

    /// `Σ_k c_k H_k(t/s)`.
    pub fn evaluate(&self, t: f64) -> f64 {
        let mut buf = Vec::with_capacity(self.c.len());
        self.evaluate_with(t, &mut buf)
    }

    pub(crate) fn evaluate_with(&self, t: f64, buf: &mut Vec<f64>) -> f64 {
        hermite_values_unchecked(self.degree(), t / self.s, buf);
        self.c.iter().zip(buf.iter()).map(|(c, h)| c * h).sum()
    }

    /// Expected value under `γ_s`, i.e. `c_0`.
    pub fn mean(&self) -> f64 {
        self.c[0]
    }

    /// Coefficient-wise difference, padding the shorter expansion with zeros.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if self.s != other.s {
            return Err(Error::invalid(
                "expansions use different standard deviations",
            ));
        }
        let len = self.c.len().max(other.c.len());
        let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        let c = (0..len).map(|i| at(&self.c, i) - at(&other.c, i)).collect();
        Ok(Self { s: self.s, c })
    }
}

/// Projects `f` onto `H_0 … H_K` under `γ_s` by quadrature.
pub fn project(
    f: impl Fn(f64) -> f64,
    truncation: usize,
    s: f64,
    rule: &QuadratureRule,
) -> Result<HermiteCoefficients> {
    check_sd(s)?;
    let k = HermiteDegree::new(truncation)?;
    let mut c = vec![0.0; k.0 + 1];
    let mut buf = Vec::with_capacity(k.0 + 1);
    for (&z, &w) in rule.nodes().iter().zip(rule.weights()) {
        let t = s * z;
        let v = f(t);
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "integrand is not finite at quadrature node t = {t} (value {v})"
            )));
        }
        hermite_values_unchecked(k.0, z, &mut buf);
        for (ci, h) in c.iter_mut().zip(&buf) {
            *ci += w * v * h;
        }
    }
    HermiteCoefficients::new(s, c)
}

/// Exact expansion of the indicator `1_{t ≤ β}` under `γ_s`.
///
/// `c_0 = Φ(β/s)` and, for `k ≥ 1`, `c_k = −φ(β/s) H_{k−1}(β/s) / √k`, which
/// follows from `d/dt [φ(t) H_{k−1}(t)] = −√k φ(t) H_k(t)`.
pub fn project_indicator(beta: f64, s: f64, truncation: usize) -> Result<HermiteCoefficients> {
    check_sd(s)?;
    let k = HermiteDegree::new(truncation)?;
    if beta.is_nan() {
        return Err(Error::invalid("indicator threshold is NaN"));
    }
    let b = beta / s;
    let mut c = vec![0.0; k.0 + 1];
    c[0] = normal::cdf(b);
    if b.is_finite() && k.0 > 0 {
        let mut h = Vec::with_capacity(k.0);
        hermite_values_unchecked(k.0 - 1, b, &mut h);
        let density = normal::pdf(b);
        for j in 1..=k.0 {
            c[j] = -density * h[j - 1] / (j as f64).sqrt();
        }
    }
    HermiteCoefficients::new(s, c)
}
