//! Empirical processes over the centered indicator class
//! `F = { f_α(t) = 1{t ≤ α} − Φ(α/s) : α ∈ [−∞, +∞] }`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmodel::SamplePath;
use crate::normal;

/// `f_α(t) = 1{t ≤ α} − Φ(α/s)`. Both `α = ±∞` give the zero function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorFunction {
    alpha: f64,
    s: f64,
}

impl IndicatorFunction {
    pub fn new(alpha: f64, s: f64) -> Result<Self> {
        if alpha.is_nan() {
            return Err(Error::invalid("indicator threshold is NaN"));
        }
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::invalid(format!(
                "standard deviation must be positive, got {s}"
            )));
        }
        Ok(Self { alpha, s })
    }

    /// The zero function, represented by `α = −∞`.
    pub fn zero(s: f64) -> Result<Self> {
        Self::new(f64::NEG_INFINITY, s)
    }

    /// The element whose threshold sits at Φ-level `u`, i.e. `α = s·Φ⁻¹(u)`.
    pub fn at_level(u: f64, s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid(format!(
                "Φ-level must lie in [0, 1], got {u}"
            )));
        }
        Self::new(s * normal::quantile(u), s)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.is_infinite()
    }

    /// `Φ(α/s)`
    pub fn level(&self) -> f64 {
        normal::cdf(self.alpha / self.s)
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let ind = if t <= self.alpha { 1.0 } else { 0.0 };
        ind - self.level()
    }

    /// Same function on `L²(γ_s)`; all zero representations compare equal.
    pub fn same_function(&self, other: &Self) -> bool {
        self.s == other.s && (self.alpha == other.alpha || (self.is_zero() && other.is_zero()))
    }
}

/// A value of `P̂_n(f)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct EmpiricalValue(pub f64);

impl EmpiricalValue {
    pub fn get(self) -> f64 {
        self.0
    }
}

/// `#{k : x_k ≤ α} / n`, the uncentered empirical CDF.
pub fn empirical_cdf(path: &SamplePath, alpha: f64) -> f64 {
    let count = path.values().iter().filter(|&&x| x <= alpha).count();
    count as f64 / path.len() as f64
}

/// `P̂_n(f_α) = #{k : x_k ≤ α}/n − Φ(α/s)`.
pub fn empirical_process(path: &SamplePath, f: &IndicatorFunction) -> EmpiricalValue {
    if f.is_zero() {
        return EmpiricalValue(0.0);
    }
    EmpiricalValue(empirical_cdf(path, f.alpha) - f.level())
}

/// `sup_α |P̂_n(f_α)|`, exact.
///
/// `α ↦ P̂_n(1{t ≤ α})` is a right-continuous step function and Φ is strictly
/// increasing, so the supremum is attained (or approached from the left) at an
/// order statistic:
/// `max_i max(i/n − Φ(x₍ᵢ₎/s), Φ(x₍ᵢ₎/s) − (i−1)/n)`.
pub fn sup_deviation(path: &SamplePath, s: f64) -> f64 {
    let mut sorted = path.values().to_vec();
    sup_deviation_in_place(&mut sorted, s)
}

/// As [`sup_deviation`], sorting the caller's buffer.
pub fn sup_deviation_in_place(values: &mut [f64], s: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let phi = normal::cdf(x / s);
            let above = (i + 1) as f64 / n - phi;
            let below = phi - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

fn shared_sd(f: &IndicatorFunction, g: &IndicatorFunction) -> Result<()> {
    if f.s != g.s {
        return Err(Error::invalid(format!(
            "indicators use different standard deviations ({} vs {})",
            f.s, g.s
        )));
    }
    Ok(())
}

/// `‖f − g‖_{L²(γ)} = √(p − p²)` with `p = |Φ(β/s) − Φ(α/s)|`.
pub fn indicator_l2_distance(f: &IndicatorFunction, g: &IndicatorFunction) -> Result<f64> {
    shared_sd(f, g)?;
    Ok(level_distance(f.level(), g.level()))
}

/// The coarser `√p` majorant of [`indicator_l2_distance`].
pub fn indicator_l2_majorant(f: &IndicatorFunction, g: &IndicatorFunction) -> Result<f64> {
    shared_sd(f, g)?;
    Ok((f.level() - g.level()).abs().sqrt())
}

/// Distance between the indicators at Φ-levels `u` and `v`.
pub fn level_distance(u: f64, v: f64) -> f64 {
    let p = (u - v).abs();
    (p * (1.0 - p)).max(0.0).sqrt()
}

/// Sorted thresholds `−∞ = α_0 < α_1 < … < α_M = +∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdGrid {
    thresholds: Vec<f64>,
}

impl ThresholdGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.len() < 2
            || thresholds[0] != f64::NEG_INFINITY
            || *thresholds.last().unwrap() != f64::INFINITY
        {
            return Err(Error::invalid("grid must start at −∞ and end at +∞"));
        }
        if let Some(w) = thresholds.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::invalid(format!(
                "grid is not strictly increasing at index {}",
                w + 1
            )));
        }
        Ok(Self { thresholds })
    }

    /// `α_i = s·Φ⁻¹(i/2^m)`, `i = 0..=2^m`.
    pub fn dyadic_quantiles(m: u32, s: f64) -> Result<Self> {
        if m > 24 {
            return Err(Error::invalid(format!(
                "grid depth {m} too large to materialize"
            )));
        }
        let cells = 1usize << m;
        Self::new(
            (0..=cells)
                .map(|i| s * normal::quantile(i as f64 / cells as f64))
                .collect(),
        )
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Index `i` of the cell `[α_{i−1}, α_i)` holding `alpha`.
    pub fn cell(&self, alpha: f64) -> Result<usize> {
        if alpha.is_nan() || alpha == f64::INFINITY {
            return Err(Error::invalid(format!("{alpha} is outside the grid")));
        }
        Ok(self.thresholds.partition_point(|&t| t <= alpha))
    }
}

/// `Q̂_n(α) = P̂_n(1{t ≤ α_i})` for the cell `α_{i−1} ≤ α < α_i`.
pub fn discretized_process(path: &SamplePath, grid: &ThresholdGrid, alpha: f64) -> Result<f64> {
    let i = grid.cell(alpha)?;
    Ok(empirical_cdf(path, grid.thresholds[i]))
}

/// Bracket of `P̂_n(1{t ≤ α})` by `Q̂_n` at the Φ-shifted thresholds
/// `s·Φ⁻¹(Φ(α/s) ∓ 2δ)` for a dyadic grid with mesh `δ = 2^{−m}`.
///
/// Shifts that leave `(0, 1)` fall back to the trivial bounds 0 and 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sandwich {
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

pub fn sandwich(
    path: &SamplePath,
    grid: &ThresholdGrid,
    mesh: f64,
    s: f64,
    alpha: f64,
) -> Result<Sandwich> {
    let u = normal::cdf(alpha / s);
    let value = empirical_cdf(path, alpha);
    let lower = if u - 2.0 * mesh > 0.0 {
        discretized_process(path, grid, s * normal::quantile(u - 2.0 * mesh))?
    } else {
        0.0
    };
    let upper = if u + 2.0 * mesh < 1.0 {
        discretized_process(path, grid, s * normal::quantile(u + 2.0 * mesh))?
    } else {
        1.0
    };
    Ok(Sandwich {
        lower,
        value,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadratureRule;
    use proptest::prelude::*;

    fn path(v: &[f64]) -> SamplePath {
        SamplePath::new(v.to_vec()).unwrap()
    }

    fn ind(alpha: f64) -> IndicatorFunction {
        IndicatorFunction::new(alpha, 1.0).unwrap()
    }

    #[test]
    fn empirical_process_examples() {
        assert_eq!(
            empirical_process(&path(&[0.0]), &ind(f64::INFINITY)).get(),
            0.0
        );
        assert_eq!(empirical_process(&path(&[-1.0, 1.0]), &ind(0.0)).get(), 0.0);
        let v = empirical_process(&path(&[-1.0, 1.0]), &ind(1.0)).get();
        assert!((v - 0.158_655_253_931_457).abs() < 1e-12);
    }

    #[test]
    fn sup_deviation_examples() {
        assert_eq!(sup_deviation(&path(&[0.0]), 1.0), 0.5);
        let v = sup_deviation(&path(&[-1.0, 1.0]), 1.0);
        assert!((v - 0.341_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(indicator_l2_distance(&ind(0.4), &ind(0.4)).unwrap(), 0.0);
        let f = IndicatorFunction::at_level(0.3, 1.0).unwrap();
        let g = IndicatorFunction::at_level(0.7, 1.0).unwrap();
        let d = indicator_l2_distance(&f, &g).unwrap();
        assert!((d - 0.24f64.sqrt()).abs() < 1e-12);
        let d = indicator_l2_distance(&ind(f64::NEG_INFINITY), &ind(f64::INFINITY)).unwrap();
        assert_eq!(d, 0.0);
        assert!(indicator_l2_majorant(&f, &g).unwrap() >= d);
        let other = IndicatorFunction::new(0.0, 2.0).unwrap();
        assert!(indicator_l2_distance(&f, &other).is_err());
    }

    #[test]
    fn distance_matches_quadrature() {
        // ‖f − g‖² integrated against a fine Riemann sum of the density
        let (a, b) = (-0.4, 1.1);
        let (f, g) = (ind(a), ind(b));
        let steps = 400_000;
        let (lo, hi) = (-10.0, 10.0);
        let h = (hi - lo) / steps as f64;
        let integral: f64 = (0..steps)
            .map(|i| {
                let t = lo + (i as f64 + 0.5) * h;
                (f.evaluate(t) - g.evaluate(t)).powi(2) * normal::pdf(t) * h
            })
            .sum();
        let d = indicator_l2_distance(&f, &g).unwrap();
        assert!((d * d - integral).abs() < 1e-6);
    }

    #[test]
    fn discretized_examples() {
        let grid = ThresholdGrid::dyadic_quantiles(2, 1.0).unwrap();
        assert_eq!(discretized_process(&path(&[0.5]), &grid, 0.3).unwrap(), 1.0);
        assert_eq!(
            discretized_process(&path(&[0.5]), &grid, -1.0).unwrap(),
            0.0
        );
        let p = path(&[-0.2, 0.1, 0.5, 0.9]);
        let beta = grid.thresholds()[3];
        let just_below = beta - 1e-12;
        assert_eq!(
            discretized_process(&p, &grid, just_below).unwrap(),
            empirical_cdf(&p, beta)
        );
        assert!(discretized_process(&p, &grid, f64::NAN).is_err());
        assert!(discretized_process(&p, &grid, f64::INFINITY).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(ThresholdGrid::new(vec![0.0, 1.0]).is_err());
        assert!(ThresholdGrid::new(vec![f64::NEG_INFINITY, 1.0, 1.0, f64::INFINITY]).is_err());
        assert!(ThresholdGrid::new(vec![f64::NEG_INFINITY, f64::INFINITY]).is_ok());
    }

    #[test]
    fn indicators_are_centered() {
        let rule = QuadratureRule::gauss_hermite(128).unwrap();
        for alpha in [-3.0, -0.5, 0.0, 0.7, 2.2] {
            // quadrature on a step is coarse; compare with the rule's own mass below α
            let f = IndicatorFunction::new(alpha, 1.5).unwrap();
            let mean = rule.integrate(1.5, |t| f.evaluate(t));
            let mass: f64 = rule
                .nodes()
                .iter()
                .zip(rule.weights())
                .filter(|(&z, _)| 1.5 * z <= alpha)
                .map(|(_, &w)| w)
                .sum();
            assert!((mean - (mass - f.level())).abs() < 1e-14);
            assert!(mean.abs() < 0.05);
        }
    }

    proptest! {
        #[test]
        fn sup_matches_brute_force(values in prop::collection::vec(-3.0f64..3.0, 1..40)) {
            let p = path(&values);
            let exact = sup_deviation(&p, 1.0);
            let mut brute: f64 = 0.0;
            for &x in &values {
                for a in [x, x - 1e-9, x + 1e-9] {
                    brute = brute.max(empirical_process(&p, &ind(a)).get().abs());
                }
            }
            prop_assert!(exact >= brute - 1e-12);
            prop_assert!(exact - brute < 1e-8);
            prop_assert!((0.0..=1.0).contains(&exact));
        }

        #[test]
        fn empirical_cdf_is_monotone_step(values in prop::collection::vec(-3.0f64..3.0, 1..30),
                                          a in -4.0f64..4.0, b in -4.0f64..4.0) {
            let p = path(&values);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (flo, fhi) = (empirical_cdf(&p, lo), empirical_cdf(&p, hi));
            prop_assert!(flo <= fhi);
            let steps = fhi * values.len() as f64;
            prop_assert!((steps - steps.round()).abs() < 1e-9);
        }

        #[test]
        fn sandwich_holds(values in prop::collection::vec(-3.0f64..3.0, 1..30),
                          alpha in -3.5f64..3.5, m in 1u32..6) {
            let grid = ThresholdGrid::dyadic_quantiles(m, 1.0).unwrap();
            let mesh = (-(m as f64)).exp2();
            let sw = sandwich(&path(&values), &grid, mesh, 1.0, alpha).unwrap();
            prop_assert!(sw.lower <= sw.value && sw.value <= sw.upper, "{sw:?}");
        }
    }
}
