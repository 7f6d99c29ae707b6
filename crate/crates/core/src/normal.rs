//! Standard normal CDF and quantile, extended to `±∞`.

use statrs::distribution::{ContinuousCDF, Normal};

/// `Φ(x)`; `Φ(-∞) = 0`, `Φ(+∞) = 1`.
pub fn cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x == f64::INFINITY {
        1.0
    } else {
        0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
    }
}

/// `Φ⁻¹(p)` for `p ∈ [0, 1]`, with the endpoints mapped to `∓∞`.
pub fn quantile(p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p), "quantile of {p}");
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else if p == 0.5 {
        0.0
    } else {
        let mut x = standard().inverse_cdf(p);
        // Newton on Φ(x) = p against the more accurate cdf
        for _ in 0..2 {
            let density = pdf(x);
            if density == 0.0 {
                break;
            }
            x -= (cdf(x) - p) / density;
        }
        x
    }
}

pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn standard() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert_eq!(cdf(0.0), 0.5);
        assert!((quantile(0.75) - 0.674_489_750_196_081_7).abs() < 1e-13);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!((cdf(quantile(p)) - p).abs() < 1e-14, "p = {p}");
        }
    }

    #[test]
    fn infinite_endpoints() {
        assert_eq!(cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(cdf(f64::INFINITY), 1.0);
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
        assert_eq!(quantile(1.0), f64::INFINITY);
    }
}
