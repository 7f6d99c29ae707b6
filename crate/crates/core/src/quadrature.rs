//! Gauss–Hermite quadrature against the Gaussian probability measure.
//!
//! Nodes are the roots of the normalized Hermite polynomial `H_N`. They are
//! seeded by the eigenvalues of the symmetric Jacobi matrix (off-diagonal
//! `√k`), polished by Newton steps on the three-term recurrence, and weighted
//! with the Christoffel numbers `w_i = 1 / Σ_{k<N} H_k(x_i)²`. Weights are then
//! normalized to sum to one, so `Σ w_i f(x_i) ≈ E f(Z)` for `Z ~ N(0, 1)` and the
//! rule is exact for polynomials of degree `≤ 2N − 1`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hermite::hermite_values_unchecked;

pub const DEFAULT_ORDER: usize = 128;
pub const MAX_ORDER: usize = 256;

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(Error::invalid(format!(
                "quadrature order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(f64::total_cmp);

        let mut buf = Vec::with_capacity(order + 1);
        for x in nodes.iter_mut() {
            for _ in 0..8 {
                hermite_values_unchecked(order, *x, &mut buf);
                let deriv = (order as f64).sqrt() * buf[order - 1];
                if deriv == 0.0 {
                    break;
                }
                let step = buf[order] / deriv;
                *x -= step;
                if step.abs() <= 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        // Symmetrize: roots of H_N come in ± pairs.
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let r = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -r;
            nodes[j] = r;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }

        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                hermite_values_unchecked(order - 1, x, &mut buf);
                1.0 / buf.iter().map(|h| h * h).sum::<f64>()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);

        if nodes.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "Gauss–Hermite rule of order {order} produced non-finite values"
            )));
        }
        Ok(Self { nodes, weights })
    }

    /// The default 128-node rule, raised when `degree` (the total polynomial
    /// degree to integrate exactly) needs more nodes.
    pub fn for_degree(degree: usize) -> Result<Self> {
        Self::gauss_hermite(DEFAULT_ORDER.max(degree / 2 + 1))
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes for the standard normal.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ f dγ_s` where `γ_s = N(0, s²)`.
    pub fn integrate(&self, s: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(s * x))
            .sum()
    }
}
