//! Gauss–Hermite quadrature for Gaussian expectations.

use std::num::NonZeroUsize;

use crate::error::{Error, Result};

/// Nodes and weights for `∫ g(x) e^{-x²} dx ≈ Σ w_i g(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// `n`-point rule, nodes in ascending order.
    pub fn new(n: usize) -> Result<Self> {
        let deg = NonZeroUsize::new(n)
            .ok_or_else(|| Error::invalid("quadrature_nodes", "must be at least 1"))?;
        let rule = gauss_quad::hermite::GaussHermite::new(deg);
        let (nodes, weights) = rule.iter().map(|(x, w)| (*x, *w)).unzip();
        Ok(Self { nodes, weights })
    }

    /// Nodes and probability weights for `E[g(Y)]`, `Y ~ N(mean, variance)`.
    pub fn normal_rule(&self, mean: f64, variance: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let scale = (2.0 * variance).sqrt();
        let norm = std::f64::consts::PI.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mean + scale * x, w / norm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1, 2, 5, 16, 64, 128] {
            let gh = GaussHermite::new(n).unwrap();
            let total: f64 = gh.weights.iter().sum();
            assert!((total - std::f64::consts::PI.sqrt()).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn gaussian_moments() {
        let gh = GaussHermite::new(64).unwrap();
        let (mu, var) = (1.3, 5.0);
        let m = |p: i32| {
            gh.normal_rule(mu, var)
                .map(|(y, w)| w * (y - mu).powi(p))
                .sum::<f64>()
        };
        assert!(m(0) - 1.0 < 1e-13);
        assert!(m(1).abs() < 1e-12);
        assert!((m(2) - var).abs() < 1e-11);
        assert!((m(4) - 3.0 * var * var).abs() < 1e-9);
    }

    #[test]
    fn known_three_point_rule() {
        let gh = GaussHermite::new(3).unwrap();
        let r = (1.5f64).sqrt();
        assert!((gh.nodes[0] + r).abs() < 1e-14);
        assert!(gh.nodes[1].abs() < 1e-14);
        assert!((gh.nodes[2] - r).abs() < 1e-14);
        assert!((gh.weights[1] - 2.0 * std::f64::consts::PI.sqrt() / 3.0).abs() < 1e-14);
        assert!(GaussHermite::new(0).is_err());
    }
}
