//! One-dimensional quadrature rules on a finite interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    Trapezoid,
    GaussLegendre,
}

/// Grid used to evaluate overlap integrals numerically.
///
/// `half_range` is measured in units of the PSF width; the grid is centred on
/// the midpoint of the two shifted copies of the PSF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    pub half_range: f64,
    pub node_count: usize,
    pub rule: QuadratureRule,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            half_range: 12.0,
            node_count: 2001,
            rule: QuadratureRule::Trapezoid,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_range > 0.0) || !self.half_range.is_finite() {
            return Err(Error::InvalidInput(format!(
                "quadrature half_range must be positive, got {}",
                self.half_range
            )));
        }
        if self.node_count < 3 || self.node_count % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "quadrature node_count must be odd and >= 3, got {}",
                self.node_count
            )));
        }
        Ok(())
    }

    /// Nodes and weights on `[lo, hi]`.
    pub fn nodes(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        match self.rule {
            QuadratureRule::Trapezoid => trapezoid_nodes(lo, hi, self.node_count),
            QuadratureRule::GaussLegendre => gauss_legendre_nodes(lo, hi, self.node_count),
        }
    }
}

pub fn trapezoid_nodes(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 2);
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            (lo + h * i as f64, w)
        })
        .collect()
}

/// Gauss-Legendre nodes by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre_nodes(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let mid = 0.5 * (hi + lo);
    let half = 0.5 * (hi - lo);
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        out[i] = (mid - half * z, half * w);
        out[n - 1 - i] = (mid + half * z, half * w);
    }
    out
}

/// Integrate `f` over `[lo, hi]` with the configured rule.
pub fn integrate<F: Fn(f64) -> f64>(cfg: &QuadratureConfig, lo: f64, hi: f64, f: F) -> f64 {
    cfg.nodes(lo, hi).into_iter().map(|(x, w)| w * f(x)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let nodes = gauss_legendre_nodes(-1.0, 2.0, 5);
        // exact up to degree 9
        let s: f64 = nodes.iter().map(|(x, w)| w * x.powi(9)).sum();
        let exact = (2f64.powi(10) - 1.0) / 10.0;
        assert!((s - exact).abs() < 1e-11, "{s} vs {exact}");
        let wsum: f64 = nodes.iter().map(|(_, w)| w).sum();
        assert!((wsum - 3.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let nodes = trapezoid_nodes(-3.0, 5.0, 11);
        let wsum: f64 = nodes.iter().map(|(_, w)| w).sum();
        assert!((wsum - 8.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_even_node_count() {
        let cfg = QuadratureConfig {
            node_count: 2000,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(QuadratureConfig::default().validate().is_ok());
    }
}
