//! Log-uniform midpoint rule for ∫ F(t) dt/t.
//!
//! `[t_min, t_max]` is cut into `N = ⌈nodes_per_decade · log₁₀(t_max/t_min)⌉`
//! geometric cells. Each cell contributes `F(√(lo·hi)) · ln(hi/lo)`. A window
//! `[a, b]` clips the cells; a clipped cell keeps the same rule on its
//! remaining piece, so clipping at an edge leaves the other cells untouched.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measure::AtomicMeasure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub t_min: f64,
    pub t_max: f64,
    #[serde(default = "default_npd")]
    pub nodes_per_decade: usize,
    #[serde(default)]
    pub prune_tol: f64,
}

fn default_npd() -> usize {
    32
}

/// One quadrature node: evaluate at `t`, weight `w` against dt/t.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub t: f64,
    pub w: f64,
}

impl QuadratureSpec {
    pub fn new(t_min: f64, t_max: f64, nodes_per_decade: usize) -> Result<Self> {
        let q = QuadratureSpec {
            t_min,
            t_max,
            nodes_per_decade,
            prune_tol: 0.0,
        };
        q.validate()?;
        Ok(q)
    }

    /// t_min = (min separation)/8, t_max = 8·(diameter + 1), 32 nodes per decade.
    pub fn default_for(mu: &AtomicMeasure) -> Self {
        let sep = mu.min_separation().unwrap_or(1.0);
        QuadratureSpec {
            t_min: sep / 8.0,
            t_max: 8.0 * (mu.diameter() + 1.0),
            nodes_per_decade: 32,
            prune_tol: 0.0,
        }
    }

    pub fn with_prune_tol(mut self, tol: f64) -> Self {
        self.prune_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min.is_finite()) {
            return Err(invalid("t_min", "must be a positive real"));
        }
        if !(self.t_max > self.t_min && self.t_max.is_finite()) {
            return Err(invalid("t_max", "must be finite and exceed t_min"));
        }
        if self.nodes_per_decade < 4 {
            return Err(invalid("nodes_per_decade", "must be at least 4"));
        }
        if !(self.prune_tol >= 0.0 && self.prune_tol < 1.0) {
            return Err(invalid("prune_tol", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Reference rule used as the quadrature oracle: eight times the node
    /// density and eight times the upper limit.
    pub fn refined(&self) -> Self {
        QuadratureSpec {
            t_min: self.t_min,
            t_max: self.t_max * 8.0,
            nodes_per_decade: self.nodes_per_decade * 8,
            prune_tol: self.prune_tol,
        }
    }

    pub fn cell_count(&self) -> usize {
        let n = (self.nodes_per_decade as f64 * (self.t_max / self.t_min).log10()).ceil();
        (n as usize).max(1)
    }

    /// Cell edges e_0 = t_min < … < e_N = t_max.
    pub fn edges(&self) -> Vec<f64> {
        let n = self.cell_count();
        let (a, b) = (self.t_min.ln(), self.t_max.ln());
        let mut e: Vec<f64> = (0..=n)
            .map(|j| (a + (b - a) * j as f64 / n as f64).exp())
            .collect();
        e[0] = self.t_min;
        e[n] = self.t_max;
        e
    }

    /// All nodes of the rule.
    pub fn nodes(&self) -> Vec<Node> {
        self.nodes_between(self.t_min, self.t_max)
    }

    /// Nodes of the rule restricted to `[lo, hi]`. Bounds within 1e-12
    /// (relative) of an edge are snapped to it.
    pub fn nodes_between(&self, lo: f64, hi: f64) -> Vec<Node> {
        let edges = self.edges();
        let snap = |v: f64| {
            edges
                .iter()
                .copied()
                .find(|e| (v - e).abs() <= 1e-12 * e)
                .unwrap_or(v)
        };
        let (lo, hi) = (snap(lo.max(self.t_min)), snap(hi.min(self.t_max)));
        let mut out = Vec::new();
        if !(lo < hi) {
            return out;
        }
        for pair in edges.windows(2) {
            let (a, b) = (pair[0].max(lo), pair[1].min(hi));
            if a < b {
                out.push(Node {
                    t: (a * b).sqrt(),
                    w: (b / a).ln(),
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_integrate_dt_over_t_exactly() {
        let q = QuadratureSpec::new(1e-3, 50.0, 16).unwrap();
        let total: f64 = q.nodes().iter().map(|n| n.w).sum();
        assert!((total - (50.0f64 / 1e-3).ln()).abs() < 1e-12);
        assert_eq!(q.nodes().len(), q.cell_count());
        let part: f64 = q.nodes_between(0.1, 2.0).iter().map(|n| n.w).sum();
        assert!((part - 20.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn clipping_at_an_edge_partitions_the_nodes() {
        let q = QuadratureSpec::new(0.01, 100.0, 8).unwrap();
        let e = q.edges()[13];
        let mut joined = q.nodes_between(q.t_min, e);
        joined.extend(q.nodes_between(e, q.t_max));
        assert_eq!(joined, q.nodes());
        assert!(q.nodes_between(q.t_max, q.t_max).is_empty());
        assert_eq!(q.nodes_between(0.0, 1e9), q.nodes());
    }

    #[test]
    fn rejects_bad_windows() {
        assert!(QuadratureSpec::new(1.0, 1.0, 32).is_err());
        assert!(QuadratureSpec::new(0.0, 1.0, 32).is_err());
        assert!(QuadratureSpec::new(0.1, 1.0, 3).is_err());
    }

    #[test]
    fn midpoint_rule_converges_for_smooth_integrand() {
        // ∫_{1e-2}^{1e2} t/(1+t)² dt/t = [−1/(1+t)] = 1/1.01 − 1/101
        let exact = 1.0 / 1.01 - 1.0 / 101.0;
        let q = QuadratureSpec::new(1e-2, 1e2, 32).unwrap();
        let approx: f64 = q.nodes().iter().map(|n| n.w * n.t / (1.0 + n.t).powi(2)).sum();
        assert!((approx - exact).abs() / exact < 1e-3);
    }
}
