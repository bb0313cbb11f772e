//! Θ_t, 𝒰_t, 𝓛_t, g*_λ (full, truncated, local), the Lusin area function and
//! the tail operator 𝒯.
//!
//! Space integrals are exact sums over atoms. Two routes are provided:
//!
//! * [`Mode::Fast`] uses the product structure of the kernels,
//!   `Θ_t(ν̄)(y) = amplitude · ∏ᵢ Σ_a φ(|y − a|, t) νᵢ(a)`, visits atoms in
//!   increasing distance and stops a sum once a rigorous bound on the
//!   remainder falls below `prune_tol` times the partial absolute sum.
//! * [`Mode::Naive`] evaluates the κ-fold sum over atom tuples literally,
//!   in storage order, without pruning. It is the oracle for the fast route.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{KernelSpec, SlotProfile};
use crate::measure::{distance, AtomicMeasure, Cube, Outside, Region, SampledFunction, SignedMeasure};
use crate::par;
use crate::quadrature::{Node, QuadratureSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Fast,
    Naive,
}

/// λ of the weight ϑ_t(x,y) = (t/(t+|x−y|))^{mλ}, with m copied from the kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaParams {
    pub lambda: f64,
    pub m: f64,
}

impl LambdaParams {
    pub fn new(lambda: f64, spec: &KernelSpec) -> Result<Self> {
        if !(lambda > 1.0 && lambda.is_finite()) {
            return Err(invalid("lambda", "must be a finite real greater than 1"));
        }
        Ok(LambdaParams { lambda, m: spec.m })
    }

    /// λ > 2κ and 0 < α ≤ m(λ − 2κ).
    pub fn check_hypotheses(&self, spec: &KernelSpec) -> Result<()> {
        let two_k = 2.0 * spec.kappa as f64;
        if !(self.lambda > two_k) {
            return Err(invalid("lambda", format!("need lambda > 2 kappa = {two_k}")));
        }
        if !(spec.alpha <= spec.m * (self.lambda - two_k)) {
            return Err(invalid(
                "alpha",
                format!("need alpha <= m (lambda - 2 kappa) = {}", spec.m * (self.lambda - two_k)),
            ));
        }
        Ok(())
    }

    #[inline]
    fn vartheta(&self, d: f64, t: f64) -> f64 {
        (t / (t + d)).powf(self.m * self.lambda)
    }

    #[inline]
    fn sqrt_vartheta(&self, d: f64, t: f64) -> f64 {
        (t / (t + d)).powf(self.m * self.lambda / 2.0)
    }
}

/// Which part of fᵢ enters a slot of 𝒯: fᵢ·1_{2Q} or fᵢ·1_{(2Q)ᶜ}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Near,
    Far,
}

fn check_slots(spec: &KernelSpec, n: usize, slots: &[SignedMeasure]) -> Result<()> {
    if slots.len() != spec.kappa {
        return Err(Error::LengthMismatch {
            what: "slot measures",
            expected: spec.kappa,
            got: slots.len(),
        });
    }
    for s in slots {
        if s.dim() != n && !s.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.dim(),
            });
        }
    }
    Ok(())
}

fn density_slots(spec: &KernelSpec, mu: &AtomicMeasure, fs: &[&SampledFunction]) -> Result<Vec<SignedMeasure>> {
    if fs.len() != spec.kappa {
        return Err(Error::LengthMismatch {
            what: "functions",
            expected: spec.kappa,
            got: fs.len(),
        });
    }
    fs.iter().map(|f| SignedMeasure::from_density(mu, f)).collect()
}

/// Slots sharing one coordinate array, sorted by distance from a point.
struct SortedGroup {
    dist: Vec<f64>,
    /// row-major: `values[k * width + c]` is the weight of atom k in column c
    values: Vec<f64>,
    width: usize,
    vmax: Vec<f64>,
    slot_ids: Vec<usize>,
}

/// Per-slot partial sums Σ_a φ(|y − a|, t) νᵢ(a) for the fast route.
struct SlotSums {
    groups: Vec<SortedGroup>,
    kappa: usize,
    profile: SlotProfile,
}

impl SlotSums {
    fn new(spec: &KernelSpec, slots: &[SignedMeasure], y: &[f64]) -> Self {
        let mut groups: Vec<SortedGroup> = Vec::new();
        let mut assigned = vec![false; slots.len()];
        for i in 0..slots.len() {
            if assigned[i] {
                continue;
            }
            let members: Vec<usize> = (i..slots.len())
                .filter(|&j| !assigned[j] && slots[j].coords() == slots[i].coords())
                .collect();
            for &j in &members {
                assigned[j] = true;
            }
            let base = &slots[i];
            let mut order: Vec<(f64, usize)> = base
                .iter()
                .enumerate()
                .map(|(a, (p, _))| (distance(y, p), a))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let width = members.len();
            let mut values = Vec::with_capacity(order.len() * width);
            for &(_, a) in &order {
                for &j in &members {
                    values.push(slots[j].weight(a));
                }
            }
            let vmax = members
                .iter()
                .map(|&j| slots[j].weights().iter().fold(0.0f64, |m, w| m.max(w.abs())))
                .collect();
            groups.push(SortedGroup {
                dist: order.iter().map(|o| o.0).collect(),
                values,
                width,
                vmax,
                slot_ids: members,
            });
        }
        SlotSums {
            groups,
            kappa: slots.len(),
            profile: spec.slot(),
        }
    }

    fn product(&self, t: f64, tol: f64, out: &mut Vec<f64>) -> f64 {
        out.clear();
        out.resize(self.kappa, 0.0);
        let mut acc = Vec::new();
        let mut abs = Vec::new();
        for g in &self.groups {
            acc.clear();
            acc.resize(g.width, 0.0);
            abs.clear();
            abs.resize(g.width, 0.0);
            let len = g.dist.len();
            for k in 0..len {
                let phi = self.profile.eval(g.dist[k], t);
                let row = &g.values[k * g.width..(k + 1) * g.width];
                for c in 0..g.width {
                    let term = phi * row[c];
                    acc[c] += term;
                    abs[c] += term.abs();
                }
                if tol > 0.0 {
                    let rest = (len - k - 1) as f64;
                    if (0..g.width).all(|c| phi * g.vmax[c] * rest <= tol * abs[c]) {
                        break;
                    }
                }
            }
            for (c, &j) in g.slot_ids.iter().enumerate() {
                out[j] = acc[c];
            }
        }
        out.iter().product()
    }
}

fn theta_fast(spec: &KernelSpec, slots: &[SignedMeasure], y: &[f64], t: f64, tol: f64) -> f64 {
    let sums = SlotSums::new(spec, slots, y);
    let mut buf = Vec::new();
    spec.amplitude * sums.product(t, tol, &mut buf)
}

fn theta_naive(spec: &KernelSpec, slots: &[SignedMeasure], y: &[f64], t: f64) -> f64 {
    if slots.iter().any(|s| s.is_empty()) {
        return 0.0;
    }
    let k = slots.len();
    let mut idx = vec![0usize; k];
    let mut total = 0.0;
    loop {
        let pts: Vec<&[f64]> = (0..k).map(|i| slots[i].point(idx[i])).collect();
        let w: f64 = (0..k).map(|i| slots[i].weight(idx[i])).product();
        total += spec.eval(y, &pts, t).expect("t > 0 and kappa slots") * w;
        let mut i = k;
        loop {
            if i == 0 {
                return total;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < slots[i].len() {
                break;
            }
            idx[i] = 0;
        }
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid("t", "must be a positive real"));
    }
    Ok(())
}

fn finite(v: f64, op: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Θ_t(ν̄)(y) for signed atomic measures ν₁, …, ν_κ.
pub fn theta_measures(spec: &KernelSpec, nus: &[SignedMeasure], y: &[f64], t: f64, mode: Mode, prune_tol: f64) -> Result<f64> {
    spec.validate()?;
    check_t(t)?;
    check_slots(spec, y.len(), nus)?;
    let v = match mode {
        Mode::Fast => theta_fast(spec, nus, y, t, prune_tol),
        Mode::Naive => theta_naive(spec, nus, y, t),
    };
    finite(v, "theta_measures")
}

/// Θ_t^μ(f̄)(y).
pub fn theta(spec: &KernelSpec, mu: &AtomicMeasure, fs: &[&SampledFunction], y: &[f64], t: f64, mode: Mode, prune_tol: f64) -> Result<f64> {
    let slots = density_slots(spec, mu, fs)?;
    theta_measures(spec, &slots, y, t, mode, prune_tol).map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFinite { op: "theta" },
        e => e,
    })
}

/// 𝓛_t(f)(x) = ∫ t^{α/4} / (t + |x − z|)^{m+α/4} |f(z)| dμ(z).
pub fn l_t(spec: &KernelSpec, mu: &AtomicMeasure, f: &SampledFunction, x: &[f64], t: f64) -> Result<f64> {
    check_t(t)?;
    f.check_on(mu)?;
    let a = spec.alpha / 4.0;
    let v = mu
        .iter()
        .zip(f.values())
        .map(|((p, w), v)| {
            let d = distance(x, p);
            (t / (t + d)).powf(a) * (t + d).powf(-spec.m) * v.abs() * w
        })
        .sum();
    finite(v, "l_t")
}

/// Precomputed Θ_t at every atom of μ for a fixed node set, from which g*,
/// the Lusin function and 𝒯 follow by one weighted sum per node.
pub struct Evaluator<'a> {
    lp: LambdaParams,
    mu: &'a AtomicMeasure,
    nodes: Vec<Node>,
    mode: Mode,
    prune_tol: f64,
    /// `theta[j][b]` = Θ_{t_j}(z_b)
    theta: Vec<Vec<f64>>,
    /// `mass[j][b]` = Θ_{t_j}(z_b)² μ_b / t_j^m
    mass: Vec<Vec<f64>>,
    node_max: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        spec: &KernelSpec,
        lp: LambdaParams,
        mu: &'a AtomicMeasure,
        slots: &[SignedMeasure],
        nodes: Vec<Node>,
        mode: Mode,
        prune_tol: f64,
    ) -> Result<Self> {
        spec.validate()?;
        check_slots(spec, mu.dim(), slots)?;
        for nd in &nodes {
            check_t(nd.t)?;
        }
        let per_atom: Vec<Vec<f64>> = par::map_range(mu.len(), |b| {
            let y = mu.point(b);
            match mode {
                Mode::Fast => {
                    let sums = SlotSums::new(spec, slots, y);
                    let mut buf = Vec::new();
                    nodes
                        .iter()
                        .map(|nd| spec.amplitude * sums.product(nd.t, prune_tol, &mut buf))
                        .collect()
                }
                Mode::Naive => nodes.iter().map(|nd| theta_naive(spec, slots, y, nd.t)).collect(),
            }
        });
        let mut theta = vec![Vec::with_capacity(mu.len()); nodes.len()];
        for row in &per_atom {
            for (j, v) in row.iter().enumerate() {
                theta[j].push(*v);
            }
        }
        if theta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "theta" });
        }
        let mass: Vec<Vec<f64>> = theta
            .iter()
            .zip(&nodes)
            .map(|(row, nd)| {
                let scale = nd.t.powf(-lp.m);
                row.iter()
                    .zip(mu.weights())
                    .map(|(th, w)| th * th * w * scale)
                    .collect()
            })
            .collect();
        let node_max = mass.iter().map(|row| row.iter().fold(0.0f64, |m, v| m.max(*v))).collect();
        Ok(Evaluator {
            lp,
            mu,
            nodes,
            mode,
            prune_tol,
            theta,
            mass,
            node_max,
        })
    }

    pub fn for_functions(
        spec: &KernelSpec,
        lp: LambdaParams,
        mu: &'a AtomicMeasure,
        fs: &[&SampledFunction],
        nodes: Vec<Node>,
        mode: Mode,
        prune_tol: f64,
    ) -> Result<Self> {
        let slots = density_slots(spec, mu, fs)?;
        Self::new(spec, lp, mu, &slots, nodes, mode, prune_tol)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Θ_{t_j} at the atoms of μ.
    pub fn theta_row(&self, j: usize) -> &[f64] {
        &self.theta[j]
    }

    /// Distances from x in visiting order (sorted for the fast route).
    fn visit_order(&self, key: impl Fn(usize) -> f64) -> Vec<(f64, usize)> {
        let mut v: Vec<(f64, usize)> = (0..self.mu.len()).map(|b| (key(b), b)).collect();
        if self.mode == Mode::Fast {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        v
    }

    fn pruned_node_sum(&self, j: usize, order: &[(f64, usize)], weight: impl Fn(f64, usize) -> f64, bound: impl Fn(f64) -> f64) -> f64 {
        let row = &self.mass[j];
        let len = order.len();
        let mut acc = 0.0;
        for (k, &(key, b)) in order.iter().enumerate() {
            acc += weight(key, b) * row[b];
            if self.mode == Mode::Fast && self.prune_tol > 0.0 {
                let rest = (len - k - 1) as f64;
                if bound(key) * self.node_max[j] * rest <= self.prune_tol * acc {
                    break;
                }
            }
        }
        acc
    }

    /// Per-node contributions w_j ∫ ϑ_{t_j}(x,y) |Θ_{t_j}(y)|² dμ(y)/t_j^m.
    pub fn g_star_terms(&self, x: &[f64]) -> Vec<f64> {
        let order = self.visit_order(|b| distance(x, self.mu.point(b)));
        self.nodes
            .iter()
            .enumerate()
            .map(|(j, nd)| {
                let t = nd.t;
                let inner = self.pruned_node_sum(
                    j,
                    &order,
                    |d, _| self.lp.vartheta(d, t),
                    |d| self.lp.vartheta(d, t),
                );
                nd.w * inner
            })
            .collect()
    }

    pub fn g_star(&self, x: &[f64]) -> Result<f64> {
        finite(self.g_star_terms(x).iter().sum::<f64>().sqrt(), "g_star")
    }

    /// Per-node contributions of the Lusin area function (cone |x − y| ≤ t).
    pub fn lusin_terms(&self, x: &[f64]) -> Vec<f64> {
        let order = self.visit_order(|b| distance(x, self.mu.point(b)));
        self.nodes
            .iter()
            .enumerate()
            .map(|(j, nd)| {
                let row = &self.mass[j];
                let inner: f64 = order
                    .iter()
                    .filter(|(d, _)| *d <= nd.t)
                    .map(|&(_, b)| row[b])
                    .sum();
                nd.w * inner
            })
            .collect()
    }

    pub fn lusin(&self, x: &[f64]) -> Result<f64> {
        finite(self.lusin_terms(x).iter().sum::<f64>().sqrt(), "lusin_area")
    }

    /// 𝒯 with the difference weight 𝒱_{t,y}(x, x')².
    pub fn tail(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        let dx: Vec<f64> = (0..self.mu.len()).map(|b| distance(x, self.mu.point(b))).collect();
        let dxp: Vec<f64> = (0..self.mu.len()).map(|b| distance(xp, self.mu.point(b))).collect();
        let order = self.visit_order(|b| dx[b].min(dxp[b]));
        let total: f64 = self
            .nodes
            .iter()
            .enumerate()
            .map(|(j, nd)| {
                let t = nd.t;
                let inner = self.pruned_node_sum(
                    j,
                    &order,
                    |_, b| {
                        let v = self.lp.sqrt_vartheta(dx[b], t) - self.lp.sqrt_vartheta(dxp[b], t);
                        v * v
                    },
                    |dmin| self.lp.vartheta(dmin, t),
                );
                nd.w * inner
            })
            .sum();
        finite(total.sqrt(), "tail_T")
    }

    /// g* at many points, in input order.
    pub fn g_star_many(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        par::map(xs, |x| self.g_star(x)).into_iter().collect()
    }
}

/// 𝒰_t(f̄)(x) = (∫ ϑ_t(x,y) |Θ_t(y)|² dμ(y)/t^m)^{1/2}.
#[allow(clippy::too_many_arguments)]
pub fn u_t(spec: &KernelSpec, lp: LambdaParams, mu: &AtomicMeasure, fs: &[&SampledFunction], x: &[f64], t: f64, mode: Mode, prune_tol: f64) -> Result<f64> {
    check_t(t)?;
    let ev = Evaluator::for_functions(spec, lp, mu, fs, vec![Node { t, w: 1.0 }], mode, prune_tol)?;
    ev.g_star(x).map_err(|_| Error::NonFinite { op: "u_t" })
}

/// g*_{λ,μ}(f̄)(x) over the whole quadrature window.
pub fn g_star(spec: &KernelSpec, lp: LambdaParams, mu: &AtomicMeasure, fs: &[&SampledFunction], x: &[f64], quad: &QuadratureSpec, mode: Mode) -> Result<f64> {
    quad.validate()?;
    let ev = Evaluator::for_functions(spec, lp, mu, fs, quad.nodes(), mode, quad.prune_tol)?;
    ev.g_star(x)
}

/// g*_{λ,μ,t₀}: scales t ≥ t₀ only.
#[allow(clippy::too_many_arguments)]
pub fn g_star_truncated(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    fs: &[&SampledFunction],
    x: &[f64],
    t0: f64,
    quad: &QuadratureSpec,
    mode: Mode,
) -> Result<f64> {
    quad.validate()?;
    if !(t0 >= quad.t_min && t0 <= quad.t_max) {
        return Err(invalid("t0", format!("must lie in [{}, {}]", quad.t_min, quad.t_max)));
    }
    let ev = Evaluator::for_functions(spec, lp, mu, fs, quad.nodes_between(t0, quad.t_max), mode, quad.prune_tol)?;
    ev.g_star(x)
}

/// g*_{λ,μ,Q}: scales t < ℓ(Q) only.
#[allow(clippy::too_many_arguments)]
pub fn g_star_local(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    fs: &[&SampledFunction],
    x: &[f64],
    q: &Cube,
    quad: &QuadratureSpec,
    mode: Mode,
) -> Result<f64> {
    quad.validate()?;
    let ev = Evaluator::for_functions(spec, lp, mu, fs, quad.nodes_between(quad.t_min, q.side), mode, quad.prune_tol)?;
    ev.g_star(x)
}

/// Lusin area function S_μ(f̄)(x) with cone |x − y| ≤ t.
pub fn lusin_area(spec: &KernelSpec, mu: &AtomicMeasure, fs: &[&SampledFunction], x: &[f64], quad: &QuadratureSpec, mode: Mode) -> Result<f64> {
    quad.validate()?;
    // λ plays no role in the cone integral
    let lp = LambdaParams { lambda: 2.0, m: spec.m };
    let ev = Evaluator::for_functions(spec, lp, mu, fs, quad.nodes(), mode, quad.prune_tol)?;
    ev.lusin(x)
}

/// Split functions f̄^r for a cube Q: slot i is fᵢ 1_{2Q} or fᵢ 1_{(2Q)ᶜ}.
pub fn split_functions(mu: &AtomicMeasure, fs: &[&SampledFunction], splits: &[Split], q: &Cube) -> Result<Vec<SampledFunction>> {
    if splits.len() != fs.len() {
        return Err(Error::LengthMismatch {
            what: "split pattern",
            expected: fs.len(),
            got: splits.len(),
        });
    }
    if !splits.contains(&Split::Far) {
        return Err(invalid("splits", "at least one slot must be the far part"));
    }
    let two_q = q.dilate(2.0);
    fs.iter()
        .zip(splits)
        .map(|(f, s)| {
            f.check_on(mu)?;
            Ok(match s {
                Split::Near => f.masked(mu, &two_q, true),
                Split::Far => f.masked(mu, &Outside(&two_q), true),
            })
        })
        .collect()
}

/// 𝒯(f̄^r)(x) for x, x' ∈ Q over scales t ≥ c₀ℓ(Q).
#[allow(clippy::too_many_arguments)]
pub fn tail_t(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    fs: &[&SampledFunction],
    splits: &[Split],
    x: &[f64],
    xp: &[f64],
    q: &Cube,
    c0: f64,
    quad: &QuadratureSpec,
    mode: Mode,
) -> Result<f64> {
    quad.validate()?;
    if !(c0 > 0.0) {
        return Err(invalid("c0", "must be positive"));
    }
    if !q.contains(x) || !q.contains(xp) {
        return Err(invalid("x", "both evaluation points must lie in Q"));
    }
    let parts = split_functions(mu, fs, splits, q)?;
    let refs: Vec<&SampledFunction> = parts.iter().collect();
    let nodes = quad.nodes_between(c0 * q.side, quad.t_max);
    let ev = Evaluator::for_functions(spec, lp, mu, &refs, nodes, mode, quad.prune_tol)?;
    ev.tail(x, xp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> KernelSpec {
        KernelSpec::poisson(1.0, 1.0, 2)
    }

    fn two_atoms() -> AtomicMeasure {
        AtomicMeasure::new(1, [(vec![0.0], 0.5), (vec![1.0], 0.5)]).unwrap()
    }

    #[test]
    fn theta_zero_slot_and_single_atom() {
        let mu = AtomicMeasure::new(1, [(vec![0.2], 0.7)]).unwrap();
        let a = SampledFunction::new(vec![1.5]);
        let b = SampledFunction::new(vec![-2.0]);
        let z = SampledFunction::zeros(&mu);
        for mode in [Mode::Fast, Mode::Naive] {
            assert_eq!(theta(&spec(), &mu, &[&a, &z], &[0.0], 0.5, mode, 0.0).unwrap(), 0.0);
            let v = theta(&spec(), &mu, &[&a, &b], &[0.0], 0.5, mode, 0.0).unwrap();
            let s = spec().eval(&[0.0], &[&[0.2], &[0.2]], 0.5).unwrap();
            assert!((v - s * 1.5 * -2.0 * 0.49).abs() < 1e-15);
        }
    }

    #[test]
    fn theta_measures_cancelling_atoms_vanish() {
        let beta = SignedMeasure::new(1, [(vec![0.3], 0.4), (vec![0.3], -0.4)]).unwrap();
        let other = SignedMeasure::new(1, [(vec![0.0], 1.0)]).unwrap();
        let v = theta_measures(&spec(), &[beta, other], &[0.1], 1.0, Mode::Fast, 0.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn single_atom_u_t_and_l_t() {
        let mu = AtomicMeasure::new(1, [(vec![0.4], 0.3)]).unwrap();
        let f = SampledFunction::new(vec![2.0]);
        let lp = LambdaParams::new(5.0, &spec()).unwrap();
        let (x, t) = ([0.0], 0.25);
        let th = theta(&spec(), &mu, &[&f, &f], &[0.4], t, Mode::Naive, 0.0).unwrap();
        let expected = (t / (t + 0.4f64)).powf(5.0).sqrt() * th.abs() * (0.3 / t).sqrt();
        let got = u_t(&spec(), lp, &mu, &[&f, &f], &x, t, Mode::Fast, 0.0).unwrap();
        assert!((got - expected).abs() <= 1e-14 * expected);
        let at = l_t(&spec(), &mu, &f, &[0.4], t).unwrap();
        assert!((at - 2.0 * 0.3 / t).abs() < 1e-14);
        assert_eq!(l_t(&spec(), &mu, &SampledFunction::zeros(&mu), &x, t).unwrap(), 0.0);
    }

    #[test]
    fn truncation_and_local_edge_cases() {
        let mu = two_atoms();
        let f = SampledFunction::new(vec![1.0, -0.5]);
        let fs = [&f, &f];
        let lp = LambdaParams::new(5.0, &spec()).unwrap();
        let q = QuadratureSpec::default_for(&mu);
        let x = [0.3];
        let full = g_star(&spec(), lp, &mu, &fs, &x, &q, Mode::Fast).unwrap();
        let at_min = g_star_truncated(&spec(), lp, &mu, &fs, &x, q.t_min, &q, Mode::Fast).unwrap();
        assert_eq!(full, at_min);
        assert_eq!(g_star_truncated(&spec(), lp, &mu, &fs, &x, q.t_max, &q, Mode::Fast).unwrap(), 0.0);
        assert!(g_star_truncated(&spec(), lp, &mu, &fs, &x, q.t_min / 2.0, &q, Mode::Fast).is_err());
        let small = Cube::new(vec![0.0], q.t_min);
        assert_eq!(g_star_local(&spec(), lp, &mu, &fs, &x, &small, &q, Mode::Fast).unwrap(), 0.0);
        let big = Cube::new(vec![0.0], 2.0 * q.t_max);
        assert_eq!(g_star_local(&spec(), lp, &mu, &fs, &x, &big, &q, Mode::Fast).unwrap(), full);
    }

    #[test]
    fn tail_vanishes_on_diagonal_and_rejects_all_near() {
        let mu = AtomicMeasure::new(1, [(vec![0.0], 0.5), (vec![0.2], 0.5), (vec![3.0], 1.0)]).unwrap();
        let f = SampledFunction::new(vec![1.0, 1.0, 1.0]);
        let lp = LambdaParams::new(5.0, &spec()).unwrap();
        let q = QuadratureSpec::default_for(&mu);
        let cube = Cube::new(vec![0.1], 0.5);
        let v = tail_t(&spec(), lp, &mu, &[&f, &f], &[Split::Far, Split::Near], &[0.0], &[0.0], &cube, 1.0, &q, Mode::Fast).unwrap();
        assert_eq!(v, 0.0);
        let v = tail_t(&spec(), lp, &mu, &[&f, &f], &[Split::Far, Split::Near], &[0.0], &[0.2], &cube, 1.0, &q, Mode::Fast).unwrap();
        assert!(v > 0.0);
        assert!(tail_t(&spec(), lp, &mu, &[&f, &f], &[Split::Near, Split::Near], &[0.0], &[0.2], &cube, 1.0, &q, Mode::Fast).is_err());
        assert!(tail_t(&spec(), lp, &mu, &[&f, &f], &[Split::Far, Split::Near], &[0.0], &[2.0], &cube, 1.0, &q, Mode::Fast).is_err());
    }

    #[test]
    fn lambda_hypotheses() {
        let s = spec();
        assert!(LambdaParams::new(5.0, &s).unwrap().check_hypotheses(&s).is_ok());
        assert!(LambdaParams::new(4.0, &s).unwrap().check_hypotheses(&s).is_err());
        assert!(LambdaParams::new(4.5, &s).unwrap().check_hypotheses(&s).is_err());
        assert!(LambdaParams::new(1.0, &s).is_err());
    }
}
