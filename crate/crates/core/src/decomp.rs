//! Whitney decomposition of a finite union of open boxes and the
//! Calderón–Zygmund decomposition of a signed atomic measure.

use serde::{Deserialize, Serialize};

use crate::dyadic::{children, locate, realize_cube, DyadicCube, ShiftSequence};
use crate::error::{invalid, Error, Result};
use crate::measure::{
    boundary_band_mass, default_xi_grid, has_small_boundary, is_doubling_cube, AtomicMeasure, Cube, Point, Region,
    SampledFunction, SignedMeasure,
};

// ------------------------------------------------------------------ Whitney

/// Finite union of open boxes `(lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxUnion {
    pub n: usize,
    pub boxes: Vec<(Point, Point)>,
}

impl BoxUnion {
    pub fn new(n: usize, boxes: Vec<(Point, Point)>) -> Result<Self> {
        for (lo, hi) in &boxes {
            if lo.len() != n || hi.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: lo.len().max(hi.len()),
                });
            }
            if lo.iter().chain(hi).any(|v| !v.is_finite()) {
                return Err(invalid("boxes", "box corners must be finite"));
            }
        }
        // empty boxes contribute nothing
        let boxes = boxes
            .into_iter()
            .filter(|(lo, hi)| lo.iter().zip(hi).all(|(a, b)| a < b))
            .collect();
        Ok(BoxUnion { n, boxes })
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Smallest closed box containing every open box.
    pub fn hull(&self) -> Option<(Point, Point)> {
        let first = self.boxes.first()?;
        let (mut lo, mut hi) = first.clone();
        for (a, b) in &self.boxes[1..] {
            for k in 0..self.n {
                lo[k] = lo[k].min(a[k]);
                hi[k] = hi[k].max(b[k]);
            }
        }
        Some((lo, hi))
    }

    /// A point of the half-open box `[lo, hi)` outside the union, if any.
    ///
    /// Along each axis the box endpoints cut `[lo, hi)` into single points and
    /// open gaps; membership is constant on products of these pieces, so one
    /// representative per piece decides the question exactly.
    pub fn uncovered_point(&self, lo: &[f64], hi: &[f64]) -> Option<Point> {
        let reps: Vec<Vec<f64>> = (0..self.n)
            .map(|k| {
                let mut cuts: Vec<f64> = vec![lo[k]];
                for (a, b) in &self.boxes {
                    for v in [a[k], b[k]] {
                        if v > lo[k] && v < hi[k] {
                            cuts.push(v);
                        }
                    }
                }
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                let mut r = cuts.clone();
                for w in cuts.windows(2) {
                    r.push(0.5 * (w[0] + w[1]));
                }
                r.push(0.5 * (cuts[cuts.len() - 1] + hi[k]));
                r
            })
            .collect();
        let mut idx = vec![0usize; self.n];
        loop {
            let p: Point = (0..self.n).map(|k| reps[k][idx[k]]).collect();
            if !self.contains(&p) {
                return Some(p);
            }
            let mut k = self.n;
            loop {
                if k == 0 {
                    return None;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < reps[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    pub fn contains_cube(&self, q: &Cube) -> bool {
        self.uncovered_point(&q.lower(), &q.upper()).is_none()
    }
}

impl Region for BoxUnion {
    fn contains(&self, p: &[f64]) -> bool {
        self.boxes
            .iter()
            .any(|(lo, hi)| p.iter().zip(lo.iter().zip(hi)).all(|(x, (a, b))| a < x && x < b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyParams {
    pub rho: f64,
    /// level of the first cubes examined; `None` picks one above the hull
    pub top_level: Option<i32>,
    /// deepest level examined below `top_level`
    pub max_depth: u32,
    pub small_boundary_c: f64,
    pub xi_grid: Vec<f64>,
}

impl WhitneyParams {
    pub fn for_dim(n: usize) -> Self {
        WhitneyParams {
            rho: 21.0,
            top_level: None,
            max_depth: 60,
            small_boundary_c: 8.0 * n as f64,
            xi_grid: default_xi_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subcube {
    /// index into `WhitneyResult::cubes`
    pub parent: usize,
    pub dilation: f64,
    pub cube: Cube,
    pub mass: f64,
    pub doubling_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneyResult {
    pub cubes: Vec<DyadicCube>,
    pub realized: Vec<Cube>,
    pub rho: f64,
    /// realized overlap bound: max_i #{j : 10Q_i ∩ 10Q_j ≠ ∅}
    pub rho0: usize,
    pub subfamily: Vec<Subcube>,
    pub mass_omega: f64,
    pub mass_subfamily: f64,
    /// (1) 10Q_i ⊂ Ω for every i
    pub prop1: bool,
    /// (2) ρQ_i meets Ωᶜ for every i
    pub prop2: bool,
    /// every atom of μ in Ω lies in some Q_i
    pub covers_atoms: bool,
    /// (c) μ(∪Q̃_j) ≥ μ(Ω)/(8ρ₀)
    pub prop_c: bool,
}

/// Maximal 𝒟₀ cubes with 10Q ⊂ Ω, visited top-down and only where μ has
/// atoms in Ω, plus a disjoint doubling subfamily with small boundaries.
pub fn whitney(omega: &BoxUnion, mu: &AtomicMeasure, params: &WhitneyParams) -> Result<WhitneyResult> {
    let n = omega.n;
    if mu.dim() != n && !mu.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: mu.dim(),
        });
    }
    if !(params.rho > 20.0) {
        return Err(invalid("rho", "must exceed 20"));
    }
    let Some((hlo, hhi)) = omega.hull() else {
        return Ok(WhitneyResult {
            cubes: Vec::new(),
            realized: Vec::new(),
            rho: params.rho,
            rho0: 1,
            subfamily: Vec::new(),
            mass_omega: 0.0,
            mass_subfamily: 0.0,
            prop1: true,
            prop2: true,
            covers_atoms: true,
            prop_c: true,
        });
    };
    let width = hlo.iter().zip(&hhi).map(|(a, b)| b - a).fold(0.0, f64::max);
    let top = params
        .top_level
        .unwrap_or_else(|| width.log2().ceil() as i32 + 1);
    let grid = ShiftSequence::zero(top - params.max_depth as i32 - 1, top + 1, n);

    let inside: Vec<usize> = (0..mu.len()).filter(|&a| omega.contains(mu.point(a))).collect();
    let mass_omega: f64 = inside.iter().map(|&a| mu.weight(a)).fold(0.0, |s, w| s + w);

    let mut cubes = Vec::new();
    let mut stack: Vec<(DyadicCube, Vec<usize>)> = {
        let mut roots: std::collections::BTreeMap<DyadicCube, Vec<usize>> = Default::default();
        for &a in &inside {
            roots.entry(locate(mu.point(a), top, &grid)).or_default().push(a);
        }
        roots.into_iter().rev().collect()
    };
    while let Some((c, atoms)) = stack.pop() {
        let q = realize_cube(&c, &grid);
        if omega.contains_cube(&q.dilate(10.0)) {
            cubes.push(c);
            continue;
        }
        if c.level <= top - params.max_depth as i32 {
            return Err(Error::Precondition(format!(
                "no Whitney cube found above level {} for an atom of the open set",
                c.level
            )));
        }
        let kids = children(&c, &grid);
        for k in kids.into_iter().rev() {
            let kq = realize_cube(&k, &grid);
            let sub: Vec<usize> = atoms.iter().copied().filter(|&a| kq.contains(mu.point(a))).collect();
            if !sub.is_empty() {
                stack.push((k, sub));
            }
        }
    }
    cubes.sort();
    let realized: Vec<Cube> = cubes.iter().map(|c| realize_cube(c, &grid)).collect();

    let prop1 = realized.iter().all(|q| omega.contains_cube(&q.dilate(10.0)));
    let prop2 = realized.iter().all(|q| {
        let r = q.dilate(params.rho);
        omega.uncovered_point(&r.lower(), &r.upper()).is_some()
    });
    let covers_atoms = inside
        .iter()
        .all(|&a| realized.iter().any(|q| q.contains(mu.point(a))));

    let tens: Vec<Cube> = realized.iter().map(|q| q.dilate(10.0)).collect();
    let rho0 = tens
        .iter()
        .map(|a| tens.iter().filter(|b| a.intersects(b)).count())
        .max()
        .unwrap_or(1)
        .max(1);

    // greedy by mass over the candidates {Q, 1.05Q, 1.1Q}
    let mut order: Vec<(f64, usize)> = realized.iter().enumerate().map(|(i, q)| (mu.mass(q), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut subfamily: Vec<Subcube> = Vec::new();
    for (mass, i) in order {
        if mass <= 0.0 {
            continue;
        }
        for dil in [1.0, 1.05, 1.1] {
            let cand = realized[i].dilate(dil);
            let dc = is_doubling_cube(mu, &cand, 9.0, 2.0 * rho0 as f64);
            if !dc.doubling || !has_small_boundary(mu, &cand, params.small_boundary_c, &params.xi_grid) {
                continue;
            }
            if subfamily.iter().any(|s| s.cube.intersects(&cand)) {
                continue;
            }
            subfamily.push(Subcube {
                parent: i,
                dilation: dil,
                mass: mu.mass(&cand),
                cube: cand,
                doubling_ratio: dc.ratio,
            });
            break;
        }
    }
    let mass_subfamily: f64 = subfamily.iter().map(|s| s.mass).fold(0.0, |s, w| s + w);
    let prop_c = mass_subfamily >= mass_omega / (8.0 * rho0 as f64);
    Ok(WhitneyResult {
        cubes,
        realized,
        rho: params.rho,
        rho0,
        subfamily,
        mass_omega,
        mass_subfamily,
        prop1,
        prop2,
        covers_atoms,
        prop_c,
    })
}

// --------------------------------------------------------------------- CZ

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzParams {
    /// R_i must be (6, doubling_b)-doubling; default 6^{m+1}
    pub doubling_b: f64,
    pub max_dilation_steps: u32,
}

impl CzParams {
    pub fn for_m(m: f64) -> Self {
        CzParams {
            doubling_b: 6f64.powf(m + 1.0),
            max_dilation_steps: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzCube {
    /// ν-atom the cube is centred at
    pub center_atom: usize,
    pub cube: Cube,
    /// sup of the admissible sidelengths at the centre
    pub sup_side: f64,
    pub companion: Cube,
    pub companion_steps: u32,
    /// φ_i = c_i 1_{R_i}
    pub c: f64,
    pub nu_variation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzResult {
    pub xi: f64,
    pub threshold: f64,
    pub cubes: Vec<CzCube>,
    /// g on the atoms of μ
    pub g: SampledFunction,
    pub betas: Vec<SignedMeasure>,
    /// max_a Σ_i |φ_i(a)| / ξ
    pub cz5_constant: f64,
    /// max_i μ(R_i) ‖φ_i‖_∞ / |ν|(Q_i)
    pub cz6_constant: f64,
}

impl CzResult {
    /// w_i(x) = 1_{Q_i}(x) / Σ_k 1_{Q_k}(x).
    pub fn weight(&self, i: usize, x: &[f64]) -> f64 {
        if !self.cubes[i].cube.contains(x) {
            return 0.0;
        }
        let count = self.cubes.iter().filter(|c| c.cube.contains(x)).count();
        1.0 / count as f64
    }

    pub fn covered(&self, x: &[f64]) -> bool {
        self.cubes.iter().any(|c| c.cube.contains(x))
    }

    /// φ_i on the atoms of μ.
    pub fn phi(&self, i: usize, mu: &AtomicMeasure) -> SampledFunction {
        let c = &self.cubes[i];
        SampledFunction::new(
            mu.iter()
                .map(|(p, _)| if c.companion.contains(p) { c.c } else { 0.0 })
                .collect(),
        )
    }

    /// w_i ν as a signed measure.
    pub fn weighted_nu(&self, i: usize, nu: &SignedMeasure) -> SignedMeasure {
        nu.weighted_by(|p| self.weight(i, p))
    }
}

fn cube_offset(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// |ν|(Q(x,ℓ)) > τ μ(Q(x,2ℓ)).
fn holds(nu: &SignedMeasure, mu: &AtomicMeasure, x: &[f64], l: f64, tau: f64) -> bool {
    let q = Cube::new(x.to_vec(), l);
    nu.variation(&q) > tau * mu.mass(&q.dilate(2.0))
}

/// Exact supremum s of the admissible sidelengths at `x`, and a side in
/// (s/2, s] at which the condition holds. `None` if it never holds.
fn admissible_side(nu: &SignedMeasure, mu: &AtomicMeasure, x: &[f64], tau: f64) -> Option<(f64, f64)> {
    // |ν|(Q(x,ℓ)) changes at ℓ = 2·offset, μ(Q(x,2ℓ)) at ℓ = offset
    let mut bps: Vec<f64> = nu.iter().map(|(p, _)| 2.0 * cube_offset(x, p)).collect();
    bps.extend(mu.iter().map(|(p, _)| cube_offset(x, p)));
    bps.retain(|b| *b > 0.0);
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let first = bps.first().copied().unwrap_or(1.0);
    // candidate sides in increasing order: below everything, then each
    // breakpoint followed by the open gap above it
    let mut probes: Vec<(f64, Option<f64>)> = vec![(first / 2.0, None)];
    for (i, &b) in bps.iter().enumerate() {
        probes.push((b, Some(b)));
        let next = bps.get(i + 1).copied().unwrap_or(2.0 * b);
        probes.push((0.5 * (b + next), None));
    }
    let last = probes.iter().rposition(|(l, _)| holds(nu, mu, x, *l, tau))?;
    let (l, at_bp) = probes[last];
    if at_bp.is_some() {
        return Some((l, l));
    }
    // holding on the open gap (lo, s): s is the next breakpoint
    let lo = if last == 0 { 0.0 } else { probes[last - 1].0 };
    let s = probes.get(last + 1).map(|p| p.0).unwrap_or(f64::INFINITY);
    if !s.is_finite() {
        return None;
    }
    Some((s, 0.5 * (lo.max(s / 2.0) + s)))
}

/// Calderón–Zygmund decomposition of ν at level ξ with respect to μ.
///
/// Cubes are centred at ν-atoms with side in (s/2, s], s the supremum of
/// sides with |ν|(Q) > ξ/2^{n+1} μ(2Q); they are picked largest first,
/// skipping centres that are already covered.
pub fn cz_decompose(nu: &SignedMeasure, mu: &AtomicMeasure, xi: f64, params: &CzParams) -> Result<CzResult> {
    let n = mu.dim();
    if !nu.is_empty() && nu.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: nu.dim(),
        });
    }
    let total_mu = mu.total_mass();
    if !(total_mu > 0.0) {
        return Err(Error::Precondition("μ must have positive mass".into()));
    }
    let scale = 2f64.powi(n as i32 + 1);
    let need = scale * nu.total_variation() / total_mu;
    if !(xi > need) {
        return Err(Error::Precondition(format!("xi = {xi} must exceed 2^(n+1)‖ν‖/‖μ‖ = {need}")));
    }
    let tau = xi / scale;

    let mut cands: Vec<(f64, f64, usize)> = (0..nu.len())
        .filter_map(|a| admissible_side(nu, mu, nu.point(a), tau).map(|(s, l)| (s, l, a)))
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
    let mut chosen: Vec<(usize, Cube, f64)> = Vec::new();
    for (s, l, a) in cands {
        let x = nu.point(a);
        if chosen.iter().any(|(_, q, _)| q.contains(x)) {
            continue;
        }
        chosen.push((a, Cube::new(x.to_vec(), l), s));
    }

    let mut result = CzResult {
        xi,
        threshold: tau,
        cubes: Vec::with_capacity(chosen.len()),
        g: SampledFunction::zeros(mu),
        betas: Vec::new(),
        cz5_constant: 0.0,
        cz6_constant: 0.0,
    };
    for (a, q, s) in chosen {
        let nu_variation = nu.variation(&q);
        result.cubes.push(CzCube {
            center_atom: a,
            companion: q.clone(),
            cube: q,
            sup_side: s,
            companion_steps: 0,
            c: 0.0,
            nu_variation,
        });
    }
    for i in 0..result.cubes.len() {
        let q = result.cubes[i].cube.clone();
        let mut scanned = Vec::new();
        let mut found = None;
        for k in 1..=params.max_dilation_steps {
            let r = q.dilate(6f64.powi(k as i32));
            scanned.push(r.side);
            if mu.mass(&r) > 0.0 && is_doubling_cube(mu, &r, 6.0, params.doubling_b).doubling {
                found = Some((k, r));
                break;
            }
        }
        let Some((k, r)) = found else {
            return Err(Error::DoublingCubeNotFound { cube: i, scanned });
        };
        let wnu = result.weighted_nu(i, nu).total();
        let c = wnu / mu.mass(&r);
        let cube = &mut result.cubes[i];
        cube.companion = r;
        cube.companion_steps = k;
        cube.c = c;
    }

    // g = f 1_{outside} + Σ φ_i on the atoms of μ
    let mut g = Vec::with_capacity(mu.len());
    let mut phi_sum = vec![0.0; mu.len()];
    for (b, (p, w)) in mu.iter().enumerate() {
        let mut v = 0.0;
        if !result.covered(p) {
            let nu_here = nu.iter().find(|(q, _)| *q == p).map_or(0.0, |(_, v)| v);
            v += nu_here / w;
        }
        for c in &result.cubes {
            if c.companion.contains(p) {
                v += c.c;
                phi_sum[b] += c.c.abs();
            }
        }
        g.push(v);
    }
    result.g = SampledFunction::new(g);
    result.betas = (0..result.cubes.len())
        .map(|i| {
            let phi_mu = SignedMeasure::from_density(mu, &result.phi(i, mu))?.scaled(-1.0);
            result.weighted_nu(i, nu).add(&phi_mu)
        })
        .collect::<Result<_>>()?;
    result.cz5_constant = phi_sum.iter().fold(0.0f64, |m, v| m.max(*v)) / xi;
    result.cz6_constant = result
        .cubes
        .iter()
        .map(|c| mu.mass(&c.companion) * c.c.abs() / c.nu_variation)
        .fold(0.0, f64::max);
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CzVerification {
    pub cz1: bool,
    pub cz2: bool,
    pub cz2_etas: Vec<f64>,
    pub cz3: bool,
    pub companions_doubling: bool,
    /// max over atoms of |ν − gμ − Σβ_i| / ‖ν‖
    pub mass_identity_error: f64,
    /// max_i |β_i(ℝⁿ)| / |ν|(Q_i)
    pub vanishing_error: f64,
    /// max_i |∫φ_i dμ − (w_i ν)(ℝⁿ)| / |ν|(Q_i)
    pub cz4_error: f64,
}

/// Independent re-check of the CZ properties; the η grid is
/// {2.5, 3, 4, 6, 8, 16} plus the largest η fitting the working box
/// (a cube four times the support of μ and ν).
pub fn verify_cz(res: &CzResult, nu: &SignedMeasure, mu: &AtomicMeasure, params: &CzParams) -> CzVerification {
    let tau = res.threshold;
    let mut coords = mu.coords().to_vec();
    coords.extend_from_slice(nu.coords());
    let working = crate::measure::bounding_box(mu.dim(), &coords)
        .map(|(lo, hi)| 4.0 * lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max).max(1e-300))
        .unwrap_or(1.0);
    let cz1 = res
        .cubes
        .iter()
        .all(|c| nu.variation(&c.cube) > tau * mu.mass(&c.cube.dilate(2.0)));
    let mut etas_all = Vec::new();
    let cz2 = res.cubes.iter().all(|c| {
        let mut etas = vec![2.5, 3.0, 4.0, 6.0, 8.0, 16.0];
        let top = working / c.cube.side;
        if top > 2.0 {
            etas.push(top);
        }
        etas_all = etas.clone();
        etas.iter()
            .all(|&eta| nu.variation(&c.cube.dilate(eta)) <= tau * mu.mass(&c.cube.dilate(2.0 * eta)))
    });
    let cz3 = nu.iter().filter(|(p, _)| !res.covered(p)).all(|(p, v)| {
        match mu.iter().find(|(q, _)| *q == p) {
            Some((_, w)) => (v / w).abs() <= res.xi,
            None => false,
        }
    });
    let companions_doubling = res.cubes.iter().all(|c| {
        c.companion.side > 4.0 * c.cube.side
            && is_doubling_cube(mu, &c.companion, 6.0, params.doubling_b).doubling
    });

    // ν − gμ − Σβ_i on the union of all atom positions
    let mut total = SignedMeasure::from_density(mu, &res.g)
        .map(|m| m.scaled(-1.0))
        .unwrap_or_else(|_| SignedMeasure::empty(mu.dim()));
    for b in &res.betas {
        total = total.add(&b.scaled(-1.0)).expect("same dimension");
    }
    let diff = total.add(nu).expect("same dimension");
    let norm = nu.total_variation().max(f64::MIN_POSITIVE);
    let mass_identity_error = diff.weights().iter().fold(0.0f64, |m, w| m.max(w.abs())) / norm;
    let vanishing_error = res
        .betas
        .iter()
        .zip(&res.cubes)
        .map(|(b, c)| b.total().abs() / c.nu_variation)
        .fold(0.0, f64::max);
    let cz4_error = res
        .cubes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let int_phi: f64 = res.phi(i, mu).values().iter().zip(mu.weights()).map(|(a, b)| a * b).sum();
            (int_phi - res.weighted_nu(i, nu).total()).abs() / c.nu_variation
        })
        .fold(0.0, f64::max);
    CzVerification {
        cz1,
        cz2,
        cz2_etas: etas_all,
        cz3,
        companions_doubling,
        mass_identity_error,
        vanishing_error,
        cz4_error,
    }
}

/// μ-mass of the ξ-band of ∂Q inside 2Q, re-exported for reports.
pub fn band_mass(mu: &AtomicMeasure, q: &Cube, xi: f64) -> f64 {
    boundary_band_mass(mu, q, xi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_1d(count: usize, lo: f64, hi: f64) -> AtomicMeasure {
        let h = (hi - lo) / count as f64;
        AtomicMeasure::new(1, (0..count).map(|i| (vec![lo + h * (i as f64 + 0.5)], 1.0 / count as f64))).unwrap()
    }

    #[test]
    fn box_union_membership_is_exact() {
        let o = BoxUnion::new(1, vec![(vec![0.0], vec![1.0]), (vec![1.0], vec![2.0])]).unwrap();
        // 1 itself is in neither open interval
        assert_eq!(o.uncovered_point(&[0.5], &[1.5]), Some(vec![1.0]));
        assert!(o.contains_cube(&Cube::from_corner(&[0.25], 0.5)));
        let two = BoxUnion::new(2, vec![(vec![0.0, 0.0], vec![2.0, 1.0]), (vec![0.0, 0.5], vec![1.0, 3.0])]).unwrap();
        assert!(two.contains_cube(&Cube::from_corner(&[0.25, 0.25], 0.5)));
        assert!(two.uncovered_point(&[0.5, 0.5], &[1.5, 1.5]).is_some());
    }

    #[test]
    fn empty_open_set_gives_empty_result() {
        let o = BoxUnion::new(1, vec![]).unwrap();
        let r = whitney(&o, &uniform_1d(10, 0.0, 1.0), &WhitneyParams::for_dim(1)).unwrap();
        assert!(r.cubes.is_empty() && r.subfamily.is_empty());
    }

    #[test]
    fn unit_interval_ladder() {
        let o = BoxUnion::new(1, vec![(vec![0.0], vec![1.0])]).unwrap();
        let mu = uniform_1d(512, 0.0, 1.0);
        let r = whitney(&o, &mu, &WhitneyParams::for_dim(1)).unwrap();
        assert!(r.prop1 && r.prop2 && r.covers_atoms && r.prop_c);
        // brute-force oracle: an occupied 𝒟₀ cube is selected iff 10Q ⊂ (0,1)
        // and 10·parent is not
        let fits = |k: i32, m: i64| {
            let l = 2f64.powi(k);
            let c = l * (m as f64 + 0.5);
            c - 5.0 * l > 0.0 && c + 5.0 * l <= 1.0
        };
        let mut expected = Vec::new();
        for k in -20..=1 {
            let l = 2f64.powi(k);
            for m in 0..(1i64 << (-k).max(0)) {
                if !fits(k, m) || fits(k + 1, m.div_euclid(2)) {
                    continue;
                }
                if mu.iter().any(|(p, _)| p[0] >= l * m as f64 && p[0] < l * (m + 1) as f64) {
                    expected.push(DyadicCube::new(k, vec![m]));
                }
            }
        }
        expected.sort();
        assert_eq!(r.cubes, expected);
        assert!(r.prop1 && r.prop2 && r.covers_atoms && r.prop_c);
        let levels: Vec<i32> = r.cubes.iter().map(|c| c.level).collect();
        assert!(levels.iter().min() < levels.iter().max());
    }

    #[test]
    fn single_cube_ladder_has_rho_21() {
        let o = BoxUnion::new(1, vec![(vec![0.0], vec![0.25])]).unwrap();
        let mu = AtomicMeasure::new(1, [(vec![0.1], 1e-6), (vec![0.2], 1e-6), (vec![0.01], 1e-6)]).unwrap();
        let r = whitney(&o, &mu, &WhitneyParams::for_dim(1)).unwrap();
        assert!(r.prop1 && r.prop2 && r.covers_atoms);
        assert!(!r.cubes.is_empty());
    }

    #[test]
    fn cz_small_density_selects_nothing() {
        let mu = uniform_1d(50, 0.0, 1.0);
        let xi = 10.0;
        let f = SampledFunction::new((0..50).map(|i| if i % 2 == 0 { 1.0 } else { -2.0 }).collect());
        let nu = SignedMeasure::from_density(&mu, &f).unwrap();
        let res = cz_decompose(&nu, &mu, xi, &CzParams::for_m(1.0)).unwrap();
        assert!(res.cubes.is_empty());
        assert_eq!(res.g, f);
        assert!(res.betas.is_empty());
    }

    #[test]
    fn cz_single_heavy_atom() {
        let mu = uniform_1d(200, 0.0, 1.0);
        let nu = SignedMeasure::new(1, [(vec![0.4375], 1.0)]).unwrap();
        let res = cz_decompose(&nu, &mu, 8.0, &CzParams::for_m(1.0)).unwrap();
        assert_eq!(res.cubes.len(), 1);
        assert!(res.cubes[0].cube.contains(&[0.4375]));
        assert!(res.betas[0].total().abs() <= 1e-12);
        let v = verify_cz(&res, &nu, &mu, &CzParams::for_m(1.0));
        assert!(v.cz1 && v.cz2 && v.cz3 && v.companions_doubling, "{v:?}");
        assert!(v.mass_identity_error <= 1e-12);
        assert!(res.cz6_constant <= 1.0 + 1e-12);
    }

    #[test]
    fn cz_rejects_small_xi() {
        let mu = uniform_1d(10, 0.0, 1.0);
        let nu = SignedMeasure::new(1, [(vec![0.5], 1.0)]).unwrap();
        assert!(matches!(cz_decompose(&nu, &mu, 4.0, &CzParams::for_m(1.0)), Err(Error::Precondition(_))));
    }

    #[test]
    fn cz_missing_companion_is_reported() {
        let mu = uniform_1d(10, 0.0, 1.0);
        let nu = SignedMeasure::new(1, [(vec![0.5], 1.0)]).unwrap();
        let p = CzParams {
            doubling_b: 1.0 - 1e-9,
            max_dilation_steps: 3,
        };
        match cz_decompose(&nu, &mu, 8.0, &p) {
            Err(Error::DoublingCubeNotFound { scanned, .. }) => assert_eq!(scanned.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
