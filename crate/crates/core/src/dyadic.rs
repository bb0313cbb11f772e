//! Standard and randomly shifted dyadic grids, good and bad cubes, martingale
//! differences, δ(Q,R) and principal cubes.
//!
//! A grid is described by a [`ShiftSequence`]: bits `w_j ∈ {0,1}ⁿ` on the
//! level window `[j_min, j_max]` (zero elsewhere). The cube `(k, m)` of the
//! grid is the half-open cube with side `2^k` and lower corner
//! `2^k m + s_k`, where `s_k = Σ_{j<k} 2^j w_j`. With all bits zero this is
//! the standard grid `𝒟₀`. Every coordinate involved is a sum of powers of
//! two, so realizations and atom lookups are exact.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure::{AtomicMeasure, Cube, Point, SampledFunction};
use crate::{par, rng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSequence {
    pub seed: Option<u64>,
    pub j_min: i32,
    pub j_max: i32,
    /// `bits[j - j_min][i]` is coordinate i of w_j
    pub bits: Vec<Vec<u8>>,
}

impl ShiftSequence {
    /// i.i.d. fair bits from the ChaCha8 stream of `seed`, level by level.
    pub fn sample(seed: u64, j_min: i32, j_max: i32, n: usize) -> Result<Self> {
        if j_min > j_max {
            return Err(invalid("j_min", "must not exceed j_max"));
        }
        let mut rng = rng::stream(seed, 0);
        let bits = (j_min..=j_max)
            .map(|_| (0..n).map(|_| rng.random::<bool>() as u8).collect())
            .collect();
        Ok(ShiftSequence {
            seed: Some(seed),
            j_min,
            j_max,
            bits,
        })
    }

    /// All-zero sequence: the standard grid.
    pub fn zero(j_min: i32, j_max: i32, n: usize) -> Self {
        ShiftSequence {
            seed: None,
            j_min,
            j_max: j_max.max(j_min),
            bits: vec![vec![0; n]; (j_max.max(j_min) - j_min + 1) as usize],
        }
    }

    pub fn dim(&self) -> usize {
        self.bits.first().map_or(0, |b| b.len())
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.j_min > self.j_max {
            return Err(invalid("j_min", "must not exceed j_max"));
        }
        if self.bits.len() != (self.j_max - self.j_min + 1) as usize {
            return Err(Error::LengthMismatch {
                what: "shift levels",
                expected: (self.j_max - self.j_min + 1) as usize,
                got: self.bits.len(),
            });
        }
        for b in &self.bits {
            if b.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: b.len(),
                });
            }
            if b.iter().any(|v| *v > 1) {
                return Err(invalid("bits", "shift bits must be 0 or 1"));
            }
        }
        Ok(())
    }

    /// Bit `i` of w_j (zero outside the window).
    pub fn bit(&self, j: i32, i: usize) -> i64 {
        if j < self.j_min || j > self.j_max {
            0
        } else {
            self.bits[(j - self.j_min) as usize][i] as i64
        }
    }

    /// s_k = Σ_{j_min ≤ j < k} 2^j w_j.
    pub fn offset(&self, k: i32, n: usize) -> Point {
        let mut s = vec![0.0; n];
        for j in self.j_min..k.min(self.j_max + 1) {
            for (i, si) in s.iter_mut().enumerate() {
                if self.bit(j, i) == 1 {
                    *si += pow2(j);
                }
            }
        }
        s
    }
}

#[inline]
pub fn pow2(k: i32) -> f64 {
    2f64.powi(k)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: i32,
    pub index: Vec<i64>,
}

impl DyadicCube {
    pub fn new(level: i32, index: Vec<i64>) -> Self {
        DyadicCube { level, index }
    }

    pub fn side(&self) -> f64 {
        pow2(self.level)
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }
}

/// Geometric cube of `c` in the grid `w`.
pub fn realize_cube(c: &DyadicCube, w: &ShiftSequence) -> Cube {
    let n = c.dim();
    let s = w.offset(c.level, n);
    let side = c.side();
    let lower: Vec<f64> = c
        .index
        .iter()
        .zip(&s)
        .map(|(m, o)| side * *m as f64 + o)
        .collect();
    Cube::from_corner(&lower, side)
}

/// The level-`k` cube of the grid containing `x`.
pub fn locate(x: &[f64], k: i32, w: &ShiftSequence) -> DyadicCube {
    let s = w.offset(k, x.len());
    let side = pow2(k);
    DyadicCube {
        level: k,
        index: x
            .iter()
            .zip(&s)
            .map(|(v, o)| ((v - o) / side).floor() as i64)
            .collect(),
    }
}

pub fn parent(c: &DyadicCube, w: &ShiftSequence) -> DyadicCube {
    let k = c.level;
    DyadicCube {
        level: k + 1,
        index: c
            .index
            .iter()
            .enumerate()
            .map(|(i, m)| (m - w.bit(k, i)).div_euclid(2))
            .collect(),
    }
}

pub fn ancestor(c: &DyadicCube, level: i32, w: &ShiftSequence) -> DyadicCube {
    let mut a = c.clone();
    while a.level < level {
        a = parent(&a, w);
    }
    a
}

/// The 2ⁿ children, in lexicographic order of the index offsets.
pub fn children(c: &DyadicCube, w: &ShiftSequence) -> Vec<DyadicCube> {
    let k = c.level - 1;
    let n = c.dim();
    (0..1usize << n)
        .map(|mask| DyadicCube {
            level: k,
            index: (0..n)
                .map(|i| 2 * c.index[i] + w.bit(k, i) + ((mask >> (n - 1 - i)) & 1) as i64)
                .collect(),
        })
        .collect()
}

/// Default level window for a measure: from a quarter of the finest atom
/// separation up to a cube containing four times the support.
pub fn default_levels(mu: &AtomicMeasure) -> (i32, i32) {
    let sep = mu.min_separation().unwrap_or(1.0);
    let j_min = (sep / 4.0).log2().floor() as i32;
    let j_max = (4.0 * (mu.diameter() + 1.0)).log2().ceil() as i32 + 1;
    (j_min, j_max.max(j_min + 1))
}

// ---------------------------------------------------------------- goodness

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodnessParams {
    pub r: u32,
    pub gamma: f64,
}

impl GoodnessParams {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(invalid("r", "must be a positive integer"));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodnessReport {
    pub cube: DyadicCube,
    /// good with respect to the ancestors inside the level window
    pub good_in_window: bool,
    /// ancestor level with the smallest distance/threshold ratio
    pub witness_level: i32,
    pub distance: f64,
    pub threshold: f64,
}

fn dist_to_boundary_inside(inner: &Cube, outer: &Cube) -> f64 {
    let (li, hi) = (inner.lower(), inner.upper());
    let (lo, ho) = (outer.lower(), outer.upper());
    (0..inner.dim())
        .map(|k| (li[k] - lo[k]).min(ho[k] - hi[k]))
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// I is bad when some ancestor J with ℓ(J) = 2^s ℓ(I), r ≤ s ≤ search_levels,
/// has dist(I, ∂J) ≤ ℓ(I)^γ ℓ(J)^{1−γ}.
pub fn is_good(c: &DyadicCube, w: &ShiftSequence, gp: &GoodnessParams, search_levels: u32) -> Result<GoodnessReport> {
    gp.validate()?;
    if search_levels < gp.r {
        return Err(invalid("search_levels", "must be at least r"));
    }
    let ci = realize_cube(c, w);
    let li = c.side();
    let mut j = ancestor(c, c.level + gp.r as i32, w);
    let mut good = true;
    let mut best: Option<(f64, i32, f64, f64)> = None;
    for s in gp.r..=search_levels {
        if s > gp.r {
            j = parent(&j, w);
        }
        let cj = realize_cube(&j, w);
        let d = dist_to_boundary_inside(&ci, &cj);
        let th = li.powf(gp.gamma) * cj.side.powf(1.0 - gp.gamma);
        if d <= th {
            good = false;
        }
        let ratio = d / th;
        if best.is_none_or(|b| ratio < b.0) {
            best = Some((ratio, j.level, d, th));
        }
    }
    let (_, witness_level, distance, threshold) = best.expect("window is nonempty");
    Ok(GoodnessReport {
        cube: c.clone(),
        good_in_window: good,
        witness_level,
        distance,
        threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadProbability {
    pub estimate: f64,
    pub stderr: f64,
    pub trials: usize,
    pub bad: usize,
}

/// Fraction of random shifts under which the 𝒟₀ cube `c` is bad. Only the
/// bits on levels `[k, k + search_levels)` affect the answer; trial i draws
/// them from ChaCha8 stream i. `force_zero` replaces every draw by the zero
/// shift.
pub fn bad_cube_probability(
    c: &DyadicCube,
    gp: &GoodnessParams,
    search_levels: u32,
    trials: usize,
    seed: u64,
    force_zero: bool,
) -> Result<BadProbability> {
    gp.validate()?;
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let n = c.dim();
    let (lo, hi) = (c.level, c.level + search_levels as i32);
    let flags: Vec<Result<bool>> = par::map_range(trials, |i| {
        let w = if force_zero {
            ShiftSequence::zero(lo, hi, n)
        } else {
            let mut rng = rng::stream(seed, i as u64);
            ShiftSequence {
                seed: Some(seed),
                j_min: lo,
                j_max: hi,
                bits: (lo..=hi)
                    .map(|_| (0..n).map(|_| rng.random::<bool>() as u8).collect())
                    .collect(),
            }
        };
        Ok(!is_good(c, &w, gp, search_levels)?.good_in_window)
    });
    let mut bad = 0;
    for f in flags {
        bad += f? as usize;
    }
    let p = bad as f64 / trials as f64;
    Ok(BadProbability {
        estimate: p,
        stderr: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
        bad,
    })
}

// -------------------------------------------------------------- martingales

/// Atoms of μ grouped by their level-k cube (cubes in index order).
pub fn occupied(mu: &AtomicMeasure, k: i32, w: &ShiftSequence) -> BTreeMap<DyadicCube, Vec<usize>> {
    let mut map: BTreeMap<DyadicCube, Vec<usize>> = BTreeMap::new();
    for a in 0..mu.len() {
        map.entry(locate(mu.point(a), k, w)).or_default().push(a);
    }
    map
}

fn atoms_in(mu: &AtomicMeasure, c: &DyadicCube, w: &ShiftSequence) -> Vec<usize> {
    (0..mu.len())
        .filter(|&a| locate(mu.point(a), c.level, w) == *c)
        .collect()
}

fn mean_over(f: &[f64], mu: &AtomicMeasure, atoms: &[usize]) -> f64 {
    let mass: f64 = atoms.iter().map(|&a| mu.weight(a)).sum();
    if mass > 0.0 {
        atoms.iter().map(|&a| f[a] * mu.weight(a)).sum::<f64>() / mass
    } else {
        0.0
    }
}

/// ⟨f⟩_Q with respect to μ (0 when μ(Q) = 0).
pub fn average(f: &SampledFunction, mu: &AtomicMeasure, c: &DyadicCube, w: &ShiftSequence) -> f64 {
    mean_over(f.values(), mu, &atoms_in(mu, c, w))
}

/// E_Q f = ⟨f⟩_Q 1_Q.
pub fn avg_e(f: &SampledFunction, c: &DyadicCube, mu: &AtomicMeasure, w: &ShiftSequence) -> Result<SampledFunction> {
    f.check_on(mu)?;
    let atoms = atoms_in(mu, c, w);
    let m = mean_over(f.values(), mu, &atoms);
    let mut out = vec![0.0; mu.len()];
    for a in atoms {
        out[a] = m;
    }
    Ok(SampledFunction::new(out))
}

/// E_{2^k} f = Σ_{ℓ(Q) = 2^k} E_Q f.
pub fn avg_e_level(f: &SampledFunction, k: i32, mu: &AtomicMeasure, w: &ShiftSequence) -> Result<SampledFunction> {
    f.check_on(mu)?;
    let mut out = vec![0.0; mu.len()];
    for atoms in occupied(mu, k, w).values() {
        let m = mean_over(f.values(), mu, atoms);
        for &a in atoms {
            out[a] = m;
        }
    }
    Ok(SampledFunction::new(out))
}

/// Δ_Q f = Σ_{Q' ∈ ch(Q)} (⟨f⟩_{Q'} − ⟨f⟩_Q) 1_{Q'}.
pub fn delta_q(f: &SampledFunction, c: &DyadicCube, mu: &AtomicMeasure, w: &ShiftSequence) -> Result<SampledFunction> {
    f.check_on(mu)?;
    let atoms = atoms_in(mu, c, w);
    Ok(SampledFunction::new(delta_on(f.values(), mu, c, &atoms, w)))
}

fn delta_on(f: &[f64], mu: &AtomicMeasure, c: &DyadicCube, atoms: &[usize], w: &ShiftSequence) -> Vec<f64> {
    let mut out = vec![0.0; mu.len()];
    let parent_mean = mean_over(f, mu, atoms);
    let mut by_child: BTreeMap<DyadicCube, Vec<usize>> = BTreeMap::new();
    for &a in atoms {
        by_child.entry(locate(mu.point(a), c.level - 1, w)).or_default().push(a);
    }
    for group in by_child.values() {
        let m = mean_over(f, mu, group) - parent_mean;
        for &a in group {
            out[a] = m;
        }
    }
    out
}

/// Check that every atom sits alone in its level-`finest` cube.
pub fn check_separated(mu: &AtomicMeasure, finest: i32, w: &ShiftSequence) -> Result<()> {
    if let Some((c, _)) = occupied(mu, finest, w).into_iter().find(|(_, v)| v.len() > 1) {
        return Err(Error::Precondition(format!(
            "level {finest} does not separate the atoms (cube {:?} holds several)",
            c.index
        )));
    }
    Ok(())
}

/// Σ_{finest < ℓ-level ≤ s} Σ_Q Δ_Q f + Σ_{ℓ(Q)=2^s} E_Q f.
pub fn reconstruct(f: &SampledFunction, s: i32, finest: i32, mu: &AtomicMeasure, w: &ShiftSequence) -> Result<SampledFunction> {
    f.check_on(mu)?;
    if finest >= s {
        return Err(invalid("finest", "must be below the top level"));
    }
    check_separated(mu, finest, w)?;
    let mut acc = avg_e_level(f, s, mu, w)?.values().to_vec();
    for k in finest + 1..=s {
        for (c, atoms) in occupied(mu, k, w) {
            let d = delta_on(f.values(), mu, &c, &atoms, w);
            for &a in &atoms {
                acc[a] += d[a];
            }
        }
    }
    Ok(SampledFunction::new(acc))
}

/// Every occupied cube with levels in `(finest, s]` and its Δ_Q f.
pub fn all_differences(f: &SampledFunction, s: i32, finest: i32, mu: &AtomicMeasure, w: &ShiftSequence) -> Result<Vec<(DyadicCube, SampledFunction)>> {
    f.check_on(mu)?;
    let mut out = Vec::new();
    for k in (finest + 1..=s).rev() {
        for (c, atoms) in occupied(mu, k, w) {
            let d = delta_on(f.values(), mu, &c, &atoms, w);
            out.push((c, SampledFunction::new(d)));
        }
    }
    Ok(out)
}

/// δ(Q,R) = ℓ(Q)^{α/2} ℓ(R)^{α/2} / D(Q,R)^{m+α}, D = ℓ(Q) + ℓ(R) + d(Q,R).
pub fn delta_coeff(q: &Cube, r: &Cube, m: f64, alpha: f64) -> Result<f64> {
    if !(q.side > 0.0 && r.side > 0.0) {
        return Err(invalid("side", "sidelengths must be positive"));
    }
    let d = q.side + r.side + q.distance_to(r);
    Ok((q.side * r.side).powf(alpha / 2.0) / d.powf(m + alpha))
}

// ---------------------------------------------------------- principal cubes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingCube {
    pub cube: DyadicCube,
    pub generation: usize,
    /// index of the stopping parent in `StoppingFamily::cubes`
    pub parent: Option<usize>,
    pub mass: f64,
    pub average: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingFamily {
    pub cubes: Vec<StoppingCube>,
    /// a(Q) for every occupied cube with level in `[finest, s]`
    pub assignment: Vec<(DyadicCube, usize)>,
    pub top: i32,
    pub finest: i32,
}

impl StoppingFamily {
    pub fn generations(&self) -> Vec<Vec<&DyadicCube>> {
        let depth = self.cubes.iter().map(|c| c.generation + 1).max().unwrap_or(0);
        let mut out = vec![Vec::new(); depth];
        for c in &self.cubes {
            out[c.generation].push(&c.cube);
        }
        out
    }

    pub fn stopping_parent(&self, q: &DyadicCube) -> Option<&StoppingCube> {
        self.assignment
            .binary_search_by(|(c, _)| c.cmp(q))
            .ok()
            .map(|i| &self.cubes[self.assignment[i].1])
    }
}

/// ℱ₀ = occupied cubes of level s; the stopping children of F are the
/// maximal occupied Q' ⊊ F with ⟨|φ|⟩_{Q'} > 2⟨|φ|⟩_F.
pub fn principal_cubes(phi: &SampledFunction, mu: &AtomicMeasure, w: &ShiftSequence, s: i32, finest: i32) -> Result<StoppingFamily> {
    phi.check_on(mu)?;
    if finest > s {
        return Err(invalid("finest", "must not exceed the top level"));
    }
    let abs = phi.abs();
    let abs = abs.values();
    let mut cubes: Vec<StoppingCube> = Vec::new();
    let mut assignment: Vec<(DyadicCube, usize)> = Vec::new();
    // (cube, atoms, owning stopping cube)
    let mut stack: Vec<(DyadicCube, Vec<usize>, Option<usize>)> = occupied(mu, s, w)
        .into_iter()
        .rev()
        .map(|(c, a)| (c, a, None))
        .collect();
    while let Some((c, atoms, owner)) = stack.pop() {
        let avg = mean_over(abs, mu, &atoms);
        let mass: f64 = atoms.iter().map(|&a| mu.weight(a)).sum();
        let stops = match owner {
            None => true,
            Some(o) => avg > 2.0 * cubes[o].average,
        };
        let here = if stops {
            cubes.push(StoppingCube {
                cube: c.clone(),
                generation: owner.map_or(0, |o| cubes[o].generation + 1),
                parent: owner,
                mass,
                average: avg,
            });
            cubes.len() - 1
        } else {
            owner.expect("non-stopping cubes have an owner")
        };
        assignment.push((c.clone(), here));
        if c.level > finest {
            let mut kids: BTreeMap<DyadicCube, Vec<usize>> = BTreeMap::new();
            for &a in &atoms {
                kids.entry(locate(mu.point(a), c.level - 1, w)).or_default().push(a);
            }
            for (k, a) in kids.into_iter().rev() {
                stack.push((k, a, Some(here)));
            }
        }
    }
    assignment.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(StoppingFamily {
        cubes,
        assignment,
        top: s,
        finest,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlesonReport {
    /// per stopping cube: (Σ_{F' ⊆ F} μ(F'), μ(F), μ(E(F)))
    pub rows: Vec<(f64, f64, f64)>,
    pub worst_ratio: f64,
    /// min over F of μ(E(F)) / μ(F)
    pub min_free_fraction: f64,
}

/// Packing sums Σ_{F'∈ℱ, F'⊆F} μ(F') against μ(F), and the free parts
/// E(F) = F minus its stopping children.
pub fn carleson_check(fam: &StoppingFamily) -> CarlesonReport {
    let k = fam.cubes.len();
    let mut packing: Vec<f64> = fam.cubes.iter().map(|c| c.mass).collect();
    let mut child_mass = vec![0.0; k];
    // children are pushed after their parent, so a reverse sweep accumulates subtrees
    for i in (0..k).rev() {
        if let Some(p) = fam.cubes[i].parent {
            packing[p] += packing[i];
            child_mass[p] += fam.cubes[i].mass;
        }
    }
    let mut rows = Vec::with_capacity(k);
    let mut worst: f64 = 0.0;
    let mut free_min: f64 = 1.0;
    for i in 0..k {
        let m = fam.cubes[i].mass;
        let free = m - child_mass[i];
        rows.push((packing[i], m, free));
        if m > 0.0 {
            worst = worst.max(packing[i] / m);
            free_min = free_min.min(free / m);
        }
    }
    CarlesonReport {
        rows,
        worst_ratio: worst,
        min_free_fraction: free_min,
    }
}
