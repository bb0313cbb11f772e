//! Finitely atomic measures and the geometric predicates evaluated on them.
//!
//! Every space integral against an [`AtomicMeasure`] is a finite weighted sum,
//! so masses of cubes and balls are exact. Cubes are half-open boxes
//! `[c - ℓ/2, c + ℓ/2)ⁿ` and balls are closed Euclidean balls.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Points are plain coordinate vectors; `n` is carried by the owning measure.
pub type Point = Vec<f64>;

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Flat storage shared by the positive and the signed measure.
#[derive(Clone, Debug, PartialEq)]
struct Atoms {
    n: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl Atoms {
    /// Merge atoms at bit-identical positions, keeping first-occurrence order.
    fn merged(n: usize, coords: &[f64], weights: &[f64]) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "dimension must be positive"));
        }
        if coords.len() != n * weights.len() {
            return Err(Error::LengthMismatch {
                what: "atom coordinates",
                expected: n * weights.len(),
                got: coords.len(),
            });
        }
        if coords.iter().chain(weights).any(|v| !v.is_finite()) {
            return Err(invalid("atoms", "coordinates and weights must be finite"));
        }
        let mut slot: HashMap<Vec<u64>, usize> = HashMap::with_capacity(weights.len());
        let mut out = Atoms {
            n,
            coords: Vec::with_capacity(coords.len()),
            weights: Vec::with_capacity(weights.len()),
        };
        for (p, &w) in coords.chunks_exact(n).zip(weights) {
            // +0.0 and -0.0 describe the same point
            let key: Vec<u64> = p.iter().map(|v| (v + 0.0).to_bits()).collect();
            match slot.get(&key) {
                Some(&i) => out.weights[i] += w,
                None => {
                    slot.insert(key, out.weights.len());
                    out.coords.extend_from_slice(p);
                    out.weights.push(w);
                }
            }
        }
        Ok(out)
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n..(i + 1) * self.n]
    }

    fn len(&self) -> usize {
        self.weights.len()
    }

    fn drop_zero_weights(mut self) -> Self {
        if self.weights.iter().all(|&w| w != 0.0) {
            return self;
        }
        let n = self.n;
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut weights = Vec::with_capacity(self.weights.len());
        for (p, &w) in self.coords.chunks_exact(n).zip(&self.weights) {
            if w != 0.0 {
                coords.extend_from_slice(p);
                weights.push(w);
            }
        }
        self.coords = coords;
        self.weights = weights;
        self
    }
}

/// Positive, finitely atomic measure on ℝⁿ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDoc", into = "MeasureDoc")]
pub struct AtomicMeasure {
    atoms: Atoms,
}

impl AtomicMeasure {
    pub fn empty(n: usize) -> Self {
        AtomicMeasure {
            atoms: Atoms {
                n: n.max(1),
                coords: Vec::new(),
                weights: Vec::new(),
            },
        }
    }

    /// Build from flat coordinates (`n` per atom). Duplicate positions are
    /// merged with summed weights; every weight must be strictly positive.
    pub fn from_flat(n: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(invalid("weights", format!("weight {w} is not strictly positive")));
        }
        let atoms = Atoms::merged(n, &coords, &weights)?;
        Ok(AtomicMeasure { atoms })
    }

    pub fn new<I>(n: usize, atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Point, f64)>,
    {
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (p, w) in atoms {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: p.len(),
                });
            }
            coords.extend(p);
            weights.push(w);
        }
        Self::from_flat(n, coords, weights)
    }

    pub fn dim(&self) -> usize {
        self.atoms.n
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.len() == 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.atoms.point(i)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.atoms.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.atoms.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.atoms.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.atoms
            .coords
            .chunks_exact(self.atoms.n)
            .zip(self.atoms.weights.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.weights.iter().fold(0.0, |s, w| s + w)
    }

    /// Exact μ(S).
    pub fn mass<R: Region + ?Sized>(&self, region: &R) -> f64 {
        self.iter()
            .filter(|(p, _)| region.contains(p))
            .map(|(_, w)| w)
            .fold(0.0, |s, w| s + w)
    }

    /// Indices of the atoms inside `region`, in storage order.
    pub fn indices_in<R: Region + ?Sized>(&self, region: &R) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| region.contains(self.point(i)))
            .collect()
    }

    /// Restriction μ⌊S as a new measure (possibly empty).
    pub fn restrict<R: Region + ?Sized>(&self, region: &R) -> AtomicMeasure {
        let n = self.dim();
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (p, w) in self.iter().filter(|(p, _)| region.contains(p)) {
            coords.extend_from_slice(p);
            weights.push(w);
        }
        AtomicMeasure {
            atoms: Atoms { n, coords, weights },
        }
    }

    /// Index of the atom sitting exactly at `p`, if any.
    pub fn find(&self, p: &[f64]) -> Option<usize> {
        (0..self.len()).find(|&i| self.point(i) == p)
    }

    pub fn bounding_box(&self) -> Option<(Point, Point)> {
        bounding_box(self.dim(), self.coords())
    }

    /// Largest pairwise distance between atoms (0 for fewer than two atoms).
    pub fn diameter(&self) -> f64 {
        diameter(self.dim(), self.coords())
    }

    /// Smallest pairwise distance between distinct atoms.
    pub fn min_separation(&self) -> Option<f64> {
        min_separation(self.dim(), self.coords())
    }

    /// Same measure with every position translated by `shift`.
    pub fn translated(&self, shift: &[f64]) -> AtomicMeasure {
        let n = self.dim();
        let coords = self
            .atoms
            .coords
            .chunks_exact(n)
            .flat_map(|p| p.iter().zip(shift).map(|(x, s)| x + s).collect::<Vec<_>>())
            .collect();
        AtomicMeasure {
            atoms: Atoms {
                n,
                coords,
                weights: self.atoms.weights.clone(),
            },
        }
    }
}

/// Real signed atomic measure (stand-in for the complex measures ν).
///
/// Atoms at identical positions are merged; atoms whose merged weight is
/// exactly zero are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDoc", into = "MeasureDoc")]
pub struct SignedMeasure {
    atoms: Atoms,
}

impl SignedMeasure {
    pub fn empty(n: usize) -> Self {
        SignedMeasure {
            atoms: Atoms {
                n: n.max(1),
                coords: Vec::new(),
                weights: Vec::new(),
            },
        }
    }

    pub fn from_flat(n: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let atoms = Atoms::merged(n, &coords, &weights)?.drop_zero_weights();
        Ok(SignedMeasure { atoms })
    }

    pub fn new<I>(n: usize, atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Point, f64)>,
    {
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (p, w) in atoms {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: p.len(),
                });
            }
            coords.extend(p);
            weights.push(w);
        }
        Self::from_flat(n, coords, weights)
    }

    /// The measure f·μ, one atom per atom of μ (zero values are kept so that
    /// atom indices line up with μ).
    pub fn from_density(mu: &AtomicMeasure, f: &SampledFunction) -> Result<Self> {
        f.check_on(mu)?;
        let weights = mu
            .weights()
            .iter()
            .zip(f.values())
            .map(|(w, v)| w * v)
            .collect();
        Ok(SignedMeasure {
            atoms: Atoms {
                n: mu.dim(),
                coords: mu.coords().to_vec(),
                weights,
            },
        })
    }

    pub fn from_positive(mu: &AtomicMeasure) -> Self {
        SignedMeasure {
            atoms: mu.atoms.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.atoms.n
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.len() == 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.atoms.point(i)
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.atoms.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.atoms.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.atoms.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.atoms
            .coords
            .chunks_exact(self.atoms.n)
            .zip(self.atoms.weights.iter().copied())
    }

    /// ν(ℝⁿ).
    pub fn total(&self) -> f64 {
        self.atoms.weights.iter().fold(0.0, |s, w| s + w)
    }

    /// ‖ν‖ = |ν|(ℝⁿ).
    pub fn total_variation(&self) -> f64 {
        self.atoms.weights.iter().map(|w| w.abs()).fold(0.0, |s, w| s + w)
    }

    /// ν(S).
    pub fn mass<R: Region + ?Sized>(&self, region: &R) -> f64 {
        self.iter()
            .filter(|(p, _)| region.contains(p))
            .map(|(_, w)| w)
            .fold(0.0, |s, w| s + w)
    }

    /// |ν|(S).
    pub fn variation<R: Region + ?Sized>(&self, region: &R) -> f64 {
        self.iter()
            .filter(|(p, _)| region.contains(p))
            .map(|(_, w)| w.abs())
            .fold(0.0, |s, w| s + w)
    }

    /// Atom-wise product with a bounded function of position.
    pub fn weighted_by<F: Fn(&[f64]) -> f64>(&self, g: F) -> SignedMeasure {
        let n = self.dim();
        let weights = self.iter().map(|(p, w)| w * g(p)).collect();
        SignedMeasure {
            atoms: Atoms {
                n,
                coords: self.atoms.coords.clone(),
                weights,
            },
        }
        .compact()
    }

    /// Sum of two signed measures, merged on identical positions.
    pub fn add(&self, other: &SignedMeasure) -> Result<SignedMeasure> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let mut coords = self.atoms.coords.clone();
        coords.extend_from_slice(&other.atoms.coords);
        let mut weights = self.atoms.weights.clone();
        weights.extend_from_slice(&other.atoms.weights);
        SignedMeasure::from_flat(self.dim(), coords, weights)
    }

    pub fn scaled(&self, c: f64) -> SignedMeasure {
        let mut out = self.clone();
        out.atoms.weights.iter_mut().for_each(|w| *w *= c);
        out.compact()
    }

    fn compact(self) -> SignedMeasure {
        SignedMeasure {
            atoms: self.atoms.drop_zero_weights(),
        }
    }

    pub fn bounding_box(&self) -> Option<(Point, Point)> {
        bounding_box(self.dim(), self.coords())
    }
}

/// Values of a function at the atoms of a measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampledFunction {
    values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(values: Vec<f64>) -> Self {
        SampledFunction { values }
    }

    pub fn constant(mu: &AtomicMeasure, c: f64) -> Self {
        SampledFunction {
            values: vec![c; mu.len()],
        }
    }

    pub fn zeros(mu: &AtomicMeasure) -> Self {
        Self::constant(mu, 0.0)
    }

    /// Indicator of a region evaluated on the atoms of μ.
    pub fn indicator<R: Region + ?Sized>(mu: &AtomicMeasure, region: &R) -> Self {
        SampledFunction {
            values: mu
                .iter()
                .map(|(p, _)| if region.contains(p) { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_on(&self, mu: &AtomicMeasure) -> Result<()> {
        if self.values.len() != mu.len() {
            return Err(Error::LengthMismatch {
                what: "sampled function",
                expected: mu.len(),
                got: self.values.len(),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        SampledFunction {
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn abs(&self) -> Self {
        SampledFunction {
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }

    /// Pointwise product with the indicator of `region` (or its complement).
    pub fn masked<R: Region + ?Sized>(&self, mu: &AtomicMeasure, region: &R, inside: bool) -> Self {
        SampledFunction {
            values: self
                .values
                .iter()
                .zip(mu.iter())
                .map(|(v, (p, _))| if region.contains(p) == inside { *v } else { 0.0 })
                .collect(),
        }
    }

    /// ∫ |f|^p dμ.
    pub fn lp_norm_pow(&self, mu: &AtomicMeasure, p: f64) -> f64 {
        self.values
            .iter()
            .zip(mu.weights())
            .map(|(v, w)| v.abs().powf(p) * w)
            .sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Anything with an exact membership test.
pub trait Region {
    fn contains(&self, p: &[f64]) -> bool;
}

/// Axis-parallel cube given by its center and sidelength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Point,
    pub side: f64,
}

impl Cube {
    pub fn new(center: Point, side: f64) -> Self {
        Cube { center, side }
    }

    /// Cube with the given lower corner.
    pub fn from_corner(lower: &[f64], side: f64) -> Self {
        Cube {
            center: lower.iter().map(|v| v + side / 2.0).collect(),
            side,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lower(&self) -> Point {
        self.center.iter().map(|c| c - self.side / 2.0).collect()
    }

    pub fn upper(&self) -> Point {
        self.center.iter().map(|c| c + self.side / 2.0).collect()
    }

    /// aQ: same center, sidelength multiplied by `a`.
    pub fn dilate(&self, a: f64) -> Cube {
        Cube {
            center: self.center.clone(),
            side: self.side * a,
        }
    }

    /// Distance from `p` to ∂Q.
    pub fn dist_to_boundary(&self, p: &[f64]) -> f64 {
        let h = self.side / 2.0;
        let mut inside = true;
        let mut inner = f64::INFINITY;
        let mut outer2 = 0.0;
        for (x, c) in p.iter().zip(&self.center) {
            let d = (x - c).abs();
            if d > h {
                inside = false;
                outer2 += (d - h) * (d - h);
            } else {
                inner = inner.min(h - d);
            }
        }
        if inside {
            inner
        } else {
            outer2.sqrt()
        }
    }

    /// Euclidean distance between the two (closed) cubes as sets.
    pub fn distance_to(&self, other: &Cube) -> f64 {
        let (lo_a, hi_a) = (self.lower(), self.upper());
        let (lo_b, hi_b) = (other.lower(), other.upper());
        let mut s = 0.0;
        for k in 0..self.dim() {
            let gap = (lo_b[k] - hi_a[k]).max(lo_a[k] - hi_b[k]).max(0.0);
            s += gap * gap;
        }
        s.sqrt()
    }

    /// Whether the half-open boxes share a point.
    pub fn intersects(&self, other: &Cube) -> bool {
        let (lo_a, hi_a) = (self.lower(), self.upper());
        let (lo_b, hi_b) = (other.lower(), other.upper());
        (0..self.dim()).all(|k| lo_a[k] < hi_b[k] && lo_b[k] < hi_a[k])
    }

    pub fn contains_cube(&self, other: &Cube) -> bool {
        let (lo_a, hi_a) = (self.lower(), self.upper());
        let (lo_b, hi_b) = (other.lower(), other.upper());
        (0..self.dim()).all(|k| lo_a[k] <= lo_b[k] && hi_b[k] <= hi_a[k])
    }
}

impl Region for Cube {
    fn contains(&self, p: &[f64]) -> bool {
        let h = self.side / 2.0;
        p.iter()
            .zip(&self.center)
            .all(|(x, c)| c - h <= *x && *x < c + h)
    }
}

/// Closed Euclidean ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Self {
        Ball { center, radius }
    }
}

impl Region for Ball {
    fn contains(&self, p: &[f64]) -> bool {
        distance(p, &self.center) <= self.radius
    }
}

/// Complement of a region.
pub struct Outside<'a, R: ?Sized>(pub &'a R);

impl<R: Region + ?Sized> Region for Outside<'_, R> {
    fn contains(&self, p: &[f64]) -> bool {
        !self.0.contains(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerBoundReport {
    pub exponent: f64,
    pub constant: f64,
    pub witness: Option<(Point, f64)>,
    pub samples: usize,
}

/// Balls on which μ(B(x,r))/r^m is sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerSampleSpec {
    Explicit(Vec<(Point, f64)>),
    /// `count` balls: centers are atoms or uniform points of the bounding
    /// box (alternating), radii log-uniform in `[r_min, r_max]`.
    Random {
        count: usize,
        seed: u64,
        r_min: f64,
        r_max: f64,
    },
}

impl PowerSampleSpec {
    fn balls(&self, mu: &AtomicMeasure) -> Result<Vec<(Point, f64)>> {
        match self {
            PowerSampleSpec::Explicit(list) => {
                for (x, r) in list {
                    if x.len() != mu.dim() {
                        return Err(Error::DimensionMismatch {
                            expected: mu.dim(),
                            got: x.len(),
                        });
                    }
                    if !(*r > 0.0) {
                        return Err(invalid("radius", "sample radii must be positive"));
                    }
                }
                Ok(list.clone())
            }
            PowerSampleSpec::Random {
                count,
                seed,
                r_min,
                r_max,
            } => {
                if !(*r_min > 0.0 && r_min <= r_max) {
                    return Err(invalid("r_min", "need 0 < r_min <= r_max"));
                }
                let (lo, hi) = mu
                    .bounding_box()
                    .unwrap_or((vec![0.0; mu.dim()], vec![1.0; mu.dim()]));
                let mut rng = rng::stream(*seed, 0);
                let (a, b) = (r_min.ln(), r_max.ln());
                let mut out = Vec::with_capacity(*count);
                for i in 0..*count {
                    let x: Point = if i % 2 == 0 && !mu.is_empty() {
                        mu.point(rng.random_range(0..mu.len())).to_vec()
                    } else {
                        lo.iter()
                            .zip(&hi)
                            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                            .collect()
                    };
                    let r = if a == b { *r_min } else { (a + (b - a) * rng.random::<f64>()).exp() };
                    out.push((x, r));
                }
                Ok(out)
            }
        }
    }
}

/// Best constant C with μ(B(x,r)) ≤ C r^m over the sampled balls.
pub fn check_power_bound(mu: &AtomicMeasure, m: f64, samples: &PowerSampleSpec) -> Result<PowerBoundReport> {
    if !(m > 0.0) {
        return Err(invalid("m", "power-bound exponent must be positive"));
    }
    let balls = samples.balls(mu)?;
    let mut best = 0.0;
    let mut witness = None;
    for (x, r) in &balls {
        let ratio = mu.mass(&Ball::new(x.clone(), *r)) / r.powf(m);
        if ratio > best {
            best = ratio;
            witness = Some((x.clone(), *r));
        }
    }
    Ok(PowerBoundReport {
        exponent: m,
        constant: best,
        witness,
        samples: balls.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingCheck {
    pub doubling: bool,
    pub ratio: f64,
}

/// (a,b)-doubling test μ(aQ) ≤ b μ(Q), with the ratio μ(aQ)/μ(Q).
pub fn is_doubling_cube(mu: &AtomicMeasure, q: &Cube, a: f64, b: f64) -> DoublingCheck {
    let inner = mu.mass(q);
    let outer = mu.mass(&q.dilate(a));
    let ratio = if inner > 0.0 {
        outer / inner
    } else if outer > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    DoublingCheck {
        doubling: outer <= b * inner,
        ratio,
    }
}

/// Default finite surrogate for "every ξ > 0": {2^-j : 0 ≤ j ≤ 12}.
pub fn default_xi_grid() -> Vec<f64> {
    (0..=12).map(|j| 0.5f64.powi(j)).collect()
}

/// μ({x ∈ 2Q : dist(x, ∂Q) ≤ ξ ℓ(Q)}).
pub fn boundary_band_mass(mu: &AtomicMeasure, q: &Cube, xi: f64) -> f64 {
    let two_q = q.dilate(2.0);
    mu.iter()
        .filter(|(p, _)| two_q.contains(p) && q.dist_to_boundary(p) <= xi * q.side)
        .map(|(_, w)| w)
        .sum()
}

/// 𝔠-small boundary on every ξ of `xi_list`.
pub fn has_small_boundary(mu: &AtomicMeasure, q: &Cube, c: f64, xi_list: &[f64]) -> bool {
    let m2 = mu.mass(&q.dilate(2.0));
    xi_list
        .iter()
        .all(|&xi| boundary_band_mass(mu, q, xi) <= c * xi * m2)
}

/// `count` radii spaced geometrically in `[lo, hi]`.
pub fn log_radii(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || lo >= hi {
        return vec![hi.max(lo)];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Radius grid used for M_μ at `x` when none is supplied: from a fraction of
/// the minimal atom separation up to twice the distance to the farthest atom.
pub fn default_radius_grid(mu: &AtomicMeasure, x: &[f64]) -> Vec<f64> {
    let far = mu
        .iter()
        .map(|(p, _)| distance(p, x))
        .fold(0.0f64, f64::max);
    let lo = mu.min_separation().unwrap_or(1.0) / 8.0;
    let hi = (2.0 * far + 1.0).max(lo * 2.0);
    log_radii(lo, hi, 48)
}

/// Centered maximal function over a finite radius grid.
pub fn maximal_function(mu: &AtomicMeasure, f: &SampledFunction, x: &[f64], radii: &[f64]) -> f64 {
    debug_assert_eq!(f.len(), mu.len());
    let dists: Vec<f64> = mu.iter().map(|(p, _)| distance(p, x)).collect();
    let mut best: f64 = 0.0;
    for &r in radii {
        let mut mass = 0.0;
        let mut integral = 0.0;
        for ((d, w), v) in dists.iter().zip(mu.weights()).zip(f.values()) {
            if *d <= r {
                mass += w;
                integral += w * v.abs();
            }
        }
        if mass > 0.0 {
            best = best.max(integral / mass);
        }
    }
    best
}

pub(crate) fn bounding_box(n: usize, coords: &[f64]) -> Option<(Point, Point)> {
    if coords.is_empty() {
        return None;
    }
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in coords.chunks_exact(n) {
        for k in 0..n {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Some((lo, hi))
}

pub(crate) fn diameter(n: usize, coords: &[f64]) -> f64 {
    let pts: Vec<&[f64]> = coords.chunks_exact(n).collect();
    let mut best: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.max(distance(pts[i], pts[j]));
        }
    }
    best
}

pub(crate) fn min_separation(n: usize, coords: &[f64]) -> Option<f64> {
    let pts: Vec<&[f64]> = coords.chunks_exact(n).collect();
    let mut best: Option<f64> = None;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = distance(pts[i], pts[j]);
            if d > 0.0 {
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
    }
    best
}

/// On-disk form: `{"n": …, "atoms": [[x1,…,xn,w],…]}` or `"signed_atoms"`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDoc {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signed_atoms: Option<Vec<Vec<f64>>>,
}

impl MeasureDoc {
    fn split(n: usize, rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut coords = Vec::with_capacity(rows.len() * n);
        let mut weights = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != n + 1 {
                return Err(Error::LengthMismatch {
                    what: "atom row",
                    expected: n + 1,
                    got: row.len(),
                });
            }
            coords.extend_from_slice(&row[..n]);
            weights.push(row[n]);
        }
        Ok((coords, weights))
    }

    fn rows(atoms: &Atoms) -> Vec<Vec<f64>> {
        atoms
            .coords
            .chunks_exact(atoms.n)
            .zip(&atoms.weights)
            .map(|(p, w)| {
                let mut row = p.to_vec();
                row.push(*w);
                row
            })
            .collect()
    }
}

impl TryFrom<MeasureDoc> for AtomicMeasure {
    type Error = Error;

    fn try_from(doc: MeasureDoc) -> Result<Self> {
        if doc.signed_atoms.is_some() {
            return Err(invalid("signed_atoms", "a positive measure must use `atoms`"));
        }
        let (coords, weights) = MeasureDoc::split(doc.n, doc.atoms.as_deref().unwrap_or(&[]))?;
        AtomicMeasure::from_flat(doc.n, coords, weights)
    }
}

impl From<AtomicMeasure> for MeasureDoc {
    fn from(mu: AtomicMeasure) -> Self {
        MeasureDoc {
            n: mu.dim(),
            atoms: Some(MeasureDoc::rows(&mu.atoms)),
            signed_atoms: None,
        }
    }
}

impl TryFrom<MeasureDoc> for SignedMeasure {
    type Error = Error;

    fn try_from(doc: MeasureDoc) -> Result<Self> {
        let rows = match (&doc.signed_atoms, &doc.atoms) {
            (Some(r), None) | (None, Some(r)) => r.as_slice(),
            (None, None) => &[],
            (Some(_), Some(_)) => {
                return Err(invalid("signed_atoms", "give either `atoms` or `signed_atoms`"))
            }
        };
        let (coords, weights) = MeasureDoc::split(doc.n, rows)?;
        SignedMeasure::from_flat(doc.n, coords, weights)
    }
}

impl From<SignedMeasure> for MeasureDoc {
    fn from(nu: SignedMeasure) -> Self {
        MeasureDoc {
            n: nu.dim(),
            atoms: None,
            signed_atoms: Some(MeasureDoc::rows(&nu.atoms)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d(count: usize, lo: f64, hi: f64, w: f64) -> AtomicMeasure {
        let h = (hi - lo) / count as f64;
        AtomicMeasure::new(1, (0..count).map(|i| (vec![lo + h * i as f64], w))).unwrap()
    }

    #[test]
    fn mass_of_empty_measure_is_zero() {
        let mu = AtomicMeasure::empty(2);
        assert_eq!(mu.mass(&Cube::new(vec![0.0, 0.0], 5.0)), 0.0);
        assert_eq!(mu.mass(&Ball::new(vec![0.0, 0.0], 5.0)), 0.0);
    }

    #[test]
    fn single_atom_in_closed_ball() {
        let mu = AtomicMeasure::new(1, [(vec![0.0], 3.0)]).unwrap();
        assert_eq!(mu.mass(&Ball::new(vec![0.0], 1.0)), 3.0);
        // closed ball: boundary point counts
        assert_eq!(mu.mass(&Ball::new(vec![1.0], 1.0)), 3.0);
    }

    #[test]
    fn half_open_cube_matches_direct_count() {
        let mu = grid_1d(100, 0.0, 1.0, 0.01);
        let q = Cube::from_corner(&[0.0], 0.5);
        let count = mu.iter().filter(|(p, _)| p[0] >= 0.0 && p[0] < 0.5).count();
        assert_eq!(count, 50);
        let brute: f64 = mu.iter().filter(|(p, _)| p[0] < 0.5).map(|(_, w)| w).sum();
        assert_eq!(mu.mass(&q), brute);
        assert!((mu.mass(&q) - count as f64 * 0.01).abs() < 1e-14);
        // the atom at 0.5 belongs to the right half only
        let right = Cube::from_corner(&[0.5], 0.5);
        assert!((mu.mass(&q) + mu.mass(&right) - mu.total_mass()).abs() < 1e-15);
    }

    #[test]
    fn duplicates_merge_and_signed_cancel() {
        let mu = AtomicMeasure::new(1, [(vec![0.25], 1.0), (vec![0.5], 2.0), (vec![0.25], 0.5)]).unwrap();
        assert_eq!(mu.len(), 2);
        assert_eq!(mu.weight(0), 1.5);
        let beta = SignedMeasure::new(1, [(vec![0.3], 0.7), (vec![0.3], -0.7)]).unwrap();
        assert!(beta.is_empty());
        assert!(AtomicMeasure::new(1, [(vec![0.0], 0.0)]).is_err());
        assert!(AtomicMeasure::new(1, [(vec![0.0], -1.0)]).is_err());
    }

    #[test]
    fn power_bound_single_atom() {
        let mu = AtomicMeasure::new(1, [(vec![0.0], 1.0)]).unwrap();
        let spec = PowerSampleSpec::Explicit(vec![(vec![0.0], 1.0), (vec![0.0], 2.0), (vec![0.0], 4.0)]);
        let rep = check_power_bound(&mu, 1.0, &spec).unwrap();
        assert_eq!(rep.constant, 1.0);
        assert_eq!(rep.witness, Some((vec![0.0], 1.0)));
        assert!(check_power_bound(&mu, 0.0, &spec).is_err());
        let empty = check_power_bound(&AtomicMeasure::empty(1), 1.0, &spec).unwrap();
        assert_eq!(empty.constant, 0.0);
    }

    #[test]
    fn power_bound_uniform_grid_large_radii() {
        let n = 200;
        let mu = AtomicMeasure::new(1, (0..n).map(|i| (vec![i as f64 / (n - 1) as f64], 1.0 / n as f64))).unwrap();
        let spec = PowerSampleSpec::Random {
            count: 400,
            seed: 3,
            r_min: 1.0,
            r_max: 4.0,
        };
        let rep = check_power_bound(&mu, 1.0, &spec).unwrap();
        assert!(rep.constant >= 1.0 - 1e-12 || rep.constant <= 1.0 + 2.0 / n as f64);
        assert!(rep.constant <= 1.0 + 2.0 / n as f64);
        // exact counting oracle on the same balls
        let balls = spec.balls(&mu).unwrap();
        let oracle = balls
            .iter()
            .map(|(x, r)| {
                let count = (0..n)
                    .filter(|i| (*i as f64 / (n - 1) as f64 - x[0]).abs() <= *r)
                    .count();
                count as f64 / n as f64 / r
            })
            .fold(0.0, f64::max);
        assert!((oracle - rep.constant).abs() < 1e-12);
    }

    #[test]
    fn doubling_ratio_conventions() {
        let mu = grid_1d(1000, 0.0, 1.0, 0.001);
        let q = Cube::new(vec![0.5], 0.1);
        let d = is_doubling_cube(&mu, &q, 2.0, 3.0);
        assert!(d.doubling);
        assert!((d.ratio - 2.0).abs() < 0.02);

        let single = AtomicMeasure::new(1, [(vec![0.5], 1.0)]).unwrap();
        let d = is_doubling_cube(&single, &q, 2.0, 2.0);
        assert!(d.doubling);
        assert_eq!(d.ratio, 1.0);

        let off = AtomicMeasure::new(1, [(vec![0.58], 1.0)]).unwrap();
        let d = is_doubling_cube(&off, &q, 2.0, 2.0);
        assert!(!d.doubling);
        assert_eq!(d.ratio, f64::INFINITY);
        let d = is_doubling_cube(&AtomicMeasure::empty(1), &q, 2.0, 2.0);
        assert!(d.doubling);
        assert_eq!(d.ratio, 1.0);
    }

    #[test]
    fn small_boundary_cases() {
        let q = Cube::from_corner(&[0.0, 0.0], 1.0);
        assert!(has_small_boundary(&AtomicMeasure::empty(2), &q, 1.0, &default_xi_grid()));

        let corner = AtomicMeasure::new(2, [(vec![0.0, 0.0], 1.0)]).unwrap();
        assert!(!has_small_boundary(&corner, &q, 0.5, &[1e-3]));

        // dense uniform grid on 2Q = [-0.5, 1.5)
        let q1 = Cube::from_corner(&[0.0], 1.0);
        let mu = grid_1d(4000, -0.5, 1.5, 1.0 / 4000.0);
        let xi: Vec<f64> = (0..=10).map(|j| 0.5f64.powi(j)).collect();
        assert!(has_small_boundary(&mu, &q1, 8.0, &xi));
        // band-count oracle for one ξ
        let band = mu
            .iter()
            .filter(|(p, _)| (p[0]).abs() <= 0.25 || (p[0] - 1.0).abs() <= 0.25)
            .map(|(_, w)| w)
            .sum::<f64>();
        assert!((band - boundary_band_mass(&mu, &q1, 0.25)).abs() < 1e-12);
    }

    #[test]
    fn maximal_function_examples() {
        let mu = AtomicMeasure::new(1, [(vec![0.0], 0.5), (vec![1.0], 0.5)]).unwrap();
        let c = SampledFunction::constant(&mu, 2.5);
        let radii = log_radii(0.1, 4.0, 10);
        assert!((maximal_function(&mu, &c, &[0.0], &radii) - 2.5).abs() < 1e-15);
        let ind = SampledFunction::new(vec![1.0, 0.0]);
        assert_eq!(maximal_function(&mu, &ind, &[0.0], &[0.5, 2.0]), 1.0);
        assert_eq!(maximal_function(&mu, &SampledFunction::zeros(&mu), &[0.3], &radii), 0.0);
        // no ball hits an atom
        assert_eq!(maximal_function(&mu, &c, &[10.0], &[0.1]), 0.0);
    }

    #[test]
    fn json_round_trip_keeps_full_precision() {
        let mu = AtomicMeasure::new(2, [(vec![0.1, 1.0 / 3.0], std::f64::consts::PI), (vec![-2.0, 1e-300], 0.7)]).unwrap();
        let s = serde_json::to_string(&mu).unwrap();
        let back: AtomicMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(mu, back);
        let nu: SignedMeasure = serde_json::from_str(r#"{"n":1,"signed_atoms":[[0.5,-1.0],[0.25,2.0]]}"#).unwrap();
        assert_eq!(nu.total(), 1.0);
        assert_eq!(nu.total_variation(), 3.0);
        assert!(serde_json::from_str::<AtomicMeasure>(r#"{"n":1,"atoms":[[0.5]]}"#).is_err());
    }
}
