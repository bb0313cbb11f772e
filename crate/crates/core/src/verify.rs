//! Sampled checks of the pointwise inequalities behind the local T1 and
//! good-lambda arguments, plus the level-set, testing-condition and big-piece
//! constructions.
//!
//! Every "≲" is checked with one protocol: ratios lhs/rhs are collected on a
//! calibration set and on a disjoint test set drawn from the same
//! distribution, the constant is `C = 2 · (calibration max)`, and the check
//! passes iff the test max is at most `C`. Samples with `lhs = rhs = 0` are
//! skipped. A negative control re-evaluates the test set against the same
//! bound with a corrupted exponent and keeps `C`; it is expected to fail.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomp::CzResult;
use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::measure::{
    default_radius_grid, distance, maximal_function, AtomicMeasure, Cube, Point, Region, SampledFunction,
    SignedMeasure,
};
use crate::operator::{l_t, split_functions, u_t, Evaluator, LambdaParams, Mode, Split};
use crate::par;
use crate::quadrature::QuadratureSpec;
use crate::rng::{derive_seed, stream};

const CALIBRATION: u64 = 1;
const TEST: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleWitness {
    pub label: String,
    pub x: Point,
    pub x_prime: Option<Point>,
    pub t: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeControl {
    pub test_max: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub lemma: String,
    pub calibration_samples: usize,
    pub test_samples: usize,
    pub skipped: usize,
    pub calibration_max: f64,
    pub test_max: f64,
    pub constant: f64,
    pub pass: bool,
    /// test sample attaining `test_max`
    pub witness: Option<SampleWitness>,
    pub negative_control: Option<NegativeControl>,
}

/// One evaluated sample: both sides of the bound and, optionally, the
/// corrupted right-hand side.
#[derive(Clone, Debug)]
pub struct Sample {
    pub lhs: f64,
    pub rhs: f64,
    pub corrupted: Option<f64>,
    pub witness: SampleWitness,
}

fn ratio(lhs: f64, rhs: f64) -> Option<f64> {
    if lhs == 0.0 && rhs == 0.0 {
        None
    } else if lhs == 0.0 {
        Some(0.0)
    } else if rhs == 0.0 {
        Some(f64::INFINITY)
    } else {
        Some(lhs / rhs)
    }
}

/// Applies the calibration/test protocol.
pub fn protocol(lemma: &str, calibration: &[Sample], test: &[Sample]) -> Result<InequalityReport> {
    let mut skipped = 0;
    let mut cal_max: f64 = 0.0;
    let mut used_cal = 0;
    for s in calibration {
        check_sample(s)?;
        match ratio(s.lhs, s.rhs) {
            Some(r) => {
                cal_max = cal_max.max(r);
                used_cal += 1;
            }
            None => skipped += 1,
        }
    }
    let constant = 2.0 * cal_max;
    let mut test_max: f64 = 0.0;
    let mut used_test = 0;
    let mut witness = None;
    let mut nc_max: Option<f64> = None;
    for s in test {
        check_sample(s)?;
        match ratio(s.lhs, s.rhs) {
            Some(r) => {
                used_test += 1;
                if witness.is_none() || r > test_max {
                    test_max = test_max.max(r);
                    witness = Some(s.witness.clone());
                }
            }
            None => skipped += 1,
        }
        if let Some(c) = s.corrupted {
            if let Some(r) = ratio(s.lhs, c) {
                nc_max = Some(nc_max.unwrap_or(0.0).max(r));
            }
        }
    }
    Ok(InequalityReport {
        lemma: lemma.to_string(),
        calibration_samples: used_cal,
        test_samples: used_test,
        skipped,
        calibration_max: cal_max,
        test_max,
        constant,
        pass: test_max <= constant,
        witness,
        negative_control: nc_max.map(|m| NegativeControl {
            test_max: m,
            pass: m <= constant,
        }),
    })
}

fn check_sample(s: &Sample) -> Result<()> {
    let bad = |v: f64| v.is_nan() || v < 0.0;
    if bad(s.lhs) || bad(s.rhs) || s.corrupted.is_some_and(bad) {
        return Err(Error::NonFinite { op: "inequality sample" });
    }
    Ok(())
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp()
}

/// Random point on the boundary of the cube [−1, 1]ⁿ.
fn sup_sphere(rng: &mut ChaCha8Rng, n: usize) -> Point {
    let face = rng.random_range(0..n);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| if k == face { sign } else { rng.random_range(-1.0..1.0) })
        .collect()
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Point {
    loop {
        let v: Point = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if r > 1e-3 && r <= 1.0 {
            return v.into_iter().map(|a| a / r).collect();
        }
    }
}

fn random_point_in(rng: &mut ChaCha8Rng, q: &Cube) -> Point {
    q.lower()
        .iter()
        .map(|lo| lo + q.side * rng.random::<f64>())
        .collect()
}

/// How random functions on the atoms of μ are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FunctionSampler {
    Zero,
    /// values uniform in [low, high], the whole function then scaled by a
    /// log-uniform amplitude in [amp_min, 1]
    Uniform { low: f64, high: f64, amp_min: f64 },
}

impl Default for FunctionSampler {
    fn default() -> Self {
        // |θ_t f| ≤ θ_t|f| for positive kernels, so sign changes only move
        // samples away from the extremal ratios
        FunctionSampler::Uniform {
            low: 0.0,
            high: 1.0,
            amp_min: 1e-2,
        }
    }
}

impl FunctionSampler {
    pub fn draw(&self, rng: &mut ChaCha8Rng, mu: &AtomicMeasure) -> SampledFunction {
        match *self {
            FunctionSampler::Zero => SampledFunction::zeros(mu),
            FunctionSampler::Uniform { low, high, amp_min } => {
                let vals: Vec<f64> = (0..mu.len()).map(|_| low + (high - low) * rng.random::<f64>()).collect();
                let amp = log_uniform(rng, amp_min.min(1.0), 1.0);
                SampledFunction::new(vals).scaled(amp)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub samples: usize,
    pub seed: u64,
    pub functions: FunctionSampler,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            samples: 200,
            seed: 0,
            functions: FunctionSampler::default(),
        }
    }
}

fn both_sets<F>(params: &SuiteParams, salt: u64, draw: F) -> Result<(Vec<Sample>, Vec<Sample>)>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Option<Sample>> + Sync + Send,
{
    let run = |set: u64| -> Result<Vec<Sample>> {
        let seed = derive_seed(derive_seed(params.seed, salt), set);
        par::map_range(params.samples, |i| draw(&mut stream(seed, i as u64)))
            .into_iter()
            .filter_map(|r| r.transpose())
            .collect()
    };
    Ok((run(CALIBRATION)?, run(TEST)?))
}

fn sampling_box(mu: &AtomicMeasure) -> Cube {
    match mu.bounding_box() {
        Some((lo, hi)) => {
            let side = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max).max(1e-3);
            let center = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
            Cube::new(center, 1.5 * side)
        }
        None => Cube::new(vec![0.0; mu.dim()], 1.0),
    }
}

fn corrupted_l_t(spec: &KernelSpec, mu: &AtomicMeasure, f: &SampledFunction, x: &[f64], t: f64) -> f64 {
    // exponent m + α/4 raised to 2m + α/4
    mu.iter()
        .zip(f.values())
        .map(|((p, w), v)| {
            let d = distance(x, p);
            (t / (t + d)).powf(spec.m + spec.alpha / 4.0) * (t + d).powf(-spec.m) * v.abs() * w
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaUReport {
    pub domination: InequalityReport,
    pub lipschitz: InequalityReport,
}

/// 𝒰_t(f̄)(x) ≲ ∏ 𝓛_t(fᵢ)(x) and
/// |𝒰_t(f̄)(x) − 𝒰_t(f̄)(x₀)| ≲ t⁻¹|x − x₀| ∏ 𝓛_t(fᵢ)(x̄) for some x̄ on [x₀, x].
///
/// x is uniform in a box 1.5 times the hull of μ, t log-uniform in the
/// quadrature window, |x − x₀| log-uniform in [t·2⁻¹⁰, t/2), and x̄ ranges
/// over 9 interior points of the segment.
pub fn check_lemma_u(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    quad: &QuadratureSpec,
    params: &SuiteParams,
    mode: Mode,
) -> Result<LemmaUReport> {
    lp.check_hypotheses(spec)?;
    quad.validate()?;
    let n = mu.dim();
    let bx = sampling_box(mu);
    let tol = quad.prune_tol;
    let draw_common = |rng: &mut ChaCha8Rng| {
        let fs: Vec<SampledFunction> = (0..spec.kappa).map(|_| params.functions.draw(rng, mu)).collect();
        let x = random_point_in(rng, &bx);
        let t = log_uniform(rng, quad.t_min, quad.t_max);
        (fs, x, t)
    };
    let (cal, test) = both_sets(params, 0x55, |rng| {
        let (fs, x, t) = draw_common(rng);
        let refs: Vec<&SampledFunction> = fs.iter().collect();
        let lhs = u_t(spec, lp, mu, &refs, &x, t, mode, tol)?;
        let mut rhs = 1.0;
        let mut bad = 1.0;
        for f in &fs {
            rhs *= l_t(spec, mu, f, &x, t)?;
            bad *= corrupted_l_t(spec, mu, f, &x, t);
        }
        Ok(Some(Sample {
            lhs,
            rhs,
            corrupted: Some(bad),
            witness: SampleWitness {
                label: "domination".into(),
                x,
                x_prime: None,
                t: Some(t),
                lhs,
                rhs,
            },
        }))
    })?;
    let domination = protocol("U", &cal, &test)?;

    let (cal, test) = both_sets(params, 0x56, |rng| {
        let (fs, x, t) = draw_common(rng);
        let refs: Vec<&SampledFunction> = fs.iter().collect();
        let dir = unit_vector(rng, n);
        let r = log_uniform(rng, t * 2f64.powi(-10), t / 2.0);
        let x0: Point = x.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
        let lhs = (u_t(spec, lp, mu, &refs, &x, t, mode, tol)? - u_t(spec, lp, mu, &refs, &x0, t, mode, tol)?).abs();
        let mut best: f64 = 0.0;
        for k in 1..=9 {
            let th = k as f64 / 10.0;
            let xb: Point = x0.iter().zip(&x).map(|(a, b)| a + th * (b - a)).collect();
            let mut p = 1.0;
            for f in &fs {
                p *= l_t(spec, mu, f, &xb, t)?;
            }
            best = best.max(p);
        }
        let step = distance(&x, &x0) / t;
        Ok(Some(Sample {
            lhs,
            rhs: step * best,
            // exponent of |x − x₀|/t raised from 1 to 2
            corrupted: Some(step * step * best),
            witness: SampleWitness {
                label: "lipschitz".into(),
                x,
                x_prime: Some(x0),
                t: Some(t),
                lhs,
                rhs: step * best,
            },
        }))
    })?;
    let lipschitz = protocol("U-lipschitz", &cal, &test)?;
    Ok(LemmaUReport { domination, lipschitz })
}

/// The three split patterns with at least one far slot for κ = 2.
pub fn split_patterns(kappa: usize) -> Vec<Vec<Split>> {
    let mut out = Vec::new();
    for mask in 1..(1usize << kappa) {
        out.push(
            (0..kappa)
                .map(|i| if mask >> i & 1 == 1 { Split::Far } else { Split::Near })
                .collect(),
        );
    }
    out
}

fn split_label(s: &[Split]) -> String {
    s.iter()
        .map(|v| match v {
            Split::Near => "near",
            Split::Far => "far",
        })
        .collect::<Vec<_>>()
        .join("_")
}

/// 𝒯(f̄^r)(x) ≲ ∏ M_μ fᵢ(x) for x, x' uniform in Q and a fresh function
/// tuple per sample, one report per split pattern. The corrupted bound
/// squares the product of maximal functions.
#[allow(clippy::too_many_arguments)]
pub fn check_lemma_t(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    q: &Cube,
    c0: f64,
    quad: &QuadratureSpec,
    params: &SuiteParams,
    mode: Mode,
) -> Result<Vec<InequalityReport>> {
    quad.validate()?;
    if !(c0 > 0.0) {
        return Err(invalid("c0", "must be positive"));
    }
    let nodes = quad.nodes_between(c0 * q.side, quad.t_max);
    let mut reports = Vec::new();
    for (pi, pattern) in split_patterns(spec.kappa).into_iter().enumerate() {
        let label = split_label(&pattern);
        let (cal, test) = both_sets(params, 0x54 + pi as u64, |rng| {
            let fs: Vec<SampledFunction> = (0..spec.kappa).map(|_| params.functions.draw(rng, mu)).collect();
            let x = random_point_in(rng, q);
            let xp = random_point_in(rng, q);
            let refs: Vec<&SampledFunction> = fs.iter().collect();
            let parts = split_functions(mu, &refs, &pattern, q)?;
            let prefs: Vec<&SampledFunction> = parts.iter().collect();
            let ev = Evaluator::for_functions(spec, lp, mu, &prefs, nodes.clone(), mode, quad.prune_tol)?;
            let lhs = ev.tail(&x, &xp)?;
            let radii = default_radius_grid(mu, &x);
            let rhs: f64 = fs.iter().map(|f| maximal_function(mu, f, &x, &radii)).product();
            Ok(Some(Sample {
                lhs,
                rhs,
                corrupted: Some(rhs * rhs),
                witness: SampleWitness {
                    label: label.clone(),
                    x,
                    x_prime: Some(xp),
                    t: None,
                    lhs,
                    rhs,
                },
            }))
        })?;
        reports.push(protocol(&format!("T/{label}"), &cal, &test)?);
    }
    Ok(reports)
}

/// The same rule with t_max raised to at least 8 times `reach`, so that the
/// scales comparable to the farthest evaluation distance are integrated.
fn widened(quad: &QuadratureSpec, reach: f64) -> QuadratureSpec {
    QuadratureSpec {
        t_max: quad.t_max.max(8.0 * reach),
        ..quad.clone()
    }
}

// -------------------------------------------------------------- level sets

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub xi: f64,
    /// indices into the evaluation grid with g* > ξ
    pub indices: Vec<usize>,
}

/// g*_{λ,μ,t₀}(f̄) on the evaluation grid.
#[allow(clippy::too_many_arguments)]
pub fn truncated_values(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    fs: &[&SampledFunction],
    t0: f64,
    grid: &[Point],
    quad: &QuadratureSpec,
    mode: Mode,
) -> Result<Vec<f64>> {
    quad.validate()?;
    let ev = Evaluator::for_functions(spec, lp, mu, fs, quad.nodes_between(t0, quad.t_max), mode, quad.prune_tol)?;
    ev.g_star_many(grid)
}

/// Ω_ξ restricted to the grid, from precomputed values.
pub fn level_set_of(values: &[f64], xi: f64) -> LevelSet {
    LevelSet {
        xi,
        indices: values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > xi)
            .map(|(i, _)| i)
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn level_set(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    fs: &[&SampledFunction],
    t0: f64,
    xi: f64,
    grid: &[Point],
    quad: &QuadratureSpec,
    mode: Mode,
) -> Result<LevelSet> {
    Ok(level_set_of(&truncated_values(spec, lp, mu, fs, t0, grid, quad, mode)?, xi))
}

/// max |g(x) − g(x')| / |x − x'| over the supplied pairs.
#[allow(clippy::too_many_arguments)]
pub fn continuity_modulus(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    fs: &[&SampledFunction],
    t0: f64,
    pairs: &[(Point, Point)],
    quad: &QuadratureSpec,
    mode: Mode,
) -> Result<f64> {
    let pts: Vec<Point> = pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    let v = truncated_values(spec, lp, mu, fs, t0, &pts, quad, mode)?;
    Ok(pairs
        .iter()
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (a, b))| (v[2 * i] - v[2 * i + 1]).abs() / distance(a, b))
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub p: f64,
    pub points_per_ray: usize,
    pub rays: usize,
    /// farthest sampled distance in units of the support radius
    pub reach: f64,
    pub seed: u64,
}

impl Default for DecayParams {
    fn default() -> Self {
        DecayParams {
            p: 2.0,
            points_per_ray: 20,
            rays: 1,
            reach: 256.0,
            seed: 0,
        }
    }
}

/// Far-field decay g*_{λ,μ,t₀}(f̄)(x) ≲ (t₀ + dist(x, B))^{−(2m−ε)} with
/// ε = m(1 − 1/p)/2 and B the smallest centred ball holding the support.
/// Rays leave the centre of B in random directions; the corrupted bound uses
/// the exponent 3m.
#[allow(clippy::too_many_arguments)]
pub fn check_decay(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    fs: &[&SampledFunction],
    t0: f64,
    quad: &QuadratureSpec,
    params: &DecayParams,
    mode: Mode,
) -> Result<InequalityReport> {
    if !(params.p > 1.0) {
        return Err(invalid("p", "must exceed 1"));
    }
    let Some((lo, hi)) = mu.bounding_box() else {
        return protocol("decay", &[], &[]);
    };
    let center: Point = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let radius = mu
        .iter()
        .map(|(p, _)| distance(p, &center))
        .fold(0.0, f64::max)
        .max(t0);
    let eps = spec.m * (1.0 - 1.0 / params.p) / 2.0;
    let expo = 2.0 * spec.m - eps;
    let quad = widened(quad, radius * (2.0 + params.reach));
    let ev = Evaluator::for_functions(spec, lp, mu, fs, quad.nodes_between(t0, quad.t_max), mode, quad.prune_tol)?;
    let mut sets = Vec::new();
    for set in [CALIBRATION, TEST] {
        let seed = derive_seed(derive_seed(params.seed, 0x44), set);
        let mut pts = Vec::new();
        let mut dists = Vec::new();
        for r in 0..params.rays {
            let mut rng = stream(seed, r as u64);
            let dir = unit_vector(&mut rng, mu.dim());
            for k in 0..params.points_per_ray {
                let base = (k as f64 + rng.random::<f64>()) / params.points_per_ray as f64;
                let d = radius * params.reach.powf(base);
                pts.push(center.iter().zip(&dir).map(|(c, u)| c + (radius + d) * u).collect::<Point>());
                dists.push(d);
            }
        }
        let vals = ev.g_star_many(&pts)?;
        sets.push(
            pts.into_iter()
                .zip(vals)
                .zip(dists)
                .map(|((x, v), d)| {
                    let rhs = (t0 + d).powf(-expo);
                    Sample {
                        lhs: v,
                        rhs,
                        corrupted: Some((t0 + d).powf(-3.0 * spec.m)),
                        witness: SampleWitness {
                            label: "decay".into(),
                            x,
                            x_prime: None,
                            t: None,
                            lhs: v,
                            rhs,
                        },
                    }
                })
                .collect::<Vec<_>>(),
        );
    }
    protocol("decay", &sets[0], &sets[1])
}

// ------------------------------------------------------ testing condition

/// g*_{λ,μ,Q}(1_Q, …, 1_Q) at every atom of μ lying in Q, as
/// (atom index, value).
pub fn local_g_star_on_cube(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    q: &Cube,
    quad: &QuadratureSpec,
    mode: Mode,
) -> Result<Vec<(usize, f64)>> {
    quad.validate()?;
    let ind = SampledFunction::indicator(mu, q);
    let refs: Vec<&SampledFunction> = (0..spec.kappa).map(|_| &ind).collect();
    let ev = Evaluator::for_functions(spec, lp, mu, &refs, quad.nodes_between(quad.t_min, q.side), mode, quad.prune_tol)?;
    let idx = mu.indices_in(q);
    let pts: Vec<Point> = idx.iter().map(|&a| mu.point(a).to_vec()).collect();
    Ok(idx.into_iter().zip(ev.g_star_many(&pts)?).collect())
}

/// H_Q as the atoms with the largest local g* whose cumulative mass stays
/// within δ₀ μ(Q).
pub fn adversarial_exceptional_set(values: &[(usize, f64)], mu: &AtomicMeasure, delta0: f64) -> Vec<usize> {
    let total: f64 = values.iter().map(|(a, _)| mu.weight(*a)).sum();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut acc = 0.0;
    let mut h = Vec::new();
    for (a, _) in sorted {
        if acc + mu.weight(a) > delta0 * total {
            break;
        }
        acc += mu.weight(a);
        h.push(a);
    }
    h.sort_unstable();
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestingConditionReport {
    pub mass_q: f64,
    pub mass_h: f64,
    pub delta0: f64,
    pub p0: f64,
    pub exceptional_ok: bool,
    /// exact sup over ζ > 0 of ζ^{p₀} μ({g > ζ} \ H)/μ(Q)
    pub c0: f64,
    /// the same sup over a geometric ζ grid
    pub c0_grid: f64,
    pub zeta_grid: Vec<f64>,
    pub pass: bool,
}

/// Realized C₀ of the testing condition from local g* values at the atoms
/// of Q.
pub fn check_testing_condition(
    mu: &AtomicMeasure,
    values: &[(usize, f64)],
    h: &[usize],
    p0: f64,
    delta0: f64,
    grid_points: usize,
) -> Result<TestingConditionReport> {
    if !(p0 > 0.0) {
        return Err(invalid("p0", "must be positive"));
    }
    if !(0.0..=1.0).contains(&delta0) {
        return Err(invalid("delta0", "must lie in [0, 1]"));
    }
    let mass_q: f64 = values.iter().map(|(a, _)| mu.weight(*a)).fold(0.0, |s, w| s + w);
    let mass_h: f64 = values
        .iter()
        .filter(|(a, _)| h.contains(a))
        .map(|(a, _)| mu.weight(*a))
        .fold(0.0, |s, w| s + w);
    let exceptional_ok = mass_h <= delta0 * mass_q;
    let mut rest: Vec<(f64, f64)> = values
        .iter()
        .filter(|(a, _)| !h.contains(a))
        .map(|(a, v)| (*v, mu.weight(*a)))
        .collect();
    if rest.iter().any(|(v, _)| !v.is_finite()) {
        return Err(Error::NonFinite { op: "testing condition" });
    }
    rest.sort_by(|a, b| b.0.total_cmp(&a.0));
    let normalise = |m: f64| if mass_q > 0.0 { m / mass_q } else { 0.0 };
    // ζ ↑ v_k: μ({g > ζ}) tends to μ({g ≥ v_k})
    let mut c0: f64 = 0.0;
    let mut acc = 0.0;
    let mut k = 0;
    while k < rest.len() {
        let v = rest[k].0;
        while k < rest.len() && rest[k].0 == v {
            acc += rest[k].1;
            k += 1;
        }
        if v > 0.0 {
            c0 = c0.max(v.powf(p0) * normalise(acc));
        }
    }
    let positive: Vec<f64> = rest.iter().map(|r| r.0).filter(|v| *v > 0.0).collect();
    let zeta_grid = match (positive.last(), positive.first()) {
        (Some(&lo), Some(&hi)) if grid_points > 1 && hi > lo => crate::measure::log_radii(lo, hi, grid_points),
        (Some(&lo), _) => vec![lo],
        _ => Vec::new(),
    };
    let c0_grid = zeta_grid
        .iter()
        .map(|&z| z.powf(p0) * normalise(rest.iter().filter(|r| r.0 > z).map(|r| r.1).sum()))
        .fold(0.0, f64::max);
    Ok(TestingConditionReport {
        mass_q,
        mass_h,
        delta0,
        p0,
        exceptional_ok,
        c0,
        c0_grid,
        zeta_grid,
        pass: exceptional_ok && c0.is_finite(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigPieceResult {
    pub q: Cube,
    pub h: Vec<usize>,
    pub zeta0: f64,
    pub s: Vec<usize>,
    pub g: Vec<usize>,
    pub mass_q: f64,
    pub mass_h: f64,
    pub mass_s: f64,
    pub mass_g: f64,
    /// (1 − δ₀)/2 · μ(Q)
    pub bound: f64,
    pub holds: bool,
}

/// ζ₀ = (2C₀/(1 − δ₀))^{1/p₀}.
pub fn zeta0(c0: f64, delta0: f64, p0: f64) -> f64 {
    (2.0 * c0 / (1.0 - delta0)).powf(1.0 / p0)
}

/// S_Q = {x ∈ Q \ H_Q : g > ζ₀} and G_Q = Q \ (H_Q ∪ S_Q).
pub fn big_piece(
    q: &Cube,
    mu: &AtomicMeasure,
    values: &[(usize, f64)],
    h: &[usize],
    p0: f64,
    delta0: f64,
    c0: f64,
) -> Result<BigPieceResult> {
    if !(p0 > 0.0) || !(0.0..1.0).contains(&delta0) || !(c0 >= 0.0) {
        return Err(invalid("big_piece", "need p0 > 0, 0 <= delta0 < 1 and C0 >= 0"));
    }
    let z = zeta0(c0, delta0, p0);
    let (mut s, mut g) = (Vec::new(), Vec::new());
    for &(a, v) in values {
        if h.contains(&a) {
            continue;
        }
        if v > z {
            s.push(a);
        } else {
            g.push(a);
        }
    }
    let mass = |ids: &[usize]| ids.iter().map(|&a| mu.weight(a)).fold(0.0, |s, w| s + w);
    let mass_q: f64 = values.iter().map(|(a, _)| mu.weight(*a)).fold(0.0, |s, w| s + w);
    let in_q_h: Vec<usize> = h.iter().copied().filter(|a| values.iter().any(|(b, _)| b == a)).collect();
    let mass_g = mass(&g);
    let bound = (1.0 - delta0) / 2.0 * mass_q;
    Ok(BigPieceResult {
        q: q.clone(),
        zeta0: z,
        mass_q,
        mass_h: mass(&in_q_h),
        mass_s: mass(&s),
        mass_g,
        bound,
        holds: mass_g >= bound,
        h: in_q_h,
        s,
        g,
    })
}

// ------------------------------------------------------------ good lambda

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaRow {
    pub xi: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaReport {
    pub epsilon: f64,
    pub delta: f64,
    pub theta: f64,
    pub rho0: f64,
    pub rows: Vec<GoodLambdaRow>,
    pub fraction_holding: f64,
    /// largest δ (to bisection accuracy) for which every ξ holds
    pub delta_star: f64,
}

/// Everything the good-lambda comparison needs at the atoms of μ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodLambdaData {
    pub g: Vec<f64>,
    pub maximal_product: Vec<f64>,
    pub weights: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn good_lambda_data(
    spec: &KernelSpec,
    lp: LambdaParams,
    mu: &AtomicMeasure,
    fs: &[&SampledFunction],
    t0: f64,
    quad: &QuadratureSpec,
    mode: Mode,
) -> Result<GoodLambdaData> {
    let pts: Vec<Point> = mu.iter().map(|(p, _)| p.to_vec()).collect();
    let g = truncated_values(spec, lp, mu, fs, t0, &pts, quad, mode)?;
    let maximal_product = par::map(&pts, |x| {
        let radii = default_radius_grid(mu, x);
        fs.iter().map(|f| maximal_function(mu, f, x, &radii)).product()
    });
    Ok(GoodLambdaData {
        g,
        maximal_product,
        weights: mu.weights().to_vec(),
    })
}

/// 40-point geometric ξ grid spanning the positive values of g.
pub fn default_xi_ladder(data: &GoodLambdaData, points: usize) -> Vec<f64> {
    let pos: Vec<f64> = data.g.iter().copied().filter(|v| *v > 0.0).collect();
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pos.iter().copied().fold(0.0, f64::max);
    if pos.is_empty() {
        return Vec::new();
    }
    crate::measure::log_radii(lo / 2.0, hi, points)
}

fn good_lambda_rows(data: &GoodLambdaData, eps: f64, delta: f64, factor: f64, xis: &[f64]) -> Vec<GoodLambdaRow> {
    xis.iter()
        .map(|&xi| {
            let mut lhs = 0.0;
            let mut big = 0.0;
            for ((g, m), w) in data.g.iter().zip(&data.maximal_product).zip(&data.weights) {
                if *g > (1.0 + eps) * xi && *m <= delta * xi {
                    lhs += w;
                }
                if *g > xi {
                    big += w;
                }
            }
            let rhs = factor * big;
            GoodLambdaRow {
                xi,
                lhs,
                rhs,
                holds: lhs <= rhs,
            }
        })
        .collect()
}

/// μ({g > (1+ε)ξ, ∏ M_μ fᵢ ≤ δξ}) ≤ (1 − θ/(16ρ₀)) μ({g > ξ}) on a ξ grid,
/// with both sides exact sums over atoms, and δ* by log-scale bisection.
pub fn check_good_lambda(
    data: &GoodLambdaData,
    eps: f64,
    delta: f64,
    xis: &[f64],
    theta: f64,
    rho0: f64,
) -> Result<GoodLambdaReport> {
    if !(eps > 0.0) || !(delta > 0.0) {
        return Err(invalid("good_lambda", "epsilon and delta must be positive"));
    }
    if !(theta > 0.0 && theta <= 16.0 * rho0) {
        return Err(invalid("theta", "need 0 < theta <= 16 rho0"));
    }
    let factor = 1.0 - theta / (16.0 * rho0);
    let rows = good_lambda_rows(data, eps, delta, factor, xis);
    let holding = rows.iter().filter(|r| r.holds).count();
    let all_hold = |d: f64| good_lambda_rows(data, eps, d, factor, xis).iter().all(|r| r.holds);

    let min_m = data
        .maximal_product
        .iter()
        .copied()
        .filter(|m| *m > 0.0)
        .fold(f64::INFINITY, f64::min);
    let max_m = data.maximal_product.iter().copied().fold(0.0, f64::max);
    let min_xi = xis.iter().copied().fold(f64::INFINITY, f64::min);
    let max_xi = xis.iter().copied().fold(0.0, f64::max);
    let delta_star = if xis.is_empty() || !min_m.is_finite() {
        f64::INFINITY
    } else {
        // below lo the constraint set is empty for every ξ; above hi it no
        // longer depends on δ
        let mut lo = 0.5 * min_m / max_xi;
        let mut hi = 2.0 * max_m / min_xi;
        if all_hold(hi) {
            f64::INFINITY
        } else if !all_hold(lo) {
            0.0
        } else {
            for _ in 0..80 {
                let mid = (lo * hi).sqrt();
                if all_hold(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };
    Ok(GoodLambdaReport {
        epsilon: eps,
        delta,
        theta,
        rho0,
        fraction_holding: if rows.is_empty() { 1.0 } else { holding as f64 / rows.len() as f64 },
        rows,
        delta_star,
    })
}

// --------------------------------------------------- CZ pointwise bounds

/// The five pointwise bounds for pieces of two CZ decompositions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaBound {
    /// g*(β₁ⁱ, g₂μ) off 4R₁ⁱ
    BetaG,
    /// g*(β₁ⁱ, φ₂ʲμ) off 4R₁ⁱ
    BetaPhi,
    /// g*(β₁ⁱ, β₂ʲ) off 4R₁ⁱ ∪ 4R₂ʲ
    BetaBeta,
    /// g*(β₁ⁱ, w₂ʲν₂) on 4R₂ʲ \ (4R₁ⁱ ∪ 4Q₂ʲ)
    BetaW,
    /// g*(w₁ⁱν₁, w₂ʲν₂) off 2Q₁ⁱ ∪ 2Q₂ʲ
    WW,
}

impl BetaBound {
    pub const ALL: [BetaBound; 5] = [
        BetaBound::BetaG,
        BetaBound::BetaPhi,
        BetaBound::BetaBeta,
        BetaBound::BetaW,
        BetaBound::WW,
    ];

    pub fn id(self) -> &'static str {
        match self {
            BetaBound::BetaG => "beta_g",
            BetaBound::BetaPhi => "beta_phi",
            BetaBound::BetaBeta => "beta_beta",
            BetaBound::BetaW => "beta_w",
            BetaBound::WW => "w_w",
        }
    }

    fn uses_second_cube(self) -> bool {
        self != BetaBound::BetaG
    }
}

/// Two CZ decompositions (of ν₁ and ν₂ against the same μ).
pub struct CzPair<'a> {
    pub mu: &'a AtomicMeasure,
    pub nu1: &'a SignedMeasure,
    pub nu2: &'a SignedMeasure,
    pub cz1: &'a CzResult,
    pub cz2: &'a CzResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub samples: usize,
    pub seed: u64,
    /// cubes of each decomposition taken into the suite, heaviest first
    pub max_cubes: usize,
    /// farthest sampled distance in units of the anchor cube
    pub reach: f64,
}

impl Default for BetaParams {
    fn default() -> Self {
        BetaParams {
            samples: 200,
            seed: 0,
            max_cubes: 3,
            reach: 64.0,
        }
    }
}

fn heaviest(cz: &CzResult, k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..cz.cubes.len()).collect();
    ids.sort_by(|a, b| cz.cubes[*b].nu_variation.total_cmp(&cz.cubes[*a].nu_variation).then(a.cmp(b)));
    ids.truncate(k);
    ids
}

/// Checks the five bounds with the calibration/test protocol. Points are
/// drawn at log-uniform sup-distances from the anchor cube (R₁ⁱ, or Q₁ⁱ for
/// the last bound, or uniformly in 4R₂ʲ for `BetaW` and for half of the
/// `BetaPhi` and `BetaBeta` draws) and rejected when they
/// fall in the excluded region. The corrupted bound carries an extra
/// (ℓ(R₁ⁱ)/|x − c_{R₁ⁱ}|)^m.
pub fn check_pointwise_beta(
    spec: &KernelSpec,
    lp: LambdaParams,
    pair: &CzPair,
    quad: &QuadratureSpec,
    params: &BetaParams,
    mode: Mode,
) -> Result<Vec<InequalityReport>> {
    if spec.kappa != 2 {
        return Err(invalid("kappa", "the CZ pointwise bounds are bilinear"));
    }
    quad.validate()?;
    let mu = pair.mu;
    let c1 = heaviest(pair.cz1, params.max_cubes);
    let c2 = heaviest(pair.cz2, params.max_cubes);
    let widest = c1
        .iter()
        .map(|&i| pair.cz1.cubes[i].companion.side)
        .chain(c2.iter().map(|&j| 4.0 * pair.cz2.cubes[j].companion.side))
        .fold(0.0, f64::max);
    let nodes = widened(quad, params.reach * widest + mu.diameter()).nodes();
    let g2 = SignedMeasure::from_density(mu, &pair.cz2.g)?;
    let (m, a) = (spec.m, spec.alpha);
    let beta_norm = |i: usize| pair.cz1.betas[i].total_variation();
    let mut reports = Vec::new();
    for (bi, bound) in BetaBound::ALL.into_iter().enumerate() {
        let js: Vec<usize> = if bound.uses_second_cube() { c2.clone() } else { vec![0] };
        let mut combos = Vec::new();
        if !bound.uses_second_cube() || !c2.is_empty() {
            for &i in &c1 {
                for &j in &js {
                    combos.push((i, j));
                }
            }
        }
        let mut evs = Vec::with_capacity(combos.len());
        for &(i, j) in &combos {
            let first = match bound {
                BetaBound::WW => pair.cz1.weighted_nu(i, pair.nu1),
                _ => pair.cz1.betas[i].clone(),
            };
            let second = match bound {
                BetaBound::BetaG => g2.clone(),
                BetaBound::BetaPhi => SignedMeasure::from_density(mu, &pair.cz2.phi(j, mu))?,
                BetaBound::BetaBeta => pair.cz2.betas[j].clone(),
                BetaBound::BetaW | BetaBound::WW => pair.cz2.weighted_nu(j, pair.nu2),
            };
            evs.push(Evaluator::new(spec, lp, mu, &[first, second], nodes.clone(), mode, quad.prune_tol)?);
        }
        let draw = |rng: &mut ChaCha8Rng| -> Result<Option<Sample>> {
            if combos.is_empty() {
                return Ok(None);
            }
            let k = rng.random_range(0..combos.len());
            let (i, j) = combos[k];
            let q1 = &pair.cz1.cubes[i];
            // only `BetaG` can run without second cubes, and it never reads q2
            let q2 = pair.cz2.cubes.get(j).unwrap_or(q1);
            let r1 = &q1.companion;
            let excluded = |x: &[f64]| match bound {
                BetaBound::BetaG | BetaBound::BetaPhi => r1.dilate(4.0).contains(x),
                BetaBound::BetaBeta => r1.dilate(4.0).contains(x) || q2.companion.dilate(4.0).contains(x),
                BetaBound::BetaW => {
                    !q2.companion.dilate(4.0).contains(x)
                        || r1.dilate(4.0).contains(x)
                        || q2.cube.dilate(4.0).contains(x)
                }
                BetaBound::WW => q1.cube.dilate(2.0).contains(x) || q2.cube.dilate(2.0).contains(x),
            };
            let mut x = None;
            for _ in 0..64 {
                let near_second = matches!(bound, BetaBound::BetaPhi | BetaBound::BetaBeta) && rng.random::<bool>();
                let cand: Point = match bound {
                    BetaBound::BetaW => random_point_in(rng, &q2.companion.dilate(4.0)),
                    _ if near_second => random_point_in(rng, &q2.companion.dilate(4.0)),
                    _ => {
                        let anchor = if bound == BetaBound::WW { &q1.cube } else { r1 };
                        let inner = if bound == BetaBound::WW { 1.0 } else { 2.0 } * anchor.side;
                        let s = log_uniform(rng, inner, params.reach * anchor.side);
                        let u = sup_sphere(rng, mu.dim());
                        anchor.center.iter().zip(&u).map(|(c, v)| c + s * v).collect()
                    }
                };
                if !excluded(&cand) {
                    x = Some(cand);
                    break;
                }
            }
            let Some(x) = x else {
                return Ok(None);
            };
            let lhs = evs[k].g_star(&x)?;
            let d1 = distance(&x, &r1.center);
            let d2 = distance(&x, &q2.companion.center);
            let l1 = r1.side;
            let l2 = q2.companion.side;
            let rhs = match bound {
                BetaBound::BetaG => pair.cz2.xi * l1.powf(a / 2.0) / d1.powf(m + a / 2.0) * beta_norm(i),
                BetaBound::BetaPhi => {
                    q2.c.abs() * l1.powf(a / 2.0) / d1.powf(m + a / 2.0) * q1.nu_variation
                }
                BetaBound::BetaBeta => {
                    l1.powf(a / 4.0) * q1.nu_variation / d1.powf(m + a / 4.0) * l2.powf(a / 4.0) * q2.nu_variation
                        / d2.powf(m + a / 4.0)
                }
                BetaBound::BetaW => {
                    l1.powf(a / 4.0) * q1.nu_variation / d1.powf(m + a / 4.0) * q2.nu_variation / d2.powf(m)
                }
                BetaBound::WW => q1.nu_variation / d1.powf(m) * q2.nu_variation / d2.powf(m),
            };
            let corrupted = rhs * (l1 / d1).powf(m);
            Ok(Some(Sample {
                lhs,
                rhs,
                corrupted: Some(corrupted),
                witness: SampleWitness {
                    label: format!("{}:{}:{}", bound.id(), i, j),
                    x,
                    x_prime: None,
                    t: None,
                    lhs,
                    rhs,
                },
            }))
        };
        let suite = SuiteParams {
            samples: params.samples,
            seed: params.seed,
            functions: FunctionSampler::Zero,
        };
        let (cal, test) = both_sets(&suite, 0xB0 + bi as u64, draw)?;
        reports.push(protocol(bound.id(), &cal, &test)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(lhs: f64, rhs: f64) -> Sample {
        Sample {
            lhs,
            rhs,
            corrupted: None,
            witness: SampleWitness {
                label: String::new(),
                x: vec![0.0],
                x_prime: None,
                t: None,
                lhs,
                rhs,
            },
        }
    }

    #[test]
    fn protocol_constant_is_twice_calibration_max() {
        let cal = [sample(1.0, 2.0), sample(0.0, 0.0), sample(3.0, 4.0)];
        let test = [sample(1.4, 1.0), sample(0.0, 1.0)];
        let r = protocol("x", &cal, &test).unwrap();
        assert_eq!(r.constant, 1.5);
        assert_eq!(r.calibration_samples, 2);
        assert_eq!(r.skipped, 1);
        assert!(r.pass);
        let r = protocol("x", &cal, &[sample(1.6, 1.0)]).unwrap();
        assert!(!r.pass);
        assert!(protocol("x", &[sample(f64::NAN, 1.0)], &[]).is_err());
    }

    #[test]
    fn vacuous_protocol_passes() {
        let r = protocol("x", &[sample(0.0, 0.0)], &[sample(0.0, 0.0)]).unwrap();
        assert!(r.pass && r.test_samples == 0);
    }

    #[test]
    fn zeta0_special_case() {
        assert_eq!(zeta0(1.0, 0.5, 2.0), 2.0);
    }

    #[test]
    fn testing_condition_single_atom_by_hand() {
        let mu = AtomicMeasure::new(1, [(vec![0.5], 0.25), (vec![3.0], 1.0)]).unwrap();
        let values = vec![(0usize, 2.0)];
        let r = check_testing_condition(&mu, &values, &[], 2.0, 0.5, 10).unwrap();
        // sup_ζ ζ² μ({g > ζ})/μ(Q) = 4
        assert_eq!(r.c0, 4.0);
        assert!(r.c0_grid <= r.c0);
        let r = check_testing_condition(&mu, &values, &[0], 2.0, 1.0, 10).unwrap();
        assert_eq!(r.c0, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn big_piece_trivial_case() {
        let mu = AtomicMeasure::new(1, [(vec![0.1], 1.0), (vec![0.2], 1.0)]).unwrap();
        let q = Cube::new(vec![0.0], 1.0);
        let bp = big_piece(&q, &mu, &[(0, 0.5), (1, 0.1)], &[], 2.0, 0.5, 1.0).unwrap();
        assert_eq!(bp.g, vec![0, 1]);
        assert!(bp.s.is_empty());
        assert_eq!(bp.mass_g, bp.mass_q);
        assert!(bp.holds);
    }

    #[test]
    fn split_patterns_for_two_slots() {
        let p = split_patterns(2);
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|s| s.contains(&Split::Far)));
    }

    #[test]
    fn good_lambda_huge_epsilon_is_empty() {
        let data = GoodLambdaData {
            g: vec![1.0, 2.0, 3.0],
            maximal_product: vec![0.1, 0.2, 0.3],
            weights: vec![1.0; 3],
        };
        let r = check_good_lambda(&data, 1e9, 1.0, &[0.5, 1.0, 2.0], 1.0, 1.0).unwrap();
        assert_eq!(r.fraction_holding, 1.0);
        assert!(r.rows.iter().all(|row| row.lhs == 0.0));
    }
}
