//! Product kernels `s_t(x, ȳ) = amplitude · ∏ᵢ φ(|x − yᵢ|, t)` and sampled
//! checks of the size and Hölder conditions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure::{distance, Point};
use crate::{par, rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// φ(d,t) = t^α / (t + d)^{m+α}
    ProductPoisson,
    /// φ(d,t) = C t^{-m} exp(-(d/t)²), C normalised so the size bound is sharp
    ProductGaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub m: f64,
    pub alpha: f64,
    pub kappa: usize,
    #[serde(default = "default_family")]
    pub family: KernelFamily,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_family() -> KernelFamily {
    KernelFamily::ProductPoisson
}

fn default_amplitude() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn poisson(m: f64, alpha: f64, kappa: usize) -> Self {
        KernelSpec {
            m,
            alpha,
            kappa,
            family: KernelFamily::ProductPoisson,
            amplitude: 1.0,
        }
    }

    pub fn gaussian(m: f64, alpha: f64, kappa: usize) -> Self {
        KernelSpec {
            family: KernelFamily::ProductGaussian,
            ..Self::poisson(m, alpha, kappa)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(invalid("m", "must be a positive real"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be a positive real"));
        }
        if self.kappa < 2 {
            return Err(invalid("kappa", "must be at least 2"));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(invalid("amplitude", "must be a positive real"));
        }
        Ok(())
    }

    /// Exponent γ = α / (2(m + α)) of the good-cube rule.
    pub fn gamma(&self) -> f64 {
        self.alpha / (2.0 * (self.m + self.alpha))
    }

    /// Single-slot profile; the kernel is `amplitude · ∏ slot(|x − yᵢ|, t)`.
    pub fn slot(&self) -> SlotProfile {
        SlotProfile::new(self)
    }

    /// s_t(x, ȳ).
    pub fn eval(&self, x: &[f64], ys: &[&[f64]], t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(invalid("t", "must be positive"));
        }
        if ys.len() != self.kappa {
            return Err(Error::LengthMismatch {
                what: "kernel arguments",
                expected: self.kappa,
                got: ys.len(),
            });
        }
        let slot = self.slot();
        Ok(self.amplitude * ys.iter().map(|y| slot.eval(distance(x, y), t)).product::<f64>())
    }

    /// ∏ (t + |x − yᵢ|)^{m+α} / t^{κα}: the reciprocal of the size bound.
    fn size_denominator(&self, x: &[f64], ys: &[&[f64]], t: f64) -> f64 {
        let e = self.m + self.alpha;
        ys.iter()
            .map(|y| ((t + distance(x, y)) / t).powf(e) * t.powf(self.m))
            .product()
    }
}

/// Precomputed single-slot factor φ(d, t).
#[derive(Clone, Copy, Debug)]
pub struct SlotProfile {
    family: KernelFamily,
    m: f64,
    alpha: f64,
    gauss_c: f64,
}

impl SlotProfile {
    fn new(spec: &KernelSpec) -> Self {
        let e = spec.m + spec.alpha;
        let u = ((1.0 + 2.0 * e).sqrt() - 1.0) / 2.0;
        SlotProfile {
            family: spec.family,
            m: spec.m,
            alpha: spec.alpha,
            gauss_c: (u * u - e * u.ln_1p()).exp(),
        }
    }

    #[inline]
    pub fn eval(&self, d: f64, t: f64) -> f64 {
        match self.family {
            KernelFamily::ProductPoisson => {
                let r = t / (t + d);
                r.powf(self.alpha) * (t + d).powf(-self.m)
            }
            KernelFamily::ProductGaussian => {
                let u = d / t;
                self.gauss_c * t.powf(-self.m) * (-u * u).exp()
            }
        }
    }

    /// Normalising constant of the Gaussian family.
    pub fn gaussian_constant(&self) -> f64 {
        self.gauss_c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Point,
    /// x' for the x-variant, the perturbed y for slot variants, unused for size.
    pub perturbed: Option<Point>,
    pub ys: Vec<Point>,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub max_ratio: f64,
    pub witness: Option<Witness>,
    pub samples_used: usize,
    /// Hölder only: [x-variant, slot 1, …, slot κ].
    pub per_slot: Vec<f64>,
}

fn uniform_point(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Point {
    (0..n).map(|_| rng.random_range(-half..half)).collect()
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

/// Point at distance `d` from `x` in a uniformly random direction.
fn at_distance(rng: &mut ChaCha8Rng, x: &[f64], d: f64) -> Point {
    loop {
        let v: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            return x.iter().zip(&v).map(|(a, b)| a + d * b / norm).collect();
        }
    }
}

struct Draw {
    t: f64,
    x: Point,
    ys: Vec<Point>,
}

fn draw(spec: &KernelSpec, n: usize, rng: &mut ChaCha8Rng) -> Draw {
    let t = log_uniform(rng, 1.0 / 16.0, 16.0);
    let x = uniform_point(rng, n, 4.0);
    let ys = (0..spec.kappa)
        .map(|_| {
            // a quarter of the slots sit exactly at x
            if rng.random::<f64>() < 0.25 {
                x.clone()
            } else {
                let d = log_uniform(rng, t / 64.0, t * 256.0);
                at_distance(rng, &x, d)
            }
        })
        .collect();
    Draw { t, x, ys }
}

fn fold_max(items: Vec<(f64, Witness)>) -> (f64, Option<Witness>) {
    let mut best = 0.0;
    let mut witness = None;
    for (r, w) in items {
        if r > best || witness.is_none() {
            if r > best {
                best = r;
            }
            witness = Some(w);
        }
    }
    (best, witness)
}

/// Sampled sup of |s_t(x,ȳ)| ∏(t+|x−yᵢ|)^{m+α} / t^{κα}.
pub fn check_size(spec: &KernelSpec, n: usize, sample_count: usize, seed: u64) -> Result<ConditionReport> {
    spec.validate()?;
    if sample_count == 0 {
        return Err(invalid("sample_count", "must be at least 1"));
    }
    let items = par::map_range(sample_count, |i| {
        let mut rng = rng::stream(seed, i as u64);
        let d = draw(spec, n, &mut rng);
        let ys: Vec<&[f64]> = d.ys.iter().map(|y| y.as_slice()).collect();
        let s = spec.eval(&d.x, &ys, d.t).expect("validated");
        let ratio = s.abs() * spec.size_denominator(&d.x, &ys, d.t);
        (
            ratio,
            Witness {
                x: d.x,
                perturbed: None,
                ys: d.ys,
                t: d.t,
            },
        )
    });
    let (max_ratio, witness) = fold_max(items);
    Ok(ConditionReport {
        max_ratio,
        witness,
        samples_used: sample_count,
        per_slot: Vec::new(),
    })
}

/// Sampled Hölder ratios. Each sample perturbs x and every slot separately,
/// with |δ| log-uniform in [t·2⁻²⁰, t/2).
pub fn check_holder(spec: &KernelSpec, n: usize, sample_count: usize, seed: u64) -> Result<ConditionReport> {
    spec.validate()?;
    if sample_count == 0 {
        return Err(invalid("sample_count", "must be at least 1"));
    }
    let k = spec.kappa;
    let items = par::map_range(sample_count, |i| {
        let mut rng = rng::stream(seed, i as u64);
        let d = draw(spec, n, &mut rng);
        let ys: Vec<&[f64]> = d.ys.iter().map(|y| y.as_slice()).collect();
        let base = spec.eval(&d.x, &ys, d.t).expect("validated");
        let denom = spec.size_denominator(&d.x, &ys, d.t) * d.t.powf(spec.alpha);
        let mut out = Vec::with_capacity(k + 1);
        // x-variant
        let h = log_uniform(&mut rng, d.t * 2f64.powi(-20), d.t / 2.0);
        let xp = at_distance(&mut rng, &d.x, h);
        let moved = spec.eval(&xp, &ys, d.t).expect("validated");
        let delta = distance(&d.x, &xp);
        out.push((
            (base - moved).abs() * denom / delta.powf(spec.alpha),
            Witness {
                x: d.x.clone(),
                perturbed: Some(xp),
                ys: d.ys.clone(),
                t: d.t,
            },
        ));
        for slot in 0..k {
            let h = log_uniform(&mut rng, d.t * 2f64.powi(-20), d.t / 2.0);
            let yp = at_distance(&mut rng, &d.ys[slot], h);
            let mut ys2 = ys.clone();
            ys2[slot] = &yp;
            let moved = spec.eval(&d.x, &ys2, d.t).expect("validated");
            let delta = distance(&d.ys[slot], &yp);
            out.push((
                (base - moved).abs() * denom / delta.powf(spec.alpha),
                Witness {
                    x: d.x.clone(),
                    perturbed: Some(yp.clone()),
                    ys: d.ys.clone(),
                    t: d.t,
                },
            ));
        }
        out
    });
    let mut per_slot = vec![0.0; k + 1];
    let mut all = Vec::with_capacity(sample_count * (k + 1));
    for sample in items {
        for (j, (r, w)) in sample.into_iter().enumerate() {
            per_slot[j] = f64::max(per_slot[j], r);
            all.push((r, w));
        }
    }
    let (max_ratio, witness) = fold_max(all);
    Ok(ConditionReport {
        max_ratio,
        witness,
        samples_used: sample_count,
        per_slot,
    })
}
