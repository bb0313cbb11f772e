use approx::assert_relative_eq;
use lps_core::decomp::{cz_decompose, whitney, BoxUnion, CzParams, WhitneyParams};
use lps_core::dyadic::{
    all_differences, avg_e, avg_e_level, bad_cube_probability, carleson_check, delta_coeff, locate, principal_cubes, reconstruct,
    DyadicCube, GoodnessParams, ShiftSequence,
};
use lps_core::measure::Region;
use lps_core::operator::{g_star, g_star_local, g_star_truncated, l_t, lusin_area, tail_t};
use lps_core::verify::{
    big_piece, check_decay, check_good_lambda, check_lemma_t, check_lemma_u, check_pointwise_beta, check_testing_condition,
    good_lambda_data, level_set_of, local_g_star_on_cube, zeta0, BetaParams, CzPair, DecayParams, FunctionSampler, SuiteParams,
};
use lps_core::{AtomicMeasure, Cube, KernelSpec, LambdaParams, Mode, QuadratureSpec, SampledFunction, SignedMeasure, Split};

fn poisson() -> (KernelSpec, LambdaParams) {
    let spec = KernelSpec::poisson(1.0, 1.0, 2);
    let lp = LambdaParams::new(6.0, &spec).unwrap();
    (spec, lp)
}

fn jittered(count: usize, seed: u64) -> AtomicMeasure {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    AtomicMeasure::new(
        1,
        (0..count).map(|i| {
            let x = (i as f64 + 0.5 + rng.random_range(-0.25..0.25)) / count as f64;
            (vec![x], rng.random_range(0.01..0.03))
        }),
    )
    .unwrap()
}

fn random_f(mu: &AtomicMeasure, seed: u64) -> SampledFunction {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    SampledFunction::new((0..mu.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn coarse(mu: &AtomicMeasure) -> QuadratureSpec {
    QuadratureSpec {
        nodes_per_decade: 16,
        ..QuadratureSpec::default_for(mu)
    }
}

// ----------------------------------------------------------------- operator

#[test]
fn l_t_examples() {
    let (spec, _) = poisson();
    let mu = AtomicMeasure::new(1, [(vec![0.3], 0.7)]).unwrap();
    assert_eq!(l_t(&spec, &mu, &SampledFunction::zeros(&mu), &[0.3], 0.5).unwrap(), 0.0);
    let f = SampledFunction::new(vec![-2.0]);
    for t in [0.01, 0.5, 4.0] {
        assert_relative_eq!(l_t(&spec, &mu, &f, &[0.3], t).unwrap(), 2.0 * 0.7 / t, max_relative = 1e-14);
    }
}

#[test]
fn truncation_edge_cases_and_refined_oracle() {
    let (spec, lp) = poisson();
    let mu = jittered(12, 3);
    let f = random_f(&mu, 4);
    let fs = [&f, &f];
    let q = coarse(&mu);
    let x = [0.41];
    let full = g_star(&spec, lp, &mu, &fs, &x, &q, Mode::Naive).unwrap();
    assert_eq!(g_star_truncated(&spec, lp, &mu, &fs, &x, q.t_min, &q, Mode::Naive).unwrap(), full);
    assert_eq!(g_star_truncated(&spec, lp, &mu, &fs, &x, q.t_max, &q, Mode::Naive).unwrap(), 0.0);

    let t0 = 0.05;
    let q = QuadratureSpec::default_for(&mu);
    let got = g_star_truncated(&spec, lp, &mu, &fs, &x, t0, &q, Mode::Naive).unwrap();
    let fine = q.refined();
    let want = g_star_truncated(&spec, lp, &mu, &fs, &x, t0, &fine, Mode::Naive).unwrap();
    assert_relative_eq!(got, want, max_relative = 1e-3);
}

#[test]
fn local_edge_cases_and_refined_oracle() {
    let (spec, lp) = poisson();
    let mu = jittered(12, 5);
    let f = random_f(&mu, 6);
    let fs = [&f, &f];
    let q = coarse(&mu);
    let x = [0.62];
    let full = g_star(&spec, lp, &mu, &fs, &x, &q, Mode::Naive).unwrap();
    let cube = |side: f64| Cube::new(x.to_vec(), side);
    assert_eq!(g_star_local(&spec, lp, &mu, &fs, &x, &cube(q.t_min), &q, Mode::Naive).unwrap(), 0.0);
    assert_eq!(g_star_local(&spec, lp, &mu, &fs, &x, &cube(2.0 * q.t_max), &q, Mode::Naive).unwrap(), full);

    let side = 0.3;
    let q = QuadratureSpec::default_for(&mu);
    let got = g_star_local(&spec, lp, &mu, &fs, &x, &cube(side), &q, Mode::Naive).unwrap();
    let want = g_star_local(&spec, lp, &mu, &fs, &x, &cube(side), &q.refined(), Mode::Naive).unwrap();
    assert_relative_eq!(got, want, max_relative = 1e-3);
}

#[test]
fn lusin_examples() {
    let (spec, _) = poisson();
    let mu = AtomicMeasure::new(1, [(vec![0.0], 0.5)]).unwrap();
    let q = QuadratureSpec::new(0.01, 10.0, 16).unwrap();
    let zero = SampledFunction::zeros(&mu);
    assert_eq!(lusin_area(&spec, &mu, &[&zero, &zero], &[0.0], &q, Mode::Naive).unwrap(), 0.0);

    let (a, b) = (1.5, -0.5);
    let (f, g) = (SampledFunction::new(vec![a]), SampledFunction::new(vec![b]));
    let mut sq = 0.0;
    for node in q.nodes() {
        let theta = spec.eval(&[0.0], &[&[0.0], &[0.0]], node.t).unwrap() * a * b * 0.25;
        sq += node.w * theta * theta * 0.5 / node.t;
    }
    let got = lusin_area(&spec, &mu, &[&f, &g], &[0.0], &q, Mode::Naive).unwrap();
    assert_relative_eq!(got, sq.sqrt(), max_relative = 1e-12);
}

#[test]
fn tail_examples() {
    let (spec, lp) = poisson();
    let mu = jittered(16, 7);
    let f = random_f(&mu, 8);
    let q = coarse(&mu);
    let cube = Cube::new(vec![0.5], 0.125);
    let far = [Split::Far, Split::Near];
    let t = |x: f64, xp: f64, fs: &[&SampledFunction], mode| tail_t(&spec, lp, &mu, fs, &far, &[x], &[xp], &cube, 1.0, &q, mode).unwrap();
    assert_eq!(t(0.48, 0.48, &[&f, &f], Mode::Fast), 0.0);
    let inside = f.masked(&mu, &cube.dilate(2.0), true);
    assert_eq!(t(0.45, 0.53, &[&inside, &f], Mode::Fast), 0.0);
    let naive = t(0.45, 0.53, &[&f, &f], Mode::Naive);
    assert!(naive > 0.0);
    assert_relative_eq!(t(0.45, 0.53, &[&f, &f], Mode::Fast), naive, max_relative = 1e-9);
}

// ------------------------------------------------------------------- dyadic

#[test]
fn shift_bits_are_fair_over_many_draws() {
    let mut ones = 0usize;
    let draws = 10_000;
    for s in 0..draws / 20 {
        let w = ShiftSequence::sample(s as u64, -10, 9, 1).unwrap();
        ones += w.bits.iter().map(|b| b[0] as usize).sum::<usize>();
    }
    let mean = ones as f64 / draws as f64;
    assert!((0.49..=0.51).contains(&mean), "{mean}");
}

#[test]
fn badness_shrinks_with_r_and_grows_as_gamma_vanishes() {
    let c = DyadicCube::new(0, vec![0]);
    let trials = 10_000;
    let est = |r: u32, gamma: f64| bad_cube_probability(&c, &GoodnessParams { r, gamma }, 24, trials, 11, false).unwrap();
    let lo = est(10, 0.25);
    let hi = est(12, 0.25);
    assert!(lo.estimate < 1.0);
    assert!(hi.estimate <= lo.estimate + 2.0 * lo.stderr, "{} vs {}", hi.estimate, lo.estimate);
    let flat = est(10, 0.0);
    assert!(flat.estimate > lo.estimate, "{} vs {}", flat.estimate, lo.estimate);
}

#[test]
fn averaging_examples() {
    let mu = jittered(20, 9);
    let w = ShiftSequence::sample(3, -12, 4, 1).unwrap();
    let c = locate(mu.point(7), -2, &w);
    let real = lps_core::dyadic::realize_cube(&c, &w);

    let e = avg_e(&SampledFunction::constant(&mu, 3.0), &c, &mu, &w).unwrap();
    for (a, v) in e.values().iter().enumerate() {
        assert_relative_eq!(*v, if real.contains(mu.point(a)) { 3.0 } else { 0.0 }, max_relative = 1e-15);
    }

    let f = random_f(&mu, 10);
    let e = avg_e(&f, &c, &mu, &w).unwrap();
    let lhs: f64 = e.values().iter().zip(mu.weights()).map(|(v, w)| v * w).sum();
    let rhs: f64 = mu.iter().zip(f.values()).filter(|((p, _), _)| real.contains(p)).map(|((_, w), v)| v * w).sum();
    assert_relative_eq!(lhs, rhs, max_relative = 1e-14);

    let sep = mu.min_separation().unwrap();
    let k = sep.log2().floor() as i32 - 1;
    let fine = avg_e_level(&f, k, &mu, &w).unwrap();
    for (a, b) in fine.values().iter().zip(f.values()) {
        assert_relative_eq!(*a, *b, max_relative = 1e-15);
    }
}

#[test]
fn reconstruction_on_64_atoms() {
    let mu = jittered(64, 12);
    let w = ShiftSequence::sample(5, -14, 3, 1).unwrap();
    let f = random_f(&mu, 13);
    let back = reconstruct(&f, 2, -10, &mu, &w).unwrap();
    let err = back.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-10, "{err}");

    let c = SampledFunction::constant(&mu, -1.25);
    for (_, d) in all_differences(&c, 2, -10, &mu, &w).unwrap() {
        assert!(d.values().iter().all(|v| v.abs() <= 1e-15));
    }
}

#[test]
fn delta_coeff_scaling_and_distance() {
    let q = Cube::new(vec![0.0, 0.0], 1.0);
    let r = Cube::new(vec![3.0, 1.0], 0.5);
    let (m, alpha) = (2.0, 0.5);
    let base = delta_coeff(&q, &r, m, alpha).unwrap();
    let c = 3.0;
    let scaled = delta_coeff(&Cube::new(vec![0.0, 0.0], c), &Cube::new(vec![3.0 * c, c], 0.5 * c), m, alpha).unwrap();
    assert_relative_eq!(scaled, c.powf(-m) * base, max_relative = 1e-13);
    let mut last = base;
    for d in [5.0, 10.0, 100.0, 1e4] {
        let v = delta_coeff(&q, &Cube::new(vec![d, 1.0], 0.5), m, alpha).unwrap();
        assert!(v < last);
        last = v;
    }
}

#[test]
fn constant_phi_stops_only_at_the_top() {
    let mu = jittered(30, 14);
    let w = ShiftSequence::sample(1, -12, 4, 1).unwrap();
    let fam = principal_cubes(&SampledFunction::constant(&mu, 2.0), &mu, &w, 1, -8).unwrap();
    assert_eq!(fam.generations().len(), 1);
    let report = carleson_check(&fam);
    assert!(report.worst_ratio <= 1.0);
    assert_eq!(report.min_free_fraction, 1.0);
}

// ------------------------------------------------------------------- decomp

#[test]
fn lone_atom_near_the_edge_gets_no_whitney_subcube() {
    // the atom sits within ℓ/8 of the boundary of Q, 1.05Q and 1.1Q alike
    let mu = AtomicMeasure::new(1, [(vec![0.0], 0.05), (vec![0.479], 0.05)]).unwrap();
    let omega = BoxUnion::new(1, vec![(vec![0.416], vec![0.483])]).unwrap();
    let res = whitney(&omega, &mu, &WhitneyParams::for_dim(1)).unwrap();
    assert!(res.prop1 && res.prop2 && res.covers_atoms);
    assert!(res.subfamily.is_empty());
    assert!(!res.prop_c);

    let wide = WhitneyParams {
        small_boundary_c: 64.0,
        ..WhitneyParams::for_dim(1)
    };
    assert!(whitney(&omega, &mu, &wide).unwrap().prop_c);
}

// ------------------------------------------------------------------- verify

#[test]
fn zero_functions_pass_lemma_u_vacuously() {
    let (spec, lp) = poisson();
    let mu = jittered(10, 15);
    let params = SuiteParams {
        samples: 20,
        seed: 1,
        functions: FunctionSampler::Zero,
    };
    let rep = check_lemma_u(&spec, lp, &mu, &coarse(&mu), &params, Mode::Fast).unwrap();
    for r in [&rep.domination, &rep.lipschitz] {
        assert!(r.pass);
        assert_eq!(r.skipped, 40);
        assert_eq!(r.test_max, 0.0);
    }
}

#[test]
fn far_slots_vanish_when_everything_sits_in_2q() {
    let (spec, lp) = poisson();
    let mu = jittered(10, 16);
    let q = Cube::new(vec![0.5], 0.6);
    assert_eq!(mu.indices_in(&q.dilate(2.0)).len(), mu.len());
    let params = SuiteParams {
        samples: 16,
        seed: 2,
        ..SuiteParams::default()
    };
    let reports = check_lemma_t(&spec, lp, &mu, &q, 1.0, &coarse(&mu), &params, Mode::Fast).unwrap();
    assert_eq!(reports.len(), 3);
    for r in reports {
        assert!(r.pass);
        assert_eq!(r.test_max, 0.0);
    }
}

#[test]
fn level_set_extremes() {
    let vals = [0.0, 0.5, 2.0, 0.0, 1e-9];
    assert!(level_set_of(&vals, 2.0).indices.is_empty());
    assert_eq!(level_set_of(&vals, f64::MIN_POSITIVE).indices, vec![1, 2, 4]);
}

#[test]
fn decay_along_a_far_field_ray() {
    let (spec, lp) = poisson();
    let mu = jittered(8, 17);
    let f = SampledFunction::constant(&mu, 1.0);
    let params = DecayParams {
        points_per_ray: 20,
        rays: 1,
        seed: 3,
        ..DecayParams::default()
    };
    let rep = check_decay(&spec, lp, &mu, &[&f, &f], 0.1, &coarse(&mu), &params, Mode::Fast).unwrap();
    assert_eq!(rep.test_samples, 20);
    assert!(rep.pass, "{rep:?}");
    assert!(rep.constant.is_finite());
}

#[test]
fn testing_condition_examples() {
    let (spec, lp) = poisson();
    let mu = AtomicMeasure::new(1, (0..16).map(|i| (vec![(i as f64 + 0.5) / 16.0], 1.0 / 16.0))).unwrap();
    let q = Cube::new(vec![0.5], 1.0);
    let quad = coarse(&mu);
    let vals = local_g_star_on_cube(&spec, lp, &mu, &q, &quad, Mode::Fast).unwrap();
    assert_eq!(vals.len(), 16);

    let all: Vec<usize> = (0..16).collect();
    let rep = check_testing_condition(&mu, &vals, &all, 2.0, 1.0, 16).unwrap();
    assert!(rep.pass);
    assert_eq!(rep.c0, 0.0);

    let rep = check_testing_condition(&mu, &vals, &[], 2.0, 0.5, 16).unwrap();
    assert!(rep.pass && rep.c0.is_finite() && rep.c0 > 0.0);

    // one atom: ζ^p μ({g > ζ})/μ(Q) peaks as ζ ↑ g
    let one = [(3usize, 0.8)];
    let rep = check_testing_condition(&mu, &one, &[], 3.0, 0.5, 8).unwrap();
    assert_relative_eq!(rep.c0, 0.8f64.powi(3), max_relative = 1e-15);
}

#[test]
fn big_piece_examples() {
    assert_relative_eq!(zeta0(1.0, 0.5, 2.0), 2.0, max_relative = 1e-15);
    let mu = jittered(10, 18);
    let q = Cube::new(vec![0.5], 1.0);
    let vals: Vec<(usize, f64)> = (0..10).map(|a| (a, 0.1)).collect();
    let bp = big_piece(&q, &mu, &vals, &[], 2.0, 0.5, 1.0).unwrap();
    assert!(bp.s.is_empty() && bp.h.is_empty());
    assert_eq!(bp.mass_g, bp.mass_q);
    assert!(bp.holds);
}

#[test]
fn good_lambda_above_the_maximum_is_trivial() {
    let (spec, lp) = poisson();
    let mu = jittered(12, 19);
    let f = random_f(&mu, 20);
    let data = good_lambda_data(&spec, lp, &mu, &[&f, &f], 0.1, &coarse(&mu), Mode::Fast).unwrap();
    let top = data.g.iter().copied().fold(0.0, f64::max);
    let rep = check_good_lambda(&data, 0.5, 1e-3, &[2.0 * top], 1.0, 1.0).unwrap();
    assert_eq!(rep.rows[0].lhs, 0.0);
    assert_eq!(rep.rows[0].rhs, 0.0);
    assert!(rep.rows[0].holds);
}

#[test]
fn beta_bounds_without_cubes_are_vacuous() {
    let (spec, lp) = poisson();
    let mu = jittered(10, 21);
    let nu = SignedMeasure::new(1, [(vec![mu.point(2)[0]], 0.01), (vec![mu.point(6)[0]], -0.01)]).unwrap();
    let params = CzParams::for_m(1.0);
    let xi = 64.0 * nu.total_variation() / mu.total_mass();
    let cz = cz_decompose(&nu, &mu, xi, &params).unwrap();
    assert!(cz.cubes.is_empty());
    let pair = CzPair {
        mu: &mu,
        nu1: &nu,
        nu2: &nu,
        cz1: &cz,
        cz2: &cz,
    };
    let bp = BetaParams {
        samples: 10,
        ..BetaParams::default()
    };
    for r in check_pointwise_beta(&spec, lp, &pair, &coarse(&mu), &bp, Mode::Fast).unwrap() {
        assert!(r.pass);
        assert_eq!(r.test_samples, 0);
    }
}
