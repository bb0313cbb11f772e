use lps_core::decomp::{cz_decompose, verify_cz, whitney, CzParams, WhitneyParams};
use lps_core::dyadic::{
    all_differences, avg_e_level, bad_cube_probability, default_levels, is_good, occupied, realize_cube, reconstruct,
    DyadicCube, GoodnessParams, ShiftSequence,
};
use lps_core::rng::derive_seed;
use lps_core::verify::{
    adversarial_exceptional_set, big_piece, check_decay, check_good_lambda, check_lemma_t, check_lemma_u,
    check_pointwise_beta, check_testing_condition, default_xi_ladder, good_lambda_data, local_g_star_on_cube,
    BetaParams, CzPair, DecayParams, InequalityReport, SuiteParams,
};
use lps_core::{par, Cube, Evaluator, LambdaParams, Mode, SampledFunction};
use serde::Serialize;

use crate::config::{signed, Resolved};
use crate::output::{Cell, Csv, Outputs};
use crate::Failure;

pub struct Ctx<'a> {
    pub r: &'a Resolved,
    pub mode: Mode,
    pub seed: u64,
    pub lemma: Option<String>,
}

impl Ctx<'_> {
    fn lp(&self) -> Result<LambdaParams, Failure> {
        LambdaParams::new(self.r.config.lambda, &self.r.config.kernel).map_err(|e| Failure::Config(format!("lambda: {e}")))
    }

    fn refs(&self) -> Vec<&SampledFunction> {
        self.r.functions.iter().collect()
    }

    fn n(&self) -> usize {
        self.r.mu.dim()
    }

    fn points(&self) -> Vec<Vec<f64>> {
        match &self.r.config.points {
            Some(p) => p.clone(),
            None => self.r.mu.iter().map(|(p, _)| p.to_vec()).collect(),
        }
    }

    fn check_points(&self, pts: &[Vec<f64>]) -> Result<(), Failure> {
        match pts.iter().position(|p| p.len() != self.n()) {
            Some(i) => Err(Failure::Config(format!("points[{i}]: expected {} coordinates", self.n()))),
            None => Ok(()),
        }
    }

    fn shifts(&self) -> Result<ShiftSequence, Failure> {
        let (lo, hi) = default_levels(&self.r.mu);
        let g = &self.r.config.grid;
        Ok(ShiftSequence::sample(self.seed, g.j_min.unwrap_or(lo - 1), g.j_max.unwrap_or(hi + 1), self.n())?)
    }

    /// Configured cube, else the middle half of the hull of μ.
    fn local_cube(&self, given: &Option<Cube>) -> Result<Cube, Failure> {
        if let Some(q) = given {
            return Ok(q.clone());
        }
        let (lo, hi) = self
            .r
            .mu
            .bounding_box()
            .ok_or_else(|| Failure::Config("measure has no atoms".into()))?;
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let width = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        Ok(Cube::new(center, if width > 0.0 { width / 2.0 } else { 1.0 }))
    }
}

fn point_cells(p: &[f64]) -> Vec<Cell> {
    p.iter().map(|v| Cell::Num(*v)).collect()
}

fn header(parts: &[Vec<String>]) -> Vec<String> {
    parts.concat()
}

fn s(v: &str) -> Vec<String> {
    vec![v.to_string()]
}

pub fn eval(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let pts = ctx.points();
    ctx.check_points(&pts)?;
    let r = ctx.r;
    let ev = Evaluator::for_functions(
        &r.config.kernel,
        ctx.lp()?,
        &r.mu,
        &ctx.refs(),
        r.quad.nodes(),
        ctx.mode,
        r.quad.prune_tol,
    )?;
    let vals = ev.g_star_many(&pts)?;
    let mut csv = Csv::new(&header(&[Csv::coords("x", ctx.n()), s("g_star")]));
    for (p, v) in pts.iter().zip(&vals) {
        let mut row = point_cells(p);
        row.push(Cell::Num(*v));
        csv.row("g_star", row)?;
    }
    out.csv("eval.csv", csv);
    out.say(format!("evaluated g* at {} points", pts.len()));
    Ok(())
}

pub fn lusin(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let pts = ctx.points();
    ctx.check_points(&pts)?;
    let r = ctx.r;
    let ev = Evaluator::for_functions(
        &r.config.kernel,
        ctx.lp()?,
        &r.mu,
        &ctx.refs(),
        r.quad.nodes(),
        ctx.mode,
        r.quad.prune_tol,
    )?;
    let vals = par::map(&pts, |x| ev.lusin(x));
    let mut csv = Csv::new(&header(&[Csv::coords("x", ctx.n()), s("lusin")]));
    for (p, v) in pts.iter().zip(vals) {
        let mut row = point_cells(p);
        row.push(Cell::Num(v?));
        csv.row("lusin", row)?;
    }
    out.csv("lusin.csv", csv);
    out.say(format!("evaluated the Lusin area function at {} points", pts.len()));
    Ok(())
}

pub fn grid_sample(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let w = ctx.shifts()?;
    let n = ctx.n();
    let mut csv = Csv::new(&header(&[s("level"), Csv::coords("index", n), Csv::coords("lower", n), s("side"), s("atoms"), s("mass")]));
    for k in w.j_min..=w.j_max {
        for (c, atoms) in occupied(&ctx.r.mu, k, &w) {
            let q = realize_cube(&c, &w);
            let mut row = vec![Cell::from(k)];
            row.extend(c.index.iter().map(|i| Cell::Int(*i)));
            row.extend(point_cells(&q.lower()));
            row.push(q.side.into());
            row.push(atoms.len().into());
            row.push(atoms.iter().map(|a| ctx.r.mu.weight(*a)).sum::<f64>().into());
            csv.row("grid", row)?;
        }
    }
    out.json("shifts.json", &w);
    out.csv("grid.csv", csv);
    out.say(format!("sampled shifts on levels {}..={}", w.j_min, w.j_max));
    Ok(())
}

pub fn goodness(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let w = ctx.shifts()?;
    let gp = ctx.r.config.goodness;
    let level = ctx.r.config.grid.level.unwrap_or(w.j_min + 1);
    let search = ctx.r.config.grid.search_levels.unwrap_or(gp.r + 20);
    let cubes: Vec<DyadicCube> = occupied(&ctx.r.mu, level, &w).into_keys().collect();
    let reports = par::map(&cubes, |c| is_good(c, &w, &gp, search));
    let n = ctx.n();
    let mut csv = Csv::new(&header(&[Csv::coords("index", n), s("good"), s("witness_level"), s("distance"), s("threshold")]));
    let mut good = 0;
    for rep in reports {
        let rep = rep?;
        good += rep.good_in_window as usize;
        let mut row: Vec<Cell> = rep.cube.index.iter().map(|i| Cell::Int(*i)).collect();
        row.push(rep.good_in_window.into());
        row.push(rep.witness_level.into());
        row.push(rep.distance.into());
        row.push(rep.threshold.into());
        csv.row("goodness", row)?;
    }
    out.csv("goodness.csv", csv);
    out.json("shifts.json", &w);
    out.say(format!("level {level}: {good} of {} occupied cubes good (r = {}, gamma = {})", cubes.len(), gp.r, gp.gamma));
    Ok(())
}

pub fn bad_prob(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let o = &ctx.r.config.bad_prob;
    let index = if o.index.is_empty() { vec![0; ctx.n()] } else { o.index.clone() };
    let cube = DyadicCube::new(o.level, index);
    let mut csv = Csv::new(&["r", "estimate", "stderr", "trials", "bad"]);
    for &r in &o.r_values {
        let gp = GoodnessParams {
            r,
            gamma: ctx.r.config.goodness.gamma,
        };
        let p = bad_cube_probability(&cube, &gp, o.search_top, o.trials, ctx.seed, false)?;
        out.say(format!("r = {r}: P(bad) = {:.4} ± {:.4}", p.estimate, p.stderr));
        csv.row(
            "bad_cube_probability",
            vec![(r as i64).into(), p.estimate.into(), p.stderr.into(), p.trials.into(), p.bad.into()],
        )?;
    }
    out.csv("bad_prob.csv", csv);
    Ok(())
}

#[derive(Serialize)]
struct MartingaleSummary {
    top: i32,
    finest: i32,
    differences: usize,
    reconstruction_error: f64,
    pythagoras_error: f64,
}

pub fn martingale(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let mu = &ctx.r.mu;
    let (finest, top) = default_levels(mu);
    let w = ShiftSequence::sample(ctx.seed, finest - 1, top + 1, ctx.n())?;
    let f = &ctx.r.functions[0];
    let rec = reconstruct(f, top, finest, mu, &w)?;
    let avg = avg_e_level(f, top, mu, &w)?;
    let diffs = all_differences(f, top, finest, mu, &w)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(mu.weights()).map(|((x, y), w)| x * y * w).sum::<f64>();
    let norm2 = dot(f.values(), f.values());
    let pieces = dot(avg.values(), avg.values()) + diffs.iter().map(|(_, d)| dot(d.values(), d.values())).sum::<f64>();
    let err = rec.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let summary = MartingaleSummary {
        top,
        finest,
        differences: diffs.len(),
        reconstruction_error: err,
        pythagoras_error: if norm2 > 0.0 { (pieces - norm2).abs() / norm2 } else { pieces },
    };
    let mut csv = Csv::new(&header(&[s("atom"), Csv::coords("x", ctx.n()), s("f"), s("top_average"), s("reconstruction")]));
    for (a, (p, _)) in mu.iter().enumerate() {
        let mut row = vec![Cell::from(a)];
        row.extend(point_cells(p));
        row.push(f.values()[a].into());
        row.push(avg.values()[a].into());
        row.push(rec.values()[a].into());
        csv.row("martingale", row)?;
    }
    out.csv("martingale.csv", csv);
    out.json("martingale.json", &summary);
    out.say(format!(
        "{} martingale differences; reconstruction error {:.3e}, Pythagoras error {:.3e}",
        summary.differences, summary.reconstruction_error, summary.pythagoras_error
    ));
    let scale = f.sup_norm().max(1.0);
    if err > 1e-9 * scale || summary.pythagoras_error > 1e-9 {
        out.fail("martingale reconstruction");
    }
    Ok(())
}

pub fn whitney_cmd(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let o = ctx
        .r
        .config
        .whitney
        .as_ref()
        .ok_or_else(|| Failure::Config("whitney: section required".into()))?;
    let params = o.params.clone().unwrap_or_else(|| WhitneyParams::for_dim(ctx.n()));
    let res = whitney(&o.omega, &ctx.r.mu, &params)?;
    let n = ctx.n();
    let mut csv = Csv::new(&header(&[s("level"), Csv::coords("index", n), Csv::coords("center", n), s("side"), s("mass")]));
    for (c, q) in res.cubes.iter().zip(&res.realized) {
        let mut row = vec![Cell::from(c.level)];
        row.extend(c.index.iter().map(|i| Cell::Int(*i)));
        row.extend(point_cells(&q.center));
        row.push(q.side.into());
        row.push(ctx.r.mu.mass(q).into());
        csv.row("whitney", row)?;
    }
    out.csv("whitney.csv", csv);
    out.json("whitney.json", &res);
    out.say(format!(
        "{} Whitney cubes, rho0 = {}, subfamily of {} with mass {:.6e} of {:.6e}",
        res.cubes.len(),
        res.rho0,
        res.subfamily.len(),
        res.mass_subfamily,
        res.mass_omega
    ));
    for (name, ok) in [("(1)", res.prop1), ("(2)", res.prop2), ("atom cover", res.covers_atoms), ("(c)", res.prop_c)] {
        if !ok {
            out.fail(format!("whitney {name}"));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CzOutput<'a> {
    result: &'a lps_core::decomp::CzResult,
    verification: lps_core::decomp::CzVerification,
}

pub fn czdecomp(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let o = ctx.r.config.cz.as_ref().ok_or_else(|| Failure::Config("cz: section required".into()))?;
    let nu = signed(&o.nu, "cz.nu")?;
    let mu = &ctx.r.mu;
    let xi = o.xi.unwrap_or(o.xi_factor * nu.total_variation() / mu.total_mass());
    let params = o.params.clone().unwrap_or_else(|| CzParams::for_m(ctx.r.config.kernel.m));
    let res = cz_decompose(&nu, mu, xi, &params)?;
    let ver = verify_cz(&res, &nu, mu, &params);
    let n = ctx.n();
    let mut csv = Csv::new(&header(&[
        s("center_atom"),
        Csv::coords("center", n),
        s("side"),
        s("companion_side"),
        s("c"),
        s("nu_variation"),
    ]));
    for c in &res.cubes {
        let mut row = vec![Cell::from(c.center_atom)];
        row.extend(point_cells(&c.cube.center));
        row.push(c.cube.side.into());
        row.push(c.companion.side.into());
        row.push(c.c.into());
        row.push(c.nu_variation.into());
        csv.row("cz", row)?;
    }
    out.csv("cz.csv", csv);
    out.say(format!("xi = {xi:.6e}, {} cubes", res.cubes.len()));
    out.say(format!("realized C-Z-5 constant: {:.6e}", res.cz5_constant));
    out.say(format!("realized C-Z-6 constant: {:.6e}", res.cz6_constant));
    for (name, ok) in [
        ("C-Z-1", ver.cz1),
        ("C-Z-2", ver.cz2),
        ("C-Z-3", ver.cz3),
        ("doubling companions", ver.companions_doubling),
        ("mass identity", ver.mass_identity_error <= 1e-9),
        ("vanishing integrals", ver.vanishing_error <= 1e-9),
        ("C-Z-4", ver.cz4_error <= 1e-9),
    ] {
        if !ok {
            out.fail(name);
        }
    }
    out.json(
        "cz.json",
        &CzOutput {
            result: &res,
            verification: ver,
        },
    );
    Ok(())
}

pub const LEMMAS: [&str; 4] = ["U", "T", "decay", "beta"];

pub fn verify_lemma(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let chosen: Vec<&str> = match &ctx.lemma {
        Some(id) => match LEMMAS.iter().find(|l| l.eq_ignore_ascii_case(id)) {
            Some(l) => vec![*l],
            None => return Err(Failure::Config(format!("--lemma: unknown id `{id}` (expected one of {LEMMAS:?})"))),
        },
        None => {
            let mut all = vec!["U", "T", "decay"];
            if ctx.r.config.verify.beta.is_some() {
                all.push("beta");
            }
            all
        }
    };
    let r = ctx.r;
    let o = &r.config.verify;
    let spec = &r.config.kernel;
    let lp = ctx.lp()?;
    let suite = |salt: u64| SuiteParams {
        samples: o.samples,
        seed: derive_seed(ctx.seed, salt),
        functions: o.functions,
    };
    let mut reports: Vec<InequalityReport> = Vec::new();
    for id in chosen {
        match id {
            "U" => {
                let u = check_lemma_u(spec, lp, &r.mu, &r.quad, &suite(1), ctx.mode)?;
                reports.push(u.domination);
                reports.push(u.lipschitz);
            }
            "T" => {
                let q = ctx.local_cube(&o.cube)?;
                reports.extend(check_lemma_t(spec, lp, &r.mu, &q, o.c0, &r.quad, &suite(2), ctx.mode)?);
            }
            "decay" => {
                let params = o.decay.clone().unwrap_or(DecayParams {
                    seed: derive_seed(ctx.seed, 3),
                    ..DecayParams::default()
                });
                let t0 = o.t0.unwrap_or(r.quad.t_min);
                reports.push(check_decay(spec, lp, &r.mu, &ctx.refs(), t0, &r.quad, &params, ctx.mode)?);
            }
            _ => {
                let b = o
                    .beta
                    .as_ref()
                    .ok_or_else(|| Failure::Config("verify.beta: section required for --lemma beta".into()))?;
                let nu1 = signed(&b.nu1, "verify.beta.nu1")?;
                let nu2 = signed(&b.nu2, "verify.beta.nu2")?;
                let cp = CzParams::for_m(spec.m);
                let cz1 = cz_decompose(&nu1, &r.mu, b.xi_factor * nu1.total_variation() / r.mu.total_mass(), &cp)?;
                let cz2 = cz_decompose(&nu2, &r.mu, b.xi_factor * nu2.total_variation() / r.mu.total_mass(), &cp)?;
                let pair = CzPair {
                    mu: &r.mu,
                    nu1: &nu1,
                    nu2: &nu2,
                    cz1: &cz1,
                    cz2: &cz2,
                };
                let params = b.params.clone().unwrap_or(BetaParams {
                    seed: derive_seed(ctx.seed, 4),
                    samples: o.samples,
                    ..BetaParams::default()
                });
                reports.extend(check_pointwise_beta(spec, lp, &pair, &r.quad, &params, ctx.mode)?);
            }
        }
    }
    let mut csv = Csv::new(&["lemma", "pass", "C", "calibration_max", "test_max", "negative_control_fails"]);
    for rep in &reports {
        let nc = rep.negative_control.as_ref().map(|n| !n.pass);
        csv.row(
            &rep.lemma,
            vec![
                rep.lemma.as_str().into(),
                rep.pass.into(),
                rep.constant.into(),
                rep.calibration_max.into(),
                rep.test_max.into(),
                match nc {
                    Some(b) => b.into(),
                    None => "".into(),
                },
            ],
        )?;
        out.json(&format!("{}.json", file_stem(&rep.lemma)), rep);
        out.say(format!(
            "{}: test max {:.4e} vs C {:.4e} -> {}",
            rep.lemma,
            rep.test_max,
            rep.constant,
            if rep.pass { "pass" } else { "FAIL" }
        ));
        if !rep.pass {
            out.fail(format!("lemma {}", rep.lemma));
        }
    }
    out.csv("verify.csv", csv);
    Ok(())
}

fn file_stem(lemma: &str) -> String {
    lemma
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

struct Local {
    q: Cube,
    values: Vec<(usize, f64)>,
    h: Vec<usize>,
}

fn local_values(ctx: &Ctx) -> Result<Local, Failure> {
    let o = &ctx.r.config.local;
    let q = ctx.local_cube(&o.cube)?;
    let r = ctx.r;
    let values = local_g_star_on_cube(&r.config.kernel, ctx.lp()?, &r.mu, &q, &r.quad, ctx.mode)?;
    let h = match o.exceptional.as_str() {
        "adversarial" => adversarial_exceptional_set(&values, &r.mu, o.delta0),
        "empty" => Vec::new(),
        other => {
            return Err(Failure::Config(format!(
                "local.exceptional: `{other}` is neither \"adversarial\" nor \"empty\""
            )))
        }
    };
    Ok(Local { q, values, h })
}

fn local_csv(ctx: &Ctx, l: &Local) -> Result<Csv, Failure> {
    let mut csv = Csv::new(&header(&[s("atom"), Csv::coords("x", ctx.n()), s("local_g_star"), s("exceptional")]));
    for (a, v) in &l.values {
        let mut row = vec![Cell::from(*a)];
        row.extend(point_cells(ctx.r.mu.point(*a)));
        row.push((*v).into());
        row.push(l.h.contains(a).into());
        csv.row("local g*", row)?;
    }
    Ok(csv)
}

pub fn testing_condition(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let o = &ctx.r.config.local;
    let l = local_values(ctx)?;
    let rep = check_testing_condition(&ctx.r.mu, &l.values, &l.h, o.p0, o.delta0, o.grid_points)?;
    out.csv("local.csv", local_csv(ctx, &l)?);
    out.json("testing_condition.json", &rep);
    out.say(format!(
        "mu(Q) = {:.6e}, mu(H) = {:.6e}, realized C0 = {:.6e} (grid {:.6e})",
        rep.mass_q, rep.mass_h, rep.c0, rep.c0_grid
    ));
    if !rep.pass {
        out.fail("testing condition");
    }
    Ok(())
}

pub fn big_piece_cmd(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let o = &ctx.r.config.local;
    let l = local_values(ctx)?;
    let c0 = match o.c0 {
        Some(c) => c,
        None => check_testing_condition(&ctx.r.mu, &l.values, &l.h, o.p0, o.delta0, o.grid_points)?.c0,
    };
    let res = big_piece(&l.q, &ctx.r.mu, &l.values, &l.h, o.p0, o.delta0, c0)?;
    out.csv("local.csv", local_csv(ctx, &l)?);
    out.json("big_piece.json", &res);
    out.say(format!(
        "zeta0 = {:.6e}; mu(G) = {:.6e} against (1 - delta0)/2 mu(Q) = {:.6e}",
        res.zeta0, res.mass_g, res.bound
    ));
    if !res.holds {
        out.fail("big piece mass bound");
    }
    Ok(())
}

pub fn good_lambda(ctx: &Ctx, out: &mut Outputs) -> Result<(), Failure> {
    let o = &ctx.r.config.good_lambda;
    let r = ctx.r;
    let t0 = o.t0.unwrap_or(r.quad.t_min);
    let data = good_lambda_data(&r.config.kernel, ctx.lp()?, &r.mu, &ctx.refs(), t0, &r.quad, ctx.mode)?;
    let xis = default_xi_ladder(&data, o.xi_points);
    let rep = check_good_lambda(&data, o.epsilon, o.delta, &xis, o.theta, o.rho0)?;
    let mut csv = Csv::new(&["xi", "lhs", "rhs", "holds"]);
    for row in &rep.rows {
        csv.row("good lambda", vec![row.xi.into(), row.lhs.into(), row.rhs.into(), row.holds.into()])?;
    }
    out.csv("good_lambda.csv", csv);
    out.json("good_lambda.json", &rep);
    out.say(format!(
        "good-lambda inequality holds on {:.1}% of the ladder; largest admissible delta {:.4e}",
        100.0 * rep.fraction_holding,
        rep.delta_star
    ));
    Ok(())
}
