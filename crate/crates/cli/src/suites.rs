//! `check`: invariant suites with deterministic, seed-driven inputs.

use crate::tol;
use quiver_wp::defcomplex::{Cochain, Cochain0, Cochain1, Cochain2, ComplexContext, Vector};
use quiver_wp::family::Family;
use quiver_wp::fiber::{crosscheck_gap, curvature_on_product};
use quiver_wp::forms::{kaehler_form, virtual_ch_checks};
use quiver_wp::grid::{ops, Spectral, TorusGeometry};
use quiver_wp::linalg::{c, eye, fnorm, random_hpd, random_matrix, scalar, Mat};
use quiver_wp::quiver::{Path, Quiver, Relation};
use quiver_wp::scenario::{presets, BackendSpec, Scenario, Target};
use quiver_wp::wpgeom::{ks_all, lemma_suite, LemmaReport};
use quiver_wp::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;

pub const SUITES: [&str; 6] = ["adjointness", "hodge", "harmonicity", "wepr", "boxr", "torus-crosscheck"];

/// Random trials per context in the adjointness and Hodge suites.
pub const TRIALS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub suite: String,
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub seed: u64,
    pub entries: Vec<CheckEntry>,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    /// One line per entry; identical for identical seeds.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let mark = if e.pass { "PASS" } else { "FAIL" };
            s.push_str(&format!("{mark} {:<17} {:<44} residual={:.3e} tol={:.0e}\n", e.suite, e.name, e.residual, e.tol));
        }
        let failed = self.entries.iter().filter(|e| !e.pass).count();
        s.push_str(&format!("seed={} checks={} failed={}\n", self.seed, self.entries.len(), failed));
        s
    }
}

/// Grid sizes used by the torus parts of the suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Modes for complex-level checks (adjointness, Hodge, harmonicity, lemmas).
    pub modes: usize,
    /// Modes for the fiber-integral cross-check.
    pub crosscheck_modes: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { modes: 4, crosscheck_modes: 16 }
    }
}

struct Out<'a> {
    suite: &'a str,
    entries: Vec<CheckEntry>,
}

impl Out<'_> {
    fn add(&mut self, name: impl Into<String>, residual: f64, tol: f64) {
        let pass = residual.is_finite() && residual <= tol;
        self.entries.push(CheckEntry { suite: self.suite.into(), name: name.into(), residual, tol, pass });
    }
}

fn s(x: f64) -> Mat {
    scalar(c(x, 0.0))
}

/// Named complexes: random metrics on point quivers and a smoothly twisted torus.
fn contexts(seed: u64, modes: usize) -> Result<Vec<(String, ComplexContext)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let kron = Quiver::new(&[("1", 1), ("2", 1)], &[("a", "1", "2"), ("b", "1", "2")])?;
    let h: Vec<Mat> = [1, 2].iter().map(|&d| random_hpd(&mut rng, d)).collect();
    let phi = [random_matrix(&mut rng, 2, 1), random_matrix(&mut rng, 2, 1)];
    out.push(("point/kronecker-1-2".into(), ComplexContext::point(&kron, &[], &[1, 2], &phi, &h)?));

    let tri = Quiver::new(&[("1", 2), ("2", 1), ("3", 3)], &[("a", "1", "2"), ("b", "2", "3"), ("c", "1", "3")])?;
    let dims = [2, 3, 1];
    let phi = [random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 1, 3), random_matrix(&mut rng, 1, 2)];
    let h: Vec<Mat> = dims.iter().map(|&d| random_hpd(&mut rng, d)).collect();
    out.push(("point/weighted-triangle".into(), ComplexContext::point(&tri, &[], &dims, &phi, &h)?));

    let sq = Quiver::new(&[("1", 1), ("2", 1), ("3", 1)], &[("a", "1", "2"), ("b", "2", "3"), ("c", "1", "3")])?;
    let rel = Relation::new(&sq, vec![(c(1.0, 0.0), Path::from_ids(&sq, &["b", "a"])?), (c(-1.0, 0.0), Path::from_ids(&sq, &["c"])?)])?;
    let h: Vec<Mat> = (0..3).map(|_| random_hpd(&mut rng, 1)).collect();
    let x = random_matrix(&mut rng, 1, 2);
    let phi = [s(1.0) * x[(0, 0)], s(1.0) * x[(0, 1)], s(1.0) * (x[(0, 0)] * x[(0, 1)])];
    out.push(("point/commuting-square".into(), ComplexContext::point(&sq, &[rel], &[1, 1, 1], &phi, &h)?));

    // A scalar Dolbeault twist shared by both vertices keeps constant φ holomorphic.
    let sp = Spectral::new(TorusGeometry::new(c(0.15, 1.2), 2.0, modes)?);
    let n = sp.npts();
    let a = sp.trig(&[(1, 0, s(0.4)), (0, -1, scalar(c(0.1, 0.2))), (1, 1, s(-0.2))]);
    let a2: Vec<Mat> = a.iter().map(|m| eye(2) * m[(0, 0)]).collect();
    let h1 = sp.sample(|u, v| s((0.3 * (2.0 * PI * u).cos() + 0.2 * (2.0 * PI * (u + v)).sin()).exp()));
    let h2 = sp.sample(|_, v| {
        let mut m = eye(2) * c(1.5 + 0.4 * (2.0 * PI * v).sin(), 0.0);
        m[(0, 1)] = c(0.2, 0.1);
        m[(1, 0)] = c(0.2, -0.1);
        m
    });
    let p1 = random_matrix(&mut rng, 2, 1);
    let p2 = random_matrix(&mut rng, 2, 1);
    let phi = vec![ops::constant(&p1, n), ops::constant(&p2, n)];
    out.push((format!("torus{modes}/kronecker-1-2"), ComplexContext::torus(&kron, &sp, &[1, 2], phi, vec![a, a2], vec![h1, h2])?));
    Ok(out)
}

fn random_cochain<T: Cochain>(ctx: &ComplexContext, rng: &mut ChaCha8Rng) -> T {
    let d = ctx.coord_dim(T::LEVEL);
    let v = random_matrix(rng, d, 1);
    ctx.from_coords(&Vector::from_iterator(d, v.iter().copied()))
}

/// Operator matrix in orthonormal coordinates, column by column.
fn matrix_of<A: Cochain, B: Cochain>(ctx: &ComplexContext, f: impl Fn(&A) -> B) -> Mat {
    let (m, n) = (ctx.coord_dim(B::LEVEL), ctx.coord_dim(A::LEVEL));
    let mut out = Mat::zeros(m, n);
    for j in 0..n {
        let mut e = Vector::zeros(n);
        e[j] = c(1.0, 0.0);
        out.set_column(j, &ctx.to_coords(&f(&ctx.from_coords(&e))));
    }
    out
}

fn adjointness(out: &mut Out, seed: u64, opts: &CheckOptions) -> Result<()> {
    for (name, ctx) in contexts(seed, opts.modes)? {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let (mut r0, mut r1, mut rl) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..TRIALS {
            let x: Cochain0 = random_cochain(&ctx, &mut rng);
            let y: Cochain1 = random_cochain(&ctx, &mut rng);
            let z: Cochain2 = random_cochain(&ctx, &mut rng);
            let dx = ctx.d0(&x);
            let l = ctx.inner(&dx, &y);
            let r = ctx.inner(&x, &ctx.d0_adj(&y));
            r0 = r0.max((l - r).norm() / (ctx.norm(&dx) * ctx.norm(&y)).max(1e-300));
            let dy = ctx.d1(&y);
            if ctx.coord_dim(2) > 0 {
                let l = ctx.inner(&dy, &z);
                let r = ctx.inner(&y, &ctx.d1_adj(&z));
                r1 = r1.max((l - r).norm() / (ctx.norm(&dy) * ctx.norm(&z)).max(1e-300));
            }
            let a = ctx.laplacian0(&x);
            rl = rl.max(ctx.norm(&ctx.sub(&a, &ctx.laplacian0_closed(&x))) / ctx.norm(&a).max(1e-300));
        }
        out.add(format!("{name} d0 pairing"), r0, tol::ADJOINT);
        out.add(format!("{name} d1 pairing"), r1, tol::ADJOINT);
        out.add(format!("{name} laplacian closed form"), rl, tol::EXACT);
        if ctx.backend.is_point() {
            let a = matrix_of(&ctx, |x: &Cochain0| ctx.d0(x));
            let b = matrix_of(&ctx, |y: &Cochain1| ctx.d0_adj(y));
            out.add(format!("{name} d0* matrix"), fnorm(&(&b - a.adjoint())) / fnorm(&a).max(1e-300), tol::ADJOINT);
        }
    }
    Ok(())
}

fn hodge(out: &mut Out, seed: u64, opts: &CheckOptions) -> Result<()> {
    for (name, ctx) in contexts(seed, opts.modes)? {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x40d6e);
        let (mut dec, mut harm, mut dd) = (0.0f64, 0.0f64, 0.0f64);
        fn split<T: Cochain>(ctx: &ComplexContext, x: &T) -> Result<(f64, f64)> {
            let h = ctx.harmonic(x)?;
            let rebuilt = ctx.add(&h, &ctx.laplacian(&ctx.greens(x)?));
            let n = ctx.norm(x).max(1e-300);
            Ok((ctx.norm(&ctx.sub(&rebuilt, x)) / n, ctx.norm(&ctx.laplacian(&h)) / n))
        }
        for _ in 0..TRIALS.min(5) {
            let x: Cochain0 = random_cochain(&ctx, &mut rng);
            // With relations the complex lives on A¹ ⊂ B¹.
            let y: Cochain1 = ctx.project_a1(&random_cochain(&ctx, &mut rng));
            for (a, b) in [split(&ctx, &x)?, split(&ctx, &y)?] {
                dec = dec.max(a);
                harm = harm.max(b);
            }
            if ctx.coord_dim(2) > 0 {
                let z: Cochain2 = random_cochain(&ctx, &mut rng);
                let (a, b) = split(&ctx, &z)?;
                dec = dec.max(a);
                harm = harm.max(b);
            }
            dd = dd.max(ctx.norm(&ctx.d1(&ctx.d0(&x))) / ctx.norm(&x));
        }
        out.add(format!("{name} x = Hx + lap G x"), dec, tol::HODGE);
        out.add(format!("{name} lap H x = 0"), harm, tol::HODGE);
        out.add(format!("{name} d1 d0 = 0"), dd, tol::EXACT);
    }
    // Hypercohomology of small examples with known answers.
    let a2 = Quiver::new(&[("1", 1), ("2", 1)], &[("a", "1", "2")])?;
    let kron = Quiver::new(&[("1", 1), ("2", 1)], &[("a", "1", "2"), ("b", "1", "2")])?;
    let lone = Quiver::new(&[("v", 1)], &[] as &[(&str, &str, &str)])?;
    let cases: [(&str, ComplexContext, (usize, usize, usize)); 3] = [
        ("A2 dims (1,1)", ComplexContext::point(&a2, &[], &[1, 1], &[s(1.0)], &[s(1.0), s(2.0)])?, (1, 0, 0)),
        ("Kronecker dims (1,1)", ComplexContext::point(&kron, &[], &[1, 1], &[s(1.0), s(0.3)], &[s(1.0), s(2.0)])?, (1, 1, 0)),
        ("single vertex dim 3", ComplexContext::point(&lone, &[], &[3], &[], &[eye(3)])?, (9, 0, 0)),
    ];
    for (name, ctx, want) in cases {
        let h = ctx.hyperdims()?;
        let miss = ((h.h0, h.h1, h.h2) != want || !h.euler_ok) as u8 as f64;
        out.add(format!("hyperdims {name}"), miss, 0.0);
    }
    Ok(())
}

/// Shipped family scenarios, with torus grids set to `modes`.
fn families(modes: usize) -> Result<Vec<(String, Family)>> {
    let mut out = Vec::new();
    for (file, scn) in presets::shipped() {
        let scn: Scenario = match scn.backend {
            BackendSpec::Torus { modulus, area, .. } => scn.with_backend(BackendSpec::Torus { modes, modulus, area })?,
            BackendSpec::Point => scn,
        };
        if let Ok(b) = scn.build() {
            if let Target::Family(f) = b.target {
                out.push((file.trim_end_matches(".scn").to_string(), *f));
            }
        }
    }
    Ok(out)
}

fn harmonicity(out: &mut Out, opts: &CheckOptions) -> Result<()> {
    for (name, fam) in families(opts.modes)? {
        let s0 = fam.s0.clone();
        let ctx = fam.context(&s0)?;
        let mus = ks_all(&fam, &s0)?;
        // The raw derivative sets the scale; μ itself vanishes on gauge-trivial families.
        let scale = (0..fam.k()).map(|i| ctx.norm(&fam.naive_ks(&s0, i))).fold(0.0, f64::max).max(1e-300);
        let d0 = mus.iter().map(|m| ctx.norm(&ctx.d0_adj(m))).fold(0.0, f64::max) / scale;
        let d1 = mus.iter().map(|m| ctx.norm(&ctx.d1(m))).fold(0.0, f64::max) / scale;
        out.add(format!("{name} d0* mu"), d0, tol::HARMONIC);
        out.add(format!("{name} d1 mu"), d1, tol::HARMONIC);
    }
    Ok(())
}

fn lemma_families(opts: &CheckOptions) -> Result<Vec<(String, Family)>> {
    let mut out = Vec::new();
    for scn in [presets::three_arrow_point(), presets::torus_kronecker_twisted(opts.modes)] {
        let b = scn.build()?;
        let Target::Family(f) = b.target else { return Err(Error::Invalid("lemma preset is not a family".into())) };
        out.push((scn.name.clone(), *f));
    }
    Ok(out)
}

fn lemmas(out: &mut Out, seed: u64, opts: &CheckOptions, pick: fn(&LemmaReport) -> Vec<(&'static str, f64)>) -> Result<()> {
    for (name, fam) in lemma_families(opts)? {
        let r = lemma_suite(&fam, seed)?;
        let scale = r.scale.max(1e-300);
        for (what, v) in pick(&r) {
            out.add(format!("{name} {what}"), v / scale, tol::LEMMA_STENCIL);
        }
    }
    Ok(())
}

fn wepr_fields(r: &LemmaReport) -> Vec<(&'static str, f64)> {
    vec![("ks routes", r.ks_routes), ("mu_(i;k) symmetric", r.mu_symmetry), ("d0* mu_(i;k)", r.d0_adj_mu_cov), ("d1 mu_(i;k) + [mu_i ^ mu_k]", r.wedge)]
}

fn boxr_fields(r: &LemmaReport) -> Vec<(&'static str, f64)> {
    vec![("mu_(i;jbar) = d0 R", r.mu_dbar), ("lap R = mu_i v mu_j", r.box_r), ("laplacian closed form", r.laplacian_closed_form * r.scale)]
}

fn torus_crosscheck(out: &mut Out, opts: &CheckOptions) -> Result<()> {
    let n = opts.crosscheck_modes;
    for scn in [presets::torus_kronecker(n), presets::torus_rank_two(n)] {
        let b = scn.build()?;
        let Target::Family(fam) = b.target else { return Err(Error::Invalid("crosscheck preset is not a family".into())) };
        let (gap, fw, _) = crosscheck_gap(&fam)?;
        out.add(format!("{} N={n} fiber integral vs L2", scn.name), gap, tol::FIBER);
        out.add(format!("{} N={n} Chern character route", scn.name), fw.chern_character_gap, tol::CHERN_CHARACTER);
        out.add(format!("{} N={n} potential identity", scn.name), fw.potential_gap, tol::POTENTIAL);
        if let quiver_wp::defcomplex::Backend::Torus(sp) = &fam.backend {
            let wx = kaehler_form(sp, fam.k());
            let mut worst = 0.0f64;
            for om in curvature_on_product(&fam, &fam.s0)?.iter().filter(|o| o.rows > 0) {
                worst = worst.max(virtual_ch_checks(om, &wx, &[0, sp.npts() / 2])?.max());
            }
            out.add(format!("{} N={n} virtual bundle identities", scn.name), worst, tol::VIRTUAL_CH);
        }
    }
    Ok(())
}

/// Runs one suite (or `all`). Unknown names are input errors.
pub fn run_check(suite: &str, seed: u64, opts: &CheckOptions) -> Result<CheckSummary> {
    let names: Vec<&str> = match suite {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        s => return Err(Error::Invalid(format!("unknown suite `{s}`; expected one of {} or all", SUITES.join(", ")))),
    };
    let mut entries = Vec::new();
    for name in names {
        let mut out = Out { suite: name, entries: vec![] };
        match name {
            "adjointness" => adjointness(&mut out, seed, opts)?,
            "hodge" => hodge(&mut out, seed, opts)?,
            "harmonicity" => harmonicity(&mut out, opts)?,
            "wepr" => lemmas(&mut out, seed, opts, wepr_fields)?,
            "boxr" => lemmas(&mut out, seed, opts, boxr_fields)?,
            "torus-crosscheck" => torus_crosscheck(&mut out, opts)?,
            _ => unreachable!(),
        }
        entries.extend(out.entries);
    }
    Ok(CheckSummary { seed, entries })
}
