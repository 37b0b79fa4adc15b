//! Acceptance run: one PASS/FAIL line per criterion, with sub-check detail.
//!
//! Runs without the libtest harness so the table is always printed. The
//! process fails unless the set of failing sub-checks equals `KNOWN_UNATTAINABLE`.

use quiver_wp::defcomplex::{Backend, ComplexContext};
use quiver_wp::family::Family;
use quiver_wp::fiber::{crosscheck_gap, curvature_on_product, from_rows};
use quiver_wp::forms::{kaehler_form, virtual_ch_checks};
use quiver_wp::linalg::{c, eye, fnorm, scalar, Mat};
use quiver_wp::quiver::{Quiver, Representation, StabilityParameters};
use quiver_wp::scenario::{parse_backend_override, presets, BackendSpec, Scenario, Target};
use quiver_wp::vortex::{flow_to_vortex, stability_probe, FlowOptions, MetricAssignment, StabilityVerdict, Verdict};
use quiver_wp::wpgeom::{
    curvature_fd, curvature_tf, harmonic_part_of_mu_cov, kahler_check, kahler_symmetry_residual, ks_all, lemma_suite, normal_coordinates, rel_gap,
    wp_derivative,
};
use quiver_wp_cli::suites::{run_check, CheckOptions};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::process::Command;
use std::time::Instant;

/// Sub-checks that fail by construction; see the project notes on the `A₂`
/// example with dimension vector (1,2).
const KNOWN_UNATTAINABLE: &[&str] = &["1: A2 (1,2) generic converges"];

struct Sub {
    id: String,
    residual: f64,
    tol: f64,
    pass: bool,
}

struct Criterion {
    n: u8,
    title: &'static str,
    subs: Vec<Sub>,
}

impl Criterion {
    fn new(n: u8, title: &'static str) -> Self {
        Self { n, title, subs: vec![] }
    }

    fn le(&mut self, what: &str, residual: f64, tol: f64) {
        let pass = residual.is_finite() && residual <= tol;
        self.subs.push(Sub { id: format!("{}: {what}", self.n), residual, tol, pass });
    }

    fn truth(&mut self, what: &str, ok: bool) {
        self.subs.push(Sub { id: format!("{}: {what}", self.n), residual: if ok { 0.0 } else { 1.0 }, tol: 0.0, pass: ok });
    }

    fn fail(&mut self, what: &str, err: impl std::fmt::Display) {
        eprintln!("    error in {what}: {err}");
        self.truth(what, false);
    }
}

fn m(x: f64) -> Mat {
    scalar(c(x, 0.0))
}

fn family(scn: &Scenario) -> Family {
    match scn.build().expect("preset builds").target {
        Target::Family(f) => *f,
        Target::Representation(_) => panic!("{} is not a family", scn.name),
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn criterion1() -> Criterion {
    let mut cr = Criterion::new(1, "vortex solvability on shipped stable examples");
    let opts = FlowOptions::default();
    cr.le("solver tolerance is 1e-9", opts.tol, 1e-9);

    // Kronecker (1,1), φ = (a, b): the vertex-2 equation gives h₂/h₁ = 1/(|a|²+|b|²).
    let q = Quiver::new(&[("1", 1), ("2", 1)], &[("a", "1", "2"), ("b", "1", "2")]).unwrap();
    let (a, b) = (c(1.0, 0.0), c(1.0, 0.0));
    let rep = Representation::new(&q, vec![1, 1], vec![scalar(a), scalar(b)]).unwrap();
    let params = StabilityParameters::new(vec![-1.0, 1.0]);
    let t = Instant::now();
    let (h, rpt) = flow_to_vortex(&q, &rep, &[], &params, &opts, &MetricAssignment::identity(&rep)).unwrap();
    let el = secs(t);
    cr.truth("Kronecker (1,1) converges", rpt.verdict == Verdict::Converged);
    cr.le("Kronecker (1,1) residual", rpt.residual, 1e-9);
    cr.le("Kronecker (1,1) seconds", el, 60.0);
    let ratio = h.metrics[1][(0, 0)].re / h.metrics[0][(0, 0)].re;
    let expected = 1.0 / (a.norm_sqr() + b.norm_sqr());
    cr.le("Kronecker h2/h1 = 1/2", (ratio - expected).abs(), 1e-8);
    cr.le("closed form is 1/2", (expected - 0.5).abs(), 0.0);

    for (label, scn) in [("A2 (1,2) generic", presets::a2_generic_12()), ("commuting square", presets::commuting_square())] {
        let built = scn.build().unwrap();
        let Target::Representation(rep) = &built.target else { panic!("{label} is a representation") };
        let t = Instant::now();
        let (_, rpt) = flow_to_vortex(&built.quiver, rep, &built.relations, &built.params, &opts, &MetricAssignment::identity(rep)).unwrap();
        let el = secs(t);
        cr.truth(&format!("{label} converges"), rpt.verdict == Verdict::Converged);
        if rpt.verdict == Verdict::Converged {
            cr.le(&format!("{label} residual"), rpt.residual, 1e-9);
        } else {
            eprintln!("    {label}: verdict {:?}, residual {:.3e} after {} iterations", rpt.verdict, rpt.residual, rpt.iterations);
        }
        cr.le(&format!("{label} seconds"), el, 60.0);
    }
    cr
}

fn criterion2() -> Criterion {
    let mut cr = Criterion::new(2, "adjoint identities");
    let sum = run_check("adjointness", 7, &CheckOptions::default()).unwrap();
    let mut trials = std::collections::BTreeMap::<&str, usize>::new();
    for e in &sum.entries {
        // Pairings and brute-force matrices at 1e-12; the closed-form Laplacian rides along at its own tolerance.
        let t = if e.name.ends_with("closed form") { e.tol } else { 1e-12 };
        cr.le(&e.name, e.residual, t);
        let backend = if e.name.starts_with("point") { "point" } else { "torus" };
        if e.name.ends_with("d0 pairing") {
            *trials.entry(backend).or_default() += quiver_wp_cli::suites::TRIALS;
        }
    }
    for backend in ["point", "torus"] {
        let n = trials.get(backend).copied().unwrap_or(0);
        cr.truth(&format!("{backend}: at least 100 random inputs ({n})"), n >= 100);
    }
    cr
}

fn criterion3() -> Criterion {
    let mut cr = Criterion::new(3, "hypercohomology dimensions");
    let a2 = Quiver::new(&[("1", 1), ("2", 1)], &[("a", "1", "2")]).unwrap();
    let kron = Quiver::new(&[("1", 1), ("2", 1)], &[("a", "1", "2"), ("b", "1", "2")]).unwrap();
    let h = ComplexContext::point(&a2, &[], &[1, 1], &[m(1.0)], &[m(1.0), m(2.0)]).unwrap().hyperdims().unwrap();
    cr.truth("A2 (1,1) = (1,0,0)", (h.h0, h.h1, h.h2) == (1, 0, 0) && h.euler_ok);
    let h = ComplexContext::point(&kron, &[], &[1, 1], &[m(1.0), m(1.0)], &[m(1.0), m(0.5)]).unwrap().hyperdims().unwrap();
    cr.truth("Kronecker (1,1) = (1,1,0)", (h.h0, h.h1, h.h2) == (1, 1, 0) && h.euler_ok);
    let lone = Quiver::new(&[("v", 1)], &[] as &[(&str, &str, &str)]).unwrap();
    for n in 1..=4 {
        let h = ComplexContext::point(&lone, &[], &[n], &[], &[eye(n)]).unwrap().hyperdims().unwrap();
        cr.truth(&format!("lone vertex n={n} = (n^2,0,0)"), (h.h0, h.h1, h.h2) == (n * n, 0, 0) && h.euler_ok);
    }

    // Simplicity on examples where the flow gives polystable evidence.
    let params = StabilityParameters::new(vec![-1.0, 1.0]);
    for (label, phi) in [("Kronecker (1,1)", [c(1.0, 0.0), c(1.0, 0.0)]), ("Kronecker (1,0.3i)", [c(1.0, 0.0), c(0.0, 0.3)])] {
        let rep = Representation::new(&kron, vec![1, 1], phi.iter().map(|z| scalar(*z)).collect()).unwrap();
        let probe = stability_probe(&kron, &rep, &params, 50, 7).unwrap();
        let (h, _) = flow_to_vortex(&kron, &rep, &[], &params, &FlowOptions::default(), &MetricAssignment::identity(&rep)).unwrap();
        let hd = ComplexContext::point(&kron, &[], &[1, 1], &rep.maps, &h.metrics).unwrap().hyperdims().unwrap();
        cr.truth(&format!("{label} polystable evidence and h0 = 1"), probe.verdict == StabilityVerdict::PolystableEvidence && hd.h0 == 1);
    }
    let sq = presets::commuting_square().build().unwrap();
    let Target::Representation(rep) = &sq.target else { unreachable!() };
    let (h, rpt) = flow_to_vortex(&sq.quiver, rep, &sq.relations, &sq.params, &FlowOptions::default(), &MetricAssignment::identity(rep)).unwrap();
    let hd = ComplexContext::point(&sq.quiver, &sq.relations, &sq.dims, &rep.maps, &h.metrics).unwrap().hyperdims().unwrap();
    cr.truth("commuting square converged and h0 = 1", rpt.verdict == Verdict::Converged && hd.h0 == 1 && hd.euler_ok);
    for scn in [presets::kronecker_point(), presets::three_arrow_point(), presets::torus_kronecker(4), presets::torus_kronecker_twisted(4)] {
        let fam = family(&scn);
        match fam.context(&fam.s0.clone()).and_then(|ctx| ctx.hyperdims()) {
            Ok(hd) => cr.truth(&format!("{} h0 = 1, Euler identity", scn.name), hd.h0 == 1 && hd.euler_ok),
            Err(e) => cr.fail(&scn.name, e),
        }
    }
    cr
}

fn with_tol(mut fam: Family, tol: f64) -> Family {
    fam.point_flow.tol = tol;
    fam.torus_flow.tol = tol;
    fam
}

fn criterion4() -> Criterion {
    let mut cr = Criterion::new(4, "harmonicity of Kodaira-Spencer representatives");
    let mut scenarios: Vec<Scenario> = Vec::new();
    for (_, scn) in presets::shipped() {
        let Ok(b) = scn.build() else { continue };
        if !matches!(b.target, Target::Family(_)) {
            continue;
        }
        match scn.backend {
            BackendSpec::Point => {
                // The same family on the torus, as constant sections.
                let torus = parse_backend_override("torus:4:2", &scn.backend).and_then(|bk| scn.with_backend(bk)).unwrap();
                scenarios.push(scn);
                scenarios.push(Scenario { name: format!("{} on torus", torus.name), ..torus });
            }
            BackendSpec::Torus { modulus, area, .. } => {
                scenarios.push(scn.with_backend(BackendSpec::Torus { modes: 8, modulus, area }).unwrap());
            }
        }
    }
    for scn in scenarios {
        let fam = with_tol(family(&scn), 1e-9);
        let s0 = fam.s0.clone();
        let r = fam.context(&s0).and_then(|ctx| Ok((ks_all(&fam, &s0)?, ctx)));
        match r {
            Ok((mus, ctx)) => {
                let d0 = mus.iter().map(|x| ctx.norm(&ctx.d0_adj(x))).fold(0.0, f64::max);
                let d1 = mus.iter().map(|x| ctx.norm(&ctx.d1(x))).fold(0.0, f64::max);
                cr.le(&format!("{} |d0* mu|", scn.name), d0, 1e-6);
                cr.le(&format!("{} |d1 mu|", scn.name), d1, 1e-6);
            }
            Err(e) => cr.fail(&scn.name, e),
        }
    }
    cr
}

fn criterion5() -> Criterion {
    let mut cr = Criterion::new(5, "first derivative of the metric");
    for scn in [presets::kronecker_point(), presets::three_arrow_point(), presets::torus_kronecker(8), presets::torus_kronecker_twisted(8)] {
        let fam = family(&scn);
        let d = wp_derivative(&fam, &fam.s0.clone()).unwrap();
        cr.le(&format!("{} formula vs FD", scn.name), d.rel_gap, 1e-4);
    }
    for scn in [presets::kronecker_point(), presets::three_arrow_point(), presets::torus_kronecker_twisted(8)] {
        let fam = family(&scn);
        let (nf, _) = normal_coordinates(&fam).unwrap();
        let d = wp_derivative(&nf, &nf.s0.clone()).unwrap();
        let sup = d.fd.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        cr.le(&format!("{} normal center |dG|", scn.name), sup, 1e-6);
        cr.le(&format!("{} normal center |H(mu_ik)|", scn.name), harmonic_part_of_mu_cov(&nf).unwrap(), 1e-5);
    }
    cr
}

fn criterion6() -> Criterion {
    let mut cr = Criterion::new(6, "curvature: closed formula vs finite differences");
    for scn in [presets::kronecker_point(), presets::three_arrow_point()] {
        let t = Instant::now();
        let fam = family(&scn);
        let (nf, _) = normal_coordinates(&fam).unwrap();
        let tf = curvature_tf(&nf).unwrap();
        let fd = curvature_fd(&nf).unwrap();
        let gap = tf.total.sub(&fd.total).norm() / (fd.total.norm() + 1e-12);
        cr.le(&format!("{} relative gap", scn.name), gap, 1e-3);
        cr.le(&format!("{} gap helper agrees", scn.name), (gap - rel_gap(&tf.total, &fd.total)).abs(), 1e-12);
        cr.le(&format!("{} Kahler symmetries", scn.name), kahler_symmetry_residual(&tf.total), 1e-3);
        cr.le(&format!("{} seconds", scn.name), secs(t), 300.0);
    }
    cr
}

fn criterion7() -> Criterion {
    let mut cr = Criterion::new(7, "lemma suite");
    let fam = family(&presets::torus_kronecker_twisted(16));
    let r = lemma_suite(&fam, 7).unwrap();
    let sc = r.scale;
    for (what, v) in [
        ("mu_(i;jbar) = d0 R", r.mu_dbar),
        ("mu_(i;k) symmetric", r.mu_symmetry),
        ("d0* mu_(i;k)", r.d0_adj_mu_cov),
        ("d1 mu_(i;k) + [mu_i ^ mu_k]", r.wedge),
        ("lap R = mu_i v mu_j", r.box_r),
    ] {
        cr.le(&format!("torus N=16 {what}"), v / sc, 1e-5);
    }
    cr.le("torus N=16 laplacian closed form", r.laplacian_closed_form, 1e-5);

    // On the point backend the closed-form and wedge identities are exact;
    // the others compare finite differences of solved families.
    let fam = family(&presets::three_arrow_point());
    let r = lemma_suite(&fam, 7).unwrap();
    let sc = r.scale;
    cr.le("point laplacian closed form (exact)", r.laplacian_closed_form, 1e-10);
    cr.le("point d1 mu_(i;k) + [mu_i ^ mu_k] (exact)", r.wedge / sc, 1e-10);
    cr.le("point |d0* mu| (exact)", r.harmonic_d0 / sc, 1e-10);
    for (what, v) in [("mu_(i;jbar) = d0 R", r.mu_dbar), ("mu_(i;k) symmetric", r.mu_symmetry), ("d0* mu_(i;k)", r.d0_adj_mu_cov), ("lap R = mu_i v mu_j", r.box_r)] {
        cr.le(&format!("point {what} (stencil)"), v / sc, 1e-5);
    }
    cr
}

fn criterion8() -> Criterion {
    let mut cr = Criterion::new(8, "fiber-integral cross-check, three ways");
    for scn in [presets::torus_kronecker(16), presets::torus_rank_two(16)] {
        let t = Instant::now();
        let fam = family(&scn);
        let (_, fw, g) = crosscheck_gap(&fam).unwrap();
        let fb1 = fw.total_matrix();
        let fb2 = from_rows(&fw.chern_character) * c(4.0 * PI * PI, 0.0);
        let rel = |a: &Mat, b: &Mat| fnorm(&(a - b)) / fnorm(b).max(1e-12);
        cr.le(&format!("{} L2 vs fiber integral", scn.name), rel(&fb1, &g), 1e-4);
        cr.le(&format!("{} L2 vs Chern character", scn.name), rel(&fb2, &g), 1e-4);
        cr.le(&format!("{} fiber integral vs Chern character", scn.name), rel(&fb2, &fb1), 1e-4);
        cr.le(&format!("{} seconds", scn.name), secs(t), 600.0);
    }
    cr
}

fn criterion9() -> Criterion {
    let mut cr = Criterion::new(9, "Kahler property and potential reconstruction");
    let fam = family(&presets::three_arrow_point());
    cr.le("three_arrow_point d omega symmetry", kahler_check(&fam).unwrap().relative, 1e-4);
    for scn in [presets::torus_kronecker(16), presets::torus_kronecker_twisted(16)] {
        let fam = family(&scn);
        let (_, fw, _) = crosscheck_gap(&fam).unwrap();
        cr.le(&format!("{} potential identity", scn.name), fw.potential_gap, 1e-6);
    }
    cr
}

fn criterion10() -> Criterion {
    let mut cr = Criterion::new(10, "Chern-form identities on stencil curvature");
    for scn in [presets::torus_rank_two(16), presets::torus_kronecker_twisted(8)] {
        let fam = family(&scn);
        let Backend::Torus(sp) = &fam.backend else { unreachable!() };
        let wx = kaehler_form(sp, fam.k());
        for (v, om) in curvature_on_product(&fam, &fam.s0.clone()).unwrap().iter().enumerate() {
            if om.rows == 0 {
                continue;
            }
            let r = virtual_ch_checks(om, &wx, &[0, sp.npts() / 3, sp.npts() / 2]).unwrap();
            cr.le(&format!("{} vertex {v} rank {}", scn.name, om.rows), r.max(), 1e-10);
        }
    }
    cr
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quiver-wp"))
}

fn criterion11() -> Criterion {
    let mut cr = Criterion::new(11, "infrastructure: determinism and exit codes");
    let runs: Vec<_> = (0..2).map(|_| bin().args(["check", "--suite", "all", "--seed", "7"]).output().expect("binary runs")).collect();
    cr.truth("check all exits 0 (first run)", runs[0].status.code() == Some(0));
    cr.truth("check all exits 0 (second run)", runs[1].status.code() == Some(0));
    cr.truth("identical output twice", runs[0].stdout == runs[1].stdout && !runs[0].stdout.is_empty());
    if runs[0].status.code() != Some(0) {
        eprint!("{}", String::from_utf8_lossy(&runs[0].stdout));
    }

    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let mut violating = presets::kronecker_point();
    violating.stencil = Some(quiver_wp::family::StencilOptions { step: 0.3, levels: 1, second_step: 0.3, second_levels: 1 });
    let cases = [
        ("ok", write("ok.scn", &presets::kronecker_point().to_canonical()), 0),
        ("malformed input", write("bad.scn", "{ not json"), 1),
        ("unknown key", write("key.scn", &presets::empty().to_canonical().replacen('{', "{\n  \"bogus\": 1,", 1)), 1),
        ("infeasible", write("inf.scn", &presets::infeasible().to_canonical()), 2),
        ("invariant violation", write("viol.scn", &violating.to_canonical()), 3),
    ];
    for (label, path, want) in cases {
        let out = dir.path().join(label.replace(' ', "_"));
        let st = bin().args(["run", "--scenario"]).arg(&path).arg("--out").arg(&out).status().unwrap();
        cr.truth(&format!("run {label} exits {want}"), st.code() == Some(want));
    }
    let st = bin().args(["check", "--suite", "nonsense"]).output().unwrap();
    cr.truth("unknown suite exits 1", st.status.code() == Some(1));
    cr
}

fn main() {
    let t0 = Instant::now();
    let all: [fn() -> Criterion; 11] =
        [criterion1, criterion2, criterion3, criterion4, criterion5, criterion6, criterion7, criterion8, criterion9, criterion10, criterion11];
    let mut failing = BTreeSet::new();
    let mut lines = Vec::new();
    for f in all {
        let t = Instant::now();
        let cr = f();
        let pass = cr.subs.iter().all(|s| s.pass);
        for s in &cr.subs {
            let mark = if s.pass { "ok  " } else { "FAIL" };
            println!("    {mark} {:<58} {:.3e} <= {:.0e}", s.id, s.residual, s.tol);
            if !s.pass {
                failing.insert(s.id.clone());
            }
        }
        let line = format!("criterion {:>2} {} - {} ({:.1}s)", cr.n, if pass { "PASS" } else { "FAIL" }, cr.title, secs(t));
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary ({:.0}s)", secs(t0));
    for l in &lines {
        println!("{l}");
    }
    let known: BTreeSet<String> = KNOWN_UNATTAINABLE.iter().map(|s| s.to_string()).collect();
    if failing != known {
        println!("unexpected failing set: {failing:?}, known unattainable: {known:?}");
        std::process::exit(1);
    }
    println!("failing sub-checks match the known-unattainable set: {known:?}");
}
