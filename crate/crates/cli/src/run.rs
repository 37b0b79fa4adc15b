//! `run`: executes the requested stages of a scenario and writes a report.

use crate::{exit_code_for, tol, EXIT_INPUT, EXIT_OK, EXIT_VIOLATION};
use quiver_wp::defcomplex::{Backend, ComplexContext};
use quiver_wp::family::Family;
use quiver_wp::fiber::{crosscheck_gap, curvature_on_product};
use quiver_wp::forms::kaehler_form;
use quiver_wp::linalg::{fnorm, Mat};
use quiver_wp::quiver::check_feasibility;
use quiver_wp::scenario::{matrix_spec, parse_backend_override, Built, Request, Scenario, Target};
use quiver_wp::vortex::{flow_to_vortex, FlowOptions, FlowReport, MetricAssignment, Verdict};
use quiver_wp::wpgeom::{
    curvature_fd, curvature_tf, harmonic_part_of_mu_cov, kahler_check, kahler_symmetry_residual, ks_all, lemma_suite, normal_coordinates, rel_gap,
    wp_derivative, wp_metric, wp_metric_formula, Tensor,
};
use quiver_wp::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

/// One result block. `pass` is `None` for purely informational blocks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Block {
    pub stage: String,
    pub pass: Option<bool>,
    pub values: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub input_sha256: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub provenance: Provenance,
    pub blocks: Vec<Block>,
    pub failure: Option<Failure>,
    pub exit_code: i32,
    /// Wall-clock milliseconds per stage; excluded from determinism checks.
    pub timing_ms: BTreeMap<String, f64>,
    /// Tensors written as CSV tables when requested.
    #[serde(skip)]
    pub tensors: BTreeMap<String, Tensor>,
}

impl RunReport {
    /// The report without timing, for determinism comparisons.
    pub fn numeric_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().unwrap().remove("timing_ms");
        v
    }
}

fn mat_json(m: &Mat) -> Value {
    serde_json::to_value(matrix_spec(m)).unwrap()
}

fn check(pass: bool, acc: &mut bool) -> Option<bool> {
    *acc &= pass;
    Some(pass)
}

struct Ctx<'a> {
    built: &'a Built,
    seed: u64,
    flow: FlowOptions,
    solved: Option<MetricAssignment>,
    blocks: Vec<Block>,
    tensors: BTreeMap<String, Tensor>,
    ok: bool,
}

impl Ctx<'_> {
    fn push(&mut self, stage: &str, pass: Option<bool>, values: Value) {
        if pass == Some(false) {
            self.ok = false;
        }
        self.blocks.push(Block { stage: stage.into(), pass, values });
    }
}

fn solve_representation(cx: &mut Ctx) -> Result<(MetricAssignment, FlowReport)> {
    let Target::Representation(rep) = &cx.built.target else { unreachable!() };
    let h0 = MetricAssignment::identity(rep);
    let (h, report) = flow_to_vortex(&cx.built.quiver, rep, &cx.built.relations, &cx.built.params, &cx.flow, &h0)?;
    if report.verdict == Verdict::Converged {
        cx.solved = Some(h.clone());
    }
    Ok((h, report))
}

fn representation_stage(cx: &mut Ctx, req: Request) -> Result<()> {
    match req {
        Request::Solve => {
            let Target::Representation(rep) = &cx.built.target else { unreachable!() };
            let feas = check_feasibility(&cx.built.quiver, &rep.dims, &cx.built.params);
            let (h, report) = solve_representation(cx)?;
            let metrics: Vec<Value> = h.metrics.iter().map(mat_json).collect();
            cx.push(
                "solve",
                Some(report.verdict == Verdict::Converged),
                json!({ "verdict": report.verdict, "iterations": report.iterations, "residual": report.residual, "tolerance": cx.flow.tol,
                        "eigen_bounds": report.eigen_bounds, "metrics": metrics, "feasibility": feas }),
            );
            if report.verdict != Verdict::Converged {
                let reason = feas.reason.unwrap_or_else(|| format!("vortex flow ended with verdict {:?}", report.verdict));
                return Err(Error::Solver(reason));
            }
        }
        Request::Deform => {
            let h = match cx.solved.clone() {
                Some(h) => h,
                None => {
                    let (h, report) = solve_representation(cx)?;
                    if report.verdict != Verdict::Converged {
                        return Err(Error::Solver(format!("vortex flow ended with verdict {:?}", report.verdict)));
                    }
                    h
                }
            };
            let Target::Representation(rep) = &cx.built.target else { unreachable!() };
            let ctx = ComplexContext::point(&cx.built.quiver, &cx.built.relations, &cx.built.dims, &rep.maps, &h.metrics)?;
            let hd = ctx.hyperdims()?;
            cx.push("deform", Some(hd.euler_ok), json!({ "hyperdims": hd }));
        }
        other => return Err(Error::Unsupported(format!("request `{other:?}` needs a family, not a single representation"))),
    }
    Ok(())
}

fn flow_options(scn: &Scenario) -> FlowOptions {
    let mut f = FlowOptions::default();
    if let Some(t) = scn.solver.tol {
        f.tol = t;
    }
    if let Some(m) = scn.solver.max_iters {
        f.max_iters = m;
    }
    if let Some(st) = scn.solver.step {
        f.step = st;
    }
    f
}

fn family_stage(cx: &mut Ctx, fam: &Family, req: Request) -> Result<()> {
    let s0 = fam.s0.clone();
    let k = fam.k();
    match req {
        Request::Solve => {
            let sol = fam.solve(&s0)?;
            let metrics: Vec<Value> = if fam.backend.is_point() {
                sol.metrics.iter().map(|f| mat_json(&f[0])).collect()
            } else {
                sol.metrics.iter().map(|f| json!({ "grid_points": f.len() })).collect()
            };
            cx.push(
                "solve",
                Some(true),
                json!({ "verdict": sol.report.verdict, "iterations": sol.report.iterations, "residual": sol.report.residual, "metrics": metrics }),
            );
        }
        Request::Deform => {
            let ctx = fam.context(&s0)?;
            let hd = match ctx.hyperdims() {
                Ok(h) => serde_json::to_value(h).unwrap(),
                Err(Error::Unsupported(m)) => json!({ "skipped": m }),
                Err(e) => return Err(e),
            };
            let mus = ks_all(fam, &s0)?;
            let d0 = mus.iter().map(|m| ctx.norm(&ctx.d0_adj(m))).fold(0.0, f64::max);
            let d1 = mus.iter().map(|m| ctx.norm(&ctx.d1(m))).fold(0.0, f64::max);
            let mut ok = true;
            let pass = check(d0 <= tol::HARMONIC && d1 <= tol::HARMONIC, &mut ok);
            cx.push("deform", pass, json!({ "hyperdims": hd, "harmonic_d0": d0, "harmonic_d1": d1, "tolerance": tol::HARMONIC }));
        }
        Request::Wp => {
            let g = wp_metric(fam, &s0)?;
            let gf = wp_metric_formula(fam, &s0)?;
            let d = wp_derivative(fam, &s0)?;
            let routes = fnorm(&(&g - &gf)) / fnorm(&g).max(1e-12);
            let mut ok = true;
            check(d.rel_gap <= tol::DERIVATIVE, &mut ok);
            check(routes <= tol::DERIVATIVE, &mut ok);
            let mut values = json!({ "G": mat_json(&g), "ks_route_gap": routes, "derivative_gap": d.rel_gap, "tolerance": tol::DERIVATIVE });
            if k >= 2 {
                let kr = kahler_check(fam)?;
                check(kr.relative <= tol::KAHLER, &mut ok);
                values["kahler_asymmetry"] = json!(kr.relative);
            }
            cx.tensors.insert("G".into(), Tensor::from_mat(&g));
            cx.tensors.insert("dG_formula".into(), d.formula.clone());
            cx.tensors.insert("dG_fd".into(), d.fd.clone());
            cx.push("wp", Some(ok), values);
        }
        Request::Curvature => {
            let (nf, map) = normal_coordinates(fam)?;
            let center = wp_derivative(&nf, &nf.s0)?;
            let harm = harmonic_part_of_mu_cov(&nf)?;
            let tf = curvature_tf(&nf)?;
            let fd = curvature_fd(&nf)?;
            let gap = rel_gap(&tf.total, &fd.total);
            let sym = kahler_symmetry_residual(&tf.total);
            let mut ok = true;
            check(gap <= tol::CURVATURE, &mut ok);
            check(sym <= tol::CURVATURE, &mut ok);
            check(center.fd.norm() <= tol::NORMAL_CENTER, &mut ok);
            check(harm <= tol::NORMAL_HARMONIC, &mut ok);
            cx.tensors.insert("R_tf".into(), tf.total.clone());
            cx.tensors.insert("R_fd".into(), fd.total.clone());
            cx.push(
                "curvature",
                Some(ok),
                json!({ "normal_map": { "A": mat_json(&map.a), "Q": map.q.iter().map(mat_json).collect::<Vec<_>>() },
                        "center_dG": center.fd.norm(), "center_harmonic_mu_cov": harm,
                        "R_tf": tf.total, "R_fd": fd.total, "relative_gap": gap, "symmetry_residual": sym,
                        "terms": { "wedge": tf.wedge, "vee_ij": tf.vee_ij, "vee_kj": tf.vee_kj }, "vee_min_eig": tf.vee_min_eig,
                        "gap_warning": tf.gap_warning, "fd_truncation": fd.truncation_estimate, "fd_noisy": fd.noisy,
                        "tolerance": tol::CURVATURE }),
            );
        }
        Request::Fiberint => {
            let (gap, fw, _) = crosscheck_gap(fam)?;
            let mut ok = true;
            check(gap <= tol::FIBER, &mut ok);
            check(fw.chern_character_gap <= tol::CHERN_CHARACTER, &mut ok);
            check(fw.potential_gap <= tol::POTENTIAL, &mut ok);
            cx.tensors.insert("G_fiber".into(), Tensor::from_mat(&fw.total_matrix()));
            cx.push("fiberint", Some(ok), json!({ "fiber": fw, "gap_to_l2": gap, "tolerance": tol::FIBER }));
        }
        Request::Chern => {
            let Backend::Torus(sp) = &fam.backend else {
                return Err(Error::Unsupported("Chern forms need the torus backend".into()));
            };
            let oms = curvature_on_product(fam, &s0)?;
            let wx = kaehler_form(sp, k);
            let mut reports = Vec::new();
            let mut ok = true;
            for om in oms.iter().filter(|o| o.rows > 0) {
                let r = quiver_wp::forms::virtual_ch_checks(om, &wx, &[0, sp.npts() / 3, sp.npts() / 2])?;
                check(r.max() <= tol::VIRTUAL_CH, &mut ok);
                reports.push(r);
            }
            cx.push("chern", Some(ok), json!({ "vertices": reports, "tolerance": tol::VIRTUAL_CH }));
        }
        Request::Check => {
            let r = lemma_suite(fam, cx.seed)?;
            let pass = r.max() <= tol::LEMMA_STENCIL;
            cx.push("check", Some(pass), json!({ "lemmas": r, "tolerance": tol::LEMMA_STENCIL }));
        }
    }
    Ok(())
}

/// Runs every requested stage in pipeline order; the first error stops the run.
pub fn run_scenario(scn: &Scenario, input_text: &str, seed: u64) -> RunReport {
    let mut hasher = Sha256::new();
    hasher.update(input_text.as_bytes());
    let provenance = Provenance { input_sha256: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(), seed, version: env!("CARGO_PKG_VERSION").into() };
    let mut report = RunReport {
        scenario: scn.name.clone(),
        provenance,
        blocks: vec![],
        failure: None,
        exit_code: EXIT_OK,
        timing_ms: BTreeMap::new(),
        tensors: BTreeMap::new(),
    };
    let built = match scn.build() {
        Ok(b) => b,
        Err(e) => {
            report.failure = Some(Failure { stage: "build".into(), message: e.to_string() });
            report.exit_code = exit_code_for(&e);
            return report;
        }
    };
    if let Target::Family(f) = &built.target {
        let feas = check_feasibility(&f.quiver, &f.dims, &f.params);
        if !feas.feasible {
            let msg = feas.reason.clone().unwrap_or_default();
            report.blocks.push(Block { stage: "solve".into(), pass: Some(false), values: json!({ "feasibility": feas }) });
            report.failure = Some(Failure { stage: "solve".into(), message: msg });
            report.exit_code = crate::EXIT_SOLVER;
            return report;
        }
    }
    let mut requests = scn.requests.clone();
    requests.sort();
    requests.dedup();
    let mut cx = Ctx { built: &built, seed, flow: flow_options(scn), solved: None, blocks: vec![], tensors: BTreeMap::new(), ok: true };
    for req in requests {
        let t = Instant::now();
        let name = serde_json::to_value(req).unwrap().as_str().unwrap().to_string();
        let r = match &built.target {
            Target::Representation(_) => representation_stage(&mut cx, req),
            Target::Family(f) => family_stage(&mut cx, f, req),
        };
        report.timing_ms.insert(name.clone(), t.elapsed().as_secs_f64() * 1e3);
        if let Err(e) = r {
            report.failure = Some(Failure { stage: name, message: e.to_string() });
            report.exit_code = exit_code_for(&e);
            break;
        }
    }
    report.blocks = cx.blocks;
    report.tensors = cx.tensors;
    if report.failure.is_none() && !cx.ok {
        report.exit_code = EXIT_VIOLATION;
        let stages: Vec<&str> = report.blocks.iter().filter(|b| b.pass == Some(false)).map(|b| b.stage.as_str()).collect();
        report.failure = Some(Failure { stage: stages.join(","), message: "invariant outside tolerance".into() });
    }
    report
}

/// Reads a scenario file, runs it and writes `report.json` (plus CSV tables)
/// into `out`. Returns the process exit code.
pub fn run_file(path: &Path, out: &Path, seed: u64, backend_override: Option<&str>, csv: bool) -> (i32, Option<RunReport>) {
    let fail = |msg: String| {
        eprintln!("error: {msg}");
        (EXIT_INPUT, None)
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(format!("cannot read {}: {e}", path.display())),
    };
    let mut scn = match Scenario::from_json(&text) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    if let Some(o) = backend_override {
        match parse_backend_override(o, &scn.backend).and_then(|b| scn.with_backend(b)) {
            Ok(s) => scn = s,
            Err(e) => return fail(e.to_string()),
        }
    }
    let report = run_scenario(&scn, &text, seed);
    if let Err(e) = write_outputs(&report, out, csv) {
        return fail(format!("cannot write report: {e}"));
    }
    (report.exit_code, Some(report))
}

pub fn write_outputs(report: &RunReport, out: &Path, csv: bool) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    std::fs::write(out.join("report.json"), text)?;
    if csv {
        for (name, t) in &report.tensors {
            std::fs::write(out.join(format!("{name}.csv")), t.to_csv())?;
        }
    }
    Ok(())
}

/// One-line summary for the terminal.
pub fn summary(report: &RunReport) -> String {
    let mut s = format!("{}: exit {}", report.scenario, report.exit_code);
    for b in &report.blocks {
        let mark = match b.pass {
            Some(true) => "ok",
            Some(false) => "FAIL",
            None => "-",
        };
        s.push_str(&format!(" | {} {}", b.stage, mark));
    }
    if let Some(f) = &report.failure {
        s.push_str(&format!(" | failed at {}: {}", f.stage, f.message));
    }
    s
}
