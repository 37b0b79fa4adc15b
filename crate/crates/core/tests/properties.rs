//! Property tests over the public API, driven by random seeds.

use proptest::prelude::*;
use quiver_wp::defcomplex::{Cochain, Cochain0, Cochain1, Cochain2, ComplexContext, Vector};
use quiver_wp::grid::{ops, Field, Spectral, TorusGeometry};
use quiver_wp::linalg::{c, eye, fnorm, random_hpd, random_matrix, scalar, trace, Mat, C64};
use quiver_wp::quiver::{
    check_feasibility, evaluate_path, evaluate_relation, sigma_slope, Path, Quiver, Relation, Representation, StabilityParameters,
};
use quiver_wp::torus::{curvature_form, vortex_residual_torus, BundleData};
use quiver_wp::vortex::{flow_to_vortex, moment_residual, residual_energy, FlowOptions, MetricAssignment, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Linear quiver 0 → 1 → 2 → 3 plus a parallel arrow 0 → 1.
fn chain(r: &mut ChaCha8Rng) -> (Quiver, Representation) {
    let q = Quiver::new(&[("0", 1), ("1", 2), ("2", 1), ("3", 1)], &[("a", "0", "1"), ("b", "1", "2"), ("c", "2", "3"), ("d", "0", "1")]).unwrap();
    let dims: Vec<usize> = (0..4).map(|_| r.gen_range(1..4)).collect();
    let maps = q.arrows().iter().enumerate().map(|(a, _)| random_matrix(r, dims[q.head(a)], dims[q.tail(a)])).collect();
    let rep = Representation::new(&q, dims, maps).unwrap();
    (q, rep)
}

fn random_cochain<T: Cochain>(ctx: &ComplexContext, r: &mut ChaCha8Rng) -> T {
    let d = ctx.coord_dim(T::LEVEL);
    let v = random_matrix(r, d, 1);
    ctx.from_coords(&Vector::from_iterator(d, v.iter().copied()))
}

fn point_ctx(r: &mut ChaCha8Rng) -> ComplexContext {
    let q = Quiver::new(&[("1", 1), ("2", 2), ("3", 1)], &[("a", "1", "2"), ("b", "2", "3"), ("c", "1", "3"), ("e", "1", "2")]).unwrap();
    let dims: Vec<usize> = (0..3).map(|_| r.gen_range(1..4)).collect();
    let phi: Vec<Mat> = (0..4).map(|a| random_matrix(r, dims[q.head(a)], dims[q.tail(a)])).collect();
    let h: Vec<Mat> = dims.iter().map(|&d| random_hpd(r, d)).collect();
    ComplexContext::point(&q, &[], &dims, &phi, &h).unwrap()
}

/// Smooth random field with modes up to 2 in each direction.
fn smooth(sp: &Spectral, r: &mut ChaCha8Rng, rows: usize, cols: usize, amp: f64) -> Field {
    let mut terms = Vec::new();
    for m1 in -2i64..=2 {
        for m2 in -2i64..=2 {
            terms.push((m1, m2, random_matrix(r, rows, cols) * c(amp / (1 + m1.abs() + m2.abs()) as f64, 0.0)));
        }
    }
    sp.trig(&terms)
}

fn smooth_metric(sp: &Spectral, r: &mut ChaCha8Rng, d: usize) -> Field {
    let l = smooth(sp, r, d, d, 0.2);
    l.iter().map(|x| eye(d) + x * x.adjoint()).collect()
}

/// Kronecker (1,2) on a torus with a scalar twist shared by both vertices.
fn torus_ctx(r: &mut ChaCha8Rng, modes: usize) -> ComplexContext {
    let sp = Spectral::new(TorusGeometry::new(c(0.15, 1.2), 2.0, modes).unwrap());
    let q = Quiver::new(&[("1", 1), ("2", 1)], &[("a", "1", "2"), ("b", "1", "2")]).unwrap();
    let n = sp.npts();
    let a = smooth(&sp, r, 1, 1, 0.3);
    let a2: Field = a.iter().map(|m| eye(2) * m[(0, 0)]).collect();
    let phi = vec![ops::constant(&random_matrix(r, 2, 1), n), ops::constant(&random_matrix(r, 2, 1), n)];
    let h = vec![smooth_metric(&sp, r, 1), smooth_metric(&sp, r, 2)];
    ComplexContext::torus(&q, &sp, &[1, 2], phi, vec![a, a2], h).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn path_evaluation_is_functorial(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (q, rep) = chain(&mut r);
        let ba = Path::from_ids(&q, &["b", "a"]).unwrap();
        let cb = Path::from_ids(&q, &["c", "b"]).unwrap();
        let c_ = Path::from_ids(&q, &["c"]).unwrap();
        let d = Path::from_ids(&q, &["d"]).unwrap();
        let cba = c_.compose(&q, &ba).unwrap();
        let lhs = evaluate_path(&q, &rep, &cba).unwrap();
        let rhs = evaluate_path(&q, &rep, &c_).unwrap() * evaluate_path(&q, &rep, &ba).unwrap();
        prop_assert!(fnorm(&(&lhs - &rhs)) <= 1e-13 * (1.0 + fnorm(&lhs)));
        let cbd = cb.compose(&q, &d).unwrap();
        let lhs = evaluate_path(&q, &rep, &cbd).unwrap();
        let rhs = evaluate_path(&q, &rep, &cb).unwrap() * evaluate_path(&q, &rep, &d).unwrap();
        prop_assert!(fnorm(&(&lhs - &rhs)) <= 1e-13 * (1.0 + fnorm(&lhs)));
        // Trivial paths act as identities.
        let e = Path::Trivial(q.tail(1));
        let be = Path::from_ids(&q, &["b"]).unwrap().compose(&q, &e).unwrap();
        prop_assert_eq!(evaluate_path(&q, &rep, &be).unwrap(), rep.maps[1].clone());
    }

    #[test]
    fn relation_evaluation_is_linear(seed in any::<u64>(), re1 in -3.0..3.0f64, im1 in -3.0..3.0f64, re2 in -3.0..3.0f64) {
        let mut r = rng(seed);
        let (q, rep) = chain(&mut r);
        let p1 = Path::from_ids(&q, &["b", "a"]).unwrap();
        let p2 = Path::from_ids(&q, &["b", "d"]).unwrap();
        let (x, y) = (c(re1, im1), c(re2, 0.5));
        let combo = Relation::new(&q, vec![(x, p1.clone()), (y, p2.clone())]).unwrap();
        let r1 = Relation::new(&q, vec![(c(1.0, 0.0), p1)]).unwrap();
        let r2 = Relation::new(&q, vec![(c(1.0, 0.0), p2)]).unwrap();
        let lhs = evaluate_relation(&q, &rep, &combo).unwrap();
        let rhs = evaluate_relation(&q, &rep, &r1).unwrap() * x + evaluate_relation(&q, &rep, &r2).unwrap() * y;
        prop_assert!(fnorm(&(&lhs - &rhs)) <= 1e-12 * (1.0 + fnorm(&lhs)));
    }

    #[test]
    fn sigma_slope_scale_invariant(ranks in prop::collection::vec(1usize..6, 2..5), deg in -10.0..10.0f64, k in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let sigma: Vec<f64> = (0..ranks.len() - 1).map(|_| r.gen_range(0.1..3.0)).collect();
        let a = sigma_slope(&ranks, deg, &sigma).unwrap();
        let scaled: Vec<usize> = ranks.iter().map(|x| x * k).collect();
        let b = sigma_slope(&scaled, deg * k as f64, &sigma).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn feasibility_is_permutation_invariant(dims in prop::collection::vec(0usize..5, 4), taus in prop::collection::vec(-3i32..4, 4), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let names = ["0", "1", "2", "3"];
        let q = Quiver::new(&names.iter().map(|n| (*n, 1)).collect::<Vec<_>>(), &[] as &[(&str, &str, &str)]).unwrap();
        let tau: Vec<f64> = taus.iter().map(|&t| t as f64 * 0.5).collect();
        let a = check_feasibility(&q, &dims, &StabilityParameters::new(tau.clone()));
        let pd: Vec<usize> = perm.iter().map(|&i| dims[i]).collect();
        let pt: Vec<f64> = perm.iter().map(|&i| tau[i]).collect();
        let b = check_feasibility(&q, &pd, &StabilityParameters::new(pt));
        prop_assert_eq!(a.feasible, b.feasible);
        prop_assert_eq!(a.trace_sum, b.trace_sum);
    }

    #[test]
    fn moment_map_trace_identity_and_global_scale(seed in any::<u64>(), scale in 0.1..10.0f64) {
        let mut r = rng(seed);
        let (q, rep) = chain(&mut r);
        let tau: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
        let params = StabilityParameters::new(tau.clone());
        let h = MetricAssignment { metrics: rep.dims.iter().map(|&d| random_hpd(&mut r, d)).collect() };
        let m = moment_residual(&q, &rep, &h, &params).unwrap();
        let total: C64 = m.iter().zip(&tau).zip(&rep.dims).map(|((mm, t), &d)| trace(&(mm + eye(d) * c(*t, 0.0)))).sum();
        let norm: f64 = m.iter().map(fnorm).sum();
        prop_assert!(total.norm() <= 1e-11 * (1.0 + norm));
        let hs = MetricAssignment { metrics: h.metrics.iter().map(|x| x * c(scale, 0.0)).collect() };
        let ms = moment_residual(&q, &rep, &hs, &params).unwrap();
        for (a, b) in m.iter().zip(&ms) {
            prop_assert!(fnorm(&(a - b)) <= 1e-11 * (1.0 + fnorm(a)));
        }
    }

    #[test]
    fn point_adjointness_euler_and_hodge(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ctx = point_ctx(&mut r);
        let x: Cochain0 = random_cochain(&ctx, &mut r);
        let y: Cochain1 = random_cochain(&ctx, &mut r);
        let (l, rr) = (ctx.inner(&ctx.d0(&x), &y), ctx.inner(&x, &ctx.d0_adj(&y)));
        prop_assert!((l - rr).norm() <= 1e-12 * ctx.norm(&ctx.d0(&x)) * ctx.norm(&y));
        prop_assert!(ctx.norm(&ctx.d1(&ctx.d0(&x))) == 0.0);
        let h = ctx.hyperdims().unwrap();
        prop_assert!(h.euler_ok);
        prop_assert_eq!(h.h0 as i64 - h.h1 as i64 + h.h2 as i64, ctx.coord_dim(0) as i64 - ctx.dim_a1() as i64);
        for (a, b) in [
            (ctx.norm(&ctx.sub(&ctx.add(&ctx.harmonic(&x).unwrap(), &ctx.laplacian(&ctx.greens(&x).unwrap())), &x)), ctx.norm(&x)),
            (ctx.norm(&ctx.sub(&ctx.add(&ctx.harmonic(&y).unwrap(), &ctx.laplacian(&ctx.greens(&y).unwrap())), &y)), ctx.norm(&y)),
        ] {
            prop_assert!(a <= 1e-10 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn delta_image_satisfies_linearized_relations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let q = Quiver::new(&[("1", 1), ("2", 1), ("3", 1)], &[("a", "1", "2"), ("b", "2", "3"), ("c", "1", "3")]).unwrap();
        let dims: Vec<usize> = (0..3).map(|_| r.gen_range(1..3)).collect();
        let a = random_matrix(&mut r, dims[1], dims[0]);
        let b = random_matrix(&mut r, dims[2], dims[1]);
        let cc = &b * &a;
        let relation = Relation::new(&q, vec![(c(1.0, 0.0), Path::from_ids(&q, &["b", "a"]).unwrap()), (c(-1.0, 0.0), Path::from_ids(&q, &["c"]).unwrap())]).unwrap();
        let h: Vec<Mat> = dims.iter().map(|&d| random_hpd(&mut r, d)).collect();
        let ctx = ComplexContext::point(&q, &[relation.clone()], &dims, &[a, b, cc], &h).unwrap();
        let x: Cochain0 = random_cochain(&ctx, &mut r);
        let psi = ctx.delta(&x).chi;
        let lin = ctx.linearize_relation(&relation, &psi).unwrap();
        prop_assert!(ops::sup_norm(&lin) <= 1e-12 * (1.0 + ctx.norm(&x)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn torus_adjointness_and_hodge(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ctx = torus_ctx(&mut r, 3);
        let x: Cochain0 = random_cochain(&ctx, &mut r);
        let y: Cochain1 = random_cochain(&ctx, &mut r);
        let z: Cochain2 = random_cochain(&ctx, &mut r);
        let (l, rr) = (ctx.inner(&ctx.d0(&x), &y), ctx.inner(&x, &ctx.d0_adj(&y)));
        prop_assert!((l - rr).norm() <= 1e-12 * ctx.norm(&ctx.d0(&x)) * ctx.norm(&y));
        let (l, rr) = (ctx.inner(&ctx.d1(&y), &z), ctx.inner(&y, &ctx.d1_adj(&z)));
        prop_assert!((l - rr).norm() <= 1e-12 * ctx.norm(&ctx.d1(&y)) * ctx.norm(&z));
        for e in [
            ctx.norm(&ctx.sub(&ctx.add(&ctx.harmonic(&x).unwrap(), &ctx.laplacian(&ctx.greens(&x).unwrap())), &x)) / ctx.norm(&x),
            ctx.norm(&ctx.sub(&ctx.add(&ctx.harmonic(&y).unwrap(), &ctx.laplacian(&ctx.greens(&y).unwrap())), &y)) / ctx.norm(&y),
            ctx.norm(&ctx.sub(&ctx.add(&ctx.harmonic(&z).unwrap(), &ctx.laplacian(&ctx.greens(&z).unwrap())), &z)) / ctx.norm(&z),
        ] {
            prop_assert!(e <= 1e-10, "{e}");
        }
    }

    #[test]
    fn torus_complex_property_at_sixteen_modes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ctx = torus_ctx(&mut r, 16);
        let x: Cochain0 = random_cochain(&ctx, &mut r);
        let dd = ctx.d1(&ctx.d0(&x));
        prop_assert!(ctx.norm(&dd) <= 1e-10 * ctx.norm(&x), "{}", ctx.norm(&dd) / ctx.norm(&x));
    }

    #[test]
    fn torus_spectral_calculus(seed in any::<u64>()) {
        let mut r = rng(seed);
        let sp = Spectral::new(TorusGeometry::new(c(r.gen_range(-0.4..0.4), r.gen_range(0.8..1.5)), r.gen_range(0.5..3.0), 8).unwrap());
        let f = smooth(&sp, &mut r, 1, 1, 1.0);
        let lhs = ops::add(&sp.dbar(&sp.d(&f)), &ops::scale(&sp.d(&sp.dbar(&f)), c(-1.0, 0.0)));
        prop_assert!(ops::sup_norm(&lhs) <= 1e-12 * (1.0 + ops::sup_norm(&f)));
        // Discrete Stokes: ∫ ∂̄u · v + ∫ u · ∂̄v = 0.
        let u = smooth(&sp, &mut r, 1, 1, 1.0);
        let v = smooth(&sp, &mut r, 1, 1, 1.0);
        let s = sp.integrate(&ops::add(&ops::mul(&sp.dbar(&u), &v), &ops::mul(&u, &sp.dbar(&v))))[(0, 0)];
        prop_assert!(s.norm() <= 1e-12 * (1.0 + ops::l2_sq(&u) + ops::l2_sq(&v)));
        // Degree zero: (1/2π)∫ tr(√-1 F) vanishes for any metric and deformation.
        let h = smooth_metric(&sp, &mut r, 2);
        let alpha = smooth(&sp, &mut r, 2, 2, 0.3);
        let fzz = curvature_form(&sp, &h, &alpha).unwrap();
        let tr: Field = fzz.iter().map(|m| scalar(trace(m))).collect();
        let deg = sp.integrate(&tr)[(0, 0)] / (2.0 * PI);
        prop_assert!(deg.norm() <= 1e-10, "{deg}");
    }

    #[test]
    fn flow_is_monotone_and_unique_up_to_scale(seed in any::<u64>()) {
        let mut r = rng(seed);
        let q = Quiver::new(&[("1", 1), ("2", 1)], &[("a", "1", "2"), ("b", "1", "2")]).unwrap();
        let maps = vec![random_matrix(&mut r, 2, 1), random_matrix(&mut r, 2, 1)];
        let rep = Representation::new(&q, vec![1, 2], maps).unwrap();
        let params = StabilityParameters::new(vec![-2.0, 1.0]);
        let h0 = MetricAssignment { metrics: vec![random_hpd(&mut r, 1), random_hpd(&mut r, 2)] };
        let mut last = f64::INFINITY;
        for iters in 0..12 {
            let opts = FlowOptions { max_iters: iters, tol: 0.0, ..Default::default() };
            let (h, _) = flow_to_vortex(&q, &rep, &[], &params, &opts, &h0).unwrap();
            let e = residual_energy(&moment_residual(&q, &rep, &h, &params).unwrap());
            prop_assert!(e <= last * (1.0 + 1e-12));
            last = e;
        }
        let (ha, ra) = flow_to_vortex(&q, &rep, &[], &params, &FlowOptions::default(), &h0).unwrap();
        let (hb, rb) = flow_to_vortex(&q, &rep, &[], &params, &FlowOptions::default(), &MetricAssignment::identity(&rep)).unwrap();
        prop_assert_eq!(ra.verdict, Verdict::Converged);
        prop_assert_eq!(rb.verdict, Verdict::Converged);
        let k = ha.metrics[0][(0, 0)].re / hb.metrics[0][(0, 0)].re;
        for (a, b) in ha.metrics.iter().zip(&hb.metrics) {
            prop_assert!(fnorm(&(a - b * c(k, 0.0))) <= 1e-6 * fnorm(a));
        }
    }

    #[test]
    fn torus_residual_reduces_to_point_residual_for_constant_data(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (q, rep) = chain(&mut r);
        let sp = Spectral::new(TorusGeometry::square(2));
        let n = sp.npts();
        let tau: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
        let params = StabilityParameters::new(tau);
        let h: Vec<Mat> = rep.dims.iter().map(|&d| random_hpd(&mut r, d)).collect();
        let b = BundleData {
            dims: rep.dims.clone(),
            phi: rep.maps.iter().map(|m| ops::constant(m, n)).collect(),
            alpha: rep.dims.iter().map(|&d| ops::zero(d, d, n)).collect(),
        };
        let hf: Vec<Field> = h.iter().map(|m| ops::constant(m, n)).collect();
        let torus = vortex_residual_torus(&q, &sp, &b, &hf, &params).unwrap();
        let point = moment_residual(&q, &rep, &MetricAssignment { metrics: h }, &params).unwrap();
        for (t, p) in torus.iter().zip(&point) {
            for m in t {
                prop_assert!(fnorm(&(m - p)) <= 1e-12 * (1.0 + fnorm(p)));
            }
        }
    }
}
