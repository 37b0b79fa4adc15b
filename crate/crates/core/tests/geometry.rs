//! Metric and curvature properties on point-backend families.

use proptest::prelude::*;
use quiver_wp::defcomplex::{Cochain0, Vector};
use quiver_wp::family::Family;
use quiver_wp::fiber::{wp_via_fiber_integral, from_rows};
use quiver_wp::linalg::{c, fnorm, random_matrix, Mat};
use quiver_wp::scenario::{presets, Scenario, Target};
use quiver_wp::wpgeom::{curvature_fd, curvature_tf, kahler_symmetry_residual, ks_all, normal_coordinates, wp_metric, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn family(scn: &Scenario) -> Family {
    match scn.build().unwrap().target {
        Target::Family(f) => *f,
        Target::Representation(_) => panic!("not a family"),
    }
}

fn fd_symmetry(t: &Tensor) -> f64 {
    // R_{ij̄kl̄} = R_{kj̄il̄}
    let k = t.shape[0];
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            for kk in 0..k {
                for l in 0..k {
                    worst = worst.max((t.get(&[i, j, kk, l]) - t.get(&[kk, j, i, l])).norm());
                }
            }
        }
    }
    worst / t.norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn metric_is_hermitian_and_mu_orthogonal_to_gauge(re in -0.5..0.5f64, im in -0.5..0.5f64, seed in any::<u64>()) {
        let mut fam = family(&presets::three_arrow_point());
        fam.s0 = vec![c(re, im), c(-0.3, 0.2)];
        let s0 = fam.s0.clone();
        let g = wp_metric(&fam, &s0).unwrap();
        prop_assert!(fnorm(&(&g - g.adjoint())) <= 1e-12 * fnorm(&g));
        let ctx = fam.context(&s0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = ctx.coord_dim(0);
        let v = random_matrix(&mut rng, d, 1);
        let xi: Cochain0 = ctx.from_coords(&Vector::from_iterator(d, v.iter().copied()));
        let dxi = ctx.d0(&xi);
        for mu in ks_all(&fam, &s0).unwrap() {
            prop_assert!(ctx.inner(&mu, &dxi).norm() <= 1e-10 * ctx.norm(&mu) * ctx.norm(&dxi));
        }
    }
}

#[test]
fn vee_pairing_is_positive_and_curvature_symmetric() {
    let fam = family(&presets::three_arrow_point());
    let (nf, _) = normal_coordinates(&fam).unwrap();
    let tf = curvature_tf(&nf).unwrap();
    assert!(tf.vee_min_eig >= -1e-10, "{}", tf.vee_min_eig);
    let fd = curvature_fd(&nf).unwrap();
    assert!(fd_symmetry(&fd.total) <= 1e-3);
    assert!(kahler_symmetry_residual(&fd.total) <= 1e-3);
}

#[test]
fn chern_character_route_is_the_fiber_integral_over_four_pi_squared() {
    let fam = family(&presets::torus_kronecker(6));
    let fw = wp_via_fiber_integral(&fam).unwrap();
    let tot: Mat = fw.total_matrix();
    let ch = from_rows(&fw.chern_character) * c(4.0 * PI * PI, 0.0);
    assert!(fnorm(&(&tot - &ch)) <= 1e-8 * fnorm(&tot));
}
