//! The Weil–Petersson form of a torus family as a fibre integral of
//! curvature forms on `X × S`, in the plain and the Chern-character
//! normalizations, together with the potential check for the `tr φφ*` term.

use crate::defcomplex::Backend;
use crate::error::{Error, Result};
use crate::family::{mixed_deriv, Family};
use crate::forms::{chern_forms, ds, dsbar, fiber_integral, hermitian_coefficients, kaehler_form, FormOnProduct, DZ, DZBAR};
use crate::grid::{Field, Spectral};
use crate::linalg::{c, fnorm, inverse, trace, zeros, Mat, C64};
use crate::torus::curvature_form;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Aliasing fraction of the solved metrics above which a warning is raised.
pub const ALIASING_WARN: f64 = 1e-6;

fn torus_grid(fam: &Family) -> Result<&Spectral> {
    match &fam.backend {
        Backend::Torus(sp) => Ok(sp),
        Backend::Point => Err(Error::Unsupported("fibre integrals need the torus backend".into())),
    }
}

/// Curvature forms `Ω^λ = R_{AB̄} dZ^A∧dZ̄^B` on `X × S` at `s`, one per vertex.
/// The `z z̄` block is spectral; blocks with a parameter index use the stencil connection.
pub fn curvature_on_product(fam: &Family, s: &[C64]) -> Result<Vec<FormOnProduct>> {
    let sp = torus_grid(fam)?;
    let k = fam.k();
    let npts = sp.npts();
    let h = fam.metrics_at(s)?;
    let alpha = fam.alpha_at(s);
    let riz: Vec<Vec<Field>> = (0..k).map(|i| fam.curvature_iz(s, i)).collect::<Result<_>>()?;
    let mut rij = vec![vec![Vec::new(); k]; k];
    for (i, row) in rij.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = fam.mixed_curvature(s, i, j)?;
        }
    }
    let mut out = Vec::with_capacity(fam.dims.len());
    for (v, &d) in fam.dims.iter().enumerate() {
        let mut om = FormOnProduct::zero(k, d, d, npts);
        if d == 0 {
            out.push(om);
            continue;
        }
        let hinv: Field = h[v].iter().map(inverse).collect::<Result<_>>()?;
        om.add_term(&[DZ, DZBAR], &curvature_form(sp, &h[v], &alpha[v])?)?;
        for i in 0..k {
            om.add_term(&[ds(i), DZBAR], &riz[i][v])?;
            // R_{zī} = (R_{iz̄})*, the adjoint with respect to h.
            let rzi: Field = (0..npts).map(|p| &hinv[p] * riz[i][v][p].adjoint() * &h[v][p]).collect();
            om.add_term(&[DZ, dsbar(i)], &rzi)?;
            for j in 0..k {
                om.add_term(&[ds(i), dsbar(j)], &rij[i][j][v])?;
            }
        }
        out.push(om);
    }
    Ok(out)
}

/// `P(s) = Σ_a ∫_X tr(φ_a φ_a*) ω_X` with the solved metrics at `s`.
pub fn phi_potential(fam: &Family, s: &[C64]) -> Result<C64> {
    let sp = torus_grid(fam)?;
    let h = fam.metrics_at(s)?;
    let phi = fam.phi_at(s);
    let mut acc = c(0.0, 0.0);
    for (a, f) in phi.iter().enumerate() {
        let (hh, t) = (fam.quiver.head(a), fam.quiver.tail(a));
        let integrand: Field = (0..sp.npts())
            .map(|p| -> Result<Mat> {
                let adj = inverse(&h[t][p])? * f[p].adjoint() * &h[hh][p];
                Ok(Mat::from_element(1, 1, trace(&(&f[p] * adj))))
            })
            .collect::<Result<_>>()?;
        acc += sp.integrate(&integrand)[(0, 0)];
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberWp {
    /// `½ Σ n_λ ∫ tr(Ω∧Ω)`.
    pub curvature_term: Vec<Vec<C64>>,
    /// `√-1 Σ τ′_λ ∫ tr Ω ∧ ω_X`.
    pub tau_term: Vec<Vec<C64>>,
    /// `√-1 ∂∂̄ ∫ Σ tr(φφ*) ω_X`, second differences of the potential.
    pub potential_term: Vec<Vec<C64>>,
    /// Sum of the three terms: `G_{ij̄}` with `ω_WP = √-1 G_{ij̄} ds^i∧ds̄^j`.
    pub total: Vec<Vec<C64>>,
    /// The Chern-character expression, which should be `total / 4π²`.
    pub chern_character: Vec<Vec<C64>>,
    /// `‖total − 4π²·chern_character‖ / ‖total‖`.
    pub chern_character_gap: f64,
    /// `∫ Σ [tr(φ_{;i}(φ_{;j})*) − tr(φφ* R^h_{ij̄} − φ*φ R^t_{ij̄})] ω_X`,
    /// the potential term by the covariant-derivative identity.
    pub potential_identity: Vec<Vec<C64>>,
    /// `‖potential_term − potential_identity‖`.
    pub potential_gap: f64,
    /// Largest aliasing fraction of the solved metrics at `s₀`.
    pub aliasing: f64,
    pub aliasing_warning: bool,
}

pub fn to_rows(m: &Mat) -> Vec<Vec<C64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn from_rows(r: &[Vec<C64>]) -> Mat {
    let n = r.len();
    let m = r.first().map_or(0, |x| x.len());
    Mat::from_fn(n, m, |i, j| r[i][j])
}

impl FiberWp {
    pub fn total_matrix(&self) -> Mat {
        from_rows(&self.total)
    }
}

fn ddbar_form(k: usize, m: &Mat, factor: C64) -> Result<FormOnProduct> {
    let mut f = FormOnProduct::zero(k, 1, 1, 1);
    for i in 0..k {
        for j in 0..k {
            f.add_term(&[ds(i), dsbar(j)], &vec![Mat::from_element(1, 1, m[(i, j)] * factor)])?;
        }
    }
    Ok(f)
}

/// Both fibre-integral expressions for the Weil–Petersson form at the base point.
pub fn wp_via_fiber_integral(fam: &Family) -> Result<FiberWp> {
    let sp = torus_grid(fam)?;
    let s = fam.s0.clone();
    let k = fam.k();
    let omegas = curvature_on_product(fam, &s)?;
    let wx = kaehler_form(sp, k);
    let q = &fam.quiver;
    let tau = &fam.params.tau_prime;

    let mut curv = FormOnProduct::zero(k, 1, 1, 1);
    let mut tau_f = FormOnProduct::zero(k, 1, 1, 1);
    let mut ch_curv = FormOnProduct::zero(k, 1, 1, 1);
    let mut ch_tau = FormOnProduct::zero(k, 1, 1, 1);
    for (v, om) in omegas.iter().enumerate() {
        if om.rows == 0 {
            continue;
        }
        let n = q.weight(v);
        let tr2 = om.wedge(om).trace();
        curv = curv.add(&fiber_integral(sp, &tr2)?.scale(c(0.5 * n, 0.0)));
        tau_f = tau_f.add(&fiber_integral(sp, &om.trace().wedge(&wx))?.scale(c(0.0, tau[v])));
        let ch = chern_forms(om, 2)?;
        ch_curv = ch_curv.add(&fiber_integral(sp, &ch[2])?.scale(c(-n, 0.0)));
        ch_tau = ch_tau.add(&fiber_integral(sp, &ch[1].wedge(&wx))?.scale(c(tau[v] / (2.0 * PI), 0.0)));
    }
    let st = fam.stencil;
    let pot = |x: &[C64]| phi_potential(fam, x);
    let mut ddbar = zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            ddbar[(i, j)] = mixed_deriv(&pot, &s, i, j, st.second_step, st.second_levels)?;
        }
    }
    let curvature_term = hermitian_coefficients(&curv);
    let tau_term = hermitian_coefficients(&tau_f);
    let potential_term = hermitian_coefficients(&ddbar_form(k, &ddbar, c(0.0, 1.0))?);
    let total = &curvature_term + &tau_term + &potential_term;
    let ch_pot = ddbar_form(k, &ddbar, c(0.0, 1.0 / (4.0 * PI * PI)))?;
    let chern_character = hermitian_coefficients(&ch_curv.add(&ch_tau).add(&ch_pot));
    let chern_character_gap = fnorm(&(&total - &chern_character * c(4.0 * PI * PI, 0.0))) / fnorm(&total).max(1e-300);

    let potential_identity = potential_by_identity(fam, &s)?;
    let potential_gap = fnorm(&(&potential_term - &potential_identity));
    let h = fam.metrics_at(&s)?;
    let aliasing = h.iter().filter(|f| f.first().is_some_and(|m| m.nrows() > 0)).map(|f| sp.aliasing_fraction(f)).fold(0.0, f64::max);
    Ok(FiberWp {
        curvature_term: to_rows(&curvature_term),
        tau_term: to_rows(&tau_term),
        potential_term: to_rows(&potential_term),
        total: to_rows(&total),
        chern_character: to_rows(&chern_character),
        chern_character_gap,
        potential_identity: to_rows(&potential_identity),
        potential_gap,
        aliasing,
        aliasing_warning: aliasing > ALIASING_WARN,
    })
}

/// `∂_i∂_j̄ ∫ Σ tr(φφ*) ω_X` from first covariant derivatives and the mixed curvature.
fn potential_by_identity(fam: &Family, s: &[C64]) -> Result<Mat> {
    let sp = torus_grid(fam)?;
    let k = fam.k();
    let npts = sp.npts();
    let h = fam.metrics_at(s)?;
    let hinv: Vec<Field> = h.iter().map(|f| f.iter().map(inverse).collect::<Result<_>>()).collect::<Result<_>>()?;
    let phi = fam.phi_at(s);
    let conn: Vec<Vec<Field>> = (0..k).map(|i| fam.connection(s, i)).collect::<Result<_>>()?;
    // φ_{a;i} = ∂_iφ_a + A^h_i φ_a − φ_a A^t_i
    let cov: Vec<Vec<Field>> = (0..k)
        .map(|i| {
            let d = fam.dphi_at(s, i);
            (0..phi.len())
                .map(|a| {
                    let (hh, t) = (fam.quiver.head(a), fam.quiver.tail(a));
                    (0..npts).map(|p| &d[a][p] + &conn[i][hh][p] * &phi[a][p] - &phi[a][p] * &conn[i][t][p]).collect()
                })
                .collect()
        })
        .collect();
    let mut out = zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let r = fam.mixed_curvature(s, i, j)?;
            let mut acc = c(0.0, 0.0);
            for a in 0..phi.len() {
                let (hh, t) = (fam.quiver.head(a), fam.quiver.tail(a));
                let integrand: Field = (0..npts)
                    .map(|p| {
                        let adj = |x: &Mat| &hinv[t][p] * x.adjoint() * &h[hh][p];
                        let pp = &phi[a][p];
                        let pa = adj(pp);
                        let z = trace(&(&cov[i][a][p] * adj(&cov[j][a][p]))) - trace(&(pp * &pa * &r[hh][p])) + trace(&(&pa * pp * &r[t][p]));
                        Mat::from_element(1, 1, z)
                    })
                    .collect();
                acc += sp.integrate(&integrand)[(0, 0)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// Relative gap between the fibre-integral total and `⟨μ_i, μ_j⟩`.
pub fn crosscheck_gap(fam: &Family) -> Result<(f64, FiberWp, Mat)> {
    let fw = wp_via_fiber_integral(fam)?;
    let g = crate::wpgeom::wp_metric(fam, &fam.s0)?;
    let tot = fw.total_matrix();
    let gap = fnorm(&(&tot - &g)) / fnorm(&g).max(1e-12);
    Ok((gap, fw, g))
}
