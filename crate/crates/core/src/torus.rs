//! Holomorphic quiver bundles on a flat torus: Chern curvature, the vortex
//! equation with its curvature term, a semi-implicit heat flow, fiber
//! integrals over the torus and Chern character forms.
//!
//! Every bundle is the trivial smooth bundle with Dolbeault operator
//! `∂̄ + α_λ dz̄`; fields are grid values on a [`Spectral`] grid.

use crate::error::{Error, Result};
use crate::grid::{ops, Field, Spectral};
use crate::linalg::{c, cholesky, herm_fn, inverse, trace, Mat};
use crate::quiver::{check_feasibility, Quiver, StabilityParameters};
use crate::vortex::{FlowReport, Verdict};
use serde::{Deserialize, Serialize};

/// Per-vertex Dolbeault deformations and per-arrow morphisms.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleData {
    pub dims: Vec<usize>,
    pub phi: Vec<Field>,
    pub alpha: Vec<Field>,
}

impl BundleData {
    pub fn validate(&self, q: &Quiver, sp: &Spectral) -> Result<()> {
        let n = sp.npts();
        if self.dims.len() != q.n_vertices() || self.alpha.len() != q.n_vertices() || self.phi.len() != q.n_arrows() {
            return Err(Error::ShapeMismatch("bundle data does not match the quiver".into()));
        }
        for (v, a) in self.alpha.iter().enumerate() {
            if a.len() != n || a.iter().any(|m| m.shape() != (self.dims[v], self.dims[v])) {
                return Err(Error::ShapeMismatch(format!("α at vertex `{}`", q.vertices()[v].id)));
            }
        }
        for (a, f) in self.phi.iter().enumerate() {
            let shape = (self.dims[q.head(a)], self.dims[q.tail(a)]);
            if f.len() != n || f.iter().any(|m| m.shape() != shape) {
                return Err(Error::ShapeMismatch(format!("φ on arrow `{}`", q.arrows()[a].id)));
            }
        }
        Ok(())
    }

    /// Sup-norm of `∂̄φ_a + α_{ha}φ_a − φ_a α_{ta}` over arrows and grid points.
    pub fn holomorphy_residual(&self, q: &Quiver, sp: &Spectral) -> f64 {
        (0..q.n_arrows())
            .map(|a| {
                let (h, t) = (q.head(a), q.tail(a));
                let d = sp.dbar(&self.phi[a]);
                d.iter()
                    .enumerate()
                    .map(|(p, m)| crate::linalg::max_abs(&(m + &self.alpha[h][p] * &self.phi[a][p] - &self.phi[a][p] * &self.alpha[t][p])))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// `(1,0)`-part of the Chern connection of `(∂̄ + α, h)`: `h⁻¹∂h − h⁻¹α†h`.
pub fn chern_connection_z(sp: &Spectral, h: &Field, alpha: &Field) -> Result<Field> {
    let dh = sp.d(h);
    h.iter()
        .zip(&dh)
        .zip(alpha)
        .map(|((hp, dp), ap)| {
            let hi = inverse(hp)?;
            Ok(&hi * dp - &hi * ap.adjoint() * hp)
        })
        .collect()
}

/// The `dz∧dz̄` coefficient `F_{zz̄} = ∂α − ∂̄A_z − [α, A_z]` of the Chern curvature.
pub fn curvature_form(sp: &Spectral, h: &Field, alpha: &Field) -> Result<Field> {
    let az = chern_connection_z(sp, h, alpha)?;
    let da = sp.d(alpha);
    let dbar_az = sp.dbar(&az);
    Ok((0..h.len()).map(|p| &da[p] - &dbar_az[p] - (&alpha[p] * &az[p] - &az[p] * &alpha[p])).collect())
}

/// `√-1 ΛF = g⁻¹ F_{zz̄}`.
pub fn lambda_curvature(sp: &Spectral, h: &Field, alpha: &Field) -> Result<Field> {
    Ok(ops::scale(&curvature_form(sp, h, alpha)?, c(1.0 / sp.geom.g(), 0.0)))
}

/// Pointwise `√-1 n_λ ΛF + Σ_{h(a)=λ} φφ* − Σ_{t(a)=λ} φ*φ − τ′_λ I`.
pub fn vortex_residual_torus(
    q: &Quiver,
    sp: &Spectral,
    b: &BundleData,
    metrics: &[Field],
    params: &StabilityParameters,
) -> Result<Vec<Field>> {
    b.validate(q, sp)?;
    if params.tau_prime.len() != q.n_vertices() {
        return Err(Error::ShapeMismatch("τ′ length".into()));
    }
    let npts = sp.npts();
    let hinv: Vec<Field> = metrics.iter().map(|f| f.iter().map(inverse).collect::<Result<_>>()).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(q.n_vertices());
    for v in 0..q.n_vertices() {
        let d = b.dims[v];
        let mut r = if d == 0 {
            ops::zero(0, 0, npts)
        } else {
            ops::scale(&lambda_curvature(sp, &metrics[v], &b.alpha[v])?, c(q.weight(v), 0.0))
        };
        for m in r.iter_mut() {
            for i in 0..d {
                m[(i, i)] -= c(params.tau_prime[v], 0.0);
            }
        }
        out.push(r);
    }
    for a in 0..q.n_arrows() {
        let (h, t) = (q.head(a), q.tail(a));
        for p in 0..npts {
            let phi = &b.phi[a][p];
            let adj = &hinv[t][p] * phi.adjoint() * &metrics[h][p];
            out[h][p] += phi * &adj;
            out[t][p] -= &adj * phi;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusFlowOptions {
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub divergence_bound: f64,
}

impl Default for TorusFlowOptions {
    fn default() -> Self {
        Self { step: 0.5, max_iters: 20_000, tol: 1e-9, divergence_bound: 40.0 }
    }
}

/// `Σ_λ ∫ tr(m_λ²)`.
fn energy(sp: &Spectral, m: &[Field]) -> f64 {
    m.iter().map(|f| f.iter().map(|x| trace(&(x * x)).re).sum::<f64>() * sp.weight()).sum()
}

/// Sup over vertices and grid points of `‖L^† m L^{-†}‖_F`, an upper bound
/// for the pointwise operator norm in the metric.
pub fn residual_sup(metrics: &[Field], m: &[Field]) -> Result<f64> {
    let mut s = 0.0f64;
    for (h, r) in metrics.iter().zip(m) {
        for (hp, rp) in h.iter().zip(r) {
            if hp.nrows() == 0 {
                continue;
            }
            let l = cholesky(hp).ok_or_else(|| Error::NotPositiveDefinite("metric".into()))?;
            let t = l.adjoint() * rp * inverse(&l.adjoint())?;
            s = s.max(crate::linalg::fnorm(&t));
        }
    }
    Ok(s)
}

fn log_det_mean(h: &Field) -> f64 {
    h.iter().map(|m| m.determinant().re.ln()).sum::<f64>() / h.len() as f64
}

/// Rescales each connected component of the support so the grid mean of
/// `log det h` at its first vertex matches `target`.
fn fix_gauge(q: &Quiver, dims: &[usize], targets: &[f64], h: &mut [Field]) {
    let support: Vec<bool> = dims.iter().map(|&d| d > 0).collect();
    for comp in q.components(&support) {
        let v0 = comp[0];
        let s = ((targets[v0] - log_det_mean(&h[v0])) / dims[v0] as f64).exp();
        if s.is_finite() {
            for &v in &comp {
                for m in h[v].iter_mut() {
                    *m *= c(s, 0.0);
                }
            }
        }
    }
}

/// `h · exp(−dt X)` for an `h`-self-adjoint `X`, computed as
/// `L exp(−dt L^† X L^{-†}) L^{-1}·h = L exp(−dt X̃) L^†`.
fn metric_step(h: &Mat, x: &Mat, dt: f64) -> Option<Mat> {
    if h.nrows() == 0 {
        return Some(h.clone());
    }
    let l = cholesky(h)?;
    let lia = inverse(&l.adjoint()).ok()?;
    let xt = crate::linalg::herm_part(&(l.adjoint() * x * lia));
    let e = herm_fn(&xt, |v| (-dt * v).exp());
    Some(crate::linalg::herm_part(&(&l * e * l.adjoint())))
}

fn log_bounds(h0: &[Field], h: &[Field]) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for (a, b) in h0.iter().zip(h) {
        for (ap, bp) in a.iter().zip(b) {
            if ap.nrows() == 0 {
                continue;
            }
            for e in crate::linalg::gen_eigvals(bp, ap)? {
                let l = e.max(f64::MIN_POSITIVE).ln();
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
    }
    Ok((lo, hi))
}

/// Semi-implicit flow `h⁻¹∂h/∂t = −m(h)`: the residual is smoothed by the
/// implicit heat multiplier `1/(1 + dt·n·g⁻¹|σ̄|²)` before the multiplicative
/// update, and the step is halved whenever the energy would increase.
///
/// Smoothing `m` rather than `h·m` keeps the grid mean of `log h` on each
/// summand of a split bundle fixed, so the metric is a smooth function of
/// the data even when the solution is only unique up to automorphisms.
pub fn heat_flow_torus(
    q: &Quiver,
    sp: &Spectral,
    b: &BundleData,
    params: &StabilityParameters,
    opts: &TorusFlowOptions,
    h0: Option<&[Field]>,
) -> Result<(Vec<Field>, FlowReport)> {
    b.validate(q, sp)?;
    let npts = sp.npts();
    let h_init: Vec<Field> = match h0 {
        Some(h) => h.to_vec(),
        None => b.dims.iter().map(|&d| ops::constant(&crate::linalg::eye(d), npts)).collect(),
    };
    for (v, f) in h_init.iter().enumerate() {
        if f.len() != npts || f.iter().any(|m| m.shape() != (b.dims[v], b.dims[v]) || (m.nrows() > 0 && cholesky(m).is_none())) {
            return Err(Error::NotPositiveDefinite(q.vertices()[v].id.clone()));
        }
    }
    let targets: Vec<f64> = h_init.iter().map(|f| if f.first().map_or(0, |m| m.nrows()) == 0 { 0.0 } else { log_det_mean(f) }).collect();
    let mut h = h_init.clone();
    let mut m = vortex_residual_torus(q, sp, b, &h, params)?;
    let mut res = residual_sup(&h, &m)?;
    if !check_feasibility(q, &b.dims, params).feasible {
        return Ok((h, FlowReport { verdict: Verdict::Infeasible, iterations: 0, residual: res, eigen_bounds: (0.0, 0.0), final_step: opts.step }));
    }
    let mut e = energy(sp, &m);
    let mut dt = opts.step;
    let min_step = opts.step * 1e-12;
    let gi = 1.0 / sp.geom.g();
    let mut iters = 0;
    let verdict = loop {
        if res <= opts.tol {
            break Verdict::Converged;
        }
        if iters >= opts.max_iters {
            break Verdict::MaxIters;
        }
        if iters % 25 == 0 {
            let (lo, hi) = log_bounds(&h_init, &h)?;
            if lo.abs().max(hi.abs()) > opts.divergence_bound {
                break Verdict::Diverged;
            }
        }
        let mut accepted = None;
        while dt >= min_step {
            let mut trial = Vec::with_capacity(h.len());
            let mut ok = true;
            for v in 0..h.len() {
                let n = q.weight(v);
                let smooth = if b.dims[v] == 0 { m[v].clone() } else { sp.multiply(&m[v], |m1, m2| c(1.0 / (1.0 + dt * n * gi * sp.dbar_symbol(m1, m2).norm_sqr()), 0.0)) };
                let mut f = Vec::with_capacity(npts);
                for p in 0..npts {
                    // h-self-adjoint part of the smoothed residual
                    let x = match inverse(&h[v][p]) {
                        Ok(hi) => (&smooth[p] + hi * smooth[p].adjoint() * &h[v][p]) * c(0.5, 0.0),
                        Err(_) => {
                            ok = false;
                            break;
                        }
                    };
                    match metric_step(&h[v][p], &x, dt) {
                        Some(x) => f.push(x),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    break;
                }
                trial.push(f);
            }
            if ok {
                fix_gauge(q, &b.dims, &targets, &mut trial);
                let tm = vortex_residual_torus(q, sp, b, &trial, params)?;
                let te = energy(sp, &tm);
                if te.is_finite() && te <= e * (1.0 + 1e-12) + 1e-300 {
                    accepted = Some((trial, tm, te));
                    break;
                }
            }
            dt *= 0.5;
        }
        let Some((nh, nm, ne)) = accepted else {
            break Verdict::MaxIters;
        };
        h = nh;
        m = nm;
        e = ne;
        res = residual_sup(&h, &m)?;
        iters += 1;
        dt = (dt * 1.25).min(opts.step);
    };
    let eigen_bounds = log_bounds(&h_init, &h)?;
    Ok((h, FlowReport { verdict, iterations: iters, residual: res, eigen_bounds, final_step: dt }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGeometry;
    use crate::linalg::{eye, random_matrix, scalar, C64};
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn s(x: f64) -> Mat {
        scalar(c(x, 0.0))
    }

    fn grid(modes: usize) -> Spectral {
        Spectral::new(TorusGeometry::new(c(0.2, 1.3), 3.0, modes).unwrap())
    }

    fn wave(u: f64, v: f64) -> f64 {
        0.3 * (2.0 * PI * u).cos() + 0.2 * (2.0 * PI * (u - v)).sin() - 0.1 * (4.0 * PI * v).cos()
    }

    #[test]
    fn flat_trivial_bundle_has_zero_curvature() {
        let sp = grid(4);
        let h = ops::constant(&eye(2), sp.npts());
        let a = ops::zero(2, 2, sp.npts());
        assert!(ops::sup_norm(&curvature_form(&sp, &h, &a).unwrap()) < 1e-12);
    }

    #[test]
    fn conformal_metric_curvature_is_half_laplacian() {
        let sp = grid(8);
        let u = sp.sample(|x, y| s(wave(x, y)));
        let h: Field = u.iter().map(|m| m.map(|z| z.exp())).collect();
        let lf = lambda_curvature(&sp, &h, &ops::zero(1, 1, sp.npts())).unwrap();
        // Real-coordinate Laplacian: x + iy = u + τv.
        let t = sp.geom.tau;
        let lap = sp.multiply(&u, |m1, m2| {
            let du = c(0.0, 2.0 * PI * m1 as f64);
            let dv = c(0.0, 2.0 * PI * m2 as f64);
            let dx = du;
            let dy = (dv - du * t.re) / t.im;
            dx * dx + dy * dy
        });
        let g = sp.geom.g();
        let expected: Field = lap.iter().map(|m| m * c(-0.5 / (2.0 * g), 0.0)).collect();
        assert!(ops::sup_norm(&ops::sub(&lf, &expected)) < 1e-10);
        assert!(sp.integrate(&lf)[(0, 0)].norm() < 1e-12);
    }

    #[test]
    fn curvature_is_gauge_covariant() {
        let sp = grid(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let g = random_matrix(&mut rng, 2, 2) + eye(2) * c(2.0, 0.0);
        let gi = inverse(&g).unwrap();
        let h = sp.sample(|x, y| Mat::from_fn(2, 2, |i, j| if i == j { c(1.5 + 0.3 * wave(x, y) * (i as f64 + 1.0), 0.0) } else { c(0.1 * (2.0 * PI * x).cos(), 0.0) * if i < j { c(1.0, 0.2) } else { c(1.0, -0.2) } }));
        let alpha = sp.trig(&[(1, 0, random_matrix(&mut rng, 2, 2) * c(0.2, 0.0)), (0, 0, random_matrix(&mut rng, 2, 2) * c(0.1, 0.0))]);
        let f = curvature_form(&sp, &h, &alpha).unwrap();
        let h2: Field = h.iter().map(|m| g.adjoint() * m * &g).collect();
        let a2: Field = alpha.iter().map(|m| &gi * m * &g).collect();
        let f2 = curvature_form(&sp, &h2, &a2).unwrap();
        let conj: Field = f.iter().map(|m| &gi * m * &g).collect();
        assert!(ops::sup_norm(&ops::sub(&f2, &conj)) < 1e-12 * (1.0 + ops::sup_norm(&f)));
    }

    fn kronecker() -> Quiver {
        Quiver::new(&[("1", 1), ("2", 1)], &[("a", "1", "2"), ("b", "1", "2")]).unwrap()
    }

    #[test]
    fn embedded_kronecker_matches_absolute_solution() {
        let sp = grid(3);
        let q = kronecker();
        let n = sp.npts();
        let b = BundleData { dims: vec![1, 1], phi: vec![ops::constant(&s(1.0), n), ops::constant(&s(1.0), n)], alpha: vec![ops::zero(1, 1, n), ops::zero(1, 1, n)] };
        let params = StabilityParameters::new(vec![-1.0, 1.0]);
        let opts = TorusFlowOptions { tol: 1e-11, ..Default::default() };
        let (h, rep) = heat_flow_torus(&q, &sp, &b, &params, &opts, None).unwrap();
        assert_eq!(rep.verdict, Verdict::Converged);
        for p in 0..n {
            assert!(((h[1][p][(0, 0)] / h[0][p][(0, 0)]).re - 0.5).abs() < 1e-10);
        }
        // With constant data the residual is the absolute moment map.
        let hc: Vec<Mat> = vec![s(2.0), s(3.0)];
        let hf: Vec<Field> = hc.iter().map(|m| ops::constant(m, n)).collect();
        let rt = vortex_residual_torus(&q, &sp, &b, &hf, &params).unwrap();
        let rep_abs = crate::quiver::Representation::new(&q, vec![1, 1], vec![s(1.0), s(1.0)]).unwrap();
        let ma = crate::vortex::MetricAssignment::new(&q, &rep_abs, hc).unwrap();
        let ra = crate::vortex::moment_residual(&q, &rep_abs, &ma, &params).unwrap();
        for v in 0..2 {
            assert!(crate::linalg::max_abs(&(&rt[v][7] - &ra[v])) < 1e-12);
        }
    }

    #[test]
    fn line_bundle_flow_relaxes_to_constant_with_mean_preserved() {
        let sp = grid(4);
        let q = Quiver::new(&[("v", 1)], &[] as &[(&str, &str, &str)]).unwrap();
        let n = sp.npts();
        let b = BundleData { dims: vec![1], phi: vec![], alpha: vec![ops::zero(1, 1, n)] };
        let u0 = sp.sample(|x, y| s(wave(x, y) + 0.4));
        let h0: Vec<Field> = vec![u0.iter().map(|m| m.map(|z| z.exp())).collect()];
        let params = StabilityParameters::new(vec![0.0]);
        let (h, rep) = heat_flow_torus(&q, &sp, &b, &params, &TorusFlowOptions { tol: 1e-11, ..Default::default() }, Some(&h0)).unwrap();
        assert_eq!(rep.verdict, Verdict::Converged);
        let logs: Vec<f64> = h[0].iter().map(|m| m[(0, 0)].re.ln()).collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.4).abs() < 1e-10);
        assert!(logs.iter().all(|l| (l - mean).abs() < 1e-9));
    }

    #[test]
    fn infeasible_parameters_are_reported() {
        let sp = grid(2);
        let q = kronecker();
        let n = sp.npts();
        let b = BundleData { dims: vec![1, 1], phi: vec![ops::constant(&s(1.0), n), ops::constant(&s(1.0), n)], alpha: vec![ops::zero(1, 1, n), ops::zero(1, 1, n)] };
        let (_, rep) = heat_flow_torus(&q, &sp, &b, &StabilityParameters::new(vec![1.0, 1.0]), &TorusFlowOptions::default(), None).unwrap();
        assert_eq!(rep.verdict, Verdict::Infeasible);
    }

    #[test]
    fn trace_identity_for_residual() {
        let sp = grid(3);
        let q = kronecker();
        let n = sp.npts();
        let a = sp.trig(&[(1, 0, s(0.3)), (0, 1, scalar(c(0.0, 0.2)))]);
        let b = BundleData { dims: vec![1, 1], phi: vec![ops::constant(&s(1.0), n), ops::constant(&s(0.4), n)], alpha: vec![a.clone(), a] };
        let h: Vec<Field> = vec![sp.sample(|x, y| s((wave(x, y)).exp())), sp.sample(|x, _| s(2.0 + (2.0 * PI * x).sin()))];
        let params = StabilityParameters::new(vec![-0.7, 0.7]);
        let r = vortex_residual_torus(&q, &sp, &b, &h, &params).unwrap();
        let total: C64 = r.iter().map(|f| trace(&sp.mean(f))).sum();
        assert!(total.norm() < 1e-12);
    }
}
