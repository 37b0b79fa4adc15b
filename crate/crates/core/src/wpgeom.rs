//! Weil–Petersson geometry of a family: the metric `G_{ij̄} = ⟨μ_i, μ_j⟩`,
//! its first derivatives, holomorphic normal coordinates and curvature,
//! each computed both by closed formulas and by finite differences.

use crate::defcomplex::{Backend, Cochain0, Cochain1, Cochain2};
use crate::error::{Error, Result};
use crate::family::{holo_deriv, mixed_deriv, Family, Poly};
use crate::grid::ops;
use crate::linalg::{c, eigh, herm_fn, inverse, random_matrix, zeros, Mat, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Dense complex tensor in row-major order; complex entries serialize as `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<C64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![C64::new(0.0, 0.0); shape.iter().product()] }
    }

    fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: C64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect() }
    }

    pub fn from_mat(m: &Mat) -> Self {
        let (r, cc) = m.shape();
        Self { shape: vec![r, cc], data: (0..r).flat_map(|i| (0..cc).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect() }
    }

    /// All index tuples in row-major order.
    pub fn indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for &n in &self.shape {
            out = out.into_iter().flat_map(|p| (0..n).map(move |i| [p.clone(), vec![i]].concat())).collect();
        }
        out
    }

    /// One row per multi-index: `indices…, re, im`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let names: Vec<String> = (0..self.shape.len()).map(|i| format!("i{i}")).collect();
        s.push_str(&names.join(","));
        s.push_str(",re,im\n");
        for idx in self.indices() {
            let z = self.get(&idx);
            let cols: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
            s.push_str(&format!("{},{:e},{:e}\n", cols.join(","), z.re, z.im));
        }
        s
    }
}

/// Relative gap `‖a − b‖ / (‖b‖ + 1e-12)`.
pub fn rel_gap(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).norm() / (b.norm() + 1e-12)
}

/// Harmonic representatives at `s`, one per parameter direction.
pub fn ks_all(fam: &Family, s: &[C64]) -> Result<Vec<Cochain1>> {
    (0..fam.k()).map(|i| fam.ks(s, i)).collect()
}

fn gram(fam: &Family, s: &[C64], mus: &[Cochain1]) -> Result<Mat> {
    let ctx = fam.context(s)?;
    let k = mus.len();
    Ok(Mat::from_fn(k, k, |i, j| ctx.inner(&mus[i], &mus[j])))
}

/// `G_{ij̄} = ⟨μ_i, μ_j⟩` with the projected representatives.
pub fn wp_metric(fam: &Family, s: &[C64]) -> Result<Mat> {
    gram(fam, s, &ks_all(fam, s)?)
}

/// Same Gram matrix built from `(−φ_{;i}, √n R_{iz̄})` with the stencil connection.
pub fn wp_metric_formula(fam: &Family, s: &[C64]) -> Result<Mat> {
    let mus: Vec<Cochain1> = (0..fam.k()).map(|i| fam.ks_formula(s, i)).collect::<Result<_>>()?;
    gram(fam, s, &mus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WpDerivative {
    /// `∂_k G_{ij̄} = ⟨μ_{i;k}, μ_j⟩`, indexed `[i, j, k]`.
    pub formula: Tensor,
    /// Central differences of `wp_metric`, indexed `[i, j, k]`.
    pub fd: Tensor,
    pub rel_gap: f64,
}

/// Relative formula-vs-FD gap above which the derivative is flagged.
pub const DERIVATIVE_FLAG: f64 = 1e-4;

pub fn wp_derivative(fam: &Family, s: &[C64]) -> Result<WpDerivative> {
    let k = fam.k();
    let ctx = fam.context(s)?;
    let mus = ks_all(fam, s)?;
    let mut formula = Tensor::zeros(&[k, k, k]);
    let mut fd = Tensor::zeros(&[k, k, k]);
    let st = fam.stencil;
    for kk in 0..k {
        let d = holo_deriv(&|x: &[C64]| wp_metric(fam, x), s, kk, st.step, st.levels)?;
        for i in 0..k {
            let cov = fam.ks_cov(s, i, kk)?;
            for j in 0..k {
                formula.set(&[i, j, kk], ctx.inner(&cov, &mus[j]));
                fd.set(&[i, j, kk], d[(i, j)]);
            }
        }
    }
    let rel_gap = if fd.norm() < 1e-10 && formula.norm() < 1e-10 { formula.sub(&fd).norm() } else { rel_gap(&formula, &fd) };
    Ok(WpDerivative { formula, fd, rel_gap })
}

/// Coordinate change `s = s₀ + A t + ½ Q(t, t)` to normal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub s0: Vec<C64>,
    pub a: Mat,
    /// `Q^i` as symmetric `k×k` matrices.
    pub q: Vec<Mat>,
}

/// Holomorphic normal coordinates centred at the family's base point: the
/// metric becomes the identity and its first derivatives vanish there.
pub fn normal_coordinates(fam: &Family) -> Result<(Family, NormalMap)> {
    let s0 = fam.s0.clone();
    let k = fam.k();
    let g = wp_metric(fam, &s0)?;
    let (vals, _) = eigh(&g);
    if vals.first().is_none_or(|&l| l <= 1e-12 * vals.last().copied().unwrap_or(1.0).abs().max(1e-300)) {
        return Err(Error::Singular("Weil–Petersson metric is not positive definite at the base point".into()));
    }
    let a = herm_fn(&g, |l| 1.0 / l.sqrt()).transpose();
    let dg = wp_derivative(fam, &s0)?.formula;
    let abar = a.map(|z| z.conj());
    let gab_inv = inverse(&(&g * &abar))?;
    // Γ_{ac,b} = −Σ A^i_a A^k_c ∂_kG_{ij̄} Ā^j_b
    let mut gamma = vec![zeros(k, k); k];
    for (b, gb) in gamma.iter_mut().enumerate() {
        for aa in 0..k {
            for cc in 0..k {
                let mut sum = C64::new(0.0, 0.0);
                for i in 0..k {
                    for kk in 0..k {
                        for j in 0..k {
                            sum += a[(i, aa)] * a[(kk, cc)] * dg.get(&[i, j, kk]) * abar[(j, b)];
                        }
                    }
                }
                gb[(aa, cc)] = -sum;
            }
        }
    }
    for gb in gamma.iter_mut() {
        *gb = (gb.clone() + gb.transpose()) * c(0.5, 0.0);
    }
    let q: Vec<Mat> = (0..k)
        .map(|i| {
            let mut m = zeros(k, k);
            for (b, gb) in gamma.iter().enumerate() {
                m += gb * gab_inv[(b, i)];
            }
            m
        })
        .collect();
    let subs = Poly::quadratic_map(&s0, &a, &q);
    let t0 = vec![C64::new(0.0, 0.0); k];
    let nf = fam.reparameterize(&subs, &t0)?;
    Ok((nf, NormalMap { s0, a, q }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTf {
    /// `R_{ij̄kl̄}` indexed `[i, j, k, l]`.
    pub total: Tensor,
    /// `−⟨G[μ_i∧μ_k], [μ_j∧μ_l]⟩`.
    pub wedge: Tensor,
    /// `⟨G(μ_i∨μ_j), μ_l∨μ_k⟩`.
    pub vee_ij: Tensor,
    /// `⟨G(μ_k∨μ_j), μ_l∨μ_i⟩`.
    pub vee_kj: Tensor,
    /// Smallest eigenvalue of the pair matrix `⟨G ν_ab, ν_cd⟩`, relative to its largest.
    pub vee_min_eig: f64,
    pub gap_warning: bool,
}

/// `ν_ab = (μ_a ∨ μ_b)/√n` per vertex.
fn nu(fam: &Family, ctx: &crate::defcomplex::ComplexContext, u: &Cochain1, v: &Cochain1) -> Cochain0 {
    let mut x = ctx.vee(u, v);
    for (l, f) in x.xi.iter_mut().enumerate() {
        *f = ops::scale(f, c(1.0 / fam.quiver.weight(l).sqrt(), 0.0));
    }
    x
}

/// Curvature by the Green's-operator formula, at the family's base point.
pub fn curvature_tf(fam: &Family) -> Result<CurvatureTf> {
    let s = fam.s0.clone();
    let k = fam.k();
    let ctx = fam.context(&s)?;
    let mus = ks_all(fam, &s)?;
    let mut nus = vec![vec![ctx.zero0(); k]; k];
    let mut gnus = vec![vec![ctx.zero0(); k]; k];
    for a in 0..k {
        for b in 0..k {
            nus[a][b] = nu(fam, &ctx, &mus[a], &mus[b]);
            gnus[a][b] = ctx.greens(&nus[a][b])?;
        }
    }
    let mut ws: Vec<Vec<Cochain2>> = vec![vec![ctx.zero2(); k]; k];
    let mut gws = ws.clone();
    if !ctx.backend.is_point() {
        for a in 0..k {
            for b in 0..k {
                ws[a][b] = ctx.sym_wedge(&mus[a], &mus[b]);
                gws[a][b] = ctx.greens(&ws[a][b])?;
            }
        }
    }
    let shape = [k, k, k, k];
    let (mut wedge, mut v1, mut v2) = (Tensor::zeros(&shape), Tensor::zeros(&shape), Tensor::zeros(&shape));
    for i in 0..k {
        for j in 0..k {
            for kk in 0..k {
                for l in 0..k {
                    let idx = [i, j, kk, l];
                    if !ctx.backend.is_point() {
                        wedge.set(&idx, -ctx.inner(&gws[i][kk], &ws[j][l]));
                    }
                    v1.set(&idx, ctx.inner(&gnus[i][j], &nus[l][kk]));
                    v2.set(&idx, ctx.inner(&gnus[kk][j], &nus[l][i]));
                }
            }
        }
    }
    let pairs = k * k;
    let p = Mat::from_fn(pairs, pairs, |r, cc| ctx.inner(&gnus[r / k][r % k], &nus[cc / k][cc % k]));
    let (vals, _) = eigh(&p);
    let vmax = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let vee_min_eig = if vmax > 0.0 { vals[0] / vmax } else { 0.0 };
    let gap_warning = ctx.gap_warning(0) || (!ctx.backend.is_point() && ctx.gap_warning(2));
    let total = wedge.add(&v1).add(&v2);
    Ok(CurvatureTf { total, wedge, vee_ij: v1, vee_kj: v2, vee_min_eig, gap_warning })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureFd {
    pub total: Tensor,
    /// `G^{pq̄}∂_kG_{iq̄}∂_l̄G_{pj̄}` (vanishes at normal-coordinate centres).
    pub first_order_term: f64,
    /// Difference to the estimate with one Richardson level fewer.
    pub truncation_estimate: f64,
    pub noisy: bool,
}

/// `R_{ij̄kl̄} = −∂_k∂_l̄G_{ij̄} + G^{pq̄}∂_kG_{iq̄}∂_l̄G_{pj̄}` by finite differences of `wp_metric`.
pub fn curvature_fd(fam: &Family) -> Result<CurvatureFd> {
    let s = fam.s0.clone();
    let k = fam.k();
    let st = fam.stencil;
    let g = wp_metric(fam, &s)?;
    let gi = inverse(&g)?;
    let f = |x: &[C64]| wp_metric(fam, x);
    let dg: Vec<Mat> = (0..k).map(|kk| holo_deriv(&f, &s, kk, st.step, st.levels)).collect::<Result<_>>()?;
    let shape = [k, k, k, k];
    let mut total = Tensor::zeros(&shape);
    let mut coarse = Tensor::zeros(&shape);
    let mut corr = 0.0f64;
    for kk in 0..k {
        for l in 0..k {
            let h = mixed_deriv(&f, &s, kk, l, st.second_step, st.second_levels)?;
            let h1 = mixed_deriv(&f, &s, kk, l, st.second_step, st.second_levels.saturating_sub(1))?;
            // ∂_l̄ G_{pj̄} = conj(∂_l G_{jp̄})
            let dbar_l = dg[l].adjoint();
            let t = Mat::from_fn(k, k, |i, j| {
                let mut z = C64::new(0.0, 0.0);
                for p in 0..k {
                    for q in 0..k {
                        z += gi[(q, p)] * dg[kk][(i, q)] * dbar_l[(p, j)];
                    }
                }
                z
            });
            for i in 0..k {
                for j in 0..k {
                    total.set(&[i, j, kk, l], -h[(i, j)] + t[(i, j)]);
                    coarse.set(&[i, j, kk, l], -h1[(i, j)] + t[(i, j)]);
                    corr = corr.max(t[(i, j)].norm());
                }
            }
        }
    }
    let truncation_estimate = total.sub(&coarse).norm();
    let noisy = truncation_estimate > 1e-4 * (total.norm() + 1e-12);
    Ok(CurvatureFd { total, first_order_term: corr, truncation_estimate, noisy })
}

/// Largest deviation from `R_{ij̄kl̄} = R_{kj̄il̄} = R_{il̄kj̄}` and from
/// `conj R_{ij̄kl̄} = R_{ji̅lk̅}`, relative to the tensor norm.
pub fn kahler_symmetry_residual(r: &Tensor) -> f64 {
    let k = r.shape[0];
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            for kk in 0..k {
                for l in 0..k {
                    let v = r.get(&[i, j, kk, l]);
                    worst = worst
                        .max((v - r.get(&[kk, j, i, l])).norm())
                        .max((v - r.get(&[i, l, kk, j])).norm())
                        .max((v.conj() - r.get(&[j, i, l, kk])).norm());
                }
            }
        }
    }
    worst / (r.norm() + 1e-12)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KahlerReport {
    /// `max |∂_kG_{ij̄} − ∂_iG_{kj̄}|`.
    pub max_asymmetry: f64,
    pub relative: f64,
}

/// Closedness of the Weil–Petersson form through the symmetry of its first derivatives.
pub fn kahler_check(fam: &Family) -> Result<KahlerReport> {
    let s = fam.s0.clone();
    let k = fam.k();
    let st = fam.stencil;
    let dg: Vec<Mat> = (0..k).map(|kk| holo_deriv(&|x: &[C64]| wp_metric(fam, x), &s, kk, st.step, st.levels)).collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            for kk in 0..k {
                worst = worst.max((dg[kk][(i, j)] - dg[i][(kk, j)]).norm());
                scale = scale.max(dg[kk][(i, j)].norm());
            }
        }
    }
    Ok(KahlerReport { max_asymmetry: worst, relative: if scale > 0.0 { worst / scale } else { worst } })
}

/// Residuals of the structural identities for the Kodaira–Spencer representatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// `max_i ‖(d⁰)*μ_i‖`.
    pub harmonic_d0: f64,
    /// `max_i ‖d¹μ_i‖`.
    pub harmonic_d1: f64,
    /// Projection route vs connection route for `μ_i`.
    pub ks_routes: f64,
    /// `‖μ_{i;j̄} − d⁰(√n R_{ij̄})‖`.
    pub mu_dbar: f64,
    /// `‖μ_{i;k} − μ_{k;i}‖`.
    pub mu_symmetry: f64,
    /// `‖(d⁰)*μ_{i;k}‖`.
    pub d0_adj_mu_cov: f64,
    /// `‖d¹μ_{i;k} + [μ_i∧μ_k]‖`.
    pub wedge: f64,
    /// Closed form of `□⁰` against the composed operator on a random section.
    pub laplacian_closed_form: f64,
    /// `‖□⁰(√n R_{ij̄}) − (μ_i∨μ_j)/√n‖`.
    pub box_r: f64,
    /// Largest norm among the compared quantities (scale reference).
    pub scale: f64,
}

impl LemmaReport {
    pub fn max(&self) -> f64 {
        [self.harmonic_d0, self.harmonic_d1, self.ks_routes, self.mu_dbar, self.mu_symmetry, self.d0_adj_mu_cov, self.wedge, self.laplacian_closed_form, self.box_r]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

pub fn lemma_suite(fam: &Family, seed: u64) -> Result<LemmaReport> {
    let s = fam.s0.clone();
    let k = fam.k();
    let ctx = fam.context(&s)?;
    let mus = ks_all(fam, &s)?;
    let mut r = LemmaReport {
        harmonic_d0: 0.0,
        harmonic_d1: 0.0,
        ks_routes: 0.0,
        mu_dbar: 0.0,
        mu_symmetry: 0.0,
        d0_adj_mu_cov: 0.0,
        wedge: 0.0,
        laplacian_closed_form: 0.0,
        box_r: 0.0,
        scale: 0.0,
    };
    let mut covs = vec![vec![ctx.zero1(); k]; k];
    for i in 0..k {
        r.scale = r.scale.max(ctx.norm(&mus[i]));
        r.harmonic_d0 = r.harmonic_d0.max(ctx.norm(&ctx.d0_adj(&mus[i])));
        r.harmonic_d1 = r.harmonic_d1.max(ctx.norm(&ctx.d1(&mus[i])));
        r.ks_routes = r.ks_routes.max(ctx.norm(&ctx.sub(&mus[i], &fam.ks_formula(&s, i)?)));
        for kk in 0..k {
            covs[i][kk] = fam.ks_cov(&s, i, kk)?;
        }
    }
    let sqrt_n = |rr: Vec<crate::grid::Field>| Cochain0 {
        xi: rr.iter().enumerate().map(|(v, f)| ops::scale(f, c(fam.quiver.weight(v).sqrt(), 0.0))).collect(),
    };
    for i in 0..k {
        for j in 0..k {
            let rij = sqrt_n(fam.mixed_curvature(&s, i, j)?);
            let lhs = fam.ks_dbar(&s, i, j)?;
            r.mu_dbar = r.mu_dbar.max(ctx.norm(&ctx.sub(&lhs, &ctx.d0(&rij))));
            let boxr = ctx.laplacian0(&rij);
            let v = nu(fam, &ctx, &mus[i], &mus[j]);
            r.box_r = r.box_r.max(ctx.norm(&ctx.sub(&boxr, &v)));
            r.scale = r.scale.max(ctx.norm(&boxr));
        }
        for kk in 0..k {
            r.mu_symmetry = r.mu_symmetry.max(ctx.norm(&ctx.sub(&covs[i][kk], &covs[kk][i])));
            r.d0_adj_mu_cov = r.d0_adj_mu_cov.max(ctx.norm(&ctx.d0_adj(&covs[i][kk])));
            let w = ctx.add(&ctx.d1(&covs[i][kk]), &ctx.sym_wedge(&mus[i], &mus[kk]));
            r.wedge = r.wedge.max(ctx.norm(&w));
            r.scale = r.scale.max(ctx.norm(&covs[i][kk]));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = ctx.coord_dim(0);
    let v = random_matrix(&mut rng, dim, 1);
    let xi: Cochain0 = ctx.from_coords(&crate::defcomplex::Vector::from_iterator(dim, v.iter().copied()));
    let xi = match &ctx.backend {
        // A smooth section keeps the comparison free of grid-scale amplification.
        Backend::Torus(sp) => Cochain0 { xi: xi.xi.iter().map(|f| sp.multiply(f, |m1, m2| if m1.abs() <= 3 && m2.abs() <= 3 { c(1.0, 0.0) } else { c(0.0, 0.0) })).collect() },
        Backend::Point => xi,
    };
    let a = ctx.laplacian0(&xi);
    r.laplacian_closed_form = ctx.norm(&ctx.sub(&a, &ctx.laplacian0_closed(&xi))) / ctx.norm(&a).max(1e-300);
    Ok(r)
}

/// `‖H(μ_{i;k})‖` over all index pairs, the normal-coordinate criterion.
pub fn harmonic_part_of_mu_cov(fam: &Family) -> Result<f64> {
    let s = fam.s0.clone();
    let ctx = fam.context(&s)?;
    let mut worst = 0.0f64;
    for i in 0..fam.k() {
        for kk in 0..fam.k() {
            let h = ctx.harmonic(&fam.ks_cov(&s, i, kk)?)?;
            worst = worst.max(ctx.norm(&h));
        }
    }
    Ok(worst)
}
