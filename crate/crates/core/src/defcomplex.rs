//! The deformation complex `C̃⁰ → C̃¹ → C̃²` of a quiver bundle with its
//! adjoints, Laplacians, Green's operators and the ∧/∨ products.
//!
//! Cochains are stored blockwise as fields (one matrix per collocation
//! point). On the point backend every field has one point and the form
//! components are empty. Level 1 on the point backend is the subspace `A¹`
//! cut out by the linearized relations.

use crate::error::{Error, Result};
use crate::grid::{ops, Field, Spectral};
use crate::linalg::{c, cholesky, eigh, inverse, null_space, random_matrix, rank, zeros, Mat, C64, ZERO};
use crate::quiver::{Path, Quiver, Relation};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cell::OnceCell;

pub type Vector = DVector<C64>;

#[derive(Debug, Clone)]
pub enum Backend {
    Point,
    Torus(Spectral),
}

impl Backend {
    pub fn is_point(&self) -> bool {
        matches!(self, Backend::Point)
    }

    pub fn npts(&self) -> usize {
        match self {
            Backend::Point => 1,
            Backend::Torus(sp) => sp.npts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cochain0 {
    pub xi: Vec<Field>,
}

/// `(χ_a)` Hom-valued functions and `(ζ_λ)` End-valued `dz̄`-coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain1 {
    pub chi: Vec<Field>,
    pub zeta: Vec<Field>,
}

/// Hom-valued `dz̄`-coefficients. On a curve there are no `(0,2)`-forms, so
/// the vertex part of this level vanishes identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochain2 {
    pub chi2: Vec<Field>,
}

/// Blockwise view shared by the three cochain levels.
pub trait Cochain: Clone {
    const LEVEL: usize;
    fn blocks(&self) -> Vec<&Field>;
    fn from_blocks(blocks: Vec<Field>, n_arrows: usize) -> Self;

    fn map2(&self, other: &Self, n_arrows: usize, f: impl Fn(&Mat, &Mat) -> Mat) -> Self {
        let b = self
            .blocks()
            .iter()
            .zip(other.blocks())
            .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| f(p, q)).collect())
            .collect();
        Self::from_blocks(b, n_arrows)
    }
}

impl Cochain for Cochain0 {
    const LEVEL: usize = 0;
    fn blocks(&self) -> Vec<&Field> {
        self.xi.iter().collect()
    }
    fn from_blocks(blocks: Vec<Field>, _: usize) -> Self {
        Self { xi: blocks }
    }
}

impl Cochain for Cochain1 {
    const LEVEL: usize = 1;
    fn blocks(&self) -> Vec<&Field> {
        self.chi.iter().chain(self.zeta.iter()).collect()
    }
    fn from_blocks(mut blocks: Vec<Field>, n_arrows: usize) -> Self {
        let zeta = blocks.split_off(n_arrows);
        Self { chi: blocks, zeta }
    }
}

impl Cochain for Cochain2 {
    const LEVEL: usize = 2;
    fn blocks(&self) -> Vec<&Field> {
        self.chi2.iter().collect()
    }
    fn from_blocks(blocks: Vec<Field>, _: usize) -> Self {
        Self { chi2: blocks }
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    head: usize,
    tail: usize,
    form: bool,
}

/// Eigendecomposition of a Laplacian in orthonormal coordinates.
#[derive(Debug, Clone)]
pub struct DenseSpectrum {
    pub eigenvalues: Vec<f64>,
    vectors: Mat,
    /// Columns spanning the level's admissible subspace.
    basis: Option<Mat>,
    pub kernel_dim: usize,
    pub gap_warning: bool,
}

/// Kernel basis found by shift-invert subspace iteration.
#[derive(Debug, Clone)]
struct KernelBasis {
    vectors: Vec<Vector>,
    ritz: Vec<f64>,
}

/// Default relative threshold for numerical kernels.
pub const KERNEL_TOL: f64 = 1e-8;
/// Default switch-over dimension between dense and iterative Green's operators.
pub const DENSE_LIMIT: usize = 1500;

pub struct ComplexContext {
    pub quiver: Quiver,
    pub relations: Vec<Relation>,
    pub dims: Vec<usize>,
    /// `φ_a` per arrow.
    pub phi: Vec<Field>,
    /// `α_λ` per vertex (torus only; empty fields on the point backend).
    pub alpha: Vec<Field>,
    /// Solved metrics `h_λ` per vertex.
    pub metrics: Vec<Field>,
    pub backend: Backend,
    pub kernel_tol: f64,
    pub cg_tol: f64,
    /// Above this coordinate dimension, Green's operators use iterative solves.
    pub dense_limit: usize,
    sqrt_n: Vec<f64>,
    hinv: Vec<Field>,
    chol: Vec<Field>,
    chol_inv: Vec<Field>,
    phi_adj: Vec<Field>,
    alpha_adj: Vec<Field>,
    a1: Option<Mat>,
    dense: [OnceCell<DenseSpectrum>; 3],
    kernels: [OnceCell<KernelBasis>; 3],
}

impl std::fmt::Debug for ComplexContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ComplexContext").field("dims", &self.dims).field("backend", &self.backend).finish()
    }
}

fn pointwise_inverse(f: &Field) -> Result<Field> {
    f.iter().map(|m| if m.nrows() == 0 { Ok(m.clone()) } else { inverse(m) }).collect()
}

impl ComplexContext {
    /// Absolute case: a representation with solved metrics.
    pub fn point(
        quiver: &Quiver,
        relations: &[Relation],
        dims: &[usize],
        phi: &[Mat],
        metrics: &[Mat],
    ) -> Result<Self> {
        let phi = phi.iter().map(|m| vec![m.clone()]).collect();
        let metrics = metrics.iter().map(|m| vec![m.clone()]).collect();
        let alpha = dims.iter().map(|_| vec![]).collect();
        Self::build(quiver, relations, dims, phi, alpha, metrics, Backend::Point)
    }

    /// Torus backend: Hom fields `φ_a`, Dolbeault deformations `α_λ`, metrics.
    pub fn torus(
        quiver: &Quiver,
        sp: &Spectral,
        dims: &[usize],
        phi: Vec<Field>,
        alpha: Vec<Field>,
        metrics: Vec<Field>,
    ) -> Result<Self> {
        Self::build(quiver, &[], dims, phi, alpha, metrics, Backend::Torus(sp.clone()))
    }

    fn build(
        quiver: &Quiver,
        relations: &[Relation],
        dims: &[usize],
        phi: Vec<Field>,
        alpha: Vec<Field>,
        metrics: Vec<Field>,
        backend: Backend,
    ) -> Result<Self> {
        let nv = quiver.n_vertices();
        if dims.len() != nv || metrics.len() != nv || alpha.len() != nv || phi.len() != quiver.n_arrows() {
            return Err(Error::ShapeMismatch("context data does not match the quiver".into()));
        }
        if !relations.is_empty() && !backend.is_point() {
            return Err(Error::Unsupported("relations are only supported on the point backend".into()));
        }
        let npts = backend.npts();
        for (v, h) in metrics.iter().enumerate() {
            if h.len() != npts || h.iter().any(|m| m.shape() != (dims[v], dims[v])) {
                return Err(Error::MissingMetric(quiver.vertices()[v].id.clone()));
            }
        }
        for (a, f) in phi.iter().enumerate() {
            let (hd, tl) = (quiver.head(a), quiver.tail(a));
            if f.len() != npts || f.iter().any(|m| m.shape() != (dims[hd], dims[tl])) {
                return Err(Error::ShapeMismatch(format!("arrow `{}`", quiver.arrows()[a].id)));
            }
        }
        let mut chol = Vec::with_capacity(nv);
        let mut chol_inv = Vec::with_capacity(nv);
        for (v, h) in metrics.iter().enumerate() {
            let id = &quiver.vertices()[v].id;
            let l: Field = h.iter().map(|m| cholesky(m).ok_or_else(|| Error::NotPositiveDefinite(id.clone()))).collect::<Result<_>>()?;
            chol_inv.push(pointwise_inverse(&l)?);
            chol.push(l);
        }
        let hinv: Vec<Field> = metrics.iter().map(pointwise_inverse).collect::<Result<_>>()?;
        let phi_adj = phi
            .iter()
            .enumerate()
            .map(|(a, f)| {
                let (hd, tl) = (quiver.head(a), quiver.tail(a));
                (0..npts).map(|p| &hinv[tl][p] * f[p].adjoint() * &metrics[hd][p]).collect()
            })
            .collect();
        let alpha_adj = alpha
            .iter()
            .enumerate()
            .map(|(v, f)| f.iter().enumerate().map(|(p, m)| &hinv[v][p] * m.adjoint() * &metrics[v][p]).collect())
            .collect();
        let sqrt_n = (0..nv).map(|v| quiver.weight(v).sqrt()).collect();
        let mut ctx = Self {
            quiver: quiver.clone(),
            relations: relations.to_vec(),
            dims: dims.to_vec(),
            phi,
            alpha,
            metrics,
            backend,
            kernel_tol: KERNEL_TOL,
            cg_tol: 1e-13,
            dense_limit: DENSE_LIMIT,
            sqrt_n,
            hinv,
            chol,
            chol_inv,
            phi_adj,
            alpha_adj,
            a1: None,
            dense: Default::default(),
            kernels: Default::default(),
        };
        if !ctx.relations.is_empty() {
            ctx.a1 = Some(ctx.a1_basis()?);
        }
        Ok(ctx)
    }

    pub fn npts(&self) -> usize {
        self.backend.npts()
    }

    fn n_arrows(&self) -> usize {
        self.quiver.n_arrows()
    }

    /// Metric coefficient `g` (1 on the point backend).
    pub fn g(&self) -> f64 {
        match &self.backend {
            Backend::Point => 1.0,
            Backend::Torus(sp) => sp.geom.g(),
        }
    }

    fn quad(&self) -> f64 {
        match &self.backend {
            Backend::Point => 1.0,
            Backend::Torus(sp) => sp.weight(),
        }
    }

    fn form_pts(&self) -> usize {
        if self.backend.is_point() {
            0
        } else {
            self.npts()
        }
    }

    fn layout(&self, level: usize) -> Vec<Block> {
        let q = &self.quiver;
        let arrows = |form| (0..q.n_arrows()).map(move |a| Block { head: q.head(a), tail: q.tail(a), form });
        let verts = |form| (0..q.n_vertices()).map(move |v| Block { head: v, tail: v, form });
        match level {
            0 => verts(false).collect(),
            1 => arrows(false).chain(verts(true)).collect(),
            _ => arrows(true).collect(),
        }
    }

    fn block_pts(&self, b: &Block) -> usize {
        if b.form {
            self.form_pts()
        } else {
            self.npts()
        }
    }

    fn block_weight(&self, b: &Block) -> f64 {
        self.quad() * if b.form { 1.0 / self.g() } else { 1.0 }
    }

    // ---- zero cochains -------------------------------------------------

    fn zero_blocks(&self, level: usize) -> Vec<Field> {
        self.layout(level)
            .iter()
            .map(|b| ops::zero(self.dims[b.head], self.dims[b.tail], self.block_pts(b)))
            .collect()
    }

    pub fn zero0(&self) -> Cochain0 {
        Cochain0::from_blocks(self.zero_blocks(0), self.n_arrows())
    }

    pub fn zero1(&self) -> Cochain1 {
        Cochain1::from_blocks(self.zero_blocks(1), self.n_arrows())
    }

    pub fn zero2(&self) -> Cochain2 {
        Cochain2::from_blocks(self.zero_blocks(2), self.n_arrows())
    }

    // ---- linear structure ----------------------------------------------

    pub fn add<T: Cochain>(&self, a: &T, b: &T) -> T {
        a.map2(b, self.n_arrows(), |x, y| x + y)
    }

    pub fn sub<T: Cochain>(&self, a: &T, b: &T) -> T {
        a.map2(b, self.n_arrows(), |x, y| x - y)
    }

    pub fn scale<T: Cochain>(&self, a: &T, s: C64) -> T {
        a.map2(a, self.n_arrows(), |x, _| x * s)
    }

    /// Orthonormal coordinates `x̃ = √w · L_h^† x L_t^{-†}`, so that the
    /// metric inner product becomes the Euclidean one.
    pub fn to_coords<T: Cochain>(&self, x: &T) -> Vector {
        let mut out = Vec::new();
        for (b, f) in self.layout(T::LEVEL).iter().zip(x.blocks()) {
            let w = self.block_weight(b).sqrt();
            for (p, m) in f.iter().enumerate() {
                let t = self.chol[b.head][p].adjoint() * m * self.chol_inv[b.tail][p].adjoint() * c(w, 0.0);
                out.extend(t.transpose().iter().copied());
            }
        }
        Vector::from_vec(out)
    }

    pub fn from_coords<T: Cochain>(&self, v: &Vector) -> T {
        let mut k = 0;
        let mut blocks = Vec::new();
        for b in self.layout(T::LEVEL) {
            let (r, cc) = (self.dims[b.head], self.dims[b.tail]);
            let w = self.block_weight(&b).sqrt();
            let mut f = Vec::with_capacity(self.block_pts(&b));
            for p in 0..self.block_pts(&b) {
                let t = Mat::from_row_slice(r, cc, &v.as_slice()[k..k + r * cc]);
                k += r * cc;
                f.push(self.chol_inv[b.head][p].adjoint() * t * self.chol[b.tail][p].adjoint() * c(1.0 / w, 0.0));
            }
            blocks.push(f);
        }
        T::from_blocks(blocks, self.n_arrows())
    }

    pub fn coord_dim(&self, level: usize) -> usize {
        self.layout(level).iter().map(|b| self.block_pts(b) * self.dims[b.head] * self.dims[b.tail]).sum()
    }

    /// `⟨x, y⟩ = ∫ Σ tr(x y*)`, with `g⁻¹` on form components.
    pub fn inner<T: Cochain>(&self, x: &T, y: &T) -> C64 {
        self.to_coords(x).dotc(&self.to_coords(y)).conj()
    }

    pub fn norm<T: Cochain>(&self, x: &T) -> f64 {
        self.to_coords(x).norm()
    }

    /// Metric adjoint of a Hom-valued field from `tail` to `head`.
    pub fn adjoint_field(&self, head: usize, tail: usize, f: &Field) -> Field {
        f.iter().enumerate().map(|(p, m)| &self.hinv[tail][p] * m.adjoint() * &self.metrics[head][p]).collect()
    }

    // ---- Δ and its adjoint ---------------------------------------------

    /// `[ξ, φ]_a = ξ_{ha}φ_a/√n_{ha} − φ_a ξ_{ta}/√n_{ta}` pointwise.
    pub fn delta_fields(&self, xi: &[Field]) -> Vec<Field> {
        (0..self.n_arrows())
            .map(|a| {
                let (h, t) = (self.quiver.head(a), self.quiver.tail(a));
                let (sh, st) = (c(1.0 / self.sqrt_n[h], 0.0), c(1.0 / self.sqrt_n[t], 0.0));
                xi[h].iter().zip(&xi[t]).enumerate().map(|(p, (xh, xt))| xh * &self.phi[a][p] * sh - &self.phi[a][p] * xt * st).collect()
            })
            .collect()
    }

    /// `(1/√n_λ)(Σ_{h(a)=λ} ψ_a φ_a* − Σ_{t(a)=λ} φ_a* ψ_a)`.
    pub fn delta_adj_fields(&self, psi: &[Field], pts: usize) -> Vec<Field> {
        let mut out: Vec<Field> = self.dims.iter().map(|&d| ops::zero(d, d, pts)).collect();
        for a in 0..self.n_arrows() {
            let (h, t) = (self.quiver.head(a), self.quiver.tail(a));
            for p in 0..pts {
                out[h][p] += &psi[a][p] * &self.phi_adj[a][p] * c(1.0 / self.sqrt_n[h], 0.0);
                out[t][p] -= &self.phi_adj[a][p] * &psi[a][p] * c(1.0 / self.sqrt_n[t], 0.0);
            }
        }
        out
    }

    /// Alias matching the operation name: `Δξ` as a level-1 cochain.
    pub fn delta(&self, x: &Cochain0) -> Cochain1 {
        let mut z = self.zero1();
        z.chi = self.delta_fields(&x.xi);
        z
    }

    // ---- Dolbeault operators (torus) -----------------------------------

    fn sp(&self) -> Option<&Spectral> {
        match &self.backend {
            Backend::Torus(sp) => Some(sp),
            Backend::Point => None,
        }
    }

    /// `∂̄χ + α_h χ − χ α_t`.
    pub fn dbar_e(&self, head: usize, tail: usize, f: &Field) -> Field {
        let sp = self.sp().expect("torus backend");
        let d = sp.dbar(f);
        d.iter()
            .enumerate()
            .map(|(p, m)| m + &self.alpha[head][p] * &f[p] - &f[p] * &self.alpha[tail][p])
            .collect()
    }

    /// Formal adjoint of `dbar_e` for the metric inner products:
    /// `g⁻¹(−h_h⁻¹ ∂(h_h v h_t⁻¹) h_t + α_h* v − v α_t*)`.
    pub fn dbar_e_adj(&self, head: usize, tail: usize, v: &Field) -> Field {
        let sp = self.sp().expect("torus backend");
        let inner: Field = v.iter().enumerate().map(|(p, m)| &self.metrics[head][p] * m * &self.hinv[tail][p]).collect();
        let dz = sp.d(&inner);
        let gi = c(1.0 / self.g(), 0.0);
        dz.iter()
            .enumerate()
            .map(|(p, m)| {
                (-(&self.hinv[head][p] * m * &self.metrics[tail][p]) + &self.alpha_adj[head][p] * &v[p] - &v[p] * &self.alpha_adj[tail][p]) * gi
            })
            .collect()
    }

    // ---- the complex ---------------------------------------------------

    pub fn d0(&self, x: &Cochain0) -> Cochain1 {
        let chi = self.delta_fields(&x.xi);
        let zeta = if self.backend.is_point() {
            self.dims.iter().map(|_| vec![]).collect()
        } else {
            (0..self.dims.len()).map(|v| self.dbar_e(v, v, &x.xi[v])).collect()
        };
        Cochain1 { chi, zeta }
    }

    pub fn d1(&self, x: &Cochain1) -> Cochain2 {
        if self.backend.is_point() {
            return self.zero2();
        }
        let dz = self.delta_fields(&x.zeta);
        let chi2 = (0..self.n_arrows())
            .map(|a| {
                let (h, t) = (self.quiver.head(a), self.quiver.tail(a));
                ops::sub(&self.dbar_e(h, t, &x.chi[a]), &dz[a])
            })
            .collect();
        Cochain2 { chi2 }
    }

    pub fn d0_adj(&self, x: &Cochain1) -> Cochain0 {
        let mut xi = self.delta_adj_fields(&x.chi, self.npts());
        if !self.backend.is_point() {
            for (v, f) in xi.iter_mut().enumerate() {
                *f = ops::add(f, &self.dbar_e_adj(v, v, &x.zeta[v]));
            }
        }
        Cochain0 { xi }
    }

    pub fn d1_adj(&self, x: &Cochain2) -> Cochain1 {
        if self.backend.is_point() {
            return self.zero1();
        }
        let chi = (0..self.n_arrows())
            .map(|a| self.dbar_e_adj(self.quiver.head(a), self.quiver.tail(a), &x.chi2[a]))
            .collect();
        let zeta = self.delta_adj_fields(&x.chi2, self.npts()).iter().map(|f| ops::scale(f, c(-1.0, 0.0))).collect();
        Cochain1 { chi, zeta }
    }

    /// `□⁰ = (d⁰)*d⁰`.
    pub fn laplacian0(&self, x: &Cochain0) -> Cochain0 {
        self.d0_adj(&self.d0(x))
    }

    /// `d⁰(d⁰)* + (d¹)*d¹`.
    pub fn hodge1(&self, x: &Cochain1) -> Cochain1 {
        self.add(&self.d0(&self.d0_adj(x)), &self.d1_adj(&self.d1(x)))
    }

    /// `d¹(d¹)*` (there is no level 3 on a curve).
    pub fn laplacian2(&self, x: &Cochain2) -> Cochain2 {
        self.d1(&self.d1_adj(x))
    }

    /// Closed form of `□⁰` with the Dolbeault part `∂̄*∂̄` kept separate.
    pub fn laplacian0_closed(&self, x: &Cochain0) -> Cochain0 {
        let npts = self.npts();
        let mut out: Vec<Field> = self.dims.iter().map(|&d| ops::zero(d, d, npts)).collect();
        let q = &self.quiver;
        for a in 0..q.n_arrows() {
            let (h, t) = (q.head(a), q.tail(a));
            let (nh, nt) = (q.weight(h), q.weight(t));
            for p in 0..npts {
                let (ph, pa) = (&self.phi[a][p], &self.phi_adj[a][p]);
                let (xh, xt) = (&x.xi[h][p], &x.xi[t][p]);
                out[t][p] += pa * ph * xt * c(1.0 / nt, 0.0) - pa * xh * ph * c(1.0 / (nt * nh).sqrt(), 0.0);
                out[h][p] += xh * ph * pa * c(1.0 / nh, 0.0) - ph * xt * pa * c(1.0 / (nh * nt).sqrt(), 0.0);
            }
        }
        if !self.backend.is_point() {
            for v in 0..self.dims.len() {
                let lap = self.dbar_e_adj(v, v, &self.dbar_e(v, v, &x.xi[v]));
                out[v] = ops::add(&out[v], &lap);
            }
        }
        Cochain0 { xi: out }
    }

    // ---- products ------------------------------------------------------

    /// `[(χ, ξ) ∧ (ψ, ζ)]`; the vertex part is a `(0,2)`-form and vanishes on a curve.
    pub fn sym_wedge(&self, u: &Cochain1, v: &Cochain1) -> Cochain2 {
        let mut out = self.zero2();
        if self.backend.is_point() {
            return out;
        }
        for a in 0..self.n_arrows() {
            let (h, t) = (self.quiver.head(a), self.quiver.tail(a));
            let (sh, st) = (c(1.0 / self.sqrt_n[h], 0.0), c(1.0 / self.sqrt_n[t], 0.0));
            out.chi2[a] = (0..self.npts())
                .map(|p| {
                    let (chi, xi_h, xi_t) = (&u.chi[a][p], &u.zeta[h][p], &u.zeta[t][p]);
                    let (psi, ze_h, ze_t) = (&v.chi[a][p], &v.zeta[h][p], &v.zeta[t][p]);
                    (xi_h * psi + ze_h * chi) * sh - (psi * xi_t + chi * ze_t) * st
                })
                .collect();
        }
        out
    }

    /// The hermitian pairing `(u ∨ v)_λ = Σ_{h⁻¹λ} ψχ* − Σ_{t⁻¹λ} χ*ψ + g⁻¹[ξ, η*]`
    /// for `u = (ψ, ξ)`, `v = (χ, η)`. The sign of the form commutator is
    /// the one for which `□⁰(√n R_{ij̄}) = (μ_i ∨ μ_j)/√n` holds.
    pub fn vee(&self, u: &Cochain1, v: &Cochain1) -> Cochain0 {
        let npts = self.npts();
        let mut out: Vec<Field> = self.dims.iter().map(|&d| ops::zero(d, d, npts)).collect();
        for a in 0..self.n_arrows() {
            let (h, t) = (self.quiver.head(a), self.quiver.tail(a));
            let chi_adj = self.adjoint_field(h, t, &v.chi[a]);
            for p in 0..npts {
                out[h][p] += &u.chi[a][p] * &chi_adj[p];
                out[t][p] -= &chi_adj[p] * &u.chi[a][p];
            }
        }
        if !self.backend.is_point() {
            let gi = c(1.0 / self.g(), 0.0);
            for l in 0..self.dims.len() {
                let eta_adj = self.adjoint_field(l, l, &v.zeta[l]);
                for p in 0..npts {
                    let (x, e) = (&u.zeta[l][p], &eta_adj[p]);
                    out[l][p] += (x * e - e * x) * gi;
                }
            }
        }
        Cochain0 { xi: out }
    }

    // ---- relations -----------------------------------------------------

    /// First-order (Leibniz) expansion of a relation at `φ` in the direction `ψ`.
    pub fn linearize_relation(&self, r: &Relation, psi: &[Field]) -> Result<Field> {
        let (h, t) = r.endpoints(&self.quiver)?;
        let npts = psi.first().map(|f| f.len()).unwrap_or(self.npts());
        let mut out = ops::zero(self.dims[h], self.dims[t], npts);
        for (coef, path) in &r.terms {
            let Path::Arrows(arrows) = path else { continue };
            for p in 0..npts {
                for k in 0..arrows.len() {
                    let pick = |j: usize| if j == k { &psi[arrows[j]][p] } else { &self.phi[arrows[j]][p] };
                    let mut m = pick(0).clone();
                    for j in 1..arrows.len() {
                        m = m * pick(j);
                    }
                    out[p] += m * *coef;
                }
            }
        }
        Ok(out)
    }

    fn a1_basis(&self) -> Result<Mat> {
        let dim = self.coord_dim(1);
        let mut rows: Vec<Vec<C64>> = Vec::new();
        for j in 0..dim {
            let mut e = Vector::zeros(dim);
            e[j] = c(1.0, 0.0);
            let x: Cochain1 = self.from_coords(&e);
            let mut col = Vec::new();
            for r in &self.relations {
                let lin = self.linearize_relation(r, &x.chi)?;
                col.extend(lin[0].iter().copied());
            }
            rows.push(col);
        }
        let m = rows.first().map(|r| r.len()).unwrap_or(0);
        let mat = Mat::from_fn(m, dim, |i, j| rows[j][i]);
        Ok(null_space(&mat, 1e-10))
    }

    /// Orthogonal projection onto `A¹` (identity when there are no relations).
    pub fn project_a1(&self, x: &Cochain1) -> Cochain1 {
        match &self.a1 {
            None => x.clone(),
            Some(n) => {
                let v = self.to_coords(x);
                self.from_coords(&(n * (n.adjoint() * v)))
            }
        }
    }

    pub fn dim_a1(&self) -> usize {
        self.a1.as_ref().map(|n| n.ncols()).unwrap_or(self.coord_dim(1))
    }

    // ---- dense spectra ---------------------------------------------------

    fn apply_level(&self, level: usize, v: &Vector) -> Vector {
        match level {
            0 => self.to_coords(&self.laplacian0(&self.from_coords::<Cochain0>(v))),
            1 => self.to_coords(&self.hodge1(&self.from_coords::<Cochain1>(v))),
            _ => self.to_coords(&self.laplacian2(&self.from_coords::<Cochain2>(v))),
        }
    }

    /// Dense matrix of the level Laplacian in orthonormal coordinates,
    /// restricted to `A¹` at level 1 when relations are present.
    pub fn laplacian_matrix(&self, level: usize) -> Mat {
        let dim = self.coord_dim(level);
        let mut m = zeros(dim, dim);
        for j in 0..dim {
            let mut e = Vector::zeros(dim);
            e[j] = c(1.0, 0.0);
            m.set_column(j, &self.apply_level(level, &e));
        }
        match (&self.a1, level) {
            (Some(n), 1) => n.adjoint() * m * n,
            _ => m,
        }
    }

    /// Dense matrix of `d⁰` from level-0 to level-1 coordinates.
    pub fn d0_matrix(&self) -> Mat {
        let (d0, d1) = (self.coord_dim(0), self.coord_dim(1));
        let mut m = zeros(d1, d0);
        for j in 0..d0 {
            let mut e = Vector::zeros(d0);
            e[j] = c(1.0, 0.0);
            m.set_column(j, &self.to_coords(&self.d0(&self.from_coords::<Cochain0>(&e))));
        }
        m
    }

    pub fn uses_dense(&self, level: usize) -> bool {
        self.backend.is_point() || self.coord_dim(level) <= self.dense_limit
    }

    pub fn dense_spectrum(&self, level: usize) -> &DenseSpectrum {
        self.dense[level].get_or_init(|| {
            let m = self.laplacian_matrix(level);
            let (vals, vecs) = eigh(&m);
            let lmax = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            let thresh = self.kernel_tol * lmax.max(f64::MIN_POSITIVE);
            let kernel_dim = vals.iter().filter(|&&l| l.abs() <= thresh).count();
            let gap_warning = vals.iter().any(|&l| l.abs() > thresh && l.abs() < 10.0 * thresh);
            let basis = if level == 1 { self.a1.clone() } else { None };
            DenseSpectrum { eigenvalues: vals, vectors: vecs, basis, kernel_dim, gap_warning }
        })
    }

    fn dense_apply(&self, level: usize, v: &Vector, green: bool) -> Vector {
        let s = self.dense_spectrum(level);
        let lmax = s.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let thresh = self.kernel_tol * lmax.max(f64::MIN_POSITIVE);
        let w = match &s.basis {
            Some(n) => n.adjoint() * v,
            None => v.clone(),
        };
        let coef = s.vectors.adjoint() * &w;
        let scaled = Vector::from_iterator(
            coef.len(),
            coef.iter().zip(&s.eigenvalues).map(|(x, &l)| {
                let ker = l.abs() <= thresh;
                match (green, ker) {
                    (true, true) | (false, false) => ZERO,
                    (true, false) => x / l,
                    (false, true) => *x,
                }
            }),
        );
        let back = &s.vectors * scaled;
        match &s.basis {
            Some(n) => n * back,
            None => back,
        }
    }

    // ---- iterative solves (large torus grids) ----------------------------

    fn precondition(&self, level: usize, v: &Vector) -> Vector {
        let Some(sp) = self.sp() else { return v.clone() };
        let gi = 1.0 / self.g();
        let mut out = Vec::with_capacity(v.len());
        let mut k = 0;
        for b in self.layout(level) {
            let (r, cc) = (self.dims[b.head], self.dims[b.tail]);
            let pts = self.block_pts(&b);
            let f: Field = (0..pts)
                .map(|_| {
                    let m = Mat::from_row_slice(r, cc, &v.as_slice()[k..k + r * cc]);
                    k += r * cc;
                    m
                })
                .collect();
            if pts == 0 || r * cc == 0 {
                continue;
            }
            let g = sp.multiply(&f, |m1, m2| c(1.0 / (1.0 + gi * sp.dbar_symbol(m1, m2).norm_sqr()), 0.0));
            for m in g {
                out.extend(m.transpose().iter().copied());
            }
        }
        Vector::from_vec(out)
    }

    /// Preconditioned CG for `(L + shift) y = b` in orthonormal coordinates.
    fn pcg(&self, level: usize, b: &Vector, shift: f64) -> Result<Vector> {
        let bn = b.norm();
        let mut x = Vector::zeros(b.len());
        if bn == 0.0 {
            return Ok(x);
        }
        let apply = |v: &Vector| self.apply_level(level, v) + v * c(shift, 0.0);
        let mut r = b.clone();
        let mut z = self.precondition(level, &r);
        let mut p = z.clone();
        let mut rz = r.dotc(&z).re;
        for _ in 0..20_000 {
            let ap = apply(&p);
            let alpha = rz / p.dotc(&ap).re;
            x += &p * c(alpha, 0.0);
            r -= &ap * c(alpha, 0.0);
            if r.norm() <= self.cg_tol * bn {
                return Ok(x);
            }
            z = self.precondition(level, &r);
            let rz_new = r.dotc(&z).re;
            p = &z + &p * c(rz_new / rz, 0.0);
            rz = rz_new;
        }
        Err(Error::Solver(format!("CG did not converge at level {level}")))
    }

    fn kernel_basis(&self, level: usize) -> Result<&KernelBasis> {
        if let Some(k) = self.kernels[level].get() {
            return Ok(k);
        }
        let dim = self.coord_dim(level);
        let blocks: usize = self.layout(level).iter().map(|b| self.dims[b.head] * self.dims[b.tail]).sum();
        let p = (2 * blocks + 4).min(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(level as u64);
        let mut x = random_matrix(&mut rng, dim, p);
        // Largest eigenvalue estimate by power iteration.
        let mut v = Vector::from_fn(dim, |i, _| x[(i, 0)]);
        let mut lmax = 0.0;
        for _ in 0..30 {
            v /= c(v.norm(), 0.0);
            let w = self.apply_level(level, &v);
            lmax = w.norm();
            v = w;
        }
        let shift = 1e-6;
        for _ in 0..3 {
            x = x.qr().q();
            let mut y = zeros(dim, p);
            for j in 0..p {
                let col = Vector::from_iterator(dim, x.column(j).iter().copied());
                y.set_column(j, &self.pcg(level, &col, shift)?);
            }
            x = y;
        }
        let q = x.qr().q();
        let mut lq = zeros(dim, p);
        for j in 0..p {
            let col = Vector::from_iterator(dim, q.column(j).iter().copied());
            lq.set_column(j, &self.apply_level(level, &col));
        }
        let t = q.adjoint() * lq;
        let (vals, vecs) = eigh(&crate::linalg::herm_part(&t));
        let thresh = self.kernel_tol * lmax.max(f64::MIN_POSITIVE);
        let ritz_vecs = q * vecs;
        let mut vectors = Vec::new();
        for (j, &l) in vals.iter().enumerate() {
            if l.abs() <= thresh {
                vectors.push(Vector::from_iterator(dim, ritz_vecs.column(j).iter().copied()));
            }
        }
        let _ = self.kernels[level].set(KernelBasis { vectors, ritz: vals });
        Ok(self.kernels[level].get().unwrap())
    }

    fn iterative_harmonic(&self, level: usize, v: &Vector) -> Result<Vector> {
        let k = self.kernel_basis(level)?;
        let mut out = Vector::zeros(v.len());
        for q in &k.vectors {
            out += q * q.dotc(v);
        }
        Ok(out)
    }

    fn iterative_green(&self, level: usize, v: &Vector) -> Result<Vector> {
        let rhs = v - self.iterative_harmonic(level, v)?;
        let y = self.pcg(level, &rhs, 0.0)?;
        Ok(&y - self.iterative_harmonic(level, &y)?)
    }

    /// Any solution of `L y = b` for `b` in the range of the level Laplacian.
    pub fn solve_in_range<T: Cochain>(&self, b: &T) -> Result<T> {
        let v = self.to_coords(b);
        let y = if self.uses_dense(T::LEVEL) { self.dense_apply(T::LEVEL, &v, true) } else { self.pcg(T::LEVEL, &v, 0.0)? };
        Ok(self.from_coords(&y))
    }

    /// Green's operator: inverse on the orthogonal complement of the kernel, zero on it.
    pub fn greens<T: Cochain>(&self, x: &T) -> Result<T> {
        let v = self.to_coords(x);
        let y = if self.uses_dense(T::LEVEL) { self.dense_apply(T::LEVEL, &v, true) } else { self.iterative_green(T::LEVEL, &v)? };
        Ok(self.from_coords(&y))
    }

    /// Orthogonal projection onto the kernel of the level Laplacian.
    pub fn harmonic<T: Cochain>(&self, x: &T) -> Result<T> {
        let v = self.to_coords(x);
        let y = if self.uses_dense(T::LEVEL) { self.dense_apply(T::LEVEL, &v, false) } else { self.iterative_harmonic(T::LEVEL, &v)? };
        Ok(self.from_coords(&y))
    }

    /// Level Laplacian applied to a cochain of the matching type.
    pub fn laplacian<T: Cochain>(&self, x: &T) -> T {
        self.from_coords(&self.apply_level(T::LEVEL, &self.to_coords(x)))
    }

    /// `x − d⁰G(d⁰)*x − (d¹)*G d¹x`, the harmonic part computed through the
    /// two neighbouring levels (no kernel basis required).
    pub fn harmonic1_via_range(&self, x: &Cochain1) -> Result<Cochain1> {
        let y0 = self.solve_in_range(&self.d0_adj(x))?;
        let mut out = self.sub(x, &self.d0(&y0));
        if !self.backend.is_point() {
            let y2 = self.solve_in_range(&self.d1(x))?;
            out = self.sub(&out, &self.d1_adj(&y2));
        }
        Ok(out)
    }

    pub fn gap_warning(&self, level: usize) -> bool {
        self.uses_dense(level) && self.dense_spectrum(level).gap_warning
    }

    /// Kernel dimension of the level Laplacian.
    pub fn kernel_dim(&self, level: usize) -> Result<usize> {
        if self.uses_dense(level) {
            Ok(self.dense_spectrum(level).kernel_dim)
        } else {
            Ok(self.kernel_basis(level)?.vectors.len())
        }
    }

    /// Ritz values from the iterative kernel search (diagnostic).
    pub fn kernel_ritz_values(&self, level: usize) -> Result<Vec<f64>> {
        Ok(self.kernel_basis(level)?.ritz.clone())
    }

    /// `(h⁰, h¹, h²)`. Exact rank counting on the point backend; kernel
    /// dimensions of the Laplacians on the torus.
    pub fn hyperdims(&self) -> Result<HyperDims> {
        if self.backend.is_point() {
            let dim_b0 = self.coord_dim(0);
            let dim_a1 = self.dim_a1();
            let r = rank(&self.d0_matrix(), 1e-10);
            let h0 = dim_b0 - r;
            let h1 = dim_a1 - r;
            let euler_ok = h0 as i64 - h1 as i64 == dim_b0 as i64 - dim_a1 as i64;
            return Ok(HyperDims { h0, h1, h2: 0, dim_b0, dim_a1, euler_ok, exact: true });
        }
        if !(0..3).all(|l| self.uses_dense(l)) {
            return Err(Error::Unsupported("torus hyperdims needs a grid small enough for dense assembly".into()));
        }
        let (h0, h1, h2) = (self.kernel_dim(0)?, self.kernel_dim(1)?, self.kernel_dim(2)?);
        let (dim_b0, dim_a1) = (self.coord_dim(0), self.coord_dim(1));
        let d2 = self.coord_dim(2) as i64;
        // Index of the finite-dimensional complex equals the alternating sum of dimensions.
        let euler_ok = h0 as i64 - h1 as i64 + h2 as i64 == dim_b0 as i64 - dim_a1 as i64 + d2;
        Ok(HyperDims { h0, h1, h2, dim_b0, dim_a1, euler_ok, exact: false })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HyperDims {
    pub h0: usize,
    pub h1: usize,
    pub h2: usize,
    pub dim_b0: usize,
    pub dim_a1: usize,
    pub euler_ok: bool,
    /// True for exact rank counting (point backend).
    pub exact: bool,
}
