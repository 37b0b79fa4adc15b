//! Holomorphic families of quiver bundles over a polydisc in `ℂ^k`, their
//! solved vortex metrics on finite-difference stencils, and the derived
//! jets (Chern connection and mixed curvature in parameter directions,
//! Kodaira–Spencer representatives).

use crate::defcomplex::{Backend, Cochain1, ComplexContext};
use crate::error::{Error, Result};
use crate::grid::{ops, Field, Spectral};
use crate::linalg::{c, eye, inverse, Mat, C64, ZERO};
use crate::quiver::{relation_residual, Quiver, Relation, Representation, StabilityParameters, RELATION_TOL};
use crate::torus::{heat_flow_torus, BundleData, TorusFlowOptions};
use crate::vortex::{flow_to_vortex, FlowOptions, FlowReport, MetricAssignment, Verdict};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// Values that can serve as polynomial coefficients and finite-difference samples.
pub trait Coef: Clone {
    fn add(&self, o: &Self) -> Self;
    fn scale(&self, z: C64) -> Self;
    fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(c(-1.0, 0.0)))
    }
}

impl Coef for C64 {
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn scale(&self, z: C64) -> Self {
        self * z
    }
}

impl Coef for Mat {
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn scale(&self, z: C64) -> Self {
        self * z
    }
}

impl<T: Coef> Coef for Vec<T> {
    fn add(&self, o: &Self) -> Self {
        self.iter().zip(o).map(|(a, b)| a.add(b)).collect()
    }
    fn scale(&self, z: C64) -> Self {
        self.iter().map(|a| a.scale(z)).collect()
    }
}

impl Coef for Cochain1 {
    fn add(&self, o: &Self) -> Self {
        Cochain1 { chi: self.chi.add(&o.chi), zeta: self.zeta.add(&o.zeta) }
    }
    fn scale(&self, z: C64) -> Self {
        Cochain1 { chi: self.chi.scale(z), zeta: self.zeta.scale(z) }
    }
}

fn monomial(e: &[u32], s: &[C64]) -> C64 {
    e.iter().zip(s).fold(c(1.0, 0.0), |acc, (&k, &x)| acc * x.powu(k))
}

/// Polynomial in `nvars` complex variables with coefficients in `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly<T> {
    pub nvars: usize,
    pub zero: T,
    pub terms: Vec<(Vec<u32>, T)>,
}

impl<T: Coef> Poly<T> {
    pub fn new(nvars: usize, zero: T, terms: Vec<(Vec<u32>, T)>) -> Result<Self> {
        if terms.iter().any(|(e, _)| e.len() != nvars) {
            return Err(Error::ShapeMismatch("monomial exponent length".into()));
        }
        Ok(Self { nvars, zero, terms }.merged())
    }

    pub fn constant(nvars: usize, value: T, zero: T) -> Self {
        Self { nvars, zero, terms: vec![(vec![0; nvars], value)] }
    }

    fn merged(mut self) -> Self {
        let mut out: Vec<(Vec<u32>, T)> = Vec::new();
        for (e, t) in self.terms.drain(..) {
            match out.iter_mut().find(|(f, _)| *f == e) {
                Some((_, acc)) => *acc = acc.add(&t),
                None => out.push((e, t)),
            }
        }
        out.sort_by(|a, b| (a.0.iter().sum::<u32>(), &a.0).cmp(&(b.0.iter().sum::<u32>(), &b.0)));
        self.terms = out;
        self
    }

    pub fn eval(&self, s: &[C64]) -> T {
        self.terms.iter().fold(self.zero.clone(), |acc, (e, t)| acc.add(&t.scale(monomial(e, s))))
    }

    /// `∂/∂s^i`.
    pub fn deriv(&self, i: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| e[i] > 0)
            .map(|(e, t)| {
                let mut f = e.clone();
                f[i] -= 1;
                (f, t.scale(c(e[i] as f64, 0.0)))
            })
            .collect();
        Self { nvars: self.nvars, zero: self.zero.clone(), terms }
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(e, _)| e.iter().sum()).max().unwrap_or(0)
    }

    /// Coefficient of the monomial `e`, if present.
    pub fn coefficient(&self, e: &[u32]) -> Option<&T> {
        self.terms.iter().find(|(f, _)| f == e).map(|(_, t)| t)
    }

    /// `p(s(t))` for scalar polynomials `s_i(t)`.
    pub fn compose(&self, subs: &[Poly<C64>]) -> Self {
        let nv = subs.first().map(|p| p.nvars).unwrap_or(0);
        let mut terms = Vec::new();
        let mut cache: HashMap<(usize, u32), Poly<C64>> = HashMap::new();
        for (e, t) in &self.terms {
            let mut m = Poly::constant(nv, c(1.0, 0.0), ZERO);
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let p = cache.entry((i, k)).or_insert_with(|| subs[i].pow(k)).clone();
                m = m.mul(&p);
            }
            for (f, z) in m.terms {
                terms.push((f, t.scale(z)));
            }
        }
        Self { nvars: nv, zero: self.zero.clone(), terms }.merged()
    }
}

impl Poly<C64> {
    pub fn mul(&self, o: &Self) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * o.terms.len());
        for (e, a) in &self.terms {
            for (f, b) in &o.terms {
                terms.push((e.iter().zip(f).map(|(x, y)| x + y).collect(), a * b));
            }
        }
        Self { nvars: self.nvars, zero: ZERO, terms }.merged()
    }

    pub fn pow(&self, k: u32) -> Self {
        (0..k).fold(Poly::constant(self.nvars, c(1.0, 0.0), ZERO), |acc, _| acc.mul(self))
    }

    /// Affine-plus-quadratic map `s(t) = s₀ + A t + ½ Σ Q^i(t, t)`.
    pub fn quadratic_map(s0: &[C64], a: &Mat, q: &[Mat]) -> Vec<Self> {
        let (k, kk) = a.shape();
        (0..k)
            .map(|i| {
                let mut terms = vec![(vec![0; kk], s0[i])];
                for j in 0..kk {
                    let mut e = vec![0; kk];
                    e[j] = 1;
                    terms.push((e, a[(i, j)]));
                }
                for j in 0..kk {
                    for l in 0..kk {
                        let mut e = vec![0; kk];
                        e[j] += 1;
                        e[l] += 1;
                        terms.push((e, q[i][(j, l)] * c(0.5, 0.0)));
                    }
                }
                Self { nvars: kk, zero: ZERO, terms }.merged()
            })
            .collect()
    }
}

/// All exponent vectors in `nvars` variables with total degree `≤ max`.
fn multi_indices(nvars: usize, max: u32) -> Vec<Vec<u32>> {
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for d in 0..=left {
            cur[i] = d;
            rec(i + 1, left - d, cur, out);
        }
        cur[i] = 0;
    }
    let mut out = Vec::new();
    rec(0, max, &mut vec![0; nvars], &mut out);
    out.sort_by_key(|e| e.iter().sum::<u32>());
    out
}

/// Truncation order of the holomorphic resolution.
pub const RESOLVE_ORDER: u32 = 8;

/// Solves `∂̄φ_a + α_{ha}φ_a − φ_a α_{ta} = 0` order by order in `s`, with the
/// constant Fourier mode of each coefficient prescribed by `phi0`. A
/// right-hand side with nonzero mean is an obstruction and is reported.
pub fn resolve_holomorphic(
    q: &Quiver,
    sp: &Spectral,
    dims: &[usize],
    phi0: &[Poly<Mat>],
    alpha: &[Poly<Field>],
    order: u32,
) -> Result<Vec<Poly<Field>>> {
    let npts = sp.npts();
    let k = phi0.first().map(|p| p.nvars).or(alpha.first().map(|p| p.nvars)).unwrap_or(0);
    for (v, a) in alpha.iter().enumerate() {
        if a.coefficient(&vec![0; k]).is_some_and(|f| ops::sup_norm(f) > 0.0) {
            return Err(Error::Invalid(format!("α at vertex `{}` must vanish at s = 0", q.vertices()[v].id)));
        }
    }
    let idx = multi_indices(k, order);
    let mut out: Vec<Poly<Field>> = Vec::with_capacity(q.n_arrows());
    for a in 0..q.n_arrows() {
        let (h, t) = (q.head(a), q.tail(a));
        let zero = ops::zero(dims[h], dims[t], npts);
        let mut coefs: HashMap<Vec<u32>, Field> = HashMap::new();
        for m in &idx {
            let mut rhs = zero.clone();
            for (e, ah) in alpha[h].terms.iter() {
                if let Some(rest) = sub_index(m, e) {
                    if let Some(p) = coefs.get(&rest) {
                        rhs = ops::sub(&rhs, &ops::mul(ah, p));
                    }
                }
            }
            for (e, at) in alpha[t].terms.iter() {
                if let Some(rest) = sub_index(m, e) {
                    if let Some(p) = coefs.get(&rest) {
                        rhs = ops::add(&rhs, &ops::mul(p, at));
                    }
                }
            }
            let mean = sp.mean(&rhs);
            let scale = 1.0 + ops::sup_norm(&rhs);
            if crate::linalg::max_abs(&mean) > 1e-10 * scale {
                return Err(Error::Obstructed(format!(
                    "arrow `{}` at order {:?}: mean of the holomorphy equation is {:.3e}",
                    q.arrows()[a].id,
                    m,
                    crate::linalg::max_abs(&mean)
                )));
            }
            let mut f = sp.dbar_inverse(&rhs);
            if let Some(p) = phi0[a].coefficient(m) {
                f = ops::add(&f, &ops::constant(p, npts));
            }
            if ops::sup_norm(&f) > 0.0 {
                coefs.insert(m.clone(), f);
            }
        }
        let terms = idx.iter().filter_map(|m| coefs.remove(m).map(|f| (m.clone(), f))).collect();
        out.push(Poly { nvars: k, zero, terms });
    }
    Ok(out)
}

fn sub_index(m: &[u32], e: &[u32]) -> Option<Vec<u32>> {
    m.iter().zip(e).map(|(&x, &y)| x.checked_sub(y)).collect()
}

/// Finite-difference stencil parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StencilOptions {
    /// Step for first derivatives.
    pub step: f64,
    /// Richardson levels for first derivatives.
    pub levels: usize,
    /// Step for second derivatives.
    pub second_step: f64,
    /// Richardson levels for second derivatives.
    pub second_levels: usize,
}

impl Default for StencilOptions {
    fn default() -> Self {
        Self { step: 1e-3, levels: 1, second_step: 1e-2, second_levels: 2 }
    }
}

fn richardson<T: Coef>(mut table: Vec<T>) -> T {
    // table[j] uses step δ/2^j; errors are even in δ.
    let mut factor = 4.0;
    while table.len() > 1 {
        table = table
            .windows(2)
            .map(|w| w[1].add(&w[1].sub(&w[0]).scale(c(1.0 / (factor - 1.0), 0.0))))
            .collect();
        factor *= 4.0;
    }
    table.pop().unwrap()
}

fn offset(s: &[C64], dirs: &[(&[C64], f64)]) -> Vec<C64> {
    let mut out = s.to_vec();
    for (d, t) in dirs {
        for (o, x) in out.iter_mut().zip(d.iter()) {
            *o += x * *t;
        }
    }
    out
}

/// `d/dε f(s + ε u)` at `ε = 0`.
pub fn directional<T: Coef>(f: &dyn Fn(&[C64]) -> Result<T>, s: &[C64], u: &[C64], step: f64, levels: usize) -> Result<T> {
    let mut table = Vec::with_capacity(levels + 1);
    for j in 0..=levels {
        let d = step / 2f64.powi(j as i32);
        let p = f(&offset(s, &[(u, d)]))?;
        let m = f(&offset(s, &[(u, -d)]))?;
        table.push(p.sub(&m).scale(c(0.5 / d, 0.0)));
    }
    Ok(richardson(table))
}

/// `∂²/∂ε∂η f(s + ε u + η v)` at zero.
pub fn directional2<T: Coef>(f: &dyn Fn(&[C64]) -> Result<T>, s: &[C64], u: &[C64], v: &[C64], step: f64, levels: usize) -> Result<T> {
    let mut table = Vec::with_capacity(levels + 1);
    for j in 0..=levels {
        let d = step / 2f64.powi(j as i32);
        let pp = f(&offset(s, &[(u, d), (v, d)]))?;
        let pm = f(&offset(s, &[(u, d), (v, -d)]))?;
        let mp = f(&offset(s, &[(u, -d), (v, d)]))?;
        let mm = f(&offset(s, &[(u, -d), (v, -d)]))?;
        table.push(pp.sub(&pm).sub(&mp).add(&mm).scale(c(0.25 / (d * d), 0.0)));
    }
    Ok(richardson(table))
}

fn unit(k: usize, i: usize, z: C64) -> Vec<C64> {
    let mut e = vec![ZERO; k];
    e[i] = z;
    e
}

/// `∂f/∂s^i = ½(∂_x − √-1 ∂_y)f`.
pub fn holo_deriv<T: Coef>(f: &dyn Fn(&[C64]) -> Result<T>, s: &[C64], i: usize, step: f64, levels: usize) -> Result<T> {
    let dx = directional(f, s, &unit(s.len(), i, c(1.0, 0.0)), step, levels)?;
    let dy = directional(f, s, &unit(s.len(), i, c(0.0, 1.0)), step, levels)?;
    Ok(dx.add(&dy.scale(c(0.0, -1.0))).scale(c(0.5, 0.0)))
}

/// `∂f/∂s̄^i = ½(∂_x + √-1 ∂_y)f`.
pub fn antiholo_deriv<T: Coef>(f: &dyn Fn(&[C64]) -> Result<T>, s: &[C64], i: usize, step: f64, levels: usize) -> Result<T> {
    let dx = directional(f, s, &unit(s.len(), i, c(1.0, 0.0)), step, levels)?;
    let dy = directional(f, s, &unit(s.len(), i, c(0.0, 1.0)), step, levels)?;
    Ok(dx.add(&dy.scale(c(0.0, 1.0))).scale(c(0.5, 0.0)))
}

/// `∂²f/∂s^i∂s̄^j = ¼[(∂_{x_i}∂_{x_j} + ∂_{y_i}∂_{y_j}) + √-1(∂_{x_i}∂_{y_j} − ∂_{y_i}∂_{x_j})]f`.
pub fn mixed_deriv<T: Coef>(f: &dyn Fn(&[C64]) -> Result<T>, s: &[C64], i: usize, j: usize, step: f64, levels: usize) -> Result<T> {
    let k = s.len();
    let (xi, yi) = (unit(k, i, c(1.0, 0.0)), unit(k, i, c(0.0, 1.0)));
    let (xj, yj) = (unit(k, j, c(1.0, 0.0)), unit(k, j, c(0.0, 1.0)));
    let xx = directional2(f, s, &xi, &xj, step, levels)?;
    let yy = directional2(f, s, &yi, &yj, step, levels)?;
    let xy = directional2(f, s, &xi, &yj, step, levels)?;
    let yx = directional2(f, s, &yi, &xj, step, levels)?;
    Ok(xx.add(&yy).add(&xy.sub(&yx).scale(c(0.0, 1.0))).scale(c(0.25, 0.0)))
}

/// Data and metrics at one parameter value.
#[derive(Debug, Clone)]
pub struct Solved {
    pub s: Vec<C64>,
    pub phi: Vec<Field>,
    pub alpha: Vec<Field>,
    pub metrics: Vec<Field>,
    pub report: FlowReport,
}

type Key = Vec<u64>;

fn key(s: &[C64]) -> Key {
    s.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect()
}

/// A holomorphic family `s ↦ (∂̄ + α(s), φ(s))` with cached vortex solves.
pub struct Family {
    pub quiver: Quiver,
    pub relations: Vec<Relation>,
    pub dims: Vec<usize>,
    pub params: StabilityParameters,
    pub s0: Vec<C64>,
    pub phi: Vec<Poly<Field>>,
    pub alpha: Vec<Poly<Field>>,
    pub backend: Backend,
    pub stencil: StencilOptions,
    pub point_flow: FlowOptions,
    pub torus_flow: TorusFlowOptions,
    solved: RefCell<HashMap<Key, Rc<Solved>>>,
    contexts: RefCell<HashMap<Key, Rc<ComplexContext>>>,
    base: RefCell<Option<Vec<Field>>>,
}

impl std::fmt::Debug for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Family").field("dims", &self.dims).field("s0", &self.s0).field("backend", &self.backend).finish()
    }
}

impl Family {
    fn assemble(
        quiver: &Quiver,
        relations: &[Relation],
        dims: &[usize],
        params: &StabilityParameters,
        s0: &[C64],
        phi: Vec<Poly<Field>>,
        alpha: Vec<Poly<Field>>,
        backend: Backend,
    ) -> Result<Self> {
        let k = s0.len();
        if phi.len() != quiver.n_arrows() || alpha.len() != quiver.n_vertices() || dims.len() != quiver.n_vertices() {
            return Err(Error::ShapeMismatch("family data does not match the quiver".into()));
        }
        if phi.iter().chain(&alpha).any(|p| p.nvars != k) {
            return Err(Error::ShapeMismatch("polynomial variable count differs from the base point".into()));
        }
        Ok(Self {
            quiver: quiver.clone(),
            relations: relations.to_vec(),
            dims: dims.to_vec(),
            params: params.clone(),
            s0: s0.to_vec(),
            phi,
            alpha,
            backend,
            stencil: StencilOptions::default(),
            point_flow: FlowOptions { tol: 1e-13, step: 0.1, ..Default::default() },
            torus_flow: TorusFlowOptions { tol: 1e-11, ..Default::default() },
            solved: RefCell::new(HashMap::new()),
            contexts: RefCell::new(HashMap::new()),
            base: RefCell::new(None),
        })
    }

    /// Absolute case: `φ_a(s)` polynomial matrices.
    pub fn point(
        quiver: &Quiver,
        relations: &[Relation],
        dims: &[usize],
        params: &StabilityParameters,
        s0: &[C64],
        phi: &[Poly<Mat>],
    ) -> Result<Self> {
        let lift = |p: &Poly<Mat>| Poly { nvars: p.nvars, zero: vec![p.zero.clone()], terms: p.terms.iter().map(|(e, m)| (e.clone(), vec![m.clone()])).collect() };
        let phi = phi.iter().map(lift).collect();
        let alpha = dims.iter().map(|_| Poly { nvars: s0.len(), zero: vec![], terms: vec![] }).collect();
        Self::assemble(quiver, relations, dims, params, s0, phi, alpha, Backend::Point)
    }

    /// Torus: `α_λ(s)` polynomial fields vanishing at `s = 0`; `φ_a(s)` is
    /// resolved from its prescribed constant modes.
    pub fn torus(
        quiver: &Quiver,
        sp: &Spectral,
        dims: &[usize],
        params: &StabilityParameters,
        s0: &[C64],
        phi0: &[Poly<Mat>],
        alpha: Vec<Poly<Field>>,
    ) -> Result<Self> {
        if alpha.len() != quiver.n_vertices() || phi0.len() != quiver.n_arrows() {
            return Err(Error::ShapeMismatch("family data does not match the quiver".into()));
        }
        let phi = resolve_holomorphic(quiver, sp, dims, phi0, &alpha, RESOLVE_ORDER)?;
        Self::assemble(quiver, &[], dims, params, s0, phi, alpha, Backend::Torus(sp.clone()))
    }

    /// Same data in new coordinates `s = s(t)` given by scalar polynomials.
    pub fn reparameterize(&self, subs: &[Poly<C64>], t0: &[C64]) -> Result<Self> {
        if subs.len() != self.s0.len() {
            return Err(Error::ShapeMismatch("substitution count".into()));
        }
        let phi = self.phi.iter().map(|p| p.compose(subs)).collect();
        let alpha = self.alpha.iter().map(|p| p.compose(subs)).collect();
        let mut f = Self::assemble(&self.quiver, &self.relations, &self.dims, &self.params, t0, phi, alpha, self.backend.clone())?;
        f.stencil = self.stencil;
        f.point_flow = self.point_flow;
        f.torus_flow = self.torus_flow;
        Ok(f)
    }

    pub fn k(&self) -> usize {
        self.s0.len()
    }

    pub fn phi_at(&self, s: &[C64]) -> Vec<Field> {
        self.phi.iter().map(|p| p.eval(s)).collect()
    }

    pub fn alpha_at(&self, s: &[C64]) -> Vec<Field> {
        self.alpha.iter().map(|p| p.eval(s)).collect()
    }

    pub fn dphi_at(&self, s: &[C64], i: usize) -> Vec<Field> {
        self.phi.iter().map(|p| p.deriv(i).eval(s)).collect()
    }

    pub fn dalpha_at(&self, s: &[C64], i: usize) -> Vec<Field> {
        self.alpha.iter().map(|p| p.deriv(i).eval(s)).collect()
    }

    fn identity_metrics(&self) -> Vec<Field> {
        self.dims.iter().map(|&d| ops::constant(&eye(d), self.backend.npts())).collect()
    }

    /// Vortex metrics at `s`. The base point is solved from the identity and
    /// every other point is warm-started from it, so all solutions share
    /// one gauge normalization.
    pub fn solve(&self, s: &[C64]) -> Result<Rc<Solved>> {
        if let Some(x) = self.solved.borrow().get(&key(s)) {
            return Ok(x.clone());
        }
        let start = if s == self.s0.as_slice() {
            self.identity_metrics()
        } else {
            if self.base.borrow().is_none() {
                let b = self.solve(&self.s0.clone())?;
                *self.base.borrow_mut() = Some(b.metrics.clone());
            }
            self.base.borrow().clone().unwrap()
        };
        let phi = self.phi_at(s);
        let alpha = self.alpha_at(s);
        let (metrics, report) = match &self.backend {
            Backend::Point => {
                let maps: Vec<Mat> = phi.iter().map(|f| f[0].clone()).collect();
                let rep = Representation::new(&self.quiver, self.dims.clone(), maps)?;
                if relation_residual(&self.quiver, &rep, &self.relations)? > RELATION_TOL {
                    return Err(Error::Invalid(format!("family violates its relations at s = {s:?}")));
                }
                let h0 = MetricAssignment { metrics: start.iter().map(|f| f[0].clone()).collect() };
                let (h, r) = flow_to_vortex(&self.quiver, &rep, &self.relations, &self.params, &self.point_flow, &h0)?;
                (h.metrics.into_iter().map(|m| vec![m]).collect(), r)
            }
            Backend::Torus(sp) => {
                let b = BundleData { dims: self.dims.clone(), phi: phi.clone(), alpha: alpha.clone() };
                let hol = b.holomorphy_residual(&self.quiver, sp);
                if hol > 1e-8 {
                    return Err(Error::Invalid(format!("holomorphy residual {hol:.3e} at s = {s:?}")));
                }
                heat_flow_torus(&self.quiver, sp, &b, &self.params, &self.torus_flow, Some(&start))?
            }
        };
        if report.verdict != Verdict::Converged {
            return Err(Error::Solver(format!("vortex solve at s = {s:?} ended with {:?} (residual {:.3e})", report.verdict, report.residual)));
        }
        let out = Rc::new(Solved { s: s.to_vec(), phi, alpha, metrics, report });
        self.solved.borrow_mut().insert(key(s), out.clone());
        if s == self.s0.as_slice() {
            *self.base.borrow_mut() = Some(out.metrics.clone());
        }
        Ok(out)
    }

    pub fn metrics_at(&self, s: &[C64]) -> Result<Vec<Field>> {
        Ok(self.solve(s)?.metrics.clone())
    }

    pub fn context(&self, s: &[C64]) -> Result<Rc<ComplexContext>> {
        if let Some(x) = self.contexts.borrow().get(&key(s)) {
            return Ok(x.clone());
        }
        let sol = self.solve(s)?;
        let ctx = match &self.backend {
            Backend::Point => {
                let phi: Vec<Mat> = sol.phi.iter().map(|f| f[0].clone()).collect();
                let h: Vec<Mat> = sol.metrics.iter().map(|f| f[0].clone()).collect();
                ComplexContext::point(&self.quiver, &self.relations, &self.dims, &phi, &h)?
            }
            Backend::Torus(sp) => ComplexContext::torus(&self.quiver, sp, &self.dims, sol.phi.clone(), sol.alpha.clone(), sol.metrics.clone())?,
        };
        let ctx = Rc::new(ctx);
        self.contexts.borrow_mut().insert(key(s), ctx.clone());
        Ok(ctx)
    }

    /// Number of cached vortex solves (diagnostic).
    pub fn solve_count(&self) -> usize {
        self.solved.borrow().len()
    }

    // ---- jets ----------------------------------------------------------

    /// `∂_i h` by Richardson-extrapolated central differences.
    pub fn dmetric(&self, s: &[C64], i: usize) -> Result<Vec<Field>> {
        let st = self.stencil;
        holo_deriv(&|x: &[C64]| self.metrics_at(x), s, i, st.step, st.levels)
    }

    /// `∂_i∂_j̄ h`.
    pub fn ddbar_metric(&self, s: &[C64], i: usize, j: usize) -> Result<Vec<Field>> {
        let st = self.stencil;
        mixed_deriv(&|x: &[C64]| self.metrics_at(x), s, i, j, st.second_step, st.second_levels)
    }

    /// Chern connection in the parameter directions, `A_i = h⁻¹∂_i h`.
    pub fn connection(&self, s: &[C64], i: usize) -> Result<Vec<Field>> {
        let h = self.metrics_at(s)?;
        let dh = self.dmetric(s, i)?;
        pointwise(&h, &dh, |hp, dp| Ok(inverse(hp)? * dp))
    }

    /// `R_{ij̄} = −∂_j̄(h⁻¹∂_i h) = −h⁻¹∂_i∂_j̄h + h⁻¹∂_j̄h·h⁻¹∂_ih`.
    pub fn mixed_curvature(&self, s: &[C64], i: usize, j: usize) -> Result<Vec<Field>> {
        let h = self.metrics_at(s)?;
        let dhi = self.dmetric(s, i)?;
        let dhj = self.dmetric(s, j)?;
        let ddh = self.ddbar_metric(s, i, j)?;
        let mut out = Vec::with_capacity(h.len());
        for v in 0..h.len() {
            let mut f = Vec::with_capacity(h[v].len());
            for p in 0..h[v].len() {
                let hi = inverse(&h[v][p])?;
                let dbar_j = dhj[v][p].adjoint();
                f.push(-(&hi * &ddh[v][p]) + &hi * dbar_j * &hi * &dhi[v][p]);
            }
            out.push(f);
        }
        Ok(out)
    }

    /// `R_{iz̄} = ∂_iα − (∂̄A_i + [α, A_i])` on the torus; empty on the point backend.
    pub fn curvature_iz(&self, s: &[C64], i: usize) -> Result<Vec<Field>> {
        let Backend::Torus(sp) = &self.backend else {
            return Ok(self.dims.iter().map(|_| vec![]).collect());
        };
        let a = self.connection(s, i)?;
        let alpha = self.alpha_at(s);
        let da = self.dalpha_at(s, i);
        Ok((0..self.dims.len())
            .map(|v| {
                let dbar = sp.dbar(&a[v]);
                (0..sp.npts()).map(|p| &da[v][p] - &dbar[p] - (&alpha[v][p] * &a[v][p] - &a[v][p] * &alpha[v][p])).collect()
            })
            .collect())
    }

    // ---- Kodaira–Spencer ---------------------------------------------

    /// `(−∂_iφ, √n ∂_iα)`, the derivative of the data in a fixed frame.
    pub fn naive_ks(&self, s: &[C64], i: usize) -> Cochain1 {
        let chi = self.dphi_at(s, i).iter().map(|f| ops::scale(f, c(-1.0, 0.0))).collect();
        let zeta = self
            .dalpha_at(s, i)
            .iter()
            .enumerate()
            .map(|(v, f)| ops::scale(f, c(self.quiver.weight(v).sqrt(), 0.0)))
            .collect();
        Cochain1 { chi, zeta }
    }

    /// Harmonic representative by projection: `naive − d⁰y` with `□⁰y = (d⁰)*naive`.
    pub fn ks(&self, s: &[C64], i: usize) -> Result<Cochain1> {
        let ctx = self.context(s)?;
        let naive = self.naive_ks(s, i);
        let y = ctx.solve_in_range(&ctx.d0_adj(&naive))?;
        Ok(ctx.sub(&naive, &ctx.d0(&y)))
    }

    /// Representative from the stencil connection: `naive − d⁰(√n A_i)`,
    /// i.e. `(−φ_{;i}, √n R_{iz̄})`.
    pub fn ks_formula(&self, s: &[C64], i: usize) -> Result<Cochain1> {
        let ctx = self.context(s)?;
        let a = self.connection(s, i)?;
        let xi = a.iter().enumerate().map(|(v, f)| ops::scale(f, c(self.quiver.weight(v).sqrt(), 0.0))).collect();
        Ok(ctx.sub(&self.naive_ks(s, i), &ctx.d0(&crate::defcomplex::Cochain0 { xi })))
    }

    /// `μ_{i;j̄} = ∂_j̄ μ_i` by differencing the projected representatives.
    pub fn ks_dbar(&self, s: &[C64], i: usize, j: usize) -> Result<Cochain1> {
        let st = self.stencil;
        antiholo_deriv(&|x: &[C64]| self.ks(x, i), s, j, st.step, st.levels)
    }

    /// `μ_{i;k} = ∂_kμ_i + A_k·μ_i` (the Chern connection acting on Hom and End).
    pub fn ks_cov(&self, s: &[C64], i: usize, k: usize) -> Result<Cochain1> {
        let st = self.stencil;
        let d = holo_deriv(&|x: &[C64]| self.ks(x, i), s, k, st.step, st.levels)?;
        let mu = self.ks(s, i)?;
        let a = self.connection(s, k)?;
        let mut out = d;
        for (arr, f) in out.chi.iter_mut().enumerate() {
            let (h, t) = (self.quiver.head(arr), self.quiver.tail(arr));
            for (p, m) in f.iter_mut().enumerate() {
                *m += &a[h][p] * &mu.chi[arr][p] - &mu.chi[arr][p] * &a[t][p];
            }
        }
        for (v, f) in out.zeta.iter_mut().enumerate() {
            for (p, m) in f.iter_mut().enumerate() {
                *m += &a[v][p] * &mu.zeta[v][p] - &mu.zeta[v][p] * &a[v][p];
            }
        }
        Ok(out)
    }
}

fn pointwise(a: &[Field], b: &[Field], f: impl Fn(&Mat, &Mat) -> Result<Mat>) -> Result<Vec<Field>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| f(p, q)).collect()).collect()
}
