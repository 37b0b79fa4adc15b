//! Matrix-valued differential forms on `X × S` at one parameter point, with
//! the fibre integral over the torus and Chern character forms.
//!
//! A form is a map from monomials to grid fields. Generators are numbered
//! `dz = 0`, `dz̄ = 1`, `ds^i = 2 + 2i`, `ds̄^i = 3 + 2i`, and a monomial is the
//! bitmask of its generators wedged in increasing order.

use crate::error::{Error, Result};
use crate::grid::{ops, Field, Spectral};
use crate::linalg::{c, eye, trace, zeros, Mat, C64};
use std::collections::BTreeMap;
use std::f64::consts::PI;

pub const DZ: usize = 0;
pub const DZBAR: usize = 1;

pub fn ds(i: usize) -> usize {
    2 + 2 * i
}

pub fn dsbar(i: usize) -> usize {
    3 + 2 * i
}

/// Sign of reordering `a ∧ b` into increasing generator order.
fn merge_sign(a: u32, b: u32) -> f64 {
    let mut swaps = 0u32;
    let mut bb = b;
    while bb != 0 {
        let g = bb.trailing_zeros();
        swaps += (a >> (g + 1)).count_ones();
        bb &= bb - 1;
    }
    if swaps % 2 == 0 { 1.0 } else { -1.0 }
}

/// Bitmask and sign of the ordered monomial for a list of distinct generators.
fn monomial(gens: &[usize]) -> Option<(u32, f64)> {
    let mut mask = 0u32;
    let mut sign = 1.0;
    for &g in gens {
        let bit = 1u32 << g;
        if mask & bit != 0 {
            return None;
        }
        sign *= merge_sign(mask, bit);
        mask |= bit;
    }
    Some((mask, sign))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormOnProduct {
    /// Number of parameters.
    pub k: usize,
    pub rows: usize,
    pub cols: usize,
    pub npts: usize,
    comps: BTreeMap<u32, Field>,
}

impl FormOnProduct {
    pub fn zero(k: usize, rows: usize, cols: usize, npts: usize) -> Self {
        Self { k, rows, cols, npts, comps: BTreeMap::new() }
    }

    /// The degree-zero form with the given values.
    pub fn function(k: usize, f: Field) -> Self {
        let (rows, cols) = f.first().map_or((0, 0), |m| m.shape());
        let mut out = Self::zero(k, rows, cols, f.len());
        out.comps.insert(0, f);
        out
    }

    /// `m` at every grid point, as a 0-form.
    pub fn constant(k: usize, m: &Mat, npts: usize) -> Self {
        Self::function(k, ops::constant(m, npts))
    }

    /// Adds `coef · g₁∧g₂∧…` (generators in any order).
    pub fn add_term(&mut self, gens: &[usize], coef: &Field) -> Result<()> {
        if gens.iter().any(|&g| g >= 2 + 2 * self.k) {
            return Err(Error::DegreeMismatch(format!("generator outside X × S with {} parameters", self.k)));
        }
        if coef.len() != self.npts {
            return Err(Error::ShapeMismatch("coefficient grid size".into()));
        }
        let Some((mask, sign)) = monomial(gens) else { return Ok(()) };
        let slot = self.comps.entry(mask).or_insert_with(|| ops::zero(self.rows, self.cols, self.npts));
        ops::axpy(slot, c(sign, 0.0), coef);
        Ok(())
    }

    /// Coefficient of `g₁∧g₂∧…` (zero field when absent).
    pub fn coefficient(&self, gens: &[usize]) -> Field {
        match monomial(gens) {
            Some((mask, sign)) => match self.comps.get(&mask) {
                Some(f) => ops::scale(f, c(sign, 0.0)),
                None => ops::zero(self.rows, self.cols, self.npts),
            },
            None => ops::zero(self.rows, self.cols, self.npts),
        }
    }

    pub fn components(&self) -> impl Iterator<Item = (&u32, &Field)> {
        self.comps.iter()
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (m, f) in &o.comps {
            let slot = out.comps.entry(*m).or_insert_with(|| ops::zero(self.rows, self.cols, self.npts));
            ops::axpy(slot, c(1.0, 0.0), f);
        }
        out
    }

    pub fn scale(&self, z: C64) -> Self {
        let mut out = self.clone();
        for f in out.comps.values_mut() {
            *f = ops::scale(f, z);
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(c(-1.0, 0.0)))
    }

    /// Pointwise matrix product combined with the wedge product.
    pub fn wedge(&self, o: &Self) -> Self {
        let mut out = Self::zero(self.k, self.rows, o.cols, self.npts);
        for (ma, fa) in &self.comps {
            for (mb, fb) in &o.comps {
                if ma & mb != 0 {
                    continue;
                }
                let prod = ops::scale(&ops::mul(fa, fb), c(merge_sign(*ma, *mb), 0.0));
                let slot = out.comps.entry(ma | mb).or_insert_with(|| ops::zero(self.rows, o.cols, self.npts));
                ops::axpy(slot, c(1.0, 0.0), &prod);
            }
        }
        out
    }

    /// Pointwise trace, a scalar (1×1) form.
    pub fn trace(&self) -> Self {
        let mut out = Self::zero(self.k, 1, 1, self.npts);
        for (m, f) in &self.comps {
            out.comps.insert(*m, f.iter().map(|a| Mat::from_element(1, 1, trace(a))).collect());
        }
        out
    }

    /// Components of total degree `d`.
    pub fn degree_part(&self, d: u32) -> Self {
        let mut out = Self::zero(self.k, self.rows, self.cols, self.npts);
        out.comps = self.comps.iter().filter(|(m, _)| m.count_ones() == d).map(|(m, f)| (*m, f.clone())).collect();
        out
    }

    /// Components of total degree at most `d`.
    pub fn truncate(&self, d: u32) -> Self {
        let mut out = self.clone();
        out.comps.retain(|m, _| m.count_ones() <= d);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.values().map(ops::sup_norm).fold(0.0, f64::max)
    }

    /// Value at one grid point, broadcast to the whole grid, with every
    /// component along `dz` or `dz̄` removed: the pullback along `(x, s) ↦ (x₀, s)`.
    pub fn pullback_from_point(&self, p: usize) -> Self {
        let mut out = Self::zero(self.k, self.rows, self.cols, self.npts);
        for (m, f) in &self.comps {
            if m & 0b11 == 0 {
                out.comps.insert(*m, ops::constant(&f[p], self.npts));
            }
        }
        out
    }

    /// Kronecker combination `Ω ⊗ 1 − 1 ⊗ Ωᵀ`, the curvature of `End E` for
    /// square forms `Ω` (the induced connection on `E ⊗ E*`).
    pub fn adjoint_action(&self) -> Self {
        let r = self.rows;
        let id = eye(r);
        let mut out = Self::zero(self.k, r * r, r * r, self.npts);
        for (m, f) in &self.comps {
            out.comps.insert(*m, f.iter().map(|a| a.kronecker(&id) - id.kronecker(&a.transpose())).collect());
        }
        out
    }

    /// `η^m / m!` wedge powers summed up to the top degree, for scalar forms
    /// whose degree-zero part vanishes.
    pub fn exp_nilpotent(&self) -> Self {
        let top = (2 + 2 * self.k) as u32;
        let one = Self::constant(self.k, &eye(self.rows), self.npts);
        let mut term = one.clone();
        let mut sum = one;
        for m in 1..=top / 2 {
            term = term.wedge(self).scale(c(1.0 / m as f64, 0.0));
            sum = sum.add(&term);
        }
        sum
    }
}

/// `ω_X = √-1 g dz∧dz̄` as a scalar form.
pub fn kaehler_form(sp: &Spectral, k: usize) -> FormOnProduct {
    let mut w = FormOnProduct::zero(k, 1, 1, sp.npts());
    w.add_term(&[DZ, DZBAR], &ops::constant(&Mat::from_element(1, 1, c(0.0, sp.geom.g())), sp.npts())).unwrap();
    w
}

/// Integrates the `dz∧dz̄` components over the torus; the result lives on a
/// one-point grid and carries only parameter directions.
pub fn fiber_integral(sp: &Spectral, form: &FormOnProduct) -> Result<FormOnProduct> {
    if form.npts != sp.npts() {
        return Err(Error::ShapeMismatch("form grid differs from the torus grid".into()));
    }
    let mut out = FormOnProduct::zero(form.k, form.rows, form.cols, 1);
    let mut found = false;
    // dz∧dz̄ = −√-1 g⁻¹ ω_X, and dz∧dz̄ is even so it commutes past the S-part.
    let factor = c(0.0, -1.0 / sp.geom.g());
    for (m, f) in &form.comps {
        if m & 0b11 == 0b11 {
            found = true;
            out.comps.insert(*m & !0b11, vec![sp.integrate(f) * factor]);
        }
    }
    if !found {
        return Err(Error::DegreeMismatch("form has no dz∧dz̄ component".into()));
    }
    Ok(out)
}

/// Coefficient `G_{ij̄}` of `√-1 G_{ij̄} ds^i∧ds̄^j` in a scalar one-point 2-form.
pub fn hermitian_coefficients(beta: &FormOnProduct) -> Mat {
    let k = beta.k;
    Mat::from_fn(k, k, |i, j| beta.coefficient(&[ds(i), dsbar(j)]).first().map_or(c(0.0, 0.0), |m| m[(0, 0)]) * c(0.0, -1.0))
}

/// Chern character forms `ch_m = (√-1/2π)^m tr(Ω^m)/m!` for `m ≤ cap`.
pub fn chern_forms(omega: &FormOnProduct, cap: usize) -> Result<Vec<FormOnProduct>> {
    if omega.rows != omega.cols {
        return Err(Error::ShapeMismatch("curvature must be endomorphism-valued".into()));
    }
    if 2 * cap > 2 + 2 * omega.k {
        return Err(Error::DegreeMismatch(format!("degree {} exceeds the dimension of X × S", 2 * cap)));
    }
    let mut out = Vec::with_capacity(cap + 1);
    let mut power = FormOnProduct::constant(omega.k, &eye(omega.rows), omega.npts);
    let unit = c(0.0, 1.0 / (2.0 * PI));
    let mut coef = c(1.0, 0.0);
    for m in 0..=cap {
        if m > 0 {
            power = power.wedge(omega);
            coef *= unit / m as f64;
        }
        out.push(power.trace().scale(coef));
    }
    Ok(out)
}

/// Total Chern character `Σ_m ch_m`.
pub fn total(ch: &[FormOnProduct]) -> FormOnProduct {
    ch.iter().skip(1).fold(ch[0].clone(), |a, b| a.add(b))
}

/// `ch(A ⊗ B)` from the multiplicativity of the Chern character.
pub fn ch_tensor(a: &[FormOnProduct], b: &[FormOnProduct]) -> Vec<FormOnProduct> {
    let cap = a.len().min(b.len());
    (0..cap).map(|m| (0..=m).map(|p| a[p].wedge(&b[m - p])).reduce(|x, y| x.add(&y)).unwrap()).collect()
}

/// `ch(A ⊕ B)`.
pub fn ch_sum(a: &[FormOnProduct], b: &[FormOnProduct]) -> Vec<FormOnProduct> {
    a.iter().zip(b).map(|(x, y)| x.add(y)).collect()
}

/// `ch(E*)`, with `ch_m(E*) = (−1)^m ch_m(E)`.
pub fn ch_dual(a: &[FormOnProduct]) -> Vec<FormOnProduct> {
    a.iter().enumerate().map(|(m, x)| if m % 2 == 0 { x.clone() } else { x.scale(c(-1.0, 0.0)) }).collect()
}

/// Block-diagonal curvature of a direct sum.
pub fn direct_sum(a: &FormOnProduct, b: &FormOnProduct) -> FormOnProduct {
    let (ra, rb) = (a.rows, b.rows);
    let mut out = FormOnProduct::zero(a.k, ra + rb, ra + rb, a.npts);
    let masks: std::collections::BTreeSet<u32> = a.comps.keys().chain(b.comps.keys()).copied().collect();
    for m in masks {
        let f: Field = (0..a.npts)
            .map(|p| {
                let mut z = zeros(ra + rb, ra + rb);
                if let Some(fa) = a.comps.get(&m) {
                    z.view_mut((0, 0), (ra, ra)).copy_from(&fa[p]);
                }
                if let Some(fb) = b.comps.get(&m) {
                    z.view_mut((ra, ra), (rb, rb)).copy_from(&fb[p]);
                }
                z
            })
            .collect();
        out.comps.insert(m, f);
    }
    out
}

/// Residuals of the virtual-bundle Chern character identities on a curve (`n = 1`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VirtualChReport {
    /// `ch(End E − O^{r²})` through degree 4 against `2r ch₂(E) − c₁(E)²`, with
    /// `End E` curvature built directly as `Ω⊗1 − 1⊗Ωᵀ`.
    pub end_direct: f64,
    /// Same left side through `ch(E)·ch(E*)`.
    pub end_multiplicative: f64,
    /// `(ch(det E) − 1)²` against `c₁(E)²`.
    pub det_square: f64,
    /// `(ch(det E ⊗ det E⁰⁻¹) − 1)(ch(L) − 1)` against `c₁(E)∧ω_X`.
    pub e0_c1_omega: f64,
    /// `(ch(det E ⊗ det E⁰⁻¹) − 1)²` against `c₁(E)²`.
    pub e0_c1_squared: f64,
    /// Largest change of the E⁰ left sides when the base point `x₀` moves.
    pub e0_base_point_variation: f64,
    /// Scale of the compared forms.
    pub scale: f64,
}

impl VirtualChReport {
    pub fn max(&self) -> f64 {
        [self.end_direct, self.end_multiplicative, self.det_square, self.e0_c1_omega, self.e0_c1_squared, self.e0_base_point_variation]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// E⁰: the restriction of `E` to `{x₀} × S`, pulled back to `X × S` and
/// given the trivial metric in the family frame, which is flat.
pub fn e0_curvature(omega: &FormOnProduct, x0: usize) -> FormOnProduct {
    let flat = FormOnProduct::zero(omega.k, omega.rows, omega.cols, omega.npts);
    flat.pullback_from_point(x0)
}

/// Lowest-degree (`(2,2)`) checks of the virtual-bundle identities for a
/// curvature form `Ω` of `E` and the Kähler form `ω_X = c₁(L)`.
pub fn virtual_ch_checks(omega: &FormOnProduct, omega_x: &FormOnProduct, base_points: &[usize]) -> Result<VirtualChReport> {
    let k = omega.k;
    let r = omega.rows;
    let npts = omega.npts;
    let ch = chern_forms(omega, 2)?;
    let c1 = ch[1].clone();
    let c1sq = c1.wedge(&c1);
    let one = FormOnProduct::constant(k, &eye(1), npts);

    let rhs_end = ch[2].scale(c(2.0 * r as f64, 0.0)).sub(&c1sq);
    let end = chern_forms(&omega.adjoint_action(), 2)?;
    let lhs_direct = total(&end).sub(&one.scale(c((r * r) as f64, 0.0)));
    let lhs_mult = total(&ch_tensor(&ch, &ch_dual(&ch))).sub(&one.scale(c((r * r) as f64, 0.0)));
    let end_direct = lhs_direct.truncate(4).sub(&rhs_end).max_abs();
    let end_multiplicative = lhs_mult.truncate(4).sub(&rhs_end).max_abs();

    let det_curv = omega.trace();
    let ch_det = det_curv.scale(c(0.0, 1.0 / (2.0 * PI))).exp_nilpotent();
    let det_minus = ch_det.sub(&one);
    let det_square = det_minus.wedge(&det_minus).truncate(4).sub(&c1sq).max_abs();

    let ch_l_minus = omega_x.exp_nilpotent().sub(&one);
    let e0_lhs = |x0: usize| -> (FormOnProduct, FormOnProduct) {
        let e0 = e0_curvature(omega, x0).trace();
        let twisted = det_curv.sub(&e0).scale(c(0.0, 1.0 / (2.0 * PI))).exp_nilpotent().sub(&one);
        (twisted.wedge(&ch_l_minus).truncate(4), twisted.wedge(&twisted).truncate(4))
    };
    let x0 = base_points.first().copied().unwrap_or(0);
    let (a, b) = e0_lhs(x0);
    let e0_c1_omega = a.sub(&c1.wedge(omega_x)).max_abs();
    let e0_c1_squared = b.sub(&c1sq).max_abs();
    let mut e0_base_point_variation = 0.0f64;
    for &p in base_points.iter().skip(1) {
        let (a2, b2) = e0_lhs(p);
        e0_base_point_variation = e0_base_point_variation.max(a2.sub(&a).max_abs()).max(b2.sub(&b).max_abs());
    }
    let scale = rhs_end.max_abs().max(c1sq.max_abs()).max(c1.wedge(omega_x).max_abs());
    Ok(VirtualChReport { end_direct, end_multiplicative, det_square, e0_c1_omega, e0_c1_squared, e0_base_point_variation, scale })
}
