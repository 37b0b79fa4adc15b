//! Flat torus geometry and pseudo-spectral calculus on matrix-valued fields.
//!
//! A field is a vector of matrices, one per collocation point. The torus is
//! `ℂ/(ℤ + τℤ)` with coordinate `z = u + τv`, sampled on an `M×M` grid with
//! `M = 4N + 1` so that products of two fields truncated at `N` modes are
//! represented without aliasing. The point backend uses a single point.

use crate::error::{Error, Result};
use crate::linalg::{c, zeros, Mat, C64, ZERO};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub type Field = Vec<Mat>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGeometry {
    /// Modulus `τ` with positive imaginary part.
    pub tau: C64,
    /// Total area `∫ω_X`.
    pub area: f64,
    /// Fourier truncation `N`.
    pub modes: usize,
}

impl TorusGeometry {
    pub fn new(tau: C64, area: f64, modes: usize) -> Result<Self> {
        if tau.im <= 0.0 || !tau.im.is_finite() {
            return Err(Error::Invalid(format!("modulus must have positive imaginary part, got {tau}")));
        }
        if area <= 0.0 || !area.is_finite() {
            return Err(Error::Invalid(format!("area must be positive, got {area}")));
        }
        if modes == 0 {
            return Err(Error::Invalid("need at least one Fourier mode".into()));
        }
        Ok(Self { tau, area, modes })
    }

    /// Square torus of unit area.
    pub fn square(modes: usize) -> Self {
        Self { tau: c(0.0, 1.0), area: 1.0, modes }
    }

    /// Constant metric coefficient `g` in `ω_X = √-1 g dz∧dz̄`.
    pub fn g(&self) -> f64 {
        self.area / (2.0 * self.tau.im)
    }

    pub fn side(&self) -> usize {
        4 * self.modes + 1
    }
}

/// FFT plans and Fourier multipliers for one torus grid.
#[derive(Clone)]
pub struct Spectral {
    pub geom: TorusGeometry,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("geom", &self.geom).field("side", &self.m).finish()
    }
}

/// Signed frequency of FFT index `j` on an odd grid of size `m`.
fn freq(j: usize, m: usize) -> i64 {
    if j <= m / 2 {
        j as i64
    } else {
        j as i64 - m as i64
    }
}

impl Spectral {
    pub fn new(geom: TorusGeometry) -> Self {
        let m = geom.side();
        let mut planner = FftPlanner::new();
        Self { geom, m, fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m) }
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn npts(&self) -> usize {
        self.m * self.m
    }

    /// Quadrature weight: `∫ f ω_X ≈ weight · Σ f`.
    pub fn weight(&self) -> f64 {
        self.geom.area / self.npts() as f64
    }

    /// Grid point `(u, v)` for flat index `p·M + q`.
    pub fn point(&self, idx: usize) -> (f64, f64) {
        ((idx / self.m) as f64 / self.m as f64, (idx % self.m) as f64 / self.m as f64)
    }

    /// Complex coordinate `z = u + τ v` of a grid point.
    pub fn z(&self, idx: usize) -> C64 {
        let (u, v) = self.point(idx);
        c(u, 0.0) + self.geom.tau * v
    }

    /// Frequencies `(m₁, m₂)` of flat spectral index.
    pub fn mode(&self, idx: usize) -> (i64, i64) {
        (freq(idx / self.m, self.m), freq(idx % self.m, self.m))
    }

    /// Symbol of `∂/∂z̄` on `exp(2πi(m₁u + m₂v))`.
    pub fn dbar_symbol(&self, m1: i64, m2: i64) -> C64 {
        let t = self.geom.tau;
        (t * m1 as f64 - c(m2 as f64, 0.0)) * (PI / t.im)
    }

    /// Symbol of `∂/∂z`.
    pub fn d_symbol(&self, m1: i64, m2: i64) -> C64 {
        let t = self.geom.tau;
        (c(m2 as f64, 0.0) - t.conj() * m1 as f64) * (PI / t.im)
    }

    /// Normalized forward transform: grid values to Fourier coefficients.
    pub fn fft2(&self, data: &[C64]) -> Vec<C64> {
        let m = self.m;
        let mut a = data.to_vec();
        for row in a.chunks_mut(m) {
            self.fwd.process(row);
        }
        let mut col = vec![ZERO; m];
        for q in 0..m {
            for p in 0..m {
                col[p] = a[p * m + q];
            }
            self.fwd.process(&mut col);
            for p in 0..m {
                a[p * m + q] = col[p];
            }
        }
        let s = 1.0 / (m * m) as f64;
        a.iter_mut().for_each(|x| *x *= s);
        a
    }

    /// Fourier coefficients to grid values.
    pub fn ifft2(&self, coef: &[C64]) -> Vec<C64> {
        let m = self.m;
        let mut a = coef.to_vec();
        for row in a.chunks_mut(m) {
            self.inv.process(row);
        }
        let mut col = vec![ZERO; m];
        for q in 0..m {
            for p in 0..m {
                col[p] = a[p * m + q];
            }
            self.inv.process(&mut col);
            for p in 0..m {
                a[p * m + q] = col[p];
            }
        }
        a
    }

    /// Applies a Fourier multiplier to a scalar grid function.
    pub fn multiply_scalar(&self, data: &[C64], sym: impl Fn(i64, i64) -> C64) -> Vec<C64> {
        let mut f = self.fft2(data);
        for (idx, x) in f.iter_mut().enumerate() {
            let (m1, m2) = self.mode(idx);
            *x *= sym(m1, m2);
        }
        self.ifft2(&f)
    }

    /// Applies a Fourier multiplier entrywise to a matrix field.
    pub fn multiply(&self, f: &Field, sym: impl Fn(i64, i64) -> C64) -> Field {
        let (r, cc) = f[0].shape();
        let mut out: Field = vec![zeros(r, cc); f.len()];
        let syms: Vec<C64> = (0..self.npts()).map(|i| {
            let (m1, m2) = self.mode(i);
            sym(m1, m2)
        }).collect();
        let mut buf = vec![ZERO; self.npts()];
        for i in 0..r {
            for j in 0..cc {
                for (k, m) in f.iter().enumerate() {
                    buf[k] = m[(i, j)];
                }
                let mut coef = self.fft2(&buf);
                coef.iter_mut().zip(&syms).for_each(|(x, s)| *x *= s);
                let vals = self.ifft2(&coef);
                for (k, v) in vals.into_iter().enumerate() {
                    out[k][(i, j)] = v;
                }
            }
        }
        out
    }

    pub fn dbar(&self, f: &Field) -> Field {
        self.multiply(f, |a, b| self.dbar_symbol(a, b))
    }

    pub fn d(&self, f: &Field) -> Field {
        self.multiply(f, |a, b| self.d_symbol(a, b))
    }

    /// Mean-zero solution `u` of `∂̄u = f − mean(f)`.
    pub fn dbar_inverse(&self, f: &Field) -> Field {
        self.multiply(f, |a, b| if a == 0 && b == 0 { ZERO } else { 1.0 / self.dbar_symbol(a, b) })
    }

    /// Grid average.
    pub fn mean(&self, f: &Field) -> Mat {
        let mut acc = zeros(f[0].nrows(), f[0].ncols());
        for m in f {
            acc += m;
        }
        acc / c(f.len() as f64, 0.0)
    }

    /// `∫ f ω_X`.
    pub fn integrate(&self, f: &Field) -> Mat {
        self.mean(f) * c(self.geom.area, 0.0)
    }

    /// Fourier coefficients of each entry for `|m₁|, |m₂| ≤ N`, as
    /// `(m₁, m₂, coefficient matrix)`.
    pub fn modes_export(&self, f: &Field) -> Vec<(i64, i64, Mat)> {
        let (r, cc) = f[0].shape();
        let n = self.geom.modes as i64;
        let mut coefs: Vec<Mat> = vec![zeros(r, cc); self.npts()];
        let mut buf = vec![ZERO; self.npts()];
        for i in 0..r {
            for j in 0..cc {
                for (k, m) in f.iter().enumerate() {
                    buf[k] = m[(i, j)];
                }
                for (k, v) in self.fft2(&buf).into_iter().enumerate() {
                    coefs[k][(i, j)] = v;
                }
            }
        }
        let mut out = Vec::new();
        for (idx, cm) in coefs.into_iter().enumerate() {
            let (m1, m2) = self.mode(idx);
            if m1.abs() <= n && m2.abs() <= n {
                out.push((m1, m2, cm));
            }
        }
        out.sort_by_key(|(a, b, _)| (*a, *b));
        out
    }

    /// Fraction of spectral energy in modes beyond the truncation `N`.
    pub fn aliasing_fraction(&self, f: &Field) -> f64 {
        let (r, cc) = f[0].shape();
        let n = self.geom.modes as i64;
        let (mut hi, mut tot) = (0.0, 0.0);
        let mut buf = vec![ZERO; self.npts()];
        for i in 0..r {
            for j in 0..cc {
                for (k, m) in f.iter().enumerate() {
                    buf[k] = m[(i, j)];
                }
                for (k, v) in self.fft2(&buf).into_iter().enumerate() {
                    let (m1, m2) = self.mode(k);
                    let e = v.norm_sqr();
                    tot += e;
                    if m1.abs() > n || m2.abs() > n {
                        hi += e;
                    }
                }
            }
        }
        if tot == 0.0 {
            0.0
        } else {
            hi / tot
        }
    }

    /// Samples `f(z)` at every grid point.
    pub fn sample(&self, f: impl Fn(f64, f64) -> Mat) -> Field {
        (0..self.npts()).map(|i| {
            let (u, v) = self.point(i);
            f(u, v)
        }).collect()
    }

    /// Trigonometric field `Σ coef · exp(2πi(m₁u + m₂v))`.
    pub fn trig(&self, terms: &[(i64, i64, Mat)]) -> Field {
        let (r, cc) = terms.first().map(|t| t.2.shape()).unwrap_or((1, 1));
        self.sample(|u, v| {
            let mut acc = zeros(r, cc);
            for (m1, m2, cm) in terms {
                let ph = 2.0 * PI * (*m1 as f64 * u + *m2 as f64 * v);
                acc += cm * C64::from_polar(1.0, ph);
            }
            acc
        })
    }
}

/// Field helpers shared by both backends.
pub mod ops {
    use super::*;

    pub fn constant(m: &Mat, npts: usize) -> Field {
        vec![m.clone(); npts]
    }

    pub fn zero(r: usize, cc: usize, npts: usize) -> Field {
        vec![zeros(r, cc); npts]
    }

    pub fn add(a: &Field, b: &Field) -> Field {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    pub fn sub(a: &Field, b: &Field) -> Field {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    pub fn scale(a: &Field, s: C64) -> Field {
        a.iter().map(|x| x * s).collect()
    }

    pub fn mul(a: &Field, b: &Field) -> Field {
        a.iter().zip(b).map(|(x, y)| x * y).collect()
    }

    pub fn adjoint(a: &Field) -> Field {
        a.iter().map(|x| x.adjoint()).collect()
    }

    pub fn axpy(y: &mut Field, s: C64, x: &Field) {
        for (a, b) in y.iter_mut().zip(x) {
            *a += b * s;
        }
    }

    /// `Σ_points tr(a_p b_p)`.
    pub fn sum_trace_prod(a: &Field, b: &Field) -> C64 {
        a.iter().zip(b).map(|(x, y)| crate::linalg::trace_prod(x, y)).sum()
    }

    pub fn sup_norm(a: &Field) -> f64 {
        a.iter().map(crate::linalg::max_abs).fold(0.0, f64::max)
    }

    pub fn l2_sq(a: &Field) -> f64 {
        a.iter().map(|x| x.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
    }
}
