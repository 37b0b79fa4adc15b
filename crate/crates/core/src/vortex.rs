//! Metric adjoints, the absolute-case moment map, its heat flow and
//! stability diagnostics.

use crate::error::{Error, Result};
use crate::linalg::{
    c, cholesky, eye, fnorm, gen_eigvals, herm_part, inverse, is_hermitian, op_norm_h, orth, random_matrix, trace,
    zeros, Mat,
};
use crate::quiver::{check_feasibility, relation_residual, Quiver, Relation, Representation, StabilityParameters, RELATION_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Hermitian metrics `h_λ`, indexed like the quiver's vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAssignment {
    pub metrics: Vec<Mat>,
}

impl MetricAssignment {
    pub fn new(q: &Quiver, rep: &Representation, metrics: Vec<Mat>) -> Result<Self> {
        let m = Self { metrics };
        m.validate(q, rep)?;
        Ok(m)
    }

    pub fn identity(rep: &Representation) -> Self {
        Self { metrics: rep.dims.iter().map(|&d| eye(d)).collect() }
    }

    pub fn validate(&self, q: &Quiver, rep: &Representation) -> Result<()> {
        if self.metrics.len() != q.n_vertices() {
            let v = q.vertices().get(self.metrics.len()).map(|v| v.id.clone()).unwrap_or_default();
            return Err(Error::MissingMetric(v));
        }
        for (v, h) in self.metrics.iter().enumerate() {
            let id = &q.vertices()[v].id;
            if h.shape() != (rep.dims[v], rep.dims[v]) {
                return Err(Error::ShapeMismatch(format!("metric at `{id}` has shape {:?}", h.shape())));
            }
            if !is_hermitian(h, 1e-13 * (1.0 + fnorm(h))) || (h.nrows() > 0 && cholesky(h).is_none()) {
                return Err(Error::NotPositiveDefinite(id.clone()));
            }
        }
        Ok(())
    }
}

/// `φ* = h_t⁻¹ φ^† h_h`, the adjoint for `⟨u, v⟩_h = v^† h u`.
pub fn metric_adjoint(phi: &Mat, h_tail: &Mat, h_head: &Mat) -> Result<Mat> {
    if phi.nrows() != h_head.nrows() || phi.ncols() != h_tail.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "map {:?} against metrics {}×{}",
            phi.shape(),
            h_head.nrows(),
            h_tail.nrows()
        )));
    }
    for h in [h_tail, h_head] {
        if h.nrows() > 0 && cholesky(h).is_none() {
            return Err(Error::NotPositiveDefinite("<adjoint>".into()));
        }
    }
    let hti = if h_tail.nrows() == 0 { zeros(0, 0) } else { inverse(h_tail)? };
    Ok(hti * phi.adjoint() * h_head)
}

/// `m_λ = Σ_{h(a)=λ} φ_a φ_a* − Σ_{t(a)=λ} φ_a* φ_a − τ′_λ I`.
pub fn moment_residual(
    q: &Quiver,
    rep: &Representation,
    metrics: &MetricAssignment,
    params: &StabilityParameters,
) -> Result<Vec<Mat>> {
    if params.tau_prime.len() != q.n_vertices() {
        return Err(Error::ShapeMismatch("τ′ length differs from vertex count".into()));
    }
    let mut out: Vec<Mat> = rep
        .dims
        .iter()
        .zip(&params.tau_prime)
        .map(|(&d, &t)| eye(d) * c(-t, 0.0))
        .collect();
    for (a, phi) in rep.maps.iter().enumerate() {
        let (h, t) = (q.head(a), q.tail(a));
        let adj = metric_adjoint(phi, &metrics.metrics[t], &metrics.metrics[h])?;
        out[h] += phi * &adj;
        out[t] -= &adj * phi;
    }
    Ok(out)
}

/// Sup over vertices of the `h_λ`-operator norm.
pub fn residual_norm(metrics: &MetricAssignment, m: &[Mat]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (h, mm) in metrics.metrics.iter().zip(m) {
        worst = worst.max(op_norm_h(mm, h)?);
    }
    Ok(worst)
}

/// `Σ_λ ‖m_λ‖²_h`, the Lyapunov functional of the flow.
pub fn residual_energy(m: &[Mat]) -> f64 {
    // For h-self-adjoint m, ‖m‖²_h = tr(m m).
    m.iter().map(|x| trace(&(x * x)).re).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub divergence_bound: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { step: 0.05, tol: 1e-9, max_iters: 200_000, divergence_bound: 40.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    Diverged,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub verdict: Verdict,
    pub iterations: usize,
    pub residual: f64,
    /// Min and max eigenvalue of `log(h0⁻¹ h)` over all vertices.
    pub eigen_bounds: (f64, f64),
    pub final_step: f64,
}

fn log_bounds(h0: &MetricAssignment, h: &MetricAssignment) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for (a, b) in h0.metrics.iter().zip(&h.metrics) {
        if a.nrows() == 0 {
            continue;
        }
        for e in gen_eigvals(b, a)? {
            let l = e.max(f64::MIN_POSITIVE).ln();
            lo = lo.min(l);
            hi = hi.max(l);
        }
    }
    Ok((lo, hi))
}

fn det_re(h: &Mat) -> f64 {
    h.determinant().re
}

/// Rescales each connected component of the support so that the metric at
/// its first vertex keeps the determinant it had in `h0`.
fn fix_gauge(q: &Quiver, rep: &Representation, h0: &MetricAssignment, h: &mut MetricAssignment) {
    for comp in q.components(&rep.support()) {
        let v0 = comp[0];
        let d = rep.dims[v0] as f64;
        let s = (det_re(&h0.metrics[v0]) / det_re(&h.metrics[v0])).powf(1.0 / d);
        if s.is_finite() && s > 0.0 {
            for &v in &comp {
                h.metrics[v] *= c(s, 0.0);
            }
        }
    }
}

/// Explicit Euler for `dh/dt = −h·m(h)` with step halving on energy increase.
pub fn flow_to_vortex(
    q: &Quiver,
    rep: &Representation,
    rels: &[Relation],
    params: &StabilityParameters,
    opts: &FlowOptions,
    h0: &MetricAssignment,
) -> Result<(MetricAssignment, FlowReport)> {
    h0.validate(q, rep)?;
    if relation_residual(q, rep, rels)? > RELATION_TOL {
        return Err(Error::Invalid("representation does not satisfy the relations".into()));
    }
    let feas = check_feasibility(q, &rep.dims, params);
    let mut h = h0.clone();
    let mut m = moment_residual(q, rep, &h, params)?;
    let mut res = residual_norm(&h, &m)?;
    if !feas.feasible {
        let report = FlowReport { verdict: Verdict::Infeasible, iterations: 0, residual: res, eigen_bounds: (0.0, 0.0), final_step: opts.step };
        return Ok((h, report));
    }
    let mut energy = residual_energy(&m);
    let mut dt = opts.step;
    let mut iters = 0;
    let min_step = opts.step * 1e-12;
    let verdict = loop {
        if res <= opts.tol {
            break Verdict::Converged;
        }
        if iters >= opts.max_iters {
            break Verdict::MaxIters;
        }
        let (lo, hi) = log_bounds(h0, &h)?;
        if lo.abs().max(hi.abs()) > opts.divergence_bound {
            break Verdict::Diverged;
        }
        // Try a step; halve until the energy does not increase.
        let mut accepted = None;
        while dt >= min_step {
            let mut trial = MetricAssignment {
                metrics: h.metrics.iter().zip(&m).map(|(hh, mm)| herm_part(&(hh - hh * mm * c(dt, 0.0)))).collect(),
            };
            if trial.metrics.iter().all(|t| t.nrows() == 0 || cholesky(t).is_some()) {
                fix_gauge(q, rep, h0, &mut trial);
                let tm = moment_residual(q, rep, &trial, params)?;
                let te = residual_energy(&tm);
                if te <= energy * (1.0 + 1e-13) + 1e-300 {
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
        energy = ne;
        res = residual_norm(&h, &m)?;
        iters += 1;
        // Let the step recover after transient halvings.
        dt = (dt * 1.25).min(opts.step);
    };
    let eigen_bounds = log_bounds(h0, &h)?;
    Ok((h, FlowReport { verdict, iterations: iters, residual: res, eigen_bounds, final_step: dt }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityVerdict {
    PolystableEvidence,
    UnstableEvidence,
    Inconclusive,
}

/// A subrepresentation with `Σ τ′_λ dim W_λ < 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub dims: Vec<usize>,
    /// `Σ τ′_λ dim W_λ`.
    pub weight: f64,
    /// Orthonormal bases of `W_λ`.
    pub basis: Vec<Mat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub verdict: StabilityVerdict,
    pub flow: FlowReport,
    pub witness: Option<Witness>,
}

const SPAN_TOL: f64 = 1e-10;

/// Smallest subrepresentation containing the given generators.
pub fn generated_subrep(q: &Quiver, rep: &Representation, gens: &[Mat]) -> Vec<Mat> {
    let mut w: Vec<Mat> = gens.iter().map(|g| orth(g, SPAN_TOL)).collect();
    loop {
        let mut changed = false;
        for (a, phi) in rep.maps.iter().enumerate() {
            let (h, t) = (q.head(a), q.tail(a));
            if w[t].ncols() == 0 {
                continue;
            }
            let img = phi * &w[t];
            let joined = Mat::from_fn(rep.dims[h], w[h].ncols() + img.ncols(), |i, j| {
                if j < w[h].ncols() {
                    w[h][(i, j)]
                } else {
                    img[(i, j - w[h].ncols())]
                }
            });
            let nb = orth(&joined, SPAN_TOL);
            if nb.ncols() > w[h].ncols() {
                w[h] = nb;
                changed = true;
            }
        }
        if !changed {
            return w;
        }
    }
}

/// Searches subrepresentations generated by single vectors (all coordinate
/// vectors plus `budget` seeded random vectors) for a destabilizing one.
pub fn destabilizer_search(
    q: &Quiver,
    rep: &Representation,
    params: &StabilityParameters,
    budget: usize,
    seed: u64,
) -> Option<Witness> {
    let total: usize = rep.dims.iter().sum();
    let mut gensets: Vec<Vec<Mat>> = Vec::new();
    let empty = |rep: &Representation| rep.dims.iter().map(|&d| zeros(d, 0)).collect::<Vec<_>>();
    for v in 0..q.n_vertices() {
        for i in 0..rep.dims[v] {
            let mut g = empty(rep);
            g[v] = Mat::from_fn(rep.dims[v], 1, |r, _| if r == i { c(1.0, 0.0) } else { c(0.0, 0.0) });
            gensets.push(g);
        }
    }
    let support: Vec<usize> = (0..q.n_vertices()).filter(|&v| rep.dims[v] > 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..budget {
        if support.is_empty() {
            break;
        }
        let v = support[rng.gen_range(0..support.len())];
        let mut g = empty(rep);
        g[v] = random_matrix(&mut rng, rep.dims[v], 1);
        gensets.push(g);
    }
    let mut best: Option<Witness> = None;
    for g in gensets {
        let w = generated_subrep(q, rep, &g);
        let dims: Vec<usize> = w.iter().map(|b| b.ncols()).collect();
        let size: usize = dims.iter().sum();
        if size == 0 || size == total {
            continue;
        }
        let weight: f64 = dims.iter().zip(&params.tau_prime).map(|(&d, t)| d as f64 * t).sum();
        if weight < -1e-12 && best.as_ref().map_or(true, |b| weight < b.weight) {
            best = Some(Witness { dims, weight, basis: w });
        }
    }
    best
}

/// Flow convergence gives polystable evidence; otherwise a generated
/// destabilizing subrepresentation gives unstable evidence.
pub fn stability_probe(
    q: &Quiver,
    rep: &Representation,
    params: &StabilityParameters,
    budget: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let h0 = MetricAssignment::identity(rep);
    let (_, flow) = flow_to_vortex(q, rep, &[], params, &FlowOptions::default(), &h0)?;
    if flow.verdict == Verdict::Converged {
        return Ok(StabilityReport { verdict: StabilityVerdict::PolystableEvidence, flow, witness: None });
    }
    let witness = destabilizer_search(q, rep, params, budget, seed);
    let verdict = if witness.is_some() { StabilityVerdict::UnstableEvidence } else { StabilityVerdict::Inconclusive };
    Ok(StabilityReport { verdict, flow, witness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_hpd, scalar};

    fn kron() -> Quiver {
        Quiver::new(&[("v1", 1), ("v2", 1)], &[("a", "v1", "v2"), ("b", "v1", "v2")]).unwrap()
    }

    fn s(x: f64) -> Mat {
        scalar(c(x, 0.0))
    }

    #[test]
    fn adjoint_examples() {
        assert_eq!(metric_adjoint(&eye(2), &eye(2), &eye(2)).unwrap(), eye(2));
        assert_eq!(metric_adjoint(&s(1.0), &s(1.0), &s(4.0)).unwrap(), s(4.0));
        let n = Mat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(metric_adjoint(&n, &eye(2), &eye(2)).unwrap(), n.transpose());
        assert!(metric_adjoint(&s(1.0), &s(-1.0), &s(1.0)).is_err());
    }

    #[test]
    fn adjoint_pairing_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let phi = random_matrix(&mut rng, 3, 2);
            let (ht, hh) = (random_hpd(&mut rng, 2), random_hpd(&mut rng, 3));
            let adj = metric_adjoint(&phi, &ht, &hh).unwrap();
            let u = random_matrix(&mut rng, 2, 1);
            let v = random_matrix(&mut rng, 3, 1);
            let lhs = (v.adjoint() * &hh * &phi * &u)[(0, 0)];
            let rhs = ((&adj * &v).adjoint() * &ht * &u)[(0, 0)];
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn residual_examples() {
        let q = Quiver::new(&[("v", 1)], &[] as &[(&str, &str, &str)]).unwrap();
        let rep = Representation::new(&q, vec![2], vec![]).unwrap();
        let m = moment_residual(&q, &rep, &MetricAssignment::identity(&rep), &StabilityParameters::new(vec![0.0])).unwrap();
        assert_eq!(m[0], zeros(2, 2));

        let a2 = Quiver::new(&[("v1", 1), ("v2", 1)], &[("a", "v1", "v2")]).unwrap();
        let rep = Representation::new(&a2, vec![1, 1], vec![s(1.0)]).unwrap();
        let m = moment_residual(&a2, &rep, &MetricAssignment::identity(&rep), &StabilityParameters::new(vec![-1.0, 1.0])).unwrap();
        assert_eq!((m[0][(0, 0)], m[1][(0, 0)]), (c(0.0, 0.0), c(0.0, 0.0)));

        let k = kron();
        let rep = Representation::new(&k, vec![1, 1], vec![s(1.0), s(1.0)]).unwrap();
        let m = moment_residual(&k, &rep, &MetricAssignment::identity(&rep), &StabilityParameters::new(vec![-1.0, 1.0])).unwrap();
        assert_eq!((m[0][(0, 0)].re, m[1][(0, 0)].re), (-1.0, 1.0));
    }

    #[test]
    fn trivial_flow_takes_no_steps() {
        let q = Quiver::new(&[("v", 1)], &[] as &[(&str, &str, &str)]).unwrap();
        let rep = Representation::new(&q, vec![1], vec![]).unwrap();
        let h0 = MetricAssignment::identity(&rep);
        let (h, r) = flow_to_vortex(&q, &rep, &[], &StabilityParameters::new(vec![0.0]), &FlowOptions::default(), &h0).unwrap();
        assert_eq!(r.verdict, Verdict::Converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(h.metrics[0], eye(1));
    }

    #[test]
    fn kronecker_ratio_is_one_half() {
        let k = kron();
        let rep = Representation::new(&k, vec![1, 1], vec![s(1.0), s(1.0)]).unwrap();
        let h0 = MetricAssignment::identity(&rep);
        let (h, r) = flow_to_vortex(&k, &rep, &[], &StabilityParameters::new(vec![-1.0, 1.0]), &FlowOptions::default(), &h0).unwrap();
        assert_eq!(r.verdict, Verdict::Converged);
        let ratio = h.metrics[1][(0, 0)].re / h.metrics[0][(0, 0)].re;
        assert!((ratio - 0.5).abs() < 1e-8, "{ratio}");
        assert!(r.residual <= 1e-9);
    }

    #[test]
    fn a2_zero_map_diverges() {
        let a2 = Quiver::new(&[("v1", 1), ("v2", 1)], &[("a", "v1", "v2")]).unwrap();
        let rep = Representation::new(&a2, vec![1, 1], vec![s(0.0)]).unwrap();
        let h0 = MetricAssignment::identity(&rep);
        let (_, r) = flow_to_vortex(&a2, &rep, &[], &StabilityParameters::new(vec![-1.0, 1.0]), &FlowOptions::default(), &h0).unwrap();
        assert_eq!(r.verdict, Verdict::Diverged);
    }

    #[test]
    fn infeasible_is_immediate() {
        let k = kron();
        let rep = Representation::new(&k, vec![1, 1], vec![s(1.0), s(1.0)]).unwrap();
        let h0 = MetricAssignment::identity(&rep);
        let (_, r) = flow_to_vortex(&k, &rep, &[], &StabilityParameters::new(vec![1.0, 1.0]), &FlowOptions::default(), &h0).unwrap();
        assert_eq!(r.verdict, Verdict::Infeasible);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn probe_examples() {
        let k = kron();
        let rep = Representation::new(&k, vec![1, 1], vec![s(1.0), s(1.0)]).unwrap();
        let r = stability_probe(&k, &rep, &StabilityParameters::new(vec![-1.0, 1.0]), 4, 1).unwrap();
        assert_eq!(r.verdict, StabilityVerdict::PolystableEvidence);

        let a2 = Quiver::new(&[("v1", 1), ("v2", 1)], &[("a", "v1", "v2")]).unwrap();
        let rep = Representation::new(&a2, vec![1, 1], vec![s(0.0)]).unwrap();
        let r = stability_probe(&a2, &rep, &StabilityParameters::new(vec![1.0, -1.0]), 4, 1).unwrap();
        assert_eq!(r.verdict, StabilityVerdict::UnstableEvidence);
        assert_eq!(r.witness.unwrap().dims, vec![0, 1]);

        let one = Quiver::new(&[("v", 1)], &[] as &[(&str, &str, &str)]).unwrap();
        let rep = Representation::new(&one, vec![1], vec![]).unwrap();
        let r = stability_probe(&one, &rep, &StabilityParameters::new(vec![0.0]), 4, 1).unwrap();
        assert_eq!(r.verdict, StabilityVerdict::PolystableEvidence);
    }
}
