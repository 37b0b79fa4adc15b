//! Quivers with relations, linear representations, slopes and feasibility.

use crate::error::{Error, Result};
use crate::linalg::{eye, fnorm, max_abs, zeros, Mat, C64};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub id: String,
    /// Multiplicity weight `n_λ ≥ 1`.
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arrow {
    pub id: String,
    pub tail: usize,
    pub head: usize,
}

/// A finite quiver with positive integer vertex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Quiver {
    vertices: Vec<Vertex>,
    arrows: Vec<Arrow>,
    vindex: HashMap<String, usize>,
    aindex: HashMap<String, usize>,
}

impl Quiver {
    /// Builds a quiver from `(id, weight)` vertices and `(id, tail, head)` arrows.
    pub fn new<S: AsRef<str>>(vertices: &[(S, u32)], arrows: &[(S, S, S)]) -> Result<Self> {
        let mut vindex = HashMap::new();
        let mut vs = Vec::new();
        for (id, w) in vertices {
            let id = id.as_ref().to_string();
            if *w == 0 {
                return Err(Error::Invalid(format!("vertex `{id}` has weight 0")));
            }
            if vindex.insert(id.clone(), vs.len()).is_some() {
                return Err(Error::DuplicateId(id));
            }
            vs.push(Vertex { id, weight: *w });
        }
        let mut aindex = HashMap::new();
        let mut arr = Vec::new();
        for (id, t, h) in arrows {
            let id = id.as_ref().to_string();
            if vindex.contains_key(&id) || aindex.contains_key(&id) {
                return Err(Error::DuplicateId(id));
            }
            let tail = *vindex
                .get(t.as_ref())
                .ok_or_else(|| Error::UnknownVertex(t.as_ref().into()))?;
            let head = *vindex
                .get(h.as_ref())
                .ok_or_else(|| Error::UnknownVertex(h.as_ref().into()))?;
            aindex.insert(id.clone(), arr.len());
            arr.push(Arrow { id, tail, head });
        }
        Ok(Self { vertices: vs, arrows: arr, vindex, aindex })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_arrows(&self) -> usize {
        self.arrows.len()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn arrows(&self) -> &[Arrow] {
        &self.arrows
    }

    pub fn vertex(&self, id: &str) -> Result<usize> {
        self.vindex.get(id).copied().ok_or_else(|| Error::UnknownVertex(id.into()))
    }

    pub fn arrow(&self, id: &str) -> Result<usize> {
        self.aindex.get(id).copied().ok_or_else(|| Error::UnknownArrow(id.into()))
    }

    pub fn head(&self, a: usize) -> usize {
        self.arrows[a].head
    }

    pub fn tail(&self, a: usize) -> usize {
        self.arrows[a].tail
    }

    pub fn weight(&self, v: usize) -> f64 {
        self.vertices[v].weight as f64
    }

    /// Arrows with head `v`.
    pub fn incoming(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.arrows.len()).filter(move |&a| self.arrows[a].head == v)
    }

    /// Arrows with tail `v`.
    pub fn outgoing(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.arrows.len()).filter(move |&a| self.arrows[a].tail == v)
    }

    /// Connected components of the underlying graph restricted to `support`.
    pub fn components(&self, support: &[bool]) -> Vec<Vec<usize>> {
        let n = self.n_vertices();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for s in 0..n {
            if !support[s] || label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = comps.len();
            let mut comp = vec![];
            while let Some(v) = stack.pop() {
                comp.push(v);
                for a in &self.arrows {
                    for (x, y) in [(a.tail, a.head), (a.head, a.tail)] {
                        if x == v && support[y] && label[y] == usize::MAX {
                            label[y] = comps.len();
                            stack.push(y);
                        }
                    }
                }
            }
            comp.sort();
            comps.push(comp);
        }
        comps
    }
}

/// A path `a₀⋯a_m` (stored in that order) or the trivial path at a vertex.
#[derive(Debug, Clone, PartialEq)]
pub enum Path {
    Trivial(usize),
    Arrows(Vec<usize>),
}

impl Path {
    /// Validates composability `t(a_{i-1}) = h(a_i)`.
    pub fn new(q: &Quiver, arrows: Vec<usize>) -> Result<Self> {
        if arrows.is_empty() {
            return Err(Error::Invalid("empty arrow list; use Path::Trivial".into()));
        }
        for &a in &arrows {
            if a >= q.n_arrows() {
                return Err(Error::UnknownArrow(a.to_string()));
            }
        }
        for i in 1..arrows.len() {
            if q.tail(arrows[i - 1]) != q.head(arrows[i]) {
                return Err(Error::NotComposable(i));
            }
        }
        Ok(Path::Arrows(arrows))
    }

    pub fn from_ids(q: &Quiver, ids: &[&str]) -> Result<Self> {
        let arrows = ids.iter().map(|id| q.arrow(id)).collect::<Result<Vec<_>>>()?;
        Self::new(q, arrows)
    }

    pub fn head(&self, q: &Quiver) -> usize {
        match self {
            Path::Trivial(v) => *v,
            Path::Arrows(a) => q.head(a[0]),
        }
    }

    pub fn tail(&self, q: &Quiver) -> usize {
        match self {
            Path::Trivial(v) => *v,
            Path::Arrows(a) => q.tail(*a.last().unwrap()),
        }
    }

    /// Concatenation `self · other` (apply `other` first).
    pub fn compose(&self, q: &Quiver, other: &Path) -> Result<Path> {
        if self.tail(q) != other.head(q) {
            return Err(Error::NotComposable(0));
        }
        Ok(match (self, other) {
            (Path::Trivial(_), p) => p.clone(),
            (p, Path::Trivial(_)) => p.clone(),
            (Path::Arrows(a), Path::Arrows(b)) => Path::Arrows(a.iter().chain(b).copied().collect()),
        })
    }

    /// Vertices visited, from head to tail.
    pub fn vertices(&self, q: &Quiver) -> Vec<usize> {
        match self {
            Path::Trivial(v) => vec![*v],
            Path::Arrows(a) => {
                let mut vs = vec![q.head(a[0])];
                vs.extend(a.iter().map(|&x| q.tail(x)));
                vs
            }
        }
    }
}

/// A formal linear combination of paths with common endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub terms: Vec<(C64, Path)>,
}

impl Relation {
    pub fn new(q: &Quiver, terms: Vec<(C64, Path)>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidRelation("no terms".into()));
        }
        if terms.iter().any(|(c, _)| c.norm() == 0.0) {
            return Err(Error::InvalidRelation("zero coefficient".into()));
        }
        let r = Relation { terms };
        r.endpoints(q)?;
        Ok(r)
    }

    /// Common `(head, tail)` of all terms.
    pub fn endpoints(&self, q: &Quiver) -> Result<(usize, usize)> {
        let h = self.terms[0].1.head(q);
        let t = self.terms[0].1.tail(q);
        for (_, p) in &self.terms {
            if p.head(q) != h || p.tail(q) != t {
                return Err(Error::MixedEndpoints(format!(
                    "expected {}→{}, found {}→{}",
                    q.vertices()[t].id,
                    q.vertices()[h].id,
                    q.vertices()[p.tail(q)].id,
                    q.vertices()[p.head(q)].id
                )));
            }
        }
        Ok((h, t))
    }
}

/// Linear maps `φ_a : V_{t(a)} → V_{h(a)}` on spaces of dimensions `d_λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub dims: Vec<usize>,
    pub maps: Vec<Mat>,
}

impl Representation {
    /// Validates shapes; arrows touching zero-dimensional vertices are rejected.
    pub fn new(q: &Quiver, dims: Vec<usize>, maps: Vec<Mat>) -> Result<Self> {
        if dims.len() != q.n_vertices() {
            return Err(Error::ShapeMismatch(format!(
                "{} dims for {} vertices",
                dims.len(),
                q.n_vertices()
            )));
        }
        if maps.len() != q.n_arrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} maps for {} arrows",
                maps.len(),
                q.n_arrows()
            )));
        }
        for (a, m) in maps.iter().enumerate() {
            let (h, t) = (q.head(a), q.tail(a));
            if dims[h] == 0 || dims[t] == 0 {
                let v = if dims[h] == 0 { h } else { t };
                return Err(Error::EmptySpace(q.vertices()[v].id.clone()));
            }
            if m.shape() != (dims[h], dims[t]) {
                return Err(Error::ShapeMismatch(format!(
                    "arrow `{}` has shape {:?}, expected {:?}",
                    q.arrows()[a].id,
                    m.shape(),
                    (dims[h], dims[t])
                )));
            }
        }
        Ok(Self { dims, maps })
    }

    pub fn zero(q: &Quiver, dims: Vec<usize>) -> Result<Self> {
        let maps = q.arrows().iter().map(|a| zeros(dims[a.head], dims[a.tail])).collect();
        Self::new(q, dims, maps)
    }

    /// Vertices with `d_λ > 0`.
    pub fn support(&self) -> Vec<bool> {
        self.dims.iter().map(|&d| d > 0).collect()
    }
}

/// `φ(p) = φ_{a₀}·…·φ_{a_m}`; the trivial path maps to the identity.
pub fn evaluate_path(q: &Quiver, rep: &Representation, p: &Path) -> Result<Mat> {
    for v in p.vertices(q) {
        if rep.dims.get(v).copied().unwrap_or(0) == 0 {
            return Err(Error::EmptySpace(q.vertices()[v].id.clone()));
        }
    }
    match p {
        Path::Trivial(v) => Ok(eye(rep.dims[*v])),
        Path::Arrows(arrows) => {
            let mut acc = rep.maps[arrows[0]].clone();
            for &a in &arrows[1..] {
                let m = &rep.maps[a];
                if acc.ncols() != m.nrows() {
                    return Err(Error::ShapeMismatch(format!(
                        "cannot compose {:?} with {:?}",
                        acc.shape(),
                        m.shape()
                    )));
                }
                acc = acc * m;
            }
            Ok(acc)
        }
    }
}

/// `Σ_j c_j φ(p_j)`.
pub fn evaluate_relation(q: &Quiver, rep: &Representation, r: &Relation) -> Result<Mat> {
    let (h, t) = r.endpoints(q)?;
    let mut acc = zeros(rep.dims[h], rep.dims[t]);
    for (coef, p) in &r.terms {
        acc += evaluate_path(q, rep, p)? * *coef;
    }
    Ok(acc)
}

/// Largest sup-norm relation residual over `rels`.
pub fn relation_residual(q: &Quiver, rep: &Representation, rels: &[Relation]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for r in rels {
        worst = worst.max(max_abs(&evaluate_relation(q, rep, r)?));
    }
    Ok(worst)
}

pub fn satisfies_relations(q: &Quiver, rep: &Representation, rels: &[Relation], tol: f64) -> Result<bool> {
    Ok(relation_residual(q, rep, rels)? <= tol)
}

/// Default sup-norm tolerance for relation satisfaction.
pub const RELATION_TOL: f64 = 1e-10;

/// Stability parameters: `τ′_λ` per vertex and optional `σ`/`τ` sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityParameters {
    pub tau_prime: Vec<f64>,
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub tau: Option<Vec<f64>>,
}

impl StabilityParameters {
    pub fn new(tau_prime: Vec<f64>) -> Self {
        Self { tau_prime, sigma: None, tau: None }
    }
}

/// `μ_σ = (deg + Σ_{j<m} σ_j·ranks[j]) / ranks[m]`.
pub fn sigma_slope(ranks: &[usize], deg: f64, sigma: &[f64]) -> Result<f64> {
    let Some(&rk) = ranks.last() else {
        return Err(Error::ZeroRank);
    };
    if rk == 0 {
        return Err(Error::ZeroRank);
    }
    if sigma.len() + 1 != ranks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} sigma values for {} ranks",
            sigma.len(),
            ranks.len()
        )));
    }
    let weighted: f64 = sigma.iter().zip(ranks).map(|(s, &r)| s * r as f64).sum();
    Ok((deg + weighted) / rk as f64)
}

/// Absolute tolerance on the trace constraint.
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `Σ_λ τ′_λ d_λ`.
    pub trace_sum: f64,
    /// `σ_j > 0` per entry, when σ is given.
    pub sigma_positive: Vec<bool>,
    /// Whether `σ_j = τ_{j+1} − τ_j` holds, when both are given.
    pub sigma_matches_tau: Option<bool>,
    pub feasible: bool,
    pub reason: Option<String>,
}

/// Reports the trace constraint and the σ/τ conditions.
pub fn check_feasibility(q: &Quiver, dims: &[usize], params: &StabilityParameters) -> FeasibilityReport {
    let mut reason = None;
    if params.tau_prime.len() != q.n_vertices() || dims.len() != q.n_vertices() {
        return FeasibilityReport {
            trace_sum: f64::NAN,
            sigma_positive: vec![],
            sigma_matches_tau: None,
            feasible: false,
            reason: Some("parameter length does not match vertex count".into()),
        };
    }
    // Summing sorted terms makes the result independent of vertex order.
    let mut terms: Vec<f64> = params.tau_prime.iter().zip(dims).map(|(t, &d)| t * d as f64).collect();
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let trace_sum: f64 = terms.iter().sum();
    let mut feasible = trace_sum.abs() <= FEASIBILITY_TOL;
    if !feasible {
        reason = Some(format!("trace constraint violated: Σ τ′_λ d_λ = {trace_sum}"));
    }
    let sigma_positive: Vec<bool> = params.sigma.as_ref().map(|s| s.iter().map(|&x| x > 0.0).collect()).unwrap_or_default();
    if sigma_positive.iter().any(|p| !p) {
        feasible = false;
        reason.get_or_insert_with(|| "σ_j must be positive".into());
    }
    let sigma_matches_tau = match (&params.sigma, &params.tau) {
        (Some(s), Some(t)) => {
            let ok = t.len() == s.len() + 1
                && s.iter().enumerate().all(|(j, &sj)| (sj - (t[j + 1] - t[j])).abs() <= FEASIBILITY_TOL * (1.0 + sj.abs()));
            if !ok {
                feasible = false;
                reason.get_or_insert_with(|| "σ_j ≠ τ_{j+1} − τ_j".into());
            }
            Some(ok)
        }
        _ => None,
    };
    FeasibilityReport { trace_sum, sigma_positive, sigma_matches_tau, feasible, reason }
}

/// Relative deviation helper used by functoriality checks.
pub fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    fnorm(&(a - b)) / (1.0 + fnorm(a).max(fnorm(b)))
}
