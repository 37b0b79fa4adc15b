//! Scenario documents: a strict JSON schema describing a quiver, its
//! relations, a representation or a holomorphic family, stability
//! parameters, a backend and the requested computations. Complex numbers
//! are `[re, im]` pairs and matrices are row-major arrays of rows.

use crate::defcomplex::Backend;
use crate::error::{Error, Result};
use crate::family::{Family, Poly, StencilOptions};
use crate::grid::{ops, Field, Spectral, TorusGeometry};
use crate::linalg::{c, zeros, Mat, C64};
use crate::quiver::{Path, Quiver, Relation, Representation, StabilityParameters};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const SCHEMA_VERSION: u32 = 1;

/// Row-major complex matrix.
pub type MatrixSpec = Vec<Vec<C64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexSpec {
    pub id: String,
    #[serde(default = "one")]
    pub weight: u32,
    pub dim: usize,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrowSpec {
    pub id: String,
    pub tail: String,
    pub head: String,
}

/// One term `coef · a₀a₁⋯` of a relation; an empty `path` with `vertex`
/// set denotes the trivial path there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub coef: C64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSpec {
    pub terms: Vec<TermSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Point,
    Torus { modes: usize, modulus: C64, area: f64 },
}

/// `coef · s^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialSpec {
    pub exponent: Vec<u32>,
    pub coef: MatrixSpec,
}

/// `coef · e^{2πi(m₁u + m₂v)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub mode: [i64; 2],
    pub coef: MatrixSpec,
}

/// `s^exponent · Σ modes` for a Dolbeault deformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMonomialSpec {
    pub exponent: Vec<u32>,
    pub modes: Vec<ModeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// A single representation; arrows missing from `maps` are zero.
    Representation { maps: BTreeMap<String, MatrixSpec> },
    /// A family over a neighbourhood of `base_point` in `ℂ^k`. On the torus
    /// the `phi` monomials prescribe constant Fourier modes and the rest is
    /// resolved from holomorphy.
    Family {
        base_point: Vec<C64>,
        phi: BTreeMap<String, Vec<MonomialSpec>>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        alpha: BTreeMap<String, Vec<FieldMonomialSpec>>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl SolverSpec {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Request {
    Solve,
    Deform,
    Wp,
    Curvature,
    Fiberint,
    Chern,
    Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub vertices: Vec<VertexSpec>,
    #[serde(default)]
    pub arrows: Vec<ArrowSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relations: Vec<RelationSpec>,
    pub tau_prime: Vec<f64>,
    pub backend: BackendSpec,
    pub data: DataSpec,
    #[serde(default, skip_serializing_if = "SolverSpec::is_empty")]
    pub solver: SolverSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stencil: Option<StencilOptions>,
    pub requests: Vec<Request>,
}

/// What a scenario builds into.
pub enum Target {
    Representation(Representation),
    Family(Box<Family>),
}

pub struct Built {
    pub quiver: Quiver,
    pub relations: Vec<Relation>,
    pub dims: Vec<usize>,
    pub params: StabilityParameters,
    pub backend: Backend,
    pub target: Target,
}

fn matrix(m: &MatrixSpec, rows: usize, cols: usize, what: &str) -> Result<Mat> {
    // A 0×n or n×0 matrix has no rows to list; accept `[]` for it.
    if (rows == 0 || cols == 0) && m.iter().all(|r| r.is_empty()) {
        return Ok(zeros(rows, cols));
    }
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::ShapeMismatch(format!("{what}: expected {rows}×{cols}")));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| m[i][j]))
}

pub fn matrix_spec(m: &Mat) -> MatrixSpec {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::Invalid(format!("scenario: {e}")))?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!("unsupported schema version {}", s.schema_version)));
        }
        Ok(s)
    }

    /// Canonical text: pretty JSON with sorted map keys and a trailing newline.
    pub fn to_canonical(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn quiver(&self) -> Result<Quiver> {
        let vs: Vec<(&str, u32)> = self.vertices.iter().map(|v| (v.id.as_str(), v.weight)).collect();
        let arrs: Vec<(&str, &str, &str)> = self.arrows.iter().map(|a| (a.id.as_str(), a.tail.as_str(), a.head.as_str())).collect();
        Quiver::new(&vs, &arrs)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.vertices.iter().map(|v| v.dim).collect()
    }

    pub fn spectral(&self) -> Result<Option<Spectral>> {
        match &self.backend {
            BackendSpec::Point => Ok(None),
            BackendSpec::Torus { modes, modulus, area } => Ok(Some(Spectral::new(TorusGeometry::new(*modulus, *area, *modes)?))),
        }
    }

    pub fn build(&self) -> Result<Built> {
        let q = self.quiver()?;
        let dims = self.dims();
        if self.tau_prime.len() != q.n_vertices() {
            return Err(Error::ShapeMismatch("tau_prime must list one value per vertex".into()));
        }
        let params = StabilityParameters::new(self.tau_prime.clone());
        let relations = self
            .relations
            .iter()
            .map(|r| {
                let terms = r
                    .terms
                    .iter()
                    .map(|t| {
                        let p = match (&t.vertex, t.path.is_empty()) {
                            (Some(v), true) => Path::Trivial(q.vertex(v)?),
                            (None, false) => Path::from_ids(&q, &t.path.iter().map(String::as_str).collect::<Vec<_>>())?,
                            _ => return Err(Error::InvalidRelation("a term needs either `path` or `vertex`".into())),
                        };
                        Ok((t.coef, p))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Relation::new(&q, terms)
            })
            .collect::<Result<Vec<_>>>()?;
        let sp = self.spectral()?;
        let backend = match &sp {
            None => Backend::Point,
            Some(s) => Backend::Torus(s.clone()),
        };
        let shape = |a: usize| (dims[q.head(a)], dims[q.tail(a)]);
        let target = match &self.data {
            DataSpec::Representation { maps } => {
                for id in maps.keys() {
                    q.arrow(id)?;
                }
                let ms = (0..q.n_arrows())
                    .map(|a| {
                        let (r, cc) = shape(a);
                        let id = &q.arrows()[a].id;
                        maps.get(id).map_or(Ok(zeros(r, cc)), |m| matrix(m, r, cc, &format!("map `{id}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if sp.is_some() {
                    return Err(Error::Unsupported("single representations run on the point backend; use a family on the torus".into()));
                }
                Target::Representation(Representation::new(&q, dims.clone(), ms)?)
            }
            DataSpec::Family { base_point, phi, alpha } => {
                let k = base_point.len();
                for id in phi.keys() {
                    q.arrow(id)?;
                }
                for id in alpha.keys() {
                    q.vertex(id)?;
                }
                let phi_polys = (0..q.n_arrows())
                    .map(|a| {
                        let (r, cc) = shape(a);
                        let id = &q.arrows()[a].id;
                        let terms = phi
                            .get(id)
                            .map(|ms| {
                                ms.iter()
                                    .map(|m| {
                                        if m.exponent.len() != k {
                                            return Err(Error::ShapeMismatch(format!("exponent of `{id}` needs {k} entries")));
                                        }
                                        Ok((m.exponent.clone(), matrix(&m.coef, r, cc, &format!("phi `{id}`"))?))
                                    })
                                    .collect::<Result<Vec<_>>>()
                            })
                            .transpose()?
                            .unwrap_or_default();
                        Poly::new(k, zeros(r, cc), terms)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut fam = match &sp {
                    None => {
                        if !alpha.is_empty() {
                            return Err(Error::Unsupported("Dolbeault deformations need the torus backend".into()));
                        }
                        Family::point(&q, &relations, &dims, &params, base_point, &phi_polys)?
                    }
                    Some(s) => {
                        if !relations.is_empty() {
                            return Err(Error::Unsupported("relations on the torus backend".into()));
                        }
                        let alpha_polys = (0..q.n_vertices())
                            .map(|v| {
                                let d = dims[v];
                                let id = &q.vertices()[v].id;
                                let terms = alpha
                                    .get(id)
                                    .map(|ms| {
                                        ms.iter()
                                            .map(|m| {
                                                if m.exponent.len() != k {
                                                    return Err(Error::ShapeMismatch(format!("exponent of alpha `{id}` needs {k} entries")));
                                                }
                                                let modes = m
                                                    .modes
                                                    .iter()
                                                    .map(|md| Ok((md.mode[0], md.mode[1], matrix(&md.coef, d, d, &format!("alpha `{id}`"))?)))
                                                    .collect::<Result<Vec<_>>>()?;
                                                Ok((m.exponent.clone(), s.trig(&modes)))
                                            })
                                            .collect::<Result<Vec<(Vec<u32>, Field)>>>()
                                    })
                                    .transpose()?
                                    .unwrap_or_default();
                                Poly::new(k, ops::zero(d, d, s.npts()), terms)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        Family::torus(&q, s, &dims, &params, base_point, &phi_polys, alpha_polys)?
                    }
                };
                if let Some(st) = self.stencil {
                    fam.stencil = st;
                }
                if let Some(t) = self.solver.tol {
                    fam.point_flow.tol = t;
                    fam.torus_flow.tol = t;
                }
                if let Some(m) = self.solver.max_iters {
                    fam.point_flow.max_iters = m;
                    fam.torus_flow.max_iters = m;
                }
                if let Some(st) = self.solver.step {
                    fam.point_flow.step = st;
                    fam.torus_flow.step = st;
                }
                Target::Family(Box::new(fam))
            }
        };
        Ok(Built { quiver: q, relations, dims, params, backend, target })
    }

    /// Same scenario on another backend. Point data lifts to constant modes;
    /// torus data drops to the point backend only without Dolbeault terms.
    pub fn with_backend(&self, backend: BackendSpec) -> Result<Self> {
        let mut out = self.clone();
        if let (BackendSpec::Point, DataSpec::Family { alpha, .. }) = (&backend, &self.data) {
            if !alpha.is_empty() {
                return Err(Error::Unsupported("cannot drop Dolbeault deformations to the point backend".into()));
            }
        }
        if let (BackendSpec::Torus { .. }, DataSpec::Representation { maps }) = (&backend, &self.data) {
            let k = 0;
            let phi = maps.iter().map(|(id, m)| (id.clone(), vec![MonomialSpec { exponent: vec![0; k], coef: m.clone() }])).collect();
            out.data = DataSpec::Family { base_point: vec![], phi, alpha: BTreeMap::new() };
        }
        out.backend = backend;
        Ok(out)
    }
}

/// Parses a backend override of the form `point` or `torus:N[:area]`.
pub fn parse_backend_override(s: &str, current: &BackendSpec) -> Result<BackendSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["point"] => Ok(BackendSpec::Point),
        ["torus", rest @ ..] if rest.len() <= 2 => {
            let (m0, a0) = match current {
                BackendSpec::Torus { modulus, area, .. } => (*modulus, *area),
                BackendSpec::Point => (c(0.0, 1.0), 1.0),
            };
            let modes = rest.first().map(|x| x.parse::<usize>()).transpose().map_err(|e| Error::Invalid(format!("torus modes: {e}")))?.unwrap_or(8);
            let area = rest.get(1).map(|x| x.parse::<f64>()).transpose().map_err(|e| Error::Invalid(format!("torus area: {e}")))?.unwrap_or(a0);
            Ok(BackendSpec::Torus { modes, modulus: m0, area })
        }
        _ => Err(Error::Invalid(format!("backend override `{s}`: expected `point` or `torus:N[:area]`"))),
    }
}

/// Shipped example scenarios.
pub mod presets {
    use super::*;

    fn v(id: &str, dim: usize) -> VertexSpec {
        VertexSpec { id: id.into(), weight: 1, dim }
    }

    fn a(id: &str, tail: &str, head: &str) -> ArrowSpec {
        ArrowSpec { id: id.into(), tail: tail.into(), head: head.into() }
    }

    fn m1(x: C64) -> MatrixSpec {
        vec![vec![x]]
    }

    fn re(x: f64) -> MatrixSpec {
        m1(c(x, 0.0))
    }

    fn mono(exponent: Vec<u32>, coef: MatrixSpec) -> MonomialSpec {
        MonomialSpec { exponent, coef }
    }

    fn base(name: &str, vertices: Vec<VertexSpec>, arrows: Vec<ArrowSpec>, tau: Vec<f64>, data: DataSpec, requests: Vec<Request>) -> Scenario {
        Scenario {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            vertices,
            arrows,
            relations: vec![],
            tau_prime: tau,
            backend: BackendSpec::Point,
            data,
            solver: SolverSpec::default(),
            stencil: None,
            requests,
        }
    }

    /// Kronecker quiver `1 ⇉ 2`, dims (1,1), τ′ = (−1, 1), family `φ = (1, s)`.
    pub fn kronecker_point() -> Scenario {
        let phi = BTreeMap::from([("a".to_string(), vec![mono(vec![0], re(1.0))]), ("b".to_string(), vec![mono(vec![1], re(1.0))])]);
        base(
            "kronecker_point",
            vec![v("1", 1), v("2", 1)],
            vec![a("a", "1", "2"), a("b", "1", "2")],
            vec![-1.0, 1.0],
            DataSpec::Family { base_point: vec![c(0.3, -0.2)], phi, alpha: BTreeMap::new() },
            vec![Request::Solve, Request::Deform, Request::Wp, Request::Curvature],
        )
    }

    /// Three arrows `1 → 2`, family `φ = (1, s₁, s₂)`.
    pub fn three_arrow_point() -> Scenario {
        let phi = BTreeMap::from([
            ("a".to_string(), vec![mono(vec![0, 0], re(1.0))]),
            ("b".to_string(), vec![mono(vec![1, 0], re(1.0))]),
            ("c".to_string(), vec![mono(vec![0, 1], re(1.0))]),
        ]);
        base(
            "three_arrow_point",
            vec![v("1", 1), v("2", 1)],
            vec![a("a", "1", "2"), a("b", "1", "2"), a("c", "1", "2")],
            vec![-1.0, 1.0],
            DataSpec::Family { base_point: vec![c(0.2, 0.1), c(-0.3, 0.2)], phi, alpha: BTreeMap::new() },
            vec![Request::Solve, Request::Deform, Request::Wp, Request::Curvature],
        )
    }

    /// `A₂` with dims (1,1) and the rigid family `φ = 1 + s`.
    pub fn a2_rigid() -> Scenario {
        let phi = BTreeMap::from([("a".to_string(), vec![mono(vec![0], re(1.0)), mono(vec![1], re(1.0))])]);
        base(
            "a2_rigid",
            vec![v("1", 1), v("2", 1)],
            vec![a("a", "1", "2")],
            vec![-1.0, 1.0],
            DataSpec::Family { base_point: vec![c(0.1, 0.0)], phi, alpha: BTreeMap::new() },
            vec![Request::Solve, Request::Deform, Request::Wp],
        )
    }

    /// `A₂` with dims (1,2) and a generic map; no vortex metric exists for it.
    pub fn a2_generic_12() -> Scenario {
        let maps = BTreeMap::from([("a".to_string(), vec![vec![c(1.0, 0.0)], vec![c(0.5, 0.25)]])]);
        base("a2_generic_12", vec![v("1", 1), v("2", 2)], vec![a("a", "1", "2")], vec![-2.0, 1.0], DataSpec::Representation { maps }, vec![Request::Solve])
    }

    /// Square `1 → 2 → 3` and `1 → 3` with `b·a = c` (paths listed head first).
    pub fn commuting_square() -> Scenario {
        let maps = BTreeMap::from([("a".to_string(), re(1.0)), ("b".to_string(), m1(c(0.8, 0.3))), ("c".to_string(), m1(c(0.8, 0.3)))]);
        let mut s = base(
            "commuting_square",
            vec![v("1", 1), v("2", 1), v("3", 1)],
            vec![a("a", "1", "2"), a("b", "2", "3"), a("c", "1", "3")],
            vec![-2.0, 1.0, 1.0],
            DataSpec::Representation { maps },
            vec![Request::Solve, Request::Deform],
        );
        s.relations = vec![RelationSpec {
            terms: vec![
                TermSpec { coef: c(1.0, 0.0), path: vec!["b".into(), "a".into()], vertex: None },
                TermSpec { coef: c(-1.0, 0.0), path: vec!["c".into()], vertex: None },
            ],
        }];
        s
    }

    /// A family that does not move.
    pub fn constant_point() -> Scenario {
        let phi = BTreeMap::from([("a".to_string(), vec![mono(vec![0], re(1.0))]), ("b".to_string(), vec![mono(vec![0], re(0.5))])]);
        base(
            "constant_point",
            vec![v("1", 1), v("2", 1)],
            vec![a("a", "1", "2"), a("b", "1", "2")],
            vec![-1.0, 1.0],
            DataSpec::Family { base_point: vec![c(0.0, 0.0)], phi, alpha: BTreeMap::new() },
            vec![Request::Solve, Request::Wp],
        )
    }

    pub fn empty() -> Scenario {
        base("empty", vec![], vec![], vec![], DataSpec::Representation { maps: BTreeMap::new() }, vec![Request::Solve])
    }

    /// Kronecker data with τ′ violating the trace constraint.
    pub fn infeasible() -> Scenario {
        let maps = BTreeMap::from([("a".to_string(), re(1.0)), ("b".to_string(), re(0.5))]);
        base("infeasible", vec![v("1", 1), v("2", 1)], vec![a("a", "1", "2"), a("b", "1", "2")], vec![-1.0, 2.0], DataSpec::Representation { maps }, vec![Request::Solve])
    }

    fn torus(modes: usize) -> BackendSpec {
        BackendSpec::Torus { modes, modulus: c(0.15, 1.2), area: 2.0 }
    }

    /// Kronecker family with constant data on the torus.
    pub fn torus_kronecker(modes: usize) -> Scenario {
        let mut s = kronecker_point();
        s.name = "torus_kronecker".into();
        s.backend = torus(modes);
        s.requests = vec![Request::Solve, Request::Deform, Request::Wp, Request::Fiberint, Request::Chern];
        s
    }

    /// One rank-2 vertex, no arrows, `α = s·diag(b, −b)` with non-constant `b`.
    pub fn torus_rank_two(modes: usize) -> Scenario {
        let d = |x: C64| vec![vec![x, c(0.0, 0.0)], vec![c(0.0, 0.0), -x]];
        let alpha = BTreeMap::from([(
            "1".to_string(),
            vec![FieldMonomialSpec {
                exponent: vec![1],
                modes: vec![
                    ModeSpec { mode: [0, 0], coef: d(c(0.4, 0.1)) },
                    ModeSpec { mode: [1, 0], coef: d(c(0.1, 0.0)) },
                    ModeSpec { mode: [-1, 0], coef: d(c(0.1, 0.0)) },
                    ModeSpec { mode: [0, 1], coef: d(c(0.0, -0.05)) },
                    ModeSpec { mode: [0, -1], coef: d(c(0.0, 0.05)) },
                ],
            }],
        )]);
        Scenario {
            schema_version: SCHEMA_VERSION,
            name: "torus_rank_two".into(),
            vertices: vec![v("1", 2)],
            arrows: vec![],
            relations: vec![],
            tau_prime: vec![0.0],
            backend: torus(modes),
            data: DataSpec::Family { base_point: vec![c(0.1, 0.05)], phi: BTreeMap::new(), alpha },
            solver: SolverSpec::default(),
            stencil: None,
            requests: vec![Request::Solve, Request::Deform, Request::Wp, Request::Fiberint, Request::Chern],
        }
    }

    /// Kronecker family on the torus with `α₁ = s₂ b` and `α₂ = s₂ (b + ∂̄f)`,
    /// so that `φ` varies over the torus.
    pub fn torus_kronecker_twisted(modes: usize) -> Scenario {
        let geom = TorusGeometry::new(c(0.15, 1.2), 2.0, modes).expect("valid torus");
        let sp = Spectral::new(geom);
        let b = c(0.3, -0.1);
        // f = 0.2 cos(2πu) + 0.1 sin(2πv) in modes; ∂̄f is read off the symbol.
        let f_modes = [((1i64, 0i64), c(0.1, 0.0)), ((-1, 0), c(0.1, 0.0)), ((0, 1), c(0.0, -0.05)), ((0, -1), c(0.0, 0.05))];
        let mut alpha2 = vec![ModeSpec { mode: [0, 0], coef: m1(b) }];
        for ((m1_, m2_), z) in f_modes {
            alpha2.push(ModeSpec { mode: [m1_, m2_], coef: m1(z * sp.dbar_symbol(m1_, m2_)) });
        }
        let alpha = BTreeMap::from([
            ("1".to_string(), vec![FieldMonomialSpec { exponent: vec![0, 1], modes: vec![ModeSpec { mode: [0, 0], coef: m1(b) }] }]),
            ("2".to_string(), vec![FieldMonomialSpec { exponent: vec![0, 1], modes: alpha2 }]),
        ]);
        let phi = BTreeMap::from([("a".to_string(), vec![mono(vec![0, 0], re(1.0))]), ("b".to_string(), vec![mono(vec![1, 0], re(1.0))])]);
        Scenario {
            schema_version: SCHEMA_VERSION,
            name: "torus_kronecker_twisted".into(),
            vertices: vec![v("1", 1), v("2", 1)],
            arrows: vec![a("a", "1", "2"), a("b", "1", "2")],
            relations: vec![],
            tau_prime: vec![-1.0, 1.0],
            backend: torus(modes),
            data: DataSpec::Family { base_point: vec![c(0.2, -0.1), c(0.05, 0.05)], phi, alpha },
            solver: SolverSpec::default(),
            stencil: None,
            requests: vec![Request::Solve, Request::Deform, Request::Wp, Request::Check],
        }
    }

    /// Every shipped scenario with its file name.
    pub fn shipped() -> Vec<(&'static str, Scenario)> {
        vec![
            ("kronecker_point.scn", kronecker_point()),
            ("three_arrow_point.scn", three_arrow_point()),
            ("a2_rigid.scn", a2_rigid()),
            ("a2_generic_12.scn", a2_generic_12()),
            ("commuting_square.scn", commuting_square()),
            ("constant_point.scn", constant_point()),
            ("empty.scn", empty()),
            ("infeasible.scn", infeasible()),
            ("torus_kronecker.scn", torus_kronecker(4)),
            ("torus_rank_two.scn", torus_rank_two(4)),
            ("torus_kronecker_twisted.scn", torus_kronecker_twisted(4)),
        ]
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        for (_, s) in presets::shipped() {
            let text = s.to_canonical();
            let back = Scenario::from_json(&text).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.to_canonical(), text);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&presets::kronecker_point().to_canonical()).unwrap();
        v["colour"] = serde_json::json!("blue");
        assert!(Scenario::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&presets::kronecker_point().to_canonical()).unwrap();
        v["vertices"][0]["rank"] = serde_json::json!(3);
        assert!(Scenario::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn cross_references_must_resolve() {
        let mut s = presets::kronecker_point();
        s.arrows[0].head = "9".into();
        assert!(matches!(s.build(), Err(Error::UnknownVertex(_))));
        let mut s = presets::commuting_square();
        s.relations[0].terms[0].path = vec!["a".into(), "b".into()];
        assert!(s.build().is_err());
    }

    #[test]
    fn presets_build() {
        for (name, s) in presets::shipped() {
            let b = s.build();
            assert!(b.is_ok(), "{name}: {:?}", b.err());
        }
    }

    #[test]
    fn backend_override_parses() {
        let cur = BackendSpec::Point;
        assert_eq!(parse_backend_override("point", &cur).unwrap(), BackendSpec::Point);
        assert!(matches!(parse_backend_override("torus:6:3.5", &cur).unwrap(), BackendSpec::Torus { modes: 6, area, .. } if area == 3.5));
        assert!(parse_backend_override("sphere", &cur).is_err());
        let t = presets::kronecker_point().with_backend(BackendSpec::Torus { modes: 3, modulus: c(0.0, 1.0), area: 1.0 }).unwrap();
        assert!(t.build().is_ok());
        assert!(presets::torus_rank_two(3).with_backend(BackendSpec::Point).is_err());
    }
}
