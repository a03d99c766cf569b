//! Global assembly `𝒜u = b` and its solution.
//!
//! Rows are built independently per test node: Dirichlet nodes get a unit
//! collocation row, Neumann nodes a GMLS normal-derivative row, interior
//! nodes the GMLS row of the method's functional. The reference MLPG5 path
//! instead integrates MLS shape-function gradients, one MLS stencil per
//! integration point.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::MonomialBasis;
use crate::error::{Error, Result};
use crate::functionals::{
    self, lambda_on_basis, rhs_value, weak1_exact_axis_points, weak5_exact_edge_points, FunctionalKind, FunctionalSpec,
    PoissonData, SubdomainShape, SubdomainSpec, TestFunction,
};
use crate::geometry::{BoundaryKind, NodeSet, NodeTag, Rectangle};
use crate::gmls::{self, CoefficientRow, Stencil, WeightFunction};

/// Largest system solved by the banded direct factorization before switching to Krylov.
pub const DIRECT_SOLVE_LIMIT: usize = 5000;
const KRYLOV_RTOL: f64 = 1e-10;
const RESIDUAL_RTOL: f64 = 1e-9;
const MLPG_DROP_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Dmlpg1,
    Dmlpg2,
    Dmlpg5,
    Mlpg5Reference,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dmlpg1 => "dmlpg1",
            Method::Dmlpg2 => "dmlpg2",
            Method::Dmlpg5 => "dmlpg5",
            Method::Mlpg5Reference => "mlpg5",
        }
    }

    /// Methods whose interior rows are local weak forms.
    pub fn is_weak(self) -> bool {
        !matches!(self, Method::Dmlpg2)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dmlpg1" => Ok(Method::Dmlpg1),
            "dmlpg2" | "dmlsc" => Ok(Method::Dmlpg2),
            "dmlpg5" => Ok(Method::Dmlpg5),
            "mlpg5" | "mlpg5-reference" => Ok(Method::Mlpg5Reference),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (dmlpg1|dmlpg2|dmlpg5|mlpg5)"
            ))),
        }
    }
}

/// Quadrature point counts; `None` selects the method default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QuadratureSettings {
    /// Points on a circle, or per edge of a square.
    pub boundary: Option<usize>,
    /// Points per direction of the subdomain interior rule (weak form with `v` vanishing).
    pub interior: Option<usize>,
    /// Points per direction of the rule for `∫ f v`.
    pub rhs: Option<usize>,
}

/// Fully resolved point counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedQuadrature {
    pub boundary: usize,
    pub interior: usize,
    pub rhs: usize,
}

impl QuadratureSettings {
    /// Circles use 20 points everywhere. Squares use 10 points per edge for
    /// MLPG5 and for right-hand sides; DMLPG5 and DMLPG1 default to the
    /// smallest exact Gauss rule for polynomial integrands.
    pub fn resolve(&self, method: Method, shape: SubdomainShape, degree: usize, dim: usize) -> ResolvedQuadrature {
        let (boundary, interior, rhs) = match shape {
            SubdomainShape::Ball => (20, 20, 20),
            SubdomainShape::Square => {
                let boundary = match method {
                    Method::Mlpg5Reference => 10,
                    _ => weak5_exact_edge_points(degree),
                };
                let test_degree = TestFunction::quartic(1.0).polynomial_degree(dim).unwrap_or(2 * dim);
                (boundary, weak1_exact_axis_points(degree, test_degree), 10)
            }
        };
        ResolvedQuadrature {
            boundary: self.boundary.unwrap_or(boundary),
            interior: self.interior.unwrap_or(interior),
            rhs: self.rhs.unwrap_or(rhs),
        }
    }
}

/// Everything needed to assemble one discrete Poisson problem.
pub struct DiscreteProblem<'a> {
    pub domain: Rectangle,
    pub nodes: NodeSet,
    pub method: Method,
    pub degree: usize,
    pub c0: f64,
    pub delta0: f64,
    pub shape: SubdomainShape,
    pub sigma0: f64,
    pub quadrature: QuadratureSettings,
    pub data: &'a dyn PoissonData,
    /// Adds interior cell-midpoint test nodes whose subdomains fit in the domain.
    pub oversample: bool,
    /// Worker cap for row assembly; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl<'a> DiscreteProblem<'a> {
    /// Defaults: `c0 = 0.6`, `δ0 = 2m`, circles with `σ0 = 0.7`.
    pub fn new(domain: Rectangle, nodes: NodeSet, method: Method, degree: usize, data: &'a dyn PoissonData) -> Self {
        Self {
            domain,
            nodes,
            method,
            degree,
            c0: 0.6,
            delta0: 2.0 * degree as f64,
            shape: SubdomainShape::Ball,
            sigma0: default_sigma0(SubdomainShape::Ball),
            quadrature: QuadratureSettings::default(),
            data,
            oversample: false,
            threads: None,
        }
    }

    pub fn with_shape(mut self, shape: SubdomainShape) -> Self {
        self.shape = shape;
        self.sigma0 = default_sigma0(shape);
        self
    }

    pub fn spacing(&self) -> f64 {
        self.nodes.spacing()
    }

    pub fn weight(&self) -> Result<WeightFunction> {
        WeightFunction::scaled(self.c0, self.delta0, self.spacing())
    }

    pub fn resolved_quadrature(&self) -> ResolvedQuadrature {
        self.quadrature.resolve(self.method, self.shape, self.degree, self.domain.dim())
    }

    fn validate(&self) -> Result<()> {
        let positive = [("c0", self.c0), ("delta0", self.delta0), ("sigma0", self.sigma0)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if self.nodes.dim() != self.domain.dim() {
            return Err(Error::Config("node set and domain dimensions differ".into()));
        }
        if self.method.is_weak() && self.degree <= 1 {
            return Err(Error::ZeroRow {
                node: first_interior(&self.nodes).unwrap_or(0),
                degree: self.degree,
            });
        }
        Ok(())
    }

    /// Test points: every trial node, plus interior midpoints when oversampling.
    pub fn test_points(&self) -> Vec<TestPoint> {
        let mut pts: Vec<TestPoint> = (0..self.nodes.len())
            .map(|j| TestPoint {
                x: self.nodes.point(j).to_vec(),
                tag: self.nodes.tag(j),
                trial: Some(j),
            })
            .collect();
        if self.oversample {
            pts.extend(self.midpoints());
        }
        pts
    }

    fn midpoints(&self) -> Vec<TestPoint> {
        let h = self.spacing();
        let sigma = self.sigma0 * h;
        let reach = match self.shape {
            SubdomainShape::Ball => sigma,
            SubdomainShape::Square => 0.5 * sigma,
        };
        let dim = self.domain.dim();
        let counts: Vec<usize> = (0..dim).map(|a| (self.domain.side(a) / h).round() as usize).collect();
        let total: usize = counts.iter().product();
        let mut out = Vec::new();
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let x: Vec<f64> = (0..dim).map(|a| self.domain.lo()[a] + (idx[a] as f64 + 0.5) * h).collect();
            if self.domain.distance_to_boundary(&x) >= reach {
                out.push(TestPoint {
                    x,
                    tag: NodeTag::Interior,
                    trial: None,
                });
            }
            for a in 0..dim {
                idx[a] += 1;
                if idx[a] < counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }
}

/// Subdomain size factor: balls of radius `0.7h`, squares of side `h`.
pub fn default_sigma0(shape: SubdomainShape) -> f64 {
    match shape {
        SubdomainShape::Ball => 0.7,
        SubdomainShape::Square => 1.0,
    }
}

fn first_interior(nodes: &NodeSet) -> Option<usize> {
    (0..nodes.len()).find(|&j| !nodes.tag(j).is_boundary())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestPoint {
    pub x: Vec<f64>,
    pub tag: NodeTag,
    /// Coinciding trial node, if any.
    pub trial: Option<usize>,
}

/// `M × N` system stored as sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub n_cols: usize,
    pub rows: Vec<CoefficientRow>,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.apply(x)).collect()
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().zip(&self.rhs).map(|(r, b)| b - r.apply(x)).collect()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(CoefficientRow::len).sum()
    }

    /// Writes `row col value` lines (0-based).
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, v) in row.indices.iter().zip(&row.values) {
                writeln!(out, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }

    /// Writes the right-hand side, one value per line.
    pub fn write_rhs<W: Write>(&self, mut out: W) -> Result<()> {
        for b in &self.rhs {
            writeln!(out, "{b:.17e}")?;
        }
        Ok(())
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_rows(), self.n_cols);
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, v) in row.indices.iter().zip(&row.values) {
                a[(i, j)] += v;
            }
        }
        a
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot create a {n}-worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Assembles the DMLPG system (or dispatches to the MLPG5 reference path).
pub fn assemble(problem: &DiscreteProblem<'_>) -> Result<SparseSystem> {
    problem.validate()?;
    let weight = problem.weight()?;
    let quad = problem.resolved_quadrature();
    let points = problem.test_points();
    let basis = MonomialBasis::new(problem.degree, vec![0.0; problem.domain.dim()], problem.spacing())?;
    let rows: Vec<Result<(CoefficientRow, f64)>> = with_pool(problem.threads, || {
        points
            .par_iter()
            .enumerate()
            .map(|(k, tp)| build_row(problem, k, tp, &basis, &weight, &quad).map_err(|e| e.at_row(k)))
            .collect()
    })?;
    collect_rows(problem.nodes.len(), rows)
}

fn collect_rows(n_cols: usize, rows: Vec<Result<(CoefficientRow, f64)>>) -> Result<SparseSystem> {
    let mut out = Vec::with_capacity(rows.len());
    let mut rhs = Vec::with_capacity(rows.len());
    for r in rows {
        let (row, b) = r?;
        out.push(row);
        rhs.push(b);
    }
    Ok(SparseSystem { n_cols, rows: out, rhs })
}

/// Boundary rows shared by all methods: unit Dirichlet rows, GMLS normal-derivative Neumann rows.
fn boundary_row(
    problem: &DiscreteProblem<'_>,
    k: usize,
    tp: &TestPoint,
    facet: usize,
    basis: &MonomialBasis,
    weight: &WeightFunction,
) -> Result<(CoefficientRow, f64)> {
    match problem.domain.facet_kind(facet) {
        BoundaryKind::Dirichlet => {
            let b = problem.data.dirichlet(&tp.x);
            match tp.trial {
                Some(j) => Ok((
                    CoefficientRow {
                        indices: vec![j],
                        values: vec![1.0],
                        functional: k,
                    },
                    b,
                )),
                None => {
                    let spec = FunctionalSpec::point_value(k, &tp.x);
                    gmls_row(problem, &spec, basis, weight, None)
                }
            }
        }
        BoundaryKind::Neumann => {
            let spec = FunctionalSpec::normal_derivative(k, &tp.x, problem.domain.facet_normal(facet));
            gmls_row(problem, &spec, basis, weight, None)
        }
    }
}

fn gmls_row(
    problem: &DiscreteProblem<'_>,
    spec: &FunctionalSpec,
    basis: &MonomialBasis,
    weight: &WeightFunction,
    rhs_rule: Option<&crate::quadrature::QuadratureRule>,
) -> Result<(CoefficientRow, f64)> {
    let basis = basis.recentered(&spec.node);
    let lambda = lambda_on_basis(spec, &basis)?;
    let stencil = Stencil::build(&problem.nodes, &spec.node, &basis, weight)?;
    let mut row = stencil.solve(&lambda)?;
    row.functional = spec.id;
    let b = rhs_value(spec, problem.data, rhs_rule)?;
    Ok((row, b))
}

/// The interior functional of the problem's method at a test point.
pub fn interior_functional(problem: &DiscreteProblem<'_>, k: usize, x: &[f64]) -> Result<FunctionalSpec> {
    let h = problem.spacing();
    let quad = problem.resolved_quadrature();
    let sub = || SubdomainSpec::new(problem.shape, problem.sigma0 * h, x);
    match problem.method {
        Method::Dmlpg2 => Ok(FunctionalSpec::laplacian(k, x)),
        Method::Dmlpg5 | Method::Mlpg5Reference => FunctionalSpec::weak5(k, sub()?, quad.boundary, &problem.domain),
        Method::Dmlpg1 => {
            let sub = sub()?;
            let test = match problem.shape {
                SubdomainShape::Square => TestFunction::quartic(sub.size),
                SubdomainShape::Ball => TestFunction::weight_profile(problem.c0 * h, sub.size)?,
            };
            FunctionalSpec::weak1(k, sub, test, quad.interior, &problem.domain)
        }
    }
}

fn build_row(
    problem: &DiscreteProblem<'_>,
    k: usize,
    tp: &TestPoint,
    basis: &MonomialBasis,
    weight: &WeightFunction,
    quad: &ResolvedQuadrature,
) -> Result<(CoefficientRow, f64)> {
    if let NodeTag::Facet(f) = tp.tag {
        return boundary_row(problem, k, tp, f, basis, weight);
    }
    let spec = interior_functional(problem, k, &tp.x)?;
    let rhs_rule = match &spec.subdomain {
        Some(sub) if spec.kind.is_weak() => Some(sub.interior_rule(quad.rhs)?),
        _ => None,
    };
    if problem.method == Method::Mlpg5Reference {
        return mlpg5_row(problem, &spec, basis, weight, rhs_rule.as_ref());
    }
    gmls_row(problem, &spec, basis, weight, rhs_rule.as_ref())
}

/// `∮ ∇φ_j·n dΓ` by quadrature over MLS shape-function gradients.
fn mlpg5_row(
    problem: &DiscreteProblem<'_>,
    spec: &FunctionalSpec,
    basis: &MonomialBasis,
    weight: &WeightFunction,
    rhs_rule: Option<&crate::quadrature::QuadratureRule>,
) -> Result<(CoefficientRow, f64)> {
    let FunctionalKind::Weak5 { boundary } = &spec.kind else {
        return Err(Error::Config("MLPG5 reference rows need a Weak5 functional".into()));
    };
    let neumann = functionals::neumann_planes(&problem.domain);
    let tol = 1e-12 * problem.spacing();
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for qp in 0..boundary.len() {
        let x = boundary.point(qp);
        if neumann.iter().any(|p| (x[p.axis] - p.coordinate).abs() <= tol) {
            continue;
        }
        let n = boundary.normal(qp).expect("boundary rule has normals");
        let local = basis.recentered(x);
        let stencil = Stencil::build(&problem.nodes, x, &local, weight)?;
        let grads = gmls::shape_gradients_from_stencil(&problem.nodes, &stencil, weight);
        let w = boundary.weight(qp);
        for (l, &j) in grads.indices.iter().enumerate() {
            let flux: f64 = grads.gradient(l).iter().zip(n).map(|(g, c)| g * c).sum();
            entries.push((j, w * flux));
        }
    }
    entries.sort_by_key(|e| e.0);
    let mut indices = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (j, v) in entries {
        if indices.last() == Some(&j) {
            *values.last_mut().unwrap() += v;
        } else {
            indices.push(j);
            values.push(v);
        }
    }
    let largest = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let keep: Vec<bool> = values.iter().map(|v| v.abs() > MLPG_DROP_TOL * largest).collect();
    let indices = indices.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(j, _)| j).collect();
    let values = values.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v).collect();
    let b = rhs_value(spec, problem.data, rhs_rule)?;
    Ok((
        CoefficientRow {
            indices,
            values,
            functional: spec.id,
        },
        b,
    ))
}

/// Classical MLPG5 assembly integrating MLS shape-function gradients.
pub fn assemble_mlpg5_reference(problem: &DiscreteProblem<'_>) -> Result<SparseSystem> {
    if problem.method != Method::Mlpg5Reference {
        return Err(Error::Config(format!(
            "reference assembly requested for method {}",
            problem.method.as_str()
        )));
    }
    assemble(problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStrategy {
    BandedLu,
    BiCgStab,
    LeastSquaresQr,
}

impl SolveStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStrategy::BandedLu => "banded-lu",
            SolveStrategy::BiCgStab => "bicgstab",
            SolveStrategy::LeastSquaresQr => "least-squares-qr",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Nodal values `u(x_j)`.
    pub values: Vec<f64>,
    pub strategy: SolveStrategy,
    /// `‖b − 𝒜u‖₂`, or `‖𝒜ᵀ(b − 𝒜u)‖₂` for least squares.
    pub residual: f64,
    pub rhs_norm: f64,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves square systems directly (banded LU) or iteratively, overdetermined ones by QR least squares.
pub fn solve_linear(system: &SparseSystem) -> Result<Solution> {
    let start = Instant::now();
    let (m, n) = (system.n_rows(), system.n_cols);
    if m < n {
        return Err(Error::Solver(format!("underdetermined system: {m} rows for {n} unknowns")));
    }
    if system.rhs.len() != m {
        return Err(Error::Solver(format!("rhs has {} entries for {m} rows", system.rhs.len())));
    }
    let rhs_norm = norm(&system.rhs);
    let (values, strategy, residual) = if m > n {
        let x = least_squares(system)?;
        let r = system.residual(&x);
        let mut atr = vec![0.0; n];
        for (row, ri) in system.rows.iter().zip(&r) {
            for (&j, v) in row.indices.iter().zip(&row.values) {
                atr[j] += v * ri;
            }
        }
        (x, SolveStrategy::LeastSquaresQr, norm(&atr))
    } else {
        let (x, strategy) = if n <= DIRECT_SOLVE_LIMIT {
            (banded_solve(system)?, SolveStrategy::BandedLu)
        } else {
            match bicgstab(system) {
                Ok(x) => (x, SolveStrategy::BiCgStab),
                // Krylov stagnation: fall back to the direct band solver
                Err(_) => (banded_solve(system)?, SolveStrategy::BandedLu),
            }
        };
        let r = norm(&system.residual(&x));
        let tol = match strategy {
            SolveStrategy::BiCgStab => 10.0 * KRYLOV_RTOL,
            _ => RESIDUAL_RTOL,
        };
        if !(r <= tol * rhs_norm.max(f64::MIN_POSITIVE)) && rhs_norm > 0.0 {
            return Err(Error::Solver(format!(
                "residual {r:.3e} exceeds {tol:.0e}·‖b‖ = {:.3e}; the system is ill-conditioned (consider oversampling)",
                tol * rhs_norm
            )));
        }
        (x, strategy, r)
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("solution contains non-finite values".into()));
    }
    Ok(Solution {
        values,
        strategy,
        residual,
        rhs_norm,
        assembly_seconds: 0.0,
        solve_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Gaussian elimination with partial pivoting on the band of a square system,
/// followed by one step of iterative refinement.
fn banded_solve(system: &SparseSystem) -> Result<Vec<f64>> {
    let lu = BandedLu::factor(system)?;
    let mut x = lu.solve(&system.rhs);
    let r = system.residual(&x);
    let dx = lu.solve(&r);
    x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
    Ok(x)
}

struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    /// Row at position `i` stores columns `i − kl ..= i + kl + ku`.
    data: Vec<f64>,
    pivots: Vec<usize>,
    /// Multipliers of step `k` for positions `k+1 ..= k+kl`.
    multipliers: Vec<f64>,
}

impl BandedLu {
    fn factor(system: &SparseSystem) -> Result<Self> {
        let n = system.n_cols;
        let (mut kl, mut ku) = (0usize, 0usize);
        for (i, row) in system.rows.iter().enumerate() {
            for &j in &row.indices {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut data = vec![0.0; n * width];
        let mut scale = 0.0f64;
        for (i, row) in system.rows.iter().enumerate() {
            for (&j, &v) in row.indices.iter().zip(&row.values) {
                data[i * width + (j + kl - i)] += v;
                scale = scale.max(v.abs());
            }
        }
        let mut lu = Self {
            n,
            kl,
            width,
            data,
            pivots: vec![0; n],
            multipliers: vec![0.0; n * kl.max(1)],
        };
        let mut diag_min = f64::INFINITY;
        let mut diag_max = 0.0f64;
        let mut scratch = vec![0.0; width];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.at(k, k).abs();
            for r in (k + 1)..=last {
                let v = lu.at(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > 1e-14 * scale) {
                return Err(Error::Solver(format!(
                    "matrix is singular to working precision at column {k} of {n} (pivot {best:.3e}, max entry {scale:.3e}); \
                     the discretization may be rank deficient, consider oversampling"
                )));
            }
            lu.pivots[k] = p;
            if p != k {
                lu.swap_rows(k, p, &mut scratch);
            }
            let pivot = lu.at(k, k);
            diag_min = diag_min.min(pivot.abs());
            diag_max = diag_max.max(pivot.abs());
            let col_end = (k + kl + (width - 2 * kl - 1)).min(n - 1);
            for r in (k + 1)..=last {
                let l = lu.at(r, k) / pivot;
                lu.multipliers[k * kl + (r - k - 1)] = l;
                if l == 0.0 {
                    continue;
                }
                *lu.at_mut(r, k) = 0.0;
                for c in (k + 1)..=col_end {
                    let u = lu.at(k, c);
                    if u != 0.0 {
                        *lu.at_mut(r, c) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    fn offset(&self, i: usize, c: usize) -> usize {
        i * self.width + (c + self.kl - i)
    }

    fn at(&self, i: usize, c: usize) -> f64 {
        self.data[self.offset(i, c)]
    }

    fn at_mut(&mut self, i: usize, c: usize) -> &mut f64 {
        let o = self.offset(i, c);
        &mut self.data[o]
    }

    /// Swaps positions `k < p` at elimination step `k` (columns `< k` are zero in both).
    fn swap_rows(&mut self, k: usize, p: usize, scratch: &mut [f64]) {
        let hi = (k + self.width - self.kl - 1).min(self.n - 1);
        for (s, c) in scratch.iter_mut().zip(k..=hi) {
            *s = self.at(k, c);
        }
        let p_hi = (p + self.width - self.kl - 1).min(self.n - 1).min(hi);
        for c in k..=hi {
            let v = if c <= p_hi { self.at(p, c) } else { 0.0 };
            *self.at_mut(k, c) = v;
        }
        for c in k..=p_hi {
            *self.at_mut(p, c) = scratch[c - k];
        }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl) = (self.n, self.kl);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            for r in (k + 1)..=(k + kl).min(n - 1) {
                x[r] -= self.multipliers[k * kl + (r - k - 1)] * xk;
            }
        }
        let ku_total = self.width - self.kl - 1;
        for i in (0..n).rev() {
            let mut s = x[i];
            for c in (i + 1)..=(i + ku_total).min(n - 1) {
                s -= self.at(i, c) * x[c];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }
}

/// Jacobi-preconditioned BiCGSTAB.
fn bicgstab(system: &SparseSystem) -> Result<Vec<f64>> {
    let n = system.n_cols;
    let mut diag = vec![1.0; n];
    for (i, row) in system.rows.iter().enumerate() {
        if let Some(l) = row.indices.iter().position(|&j| j == i) {
            if row.values[l] != 0.0 {
                diag[i] = row.values[l];
            }
        }
    }
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&diag).map(|(a, d)| a / d).collect() };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let b = &system.rhs;
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.clone();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..10 * n {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = precond(&p);
        v = system.mul(&p_hat);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm(&s) <= KRYLOV_RTOL * bnorm {
            x.iter_mut().zip(&p_hat).for_each(|(xi, pi)| *xi += alpha * pi);
            return Ok(x);
        }
        let s_hat = precond(&s);
        let t = system.mul(&s_hat);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= KRYLOV_RTOL * bnorm {
            return Ok(x);
        }
        if !omega.is_finite() || omega == 0.0 {
            break;
        }
    }
    Err(Error::Solver(format!(
        "BiCGSTAB did not reach relative residual {KRYLOV_RTOL:e} within {} iterations",
        10 * n
    )))
}

fn least_squares(system: &SparseSystem) -> Result<Vec<f64>> {
    let a = system.to_dense();
    let qr = a.qr();
    let r = qr.r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dmin > 1e-12 * dmax) {
        let rank = diag.iter().filter(|&&d| d > 1e-12 * dmax).count();
        return Err(Error::Solver(format!(
            "least-squares system is rank deficient (numerical rank {rank} of {}, |R| diagonal ratio {:.3e})",
            system.n_cols,
            dmin / dmax
        )));
    }
    let qtb = qr.q().transpose() * DVector::from_column_slice(&system.rhs);
    let x = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    Ok(x.iter().copied().collect())
}

/// Assembles and solves, recording wall-clock times for both phases.
pub fn solve_problem(problem: &DiscreteProblem<'_>) -> Result<(SparseSystem, Solution)> {
    let start = Instant::now();
    let system = assemble(problem)?;
    let assembly_seconds = start.elapsed().as_secs_f64();
    let mut solution = solve_linear(&system)?;
    solution.assembly_seconds = assembly_seconds;
    Ok((system, solution))
}

/// MLS evaluation `Σ_j φ_j(x) u_j` of a nodal solution.
pub fn evaluate_solution(
    solution: &Solution,
    nodes: &NodeSet,
    x: &[f64],
    basis: &MonomialBasis,
    weight: &WeightFunction,
) -> Result<f64> {
    let phi = gmls::mls_shape_values(nodes, x, basis, weight)?;
    Ok(phi.indices.iter().zip(&phi.values).map(|(&j, v)| v * solution.values[j]).sum())
}
