//! Test functionals for the Poisson problem `Δu = f`, `u = u_D` on `Γ_D`,
//! `∂u/∂n = u_N` on `Γ_N`.
//!
//! Every functional is evaluated on the polynomial basis only: the GMLS
//! engine turns `λ(p)` into stiffness-matrix coefficients. Weak forms are
//! posed on a subdomain `Ω_σ^y` (ball of radius σ or square of side σ)
//! around the test node `y`:
//!
//! ```text
//! ∫_{Γ_σ \ Γ_N} (∇u·n) v dΓ − ∫_{Ω_σ} ∇u·∇v dΩ = ∫_{Ω_σ} f v dΩ − ∫_{Γ_σ ∩ Γ_N} u_N v dΓ
//! ```
//!
//! With `v ≡ 1` only the boundary flux survives on the left; with `v`
//! vanishing on `Γ_σ` only the domain term does.

use crate::basis::MonomialBasis;
use crate::error::{Error, Result};
use crate::geometry::Rectangle;
use crate::gmls::WeightFunction;
use crate::quadrature::{self, QuadratureRule};

/// Weak rows whose largest entry is below this fraction of the integrand magnitude are zero rows.
const ZERO_ROW_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubdomainShape {
    Ball,
    Square,
}

impl SubdomainShape {
    pub fn as_str(self) -> &'static str {
        match self {
            SubdomainShape::Ball => "circle",
            SubdomainShape::Square => "square",
        }
    }
}

impl std::str::FromStr for SubdomainShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" | "ball" | "disk" => Ok(SubdomainShape::Ball),
            "square" => Ok(SubdomainShape::Square),
            other => Err(Error::Config(format!("unknown subdomain shape `{other}` (circle|square)"))),
        }
    }
}

/// Local subdomain: ball of radius `size` or square of side `size` centered at a test node.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainSpec {
    pub shape: SubdomainShape,
    pub size: f64,
    pub center: Vec<f64>,
}

impl SubdomainSpec {
    pub fn new(shape: SubdomainShape, size: f64, center: &[f64]) -> Result<Self> {
        if !(size > 0.0) || !size.is_finite() {
            return Err(Error::Config(format!("subdomain size must be positive, got {size}")));
        }
        Ok(Self {
            shape,
            size,
            center: center.to_vec(),
        })
    }

    /// Distance from the center to the farthest subdomain boundary point along an axis.
    fn reach(&self) -> f64 {
        match self.shape {
            SubdomainShape::Ball => self.size,
            SubdomainShape::Square => 0.5 * self.size,
        }
    }

    /// Fails unless the subdomain lies inside the closed domain.
    pub fn check_contained(&self, domain: &Rectangle, node: usize) -> Result<()> {
        let room = domain.distance_to_boundary(&self.center);
        let tol = 1e-12 * domain.diameter();
        if self.reach() > room + tol {
            return Err(Error::Containment {
                node,
                detail: format!(
                    "{} subdomain of size {} reaches {} from the center but only {room} is available",
                    self.shape.as_str(),
                    self.size,
                    self.reach()
                ),
            });
        }
        Ok(())
    }

    /// Rule on `∂Ω_σ`: `points` on the circle, or per edge of the square.
    pub fn boundary_rule(&self, points: usize) -> Result<QuadratureRule> {
        match self.shape {
            SubdomainShape::Ball => quadrature::circle_boundary(points, &self.center, self.size),
            SubdomainShape::Square => {
                let (lo, hi) = quadrature::square_bounds(&self.center, self.size);
                quadrature::rectangle_boundary(points, &lo, &hi)
            }
        }
    }

    /// Rule on `Ω_σ`: `points × points` polar or tensor Gauss rule.
    pub fn interior_rule(&self, points: usize) -> Result<QuadratureRule> {
        match self.shape {
            SubdomainShape::Ball => quadrature::disk(points, points, &self.center, self.size),
            SubdomainShape::Square => {
                let (lo, hi) = quadrature::square_bounds(&self.center, self.size);
                quadrature::tensor_rectangle(&vec![points; self.center.len()], &lo, &hi)
            }
        }
    }

    pub fn measure(&self) -> f64 {
        let d = self.center.len() as i32;
        match self.shape {
            SubdomainShape::Square => self.size.powi(d),
            SubdomainShape::Ball => match d {
                1 => 2.0 * self.size,
                2 => std::f64::consts::PI * self.size * self.size,
                _ => 4.0 / 3.0 * std::f64::consts::PI * self.size.powi(3),
            },
        }
    }
}

/// Test function `v` of the weak form, equal to 1 at the center and 0 on the subdomain boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    /// `∏_i (1 − 4(ξ_i − ξ_ci)²/σ²)` on the square of side σ.
    QuarticProduct { side: f64 },
    /// The truncated Gaussian profile with support σ.
    WeightProfile { weight: WeightFunction },
}

impl TestFunction {
    pub fn quartic(side: f64) -> Self {
        TestFunction::QuarticProduct { side }
    }

    /// Gaussian profile `w(‖x − y‖)` with shape `c` and support `σ`.
    pub fn weight_profile(shape: f64, sigma: f64) -> Result<Self> {
        Ok(TestFunction::WeightProfile {
            weight: WeightFunction::gaussian(shape, sigma)?,
        })
    }

    /// Value and gradient at `x` for a subdomain centered at `center`.
    pub fn eval(&self, x: &[f64], center: &[f64]) -> (f64, Vec<f64>) {
        let d = x.len();
        match *self {
            TestFunction::QuarticProduct { side } => {
                if (0..d).any(|i| (x[i] - center[i]).abs() > 0.5 * side) {
                    return (0.0, vec![0.0; d]);
                }
                let factors: Vec<f64> = (0..d)
                    .map(|i| 1.0 - 4.0 * (x[i] - center[i]).powi(2) / (side * side))
                    .collect();
                let value = factors.iter().product();
                let grad = (0..d)
                    .map(|i| {
                        let dfi = -8.0 * (x[i] - center[i]) / (side * side);
                        (0..d).filter(|&k| k != i).map(|k| factors[k]).product::<f64>() * dfi
                    })
                    .collect();
                (value, grad)
            }
            TestFunction::WeightProfile { weight } => {
                let r = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let mut grad = vec![0.0; d];
                weight.gradient_into(x, center, &mut grad);
                (weight.eval(r), grad)
            }
        }
    }

    /// Total polynomial degree, `None` for non-polynomial profiles.
    pub fn polynomial_degree(&self, dim: usize) -> Option<usize> {
        match self {
            TestFunction::QuarticProduct { .. } => Some(2 * dim),
            TestFunction::WeightProfile { .. } => None,
        }
    }
}

/// Free-function form of [`TestFunction::eval`].
pub fn test_function_eval(v: &TestFunction, x: &[f64], center: &[f64]) -> (f64, Vec<f64>) {
    v.eval(x, center)
}

/// Gauss points per edge that make the square-subdomain flux of degree-`m` polynomials exact.
pub fn weak5_exact_edge_points(m: usize) -> usize {
    m.div_ceil(2).max(1)
}

/// Gauss points per axis, `⌈((m−1)(n−1)+1)/2⌉`, for the square-subdomain domain term with a
/// polynomial test function of total degree `n`.
pub fn weak1_exact_axis_points(m: usize, test_degree: usize) -> usize {
    if m == 0 {
        return 1;
    }
    ((m - 1) * test_degree.saturating_sub(1) + 1).div_ceil(2).max(1)
}

/// An axis-aligned Neumann facet, `x[axis] = coordinate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannPlane {
    pub axis: usize,
    pub coordinate: f64,
    pub normal_sign: f64,
}

impl NeumannPlane {
    fn contains(&self, x: &[f64], tol: f64) -> bool {
        (x[self.axis] - self.coordinate).abs() <= tol
    }
}

/// Neumann facets of a domain as planes.
pub fn neumann_planes(domain: &Rectangle) -> Vec<NeumannPlane> {
    (0..domain.facet_count())
        .filter(|&f| domain.facet_kind(f) == crate::geometry::BoundaryKind::Neumann)
        .map(|f| {
            let (axis, side) = Rectangle::facet_axis_side(f);
            NeumannPlane {
                axis,
                coordinate: if side == 0 { domain.lo()[axis] } else { domain.hi()[axis] },
                normal_sign: if side == 0 { -1.0 } else { 1.0 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalKind {
    /// `u(y)`.
    PointValue,
    /// `D^α u(y)`.
    Derivative(Vec<u32>),
    /// `Δu(y)`, the collocation row of the Poisson equation.
    Laplacian,
    /// `∂u/∂n (y)` for an outward unit normal.
    NormalDerivative(Vec<f64>),
    /// `−∫_{Ω_σ} ∇u·∇v dΩ` with `v` vanishing on `Γ_σ`.
    Weak1 {
        test: TestFunction,
        interior: QuadratureRule,
    },
    /// `∮_{Γ_σ \ Γ_N} ∇u·n dΓ` (test function `v ≡ 1`).
    Weak5 { boundary: QuadratureRule },
}

impl FunctionalKind {
    pub fn is_weak(&self) -> bool {
        matches!(self, FunctionalKind::Weak1 { .. } | FunctionalKind::Weak5 { .. })
    }
}

/// A target functional `λ_k` localized at a test node.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSpec {
    pub kind: FunctionalKind,
    pub subdomain: Option<SubdomainSpec>,
    pub node: Vec<f64>,
    /// Test-node index, carried into diagnostics and coefficient rows.
    pub id: usize,
    pub neumann: Vec<NeumannPlane>,
}

impl FunctionalSpec {
    pub fn point_value(id: usize, node: &[f64]) -> Self {
        Self::strong(id, node, FunctionalKind::PointValue)
    }

    pub fn laplacian(id: usize, node: &[f64]) -> Self {
        Self::strong(id, node, FunctionalKind::Laplacian)
    }

    pub fn derivative(id: usize, node: &[f64], alpha: Vec<u32>) -> Self {
        Self::strong(id, node, FunctionalKind::Derivative(alpha))
    }

    pub fn normal_derivative(id: usize, node: &[f64], normal: Vec<f64>) -> Self {
        Self::strong(id, node, FunctionalKind::NormalDerivative(normal))
    }

    fn strong(id: usize, node: &[f64], kind: FunctionalKind) -> Self {
        Self {
            kind,
            subdomain: None,
            node: node.to_vec(),
            id,
            neumann: Vec::new(),
        }
    }

    /// Local weak form with `v ≡ 1`; `boundary_points` per circle or per square edge.
    pub fn weak5(id: usize, subdomain: SubdomainSpec, boundary_points: usize, domain: &Rectangle) -> Result<Self> {
        subdomain.check_contained(domain, id)?;
        let boundary = subdomain.boundary_rule(boundary_points)?;
        Ok(Self {
            kind: FunctionalKind::Weak5 { boundary },
            node: subdomain.center.clone(),
            subdomain: Some(subdomain),
            id,
            neumann: neumann_planes(domain),
        })
    }

    /// Local weak form with a test function vanishing on `Γ_σ`.
    pub fn weak1(
        id: usize,
        subdomain: SubdomainSpec,
        test: TestFunction,
        interior_points: usize,
        domain: &Rectangle,
    ) -> Result<Self> {
        subdomain.check_contained(domain, id)?;
        match (subdomain.shape, &test) {
            (SubdomainShape::Square, TestFunction::QuarticProduct { side }) if (side - subdomain.size).abs() <= 1e-14 * side => {}
            (SubdomainShape::Ball, TestFunction::WeightProfile { weight })
                if (weight.support() - subdomain.size).abs() <= 1e-14 * subdomain.size => {}
            _ => {
                return Err(Error::Config(format!(
                    "test function {test:?} does not vanish on the boundary of the {} subdomain of size {}",
                    subdomain.shape.as_str(),
                    subdomain.size
                )))
            }
        }
        let interior = subdomain.interior_rule(interior_points)?;
        Ok(Self {
            kind: FunctionalKind::Weak1 { test, interior },
            node: subdomain.center.clone(),
            subdomain: Some(subdomain),
            id,
            neumann: neumann_planes(domain),
        })
    }

    fn on_neumann(&self, x: &[f64]) -> Option<&NeumannPlane> {
        let tol = 1e-12 * self.subdomain.as_ref().map_or(1.0, |s| s.size);
        self.neumann.iter().find(|p| p.contains(x, tol))
    }
}

/// `λ(p_k)` for every basis function.
///
/// Weak functionals that vanish on the whole basis (degree `m ≤ 1` on
/// interior nodes) are rejected with [`Error::ZeroRow`].
pub fn lambda_on_basis(spec: &FunctionalSpec, basis: &MonomialBasis) -> Result<Vec<f64>> {
    let y = &spec.node;
    let q = basis.len();
    match &spec.kind {
        FunctionalKind::PointValue => Ok(basis.eval(y)),
        FunctionalKind::Derivative(alpha) => Ok(basis.eval_derivative(alpha, y)),
        FunctionalKind::Laplacian => Ok(basis.eval_laplacian(y)),
        FunctionalKind::NormalDerivative(normal) => {
            let grad = basis.eval_gradient(y);
            Ok(grad.iter().map(|g| g.iter().zip(normal).map(|(a, b)| a * b).sum()).collect())
        }
        FunctionalKind::Weak5 { boundary } => {
            if !boundary.has_normals() {
                return Err(Error::Config("Weak5 functional needs a boundary rule with normals".into()));
            }
            let mut out = vec![0.0; q];
            let mut magnitude = 0.0;
            for qp in 0..boundary.len() {
                let x = boundary.point(qp);
                if spec.on_neumann(x).is_some() {
                    continue;
                }
                let n = boundary.normal(qp).unwrap();
                let w = boundary.weight(qp);
                for (o, g) in out.iter_mut().zip(basis.eval_gradient(x)) {
                    let flux: f64 = g.iter().zip(n).map(|(a, b)| a * b).sum();
                    *o += w * flux;
                    magnitude += (w * flux).abs();
                }
            }
            check_zero_row(spec, basis, &out, magnitude)?;
            Ok(out)
        }
        FunctionalKind::Weak1 { test, interior } => {
            let mut out = vec![0.0; q];
            let mut magnitude = 0.0;
            for (x, w) in interior.iter() {
                let (_, grad_v) = test.eval(x, y);
                for (o, g) in out.iter_mut().zip(basis.eval_gradient(x)) {
                    let dot: f64 = g.iter().zip(&grad_v).map(|(a, b)| a * b).sum();
                    *o -= w * dot;
                    magnitude += (w * dot).abs();
                }
            }
            check_zero_row(spec, basis, &out, magnitude)?;
            Ok(out)
        }
    }
}

fn check_zero_row(spec: &FunctionalSpec, basis: &MonomialBasis, values: &[f64], magnitude: f64) -> Result<()> {
    let largest = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if largest <= ZERO_ROW_RTOL * magnitude || largest == 0.0 {
        return Err(Error::ZeroRow {
            node: spec.id,
            degree: basis.degree(),
        });
    }
    Ok(())
}

/// Source, Dirichlet and Neumann data of a Poisson problem.
pub trait PoissonData: Sync {
    /// `f` in `Δu = f`.
    fn source(&self, x: &[f64]) -> f64;
    fn dirichlet(&self, x: &[f64]) -> f64;
    /// `u_N` at a boundary point with outward normal `normal`.
    fn neumann(&self, x: &[f64], normal: &[f64]) -> f64;
}

/// [`PoissonData`] assembled from an exact solution's value, gradient and Laplacian.
pub struct ManufacturedData<U, G, L> {
    pub value: U,
    pub gradient: G,
    pub laplacian: L,
}

impl<U, G, L> PoissonData for ManufacturedData<U, G, L>
where
    U: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
    L: Fn(&[f64]) -> f64 + Sync,
{
    fn source(&self, x: &[f64]) -> f64 {
        (self.laplacian)(x)
    }

    fn dirichlet(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn neumann(&self, x: &[f64], normal: &[f64]) -> f64 {
        (self.gradient)(x).iter().zip(normal).map(|(a, b)| a * b).sum()
    }
}

/// Right-hand side `β_k` of the functional's equation.
///
/// Weak variants integrate the source with `rhs_rule` (an interior rule on
/// the subdomain) and subtract the Neumann flux over the boundary points of
/// the functional's own rule that lie on `Γ_N`.
pub fn rhs_value(spec: &FunctionalSpec, data: &dyn PoissonData, rhs_rule: Option<&QuadratureRule>) -> Result<f64> {
    let y = &spec.node;
    match &spec.kind {
        FunctionalKind::PointValue => Ok(data.dirichlet(y)),
        FunctionalKind::Laplacian | FunctionalKind::Derivative(_) => Ok(data.source(y)),
        FunctionalKind::NormalDerivative(n) => Ok(data.neumann(y, n)),
        FunctionalKind::Weak5 { boundary } => {
            let rule = rhs_rule.ok_or_else(|| Error::Config("Weak5 right-hand side needs an interior rule".into()))?;
            let mut value = rule.integrate(|x| data.source(x));
            for qp in 0..boundary.len() {
                let x = boundary.point(qp);
                if let Some(plane) = spec.on_neumann(x) {
                    let mut n = vec![0.0; x.len()];
                    n[plane.axis] = plane.normal_sign;
                    value -= boundary.weight(qp) * data.neumann(x, &n);
                }
            }
            Ok(value)
        }
        FunctionalKind::Weak1 { test, interior } => {
            let rule = rhs_rule.unwrap_or(interior);
            let mut value = rule.integrate(|x| data.source(x) * test.eval(x, y).0);
            if !spec.neumann.is_empty() {
                if let Some(sub) = &spec.subdomain {
                    value -= weak1_neumann_term(spec, sub, test, data)?;
                }
            }
            Ok(value)
        }
    }
}

/// `∫_{Γ_σ ∩ Γ_N} u_N v dΓ` for square subdomains touching a Neumann facet.
fn weak1_neumann_term(spec: &FunctionalSpec, sub: &SubdomainSpec, test: &TestFunction, data: &dyn PoissonData) -> Result<f64> {
    if sub.shape != SubdomainShape::Square || sub.center.len() != 2 {
        return Ok(0.0);
    }
    let boundary = sub.boundary_rule(10)?;
    let mut value = 0.0;
    for qp in 0..boundary.len() {
        let x = boundary.point(qp);
        if let Some(plane) = spec.on_neumann(x) {
            let mut n = vec![0.0; x.len()];
            n[plane.axis] = plane.normal_sign;
            value += boundary.weight(qp) * data.neumann(x, &n) * test.eval(x, &sub.center).0;
        }
    }
    Ok(value)
}
