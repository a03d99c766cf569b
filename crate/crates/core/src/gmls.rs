//! Generalized moving least squares.
//!
//! For a functional `λ` and nodes `x_j` inside the weight support around a
//! point `y`, the recovery coefficients are
//!
//! ```text
//! a*(λ) = W Pᵀ (P W Pᵀ)⁻¹ λ(p)
//! ```
//!
//! where `P` is the `Q × N_loc` matrix `P_kj = p_k(x_j)` and `W` holds the
//! weights `w(‖y − x_j‖)`. Only `λ(p)` on the `Q` basis polynomials enters,
//! so one factorized stencil serves any number of functionals at `y`.
//!
//! Classical MLS shape functions and their full derivatives are provided
//! for the reference MLPG path.

use nalgebra::{DMatrix, DVector};

use crate::basis::MonomialBasis;
use crate::error::{Error, Result, UnisolvencyReason};
use crate::geometry::NodeSet;

/// Gram matrices with a larger 1-norm condition estimate are rejected.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Truncated Gaussian weight
/// `w(r) = (exp(−(r/c)²) − exp(−(δ/c)²)) / (1 − exp(−(δ/c)²))` on `[0, δ]`, zero beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightFunction {
    shape: f64,
    support: f64,
    tail: f64,
}

impl WeightFunction {
    pub fn gaussian(shape: f64, support: f64) -> Result<Self> {
        if !(shape > 0.0) || !(support > 0.0) || !shape.is_finite() || !support.is_finite() {
            return Err(Error::Config(format!(
                "weight function needs c > 0 and delta > 0 (c={shape}, delta={support})"
            )));
        }
        Ok(Self {
            shape,
            support,
            tail: (-(support / shape).powi(2)).exp(),
        })
    }

    /// `c = c0·h`, `δ = δ0·h`.
    pub fn scaled(c0: f64, delta0: f64, h: f64) -> Result<Self> {
        Self::gaussian(c0 * h, delta0 * h)
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.support {
            return 0.0;
        }
        ((-(r / self.shape).powi(2)).exp() - self.tail) / (1.0 - self.tail)
    }

    /// `dw/dr` on `[0, δ)`, zero beyond.
    pub fn radial_derivative(&self, r: f64) -> f64 {
        if r >= self.support {
            return 0.0;
        }
        -2.0 * r / (self.shape * self.shape) * (-(r / self.shape).powi(2)).exp() / (1.0 - self.tail)
    }

    /// `∇_x w(‖x − x_j‖)`.
    pub fn gradient_into(&self, x: &[f64], xj: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
        if r2 >= self.support * self.support {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        // dw/dr · (x − x_j)/r with the 1/r folded in, smooth at r = 0
        let factor = -2.0 / (self.shape * self.shape) * (-r2 / (self.shape * self.shape)).exp() / (1.0 - self.tail);
        for ((o, a), b) in out.iter_mut().zip(x).zip(xj) {
            *o = factor * (a - b);
        }
    }
}

/// Sparse GMLS output: one row of the stiffness matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// Caller-defined functional identifier.
    pub functional: usize,
}

impl CoefficientRow {
    /// `∑_j a_j u_j` with `data` indexed by global node number.
    pub fn apply(&self, data: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&j, a)| a * data[j]).sum()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Factorized local least-squares problem around a center point.
#[derive(Debug, Clone)]
pub struct Stencil {
    center: Vec<f64>,
    basis: MonomialBasis,
    neighbors: Vec<usize>,
    /// Column `j` holds `p(x_j)` for the `j`-th neighbour.
    values: DMatrix<f64>,
    weights: DVector<f64>,
    gram: DMatrix<f64>,
    /// Thin QR of `√W Pᵀ` (`N_loc × Q`); `Rᵀ R` is the Gram matrix.
    q_factor: DMatrix<f64>,
    r_factor: DMatrix<f64>,
    condition: f64,
}

impl Stencil {
    /// Gathers `B(y, δ) ∩ X` and factorizes `√W Pᵀ`; the Gram matrix is
    /// formed only for its condition number.
    pub fn build(nodes: &NodeSet, center: &[f64], basis: &MonomialBasis, weight: &WeightFunction) -> Result<Self> {
        Self::build_with_search_radius(nodes, center, basis, weight, weight.support())
    }

    /// As [`Stencil::build`] but searching a radius `≥ δ`; zero-weight nodes are dropped.
    pub fn build_with_search_radius(
        nodes: &NodeSet,
        center: &[f64],
        basis: &MonomialBasis,
        weight: &WeightFunction,
        search_radius: f64,
    ) -> Result<Self> {
        let q = basis.len();
        let unisolvency = |reason, n_local, condition| Error::Unisolvency {
            reason,
            center: center.to_vec(),
            delta: weight.support(),
            n_local,
            q,
            condition,
        };

        let mut neighbors = Vec::new();
        let mut wts = Vec::new();
        for j in nodes.radius_query(center, search_radius.max(weight.support())) {
            let r = dist(nodes.point(j), center);
            let w = weight.eval(r);
            if w > 0.0 {
                neighbors.push(j);
                wts.push(w);
            }
        }
        let n_local = neighbors.len();
        if n_local < q {
            return Err(unisolvency(UnisolvencyReason::TooFewNeighbors, n_local, None));
        }

        let mut values = DMatrix::zeros(q, n_local);
        for (col, &j) in neighbors.iter().enumerate() {
            basis.eval_into(nodes.point(j), values.column_mut(col).as_mut_slice());
        }
        let mut gram = DMatrix::zeros(q, q);
        for (col, &w) in wts.iter().enumerate() {
            let p = values.column(col);
            for b in 0..q {
                let wb = w * p[b];
                for a in b..q {
                    gram[(a, b)] += wb * p[a];
                }
            }
        }
        for b in 0..q {
            for a in (b + 1)..q {
                gram[(b, a)] = gram[(a, b)];
            }
        }

        let mut scaled = values.transpose();
        for (mut row, w) in scaled.row_iter_mut().zip(&wts) {
            row *= w.sqrt();
        }
        let qr = scaled.qr();
        let (q_factor, r_factor) = (qr.q(), qr.r());
        let r_diag = r_factor.diagonal().map(f64::abs);
        if !(r_diag.min() > 1e-14 * r_diag.max()) {
            return Err(unisolvency(UnisolvencyReason::DegenerateGeometry, n_local, None));
        }
        let r_inv = r_factor
            .clone()
            .try_inverse()
            .ok_or_else(|| unisolvency(UnisolvencyReason::DegenerateGeometry, n_local, None))?;
        let condition = one_norm(&gram) * one_norm(&(&r_inv * r_inv.transpose()));
        if !(condition <= MAX_GRAM_CONDITION) {
            return Err(unisolvency(UnisolvencyReason::DegenerateGeometry, n_local, Some(condition)));
        }

        Ok(Self {
            center: center.to_vec(),
            basis: basis.clone(),
            neighbors,
            values,
            weights: DVector::from_vec(wts),
            gram,
            q_factor,
            r_factor,
            condition,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// `P` with `P_kj = p_k(x_j)` (`Q × N_loc`).
    pub fn basis_values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// 1-norm condition number of the Gram matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `(P W Pᵀ)⁻¹ v`.
    pub fn gram_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let t = self.r_factor.tr_solve_upper_triangular(v).expect("R is nonsingular");
        self.r_factor.solve_upper_triangular(&t).expect("R is nonsingular")
    }

    /// `a = W Pᵀ g` with `(P W Pᵀ) g = λ(p)`, computed as `√W Q R⁻ᵀ λ(p)`
    /// plus one refinement step against the residual of `P a = λ(p)`
    /// evaluated in doubled precision.
    pub fn solve(&self, lambda_on_basis: &[f64]) -> Result<CoefficientRow> {
        if lambda_on_basis.len() != self.basis.len() {
            return Err(Error::Argument(format!(
                "functional has {} basis values, stencil basis has {}",
                lambda_on_basis.len(),
                self.basis.len()
            )));
        }
        let sqrt_w = self.weights.map(f64::sqrt);
        let apply = |rhs: DVector<f64>| {
            let t = self.r_factor.tr_solve_upper_triangular(&rhs).expect("R is nonsingular");
            (&self.q_factor * t).component_mul(&sqrt_w)
        };
        let mut coeffs = apply(DVector::from_column_slice(lambda_on_basis));
        let residual = DVector::from_iterator(
            lambda_on_basis.len(),
            lambda_on_basis.iter().enumerate().map(|(k, &l)| {
                let row = self.values.row(k);
                -compensated_dot(row.iter().zip(coeffs.iter()).map(|(p, a)| (*p, *a)), -l)
            }),
        );
        coeffs += apply(residual);
        Ok(CoefficientRow {
            indices: self.neighbors.clone(),
            values: coeffs.iter().copied().collect(),
            functional: 0,
        })
    }
}

/// `init + Σ a·b` with error-free products and compensated summation.
fn compensated_dot(terms: impl Iterator<Item = (f64, f64)>, init: f64) -> f64 {
    let (mut sum, mut comp) = (init, 0.0f64);
    for (a, b) in terms {
        let p = a * b;
        let p_err = a.mul_add(b, -p);
        let t = sum + p;
        let z = t - sum;
        comp += (sum - (t - z)) + (p - z) + p_err;
        sum = t;
    }
    sum + comp
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Builds the stencil at `y` (basis shifted to `y`) and solves for `λ(p)`.
pub fn solve_coefficients(stencil: &Stencil, lambda_on_basis: &[f64]) -> Result<CoefficientRow> {
    stencil.solve(lambda_on_basis)
}

/// GMLS recovery row for `D^α u(y)`.
pub fn gmls_derivative_row(
    nodes: &NodeSet,
    y: &[f64],
    alpha: &[u32],
    basis: &MonomialBasis,
    weight: &WeightFunction,
) -> Result<CoefficientRow> {
    let order: u32 = alpha.iter().sum();
    if order as usize > basis.degree() {
        return Err(Error::Argument(format!(
            "derivative order {order} exceeds polynomial degree {}",
            basis.degree()
        )));
    }
    let basis = basis.recentered(y);
    let stencil = Stencil::build(nodes, y, &basis, weight)?;
    stencil.solve(&basis.eval_derivative(alpha, y))
}

/// Classical MLS shape function values `φ_j(x)` for the nodes around `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeValues {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Classical MLS shape function gradients; `gradients[j * dim + i] = ∂_i φ_j(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeGradients {
    pub indices: Vec<usize>,
    pub dim: usize,
    pub gradients: Vec<f64>,
}

impl ShapeGradients {
    pub fn gradient(&self, local: usize) -> &[f64] {
        &self.gradients[local * self.dim..(local + 1) * self.dim]
    }
}

/// `φ_j(x) = [p(x)ᵀ (P W Pᵀ)⁻¹ P W]_j`, the basis shifted to `x`.
pub fn mls_shape_values(nodes: &NodeSet, x: &[f64], basis: &MonomialBasis, weight: &WeightFunction) -> Result<ShapeValues> {
    let basis = basis.recentered(x);
    let stencil = Stencil::build(nodes, x, &basis, weight)?;
    let row = stencil.solve(&basis.eval(x))?;
    Ok(ShapeValues {
        indices: row.indices,
        values: row.values,
    })
}

/// True gradients of the MLS shape functions, including weight derivatives.
///
/// With `A = P W Pᵀ` and `γ = A⁻¹ p(x)`:
/// `∂_i φ_j = w_j p_jᵀ A⁻¹(∂_i p − (∂_i A) γ) + (∂_i w_j) p_jᵀ γ`.
pub fn mls_shape_gradients(
    nodes: &NodeSet,
    x: &[f64],
    basis: &MonomialBasis,
    weight: &WeightFunction,
) -> Result<ShapeGradients> {
    let basis = basis.recentered(x);
    let stencil = Stencil::build(nodes, x, &basis, weight)?;
    Ok(shape_gradients_from_stencil(nodes, &stencil, weight))
}

pub(crate) fn shape_gradients_from_stencil(nodes: &NodeSet, stencil: &Stencil, weight: &WeightFunction) -> ShapeGradients {
    let x = stencil.center();
    let basis = stencil.basis();
    let dim = x.len();
    let q = basis.len();
    let n_local = stencil.len();
    let p = stencil.basis_values();
    let w = stencil.weights();

    let gamma = stencil.gram_solve(&DVector::from_vec(basis.eval(x)));
    // p_jᵀ γ for every neighbour
    let proj = p.tr_mul(&gamma);

    let mut dw = vec![0.0; n_local * dim];
    for (local, &j) in stencil.neighbors().iter().enumerate() {
        weight.gradient_into(x, nodes.point(j), &mut dw[local * dim..(local + 1) * dim]);
    }

    let grad_p = basis.eval_gradient(x);
    let mut gradients = vec![0.0; n_local * dim];
    for i in 0..dim {
        // rhs = ∂_i p − Σ_j ∂_i w_j p_j (p_jᵀ γ)
        let mut rhs = DVector::from_iterator(q, grad_p.iter().map(|g| g[i]));
        for local in 0..n_local {
            let s = dw[local * dim + i] * proj[local];
            if s != 0.0 {
                rhs.axpy(-s, &p.column(local), 1.0);
            }
        }
        let gamma_i = stencil.gram_solve(&rhs);
        let proj_i = p.tr_mul(&gamma_i);
        for local in 0..n_local {
            gradients[local * dim + i] = w[local] * proj_i[local] + dw[local * dim + i] * proj[local];
        }
    }
    ShapeGradients {
        indices: stencil.neighbors().to_vec(),
        dim,
        gradients,
    }
}
