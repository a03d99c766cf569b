//! Shifted and scaled monomial basis of `P_m^d`.
//!
//! Basis functions are `p_α(x) = ((x − z)/s)^α` for all multi-indices with
//! `|α| ≤ m`, in graded lexicographic order: first by total degree, then
//! lexicographically with larger exponents of earlier coordinates first.
//! For `d = 2, m = 2` this is `1, x, y, x², xy, y²`.

use crate::error::{Error, Result};

/// Number of monomials of total degree at most `m` in `d` variables, `C(m+d, d)`.
pub fn dimension(m: usize, d: usize) -> usize {
    // multiplicative form stays exact: each partial product is itself a binomial
    (1..=d).fold(1usize, |acc, i| acc * (m + i) / i)
}

/// All multi-indices of `d` variables with `|α| ≤ m` in graded lexicographic order.
pub fn multi_indices(m: usize, d: usize) -> Vec<Vec<u32>> {
    fn fill(total: usize, rest: &mut [u32], prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if rest.len() == 1 {
            prefix.push(total as u32);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=total).rev() {
            prefix.push(first as u32);
            fill(total - first, &mut rest[1..], prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(dimension(m, d));
    let mut scratch = vec![0u32; d];
    for total in 0..=m {
        fill(total, &mut scratch, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonomialBasis {
    degree: usize,
    exponents: Vec<Vec<u32>>,
    shift: Vec<f64>,
    scale: f64,
}

impl MonomialBasis {
    pub fn new(degree: usize, shift: Vec<f64>, scale: f64) -> Result<Self> {
        if shift.is_empty() {
            return Err(Error::Argument("basis dimension must be at least 1".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Argument(format!("basis scale must be positive, got {scale}")));
        }
        let exponents = multi_indices(degree, shift.len());
        Ok(Self {
            degree,
            exponents,
            shift,
            scale,
        })
    }

    /// Same space and scale, new shift point.
    pub fn recentered(&self, shift: &[f64]) -> Self {
        debug_assert_eq!(shift.len(), self.dim());
        Self {
            degree: self.degree,
            exponents: self.exponents.clone(),
            shift: shift.to_vec(),
            scale: self.scale,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// `Q`, the number of basis functions.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Position of a multi-index in the basis ordering.
    pub fn index_of(&self, alpha: &[u32]) -> Option<usize> {
        self.exponents.iter().position(|e| e.as_slice() == alpha)
    }

    /// Per-axis powers `t_i^k` for `k = 0..=degree`, with `t = (x − z)/s`.
    fn powers(&self, x: &[f64]) -> Vec<Vec<f64>> {
        x.iter()
            .zip(&self.shift)
            .map(|(xi, zi)| {
                let t = (xi - zi) / self.scale;
                let mut p = Vec::with_capacity(self.degree + 1);
                let mut acc = 1.0;
                for _ in 0..=self.degree {
                    p.push(acc);
                    acc *= t;
                }
                p
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let pw = self.powers(x);
        for (o, alpha) in out.iter_mut().zip(&self.exponents) {
            *o = alpha
                .iter()
                .enumerate()
                .map(|(i, &a)| pw[i][a as usize])
                .product();
        }
    }

    /// `D^β p_α(x)` for every basis function.
    pub fn eval_derivative(&self, beta: &[u32], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_derivative_into(beta, x, &mut out);
        out
    }

    pub fn eval_derivative_into(&self, beta: &[u32], x: &[f64], out: &mut [f64]) {
        assert_eq!(beta.len(), self.dim(), "derivative order must have one entry per dimension");
        let pw = self.powers(x);
        let order: u32 = beta.iter().sum();
        let inv_scale = self.scale.powi(-(order as i32));
        for (o, alpha) in out.iter_mut().zip(&self.exponents) {
            let mut v = inv_scale;
            for (i, (&a, &b)) in alpha.iter().zip(beta).enumerate() {
                if a < b {
                    v = 0.0;
                    break;
                }
                // falling factorial a!/(a-b)!
                let ff: f64 = ((a - b + 1)..=a).map(f64::from).product();
                v *= ff * pw[i][(a - b) as usize];
            }
            *o = v;
        }
    }

    /// Gradient of every basis function: `grad[k][i] = ∂_i p_k(x)`.
    pub fn eval_gradient(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut grad = vec![vec![0.0; d]; self.len()];
        let mut beta = vec![0u32; d];
        let mut col = vec![0.0; self.len()];
        for i in 0..d {
            beta[i] = 1;
            self.eval_derivative_into(&beta, x, &mut col);
            beta[i] = 0;
            for (g, c) in grad.iter_mut().zip(&col) {
                g[i] = *c;
            }
        }
        grad
    }

    /// Laplacian of every basis function.
    pub fn eval_laplacian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len()];
        let mut col = vec![0.0; self.len()];
        let mut beta = vec![0u32; d];
        for i in 0..d {
            beta[i] = 2;
            self.eval_derivative_into(&beta, x, &mut col);
            beta[i] = 0;
            out.iter_mut().zip(&col).for_each(|(o, c)| *o += c);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(alpha: &[u32], x: &[f64], z: &[f64], s: f64) -> f64 {
        let mut v = 1.0;
        for i in 0..alpha.len() {
            for _ in 0..alpha[i] {
                v *= (x[i] - z[i]) / s;
            }
        }
        v
    }

    #[test]
    fn dimension_values() {
        assert_eq!(dimension(2, 2), 6);
        assert_eq!(dimension(0, 3), 1);
        assert_eq!(dimension(4, 2), 15);
        assert_eq!(dimension(3, 3), 20);
        for m in 0..7 {
            for d in 1..4 {
                assert_eq!(multi_indices(m, d).len(), dimension(m, d));
            }
        }
    }

    #[test]
    fn graded_lex_order() {
        let idx = multi_indices(2, 2);
        assert_eq!(idx, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn eval_at_shift_is_first_unit_vector() {
        let b = MonomialBasis::new(3, vec![0.3, 0.7], 0.1).unwrap();
        let v = b.eval(&[0.3, 0.7]);
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn eval_one_dimensional() {
        let b = MonomialBasis::new(2, vec![0.0], 2.0).unwrap();
        assert_eq!(b.eval(&[4.0]), vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn nonpositive_scale_rejected() {
        assert!(matches!(MonomialBasis::new(2, vec![0.0, 0.0], 0.0), Err(Error::Argument(_))));
        assert!(matches!(MonomialBasis::new(2, vec![0.0, 0.0], -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_order_derivative_is_eval() {
        let b = MonomialBasis::new(4, vec![0.1, -0.2], 0.3).unwrap();
        let x = [0.37, 0.11];
        assert_eq!(b.eval_derivative(&[0, 0], &x), b.eval(&x));
    }

    #[test]
    fn first_derivative_of_linear_term() {
        let s = 0.25;
        let b = MonomialBasis::new(2, vec![0.5, 0.5], s).unwrap();
        let k = b.index_of(&[1, 0]).unwrap();
        for x in [[0.0, 0.0], [0.9, 0.1], [3.0, -2.0]] {
            assert_eq!(b.eval_derivative(&[1, 0], &x)[k], 1.0 / s);
        }
    }

    #[test]
    fn laplacian_of_pure_squares() {
        let s = 0.1;
        let b = MonomialBasis::new(2, vec![0.2, 0.4], s).unwrap();
        let lap = b.eval_laplacian(&[0.7, 0.1]);
        for alpha in [[2u32, 0], [0, 2]] {
            let k = b.index_of(&alpha).unwrap();
            assert_eq!(lap[k], 2.0 / (s * s));
        }
        assert_eq!(lap[b.index_of(&[1, 1]).unwrap()], 0.0);
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let s = 0.2;
        let b = MonomialBasis::new(4, vec![0.4, 0.6], s).unwrap();
        let x = [0.53, 0.71];
        let step = 1e-4 * s;
        let plus = b.eval(&[x[0] + step, x[1]]);
        let mid = b.eval(&x);
        let minus = b.eval(&[x[0] - step, x[1]]);
        let exact = b.eval_derivative(&[2, 0], &x);
        for k in 0..b.len() {
            let fd = (plus[k] - 2.0 * mid[k] + minus[k]) / (step * step);
            let tol = 1e-6 * exact[k].abs().max(1.0 / (s * s));
            assert!((fd - exact[k]).abs() <= tol, "k={k} fd={fd} exact={}", exact[k]);
        }
    }

    proptest! {
        #[test]
        fn eval_matches_naive_products(x0 in -1.0f64..2.0, x1 in -1.0f64..2.0, z0 in 0.0f64..1.0, z1 in 0.0f64..1.0, s in 0.05f64..1.0) {
            let b = MonomialBasis::new(2, vec![z0, z1], s).unwrap();
            let v = b.eval(&[x0, x1]);
            for (k, alpha) in b.exponents().iter().enumerate() {
                let o = naive(alpha, &[x0, x1], &[z0, z1], s);
                prop_assert!((v[k] - o).abs() <= 1e-15 * o.abs().max(1e-300) + 1e-300);
            }
        }

        #[test]
        fn first_derivatives_match_central_differences(x0 in -0.5f64..1.5, x1 in -0.5f64..1.5, axis in 0usize..2) {
            let s = 0.1;
            let b = MonomialBasis::new(4, vec![0.5, 0.5], s).unwrap();
            let x = [x0, x1];
            let step = 1e-4 * s;
            let mut xp = x; xp[axis] += step;
            let mut xm = x; xm[axis] -= step;
            let (vp, vm) = (b.eval(&xp), b.eval(&xm));
            let mut beta = [0u32; 2]; beta[axis] = 1;
            let exact = b.eval_derivative(&beta, &x);
            for k in 0..b.len() {
                let fd = (vp[k] - vm[k]) / (2.0 * step);
                prop_assert!((fd - exact[k]).abs() <= 1e-6 * exact[k].abs().max(1.0 / s));
            }
        }

        #[test]
        fn polynomials_reproduced(coefs in proptest::collection::vec(-3.0f64..3.0, 15), t0 in -10.0f64..10.0, t1 in -10.0f64..10.0) {
            // u = Σ c_k ((x−z)/s)^α_k evaluated two ways
            let (z, s) = ([0.3, -0.1], 0.05);
            let b = MonomialBasis::new(4, z.to_vec(), s).unwrap();
            let x = [z[0] + t0 * s, z[1] + t1 * s];
            let v = b.eval(&x);
            let via_basis: f64 = coefs.iter().zip(&v).map(|(c, p)| c * p).sum();
            let direct: f64 = b.exponents().iter().zip(&coefs)
                .map(|(a, c)| c * t0.powi(a[0] as i32) * t1.powi(a[1] as i32)).sum();
            let magnitude: f64 = b.exponents().iter().zip(&coefs)
                .map(|(a, c)| (c * t0.powi(a[0] as i32) * t1.powi(a[1] as i32)).abs()).sum();
            prop_assert!((via_basis - direct).abs() <= 1e-13 * magnitude.max(1.0));
        }
    }
}
