//! Gauss–Legendre and derived rules for subdomain interiors and boundaries.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;
pub const MAX_GAUSS_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Interval { a: f64, b: f64 },
    Rectangle { lo: Vec<f64>, hi: Vec<f64> },
    RectangleBoundary { lo: Vec<f64>, hi: Vec<f64> },
    Circle { center: Vec<f64>, radius: f64 },
    Disk { center: Vec<f64>, radius: f64 },
}

impl Region {
    /// Length, area or perimeter of the region.
    pub fn measure(&self) -> f64 {
        match self {
            Region::Interval { a, b } => b - a,
            Region::Rectangle { lo, hi } => lo.iter().zip(hi).map(|(l, h)| h - l).product(),
            Region::RectangleBoundary { lo, hi } => 2.0 * ((hi[0] - lo[0]) + (hi[1] - lo[1])),
            Region::Circle { radius, .. } => 2.0 * PI * radius,
            Region::Disk { radius, .. } => PI * radius * radius,
        }
    }
}

/// Weighted point set; boundary rules also carry the outward unit normal of each point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    normals: Option<Vec<f64>>,
    region: Region,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }

    pub fn weight(&self, q: usize) -> f64 {
        self.weights[q]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normal(&self, q: usize) -> Option<&[f64]> {
        self.normals.as_ref().map(|n| &n[q * self.dim..(q + 1) * self.dim])
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    /// Iterator over `(point, weight)`.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    /// `∑ w_q f(x_q, n_q)` over a boundary rule.
    pub fn integrate_flux(&self, mut f: impl FnMut(&[f64], &[f64]) -> f64) -> Result<f64> {
        if !self.has_normals() {
            return Err(Error::Config("flux integral requires a boundary rule with normals".into()));
        }
        Ok((0..self.len())
            .map(|q| self.weights[q] * f(self.point(q), self.normal(q).unwrap()))
            .sum())
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_GAUSS_POINTS {
        return Err(Error::Argument(format!(
            "Gauss-Legendre point count must be in 1..={MAX_GAUSS_POINTS}, got {n}"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    if n == 1 {
        weights[0] = 2.0;
    } else {
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..NEWTON_MAX_ITER {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= NEWTON_TOL {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // x is the i-th largest node
            nodes[n - 1 - i] = x;
            nodes[i] = -x;
            weights[n - 1 - i] = w;
            weights[i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
    }
    Ok(QuadratureRule {
        dim: 1,
        points: nodes,
        weights,
        normals: None,
        region: Region::Interval { a: -1.0, b: 1.0 },
    })
}

/// Gauss–Legendre nodes and weights mapped to `[a, b]`.
fn mapped_gauss(n: usize, a: f64, b: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let gl = gauss_legendre(n)?;
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let pts = (0..n).map(|q| mid + half * gl.point(q)[0]).collect();
    let wts = gl.weights().iter().map(|w| w * half).collect();
    Ok((pts, wts))
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Error::Argument(format!("degenerate rectangle lo={lo:?} hi={hi:?}")));
    }
    Ok(())
}

/// Tensor-product Gauss rule on the box `[lo, hi]`, `points_per_axis[i]` points on axis `i`.
pub fn tensor_rectangle(points_per_axis: &[usize], lo: &[f64], hi: &[f64]) -> Result<QuadratureRule> {
    check_box(lo, hi)?;
    let dim = lo.len();
    if points_per_axis.len() != dim {
        return Err(Error::Argument(format!(
            "need one point count per axis ({dim}), got {}",
            points_per_axis.len()
        )));
    }
    let axes = (0..dim)
        .map(|i| mapped_gauss(points_per_axis[i], lo[i], hi[i]))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = points_per_axis.iter().product();
    let mut points = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let mut w = 1.0;
        for i in 0..dim {
            points.push(axes[i].0[idx[i]]);
            w *= axes[i].1[idx[i]];
        }
        weights.push(w);
        for i in 0..dim {
            idx[i] += 1;
            if idx[i] < points_per_axis[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(QuadratureRule {
        dim,
        points,
        weights,
        normals: None,
        region: Region::Rectangle {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        },
    })
}

/// Axis-aligned square `[c − s/2, c + s/2]^d`.
pub fn square_bounds(center: &[f64], side: f64) -> (Vec<f64>, Vec<f64>) {
    let lo = center.iter().map(|c| c - 0.5 * side).collect();
    let hi = center.iter().map(|c| c + 0.5 * side).collect();
    (lo, hi)
}

/// Gauss rule on each of the four edges of a 2-D rectangle.
///
/// Edges follow facet numbering: `x = lo`, `x = hi`, `y = lo`, `y = hi`.
pub fn rectangle_boundary(points_per_edge: usize, lo: &[f64], hi: &[f64]) -> Result<QuadratureRule> {
    check_box(lo, hi)?;
    if lo.len() != 2 {
        return Err(Error::Argument(format!(
            "rectangle boundary rules are two-dimensional, got dimension {}",
            lo.len()
        )));
    }
    let (ys, wy) = mapped_gauss(points_per_edge, lo[1], hi[1])?;
    let (xs, wx) = mapped_gauss(points_per_edge, lo[0], hi[0])?;
    let n = points_per_edge;
    let mut points = Vec::with_capacity(8 * n);
    let mut normals = Vec::with_capacity(8 * n);
    let mut weights = Vec::with_capacity(4 * n);
    for (x, nx) in [(lo[0], -1.0), (hi[0], 1.0)] {
        for q in 0..n {
            points.extend_from_slice(&[x, ys[q]]);
            normals.extend_from_slice(&[nx, 0.0]);
            weights.push(wy[q]);
        }
    }
    for (y, ny) in [(lo[1], -1.0), (hi[1], 1.0)] {
        for q in 0..n {
            points.extend_from_slice(&[xs[q], y]);
            normals.extend_from_slice(&[0.0, ny]);
            weights.push(wx[q]);
        }
    }
    Ok(QuadratureRule {
        dim: 2,
        points,
        weights,
        normals: Some(normals),
        region: Region::RectangleBoundary {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        },
    })
}

/// Equal-weight trapezoidal rule in angle on a circle, with radial normals.
pub fn circle_boundary(n: usize, center: &[f64], radius: f64) -> Result<QuadratureRule> {
    if center.len() != 2 {
        return Err(Error::Argument("circle rules are two-dimensional".into()));
    }
    if !(radius > 0.0) || n < 4 {
        return Err(Error::Argument(format!(
            "circle rule needs radius > 0 and at least 4 points (radius={radius}, n={n})"
        )));
    }
    let w = 2.0 * PI * radius / n as f64;
    let mut points = Vec::with_capacity(2 * n);
    let mut normals = Vec::with_capacity(2 * n);
    for q in 0..n {
        let theta = 2.0 * PI * q as f64 / n as f64;
        let (s, c) = theta.sin_cos();
        points.extend_from_slice(&[center[0] + radius * c, center[1] + radius * s]);
        normals.extend_from_slice(&[c, s]);
    }
    Ok(QuadratureRule {
        dim: 2,
        points,
        weights: vec![w; n],
        normals: Some(normals),
        region: Region::Circle {
            center: center.to_vec(),
            radius,
        },
    })
}

/// Polar rule on a disk: Gauss–Legendre in radius (with Jacobian) times trapezoid in angle.
pub fn disk(n_radial: usize, n_angular: usize, center: &[f64], radius: f64) -> Result<QuadratureRule> {
    if center.len() != 2 {
        return Err(Error::Argument("disk rules are two-dimensional".into()));
    }
    if !(radius > 0.0) || n_angular == 0 {
        return Err(Error::Argument(format!(
            "disk rule needs radius > 0 and angular points (radius={radius}, n_angular={n_angular})"
        )));
    }
    let (rs, wr) = mapped_gauss(n_radial, 0.0, radius)?;
    let dtheta = 2.0 * PI / n_angular as f64;
    let mut points = Vec::with_capacity(2 * n_radial * n_angular);
    let mut weights = Vec::with_capacity(n_radial * n_angular);
    for (r, w) in rs.iter().zip(&wr) {
        for q in 0..n_angular {
            let (s, c) = (dtheta * q as f64).sin_cos();
            points.extend_from_slice(&[center[0] + r * c, center[1] + r * s]);
            weights.push(w * r * dtheta);
        }
    }
    Ok(QuadratureRule {
        dim: 2,
        points,
        weights,
        normals: None,
        region: Region::Disk {
            center: center.to_vec(),
            radius,
        },
    })
}
