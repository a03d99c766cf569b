//! Rectangular domains, node sets and radius queries.
//!
//! Points are stored as flat coordinate slices of length `dim`, so the same
//! code serves segments, rectangles and boxes. Facets of a rectangle are
//! numbered `2 * axis + side` where `side` is 0 for the `lo` face and 1 for
//! the `hi` face.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Relative tolerance used for boundary tagging and spacing divisibility.
const GEOM_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// Axis-aligned box `[lo, hi]` with one boundary kind per facet.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle {
    lo: Vec<f64>,
    hi: Vec<f64>,
    kinds: Vec<BoundaryKind>,
}

impl Rectangle {
    /// All facets default to Dirichlet.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Argument(format!(
                "rectangle corners must have equal positive dimension (got {} and {})",
                lo.len(),
                hi.len()
            )));
        }
        if let Some(axis) = (0..lo.len()).find(|&i| !(lo[i] < hi[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
            return Err(Error::Argument(format!(
                "rectangle needs lo < hi on every axis; axis {axis} has lo={} hi={}",
                lo[axis], hi[axis]
            )));
        }
        let kinds = vec![BoundaryKind::Dirichlet; 2 * lo.len()];
        Ok(Self { lo, hi, kinds })
    }

    pub fn unit_square() -> Self {
        Self::new(vec![0.0, 0.0], vec![1.0, 1.0]).expect("unit square is valid")
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn with_boundary(mut self, facet: usize, kind: BoundaryKind) -> Result<Self> {
        if facet >= self.kinds.len() {
            return Err(Error::Argument(format!(
                "facet {facet} does not exist (domain has {} facets)",
                self.kinds.len()
            )));
        }
        self.kinds[facet] = kind;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn facet_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn facet_kind(&self, facet: usize) -> BoundaryKind {
        self.kinds[facet]
    }

    /// Axis and side (0 = lo, 1 = hi) of a facet.
    pub fn facet_axis_side(facet: usize) -> (usize, usize) {
        (facet / 2, facet % 2)
    }

    /// Outward unit normal of a facet.
    pub fn facet_normal(&self, facet: usize) -> Vec<f64> {
        let (axis, side) = Self::facet_axis_side(facet);
        let mut n = vec![0.0; self.dim()];
        n[axis] = if side == 0 { -1.0 } else { 1.0 };
        n
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i).powi(2)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| {
                let tol = GEOM_RTOL * self.side(i);
                x[i] >= self.lo[i] - tol && x[i] <= self.hi[i] + tol
            })
    }

    /// Distance from an interior point to the boundary (0 outside).
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|i| (x[i] - self.lo[i]).min(self.hi[i] - x[i]))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    /// Lowest-id facet the point lies on, if any.
    pub fn facet_of(&self, x: &[f64]) -> Option<usize> {
        (0..self.facet_count()).find(|&f| {
            let (axis, side) = Self::facet_axis_side(f);
            let tol = GEOM_RTOL * self.side(axis);
            let plane = if side == 0 { self.lo[axis] } else { self.hi[axis] };
            (x[axis] - plane).abs() <= tol
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeTag {
    Interior,
    Facet(usize),
}

impl NodeTag {
    pub fn is_boundary(self) -> bool {
        matches!(self, NodeTag::Facet(_))
    }
}

impl fmt::Display for NodeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeTag::Interior => f.write_str("interior"),
            NodeTag::Facet(k) => write!(f, "facet{k}"),
        }
    }
}

impl FromStr for NodeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "interior" {
            return Ok(NodeTag::Interior);
        }
        s.strip_prefix("facet")
            .and_then(|k| k.parse().ok())
            .map(NodeTag::Facet)
            .ok_or_else(|| Error::Argument(format!("unknown node tag `{s}`")))
    }
}

/// Uniform bucket grid; cell entries are stored CSR-style in ascending node order.
#[derive(Debug, Clone)]
struct BucketGrid {
    origin: Vec<f64>,
    cell: f64,
    counts: Vec<usize>,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl BucketGrid {
    fn build(dim: usize, coords: &[f64], cell: f64) -> Self {
        let n = coords.len() / dim;
        let mut origin = vec![f64::INFINITY; dim];
        let mut top = vec![f64::NEG_INFINITY; dim];
        for p in coords.chunks_exact(dim) {
            for i in 0..dim {
                origin[i] = origin[i].min(p[i]);
                top[i] = top[i].max(p[i]);
            }
        }
        if n == 0 {
            origin.iter_mut().for_each(|o| *o = 0.0);
            top.iter_mut().for_each(|t| *t = 0.0);
        }
        let counts: Vec<usize> = (0..dim)
            .map(|i| ((top[i] - origin[i]) / cell).floor() as usize + 1)
            .collect();
        let total: usize = counts.iter().product();
        let mut grid = Self {
            origin,
            cell,
            counts,
            starts: vec![0; total + 1],
            items: vec![0; n],
        };
        let cell_ids: Vec<usize> = coords.chunks_exact(dim).map(|p| grid.cell_id(p)).collect();
        for &c in &cell_ids {
            grid.starts[c + 1] += 1;
        }
        for c in 0..total {
            grid.starts[c + 1] += grid.starts[c];
        }
        let mut fill = grid.starts.clone();
        for (j, &c) in cell_ids.iter().enumerate() {
            grid.items[fill[c]] = j;
            fill[c] += 1;
        }
        grid
    }

    fn axis_cell(&self, axis: usize, x: f64) -> isize {
        ((x - self.origin[axis]) / self.cell).floor() as isize
    }

    fn cell_id(&self, p: &[f64]) -> usize {
        let mut id = 0;
        for axis in (0..p.len()).rev() {
            let c = self.axis_cell(axis, p[axis]).clamp(0, self.counts[axis] as isize - 1) as usize;
            id = id * self.counts[axis] + c;
        }
        id
    }

    /// Calls `visit` with every node index stored in cells overlapping the box `center ± radius`.
    fn for_each_candidate(&self, center: &[f64], radius: f64, mut visit: impl FnMut(usize)) {
        let dim = center.len();
        let mut lo = vec![0usize; dim];
        let mut hi = vec![0usize; dim];
        for axis in 0..dim {
            let top = self.counts[axis] as isize - 1;
            let a = self.axis_cell(axis, center[axis] - radius);
            let b = self.axis_cell(axis, center[axis] + radius);
            if b < 0 || a > top {
                return;
            }
            lo[axis] = a.max(0) as usize;
            hi[axis] = b.min(top) as usize;
        }
        let mut idx = lo.clone();
        loop {
            let mut id = 0;
            for axis in (0..dim).rev() {
                id = id * self.counts[axis] + idx[axis];
            }
            for &j in &self.items[self.starts[id]..self.starts[id + 1]] {
                visit(j);
            }
            // odometer increment
            let mut axis = 0;
            loop {
                if axis == dim {
                    return;
                }
                if idx[axis] < hi[axis] {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = lo[axis];
                axis += 1;
            }
        }
    }
}

/// Immutable set of trial nodes with boundary tags and a spatial index.
#[derive(Debug, Clone)]
pub struct NodeSet {
    dim: usize,
    coords: Vec<f64>,
    tags: Vec<NodeTag>,
    spacing: f64,
    index: BucketGrid,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl NodeSet {
    /// Builds a node set from explicit points; tags are derived from the domain.
    ///
    /// `spacing` is the characteristic node spacing and sets the bucket size.
    pub fn from_points(domain: &Rectangle, points: &[Vec<f64>], spacing: f64) -> Result<Self> {
        let tags = points
            .iter()
            .map(|p| domain.facet_of(p).map_or(NodeTag::Interior, NodeTag::Facet))
            .collect();
        Self::with_tags(domain, points, tags, spacing)
    }

    fn with_tags(domain: &Rectangle, points: &[Vec<f64>], tags: Vec<NodeTag>, spacing: f64) -> Result<Self> {
        let dim = domain.dim();
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::Argument(format!("node spacing must be positive, got {spacing}")));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for (j, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Argument(format!(
                    "node {j} has {} coordinates, domain dimension is {dim}",
                    p.len()
                )));
            }
            if !domain.contains(p) {
                return Err(Error::Argument(format!("node {j} at {p:?} lies outside the domain")));
            }
            coords.extend_from_slice(p);
        }
        let index = BucketGrid::build(dim, &coords, spacing);
        let set = Self {
            dim,
            coords,
            tags,
            spacing,
            index,
        };
        for j in 0..set.len() {
            let dup = set
                .radius_query(set.point(j), 0.0)
                .into_iter()
                .find(|&i| i != j);
            if let Some(i) = dup {
                return Err(Error::Argument(format!("nodes {i} and {j} coincide at {:?}", set.point(j))));
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn tag(&self, j: usize) -> NodeTag {
        self.tags[j]
    }

    /// Indices of all nodes with `‖x_j − center‖ ≤ radius`, ascending.
    pub fn radius_query(&self, center: &[f64], radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        self.index.for_each_candidate(center, radius, |j| {
            if dist2(self.point(j), center) <= r2 {
                out.push(j);
            }
        });
        out.sort_unstable();
        out
    }

    /// Nearest node to `x`, skipping `exclude`. Returns `(index, distance)`.
    pub fn nearest(&self, x: &[f64], exclude: Option<usize>) -> Option<(usize, f64)> {
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        if available == 0 {
            return None;
        }
        let mut radius = self.spacing;
        loop {
            let mut best: Option<(usize, f64)> = None;
            let r2 = radius * radius;
            self.index.for_each_candidate(x, radius, |j| {
                if Some(j) == exclude {
                    return;
                }
                let d2 = dist2(self.point(j), x);
                if d2 <= r2 && best.is_none_or(|(bj, bd)| d2 < bd || (d2 == bd && j < bj)) {
                    best = Some((j, d2));
                }
            });
            if let Some((j, d2)) = best {
                return Some((j, d2.sqrt()));
            }
            radius *= 2.0;
        }
    }

    /// Writes one line per node: coordinates then the tag.
    pub fn write_table<W: Write>(&self, mut out: W) -> Result<()> {
        for j in 0..self.len() {
            let coords: Vec<String> = self.point(j).iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(out, "{} {}", coords.join(" "), self.tag(j))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`NodeSet::write_table`]; stored tags are kept.
    pub fn read_table<R: BufRead>(domain: &Rectangle, input: R, spacing: f64) -> Result<Self> {
        let dim = domain.dim();
        let mut points = Vec::new();
        let mut tags = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != dim + 1 {
                return Err(Error::Argument(format!(
                    "node table line {}: expected {} fields, found {}",
                    lineno + 1,
                    dim + 1,
                    fields.len()
                )));
            }
            let p = fields[..dim]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Argument(format!("node table line {}: {e}", lineno + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            points.push(p);
            tags.push(fields[dim].parse()?);
        }
        Self::with_tags(domain, &points, tags, spacing)
    }
}

/// Tensor grid with spacing `h` including the boundary nodes.
///
/// Nodes are ordered with the first coordinate varying fastest.
pub fn generate_grid(domain: &Rectangle, h: f64) -> Result<NodeSet> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("grid spacing must be positive, got h={h}")));
    }
    let dim = domain.dim();
    let mut cells = Vec::with_capacity(dim);
    for axis in 0..dim {
        let ratio = domain.side(axis) / h;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > GEOM_RTOL * ratio.max(1.0) * 16.0 {
            return Err(Error::Config(format!(
                "h={h} does not divide side {axis} of length {} (ratio {ratio})",
                domain.side(axis)
            )));
        }
        cells.push(n as usize);
    }
    let total: usize = cells.iter().map(|c| c + 1).product();
    let mut points = Vec::with_capacity(total);
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let p: Vec<f64> = (0..dim)
            .map(|a| {
                if idx[a] == cells[a] {
                    domain.hi()[a]
                } else {
                    domain.lo()[a] + idx[a] as f64 * h
                }
            })
            .collect();
        points.push(p);
        for a in 0..dim {
            if idx[a] < cells[a] {
                idx[a] += 1;
                break;
            }
            idx[a] = 0;
        }
    }
    NodeSet::from_points(domain, &points, h)
}

/// Probe estimate of `sup_{x∈Ω} min_j ‖x − x_j‖`.
///
/// Probes form a regular grid with `density` subdivisions per spacing cell
/// on each axis; doubling the density refines the same probe lattice.
pub fn fill_distance(nodes: &NodeSet, domain: &Rectangle, density: usize) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Argument("fill distance of an empty node set".into()));
    }
    if density < 4 {
        return Err(Error::Argument(format!("probe density must be at least 4, got {density}")));
    }
    let dim = domain.dim();
    let per_axis: Vec<usize> = (0..dim)
        .map(|a| (domain.side(a) / nodes.spacing()).ceil().max(1.0) as usize * density)
        .collect();
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let mut worst = 0.0f64;
    loop {
        for a in 0..dim {
            x[a] = domain.lo()[a] + domain.side(a) * idx[a] as f64 / per_axis[a] as f64;
        }
        let (_, d) = nodes.nearest(&x, None).expect("non-empty node set");
        worst = worst.max(d);
        let mut a = 0;
        loop {
            if a == dim {
                return Ok(worst);
            }
            if idx[a] < per_axis[a] {
                idx[a] += 1;
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// Half of the minimum pairwise node distance.
pub fn separation_distance(nodes: &NodeSet) -> Result<f64> {
    if nodes.len() < 2 {
        return Err(Error::Argument(format!(
            "separation distance needs at least 2 nodes, got {}",
            nodes.len()
        )));
    }
    let min = (0..nodes.len())
        .map(|j| nodes.nearest(nodes.point(j), Some(j)).expect("at least two nodes").1)
        .fold(f64::INFINITY, f64::min);
    Ok(0.5 * min)
}
