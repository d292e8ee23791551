//! Uniform tensor grids on intervals and rectangles, nodal fields, trapezoidal
//! quadrature and the discrete norms built on top of it.
//!
//! Nodes sit on the closed domain, including the boundary faces. Values are
//! stored row-major with axis 0 (x) outermost, so in 2D node `(i, j)` lives at
//! `i * ny + j`. A 1D grid is stored as a 2D grid with a single node along the
//! unused axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest derivative order supported by [`deriv_tensor`].
pub const MAX_DERIVATIVE_ORDER: usize = 4;

/// A uniform tensor grid on `[0, Lx]` or `[0, Lx] x [0, Ly]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    extent: [f64; 2],
    n: [usize; 2],
}

impl Grid {
    /// Builds a 1D or 2D grid. `extent` and `n` must have one entry per axis.
    pub fn new(extent: &[f64], n: &[usize]) -> Result<Self> {
        let dim = extent.len();
        if !(1..=2).contains(&dim) || n.len() != dim {
            return Err(Error::param(format!(
                "grid needs 1 or 2 axes with matching extent/n, got {} extents and {} counts",
                extent.len(),
                n.len()
            )));
        }
        let mut g = Grid {
            dim,
            extent: [0.0; 2],
            n: [1; 2],
        };
        for axis in 0..dim {
            if !(extent[axis].is_finite() && extent[axis] > 0.0) {
                return Err(Error::param(format!(
                    "extent along axis {axis} must be positive, got {}",
                    extent[axis]
                )));
            }
            if n[axis] < 3 {
                return Err(Error::param(format!(
                    "grid needs at least 3 nodes per axis, axis {axis} has {}",
                    n[axis]
                )));
            }
            g.extent[axis] = extent[axis];
            g.n[axis] = n[axis];
        }
        Ok(g)
    }

    pub fn line(extent: f64, n: usize) -> Result<Self> {
        Self::new(&[extent], &[n])
    }

    pub fn rect(extent: [f64; 2], n: [usize; 2]) -> Result<Self> {
        Self::new(&extent, &n)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extent[axis]
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / (self.n[axis] - 1) as f64
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|a| self.extent[a]).product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.n[axis] {
            self.extent[axis]
        } else {
            i as f64 * self.spacing(axis)
        }
    }

    /// Physical position of a flat node index; the unused axis reports 0.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let (i, j) = (idx / self.n[1], idx % self.n[1]);
        let y = if self.dim == 2 { self.coord(1, j) } else { 0.0 };
        [self.coord(0, i), y]
    }

    pub(crate) fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            self.n[1]
        } else {
            1
        }
    }

    /// Flat index of the first node of every grid line running along `axis`.
    pub(crate) fn line_starts(&self, axis: usize) -> Vec<usize> {
        if axis == 0 {
            (0..self.n[1]).collect()
        } else {
            (0..self.n[0]).map(|i| i * self.n[1]).collect()
        }
    }

    /// Full-domain trapezoidal weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        InteriorMask::full(*self).weights()
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::contract(format!(
                "grid mismatch: {self:?} vs {other:?}"
            )));
        }
        Ok(())
    }
}

/// A real value per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::contract(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite field value at node {i}")));
        }
        Ok(Field { grid, values })
    }

    /// Wraps values already known to match the grid.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at every node position.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|idx| f(grid.point(idx))).collect();
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Nodewise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        Ok(Field::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub(crate) fn same_grid(&self, other: &Field) -> Result<()> {
        self.grid.check_same(&other.grid)
    }
}

/// Nodes at distance at least `margin` from every face of the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorMask {
    grid: Grid,
    margin: f64,
}

impl InteriorMask {
    pub fn new(grid: Grid, margin: f64) -> Result<Self> {
        if !(margin.is_finite() && margin >= 0.0) {
            return Err(Error::param(format!("mask margin must be >= 0, got {margin}")));
        }
        Ok(InteriorMask { grid, margin })
    }

    /// The whole closed domain.
    pub fn full(grid: Grid) -> Self {
        InteriorMask { grid, margin: 0.0 }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Inclusive node range selected along `axis`, or `None` if empty.
    fn axis_range(&self, axis: usize) -> Option<(usize, usize)> {
        let n = self.grid.nodes(axis);
        if axis >= self.grid.dim() {
            return Some((0, 0));
        }
        let tol = 1e-12 * self.grid.extent(axis);
        let len = self.grid.extent(axis);
        let inside = |i: usize| {
            let x = self.grid.coord(axis, i);
            x >= self.margin - tol && len - x >= self.margin - tol
        };
        let lo = (0..n).find(|&i| inside(i))?;
        let hi = (0..n).rev().find(|&i| inside(i))?;
        Some((lo, hi))
    }

    pub fn contains(&self, idx: usize) -> bool {
        let ij = [idx / self.grid.nodes(1), idx % self.grid.nodes(1)];
        (0..self.grid.dim()).all(|a| match self.axis_range(a) {
            Some((lo, hi)) => (lo..=hi).contains(&ij[a]),
            None => false,
        })
    }

    /// Trapezoidal weights of the masked sub-rectangle (zero outside it).
    pub fn weights(&self) -> Vec<f64> {
        let mut axis_w: Vec<Vec<f64>> = Vec::with_capacity(2);
        for axis in 0..2 {
            let n = self.grid.nodes(axis);
            let mut w = vec![0.0; n];
            if axis >= self.grid.dim() {
                w[0] = 1.0;
            } else if let Some((lo, hi)) = self.axis_range(axis) {
                let h = self.grid.spacing(axis);
                if hi > lo {
                    for (i, wi) in w.iter_mut().enumerate().take(hi + 1).skip(lo) {
                        *wi = if i == lo || i == hi { 0.5 * h } else { h };
                    }
                }
            }
            axis_w.push(w);
        }
        let mut out = Vec::with_capacity(self.grid.len());
        for wi in &axis_w[0] {
            for wj in &axis_w[1] {
                out.push(wi * wj);
            }
        }
        out
    }
}

/// Trapezoidal quadrature of `f` over the masked region.
pub fn integrate(f: &Field, mask: &InteriorMask) -> Result<f64> {
    f.grid.check_same(&mask.grid)?;
    Ok(mask
        .weights()
        .iter()
        .zip(f.values())
        .map(|(w, v)| w * v)
        .sum())
}

pub fn l2_norm(f: &Field, mask: &InteriorMask) -> Result<f64> {
    f.grid.check_same(&mask.grid)?;
    Ok(sum_of_squares(std::slice::from_ref(f), &mask.weights()).sqrt())
}

/// `sqrt(int |grad f|^2)` with centered differences inside and second-order
/// one-sided differences on boundary nodes.
pub fn h1_seminorm(f: &Field, mask: &InteriorMask) -> Result<f64> {
    f.grid.check_same(&mask.grid)?;
    Ok(sum_of_squares(&gradient(f), &mask.weights()).sqrt())
}

/// Weighted sum `sum_c sum_i w_i c_i^2` over several component fields.
pub(crate) fn sum_of_squares(components: &[Field], weights: &[f64]) -> f64 {
    components
        .iter()
        .map(|c| {
            c.values()
                .iter()
                .zip(weights)
                .map(|(v, w)| w * v * v)
                .sum::<f64>()
        })
        .sum()
}

/// First derivative along one axis: centered in the interior, second-order
/// one-sided at both ends of every grid line.
pub fn partial(f: &Field, axis: usize) -> Field {
    let g = f.grid;
    let n = g.nodes(axis);
    let s = g.stride(axis);
    let inv2h = 0.5 / g.spacing(axis);
    let v = f.values();
    let mut out = vec![0.0; v.len()];
    for start in g.line_starts(axis) {
        let at = |i: usize| v[start + i * s];
        out[start] = (4.0 * (at(1) - at(0)) - (at(2) - at(0))) * inv2h;
        for i in 1..n - 1 {
            out[start + i * s] = (at(i + 1) - at(i - 1)) * inv2h;
        }
        out[start + (n - 1) * s] = (4.0 * (at(n - 1) - at(n - 2)) - (at(n - 1) - at(n - 3))) * inv2h;
    }
    Field::from_raw(g, out)
}

/// Discrete gradient, one field per axis.
pub fn gradient(f: &Field) -> Vec<Field> {
    (0..f.grid.dim()).map(|a| partial(f, a)).collect()
}

/// All components of the derivative tensor of total order `order`, indexed by
/// ordered axis tuples in lexicographic order (`d^order` fields in `d`
/// dimensions). Built by repeated first differencing, so nodes near the
/// boundary pick up the shifted one-sided closure.
pub fn deriv_tensor(f: &Field, order: usize) -> Result<Vec<Field>> {
    check_order(f.grid(), order)?;
    if order == 0 {
        return Ok(vec![f.clone()]);
    }
    let dim = f.grid.dim();
    let mut comps = vec![f.clone()];
    for _ in 0..order {
        comps = comps
            .iter()
            .flat_map(|c| (0..dim).map(move |a| partial(c, a)))
            .collect();
    }
    Ok(comps)
}

fn check_order(grid: &Grid, order: usize) -> Result<()> {
    if order > MAX_DERIVATIVE_ORDER {
        return Err(Error::contract(format!(
            "derivative order {order} exceeds the supported maximum {MAX_DERIVATIVE_ORDER}"
        )));
    }
    for axis in 0..grid.dim() {
        if grid.nodes(axis) < 2 * order + 1 {
            return Err(Error::contract(format!(
                "derivative order {order} needs at least {} nodes along axis {axis}, grid has {}",
                2 * order + 1,
                grid.nodes(axis)
            )));
        }
    }
    Ok(())
}

/// Order-`l` seminorm `sqrt(sum_alpha int |d^alpha f|^2)`; `l = 0` is the L2 norm.
pub fn sobolev_seminorm(f: &Field, l: usize, mask: &InteriorMask) -> Result<f64> {
    f.grid.check_same(&mask.grid)?;
    let comps = deriv_tensor(f, l)?;
    Ok(sum_of_squares(&comps, &mask.weights()).sqrt())
}

/// Full `H^l` norm over the mask: square root of the sum of squared seminorms
/// of orders `0..=l`.
pub fn sobolev_norm(f: &Field, l: usize, mask: &InteriorMask) -> Result<f64> {
    let mut acc = 0.0;
    for k in 0..=l {
        acc += sobolev_seminorm(f, k, mask)?.powi(2);
    }
    Ok(acc.sqrt())
}
