//! Periodic uniform grids on the flat torus, cell-centred field containers
//! and second-order central finite-difference operators.
//!
//! Storage is row-major over `(x, y)`: in 2D the cell `(i, j)` lives at
//! `i * n + j`, so the `y` index runs fastest. All stencils wrap around.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Default axis period: the torus `[-1, 1]` with the endpoints identified.
pub const DEFAULT_LENGTH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    length: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::UnsupportedDimension { dim, what: "grids exist for d = 1, 2" });
        }
        if n < 8 || n % 2 != 0 {
            return Err(Error::param(alloc::format!("grid needs n >= 8 and even, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::param(alloc::format!("axis period must be positive, got {length}")));
        }
        Ok(Grid { dim, n, length })
    }

    /// Grid on the standard torus `[-1, 1]^dim`.
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        Grid::new(dim, n, DEFAULT_LENGTH)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Number of cells, `n^dim`.
    #[inline]
    pub fn cells(&self) -> usize {
        if self.dim == 1 {
            self.n
        } else {
            self.n * self.n
        }
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        let dx = self.dx();
        if self.dim == 1 {
            dx
        } else {
            dx * dx
        }
    }

    /// Measure of the whole torus.
    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.cells() as f64
    }

    /// Coordinate of the `i`-th cell centre along one axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.length + (i as f64 + 0.5) * self.dx()
    }

    /// Cell-centre position of a flat cell index; unused axes are zero.
    pub fn center(&self, cell: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.coord(cell), 0.0]
        } else {
            [self.coord(cell / self.n), self.coord(cell % self.n)]
        }
    }

    /// Memory stride of an axis.
    #[inline]
    pub(crate) fn stride(&self, axis: usize) -> usize {
        if self.dim == 2 && axis == 0 {
            self.n
        } else {
            1
        }
    }

    /// Flat indices of the periodic neighbours `(minus, plus)` of `cell` along `axis`.
    #[inline]
    pub(crate) fn neighbours(&self, cell: usize, axis: usize) -> (usize, usize) {
        let s = self.stride(axis);
        let n = self.n;
        let c = (cell / s) % n;
        let minus = if c == 0 { cell + (n - 1) * s } else { cell - s };
        let plus = if c + 1 == n { cell - (n - 1) * s } else { cell + s };
        (minus, plus)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, data: vec![0.0; grid.cells()] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        ScalarField { grid, data: vec![value; grid.cells()] }
    }

    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.cells() {
            return Err(Error::usage(alloc::format!(
                "scalar field needs {} values, got {}",
                grid.cells(),
                data.len()
            )));
        }
        Ok(ScalarField { grid, data })
    }

    /// Samples `f` at the cell centres.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        let data = (0..grid.cells()).map(|c| f(grid.center(c))).collect();
        ScalarField { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        ScalarField { grid: self.grid, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        ScalarField { grid: self.grid, data }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| f64::max(m, crate::math::abs(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField { grid, comps: vec![vec![0.0; grid.cells()]; grid.dim()] }
    }

    /// Spatially constant field; only the first `dim` entries of `value` are used.
    pub fn constant(grid: Grid, value: [f64; 2]) -> Self {
        VectorField {
            grid,
            comps: (0..grid.dim()).map(|a| vec![value[a]; grid.cells()]).collect(),
        }
    }

    pub fn from_components(grid: Grid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != grid.dim() || comps.iter().any(|c| c.len() != grid.cells()) {
            return Err(Error::usage("vector field shape does not match grid"));
        }
        Ok(VectorField { grid, comps })
    }

    pub fn from_scalars(comps: Vec<ScalarField>) -> Result<Self> {
        let grid = *comps.first().ok_or_else(|| Error::usage("no components"))?.grid();
        if comps.iter().any(|c| *c.grid() != grid) {
            return Err(Error::usage("component grids differ"));
        }
        Self::from_components(grid, comps.into_iter().map(ScalarField::into_vec).collect())
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(grid);
        for c in 0..grid.cells() {
            let v = f(grid.center(c));
            for a in 0..grid.dim() {
                out.comps[a][c] = v[a];
            }
        }
        out
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn component(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    #[inline]
    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comps[axis]
    }

    pub fn component_field(&self, axis: usize) -> ScalarField {
        ScalarField { grid: self.grid, data: self.comps[axis].clone() }
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        VectorField {
            grid: self.grid,
            comps: self.comps.iter().map(|c| c.iter().map(|&v| f(v)).collect()).collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, other: &VectorField) {
        for (s, o) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in s.iter_mut().zip(o) {
                *x += a * y;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// Pointwise squared Euclidean norm.
    pub fn norm_sq(&self) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        for c in &self.comps {
            for (o, v) in out.data.iter_mut().zip(c) {
                *o += v * v;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, &v| f64::max(m, crate::math::abs(v)))
    }

    /// Largest pointwise Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        crate::math::sqrt(self.norm_sq().max())
    }

    pub fn all_finite(&self) -> bool {
        self.comps.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// Pointwise division by a scalar field.
    pub fn div_scalar(&self, s: &ScalarField) -> Self {
        VectorField {
            grid: self.grid,
            comps: self.comps.iter().map(|c| c.iter().zip(&s.data).map(|(v, r)| v / r).collect()).collect(),
        }
    }

    /// Pointwise multiplication by a scalar field.
    pub fn mul_scalar(&self, s: &ScalarField) -> Self {
        VectorField {
            grid: self.grid,
            comps: self.comps.iter().map(|c| c.iter().zip(&s.data).map(|(v, r)| v * r).collect()).collect(),
        }
    }

    /// Pointwise dot product.
    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for ((o, x), y) in out.data.iter_mut().zip(a).zip(b) {
                *o += x * y;
            }
        }
        out
    }
}

/// Either rank of field, for the rank-checked [`diff_op`] entry point.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Scalar(ScalarField),
    Vector(VectorField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffKind {
    Grad,
    Div,
    Laplacian,
    Partial(usize),
}

/// Rank-checked dispatch over the central-difference operators.
pub fn diff_op(f: &Field, kind: DiffKind) -> Result<Field> {
    match (f, kind) {
        (Field::Scalar(s), DiffKind::Grad) => Ok(Field::Vector(grad(s))),
        (Field::Vector(v), DiffKind::Div) => Ok(Field::Scalar(div(v))),
        (Field::Scalar(s), DiffKind::Laplacian) => Ok(Field::Scalar(laplacian(s))),
        (Field::Vector(v), DiffKind::Laplacian) => Ok(Field::Vector(vector_laplacian(v))),
        (Field::Scalar(s), DiffKind::Partial(axis)) => {
            check_axis(s.grid(), axis)?;
            Ok(Field::Scalar(partial(s, axis)))
        }
        (Field::Vector(v), DiffKind::Partial(axis)) => {
            check_axis(v.grid(), axis)?;
            let comps = v.comps.iter().map(|c| partial_raw(v.grid(), c, axis)).collect();
            Ok(Field::Vector(VectorField { grid: *v.grid(), comps }))
        }
        (Field::Vector(_), DiffKind::Grad) => Err(Error::usage("grad expects a scalar field")),
        (Field::Scalar(_), DiffKind::Div) => Err(Error::usage("div expects a vector field")),
    }
}

fn check_axis(grid: &Grid, axis: usize) -> Result<()> {
    if axis >= grid.dim() {
        return Err(Error::usage(alloc::format!("axis {axis} out of range for dimension {}", grid.dim())));
    }
    Ok(())
}

pub(crate) fn partial_raw(grid: &Grid, f: &[f64], axis: usize) -> Vec<f64> {
    let inv = 0.5 / grid.dx();
    (0..f.len())
        .map(|c| {
            let (m, p) = grid.neighbours(c, axis);
            (f[p] - f[m]) * inv
        })
        .collect()
}

/// Central difference `(f[i+1] - f[i-1]) / (2 dx)` along `axis`.
pub fn partial(f: &ScalarField, axis: usize) -> ScalarField {
    ScalarField { grid: f.grid, data: partial_raw(&f.grid, &f.data, axis) }
}

pub fn grad(f: &ScalarField) -> VectorField {
    let comps = (0..f.grid.dim()).map(|a| partial_raw(&f.grid, &f.data, a)).collect();
    VectorField { grid: f.grid, comps }
}

pub fn div(v: &VectorField) -> ScalarField {
    let mut out = ScalarField::zeros(v.grid);
    for (a, c) in v.comps.iter().enumerate() {
        for (o, d) in out.data.iter_mut().zip(partial_raw(&v.grid, c, a)) {
            *o += d;
        }
    }
    out
}

/// Composed stencil `div(grad f)`; the wide five-point (per axis) Laplacian.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    div(&grad(f))
}

pub fn vector_laplacian(v: &VectorField) -> VectorField {
    let comps = v.comps.iter().map(|c| laplacian(&ScalarField { grid: v.grid, data: c.clone() }).data).collect();
    VectorField { grid: v.grid, comps }
}

/// Velocity gradient `G[i][j] = ∂_j u_i` by central differences.
pub fn jacobian(u: &VectorField) -> Vec<Vec<Vec<f64>>> {
    u.comps
        .iter()
        .map(|c| (0..u.grid.dim()).map(|j| partial_raw(&u.grid, c, j)).collect())
        .collect()
}

/// Midpoint (rectangle) rule over the torus: `Σ f · dx^dim`.
pub fn integrate(f: &ScalarField) -> f64 {
    f.data.iter().sum::<f64>() * f.grid.cell_volume()
}

pub(crate) fn integrate_raw(grid: &Grid, f: &[f64]) -> f64 {
    f.iter().sum::<f64>() * grid.cell_volume()
}

/// Discrete `L²` inner product of vector fields.
pub fn inner(a: &VectorField, b: &VectorField) -> f64 {
    integrate(&a.dot(b))
}

/// Discrete `L²` inner product of scalar fields.
pub fn inner_scalar(a: &ScalarField, b: &ScalarField) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>() * a.grid.cell_volume()
}
