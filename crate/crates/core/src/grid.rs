//! Uniform grids, finite cell sets on them, and axis-aligned windows.
//!
//! A cell with integer index `k` occupies `origin + h·[k, k+1)`. Shapes are
//! stored as a sorted, duplicate-free cell list together with a hash index
//! for neighbor lookups. Coordinates past `dim` are always zero.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DIM: usize = 3;

/// Integer index vector of a grid cell. Entries at positions `>= dim` are 0.
pub type Cell = [i64; MAX_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1, 2 or 3 (got {0})")]
    BadDimension(usize),
    #[error("grid spacing must be positive and finite (got {0})")]
    BadSpacing(f64),
    #[error("origin has {got} coordinates, expected {expected}")]
    BadOrigin { expected: usize, got: usize },
    #[error("cell {0:?} has nonzero coordinates beyond the grid dimension")]
    BadCell(Cell),
    #[error("shapes live on different grids")]
    GridMismatch,
    #[error("operation needs a nonempty shape")]
    EmptyShape,
    #[error("refinement factor must be at least 1")]
    BadFactor,
    #[error("shape is not a union of coarse cells for factor {0}")]
    NotAligned(i64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    spacing: f64,
    origin: [f64; MAX_DIM],
}

impl Grid {
    pub fn new(dim: usize, spacing: f64, origin: &[f64]) -> Result<Self, GridError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(GridError::BadDimension(dim));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(GridError::BadSpacing(spacing));
        }
        if origin.len() != dim {
            return Err(GridError::BadOrigin {
                expected: dim,
                got: origin.len(),
            });
        }
        let mut o = [0.0; MAX_DIM];
        o[..dim].copy_from_slice(origin);
        Ok(Self {
            dim,
            spacing,
            origin: o,
        })
    }

    /// Grid of the given dimension with spacing `h` and origin at zero.
    pub fn with_dim(dim: usize, spacing: f64) -> Result<Self, GridError> {
        Self::new(dim, spacing, &vec![0.0; dim.min(MAX_DIM)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Same origin and dimension, new spacing.
    pub fn respaced(&self, spacing: f64) -> Result<Self, GridError> {
        Self::new(self.dim, spacing, self.origin())
    }

    pub fn center(&self, cell: &Cell) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        for k in 0..self.dim {
            c[k] = self.origin[k] + self.spacing * (cell[k] as f64 + 0.5);
        }
        c
    }

    /// Cell whose half-open box contains the point.
    pub fn locate(&self, point: &[f64]) -> Cell {
        let mut cell = [0; MAX_DIM];
        for k in 0..self.dim {
            cell[k] = ((point[k] - self.origin[k]) / self.spacing).floor() as i64;
        }
        cell
    }

    fn check_cell(&self, cell: &Cell) -> Result<(), GridError> {
        if cell[self.dim..].iter().any(|&c| c != 0) {
            return Err(GridError::BadCell(*cell));
        }
        Ok(())
    }
}

/// Finite set of occupied cells on a [`Grid`].
#[derive(Clone, Serialize, Deserialize)]
#[serde(into = "ShapeRepr", try_from = "ShapeRepr")]
pub struct GridShape {
    grid: Grid,
    cells: Vec<Cell>,
    index: HashSet<Cell>,
}

#[derive(Serialize, Deserialize)]
struct ShapeRepr {
    grid: Grid,
    cells: Vec<Cell>,
}

impl From<GridShape> for ShapeRepr {
    fn from(s: GridShape) -> Self {
        ShapeRepr {
            grid: s.grid,
            cells: s.cells,
        }
    }
}

impl TryFrom<ShapeRepr> for GridShape {
    type Error = GridError;
    fn try_from(r: ShapeRepr) -> Result<Self, GridError> {
        GridShape::new(r.grid, r.cells)
    }
}

impl PartialEq for GridShape {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.cells == other.cells
    }
}

impl fmt::Debug for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridShape")
            .field("grid", &self.grid)
            .field("cells", &self.cells.len())
            .finish()
    }
}

impl GridShape {
    /// Builds a shape from any collection of cells; duplicates collapse.
    pub fn new(grid: Grid, cells: impl IntoIterator<Item = Cell>) -> Result<Self, GridError> {
        let mut cells: Vec<Cell> = cells.into_iter().collect();
        for c in &cells {
            grid.check_cell(c)?;
        }
        cells.sort_unstable();
        cells.dedup();
        Ok(Self::from_sorted(grid, cells))
    }

    pub fn empty(grid: Grid) -> Self {
        Self::from_sorted(grid, Vec::new())
    }

    pub(crate) fn from_sorted(grid: Grid, cells: Vec<Cell>) -> Self {
        let index = cells.iter().copied().collect();
        Self { grid, cells, index }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// Cells in lexicographic order.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: &Cell) -> bool {
        self.index.contains(cell)
    }

    pub fn volume(&self) -> f64 {
        self.cells.len() as f64 * self.grid.cell_volume()
    }

    fn same_grid(&self, other: &Self) -> Result<(), GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        Ok(())
    }

    pub fn symdiff(&self, other: &Self) -> Result<Self, GridError> {
        self.same_grid(other)?;
        let cells = self
            .cells
            .iter()
            .filter(|c| !other.contains(c))
            .chain(other.cells.iter().filter(|c| !self.contains(c)))
            .copied();
        Self::new(self.grid.clone(), cells)
    }

    pub fn union(&self, other: &Self) -> Result<Self, GridError> {
        self.same_grid(other)?;
        Self::new(
            self.grid.clone(),
            self.cells.iter().chain(other.cells.iter()).copied(),
        )
    }

    pub fn intersection(&self, other: &Self) -> Result<Self, GridError> {
        self.same_grid(other)?;
        let cells = self.cells.iter().filter(|c| other.contains(c)).copied().collect();
        Ok(Self::from_sorted(self.grid.clone(), cells))
    }

    pub fn difference(&self, other: &Self) -> Result<Self, GridError> {
        self.same_grid(other)?;
        let cells = self.cells.iter().filter(|c| !other.contains(c)).copied().collect();
        Ok(Self::from_sorted(self.grid.clone(), cells))
    }

    pub fn is_disjoint(&self, other: &Self) -> Result<bool, GridError> {
        self.same_grid(other)?;
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        Ok(small.cells.iter().all(|c| !large.contains(c)))
    }

    pub fn is_subset(&self, other: &Self) -> Result<bool, GridError> {
        self.same_grid(other)?;
        Ok(self.cells.iter().all(|c| other.contains(c)))
    }

    pub fn translate(&self, shift: &Cell) -> Self {
        let mut s = [0; MAX_DIM];
        s[..self.dim()].copy_from_slice(&shift[..self.dim()]);
        // lexicographic order is preserved by a uniform shift
        let cells = self
            .cells
            .iter()
            .map(|c| [c[0] + s[0], c[1] + s[1], c[2] + s[2]])
            .collect();
        Self::from_sorted(self.grid.clone(), cells)
    }

    /// Splits every cell into `factor^dim` subcells on the grid of spacing `h/factor`.
    pub fn refine(&self, factor: i64) -> Result<Self, GridError> {
        if factor < 1 {
            return Err(GridError::BadFactor);
        }
        let dim = self.dim();
        let grid = self.grid.respaced(self.grid.spacing / factor as f64)?;
        let mut cells = Vec::with_capacity(self.len() * (factor as usize).pow(dim as u32));
        let span = |k: usize| if k < dim { factor } else { 1 };
        for c in &self.cells {
            for a in 0..span(0) {
                for b in 0..span(1) {
                    for d in 0..span(2) {
                        let mut sub = [c[0] * factor + a, c[1] * factor + b, c[2] * factor + d];
                        sub[dim..].iter_mut().for_each(|x| *x = 0);
                        cells.push(sub);
                    }
                }
            }
        }
        Self::new(grid, cells)
    }

    /// Inverse of [`refine`](Self::refine) for shapes that are unions of coarse cells.
    pub fn coarsen(&self, factor: i64) -> Result<Self, GridError> {
        if factor < 1 {
            return Err(GridError::BadFactor);
        }
        let dim = self.dim();
        let grid = self.grid.respaced(self.grid.spacing * factor as f64)?;
        let coarse: Vec<Cell> = self
            .cells
            .iter()
            .map(|c| {
                let mut k = [0; MAX_DIM];
                for i in 0..dim {
                    k[i] = c[i].div_euclid(factor);
                }
                k
            })
            .collect();
        let out = Self::new(grid, coarse)?;
        if out.len() * (factor as usize).pow(dim as u32) != self.len() {
            return Err(GridError::NotAligned(factor));
        }
        Ok(out)
    }

    /// Same cell set reinterpreted on a grid with spacing `r·h`; the geometric set is dilated by `r`
    /// about the grid origin.
    pub fn rescaled(&self, r: f64) -> Result<Self, GridError> {
        let grid = self.grid.respaced(self.grid.spacing * r)?;
        Ok(Self::from_sorted(grid, self.cells.clone()))
    }

    /// Same cells, different grid (dimension must match).
    pub fn with_grid(&self, grid: Grid) -> Result<Self, GridError> {
        if grid.dim != self.dim() {
            return Err(GridError::GridMismatch);
        }
        Ok(Self::from_sorted(grid, self.cells.clone()))
    }

    /// Smallest box containing the shape.
    pub fn bounding_box(&self) -> Result<Region, GridError> {
        let first = self.cells.first().ok_or(GridError::EmptyShape)?;
        let mut lo = *first;
        let mut hi = *first;
        for c in &self.cells {
            for k in 0..self.dim() {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        for k in 0..self.dim() {
            hi[k] += 1;
        }
        Ok(Region::new(self.grid.clone(), lo, hi))
    }

    pub fn bounding_window(&self, pad_cells: i64) -> Result<Region, GridError> {
        Ok(self.bounding_box()?.dilate(pad_cells.max(0)))
    }

    /// Axis neighbors of a cell (2·dim of them).
    pub fn neighbors(&self, cell: &Cell) -> impl Iterator<Item = Cell> + '_ {
        neighbors(self.dim(), *cell)
    }

    /// Cells of the shape with at least one face on the exterior.
    pub fn boundary_cells(&self) -> Vec<Cell> {
        self.cells
            .iter()
            .filter(|c| self.neighbors(c).any(|n| !self.contains(&n)))
            .copied()
            .collect()
    }

    /// Exterior cells sharing a face with the shape, sorted.
    pub fn exterior_boundary(&self) -> Vec<Cell> {
        let mut out: Vec<Cell> = self
            .cells
            .iter()
            .flat_map(|c| neighbors(self.dim(), *c))
            .filter(|n| !self.contains(n))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Cell centers as flat coordinate rows.
    pub fn centers(&self) -> Vec<[f64; MAX_DIM]> {
        self.cells.iter().map(|c| self.grid.center(c)).collect()
    }
}

pub(crate) fn neighbors(dim: usize, cell: Cell) -> impl Iterator<Item = Cell> {
    (0..2 * dim).map(move |i| {
        let mut n = cell;
        n[i / 2] += if i % 2 == 0 { -1 } else { 1 };
        n
    })
}

/// Half-open axis-aligned box of cells `lo <= k < hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub grid: Grid,
    pub lo: Cell,
    pub hi: Cell,
}

impl Region {
    pub fn new(grid: Grid, lo: Cell, hi: Cell) -> Self {
        let dim = grid.dim();
        let mut lo = lo;
        let mut hi = hi;
        for k in 0..MAX_DIM {
            if k >= dim {
                lo[k] = 0;
                hi[k] = 1;
            } else if hi[k] < lo[k] {
                hi[k] = lo[k];
            }
        }
        Self { grid, lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn contains(&self, cell: &Cell) -> bool {
        (0..MAX_DIM).all(|k| self.lo[k] <= cell[k] && cell[k] < self.hi[k])
    }

    pub fn contains_region(&self, other: &Region) -> bool {
        (0..self.dim()).all(|k| self.lo[k] <= other.lo[k] && other.hi[k] <= self.hi[k])
    }

    pub fn extent(&self) -> [i64; MAX_DIM] {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    pub fn len(&self) -> usize {
        self.extent().iter().map(|&e| e.max(0) as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dilate(&self, pad: i64) -> Region {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for k in 0..self.dim() {
            lo[k] -= pad;
            hi[k] += pad;
        }
        Region::new(self.grid.clone(), lo, hi)
    }

    /// True for cells in the outermost one-cell shell of the box.
    pub fn on_rim(&self, cell: &Cell) -> bool {
        self.contains(cell)
            && (0..self.dim()).any(|k| cell[k] == self.lo[k] || cell[k] == self.hi[k] - 1)
    }

    /// Number of cells between `cell` and the nearest cell outside the box, along any axis.
    pub fn depth(&self, cell: &Cell) -> i64 {
        (0..self.dim())
            .map(|k| (cell[k] - self.lo[k] + 1).min(self.hi[k] - cell[k]))
            .min()
            .unwrap_or(0)
    }

    pub fn linear_index(&self, cell: &Cell) -> Option<usize> {
        if !self.contains(cell) {
            return None;
        }
        let e = self.extent();
        let i = (cell[0] - self.lo[0]) as usize;
        let j = (cell[1] - self.lo[1]) as usize;
        let l = (cell[2] - self.lo[2]) as usize;
        Some((l * e[1] as usize + j) * e[0] as usize + i)
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let e = self.extent();
        let (e0, e1) = (e[0] as usize, e[1] as usize);
        [
            self.lo[0] + (index % e0) as i64,
            self.lo[1] + ((index / e0) % e1) as i64,
            self.lo[2] + (index / (e0 * e1)) as i64,
        ]
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(|i| self.cell_at(i))
    }

    /// Cells of the window as a shape.
    pub fn to_shape(&self) -> GridShape {
        let mut cells: Vec<Cell> = self.cells().collect();
        cells.sort_unstable();
        GridShape::from_sorted(self.grid.clone(), cells)
    }
}
