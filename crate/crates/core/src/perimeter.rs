//! Face-count perimeter of grid shapes.
//!
//! `P(E) = h^(dim-1) · #{faces with exactly one adjacent cell in E}`. This is the
//! anisotropic (ℓ¹) perimeter of the cell union, computed exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{neighbors, Cell, GridShape, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerimeterConvention {
    FaceCount,
    /// Reserved; no estimator is implemented for it.
    Smoothed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerimeterValue {
    pub value: f64,
    pub convention: PerimeterConvention,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerimeterError {
    #[error("swap move is invalid: {0}")]
    BadMove(&'static str),
}

fn face_area(s: &GridShape) -> f64 {
    s.grid().spacing().powi(s.dim() as i32 - 1)
}

/// Number of exposed faces.
pub fn face_count(s: &GridShape) -> usize {
    s.cells()
        .iter()
        .map(|c| s.neighbors(c).filter(|n| !s.contains(n)).count())
        .sum()
}

pub fn perimeter(s: &GridShape) -> PerimeterValue {
    PerimeterValue {
        value: face_count(s) as f64 * face_area(s),
        convention: PerimeterConvention::FaceCount,
    }
}

/// Perimeter counted only on boundary faces attributed to `a`.
///
/// Each exposed face is attributed to the occupied cell it bounds (its midpoint
/// nudged inward), so `a ⊇ bounding box` recovers the full perimeter and any
/// partition of space into disjoint boxes splits the faces exactly.
pub fn localized_perimeter(s: &GridShape, a: &Region) -> PerimeterValue {
    let count: usize = s
        .cells()
        .iter()
        .filter(|c| a.contains(c))
        .map(|c| s.neighbors(c).filter(|n| !s.contains(n)).count())
        .sum();
    PerimeterValue {
        value: count as f64 * face_area(s),
        convention: PerimeterConvention::FaceCount,
    }
}

/// Change in exposed-face count when `remove` leaves the shape and `add` joins it.
pub fn face_delta_swap(s: &GridShape, remove: &Cell, add: &Cell) -> Result<i64, PerimeterError> {
    face_delta_swap_with(s.dim(), |c| s.contains(c), remove, add)
}

/// Same as [`face_delta_swap`] over any membership oracle. Used by the optimizer's
/// working set.
pub fn face_delta_swap_with(
    dim: usize,
    contains: impl Fn(&Cell) -> bool,
    remove: &Cell,
    add: &Cell,
) -> Result<i64, PerimeterError> {
    if !contains(remove) {
        return Err(PerimeterError::BadMove("removed cell is not in the shape"));
    }
    if contains(add) {
        return Err(PerimeterError::BadMove("added cell is already in the shape"));
    }
    if remove == add {
        return Err(PerimeterError::BadMove("remove and add coincide"));
    }
    // membership after removal, before the addition
    let mid = |c: &Cell| c != remove && contains(c);
    // removing a cell with k occupied neighbors changes the count by 2k - 2·dim
    let occ_rm = neighbors(dim, *remove).filter(|n| contains(n)).count() as i64;
    let occ_add = neighbors(dim, *add).filter(|n| mid(n)).count() as i64;
    let d = 2 * dim as i64;
    Ok((2 * occ_rm - d) + (d - 2 * occ_add))
}

pub fn perimeter_delta_swap(s: &GridShape, remove: &Cell, add: &Cell) -> Result<f64, PerimeterError> {
    Ok(face_delta_swap(s, remove, add)? as f64 * face_area(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(dim: usize, h: f64, cells: &[Cell]) -> GridShape {
        GridShape::new(Grid::with_dim(dim, h).unwrap(), cells.iter().copied()).unwrap()
    }

    #[test]
    fn perimeter_examples() {
        assert_eq!(perimeter(&shape(2, 0.5, &[[0, 0, 0]])).value, 2.0);
        let sq = shape(2, 1.0, &[[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]);
        assert_eq!(perimeter(&sq).value, 8.0);
        let seg: Vec<Cell> = (0..10).map(|i| [i, 0, 0]).collect();
        assert_eq!(perimeter(&shape(1, 0.1, &seg)).value, 2.0);
        assert_eq!(perimeter(&shape(3, 1.0, &[[0, 0, 0]])).value, 6.0);
        assert_eq!(perimeter(&shape(2, 1.0, &[])).value, 0.0);
    }

    #[test]
    fn localized_examples() {
        let sq = shape(2, 1.0, &[[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]);
        let bb = sq.bounding_box().unwrap();
        assert_eq!(localized_perimeter(&sq, &bb), perimeter(&sq));
        let far = Region::new(sq.grid().clone(), [10, 10, 0], [12, 12, 1]);
        assert_eq!(localized_perimeter(&sq, &far).value, 0.0);
        // left and right halves of a window partition the faces
        let left = Region::new(sq.grid().clone(), [-5, -5, 0], [1, 5, 1]);
        let right = Region::new(sq.grid().clone(), [1, -5, 0], [7, 5, 1]);
        assert_eq!(localized_perimeter(&sq, &left).value, 4.0);
        let total = localized_perimeter(&sq, &left).value + localized_perimeter(&sq, &right).value;
        assert_eq!(total, perimeter(&sq).value);
    }

    #[test]
    fn swap_examples() {
        let one = shape(2, 1.0, &[[0, 0, 0]]);
        assert_eq!(perimeter_delta_swap(&one, &[0, 0, 0], &[1, 0, 0]).unwrap(), 0.0);
        let domino = shape(2, 1.0, &[[0, 0, 0], [1, 0, 0]]);
        assert_eq!(perimeter_delta_swap(&domino, &[1, 0, 0], &[5, 5, 0]).unwrap(), 2.0);
        assert!(matches!(
            perimeter_delta_swap(&domino, &[3, 0, 0], &[5, 5, 0]),
            Err(PerimeterError::BadMove(_))
        ));
        assert!(matches!(
            perimeter_delta_swap(&domino, &[0, 0, 0], &[1, 0, 0]),
            Err(PerimeterError::BadMove(_))
        ));
    }

    #[test]
    fn swap_delta_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in 1..=3 {
            let mut cur: Vec<Cell> = Vec::new();
            while cur.len() < 30 {
                let mut c = [0; crate::grid::MAX_DIM];
                let r = if dim == 1 { 40 } else { 4 };
                for k in 0..dim {
                    c[k] = rng.gen_range(-r..r);
                }
                if !cur.contains(&c) {
                    cur.push(c);
                }
            }
            let mut s = shape(dim, 0.5, &cur);
            for _ in 0..500 {
                let rm = s.cells()[rng.gen_range(0..s.len())];
                let cand = s.exterior_boundary();
                let add = cand[rng.gen_range(0..cand.len())];
                let delta = perimeter_delta_swap(&s, &rm, &add).unwrap();
                let next = GridShape::new(
                    s.grid().clone(),
                    s.cells().iter().copied().filter(|c| *c != rm).chain([add]),
                )
                .unwrap();
                let expect = perimeter(&next).value - perimeter(&s).value;
                assert_eq!(delta, expect);
                s = next;
            }
        }
    }

    /// Every 2D shape of N ≤ 9 cells (connected or not) has at least
    /// 2·ceil(2·sqrt(N)) exposed faces, and the m×m square attains 4m.
    #[test]
    fn discrete_isoperimetry_exhaustive() {
        let side = 3i64;
        let all: Vec<Cell> = (0..side).flat_map(|i| (0..side).map(move |j| [i, j, 0])).collect();
        for mask in 1u32..(1 << all.len()) {
            let cells: Vec<Cell> = (0..all.len())
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| all[b])
                .collect();
            let n = cells.len() as f64;
            let p = face_count(&shape(2, 1.0, &cells));
            let bound = 2 * (2.0 * n.sqrt()).ceil() as usize;
            assert!(p >= bound, "{cells:?} has {p} < {bound}");
        }
        for m in 1..=3i64 {
            let sq: Vec<Cell> = (0..m).flat_map(|i| (0..m).map(move |j| [i, j, 0])).collect();
            assert_eq!(face_count(&shape(2, 1.0, &sq)), 4 * m as usize);
        }
    }

    #[test]
    fn refine_and_rescale_invariance() {
        let cells = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [3, 2, 0]];
        let s = shape(2, 0.25, &cells);
        for f in 1..4 {
            assert_eq!(perimeter(&s.refine(f).unwrap()).value, perimeter(&s).value);
        }
        let r = 4.0;
        assert_eq!(
            perimeter(&s.rescaled(r).unwrap()).value,
            r * perimeter(&s).value
        );
        let s3 = shape(3, 0.5, &[[0, 0, 0], [0, 0, 1]]);
        assert_eq!(perimeter(&s3.refine(2).unwrap()).value, perimeter(&s3).value);
    }
}
