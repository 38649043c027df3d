//! GS1 text format for grid shapes.
//!
//! ```text
//! GS1 <dim> <spacing> <origin_1> .. <origin_dim>
//! <i_1> .. <i_dim>
//! ...
//! ```
//!
//! Cells are emitted in lexicographic order, one per line. On input, blank
//! lines and lines starting with `#` are skipped and cells may come in any
//! order, but duplicates are rejected. Floats are written in Rust's shortest
//! round-trip form, so `parse(write(s)) == s`.

use std::collections::HashSet;

use shapes_core::grid::{Cell, Grid, GridShape, MAX_DIM};
use thiserror::Error;

pub const MAGIC: &str = "GS1";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct Gs1Error {
    /// 1-based line number, 0 when the input has no header line at all.
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> Gs1Error {
    Gs1Error {
        line,
        message: message.into(),
    }
}

pub fn parse(text: &str) -> Result<GridShape, Gs1Error> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| err(0, "missing GS1 header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields[0] != MAGIC {
        return Err(err(hline, format!("expected header starting with {MAGIC}, found {:?}", fields[0])));
    }
    let dim: usize = fields
        .get(1)
        .ok_or_else(|| err(hline, "header is missing the dimension"))?
        .parse()
        .map_err(|_| err(hline, format!("bad dimension {:?}", fields[1])))?;
    if dim == 0 || dim > MAX_DIM {
        return Err(err(hline, format!("dimension must be 1..={MAX_DIM}, got {dim}")));
    }
    let spacing: f64 = fields
        .get(2)
        .ok_or_else(|| err(hline, "header is missing the spacing"))?
        .parse()
        .map_err(|_| err(hline, format!("bad spacing {:?}", fields[2])))?;
    if fields.len() != 3 + dim {
        return Err(err(
            hline,
            format!("header needs {dim} origin coordinates, found {}", fields.len().saturating_sub(3)),
        ));
    }
    let origin = fields[3..]
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| err(hline, format!("bad origin coordinate {f:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let grid = Grid::new(dim, spacing, &origin).map_err(|e| err(hline, e.to_string()))?;

    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    for (no, line) in lines {
        let idx: Vec<&str> = line.split_whitespace().collect();
        if idx.len() != dim {
            return Err(err(no, format!("expected {dim} cell indices, found {}", idx.len())));
        }
        let mut c: Cell = [0; MAX_DIM];
        for (k, f) in idx.iter().enumerate() {
            c[k] = f.parse().map_err(|_| err(no, format!("bad cell index {f:?}")))?;
        }
        if !seen.insert(c) {
            return Err(err(no, format!("duplicate cell {}", fmt_cell(&c, dim))));
        }
        cells.push(c);
    }
    GridShape::new(grid, cells).map_err(|e| err(hline, e.to_string()))
}

fn fmt_cell(c: &Cell, dim: usize) -> String {
    c[..dim].iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write(shape: &GridShape) -> String {
    let g = shape.grid();
    let mut out = format!("{MAGIC} {} {:?}", g.dim(), g.spacing());
    for o in g.origin() {
        out.push_str(&format!(" {o:?}"));
    }
    out.push('\n');
    // cells() is already sorted
    for c in shape.cells() {
        out.push_str(&fmt_cell(c, g.dim()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> GridShape {
        let g = Grid::new(2, 0.25, &[0.0, -1.5]).unwrap();
        GridShape::new(g, [[1, 0, 0], [0, 0, 0], [0, 1, 0], [1, 1, 0]]).unwrap()
    }

    #[test]
    fn golden_square() {
        let text = write(&square());
        assert_eq!(text, "GS1 2 0.25 0.0 -1.5\n0 0\n0 1\n1 0\n1 1\n");
    }

    #[test]
    fn round_trip() {
        let s = square();
        assert_eq!(parse(&write(&s)).unwrap(), s);
        let g = Grid::new(1, 1.0 / 3.0, &[0.1]).unwrap();
        let t = GridShape::new(g, [[-7, 0, 0], [5, 0, 0]]).unwrap();
        assert_eq!(parse(&write(&t)).unwrap(), t);
    }

    #[test]
    fn empty_shape_has_header_only() {
        let g = Grid::with_dim(3, 0.5).unwrap();
        let text = write(&GridShape::empty(g.clone()));
        assert_eq!(text, "GS1 3 0.5 0.0 0.0 0.0\n");
        assert!(parse(&text).unwrap().is_empty());
    }

    #[test]
    fn comments_and_unsorted_input() {
        let s = parse("# a comment\n\nGS1 2 0.25 0 -1.5\n1 1\n0 0\n# inner\n1 0\n0 1\n").unwrap();
        assert_eq!(s, square());
    }

    #[test]
    fn errors_name_the_line() {
        let cases = [
            ("", 0),
            ("GS2 1 1 0\n", 1),
            ("GS1 4 1 0 0 0 0\n", 1),
            ("GS1 2 1 0\n", 1),
            ("GS1 2 -1 0 0\n", 1),
            ("GS1 2 1 0 0\n0 0\n0 x\n", 3),
            ("GS1 2 1 0 0\n0 0\n\n0 0 0\n", 4),
            ("GS1 2 1 0 0\n0 0\n1 1\n0 0\n", 4),
        ];
        for (text, line) in cases {
            let e = parse(text).unwrap_err();
            assert_eq!(e.line, line, "{text:?}: {e}");
            assert!(e.to_string().starts_with(&format!("line {line}:")));
        }
    }
}
