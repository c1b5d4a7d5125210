//! Scan orders over an `H x W` patch grid.
//!
//! A [`ScanPath`] serializes the grid into a sequence: `order[t]` is the
//! row-major cell index visited at step `t`, `inverse` undoes it, and
//! `directions[t]` records the move that reached step `t`.
//!
//! The structure-aware set ([`ScanStrategy::Sass`]) combines two snake
//! traversals along rows/columns with two snake traversals along
//! anti-diagonals, so consecutive tokens are always grid neighbours.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{invert_permutation, validate_permutation, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanStrategy {
    /// Raster scans: row-major, column-major and their reverses.
    Parallel,
    /// Anti-diagonals, each traversed top to bottom.
    Diagonal,
    /// Boustrophedon scans along columns and rows.
    ParallelSnake,
    /// Boustrophedon scans along anti-diagonals.
    DiagonalSnake,
    /// Row-major forward and backward, then column-major forward and backward.
    Bidirectional,
    /// Two parallel snakes plus two diagonal snakes.
    Sass,
}

impl ScanStrategy {
    pub const ALL: [ScanStrategy; 6] = [
        ScanStrategy::Parallel,
        ScanStrategy::Diagonal,
        ScanStrategy::ParallelSnake,
        ScanStrategy::DiagonalSnake,
        ScanStrategy::Bidirectional,
        ScanStrategy::Sass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanStrategy::Parallel => "parallel",
            ScanStrategy::Diagonal => "diagonal",
            ScanStrategy::ParallelSnake => "parallel-snake",
            ScanStrategy::DiagonalSnake => "diagonal-snake",
            ScanStrategy::Bidirectional => "bidirectional",
            ScanStrategy::Sass => "sass",
        }
    }

    /// Whether every path keeps consecutive cells adjacent.
    pub fn is_snake(self) -> bool {
        matches!(
            self,
            ScanStrategy::ParallelSnake | ScanStrategy::DiagonalSnake | ScanStrategy::Sass
        )
    }
}

impl fmt::Display for ScanStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match norm.as_str() {
            "parallel" | "raster" => ScanStrategy::Parallel,
            "diagonal" | "diag" => ScanStrategy::Diagonal,
            "parallel-snake" | "parasna" | "snake" => ScanStrategy::ParallelSnake,
            "diagonal-snake" | "diag-snake" | "diagsna" => ScanStrategy::DiagonalSnake,
            "bidirectional" | "bidir" => ScanStrategy::Bidirectional,
            "sass" => ScanStrategy::Sass,
            _ => {
                return Err(Error::Config(format!(
                    "unknown scan strategy '{s}' (expected one of: parallel, diagonal, parallel-snake, diagonal-snake, bidirectional, sass)"
                )))
            }
        })
    }
}

/// Move that reached a step of a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Start,
    Up,
    Down,
    Left,
    Right,
    /// Any move that changes both row and column.
    DiagStep,
}

impl Direction {
    /// Code for the displacement `(di, dj)` between consecutive cells.
    pub fn from_displacement(di: isize, dj: isize) -> Direction {
        match (di.signum(), dj.signum()) {
            (0, 1) => Direction::Right,
            (0, -1) => Direction::Left,
            (1, 0) => Direction::Down,
            (-1, 0) => Direction::Up,
            (0, 0) => Direction::Start,
            _ => Direction::DiagStep,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Direction::Start => 0,
            Direction::Up => 1,
            Direction::Down => 2,
            Direction::Left => 3,
            Direction::Right => 4,
            Direction::DiagStep => 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanPath {
    height: usize,
    width: usize,
    order: Arc<Vec<usize>>,
    inverse: Arc<Vec<usize>>,
    directions: Vec<Direction>,
}

impl ScanPath {
    /// Build a path from a visiting order, deriving inverse and directions.
    pub fn from_order(height: usize, width: usize, order: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config(format!("scan grid must be non-empty, got {height}x{width}")));
        }
        validate_permutation(&order, height * width)?;
        let inverse = invert_permutation(&order);
        let mut directions = Vec::with_capacity(order.len());
        directions.push(Direction::Start);
        for pair in order.windows(2) {
            let (i0, j0) = ((pair[0] / width) as isize, (pair[0] % width) as isize);
            let (i1, j1) = ((pair[1] / width) as isize, (pair[1] % width) as isize);
            directions.push(Direction::from_displacement(i1 - i0, j1 - j0));
        }
        Ok(ScanPath {
            height,
            width,
            order: Arc::new(order),
            inverse: Arc::new(inverse),
            directions,
        })
    }

    /// Row-major order.
    pub fn identity(height: usize, width: usize) -> Result<Self> {
        Self::from_order(height, width, (0..height * width).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    /// Grid coordinates `(row, col)` visited at step `t`.
    pub fn cell(&self, t: usize) -> (usize, usize) {
        (self.order[t] / self.width, self.order[t] % self.width)
    }

    pub fn reversed(&self) -> ScanPath {
        let order = self.order.iter().rev().copied().collect();
        Self::from_order(self.height, self.width, order).expect("reversal of a valid path")
    }

    /// Mirror across the vertical axis: column `j` becomes `W - 1 - j`.
    pub fn mirrored(&self) -> ScanPath {
        let w = self.width;
        let order = self.order.iter().map(|&idx| (idx / w) * w + (w - 1 - idx % w)).collect();
        Self::from_order(self.height, self.width, order).expect("mirror of a valid path")
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::Path(format!(
                "sequence of length {len} does not match a {}x{} scan grid ({} cells)",
                self.height,
                self.width,
                self.len()
            )));
        }
        Ok(())
    }

    /// Reorder the rows of `[L, D]` into scan order.
    pub fn apply(&self, seq: &Tensor) -> Result<Tensor> {
        self.reorder(seq, &self.order)
    }

    /// Undo [`ScanPath::apply`].
    pub fn unapply(&self, seq: &Tensor) -> Result<Tensor> {
        self.reorder(seq, &self.inverse)
    }

    fn reorder(&self, seq: &Tensor, perm: &[usize]) -> Result<Tensor> {
        if seq.rank() == 0 {
            return Err(Error::Rank { op: "scan apply", expected: 2, actual: 0 });
        }
        self.check_len(seq.shape()[0])?;
        let row: usize = seq.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(seq.numel());
        for &p in perm {
            data.extend_from_slice(&seq.data()[p * row..(p + 1) * row]);
        }
        Tensor::new(seq.shape().to_vec(), data)
    }

    /// Graph version of [`ScanPath::apply`] along `axis` (the token axis).
    pub fn apply_var(&self, g: &mut Graph, seq: Var, axis: usize) -> Result<Var> {
        self.check_len(g.shape(seq).get(axis).copied().unwrap_or(0))?;
        g.permute_axis(seq, axis, Arc::clone(&self.order))
    }

    /// Graph version of [`ScanPath::unapply`] along `axis`.
    pub fn unapply_var(&self, g: &mut Graph, seq: Var, axis: usize) -> Result<Var> {
        self.check_len(g.shape(seq).get(axis).copied().unwrap_or(0))?;
        g.permute_axis(seq, axis, Arc::clone(&self.inverse))
    }
}

fn idx(i: usize, j: usize, w: usize) -> usize {
    i * w + j
}

fn row_major(h: usize, w: usize) -> Vec<usize> {
    (0..h * w).collect()
}

fn column_major(h: usize, w: usize) -> Vec<usize> {
    (0..w).flat_map(|j| (0..h).map(move |i| idx(i, j, w))).collect()
}

/// Column 0 top to bottom, column 1 bottom to top, alternating.
fn vertical_snake(h: usize, w: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(h * w);
    for j in 0..w {
        if j % 2 == 0 {
            out.extend((0..h).map(|i| idx(i, j, w)));
        } else {
            out.extend((0..h).rev().map(|i| idx(i, j, w)));
        }
    }
    out
}

/// Bottom row first, moving upward, alternating direction per row. Starts
/// at `(H-1, W-1)` when `H` is odd and `(H-1, 0)` otherwise, so the path
/// always ends at `(0, 0)`.
fn horizontal_snake_from_bottom(h: usize, w: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(h * w);
    let mut leftward = h % 2 == 1;
    for i in (0..h).rev() {
        if leftward {
            out.extend((0..w).rev().map(|j| idx(i, j, w)));
        } else {
            out.extend((0..w).map(|j| idx(i, j, w)));
        }
        leftward = !leftward;
    }
    out
}

/// Rows `i` on anti-diagonal `d`, in increasing order.
fn diagonal_rows(d: usize, h: usize, w: usize) -> std::ops::RangeInclusive<usize> {
    d.saturating_sub(w - 1)..=d.min(h - 1)
}

/// Anti-diagonals `i + j = d` from the top-left corner. Even diagonals are
/// walked bottom-left to top-right and odd ones top-right to bottom-left.
fn diagonal_snake(h: usize, w: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(h * w);
    for d in 0..h + w - 1 {
        let rows = diagonal_rows(d, h, w);
        if d % 2 == 0 {
            out.extend(rows.rev().map(|i| idx(i, d - i, w)));
        } else {
            out.extend(rows.map(|i| idx(i, d - i, w)));
        }
    }
    out
}

/// Anti-diagonals from the top-left corner, each walked top to bottom.
fn diagonal_plain(h: usize, w: usize) -> Vec<usize> {
    (0..h + w - 1)
        .flat_map(|d| diagonal_rows(d, h, w).map(move |i| idx(i, d - i, w)))
        .collect()
}

/// The paths of one strategy over one grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanPathSet {
    strategy: ScanStrategy,
    height: usize,
    width: usize,
    paths: Vec<ScanPath>,
}

impl ScanPathSet {
    /// Generate `num_paths` (2 or 4) paths for `strategy` over an
    /// `height x width` grid. With two paths the structure-aware set keeps
    /// its first parallel snake and first diagonal snake; every other
    /// strategy keeps its first two paths.
    pub fn generate(strategy: ScanStrategy, height: usize, width: usize, num_paths: usize) -> Result<Self> {
        if num_paths != 2 && num_paths != 4 {
            return Err(Error::Config(format!("number of scan paths must be 2 or 4, got {num_paths}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::Config(format!("scan grid must be non-empty, got {height}x{width}")));
        }
        let (h, w) = (height, width);
        let p = |order: Vec<usize>| ScanPath::from_order(h, w, order);
        let mut paths = match strategy {
            ScanStrategy::Parallel => {
                let rows = p(row_major(h, w))?;
                let cols = p(column_major(h, w))?;
                vec![rows.clone(), cols.clone(), rows.reversed(), cols.reversed()]
            }
            ScanStrategy::Diagonal => {
                let d = p(diagonal_plain(h, w))?;
                let m = d.mirrored();
                vec![d.clone(), m.clone(), d.reversed(), m.reversed()]
            }
            ScanStrategy::ParallelSnake => {
                let v = p(vertical_snake(h, w))?;
                let hz = p(horizontal_snake_from_bottom(h, w))?;
                vec![v.clone(), hz.clone(), v.reversed(), hz.reversed()]
            }
            ScanStrategy::DiagonalSnake => {
                let d = p(diagonal_snake(h, w))?;
                let m = d.mirrored();
                vec![d.clone(), m.clone(), d.reversed(), m.reversed()]
            }
            ScanStrategy::Bidirectional => {
                let rows = p(row_major(h, w))?;
                let cols = p(column_major(h, w))?;
                vec![rows.clone(), rows.reversed(), cols.clone(), cols.reversed()]
            }
            ScanStrategy::Sass => {
                let d = p(diagonal_snake(h, w))?;
                vec![
                    p(vertical_snake(h, w))?,
                    p(horizontal_snake_from_bottom(h, w))?,
                    d.mirrored(),
                    d,
                ]
            }
        };
        if strategy == ScanStrategy::Sass {
            // o1, o2, o3, o4
            paths.swap(2, 3);
            if num_paths == 2 {
                paths = vec![paths[0].clone(), paths[2].clone()];
            }
        } else {
            paths.truncate(num_paths);
        }
        Ok(ScanPathSet { strategy, height, width, paths })
    }

    /// A set holding caller-supplied paths over one grid.
    pub fn from_paths(strategy: ScanStrategy, paths: Vec<ScanPath>) -> Result<Self> {
        let first = paths.first().ok_or_else(|| Error::Config("empty path set".into()))?;
        let (height, width) = (first.height, first.width);
        if paths.iter().any(|p| p.height != height || p.width != width) {
            return Err(Error::Config("all paths in a set must share one grid".into()));
        }
        Ok(ScanPathSet { strategy, height, width, paths })
    }

    pub fn strategy(&self) -> ScanStrategy {
        self.strategy
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of grid cells (sequence length).
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn paths(&self) -> &[ScanPath] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn to_json(&self) -> ScanDump {
        ScanDump {
            strategy: self.strategy,
            height: self.height,
            width: self.width,
            paths: self
                .paths
                .iter()
                .map(|p| PathDump {
                    order: p.order.to_vec(),
                    inverse: p.inverse.to_vec(),
                    directions: p.directions.clone(),
                })
                .collect(),
        }
    }
}

/// JSON layout written by the `scan` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanDump {
    pub strategy: ScanStrategy,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub paths: Vec<PathDump>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDump {
    pub order: Vec<usize>,
    pub inverse: Vec<usize>,
    pub directions: Vec<Direction>,
}
