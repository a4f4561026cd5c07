//! Finite signed measures on a truncated half-line `[0, s_max]`, stored as
//! per-cell masses plus one lumped tail mass for `(s_max, ∞)`.
//!
//! Cells store **mass**, not density. That choice makes three things exact
//! that a density representation would only approximate: a Dirac datum
//! occupies a single cell, transport by one cell width is a pure
//! reindexing (no numerical diffusion), and both the total mass and the
//! total-variation norm are plain sums — computed here with Neumaier
//! compensation so they are exactly rounded.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack below zero a "nonnegative" measure may carry from
/// rounding before it is considered genuinely signed.
pub const NONNEG_SLACK: f64 = 1e-14;

/// Compensated (Neumaier) accumulator: the running error of `sum` is kept
/// in a second float, so `total()` is the exactly rounded sum for any
/// realistic number of terms.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = NeumaierSum::default();
    for v in values {
        acc.add(v);
    }
    acc.total()
}

/// Uniform partition of `[0, s_max]` into `n_cells` cells of width `ds`;
/// cell `i` covers `[i·ds, (i+1)·ds)` (left-closed). Only constructible
/// through [`Grid::new`], which pins `ds = s_max/n_cells`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    s_max: f64,
    n_cells: usize,
    ds: f64,
}

impl Grid {
    pub fn new(s_max: f64, n_cells: usize) -> Result<Grid> {
        if !s_max.is_finite() || s_max <= 0.0 {
            return Err(Error::Config(format!(
                "grid s_max must be a positive finite number, got {s_max}"
            )));
        }
        if n_cells < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 cells, got {n_cells}"
            )));
        }
        let ds = s_max / n_cells as f64;
        Ok(Grid { s_max, n_cells, ds })
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width; also the time step of every stepper built on this grid.
    pub fn ds(&self) -> f64 {
        self.ds
    }

    /// Midpoint of cell `i`, where rate models are evaluated.
    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.ds
    }

    /// Index of the cell containing `s` (left-closed convention;
    /// `s = s_max` maps to the last cell).
    pub fn cell_of(&self, s: f64) -> Result<usize> {
        if !(0.0..=self.s_max).contains(&s) {
            return Err(Error::Config(format!(
                "point s = {s} lies outside [0, {}]",
                self.s_max
            )));
        }
        Ok(((s / self.ds).floor() as usize).min(self.n_cells - 1))
    }

    /// Range of cell indices whose closed span `[i·ds, (i+1)·ds]` lies
    /// inside `[lo, hi]`, with a 1e-9·ds slack on each comparison so exact
    /// boundaries are not lost to rounding.
    pub fn cells_within(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let eps = 1e-9 * self.ds;
        let start = ((lo - eps) / self.ds).ceil().max(0.0) as usize;
        let end = (((hi + eps) / self.ds).floor() as usize).min(self.n_cells);
        start..end.max(start)
    }

    /// Number of steps covering the horizon `t` at step `ds` (rounded up,
    /// with slack so near-integer quotients do not gain a spurious step).
    pub fn steps_for(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        (t / self.ds - 1e-9).ceil().max(0.0) as usize
    }
}

/// Signed measure on a [`Grid`]: one mass per cell plus a lumped tail mass
/// representing everything past `s_max`.
///
/// Values are immutable from the caller's perspective; all public
/// operations are pure functions returning fresh measures, so values can be
/// freely shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: Grid,
    masses: Vec<f64>,
    tail: f64,
}

impl GridMeasure {
    /// The zero measure.
    pub fn zero(grid: Grid) -> GridMeasure {
        GridMeasure {
            grid,
            masses: vec![0.0; grid.n_cells],
            tail: 0.0,
        }
    }

    /// Ingest a density: cell `i` receives the midpoint-rule integral
    /// `f((i+½)·ds)·ds`; the tail starts empty. Rejects non-finite density
    /// values, naming the offending point.
    pub fn from_density(grid: Grid, f: impl Fn(f64) -> f64) -> Result<GridMeasure> {
        let mut masses = Vec::with_capacity(grid.n_cells);
        for i in 0..grid.n_cells {
            let s = grid.midpoint(i);
            let v = f(s);
            if !v.is_finite() {
                return Err(Error::Config(format!(
                    "density is not finite at s = {s} (value {v})"
                )));
            }
            masses.push(v * grid.ds);
        }
        Ok(GridMeasure {
            grid,
            masses,
            tail: 0.0,
        })
    }

    /// Unit point mass at `s0`, placed in the cell containing `s0`
    /// (left-closed; `s0 = s_max` goes to the last cell).
    pub fn dirac(grid: Grid, s0: f64) -> Result<GridMeasure> {
        let cell = grid.cell_of(s0)?;
        let mut m = GridMeasure::zero(grid);
        m.masses[cell] = 1.0;
        Ok(m)
    }

    /// Assemble from explicit parts, checking shape and finiteness.
    pub fn from_parts(grid: Grid, masses: Vec<f64>, tail: f64) -> Result<GridMeasure> {
        if masses.len() != grid.n_cells {
            return Err(Error::Config(format!(
                "mass vector has {} entries but the grid has {} cells",
                masses.len(),
                grid.n_cells
            )));
        }
        if !tail.is_finite() || masses.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(
                "measure entries must all be finite".to_string(),
            ));
        }
        Ok(GridMeasure { grid, masses, tail })
    }

    pub(crate) fn from_raw(grid: Grid, masses: Vec<f64>, tail: f64) -> GridMeasure {
        debug_assert_eq!(masses.len(), grid.n_cells);
        GridMeasure { grid, masses, tail }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Vec<f64>, &mut f64) {
        (&mut self.masses, &mut self.tail)
    }

    /// Total mass: `Σ masses + tail`, compensated.
    pub fn mass(&self) -> f64 {
        let mut acc = NeumaierSum::default();
        for &m in &self.masses {
            acc.add(m);
        }
        acc.add(self.tail);
        acc.total()
    }

    /// Total-variation norm: `Σ|masses| + |tail|`, compensated. Zero iff
    /// this is the zero measure.
    pub fn tv(&self) -> f64 {
        let mut acc = NeumaierSum::default();
        for &m in &self.masses {
            acc.add(m.abs());
        }
        acc.add(self.tail.abs());
        acc.total()
    }

    /// `tv(self − other)` without materializing the difference.
    pub fn tv_distance(&self, other: &GridMeasure) -> Result<f64> {
        self.check_same_grid(other)?;
        let mut acc = NeumaierSum::default();
        for (&a, &b) in self.masses.iter().zip(&other.masses) {
            acc.add((a - b).abs());
        }
        acc.add((self.tail - other.tail).abs());
        Ok(acc.total())
    }

    /// Transport by one cell width: mass moves one cell to the right, the
    /// first cell empties, and the last cell merges into the tail. Total
    /// mass is preserved exactly up to the single tail addition.
    pub fn shift_right(&self) -> GridMeasure {
        let n = self.masses.len();
        let mut masses = vec![0.0; n];
        masses[1..].copy_from_slice(&self.masses[..n - 1]);
        GridMeasure {
            grid: self.grid,
            masses,
            tail: self.tail + self.masses[n - 1],
        }
    }

    /// Linear combination `a·x + y` (cellwise, including tails). The two
    /// measures must share a grid.
    pub fn axpy(a: f64, x: &GridMeasure, y: &GridMeasure) -> Result<GridMeasure> {
        x.check_same_grid(y)?;
        let masses = x
            .masses
            .iter()
            .zip(&y.masses)
            .map(|(&xm, &ym)| a * xm + ym)
            .collect();
        Ok(GridMeasure {
            grid: x.grid,
            masses,
            tail: a * x.tail + y.tail,
        })
    }

    /// `a·self`.
    pub fn scaled(&self, a: f64) -> GridMeasure {
        GridMeasure {
            grid: self.grid,
            masses: self.masses.iter().map(|&m| a * m).collect(),
            tail: a * self.tail,
        }
    }

    /// True when every entry sits above `−NONNEG_SLACK·tv`: nonnegative up
    /// to rounding noise.
    pub fn is_nonnegative(&self) -> bool {
        let floor = -NONNEG_SLACK * self.tv();
        self.tail >= floor && self.masses.iter().all(|&m| m >= floor)
    }

    /// Clamp rounding-level negative entries to zero in place.
    pub fn clamp_nonnegative(&mut self) {
        for m in &mut self.masses {
            if *m < 0.0 {
                *m = 0.0;
            }
        }
        if self.tail < 0.0 {
            self.tail = 0.0;
        }
    }

    /// Rescale to total mass one. Fails on (numerically) massless input.
    pub fn normalized(&self) -> Result<GridMeasure> {
        let mass = self.mass();
        if !mass.is_finite() || mass.abs() < 1e-300 {
            return Err(Error::Numerical(
                "cannot normalize a measure with zero total mass".to_string(),
            ));
        }
        Ok(self.scaled(1.0 / mass))
    }

    /// Mass-conservative projection onto a coarser grid over the same
    /// `[0, s_max]`: each coarse cell takes the (compensated) sum of the
    /// fine cells it contains; tails map directly. The fine cell count must
    /// be a multiple of the coarse one.
    pub fn coarsen(&self, coarse: Grid) -> Result<GridMeasure> {
        if coarse.s_max != self.grid.s_max {
            return Err(Error::Config(format!(
                "coarse grid spans [0, {}] but this measure lives on [0, {}]",
                coarse.s_max, self.grid.s_max
            )));
        }
        if coarse.n_cells == 0 || self.grid.n_cells % coarse.n_cells != 0 {
            return Err(Error::Config(format!(
                "cannot coarsen {} cells onto {} cells (not a divisor)",
                self.grid.n_cells, coarse.n_cells
            )));
        }
        let factor = self.grid.n_cells / coarse.n_cells;
        let masses = (0..coarse.n_cells)
            .map(|i| neumaier_sum(self.masses[i * factor..(i + 1) * factor].iter().copied()))
            .collect();
        Ok(GridMeasure {
            grid: coarse,
            masses,
            tail: self.tail,
        })
    }

    fn check_same_grid(&self, other: &GridMeasure) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Config(format!(
                "grid mismatch: [0, {}] with {} cells vs [0, {}] with {} cells",
                self.grid.s_max, self.grid.n_cells, other.grid.s_max, other.grid.n_cells
            )));
        }
        Ok(())
    }

    /// Render as CSV: header `s_lo,s_hi,mass`, one row per cell, and a
    /// final `tail,,mass` row. Masses are written with 17 significant
    /// digits, so a round-trip through [`GridMeasure::from_csv_str`]
    /// reproduces them bit for bit.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(32 * (self.masses.len() + 2));
        out.push_str("s_lo,s_hi,mass\n");
        let n = self.masses.len();
        for (i, &m) in self.masses.iter().enumerate() {
            let s_lo = i as f64 * self.grid.ds;
            // The final edge is written as s_max itself so the grid
            // reconstructs exactly on load.
            let s_hi = if i + 1 == n {
                self.grid.s_max
            } else {
                (i + 1) as f64 * self.grid.ds
            };
            let _ = writeln!(out, "{s_lo:.16e},{s_hi:.16e},{m:.16e}");
        }
        let _ = writeln!(out, "tail,,{:.16e}", self.tail);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    /// Parse the CSV format produced by [`GridMeasure::to_csv_string`],
    /// reconstructing the grid from the row count and the last cell edge.
    pub fn from_csv_str(text: &str) -> Result<GridMeasure> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header.trim() != "s_lo,s_hi,mass" {
            return Err(Error::Config(format!(
                "snapshot header must be 's_lo,s_hi,mass', got '{header}'"
            )));
        }
        let mut masses = Vec::new();
        let mut tail = None;
        let mut s_max = f64::NAN;
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Config(format!(
                    "snapshot line {}: expected 3 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let mass: f64 = fields[2].trim().parse().map_err(|_| {
                Error::Config(format!(
                    "snapshot line {}: bad mass '{}'",
                    lineno + 2,
                    fields[2]
                ))
            })?;
            if fields[0].trim() == "tail" {
                if tail.is_some() {
                    return Err(Error::Config("snapshot has two tail rows".to_string()));
                }
                tail = Some(mass);
            } else {
                if tail.is_some() {
                    return Err(Error::Config(
                        "snapshot tail row must come last".to_string(),
                    ));
                }
                s_max = fields[1].trim().parse().map_err(|_| {
                    Error::Config(format!(
                        "snapshot line {}: bad cell edge '{}'",
                        lineno + 2,
                        fields[1]
                    ))
                })?;
                masses.push(mass);
            }
        }
        let tail =
            tail.ok_or_else(|| Error::Config("snapshot is missing the tail row".to_string()))?;
        let grid = Grid::new(s_max, masses.len())?;
        GridMeasure::from_parts(grid, masses, tail)
    }

    pub fn read_csv(path: &Path) -> Result<GridMeasure> {
        let text = std::fs::read_to_string(path)?;
        GridMeasure::from_csv_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
