//! Reinjection kernels: where a neuron's elapsed-time clock lands after it
//! fires.
//!
//! A kernel is a column-stochastic map — column `j` is a probability
//! vector over destination cells `0..=j` describing where mass fired from
//! cell `j` is re-deposited (firing can only move the clock backwards).
//! The renewal model is the special case "everything restarts at zero",
//! kept as a dedicated layout so its redistribution is bitwise identical
//! to the renewal stepper's boundary deposit.

use crate::error::{Error, Result};
use crate::measure::{neumaier_sum, Grid, NeumaierSum};

/// Sparse layouts for the built-in kernels; `Columns` is the general
/// (dense, lower-triangular) form.
#[derive(Debug, Clone)]
enum Layout {
    /// Every firing restarts the clock at zero: column `j` is a unit mass
    /// on cell 0.
    DeltaAtZero,
    /// Column `j` is uniform over cells `0..min(j+1, k_c)` — the discrete
    /// form of "uniform on `[0, c] ∩ [0, u]`" with `k_c` support cells.
    UniformPrefix { k_c: usize },
    /// Explicit columns: `columns[j]` has length `j + 1` and sums to one.
    Columns(Vec<Vec<f64>>),
}

/// A reinjection kernel on a fixed grid, carrying the two constants the
/// fatigue-model ergodicity bound consumes: the kernel puts density at
/// least `eps` on `[0, delta]` for every source past the refractory
/// horizon.
#[derive(Debug, Clone)]
pub struct KernelModel {
    grid: Grid,
    layout: Layout,
    /// Uniform density floor of every column on `[0, delta]`.
    pub eps: f64,
    /// Width of the interval near zero on which the floor holds.
    pub delta: f64,
}

impl KernelModel {
    /// Renewal kernel: all fired mass restarts at elapsed time zero. On
    /// the grid this is a unit mass in cell 0, i.e. a density `1/ds` on
    /// `[0, ds]`.
    pub fn delta_at_zero(grid: Grid) -> KernelModel {
        KernelModel {
            grid,
            layout: Layout::DeltaAtZero,
            eps: 1.0 / grid.ds(),
            delta: grid.ds(),
        }
    }

    /// Uniform reinjection over `[0, min(c, u)]` for a neuron fired at
    /// elapsed time `u`, discretized column-stochastically: column `j`
    /// spreads uniformly over its first `min(j+1, k_c)` cells, where
    /// `k_c = ⌊c/ds⌋` is the support width in cells.
    ///
    /// The certified floor is `eps = 1/c` on `[0, delta]` with
    /// `delta = c − ds`: the last support cell may be shortened by the
    /// floor in `k_c`, so one cell of slack is surrendered rather than
    /// overclaiming.
    pub fn truncated_uniform(grid: Grid, c: f64) -> Result<KernelModel> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Config(format!(
                "uniform kernel width must be positive, got {c}"
            )));
        }
        let k_c = (c / grid.ds() + 1e-9).floor() as usize;
        if k_c < 2 {
            return Err(Error::Config(format!(
                "uniform kernel width {c} covers fewer than 2 cells at ds = {}; refine the grid",
                grid.ds()
            )));
        }
        Ok(KernelModel {
            grid,
            layout: Layout::UniformPrefix { k_c },
            eps: 1.0 / c,
            delta: c - grid.ds(),
        })
    }

    /// Build from explicit columns (mainly for tests): `columns[j]` must
    /// have length `j + 1` and sum to one. The certified `(eps, delta)`
    /// floor is computed as the largest floor the columns actually
    /// support on their first cell.
    pub fn from_columns(grid: Grid, columns: Vec<Vec<f64>>) -> Result<KernelModel> {
        if columns.len() != grid.n_cells() {
            return Err(Error::Config(format!(
                "kernel has {} columns but the grid has {} cells",
                columns.len(),
                grid.n_cells()
            )));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != j + 1 {
                return Err(Error::Config(format!(
                    "kernel column {j} must have {} entries (destinations 0..={j}), got {}",
                    j + 1,
                    col.len()
                )));
            }
            if col.iter().any(|&w| !w.is_finite() || w < 0.0) {
                return Err(Error::Config(format!(
                    "kernel column {j} has a negative or non-finite weight"
                )));
            }
            let total = neumaier_sum(col.iter().copied());
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "kernel column {j} sums to {total}, not 1"
                )));
            }
        }
        // Floor on the first cell only: density = weight/ds there.
        let min_first = columns
            .iter()
            .map(|c| c[0])
            .fold(f64::INFINITY, f64::min);
        Ok(KernelModel {
            grid,
            layout: Layout::Columns(columns),
            eps: min_first / grid.ds(),
            delta: grid.ds(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Materialize column `j` as a dense probability vector over
    /// destinations `0..=j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        match &self.layout {
            Layout::DeltaAtZero => {
                let mut col = vec![0.0; j + 1];
                col[0] = 1.0;
                col
            }
            Layout::UniformPrefix { k_c } => {
                let k = (j + 1).min(*k_c);
                let mut col = vec![0.0; j + 1];
                let w = 1.0 / k as f64;
                for entry in col.iter_mut().take(k) {
                    *entry = w;
                }
                col
            }
            Layout::Columns(cols) => cols[j].clone(),
        }
    }

    /// Redistribute fired mass: `out[i] += Σ_j column_j[i]·fired[j]`, with
    /// the tail's firing treated as coming from the last cell.
    ///
    /// The built-in layouts use grouped compensated accumulation — for the
    /// uniform kernel all sources at or past the support width share one
    /// summed deposit — so the per-step rounding stays at a few ulps of
    /// the fired mass regardless of column count.
    pub(crate) fn redistribute(&self, fired: &[f64], fired_tail: f64, out: &mut [f64]) {
        match &self.layout {
            Layout::DeltaAtZero => {
                out[0] += total_fired(fired, fired_tail);
            }
            Layout::UniformPrefix { k_c } => {
                let k_c = *k_c;
                let n = fired.len();
                // Sources with full-width columns (j ≥ k_c − 1, plus the
                // tail) all spread over cells 0..k_c with weight 1/k_c:
                // sum them once, deposit the shared column once.
                let wide_lo = (k_c - 1).min(n);
                let mut wide = NeumaierSum::default();
                for &f in &fired[wide_lo..] {
                    wide.add(f);
                }
                wide.add(fired_tail);
                let shared = wide.total() / k_c as f64;
                let support = k_c.min(out.len());
                for cell in out.iter_mut().take(support) {
                    *cell += shared;
                }
                // Narrow columns (j < k_c − 1) are handled per source.
                for (j, &f) in fired.iter().enumerate().take(wide_lo) {
                    if f == 0.0 {
                        continue;
                    }
                    let w = f / (j + 1) as f64;
                    for cell in out.iter_mut().take(j + 1) {
                        *cell += w;
                    }
                }
            }
            Layout::Columns(cols) => {
                let n = fired.len();
                for (j, col) in cols.iter().enumerate() {
                    let f = fired[j] + if j + 1 == n { fired_tail } else { 0.0 };
                    if f == 0.0 {
                        continue;
                    }
                    for (i, &w) in col.iter().enumerate() {
                        out[i] += w * f;
                    }
                }
            }
        }
    }
}

/// Compensated total of the fired masses plus the tail's contribution.
/// Shared by the renewal boundary deposit and the delta kernel so the two
/// code paths agree bit for bit.
pub(crate) fn total_fired(fired: &[f64], fired_tail: f64) -> f64 {
    let mut acc = NeumaierSum::default();
    for &f in fired {
        acc.add(f);
    }
    acc.add(fired_tail);
    acc.total()
}

/// Outcome of a single kernel check.
#[derive(Debug, Clone)]
pub struct KernelCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Source column at which the worst violation occurred.
    pub witness: usize,
    pub detail: String,
}

/// Report from [`validate_kernel`].
#[derive(Debug, Clone)]
pub struct KernelReport {
    pub passed: bool,
    pub checks: Vec<KernelCheck>,
}

/// Audit a kernel against the structural requirements of the fatigue
/// model: every column is a probability vector, mass only moves backwards
/// (support in `0..=j`), the certified `(eps, delta)` floor holds for
/// every source at or past the refractory horizon `s_star`, and
/// `0 < delta < s_star`.
pub fn validate_kernel(kernel: &KernelModel, s_star: f64) -> Result<KernelReport> {
    let grid = kernel.grid;
    let mut checks = Vec::new();

    // Column stochasticity.
    let mut worst_sum = (0.0f64, 0usize);
    let mut worst_neg = (0.0f64, 0usize);
    for j in 0..grid.n_cells() {
        let col = kernel.column(j);
        let total = neumaier_sum(col.iter().copied());
        let dev = (total - 1.0).abs();
        if dev > worst_sum.0 {
            worst_sum = (dev, j);
        }
        let neg = col.iter().fold(0.0f64, |acc, &w| acc.max(-w));
        if neg > worst_neg.0 {
            worst_neg = (neg, j);
        }
    }
    checks.push(KernelCheck {
        name: "columns sum to one",
        passed: worst_sum.0 <= 1e-12,
        witness: worst_sum.1,
        detail: format!("worst |sum − 1| = {:.3e}", worst_sum.0),
    });
    checks.push(KernelCheck {
        name: "weights are nonnegative",
        passed: worst_neg.0 <= 0.0,
        witness: worst_neg.1,
        detail: format!("worst negative weight = {:.3e}", -worst_neg.0),
    });

    // A vacuous floor certifies nothing: the minorization constant this
    // kernel contributes is eps·delta, which must be positive.
    checks.push(KernelCheck {
        name: "declared floor is positive (eps > 0)",
        passed: kernel.eps > 0.0,
        witness: 0,
        detail: format!("eps = {:.6e}", kernel.eps),
    });

    // Density floor: for sources with elapsed time u ≥ s_star, every cell
    // inside [0, delta] must carry at least eps·ds mass.
    let required = kernel.eps * grid.ds() * (1.0 - 1e-12);
    let floor_cells = grid.cells_within(0.0, kernel.delta);
    let mut worst_floor = (f64::INFINITY, 0usize);
    let mut audited = 0usize;
    for j in 0..grid.n_cells() {
        let u = (j + 1) as f64 * grid.ds(); // worst-case elapsed time in cell j
        if u < s_star {
            continue;
        }
        audited += 1;
        let col = kernel.column(j);
        for i in floor_cells.clone() {
            let w = if i < col.len() { col[i] } else { 0.0 };
            if w < worst_floor.0 {
                worst_floor = (w, j);
            }
        }
    }
    checks.push(KernelCheck {
        name: "density floor eps on [0, delta] past s_star",
        passed: audited > 0 && worst_floor.0 >= required,
        witness: worst_floor.1,
        detail: format!(
            "worst cell mass = {:.6e} vs required {:.6e} over {} columns",
            worst_floor.0, required, audited
        ),
    });

    // Geometry: the floor interval must sit strictly inside the
    // refractory window.
    let geom_ok = kernel.delta > 0.0 && kernel.delta < s_star;
    checks.push(KernelCheck {
        name: "floor interval inside refractory window (0 < delta < s_star)",
        passed: geom_ok,
        witness: 0,
        detail: format!("delta = {}, s_star = {s_star}", kernel.delta),
    });

    let passed = checks.iter().all(|c| c.passed);
    Ok(KernelReport { passed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(s_max: f64, n: usize) -> Grid {
        Grid::new(s_max, n).unwrap()
    }

    #[test]
    fn delta_kernel_restarts_everything_at_zero() {
        let g = grid(10.0, 2000);
        let k = KernelModel::delta_at_zero(g);
        assert_eq!(k.eps, 1.0 / g.ds());
        assert_eq!(k.delta, g.ds());
        let fired = vec![0.25; 4];
        let mut out = vec![0.0; 4];
        k.redistribute(&fired, 0.5, &mut out);
        assert_eq!(out[0], 1.5);
        assert_eq!(&out[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_kernel_constants_match_its_width() {
        let g = grid(10.0, 2000);
        let k = KernelModel::truncated_uniform(g, 0.25).unwrap();
        assert_eq!(k.eps, 4.0);
        assert_eq!(k.delta, 0.245);
        // Support width: 0.25/0.005 = 50 cells.
        assert_eq!(k.column(100).iter().filter(|&&w| w > 0.0).count(), 50);
        assert_eq!(k.column(100)[0], 1.0 / 50.0);
        // A column shorter than the support is uniform over all its cells.
        assert_eq!(k.column(9), vec![0.1; 10]);
    }

    #[test]
    fn uniform_kernel_floor_check_is_exact_for_default_width() {
        // The certified per-cell floor eps·ds must not exceed the actual
        // column weight 1/k_c through rounding: for c = 0.25 on ds = 0.005,
        // fl(4·fl(0.005)) == fl(1/50) exactly.
        let g = grid(10.0, 2000);
        let k = KernelModel::truncated_uniform(g, 0.25).unwrap();
        assert_eq!(k.eps * g.ds(), 1.0 / 50.0);
    }

    #[test]
    fn uniform_kernel_rejects_unresolvable_width() {
        let g = grid(10.0, 100); // ds = 0.1
        assert!(KernelModel::truncated_uniform(g, 0.15).is_err());
        assert!(KernelModel::truncated_uniform(g, 0.0).is_err());
        assert!(KernelModel::truncated_uniform(g, 0.2).is_ok());
    }

    #[test]
    fn redistribute_conserves_mass() {
        let g = grid(10.0, 500);
        let k = KernelModel::truncated_uniform(g, 0.25).unwrap();
        let fired: Vec<f64> = (0..500).map(|j| ((j * 7919) % 101) as f64 / 101.0).collect();
        let fired_tail = 0.37;
        let mut out = vec![0.0; 500];
        k.redistribute(&fired, fired_tail, &mut out);
        let input = neumaier_sum(fired.iter().copied()) + fired_tail;
        let output = neumaier_sum(out.iter().copied());
        assert!(
            (input - output).abs() <= 1e-13 * input,
            "kernel lost {:.3e} of {input:.6}",
            input - output
        );
    }

    #[test]
    fn grouped_and_per_column_redistribution_agree() {
        let g = grid(2.0, 40);
        let uniform = KernelModel::truncated_uniform(g, 0.5).unwrap();
        let columns: Vec<Vec<f64>> = (0..40).map(|j| uniform.column(j)).collect();
        let dense = KernelModel::from_columns(g, columns).unwrap();

        let fired: Vec<f64> = (0..40).map(|j| (1.0 + j as f64).recip()).collect();
        let mut fast = vec![0.0; 40];
        let mut slow = vec![0.0; 40];
        uniform.redistribute(&fired, 0.123, &mut fast);
        dense.redistribute(&fired, 0.123, &mut slow);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-14, "grouped {a} vs dense {b}");
        }
    }

    #[test]
    fn validate_kernel_passes_the_builtin_families() {
        let g = grid(10.0, 2000);
        let uniform = KernelModel::truncated_uniform(g, 0.25).unwrap();
        let report = validate_kernel(&uniform, 1.0).unwrap();
        assert!(report.passed, "{:#?}", report.checks);

        // The delta kernel fails the geometry check for delta < s_star
        // only when ds ≥ s_star; on a fine grid it, too, is a valid
        // fatigue kernel (concentrated near zero).
        let delta = KernelModel::delta_at_zero(g);
        let report = validate_kernel(&delta, 1.0).unwrap();
        assert!(report.passed, "{:#?}", report.checks);
    }

    #[test]
    fn validate_kernel_catches_a_broken_floor() {
        let g = grid(1.0, 10);
        // Columns that put everything on the source cell: no mass near 0.
        let columns: Vec<Vec<f64>> = (0..10)
            .map(|j| {
                let mut col = vec![0.0; j + 1];
                col[j] = 1.0;
                col
            })
            .collect();
        let k = KernelModel::from_columns(g, columns).unwrap();
        assert_eq!(k.eps, 0.0);
        let report = validate_kernel(&k, 0.5).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn from_columns_rejects_malformed_input() {
        let g = grid(1.0, 3);
        // Wrong column length.
        assert!(KernelModel::from_columns(g, vec![vec![1.0], vec![1.0], vec![1.0]]).is_err());
        // Column that does not sum to one.
        assert!(KernelModel::from_columns(
            g,
            vec![vec![1.0], vec![0.5, 0.4], vec![0.3, 0.3, 0.4]]
        )
        .is_err());
        // Negative weight.
        assert!(KernelModel::from_columns(
            g,
            vec![vec![1.0], vec![1.5, -0.5], vec![0.3, 0.3, 0.4]]
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn redistribution_is_stochastic(
            n in 5usize..60,
            c_cells in 2usize..20,
            seed in 0u64..1000,
        ) {
            let g = Grid::new(1.0, n).unwrap();
            let width = c_cells as f64 * g.ds();
            prop_assume!(width <= 1.0);
            let k = KernelModel::truncated_uniform(g, width).unwrap();
            let fired: Vec<f64> = (0..n)
                .map(|j| (((seed + j as u64) * 2654435761) % 1000) as f64 / 1000.0)
                .collect();
            let tail = (seed % 97) as f64 / 97.0;
            let mut out = vec![0.0; n];
            k.redistribute(&fired, tail, &mut out);
            prop_assert!(out.iter().all(|&m| m >= 0.0));
            let input = neumaier_sum(fired.iter().copied()) + tail;
            let output = neumaier_sum(out.iter().copied());
            prop_assert!((input - output).abs() <= 1e-12 * (1.0 + input));
        }
    }
}
