//! Numerical certification of the ergodicity chain: minorization,
//! contraction, and relaxation-rate measurements that check the certified
//! constants against the computed dynamics.
//!
//! Every check compares a **measured** quantity against a **certified**
//! bound, with an explicit discretization allowance `5·ds·p_max` — the
//! scheme is first-order, so its constants are recovered only up to
//! O(ds). A failed check is reported, never silently absorbed.

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{
    doeblin_alpha_from, stationary_fatigue, stationary_renewal, theory_constants, Equilibrium,
    TheoryConstants,
};
use crate::error::{Error, Result};
use crate::kernel::{total_fired, KernelModel};
use crate::measure::{Grid, GridMeasure, NeumaierSum};
use crate::rate::RateModel;
use crate::semigroup::{simulate, step_frozen_in_place, FrozenRate, ModelKind, SimOptions};

/// Discretization allowance used by every certificate: relative slack of
/// `5·ds·p_max` on the certified bounds.
pub fn scheme_tolerance(grid: Grid, p_max: f64) -> f64 {
    5.0 * grid.ds() * p_max
}

fn check_window_fits(grid: Grid, s_star: f64) -> Result<()> {
    if grid.s_max() < 2.0 * s_star {
        return Err(Error::Config(format!(
            "the grid must cover one full minorization window: s_max = {} < 2·s_star = {}",
            grid.s_max(),
            2.0 * s_star
        )));
    }
    Ok(())
}

fn check_resolution(grid: Grid, s_star: f64) -> Result<()> {
    let cells_per_window = (s_star / grid.ds()).floor() as usize;
    if cells_per_window < 20 {
        return Err(Error::Config(format!(
            "grid too coarse to certify: only {cells_per_window} cells per refractory horizon (need at least 20); refine ds below {}",
            s_star / 20.0
        )));
    }
    Ok(())
}

fn kernel_floor_for(
    model: ModelKind,
    kernel: Option<&KernelModel>,
) -> Result<Option<(f64, f64)>> {
    match (model, kernel) {
        (ModelKind::Renewal, None) => Ok(None),
        (ModelKind::Fatigue, Some(k)) => Ok(Some((k.eps, k.delta))),
        (ModelKind::Fatigue, None) => Err(Error::Config(
            "certifying the fatigue model needs its reinjection kernel".to_string(),
        )),
        (ModelKind::Renewal, Some(_)) => Err(Error::Config(
            "the renewal model takes no reinjection kernel".to_string(),
        )),
    }
}

/// Outcome of the minorization check: after one window `t0 = 2·s_star`,
/// every initial point mass must have deposited density at least `bound`
/// (up to the scheme allowance) everywhere in `window`.
#[derive(Debug, Clone, Serialize)]
pub struct DoeblinReport {
    pub t0: f64,
    /// Region `(lo, hi)` on which the density floor is claimed.
    pub window: (f64, f64),
    /// Certified density floor on the window.
    pub bound: f64,
    /// Measured minimum density over all trials and window cells.
    pub min_density: f64,
    /// Initial point mass position that achieved the minimum.
    pub worst_initial: f64,
    pub n_trials: usize,
    /// Relative discretization allowance applied to `bound`.
    pub tol_scheme: f64,
    pub pass: bool,
}

/// Verify the Doeblin minorization of the frozen dynamics: evolve point
/// masses from `n_trials` positions spanning `[0, s_max]` (the corner
/// cases `0`, `s_star`, `2·s_star`, `s_max` are always included) for one
/// window, and take the worst resulting density over the minorization
/// region.
pub fn doeblin_check(
    model: ModelKind,
    frozen: &FrozenRate,
    kernel: Option<&KernelModel>,
    n_trials: usize,
) -> Result<DoeblinReport> {
    let grid = *frozen.grid();
    check_resolution(grid, frozen.s_star)?;
    check_window_fits(grid, frozen.s_star)?;
    let floor = kernel_floor_for(model, kernel)?;
    if n_trials < 2 {
        return Err(Error::Config(format!(
            "need at least 2 minorization trials, got {n_trials}"
        )));
    }

    let beta = frozen.p_min * (-2.0 * frozen.p_max * frozen.s_star).exp();
    let (window, bound) = match floor {
        None => ((0.0, frozen.s_star), beta),
        Some((eps, delta)) => ((delta, frozen.s_star), eps * delta * beta),
    };

    // Trial positions: an even sweep plus the structural corner cases,
    // deduplicated by containing cell.
    let mut positions: Vec<f64> = (0..n_trials)
        .map(|i| grid.s_max() * i as f64 / (n_trials - 1) as f64)
        .collect();
    positions.extend([0.0, frozen.s_star, 2.0 * frozen.s_star, grid.s_max()]);
    let mut by_cell: Vec<(usize, f64)> = positions
        .into_iter()
        .map(|s| (grid.cell_of(s).expect("position inside the grid"), s))
        .collect();
    by_cell.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
    by_cell.dedup_by_key(|&mut (cell, _)| cell);

    let window_steps = grid.steps_for(2.0 * frozen.s_star);
    let window_cells = grid.cells_within(window.0, window.1);

    let per_trial: Vec<(f64, f64)> = by_cell
        .par_iter()
        .map(|&(_, s0)| {
            let mut m = GridMeasure::dirac(grid, s0).expect("position inside the grid");
            let mut fired = Vec::new();
            for _ in 0..window_steps {
                step_frozen_in_place(frozen, model, kernel, &mut m, &mut fired);
            }
            let min_mass = window_cells
                .clone()
                .map(|i| m.masses()[i])
                .fold(f64::INFINITY, f64::min);
            (s0, min_mass / grid.ds())
        })
        .collect();

    let (worst_initial, min_density) = per_trial
        .into_iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("at least one trial");

    let tol_scheme = scheme_tolerance(grid, frozen.p_max);
    Ok(DoeblinReport {
        t0: 2.0 * frozen.s_star,
        window,
        bound,
        min_density,
        worst_initial,
        n_trials: by_cell.len(),
        tol_scheme,
        pass: min_density >= bound * (1.0 - tol_scheme),
    })
}

/// Outcome of the TV-contraction check over one window.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub t0: f64,
    /// Certified per-window contraction factor `1 − alpha`.
    pub factor_bound: f64,
    /// Worst measured `‖S_{t0}(μ − ν)‖ / ‖μ − ν‖` over the sampled pairs.
    pub worst_ratio: f64,
    pub n_pairs: usize,
    /// Pairs discarded because the initial difference was numerically zero.
    pub n_skipped: usize,
    pub tol_scheme: f64,
    pub seed: u64,
    pub pass: bool,
}

/// Verify the per-window TV contraction on random pairs of probability
/// measures (mixtures of up to 8 point masses, drawn from `seed`): evolve
/// the signed difference for one window and compare the TV ratio with the
/// certified factor. Also enforces plain non-expansion at every pair.
pub fn contraction_check(
    model: ModelKind,
    frozen: &FrozenRate,
    kernel: Option<&KernelModel>,
    n_pairs: usize,
    seed: u64,
) -> Result<ContractionReport> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let grid = *frozen.grid();
    check_resolution(grid, frozen.s_star)?;
    check_window_fits(grid, frozen.s_star)?;
    let floor = kernel_floor_for(model, kernel)?;
    if n_pairs == 0 {
        return Err(Error::Config("need at least one pair".to_string()));
    }
    let (_, alpha) = doeblin_alpha_from(frozen.p_min, frozen.p_max, frozen.s_star, floor)?;

    // Draw every pair up front from one seeded stream, so the check is
    // bitwise reproducible regardless of how the evolution is scheduled.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(GridMeasure, GridMeasure)> = (0..n_pairs)
        .map(|_| {
            let a = draw_probability_mixture(&mut rng, grid);
            let b = draw_probability_mixture(&mut rng, grid);
            (a, b)
        })
        .collect();

    let window_steps = grid.steps_for(2.0 * frozen.s_star);
    let ratios: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|(a, b)| {
            let mut diff = GridMeasure::axpy(-1.0, b, a).expect("same grid");
            let d0 = diff.tv();
            if d0 < 1e-14 {
                return None;
            }
            let mut fired = Vec::new();
            for _ in 0..window_steps {
                step_frozen_in_place(frozen, model, kernel, &mut diff, &mut fired);
            }
            Some(diff.tv() / d0)
        })
        .collect();

    let n_skipped = ratios.iter().filter(|r| r.is_none()).count();
    let worst_ratio = ratios
        .into_iter()
        .flatten()
        .fold(0.0f64, f64::max);
    if n_pairs == n_skipped {
        return Err(Error::Numerical(
            "every sampled pair had a numerically zero difference".to_string(),
        ));
    }

    let tol_scheme = scheme_tolerance(grid, frozen.p_max);
    let factor_bound = 1.0 - alpha;
    Ok(ContractionReport {
        t0: 2.0 * frozen.s_star,
        factor_bound,
        worst_ratio,
        n_pairs,
        n_skipped,
        tol_scheme,
        seed,
        pass: worst_ratio <= factor_bound * (1.0 + tol_scheme) && worst_ratio <= 1.0 + 1e-12,
    })
}

/// One probability measure made of up to 8 point masses at random
/// positions with random weights.
fn draw_probability_mixture(rng: &mut rand_chacha::ChaCha8Rng, grid: Grid) -> GridMeasure {
    use rand::prelude::*;
    let k = rng.random_range(1..=8usize);
    let mut atoms = Vec::with_capacity(k);
    let mut total = 0.0;
    for _ in 0..k {
        let s = rng.random_range(0.0..=grid.s_max());
        let w = rng.random_range(0.1..1.0f64);
        atoms.push((s, w));
        total += w;
    }
    let mut m = GridMeasure::zero(grid);
    let (masses, _) = m.parts_mut();
    for (s, w) in atoms {
        let cell = grid.cell_of(s).expect("inside grid");
        masses[cell] += w / total;
    }
    m
}

/// Least-squares exponential-decay fit `d(t) ≈ e^{a − λt}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateFit {
    /// Fitted decay rate (the negated slope of `ln d` against `t`).
    pub lambda: f64,
    /// Fitted `ln d` at `t = 0`.
    pub intercept: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r2: f64,
    pub n_points: usize,
    pub window: (f64, f64),
}

/// Fit an exponential decay rate to `(t, d)` samples restricted to
/// `window`. Needs at least 5 usable samples; any non-positive distance
/// inside the window is an error (shrink the window past the noise floor
/// instead of fitting garbage).
pub fn fit_decay_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let (lo, hi) = window;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("bad fit window [{lo}, {hi}]")));
    }
    let mut pts = Vec::new();
    for &(t, d) in series {
        if t < lo || t > hi {
            continue;
        }
        if !(d > 0.0) {
            return Err(Error::Numerical(format!(
                "distance {d:.3e} at t = {t} is not positive; shrink the fit window above the noise floor"
            )));
        }
        pts.push((t, d.ln()));
    }
    if pts.len() < 5 {
        return Err(Error::Config(format!(
            "fit window [{lo}, {hi}] holds only {} samples; need at least 5",
            pts.len()
        )));
    }

    let n = pts.len() as f64;
    let mut st = NeumaierSum::default();
    let mut sy = NeumaierSum::default();
    for &(t, y) in &pts {
        st.add(t);
        sy.add(y);
    }
    let t_bar = st.total() / n;
    let y_bar = sy.total() / n;
    let (mut sxx, mut sxy, mut sst) = (
        NeumaierSum::default(),
        NeumaierSum::default(),
        NeumaierSum::default(),
    );
    for &(t, y) in &pts {
        let dt = t - t_bar;
        let dy = y - y_bar;
        sxx.add(dt * dt);
        sxy.add(dt * dy);
        sst.add(dy * dy);
    }
    let sxx = sxx.total();
    if sxx <= 0.0 {
        return Err(Error::Numerical(
            "fit samples share a single time point".to_string(),
        ));
    }
    let slope = sxy.total() / sxx;
    let intercept = y_bar - slope * t_bar;
    let mut sse = NeumaierSum::default();
    for &(t, y) in &pts {
        let resid = y - (intercept + slope * t);
        sse.add(resid * resid);
    }
    let sst = sst.total();
    let r2 = if sst <= 1e-30 {
        1.0
    } else {
        1.0 - sse.total() / sst
    };
    Ok(RateFit {
        lambda: -slope,
        intercept,
        r2,
        n_points: pts.len(),
        window,
    })
}

/// Options for [`relaxation_experiment`].
#[derive(Debug, Clone)]
pub struct RelaxationOptions {
    /// Total simulated time per initial datum.
    pub horizon: f64,
    /// Time window of the decay fit.
    pub fit_window: (f64, f64),
    /// TV observations per minorization window entering the decay fit.
    /// One per window is enough to witness contraction but too sparse to
    /// fit a rate once the usable span is short; the default resolves the
    /// decay well inside a single window.
    pub samples_per_window: usize,
    pub equilibrium_tol: f64,
    pub activity_tol: f64,
    /// Distances below `floor_factor · equilibrium residual` (or 1e-12,
    /// whichever is larger) are excluded from the fit: they measure the
    /// equilibrium's own noise floor, not the decay.
    pub floor_factor: f64,
    /// Required fraction of the certified rate: pass needs
    /// `lambda_fit ≥ rate_margin · lambda_nl`.
    pub rate_margin: f64,
    pub r2_min: f64,
    /// Allowed overshoot of the feedback-defect ratio over `c_tilde`.
    pub h_margin: f64,
    /// Defect ratios are only meaningful while the distance is well above
    /// rounding noise; smaller distances are skipped.
    pub h_ratio_min_distance: f64,
}

impl Default for RelaxationOptions {
    fn default() -> Self {
        RelaxationOptions {
            horizon: 40.0,
            fit_window: (2.0, 40.0),
            samples_per_window: 8,
            equilibrium_tol: 1e-10,
            activity_tol: 1e-12,
            floor_factor: 100.0,
            rate_margin: 0.98,
            r2_min: 0.99,
            h_margin: 1.05,
            h_ratio_min_distance: 1e-8,
        }
    }
}

/// Per-initial-datum outcome of the relaxation experiment.
#[derive(Debug, Clone, Serialize)]
pub struct InitRelaxation {
    pub label: String,
    pub fit: RateFit,
    /// Worst measured `‖h(t)‖ / d(t)` over snapshots with usable distance
    /// (`None` when the trajectory never had one).
    pub max_h_ratio: Option<f64>,
    /// Worst measured `|∫h(t)|` — the feedback defect is mass-neutral, so
    /// this is a pure consistency number.
    pub max_abs_h_integral: f64,
    /// Samples excluded from the fit by the noise floor or the
    /// truncation clip.
    pub n_excluded: usize,
    pub rate_ok: bool,
    pub r2_ok: bool,
    pub h_ok: bool,
}

/// Outcome of the relaxation experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RelaxationReport {
    pub constants: TheoryConstants,
    pub equilibrium_activity: f64,
    pub equilibrium_residual: f64,
    /// `rate_margin · lambda_nl`: the fitted rates must clear this.
    pub lambda_required: f64,
    pub h_ratio_allowed: f64,
    pub per_init: Vec<InitRelaxation>,
    pub pass: bool,
}

/// Measure the nonlinear relaxation toward equilibrium and audit it
/// against the certified chain: for each initial probability measure,
/// record the TV distance to the stationary state at every window,
/// fit the decay rate, and verify (a) the rate clears
/// `rate_margin·lambda_nl` with an honest log-linear fit, and (b) the
/// activity-feedback defect `h(t)` stays below `c_tilde` per unit of
/// distance and integrates to zero.
pub fn relaxation_experiment(
    model: ModelKind,
    rate: &RateModel,
    kernel: Option<&KernelModel>,
    grid: Grid,
    inits: &[(String, GridMeasure)],
    opts: &RelaxationOptions,
) -> Result<RelaxationReport> {
    check_resolution(grid, rate.s_star)?;
    check_window_fits(grid, rate.s_star)?;
    let constants = theory_constants(model, rate, kernel)?;
    if !(rate.l < constants.l_threshold) {
        return Err(Error::Threshold(format!(
            "relaxation chain inconclusive: L = {:.6e} must stay below {:.6e}",
            rate.l, constants.l_threshold
        )));
    }
    if inits.is_empty() {
        return Err(Error::Config("need at least one initial datum".to_string()));
    }

    let equilibrium: Equilibrium = match model {
        ModelKind::Renewal => stationary_renewal(rate, grid, opts.equilibrium_tol)?,
        ModelKind::Fatigue => stationary_fatigue(
            rate,
            kernel.expect("kernel presence checked above"),
            opts.equilibrium_tol,
        )?,
    };

    // Distance sampling: several observations per minorization window
    // (the fit needs to resolve the exponential, not just witness the
    // per-window contraction). The defect audit stays at one full
    // snapshot per window.
    let window_steps = grid.steps_for(constants.t0).max(1);
    let sample_stride = (window_steps / opts.samples_per_window.max(1)).max(1);
    let steps = grid.steps_for(opts.horizon);
    let n_windows = steps / window_steps;
    let snapshot_times: Vec<f64> = (0..=n_windows)
        .map(|k| (k * window_steps) as f64 * grid.ds())
        .collect();

    // On a truncated axis the signed difference is progressively absorbed
    // by the final cell, where opposite signs cancel instead of
    // recirculating; once the slowest component has ridden the transport
    // across the whole domain, the measured distance reflects the cut at
    // s_max rather than the half-line decay. Keep a full window of margin
    // before that transit.
    let transit_clip = grid.s_max() - constants.t0;

    // Stationary rate row, for the defect assembly.
    let mids: Vec<f64> = (0..grid.n_cells()).map(|i| grid.midpoint(i)).collect();
    let mut p_star = vec![0.0; grid.n_cells()];
    rate.eval_row(equilibrium.activity, &mids, &mut p_star);
    let p_star_tail = rate.eval(equilibrium.activity, grid.s_max());

    let fit_floor = (opts.floor_factor * equilibrium.residual).max(1e-12);
    let lambda_required = opts.rate_margin * constants.lambda_nl;
    let h_ratio_allowed = opts.h_margin * constants.c_tilde;

    let per_init: Vec<InitRelaxation> = inits
        .par_iter()
        .map(|(label, init)| -> Result<InitRelaxation> {
            if !init.is_nonnegative() {
                return Err(Error::Config(format!(
                    "initial datum '{label}' is not a nonnegative measure"
                )));
            }
            let init = init.normalized()?;
            let sim_opts = SimOptions {
                activity_tol: opts.activity_tol,
                sample_stride,
                snapshot_times: snapshot_times.clone(),
                reference: Some(equilibrium.n_star.clone()),
            };
            let traj = simulate(model, rate, kernel, init, opts.horizon, &sim_opts)?;

            let series: Vec<(f64, f64)> = traj
                .samples
                .iter()
                .map(|s| (s.t, s.tv_to_ref.expect("reference set")))
                .collect();

            // Feedback-defect audit at each snapshot (one per window).
            let mut max_h_ratio: Option<f64> = None;
            let mut max_abs_h_integral = 0.0f64;
            let mut p_t = vec![0.0; grid.n_cells()];
            let mut reinjected = vec![0.0; grid.n_cells()];
            for snap in &traj.snapshots {
                let d = GridMeasure::axpy(-1.0, &equilibrium.n_star, &snap.measure)?.tv();
                rate.eval_row(snap.activity, &mids, &mut p_t);
                let p_t_tail = rate.eval(snap.activity, grid.s_max());

                // Density part: (p(N_t) − p(N_*)) n_t, cellwise.
                let mut g = vec![0.0; grid.n_cells()];
                for i in 0..grid.n_cells() {
                    g[i] = (p_t[i] - p_star[i]) * snap.measure.masses()[i];
                }
                let g_tail = (p_t_tail - p_star_tail) * snap.measure.tail();

                // Reinjection image of the negated density part: where the
                // model re-deposits the defect.
                reinjected.iter_mut().for_each(|r| *r = 0.0);
                let neg_g: Vec<f64> = g.iter().map(|&x| -x).collect();
                match model {
                    ModelKind::Renewal => {
                        reinjected[0] = total_fired(&neg_g, -g_tail);
                    }
                    ModelKind::Fatigue => {
                        kernel
                            .expect("kernel presence checked above")
                            .redistribute(&neg_g, -g_tail, &mut reinjected);
                    }
                }

                let mut norm = NeumaierSum::default();
                let mut integral = NeumaierSum::default();
                for &x in g.iter().chain(reinjected.iter()) {
                    norm.add(x.abs());
                    integral.add(x);
                }
                norm.add(g_tail.abs());
                integral.add(g_tail);

                max_abs_h_integral = max_abs_h_integral.max(integral.total().abs());
                if d >= opts.h_ratio_min_distance {
                    let ratio = norm.total() / d;
                    max_h_ratio = Some(max_h_ratio.map_or(ratio, |m: f64| m.max(ratio)));
                }
            }

            // Fit above the noise floor and before the truncation transit.
            let n_before = series.len();
            let fit_series: Vec<(f64, f64)> = series
                .into_iter()
                .filter(|&(t, d)| d > fit_floor && t <= transit_clip)
                .collect();
            let n_excluded = n_before - fit_series.len();
            let fit = fit_decay_rate(&fit_series, opts.fit_window)?;

            let rate_ok = fit.lambda >= lambda_required;
            let r2_ok = fit.r2 >= opts.r2_min;
            let h_ok = max_h_ratio.is_none_or(|r| r <= h_ratio_allowed)
                && max_abs_h_integral <= 1e-10 * rate.p_max;
            Ok(InitRelaxation {
                label: label.clone(),
                fit,
                max_h_ratio,
                max_abs_h_integral,
                n_excluded,
                rate_ok,
                r2_ok,
                h_ok,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let pass = per_init
        .iter()
        .all(|r| r.rate_ok && r.r2_ok && r.h_ok);
    Ok(RelaxationReport {
        constants,
        equilibrium_activity: equilibrium.activity,
        equilibrium_residual: equilibrium.residual,
        lambda_required,
        h_ratio_allowed,
        per_init,
        pass,
    })
}
