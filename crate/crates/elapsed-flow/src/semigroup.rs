//! Time steppers for the two population models and the self-consistent
//! activity solver they share.
//!
//! Both models transport neurons along the elapsed-time axis at unit
//! speed while they fire at rate `p(N(t), s)`; they differ only in where
//! fired mass re-enters:
//!
//! * **Renewal** — every fired neuron restarts at elapsed time zero
//!   (the fired total becomes the boundary inflow), and the network
//!   activity `N(t)` equals that firing flux.
//! * **Fatigue** — fired mass is re-deposited by a backward reinjection
//!   kernel, and nothing enters at the boundary.
//!
//! One step of width `dt = ds` splits exactly into decay, transport and
//! reinjection. Decay uses the exact exponential survival factor
//! `σ = e^{−p·dt}` per cell; because cells store mass, the split
//! `m = m·σ + (m − m·σ)` is exact in floating point whenever `σ ≥ ½`
//! (Sterbenz), so a step's only rounding is in re-depositing the fired
//! mass. Transport is a pure reindex (the CFL number is exactly one),
//! which is what keeps long trajectories conservative to a few ulps.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{total_fired, KernelModel};
use crate::measure::{Grid, GridMeasure, NeumaierSum};
use crate::rate::RateModel;

/// Which reinjection rule closes the transport-decay dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Renewal,
    Fatigue,
}

/// Population state at one instant: the measure and its self-consistent
/// activity.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub n: GridMeasure,
    /// Network activity `N`: the fixed point of `N ↦ ∫ p(N, s) n(ds)`.
    pub activity: f64,
}

/// Result of an activity solve.
#[derive(Debug, Clone, Copy)]
pub struct ActivitySolve {
    pub activity: f64,
    pub iterations: usize,
}

const ACTIVITY_MAX_ITERS: usize = 10_000;

/// Evaluate the firing functional `Φ(N) = ∫ p(N, s) n(ds)` with the rate
/// row already materialized (`p` at cell midpoints, `p_tail` at `s_max`).
fn firing_integral(p: &[f64], p_tail: f64, n: &GridMeasure) -> f64 {
    let mut acc = NeumaierSum::default();
    for (&pi, &mi) in p.iter().zip(n.masses()) {
        acc.add(pi * mi);
    }
    acc.add(p_tail * n.tail());
    acc.total()
}

/// Internal activity solve that keeps the rate row evaluated **at the
/// returned activity**, so callers can reuse it for the survival factors
/// of the same step.
fn solve_activity_full(
    rate: &RateModel,
    midpoints: &[f64],
    n: &GridMeasure,
    tol: f64,
    warm_start: Option<f64>,
    p_buf: &mut Vec<f64>,
) -> Result<(ActivitySolve, f64)> {
    let s_max = n.grid().s_max();
    p_buf.resize(midpoints.len(), 0.0);

    if rate.l == 0.0 {
        // No activity feedback: a single evaluation is the fixed point.
        rate.eval_row(0.0, midpoints, p_buf);
        let p_tail = rate.eval(0.0, s_max);
        let activity = firing_integral(p_buf, p_tail, n);
        return Ok((
            ActivitySolve {
                activity,
                iterations: 1,
            },
            p_tail,
        ));
    }

    // Banach precondition: N ↦ Φ(N) contracts with factor L·|n|_TV.
    let contraction = rate.l * n.tv();
    if contraction >= 1.0 {
        return Err(Error::Numerical(format!(
            "activity map is not a contraction: L·‖n‖ = {contraction:.6} ≥ 1"
        )));
    }

    let mut cur = warm_start.unwrap_or_else(|| {
        rate.eval_row(0.0, midpoints, p_buf);
        firing_integral(p_buf, rate.eval(0.0, s_max), n)
    });
    for it in 1..=ACTIVITY_MAX_ITERS {
        rate.eval_row(cur, midpoints, p_buf);
        let p_tail = rate.eval(cur, s_max);
        let next = firing_integral(p_buf, p_tail, n);
        if (next - cur).abs() <= tol {
            // Return `cur`, not `next`: the rate row in `p_buf` was
            // evaluated at `cur`, so state and cached row stay coherent.
            return Ok((
                ActivitySolve {
                    activity: cur,
                    iterations: it,
                },
                p_tail,
            ));
        }
        cur = next;
    }
    Err(Error::Numerical(format!(
        "activity iteration did not converge within {ACTIVITY_MAX_ITERS} steps (tol {tol:.1e}, contraction factor {contraction:.4})"
    )))
}

/// Solve the self-consistent activity `N = ∫ p(N, s) n(ds)` by fixed-point
/// iteration. Requires `L·‖n‖_TV < 1` (the map is then a contraction).
pub fn solve_activity(rate: &RateModel, n: &GridMeasure, tol: f64) -> Result<ActivitySolve> {
    let grid = *n.grid();
    let midpoints: Vec<f64> = (0..grid.n_cells()).map(|i| grid.midpoint(i)).collect();
    let mut p_buf = Vec::new();
    let (solve, _) = solve_activity_full(rate, &midpoints, n, tol, None, &mut p_buf)?;
    Ok(solve)
}

/// A rate model with the activity frozen at a fixed value: the rate row,
/// tail rate and survival factors become constants, and the evolution is
/// linear. This is the object the ergodicity certificates are stated for.
#[derive(Debug, Clone)]
pub struct FrozenRate {
    grid: Grid,
    /// `p(n̄, s_i)` at cell midpoints.
    pub p: Vec<f64>,
    /// `p(n̄, s_max)`, applied to the tail.
    pub p_tail: f64,
    /// `e^{−p_i·ds}` per cell.
    pub survival: Vec<f64>,
    pub survival_tail: f64,
    /// Structural constants inherited from the underlying rate model.
    pub p_min: f64,
    pub p_max: f64,
    pub s_star: f64,
}

impl FrozenRate {
    /// Freeze `rate` at activity `n_bar` on `grid`.
    pub fn new(rate: &RateModel, grid: Grid, n_bar: f64) -> FrozenRate {
        let midpoints: Vec<f64> = (0..grid.n_cells()).map(|i| grid.midpoint(i)).collect();
        let mut p = vec![0.0; grid.n_cells()];
        rate.eval_row(n_bar, &midpoints, &mut p);
        let p_tail = rate.eval(n_bar, grid.s_max());
        let dt = grid.ds();
        let survival = p.iter().map(|&pi| (-pi * dt).exp()).collect();
        FrozenRate {
            grid,
            p,
            p_tail,
            survival,
            survival_tail: (-p_tail * dt).exp(),
            p_min: rate.p_min,
            p_max: rate.p_max,
            s_star: rate.s_star,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// The linear firing functional `∫ p(n̄, s) m(ds)` of this frozen rate.
    pub fn firing_of(&self, m: &GridMeasure) -> f64 {
        firing_integral(&self.p, self.p_tail, m)
    }
}

/// One decay-transport-reinjection step with precomputed rate data.
/// Signed measures are fine: every stage is linear.
fn advance_in_place(
    model: ModelKind,
    kernel: Option<&KernelModel>,
    survival: &[f64],
    survival_tail: f64,
    m: &mut GridMeasure,
    fired: &mut Vec<f64>,
) {
    let n = survival.len();
    fired.resize(n, 0.0);
    let (masses, tail) = m.parts_mut();

    // Decay: split each cell exactly into survivors and fired mass.
    for i in 0..n {
        let surv = masses[i] * survival[i];
        fired[i] = masses[i] - surv;
        masses[i] = surv;
    }
    let tail_surv = *tail * survival_tail;
    let fired_tail = *tail - tail_surv;

    // Transport: everything ages by one cell; the last cell joins the tail.
    let last = masses[n - 1];
    masses.copy_within(0..n - 1, 1);
    masses[0] = 0.0;
    *tail = tail_surv + last;

    // Reinjection closes the step.
    match model {
        ModelKind::Renewal => {
            // The boundary condition: all fired mass restarts at zero.
            masses[0] = total_fired(fired, fired_tail);
        }
        ModelKind::Fatigue => {
            kernel
                .expect("fatigue step requires a kernel")
                .redistribute(fired, fired_tail, masses);
        }
    }
}

/// Advance a measure one step under a frozen (linear) rate. Allocates; the
/// iteration loops inside this crate use the in-place engine directly.
pub fn step_frozen(
    frozen: &FrozenRate,
    model: ModelKind,
    kernel: Option<&KernelModel>,
    m: &GridMeasure,
) -> Result<GridMeasure> {
    check_kernel_presence(model, kernel, &frozen.grid)?;
    if m.grid() != &frozen.grid {
        return Err(Error::Config(
            "measure grid does not match the frozen rate's grid".to_string(),
        ));
    }
    let mut out = m.clone();
    let mut fired = Vec::new();
    advance_in_place(
        model,
        kernel,
        &frozen.survival,
        frozen.survival_tail,
        &mut out,
        &mut fired,
    );
    Ok(out)
}

pub(crate) fn step_frozen_in_place(
    frozen: &FrozenRate,
    model: ModelKind,
    kernel: Option<&KernelModel>,
    m: &mut GridMeasure,
    fired: &mut Vec<f64>,
) {
    advance_in_place(
        model,
        kernel,
        &frozen.survival,
        frozen.survival_tail,
        m,
        fired,
    );
}

fn check_kernel_presence(
    model: ModelKind,
    kernel: Option<&KernelModel>,
    grid: &Grid,
) -> Result<()> {
    match (model, kernel) {
        (ModelKind::Fatigue, None) => Err(Error::Config(
            "the fatigue model needs a reinjection kernel".to_string(),
        )),
        (ModelKind::Renewal, Some(_)) => Err(Error::Config(
            "the renewal model takes no reinjection kernel (its boundary condition plays that role)"
                .to_string(),
        )),
        (_, Some(k)) if k.grid() != grid => Err(Error::Config(
            "kernel grid does not match the simulation grid".to_string(),
        )),
        _ => Ok(()),
    }
}

/// Reusable nonlinear stepper: owns the scratch buffers and the cached
/// rate row, so repeated steps on 10⁵-step trajectories stay allocation-
/// free and evaluate the rate only when the activity actually moved.
#[derive(Debug)]
pub struct Stepper {
    model: ModelKind,
    rate: RateModel,
    kernel: Option<KernelModel>,
    grid: Grid,
    activity_tol: f64,
    midpoints: Vec<f64>,
    /// Rate row `p(cached_at, s_i)` and derived survival factors.
    cached_at: f64,
    p: Vec<f64>,
    p_tail: f64,
    survival: Vec<f64>,
    survival_tail: f64,
    fired: Vec<f64>,
    /// Iterations spent in the most recent activity solve.
    pub last_solve_iterations: usize,
}

impl Stepper {
    pub fn new(
        model: ModelKind,
        rate: RateModel,
        kernel: Option<KernelModel>,
        grid: Grid,
        activity_tol: f64,
    ) -> Result<Stepper> {
        check_kernel_presence(model, kernel.as_ref(), &grid)?;
        if !(activity_tol.is_finite() && activity_tol > 0.0) {
            return Err(Error::Config(format!(
                "activity tolerance must be positive, got {activity_tol}"
            )));
        }
        if grid.s_max() <= rate.s_star {
            return Err(Error::Config(format!(
                "the grid must extend past the refractory horizon: s_max = {} ≤ s_star = {}",
                grid.s_max(),
                rate.s_star
            )));
        }
        let midpoints = (0..grid.n_cells()).map(|i| grid.midpoint(i)).collect();
        Ok(Stepper {
            model,
            rate,
            kernel,
            grid,
            activity_tol,
            midpoints,
            cached_at: f64::NAN,
            p: Vec::new(),
            p_tail: 0.0,
            survival: Vec::new(),
            survival_tail: 1.0,
            fired: Vec::new(),
            last_solve_iterations: 0,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rate(&self) -> &RateModel {
        &self.rate
    }

    pub fn kernel(&self) -> Option<&KernelModel> {
        self.kernel.as_ref()
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    /// Solve the initial activity and wrap the measure into a state at
    /// `t = 0`. The initial datum of a population model must be a
    /// nonnegative measure.
    pub fn initial_state(&mut self, n0: GridMeasure) -> Result<SimState> {
        if n0.grid() != &self.grid {
            return Err(Error::Config(
                "initial measure grid does not match the stepper grid".to_string(),
            ));
        }
        if !n0.is_nonnegative() {
            return Err(Error::Config(
                "initial datum must be a nonnegative measure".to_string(),
            ));
        }
        let (solve, p_tail) = solve_activity_full(
            &self.rate,
            &self.midpoints,
            &n0,
            self.activity_tol,
            None,
            &mut self.p,
        )?;
        self.last_solve_iterations = solve.iterations;
        self.p_tail = p_tail;
        self.refresh_survival(solve.activity);
        Ok(SimState {
            t: 0.0,
            n: n0,
            activity: solve.activity,
        })
    }

    fn refresh_survival(&mut self, activity: f64) {
        let dt = self.grid.ds();
        self.survival.resize(self.p.len(), 0.0);
        for (s, &pi) in self.survival.iter_mut().zip(&self.p) {
            *s = (-pi * dt).exp();
        }
        self.survival_tail = (-self.p_tail * dt).exp();
        self.cached_at = activity;
    }

    /// Advance the state by one step of width `ds`, re-solving the
    /// activity on the new measure (warm-started from the old one).
    pub fn step(&mut self, state: &mut SimState) -> Result<()> {
        // Rates with activity feedback need the cached row to match the
        // state; rebuild it if the caller moved the state independently.
        if self.cached_at.to_bits() != state.activity.to_bits() {
            if self.rate.l == 0.0 && !self.cached_at.is_nan() {
                // No feedback: the row never changes.
                self.cached_at = state.activity;
            } else {
                self.rate.eval_row(state.activity, &self.midpoints, &mut self.p);
                self.p_tail = self.rate.eval(state.activity, self.grid.s_max());
                self.refresh_survival(state.activity);
            }
        }

        advance_in_place(
            self.model,
            self.kernel.as_ref(),
            &self.survival,
            self.survival_tail,
            &mut state.n,
            &mut self.fired,
        );
        state.t += self.grid.ds();

        let (solve, p_tail) = solve_activity_full(
            &self.rate,
            &self.midpoints,
            &state.n,
            self.activity_tol,
            Some(state.activity),
            &mut self.p,
        )?;
        self.last_solve_iterations = solve.iterations;
        self.p_tail = p_tail;
        if self.rate.l == 0.0 {
            // Row and survival are activity-independent; just re-tag them.
            self.cached_at = solve.activity;
        } else {
            self.refresh_survival(solve.activity);
        }
        state.activity = solve.activity;
        Ok(())
    }
}

/// Advance a state by a single nonlinear step (convenience wrapper used
/// for residual checks; builds a throwaway stepper).
pub fn step_once(
    model: ModelKind,
    rate: &RateModel,
    kernel: Option<&KernelModel>,
    state: &SimState,
    activity_tol: f64,
) -> Result<SimState> {
    let mut stepper = Stepper::new(
        model,
        rate.clone(),
        kernel.cloned(),
        *state.n.grid(),
        activity_tol,
    )?;
    let mut out = stepper.initial_state(state.n.clone())?;
    out.activity = state.activity;
    stepper.step(&mut out)?;
    Ok(out)
}

/// Options for [`simulate`].
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Fixed-point tolerance of every activity solve.
    pub activity_tol: f64,
    /// Record a sample every this many steps (step 0 is always recorded).
    pub sample_stride: usize,
    /// Times at which to capture full measure snapshots (rounded to the
    /// nearest step).
    pub snapshot_times: Vec<f64>,
    /// Optional reference measure; samples then carry the TV distance to
    /// it.
    pub reference: Option<GridMeasure>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            activity_tol: 1e-12,
            sample_stride: 1,
            snapshot_times: Vec::new(),
            reference: None,
        }
    }
}

/// One observation row of a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub t: f64,
    pub mass: f64,
    pub activity: f64,
    pub tv_to_ref: Option<f64>,
}

/// A full measure capture along a trajectory.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub activity: f64,
    pub measure: GridMeasure,
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: SimState,
    /// Smallest cell or tail mass seen at any step (nonlinear runs keep
    /// this at zero or above; it is the positivity certificate).
    pub min_cell: f64,
}

/// Run a nonlinear model from `init` for `horizon` time units
/// (`⌈horizon/ds⌉` steps of width `ds`), recording samples every
/// `sample_stride` steps and full snapshots at the requested times.
pub fn simulate(
    model: ModelKind,
    rate: &RateModel,
    kernel: Option<&KernelModel>,
    init: GridMeasure,
    horizon: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::Config(format!(
            "horizon must be finite and nonnegative, got {horizon}"
        )));
    }
    if opts.sample_stride == 0 {
        return Err(Error::Config("sample stride must be at least 1".to_string()));
    }
    if let Some(r) = &opts.reference {
        if r.grid() != init.grid() {
            return Err(Error::Config(
                "reference measure grid does not match the initial datum".to_string(),
            ));
        }
    }
    let grid = *init.grid();
    let steps = grid.steps_for(horizon);

    // Map snapshot times to step indices (sorted, deduplicated).
    let mut snap_steps: Vec<(usize, f64)> = Vec::new();
    for &t in &opts.snapshot_times {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Config(format!("bad snapshot time {t}")));
        }
        let k = (t / grid.ds()).round() as usize;
        if k > steps {
            return Err(Error::Config(format!(
                "snapshot time {t} lies beyond the horizon {horizon}"
            )));
        }
        snap_steps.push((k, t));
    }
    snap_steps.sort_by_key(|&(k, _)| k);
    snap_steps.dedup_by_key(|&mut (k, _)| k);

    let mut stepper = Stepper::new(model, rate.clone(), kernel.cloned(), grid, opts.activity_tol)?;
    let mut state = stepper.initial_state(init)?;

    let mut samples = Vec::with_capacity(steps / opts.sample_stride + 2);
    let mut snapshots = Vec::with_capacity(snap_steps.len());
    let mut min_cell = f64::INFINITY;
    let mut snap_iter = snap_steps.into_iter().peekable();

    let record = |state: &SimState,
                  samples: &mut Vec<Sample>,
                  snapshots: &mut Vec<Snapshot>,
                  k: usize,
                  take_sample: bool,
                  snap_iter: &mut std::iter::Peekable<std::vec::IntoIter<(usize, f64)>>|
     -> Result<()> {
        if take_sample {
            let tv_to_ref = match &opts.reference {
                Some(r) => Some(state.n.tv_distance(r)?),
                None => None,
            };
            samples.push(Sample {
                t: state.t,
                mass: state.n.mass(),
                activity: state.activity,
                tv_to_ref,
            });
        }
        if snap_iter.peek().is_some_and(|&(ks, _)| ks == k) {
            snap_iter.next();
            snapshots.push(Snapshot {
                t: state.t,
                activity: state.activity,
                measure: state.n.clone(),
            });
        }
        Ok(())
    };

    record(&state, &mut samples, &mut snapshots, 0, true, &mut snap_iter)?;
    min_cell = min_cell
        .min(state.n.tail())
        .min(state.n.masses().iter().copied().fold(f64::INFINITY, f64::min));

    for k in 1..=steps {
        stepper.step(&mut state)?;
        // Pin the clock to the step counter so long runs carry no additive
        // time drift.
        state.t = k as f64 * grid.ds();
        let cell_min = state
            .n
            .masses()
            .iter()
            .copied()
            .fold(state.n.tail(), f64::min);
        min_cell = min_cell.min(cell_min);
        record(
            &state,
            &mut samples,
            &mut snapshots,
            k,
            k % opts.sample_stride == 0,
            &mut snap_iter,
        )?;
    }

    Ok(Trajectory {
        samples,
        snapshots,
        final_state: state,
        min_cell,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(s_max: f64, n: usize) -> Grid {
        Grid::new(s_max, n).unwrap()
    }

    fn unit_rate() -> RateModel {
        RateModel::constant(1.0, 1.0).unwrap()
    }

    #[test]
    fn activity_of_constant_rate_is_the_mass() {
        let g = grid(10.0, 500);
        let n = GridMeasure::dirac(g, 3.0).unwrap();
        let s = solve_activity(&unit_rate(), &n, 1e-12).unwrap();
        assert_eq!(s.activity, 1.0);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn activity_solves_affine_fixed_point_exactly() {
        // p = 1 + 0.5·min(N, 4) on a unit-mass measure: N = 1 + 0.5·N,
        // fixed point N = 2 (cap not binding).
        let g = grid(10.0, 500);
        let n = GridMeasure::dirac(g, 0.0).unwrap();
        let rate = RateModel::affine(1.0, 0.5, 4.0, 1.0).unwrap();
        let s = solve_activity(&rate, &n, 1e-13).unwrap();
        assert_relative_eq!(s.activity, 2.0, max_relative = 1e-12);
        assert!(s.iterations > 1);
    }

    #[test]
    fn activity_rejects_non_contractive_feedback() {
        let g = grid(10.0, 100);
        let n = GridMeasure::dirac(g, 0.0).unwrap().scaled(3.0);
        let rate = RateModel::affine(1.0, 0.5, 4.0, 1.0).unwrap(); // L·mass = 1.5
        let err = solve_activity(&rate, &n, 1e-12).unwrap_err();
        assert!(err.to_string().contains("contraction"), "{err}");
    }

    #[test]
    fn one_step_conserves_mass_and_positivity() {
        let g = grid(10.0, 2000);
        let init = GridMeasure::from_density(g, |s| (-s).exp()).unwrap();
        let mass0 = init.mass();
        for (model, kernel) in [
            (ModelKind::Renewal, None),
            (
                ModelKind::Fatigue,
                Some(KernelModel::truncated_uniform(g, 0.25).unwrap()),
            ),
        ] {
            let mut stepper =
                Stepper::new(model, unit_rate(), kernel, g, 1e-12).unwrap();
            let mut state = stepper.initial_state(init.clone()).unwrap();
            stepper.step(&mut state).unwrap();
            assert!(
                (state.n.mass() - mass0).abs() <= 1e-14,
                "mass drifted by {:.3e}",
                state.n.mass() - mass0
            );
            assert!(state.n.masses().iter().all(|&m| m >= 0.0));
            assert!(state.n.tail() >= 0.0);
        }
    }

    #[test]
    fn renewal_dirac_decays_exponentially_before_reaching_the_boundary() {
        // Under p ≡ 1 a dirac at 5 keeps e^{-t} of its mass at the moving
        // point; the fired mass piles up from the boundary.
        let g = grid(10.0, 1000);
        let init = GridMeasure::dirac(g, 5.0).unwrap();
        let traj = simulate(
            ModelKind::Renewal,
            &unit_rate(),
            None,
            init,
            1.0,
            &SimOptions::default(),
        )
        .unwrap();
        let n = &traj.final_state.n;
        // The surviving atom sits 1 time unit to the right of its start.
        let atom_cell = g.cell_of(6.0).unwrap();
        assert_relative_eq!(n.masses()[atom_cell], (-1.0f64).exp(), max_relative = 1e-12);
        assert!((n.mass() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn delta_kernel_fatigue_matches_renewal_bitwise() {
        let g = grid(10.0, 400);
        let rate = RateModel::smoothed_step(1.0, 1.1, 1.0, 0.2, 0.25).unwrap();
        let init = GridMeasure::from_density(g, |s| (-s).exp())
            .unwrap()
            .normalized()
            .unwrap();
        let opts = SimOptions::default();
        let a = simulate(ModelKind::Renewal, &rate, None, init.clone(), 2.0, &opts).unwrap();
        let delta = KernelModel::delta_at_zero(g);
        let b = simulate(ModelKind::Fatigue, &rate, Some(&delta), init, 2.0, &opts).unwrap();
        assert_eq!(a.final_state.n, b.final_state.n);
        assert_eq!(
            a.final_state.activity.to_bits(),
            b.final_state.activity.to_bits()
        );
    }

    #[test]
    fn frozen_step_agrees_with_nonlinear_step_for_feedback_free_rates() {
        let g = grid(10.0, 300);
        let rate = unit_rate();
        let init = GridMeasure::from_density(g, |s| (-0.5 * s).exp()).unwrap();
        let frozen = FrozenRate::new(&rate, g, 0.0);
        let lin = step_frozen(&frozen, ModelKind::Renewal, None, &init).unwrap();

        let mut stepper = Stepper::new(ModelKind::Renewal, rate, None, g, 1e-12).unwrap();
        let mut state = stepper.initial_state(init).unwrap();
        stepper.step(&mut state).unwrap();
        assert_eq!(lin, state.n);
    }

    #[test]
    fn frozen_step_is_tv_nonexpansive_on_signed_measures() {
        let g = grid(6.0, 240);
        let rate = RateModel::smoothed_step(1.0, 1.5, 1.0, 0.3, 0.25).unwrap();
        let frozen = FrozenRate::new(&rate, g, 0.7);
        let a = GridMeasure::dirac(g, 0.3).unwrap();
        let b = GridMeasure::dirac(g, 4.2).unwrap();
        let mut diff = GridMeasure::axpy(-1.0, &b, &a).unwrap();
        let mut fired = Vec::new();
        let mut prev_tv = diff.tv();
        for model in [ModelKind::Renewal, ModelKind::Fatigue] {
            let kernel = match model {
                ModelKind::Renewal => None,
                ModelKind::Fatigue => Some(KernelModel::truncated_uniform(g, 0.5).unwrap()),
            };
            for _ in 0..100 {
                step_frozen_in_place(&frozen, model, kernel.as_ref(), &mut diff, &mut fired);
                let tv = diff.tv();
                assert!(tv <= prev_tv * (1.0 + 1e-12) + 1e-15, "TV grew: {prev_tv} → {tv}");
                prev_tv = tv;
            }
        }
    }

    #[test]
    fn perturbing_the_rate_moves_the_solution_within_the_stability_envelope() {
        // Two feedback-free rates p ≡ 1 and p ≡ 1.05: after time t the
        // flows differ in TV by at most (Δp/p)·(e^{2pt} − 1) for unit mass.
        let g = grid(10.0, 500);
        let init = GridMeasure::dirac(g, 0.0).unwrap();
        let opts = SimOptions::default();
        let a = simulate(
            ModelKind::Renewal,
            &unit_rate(),
            None,
            init.clone(),
            1.0,
            &opts,
        )
        .unwrap();
        let b = simulate(
            ModelKind::Renewal,
            &RateModel::constant(1.05, 1.0).unwrap(),
            None,
            init,
            1.0,
            &opts,
        )
        .unwrap();
        let gap = a.final_state.n.tv_distance(&b.final_state.n).unwrap();
        let envelope = 0.05 * ((2.0f64).exp() - 1.0); // = 0.31945280494653251
        assert!(gap > 0.0 && gap <= envelope, "gap {gap} vs envelope {envelope}");
        assert!((envelope - 0.31945280494653251).abs() < 1e-16);
    }

    #[test]
    fn simulate_respects_stride_snapshots_and_zero_horizon() {
        let g = grid(10.0, 200);
        let init = GridMeasure::dirac(g, 0.0).unwrap();
        let opts = SimOptions {
            sample_stride: 7,
            snapshot_times: vec![0.0, 0.5, 1.0],
            ..SimOptions::default()
        };
        let traj = simulate(ModelKind::Renewal, &unit_rate(), None, init.clone(), 1.0, &opts).unwrap();
        let steps = g.steps_for(1.0); // 20 steps
        assert_eq!(traj.samples.len(), steps / 7 + 1);
        assert_eq!(traj.snapshots.len(), 3);
        assert_eq!(traj.snapshots[0].t, 0.0);
        assert!((traj.snapshots[2].t - 1.0).abs() < 1e-12);

        let single = simulate(
            ModelKind::Renewal,
            &unit_rate(),
            None,
            init,
            0.0,
            &SimOptions::default(),
        )
        .unwrap();
        assert_eq!(single.samples.len(), 1);
        assert_eq!(single.final_state.t, 0.0);
    }

    #[test]
    fn simulate_rejects_mismatched_setups() {
        let g = grid(10.0, 200);
        let init = GridMeasure::dirac(g, 0.0).unwrap();
        // Fatigue without kernel.
        assert!(simulate(
            ModelKind::Fatigue,
            &unit_rate(),
            None,
            init.clone(),
            1.0,
            &SimOptions::default()
        )
        .is_err());
        // Renewal with kernel.
        let k = KernelModel::delta_at_zero(g);
        assert!(simulate(
            ModelKind::Renewal,
            &unit_rate(),
            Some(&k),
            init.clone(),
            1.0,
            &SimOptions::default()
        )
        .is_err());
        // Signed initial datum.
        let signed = GridMeasure::axpy(
            -2.0,
            &GridMeasure::dirac(g, 1.0).unwrap(),
            &init,
        )
        .unwrap();
        assert!(simulate(
            ModelKind::Renewal,
            &unit_rate(),
            None,
            signed,
            1.0,
            &SimOptions::default()
        )
        .is_err());
    }

    #[test]
    fn long_runs_stay_conservative_to_rounding() {
        let g = grid(10.0, 400);
        let rate = RateModel::smoothed_step(1.0, 1.1, 1.0, 0.2, 0.25).unwrap();
        let init = GridMeasure::dirac(g, 0.0).unwrap();
        let opts = SimOptions {
            sample_stride: 100,
            ..SimOptions::default()
        };
        let traj = simulate(ModelKind::Renewal, &rate, None, init, 50.0, &opts).unwrap();
        for s in &traj.samples {
            assert!(
                (s.mass - 1.0).abs() <= 1e-12,
                "mass {} at t = {}",
                s.mass,
                s.t
            );
        }
        assert!(traj.min_cell >= 0.0);
    }
}
