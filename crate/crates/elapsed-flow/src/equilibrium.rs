//! Stationary states and the certified ergodicity constants.
//!
//! The constants follow one chain: a frozen-rate evolution started
//! anywhere deposits, within the window `t0 = 2·s_star`, at least mass
//! `alpha` in a fixed region near zero (Doeblin minorization), so the
//! window contracts signed differences in TV by `1 − alpha`, giving the
//! linear relaxation rate `lambda_lin = −ln(1 − alpha)/t0`. Activity
//! feedback perturbs the linear flow by at most `c_tilde = 2·p_max·L/(1−L)`
//! per unit of TV distance, so the nonlinear flow still relaxes at
//! `lambda_nl = lambda_lin − c_tilde` whenever `L` stays under the
//! model's threshold.
//!
//! Stationary states come from two constructions: the renewal model's
//! profile is explicit once its activity is known (survival products along
//! the age axis), so only a scalar fixed point remains; the fatigue
//! model's frozen profile is reached by evolving to stationarity (the TV
//! contraction guarantees geometric convergence), with an outer scalar
//! iteration on top for the nonlinear state.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::measure::{Grid, GridMeasure};
use crate::rate::RateModel;
use crate::semigroup::{
    solve_activity, step_frozen_in_place, step_once, FrozenRate, ModelKind, SimState,
};

/// A computed stationary state together with its quality metrics.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    /// The stationary measure, normalized to unit mass.
    pub n_star: GridMeasure,
    /// Its activity (self-consistent for nonlinear states, the frozen
    /// firing integral for frozen ones).
    pub activity: f64,
    /// Measured defect: the TV change produced by one further step (one
    /// further window for frozen fatigue states).
    pub residual: f64,
    /// Outer iterations (scalar fixed point) or windows (frozen evolution)
    /// spent.
    pub iterations: usize,
}

/// Every constant of the quantitative ergodicity chain, as certified for
/// one model/rate/kernel combination.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TheoryConstants {
    /// Minorization window length `2·s_star`.
    pub t0: f64,
    /// Density floor `p_min·e^{−2·p_max·s_star}` entering the minorization.
    pub beta: f64,
    /// Doeblin mass: `s_star·beta` (renewal) or
    /// `eps·delta·(s_star − delta)·beta` (fatigue).
    pub alpha: f64,
    /// TV contraction factor per window: `1 − alpha`.
    pub tv_contraction: f64,
    /// Prefactor of the exponential decay estimate: `1/(1 − alpha)`.
    pub c_prefactor: f64,
    /// Linear relaxation rate `−ln(1 − alpha)/t0`.
    pub lambda_lin: f64,
    /// Feedback perturbation gain `2·p_max·L/(1 − L)`.
    pub c_tilde: f64,
    /// Certified nonlinear relaxation rate `lambda_lin − c_tilde`.
    pub lambda_nl: f64,
    /// Largest Lipschitz constant for which this chain stays conclusive;
    /// `lambda_nl > 0` is equivalent to `L < l_threshold` (second
    /// component).
    pub l_threshold: f64,
}

/// Density floor and Doeblin mass from the raw constants. The fatigue
/// variant takes the kernel floor `(eps, delta)`.
pub(crate) fn doeblin_alpha_from(
    p_min: f64,
    p_max: f64,
    s_star: f64,
    kernel_floor: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    let beta = p_min * (-2.0 * p_max * s_star).exp();
    let alpha = match kernel_floor {
        None => s_star * beta,
        Some((eps, delta)) => {
            if !(delta > 0.0 && delta < s_star) {
                return Err(Error::Config(format!(
                    "kernel floor width delta = {delta} must lie strictly inside (0, s_star = {s_star})"
                )));
            }
            if !(eps > 0.0) {
                return Err(Error::Config(format!(
                    "kernel density floor eps = {eps} must be positive"
                )));
            }
            eps * delta * (s_star - delta) * beta
        }
    };
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Numerical(format!(
            "Doeblin mass alpha = {alpha} fell outside (0, 1)"
        )));
    }
    Ok((beta, alpha))
}

/// Lipschitz threshold under which the nonlinear renewal state exists, is
/// unique, and the scalar fixed-point construction converges.
pub fn stationary_threshold_renewal(rate: &RateModel) -> f64 {
    let (p_min, p_max, s) = (rate.p_min, rate.p_max, rate.s_star);
    1.0 / (p_max * p_max * (0.5 * s * s + s / p_min + 1.0 / (p_min * p_min)))
}

/// Lipschitz threshold under which the fatigue model's outer activity
/// iteration is a contraction.
pub fn stationary_threshold_fatigue(rate: &RateModel, alpha: f64) -> f64 {
    let growth = (4.0 * rate.p_max * rate.s_star).exp();
    1.0 / (1.0 + growth * rate.p_max / (alpha * rate.p_min))
}

/// Largest `L` for which the relaxation chain stays conclusive for the
/// given model (the minimum of the model's structural component and the
/// positivity requirement `lambda_lin > c_tilde`).
fn relaxation_threshold(model: ModelKind, rate: &RateModel, alpha: f64) -> f64 {
    let log_term = (1.0 - alpha).ln(); // negative
    let component_rate = log_term / (log_term - 4.0 * rate.p_max * rate.s_star);
    let component_structural = match model {
        ModelKind::Renewal => {
            let sp = rate.s_star * rate.p_min;
            (rate.p_min * rate.p_min)
                / (rate.p_max * rate.p_max * (sp * (sp + 2.0) + 2.0))
        }
        ModelKind::Fatigue => stationary_threshold_fatigue(rate, alpha),
    };
    component_structural.min(component_rate)
}

/// Assemble the full constant chain for one model. The fatigue model needs
/// its kernel (the Doeblin mass depends on the kernel floor); passing one
/// for the renewal model is rejected, as is the reverse.
pub fn theory_constants(
    model: ModelKind,
    rate: &RateModel,
    kernel: Option<&KernelModel>,
) -> Result<TheoryConstants> {
    let floor = match (model, kernel) {
        (ModelKind::Renewal, None) => None,
        (ModelKind::Fatigue, Some(k)) => Some((k.eps, k.delta)),
        (ModelKind::Fatigue, None) => {
            return Err(Error::Config(
                "the fatigue model's constants depend on its kernel; none was given".to_string(),
            ))
        }
        (ModelKind::Renewal, Some(_)) => {
            return Err(Error::Config(
                "the renewal model has no reinjection kernel; drop it".to_string(),
            ))
        }
    };
    let (beta, alpha) = doeblin_alpha_from(rate.p_min, rate.p_max, rate.s_star, floor)?;
    let t0 = 2.0 * rate.s_star;
    let lambda_lin = -(1.0 - alpha).ln() / t0;
    // The perturbation gain diverges as L → 1; past that point the
    // geometric feedback series no longer converges at all, so the gain is
    // reported as infinite (and lambda_nl as -inf) rather than letting the
    // formula flip sign.
    let c_tilde = if rate.l < 1.0 {
        2.0 * rate.p_max * rate.l / (1.0 - rate.l)
    } else {
        f64::INFINITY
    };
    Ok(TheoryConstants {
        t0,
        beta,
        alpha,
        tv_contraction: 1.0 - alpha,
        c_prefactor: 1.0 / (1.0 - alpha),
        lambda_lin,
        c_tilde,
        lambda_nl: lambda_lin - c_tilde,
        l_threshold: relaxation_threshold(model, rate, alpha),
    })
}

/// Stationary profile of a frozen rate with unit boundary inflow: cell
/// masses are running survival products, and the tail is the geometric
/// series closing the balance. This is an exact fixed point of the frozen
/// renewal step (up to rounding), by construction.
fn renewal_profile(frozen: &FrozenRate) -> GridMeasure {
    let grid = *frozen.grid();
    let n = grid.n_cells();
    let mut masses = vec![0.0; n];
    let mut cur = 1.0;
    for i in 0..n {
        masses[i] = cur;
        cur *= frozen.survival[i];
    }
    // cur now holds the mass crossing into the tail each step; the tail
    // balances when tail·(1 − survival_tail) equals that inflow.
    let tail = cur / (1.0 - frozen.survival_tail);
    GridMeasure::from_raw(grid, masses, tail)
}

fn format_threshold_violation(l: f64, threshold: f64, what: &str) -> Error {
    Error::Threshold(format!(
        "activity feedback too strong for {what}: L = {l:.6e} must stay below {threshold:.6e}"
    ))
}

/// Compute the renewal model's stationary state: the explicit frozen
/// profile closed by a scalar fixed point on the activity.
///
/// Requires `L < stationary_threshold_renewal(rate)`; the returned
/// state has unit mass and a one-step TV residual at most `tol`.
pub fn stationary_renewal(rate: &RateModel, grid: Grid, tol: f64) -> Result<Equilibrium> {
    let threshold = stationary_threshold_renewal(rate);
    if !(rate.l < threshold) {
        return Err(format_threshold_violation(
            rate.l,
            threshold,
            "a unique renewal stationary state",
        ));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Config(format!(
            "equilibrium tolerance must be positive, got {tol}"
        )));
    }

    let outer_tol = (0.25 * tol).max(1e-14);
    let mut n_act = 0.5 * rate.p_max;
    let mut iterations = 0usize;
    let mut profile;
    loop {
        iterations += 1;
        let frozen = FrozenRate::new(rate, grid, n_act);
        profile = renewal_profile(&frozen).normalized()?;
        let next = frozen.firing_of(&profile);
        let gap = (next - n_act).abs();
        if rate.l == 0.0 || gap <= outer_tol {
            n_act = if rate.l == 0.0 { next } else { n_act };
            break;
        }
        n_act = next;
        if iterations >= 10_000 {
            return Err(Error::Numerical(format!(
                "stationary activity iteration stalled at gap {gap:.3e} after {iterations} rounds"
            )));
        }
    }
    // For feedback-free rates the profile never depended on the activity;
    // re-anchor the profile's firing integral as the exact activity.
    if rate.l == 0.0 {
        let frozen = FrozenRate::new(rate, grid, n_act);
        profile = renewal_profile(&frozen).normalized()?;
        n_act = frozen.firing_of(&profile);
    }

    finish_equilibrium(ModelKind::Renewal, rate, None, profile, n_act, tol, iterations)
}

/// Shared closing step: audit mass, measure the genuine one-step defect of
/// the nonlinear dynamics, and package the state.
fn finish_equilibrium(
    model: ModelKind,
    rate: &RateModel,
    kernel: Option<&KernelModel>,
    n_star: GridMeasure,
    activity_hint: f64,
    tol: f64,
    iterations: usize,
) -> Result<Equilibrium> {
    let mass = n_star.mass();
    if (mass - 1.0).abs() > 1e-10 {
        return Err(Error::Numerical(format!(
            "stationary profile failed to normalize: mass = {mass}"
        )));
    }
    // Self-consistent activity of the finished profile.
    let solve = solve_activity(rate, &n_star, 1e-13)?;
    let activity = solve.activity;
    if (activity - activity_hint).abs() > 1e-6 * (1.0 + activity.abs()) {
        return Err(Error::Numerical(format!(
            "stationary activity is inconsistent: outer iteration gave {activity_hint}, the profile solves to {activity}"
        )));
    }
    let state = SimState {
        t: 0.0,
        n: n_star,
        activity,
    };
    let after = step_once(model, rate, kernel, &state, 1e-13)?;
    let residual = after.n.tv_distance(&state.n)?;
    if !(residual <= tol) {
        return Err(Error::Numerical(format!(
            "stationary state's one-step residual {residual:.3e} exceeds the requested tolerance {tol:.1e}"
        )));
    }
    Ok(Equilibrium {
        n_star: state.n,
        activity,
        residual,
        iterations,
    })
}

/// Stationary state of the **frozen** fatigue dynamics: evolve a start
/// measure window by window (`t0 = 2·s_star` per window) until the TV
/// change across one window drops below the geometric-series margin that
/// guarantees the remaining distance to the true fixed point is below
/// `tol`.
pub fn stationary_frozen_fatigue(
    frozen: &FrozenRate,
    kernel: &KernelModel,
    tol: f64,
    start: Option<&GridMeasure>,
) -> Result<Equilibrium> {
    let grid = *frozen.grid();
    if kernel.grid() != &grid {
        return Err(Error::Config(
            "kernel grid does not match the frozen rate's grid".to_string(),
        ));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Config(format!(
            "equilibrium tolerance must be positive, got {tol}"
        )));
    }
    if grid.s_max() < 2.0 * frozen.s_star {
        return Err(Error::Config(format!(
            "the grid must cover one full window: s_max = {} < 2·s_star = {}",
            grid.s_max(),
            2.0 * frozen.s_star
        )));
    }
    let (_, alpha) = doeblin_alpha_from(
        frozen.p_min,
        frozen.p_max,
        frozen.s_star,
        Some((kernel.eps, kernel.delta)),
    )?;

    let mut cur = match start {
        Some(m) => {
            if m.grid() != &grid {
                return Err(Error::Config(
                    "start measure grid does not match the frozen rate's grid".to_string(),
                ));
            }
            m.normalized()?
        }
        None => GridMeasure::dirac(grid, 0.0)?,
    };

    let window_steps = grid.steps_for(2.0 * frozen.s_star);
    // If consecutive window iterates differ by d, the fixed point is at
    // most d·(1 − alpha)/alpha away (geometric tail of the contraction).
    let window_tol = tol * alpha / (1.0 - alpha);
    let max_windows = 2_000_000usize / window_steps.max(1) + 1_000;

    let mut fired = Vec::new();
    let mut windows = 0usize;
    let mut change;
    loop {
        let prev = cur.clone();
        for _ in 0..window_steps {
            step_frozen_in_place(frozen, ModelKind::Fatigue, Some(kernel), &mut cur, &mut fired);
        }
        windows += 1;
        change = cur.tv_distance(&prev)?;
        if change <= window_tol {
            break;
        }
        if windows >= max_windows {
            return Err(Error::Numerical(format!(
                "frozen fatigue evolution did not settle: window change {change:.3e} after {windows} windows (target {window_tol:.3e})"
            )));
        }
    }

    let n_star = cur.normalized()?;
    let mass = n_star.mass();
    if (mass - 1.0).abs() > 1e-10 {
        return Err(Error::Numerical(format!(
            "frozen stationary profile failed to normalize: mass = {mass}"
        )));
    }
    let activity = frozen.firing_of(&n_star);
    Ok(Equilibrium {
        n_star,
        activity,
        residual: change,
        iterations: windows,
    })
}

/// Stationary state of the nonlinear fatigue model: an outer scalar
/// iteration on the activity, each round freezing the rate and evolving
/// the frozen dynamics to stationarity (warm-started from the previous
/// round's profile).
///
/// Requires `L < stationary_threshold_fatigue` — the feedback must be weak
/// against the frozen dynamics' mixing for the outer loop to contract.
pub fn stationary_fatigue(
    rate: &RateModel,
    kernel: &KernelModel,
    tol: f64,
) -> Result<Equilibrium> {
    let grid = *kernel.grid();
    let (_, alpha) = doeblin_alpha_from(
        rate.p_min,
        rate.p_max,
        rate.s_star,
        Some((kernel.eps, kernel.delta)),
    )?;
    let threshold = stationary_threshold_fatigue(rate, alpha);
    if !(rate.l < threshold) {
        return Err(format_threshold_violation(
            rate.l,
            threshold,
            "the fatigue model's stationary construction",
        ));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Config(format!(
            "equilibrium tolerance must be positive, got {tol}"
        )));
    }

    let inner_tol = 0.25 * tol;
    let outer_tol = (0.25 * tol).max(1e-14);
    let mut n_act = 0.5 * rate.p_max;
    let mut warm: Option<GridMeasure> = None;
    let mut iterations = 0usize;
    let (profile, activity) = loop {
        iterations += 1;
        let frozen = FrozenRate::new(rate, grid, n_act);
        let inner = stationary_frozen_fatigue(&frozen, kernel, inner_tol, warm.as_ref())?;
        let next = inner.activity;
        let gap = (next - n_act).abs();
        if rate.l == 0.0 || gap <= outer_tol {
            break (inner.n_star, next);
        }
        warm = Some(inner.n_star);
        n_act = next;
        if iterations >= 10_000 {
            return Err(Error::Numerical(format!(
                "fatigue stationary iteration stalled at activity gap {gap:.3e} after {iterations} rounds"
            )));
        }
    };

    finish_equilibrium(
        ModelKind::Fatigue,
        rate,
        Some(kernel),
        profile,
        activity,
        tol,
        iterations,
    )
}

/// Exact per-cell masses of the unit-rate stationary profile `e^{−s}`:
/// the cell `[a, b)` holds `e^{−a} − e^{−b}` and the tail holds
/// `e^{−s_max}`. Used as an independent reference in tests and examples.
pub fn exponential_cell_profile(grid: Grid) -> GridMeasure {
    let n = grid.n_cells();
    let ds = grid.ds();
    let mut masses = vec![0.0; n];
    let factor = 1.0 - (-ds).exp();
    for (i, m) in masses.iter_mut().enumerate() {
        *m = (-(i as f64) * ds).exp() * factor;
    }
    GridMeasure::from_raw(grid, masses, (-grid.s_max()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::{simulate, SimOptions};
    use approx::assert_relative_eq;

    fn grid(s_max: f64, n: usize) -> Grid {
        Grid::new(s_max, n).unwrap()
    }

    fn unit_rate() -> RateModel {
        RateModel::constant(1.0, 1.0).unwrap()
    }

    /// The rate family used throughout the certified examples:
    /// `p_min = 1`, `p_max = 1.1`, `s_star = 1`, ramp width `0.25`.
    fn certified_rate(j: f64) -> RateModel {
        RateModel::smoothed_step(1.0, 1.1, 1.0, j, 0.25).unwrap()
    }

    #[test]
    fn unit_rate_constants_match_their_closed_forms() {
        let c = theory_constants(ModelKind::Renewal, &unit_rate(), None).unwrap();
        assert_eq!(c.t0, 2.0);
        assert_relative_eq!(c.beta, 0.13533528323661269, max_relative = 1e-15);
        assert_relative_eq!(c.alpha, 0.13533528323661269, max_relative = 1e-15);
        assert_relative_eq!(c.c_prefactor, 1.1565176427496657, max_relative = 1e-15);
        assert_relative_eq!(c.lambda_lin, 0.072706728934429528, max_relative = 1e-15);
        assert_eq!(c.c_tilde, 0.0);
        assert_eq!(c.lambda_lin, c.lambda_nl);
    }

    #[test]
    fn certified_family_constants_match_their_closed_forms() {
        let c = theory_constants(ModelKind::Renewal, &certified_rate(0.2), None).unwrap();
        assert_relative_eq!(c.beta, 0.11080315836233388, max_relative = 1e-15);
        assert_relative_eq!(c.alpha, 0.11080315836233388, max_relative = 1e-15);
        assert_relative_eq!(c.lambda_lin, 0.058718324406429580, max_relative = 1e-15);
        assert_relative_eq!(c.c_tilde, 0.044897959183673469, max_relative = 1e-15);
        assert_relative_eq!(c.lambda_nl, 0.013820365222756111, max_relative = 1e-14);
        assert_relative_eq!(c.l_threshold, 0.025996302315323101, max_relative = 1e-14);
        // The rate's certified L sits below the threshold, so the chain is
        // conclusive and the certified rate is positive.
        assert!(certified_rate(0.2).l < c.l_threshold);
        assert!(c.lambda_nl > 0.0);
    }

    #[test]
    fn positive_certified_rate_iff_below_threshold() {
        // For this family the threshold's binding component is the rate
        // positivity condition, so lambda_nl > 0 exactly when
        // L < l_threshold. Probe both sides of the boundary.
        for j in [0.05, 0.2, 0.2599, 0.2601, 0.28, 0.5] {
            let rate = certified_rate(j);
            let c = theory_constants(ModelKind::Renewal, &rate, None).unwrap();
            assert_eq!(
                c.lambda_nl > 0.0,
                rate.l < c.l_threshold,
                "j = {j}, L = {}, lambda_nl = {}, threshold = {}",
                rate.l,
                c.lambda_nl,
                c.l_threshold
            );
        }
    }

    #[test]
    fn fatigue_alpha_carries_the_kernel_floor() {
        let (beta, alpha) =
            doeblin_alpha_from(1.0, 1.0, 1.0, Some((1.0, 0.25))).unwrap();
        assert_relative_eq!(beta, 0.13533528323661269, max_relative = 1e-15);
        assert_relative_eq!(alpha, 0.025375365606864880, max_relative = 1e-15);
        // A floor interval at least as wide as the refractory window is
        // structurally invalid.
        assert!(doeblin_alpha_from(1.0, 1.0, 1.0, Some((1.0, 1.0))).is_err());
    }

    #[test]
    fn fatigue_constants_require_the_kernel() {
        let err = theory_constants(ModelKind::Fatigue, &unit_rate(), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let g = grid(10.0, 2000);
        let k = KernelModel::truncated_uniform(g, 0.25).unwrap();
        let c = theory_constants(ModelKind::Fatigue, &unit_rate(), Some(&k)).unwrap();
        // eps·delta·(s_star − delta)·beta with eps = 4, delta = 0.245.
        assert_relative_eq!(
            c.alpha,
            4.0 * 0.245 * 0.755 * 0.13533528323661269,
            max_relative = 1e-14
        );
        // And a kernel on the renewal model is rejected.
        assert!(theory_constants(ModelKind::Renewal, &unit_rate(), Some(&k)).is_err());
    }

    #[test]
    fn renewal_stationary_threshold_matches_its_closed_form() {
        let thr = stationary_threshold_renewal(&certified_rate(0.2));
        assert_relative_eq!(thr, 0.33057851239669421, max_relative = 1e-15);
        // The relaxation chain's structural component is exactly half of
        // it for every parameter set in this family.
        let c = theory_constants(ModelKind::Renewal, &certified_rate(2.0), None).unwrap();
        let rate = certified_rate(2.0);
        let sp = rate.s_star * rate.p_min;
        let structural =
            rate.p_min * rate.p_min / (rate.p_max * rate.p_max * (sp * (sp + 2.0) + 2.0));
        assert_relative_eq!(structural, 0.5 * thr, max_relative = 1e-15);
        assert!(c.l_threshold <= structural);
    }

    #[test]
    fn unit_rate_stationary_state_is_the_exponential_profile() {
        let g = grid(6.0, 600);
        let eq = stationary_renewal(&unit_rate(), g, 1e-10).unwrap();
        assert_eq!(eq.iterations, 1);
        assert_relative_eq!(eq.activity, 1.0, max_relative = 1e-12);
        assert!((eq.n_star.mass() - 1.0).abs() < 1e-13);
        // The discrete profile reproduces the exact cell integrals of
        // e^{−s} to rounding accuracy — not merely to scheme accuracy.
        let exact = exponential_cell_profile(g);
        assert!(eq.n_star.tv_distance(&exact).unwrap() < 1e-12);
        assert!(eq.residual <= 1e-10);
    }

    #[test]
    fn stationary_profile_is_a_fixed_point_of_the_flow() {
        let g = grid(6.0, 600);
        let rate = certified_rate(0.2);
        let eq = stationary_renewal(&rate, g, 1e-10).unwrap();
        // Evolving the stationary state for a while must not move it.
        let traj = simulate(
            ModelKind::Renewal,
            &rate,
            None,
            eq.n_star.clone(),
            3.0,
            &SimOptions::default(),
        )
        .unwrap();
        let drift = traj.final_state.n.tv_distance(&eq.n_star).unwrap();
        assert!(
            drift <= 300.0 * 2.0 * eq.residual + 1e-11,
            "drifted by {drift:.3e} against residual {:.3e}",
            eq.residual
        );
        assert!((eq.activity - traj.final_state.activity).abs() < 1e-8);
    }

    #[test]
    fn smoothed_threshold_rate_halves_the_activity() {
        // A sharp ramp at s_star = 1 from ~0 to 1 makes neurons wait one
        // unit and then fire at unit rate: mean inter-spike interval 2,
        // stationary activity 1/2 (the continuum value with the ramp's
        // finite width is 0.50016218473768794 for w = 0.02 and
        // 0.50099410631325233 for w = 0.05).
        let g = grid(10.0, 2000);
        let narrow = RateModel::smoothed_step(1e-9, 1.0, 1.0, 0.0, 0.02).unwrap();
        let eq = stationary_renewal(&narrow, g, 1e-10).unwrap();
        // Tight: the discrete fixed point, cross-checked against an
        // independent implementation of the profile construction.
        assert!(
            (eq.activity - 0.50076267215568204).abs() < 1e-13,
            "activity {:.17}",
            eq.activity
        );
        // Loose: the continuum value, approached as the grid refines.
        assert!((eq.activity - 0.50016218473768794).abs() < 1e-3);

        let wider = RateModel::smoothed_step(1e-9, 1.0, 1.0, 0.0, 0.05).unwrap();
        let eq = stationary_renewal(&wider, g, 1e-10).unwrap();
        assert!(
            (eq.activity - 0.50155947447449201).abs() < 1e-13,
            "activity {:.17}",
            eq.activity
        );
        assert!((eq.activity - 0.50099410631325233).abs() < 2e-3);
    }

    #[test]
    fn renewal_threshold_violation_reports_both_sides() {
        let strong = certified_rate(7.0); // L = 0.7 > 0.3306
        let err = stationary_renewal(&strong, grid(6.0, 600), 1e-10).unwrap_err();
        match &err {
            Error::Threshold(msg) => {
                assert!(msg.contains("7.000000e-1"), "missing L: {msg}");
                assert!(msg.contains("3.305785e-1"), "missing threshold: {msg}");
            }
            other => panic!("expected a threshold error, got {other:?}"),
        }
    }

    #[test]
    fn frozen_fatigue_state_is_window_stationary_and_start_independent() {
        let g = grid(6.0, 600);
        let rate = unit_rate();
        let frozen = FrozenRate::new(&rate, g, 1.0);
        let kernel = KernelModel::truncated_uniform(g, 0.25).unwrap();
        let tol = 1e-8;
        let a = stationary_frozen_fatigue(&frozen, &kernel, tol, None).unwrap();
        assert!((a.n_star.mass() - 1.0).abs() < 1e-12);
        let other_start = GridMeasure::dirac(g, 5.5).unwrap();
        let b = stationary_frozen_fatigue(&frozen, &kernel, tol, Some(&other_start)).unwrap();
        // Both runs land within tol of the unique fixed point.
        assert!(
            a.n_star.tv_distance(&b.n_star).unwrap() <= 2.0 * tol,
            "starts disagree by {:.3e}",
            a.n_star.tv_distance(&b.n_star).unwrap()
        );
    }

    #[test]
    fn delta_kernel_fatigue_equilibrium_matches_renewal() {
        let g = grid(6.0, 600);
        let rate = certified_rate(0.005); // L = 5e-4, under both thresholds
        let renewal = stationary_renewal(&rate, g, 1e-10).unwrap();
        let delta = KernelModel::delta_at_zero(g);
        let fatigue = stationary_fatigue(&rate, &delta, 1e-8).unwrap();
        assert!(
            renewal
                .n_star
                .tv_distance(&fatigue.n_star)
                .unwrap()
                <= 1e-6,
            "profiles disagree by {:.3e}",
            renewal.n_star.tv_distance(&fatigue.n_star).unwrap()
        );
        assert!((renewal.activity - fatigue.activity).abs() <= 1e-6);
    }

    #[test]
    fn fatigue_equilibrium_with_uniform_kernel_converges() {
        let g = grid(6.0, 600);
        let kernel = KernelModel::truncated_uniform(g, 0.25).unwrap();
        let eq = stationary_fatigue(&unit_rate(), &kernel, 1e-8).unwrap();
        assert!((eq.n_star.mass() - 1.0).abs() < 1e-12);
        assert!(eq.residual <= 1e-8);
        assert!(eq.n_star.is_nonnegative());
        // Reinjection near zero must leave strictly positive mass in the
        // early cells at stationarity.
        assert!(eq.n_star.masses()[0] > 0.0);
    }

    #[test]
    fn fatigue_threshold_is_far_stricter_than_renewal() {
        let g = grid(6.0, 600);
        let kernel = KernelModel::truncated_uniform(g, 0.25).unwrap();
        let rate = certified_rate(0.2); // L = 0.02
        let err = stationary_fatigue(&rate, &kernel, 1e-8).unwrap_err();
        assert!(matches!(err, Error::Threshold(_)), "{err}");
    }

    #[test]
    fn exponential_cell_profile_is_an_exact_probability() {
        let g = grid(10.0, 1000);
        let p = exponential_cell_profile(g);
        assert!((p.mass() - 1.0).abs() < 1e-14);
    }
}
