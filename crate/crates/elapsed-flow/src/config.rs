//! Run configuration: a strict JSON schema (unknown keys are rejected
//! everywhere) plus the builders that turn specs into domain objects.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::measure::{Grid, GridMeasure};
use crate::rate::RateModel;
use crate::semigroup::ModelKind;

/// Top-level run configuration, loaded from a JSON file. `Serialize` is
/// derived so manifests can echo the configuration they ran under.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `1` for the renewal model, `2` for the fatigue model.
    pub model: u8,
    pub grid: GridSpec,
    pub rate: RateSpec,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    /// Initial datum (defaults to a unit point mass at zero).
    #[serde(default)]
    pub init: Option<InitSpec>,
    /// Optional reference measure; trajectory rows then carry the TV
    /// distance to it.
    #[serde(default)]
    pub reference: Option<InitSpec>,
    /// Simulated time; required by `simulate`.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Default output directory (the `--out` flag overrides it).
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub certify: Option<CertifySpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub s_max: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_activity_tol")]
    pub activity: f64,
    #[serde(default = "default_equilibrium_tol")]
    pub equilibrium: f64,
}

fn default_activity_tol() -> f64 {
    1e-12
}

fn default_equilibrium_tol() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            activity: default_activity_tol(),
            equilibrium: default_equilibrium_tol(),
        }
    }
}

/// Rate families expressible in configuration.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSpec {
    /// `p ≡ p0`.
    Constant { p0: f64, s_star: f64 },
    /// Logistic ramp in `s` shifted by activity; see the rate module.
    SmoothedStep {
        p_min: f64,
        p_max: f64,
        s_star: f64,
        j: f64,
        w: f64,
    },
    /// `p = base + slope·min(N, n_cap)`.
    Affine {
        base: f64,
        slope: f64,
        n_cap: f64,
        s_star: f64,
    },
}

/// Reinjection kernel families expressible in configuration.
#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// Every firing restarts at elapsed time zero.
    Delta,
    /// Uniform reinjection over `[0, min(c, u)]`.
    TruncatedUniform { c: f64 },
}

/// Measure specifications for initial data and references.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// Unit point mass at `s0`.
    Dirac { s0: f64 },
    /// Named density, normalized to unit mass. `name` is one of
    /// `exponential` (field `rate`), `uniform` (fields `lo`, `hi`) or
    /// `gamma` (fields `shape`, `scale`).
    Density {
        name: String,
        #[serde(default)]
        rate: Option<f64>,
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
        #[serde(default)]
        shape: Option<f64>,
        #[serde(default)]
        scale: Option<f64>,
    },
    /// A measure saved by an earlier run (`s_lo,s_hi,mass` CSV). The grid
    /// must match the run's grid.
    Snapshot { path: String },
    /// The model's stationary state (useful as a reference).
    Equilibrium,
}

/// Certification settings.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySpec {
    #[serde(default = "default_doeblin_trials")]
    pub n_doeblin_trials: usize,
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
    /// Freeze the rate at this activity instead of the equilibrium's.
    #[serde(default)]
    pub freeze_activity: Option<f64>,
    #[serde(default)]
    pub relaxation: Option<RelaxSpec>,
    /// Debug-only: scale the minorization bound before the pass check, to
    /// exercise failure reporting. Leave at 1 for honest certification.
    #[serde(default = "default_bound_scale")]
    pub debug_bound_scale: f64,
}

fn default_doeblin_trials() -> usize {
    64
}

fn default_pairs() -> usize {
    100
}

fn default_bound_scale() -> f64 {
    1.0
}

impl Default for CertifySpec {
    fn default() -> Self {
        CertifySpec {
            n_doeblin_trials: default_doeblin_trials(),
            n_pairs: default_pairs(),
            freeze_activity: None,
            relaxation: None,
            debug_bound_scale: default_bound_scale(),
        }
    }
}

/// Relaxation-experiment settings inside `certify`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxSpec {
    pub horizon: f64,
    pub fit_lo: f64,
    pub fit_hi: f64,
    /// Initial data to relax from (defaults to a single point mass at 0).
    #[serde(default)]
    pub inits: Vec<InitSpec>,
    #[serde(default = "default_rate_margin")]
    pub rate_margin: f64,
    #[serde(default = "default_r2_min")]
    pub r2_min: f64,
    #[serde(default = "default_h_margin")]
    pub h_margin: f64,
}

fn default_rate_margin() -> f64 {
    0.98
}

fn default_r2_min() -> f64 {
    0.99
}

fn default_h_margin() -> f64 {
    1.05
}

/// Feedback-strength sweep settings. Exactly one of `l_values` /
/// `j_values` must be non-empty, and the base rate must be the
/// smoothed-step family (its `j` is what the sweep varies).
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub l_values: Vec<f64>,
    #[serde(default)]
    pub j_values: Vec<f64>,
    #[serde(default = "default_sweep_horizon")]
    pub horizon: f64,
    #[serde(default = "default_sweep_fit_lo")]
    pub fit_lo: f64,
    #[serde(default)]
    pub fit_hi: Option<f64>,
    #[serde(default)]
    pub inits: Vec<InitSpec>,
}

fn default_sweep_horizon() -> f64 {
    40.0
}

fn default_sweep_fit_lo() -> f64 {
    2.0
}

impl RunConfig {
    /// Load and schema-validate a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        match self.model_kind()? {
            ModelKind::Renewal => {
                if self.kernel.is_some() {
                    return Err(Error::Config(
                        "model 1 (renewal) takes no reinjection kernel".to_string(),
                    ));
                }
            }
            ModelKind::Fatigue => {
                if self.kernel.is_none() {
                    return Err(Error::Config(
                        "model 2 (fatigue) requires a reinjection kernel".to_string(),
                    ));
                }
            }
        }
        if self.sample_stride == 0 {
            return Err(Error::Config("sample_stride must be at least 1".to_string()));
        }
        if let Some(sweep) = &self.sweep {
            let have_l = !sweep.l_values.is_empty();
            let have_j = !sweep.j_values.is_empty();
            if have_l == have_j {
                return Err(Error::Config(
                    "sweep needs exactly one of l_values / j_values".to_string(),
                ));
            }
            if !matches!(self.rate, RateSpec::SmoothedStep { .. }) {
                return Err(Error::Config(
                    "sweeps vary the smoothed-step family's feedback; set rate.family = \"smoothed_step\"".to_string(),
                ));
            }
        }
        Ok(())
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        match self.model {
            1 => Ok(ModelKind::Renewal),
            2 => Ok(ModelKind::Fatigue),
            other => Err(Error::Config(format!(
                "model must be 1 (renewal) or 2 (fatigue), got {other}"
            ))),
        }
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.s_max, self.grid.n_cells)
    }

    pub fn build_rate(&self) -> Result<RateModel> {
        build_rate_from(&self.rate)
    }

    pub fn build_kernel(&self, grid: Grid) -> Result<Option<KernelModel>> {
        match &self.kernel {
            None => Ok(None),
            Some(KernelSpec::Delta) => Ok(Some(KernelModel::delta_at_zero(grid))),
            Some(KernelSpec::TruncatedUniform { c }) => {
                Ok(Some(KernelModel::truncated_uniform(grid, *c)?))
            }
        }
    }
}

pub fn build_rate_from(spec: &RateSpec) -> Result<RateModel> {
    match *spec {
        RateSpec::Constant { p0, s_star } => RateModel::constant(p0, s_star),
        RateSpec::SmoothedStep {
            p_min,
            p_max,
            s_star,
            j,
            w,
        } => RateModel::smoothed_step(p_min, p_max, s_star, j, w),
        RateSpec::Affine {
            base,
            slope,
            n_cap,
            s_star,
        } => RateModel::affine(base, slope, n_cap, s_star),
    }
}

/// Materialize an [`InitSpec`] on a grid. The `Equilibrium` variant must
/// be resolved by the caller (it needs the full model context); passing it
/// here is a configuration error.
pub fn build_measure(spec: &InitSpec, grid: Grid) -> Result<GridMeasure> {
    match spec {
        InitSpec::Dirac { s0 } => GridMeasure::dirac(grid, *s0),
        InitSpec::Density {
            name,
            rate,
            lo,
            hi,
            shape,
            scale,
        } => {
            let density: Box<dyn Fn(f64) -> f64> = match name.as_str() {
                "exponential" => {
                    let r = rate.unwrap_or(1.0);
                    if !(r.is_finite() && r > 0.0) {
                        return Err(Error::Config(format!(
                            "exponential density needs rate > 0, got {r}"
                        )));
                    }
                    Box::new(move |s| r * (-r * s).exp())
                }
                "uniform" => {
                    let lo = lo.unwrap_or(0.0);
                    let hi = hi.unwrap_or(grid.s_max());
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(Error::Config(format!(
                            "uniform density needs lo < hi, got [{lo}, {hi}]"
                        )));
                    }
                    Box::new(move |s| if s >= lo && s < hi { 1.0 } else { 0.0 })
                }
                "gamma" => {
                    let k = shape.unwrap_or(2.0);
                    let th = scale.unwrap_or(1.0);
                    if !(k.is_finite() && k >= 1.0 && th.is_finite() && th > 0.0) {
                        return Err(Error::Config(format!(
                            "gamma density needs shape ≥ 1 and scale > 0, got shape {k}, scale {th}"
                        )));
                    }
                    Box::new(move |s| s.powf(k - 1.0) * (-s / th).exp())
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown density '{other}' (use exponential, uniform or gamma)"
                    )))
                }
            };
            GridMeasure::from_density(grid, density)?.normalized()
        }
        InitSpec::Snapshot { path } => {
            let m = GridMeasure::read_csv(Path::new(path))?;
            if m.grid() != &grid {
                return Err(Error::Config(format!(
                    "snapshot {} lives on a {}-cell grid over [0, {}], but this run uses {} cells over [0, {}]",
                    path,
                    m.grid().n_cells(),
                    m.grid().s_max(),
                    grid.n_cells(),
                    grid.s_max()
                )));
            }
            Ok(m)
        }
        InitSpec::Equilibrium => Err(Error::Config(
            "the equilibrium measure is only available as a reference, not here".to_string(),
        )),
    }
}
