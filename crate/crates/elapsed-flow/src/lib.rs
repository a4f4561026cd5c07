//! Conservative finite-volume solvers for two nonlinear structured
//! neuron-population models, plus numerical certification of their
//! ergodic behaviour.
//!
//! The state variable is a finite (signed) measure over an "elapsed time"
//! axis `s ∈ [0, ∞)` — the time since a neuron last discharged, or a more
//! general internal state. Neurons at state `s` fire at rate `p(N, s)`,
//! where `N(t)` is the instantaneous population activity, itself defined
//! self-consistently as the total firing flux. Two reinjection mechanisms
//! are supported:
//!
//! * **renewal**: a fired neuron resets to `s = 0` (boundary influx), and
//! * **fatigue**: a fired neuron at state `u` jumps to a post-discharge
//!   state drawn from a kernel `κ(·, u)` supported on `[0, u]`.
//!
//! The crate provides, in layers:
//!
//! * [`measure`] — measures on a truncated, uniformly discretized axis with
//!   exact-mass transport and total-variation arithmetic;
//! * [`rate`] / [`kernel`] — firing-rate and reinjection-kernel families
//!   with machine-checked certification of the structural assumptions
//!   (bounds, Lipschitz connectivity, column stochasticity, minorization);
//! * [`semigroup`] — mass-conservative time steppers for both models, their
//!   frozen-activity (linear) versions, and trajectory drivers;
//! * [`equilibrium`] — stationary-state solvers and the explicit constants
//!   of the quantitative convergence theory (Doeblin constant, spectral
//!   gap, perturbation bound, connectivity thresholds);
//! * [`analysis`] — certification experiments: Doeblin floor checks,
//!   windowed total-variation contraction sampling, and exponential
//!   relaxation-rate fits;
//! * [`config`] / [`commands`] — JSON-driven CLI plumbing for reproducible
//!   batch experiments.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod kernel;
pub mod measure;
pub mod rate;
pub mod semigroup;

pub use error::{Error, Result};
pub use kernel::KernelModel;
pub use measure::{Grid, GridMeasure};
pub use rate::RateModel;
pub use semigroup::{ModelKind, SimState};
