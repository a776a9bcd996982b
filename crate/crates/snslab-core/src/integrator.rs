//! Exponential-Euler time integration of the spectrally truncated dynamics
//! and its ensemble layer.
//!
//! One step of the scheme reads, per mode `k`,
//!
//! ```text
//!   u_{n+1,k} = e^(-nu lambda_k dt) u_{n,k}
//!             - dt psi_k D_k(u_n, t_n)
//!             + psi_k sigma_k sqrt(dt) xi_{n,k},
//! ```
//!
//! with `psi_k = sqrt((1 - e^(-2 nu lambda_k dt)) / (2 nu lambda_k dt))` and
//! `xi` independent standard normals. The linear flow is exact, the injected
//! noise carries the exact per-step stochastic-convolution variance
//! `sigma_k^2 (1 - e^(-2 nu lambda_k dt)) / (2 nu lambda_k)`, and the
//! nonlinear drift is evaluated at the left endpoint. Scaling the drift by
//! the same `psi_k` as the noise keeps the measure-change bookkeeping exact:
//! with the advection disabled the scheme samples the linear law without
//! time-discretization error, and under the reweighting of the projected
//! dynamics the distinguished coordinates follow that same exact linear
//! recursion.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::bilinear::{bilinear_self, cutoff_profile, domain_norm_sq};
use crate::error::CoreError;
use crate::girsanov::GirsanovAccumulator;
use crate::rng::{fill_standard_normal, substream, Purpose, SeedInfo};
use crate::spectral::{semigroup_apply, FourierState, SpectralBasis};
use crate::{covariance::CovarianceSpec, exec, Result};

/// Which dynamics the integrator follows.
#[derive(Debug, Clone, PartialEq)]
pub enum Variant {
    /// Full spectrally projected dynamics.
    Galerkin,
    /// Advection disabled: the exactly Gaussian linear dynamics.
    Linear,
    /// Advection multiplied by the smooth cutoff of `|Au|^2 / radius`.
    Truncated { radius: f64 },
    /// Advection on the distinguished modes switched off on the trailing
    /// window `(horizon - epsilon, horizon]`; optionally compensated by the
    /// heat-flow-propagated advection of the window-entry state.
    Split {
        f_modes: Vec<usize>,
        epsilon: f64,
        compensated: bool,
    },
    /// Advection on the distinguished modes removed for all times, leaving
    /// their block linear and decoupled.
    FDecoupled { f_modes: Vec<usize> },
}

impl Variant {
    /// Dynamics followed outside any splitting window (used for burn-in).
    pub fn base(&self) -> Variant {
        match self {
            Variant::Split { .. } | Variant::FDecoupled { .. } => Variant::Galerkin,
            other => other.clone(),
        }
    }

    pub fn f_modes(&self) -> Option<&[usize]> {
        match self {
            Variant::Split { f_modes, .. } | Variant::FDecoupled { f_modes } => Some(f_modes),
            _ => None,
        }
    }
}

/// Full description of one SDE: viscosity, noise and drift variant.
#[derive(Debug, Clone)]
pub struct DynamicsSpec {
    pub viscosity: f64,
    pub covariance: CovarianceSpec,
    pub variant: Variant,
}

impl DynamicsSpec {
    pub fn new(viscosity: f64, covariance: CovarianceSpec, variant: Variant) -> Result<Self> {
        if !(viscosity > 0.0) {
            return Err(CoreError::invalid(format!(
                "viscosity must be positive, got {viscosity}"
            )));
        }
        if let Variant::Truncated { radius } = &variant {
            if !(*radius > 0.0) {
                return Err(CoreError::invalid(format!(
                    "truncation radius must be positive, got {radius}"
                )));
            }
        }
        if let Some(f) = variant.f_modes() {
            let m = covariance.basis().len();
            if f.is_empty() || f.iter().any(|&k| k >= m) {
                return Err(CoreError::invalid(
                    "distinguished mode set must be nonempty and inside the basis",
                ));
            }
        }
        Ok(DynamicsSpec {
            viscosity,
            covariance,
            variant,
        })
    }

    pub fn basis(&self) -> &Arc<SpectralBasis> {
        self.covariance.basis()
    }

    pub fn with_variant(&self, variant: Variant) -> Result<Self> {
        DynamicsSpec::new(self.viscosity, self.covariance.clone(), variant)
    }
}

/// Supplies the per-step standard normal vector driving a trajectory.
/// Implementations must be deterministic given their own state so that a
/// trajectory can be replayed or perturbed increment-by-increment.
pub trait NoiseSource {
    fn fill_step(&mut self, out: &mut [f64]);
}

/// Fresh noise from a counter-based stream.
pub struct RngNoise {
    rng: ChaCha8Rng,
}

impl RngNoise {
    pub fn new(rng: ChaCha8Rng) -> Self {
        RngNoise { rng }
    }

    pub fn for_trajectory(master_seed: u64, trajectory: u64) -> Self {
        RngNoise {
            rng: substream(master_seed, trajectory, Purpose::Wiener),
        }
    }
}

impl NoiseSource for RngNoise {
    fn fill_step(&mut self, out: &mut [f64]) {
        fill_standard_normal(&mut self.rng, out);
    }
}

/// Replays a recorded table of per-step normals.
pub struct ReplayNoise<'a> {
    steps: &'a [Vec<f64>],
    cursor: usize,
}

impl<'a> ReplayNoise<'a> {
    pub fn new(steps: &'a [Vec<f64>]) -> Self {
        ReplayNoise { steps, cursor: 0 }
    }
}

impl NoiseSource for ReplayNoise<'_> {
    fn fill_step(&mut self, out: &mut [f64]) {
        out.copy_from_slice(&self.steps[self.cursor]);
        self.cursor += 1;
    }
}

/// Wraps a source and records everything it produced.
pub struct RecordingNoise<N: NoiseSource> {
    pub inner: N,
    pub recorded: Vec<Vec<f64>>,
}

impl<N: NoiseSource> RecordingNoise<N> {
    pub fn new(inner: N) -> Self {
        RecordingNoise {
            inner,
            recorded: Vec::new(),
        }
    }
}

impl<N: NoiseSource> NoiseSource for RecordingNoise<N> {
    fn fill_step(&mut self, out: &mut [f64]) {
        self.inner.fill_step(out);
        self.recorded.push(out.to_vec());
    }
}

/// Adds a deterministic bump to one mode's increment at one step: the
/// discrete version of a unit direction in path space, scaled by `amount`.
/// The bump is applied to the pre-coloring normal, so the Wiener increment
/// of the bumped mode gains `amount` (in units of the increment itself,
/// i.e. `amount / sqrt(dt)` on the standard normal).
pub struct BumpedNoise<N: NoiseSource> {
    pub inner: N,
    pub step: u64,
    pub mode: usize,
    /// Bump of the Wiener increment; divided by `sqrt(dt)` internally.
    pub amount_over_sqrt_dt: f64,
    cursor: u64,
}

impl<N: NoiseSource> BumpedNoise<N> {
    pub fn new(inner: N, step: u64, mode: usize, amount_over_sqrt_dt: f64) -> Self {
        BumpedNoise {
            inner,
            step,
            mode,
            amount_over_sqrt_dt,
            cursor: 0,
        }
    }
}

impl<N: NoiseSource> NoiseSource for BumpedNoise<N> {
    fn fill_step(&mut self, out: &mut [f64]) {
        self.inner.fill_step(out);
        if self.cursor == self.step {
            out[self.mode] += self.amount_over_sqrt_dt;
        }
        self.cursor += 1;
    }
}

/// Girsanov accumulation request attached to a trajectory run.
#[derive(Debug, Clone)]
pub struct GirsanovRequest {
    pub f_modes: Vec<usize>,
    /// Accumulate the inverse-density sign (for runs along the decoupled
    /// auxiliary dynamics).
    pub inverse: bool,
}

/// What a trajectory run should produce.
#[derive(Debug, Clone)]
pub struct RunRequest {
    pub horizon: f64,
    pub dt: f64,
    /// Snapshot times, each a grid point of the step size.
    pub snapshot_times: Vec<f64>,
    pub girsanov: Option<GirsanovRequest>,
    /// Track `|u|_H^2` and the running integral of `|u|_V^2` at snapshots.
    pub track_energy: bool,
}

impl RunRequest {
    pub fn new(horizon: f64, dt: f64, snapshot_times: Vec<f64>) -> Self {
        RunRequest {
            horizon,
            dt,
            snapshot_times,
            girsanov: None,
            track_energy: false,
        }
    }
}

/// Energy bookkeeping at a snapshot time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySample {
    pub h_norm_sq: f64,
    /// Trapezoidal accumulation of `|u|_V^2` over `[0, t]`.
    pub v_norm_sq_integral: f64,
}

/// Time-stamped output of one trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryOutput {
    pub seed_info: SeedInfo,
    pub times: Vec<f64>,
    pub states: Vec<FourierState>,
    /// Accumulator state at each snapshot time, when requested.
    pub girsanov_at: Vec<GirsanovAccumulator>,
    /// First grid time with `|Au|^2 >= radius` (truncated variant only).
    pub tau: Option<f64>,
    pub sup_h_norm_sq: f64,
    pub energy: Vec<EnergySample>,
    /// The splitting window length after rounding to the step grid.
    pub rounded_epsilon: Option<f64>,
}

fn grid_steps(horizon: f64, dt: f64) -> Result<u64> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(CoreError::invalid(format!(
            "horizon and dt must be positive, got horizon = {horizon}, dt = {dt}"
        )));
    }
    let n = (horizon / dt).round();
    if n < 1.0 {
        return Err(CoreError::invalid(format!(
            "horizon {horizon} is shorter than one step of {dt}"
        )));
    }
    if (n * dt - horizon).abs() > 1e-6 * dt {
        return Err(CoreError::invalid(format!(
            "horizon {horizon} is not an integer multiple of dt = {dt}"
        )));
    }
    Ok(n as u64)
}

fn snapshot_steps(times: &[f64], horizon: f64, dt: f64, n_steps: u64) -> Result<Vec<u64>> {
    let mut steps = Vec::with_capacity(times.len());
    let mut prev: i64 = -1;
    for &t in times {
        if !(0.0..=horizon + 1e-12).contains(&t) {
            return Err(CoreError::invalid(format!(
                "snapshot time {t} lies outside [0, {horizon}]"
            )));
        }
        let s = (t / dt).round();
        if (s * dt - t).abs() > 1e-6 * dt {
            return Err(CoreError::invalid(format!(
                "snapshot time {t} is not on the step grid of dt = {dt}"
            )));
        }
        let s = s as i64;
        if s <= prev {
            return Err(CoreError::invalid(
                "snapshot times must be strictly increasing",
            ));
        }
        prev = s;
        steps.push((s as u64).min(n_steps));
    }
    Ok(steps)
}

/// Precomputed per-mode step coefficients for a `(spec, dt)` pair.
pub struct Stepper {
    pub spec: DynamicsSpec,
    pub dt: f64,
    decay: Vec<f64>,
    psi: Vec<f64>,
    noise_scale: Vec<f64>,
    /// Step index at which the splitting window opens, if any.
    switch_step: Option<u64>,
    rounded_epsilon: Option<f64>,
    n_steps: u64,
}

/// `(1 - e^(-x)) / x`, stable near zero.
fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// The per-mode `(decay, psi)` coefficients of the scheme for a given step
/// size: exact linear flow and the noise/drift scaling.
pub fn exp_euler_coefficients(spec: &DynamicsSpec, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let nu = spec.viscosity;
    let mut decay = Vec::with_capacity(spec.basis().len());
    let mut psi = Vec::with_capacity(spec.basis().len());
    for l in spec.basis().eigenvalues() {
        decay.push((-nu * l * dt).exp());
        psi.push(phi1(2.0 * nu * l * dt).sqrt());
    }
    (decay, psi)
}

impl Stepper {
    pub fn new(spec: &DynamicsSpec, horizon: f64, dt: f64) -> Result<Self> {
        let n_steps = grid_steps(horizon, dt)?;
        let basis = spec.basis();
        let nu = spec.viscosity;
        let mut decay = Vec::with_capacity(basis.len());
        let mut psi = Vec::with_capacity(basis.len());
        let mut noise_scale = Vec::with_capacity(basis.len());
        for (l, v) in basis.eigenvalues().zip(spec.covariance.variances()) {
            let x = 2.0 * nu * l * dt;
            let p = phi1(x).sqrt();
            decay.push((-nu * l * dt).exp());
            psi.push(p);
            noise_scale.push(p * v.sqrt() * dt.sqrt());
        }
        let (switch_step, rounded_epsilon) = match &spec.variant {
            Variant::Split { epsilon, .. } => {
                if !(*epsilon > 0.0 && *epsilon < horizon) {
                    return Err(CoreError::invalid(format!(
                        "splitting window epsilon = {epsilon} must lie in (0, horizon = {horizon})"
                    )));
                }
                let m = (epsilon / dt).round().max(1.0) as u64;
                if m >= n_steps {
                    return Err(CoreError::invalid(format!(
                        "splitting window epsilon = {epsilon} rounds to the whole horizon"
                    )));
                }
                (Some(n_steps - m), Some(m as f64 * dt))
            }
            _ => (None, None),
        };
        Ok(Stepper {
            spec: spec.clone(),
            dt,
            decay,
            psi,
            noise_scale,
            switch_step,
            rounded_epsilon,
            n_steps,
        })
    }

    pub fn n_steps(&self) -> u64 {
        self.n_steps
    }

    pub fn rounded_epsilon(&self) -> Option<f64> {
        self.rounded_epsilon
    }

    pub fn switch_step(&self) -> Option<u64> {
        self.switch_step
    }

    /// Whether the splitting drift modification is active on the step that
    /// starts at index `step`.
    fn window_active(&self, step: u64) -> bool {
        match self.switch_step {
            Some(s) => step >= s,
            None => matches!(self.spec.variant, Variant::FDecoupled { .. }),
        }
    }

    /// Advection term of the variant before any window filtering: `B(u)` for
    /// the plain dynamics, `chi B(u)` for the truncated one, zero for the
    /// linear one.
    fn advection(&self, u: &FourierState) -> Result<FourierState> {
        match &self.spec.variant {
            Variant::Linear => Ok(FourierState::zeros(u.basis())),
            Variant::Truncated { radius } => {
                let s = domain_norm_sq(u);
                let chi = cutoff_profile(s / radius);
                if chi == 0.0 {
                    return Ok(FourierState::zeros(u.basis()));
                }
                let mut b = bilinear_self(u)?;
                if chi != 1.0 {
                    b.scale(chi);
                }
                Ok(b)
            }
            _ => bilinear_self(u),
        }
    }

    /// One in-place step from `u` at step index `step`, consuming the given
    /// standard normals. `advection` is the precomputed advection term at the
    /// current state, `compensator` the frozen-state forcing on the
    /// distinguished modes (compensated splitting only).
    fn advance(
        &self,
        u: &mut FourierState,
        advection: &FourierState,
        compensator: Option<&FourierState>,
        step: u64,
        xi: &[f64],
    ) -> Result<()> {
        let window = self.window_active(step);
        let f_modes = self.spec.variant.f_modes();
        let coeffs = u.coeffs_mut();
        let adv = advection.coeffs();
        for k in 0..coeffs.len() {
            let mut drift = adv[k];
            if window {
                if let Some(f) = f_modes {
                    if f.contains(&k) {
                        drift = 0.0;
                        if let Some(c) = compensator {
                            drift = c.coeffs()[k];
                        }
                    }
                }
            }
            coeffs[k] = self.decay[k] * coeffs[k] - self.dt * self.psi[k] * drift
                + self.noise_scale[k] * xi[k];
        }
        if !u.is_finite() {
            return Err(CoreError::Integration {
                t: (step + 1) as f64 * self.dt,
                reason: "state left the finite range (advection blow-up or step too large)"
                    .to_string(),
            });
        }
        Ok(())
    }
}

/// One exponential-Euler step of the dynamics, taking a colored increment
/// with per-mode variance `sigma_k^2 dt` (as produced by
/// [`CovarianceSpec::sample_increment`]). The stochastic-convolution scaling
/// is applied internally. Splitting variants need the trajectory runner,
/// which owns the window bookkeeping.
pub fn step(
    state: &FourierState,
    spec: &DynamicsSpec,
    _t: f64,
    dt: f64,
    increment: &FourierState,
) -> Result<FourierState> {
    if matches!(spec.variant, Variant::Split { .. }) {
        return Err(CoreError::invalid(
            "splitting variants carry a time window; integrate them with run_trajectory",
        ));
    }
    if !(dt > 0.0) {
        return Err(CoreError::invalid(format!("dt must be positive, got {dt}")));
    }
    let basis = spec.basis();
    let nu = spec.viscosity;
    let stepper = StepperLite {
        spec,
        dt,
        nu,
        basis,
    };
    stepper.advance(state, increment)
}

/// Minimal single-step evaluator behind the standalone [`step`] entry point.
struct StepperLite<'a> {
    spec: &'a DynamicsSpec,
    dt: f64,
    nu: f64,
    basis: &'a Arc<SpectralBasis>,
}

impl StepperLite<'_> {
    fn advance(&self, u: &FourierState, increment: &FourierState) -> Result<FourierState> {
        let adv = match &self.spec.variant {
            Variant::Linear => FourierState::zeros(self.basis),
            Variant::Truncated { radius } => {
                let s = domain_norm_sq(u);
                let chi = cutoff_profile(s / radius);
                let mut b = if chi == 0.0 {
                    FourierState::zeros(self.basis)
                } else {
                    bilinear_self(u)?
                };
                if chi != 1.0 && chi != 0.0 {
                    b.scale(chi);
                }
                b
            }
            Variant::FDecoupled { f_modes } => {
                let mut b = bilinear_self(u)?;
                for &k in f_modes {
                    b.coeffs_mut()[k] = 0.0;
                }
                b
            }
            _ => bilinear_self(u)?,
        };
        let mut out = u.clone();
        let coeffs = out.coeffs_mut();
        for ((k, l), inc) in self.basis.eigenvalues().enumerate().zip(increment.coeffs()) {
            let x = 2.0 * self.nu * l * self.dt;
            let psi = phi1(x).sqrt();
            let decay = (-self.nu * l * self.dt).exp();
            coeffs[k] = decay * coeffs[k] - self.dt * psi * adv.coeffs()[k] + psi * inc;
        }
        if !out.is_finite() {
            return Err(CoreError::Integration {
                t: self.dt,
                reason: "state left the finite range".to_string(),
            });
        }
        Ok(out)
    }
}

/// Integrates one trajectory, drawing noise from `noise`.
pub fn run_trajectory_with_noise(
    x: &FourierState,
    spec: &DynamicsSpec,
    req: &RunRequest,
    seed_info: SeedInfo,
    noise: &mut dyn NoiseSource,
) -> Result<TrajectoryOutput> {
    let stepper = Stepper::new(spec, req.horizon, req.dt)?;
    let snap_steps = snapshot_steps(&req.snapshot_times, req.horizon, req.dt, stepper.n_steps)?;
    if let Some(g) = &req.girsanov {
        for &k in &g.f_modes {
            if spec.covariance.variance(k) <= 0.0 {
                return Err(CoreError::ZeroVariance {
                    mode: k,
                    lambda: spec.basis().eigenvalue(k),
                });
            }
        }
    }

    let m = spec.basis().len();
    let mut u = x.clone();
    let mut xi = vec![0.0; m];
    let mut acc = GirsanovAccumulator::default();
    let sign = match &req.girsanov {
        Some(g) if g.inverse => -1.0,
        _ => 1.0,
    };
    let sqrt_dt = req.dt.sqrt();

    let radius = match &spec.variant {
        Variant::Truncated { radius } => Some(*radius),
        _ => None,
    };

    let mut out = TrajectoryOutput {
        seed_info,
        times: Vec::with_capacity(snap_steps.len()),
        states: Vec::with_capacity(snap_steps.len()),
        girsanov_at: Vec::new(),
        tau: None,
        sup_h_norm_sq: u.h_norm_sq(),
        energy: Vec::new(),
        rounded_epsilon: stepper.rounded_epsilon(),
    };

    let mut v_integral = 0.0;
    let mut prev_v_sq = v_norm_sq(&u);
    let mut snap_cursor = 0usize;
    let mut frozen: Option<FourierState> = None;

    // Snapshot bookkeeping for step index `n` (time n dt).
    macro_rules! take_snapshot {
        ($n:expr) => {
            if snap_cursor < snap_steps.len() && snap_steps[snap_cursor] == $n {
                snap_cursor += 1;
                out.times.push($n as f64 * req.dt);
                out.states.push(u.clone());
                if req.girsanov.is_some() {
                    out.girsanov_at.push(acc);
                }
                if req.track_energy {
                    out.energy.push(EnergySample {
                        h_norm_sq: u.h_norm_sq(),
                        v_norm_sq_integral: v_integral,
                    });
                }
            }
        };
    }

    if let Some(r) = radius {
        if domain_norm_sq(&u) >= r {
            out.tau = Some(0.0);
        }
    }
    take_snapshot!(0);

    for n in 0..stepper.n_steps {
        // Freeze the window-entry state for the compensated splitting drift.
        let compensator = match (&spec.variant, stepper.switch_step()) {
            (
                Variant::Split {
                    compensated: true,
                    f_modes,
                    ..
                },
                Some(sw),
            ) if n >= sw => {
                if n == sw {
                    frozen = Some(u.clone());
                }
                let decayed = semigroup_apply(
                    frozen.as_ref().expect("frozen state set at window entry"),
                    (n - sw) as f64 * req.dt,
                    spec.viscosity,
                )?;
                let mut comp = bilinear_self(&decayed)?;
                let keep = f_modes.clone();
                for (k, c) in comp.coeffs_mut().iter_mut().enumerate() {
                    if !keep.contains(&k) {
                        *c = 0.0;
                    }
                }
                Some(comp)
            }
            _ => None,
        };

        let adv = stepper.advection(&u)?;
        noise.fill_step(&mut xi);

        if let Some(g) = &req.girsanov {
            // Left-endpoint update with the same pre-coloring normals that
            // drive the state.
            let mut ds = 0.0;
            let mut dq = 0.0;
            for &k in &g.f_modes {
                let gk = adv.coeffs()[k] / spec.covariance.variance(k).sqrt();
                ds += gk * sqrt_dt * xi[k];
                dq += gk * gk * req.dt;
            }
            acc.stoch_integral += sign * ds;
            acc.quad_variation += dq;
        }

        stepper.advance(&mut u, &adv, compensator.as_ref(), n, &xi)?;

        let v_sq = v_norm_sq(&u);
        v_integral += 0.5 * req.dt * (prev_v_sq + v_sq);
        prev_v_sq = v_sq;
        out.sup_h_norm_sq = out.sup_h_norm_sq.max(u.h_norm_sq());

        if let (Some(r), None) = (radius, out.tau) {
            if domain_norm_sq(&u) >= r {
                out.tau = Some((n + 1) as f64 * req.dt);
            }
        }

        take_snapshot!(n + 1);
    }

    Ok(out)
}

fn v_norm_sq(u: &FourierState) -> f64 {
    u.coeffs()
        .iter()
        .zip(u.basis().modes())
        .map(|(c, m)| m.eigenvalue * c * c)
        .sum()
}

/// Integrates one trajectory with the stream derived from
/// `(master_seed, trajectory)`.
pub fn run_trajectory(
    x: &FourierState,
    spec: &DynamicsSpec,
    req: &RunRequest,
    master_seed: u64,
    trajectory: u64,
) -> Result<TrajectoryOutput> {
    let mut noise = RngNoise::for_trajectory(master_seed, trajectory);
    run_trajectory_with_noise(
        x,
        spec,
        req,
        SeedInfo {
            master_seed,
            trajectory,
        },
        &mut noise,
    )
}

/// Runs `n_traj` independent trajectories and maps each output through `f`.
/// Results come back in trajectory order, so reductions over them are
/// schedule-independent.
pub fn ensemble_map<R, F>(
    x: &FourierState,
    spec: &DynamicsSpec,
    req: &RunRequest,
    n_traj: u64,
    master_seed: u64,
    f: F,
) -> Vec<Result<R>>
where
    R: Send,
    F: Fn(TrajectoryOutput) -> R + Sync + Send,
{
    exec::map_indexed(n_traj as usize, |i| {
        run_trajectory(x, spec, req, master_seed, i as u64).map(&f)
    })
}

/// Sequential twin of [`ensemble_map`]; same outputs, one worker.
pub fn ensemble_map_sequential<R, F>(
    x: &FourierState,
    spec: &DynamicsSpec,
    req: &RunRequest,
    n_traj: u64,
    master_seed: u64,
    f: F,
) -> Vec<Result<R>>
where
    R: Send,
    F: Fn(TrajectoryOutput) -> R + Sync + Send,
{
    exec::map_indexed_sequential(n_traj as usize, |i| {
        run_trajectory(x, spec, req, master_seed, i as u64).map(&f)
    })
}

/// Collects whole trajectory records.
pub fn run_ensemble(
    x: &FourierState,
    spec: &DynamicsSpec,
    req: &RunRequest,
    n_traj: u64,
    master_seed: u64,
) -> Vec<Result<TrajectoryOutput>> {
    ensemble_map(x, spec, req, n_traj, master_seed, |t| t)
}

/// Stationary ensemble: each trajectory starts from rest, runs the variant's
/// base dynamics for `burn_in`, then follows the requested dynamics over the
/// recording window, all on one continuous noise stream.
pub fn stationary_ensemble_map<R, F>(
    spec: &DynamicsSpec,
    req: &RunRequest,
    burn_in: f64,
    n_traj: u64,
    master_seed: u64,
    f: F,
) -> Vec<Result<R>>
where
    R: Send,
    F: Fn(TrajectoryOutput) -> R + Sync + Send,
{
    exec::map_indexed(n_traj as usize, |i| {
        stationary_trajectory(spec, req, burn_in, master_seed, i as u64).map(&f)
    })
}

/// One burned-in trajectory (see [`stationary_ensemble_map`]).
pub fn stationary_trajectory(
    spec: &DynamicsSpec,
    req: &RunRequest,
    burn_in: f64,
    master_seed: u64,
    trajectory: u64,
) -> Result<TrajectoryOutput> {
    if !(burn_in > 0.0) {
        return Err(CoreError::invalid(format!(
            "burn-in must be positive, got {burn_in}"
        )));
    }
    let base = spec.with_variant(spec.variant.base())?;
    let burn_req = RunRequest::new(burn_in, req.dt, vec![burn_in]);
    let mut noise = RngNoise::for_trajectory(master_seed, trajectory);
    let seed_info = SeedInfo {
        master_seed,
        trajectory,
    };
    let x0 = FourierState::zeros(spec.basis());
    let burned = run_trajectory_with_noise(&x0, &base, &burn_req, seed_info, &mut noise)?;
    let x = burned
        .states
        .last()
        .expect("burn-in records its endpoint")
        .clone();
    run_trajectory_with_noise(&x, spec, req, seed_info, &mut noise)
}

/// Per-trajectory endpoint differences of the splitting construction.
///
/// For each window length the run integrates the plain dynamics once and
/// re-integrates only the trailing window with the distinguished-mode drift
/// removed (optionally compensated), replaying the recorded window noise, so
/// both paths share every increment bitwise. Returned value per trajectory
/// and window: `|pi_F(u(T) - u_eps(T))|_H`.
#[derive(Debug, Clone)]
pub struct SplittingSweep {
    /// Window lengths after rounding to the step grid.
    pub eps_rounded: Vec<f64>,
    /// `diffs[j][i]` = endpoint difference for window `j`, trajectory `i`.
    pub diffs: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn splitting_sweep(
    spec: &DynamicsSpec,
    f_modes: &[usize],
    eps_list: &[f64],
    compensated: bool,
    burn_in: Option<f64>,
    horizon: f64,
    dt: f64,
    n_traj: u64,
    master_seed: u64,
) -> Result<SplittingSweep> {
    let base = spec.with_variant(Variant::Galerkin)?;
    let n_steps = grid_steps(horizon, dt)?;
    let mut window_steps = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !(eps > 0.0 && eps < horizon) {
            return Err(CoreError::invalid(format!(
                "splitting window epsilon = {eps} must lie in (0, horizon = {horizon})"
            )));
        }
        let m = (eps / dt).round().max(1.0) as u64;
        if m >= n_steps {
            return Err(CoreError::invalid(format!(
                "splitting window epsilon = {eps} rounds to the whole horizon"
            )));
        }
        window_steps.push(m);
    }
    let m_max = *window_steps.iter().max().expect("nonempty window list");
    let basis = base.basis();
    let m_modes = basis.len();

    let per_traj: Vec<Result<Vec<f64>>> = exec::map_indexed(n_traj as usize, |i| {
        let mut noise = RngNoise::for_trajectory(master_seed, i as u64);
        // Optional burn-in toward the invariant regime, same stream.
        let mut u = FourierState::zeros(basis);
        if let Some(b) = burn_in {
            let burn_steps = grid_steps(b, dt)?;
            let stepper = Stepper::new(&base, b, dt)?;
            let mut xi = vec![0.0; m_modes];
            for n in 0..burn_steps {
                let adv = stepper.advection(&u)?;
                noise.fill_step(&mut xi);
                stepper.advance(&mut u, &adv, None, n, &xi)?;
            }
        }

        // Reference run, recording window-entry states and window noise.
        let stepper = Stepper::new(&base, horizon, dt)?;
        let mut xi = vec![0.0; m_modes];
        let mut entry_states: Vec<Option<FourierState>> = vec![None; eps_list.len()];
        let mut window_noise: Vec<Vec<f64>> = Vec::with_capacity(m_max as usize);
        let mut uref = u.clone();
        for n in 0..n_steps {
            for (j, &w) in window_steps.iter().enumerate() {
                if n == n_steps - w {
                    entry_states[j] = Some(uref.clone());
                }
            }
            let adv = stepper.advection(&uref)?;
            noise.fill_step(&mut xi);
            if n >= n_steps - m_max {
                window_noise.push(xi.clone());
            }
            stepper.advance(&mut uref, &adv, None, n, &xi)?;
        }

        // Re-run each trailing window with the modified drift on the same
        // increments.
        let mut diffs = Vec::with_capacity(eps_list.len());
        for (j, &w) in window_steps.iter().enumerate() {
            let mut v = entry_states[j].take().expect("entry state recorded");
            let frozen = v.clone();
            for r in 0..w {
                let n = n_steps - w + r;
                let adv = stepper.advection(&v)?;
                let comp = if compensated {
                    let decayed = semigroup_apply(&frozen, r as f64 * dt, base.viscosity)?;
                    Some(bilinear_self(&decayed)?)
                } else {
                    None
                };
                let xi_n = &window_noise[(n - (n_steps - m_max)) as usize];
                // Window drift: distinguished modes dropped, optionally
                // replaced by the propagated frozen-state advection.
                let coeffs = v.coeffs_mut();
                for k in 0..m_modes {
                    let mut drift = adv.coeffs()[k];
                    if f_modes.contains(&k) {
                        drift = comp.as_ref().map_or(0.0, |c| c.coeffs()[k]);
                    }
                    coeffs[k] = stepper.decay[k] * coeffs[k] - dt * stepper.psi[k] * drift
                        + stepper.noise_scale[k] * xi_n[k];
                }
                if !v.is_finite() {
                    return Err(CoreError::Integration {
                        t: (n + 1) as f64 * dt,
                        reason: "splitting window re-run left the finite range".to_string(),
                    });
                }
            }
            let mut d = 0.0;
            for &k in f_modes {
                let e = uref.coeffs()[k] - v.coeffs()[k];
                d += e * e;
            }
            diffs.push(d.sqrt());
        }
        Ok(diffs)
    });

    let mut diffs: Vec<Vec<f64>> = vec![Vec::with_capacity(n_traj as usize); eps_list.len()];
    for traj in per_traj {
        let traj = traj?;
        for (j, d) in traj.into_iter().enumerate() {
            diffs[j].push(d);
        }
    }
    Ok(SplittingSweep {
        eps_rounded: window_steps.iter().map(|&m| m as f64 * dt).collect(),
        diffs,
    })
}
