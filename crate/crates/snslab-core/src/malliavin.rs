//! Linearized-flow sensitivities along a frozen truncated trajectory and the
//! Gram matrix of noise-direction derivatives of a finite-dimensional
//! functional.
//!
//! For every noise direction `k` and start time `s`, the sensitivity
//! `eta_k(t, s)` solves the linear nonautonomous system obtained by
//! differentiating the truncated dynamics along the base path, with
//! `eta_k(s, s)` equal to the basis vector of mode `k`. The Gram matrix of a
//! functional `f` with gradient rows `Df_i` is
//!
//! ```text
//!   M_ij(t) = sum_k sigma_k^2 Int_0^t (Df_i eta_k(t,s)) (Df_j eta_k(t,s)) ds,
//! ```
//!
//! assembled by trapezoidal quadrature over a strided grid of start times.
//! Its spectrum quantifies the nondegeneracy of the projected law.

use nalgebra::DMatrix;

use crate::bilinear::{
    bilinear_self, bilinear_symmetrized, cutoff_profile, cutoff_profile_deriv, domain_norm_sq,
};
use crate::error::CoreError;
use crate::integrator::{
    exp_euler_coefficients, run_trajectory_with_noise, DynamicsSpec, NoiseSource, RunRequest,
    Variant,
};
use crate::rng::SeedInfo;
use crate::spectral::FourierState;
use crate::Result;

/// A frozen truncated trajectory with every grid state retained, plus the
/// per-step quantities entering the linearized drift.
pub struct BasePath {
    pub spec: DynamicsSpec,
    pub dt: f64,
    /// States at every grid time `0..=n_steps`.
    pub states: Vec<FourierState>,
    /// Cutoff value at each grid state.
    chi: Vec<f64>,
    /// `2 chi'(s/R)/R` at each grid state.
    chi_prime_term: Vec<f64>,
    /// Advection `B(u_n, u_n)`, stored only where the profile derivative is
    /// active.
    b_self: Vec<Option<FourierState>>,
    decay: Vec<f64>,
    psi: Vec<f64>,
}

impl BasePath {
    /// Integrates the truncated dynamics over `[0, horizon]` and freezes the
    /// full-resolution path.
    pub fn record(
        x: &FourierState,
        spec: &DynamicsSpec,
        horizon: f64,
        dt: f64,
        seed_info: SeedInfo,
        noise: &mut dyn NoiseSource,
    ) -> Result<BasePath> {
        let radius = match &spec.variant {
            Variant::Truncated { radius } => *radius,
            _ => {
                return Err(CoreError::invalid(
                    "sensitivity base paths follow the truncated dynamics",
                ))
            }
        };
        let n_steps = (horizon / dt).round() as usize;
        let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
        let req = RunRequest::new(horizon, dt, times);
        let out = run_trajectory_with_noise(x, spec, &req, seed_info, noise)?;
        let states = out.states;

        let mut chi = Vec::with_capacity(states.len());
        let mut chi_prime_term = Vec::with_capacity(states.len());
        let mut b_self = Vec::with_capacity(states.len());
        for u in &states {
            let s = domain_norm_sq(u) / radius;
            chi.push(cutoff_profile(s));
            let cpt = 2.0 * cutoff_profile_deriv(s) / radius;
            chi_prime_term.push(cpt);
            b_self.push(if cpt != 0.0 {
                Some(bilinear_self(u)?)
            } else {
                None
            });
        }
        let (decay, psi) = exp_euler_coefficients(spec, dt);
        Ok(BasePath {
            spec: spec.clone(),
            dt,
            states,
            chi,
            chi_prime_term,
            b_self,
            decay,
            psi,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Linearized drift of the truncated dynamics at grid index `n`, applied
    /// to `theta`.
    fn linearized_drift(&self, n: usize, theta: &FourierState) -> Result<FourierState> {
        let u = &self.states[n];
        let mut out = FourierState::zeros(u.basis());
        if self.chi[n] != 0.0 {
            let sym = bilinear_symmetrized(u, theta)?;
            out.axpy(self.chi[n], &sym);
        }
        if self.chi_prime_term[n] != 0.0 {
            let mut pairing = 0.0;
            for ((cu, ct), m) in u
                .coeffs()
                .iter()
                .zip(theta.coeffs())
                .zip(u.basis().modes())
            {
                pairing += m.eigenvalue * m.eigenvalue * cu * ct;
            }
            let b = self.b_self[n].as_ref().expect("cached where active");
            out.axpy(self.chi_prime_term[n] * pairing, b);
        }
        Ok(out)
    }

    /// Evolves the sensitivity started as the unit vector of mode `k` at grid
    /// index `s_idx` up to grid index `t_idx`, with the same exponential-Euler
    /// shape as the state integrator.
    pub fn evolve_sensitivity(
        &self,
        k: usize,
        s_idx: usize,
        t_idx: usize,
    ) -> Result<FourierState> {
        if t_idx < s_idx || t_idx >= self.states.len() {
            return Err(CoreError::invalid(format!(
                "sensitivity window [{s_idx}, {t_idx}] is not covered by the recorded path of {} steps",
                self.n_steps()
            )));
        }
        let basis = self.states[0].basis();
        if k >= basis.len() {
            return Err(CoreError::invalid(format!(
                "direction {k} is outside the basis"
            )));
        }
        let mut eta = FourierState::unit_mode(basis, k);
        self.evolve_state(&mut eta, s_idx, t_idx)?;
        Ok(eta)
    }

    /// Same evolution for an arbitrary start vector (the system is linear in
    /// its initial direction).
    pub fn evolve_state(
        &self,
        eta: &mut FourierState,
        s_idx: usize,
        t_idx: usize,
    ) -> Result<()> {
        for n in s_idx..t_idx {
            let drift = self.linearized_drift(n, eta)?;
            let coeffs = eta.coeffs_mut();
            for j in 0..coeffs.len() {
                coeffs[j] =
                    self.decay[j] * coeffs[j] - self.dt * self.psi[j] * drift.coeffs()[j];
            }
        }
        if !eta.is_finite() {
            return Err(CoreError::Integration {
                t: t_idx as f64 * self.dt,
                reason: "sensitivity evolution left the finite range".to_string(),
            });
        }
        Ok(())
    }
}

/// Gradient evaluator of a finite-dimensional functional of the endpoint.
pub trait Functional: Sync {
    fn dim(&self) -> usize;
    /// Writes `Df_i(endpoint) . direction` for each component `i`.
    fn grad_apply(&self, endpoint: &FourierState, direction: &FourierState, out: &mut [f64]);
    fn label(&self) -> String;
}

/// Coordinate projection onto a distinguished set of modes.
pub struct CoordinateProjection {
    pub modes: Vec<usize>,
}

impl Functional for CoordinateProjection {
    fn dim(&self) -> usize {
        self.modes.len()
    }

    fn grad_apply(&self, _endpoint: &FourierState, direction: &FourierState, out: &mut [f64]) {
        for (o, &k) in out.iter_mut().zip(&self.modes) {
            *o = direction.coeffs()[k];
        }
    }

    fn label(&self) -> String {
        format!("coordinate_projection{:?}", self.modes)
    }
}

/// Squared `H` norm of the endpoint; gradient `2 <endpoint, .>`.
pub struct SquaredHNorm;

impl Functional for SquaredHNorm {
    fn dim(&self) -> usize {
        1
    }

    fn grad_apply(&self, endpoint: &FourierState, direction: &FourierState, out: &mut [f64]) {
        out[0] = 2.0
            * endpoint
                .coeffs()
                .iter()
                .zip(direction.coeffs())
                .map(|(a, b)| a * b)
                .sum::<f64>();
    }

    fn label(&self) -> String {
        "squared_h_norm".to_string()
    }
}

/// Symmetric Gram matrix of noise-direction sensitivities.
#[derive(Debug, Clone)]
pub struct MalliavinMatrix {
    entries: DMatrix<f64>,
}

impl MalliavinMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = self.entries.clone().symmetric_eigen();
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn quadratic_form(&self, y: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                s += y[i] * self.entries[(i, j)] * y[j];
            }
        }
        s
    }
}

/// Start-time quadrature nodes: every `stride`-th grid index up to `t_idx`,
/// with `t_idx` itself always included.
pub fn start_time_nodes(t_idx: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut nodes: Vec<usize> = (0..=t_idx).step_by(stride).collect();
    if *nodes.last().expect("nonempty") != t_idx {
        nodes.push(t_idx);
    }
    nodes
}

/// Trapezoid weights (in time units) for ordered, possibly non-uniform grid
/// nodes.
pub fn trapezoid_weights(nodes: &[usize], dt: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    if n == 1 {
        return w;
    }
    for i in 0..n {
        let left = if i == 0 { nodes[0] } else { nodes[i - 1] };
        let right = if i == n - 1 { nodes[n - 1] } else { nodes[i + 1] };
        w[i] = 0.5 * (right - left) as f64 * dt;
    }
    w
}

/// Assembles the Gram matrix at grid time `t_idx` over noise directions
/// `directions`, with start times strided by `s_stride`.
pub fn assemble_matrix(
    base: &BasePath,
    t_idx: usize,
    directions: &[usize],
    s_stride: usize,
    f: &dyn Functional,
) -> Result<MalliavinMatrix> {
    if directions.is_empty() {
        return Err(CoreError::invalid(
            "direction set for the sensitivity matrix is empty",
        ));
    }
    if t_idx >= base.states.len() {
        return Err(CoreError::invalid(format!(
            "time index {t_idx} is outside the recorded path"
        )));
    }
    let d = f.dim();
    let endpoint = &base.states[t_idx];
    let nodes = start_time_nodes(t_idx, s_stride);
    let weights = trapezoid_weights(&nodes, base.dt);
    let mut m = DMatrix::<f64>::zeros(d, d);
    let mut grad = vec![0.0; d];
    for &k in directions {
        let sigma_sq = base.spec.covariance.variance(k);
        if sigma_sq == 0.0 {
            continue;
        }
        for (node, w) in nodes.iter().zip(&weights) {
            let eta = base.evolve_sensitivity(k, *node, t_idx)?;
            f.grad_apply(endpoint, &eta, &mut grad);
            for i in 0..d {
                for j in i..d {
                    let inc = sigma_sq * w * grad[i] * grad[j];
                    m[(i, j)] += inc;
                    if i != j {
                        m[(j, i)] += inc;
                    }
                }
            }
        }
    }
    Ok(MalliavinMatrix { entries: m })
}

/// Spectrum statistics over an ensemble of sensitivity matrices.
#[derive(Debug, Clone)]
pub struct NondegeneracyReport {
    pub n_matrices: usize,
    /// Smallest eigenvalues, ascending.
    pub min_eigenvalues: Vec<f64>,
    /// Fractions of matrices whose smallest eigenvalue falls below
    /// `threshold * trace`.
    pub fraction_below: Vec<(f64, f64)>,
    /// `(quantile, condition number)` points.
    pub condition_quantiles: Vec<(f64, f64)>,
}

impl NondegeneracyReport {
    pub fn positive_definite_fraction(&self, relative_threshold: f64) -> f64 {
        self.fraction_below
            .iter()
            .find(|(t, _)| *t == relative_threshold)
            .map(|(_, f)| 1.0 - f)
            .unwrap_or(f64::NAN)
    }
}

impl std::fmt::Display for NondegeneracyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "sensitivity-matrix nondegeneracy over {} paths", self.n_matrices)?;
        if !self.min_eigenvalues.is_empty() {
            let q = |p: f64| crate::stats::quantile_sorted(&self.min_eigenvalues, p);
            writeln!(
                f,
                "  smallest eigenvalue quantiles: min {:.3e}, median {:.3e}, max {:.3e}",
                q(0.0),
                q(0.5),
                q(1.0)
            )?;
        }
        for (t, frac) in &self.fraction_below {
            writeln!(
                f,
                "  fraction with min eigenvalue below {t:.1e} * trace: {frac:.4}"
            )?;
        }
        for (q, c) in &self.condition_quantiles {
            writeln!(f, "  condition number quantile {q:.2}: {c:.3e}")?;
        }
        Ok(())
    }
}

/// Summarizes smallest-eigenvalue and conditioning statistics. Thresholds
/// are relative to each matrix's trace.
pub fn nondegeneracy_report(
    matrices: &[MalliavinMatrix],
    relative_thresholds: &[f64],
) -> Result<NondegeneracyReport> {
    if matrices.is_empty() {
        return Err(CoreError::Degenerate(
            "nondegeneracy report over an empty ensemble".into(),
        ));
    }
    let mut mins = Vec::with_capacity(matrices.len());
    let mut conds = Vec::with_capacity(matrices.len());
    let mut below = vec![0usize; relative_thresholds.len()];
    for m in matrices {
        let eigs = m.eigenvalues();
        let min = eigs[0];
        let max = *eigs.last().expect("nonempty spectrum");
        mins.push(min);
        conds.push(if min > 0.0 { max / min } else { f64::INFINITY });
        for (c, t) in below.iter_mut().zip(relative_thresholds) {
            if min <= t * m.trace() {
                *c += 1;
            }
        }
    }
    mins.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    conds.sort_by(|a, b| a.partial_cmp(b).expect("ordered condition numbers"));
    let n = matrices.len() as f64;
    Ok(NondegeneracyReport {
        n_matrices: matrices.len(),
        fraction_below: relative_thresholds
            .iter()
            .zip(&below)
            .map(|(t, c)| (*t, *c as f64 / n))
            .collect(),
        condition_quantiles: [0.5, 0.9, 1.0]
            .iter()
            .map(|&q| (q, crate::stats::quantile_sorted(&conds, q)))
            .collect(),
        min_eigenvalues: mins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceSpec;
    use crate::integrator::RngNoise;
    use crate::spectral::{semigroup_apply, SpectralBasis};
    use approx::assert_abs_diff_eq;

    fn base_path(radius: f64, dt: f64, horizon: f64) -> BasePath {
        let basis = SpectralBasis::build(1).unwrap();
        let cov = CovarianceSpec::power_law(&basis, 3.0).unwrap();
        let spec = DynamicsSpec::new(1.0, cov, Variant::Truncated { radius }).unwrap();
        let x = FourierState::zeros(&basis);
        let mut noise = RngNoise::for_trajectory(21, 0);
        BasePath::record(
            &x,
            &spec,
            horizon,
            dt,
            SeedInfo {
                master_seed: 21,
                trajectory: 0,
            },
            &mut noise,
        )
        .unwrap()
    }

    #[test]
    fn sensitivity_starts_as_the_unit_direction() {
        let base = base_path(1e6, 1e-2, 0.5);
        let eta = base.evolve_sensitivity(3, 10, 10).unwrap();
        for (j, c) in eta.coeffs().iter().enumerate() {
            assert_eq!(*c, if j == 3 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn dead_profile_gives_pure_heat_flow() {
        // With a tiny radius the profile is identically zero along the path,
        // so the linearization is the heat semigroup, which the stepper
        // reproduces exactly.
        let base = base_path(1e-12, 1e-2, 0.5);
        // chi is 1 at the resting start (domain norm zero) but the advection
        // of the zero state vanishes; from the first noisy step on the
        // profile is dead.
        for n in 1..base.states.len() {
            assert_eq!(base.chi[n], 0.0);
        }
        let eta = base.evolve_sensitivity(2, 5, 45).unwrap();
        let basis = base.states[0].basis();
        let expected =
            semigroup_apply(&FourierState::unit_mode(basis, 2), 0.40, 1.0).unwrap();
        for (a, b) in eta.coeffs().iter().zip(expected.coeffs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn evolution_is_linear_in_the_initial_direction() {
        let base = base_path(1e6, 1e-2, 0.5);
        let basis = base.states[0].basis().clone();
        let mut combined = FourierState::unit_mode(&basis, 1);
        combined.axpy(1.0, &FourierState::unit_mode(&basis, 7));
        base.evolve_state(&mut combined, 0, 50).unwrap();
        let a = base.evolve_sensitivity(1, 0, 50).unwrap();
        let b = base.evolve_sensitivity(7, 0, 50).unwrap();
        for ((c, x), y) in combined.coeffs().iter().zip(a.coeffs()).zip(b.coeffs()) {
            assert_abs_diff_eq!(*c, x + y, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_regime_matrix_matches_closed_form() {
        // Disable the advection entirely (zero-radius profile) and take the
        // coordinate functional: the matrix is diagonal with entries
        // sigma^2 (1 - e^(-2 nu lambda t)) / (2 nu lambda).
        let base = base_path(1e-12, 1e-3, 1.0);
        let t_idx = base.n_steps();
        let f = CoordinateProjection { modes: vec![0, 5] };
        let all: Vec<usize> = (0..base.states[0].basis().len()).collect();
        // Stride 1: the trapezoid error (2 nu lambda dt)^2 / 12 ~ 3e-7 sits
        // inside the 1e-6 relative check.
        let m = assemble_matrix(&base, t_idx, &all, 1, &f).unwrap();
        for (i, &k) in f.modes.iter().enumerate() {
            let l = base.states[0].basis().eigenvalue(k);
            let sigma_sq = base.spec.covariance.variance(k);
            let expected = sigma_sq * (1.0 - (-2.0 * l).exp()) / (2.0 * l);
            let got = m.entry(i, i);
            assert!(
                (got - expected).abs() <= 1e-6 * expected,
                "entry {i}: {got} vs {expected}"
            );
        }
        assert!(m.entry(0, 1).abs() <= 1e-14);
    }

    #[test]
    fn zero_gradient_gives_zero_matrix() {
        struct Constant;
        impl Functional for Constant {
            fn dim(&self) -> usize {
                2
            }
            fn grad_apply(&self, _: &FourierState, _: &FourierState, out: &mut [f64]) {
                out.fill(0.0);
            }
            fn label(&self) -> String {
                "constant".into()
            }
        }
        let base = base_path(1e6, 1e-2, 0.2);
        let m = assemble_matrix(&base, base.n_steps(), &[0, 1, 2], 2, &Constant).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m.entry(i, j), 0.0);
            }
        }
    }

    #[test]
    fn enlarging_directions_never_decreases_eigenvalues() {
        let base = base_path(50.0, 1e-2, 0.5);
        let f = CoordinateProjection { modes: vec![0, 1] };
        let t = base.n_steps();
        let small = assemble_matrix(&base, t, &[0, 1, 2], 4, &f).unwrap();
        let large = assemble_matrix(&base, t, &(0..12).collect::<Vec<_>>(), 4, &f).unwrap();
        let es = small.eigenvalues();
        let el = large.eigenvalues();
        for (a, b) in es.iter().zip(&el) {
            assert!(b + 1e-12 >= *a, "eigenvalues shrank: {es:?} vs {el:?}");
        }
    }

    #[test]
    fn quadratic_form_matches_direct_quadrature() {
        let base = base_path(50.0, 1e-2, 0.4);
        let t_idx = base.n_steps();
        let f = CoordinateProjection { modes: vec![0, 3] };
        let dirs: Vec<usize> = (0..12).collect();
        let stride = 3;
        let m = assemble_matrix(&base, t_idx, &dirs, stride, &f).unwrap();

        let y = [0.37, -1.21];
        let direct = {
            let nodes = start_time_nodes(t_idx, stride);
            let weights = trapezoid_weights(&nodes, base.dt);
            let endpoint = &base.states[t_idx];
            let mut total = 0.0;
            let mut grad = [0.0; 2];
            for &k in &dirs {
                let sigma_sq = base.spec.covariance.variance(k);
                for (node, w) in nodes.iter().zip(&weights) {
                    let eta = base.evolve_sensitivity(k, *node, t_idx).unwrap();
                    f.grad_apply(endpoint, &eta, &mut grad);
                    let proj = y[0] * grad[0] + y[1] * grad[1];
                    total += sigma_sq * w * proj * proj;
                }
            }
            total
        };
        let via_matrix = m.quadratic_form(&y);
        assert!(direct >= 0.0);
        assert_abs_diff_eq!(via_matrix, direct, epsilon = 1e-12 * direct.abs().max(1e-12));
    }

    #[test]
    fn sensitivity_is_continuous_in_the_start_time() {
        let base = base_path(50.0, 1e-2, 0.5);
        let t = base.n_steps();
        let a = base.evolve_sensitivity(0, 20, t).unwrap();
        let mut b = base.evolve_sensitivity(0, 21, t).unwrap();
        b.axpy(-1.0, &a);
        // One-grid-step shift of the start time moves the result by O(dt).
        assert!(b.h_norm() <= 10.0 * base.dt, "jump {}", b.h_norm());
    }

    #[test]
    fn degenerate_noise_on_sensed_directions_flags_zero_matrix() {
        let basis = SpectralBasis::build(1).unwrap();
        let mut vars = vec![0.0; basis.len()];
        // Noise only on modes 6..12; sense only 0 and 1 in the linear regime.
        for v in vars.iter_mut().skip(6) {
            *v = 1.0;
        }
        let cov = CovarianceSpec::explicit(&basis, vars).unwrap();
        let spec = DynamicsSpec::new(1.0, cov, Variant::Truncated { radius: 1e-12 }).unwrap();
        let x = FourierState::zeros(&basis);
        let mut noise = RngNoise::for_trajectory(9, 0);
        let base = BasePath::record(
            &x,
            &spec,
            0.2,
            1e-2,
            SeedInfo {
                master_seed: 9,
                trajectory: 0,
            },
            &mut noise,
        )
        .unwrap();
        let f = CoordinateProjection { modes: vec![0, 1] };
        let m = assemble_matrix(&base, base.n_steps(), &[0, 1], 2, &f).unwrap();
        assert_eq!(m.trace(), 0.0);
        let report = nondegeneracy_report(&[m], &[1e-12]).unwrap();
        assert_eq!(report.fraction_below[0].1, 1.0); // flagged degenerate
    }

    #[test]
    fn report_rejects_empty_ensembles() {
        assert!(nondegeneracy_report(&[], &[1e-12]).is_err());
    }
}
