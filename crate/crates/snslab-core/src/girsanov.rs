//! Measure-change bookkeeping along trajectories and the exact Gaussian
//! reference law it is tested against.
//!
//! The exponential weight `G = exp(S - Q/2)` is accumulated in log parts:
//! `S` is the Ito integral of the whitened, projected advection against the
//! driving increments (left-endpoint rule, same increments as the state) and
//! `Q` its quadratic variation. The reference is the linear dynamics on the
//! distinguished modes, whose endpoint law is Gaussian with a closed-form
//! diagonal covariance; reweighted ensembles of the nonlinear dynamics are
//! compared against it by moments and by weighted CDF distances with Monte
//! Carlo calibrated critical values.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::covariance::CovarianceSpec;
use crate::error::CoreError;
use crate::spectral::FourierState;
use crate::stats::{
    effective_sample_size, ks_critical_mc, normal_cdf, weighted_cdf_sup_distance,
    weighted_mean_se,
};
use crate::{bilinear::bilinear_self, Result};

/// Running log-components of the exponential weight.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GirsanovAccumulator {
    /// Ito integral of the whitened projected advection against the driving
    /// increments (sign included for the inverse direction).
    pub stoch_integral: f64,
    /// Accumulated squared norm of the whitened projected advection.
    pub quad_variation: f64,
}

impl GirsanovAccumulator {
    pub fn log_weight(&self) -> f64 {
        self.stoch_integral - 0.5 * self.quad_variation
    }

    /// The exponential weight; positive and finite whenever both
    /// accumulators are finite.
    pub fn weight(&self) -> f64 {
        self.log_weight().exp()
    }
}

fn update_accumulator(
    acc: &GirsanovAccumulator,
    state: &FourierState,
    increment: &FourierState,
    dt: f64,
    cov: &CovarianceSpec,
    f_modes: &[usize],
    sign: f64,
) -> Result<GirsanovAccumulator> {
    if !(dt > 0.0) {
        return Err(CoreError::invalid(format!("dt must be positive, got {dt}")));
    }
    let adv = bilinear_self(state)?;
    let mut ds = 0.0;
    let mut dq = 0.0;
    for &k in f_modes {
        let v = cov.variance(k);
        if v <= 0.0 {
            return Err(CoreError::ZeroVariance {
                mode: k,
                lambda: state.basis().eigenvalue(k),
            });
        }
        let sigma = v.sqrt();
        let g = adv.coeffs()[k] / sigma;
        // The increment is the colored one (variance sigma^2 dt); whiten it
        // back to the pre-coloring Wiener increment.
        let dw = increment.coeffs()[k] / sigma;
        ds += g * dw;
        dq += g * g * dt;
    }
    Ok(GirsanovAccumulator {
        stoch_integral: acc.stoch_integral + sign * ds,
        quad_variation: acc.quad_variation + dq,
    })
}

/// Left-endpoint update of the forward weight along the plain dynamics.
/// `increment` is the same colored noise realization that drives the state
/// over this step.
pub fn accumulate(
    acc: &GirsanovAccumulator,
    state: &FourierState,
    increment: &FourierState,
    dt: f64,
    cov: &CovarianceSpec,
    f_modes: &[usize],
) -> Result<GirsanovAccumulator> {
    update_accumulator(acc, state, increment, dt, cov, f_modes, 1.0)
}

/// Same contract as [`accumulate`] with the stochastic term sign-flipped:
/// the inverse-density weight accumulated along the decoupled auxiliary
/// dynamics.
pub fn inverse_weight_accumulate(
    acc: &GirsanovAccumulator,
    state: &FourierState,
    increment: &FourierState,
    dt: f64,
    cov: &CovarianceSpec,
    f_modes: &[usize],
) -> Result<GirsanovAccumulator> {
    update_accumulator(acc, state, increment, dt, cov, f_modes, -1.0)
}

/// Exact Gaussian law of the linear dynamics on a distinguished mode set:
/// diagonal covariance `sigma_k^2 (1 - e^(-2 nu lambda_k w)) / (2 nu
/// lambda_k)` over a window `w`, mean equal to the heat-flow decay of the
/// initial coordinates.
#[derive(Debug, Clone)]
pub struct OUReference {
    f_modes: Vec<usize>,
    viscosity: f64,
    window: f64,
    mean: Vec<f64>,
    q_diag: Vec<f64>,
}

impl OUReference {
    /// Reference over `[0, window]` started from `initial` (zero if absent).
    pub fn new(
        cov: &CovarianceSpec,
        f_modes: &[usize],
        viscosity: f64,
        window: f64,
        initial: Option<&FourierState>,
    ) -> Result<Self> {
        if f_modes.is_empty() {
            return Err(CoreError::invalid("distinguished mode set is empty"));
        }
        if !(viscosity > 0.0) || !(window > 0.0) {
            return Err(CoreError::invalid(
                "viscosity and window must be positive",
            ));
        }
        let basis = cov.basis();
        let mut mean = Vec::with_capacity(f_modes.len());
        let mut q_diag = Vec::with_capacity(f_modes.len());
        for &k in f_modes {
            if k >= basis.len() {
                return Err(CoreError::invalid(format!(
                    "mode {k} is outside the basis of {} modes",
                    basis.len()
                )));
            }
            let l = basis.eigenvalue(k);
            let rate = 2.0 * viscosity * l;
            // sigma^2 (1 - e^(-rate w)) / rate, stable for small windows.
            q_diag.push(cov.variance(k) * (-(-rate * window).exp_m1()) / rate);
            mean.push(match initial {
                Some(x) => x.coeffs()[k] * (-viscosity * l * window).exp(),
                None => 0.0,
            });
        }
        Ok(OUReference {
            f_modes: f_modes.to_vec(),
            viscosity,
            window,
            mean,
            q_diag,
        })
    }

    /// Stationary reference: the infinite-window limit
    /// `sigma_k^2 / (2 nu lambda_k)`, mean zero.
    pub fn stationary(cov: &CovarianceSpec, f_modes: &[usize], viscosity: f64) -> Result<Self> {
        let mut reference = OUReference::new(cov, f_modes, viscosity, 1.0, None)?;
        reference.window = f64::INFINITY;
        for (q, &k) in reference.q_diag.iter_mut().zip(f_modes) {
            *q = cov.variance(k) / (2.0 * viscosity * cov.basis().eigenvalue(k));
        }
        Ok(reference)
    }

    pub fn f_modes(&self) -> &[usize] {
        &self.f_modes
    }

    pub fn dim(&self) -> usize {
        self.f_modes.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn q_diag(&self) -> &[f64] {
        &self.q_diag
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// One exact draw: mean plus independent Gaussians with the diagonal
    /// covariance. No time stepping. Coordinates with zero variance are
    /// deterministic.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.q_diag)
            .map(|(m, q)| {
                let z: f64 = rng.sample(StandardNormal);
                m + q.sqrt() * z
            })
            .collect()
    }

    /// Gaussian density at a point of the distinguished subspace.
    pub fn density(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dim() {
            return Err(CoreError::invalid(format!(
                "point has dimension {} but the reference has {}",
                point.len(),
                self.dim()
            )));
        }
        let mut log_norm = 0.0;
        let mut quad = 0.0;
        for ((x, m), q) in point.iter().zip(&self.mean).zip(&self.q_diag) {
            if !(*q > 0.0) {
                return Err(CoreError::Degenerate(
                    "density of a degenerate Gaussian coordinate".into(),
                ));
            }
            log_norm += -0.5 * (2.0 * std::f64::consts::PI * q).ln();
            quad += (x - m) * (x - m) / q;
        }
        Ok((log_norm - 0.5 * quad).exp())
    }
}

/// One line of an equivalence report: a statistic with its Monte Carlo
/// uncertainty and the z-score against the exact reference value.
#[derive(Debug, Clone)]
pub struct StatLine {
    pub statistic: String,
    pub estimate: f64,
    pub std_error: f64,
    pub expected: f64,
    pub z_score: f64,
}

/// One weighted CDF comparison line.
#[derive(Debug, Clone)]
pub struct KsLine {
    pub coordinate: usize,
    pub distance: f64,
    pub critical: f64,
    pub pass: bool,
}

/// Outcome of the reweighted-law comparison.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub lines: Vec<StatLine>,
    pub ks: Vec<KsLine>,
    pub n: usize,
    pub effective_sample_size: f64,
    /// Set when the effective sample size fell below the configured floor.
    pub unreliable: bool,
    pub pass: bool,
}

/// Tolerances of the equivalence test.
#[derive(Debug, Clone)]
pub struct EquivalenceOptions {
    /// Maximum |z| for the weighted moment checks.
    pub moment_z_max: f64,
    /// Level of the CDF-distance test.
    pub ks_alpha: f64,
    /// Replicas for the Monte Carlo critical value.
    pub ks_replicas: usize,
    /// Reports with smaller effective sample size are flagged unreliable.
    pub ess_floor: f64,
}

impl Default for EquivalenceOptions {
    fn default() -> Self {
        EquivalenceOptions {
            moment_z_max: 3.0,
            ks_alpha: 0.01,
            ks_replicas: 400,
            ess_floor: 100.0,
        }
    }
}

/// Compares the weighted empirical law of endpoint projections against the
/// exact Gaussian reference: first and second weighted moments per
/// coordinate, then one-dimensional weighted marginal CDF distances with
/// Monte Carlo critical values.
pub fn reweighted_equivalence_test(
    samples: &[Vec<f64>],
    weights: &[f64],
    reference: &OUReference,
    opts: &EquivalenceOptions,
    rng: &mut ChaCha8Rng,
) -> Result<EquivalenceReport> {
    if samples.is_empty() || samples.len() != weights.len() {
        return Err(CoreError::Degenerate(
            "equivalence test needs matching nonempty samples and weights".into(),
        ));
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(CoreError::Degenerate(
            "weights must be positive and finite".into(),
        ));
    }
    let d = reference.dim();
    if samples.iter().any(|s| s.len() != d) {
        return Err(CoreError::invalid(format!(
            "samples must have dimension {d} matching the reference"
        )));
    }

    let ess = effective_sample_size(weights);
    let unreliable = ess < opts.ess_floor;
    let mut lines = Vec::new();
    let mut pass = true;

    for i in 0..d {
        let coords: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let m1 = weighted_mean_se(&coords, weights)?;
        let exp1 = reference.mean()[i];
        let z1 = if m1.std_error > 0.0 {
            (m1.mean - exp1) / m1.std_error
        } else {
            0.0
        };
        pass &= z1.abs() <= opts.moment_z_max;
        lines.push(StatLine {
            statistic: format!("weighted_mean[{i}]"),
            estimate: m1.mean,
            std_error: m1.std_error,
            expected: exp1,
            z_score: z1,
        });

        let sq: Vec<f64> = coords.iter().map(|x| x * x).collect();
        let m2 = weighted_mean_se(&sq, weights)?;
        let exp2 = reference.q_diag()[i] + exp1 * exp1;
        let z2 = if m2.std_error > 0.0 {
            (m2.mean - exp2) / m2.std_error
        } else {
            0.0
        };
        pass &= z2.abs() <= opts.moment_z_max;
        lines.push(StatLine {
            statistic: format!("weighted_second_moment[{i}]"),
            estimate: m2.mean,
            std_error: m2.std_error,
            expected: exp2,
            z_score: z2,
        });
    }

    let mut ks = Vec::new();
    for i in 0..d {
        let q = reference.q_diag()[i];
        if !(q > 0.0) {
            continue; // deterministic coordinate: no CDF to compare
        }
        let mean = reference.mean()[i];
        let sd = q.sqrt();
        let coords: Vec<f64> = samples.iter().map(|s| s[i]).collect();
        let distance =
            weighted_cdf_sup_distance(&coords, weights, |x| normal_cdf(x, mean, sd))?;
        let critical = ks_critical_mc(weights, mean, sd, opts.ks_alpha, opts.ks_replicas, rng)?;
        let ok = distance < critical;
        pass &= ok;
        ks.push(KsLine {
            coordinate: i,
            distance,
            critical,
            pass: ok,
        });
    }

    Ok(EquivalenceReport {
        lines,
        ks,
        n: samples.len(),
        effective_sample_size: ess,
        unreliable,
        pass: pass && !unreliable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use crate::spectral::SpectralBasis;
    use approx::assert_abs_diff_eq;

    fn setup() -> (std::sync::Arc<SpectralBasis>, CovarianceSpec) {
        let basis = SpectralBasis::build(2).unwrap();
        let cov = CovarianceSpec::power_law(&basis, 3.0).unwrap();
        (basis, cov)
    }

    #[test]
    fn weight_of_empty_accumulator_is_one() {
        let acc = GirsanovAccumulator::default();
        assert_eq!(acc.weight(), 1.0);
    }

    #[test]
    fn single_mode_state_leaves_accumulator_unchanged() {
        let (basis, cov) = setup();
        let state = FourierState::unit_mode(&basis, 2);
        let mut rng = substream(2, 0, Purpose::Wiener);
        let inc = cov.sample_increment(1e-3, &mut rng).unwrap();
        let acc = GirsanovAccumulator::default();
        let next = accumulate(&acc, &state, &inc, 1e-3, &cov, &[0, 1]).unwrap();
        assert_eq!(next, acc);
    }

    #[test]
    fn zero_variance_on_support_fails() {
        let basis = SpectralBasis::build(1).unwrap();
        let mut vars = vec![1.0; basis.len()];
        vars[0] = 0.0;
        let cov = CovarianceSpec::explicit(&basis, vars).unwrap();
        let mut state = FourierState::zeros(&basis);
        for (i, c) in state.coeffs_mut().iter_mut().enumerate() {
            *c = 0.2 + i as f64 * 0.1;
        }
        let inc = FourierState::zeros(&basis);
        let acc = GirsanovAccumulator::default();
        assert!(matches!(
            accumulate(&acc, &state, &inc, 1e-3, &cov, &[0]),
            Err(CoreError::ZeroVariance { mode: 0, .. })
        ));
    }

    #[test]
    fn ou_window_limit_is_the_stationary_variance() {
        let (_basis, cov) = setup();
        let nu = 1.3;
        let f = [0usize, 13];
        let wide = OUReference::new(&cov, &f, nu, 1e6, None).unwrap();
        let stat = OUReference::stationary(&cov, &f, nu).unwrap();
        for (a, b) in wide.q_diag().iter().zip(stat.q_diag()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * b);
        }
    }

    #[test]
    fn ou_sample_covariance_matches_q() {
        let (_basis, cov) = setup();
        let f = [0usize, 1, 14];
        let reference = OUReference::new(&cov, &f, 1.0, 1.0, None).unwrap();
        let mut rng = substream(4, 0, Purpose::OuDraw);
        let n = 100_000;
        let d = f.len();
        let mut sums = vec![0.0; d];
        let mut sums_sq = vec![0.0; d];
        let mut cross = 0.0;
        for _ in 0..n {
            let x = reference.sample(&mut rng);
            for j in 0..d {
                sums[j] += x[j];
                sums_sq[j] += x[j] * x[j];
            }
            cross += x[0] * x[1];
        }
        let nf = n as f64;
        for j in 0..d {
            let var = sums_sq[j] / nf - (sums[j] / nf).powi(2);
            let q = reference.q_diag()[j];
            // 4 standard errors of a variance estimate: q sqrt(2/n).
            assert!(
                (var - q).abs() <= 4.0 * q * (2.0 / nf).sqrt(),
                "coordinate {j}: {var} vs {q}"
            );
        }
        let se = (reference.q_diag()[0] * reference.q_diag()[1] / nf).sqrt();
        assert!((cross / nf).abs() <= 4.0 * se);
    }

    #[test]
    fn zero_variance_coordinate_is_deterministic() {
        let basis = SpectralBasis::build(1).unwrap();
        let mut vars = vec![1.0; basis.len()];
        vars[1] = 0.0;
        let cov = CovarianceSpec::explicit(&basis, vars).unwrap();
        let mut x0 = FourierState::zeros(&basis);
        x0.coeffs_mut()[1] = 2.0;
        let reference = OUReference::new(&cov, &[0, 1], 1.0, 0.5, Some(&x0)).unwrap();
        let mut rng = substream(5, 0, Purpose::OuDraw);
        let expected_mean = 2.0 * (-0.5f64).exp();
        for _ in 0..32 {
            let x = reference.sample(&mut rng);
            assert_abs_diff_eq!(x[1], expected_mean, epsilon = 1e-15);
        }
    }

    #[test]
    fn density_peak_symmetry_and_mass() {
        let (_basis, cov) = setup();
        let f = [0usize, 1];
        let reference = OUReference::new(&cov, &f, 1.0, 1.0, None).unwrap();
        let q = reference.q_diag().to_vec();
        let peak = reference.density(reference.mean()).unwrap();
        let expected = 1.0 / (2.0 * std::f64::consts::PI * (q[0] * q[1]).sqrt());
        assert_abs_diff_eq!(peak, expected, epsilon = 1e-12 * expected);

        // Reflection symmetry about the mean.
        let p1 = reference.density(&[0.3, -0.2]).unwrap();
        let p2 = reference.density(&[-0.3, 0.2]).unwrap();
        assert_abs_diff_eq!(p1, p2, epsilon = 1e-15);

        // Quadrature over a wide box integrates to one within 1e-4.
        let half = 6.0 * q[0].max(q[1]).sqrt();
        let n = 400;
        let hstep = 2.0 * half / n as f64;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -half + (i as f64 + 0.5) * hstep;
                let y = -half + (j as f64 + 0.5) * hstep;
                mass += reference.density(&[x, y]).unwrap() * hstep * hstep;
            }
        }
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-4);

        // Degenerate coordinates refuse to produce a density.
        let basis = SpectralBasis::build(1).unwrap();
        let cov0 = CovarianceSpec::explicit(&basis, vec![0.0; basis.len()]).unwrap();
        let degenerate = OUReference::new(&cov0, &[0], 1.0, 1.0, None).unwrap();
        assert!(degenerate.density(&[0.0]).is_err());
    }

    #[test]
    fn unit_weight_self_check_passes_at_nominal_rates() {
        let (_basis, cov) = setup();
        let f = [0usize, 1];
        let reference = OUReference::new(&cov, &f, 1.0, 1.0, None).unwrap();
        let mut rng = substream(6, 0, Purpose::OuDraw);
        let n = 20_000;
        let samples: Vec<Vec<f64>> = (0..n).map(|_| reference.sample(&mut rng)).collect();
        let weights = vec![1.0; n];
        let mut cal = substream(6, 1, Purpose::Calibration);
        let report = reweighted_equivalence_test(
            &samples,
            &weights,
            &reference,
            &EquivalenceOptions::default(),
            &mut cal,
        )
        .unwrap();
        assert!(report.pass, "self-check failed: {report:?}");
        assert_abs_diff_eq!(report.effective_sample_size, n as f64, epsilon = 1e-9);
    }
}
