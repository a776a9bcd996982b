//! Experiment orchestration: builds the spectral objects from a resolved
//! configuration, dispatches on the experiment kind, and writes every
//! artifact through the run writer.

mod besov;
mod girsanov;
mod malliavin;
mod splitting;

use std::sync::Arc;

use snslab_core::covariance::{check_markov_assumption, CovarianceSpec};
use snslab_core::integrator::{
    ensemble_map, stationary_ensemble_map, DynamicsSpec, RunRequest, TrajectoryOutput, Variant,
};
use snslab_core::girsanov::OUReference;
use snslab_core::snapshot::StateStreamWriter;
use snslab_core::spectral::{FourierState, SpectralBasis};
use snslab_core::stats::weighted_mean_se;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::CliError;
use crate::report::{fmt, ExperimentOutcome, RunWriter};

/// Spectral objects shared by every experiment.
pub struct Lab {
    pub config: ExperimentConfig,
    pub basis: Arc<SpectralBasis>,
    pub cov: CovarianceSpec,
    pub initial: FourierState,
}

impl Lab {
    pub fn build(config: &ExperimentConfig) -> Result<Lab, CliError> {
        let basis = SpectralBasis::build(config.model.cutoff)?;
        let cov = match config.noise.family.as_str() {
            "power_law" => CovarianceSpec::power_law(&basis, config.noise.alpha)?,
            "explicit" => CovarianceSpec::explicit(&basis, config.noise.variances.clone())?,
            other => {
                return Err(CliError::Config(format!(
                    "noise.family \"{other}\" is not supported"
                )))
            }
        };
        for &k in &config.dynamics.f_modes {
            if k >= basis.len() {
                return Err(CliError::Config(format!(
                    "dynamics.f_modes entry {k} is outside the basis of {} modes (model.cutoff = {})",
                    basis.len(),
                    config.model.cutoff
                )));
            }
        }
        let mut initial = FourierState::zeros(&basis);
        if config.initial.kind == "modes" {
            for &(k, amp) in &config.initial.modes {
                if k >= basis.len() {
                    return Err(CliError::Config(format!(
                        "initial.modes entry {k} is outside the basis of {} modes",
                        basis.len()
                    )));
                }
                initial.coeffs_mut()[k] = amp;
            }
        }
        Ok(Lab {
            config: config.clone(),
            basis,
            cov,
            initial,
        })
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        let d = &self.config.dynamics;
        Ok(match d.variant.as_str() {
            "galerkin" => Variant::Galerkin,
            "linear" => Variant::Linear,
            "truncated" => Variant::Truncated {
                radius: d.radius.expect("validated"),
            },
            "split" => Variant::Split {
                f_modes: d.f_modes.clone(),
                epsilon: d.epsilon.expect("validated"),
                compensated: d.compensated,
            },
            "f_decoupled" => Variant::FDecoupled {
                f_modes: d.f_modes.clone(),
            },
            other => {
                return Err(CliError::Config(format!(
                    "dynamics.variant \"{other}\" is not supported"
                )))
            }
        })
    }

    pub fn dynamics(&self, variant: Variant) -> Result<DynamicsSpec, CliError> {
        Ok(DynamicsSpec::new(
            self.config.model.viscosity,
            self.cov.clone(),
            variant,
        )?)
    }

    /// Runs the configured ensemble (stationary when a burn-in is set) and
    /// maps each trajectory, failing fast on the first trajectory error.
    pub fn run_mapped<R, F>(
        &self,
        spec: &DynamicsSpec,
        req: &RunRequest,
        f: F,
    ) -> Result<Vec<R>, CliError>
    where
        R: Send,
        F: Fn(TrajectoryOutput) -> R + Sync + Send,
    {
        let n = self.config.run.n_traj;
        let seed = self.config.run.master_seed;
        let results = if self.config.run.burn_in > 0.0 {
            stationary_ensemble_map(spec, req, self.config.run.burn_in, n, seed, f)
        } else {
            ensemble_map(&self.initial, spec, req, n, seed, f)
        };
        let mut out = Vec::with_capacity(results.len());
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => out.push(v),
                Err(e) => {
                    return Err(CliError::Other(format!("trajectory {i} failed: {e}")));
                }
            }
        }
        Ok(out)
    }
}

/// Runs one experiment, writing all artifacts under the configured output
/// directory and finalizing the manifest (marked incomplete on error).
pub fn run_experiment(
    config: &ExperimentConfig,
    command: String,
) -> Result<ExperimentOutcome, CliError> {
    let kind = config
        .kind
        .ok_or_else(|| CliError::Config("experiment kind is not set".into()))?;
    let lab = Lab::build(config)?;
    let out_dir = std::path::PathBuf::from(&config.output.directory);
    let mut writer = RunWriter::create(&out_dir, config, command)?;
    let result = dispatch(kind, &lab, &mut writer);
    match result {
        Ok(outcome) => {
            writer.finalize(false)?;
            Ok(outcome)
        }
        Err(e) => {
            // Keep partial outputs; the manifest records incompleteness.
            let _ = writer.finalize(true);
            Err(e)
        }
    }
}

fn dispatch(
    kind: ExperimentKind,
    lab: &Lab,
    writer: &mut RunWriter,
) -> Result<ExperimentOutcome, CliError> {
    match kind {
        ExperimentKind::Simulate => simulate(lab, writer),
        ExperimentKind::EnergyCheck => energy_check(lab, writer),
        ExperimentKind::OuCheck => ou_check(lab, writer),
        ExperimentKind::Girsanov => girsanov::run(lab, writer),
        ExperimentKind::Malliavin => malliavin::run(lab, writer),
        ExperimentKind::BesovWeak => besov::weak(lab, writer),
        ExperimentKind::BesovDensity => besov::density(lab, writer),
        ExperimentKind::SplittingRate => splitting::run(lab, writer),
    }
}

/// Integrates the configured ensemble and persists snapshots plus a
/// per-trajectory summary. Trajectory failures are listed rather than
/// aborting the run.
fn simulate(lab: &Lab, writer: &mut RunWriter) -> Result<ExperimentOutcome, CliError> {
    let spec = lab.dynamics(lab.variant()?)?;
    let run = &lab.config.run;
    let req = RunRequest::new(run.horizon, run.dt, run.snapshot_times.clone());

    let results = if run.burn_in > 0.0 {
        stationary_ensemble_map(&spec, &req, run.burn_in, run.n_traj, run.master_seed, |t| t)
    } else {
        ensemble_map(&lab.initial, &spec, &req, run.n_traj, run.master_seed, |t| t)
    };

    let mut stream = StateStreamWriter::new(
        Vec::new(),
        lab.basis.cutoff(),
        lab.basis.len() as u32,
    )?;
    let mut rows = Vec::new();
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(t) => {
                for (time, state) in t.times.iter().zip(&t.states) {
                    stream.write_record(*time, state.coeffs())?;
                }
                rows.push(vec![
                    i.to_string(),
                    fmt(t.sup_h_norm_sq),
                    t.tau.map(fmt).unwrap_or_default(),
                    fmt(t.states.last().map(|s| s.h_norm_sq()).unwrap_or(0.0)),
                ]);
            }
            Err(e) => {
                writer.failures.push((i as u64, e.to_string()));
            }
        }
    }
    let bytes = stream.into_inner();
    writer.write_bytes("snapshots.bin", &bytes)?;
    writer.write_csv(
        "summary.csv",
        &[
            "trajectory[-]",
            "sup_h_norm_sq[-]",
            "tau[sim]",
            "endpoint_h_norm_sq[-]",
        ],
        &rows,
    )?;
    writer.write_bytes("basis.txt", lab.basis.table_string().as_bytes())?;
    let diagnostics = check_markov_assumption(&lab.cov, 0.25, 1.5)?;
    writer.write_bytes("noise_diagnostics.txt", diagnostics.to_string().as_bytes())?;

    let failed = writer.failures.len();
    let mut lines = vec![format!(
        "simulate: {} trajectories, {} failed, {} snapshot records",
        lab.config.run.n_traj,
        failed,
        rows.len() * lab.config.run.snapshot_times.len()
    )];
    if run.burn_in > 0.0 && run.snapshot_times.len() >= 2 {
        // Stationarity diagnostic over the recording window: drift of the
        // mean squared norm between the first and last snapshot. A large
        // drift is a warning, not a failure.
        let first: Vec<f64> = results
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .map(|t| t.states.first().map(|s| s.h_norm_sq()).unwrap_or(0.0))
            .collect();
        let last: Vec<f64> = results
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .map(|t| t.states.last().map(|s| s.h_norm_sq()).unwrap_or(0.0))
            .collect();
        if first.len() > 1 {
            let mf = weighted_mean_se(&first, &vec![1.0; first.len()])?;
            let ml = weighted_mean_se(&last, &vec![1.0; last.len()])?;
            let z = snslab_core::stats::two_sample_z(&mf, &ml);
            lines.push(format!(
                "stationarity drift of mean |u|^2 over the window: {} -> {} (z = {z:.2}){}",
                mf.mean,
                ml.mean,
                if z.abs() > 3.0 {
                    " WARNING: drift beyond 3 combined standard errors"
                } else {
                    ""
                }
            ));
        }
    }
    if failed > 0 {
        lines.push(format!(
            "failed trajectory indices: {:?}",
            writer.failures.iter().map(|f| f.0).collect::<Vec<_>>()
        ));
        return Err(CliError::Other(format!(
            "{failed} trajectories failed; see manifest for the list"
        )));
    }
    Ok(ExperimentOutcome {
        kind: "simulate",
        passed: true,
        lines,
    })
}

/// Energy-balance residual: the growth of the mean squared norm must match
/// the dissipation integral plus the injected trace, within Monte Carlo
/// error.
fn energy_check(lab: &Lab, writer: &mut RunWriter) -> Result<ExperimentOutcome, CliError> {
    let spec = lab.dynamics(lab.variant()?)?;
    let run = &lab.config.run;
    let mut req = RunRequest::new(run.horizon, run.dt, run.snapshot_times.clone());
    req.track_energy = true;
    let x0_sq = lab.initial.h_norm_sq();
    let trace = lab.cov.trace();
    let nu = lab.config.model.viscosity;

    let per_traj: Vec<Vec<f64>> = lab.run_mapped(&spec, &req, |t| {
        t.energy
            .iter()
            .zip(&t.times)
            .map(|(e, time)| {
                e.h_norm_sq - x0_sq + 2.0 * nu * e.v_norm_sq_integral - time * trace
            })
            .collect()
    })?;

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut passed = true;
    for (j, time) in run.snapshot_times.iter().enumerate() {
        let residuals: Vec<f64> = per_traj.iter().map(|r| r[j]).collect();
        let ones = vec![1.0; residuals.len()];
        let m = weighted_mean_se(&residuals, &ones)?;
        let z = if m.std_error > 0.0 {
            m.mean / m.std_error
        } else {
            0.0
        };
        let ok = z.abs() <= lab.config.energy.z_max;
        passed &= ok;
        rows.push(vec![fmt(*time), fmt(m.mean), fmt(m.std_error), fmt(z)]);
        lines.push(format!(
            "energy residual at t = {time}: {} +- {} (z = {z:.2}) {}",
            m.mean,
            m.std_error,
            if ok { "ok" } else { "VIOLATED" }
        ));
    }
    writer.write_csv(
        "energy.csv",
        &["time[sim]", "residual[-]", "std_error[-]", "z_score[-]"],
        &rows,
    )?;
    Ok(ExperimentOutcome {
        kind: "energy-check",
        passed,
        lines,
    })
}

/// Exact Gaussian reference draws against the closed-form covariance, and
/// the simulated linear endpoint law against the same reference.
fn ou_check(lab: &Lab, writer: &mut RunWriter) -> Result<ExperimentOutcome, CliError> {
    let run = &lab.config.run;
    let f_modes = lab.config.dynamics.f_modes.clone();
    let nu = lab.config.model.viscosity;
    let reference = OUReference::new(&lab.cov, &f_modes, nu, run.horizon, Some(&lab.initial))?;
    let d = f_modes.len();

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut lines = Vec::new();
    let mut passed = true;
    let mut check = |label: String, estimate: f64, se: f64, expected: f64, z_max: f64| {
        let z = if se > 0.0 { (estimate - expected) / se } else { 0.0 };
        let ok = z.abs() <= z_max;
        rows.push(vec![label.clone(), fmt(estimate), fmt(se), fmt(z)]);
        if !ok {
            lines.push(format!(
                "{label}: {estimate} vs {expected} (z = {z:.2}) VIOLATED"
            ));
        }
        ok
    };

    // Exact draws.
    let mut rng = snslab_core::rng::substream(
        run.master_seed,
        0,
        snslab_core::rng::Purpose::OuDraw,
    );
    let n_exact = lab.config.ou.n_exact as usize;
    let draws: Vec<Vec<f64>> = (0..n_exact).map(|_| reference.sample(&mut rng)).collect();
    let nf = n_exact as f64;
    for i in 0..d {
        let mean_i: f64 = draws.iter().map(|x| x[i]).sum::<f64>() / nf;
        let var_i: f64 =
            draws.iter().map(|x| (x[i] - mean_i) * (x[i] - mean_i)).sum::<f64>() / (nf - 1.0);
        let q = reference.q_diag()[i];
        // Variance of a Gaussian variance estimate: q sqrt(2/(n-1)).
        passed &= check(
            format!("exact_var[{i}]"),
            var_i,
            q * (2.0 / (nf - 1.0)).sqrt(),
            q,
            lab.config.ou.z_max_exact,
        );
        for j in (i + 1)..d {
            let mean_j: f64 = draws.iter().map(|x| x[j]).sum::<f64>() / nf;
            let cov_ij: f64 = draws
                .iter()
                .map(|x| (x[i] - mean_i) * (x[j] - mean_j))
                .sum::<f64>()
                / (nf - 1.0);
            let se = (reference.q_diag()[i] * reference.q_diag()[j] / nf).sqrt();
            passed &= check(
                format!("exact_cov[{i},{j}]"),
                cov_ij,
                se,
                0.0,
                lab.config.ou.z_max_exact,
            );
        }
    }

    // Simulated linear dynamics (advection disabled): the endpoint law is
    // exactly the reference, so only Monte Carlo noise remains.
    let spec = lab.dynamics(Variant::Linear)?;
    let req = RunRequest::new(run.horizon, run.dt, vec![run.horizon]);
    let endpoints: Vec<Vec<f64>> = lab.run_mapped(&spec, &req, |t| {
        f_modes
            .iter()
            .map(|&k| t.states[0].coeffs()[k])
            .collect::<Vec<f64>>()
    })?;
    let ones = vec![1.0; endpoints.len()];
    for i in 0..d {
        let coords: Vec<f64> = endpoints.iter().map(|e| e[i]).collect();
        let m1 = weighted_mean_se(&coords, &ones)?;
        passed &= check(
            format!("simulated_mean[{i}]"),
            m1.mean,
            m1.std_error,
            reference.mean()[i],
            lab.config.ou.z_max_simulated,
        );
        let sq: Vec<f64> = coords.iter().map(|x| x * x).collect();
        let m2 = weighted_mean_se(&sq, &ones)?;
        let expected = reference.q_diag()[i] + reference.mean()[i] * reference.mean()[i];
        passed &= check(
            format!("simulated_second_moment[{i}]"),
            m2.mean,
            m2.std_error,
            expected,
            lab.config.ou.z_max_simulated,
        );
    }

    writer.write_csv(
        "ou.csv",
        &["statistic[-]", "estimate[-]", "std_error[-]", "z_score[-]"],
        &rows,
    )?;
    lines.insert(
        0,
        format!(
            "reference covariance comparison over {} exact draws and {} simulated endpoints",
            n_exact, lab.config.run.n_traj
        ),
    );
    Ok(ExperimentOutcome {
        kind: "ou-check",
        passed,
        lines,
    })
}
