//! Regularity experiments on the projected endpoint law: the weak-form
//! difference-quotient scaling and the gridded-density diagnostics.

use snslab_core::besov::{
    besov_seminorm_estimate, estimate_density, lp_membership_report, weak_exponent_experiment,
    DensityEstimator, Grid, SplittingRegime, TestFunction, Verdict, WeakExponentOptions,
};
use snslab_core::girsanov::OUReference;
use snslab_core::integrator::RunRequest;
use snslab_core::rng::{substream, Purpose};
use snslab_core::snapshot::write_density;

use super::Lab;
use crate::error::CliError;
use crate::report::{fmt, ExperimentOutcome, RunWriter};

fn endpoint_samples(lab: &Lab) -> Result<Vec<Vec<f64>>, CliError> {
    let run = &lab.config.run;
    let f_modes = lab.config.dynamics.f_modes.clone();
    let spec = lab.dynamics(snslab_core::integrator::Variant::Galerkin)?;
    let req = RunRequest::new(run.horizon, run.dt, vec![run.horizon]);
    lab.run_mapped(&spec, &req, move |t| {
        f_modes
            .iter()
            .map(|&k| t.states[0].coeffs()[k])
            .collect::<Vec<f64>>()
    })
}

/// Sinusoid family along the diagonal direction, phase-shifted so that even
/// moments do not cancel the leading difference term.
fn phi_family(d: usize, frequencies: &[f64]) -> Vec<TestFunction> {
    let dir = 1.0 / (d as f64).sqrt();
    frequencies
        .iter()
        .map(|&w| TestFunction::Sinusoid {
            omega: vec![w * dir; d],
            phase: std::f64::consts::FRAC_PI_4,
        })
        .collect()
}

fn h_sweep(d: usize, base: f64, scales: u32) -> Vec<Vec<f64>> {
    let dir = 1.0 / (d as f64).sqrt();
    (0..scales)
        .map(|j| vec![base * 2.0f64.powi(-(j as i32)) * dir; d])
        .collect()
}

fn write_report_csvs(
    writer: &mut RunWriter,
    prefix: &str,
    report: &snslab_core::besov::BesovReport,
) -> Result<(), CliError> {
    let mut est_rows = Vec::new();
    let mut fit_rows = Vec::new();
    for fit in &report.fits {
        for p in &fit.points {
            est_rows.push(vec![
                fit.label.clone(),
                fmt(p.h_norm),
                fmt(p.estimate),
                fmt(p.std_error),
                p.included.to_string(),
            ]);
        }
        if let Some(f) = &fit.fit {
            fit_rows.push(vec![
                fit.label.clone(),
                fmt(f.slope),
                fmt(f.intercept),
                fmt(f.slope_std_error),
                f.n.to_string(),
            ]);
        }
    }
    writer.write_csv(
        &format!("{prefix}_estimates.csv"),
        &[
            "phi_id[-]",
            "h_norm[-]",
            "estimate[-]",
            "std_error[-]",
            "included[-]",
        ],
        &est_rows,
    )?;
    writer.write_csv(
        &format!("{prefix}_fits.csv"),
        &[
            "phi_id[-]",
            "slope[-]",
            "intercept[-]",
            "slope_std_error[-]",
            "points[-]",
        ],
        &fit_rows,
    )?;
    Ok(())
}

pub fn weak(lab: &Lab, writer: &mut RunWriter) -> Result<ExperimentOutcome, CliError> {
    let cfg = &lab.config.besov;
    let d = lab.config.dynamics.f_modes.len();
    let regime = if lab.config.run.burn_in > 0.0 {
        SplittingRegime::Stationary
    } else {
        SplittingRegime::Plain
    };
    let phis = phi_family(d, &cfg.frequencies);
    let sweep = h_sweep(d, cfg.h_base, cfg.h_scales);
    let opts = WeakExponentOptions::default();

    let samples = endpoint_samples(lab)?;
    let report = weak_exponent_experiment(
        &samples,
        &phis,
        cfg.order,
        cfg.alpha,
        &sweep,
        regime,
        cfg.slope_tolerance,
        &opts,
    )?;
    write_report_csvs(writer, "weak", &report)?;

    let mut lines = vec![format!(
        "weak-form exponent: predicted {} (alpha = {}, order = {}), threshold {}",
        report.alpha_n_predicted, cfg.alpha, cfg.order, report.slope_threshold
    )];
    match report.slope {
        Some(s) => lines.push(format!(
            "fitted slope (median over {} test functions): {s:.3}",
            report.fits.len()
        )),
        None => lines.push("all estimates below the noise floor: inconclusive".into()),
    }
    let mut passed = report.verdict == Verdict::Pass;

    if cfg.gaussian_control {
        // Same pipeline on exact Gaussian reference draws: a smooth law must
        // saturate the difference order.
        let reference = OUReference::new(
            &lab.cov,
            &lab.config.dynamics.f_modes,
            lab.config.model.viscosity,
            lab.config.run.horizon,
            Some(&lab.initial),
        )?;
        let mut rng = substream(lab.config.run.master_seed, 1, Purpose::OuDraw);
        let control: Vec<Vec<f64>> = (0..samples.len())
            .map(|_| reference.sample(&mut rng))
            .collect();
        let control_report = weak_exponent_experiment(
            &control,
            &phis,
            cfg.order,
            cfg.alpha,
            &sweep,
            regime,
            cfg.slope_tolerance,
            &opts,
        )?;
        write_report_csvs(writer, "weak_control", &control_report)?;
        let control_ok = control_report
            .slope
            .map(|s| s >= cfg.control_slope_min)
            .unwrap_or(false);
        lines.push(format!(
            "Gaussian control slope: {} (needs >= {}) {}",
            control_report.slope.map(|s| format!("{s:.3}")).unwrap_or("none".into()),
            cfg.control_slope_min,
            if control_ok { "ok" } else { "VIOLATED" }
        ));
        passed &= control_ok;
    }

    if report.verdict == Verdict::Inconclusive {
        lines.push("verdict: inconclusive".into());
    }
    Ok(ExperimentOutcome {
        kind: "besov-weak",
        passed,
        lines,
    })
}

pub fn density(lab: &Lab, writer: &mut RunWriter) -> Result<ExperimentOutcome, CliError> {
    let cfg = &lab.config.density;
    let d = lab.config.dynamics.f_modes.len();
    if d != 2 {
        return Err(CliError::Config(format!(
            "besov-density works on a two-dimensional projection; dynamics.f_modes has {d} entries"
        )));
    }
    let samples = endpoint_samples(lab)?;
    let n = samples.len();

    // Box from per-coordinate sample deviations.
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    for a in 0..d {
        let mean: f64 = samples.iter().map(|s| s[a]).sum::<f64>() / n as f64;
        let sd: f64 = (samples
            .iter()
            .map(|s| (s[a] - mean) * (s[a] - mean))
            .sum::<f64>()
            / (n as f64 - 1.0))
            .sqrt();
        lo[a] = mean - cfg.box_sigmas * sd;
        hi[a] = mean + cfg.box_sigmas * sd;
    }
    let base_grid = Grid::from_box(&lo, &hi, cfg.resolution)?;
    let fine_grid = Grid::from_box(&lo, &hi, 2 * cfg.resolution)?;

    let base = estimate_density(&samples, &base_grid, DensityEstimator::Histogram)?;
    let fine = estimate_density(&samples, &fine_grid, DensityEstimator::Histogram)?;

    // Independent half-ensembles on the base grid.
    let (first, second) = samples.split_at(n / 2);
    let half_a = estimate_density(first, &base_grid, DensityEstimator::Histogram)?;
    let half_b = estimate_density(second, &base_grid, DensityEstimator::Histogram)?;
    let l1_self: f64 = half_a
        .f
        .values
        .iter()
        .zip(&half_b.f.values)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * base_grid.cell_volume();

    let lp = lp_membership_report(&base, Some(&fine))?;
    // Stability on the middle exponent of the sweep (p = 1.5 for d = 2).
    let (p_mid, _, ratio_mid) = lp.rows[1];
    let lp_dev = (ratio_mid - 1.0).abs();

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut passed = true;
    let mut check = |label: &str, value: f64, threshold: f64, rows: &mut Vec<Vec<String>>| {
        let ok = value < threshold;
        rows.push(vec![
            label.to_string(),
            fmt(value),
            fmt(threshold),
            ok.to_string(),
        ]);
        lines.push(format!(
            "{label}: {value:.4} (threshold {threshold}) {}",
            if ok { "ok" } else { "VIOLATED" }
        ));
        ok
    };
    passed &= check("l1_half_ensemble_self_distance", l1_self, cfg.l1_self_max, &mut rows);
    passed &= check(
        &format!("lp_refinement_deviation[p={p_mid}]"),
        lp_dev,
        cfg.lp_stability_max,
        &mut rows,
    );
    passed &= check(
        "max_refined_cell_mass",
        fine.max_cell_mass,
        cfg.atom_mass_max,
        &mut rows,
    );
    writer.write_csv(
        "density_checks.csv",
        &["check[-]", "value[-]", "threshold[-]", "pass[-]"],
        &rows,
    )?;

    let lp_rows: Vec<Vec<String>> = lp
        .rows
        .iter()
        .map(|(p, norm, ratio)| vec![fmt(*p), fmt(*norm), fmt(*ratio)])
        .collect();
    writer.write_csv(
        "density_lp.csv",
        &["p[-]", "norm_base[-]", "refined_ratio[-]"],
        &lp_rows,
    )?;

    // Difference-quotient norms of the gridded density.
    let spacing = base_grid.spacing[0].max(base_grid.spacing[1]);
    let sweep: Vec<Vec<f64>> = (0..3)
        .map(|j| {
            let h = spacing * 2.0f64.powi(j);
            vec![h, 0.0]
        })
        .collect();
    let mut snorm_rows = Vec::new();
    for s in [0.25, 0.5, 0.75] {
        let v = besov_seminorm_estimate(&base.f, s, 2, &sweep)?;
        snorm_rows.push(vec![fmt(s), fmt(v)]);
    }
    writer.write_csv("density_seminorms.csv", &["s[-]", "seminorm[-]"], &snorm_rows)?;

    let mut bytes = Vec::new();
    write_density(&mut bytes, &base.f)?;
    writer.write_bytes("density.bin", &bytes)?;

    lines.insert(
        0,
        format!(
            "density diagnostics on {n} endpoint samples, grid {r}x{r} refined to {r2}x{r2}, in-box fraction {:.4}",
            base.in_box_fraction,
            r = cfg.resolution,
            r2 = 2 * cfg.resolution
        ),
    );
    Ok(ExperimentOutcome {
        kind: "besov-density",
        passed,
        lines,
    })
}
