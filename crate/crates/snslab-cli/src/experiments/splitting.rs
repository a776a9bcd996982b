//! Endpoint-splitting error against the window length: the projected
//! difference between the full dynamics and the window-decoupled dynamics,
//! fitted on log-log axes over a dyadic window sweep.

use snslab_core::integrator::{splitting_sweep, Variant};
use snslab_core::stats::{linear_fit, mean_se};

use super::Lab;
use crate::error::CliError;
use crate::report::{fmt, ExperimentOutcome, RunWriter};

pub fn run(lab: &Lab, writer: &mut RunWriter) -> Result<ExperimentOutcome, CliError> {
    let run = &lab.config.run;
    let cfg = &lab.config.splitting;
    let spec = lab.dynamics(Variant::Galerkin)?;
    let burn_in = (run.burn_in > 0.0).then_some(run.burn_in);

    let sweep = splitting_sweep(
        &spec,
        &lab.config.dynamics.f_modes,
        &cfg.eps_list,
        cfg.compensated,
        burn_in,
        run.horizon,
        run.dt,
        run.n_traj,
        run.master_seed,
    )?;

    let mut rows = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (eps, diffs) in sweep.eps_rounded.iter().zip(&sweep.diffs) {
        let m = mean_se(diffs)?;
        rows.push(vec![fmt(*eps), fmt(m.mean), fmt(m.std_error)]);
        xs.push(eps.ln());
        ys.push(m.mean.ln());
    }
    writer.write_csv(
        "splitting.csv",
        &["epsilon[sim]", "error_mean[-]", "error_std_err[-]"],
        &rows,
    )?;

    let fit = linear_fit(&xs, &ys)
        .ok_or_else(|| CliError::Other("window sweep too short to fit".into()))?;
    writer.write_csv(
        "splitting_fit.csv",
        &["slope[-]", "intercept[-]", "slope_std_error[-]", "points[-]"],
        &[vec![
            fmt(fit.slope),
            fmt(fit.intercept),
            fmt(fit.slope_std_error),
            fit.n.to_string(),
        ]],
    )?;

    let passed = fit.slope >= cfg.slope_min;
    let lines = vec![
        format!(
            "splitting-rate ({}{}): fitted slope {:.3} +- {:.3} over {} windows",
            if cfg.compensated { "compensated" } else { "plain" },
            if burn_in.is_some() { ", stationary start" } else { "" },
            fit.slope,
            fit.slope_std_error,
            fit.n
        ),
        format!(
            "slope threshold {}: {}",
            cfg.slope_min,
            if passed { "ok" } else { "VIOLATED" }
        ),
    ];
    Ok(ExperimentOutcome {
        kind: "splitting-rate",
        passed,
        lines,
    })
}
