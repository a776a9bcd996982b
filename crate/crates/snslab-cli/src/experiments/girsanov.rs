//! Exponential-weight experiment: martingale checks at two times and the
//! reweighted-law comparison against the exact Gaussian reference.

use snslab_core::girsanov::{reweighted_equivalence_test, EquivalenceOptions, OUReference};
use snslab_core::integrator::{GirsanovRequest, RunRequest};
use snslab_core::rng::{substream, Purpose};
use snslab_core::stats::mean_se;

use super::Lab;
use crate::error::CliError;
use crate::report::{fmt, ExperimentOutcome, RunWriter};

pub fn run(lab: &Lab, writer: &mut RunWriter) -> Result<ExperimentOutcome, CliError> {
    let run = &lab.config.run;
    let f_modes = lab.config.dynamics.f_modes.clone();
    let spec = lab.dynamics(snslab_core::integrator::Variant::Galerkin)?;

    // Snapshot at the midpoint (grid-aligned) and the horizon: the weight
    // must be a martingale at both.
    let n_steps = (run.horizon / run.dt).round() as u64;
    let mid = (n_steps / 2) as f64 * run.dt;
    let mut times = vec![run.horizon];
    if mid > 0.0 && mid < run.horizon {
        times.insert(0, mid);
    }
    let mut req = RunRequest::new(run.horizon, run.dt, times.clone());
    req.girsanov = Some(GirsanovRequest {
        f_modes: f_modes.clone(),
        inverse: false,
    });

    struct Row {
        endpoint: Vec<f64>,
        weights: Vec<f64>,
    }
    let rows: Vec<Row> = lab.run_mapped(&spec, &req, |t| Row {
        endpoint: f_modes
            .iter()
            .map(|&k| t.states.last().unwrap().coeffs()[k])
            .collect(),
        weights: t.girsanov_at.iter().map(|a| a.weight()).collect(),
    })?;

    let mut lines = Vec::new();
    let mut passed = true;
    let mut csv_rows = Vec::new();

    for (j, time) in times.iter().enumerate() {
        let w: Vec<f64> = rows.iter().map(|r| r.weights[j]).collect();
        assert!(w.iter().all(|x| *x > 0.0 && x.is_finite()));
        let m = mean_se(&w)?;
        let z = (m.mean - 1.0) / m.std_error;
        let ok = z.abs() <= lab.config.girsanov.moment_z_max;
        passed &= ok;
        csv_rows.push(vec![
            format!("weight_mean[t={time}]"),
            fmt(m.mean),
            fmt(m.std_error),
            fmt(z),
        ]);
        lines.push(format!(
            "weight mean at t = {time}: {} +- {} (z = {z:.2}) {}",
            m.mean,
            m.std_error,
            if ok { "ok" } else { "VIOLATED" }
        ));
    }

    // Reweighted law against the exact reference at the horizon.
    let reference = OUReference::new(
        &lab.cov,
        &f_modes,
        lab.config.model.viscosity,
        run.horizon,
        Some(&lab.initial),
    )?;
    let endpoints: Vec<Vec<f64>> = rows.iter().map(|r| r.endpoint.clone()).collect();
    let final_weights: Vec<f64> = rows.iter().map(|r| *r.weights.last().unwrap()).collect();
    let opts = EquivalenceOptions {
        moment_z_max: lab.config.girsanov.moment_z_max,
        ks_alpha: lab.config.girsanov.ks_alpha,
        ks_replicas: lab.config.girsanov.ks_replicas,
        ess_floor: lab.config.girsanov.ess_floor,
    };
    let mut cal = substream(run.master_seed, 0, Purpose::Calibration);
    let report =
        reweighted_equivalence_test(&endpoints, &final_weights, &reference, &opts, &mut cal)?;

    for line in &report.lines {
        csv_rows.push(vec![
            line.statistic.clone(),
            fmt(line.estimate),
            fmt(line.std_error),
            fmt(line.z_score),
        ]);
    }
    writer.write_csv(
        "girsanov.csv",
        &["statistic[-]", "estimate[-]", "std_error[-]", "z_score[-]"],
        &csv_rows,
    )?;
    let ks_rows: Vec<Vec<String>> = report
        .ks
        .iter()
        .map(|k| {
            vec![
                k.coordinate.to_string(),
                fmt(k.distance),
                fmt(k.critical),
                k.pass.to_string(),
            ]
        })
        .collect();
    writer.write_csv(
        "girsanov_ks.csv",
        &[
            "coordinate[-]",
            "sup_cdf_distance[-]",
            "critical_value[-]",
            "pass[-]",
        ],
        &ks_rows,
    )?;

    lines.push(format!(
        "effective sample size {:.1} of {} ({})",
        report.effective_sample_size,
        report.n,
        if report.unreliable {
            "UNRELIABLE: below the configured floor"
        } else {
            "ok"
        }
    ));
    for l in &report.lines {
        let ok = l.z_score.abs() <= opts.moment_z_max;
        lines.push(format!(
            "{}: {} vs {} (z = {:.2}) {}",
            l.statistic,
            l.estimate,
            l.expected,
            l.z_score,
            if ok { "ok" } else { "VIOLATED" }
        ));
    }
    for k in &report.ks {
        lines.push(format!(
            "marginal CDF distance[{}]: {:.4} vs critical {:.4} {}",
            k.coordinate,
            k.distance,
            k.critical,
            if k.pass { "ok" } else { "VIOLATED" }
        ));
    }
    passed &= report.pass;

    Ok(ExperimentOutcome {
        kind: "girsanov",
        passed,
        lines,
    })
}
