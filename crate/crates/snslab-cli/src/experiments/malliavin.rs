//! Sensitivity-matrix ensemble: records truncated base paths, assembles the
//! Gram matrix of noise-direction derivatives per path, and summarizes the
//! spectrum statistics.

use snslab_core::exec;
use snslab_core::integrator::{DynamicsSpec, RngNoise, Variant};
use snslab_core::malliavin::{
    assemble_matrix, nondegeneracy_report, BasePath, CoordinateProjection, Functional,
    MalliavinMatrix, SquaredHNorm,
};
use snslab_core::rng::SeedInfo;

use super::Lab;
use crate::error::CliError;
use crate::report::{fmt, ExperimentOutcome, RunWriter};

pub fn run(lab: &Lab, writer: &mut RunWriter) -> Result<ExperimentOutcome, CliError> {
    let cfg = &lab.config.malliavin;
    let run = &lab.config.run;
    let spec: DynamicsSpec = lab.dynamics(Variant::Truncated { radius: cfg.radius })?;

    let directions: Vec<usize> = if cfg.directions.is_empty() {
        // Default: the whole first eigenvalue shell.
        (0..lab.basis.prefix_len_for_shell(1.0)).collect()
    } else {
        cfg.directions.clone()
    };
    for &k in &directions {
        if k >= lab.basis.len() {
            return Err(CliError::Config(format!(
                "malliavin.directions entry {k} is outside the basis"
            )));
        }
    }

    let functional: Box<dyn Functional> = match cfg.functional.as_str() {
        "coordinates" => Box::new(CoordinateProjection {
            modes: lab.config.dynamics.f_modes.clone(),
        }),
        "h_norm_sq" => Box::new(SquaredHNorm),
        other => {
            return Err(CliError::Config(format!(
                "malliavin.functional \"{other}\" is not one of coordinates, h_norm_sq"
            )))
        }
    };

    let n_steps = (run.horizon / run.dt).round() as usize;
    let matrices: Vec<Result<MalliavinMatrix, String>> =
        exec::map_indexed(run.n_traj as usize, |i| {
            let mut noise = RngNoise::for_trajectory(run.master_seed, i as u64);
            let seed_info = SeedInfo {
                master_seed: run.master_seed,
                trajectory: i as u64,
            };
            let base = BasePath::record(
                &lab.initial,
                &spec,
                run.horizon,
                run.dt,
                seed_info,
                &mut noise,
            )
            .map_err(|e| e.to_string())?;
            assemble_matrix(&base, n_steps, &directions, cfg.s_stride, functional.as_ref())
                .map_err(|e| e.to_string())
        });
    let mut collected = Vec::with_capacity(matrices.len());
    for (i, m) in matrices.into_iter().enumerate() {
        match m {
            Ok(v) => collected.push(v),
            Err(e) => return Err(CliError::Other(format!("path {i} failed: {e}"))),
        }
    }

    // Per-path spectra, eigenvalues ascending.
    let d = collected[0].dim();
    let mut header: Vec<String> = vec!["path[-]".to_string()];
    for i in 0..d {
        header.push(format!("eigenvalue_{i}[-]"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<String>> = collected
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut row = vec![i.to_string()];
            row.extend(m.eigenvalues().into_iter().map(fmt));
            row
        })
        .collect();
    writer.write_csv("malliavin_spectra.csv", &header_refs, &rows)?;

    let report = nondegeneracy_report(&collected, &[cfg.min_eig_rel_threshold])?;
    writer.write_bytes("malliavin_report.txt", report.to_string().as_bytes())?;

    let pd_fraction = report.positive_definite_fraction(cfg.min_eig_rel_threshold);
    let passed = pd_fraction == 1.0;
    let lines = vec![
        format!(
            "sensitivity matrices: {} paths, functional {}, {} directions, start-time stride {}",
            run.n_traj,
            functional.label(),
            directions.len(),
            cfg.s_stride
        ),
        format!(
            "fraction with smallest eigenvalue above {:.1e} * trace: {:.4} {}",
            cfg.min_eig_rel_threshold,
            pd_fraction,
            if passed { "ok" } else { "VIOLATED" }
        ),
    ];
    Ok(ExperimentOutcome {
        kind: "malliavin",
        passed,
        lines,
    })
}
