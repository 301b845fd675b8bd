//! CSV emission.
//!
//! Numbers use the shortest representation that parses back to the same
//! double, so every file round-trips bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::CliError;
use crate::flow::StepDiagnostics;
use crate::grid::GridSpec;

pub const DIAGNOSTICS_HEADER: &str =
    "step,time,mass,energy,action,newton_iters,grad_norm,clamped_mass";

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn snapshot_name(step: usize) -> String {
    format!("snap_{step:06}.csv")
}

/// Writes `x,u` rows at cell centers.
pub fn write_snapshot_csv(
    profile: &[f64],
    grid: &GridSpec,
    dir: &Path,
    step: usize,
) -> Result<PathBuf, CliError> {
    if profile.len() != grid.n_x() {
        return Err(CliError::Flow(crate::error::shape_err(
            grid.n_x(),
            profile.len(),
        )));
    }
    let mut text = String::from("x,u\n");
    for (x, u) in grid.centers().iter().zip(profile) {
        let _ = writeln!(text, "{x},{u}");
    }
    let path = dir.join(snapshot_name(step));
    write_file(&path, &text)?;
    Ok(path)
}

/// Writes `step,time` rows for the given snapshots.
pub fn write_index_csv(entries: &[(usize, f64)], dir: &Path) -> Result<PathBuf, CliError> {
    let mut text = String::from("step,time\n");
    for (step, time) in entries {
        let _ = writeln!(text, "{step},{time}");
    }
    let path = dir.join("index.csv");
    write_file(&path, &text)?;
    Ok(path)
}

pub fn diagnostics_row(d: &StepDiagnostics) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        d.step, d.time, d.mass, d.energy, d.action, d.newton_iters, d.grad_norm, d.clamped_mass
    )
}

pub fn write_diagnostics_csv(diags: &[StepDiagnostics], dir: &Path) -> Result<PathBuf, CliError> {
    let mut text = String::from(DIAGNOSTICS_HEADER);
    text.push('\n');
    for d in diags {
        text.push_str(&diagnostics_row(d));
        text.push('\n');
    }
    let path = dir.join("diagnostics.csv");
    write_file(&path, &text)?;
    Ok(path)
}

/// Reads an `x,u` snapshot back.
pub fn read_snapshot_csv(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    if lines.next() != Some("x,u") {
        return Err(CliError::Parse {
            origin: path.display().to_string(),
            message: "expected header `x,u`".into(),
        });
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let bad = || CliError::Parse {
                origin: path.display().to_string(),
                message: format!("line {}: malformed row `{line}`", k + 2),
            };
            let (x, u) = line.split_once(',').ok_or_else(bad)?;
            Ok((x.parse().map_err(|_| bad())?, u.parse().map_err(|_| bad())?))
        })
        .collect()
}
