//! External-solver bridge: write MPS, invoke a configured executable, read a
//! plain name/value solution file back.

use super::{mps, MilpModel, MilpSolution, Rel, SolveOptions, SolveStatus};
use crate::error::{Error, Result};
use std::process::Command;
use std::time::Instant;

/// An external MILP solver invoked through the filesystem.
///
/// The command template is split on whitespace; the placeholders `{mps}`,
/// `{sol}` and `{timelimit}` are replaced by the model file path, the expected
/// solution file path and the time limit in seconds.
///
/// The solution file is a whitespace-separated name/value listing. Comment
/// lines starting with `#` are ignored, except that the optional metadata
/// conventions `# status <optimal|feasible|infeasible|unbounded>` and
/// `# bound <value>` are picked up when present.
#[derive(Debug, Clone)]
pub struct ExternalSolver {
    pub command: String,
}

impl ExternalSolver {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalSolver {
            command: command.into(),
        }
    }

    fn argv(&self, mps_path: &str, sol_path: &str, timelimit: f64) -> Result<Vec<String>> {
        let tokens: Vec<String> = self
            .command
            .split_whitespace()
            .map(|t| {
                t.replace("{mps}", mps_path)
                    .replace("{sol}", sol_path)
                    .replace("{timelimit}", &format!("{timelimit}"))
            })
            .collect();
        if tokens.is_empty() {
            return Err(Error::Bridge("empty solver command template".into()));
        }
        Ok(tokens)
    }
}

pub(crate) fn solve(
    model: &MilpModel,
    solver: &ExternalSolver,
    opts: &SolveOptions,
) -> Result<MilpSolution> {
    let start = Instant::now();
    let dir = tempfile::tempdir()?;
    let mps_path = dir.path().join("model.mps");
    let sol_path = dir.path().join("model.sol");
    std::fs::write(&mps_path, mps::export_mps(model)?)?;

    let timelimit = opts.time_limit.map(|d| d.as_secs_f64()).unwrap_or(1e9);
    let argv = solver.argv(
        mps_path
            .to_str()
            .ok_or_else(|| Error::Bridge("non-UTF8 temp path".into()))?,
        sol_path
            .to_str()
            .ok_or_else(|| Error::Bridge("non-UTF8 temp path".into()))?,
        timelimit,
    )?;

    let output = Command::new(&argv[0])
        .args(&argv[1..])
        .output()
        .map_err(|e| Error::Bridge(format!("failed to spawn {:?}: {e}", argv[0])))?;
    if !output.status.success() {
        return Err(Error::Bridge(format!(
            "solver exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let text = std::fs::read_to_string(&sol_path)
        .map_err(|e| Error::Bridge(format!("solver produced no solution file: {e}")))?;

    let meta = scan_metadata(&text);
    if matches!(meta.status, Some(SolveStatus::Infeasible)) {
        return Ok(MilpSolution::infeasible(
            model.sense(),
            start.elapsed().as_secs_f64(),
            0,
        ));
    }
    if matches!(meta.status, Some(SolveStatus::Unbounded)) {
        return Ok(MilpSolution {
            status: SolveStatus::Unbounded,
            values: Vec::new(),
            objective: -model.sense().worst(),
            bound: -model.sense().worst(),
            seconds: start.elapsed().as_secs_f64(),
            nodes: 0,
        });
    }

    let mut sol = mps::read_solution(model, &text)?;
    validate_point(model, &sol.values, 1e-5)?;
    sol.status = meta.status.unwrap_or(SolveStatus::Feasible);
    sol.bound = match meta.bound {
        Some(b) => b,
        None if sol.status == SolveStatus::Optimal => sol.objective,
        None => sol.bound,
    };
    sol.seconds = start.elapsed().as_secs_f64();
    Ok(sol)
}

struct Metadata {
    status: Option<SolveStatus>,
    bound: Option<f64>,
}

fn scan_metadata(text: &str) -> Metadata {
    let mut meta = Metadata {
        status: None,
        bound: None,
    };
    for line in text.lines() {
        let line = line.trim();
        let Some(rest) = line.strip_prefix('#') else {
            continue;
        };
        let tokens: Vec<&str> = rest.split_whitespace().collect();
        match tokens.as_slice() {
            ["status", s] => {
                meta.status = match *s {
                    "optimal" => Some(SolveStatus::Optimal),
                    "feasible" | "timelimit" => Some(SolveStatus::Feasible),
                    "infeasible" => Some(SolveStatus::Infeasible),
                    "unbounded" => Some(SolveStatus::Unbounded),
                    _ => None,
                };
            }
            ["bound", b] => meta.bound = b.parse().ok(),
            _ => {}
        }
    }
    meta
}

/// Checks that an externally produced point respects bounds, integrality and
/// constraints within `tol`.
fn validate_point(model: &MilpModel, values: &[f64], tol: f64) -> Result<()> {
    if values.len() != model.vars.len() {
        return Err(Error::Bridge("solution dimension mismatch".into()));
    }
    for (v, &x) in model.vars.iter().zip(values) {
        if x < v.lower - tol || x > v.upper + tol {
            return Err(Error::Bridge(format!(
                "external solution violates bounds of {}: {x} not in [{}, {}]",
                v.name, v.lower, v.upper
            )));
        }
        if v.integer && (x - x.round()).abs() > 1e-4 {
            return Err(Error::Bridge(format!(
                "external solution has fractional integer {}: {x}",
                v.name
            )));
        }
    }
    for c in &model.constrs {
        let lhs: f64 = c.terms.iter().map(|&(j, a)| a * values[j]).sum();
        let scale = 1.0 + c.rhs.abs();
        let ok = match c.rel {
            Rel::Le => lhs <= c.rhs + tol * scale,
            Rel::Ge => lhs >= c.rhs - tol * scale,
            Rel::Eq => (lhs - c.rhs).abs() <= tol * scale,
        };
        if !ok {
            return Err(Error::Bridge(format!(
                "external solution violates constraint {}: lhs {lhs}, rhs {}",
                c.name, c.rhs
            )));
        }
    }
    Ok(())
}
