//! Mixed-integer linear programming layer: model builder, a bundled exact
//! branch-and-bound solver for desk-scale models, MPS export, a plain
//! name/value solution reader and an external-solver bridge.

mod branch_bound;
mod external;
mod mps;
mod simplex;

pub use external::ExternalSolver;

use crate::error::{Error, Result};
use crate::model::Sense;
use std::time::Duration;

/// Handle to a declared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constraint relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub(crate) struct Var {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
    pub obj: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Constr {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub rel: Rel,
    pub rhs: f64,
}

/// A mixed-integer linear program under construction.
#[derive(Debug, Clone)]
pub struct MilpModel {
    pub(crate) name: String,
    pub(crate) sense: Sense,
    pub(crate) vars: Vec<Var>,
    pub(crate) constrs: Vec<Constr>,
}

impl MilpModel {
    pub fn new(name: impl Into<String>, sense: Sense) -> Self {
        MilpModel {
            name: name.into(),
            sense,
            vars: Vec::new(),
            constrs: Vec::new(),
        }
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constrs(&self) -> usize {
        self.constrs.len()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    pub fn var_bounds(&self, v: VarId) -> (f64, f64) {
        (self.vars[v.0].lower, self.vars[v.0].upper)
    }

    pub fn add_continuous(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        obj: f64,
    ) -> Result<VarId> {
        self.add_var(name.into(), lower, upper, false, obj)
    }

    pub fn add_binary(&mut self, name: impl Into<String>, obj: f64) -> Result<VarId> {
        self.add_var(name.into(), 0.0, 1.0, true, obj)
    }

    pub fn add_integer(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        obj: f64,
    ) -> Result<VarId> {
        self.add_var(name.into(), lower, upper, true, obj)
    }

    fn add_var(
        &mut self,
        name: String,
        lower: f64,
        upper: f64,
        integer: bool,
        obj: f64,
    ) -> Result<VarId> {
        if lower > upper {
            return Err(Error::InvalidModel(format!(
                "variable {name} has lower bound {lower} above upper bound {upper}"
            )));
        }
        if name.is_empty() || name.len() > 255 || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidModel(format!(
                "variable name {name:?} is not MPS-safe"
            )));
        }
        self.vars.push(Var {
            name,
            lower,
            upper,
            integer,
            obj,
        });
        Ok(VarId(self.vars.len() - 1))
    }

    /// Adds `coeff` to the objective coefficient of `var`.
    pub fn add_obj(&mut self, var: VarId, coeff: f64) {
        self.vars[var.0].obj += coeff;
    }

    pub fn add_constr(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        rel: Rel,
        rhs: f64,
    ) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.len() > 255 || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidModel(format!(
                "constraint name {name:?} is not MPS-safe"
            )));
        }
        // Merge duplicate variable references so the row is a proper sparse vector.
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            if v.0 >= self.vars.len() {
                return Err(Error::InvalidModel(format!(
                    "constraint {name} references undeclared variable #{}",
                    v.0
                )));
            }
            match merged.iter_mut().find(|(i, _)| *i == v.0) {
                Some((_, acc)) => *acc += c,
                None => merged.push((v.0, c)),
            }
        }
        self.constrs.push(Constr {
            name,
            terms: merged,
            rel,
            rhs,
        });
        Ok(())
    }
}

/// Solution status reported by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    /// A feasible incumbent, typically after hitting the time limit.
    Feasible,
    Infeasible,
    Unbounded,
}

/// Result of a MILP solve.
#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    /// Best dual bound at termination (sense-adjusted: for maximization an
    /// upper bound, for minimization a lower bound).
    pub bound: f64,
    pub seconds: f64,
    pub nodes: u64,
}

impl MilpSolution {
    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub(crate) fn infeasible(sense: Sense, seconds: f64, nodes: u64) -> Self {
        MilpSolution {
            status: SolveStatus::Infeasible,
            values: Vec::new(),
            objective: sense.worst(),
            bound: sense.worst(),
            seconds,
            nodes,
        }
    }
}

/// Which solver executes a model.
#[derive(Debug, Clone, Default)]
pub enum SolverBackend {
    #[default]
    Bundled,
    External(ExternalSolver),
}

/// Options shared by all solver entry points.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub backend: SolverBackend,
    pub time_limit: Option<Duration>,
    /// Absolute optimality gap below which an incumbent is proven optimal.
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub int_tol: f64,
    pub node_limit: Option<u64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            backend: SolverBackend::Bundled,
            time_limit: None,
            gap_tol: 1e-6,
            feas_tol: 1e-7,
            int_tol: 1e-6,
            node_limit: None,
        }
    }
}

impl SolveOptions {
    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = Some(limit);
        self
    }

    pub fn with_backend(mut self, backend: SolverBackend) -> Self {
        self.backend = backend;
        self
    }
}

/// Solves `model` with the configured backend.
pub fn solve(model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution> {
    match &opts.backend {
        SolverBackend::Bundled => branch_bound::solve(model, opts),
        SolverBackend::External(solver) => external::solve(model, solver, opts),
    }
}

/// Solves `model` with the bundled branch-and-bound solver regardless of the
/// configured backend.
pub fn solve_bundled(model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution> {
    branch_bound::solve(model, opts)
}

pub use branch_bound::SearchStats;
pub use mps::{export_mps, read_solution};
