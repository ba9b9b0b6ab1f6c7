//! Bounded-variable primal simplex on an explicit basis inverse.
//!
//! Two-phase method: phase 1 drives artificial variables out of an initial
//! slack/artificial basis, phase 2 optimizes the true objective. Dantzig
//! pricing with a fallback to Bland's rule once degeneracy stalls progress.
//! Intended for desk-scale models; the basis inverse is kept dense.

use crate::error::{Error, Result};
use crate::milp::{MilpModel, Rel};
use crate::model::Sense;
use std::time::Instant;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const RATIO_EPS: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const STALL_LIMIT: u64 = 1_000;
const REFACTOR_INTERVAL: u64 = 2_000;
const RESIDUAL_CHECK_INTERVAL: u64 = 256;
const DEADLINE_CHECK_INTERVAL: u64 = 64;

/// LP data in minimization form with per-column bounds supplied per solve.
pub(crate) struct LpProblem {
    pub ncols: usize,
    pub obj: Vec<f64>,
    /// Structural columns as sparse (row, coefficient) lists.
    pub cols: Vec<Vec<(usize, f64)>>,
    pub row_rel: Vec<Rel>,
    pub rhs: Vec<f64>,
    /// +1 when the model sense matches minimization, -1 when flipped.
    pub obj_sign: f64,
}

impl LpProblem {
    pub fn from_model(model: &MilpModel) -> LpProblem {
        let obj_sign = match model.sense() {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut cols = vec![Vec::new(); model.vars.len()];
        for (r, c) in model.constrs.iter().enumerate() {
            for &(v, a) in &c.terms {
                if a != 0.0 {
                    cols[v].push((r, a));
                }
            }
        }
        LpProblem {
            ncols: model.vars.len(),
            obj: model.vars.iter().map(|v| obj_sign * v.obj).collect(),
            cols,
            row_rel: model.constrs.iter().map(|c| c.rel).collect(),
            rhs: model.constrs.iter().map(|c| c.rhs).collect(),
            obj_sign,
        }
    }

    pub fn nrows(&self) -> usize {
        self.row_rel.len()
    }
}

#[derive(Debug)]
pub(crate) enum LpOutcome {
    /// Minimization-form optimum.
    Optimal {
        x: Vec<f64>,
        obj: f64,
    },
    Infeasible,
    Unbounded,
}

/// Deadline expiry inside the LP is surfaced as a distinct outcome so the
/// caller can keep its incumbent.
pub(crate) enum LpSolve {
    Done(LpOutcome),
    Deadline,
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum ColState {
    Basic(usize),
    AtLower,
    AtUpper,
    Free,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
    Deadline,
}

struct Tableau<'a> {
    p: &'a LpProblem,
    m: usize,
    /// Total columns: structural + slacks + artificials.
    total: usize,
    n_struct: usize,
    /// Artificial column -> (row, sign), indexed past n_struct + m.
    art_rows: Vec<(usize, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    state: Vec<ColState>,
    basis: Vec<usize>,
    /// Basis inverse, stored so binv[k*m + i] = (B^-1)[i][k].
    binv: Vec<f64>,
    x_basic: Vec<f64>,
    bland: bool,
    pivots: u64,
    last_refactor: u64,
}

impl<'a> Tableau<'a> {
    fn col_value(&self, j: usize) -> f64 {
        match self.state[j] {
            ColState::Basic(pos) => self.x_basic[pos],
            ColState::AtLower => self.lower[j],
            ColState::AtUpper => self.upper[j],
            ColState::Free => 0.0,
        }
    }

    fn for_each_entry(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n_struct {
            for &(r, a) in &self.p.cols[j] {
                f(r, a);
            }
        } else if j < self.n_struct + self.m {
            f(j - self.n_struct, 1.0);
        } else {
            let (r, s) = self.art_rows[j - self.n_struct - self.m];
            f(r, s);
        }
    }

    /// w = B^-1 * column_j.
    fn ftran(&self, j: usize, w: &mut [f64]) {
        w.fill(0.0);
        let m = self.m;
        self.for_each_entry(j, |r, a| {
            let col = &self.binv[r * m..r * m + m];
            for i in 0..m {
                w[i] += a * col[i];
            }
        });
    }

    /// y = c_B^T B^-1.
    fn btran(&self, y: &mut [f64]) {
        let m = self.m;
        let cb: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
        for k in 0..m {
            let col = &self.binv[k * m..k * m + m];
            let mut acc = 0.0;
            for i in 0..m {
                acc += cb[i] * col[i];
            }
            y[k] = acc;
        }
    }

    fn reduced_cost(&self, j: usize, y: &[f64]) -> f64 {
        let mut d = self.cost[j];
        self.for_each_entry(j, |r, a| d -= y[r] * a);
        d
    }

    fn objective(&self) -> f64 {
        (0..self.total)
            .map(|j| self.cost[j] * self.col_value(j))
            .sum()
    }

    /// Recomputes basic values from the current nonbasic assignment.
    fn recompute_basics(&mut self) {
        let m = self.m;
        let mut resid = self.p.rhs.clone();
        for j in 0..self.total {
            if matches!(self.state[j], ColState::Basic(_)) {
                continue;
            }
            let v = self.col_value(j);
            if v != 0.0 {
                self.for_each_entry(j, |r, a| resid[r] -= a * v);
            }
        }
        for i in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += self.binv[k * m + i] * resid[k];
            }
            self.x_basic[i] = acc;
        }
    }

    /// Rebuilds the dense basis inverse by Gauss-Jordan elimination.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = vec![0.0f64; m * m]; // column-major basis matrix
        for (pos, &j) in self.basis.iter().enumerate() {
            self.for_each_entry(j, |r, a| b[pos * m + r] = a);
        }
        let mut inv = vec![0.0f64; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv = col;
            let mut best = b[col * m + col].abs();
            for r in col + 1..m {
                let v = b[col * m + r].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-11 {
                return Err(Error::SolverFailure(
                    "singular basis during refactorization".into(),
                ));
            }
            if piv != col {
                for k in 0..m {
                    b.swap(k * m + col, k * m + piv);
                    inv.swap(k * m + col, k * m + piv);
                }
            }
            let d = b[col * m + col];
            for k in 0..m {
                b[k * m + col] /= d;
                inv[k * m + col] /= d;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = b[col * m + r];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    b[k * m + r] -= f * b[k * m + col];
                    inv[k * m + r] -= f * inv[k * m + col];
                }
            }
        }
        self.binv = inv;
        self.last_refactor = self.pivots;
        self.recompute_basics();
        Ok(())
    }

    fn primal_residual(&self) -> f64 {
        let mut resid = self.p.rhs.clone();
        for j in 0..self.total {
            let v = self.col_value(j);
            if v != 0.0 {
                self.for_each_entry(j, |r, a| resid[r] -= a * v);
            }
        }
        resid.iter().fold(0.0f64, |acc, r| acc.max(r.abs()))
    }

    /// One phase of bounded simplex minimizing `self.cost`. `enter_limit`
    /// bounds the column range eligible to enter the basis.
    fn optimize(
        &mut self,
        enter_limit: usize,
        deadline: Option<Instant>,
        freeze_leaving_artificials: bool,
    ) -> Result<PhaseOutcome> {
        let m = self.m;
        let mut y = vec![0.0f64; m];
        let mut w = vec![0.0f64; m];
        let mut best_obj = f64::INFINITY;
        let mut stall: u64 = 0;
        let max_iters = 50 * (self.total as u64 + m as u64) + 20_000;

        for iters in 1..=max_iters {
            if let Some(dl) = deadline {
                if iters % DEADLINE_CHECK_INTERVAL == 0 && Instant::now() >= dl {
                    return Ok(PhaseOutcome::Deadline);
                }
            }
            if self.pivots - self.last_refactor >= REFACTOR_INTERVAL
                || (iters % RESIDUAL_CHECK_INTERVAL == 0 && self.primal_residual() > 1e-6)
            {
                self.refactor()?;
            }

            self.btran(&mut y);

            // Entering column: Dantzig pricing, or first eligible in Bland mode.
            let mut enter: Option<(usize, f64, f64)> = None; // (col, score, direction)
            for j in 0..enter_limit {
                if matches!(self.state[j], ColState::Basic(_)) {
                    continue;
                }
                if self.upper[j] - self.lower[j] < 1e-12 {
                    continue; // fixed column
                }
                let d = self.reduced_cost(j, &y);
                let (score, dir) = match self.state[j] {
                    ColState::AtLower => (-d, 1.0),
                    ColState::AtUpper => (d, -1.0),
                    ColState::Free => (d.abs(), if d < 0.0 { 1.0 } else { -1.0 }),
                    ColState::Basic(_) => unreachable!(),
                };
                if score > COST_TOL {
                    if self.bland {
                        enter = Some((j, score, dir));
                        break;
                    }
                    if enter.map_or(true, |(_, s, _)| score > s) {
                        enter = Some((j, score, dir));
                    }
                }
            }
            let Some((q, _, dir)) = enter else {
                return Ok(PhaseOutcome::Optimal);
            };

            self.ftran(q, &mut w);

            // Ratio test. Basic i moves at rate_i = -dir * w_i as the
            // entering column advances by theta >= 0.
            let own_range = self.upper[q] - self.lower[q];
            let mut theta = if own_range.is_finite() {
                own_range
            } else {
                f64::INFINITY
            };
            let mut ratios: Vec<(usize, f64)> = Vec::new();
            for i in 0..m {
                let rate = -dir * w[i];
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let jb = self.basis[i];
                let t = if rate > 0.0 {
                    if self.upper[jb].is_finite() {
                        (self.upper[jb] - self.x_basic[i]).max(0.0) / rate
                    } else {
                        continue;
                    }
                } else if self.lower[jb].is_finite() {
                    (self.x_basic[i] - self.lower[jb]).max(0.0) / (-rate)
                } else {
                    continue;
                };
                ratios.push((i, t));
                if t < theta {
                    theta = t;
                }
            }

            if theta.is_infinite() {
                return Ok(PhaseOutcome::Unbounded);
            }

            // Prefer a bound flip when the entering column's own range is the
            // tightest limit: no basis change needed.
            let flip = own_range.is_finite() && own_range <= theta + RATIO_EPS;
            if flip {
                let step = own_range;
                for i in 0..m {
                    self.x_basic[i] += -dir * w[i] * step;
                }
                self.state[q] = if dir > 0.0 {
                    ColState::AtUpper
                } else {
                    ColState::AtLower
                };
            } else {
                // Among blockers near the minimum ratio pick the numerically
                // safest pivot (largest |w|); Bland mode picks the lowest
                // column index to guarantee termination.
                let mut leave: Option<usize> = None;
                for &(i, t) in &ratios {
                    if t > theta + RATIO_EPS {
                        continue;
                    }
                    leave = Some(match leave {
                        None => i,
                        Some(cur) => {
                            let prefer = if self.bland {
                                self.basis[i] < self.basis[cur]
                            } else {
                                w[i].abs() > w[cur].abs()
                            };
                            if prefer {
                                i
                            } else {
                                cur
                            }
                        }
                    });
                }
                let r = leave
                    .ok_or_else(|| Error::SolverFailure("ratio test found no blocker".into()))?;
                let piv = w[r];
                if piv.abs() < PIVOT_TOL {
                    self.refactor()?;
                    continue;
                }
                let entering_value = self.col_value(q) + dir * theta;
                let leaving = self.basis[r];
                let rate_r = -dir * piv;
                self.state[leaving] = if rate_r > 0.0 {
                    ColState::AtUpper
                } else {
                    ColState::AtLower
                };
                if freeze_leaving_artificials && leaving >= self.n_struct + self.m {
                    // Departed artificials are fixed at zero for good.
                    self.lower[leaving] = 0.0;
                    self.upper[leaving] = 0.0;
                    self.state[leaving] = ColState::AtLower;
                }
                for i in 0..m {
                    if i != r {
                        self.x_basic[i] += -dir * w[i] * theta;
                    }
                }
                self.basis[r] = q;
                self.state[q] = ColState::Basic(r);
                self.x_basic[r] = entering_value;
                for k in 0..m {
                    let br = self.binv[k * m + r];
                    if br == 0.0 {
                        continue;
                    }
                    let factor = br / piv;
                    let col = &mut self.binv[k * m..k * m + m];
                    for (i, wi) in w.iter().enumerate() {
                        col[i] -= factor * wi;
                    }
                    col[r] = factor;
                }
                self.pivots += 1;
            }

            // Degeneracy watch: switch to Bland's rule when the objective
            // stops improving.
            let obj = self.objective();
            if obj < best_obj - 1e-9 {
                best_obj = obj;
                stall = 0;
            } else {
                stall += 1;
                if stall > STALL_LIMIT {
                    self.bland = true;
                }
            }
        }
        Err(Error::SolverFailure(
            "simplex iteration limit exceeded".into(),
        ))
    }
}

pub(crate) fn solve_lp(
    p: &LpProblem,
    lower: &[f64],
    upper: &[f64],
    deadline: Option<Instant>,
) -> Result<LpSolve> {
    let m = p.nrows();
    let n = p.ncols;
    debug_assert_eq!(lower.len(), n);
    debug_assert_eq!(upper.len(), n);

    for j in 0..n {
        if lower[j] > upper[j] {
            return Ok(LpSolve::Done(LpOutcome::Infeasible));
        }
    }

    if m == 0 {
        // Pure bound optimization.
        let mut x = vec![0.0; n];
        for j in 0..n {
            let c = p.obj[j];
            x[j] = if c > 0.0 {
                if lower[j].is_finite() {
                    lower[j]
                } else {
                    return Ok(LpSolve::Done(LpOutcome::Unbounded));
                }
            } else if c < 0.0 {
                if upper[j].is_finite() {
                    upper[j]
                } else {
                    return Ok(LpSolve::Done(LpOutcome::Unbounded));
                }
            } else if lower[j].is_finite() {
                lower[j]
            } else if upper[j].is_finite() {
                upper[j]
            } else {
                0.0
            };
        }
        let obj = p.obj.iter().zip(&x).map(|(c, v)| c * v).sum();
        return Ok(LpSolve::Done(LpOutcome::Optimal { x, obj }));
    }

    let mem = (m as u64) * (m as u64) * 8;
    if mem > 2_000_000_000 {
        return Err(Error::SolverFailure(format!(
            "model with {m} rows exceeds the bundled solver's dense-basis budget; use the external solver bridge"
        )));
    }

    // Extended bounds and starting states: structural, then slacks.
    let mut lo = Vec::with_capacity(n + m);
    let mut up = Vec::with_capacity(n + m);
    let mut state = Vec::with_capacity(n + m);
    lo.extend_from_slice(lower);
    up.extend_from_slice(upper);
    for j in 0..n {
        state.push(if lo[j].is_finite() {
            ColState::AtLower
        } else if up[j].is_finite() {
            ColState::AtUpper
        } else {
            ColState::Free
        });
    }
    for rel in &p.row_rel {
        match rel {
            Rel::Le => {
                lo.push(0.0);
                up.push(f64::INFINITY);
                state.push(ColState::AtLower);
            }
            Rel::Ge => {
                lo.push(f64::NEG_INFINITY);
                up.push(0.0);
                state.push(ColState::AtUpper);
            }
            Rel::Eq => {
                lo.push(0.0);
                up.push(0.0);
                state.push(ColState::AtLower);
            }
        }
    }

    // Residuals with every nonbasic column at its starting value (slacks are
    // at zero in all three cases).
    let mut resid = p.rhs.clone();
    for j in 0..n {
        let v = match state[j] {
            ColState::AtLower => lo[j],
            ColState::AtUpper => up[j],
            _ => 0.0,
        };
        if v != 0.0 {
            for &(r, a) in &p.cols[j] {
                resid[r] -= a * v;
            }
        }
    }

    // Initial basis: the row's slack where it can absorb the residual, an
    // artificial otherwise.
    let mut basis = Vec::with_capacity(m);
    let mut art_rows: Vec<(usize, f64)> = Vec::new();
    let mut x_basic = Vec::with_capacity(m);
    let mut binv = vec![0.0f64; m * m];
    let mut cost_phase1 = vec![0.0f64; n + m];
    for i in 0..m {
        let r = resid[i];
        let slack_ok = match p.row_rel[i] {
            Rel::Le => r >= 0.0,
            Rel::Ge => r <= 0.0,
            Rel::Eq => r == 0.0,
        };
        if slack_ok {
            basis.push(n + i);
            state[n + i] = ColState::Basic(i);
            x_basic.push(r);
            binv[i * m + i] = 1.0;
        } else {
            let sign = if r >= 0.0 { 1.0 } else { -1.0 };
            let art = n + m + art_rows.len();
            art_rows.push((i, sign));
            lo.push(0.0);
            up.push(f64::INFINITY);
            basis.push(art);
            x_basic.push(r.abs());
            binv[i * m + i] = sign;
            cost_phase1.push(1.0);
            state.push(ColState::Basic(i));
        }
    }

    let n_art = art_rows.len();
    let total = n + m + n_art;
    let mut tab = Tableau {
        p,
        m,
        total,
        n_struct: n,
        art_rows,
        lower: lo,
        upper: up,
        cost: cost_phase1,
        state,
        basis,
        binv,
        x_basic,
        bland: false,
        pivots: 0,
        last_refactor: 0,
    };

    if n_art > 0 {
        match tab.optimize(total, deadline, true)? {
            PhaseOutcome::Optimal => {}
            PhaseOutcome::Unbounded => {
                return Err(Error::SolverFailure("phase-1 objective unbounded".into()))
            }
            PhaseOutcome::Deadline => return Ok(LpSolve::Deadline),
        }
        if tab.objective() > FEAS_TOL {
            return Ok(LpSolve::Done(LpOutcome::Infeasible));
        }
        // Pin every artificial at zero; a basic one may still leave the basis
        // degenerately but can no longer move away from zero.
        for a in 0..n_art {
            let j = n + m + a;
            tab.lower[j] = 0.0;
            tab.upper[j] = 0.0;
            if !matches!(tab.state[j], ColState::Basic(_)) {
                tab.state[j] = ColState::AtLower;
            }
        }
    }

    tab.cost = vec![0.0; total];
    tab.cost[..n].copy_from_slice(&p.obj);
    tab.bland = false;
    match tab.optimize(n + m, deadline, false)? {
        PhaseOutcome::Deadline => Ok(LpSolve::Deadline),
        PhaseOutcome::Unbounded => Ok(LpSolve::Done(LpOutcome::Unbounded)),
        PhaseOutcome::Optimal => {
            for a in 0..n_art {
                let j = n + m + a;
                if tab.col_value(j).abs() > 1e-6 {
                    return Err(Error::SolverFailure(
                        "artificial variable stuck above zero".into(),
                    ));
                }
            }
            let x: Vec<f64> = (0..n).map(|j| tab.col_value(j)).collect();
            let obj = p.obj.iter().zip(&x).map(|(c, v)| c * v).sum();
            Ok(LpSolve::Done(LpOutcome::Optimal { x, obj }))
        }
    }
}
