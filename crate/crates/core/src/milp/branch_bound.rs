//! Exact branch-and-bound over LP relaxations.
//!
//! Best-bound node selection, most-fractional branching and a deterministic
//! rounding dive for early incumbents. Node order and tie-breaks are fixed, so
//! a solve is reproducible bit for bit.

use super::simplex::{solve_lp, LpOutcome, LpProblem, LpSolve};
use super::{MilpModel, MilpSolution, SolveOptions, SolveStatus};
use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

const DIVE_INTERVAL: u64 = 64;
const DIVE_MAX_ROUNDS: usize = 128;

/// Diagnostics from one branch-and-bound run, in model-sense values.
#[derive(Debug, Clone, Default)]
pub struct SearchStats {
    pub nodes: u64,
    pub root_bound: Option<f64>,
    /// Accepted incumbents in order, each with the LP bound of the node (or
    /// dive) that produced it.
    pub incumbents: Vec<(f64, f64)>,
}

struct Node {
    /// Bound changes on integer columns relative to the root.
    changes: Vec<(usize, f64, f64)>,
    /// LP objective of the parent relaxation (minimization form).
    bound: f64,
    seq: u64,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for Node {}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the lowest bound pops first.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'a> {
    p: &'a LpProblem,
    integer: Vec<bool>,
    root_lower: Vec<f64>,
    root_upper: Vec<f64>,
    int_tol: f64,
    gap_tol: f64,
    deadline: Option<Instant>,
    incumbent: Option<(f64, Vec<f64>)>,
    stats: SearchStats,
}

impl<'a> Search<'a> {
    fn apply(&self, changes: &[(usize, f64, f64)]) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.root_lower.clone();
        let mut up = self.root_upper.clone();
        for &(j, l, u) in changes {
            lo[j] = lo[j].max(l);
            up[j] = up[j].min(u);
        }
        (lo, up)
    }

    fn most_fractional(&self, x: &[f64]) -> Option<(usize, f64)> {
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..x.len() {
            if !self.integer[j] {
                continue;
            }
            let frac = x[j] - x[j].floor();
            let dist = (frac - 0.5).abs();
            if frac.min(1.0 - frac) <= self.int_tol {
                continue;
            }
            if pick.map_or(true, |(_, best)| dist < best - 1e-12) {
                pick = Some((j, dist));
            }
        }
        pick.map(|(j, _)| (j, x[j]))
    }

    fn snap(&self, x: &mut [f64], lo: &[f64], up: &[f64]) {
        for j in 0..x.len() {
            if self.integer[j] {
                x[j] = x[j].round();
            }
            x[j] = x[j].clamp(lo[j], up[j]);
        }
    }

    fn accept(&mut self, obj: f64, x: Vec<f64>, node_bound: f64) {
        let improved = self
            .incumbent
            .as_ref()
            .map_or(true, |(best, _)| obj < *best - 1e-12);
        if improved {
            self.stats.incumbents.push((obj, node_bound));
            self.incumbent = Some((obj, x));
        }
    }

    /// Deterministic rounding dive from a fractional LP point. A fixing that
    /// kills the relaxation (or prices worse than the incumbent) is retried
    /// once on the opposite side before the dive gives up.
    fn dive(
        &mut self,
        changes: &[(usize, f64, f64)],
        start_x: &[f64],
        node_bound: f64,
    ) -> Result<()> {
        let (mut lo, mut up) = self.apply(changes);
        let mut x = start_x.to_vec();
        for _ in 0..DIVE_MAX_ROUNDS {
            let Some((j, value)) = self.most_fractional(&x) else {
                let mut xi = x.clone();
                self.snap(&mut xi, &lo, &up);
                let obj: f64 = self.p.obj.iter().zip(&xi).map(|(c, v)| c * v).sum();
                if self
                    .incumbent
                    .as_ref()
                    .map_or(true, |(best, _)| obj < *best - 1e-12)
                {
                    self.accept(obj, xi, node_bound);
                }
                return Ok(());
            };
            let near = value.round();
            let far = if near > value {
                value.floor()
            } else {
                value.ceil()
            };
            let mut advanced = false;
            for fix in [near, far] {
                let (fl, fu) = (fix.max(lo[j]), fix.min(up[j]));
                if fl > fu {
                    continue;
                }
                let (mut tl, mut tu) = (lo.clone(), up.clone());
                tl[j] = fl;
                tu[j] = fu;
                match solve_lp(self.p, &tl, &tu, self.deadline)? {
                    LpSolve::Deadline => return Ok(()),
                    LpSolve::Done(LpOutcome::Optimal { x: nx, obj }) => {
                        if let Some((best, _)) = &self.incumbent {
                            if obj >= *best - self.gap_tol {
                                continue;
                            }
                        }
                        x = nx;
                        lo = tl;
                        up = tu;
                        advanced = true;
                        break;
                    }
                    LpSolve::Done(_) => continue,
                }
            }
            if !advanced {
                return Ok(());
            }
        }
        Ok(())
    }
}

pub(crate) fn solve(model: &MilpModel, opts: &SolveOptions) -> Result<MilpSolution> {
    solve_with_stats(model, opts).map(|(sol, _)| sol)
}

/// Like [`solve`], additionally returning search diagnostics.
pub fn solve_with_stats(
    model: &MilpModel,
    opts: &SolveOptions,
) -> Result<(MilpSolution, SearchStats)> {
    let start = Instant::now();
    let p = LpProblem::from_model(model);
    let sign = p.obj_sign;
    let deadline = opts.time_limit.map(|d| start + d);

    let mut search = Search {
        p: &p,
        integer: model.vars.iter().map(|v| v.integer).collect(),
        root_lower: model.vars.iter().map(|v| v.lower).collect(),
        root_upper: model.vars.iter().map(|v| v.upper).collect(),
        int_tol: opts.int_tol,
        gap_tol: opts.gap_tol,
        deadline,
        incumbent: None,
        stats: SearchStats::default(),
    };

    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    heap.push(Node {
        changes: Vec::new(),
        bound: f64::NEG_INFINITY,
        seq: 0,
    });
    let mut seq = 1u64;
    let mut nodes = 0u64;
    let mut exhausted = true;
    let mut root_status: Option<SolveStatus> = None;

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &search.incumbent {
            if node.bound >= *best - opts.gap_tol {
                // Best-bound order: every remaining node is no better.
                exhausted = true;
                break;
            }
        }
        if let Some(dl) = deadline {
            if Instant::now() >= dl {
                heap.push(node);
                exhausted = false;
                break;
            }
        }
        if let Some(limit) = opts.node_limit {
            if nodes >= limit {
                heap.push(node);
                exhausted = false;
                break;
            }
        }

        nodes += 1;
        let (lo, up) = search.apply(&node.changes);
        let lp = match solve_lp(&p, &lo, &up, deadline)? {
            LpSolve::Deadline => {
                heap.push(node);
                exhausted = false;
                break;
            }
            LpSolve::Done(outcome) => outcome,
        };

        let (x, obj) = match lp {
            LpOutcome::Infeasible => {
                if nodes == 1 {
                    root_status = Some(SolveStatus::Infeasible);
                }
                continue;
            }
            LpOutcome::Unbounded => {
                if nodes == 1 {
                    root_status = Some(SolveStatus::Unbounded);
                    exhausted = true;
                    break;
                }
                return Err(Error::SolverFailure(
                    "node relaxation unbounded below a bounded root".into(),
                ));
            }
            LpOutcome::Optimal { x, obj } => (x, obj),
        };
        if nodes == 1 {
            search.stats.root_bound = Some(sign * obj);
        }

        if let Some((best, _)) = &search.incumbent {
            if obj >= *best - opts.gap_tol {
                continue;
            }
        }

        match search.most_fractional(&x) {
            None => {
                let mut xi = x;
                search.snap(&mut xi, &lo, &up);
                let int_obj: f64 = p.obj.iter().zip(&xi).map(|(c, v)| c * v).sum();
                search.accept(int_obj, xi, obj);
            }
            Some((j, value)) => {
                if nodes == 1 || nodes % DIVE_INTERVAL == 0 {
                    search.dive(&node.changes, &x, obj)?;
                }
                let mut left = node.changes.clone();
                left.push((j, f64::NEG_INFINITY, value.floor()));
                let mut right = node.changes;
                right.push((j, value.ceil(), f64::INFINITY));
                heap.push(Node {
                    changes: left,
                    bound: obj,
                    seq,
                });
                heap.push(Node {
                    changes: right,
                    bound: obj,
                    seq: seq + 1,
                });
                seq += 2;
            }
        }
    }

    search.stats.nodes = nodes;
    let seconds = start.elapsed().as_secs_f64();

    if let Some(status) = root_status {
        let sol = match status {
            SolveStatus::Infeasible => MilpSolution::infeasible(model.sense(), seconds, nodes),
            SolveStatus::Unbounded => MilpSolution {
                status: SolveStatus::Unbounded,
                values: Vec::new(),
                objective: -model.sense().worst(),
                bound: -model.sense().worst(),
                seconds,
                nodes,
            },
            _ => unreachable!(),
        };
        if search.incumbent.is_none() {
            return Ok((sol, search.stats));
        }
    }

    match search.incumbent.take() {
        Some((obj, x)) => {
            // Open-node bound; with the heap drained the incumbent is proven.
            let open_bound = heap.peek().map(|n| n.bound).unwrap_or(obj);
            let bound = if exhausted && heap.is_empty() {
                obj
            } else {
                open_bound.min(obj)
            };
            let proven = exhausted && (heap.is_empty() || bound >= obj - opts.gap_tol);
            let stats = search.stats;
            Ok((
                MilpSolution {
                    status: if proven {
                        SolveStatus::Optimal
                    } else {
                        SolveStatus::Feasible
                    },
                    values: x,
                    objective: sign * obj,
                    bound: sign * bound,
                    seconds,
                    nodes,
                },
                stats,
            ))
        }
        None => {
            if exhausted {
                Ok((
                    MilpSolution::infeasible(model.sense(), seconds, nodes),
                    search.stats,
                ))
            } else {
                Err(Error::TimeLimitNoIncumbent)
            }
        }
    }
}
