//! Emits the shared decision-tree constraint block into a MILP model and
//! decodes solved variables back into a tree.
//!
//! The block introduces, for a fixed depth Q over training feature rows:
//! one-leaf-per-scenario assignment binaries, one-feature-per-query binaries
//! and a continuous threshold per depth, linked through big-M rows so that a
//! scenario reaches the right child of the query at depth q exactly when its
//! queried feature value exceeds the threshold.

use crate::error::{Error, Result};
use crate::milp::{MilpModel, MilpSolution, Rel, VarId};
use crate::model::{right_leaf_set, Query, SurrogateTree};

/// Variable handles and parameters of one emitted tree block.
#[derive(Debug, Clone)]
pub struct TreeBlock {
    pub depth: usize,
    /// leaf_vars[j][k]: scenario j assigned to leaf k.
    pub leaf_vars: Vec<Vec<VarId>>,
    /// query_vars[q]: (feature index, indicator) pairs for maskable features.
    pub query_vars: Vec<Vec<(usize, VarId)>>,
    /// threshold_vars[q]: the threshold at depth q.
    pub threshold_vars: Vec<VarId>,
    pub epsilon: f64,
    pub big_m: f64,
    features: Vec<Vec<f64>>,
}

impl TreeBlock {
    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    pub fn scenario_count(&self) -> usize {
        self.leaf_vars.len()
    }
}

/// Default strict-inequality offset: half the smallest positive gap between
/// distinct maskable feature values, floored at 1e-4. `None` when every
/// maskable value is identical, in which case no threshold can separate.
fn default_epsilon(features: &[Vec<f64>], mask: &[usize]) -> Option<f64> {
    let mut values: Vec<f64> = mask
        .iter()
        .flat_map(|&f| features.iter().map(move |row| row[f]))
        .collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut min_gap = f64::INFINITY;
    for w in values.windows(2) {
        let gap = w[1] - w[0];
        if gap > 0.0 && gap < min_gap {
            min_gap = gap;
        }
    }
    min_gap.is_finite().then(|| (min_gap / 2.0).max(1e-4))
}

/// Adds the tree-structure block for `features` (N rows) at `depth` to
/// `model`. `mask` restricts which features the queries may use; `None`
/// allows all of them.
pub fn emit_tree_block(
    model: &mut MilpModel,
    features: &[Vec<f64>],
    depth: usize,
    mask: Option<&[usize]>,
) -> Result<TreeBlock> {
    let n = features.len();
    if n == 0 {
        return Err(Error::invalid("tree block needs at least one scenario"));
    }
    if depth == 0 {
        return Err(Error::invalid("tree block needs depth >= 1"));
    }
    let f_dim = features[0].len();
    if features.iter().any(|r| r.len() != f_dim) {
        return Err(Error::invalid("feature rows must share one dimension"));
    }
    let mask: Vec<usize> = match mask {
        Some(m) if m.is_empty() => return Err(Error::invalid("feature mask must be nonempty")),
        Some(m) => {
            if m.iter().any(|&f| f >= f_dim) {
                return Err(Error::invalid("feature mask index out of range"));
            }
            m.to_vec()
        }
        None => (0..f_dim).collect(),
    };

    let epsilon = default_epsilon(features, &mask).ok_or_else(|| {
        Error::invalid(
            "all maskable feature values are identical; no threshold can separate scenarios",
        )
    })?;
    let lo = mask
        .iter()
        .flat_map(|&f| features.iter().map(move |r| r[f]))
        .fold(f64::INFINITY, f64::min);
    let hi = mask
        .iter()
        .flat_map(|&f| features.iter().map(move |r| r[f]))
        .fold(f64::NEG_INFINITY, f64::max);
    let big_m = (hi - lo) + epsilon;

    let leaves = 1usize << depth;
    let leaf_vars: Vec<Vec<VarId>> = (0..n)
        .map(|j| {
            (0..leaves)
                .map(|k| model.add_binary(format!("l_{j}_{k}"), 0.0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let query_vars: Vec<Vec<(usize, VarId)>> = (0..depth)
        .map(|q| {
            mask.iter()
                .map(|&f| Ok((f, model.add_binary(format!("d_{f}_{q}"), 0.0)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let threshold_vars: Vec<VarId> = (0..depth)
        .map(|q| model.add_continuous(format!("b_{q}"), lo - epsilon, hi, 0.0))
        .collect::<Result<Vec<_>>>()?;

    // Exactly one leaf per scenario.
    for (j, row) in leaf_vars.iter().enumerate() {
        model.add_constr(
            format!("assign_{j}"),
            row.iter().map(|&v| (v, 1.0)).collect(),
            Rel::Eq,
            1.0,
        )?;
    }
    // Exactly one feature per query.
    for (q, row) in query_vars.iter().enumerate() {
        model.add_constr(
            format!("query_{q}"),
            row.iter().map(|&(_, v)| (v, 1.0)).collect(),
            Rel::Eq,
            1.0,
        )?;
    }
    // Threshold linking. With right = sum of the leaf indicators of the
    // right-reachable set at depth q (0 or 1 for an integral assignment):
    //   phi[d_q] <= b_q + M * right
    //   b_q + eps - M (1 - right) <= phi[d_q]
    for q in 0..depth {
        let right_set = right_leaf_set(depth, q + 1);
        for j in 0..n {
            let mut left_terms: Vec<(VarId, f64)> = query_vars[q]
                .iter()
                .map(|&(f, v)| (v, features[j][f]))
                .collect();
            left_terms.push((threshold_vars[q], -1.0));
            for &k in &right_set {
                left_terms.push((leaf_vars[j][k], -big_m));
            }
            model.add_constr(format!("left_{q}_{j}"), left_terms, Rel::Le, 0.0)?;

            let mut right_terms: Vec<(VarId, f64)> = query_vars[q]
                .iter()
                .map(|&(f, v)| (v, -features[j][f]))
                .collect();
            right_terms.push((threshold_vars[q], 1.0));
            for &k in &right_set {
                right_terms.push((leaf_vars[j][k], big_m));
            }
            model.add_constr(
                format!("right_{q}_{j}"),
                right_terms,
                Rel::Le,
                big_m - epsilon,
            )?;
        }
    }

    Ok(TreeBlock {
        depth,
        leaf_vars,
        query_vars,
        threshold_vars,
        epsilon,
        big_m,
        features: features.to_vec(),
    })
}

/// Extracts the per-depth queries from a solved block.
pub fn decode_queries(block: &TreeBlock, solution: &MilpSolution) -> Result<Vec<Query>> {
    let mut queries = Vec::with_capacity(block.depth);
    for q in 0..block.depth {
        let mut chosen: Option<usize> = None;
        for &(f, v) in &block.query_vars[q] {
            let x = solution.value(v);
            if (x - x.round()).abs() > 1e-4 {
                return Err(Error::SolverFailure(format!(
                    "query indicator d_{f}_{q} is fractional: {x}"
                )));
            }
            if x > 0.5 {
                if chosen.is_some() {
                    return Err(Error::SolverFailure(format!(
                        "multiple features selected at depth {q}"
                    )));
                }
                chosen = Some(f);
            }
        }
        let feature = chosen
            .ok_or_else(|| Error::SolverFailure(format!("no feature selected at depth {q}")))?;
        queries.push(Query {
            feature,
            threshold: solution.value(block.threshold_vars[q]),
        });
    }
    Ok(queries)
}

/// The leaf each scenario is assigned to by the solved block.
pub fn decode_assignments(block: &TreeBlock, solution: &MilpSolution) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(block.scenario_count());
    for (j, row) in block.leaf_vars.iter().enumerate() {
        let mut leaf: Option<usize> = None;
        for (k, &v) in row.iter().enumerate() {
            let x = solution.value(v);
            if (x - x.round()).abs() > 1e-4 {
                return Err(Error::SolverFailure(format!(
                    "leaf indicator l_{j}_{k} is fractional: {x}"
                )));
            }
            if x > 0.5 {
                if leaf.is_some() {
                    return Err(Error::SolverFailure(format!(
                        "scenario {j} assigned to multiple leaves"
                    )));
                }
                leaf = Some(k);
            }
        }
        out.push(
            leaf.ok_or_else(|| Error::SolverFailure(format!("scenario {j} assigned to no leaf")))?,
        );
    }
    Ok(out)
}

/// Builds a tree from a solved block and verifies that routing each training
/// row reproduces its solved leaf assignment.
///
/// Raw thresholds can sit a feasibility tolerance away from a training value,
/// which would flip that scenario's strict comparison; each threshold is
/// therefore snapped between the queried values going left and right.
pub fn decode_tree<L>(
    block: &TreeBlock,
    solution: &MilpSolution,
    leaves: Vec<L>,
) -> Result<SurrogateTree<L>> {
    let mut queries = decode_queries(block, solution)?;
    let assignments = decode_assignments(block, solution)?;
    for (q, query) in queries.iter_mut().enumerate() {
        let right_set = right_leaf_set(block.depth, q + 1);
        let mut left_max = f64::NEG_INFINITY;
        let mut right_min = f64::INFINITY;
        for (j, row) in block.features.iter().enumerate() {
            let v = row[query.feature];
            if right_set.contains(&assignments[j]) {
                right_min = right_min.min(v);
            } else {
                left_max = left_max.max(v);
            }
        }
        query.threshold = match (left_max.is_finite(), right_min.is_finite()) {
            (true, true) => {
                if left_max >= right_min {
                    return Err(Error::SolverFailure(format!(
                        "solution separates nothing at depth {q}: left max {left_max} >= right min {right_min}"
                    )));
                }
                (left_max + right_min) / 2.0
            }
            (true, false) => query.threshold.max(left_max),
            (false, true) => {
                if query.threshold < right_min {
                    query.threshold
                } else {
                    right_min - block.epsilon / 2.0
                }
            }
            (false, false) => query.threshold,
        };
    }
    let tree = SurrogateTree::new(queries, leaves)?;
    for (j, row) in block.features.iter().enumerate() {
        let routed = tree.route(row)?;
        if routed != assignments[j] {
            return Err(Error::SolverFailure(format!(
                "decoded tree routes scenario {j} to leaf {routed}, solver assigned {}",
                assignments[j]
            )));
        }
    }
    Ok(tree)
}
