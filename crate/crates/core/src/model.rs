//! Shared domain types: scenario sets, surrogate trees, decision criteria and
//! the evaluation contract used by every problem and method in this crate.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Optimization direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// `true` if `a` is strictly better than `b` under this sense.
    pub fn is_better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Minimize => a < b,
            Sense::Maximize => a > b,
        }
    }

    /// The worst representable value under this sense.
    pub fn worst(self) -> f64 {
        match self {
            Sense::Minimize => f64::INFINITY,
            Sense::Maximize => f64::NEG_INFINITY,
        }
    }
}

/// How per-scenario objective values are aggregated into one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionCriterion {
    /// Probability-weighted sum of the per-scenario values.
    Laplace,
    /// Worst case with respect to the optimization sense.
    Robust,
}

/// A finite set of training (or test) scenarios.
///
/// Each scenario carries an instance-feature vector used for tree queries and
/// a cost vector over the problem's decision dimension (item profits or edge
/// costs). Probabilities default to the uniform distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub features: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
    #[serde(default)]
    pub ids: Vec<String>,
}

impl ScenarioSet {
    /// Builds a scenario set with uniform probabilities.
    pub fn new(features: Vec<Vec<f64>>, costs: Vec<Vec<f64>>) -> Result<Self> {
        let n = features.len();
        let p = vec![1.0 / n.max(1) as f64; n];
        Self::with_probabilities(features, costs, p)
    }

    pub fn with_probabilities(
        features: Vec<Vec<f64>>,
        costs: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    ) -> Result<Self> {
        let ids = (0..features.len()).map(|j| format!("s{j}")).collect();
        let set = ScenarioSet {
            features,
            probabilities,
            costs,
            ids,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.len();
        if n == 0 {
            return Err(Error::invalid(
                "scenario set must contain at least one scenario",
            ));
        }
        if self.costs.len() != n || self.probabilities.len() != n {
            return Err(Error::invalid(format!(
                "inconsistent scenario set: {} feature rows, {} cost rows, {} probabilities",
                n,
                self.costs.len(),
                self.probabilities.len()
            )));
        }
        let f = self.features[0].len();
        if self.features.iter().any(|row| row.len() != f) {
            return Err(Error::invalid("feature rows must share one dimension"));
        }
        let d = self.costs[0].len();
        if self.costs.iter().any(|row| row.len() != d) {
            return Err(Error::invalid("cost rows must share one dimension"));
        }
        if self
            .probabilities
            .iter()
            .any(|&p| !(p >= 0.0) || !p.is_finite())
        {
            return Err(Error::invalid(
                "probabilities must be nonnegative and finite",
            ));
        }
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, |r| r.len())
    }

    pub fn cost_dim(&self) -> usize {
        self.costs.first().map_or(0, |r| r.len())
    }
}

/// A meta-solution: a set of feasible solutions described by shared
/// solution-feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaSolution {
    /// Per-category budgets for a knapsack problem.
    Budgets(Vec<f64>),
    /// Ordered district sequence for a shortest-path problem.
    Districts(Vec<usize>),
}

impl MetaSolution {
    pub fn as_budgets(&self) -> Result<&[f64]> {
        match self {
            MetaSolution::Budgets(b) => Ok(b),
            _ => Err(Error::invalid("expected a budget meta-solution")),
        }
    }

    pub fn as_districts(&self) -> Result<&[usize]> {
        match self {
            MetaSolution::Districts(d) => Ok(d),
            _ => Err(Error::invalid("expected a district-sequence meta-solution")),
        }
    }
}

/// A single concrete solution ("micro"-solution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MicroSolution {
    /// Item selection for a knapsack problem.
    Items(Vec<bool>),
    /// An s-t path given as an ordered list of edge indices.
    Path(Vec<usize>),
}

/// One tree query: is feature `feature` of the scenario at most `threshold`?
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub feature: usize,
    pub threshold: f64,
}

/// A univariate binary decision tree of fixed depth with one shared query per
/// depth and one payload per leaf. Scenarios whose queried feature value is
/// at most the threshold go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTree<L> {
    pub depth: usize,
    pub queries: Vec<Query>,
    pub leaves: Vec<L>,
}

/// Leaf indices (0-based) reachable through the right child of the query at
/// `depth_q` (1-based) in a tree of depth `depth`.
pub fn right_leaf_set(depth: usize, depth_q: usize) -> Vec<usize> {
    let leaves = 1usize << depth;
    (0..leaves)
        .filter(|k| (k >> (depth - depth_q)) & 1 == 1)
        .collect()
}

impl<L> SurrogateTree<L> {
    pub fn new(queries: Vec<Query>, leaves: Vec<L>) -> Result<Self> {
        let depth = queries.len();
        if leaves.len() != 1 << depth {
            return Err(Error::invalid(format!(
                "a depth-{depth} tree needs {} leaves, got {}",
                1usize << depth,
                leaves.len()
            )));
        }
        Ok(SurrogateTree {
            depth,
            queries,
            leaves,
        })
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    /// Routes a feature vector through the queries and returns the 0-based
    /// leaf index. Ties at a threshold go left.
    pub fn route(&self, features: &[f64]) -> Result<usize> {
        let mut leaf = 0usize;
        for (q, query) in self.queries.iter().enumerate() {
            let value = *features
                .get(query.feature)
                .ok_or(Error::DimensionMismatch {
                    expected: query.feature + 1,
                    got: features.len(),
                    context: "feature vector shorter than tree query index",
                })?;
            if value > query.threshold {
                leaf |= 1 << (self.depth - 1 - q);
            }
        }
        Ok(leaf)
    }

    pub fn leaf(&self, index: usize) -> &L {
        &self.leaves[index]
    }

    pub fn map_leaves<M>(self, f: impl FnMut(L) -> M) -> SurrogateTree<M> {
        SurrogateTree {
            depth: self.depth,
            queries: self.queries,
            leaves: self.leaves.into_iter().map(f).collect(),
        }
    }
}

impl<L: Serialize + for<'de> Deserialize<'de>> SurrogateTree<L> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: SurrogateTree<L> = serde_json::from_str(text)?;
        if tree.leaves.len() != 1 << tree.depth || tree.queries.len() != tree.depth {
            return Err(Error::invalid("tree document has inconsistent depth"));
        }
        Ok(tree)
    }
}

/// Aggregates per-scenario objective values under a decision criterion.
pub fn aggregate(
    criterion: DecisionCriterion,
    values: &[f64],
    probabilities: &[f64],
    sense: Sense,
) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty value list"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("aggregate requires finite values"));
    }
    match criterion {
        DecisionCriterion::Laplace => {
            if probabilities.len() != values.len() {
                return Err(Error::DimensionMismatch {
                    expected: values.len(),
                    got: probabilities.len(),
                    context: "probability vector for aggregation",
                });
            }
            Ok(values.iter().zip(probabilities).map(|(v, p)| v * p).sum())
        }
        DecisionCriterion::Robust => {
            let worst = match sense {
                Sense::Minimize => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Sense::Maximize => values.iter().cloned().fold(f64::INFINITY, f64::min),
            };
            Ok(worst)
        }
    }
}

/// Result of scaling an objective against the single-solution and
/// per-scenario-optimum anchors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaledValue {
    Scaled(f64),
    /// Anchors coincide; scaling is undefined and the raw value is reported.
    Degenerate {
        raw: f64,
    },
}

impl ScaledValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            ScaledValue::Scaled(v) => Some(*v),
            ScaledValue::Degenerate { .. } => None,
        }
    }
}

/// Scales `obj` so that the best single micro-solution maps to 0 and the
/// per-scenario optimum maps to 1. Higher is better for both senses.
pub fn scaled_objective(obj: f64, obj_micro1: f64, obj_opt: f64) -> ScaledValue {
    let denom = obj_opt - obj_micro1;
    if denom.abs() <= 1e-12 * obj_opt.abs().max(1.0) {
        ScaledValue::Degenerate { raw: obj }
    } else {
        let v = (obj - obj_micro1) / denom;
        ScaledValue::Scaled(if v == 0.0 { 0.0 } else { v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q2_tree() -> SurrogateTree<usize> {
        SurrogateTree::new(
            vec![
                Query {
                    feature: 0,
                    threshold: 5.0,
                },
                Query {
                    feature: 1,
                    threshold: 3.0,
                },
            ],
            vec![0, 1, 2, 3],
        )
        .unwrap()
    }

    #[test]
    fn route_both_left_reaches_first_leaf() {
        let tree = q2_tree();
        assert_eq!(tree.route(&[4.0, 2.0]).unwrap(), 0);
    }

    #[test]
    fn route_right_at_depth_one_reaches_third_leaf() {
        // Right at depth 1 lands in {3, 4} (1-based), left at depth 2 picks 3.
        let tree = q2_tree();
        assert_eq!(tree.route(&[6.0, 2.0]).unwrap(), 2);
    }

    #[test]
    fn route_depth_zero_always_first_leaf() {
        let tree: SurrogateTree<usize> = SurrogateTree::new(vec![], vec![7]).unwrap();
        assert_eq!(tree.route(&[1.0, 2.0, 3.0]).unwrap(), 0);
        assert_eq!(tree.route(&[]).unwrap(), 0);
    }

    #[test]
    fn route_ties_go_left() {
        let tree = q2_tree();
        assert_eq!(tree.route(&[5.0, 3.0]).unwrap(), 0);
    }

    #[test]
    fn route_rejects_short_feature_vector() {
        let tree = q2_tree();
        assert!(tree.route(&[1.0]).is_err());
    }

    #[test]
    fn right_leaf_sets_match_depth_two_convention() {
        // 1-based: S_1 = {3, 4}, S_2 = {2, 4}.
        assert_eq!(right_leaf_set(2, 1), vec![2, 3]);
        assert_eq!(right_leaf_set(2, 2), vec![1, 3]);
    }

    #[test]
    fn aggregate_laplace_weighted_sum() {
        let v = aggregate(
            DecisionCriterion::Laplace,
            &[2.0, 4.0],
            &[0.5, 0.5],
            Sense::Minimize,
        )
        .unwrap();
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_robust_takes_worst_case() {
        let v = aggregate(
            DecisionCriterion::Robust,
            &[2.0, 4.0],
            &[0.5, 0.5],
            Sense::Minimize,
        )
        .unwrap();
        assert_eq!(v, 4.0);
        let v = aggregate(
            DecisionCriterion::Robust,
            &[2.0, 4.0],
            &[0.5, 0.5],
            Sense::Maximize,
        )
        .unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn aggregate_single_value_identity() {
        let v = aggregate(DecisionCriterion::Laplace, &[5.5], &[1.0], Sense::Maximize).unwrap();
        assert_eq!(v, 5.5);
    }

    #[test]
    fn aggregate_empty_rejected() {
        assert!(aggregate(DecisionCriterion::Laplace, &[], &[], Sense::Minimize).is_err());
    }

    #[test]
    fn scaled_objective_anchors() {
        assert_eq!(scaled_objective(10.0, 5.0, 10.0), ScaledValue::Scaled(1.0));
        assert_eq!(scaled_objective(5.0, 5.0, 10.0), ScaledValue::Scaled(0.0));
        assert_eq!(scaled_objective(7.0, 5.0, 10.0), ScaledValue::Scaled(0.4));
    }

    #[test]
    fn scaled_objective_degenerate_flagged() {
        match scaled_objective(3.0, 5.0, 5.0) {
            ScaledValue::Degenerate { raw } => assert_eq!(raw, 3.0),
            other => panic!("expected degenerate, got {other:?}"),
        }
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let err = ScenarioSet::with_probabilities(
            vec![vec![1.0], vec![2.0]],
            vec![vec![1.0], vec![2.0]],
            vec![0.6, 0.6],
        );
        assert!(err.is_err());
    }

    #[test]
    fn tree_json_round_trip_field_names() {
        let tree = SurrogateTree::new(
            vec![Query {
                feature: 1,
                threshold: 5.0,
            }],
            vec![
                MetaSolution::Budgets(vec![2.0, 2.0]),
                MetaSolution::Budgets(vec![1.0, 3.0]),
            ],
        )
        .unwrap();
        let json = tree.to_json().unwrap();
        assert!(json.contains("\"depth\""));
        assert!(json.contains("\"queries\""));
        assert!(json.contains("\"feature\""));
        assert!(json.contains("\"threshold\""));
        assert!(json.contains("\"leaves\""));
        assert!(json.contains("\"budgets\""));
        let back: SurrogateTree<MetaSolution> = SurrogateTree::from_json(&json).unwrap();
        assert_eq!(back, tree);
    }

    proptest! {
        /// route is total and partitions feature space consistently with the
        /// per-depth thresholds.
        #[test]
        fn route_is_total_and_consistent(
            f0 in -100.0f64..100.0,
            f1 in -100.0f64..100.0,
            t0 in -100.0f64..100.0,
            t1 in -100.0f64..100.0,
        ) {
            let tree = SurrogateTree::new(
                vec![Query { feature: 0, threshold: t0 }, Query { feature: 1, threshold: t1 }],
                vec![0usize, 1, 2, 3],
            ).unwrap();
            let leaf = tree.route(&[f0, f1]).unwrap();
            prop_assert!(leaf < 4);
            let expect = usize::from(f0 > t0) * 2 + usize::from(f1 > t1);
            prop_assert_eq!(leaf, expect);
        }

        /// scaled_objective is affine and order-preserving in obj.
        #[test]
        fn scaled_objective_order_preserving(
            a in -50.0f64..50.0,
            b in -50.0f64..50.0,
            micro in -10.0f64..10.0,
        ) {
            let opt = micro + 7.5;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let sl = scaled_objective(lo, micro, opt).value().unwrap();
            let sh = scaled_objective(hi, micro, opt).value().unwrap();
            prop_assert!(sl <= sh + 1e-12);
        }

        /// Laplace is linear in the values; Robust is monotone in every
        /// coordinate.
        #[test]
        fn aggregate_linearity_and_monotonicity(
            v in proptest::collection::vec(-20.0f64..20.0, 1..6),
            w in proptest::collection::vec(-20.0f64..20.0, 1..6),
            alpha in -3.0f64..3.0,
            bump in 0.0f64..5.0,
            idx in 0usize..6,
        ) {
            let n = v.len().min(w.len());
            let (v, w) = (&v[..n], &w[..n]);
            let p = vec![1.0 / n as f64; n];
            let mix: Vec<f64> = v.iter().zip(w).map(|(a, b)| alpha * a + b).collect();
            let lin = aggregate(DecisionCriterion::Laplace, &mix, &p, Sense::Minimize).unwrap();
            let parts = alpha * aggregate(DecisionCriterion::Laplace, v, &p, Sense::Minimize).unwrap()
                + aggregate(DecisionCriterion::Laplace, w, &p, Sense::Minimize).unwrap();
            prop_assert!((lin - parts).abs() < 1e-9);

            let mut bumped = v.to_vec();
            bumped[idx % n] += bump;
            for sense in [Sense::Minimize, Sense::Maximize] {
                let before = aggregate(DecisionCriterion::Robust, v, &p, sense).unwrap();
                let after = aggregate(DecisionCriterion::Robust, &bumped, &p, sense).unwrap();
                prop_assert!(after + 1e-12 >= before);
            }
        }
    }
}
