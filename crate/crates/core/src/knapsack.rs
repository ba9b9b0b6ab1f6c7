//! Knapsack instantiation: nominal solver, per-category budget
//! meta-solutions, the surrogate MIP, the micro-tree benchmark MIP and
//! meta-solution evaluation.

use crate::error::{Error, Result};
use crate::milp::{solve_bundled, MilpModel, MilpSolution, Rel, SolveOptions, VarId};
use crate::model::{MetaSolution, MicroSolution, ScenarioSet, Sense, SurrogateTree};
use crate::tree_block::{self, TreeBlock};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A knapsack problem with item categories and profit scenarios.
///
/// Scenario cost vectors are the per-item profits; instance features default
/// to the same vectors.
#[derive(Debug, Clone)]
pub struct KnapsackInstance {
    pub weights: Vec<f64>,
    pub capacity: f64,
    /// Item indices per category; the categories partition the items.
    pub categories: Vec<Vec<usize>>,
    pub scenarios: ScenarioSet,
}

impl KnapsackInstance {
    pub fn new(
        weights: Vec<f64>,
        capacity: f64,
        categories: Vec<Vec<usize>>,
        scenarios: ScenarioSet,
    ) -> Result<Self> {
        let inst = KnapsackInstance {
            weights,
            capacity,
            categories,
            scenarios,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if self.weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::invalid("item weights must be positive"));
        }
        if self.capacity <= 0.0 {
            return Err(Error::invalid("capacity must be positive"));
        }
        let mut seen = vec![false; n];
        for cat in &self.categories {
            for &i in cat {
                if i >= n || seen[i] {
                    return Err(Error::invalid("categories must partition the items"));
                }
                seen[i] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::invalid("categories must cover every item"));
        }
        self.scenarios.validate()?;
        if self.scenarios.cost_dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.scenarios.cost_dim(),
                context: "scenario profit vectors",
            });
        }
        if self.scenarios.costs.iter().flatten().any(|&c| c < 0.0) {
            return Err(Error::invalid("profits must be nonnegative"));
        }
        Ok(())
    }

    pub fn item_count(&self) -> usize {
        self.weights.len()
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = InstanceFile {
            weights: self.weights.clone(),
            capacity: self.capacity,
            categories: self.categories.clone(),
            scenarios: ScenarioFile {
                features: self.scenarios.features.clone(),
                profits: self.scenarios.costs.clone(),
                probabilities: Some(self.scenarios.probabilities.clone()),
                ids: Some(self.scenarios.ids.clone()),
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let n = file.scenarios.features.len();
        let mut scenarios = match file.scenarios.probabilities {
            Some(p) => {
                ScenarioSet::with_probabilities(file.scenarios.features, file.scenarios.profits, p)?
            }
            None => ScenarioSet::new(file.scenarios.features, file.scenarios.profits)?,
        };
        if let Some(ids) = file.scenarios.ids {
            if ids.len() == n {
                scenarios.ids = ids;
            }
        }
        KnapsackInstance::new(file.weights, file.capacity, file.categories, scenarios)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    weights: Vec<f64>,
    capacity: f64,
    categories: Vec<Vec<usize>>,
    scenarios: ScenarioFile,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    features: Vec<Vec<f64>>,
    profits: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probabilities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ids: Option<Vec<String>>,
}

/// Writes a bare scenario set in the instance file's scenario schema.
pub fn save_scenarios_json(set: &ScenarioSet, path: &Path) -> Result<()> {
    let file = ScenarioFile {
        features: set.features.clone(),
        profits: set.costs.clone(),
        probabilities: Some(set.probabilities.clone()),
        ids: Some(set.ids.clone()),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Reads a bare scenario set written by [`save_scenarios_json`].
pub fn load_scenarios_json(path: &Path) -> Result<ScenarioSet> {
    let file: ScenarioFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    match file.probabilities {
        Some(p) => ScenarioSet::with_probabilities(file.features, file.profits, p),
        None => ScenarioSet::new(file.features, file.profits),
    }
}

/// Exact 0/1 knapsack over an item subset, solved through the MILP layer so
/// real-valued weights need no discretization.
fn solve_knapsack_subset(
    profits: &[f64],
    weights: &[f64],
    items: &[usize],
    capacity: f64,
) -> Result<(Vec<usize>, f64)> {
    if capacity <= 0.0 || items.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let mut m = MilpModel::new("knapsack", Sense::Maximize);
    let vars: Vec<VarId> = items
        .iter()
        .map(|&i| m.add_binary(format!("x{i}"), profits[i]))
        .collect::<Result<Vec<_>>>()?;
    m.add_constr(
        "cap",
        items
            .iter()
            .zip(&vars)
            .map(|(&i, &v)| (v, weights[i]))
            .collect(),
        Rel::Le,
        capacity,
    )?;
    let sol = solve_bundled(&m, &SolveOptions::default())?;
    let chosen: Vec<usize> = items
        .iter()
        .zip(&vars)
        .filter(|(_, &v)| sol.value(v) > 0.5)
        .map(|(&i, _)| i)
        .collect();
    Ok((chosen, sol.objective))
}

/// Optimal single-scenario knapsack: the selected items and their profit.
pub fn solve_nominal(inst: &KnapsackInstance, scenario: usize) -> Result<(Vec<bool>, f64)> {
    let profits = &inst.scenarios.costs[scenario];
    let all: Vec<usize> = (0..inst.item_count()).collect();
    let (chosen, value) = solve_knapsack_subset(profits, &inst.weights, &all, inst.capacity)?;
    let mut items = vec![false; inst.item_count()];
    for i in chosen {
        items[i] = true;
    }
    Ok((items, value))
}

/// Best profit achievable in `scenario` under fixed per-category budgets:
/// one independent knapsack per category.
pub fn evaluate_meta(inst: &KnapsackInstance, scenario: usize, budgets: &[f64]) -> Result<f64> {
    if budgets.len() != inst.category_count() {
        return Err(Error::DimensionMismatch {
            expected: inst.category_count(),
            got: budgets.len(),
            context: "budget vector",
        });
    }
    let profits = &inst.scenarios.costs[scenario];
    let mut total = 0.0;
    for (cat, &budget) in inst.categories.iter().zip(budgets) {
        let (_, value) = solve_knapsack_subset(profits, &inst.weights, cat, budget)?;
        total += value;
    }
    Ok(total)
}

/// Profit of a fixed item selection in `scenario`.
pub fn evaluate_items(inst: &KnapsackInstance, scenario: usize, items: &[bool]) -> f64 {
    inst.scenarios.costs[scenario]
        .iter()
        .zip(items)
        .filter(|(_, &take)| take)
        .map(|(c, _)| c)
        .sum()
}

/// Scales budgets so they sum to `capacity` while retaining their ratios.
/// All-zero budgets become a uniform split.
pub fn rescale_budgets(budgets: &[f64], capacity: f64) -> Vec<f64> {
    let sum: f64 = budgets.iter().sum();
    if sum <= 0.0 {
        return vec![capacity / budgets.len() as f64; budgets.len()];
    }
    budgets.iter().map(|b| b * capacity / sum).collect()
}

/// The budget a concrete selection spends per category.
pub fn extract_meta(inst: &KnapsackInstance, items: &[bool]) -> Vec<f64> {
    inst.categories
        .iter()
        .map(|cat| {
            cat.iter()
                .filter(|&&i| items[i])
                .map(|&i| inst.weights[i])
                .sum()
        })
        .collect()
}

/// Handles into the surrogate MIP.
#[derive(Debug)]
pub struct SurrogateHandles {
    pub tree: Option<TreeBlock>,
    /// budget_vars[k][f]: budget of category f at leaf k.
    pub budget_vars: Vec<Vec<VarId>>,
    /// item_vars[j][i]: item i taken in scenario j.
    pub item_vars: Vec<Vec<VarId>>,
}

/// Builds the surrogate MIP: probability-weighted profit objective over
/// per-scenario selections, leaf-gated per-category budget rows, budget
/// coupling per leaf, and the tree block mapping scenarios to leaves.
/// `depth == 0` drops the tree and yields the single best meta-solution
/// model.
pub fn build_surrogate_mip(
    inst: &KnapsackInstance,
    depth: usize,
    mask: Option<&[usize]>,
) -> Result<(MilpModel, SurrogateHandles)> {
    let n = inst.item_count();
    let n_scen = inst.scenarios.len();
    let n_cat = inst.category_count();
    let leaves = 1usize << depth;
    let mut m = MilpModel::new("surrogate_knapsack", Sense::Maximize);

    let tree = if depth >= 1 {
        Some(tree_block::emit_tree_block(
            &mut m,
            &inst.scenarios.features,
            depth,
            mask,
        )?)
    } else {
        None
    };

    let item_vars: Vec<Vec<VarId>> = (0..n_scen)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let p = inst.scenarios.probabilities[j] * inst.scenarios.costs[j][i];
                    m.add_binary(format!("x_{j}_{i}"), p)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let budget_vars: Vec<Vec<VarId>> = (0..leaves)
        .map(|k| {
            (0..n_cat)
                .map(|f| m.add_continuous(format!("C_{k}_{f}"), 0.0, inst.capacity, 0.0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    // Per-category budget rows, gated by the leaf indicator when a tree is
    // present. Big-M is the category's total weight.
    for k in 0..leaves {
        for (f, cat) in inst.categories.iter().enumerate() {
            let m_f: f64 = cat.iter().map(|&i| inst.weights[i]).sum();
            for j in 0..n_scen {
                let mut terms: Vec<(VarId, f64)> = cat
                    .iter()
                    .map(|&i| (item_vars[j][i], inst.weights[i]))
                    .collect();
                terms.push((budget_vars[k][f], -1.0));
                let rhs = match &tree {
                    Some(block) => {
                        terms.push((block.leaf_vars[j][k], m_f));
                        m_f
                    }
                    None => 0.0,
                };
                m.add_constr(format!("cat_{k}_{f}_{j}"), terms, Rel::Le, rhs)?;
            }
        }
        m.add_constr(
            format!("budget_{k}"),
            budget_vars[k].iter().map(|&v| (v, 1.0)).collect(),
            Rel::Le,
            inst.capacity,
        )?;
    }

    Ok((
        m,
        SurrogateHandles {
            tree,
            budget_vars,
            item_vars,
        },
    ))
}

/// Decodes a solved surrogate MIP into a budget tree. Budgets are rescaled to
/// sum to the capacity, ready for evaluation.
pub fn decode_budget_tree(
    inst: &KnapsackInstance,
    handles: &SurrogateHandles,
    sol: &MilpSolution,
) -> Result<SurrogateTree<MetaSolution>> {
    let leaves: Vec<MetaSolution> = handles
        .budget_vars
        .iter()
        .map(|vars| {
            let budgets: Vec<f64> = vars.iter().map(|&v| sol.value(v).max(0.0)).collect();
            MetaSolution::Budgets(rescale_budgets(&budgets, inst.capacity))
        })
        .collect();
    match &handles.tree {
        Some(block) => tree_block::decode_tree(block, sol, leaves),
        None => SurrogateTree::new(Vec::new(), leaves),
    }
}

/// Handles into the micro-tree benchmark MIP.
#[derive(Debug)]
pub struct MicroHandles {
    pub tree: Option<TreeBlock>,
    /// leaf_items[k][i]: item i packed at leaf k.
    pub leaf_items: Vec<Vec<VarId>>,
}

/// Builds the micro-tree MIP: one concrete selection per leaf, scenario
/// profit collected through leaf-gated take variables (valid because profits
/// are nonnegative).
pub fn build_micro_mip(inst: &KnapsackInstance, depth: usize) -> Result<(MilpModel, MicroHandles)> {
    let n = inst.item_count();
    let n_scen = inst.scenarios.len();
    let leaves = 1usize << depth;
    let mut m = MilpModel::new("micro_knapsack", Sense::Maximize);

    let tree = if depth >= 1 {
        Some(tree_block::emit_tree_block(
            &mut m,
            &inst.scenarios.features,
            depth,
            None,
        )?)
    } else {
        None
    };

    let leaf_items: Vec<Vec<VarId>> = (0..leaves)
        .map(|k| {
            (0..n)
                .map(|i| m.add_binary(format!("y_{k}_{i}"), 0.0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    for (k, items) in leaf_items.iter().enumerate() {
        m.add_constr(
            format!("cap_{k}"),
            items
                .iter()
                .zip(&inst.weights)
                .map(|(&v, &w)| (v, w))
                .collect(),
            Rel::Le,
            inst.capacity,
        )?;
    }

    // take_{j}_{i} <= y_{k}_{i} + (1 - l_{j}_{k}) for every leaf: the take
    // variable can only collect profit from scenario j's own leaf.
    for j in 0..n_scen {
        for i in 0..n {
            let p = inst.scenarios.probabilities[j] * inst.scenarios.costs[j][i];
            let take = m.add_continuous(format!("w_{j}_{i}"), 0.0, 1.0, p)?;
            for (k, items) in leaf_items.iter().enumerate() {
                let (terms, rhs) = match &tree {
                    Some(block) => (
                        vec![(take, 1.0), (items[i], -1.0), (block.leaf_vars[j][k], 1.0)],
                        1.0,
                    ),
                    None => (vec![(take, 1.0), (items[i], -1.0)], 0.0),
                };
                m.add_constr(format!("take_{j}_{i}_{k}"), terms, Rel::Le, rhs)?;
            }
        }
    }

    Ok((m, MicroHandles { tree, leaf_items }))
}

/// Decodes a solved micro-tree MIP into a tree of concrete selections.
pub fn decode_micro_tree(
    handles: &MicroHandles,
    sol: &MilpSolution,
) -> Result<SurrogateTree<MicroSolution>> {
    let leaves: Vec<MicroSolution> = handles
        .leaf_items
        .iter()
        .map(|vars| MicroSolution::Items(vars.iter().map(|&v| sol.value(v) > 0.5).collect()))
        .collect();
    match &handles.tree {
        Some(block) => tree_block::decode_tree(block, sol, leaves),
        None => SurrogateTree::new(Vec::new(), leaves),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::solve_bundled;

    fn tiny_instance(
        weights: Vec<f64>,
        capacity: f64,
        categories: Vec<Vec<usize>>,
        profits: Vec<Vec<f64>>,
    ) -> KnapsackInstance {
        let scenarios = ScenarioSet::new(profits.clone(), profits).unwrap();
        KnapsackInstance::new(weights, capacity, categories, scenarios).unwrap()
    }

    #[test]
    fn nominal_examples() {
        let inst = tiny_instance(vec![2.0, 2.0], 3.0, vec![vec![0, 1]], vec![vec![3.0, 2.0]]);
        let (items, profit) = solve_nominal(&inst, 0).unwrap();
        assert_eq!(items, vec![true, false]);
        assert!((profit - 3.0).abs() < 1e-9);

        let all = tiny_instance(vec![1.0, 1.0], 5.0, vec![vec![0, 1]], vec![vec![1.0, 1.0]]);
        let (items, profit) = solve_nominal(&all, 0).unwrap();
        assert_eq!(items, vec![true, true]);
        assert!((profit - 2.0).abs() < 1e-9);

        let none = tiny_instance(vec![2.0, 3.0], 1.0, vec![vec![0, 1]], vec![vec![1.0, 1.0]]);
        let (items, profit) = solve_nominal(&none, 0).unwrap();
        assert_eq!(items, vec![false, false]);
        assert_eq!(profit, 0.0);
    }

    #[test]
    fn evaluate_meta_single_category_equals_nominal() {
        let inst = tiny_instance(
            vec![1.5, 2.5, 3.0],
            3.5,
            vec![vec![0, 1, 2]],
            vec![vec![4.0, 3.0, 5.0]],
        );
        let nominal = solve_nominal(&inst, 0).unwrap().1;
        let meta = evaluate_meta(&inst, 0, &[inst.capacity]).unwrap();
        assert!((nominal - meta).abs() < 1e-9);
    }

    #[test]
    fn evaluate_meta_zero_budgets() {
        let inst = tiny_instance(
            vec![1.0, 1.0],
            2.0,
            vec![vec![0], vec![1]],
            vec![vec![3.0, 4.0]],
        );
        assert_eq!(evaluate_meta(&inst, 0, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_meta_matches_subset_enumeration() {
        // 4 items, 2 categories; oracle enumerates the 16 subsets.
        let weights = vec![2.0, 3.0, 1.5, 2.5];
        let profits = vec![vec![4.0, 5.0, 3.0, 6.0]];
        let inst = tiny_instance(
            weights.clone(),
            5.0,
            vec![vec![0, 1], vec![2, 3]],
            profits.clone(),
        );
        let budgets = [3.0, 2.5];
        let mut best = 0.0f64;
        for mask in 0..16u32 {
            let take: Vec<bool> = (0..4).map(|i| (mask >> i) & 1 == 1).collect();
            let w0: f64 = [0usize, 1]
                .iter()
                .filter(|&&i| take[i])
                .map(|&i| weights[i])
                .sum();
            let w1: f64 = [2usize, 3]
                .iter()
                .filter(|&&i| take[i])
                .map(|&i| weights[i])
                .sum();
            if w0 <= budgets[0] && w1 <= budgets[1] {
                let value: f64 = (0..4).filter(|&i| take[i]).map(|i| profits[0][i]).sum();
                best = best.max(value);
            }
        }
        let got = evaluate_meta(&inst, 0, &budgets).unwrap();
        assert!((got - best).abs() < 1e-9, "got {got}, oracle {best}");
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_budgets(&[1.0, 1.0], 4.0), vec![2.0, 2.0]);
        assert_eq!(rescale_budgets(&[2.0, 6.0], 4.0), vec![1.0, 3.0]);
        assert_eq!(rescale_budgets(&[0.0, 0.0], 4.0), vec![2.0, 2.0]);
    }

    #[test]
    fn proportional_split_never_beats_nominal() {
        let inst = tiny_instance(
            vec![2.0, 3.0, 1.5, 2.5],
            4.5,
            vec![vec![0, 1], vec![2, 3]],
            vec![vec![4.0, 5.0, 3.0, 6.0], vec![1.0, 2.0, 8.0, 1.0]],
        );
        // Budgets proportional to category sizes.
        let n = inst.item_count() as f64;
        let budgets: Vec<f64> = inst
            .categories
            .iter()
            .map(|cat| inst.capacity * cat.len() as f64 / n)
            .collect();
        for j in 0..inst.scenarios.len() {
            let split = evaluate_meta(&inst, j, &budgets).unwrap();
            let nominal = solve_nominal(&inst, j).unwrap().1;
            assert!(split <= nominal + 1e-9, "scenario {j}: {split} > {nominal}");
        }
    }

    #[test]
    fn evaluate_meta_monotone_in_budgets() {
        let inst = tiny_instance(
            vec![2.0, 3.0, 1.5, 2.5],
            5.0,
            vec![vec![0, 1], vec![2, 3]],
            vec![vec![4.0, 5.0, 3.0, 6.0]],
        );
        let mut prev = -1.0;
        for step in 0..=5 {
            let b0 = step as f64;
            let v = evaluate_meta(&inst, 0, &[b0, 5.0]).unwrap();
            assert!(v + 1e-9 >= prev, "not monotone at budget {b0}");
            prev = v;
        }
    }

    #[test]
    fn surrogate_k1_is_best_single_meta() {
        let inst = tiny_instance(
            vec![1.0, 2.0],
            1.5,
            vec![vec![0], vec![1]],
            vec![vec![5.0, 4.0], vec![1.0, 6.0]],
        );
        let (m, h) = build_surrogate_mip(&inst, 0, None).unwrap();
        let sol = solve_bundled(&m, &SolveOptions::default()).unwrap();
        // Capacity 1.5 fits item 0 (w=1) but never item 1 (w=2): the best
        // single meta spends everything on category 0: mean (5 + 1)/2 = 3.
        assert!(
            (sol.objective - 3.0).abs() < 1e-6,
            "objective {}",
            sol.objective
        );
        let tree = decode_budget_tree(&inst, &h, &sol).unwrap();
        assert_eq!(tree.depth, 0);
    }

    /// Exact oracle for tiny two-category depth-1 surrogates: enumerate
    /// threshold partitions of the scenarios times per-leaf budget
    /// candidates (subset-weight breakpoints, or a 0.05*C grid).
    fn surrogate_oracle(inst: &KnapsackInstance, grid_only: bool) -> f64 {
        let n_scen = inst.scenarios.len();
        let feats = &inst.scenarios.features;
        let fdim = inst.scenarios.feature_dim();
        let mut partitions: Vec<Vec<bool>> = vec![vec![true; n_scen], vec![false; n_scen]];
        for f in 0..fdim {
            let mut values: Vec<f64> = feats.iter().map(|r| r[f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                partitions.push(feats.iter().map(|r| r[f] <= thr).collect());
            }
        }
        let cap = inst.capacity;
        let mut budget_candidates: Vec<f64> = Vec::new();
        if grid_only {
            let step = 0.05 * cap;
            let mut b = 0.0;
            while b <= cap + 1e-9 {
                budget_candidates.push(b.min(cap));
                b += step;
            }
        } else {
            let sums = |cat: &Vec<usize>| -> Vec<f64> {
                let mut out = vec![0.0];
                for &i in cat {
                    let mut next = out.clone();
                    for s in &out {
                        next.push(s + inst.weights[i]);
                    }
                    out = next;
                }
                out
            };
            for s in sums(&inst.categories[0]) {
                if s <= cap + 1e-9 {
                    budget_candidates.push(s.min(cap));
                }
            }
            for s in sums(&inst.categories[1]) {
                let b = cap - s;
                if b >= -1e-9 {
                    budget_candidates.push(b.max(0.0));
                }
            }
        }
        let leaf_best = |members: &[usize]| -> f64 {
            if members.is_empty() {
                return 0.0;
            }
            budget_candidates
                .iter()
                .map(|&b0| {
                    members
                        .iter()
                        .map(|&j| {
                            evaluate_meta(inst, j, &[b0, cap - b0]).unwrap()
                                * inst.scenarios.probabilities[j]
                        })
                        .sum()
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        partitions
            .iter()
            .map(|left| {
                let l: Vec<usize> = (0..n_scen).filter(|&j| left[j]).collect();
                let r: Vec<usize> = (0..n_scen).filter(|&j| !left[j]).collect();
                leaf_best(&l) + leaf_best(&r)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn tiny_surrogate_matches_brute_force() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(3);
        for trial in 0..5 {
            let weights: Vec<f64> = (0..4)
                .map(|_| rng.random_range(1..=40) as f64 / 4.0)
                .collect();
            let capacity = weights.iter().sum::<f64>() / 2.0;
            let profits: Vec<Vec<f64>> = (0..2)
                .map(|_| {
                    (0..4)
                        .map(|_| rng.random_range(1..=40) as f64 / 4.0)
                        .collect()
                })
                .collect();
            let inst = tiny_instance(weights, capacity, vec![vec![0, 1], vec![2, 3]], profits);
            let (m, _) = build_surrogate_mip(&inst, 1, None).unwrap();
            let sol = solve_bundled(&m, &SolveOptions::default()).unwrap();
            let oracle = surrogate_oracle(&inst, false);
            assert!(
                (sol.objective - oracle).abs() < 1e-6,
                "trial {trial}: mip {} vs oracle {oracle}",
                sol.objective
            );
        }
    }

    #[test]
    fn micro_k1_reduces_to_single_selection() {
        let inst = tiny_instance(
            vec![1.0, 2.0],
            2.0,
            vec![vec![0], vec![1]],
            vec![vec![5.0, 4.0], vec![1.0, 6.0]],
        );
        let (m, h) = build_micro_mip(&inst, 0).unwrap();
        let sol = solve_bundled(&m, &SolveOptions::default()).unwrap();
        // One selection serves both scenarios; {1} gives (4 + 6)/2 = 5.
        assert!(
            (sol.objective - 5.0).abs() < 1e-6,
            "objective {}",
            sol.objective
        );
        let tree = decode_micro_tree(&h, &sol).unwrap();
        assert_eq!(tree.leaves.len(), 1);
    }

    #[test]
    fn micro_two_leaves_dominates_one() {
        let inst = tiny_instance(
            vec![1.0, 2.0],
            2.0,
            vec![vec![0], vec![1]],
            vec![vec![5.0, 4.0], vec![1.0, 6.0]],
        );
        let (m1, _) = build_micro_mip(&inst, 0).unwrap();
        let (m2, _) = build_micro_mip(&inst, 1).unwrap();
        let s1 = solve_bundled(&m1, &SolveOptions::default()).unwrap();
        let s2 = solve_bundled(&m2, &SolveOptions::default()).unwrap();
        assert!(s2.objective >= s1.objective - 1e-9);
        // Two disagreeing scenarios split perfectly: (5 + 6)/2 = 5.5.
        assert!((s2.objective - 5.5).abs() < 1e-6);
    }

    #[test]
    fn micro_tiny_matches_enumeration() {
        // Oracle over (partition x per-leaf feasible subsets).
        let inst = tiny_instance(
            vec![2.0, 3.0],
            3.0,
            vec![vec![0], vec![1]],
            vec![vec![4.0, 3.0], vec![2.0, 5.0]],
        );
        let feasible: Vec<Vec<bool>> = (0..4u32)
            .map(|mask| (0..2).map(|i| (mask >> i) & 1 == 1).collect::<Vec<bool>>())
            .filter(|take| {
                take.iter()
                    .zip(&inst.weights)
                    .filter(|(&t, _)| t)
                    .map(|(_, &w)| w)
                    .sum::<f64>()
                    <= inst.capacity
            })
            .collect();
        let mut oracle = f64::NEG_INFINITY;
        for a in &feasible {
            oracle = oracle.max(0.5 * (evaluate_items(&inst, 0, a) + evaluate_items(&inst, 1, a)));
            for b in &feasible {
                // The two scenarios' features are distinct, so a split exists.
                oracle =
                    oracle.max(0.5 * (evaluate_items(&inst, 0, a) + evaluate_items(&inst, 1, b)));
            }
        }
        let (m, _) = build_micro_mip(&inst, 1).unwrap();
        let sol = solve_bundled(&m, &SolveOptions::default()).unwrap();
        assert!(
            (sol.objective - oracle).abs() < 1e-6,
            "mip {} oracle {oracle}",
            sol.objective
        );
    }

    #[test]
    fn per_item_categories_make_micro_and_surrogate_agree() {
        // F_S = n: a budget vector pins the exact item set, so surrogate and
        // micro trees reach the same training optimum.
        let inst = tiny_instance(
            vec![1.0, 2.0, 1.5],
            2.5,
            vec![vec![0], vec![1], vec![2]],
            vec![vec![3.0, 2.0, 4.0], vec![1.0, 5.0, 2.0]],
        );
        let (ms, _) = build_surrogate_mip(&inst, 1, None).unwrap();
        let (mm, _) = build_micro_mip(&inst, 1).unwrap();
        let ss = solve_bundled(&ms, &SolveOptions::default()).unwrap();
        let sm = solve_bundled(&mm, &SolveOptions::default()).unwrap();
        assert!(
            (ss.objective - sm.objective).abs() < 1e-6,
            "{} vs {}",
            ss.objective,
            sm.objective
        );
    }

    #[test]
    fn micro_leaves_convert_to_feasible_surrogate_budgets() {
        // Converting micro leaves to induced budgets is a feasible surrogate
        // point: surrogate optimum >= meta-fied micro >= micro optimum.
        let inst = tiny_instance(
            vec![1.0, 2.0, 1.5, 0.5],
            2.5,
            vec![vec![0, 1], vec![2, 3]],
            vec![vec![3.0, 2.0, 4.0, 1.0], vec![1.0, 5.0, 2.0, 2.0]],
        );
        let (mm, hm) = build_micro_mip(&inst, 1).unwrap();
        let sm = solve_bundled(&mm, &SolveOptions::default()).unwrap();
        let micro_tree = decode_micro_tree(&hm, &sm).unwrap();
        let mut metafied = 0.0;
        for j in 0..inst.scenarios.len() {
            let leaf = micro_tree.route(&inst.scenarios.features[j]).unwrap();
            let MicroSolution::Items(items) = micro_tree.leaf(leaf) else {
                unreachable!()
            };
            let budgets = rescale_budgets(&extract_meta(&inst, items), inst.capacity);
            metafied +=
                inst.scenarios.probabilities[j] * evaluate_meta(&inst, j, &budgets).unwrap();
        }
        let (ms, _) = build_surrogate_mip(&inst, 1, None).unwrap();
        let ss = solve_bundled(&ms, &SolveOptions::default()).unwrap();
        assert!(ss.objective >= sm.objective - 1e-6);
        assert!(ss.objective >= metafied - 1e-6);
        assert!(metafied >= sm.objective - 1e-6);
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = tiny_instance(
            vec![1.0, 2.0],
            1.5,
            vec![vec![0], vec![1]],
            vec![vec![5.0, 4.0], vec![1.0, 6.0]],
        );
        let json = inst.to_json().unwrap();
        assert!(json.contains("\"weights\""));
        assert!(json.contains("\"capacity\""));
        assert!(json.contains("\"categories\""));
        assert!(json.contains("\"profits\""));
        let back = KnapsackInstance::from_json(&json).unwrap();
        assert_eq!(back.weights, inst.weights);
        assert_eq!(back.capacity, inst.capacity);
        assert_eq!(back.categories, inst.categories);
    }
}
