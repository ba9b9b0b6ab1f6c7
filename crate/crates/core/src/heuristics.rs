//! Training methods that avoid the full surrogate MIP: the learning
//! heuristic (nominal solves, a K-candidate selection IP and a
//! classification tree), the micro-to-meta conversion heuristic, and the
//! single-solution baselines.

use crate::error::{Error, Result};
use crate::knapsack::{self, KnapsackInstance};
use crate::milp::{solve, solve_bundled, MilpModel, Rel, SolveOptions, SolveStatus, VarId};
use crate::model::{MetaSolution, MicroSolution, ScenarioSet, Sense, SurrogateTree};
use crate::shortest_path::{self, SpInstance};
use std::time::Duration;

/// A trained tree plus how it was obtained.
#[derive(Debug, Clone)]
pub struct TrainedTree<L> {
    pub tree: SurrogateTree<L>,
    pub status: SolveStatus,
    /// Solver-reported objective (probability-weighted).
    pub objective: f64,
    pub bound: f64,
}

/// Everything the generic training methods need from a problem family.
pub trait MetaProblem: Sized {
    fn sense(&self) -> Sense;
    fn scenarios(&self) -> &ScenarioSet;
    /// Feature indices the tree may split on; `None` allows all.
    fn feature_mask(&self) -> Option<&[usize]>;
    /// The same problem over a different scenario set (for test evaluation).
    fn with_scenarios(&self, scenarios: ScenarioSet) -> Result<Self>;

    /// Per-scenario optimum: solution and objective value.
    fn nominal(&self, scenario: usize) -> Result<(MicroSolution, f64)>;
    /// Solution features of a concrete solution.
    fn extract_meta(&self, micro: &MicroSolution) -> Result<MetaSolution>;
    /// Best objective in `scenario` within a meta-solution; `None` when no
    /// solution exhibits those features.
    fn evaluate_meta(&self, scenario: usize, meta: &MetaSolution) -> Result<Option<f64>>;
    /// Objective of a fixed solution in `scenario`.
    fn evaluate_micro(&self, scenario: usize, micro: &MicroSolution) -> Result<f64>;

    /// Exact surrogate training via the MIP formulation; `depth == 0` is the
    /// single best meta-solution.
    fn train_meta_tree(
        &self,
        depth: usize,
        opts: &SolveOptions,
    ) -> Result<TrainedTree<MetaSolution>>;
    /// Benchmark micro-solution tree via its MIP formulation.
    fn train_micro_tree(
        &self,
        depth: usize,
        opts: &SolveOptions,
    ) -> Result<TrainedTree<MicroSolution>>;
    /// Single solution optimizing the aggregated objective over all
    /// scenarios.
    fn best_single_micro(&self, opts: &SolveOptions) -> Result<(MicroSolution, SolveStatus)>;
}

/// Probability-weighted objective of a meta-solution tree on the problem's
/// own scenarios.
pub fn meta_tree_objective(
    problem: &impl MetaProblem,
    tree: &SurrogateTree<MetaSolution>,
) -> Result<f64> {
    let scen = problem.scenarios();
    let mut total = 0.0;
    for j in 0..scen.len() {
        let leaf = tree.route(&scen.features[j])?;
        let value = problem.evaluate_meta(j, tree.leaf(leaf))?.ok_or_else(|| {
            Error::Infeasible(Some(format!("leaf {leaf} infeasible in scenario {j}")))
        })?;
        total += scen.probabilities[j] * value;
    }
    Ok(total)
}

/// Probability-weighted objective of a micro-solution tree.
pub fn micro_tree_objective(
    problem: &impl MetaProblem,
    tree: &SurrogateTree<MicroSolution>,
) -> Result<f64> {
    let scen = problem.scenarios();
    let mut total = 0.0;
    for j in 0..scen.len() {
        let leaf = tree.route(&scen.features[j])?;
        total += scen.probabilities[j] * problem.evaluate_micro(j, tree.leaf(leaf))?;
    }
    Ok(total)
}

/// Probability-weighted per-scenario optimum (the non-interpretable anchor).
pub fn per_scenario_optimum(problem: &impl MetaProblem) -> Result<f64> {
    let scen = problem.scenarios();
    let mut total = 0.0;
    for j in 0..scen.len() {
        total += scen.probabilities[j] * problem.nominal(j)?.1;
    }
    Ok(total)
}

/// Candidate meta-solutions extracted from nominal optima, with the cost of
/// every scenario under every candidate.
#[derive(Debug, Clone)]
pub struct CandidateMatrix {
    pub candidates: Vec<MetaSolution>,
    /// costs[i][c]: objective of scenario i under candidate c; `None` marks
    /// an infeasible pair.
    pub costs: Vec<Vec<Option<f64>>>,
    /// Source scenario of each candidate.
    pub origin: Vec<usize>,
    /// Candidate index extracted from each scenario's nominal optimum.
    pub scenario_candidate: Vec<usize>,
}

/// Solves every scenario's nominal problem, dedups the extracted
/// meta-solutions and fills the evaluation matrix. The diagonal (a scenario
/// against its own candidate) equals the scenario's nominal optimum.
pub fn candidate_matrix(problem: &impl MetaProblem) -> Result<CandidateMatrix> {
    let n = problem.scenarios().len();
    let mut candidates: Vec<MetaSolution> = Vec::new();
    let mut origin = Vec::new();
    let mut of_scenario = Vec::with_capacity(n);
    for j in 0..n {
        let (micro, _) = problem.nominal(j)?;
        let meta = problem.extract_meta(&micro)?;
        let idx = match candidates.iter().position(|c| *c == meta) {
            Some(idx) => idx,
            None => {
                candidates.push(meta);
                origin.push(j);
                candidates.len() - 1
            }
        };
        of_scenario.push(idx);
    }
    let mut costs = vec![vec![None; candidates.len()]; n];
    for (c, meta) in candidates.iter().enumerate() {
        for (i, row) in costs.iter_mut().enumerate() {
            row[c] = problem.evaluate_meta(i, meta)?;
        }
    }
    Ok(CandidateMatrix {
        candidates,
        costs,
        origin,
        scenario_candidate: of_scenario,
    })
}

/// Result of the candidate-selection IP.
#[derive(Debug, Clone)]
pub struct Selection {
    pub chosen: Vec<usize>,
    /// Candidate assigned to each scenario.
    pub assignment: Vec<usize>,
    /// Probability-weighted objective of the assignment.
    pub objective: f64,
}

const ENUMERATION_BUDGET: u128 = 2_000_000;

fn combination_count(n: usize, k: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    c
}

/// Picks at most `k` candidate columns minimizing (or maximizing) the
/// probability-weighted assignment objective.
///
/// Exact either way: subset enumeration when the count is small, otherwise
/// the assignment IP solved through the MILP layer. Both routes are
/// cross-checked in tests.
pub fn solve_selection_ip(
    costs: &[Vec<Option<f64>>],
    probabilities: &[f64],
    k: usize,
    sense: Sense,
    opts: &SolveOptions,
) -> Result<Selection> {
    let n = costs.len();
    let n_cand = costs.first().map_or(0, |r| r.len());
    if n_cand == 0 {
        return Err(Error::invalid("selection needs at least one candidate"));
    }
    for (i, row) in costs.iter().enumerate() {
        if row.iter().all(|c| c.is_none()) {
            return Err(Error::Infeasible(Some(format!(
                "scenario {i} is infeasible under every candidate"
            ))));
        }
    }
    let k = k.min(n_cand);
    // Infeasible pairs get a finite penalty well past any attainable value.
    let scale = costs
        .iter()
        .flatten()
        .filter_map(|c| *c)
        .fold(0.0f64, |a, c| a.max(c.abs()));
    let penalty = match sense {
        Sense::Minimize => 10.0 * scale + 1.0,
        Sense::Maximize => -(10.0 * scale + 1.0),
    };
    let entry = |i: usize, c: usize| costs[i][c].unwrap_or(penalty);

    if combination_count(n_cand, k) * (n as u128) <= ENUMERATION_BUDGET {
        return Ok(select_by_enumeration(costs, probabilities, k, sense, entry));
    }

    // Assignment IP: lambda_c choose a candidate, mu_{i,c} assign scenarios.
    let mut m = MilpModel::new("selection", sense);
    let lambda: Vec<VarId> = (0..n_cand)
        .map(|c| m.add_binary(format!("lam_{c}"), 0.0))
        .collect::<Result<Vec<_>>>()?;
    let mut mu = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<VarId> = (0..n_cand)
            .map(|c| m.add_binary(format!("mu_{i}_{c}"), probabilities[i] * entry(i, c)))
            .collect::<Result<Vec<_>>>()?;
        m.add_constr(
            format!("one_{i}"),
            row.iter().map(|&v| (v, 1.0)).collect(),
            Rel::Eq,
            1.0,
        )?;
        for (c, &v) in row.iter().enumerate() {
            m.add_constr(
                format!("open_{i}_{c}"),
                vec![(v, 1.0), (lambda[c], -1.0)],
                Rel::Le,
                0.0,
            )?;
        }
        mu.push(row);
    }
    m.add_constr(
        "budget",
        lambda.iter().map(|&v| (v, 1.0)).collect(),
        Rel::Le,
        k as f64,
    )?;
    let sol = solve(&m, opts)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible(Some("selection IP infeasible".into())));
    }
    let chosen: Vec<usize> = (0..n_cand)
        .filter(|&c| sol.value(lambda[c]) > 0.5)
        .collect();
    Ok(finish_selection(costs, probabilities, chosen, sense, entry))
}

fn select_by_enumeration(
    costs: &[Vec<Option<f64>>],
    probabilities: &[f64],
    k: usize,
    sense: Sense,
    entry: impl Fn(usize, usize) -> f64 + Copy,
) -> Selection {
    let n = costs.len();
    let n_cand = costs[0].len();
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best: Option<Selection> = None;
    loop {
        let mut objective = 0.0;
        for i in 0..n {
            let v = subset
                .iter()
                .map(|&c| entry(i, c))
                .fold(
                    sense.worst(),
                    |a, v| if sense.is_better(v, a) { v } else { a },
                );
            objective += probabilities[i] * v;
        }
        if best
            .as_ref()
            .map_or(true, |b| sense.is_better(objective, b.objective))
        {
            best = Some(finish_selection(
                costs,
                probabilities,
                subset.clone(),
                sense,
                entry,
            ));
        }
        // Next lexicographic combination.
        let mut i = k;
        loop {
            if i == 0 {
                return best.unwrap();
            }
            i -= 1;
            if subset[i] != i + n_cand - k {
                break;
            }
        }
        subset[i] += 1;
        for j in i + 1..k {
            subset[j] = subset[j - 1] + 1;
        }
    }
}

fn finish_selection(
    costs: &[Vec<Option<f64>>],
    probabilities: &[f64],
    chosen: Vec<usize>,
    sense: Sense,
    entry: impl Fn(usize, usize) -> f64,
) -> Selection {
    let n = costs.len();
    let mut assignment = Vec::with_capacity(n);
    let mut objective = 0.0;
    for i in 0..n {
        let mut best_c = chosen[0];
        for &c in &chosen[1..] {
            if sense.is_better(entry(i, c), entry(i, best_c)) {
                best_c = c;
            }
        }
        assignment.push(best_c);
        objective += probabilities[i] * entry(i, best_c);
    }
    Selection {
        chosen,
        assignment,
        objective,
    }
}

/// Fits a fixed-depth tree with one shared (feature, threshold) query per
/// depth, greedily minimizing total Gini impurity level by level. Splitting
/// stops early when no candidate improves impurity. Empty leaves inherit the
/// majority label of their nearest populated ancestor.
pub fn fit_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    max_depth: usize,
    mask: Option<&[usize]>,
) -> Result<SurrogateTree<usize>> {
    let n = features.len();
    if n == 0 || labels.len() != n {
        return Err(Error::invalid(
            "classifier needs matching samples and labels",
        ));
    }
    let fdim = features[0].len();
    let mask: Vec<usize> = match mask {
        Some(m) => m.to_vec(),
        None => (0..fdim).collect(),
    };
    let n_labels = labels.iter().max().unwrap() + 1;

    let gini_total = |assignment: &[usize], leaves: usize| -> f64 {
        let mut counts = vec![vec![0usize; n_labels]; leaves];
        for (j, &leaf) in assignment.iter().enumerate() {
            counts[leaf][labels[j]] += 1;
        }
        counts
            .iter()
            .map(|c| {
                let total: usize = c.iter().sum();
                if total == 0 {
                    return 0.0;
                }
                let sq: f64 = c.iter().map(|&x| (x as f64 / total as f64).powi(2)).sum();
                total as f64 * (1.0 - sq)
            })
            .sum()
    };

    let mut queries = Vec::new();
    let mut assignment = vec![0usize; n];
    for _level in 0..max_depth {
        let current = gini_total(&assignment, 1 << queries.len());
        if current <= 1e-12 {
            break;
        }
        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
        for &f in &mask {
            let mut values: Vec<f64> = features.iter().map(|r| r[f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                let next: Vec<usize> = (0..n)
                    .map(|j| assignment[j] * 2 + usize::from(features[j][f] > thr))
                    .collect();
                let impurity = gini_total(&next, 2 << queries.len());
                let better = match best {
                    None => true,
                    Some((bi, bf, bt)) => {
                        impurity < bi - 1e-12
                            || (impurity < bi + 1e-12 && (f < bf || (f == bf && thr < bt)))
                    }
                };
                if better {
                    best = Some((impurity, f, thr));
                }
            }
        }
        let Some((impurity, f, thr)) = best else {
            break;
        };
        if impurity >= current - 1e-12 {
            break;
        }
        queries.push(crate::model::Query {
            feature: f,
            threshold: thr,
        });
        for j in 0..n {
            assignment[j] = assignment[j] * 2 + usize::from(features[j][f] > thr);
        }
    }

    // Majority labels per node of the implicit tree; empty leaves inherit
    // from their parent.
    let depth = queries.len();
    let leaves = 1usize << depth;
    let majority = |members: &[usize]| -> Option<usize> {
        if members.is_empty() {
            return None;
        }
        let mut counts = vec![0usize; n_labels];
        for &j in members {
            counts[labels[j]] += 1;
        }
        let best = counts.iter().max().copied().unwrap();
        counts.iter().position(|&c| c == best)
    };
    let mut leaf_labels = Vec::with_capacity(leaves);
    for k in 0..leaves {
        // Walk up from the leaf until some prefix has samples.
        let mut label = None;
        for up in 0..=depth {
            let members: Vec<usize> = (0..n).filter(|&j| assignment[j] >> up == k >> up).collect();
            if let Some(l) = majority(&members) {
                label = Some(l);
                break;
            }
        }
        leaf_labels.push(label.expect("root always has samples"));
    }
    SurrogateTree::new(queries, leaf_labels)
}

/// Outcome of the learning heuristic.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub tree: SurrogateTree<MetaSolution>,
    /// Objective of the optimal scenario-to-candidate assignment, before the
    /// classifier possibly misroutes some scenarios.
    pub assignment_objective: f64,
    pub selection: Selection,
}

/// Learning heuristic: nominal solves per scenario, candidate dedup, the
/// K-selection IP, then a depth-bounded classification tree on the induced
/// labels. Leaves carry the majority label's meta-solution.
pub fn learn_heuristic(
    problem: &impl MetaProblem,
    k: usize,
    depth: usize,
    opts: &SolveOptions,
) -> Result<LearnOutcome> {
    let scen = problem.scenarios();
    if k > scen.len() {
        return Err(Error::invalid(
            "cannot select more candidates than scenarios",
        ));
    }
    if (1usize << depth) < k {
        return Err(Error::invalid(
            "tree depth too small for the candidate count",
        ));
    }
    let matrix = candidate_matrix(problem)?;
    let selection =
        solve_selection_ip(&matrix.costs, &scen.probabilities, k, problem.sense(), opts)?;

    // Compact labels over the selected candidates only.
    let mut label_of = std::collections::HashMap::new();
    for &c in &selection.chosen {
        let next = label_of.len();
        label_of.entry(c).or_insert(next);
    }
    let labels: Vec<usize> = selection.assignment.iter().map(|c| label_of[c]).collect();
    let classifier = fit_classifier(&scen.features, &labels, depth, problem.feature_mask())?;

    let mut by_label: Vec<&MetaSolution> =
        vec![&matrix.candidates[selection.chosen[0]]; label_of.len()];
    for (&c, &l) in &label_of {
        by_label[l] = &matrix.candidates[c];
    }
    let tree = classifier.map_leaves(|l| by_label[l].clone());
    Ok(LearnOutcome {
        tree,
        assignment_objective: selection.objective,
        selection,
    })
}

/// Outcome of the micro-to-meta heuristic.
#[derive(Debug, Clone)]
pub struct M2mOutcome {
    pub tree: SurrogateTree<MetaSolution>,
    /// The micro tree it was converted from.
    pub source: TrainedTree<MicroSolution>,
}

/// Micro-to-meta heuristic: train the micro-solution tree (possibly
/// time-limited), then replace each leaf's solution by its meta-solution.
pub fn m2m(problem: &impl MetaProblem, depth: usize, opts: &SolveOptions) -> Result<M2mOutcome> {
    let source = problem.train_micro_tree(depth, opts)?;
    let tree = m2m_from_source(problem, &source.tree)?;
    Ok(M2mOutcome { tree, source })
}

/// The conversion step of [`m2m`] alone, for an already trained micro tree.
pub fn m2m_from_source(
    problem: &impl MetaProblem,
    source: &SurrogateTree<MicroSolution>,
) -> Result<SurrogateTree<MetaSolution>> {
    let mut metas = Vec::with_capacity(source.leaves.len());
    for micro in &source.leaves {
        metas.push(problem.extract_meta(micro)?);
    }
    Ok(SurrogateTree {
        depth: source.depth,
        queries: source.queries.clone(),
        leaves: metas,
    })
}

/// Best single meta-solution applied to every scenario (a depth-0 tree).
pub fn best_single_meta(
    problem: &impl MetaProblem,
    opts: &SolveOptions,
) -> Result<TrainedTree<MetaSolution>> {
    problem.train_meta_tree(0, opts)
}

// ---------------------------------------------------------------------------
// Problem-family implementations.
// ---------------------------------------------------------------------------

impl MetaProblem for KnapsackInstance {
    fn sense(&self) -> Sense {
        Sense::Maximize
    }

    fn scenarios(&self) -> &ScenarioSet {
        &self.scenarios
    }

    fn feature_mask(&self) -> Option<&[usize]> {
        None
    }

    fn with_scenarios(&self, scenarios: ScenarioSet) -> Result<Self> {
        KnapsackInstance::new(
            self.weights.clone(),
            self.capacity,
            self.categories.clone(),
            scenarios,
        )
    }

    fn nominal(&self, scenario: usize) -> Result<(MicroSolution, f64)> {
        let (items, value) = knapsack::solve_nominal(self, scenario)?;
        Ok((MicroSolution::Items(items), value))
    }

    fn extract_meta(&self, micro: &MicroSolution) -> Result<MetaSolution> {
        let MicroSolution::Items(items) = micro else {
            return Err(Error::invalid("knapsack solutions are item selections"));
        };
        let budgets = knapsack::extract_meta(self, items);
        Ok(MetaSolution::Budgets(knapsack::rescale_budgets(
            &budgets,
            self.capacity,
        )))
    }

    fn evaluate_meta(&self, scenario: usize, meta: &MetaSolution) -> Result<Option<f64>> {
        let budgets = meta.as_budgets()?;
        knapsack::evaluate_meta(self, scenario, budgets).map(Some)
    }

    fn evaluate_micro(&self, scenario: usize, micro: &MicroSolution) -> Result<f64> {
        let MicroSolution::Items(items) = micro else {
            return Err(Error::invalid("knapsack solutions are item selections"));
        };
        Ok(knapsack::evaluate_items(self, scenario, items))
    }

    fn train_meta_tree(
        &self,
        depth: usize,
        opts: &SolveOptions,
    ) -> Result<TrainedTree<MetaSolution>> {
        let (model, handles) = knapsack::build_surrogate_mip(self, depth, None)?;
        let sol = solve(&model, opts)?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible(Some("surrogate MIP infeasible".into())));
        }
        let tree = knapsack::decode_budget_tree(self, &handles, &sol)?;
        Ok(TrainedTree {
            tree,
            status: sol.status,
            objective: sol.objective,
            bound: sol.bound,
        })
    }

    fn train_micro_tree(
        &self,
        depth: usize,
        opts: &SolveOptions,
    ) -> Result<TrainedTree<MicroSolution>> {
        let (model, handles) = knapsack::build_micro_mip(self, depth)?;
        let sol = solve(&model, opts)?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible(Some("micro MIP infeasible".into())));
        }
        let tree = knapsack::decode_micro_tree(&handles, &sol)?;
        Ok(TrainedTree {
            tree,
            status: sol.status,
            objective: sol.objective,
            bound: sol.bound,
        })
    }

    fn best_single_micro(&self, _opts: &SolveOptions) -> Result<(MicroSolution, SolveStatus)> {
        // Laplace-best single selection: a knapsack with probability-mixed
        // profits.
        let n = self.item_count();
        let mixed: Vec<f64> = (0..n)
            .map(|i| {
                self.scenarios
                    .costs
                    .iter()
                    .zip(&self.scenarios.probabilities)
                    .map(|(c, p)| p * c[i])
                    .sum()
            })
            .collect();
        let mut m = MilpModel::new("micro1", Sense::Maximize);
        let vars: Vec<VarId> = (0..n)
            .map(|i| m.add_binary(format!("x{i}"), mixed[i]))
            .collect::<Result<Vec<_>>>()?;
        m.add_constr(
            "cap",
            vars.iter()
                .zip(&self.weights)
                .map(|(&v, &w)| (v, w))
                .collect(),
            Rel::Le,
            self.capacity,
        )?;
        let sol = solve_bundled(&m, &SolveOptions::default())?;
        let items = vars.iter().map(|&v| sol.value(v) > 0.5).collect();
        Ok((MicroSolution::Items(items), sol.status))
    }
}

impl MetaProblem for SpInstance {
    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn scenarios(&self) -> &ScenarioSet {
        &self.scenarios
    }

    fn feature_mask(&self) -> Option<&[usize]> {
        self.feature_mask.as_deref()
    }

    fn with_scenarios(&self, scenarios: ScenarioSet) -> Result<Self> {
        let mut inst = SpInstance::new(self.graph.clone(), scenarios)?;
        inst.feature_mask = self.feature_mask.clone();
        inst.delta = self.delta;
        Ok(inst)
    }

    fn nominal(&self, scenario: usize) -> Result<(MicroSolution, f64)> {
        let (path, cost) = shortest_path::nominal_shortest_path(self, scenario)?;
        Ok((MicroSolution::Path(path), cost))
    }

    fn extract_meta(&self, micro: &MicroSolution) -> Result<MetaSolution> {
        let MicroSolution::Path(path) = micro else {
            return Err(Error::invalid("shortest-path solutions are edge paths"));
        };
        Ok(MetaSolution::Districts(
            shortest_path::path_district_sequence(&self.graph, path),
        ))
    }

    fn evaluate_meta(&self, scenario: usize, meta: &MetaSolution) -> Result<Option<f64>> {
        let seq = meta.as_districts()?;
        shortest_path::evaluate_meta(self, scenario, seq, Duration::from_secs(10))
    }

    fn evaluate_micro(&self, scenario: usize, micro: &MicroSolution) -> Result<f64> {
        let MicroSolution::Path(path) = micro else {
            return Err(Error::invalid("shortest-path solutions are edge paths"));
        };
        Ok(shortest_path::evaluate_path(self, scenario, path))
    }

    fn train_meta_tree(
        &self,
        depth: usize,
        opts: &SolveOptions,
    ) -> Result<TrainedTree<MetaSolution>> {
        let delta = self.delta_or_default()?;
        let (model, handles) = shortest_path::build_surrogate_mip(self, depth, delta, None)?;
        let sol = solve(&model, opts)?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible(Some(format!(
                "surrogate MIP infeasible; the layer bound {delta} may be too small"
            ))));
        }
        // Unpopulated leaves need some feasible sequence; use the best
        // single meta-path, computed only when a leaf actually needs it.
        let needs_fill = depth >= 1;
        let fill = if needs_fill {
            self.meta1_sequence(opts)?
        } else {
            vec![self.graph.district_of(self.graph.source)]
        };
        let tree = shortest_path::decode_sequence_tree(self, &handles, &sol, &fill)?;
        Ok(TrainedTree {
            tree,
            status: sol.status,
            objective: sol.objective,
            bound: sol.bound,
        })
    }

    fn train_micro_tree(
        &self,
        depth: usize,
        opts: &SolveOptions,
    ) -> Result<TrainedTree<MicroSolution>> {
        let (model, handles) = shortest_path::build_micro_mip(self, depth)?;
        let sol = solve(&model, opts)?;
        if sol.status == SolveStatus::Infeasible {
            return Err(Error::Infeasible(Some("micro MIP infeasible".into())));
        }
        let tree = shortest_path::decode_micro_tree(self, &handles, &sol)?;
        Ok(TrainedTree {
            tree,
            status: sol.status,
            objective: sol.objective,
            bound: sol.bound,
        })
    }

    fn best_single_micro(&self, _opts: &SolveOptions) -> Result<(MicroSolution, SolveStatus)> {
        // Laplace-best single path: a shortest path under probability-mixed
        // costs.
        let mixed: Vec<f64> = (0..self.graph.edge_count())
            .map(|e| {
                self.scenarios
                    .costs
                    .iter()
                    .zip(&self.scenarios.probabilities)
                    .map(|(c, p)| p * c[e])
                    .sum()
            })
            .collect();
        let (path, _) = shortest_path::shortest_path_with_costs(&self.graph, &mixed)?;
        Ok((MicroSolution::Path(path), SolveStatus::Optimal))
    }
}

impl SpInstance {
    /// District sequence of the best single meta-path.
    fn meta1_sequence(&self, opts: &SolveOptions) -> Result<Vec<usize>> {
        let trained = self.train_meta_tree(0, opts)?;
        let MetaSolution::Districts(seq) = &trained.tree.leaves[0] else {
            return Err(Error::invalid("expected a district sequence"));
        };
        Ok(seq.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Query;

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    fn knapsack_two_scenarios() -> KnapsackInstance {
        let profits = vec![vec![5.0, 1.0, 2.0, 1.0], vec![1.0, 5.0, 1.0, 2.0]];
        let scen = ScenarioSet::new(profits.clone(), profits).unwrap();
        KnapsackInstance::new(
            vec![1.0, 1.0, 1.0, 1.0],
            2.0,
            vec![vec![0, 1], vec![2, 3]],
            scen,
        )
        .unwrap()
    }

    #[test]
    fn candidate_diagonal_equals_nominal() {
        let inst = knapsack_two_scenarios();
        let matrix = candidate_matrix(&inst).unwrap();
        for j in 0..2 {
            let nominal = inst.nominal(j).unwrap().1;
            let c = matrix.scenario_candidate[j];
            let got = matrix.costs[j][c].unwrap();
            assert!(
                (got - nominal).abs() < 1e-9,
                "scenario {j}: {got} vs {nominal}"
            );
        }
    }

    #[test]
    fn selection_k_equals_n_picks_row_minima() {
        let costs = vec![vec![Some(1.0), Some(9.0)], vec![Some(9.0), Some(1.0)]];
        let p = vec![0.5, 0.5];
        let sel = solve_selection_ip(&costs, &p, 2, Sense::Minimize, &opts()).unwrap();
        assert!((sel.objective - 1.0).abs() < 1e-9);
        assert_eq!(sel.assignment, vec![0, 1]);
    }

    #[test]
    fn selection_k1_picks_best_column() {
        let costs = vec![vec![Some(1.0), Some(9.0)], vec![Some(9.0), Some(1.0)]];
        let p = vec![0.5, 0.5];
        let sel = solve_selection_ip(&costs, &p, 1, Sense::Minimize, &opts()).unwrap();
        // Either column totals 10; weighted objective 5; lexicographically
        // first subset wins.
        assert!((sel.objective - 5.0).abs() < 1e-9);
        assert_eq!(sel.chosen, vec![0]);
    }

    #[test]
    fn selection_enumeration_matches_milp() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..8 {
            let n = rng.random_range(3..=6);
            let costs: Vec<Vec<Option<f64>>> = (0..n)
                .map(|_| {
                    (0..n)
                        .map(|_| Some(rng.random_range(0..20) as f64))
                        .collect()
                })
                .collect();
            let p = vec![1.0 / n as f64; n];
            let k = rng.random_range(1..=n);
            let enumerated =
                select_by_enumeration(&costs, &p, k, Sense::Minimize, |i, c| costs[i][c].unwrap());
            // Force the MILP route by bypassing the budget check.
            let mut m_opts = opts();
            m_opts.gap_tol = 1e-9;
            let via_ip = {
                let mut m = MilpModel::new("sel", Sense::Minimize);
                let lambda: Vec<VarId> = (0..n)
                    .map(|c| m.add_binary(format!("lam{c}"), 0.0).unwrap())
                    .collect();
                for i in 0..n {
                    let row: Vec<VarId> = (0..n)
                        .map(|c| {
                            m.add_binary(format!("mu{i}_{c}"), p[i] * costs[i][c].unwrap())
                                .unwrap()
                        })
                        .collect();
                    m.add_constr(
                        format!("one{i}"),
                        row.iter().map(|&v| (v, 1.0)).collect(),
                        Rel::Eq,
                        1.0,
                    )
                    .unwrap();
                    for (c, &v) in row.iter().enumerate() {
                        m.add_constr(
                            format!("op{i}_{c}"),
                            vec![(v, 1.0), (lambda[c], -1.0)],
                            Rel::Le,
                            0.0,
                        )
                        .unwrap();
                    }
                }
                m.add_constr(
                    "k",
                    lambda.iter().map(|&v| (v, 1.0)).collect(),
                    Rel::Le,
                    k as f64,
                )
                .unwrap();
                solve_bundled(&m, &m_opts).unwrap().objective
            };
            assert!(
                (enumerated.objective - via_ip).abs() < 1e-6,
                "enumeration {} vs IP {via_ip}",
                enumerated.objective
            );
        }
    }

    #[test]
    fn classifier_pure_labels_give_depth_zero() {
        let features = vec![vec![1.0], vec![2.0], vec![3.0]];
        let tree = fit_classifier(&features, &[1, 1, 1], 2, None).unwrap();
        assert_eq!(tree.depth, 0);
        assert_eq!(*tree.leaf(0), 1);
    }

    #[test]
    fn classifier_separable_labels_split_at_midpoint() {
        let features = vec![vec![1.0], vec![2.0], vec![5.0], vec![6.0]];
        let labels = vec![0, 0, 1, 1];
        let tree = fit_classifier(&features, &labels, 2, None).unwrap();
        assert_eq!(tree.depth, 1);
        assert_eq!(
            tree.queries[0],
            Query {
                feature: 0,
                threshold: 3.5
            }
        );
        assert_eq!(*tree.leaf(0), 0);
        assert_eq!(*tree.leaf(1), 1);
    }

    #[test]
    fn classifier_xor_at_depth_one_keeps_majority() {
        // XOR labels cannot be separated by one univariate split; no split
        // improves impurity, so the tree stays depth 0 with accuracy 1/2.
        let features = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let labels = vec![0, 1, 1, 0];
        let tree = fit_classifier(&features, &labels, 1, None).unwrap();
        assert_eq!(tree.depth, 0);
        let correct = features
            .iter()
            .zip(&labels)
            .filter(|(f, &l)| *tree.leaf(tree.route(f).unwrap()) == l)
            .count();
        assert!(correct * 2 >= labels.len());
    }

    #[test]
    fn learn_heuristic_diagonal_bound() {
        // K = N: selection assigns each scenario its best candidate, so the
        // assignment objective equals the row-best mean.
        let inst = knapsack_two_scenarios();
        let outcome = learn_heuristic(&inst, 2, 1, &opts()).unwrap();
        let matrix = candidate_matrix(&inst).unwrap();
        let expect: f64 = (0..2)
            .map(|i| {
                0.5 * matrix.costs[i]
                    .iter()
                    .filter_map(|c| *c)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        assert!((outcome.assignment_objective - expect).abs() < 1e-9);
        // The fitted tree is a valid surrogate tree.
        assert_eq!(outcome.tree.leaves.len(), 1 << outcome.tree.depth);
    }

    #[test]
    fn learn_heuristic_k1_matches_column_scan() {
        let inst = knapsack_two_scenarios();
        let outcome = learn_heuristic(&inst, 1, 1, &opts()).unwrap();
        let matrix = candidate_matrix(&inst).unwrap();
        let best: f64 = (0..matrix.candidates.len())
            .map(|c| {
                (0..2)
                    .map(|i| 0.5 * matrix.costs[i][c].unwrap())
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((outcome.assignment_objective - best).abs() < 1e-9);
    }

    #[test]
    fn assignment_objective_dominates_meta1() {
        let inst = knapsack_two_scenarios();
        let outcome = learn_heuristic(&inst, 2, 1, &opts()).unwrap();
        let meta1 = best_single_meta(&inst, &opts()).unwrap();
        assert!(outcome.assignment_objective >= meta1.objective - 1e-6);
    }

    #[test]
    fn m2m_dominates_its_micro_source() {
        let inst = knapsack_two_scenarios();
        let outcome = m2m(&inst, 1, &opts()).unwrap();
        let micro_obj = micro_tree_objective(&inst, &outcome.source.tree).unwrap();
        let meta_obj = meta_tree_objective(&inst, &outcome.tree).unwrap();
        assert!(
            meta_obj >= micro_obj - 1e-6,
            "m2m {meta_obj} vs micro {micro_obj}"
        );
    }

    #[test]
    fn single_scenario_micro1_is_nominal() {
        let profits = vec![vec![5.0, 1.0]];
        let scen = ScenarioSet::new(profits.clone(), profits).unwrap();
        let inst =
            KnapsackInstance::new(vec![1.0, 1.0], 1.0, vec![vec![0], vec![1]], scen).unwrap();
        let (micro, status) = inst.best_single_micro(&opts()).unwrap();
        assert_eq!(status, SolveStatus::Optimal);
        let value = inst.evaluate_micro(0, &micro).unwrap();
        assert!((value - inst.nominal(0).unwrap().1).abs() < 1e-9);
    }

    #[test]
    fn antagonistic_micro1_matches_enumeration() {
        let inst = knapsack_two_scenarios();
        let (micro, _) = inst.best_single_micro(&opts()).unwrap();
        let got: f64 = (0..2)
            .map(|j| 0.5 * inst.evaluate_micro(j, &micro).unwrap())
            .sum();
        // Enumerate all selections of weight <= 2.
        let mut best = f64::NEG_INFINITY;
        for mask in 0..16u32 {
            let items: Vec<bool> = (0..4).map(|i| (mask >> i) & 1 == 1).collect();
            let w: f64 = items
                .iter()
                .zip(&inst.weights)
                .filter(|(&t, _)| t)
                .map(|(_, &w)| w)
                .sum();
            if w <= inst.capacity {
                let v: f64 = (0..2)
                    .map(|j| 0.5 * evaluate_items_for_test(&inst, j, &items))
                    .sum();
                best = best.max(v);
            }
        }
        assert!((got - best).abs() < 1e-9);
    }

    fn evaluate_items_for_test(inst: &KnapsackInstance, j: usize, items: &[bool]) -> f64 {
        crate::knapsack::evaluate_items(inst, j, items)
    }
}
