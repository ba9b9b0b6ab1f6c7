//! Instance generation, the benchmark protocol and report emission.

use crate::error::{Error, Result};
use crate::heuristics::{
    best_single_meta, learn_heuristic, meta_tree_objective, micro_tree_objective,
    per_scenario_optimum, MetaProblem,
};
use crate::knapsack::KnapsackInstance;
use crate::milp::{SolveOptions, SolveStatus, SolverBackend};
use crate::model::{scaled_objective, MetaSolution, MicroSolution, ScenarioSet, SurrogateTree};
use crate::shortest_path::{DistrictGraph, SpInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{Duration, Instant};

/// Default relative half-width of the per-coordinate cost noise around the
/// base scenarios.
pub const DEFAULT_COST_SPREAD: f64 = 0.25;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Three base cost vectors; each scenario picks one uniformly and draws
/// every coordinate uniformly within a relative spread around the base.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub bases: Vec<Vec<f64>>,
    pub spread: f64,
}

impl CostModel {
    pub fn generate(dim: usize, n_bases: usize, spread: f64, rng: &mut impl Rng) -> Self {
        let bases = (0..n_bases)
            .map(|_| (0..dim).map(|_| rng.random_range(0.1..=10.0)).collect())
            .collect();
        CostModel { bases, spread }
    }

    pub fn sample_base(&self, base: usize, rng: &mut impl Rng) -> Vec<f64> {
        self.bases[base]
            .iter()
            .map(|&mu| rng.random_range(mu * (1.0 - self.spread)..=mu * (1.0 + self.spread)))
            .collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let base = rng.random_range(0..self.bases.len());
        self.sample_base(base, rng)
    }

    pub fn sample_many(&self, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

/// Seed-deterministic cost vectors from three uniform base scenarios.
pub fn gen_cost_scenarios(dimension: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, 0xC057);
    let model = CostModel::generate(dimension, 3, DEFAULT_COST_SPREAD, &mut rng);
    model.sample_many(count, &mut rng)
}

/// Contiguous categories, as evenly sized as possible.
pub fn even_categories(n: usize, groups: usize) -> Vec<Vec<usize>> {
    let base = n / groups;
    let extra = n % groups;
    let mut out = Vec::with_capacity(groups);
    let mut at = 0;
    for g in 0..groups {
        let size = base + usize::from(g < extra);
        out.push((at..at + size).collect());
        at += size;
    }
    out
}

/// Random knapsack instance: uniform weights, capacity at half the total
/// weight, contiguous categories, scenario profits from a fresh cost model.
pub fn gen_knapsack(
    n: usize,
    f_s: usize,
    n_scenarios: usize,
    seed: u64,
) -> Result<KnapsackInstance> {
    gen_knapsack_with_test(n, f_s, n_scenarios, 0, seed).map(|(inst, _)| inst)
}

/// Knapsack instance plus fresh test profits from the same cost model.
pub fn gen_knapsack_with_test(
    n: usize,
    f_s: usize,
    n_scenarios: usize,
    n_test: usize,
    seed: u64,
) -> Result<(KnapsackInstance, ScenarioSet)> {
    if f_s == 0 || f_s > n {
        return Err(Error::invalid("need 1 <= F_S <= n"));
    }
    let mut rng = rng_for(seed, 0x6B50);
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..=10.0)).collect();
    let capacity = weights.iter().sum::<f64>() / 2.0;
    let model = CostModel::generate(n, 3, DEFAULT_COST_SPREAD, &mut rng);
    let profits = model.sample_many(n_scenarios, &mut rng);
    let scenarios = ScenarioSet::new(profits.clone(), profits)?;
    let inst = KnapsackInstance::new(weights, capacity, even_categories(n, f_s), scenarios)?;
    let test_profits = model.sample_many(n_test.max(1), &mut rng);
    let test = ScenarioSet::new(test_profits.clone(), test_profits)?;
    Ok((inst, test))
}

/// Directed grid graph with `n` x `n` nodes: source in the southwest corner,
/// sink in the northeast, edges pointing east and north, and `f_s` square
/// districts of equal size.
pub fn gen_grid(n: usize, f_s: usize) -> Result<DistrictGraph> {
    let g = (f_s as f64).sqrt().round() as usize;
    if g * g != f_s {
        return Err(Error::invalid(format!(
            "F_S = {f_s} is not a perfect square"
        )));
    }
    if n == 0 || n % g != 0 {
        return Err(Error::invalid(format!(
            "sqrt(F_S) = {g} must divide the grid size {n}"
        )));
    }
    let block = n / g;
    let id = |x: usize, y: usize| y * n + x;
    let mut districts = vec![0; n * n];
    let mut edges = Vec::with_capacity(2 * n * (n - 1));
    for y in 0..n {
        for x in 0..n {
            districts[id(x, y)] = (y / block) * g + x / block;
            if x + 1 < n {
                edges.push((id(x, y), id(x + 1, y)));
            }
            if y + 1 < n {
                edges.push((id(x, y), id(x, y + 1)));
            }
        }
    }
    DistrictGraph::new(districts, edges, id(0, 0), id(n - 1, n - 1))
}

/// The layer bound for square grids: every monotone path crosses exactly
/// 2 sqrt(F_S) - 1 districts.
pub fn grid_delta(f_s: usize) -> usize {
    2 * (f_s as f64).sqrt().round() as usize - 1
}

/// Grid instance with train and test scenarios from one cost model.
pub fn gen_grid_with_test(
    n: usize,
    f_s: usize,
    n_scenarios: usize,
    n_test: usize,
    seed: u64,
) -> Result<(SpInstance, ScenarioSet)> {
    let graph = gen_grid(n, f_s)?;
    let mut rng = rng_for(seed, 0x612D);
    let model = CostModel::generate(graph.edge_count(), 3, DEFAULT_COST_SPREAD, &mut rng);
    let costs = model.sample_many(n_scenarios, &mut rng);
    let scenarios = ScenarioSet::new(costs.clone(), costs)?;
    let inst = SpInstance::new(graph, scenarios)?.with_delta(grid_delta(f_s));
    let test_costs = model.sample_many(n_test.max(1), &mut rng);
    let test = ScenarioSet::new(test_costs.clone(), test_costs)?;
    Ok((inst, test))
}

/// A synthetic road-network model: spatial graph, box-shaped districts and
/// four context-driven traffic patterns. Scenario features append the
/// weekday and hour to the edge costs; trees split on those two only.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub graph: DistrictGraph,
    patterns: Vec<Vec<f64>>,
    spread: f64,
}

/// Traffic pattern from context: weekends run light; workday rush hours are
/// heavy, midday moderate, early and late hours dense.
pub fn traffic_pattern(weekday: u32, hour: u32) -> usize {
    if weekday >= 6 {
        0
    } else if (7..=9).contains(&hour) || (16..=18).contains(&hour) {
        3
    } else if (10..=15).contains(&hour) {
        1
    } else {
        2
    }
}

/// Generates a connected bidirected spatial network with exactly the
/// requested node, directed-edge and district counts.
pub fn gen_network(
    n_nodes: usize,
    n_edges: usize,
    n_districts: usize,
    seed: u64,
) -> Result<NetworkModel> {
    if n_nodes < 2 || n_districts == 0 || n_districts > n_nodes {
        return Err(Error::invalid("bad network dimensions"));
    }
    if n_edges < 2 * (n_nodes - 1) {
        return Err(Error::invalid(format!(
            "need at least {} directed edges to bidirect a spanning tree",
            2 * (n_nodes - 1)
        )));
    }
    let mut rng = rng_for(seed, 0x4E37);
    let pos: Vec<(f64, f64)> = (0..n_nodes)
        .map(|_| (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)))
        .collect();
    let d2 = |a: usize, b: usize| {
        let dx = pos[a].0 - pos[b].0;
        let dy = pos[a].1 - pos[b].1;
        dx * dx + dy * dy
    };

    // Prim spanning tree for connectivity.
    let mut in_tree = vec![false; n_nodes];
    in_tree[0] = true;
    let mut best: Vec<(f64, usize)> = (0..n_nodes).map(|v| (d2(0, v), 0)).collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for _ in 1..n_nodes {
        let mut pick = None;
        for v in 0..n_nodes {
            if !in_tree[v] && pick.map_or(true, |p: usize| best[v].0 < best[p].0) {
                pick = Some(v);
            }
        }
        let v = pick.unwrap();
        in_tree[v] = true;
        pairs.push((best[v].1.min(v), best[v].1.max(v)));
        for w in 0..n_nodes {
            if !in_tree[w] && d2(v, w) < best[w].0 {
                best[w] = (d2(v, w), v);
            }
        }
    }

    // Densify with the shortest remaining pairs until the directed edge
    // budget is met.
    let have: std::collections::HashSet<(usize, usize)> = pairs.iter().copied().collect();
    let mut extra: Vec<(usize, usize)> = Vec::new();
    for a in 0..n_nodes {
        for b in a + 1..n_nodes {
            if !have.contains(&(a, b)) {
                extra.push((a, b));
            }
        }
    }
    extra.sort_by(|&x, &y| d2(x.0, x.1).total_cmp(&d2(y.0, y.1)).then(x.cmp(&y)));
    let mut directed: Vec<(usize, usize)> = Vec::with_capacity(n_edges);
    for &(a, b) in &pairs {
        directed.push((a, b));
        directed.push((b, a));
    }
    let mut extra_iter = extra.into_iter();
    while directed.len() + 2 <= n_edges {
        let Some((a, b)) = extra_iter.next() else {
            break;
        };
        directed.push((a, b));
        directed.push((b, a));
    }
    if directed.len() < n_edges {
        if let Some((a, b)) = extra_iter.next() {
            directed.push((a, b));
        }
    }
    if directed.len() != n_edges {
        return Err(Error::invalid(format!(
            "cannot realize {n_edges} directed edges on {n_nodes} nodes"
        )));
    }

    // Districts: box-like cells from an x-split into column groups and a
    // y-split inside each group.
    let cols = (n_districts as f64).sqrt().ceil() as usize;
    let base_rows = n_districts / cols;
    let extra_rows = n_districts % cols;
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.sort_by(|&a, &b| pos[a].0.total_cmp(&pos[b].0).then(a.cmp(&b)));
    let mut districts = vec![0usize; n_nodes];
    let mut district_id = 0;
    let mut at = 0;
    for c in 0..cols {
        let col_nodes = (n_nodes - at) / (cols - c);
        let mut col: Vec<usize> = order[at..at + col_nodes].to_vec();
        at += col_nodes;
        col.sort_by(|&a, &b| pos[a].1.total_cmp(&pos[b].1).then(a.cmp(&b)));
        let rows = base_rows + usize::from(c < extra_rows);
        let mut row_at = 0;
        for r in 0..rows {
            let row_nodes = (col.len() - row_at) / (rows - r);
            for &v in &col[row_at..row_at + row_nodes] {
                districts[v] = district_id;
            }
            row_at += row_nodes;
            district_id += 1;
        }
    }

    // Northwest-most source, southeast-most sink.
    let source = (0..n_nodes)
        .min_by(|&a, &b| (pos[a].0 - pos[a].1).total_cmp(&(pos[b].0 - pos[b].1)))
        .unwrap();
    let sink = (0..n_nodes)
        .max_by(|&a, &b| (pos[a].0 - pos[a].1).total_cmp(&(pos[b].0 - pos[b].1)))
        .unwrap();

    let graph = DistrictGraph::new(districts, directed, source, sink)?;
    let patterns = (0..4)
        .map(|_| {
            (0..graph.edge_count())
                .map(|_| rng.random_range(0.1..=10.0))
                .collect()
        })
        .collect();
    Ok(NetworkModel {
        graph,
        patterns,
        spread: DEFAULT_COST_SPREAD,
    })
}

impl NetworkModel {
    /// Feature indices of the contextual columns (weekday, hour).
    pub fn context_mask(&self) -> Vec<usize> {
        let e = self.graph.edge_count();
        vec![e, e + 1]
    }

    /// Scenarios with context-driven traffic: costs plus (weekday, hour)
    /// feature columns.
    pub fn sample_scenarios(&self, count: usize, rng: &mut impl Rng) -> Result<ScenarioSet> {
        let mut features = Vec::with_capacity(count);
        let mut costs = Vec::with_capacity(count);
        for _ in 0..count {
            let weekday = rng.random_range(1..=7u32);
            let hour = rng.random_range(0..=23u32);
            let pattern = traffic_pattern(weekday, hour);
            let cost: Vec<f64> = self.patterns[pattern]
                .iter()
                .map(|&mu| rng.random_range(mu * (1.0 - self.spread)..=mu * (1.0 + self.spread)))
                .collect();
            let mut feat = cost.clone();
            feat.push(weekday as f64);
            feat.push(hour as f64);
            features.push(feat);
            costs.push(cost);
        }
        ScenarioSet::new(features, costs)
    }

    /// A masked training instance plus a test set.
    pub fn instance_with_test(
        &self,
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> Result<(SpInstance, ScenarioSet)> {
        let mut rng = rng_for(seed, 0x5CE4);
        let train = self.sample_scenarios(n_train, &mut rng)?;
        let test = self.sample_scenarios(n_test, &mut rng)?;
        let inst = SpInstance::new(self.graph.clone(), train)?.with_mask(self.context_mask());
        Ok((inst, test))
    }
}

// ---------------------------------------------------------------------------
// Benchmark protocol.
// ---------------------------------------------------------------------------

/// A benchmark method name; the tree leaf count is the trailing number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Mip(usize),
    Micro(usize),
    Lh(usize),
    M2m(usize),
    Meta1,
    Micro1,
    Opt,
}

impl Method {
    pub fn parse(text: &str) -> Result<Method> {
        let t = text.trim().to_ascii_lowercase();
        let split = |prefix: &str| -> Result<usize> {
            let k: usize = t[prefix.len()..]
                .parse()
                .map_err(|_| Error::invalid(format!("bad method {text:?}")))?;
            if !k.is_power_of_two() {
                return Err(Error::invalid(format!(
                    "leaf count must be a power of two: {text:?}"
                )));
            }
            Ok(k)
        };
        match t.as_str() {
            "meta1" | "mip1" => Ok(Method::Meta1), // one leaf drops the tree block
            "micro1" => Ok(Method::Micro1),
            "opt" => Ok(Method::Opt),
            _ if t.starts_with("micro") => Ok(Method::Micro(split("micro")?)),
            _ if t.starts_with("mip") => Ok(Method::Mip(split("mip")?)),
            _ if t.starts_with("lh") => Ok(Method::Lh(split("lh")?)),
            _ if t.starts_with("m2m") => Ok(Method::M2m(split("m2m")?)),
            _ => Err(Error::invalid(format!("unknown method {text:?}"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Method::Mip(k) => format!("MIP{k}"),
            Method::Micro(k) => format!("MICRO{k}"),
            Method::Lh(k) => format!("LH{k}"),
            Method::M2m(k) => format!("M2M{k}"),
            Method::Meta1 => "META1".into(),
            Method::Micro1 => "MICRO1".into(),
            Method::Opt => "OPT".into(),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            Method::Mip(k) | Method::Micro(k) | Method::Lh(k) | Method::M2m(k) => *k,
            _ => 1,
        }
    }

    fn depth(&self) -> usize {
        self.leaves().trailing_zeros() as usize
    }
}

pub const DEFAULT_METHODS: &[Method] = &[
    Method::Mip(2),
    Method::Mip(4),
    Method::Micro(2),
    Method::Micro(4),
    Method::Lh(2),
    Method::Lh(4),
    Method::M2m(2),
    Method::M2m(4),
    Method::Meta1,
    Method::Micro1,
    Method::Opt,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Knapsack,
    Grid,
    Network,
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Knapsack => "knapsack",
            ProblemKind::Grid => "grid",
            ProblemKind::Network => "network",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Items,
    Scenarios,
    Features,
    GridSize,
    Single,
}

/// Full benchmark description. Desk-scale defaults; the paper-scale values
/// (100 runs, 100-scenario test sets, 900 s limit) remain selectable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub problem: ProblemKind,
    pub axis: Axis,
    pub axis_values: Vec<usize>,
    pub items: usize,
    pub scenarios: usize,
    pub features: usize,
    pub grid_size: usize,
    pub network_nodes: usize,
    pub network_edges: usize,
    pub network_districts: usize,
    pub methods: Vec<Method>,
    pub runs: usize,
    pub seed: u64,
    pub test_scenarios: usize,
    pub time_limit_s: f64,
    /// External solver command template; `None` means the bundled solver.
    #[serde(default)]
    pub external_solver: Option<String>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_jobs() -> usize {
    1
}

impl BenchmarkConfig {
    pub fn desk_default(problem: ProblemKind) -> Self {
        BenchmarkConfig {
            problem,
            axis: Axis::Single,
            axis_values: vec![0],
            items: 16,
            scenarios: 10,
            features: if matches!(problem, ProblemKind::Grid) {
                9
            } else {
                4
            },
            grid_size: 9,
            network_nodes: 538,
            network_edges: 1308,
            network_districts: 11,
            methods: DEFAULT_METHODS.to_vec(),
            runs: 20,
            seed: 1,
            test_scenarios: 50,
            time_limit_s: 120.0,
            external_solver: None,
            jobs: 1,
        }
    }

    /// Named desk-scale presets mirroring the published experiment tables.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            // Grid 9x9 with nine districts: the two-leaf tree methods.
            "table2-row" => {
                let mut cfg = Self::desk_default(ProblemKind::Grid);
                cfg.grid_size = 9;
                cfg.features = 9;
                cfg.scenarios = 10;
                cfg.runs = 20;
                cfg.test_scenarios = 50;
                cfg.time_limit_s = 600.0;
                cfg.methods = vec![
                    Method::Mip(2),
                    Method::Micro(2),
                    Method::Lh(2),
                    Method::M2m(2),
                    Method::Micro1,
                    Method::Opt,
                ];
                Ok(cfg)
            }
            // Road-network comparison of the four-leaf methods.
            "table3" => {
                let mut cfg = Self::desk_default(ProblemKind::Network);
                cfg.scenarios = 10;
                cfg.test_scenarios = 200;
                cfg.runs = 5;
                cfg.time_limit_s = 120.0;
                cfg.methods = vec![
                    Method::Lh(4),
                    Method::M2m(4),
                    Method::Micro(4),
                    Method::Micro1,
                    Method::Opt,
                ];
                Ok(cfg)
            }
            other => Err(Error::invalid(format!("unknown preset {other:?}"))),
        }
    }

    fn solver_backend(&self) -> SolverBackend {
        match &self.external_solver {
            Some(cmd) if !cmd.trim().is_empty() => {
                SolverBackend::External(crate::milp::ExternalSolver::new(cmd.clone()))
            }
            _ => SolverBackend::Bundled,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            backend: self.solver_backend(),
            time_limit: Some(Duration::from_secs_f64(self.time_limit_s)),
            ..SolveOptions::default()
        }
    }
}

/// One CSV row of the evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: usize,
    pub method: String,
    pub k: usize,
    pub problem: String,
    pub axis_value: usize,
    pub obj_train_raw: Option<f64>,
    pub obj_train_scaled: Option<f64>,
    pub obj_test_raw: Option<f64>,
    pub obj_test_scaled: Option<f64>,
    pub time_s: f64,
    pub status: String,
}

/// Anything trainable and evaluable in a run.
enum Trained {
    Meta(SurrogateTree<MetaSolution>),
    Micro(SurrogateTree<MicroSolution>),
    /// Per-scenario optimum; no tree to carry.
    Optimum,
}

struct MethodOutcome {
    trained: Trained,
    status: SolveStatus,
    seconds: f64,
    /// Solver-claimed training objective where one exists.
    claimed: Option<f64>,
    /// Dual bound of the underlying solve where one exists.
    bound: Option<f64>,
}

fn evaluate_trained<P: MetaProblem>(problem: &P, trained: &Trained) -> Result<f64> {
    match trained {
        Trained::Meta(tree) => meta_tree_objective(problem, tree),
        Trained::Micro(tree) => micro_tree_objective(problem, tree),
        Trained::Optimum => per_scenario_optimum(problem),
    }
}

/// One generated run: train and test instances plus scaling anchors. The
/// trained micro tree is cached per depth so M2Mx inherits MICROx's solve
/// (and its solve time, matching how the benchmark attributes it).
struct RunContext<P> {
    train: P,
    test: P,
    micro1_train: f64,
    micro1_test: f64,
    opt_train: f64,
    opt_test: f64,
    micro_cache: std::cell::RefCell<
        std::collections::HashMap<usize, std::result::Result<(TrainedMicro, f64), String>>,
    >,
}

type TrainedMicro = crate::heuristics::TrainedTree<MicroSolution>;

impl<P: MetaProblem> RunContext<P> {
    fn build(train: P, test_set: ScenarioSet, opts: &SolveOptions) -> Result<Self> {
        let test = train.with_scenarios(test_set)?;
        let (micro1, _) = train.best_single_micro(opts)?;
        let micro1_tree = SurrogateTree::new(vec![], vec![micro1])?;
        let micro1_train = micro_tree_objective(&train, &micro1_tree)?;
        let micro1_test = micro_tree_objective(&test, &micro1_tree)?;
        let opt_train = per_scenario_optimum(&train)?;
        let opt_test = per_scenario_optimum(&test)?;
        Ok(RunContext {
            train,
            test,
            micro1_train,
            micro1_test,
            opt_train,
            opt_test,
            micro_cache: Default::default(),
        })
    }

    fn micro_tree(&self, depth: usize, opts: &SolveOptions) -> Result<(TrainedMicro, f64)> {
        if let Some(cached) = self.micro_cache.borrow().get(&depth) {
            return cached.clone().map_err(Error::SolverFailure);
        }
        let start = Instant::now();
        let outcome = self
            .train
            .train_micro_tree(depth, opts)
            .map(|t| (t, start.elapsed().as_secs_f64()))
            .map_err(|e| e.to_string());
        self.micro_cache.borrow_mut().insert(depth, outcome.clone());
        outcome.map_err(Error::SolverFailure)
    }

    fn train_method(&self, method: Method, opts: &SolveOptions) -> Result<MethodOutcome> {
        let start = Instant::now();
        let outcome = match method {
            Method::Opt => MethodOutcome {
                trained: Trained::Optimum,
                status: SolveStatus::Optimal,
                seconds: 0.0,
                claimed: None,
                bound: None,
            },
            Method::Micro1 => {
                let (micro, status) = self.train.best_single_micro(opts)?;
                MethodOutcome {
                    trained: Trained::Micro(SurrogateTree::new(vec![], vec![micro])?),
                    status,
                    seconds: 0.0,
                    claimed: None,
                    bound: None,
                }
            }
            Method::Meta1 => {
                let trained = best_single_meta(&self.train, opts)?;
                MethodOutcome {
                    trained: Trained::Meta(trained.tree),
                    status: trained.status,
                    seconds: 0.0,
                    claimed: Some(trained.objective),
                    bound: Some(trained.bound),
                }
            }
            Method::Mip(_) => {
                let trained = self.train.train_meta_tree(method.depth(), opts)?;
                MethodOutcome {
                    trained: Trained::Meta(trained.tree),
                    status: trained.status,
                    seconds: 0.0,
                    claimed: Some(trained.objective),
                    bound: Some(trained.bound),
                }
            }
            Method::Micro(_) => {
                let (trained, seconds) = self.micro_tree(method.depth(), opts)?;
                return Ok(MethodOutcome {
                    status: trained.status,
                    claimed: Some(trained.objective),
                    bound: Some(trained.bound),
                    trained: Trained::Micro(trained.tree),
                    seconds,
                });
            }
            Method::Lh(_) => {
                let outcome = learn_heuristic(&self.train, method.leaves(), method.depth(), opts)?;
                MethodOutcome {
                    trained: Trained::Meta(outcome.tree),
                    status: SolveStatus::Feasible,
                    seconds: 0.0,
                    claimed: None,
                    bound: None,
                }
            }
            Method::M2m(_) => {
                let (source, micro_seconds) = self.micro_tree(method.depth(), opts)?;
                let conv_start = Instant::now();
                let tree = crate::heuristics::m2m_from_source(&self.train, &source.tree)?;
                return Ok(MethodOutcome {
                    trained: Trained::Meta(tree),
                    status: source.status,
                    claimed: None,
                    bound: Some(source.bound),
                    seconds: micro_seconds + conv_start.elapsed().as_secs_f64(),
                });
            }
        };
        Ok(MethodOutcome {
            seconds: start.elapsed().as_secs_f64(),
            ..outcome
        })
    }

    fn row(
        &self,
        run_id: usize,
        axis_value: usize,
        problem: &str,
        method: Method,
        opts: &SolveOptions,
    ) -> ReportRow {
        match self.try_row(method, opts) {
            Ok((train_raw, test_raw, seconds, status)) => ReportRow {
                run_id,
                method: method.name(),
                k: method.leaves(),
                problem: problem.into(),
                axis_value,
                obj_train_raw: Some(train_raw),
                obj_train_scaled: scaled_objective(train_raw, self.micro1_train, self.opt_train)
                    .value(),
                obj_test_raw: Some(test_raw),
                obj_test_scaled: scaled_objective(test_raw, self.micro1_test, self.opt_test)
                    .value(),
                time_s: seconds,
                status,
            },
            Err(e) => ReportRow {
                run_id,
                method: method.name(),
                k: method.leaves(),
                problem: problem.into(),
                axis_value,
                obj_train_raw: None,
                obj_train_scaled: None,
                obj_test_raw: None,
                obj_test_scaled: None,
                time_s: 0.0,
                status: format!("failed: {e}").replace(',', ";"),
            },
        }
    }

    fn try_row(&self, method: Method, opts: &SolveOptions) -> Result<(f64, f64, f64, String)> {
        let outcome = self.train_method(method, opts)?;
        let train_raw = evaluate_trained(&self.train, &outcome.trained)?;
        // Audit: a solver that claims optimality must agree with the
        // independent re-evaluation of its own tree.
        if let (Some(claimed), SolveStatus::Optimal) = (outcome.claimed, outcome.status) {
            let scale = 1.0 + claimed.abs();
            if (claimed - train_raw).abs() > 1e-5 * scale {
                return Err(Error::SolverFailure(format!(
                    "audit mismatch for {}: solver claims {claimed}, re-evaluation gives {train_raw}",
                    method.name()
                )));
            }
        }
        let test_raw = evaluate_trained(&self.test, &outcome.trained)?;
        // Time-limited solves report the remaining bound gap.
        let status = match (outcome.status, outcome.claimed, outcome.bound) {
            (SolveStatus::Feasible, Some(obj), Some(bound)) if bound.is_finite() => {
                format!("feasible(gap={:.3e})", (bound - obj).abs())
            }
            (status, _, _) => format!("{status:?}").to_lowercase(),
        };
        Ok((train_raw, test_raw, outcome.seconds, status))
    }
}

fn apply_axis(cfg: &BenchmarkConfig, value: usize) -> BenchmarkConfig {
    let mut c = cfg.clone();
    match cfg.axis {
        Axis::Items => c.items = value,
        Axis::Scenarios => c.scenarios = value,
        Axis::Features => c.features = value,
        Axis::GridSize => c.grid_size = value,
        Axis::Single => {}
    }
    c
}

fn rows_for_ctx<P: MetaProblem>(
    ctx: Result<RunContext<P>>,
    c: &BenchmarkConfig,
    run_id: usize,
    axis_value: usize,
    opts: &SolveOptions,
) -> Vec<ReportRow> {
    let problem = c.problem.name();
    match ctx {
        Ok(ctx) => c
            .methods
            .iter()
            .map(|&m| ctx.row(run_id, axis_value, problem, m, opts))
            .collect(),
        Err(e) => c
            .methods
            .iter()
            .map(|m| ReportRow {
                run_id,
                method: m.name(),
                k: m.leaves(),
                problem: problem.into(),
                axis_value,
                obj_train_raw: None,
                obj_train_scaled: None,
                obj_test_raw: None,
                obj_test_scaled: None,
                time_s: 0.0,
                status: format!("failed: {e}").replace(',', ";"),
            })
            .collect(),
    }
}

fn run_one(cfg: &BenchmarkConfig, axis_value: usize, run_id: usize) -> Vec<ReportRow> {
    let c = apply_axis(cfg, axis_value);
    let opts = c.solve_options();
    let seed = c.seed.wrapping_add(run_id as u64);
    match c.problem {
        ProblemKind::Knapsack => {
            let ctx =
                gen_knapsack_with_test(c.items, c.features, c.scenarios, c.test_scenarios, seed)
                    .and_then(|(inst, test)| RunContext::build(inst, test, &opts));
            rows_for_ctx(ctx, &c, run_id, axis_value, &opts)
        }
        ProblemKind::Grid => {
            let ctx =
                gen_grid_with_test(c.grid_size, c.features, c.scenarios, c.test_scenarios, seed)
                    .and_then(|(inst, test)| RunContext::build(inst, test, &opts));
            rows_for_ctx(ctx, &c, run_id, axis_value, &opts)
        }
        ProblemKind::Network => {
            let ctx = gen_network(c.network_nodes, c.network_edges, c.network_districts, seed)
                .and_then(|model| model.instance_with_test(c.scenarios, c.test_scenarios, seed))
                .and_then(|(inst, test)| RunContext::build(inst, test, &opts));
            rows_for_ctx(ctx, &c, run_id, axis_value, &opts)
        }
    }
}

/// Runs the full benchmark. Rows come back sorted by (axis value, run,
/// method order); all randomness derives from the config seed.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<ReportRow>> {
    run_benchmark_filtered(cfg, |_, _| true)
}

/// Like [`run_benchmark`], skipping (axis_value, run_id) pairs the filter
/// rejects (used to resume interrupted sweeps).
pub fn run_benchmark_filtered(
    cfg: &BenchmarkConfig,
    keep: impl Fn(usize, usize) -> bool + Sync,
) -> Result<Vec<ReportRow>> {
    let mut tasks: Vec<(usize, usize)> = Vec::new();
    for &axis_value in &cfg.axis_values {
        for run in 0..cfg.runs {
            if keep(axis_value, run) {
                tasks.push((axis_value, run));
            }
        }
    }
    let jobs = cfg.jobs.max(1);
    let mut rows = Vec::new();
    if jobs == 1 {
        for &(axis_value, run) in &tasks {
            rows.extend(run_one(cfg, axis_value, run));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Vec<std::sync::Mutex<Vec<ReportRow>>> = tasks
            .iter()
            .map(|_| std::sync::Mutex::new(Vec::new()))
            .collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(tasks.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= tasks.len() {
                        break;
                    }
                    let (axis_value, run) = tasks[i];
                    *results[i].lock().unwrap() = run_one(cfg, axis_value, run);
                });
            }
        });
        for cell in results {
            rows.extend(cell.into_inner().unwrap());
        }
    }
    Ok(rows)
}

/// Writes rows in the report CSV schema.
pub fn write_report_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "run_id",
        "method",
        "K",
        "problem",
        "axis_value",
        "obj_train_raw",
        "obj_train_scaled",
        "obj_test_raw",
        "obj_test_scaled",
        "time_s",
        "status",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.run_id.to_string(),
            r.method.clone(),
            r.k.to_string(),
            r.problem.clone(),
            r.axis_value.to_string(),
            fmt(r.obj_train_raw),
            fmt(r.obj_train_scaled),
            fmt(r.obj_test_raw),
            fmt(r.obj_test_scaled),
            format!("{:.3}", r.time_s),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows previously written by [`write_report_csv`].
pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let opt = |i: usize| -> Option<f64> {
            rec.get(i)
                .filter(|s| !s.is_empty())
                .and_then(|s| s.parse().ok())
        };
        rows.push(ReportRow {
            run_id: rec.get(0).and_then(|s| s.parse().ok()).unwrap_or(0),
            method: rec.get(1).unwrap_or_default().to_string(),
            k: rec.get(2).and_then(|s| s.parse().ok()).unwrap_or(1),
            problem: rec.get(3).unwrap_or_default().to_string(),
            axis_value: rec.get(4).and_then(|s| s.parse().ok()).unwrap_or(0),
            obj_train_raw: opt(5),
            obj_train_scaled: opt(6),
            obj_test_raw: opt(7),
            obj_test_scaled: opt(8),
            time_s: opt(9).unwrap_or(0.0),
            status: rec.get(10).unwrap_or_default().to_string(),
        });
    }
    Ok(rows)
}
