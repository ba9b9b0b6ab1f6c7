//! Command-line front end wiring the instance generators, trainers,
//! evaluators and the external-solver bridge.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use metatree_core::error::Error as CoreError;
use metatree_core::experiments::{
    self, gen_grid_with_test, gen_knapsack_with_test, gen_network, Axis, BenchmarkConfig, Method,
    ProblemKind,
};
use metatree_core::heuristics::{
    best_single_meta, learn_heuristic, m2m, meta_tree_objective, micro_tree_objective,
    per_scenario_optimum, MetaProblem,
};
use metatree_core::knapsack::{self, KnapsackInstance};
use metatree_core::milp::{ExternalSolver, SolveOptions, SolveStatus, SolverBackend};
use metatree_core::model::{
    scaled_objective, MetaSolution, MicroSolution, ScenarioSet, SurrogateTree,
};
use metatree_core::shortest_path::{self, SpInstance};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

/// Environment variable holding the default external solver command.
const SOLVER_ENV: &str = "METATREE_SOLVER";

#[derive(Parser)]
#[command(
    name = "metatree",
    version,
    about = "Decision-tree optimization rules over meta-solutions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate instances and scenario files.
    Generate {
        #[command(subcommand)]
        what: GenerateCmd,
    },
    /// Train an optimization rule on an instance.
    Train(TrainArgs),
    /// Evaluate a trained rule on a scenario set.
    Evaluate(EvaluateArgs),
    /// Run the full benchmark protocol.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum GenerateCmd {
    /// Knapsack instance (single JSON file with embedded scenarios).
    Knapsack {
        #[arg(long, default_value_t = 16)]
        items: usize,
        /// Number of item categories (solution features).
        #[arg(long, default_value_t = 4)]
        categories: usize,
        #[arg(long, default_value_t = 10)]
        scenarios: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a test scenario set (JSON) of this size.
        #[arg(long, default_value_t = 0)]
        test_scenarios: usize,
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Square grid graph plus cost scenarios (graph JSON + scenario CSV).
    Grid {
        #[arg(long, default_value_t = 9)]
        size: usize,
        /// Number of square districts (a perfect square dividing size^2).
        #[arg(long, default_value_t = 9)]
        districts: usize,
        #[arg(long, default_value_t = 10)]
        scenarios: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        graph_out: PathBuf,
        #[arg(long)]
        scenarios_out: PathBuf,
        #[arg(long, default_value_t = 0)]
        test_scenarios: usize,
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Synthetic road network with contextual traffic scenarios.
    Network {
        #[arg(long, default_value_t = 538)]
        nodes: usize,
        #[arg(long, default_value_t = 1308)]
        edges: usize,
        #[arg(long, default_value_t = 11)]
        districts: usize,
        #[arg(long, default_value_t = 10)]
        scenarios: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        graph_out: PathBuf,
        #[arg(long)]
        scenarios_out: PathBuf,
        #[arg(long, default_value_t = 0)]
        test_scenarios: usize,
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InstanceArgs {
    /// Knapsack instance file (JSON).
    #[arg(long, conflicts_with_all = ["graph", "scenarios"])]
    instance: Option<PathBuf>,
    /// District graph file (JSON); requires --scenarios.
    #[arg(long, requires = "scenarios")]
    graph: Option<PathBuf>,
    /// Scenario CSV for the graph instance.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Feature indices the tree may split on (comma-separated).
    #[arg(long, value_delimiter = ',')]
    mask: Option<Vec<usize>>,
    /// Layer bound for meta-path models; derived from the training
    /// scenarios when omitted.
    #[arg(long)]
    delta: Option<usize>,
}

#[derive(Args)]
struct SolverArgs {
    /// Time limit per solve, seconds.
    #[arg(long, default_value_t = 120.0)]
    time_limit: f64,
    /// Solver selection: bundled branch-and-bound or an external executable.
    #[arg(long, default_value = "bundled", value_parser = ["bundled", "external"])]
    solver: String,
    /// External solver command template with {mps} {sol} {timelimit}
    /// placeholders; defaults to $METATREE_SOLVER.
    #[arg(long)]
    solver_cmd: Option<String>,
}

impl SolverArgs {
    fn options(&self) -> anyhow::Result<SolveOptions> {
        let backend = match self.solver.as_str() {
            "bundled" => SolverBackend::Bundled,
            "external" => {
                let cmd = match &self.solver_cmd {
                    Some(c) => c.clone(),
                    None => std::env::var(SOLVER_ENV).map_err(|_| {
                        anyhow::anyhow!(
                            "--solver external needs --solver-cmd or the {SOLVER_ENV} variable"
                        )
                    })?,
                };
                SolverBackend::External(ExternalSolver::new(cmd))
            }
            _ => unreachable!("clap validates"),
        };
        Ok(SolveOptions {
            backend,
            time_limit: Some(Duration::from_secs_f64(self.time_limit)),
            ..SolveOptions::default()
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InstanceArgs,
    /// Method: mip2, mip4, micro2, micro4, lh2, lh4, m2m2, m2m4, meta1, micro1.
    #[arg(long)]
    method: String,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InstanceArgs,
    /// Trained rule (JSON, as written by train).
    #[arg(long)]
    tree: PathBuf,
    /// Scenario set to evaluate on (knapsack: JSON, graph: CSV); defaults to
    /// the instance's own training scenarios.
    #[arg(long)]
    eval_scenarios: Option<PathBuf>,
    /// Skip the MICRO1/OPT anchor solves and report raw objectives only.
    #[arg(long)]
    no_anchors: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark config JSON.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named desk preset: table2-row or table3.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_parser = ["knapsack", "grid", "network"])]
    problem: Option<String>,
    /// Sweep axis: items, scenarios, features, grid_size or single.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    axis_values: Option<Vec<usize>>,
    /// Comma-separated method list; defaults to all.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    test_scenarios: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    solver_cmd: Option<String>,
    /// Skip (axis value, run) pairs already present in the output file.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Trained-rule file: the tree plus method metadata and solve status.
#[derive(Serialize, Deserialize)]
struct TreeFile {
    method: String,
    k: usize,
    status: String,
    objective_train: Option<f64>,
    bound: Option<f64>,
    time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    assignment_objective: Option<f64>,
    tree: serde_json::Value,
}

enum LoadedInstance {
    Knapsack(KnapsackInstance),
    Path(SpInstance),
}

fn load_instance(args: &InstanceArgs) -> anyhow::Result<LoadedInstance> {
    match (&args.instance, &args.graph) {
        (Some(path), None) => {
            let inst = KnapsackInstance::load(path)
                .with_context(|| format!("loading knapsack instance {}", path.display()))?;
            Ok(LoadedInstance::Knapsack(inst))
        }
        (None, Some(gpath)) => {
            let graph = metatree_core::shortest_path::DistrictGraph::load(gpath)
                .with_context(|| format!("loading graph {}", gpath.display()))?;
            let spath = args.scenarios.as_ref().expect("clap enforces --scenarios");
            let scen = shortest_path::load_scenarios_csv(spath, graph.edge_count())
                .with_context(|| format!("loading scenarios {}", spath.display()))?;
            let mut inst = SpInstance::new(graph, scen)?;
            if let Some(mask) = &args.mask {
                inst = inst.with_mask(mask.clone());
            }
            if let Some(delta) = args.delta {
                inst = inst.with_delta(delta);
            }
            Ok(LoadedInstance::Path(inst))
        }
        _ => bail!("provide either --instance (knapsack) or --graph with --scenarios"),
    }
}

fn train_any<P: MetaProblem>(
    problem: &P,
    method: Method,
    opts: &SolveOptions,
) -> anyhow::Result<TreeFile> {
    let start = Instant::now();
    let (tree_json, status, objective, bound, assignment) = match method {
        Method::Opt => bail!("opt is not a trainable rule; use bench for the OPT anchor"),
        Method::Micro1 => {
            let (micro, status) = problem.best_single_micro(opts)?;
            let tree = SurrogateTree::new(vec![], vec![micro])?;
            let obj = micro_tree_objective(problem, &tree)?;
            (serde_json::to_value(&tree)?, status, Some(obj), None, None)
        }
        Method::Meta1 => {
            let trained = best_single_meta(problem, opts)?;
            let obj = meta_tree_objective(problem, &trained.tree)?;
            (
                serde_json::to_value(&trained.tree)?,
                trained.status,
                Some(obj),
                Some(trained.bound),
                None,
            )
        }
        Method::Mip(_) => {
            let trained = problem.train_meta_tree(method_depth(method), opts)?;
            let obj = meta_tree_objective(problem, &trained.tree)?;
            (
                serde_json::to_value(&trained.tree)?,
                trained.status,
                Some(obj),
                Some(trained.bound),
                None,
            )
        }
        Method::Micro(_) => {
            let trained = problem.train_micro_tree(method_depth(method), opts)?;
            let obj = micro_tree_objective(problem, &trained.tree)?;
            (
                serde_json::to_value(&trained.tree)?,
                trained.status,
                Some(obj),
                Some(trained.bound),
                None,
            )
        }
        Method::Lh(k) => {
            let outcome = learn_heuristic(problem, k, method_depth(method), opts)?;
            let obj = meta_tree_objective(problem, &outcome.tree)?;
            (
                serde_json::to_value(&outcome.tree)?,
                SolveStatus::Feasible,
                Some(obj),
                None,
                Some(outcome.assignment_objective),
            )
        }
        Method::M2m(_) => {
            let outcome = m2m(problem, method_depth(method), opts)?;
            let obj = meta_tree_objective(problem, &outcome.tree)?;
            (
                serde_json::to_value(&outcome.tree)?,
                outcome.source.status,
                Some(obj),
                None,
                None,
            )
        }
    };
    Ok(TreeFile {
        method: method.name(),
        k: method.leaves(),
        status: format!("{status:?}").to_lowercase(),
        objective_train: objective,
        bound,
        time_s: start.elapsed().as_secs_f64(),
        assignment_objective: assignment,
        tree: tree_json,
    })
}

fn method_depth(m: Method) -> usize {
    m.leaves().trailing_zeros() as usize
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let method = Method::parse(&args.method)?;
    let opts = args.solver.options()?;
    let file = match load_instance(&args.input)? {
        LoadedInstance::Knapsack(inst) => train_any(&inst, method, &opts)?,
        LoadedInstance::Path(inst) => train_any(&inst, method, &opts)?,
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&file)?)?;
    println!(
        "{}: status {}, training objective {}",
        file.method,
        file.status,
        file.objective_train
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default()
    );
    Ok(())
}

/// The tree payload of a trained-rule file (accepts a bare tree document
/// too).
fn load_tree_value(path: &Path) -> anyhow::Result<(serde_json::Value, String, usize)> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(file) = serde_json::from_str::<TreeFile>(&text) {
        return Ok((file.tree, file.method, file.k));
    }
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let k = value
        .get("leaves")
        .and_then(|l| l.as_array())
        .map(|l| l.len())
        .unwrap_or(1);
    Ok((value, "TREE".into(), k))
}

fn evaluate_any<P: MetaProblem>(
    train: &P,
    eval_set: Option<ScenarioSet>,
    tree_value: serde_json::Value,
    no_anchors: bool,
    opts: &SolveOptions,
) -> anyhow::Result<(f64, Option<f64>, Option<f64>, Option<f64>)> {
    let eval = match eval_set {
        Some(set) => train.with_scenarios(set)?,
        None => train.with_scenarios(train.scenarios().clone())?,
    };
    // Meta trees and micro trees share the document shape; try both.
    let raw = if let Ok(tree) =
        serde_json::from_value::<SurrogateTree<MetaSolution>>(tree_value.clone())
    {
        meta_tree_objective(&eval, &tree)?
    } else {
        let tree: SurrogateTree<MicroSolution> = serde_json::from_value(tree_value)?;
        micro_tree_objective(&eval, &tree)?
    };
    if no_anchors {
        return Ok((raw, None, None, None));
    }
    let anchors = (|| -> metatree_core::Result<(f64, f64)> {
        let (micro1, _) = train.best_single_micro(opts)?;
        let micro1_tree = SurrogateTree::new(vec![], vec![micro1])?;
        let micro1_val = micro_tree_objective(&eval, &micro1_tree)?;
        let opt_val = per_scenario_optimum(&eval)?;
        Ok((micro1_val, opt_val))
    })();
    match anchors {
        Ok((micro1_val, opt_val)) => Ok((
            raw,
            scaled_objective(raw, micro1_val, opt_val).value(),
            Some(micro1_val),
            Some(opt_val),
        )),
        Err(e) => {
            eprintln!("warning: anchor solves failed ({e}); reporting raw objective only");
            Ok((raw, None, None, None))
        }
    }
}

fn cmd_evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let opts = args.solver.options()?;
    let (tree_value, method, k) = load_tree_value(&args.tree)?;
    let loaded = load_instance(&args.input)?;
    let (raw, scaled, micro1, opt) = match &loaded {
        LoadedInstance::Knapsack(inst) => {
            let eval_set = match &args.eval_scenarios {
                Some(p) => Some(knapsack::load_scenarios_json(p)?),
                None => None,
            };
            evaluate_any(inst, eval_set, tree_value, args.no_anchors, &opts)?
        }
        LoadedInstance::Path(inst) => {
            let eval_set = match &args.eval_scenarios {
                Some(p) => Some(shortest_path::load_scenarios_csv(
                    p,
                    inst.graph.edge_count(),
                )?),
                None => None,
            };
            evaluate_any(inst, eval_set, tree_value, args.no_anchors, &opts)?
        }
    };
    if args.no_anchors {
        eprintln!("warning: anchors skipped; scaled objectives not computed");
    }
    let problem = match &loaded {
        LoadedInstance::Knapsack(_) => "knapsack",
        LoadedInstance::Path(_) => "graph",
    };
    let rows = vec![experiments::ReportRow {
        run_id: 0,
        method,
        k,
        problem: problem.into(),
        axis_value: 0,
        obj_train_raw: None,
        obj_train_scaled: None,
        obj_test_raw: Some(raw),
        obj_test_scaled: scaled,
        time_s: 0.0,
        status: "evaluated".into(),
    }];
    experiments::write_report_csv(&rows, &args.out)?;
    match (scaled, micro1, opt) {
        (Some(s), Some(m1), Some(o)) => {
            println!("objective {raw:.6}, scaled {s:.4} (MICRO1 {m1:.6}, OPT {o:.6})")
        }
        _ => println!("objective {raw:.6} (raw only)"),
    }
    Ok(())
}

fn parse_axis(text: &str) -> anyhow::Result<Axis> {
    Ok(match text {
        "items" => Axis::Items,
        "scenarios" => Axis::Scenarios,
        "features" => Axis::Features,
        "grid_size" => Axis::GridSize,
        "single" => Axis::Single,
        other => bail!("unknown axis {other:?}"),
    })
}

fn cmd_bench(args: &BenchArgs) -> anyhow::Result<()> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => serde_json::from_str::<BenchmarkConfig>(&std::fs::read_to_string(path)?)
            .with_context(|| format!("parsing config {}", path.display()))?,
        (None, Some(name)) => BenchmarkConfig::preset(name)?,
        (None, None) => {
            let problem = match args.problem.as_deref() {
                Some("grid") => ProblemKind::Grid,
                Some("network") => ProblemKind::Network,
                Some("knapsack") | None => ProblemKind::Knapsack,
                _ => unreachable!("clap validates"),
            };
            BenchmarkConfig::desk_default(problem)
        }
    };
    if let Some(axis) = &args.axis {
        cfg.axis = parse_axis(axis)?;
    }
    if let Some(values) = &args.axis_values {
        cfg.axis_values = values.clone();
    }
    if let Some(methods) = &args.methods {
        cfg.methods = methods
            .iter()
            .map(|m| Method::parse(m))
            .collect::<metatree_core::Result<Vec<_>>>()?;
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.scenarios {
        cfg.scenarios = n;
    }
    if let Some(n) = args.test_scenarios {
        cfg.test_scenarios = n;
    }
    if let Some(n) = args.items {
        cfg.items = n;
    }
    if let Some(n) = args.features {
        cfg.features = n;
    }
    if let Some(n) = args.grid_size {
        cfg.grid_size = n;
    }
    if let Some(t) = args.time_limit {
        cfg.time_limit_s = t;
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if let Some(cmd) = &args.solver_cmd {
        cfg.external_solver = Some(cmd.clone());
    }

    let mut existing = Vec::new();
    if args.resume && args.out.exists() {
        existing = experiments::read_report_csv(&args.out)?;
        eprintln!("resuming: {} rows already present", existing.len());
    }
    let done: std::collections::HashSet<(usize, usize)> = existing
        .iter()
        .map(|r| (r.axis_value, r.run_id))
        .filter(|key| {
            existing
                .iter()
                .filter(|r| (r.axis_value, r.run_id) == *key)
                .count()
                >= cfg.methods.len()
        })
        .collect();
    let fresh =
        experiments::run_benchmark_filtered(&cfg, |axis, run| !done.contains(&(axis, run)))?;
    let mut all = existing;
    all.retain(|r| done.contains(&(r.axis_value, r.run_id)));
    all.extend(fresh);
    all.sort_by_key(|r| (r.axis_value, r.run_id));
    experiments::write_report_csv(&all, &args.out)?;
    println!("wrote {} rows to {}", all.len(), args.out.display());
    Ok(())
}

fn run_generate(cmd: &GenerateCmd) -> anyhow::Result<()> {
    match cmd {
        GenerateCmd::Knapsack {
            items,
            categories,
            scenarios,
            seed,
            out,
            test_scenarios,
            test_out,
        } => {
            let (inst, test) =
                gen_knapsack_with_test(*items, *categories, *scenarios, *test_scenarios, *seed)?;
            inst.save(out)?;
            println!("wrote {}", out.display());
            if let Some(tpath) = test_out {
                knapsack::save_scenarios_json(&test, tpath)?;
                println!("wrote {}", tpath.display());
            }
            Ok(())
        }
        GenerateCmd::Grid {
            size,
            districts,
            scenarios,
            seed,
            graph_out,
            scenarios_out,
            test_scenarios,
            test_out,
        } => {
            let (inst, test) =
                gen_grid_with_test(*size, *districts, *scenarios, *test_scenarios, *seed)?;
            inst.graph.save(graph_out)?;
            shortest_path::save_scenarios_csv(
                &inst.scenarios,
                inst.graph.edge_count(),
                &[],
                scenarios_out,
            )?;
            println!(
                "wrote {} and {}",
                graph_out.display(),
                scenarios_out.display()
            );
            if let Some(tpath) = test_out {
                shortest_path::save_scenarios_csv(&test, inst.graph.edge_count(), &[], tpath)?;
                println!("wrote {}", tpath.display());
            }
            Ok(())
        }
        GenerateCmd::Network {
            nodes,
            edges,
            districts,
            scenarios,
            seed,
            graph_out,
            scenarios_out,
            test_scenarios,
            test_out,
        } => {
            let model = gen_network(*nodes, *edges, *districts, *seed)?;
            let (inst, test) =
                model.instance_with_test(*scenarios, (*test_scenarios).max(1), *seed)?;
            inst.graph.save(graph_out)?;
            shortest_path::save_scenarios_csv(
                &inst.scenarios,
                inst.graph.edge_count(),
                &["weekday", "hour"],
                scenarios_out,
            )?;
            println!(
                "wrote {} and {}",
                graph_out.display(),
                scenarios_out.display()
            );
            if let Some(tpath) = test_out {
                shortest_path::save_scenarios_csv(
                    &test,
                    inst.graph.edge_count(),
                    &["weekday", "hour"],
                    tpath,
                )?;
                println!("wrote {}", tpath.display());
            }
            Ok(())
        }
    }
}

/// Machine-readable exit categories: 2 usage, 3 io/parse, 4 solver,
/// 5 infeasible.
fn exit_code_for(err: &anyhow::Error) -> (i32, &'static str) {
    if let Some(core) = err.downcast_ref::<CoreError>() {
        return match core {
            CoreError::Infeasible(_) => (5, "infeasible"),
            CoreError::SolverFailure(_)
            | CoreError::TimeLimitNoIncumbent
            | CoreError::Bridge(_) => (4, "solver"),
            CoreError::Io(_) | CoreError::Json(_) | CoreError::Csv(_) | CoreError::Parse { .. } => {
                (3, "io")
            }
            _ => (2, "usage"),
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return (3, "io");
    }
    (2, "usage")
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { what } => run_generate(what),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(err) = result {
        let (code, category) = exit_code_for(&err);
        eprintln!("error[{category}]: {err:#}");
        std::process::exit(code);
    }
}
