//! Shortest-path instantiation: district-annotated graphs, the layered
//! auxiliary graph, the surrogate MIP over district sequences, meta-path
//! evaluation, the micro-tree benchmark and hardness-instance generators.

pub mod hardness;

use crate::error::{Error, Result};
use crate::milp::{solve_bundled, MilpModel, MilpSolution, Rel, SolveOptions, VarId};
use crate::model::{MetaSolution, MicroSolution, ScenarioSet, Sense, SurrogateTree};
use crate::tree_block::{self, TreeBlock};
use serde::{Deserialize, Serialize};
use std::collections::BinaryHeap;
use std::path::Path;
use std::time::Duration;

/// A directed graph whose nodes belong to districts, with a source and sink.
#[derive(Debug, Clone)]
pub struct DistrictGraph {
    pub districts: Vec<usize>,
    pub district_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub source: usize,
    pub sink: usize,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl DistrictGraph {
    pub fn new(
        districts: Vec<usize>,
        edges: Vec<(usize, usize)>,
        source: usize,
        sink: usize,
    ) -> Result<Self> {
        let n = districts.len();
        if n == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        if source >= n || sink >= n {
            return Err(Error::invalid("source/sink out of range"));
        }
        if source == sink {
            return Err(Error::invalid("source and sink must differ"));
        }
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for (e, &(u, w)) in edges.iter().enumerate() {
            if u >= n || w >= n {
                return Err(Error::invalid(format!("edge {e} references unknown node")));
            }
            out_adj[u].push(e);
            in_adj[w].push(e);
        }
        let district_count = districts.iter().copied().max().unwrap_or(0) + 1;
        Ok(DistrictGraph {
            districts,
            district_count,
            edges,
            source,
            sink,
            out_adj,
            in_adj,
        })
    }

    pub fn node_count(&self) -> usize {
        self.districts.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn district_of(&self, node: usize) -> usize {
        self.districts[node]
    }

    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.out_adj[node]
    }

    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.in_adj[node]
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GraphFile {
            nodes: self
                .districts
                .iter()
                .enumerate()
                .map(|(id, &district)| NodeRec { id, district })
                .collect(),
            edges: self.edges.iter().map(|&(u, v)| EdgeRec { u, v }).collect(),
            source: self.source,
            sink: self.sink,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        let mut index = std::collections::HashMap::new();
        let mut districts = Vec::with_capacity(file.nodes.len());
        for (pos, node) in file.nodes.iter().enumerate() {
            if index.insert(node.id, pos).is_some() {
                return Err(Error::invalid(format!("duplicate node id {}", node.id)));
            }
            districts.push(node.district);
        }
        let lookup = |id: usize| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::invalid(format!("unknown node id {id}")))
        };
        let edges = file
            .edges
            .iter()
            .map(|e| Ok((lookup(e.u)?, lookup(e.v)?)))
            .collect::<Result<Vec<_>>>()?;
        DistrictGraph::new(districts, edges, lookup(file.source)?, lookup(file.sink)?)
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
struct GraphFile {
    nodes: Vec<NodeRec>,
    edges: Vec<EdgeRec>,
    source: usize,
    sink: usize,
}

#[derive(Serialize, Deserialize)]
struct NodeRec {
    id: usize,
    district: usize,
}

#[derive(Serialize, Deserialize)]
struct EdgeRec {
    u: usize,
    v: usize,
}

/// A shortest-path problem: topology plus cost scenarios whose cost vectors
/// are indexed by edge.
#[derive(Debug, Clone)]
pub struct SpInstance {
    pub graph: DistrictGraph,
    pub scenarios: ScenarioSet,
    /// Feature indices the tree may split on; `None` allows all.
    pub feature_mask: Option<Vec<usize>>,
    /// Layer bound for the surrogate MIP; `None` derives it from the
    /// training scenarios' nominal paths.
    pub delta: Option<usize>,
}

impl SpInstance {
    pub fn new(graph: DistrictGraph, scenarios: ScenarioSet) -> Result<Self> {
        if scenarios.cost_dim() != graph.edge_count() {
            return Err(Error::DimensionMismatch {
                expected: graph.edge_count(),
                got: scenarios.cost_dim(),
                context: "scenario edge-cost vectors",
            });
        }
        if scenarios.costs.iter().flatten().any(|&c| c < 0.0) {
            return Err(Error::invalid("edge costs must be nonnegative"));
        }
        Ok(SpInstance {
            graph,
            scenarios,
            feature_mask: None,
            delta: None,
        })
    }

    pub fn with_mask(mut self, mask: Vec<usize>) -> Self {
        self.feature_mask = Some(mask);
        self
    }

    pub fn with_delta(mut self, delta: usize) -> Self {
        self.delta = Some(delta);
        self
    }

    /// The configured layer bound, or the longest district sequence among
    /// the scenarios' nominal shortest paths.
    pub fn delta_or_default(&self) -> Result<usize> {
        if let Some(d) = self.delta {
            return Ok(d);
        }
        let mut delta = 1;
        for j in 0..self.scenarios.len() {
            let (path, _) = nominal_shortest_path(self, j)?;
            delta = delta.max(path_district_sequence(&self.graph, &path).len());
        }
        Ok(delta)
    }
}

/// Writes scenarios as CSV: one row per scenario, edge-cost columns first,
/// then any extra contextual feature columns.
pub fn save_scenarios_csv(
    set: &ScenarioSet,
    n_edges: usize,
    extra_names: &[&str],
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..n_edges).map(|e| format!("c{e}")).collect();
    header.extend(extra_names.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for row in &set.features {
        let rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads scenarios from CSV. The first `n_edges` columns are edge costs;
/// remaining columns are appended contextual features.
pub fn load_scenarios_csv(path: &Path, n_edges: usize) -> Result<ScenarioSet> {
    let mut r = csv::Reader::from_path(path)?;
    let mut features = Vec::new();
    let mut costs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row: Vec<f64> = rec
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad scenario value {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() < n_edges {
            return Err(Error::invalid(format!(
                "scenario row has {} columns, expected at least {n_edges}",
                row.len()
            )));
        }
        costs.push(row[..n_edges].to_vec());
        features.push(row);
    }
    ScenarioSet::new(features, costs)
}

/// Total-order wrapper so f64 keys can live in a heap.
#[derive(PartialEq)]
struct MinCost(f64, usize);
impl Eq for MinCost {}
impl Ord for MinCost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}
impl PartialOrd for MinCost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over an explicit adjacency; returns distances and predecessor
/// edges. Deterministic: ties settle on the lower node index.
fn dijkstra(
    n_nodes: usize,
    out_adj: &[Vec<usize>],
    edge_to: impl Fn(usize) -> usize,
    edge_cost: impl Fn(usize) -> f64,
    source: usize,
) -> (Vec<f64>, Vec<Option<usize>>) {
    let mut dist = vec![f64::INFINITY; n_nodes];
    let mut pred: Vec<Option<usize>> = vec![None; n_nodes];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(MinCost(0.0, source));
    while let Some(MinCost(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &e in &out_adj[u] {
            let w = edge_to(e);
            let nd = d + edge_cost(e);
            if nd < dist[w] {
                dist[w] = nd;
                pred[w] = Some(e);
                heap.push(MinCost(nd, w));
            }
        }
    }
    (dist, pred)
}

/// Single-scenario shortest path; the ordered edge list and its cost.
pub fn nominal_shortest_path(inst: &SpInstance, scenario: usize) -> Result<(Vec<usize>, f64)> {
    shortest_path_with_costs(&inst.graph, &inst.scenarios.costs[scenario])
}

/// Shortest s-t path under an arbitrary nonnegative cost vector.
pub fn shortest_path_with_costs(graph: &DistrictGraph, costs: &[f64]) -> Result<(Vec<usize>, f64)> {
    let (dist, pred) = dijkstra(
        graph.node_count(),
        &graph.out_adj,
        |e| graph.edges[e].1,
        |e| costs[e],
        graph.source,
    );
    if !dist[graph.sink].is_finite() {
        return Err(Error::Infeasible(Some(
            "sink unreachable from source".into(),
        )));
    }
    let mut path = Vec::new();
    let mut v = graph.sink;
    while v != graph.source {
        let e = pred[v].expect("finite distance implies a predecessor");
        path.push(e);
        v = graph.edges[e].0;
    }
    path.reverse();
    Ok((path, dist[graph.sink]))
}

/// District sequence of an edge path starting at the source, with
/// consecutive same-district steps collapsed.
pub fn path_district_sequence(graph: &DistrictGraph, path: &[usize]) -> Vec<usize> {
    let mut seq = vec![graph.district_of(graph.source)];
    for &e in path {
        let d = graph.district_of(graph.edges[e].1);
        if *seq.last().unwrap() != d {
            seq.push(d);
        }
    }
    seq
}

/// Cost of a fixed edge path in a scenario.
pub fn evaluate_path(inst: &SpInstance, scenario: usize, path: &[usize]) -> f64 {
    path.iter()
        .map(|&e| inst.scenarios.costs[scenario][e])
        .sum()
}

/// One edge of the layered auxiliary graph.
#[derive(Debug, Clone, Copy)]
pub struct LayeredEdge {
    pub from: usize,
    pub from_layer: usize,
    pub to: usize,
    pub to_layer: usize,
    pub orig: usize,
}

/// The layered auxiliary graph: `delta` node-set copies, same-district edges
/// within a layer, cross-district edges to the next layer.
#[derive(Debug, Clone)]
pub struct LayeredGraph {
    pub delta: usize,
    pub node_count: usize,
    pub edges: Vec<LayeredEdge>,
}

impl LayeredGraph {
    pub fn layered_node(&self, node: usize, layer: usize) -> usize {
        layer * self.node_count + node
    }
}

pub fn build_layered(graph: &DistrictGraph, delta: usize) -> Result<LayeredGraph> {
    if delta == 0 {
        return Err(Error::invalid("layer count must be at least 1"));
    }
    let mut edges = Vec::new();
    for (orig, &(u, w)) in graph.edges.iter().enumerate() {
        if graph.district_of(u) == graph.district_of(w) {
            for layer in 0..delta {
                edges.push(LayeredEdge {
                    from: u,
                    from_layer: layer,
                    to: w,
                    to_layer: layer,
                    orig,
                });
            }
        } else {
            for layer in 0..delta.saturating_sub(1) {
                edges.push(LayeredEdge {
                    from: u,
                    from_layer: layer,
                    to: w,
                    to_layer: layer + 1,
                    orig,
                });
            }
        }
    }
    Ok(LayeredGraph {
        delta,
        node_count: graph.node_count(),
        edges,
    })
}

fn sequence_valid(graph: &DistrictGraph, seq: &[usize]) -> bool {
    !seq.is_empty()
        && seq.iter().all(|&d| d < graph.district_count)
        && seq.windows(2).all(|w| w[0] != w[1])
        && seq[0] == graph.district_of(graph.source)
        && *seq.last().unwrap() == graph.district_of(graph.sink)
}

/// The restricted layered graph of a fixed sequence: layer d keeps only the
/// nodes of district seq[d].
struct RestrictedLayered {
    /// (node, layer) pairs, indexed contiguously.
    nodes: Vec<(usize, usize)>,
    /// (from, to, orig_edge) in restricted indexing.
    edges: Vec<(usize, usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
}

fn restrict_layers(graph: &DistrictGraph, seq: &[usize]) -> Option<RestrictedLayered> {
    let depth = seq.len();
    let mut nodes = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (layer, &d) in seq.iter().enumerate() {
        for v in 0..graph.node_count() {
            if graph.district_of(v) == d {
                index.insert((v, layer), nodes.len());
                nodes.push((v, layer));
            }
        }
    }
    let source = *index.get(&(graph.source, 0))?;
    let sink = *index.get(&(graph.sink, depth - 1))?;
    let mut edges = Vec::new();
    let mut out_adj = vec![Vec::new(); nodes.len()];
    let index = index;
    for (orig, &(u, w)) in graph.edges.iter().enumerate() {
        let (du, dw) = (graph.district_of(u), graph.district_of(w));
        for layer in 0..depth {
            if du != seq[layer] {
                continue;
            }
            let target_layer = if du == dw {
                layer
            } else if layer + 1 < depth && dw == seq[layer + 1] {
                layer + 1
            } else {
                continue;
            };
            if let (Some(&a), Some(&b)) = (index.get(&(u, layer)), index.get(&(w, target_layer))) {
                out_adj[a].push(edges.len());
                edges.push((a, b, orig));
            }
        }
    }
    Some(RestrictedLayered {
        nodes,
        edges,
        out_adj,
        source,
        sink,
    })
}

/// Minimum scenario cost of an s-t path whose collapsed district sequence
/// equals `seq`, visiting at most one copy of each original node.
/// `Ok(None)` marks an infeasible sequence.
///
/// Repeat-free sequences reduce to a shortest path on the restricted layered
/// graph; sequences that revisit a district need the node-once cap and are
/// solved as a small MIP with `mip_time_limit`.
pub fn evaluate_meta(
    inst: &SpInstance,
    scenario: usize,
    seq: &[usize],
    mip_time_limit: Duration,
) -> Result<Option<f64>> {
    evaluate_sequence(
        &inst.graph,
        &inst.scenarios.costs[scenario],
        seq,
        mip_time_limit,
    )
}

/// [`evaluate_meta`] against an explicit cost vector.
pub fn evaluate_sequence(
    graph: &DistrictGraph,
    costs: &[f64],
    seq: &[usize],
    mip_time_limit: Duration,
) -> Result<Option<f64>> {
    if !sequence_valid(graph, seq) {
        return Ok(None);
    }
    let Some(r) = restrict_layers(graph, seq) else {
        return Ok(None);
    };
    let mut distinct = seq.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() == seq.len() {
        // No district repeats: every original node has one copy, so the
        // node-once cap is vacuous and Dijkstra is exact.
        let (dist, _) = dijkstra(
            r.nodes.len(),
            &r.out_adj,
            |e| r.edges[e].1,
            |e| costs[r.edges[e].2],
            r.source,
        );
        return Ok(dist[r.sink].is_finite().then_some(dist[r.sink]));
    }
    evaluate_restricted_mip(graph, costs, &r, mip_time_limit)
}

fn evaluate_restricted_mip(
    _graph: &DistrictGraph,
    costs: &[f64],
    r: &RestrictedLayered,
    time_limit: Duration,
) -> Result<Option<f64>> {
    let mut m = MilpModel::new("meta_path", Sense::Minimize);
    let x: Vec<VarId> = r
        .edges
        .iter()
        .enumerate()
        .map(|(e, &(_, _, orig))| m.add_binary(format!("x{e}"), costs[orig]))
        .collect::<Result<Vec<_>>>()?;
    let mut incoming = vec![Vec::new(); r.nodes.len()];
    for (e, &(_, b, _)) in r.edges.iter().enumerate() {
        incoming[b].push(e);
    }
    for (v, &(node, _layer)) in r.nodes.iter().enumerate() {
        if v == r.sink {
            continue;
        }
        let mut terms: Vec<(VarId, f64)> = r.out_adj[v].iter().map(|&e| (x[e], 1.0)).collect();
        terms.extend(incoming[v].iter().map(|&e| (x[e], -1.0)));
        let rhs = if v == r.source { 1.0 } else { 0.0 };
        m.add_constr(format!("flow_{node}_{v}"), terms, Rel::Eq, rhs)?;
    }
    m.add_constr(
        "sink",
        incoming[r.sink].iter().map(|&e| (x[e], 1.0)).collect(),
        Rel::Eq,
        1.0,
    )?;
    // At most one copy of each original node.
    let mut per_node: std::collections::HashMap<usize, Vec<usize>> =
        std::collections::HashMap::new();
    for (v, &(node, _)) in r.nodes.iter().enumerate() {
        per_node
            .entry(node)
            .or_default()
            .extend(incoming[v].iter().copied());
    }
    let mut node_keys: Vec<usize> = per_node.keys().copied().collect();
    node_keys.sort_unstable();
    for node in node_keys {
        let edges = &per_node[&node];
        if edges.len() > 1 {
            m.add_constr(
                format!("once_{node}"),
                edges.iter().map(|&e| (x[e], 1.0)).collect(),
                Rel::Le,
                1.0,
            )?;
        }
    }
    let opts = SolveOptions::default().with_time_limit(time_limit);
    match solve_bundled(&m, &opts) {
        Ok(sol) if matches!(sol.status, crate::milp::SolveStatus::Infeasible) => Ok(None),
        Ok(sol) => Ok(Some(sol.objective)),
        Err(Error::TimeLimitNoIncumbent) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Checks whether any path conforms to `seq`, independent of costs.
pub fn sequence_feasible(graph: &DistrictGraph, seq: &[usize]) -> Result<bool> {
    let unit = vec![1.0; graph.edge_count()];
    Ok(evaluate_sequence(graph, &unit, seq, Duration::from_secs(10))?.is_some())
}

/// Handles into the surrogate MIP over the layered graph.
#[derive(Debug)]
pub struct SpSurrogateHandles {
    pub tree: Option<TreeBlock>,
    pub layered: LayeredGraph,
    /// x_vars[j][e]: layered edge e used by scenario j.
    pub x_vars: Vec<Vec<VarId>>,
    /// y_vars[layer][district][k]: district assigned to layer in leaf k.
    pub y_vars: Vec<Vec<Vec<VarId>>>,
}

/// Builds the surrogate MIP: per-scenario unit flows on the layered graph,
/// layer-district assignment per leaf, inter-layer gating, termination rows
/// and the tree block. `depth == 0` yields the single best meta-path model.
pub fn build_surrogate_mip(
    inst: &SpInstance,
    depth: usize,
    delta: usize,
    mask: Option<&[usize]>,
) -> Result<(MilpModel, SpSurrogateHandles)> {
    let graph = &inst.graph;
    let n_scen = inst.scenarios.len();
    let leaves = 1usize << depth;
    let layered = build_layered(graph, delta)?;
    let n_f = graph.district_count;
    let mut m = MilpModel::new("surrogate_path", Sense::Minimize);

    let mask = mask.or(inst.feature_mask.as_deref());
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

    let x_vars: Vec<Vec<VarId>> = (0..n_scen)
        .map(|j| {
            layered
                .edges
                .iter()
                .enumerate()
                .map(|(e, le)| {
                    let c = inst.scenarios.probabilities[j] * inst.scenarios.costs[j][le.orig];
                    m.add_binary(format!("x_{j}_{e}"), c)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let y_vars: Vec<Vec<Vec<VarId>>> = (0..delta)
        .map(|layer| {
            (0..n_f)
                .map(|f| {
                    (0..leaves)
                        .map(|k| m.add_binary(format!("y_{layer}_{f}_{k}"), 0.0))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    // Adjacency of layered nodes.
    let ln = layered.node_count * delta;
    let mut out_of = vec![Vec::new(); ln];
    let mut into = vec![Vec::new(); ln];
    for (e, le) in layered.edges.iter().enumerate() {
        out_of[layered.layered_node(le.from, le.from_layer)].push(e);
        into[layered.layered_node(le.to, le.to_layer)].push(e);
    }

    let s0 = layered.layered_node(graph.source, 0);
    for j in 0..n_scen {
        // Source: one unit leaves (s, layer 0).
        let mut terms: Vec<(VarId, f64)> =
            out_of[s0].iter().map(|&e| (x_vars[j][e], 1.0)).collect();
        terms.extend(into[s0].iter().map(|&e| (x_vars[j][e], -1.0)));
        m.add_constr(format!("src_{j}"), terms, Rel::Eq, 1.0)?;
        // Conservation everywhere except (s, 0) and every copy of the sink.
        for layer in 0..delta {
            for v in 0..graph.node_count() {
                if v == graph.sink || (v == graph.source && layer == 0) {
                    continue;
                }
                let id = layered.layered_node(v, layer);
                if out_of[id].is_empty() && into[id].is_empty() {
                    continue;
                }
                let mut terms: Vec<(VarId, f64)> =
                    out_of[id].iter().map(|&e| (x_vars[j][e], 1.0)).collect();
                terms.extend(into[id].iter().map(|&e| (x_vars[j][e], -1.0)));
                m.add_constr(format!("flow_{j}_{v}_{layer}"), terms, Rel::Eq, 0.0)?;
            }
        }
        // Exactly one arrival at some sink copy.
        let sink_terms: Vec<(VarId, f64)> = (0..delta)
            .flat_map(|layer| into[layered.layered_node(graph.sink, layer)].iter())
            .map(|&e| (x_vars[j][e], 1.0))
            .collect();
        m.add_constr(format!("sink_{j}"), sink_terms, Rel::Eq, 1.0)?;
        // At most one copy of each original node.
        for v in 0..graph.node_count() {
            let terms: Vec<(VarId, f64)> = (0..delta)
                .flat_map(|layer| into[layered.layered_node(v, layer)].iter())
                .map(|&e| (x_vars[j][e], 1.0))
                .collect();
            if terms.len() > 1 {
                m.add_constr(format!("once_{j}_{v}"), terms, Rel::Le, 1.0)?;
            }
        }
    }

    // At most one district per layer and leaf.
    for layer in 0..delta {
        for k in 0..leaves {
            m.add_constr(
                format!("onef_{layer}_{k}"),
                (0..n_f).map(|f| (y_vars[layer][f][k], 1.0)).collect(),
                Rel::Le,
                1.0,
            )?;
        }
    }

    // Inter-layer edges need both endpoint layers assigned to the matching
    // districts, for the leaf the scenario sits in.
    for (e, le) in layered.edges.iter().enumerate() {
        if le.from_layer == le.to_layer {
            continue;
        }
        let fu = graph.district_of(le.from);
        let fw = graph.district_of(le.to);
        for j in 0..n_scen {
            for k in 0..leaves {
                let mut terms = vec![
                    (x_vars[j][e], 1.0),
                    (y_vars[le.from_layer][fu][k], -0.5),
                    (y_vars[le.to_layer][fw][k], -0.5),
                ];
                let rhs = match &tree {
                    Some(block) => {
                        terms.push((block.leaf_vars[j][k], 1.0));
                        1.0
                    }
                    None => 0.0,
                };
                m.add_constr(format!("link_{j}_{e}_{k}"), terms, Rel::Le, rhs)?;
            }
        }
    }

    // Arriving at the sink in layer d < delta-1 requires layer d+1 to be
    // unassigned: the sequence ends there.
    for layer in 0..delta.saturating_sub(1) {
        let sink_id = layered.layered_node(graph.sink, layer);
        for &e in &into[sink_id] {
            for j in 0..n_scen {
                for k in 0..leaves {
                    let mut terms = vec![(x_vars[j][e], 1.0)];
                    terms.extend((0..n_f).map(|f| (y_vars[layer + 1][f][k], 1.0)));
                    let rhs = match &tree {
                        Some(block) => {
                            terms.push((block.leaf_vars[j][k], 1.0));
                            2.0
                        }
                        None => 1.0,
                    };
                    m.add_constr(format!("end_{j}_{e}_{k}"), terms, Rel::Le, rhs)?;
                }
            }
        }
    }

    Ok((
        m,
        SpSurrogateHandles {
            tree,
            layered,
            x_vars,
            y_vars,
        },
    ))
}

/// Decodes the district sequence of each leaf from the y variables: the
/// contiguous assigned prefix of layers. Unrealizable or empty leaves fall
/// back to `fill`.
pub fn decode_sequence_tree(
    inst: &SpInstance,
    handles: &SpSurrogateHandles,
    sol: &MilpSolution,
    fill: &[usize],
) -> Result<SurrogateTree<MetaSolution>> {
    let graph = &inst.graph;
    let leaves_n = handles.y_vars[0][0].len();
    let n_f = graph.district_count;
    let mut leaves = Vec::with_capacity(leaves_n);
    for k in 0..leaves_n {
        let mut seq = Vec::new();
        'layers: for layer in 0..handles.layered.delta {
            for f in 0..n_f {
                if sol.value(handles.y_vars[layer][f][k]) > 0.5 {
                    seq.push(f);
                    continue 'layers;
                }
            }
            break;
        }
        if seq.is_empty() {
            seq.push(graph.district_of(graph.source));
        }
        let ok = sequence_valid(graph, &seq) && sequence_feasible(graph, &seq)?;
        leaves.push(MetaSolution::Districts(if ok {
            seq
        } else {
            fill.to_vec()
        }));
    }
    match &handles.tree {
        Some(block) => tree_block::decode_tree(block, sol, leaves),
        None => SurrogateTree::new(Vec::new(), leaves),
    }
}

/// Handles into the micro-tree benchmark MIP.
#[derive(Debug)]
pub struct SpMicroHandles {
    pub tree: Option<TreeBlock>,
    /// leaf_edges[k][e]: edge e on the path of leaf k.
    pub leaf_edges: Vec<Vec<VarId>>,
}

/// Builds the micro-tree MIP: one concrete s-t path per leaf, scenario cost
/// collected through leaf-gated auxiliaries (valid for nonnegative costs).
pub fn build_micro_mip(inst: &SpInstance, depth: usize) -> Result<(MilpModel, SpMicroHandles)> {
    let graph = &inst.graph;
    let n_scen = inst.scenarios.len();
    let leaves = 1usize << depth;
    let mut m = MilpModel::new("micro_path", Sense::Minimize);

    let tree = if depth >= 1 {
        Some(tree_block::emit_tree_block(
            &mut m,
            &inst.scenarios.features,
            depth,
            inst.feature_mask.as_deref(),
        )?)
    } else {
        None
    };

    let leaf_edges: Vec<Vec<VarId>> = (0..leaves)
        .map(|k| {
            (0..graph.edge_count())
                .map(|e| m.add_binary(format!("p_{k}_{e}"), 0.0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    for (k, path) in leaf_edges.iter().enumerate() {
        for v in 0..graph.node_count() {
            let mut terms: Vec<(VarId, f64)> =
                graph.outgoing(v).iter().map(|&e| (path[e], 1.0)).collect();
            terms.extend(graph.incoming(v).iter().map(|&e| (path[e], -1.0)));
            let rhs = if v == graph.source {
                1.0
            } else if v == graph.sink {
                -1.0
            } else {
                0.0
            };
            m.add_constr(format!("flow_{k}_{v}"), terms, Rel::Eq, rhs)?;
        }
    }

    // z_{j,e} >= p_{k,e} - (1 - l_{j,k}): scenario j pays for its own leaf's
    // edges; minimization presses z down to exactly that.
    for j in 0..n_scen {
        for e in 0..graph.edge_count() {
            let c = inst.scenarios.probabilities[j] * inst.scenarios.costs[j][e];
            let z = m.add_continuous(format!("z_{j}_{e}"), 0.0, 1.0, c)?;
            for (k, path) in leaf_edges.iter().enumerate() {
                let (terms, rhs) = match &tree {
                    Some(block) => (
                        vec![(path[e], 1.0), (z, -1.0), (block.leaf_vars[j][k], 1.0)],
                        1.0,
                    ),
                    None => (vec![(path[e], 1.0), (z, -1.0)], 0.0),
                };
                m.add_constr(format!("pay_{j}_{e}_{k}"), terms, Rel::Le, rhs)?;
            }
        }
    }

    Ok((m, SpMicroHandles { tree, leaf_edges }))
}

/// Decodes each leaf's path by walking the chosen edges from the source.
/// Disconnected zero-cost cycles in the flow are dropped.
pub fn decode_micro_tree(
    inst: &SpInstance,
    handles: &SpMicroHandles,
    sol: &MilpSolution,
) -> Result<SurrogateTree<MicroSolution>> {
    let graph = &inst.graph;
    let mut leaves = Vec::with_capacity(handles.leaf_edges.len());
    for vars in &handles.leaf_edges {
        let chosen: Vec<bool> = vars.iter().map(|&v| sol.value(v) > 0.5).collect();
        let mut path = Vec::new();
        let mut at = graph.source;
        let mut steps = 0;
        while at != graph.sink {
            let mut next = None;
            for &e in graph.outgoing(at) {
                if chosen[e] {
                    next = Some(e);
                    break;
                }
            }
            let e = next.ok_or_else(|| {
                Error::SolverFailure(format!("leaf path stops at node {at} before the sink"))
            })?;
            path.push(e);
            at = graph.edges[e].1;
            steps += 1;
            if steps > graph.node_count() {
                return Err(Error::SolverFailure(
                    "leaf path does not reach the sink".into(),
                ));
            }
        }
        leaves.push(MicroSolution::Path(path));
    }
    match &handles.tree {
        Some(block) => tree_block::decode_tree(block, sol, leaves),
        None => SurrogateTree::new(Vec::new(), leaves),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::SolveStatus;

    const EVAL_LIMIT: Duration = Duration::from_secs(10);

    /// The toy graph used for layered-construction examples: districts
    /// red=0, green=1, yellow=2, pink=3, blue=4.
    fn toy_instance() -> SpInstance {
        // nodes: s=0(red), 1(red), 2(blue), 3(green), 4(yellow), 5(green), t=6(pink)
        let districts = vec![0, 0, 4, 1, 2, 1, 3];
        let edges = vec![
            (0, 1), // s -> 1 intra red
            (0, 3), // s -> 3
            (1, 3), // 1 -> 3
            (3, 4), // 3 -> 4
            (4, 5), // 4 -> 5
            (5, 6), // 5 -> t
            (0, 2), // s -> 2 (blue distractor)
            (2, 4), // 2 -> 4
            (4, 6), // 4 -> t (nonconforming shortcut)
        ];
        let graph = DistrictGraph::new(districts, edges, 0, 6).unwrap();
        let unit = vec![vec![1.0; graph.edge_count()]];
        let scenarios = ScenarioSet::new(unit.clone(), unit).unwrap();
        SpInstance::new(graph, scenarios).unwrap()
    }

    #[test]
    fn layered_single_district_has_no_inter_edges() {
        let graph = DistrictGraph::new(vec![0, 0, 0], vec![(0, 1), (1, 2)], 0, 2).unwrap();
        let layered = build_layered(&graph, 3).unwrap();
        assert_eq!(layered.edges.len(), 2 * 3);
        assert!(layered.edges.iter().all(|e| e.from_layer == e.to_layer));
    }

    #[test]
    fn layered_two_nodes_two_districts() {
        let graph = DistrictGraph::new(vec![0, 1], vec![(0, 1)], 0, 1).unwrap();
        let layered = build_layered(&graph, 2).unwrap();
        assert_eq!(layered.edges.len(), 1);
        assert_eq!(layered.edges[0].from_layer, 0);
        assert_eq!(layered.edges[0].to_layer, 1);
    }

    #[test]
    fn toy_sequence_admits_exactly_the_two_paths() {
        let inst = toy_instance();
        // red-green-yellow-green-pink; unit costs: paths s-1-3-4-5-t (5) and
        // s-3-4-5-t (4); the minimum is 4.
        let seq = [0, 1, 2, 1, 3];
        let cost = evaluate_meta(&inst, 0, &seq, EVAL_LIMIT).unwrap();
        assert_eq!(cost, Some(4.0));
    }

    #[test]
    fn own_sequence_recovers_nominal_cost() {
        let inst = toy_instance();
        let (path, cost) = nominal_shortest_path(&inst, 0).unwrap();
        let seq = path_district_sequence(&inst.graph, &path);
        let meta = evaluate_meta(&inst, 0, &seq, EVAL_LIMIT).unwrap().unwrap();
        assert!((meta - cost).abs() < 1e-9);
    }

    #[test]
    fn absent_district_is_infeasible() {
        let inst = toy_instance();
        assert_eq!(
            evaluate_meta(&inst, 0, &[0, 9, 3], EVAL_LIMIT).unwrap(),
            None
        );
        // consecutive duplicate
        assert_eq!(
            evaluate_meta(&inst, 0, &[0, 1, 1, 3], EVAL_LIMIT).unwrap(),
            None
        );
        // wrong start district
        assert_eq!(evaluate_meta(&inst, 0, &[1, 3], EVAL_LIMIT).unwrap(), None);
    }

    #[test]
    fn repeated_district_sequence_uses_node_cap() {
        // Revisiting district 1 must not reuse node 1: without the cap the
        // cheap loop s-1-2-1-t (cost 3) would conform; with it the path must
        // switch to node 3 at the second district-1 visit.
        // nodes: s=0 (d0), 1 (d1), 2 (d0), 3 (d1), t=4 (d2)
        let districts = vec![0, 1, 0, 1, 2];
        let edges = vec![
            (0, 1), // s -> 1        cost 1
            (1, 2), // 1 -> 2        cost 1
            (2, 3), // 2 -> 3        cost 10
            (3, 4), // 3 -> t        cost 1
            (2, 1), // 2 -> 1 back   cost 0.5
            (1, 4), // 1 -> t        cost 0.5
        ];
        let graph = DistrictGraph::new(districts, edges, 0, 4).unwrap();
        let costs = vec![vec![1.0, 1.0, 10.0, 1.0, 0.5, 0.5]];
        let scenarios = ScenarioSet::new(costs.clone(), costs).unwrap();
        let inst = SpInstance::new(graph, scenarios).unwrap();
        // Sequence d0 d1 d0 d1 d2 with the cap: 1 + 1 + 10 + 1 = 13.
        let cost = evaluate_meta(&inst, 0, &[0, 1, 0, 1, 2], EVAL_LIMIT).unwrap();
        assert_eq!(cost, Some(13.0));
    }

    #[test]
    fn dijkstra_and_mip_agree_on_repeat_free_sequences() {
        let inst = toy_instance();
        let seq = [0, 1, 2, 3];
        // No conforming path exists (yellow cannot reach pink directly
        // except 4 -> t which IS yellow->pink, so s-3-4-t conforms).
        let fast = evaluate_meta(&inst, 0, &seq, EVAL_LIMIT).unwrap();
        let r = restrict_layers(&inst.graph, &seq).unwrap();
        let mip =
            evaluate_restricted_mip(&inst.graph, &inst.scenarios.costs[0], &r, EVAL_LIMIT).unwrap();
        assert_eq!(fast, mip);
        assert_eq!(fast, Some(3.0)); // s-3-4-t
    }

    #[test]
    fn surrogate_k1_finds_best_single_sequence() {
        let inst = toy_instance();
        let (m, h) = build_surrogate_mip(&inst, 0, 5, None).unwrap();
        let sol = solve_bundled(&m, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        // Best meta-path with unit costs: s-3-4-t of length 3.
        assert!(
            (sol.objective - 3.0).abs() < 1e-6,
            "objective {}",
            sol.objective
        );
        let tree = decode_sequence_tree(&inst, &h, &sol, &[0, 1, 2, 3]).unwrap();
        assert_eq!(tree.depth, 0);
        let MetaSolution::Districts(seq) = tree.leaf(0) else {
            unreachable!()
        };
        let again = evaluate_meta(&inst, 0, seq, EVAL_LIMIT).unwrap().unwrap();
        assert!((again - 3.0).abs() < 1e-9);
    }

    #[test]
    fn surrogate_split_matches_sum_of_nominals() {
        // Two scenarios preferring different district sequences; a depth-1
        // split lets each follow its own nominal optimum.
        // Graph: s(d0) -> a(d1) -> t(d3), s -> b(d2) -> t.
        let districts = vec![0, 1, 2, 3];
        let edges = vec![(0, 1), (1, 3), (0, 2), (2, 3)];
        let graph = DistrictGraph::new(districts, edges, 0, 3).unwrap();
        let costs = vec![vec![1.0, 1.0, 5.0, 5.0], vec![5.0, 5.0, 1.0, 1.0]];
        let scenarios = ScenarioSet::new(costs.clone(), costs).unwrap();
        let inst = SpInstance::new(graph, scenarios).unwrap();
        let nominal_sum: f64 = (0..2)
            .map(|j| nominal_shortest_path(&inst, j).unwrap().1 * inst.scenarios.probabilities[j])
            .sum();
        let (m, h) = build_surrogate_mip(&inst, 1, 3, None).unwrap();
        let sol = solve_bundled(&m, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - nominal_sum).abs() < 1e-6);
        let tree = decode_sequence_tree(&inst, &h, &sol, &[0, 1, 3]).unwrap();
        assert_eq!(tree.depth, 1);
        // Each scenario's routed leaf must evaluate to its nominal cost.
        for j in 0..2 {
            let leaf = tree.route(&inst.scenarios.features[j]).unwrap();
            let MetaSolution::Districts(seq) = tree.leaf(leaf) else {
                unreachable!()
            };
            let v = evaluate_meta(&inst, j, seq, EVAL_LIMIT).unwrap().unwrap();
            let nominal = nominal_shortest_path(&inst, j).unwrap().1;
            assert!((v - nominal).abs() < 1e-9);
        }
    }

    #[test]
    fn micro_k1_is_best_single_path() {
        let districts = vec![0, 1, 2, 3];
        let edges = vec![(0, 1), (1, 3), (0, 2), (2, 3)];
        let graph = DistrictGraph::new(districts, edges, 0, 3).unwrap();
        let costs = vec![vec![1.0, 1.0, 5.0, 5.0], vec![5.0, 5.0, 1.0, 1.0]];
        let scenarios = ScenarioSet::new(costs.clone(), costs).unwrap();
        let inst = SpInstance::new(graph, scenarios).unwrap();
        let (m, h) = build_micro_mip(&inst, 0).unwrap();
        let sol = solve_bundled(&m, &SolveOptions::default()).unwrap();
        // Either path costs (1+1+5+5)/2 = 6 on average.
        assert!((sol.objective - 6.0).abs() < 1e-6);
        let tree = decode_micro_tree(&inst, &h, &sol).unwrap();
        let MicroSolution::Path(path) = tree.leaf(0) else {
            unreachable!()
        };
        assert_eq!(path.len(), 2);
    }

    #[test]
    fn micro_cost_ordering_by_leaf_count() {
        // OPT <= micro4 <= micro2 <= micro1 on training data (nested
        // feasibility, minimization).
        let districts = vec![0, 1, 2, 3];
        let edges = vec![(0, 1), (1, 3), (0, 2), (2, 3)];
        let graph = DistrictGraph::new(districts, edges, 0, 3).unwrap();
        let costs = vec![
            vec![1.0, 1.0, 5.0, 5.0],
            vec![5.0, 5.0, 1.0, 1.0],
            vec![2.0, 2.0, 3.0, 3.0],
        ];
        let scenarios = ScenarioSet::new(costs.clone(), costs).unwrap();
        let inst = SpInstance::new(graph, scenarios).unwrap();
        let opt: f64 = (0..3)
            .map(|j| nominal_shortest_path(&inst, j).unwrap().1 * inst.scenarios.probabilities[j])
            .sum();
        let mut objs = Vec::new();
        for depth in [0usize, 1, 2] {
            let (m, _) = build_micro_mip(&inst, depth).unwrap();
            let sol = solve_bundled(&m, &SolveOptions::default()).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            objs.push(sol.objective);
        }
        assert!(opt <= objs[2] + 1e-9);
        assert!(objs[2] <= objs[1] + 1e-9);
        assert!(objs[1] <= objs[0] + 1e-9);
    }

    #[test]
    fn graph_json_round_trip() {
        let inst = toy_instance();
        let json = inst.graph.to_json().unwrap();
        assert!(json.contains("\"nodes\""));
        assert!(json.contains("\"district\""));
        assert!(json.contains("\"source\""));
        let back = DistrictGraph::from_json(&json).unwrap();
        assert_eq!(back.districts, inst.graph.districts);
        assert_eq!(back.edges, inst.graph.edges);
    }

    #[test]
    fn scenario_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scen.csv");
        let features = vec![vec![1.0, 2.0, 3.0, 7.0], vec![4.0, 5.0, 6.0, 8.0]];
        let costs = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let set = ScenarioSet::new(features.clone(), costs.clone()).unwrap();
        save_scenarios_csv(&set, 3, &["weekday"], &path).unwrap();
        let back = load_scenarios_csv(&path, 3).unwrap();
        assert_eq!(back.features, features);
        assert_eq!(back.costs, costs);
    }
}
