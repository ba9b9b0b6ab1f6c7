//! Reduction-based instance generators used as stress tests for the
//! meta-path machinery: Hamiltonian-path instances (doubled graph with two
//! alternating districts) and 3-SAT instances (true/false gadget chains with
//! one cost scenario per clause).

use super::{evaluate_sequence, DistrictGraph};
use crate::error::Result;
use std::time::Duration;

/// A literal: variable index plus polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lit {
    pub var: usize,
    pub positive: bool,
}

impl Lit {
    pub fn pos(var: usize) -> Self {
        Lit {
            var,
            positive: true,
        }
    }

    pub fn neg(var: usize) -> Self {
        Lit {
            var,
            positive: false,
        }
    }
}

/// Builds the doubled graph for an undirected base graph: every node v
/// becomes a pair v (district 0) and v' (district 1) joined by (v, v'),
/// every base edge {i, j} becomes (i', j) and (j', i). A path from s to t'
/// conforming to the alternating meta-path of length 2|V| exists iff the
/// base graph has a Hamiltonian s-t path.
pub fn gen_theorem1_instance(
    n_nodes: usize,
    base_edges: &[(usize, usize)],
    s: usize,
    t: usize,
) -> Result<(DistrictGraph, Vec<usize>)> {
    let mut districts = Vec::with_capacity(2 * n_nodes);
    for _ in 0..n_nodes {
        districts.push(0);
        districts.push(1);
    }
    let mut edges = Vec::new();
    for v in 0..n_nodes {
        edges.push((2 * v, 2 * v + 1));
    }
    for &(i, j) in base_edges {
        edges.push((2 * i + 1, 2 * j));
        edges.push((2 * j + 1, 2 * i));
    }
    let graph = DistrictGraph::new(districts, edges, 2 * s, 2 * t + 1)?;
    let meta_path: Vec<usize> = (0..2 * n_nodes).map(|i| i % 2).collect();
    Ok((graph, meta_path))
}

/// Whether the generated instance admits a path conforming to its meta-path;
/// by construction this decides Hamiltonian s-t path existence.
pub fn theorem1_feasible(graph: &DistrictGraph, meta_path: &[usize]) -> Result<bool> {
    let unit = vec![1.0; graph.edge_count()];
    Ok(evaluate_sequence(graph, &unit, meta_path, Duration::from_secs(30))?.is_some())
}

/// The gadget graph plus one 0/1 cost scenario per clause. A meta-path of
/// cost zero in every scenario exists iff the formula is satisfiable.
///
/// Nodes: source, then per variable the pairs (t1, t2) and (f1, f2), then
/// the sink. Each pair is its own district; source and sink have singleton
/// districts. The crossing edge of a truth gadget costs zero in a clause's
/// scenario exactly when the corresponding literal appears in the clause.
pub fn gen_theorem2_instance(
    n_vars: usize,
    clauses: &[Vec<Lit>],
) -> Result<(DistrictGraph, Vec<Vec<f64>>)> {
    assert!(n_vars >= 1, "need at least one variable");
    // Node layout: s = 0; for variable i: t1 = 1+4i, t2 = 2+4i, f1 = 3+4i,
    // f2 = 4+4i; t = 4n+1.
    let t1 = |i: usize| 1 + 4 * i;
    let t2 = |i: usize| 2 + 4 * i;
    let f1 = |i: usize| 3 + 4 * i;
    let f2 = |i: usize| 4 + 4 * i;
    let sink = 4 * n_vars + 1;

    // Districts: s = 0, per variable true-district 1+2i, false-district
    // 2+2i, t = 2n+1.
    let mut districts = vec![0; 4 * n_vars + 2];
    for i in 0..n_vars {
        districts[t1(i)] = 1 + 2 * i;
        districts[t2(i)] = 1 + 2 * i;
        districts[f1(i)] = 2 + 2 * i;
        districts[f2(i)] = 2 + 2 * i;
    }
    districts[sink] = 2 * n_vars + 1;

    let mut edges = Vec::new();
    let mut crossing = Vec::new(); // (edge index, var, polarity)
    edges.push((0, t1(0)));
    edges.push((0, f1(0)));
    for i in 0..n_vars {
        crossing.push((edges.len(), i, true));
        edges.push((t1(i), t2(i)));
        crossing.push((edges.len(), i, false));
        edges.push((f1(i), f2(i)));
        if i + 1 < n_vars {
            // Level-1 and level-2 chains between consecutive variables.
            for a in [t1(i), f1(i)] {
                for b in [t1(i + 1), f1(i + 1)] {
                    edges.push((a, b));
                }
            }
            for a in [t2(i), f2(i)] {
                for b in [t2(i + 1), f2(i + 1)] {
                    edges.push((a, b));
                }
            }
        }
    }
    edges.push((t2(n_vars - 1), sink));
    edges.push((f2(n_vars - 1), sink));

    let graph = DistrictGraph::new(districts, edges, 0, sink)?;

    let mut scenarios = Vec::with_capacity(clauses.len());
    for clause in clauses {
        let mut costs = vec![0.0; graph.edge_count()];
        for &(e, var, positive) in &crossing {
            let lit = Lit { var, positive };
            if !clause.contains(&lit) {
                costs[e] = 1.0;
            }
        }
        scenarios.push(costs);
    }
    Ok((graph, scenarios))
}

/// The meta-path encoding a truth assignment: source district, one district
/// per variable (true or false), sink district.
pub fn assignment_sequence(n_vars: usize, assignment: &[bool]) -> Vec<usize> {
    let mut seq = vec![0];
    for i in 0..n_vars {
        seq.push(if assignment[i] { 1 + 2 * i } else { 2 + 2 * i });
    }
    seq.push(2 * n_vars + 1);
    seq
}

/// Whether some meta-path costs zero in every scenario. Enumerates the
/// 2^n assignment-shaped meta-paths, which are the only realizable ones.
pub fn zero_cost_meta_path_exists(
    graph: &DistrictGraph,
    scenarios: &[Vec<f64>],
    n_vars: usize,
) -> Result<bool> {
    if scenarios.is_empty() {
        return Ok(true);
    }
    let limit = Duration::from_secs(10);
    for mask in 0u64..(1 << n_vars) {
        let assignment: Vec<bool> = (0..n_vars).map(|i| (mask >> i) & 1 == 1).collect();
        let seq = assignment_sequence(n_vars, &assignment);
        let mut all_zero = true;
        for costs in scenarios {
            match evaluate_sequence(graph, costs, &seq, limit)? {
                Some(c) if c <= 1e-9 => {}
                _ => {
                    all_zero = false;
                    break;
                }
            }
        }
        if all_zero {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Brute-force satisfiability of a clause set.
pub fn brute_force_sat(n_vars: usize, clauses: &[Vec<Lit>]) -> bool {
    if clauses.is_empty() {
        return true;
    }
    (0u64..(1 << n_vars)).any(|mask| {
        clauses.iter().all(|clause| {
            clause
                .iter()
                .any(|lit| ((mask >> lit.var) & 1 == 1) == lit.positive)
        })
    })
}

/// Exhaustive Hamiltonian s-t path search on a small undirected graph.
pub fn brute_force_hamiltonian(
    n_nodes: usize,
    edges: &[(usize, usize)],
    s: usize,
    t: usize,
) -> bool {
    let mut adj = vec![Vec::new(); n_nodes];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    fn extend(
        adj: &[Vec<usize>],
        visited: &mut Vec<bool>,
        at: usize,
        t: usize,
        left: usize,
    ) -> bool {
        if left == 0 {
            return at == t;
        }
        for &next in &adj[at] {
            if !visited[next] {
                visited[next] = true;
                if extend(adj, visited, next, t, left - 1) {
                    return true;
                }
                visited[next] = false;
            }
        }
        false
    }
    let mut visited = vec![false; n_nodes];
    visited[s] = true;
    extend(&adj, &mut visited, s, t, n_nodes - 1)
}
