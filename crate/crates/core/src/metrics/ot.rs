//! Exact optimal transport on a bipartite graph, solved as min-cost flow by
//! successive shortest paths with Dijkstra and node potentials.
//!
//! Instances here are tiny (one node per distinct token), so exactness is
//! affordable and the result doubles as a checkable artifact: the returned
//! plan carries its marginals.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::MetricError;

/// An optimal transport plan and its cost. `plan[i][j]` is the mass moved
/// from supply point `i` to demand point `j`.
#[derive(Debug, Clone)]
pub struct Transport {
    pub cost: f64,
    pub plan: Vec<Vec<f64>>,
}

impl Transport {
    /// Largest absolute violation of the row/column marginal constraints.
    pub fn marginal_error(&self, p: &[f64], q: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.plan.iter().enumerate() {
            worst = worst.max((row.iter().sum::<f64>() - p[i]).abs());
        }
        for j in 0..q.len() {
            let col: f64 = self.plan.iter().map(|r| r[j]).sum();
            worst = worst.max((col - q[j]).abs());
        }
        worst
    }
}

const EPS: f64 = 1e-12;

/// Solves `min Σ plan[i][j]·costs[i][j]` subject to the marginals `p`, `q`.
///
/// Requires non-negative costs and balanced masses (`Σp = Σq` within 1e-6;
/// both sides are renormalized to exactly 1 internally by the callers).
pub fn min_cost_transport(
    p: &[f64],
    q: &[f64],
    costs: &[Vec<f64>],
) -> Result<Transport, MetricError> {
    let n = p.len();
    let m = q.len();
    if n == 0 || m == 0 {
        return Err(MetricError::EmptySequence);
    }
    let total_p: f64 = p.iter().sum();
    let total_q: f64 = q.iter().sum();
    if (total_p - total_q).abs() > 1e-6 {
        return Err(MetricError::Transport(format!(
            "unbalanced masses: {total_p} vs {total_q}"
        )));
    }
    if costs.len() != n || costs.iter().any(|r| r.len() != m) {
        return Err(MetricError::Transport("cost matrix shape mismatch".into()));
    }
    if costs.iter().flatten().any(|&c| !(c >= 0.0)) {
        return Err(MetricError::Transport(
            "costs must be non-negative and finite".into(),
        ));
    }

    // Node layout: 0 = source, 1..=n suppliers, n+1..=n+m consumers, n+m+1 = sink.
    let node_count = n + m + 2;
    let source = 0usize;
    let sink = n + m + 1;
    let mut graph = FlowGraph::new(node_count);
    for (i, &mass) in p.iter().enumerate() {
        graph.add_edge(source, 1 + i, mass, 0.0);
    }
    for (i, row) in costs.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            graph.add_edge(1 + i, 1 + n + j, f64::INFINITY, c);
        }
    }
    for (j, &mass) in q.iter().enumerate() {
        graph.add_edge(1 + n + j, sink, mass, 0.0);
    }

    let mut potentials = vec![0.0f64; node_count];
    let mut shipped = 0.0f64;
    let max_augmentations = 8 * (n * m + n + m) + 64;
    for _ in 0..max_augmentations {
        if shipped >= total_p - EPS {
            break;
        }
        let (dist, parent) = graph.dijkstra(source, &potentials);
        if parent[sink].is_none() {
            break;
        }
        for (v, pot) in potentials.iter_mut().enumerate() {
            if dist[v].is_finite() {
                *pot += dist[v];
            }
        }
        let pushed = graph.augment(source, sink, &parent, total_p - shipped);
        if pushed <= EPS {
            break;
        }
        shipped += pushed;
    }
    if shipped < total_p - 1e-9 {
        return Err(MetricError::Transport(format!(
            "could not ship all mass: {shipped} of {total_p}"
        )));
    }

    let mut plan = vec![vec![0.0f64; m]; n];
    let mut cost = 0.0f64;
    for i in 0..n {
        for (j, cell) in plan[i].iter_mut().enumerate() {
            let flow = graph.flow_between(1 + i, 1 + n + j);
            *cell = flow;
            cost += flow * costs[i][j];
        }
    }
    Ok(Transport { cost, plan })
}

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
    flow: f64,
}

struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        FlowGraph {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    /// Adds a forward edge and its zero-capacity reverse twin (paired ids).
    fn add_edge(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost, flow: 0.0 });
        self.edges.push(Edge { to: from, cap: 0.0, cost: -cost, flow: 0.0 });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
    }

    fn residual(&self, edge: usize) -> f64 {
        self.edges[edge].cap - self.edges[edge].flow
    }

    /// Shortest reduced-cost distances from `source`; returns per-node
    /// distance and the incoming edge on the shortest path tree.
    fn dijkstra(&self, source: usize, potentials: &[f64]) -> (Vec<f64>, Vec<Option<usize>>) {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut heap: BinaryHeap<Reverse<(OrdF64, usize)>> = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Reverse((OrdF64(0.0), source)));
        while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
            if d > dist[u] + EPS {
                continue;
            }
            for &eid in &self.adj[u] {
                if self.residual(eid) <= EPS {
                    continue;
                }
                let e = &self.edges[eid];
                let reduced = e.cost + potentials[u] - potentials[e.to];
                // Reduced costs stay non-negative up to rounding; clamp the dust.
                let w = reduced.max(0.0);
                let nd = d + w;
                if nd + EPS < dist[e.to] {
                    dist[e.to] = nd;
                    parent[e.to] = Some(eid);
                    heap.push(Reverse((OrdF64(nd), e.to)));
                }
            }
        }
        (dist, parent)
    }

    /// Pushes the bottleneck flow along the parent chain into `sink`.
    fn augment(&mut self, source: usize, sink: usize, parent: &[Option<usize>], limit: f64) -> f64 {
        let mut bottleneck = limit;
        let mut v = sink;
        while v != source {
            let eid = parent[v].expect("path exists");
            bottleneck = bottleneck.min(self.residual(eid));
            v = self.edges[eid ^ 1].to;
        }
        if bottleneck <= EPS {
            return 0.0;
        }
        let mut v = sink;
        while v != source {
            let eid = parent[v].expect("path exists");
            self.edges[eid].flow += bottleneck;
            self.edges[eid ^ 1].flow -= bottleneck;
            v = self.edges[eid ^ 1].to;
        }
        bottleneck
    }

    /// Net forward flow on the (unique) edge from `a` to `b`.
    fn flow_between(&self, a: usize, b: usize) -> f64 {
        self.adj[a]
            .iter()
            .filter(|&&eid| eid % 2 == 0 && self.edges[eid].to == b)
            .map(|&eid| self.edges[eid].flow)
            .sum()
    }
}

/// Total-order wrapper so distances can live in a binary heap.
#[derive(PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_transport_is_free() {
        let costs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let t = min_cost_transport(&[0.5, 0.5], &[0.5, 0.5], &costs).unwrap();
        assert!(t.cost.abs() < 1e-12);
        assert!(t.marginal_error(&[0.5, 0.5], &[0.5, 0.5]) < 1e-9);
    }

    #[test]
    fn single_point_pair_costs_distance() {
        let t = min_cost_transport(&[1.0], &[1.0], &[vec![0.75]]).unwrap();
        assert!((t.cost - 0.75).abs() < 1e-12);
    }

    #[test]
    fn crossing_assignment_is_undone() {
        // Moving straight across costs 2, swapping costs 0.2: solver must swap.
        let costs = vec![vec![1.0, 0.1], vec![0.1, 1.0]];
        let t = min_cost_transport(&[0.5, 0.5], &[0.5, 0.5], &costs).unwrap();
        assert!((t.cost - 0.1).abs() < 1e-12);
        assert!((t.plan[0][1] - 0.5).abs() < 1e-12);
        assert!((t.plan[1][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_unbalanced_masses() {
        assert!(min_cost_transport(&[1.0], &[0.5], &[vec![1.0]]).is_err());
    }

    #[test]
    fn uneven_split_requires_both_routes() {
        // One supplier feeds two consumers.
        let costs = vec![vec![0.3, 0.7]];
        let t = min_cost_transport(&[1.0], &[0.25, 0.75], &costs).unwrap();
        assert!((t.cost - (0.25 * 0.3 + 0.75 * 0.7)).abs() < 1e-12);
        assert!(t.marginal_error(&[1.0], &[0.25, 0.75]) < 1e-9);
    }
}
