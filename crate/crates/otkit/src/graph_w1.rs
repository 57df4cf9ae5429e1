//! W1 between signed mass distributions on a weighted graph: geodesic
//! distances, the Lipschitz-potential dual and the min-cost edge flow.
//!
//! Both problems are solved through the transportation problem between the
//! positive and negative parts of `a` over the geodesic cost matrix; the flow
//! routes every transported unit along a shortest path and the potential is
//! the c-transform of the transportation duals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array1, Array2};

use crate::exact_lp::network_simplex;
use crate::{CostMatrix, Error, Histogram, Result};

/// Sum of `a` must vanish up to this tolerance.
pub const BALANCE_TOL: f64 = 1e-10;

/// Connected undirected graph with positive edge lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    nodes: usize,
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl WeightedGraph {
    /// Edges are `(i, j, length)` with 0-based endpoints.
    pub fn new(nodes: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidArgument("graph has no nodes".into()));
        }
        let mut adjacency = vec![Vec::new(); nodes];
        for (k, &(i, j, w)) in edges.iter().enumerate() {
            if i >= nodes || j >= nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge {k} = ({i}, {j}) references a node >= {nodes}"
                )));
            }
            if i == j {
                return Err(Error::InvalidArgument(format!("edge {k} is a self-loop at {i}")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("edge {k} has length {w}")));
            }
            adjacency[i].push((j, k));
            adjacency[j].push((i, k));
        }
        let graph = WeightedGraph {
            nodes,
            edges,
            adjacency,
        };
        if graph.shortest_paths(0).0.iter().any(|d| d.is_infinite()) {
            return Err(Error::Disconnected);
        }
        Ok(graph)
    }

    /// `rows x cols` 4-neighbour grid with unit lengths; node `r * cols + c`.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let k = r * cols + c;
                if c + 1 < cols {
                    edges.push((k, k + 1, 1.0));
                }
                if r + 1 < rows {
                    edges.push((k, k + cols, 1.0));
                }
            }
        }
        WeightedGraph::new(rows * cols, edges)
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Dijkstra distances from `source` and the edge used to reach each node.
    fn shortest_paths(&self, source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        #[derive(PartialEq)]
        struct Entry(f64, usize);
        impl Eq for Entry {}
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
            }
        }
        let mut dist = vec![f64::INFINITY; self.nodes];
        let mut via = vec![None; self.nodes];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, k) in &self.adjacency[u] {
                let nd = d + self.edges[k].2;
                if nd < dist[v] {
                    dist[v] = nd;
                    via[v] = Some(k);
                    heap.push(Entry(nd, v));
                }
            }
        }
        (dist, via)
    }
}

/// All-pairs shortest-path distances.
pub fn geodesic_matrix(graph: &WeightedGraph) -> Array2<f64> {
    let n = graph.nodes;
    let mut out = Array2::zeros((n, n));
    for s in 0..n {
        let (dist, _) = graph.shortest_paths(s);
        out.row_mut(s).assign(&Array1::from(dist));
    }
    // Dijkstra sums edges in path order, so symmetrize the round-off.
    for i in 0..n {
        for j in 0..i {
            let d = out[[i, j]].min(out[[j, i]]);
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

/// Edge flow of the Beckmann problem: `forward[k]` moves mass from `i` to
/// `j` along edge `k = (i, j, w)`, `backward[k]` from `j` to `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFlow {
    pub value: f64,
    pub forward: Array1<f64>,
    pub backward: Array1<f64>,
}

impl GraphFlow {
    /// Net outflow at every node.
    pub fn divergence(&self, graph: &WeightedGraph) -> Array1<f64> {
        let mut div = Array1::zeros(graph.nodes);
        for (k, &(i, j, _)) in graph.edges.iter().enumerate() {
            let net = self.forward[k] - self.backward[k];
            div[i] += net;
            div[j] -= net;
        }
        div
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphPotential {
    pub value: f64,
    /// Satisfies `|f_i - f_j| <= w_ij` on every edge.
    pub potential: Array1<f64>,
}

struct Split {
    sources: Vec<usize>,
    sinks: Vec<usize>,
    geodesic: Array2<f64>,
    solution: Option<crate::exact_lp::NetworkSimplexSolution>,
}

fn split_and_solve(a: &Array1<f64>, graph: &WeightedGraph) -> Result<Split> {
    if a.len() != graph.nodes {
        return Err(Error::Shape {
            expected: vec![graph.nodes],
            got: vec![a.len()],
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite mass".into()));
    }
    let pos: f64 = a.iter().filter(|&&x| x > 0.0).sum();
    let neg: f64 = -a.iter().filter(|&&x| x < 0.0).sum::<f64>();
    if (pos - neg).abs() > BALANCE_TOL {
        return Err(Error::MassMismatch(pos, neg));
    }
    let geodesic = geodesic_matrix(graph);
    let sources: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let sinks: Vec<usize> = (0..a.len()).filter(|&i| a[i] < 0.0).collect();
    if sources.is_empty() || sinks.is_empty() {
        return Ok(Split {
            sources,
            sinks,
            geodesic,
            solution: None,
        });
    }
    // Rescale the sink side so both parts carry exactly the same mass.
    let supply = Histogram::mass(sources.iter().map(|&i| a[i]).collect::<Array1<f64>>())?;
    let demand = Histogram::mass(sinks.iter().map(|&j| -a[j] * pos / neg).collect::<Array1<f64>>())?;
    let cost = CostMatrix::new(Array2::from_shape_fn((sources.len(), sinks.len()), |(k, l)| {
        geodesic[[sources[k], sinks[l]]]
    }))?;
    let solution = network_simplex(&supply, &demand, &cost)?;
    Ok(Split {
        sources,
        sinks,
        geodesic,
        solution: Some(solution),
    })
}

/// Min-cost flow with `div(s) = a`; `a` must sum to zero.
pub fn w1_graph_flow(a: &Array1<f64>, graph: &WeightedGraph) -> Result<GraphFlow> {
    let split = split_and_solve(a, graph)?;
    let e = graph.edges.len();
    let mut forward = Array1::zeros(e);
    let mut backward = Array1::zeros(e);
    let Some(solution) = split.solution else {
        return Ok(GraphFlow {
            value: 0.0,
            forward,
            backward,
        });
    };
    for (l, &sink) in split.sinks.iter().enumerate() {
        // Shortest-path tree rooted at the sink; walk each source towards it.
        let (_, via) = graph.shortest_paths(sink);
        for (k, &source) in split.sources.iter().enumerate() {
            let mass = solution.plan.matrix()[[k, l]];
            if mass <= 0.0 {
                continue;
            }
            let mut node = source;
            while node != sink {
                let edge = via[node].expect("connected graph");
                let (i, j, _) = graph.edges[edge];
                if node == i {
                    forward[edge] += mass;
                    node = j;
                } else {
                    backward[edge] += mass;
                    node = i;
                }
            }
        }
    }
    // Opposite flows on one edge cancel without changing the divergence.
    for k in 0..e {
        let net = forward[k] - backward[k];
        forward[k] = net.max(0.0);
        backward[k] = (-net).max(0.0);
    }
    let value = graph
        .edges
        .iter()
        .enumerate()
        .map(|(k, &(_, _, w))| w * (forward[k] + backward[k]))
        .sum();
    Ok(GraphFlow {
        value,
        forward,
        backward,
    })
}

/// Lipschitz potential maximizing `<f, a>`; `a` must sum to zero.
pub fn w1_graph_potential(a: &Array1<f64>, graph: &WeightedGraph) -> Result<GraphPotential> {
    let split = split_and_solve(a, graph)?;
    let n = graph.nodes;
    let Some(solution) = split.solution else {
        return Ok(GraphPotential {
            value: 0.0,
            potential: Array1::zeros(n),
        });
    };
    let g = &solution.duals.g;
    let potential = Array1::from_shape_fn(n, |x| {
        split
            .sinks
            .iter()
            .enumerate()
            .map(|(l, &sink)| split.geodesic[[x, sink]] - g[l])
            .fold(f64::INFINITY, f64::min)
    });
    Ok(GraphPotential {
        value: potential.dot(a),
        potential,
    })
}
