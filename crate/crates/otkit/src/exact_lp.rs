//! Exact solvers for the discrete Kantorovich linear program.
//!
//! The transportation polytope is handled directly on dense `n x m` arrays:
//! the north-west corner rule produces an initial vertex, the network simplex
//! walks along spanning-tree bases, dual ascent alternates max-flow and dual
//! steps, and the auction algorithm handles the assignment case.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use crate::measure::marginal_residuals;
use crate::tolerances::{dual_slack, EXACT_MARGINAL, SUPPORT};
use crate::{CostMatrix, DualPair, Error, Histogram, Residuals, Result, TransportPlan};

/// `(f^C)_j = min_i C_ij - f_i`.
pub fn ctransform(f: &Array1<f64>, cost: &CostMatrix) -> Array1<f64> {
    let c = cost.entries();
    Array1::from_shape_fn(c.ncols(), |j| {
        c.column(j)
            .iter()
            .zip(f.iter())
            .map(|(cij, fi)| cij - fi)
            .fold(f64::INFINITY, f64::min)
    })
}

/// `(g^Cbar)_i = min_j C_ij - g_j`.
pub fn cbar_transform(g: &Array1<f64>, cost: &CostMatrix) -> Array1<f64> {
    let c = cost.entries();
    Array1::from_shape_fn(c.nrows(), |i| {
        c.row(i)
            .iter()
            .zip(g.iter())
            .map(|(cij, gj)| cij - gj)
            .fold(f64::INFINITY, f64::min)
    })
}

fn check_balanced(a: &Histogram, b: &Histogram) -> Result<()> {
    let (sa, sb) = (a.total(), b.total());
    if (sa - sb).abs() > EXACT_MARGINAL {
        return Err(Error::MassMismatch(sa, sb));
    }
    Ok(())
}

fn check_cost_shape(a: &Histogram, b: &Histogram, cost: &CostMatrix) -> Result<()> {
    if cost.shape() != (a.len(), b.len()) {
        return Err(Error::Shape {
            expected: vec![a.len(), b.len()],
            got: vec![cost.shape().0, cost.shape().1],
        });
    }
    Ok(())
}

/// The `n + m - 1` basic edges of the north-west corner rule, degenerate
/// zero-mass edges included so that they always span a tree.
fn northwest_basis(a: &[f64], b: &[f64]) -> Vec<(usize, usize, f64)> {
    let (n, m) = (a.len(), b.len());
    let mut edges = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    let (mut r, mut c) = (a[0], b[0]);
    loop {
        if i == n - 1 && j == m - 1 {
            // Remaining mass on both sides agrees up to round-off.
            edges.push((i, j, r.min(c).max(0.0)));
            break;
        }
        let advance_row = j == m - 1 || (i < n - 1 && r <= c);
        if advance_row {
            edges.push((i, j, r.max(0.0)));
            c -= r;
            i += 1;
            r = a[i];
        } else {
            edges.push((i, j, c.max(0.0)));
            r -= c;
            j += 1;
            c = b[j];
        }
    }
    edges
}

/// North-west corner rule: a vertex of the transportation polytope.
pub fn northwest_corner(a: &Histogram, b: &Histogram) -> Result<TransportPlan> {
    check_balanced(a, b)?;
    let (n, m) = (a.len(), b.len());
    let mut p = Array2::zeros((n, m));
    let aw = a.weights().to_vec();
    let bw = b.weights().to_vec();
    for (i, j, x) in northwest_basis(&aw, &bw) {
        p[[i, j]] = x;
    }
    Ok(TransportPlan::new(p, EXACT_MARGINAL))
}

/// North-west corner rule applied after reordering rows by `row_order` and
/// columns by `col_order` (0-based), mapped back to the original indices:
/// `P[row_order[k]][col_order[l]] = NW[k][l]`.
pub fn northwest_corner_permuted(
    a: &Histogram,
    b: &Histogram,
    row_order: &[usize],
    col_order: &[usize],
) -> Result<TransportPlan> {
    check_balanced(a, b)?;
    let (n, m) = (a.len(), b.len());
    if !is_permutation(row_order, n) || !is_permutation(col_order, m) {
        return Err(Error::InvalidArgument("orders must be permutations".into()));
    }
    let aw: Vec<f64> = row_order.iter().map(|&k| a.weights()[k]).collect();
    let bw: Vec<f64> = col_order.iter().map(|&l| b.weights()[l]).collect();
    let mut p = Array2::zeros((n, m));
    for (k, l, x) in northwest_basis(&aw, &bw) {
        p[[row_order[k], col_order[l]]] = x;
    }
    Ok(TransportPlan::new(p, EXACT_MARGINAL))
}

/// North-west corner vertex together with the potentials solving
/// `f_i + g_j = C_ij` on its basis tree (not necessarily dual feasible).
pub fn northwest_duals(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
) -> Result<(TransportPlan, DualPair)> {
    check_balanced(a, b)?;
    check_cost_shape(a, b, cost)?;
    let (n, m) = (a.len(), b.len());
    let edges = northwest_basis(&a.weights().to_vec(), &b.weights().to_vec());
    let mut p = Array2::zeros((n, m));
    for &(i, j, x) in &edges {
        p[[i, j]] = x;
    }
    let basis: Vec<(usize, usize)> = edges.iter().map(|&(i, j, _)| (i, j)).collect();
    let mut tree = Tree::new(n, m);
    tree.rebuild(&basis, cost.entries());
    let (f, g) = tree.potentials();
    Ok((TransportPlan::new(p, EXACT_MARGINAL), DualPair::new(f, g)))
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n
        && order.iter().all(|&k| {
            k < n && !std::mem::replace(&mut seen[k], true)
        })
}

#[derive(Debug, Clone)]
pub struct NetworkSimplexSolution {
    pub value: f64,
    pub plan: TransportPlan,
    pub duals: DualPair,
    pub pivots: usize,
    /// `<P, C>` after every pivot, starting with the initial vertex.
    pub objective_trace: Vec<f64>,
}

/// Network simplex started from the north-west corner vertex.
pub fn network_simplex(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
) -> Result<NetworkSimplexSolution> {
    let (n, m) = (a.len(), b.len());
    network_simplex_with_limit(a, b, cost, 100 * n * m + 1000)
}

pub fn network_simplex_with_limit(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    max_pivots: usize,
) -> Result<NetworkSimplexSolution> {
    check_balanced(a, b)?;
    check_cost_shape(a, b, cost)?;
    let (n, m) = (a.len(), b.len());
    let c = cost.entries();
    let tol = dual_slack(cost.sup_norm());

    let aw = a.weights().to_vec();
    let bw = b.weights().to_vec();
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);
    let mut flow = Array2::<f64>::zeros((n, m));
    let mut in_basis = Array2::from_elem((n, m), false);
    for (i, j, x) in northwest_basis(&aw, &bw) {
        basis.push((i, j));
        flow[[i, j]] = x;
        in_basis[[i, j]] = true;
    }

    let mut tree = Tree::new(n, m);
    let mut trace = vec![(&flow * c).sum()];
    let mut pivots = 0;
    loop {
        tree.rebuild(&basis, c);
        let (f, g) = tree.potentials();

        // Most negative reduced cost; strict comparison keeps the
        // lexicographically first (i, j) among ties.
        let mut entering = None;
        let mut best = -tol;
        for i in 0..n {
            for j in 0..m {
                if in_basis[[i, j]] {
                    continue;
                }
                let r = c[[i, j]] - f[i] - g[j];
                if r < best {
                    best = r;
                    entering = Some((i, j));
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let value = (&flow * c).sum();
            return Ok(NetworkSimplexSolution {
                value,
                plan: TransportPlan::new(flow, EXACT_MARGINAL),
                duals: DualPair::new(f, g),
                pivots,
                objective_trace: trace,
            });
        };
        if pivots >= max_pivots {
            return Err(Error::PivotLimit(max_pivots));
        }

        // Cycle: entering edge gains theta, tree path from column ej back to
        // row ei alternates -, +, -, ...
        let path = tree.path_edges(n + ej, ei);
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (k, &e) in path.iter().enumerate() {
            if k % 2 == 1 {
                continue;
            }
            let (i, j) = basis[e];
            let x = flow[[i, j]];
            let better = x < theta
                || (x == theta && leaving != usize::MAX && (i, j) < basis[leaving]);
            if better {
                theta = x;
                leaving = e;
            }
        }
        flow[[ei, ej]] = theta;
        for (k, &e) in path.iter().enumerate() {
            let (i, j) = basis[e];
            if k % 2 == 0 {
                flow[[i, j]] = (flow[[i, j]] - theta).max(0.0);
            } else {
                flow[[i, j]] += theta;
            }
        }
        let (li, lj) = basis[leaving];
        flow[[li, lj]] = 0.0;
        in_basis[[li, lj]] = false;
        in_basis[[ei, ej]] = true;
        basis[leaving] = (ei, ej);
        pivots += 1;
        trace.push((&flow * c).sum());
    }
}

/// Spanning forest over rows `0..n` and columns `n..n+m`.
struct Tree {
    n: usize,
    adj: Vec<Vec<(usize, usize)>>,
    parent: Vec<usize>,
    parent_edge: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl Tree {
    fn new(n: usize, m: usize) -> Self {
        let nodes = n + m;
        Tree {
            n,
            adj: vec![Vec::new(); nodes],
            parent: vec![NONE; nodes],
            parent_edge: vec![NONE; nodes],
            depth: vec![0; nodes],
            pot: vec![0.0; nodes],
        }
    }

    /// Breadth-first traversal solving `f_i + g_j = C_ij` on tree edges; the
    /// smallest unvisited node of each component is a root with potential 0.
    fn rebuild(&mut self, basis: &[(usize, usize)], c: &Array2<f64>) {
        let n = self.n;
        for list in &mut self.adj {
            list.clear();
        }
        for (e, &(i, j)) in basis.iter().enumerate() {
            self.adj[i].push((n + j, e));
            self.adj[n + j].push((i, e));
        }
        let nodes = self.adj.len();
        let mut seen = vec![false; nodes];
        let mut queue = VecDeque::new();
        for root in 0..nodes {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            self.parent[root] = NONE;
            self.parent_edge[root] = NONE;
            self.depth[root] = 0;
            self.pot[root] = 0.0;
            queue.push_back(root);
            while let Some(u) = queue.pop_front() {
                for k in 0..self.adj[u].len() {
                    let (w, e) = self.adj[u][k];
                    if seen[w] {
                        continue;
                    }
                    seen[w] = true;
                    let (i, j) = basis[e];
                    self.pot[w] = c[[i, j]] - self.pot[u];
                    self.parent[w] = u;
                    self.parent_edge[w] = e;
                    self.depth[w] = self.depth[u] + 1;
                    queue.push_back(w);
                }
            }
        }
    }

    fn potentials(&self) -> (Array1<f64>, Array1<f64>) {
        let n = self.n;
        (
            Array1::from_iter(self.pot[..n].iter().copied()),
            Array1::from_iter(self.pot[n..].iter().copied()),
        )
    }

    /// Edge indices on the tree path from `from` to `to`, in walking order.
    fn path_edges(&self, from: usize, to: usize) -> Vec<usize> {
        let (mut u, mut w) = (from, to);
        let mut head = Vec::new();
        let mut tail = Vec::new();
        while self.depth[u] > self.depth[w] {
            head.push(self.parent_edge[u]);
            u = self.parent[u];
        }
        while self.depth[w] > self.depth[u] {
            tail.push(self.parent_edge[w]);
            w = self.parent[w];
        }
        while u != w {
            head.push(self.parent_edge[u]);
            u = self.parent[u];
            tail.push(self.parent_edge[w]);
            w = self.parent[w];
        }
        tail.reverse();
        head.extend(tail);
        head
    }
}

/// Outcome of [`certify_optimality`].
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub optimal: bool,
    pub residuals: Residuals,
    pub min_entry: f64,
    /// Worst `f_i + g_j - C_ij` above the slack tolerance.
    pub dual_violation: Option<(usize, usize, f64)>,
    /// Worst `|C_ij - f_i - g_j|` on the plan's support above the tolerance.
    pub slackness_violation: Option<(usize, usize, f64)>,
}

/// Complementary slackness certificate for a primal-dual pair.
pub fn certify_optimality(
    plan: &TransportPlan,
    duals: &DualPair,
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
) -> Certificate {
    let p = plan.matrix();
    let c = cost.entries();
    let tol = dual_slack(cost.sup_norm());
    let shapes_ok = p.dim() == c.dim()
        && p.nrows() == a.len()
        && p.ncols() == b.len()
        && duals.f.len() == a.len()
        && duals.g.len() == b.len();
    if !shapes_ok {
        return Certificate {
            optimal: false,
            residuals: Residuals {
                row: f64::INFINITY,
                col: f64::INFINITY,
            },
            min_entry: f64::NAN,
            dual_violation: None,
            slackness_violation: None,
        };
    }
    let residuals = marginal_residuals(p, a.weights(), b.weights());
    let min_entry = p.iter().copied().fold(f64::INFINITY, f64::min);
    let mut dual_violation: Option<(usize, usize, f64)> = None;
    let mut slackness_violation: Option<(usize, usize, f64)> = None;
    for ((i, j), &cij) in c.indexed_iter() {
        let slack = cij - duals.f[i] - duals.g[j];
        if -slack > tol && dual_violation.is_none_or(|(_, _, v)| -slack > v) {
            dual_violation = Some((i, j, -slack));
        }
        if p[[i, j]] > SUPPORT
            && slack.abs() > tol
            && slackness_violation.is_none_or(|(_, _, v)| slack.abs() > v)
        {
            slackness_violation = Some((i, j, slack.abs()));
        }
    }
    let optimal = residuals.row <= EXACT_MARGINAL
        && residuals.col <= EXACT_MARGINAL
        && min_entry >= -SUPPORT
        && dual_violation.is_none()
        && slackness_violation.is_none();
    Certificate {
        optimal,
        residuals,
        min_entry,
        dual_violation,
        slackness_violation,
    }
}

#[derive(Debug, Clone)]
pub struct DualAscentSolution {
    /// `<P, C>` of the returned plan.
    pub value: f64,
    /// `<f, a> + <g, b>`.
    pub dual_objective: f64,
    pub duals: DualPair,
    pub plan: TransportPlan,
    /// Number of dual improvement steps.
    pub iterations: usize,
}

/// Primal-dual ascent: max-flow on the tight edges, then a dual step on the
/// labelled set.
pub fn dual_ascent(a: &Histogram, b: &Histogram, cost: &CostMatrix) -> Result<DualAscentSolution> {
    let (n, m) = (a.len(), b.len());
    dual_ascent_with_limit(a, b, cost, 10_000 + 100 * n * m)
}

pub fn dual_ascent_with_limit(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    max_iter: usize,
) -> Result<DualAscentSolution> {
    check_balanced(a, b)?;
    check_cost_shape(a, b, cost)?;
    let (n, m) = (a.len(), b.len());
    let c = cost.entries();
    let aw = a.weights();
    let bw = b.weights();
    let tight = 1e-11 * (1.0 + cost.sup_norm());
    let cap_eps = 1e-14 * (1.0 + a.total());

    let mut f = Array1::<f64>::zeros(n);
    let mut g = ctransform(&f, cost);
    let mut x = Array2::<f64>::zeros((n, m));
    let mut out_s = Array1::<f64>::zeros(n);
    let mut in_t = Array1::<f64>::zeros(m);
    let mut iterations = 0;

    loop {
        // Augment along shortest residual paths until none remains.
        let (row_lab, col_lab) = loop {
            let search = residual_search(c, &f, &g, tight, cap_eps, aw, bw, &x, &out_s, &in_t);
            let Some(end) = search.sink_col else {
                break (search.row_seen, search.col_seen);
            };
            augment(end, &search, aw, bw, &mut x, &mut out_s, &mut in_t);
        };

        if !row_lab.iter().any(|&s| s) {
            let value = (&x * c).sum();
            let duals = DualPair::new(f, g);
            let dual_objective = duals.objective(a, b);
            return Ok(DualAscentSolution {
                value,
                dual_objective,
                duals,
                plan: TransportPlan::new(x, EXACT_MARGINAL),
                iterations,
            });
        }
        if iterations >= max_iter {
            return Err(Error::IterationLimit {
                limit: max_iter,
                objective: f.dot(aw) + g.dot(bw),
            });
        }

        let mut step = f64::INFINITY;
        for i in (0..n).filter(|&i| row_lab[i]) {
            for j in (0..m).filter(|&j| !col_lab[j]) {
                step = step.min(c[[i, j]] - f[i] - g[j]);
            }
        }
        if !step.is_finite() {
            // Every column is reachable yet no augmenting path exists: the
            // leftover mass is below the capacity resolution.
            return Err(Error::IterationLimit {
                limit: iterations,
                objective: f.dot(aw) + g.dot(bw),
            });
        }
        let step = step.max(0.0);
        for i in 0..n {
            if row_lab[i] {
                f[i] += step;
            }
        }
        for j in 0..m {
            if col_lab[j] {
                g[j] -= step;
            }
        }
        iterations += 1;
    }
}

struct Search {
    row_seen: Vec<bool>,
    col_seen: Vec<bool>,
    /// Predecessor of a row: `None` for the source, `Some(j)` via a backward edge.
    row_pred: Vec<Option<usize>>,
    /// Row from which each column was reached.
    col_pred: Vec<usize>,
    sink_col: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn residual_search(
    c: &Array2<f64>,
    f: &Array1<f64>,
    g: &Array1<f64>,
    tight: f64,
    cap_eps: f64,
    a: &Array1<f64>,
    b: &Array1<f64>,
    x: &Array2<f64>,
    out_s: &Array1<f64>,
    in_t: &Array1<f64>,
) -> Search {
    let (n, m) = c.dim();
    let mut s = Search {
        row_seen: vec![false; n],
        col_seen: vec![false; m],
        row_pred: vec![None; n],
        col_pred: vec![0; m],
        sink_col: None,
    };
    let mut queue = VecDeque::new();
    for i in 0..n {
        if a[i] - out_s[i] > cap_eps {
            s.row_seen[i] = true;
            queue.push_back((true, i));
        }
    }
    while let Some((is_row, k)) = queue.pop_front() {
        if is_row {
            let i = k;
            for j in 0..m {
                if !s.col_seen[j] && c[[i, j]] - f[i] - g[j] <= tight {
                    s.col_seen[j] = true;
                    s.col_pred[j] = i;
                    if b[j] - in_t[j] > cap_eps && s.sink_col.is_none() {
                        s.sink_col = Some(j);
                        return s;
                    }
                    queue.push_back((false, j));
                }
            }
        } else {
            let j = k;
            for i in 0..n {
                if !s.row_seen[i] && x[[i, j]] > cap_eps {
                    s.row_seen[i] = true;
                    s.row_pred[i] = Some(j);
                    queue.push_back((true, i));
                }
            }
        }
    }
    s
}

fn augment(
    end: usize,
    s: &Search,
    a: &Array1<f64>,
    b: &Array1<f64>,
    x: &mut Array2<f64>,
    out_s: &mut Array1<f64>,
    in_t: &mut Array1<f64>,
) {
    // Walk back to find the bottleneck, then push.
    let mut delta = b[end] - in_t[end];
    let mut j = end;
    loop {
        let i = s.col_pred[j];
        match s.row_pred[i] {
            None => {
                delta = delta.min(a[i] - out_s[i]);
                break;
            }
            Some(jp) => {
                delta = delta.min(x[[i, jp]]);
                j = jp;
            }
        }
    }
    in_t[end] += delta;
    let mut j = end;
    loop {
        let i = s.col_pred[j];
        x[[i, j]] += delta;
        match s.row_pred[i] {
            None => {
                out_s[i] += delta;
                break;
            }
            Some(jp) => {
                x[[i, jp]] = (x[[i, jp]] - delta).max(0.0);
                j = jp;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuctionResult {
    /// `assignment[i]` is the column matched to row `i`.
    pub assignment: Vec<usize>,
    pub prices: Array1<f64>,
    pub cost: f64,
    /// Total number of bids (each lowers one price by at least the current epsilon).
    pub price_updates: usize,
    /// Price vector after every bid, when requested.
    pub price_trace: Vec<Array1<f64>>,
}

/// Single-phase auction from zero prices.
pub fn auction(cost: &CostMatrix, epsilon: f64) -> Result<AuctionResult> {
    run_auction(cost, epsilon, false, false)
}

/// Auction with epsilon scaling: phases at `max|C|/2, /4, ...` down to `epsilon`,
/// keeping prices between phases.
pub fn auction_scaled(cost: &CostMatrix, epsilon: f64) -> Result<AuctionResult> {
    run_auction(cost, epsilon, true, false)
}

/// Same as [`auction`] but records the price vector after every bid.
pub fn auction_traced(cost: &CostMatrix, epsilon: f64) -> Result<AuctionResult> {
    run_auction(cost, epsilon, false, true)
}

fn run_auction(cost: &CostMatrix, epsilon: f64, scaled: bool, traced: bool) -> Result<AuctionResult> {
    let (n, m) = cost.shape();
    if n != m {
        return Err(Error::Shape {
            expected: vec![n, n],
            got: vec![n, m],
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let c = cost.entries();
    let mut prices = Array1::<f64>::zeros(n);
    let mut updates = 0;
    let mut trace = Vec::new();
    let mut eps = if scaled {
        (cost.sup_norm() / 2.0).max(epsilon)
    } else {
        epsilon
    };
    let assignment = loop {
        let assignment = auction_phase(c, eps, &mut prices, &mut updates, traced.then_some(&mut trace));
        if eps <= epsilon {
            break assignment;
        }
        eps = (eps / 4.0).max(epsilon);
    };
    let total = assignment.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
    Ok(AuctionResult {
        assignment,
        prices,
        cost: total,
        price_updates: updates,
        price_trace: trace,
    })
}

fn auction_phase(
    c: &Array2<f64>,
    eps: f64,
    prices: &mut Array1<f64>,
    updates: &mut usize,
    mut trace: Option<&mut Vec<Array1<f64>>>,
) -> Vec<usize> {
    let n = c.nrows();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut queue: VecDeque<usize> = (0..n).collect();
    while let Some(i) = queue.pop_front() {
        let (mut j1, mut w1, mut w2) = (0, f64::INFINITY, f64::INFINITY);
        for j in 0..n {
            let w = c[[i, j]] - prices[j];
            if w < w1 {
                w2 = w1;
                w1 = w;
                j1 = j;
            } else if w < w2 {
                w2 = w;
            }
        }
        let raise = if w2.is_finite() { w2 - w1 } else { 0.0 };
        prices[j1] -= raise + eps;
        *updates += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.push(prices.clone());
        }
        if let Some(prev) = owner[j1].replace(i) {
            assigned[prev] = None;
            queue.push_back(prev);
        }
        assigned[i] = Some(j1);
    }
    assigned.into_iter().map(|j| j.expect("every row is assigned")).collect()
}

/// Checks `C_{i,s(i)} - g_{s(i)} <= eps + min_j (C_ij - g_j)` on assigned rows.
pub fn eps_complementary_slackness(
    cost: &CostMatrix,
    assignment: &[Option<usize>],
    prices: &Array1<f64>,
    eps: f64,
) -> bool {
    let c = cost.entries();
    assignment.iter().enumerate().all(|(i, s)| match s {
        None => true,
        Some(j) => {
            let best = (0..c.ncols())
                .map(|k| c[[i, k]] - prices[k])
                .fold(f64::INFINITY, f64::min);
            c[[i, *j]] - prices[*j] <= eps + best + 1e-12 * (1.0 + cost.sup_norm())
        }
    })
}
