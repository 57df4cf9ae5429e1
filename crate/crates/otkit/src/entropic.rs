//! Entropic optimal transport: Sinkhorn iterations in scaling and log form,
//! Hilbert-metric diagnostics, rounding onto the transport polytope, Sinkhorn
//! divergences, generalized (unbalanced) Sinkhorn, proximal-point refinement,
//! batched solves and separable kernels.
//!
//! Entropy conventions: [`entropy`] is the Shannon entropy `-sum P log P`
//! (with `0 log 0 = 0`). The regularized cost is
//! `<C, P> - eps * sum P (1 - log P)`, whose dual value
//! `<f, a> + <g, b> - eps <e^(f/eps), K e^(g/eps)>` it equals at the optimum.

use ndarray::{Array1, Array2, ArrayD, Axis};

use crate::linalg::logsumexp;
use crate::measure::marginal_residuals;
use crate::tolerances::SINKHORN_TOL;
use crate::{CostMatrix, DualPair, Error, Histogram, Residuals, Result, Scalings, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    /// Stop once `|P 1 - a|_1 + |P^T 1 - b|_1 < tol`.
    pub tol: f64,
    /// `None` selects [`default_max_iter`].
    pub max_iter: Option<usize>,
    /// Keep the residual of every iteration in the report.
    pub record_trace: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: SINKHORN_TOL,
            max_iter: None,
            record_trace: false,
        }
    }
}

impl SinkhornOptions {
    pub fn fixed_iterations(n: usize) -> Self {
        SinkhornOptions {
            tol: 0.0,
            max_iter: Some(n),
            record_trace: false,
        }
    }

    fn limit(&self, cost_sup: f64, epsilon: f64) -> usize {
        self.max_iter.unwrap_or_else(|| default_max_iter(cost_sup, epsilon))
    }
}

/// `1e4 * ceil(max|C| / eps)`, capped at `1e6`.
pub fn default_max_iter(cost_sup: f64, epsilon: f64) -> usize {
    let ratio = (cost_sup / epsilon).ceil().max(1.0);
    (1e4 * ratio).min(1e6) as usize
}

/// Log domain is preferred once `eps < 1e-2 max|C|`.
pub fn prefers_log_domain(cost_sup: f64, epsilon: f64) -> bool {
    epsilon < 1e-2 * cost_sup
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornReport {
    /// `<C, P> - eps * sum P (1 - log P)`.
    pub regularized_cost: f64,
    /// `<C, P>`, the primal Sinkhorn divergence.
    pub transport_cost: f64,
    /// `<f, a> + <g, b> - eps <e^(f/eps), K e^(g/eps)>`.
    pub dual_objective: f64,
    /// Shannon entropy of the plan.
    pub entropy: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    pub converged: bool,
    /// Row-marginal l1 residual before each update (when recorded).
    pub trace: Vec<f64>,
    pub log_domain: bool,
}

#[derive(Debug, Clone)]
pub struct EntropicSolution {
    pub duals: DualPair,
    /// Present for the scaling-form solver.
    pub scalings: Option<Scalings>,
    pub plan: TransportPlan,
    pub report: SinkhornReport,
}

/// Dense Gibbs kernel `K = exp(-C / eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsKernel {
    epsilon: f64,
    matrix: Array2<f64>,
}

impl GibbsKernel {
    pub fn new(cost: &CostMatrix, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(GibbsKernel {
            epsilon,
            matrix: cost.entries().mapv(|c| (-c / epsilon).exp()),
        })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `diag(u) K diag(v)`.
    pub fn plan(&self, u: &Array1<f64>, v: &Array1<f64>) -> Array2<f64> {
        Array2::from_shape_fn(self.matrix.dim(), |(i, j)| u[i] * self.matrix[[i, j]] * v[j])
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(())
}

fn check_problem(a: &Histogram, b: &Histogram, cost: &CostMatrix, epsilon: f64) -> Result<()> {
    check_epsilon(epsilon)?;
    if cost.shape() != (a.len(), b.len()) {
        return Err(Error::Shape {
            expected: vec![a.len(), b.len()],
            got: vec![cost.shape().0, cost.shape().1],
        });
    }
    for (h, name) in [(a, "a"), (b, "b")] {
        if let Some(i) = h.weights().iter().position(|&w| w <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "{name}[{i}] = 0; drop zero-weight atoms first"
            )));
        }
    }
    Ok(())
}

/// Shannon entropy `-sum P log P` with `0 log 0 = 0`.
pub fn entropy(p: &Array2<f64>) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `-eps log sum_k exp(-z_k / eps)`; tends to `min z` as `eps -> 0`.
pub fn soft_min(z: &[f64], epsilon: f64) -> f64 {
    -epsilon * logsumexp(z.iter().map(|&x| -x / epsilon))
}

/// Scaling-form Sinkhorn: `u = a / K v`, `v = b / K^T u`.
pub fn sinkhorn(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<EntropicSolution> {
    check_problem(a, b, cost, epsilon)?;
    let kernel = GibbsKernel::new(cost, epsilon)?;
    sinkhorn_with_kernel(a, b, cost, &kernel, opts)
}

fn sinkhorn_with_kernel(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    kernel: &GibbsKernel,
    opts: &SinkhornOptions,
) -> Result<EntropicSolution> {
    let eps = kernel.epsilon;
    let k = &kernel.matrix;
    let (aw, bw) = (a.weights(), b.weights());
    let limit = opts.limit(cost.sup_norm(), eps);
    let mut u = Array1::<f64>::ones(a.len());
    let mut v = Array1::<f64>::ones(b.len());
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let kv = k.dot(&v);
        if kv.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Underflow);
        }
        if iterations > 0 {
            // Columns are exact right after the v-update, so the row residual
            // is the whole marginal violation.
            let resid: f64 = (0..a.len()).map(|i| (u[i] * kv[i] - aw[i]).abs()).sum();
            if opts.record_trace {
                trace.push(resid);
            }
            if resid < opts.tol {
                converged = true;
                break;
            }
        }
        if iterations >= limit {
            break;
        }
        u = aw / &kv;
        let ktu = k.t().dot(&u);
        if ktu.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Underflow);
        }
        v = bw / &ktu;
        iterations += 1;
    }
    let plan = kernel.plan(&u, &v);
    let scalings = Scalings { u, v, epsilon: eps };
    let duals = scalings.to_duals();
    let report = build_report(&plan, None, &duals, a, b, cost, eps, iterations, converged, trace, false);
    Ok(EntropicSolution {
        duals,
        scalings: Some(scalings),
        plan: TransportPlan::new(plan, opts.tol),
        report,
    })
}

/// Log-domain Sinkhorn on the potentials `f = eps log u`, `g = eps log v`,
/// each update a soft-min stabilized by its running maximum.
pub fn sinkhorn_log(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<EntropicSolution> {
    sinkhorn_log_warm(a, b, cost, epsilon, opts, None)
}

/// [`sinkhorn_log`] started from the column potential `g0` instead of zero.
pub fn sinkhorn_log_warm(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    epsilon: f64,
    opts: &SinkhornOptions,
    g0: Option<&Array1<f64>>,
) -> Result<EntropicSolution> {
    check_problem(a, b, cost, epsilon)?;
    if let Some(g) = g0 {
        if g.len() != b.len() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("warm start must be finite with one entry per column".into()));
        }
    }
    let eps = epsilon;
    let c = cost.entries();
    let (n, m) = c.dim();
    let log_a = a.weights().mapv(f64::ln);
    let log_b = b.weights().mapv(f64::ln);
    let limit = opts.limit(cost.sup_norm(), eps);
    let mut f = Array1::<f64>::zeros(n);
    let mut g = g0.cloned().unwrap_or_else(|| Array1::<f64>::zeros(m));
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let f_new = update_rows(c, &g, &log_a, eps);
        if iterations > 0 {
            let resid: f64 = (0..n)
                .map(|i| a.weights()[i] * (((f[i] - f_new[i]) / eps).exp() - 1.0).abs())
                .sum();
            if opts.record_trace {
                trace.push(resid);
            }
            if resid < opts.tol {
                converged = true;
                break;
            }
        }
        if iterations >= limit {
            break;
        }
        f = f_new;
        g = update_cols(c, &f, &log_b, eps);
        iterations += 1;
    }
    let log_plan = Array2::from_shape_fn((n, m), |(i, j)| (f[i] + g[j] - c[[i, j]]) / eps);
    let plan = log_plan.mapv(f64::exp);
    let duals = DualPair::new(f, g);
    let report = build_report(
        &plan,
        Some(&log_plan),
        &duals,
        a,
        b,
        cost,
        eps,
        iterations,
        converged,
        trace,
        true,
    );
    Ok(EntropicSolution {
        duals,
        scalings: None,
        plan: TransportPlan::new(plan, opts.tol),
        report,
    })
}

/// `f_i = eps log a_i - eps LSE_j((g_j - C_ij) / eps)`.
fn update_rows(c: &Array2<f64>, g: &Array1<f64>, log_a: &Array1<f64>, eps: f64) -> Array1<f64> {
    Array1::from_shape_fn(c.nrows(), |i| {
        let row = c.row(i);
        let lse = logsumexp(row.iter().zip(g.iter()).map(|(&cij, &gj)| (gj - cij) / eps));
        eps * (log_a[i] - lse)
    })
}

fn update_cols(c: &Array2<f64>, f: &Array1<f64>, log_b: &Array1<f64>, eps: f64) -> Array1<f64> {
    Array1::from_shape_fn(c.ncols(), |j| {
        let col = c.column(j);
        let lse = logsumexp(col.iter().zip(f.iter()).map(|(&cij, &fi)| (fi - cij) / eps));
        eps * (log_b[j] - lse)
    })
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    plan: &Array2<f64>,
    log_plan: Option<&Array2<f64>>,
    duals: &DualPair,
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    eps: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    log_domain: bool,
) -> SinkhornReport {
    let transport_cost = (plan * cost.entries()).sum();
    let mass = plan.sum();
    let entropy = match log_plan {
        Some(lp) => -plan
            .iter()
            .zip(lp.iter())
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &l)| p * l)
            .sum::<f64>(),
        None => entropy(plan),
    };
    SinkhornReport {
        regularized_cost: transport_cost - eps * (entropy + mass),
        transport_cost,
        dual_objective: duals.objective(a, b) - eps * mass,
        entropy,
        iterations,
        residuals: marginal_residuals(plan, a.weights(), b.weights()),
        converged,
        trace,
        log_domain,
    }
}

/// Scaling form when `eps >= 1e-2 max|C|`, log domain otherwise.
pub fn solve_entropic(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<EntropicSolution> {
    if prefers_log_domain(cost.sup_norm(), epsilon) {
        sinkhorn_log(a, b, cost, epsilon, opts)
    } else {
        match sinkhorn(a, b, cost, epsilon, opts) {
            Err(Error::Underflow) => sinkhorn_log(a, b, cost, epsilon, opts),
            other => other,
        }
    }
}

/// Scalings `(u, v)` after each of the first `iterations` full updates,
/// starting from `u = v = 1` (entry 0 is the start).
pub fn sinkhorn_iterates(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    epsilon: f64,
    iterations: usize,
) -> Result<Vec<Scalings>> {
    check_problem(a, b, cost, epsilon)?;
    let k = GibbsKernel::new(cost, epsilon)?;
    let mut u = Array1::<f64>::ones(a.len());
    let mut v = Array1::<f64>::ones(b.len());
    let mut out = vec![Scalings {
        u: u.clone(),
        v: v.clone(),
        epsilon,
    }];
    for _ in 0..iterations {
        u = a.weights() / &k.matrix.dot(&v);
        v = b.weights() / &k.matrix.t().dot(&u);
        if u.iter().chain(v.iter()).any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::Underflow);
        }
        out.push(Scalings {
            u: u.clone(),
            v: v.clone(),
            epsilon,
        });
    }
    Ok(out)
}

/// Projection of an approximate plan onto `U(a, b)`: rows, then columns are
/// scaled down to their targets and the leftover mass is added back as a
/// rank-one correction.
pub fn round_plan(p: &Array2<f64>, a: &Histogram, b: &Histogram) -> Result<TransportPlan> {
    if p.dim() != (a.len(), b.len()) {
        return Err(Error::Shape {
            expected: vec![a.len(), b.len()],
            got: vec![p.nrows(), p.ncols()],
        });
    }
    let rows = p.sum_axis(Axis(1));
    let x = Array1::from_shape_fn(a.len(), |i| (a.weights()[i] / rows[i]).min(1.0));
    let mut out = p * &x.view().insert_axis(Axis(1));
    let cols = out.sum_axis(Axis(0));
    let y = Array1::from_shape_fn(b.len(), |j| (b.weights()[j] / cols[j]).min(1.0));
    out *= &y;
    let err_r = a.weights() - &out.sum_axis(Axis(1));
    let err_c = b.weights() - &out.sum_axis(Axis(0));
    let norm = err_r.mapv(f64::abs).sum();
    if norm > 0.0 {
        for i in 0..a.len() {
            for j in 0..b.len() {
                out[[i, j]] += err_r[i] * err_c[j] / norm;
            }
        }
    }
    Ok(TransportPlan::new(out, 1e-12))
}

/// [`round_plan`] applied to `diag(u) K diag(v)`.
pub fn round_to_feasible(
    u: &Array1<f64>,
    v: &Array1<f64>,
    kernel: &GibbsKernel,
    a: &Histogram,
    b: &Histogram,
) -> Result<TransportPlan> {
    round_plan(&kernel.plan(u, v), a, b)
}

/// Hilbert projective metric `max_ij log(u_i u'_j / (u_j u'_i))`.
pub fn hilbert_metric(u: &Array1<f64>, u2: &Array1<f64>) -> Result<f64> {
    if u.len() != u2.len() {
        return Err(Error::Shape {
            expected: vec![u.len()],
            got: vec![u2.len()],
        });
    }
    if u.iter().chain(u2.iter()).any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("entries must be strictly positive".into()));
    }
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for (x, y) in u.iter().zip(u2.iter()) {
        let r = x.ln() - y.ln();
        hi = hi.max(r);
        lo = lo.min(r);
    }
    Ok(hi - lo)
}

/// Birkhoff contraction ratio `(sqrt(eta) - 1) / (sqrt(eta) + 1)` with
/// `eta = max K_ik K_jl / (K_jk K_il)`.
pub fn contraction_factor(kernel: &Array2<f64>) -> Result<f64> {
    if kernel.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("kernel entries must be strictly positive".into()));
    }
    Ok(contraction_from_log(&kernel.mapv(f64::ln)))
}

/// Same as [`contraction_factor`] for `K = exp(-C / eps)`, without forming `K`.
pub fn contraction_factor_from_cost(cost: &CostMatrix, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(contraction_from_log(&cost.entries().mapv(|c| -c / epsilon)))
}

fn contraction_from_log(l: &Array2<f64>) -> f64 {
    let (n, m) = l.dim();
    let mut log_eta = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let mut best_k = f64::NEG_INFINITY;
            let mut best_l = f64::NEG_INFINITY;
            for k in 0..m {
                best_k = best_k.max(l[[i, k]] - l[[j, k]]);
                best_l = best_l.max(l[[j, k]] - l[[i, k]]);
            }
            log_eta = log_eta.max(best_k + best_l);
        }
    }
    // (sqrt(eta) - 1) / (sqrt(eta) + 1) = tanh(log(eta) / 4)
    (log_eta / 4.0).tanh()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornDivergences {
    /// `<C, P*>`.
    pub primal: f64,
    /// Dual objective at the converged potentials (equals the regularized cost).
    pub dual: f64,
    /// Dual objective after `L` iterations; a lower bound on the regularized cost.
    pub finite_dual_bound: f64,
    /// Shannon entropy of `P*`.
    pub entropy: f64,
    pub regularized_cost: f64,
    pub converged: bool,
}

/// Primal/dual Sinkhorn divergences; at convergence
/// `primal - dual = eps (entropy + 1)`.
pub fn sinkhorn_divergences(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    epsilon: f64,
    iterations: usize,
) -> Result<SinkhornDivergences> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }
    let full = sinkhorn_log(a, b, cost, epsilon, &SinkhornOptions::default())?;
    let partial = sinkhorn_log(a, b, cost, epsilon, &SinkhornOptions::fixed_iterations(iterations))?;
    Ok(SinkhornDivergences {
        primal: full.report.transport_cost,
        dual: full.report.dual_objective,
        finite_dual_bound: partial.report.dual_objective,
        entropy: full.report.entropy,
        regularized_cost: full.report.regularized_cost,
        converged: full.report.converged,
    })
}

/// Sinkhorn at `eps = accuracy / (4 log n)` with marginal tolerance
/// `accuracy / (8 max|C|)`, rounded onto `U(a, b)`; the rounded plan costs at
/// most `accuracy` above the exact optimum.
pub fn approximate_ot(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    accuracy: f64,
) -> Result<(TransportPlan, EntropicSolution)> {
    if !(accuracy > 0.0) {
        return Err(Error::InvalidArgument(format!("accuracy must be > 0, got {accuracy}")));
    }
    let n = a.len().max(b.len()).max(2) as f64;
    let eps = accuracy / (4.0 * n.ln());
    let opts = SinkhornOptions {
        tol: accuracy / (8.0 * cost.sup_norm().max(f64::MIN_POSITIVE)),
        ..Default::default()
    };
    let sol = solve_entropic(a, b, cost, eps, &opts)?;
    let rounded = round_plan(sol.plan.matrix(), a, b)?;
    Ok((rounded, sol))
}

/// Separable marginal penalty with a closed-form KL proximal map.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalPenalty {
    /// Marginal must equal the target.
    Equality(Array1<f64>),
    /// `strength * KL(p | target)`.
    Kl { target: Array1<f64>, strength: f64 },
    /// `<weights, p>`.
    Linear(Array1<f64>),
    /// `<weights, p>` subject to `p <= cap` entrywise.
    CappedLinear { weights: Array1<f64>, cap: f64 },
    /// `strength * sum p (log p - 1)`.
    NegEntropy { strength: f64 },
}

impl MarginalPenalty {
    fn len(&self) -> Option<usize> {
        match self {
            MarginalPenalty::Equality(t) | MarginalPenalty::Kl { target: t, .. } => Some(t.len()),
            MarginalPenalty::Linear(w) | MarginalPenalty::CappedLinear { weights: w, .. } => Some(w.len()),
            MarginalPenalty::NegEntropy { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            MarginalPenalty::Kl { strength, .. } | MarginalPenalty::NegEntropy { strength }
                if !(*strength > 0.0) =>
            {
                Err(Error::InvalidArgument(format!("penalty strength must be > 0, got {strength}")))
            }
            MarginalPenalty::CappedLinear { cap, .. } if !(*cap > 0.0) => {
                Err(Error::InvalidArgument(format!("cap must be > 0, got {cap}")))
            }
            MarginalPenalty::Equality(t) | MarginalPenalty::Kl { target: t, .. }
                if t.iter().any(|&x| !(x > 0.0)) =>
            {
                Err(Error::InvalidArgument("penalty targets must be strictly positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// New scaling `u = Prox(K v) / (K v)` given `kv = K v`.
    fn scaling(&self, kv: &Array1<f64>, eps: f64) -> Array1<f64> {
        match self {
            MarginalPenalty::Equality(t) => t / kv,
            MarginalPenalty::Kl { target, strength } => {
                let k = strength / (strength + eps);
                Array1::from_shape_fn(kv.len(), |i| (target[i] / kv[i]).powf(k))
            }
            MarginalPenalty::Linear(w) => w.mapv(|x| (-x / eps).exp()),
            MarginalPenalty::CappedLinear { weights, cap } => {
                Array1::from_shape_fn(kv.len(), |i| (-weights[i] / eps).exp().min(cap / kv[i]))
            }
            MarginalPenalty::NegEntropy { strength } => {
                let k = strength / (strength + eps);
                kv.mapv(|x| x.powf(-k))
            }
        }
    }

    /// New potential `f = eps log u` given `lse = log(K v)` in log form.
    fn potential(&self, lse: &Array1<f64>, eps: f64) -> Array1<f64> {
        match self {
            MarginalPenalty::Equality(t) => {
                Array1::from_shape_fn(lse.len(), |i| eps * (t[i].ln() - lse[i]))
            }
            MarginalPenalty::Kl { target, strength } => {
                let k = strength / (strength + eps);
                Array1::from_shape_fn(lse.len(), |i| k * eps * (target[i].ln() - lse[i]))
            }
            MarginalPenalty::Linear(w) => -w,
            MarginalPenalty::CappedLinear { weights, cap } => Array1::from_shape_fn(lse.len(), |i| {
                (-weights[i]).min(eps * (cap.ln() - lse[i]))
            }),
            MarginalPenalty::NegEntropy { strength } => {
                let k = strength / (strength + eps);
                lse.mapv(|x| -k * eps * x)
            }
        }
    }

    /// Penalty value at marginal `p` (equality and cap constraints are
    /// reported as 0 when met within `tol`, infinite otherwise).
    pub fn evaluate(&self, p: &Array1<f64>, tol: f64) -> f64 {
        match self {
            MarginalPenalty::Equality(t) => {
                if (p - t).mapv(f64::abs).sum() <= tol {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            MarginalPenalty::Kl { target, strength } => strength * kl_divergence(p, target),
            MarginalPenalty::Linear(w) => w.dot(p),
            MarginalPenalty::CappedLinear { weights, cap } => {
                if p.iter().all(|&x| x <= cap * (1.0 + 1e-9)) {
                    weights.dot(p)
                } else {
                    f64::INFINITY
                }
            }
            MarginalPenalty::NegEntropy { strength } => {
                strength
                    * p.iter()
                        .map(|&x| if x > 0.0 { x * (x.ln() - 1.0) } else { 0.0 })
                        .sum::<f64>()
            }
        }
    }
}

/// Generalized KL `sum p log(p/q) - p + q`.
pub fn kl_divergence(p: &Array1<f64>, q: &Array1<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&x, &y)| {
            if x == 0.0 {
                y
            } else if y == 0.0 {
                f64::INFINITY
            } else {
                x * (x / y).ln() - x + y
            }
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct GeneralizedSolution {
    pub duals: DualPair,
    pub plan: TransportPlan,
    /// `<C, P> + F(P 1) + G(P^T 1)`.
    pub value: f64,
    /// `value - eps * sum P (1 - log P)`.
    pub regularized_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log_domain: bool,
}

/// Sinkhorn with marginal penalties: `u = Prox_F(K v) / K v`,
/// `v = Prox_G(K^T u) / K^T u`. Stops when the largest change of
/// `log u`, `log v` falls below `opts.tol`; switches to the log domain when
/// the scaling form underflows.
pub fn generalized_sinkhorn(
    row_penalty: &MarginalPenalty,
    col_penalty: &MarginalPenalty,
    cost: &CostMatrix,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<GeneralizedSolution> {
    check_epsilon(epsilon)?;
    let (n, m) = cost.shape();
    row_penalty.validate()?;
    col_penalty.validate()?;
    for (p, len) in [(row_penalty, n), (col_penalty, m)] {
        if let Some(l) = p.len() {
            if l != len {
                return Err(Error::Shape {
                    expected: vec![len],
                    got: vec![l],
                });
            }
        }
    }
    if !prefers_log_domain(cost.sup_norm(), epsilon) {
        if let Some(sol) = generalized_scaling(row_penalty, col_penalty, cost, epsilon, opts) {
            return Ok(sol);
        }
    }
    Ok(generalized_log(row_penalty, col_penalty, cost, epsilon, opts))
}

fn generalized_scaling(
    fp: &MarginalPenalty,
    gp: &MarginalPenalty,
    cost: &CostMatrix,
    eps: f64,
    opts: &SinkhornOptions,
) -> Option<GeneralizedSolution> {
    let kernel = GibbsKernel::new(cost, eps).ok()?;
    let k = &kernel.matrix;
    let (n, m) = k.dim();
    let limit = opts.limit(cost.sup_norm(), eps);
    let bad = |x: &Array1<f64>| x.iter().any(|&y| !(y > 0.0) || !y.is_finite());
    let mut u = Array1::<f64>::ones(n);
    let mut v = Array1::<f64>::ones(m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < limit {
        let kv = k.dot(&v);
        if bad(&kv) {
            return None;
        }
        let u_new = fp.scaling(&kv, eps);
        let ktu = k.t().dot(&u_new);
        if bad(&u_new) || bad(&ktu) {
            return None;
        }
        let v_new = gp.scaling(&ktu, eps);
        if bad(&v_new) {
            return None;
        }
        let change = log_change(&u, &u_new).max(log_change(&v, &v_new));
        u = u_new;
        v = v_new;
        iterations += 1;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let plan = kernel.plan(&u, &v);
    let duals = Scalings { u, v, epsilon: eps }.to_duals();
    Some(finish_generalized(fp, gp, cost, eps, plan, None, duals, iterations, converged, false))
}

fn log_change(x: &Array1<f64>, y: &Array1<f64>) -> f64 {
    x.iter().zip(y.iter()).fold(0.0, |m, (p, q)| m.max((p.ln() - q.ln()).abs()))
}

fn generalized_log(
    fp: &MarginalPenalty,
    gp: &MarginalPenalty,
    cost: &CostMatrix,
    eps: f64,
    opts: &SinkhornOptions,
) -> GeneralizedSolution {
    let c = cost.entries();
    let (n, m) = c.dim();
    let limit = opts.limit(cost.sup_norm(), eps);
    let mut f = Array1::<f64>::zeros(n);
    let mut g = Array1::<f64>::zeros(m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < limit {
        let lse_r = Array1::from_shape_fn(n, |i| {
            logsumexp(c.row(i).iter().zip(g.iter()).map(|(&cij, &gj)| (gj - cij) / eps))
        });
        let f_new = fp.potential(&lse_r, eps);
        let lse_c = Array1::from_shape_fn(m, |j| {
            logsumexp(c.column(j).iter().zip(f_new.iter()).map(|(&cij, &fi)| (fi - cij) / eps))
        });
        let g_new = gp.potential(&lse_c, eps);
        let change = (&f_new - &f)
            .iter()
            .chain((&g_new - &g).iter())
            .fold(0.0_f64, |mx, d| mx.max(d.abs()))
            / eps;
        f = f_new;
        g = g_new;
        iterations += 1;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let log_plan = Array2::from_shape_fn((n, m), |(i, j)| (f[i] + g[j] - c[[i, j]]) / eps);
    let plan = log_plan.mapv(f64::exp);
    finish_generalized(
        fp,
        gp,
        cost,
        eps,
        plan,
        Some(&log_plan),
        DualPair::new(f, g),
        iterations,
        converged,
        true,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_generalized(
    fp: &MarginalPenalty,
    gp: &MarginalPenalty,
    cost: &CostMatrix,
    eps: f64,
    plan: Array2<f64>,
    log_plan: Option<&Array2<f64>>,
    duals: DualPair,
    iterations: usize,
    converged: bool,
    log_domain: bool,
) -> GeneralizedSolution {
    let transport = (&plan * cost.entries()).sum();
    let tol = 1e-6 * (1.0 + plan.sum());
    let value = transport
        + fp.evaluate(&plan.sum_axis(Axis(1)), tol)
        + gp.evaluate(&plan.sum_axis(Axis(0)), tol);
    let ent = match log_plan {
        Some(lp) => -plan
            .iter()
            .zip(lp.iter())
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &l)| p * l)
            .sum::<f64>(),
        None => entropy(&plan),
    };
    let regularized_value = value - eps * (ent + plan.sum());
    GeneralizedSolution {
        duals,
        plan: TransportPlan::new(plan, tol),
        value,
        regularized_value,
        iterations,
        converged,
        log_domain,
    }
}

/// Proximal-point refinement: step `l` solves entropic OT with kernel
/// `exp(-C / eps) * P^(l)` (entrywise), starting from `P^(0) = 1`; the
/// iterate matches plain entropic OT at `eps / l`.
pub fn proximal_point(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    epsilon: f64,
    steps: usize,
    opts: &SinkhornOptions,
) -> Result<Vec<TransportPlan>> {
    check_problem(a, b, cost, epsilon)?;
    let c = cost.entries();
    let mut shifted = c.clone();
    let mut plans = Vec::with_capacity(steps);
    for _ in 0..steps {
        // Cost of the current step: C - eps log P^(l), always >= C.
        let step_cost = CostMatrix::new(shifted.clone())?;
        let limit = opts.limit(cost.sup_norm(), epsilon);
        let sol = sinkhorn_log(a, b, &step_cost, epsilon, opts)?;
        if !sol.report.converged {
            return Err(Error::IterationLimit {
                limit,
                objective: sol.report.dual_objective,
            });
        }
        // -eps log P^(l+1) = C_l - f - g
        let f = &sol.duals.f;
        let g = &sol.duals.g;
        for ((i, j), x) in shifted.indexed_iter_mut() {
            *x = c[[i, j]] + (*x - f[i] - g[j]).max(0.0);
        }
        plans.push(sol.plan);
    }
    Ok(plans)
}

/// Independent Sinkhorn solves sharing one kernel, one per column of `a_cols`
/// and `b_cols`. Each entry carries its own error (e.g. underflow).
pub fn batched_sinkhorn(
    a_cols: &Array2<f64>,
    b_cols: &Array2<f64>,
    cost: &CostMatrix,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<Vec<Result<EntropicSolution>>> {
    let (n, m) = cost.shape();
    if a_cols.nrows() != n || b_cols.nrows() != m || a_cols.ncols() != b_cols.ncols() {
        return Err(Error::Shape {
            expected: vec![n, m, a_cols.ncols()],
            got: vec![a_cols.nrows(), b_cols.nrows(), b_cols.ncols()],
        });
    }
    let kernel = GibbsKernel::new(cost, epsilon)?;
    Ok((0..a_cols.ncols())
        .map(|s| {
            let a = Histogram::mass(a_cols.column(s).to_owned())?;
            let b = Histogram::mass(b_cols.column(s).to_owned())?;
            check_problem(&a, &b, cost, epsilon)?;
            sinkhorn_with_kernel(&a, &b, cost, &kernel, opts)
        })
        .collect())
}

/// Applies `K = K^1 (x) ... (x) K^d` to a tensor of shape `(n_1, ..., n_d)`
/// one axis at a time; `factors[k]` is `n_k x n_k`. Matches the dense
/// Kronecker product acting on the row-major flattening.
pub fn apply_separable_kernel(factors: &[Array2<f64>], tensor: &ArrayD<f64>) -> Result<ArrayD<f64>> {
    if factors.len() != tensor.ndim() {
        return Err(Error::Dimension(format!(
            "{} factors for a {}-d tensor",
            factors.len(),
            tensor.ndim()
        )));
    }
    let mut out = tensor.clone();
    for (axis, k) in factors.iter().enumerate() {
        let len = out.shape()[axis];
        if k.dim() != (len, len) {
            return Err(Error::Shape {
                expected: vec![len, len],
                got: vec![k.nrows(), k.ncols()],
            });
        }
        let mut next = ArrayD::<f64>::zeros(out.raw_dim());
        for (src, mut dst) in out.lanes(Axis(axis)).into_iter().zip(next.lanes_mut(Axis(axis))) {
            dst.assign(&k.dot(&src));
        }
        out = next;
    }
    Ok(out)
}

/// Dense Kronecker product of the factors (row-major index order).
pub fn separable_to_dense(factors: &[Array2<f64>]) -> Array2<f64> {
    let mut dense = Array2::<f64>::ones((1, 1));
    for k in factors {
        let (p, q) = (dense.nrows(), k.nrows());
        dense = Array2::from_shape_fn((p * q, p * q), |(r, c)| {
            dense[[r / q, c / q]] * k[[r % q, c % q]]
        });
    }
    dense
}

/// Gibbs factors `exp(-|x_i - x_j|^2 / eps)` on each axis of a tensor grid.
pub fn grid_gibbs_factors(axes: &[Vec<f64>], epsilon: f64) -> Result<Vec<Array2<f64>>> {
    check_epsilon(epsilon)?;
    Ok(axes
        .iter()
        .map(|x| {
            Array2::from_shape_fn((x.len(), x.len()), |(i, j)| {
                (-(x[i] - x[j]).powi(2) / epsilon).exp()
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_atom_one_iteration() {
        let a = Histogram::probability(array![1.0]).unwrap();
        let c = CostMatrix::new(array![[2.0]]).unwrap();
        let s = sinkhorn(&a, &a, &c, 0.5, &SinkhornOptions::default()).unwrap();
        assert_eq!(s.report.iterations, 1);
        assert!((s.plan.matrix()[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn soft_min_approaches_min() {
        let z = [0.3, -1.2, 4.0, -1.1];
        let mut prev = f64::NEG_INFINITY;
        for eps in [1.0, 0.1, 0.01, 0.001] {
            let s = soft_min(&z, eps);
            assert!(s <= -1.2 + 1e-15);
            assert!(s >= prev);
            prev = s;
        }
        assert!((prev + 1.2).abs() < 1e-3);
    }

    #[test]
    fn hilbert_projective() {
        let u = array![1.0, 2.0, 3.0];
        assert!(hilbert_metric(&u, &(&u * 7.5)).unwrap().abs() < 1e-15);
        assert!(hilbert_metric(&u, &array![1.0, 0.0, 1.0]).is_err());
        assert_eq!(contraction_factor(&Array2::from_elem((3, 4), 0.2)).unwrap(), 0.0);
    }

    #[test]
    fn rounding_keeps_feasible_plans() {
        let a = Histogram::probability(array![0.4, 0.6]).unwrap();
        let b = Histogram::probability(array![0.5, 0.5]).unwrap();
        let p = array![[0.2, 0.2], [0.3, 0.3]];
        let r = round_plan(&p, &a, &b).unwrap();
        assert_eq!(r.matrix(), &p);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&array![0.5, 0.5], &array![0.5, 0.5]), 0.0);
        assert_eq!(kl_divergence(&array![1.0], &array![0.0]), f64::INFINITY);
        assert_eq!(kl_divergence(&array![0.0], &array![2.0]), 2.0);
    }
}
