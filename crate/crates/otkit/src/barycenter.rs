//! Wasserstein barycenters: entropic barycenters on a fixed support, 1-D
//! quantile barycenters, Gaussian barycenters and sliced barycenters of
//! point clouds.

use ndarray::{Array1, Array2};

use crate::closed_form::{bures_squared, Gaussian, Quantile1D};
use crate::linalg::{logsumexp, sqrtm_psd, sym_apply};
use crate::measure::marginal_residuals;
use crate::tolerances::PROBABILITY_SUM;
use crate::weak_losses::{default_direction_count, sliced_energy_and_gradient, sphere_directions};
use crate::{CostMatrix, DiscreteMeasure, Error, Histogram, Result, TransportPlan};

/// Checks that `lambda` is a probability vector of length `count`.
fn check_lambda(lambda: &[f64], count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidArgument("at least one input is required".into()));
    }
    if lambda.len() != count {
        return Err(Error::Shape {
            expected: vec![count],
            got: vec![lambda.len()],
        });
    }
    if lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument("barycenter weights must be nonnegative".into()));
    }
    let total: f64 = lambda.iter().sum();
    if (total - 1.0).abs() > PROBABILITY_SUM {
        return Err(Error::InvalidArgument(format!("barycenter weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Uniform barycenter weights `1 / count`.
pub fn uniform_weights(count: usize) -> Vec<f64> {
    vec![1.0 / count as f64; count]
}

/// Inputs `b_s` with costs `C_s` (`n x n_s`) from the common support of the
/// barycenter, weights `lambda` and regularization `epsilon`.
#[derive(Debug, Clone)]
pub struct BarycenterProblem {
    inputs: Vec<Histogram>,
    costs: Vec<CostMatrix>,
    lambda: Vec<f64>,
    epsilon: f64,
}

impl BarycenterProblem {
    pub fn new(inputs: Vec<Histogram>, costs: Vec<CostMatrix>, lambda: Vec<f64>, epsilon: f64) -> Result<Self> {
        check_lambda(&lambda, inputs.len())?;
        if costs.len() != inputs.len() {
            return Err(Error::Shape {
                expected: vec![inputs.len()],
                got: vec![costs.len()],
            });
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
        }
        let n = costs[0].shape().0;
        for (b, c) in inputs.iter().zip(&costs) {
            if c.shape() != (n, b.len()) {
                return Err(Error::Shape {
                    expected: vec![n, b.len()],
                    got: vec![c.shape().0, c.shape().1],
                });
            }
        }
        let t0 = inputs[0].total();
        for b in &inputs {
            if (b.total() - t0).abs() > PROBABILITY_SUM {
                return Err(Error::MassMismatch(t0, b.total()));
            }
        }
        Ok(BarycenterProblem {
            inputs,
            costs,
            lambda,
            epsilon,
        })
    }

    /// All inputs share one cost matrix.
    pub fn shared_cost(inputs: Vec<Histogram>, cost: CostMatrix, lambda: Vec<f64>, epsilon: f64) -> Result<Self> {
        let costs = vec![cost; inputs.len()];
        Self::new(inputs, costs, lambda, epsilon)
    }

    pub fn inputs(&self) -> &[Histogram] {
        &self.inputs
    }

    pub fn costs(&self) -> &[CostMatrix] {
        &self.costs
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Size of the barycenter support.
    pub fn support_len(&self) -> usize {
        self.costs[0].shape().0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycenterOptions {
    /// Stop once every row marginal is within `tol` (l1) of their mean.
    pub tol: f64,
    pub max_cycles: usize,
}

impl Default for BarycenterOptions {
    fn default() -> Self {
        BarycenterOptions {
            tol: 1e-8,
            max_cycles: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterReport {
    pub cycles: usize,
    /// Largest l1 distance between a plan's row marginal and the barycenter.
    pub marginal_disagreement: f64,
    /// Largest l1 column-marginal violation over the plans.
    pub column_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct EntropicBarycenter {
    pub barycenter: Histogram,
    pub plans: Vec<TransportPlan>,
    pub report: BarycenterReport,
}

/// Entropic barycenter by iterative KL projections in the log domain.
///
/// A cycle sets `v_s = b_s / K_s^T u_s`, then `a = prod_s (K_s v_s)^lambda_s`
/// (the exponential of the weighted mean of logs) and `u_s = a / K_s v_s`.
/// The returned barycenter is the weighted mean of the plans' row marginals,
/// taken after the column update so every plan matches its input exactly.
pub fn entropic_barycenter(problem: &BarycenterProblem, opts: &BarycenterOptions) -> Result<EntropicBarycenter> {
    let eps = problem.epsilon;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {eps}")));
    }
    let n = problem.support_len();
    let count = problem.inputs.len();
    let log_b: Vec<Array1<f64>> = problem.inputs.iter().map(|b| b.weights().mapv(f64::ln)).collect();
    let mut f: Vec<Array1<f64>> = vec![Array1::zeros(n); count];
    let mut g: Vec<Array1<f64>> = problem.inputs.iter().map(|b| Array1::zeros(b.len())).collect();
    // log (K_s v_s) per input.
    let mut log_kv: Vec<Array1<f64>> = vec![Array1::zeros(n); count];
    let mut cycles = 0;
    let mut disagreement = f64::INFINITY;
    let mut mean_row = Array1::zeros(n);
    while cycles < opts.max_cycles {
        for s in 0..count {
            let c = problem.costs[s].entries();
            g[s] = Array1::from_shape_fn(c.ncols(), |j| {
                let lse = logsumexp(c.column(j).iter().zip(f[s].iter()).map(|(&cij, &fi)| (fi - cij) / eps));
                eps * (log_b[s][j] - lse)
            });
            log_kv[s] = Array1::from_shape_fn(n, |i| {
                logsumexp(c.row(i).iter().zip(g[s].iter()).map(|(&cij, &gj)| (gj - cij) / eps))
            });
        }
        cycles += 1;
        let rows: Vec<Array1<f64>> = (0..count)
            .map(|s| Array1::from_shape_fn(n, |i| (f[s][i] / eps + log_kv[s][i]).exp()))
            .collect();
        mean_row = weighted_mean(&rows, &problem.lambda);
        disagreement = rows
            .iter()
            .map(|r| (r - &mean_row).mapv(f64::abs).sum())
            .fold(0.0, f64::max);
        if !disagreement.is_finite() {
            return Err(Error::Diverged);
        }
        if disagreement < opts.tol {
            break;
        }
        let log_a = Array1::from_shape_fn(n, |i| {
            (0..count)
                .filter(|&s| problem.lambda[s] > 0.0)
                .map(|s| problem.lambda[s] * log_kv[s][i])
                .sum::<f64>()
        });
        for s in 0..count {
            f[s] = eps * (&log_a - &log_kv[s]);
        }
    }
    let plans: Vec<TransportPlan> = (0..count)
        .map(|s| {
            let c = problem.costs[s].entries();
            let p = Array2::from_shape_fn(c.dim(), |(i, j)| ((f[s][i] + g[s][j] - c[[i, j]]) / eps).exp());
            TransportPlan::new(p, opts.tol)
        })
        .collect();
    let column_residual = plans
        .iter()
        .zip(&problem.inputs)
        .map(|(p, b)| (p.col_marginal() - b.weights()).mapv(f64::abs).sum())
        .fold(0.0, f64::max);
    let barycenter = Histogram::mass(mean_row)?;
    Ok(EntropicBarycenter {
        barycenter,
        plans,
        report: BarycenterReport {
            cycles,
            marginal_disagreement: disagreement,
            column_residual,
            converged: disagreement < opts.tol,
        },
    })
}

fn weighted_mean(rows: &[Array1<f64>], lambda: &[f64]) -> Array1<f64> {
    let mut out = Array1::zeros(rows[0].len());
    for (r, &l) in rows.iter().zip(lambda) {
        out.scaled_add(l, r);
    }
    out
}

/// Weighted Frechet objective `sum_s lambda_s W(a, b_s)` from the plans of a
/// barycenter solve, evaluated with the transport part `<C_s, P_s>`.
pub fn barycenter_transport_cost(problem: &BarycenterProblem, plans: &[TransportPlan]) -> f64 {
    plans
        .iter()
        .zip(&problem.costs)
        .zip(&problem.lambda)
        .map(|((p, c), &l)| l * p.cost(c))
        .sum()
}

/// Minimizer of `z -> sum_s lambda_s |z - x_s|^p`.
fn weighted_p_center(xs: &[f64], lambda: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        return xs.iter().zip(lambda).map(|(x, l)| x * l).sum();
    }
    if p == 1.0 {
        let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(lambda.iter().copied()).collect();
        pairs.sort_by(|u, v| u.0.total_cmp(&v.0));
        let mut acc = 0.0;
        for (x, l) in &pairs {
            acc += l;
            if acc >= 0.5 - 1e-15 {
                return *x;
            }
        }
        return pairs.last().unwrap().0;
    }
    // Strictly convex for p > 1: bisect on the sign of the derivative.
    let slope = |z: f64| -> f64 {
        xs.iter()
            .zip(lambda)
            .map(|(&x, &l)| l * p * (z - x).signum() * (z - x).abs().powf(p - 1.0))
            .sum()
    };
    let mut lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Barycenter of 1-D measures: on each interval of the merged cumulative
/// breakpoints the input quantiles are constant, and the output quantile is
/// their weighted `p`-center (the weighted average for `p = 2`).
pub fn barycenter_1d(inputs: &[DiscreteMeasure], lambda: &[f64], p: f64) -> Result<DiscreteMeasure> {
    check_lambda(lambda, inputs.len())?;
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    let quantiles = inputs.iter().map(Quantile1D::new).collect::<Result<Vec<_>>>()?;
    let total = quantiles[0].total();
    for q in &quantiles {
        if (q.total() - total).abs() > PROBABILITY_SUM {
            return Err(Error::MassMismatch(total, q.total()));
        }
    }
    let mut breaks: Vec<f64> = quantiles.iter().flat_map(|q| q.cumulative().iter().copied()).collect();
    breaks.push(0.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut positions: Vec<f64> = Vec::new();
    let mut masses: Vec<f64> = Vec::new();
    let mut xs = vec![0.0; quantiles.len()];
    for w in breaks.windows(2) {
        let width = w[1].min(total) - w[0];
        if width <= 0.0 {
            continue;
        }
        let r = 0.5 * (w[0] + w[1].min(total));
        for (x, q) in xs.iter_mut().zip(&quantiles) {
            *x = q.quantile(r);
        }
        let z = weighted_p_center(&xs, lambda, p);
        if positions.last() == Some(&z) {
            *masses.last_mut().unwrap() += width;
        } else {
            positions.push(z);
            masses.push(width);
        }
    }
    let weights = Histogram::mass(Array1::from(masses))?;
    DiscreteMeasure::on_line(&positions, weights)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBarycenterOptions {
    pub max_iter: usize,
    /// Exit once `|Psi(S) - S|_F <= tol`.
    pub tol: f64,
    /// Use `S^-1/2 (sum_s lambda_s (S^1/2 S_s S^1/2)^1/2)^2 S^-1/2` instead of
    /// the plain map.
    pub alternate_map: bool,
}

impl Default for GaussianBarycenterOptions {
    fn default() -> Self {
        GaussianBarycenterOptions {
            max_iter: 1000,
            tol: 1e-10,
            alternate_map: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianBarycenter {
    pub gaussian: Gaussian,
    pub iterations: usize,
    /// `|Psi(S) - S|_F` at the last iteration.
    pub residual: f64,
    /// `sum_s lambda_s B(S, S_s)^2` at the start and after every iteration.
    pub objective_trace: Vec<f64>,
}

/// Barycenter of Gaussians: mean `sum_s lambda_s m_s`, covariance the fixed
/// point of `Psi(S) = sum_s lambda_s (S^1/2 S_s S^1/2)^1/2`, started from the
/// weighted mean of the covariances.
pub fn gaussian_barycenter(
    inputs: &[Gaussian],
    lambda: &[f64],
    opts: &GaussianBarycenterOptions,
) -> Result<GaussianBarycenter> {
    check_lambda(lambda, inputs.len())?;
    let d = inputs[0].dim();
    if inputs.iter().any(|g| g.dim() != d) {
        return Err(Error::Dimension("all Gaussians must share one dimension".into()));
    }
    let mut mean = Array1::zeros(d);
    let mut cov = Array2::zeros((d, d));
    for (g, &l) in inputs.iter().zip(lambda) {
        mean.scaled_add(l, g.mean());
        cov.scaled_add(l, g.covariance());
    }
    let objective = |s: &Array2<f64>| -> f64 {
        inputs
            .iter()
            .zip(lambda)
            .map(|(g, &l)| l * bures_squared(s, g.covariance()))
            .sum()
    };
    let mut trace = vec![objective(&cov)];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let root = sqrtm_psd(&cov);
        let mut psi = Array2::zeros((d, d));
        for (g, &l) in inputs.iter().zip(lambda) {
            psi.scaled_add(l, &sqrtm_psd(&root.dot(g.covariance()).dot(&root)));
        }
        let next = if opts.alternate_map {
            let inv_root = sym_apply(&cov, |x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 });
            inv_root.dot(&psi).dot(&psi).dot(&inv_root)
        } else {
            psi
        };
        let next = 0.5 * (&next + &next.t());
        residual = (&next - &cov).mapv(|x| x * x).sum().sqrt();
        cov = next;
        iterations += 1;
        trace.push(objective(&cov));
        if !residual.is_finite() {
            return Err(Error::Diverged);
        }
        if residual <= opts.tol {
            break;
        }
    }
    if residual > opts.tol {
        return Err(Error::IterationLimit {
            limit: opts.max_iter,
            objective: *trace.last().unwrap(),
        });
    }
    Ok(GaussianBarycenter {
        gaussian: Gaussian::new(mean, cov)?,
        iterations,
        residual,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicedBarycenterOptions {
    pub steps: usize,
    /// `None` selects `64 d` directions.
    pub directions: Option<usize>,
    pub seed: u64,
    /// Initial step, in units of the inverse curvature `n d / 2`.
    pub step_size: f64,
}

impl SlicedBarycenterOptions {
    pub fn new(steps: usize, seed: u64) -> Self {
        SlicedBarycenterOptions {
            steps,
            directions: None,
            seed,
            step_size: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SlicedBarycenter {
    pub points: Array2<f64>,
    /// `sum_s lambda_s SW(x, beta_s)^2` at the start and after every step.
    pub objective_trace: Vec<f64>,
}

/// Gradient descent on the atom positions of a uniform cloud, minimizing
/// `sum_s lambda_s SW(x, beta_s)^2` over a fixed seeded set of directions.
/// Starts from the first input.
pub fn sliced_barycenter(
    clouds: &[Array2<f64>],
    lambda: &[f64],
    opts: &SlicedBarycenterOptions,
) -> Result<SlicedBarycenter> {
    let first = clouds
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one input is required".into()))?;
    sliced_barycenter_from(first.clone(), clouds, lambda, opts)
}

/// [`sliced_barycenter`] from a given initial cloud. The step is halved
/// whenever the objective would increase.
pub fn sliced_barycenter_from(
    init: Array2<f64>,
    clouds: &[Array2<f64>],
    lambda: &[f64],
    opts: &SlicedBarycenterOptions,
) -> Result<SlicedBarycenter> {
    check_lambda(lambda, clouds.len())?;
    let (n, d) = init.dim();
    for c in clouds {
        if c.dim() != (n, d) {
            return Err(Error::Shape {
                expected: vec![n, d],
                got: vec![c.nrows(), c.ncols()],
            });
        }
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("clouds must be nonempty".into()));
    }
    if !(opts.step_size > 0.0) {
        return Err(Error::InvalidArgument("step size must be > 0".into()));
    }
    let dirs = sphere_directions(d, opts.directions.unwrap_or_else(|| default_direction_count(d)), opts.seed)?;
    let evaluate = |x: &Array2<f64>| -> Result<(f64, Array2<f64>)> {
        let mut energy = 0.0;
        let mut grad = Array2::zeros((n, d));
        for (c, &l) in clouds.iter().zip(lambda) {
            if l > 0.0 {
                let (e, gr) = sliced_energy_and_gradient(x, c, &dirs)?;
                energy += l * e;
                grad.scaled_add(l, &gr);
            }
        }
        Ok((energy, grad))
    };
    let scale = 0.5 * (n * d) as f64;
    let mut points = init;
    let (mut energy, mut grad) = evaluate(&points)?;
    let mut trace = vec![energy];
    let mut step = opts.step_size;
    for _ in 0..opts.steps {
        let mut accepted = false;
        while step > 1e-12 {
            let trial = &points - &(scale * step * &grad);
            let (e, g) = evaluate(&trial)?;
            if e <= energy {
                points = trial;
                energy = e;
                grad = g;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(energy);
        if !accepted {
            break;
        }
    }
    Ok(SlicedBarycenter {
        points,
        objective_trace: trace,
    })
}

/// l1 marginal violations of every plan against `(a, b_s)`.
pub fn barycenter_residuals(a: &Histogram, problem: &BarycenterProblem, plans: &[TransportPlan]) -> Vec<f64> {
    plans
        .iter()
        .zip(&problem.inputs)
        .map(|(p, b)| marginal_residuals(p.matrix(), a.weights(), b.weights()).total())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p_center_matches_definitions() {
        let xs = [0.0, 1.0, 4.0];
        let l = [0.2, 0.3, 0.5];
        assert!((weighted_p_center(&xs, &l, 2.0) - 2.3).abs() < 1e-15);
        assert_eq!(weighted_p_center(&xs, &l, 1.0), 1.0);
        let z = weighted_p_center(&xs, &l, 3.0);
        let h = |z: f64| xs.iter().zip(&l).map(|(x, w)| w * (z - x).abs().powi(3)).sum::<f64>();
        assert!(h(z) <= h(z + 1e-6) && h(z) <= h(z - 1e-6));
    }

    #[test]
    fn lambda_validation() {
        assert!(check_lambda(&[0.5, 0.5], 2).is_ok());
        assert!(check_lambda(&[0.5, 0.6], 2).is_err());
        assert!(check_lambda(&[1.5, -0.5], 2).is_err());
        assert!(check_lambda(&[1.0], 2).is_err());
        assert!(check_lambda(&[], 0).is_err());
    }
}
