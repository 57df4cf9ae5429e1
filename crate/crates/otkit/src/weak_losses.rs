//! Discrepancies that are not (or not only) optimal transport: phi-divergences,
//! kernel norms, sliced Wasserstein, the debiased entropic divergence, the
//! non-Hilbertian counterexample and entropic Gromov–Wasserstein.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::closed_form::w_p_1d_pow;
use crate::entropic::{round_plan, sinkhorn_log_warm, solve_entropic, SinkhornOptions};
use crate::exact_lp::network_simplex;
use crate::linalg::max_eigenvalue;
use crate::{build_cost, CostMatrix, DiscreteMeasure, Error, Histogram, Result, TransportPlan};

/// Convex `phi` with `phi(1) = 0` defining `sum_j phi(a_j / b_j) b_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyFunction {
    /// `s log s - s + 1`.
    Kl,
    /// `|s - 1|`.
    Tv,
    /// `(sqrt(s) - 1)^2`.
    Hellinger,
    /// `(s - 1)^2`.
    Chi2,
    /// Squared Jensen–Shannon distance `(KL(a|m) + KL(b|m)) / 2`, `m = (a + b) / 2`.
    Js,
}

impl EntropyFunction {
    pub fn phi(&self, s: f64) -> f64 {
        if s < 0.0 {
            return f64::INFINITY;
        }
        match self {
            EntropyFunction::Kl => xlogx(s) - s + 1.0,
            EntropyFunction::Tv => (s - 1.0).abs(),
            EntropyFunction::Hellinger => (s.sqrt() - 1.0).powi(2),
            EntropyFunction::Chi2 => (s - 1.0).powi(2),
            EntropyFunction::Js => 0.5 * (xlogx(s) - (s + 1.0) * ((s + 1.0) / 2.0).ln()),
        }
    }

    /// `lim_{s -> inf} phi(s) / s`.
    pub fn recession_slope(&self) -> f64 {
        match self {
            EntropyFunction::Kl | EntropyFunction::Chi2 => f64::INFINITY,
            EntropyFunction::Tv | EntropyFunction::Hellinger => 1.0,
            EntropyFunction::Js => 0.5 * std::f64::consts::LN_2,
        }
    }
}

fn xlogx(s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s * s.ln()
    }
}

/// `sum_{b_j > 0} phi(a_j / b_j) b_j + phi'_inf sum_{b_j = 0} a_j`; may be `+inf`.
pub fn phi_divergence(phi: EntropyFunction, a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: vec![a.len()],
            got: vec![b.len()],
        });
    }
    if phi == EntropyFunction::Js {
        let mid = Histogram::mass((a.weights() + b.weights()) * 0.5)?;
        return Ok(0.5
            * (phi_divergence(EntropyFunction::Kl, a, &mid)? + phi_divergence(EntropyFunction::Kl, b, &mid)?));
    }
    let slope = phi.recession_slope();
    let mut total = 0.0;
    for (&x, &y) in a.weights().iter().zip(b.weights()) {
        total += if y > 0.0 {
            phi.phi(x / y) * y
        } else if x > 0.0 {
            slope * x
        } else {
            0.0
        };
    }
    Ok(total)
}

/// Positive-definite (gaussian) or conditionally negative-definite (energy)
/// kernel on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `exp(-|x - y|^2 / (2 sigma^2))`.
    Gaussian { sigma: f64 },
    /// `-|x - y|^p`, valid for `0 < p < 2`.
    Energy { p: f64 },
}

impl Kernel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(Kernel::Gaussian { sigma })
    }

    pub fn energy(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "energy kernel needs 0 < p < 2, got {p}"
            )));
        }
        Ok(Kernel::Energy { p })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Gaussian { sigma } => Kernel::gaussian(sigma).map(|_| ()),
            Kernel::Energy { p } => Kernel::energy(p).map(|_| ()),
        }
    }

    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
        match *self {
            Kernel::Gaussian { sigma } => (-sq / (2.0 * sigma * sigma)).exp(),
            Kernel::Energy { p } => -sq.powf(p / 2.0),
        }
    }

    /// `sum_ij w_i v_j k(x_i, y_j)`, skipping `i = j` when `skip_diagonal`.
    fn pair_sum(&self, x: &Array2<f64>, w: &Array1<f64>, y: &Array2<f64>, v: &Array1<f64>, skip_diagonal: bool) -> f64 {
        let mut total = 0.0;
        let rows = |m: &Array2<f64>| -> Vec<Vec<f64>> { m.outer_iter().map(|r| r.to_vec()).collect() };
        let (xs, ys) = (rows(x), rows(y));
        for (i, xi) in xs.iter().enumerate() {
            for (j, yj) in ys.iter().enumerate() {
                if skip_diagonal && i == j {
                    continue;
                }
                total += w[i] * v[j] * self.evaluate(xi, yj);
            }
        }
        total
    }
}

fn same_dim(x: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!("{} vs {}", x.ncols(), y.ncols())));
    }
    Ok(())
}

/// Biased squared MMD between two weighted discrete measures.
pub fn mmd_squared(alpha: &DiscreteMeasure, beta: &DiscreteMeasure, kernel: Kernel) -> Result<f64> {
    kernel.validate()?;
    same_dim(alpha.points(), beta.points())?;
    let (x, a) = (alpha.points(), alpha.weights().weights());
    let (y, b) = (beta.points(), beta.weights().weights());
    Ok(kernel.pair_sum(x, a, x, a, false) + kernel.pair_sum(y, b, y, b, false)
        - 2.0 * kernel.pair_sum(x, a, y, b, false))
}

/// Unbiased squared MMD from two samples (rows are points).
pub fn mmd_unbiased(x: &Array2<f64>, y: &Array2<f64>, kernel: Kernel) -> Result<f64> {
    kernel.validate()?;
    same_dim(x, y)?;
    let (n, m) = (x.nrows(), y.nrows());
    if n < 2 || m < 2 {
        return Err(Error::InvalidArgument("need at least two samples on each side".into()));
    }
    let ones_n = Array1::ones(n);
    let ones_m = Array1::ones(m);
    let xx = kernel.pair_sum(x, &ones_n, x, &ones_n, true) / (n * (n - 1)) as f64;
    let yy = kernel.pair_sum(y, &ones_m, y, &ones_m, true) / (m * (m - 1)) as f64;
    let xy = kernel.pair_sum(x, &ones_n, y, &ones_m, false) / (n * m) as f64;
    Ok(xx + yy - 2.0 * xy)
}

/// Default direction count `64 d`.
pub fn default_direction_count(dim: usize) -> usize {
    64 * dim
}

/// `count` directions uniform on the unit sphere of `R^dim` (rows).
pub fn sphere_directions(dim: usize, count: usize, seed: u64) -> Result<Array2<f64>> {
    if dim == 0 || count == 0 {
        return Err(Error::InvalidArgument("need dim > 0 and at least one direction".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::<f64>::zeros((count, dim));
    for mut row in out.outer_iter_mut() {
        loop {
            row.iter_mut().for_each(|x: &mut f64| *x = StandardNormal.sample(&mut rng));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row /= norm;
                break;
            }
        }
    }
    Ok(out)
}

fn project(measure: &DiscreteMeasure, theta: ndarray::ArrayView1<f64>) -> Result<DiscreteMeasure> {
    let proj = measure.points().dot(&theta);
    DiscreteMeasure::on_line(proj.as_slice().expect("contiguous"), measure.weights().clone())
}

/// `(mean_theta W_p^p(theta # alpha, theta # beta))^(1/p)` over the given directions.
pub fn sliced_w_with_directions(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    p: f64,
    directions: &Array2<f64>,
) -> Result<f64> {
    same_dim(alpha.points(), beta.points())?;
    same_dim(alpha.points(), directions)?;
    let mut total = 0.0;
    for theta in directions.outer_iter() {
        total += w_p_1d_pow(&project(alpha, theta)?, &project(beta, theta)?, p)?;
    }
    Ok((total / directions.nrows() as f64).powf(1.0 / p))
}

/// Monte Carlo sliced Wasserstein distance with seeded sphere directions.
pub fn sliced_w(alpha: &DiscreteMeasure, beta: &DiscreteMeasure, p: f64, directions: usize, seed: u64) -> Result<f64> {
    let dirs = sphere_directions(alpha.dim(), directions, seed)?;
    sliced_w_with_directions(alpha, beta, p, &dirs)
}

/// Sliced energy `mean_theta W_2^2` between two uniform clouds of equal
/// size and its gradient with respect to the positions `x`.
pub fn sliced_energy_and_gradient(
    x: &Array2<f64>,
    y: &Array2<f64>,
    directions: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    same_dim(x, y)?;
    same_dim(x, directions)?;
    let n = x.nrows();
    if n == 0 || y.nrows() != n {
        return Err(Error::Shape {
            expected: vec![n, x.ncols()],
            got: vec![y.nrows(), y.ncols()],
        });
    }
    let l = directions.nrows() as f64;
    let mut energy = 0.0;
    let mut grad = Array2::zeros(x.raw_dim());
    for theta in directions.outer_iter() {
        let px = x.dot(&theta);
        let mut py = y.dot(&theta).to_vec();
        py.sort_by(f64::total_cmp);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| px[i].total_cmp(&px[j]).then(i.cmp(&j)));
        for (rank, &i) in order.iter().enumerate() {
            let diff = px[i] - py[rank];
            energy += diff * diff / (n as f64 * l);
            let mut row = grad.row_mut(i);
            row.scaled_add(2.0 * diff / (n as f64 * l), &theta);
        }
    }
    Ok((energy, grad))
}

/// Gradient of the seeded sliced energy with `directions` sphere directions.
pub fn sliced_w_gradient(x: &Array2<f64>, y: &Array2<f64>, directions: usize, seed: u64) -> Result<(f64, Array2<f64>)> {
    let dirs = sphere_directions(x.ncols(), directions, seed)?;
    sliced_energy_and_gradient(x, y, &dirs)
}

/// `2 W(alpha, beta) - W(alpha, alpha) - W(beta, beta)` with `W` the
/// transport cost `<C, P*>` of the entropic plan for `C = |x - y|^p`.
pub fn corrected_sinkhorn_divergence(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    p: f64,
    epsilon: f64,
) -> Result<f64> {
    let opts = SinkhornOptions::default();
    let w = |x: &DiscreteMeasure, y: &DiscreteMeasure| -> Result<f64> {
        let c = build_cost(x, y, p)?;
        Ok(solve_entropic(x.weights(), y.weights(), &c, epsilon, &opts)?.report.transport_cost)
    };
    Ok(2.0 * w(alpha, beta)? - w(alpha, alpha)? - w(beta, beta)?)
}

/// Largest eigenvalue of `J D^2 J` with `J` the centering matrix; it is
/// `<= 0` exactly when `D` embeds isometrically in a Hilbert space.
pub fn centered_max_eigenvalue(distances: &Array2<f64>) -> Result<f64> {
    let n = distances.nrows();
    if distances.ncols() != n || n == 0 {
        return Err(Error::Shape {
            expected: vec![n, n],
            got: vec![distances.nrows(), distances.ncols()],
        });
    }
    let sq = distances.mapv(|d| d * d);
    let j = Array2::<f64>::eye(n) - Array2::from_elem((n, n), 1.0 / n as f64);
    Ok(max_eigenvalue(&j.dot(&sq).dot(&j)))
}

/// The 35 histograms on the corners of the unit square with entries in
/// `{0, 1/4, 1/2, 3/4, 1}`.
pub fn unit_square_grid_histograms() -> (Array2<f64>, Vec<Array1<f64>>) {
    let corners = ndarray::array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let mut out = Vec::new();
    for i in 0..=4usize {
        for j in 0..=4 - i {
            for k in 0..=4 - i - j {
                let l = 4 - i - j - k;
                out.push(Array1::from(vec![i as f64, j as f64, k as f64, l as f64]) / 4.0);
            }
        }
    }
    (corners, out)
}

/// Exact `W_p` between histograms on shared support points.
fn exact_w_p(points: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, p: f64) -> Result<f64> {
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let pick = |idx: &[usize], w: &Array1<f64>| -> Result<DiscreteMeasure> {
        DiscreteMeasure::new(
            points.select(Axis(0), idx),
            Histogram::probability(idx.iter().map(|&i| w[i]).collect::<Array1<f64>>())?,
        )
    };
    let (x, y) = (pick(&rows, a)?, pick(&cols, b)?);
    let cost = build_cost(&x, &y, p)?;
    Ok(network_simplex(x.weights(), y.weights(), &cost)?.value.max(0.0).powf(1.0 / p))
}

/// Largest eigenvalue of the centred squared `W_p` matrix of the 35
/// unit-square histograms; positive means `W_p` is not Hilbertian.
pub fn hilbertianity_counterexample(p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    let (corners, hists) = unit_square_grid_histograms();
    let n = hists.len();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let w = exact_w_p(&corners, &hists[i], &hists[j], p)?;
            d[[i, j]] = w;
            d[[j, i]] = w;
        }
    }
    centered_max_eigenvalue(&d)
}

/// Finite metric space with a probability histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMeasureSpace {
    distances: Array2<f64>,
    weights: Histogram,
}

impl MetricMeasureSpace {
    pub fn new(distances: Array2<f64>, weights: Histogram) -> Result<Self> {
        let n = weights.len();
        if distances.dim() != (n, n) {
            return Err(Error::Shape {
                expected: vec![n, n],
                got: distances.shape().to_vec(),
            });
        }
        for i in 0..n {
            if distances[[i, i]] != 0.0 {
                return Err(Error::InvalidArgument(format!("D[{i}, {i}] = {} is not 0", distances[[i, i]])));
            }
            for j in 0..n {
                let d = distances[[i, j]];
                if !(d >= 0.0) || !d.is_finite() || d != distances[[j, i]] {
                    return Err(Error::InvalidArgument(format!(
                        "D must be symmetric, finite and nonnegative (entry {i}, {j})"
                    )));
                }
            }
        }
        Ok(MetricMeasureSpace { distances, weights })
    }

    /// Euclidean distances between the rows of `points`.
    pub fn from_points(points: &Array2<f64>, weights: Histogram) -> Result<Self> {
        let n = points.nrows();
        let d = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                0.0
            } else {
                let diff = &points.row(i) - &points.row(j);
                diff.dot(&diff).sqrt()
            }
        });
        // Round-off makes the two triangles differ in the last bit.
        let sym = Array2::from_shape_fn((n, n), |(i, j)| if i <= j { d[[i, j]] } else { d[[j, i]] });
        MetricMeasureSpace::new(sym, weights)
    }

    pub fn distances(&self) -> &Array2<f64> {
        &self.distances
    }

    pub fn weights(&self) -> &Histogram {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `sum |D_ii' - D'_jj'|^2 P_ij P_i'j'`.
pub fn gw_energy(x: &MetricMeasureSpace, y: &MetricMeasureSpace, plan: &Array2<f64>) -> f64 {
    let r = plan.sum_axis(Axis(1));
    let c = plan.sum_axis(Axis(0));
    let d2 = x.distances.mapv(|v| v * v);
    let e2 = y.distances.mapv(|v| v * v);
    let cross = x.distances.dot(plan).dot(&y.distances);
    (r.dot(&d2.dot(&r)) + c.dot(&e2.dot(&c)) - 2.0 * (&cross * plan).sum()).max(0.0)
}

#[derive(Debug, Clone)]
pub struct GwSolution {
    pub energy: f64,
    pub plan: TransportPlan,
    /// Energy after each accepted outer step, starting with `a b^T`.
    pub energy_trace: Vec<f64>,
    /// Entropic steps that did not increase the energy.
    pub accepted_steps: usize,
    /// Exact linearized steps taken after the entropic loop.
    pub polish_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwOptions {
    pub epsilon: f64,
    pub outer_iters: usize,
    /// Sinkhorn iterations per linearized problem.
    pub inner_iters: usize,
    /// Finish with exact linearized steps (the `eps -> 0` limit of the same
    /// update), each accepted only if it lowers the energy.
    pub polish: bool,
    /// When set, the regularization starts at this value and decreases
    /// geometrically to `epsilon` over the first half of the outer budget.
    /// Defaults to `1e3 epsilon`.
    pub anneal_from: Option<f64>,
}

impl GwOptions {
    pub fn new(epsilon: f64, outer_iters: usize) -> Self {
        GwOptions {
            epsilon,
            outer_iters,
            inner_iters: 2000,
            polish: true,
            anneal_from: Some(1e3 * epsilon),
        }
    }
}

/// Smallest step tried before the outer loop stops.
const MIN_GW_STEP: f64 = 1.0 / 1024.0;

/// Entropic Gromov–Wasserstein with default [`GwOptions`].
pub fn entropic_gw(
    x: &MetricMeasureSpace,
    y: &MetricMeasureSpace,
    epsilon: f64,
    outer_iters: usize,
) -> Result<GwSolution> {
    entropic_gw_with(x, y, &GwOptions::new(epsilon, outer_iters))
}

/// Successive linearization from `P = a b^T`: each outer step solves the
/// entropic problem with cost `-4 D P D'` (the energy gradient up to terms
/// constant on couplings), warm-started from the previous potentials, and
/// rounds the result onto the coupling polytope. A step that would raise
/// the energy is damped towards the current plan by mixing in its Gibbs
/// cost `-eps log P`, halving the step until the energy does not increase.
pub fn entropic_gw_with(x: &MetricMeasureSpace, y: &MetricMeasureSpace, opts: &GwOptions) -> Result<GwSolution> {
    let epsilon = opts.epsilon;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let (a, b) = (x.weights(), y.weights());
    let column = a.weights().clone().insert_axis(Axis(1));
    let mut plan = column.dot(&b.weights().clone().insert_axis(Axis(0)));
    let mut energy = gw_energy(x, y, &plan);
    let mut trace = vec![energy];
    let mut accepted = 0;
    let inner = SinkhornOptions {
        max_iter: Some(opts.inner_iters.max(1)),
        ..SinkhornOptions::default()
    };
    let mut potential: Option<Array1<f64>> = None;
    let start = opts.anneal_from.unwrap_or(epsilon).max(epsilon);
    let ramp = (opts.outer_iters / 2).max(1) as f64;
    let decay = (epsilon / start).powf(1.0 / ramp);
    for k in 0..opts.outer_iters {
        let epsilon = (start * decay.powi(k as i32)).max(epsilon);
        let gradient = x.distances.dot(&plan).dot(&y.distances) * -4.0;
        let own = plan.mapv(|p| -epsilon * p.max(1e-300).ln());
        let mut step = 1.0;
        let mut next = None;
        while step >= MIN_GW_STEP {
            let cost = CostMatrix::signed(&gradient * step + &own * (1.0 - step))?;
            let sol = sinkhorn_log_warm(a, b, &cost, epsilon, &inner, potential.as_ref())?;
            let candidate = round_plan(sol.plan.matrix(), a, b)?.into_inner();
            let e = gw_energy(x, y, &candidate);
            if e <= energy {
                next = Some((candidate, e, sol.duals.g));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, e, g)) = next else { break };
        let stalled = energy - e <= 1e-14 * (1.0 + energy);
        plan = candidate;
        energy = e;
        potential = Some(g);
        trace.push(e);
        accepted += 1;
        if stalled && epsilon <= opts.epsilon {
            break;
        }
    }
    let mut polished = 0;
    if opts.polish {
        for _ in 0..opts.outer_iters.max(1) {
            let gradient = x.distances.dot(&plan).dot(&y.distances) * -4.0;
            let shift = gradient.iter().copied().fold(f64::INFINITY, f64::min);
            let cost = CostMatrix::new(gradient.mapv(|c| (c - shift).max(0.0)))?;
            let vertex = network_simplex(a, b, &cost)?.plan.into_inner();
            let e = gw_energy(x, y, &vertex);
            if e >= energy - 1e-15 * (1.0 + energy) {
                break;
            }
            plan = vertex;
            energy = e;
            trace.push(e);
            polished += 1;
        }
    }
    Ok(GwSolution {
        energy,
        plan: TransportPlan::new(plan, crate::tolerances::EXACT_MARGINAL),
        energy_trace: trace,
        accepted_steps: accepted,
        polish_steps: polished,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_values_at_one() {
        for k in [
            EntropyFunction::Kl,
            EntropyFunction::Tv,
            EntropyFunction::Hellinger,
            EntropyFunction::Chi2,
            EntropyFunction::Js,
        ] {
            assert!(k.phi(1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn thirty_five_histograms() {
        let (_, h) = unit_square_grid_histograms();
        assert_eq!(h.len(), 35);
        assert!(h.iter().all(|x| (x.sum() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn kernel_validation() {
        assert!(Kernel::energy(2.0).is_err());
        assert!(Kernel::energy(0.0).is_err());
        assert!(Kernel::gaussian(-1.0).is_err());
        let k = Kernel::gaussian(0.5).unwrap();
        assert!((k.evaluate(&[0.0], &[0.5]) - (-0.5f64).exp()).abs() < 1e-15);
    }
}
