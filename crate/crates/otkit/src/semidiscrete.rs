//! Semidiscrete transport from a continuous source (a quadrature rule or a
//! sampler) to a discrete target: c-bar transforms, Laguerre cells, the
//! semi-dual energy with its gradient, and stochastic ascent.
//!
//! The ground cost is `|x - y|_2^power`. With `eps > 0` the hard minimum is
//! replaced by the `b`-weighted soft minimum
//! `-eps log sum_j b_j exp((g_j - c(x, y_j)) / eps)`.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::logsumexp;
use crate::tolerances::PROBABILITY_SUM;
use crate::{Error, Histogram, Result};

/// Continuous source represented by weighted nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSource {
    nodes: Array2<f64>,
    weights: Array1<f64>,
}

impl QuadratureSource {
    /// `nodes` is `N x d`; `weights` are positive and sum to 1.
    pub fn new(nodes: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if nodes.nrows() != weights.len() || nodes.nrows() == 0 {
            return Err(Error::Shape {
                expected: vec![weights.len()],
                got: vec![nodes.nrows()],
            });
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite node coordinate".into()));
        }
        if let Some(i) = weights.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::ZeroWeight(i));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > PROBABILITY_SUM {
            return Err(Error::InvalidHistogram(format!("node weights sum to {total}")));
        }
        Ok(QuadratureSource { nodes, weights })
    }

    /// Midpoint rule with `per_axis^dim` equal-weight nodes on `[0, 1]^dim`.
    pub fn unit_cube(per_axis: usize, dim: usize) -> Result<Self> {
        if per_axis == 0 || dim == 0 {
            return Err(Error::InvalidArgument("empty grid".into()));
        }
        let total = per_axis.pow(dim as u32);
        let nodes = Array2::from_shape_fn((total, dim), |(k, axis)| {
            let idx = (k / per_axis.pow((dim - 1 - axis) as u32)) % per_axis;
            (idx as f64 + 0.5) / per_axis as f64
        });
        QuadratureSource::new(nodes, Array1::from_elem(total, 1.0 / total as f64))
    }

    /// Discrete probability measure used as its own quadrature rule.
    pub fn from_histogram(points: Array2<f64>, weights: &Histogram) -> Result<Self> {
        QuadratureSource::new(points, weights.weights().clone())
    }

    pub fn nodes(&self) -> &Array2<f64> {
        &self.nodes
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.ncols()
    }
}

/// Draws i.i.d. points; the same `(seed, index)` always yields the same point.
pub trait Sampler {
    fn dim(&self) -> usize;
    fn sample(&self, seed: u64, index: u64) -> Array1<f64>;
}

fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform distribution on an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBox {
    lower: Array1<f64>,
    upper: Array1<f64>,
}

impl UniformBox {
    pub fn new(lower: Array1<f64>, upper: Array1<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension(format!(
                "bounds of length {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidArgument("box must have lower < upper".into()));
        }
        Ok(UniformBox { lower, upper })
    }

    pub fn unit_cube(dim: usize) -> Result<Self> {
        UniformBox::new(Array1::zeros(dim), Array1::ones(dim))
    }
}

impl Sampler for UniformBox {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn sample(&self, seed: u64, index: u64) -> Array1<f64> {
        let mut rng = draw_rng(seed, index);
        Array1::from_shape_fn(self.lower.len(), |k| rng.random_range(self.lower[k]..self.upper[k]))
    }
}

impl Sampler for QuadratureSource {
    fn dim(&self) -> usize {
        self.nodes.ncols()
    }

    fn sample(&self, seed: u64, index: u64) -> Array1<f64> {
        let mut rng = draw_rng(seed, index);
        let mut t: f64 = rng.random_range(0.0..1.0);
        for (k, &w) in self.weights.iter().enumerate() {
            if t < w {
                return self.nodes.row(k).to_owned();
            }
            t -= w;
        }
        self.nodes.row(self.len() - 1).to_owned()
    }
}

/// Dual weights on the discrete target.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiDual {
    g: Array1<f64>,
}

impl SemiDual {
    pub fn new(g: Array1<f64>) -> Result<Self> {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite dual weight".into()));
        }
        Ok(SemiDual { g })
    }

    pub fn zeros(m: usize) -> Self {
        SemiDual { g: Array1::zeros(m) }
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.g
    }
}

fn point_cost(x: ArrayView1<f64>, y: ArrayView1<f64>, power: f64) -> f64 {
    let sq: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    if power == 2.0 {
        sq
    } else {
        sq.sqrt().powf(power)
    }
}

fn check_power(power: f64) -> Result<()> {
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::InvalidArgument(format!("power must be > 0, got {power}")));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    Ok(())
}

fn check_targets(g: &SemiDual, targets: &Array2<f64>, b: Option<&Histogram>, dim: usize) -> Result<()> {
    if targets.nrows() != g.len() || targets.nrows() == 0 {
        return Err(Error::Shape {
            expected: vec![g.len()],
            got: vec![targets.nrows()],
        });
    }
    if let Some(b) = b {
        if b.len() != g.len() {
            return Err(Error::Shape {
                expected: vec![g.len()],
                got: vec![b.len()],
            });
        }
    }
    if targets.ncols() != dim {
        return Err(Error::Dimension(format!(
            "targets have d = {}, points have d = {dim}",
            targets.ncols()
        )));
    }
    Ok(())
}

/// Value of the (soft) c-bar transform at `x` together with the cell
/// weights `chi_j(x)`: an indicator of the Laguerre cell for `eps = 0`, a
/// partition of unity for `eps > 0`.
fn transform_and_weights(
    g: &Array1<f64>,
    x: ArrayView1<f64>,
    targets: &Array2<f64>,
    b: &Array1<f64>,
    power: f64,
    epsilon: f64,
) -> (f64, Array1<f64>) {
    let m = g.len();
    let slack: Vec<f64> = (0..m).map(|j| point_cost(x, targets.row(j), power) - g[j]).collect();
    let mut chi = Array1::zeros(m);
    if epsilon == 0.0 {
        let mut best = 0;
        for j in 1..m {
            if slack[j] < slack[best] {
                best = j;
            }
        }
        chi[best] = 1.0;
        return (slack[best], chi);
    }
    let z: Vec<f64> = (0..m)
        .map(|j| if b[j] > 0.0 { b[j].ln() - slack[j] / epsilon } else { f64::NEG_INFINITY })
        .collect();
    let lse = logsumexp(z.iter().copied());
    for j in 0..m {
        chi[j] = (z[j] - lse).exp();
    }
    (-epsilon * lse, chi)
}

/// `g^cbar(x) = min_j c(x, y_j) - g_j` for `eps = 0`, otherwise
/// `-eps log sum_j b_j exp((g_j - c(x, y_j)) / eps)`.
pub fn cbar_transform_semidiscrete(
    g: &SemiDual,
    x: ArrayView1<f64>,
    targets: &Array2<f64>,
    b: &Histogram,
    power: f64,
    epsilon: f64,
) -> Result<f64> {
    check_power(power)?;
    check_epsilon(epsilon)?;
    check_targets(g, targets, Some(b), x.len())?;
    Ok(transform_and_weights(&g.g, x, targets, b.weights(), power, epsilon).0)
}

/// Laguerre cell of every node: `argmin_j c(x, y_j) - g_j`, ties to the
/// lowest index.
pub fn laguerre_assign(
    g: &SemiDual,
    nodes: &Array2<f64>,
    targets: &Array2<f64>,
    power: f64,
) -> Result<Vec<usize>> {
    check_power(power)?;
    check_targets(g, targets, None, nodes.ncols())?;
    let ones = Array1::ones(g.len());
    Ok(nodes
        .rows()
        .into_iter()
        .map(|x| {
            let (_, chi) = transform_and_weights(&g.g, x, targets, &ones, power, 0.0);
            chi.iter().position(|&c| c == 1.0).unwrap_or(0)
        })
        .collect())
}

/// Source mass `sum_x w(x) chi_j(x)` carried by each target.
pub fn cell_masses(
    g: &SemiDual,
    source: &QuadratureSource,
    targets: &Array2<f64>,
    b: &Histogram,
    power: f64,
    epsilon: f64,
) -> Result<Array1<f64>> {
    let (_, grad) = semidual_energy_grad(g, source, targets, b, power, epsilon)?;
    Ok(b.weights() - &grad)
}

/// Semi-dual energy `E(g) = sum_x w(x) g^cbar(x) + <g, b>` and its gradient
/// `b_j - sum_x w(x) chi_j(x)`.
pub fn semidual_energy_grad(
    g: &SemiDual,
    source: &QuadratureSource,
    targets: &Array2<f64>,
    b: &Histogram,
    power: f64,
    epsilon: f64,
) -> Result<(f64, Array1<f64>)> {
    check_power(power)?;
    check_epsilon(epsilon)?;
    check_targets(g, targets, Some(b), source.dim())?;
    let bw = b.weights();
    let mut energy = g.g.dot(bw);
    let mut grad = bw.clone();
    for (x, &w) in source.nodes.rows().into_iter().zip(source.weights.iter()) {
        let (value, chi) = transform_and_weights(&g.g, x, targets, bw, power, epsilon);
        energy += w * value;
        grad.scaled_add(-w, &chi);
    }
    Ok((energy, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    /// Stop once `max_j |grad_j| <= tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemidualSolution {
    pub dual: SemiDual,
    pub energy: f64,
    /// `max_j |grad_j|` at the returned point.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Deterministic maximization of the semi-dual energy on a quadrature
/// source by gradient ascent with a backtracking (Armijo) line search.
pub fn maximize_semidual(
    source: &QuadratureSource,
    targets: &Array2<f64>,
    b: &Histogram,
    power: f64,
    epsilon: f64,
    opts: &AscentOptions,
) -> Result<SemidualSolution> {
    let mut g = SemiDual::zeros(targets.nrows());
    let (mut energy, mut grad) = semidual_energy_grad(&g, source, targets, b, power, epsilon)?;
    let mut step = if epsilon > 0.0 { epsilon } else { 1.0 };
    let mut iterations = 0;
    loop {
        let norm = grad.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if norm <= opts.tol || iterations >= opts.max_iter {
            return Ok(SemidualSolution {
                dual: g,
                energy,
                gradient_norm: norm,
                iterations,
                converged: norm <= opts.tol,
            });
        }
        let sq = grad.dot(&grad);
        let mut t = 2.0 * step;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = SemiDual { g: &g.g + &(&grad * t) };
            let (e, d) = semidual_energy_grad(&trial, source, targets, b, power, epsilon)?;
            // Near the optimum the energy change drops below round-off; the
            // step is then judged by the directional derivative instead.
            let flat = (e - energy).abs() <= 1e-14 * (1.0 + energy.abs());
            if (!flat && e >= energy + 1e-4 * t * sq) || (flat && d.dot(&grad) >= 0.5 * sq) {
                accepted = Some((trial, e, d));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, e, d)) => {
                g = trial;
                energy = e;
                grad = d;
                step = t;
            }
            // A kink of the piecewise-linear (eps = 0) energy blocks every
            // ascent step along the gradient.
            None => {
                return Ok(SemidualSolution {
                    dual: g,
                    energy,
                    gradient_norm: norm,
                    iterations,
                    converged: false,
                })
            }
        }
        iterations += 1;
    }
}

/// Step sizes `tau_0 / (1 + l / l_0)` for SGD and
/// `tau_0 / (1 + sqrt(l / l_0))` for averaged ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub tau0: f64,
    pub l0: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { tau0: 1.0, l0: 100.0 }
    }
}

impl StepSchedule {
    pub fn sgd_step(&self, l: usize) -> f64 {
        self.tau0 / (1.0 + l as f64 / self.l0)
    }

    pub fn sga_step(&self, l: usize) -> f64 {
        self.tau0 / (1.0 + (l as f64 / self.l0).sqrt())
    }
}

/// Runs `g <- g + step(l) * grad(l, g)` for `steps` iterations from `g0`.
/// With `average`, returns the mean of the iterates after each step
/// instead of the last one.
pub fn stochastic_ascent<G, S>(
    g0: Array1<f64>,
    steps: usize,
    step: S,
    mut grad: G,
    average: bool,
) -> Array1<f64>
where
    G: FnMut(usize, &Array1<f64>) -> Array1<f64>,
    S: Fn(usize) -> f64,
{
    let mut g = g0;
    let mut mean = g.clone();
    for l in 0..steps {
        let d = grad(l, &g);
        g.scaled_add(step(l), &d);
        if l == 0 {
            mean.assign(&g);
        } else {
            let delta = &g - &mean;
            mean.scaled_add(1.0 / (l + 1) as f64, &delta);
        }
    }
    if average && steps > 0 {
        mean
    } else {
        g
    }
}

fn stochastic_semidual(
    sampler: &dyn Sampler,
    targets: &Array2<f64>,
    b: &Histogram,
    power: f64,
    epsilon: f64,
    schedule: &StepSchedule,
    steps: usize,
    seed: u64,
    average: bool,
) -> Result<SemiDual> {
    let g0 = SemiDual::zeros(targets.nrows());
    check_power(power)?;
    check_epsilon(epsilon)?;
    check_targets(&g0, targets, Some(b), sampler.dim())?;
    let bw = b.weights();
    let grad = |l: usize, g: &Array1<f64>| {
        let x = sampler.sample(seed, l as u64);
        let (_, chi) = transform_and_weights(g, x.view(), targets, bw, power, epsilon);
        bw - &chi
    };
    let g = if average {
        stochastic_ascent(g0.g, steps, |l| schedule.sga_step(l), grad, true)
    } else {
        stochastic_ascent(g0.g, steps, |l| schedule.sgd_step(l), grad, false)
    };
    SemiDual::new(g)
}

/// Stochastic gradient ascent on the semi-dual, one sample per step.
#[allow(clippy::too_many_arguments)]
pub fn sgd_semidual(
    sampler: &dyn Sampler,
    targets: &Array2<f64>,
    b: &Histogram,
    power: f64,
    epsilon: f64,
    schedule: &StepSchedule,
    steps: usize,
    seed: u64,
) -> Result<SemiDual> {
    stochastic_semidual(sampler, targets, b, power, epsilon, schedule, steps, seed, false)
}

/// Averaged stochastic ascent with the slower `1 / sqrt(l)` step decay.
#[allow(clippy::too_many_arguments)]
pub fn sga_semidual(
    sampler: &dyn Sampler,
    targets: &Array2<f64>,
    b: &Histogram,
    power: f64,
    epsilon: f64,
    schedule: &StepSchedule,
    steps: usize,
    seed: u64,
) -> Result<SemiDual> {
    stochastic_semidual(sampler, targets, b, power, epsilon, schedule, steps, seed, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_target_transform() {
        let g = SemiDual::new(array![0.3]).unwrap();
        let y = array![[1.0, 2.0]];
        let b = Histogram::probability(array![1.0]).unwrap();
        let v = cbar_transform_semidiscrete(&g, array![0.0, 0.0].view(), &y, &b, 2.0, 0.0).unwrap();
        assert!((v - (5.0 - 0.3)).abs() < 1e-15);
        let soft = cbar_transform_semidiscrete(&g, array![0.0, 0.0].view(), &y, &b, 2.0, 0.7).unwrap();
        assert!((soft - v).abs() < 1e-12);
    }

    #[test]
    fn unit_cube_nodes() {
        let q = QuadratureSource::unit_cube(2, 2).unwrap();
        assert_eq!(q.nodes(), &array![[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]]);
        assert!(QuadratureSource::new(array![[0.0]], array![0.5]).is_err());
    }

    #[test]
    fn samplers_are_reproducible() {
        let u = UniformBox::unit_cube(3).unwrap();
        assert_eq!(u.sample(7, 11), u.sample(7, 11));
        assert_ne!(u.sample(7, 11), u.sample(7, 12));
        assert_ne!(u.sample(7, 11), u.sample(8, 11));
    }

    #[test]
    fn averaging_of_constant_field() {
        let g = stochastic_ascent(array![0.0], 4, |_| 1.0, |_, _| array![1.0], true);
        assert_eq!(g, array![2.5]);
        let last = stochastic_ascent(array![0.0], 4, |_| 1.0, |_, _| array![1.0], false);
        assert_eq!(last, array![4.0]);
    }
}
