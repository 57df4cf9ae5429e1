//! Derivatives of transport losses for fitting problems, and JKO steps for
//! Wasserstein gradient flows.
//!
//! The loss is the regularized cost `<C, P> - eps * sum P (1 - log P)` at the
//! Sinkhorn solution. Gradients are taken at convergence through the
//! envelope theorem, not by differentiating the iterations.

use ndarray::{Array1, Array2, Axis};

use crate::entropic::{generalized_sinkhorn, solve_entropic, MarginalPenalty, SinkhornOptions};
use crate::exact_lp::network_simplex;
use crate::{build_cost, CostMatrix, DiscreteMeasure, DualPair, Error, Histogram, Result};

/// Whether a returned derivative is the unique gradient or one element of
/// the subdifferential (unregularized problems).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientKind {
    Gradient,
    Subgradient,
}

#[derive(Debug, Clone)]
pub struct WeightGradient {
    /// Regularized cost at `(a, b)`.
    pub value: f64,
    /// Optimal potentials, shifted so that `sum f = 0`.
    pub potentials: DualPair,
}

/// Gradient of the regularized cost with respect to both histograms: the
/// optimal potentials `(f, g)`, centered. On simplex-tangent directions
/// `(da, db)` the directional derivative is `<f, da> + <g, db>`.
pub fn grad_wrt_weights(
    a: &Histogram,
    b: &Histogram,
    cost: &CostMatrix,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<WeightGradient> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let sol = solve_entropic(a, b, cost, epsilon, opts)?;
    if !sol.report.converged {
        return Err(Error::IterationLimit {
            limit: sol.report.iterations,
            objective: sol.report.regularized_cost,
        });
    }
    Ok(WeightGradient {
        value: sol.report.regularized_cost,
        potentials: sol.duals.centered(),
    })
}

#[derive(Debug, Clone)]
pub struct PositionGradient {
    /// Regularized cost (transport cost when `epsilon = 0`).
    pub value: f64,
    /// Row `i` is `sum_j P_ij grad_x c(x_i, y_j)`.
    pub gradient: Array2<f64>,
    pub kind: GradientKind,
}

/// Gradient of the loss with respect to the source atom positions for the
/// cost `|x - y|^p`. For `p = 2` row `i` equals `2 (a_i x_i - sum_j P_ij y_j)`.
/// With `epsilon = 0` an optimal LP plan is used and the result is a
/// subgradient.
pub fn grad_wrt_positions(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    p: f64,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<PositionGradient> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let cost = build_cost(source, target, p)?;
    let (a, b) = (source.weights(), target.weights());
    let (plan, value, kind) = if epsilon == 0.0 {
        let sol = network_simplex(a, b, &cost)?;
        (sol.plan.into_inner(), sol.value, GradientKind::Subgradient)
    } else {
        let sol = solve_entropic(a, b, &cost, epsilon, opts)?;
        if !sol.report.converged {
            return Err(Error::IterationLimit {
                limit: sol.report.iterations,
                objective: sol.report.regularized_cost,
            });
        }
        (sol.plan.into_inner(), sol.report.regularized_cost, GradientKind::Gradient)
    };
    let (x, y) = (source.points(), target.points());
    let mut gradient = Array2::zeros(x.raw_dim());
    for ((i, j), &mass) in plan.indexed_iter() {
        if mass == 0.0 {
            continue;
        }
        let diff = &x.row(i) - &y.row(j);
        let scale = if p == 2.0 {
            2.0
        } else {
            let r = diff.dot(&diff).sqrt();
            if r == 0.0 {
                continue;
            }
            p * r.powf(p - 2.0)
        };
        gradient.row_mut(i).scaled_add(mass * scale, &diff);
    }
    Ok(PositionGradient { value, gradient, kind })
}

/// Histogram `a(theta)` with the transpose of its Jacobian.
pub trait WeightModel {
    fn weights(&self, theta: &Array1<f64>) -> Result<Histogram>;
    /// `[d a(theta)]^T f`.
    fn pullback(&self, theta: &Array1<f64>, f: &Array1<f64>) -> Array1<f64>;
}

/// `a = softmax(theta)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Softmax;

impl WeightModel for Softmax {
    fn weights(&self, theta: &Array1<f64>) -> Result<Histogram> {
        Histogram::probability(softmax(theta))
    }

    fn pullback(&self, theta: &Array1<f64>, f: &Array1<f64>) -> Array1<f64> {
        let a = softmax(theta);
        let mean = a.dot(f);
        &a * &f.mapv(|x| x - mean)
    }
}

fn softmax(theta: &Array1<f64>) -> Array1<f64> {
    let m = theta.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let e = theta.mapv(|x| (x - m).exp());
    let s = e.sum();
    e / s
}

/// `a = theta`; steps that leave the simplex are rejected by the line search.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectWeights;

impl WeightModel for DirectWeights {
    fn weights(&self, theta: &Array1<f64>) -> Result<Histogram> {
        Histogram::probability(theta.clone())
    }

    fn pullback(&self, _theta: &Array1<f64>, f: &Array1<f64>) -> Array1<f64> {
        let mean = f.mean().unwrap_or(0.0);
        f.mapv(|x| x - mean)
    }
}

/// `a = t first + (1 - t) second` for the single parameter `t in [0, 1]`.
#[derive(Debug, Clone)]
pub struct TwoComponentMixture {
    first: Histogram,
    second: Histogram,
}

impl TwoComponentMixture {
    pub fn new(first: Histogram, second: Histogram) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::Shape {
                expected: vec![first.len()],
                got: vec![second.len()],
            });
        }
        Ok(TwoComponentMixture { first, second })
    }
}

impl WeightModel for TwoComponentMixture {
    fn weights(&self, theta: &Array1<f64>) -> Result<Histogram> {
        let t = theta[0];
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("mixture weight {t} outside [0, 1]")));
        }
        Histogram::probability(self.first.weights() * t + self.second.weights() * (1.0 - t))
    }

    fn pullback(&self, _theta: &Array1<f64>, f: &Array1<f64>) -> Array1<f64> {
        Array1::from_elem(1, (self.first.weights() - self.second.weights()).dot(f))
    }
}

/// Target histogram, cost from the model's support to the target support,
/// and regularization.
#[derive(Debug, Clone)]
pub struct EulerianFit {
    pub target: Histogram,
    pub cost: CostMatrix,
    pub epsilon: f64,
}

impl EulerianFit {
    /// Loss and its gradient in `theta`.
    pub fn loss_and_gradient(
        &self,
        model: &dyn WeightModel,
        theta: &Array1<f64>,
        opts: &SinkhornOptions,
    ) -> Result<(f64, Array1<f64>)> {
        let a = model.weights(theta)?;
        let g = grad_wrt_weights(&a, &self.target, &self.cost, self.epsilon, opts)?;
        Ok((g.value, model.pullback(theta, &g.potentials.f)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    pub learning_rate: f64,
    /// Armijo constant of the backtracking line search.
    pub sufficient_decrease: f64,
    pub max_halvings: usize,
    /// Stop once the gradient norm falls to this value.
    pub gradient_tol: f64,
    pub sinkhorn: SinkhornOptions,
}

impl FitOptions {
    pub fn new(steps: usize, learning_rate: f64) -> Self {
        FitOptions {
            steps,
            learning_rate,
            sufficient_decrease: 1e-4,
            max_halvings: 50,
            gradient_tol: 0.0,
            sinkhorn: SinkhornOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitTrajectory {
    /// Parameters before the first step and after every accepted step.
    pub thetas: Vec<Array1<f64>>,
    pub losses: Vec<f64>,
    /// Step at which no admissible decrease was found, if any.
    pub line_search_failure: Option<usize>,
}

impl FitTrajectory {
    pub fn last_theta(&self) -> &Array1<f64> {
        self.thetas.last().unwrap()
    }

    pub fn last_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

/// Gradient descent on `theta -> loss(a(theta), target)` with the gradient
/// assembled from the optimal potentials and a backtracking line search.
/// Trial points where the model or the solver fails count as rejected.
pub fn fit_eulerian(
    problem: &EulerianFit,
    model: &dyn WeightModel,
    theta0: Array1<f64>,
    opts: &FitOptions,
) -> Result<FitTrajectory> {
    if !(opts.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be > 0".into()));
    }
    let (mut loss, mut grad) = problem.loss_and_gradient(model, &theta0, &opts.sinkhorn)?;
    let mut thetas = vec![theta0];
    let mut losses = vec![loss];
    let mut line_search_failure = None;
    for step in 0..opts.steps {
        let theta = thetas.last().unwrap();
        let sq = grad.dot(&grad);
        if sq == 0.0 || sq.sqrt() <= opts.gradient_tol {
            break;
        }
        let mut rate = opts.learning_rate;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = theta - &(rate * &grad);
            if let Ok((l, g)) = problem.loss_and_gradient(model, &trial, &opts.sinkhorn) {
                if l <= loss - opts.sufficient_decrease * rate * sq {
                    accepted = Some((trial, l, g));
                    break;
                }
            }
            rate *= 0.5;
        }
        match accepted {
            Some((t, l, g)) => {
                thetas.push(t);
                losses.push(l);
                loss = l;
                grad = g;
            }
            None => {
                line_search_failure = Some(step);
                break;
            }
        }
    }
    Ok(FitTrajectory {
        thetas,
        losses,
        line_search_failure,
    })
}

/// Functional `F` of a JKO step, each with a closed-form KL proximal map.
#[derive(Debug, Clone, PartialEq)]
pub enum JkoFunctional {
    /// `<V, a>`.
    Potential(Array1<f64>),
    /// `<V, a>` subject to `a <= cap` entrywise.
    CongestedPotential { potential: Array1<f64>, cap: f64 },
    /// `sum a (log a - 1)`.
    NegEntropy,
}

#[derive(Debug, Clone)]
pub struct JkoStep {
    pub next: Histogram,
    pub iterations: usize,
    pub converged: bool,
}

/// One entropic JKO step `argmin_a W_eps(a, a_prev) + tau F(a)`, solved by
/// generalized Sinkhorn with the row penalty `tau F` and the column
/// marginal fixed to `a_prev`. The new histogram is the row marginal.
pub fn jko_step(
    previous: &Histogram,
    functional: &JkoFunctional,
    tau: f64,
    epsilon: f64,
    cost: &CostMatrix,
    opts: &SinkhornOptions,
) -> Result<JkoStep> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    let (n, m) = cost.shape();
    if m != previous.len() {
        return Err(Error::Shape {
            expected: vec![n, previous.len()],
            got: vec![n, m],
        });
    }
    let row = match functional {
        _ if tau == 0.0 => MarginalPenalty::Linear(Array1::zeros(n)),
        JkoFunctional::Potential(v) => MarginalPenalty::Linear(v * tau),
        JkoFunctional::CongestedPotential { potential, cap } => {
            if cap * (n as f64) < previous.total() {
                return Err(Error::InvalidArgument(format!(
                    "cap {cap} cannot hold mass {} on {n} cells",
                    previous.total()
                )));
            }
            MarginalPenalty::CappedLinear {
                weights: potential * tau,
                cap: *cap,
            }
        }
        JkoFunctional::NegEntropy => MarginalPenalty::NegEntropy { strength: tau },
    };
    let col = MarginalPenalty::Equality(previous.weights().clone());
    let sol = generalized_sinkhorn(&row, &col, cost, epsilon, opts)?;
    let next = sol.plan.matrix().sum_axis(Axis(1));
    Ok(JkoStep {
        next: Histogram::mass(next)?,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_pullback_is_the_jacobian_transpose() {
        let theta = array![0.3, -1.0, 2.0];
        let f = array![1.0, 4.0, -2.0];
        let h = 1e-6;
        let g = Softmax.pullback(&theta, &f);
        for k in 0..3 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let fd = (softmax(&tp).dot(&f) - softmax(&tm).dot(&f)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn mixture_rejects_weights_outside_the_interval() {
        let m = TwoComponentMixture::new(Histogram::uniform(2).unwrap(), Histogram::probability(array![1.0, 0.0]).unwrap())
            .unwrap();
        assert!(m.weights(&array![1.2]).is_err());
        assert!(m.weights(&array![0.5]).is_ok());
    }
}
