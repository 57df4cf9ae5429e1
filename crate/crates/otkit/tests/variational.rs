mod common;

use common::*;
use ndarray::{array, Array1, Array2};
use otkit::entropic::{solve_entropic, SinkhornOptions};
use otkit::variational::*;
use otkit::{build_cost, CostMatrix, DiscreteMeasure, Histogram};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn tight() -> SinkhornOptions {
    SinkhornOptions {
        tol: 1e-13,
        ..Default::default()
    }
}

fn loss(a: &Histogram, b: &Histogram, c: &CostMatrix, eps: f64) -> f64 {
    solve_entropic(a, b, c, eps, &tight()).unwrap().report.regularized_cost
}

/// Zero-sum direction scaled so that `a + h d` stays positive.
fn tangent(r: &mut ChaCha8Rng, a: &Histogram) -> Array1<f64> {
    let d: Array1<f64> = (0..a.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let d = &d - d.mean().unwrap();
    let scale = a.weights().fold(f64::INFINITY, |m, &x| m.min(x));
    d * scale
}

fn shifted(a: &Histogram, d: &Array1<f64>, h: f64) -> Histogram {
    Histogram::mass(a.weights() + &(d * h)).unwrap()
}

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

fn grid_cost(x: &[f64]) -> CostMatrix {
    CostMatrix::new(Array2::from_shape_fn((x.len(), x.len()), |(i, j)| (x[i] - x[j]).powi(2))).unwrap()
}

fn bump(x: &[f64], center: f64, width: f64) -> Histogram {
    Histogram::normalized(x.iter().map(|&t| (-(t - center).powi(2) / (2.0 * width * width)).exp() + 1e-3).collect::<Array1<f64>>())
        .unwrap()
}

fn rel_err(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs().max(x.abs()).max(1e-8)
}

#[test]
fn weight_gradient_matches_central_differences() {
    let mut r = rng(111);
    for trial in 0..50 {
        let (n, m) = (r.random_range(2..12), r.random_range(2..12));
        let a = random_hist(&mut r, n);
        let b = random_hist(&mut r, m);
        let c = random_cost(&mut r, n, m);
        let eps = r.random_range(0.05..0.5);
        let grad = grad_wrt_weights(&a, &b, &c, eps, &tight()).unwrap();
        let (da, db) = (tangent(&mut r, &a), tangent(&mut r, &b));
        let h = 1e-5 * (1.0 + a.weights().fold(0.0_f64, |m, &x| m.max(x)));
        let fd = (loss(&shifted(&a, &da, h), &shifted(&b, &db, h), &c, eps)
            - loss(&shifted(&a, &da, -h), &shifted(&b, &db, -h), &c, eps))
            / (2.0 * h);
        let analytic = grad.potentials.f.dot(&da) + grad.potentials.g.dot(&db);
        assert!(rel_err(fd, analytic) <= 1e-5, "trial {trial}: fd {fd} vs {analytic}");
        assert!(grad.potentials.f.sum().abs() < 1e-10);
        assert!((grad.value - loss(&a, &b, &c, eps)).abs() < 1e-12);
    }
}

#[test]
fn symmetric_problem_has_equal_potentials() {
    let x = grid(9);
    let c = grid_cost(&x);
    // Reflection-symmetric histogram.
    let a = Histogram::normalized(x.iter().map(|&t| 1.0 + (t - 0.5).powi(2)).collect::<Array1<f64>>()).unwrap();
    let grad = grad_wrt_weights(&a, &a, &c, 0.05, &tight()).unwrap();
    let (f, g) = (&grad.potentials.f, &grad.potentials.g);
    let fc = f - f.mean().unwrap();
    let gc = g - g.mean().unwrap();
    assert!((&fc - &gc).mapv(f64::abs).sum() < 1e-8);
    // Antisymmetric directions are orthogonal to the symmetric potential.
    let anti: Array1<f64> = (0..9).map(|i| (i as f64) - 4.0).collect();
    assert!(f.dot(&anti).abs() < 1e-8);
}

#[test]
fn large_epsilon_still_gives_centered_finite_potentials() {
    let mut r = rng(112);
    let a = random_hist(&mut r, 7);
    let b = random_hist(&mut r, 5);
    let c = random_cost(&mut r, 7, 5);
    for eps in [0.1, 1.0, 10.0] {
        let g = grad_wrt_weights(&a, &b, &c, eps, &tight()).unwrap();
        assert!(g.potentials.f.sum().abs() < 1e-10);
        assert!(g.potentials.f.iter().chain(g.potentials.g.iter()).all(|x| x.is_finite()));
        // The plan rebuilt from the potentials has the prescribed marginals.
        let p = Array2::from_shape_fn((7, 5), |(i, j)| {
            ((g.potentials.f[i] + g.potentials.g[j] - c.entries()[[i, j]]) / eps).exp()
        });
        let rows = p.sum_axis(ndarray::Axis(1));
        assert!((&rows - a.weights()).mapv(f64::abs).sum() < 1e-10);
    }
    assert!(grad_wrt_weights(&a, &b, &c, 0.0, &tight()).is_err());
}

fn random_cloud(r: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    let pts = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..1.0));
    DiscreteMeasure::new(pts, random_hist(r, n)).unwrap()
}

fn position_loss(x: &Array2<f64>, alpha: &DiscreteMeasure, beta: &DiscreteMeasure, p: f64, eps: f64) -> f64 {
    let moved = DiscreteMeasure::new(x.clone(), alpha.weights().clone()).unwrap();
    let c = build_cost(&moved, beta, p).unwrap();
    loss(alpha.weights(), beta.weights(), &c, eps)
}

#[test]
fn position_gradient_matches_central_differences() {
    let mut r = rng(113);
    for trial in 0..50 {
        let d = r.random_range(1..4);
        let (n, m) = (r.random_range(2..8), r.random_range(2..8));
        let alpha = random_cloud(&mut r, n, d);
        let beta = random_cloud(&mut r, m, d);
        let eps = r.random_range(0.05..0.5);
        let p = if trial % 2 == 0 { 2.0 } else { 1.5 };
        let grad = grad_wrt_positions(&alpha, &beta, p, eps, &tight()).unwrap();
        assert_eq!(grad.kind, GradientKind::Gradient);
        let x = alpha.points().clone();
        let h = 1e-5 * (1.0 + x.fold(0.0_f64, |m, &v| m.max(v.abs())));
        let mut fd = Array2::zeros(x.raw_dim());
        for ((i, k), v) in fd.indexed_iter_mut() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[i, k]] += h;
            xm[[i, k]] -= h;
            *v = (position_loss(&xp, &alpha, &beta, p, eps) - position_loss(&xm, &alpha, &beta, p, eps)) / (2.0 * h);
        }
        let num = (&fd - &grad.gradient).mapv(|v| v * v).sum().sqrt();
        let den = grad.gradient.mapv(|v| v * v).sum().sqrt().max(1e-8);
        assert!(num / den <= 1e-4, "trial {trial}: relative error {}", num / den);
    }
}

#[test]
fn squared_euclidean_gradient_is_identity_minus_barycentric_projection() {
    let mut r = rng(114);
    let alpha = random_cloud(&mut r, 6, 2);
    let beta = random_cloud(&mut r, 4, 2);
    let eps = 0.1;
    let grad = grad_wrt_positions(&alpha, &beta, 2.0, eps, &tight()).unwrap();
    let c = build_cost(&alpha, &beta, 2.0).unwrap();
    let plan = solve_entropic(alpha.weights(), beta.weights(), &c, eps, &tight()).unwrap().plan.into_inner();
    let a = alpha.weights().weights();
    let expected = Array2::from_shape_fn((6, 2), |(i, k)| {
        2.0 * (a[i] * alpha.points()[[i, k]] - (0..4).map(|j| plan[[i, j]] * beta.points()[[j, k]]).sum::<f64>())
    });
    assert!(max_abs_diff(&grad.gradient, &expected) < 1e-12);
}

#[test]
fn single_atoms_and_identical_clouds() {
    let one = Histogram::uniform(1).unwrap();
    let x = DiscreteMeasure::new(array![[1.0, 2.0]], one.clone()).unwrap();
    let y = DiscreteMeasure::new(array![[-0.5, 4.0]], one).unwrap();
    for eps in [0.0, 0.3] {
        let g = grad_wrt_positions(&x, &y, 2.0, eps, &tight()).unwrap();
        assert!((g.gradient[[0, 0]] - 3.0).abs() < 1e-12 && (g.gradient[[0, 1]] + 4.0).abs() < 1e-12);
    }
    let mut r = rng(115);
    let pts = Array2::from_shape_fn((5, 2), |_| r.random_range(-1.0..1.0));
    let cloud = DiscreteMeasure::uniform(pts).unwrap();
    let g = grad_wrt_positions(&cloud, &cloud, 2.0, 0.0, &tight()).unwrap();
    assert_eq!(g.kind, GradientKind::Subgradient);
    assert!(g.gradient.iter().all(|v| v.abs() < 1e-15));
    assert!(grad_wrt_positions(&cloud, &cloud, 0.5, 0.1, &tight()).is_err());
}

/// Minimum of the regularized loss over all first marginals: with the row
/// constraint dropped the optimal plan is `P_ij = b_j K_ij / sum_k K_kj`.
fn simplex_minimum(b: &Histogram, c: &CostMatrix, eps: f64) -> f64 {
    let k = c.entries().mapv(|x| (-x / eps).exp());
    let col = k.sum_axis(ndarray::Axis(0));
    let p = Array2::from_shape_fn(k.dim(), |(i, j)| b.weights()[j] * k[[i, j]] / col[j]);
    (&p * c.entries()).sum() + eps * p.iter().map(|&x| if x > 0.0 { x * (x.ln() - 1.0) } else { 0.0 }).sum::<f64>()
}

fn fit_instance(eps: f64) -> (EulerianFit, Histogram) {
    let n = 6;
    let c = CostMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| (i as f64 - j as f64).powi(2))).unwrap();
    let b = Histogram::probability(array![0.1, 0.25, 0.05, 0.3, 0.2, 0.1]).unwrap();
    let problem = EulerianFit {
        target: b.clone(),
        cost: c,
        epsilon: eps,
    };
    (problem, b)
}

fn softmax_fit(problem: &EulerianFit) -> FitTrajectory {
    let mut opts = FitOptions::new(300, 5.0);
    opts.gradient_tol = 1e-10;
    fit_eulerian(problem, &Softmax, Array1::zeros(problem.target.len()), &opts).unwrap()
}

#[test]
fn softmax_fit_reaches_the_simplex_minimum() {
    let (problem, b) = fit_instance(0.3);
    let traj = softmax_fit(&problem);
    for w in traj.losses.windows(2) {
        assert!(w[1] <= w[0]);
    }
    let best = simplex_minimum(&b, &problem.cost, problem.epsilon);
    assert!((traj.last_loss() - best).abs() <= 1e-6, "{} vs {best}", traj.last_loss());
}

#[test]
fn fitted_loss_equals_the_self_transport_value() {
    let (problem, b) = fit_instance(0.3);
    let traj = softmax_fit(&problem);
    let self_value = loss(&b, &b, &problem.cost, problem.epsilon);
    assert!((traj.last_loss() - self_value).abs() <= 1e-6, "{} vs self {self_value}", traj.last_loss());
}

#[test]
fn direct_fit_decreases_and_stays_on_the_simplex() {
    let (problem, b) = fit_instance(0.5);
    let n = b.len();
    let theta0 = Array1::from_elem(n, 1.0 / n as f64);
    let mut opts = FitOptions::new(500, 0.05);
    opts.gradient_tol = 1e-10;
    let traj = fit_eulerian(&problem, &DirectWeights, theta0, &opts).unwrap();
    for w in traj.losses.windows(2) {
        assert!(w[1] <= w[0]);
    }
    let last = traj.last_theta();
    assert!((last.sum() - 1.0).abs() < 1e-12 && last.iter().all(|&x| x > 0.0));
    let best = simplex_minimum(&b, &problem.cost, 0.5);
    assert!(traj.last_loss() - best <= 1e-6, "{} vs {best}", traj.last_loss());
}

#[test]
fn zero_steps_keep_the_initial_parameters() {
    let b = Histogram::uniform(3).unwrap();
    let c = CostMatrix::new(Array2::from_shape_fn((3, 3), |(i, j)| (i as f64 - j as f64).abs())).unwrap();
    let problem = EulerianFit {
        target: b,
        cost: c,
        epsilon: 0.1,
    };
    let theta0 = array![0.2, -0.3, 1.0];
    let traj = fit_eulerian(&problem, &Softmax, theta0.clone(), &FitOptions::new(0, 1.0)).unwrap();
    assert_eq!(traj.thetas, vec![theta0]);
    assert_eq!(traj.losses.len(), 1);
}

#[test]
fn mixture_weight_is_recovered() {
    let x = grid(20);
    let c = grid_cost(&x);
    let h2 = (x[1] - x[0]).powi(2);
    let first = bump(&x, 0.25, 0.06);
    let second = bump(&x, 0.7, 0.1);
    let truth = 0.3;
    let target = Histogram::probability(first.weights() * truth + second.weights() * (1.0 - truth)).unwrap();
    let model = TwoComponentMixture::new(first, second).unwrap();
    let problem = EulerianFit {
        target,
        cost: c,
        epsilon: h2,
    };
    let mut opts = FitOptions::new(100, 5.0);
    opts.gradient_tol = 1e-9;
    let traj = fit_eulerian(&problem, &model, array![0.8], &opts).unwrap();
    let t = traj.last_theta()[0];
    assert!((t - truth).abs() <= 1e-3, "recovered {t}");
}

#[test]
fn assembled_gradient_matches_the_pipeline() {
    let mut r = rng(116);
    for _ in 0..20 {
        let n = r.random_range(3..9);
        let b = random_hist(&mut r, 5);
        let c = random_cost(&mut r, n, 5);
        let problem = EulerianFit {
            target: b,
            cost: c,
            epsilon: r.random_range(0.05..0.5),
        };
        let theta: Array1<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let (_, grad) = problem.loss_and_gradient(&Softmax, &theta, &tight()).unwrap();
        let dir: Array1<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let h = 1e-5 * (1.0 + theta.fold(0.0_f64, |m, &v| m.max(v.abs())));
        let at = |t: &Array1<f64>| problem.loss_and_gradient(&Softmax, t, &tight()).unwrap().0;
        let fd = (at(&(&theta + &(&dir * h))) - at(&(&theta - &(&dir * h)))) / (2.0 * h);
        assert!(rel_err(fd, grad.dot(&dir)) <= 1e-4, "{fd} vs {}", grad.dot(&dir));
    }
}

fn jko_grid(n: usize) -> (Vec<f64>, CostMatrix, f64) {
    let x = grid(n);
    let h2 = (x[1] - x[0]).powi(2);
    let c = grid_cost(&x);
    (x, c, h2)
}

fn mean_of(x: &[f64], a: &Histogram) -> f64 {
    x.iter().zip(a.weights()).map(|(x, w)| x * w).sum()
}

#[test]
fn zero_tau_returns_the_previous_histogram() {
    let (x, c, h2) = jko_grid(30);
    let prev = bump(&x, 0.4, 0.1);
    for f in [JkoFunctional::NegEntropy, JkoFunctional::Potential(Array1::from(x.clone()))] {
        let step = jko_step(&prev, &f, 0.0, h2 / 20.0, &c, &Default::default()).unwrap();
        assert!(step.converged);
        assert!((step.next.weights() - prev.weights()).mapv(f64::abs).sum() < 1e-6);
    }
}

#[test]
fn potential_flow_drifts_downhill() {
    let (x, c, h2) = jko_grid(40);
    let target = x[30];
    let v = Array1::from_iter(x.iter().map(|t| (t - target).powi(2)));
    let mut a = bump(&x, 0.2, 0.05);
    let total = a.total();
    let mut mean = mean_of(&x, &a);
    for _ in 0..30 {
        let step = jko_step(&a, &JkoFunctional::Potential(v.clone()), 0.05, h2 / 5.0, &c, &Default::default()).unwrap();
        assert!((step.next.total() - total).abs() <= 1e-9);
        assert!(step.next.weights().iter().all(|&w| w >= 0.0));
        let next_mean = mean_of(&x, &step.next);
        assert!(next_mean > mean, "mean {mean} -> {next_mean}");
        assert!(next_mean <= target + 1e-9);
        mean = next_mean;
        a = step.next;
    }
    // tau F against the unscaled squared cost is an implicit step of length
    // tau / 2, so 30 steps shrink the gap to about (1 + tau)^-30 = 0.23.
    let start = mean_of(&x, &bump(&x, 0.2, 0.05));
    assert!((target - mean) < 0.5 * (target - start), "final mean {mean}, start {start}, target {target}");
}

#[test]
fn entropy_flow_contracts_toward_uniform() {
    let (x, c, h2) = jko_grid(30);
    let uniform = Array1::from_elem(30, 1.0 / 30.0);
    let mut a = bump(&x, 0.3, 0.05);
    for _ in 0..10 {
        let step = jko_step(&a, &JkoFunctional::NegEntropy, 1e-3, h2 / 5.0, &c, &Default::default()).unwrap();
        assert!((step.next.total() - a.total()).abs() <= 1e-9);
        let before = (a.weights() - &uniform).mapv(f64::abs).sum();
        let after = (step.next.weights() - &uniform).mapv(f64::abs).sum();
        assert!(after < before, "{before} -> {after}");
        a = step.next;
    }
}

#[test]
fn congestion_cap_is_respected() {
    let (x, c, h2) = jko_grid(20);
    let v = Array1::from_iter(x.iter().map(|t| (t - 0.5).powi(2)));
    let cap = 0.09;
    let mut a = Histogram::uniform(20).unwrap();
    for _ in 0..20 {
        let f = JkoFunctional::CongestedPotential {
            potential: v.clone(),
            cap,
        };
        let step = jko_step(&a, &f, 0.2, h2 / 2.0, &c, &Default::default()).unwrap();
        assert!((step.next.total() - 1.0).abs() <= 1e-9);
        assert!(step.next.weights().iter().all(|&w| w <= cap * (1.0 + 1e-6)), "{:?}", step.next.weights());
        a = step.next;
    }
    // Saturated at the cap around the well.
    assert!(a.weights()[10] > 0.9 * cap);
    let tight_cap = JkoFunctional::CongestedPotential {
        potential: v,
        cap: 0.04,
    };
    assert!(jko_step(&a, &tight_cap, 0.2, h2, &c, &Default::default()).is_err());
    assert!(jko_step(&a, &JkoFunctional::NegEntropy, -1.0, h2, &c, &Default::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_is_convex_in_the_first_marginal(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let (n, m) = (r.random_range(2..8), r.random_range(2..8));
        let a = random_hist(&mut r, n);
        let a2 = random_hist(&mut r, n);
        let b = random_hist(&mut r, m);
        let c = random_cost(&mut r, n, m);
        let eps = r.random_range(0.05..1.0);
        let mid = Histogram::probability((a.weights() + a2.weights()) * 0.5).unwrap();
        let lhs = loss(&mid, &b, &c, eps);
        let rhs = 0.5 * loss(&a, &b, &c, eps) + 0.5 * loss(&a2, &b, &c, eps);
        prop_assert!(lhs <= rhs + 1e-10, "{lhs} > {rhs}");
    }
}
