mod common;

use common::*;
use ndarray::{array, Array1, Array2};
use otkit::closed_form::{w_p_1d, w_p_1d_pow};
use otkit::exact_lp::network_simplex;
use otkit::weak_losses::*;
use otkit::{build_cost, CostMatrix, DiscreteMeasure, Histogram};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const KINDS: [EntropyFunction; 5] = [
    EntropyFunction::Kl,
    EntropyFunction::Tv,
    EntropyFunction::Hellinger,
    EntropyFunction::Chi2,
    EntropyFunction::Js,
];

fn cloud(r: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| r.random_range(0.0..1.0))
}

fn weighted_cloud(r: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    let pts = cloud(r, n, d);
    DiscreteMeasure::new(pts, random_hist(r, n)).unwrap()
}

#[test]
fn divergences_vanish_on_the_diagonal() {
    let mut r = rng(71);
    let a = random_hist(&mut r, 7);
    for k in KINDS {
        assert!(phi_divergence(k, &a, &a).unwrap().abs() < 1e-14, "{k:?}");
    }
}

#[test]
fn total_variation_is_l1() {
    let mut r = rng(72);
    for _ in 0..20 {
        let mut a = random_hist(&mut r, 6).into_inner();
        let b = random_hist(&mut r, 6).into_inner();
        a[2] = 0.0;
        let (ha, hb) = (Histogram::mass(a.clone()).unwrap(), Histogram::mass(b.clone()).unwrap());
        let l1 = (&a - &b).mapv(f64::abs).sum();
        assert!((phi_divergence(EntropyFunction::Tv, &ha, &hb).unwrap() - l1).abs() < 1e-14);
    }
    // Mass outside the support of b is charged at slope 1.
    let a = Histogram::mass(array![0.5, 0.5]).unwrap();
    let b = Histogram::mass(array![1.0, 0.0]).unwrap();
    assert!((phi_divergence(EntropyFunction::Tv, &a, &b).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn kl_with_disjoint_supports_is_infinite() {
    let a = Histogram::probability(array![1.0, 0.0]).unwrap();
    let b = Histogram::probability(array![0.0, 1.0]).unwrap();
    assert_eq!(phi_divergence(EntropyFunction::Kl, &a, &b).unwrap(), f64::INFINITY);
    assert_eq!(phi_divergence(EntropyFunction::Chi2, &a, &b).unwrap(), f64::INFINITY);
    // Bounded divergences stay finite.
    assert!((phi_divergence(EntropyFunction::Js, &a, &b).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((phi_divergence(EntropyFunction::Hellinger, &a, &b).unwrap() - 2.0).abs() < 1e-15);
}

#[test]
fn hellinger_is_squared_root_difference() {
    let mut r = rng(73);
    let a = random_hist(&mut r, 9);
    let b = random_hist(&mut r, 9);
    let direct = (a.weights().mapv(f64::sqrt) - b.weights().mapv(f64::sqrt)).mapv(|x| x * x).sum();
    assert!((phi_divergence(EntropyFunction::Hellinger, &a, &b).unwrap() - direct).abs() < 1e-14);
}

#[test]
fn js_matches_its_phi_form() {
    let mut r = rng(74);
    let a = random_hist(&mut r, 8);
    let b = random_hist(&mut r, 8);
    let via_phi: f64 = a
        .weights()
        .iter()
        .zip(b.weights())
        .map(|(&x, &y)| EntropyFunction::Js.phi(x / y) * y)
        .sum();
    let js = phi_divergence(EntropyFunction::Js, &a, &b).unwrap();
    assert!((js - via_phi).abs() < 1e-14);
    assert!(js > 0.0 && js <= std::f64::consts::LN_2);
}

#[test]
fn gaussian_mmd_of_two_diracs() {
    let sigma = 0.7;
    let k = Kernel::gaussian(sigma).unwrap();
    let x = DiscreteMeasure::uniform(array![[0.1, 0.2]]).unwrap();
    let y = DiscreteMeasure::uniform(array![[0.6, -0.3]]).unwrap();
    let expect = 2.0 * (1.0 - (-0.5f64 / (2.0 * sigma * sigma)).exp());
    assert!((mmd_squared(&x, &y, k).unwrap() - expect).abs() < 1e-14);
    assert!(mmd_squared(&x, &x, k).unwrap().abs() < 1e-12);
}

/// `2 int (F - G)^2` on the merged breakpoints.
fn cramer_by_cdf(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let mut events: Vec<(f64, f64)> = a
        .points()
        .column(0)
        .iter()
        .zip(a.weights().weights())
        .map(|(&x, &w)| (x, w))
        .chain(b.points().column(0).iter().zip(b.weights().weights()).map(|(&x, &w)| (x, -w)))
        .collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        total += diff * diff * (pair[1].0 - pair[0].0);
    }
    2.0 * total
}

#[test]
fn energy_mmd_in_one_dimension_is_cramer() {
    let mut r = rng(75);
    let k = Kernel::energy(1.0).unwrap();
    for _ in 0..20 {
        let (n, m) = (r.random_range(1..8), r.random_range(1..8));
        let a = weighted_cloud(&mut r, n, 1);
        let b = weighted_cloud(&mut r, m, 1);
        let mmd = mmd_squared(&a, &b, k).unwrap();
        assert!((mmd - cramer_by_cdf(&a, &b)).abs() < 1e-12, "{mmd} vs {}", cramer_by_cdf(&a, &b));
    }
}

#[test]
fn energy_kernel_is_conditionally_negative_definite() {
    // MMD with -|x - y|^p is a squared norm, hence >= 0, for 0 < p < 2.
    let mut r = rng(76);
    for p in [0.3, 1.0, 1.5, 1.95] {
        let k = Kernel::energy(p).unwrap();
        for _ in 0..30 {
            let d = r.random_range(1..4);
            let a = weighted_cloud(&mut r, 6, d);
            let b = weighted_cloud(&mut r, 5, d);
            assert!(mmd_squared(&a, &b, k).unwrap() >= -1e-12);
        }
    }
    assert!(Kernel::energy(2.0).is_err());
    assert!(Kernel::energy(2.5).is_err());
}

#[test]
fn unbiased_mmd_removes_self_terms() {
    let mut r = rng(77);
    let k = Kernel::gaussian(0.5).unwrap();
    let x = cloud(&mut r, 6, 2);
    let y = cloud(&mut r, 5, 2);
    let biased = mmd_squared(
        &DiscreteMeasure::uniform(x.clone()).unwrap(),
        &DiscreteMeasure::uniform(y.clone()).unwrap(),
        k,
    )
    .unwrap();
    // The biased form counts k(x, x) = 1 in the diagonal terms.
    let (n, m) = (6.0, 5.0);
    let unbiased = mmd_unbiased(&x, &y, k).unwrap();
    let xy: f64 = (0..6)
        .flat_map(|i| (0..5).map(move |j| (i, j)))
        .map(|(i, j)| k.evaluate(x.row(i).as_slice().unwrap(), y.row(j).as_slice().unwrap()))
        .sum::<f64>()
        / (n * m);
    let xx_off: f64 = (0..6)
        .flat_map(|i| (0..6).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| k.evaluate(x.row(i).as_slice().unwrap(), x.row(j).as_slice().unwrap()))
        .sum::<f64>();
    let yy_off: f64 = (0..5)
        .flat_map(|i| (0..5).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| k.evaluate(y.row(i).as_slice().unwrap(), y.row(j).as_slice().unwrap()))
        .sum::<f64>();
    assert!((unbiased - (xx_off / (n * (n - 1.0)) + yy_off / (m * (m - 1.0)) - 2.0 * xy)).abs() < 1e-14);
    assert!((biased - ((xx_off + n) / (n * n) + (yy_off + m) / (m * m) - 2.0 * xy)).abs() < 1e-14);
}

#[test]
fn sliced_in_one_dimension_is_exact() {
    let mut r = rng(78);
    for _ in 0..10 {
        let a = weighted_cloud(&mut r, 7, 1);
        let b = weighted_cloud(&mut r, 4, 1);
        let exact = w_p_1d(&a, &b, 2.0).unwrap();
        for l in [1, 3, 17] {
            let s = sliced_w(&a, &b, 2.0, l, 5).unwrap();
            assert!((s - exact).abs() < 1e-12, "{s} vs {exact}");
        }
        assert!(sliced_w(&a, &a, 2.0, 8, 1).unwrap().abs() < 1e-15);
    }
}

#[test]
fn sliced_translated_clouds_match_quadrature() {
    let mut r = rng(79);
    let a = DiscreteMeasure::uniform(cloud(&mut r, 30, 2)).unwrap();
    let shift = array![0.3, -0.2];
    let b = DiscreteMeasure::uniform(a.points() + &shift).unwrap();
    // Midpoint rule over the half circle (W is even in theta).
    let steps = 3600;
    let mut quad = 0.0;
    for k in 0..steps {
        let t = std::f64::consts::PI * (k as f64 + 0.5) / steps as f64;
        let dir = array![[t.cos(), t.sin()]];
        let pa = DiscreteMeasure::on_line(a.points().dot(&dir.row(0)).as_slice().unwrap(), a.weights().clone()).unwrap();
        let pb = DiscreteMeasure::on_line(b.points().dot(&dir.row(0)).as_slice().unwrap(), b.weights().clone()).unwrap();
        quad += w_p_1d_pow(&pa, &pb, 2.0).unwrap() / steps as f64;
    }
    let oracle = quad.sqrt();
    assert!((oracle - shift.dot(&shift).sqrt() / 2f64.sqrt()).abs() < 1e-6);
    let mc = sliced_w(&a, &b, 2.0, 512, 2024).unwrap();
    assert!((mc - oracle).abs() <= 0.03 * oracle, "{mc} vs {oracle}");
}

#[test]
fn sliced_is_a_metric_on_fixed_directions() {
    let mut r = rng(80);
    let dirs = sphere_directions(3, 64, 9).unwrap();
    for _ in 0..20 {
        let (x, y, z) = (weighted_cloud(&mut r, 5, 3), weighted_cloud(&mut r, 6, 3), weighted_cloud(&mut r, 4, 3));
        let s = |u: &DiscreteMeasure, v: &DiscreteMeasure| sliced_w_with_directions(u, v, 2.0, &dirs).unwrap();
        assert!(s(&x, &y) >= 0.0);
        assert!((s(&x, &y) - s(&y, &x)).abs() < 1e-12);
        assert!(s(&x, &z) <= s(&x, &y) + s(&y, &z) + 1e-12);
    }
}

#[test]
fn sliced_gradient_matches_finite_differences() {
    let mut r = rng(81);
    let dirs = sphere_directions(2, 32, 4).unwrap();
    for _ in 0..10 {
        let x = cloud(&mut r, 8, 2);
        let y = cloud(&mut r, 8, 2);
        let (_, g) = sliced_energy_and_gradient(&x, &y, &dirs).unwrap();
        let h = 1e-5 * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        let dir = cloud(&mut r, 8, 2) - 0.5;
        let e = |t: f64| sliced_energy_and_gradient(&(&x + &(&dir * t)), &y, &dirs).unwrap().0;
        let fd = (e(h) - e(-h)) / (2.0 * h);
        let an = (&g * &dir).sum();
        assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-8), "{fd} vs {an}");
    }
}

#[test]
fn sliced_gradient_vanishes_at_the_target_and_descends() {
    let mut r = rng(82);
    let y = cloud(&mut r, 10, 2);
    let (e0, g0) = sliced_w_gradient(&y, &y, 16, 3).unwrap();
    assert_eq!(e0, 0.0);
    assert!(g0.iter().all(|v| *v == 0.0));
    let x = cloud(&mut r, 10, 2);
    let (e, g) = sliced_w_gradient(&x, &y, 16, 3).unwrap();
    let (e_next, _) = sliced_w_gradient(&(&x - &(&g * 0.1)), &y, 16, 3).unwrap();
    assert!(e_next < e);
}

#[test]
fn corrected_divergence_limits() {
    let mut r = rng(83);
    let a = weighted_cloud(&mut r, 8, 2);
    let b = weighted_cloud(&mut r, 7, 2);
    assert!(corrected_sinkhorn_divergence(&a, &a, 2.0, 0.05).unwrap().abs() < 1e-9);

    // Small epsilon: half the divergence approaches the exact W_p^p.
    let c = build_cost(&a, &b, 2.0).unwrap();
    let exact = network_simplex(a.weights(), b.weights(), &c).unwrap().value;
    let small = corrected_sinkhorn_divergence(&a, &b, 2.0, 1e-3 * c.sup_norm()).unwrap();
    assert!((small / 2.0 - exact).abs() <= 0.02 * exact, "{} vs {exact}", small / 2.0);

    // Large epsilon: the energy distance for cost |x - y|.
    let c1 = build_cost(&a, &b, 1.0).unwrap();
    let large = corrected_sinkhorn_divergence(&a, &b, 1.0, 1e3 * c1.sup_norm()).unwrap();
    let ed = mmd_squared(&a, &b, Kernel::energy(1.0).unwrap()).unwrap();
    assert!((large - ed).abs() <= 0.05 * ed, "{large} vs {ed}");
}

#[test]
fn wasserstein_is_not_hilbertian_but_sliced_is() {
    for p in [1.0, 2.0] {
        let eig = hilbertianity_counterexample(p).unwrap();
        assert!(eig > 1e-8, "p = {p}: {eig}");
    }
    let (corners, hists) = unit_square_grid_histograms();
    let dirs = sphere_directions(2, 40, 11).unwrap();
    let measures: Vec<DiscreteMeasure> = hists
        .iter()
        .map(|h| {
            let keep: Vec<usize> = (0..4).filter(|&i| h[i] > 0.0).collect();
            DiscreteMeasure::new(
                corners.select(ndarray::Axis(0), &keep),
                Histogram::probability(keep.iter().map(|&i| h[i]).collect::<Array1<f64>>()).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let n = measures.len();
    let d = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            sliced_w_with_directions(&measures[i], &measures[j], 2.0, &dirs).unwrap()
        }
    });
    let d = (&d + &d.t()) * 0.5;
    assert!(centered_max_eigenvalue(&d).unwrap() <= 1e-10);
}

#[test]
fn binary_cost_transport_is_half_the_l1_norm() {
    // With C = 1 - I the optimal plan keeps min(a_i, b_i) in place.
    let mut r = rng(84);
    for _ in 0..20 {
        let n = r.random_range(2..8);
        let a = random_hist(&mut r, n);
        let b = random_hist(&mut r, n);
        let c = CostMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 })).unwrap();
        let value = network_simplex(&a, &b, &c).unwrap().value;
        let l1 = (a.weights() - b.weights()).mapv(f64::abs).sum();
        let overlap: f64 = a.weights().iter().zip(b.weights()).map(|(x, y)| x.min(*y)).sum();
        assert!((value - 0.5 * l1).abs() < 1e-12);
        assert!((value - (1.0 - overlap)).abs() < 1e-12);
    }
}

fn rotated(points: &Array2<f64>, angle: f64, shift: [f64; 2]) -> Array2<f64> {
    let (c, s) = (angle.cos(), angle.sin());
    let rot = array![[c, s], [-s, c]];
    points.dot(&rot) + &array![shift[0], shift[1]]
}

#[test]
fn gw_of_a_space_with_itself_or_an_isometric_copy() {
    let mut r = rng(85);
    let pts = cloud(&mut r, 8, 2);
    let w = random_hist(&mut r, 8);
    let x = MetricMeasureSpace::from_points(&pts, w.clone()).unwrap();
    let same = entropic_gw(&x, &x, 1e-3, 100).unwrap();
    assert!(same.energy <= 1e-6, "{}", same.energy);

    // Rotate, translate and permute the copy.
    let perm = [3, 0, 6, 1, 7, 2, 5, 4];
    let moved = rotated(&pts, 0.7, [2.0, -1.0]);
    let permuted = Array2::from_shape_fn((8, 2), |(i, k)| moved[[perm[i], k]]);
    let wp = Histogram::probability(perm.iter().map(|&i| w.weights()[i]).collect::<Array1<f64>>()).unwrap();
    let y = MetricMeasureSpace::from_points(&permuted, wp).unwrap();
    let sol = entropic_gw(&x, &y, 1e-3, 100).unwrap();
    assert!(sol.energy <= 1e-6, "{}", sol.energy);
    for i in 0..8 {
        let j = perm.iter().position(|&p| p == i).unwrap();
        assert!(sol.plan.matrix()[[i, j]] > 0.99 * w.weights()[i]);
    }
}

#[test]
fn gw_matches_permutation_search_for_four_points() {
    let mut r = rng(86);
    let perms = permutations(4);
    let mut misses = Vec::new();
    for trial in 0..20 {
        let u = Histogram::uniform(4).unwrap();
        let x = MetricMeasureSpace::from_points(&cloud(&mut r, 4, 2), u.clone()).unwrap();
        let y = MetricMeasureSpace::from_points(&cloud(&mut r, 4, 2), u).unwrap();
        let best = perms
            .iter()
            .map(|p| {
                let plan = Array2::from_shape_fn((4, 4), |(i, j)| if p[i] == j { 0.25 } else { 0.0 });
                gw_energy(&x, &y, &plan)
            })
            .fold(f64::INFINITY, f64::min);
        let sol = entropic_gw(&x, &y, 1e-3, 200).unwrap();
        assert!(sol.energy >= best - 1e-12);
        if sol.energy - best > 1e-6 {
            misses.push((trial, sol.energy, best));
        }
    }
    assert!(misses.is_empty(), "{} of 20 runs stop at a worse local minimum: {misses:?}", misses.len());
}

#[test]
fn gw_energy_trace_is_nonincreasing_and_plans_are_couplings() {
    let mut r = rng(87);
    let x = MetricMeasureSpace::from_points(&cloud(&mut r, 10, 2), random_hist(&mut r, 10)).unwrap();
    let y = MetricMeasureSpace::from_points(&cloud(&mut r, 7, 3), random_hist(&mut r, 7)).unwrap();
    let sol = entropic_gw(&x, &y, 5e-3, 50).unwrap();
    assert!(sol.energy_trace.windows(2).all(|w| w[1] <= w[0]));
    let res = otkit::validate_plan(&sol.plan, x.weights(), y.weights()).unwrap();
    assert!(res.total() <= 1e-8);
    // Initialization is the independent coupling.
    let indep = x.weights().weights().clone().insert_axis(ndarray::Axis(1))
        .dot(&y.weights().weights().clone().insert_axis(ndarray::Axis(0)));
    assert!((sol.energy_trace[0] - gw_energy(&x, &y, &indep)).abs() < 1e-15);
}

#[test]
fn metric_space_validation() {
    let u = Histogram::uniform(2).unwrap();
    assert!(MetricMeasureSpace::new(array![[0.0, 1.0], [2.0, 0.0]], u.clone()).is_err());
    assert!(MetricMeasureSpace::new(array![[1.0, 1.0], [1.0, 0.0]], u.clone()).is_err());
    assert!(MetricMeasureSpace::new(array![[0.0, -1.0], [-1.0, 0.0]], u).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn divergences_are_jointly_homogeneous(seed in 0u64..500, lam in 0.01f64..20.0) {
        let mut r = rng(seed);
        let a = random_hist(&mut r, 5);
        let b = random_hist(&mut r, 5);
        let sa = Histogram::mass(a.weights() * lam).unwrap();
        let sb = Histogram::mass(b.weights() * lam).unwrap();
        for k in KINDS {
            let base = phi_divergence(k, &a, &b).unwrap();
            let scaled = phi_divergence(k, &sa, &sb).unwrap();
            prop_assert!((scaled - lam * base).abs() <= 1e-10 * (1.0 + scaled.abs()));
        }
    }

    #[test]
    fn gaussian_mmd_is_nonnegative_and_symmetric(seed in 0u64..500, sigma in 0.05f64..3.0) {
        let mut r = rng(seed);
        let a = weighted_cloud(&mut r, 5, 2);
        let b = weighted_cloud(&mut r, 4, 2);
        let k = Kernel::gaussian(sigma).unwrap();
        let ab = mmd_squared(&a, &b, k).unwrap();
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - mmd_squared(&b, &a, k).unwrap()).abs() < 1e-14);
    }
}
