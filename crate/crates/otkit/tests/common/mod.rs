//! Shared oracles and generators for integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use otkit::{CostMatrix, Histogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strictly positive probability vector.
pub fn random_hist(rng: &mut ChaCha8Rng, n: usize) -> Histogram {
    let w: Array1<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    Histogram::normalized(w).unwrap()
}

pub fn random_int_cost(rng: &mut ChaCha8Rng, n: usize, m: usize, max: u32) -> CostMatrix {
    CostMatrix::new(Array2::from_shape_fn((n, m), |_| rng.random_range(0..=max) as f64)).unwrap()
}

pub fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostMatrix {
    CostMatrix::new(Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..1.0))).unwrap()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                rec(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Minimum of `sum_i C[i, s(i)]` over all permutations.
pub fn brute_assignment(c: &Array2<f64>) -> f64 {
    permutations(c.nrows())
        .iter()
        .map(|s| s.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for s in start..n {
            cur.push(s);
            rec(s + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Optimal transport value by enumerating every basic solution: each choice
/// of `n + m - 1` cells whose marginal equations have a unique nonnegative
/// solution is a vertex of the transportation polytope.
pub fn vertex_enumeration(a: &[f64], b: &[f64], c: &Array2<f64>) -> f64 {
    let (n, m) = (a.len(), b.len());
    let k = n + m - 1;
    let rhs = DVector::from_iterator(n + m, a.iter().chain(b.iter()).copied());
    let mut best = f64::INFINITY;
    for cells in subsets(n * m, k) {
        let mat = DMatrix::from_fn(n + m, k, |r, col| {
            let (i, j) = (cells[col] / m, cells[col] % m);
            if (r < n && r == i) || (r >= n && r - n == j) { 1.0 } else { 0.0 }
        });
        let svd = mat.clone().svd(true, true);
        if svd.rank(1e-9) < k {
            continue;
        }
        let x = svd.solve(&rhs, 1e-12).unwrap();
        if (&mat * &x - &rhs).amax() > 1e-9 || x.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let val: f64 = cells.iter().zip(x.iter()).map(|(&cell, &v)| v * c[[cell / m, cell % m]]).sum();
        best = best.min(val);
    }
    best
}

/// Union-find cycle check on the support graph of a plan.
pub fn support_is_acyclic(p: &Array2<f64>, threshold: f64) -> bool {
    let (n, m) = p.dim();
    let mut parent: Vec<usize> = (0..n + m).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let nx = p[y];
            p[y] = r;
            y = nx;
        }
        r
    }
    for ((i, j), &x) in p.indexed_iter() {
        if x > threshold {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, n + j));
            if ri == rj {
                return false;
            }
            parent[ri] = rj;
        }
    }
    true
}

pub fn max_abs_diff(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    x.iter().zip(y.iter()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}
