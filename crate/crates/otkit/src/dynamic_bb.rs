//! Dynamic transport: McCann interpolation of discrete plans and the
//! Benamou–Brenier problem on a staggered space-time grid, solved by
//! Douglas–Rachford splitting.
//!
//! Grids live on `[0, 1]^d` with `n_k` cells along axis `k` and `T` time
//! steps. Densities hold the mass of each cell and momenta hold the mass
//! crossing each face per time step, so the discrete continuity equation is
//! `a[k+1] - a[k] + div J[k] = 0`. The reported value is the physical
//! kinetic energy `T sum_k sum_i sum_d (J_d / n_d)^2 / a`, an estimate of
//! `W2^2` between the two grid measures.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn, Slice};

use crate::tolerances::PROBABILITY_SUM;
use crate::{validate_plan, DiscreteMeasure, Error, Histogram, Result, TransportPlan};

/// `|J|^2 / a` for `a > 0`, `0` at `(0, 0)`, `+inf` otherwise.
pub fn theta(a: f64, j: &[f64]) -> f64 {
    let sq: f64 = j.iter().map(|x| x * x).sum();
    if a > 0.0 {
        sq / a
    } else if a == 0.0 && sq == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Largest real root of `y^3 - p y^2 - q` for `q > 0`: Cardano's formula
/// followed by a few Newton steps.
fn cubic_root(p: f64, q: f64) -> f64 {
    // y = z + p / 3 gives z^3 + s z + r = 0.
    let s = -p * p / 3.0;
    let r = -2.0 * p * p * p / 27.0 - q;
    let disc = (r / 2.0).powi(2) + (s / 3.0).powi(3);
    let z = if disc >= 0.0 {
        let sq = disc.sqrt();
        (-r / 2.0 + sq).cbrt() + (-r / 2.0 - sq).cbrt()
    } else {
        let m = 2.0 * (-s / 3.0).sqrt();
        let arg = (3.0 * r / (s * m)).clamp(-1.0, 1.0);
        m * (arg.acos() / 3.0).cos()
    };
    let mut y = z + p / 3.0;
    for _ in 0..4 {
        let f = y * y * (y - p) - q;
        let df = y * (3.0 * y - 2.0 * p);
        if df <= 0.0 {
            break;
        }
        let next = y - f / df;
        if !next.is_finite() || next == y {
            break;
        }
        y = next;
    }
    y
}

/// `argmin_{a', J'} (|a - a'|^2 + |J - J'|^2) / 2 + gamma theta(a', J')`.
/// The optimal `J' = a' J / (a' + 2 gamma)` with `a'` the largest root of
/// `(a' - a)(a' + 2 gamma)^2 = gamma |J|^2`; `(0, 0)` when that root is not
/// positive.
pub fn theta_prox(a: f64, j: &[f64], gamma: f64) -> (f64, Vec<f64>) {
    let sq: f64 = j.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return (a.max(0.0), vec![0.0; j.len()]);
    }
    let y = cubic_root(a + 2.0 * gamma, gamma * sq);
    let a_new = y - 2.0 * gamma;
    if !(a_new > 0.0) {
        return (0.0, vec![0.0; j.len()]);
    }
    let scale = a_new / (a_new + 2.0 * gamma);
    (a_new, j.iter().map(|x| x * scale).collect())
}

/// Density on `T + 1` time slices and one momentum array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredField {
    /// Shape `(T + 1, n_1, ..., n_d)`.
    pub density: ArrayD<f64>,
    /// Entry `k` has shape `(T, n_1, ..., n_k + 1, ..., n_d)`.
    pub momentum: Vec<ArrayD<f64>>,
}

impl StaggeredField {
    /// Zero momentum and a density linear in time between the endpoints.
    pub fn linear(alpha0: &ArrayD<f64>, alpha1: &ArrayD<f64>, time_steps: usize) -> Result<Self> {
        check_endpoints(alpha0, alpha1)?;
        if time_steps == 0 {
            return Err(Error::InvalidArgument("need at least one time step".into()));
        }
        let grid = alpha0.shape().to_vec();
        let mut shape = vec![time_steps + 1];
        shape.extend_from_slice(&grid);
        let mut density = ArrayD::zeros(IxDyn(&shape));
        for (k, mut slice) in density.axis_iter_mut(Axis(0)).enumerate() {
            let t = k as f64 / time_steps as f64;
            slice.assign(&(alpha0 * (1.0 - t) + alpha1 * t));
        }
        let momentum = (0..grid.len())
            .map(|d| ArrayD::zeros(IxDyn(&momentum_shape(&grid, time_steps, d))))
            .collect();
        Ok(StaggeredField { density, momentum })
    }

    pub fn time_steps(&self) -> usize {
        self.density.shape()[0] - 1
    }

    pub fn grid_shape(&self) -> &[usize] {
        &self.density.shape()[1..]
    }

    /// Density at time slice `k` (time `k / T`).
    pub fn slice(&self, k: usize) -> ArrayD<f64> {
        self.density.index_axis(Axis(0), k).to_owned()
    }

    /// `T sum theta(I a, (I J_d / n_d)_d)` with midpoint interpolation.
    pub fn kinetic_energy(&self) -> f64 {
        let t = self.time_steps();
        let grid = self.grid_shape().to_vec();
        let scaled: Vec<ArrayD<f64>> = self
            .momentum
            .iter()
            .enumerate()
            .map(|(d, j)| j * ((t as f64).sqrt() / grid[d] as f64))
            .collect();
        let (a, js) = interpolate(&self.density, &scaled);
        total_theta(&a, &js)
    }
}

fn momentum_shape(grid: &[usize], time_steps: usize, axis: usize) -> Vec<usize> {
    let mut shape = vec![time_steps];
    shape.extend_from_slice(grid);
    shape[axis + 1] += 1;
    shape
}

fn check_endpoints(alpha0: &ArrayD<f64>, alpha1: &ArrayD<f64>) -> Result<()> {
    if alpha0.shape() != alpha1.shape() {
        return Err(Error::Shape {
            expected: alpha0.shape().to_vec(),
            got: alpha1.shape().to_vec(),
        });
    }
    if alpha0.ndim() == 0 || alpha0.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    for alpha in [alpha0, alpha1] {
        if alpha.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidHistogram("grid densities must be finite and >= 0".into()));
        }
    }
    let (m0, m1) = (alpha0.sum(), alpha1.sum());
    if (m0 - 1.0).abs() > PROBABILITY_SUM || (m1 - 1.0).abs() > PROBABILITY_SUM {
        return Err(Error::MassMismatch(m0, m1));
    }
    Ok(())
}

fn check_field(field: &StaggeredField, alpha0: &ArrayD<f64>) -> Result<()> {
    let t = field.time_steps();
    let grid = alpha0.shape();
    if field.grid_shape() != grid || field.momentum.len() != grid.len() {
        return Err(Error::Shape {
            expected: grid.to_vec(),
            got: field.grid_shape().to_vec(),
        });
    }
    for (d, j) in field.momentum.iter().enumerate() {
        let expect = momentum_shape(grid, t, d);
        if j.shape() != expect.as_slice() {
            return Err(Error::Shape {
                expected: expect,
                got: j.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Orthonormal DCT-II matrix; it diagonalizes the Neumann Laplacian.
fn dct_matrix(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(k, i)| {
        let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        s * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos()
    })
}

fn neumann_eigenvalues(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 4.0 * (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin().powi(2))
        .collect()
}

fn apply_along(mat: &Array2<f64>, x: &ArrayD<f64>, axis: usize) -> ArrayD<f64> {
    let mut out = ArrayD::zeros(x.raw_dim());
    for (src, mut dst) in x.lanes(Axis(axis)).into_iter().zip(out.lanes_mut(Axis(axis))) {
        dst.assign(&mat.dot(&src));
    }
    out
}

/// Orthogonal projection onto the continuity constraint for the weighted
/// equation `a[k+1] - a[k] + sum_d w_d div_d J_d = 0`, with the endpoint
/// slices and the boundary faces held fixed.
struct ContinuitySolver {
    weights: Vec<f64>,
    transforms: Vec<Array2<f64>>,
    inverse_eigen: ArrayD<f64>,
}

impl ContinuitySolver {
    fn new(grid: &[usize], time_steps: usize, weights: Vec<f64>) -> Self {
        let mut sizes = vec![time_steps];
        sizes.extend_from_slice(grid);
        let eig: Vec<Vec<f64>> = sizes.iter().map(|&n| neumann_eigenvalues(n)).collect();
        let inverse_eigen = ArrayD::from_shape_fn(IxDyn(&sizes), |idx| {
            let mut total = eig[0][idx[0]];
            for d in 0..grid.len() {
                total += weights[d] * weights[d] * eig[d + 1][idx[d + 1]];
            }
            if total > 1e-14 {
                1.0 / total
            } else {
                0.0
            }
        });
        ContinuitySolver {
            weights,
            transforms: sizes.iter().map(|&n| dct_matrix(n)).collect(),
            inverse_eigen,
        }
    }

    fn residual(&self, a: &ArrayD<f64>, js: &[ArrayD<f64>]) -> ArrayD<f64> {
        let t = a.shape()[0] - 1;
        let mut r = &a.slice_axis(Axis(0), Slice::from(1..=t)) - &a.slice_axis(Axis(0), Slice::from(0..t));
        for (d, j) in js.iter().enumerate() {
            let n = j.shape()[d + 1] - 1;
            let div = &j.slice_axis(Axis(d + 1), Slice::from(1..=n))
                - &j.slice_axis(Axis(d + 1), Slice::from(0..n));
            r.scaled_add(self.weights[d], &div);
        }
        r
    }

    fn project(
        &self,
        a: &mut ArrayD<f64>,
        js: &mut [ArrayD<f64>],
        alpha0: &ArrayD<f64>,
        alpha1: &ArrayD<f64>,
    ) {
        let t = a.shape()[0] - 1;
        a.index_axis_mut(Axis(0), 0).assign(alpha0);
        a.index_axis_mut(Axis(0), t).assign(alpha1);
        for (d, j) in js.iter_mut().enumerate() {
            let n = j.shape()[d + 1] - 1;
            j.index_axis_mut(Axis(d + 1), 0).fill(0.0);
            j.index_axis_mut(Axis(d + 1), n).fill(0.0);
        }
        let mut lambda = self.residual(a, js);
        for (axis, q) in self.transforms.iter().enumerate() {
            lambda = apply_along(q, &lambda, axis);
        }
        lambda *= &self.inverse_eigen;
        for (axis, q) in self.transforms.iter().enumerate() {
            lambda = apply_along(&q.t().to_owned(), &lambda, axis);
        }
        // a[k] -= lambda[k-1] - lambda[k] on interior slices.
        for k in 1..t {
            let delta = &lambda.index_axis(Axis(0), k - 1) - &lambda.index_axis(Axis(0), k);
            let mut slice = a.index_axis_mut(Axis(0), k);
            slice -= &delta;
        }
        // J_d[f] -= w_d (lambda[f-1] - lambda[f]) on interior faces.
        for (d, j) in js.iter_mut().enumerate() {
            let n = j.shape()[d + 1] - 1;
            for f in 1..n {
                let delta = (&lambda.index_axis(Axis(d + 1), f - 1) - &lambda.index_axis(Axis(d + 1), f))
                    * self.weights[d];
                let mut face = j.index_axis_mut(Axis(d + 1), f);
                face -= &delta;
            }
        }
    }
}

/// Orthogonal projection of `(a, J)` onto `{a[0] = alpha0, a[T] = alpha1,
/// zero flux through the boundary, a[k+1] - a[k] + div J[k] = 0}`.
pub fn continuity_projection(
    field: &StaggeredField,
    alpha0: &ArrayD<f64>,
    alpha1: &ArrayD<f64>,
) -> Result<StaggeredField> {
    check_endpoints(alpha0, alpha1)?;
    check_field(field, alpha0)?;
    let solver = ContinuitySolver::new(alpha0.shape(), field.time_steps(), vec![1.0; alpha0.ndim()]);
    let mut out = field.clone();
    solver.project(&mut out.density, &mut out.momentum, alpha0, alpha1);
    Ok(out)
}

/// `max |a[k+1] - a[k] + div J[k]|`.
pub fn continuity_residual(field: &StaggeredField) -> f64 {
    let d = field.momentum.len();
    let solver = ContinuitySolver {
        weights: vec![1.0; d],
        transforms: Vec::new(),
        inverse_eigen: ArrayD::zeros(IxDyn(&[0])),
    };
    solver
        .residual(&field.density, &field.momentum)
        .iter()
        .fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Midpoint averages `(x[i] + x[i+1]) / 2` along `axis`.
fn midpoints(x: &ArrayD<f64>, axis: usize) -> ArrayD<f64> {
    let n = x.shape()[axis] - 1;
    (&x.slice_axis(Axis(axis), Slice::from(0..n)) + &x.slice_axis(Axis(axis), Slice::from(1..=n))) * 0.5
}

fn interpolate(a: &ArrayD<f64>, js: &[ArrayD<f64>]) -> (ArrayD<f64>, Vec<ArrayD<f64>>) {
    (
        midpoints(a, 0),
        js.iter().enumerate().map(|(d, j)| midpoints(j, d + 1)).collect(),
    )
}

fn total_theta(a: &ArrayD<f64>, js: &[ArrayD<f64>]) -> f64 {
    let mut total = 0.0;
    let mut buf = vec![0.0; js.len()];
    for (idx, &x) in a.indexed_iter() {
        for (d, j) in js.iter().enumerate() {
            buf[d] = j[&idx];
        }
        total += theta(x, &buf);
    }
    total
}

/// Projection onto `{(x, y) : y = M x}` with `M` the midpoint average along
/// `axis`: `x = (I + M^T M)^(-1) (u + M^T v)`, `y = M x`. Each lane is a
/// symmetric tridiagonal solve.
fn couple(u: &ArrayD<f64>, v: &ArrayD<f64>, axis: usize) -> (ArrayD<f64>, ArrayD<f64>) {
    let len = u.shape()[axis];
    // I + M^T M: diagonal 5/4 at the ends and 3/2 inside, off-diagonal 1/4.
    let diag: Vec<f64> = (0..len)
        .map(|i| if i == 0 || i + 1 == len { 1.25 } else { 1.5 })
        .collect();
    // Thomas factorization shared by every lane.
    let mut c_prime = vec![0.0; len];
    let mut denom = vec![0.0; len];
    denom[0] = diag[0];
    for i in 1..len {
        c_prime[i - 1] = 0.25 / denom[i - 1];
        denom[i] = diag[i] - 0.25 * c_prime[i - 1];
    }
    let mut x = u.clone();
    for (mut xl, vl) in x.lanes_mut(Axis(axis)).into_iter().zip(v.lanes(Axis(axis))) {
        let mut rhs: Vec<f64> = xl.iter().copied().collect();
        for k in 0..len - 1 {
            rhs[k] += 0.5 * vl[k];
            rhs[k + 1] += 0.5 * vl[k];
        }
        rhs[0] /= denom[0];
        for i in 1..len {
            rhs[i] = (rhs[i] - 0.25 * rhs[i - 1]) / denom[i];
        }
        for i in (0..len - 1).rev() {
            rhs[i] -= c_prime[i] * rhs[i + 1];
        }
        for (dst, src) in xl.iter_mut().zip(rhs) {
            *dst = src;
        }
    }
    let y = midpoints(&x, axis);
    (x, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbOptions {
    pub time_steps: usize,
    pub iterations: usize,
    /// Douglas–Rachford step `gamma`.
    pub gamma: f64,
    /// Relaxation in `(0, 2)`.
    pub relaxation: f64,
}

impl Default for BbOptions {
    fn default() -> Self {
        BbOptions {
            time_steps: 32,
            iterations: 2000,
            gamma: 1.0 / 50.0,
            relaxation: 1.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BbSolution {
    /// Kinetic energy of the last proximal iterate, the `W2^2` estimate.
    pub value: f64,
    /// Satisfies the continuity equation and the endpoint conditions.
    pub field: StaggeredField,
    /// Energy of the proximal iterate after every iteration.
    pub objective_trace: Vec<f64>,
}

struct Iterate {
    a: ArrayD<f64>,
    js: Vec<ArrayD<f64>>,
    a_mid: ArrayD<f64>,
    js_mid: Vec<ArrayD<f64>>,
}

impl Iterate {
    fn combine(&self, other: &Iterate, s: f64, t: f64) -> Iterate {
        let mix = |x: &ArrayD<f64>, y: &ArrayD<f64>| x * s + y * t;
        Iterate {
            a: mix(&self.a, &other.a),
            js: self.js.iter().zip(&other.js).map(|(x, y)| mix(x, y)).collect(),
            a_mid: mix(&self.a_mid, &other.a_mid),
            js_mid: self.js_mid.iter().zip(&other.js_mid).map(|(x, y)| mix(x, y)).collect(),
        }
    }

    fn coupled(&self) -> Iterate {
        let (a, a_mid) = couple(&self.a, &self.a_mid, 0);
        let (js, js_mid) = self
            .js
            .iter()
            .zip(&self.js_mid)
            .enumerate()
            .map(|(d, (j, jm))| couple(j, jm, d + 1))
            .unzip();
        Iterate { a, js, a_mid, js_mid }
    }
}

fn prox_theta_field(a: &mut ArrayD<f64>, js: &mut [ArrayD<f64>], gamma: f64) {
    let mut buf = vec![0.0; js.len()];
    for (idx, x) in a.indexed_iter_mut() {
        for (d, j) in js.iter().enumerate() {
            buf[d] = j[&idx];
        }
        let (a_new, j_new) = theta_prox(*x, &buf, gamma);
        *x = a_new;
        for (d, j) in js.iter_mut().enumerate() {
            j[&idx] = j_new[d];
        }
    }
}

/// Douglas–Rachford on `F = Theta(a~, J~) + i_C(a, J)` and
/// `G = i_{a~ = I a, J~ = I J}`. Momenta are rescaled by `sqrt(T) / n_d`
/// internally so that `Theta` is the physical kinetic energy.
pub fn benamou_brenier(alpha0: &ArrayD<f64>, alpha1: &ArrayD<f64>, opts: &BbOptions) -> Result<BbSolution> {
    check_endpoints(alpha0, alpha1)?;
    if !(opts.gamma > 0.0) || !(opts.relaxation > 0.0 && opts.relaxation < 2.0) {
        return Err(Error::InvalidArgument(format!(
            "need gamma > 0 and relaxation in (0, 2), got {} and {}",
            opts.gamma, opts.relaxation
        )));
    }
    let t = opts.time_steps;
    let grid = alpha0.shape().to_vec();
    let scale: Vec<f64> = grid.iter().map(|&n| (t as f64).sqrt() / n as f64).collect();
    // Continuity in scaled momenta: a[k+1] - a[k] + sum_d div(J_d) / scale_d = 0.
    let solver = ContinuitySolver::new(&grid, t, scale.iter().map(|s| 1.0 / s).collect());
    let start = StaggeredField::linear(alpha0, alpha1, t)?;
    let (a_mid, js_mid) = interpolate(&start.density, &start.momentum);
    let mut x = Iterate {
        a: start.density,
        js: start.momentum,
        a_mid,
        js_mid,
    };
    let mut w = x.combine(&x, 1.0, 0.0);
    let mut trace = Vec::with_capacity(opts.iterations);
    let mut feasible = (x.a.clone(), x.js.clone());
    for _ in 0..opts.iterations {
        let mut z = x.combine(&w, 2.0, -1.0);
        solver.project(&mut z.a, &mut z.js, alpha0, alpha1);
        prox_theta_field(&mut z.a_mid, &mut z.js_mid, opts.gamma);
        let energy = total_theta(&z.a_mid, &z.js_mid);
        if !energy.is_finite() {
            return Err(Error::Diverged);
        }
        trace.push(energy);
        let step = z.combine(&x, opts.relaxation, -opts.relaxation);
        w = w.combine(&step, 1.0, 1.0);
        x = w.coupled();
        feasible = (z.a, z.js);
    }
    let (density, scaled) = feasible;
    let momentum: Vec<ArrayD<f64>> = scaled.iter().zip(&scale).map(|(j, s)| j / *s).collect();
    let field = StaggeredField { density, momentum };
    // The projected field may carry momentum on cells whose interpolated
    // density is a round-off zero, so the estimate is read off the
    // proximal iterate, which always has finite energy.
    let value = trace.last().copied().unwrap_or_else(|| field.kinetic_energy());
    Ok(BbSolution {
        value,
        field,
        objective_trace: trace,
    })
}

/// Grid density from samples of a nonnegative function at the cell centres
/// of `[0, 1]^d`, normalized to unit mass.
pub fn raster<F: Fn(&[f64]) -> f64>(shape: &[usize], density: F) -> Result<ArrayD<f64>> {
    let out = ArrayD::from_shape_fn(IxDyn(shape), |idx| {
        let x: Vec<f64> = (0..shape.len())
            .map(|d| (idx[d] as f64 + 0.5) / shape[d] as f64)
            .collect();
        density(&x)
    });
    let total = out.sum();
    if !(total > 0.0) || out.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidHistogram("raster density must be >= 0 with positive mass".into()));
    }
    Ok(out / total)
}

/// Atoms `(1 - t) x_i + t y_j` carrying `P_ij > 0`; coincident atoms merge.
pub fn mccann_interpolate(
    plan: &TransportPlan,
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    t: f64,
) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0, 1], got {t}")));
    }
    if alpha.dim() != beta.dim() {
        return Err(Error::Dimension(format!("{} vs {}", alpha.dim(), beta.dim())));
    }
    let residuals = validate_plan(plan, alpha.weights(), beta.weights())?;
    if residuals.total() > plan.marginal_tolerance().max(1e-9) {
        return Err(Error::InvalidArgument(format!(
            "plan violates the marginals by {}",
            residuals.total()
        )));
    }
    let d = alpha.dim();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut points: Vec<f64> = Vec::new();
    let mut masses: Vec<f64> = Vec::new();
    for ((i, j), &mass) in plan.matrix().indexed_iter() {
        if !(mass > 0.0) {
            continue;
        }
        let p: Vec<f64> = (0..d)
            .map(|k| {
                if t == 0.0 {
                    alpha.points()[[i, k]]
                } else if t == 1.0 {
                    beta.points()[[j, k]]
                } else {
                    (1.0 - t) * alpha.points()[[i, k]] + t * beta.points()[[j, k]]
                }
            })
            .collect();
        let key: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
        match index.get(&key) {
            Some(&slot) => masses[slot] += mass,
            None => {
                index.insert(key, masses.len());
                masses.push(mass);
                points.extend(p);
            }
        }
    }
    let n = masses.len();
    DiscreteMeasure::new(
        Array2::from_shape_vec((n, d), points).map_err(|e| Error::InvalidArgument(e.to_string()))?,
        Histogram::mass(Array1::from(masses))?,
    )
}

/// Snapshots of [`mccann_interpolate`] at the given times.
pub fn interpolation_path(
    plan: &TransportPlan,
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    times: &[f64],
) -> Result<Vec<(f64, DiscreteMeasure)>> {
    times
        .iter()
        .map(|&t| Ok((t, mccann_interpolate(plan, alpha, beta, t)?)))
        .collect()
}

/// Mass-weighted mean position of every time slice of a field.
pub fn density_centroids(field: &StaggeredField) -> Vec<Vec<f64>> {
    let grid = field.grid_shape().to_vec();
    field
        .density
        .axis_iter(Axis(0))
        .map(|slice| {
            let mut c = vec![0.0; grid.len()];
            let total = slice.sum();
            for (idx, &m) in slice.indexed_iter() {
                for d in 0..grid.len() {
                    c[d] += m * (idx[d] as f64 + 0.5) / grid[d] as f64;
                }
            }
            c.iter().map(|x| x / total).collect()
        })
        .collect()
}
