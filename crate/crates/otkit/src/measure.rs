//! Measures, costs, couplings and potentials shared by every solver.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::tolerances::PROBABILITY_SUM;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassMode {
    /// Weights must sum to one.
    Probability,
    /// Arbitrary positive total mass (unbalanced problems).
    Mass,
}

/// Nonnegative weight vector on a fixed index set.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    weights: Array1<f64>,
    mode: MassMode,
}

impl Histogram {
    pub fn new(weights: Array1<f64>, mode: MassMode) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidHistogram("empty weight vector".into()));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidHistogram(format!(
                "entry {i} is {} (must be finite and >= 0)",
                weights[i]
            )));
        }
        if mode == MassMode::Probability {
            let total = weights.sum();
            if (total - 1.0).abs() > PROBABILITY_SUM {
                return Err(Error::InvalidHistogram(format!(
                    "weights sum to {total}, expected 1"
                )));
            }
        }
        Ok(Histogram { weights, mode })
    }

    pub fn probability(weights: impl Into<Array1<f64>>) -> Result<Self> {
        Self::new(weights.into(), MassMode::Probability)
    }

    pub fn mass(weights: impl Into<Array1<f64>>) -> Result<Self> {
        Self::new(weights.into(), MassMode::Mass)
    }

    /// Rescales the weights to sum to one.
    pub fn normalized(weights: impl Into<Array1<f64>>) -> Result<Self> {
        let w: Array1<f64> = weights.into();
        let total = w.sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidHistogram(format!(
                "cannot normalize weights with total {total}"
            )));
        }
        Self::new(w / total, MassMode::Probability)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidHistogram("empty weight vector".into()));
        }
        Self::probability(Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn mode(&self) -> MassMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.sum()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.weights
    }
}

/// Weighted point cloud `sum_i a_i delta_{x_i}` in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Array2<f64>,
    weights: Histogram,
}

impl DiscreteMeasure {
    /// Zero-weight atoms are rejected; see [`DiscreteMeasure::dropping_zeros`].
    pub fn new(points: Array2<f64>, weights: Histogram) -> Result<Self> {
        if points.ncols() == 0 {
            return Err(Error::Dimension("points must have d >= 1 columns".into()));
        }
        if points.nrows() != weights.len() {
            return Err(Error::Shape {
                expected: vec![weights.len()],
                got: vec![points.nrows()],
            });
        }
        if let Some(i) = weights.weights().iter().position(|&w| w == 0.0) {
            return Err(Error::ZeroWeight(i));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(DiscreteMeasure { points, weights })
    }

    pub fn dropping_zeros(points: Array2<f64>, weights: Histogram) -> Result<Self> {
        let keep: Vec<usize> = (0..weights.len())
            .filter(|&i| weights.weights()[i] > 0.0)
            .collect();
        if points.nrows() != weights.len() {
            return Err(Error::Shape {
                expected: vec![weights.len()],
                got: vec![points.nrows()],
            });
        }
        let pts = points.select(Axis(0), &keep);
        let w = Histogram::new(weights.weights().select(Axis(0), &keep), weights.mode())?;
        Self::new(pts, w)
    }

    /// Uniform weights on the rows of `points`.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        Self::new(points, Histogram::uniform(n)?)
    }

    /// A 1-D measure from positions and weights.
    pub fn on_line(positions: &[f64], weights: Histogram) -> Result<Self> {
        let pts = Array2::from_shape_vec((positions.len(), 1), positions.to_vec())
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Self::new(pts, weights)
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Histogram {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroundCost {
    /// `|x - y|_2^power`.
    EuclideanPower(f64),
    /// User-supplied nonnegative matrix.
    Custom,
    /// Possibly negative entries (inner costs of Gromov–Wasserstein).
    Signed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
    ground: GroundCost,
}

impl CostMatrix {
    /// Finite, nonnegative entries.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        Self::with_ground(entries, GroundCost::Custom)
    }

    pub fn with_ground(entries: Array2<f64>, ground: GroundCost) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("empty cost matrix".into()));
        }
        if let Some(x) = entries.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite cost entry {x}")));
        }
        if ground != GroundCost::Signed {
            if let Some(x) = entries.iter().find(|&&x| x < 0.0) {
                return Err(Error::InvalidArgument(format!("negative cost entry {x}")));
            }
        }
        Ok(CostMatrix { entries, ground })
    }

    pub fn signed(entries: Array2<f64>) -> Result<Self> {
        Self::with_ground(entries, GroundCost::Signed)
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn ground(&self) -> GroundCost {
        self.ground
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }

    /// `max |C_ij|`.
    pub fn sup_norm(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn transpose(&self) -> CostMatrix {
        CostMatrix {
            entries: self.entries.t().to_owned(),
            ground: self.ground,
        }
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.entries
    }
}

/// `C_ij = |x_i - y_j|_2^power`.
pub fn build_cost(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    power: f64,
) -> Result<CostMatrix> {
    if source.dim() != target.dim() {
        return Err(Error::Dimension(format!(
            "source has d = {}, target has d = {}",
            source.dim(),
            target.dim()
        )));
    }
    if !(power > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be > 0, got {power}")));
    }
    Ok(CostMatrix {
        entries: pairwise_cost(source.points(), target.points(), power),
        ground: GroundCost::EuclideanPower(power),
    })
}

pub(crate) fn pairwise_cost(x: &Array2<f64>, y: &Array2<f64>, power: f64) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), y.nrows()), |(i, j)| {
        let sq: f64 = x
            .row(i)
            .iter()
            .zip(y.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if power == 2.0 {
            sq
        } else {
            sq.sqrt().powf(power)
        }
    })
}

/// Coupling between two histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    matrix: Array2<f64>,
    marginal_tolerance: f64,
}

impl TransportPlan {
    pub fn new(matrix: Array2<f64>, marginal_tolerance: f64) -> Self {
        TransportPlan {
            matrix,
            marginal_tolerance,
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn marginal_tolerance(&self) -> f64 {
        self.marginal_tolerance
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.dim()
    }

    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        (&self.matrix * cost.entries()).sum()
    }

    pub fn row_marginal(&self) -> Array1<f64> {
        self.matrix.sum_axis(Axis(1))
    }

    pub fn col_marginal(&self) -> Array1<f64> {
        self.matrix.sum_axis(Axis(0))
    }

    /// Entries strictly above `threshold`, row-major.
    pub fn support(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        self.matrix
            .indexed_iter()
            .filter(|(_, &p)| p > threshold)
            .map(|((i, j), &p)| (i, j, p))
            .collect()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.matrix
    }
}

/// Kantorovich potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
}

impl DualPair {
    pub fn new(f: Array1<f64>, g: Array1<f64>) -> Self {
        DualPair { f, g }
    }

    /// Shifts `(f + c, g - c)` so that `sum f = 0`.
    pub fn centered(&self) -> DualPair {
        let c = self.f.mean().unwrap_or(0.0);
        DualPair {
            f: &self.f - c,
            g: &self.g + c,
        }
    }

    pub fn objective(&self, a: &Histogram, b: &Histogram) -> f64 {
        self.f.dot(a.weights()) + self.g.dot(b.weights())
    }

    /// Largest violation `f_i + g_j - C_ij` together with its index.
    pub fn max_violation(&self, cost: &CostMatrix) -> (f64, (usize, usize)) {
        let mut worst = (f64::NEG_INFINITY, (0, 0));
        for ((i, j), &c) in cost.entries().indexed_iter() {
            let v = self.f[i] + self.g[j] - c;
            if v > worst.0 {
                worst = (v, (i, j));
            }
        }
        worst
    }

    pub fn is_feasible(&self, cost: &CostMatrix, tol: f64) -> bool {
        self.max_violation(cost).0 <= tol
    }
}

/// Exponentiated potentials: `(f, g) = eps (log u, log v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalings {
    pub u: Array1<f64>,
    pub v: Array1<f64>,
    pub epsilon: f64,
}

impl Scalings {
    pub fn to_duals(&self) -> DualPair {
        DualPair {
            f: self.u.mapv(|x| self.epsilon * x.ln()),
            g: self.v.mapv(|x| self.epsilon * x.ln()),
        }
    }

    pub fn from_duals(duals: &DualPair, epsilon: f64) -> Self {
        Scalings {
            u: duals.f.mapv(|x| (x / epsilon).exp()),
            v: duals.g.mapv(|x| (x / epsilon).exp()),
            epsilon,
        }
    }
}

/// l1 marginal violations of a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub row: f64,
    pub col: f64,
}

impl Residuals {
    pub fn total(&self) -> f64 {
        self.row + self.col
    }
}

/// `|P 1 - a|_1` and `|P^T 1 - b|_1`.
pub fn validate_plan(plan: &TransportPlan, a: &Histogram, b: &Histogram) -> Result<Residuals> {
    let (n, m) = plan.shape();
    if n != a.len() || m != b.len() {
        return Err(Error::Shape {
            expected: vec![a.len(), b.len()],
            got: vec![n, m],
        });
    }
    Ok(marginal_residuals(plan.matrix(), a.weights(), b.weights()))
}

pub(crate) fn marginal_residuals(p: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> Residuals {
    let row = (p.sum_axis(Axis(1)) - a).mapv(f64::abs).sum();
    let col = (p.sum_axis(Axis(0)) - b).mapv(f64::abs).sum();
    Residuals { row, col }
}

/// Row `i` is `(1/a_i) sum_j P_ij y_j`.
pub fn barycentric_projection(
    plan: &TransportPlan,
    a: &Histogram,
    targets: &DiscreteMeasure,
) -> Result<Array2<f64>> {
    let (n, m) = plan.shape();
    if n != a.len() || m != targets.len() {
        return Err(Error::Shape {
            expected: vec![a.len(), targets.len()],
            got: vec![n, m],
        });
    }
    if let Some(i) = a.weights().iter().position(|&w| w == 0.0) {
        return Err(Error::ZeroWeight(i));
    }
    let mut out = plan.matrix().dot(targets.points());
    for (mut row, &ai) in out.rows_mut().into_iter().zip(a.weights().iter()) {
        row /= ai;
    }
    Ok(out)
}

/// Moves every atom through `map`; weights and atom count are unchanged.
pub fn push_forward<F>(measure: &DiscreteMeasure, map: F) -> DiscreteMeasure
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    let rows: Vec<Array1<f64>> = measure.points().rows().into_iter().map(&map).collect();
    let d = rows.first().map_or(measure.dim(), |r| r.len());
    let mut points = Array2::zeros((rows.len(), d));
    for (mut dst, src) in points.rows_mut().into_iter().zip(rows.iter()) {
        dst.assign(src);
    }
    DiscreteMeasure {
        points,
        weights: measure.weights().clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn histogram_rejects_bad_input() {
        assert!(Histogram::probability(array![0.5, 0.6]).is_err());
        assert!(Histogram::probability(array![-0.1, 1.1]).is_err());
        assert!(Histogram::probability(Array1::<f64>::zeros(0)).is_err());
        assert!(Histogram::mass(array![2.0, 3.0]).is_ok());
        let h = Histogram::normalized(array![1.0, 3.0]).unwrap();
        assert_eq!(h.weights(), &array![0.25, 0.75]);
    }

    #[test]
    fn zero_weight_atoms() {
        let pts = array![[0.0], [1.0], [2.0]];
        let w = Histogram::probability(array![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(
            DiscreteMeasure::new(pts.clone(), w.clone()),
            Err(Error::ZeroWeight(1))
        );
        let m = DiscreteMeasure::dropping_zeros(pts, w).unwrap();
        assert_eq!(m.points(), &array![[0.0], [2.0]]);
    }

    #[test]
    fn cost_examples() {
        let x = DiscreteMeasure::uniform(array![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let y = DiscreteMeasure::uniform(array![[0.0, 1.0]]).unwrap();
        assert_eq!(build_cost(&x, &y, 2.0).unwrap().entries(), &array![[1.0], [2.0]]);
        let p = DiscreteMeasure::uniform(array![[0.3, 0.3]]).unwrap();
        assert_eq!(build_cost(&p, &p, 2.0).unwrap().entries(), &array![[0.0]]);
        let z = DiscreteMeasure::uniform(array![[0.0], [1.0]]).unwrap();
        assert!(matches!(build_cost(&x, &z, 2.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn residual_examples() {
        let a = Histogram::probability(array![0.3, 0.7]).unwrap();
        let b = Histogram::probability(array![0.6, 0.4]).unwrap();
        let outer = TransportPlan::new(
            Array2::from_shape_fn((2, 2), |(i, j)| a.weights()[i] * b.weights()[j]),
            0.0,
        );
        let r = validate_plan(&outer, &a, &b).unwrap();
        assert!(r.row < 1e-15 && r.col < 1e-15);
        let zero = TransportPlan::new(Array2::zeros((2, 2)), 0.0);
        let r = validate_plan(&zero, &a, &b).unwrap();
        assert!((r.row - 1.0).abs() < 1e-15 && (r.col - 1.0).abs() < 1e-15);
        let diag = TransportPlan::new(Array2::from_diag(a.weights()), 0.0);
        assert_eq!(validate_plan(&diag, &a, &a).unwrap().total(), 0.0);
        let bad = TransportPlan::new(Array2::zeros((3, 2)), 0.0);
        assert!(validate_plan(&bad, &a, &b).is_err());
    }

    #[test]
    fn projection_examples() {
        let y = DiscreteMeasure::uniform(array![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]).unwrap();
        let a = Histogram::uniform(3).unwrap();
        let perm = array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] / 3.0;
        let mapped = barycentric_projection(&TransportPlan::new(perm, 0.0), &a, &y).unwrap();
        assert_eq!(mapped, array![[4.0, 5.0], [0.0, 1.0], [2.0, 3.0]]);
        let outer = TransportPlan::new(Array2::from_elem((3, 3), 1.0 / 9.0), 0.0);
        let mapped = barycentric_projection(&outer, &a, &y).unwrap();
        for row in mapped.rows() {
            assert!((row[0] - 2.0).abs() < 1e-12 && (row[1] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn push_forward_examples() {
        let m = DiscreteMeasure::new(
            array![[0.0, 0.0], [1.0, 2.0]],
            Histogram::probability(array![0.25, 0.75]).unwrap(),
        )
        .unwrap();
        assert_eq!(push_forward(&m, |x| x.to_owned()), m);
        let shifted = push_forward(&m, |x| &x + &array![1.0, -1.0]);
        assert_eq!(shifted.points(), &array![[1.0, -1.0], [2.0, 1.0]]);
        assert_eq!(shifted.weights(), m.weights());
        let collapsed = push_forward(&m, |_| array![7.0]);
        assert_eq!(collapsed.len(), 2);
        assert_eq!(collapsed.weights().total(), m.weights().total());
    }
}
