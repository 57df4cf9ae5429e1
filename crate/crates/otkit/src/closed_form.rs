//! Closed-form transport: measures on the real line and Gaussians.

use ndarray::{Array1, Array2};

use crate::linalg::{min_eigenvalue, sqrtm_psd, sym_apply};
use crate::tolerances::EXACT_MARGINAL;
use crate::{DiscreteMeasure, Error, Result, TransportPlan};

/// Right-continuous CDF samples of a 1-D discrete measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantile1D {
    support: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Quantile1D {
    /// Atoms at equal positions are merged by summing their weights.
    pub fn new(measure: &DiscreteMeasure) -> Result<Self> {
        if measure.dim() != 1 {
            return Err(Error::Dimension(format!("expected d = 1, got {}", measure.dim())));
        }
        let mut atoms: Vec<(f64, f64)> = measure
            .points()
            .column(0)
            .iter()
            .zip(measure.weights().weights().iter())
            .map(|(&x, &w)| (x, w))
            .collect();
        atoms.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut support: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut cumulative: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for (x, w) in atoms {
            acc += w;
            if support.last() == Some(&x) {
                *cumulative.last_mut().unwrap() = acc;
            } else {
                support.push(x);
                cumulative.push(acc);
            }
        }
        Ok(Quantile1D { support, cumulative })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// `C(x) = alpha((-inf, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.support.partition_point(|&s| s <= x);
        if k == 0 { 0.0 } else { self.cumulative[k - 1] }
    }

    /// Pseudoinverse `inf { x : C(x) >= r }`.
    pub fn quantile(&self, r: f64) -> f64 {
        let k = self.cumulative.partition_point(|&c| c < r);
        self.support[k.min(self.support.len() - 1)]
    }
}

/// Pieces `(k, l, mass)` of the monotone coupling between two sorted atom
/// lists with equal total mass.
fn monotone_sweep(wa: &[f64], wb: &[f64]) -> Vec<(usize, usize, f64)> {
    let (n, m) = (wa.len(), wb.len());
    let mut out = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (wa[0], wb[0]);
    loop {
        let t = ra.min(rb);
        if t > 0.0 {
            out.push((i, j, t));
        }
        if i == n - 1 && j == m - 1 {
            break;
        }
        if (ra <= rb && i < n - 1) || j == m - 1 {
            rb -= ra;
            i += 1;
            ra = wa[i];
        } else {
            ra -= rb;
            j += 1;
            rb = wb[j];
        }
    }
    out
}

fn check_line_pair(alpha: &DiscreteMeasure, beta: &DiscreteMeasure) -> Result<()> {
    if alpha.dim() != 1 || beta.dim() != 1 {
        return Err(Error::Dimension("1-D measures required".into()));
    }
    let (sa, sb) = (alpha.weights().total(), beta.weights().total());
    if (sa - sb).abs() > EXACT_MARGINAL {
        return Err(Error::MassMismatch(sa, sb));
    }
    Ok(())
}

/// `W_p^p = int_0^1 |Ca^-1(r) - Cb^-1(r)|^p dr`, by merging the two quantile
/// step functions.
pub fn w_p_1d_pow(alpha: &DiscreteMeasure, beta: &DiscreteMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    check_line_pair(alpha, beta)?;
    let qa = Quantile1D::new(alpha)?;
    let qb = Quantile1D::new(beta)?;
    let wa = increments(&qa.cumulative);
    let wb = increments(&qb.cumulative);
    Ok(monotone_sweep(&wa, &wb)
        .into_iter()
        .map(|(k, l, mass)| mass * (qa.support[k] - qb.support[l]).abs().powf(p))
        .sum())
}

/// `W_p` between 1-D measures.
pub fn w_p_1d(alpha: &DiscreteMeasure, beta: &DiscreteMeasure, p: f64) -> Result<f64> {
    Ok(w_p_1d_pow(alpha, beta, p)?.powf(1.0 / p))
}

fn increments(cumulative: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    cumulative
        .iter()
        .map(|&c| {
            let w = c - prev;
            prev = c;
            w
        })
        .collect()
}

/// `W_1 = int |Ca(x) - Cb(x)| dx`.
pub fn w1_1d_cdf(alpha: &DiscreteMeasure, beta: &DiscreteMeasure) -> Result<f64> {
    check_line_pair(alpha, beta)?;
    let qa = Quantile1D::new(alpha)?;
    let qb = Quantile1D::new(beta)?;
    let mut xs: Vec<f64> = qa.support.iter().chain(qb.support.iter()).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    Ok(xs
        .windows(2)
        .map(|w| (qa.cdf(w[0]) - qb.cdf(w[0])).abs() * (w[1] - w[0]))
        .sum())
}

/// Monotone rearrangement: for each source atom (original order), the list of
/// `(target position, mass)` it sends, in increasing target order.
pub fn monge_map_1d(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let plan = monotone_plan_1d(alpha, beta)?;
    let y = beta.points().column(0);
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&p, &q| y[p].total_cmp(&y[q]));
    Ok(plan
        .matrix()
        .rows()
        .into_iter()
        .map(|row| {
            order
                .iter()
                .filter(|&&j| row[j] > 0.0)
                .map(|&j| (y[j], row[j]))
                .collect()
        })
        .collect())
}

/// The coupling induced by the monotone rearrangement, in the original atom order.
pub fn monotone_plan_1d(alpha: &DiscreteMeasure, beta: &DiscreteMeasure) -> Result<TransportPlan> {
    check_line_pair(alpha, beta)?;
    let sorted = |m: &DiscreteMeasure| {
        let x = m.points().column(0);
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&p, &q| x[p].total_cmp(&x[q]));
        idx
    };
    let ia = sorted(alpha);
    let ib = sorted(beta);
    let wa: Vec<f64> = ia.iter().map(|&k| alpha.weights().weights()[k]).collect();
    let wb: Vec<f64> = ib.iter().map(|&l| beta.weights().weights()[l]).collect();
    let mut p = Array2::zeros((alpha.len(), beta.len()));
    for (k, l, mass) in monotone_sweep(&wa, &wb) {
        p[[ia[k], ib[l]]] += mass;
    }
    Ok(TransportPlan::new(p, EXACT_MARGINAL))
}

/// Normal distribution `N(mean, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Array1<f64>,
    covariance: Array2<f64>,
}

impl Gaussian {
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Dimension("empty mean".into()));
        }
        if covariance.dim() != (d, d) {
            return Err(Error::Shape {
                expected: vec![d, d],
                got: vec![covariance.nrows(), covariance.ncols()],
            });
        }
        let asym = (&covariance - &covariance.t()).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if asym > 1e-12 {
            return Err(Error::InvalidArgument(format!("covariance not symmetric ({asym})")));
        }
        let low = min_eigenvalue(&covariance);
        if low < -1e-12 {
            return Err(Error::NotPsd(low));
        }
        Ok(Gaussian { mean, covariance })
    }

    pub fn scalar(mean: f64, std: f64) -> Result<Self> {
        Self::new(Array1::from_elem(1, mean), Array2::from_elem((1, 1), std * std))
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Squared Bures distance `tr(A + B - 2 (A^1/2 B A^1/2)^1/2)`.
pub fn bures_squared(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let ra = sqrtm_psd(a);
    let cross = sqrtm_psd(&ra.dot(b).dot(&ra));
    (a.diag().sum() + b.diag().sum() - 2.0 * cross.diag().sum()).max(0.0)
}

/// Squared W2 between Gaussians: mean term plus Bures term.
pub fn gaussian_w2(alpha: &Gaussian, beta: &Gaussian) -> Result<f64> {
    if alpha.dim() != beta.dim() {
        return Err(Error::Dimension(format!("{} vs {}", alpha.dim(), beta.dim())));
    }
    let dm = &alpha.mean - &beta.mean;
    Ok(dm.dot(&dm) + bures_squared(&alpha.covariance, &beta.covariance))
}

/// `x -> matrix x + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: Array2<f64>,
    pub shift: Array1<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        self.matrix.dot(x) + &self.shift
    }
}

/// Optimal map `x -> m_b + A (x - m_a)` with
/// `A = Sa^-1/2 (Sa^1/2 Sb Sa^1/2)^1/2 Sa^-1/2`.
pub fn gaussian_monge_map(alpha: &Gaussian, beta: &Gaussian) -> Result<AffineMap> {
    if alpha.dim() != beta.dim() {
        return Err(Error::Dimension(format!("{} vs {}", alpha.dim(), beta.dim())));
    }
    let sa = &alpha.covariance;
    let scale = sa.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    if min_eigenvalue(sa) <= 1e-12 * scale {
        return Err(Error::Singular);
    }
    let ra = sqrtm_psd(sa);
    let ra_inv = sym_apply(sa, |x| 1.0 / x.sqrt());
    let middle = sqrtm_psd(&ra.dot(&beta.covariance).dot(&ra));
    let a = ra_inv.dot(&middle).dot(&ra_inv);
    let a = (&a + &a.t()) * 0.5;
    let shift = &beta.mean - &a.dot(&alpha.mean);
    Ok(AffineMap { matrix: a, shift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Histogram;
    use ndarray::array;

    fn line(x: &[f64], w: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::on_line(x, Histogram::probability(Array1::from(w.to_vec())).unwrap()).unwrap()
    }

    #[test]
    fn translation() {
        let a = line(&[0.0, 1.0, 3.0], &[0.2, 0.5, 0.3]);
        let b = line(&[0.7, 1.7, 3.7], &[0.2, 0.5, 0.3]);
        for p in [1.0, 2.0, 3.5] {
            assert!((w_p_1d(&a, &b, p).unwrap() - 0.7).abs() < 1e-12);
        }
        assert!((w1_1d_cdf(&a, &b).unwrap() - 0.7).abs() < 1e-12);
        assert!(w_p_1d(&a, &b, 0.5).is_err());
    }

    #[test]
    fn diracs() {
        let a = line(&[0.0], &[1.0]);
        let b = line(&[2.5], &[1.0]);
        assert!((w1_1d_cdf(&a, &b).unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(w1_1d_cdf(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn quantile_merges_ties() {
        let a = line(&[1.0, 0.0, 1.0], &[0.25, 0.5, 0.25]);
        let q = Quantile1D::new(&a).unwrap();
        assert_eq!(q.support(), &[0.0, 1.0]);
        assert_eq!(q.cumulative(), &[0.5, 1.0]);
        assert_eq!(q.quantile(0.5), 0.0);
        assert_eq!(q.quantile(0.51), 1.0);
        assert_eq!(q.cdf(-1.0), 0.0);
        assert_eq!(q.cdf(0.5), 0.5);
    }

    #[test]
    fn two_to_one_map() {
        let a = line(&[0.0, 1.0], &[0.5, 0.5]);
        let b = line(&[4.0], &[1.0]);
        let map = monge_map_1d(&a, &b).unwrap();
        assert_eq!(map, vec![vec![(4.0, 0.5)], vec![(4.0, 0.5)]]);
    }

    #[test]
    fn gaussian_examples() {
        let s = array![[2.0, 0.3], [0.3, 1.0]];
        let g0 = Gaussian::new(array![0.0, 0.0], s.clone()).unwrap();
        let g1 = Gaussian::new(array![3.0, 0.0], s).unwrap();
        assert!(gaussian_w2(&g0, &g0).unwrap().abs() < 1e-12);
        assert!((gaussian_w2(&g0, &g1).unwrap() - 9.0).abs() < 1e-12);
        let r = array![1.0, 4.0];
        let q = array![9.0, 0.25];
        let d0 = Gaussian::new(array![0.0, 0.0], Array2::from_diag(&r)).unwrap();
        let d1 = Gaussian::new(array![0.0, 0.0], Array2::from_diag(&q)).unwrap();
        let hell: f64 = r.iter().zip(q.iter()).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum();
        assert!((gaussian_w2(&d0, &d1).unwrap() - hell).abs() < 1e-12);
        assert!(Gaussian::new(array![0.0], array![[-1.0]]).is_err());
    }

    #[test]
    fn scalar_map() {
        let a = Gaussian::scalar(1.0, 2.0).unwrap();
        let b = Gaussian::scalar(-1.0, 0.5).unwrap();
        let t = gaussian_monge_map(&a, &b).unwrap();
        assert!((t.matrix[[0, 0]] - 0.25).abs() < 1e-12);
        let id = gaussian_monge_map(&a, &a).unwrap();
        assert!((id.matrix[[0, 0]] - 1.0).abs() < 1e-12 && id.shift[0].abs() < 1e-12);
        let singular = Gaussian::new(array![0.0], array![[0.0]]).unwrap();
        assert_eq!(gaussian_monge_map(&singular, &a), Err(Error::Singular));
    }
}
