//! Cubic regression spline bases, identifiability constraints and tensor
//! products.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::stats::quantile_sorted;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_TENSOR_K: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("basis size k = {0} is below the minimum of 4")]
    TooSmall(usize),
    #[error("`{var}` has {found} distinct values, basis size k = {k} needs at least k")]
    TooFewDistinct { var: String, k: usize, found: usize },
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
}

/// Natural cubic spline parameterized by its values at the knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicRegressionSpline {
    knots: Vec<f64>,
    /// Maps knot values to knot second derivatives.
    f: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl CubicRegressionSpline {
    /// Knots at `k` evenly spaced quantiles of the distinct values of `x`.
    pub fn new(var: &str, x: &[f64], k: usize) -> Result<Self, BasisError> {
        if k < 4 {
            return Err(BasisError::TooSmall(k));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BasisError::NonFinite(var.to_string()));
        }
        let mut u = x.to_vec();
        u.sort_by(f64::total_cmp);
        u.dedup();
        if u.len() < k {
            return Err(BasisError::TooFewDistinct {
                var: var.to_string(),
                k,
                found: u.len(),
            });
        }
        let knots = (0..k).map(|i| quantile_sorted(&u, i as f64 / (k - 1) as f64)).collect();
        Ok(Self::from_knots(knots))
    }

    pub fn from_knots(knots: Vec<f64>) -> Self {
        let k = knots.len();
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut d = DMatrix::zeros(k - 2, k);
        let mut b = DMatrix::zeros(k - 2, k - 2);
        for i in 0..k - 2 {
            d[(i, i)] = 1.0 / h[i];
            d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
            d[(i, i + 2)] = 1.0 / h[i + 1];
            b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
            if i + 1 < k - 2 {
                b[(i, i + 1)] = h[i + 1] / 6.0;
                b[(i + 1, i)] = h[i + 1] / 6.0;
            }
        }
        let chol = b.cholesky().expect("knot spacing matrix is positive definite");
        let binv_d = chol.solve(&d);
        let mut f = DMatrix::zeros(k, k);
        f.view_mut((1, 0), (k - 2, k)).copy_from(&binv_d);
        let penalty = d.transpose() * &binv_d;
        let penalty = (&penalty + penalty.transpose()) * 0.5;
        Self { knots, f, penalty }
    }

    pub fn k(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Integrated squared second derivative as a quadratic form in the knot values.
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    fn interval(&self, x: f64) -> usize {
        let k = self.k();
        self.knots[1..k - 1].partition_point(|t| *t <= x)
    }

    pub fn basis_row(&self, x: f64, out: &mut [f64]) {
        let k = self.k();
        out.fill(0.0);
        let (first, last) = (self.knots[0], self.knots[k - 1]);
        if x < first {
            let h = self.knots[1] - first;
            let dx = x - first;
            out[0] += 1.0 - dx / h;
            out[1] += dx / h;
            for (c, o) in out.iter_mut().enumerate().take(k) {
                *o -= dx * (h / 3.0 * self.f[(0, c)] + h / 6.0 * self.f[(1, c)]);
            }
            return;
        }
        if x > last {
            let h = last - self.knots[k - 2];
            let dx = x - last;
            out[k - 1] += 1.0 + dx / h;
            out[k - 2] -= dx / h;
            for (c, o) in out.iter_mut().enumerate().take(k) {
                *o += dx * (h / 6.0 * self.f[(k - 2, c)] + h / 3.0 * self.f[(k - 1, c)]);
            }
            return;
        }
        let j = self.interval(x);
        let (lo, hi) = (self.knots[j], self.knots[j + 1]);
        let h = hi - lo;
        let am = (hi - x) / h;
        let ap = (x - lo) / h;
        let cm = ((hi - x).powi(3) / h - h * (hi - x)) / 6.0;
        let cp = ((x - lo).powi(3) / h - h * (x - lo)) / 6.0;
        out[j] += am;
        out[j + 1] += ap;
        for (c, o) in out.iter_mut().enumerate().take(k) {
            *o += cm * self.f[(j, c)] + cp * self.f[(j + 1, c)];
        }
    }

    /// Row mapping knot values to s''(x); zero outside the knot range.
    pub fn second_derivative_row(&self, x: f64, out: &mut [f64]) {
        let k = self.k();
        out.fill(0.0);
        if x < self.knots[0] || x > self.knots[k - 1] {
            return;
        }
        let j = self.interval(x);
        let (lo, hi) = (self.knots[j], self.knots[j + 1]);
        let h = hi - lo;
        for (c, o) in out.iter_mut().enumerate().take(k) {
            *o = (hi - x) / h * self.f[(j, c)] + (x - lo) / h * self.f[(j + 1, c)];
        }
    }

    pub fn basis(&self, x: &[f64]) -> DMatrix<f64> {
        let k = self.k();
        let mut m = DMatrix::zeros(x.len(), k);
        let mut row = vec![0.0; k];
        for (i, &v) in x.iter().enumerate() {
            self.basis_row(v, &mut row);
            for c in 0..k {
                m[(i, c)] = row[c];
            }
        }
        m
    }
}

/// Unconstrained basis matrix and penalty for `x` with `k` quantile knots.
pub fn build_spline_basis(x: &[f64], k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>), BasisError> {
    let s = CubicRegressionSpline::new("x", x, k)?;
    Ok((s.basis(x), s.penalty().clone()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Marginals {
    Single(CubicRegressionSpline),
    Tensor(CubicRegressionSpline, CubicRegressionSpline),
}

impl Marginals {
    pub fn raw_dim(&self) -> usize {
        match self {
            Marginals::Single(s) => s.k(),
            Marginals::Tensor(a, b) => a.k() * b.k(),
        }
    }

    fn raw_row(&self, values: &[f64], out: &mut [f64]) {
        match self {
            Marginals::Single(s) => s.basis_row(values[0], out),
            Marginals::Tensor(a, b) => {
                let mut ra = vec![0.0; a.k()];
                let mut rb = vec![0.0; b.k()];
                a.basis_row(values[0], &mut ra);
                b.basis_row(values[1], &mut rb);
                for i in 0..a.k() {
                    for j in 0..b.k() {
                        out[i * b.k() + j] = ra[i] * rb[j];
                    }
                }
            }
        }
    }

    fn raw_penalty(&self) -> DMatrix<f64> {
        match self {
            Marginals::Single(s) => s.penalty().clone(),
            Marginals::Tensor(a, b) => {
                let sa = a.penalty() / a.penalty().norm();
                let sb = b.penalty() / b.penalty().norm();
                sa.kronecker(&DMatrix::identity(b.k(), b.k())) + DMatrix::identity(a.k(), a.k()).kronecker(&sb)
            }
        }
    }
}

/// A smooth term's basis after absorbing its identifiability constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothBasis {
    pub label: String,
    pub vars: Vec<String>,
    pub marginals: Marginals,
    /// Null-space basis of the constraints (raw dim x constrained dim).
    pub z: DMatrix<f64>,
    /// Penalty on the constrained coefficients.
    pub penalty: DMatrix<f64>,
}

impl SmoothBasis {
    /// Builds the constrained basis on training data. The smooth always sums
    /// to zero over the data and is orthogonal to each `orthogonal_to`
    /// covariate, which keeps separate linear terms identifiable.
    pub fn build(
        label: String,
        vars: Vec<String>,
        marginals: Marginals,
        data: &[&[f64]],
        orthogonal_to: &[&[f64]],
    ) -> SmoothBasis {
        let n = data[0].len();
        let kraw = marginals.raw_dim();
        let mut x = DMatrix::zeros(n, kraw);
        let mut row = vec![0.0; kraw];
        let mut values = vec![0.0; data.len()];
        for i in 0..n {
            for (v, col) in values.iter_mut().zip(data) {
                *v = col[i];
            }
            marginals.raw_row(&values, &mut row);
            for c in 0..kraw {
                x[(i, c)] = row[c];
            }
        }
        let m = 1 + orthogonal_to.len();
        let mut ct = DMatrix::zeros(kraw, m + kraw);
        for c in 0..kraw {
            ct[(c, 0)] = x.column(c).sum();
            for (j, v) in orthogonal_to.iter().enumerate() {
                ct[(c, 1 + j)] = x.column(c).iter().zip(*v).map(|(a, b)| a * b).sum();
            }
            ct[(c, m + c)] = 1.0;
        }
        let q = ct.qr().q();
        let z = q.columns(m, kraw - m).into_owned();
        let s = z.transpose() * marginals.raw_penalty() * &z;
        let xc = &x * &z;
        let xtx = xc.transpose() * &xc;
        let scale = xtx.norm() / s.norm();
        let penalty = (&s + s.transpose()) * (0.5 * scale);
        SmoothBasis {
            label,
            vars,
            marginals,
            z,
            penalty,
        }
    }

    /// Number of constrained coefficients.
    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn row(&self, values: &[f64], out: &mut [f64]) {
        let mut raw = vec![0.0; self.marginals.raw_dim()];
        self.marginals.raw_row(values, &mut raw);
        let r = DVector::from_vec(raw);
        let c = self.z.tr_mul(&r);
        out.copy_from_slice(c.as_slice());
    }

    /// Constrained basis evaluated on columns of covariate values.
    pub fn matrix(&self, data: &[&[f64]]) -> DMatrix<f64> {
        let n = data[0].len();
        let mut m = DMatrix::zeros(n, self.dim());
        let mut row = vec![0.0; self.dim()];
        let mut values = vec![0.0; data.len()];
        for i in 0..n {
            for (v, col) in values.iter_mut().zip(data) {
                *v = col[i];
            }
            self.row(&values, &mut row);
            for c in 0..row.len() {
                m[(i, c)] = row[c];
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn interpolates_knot_values() {
        let s = CubicRegressionSpline::from_knots(vec![0.0, 0.5, 1.3, 2.0, 3.1]);
        let mut row = vec![0.0; 5];
        for (j, &t) in s.knots().iter().enumerate() {
            s.basis_row(t, &mut row);
            for (c, v) in row.iter().enumerate() {
                let expected = if c == j { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-12, "knot {j} col {c}: {v}");
            }
        }
    }

    #[test]
    fn reproduces_linear_functions_everywhere() {
        let s = CubicRegressionSpline::from_knots(vec![-1.0, -0.2, 0.1, 0.9, 2.0, 2.5]);
        let beta: Vec<f64> = s.knots().iter().map(|t| 3.0 - 2.0 * t).collect();
        let mut row = vec![0.0; 6];
        for x in grid(-3.0, 4.0, 71) {
            s.basis_row(x, &mut row);
            let v: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            assert!((v - (3.0 - 2.0 * x)).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn penalty_matches_quadrature_oracle() {
        // Oracle: composite Simpson integration of s''(x)^2 on a fine grid.
        let s = CubicRegressionSpline::from_knots(vec![0.0, 0.4, 1.1, 1.5, 2.6, 3.0, 3.9]);
        let beta = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5, -0.7, 1.1, 0.0]);
        let quad = beta.dot(&(s.penalty() * &beta));
        let mut row = vec![0.0; 7];
        let mut integral = 0.0;
        for w in s.knots().windows(2) {
            let m = 2000;
            let h = (w[1] - w[0]) / m as f64;
            for i in 0..=m {
                let x = w[0] + h * i as f64;
                s.second_derivative_row(x, &mut row);
                let d2: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                let c = if i == 0 || i == m {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                integral += c * h / 3.0 * d2 * d2;
            }
        }
        assert!((integral - quad).abs() < 1e-9 * quad.max(1.0), "{integral} vs {quad}");
    }

    #[test]
    fn penalty_null_space_is_linear() {
        let s = CubicRegressionSpline::from_knots(grid(0.0, 1.0, 8));
        let ones = DVector::from_element(8, 1.0);
        let lin = DVector::from_vec(s.knots().to_vec());
        assert!((s.penalty() * ones).norm() < 1e-9);
        assert!((s.penalty() * lin).norm() < 1e-9);
        let eig = s.penalty().clone().symmetric_eigen();
        let positive = eig.eigenvalues.iter().filter(|e| **e > 1e-9).count();
        assert_eq!(positive, 6);
        assert!(eig.eigenvalues.iter().all(|e| *e > -1e-9));
    }

    #[test]
    fn knot_placement_and_errors() {
        let x: Vec<f64> = (0..100).map(|i| (i % 50) as f64).collect();
        let s = CubicRegressionSpline::new("x", &x, 10).unwrap();
        assert_eq!(s.knots()[0], 0.0);
        assert_eq!(s.knots()[9], 49.0);
        assert!(matches!(
            CubicRegressionSpline::new("x", &[1.0, 2.0, 3.0, 1.0], 4),
            Err(BasisError::TooFewDistinct { found: 3, .. })
        ));
        assert_eq!(CubicRegressionSpline::new("x", &x, 3), Err(BasisError::TooSmall(3)));
    }

    #[test]
    fn constraints_center_and_orthogonalize() {
        let x = grid(-3.0, 3.0, 200);
        let crs = CubicRegressionSpline::new("x", &x, 10).unwrap();
        let centered = SmoothBasis::build("s(x)".into(), vec!["x".into()], Marginals::Single(crs.clone()), &[&x], &[]);
        assert_eq!(centered.dim(), 9);
        let both = SmoothBasis::build("s(x)".into(), vec!["x".into()], Marginals::Single(crs), &[&x], &[&x]);
        assert_eq!(both.dim(), 8);
        let m = both.matrix(&[&x]);
        for c in 0..8 {
            assert!(m.column(c).sum().abs() < 1e-9);
            assert!(m.column(c).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-9);
        }
        let m = centered.matrix(&[&x]);
        for c in 0..9 {
            assert!(m.column(c).sum().abs() < 1e-9);
        }
    }

    #[test]
    fn tensor_penalty_is_symmetric_psd() {
        let a = grid(0.0, 1.0, 60);
        let b: Vec<f64> = a.iter().map(|v| (v * 7.0).sin()).collect();
        let ma = CubicRegressionSpline::new("a", &a, 5).unwrap();
        let mb = CubicRegressionSpline::new("b", &b, 5).unwrap();
        let t = SmoothBasis::build("te(a,b)".into(), vec!["a".into(), "b".into()], Marginals::Tensor(ma, mb), &[&a, &b], &[]);
        assert_eq!(t.dim(), 24);
        assert!((&t.penalty - t.penalty.transpose()).norm() < 1e-9 * t.penalty.norm());
        assert!(t.penalty.clone().symmetric_eigen().eigenvalues.iter().all(|e| *e > -1e-8 * t.penalty.norm()));
    }
}
