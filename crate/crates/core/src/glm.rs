//! Generalized linear models fitted by iteratively reweighted least squares.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::data::{fmt_f64, DataError};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const CONDITION_WARNING: f64 = 1e8;
const RANK_TOLERANCE: f64 = 1e-9;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("design has {rows} rows but response has {found}")]
    Dimension { rows: usize, found: usize },
    #[error("need more observations ({n}) than coefficients ({q})")]
    TooFewObservations { n: usize, q: usize },
    #[error("rank-deficient design: column(s) {} are collinear with earlier columns", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("response {value} at row {row} is outside the support of the {family} family")]
    InvalidResponse { row: usize, value: f64, family: Family },
    #[error("prior weight {value} at row {row} must be positive and finite")]
    InvalidWeight { row: usize, value: f64 },
    #[error("IRLS did not converge in {} iterations; deviance trace: {:?}", .0.len(), .0)]
    NonConvergence(Vec<f64>),
    #[error("non-finite values during fitting; deviance trace: {0:?}")]
    NonFinite(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GaussianIdentity,
    GammaLog,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::GaussianIdentity => "gaussian(identity)",
            Family::GammaLog => "Gamma(log)",
        })
    }
}

impl Family {
    pub fn variance(&self, mu: f64) -> f64 {
        match self {
            Family::GaussianIdentity => 1.0,
            Family::GammaLog => mu * mu,
        }
    }

    pub fn link(&self, mu: f64) -> f64 {
        match self {
            Family::GaussianIdentity => mu,
            Family::GammaLog => mu.ln(),
        }
    }

    pub fn inverse_link(&self, eta: f64) -> f64 {
        match self {
            Family::GaussianIdentity => eta,
            Family::GammaLog => eta.exp(),
        }
    }

    /// d mu / d eta.
    pub fn mu_eta(&self, eta: f64) -> f64 {
        match self {
            Family::GaussianIdentity => 1.0,
            Family::GammaLog => eta.exp(),
        }
    }

    pub fn unit_deviance(&self, y: f64, mu: f64) -> f64 {
        match self {
            Family::GaussianIdentity => (y - mu) * (y - mu),
            Family::GammaLog => 2.0 * (-(y / mu).ln() + (y - mu) / mu),
        }
    }

    pub fn in_support(&self, y: f64) -> bool {
        match self {
            Family::GaussianIdentity => y.is_finite(),
            Family::GammaLog => y.is_finite() && y > 0.0,
        }
    }

    pub(crate) fn initial_mu(&self, y: &[f64], w: &[f64]) -> Vec<f64> {
        match self {
            Family::GaussianIdentity => y.to_vec(),
            Family::GammaLog => vec![weighted_mean(y, w); y.len()],
        }
    }
}

pub(crate) fn weighted_mean(y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
}

pub(crate) fn deviance(family: Family, y: &[f64], mu: &[f64], w: &[f64]) -> f64 {
    crate::stats::sum(y.iter().zip(mu).zip(w).map(|((y, m), w)| w * family.unit_deviance(*y, *m)))
}

pub(crate) fn null_deviance(family: Family, y: &[f64], w: &[f64]) -> f64 {
    let m = weighted_mean(y, w);
    deviance(family, y, &vec![m; y.len()], w)
}

pub(crate) fn pearson(family: Family, y: &[f64], mu: &[f64], w: &[f64]) -> f64 {
    crate::stats::sum(y.iter().zip(mu).zip(w).map(|((y, m), w)| w * (y - m) * (y - m) / family.variance(*m)))
}

pub(crate) fn validate(family: Family, x_rows: usize, y: &[f64], w: &[f64]) -> Result<(), GlmError> {
    if y.len() != x_rows {
        return Err(GlmError::Dimension {
            rows: x_rows,
            found: y.len(),
        });
    }
    if w.len() != x_rows {
        return Err(GlmError::Dimension {
            rows: x_rows,
            found: w.len(),
        });
    }
    for (row, &value) in y.iter().enumerate() {
        if !family.in_support(value) {
            return Err(GlmError::InvalidResponse { row, value, family });
        }
    }
    for (row, &value) in w.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(GlmError::InvalidWeight { row, value });
        }
    }
    Ok(())
}

pub(crate) fn scale_rows(x: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= s[i];
    }
    out
}

/// Columns whose diagonal in R is negligible against their norm.
pub(crate) fn deficient_columns(wx: &DMatrix<f64>, r: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    (0..r.ncols())
        .filter(|&j| {
            let norm = wx.column(j).norm();
            r[(j, j)].abs() <= RANK_TOLERANCE * norm.max(f64::MIN_POSITIVE)
        })
        .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("#{j}")))
        .collect()
}

pub(crate) fn condition_number(r: &DMatrix<f64>) -> f64 {
    let sv = r.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

struct WlsSolution {
    beta: DVector<f64>,
    r: DMatrix<f64>,
    q: DMatrix<f64>,
}

fn wls(x: &DMatrix<f64>, sqrt_w: &[f64], z: &[f64], names: &[String]) -> Result<WlsSolution, GlmError> {
    let wx = scale_rows(x, sqrt_w);
    let wz = DVector::from_iterator(z.len(), z.iter().zip(sqrt_w).map(|(a, b)| a * b));
    let qr = wx.clone().qr();
    let r = qr.r();
    let bad = deficient_columns(&wx, &r, names);
    if !bad.is_empty() {
        return Err(GlmError::RankDeficient(bad));
    }
    let q = qr.q();
    let qtz = q.transpose() * wz;
    let beta = r
        .solve_upper_triangular(&qtz)
        .ok_or_else(|| GlmError::RankDeficient(names.to_vec()))?;
    Ok(WlsSolution { beta, r, q })
}

#[derive(Debug, Clone, Copy)]
pub struct GlmOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientTest {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
}

/// A fitted GLM.
#[derive(Debug, Clone)]
pub struct FittedComponent {
    pub family: Family,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub y: Vec<f64>,
    pub prior_weights: Vec<f64>,
    pub deviance: f64,
    pub null_deviance: f64,
    /// Pearson chi-square over residual degrees of freedom.
    pub scale: f64,
    pub df_residual: f64,
    /// Leverages of the final weighted fit.
    pub hat: Vec<f64>,
    pub deviance_trace: Vec<f64>,
    pub condition_number: f64,
}

impl FittedComponent {
    pub fn explained_deviance(&self) -> f64 {
        1.0 - self.deviance / self.null_deviance
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// sign(y - mu) sqrt(w d_i); squares sum to the deviance.
    pub fn deviance_residuals(&self) -> Vec<f64> {
        deviance_residuals(self.family, &self.y, &self.mu, &self.prior_weights)
    }

    pub fn coefficient_tests(&self) -> Vec<CoefficientTest> {
        coefficient_tests(&self.names, &self.coefficients, &self.std_errors, self.df_residual)
    }

    pub fn predict_eta(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        (x * beta).iter().copied().collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.predict_eta(x).into_iter().map(|e| self.family.inverse_link(e)).collect()
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        write_coefficient_csv(&self.coefficient_tests(), out)
    }
}

pub fn deviance_residuals(family: Family, y: &[f64], mu: &[f64], w: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(mu)
        .zip(w)
        .map(|((y, m), w)| {
            let d = (w * family.unit_deviance(*y, *m)).max(0.0);
            (y - m).signum() * d.sqrt()
        })
        .collect()
}

pub(crate) fn coefficient_tests(names: &[String], beta: &[f64], se: &[f64], df: f64) -> Vec<CoefficientTest> {
    let t_dist = StudentsT::new(0.0, 1.0, df.max(1e-3)).expect("positive degrees of freedom");
    names
        .iter()
        .zip(beta)
        .zip(se)
        .map(|((name, &estimate), &std_error)| {
            let t_value = estimate / std_error;
            CoefficientTest {
                term: name.clone(),
                estimate,
                std_error,
                t_value,
                p_value: 2.0 * t_dist.sf(t_value.abs()),
            }
        })
        .collect()
}

/// Columns: term, estimate, std_error, t_value, p_value.
pub fn write_coefficient_csv<W: Write>(tests: &[CoefficientTest], out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "estimate", "std_error", "t_value", "p_value"])?;
    for t in tests {
        w.write_record([
            t.term.clone(),
            fmt_f64(t.estimate),
            fmt_f64(t.std_error),
            fmt_f64(t.t_value),
            fmt_f64(t.p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn fit_glm(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    family: Family,
    weights: &[f64],
) -> Result<FittedComponent, GlmError> {
    fit_glm_with(x, names, y, family, weights, &GlmOptions::default())
}

pub fn fit_glm_with(
    x: &DMatrix<f64>,
    names: &[String],
    y: &[f64],
    family: Family,
    weights: &[f64],
    opts: &GlmOptions,
) -> Result<FittedComponent, GlmError> {
    let (n, q) = x.shape();
    validate(family, n, y, weights)?;
    if n <= q {
        return Err(GlmError::TooFewObservations { n, q });
    }
    let mut mu = family.initial_mu(y, weights);
    let mut eta: Vec<f64> = mu.iter().map(|m| family.link(*m)).collect();
    let mut beta_old: Option<DVector<f64>> = None;
    let mut dev_old = f64::INFINITY;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let mut z = Vec::with_capacity(n);
        let mut sqrt_w = Vec::with_capacity(n);
        for i in 0..n {
            let g = family.mu_eta(eta[i]);
            z.push(eta[i] + (y[i] - mu[i]) / g);
            sqrt_w.push((weights[i] * g * g / family.variance(mu[i])).sqrt());
        }
        let sol = wls(x, &sqrt_w, &z, names)?;
        let mut beta = sol.beta;
        let mut eta_new: Vec<f64> = (x * &beta).iter().copied().collect();
        let mut mu_new: Vec<f64> = eta_new.iter().map(|e| family.inverse_link(*e)).collect();
        let mut dev = deviance(family, y, &mu_new, weights);
        if let Some(old) = &beta_old {
            let mut halvings = 0;
            while (!dev.is_finite() || dev > dev_old * (1.0 + 1e-12)) && halvings < MAX_HALVINGS {
                beta = (&beta + old) * 0.5;
                eta_new = (x * &beta).iter().copied().collect();
                mu_new = eta_new.iter().map(|e| family.inverse_link(*e)).collect();
                dev = deviance(family, y, &mu_new, weights);
                halvings += 1;
            }
        }
        if !dev.is_finite() {
            trace.push(dev);
            return Err(GlmError::NonFinite(trace));
        }
        trace.push(dev);
        eta = eta_new;
        mu = mu_new;
        beta_old = Some(beta);
        if (dev - dev_old).abs() / (dev.abs() + 0.1) < opts.tolerance {
            converged = true;
            break;
        }
        dev_old = dev;
    }
    if !converged {
        return Err(GlmError::NonConvergence(trace));
    }
    let beta = beta_old.expect("at least one iteration ran");

    let sqrt_w: Vec<f64> = (0..n)
        .map(|i| {
            let g = family.mu_eta(eta[i]);
            (weights[i] * g * g / family.variance(mu[i])).sqrt()
        })
        .collect();
    let z: Vec<f64> = eta.clone();
    let fin = wls(x, &sqrt_w, &z, names)?;
    let hat: Vec<f64> = fin.q.row_iter().map(|r| r.norm_squared()).collect();
    let cond = condition_number(&fin.r);
    if cond > CONDITION_WARNING {
        log::warn!("design condition number {cond:.3e} exceeds {CONDITION_WARNING:e}");
    }
    let df_residual = (n - q) as f64;
    let scale = pearson(family, y, &mu, weights) / df_residual;
    let r_inv = fin
        .r
        .clone()
        .try_inverse()
        .ok_or_else(|| GlmError::RankDeficient(names.to_vec()))?;
    let std_errors = (0..q)
        .map(|j| (r_inv.row(j).norm_squared() * scale).sqrt())
        .collect();
    Ok(FittedComponent {
        family,
        names: names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        deviance: deviance(family, y, &mu, weights),
        null_deviance: null_deviance(family, y, weights),
        eta,
        mu,
        y: y.to_vec(),
        prior_weights: weights.to_vec(),
        scale,
        df_residual,
        hat,
        deviance_trace: trace,
        condition_number: cond,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("c{j}")).collect()
    }

    fn design(rows: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn noiseless_line_is_exact() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 2.0).collect();
        let x = design(&xs.iter().map(|v| vec![1.0, *v]).collect::<Vec<_>>());
        let y: Vec<f64> = xs.iter().map(|v| 2.0 + 3.0 * v).collect();
        let fit = fit_glm(&x, &names(2), &y, Family::GaussianIdentity, &[1.0; 20]).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(fit.deviance_residuals().iter().all(|r| r.abs() < 1e-10));
        assert!(fit.coefficient_tests().iter().all(|t| t.p_value < 1e-10));
    }

    #[test]
    fn gamma_intercept_is_log_mean() {
        let y = [0.5, 1.2, 3.3, 0.7, 2.2, 1.9];
        let x = DMatrix::from_element(6, 1, 1.0);
        let fit = fit_glm(&x, &names(1), &y, Family::GammaLog, &[1.0; 6]).unwrap();
        let mean = y.iter().sum::<f64>() / 6.0;
        assert!((fit.coefficients[0] - mean.ln()).abs() < 1e-10);
    }

    #[test]
    fn rank_deficiency_names_the_column() {
        let x = design(&(0..10).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect::<Vec<_>>());
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let err = fit_glm(&x, &["(Intercept)".into(), "a".into(), "b".into()], &y, Family::GaussianIdentity, &[1.0; 10])
            .unwrap_err();
        assert_eq!(err, GlmError::RankDeficient(vec!["b".into()]));
        assert!(err.to_string().contains("column(s) b"));
    }

    #[test]
    fn invalid_gamma_response() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(
            fit_glm(&x, &names(1), &[1.0, 0.0, 2.0], Family::GammaLog, &[1.0; 3]),
            Err(GlmError::InvalidResponse { row: 1, .. })
        ));
    }

    #[test]
    fn non_convergence_carries_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 4.0 });
        let y: Vec<f64> = (0..n).map(|i| (0.3 + 0.8 * x[(i, 1)]).exp() * (0.5 + rng.random::<f64>())).collect();
        let opts = GlmOptions {
            tolerance: 1e-10,
            max_iter: 2,
        };
        match fit_glm_with(&x, &names(2), &y, Family::GammaLog, &vec![1.0; n], &opts) {
            Err(GlmError::NonConvergence(trace)) => assert_eq!(trace.len(), 2),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn gamma_deviance_trace_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 300;
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
        let y: Vec<f64> = (0..n)
            .map(|i| (1.0 + 2.0 * x[(i, 1)] - x[(i, 2)]).exp() * -(rng.random::<f64>()).ln())
            .collect();
        let fit = fit_glm(&x, &names(3), &y, Family::GammaLog, &vec![1.0; n]).unwrap();
        for w in fit.deviance_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let total: f64 = fit.deviance_residuals().iter().map(|r| r * r).sum();
        assert!((total - fit.deviance).abs() <= 1e-8 * fit.deviance);
        assert!((fit.coefficients[1] - 2.0).abs() < 0.4);
    }

    #[test]
    fn gaussian_residuals_scale_with_weights() {
        let x = design(&(0..6).map(|i| vec![1.0, i as f64]).collect::<Vec<_>>());
        let y = [0.0, 1.5, 1.0, 3.5, 3.0, 6.0];
        let w = [1.0, 2.0, 0.5, 1.0, 4.0, 1.0];
        let fit = fit_glm(&x, &names(2), &y, Family::GaussianIdentity, &w).unwrap();
        for i in 0..6 {
            let expected = (y[i] - fit.mu[i]) * w[i].sqrt();
            assert!((fit.deviance_residuals()[i] - expected).abs() < 1e-12);
        }
    }
}
