//! Joint mean and dispersion models fitted by alternating extended
//! quasi-likelihood maximization.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{fmt_f64, DataError, DataTable};
use crate::design::{realize_design, Design, DesignError, DesignLayout};
use crate::formula::Formula;
use crate::gam::{fit_gam, GamError, GamFit, Lambdas};
use crate::glm::{fit_glm, FittedComponent, Family, GlmError};
use crate::stats::{local_linear_smooth, mean, normal_scores};

pub const DEFAULT_EQL_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_CYCLES: usize = 30;
pub const CV_FOLDS: usize = 10;
/// Floor on the dispersion responses relative to their mean.
pub const DEVIANCE_FLOOR: f64 = 1e-8;
/// Floor on the dispersion responses relative to the response variance.
pub const DEVIANCE_FLOOR_ABS: f64 = 1e-16;
const EQL_SLACK: f64 = 1e-9;
const SMOOTHER_SPAN: f64 = 2.0 / 3.0;
const SMOOTHER_POINTS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JointError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Gam(#[from] GamError),
    #[error("{0}")]
    Data(String),
    #[error("the mean formula needs a response")]
    MissingResponse,
    #[error("smooth term {0} requires the gam engine")]
    SmoothInGlm(String),
    #[error("{n} observations for {p} parameters")]
    TooFewObservations { n: usize, p: usize },
    #[error("no convergence after {} cycles; EQL trace {trace:?}", trace.len())]
    NonConvergence { trace: Vec<f64> },
    #[error("EQL decreased at cycle {cycle}; trace {trace:?}")]
    EqlDecrease { cycle: usize, trace: Vec<f64> },
    #[error("empty test sample")]
    EmptyTest,
}

impl From<DataError> for JointError {
    fn from(e: DataError) -> Self {
        JointError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Glm,
    Gam,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Glm => "glm",
            Engine::Gam => "gam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Q2Method {
    TestSample,
    CrossValidation,
    LeaveOneOut,
}

#[derive(Debug, Clone, Copy)]
pub struct JointOptions {
    pub tolerance: f64,
    pub max_cycles: usize,
    /// Divide unit deviances by `1 - h_i`.
    pub leverage_correction: bool,
    /// Cycles during which smoothing parameters are re-selected.
    pub max_select_cycles: usize,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_EQL_TOLERANCE,
            max_cycles: DEFAULT_MAX_CYCLES,
            leverage_correction: false,
            max_select_cycles: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ComponentFit {
    Glm(FittedComponent),
    Gam(GamFit),
}

/// One row of a component summary: a parametric coefficient with its t test
/// or a smooth with its approximate F test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub term: String,
    pub kind: &'static str,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub edf: Option<f64>,
    pub rank: Option<usize>,
}

impl ComponentFit {
    pub fn mu(&self) -> &[f64] {
        match self {
            ComponentFit::Glm(f) => &f.mu,
            ComponentFit::Gam(f) => &f.mu,
        }
    }

    pub fn eta(&self) -> &[f64] {
        match self {
            ComponentFit::Glm(f) => &f.eta,
            ComponentFit::Gam(f) => &f.eta,
        }
    }

    pub fn hat(&self) -> &[f64] {
        match self {
            ComponentFit::Glm(f) => &f.hat,
            ComponentFit::Gam(f) => &f.hat,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        match self {
            ComponentFit::Glm(f) => &f.coefficients,
            ComponentFit::Gam(f) => &f.coefficients,
        }
    }

    pub fn prior_weights(&self) -> &[f64] {
        match self {
            ComponentFit::Glm(f) => &f.prior_weights,
            ComponentFit::Gam(f) => &f.prior_weights,
        }
    }

    pub fn deviance(&self) -> f64 {
        match self {
            ComponentFit::Glm(f) => f.deviance,
            ComponentFit::Gam(f) => f.deviance,
        }
    }

    pub fn explained_deviance(&self) -> f64 {
        match self {
            ComponentFit::Glm(f) => f.explained_deviance(),
            ComponentFit::Gam(f) => f.explained_deviance(),
        }
    }

    pub fn deviance_residuals(&self) -> Vec<f64> {
        match self {
            ComponentFit::Glm(f) => f.deviance_residuals(),
            ComponentFit::Gam(f) => f.deviance_residuals(),
        }
    }

    /// Effective number of parameters.
    pub fn edf(&self) -> f64 {
        match self {
            ComponentFit::Glm(f) => f.coefficients.len() as f64,
            ComponentFit::Gam(f) => f.edf_total,
        }
    }

    pub fn penalty(&self) -> f64 {
        match self {
            ComponentFit::Glm(_) => 0.0,
            ComponentFit::Gam(f) => f.penalty(),
        }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        match self {
            ComponentFit::Glm(_) => Vec::new(),
            ComponentFit::Gam(f) => f.lambdas(),
        }
    }

    pub fn summary(&self) -> Result<Vec<SummaryRow>, JointError> {
        let tests = match self {
            ComponentFit::Glm(f) => f.coefficient_tests(),
            ComponentFit::Gam(f) => f.parametric_tests(),
        };
        let mut rows: Vec<SummaryRow> = tests
            .into_iter()
            .map(|t| SummaryRow {
                term: t.term,
                kind: "parametric",
                estimate: Some(t.estimate),
                std_error: Some(t.std_error),
                statistic: t.t_value,
                p_value: t.p_value,
                edf: None,
                rank: None,
            })
            .collect();
        if let ComponentFit::Gam(f) = self {
            rows.extend(f.smooth_summaries()?.into_iter().map(|s| SummaryRow {
                term: s.term,
                kind: "smooth",
                estimate: None,
                std_error: None,
                statistic: s.f,
                p_value: s.p_value,
                edf: Some(s.edf),
                rank: Some(s.rank),
            }));
        }
        Ok(rows)
    }
}

/// Columns: term, kind, estimate, std_error, statistic, p_value, edf, rank.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), DataError> {
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "kind", "estimate", "std_error", "statistic", "p_value", "edf", "rank"])?;
    for r in rows {
        w.write_record([
            r.term.clone(),
            r.kind.to_string(),
            opt(r.estimate),
            opt(r.std_error),
            fmt_f64(r.statistic),
            fmt_f64(r.p_value),
            opt(r.edf),
            r.rank.map(|k| k.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A fitted component with the layout needed to predict on new inputs.
#[derive(Debug, Clone)]
pub struct Component {
    pub layout: DesignLayout,
    pub fit: ComponentFit,
}

impl Component {
    pub fn predict_eta(&self, data: &DataTable) -> Result<Vec<f64>, JointError> {
        let x = self.layout.matrix(data)?;
        Ok(eta_of(&x, self.fit.coefficients()))
    }

    /// Linear predictor at covariate values ordered as the layout's covariates.
    pub fn eta_row(&self, values: &[f64], scratch: &mut [f64]) -> f64 {
        self.layout.row(values, scratch);
        scratch.iter().zip(self.fit.coefficients()).map(|(a, b)| a * b).sum()
    }
}

fn eta_of(x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect()
}

fn fit_component(
    design: &Design,
    y: &[f64],
    family: Family,
    weights: &[f64],
    lambdas: Lambdas<'_>,
) -> Result<ComponentFit, JointError> {
    if design.smooths.is_empty() {
        return Ok(ComponentFit::Glm(fit_glm(&design.x, &design.names, y, family, weights)?));
    }
    Ok(ComponentFit::Gam(fit_gam(&design.x, &design.names, &design.smooths, y, family, weights, lambdas)?))
}

fn lambdas_for<'a>(select: bool, previous: &'a Option<Vec<f64>>) -> Lambdas<'a> {
    match (select, previous) {
        (true, p) => Lambdas::Select(p.as_deref()),
        (false, Some(p)) => Lambdas::Fixed(p),
        (false, None) => Lambdas::Select(None),
    }
}

/// Gaussian extended quasi-likelihood of the pair, less the smoothing
/// penalties of both components on the scale each fit optimizes.
fn eql(y: &[f64], mu: &[f64], phi: &[f64], pen_mean: f64, pen_disp: f64) -> f64 {
    let ll: f64 = (0..y.len())
        .map(|i| {
            let d = (y[i] - mu[i]).powi(2);
            (2.0 * std::f64::consts::PI * phi[i]).ln() + d / phi[i]
        })
        .sum();
    -0.5 * ll - 0.5 * pen_mean - 0.25 * pen_disp
}

fn log_shift(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.log10() - y.log10()).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct JointModel {
    pub engine: Engine,
    pub mean: Component,
    pub dispersion: Component,
    pub eql_trace: Vec<f64>,
    pub converged: bool,
    pub response: String,
    /// Dispersion responses of the final cycle.
    pub dispersion_response: Vec<f64>,
    pub data: DataTable,
    pub options: JointOptions,
}

/// Alternates a Gaussian mean fit weighted by `1/phi` with a log-link gamma
/// fit of the unit deviances, until the EQL settles.
pub fn fit_joint(
    mean_formula: &Formula,
    disp_formula: &Formula,
    data: &DataTable,
    engine: Engine,
) -> Result<JointModel, JointError> {
    fit_joint_with(mean_formula, disp_formula, data, engine, &JointOptions::default())
}

pub fn fit_joint_with(
    mean_formula: &Formula,
    disp_formula: &Formula,
    data: &DataTable,
    engine: Engine,
    opts: &JointOptions,
) -> Result<JointModel, JointError> {
    let response = mean_formula.response.clone().ok_or(JointError::MissingResponse)?;
    if engine == Engine::Glm {
        if let Some(t) = mean_formula.terms.iter().chain(&disp_formula.terms).find(|t| t.is_smooth()) {
            return Err(JointError::SmoothInGlm(t.to_string()));
        }
    }
    let mut disp_formula = disp_formula.clone();
    disp_formula.response = None;
    let y = data.column(&response)?.to_vec();
    let mean_design = realize_design(mean_formula, data)?;
    let disp_design = realize_design(&disp_formula, data)?;
    let n = y.len();
    let p = mean_design.x.ncols() + disp_design.x.ncols();
    if n <= p {
        return Err(JointError::TooFewObservations { n, p });
    }

    let var_y = crate::stats::variance(&y);
    let mut phi = vec![1.0; n];
    let mut lam_mean: Option<Vec<f64>> = None;
    let mut lam_disp: Option<Vec<f64>> = None;
    let mut select = engine == Engine::Gam;
    let mut trace = Vec::new();
    let mut prev_frozen: Option<f64> = None;
    let mut d = Vec::new();
    let mut disp_fit = None;
    let mut converged = false;
    for cycle in 0..opts.max_cycles {
        let weights: Vec<f64> = phi.iter().map(|p| 1.0 / p).collect();
        let mean_fit = fit_component(&mean_design, &y, Family::GaussianIdentity, &weights, lambdas_for(select, &lam_mean))?;
        d = dispersion_responses(&y, mean_fit.mu(), mean_fit.hat(), opts.leverage_correction, var_y);
        let fit = fit_component(&disp_design, &d, Family::GammaLog, &vec![1.0; n], lambdas_for(select, &lam_disp))?;
        phi = fit.mu().to_vec();
        let value = eql(&y, mean_fit.mu(), &phi, mean_fit.penalty(), fit.penalty());
        trace.push(value);
        let (new_mean, new_disp) = (mean_fit.lambdas(), fit.lambdas());
        disp_fit = Some(fit);
        if select {
            let settled = lam_mean.as_ref().is_some_and(|l| log_shift(l, &new_mean) < 0.01)
                && lam_disp.as_ref().is_some_and(|l| log_shift(l, &new_disp) < 0.01);
            lam_mean = Some(new_mean);
            lam_disp = Some(new_disp);
            if settled || cycle + 1 >= opts.max_select_cycles {
                select = false;
            }
            continue;
        }
        lam_mean = Some(new_mean);
        lam_disp = Some(new_disp);
        if let Some(prev) = prev_frozen {
            if value < prev - EQL_SLACK * prev.abs().max(1.0) {
                return Err(JointError::EqlDecrease { cycle, trace });
            }
            if (value - prev).abs() <= opts.tolerance * value.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        prev_frozen = Some(value);
    }
    if !converged {
        return Err(JointError::NonConvergence { trace });
    }
    let weights: Vec<f64> = phi.iter().map(|p| 1.0 / p).collect();
    let mean_fit = fit_component(&mean_design, &y, Family::GaussianIdentity, &weights, lambdas_for(false, &lam_mean))?;
    Ok(JointModel {
        engine,
        mean: Component {
            layout: mean_design.layout,
            fit: mean_fit,
        },
        dispersion: Component {
            layout: disp_design.layout,
            fit: disp_fit.expect("at least one cycle ran"),
        },
        eql_trace: trace,
        converged,
        response,
        dispersion_response: d,
        data: data.clone(),
        options: *opts,
    })
}

/// Unit deviances of the Gaussian mean fit, floored relative to their mean
/// and to the response variance.
fn dispersion_responses(y: &[f64], mu: &[f64], hat: &[f64], leverage: bool, var_y: f64) -> Vec<f64> {
    let mut d: Vec<f64> = (0..y.len())
        .map(|i| {
            let r2 = (y[i] - mu[i]).powi(2);
            if leverage {
                r2 / (1.0 - hat[i]).max(1e-12)
            } else {
                r2
            }
        })
        .collect();
    let floor = (DEVIANCE_FLOOR * mean(&d)).max(DEVIANCE_FLOOR_ABS * var_y).max(1e-300);
    for v in &mut d {
        *v = v.max(floor);
    }
    d
}

/// Plot-ready residual diagnostics of the mean component.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub fitted: Vec<f64>,
    pub observed: Vec<f64>,
    pub residuals: Vec<f64>,
    /// (theoretical normal quantile, sorted residual).
    pub qq: Vec<(f64, f64)>,
    /// Local linear smooth of residuals against fitted values.
    pub smoother: Vec<(f64, f64)>,
}

impl Diagnostics {
    pub fn mean_abs_smoother(&self) -> f64 {
        self.smoother.iter().map(|(_, s)| s.abs()).sum::<f64>() / self.smoother.len().max(1) as f64
    }

    fn pairs<W: Write>(out: W, header: [&str; 2], rows: impl Iterator<Item = (f64, f64)>) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        for (a, b) in rows {
            w.write_record([fmt_f64(a), fmt_f64(b)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_residuals_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        Self::pairs(out, ["fitted", "deviance_residual"], self.fitted.iter().copied().zip(self.residuals.iter().copied()))
    }

    pub fn write_observed_predicted_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        Self::pairs(out, ["observed", "predicted"], self.observed.iter().copied().zip(self.fitted.iter().copied()))
    }

    pub fn write_qq_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        Self::pairs(out, ["theoretical", "sample"], self.qq.iter().copied())
    }

    pub fn write_smoother_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        Self::pairs(out, ["fitted", "smooth"], self.smoother.iter().copied())
    }
}

/// Residual diagnostics from fitted values and residuals.
pub fn diagnostics_from(observed: &[f64], fitted: &[f64], residuals: &[f64]) -> Diagnostics {
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let qq = normal_scores(sorted.len()).into_iter().zip(sorted).collect();
    let lo = fitted.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<f64> = (0..SMOOTHER_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (SMOOTHER_POINTS - 1) as f64)
        .collect();
    let smooth = local_linear_smooth(fitted, residuals, SMOOTHER_SPAN, &grid);
    Diagnostics {
        fitted: fitted.to_vec(),
        observed: observed.to_vec(),
        residuals: residuals.to_vec(),
        qq,
        smoother: grid.into_iter().zip(smooth).collect(),
    }
}

impl JointModel {
    pub fn y(&self) -> &[f64] {
        self.data.column(&self.response).expect("response checked at fit")
    }

    /// Fitted dispersions.
    pub fn phi(&self) -> &[f64] {
        self.dispersion.fit.mu()
    }

    pub fn mean_explained_deviance(&self) -> f64 {
        self.mean.fit.explained_deviance()
    }

    pub fn predict_mean(&self, data: &DataTable) -> Result<Vec<f64>, JointError> {
        self.mean.predict_eta(data)
    }

    pub fn predict_dispersion(&self, data: &DataTable) -> Result<Vec<f64>, JointError> {
        Ok(self.dispersion.predict_eta(data)?.into_iter().map(f64::exp).collect())
    }

    pub fn diagnostics(&self) -> Diagnostics {
        diagnostics_from(self.y(), self.mean.fit.mu(), &self.mean.fit.deviance_residuals())
    }

    /// Out-of-sample coefficient of determination of the mean component.
    pub fn predictivity_q2(&self, method: Q2Method, test: Option<&DataTable>) -> Result<f64, JointError> {
        match method {
            Q2Method::TestSample => {
                let test = test.ok_or(JointError::EmptyTest)?;
                if test.n_rows() == 0 {
                    return Err(JointError::EmptyTest);
                }
                let y = test.column(&self.response)?;
                Ok(q2(y, &self.predict_mean(test)?))
            }
            Q2Method::LeaveOneOut => {
                let y = self.y();
                let mu = self.mean.fit.mu();
                let h = self.mean.fit.hat();
                let pred: Vec<f64> = (0..y.len()).map(|i| y[i] - (y[i] - mu[i]) / (1.0 - h[i]).max(1e-12)).collect();
                Ok(q2(y, &pred))
            }
            Q2Method::CrossValidation => self.cross_validated_q2(CV_FOLDS),
        }
    }

    /// K-fold Q2 refitting the mean component on each training part with the
    /// dispersion weights of the full fit.
    pub fn cross_validated_q2(&self, folds: usize) -> Result<f64, JointError> {
        let n = self.data.n_rows();
        let folds = folds.clamp(2, n);
        let weights: Vec<f64> = self.phi().iter().map(|p| 1.0 / p).collect();
        let lambdas = self.mean.fit.lambdas();
        let parts: Vec<Vec<(usize, f64)>> = (0..folds)
            .into_par_iter()
            .map(|k| {
                let train: Vec<usize> = (0..n).filter(|i| i % folds != k).collect();
                let test: Vec<usize> = (0..n).filter(|i| i % folds == k).collect();
                let table = self.data.select_rows(&train);
                let design = realize_design(self.mean.layout.formula(), &table)?;
                let y = table.column(&self.response)?;
                let w: Vec<f64> = train.iter().map(|&i| weights[i]).collect();
                let start = (!lambdas.is_empty()).then(|| lambdas.clone());
                let fit = fit_component(&design, y, Family::GaussianIdentity, &w, lambdas_for(true, &start))?;
                let held = self.data.select_rows(&test);
                let x = design.layout.matrix(&held)?;
                Ok(test.into_iter().zip(eta_of(&x, fit.coefficients())).collect())
            })
            .collect::<Result<_, JointError>>()?;
        let mut pred = vec![0.0; n];
        for (i, v) in parts.into_iter().flatten() {
            pred[i] = v;
        }
        Ok(q2(self.y(), &pred))
    }

    pub fn mean_summary(&self) -> Result<Vec<SummaryRow>, JointError> {
        self.mean.fit.summary()
    }

    pub fn dispersion_summary(&self) -> Result<Vec<SummaryRow>, JointError> {
        self.dispersion.fit.summary()
    }

    /// Columns: cycle, eql.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cycle", "eql"])?;
        for (i, v) in self.eql_trace.iter().enumerate() {
            w.write_record([(i + 1).to_string(), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `1 - sum (y - pred)^2 / sum (y - mean(y))^2`.
pub fn q2(y: &[f64], pred: &[f64]) -> f64 {
    let m = mean(y);
    let ss: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    let tot: f64 = y.iter().map(|a| (a - m).powi(2)).sum();
    1.0 - ss / tot
}
