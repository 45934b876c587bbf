//! Generalized additive models: penalized IRLS with per-smooth smoothing
//! parameters chosen by GCV.

pub mod basis;

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use thiserror::Error;

use crate::data::{fmt_f64, DataError};
use crate::glm::{self, CoefficientTest, Family, GlmError};

pub use basis::{build_spline_basis, BasisError, CubicRegressionSpline, Marginals, SmoothBasis};

pub const LOG10_LAMBDA_MIN: f64 = -8.0;
pub const LOG10_LAMBDA_MAX: f64 = 8.0;
pub const LAMBDA_GRID: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GamError {
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("smooth {label} has columns {start}..{end} outside the {cols}-column design")]
    SmoothColumns {
        label: String,
        start: usize,
        end: usize,
        cols: usize,
    },
    #[error("{expected} smoothing parameters expected, {found} given")]
    LambdaCount { expected: usize, found: usize },
    #[error("no smooth term {0}")]
    UnknownTerm(usize),
}

/// A penalized block of design columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothSpec {
    pub label: String,
    pub columns: Range<usize>,
    pub penalty: DMatrix<f64>,
}

/// A fitted smooth term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothTerm {
    pub label: String,
    #[serde(skip)]
    pub columns: Range<usize>,
    pub lambda: f64,
    pub edf: f64,
    /// Number of coefficients after the identifiability constraints.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum Lambdas<'a> {
    /// Select by GCV, starting from the given values (or 1).
    Select(Option<&'a [f64]>),
    Fixed(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub struct GamOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Relative GCV change that ends coordinate-wise cycling.
    pub gcv_tolerance: f64,
    pub max_cycles: usize,
    /// Performance iterations after which smoothing parameters are frozen.
    pub max_select_iter: usize,
}

impl Default for GamOptions {
    fn default() -> Self {
        Self {
            tolerance: glm::DEFAULT_TOLERANCE,
            max_iter: glm::DEFAULT_MAX_ITER,
            gcv_tolerance: 1e-7,
            max_cycles: 20,
            max_select_iter: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GamFit {
    pub family: Family,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Bayesian posterior standard errors.
    pub std_errors: Vec<f64>,
    pub smooths: Vec<SmoothTerm>,
    pub edf_total: f64,
    pub gcv: f64,
    pub deviance: f64,
    pub null_deviance: f64,
    pub scale: f64,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub y: Vec<f64>,
    pub prior_weights: Vec<f64>,
    /// Diagonal of the influence matrix.
    pub hat: Vec<f64>,
    /// Per-coefficient effective degrees of freedom.
    pub edf_per_coef: Vec<f64>,
    pub penalized_deviance_trace: Vec<f64>,
    pub x: DMatrix<f64>,
    pub specs: Vec<SmoothSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothSummary {
    pub term: String,
    pub edf: f64,
    pub rank: usize,
    pub f: f64,
    pub p_value: f64,
}

impl GamFit {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn explained_deviance(&self) -> f64 {
        1.0 - self.deviance / self.null_deviance
    }

    pub fn df_residual(&self) -> f64 {
        self.n() as f64 - self.edf_total
    }

    /// `sum_j lambda_j b_j' S_j b_j` at the fitted coefficients.
    pub fn penalty(&self) -> f64 {
        self.specs
            .iter()
            .zip(&self.smooths)
            .map(|(s, t)| {
                let b = DVector::from_column_slice(&self.coefficients[s.columns.clone()]);
                t.lambda * (&s.penalty * &b).dot(&b)
            })
            .sum()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.smooths.iter().map(|s| s.lambda).collect()
    }

    pub fn deviance_residuals(&self) -> Vec<f64> {
        glm::deviance_residuals(self.family, &self.y, &self.mu, &self.prior_weights)
    }

    fn smooth_columns(&self) -> Vec<bool> {
        let mut in_smooth = vec![false; self.coefficients.len()];
        for s in &self.smooths {
            in_smooth[s.columns.clone()].iter_mut().for_each(|v| *v = true);
        }
        in_smooth
    }

    /// t-tests of the unpenalized coefficients.
    pub fn parametric_tests(&self) -> Vec<CoefficientTest> {
        let keep = self.smooth_columns();
        let idx: Vec<usize> = (0..keep.len()).filter(|&j| !keep[j]).collect();
        let names: Vec<String> = idx.iter().map(|&j| self.names[j].clone()).collect();
        let beta: Vec<f64> = idx.iter().map(|&j| self.coefficients[j]).collect();
        let se: Vec<f64> = idx.iter().map(|&j| self.std_errors[j]).collect();
        glm::coefficient_tests(&names, &beta, &se, self.df_residual())
    }

    pub fn predict_eta(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let beta = DVector::from_column_slice(&self.coefficients);
        (x * beta).iter().copied().collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.predict_eta(x).into_iter().map(|e| self.family.inverse_link(e)).collect()
    }

    /// Term, edf, rank, F and p-value for every smooth.
    pub fn smooth_summaries(&self) -> Result<Vec<SmoothSummary>, GamError> {
        (0..self.smooths.len())
            .map(|i| {
                let (f, p_value) = smooth_significance(self, i)?;
                let s = &self.smooths[i];
                Ok(SmoothSummary {
                    term: s.label.clone(),
                    edf: s.edf,
                    rank: s.rank,
                    f,
                    p_value,
                })
            })
            .collect()
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let rows = self
            .smooth_summaries()
            .map_err(|e| DataError::Io(std::io::Error::other(e.to_string())))?;
        write_smooth_csv(&rows, out)
    }
}

/// Columns: term, edf, rank, F, p_value.
pub fn write_smooth_csv<W: Write>(rows: &[SmoothSummary], out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "edf", "rank", "F", "p_value"])?;
    for r in rows {
        w.write_record([
            r.term.clone(),
            fmt_f64(r.edf),
            r.rank.to_string(),
            fmt_f64(r.f),
            fmt_f64(r.p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Square root of a penalty block: `root' root = S`.
fn penalty_root(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * max)
        .collect();
    let mut root = DMatrix::zeros(keep.len(), s.ncols());
    for (r, &i) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        for c in 0..s.ncols() {
            root[(r, c)] = scale * eig.eigenvectors[(c, i)];
        }
    }
    root
}

struct Root {
    columns: Range<usize>,
    root: DMatrix<f64>,
}

/// QR-reduced weighted working model.
struct Working {
    n: usize,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    f: DVector<f64>,
    rss_extra: f64,
}

impl Working {
    fn new(x: &DMatrix<f64>, sqrt_w: &[f64], z: &[f64]) -> Working {
        let wx = glm::scale_rows(x, sqrt_w);
        let wz = DVector::from_iterator(z.len(), z.iter().zip(sqrt_w).map(|(a, b)| a * b));
        let qr = wx.qr();
        let q = qr.q();
        let r = qr.r();
        let f = q.tr_mul(&wz);
        let rss_extra = (wz.norm_squared() - f.norm_squared()).max(0.0);
        Working {
            n: z.len(),
            q,
            r,
            f,
            rss_extra,
        }
    }
}

struct Pls {
    beta: DVector<f64>,
    edf: f64,
    gcv: f64,
    q1_top: DMatrix<f64>,
    r1: DMatrix<f64>,
}

fn solve_pls(wm: &Working, roots: &[Root], lambdas: &[f64]) -> Option<Pls> {
    let p = wm.r.ncols();
    let extra: usize = roots.iter().map(|r| r.root.nrows()).sum();
    let mut m = DMatrix::zeros(p + extra, p);
    m.view_mut((0, 0), (p, p)).copy_from(&wm.r);
    let mut row = p;
    for (root, &lambda) in roots.iter().zip(lambdas) {
        let s = lambda.sqrt();
        let (rr, rc) = root.root.shape();
        m.view_mut((row, root.columns.start), (rr, rc)).copy_from(&(&root.root * s));
        row += rr;
    }
    let qr = m.qr();
    let r1 = qr.r();
    let max_diag = (0..p).map(|j| r1[(j, j)].abs()).fold(0.0, f64::max);
    if (0..p).any(|j| r1[(j, j)].abs() <= 1e-12 * max_diag) {
        return None;
    }
    let q1 = qr.q();
    let q1_top = q1.rows(0, p).into_owned();
    let rhs = q1_top.tr_mul(&wm.f);
    let beta = r1.solve_upper_triangular(&rhs)?;
    let resid = &wm.f - &wm.r * &beta;
    let rss = resid.norm_squared() + wm.rss_extra;
    let edf = q1_top.norm_squared();
    let n = wm.n as f64;
    let gcv = if n > edf { n * rss / ((n - edf) * (n - edf)) } else { f64::INFINITY };
    Some(Pls {
        beta,
        edf,
        gcv,
        q1_top,
        r1,
    })
}

fn gcv_at(wm: &Working, roots: &[Root], lambdas: &[f64]) -> f64 {
    solve_pls(wm, roots, lambdas).map_or(f64::INFINITY, |s| s.gcv)
}

/// Coordinate-wise GCV minimization over log10 smoothing parameters: a
/// 50-point grid on [1e-8, 1e8] per coordinate, then golden-section
/// refinement inside the bracket of the best grid point.
fn select_lambdas(wm: &Working, roots: &[Root], start: &[f64], opts: &GamOptions) -> Vec<f64> {
    let mut rho: Vec<f64> = start.iter().map(|l| l.max(1e-300).log10().clamp(LOG10_LAMBDA_MIN, LOG10_LAMBDA_MAX)).collect();
    let lam = |rho: &[f64]| rho.iter().map(|r| 10f64.powf(*r)).collect::<Vec<_>>();
    let step = (LOG10_LAMBDA_MAX - LOG10_LAMBDA_MIN) / (LAMBDA_GRID - 1) as f64;
    let mut best = gcv_at(wm, roots, &lam(&rho));
    for _ in 0..opts.max_cycles {
        let before = best;
        for j in 0..roots.len() {
            let eval = |r: f64| {
                let mut trial = rho.clone();
                trial[j] = r;
                gcv_at(wm, roots, &lam(&trial))
            };
            let scores: Vec<f64> = (0..LAMBDA_GRID)
                .into_par_iter()
                .map(|i| eval(LOG10_LAMBDA_MIN + step * i as f64))
                .collect();
            let (imin, &gmin) = scores
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("grid is nonempty");
            let mut cand = (LOG10_LAMBDA_MIN + step * imin as f64, gmin);
            let (mut a, mut b) = (
                LOG10_LAMBDA_MIN + step * imin.saturating_sub(1) as f64,
                LOG10_LAMBDA_MIN + step * (imin + 1).min(LAMBDA_GRID - 1) as f64,
            );
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let mut c = b - g * (b - a);
            let mut d = a + g * (b - a);
            let (mut fc, mut fd) = (eval(c), eval(d));
            while b - a > 1e-4 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - g * (b - a);
                    fc = eval(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + g * (b - a);
                    fd = eval(d);
                }
            }
            for (r, f) in [(c, fc), (d, fd)] {
                if f < cand.1 {
                    cand = (r, f);
                }
            }
            if cand.1 <= best {
                rho[j] = cand.0;
                best = cand.1;
            }
        }
        if (before - best).abs() <= opts.gcv_tolerance * best.abs() {
            break;
        }
    }
    lam(&rho)
}

fn penalty_quad(beta: &DVector<f64>, roots: &[Root], lambdas: &[f64]) -> f64 {
    roots
        .iter()
        .zip(lambdas)
        .map(|(r, l)| {
            let b = beta.rows(r.columns.start, r.columns.len());
            l * (&r.root * b).norm_squared()
        })
        .sum()
}

fn working_quantities(family: Family, y: &[f64], w: &[f64], eta: &[f64], mu: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut z = Vec::with_capacity(y.len());
    let mut sqrt_w = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let g = family.mu_eta(eta[i]);
        z.push(eta[i] + (y[i] - mu[i]) / g);
        sqrt_w.push((w[i] * g * g / family.variance(mu[i])).sqrt());
    }
    (z, sqrt_w)
}

/// Fit by penalized IRLS. Under [`Lambdas::Select`] smoothing parameters are
/// re-selected at each working model (performance iteration) until they
/// settle, then held fixed while the penalized deviance converges.
pub fn fit_gam(
    x: &DMatrix<f64>,
    names: &[String],
    smooths: &[SmoothSpec],
    y: &[f64],
    family: Family,
    weights: &[f64],
    lambdas: Lambdas<'_>,
) -> Result<GamFit, GamError> {
    fit_gam_with(x, names, smooths, y, family, weights, lambdas, &GamOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn fit_gam_with(
    x: &DMatrix<f64>,
    names: &[String],
    smooths: &[SmoothSpec],
    y: &[f64],
    family: Family,
    weights: &[f64],
    lambdas: Lambdas<'_>,
    opts: &GamOptions,
) -> Result<GamFit, GamError> {
    let (n, p) = x.shape();
    glm::validate(family, n, y, weights)?;
    for s in smooths {
        if s.columns.end > p || s.columns.len() != s.penalty.ncols() {
            return Err(GamError::SmoothColumns {
                label: s.label.clone(),
                start: s.columns.start,
                end: s.columns.end,
                cols: p,
            });
        }
    }
    let fixed = matches!(lambdas, Lambdas::Fixed(_));
    let mut lam: Vec<f64> = match lambdas {
        Lambdas::Fixed(l) | Lambdas::Select(Some(l)) => l.to_vec(),
        Lambdas::Select(None) => vec![1.0; smooths.len()],
    };
    if lam.len() != smooths.len() {
        return Err(GamError::LambdaCount {
            expected: smooths.len(),
            found: lam.len(),
        });
    }
    if !fixed && n <= p {
        return Err(GlmError::TooFewObservations { n, q: p }.into());
    }
    if fixed && n < p {
        return Err(GlmError::TooFewObservations { n, q: p }.into());
    }
    let roots: Vec<Root> = smooths
        .iter()
        .map(|s| Root {
            columns: s.columns.clone(),
            root: penalty_root(&s.penalty),
        })
        .collect();

    let mut mu = family.initial_mu(y, weights);
    let mut eta: Vec<f64> = mu.iter().map(|m| family.link(*m)).collect();
    let mut frozen = fixed || smooths.is_empty();
    let mut beta_old: Option<DVector<f64>> = None;
    let mut pdev_old = f64::INFINITY;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut since_freeze = 0;
    for it in 0..opts.max_iter + opts.max_select_iter {
        let (z, sqrt_w) = working_quantities(family, y, weights, &eta, &mu);
        let wm = Working::new(x, &sqrt_w, &z);
        if !frozen {
            let new = select_lambdas(&wm, &roots, &lam, opts);
            let moved = new
                .iter()
                .zip(&lam)
                .map(|(a, b)| (a.log10() - b.log10()).abs())
                .fold(0.0, f64::max);
            lam = new;
            if moved < 0.01 || it + 1 >= opts.max_select_iter || family == Family::GaussianIdentity {
                frozen = true;
                pdev_old = f64::INFINITY;
                beta_old = None;
            }
        }
        let sol = solve_pls(&wm, &roots, &lam).ok_or_else(|| GlmError::RankDeficient(rank_suspects(x, names)))?;
        let mut beta = sol.beta;
        let eval = |beta: &DVector<f64>| {
            let eta: Vec<f64> = (x * beta).iter().copied().collect();
            let mu: Vec<f64> = eta.iter().map(|e| family.inverse_link(*e)).collect();
            let pdev = glm::deviance(family, y, &mu, weights) + penalty_quad(beta, &roots, &lam);
            (eta, mu, pdev)
        };
        let (mut eta_new, mut mu_new, mut pdev) = eval(&beta);
        if let (true, Some(old)) = (frozen, &beta_old) {
            let mut halvings = 0;
            while (!pdev.is_finite() || pdev > pdev_old * (1.0 + 1e-12)) && halvings < 30 {
                beta = (&beta + old) * 0.5;
                (eta_new, mu_new, pdev) = eval(&beta);
                halvings += 1;
            }
        }
        trace.push(pdev);
        if !pdev.is_finite() {
            return Err(GlmError::NonFinite(trace).into());
        }
        eta = eta_new;
        mu = mu_new;
        if frozen {
            since_freeze += 1;
            let done = family == Family::GaussianIdentity
                || (pdev - pdev_old).abs() / (pdev.abs() + 0.1) < opts.tolerance;
            beta_old = Some(beta);
            pdev_old = pdev;
            if done {
                converged = true;
                break;
            }
            if since_freeze >= opts.max_iter {
                break;
            }
        } else {
            beta_old = Some(beta);
        }
    }
    if !converged {
        return Err(GlmError::NonConvergence(trace).into());
    }
    let beta = beta_old.expect("converged fits have coefficients");

    let (_, sqrt_w) = working_quantities(family, y, weights, &eta, &mu);
    let wm = Working::new(x, &sqrt_w, &eta);
    let sol = solve_pls(&wm, &roots, &lam).ok_or_else(|| GlmError::RankDeficient(rank_suspects(x, names)))?;
    let r1_inv = sol
        .r1
        .clone()
        .try_inverse()
        .ok_or_else(|| GlmError::RankDeficient(rank_suspects(x, names)))?;
    let p_mat = &r1_inv * sol.q1_top.transpose();
    let edf_per_coef: Vec<f64> = (0..p).map(|j| p_mat.row(j).dot(&wm.r.column(j).transpose())).collect();
    let qa = &wm.q * &sol.q1_top;
    let hat: Vec<f64> = qa.row_iter().map(|r| r.norm_squared()).collect();
    let edf_total = sol.edf;
    let deviance = glm::deviance(family, y, &mu, weights);
    let df_resid = (n as f64 - edf_total).max(f64::MIN_POSITIVE);
    let scale = glm::pearson(family, y, &mu, weights) / df_resid;
    let std_errors = (0..p).map(|j| (r1_inv.row(j).norm_squared() * scale).sqrt()).collect();
    let smooth_terms = smooths
        .iter()
        .zip(&lam)
        .map(|(s, &lambda)| SmoothTerm {
            label: s.label.clone(),
            columns: s.columns.clone(),
            lambda,
            edf: edf_per_coef[s.columns.clone()].iter().sum(),
            rank: s.columns.len(),
        })
        .collect();
    let gcv = n as f64 * deviance / (df_resid * df_resid);
    Ok(GamFit {
        family,
        names: names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        smooths: smooth_terms,
        edf_total,
        gcv,
        deviance,
        null_deviance: glm::null_deviance(family, y, weights),
        scale,
        eta,
        mu,
        y: y.to_vec(),
        prior_weights: weights.to_vec(),
        hat,
        edf_per_coef,
        penalized_deviance_trace: trace,
        x: x.clone(),
        specs: smooths.to_vec(),
    })
}

fn rank_suspects(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let r = x.clone().qr().r();
    let bad = glm::deficient_columns(x, &r, names);
    if bad.is_empty() {
        names.to_vec()
    } else {
        bad
    }
}

/// GCV score of a single working model at the given smoothing parameters;
/// exposed for diagnostics of the smoothing-parameter search.
pub fn gcv_score(
    x: &DMatrix<f64>,
    smooths: &[SmoothSpec],
    y: &[f64],
    weights: &[f64],
    lambdas: &[f64],
) -> f64 {
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let wm = Working::new(x, &sqrt_w, y);
    let roots: Vec<Root> = smooths
        .iter()
        .map(|s| Root {
            columns: s.columns.clone(),
            root: penalty_root(&s.penalty),
        })
        .collect();
    gcv_at(&wm, &roots, lambdas)
}

/// Approximate F test that a smooth term is zero: the model is refitted
/// without the term, other smoothing parameters held fixed.
pub fn smooth_significance(fit: &GamFit, term: usize) -> Result<(f64, f64), GamError> {
    let target = fit.smooths.get(term).ok_or(GamError::UnknownTerm(term))?;
    let drop = target.columns.clone();
    let keep: Vec<usize> = (0..fit.x.ncols()).filter(|j| !drop.contains(j)).collect();
    let x = fit.x.select_columns(&keep);
    let names: Vec<String> = keep.iter().map(|&j| fit.names[j].clone()).collect();
    let width = drop.len();
    let mut specs = Vec::new();
    let mut lams = Vec::new();
    for (i, (s, t)) in fit.specs.iter().zip(&fit.smooths).enumerate() {
        if i == term {
            continue;
        }
        let shift = if s.columns.start >= drop.end { width } else { 0 };
        specs.push(SmoothSpec {
            label: s.label.clone(),
            columns: s.columns.start - shift..s.columns.end - shift,
            penalty: s.penalty.clone(),
        });
        lams.push(t.lambda);
    }
    let reduced = fit_gam(&x, &names, &specs, &fit.y, fit.family, &fit.prior_weights, Lambdas::Fixed(&lams))?;
    let d_edf = fit.edf_total - reduced.edf_total;
    if d_edf <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let d_dev = (reduced.deviance - fit.deviance).max(0.0);
    let f = d_dev / d_edf / fit.scale;
    let df2 = fit.df_residual().max(1e-3);
    let p = FisherSnedecor::new(d_edf, df2).map(|d| d.sf(f)).unwrap_or(f64::NAN);
    Ok((f, p))
}

/// Points `(x, s(x))` of a fitted one-dimensional smooth on a regular grid.
pub fn smooth_curve(fit: &GamFit, term: usize, basis: &SmoothBasis, lo: f64, hi: f64, points: usize) -> Vec<(f64, f64)> {
    let s = &fit.smooths[term];
    let beta = &fit.coefficients[s.columns.clone()];
    let mut row = vec![0.0; basis.dim()];
    (0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points.max(2) - 1) as f64;
            basis.row(&[x], &mut row);
            (x, row.iter().zip(beta).map(|(a, b)| a * b).sum())
        })
        .collect()
}
