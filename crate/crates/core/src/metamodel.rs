//! Sensitivity indices read off a fitted joint model: Monte-Carlo indices of
//! the mean component, the total index of the functional input from the
//! dispersion component or from `1 - Q2`, and structural deductions.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{fmt_f64, DataError};
use crate::estimators::{sobol_first_order, EstimatorError, McOptions};
use crate::formula::{Formula, Term};
use crate::joint::{fit_joint, Component, Engine, JointError, JointModel, Q2Method};
use crate::model::{ModelError, ModelSpec, ScalarInput};
use crate::report::{find, write_report_csv, IndexReport, Interval, Method};
use crate::sampling::{learning_sample, sample_matrix, tag, Factor, FrozenSet, RngSeed, SamplingError, Scheme};
use crate::stats::{mean, sd, variance, BoxStats};

pub const DEFAULT_MC_SIZE: usize = 10_000;
pub const DEFAULT_MC_REPLICATES: usize = 100;
pub const DEFAULT_FRESH_SIZE: usize = 100_000;
pub const STEPS_Q2: &str = "STeps_Q2";

const HOMOSCEDASTIC_CAVEAT: &str = "intercept-only dispersion: valid only if the output is truly homoscedastic";

#[derive(Debug, Error)]
pub enum MetamodelError {
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("covariate {0} has no input distribution")]
    UnknownInput(String),
    #[error("degenerate output variance {0}")]
    DegenerateVariance(f64),
    #[error("replicate count must be at least 1")]
    Replicates,
}

#[derive(Debug, Clone, Copy)]
pub struct MetamodelOptions {
    /// Monte-Carlo sample size per replicate.
    pub n: usize,
    /// Independent Monte-Carlo repetitions giving the standard deviations.
    pub replicates: usize,
    /// Fresh input points for the dispersion mean and the variance audit.
    pub fresh: usize,
    pub seed: RngSeed,
}

impl MetamodelOptions {
    pub fn new(seed: RngSeed) -> Self {
        Self {
            n: DEFAULT_MC_SIZE,
            replicates: DEFAULT_MC_REPLICATES,
            fresh: DEFAULT_FRESH_SIZE,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceAudit {
    /// Sample variance of the learning outputs.
    pub var_y: f64,
    /// Variance of the mean component over fresh inputs.
    pub var_ym: f64,
    /// Mean of the dispersion component over fresh inputs.
    pub mean_yd: f64,
}

impl VarianceAudit {
    /// `|Var(Y) - Var(Y_m) - E(Y_d)| / Var(Y)`.
    pub fn relative_gap(&self) -> f64 {
        (self.var_y - self.var_ym - self.mean_yd).abs() / self.var_y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetamodelSaReport {
    pub reports: Vec<IndexReport>,
    pub variance_audit: VarianceAudit,
    /// First- and second-order indices plus the total index of the functional input.
    pub sum_check: f64,
}

impl MetamodelSaReport {
    pub fn get(&self, name: &str) -> Option<&IndexReport> {
        find(&self.reports, name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        write_report_csv(&self.reports, out)
    }

    /// Columns: var_y, var_ym, mean_yd, relative_gap, sum_check.
    pub fn write_audit_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let a = &self.variance_audit;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["var_y", "var_ym", "mean_yd", "relative_gap", "sum_check"])?;
        w.write_record([a.var_y, a.var_ym, a.mean_yd, a.relative_gap(), self.sum_check].map(fmt_f64))?;
        w.flush()?;
        Ok(())
    }
}

/// Positions in `inputs` of the covariates of a component.
fn covariate_positions(component: &Component, inputs: &[ScalarInput]) -> Result<Vec<usize>, MetamodelError> {
    component
        .layout
        .covariates()
        .iter()
        .map(|c| {
            inputs
                .iter()
                .position(|i| &i.name == c)
                .ok_or_else(|| MetamodelError::UnknownInput(c.clone()))
        })
        .collect()
}

/// A component's linear predictor as a model of the scalar inputs.
fn component_model(component: &Component, inputs: &[ScalarInput], exp: bool) -> Result<ModelSpec, MetamodelError> {
    let positions = covariate_positions(component, inputs)?;
    let c = Arc::new(component.clone());
    let width = c.layout.ncols();
    let evaluator = move |x: &[f64], _: Option<&[f64]>| {
        let values: Vec<f64> = positions.iter().map(|&p| x[p]).collect();
        let mut scratch = vec![0.0; width];
        let eta = c.eta_row(&values, &mut scratch);
        if exp {
            eta.exp()
        } else {
            eta
        }
    };
    Ok(ModelSpec::new("metamodel", inputs.to_vec(), None, evaluator)?)
}

fn label(i: usize) -> String {
    (i + 1).to_string()
}

/// Whether some mean term reads both inputs.
fn interacts(formula: &Formula, a: &str, b: &str) -> bool {
    formula.terms.iter().any(|t| {
        let vars = t.vars();
        vars.contains(&a) && vars.contains(&b) && !matches!(t, Term::Linear(_) | Term::Power(..))
    })
}

fn interacting_pairs(formula: &Formula, inputs: &[ScalarInput]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        for j in i + 1..inputs.len() {
            if interacts(formula, &inputs[i].name, &inputs[j].name) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Monte-Carlo first-order indices (and second-order ones for interacting
/// pairs) of the mean component, each partial variance divided by
/// `var_total`. Inputs absent from the mean formula get an exact zero.
pub fn indices_from_mean(
    joint: &JointModel,
    inputs: &[ScalarInput],
    var_total: f64,
    opts: &MetamodelOptions,
) -> Result<Vec<IndexReport>, MetamodelError> {
    if opts.replicates == 0 {
        return Err(MetamodelError::Replicates);
    }
    let formula = joint.mean.layout.formula();
    let model = component_model(&joint.mean, inputs, false)?;
    let active: Vec<usize> = (0..inputs.len()).filter(|&i| formula.mentions(&inputs[i].name)).collect();
    let pairs = interacting_pairs(formula, inputs);
    let mut targets: Vec<FrozenSet> = active.iter().map(|&i| FrozenSet::from([Factor::Scalar(i)])).collect();
    targets.extend(pairs.iter().map(|&(i, j)| FrozenSet::from([Factor::Scalar(i), Factor::Scalar(j)])));
    let names: Vec<String> = active
        .iter()
        .map(|&i| format!("S{}", label(i)))
        .chain(pairs.iter().map(|&(i, j)| format!("S{}{}", label(i), label(j))))
        .collect();

    let runs: Vec<Vec<f64>> = if targets.is_empty() {
        Vec::new()
    } else {
        (0..opts.replicates)
            .map(|r| {
                let mc = McOptions::new(opts.n, opts.seed.derive(tag::METAMODEL, r as u64)).bootstrap(0);
                let res = sobol_first_order(&model, &targets, &mc)?;
                Ok(names.iter().map(|n| res.estimate(n) * res.run.d / var_total).collect())
            })
            .collect::<Result<_, MetamodelError>>()?
    };
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let name = format!("S{}", label(i));
        match names.iter().position(|n| *n == name) {
            Some(k) => out.push(summarize(&name, &runs, k)),
            None => out.push(IndexReport::exact(name, 0.0)),
        }
    }
    for (k, (i, j)) in pairs.iter().enumerate() {
        let name = format!("S{}{}", label(*i), label(*j));
        out.push(summarize(&name, &runs, active.len() + k));
    }
    Ok(out)
}

fn summarize(name: &str, runs: &[Vec<f64>], k: usize) -> IndexReport {
    let values: Vec<f64> = runs.iter().map(|r| r[k]).collect();
    let spread = (values.len() > 1).then(|| sd(&values));
    IndexReport::mc(name, mean(&values), spread)
}

/// Mean component variance and dispersion mean over fresh inputs, with the
/// standard error of the latter.
fn fresh_moments(joint: &JointModel, inputs: &[ScalarInput], opts: &MetamodelOptions) -> Result<(f64, f64, f64), MetamodelError> {
    let mean_model = component_model(&joint.mean, inputs, false)?;
    let disp_model = component_model(&joint.dispersion, inputs, true)?;
    let n = opts.fresh.max(2);
    let x = sample_matrix(&mean_model, n, Scheme::SimpleMc, opts.seed.derive(tag::FRESH_INPUT, 0))?;
    let (ym, yd): (Vec<f64>, Vec<f64>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let m = mean_model.evaluate(row, None)?;
            let d = disp_model.evaluate(row, None)?;
            Ok((m, d))
        })
        .collect::<Result<Vec<_>, ModelError>>()?
        .into_iter()
        .unzip();
    Ok((variance(&ym), mean(&yd), sd(&yd) / (n as f64).sqrt()))
}

/// Variance decomposition of the metamodel over fresh inputs:
/// `Var(Y_m) + E(Y_d)`, its two parts and the standard error of `E(Y_d)`.
pub struct FreshMoments {
    pub var_ym: f64,
    pub mean_yd: f64,
    pub mean_yd_se: f64,
}

impl FreshMoments {
    pub fn total(&self) -> f64 {
        self.var_ym + self.mean_yd
    }

    /// `S_Teps = E(Y_d) / (Var(Y_m) + E(Y_d))`.
    pub fn st_eps(&self) -> IndexReport {
        let v = self.total();
        IndexReport::mc("STeps", self.mean_yd / v, Some(self.mean_yd_se / v))
    }
}

pub fn fresh_variance(joint: &JointModel, inputs: &[ScalarInput], opts: &MetamodelOptions) -> Result<FreshMoments, MetamodelError> {
    let (var_ym, mean_yd, mean_yd_se) = fresh_moments(joint, inputs, opts)?;
    let m = FreshMoments { var_ym, mean_yd, mean_yd_se };
    let v = m.total();
    if v <= 0.0 || !v.is_finite() {
        return Err(MetamodelError::DegenerateVariance(v));
    }
    Ok(m)
}

/// `S_Teps` as `1 - Q2` by cross-validation.
pub fn total_index_one_minus_q2(joint: &JointModel) -> Result<IndexReport, MetamodelError> {
    let q2 = joint.predictivity_q2(Q2Method::CrossValidation, None)?;
    Ok(IndexReport {
        name: STEPS_Q2.into(),
        estimate: 1.0 - q2,
        sd: None,
        interval: None,
        method: Method::Q2,
        caveat: None,
    })
}

/// Structural deductions from which inputs each component formula reads.
/// `reports` must hold the first-order (and interacting second-order)
/// indices; `st_eps` is the total index of the functional input.
pub fn deduce_bounds(joint: &JointModel, inputs: &[ScalarInput], reports: &[IndexReport], st_eps: f64) -> Vec<IndexReport> {
    let mean_f = joint.mean.layout.formula();
    let disp_f = joint.dispersion.layout.formula();
    let homoscedastic = disp_f.is_intercept_only();
    let caveat = |r: IndexReport| if homoscedastic { r.with_caveat(HOMOSCEDASTIC_CAVEAT) } else { r };
    let value = |name: &str| find(reports, name).map_or(0.0, |r| r.estimate);
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        for j in i + 1..inputs.len() {
            if !interacts(mean_f, &inputs[i].name, &inputs[j].name) {
                out.push(IndexReport::exact(format!("S{}{}", label(i), label(j)), 0.0));
            }
        }
    }
    out.push(caveat(if homoscedastic {
        IndexReport::exact("Seps", st_eps)
    } else {
        IndexReport::bounded(
            "Seps",
            Interval {
                lo: 0.0,
                hi: st_eps,
                lo_open: false,
            },
        )
    }));
    for (i, input) in inputs.iter().enumerate() {
        let name = format!("S{}eps", label(i));
        out.push(caveat(if disp_f.mentions(&input.name) {
            IndexReport::bounded(
                name,
                Interval {
                    lo: 0.0,
                    hi: st_eps,
                    lo_open: true,
                },
            )
        } else {
            IndexReport::exact(name, 0.0)
        }));
    }
    for (i, input) in inputs.iter().enumerate() {
        let mut base = value(&format!("S{}", label(i)));
        for j in 0..inputs.len() {
            if j != i {
                let (a, b) = (i.min(j), i.max(j));
                base += value(&format!("S{}{}", label(a), label(b)));
            }
        }
        let name = format!("ST{}", label(i));
        out.push(caveat(if disp_f.mentions(&input.name) {
            IndexReport::bounded(
                name,
                Interval {
                    lo: base,
                    hi: base + st_eps,
                    lo_open: true,
                },
            )
        } else {
            IndexReport::exact(name, base)
        }));
    }
    out
}

/// The full report: Monte-Carlo indices of the mean, both estimates of the
/// functional total index, the deduced rows, the variance audit and the sum
/// check. Indices are normalized by `Var(Y_m) + E(Y_d)` over fresh inputs;
/// the audit compares that sum with the sample variance of the outputs.
pub fn metamodel_sensitivity(
    joint: &JointModel,
    inputs: &[ScalarInput],
    opts: &MetamodelOptions,
) -> Result<MetamodelSaReport, MetamodelError> {
    let var_y = variance(joint.y());
    let fresh = fresh_variance(joint, inputs, opts)?;
    let mut reports = indices_from_mean(joint, inputs, fresh.total(), opts)?;
    let st = fresh.st_eps();
    let st_eps = st.estimate;
    let sum_check = reports.iter().map(|r| r.estimate).sum::<f64>() + st_eps;
    reports.push(st);
    reports.push(total_index_one_minus_q2(joint)?);
    let deduced = deduce_bounds(joint, inputs, &reports, st_eps);
    reports.extend(deduced);
    Ok(MetamodelSaReport {
        reports,
        variance_audit: VarianceAudit {
            var_y,
            var_ym: fresh.var_ym,
            mean_yd: fresh.mean_yd,
        },
        sum_check,
    })
}

/// A joint model specification used by the replication study.
#[derive(Debug, Clone)]
pub struct EngineSpec {
    pub engine: Engine,
    pub mean: Formula,
    pub dispersion: Formula,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxRow {
    pub index: String,
    pub stats: BoxStats,
    pub engine: Engine,
    pub n_learn: usize,
}

#[derive(Debug, Clone)]
pub struct ReplicationStudy {
    pub n_learn: usize,
    pub replicates: usize,
    /// Estimates per engine and index, one per successful replicate.
    pub values: BTreeMap<(String, String), Vec<f64>>,
    pub failures: Vec<(Engine, usize, String)>,
    pub boxes: Vec<BoxRow>,
}

impl ReplicationStudy {
    pub fn values(&self, engine: Engine, index: &str) -> &[f64] {
        self.values
            .get(&(engine.to_string(), index.to_string()))
            .map_or(&[], |v| v.as_slice())
    }

    pub fn boxplot(&self, engine: Engine, index: &str) -> Option<&BoxRow> {
        self.boxes.iter().find(|b| b.engine == engine && b.index == index)
    }

    pub fn failure_count(&self, engine: Engine) -> usize {
        self.failures.iter().filter(|f| f.0 == engine).count()
    }

    /// Columns: index, q1, median, q3, lo_whisker, hi_whisker, engine, n_learn.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        write_boxplot_csv(&self.boxes, out)
    }
}

pub fn write_boxplot_csv<W: Write>(rows: &[BoxRow], out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "q1", "median", "q3", "lo_whisker", "hi_whisker", "engine", "n_learn"])?;
    for b in rows {
        let s = &b.stats;
        w.write_record([
            b.index.clone(),
            fmt_f64(s.q1),
            fmt_f64(s.median),
            fmt_f64(s.q3),
            fmt_f64(s.lo_whisker),
            fmt_f64(s.hi_whisker),
            b.engine.to_string(),
            b.n_learn.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Point estimates of one replicate: first-order indices and both
/// estimates of the functional total index.
fn replicate_estimates(joint: &JointModel, inputs: &[ScalarInput], opts: &MetamodelOptions) -> Result<Vec<(String, f64)>, MetamodelError> {
    let fresh = fresh_variance(joint, inputs, opts)?;
    let mut out: Vec<(String, f64)> = indices_from_mean(joint, inputs, fresh.total(), opts)?
        .into_iter()
        .map(|r| (r.name, r.estimate))
        .collect();
    out.push(("STeps".into(), fresh.st_eps().estimate));
    out.push((STEPS_Q2.into(), total_index_one_minus_q2(joint)?.estimate));
    Ok(out)
}

/// Refits every engine on `replicates` fresh learning samples of size
/// `n_learn` and summarizes the index estimates as boxplots. Failed fits are
/// counted, not fatal.
/// One engine's estimates on one replicate, or why its fit failed.
type EngineOutcome = (Engine, Result<Vec<(String, f64)>, String>);

pub fn sa_replication_study(
    model: &ModelSpec,
    response: &str,
    specs: &[EngineSpec],
    n_learn: usize,
    replicates: usize,
    seed: RngSeed,
    mc: &MetamodelOptions,
) -> Result<ReplicationStudy, MetamodelError> {
    if replicates == 0 {
        return Err(MetamodelError::Replicates);
    }
    let per_rep: Vec<Vec<EngineOutcome>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let learn_seed = seed.derive(tag::REPLICATION, r as u64);
            let table = learning_sample(model, n_learn, Scheme::SimpleMc, learn_seed, response)?;
            let opts = MetamodelOptions {
                seed: learn_seed,
                ..*mc
            };
            Ok(specs
                .iter()
                .map(|s| {
                    let res = fit_joint(&s.mean, &s.dispersion, &table, s.engine)
                        .map_err(MetamodelError::from)
                        .and_then(|j| replicate_estimates(&j, model.inputs(), &opts))
                        .map_err(|e| e.to_string());
                    (s.engine, res)
                })
                .collect())
        })
        .collect::<Result<_, MetamodelError>>()?;

    let mut values: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut order: Vec<(Engine, String)> = Vec::new();
    for (r, rep) in per_rep.into_iter().enumerate() {
        for (engine, res) in rep {
            match res {
                Ok(estimates) => {
                    for (name, v) in estimates {
                        if !order.contains(&(engine, name.clone())) {
                            order.push((engine, name.clone()));
                        }
                        values.entry((engine.to_string(), name)).or_default().push(v);
                    }
                }
                Err(e) => failures.push((engine, r, e)),
            }
        }
    }
    let boxes = order
        .into_iter()
        .filter_map(|(engine, index)| {
            let v = &values[&(engine.to_string(), index.clone())];
            BoxStats::from_values(v).map(|stats| BoxRow {
                index,
                stats,
                engine,
                n_learn,
            })
        })
        .collect();
    Ok(ReplicationStudy {
        n_learn,
        replicates,
        values,
        failures,
        boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataTable;
    use crate::formula::parse_formula;
    use crate::model::Distribution;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inputs(p: usize) -> Vec<ScalarInput> {
        (1..=p)
            .map(|i| ScalarInput::new(format!("X{i}"), Distribution::uniform(-1.0, 1.0).unwrap()))
            .collect()
    }

    fn small_opts(seed: u64) -> MetamodelOptions {
        MetamodelOptions {
            n: 4000,
            replicates: 5,
            fresh: 20_000,
            seed: RngSeed(seed),
        }
    }

    fn sample(n: usize, seed: u64, f: impl Fn(f64, f64, f64) -> f64) -> DataTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x1 = Vec::new();
        let mut x2 = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let u: f64 = rng.random_range(-1.0..1.0);
            x1.push(a);
            x2.push(b);
            y.push(f(a, b, u));
        }
        DataTable::from_columns([("X1".into(), x1), ("X2".into(), x2), ("Y".into(), y)]).unwrap()
    }

    #[test]
    fn deterministic_additive_model() {
        // Var(2 X1 + X2) = 4/3 + 1/3 with inputs uniform on [-1, 1].
        let t = sample(400, 1, |a, b, _| 2.0 * a + b);
        let j = fit_joint(&parse_formula("Y ~ X1 + X2").unwrap(), &parse_formula("~ 1").unwrap(), &t, Engine::Glm).unwrap();
        let r = metamodel_sensitivity(&j, &inputs(2), &small_opts(2)).unwrap();
        let var_y = r.variance_audit.var_y;
        assert!((r.get("S1").unwrap().estimate - 4.0 / 3.0 / var_y).abs() < 0.05);
        assert!((r.get("S2").unwrap().estimate - 1.0 / 3.0 / var_y).abs() < 0.05);
        assert!(r.get("STeps").unwrap().estimate < 0.02);
        assert_eq!(r.get("S12").unwrap().estimate, 0.0);
        assert_eq!(r.get("S12").unwrap().method, Method::Eq);
        assert!((r.sum_check - 1.0).abs() < 0.1);
    }

    #[test]
    fn heteroscedastic_deductions() {
        let t = sample(1500, 3, |a, b, u| a + 0.5 * b * b + (0.2 + a.abs()) * u * 3f64.sqrt());
        let j = fit_joint(&parse_formula("Y ~ X1 + I(X2^2)").unwrap(), &parse_formula("~ X1 + I(X1^2)").unwrap(), &t, Engine::Glm).unwrap();
        let r = metamodel_sensitivity(&j, &inputs(2), &small_opts(4)).unwrap();
        let st = r.get("STeps").unwrap().estimate;
        let s1eps = r.get("S1eps").unwrap();
        assert_eq!(s1eps.interval, Some(Interval { lo: 0.0, hi: st, lo_open: true }));
        assert_eq!(r.get("S2eps").unwrap().estimate, 0.0);
        assert_eq!(r.get("ST2").unwrap().estimate, r.get("S2").unwrap().estimate);
        let st1 = r.get("ST1").unwrap().interval.unwrap();
        assert_eq!(st1.lo, r.get("S1").unwrap().estimate);
        assert!((st1.hi - st1.lo - st).abs() < 1e-12);
        assert!(r.variance_audit.relative_gap() <= 0.15, "{:?}", r.variance_audit);
        assert!((0.85..=1.15).contains(&r.sum_check));
        for rep in &r.reports {
            assert!(!(rep.sd.is_some() && rep.interval.is_some()));
            if let Some(i) = rep.interval {
                assert!(i.lo <= i.hi && i.lo >= 0.0);
            }
        }
    }

    #[test]
    fn intercept_only_dispersion_carries_a_caveat() {
        let t = sample(500, 5, |a, _, u| a + 0.3 * u);
        let j = fit_joint(&parse_formula("Y ~ X1").unwrap(), &parse_formula("~ 1").unwrap(), &t, Engine::Glm).unwrap();
        let r = metamodel_sensitivity(&j, &inputs(2), &small_opts(6)).unwrap();
        let seps = r.get("Seps").unwrap();
        assert_eq!(seps.estimate, r.get("STeps").unwrap().estimate);
        assert!(seps.caveat.is_some());
        assert_eq!(r.get("S1eps").unwrap().estimate, 0.0);
        assert_eq!(r.get("S2").unwrap().estimate, 0.0);
        assert_eq!(r.get("S2").unwrap().method, Method::Eq);
    }

    #[test]
    fn interaction_terms_are_estimated() {
        let t = sample(800, 7, |a, b, u| a * b + 0.01 * u);
        let j = fit_joint(&parse_formula("Y ~ X1 + X2 + X1:X2").unwrap(), &parse_formula("~ 1").unwrap(), &t, Engine::Glm).unwrap();
        let r = metamodel_sensitivity(&j, &inputs(2), &small_opts(8)).unwrap();
        let s12 = r.get("S12").unwrap();
        assert_eq!(s12.method, Method::Mc);
        assert!(s12.estimate > 0.8, "S12 {}", s12.estimate);
    }

    #[test]
    fn single_replicate_boxplot_is_the_estimate() {
        let model = crate::model::builtin_linear_gaussian(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
        let spec = EngineSpec {
            engine: Engine::Glm,
            mean: parse_formula("Y ~ X1 + X2").unwrap(),
            dispersion: parse_formula("~ 1").unwrap(),
        };
        let study = sa_replication_study(&model, "Y", &[spec], 200, 1, RngSeed(9), &MetamodelOptions { replicates: 1, ..small_opts(9) }).unwrap();
        let b = study.boxplot(Engine::Glm, "S1").unwrap();
        let v = study.values(Engine::Glm, "S1")[0];
        assert_eq!((b.stats.q1, b.stats.median, b.stats.q3), (v, v, v));
        assert_eq!(study.failure_count(Engine::Glm), 0);
    }
}
