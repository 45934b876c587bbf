//! Evaluable models: scalar input laws, discretized functional inputs and
//! the built-in benchmark functions.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid process specification: {0}")]
    InvalidProcess(String),
    #[error("duplicate scalar input name `{0}`")]
    DuplicateInput(String),
    #[error("scalar input vector has length {found}, model `{model}` expects {expected} (inputs: {names})")]
    ScalarArity {
        model: String,
        expected: usize,
        found: usize,
        names: String,
    },
    #[error("functional input `eps` has length {found}, expected {expected}")]
    ProcessArity { expected: usize, found: usize },
    #[error("functional input `eps` is required by this model but was not supplied")]
    MissingProcess,
    #[error("functional input `eps` was supplied but the model has no functional input")]
    UnexpectedProcess,
    #[error("additive-relative functional input requires a nominal trajectory of length {expected}")]
    MissingNominal { expected: usize },
    #[error("unknown built-in model `{0}`")]
    UnknownBuiltin(String),
}

/// Marginal law of a scalar input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "RawDistribution")]
pub enum Distribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawDistribution {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl TryFrom<RawDistribution> for Distribution {
    type Error = ModelError;

    fn try_from(raw: RawDistribution) -> Result<Self, Self::Error> {
        match raw {
            RawDistribution::Uniform { lo, hi } => Distribution::uniform(lo, hi),
            RawDistribution::Normal { mean, sd } => Distribution::normal(mean, sd),
        }
    }
}

impl Distribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ModelError::InvalidDistribution(format!(
                "uniform requires finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Distribution::Uniform { lo, hi })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self, ModelError> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
            return Err(ModelError::InvalidDistribution(format!(
                "normal requires finite mean and sd > 0, got mean={mean}, sd={sd}"
            )));
        }
        Ok(Distribution::Normal { mean, sd })
    }

    pub fn standard_normal() -> Self {
        Distribution::Normal { mean: 0.0, sd: 1.0 }
    }

    /// Inverse CDF. `u` must lie in the open interval (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => lo + (hi - lo) * u,
            Distribution::Normal { mean, sd } => mean + sd * standard_normal_quantile(u),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Distribution::Normal { mean, sd } => unit_normal().cdf((x - mean) / sd),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::Normal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Distribution::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            Distribution::Normal { sd, .. } => sd * sd,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Distribution::Uniform { lo, hi } => (lo..=hi).contains(&x),
            Distribution::Normal { .. } => x.is_finite(),
        }
    }
}

fn unit_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal parameters are valid")
}

pub(crate) fn standard_normal_quantile(u: f64) -> f64 {
    unit_normal().inverse_cdf(u)
}

/// How a realization of the functional input reaches the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProcessMode {
    /// The realization is passed through unchanged.
    #[default]
    Standalone,
    /// The realization perturbs a nominal trajectory: `nominal[t] * (1 + eps[t])`.
    AdditiveRelative,
}

/// Discretized stochastic functional input with i.i.d. steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub length: usize,
    pub step_law: Distribution,
    #[serde(default)]
    pub mode: ProcessMode,
}

impl ProcessSpec {
    pub fn new(length: usize, step_law: Distribution, mode: ProcessMode) -> Result<Self, ModelError> {
        if length == 0 {
            return Err(ModelError::InvalidProcess("length must be at least 1".into()));
        }
        Ok(Self {
            length,
            step_law,
            mode,
        })
    }

    pub fn white_noise(length: usize) -> Result<Self, ModelError> {
        Self::new(length, Distribution::standard_normal(), ProcessMode::Standalone)
    }

    /// Per-step mean trajectory of the process.
    pub fn mean_trajectory(&self) -> Vec<f64> {
        vec![self.step_law.mean(); self.length]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarInput {
    pub name: String,
    pub law: Distribution,
}

impl ScalarInput {
    pub fn new(name: impl Into<String>, law: Distribution) -> Self {
        Self {
            name: name.into(),
            law,
        }
    }
}

/// Deterministic map `(x, eps) -> y`.
///
/// Implementations are invoked concurrently from worker threads and must be
/// stateless or internally synchronized. `eps` is `Some` exactly when the
/// model declares a functional input.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, x: &[f64], eps: Option<&[f64]>) -> f64;
}

impl<F> Evaluator for F
where
    F: Fn(&[f64], Option<&[f64]>) -> f64 + Send + Sync,
{
    fn evaluate(&self, x: &[f64], eps: Option<&[f64]>) -> f64 {
        self(x, eps)
    }
}

/// A black-box model with its input description.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    inputs: Vec<ScalarInput>,
    process: Option<ProcessSpec>,
    nominal: Option<Vec<f64>>,
    evaluator: Arc<dyn Evaluator>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("inputs", &self.inputs)
            .field("process", &self.process)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<ScalarInput>,
        process: Option<ProcessSpec>,
        evaluator: impl Evaluator + 'static,
    ) -> Result<Self, ModelError> {
        let mut seen = HashSet::new();
        for input in &inputs {
            if !seen.insert(input.name.as_str()) {
                return Err(ModelError::DuplicateInput(input.name.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            inputs,
            process,
            nominal: None,
            evaluator: Arc::new(evaluator),
        })
    }

    /// Attach the nominal trajectory used by [`ProcessMode::AdditiveRelative`].
    pub fn with_nominal_trajectory(mut self, nominal: Vec<f64>) -> Result<Self, ModelError> {
        match &self.process {
            Some(p) if p.length == nominal.len() => {
                self.nominal = Some(nominal);
                Ok(self)
            }
            Some(p) => Err(ModelError::MissingNominal { expected: p.length }),
            None => Err(ModelError::UnexpectedProcess),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[ScalarInput] {
        &self.inputs
    }

    pub fn input_names(&self) -> Vec<String> {
        self.inputs.iter().map(|i| i.name.clone()).collect()
    }

    pub fn dim(&self) -> usize {
        self.inputs.len()
    }

    pub fn process(&self) -> Option<&ProcessSpec> {
        self.process.as_ref()
    }

    pub fn evaluator(&self) -> Arc<dyn Evaluator> {
        Arc::clone(&self.evaluator)
    }

    /// Evaluate `f(x, eps)` after checking every arity; nothing is computed
    /// when an argument is malformed.
    pub fn evaluate(&self, x: &[f64], eps: Option<&[f64]>) -> Result<f64, ModelError> {
        if x.len() != self.inputs.len() {
            return Err(ModelError::ScalarArity {
                model: self.name.clone(),
                expected: self.inputs.len(),
                found: x.len(),
                names: self
                    .inputs
                    .iter()
                    .map(|i| i.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", "),
            });
        }
        match (&self.process, eps) {
            (None, None) => Ok(self.evaluator.evaluate(x, None)),
            (None, Some(_)) => Err(ModelError::UnexpectedProcess),
            (Some(_), None) => Err(ModelError::MissingProcess),
            (Some(p), Some(e)) => {
                if e.len() != p.length {
                    return Err(ModelError::ProcessArity {
                        expected: p.length,
                        found: e.len(),
                    });
                }
                match p.mode {
                    ProcessMode::Standalone => Ok(self.evaluator.evaluate(x, Some(e))),
                    ProcessMode::AdditiveRelative => {
                        let nominal = self
                            .nominal
                            .as_ref()
                            .ok_or(ModelError::MissingNominal { expected: p.length })?;
                        let perturbed: Vec<f64> = nominal
                            .iter()
                            .zip(e)
                            .map(|(n, eps)| n * (1.0 + eps))
                            .collect();
                        Ok(self.evaluator.evaluate(x, Some(&perturbed)))
                    }
                }
            }
        }
    }
}

/// `evaluate(model, x, eps)`.
pub fn evaluate(model: &ModelSpec, x: &[f64], eps: Option<&[f64]>) -> Result<f64, ModelError> {
    model.evaluate(x, eps)
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `sin(x1) + 7 sin(x2)^2 + 0.1 max_t(eps_t)^4 sin(x1)`, using the signed maximum.
pub fn wn_ishigami_value(x1: f64, x2: f64, eps: &[f64]) -> f64 {
    let m = max_of(eps);
    let s2 = x2.sin();
    x1.sin() + 7.0 * s2 * s2 + 0.1 * m.powi(4) * x1.sin()
}

pub fn ishigami_value(x1: f64, x2: f64, x3: f64) -> f64 {
    let s2 = x2.sin();
    x1.sin() + 7.0 * s2 * s2 + 0.1 * x3.powi(4) * x1.sin()
}

fn symmetric_uniform_pi() -> Distribution {
    Distribution::Uniform { lo: -PI, hi: PI }
}

/// White-noise Ishigami: two U(-pi, pi) scalars and a 100-step N(0,1) white noise.
pub fn builtin_wn_ishigami() -> ModelSpec {
    let inputs = vec![
        ScalarInput::new("X1", symmetric_uniform_pi()),
        ScalarInput::new("X2", symmetric_uniform_pi()),
    ];
    let process = ProcessSpec::white_noise(100).expect("length 100 is valid");
    ModelSpec::new("wn_ishigami", inputs, Some(process), |x: &[f64], eps: Option<&[f64]>| {
        wn_ishigami_value(x[0], x[1], eps.unwrap_or(&[]))
    })
    .expect("built-in inputs are unique")
}

/// Classical Ishigami function with a = 7, b = 0.1.
pub fn builtin_ishigami() -> ModelSpec {
    let inputs = vec![
        ScalarInput::new("X1", symmetric_uniform_pi()),
        ScalarInput::new("X2", symmetric_uniform_pi()),
        ScalarInput::new("X3", symmetric_uniform_pi()),
    ];
    ModelSpec::new("ishigami", inputs, None, |x: &[f64], _: Option<&[f64]>| {
        ishigami_value(x[0], x[1], x[2])
    })
    .expect("built-in inputs are unique")
}

/// `Y = sum_i beta_i X_i` with independent `X_i ~ N(0, sd_i^2)`.
pub fn builtin_linear_gaussian(betas: &[f64], sds: &[f64]) -> Result<ModelSpec, ModelError> {
    if betas.len() != sds.len() || betas.is_empty() {
        return Err(ModelError::InvalidDistribution(
            "betas and sds must be non-empty and of equal length".into(),
        ));
    }
    let inputs = sds
        .iter()
        .enumerate()
        .map(|(i, &sd)| Ok(ScalarInput::new(format!("X{}", i + 1), Distribution::normal(0.0, sd)?)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    let betas = betas.to_vec();
    ModelSpec::new("linear_gaussian", inputs, None, move |x: &[f64], _: Option<&[f64]>| {
        x.iter().zip(&betas).map(|(a, b)| a * b).sum()
    })
}

/// `Y = X1 * X2` with `X_i ~ U(-1, 1)`: a pure interaction.
pub fn builtin_product() -> ModelSpec {
    let law = Distribution::Uniform { lo: -1.0, hi: 1.0 };
    ModelSpec::new(
        "product",
        vec![ScalarInput::new("X1", law), ScalarInput::new("X2", law)],
        None,
        |x: &[f64], _: Option<&[f64]>| x[0] * x[1],
    )
    .expect("built-in inputs are unique")
}

/// Look up a built-in model by name.
pub fn builtin(name: &str) -> Result<ModelSpec, ModelError> {
    match name {
        "wn_ishigami" => Ok(builtin_wn_ishigami()),
        "ishigami" => Ok(builtin_ishigami()),
        "product" => Ok(builtin_product()),
        "linear_gaussian" => builtin_linear_gaussian(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]),
        other => Err(ModelError::UnknownBuiltin(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn eval_wn(x: [f64; 2], eps: &[f64]) -> f64 {
        builtin_wn_ishigami().evaluate(&x, Some(eps)).unwrap()
    }

    #[test]
    fn wn_ishigami_known_points() {
        let zeros = vec![0.0; 100];
        assert_eq!(eval_wn([0.0, 0.0], &zeros), 0.0);
        assert!((eval_wn([FRAC_PI_2, 0.0], &zeros) - 1.0).abs() < 1e-15);
        let mut eps = vec![-0.3; 100];
        eps[17] = 1.0;
        assert!((eval_wn([FRAC_PI_2, FRAC_PI_2], &eps) - 8.1).abs() < 1e-12);
        let noisy: Vec<f64> = (0..100).map(|t| (t as f64 * 0.37).sin() * 3.0).collect();
        assert!((eval_wn([0.0, FRAC_PI_2], &noisy) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn wn_ishigami_shape() {
        let m = builtin_wn_ishigami();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.process().unwrap().length, 100);
        assert_eq!(m.process().unwrap().step_law, Distribution::standard_normal());
    }

    #[test]
    fn evaluation_is_pure() {
        let m = builtin_wn_ishigami();
        let eps: Vec<f64> = (0..100).map(|t| ((t * 7 % 13) as f64 - 6.0) / 3.0).collect();
        let first = m.evaluate(&[0.3, -1.2], Some(&eps)).unwrap();
        for _ in 0..100 {
            assert_eq!(m.evaluate(&[0.3, -1.2], Some(&eps)).unwrap().to_bits(), first.to_bits());
        }
    }

    #[test]
    fn monotone_in_nonnegative_max() {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..50 {
            let mut eps = vec![-1.0; 100];
            eps[3] = k as f64 * 0.1;
            let y = eval_wn([FRAC_PI_2, 0.0], &eps);
            assert!(y >= prev);
            prev = y;
        }
    }

    #[test]
    fn arity_errors_name_the_input() {
        let m = builtin_wn_ishigami();
        let err = m.evaluate(&[0.0], Some(&[0.0; 100])).unwrap_err();
        assert!(err.to_string().contains("X1, X2"), "{err}");
        assert_eq!(
            m.evaluate(&[0.0, 0.0], Some(&[0.0; 99])).unwrap_err(),
            ModelError::ProcessArity {
                expected: 100,
                found: 99
            }
        );
        assert_eq!(m.evaluate(&[0.0, 0.0], None).unwrap_err(), ModelError::MissingProcess);
        let scalar = builtin_ishigami();
        assert_eq!(
            scalar.evaluate(&[0.0; 3], Some(&[0.0])).unwrap_err(),
            ModelError::UnexpectedProcess
        );
    }

    #[test]
    fn malformed_calls_never_reach_the_evaluator() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = Arc::new(AtomicUsize::new(0));
        let c = Arc::clone(&calls);
        let m = ModelSpec::new(
            "counting",
            vec![ScalarInput::new("a", Distribution::standard_normal())],
            Some(ProcessSpec::white_noise(3).unwrap()),
            move |_: &[f64], _: Option<&[f64]>| {
                c.fetch_add(1, Ordering::SeqCst);
                0.0
            },
        )
        .unwrap();
        let _ = m.evaluate(&[], Some(&[0.0; 3]));
        let _ = m.evaluate(&[1.0, 2.0], Some(&[0.0; 3]));
        let _ = m.evaluate(&[1.0], Some(&[0.0; 4]));
        let _ = m.evaluate(&[1.0], None);
        assert_eq!(calls.load(Ordering::SeqCst), 0);
        m.evaluate(&[1.0], Some(&[0.0; 3])).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn additive_relative_perturbs_nominal() {
        let spec = ProcessSpec::new(
            3,
            Distribution::uniform(-0.05, 0.05).unwrap(),
            ProcessMode::AdditiveRelative,
        )
        .unwrap();
        let m = ModelSpec::new(
            "sum",
            vec![],
            Some(spec),
            |_: &[f64], e: Option<&[f64]>| e.unwrap().iter().sum(),
        )
        .unwrap();
        assert_eq!(
            m.evaluate(&[], Some(&[0.0; 3])).unwrap_err(),
            ModelError::MissingNominal { expected: 3 }
        );
        let m = m.with_nominal_trajectory(vec![10.0, 20.0, 30.0]).unwrap();
        let y = m.evaluate(&[], Some(&[0.05, -0.05, 0.0])).unwrap();
        assert!((y - (10.5 + 19.0 + 30.0)).abs() < 1e-12);
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::uniform(1.0, 1.0).is_err());
        assert!(Distribution::normal(0.0, 0.0).is_err());
        assert!(Distribution::try_from(RawDistribution::Uniform { lo: 2.0, hi: 1.0 }).is_err());
        assert!(Distribution::try_from(RawDistribution::Normal { mean: 0.0, sd: -1.0 }).is_err());
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        // Oracle: Newton-refine each quantile on the cdf, then compare.
        let d = Distribution::standard_normal();
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let mut us: Vec<f64> = (1..1000).map(|k| k as f64 / 1000.0).collect();
        us.extend([1e-12, 1e-9, 1e-6, 1.0 - 1e-9]);
        for u in us {
            let q = d.quantile(u);
            let mut r = q;
            for _ in 0..3 {
                r -= (d.cdf(r) - u) / pdf(r);
            }
            assert!((q - r).abs() < 1e-9, "u={u} q={q} refined={r}");
        }
    }

    #[test]
    fn builtins_by_name() {
        for name in ["wn_ishigami", "ishigami", "product", "linear_gaussian"] {
            assert_eq!(builtin(name).unwrap().name(), name);
        }
        assert!(builtin("meteor").is_err());
    }
}
