use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use funsens::estimators::{Algorithm, DEFAULT_BOOTSTRAP_REPLICATES};
use funsens::formula::{parse_formula, Formula};
use funsens::joint::Engine;
use funsens::metamodel::{EngineSpec, DEFAULT_FRESH_SIZE, DEFAULT_MC_REPLICATES, DEFAULT_MC_SIZE};
use funsens::model::{builtin, ModelSpec, ProcessSpec, ScalarInput};
use funsens::sampling::{Factor, FrozenSet, Scheme};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const EPS_NAME: &str = "eps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Macroparameter,
    Trigger,
    JointGlm,
    JointGam,
}

impl MethodKind {
    pub fn engine(self) -> Option<Engine> {
        match self {
            MethodKind::JointGlm => Some(Engine::Glm),
            MethodKind::JointGam => Some(Engine::Gam),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Builtin(String),
    /// Inputs of a simulator run outside this program.
    External {
        inputs: Vec<ScalarInput>,
        #[serde(default)]
        process: Option<ProcessSpec>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Formulas {
    pub mean: String,
    pub dispersion: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub method: MethodKind,
    pub mean: String,
    pub dispersion: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Sizes {
    One(usize),
    Many(Vec<usize>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Q2Kind {
    #[default]
    CrossValidation,
    LeaveOneOut,
}

/// The JSON run configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub method: MethodKind,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Factor subsets; names are scalar inputs or `eps`.
    #[serde(default)]
    pub targets: Option<Vec<Vec<String>>>,
    #[serde(rename = "N", default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub bootstrap: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub evaluations: Option<PathBuf>,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub learning: Option<PathBuf>,
    #[serde(default)]
    pub n_learn: Option<Sizes>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub formulas: Option<Formulas>,
    #[serde(default)]
    pub engines: Option<Vec<EngineConfig>>,
    #[serde(default)]
    pub q2: Q2Kind,
    #[serde(default)]
    pub mc_replicates: Option<usize>,
    #[serde(default)]
    pub fresh: Option<usize>,
    /// Directory the relative paths above are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        if seed.is_some() {
            cfg.seed = seed;
        }
        if cfg.seed.is_none() {
            return Err(config_err("a seed is required (config `seed` or --seed)"));
        }
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("seed checked on load")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn is_builtin(&self) -> bool {
        matches!(self.model, ModelConfig::Builtin(_))
    }

    /// The model; external models have input laws but no evaluator.
    pub fn model(&self) -> Result<ModelSpec> {
        match &self.model {
            ModelConfig::Builtin(name) => Ok(builtin(name)?),
            ModelConfig::External { inputs, process } => Ok(ModelSpec::new(
                "external",
                inputs.clone(),
                process.clone(),
                |_: &[f64], _: Option<&[f64]>| f64::NAN,
            )?),
        }
    }

    pub fn n(&self) -> Result<usize> {
        self.n.ok_or_else(|| config_err("`N` is required"))
    }

    pub fn bootstrap(&self) -> usize {
        self.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP_REPLICATES)
    }

    pub fn mc_size(&self) -> usize {
        self.n.unwrap_or(DEFAULT_MC_SIZE)
    }

    pub fn mc_replicates(&self) -> usize {
        self.mc_replicates.unwrap_or(DEFAULT_MC_REPLICATES)
    }

    pub fn fresh(&self) -> usize {
        self.fresh.unwrap_or(DEFAULT_FRESH_SIZE)
    }

    pub fn n_learn(&self) -> Result<Vec<usize>> {
        match &self.n_learn {
            Some(Sizes::One(n)) => Ok(vec![*n]),
            Some(Sizes::Many(v)) if !v.is_empty() => Ok(v.clone()),
            _ => Err(config_err("`n_learn` is required")),
        }
    }

    /// Engine and formulas of a joint method.
    pub fn engine_spec(&self) -> Result<EngineSpec> {
        let engine = self
            .method
            .engine()
            .ok_or_else(|| config_err("method must be joint_glm or joint_gam"))?;
        let f = self.formulas.as_ref().ok_or_else(|| config_err("`formulas` is required"))?;
        engine_spec(engine, &f.mean, &f.dispersion)
    }

    pub fn engine_specs(&self) -> Result<Vec<EngineSpec>> {
        match &self.engines {
            Some(list) if !list.is_empty() => list
                .iter()
                .map(|e| {
                    let engine = e
                        .method
                        .engine()
                        .ok_or_else(|| config_err("engine method must be joint_glm or joint_gam"))?;
                    engine_spec(engine, &e.mean, &e.dispersion)
                })
                .collect(),
            _ => Ok(vec![self.engine_spec()?]),
        }
    }
}

fn engine_spec(engine: Engine, mean: &str, dispersion: &str) -> Result<EngineSpec> {
    let mean: Formula = parse_formula(mean)?;
    if mean.response.is_none() {
        return Err(config_err("the mean formula needs a response"));
    }
    Ok(EngineSpec {
        engine,
        mean,
        dispersion: parse_formula(dispersion)?,
    })
}

/// Column name of a factor.
pub fn factor_name(model: &ModelSpec, f: Factor) -> String {
    match f {
        Factor::Scalar(i) => model.inputs()[i].name.clone(),
        Factor::Eps => EPS_NAME.to_string(),
    }
}

pub fn parse_factor(model: &ModelSpec, name: &str) -> Result<Factor> {
    if name == EPS_NAME {
        if model.process().is_none() {
            return Err(config_err("`eps` targeted but the model has no functional input"));
        }
        return Ok(Factor::Eps);
    }
    model
        .inputs()
        .iter()
        .position(|i| i.name == name)
        .map(Factor::Scalar)
        .ok_or_else(|| config_err(format!("unknown factor `{name}`")))
}

/// Requested subsets, defaulting to every factor on its own.
pub fn targets(model: &ModelSpec, requested: Option<&[Vec<String>]>) -> Result<Vec<FrozenSet>> {
    match requested {
        None => {
            let mut all: Vec<FrozenSet> = (0..model.dim()).map(|i| FrozenSet::from([Factor::Scalar(i)])).collect();
            if model.process().is_some() {
                all.push(FrozenSet::from([Factor::Eps]));
            }
            Ok(all)
        }
        Some(list) => list
            .iter()
            .map(|names| {
                let set: BTreeSet<Factor> = names.iter().map(|n| parse_factor(model, n)).collect::<Result<_>>()?;
                if set.len() != names.len() || set.is_empty() {
                    return Err(config_err(format!("invalid target {names:?}")));
                }
                Ok(set)
            })
            .collect(),
    }
}
