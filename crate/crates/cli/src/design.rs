//! `sample` and `estimate`: pick-freeze designs written to CSV and the
//! indices computed from in-process or external evaluations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use funsens::data::fmt_f64;
use funsens::estimators::{
    macro_labeler, materialize_block, model_factors, saltelli_first_and_total, sobol_first_order, trigger_estimate, Algorithm,
    BlockKind, EvaluatedDesign, McOptions, McResult, OutputStore, Plan, Strategy,
};
use funsens::model::ModelSpec;
use funsens::sampling::{build_design_pair, Factor, FrozenSet, RngSeed, Scheme};
use serde::{Deserialize, Serialize};

use crate::config::{factor_name, targets, MethodKind, RunConfig, EPS_NAME, SCHEMA_VERSION};
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDICES_FILE: &str = "indices.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub rows: usize,
    /// Factors whose values come from block A.
    pub frozen_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(rename = "N")]
    pub n: usize,
    pub algorithm: Algorithm,
    pub targets: Vec<Vec<String>>,
    /// Scalar input columns of every block file, in order.
    pub inputs: Vec<String>,
    /// Number of `eps` columns following the scalar inputs.
    pub eps_columns: usize,
    pub blocks: Vec<BlockEntry>,
}

pub fn block_file(name: &str) -> String {
    format!("block_{name}.csv")
}

fn plan(model: &ModelSpec, algorithm: Algorithm, targets: &[FrozenSet]) -> Result<Plan> {
    match algorithm {
        Algorithm::Sobol => Ok(Plan::sobol(targets, macro_labeler(model))?),
        Algorithm::Saltelli => Ok(Plan::saltelli(&singletons(targets)?, &model_factors(model), macro_labeler(model))?),
    }
}

fn singletons(targets: &[FrozenSet]) -> Result<Vec<Factor>> {
    targets
        .iter()
        .map(|t| match t.len() {
            1 => Ok(*t.iter().next().unwrap()),
            _ => Err(CliError::Config("the saltelli algorithm takes single-factor targets only".into())),
        })
        .collect()
}

fn frozen_columns(model: &ModelSpec, kind: &BlockKind) -> Vec<String> {
    let all = model_factors(model);
    let set = match kind {
        BlockKind::A => &all,
        BlockKind::B => return Vec::new(),
        BlockKind::Mixed(s) => s,
    };
    set.iter().map(|f| factor_name(model, *f)).collect()
}

fn target_names(model: &ModelSpec, targets: &[FrozenSet]) -> Vec<Vec<String>> {
    targets
        .iter()
        .map(|t| t.iter().map(|f| factor_name(model, *f)).collect())
        .collect()
}

/// Writes one CSV per block and the manifest.
pub fn cmd_sample(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.method != MethodKind::Macroparameter {
        return Err(CliError::Config("`sample` writes macroparameter designs only".into()));
    }
    let model = cfg.model()?;
    let n = cfg.n()?;
    let targets = targets(&model, cfg.targets.as_deref())?;
    let plan = plan(&model, cfg.algorithm, &targets)?;
    let pair = build_design_pair(&model, n, RngSeed(cfg.seed()), false)?;
    let inputs = model.input_names();
    let len = model.process().map_or(0, |p| p.length);
    let mut header = inputs.clone();
    header.extend((1..=len).map(|t| format!("{EPS_NAME}{t}")));

    let mut blocks = Vec::new();
    for (b, kind) in plan.blocks().iter().enumerate() {
        let name = plan.block_name(b);
        let (x, eps) = materialize_block(&pair, kind);
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join(block_file(&name)))?));
        w.write_record(&header)?;
        for i in 0..n {
            let mut row: Vec<String> = x.row(i).iter().map(|v| fmt_f64(*v)).collect();
            if let Some(e) = &eps {
                row.extend(e.row(i).iter().map(|v| fmt_f64(*v)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        blocks.push(BlockEntry {
            name,
            rows: n,
            frozen_columns: frozen_columns(&model, kind),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed(),
        scheme: Scheme::SimpleMc,
        n,
        algorithm: cfg.algorithm,
        targets: target_names(&model, &targets),
        inputs,
        eps_columns: len,
        blocks,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(CliError::Data(format!("manifest schema_version {} is not supported", m.schema_version)));
    }
    Ok(m)
}

/// Outputs per block from a `block,row,y` CSV whose rows must follow the
/// manifest order exactly.
pub fn read_evaluations(path: &Path, manifest: &Manifest) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["block", "row", "y"] {
        return Err(CliError::Data(format!("evaluations header must be block,row,y, found {}", header.join(","))));
    }
    let mut found: Vec<(String, usize)> = Vec::new();
    let mut records: Vec<(String, String, String)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let block = rec.get(0).unwrap_or_default().to_string();
        match found.last_mut() {
            Some((b, c)) if *b == block => *c += 1,
            _ => found.push((block.clone(), 1)),
        }
        records.push((block, rec.get(1).unwrap_or_default().to_string(), rec.get(2).unwrap_or_default().to_string()));
    }
    let expected: Vec<(String, usize)> = manifest.blocks.iter().map(|b| (b.name.clone(), b.rows)).collect();
    let sizes = |v: &[(String, usize)]| v.iter().map(|(b, c)| format!("{b}:{c}")).collect::<Vec<_>>().join(" ");
    let mismatch = |detail: String| {
        CliError::Data(format!(
            "manifest mismatch: {detail}; expected blocks {}, found {}",
            sizes(&expected),
            sizes(&found)
        ))
    };
    let mut outputs = Vec::with_capacity(expected.len());
    let mut it = records.iter().enumerate();
    for (name, rows) in &expected {
        let mut y = Vec::with_capacity(*rows);
        for i in 0..*rows {
            let Some((line, (block, row, value))) = it.next() else {
                return Err(mismatch(format!("evaluations end before block {name} row {i}")));
            };
            if block != name || row.parse::<usize>().ok() != Some(i) {
                return Err(mismatch(format!(
                    "record {} is block {block} row {row}, expected block {name} row {i}",
                    line + 1
                )));
            }
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| CliError::Data(format!("record {}: cannot parse `{value}` as a number", line + 1)))?;
            y.push(v);
        }
        outputs.push(y);
    }
    if let Some((line, (block, row, _))) = it.next() {
        return Err(mismatch(format!("unexpected record {} (block {block} row {row})", line + 1)));
    }
    Ok(outputs)
}

fn estimate_external(cfg: &RunConfig, model: &ModelSpec, evaluations: &Path) -> Result<McResult> {
    if cfg.method != MethodKind::Macroparameter {
        return Err(CliError::Config("external evaluations support the macroparameter method only".into()));
    }
    let manifest_path = match &cfg.manifest {
        Some(p) => cfg.resolve(p),
        None => evaluations.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE),
    };
    let manifest = read_manifest(&manifest_path)?;
    if manifest.inputs != model.input_names() || manifest.eps_columns != model.process().map_or(0, |p| p.length) {
        return Err(CliError::Data("manifest inputs do not match the configured model".into()));
    }
    if cfg.n.is_some_and(|n| n != manifest.n) || manifest.algorithm != cfg.algorithm {
        return Err(CliError::Data(format!(
            "manifest has N={} algorithm={}, config asks for N={:?} algorithm={}",
            manifest.n, manifest.algorithm, cfg.n, cfg.algorithm
        )));
    }
    let targets = targets(model, Some(&manifest.targets))?;
    let plan = plan(model, manifest.algorithm, &targets)?;
    let names: Vec<String> = (0..plan.blocks().len()).map(|b| plan.block_name(b)).collect();
    let listed: Vec<String> = manifest.blocks.iter().map(|b| b.name.clone()).collect();
    if names != listed {
        return Err(CliError::Data(format!(
            "manifest blocks {} do not match the design {}",
            listed.join(","),
            names.join(",")
        )));
    }
    let outputs = read_evaluations(evaluations, &manifest)?;
    let design = EvaluatedDesign::new(plan, OutputStore::from_outputs(outputs))?;
    let (run, reports) = design.reports(cfg.bootstrap(), RngSeed(manifest.seed))?;
    Ok(McResult {
        algorithm: manifest.algorithm,
        strategy: Strategy::Macroparameter,
        n: manifest.n,
        run,
        reports,
    })
}

pub fn cmd_estimate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let model = cfg.model()?;
    let result = match &cfg.evaluations {
        Some(p) => estimate_external(cfg, &model, &cfg.resolve(p))?,
        None => {
            if !cfg.is_builtin() {
                return Err(CliError::Config("an external model needs `evaluations`".into()));
            }
            let opts = McOptions::new(cfg.n()?, RngSeed(cfg.seed())).bootstrap(cfg.bootstrap());
            match cfg.method {
                MethodKind::Macroparameter => {
                    let targets = targets(&model, cfg.targets.as_deref())?;
                    match cfg.algorithm {
                        Algorithm::Saltelli => saltelli_first_and_total(&model, &singletons(&targets)?, &opts)?,
                        Algorithm::Sobol => sobol_first_order(&model, &targets, &opts)?,
                    }
                }
                MethodKind::Trigger => trigger_estimate(&model, &opts, cfg.algorithm, None)?,
                _ => return Err(CliError::Config("`estimate` takes the macroparameter or trigger method".into())),
            }
        }
    };
    let mut f = BufWriter::new(File::create(out.join(INDICES_FILE))?);
    result.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}
