//! `fit-joint` and `replicate`: joint metamodels, their sensitivity report
//! and the replication study.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use funsens::data::{DataError, DataTable};
use funsens::joint::{fit_joint, write_summary_csv, Q2Method};
use funsens::metamodel::{metamodel_sensitivity, sa_replication_study, write_boxplot_csv, MetamodelOptions};
use funsens::sampling::{learning_sample, RngSeed};
use serde::Serialize;

use crate::config::{Q2Kind, RunConfig};
use crate::design::write_json;
use crate::error::{CliError, Result};

fn write_csv(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::result::Result<(), DataError>) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    engine: String,
    n: usize,
    converged: bool,
    cycles: usize,
    eql: f64,
    mean_explained_deviance: f64,
    q2_method: &'static str,
    q2: f64,
}

pub fn cmd_fit_joint(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.engine_spec()?;
    let model = cfg.model()?;
    let data = match &cfg.learning {
        Some(p) => DataTable::read_csv_path(cfg.resolve(p))?,
        None => {
            if !cfg.is_builtin() {
                return Err(CliError::Config("an external model needs a `learning` CSV".into()));
            }
            let [n] = cfg.n_learn()?[..] else {
                return Err(CliError::Config("`fit-joint` takes a single `n_learn`".into()));
            };
            let response = spec.mean.response.clone().unwrap_or_default();
            let t = learning_sample(&model, n, cfg.scheme, RngSeed(cfg.seed()), &response)?;
            write_csv(out, "learning.csv", |w| t.write_csv(w))?;
            t
        }
    };
    let joint = fit_joint(&spec.mean, &spec.dispersion, &data, spec.engine)?;

    let (mean_rows, disp_rows) = (joint.mean_summary()?, joint.dispersion_summary()?);
    write_csv(out, "mean_summary.csv", |w| write_summary_csv(&mean_rows, w))?;
    write_csv(out, "dispersion_summary.csv", |w| write_summary_csv(&disp_rows, w))?;
    write_csv(out, "eql_trace.csv", |w| joint.write_trace_csv(w))?;
    let diag = joint.diagnostics();
    write_csv(out, "residuals.csv", |w| diag.write_residuals_csv(w))?;
    write_csv(out, "observed_predicted.csv", |w| diag.write_observed_predicted_csv(w))?;
    write_csv(out, "qq.csv", |w| diag.write_qq_csv(w))?;
    write_csv(out, "residual_smoother.csv", |w| diag.write_smoother_csv(w))?;

    let (q2_method, method) = match cfg.q2 {
        Q2Kind::CrossValidation => ("cross_validation", Q2Method::CrossValidation),
        Q2Kind::LeaveOneOut => ("leave_one_out", Q2Method::LeaveOneOut),
    };
    let summary = FitSummary {
        engine: spec.engine.to_string(),
        n: data.n_rows(),
        converged: joint.converged,
        cycles: joint.eql_trace.len(),
        eql: joint.eql_trace.last().copied().unwrap_or(f64::NAN),
        mean_explained_deviance: joint.mean_explained_deviance(),
        q2_method,
        q2: joint.predictivity_q2(method, None)?,
    };
    write_json(&out.join("fit.json"), &summary)?;

    let opts = MetamodelOptions {
        n: cfg.mc_size(),
        replicates: cfg.mc_replicates(),
        fresh: cfg.fresh(),
        seed: RngSeed(cfg.seed()),
    };
    let report = metamodel_sensitivity(&joint, model.inputs(), &opts)?;
    write_csv(out, "indices.csv", |w| report.write_csv(w))?;
    write_csv(out, "variance_audit.csv", |w| report.write_audit_csv(w))?;
    Ok(())
}

pub fn cmd_replicate(cfg: &RunConfig, out: &Path) -> Result<()> {
    if !cfg.is_builtin() {
        return Err(CliError::Config("`replicate` needs a builtin model".into()));
    }
    let model = cfg.model()?;
    let specs = cfg.engine_specs()?;
    let replicates = cfg.replicates.ok_or_else(|| CliError::Config("`replicates` is required".into()))?;
    let mc = MetamodelOptions {
        n: cfg.mc_size(),
        replicates: cfg.mc_replicates.unwrap_or(1),
        fresh: cfg.fresh(),
        seed: RngSeed(cfg.seed()),
    };
    let response = specs[0].mean.response.clone().unwrap_or_default();
    let mut boxes = Vec::new();
    for n in cfg.n_learn()? {
        let study = sa_replication_study(&model, &response, &specs, n, replicates, RngSeed(cfg.seed()), &mc)?;
        for (engine, r, msg) in &study.failures {
            eprintln!("warning: {engine} replicate {r} at n={n} failed: {msg}");
        }
        write_csv(out, &format!("replicates_n{n}.csv"), |w| study.write_csv(w))?;
        boxes.extend(study.boxes);
    }
    write_csv(out, "boxplot.csv", |w| write_boxplot_csv(&boxes, w))
}
