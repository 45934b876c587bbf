//! Pick-freeze Monte-Carlo estimators of Sobol' indices.
//!
//! Two algorithms are provided. [`Algorithm::Sobol`] evaluates A plus one
//! block per subset and gives first-order and closed second-order indices.
//! [`Algorithm::Saltelli`] evaluates A, B and one block per factor and gives
//! first-order and total indices. The functional input is handled either as
//! one macroparameter (a single pick-freeze factor) or through a uniform
//! trigger variable that switches it between a nominal trajectory and a fresh
//! realization.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{fmt_f64, DataError};
use crate::model::{Distribution, ModelError, ModelSpec};
use crate::report::IndexReport;
use crate::sampling::{
    fill_chunk, n_chunks, pair_chunk, stream, tag, unit_open, DesignPair, Factor, FrozenSet, RngSeed, RowMatrix,
    SamplingError, ROW_CHUNK,
};
use crate::stats::{self, Compensated};

pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 100;
pub const DEFAULT_MEMORY_BUDGET: usize = 256 << 20;
pub const MIN_SAMPLE_SIZE: usize = 100;
pub const TRIGGER_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("zero output variance")]
    ZeroVariance,
    #[error("sample size must be at least {MIN_SAMPLE_SIZE}, got {0}")]
    SampleSize(usize),
    #[error("bootstrap needs at least 2 replicates, got {0}")]
    Replicates(usize),
    #[error("no estimation targets given")]
    NoTargets,
    #[error("subset {0} has more than two factors; only first- and second-order subsets are supported")]
    SubsetTooLarge(String),
    #[error("nominal trajectory has length {found}, process has {expected} steps")]
    NominalLength { expected: usize, found: usize },
    #[error("block {block} has {found} outputs, expected {expected}")]
    BlockSize {
        block: String,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} evaluation blocks, found {found}")]
    BlockCount { expected: usize, found: usize },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("output store: {0}")]
    Store(#[from] io::Error),
}

impl From<DataError> for EstimatorError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(e) => EstimatorError::Store(e),
            other => EstimatorError::Store(io::Error::other(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sobol,
    #[default]
    Saltelli,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Sobol => "sobol",
            Algorithm::Saltelli => "saltelli",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Macroparameter,
    Trigger,
}

#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub n: usize,
    pub seed: RngSeed,
    /// 0 disables the bootstrap.
    pub bootstrap_replicates: usize,
    /// Bytes of model outputs held in memory before spilling to disk.
    pub memory_budget: usize,
}

impl McOptions {
    pub fn new(n: usize, seed: RngSeed) -> Self {
        Self {
            n,
            seed,
            bootstrap_replicates: DEFAULT_BOOTSTRAP_REPLICATES,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn bootstrap(mut self, replicates: usize) -> Self {
        self.bootstrap_replicates = replicates;
        self
    }
}

/// An evaluation block: A, B, or B with the given factors taken from A.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockKind {
    A,
    B,
    Mixed(FrozenSet),
}

/// Names factors as they appear in index names: `1`, `2`, ..., `eps`, `xi`.
#[derive(Debug, Clone, Copy)]
pub struct Labeler {
    pub scalars: usize,
    pub xi: Option<usize>,
}

impl Labeler {
    pub fn label(&self, f: Factor) -> String {
        match f {
            Factor::Eps => "eps".to_string(),
            Factor::Scalar(i) if Some(i) == self.xi => "xi".to_string(),
            Factor::Scalar(i) => (i + 1).to_string(),
        }
    }

    pub fn join(&self, set: &FrozenSet) -> String {
        let sep = if self.scalars >= 10 { "_" } else { "" };
        set.iter().map(|f| self.label(*f)).collect::<Vec<_>>().join(sep)
    }
}

/// Which blocks to evaluate and which indices to derive from them.
#[derive(Debug, Clone)]
pub struct Plan {
    algorithm: Algorithm,
    blocks: Vec<BlockKind>,
    outputs: Vec<Derived>,
    labeler: Labeler,
}

#[derive(Debug, Clone)]
enum Derived {
    First { name: String, block: usize },
    Pair { name: String, block: usize, a: usize, b: usize },
    Total { name: String, block: usize },
}

impl Derived {
    fn name(&self) -> &str {
        match self {
            Derived::First { name, .. } | Derived::Pair { name, .. } | Derived::Total { name, .. } => name,
        }
    }
}

impl Plan {
    /// Sobol' layout: A, then one block per subset. Singletons needed for a
    /// pair's interaction are added automatically.
    pub fn sobol(targets: &[FrozenSet], labeler: Labeler) -> Result<Plan, EstimatorError> {
        if targets.is_empty() {
            return Err(EstimatorError::NoTargets);
        }
        let mut subsets: Vec<FrozenSet> = Vec::new();
        let index_of = |s: FrozenSet, subsets: &mut Vec<FrozenSet>| -> usize {
            if let Some(i) = subsets.iter().position(|t| *t == s) {
                i
            } else {
                subsets.push(s);
                subsets.len() - 1
            }
        };
        let mut outputs = Vec::new();
        for t in targets {
            let name = format!("S{}", labeler.join(t));
            match t.len() {
                0 => return Err(SamplingError::EmptyFrozenSet.into()),
                1 => {
                    let block = index_of(t.clone(), &mut subsets) + 1;
                    outputs.push(Derived::First { name, block });
                }
                2 => {
                    let mut it = t.iter();
                    let (fa, fb) = (*it.next().unwrap(), *it.next().unwrap());
                    let a = index_of(FrozenSet::from([fa]), &mut subsets) + 1;
                    let b = index_of(FrozenSet::from([fb]), &mut subsets) + 1;
                    let block = index_of(t.clone(), &mut subsets) + 1;
                    outputs.push(Derived::Pair { name, block, a, b });
                }
                _ => return Err(EstimatorError::SubsetTooLarge(labeler.join(t))),
            }
        }
        let mut blocks = vec![BlockKind::A];
        blocks.extend(subsets.into_iter().map(BlockKind::Mixed));
        Ok(Plan {
            algorithm: Algorithm::Sobol,
            blocks,
            outputs,
            labeler,
        })
    }

    /// Saltelli layout: A, B, then for each target the block sharing every
    /// other factor with A.
    pub fn saltelli(targets: &[Factor], all: &FrozenSet, labeler: Labeler) -> Result<Plan, EstimatorError> {
        if targets.is_empty() {
            return Err(EstimatorError::NoTargets);
        }
        let mut blocks = vec![BlockKind::A, BlockKind::B];
        let mut outputs = Vec::new();
        for &t in targets {
            let complement: FrozenSet = all.iter().copied().filter(|f| *f != t).collect();
            blocks.push(BlockKind::Mixed(complement));
            let block = blocks.len() - 1;
            let label = labeler.label(t);
            outputs.push(Derived::First {
                name: format!("S{label}"),
                block,
            });
            outputs.push(Derived::Total {
                name: format!("ST{label}"),
                block,
            });
        }
        Ok(Plan {
            algorithm: Algorithm::Saltelli,
            blocks,
            outputs,
            labeler,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn blocks(&self) -> &[BlockKind] {
        &self.blocks
    }

    pub fn block_name(&self, i: usize) -> String {
        match &self.blocks[i] {
            BlockKind::A => "A".to_string(),
            BlockKind::B => "B".to_string(),
            BlockKind::Mixed(_) => format!("C{}", i - self.first_mixed() + 1),
        }
    }

    fn first_mixed(&self) -> usize {
        match self.algorithm {
            Algorithm::Sobol => 1,
            Algorithm::Saltelli => 2,
        }
    }

    pub fn index_names(&self) -> Vec<String> {
        self.outputs.iter().map(|d| d.name().to_string()).collect()
    }

    pub fn labeler(&self) -> Labeler {
        self.labeler
    }

    /// Model evaluations needed for `n` rows.
    pub fn cost(&self, n: usize) -> usize {
        n * self.blocks.len()
    }

    fn estimate(&self, y: &[Vec<f64>], idx: Option<&[usize]>) -> Result<(EstimatorRun, Vec<f64>), EstimatorError> {
        let n = y[0].len();
        let rows = Rows { idx, n };
        let nf = n as f64;
        let f0 = rows.sum(&y[0]) / nf;
        let centered = rows.dot(&y[0], &y[0]) / nf - f0 * f0;
        if centered <= 1e-13 * f0 * f0 || !centered.is_finite() {
            return Err(EstimatorError::ZeroVariance);
        }
        let mut partial = Vec::new();
        let mut complement = Vec::new();
        let (d, values) = match self.algorithm {
            Algorithm::Sobol => {
                let d = rows.dot(&y[0], &y[0]) / (nf - 1.0) - f0 * f0;
                if d <= 0.0 || !d.is_finite() {
                    return Err(EstimatorError::ZeroVariance);
                }
                let ds: Vec<f64> = (1..self.blocks.len())
                    .map(|b| rows.dot(&y[0], &y[b]) / (nf - 1.0) - f0 * f0)
                    .collect();
                for (b, v) in ds.iter().enumerate() {
                    if let BlockKind::Mixed(s) = &self.blocks[b + 1] {
                        partial.push((s.clone(), *v));
                    }
                }
                let values = self
                    .outputs
                    .iter()
                    .map(|o| match *o {
                        Derived::First { block, .. } => ds[block - 1] / d,
                        Derived::Pair { block, a, b, .. } => (ds[block - 1] - ds[a - 1] - ds[b - 1]) / d,
                        Derived::Total { .. } => unreachable!("sobol plans have no totals"),
                    })
                    .collect();
                (d, values)
            }
            Algorithm::Saltelli => {
                let v = rows.dot(&y[0], &y[0]) / nf - f0 * f0;
                if v <= 0.0 || !v.is_finite() {
                    return Err(EstimatorError::ZeroVariance);
                }
                let mean_ab = rows.dot(&y[0], &y[1]) / nf;
                let mut values = Vec::with_capacity(self.outputs.len());
                for o in &self.outputs {
                    match *o {
                        Derived::First { block, .. } => {
                            let di = rows.dot(&y[1], &y[block]) / nf - mean_ab;
                            values.push(di / v);
                            if let BlockKind::Mixed(s) = &self.blocks[block] {
                                partial.push((s.clone(), di));
                            }
                        }
                        Derived::Total { block, .. } => {
                            let dc = rows.dot(&y[0], &y[block]) / nf - f0 * f0;
                            values.push(1.0 - dc / v);
                            if let BlockKind::Mixed(s) = &self.blocks[block] {
                                complement.push((s.clone(), dc));
                            }
                        }
                        Derived::Pair { .. } => unreachable!("saltelli plans have no pairs"),
                    }
                }
                (v, values)
            }
        };
        Ok((
            EstimatorRun {
                f0,
                d,
                partial,
                complement,
                n_evals: self.cost(n),
            },
            values,
        ))
    }
}

struct Rows<'a> {
    idx: Option<&'a [usize]>,
    n: usize,
}

impl Rows<'_> {
    fn sum(&self, x: &[f64]) -> f64 {
        let mut acc = Compensated::default();
        match self.idx {
            Some(idx) => idx.iter().for_each(|&k| acc.add(x[k])),
            None => x[..self.n].iter().for_each(|&v| acc.add(v)),
        }
        acc.value()
    }

    fn dot(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = Compensated::default();
        match self.idx {
            Some(idx) => idx.iter().for_each(|&k| acc.add(x[k] * y[k])),
            None => x[..self.n].iter().zip(y).for_each(|(a, b)| acc.add(a * b)),
        }
        acc.value()
    }
}

/// Estimated mean, variance and partial variances of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRun {
    pub f0: f64,
    pub d: f64,
    /// First-order (closed) partial variances `D_s`.
    pub partial: Vec<(FrozenSet, f64)>,
    /// Variances `D_~i` of the complementary subsets (Saltelli only).
    pub complement: Vec<(FrozenSet, f64)>,
    pub n_evals: usize,
}

enum Spill {
    None,
    File { writer: BufWriter<File>, len: usize },
}

/// Model outputs per block, kept in memory up to a byte budget and spilled
/// to temporary CSV files beyond it.
pub struct OutputStore {
    budget: usize,
    mem: Vec<Vec<f64>>,
    spill: Vec<Spill>,
}

impl OutputStore {
    pub fn new(blocks: usize, budget: usize) -> Self {
        Self {
            budget,
            mem: vec![Vec::new(); blocks],
            spill: (0..blocks).map(|_| Spill::None).collect(),
        }
    }

    pub fn from_outputs(outputs: Vec<Vec<f64>>) -> Self {
        let blocks = outputs.len();
        Self {
            budget: usize::MAX,
            mem: outputs,
            spill: (0..blocks).map(|_| Spill::None).collect(),
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.mem.len()
    }

    pub fn is_spilled(&self) -> bool {
        self.spill.iter().any(|s| matches!(s, Spill::File { .. }))
    }

    pub fn len(&self, block: usize) -> usize {
        let spilled = match &self.spill[block] {
            Spill::None => 0,
            Spill::File { len, .. } => *len,
        };
        spilled + self.mem[block].len()
    }

    fn in_memory_bytes(&self) -> usize {
        self.mem.iter().map(|m| m.len() * std::mem::size_of::<f64>()).sum()
    }

    pub fn append(&mut self, block: usize, values: &[f64]) -> io::Result<()> {
        self.mem[block].extend_from_slice(values);
        if self.in_memory_bytes() > self.budget {
            for b in 0..self.mem.len() {
                self.flush_block(b)?;
            }
        }
        Ok(())
    }

    fn flush_block(&mut self, block: usize) -> io::Result<()> {
        if matches!(self.spill[block], Spill::None) {
            self.spill[block] = Spill::File {
                writer: BufWriter::new(tempfile::tempfile()?),
                len: 0,
            };
        }
        let values = std::mem::take(&mut self.mem[block]);
        if let Spill::File { writer, len } = &mut self.spill[block] {
            for v in &values {
                writeln!(writer, "{}", fmt_f64(*v))?;
            }
            *len += values.len();
        }
        Ok(())
    }

    /// All outputs of one block, in row order.
    pub fn block(&mut self, block: usize) -> io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len(block));
        if let Spill::File { writer, .. } = &mut self.spill[block] {
            writer.flush()?;
            let file = writer.get_mut();
            file.seek(SeekFrom::Start(0))?;
            for line in BufReader::new(&*file).lines() {
                let line = line?;
                out.push(line.parse::<f64>().map_err(io::Error::other)?);
            }
            file.seek(SeekFrom::End(0))?;
        }
        out.extend_from_slice(&self.mem[block]);
        Ok(out)
    }
}

/// Outputs of every block of a plan, ready for estimation and bootstrap.
pub struct EvaluatedDesign {
    plan: Plan,
    n: usize,
    outputs: Vec<Vec<f64>>,
}

impl EvaluatedDesign {
    pub fn new(plan: Plan, mut store: OutputStore) -> Result<Self, EstimatorError> {
        if store.n_blocks() != plan.blocks.len() {
            return Err(EstimatorError::BlockCount {
                expected: plan.blocks.len(),
                found: store.n_blocks(),
            });
        }
        let outputs: Vec<Vec<f64>> = (0..store.n_blocks()).map(|b| store.block(b)).collect::<Result<_, _>>()?;
        let n = outputs[0].len();
        for (b, o) in outputs.iter().enumerate() {
            if o.len() != n {
                return Err(EstimatorError::BlockSize {
                    block: plan.block_name(b),
                    expected: n,
                    found: o.len(),
                });
            }
        }
        if n < 2 {
            return Err(EstimatorError::SampleSize(n));
        }
        Ok(Self { plan, n, outputs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn estimate(&self) -> Result<(EstimatorRun, Vec<f64>), EstimatorError> {
        self.plan.estimate(&self.outputs, None)
    }

    /// Bootstrap sd of every index: rows are resampled jointly across all
    /// blocks and the estimator formulas recomputed without new model calls.
    pub fn bootstrap_sd(&self, replicates: usize, seed: RngSeed) -> Result<Vec<f64>, EstimatorError> {
        if replicates < 2 {
            return Err(EstimatorError::Replicates(replicates));
        }
        let n = self.n;
        let reps: Vec<Vec<f64>> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream(seed, tag::BOOTSTRAP, r as u64);
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                match self.plan.estimate(&self.outputs, Some(&idx)) {
                    Ok((_, v)) => v,
                    Err(_) => vec![f64::NAN; self.plan.outputs.len()],
                }
            })
            .collect();
        Ok((0..self.plan.outputs.len())
            .map(|j| stats::sd(&reps.iter().map(|r| r[j]).collect::<Vec<_>>()))
            .collect())
    }

    pub fn reports(&self, replicates: usize, seed: RngSeed) -> Result<(EstimatorRun, Vec<IndexReport>), EstimatorError> {
        let (run, values) = self.estimate()?;
        let sds = if replicates == 0 {
            None
        } else {
            Some(self.bootstrap_sd(replicates, seed)?)
        };
        let reports = self
            .plan
            .outputs
            .iter()
            .zip(&values)
            .enumerate()
            .map(|(j, (o, v))| {
                if *v < 0.0 {
                    log::warn!("negative estimate {} = {v} reported unclipped", o.name());
                }
                IndexReport::mc(o.name(), *v, sds.as_ref().map(|s| s[j]))
            })
            .collect();
        Ok((run, reports))
    }
}

#[derive(Debug, Clone)]
pub struct McResult {
    pub algorithm: Algorithm,
    pub strategy: Strategy,
    pub n: usize,
    pub run: EstimatorRun,
    pub reports: Vec<IndexReport>,
}

impl McResult {
    pub fn get(&self, name: &str) -> Option<&IndexReport> {
        crate::report::find(&self.reports, name)
    }

    pub fn estimate(&self, name: &str) -> f64 {
        self.get(name).map_or(f64::NAN, |r| r.estimate)
    }

    pub fn sd(&self, name: &str) -> f64 {
        self.get(name).and_then(|r| r.sd).unwrap_or(f64::NAN)
    }

    pub fn algo_label(&self) -> String {
        match self.strategy {
            Strategy::Macroparameter => self.algorithm.to_string(),
            Strategy::Trigger => format!("{}_trigger", self.algorithm),
        }
    }

    /// Columns: index_name, estimate, sd, method, N, algo.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index_name", "estimate", "sd", "method", "N", "algo"])?;
        let algo = self.algo_label();
        for r in &self.reports {
            w.write_record([
                r.name.clone(),
                fmt_f64(r.estimate),
                r.sd.map(fmt_f64).unwrap_or_default(),
                r.method.to_string(),
                self.n.to_string(),
                algo.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Sampler<'a> {
    Macro,
    Trigger { nominal: &'a [f64] },
}

fn chunk_len(n: usize, c: usize) -> usize {
    ROW_CHUNK.min(n - c * ROW_CHUNK)
}

fn assemble(dst: &mut [f64], a: &[f64], b: &[f64], kind: &BlockKind) -> bool {
    match kind {
        BlockKind::A => {
            dst.copy_from_slice(a);
            true
        }
        BlockKind::B => {
            dst.copy_from_slice(b);
            false
        }
        BlockKind::Mixed(s) => {
            dst.copy_from_slice(b);
            for f in s {
                if let Factor::Scalar(j) = *f {
                    dst[j] = a[j];
                }
            }
            s.contains(&Factor::Eps)
        }
    }
}

fn eval_chunk(
    model: &ModelSpec,
    seed: RngSeed,
    n: usize,
    c: usize,
    blocks: &[BlockKind],
    sampler: Sampler<'_>,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let rows = chunk_len(n, c);
    match sampler {
        Sampler::Macro => {
            let ch = pair_chunk(model, seed, c, rows, false);
            let p = model.dim();
            let len = model.process().map_or(0, |s| s.length);
            let mut x = vec![0.0; p];
            blocks
                .iter()
                .map(|kind| {
                    (0..rows)
                        .map(|r| {
                            let from_a = assemble(&mut x, &ch.a[r * p..(r + 1) * p], &ch.b[r * p..(r + 1) * p], kind);
                            let eps = if from_a { &ch.eps_a } else { &ch.eps_b };
                            model.evaluate(&x, eps.as_ref().map(|e| &e[r * len..(r + 1) * len]))
                        })
                        .collect()
                })
                .collect()
        }
        Sampler::Trigger { nominal } => {
            let spec = model.process().expect("trigger runs are validated to have a process");
            let mut laws: Vec<Distribution> = model.inputs().iter().map(|i| i.law).collect();
            laws.push(Distribution::Uniform { lo: 0.0, hi: 1.0 });
            let q = laws.len();
            let mut a = vec![0.0; rows * q];
            let mut b = vec![0.0; rows * q];
            fill_chunk(&laws, &mut a, seed, tag::MATRIX_A, c);
            fill_chunk(&laws, &mut b, seed, tag::MATRIX_B, c);
            let mut x = vec![0.0; q];
            let mut fresh = vec![0.0; spec.length];
            blocks
                .iter()
                .enumerate()
                .map(|(bi, kind)| {
                    let mut rng = stream(seed, tag::FRESH_EPS, ((bi as u64) << 32) | c as u64);
                    (0..rows)
                        .map(|r| {
                            assemble(&mut x, &a[r * q..(r + 1) * q], &b[r * q..(r + 1) * q], kind);
                            let eps: &[f64] = if x[q - 1] < TRIGGER_THRESHOLD {
                                nominal
                            } else {
                                for v in fresh.iter_mut() {
                                    *v = spec.step_law.quantile(unit_open(&mut rng));
                                }
                                &fresh
                            };
                            model.evaluate(&x[..q - 1], Some(eps))
                        })
                        .collect()
                })
                .collect()
        }
    }
}

fn evaluate_plan(
    model: &ModelSpec,
    plan: &Plan,
    opts: &McOptions,
    sampler: Sampler<'_>,
) -> Result<EvaluatedDesign, EstimatorError> {
    let n = opts.n;
    let mut store = OutputStore::new(plan.blocks.len(), opts.memory_budget);
    let chunks = n_chunks(n);
    let batch = rayon::current_num_threads().max(1) * 4;
    let mut start = 0;
    while start < chunks {
        let end = (start + batch).min(chunks);
        let outs: Vec<Result<Vec<Vec<f64>>, ModelError>> = (start..end)
            .into_par_iter()
            .map(|c| eval_chunk(model, opts.seed, n, c, &plan.blocks, sampler))
            .collect();
        for o in outs {
            for (b, v) in o?.iter().enumerate() {
                store.append(b, v)?;
            }
        }
        start = end;
    }
    EvaluatedDesign::new(plan.clone(), store)
}

fn check(model: &ModelSpec, factors: impl IntoIterator<Item = Factor>, opts: &McOptions) -> Result<(), EstimatorError> {
    if opts.n < MIN_SAMPLE_SIZE {
        return Err(EstimatorError::SampleSize(opts.n));
    }
    for f in factors {
        match f {
            Factor::Eps if model.process().is_none() => return Err(SamplingError::NoFunctionalInput.into()),
            Factor::Scalar(index) if index >= model.dim() => {
                return Err(SamplingError::ColumnOutOfRange { index, dim: model.dim() }.into())
            }
            _ => {}
        }
    }
    Ok(())
}

/// Every pick-freeze factor of a model: its scalar inputs plus the
/// functional input as one macroparameter.
pub fn model_factors(model: &ModelSpec) -> FrozenSet {
    let mut all: FrozenSet = (0..model.dim()).map(Factor::Scalar).collect();
    if model.process().is_some() {
        all.insert(Factor::Eps);
    }
    all
}

pub fn macro_labeler(model: &ModelSpec) -> Labeler {
    Labeler {
        scalars: model.dim(),
        xi: None,
    }
}

fn run(
    model: &ModelSpec,
    plan: Plan,
    opts: &McOptions,
    sampler: Sampler<'_>,
    strategy: Strategy,
) -> Result<McResult, EstimatorError> {
    let design = evaluate_plan(model, &plan, opts, sampler)?;
    let (run, reports) = design.reports(opts.bootstrap_replicates, opts.seed)?;
    Ok(McResult {
        algorithm: plan.algorithm,
        strategy,
        n: opts.n,
        run,
        reports,
    })
}

/// First-order indices of each target subset by the Sobol' algorithm. A
/// two-factor subset yields its second-order interaction index, i.e. the
/// closed index minus both first-order ones.
pub fn sobol_first_order(model: &ModelSpec, targets: &[FrozenSet], opts: &McOptions) -> Result<McResult, EstimatorError> {
    check(model, targets.iter().flatten().copied(), opts)?;
    let plan = Plan::sobol(targets, macro_labeler(model))?;
    run(model, plan, opts, Sampler::Macro, Strategy::Macroparameter)
}

/// First-order and total indices of each target factor by the Saltelli
/// algorithm.
pub fn saltelli_first_and_total(model: &ModelSpec, targets: &[Factor], opts: &McOptions) -> Result<McResult, EstimatorError> {
    check(model, targets.iter().copied(), opts)?;
    let plan = Plan::saltelli(targets, &model_factors(model), macro_labeler(model))?;
    run(model, plan, opts, Sampler::Macro, Strategy::Macroparameter)
}

/// Indices of the scalar inputs and of the trigger `xi`. The functional
/// input takes the nominal trajectory when `xi < 0.5` and a fresh
/// realization otherwise. `nominal` defaults to the per-step mean.
pub fn trigger_estimate(
    model: &ModelSpec,
    opts: &McOptions,
    algorithm: Algorithm,
    nominal: Option<&[f64]>,
) -> Result<McResult, EstimatorError> {
    let spec = model.process().ok_or(SamplingError::NoFunctionalInput)?;
    check(model, [], opts)?;
    let default = spec.mean_trajectory();
    let nominal = nominal.unwrap_or(&default);
    if nominal.len() != spec.length {
        return Err(EstimatorError::NominalLength {
            expected: spec.length,
            found: nominal.len(),
        });
    }
    let p = model.dim();
    let labeler = Labeler {
        scalars: p + 1,
        xi: Some(p),
    };
    let factors: Vec<Factor> = (0..=p).map(Factor::Scalar).collect();
    let plan = match algorithm {
        Algorithm::Sobol => {
            let singles: Vec<FrozenSet> = factors.iter().map(|f| FrozenSet::from([*f])).collect();
            Plan::sobol(&singles, labeler)?
        }
        Algorithm::Saltelli => Plan::saltelli(&factors, &factors.iter().copied().collect(), labeler)?,
    };
    run(model, plan, opts, Sampler::Trigger { nominal }, Strategy::Trigger)
}

/// Input rows of one block of a materialized design pair.
pub fn materialize_block(pair: &DesignPair, kind: &BlockKind) -> (RowMatrix, Option<Arc<RowMatrix>>) {
    match kind {
        BlockKind::A => (pair.a.clone(), pair.eps_a.clone()),
        BlockKind::B => (pair.b.clone(), pair.eps_b.clone()),
        BlockKind::Mixed(s) if s.is_empty() => (pair.b.clone(), pair.eps_b.clone()),
        BlockKind::Mixed(s) => crate::sampling::substitute_columns(pair, s).expect("plan factors are validated"),
    }
}

/// Convenience for the closed pair `{a, b}`.
pub fn pair(a: Factor, b: Factor) -> FrozenSet {
    BTreeSet::from([a, b])
}

pub fn single(a: Factor) -> FrozenSet {
    BTreeSet::from([a])
}
