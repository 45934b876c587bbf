//! Random streams, marginal and Latin hypercube sampling, functional-input
//! realizations and pick-freeze design pairs.
//!
//! Every matrix is generated in fixed-size row chunks, each drawing from its
//! own ChaCha stream keyed by `(seed, purpose, chunk)`. Output therefore does
//! not depend on the number of worker threads, and a chunk can be regenerated
//! on its own without materializing the whole design.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataTable;
use crate::model::{Distribution, ModelError, ModelSpec, ProcessSpec};

/// Rows per independently seeded generation chunk.
pub const ROW_CHUNK: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("sample size must be at least {min}, got {found}")]
    SampleSize { min: usize, found: usize },
    #[error("the model has no functional input; `eps` cannot be shared or frozen")]
    NoFunctionalInput,
    #[error("frozen set must not be empty")]
    EmptyFrozenSet,
    #[error("column index {index} out of range for {dim} scalar inputs")]
    ColumnOutOfRange { index: usize, dim: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Derive an independent child seed, e.g. one per replicate.
    pub fn derive(self, tag: u64, index: u64) -> RngSeed {
        let mut z = self.0 ^ splitmix(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
        z = splitmix(z);
        RngSeed(z)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream purposes. Each `(seed, tag, index)` triple is an independent stream.
pub(crate) mod tag {
    pub const MATRIX_A: u64 = 1;
    pub const MATRIX_B: u64 = 2;
    pub const EPS_A: u64 = 3;
    pub const EPS_B: u64 = 4;
    pub const LHS: u64 = 5;
    pub const PROCESS: u64 = 6;
    pub const FRESH_EPS: u64 = 7;
    pub const BOOTSTRAP: u64 = 8;
    pub const LEARNING: u64 = 9;
    pub const LEARNING_EPS: u64 = 10;
    pub const METAMODEL: u64 = 11;
    pub const FRESH_INPUT: u64 = 12;
    pub const REPLICATION: u64 = 13;
}

pub(crate) fn stream(seed: RngSeed, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    rng.set_stream((tag << 40) ^ index);
    rng
}

/// Uniform draw in the open interval (0, 1) from 53 random bits.
pub(crate) fn unit_open(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    SimpleMc,
    Lhs,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::SimpleMc => "simple_mc",
            Scheme::Lhs => "lhs",
        })
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_n(n: usize, min: usize) -> Result<(), SamplingError> {
    if n < min {
        Err(SamplingError::SampleSize { min, found: n })
    } else {
        Ok(())
    }
}

fn chunk_rows(n: usize, chunk: usize) -> usize {
    ROW_CHUNK.min(n - chunk * ROW_CHUNK)
}

pub(crate) fn n_chunks(n: usize) -> usize {
    n.div_ceil(ROW_CHUNK)
}

/// Fill the rows of one chunk with independent draws, column `j` from `laws[j]`.
pub(crate) fn fill_chunk(laws: &[Distribution], out: &mut [f64], seed: RngSeed, tag: u64, chunk: usize) {
    let mut rng = stream(seed, tag, chunk as u64);
    for (slot, law) in out.iter_mut().zip(laws.iter().cycle()) {
        *slot = law.quantile(unit_open(&mut rng));
    }
}

fn fill_simple(laws: &[Distribution], n: usize, seed: RngSeed, tag: u64) -> RowMatrix {
    let cols = laws.len();
    let mut m = RowMatrix::zeros(n, cols);
    if cols == 0 {
        return m;
    }
    m.data
        .par_chunks_mut(ROW_CHUNK * cols)
        .enumerate()
        .for_each(|(c, out)| fill_chunk(laws, out, seed, tag, c));
    m
}

fn fill_lhs(laws: &[Distribution], n: usize, seed: RngSeed, tag: u64) -> RowMatrix {
    let cols = laws.len();
    let columns: Vec<Vec<f64>> = laws
        .par_iter()
        .enumerate()
        .map(|(j, law)| {
            let mut rng = stream(seed, tag::LHS, (tag << 24) | j as u64);
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(&mut rng);
            strata
                .into_iter()
                .map(|k| law.quantile((k as f64 + unit_open(&mut rng)) / n as f64))
                .collect()
        })
        .collect();
    let mut m = RowMatrix::zeros(n, cols);
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            m.data[i * cols + j] = *v;
        }
    }
    m
}

pub(crate) fn sample_laws(laws: &[Distribution], n: usize, scheme: Scheme, seed: RngSeed, tag: u64) -> RowMatrix {
    match scheme {
        Scheme::SimpleMc => fill_simple(laws, n, seed, tag),
        Scheme::Lhs => fill_lhs(laws, n, seed, tag),
    }
}

fn laws_of(model: &ModelSpec) -> Vec<Distribution> {
    model.inputs().iter().map(|i| i.law).collect()
}

/// N x p matrix of scalar inputs drawn from their marginal laws.
///
/// Under [`Scheme::Lhs`] each column has exactly one point in each of the
/// N equiprobable strata of its law.
pub fn sample_matrix(model: &ModelSpec, n: usize, scheme: Scheme, seed: RngSeed) -> Result<RowMatrix, SamplingError> {
    check_n(n, 2)?;
    Ok(sample_laws(&laws_of(model), n, scheme, seed, tag::MATRIX_A))
}

pub(crate) fn sample_process_tagged(spec: &ProcessSpec, n: usize, seed: RngSeed, tag: u64) -> RowMatrix {
    fill_simple(&[spec.step_law], n * spec.length, seed, tag).reshape(n, spec.length)
}

impl RowMatrix {
    fn reshape(self, rows: usize, cols: usize) -> RowMatrix {
        RowMatrix::from_vec(rows, cols, self.data)
    }
}

/// N independent realizations (rows) of the discretized process.
pub fn sample_process(spec: &ProcessSpec, n: usize, seed: RngSeed) -> RowMatrix {
    let mut m = RowMatrix::zeros(n, spec.length);
    if n == 0 {
        return m;
    }
    let len = spec.length;
    m.data
        .par_chunks_mut(ROW_CHUNK * len)
        .enumerate()
        .for_each(|(c, out)| fill_chunk(&[spec.step_law], out, seed, tag::PROCESS, c));
    m
}

/// One pick-freeze factor: a scalar column or the whole functional input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Factor {
    Scalar(usize),
    Eps,
}

/// Set of factors taken from matrix A when forming a pick-freeze block.
pub type FrozenSet = BTreeSet<Factor>;

/// Two independent input samples plus functional-input realizations.
#[derive(Debug, Clone)]
pub struct DesignPair {
    pub n: usize,
    pub a: RowMatrix,
    pub b: RowMatrix,
    pub eps_a: Option<Arc<RowMatrix>>,
    pub eps_b: Option<Arc<RowMatrix>>,
}

/// Rows `[start, start + rows)` of a design pair, regenerated independently.
pub(crate) struct PairChunk {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub eps_a: Option<Vec<f64>>,
    pub eps_b: Option<Vec<f64>>,
}

pub(crate) fn pair_chunk(model: &ModelSpec, seed: RngSeed, chunk: usize, rows: usize, share_eps: bool) -> PairChunk {
    let laws = laws_of(model);
    let p = laws.len();
    let mut a = vec![0.0; rows * p];
    let mut b = vec![0.0; rows * p];
    if p > 0 {
        fill_chunk(&laws, &mut a, seed, tag::MATRIX_A, chunk);
        fill_chunk(&laws, &mut b, seed, tag::MATRIX_B, chunk);
    }
    let (eps_a, eps_b) = match model.process() {
        None => (None, None),
        Some(spec) => {
            let mut ea = vec![0.0; rows * spec.length];
            fill_chunk(&[spec.step_law], &mut ea, seed, tag::EPS_A, chunk);
            let eb = if share_eps {
                None
            } else {
                let mut eb = vec![0.0; rows * spec.length];
                fill_chunk(&[spec.step_law], &mut eb, seed, tag::EPS_B, chunk);
                Some(eb)
            };
            (Some(ea), eb)
        }
    };
    PairChunk { a, b, eps_a, eps_b }
}

/// Build the two independent pick-freeze samples. With `share_eps` the
/// functional-input realizations of B alias those of A.
pub fn build_design_pair(model: &ModelSpec, n: usize, seed: RngSeed, share_eps: bool) -> Result<DesignPair, SamplingError> {
    check_n(n, 2)?;
    if share_eps && model.process().is_none() {
        return Err(SamplingError::NoFunctionalInput);
    }
    let chunks: Vec<PairChunk> = (0..n_chunks(n))
        .into_par_iter()
        .map(|c| pair_chunk(model, seed, c, chunk_rows(n, c), share_eps))
        .collect();
    let p = model.dim();
    let mut a = Vec::with_capacity(n * p);
    let mut b = Vec::with_capacity(n * p);
    let len = model.process().map_or(0, |s| s.length);
    let mut ea = Vec::with_capacity(n * len);
    let mut eb = Vec::with_capacity(n * len);
    for ch in chunks {
        a.extend(ch.a);
        b.extend(ch.b);
        if let Some(e) = ch.eps_a {
            ea.extend(e);
        }
        if let Some(e) = ch.eps_b {
            eb.extend(e);
        }
    }
    let (eps_a, eps_b) = match model.process() {
        None => (None, None),
        Some(_) => {
            let ea = Arc::new(RowMatrix::from_vec(n, len, ea));
            let eb = if share_eps {
                Arc::clone(&ea)
            } else {
                Arc::new(RowMatrix::from_vec(n, len, eb))
            };
            (Some(ea), Some(eb))
        }
    };
    Ok(DesignPair {
        n,
        a: RowMatrix::from_vec(n, p, a),
        b: RowMatrix::from_vec(n, p, b),
        eps_a,
        eps_b,
    })
}

pub(crate) fn validate_frozen(frozen: &FrozenSet, dim: usize, has_process: bool) -> Result<(), SamplingError> {
    if frozen.is_empty() {
        return Err(SamplingError::EmptyFrozenSet);
    }
    for f in frozen {
        match *f {
            Factor::Scalar(index) if index >= dim => return Err(SamplingError::ColumnOutOfRange { index, dim }),
            Factor::Eps if !has_process => return Err(SamplingError::NoFunctionalInput),
            _ => {}
        }
    }
    Ok(())
}

/// B with the frozen columns (and/or the functional input) taken from A.
pub fn substitute_columns(
    pair: &DesignPair,
    frozen: &FrozenSet,
) -> Result<(RowMatrix, Option<Arc<RowMatrix>>), SamplingError> {
    let dim = pair.a.cols();
    validate_frozen(frozen, dim, pair.eps_a.is_some())?;
    let mut out = pair.b.clone();
    for i in 0..pair.n {
        let src = pair.a.row(i);
        let dst = out.row_mut(i);
        for f in frozen {
            if let Factor::Scalar(j) = *f {
                dst[j] = src[j];
            }
        }
    }
    let eps = if frozen.contains(&Factor::Eps) {
        pair.eps_a.clone()
    } else {
        pair.eps_b.clone()
    };
    Ok((out, eps))
}

/// Simulate an input-output learning sample: columns are the scalar input
/// names followed by `response`.
pub fn learning_sample(
    model: &ModelSpec,
    n: usize,
    scheme: Scheme,
    seed: RngSeed,
    response: &str,
) -> Result<DataTable, SamplingError> {
    check_n(n, 2)?;
    let x = sample_laws(&laws_of(model), n, scheme, seed, tag::LEARNING);
    let eps = model
        .process()
        .map(|spec| sample_process_tagged(spec, n, seed, tag::LEARNING_EPS));
    let y: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| model.evaluate(x.row(i), eps.as_ref().map(|e| e.row(i))))
        .collect::<Result<_, _>>()?;
    let mut table = DataTable::new();
    for (j, input) in model.inputs().iter().enumerate() {
        table
            .push_column(input.name.clone(), x.column(j))
            .expect("input names are unique");
    }
    table
        .push_column(response.to_string(), y)
        .map_err(|_| SamplingError::Model(ModelError::DuplicateInput(response.to_string())))?;
    Ok(table)
}
