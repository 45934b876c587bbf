//! Design matrices realized from formulas.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::data::{DataError, DataTable};
use crate::formula::{Formula, FormulaError, Term};
use crate::gam::basis::{BasisError, CubicRegressionSpline, Marginals, SmoothBasis, DEFAULT_K, DEFAULT_TENSOR_K};
use crate::gam::SmoothSpec;

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

impl From<DataError> for DesignError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::MissingColumn(c) => DesignError::MissingColumn(c),
            other => DesignError::MissingColumn(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Block {
    Intercept,
    /// A parametric term with the covariate positions of its factors.
    Parametric(Vec<(usize, u32)>),
    Smooth { basis: Box<SmoothBasis>, vars: Vec<usize> },
}

impl Block {
    fn width(&self) -> usize {
        match self {
            Block::Intercept | Block::Parametric(_) => 1,
            Block::Smooth { basis, .. } => basis.dim(),
        }
    }
}

/// Column layout of a realized formula, reusable on new data.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignLayout {
    formula: Formula,
    covariates: Vec<String>,
    names: Vec<String>,
    blocks: Vec<Block>,
}

/// Design matrix with its penalized blocks.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub smooths: Vec<SmoothSpec>,
    pub layout: DesignLayout,
}

fn factors(term: &Term, covariates: &[String]) -> Vec<(usize, u32)> {
    let pos = |v: &str| covariates.iter().position(|c| c == v).expect("covariate listed");
    match term {
        Term::Linear(v) => vec![(pos(v), 1)],
        Term::Power(v, p) => vec![(pos(v), *p)],
        Term::Interaction(ts) => ts.iter().flat_map(|t| factors(t, covariates)).collect(),
        Term::Smooth { .. } | Term::TensorSmooth { .. } => unreachable!("smooths are not parametric"),
    }
}

fn parametric_value(factors: &[(usize, u32)], values: &[f64]) -> f64 {
    factors.iter().map(|&(i, p)| values[i].powi(p as i32)).product()
}

/// Realizes `formula` on `data`: intercept first, then terms in textual
/// order. Smooths sum to zero over the data and are orthogonal to the
/// parametric columns spanning their penalty null space.
pub fn realize_design(formula: &Formula, data: &DataTable) -> Result<Design, DesignError> {
    formula.resolve(data.names())?;
    let covariates = formula.covariates();
    let cols: Vec<&[f64]> = covariates.iter().map(|c| data.column(c)).collect::<Result<_, _>>()?;
    let mut blocks = Vec::new();
    let mut names = Vec::new();
    if formula.intercept {
        blocks.push(Block::Intercept);
        names.push(INTERCEPT.to_string());
    }
    for term in &formula.terms {
        match term {
            Term::Smooth { var, k } => {
                let i = covariates.iter().position(|c| c == var).expect("covariate listed");
                let crs = CubicRegressionSpline::new(var, cols[i], k.unwrap_or(DEFAULT_K))?;
                let linear: Vec<&[f64]> = if formula.has_linear(var) { vec![cols[i]] } else { vec![] };
                let basis = SmoothBasis::build(term.to_string(), vec![var.clone()], Marginals::Single(crs), &[cols[i]], &linear);
                names.extend((1..=basis.dim()).map(|j| format!("{term}.{j}")));
                blocks.push(Block::Smooth { basis: Box::new(basis), vars: vec![i] });
            }
            Term::TensorSmooth { a, b, k } => {
                let ia = covariates.iter().position(|c| c == a).expect("covariate listed");
                let ib = covariates.iter().position(|c| c == b).expect("covariate listed");
                let k = k.unwrap_or(DEFAULT_TENSOR_K);
                let ma = CubicRegressionSpline::new(a, cols[ia], k)?;
                let mb = CubicRegressionSpline::new(b, cols[ib], k)?;
                let product: Vec<f64> = cols[ia].iter().zip(cols[ib]).map(|(x, y)| x * y).collect();
                let mut null: Vec<&[f64]> = Vec::new();
                if formula.has_linear(a) {
                    null.push(cols[ia]);
                }
                if formula.has_linear(b) {
                    null.push(cols[ib]);
                }
                let cross = [Term::Interaction(vec![Term::Linear(a.clone()), Term::Linear(b.clone())]), Term::Interaction(vec![Term::Linear(b.clone()), Term::Linear(a.clone())])];
                if formula.terms.iter().any(|t| cross.contains(t)) {
                    null.push(&product);
                }
                let basis = SmoothBasis::build(
                    term.to_string(),
                    vec![a.clone(), b.clone()],
                    Marginals::Tensor(ma, mb),
                    &[cols[ia], cols[ib]],
                    &null,
                );
                names.extend((1..=basis.dim()).map(|j| format!("{term}.{j}")));
                blocks.push(Block::Smooth { basis: Box::new(basis), vars: vec![ia, ib] });
            }
            _ => {
                blocks.push(Block::Parametric(factors(term, &covariates)));
                names.push(term.to_string());
            }
        }
    }
    let layout = DesignLayout {
        formula: formula.clone(),
        covariates,
        names: names.clone(),
        blocks,
    };
    let x = layout.matrix_from_columns(data.n_rows(), &cols);
    let smooths = layout.smooth_specs();
    Ok(Design { x, names, smooths, layout })
}

impl DesignLayout {
    pub fn formula(&self) -> &Formula {
        &self.formula
    }

    /// Covariates in the order expected by [`DesignLayout::row`].
    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn smooth_specs(&self) -> Vec<SmoothSpec> {
        let mut out = Vec::new();
        let mut col = 0;
        for b in &self.blocks {
            if let Block::Smooth { basis, .. } = b {
                out.push(SmoothSpec {
                    label: basis.label.clone(),
                    columns: col..col + basis.dim(),
                    penalty: basis.penalty.clone(),
                });
            }
            col += b.width();
        }
        out
    }

    pub fn smooth_bases(&self) -> Vec<&SmoothBasis> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                Block::Smooth { basis, .. } => Some(basis.as_ref()),
                _ => None,
            })
            .collect()
    }

    /// One design row from covariate values ordered as [`DesignLayout::covariates`].
    pub fn row(&self, values: &[f64], out: &mut [f64]) {
        let mut col = 0;
        let mut buf = [0.0; 2];
        for b in &self.blocks {
            match b {
                Block::Intercept => out[col] = 1.0,
                Block::Parametric(f) => out[col] = parametric_value(f, values),
                Block::Smooth { basis, vars } => {
                    for (slot, &v) in buf.iter_mut().zip(vars) {
                        *slot = values[v];
                    }
                    basis.row(&buf[..vars.len()], &mut out[col..col + basis.dim()]);
                }
            }
            col += b.width();
        }
    }

    fn matrix_from_columns(&self, n: usize, cols: &[&[f64]]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(n, self.ncols());
        let mut row = vec![0.0; self.ncols()];
        let mut values = vec![0.0; cols.len()];
        for i in 0..n {
            for (v, c) in values.iter_mut().zip(cols) {
                *v = c[i];
            }
            self.row(&values, &mut row);
            for (j, r) in row.iter().enumerate() {
                x[(i, j)] = *r;
            }
        }
        x
    }

    /// The design on new data; smooth bases keep their training knots.
    pub fn matrix(&self, data: &DataTable) -> Result<DMatrix<f64>, DesignError> {
        let cols: Vec<&[f64]> = self.covariates.iter().map(|c| data.column(c)).collect::<Result<_, _>>()?;
        Ok(self.matrix_from_columns(data.n_rows(), &cols))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;

    fn table(n: usize) -> DataTable {
        let x1: Vec<f64> = (0..n).map(|i| -3.0 + 6.0 * i as f64 / (n - 1) as f64).collect();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64 / n as f64 * 6.0 - 3.0).collect();
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        DataTable::from_columns([("X1".into(), x1), ("X2".into(), x2), ("Y".into(), y)]).unwrap()
    }

    #[test]
    fn polynomial_columns_are_raw_powers_in_order() {
        let t = table(50);
        let d = realize_design(&parse_formula("Y ~ X1 + I(X2^2) + I(X1^3) + I(X2^4)").unwrap(), &t).unwrap();
        assert_eq!(d.names, ["(Intercept)", "X1", "I(X2^2)", "I(X1^3)", "I(X2^4)"]);
        assert_eq!(d.x.shape(), (50, 5));
        let (x1, x2) = (t.column("X1").unwrap(), t.column("X2").unwrap());
        for i in 0..50 {
            assert_eq!(d.x[(i, 0)], 1.0);
            assert_eq!(d.x[(i, 2)], x2[i].powi(2));
            assert_eq!(d.x[(i, 3)], x1[i].powi(3));
        }
        assert!(d.smooths.is_empty());
    }

    #[test]
    fn smooth_columns_follow_their_terms() {
        let t = table(80);
        let d = realize_design(&parse_formula("Y ~ X1 + s(X1) + s(X2)").unwrap(), &t).unwrap();
        assert_eq!(d.x.ncols(), 1 + 1 + 8 + 9);
        assert_eq!(d.smooths[0].columns, 2..10);
        assert_eq!(d.smooths[1].columns, 10..19);
        assert_eq!(d.names[2], "s(X1).1");
        let d = realize_design(&parse_formula("~ X2 + I(X2^2)").unwrap(), &t).unwrap();
        assert_eq!(d.x.ncols(), 3);
        let d = realize_design(&parse_formula("~ 1").unwrap(), &t).unwrap();
        assert_eq!(d.x.shape(), (80, 1));
    }

    #[test]
    fn interactions_and_tensors() {
        let t = table(60);
        let d = realize_design(&parse_formula("Y ~ X1:X2 + te(X1, X2) - 1").unwrap(), &t).unwrap();
        let (x1, x2) = (t.column("X1").unwrap(), t.column("X2").unwrap());
        assert_eq!(d.x[(7, 0)], x1[7] * x2[7]);
        assert_eq!(d.x.ncols(), 1 + 23);
    }

    #[test]
    fn layout_reproduces_training_design() {
        let t = table(70);
        let d = realize_design(&parse_formula("Y ~ X1 + s(X1) + s(X2) + I(X2^2)").unwrap(), &t).unwrap();
        let again = d.layout.matrix(&t).unwrap();
        assert!((&again - &d.x).abs().max() == 0.0);
    }

    #[test]
    fn errors() {
        let t = table(30);
        assert!(matches!(
            realize_design(&parse_formula("Y ~ X9").unwrap(), &t),
            Err(DesignError::Formula(_))
        ));
        let few = DataTable::from_columns([("X1".into(), vec![1.0, 2.0, 1.0, 2.0, 1.0]), ("Y".into(), vec![0.0; 5])]).unwrap();
        assert!(matches!(
            realize_design(&parse_formula("Y ~ s(X1)").unwrap(), &few),
            Err(DesignError::Basis(_))
        ));
        let d = realize_design(&parse_formula("Y ~ X1").unwrap(), &t).unwrap();
        let other = DataTable::from_columns([("X2".into(), vec![1.0])]).unwrap();
        assert_eq!(d.layout.matrix(&other).unwrap_err(), DesignError::MissingColumn("X1".into()));
    }
}
