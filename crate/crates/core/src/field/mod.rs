//! Scalar fields on a chart: expression parsing and jet evaluation.

mod expr;
mod jet;

pub use expr::{parse, Expression, Func, Node};
pub use jet::{Jet, JetLayout};

use std::sync::Arc;

use crate::error::{Error, Result};

/// Default number of derivative orders carried through the geometry pipeline.
pub const DEFAULT_JET_ORDER: usize = 4;

/// A coordinate tuple on an `n`-dimensional chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint(pub Vec<f64>);

impl ChartPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        ChartPoint(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        if self.0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.0.len(),
            });
        }
        Ok(())
    }
}

impl From<Vec<f64>> for ChartPoint {
    fn from(v: Vec<f64>) -> Self {
        ChartPoint(v)
    }
}

impl From<&[f64]> for ChartPoint {
    fn from(v: &[f64]) -> Self {
        ChartPoint(v.to_vec())
    }
}

/// Names of the chart coordinates, shared by every expression on the chart.
pub type Coordinates = Arc<Vec<String>>;

/// A scalar field given by a coordinate expression.
pub type ScalarField = Expression;

/// Evaluates `e` at `at` with all partials to `order`.
pub fn evaluate_jet(e: &Expression, at: &ChartPoint, order: usize) -> Result<Jet> {
    e.evaluate_jet(at.coords(), order)
}

/// Parses a list of component strings.
pub fn parse_all(sources: &[String], coordinates: &[String]) -> Result<Vec<Expression>> {
    sources.iter().map(|s| parse(s, coordinates)).collect()
}

/// Central finite-difference step used by the oracles.
pub const FD_STEP: f64 = 1e-5;
