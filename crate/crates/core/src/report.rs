//! Verdicts, tolerances and per-check records.

use serde::{Deserialize, Serialize};

use crate::field::ChartPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Flagged,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Flagged => "flagged",
            Verdict::Fail => "fail",
        }
    }
}

/// Pass below `pass`, fail above `fail`, flagged in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub pass: f64,
    pub fail: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            pass: 1e-7,
            fail: 1e-4,
        }
    }
}

impl Tolerances {
    pub fn new(pass: f64, fail: f64) -> Self {
        Tolerances { pass, fail }
    }

    pub fn classify(&self, residual: f64) -> Verdict {
        if !residual.is_finite() || residual > self.fail {
            Verdict::Fail
        } else if residual < self.pass {
            Verdict::Pass
        } else {
            Verdict::Flagged
        }
    }
}

/// Largest residual and where it occurred.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Worst {
    pub residual: f64,
    pub point: Vec<f64>,
    pub count: usize,
}

impl Worst {
    pub fn update(&mut self, residual: f64, point: &ChartPoint) {
        self.count += 1;
        // NaN always wins so it cannot hide
        if self.count == 1 || residual > self.residual || residual.is_nan() {
            self.residual = residual;
            self.point = point.coords().to_vec();
        }
    }

    pub fn from_iter<'a>(items: impl IntoIterator<Item = (f64, &'a ChartPoint)>) -> Worst {
        let mut w = Worst::default();
        for (r, p) in items {
            w.update(r, p);
        }
        w
    }
}

/// One line of a report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckRecord {
    pub check: String,
    pub status: Verdict,
    pub max_residual: f64,
    pub points: usize,
    pub worst_point: Vec<f64>,
    pub details: serde_json::Value,
}

impl CheckRecord {
    pub fn from_worst(check: &str, worst: &Worst, tol: &Tolerances, details: serde_json::Value) -> Self {
        CheckRecord {
            check: check.to_string(),
            status: tol.classify(worst.residual),
            max_residual: worst.residual,
            points: worst.count,
            worst_point: worst.point.clone(),
            details,
        }
    }

    /// A record whose status is fixed rather than derived from a residual.
    pub fn with_status(check: &str, status: Verdict, details: serde_json::Value) -> Self {
        CheckRecord {
            check: check.to_string(),
            status,
            max_residual: 0.0,
            points: 0,
            worst_point: Vec::new(),
            details,
        }
    }
}

/// Min and max of a sequence, `None` when empty.
pub fn range(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    values.into_iter().fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_bands() {
        let t = Tolerances::default();
        assert_eq!(t.classify(1e-9), Verdict::Pass);
        assert_eq!(t.classify(1e-5), Verdict::Flagged);
        assert_eq!(t.classify(1e-2), Verdict::Fail);
        assert_eq!(t.classify(f64::NAN), Verdict::Fail);
    }

    #[test]
    fn worst_tracks_the_maximum() {
        let a = ChartPoint::new(vec![0.0]);
        let b = ChartPoint::new(vec![1.0]);
        let w = Worst::from_iter([(1e-3, &a), (1e-2, &b), (1e-4, &a)]);
        assert_eq!(w.point, vec![1.0]);
        assert_eq!(w.count, 3);
    }
}
