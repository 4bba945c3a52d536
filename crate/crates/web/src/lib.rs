//! Browser bindings for three small operations: the dimension-bound table,
//! gauge profiles on an adapted chart, and gauges of an expanding congruence.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use biconformal::field::ChartPoint;
use biconformal::maximal::adapted_chart_builder;
use biconformal::report::Tolerances;
use biconformal::structure::{dimension_bound, DimensionBound};
use biconformal::symmetry::detect_bcvf;

#[derive(Debug, Serialize, PartialEq)]
pub struct BoundCell {
    pub n: usize,
    pub p: usize,
    /// `None` when the algebra may be infinite-dimensional.
    pub bound: Option<usize>,
}

/// Bounds for `2 ≤ n ≤ max_n`, `1 ≤ p < n`.
pub fn bound_cells(max_n: usize) -> Vec<BoundCell> {
    let mut out = Vec::new();
    for n in 2..=max_n.min(12) {
        for p in 1..n {
            let bound = match dimension_bound(n, p) {
                Ok(DimensionBound::Finite(b)) => Some(b),
                _ => None,
            };
            out.push(BoundCell { n, p, bound });
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct GaugeSample {
    pub x: f64,
    pub alpha: f64,
    pub beta: f64,
    pub expected_alpha: f64,
    pub expected_beta: f64,
    pub residual: f64,
}

fn coords(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `g = e^A (dx1² + dx2²) + e^B (dx3² + dx4²)` with `ξ = ∂_x1`; gauges along
/// `x1` at `x2 = 0.3, x3 = −0.2, x4 = 0.1`.
pub fn adapted_profile(a: &str, b: &str, samples: usize) -> Result<Vec<GaugeSample>, String> {
    let c = coords(&["x1", "x2", "x3", "x4"]);
    let z = || vec!["0".to_string(); 4];
    let (mut g0, mut g1) = (vec![z(); 4], vec![z(); 4]);
    g0[0][0] = "1".into();
    g0[1][1] = "1".into();
    g1[2][2] = "1".into();
    g1[3][3] = "1".into();
    let ch = adapted_chart_builder(&c, &g0, &g1, a, b).map_err(|e| e.to_string())?;
    sweep(samples, -1.0, 1.0, |x| vec![x, 0.3, -0.2, 0.1], |pts| {
        let r = detect_bcvf(&ch.background, &ch.xi, pts, 2, &Tolerances::default()).map_err(|e| e.to_string())?;
        r.points
            .iter()
            .map(|bp| {
                let want = ch.gauges.values(&ChartPoint::new(bp.point.clone())).map_err(|e| e.to_string())?;
                Ok(GaugeSample {
                    x: bp.point[0],
                    alpha: bp.gauges.alpha,
                    beta: bp.gauges.beta,
                    expected_alpha: want.alpha,
                    expected_beta: want.beta,
                    residual: bp.residual,
                })
            })
            .collect()
    })
}

/// `dt² − a²(t)(dx² + dy² + dz²)` with `S` from `dt` and `ξ = ∂_t`; the
/// expected gauges are `α = a'/a`, `β = −a'/a`, from the expression for `a`.
pub fn expanding_profile(a: &str, samples: usize) -> Result<Vec<GaugeSample>, String> {
    use biconformal::field::parse;
    use biconformal::geometry::{MetricField, VectorFieldSpec};
    use biconformal::square_root::{RootSource, SimpleFormSpec};
    use biconformal::symmetry::Background;

    let c = coords(&["t", "x", "y", "z"]);
    let ae = parse(a, &c).map_err(|e| e.to_string())?;
    if (1..4).any(|k| ae.depends_on(k)) {
        return Err("a may depend on t only".into());
    }
    let h = ae.derivative(0);
    let s = format!("-({a})^2");
    let m = MetricField::diagonal(&c, &["1", &s, &s, &s]).map_err(|e| e.to_string())?;
    let form = SimpleFormSpec::from_strings(&c, &[vec!["1", "0", "0", "0"]]).map_err(|e| e.to_string())?;
    let bg = Background::new(m, RootSource::Form(form));
    let xi = VectorFieldSpec::from_strings(&c, &["1", "0", "0", "0"]).map_err(|e| e.to_string())?;
    sweep(samples, 0.0, 1.0, |t| vec![t, 0.1, 0.2, 0.3], |pts| {
        let r = detect_bcvf(&bg, &xi, pts, 2, &Tolerances::default()).map_err(|e| e.to_string())?;
        r.points
            .iter()
            .map(|bp| {
                let v = ae.eval(&bp.point).map_err(|e| e.to_string())?;
                let dv = h.eval(&bp.point).map_err(|e| e.to_string())?;
                Ok(GaugeSample {
                    x: bp.point[0],
                    alpha: bp.gauges.alpha,
                    beta: bp.gauges.beta,
                    expected_alpha: dv / v,
                    expected_beta: -dv / v,
                    residual: bp.residual,
                })
            })
            .collect()
    })
}

fn sweep(
    samples: usize,
    lo: f64,
    hi: f64,
    point: impl Fn(f64) -> Vec<f64>,
    run: impl FnOnce(&[ChartPoint]) -> Result<Vec<GaugeSample>, String>,
) -> Result<Vec<GaugeSample>, String> {
    let k = samples.clamp(2, 200);
    let pts: Vec<ChartPoint> = (0..k)
        .map(|i| ChartPoint::new(point(lo + (hi - lo) * i as f64 / (k - 1) as f64)))
        .collect();
    run(&pts)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = boundTable)]
pub fn bound_table(max_n: usize) -> Result<String, JsError> {
    to_js(Ok(bound_cells(max_n)))
}

#[wasm_bindgen(js_name = adaptedGauges)]
pub fn adapted_gauges(a: &str, b: &str, samples: usize) -> Result<String, JsError> {
    to_js(adapted_profile(a, b, samples))
}

#[wasm_bindgen(js_name = expandingGauges)]
pub fn expanding_gauges(a: &str, samples: usize) -> Result<String, JsError> {
    to_js(expanding_profile(a, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_matches_known_entries() {
        let cells = bound_cells(8);
        let at = |n, p| cells.iter().find(|c| c.n == n && c.p == p).unwrap().bound;
        assert_eq!(at(7, 3), Some(25));
        assert_eq!(at(6, 3), Some(20));
        assert_eq!(at(5, 2), None);
        assert_eq!(cells.len(), 28);
    }

    #[test]
    fn adapted_profile_follows_the_chart() {
        let s = adapted_profile("x1*x2", "sin(x1)", 9).unwrap();
        assert_eq!(s.len(), 9);
        for g in &s {
            assert!(g.residual < 1e-10);
            // φ = x2, χ = cos(x1)
            assert!((g.alpha + g.beta - 0.3).abs() < 1e-10);
            assert!((g.alpha - g.beta - g.x.cos()).abs() < 1e-10);
            assert!((g.alpha - g.expected_alpha).abs() < 1e-10);
        }
        assert!(adapted_profile("x1 +", "0", 3).is_err());
    }

    #[test]
    fn expanding_profile_for_exponential_scale() {
        for g in expanding_profile("exp(t)", 5).unwrap() {
            assert!((g.alpha - 1.0).abs() < 1e-10 && (g.beta + 1.0).abs() < 1e-10);
        }
        for g in expanding_profile("1 + t^2", 5).unwrap() {
            assert!((g.alpha - g.expected_alpha).abs() < 1e-10);
            assert!((g.beta - g.expected_beta).abs() < 1e-10);
        }
        assert!(expanding_profile("x", 3).is_err());
    }
}
