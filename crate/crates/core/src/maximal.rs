//! Example geometries: flat-leaf double-twisted products with their lifted
//! conformal Killing vectors, adapted-chart metrics and breakable metrics.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{parse, ChartPoint, Expression};
use crate::geometry::{lie_derivative, metric_at, MetricField, VectorField, VectorFieldSpec};
use crate::linalg::{numerical_rank, RANK_TOLERANCE};
use crate::square_root::RootSource;
use crate::structure::{dimension_bound, DimensionBound};
use crate::symmetry::{Background, GaugeExprs};

/// A conformal Killing vector of a flat metric, as expression text over the
/// leaf coordinates, with its conformal factor `σ` (`£_ξη = ση`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ckv {
    pub name: String,
    pub components: Vec<String>,
    pub sigma: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CkvBasis {
    pub coordinates: Vec<String>,
    pub signature: Vec<f64>,
    pub fields: Vec<Ckv>,
    /// Leaves of dimension 1 and 2 have infinite conformal algebras; only
    /// the polynomial slice of degree ≤ 2 is returned.
    pub non_exhaustive: bool,
}

fn coef(c: f64) -> String {
    if c < 0.0 {
        format!("({c})")
    } else {
        format!("{c}")
    }
}

/// Translations, rotations/boosts, the dilation and special conformal
/// fields of `η = diag(signature)`.
pub fn ckv_basis(coords: &[String], signature: &[f64]) -> Result<CkvBasis> {
    let m = coords.len();
    if m == 0 || signature.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m.max(1),
            found: signature.len(),
        });
    }
    if signature.iter().any(|s| s.abs() != 1.0) {
        return Err(Error::Invalid("leaf signature entries must be ±1".into()));
    }
    let zero = || vec!["0".to_string(); m];
    let mut fields = Vec::new();
    for a in 0..m {
        let mut c = zero();
        c[a] = "1".into();
        fields.push(Ckv {
            name: format!("translation-{}", coords[a]),
            components: c,
            sigma: "0".into(),
        });
    }
    for a in 0..m {
        for b in a + 1..m {
            let mut c = zero();
            c[a] = format!("{}*{}", coef(signature[a]), coords[b]);
            c[b] = format!("{}*{}", coef(-signature[b]), coords[a]);
            fields.push(Ckv {
                name: format!("rotation-{}-{}", coords[a], coords[b]),
                components: c,
                sigma: "0".into(),
            });
        }
    }
    fields.push(Ckv {
        name: "dilation".into(),
        components: coords.to_vec(),
        sigma: "2".into(),
    });
    let xx = (0..m)
        .map(|c| format!("{}*{}^2", coef(signature[c]), coords[c]))
        .collect::<Vec<_>>()
        .join(" + ");
    for b in 0..m {
        let bx = format!("{}*{}", coef(signature[b]), coords[b]);
        let c = (0..m)
            .map(|a| {
                let lead = format!("2*{bx}*{}", coords[a]);
                if a == b {
                    format!("{lead} - ({xx})")
                } else {
                    lead
                }
            })
            .collect();
        fields.push(Ckv {
            name: format!("special-{}", coords[b]),
            components: c,
            sigma: format!("4*{bx}"),
        });
    }
    Ok(CkvBasis {
        coordinates: coords.to_vec(),
        signature: signature.to_vec(),
        fields,
        non_exhaustive: m <= 2,
    })
}

/// `max |£_ξη − ση|` over the points.
pub fn ckv_self_check(basis: &CkvBasis, points: &[ChartPoint]) -> Result<f64> {
    let diag: Vec<String> = basis.signature.iter().map(|s| coef(*s)).collect();
    let refs: Vec<&str> = diag.iter().map(|s| s.as_str()).collect();
    let eta = MetricField::diagonal(&basis.coordinates, &refs)?;
    let mut worst: f64 = 0.0;
    for f in &basis.fields {
        let comps: Vec<&str> = f.components.iter().map(|s| s.as_str()).collect();
        let xi = VectorFieldSpec::from_strings(&basis.coordinates, &comps)?;
        let sigma = parse(&f.sigma, &basis.coordinates)?;
        for x in points {
            let ms = metric_at(&eta, x, 1)?;
            let lie = lie_derivative(&ms.g, &xi.jets(x, 1)?)?.values();
            let s = sigma.eval(x.coords())?;
            let g = ms.g.values();
            worst = worst.max(lie.minus(&g.scaled(s)).max_abs());
        }
    }
    Ok(worst)
}

/// `φ₁²η⁰ + φ₂²η¹` on a chart whose first `p` coordinates span leaf 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatLeafProductSpec {
    pub coordinates: Vec<String>,
    pub p: usize,
    pub signature1: Vec<f64>,
    pub signature2: Vec<f64>,
    /// `φ₁²`
    pub twist1: String,
    /// `φ₂²`
    pub twist2: String,
}

impl FlatLeafProductSpec {
    /// Euclidean leaves with the given twist factors; coordinates `x1..xn`.
    pub fn euclidean(n: usize, p: usize, twist1: &str, twist2: &str) -> Self {
        FlatLeafProductSpec {
            coordinates: (1..=n).map(|i| format!("x{i}")).collect(),
            p,
            signature1: vec![1.0; p],
            signature2: vec![1.0; n - p],
            twist1: twist1.into(),
            twist2: twist2.into(),
        }
    }

    /// Diagonal metric entries as expression text.
    pub fn diagonal_text(&self) -> Vec<String> {
        let p = self.p;
        (0..self.coordinates.len())
            .map(|a| {
                let (s, f) = if a < p {
                    (self.signature1[a], &self.twist1)
                } else {
                    (self.signature2[a - p], &self.twist2)
                };
                if s > 0.0 {
                    f.clone()
                } else {
                    format!("-({f})")
                }
            })
            .collect()
    }

    /// The n = 7, p = 3 demonstration space.
    pub fn demo_7_3() -> Self {
        FlatLeafProductSpec::euclidean(7, 3, "exp(x1 + x5)", "1 + (x1*x6)^2")
    }
}

/// A leaf CKV extended by zero, with symbolic gauges.
#[derive(Debug, Clone)]
pub struct LiftedField {
    pub name: String,
    pub leaf: usize,
    pub components: Vec<String>,
    pub field: VectorFieldSpec,
    pub gauges: GaugeExprs,
    pub alpha_text: String,
    pub beta_text: String,
}

#[derive(Debug, Clone)]
pub struct MaximalSpace {
    pub spec: FlatLeafProductSpec,
    pub background: Background,
    pub fields: Vec<LiftedField>,
    pub bound: DimensionBound,
    pub non_exhaustive: bool,
}

/// `ξ(F)/F` as expression text.
fn log_derivative_text(xi: &[String], f: &Expression, coords: &[String]) -> Result<String> {
    let mut terms = Vec::new();
    for (a, comp) in xi.iter().enumerate() {
        if comp == "0" {
            continue;
        }
        let d = f.derivative(a);
        if d.is_zero() {
            continue;
        }
        terms.push(format!("({comp})*({d})"));
    }
    let _ = coords;
    if terms.is_empty() {
        return Ok("0".into());
    }
    Ok(format!("({})/({f})", terms.join(" + ")))
}

fn gauge_pair(coords: &[String], phi: &str, chi: &str) -> Result<(GaugeExprs, String, String)> {
    let a = format!("0.5*(({phi}) + ({chi}))");
    let b = format!("0.5*(({phi}) - ({chi}))");
    Ok((
        GaugeExprs {
            alpha: parse(&a, coords)?,
            beta: parse(&b, coords)?,
        },
        a,
        b,
    ))
}

/// Metric, root and every lifted leaf CKV. Twist factors must be positive
/// at each probe point.
pub fn build_maximal(spec: &FlatLeafProductSpec, probes: &[ChartPoint]) -> Result<MaximalSpace> {
    let coords = &spec.coordinates;
    let n = coords.len();
    let p = spec.p;
    if p == 0 || p >= n || spec.signature1.len() != p || spec.signature2.len() != n - p {
        return Err(Error::OutOfRange { n, p });
    }
    let f1 = parse(&spec.twist1, coords)?;
    let f2 = parse(&spec.twist2, coords)?;
    for x in probes {
        for (f, name) in [(&f1, "first"), (&f2, "second")] {
            let v = f.eval(x.coords())?;
            if !(v > 0.0) {
                return Err(Error::Domain {
                    subexpression: f.to_string(),
                    message: format!("{name} twist factor is {v} at {:?}", x.coords()),
                });
            }
        }
    }
    let diag = spec.diagonal_text();
    let refs: Vec<&str> = diag.iter().map(|s| s.as_str()).collect();
    let metric = MetricField::diagonal(coords, &refs)?;
    let background = Background::new(metric, RootSource::Blocks { plus: (0..p).collect() });

    let mut fields = Vec::new();
    let mut non_exhaustive = false;
    for leaf in 0..2 {
        let (range, sig) = if leaf == 0 {
            (0..p, &spec.signature1)
        } else {
            (p..n, &spec.signature2)
        };
        let leaf_coords: Vec<String> = coords[range.clone()].to_vec();
        let basis = ckv_basis(&leaf_coords, sig)?;
        non_exhaustive |= basis.non_exhaustive;
        for ckv in basis.fields {
            let mut comps = vec!["0".to_string(); n];
            for (k, c) in ckv.components.iter().enumerate() {
                comps[range.start + k] = c.clone();
            }
            let r1 = log_derivative_text(&comps, &f1, coords)?;
            let r2 = log_derivative_text(&comps, &f2, coords)?;
            let (phi, chi) = if leaf == 0 {
                (format!("{r1} + {}", ckv.sigma), r2)
            } else {
                (r1, format!("{r2} + {}", ckv.sigma))
            };
            let (gauges, alpha_text, beta_text) = gauge_pair(coords, &phi, &chi)?;
            let refs: Vec<&str> = comps.iter().map(|s| s.as_str()).collect();
            fields.push(LiftedField {
                name: format!("leaf{}-{}", leaf + 1, ckv.name),
                leaf: leaf + 1,
                field: VectorFieldSpec::from_strings(coords, &refs)?,
                components: comps,
                gauges,
                alpha_text,
                beta_text,
            });
        }
    }
    Ok(MaximalSpace {
        spec: spec.clone(),
        background,
        fields,
        bound: dimension_bound(n, p)?,
        non_exhaustive,
    })
}

/// Numerical rank of the fields' component values stacked over the points.
pub fn independence_rank(fields: &[&dyn VectorField], points: &[ChartPoint]) -> Result<usize> {
    if fields.is_empty() {
        return Err(Error::Invalid("independence rank of an empty field list".into()));
    }
    if points.is_empty() {
        return Err(Error::Invalid("independence rank needs at least one point".into()));
    }
    let n = fields[0].dim();
    let mut m = DMatrix::zeros(points.len() * n, fields.len());
    for (j, f) in fields.iter().enumerate() {
        for (k, x) in points.iter().enumerate() {
            let v = f.jets(x, 0)?;
            for a in 0..n {
                m[(k * n + a, j)] = v.get(&[a]).value();
            }
        }
    }
    Ok(numerical_rank(&m, RANK_TOLERANCE))
}

/// An adapted-chart metric `e^A G⁰ + e^B G¹` with `ξ = ∂₁`.
#[derive(Debug, Clone)]
pub struct AdaptedChart {
    pub background: Background,
    pub metric_text: Vec<Vec<String>>,
    pub plus: Vec<usize>,
    pub xi: VectorFieldSpec,
    /// `α + β = ∂₁A`, `α − β = ∂₁B`
    pub gauges: GaugeExprs,
    pub alpha_text: String,
    pub beta_text: String,
}

fn parse_block(coords: &[String], block: &[Vec<String>]) -> Result<Vec<Vec<Expression>>> {
    let n = coords.len();
    if block.len() != n || block.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: block.len(),
        });
    }
    block
        .iter()
        .map(|r| r.iter().map(|s| parse(s, coords)).collect())
        .collect()
}

fn support(block: &[Vec<Expression>]) -> Vec<usize> {
    (0..block.len())
        .filter(|&i| block[i].iter().any(|e| !e.is_zero()))
        .collect()
}

/// `g = e^A G⁰ + e^B G¹`, `S = e^A G⁰ − e^B G¹`; the blocks must not depend
/// on the first coordinate and must occupy disjoint index sets.
pub fn adapted_chart_builder(
    coords: &[String],
    g0: &[Vec<String>],
    g1: &[Vec<String>],
    a: &str,
    b: &str,
) -> Result<AdaptedChart> {
    let n = coords.len();
    let b0 = parse_block(coords, g0)?;
    let b1 = parse_block(coords, g1)?;
    for (name, blk) in [("G0", &b0), ("G1", &b1)] {
        for row in blk.iter() {
            for e in row {
                if e.depends_on(0) {
                    return Err(Error::Invalid(format!(
                        "{name} depends on {}: {e}",
                        coords[0]
                    )));
                }
            }
        }
    }
    let s0 = support(&b0);
    let s1 = support(&b1);
    if s0.iter().any(|i| s1.contains(i)) {
        return Err(Error::Invalid(format!(
            "block overlap: G0 uses indices {s0:?}, G1 uses {s1:?}"
        )));
    }
    let ea = parse(a, coords)?;
    let eb = parse(b, coords)?;
    let text: Vec<Vec<String>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if !b0[i][j].is_zero() {
                        format!("exp({ea})*({})", b0[i][j])
                    } else if !b1[i][j].is_zero() {
                        format!("exp({eb})*({})", b1[i][j])
                    } else {
                        "0".into()
                    }
                })
                .collect()
        })
        .collect();
    let metric = MetricField::from_strings(coords, &text)?;
    let mut comps = vec!["0"; n];
    comps[0] = "1";
    let xi = VectorFieldSpec::from_strings(coords, &comps)?;
    let (gauges, alpha_text, beta_text) =
        gauge_pair(coords, &ea.derivative(0).to_string(), &eb.derivative(0).to_string())?;
    Ok(AdaptedChart {
        background: Background::new(metric, RootSource::Blocks { plus: s0.clone() }),
        metric_text: text,
        plus: s0,
        xi,
        gauges,
        alpha_text,
        beta_text,
    })
}

/// A breakable metric `g_αβ = f G_αβ`, `g_AB = h G_AB` with fields `∂₁`,
/// `∂_n` and their sum.
#[derive(Debug, Clone)]
pub struct Breakable {
    pub background: Background,
    pub diagonal: Vec<String>,
    pub p: usize,
    /// `(name, components, field, gauges, α text, β text)`
    pub fields: Vec<(String, Vec<String>, VectorFieldSpec, GaugeExprs, String, String)>,
}

/// Block-diagonal metric from diagonal blocks `g_alpha` (first `p`
/// coordinates) and `g_cap` (the rest); blocks may not depend on the first
/// or last coordinate.
pub fn breakable_builder(coords: &[String], f: &str, h: &str, g_alpha: &[String], g_cap: &[String]) -> Result<Breakable> {
    let n = coords.len();
    let p = g_alpha.len();
    if p == 0 || p >= n || p + g_cap.len() != n {
        return Err(Error::OutOfRange { n, p });
    }
    for s in g_alpha.iter().chain(g_cap) {
        let e = parse(s, coords)?;
        if e.depends_on(0) || e.depends_on(n - 1) {
            return Err(Error::Invalid(format!(
                "block entry {e} is not invariant under ∂_{} and ∂_{}",
                coords[0],
                coords[n - 1]
            )));
        }
    }
    let fe = parse(f, coords)?;
    let he = parse(h, coords)?;
    let diagonal: Vec<String> = g_alpha
        .iter()
        .map(|g| format!("({fe})*({g})"))
        .chain(g_cap.iter().map(|g| format!("({he})*({g})")))
        .collect();
    let refs: Vec<&str> = diagonal.iter().map(|s| s.as_str()).collect();
    let metric = MetricField::diagonal(coords, &refs)?;
    let mut fields = Vec::new();
    let specs: [(&str, Vec<usize>); 3] = [("xi1", vec![0]), ("xi2", vec![n - 1]), ("xi", vec![0, n - 1])];
    for (name, dirs) in specs {
        let mut comps = vec!["0".to_string(); n];
        for d in &dirs {
            comps[*d] = "1".into();
        }
        let phi = log_derivative_text(&comps, &fe, coords)?;
        let chi = log_derivative_text(&comps, &he, coords)?;
        let (g, at, bt) = gauge_pair(coords, &phi, &chi)?;
        let refs: Vec<&str> = comps.iter().map(|s| s.as_str()).collect();
        fields.push((name.to_string(), comps.clone(), VectorFieldSpec::from_strings(coords, &refs)?, g, at, bt));
    }
    Ok(Breakable {
        background: Background::new(metric, RootSource::Blocks { plus: (0..p).collect() }),
        diagonal,
        p,
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetry::detect_bcvf;
    use crate::report::Tolerances;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn probes(n: usize) -> Vec<ChartPoint> {
        (0..4)
            .map(|k| ChartPoint::new((0..n).map(|i| 0.1 + 0.07 * ((k * 3 + i) % 5) as f64 - 0.1 * k as f64).collect()))
            .collect()
    }

    #[test]
    fn ckv_counts_and_self_check() {
        let b = ckv_basis(&names(&["a", "b", "c"]), &[1.0; 3]).unwrap();
        assert_eq!(b.fields.len(), 10);
        assert!(!b.non_exhaustive);
        assert!(ckv_self_check(&b, &probes(3)).unwrap() < 1e-10);
        let b = ckv_basis(&names(&["t", "x", "y", "z"]), &[-1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(b.fields.len(), 15);
        assert!(ckv_self_check(&b, &probes(4)).unwrap() < 1e-10);
        let b = ckv_basis(&names(&["x"]), &[1.0]).unwrap();
        assert_eq!(b.fields.len(), 3);
        assert!(b.non_exhaustive);
        assert!(ckv_self_check(&b, &probes(1)).unwrap() < 1e-10);
    }

    #[test]
    fn demo_space_fields_are_biconformal() {
        let spec = FlatLeafProductSpec::demo_7_3();
        let pts = probes(7);
        let sp = build_maximal(&spec, &pts).unwrap();
        assert_eq!(sp.fields.len(), 25);
        assert_eq!(sp.bound, DimensionBound::Finite(25));
        for f in &sp.fields {
            let r = detect_bcvf(&sp.background, &f.field, &pts, 1, &Tolerances::default()).unwrap();
            assert!(r.max_residual < 1e-7, "{}: {}", f.name, r.max_residual);
            for (x, row) in pts.iter().zip(&r.points) {
                let want = f.gauges.values(x).unwrap();
                assert!((row.gauges.alpha - want.alpha).abs() < 1e-9, "{}", f.name);
                assert!((row.gauges.beta - want.beta).abs() < 1e-9, "{}", f.name);
            }
        }
        let refs: Vec<&dyn VectorField> = sp.fields.iter().map(|f| &f.field as &dyn VectorField).collect();
        let many: Vec<ChartPoint> = (0..16)
            .map(|k| ChartPoint::new((0..7).map(|i| ((k * 7 + i * 3) as f64 * 0.618).fract() - 0.4).collect()))
            .collect();
        assert_eq!(independence_rank(&refs, &many).unwrap(), 25);
    }

    #[test]
    fn independence_of_simple_fields() {
        let c = names(&["x", "y"]);
        let a = VectorFieldSpec::from_strings(&c, &["1", "0"]).unwrap();
        let b = VectorFieldSpec::from_strings(&c, &["2", "0"]).unwrap();
        let d = VectorFieldSpec::from_strings(&c, &["x", "0"]).unwrap();
        let pts = probes(2);
        assert_eq!(independence_rank(&[&a, &b], &pts).unwrap(), 1);
        assert_eq!(independence_rank(&[&a, &d], &pts).unwrap(), 2);
        assert!(independence_rank(&[], &pts).is_err());
    }

    #[test]
    fn adapted_chart_gauges() {
        let c = names(&["x1", "x2", "x3", "x4"]);
        let g0 = vec![
            names(&["1", "0", "0", "0"]),
            names(&["0", "1 + x3^2", "0", "0"]),
            names(&["0", "0", "0", "0"]),
            names(&["0", "0", "0", "0"]),
        ];
        let g1 = vec![
            names(&["0", "0", "0", "0"]),
            names(&["0", "0", "0", "0"]),
            names(&["0", "0", "1", "0"]),
            names(&["0", "0", "0", "2 + x2^2"]),
        ];
        let ac = adapted_chart_builder(&c, &g0, &g1, "x1*x2", "sin(x1)").unwrap();
        let pts = probes(4);
        let r = detect_bcvf(&ac.background, &ac.xi, &pts, 1, &Tolerances::default()).unwrap();
        assert!(r.max_residual < 1e-12);
        for (x, row) in pts.iter().zip(&r.points) {
            let y = x.coords();
            assert!((row.gauges.phi() - y[1]).abs() < 1e-8);
            assert!((row.gauges.chi() - y[0].cos()).abs() < 1e-8);
        }
        let mut bad = g1.clone();
        bad[1][1] = "1".into();
        assert!(adapted_chart_builder(&c, &g0, &bad, "0", "0").is_err());
        let mut dep = g0.clone();
        dep[0][0] = "1 + x1^2".into();
        assert!(adapted_chart_builder(&c, &dep, &g1, "0", "0").is_err());
    }

    #[test]
    fn breakable_sum_field() {
        let c = names(&["x1", "x2", "x3", "x4", "x5", "x6"]);
        let b = breakable_builder(&c, "exp(x1 + x6)", "1", &names(&["1", "1", "1"]), &names(&["1", "1", "1"])).unwrap();
        let pts = probes(6);
        let (_, _, xi, g, _, _) = &b.fields[2];
        let r = detect_bcvf(&b.background, xi, &pts, 1, &Tolerances::default()).unwrap();
        assert!(r.max_residual < 1e-12);
        for row in &r.points {
            assert!((row.gauges.phi() - 2.0).abs() < 1e-12);
            assert!(row.gauges.chi().abs() < 1e-12);
        }
        assert!((g.values(&pts[0]).unwrap().phi() - 2.0).abs() < 1e-12);
        assert!(breakable_builder(&c, "1", "1", &names(&["x1", "1", "1"]), &names(&["1", "1", "1"])).is_err());
    }

    #[test]
    fn non_positive_twist_is_rejected() {
        let spec = FlatLeafProductSpec::euclidean(6, 3, "x1", "1");
        let r = build_maximal(&spec, &[ChartPoint::new(vec![-0.5; 6])]);
        assert!(matches!(r, Err(Error::Domain { .. })));
    }
}
