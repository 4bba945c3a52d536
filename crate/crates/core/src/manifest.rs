//! JSON manifests describing a chart, metric, root and vector fields, and
//! deterministic sampling of chart points.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{parse, ChartPoint, Expression};
use crate::geometry::{MetricField, VectorFieldSpec};
use crate::report::Tolerances;
use crate::square_root::{RootSource, SimpleFormSpec};
use crate::geometry::TensorField;
use crate::symmetry::{Background, DomainBox, GaugeExprs, GaugeSource};
use crate::tensor::Slot;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: u32,
    pub name: String,
    pub dim: usize,
    pub coordinates: Vec<String>,
    pub metric: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<RootManifest>,
    #[serde(default)]
    pub fields: BTreeMap<String, FieldManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_covector: Option<Vec<String>>,
    #[serde(default)]
    pub domain: DomainManifest,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub tolerances: ToleranceManifest,
    #[serde(default = "default_order")]
    pub jet_order: usize,
}

fn default_order() -> usize {
    4
}

/// Square root given directly, from simple-form factors, or as the
/// coordinates spanning the `+1` block of a block-diagonal metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RootManifest {
    Components(Vec<Vec<String>>),
    Form(Vec<Vec<String>>),
    Blocks { plus: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldManifest {
    pub components: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_widths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_count() -> usize {
    32
}

fn default_seed() -> u64 {
    42
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            count: default_count(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceManifest {
    #[serde(default = "default_pass")]
    pub pass: f64,
    #[serde(default = "default_fail")]
    pub fail: f64,
    #[serde(default = "default_fd")]
    pub fd_step: f64,
}

fn default_pass() -> f64 {
    1e-7
}

fn default_fail() -> f64 {
    1e-4
}

fn default_fd() -> f64 {
    1e-5
}

impl Default for ToleranceManifest {
    fn default() -> Self {
        ToleranceManifest {
            pass: default_pass(),
            fail: default_fail(),
            fd_step: default_fd(),
        }
    }
}

/// A vector field with optional gauge expressions.
#[derive(Debug, Clone)]
pub struct LoadedField {
    pub name: String,
    pub spec: VectorFieldSpec,
    pub gauges: Option<GaugeExprs>,
}

impl LoadedField {
    pub fn gauge_source(&self) -> GaugeSource {
        match &self.gauges {
            Some(g) => GaugeSource::Expressions(g.clone()),
            None => GaugeSource::Extracted,
        }
    }
}

/// A validated manifest.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub manifest: Manifest,
    pub metric: MetricField,
    pub root: Option<RootSource>,
    pub fields: BTreeMap<String, LoadedField>,
    pub null_covector: Option<Vec<Expression>>,
    pub domain: DomainBox,
    pub tolerances: Tolerances,
}

fn field_err(field: impl Into<String>, e: impl std::fmt::Display) -> Error {
    Error::Manifest {
        field: field.into(),
        message: e.to_string(),
    }
}

fn parse_at(field: String, s: &str, coords: &[String]) -> Result<Expression> {
    parse(s, coords).map_err(|e| field_err(field, e))
}

fn square(field: &str, m: &[Vec<String>], n: usize) -> Result<()> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(field_err(field, format!("expected a {n}×{n} matrix")));
    }
    Ok(())
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Manifest> {
        serde_json::from_str(text).map_err(|e| field_err("<document>", e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Parses every expression and checks shapes, the domain and tolerances.
    pub fn load(&self) -> Result<Loaded> {
        if self.schema != SCHEMA_VERSION {
            return Err(field_err("schema", format!("unsupported version {}", self.schema)));
        }
        let n = self.dim;
        let coords = &self.coordinates;
        if n == 0 {
            return Err(field_err("dim", "must be positive"));
        }
        if coords.len() != n {
            return Err(field_err("coordinates", format!("{} names for dim {n}", coords.len())));
        }
        for (i, c) in coords.iter().enumerate() {
            if coords[..i].contains(c) {
                return Err(field_err("coordinates", format!("duplicate name '{c}'")));
            }
        }
        square("metric", &self.metric, n)?;
        let mut rows = Vec::with_capacity(n);
        for (i, r) in self.metric.iter().enumerate() {
            let mut row = Vec::with_capacity(n);
            for (j, s) in r.iter().enumerate() {
                row.push(parse_at(format!("metric[{i}][{j}]"), s, coords)?);
            }
            rows.push(row);
        }
        let metric = MetricField::from_matrix(std::sync::Arc::new(coords.clone()), rows)
            .map_err(|e| field_err("metric", e))?;

        let root = match &self.root {
            None => None,
            Some(RootManifest::Components(m)) => {
                square("root.components", m, n)?;
                let mut comps = Vec::with_capacity(n * n);
                for (i, r) in m.iter().enumerate() {
                    for (j, s) in r.iter().enumerate() {
                        comps.push(parse_at(format!("root.components[{i}][{j}]"), s, coords)?);
                    }
                }
                Some(RootSource::Components(TensorField {
                    dim: n,
                    slots: vec![Slot::Down, Slot::Down],
                    components: comps,
                }))
            }
            Some(RootManifest::Form(factors)) => {
                if factors.is_empty() {
                    return Err(field_err("root.form", "needs at least one factor"));
                }
                for (k, f) in factors.iter().enumerate() {
                    if f.len() != n {
                        return Err(field_err(format!("root.form[{k}]"), format!("expected {n} components")));
                    }
                    for (a, s) in f.iter().enumerate() {
                        parse_at(format!("root.form[{k}][{a}]"), s, coords)?;
                    }
                }
                let refs: Vec<Vec<&str>> = factors.iter().map(|f| f.iter().map(|s| s.as_str()).collect()).collect();
                Some(RootSource::Form(
                    SimpleFormSpec::from_strings(coords, &refs).map_err(|e| field_err("root.form", e))?,
                ))
            }
            Some(RootManifest::Blocks { plus }) => {
                let mut idx = Vec::new();
                for c in plus {
                    match coords.iter().position(|x| x == c) {
                        Some(i) => idx.push(i),
                        None => return Err(field_err("root.blocks.plus", format!("unknown coordinate '{c}'"))),
                    }
                }
                Some(RootSource::Blocks { plus: idx })
            }
        };

        let mut fields = BTreeMap::new();
        for (name, f) in &self.fields {
            let key = format!("fields.{name}");
            if f.components.len() != n {
                return Err(field_err(format!("{key}.components"), format!("expected {n} components")));
            }
            let comps = f
                .components
                .iter()
                .enumerate()
                .map(|(a, s)| parse_at(format!("{key}.components[{a}]"), s, coords))
                .collect::<Result<Vec<_>>>()?;
            let gauges = match (&f.alpha, &f.beta) {
                (Some(a), Some(b)) => Some(GaugeExprs {
                    alpha: parse_at(format!("{key}.alpha"), a, coords)?,
                    beta: parse_at(format!("{key}.beta"), b, coords)?,
                }),
                (None, None) => None,
                _ => return Err(field_err(&key, "alpha and beta must be given together")),
            };
            fields.insert(
                name.clone(),
                LoadedField {
                    name: name.clone(),
                    spec: VectorFieldSpec::new(comps),
                    gauges,
                },
            );
        }

        let null_covector = match &self.null_covector {
            None => None,
            Some(k) => {
                if k.len() != n {
                    return Err(field_err("null_covector", format!("expected {n} components")));
                }
                Some(
                    k.iter()
                        .enumerate()
                        .map(|(a, s)| parse_at(format!("null_covector[{a}]"), s, coords))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        };

        let base = self.domain.base.clone().unwrap_or_else(|| vec![0.1; n]);
        let half = self.domain.half_widths.clone().unwrap_or_else(|| vec![0.5; n]);
        if base.len() != n {
            return Err(field_err("domain.base", format!("expected {n} values")));
        }
        if half.len() != n {
            return Err(field_err("domain.half_widths", format!("expected {n} values")));
        }
        if half.iter().any(|h| !(*h > 0.0)) {
            return Err(field_err("domain.half_widths", "must be positive"));
        }
        if self.sampling.count == 0 {
            return Err(field_err("sampling.count", "must be at least 1"));
        }
        let t = &self.tolerances;
        if !(t.pass > 0.0 && t.pass < t.fail) {
            return Err(field_err("tolerances", "need 0 < pass < fail"));
        }
        if !(t.fd_step > 0.0) {
            return Err(field_err("tolerances.fd_step", "must be positive"));
        }
        if self.jet_order == 0 {
            return Err(field_err("jet_order", "must be at least 1"));
        }
        Ok(Loaded {
            manifest: self.clone(),
            metric,
            root,
            fields,
            null_covector,
            domain: DomainBox {
                center: base,
                half_widths: half,
            },
            tolerances: Tolerances::new(t.pass, t.fail),
        })
    }
}

impl Loaded {
    pub fn background(&self) -> Result<Background> {
        match &self.root {
            Some(r) => Ok(Background::new(self.metric.clone(), r.clone())),
            None => Err(field_err("root", "this check needs a square root")),
        }
    }

    pub fn field(&self, name: &str) -> Result<&LoadedField> {
        self.fields.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.fields.keys().map(|s| s.as_str()).collect();
            field_err("fields", format!("unknown field '{name}' (known: {})", known.join(", ")))
        })
    }

    pub fn points(&self) -> Vec<ChartPoint> {
        sample_points(&self.domain, self.manifest.sampling.count, self.manifest.sampling.seed)
    }

    pub fn base_point(&self) -> ChartPoint {
        ChartPoint::new(self.domain.center.clone())
    }

    pub fn order(&self) -> usize {
        self.manifest.jet_order
    }
}

/// The base point followed by `count − 1` seeded uniform draws in the box.
pub fn sample_points(domain: &DomainBox, count: usize, seed: u64) -> Vec<ChartPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(ChartPoint::new(domain.center.clone()));
    for _ in 1..count {
        let x = domain
            .center
            .iter()
            .zip(&domain.half_widths)
            .map(|(c, h)| c + h * rng.gen_range(-1.0..=1.0))
            .collect();
        out.push(ChartPoint::new(x));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1, "name": "plane", "dim": 2,
        "coordinates": ["x", "y"],
        "metric": [["1", "0"], ["0", "1"]],
        "root": {"blocks": {"plus": ["x"]}},
        "fields": {"rot": {"components": ["-y", "x"], "alpha": "0", "beta": "0"}}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let m = Manifest::from_json(MINIMAL).unwrap();
        assert_eq!(m.sampling.count, 32);
        assert_eq!(m.sampling.seed, 42);
        assert_eq!(m.jet_order, 4);
        let l = m.load().unwrap();
        assert_eq!(l.domain.center, vec![0.1, 0.1]);
        assert!(l.field("rot").unwrap().gauges.is_some());
        assert!(l.field("nope").is_err());
    }

    #[test]
    fn field_level_messages() {
        let mut m = Manifest::from_json(MINIMAL).unwrap();
        m.metric[1][0] = "x +".into();
        let e = m.load().unwrap_err().to_string();
        assert!(e.contains("metric[1][0]"), "{e}");
        let mut m = Manifest::from_json(MINIMAL).unwrap();
        m.tolerances.pass = 1.0;
        assert!(m.load().unwrap_err().to_string().contains("tolerances"));
        assert!(Manifest::from_json(r#"{"schema": 1}"#).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_contained() {
        let d = DomainBox {
            center: vec![0.1; 3],
            half_widths: vec![0.5; 3],
        };
        assert_eq!(sample_points(&d, 1, 7), vec![ChartPoint::new(vec![0.1; 3])]);
        let a = sample_points(&d, 32, 7);
        assert_eq!(a, sample_points(&d, 32, 7));
        assert_eq!(a.len(), 32);
        assert!(a.iter().all(|p| d.contains(p.coords())));
        assert_ne!(a, sample_points(&d, 32, 8));
    }
}
