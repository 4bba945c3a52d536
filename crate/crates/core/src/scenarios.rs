//! Built-in manifests addressable by name.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::ChartPoint;
use crate::manifest::{
    DomainManifest, FieldManifest, Manifest, RootManifest, Sampling, ToleranceManifest, SCHEMA_VERSION,
};
use crate::maximal::{adapted_chart_builder, breakable_builder, build_maximal, FlatLeafProductSpec};

const NAMES: [&str; 11] = [
    "maximal-7-3",
    "maximal-6-3",
    "rw-expanding",
    "rw-rigid",
    "twisted-3-4",
    "twisted-perturbed",
    "flat-split",
    "flat-dilation",
    "kerr-schild-minkowski",
    "breakable-6-3",
    "adapted-demo",
];

pub fn builtin_names() -> &'static [&'static str] {
    &NAMES
}

pub fn builtin(name: &str) -> Result<Manifest> {
    match name {
        "maximal-7-3" => maximal(name, FlatLeafProductSpec::demo_7_3()),
        "maximal-6-3" => maximal(name, FlatLeafProductSpec::euclidean(6, 3, "exp(x2 - x4)", "2 + sin(x1 + x6)")),
        "rw-expanding" => Ok(rw(name, "exp(2*t)", "1", "-1")),
        "rw-rigid" => Ok(rw(name, "4", "0", "0")),
        "twisted-3-4" => Ok(twisted(name, false)),
        "twisted-perturbed" => Ok(twisted(name, true)),
        "flat-split" => Ok(flat_split(name)),
        "flat-dilation" => Ok(flat_dilation(name)),
        "kerr-schild-minkowski" => Ok(kerr_schild(name)),
        "breakable-6-3" => breakable(name),
        "adapted-demo" => adapted(name),
        _ => Err(Error::Manifest {
            field: "builtin".into(),
            message: format!("unknown built-in '{name}' (known: {})", NAMES.join(", ")),
        }),
    }
}

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn diagonal(d: &[String]) -> Vec<Vec<String>> {
    let n = d.len();
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { d[i].clone() } else { "0".into() }).collect())
        .collect()
}

fn field(components: &[&str], gauges: Option<(&str, &str)>) -> FieldManifest {
    FieldManifest {
        components: s(components),
        alpha: gauges.map(|g| g.0.to_string()),
        beta: gauges.map(|g| g.1.to_string()),
    }
}

fn base(name: &str, coordinates: Vec<String>, metric: Vec<Vec<String>>) -> Manifest {
    Manifest {
        schema: SCHEMA_VERSION,
        name: name.into(),
        dim: coordinates.len(),
        coordinates,
        metric,
        root: None,
        fields: BTreeMap::new(),
        null_covector: None,
        domain: DomainManifest::default(),
        sampling: Sampling::default(),
        tolerances: ToleranceManifest::default(),
        jet_order: 4,
    }
}

fn maximal(name: &str, spec: FlatLeafProductSpec) -> Result<Manifest> {
    let n = spec.coordinates.len();
    let sp = build_maximal(&spec, &[ChartPoint::new(vec![0.1; n])])?;
    let mut m = base(name, spec.coordinates.clone(), diagonal(&spec.diagonal_text()));
    m.root = Some(RootManifest::Blocks {
        plus: spec.coordinates[..spec.p].to_vec(),
    });
    for f in sp.fields {
        m.fields.insert(
            f.name,
            FieldManifest {
                components: f.components,
                alpha: Some(f.alpha_text),
                beta: Some(f.beta_text),
            },
        );
    }
    Ok(m)
}

/// `dt² − a²(t)(dx² + dy² + dz²)` with `S = T{dt}` and `ξ = ∂_t`.
fn rw(name: &str, a2: &str, alpha: &str, beta: &str) -> Manifest {
    let c = s(&["t", "x", "y", "z"]);
    let sp = format!("-({a2})");
    let mut m = base(name, c, diagonal(&s(&["1", &sp, &sp, &sp])));
    m.root = Some(RootManifest::Form(vec![s(&["1", "0", "0", "0"])]));
    m.fields.insert("xi".into(), field(&["1", "0", "0", "0"], Some((alpha, beta))));
    // room for the flow along ∂_t
    m.domain.half_widths = Some(vec![1.0, 0.5, 0.5, 0.5]);
    if name == "rw-expanding" {
        m.fields.insert("control".into(), field(&["x^2", "t*y", "0", "z"], None));
    }
    m
}

/// `e^{x+u} G⁰ + e^{xu} G¹` on blocks `(x,y,z)`, `(u,v,w,s)`; the perturbed
/// variant scales `g_xx` by `1 + u²`.
fn twisted(name: &str, perturbed: bool) -> Manifest {
    let c = s(&["x", "y", "z", "u", "v", "w", "s"]);
    let f = "exp(x + u)";
    let h = "exp(x*u)";
    let gxx = if perturbed {
        format!("{f}*(1 + u^2)")
    } else {
        f.to_string()
    };
    let d = vec![
        gxx,
        format!("{f}*(1 + y^2)"),
        f.to_string(),
        h.to_string(),
        format!("{h}*(2 + cos(w))"),
        h.to_string(),
        h.to_string(),
    ];
    let mut m = base(name, c.clone(), diagonal(&d));
    m.root = Some(RootManifest::Blocks { plus: c[..3].to_vec() });
    if !perturbed {
        m.fields.insert(
            "xi".into(),
            field(&["1", "0", "0", "0", "0", "0", "0"], Some(("0.5*(1 + u)", "0.5*(1 - u)"))),
        );
        m.fields.insert("killing".into(), field(&["0", "0", "0", "0", "1", "0", "0"], Some(("0", "0"))));
        m.fields.insert("control".into(), field(&["y*z", "0", "x", "0", "0", "w^2", "0"], None));
    }
    m
}

/// Euclidean `x,y,u,v` split as `(x,y) ⊕ (u,v)`.
fn flat_split(name: &str) -> Manifest {
    let c = s(&["x", "y", "u", "v"]);
    let mut m = base(name, c.clone(), diagonal(&s(&["1", "1", "1", "1"])));
    m.root = Some(RootManifest::Blocks { plus: c[..2].to_vec() });
    m.fields.insert("tx".into(), field(&["1", "0", "0", "0"], Some(("0", "0"))));
    m.fields.insert("rot-uv".into(), field(&["0", "0", "-v", "u"], Some(("0", "0"))));
    m.fields.insert("dil-xy".into(), field(&["x", "y", "0", "0"], Some(("1", "1"))));
    m.fields.insert("dil-uv".into(), field(&["0", "0", "u", "v"], Some(("1", "-1"))));
    m.fields.insert("control".into(), field(&["x*u", "0", "y^2", "0"], None));
    m
}

fn flat_dilation(name: &str) -> Manifest {
    let c = s(&["x", "y", "u", "v"]);
    let mut m = base(name, c.clone(), diagonal(&s(&["1", "1", "1", "1"])));
    m.root = Some(RootManifest::Blocks { plus: c[..2].to_vec() });
    m.fields.insert("xi".into(), field(&["x", "y", "u", "v"], Some(("2", "0"))));
    m
}

fn kerr_schild(name: &str) -> Manifest {
    let c = s(&["t", "x", "y", "z"]);
    let mut m = base(name, c, diagonal(&s(&["1", "-1", "-1", "-1"])));
    m.null_covector = Some(s(&["1", "-1", "0", "0"]));
    m.fields.insert("translation".into(), field(&["1", "0", "0", "0"], None));
    m.fields.insert("dilation".into(), field(&["t", "x", "y", "z"], None));
    m
}

fn breakable(name: &str) -> Result<Manifest> {
    let c: Vec<String> = (1..=6).map(|i| format!("x{i}")).collect();
    let b = breakable_builder(
        &c,
        "exp(x1 + x6)",
        "1 + x3^2",
        &s(&["1 + x5^2", "1", "1"]),
        &s(&["1", "2 + sin(x2)", "1"]),
    )?;
    let mut m = base(name, c.clone(), diagonal(&b.diagonal));
    m.root = Some(RootManifest::Blocks { plus: c[..b.p].to_vec() });
    for (fname, comps, _, _, a, bt) in b.fields {
        m.fields.insert(
            fname,
            FieldManifest {
                components: comps,
                alpha: Some(a),
                beta: Some(bt),
            },
        );
    }
    Ok(m)
}

fn adapted(name: &str) -> Result<Manifest> {
    let c: Vec<String> = (1..=5).map(|i| format!("x{i}")).collect();
    let z = || vec!["0".to_string(); 5];
    let mut g0 = vec![z(); 5];
    let mut g1 = vec![z(); 5];
    g0[0][0] = "1".into();
    g0[1][1] = "1 + x2^2".into();
    g0[2][2] = "1".into();
    g1[3][3] = "1".into();
    g1[4][4] = "2 + cos(x3)".into();
    let ch = adapted_chart_builder(&c, &g0, &g1, "x1*x2", "sin(x1)")?;
    let mut m = base(name, c.clone(), ch.metric_text);
    m.root = Some(RootManifest::Blocks {
        plus: ch.plus.iter().map(|&i| c[i].clone()).collect(),
    });
    m.fields.insert(
        "xi".into(),
        field(&["1", "0", "0", "0", "0"], Some((&ch.alpha_text, &ch.beta_text))),
    );
    Ok(m)
}
