//! Command-line front end: loads a manifest, runs one check family and
//! assembles an ordered JSON report.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use biconformal::field::ChartPoint;
use biconformal::geometry::{
    finite_difference_residual, identity_suite, metric_at, riemann_symmetry_residual, VectorField, VectorFieldSpec,
};
use biconformal::manifest::{Loaded, LoadedField, Manifest};
use biconformal::maximal::{build_maximal, independence_rank, FlatLeafProductSpec};
use biconformal::report::{range, CheckRecord, Tolerances, Verdict, Worst};
use biconformal::scenarios::{builtin, builtin_names};
use biconformal::structure::{
    appendix_rank, check_normal_p, compute_structure, constraints_for_field, dimension_bound, integrability_residuals,
    normal_system_residuals, random_root_gradient, split_test, structure_invariants, DimensionBound, SPLIT_TOLERANCES,
};
use biconformal::symmetry::{detect_bcvf, detect_kerr_schild, flow_pullback_check, gauge_free_test};
use biconformal::Error;

pub const TOOL: &str = "biconformal";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "BICONFORMAL_THREADS";

/// Central differences are judged against their own truncation error.
pub const FD_TOLERANCES: Tolerances = Tolerances { pass: 1e-5, fail: 1e-3 };
/// RK4 pullbacks are compared to the closed form at this precision.
pub const FLOW_TOLERANCES: Tolerances = Tolerances { pass: 1e-4, fail: 1e-2 };

#[derive(Debug, Parser)]
#[command(name = "biconformal", version, about = "Checks for bi-conformal vector fields on chart metrics")]
pub struct Cli {
    /// JSON manifest
    #[arg(long, global = true, conflicts_with = "builtin")]
    pub manifest: Option<PathBuf>,

    /// Built-in manifest by name (see `builtins`)
    #[arg(long, global = true)]
    pub builtin: Option<String>,

    /// Write the JSON report here and print a summary instead
    #[arg(long, global = true)]
    pub json_out: Option<PathBuf>,

    /// Override the manifest's sample count
    #[arg(long, global = true)]
    pub points: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Nondegeneracy, derivative cross-checks and curvature identities
    CheckMetric,
    /// Square-root and projector residuals
    CheckRoot,
    /// Bi-conformal detection with extracted gauges
    CheckBcvf { field: String },
    /// Gauge-free wedge conditions on the metric alone
    GaugeFree { field: String },
    /// Generalized Kerr-Schild test against the manifest's null covector
    KerrSchild { field: String },
    /// Double-twisted split criterion
    SplitTest,
    /// Structure tensors at the base point and their invariants
    Structure,
    /// The three first-derivative gauge constraints
    Constraints { field: String },
    /// Normal-system equations (needs gauge expressions)
    NormalSystem { field: String },
    /// Lie-derivative identities of the structure tensors
    Integrability { field: String },
    /// Rank of the algebraic constraint system at each sample point
    RankAppendix,
    /// Dimension bound of the symmetry algebra
    Bound {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
    },
    /// Build and verify a maximal flat-leaf double-twisted space
    MaximalDemo {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
    },
    /// Flow pullback against the exponential-integral closed form
    Flow {
        field: String,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// List built-in manifests
    Builtins,
    /// Print the selected manifest
    Show,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckMetric => "check-metric",
            Command::CheckRoot => "check-root",
            Command::CheckBcvf { .. } => "check-bcvf",
            Command::GaugeFree { .. } => "gauge-free",
            Command::KerrSchild { .. } => "kerr-schild",
            Command::SplitTest => "split-test",
            Command::Structure => "structure",
            Command::Constraints { .. } => "constraints",
            Command::NormalSystem { .. } => "normal-system",
            Command::Integrability { .. } => "integrability",
            Command::RankAppendix => "rank-appendix",
            Command::Bound { .. } => "bound",
            Command::MaximalDemo { .. } => "maximal-demo",
            Command::Flow { .. } => "flow",
            Command::Builtins => "builtins",
            Command::Show => "show",
        }
    }

    fn needs_manifest(&self) -> bool {
        !matches!(
            self,
            Command::Bound { .. } | Command::MaximalDemo { .. } | Command::Builtins
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub manifest: Option<Manifest>,
    pub checks: Vec<CheckRecord>,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.checks.iter().any(|c| c.status == Verdict::Fail) {
            1
        } else {
            0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One line per check.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = write!(out, "{:<8} {:<30}", c.status.as_str(), c.check);
            if c.points > 0 {
                let _ = write!(out, " max={:.3e} points={}", c.max_residual, c.points);
            }
            if let Some(b) = c.details.get("bound") {
                let _ = write!(out, " {}", b.as_str().map(str::to_string).unwrap_or_else(|| b.to_string()));
            }
            out.push('\n');
        }
        out
    }
}

/// Errors that end a run before a report exists.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Manifest(Error),
    #[error("{0}")]
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Manifest(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn run_err(e: Error) -> CliError {
    match e {
        Error::Manifest { .. } => CliError::Manifest(e),
        e => CliError::Run(e),
    }
}

pub fn load_manifest(cli: &Cli) -> Result<Manifest, CliError> {
    match (&cli.manifest, &cli.builtin) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            Manifest::from_json(&text).map_err(CliError::Manifest)
        }
        (None, Some(name)) => builtin(name).map_err(CliError::Manifest),
        (None, None) => Err(CliError::Usage(format!(
            "{} needs --manifest <path> or --builtin <name>",
            cli.command.name()
        ))),
        (Some(_), Some(_)) => Err(CliError::Usage("--manifest and --builtin are exclusive".into())),
    }
}

/// Worker threads from [`THREADS_ENV`], if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
    // a second initialization in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<Report, CliError> {
    let mut manifest = None;
    let checks = if cli.command.needs_manifest() {
        let mut m = load_manifest(cli)?;
        if let Some(k) = cli.points {
            m.sampling.count = k;
        }
        let loaded = m.load().map_err(CliError::Manifest)?;
        manifest = Some(m);
        run_with(&cli.command, &loaded)?
    } else {
        run_free(&cli.command)?
    };
    Ok(Report {
        tool: TOOL,
        version: VERSION,
        command: cli.command.name().into(),
        manifest,
        checks,
    })
}

fn run_free(cmd: &Command) -> Result<Vec<CheckRecord>, CliError> {
    match cmd {
        Command::Bound { n, p } => Ok(vec![bound_record(*n, *p)?]),
        Command::MaximalDemo { n, p } => maximal_demo(*n, *p),
        Command::Builtins => Ok(builtin_names()
            .iter()
            .map(|name| {
                let m = builtin(name).expect("built-ins are valid");
                let fields: Vec<&String> = m.fields.keys().collect();
                CheckRecord::with_status(
                    name,
                    Verdict::Pass,
                    json!({ "dim": m.dim, "coordinates": m.coordinates, "fields": fields }),
                )
            })
            .collect()),
        _ => unreachable!("manifest commands are dispatched elsewhere"),
    }
}

fn bound_details(b: DimensionBound) -> Value {
    match b {
        DimensionBound::Finite(n) => json!({ "bound": n }),
        DimensionBound::InfinitePossible => json!({
            "bound": "infinite-possible",
            "reason": "a leaf of dimension 1 or 2: the normal system does not close",
        }),
    }
}

fn bound_record(n: usize, p: usize) -> Result<CheckRecord, CliError> {
    let b = dimension_bound(n, p).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut d = bound_details(b);
    d["n"] = json!(n);
    d["p"] = json!(p);
    Ok(CheckRecord::with_status("bound", Verdict::Pass, d))
}

fn maximal_spec(n: usize, p: usize) -> FlatLeafProductSpec {
    if (n, p) == (7, 3) {
        FlatLeafProductSpec::demo_7_3()
    } else {
        FlatLeafProductSpec::euclidean(n, p, &format!("exp(x1 + x{n})"), &format!("1 + (x1*x{n})^2"))
    }
}

fn maximal_demo(n: usize, p: usize) -> Result<Vec<CheckRecord>, CliError> {
    if p == 0 || p >= n {
        return Err(CliError::Usage(format!("need 0 < p < n, got n = {n}, p = {p}")));
    }
    let spec = maximal_spec(n, p);
    let m = builtin_like(&spec);
    let points = m.points();
    let sp = build_maximal(&spec, &points).map_err(run_err)?;
    let tol = Tolerances::default();
    let mut out = Vec::new();
    let count = sp.fields.len();
    let status = match sp.bound {
        DimensionBound::Finite(b) if b == count => Verdict::Pass,
        DimensionBound::Finite(_) => Verdict::Fail,
        DimensionBound::InfinitePossible => Verdict::Flagged,
    };
    let mut d = bound_details(sp.bound);
    d["fields"] = json!(count);
    d["non_exhaustive"] = json!(sp.non_exhaustive);
    d["twists"] = json!([spec.twist1, spec.twist2]);
    out.push(CheckRecord::with_status("field-count", status, d));
    for f in &sp.fields {
        let r = detect_bcvf(&sp.background, &f.field, &points, 2, &tol).map_err(run_err)?;
        let mut worst_gauge = Worst::default();
        for bp in &r.points {
            let x = ChartPoint::new(bp.point.clone());
            let g = f.gauges.values(&x).map_err(run_err)?;
            worst_gauge.update((g.alpha - bp.gauges.alpha).abs().max((g.beta - bp.gauges.beta).abs()), &x);
        }
        let w = r.worst();
        let mut rec = CheckRecord::from_worst(
            &format!("detect/{}", f.name),
            &w,
            &tol,
            json!({ "alpha": f.alpha_text, "beta": f.beta_text, "gauge_mismatch": worst_gauge.residual }),
        );
        rec.status = rec.status.max(tol.classify(worst_gauge.residual));
        out.push(rec);
    }
    let refs: Vec<&dyn VectorField> = sp.fields.iter().map(|f| &f.field as &dyn VectorField).collect();
    let rank = independence_rank(&refs, &points).map_err(run_err)?;
    out.push(CheckRecord::with_status(
        "independence-rank",
        if rank == count { Verdict::Pass } else { Verdict::Fail },
        json!({ "rank": rank, "fields": count }),
    ));
    Ok(out)
}

fn builtin_like(spec: &FlatLeafProductSpec) -> Loaded {
    let n = spec.coordinates.len();
    let diag = spec.diagonal_text();
    let metric: Vec<Vec<String>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { diag[i].clone() } else { "0".into() }).collect())
        .collect();
    let text = json!({
        "schema": 1,
        "name": format!("maximal-{n}-{}", spec.p),
        "dim": n,
        "coordinates": spec.coordinates,
        "metric": metric,
        "root": { "blocks": { "plus": spec.coordinates[..spec.p] } },
        "sampling": { "count": 16, "seed": 42 },
    });
    Manifest::from_json(&text.to_string())
        .and_then(|m| m.load())
        .expect("generated manifest is valid")
}

fn field_spec(f: &LoadedField) -> &VectorFieldSpec {
    &f.spec
}

fn worst_of(values: impl IntoIterator<Item = f64>, points: &[ChartPoint]) -> Worst {
    Worst::from_iter(values.into_iter().zip(points))
}

fn probe_field(coords: &[String]) -> VectorFieldSpec {
    let n = coords.len();
    let comps: Vec<String> = (0..n)
        .map(|a| format!("0.3 + {}*{} + sin({})", coords[a], coords[(a + 1) % n], coords[(a + 2) % n]))
        .collect();
    let refs: Vec<&str> = comps.iter().map(|s| s.as_str()).collect();
    VectorFieldSpec::from_strings(coords, &refs).expect("probe field parses")
}

fn run_with(cmd: &Command, l: &Loaded) -> Result<Vec<CheckRecord>, CliError> {
    let points = l.points();
    let tol = l.tolerances;
    let order = l.order();
    let mut out = Vec::new();
    match cmd {
        Command::Show => {
            out.push(CheckRecord::with_status(
                "manifest",
                Verdict::Pass,
                json!({ "fields": l.fields.keys().collect::<Vec<_>>() }),
            ));
        }
        Command::CheckMetric => {
            let mut nondeg = Worst::default();
            let mut failures = Vec::new();
            let mut signature = None;
            let mut ident: Vec<Worst> = vec![Worst::default(); 5];
            let mut sym = Worst::default();
            let mut fd = Worst::default();
            let probe = probe_field(&l.manifest.coordinates);
            let h = l.manifest.tolerances.fd_step;
            for x in &points {
                let ms = match metric_at(&l.metric, x, order.max(3)) {
                    Ok(ms) => ms,
                    Err(e) => {
                        failures.push(e.to_string());
                        nondeg.update(f64::INFINITY, x);
                        continue;
                    }
                };
                nondeg.update(0.0, x);
                signature.get_or_insert((ms.signature.positive, ms.signature.negative));
                let r = identity_suite(&ms, &probe.jets(x, ms.order).map_err(run_err)?).map_err(run_err)?;
                for (w, (_, v)) in ident.iter_mut().zip(r.entries()) {
                    w.update(v, x);
                }
                sym.update(riemann_symmetry_residual(&ms).map_err(run_err)?, x);
                let f = finite_difference_residual(&l.metric, x, h, 10.0 * h).map_err(run_err)?;
                fd.update(f.max(), x);
            }
            let mut rec = CheckRecord::from_worst(
                "nondegenerate",
                &nondeg,
                &tol,
                json!({ "signature": signature.map(|(p, q)| json!({"positive": p, "negative": q})) }),
            );
            if !failures.is_empty() {
                rec.details["errors"] = json!(failures);
            }
            out.push(rec);
            let names = ["lie-connection", "lie-xi", "lie-commutation", "lie-curvature", "ricci"];
            for (w, name) in ident.iter().zip(names) {
                out.push(CheckRecord::from_worst(&format!("identity/{name}"), w, &tol, Value::Null));
            }
            out.push(CheckRecord::from_worst("riemann-symmetries", &sym, &tol, Value::Null));
            out.push(CheckRecord::from_worst(
                "fd-derivatives",
                &fd,
                &FD_TOLERANCES,
                json!({ "step_first": h, "step_second": 10.0 * h }),
            ));
        }
        Command::CheckRoot => {
            let bg = l.background().map_err(CliError::Manifest)?;
            let mut root = Worst::default();
            let mut proj = Worst::default();
            let mut ps = Vec::new();
            for x in &points {
                let (ms, sr) = bg.at(x, 1).map_err(run_err)?;
                root.update(sr.root_residual, x);
                proj.update(sr.projector_residual(&ms.g_inv.values()).map_err(run_err)?, x);
                ps.push(sr.p);
            }
            out.push(CheckRecord::from_worst("square-root", &root, &tol, Value::Null));
            out.push(CheckRecord::from_worst("projectors", &proj, &tol, Value::Null));
            let constant = ps.windows(2).all(|w| w[0] == w[1]);
            out.push(CheckRecord::with_status(
                "trace-p",
                if constant { Verdict::Pass } else { Verdict::Fail },
                json!({ "p": ps[0], "n": l.manifest.dim }),
            ));
        }
        Command::CheckBcvf { field } => {
            let bg = l.background().map_err(CliError::Manifest)?;
            let f = l.field(field).map_err(CliError::Manifest)?;
            let r = detect_bcvf(&bg, field_spec(f), &points, order, &tol).map_err(run_err)?;
            let mixed = r.points.iter().map(|p| p.mixed).fold(0.0, f64::max);
            out.push(CheckRecord::from_worst(
                "bcvf",
                &r.worst(),
                &tol,
                json!({
                    "alpha": r.alpha_range.map(|(a, b)| [a, b]),
                    "beta": r.beta_range.map(|(a, b)| [a, b]),
                    "mixed": mixed,
                }),
            ));
            if let Some(g) = &f.gauges {
                let mut w = Worst::default();
                for bp in &r.points {
                    let x = ChartPoint::new(bp.point.clone());
                    let v = g.values(&x).map_err(run_err)?;
                    w.update((v.alpha - bp.gauges.alpha).abs().max((v.beta - bp.gauges.beta).abs()), &x);
                }
                out.push(CheckRecord::from_worst("declared-gauges", &w, &tol, Value::Null));
            }
        }
        Command::GaugeFree { field } => {
            let f = l.field(field).map_err(CliError::Manifest)?;
            let (a, b) = gauge_free_test(&l.metric, field_spec(f), &points, order).map_err(run_err)?;
            out.push(CheckRecord::from_worst("wedge-first", &a, &tol, Value::Null));
            out.push(CheckRecord::from_worst("wedge-second", &b, &tol, Value::Null));
        }
        Command::KerrSchild { field } => {
            let f = l.field(field).map_err(CliError::Manifest)?;
            let k = l.null_covector.as_ref().ok_or_else(|| {
                CliError::Manifest(Error::Manifest {
                    field: "null_covector".into(),
                    message: "kerr-schild needs a null covector".into(),
                })
            })?;
            let rows = detect_kerr_schild(&l.metric, field_spec(f), k, &points, order).map_err(run_err)?;
            let w = worst_of(rows.iter().map(|r| r.residual()), &points);
            let span = |v: Vec<f64>| range(v).map(|(a, b)| [a, b]);
            out.push(CheckRecord::from_worst(
                "kerr-schild",
                &w,
                &tol,
                json!({
                    "alpha": span(rows.iter().map(|r| r.alpha).collect()),
                    "beta": span(rows.iter().map(|r| r.beta).collect()),
                    "gamma": span(rows.iter().map(|r| r.gamma).collect()),
                }),
            ));
        }
        Command::SplitTest => {
            let bg = l.background().map_err(CliError::Manifest)?;
            let r = split_test(&bg, &points, order).map_err(run_err)?;
            let w = Worst {
                residual: r.max_t,
                point: r.worst_point.clone(),
                count: r.points,
            };
            out.push(CheckRecord::from_worst(
                "split",
                &w,
                &SPLIT_TOLERANCES,
                json!({ "double_twisted": r.verdict == Verdict::Pass }),
            ));
        }
        Command::Structure => {
            let bg = l.background().map_err(CliError::Manifest)?;
            let mut inv = Worst::default();
            let mut dump = Value::Null;
            for x in &points {
                let (ms, sr) = bg.at(x, order.max(2)).map_err(run_err)?;
                let st = compute_structure(&ms, &sr).map_err(run_err)?;
                inv.update(structure_invariants(&ms, &sr, &st), x);
                if dump.is_null() {
                    let flat = |t: &biconformal::tensor::TensorJet| t.values().data().to_vec();
                    dump = json!({
                        "point": x.coords(),
                        "p": st.p,
                        "n": st.n,
                        "m": flat(&st.m),
                        "e": flat(&st.e),
                        "w": flat(&st.w),
                        "t": flat(&st.t),
                        "norms": {
                            "m": st.m.max_abs(), "e": st.e.max_abs(), "w": st.w.max_abs(),
                            "t": st.t.max_abs(), "a": st.a.max_abs(), "b": st.b.max_abs(),
                        },
                        "r0": st.r0.as_ref().map(|j| j.value()),
                        "w0": st.w0.as_ref().map(|j| j.value()),
                    });
                }
            }
            out.push(CheckRecord::from_worst("structure-invariants", &inv, &tol, dump));
        }
        Command::Constraints { field } => {
            let bg = l.background().map_err(CliError::Manifest)?;
            let f = l.field(field).map_err(CliError::Manifest)?;
            let rows = constraints_for_field(&bg, field_spec(f), &f.gauge_source(), &points, order).map_err(run_err)?;
            let src = if f.gauges.is_some() { "declared" } else { "extracted" };
            for (k, name) in ["constraint-1", "constraint-2", "constraint-3"].iter().enumerate() {
                let w = worst_of(rows.iter().map(|r| [r.c1, r.c2, r.c3][k]), &points);
                out.push(CheckRecord::from_worst(name, &w, &tol, json!({ "gauges": src })));
            }
        }
        Command::NormalSystem { field } => {
            let bg = l.background().map_err(CliError::Manifest)?;
            let f = l.field(field).map_err(CliError::Manifest)?;
            let gauges = f.gauges.as_ref().ok_or_else(|| {
                CliError::Manifest(Error::Manifest {
                    field: format!("fields.{field}"),
                    message: "normal-system needs alpha and beta expressions for this field".into(),
                })
            })?;
            let (_, sr) = bg.at(&l.base_point(), 1).map_err(run_err)?;
            if let Err(e) = check_normal_p(sr.p, sr.n) {
                out.push(CheckRecord::with_status(
                    "normal-system",
                    Verdict::Flagged,
                    json!({ "excluded": e.to_string() }),
                ));
                return Ok(out);
            }
            let rows = normal_system_residuals(&bg, field_spec(f), gauges, &points, order).map_err(run_err)?;
            let names: Vec<&str> = rows[0].0.entries().iter().map(|e| e.0).collect();
            for (k, name) in names.iter().enumerate() {
                let w = worst_of(rows.iter().map(|r| r.0.entries()[k].1), &points);
                out.push(CheckRecord::from_worst(name, &w, &tol, Value::Null));
            }
            for (k, name) in ["constraint-1", "constraint-2", "constraint-3"].iter().enumerate() {
                let w = worst_of(rows.iter().map(|r| [r.1.c1, r.1.c2, r.1.c3][k]), &points);
                out.push(CheckRecord::from_worst(name, &w, &tol, Value::Null));
            }
        }
        Command::Integrability { field } => {
            let bg = l.background().map_err(CliError::Manifest)?;
            let f = l.field(field).map_err(CliError::Manifest)?;
            let rows =
                integrability_residuals(&bg, field_spec(f), &f.gauge_source(), &points, order).map_err(run_err)?;
            let entries: Vec<Vec<(&str, f64)>> = rows.iter().map(|r| r.entries()).collect();
            for k in 0..entries[0].len() {
                let w = worst_of(entries.iter().map(|e| e[k].1), &points);
                out.push(CheckRecord::from_worst(entries[0][k].0, &w, &tol, Value::Null));
            }
        }
        Command::RankAppendix => {
            let bg = l.background().map_err(CliError::Manifest)?;
            let mut m_ok = true;
            let mut c_ok = true;
            let mut first = Value::Null;
            for (i, x) in points.iter().enumerate() {
                let (ms, sr) = bg.at(x, 1).map_err(run_err)?;
                let s = sr.s.values();
                let g = ms.g.values();
                let grad = ms.covariant_derivative(&sr.s).map_err(run_err)?.values();
                let r = appendix_rank(&s, &g, Some(&grad)).map_err(run_err)?;
                let rand = random_root_gradient(&s, &g, l.manifest.sampling.seed + i as u64).map_err(run_err)?;
                let rr = appendix_rank(&s, &g, Some(&rand)).map_err(run_err)?;
                m_ok &= r.m_rank == r.p * (r.n - r.p);
                c_ok &= r.combined_rank == r.m_rank && rr.combined_rank == rr.m_rank;
                if first.is_null() {
                    first = json!({ "p": r.p, "n": r.n, "m_rank": r.m_rank, "expected": r.p * (r.n - r.p) });
                }
            }
            let v = |ok: bool| if ok { Verdict::Pass } else { Verdict::Fail };
            let mut m_rec = CheckRecord::with_status("m-rank", v(m_ok), first);
            m_rec.points = points.len();
            let mut c_rec = CheckRecord::with_status("combined-rank", v(c_ok), Value::Null);
            c_rec.points = points.len();
            out.push(m_rec);
            out.push(c_rec);
        }
        Command::Flow { field, s, steps } => {
            let bg = l.background().map_err(CliError::Manifest)?;
            let f = l.field(field).map_err(CliError::Manifest)?;
            let x0 = l.base_point();
            let r = flow_pullback_check(&bg, field_spec(f), &f.gauge_source(), &x0, *s, *steps, Some(&l.domain))
                .map_err(run_err)?;
            let d = json!({
                "s": r.s, "steps": r.steps, "end": r.end,
                "int_alpha": r.int_alpha, "int_beta": r.int_beta,
            });
            for (name, res) in [("flow-plus", r.residual_plus), ("flow-minus", r.residual_minus)] {
                let w = Worst::from_iter([(res, &x0)]);
                out.push(CheckRecord::from_worst(name, &w, &FLOW_TOLERANCES, d.clone()));
            }
        }
        Command::Bound { .. } | Command::MaximalDemo { .. } | Command::Builtins => unreachable!(),
    }
    Ok(out)
}

/// Parses arguments, runs, writes output; returns the process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(stderr, "error: {e}");
        return 2;
    }
    match run(&cli) {
        Ok(report) => {
            for c in report.checks.iter().filter(|c| c.status == Verdict::Flagged) {
                let _ = writeln!(stderr, "warning: {} is flagged (max residual {:.3e})", c.check, c.max_residual);
            }
            match &cli.json_out {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, report.to_json() + "\n") {
                        let _ = writeln!(stderr, "error: cannot write {}: {e}", path.display());
                        return 2;
                    }
                    let _ = write!(stdout, "{}", report.summary());
                }
                None => {
                    let _ = writeln!(stdout, "{}", report.to_json());
                }
            }
            report.exit_code()
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
