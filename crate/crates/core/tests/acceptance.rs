//! Acceptance suite: one line per criterion, non-zero exit on any failure.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use biconformal::field::ChartPoint;
use biconformal::geometry::{finite_difference_residual, VectorField};
use biconformal::manifest::{sample_points, Loaded};
use biconformal::maximal::{build_maximal, independence_rank, FlatLeafProductSpec, MaximalSpace};
use biconformal::report::Tolerances;
use biconformal::scenarios::{builtin, builtin_names};
use biconformal::square_root::{
    check_square_root, duality_residual, hodge_identity_residual, invert, root_from_form_values,
    round_trip_residual,
};
use biconformal::structure::{
    appendix_rank, dimension_bound, integrability_residuals, normal_system_residuals, random_root_gradient,
    split_test, DimensionBound,
};
use biconformal::symmetry::{
    bracket_gauges, detect_bcvf, flow_pullback_check, gauge_free_test, linearity_residual, DomainBox, GaugeSource,
};
use biconformal::tensor::{PForm, Slot, Tensor, TensorValue};
use biconformal::Result;

struct Outcome {
    ok: bool,
    summary: String,
}

fn outcome(ok: bool, summary: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        ok,
        summary: summary.into(),
    })
}

fn load(name: &str) -> Loaded {
    builtin(name).and_then(|m| m.load()).expect("built-in loads")
}

fn demo() -> (MaximalSpace, Vec<ChartPoint>) {
    let pts = sample_points(
        &DomainBox {
            center: vec![0.1; 7],
            half_widths: vec![0.5; 7],
        },
        16,
        42,
    );
    (build_maximal(&FlatLeafProductSpec::demo_7_3(), &pts).unwrap(), pts)
}

fn ad_correctness() -> Result<Outcome> {
    let metrics = ["rw-expanding", "twisted-3-4", "breakable-6-3", "adapted-demo", "maximal-7-3"];
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (k, name) in metrics.iter().enumerate() {
        let l = load(name);
        for x in sample_points(&l.domain, 20, 1000 + k as u64) {
            worst = worst.max(finite_difference_residual(&l.metric, &x, 1e-5, 1e-4)?.max());
            count += 1;
        }
    }
    outcome(worst < 1e-5 && count == 100, format!("{count} points, max relative {worst:.2e}"))
}

/// `g = Aᵀ η A` for a random near-identity frame `A`; returns `A` and `η`.
fn random_frame(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let negatives = rng.gen_range(0..=n / 2);
    let a = (0..n)
        .map(|i| (0..n).map(|j| f64::from(i == j) + 0.3 * rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let eta = (0..n).map(|k| if k < negatives { -1.0 } else { 1.0 }).collect();
    (a, eta)
}

/// `Aᵀ diag(d) A`
fn congruence(a: &[Vec<f64>], d: &[f64]) -> TensorValue {
    let n = d.len();
    Tensor::from_fn(n, &[Slot::Down, Slot::Down], |ix| {
        (0..n).map(|k| a[k][ix[0]] * a[k][ix[1]] * d[k]).sum()
    })
}

fn random_metric(n: usize, rng: &mut ChaCha8Rng) -> TensorValue {
    let (a, eta) = random_frame(n, rng);
    congruence(&a, &eta)
}

fn square_root_suite() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut root, mut trip, mut dual, mut hodge) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut forms = 0;
    for n in 4..=7 {
        let mut made = 0;
        while made < 20 {
            let g = random_metric(n, &mut rng);
            let p = rng.gen_range(1..n);
            let factors: Vec<Vec<f64>> = (0..p)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect();
            let omega = PForm::from_factors(&factors)?;
            // null or nearly null spans are redrawn
            let Ok((s, _)) = root_from_form_values(&omega, &g) else {
                continue;
            };
            root = root.max(check_square_root(&s, &g, &invert(&g)?)?);
            trip = trip.max(round_trip_residual(&s, &g)?);
            dual = dual.max(duality_residual(&omega, &g)?);
            hodge = hodge.max(hodge_identity_residual(&omega, &g)?);
            made += 1;
            forms += 1;
        }
    }
    outcome(
        root < 1e-8 && trip < 1e-8 && dual < 1e-9 && hodge < 1e-9,
        format!("{forms} forms, root {root:.1e}, round trip {trip:.1e}, duality {dual:.1e}, hodge {hodge:.1e}"),
    )
}

fn maximal_reproduction() -> Result<Outcome> {
    let (sp, pts) = demo();
    let tol = Tolerances::default();
    let mut worst: f64 = 0.0;
    for f in &sp.fields {
        worst = worst.max(detect_bcvf(&sp.background, &f.field, &pts, 2, &tol)?.max_residual);
    }
    let refs: Vec<&dyn VectorField> = sp.fields.iter().map(|f| &f.field as &dyn VectorField).collect();
    let rank = independence_rank(&refs, &pts)?;
    // conformal algebras of flat 3- and 4-dimensional leaves: 10 + 15
    let expected = 10 + 15;
    outcome(
        sp.fields.len() == expected
            && rank == expected
            && worst < 1e-7
            && dimension_bound(7, 3)? == DimensionBound::Finite(expected),
        format!("{} fields, rank {rank}, max detection residual {worst:.1e}", sp.fields.len()),
    )
}

fn dimension_table() -> Result<Outcome> {
    let mut checked = 0;
    let mut ok = true;
    for n in 2..=8 {
        for p in 1..n {
            let q = n - p;
            let got = dimension_bound(n, p)?;
            let want = if [1, 2].contains(&p) || [1, 2].contains(&q) {
                DimensionBound::InfinitePossible
            } else {
                let tri = |m: usize| (1..=m + 1).sum::<usize>();
                DimensionBound::Finite(tri(p) + tri(q))
            };
            ok &= got == want;
            if n == 5 {
                ok &= got == DimensionBound::InfinitePossible;
            }
            checked += 1;
        }
    }
    outcome(ok, format!("{checked} (n, p) pairs"))
}

const CONTROLS: [(&str, &str); 3] = [("rw-expanding", "control"), ("twisted-3-4", "control"), ("flat-split", "control")];

fn gauge_free() -> Result<Outcome> {
    let mut positive: f64 = 0.0;
    let mut fields = 0;
    for name in builtin_names() {
        let l = load(name);
        let pts = &l.points()[..4];
        for f in l.fields.values().filter(|f| f.gauges.is_some()) {
            let (a, b) = gauge_free_test(&l.metric, &f.spec, pts, 2)?;
            positive = positive.max(a.residual).max(b.residual);
            fields += 1;
        }
    }
    let mut negative = f64::INFINITY;
    for (name, field) in CONTROLS {
        let l = load(name);
        let (a, b) = gauge_free_test(&l.metric, &l.field(field)?.spec, &l.points()[..4], 2)?;
        negative = negative.min(a.residual.max(b.residual));
    }
    outcome(
        positive < 1e-7 && negative > 1e-3,
        format!("{fields} fields max {positive:.1e}, controls min {negative:.1e}"),
    )
}

fn split_criterion() -> Result<Outcome> {
    let mut twisted: f64 = 0.0;
    for name in ["twisted-3-4", "maximal-7-3", "maximal-6-3"] {
        let l = load(name);
        twisted = twisted.max(split_test(&l.background()?, &l.points()[..8], 1)?.max_t);
    }
    let mut perturbed = f64::INFINITY;
    for name in ["twisted-perturbed", "breakable-6-3"] {
        let l = load(name);
        perturbed = perturbed.min(split_test(&l.background()?, &l.points()[..8], 1)?.max_t);
    }
    outcome(
        twisted < 1e-8 && perturbed > 1e-3,
        format!("double-twisted max {twisted:.1e}, perturbed min {perturbed:.1e}"),
    )
}

fn appendix() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ok = true;
    let mut cases = 0;
    for n in 2..=7 {
        for p in 1..n {
            for k in 0..5 {
                let (a, eta) = random_frame(n, &mut rng);
                // S = Aᵀ η ε A with p entries of ε equal to +1, at random frame slots
                let mut eps = vec![-1.0; n];
                let mut slots: Vec<usize> = (0..n).collect();
                for i in 0..p {
                    let j = rng.gen_range(i..n);
                    slots.swap(i, j);
                    eps[slots[i]] = 1.0;
                }
                let g = congruence(&a, &eta);
                let s = congruence(&a, &eta.iter().zip(&eps).map(|(x, y)| x * y).collect::<Vec<_>>());
                let grad = random_root_gradient(&s, &g, 100 * n as u64 + 10 * p as u64 + k)?;
                let r = appendix_rank(&s, &g, Some(&grad))?;
                ok &= r.p == p && r.m_rank == p * (n - p) && r.combined_rank == r.m_rank;
                cases += 1;
            }
        }
    }
    outcome(ok, format!("{cases} roots over 2 <= n <= 7"))
}

fn normal_system() -> Result<Outcome> {
    let (sp, pts) = demo();
    let pts = &pts[..2];
    let (mut constraints, mut normal) = (0.0f64, 0.0f64);
    for f in &sp.fields {
        for (nr, cr) in normal_system_residuals(&sp.background, &f.field, &f.gauges, pts, 4)? {
            constraints = constraints.max(cr.max());
            normal = normal.max(nr.max());
        }
    }
    outcome(
        constraints < 1e-7 && normal < 1e-6,
        format!("{} lifts, constraints {constraints:.1e}, normal system {normal:.1e}", sp.fields.len()),
    )
}

fn lie_algebra() -> Result<Outcome> {
    let (sp, pts) = demo();
    let pts = &pts[..4];
    let chosen = [
        "leaf1-translation-x1",
        "leaf1-rotation-x1-x2",
        "leaf1-special-x2",
        "leaf2-dilation",
        "leaf2-rotation-x5-x6",
        "leaf2-special-x4",
    ];
    let fields: Vec<_> = chosen
        .iter()
        .map(|n| sp.fields.iter().find(|f| f.name == *n).expect("designated field exists"))
        .collect();
    let tol = Tolerances::default();
    let (mut bracket, mut linear) = (0.0f64, 0.0f64);
    for i in 0..fields.len() {
        for j in i + 1..fields.len() {
            let a: Arc<dyn VectorField> = Arc::new(fields[i].field.clone());
            let b: Arc<dyn VectorField> = Arc::new(fields[j].field.clone());
            let r = bracket_gauges(
                &sp.background,
                Arc::clone(&a),
                &fields[i].gauges,
                Arc::clone(&b),
                &fields[j].gauges,
                pts,
                3,
                &tol,
            )?;
            bracket = bracket.max(r.max_residual());
            let (d, sum) = linearity_residual(&sp.background, a, b, pts, 2)?;
            linear = linear.max(d).max(sum);
        }
    }
    outcome(
        bracket < 1e-7 && linear < 1e-8,
        format!("15 pairs, bracket {bracket:.1e}, linearity {linear:.1e}"),
    )
}

fn integrability() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut fields = 0;
    for name in builtin_names() {
        let l = load(name);
        let Ok(bg) = l.background() else { continue };
        let pts = &l.points()[..3];
        for f in l.fields.values().filter(|f| f.gauges.is_some()) {
            for r in integrability_residuals(&bg, &f.spec, &f.gauge_source(), pts, 3)? {
                worst = worst.max(r.max());
            }
            fields += 1;
        }
    }
    outcome(worst < 1e-7, format!("{fields} fields, max {worst:.1e}"))
}

fn flow() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut oracle: f64 = 0.0;
    for (name, alpha, beta) in [("flat-dilation", 2.0, 0.0), ("rw-expanding", 1.0, -1.0)] {
        let l = load(name);
        let f = l.field("xi")?;
        let x0 = l.base_point();
        for s in [0.1, 0.3, 0.5] {
            let r = flow_pullback_check(&l.background()?, &f.spec, &GaugeSource::Extracted, &x0, s, None, Some(&l.domain))?;
            worst = worst.max(r.residual());
            // constant gauges integrate to α s, β s; the flows are e^s x and t + s
            let end: Vec<f64> = if name == "flat-dilation" {
                x0.coords().iter().map(|x| x * s.exp()).collect()
            } else {
                let mut e = x0.coords().to_vec();
                e[0] += s;
                e
            };
            let d_end = r.end.iter().zip(&end).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            oracle = oracle
                .max((r.int_alpha - alpha * s).abs())
                .max((r.int_beta - beta * s).abs())
                .max(d_end);
        }
    }
    outcome(
        worst < 1e-4 && oracle < 1e-6,
        format!("pullback max {worst:.1e}, closed-form flow max {oracle:.1e}"),
    )
}

fn expanding_congruence() -> Result<Outcome> {
    let tol = Tolerances::default();
    let l = load("rw-expanding");
    let r = detect_bcvf(&l.background()?, &l.field("xi")?.spec, &l.points(), 2, &tol)?;
    let mut dev: f64 = 0.0;
    for p in &r.points {
        // a = e^t: α = 1, β = −1, χ = α − β = 2a'/a = 2
        dev = dev
            .max((p.gauges.alpha - 1.0).abs())
            .max((p.gauges.beta + 1.0).abs())
            .max((p.gauges.chi() - 2.0).abs());
    }
    let l = load("rw-rigid");
    let r2 = detect_bcvf(&l.background()?, &l.field("xi")?.spec, &l.points(), 2, &tol)?;
    let rigid = r2
        .points
        .iter()
        .map(|p| p.gauges.alpha.abs().max(p.gauges.beta.abs()))
        .fold(0.0, f64::max);
    outcome(
        dev < 1e-8 && rigid < 1e-8 && r.max_residual < 1e-7 && r2.max_residual < 1e-7,
        format!("expanding gauge error {dev:.1e}, rigid gauges max {rigid:.1e}"),
    )
}

type Criterion = (&'static str, fn() -> Result<Outcome>, Duration);

fn main() {
    let secs = Duration::from_secs;
    let criteria: [Criterion; 12] = [
        ("jet derivatives vs central differences", ad_correctness, secs(10)),
        ("square roots from simple forms", square_root_suite, secs(30)),
        ("maximal n=7 p=3 space", maximal_reproduction, secs(60)),
        ("dimension bound table", dimension_table, secs(1)),
        ("gauge-free wedge conditions", gauge_free, secs(30)),
        ("double-twisted split criterion", split_criterion, secs(10)),
        ("algebraic constraint rank", appendix, secs(30)),
        ("constraints and normal system", normal_system, secs(300)),
        ("Lie algebra of gauges", lie_algebra, secs(60)),
        ("integrability identities", integrability, secs(60)),
        ("finite transformations along flows", flow, secs(30)),
        ("expanding and rigid congruences", expanding_congruence, secs(30)),
    ];
    let mut failed = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = f();
        let dt = t.elapsed();
        let (ok, summary) = match r {
            Ok(o) => (o.ok && dt <= *budget, o.summary),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}  {name}: {summary} ({:.2}s, budget {}s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 12 passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
