use biconformal::field::ChartPoint;
use biconformal::maximal::{build_maximal, FlatLeafProductSpec};
use biconformal::structure::normal_system_residuals;

#[test]
fn maximal_demo_normal_system() {
    let spec = FlatLeafProductSpec::demo_7_3();
    let pts = vec![
        ChartPoint::new(vec![0.1; 7]),
        ChartPoint::new(vec![0.3, -0.2, 0.25, 0.4, -0.1, 0.35, 0.2]),
    ];
    let sp = build_maximal(&spec, &pts).unwrap();
    let mut worst = 0.0f64;
    for f in &sp.fields {
        let rows = normal_system_residuals(&sp.background, &f.field, &f.gauges, &pts, 4).unwrap();
        for (n, c) in &rows {
            println!("{:28} {:?} {:?}", f.name, n, c);
            worst = worst.max(n.max()).max(c.max());
        }
    }
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn printed_gradient_coefficients_fail_on_the_demo() {
    use biconformal::geometry::VectorField;
    use biconformal::structure::{compute_structure, constraint_residuals_with, NormalState};
    let spec = FlatLeafProductSpec::demo_7_3();
    let x = ChartPoint::new(vec![0.3, -0.2, 0.25, 0.4, -0.1, 0.35, 0.2]);
    let sp = build_maximal(&spec, std::slice::from_ref(&x)).unwrap();
    let (ms, sr) = sp.background.at(&x, 3).unwrap();
    let st = compute_structure(&ms, &sr).unwrap();
    let (mut derived, mut c2, mut c3) = (0.0f64, 0.0f64, 0.0f64);
    for f in &sp.fields {
        let (phi, chi) = f.gauges.phi_chi(&x, 3).unwrap();
        let state = NormalState::from_field(&ms, f.field.jets(&x, 3).unwrap(), phi, chi).unwrap();
        derived = derived.max(constraint_residuals_with(&ms, &sr, &st, &state, 3.0, 4.0).unwrap().max());
        let printed = constraint_residuals_with(&ms, &sr, &st, &state, 0.5 * (7.0 + 3.0), 0.5 * 4.0).unwrap();
        c2 = c2.max(printed.c2);
        c3 = c3.max(printed.c3);
    }
    assert!(derived < 1e-12, "{derived}");
    assert!(c2 > 1e-3 && c3 > 1e-3, "{c2} {c3}");
}
