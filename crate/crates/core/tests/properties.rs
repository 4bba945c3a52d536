use approx::assert_relative_eq;
use proptest::prelude::*;

use biconformal::field::parse;
use biconformal::manifest::sample_points;
use biconformal::structure::{dimension_bound, DimensionBound};
use biconformal::symmetry::{DomainBox, GaugePair};

fn tri(k: usize) -> usize {
    (1..=k + 1).sum()
}

proptest! {
    #[test]
    fn samples_stay_in_the_box(
        center in prop::collection::vec(-3.0f64..3.0, 1..8),
        width in 0.01f64..2.0,
        count in 1usize..40,
        seed in any::<u64>(),
    ) {
        let dom = DomainBox { half_widths: vec![width; center.len()], center: center.clone() };
        let pts = sample_points(&dom, count, seed);
        prop_assert_eq!(pts.len(), count);
        prop_assert_eq!(pts[0].coords(), &center[..]);
        for p in &pts {
            prop_assert!(dom.contains(p.coords()));
        }
        prop_assert_eq!(pts, sample_points(&dom, count, seed));
    }

    #[test]
    fn bound_is_a_sum_of_triangular_numbers(n in 2usize..30, p in 1usize..29) {
        prop_assume!(p < n);
        let q = n - p;
        match dimension_bound(n, p).unwrap() {
            DimensionBound::InfinitePossible => prop_assert!(p <= 2 || q <= 2),
            DimensionBound::Finite(b) => {
                prop_assert!(p > 2 && q > 2);
                prop_assert_eq!(b, tri(p) + tri(q));
            }
        }
    }

    #[test]
    fn gauge_pair_round_trip(phi in -1e3f64..1e3, chi in -1e3f64..1e3) {
        let g = GaugePair::from_phi_chi(phi, chi);
        assert_relative_eq!(g.phi(), phi, epsilon = 1e-9);
        assert_relative_eq!(g.chi(), chi, epsilon = 1e-9);
    }

    #[test]
    fn symbolic_derivative_matches_central_difference(x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let c = vec!["x".to_string(), "y".to_string()];
        let e = parse("exp(x*y) + sin(x)^2 / (2 + cos(y))", &c).unwrap();
        let d = e.derivative(0);
        let h = 1e-5;
        let fd = (e.eval(&[x + h, y]).unwrap() - e.eval(&[x - h, y]).unwrap()) / (2.0 * h);
        assert_relative_eq!(d.eval(&[x, y]).unwrap(), fd, epsilon = 1e-8);
    }
}

#[test]
fn out_of_range_degree_is_rejected() {
    assert!(dimension_bound(5, 0).is_err());
    assert!(dimension_bound(5, 5).is_err());
}
