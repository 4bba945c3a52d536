//! Square roots of the metric, their projectors, and superenergy tensors of
//! simple forms.
//!
//! `S` is a square root when `S_ac g^{cd} S_db = g_ab`. Then
//! `P = (g + S)/2` and `Π = (g − S)/2` are complementary orthogonal projectors
//! and `p = P^a_a` is the dimension of the `+1` eigenspace of `S^a_b`.

use crate::error::{Error, Result};
use crate::field::{parse, ChartPoint, Expression};
use crate::geometry::{MetricStructure, TensorField};
use crate::linalg::{column_space, numerical_rank, RANK_TOLERANCE};
use crate::tensor::{
    combinations, form_dot, hodge_dual, inner_product_x, PForm, PFormValue, Scalar, Slot, Tensor,
    TensorJet, TensorValue,
};

/// Allowed deviation of `P^a_a` from an integer.
pub const TRACE_TOLERANCE: f64 = 1e-9;
/// Allowed asymmetry of `S`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `Z_a^b = Σ_{C increasing} A_{aC} B^{bC}`, i.e. `(1/(p−1)!) A_{aC} B^{bC}`.
pub fn half_contraction<T: Scalar>(a: &PForm<T>, b_up: &PForm<T>) -> Tensor<T> {
    let n = a.dim();
    let p = a.degree();
    let zero = a.components()[0].zero_like();
    let mut out = Tensor::from_fn(n, &[Slot::Down, Slot::Up], |_| zero.clone());
    let mut ia = vec![0; p];
    let mut ib = vec![0; p];
    for c in combinations(n, p - 1) {
        ia[1..].copy_from_slice(&c);
        ib[1..].copy_from_slice(&c);
        for x in (0..n).filter(|x| !c.contains(x)) {
            ia[0] = x;
            let ax = a.get(&ia);
            for y in (0..n).filter(|y| !c.contains(y)) {
                ib[0] = y;
                out.get_mut(&[x, y]).fma_acc(&ax, &b_up.get(&ib));
            }
        }
    }
    out
}

/// Superenergy tensor
/// `T_ab = (−1)^{p−1}/(p−1)! (Ω_{aC}Ω_b^C − (1/2p) g_ab Ω·Ω)`.
/// Returns `T` and `Ω·Ω`.
pub fn superenergy<T: Scalar>(
    omega: &PForm<T>,
    g: &Tensor<T>,
    g_inv: &Tensor<T>,
) -> Result<(Tensor<T>, T)> {
    let p = omega.degree();
    if p == 0 {
        return Err(Error::Invalid("superenergy of a 0-form".into()));
    }
    let dot = form_dot(omega, omega, g_inv)?;
    let up = omega.raise_all(g_inv);
    let y = half_contraction(omega, &up).lower(1, g);
    let trace = g.times_scalar(&dot).scaled(1.0 / (2.0 * factorial(p)));
    let sign = if p % 2 == 1 { 1.0 } else { -1.0 };
    Ok((y.minus(&trace).scaled(sign), dot))
}

/// `T{Ω}` after rescaling `Ω` so that `|Ω·Ω| = 2p!`. Returns `T` and the
/// sign of `Ω·Ω`.
pub fn normalized_superenergy<T: Scalar>(
    omega: &PForm<T>,
    g: &Tensor<T>,
    g_inv: &Tensor<T>,
) -> Result<(Tensor<T>, f64)> {
    let (t, dot) = superenergy(omega, g, g_inv)?;
    let p = omega.degree();
    let scale = omega.norm().powi(2) * factorial(p);
    if dot.value().abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NullForm(dot.value()));
    }
    let sgn = dot.value().signum();
    // T is quadratic in Ω: T{λΩ} = λ² T{Ω} with λ² = 2p!/|Ω·Ω|
    let lambda2 = dot.scaled(sgn).recip().scaled(2.0 * factorial(p));
    Ok((t.times_scalar(&lambda2), sgn))
}

/// `max |S×S − g| / max(1, max |g|)`; errors if `S` is not symmetric.
pub fn check_square_root(s: &TensorValue, g: &TensorValue, g_inv: &TensorValue) -> Result<f64> {
    let asym = s.minus(&s.permute(&[1, 0])).max_abs();
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::Asymmetric(asym));
    }
    let ss = inner_product_x(s, s, g_inv)?;
    Ok(ss.minus(g).max_abs() / g.max_abs().max(1.0))
}

/// Square root with projectors at one point, as jets.
#[derive(Debug, Clone)]
pub struct SquareRootStructure {
    /// `S_ab`
    pub s: TensorJet,
    /// `S^a_b`
    pub s_mixed: TensorJet,
    pub p_low: TensorJet,
    pub pi_low: TensorJet,
    /// `P^a_b`
    pub p_mixed: TensorJet,
    pub pi_mixed: TensorJet,
    /// `P^ab`
    pub p_up: TensorJet,
    pub pi_up: TensorJet,
    /// `P^a_a`
    pub p: usize,
    pub n: usize,
    /// `max |S×S − g|` (relative) at the point.
    pub root_residual: f64,
    /// Sign applied to `T{Ω}` when built from a form.
    pub sign: Option<f64>,
    /// Normalized generating form (values), when built from one.
    pub form: Option<PFormValue>,
}

impl SquareRootStructure {
    /// Builds projectors from `S_ab`; `p` must come out integral and the
    /// projector ranks must be `p` and `n − p`.
    pub fn from_root(s: TensorJet, ms: &MetricStructure) -> Result<Self> {
        let n = ms.dim();
        if s.dim() != n || s.rank() != 2 {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: s.dim(),
            });
        }
        let s = s.set_slots(&[Slot::Down, Slot::Down]);
        let root_residual = check_square_root(&s.values(), &ms.g.values(), &ms.g_inv.values())?;
        let s_mixed = s.raise(0, &ms.g_inv);
        let p_low = ms.g.plus(&s).scaled(0.5);
        let pi_low = ms.g.minus(&s).scaled(0.5);
        let p_mixed = p_low.raise(0, &ms.g_inv);
        let pi_mixed = pi_low.raise(0, &ms.g_inv);
        let p_up = p_mixed.raise(1, &ms.g_inv);
        let pi_up = pi_mixed.raise(1, &ms.g_inv);
        let trace: f64 = (0..n).map(|a| p_mixed.get(&[a, a]).value()).sum();
        let p_round = trace.round();
        if (trace - p_round).abs() > TRACE_TOLERANCE || p_round < 0.0 || p_round > n as f64 {
            return Err(Error::NonIntegralTrace(trace));
        }
        let p = p_round as usize;
        let rank_p = numerical_rank(&p_mixed.values().to_matrix(), RANK_TOLERANCE);
        if rank_p != p {
            return Err(Error::RankMismatch {
                expected: p,
                found: rank_p,
            });
        }
        let rank_pi = numerical_rank(&pi_mixed.values().to_matrix(), RANK_TOLERANCE);
        if rank_pi != n - p {
            return Err(Error::RankMismatch {
                expected: n - p,
                found: rank_pi,
            });
        }
        Ok(SquareRootStructure {
            s,
            s_mixed,
            p_low,
            pi_low,
            p_mixed,
            pi_mixed,
            p_up,
            pi_up,
            p,
            n,
            root_residual,
            sign: None,
            form: None,
        })
    }

    /// Residuals of `P×P = P`, `Π×Π = Π`, `P×Π = 0` (values).
    pub fn projector_residual(&self, g_inv: &TensorValue) -> Result<f64> {
        let (p, pi) = (self.p_low.values(), self.pi_low.values());
        let pp = inner_product_x(&p, &p, g_inv)?.minus(&p).max_abs();
        let qq = inner_product_x(&pi, &pi, g_inv)?.minus(&pi).max_abs();
        let pq = inner_product_x(&p, &pi, g_inv)?.max_abs();
        Ok(pp.max(qq).max(pq))
    }

    /// The same structure with the roles of `P` and `Π` exchanged (`S → −S`).
    pub fn swapped(&self) -> SquareRootStructure {
        SquareRootStructure {
            s: self.s.scaled(-1.0),
            s_mixed: self.s_mixed.scaled(-1.0),
            p_low: self.pi_low.clone(),
            pi_low: self.p_low.clone(),
            p_mixed: self.pi_mixed.clone(),
            pi_mixed: self.p_mixed.clone(),
            p_up: self.pi_up.clone(),
            pi_up: self.p_up.clone(),
            p: self.n - self.p,
            n: self.n,
            root_residual: self.root_residual,
            sign: self.sign.map(|s| -s),
            form: None,
        }
    }
}

/// `Ω = k₁ ∧ … ∧ k_p` with factor components given as expressions.
#[derive(Debug, Clone)]
pub struct SimpleFormSpec {
    pub factors: Vec<Vec<Expression>>,
}

impl SimpleFormSpec {
    pub fn from_strings(coords: &[String], factors: &[Vec<&str>]) -> Result<Self> {
        let factors = factors
            .iter()
            .map(|k| {
                if k.len() != coords.len() {
                    return Err(Error::DimensionMismatch {
                        expected: coords.len(),
                        found: k.len(),
                    });
                }
                k.iter().map(|s| parse(s, coords)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimpleFormSpec { factors })
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_jets(&self, x: &ChartPoint, order: usize) -> Result<Vec<Vec<crate::field::Jet>>> {
        self.factors
            .iter()
            .map(|k| k.iter().map(|e| e.evaluate_jet(x.coords(), order)).collect())
            .collect()
    }

    /// `Ω` as jets; rejects dependent factors via the Gram determinant.
    pub fn jets(&self, ms: &MetricStructure, order: usize) -> Result<PForm<crate::field::Jet>> {
        let factors = self.factor_jets(&ms.point, order)?;
        let values: Vec<Vec<f64>> = factors
            .iter()
            .map(|k| k.iter().map(|j| j.value()).collect())
            .collect();
        check_gram(&values, &ms.g_inv.values())?;
        PForm::from_factors(&factors)
    }
}

/// Gram determinant of covectors `k_i · k_j`; errors below 1e-10.
pub fn check_gram(factors: &[Vec<f64>], g_inv: &TensorValue) -> Result<f64> {
    let p = factors.len();
    let n = g_inv.dim();
    let gram = nalgebra::DMatrix::from_fn(p, p, |i, j| {
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += factors[i][a] * g_inv.get(&[a, b]) * factors[j][b];
            }
        }
        s
    });
    let det = gram.determinant();
    if det.abs() <= 1e-10 {
        return Err(Error::DependentFactors(det));
    }
    Ok(det)
}

/// Square root `S = s·T{Ω}` from a simple form, with `s = (−1)^{p−1} sgn(Ω·Ω)`
/// so that `P` projects onto the span of the factors. Both signs give roots;
/// the chosen one is recorded.
pub fn root_from_form_jets(omega: &PForm<crate::field::Jet>, ms: &MetricStructure) -> Result<SquareRootStructure> {
    let p = omega.degree();
    let (t, dot_sign) = normalized_superenergy(omega, &ms.g, &ms.g_inv)?;
    let parity = if p % 2 == 1 { 1.0 } else { -1.0 };
    let sign = parity * dot_sign;
    let g = ms.g.values();
    let gi = ms.g_inv.values();
    let tv = t.values();
    let r_plus = check_square_root(&tv.scaled(sign), &g, &gi)?;
    if r_plus > 1e-6 {
        let r_minus = check_square_root(&tv.scaled(-sign), &g, &gi)?;
        return Err(Error::SignFailure(r_plus, r_minus));
    }
    let mut sr = SquareRootStructure::from_root(t.scaled(sign), ms)?;
    sr.sign = Some(sign);
    let ov = omega.values();
    let dot = form_dot(&ov, &ov, &gi)?;
    sr.form = Some(ov.scaled((2.0 * factorial(p) / dot.abs()).sqrt()));
    Ok(sr)
}

pub fn root_from_form(spec: &SimpleFormSpec, ms: &MetricStructure) -> Result<SquareRootStructure> {
    let omega = spec.jets(ms, ms.order)?;
    root_from_form_jets(&omega, ms)
}

/// Values-only version for forms given numerically.
pub fn root_from_form_values(omega: &PFormValue, g: &TensorValue) -> Result<(TensorValue, f64)> {
    let g_inv = invert(g)?;
    let p = omega.degree();
    let (t, dot_sign) = normalized_superenergy(omega, g, &g_inv)?;
    let sign = if p % 2 == 1 { dot_sign } else { -dot_sign };
    let s = t.scaled(sign);
    let r = check_square_root(&s, g, &g_inv)?;
    if r > 1e-6 {
        let r2 = check_square_root(&t.scaled(-sign), g, &g_inv)?;
        return Err(Error::SignFailure(r, r2));
    }
    Ok((s, sign))
}

pub fn invert(g: &TensorValue) -> Result<TensorValue> {
    let m = g.to_matrix();
    let det = m.determinant();
    if det.abs() < crate::geometry::DEGENERACY_THRESHOLD {
        return Err(Error::DegenerateMetric {
            point: Vec::new(),
            det,
        });
    }
    let inv = m.try_inverse().ok_or(Error::DegenerateMetric {
        point: Vec::new(),
        det,
    })?;
    Ok(Tensor::from_fn(g.dim(), &[Slot::Up, Slot::Up], |i| inv[(i[0], i[1])]))
}

/// A basis of the `+1` eigenspace of `S^a_b`, lowered to covectors.
pub fn form_from_root(s: &TensorValue, g: &TensorValue) -> Result<Vec<Vec<f64>>> {
    let n = g.dim();
    let g_inv = invert(g)?;
    let p_mixed = g.plus(s).scaled(0.5).raise(0, &g_inv);
    let trace: f64 = (0..n).map(|a| p_mixed.get(&[a, a])).sum();
    let p = trace.round();
    if (trace - p).abs() > TRACE_TOLERANCE {
        return Err(Error::NonIntegralTrace(trace));
    }
    let p = p as usize;
    let basis = column_space(&p_mixed.to_matrix(), RANK_TOLERANCE);
    if basis.len() != p {
        return Err(Error::RankMismatch {
            expected: p,
            found: basis.len(),
        });
    }
    Ok(basis
        .iter()
        .map(|v| (0..n).map(|a| (0..n).map(|b| g.get(&[a, b]) * v[b]).sum()).collect())
        .collect())
}

/// Smallest `max |T{Σ} ∓ S|` over both signs, with `Σ` the wedge of the
/// basis from [`form_from_root`].
pub fn round_trip_residual(s: &TensorValue, g: &TensorValue) -> Result<f64> {
    let factors = form_from_root(s, g)?;
    if factors.is_empty() {
        // p = 0: S = −g, nothing to wedge
        return Ok(s.plus(g).max_abs());
    }
    let sigma = PForm::from_factors(&factors)?;
    let g_inv = invert(g)?;
    let (t, _) = normalized_superenergy(&sigma, g, &g_inv)?;
    Ok(t.minus(s).max_abs().min(t.plus(s).max_abs()))
}

/// `min_± max |T{Ω} ∓ T{*Ω}|` with both forms normalized.
pub fn duality_residual(omega: &PFormValue, g: &TensorValue) -> Result<f64> {
    let g_inv = invert(g)?;
    let (t, _) = normalized_superenergy(omega, g, &g_inv)?;
    let dual = hodge_dual(omega, g, 1.0)?;
    let (td, _) = normalized_superenergy(&dual, g, &g_inv)?;
    Ok(t.minus(&td).max_abs().min(t.plus(&td).max_abs()))
}

/// `(1/(p−1)!)Σ^{aC}Σ_{bC} + sgn(det g)(1/(n−p−1)!)(*Σ)^{aD}(*Σ)_{bD}
///  − (Σ·Σ/p!) δ^a_b`, max component.
pub fn hodge_identity_residual(sigma: &PFormValue, g: &TensorValue) -> Result<f64> {
    let n = g.dim();
    let p = sigma.degree();
    if p == 0 || p >= n {
        return Err(Error::OutOfRange { n, p });
    }
    let g_inv = invert(g)?;
    let det_sign = g.to_matrix().determinant().signum();
    let up = sigma.raise_all(&g_inv);
    let first = half_contraction(sigma, &up); // (Down b, Up a)
    let dual = hodge_dual(sigma, g, 1.0)?;
    let dual_up = dual.raise_all(&g_inv);
    let second = half_contraction(&dual, &dual_up);
    let dot = form_dot(sigma, sigma, &g_inv)?;
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let delta = if a == b { 1.0 } else { 0.0 };
            let v = first.get(&[b, a]) + det_sign * second.get(&[b, a]) - dot / factorial(p) * delta;
            worst = worst.max(v.abs());
        }
    }
    Ok(worst)
}

/// Where the square root comes from.
#[derive(Debug, Clone)]
pub enum RootSource {
    /// `S_ab` components.
    Components(TensorField),
    /// `S = ±T{Ω}` for a simple form.
    Form(SimpleFormSpec),
    /// Block-orthogonal metric: `S = g` on the listed coordinates and `−g`
    /// on the rest.
    Blocks { plus: Vec<usize> },
}

impl RootSource {
    /// Square-root structure at the metric's point, with the metric's jet order.
    pub fn structure_at(&self, ms: &MetricStructure) -> Result<SquareRootStructure> {
        match self {
            RootSource::Components(t) => {
                SquareRootStructure::from_root(t.jets(&ms.point, ms.order)?, ms)
            }
            RootSource::Form(spec) => root_from_form(spec, ms),
            RootSource::Blocks { plus } => {
                let n = ms.dim();
                if plus.iter().any(|&i| i >= n) {
                    return Err(Error::Invalid("block index outside the chart".into()));
                }
                let eps = |a: usize| if plus.contains(&a) { 1.0 } else { -1.0 };
                for a in 0..n {
                    for b in 0..n {
                        let v = ms.g.get(&[a, b]).value();
                        if eps(a) != eps(b) && v.abs() > 1e-12 {
                            return Err(Error::Invalid(format!(
                                "metric couples the blocks: g[{a}][{b}] = {v:e}"
                            )));
                        }
                    }
                }
                let s = Tensor::from_fn(n, &[Slot::Down, Slot::Down], |i| {
                    let gij = ms.g.get(i);
                    if eps(i[0]) == eps(i[1]) {
                        gij.scaled(eps(i[0]))
                    } else {
                        gij.zero_like()
                    }
                });
                SquareRootStructure::from_root(s, ms)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{metric_at, MetricField};

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn minkowski() -> TensorValue {
        Tensor::from_fn(4, &[Slot::Down, Slot::Down], |i| match (i[0] == i[1], i[0]) {
            (false, _) => 0.0,
            (true, 0) => 1.0,
            _ => -1.0,
        })
    }

    #[test]
    fn sqrt2_dt_gives_identity_root() {
        let g = minkowski();
        let gi = invert(&g).unwrap();
        let omega = PForm::from_components(4, 1, vec![2f64.sqrt(), 0.0, 0.0, 0.0]).unwrap();
        let (t, dot) = superenergy(&omega, &g, &gi).unwrap();
        assert!((dot - 2.0).abs() < 1e-14);
        assert!(t.minus(&TensorValue::identity(4).set_slots(&[Slot::Down, Slot::Down])).max_abs() < 1e-14);
        let (s, _) = root_from_form_values(&omega.scaled(5.0), &g).unwrap();
        assert!(s.minus(&t).max_abs() < 1e-14);
    }

    #[test]
    fn check_root_examples() {
        let g = minkowski();
        let gi = invert(&g).unwrap();
        assert_eq!(check_square_root(&g, &g, &gi).unwrap(), 0.0);
        let id = TensorValue::identity(4).set_slots(&[Slot::Down, Slot::Down]);
        assert!(check_square_root(&id, &g, &gi).unwrap() < 1e-15);
        let mut bad = g.clone();
        *bad.get_mut(&[0, 0]) += 0.1;
        assert!(check_square_root(&bad, &g, &gi).unwrap() > 1e-2);
        let mut asym = id.clone();
        *asym.get_mut(&[0, 1]) = 0.5;
        assert!(matches!(check_square_root(&asym, &g, &gi), Err(Error::Asymmetric(_))));
    }

    #[test]
    fn projectors_of_identity_root() {
        let c = names(&["t", "x", "y", "z"]);
        let m = MetricField::diagonal(&c, &["1", "-1", "-1", "-1"]).unwrap();
        let ms = metric_at(&m, &ChartPoint::new(vec![0.1; 4]), 2).unwrap();
        let s = Tensor::from_fn(4, &[Slot::Down, Slot::Down], |i| {
            ms.g.get(i).constant_like(if i[0] == i[1] { 1.0 } else { 0.0 })
        });
        let sr = SquareRootStructure::from_root(s, &ms).unwrap();
        assert_eq!(sr.p, 1);
        assert_eq!(sr.p_low.get(&[0, 0]).value(), 1.0);
        assert_eq!(sr.pi_low.get(&[2, 2]).value(), -1.0);
        assert!(sr.projector_residual(&ms.g_inv.values()).unwrap() < 1e-15);
        let full = SquareRootStructure::from_root(ms.g.clone(), &ms).unwrap();
        assert_eq!(full.p, 4);
        let none = SquareRootStructure::from_root(ms.g.scaled(-1.0), &ms).unwrap();
        assert_eq!(none.p, 0);
    }

    #[test]
    fn euclidean_dx_dy_projects_onto_its_span() {
        let g = Tensor::from_fn(4, &[Slot::Down, Slot::Down], |i| if i[0] == i[1] { 1.0 } else { 0.0 });
        let omega = PForm::from_factors(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        let (s, _) = root_from_form_values(&omega, &g).unwrap();
        let p = g.plus(&s).scaled(0.5);
        for a in 0..4 {
            for b in 0..4 {
                let want = if a == b && a < 2 { 1.0 } else { 0.0 };
                assert!((p.get(&[a, b]) - want).abs() < 1e-14);
            }
        }
        assert!(round_trip_residual(&s, &g).unwrap() < 1e-12);
    }

    #[test]
    fn null_form_is_rejected() {
        let g = minkowski();
        let k = PForm::from_components(4, 1, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(root_from_form_values(&k, &g), Err(Error::NullForm(_))));
    }

    #[test]
    fn dependent_factors_are_rejected() {
        let g = minkowski();
        let gi = invert(&g).unwrap();
        assert!(check_gram(&[vec![1.0, 0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0, 0.0]], &gi).is_err());
    }

    #[test]
    fn block_root_from_hint() {
        let c = names(&["a", "b", "u"]);
        let m = MetricField::diagonal(&c, &["exp(u)", "1 + a^2", "2"]).unwrap();
        let ms = metric_at(&m, &ChartPoint::new(vec![0.1, 0.2, 0.3]), 2).unwrap();
        let sr = RootSource::Blocks { plus: vec![0, 1] }.structure_at(&ms).unwrap();
        assert_eq!(sr.p, 2);
        assert!(sr.root_residual < 1e-14);
    }
}
