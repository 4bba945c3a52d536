//! Bi-conformal symmetry: detection with gauge extraction, the gauge-free
//! wedge test, the generalized Kerr-Schild variant, the p-form condition,
//! bracket closure and finite transformations along the flow.
//!
//! `ξ` is bi-conformal for `S` when `£_ξP = φP` and `£_ξΠ = χΠ`, with gauges
//! `φ = α + β`, `χ = α − β`; equivalently `£_ξg = αg + βS`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ChartPoint, Expression, Jet};
use crate::geometry::{
    lie_derivative, metric_at, BracketField, MetricField, MetricStructure, SumField, VectorField,
};
use crate::report::{range, Tolerances, Verdict, Worst};
use crate::square_root::{RootSource, SimpleFormSpec, SquareRootStructure};
use crate::tensor::{inner_product_x, wedge3, Scalar, Slot, Tensor, TensorJet};

/// A metric together with its square root.
#[derive(Debug, Clone)]
pub struct Background {
    pub metric: MetricField,
    pub root: RootSource,
}

impl Background {
    pub fn new(metric: MetricField, root: RootSource) -> Self {
        Background { metric, root }
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    /// Metric and root structures at `x` with jets of order `order`.
    pub fn at(&self, x: &ChartPoint, order: usize) -> Result<(MetricStructure, SquareRootStructure)> {
        let ms = metric_at(&self.metric, x, order)?;
        let sr = self.root.structure_at(&ms)?;
        Ok((ms, sr))
    }
}

/// Gauges at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaugePair {
    pub alpha: f64,
    pub beta: f64,
}

impl GaugePair {
    pub fn from_phi_chi(phi: f64, chi: f64) -> Self {
        GaugePair {
            alpha: 0.5 * (phi + chi),
            beta: 0.5 * (phi - chi),
        }
    }

    pub fn phi(&self) -> f64 {
        self.alpha + self.beta
    }

    pub fn chi(&self) -> f64 {
        self.alpha - self.beta
    }
}

/// Gauges given as expressions.
#[derive(Debug, Clone)]
pub struct GaugeExprs {
    pub alpha: Expression,
    pub beta: Expression,
}

impl GaugeExprs {
    pub fn jets(&self, x: &ChartPoint, order: usize) -> Result<(Jet, Jet)> {
        Ok((
            self.alpha.evaluate_jet(x.coords(), order)?,
            self.beta.evaluate_jet(x.coords(), order)?,
        ))
    }

    /// `(φ, χ)` as jets.
    pub fn phi_chi(&self, x: &ChartPoint, order: usize) -> Result<(Jet, Jet)> {
        let (a, b) = self.jets(x, order)?;
        Ok((&a + &b, &a - &b))
    }

    pub fn values(&self, x: &ChartPoint) -> Result<GaugePair> {
        Ok(GaugePair {
            alpha: self.alpha.eval(x.coords())?,
            beta: self.beta.eval(x.coords())?,
        })
    }
}

/// Where gauge values come from in checks that need them.
#[derive(Debug, Clone)]
pub enum GaugeSource {
    /// Extracted from projector traces at each point.
    Extracted,
    Expressions(GaugeExprs),
}

fn full_contraction(a: &TensorJet, b: &TensorJet) -> Jet {
    let mut acc = a.data()[0].zero_like();
    for (x, y) in a.data().iter().zip(b.data()) {
        acc.fma_acc(x, y);
    }
    acc
}

/// Pointwise result of the bi-conformal test.
#[derive(Debug, Clone)]
pub struct BcvfAnalysis {
    pub lie_p: TensorJet,
    pub lie_pi: TensorJet,
    /// `φ = P^{ab}(£P)_ab / p`, as a jet one order below the metric.
    pub phi: Jet,
    /// `χ = Π^{ab}(£Π)_ab / (n − p)`.
    pub chi: Jet,
    /// `‖£P − φP‖ / ‖g‖`
    pub residual_p: f64,
    /// `‖£Π − χΠ‖ / ‖g‖`
    pub residual_pi: f64,
    /// `max(|£P^a_b|, |£Π^a_b|)`
    pub mixed: f64,
}

impl BcvfAnalysis {
    pub fn residual(&self) -> f64 {
        self.residual_p.max(self.residual_pi).max(self.mixed)
    }

    pub fn gauges(&self) -> GaugePair {
        GaugePair::from_phi_chi(self.phi.value(), self.chi.value())
    }
}

/// Bi-conformal test at one point; `xi` holds `ξ^a` jets.
pub fn bcvf_at(ms: &MetricStructure, sr: &SquareRootStructure, xi: &TensorJet) -> Result<BcvfAnalysis> {
    let (n, p) = (sr.n, sr.p);
    if p == 0 || p == n {
        return Err(Error::DegenerateProjector { p, n });
    }
    let lie_p = lie_derivative(&sr.p_low, xi)?;
    let lie_pi = lie_derivative(&sr.pi_low, xi)?;
    let phi = full_contraction(&sr.p_up, &lie_p).scale(1.0 / p as f64);
    let chi = full_contraction(&sr.pi_up, &lie_pi).scale(1.0 / (n - p) as f64);
    let gnorm = ms.g.max_abs();
    let residual_p = lie_p.minus(&sr.p_low.times_scalar(&phi)).max_abs() / gnorm;
    let residual_pi = lie_pi.minus(&sr.pi_low.times_scalar(&chi)).max_abs() / gnorm;
    let mixed = lie_derivative(&sr.p_mixed, xi)?
        .max_abs()
        .max(lie_derivative(&sr.pi_mixed, xi)?.max_abs());
    Ok(BcvfAnalysis {
        lie_p,
        lie_pi,
        phi,
        chi,
        residual_p,
        residual_pi,
        mixed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BcvfPoint {
    pub point: Vec<f64>,
    pub gauges: GaugePair,
    pub residual: f64,
    pub mixed: f64,
}

/// Detection over sample points.
#[derive(Debug, Clone, Serialize)]
pub struct SymmetryReport {
    pub verdict: Verdict,
    pub max_residual: f64,
    pub worst_point: Vec<f64>,
    pub points: Vec<BcvfPoint>,
    pub alpha_range: Option<(f64, f64)>,
    pub beta_range: Option<(f64, f64)>,
}

impl SymmetryReport {
    fn assemble(points: Vec<BcvfPoint>, tol: &Tolerances) -> Self {
        let mut worst = Worst::default();
        for p in &points {
            worst.update(p.residual, &ChartPoint::new(p.point.clone()));
        }
        SymmetryReport {
            verdict: tol.classify(worst.residual),
            max_residual: worst.residual,
            worst_point: worst.point,
            alpha_range: range(points.iter().map(|p| p.gauges.alpha)),
            beta_range: range(points.iter().map(|p| p.gauges.beta)),
            points,
        }
    }

    pub fn worst(&self) -> Worst {
        Worst {
            residual: self.max_residual,
            point: self.worst_point.clone(),
            count: self.points.len(),
        }
    }
}

/// Runs [`bcvf_at`] at every point (in parallel, results in input order).
pub fn detect_bcvf(
    bg: &Background,
    xi: &dyn VectorField,
    points: &[ChartPoint],
    order: usize,
    tol: &Tolerances,
) -> Result<SymmetryReport> {
    let order = order.max(1);
    let rows = points
        .par_iter()
        .map(|x| {
            let (ms, sr) = bg.at(x, order)?;
            let a = bcvf_at(&ms, &sr, &xi.jets(x, order)?)?;
            Ok(BcvfPoint {
                point: x.coords().to_vec(),
                gauges: a.gauges(),
                residual: a.residual(),
                mixed: a.mixed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SymmetryReport::assemble(rows, tol))
}

/// `‖£_ξg − (tr/n) g‖ / ‖g‖`: distance from being conformal Killing.
pub fn conformal_killing_residual(ms: &MetricStructure, xi: &TensorJet) -> Result<f64> {
    let h = lie_derivative(&ms.g, xi)?;
    let n = ms.dim();
    let tr = full_contraction(&ms.g_inv, &h).scale(1.0 / n as f64);
    Ok(h.minus(&ms.g.times_scalar(&tr)).max_abs() / ms.g.max_abs())
}

/// Normalized magnitudes of `(£g × £g) ∧ £g ∧ g` and `(££g) ∧ £g ∧ g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WedgeResiduals {
    pub first: f64,
    pub second: f64,
}

impl WedgeResiduals {
    pub fn max(&self) -> f64 {
        self.first.max(self.second)
    }
}

/// Gauge-free test at one point; needs metric and `ξ` jets of order ≥ 2.
pub fn gauge_free_at(ms: &MetricStructure, xi: &TensorJet) -> Result<WedgeResiduals> {
    let h = lie_derivative(&ms.g, xi)?;
    let hh = lie_derivative(&h, xi)?.values();
    let h = h.values();
    let g = ms.g.values();
    if h.norm() <= 1e-12 * g.norm() {
        // Killing: every wedge with £g vanishes
        return Ok(WedgeResiduals {
            first: 0.0,
            second: 0.0,
        });
    }
    let hxh = inner_product_x(&h, &h, &ms.g_inv.values())?;
    Ok(WedgeResiduals {
        first: wedge3(&hxh, &h, &g)?.normalized,
        second: wedge3(&hh, &h, &g)?.normalized,
    })
}

pub fn gauge_free_test(
    metric: &MetricField,
    xi: &dyn VectorField,
    points: &[ChartPoint],
    order: usize,
) -> Result<(Worst, Worst)> {
    let order = order.max(2);
    let rows = points
        .par_iter()
        .map(|x| {
            let ms = metric_at(metric, x, order)?;
            gauge_free_at(&ms, &xi.jets(x, order)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let first = Worst::from_iter(rows.iter().zip(points).map(|(r, p)| (r.first, p)));
    let second = Worst::from_iter(rows.iter().zip(points).map(|(r, p)| (r.second, p)));
    Ok((first, second))
}

/// Pointwise generalized Kerr-Schild analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KerrSchildPoint {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `‖£k − γk‖ / max(1, ‖k‖)`
    pub residual_k: f64,
    /// `‖£g − αg − βk⊗k‖ / ‖g‖`
    pub residual_g: f64,
}

impl KerrSchildPoint {
    pub fn residual(&self) -> f64 {
        self.residual_k.max(self.residual_g)
    }
}

/// `£_ξg = αg + βk⊗k`, `£_ξk = γk` for a null covector `k` (jets, order ≥ 1).
pub fn kerr_schild_at(ms: &MetricStructure, xi: &TensorJet, k: &TensorJet) -> Result<KerrSchildPoint> {
    let n = ms.dim();
    let kv: Vec<f64> = (0..n).map(|a| k.get(&[a]).value()).collect();
    let gi = ms.g_inv.values();
    let kk: f64 = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .map(|(a, b)| kv[a] * gi.get(&[a, b]) * kv[b])
        .sum();
    let kscale = kv.iter().map(|v| v * v).sum::<f64>();
    if kk.abs() > 1e-10 * kscale.max(1.0) {
        return Err(Error::NotNull(kk));
    }
    let lk = lie_derivative(k, xi)?.values();
    let gamma = (0..n).map(|a| lk.get(&[a]) * kv[a]).sum::<f64>() / kscale;
    let knorm = kv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let residual_k = (0..n)
        .map(|a| (lk.get(&[a]) - gamma * kv[a]).abs())
        .fold(0.0, f64::max)
        / knorm.max(1.0);
    let h = lie_derivative(&ms.g, xi)?.values();
    let g = ms.g.values();
    // k⊗k is trace-free against g for null k
    let alpha = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .map(|(a, b)| gi.get(&[a, b]) * h.get(&[a, b]))
        .sum::<f64>()
        / n as f64;
    let m = (0..n).max_by(|&a, &b| kv[a].abs().total_cmp(&kv[b].abs())).unwrap_or(0);
    let beta = (h.get(&[m, m]) - alpha * g.get(&[m, m])) / (kv[m] * kv[m]);
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let r = h.get(&[a, b]) - alpha * g.get(&[a, b]) - beta * kv[a] * kv[b];
            worst = worst.max(r.abs());
        }
    }
    Ok(KerrSchildPoint {
        alpha,
        beta,
        gamma,
        residual_k,
        residual_g: worst / g.max_abs(),
    })
}

/// Covector field from expressions as jets.
pub fn covector_jets(k: &[Expression], x: &ChartPoint, order: usize) -> Result<TensorJet> {
    let comps = k
        .iter()
        .map(|e| e.evaluate_jet(x.coords(), order))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_vec(k.len(), &[Slot::Down], comps)
}

pub fn detect_kerr_schild(
    metric: &MetricField,
    xi: &dyn VectorField,
    k: &[Expression],
    points: &[ChartPoint],
    order: usize,
) -> Result<Vec<KerrSchildPoint>> {
    let order = order.max(1);
    points
        .par_iter()
        .map(|x| {
            let ms = metric_at(metric, x, order)?;
            kerr_schild_at(&ms, &xi.jets(x, order)?, &covector_jets(k, x, order)?)
        })
        .collect()
}

/// Normalizes `Ω` as a jet form so that `|Ω·Ω| = 2p!`.
pub fn normalize_form_jets(
    omega: &crate::tensor::PForm<Jet>,
    g_inv: &TensorJet,
) -> Result<crate::tensor::PForm<Jet>> {
    let p = omega.degree();
    let dot = crate::tensor::form_dot(omega, omega, g_inv)?;
    let fact: f64 = (1..=p).map(|i| i as f64).product();
    if dot.value().abs() <= 1e-10 * omega.norm().powi(2) * fact {
        return Err(Error::NullForm(dot.value()));
    }
    let lambda = dot.scale(dot.value().signum() / (2.0 * fact)).powf(-0.5);
    Ok(omega.times_scalar(&lambda))
}

/// `max |£_ξΩ − (p/2) φ Ω| / max(1, ‖Ω‖)` for the normalized form.
pub fn pform_at(ms: &MetricStructure, omega: &crate::tensor::PForm<Jet>, xi: &TensorJet, phi: f64) -> Result<f64> {
    let p = omega.degree();
    let norm = normalize_form_jets(omega, &ms.g_inv)?;
    let dense = norm.to_dense();
    let lie = lie_derivative(&dense, xi)?.values();
    let rhs = dense.values().scaled(0.5 * p as f64 * phi);
    Ok(lie.minus(&rhs).max_abs() / dense.max_abs().max(1.0))
}

pub fn pform_condition(
    metric: &MetricField,
    spec: &SimpleFormSpec,
    xi: &dyn VectorField,
    gauges: &GaugeSource,
    points: &[ChartPoint],
    order: usize,
) -> Result<Worst> {
    let order = order.max(1);
    let bg = Background::new(metric.clone(), RootSource::Form(spec.clone()));
    let rows = points
        .par_iter()
        .map(|x| {
            let (ms, sr) = bg.at(x, order)?;
            let xj = xi.jets(x, order)?;
            let phi = match gauges {
                GaugeSource::Extracted => bcvf_at(&ms, &sr, &xj)?.phi.value(),
                GaugeSource::Expressions(e) => e.values(x)?.phi(),
            };
            pform_at(&ms, &spec.jets(&ms, order)?, &xj, phi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Worst::from_iter(rows.into_iter().zip(points)))
}

/// Bracket detection and the gauge composition formulas.
#[derive(Debug, Clone, Serialize)]
pub struct BracketReport {
    pub detect: SymmetryReport,
    /// `max |α_[ξ₁,ξ₂] − (ξ₁(α₂) − ξ₂(α₁))|`
    pub alpha_residual: f64,
    pub beta_residual: f64,
}

impl BracketReport {
    pub fn max_residual(&self) -> f64 {
        self.detect
            .max_residual
            .max(self.alpha_residual)
            .max(self.beta_residual)
    }
}

fn directional(xi: &TensorJet, f: &Jet) -> f64 {
    (0..xi.dim())
        .map(|c| xi.get(&[c]).value() * f.partial(&[c]).unwrap_or(f64::NAN))
        .sum()
}

#[allow(clippy::too_many_arguments)]
pub fn bracket_gauges(
    bg: &Background,
    xi1: Arc<dyn VectorField>,
    g1: &GaugeExprs,
    xi2: Arc<dyn VectorField>,
    g2: &GaugeExprs,
    points: &[ChartPoint],
    order: usize,
    tol: &Tolerances,
) -> Result<BracketReport> {
    let order = order.max(1);
    let bracket = BracketField(Arc::clone(&xi1), Arc::clone(&xi2));
    let rows = points
        .par_iter()
        .map(|x| {
            let (ms, sr) = bg.at(x, order)?;
            let a = bcvf_at(&ms, &sr, &bracket.jets(x, order)?)?;
            let (v1, v2) = (xi1.jets(x, 1)?, xi2.jets(x, 1)?);
            let (a1, b1) = g1.jets(x, 1)?;
            let (a2, b2) = g2.jets(x, 1)?;
            let want_a = directional(&v1, &a2) - directional(&v2, &a1);
            let want_b = directional(&v1, &b2) - directional(&v2, &b1);
            let got = a.gauges();
            Ok((
                BcvfPoint {
                    point: x.coords().to_vec(),
                    gauges: got,
                    residual: a.residual(),
                    mixed: a.mixed,
                },
                (got.alpha - want_a).abs(),
                (got.beta - want_b).abs(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let alpha_residual = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let beta_residual = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let detect = SymmetryReport::assemble(rows.into_iter().map(|r| r.0).collect(), tol);
    Ok(BracketReport {
        detect,
        alpha_residual,
        beta_residual,
    })
}

/// `max |gauges(ξ₁+ξ₂) − gauges(ξ₁) − gauges(ξ₂)|` and the sum's residual.
pub fn linearity_residual(
    bg: &Background,
    xi1: Arc<dyn VectorField>,
    xi2: Arc<dyn VectorField>,
    points: &[ChartPoint],
    order: usize,
) -> Result<(f64, f64)> {
    let sum = SumField(Arc::clone(&xi1), Arc::clone(&xi2));
    let rows = points
        .par_iter()
        .map(|x| {
            let (ms, sr) = bg.at(x, order)?;
            let s = bcvf_at(&ms, &sr, &sum.jets(x, order)?)?;
            let a = bcvf_at(&ms, &sr, &xi1.jets(x, order)?)?.gauges();
            let b = bcvf_at(&ms, &sr, &xi2.jets(x, order)?)?.gauges();
            let g = s.gauges();
            let d = (g.alpha - a.alpha - b.alpha)
                .abs()
                .max((g.beta - a.beta - b.beta).abs());
            Ok((d, s.residual()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        rows.iter().map(|r| r.0).fold(0.0, f64::max),
        rows.iter().map(|r| r.1).fold(0.0, f64::max),
    ))
}

/// Axis-aligned box the flow must stay in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainBox {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
}

impl DomainBox {
    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter()
            .zip(&self.center)
            .zip(&self.half_widths)
            .all(|((v, c), h)| (v - c).abs() <= *h)
    }
}

/// End state of an integrated flow.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub end: Vec<f64>,
    /// `J^a_b = ∂y^a/∂x^b`
    pub jacobian: DMatrix<f64>,
    pub int_alpha: f64,
    pub int_beta: f64,
}

/// Default number of RK4 steps for flow time `s`.
pub fn default_steps(s: f64) -> usize {
    ((200.0 * s.abs()).ceil() as usize).max(1)
}

type GaugeFn<'a> = dyn Fn(&ChartPoint) -> Result<GaugePair> + Sync + 'a;

/// Fixed-step RK4 for `(y, J, ∫α, ∫β)`; the Jacobian follows the
/// variational equation `dJ/dt = Dξ(y) J`.
pub fn integrate_flow(
    xi: &dyn VectorField,
    x0: &ChartPoint,
    s: f64,
    steps: usize,
    gauges: &GaugeFn<'_>,
    domain: Option<&DomainBox>,
) -> Result<FlowState> {
    let n = x0.dim();
    let steps = steps.max(1);
    let h = s / steps as f64;
    let len = n + n * n + 2;
    let mut state = vec![0.0; len];
    state[..n].copy_from_slice(x0.coords());
    for a in 0..n {
        state[n + a * n + a] = 1.0;
    }
    let rhs = |st: &[f64]| -> Result<Vec<f64>> {
        let y = ChartPoint::new(st[..n].to_vec());
        let j = xi.jets(&y, 1)?;
        let mut out = vec![0.0; len];
        for a in 0..n {
            out[a] = j.get(&[a]).value();
            for b in 0..n {
                let mut v = 0.0;
                for c in 0..n {
                    // ∂_c ξ^a · J^c_b
                    v += j.get(&[a]).partial(&[c]).unwrap_or(0.0) * st[n + c * n + b];
                }
                out[n + a * n + b] = v;
            }
        }
        let gp = gauges(&y)?;
        out[len - 2] = gp.alpha;
        out[len - 1] = gp.beta;
        Ok(out)
    };
    let axpy = |a: &[f64], k: &[f64], f: f64| -> Vec<f64> {
        a.iter().zip(k).map(|(x, y)| x + f * y).collect()
    };
    for step in 0..steps {
        let k1 = rhs(&state)?;
        let k2 = rhs(&axpy(&state, &k1, 0.5 * h))?;
        let k3 = rhs(&axpy(&state, &k2, 0.5 * h))?;
        let k4 = rhs(&axpy(&state, &k3, h))?;
        for i in 0..len {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(d) = domain {
            if !d.contains(&state[..n]) {
                return Err(Error::FlowExit {
                    s: h * (step + 1) as f64,
                    point: state[..n].to_vec(),
                });
            }
        }
    }
    Ok(FlowState {
        end: state[..n].to_vec(),
        jacobian: DMatrix::from_fn(n, n, |a, b| state[n + a * n + b]),
        int_alpha: state[len - 2],
        int_beta: state[len - 1],
    })
}

/// Flow pullback against the exponential-integral closed form.
#[derive(Debug, Clone, Serialize)]
pub struct FlowReport {
    pub s: f64,
    pub steps: usize,
    pub end: Vec<f64>,
    pub int_alpha: f64,
    pub int_beta: f64,
    /// `‖φ*(g+S) − (g+S) e^{∫(α+β)}‖ / ‖(g+S) e^{∫(α+β)}‖`
    pub residual_plus: f64,
    /// Same with `g − S` and `α − β`.
    pub residual_minus: f64,
}

impl FlowReport {
    pub fn residual(&self) -> f64 {
        self.residual_plus.max(self.residual_minus)
    }
}

pub fn flow_pullback_check(
    bg: &Background,
    xi: &dyn VectorField,
    gauges: &GaugeSource,
    x0: &ChartPoint,
    s: f64,
    steps: Option<usize>,
    domain: Option<&DomainBox>,
) -> Result<FlowReport> {
    let steps = steps.unwrap_or_else(|| default_steps(s));
    let gauge_fn = |y: &ChartPoint| -> Result<GaugePair> {
        match gauges {
            GaugeSource::Expressions(e) => e.values(y),
            GaugeSource::Extracted => {
                let (ms, sr) = bg.at(y, 1)?;
                Ok(bcvf_at(&ms, &sr, &xi.jets(y, 1)?)?.gauges())
            }
        }
    };
    let st = integrate_flow(xi, x0, s, steps, &gauge_fn, domain)?;
    let (ms0, sr0) = bg.at(x0, 1)?;
    let (ms1, sr1) = bg.at(&ChartPoint::new(st.end.clone()), 1)?;
    let n = bg.dim();
    let pull = |t: &Tensor<Jet>| -> DMatrix<f64> {
        let m = t.values().to_matrix();
        st.jacobian.transpose() * m * &st.jacobian
    };
    let plus0 = ms0.g.plus(&sr0.s).values().to_matrix();
    let minus0 = ms0.g.minus(&sr0.s).values().to_matrix();
    let plus1 = pull(&ms1.g.plus(&sr1.s));
    let minus1 = pull(&ms1.g.minus(&sr1.s));
    let rel = |got: &DMatrix<f64>, want: DMatrix<f64>| -> f64 {
        let scale = want.amax().max(f64::MIN_POSITIVE);
        (got - want).amax() / scale
    };
    let e_plus = (st.int_alpha + st.int_beta).exp();
    let e_minus = (st.int_alpha - st.int_beta).exp();
    debug_assert_eq!(plus0.nrows(), n);
    Ok(FlowReport {
        s,
        steps,
        end: st.end.clone(),
        int_alpha: st.int_alpha,
        int_beta: st.int_beta,
        residual_plus: rel(&plus1, plus0 * e_plus),
        residual_minus: rel(&minus1, minus0 * e_minus),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VectorFieldSpec;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn rw() -> (Vec<String>, Background) {
        let c = names(&["t", "x", "y", "z"]);
        let a2 = "-exp(2*t)";
        let m = MetricField::diagonal(&c, &["1", a2, a2, a2]).unwrap();
        let root = RootSource::Form(SimpleFormSpec::from_strings(&c, &[vec!["1", "0", "0", "0"]]).unwrap());
        (c, Background::new(m, root))
    }

    #[test]
    fn expanding_congruence_gauges() {
        let (c, bg) = rw();
        let xi = VectorFieldSpec::from_strings(&c, &["1", "0", "0", "0"]).unwrap();
        let pts = vec![ChartPoint::new(vec![0.1, 0.2, 0.3, 0.4]), ChartPoint::new(vec![-0.3, 0.0, 0.5, -0.2])];
        let r = detect_bcvf(&bg, &xi, &pts, 2, &Tolerances::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        for p in &r.points {
            assert!((p.gauges.alpha - 1.0).abs() < 1e-12);
            assert!((p.gauges.beta + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_symmetric_field_fails() {
        let c = names(&["t", "x", "y", "z"]);
        let m = MetricField::diagonal(&c, &["1", "-1", "-1", "-1"]).unwrap();
        let root = RootSource::Form(SimpleFormSpec::from_strings(&c, &[vec!["1", "0", "0", "0"]]).unwrap());
        let bg = Background::new(m, root);
        let xi = VectorFieldSpec::from_strings(&c, &["x^2", "0", "0", "0"]).unwrap();
        let pts = vec![ChartPoint::new(vec![0.1, 0.3, 0.2, 0.1])];
        let r = detect_bcvf(&bg, &xi, &pts, 2, &Tolerances::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.max_residual > 1e-2);
    }

    #[test]
    fn p_equal_n_is_degenerate() {
        let c = names(&["x", "y"]);
        let m = MetricField::diagonal(&c, &["1", "1"]).unwrap();
        let ms = metric_at(&m, &ChartPoint::new(vec![0.1, 0.2]), 2).unwrap();
        let sr = SquareRootStructure::from_root(ms.g.clone(), &ms).unwrap();
        let xi = VectorFieldSpec::from_strings(&c, &["1", "0"]).unwrap();
        let err = bcvf_at(&ms, &sr, &xi.jets(&ms.point, 2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::DegenerateProjector { p: 2, n: 2 }));
    }

    #[test]
    fn wedge_test_on_dilation_and_generic_field() {
        let c = names(&["t", "x", "y"]);
        let flat = MetricField::diagonal(&c, &["1", "-1", "-1"]).unwrap();
        let dil = VectorFieldSpec::from_strings(&c, &["t", "x", "y"]).unwrap();
        let p = vec![ChartPoint::new(vec![0.2, 0.1, 0.3])];
        let (a, b) = gauge_free_test(&flat, &dil, &p, 2).unwrap();
        assert!(a.residual < 1e-12 && b.residual < 1e-12);
        let curved = MetricField::diagonal(&c, &["1 + x^2", "-exp(t)", "-(1 + y^2)"]).unwrap();
        let generic = VectorFieldSpec::from_strings(&c, &["x*y", "t^2 + y", "sin(x)"]).unwrap();
        let (a, b) = gauge_free_test(&curved, &generic, &p, 2).unwrap();
        assert!(a.residual.max(b.residual) > 1e-3);
    }

    #[test]
    fn kerr_schild_on_flat_space() {
        let c = names(&["t", "x", "y", "z"]);
        let m = MetricField::diagonal(&c, &["1", "-1", "-1", "-1"]).unwrap();
        let k: Vec<Expression> = ["1", "-1", "0", "0"]
            .iter()
            .map(|s| crate::field::parse(s, &c).unwrap())
            .collect();
        let p = vec![ChartPoint::new(vec![0.1, 0.2, 0.3, 0.4])];
        let trans = VectorFieldSpec::from_strings(&c, &["1", "0", "0", "0"]).unwrap();
        let r = detect_kerr_schild(&m, &trans, &k, &p, 2).unwrap()[0];
        assert!(r.alpha.abs() < 1e-14 && r.beta.abs() < 1e-14 && r.gamma.abs() < 1e-14);
        let dil = VectorFieldSpec::from_strings(&c, &["t", "x", "y", "z"]).unwrap();
        let r = detect_kerr_schild(&m, &dil, &k, &p, 2).unwrap()[0];
        assert!((r.alpha - 2.0).abs() < 1e-14 && r.beta.abs() < 1e-14);
        assert!(r.residual() < 1e-14);
        let dt: Vec<Expression> = ["1", "0", "0", "0"]
            .iter()
            .map(|s| crate::field::parse(s, &c).unwrap())
            .collect();
        assert!(matches!(detect_kerr_schild(&m, &trans, &dt, &p, 2), Err(Error::NotNull(_))));
    }

    #[test]
    fn pform_condition_on_expanding_congruence() {
        let (c, bg) = rw();
        let spec = SimpleFormSpec::from_strings(&c, &[vec!["1", "0", "0", "0"]]).unwrap();
        let xi = VectorFieldSpec::from_strings(&c, &["1", "0", "0", "0"]).unwrap();
        let p = vec![ChartPoint::new(vec![0.3, 0.1, 0.2, 0.0])];
        let w = pform_condition(&bg.metric, &spec, &xi, &GaugeSource::Extracted, &p, 2).unwrap();
        assert!(w.residual < 1e-12);
    }

    #[test]
    fn dilation_flow_on_flat_plane() {
        let c = names(&["x", "y", "u"]);
        let m = MetricField::diagonal(&c, &["1", "1", "1"]).unwrap();
        let bg = Background::new(m, RootSource::Blocks { plus: vec![0, 1] });
        let xi = VectorFieldSpec::from_strings(&c, &["x", "y", "0"]).unwrap();
        let x0 = ChartPoint::new(vec![0.3, 0.2, 0.1]);
        let r = flow_pullback_check(&bg, &xi, &GaugeSource::Extracted, &x0, 0.5, None, None).unwrap();
        assert!((r.int_alpha + r.int_beta - 1.0).abs() < 1e-8);
        assert!((r.end[0] - 0.3 * 0.5f64.exp()).abs() < 1e-9);
        assert!(r.residual() < 1e-8, "{r:?}");
    }

    #[test]
    fn flow_composes_and_stays_in_box() {
        let c = names(&["x", "y"]);
        let xi = VectorFieldSpec::from_strings(&c, &["-y", "x"]).unwrap();
        let zero = |_: &ChartPoint| Ok(GaugePair { alpha: 0.0, beta: 0.0 });
        let x0 = ChartPoint::new(vec![0.5, 0.0]);
        let a = integrate_flow(&xi, &x0, 0.7, 140, &zero, None).unwrap();
        let mid = integrate_flow(&xi, &x0, 0.3, 60, &zero, None).unwrap();
        let b = integrate_flow(&xi, &ChartPoint::new(mid.end), 0.4, 80, &zero, None).unwrap();
        assert!((a.end[0] - b.end[0]).abs() < 1e-10 && (a.end[1] - b.end[1]).abs() < 1e-10);
        let tiny = DomainBox {
            center: vec![0.5, 0.0],
            half_widths: vec![0.01, 0.01],
        };
        assert!(matches!(
            integrate_flow(&xi, &x0, 1.0, 200, &zero, Some(&tiny)),
            Err(Error::FlowExit { .. })
        ));
    }
}
