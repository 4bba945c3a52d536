//! Metric structure at chart points: inverse, determinant, Christoffel
//! symbols, curvature, covariant and Lie derivatives.
//!
//! Every quantity is a tensor of jets, so derivatives of derived objects are
//! exact to rounding. Each derivative consumes one jet order.
//!
//! Index layout: `gamma[a, b, c] = Γ^a_bc`, `riemann[d, c, a, b] = R^d_cab`
//! with `R^d_cab = ∂_aΓ^d_bc − ∂_bΓ^d_ac + Γ^d_aeΓ^e_bc − Γ^d_beΓ^e_ac`, which
//! gives `∇_a∇_b u_c − ∇_b∇_a u_c = u_d R^d_cba`. Covariant derivatives put
//! the new index first.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{parse, ChartPoint, Coordinates, Expression, Jet};
use crate::tensor::{Scalar, Slot, Tensor, TensorJet, TensorValue};

/// Below this `|det g|` the metric counts as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

/// Symmetric matrix of component expressions.
#[derive(Debug, Clone)]
pub struct MetricField {
    coords: Coordinates,
    // upper triangle, row-major
    upper: Vec<Expression>,
}

fn tri_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

impl MetricField {
    /// From a full matrix; the lower triangle must agree with the upper one
    /// (compared after printing, so formatting differences are tolerated).
    pub fn from_matrix(coords: Coordinates, m: Vec<Vec<Expression>>) -> Result<Self> {
        let n = coords.len();
        if m.len() != n || m.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: m.len(),
            });
        }
        let mut upper = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                if m[i][j].to_string() != m[j][i].to_string() {
                    return Err(Error::Invalid(format!(
                        "metric component ({i},{j}) = '{}' differs from ({j},{i}) = '{}'",
                        m[i][j], m[j][i]
                    )));
                }
                upper.push(m[i][j].clone());
            }
        }
        Ok(MetricField { coords, upper })
    }

    pub fn from_strings(coords: &[String], m: &[Vec<String>]) -> Result<Self> {
        let coords: Coordinates = Arc::new(coords.to_vec());
        let parsed = m
            .iter()
            .map(|row| row.iter().map(|s| parse(s, &coords)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        MetricField::from_matrix(coords, parsed)
    }

    /// Diagonal metric from component strings.
    pub fn diagonal(coords: &[String], diag: &[&str]) -> Result<Self> {
        let n = coords.len();
        let m: Vec<Vec<String>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { diag[i].to_string() } else { "0".to_string() })
                    .collect()
            })
            .collect();
        MetricField::from_strings(coords, &m)
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coordinates(&self) -> &Coordinates {
        &self.coords
    }

    pub fn component(&self, i: usize, j: usize) -> &Expression {
        &self.upper[tri_index(self.dim(), i, j)]
    }

    /// `g_ab` as jets of the given order.
    pub fn jets(&self, x: &ChartPoint, order: usize) -> Result<TensorJet> {
        let n = self.dim();
        x.check_dim(n)?;
        let tri = self
            .upper
            .iter()
            .map(|e| e.evaluate_jet(x.coords(), order))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::from_fn(n, &[Slot::Down, Slot::Down], |i| {
            tri[tri_index(n, i[0], i[1])].clone()
        }))
    }

    pub fn values(&self, x: &ChartPoint) -> Result<TensorValue> {
        Ok(self.jets(x, 0)?.values())
    }
}

/// Counts of positive and negative eigenvalues of `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signature {
    pub positive: usize,
    pub negative: usize,
}

pub fn signature_of(g: &TensorValue) -> Signature {
    let eig = SymmetricEigen::new(g.to_matrix());
    let positive = eig.eigenvalues.iter().filter(|v| **v > 1e-10).count();
    let negative = eig.eigenvalues.iter().filter(|v| **v < -1e-10).count();
    Signature { positive, negative }
}

/// Metric, inverse, determinant, connection and curvature at one point.
#[derive(Debug, Clone)]
pub struct MetricStructure {
    pub point: ChartPoint,
    /// Jet order of `g`, `g_inv` and `det`.
    pub order: usize,
    pub g: TensorJet,
    pub g_inv: TensorJet,
    pub det: Jet,
    /// Order `order − 1`.
    pub gamma: TensorJet,
    /// Order `order − 2`; absent when `order < 2`.
    pub riemann: Option<TensorJet>,
    pub signature: Signature,
}

/// Gauss–Jordan inverse with partial pivoting on the values.
fn invert_jets(m: &TensorJet) -> Option<(TensorJet, Jet)> {
    let n = m.dim();
    let mut a: Vec<Vec<Jet>> = (0..n)
        .map(|i| (0..n).map(|j| m.get(&[i, j]).clone()).collect())
        .collect();
    let zero = a[0][0].zero_like();
    let one = zero.constant_like(1.0);
    let mut inv: Vec<Vec<Jet>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { one.clone() } else { zero.clone() }).collect())
        .collect();
    let mut det = one.clone();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| {
            a[r][col].value().abs().total_cmp(&a[s][col].value().abs())
        })?;
        if a[piv][col].value() == 0.0 {
            return None;
        }
        if piv != col {
            a.swap(piv, col);
            inv.swap(piv, col);
            det = det.scale(-1.0);
        }
        det = det.mul_jet(&a[col][col]);
        let r = a[col][col].recip();
        for j in 0..n {
            a[col][j] = a[col][j].mul_jet(&r);
            inv[col][j] = inv[col][j].mul_jet(&r);
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col].clone();
            if f.coeffs().iter().all(|c| *c == 0.0) {
                continue;
            }
            for j in 0..n {
                let (pa, pi) = (a[col][j].clone(), inv[col][j].clone());
                a[row][j].add_scaled_mul_assign(&f, &pa, -1.0);
                inv[row][j].add_scaled_mul_assign(&f, &pi, -1.0);
            }
        }
    }
    let t = Tensor::from_fn(n, &[Slot::Up, Slot::Up], |i| inv[i[0]][i[1]].clone());
    Some((t, det))
}

/// `∂_c T`, new index first.
pub fn partial_derivative(t: &TensorJet) -> Result<TensorJet> {
    let order = t.order();
    if order == 0 {
        return Err(Error::InsufficientOrder {
            needed: 1,
            available: 0,
        });
    }
    let n = t.dim();
    let parts: Vec<TensorJet> = (0..n).map(|c| t.map(|x| x.derivative(c))).collect();
    let mut slots = vec![Slot::Down];
    slots.extend_from_slice(t.slots());
    Ok(Tensor::from_fn(n, &slots, |idx| parts[idx[0]].get(&idx[1..]).clone()))
}

fn christoffel(g: &TensorJet, g_inv: &TensorJet) -> TensorJet {
    let n = g.dim();
    let dg = partial_derivative(g).expect("order checked by caller");
    // first kind: Γ_dbc = ½(∂_b g_dc + ∂_c g_db − ∂_d g_bc)
    let first = Tensor::from_fn(n, &[Slot::Down; 3], |i| {
        let (d, b, c) = (i[0], i[1], i[2]);
        dg.get(&[b, d, c])
            .plus(dg.get(&[c, d, b]))
            .minus(dg.get(&[d, b, c]))
            .scaled(0.5)
    });
    first.raise(0, g_inv)
}

fn riemann_from(gamma: &TensorJet) -> TensorJet {
    let n = gamma.dim();
    let dgam = partial_derivative(gamma).expect("order checked by caller");
    Tensor::from_fn(n, &[Slot::Up, Slot::Down, Slot::Down, Slot::Down], |i| {
        let (d, c, a, b) = (i[0], i[1], i[2], i[3]);
        let mut r = dgam.get(&[a, d, b, c]).minus(dgam.get(&[b, d, a, c]));
        for e in 0..n {
            r.fma_acc(gamma.get(&[d, a, e]), gamma.get(&[e, b, c]));
            r.fma_acc_scaled(gamma.get(&[d, b, e]), gamma.get(&[e, a, c]), -1.0);
        }
        r
    })
}

impl MetricStructure {
    /// Builds the structure from metric jets of order `g.order()`.
    pub fn from_jets(point: ChartPoint, g: TensorJet) -> Result<Self> {
        let order = g.order();
        if order < 1 {
            return Err(Error::InsufficientOrder {
                needed: 1,
                available: order,
            });
        }
        let values = g.values();
        let det_value = values.to_matrix().determinant();
        if det_value.abs() < DEGENERACY_THRESHOLD {
            return Err(Error::DegenerateMetric {
                point: point.0.clone(),
                det: det_value,
            });
        }
        let (g_inv, det) = invert_jets(&g).ok_or_else(|| Error::DegenerateMetric {
            point: point.0.clone(),
            det: det_value,
        })?;
        let gamma = christoffel(&g, &g_inv);
        let riemann = (order >= 2).then(|| riemann_from(&gamma));
        let signature = signature_of(&values);
        Ok(MetricStructure {
            point,
            order,
            g,
            g_inv,
            det,
            gamma,
            riemann,
            signature,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    pub fn riemann(&self) -> Result<&TensorJet> {
        self.riemann.as_ref().ok_or(Error::InsufficientOrder {
            needed: 2,
            available: self.order,
        })
    }

    /// `∇T`, derivative index first.
    pub fn covariant_derivative(&self, t: &TensorJet) -> Result<TensorJet> {
        covariant_derivative(t, &self.gamma)
    }

    /// `R_dcab` (first index lowered).
    pub fn riemann_lowered(&self) -> Result<TensorJet> {
        Ok(self.riemann()?.lower(0, &self.g))
    }

    /// Lowers `ξ^a` to `ξ_a`.
    pub fn lower_vector(&self, xi: &TensorJet) -> TensorJet {
        xi.lower(0, &self.g)
    }
}

/// Metric structure at `x` with metric jets of order `order`.
pub fn metric_at(m: &MetricField, x: &ChartPoint, order: usize) -> Result<MetricStructure> {
    let g = m.jets(x, order)?;
    MetricStructure::from_jets(x.clone(), g)
}

/// `∇_c T` with one Christoffel correction per slot.
pub fn covariant_derivative(t: &TensorJet, gamma: &TensorJet) -> Result<TensorJet> {
    let dt = partial_derivative(t)?;
    let n = t.dim();
    let slots = dt.slots().to_vec();
    let kinds = t.slots().to_vec();
    let mut src = vec![0; t.rank()];
    Ok(Tensor::from_fn(n, &slots, |idx| {
        let c = idx[0];
        let rest = &idx[1..];
        let mut acc = dt.get(idx).clone();
        for (s, kind) in kinds.iter().enumerate() {
            src.copy_from_slice(rest);
            for e in 0..n {
                src[s] = e;
                match kind {
                    Slot::Up => acc.fma_acc(gamma.get(&[rest[s], c, e]), t.get(&src)),
                    Slot::Down => acc.fma_acc_scaled(gamma.get(&[e, c, rest[s]]), t.get(&src), -1.0),
                }
            }
        }
        acc
    }))
}

/// `£_ξ T` for any valence; `xi` holds the components `ξ^a` as jets.
pub fn lie_derivative(t: &TensorJet, xi: &TensorJet) -> Result<TensorJet> {
    let dt = partial_derivative(t)?;
    let dxi = partial_derivative(xi)?; // dxi[c, a] = ∂_c ξ^a
    let n = t.dim();
    let kinds = t.slots().to_vec();
    let mut src = vec![0; t.rank()];
    let mut dix = vec![0; t.rank() + 1];
    Ok(Tensor::from_fn(n, &kinds, |idx| {
        dix[1..].copy_from_slice(idx);
        dix[0] = 0;
        let mut acc = xi.get(&[0]).times(dt.get(&dix));
        for c in 1..n {
            dix[0] = c;
            acc.fma_acc(xi.get(&[c]), dt.get(&dix));
        }
        for (s, kind) in kinds.iter().enumerate() {
            src.copy_from_slice(idx);
            for c in 0..n {
                src[s] = c;
                match kind {
                    Slot::Up => acc.fma_acc_scaled(t.get(&src), dxi.get(&[c, idx[s]]), -1.0),
                    Slot::Down => acc.fma_acc(t.get(&src), dxi.get(&[idx[s], c])),
                }
            }
        }
        acc
    }))
}

/// `£_ξ Γ^a_bc` from its coordinate expression (connection, not tensor).
pub fn lie_derivative_connection(gamma: &TensorJet, xi: &TensorJet) -> Result<TensorJet> {
    let tensorial = lie_derivative(gamma, xi)?;
    let ddxi = partial_derivative(&partial_derivative(xi)?)?; // [b, c, a]
    let n = gamma.dim();
    Ok(Tensor::from_fn(n, gamma.slots(), |i| {
        tensorial.get(i).plus(ddxi.get(&[i[1], i[2], i[0]]))
    }))
}

/// A vector field whose components can be evaluated as jets.
pub trait VectorField: Debug + Send + Sync {
    fn dim(&self) -> usize;
    /// Components `ξ^a` as jets of the given order.
    fn jets(&self, x: &ChartPoint, order: usize) -> Result<TensorJet>;
}

/// A vector field from component expressions.
#[derive(Debug, Clone)]
pub struct VectorFieldSpec {
    pub components: Vec<Expression>,
}

impl VectorFieldSpec {
    pub fn new(components: Vec<Expression>) -> Self {
        VectorFieldSpec { components }
    }

    pub fn from_strings(coords: &[String], comps: &[&str]) -> Result<Self> {
        if comps.len() != coords.len() {
            return Err(Error::DimensionMismatch {
                expected: coords.len(),
                found: comps.len(),
            });
        }
        Ok(VectorFieldSpec {
            components: comps.iter().map(|s| parse(s, coords)).collect::<Result<_>>()?,
        })
    }
}

impl VectorField for VectorFieldSpec {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn jets(&self, x: &ChartPoint, order: usize) -> Result<TensorJet> {
        x.check_dim(self.dim())?;
        let comps = self
            .components
            .iter()
            .map(|e| e.evaluate_jet(x.coords(), order))
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_vec(self.dim(), &[Slot::Up], comps)
    }
}

/// `ξ₁ + ξ₂`.
#[derive(Debug, Clone)]
pub struct SumField(pub Arc<dyn VectorField>, pub Arc<dyn VectorField>);

impl VectorField for SumField {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn jets(&self, x: &ChartPoint, order: usize) -> Result<TensorJet> {
        Ok(self.0.jets(x, order)?.plus(&self.1.jets(x, order)?))
    }
}

/// `[ξ₁, ξ₂]^a = ξ₁^b ∂_b ξ₂^a − ξ₂^b ∂_b ξ₁^a`, from jets one order higher.
#[derive(Debug, Clone)]
pub struct BracketField(pub Arc<dyn VectorField>, pub Arc<dyn VectorField>);

pub fn bracket_jets(a: &TensorJet, b: &TensorJet) -> Result<TensorJet> {
    let da = partial_derivative(a)?;
    let db = partial_derivative(b)?;
    let n = a.dim();
    Ok(Tensor::from_fn(n, &[Slot::Up], |i| {
        let mut acc = a.get(&[0]).times(db.get(&[0, i[0]]));
        acc.fma_acc_scaled(b.get(&[0]), da.get(&[0, i[0]]), -1.0);
        for c in 1..n {
            acc.fma_acc(a.get(&[c]), db.get(&[c, i[0]]));
            acc.fma_acc_scaled(b.get(&[c]), da.get(&[c, i[0]]), -1.0);
        }
        acc
    }))
}

impl VectorField for BracketField {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn jets(&self, x: &ChartPoint, order: usize) -> Result<TensorJet> {
        bracket_jets(&self.0.jets(x, order + 1)?, &self.1.jets(x, order + 1)?)
    }
}

/// `ρ ξ` for a scalar field `ρ`.
#[derive(Debug, Clone)]
pub struct ScaledField {
    pub rho: Expression,
    pub field: Arc<dyn VectorField>,
}

impl VectorField for ScaledField {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn jets(&self, x: &ChartPoint, order: usize) -> Result<TensorJet> {
        let rho = self.rho.evaluate_jet(x.coords(), order)?;
        Ok(self.field.jets(x, order)?.times_scalar(&rho))
    }
}

/// A tensor field given by component expressions in row-major order.
#[derive(Debug, Clone)]
pub struct TensorField {
    pub dim: usize,
    pub slots: Vec<Slot>,
    pub components: Vec<Expression>,
}

impl TensorField {
    pub fn jets(&self, x: &ChartPoint, order: usize) -> Result<TensorJet> {
        x.check_dim(self.dim)?;
        let comps = self
            .components
            .iter()
            .map(|e| e.evaluate_jet(x.coords(), order))
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_vec(self.dim, &self.slots, comps)
    }
}

/// `(£_ξ g)_ab = ∇_aξ_b + ∇_bξ_a`.
pub fn killing_form(ms: &MetricStructure, xi: &TensorJet) -> Result<TensorJet> {
    let xi_low = ms.lower_vector(xi);
    let d = ms.covariant_derivative(&xi_low)?;
    Ok(d.plus(&d.permute(&[1, 0])))
}

/// Maximum absolute residual per identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals {
    pub lie_connection: f64,
    pub lie_xi: f64,
    pub lie_commutation: f64,
    pub lie_curvature: f64,
    pub ricci: f64,
}

impl IdentityResiduals {
    pub fn entries(&self) -> [(&'static str, f64); 5] {
        [
            ("lie-connection", self.lie_connection),
            ("lie-xi", self.lie_xi),
            ("lie-commutation", self.lie_commutation),
            ("lie-curvature", self.lie_curvature),
            ("ricci", self.ricci),
        ]
    }

    pub fn max(&self) -> f64 {
        self.entries().iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// Smooth fixed test field `f(x) = sin(w·x + s) + 0.3 s` as a jet.
fn probe_scalar(x: &ChartPoint, order: usize, seed: usize) -> Jet {
    let n = x.dim();
    let mut arg = Jet::constant(n, order, 0.37 * seed as f64);
    for (k, &xk) in x.coords().iter().enumerate() {
        let w = 0.2 + 0.13 * ((seed * 7 + k * 3) % 11) as f64;
        arg = arg + Jet::variable(n, order, k, xk).scale(w);
    }
    &arg.sin() + 0.3 * seed as f64
}

fn probe_tensor(x: &ChartPoint, order: usize, slots: &[Slot], offset: usize) -> TensorJet {
    let n = x.dim();
    let mut k = offset;
    Tensor::from_fn(n, slots, |_| {
        k += 1;
        probe_scalar(x, order, k)
    })
}

/// Evaluates both sides of the Lie-derivative identities and the Ricci
/// identity at one point. Needs metric and `ξ` jets of order ≥ 3.
pub fn identity_suite(ms: &MetricStructure, xi: &TensorJet) -> Result<IdentityResiduals> {
    let order = ms.order.min(xi.order());
    if order < 3 {
        return Err(Error::InsufficientOrder {
            needed: 3,
            available: order,
        });
    }
    let n = ms.dim();
    let gamma = &ms.gamma;
    let riem = ms.riemann()?;

    let lie_gamma = lie_derivative_connection(gamma, xi)?;

    // ½ g^{ae}[∇_b h_ce + ∇_c h_be − ∇_e h_bc], h = £g
    let h = lie_derivative(&ms.g, xi)?;
    let dh = ms.covariant_derivative(&h)?;
    let rhs_conn = Tensor::from_fn(n, &[Slot::Down; 3], |i| {
        let (e, b, c) = (i[0], i[1], i[2]);
        dh.get(&[b, c, e])
            .plus(dh.get(&[c, b, e]))
            .minus(dh.get(&[e, b, c]))
            .scaled(0.5)
    })
    .raise(0, &ms.g_inv);
    let lie_connection = lie_gamma.minus(&rhs_conn).max_abs();

    // ∇_b∇_cξ^a + ξ^d R^a_cdb
    let ddxi = ms.covariant_derivative(&ms.covariant_derivative(xi)?)?; // [b, c, a]
    let rhs_xi = Tensor::from_fn(n, &[Slot::Up, Slot::Down, Slot::Down], |i| {
        let (a, b, c) = (i[0], i[1], i[2]);
        let mut acc = ddxi.get(&[b, c, a]).clone();
        for d in 0..n {
            acc.fma_acc(xi.get(&[d]), riem.get(&[a, c, d, b]));
        }
        acc
    });
    let lie_xi = lie_gamma.minus(&rhs_xi).max_abs();

    // ∇_c£T − £∇_cT for a mixed probe T^a_b
    let t = probe_tensor(&ms.point, ms.order, &[Slot::Up, Slot::Down], 0);
    let lhs = ms
        .covariant_derivative(&lie_derivative(&t, xi)?)?
        .minus(&lie_derivative(&ms.covariant_derivative(&t)?, xi)?);
    let rhs_comm = Tensor::from_fn(n, &[Slot::Down, Slot::Up, Slot::Down], |i| {
        let (c, a, b) = (i[0], i[1], i[2]);
        let mut acc = lhs.get(i).zero_like();
        for r in 0..n {
            acc.fma_acc_scaled(lie_gamma.get(&[a, c, r]), t.get(&[r, b]), -1.0);
            acc.fma_acc(lie_gamma.get(&[r, c, b]), t.get(&[a, r]));
        }
        acc
    });
    let lie_commutation = lhs.minus(&rhs_comm).max_abs();

    // £R^d_cab = ∇_a(£Γ^d_bc) − ∇_b(£Γ^d_ac)
    let lie_r = lie_derivative(riem, xi)?;
    let dlg = ms.covariant_derivative(&lie_gamma)?; // [a, d, b, c]
    let rhs_curv = Tensor::from_fn(n, riem.slots(), |i| {
        let (d, c, a, b) = (i[0], i[1], i[2], i[3]);
        dlg.get(&[a, d, b, c]).minus(dlg.get(&[b, d, a, c]))
    });
    let lie_curvature = lie_r.minus(&rhs_curv).max_abs();

    // ∇_a∇_b u_c − ∇_b∇_a u_c = u_d R^d_cba
    let u = probe_tensor(&ms.point, ms.order, &[Slot::Down], 17);
    let ddu = ms.covariant_derivative(&ms.covariant_derivative(&u)?)?;
    let mut ricci: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let lhs = ddu.get(&[a, b, c]).value() - ddu.get(&[b, a, c]).value();
                let rhs: f64 = (0..n)
                    .map(|d| u.get(&[d]).value() * riem.get(&[d, c, b, a]).value())
                    .sum();
                ricci = ricci.max((lhs - rhs).abs());
            }
        }
    }

    Ok(IdentityResiduals {
        lie_connection,
        lie_xi,
        lie_commutation,
        lie_curvature,
        ricci,
    })
}

/// Riemann symmetry and first-Bianchi residuals (values only).
pub fn riemann_symmetry_residual(ms: &MetricStructure) -> Result<f64> {
    let r = ms.riemann_lowered()?.values();
    let n = ms.dim();
    let mut worst: f64 = 0.0;
    for d in 0..n {
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let v = *r.get(&[d, c, a, b]);
                    worst = worst
                        .max((v + r.get(&[d, c, b, a])).abs())
                        .max((v + r.get(&[c, d, a, b])).abs())
                        .max((v - r.get(&[a, b, d, c])).abs())
                        .max((v + r.get(&[d, a, b, c]) + r.get(&[d, b, c, a])).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Largest discrepancies between jet derivatives and central differences,
/// each relative to `max(1, max |jet value|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdResiduals {
    pub first: f64,
    pub second: f64,
    pub christoffel: f64,
}

impl FdResiduals {
    pub fn max(&self) -> f64 {
        self.first.max(self.second).max(self.christoffel)
    }
}

/// Compares `∂g`, `∂∂g` and `Γ` from jets against central differences of
/// metric values with steps `h1` (first) and `h2` (second).
pub fn finite_difference_residual(metric: &MetricField, x: &ChartPoint, h1: f64, h2: f64) -> Result<FdResiduals> {
    let n = metric.dim();
    let ms = metric_at(metric, x, 2)?;
    let shifted = |steps: &[(usize, f64)]| -> Result<TensorValue> {
        let mut y = x.coords().to_vec();
        for &(k, h) in steps {
            y[k] += h;
        }
        metric.values(&ChartPoint::new(y))
    };
    let mut d1 = vec![0.0; n * n * n];
    let (mut first, mut scale1) = (0.0f64, 1.0f64);
    for c in 0..n {
        let (gp, gm) = (shifted(&[(c, h1)])?, shifted(&[(c, -h1)])?);
        for a in 0..n {
            for b in 0..n {
                let fd = (gp.get(&[a, b]) - gm.get(&[a, b])) / (2.0 * h1);
                let ad = ms.g.get(&[a, b]).partial(&[c]).unwrap_or(f64::NAN);
                d1[(c * n + a) * n + b] = fd;
                first = first.max((fd - ad).abs());
                scale1 = scale1.max(ad.abs());
            }
        }
    }
    let (mut second, mut scale2) = (0.0f64, 1.0f64);
    let g0 = metric.values(x)?;
    for c in 0..n {
        for d in c..n {
            let vals = if c == d {
                let (p, m) = (shifted(&[(c, h2)])?, shifted(&[(c, -h2)])?);
                (0..n * n)
                    .map(|i| (p.data()[i] - 2.0 * g0.data()[i] + m.data()[i]) / (h2 * h2))
                    .collect::<Vec<_>>()
            } else {
                let pp = shifted(&[(c, h2), (d, h2)])?;
                let pm = shifted(&[(c, h2), (d, -h2)])?;
                let mp = shifted(&[(c, -h2), (d, h2)])?;
                let mm = shifted(&[(c, -h2), (d, -h2)])?;
                (0..n * n)
                    .map(|i| (pp.data()[i] - pm.data()[i] - mp.data()[i] + mm.data()[i]) / (4.0 * h2 * h2))
                    .collect()
            };
            for a in 0..n {
                for b in 0..n {
                    let ad = ms.g.get(&[a, b]).partial(&[c, d]).unwrap_or(f64::NAN);
                    second = second.max((vals[a * n + b] - ad).abs());
                    scale2 = scale2.max(ad.abs());
                }
            }
        }
    }
    let gi = ms.g_inv.values();
    let (mut christoffel, mut scale3) = (0.0f64, 1.0f64);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let fd: f64 = (0..n)
                    .map(|e| {
                        0.5 * gi.get(&[a, e])
                            * (d1[(b * n + e) * n + c] + d1[(c * n + e) * n + b] - d1[(e * n + b) * n + c])
                    })
                    .sum();
                let ad = ms.gamma.get(&[a, b, c]).value();
                christoffel = christoffel.max((fd - ad).abs());
                scale3 = scale3.max(ad.abs());
            }
        }
    }
    Ok(FdResiduals {
        first: first / scale1,
        second: second / scale2,
        christoffel: christoffel / scale3,
    })
}

/// Value matrix helper.
pub fn value_matrix(t: &TensorJet) -> DMatrix<f64> {
    t.values().to_matrix()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn jets_agree_with_central_differences() {
        let c = names(&["t", "x", "y"]);
        let m = MetricField::from_strings(
            &c,
            &[
                vec!["1 + x^2".into(), "0.1*t*y".into(), "0".into()],
                vec!["0.1*t*y".into(), "-exp(t)".into(), "0".into()],
                vec!["0".into(), "0".into(), "-(2 + sin(x*y))".into()],
            ],
        )
        .unwrap();
        let r = finite_difference_residual(&m, &ChartPoint::new(vec![0.3, -0.2, 0.4]), 1e-5, 1e-4).unwrap();
        assert!(r.max() < 1e-6, "{r:?}");
    }

    #[test]
    fn flat_minkowski_has_no_connection() {
        let c = names(&["t", "x", "y", "z"]);
        let m = MetricField::diagonal(&c, &["1", "-1", "-1", "-1"]).unwrap();
        let ms = metric_at(&m, &ChartPoint::new(vec![0.1, 0.2, 0.3, 0.4]), 3).unwrap();
        assert_eq!(ms.gamma.max_abs(), 0.0);
        assert_eq!(ms.riemann().unwrap().max_abs(), 0.0);
        assert_eq!(ms.signature, Signature { positive: 1, negative: 3 });
        assert!((ms.det.value() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn expanding_christoffels() {
        let c = names(&["t", "x", "y", "z"]);
        let a2 = "-exp(2*t)";
        let m = MetricField::diagonal(&c, &["1", a2, a2, a2]).unwrap();
        let t0 = 0.3;
        let ms = metric_at(&m, &ChartPoint::new(vec![t0, 0.1, -0.2, 0.5]), 2).unwrap();
        assert!((ms.gamma.get(&[1, 0, 1]).value() - 1.0).abs() < 1e-14);
        assert!((ms.gamma.get(&[0, 1, 1]).value() - (2.0 * t0).exp()).abs() < 1e-13);
    }

    #[test]
    fn sphere_curvature() {
        let c = names(&["th", "ph"]);
        let m = MetricField::diagonal(&c, &["1", "sin(th)^2"]).unwrap();
        let th = 0.8;
        let ms = metric_at(&m, &ChartPoint::new(vec![th, 0.2]), 2).unwrap();
        let r = ms.riemann().unwrap().get(&[0, 1, 0, 1]).value();
        assert!((r - th.sin().powi(2)).abs() < 1e-12);
        assert!(riemann_symmetry_residual(&ms).unwrap() < 1e-12);
    }

    #[test]
    fn metricity() {
        let c = names(&["u", "v", "w"]);
        let m = MetricField::from_strings(
            &c,
            &[
                names(&["2 + sin(u*v)", "0.3*w", "0"]),
                names(&["0.3*w", "3 + u^2", "0.1*u"]),
                names(&["0", "0.1*u", "exp(v)"]),
            ],
        )
        .unwrap();
        let ms = metric_at(&m, &ChartPoint::new(vec![0.2, -0.4, 0.7]), 3).unwrap();
        assert!(ms.covariant_derivative(&ms.g).unwrap().max_abs() < 1e-13);
        assert!(ms.covariant_derivative(&ms.g_inv).unwrap().max_abs() < 1e-13);
        assert!(riemann_symmetry_residual(&ms).unwrap() < 1e-12);
    }

    #[test]
    fn rotation_is_killing_and_dilation_scales() {
        let c = names(&["x", "y", "z"]);
        let m = MetricField::diagonal(&c, &["1", "1", "1"]).unwrap();
        let ms = metric_at(&m, &ChartPoint::new(vec![0.3, -0.2, 0.9]), 2).unwrap();
        let rot = VectorFieldSpec::from_strings(&c, &["-y", "x", "0"]).unwrap();
        let xi = rot.jets(&ms.point, 2).unwrap();
        assert!(lie_derivative(&ms.g, &xi).unwrap().max_abs() < 1e-15);
        let dil = VectorFieldSpec::from_strings(&c, &["x", "y", "z"]).unwrap();
        let xi = dil.jets(&ms.point, 2).unwrap();
        let h = lie_derivative(&ms.g, &xi).unwrap();
        assert!(h.minus(&ms.g.scaled(2.0)).max_abs() < 1e-15);
        assert!(killing_form(&ms, &xi).unwrap().minus(&h).max_abs() < 1e-15);
    }

    #[test]
    fn identities_hold_on_curved_metric() {
        let c = names(&["t", "x", "y"]);
        let m = MetricField::diagonal(&c, &["1 + 0.2*x^2", "-exp(2*t)", "-(1 + t*y)^2"]).unwrap();
        let xi = VectorFieldSpec::from_strings(&c, &["1 + x*y", "sin(t)", "0.3*y^2"]).unwrap();
        let p = ChartPoint::new(vec![0.2, 0.4, -0.3]);
        let ms = metric_at(&m, &p, 4).unwrap();
        let res = identity_suite(&ms, &xi.jets(&p, 4).unwrap()).unwrap();
        assert!(res.max() < 1e-10, "{res:?}");
    }

    #[test]
    fn degenerate_metric_is_rejected() {
        let c = names(&["x", "y"]);
        let m = MetricField::diagonal(&c, &["1", "x"]).unwrap();
        let err = metric_at(&m, &ChartPoint::new(vec![0.0, 0.0]), 2).unwrap_err();
        assert!(matches!(err, Error::DegenerateMetric { .. }));
    }

    #[test]
    fn bracket_of_dilation_and_translation() {
        let c = names(&["x", "y"]);
        let d = Arc::new(VectorFieldSpec::from_strings(&c, &["x", "y"]).unwrap());
        let t = Arc::new(VectorFieldSpec::from_strings(&c, &["1", "0"]).unwrap());
        let b = BracketField(d, t);
        let j = b.jets(&ChartPoint::new(vec![0.4, 0.1]), 2).unwrap();
        assert!((j.get(&[0]).value() + 1.0).abs() < 1e-15);
        assert_eq!(j.get(&[1]).value(), 0.0);
    }
}
