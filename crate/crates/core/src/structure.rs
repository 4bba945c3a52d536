//! First-derivative structure tensors of the projector pair, the constraint
//! and normal-system residuals, integrability identities, the dimension
//! bound, and the rank of the algebraic constraint system.
//!
//! Index layout follows `geometry`: covariant derivatives carry the new index
//! first, so `dp[c, a, b] = ∇_c P_ab`.
//!
//! - `M_abc = ∇_bP_ac + ∇_cP_ab − ∇_aP_cb`
//! - `E_a = M_acb P^cb`, `W_a = −M_acb Π^cb`
//! - `T_abc = M_abc + W_aΠ_bc/(n−p) − E_aP_bc/p`
//! - `A_abc = P_a^d T_dbc`, `B_abc = Π_a^d T_dbc`
//! - `R⁰ = P^cb P^ar R_rcab`, `W⁰ = P^ar(∇_aM_rbc − ∇_bM_rac)P^cb`

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ChartPoint, Jet};
use crate::geometry::{covariant_derivative, lie_derivative, partial_derivative, MetricStructure, VectorField};
use crate::linalg::{column_space, numerical_rank, RANK_TOLERANCE};
use crate::report::{Tolerances, Verdict, Worst};
use crate::square_root::SquareRootStructure;
use crate::symmetry::{bcvf_at, Background, GaugeExprs, GaugeSource};
use crate::tensor::{Scalar, Slot, Tensor, TensorJet, TensorValue};

const D: Slot = Slot::Down;

/// Structure tensors at one point (jets one order below the root).
#[derive(Debug, Clone)]
pub struct StructureTensors {
    pub p: usize,
    pub n: usize,
    /// `∇_c P_ab`, layout `[c, a, b]`
    pub dp: TensorJet,
    pub m: TensorJet,
    /// `M^a_bc`
    pub m_up: TensorJet,
    pub e: TensorJet,
    pub w: TensorJet,
    pub t: TensorJet,
    pub a: TensorJet,
    pub b: TensorJet,
    /// Needs root jets of order ≥ 2.
    pub r0: Option<Jet>,
    pub w0: Option<Jet>,
}

fn contract2(t: &TensorJet, s0: usize, s1: usize, m: &TensorJet) -> TensorJet {
    // Σ_{x,y} t[.., x(s0), .., y(s1), ..] m[x, y]
    let n = t.dim();
    let keep: Vec<usize> = (0..t.rank()).filter(|k| *k != s0 && *k != s1).collect();
    let slots: Vec<Slot> = keep.iter().map(|&k| t.slots()[k]).collect();
    let mut full = vec![0; t.rank()];
    Tensor::from_fn(n, &slots, |idx| {
        for (j, &k) in keep.iter().enumerate() {
            full[k] = idx[j];
        }
        full[s0] = 0;
        full[s1] = 0;
        let mut acc = t.get(&full).times(m.get(&[0, 0]));
        for x in 0..n {
            for y in 0..n {
                if x == 0 && y == 0 {
                    continue;
                }
                full[s0] = x;
                full[s1] = y;
                acc.fma_acc(t.get(&full), m.get(&[x, y]));
            }
        }
        acc
    })
}

/// `Σ_d mixed[d, a] t[d, ...]`: applies `X_a^d` to the first slot.
fn project_first(mixed: &TensorJet, t: &TensorJet) -> TensorJet {
    // mixed[d, a] = X^d_a; symmetric projectors give X_a^d = X^d_a
    let n = t.dim();
    let mut src = vec![0; t.rank()];
    Tensor::from_fn(n, t.slots(), |idx| {
        src.copy_from_slice(idx);
        src[0] = 0;
        let mut acc = mixed.get(&[0, idx[0]]).times(t.get(&src));
        for d in 1..n {
            src[0] = d;
            acc.fma_acc(mixed.get(&[d, idx[0]]), t.get(&src));
        }
        acc
    })
}

/// Builds all structure tensors from the metric and root structures.
pub fn compute_structure(ms: &MetricStructure, sr: &SquareRootStructure) -> Result<StructureTensors> {
    let (n, p) = (sr.n, sr.p);
    if p == 0 || p == n {
        return Err(Error::DegenerateProjector { p, n });
    }
    let dp = covariant_derivative(&sr.p_low, &ms.gamma)?;
    let m = Tensor::from_fn(n, &[D, D, D], |i| {
        let (a, b, c) = (i[0], i[1], i[2]);
        dp.get(&[b, a, c]).plus(dp.get(&[c, a, b])).minus(dp.get(&[a, c, b]))
    });
    let m_up = m.raise(0, &ms.g_inv);
    let e = contract2(&m, 1, 2, &sr.p_up);
    let w = contract2(&m, 1, 2, &sr.pi_up).scaled(-1.0);
    let (pf, qf) = (p as f64, (n - p) as f64);
    let t = Tensor::from_fn(n, &[D, D, D], |i| {
        let mut v = m.get(i).clone();
        v.fma_acc_scaled(w.get(&[i[0]]), sr.pi_low.get(&[i[1], i[2]]), 1.0 / qf);
        v.fma_acc_scaled(e.get(&[i[0]]), sr.p_low.get(&[i[1], i[2]]), -1.0 / pf);
        v
    });
    let a = project_first(&sr.p_mixed, &t);
    let b = project_first(&sr.pi_mixed, &t);
    let (r0, w0) = if sr.p_low.order() >= 2 && ms.riemann.is_some() {
        let r = ms.riemann_lowered()?;
        // R⁰ = P^cb P^ar R_rcab
        let mut r0 = r.data()[0].zero_like();
        let mut w0 = r0.clone();
        let dm = covariant_derivative(&m, &ms.gamma)?; // [x, r, b, c]
        for c in 0..n {
            for b in 0..n {
                for a in 0..n {
                    for rr in 0..n {
                        let pp = sr.p_up.get(&[c, b]).times(sr.p_up.get(&[a, rr]));
                        r0.fma_acc(&pp, r.get(&[rr, c, a, b]));
                        let diff = dm.get(&[a, rr, b, c]).minus(dm.get(&[b, rr, a, c]));
                        w0.fma_acc(&pp, &diff);
                    }
                }
            }
        }
        (Some(r0), Some(w0))
    } else {
        (None, None)
    };
    Ok(StructureTensors {
        p,
        n,
        dp,
        m,
        m_up,
        e,
        w,
        t,
        a,
        b,
        r0,
        w0,
    })
}

/// Largest violation of the algebraic properties of the structure tensors.
pub fn structure_invariants(ms: &MetricStructure, sr: &SquareRootStructure, st: &StructureTensors) -> f64 {
    let n = st.n;
    let m = st.m.values();
    let mut worst: f64 = 0.0;
    // symmetry in the last pair and trace M^a_ac
    let m_up = st.m_up.values();
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                worst = worst.max((m.get(&[a, b, c]) - m.get(&[a, c, b])).abs());
            }
        }
    }
    for c in 0..n {
        let tr: f64 = (0..n).map(|a| m_up.get(&[a, a, c])).sum();
        worst = worst.max(tr.abs());
    }
    // P^ca M_acb, Π^ab M_abc
    let pu = sr.p_up.values();
    let qu = sr.pi_up.values();
    for b in 0..n {
        let mut x = 0.0;
        let mut y = 0.0;
        for c in 0..n {
            for a in 0..n {
                x += pu.get(&[c, a]) * m.get(&[a, c, b]);
                y += qu.get(&[c, a]) * m.get(&[c, a, b]);
            }
        }
        worst = worst.max(x.abs()).max(y.abs());
    }
    // T traceless against P and Π in every pair
    let t = st.t.values();
    for (s0, s1) in [(0, 1), (0, 2), (1, 2)] {
        for proj in [&pu, &qu] {
            let mut full = [0usize; 3];
            let free = 3 - s0 - s1;
            for f in 0..n {
                let mut acc = 0.0;
                for x in 0..n {
                    for y in 0..n {
                        full[s0] = x;
                        full[s1] = y;
                        full[free] = f;
                        acc += t.get(&full) * proj.get(&[x, y]);
                    }
                }
                worst = worst.max(acc.abs());
            }
        }
    }
    // E = ΠE, W = PW
    let e = st.e.values();
    let w = st.w.values();
    let pm = sr.p_mixed.values();
    let qm = sr.pi_mixed.values();
    for a in 0..n {
        let pe: f64 = (0..n).map(|c| qm.get(&[c, a]) * e.get(&[c])).sum();
        let pw: f64 = (0..n).map(|c| pm.get(&[c, a]) * w.get(&[c])).sum();
        worst = worst.max((pe - e.get(&[a])).abs()).max((pw - w.get(&[a])).abs());
    }
    let _ = ms;
    worst
}

/// `max ‖T_abc‖` over points with the split verdict.
#[derive(Debug, Clone, Serialize)]
pub struct SplitReport {
    pub verdict: Verdict,
    pub max_t: f64,
    pub worst_point: Vec<f64>,
    pub points: usize,
}

/// Tolerances of the split criterion.
pub const SPLIT_TOLERANCES: Tolerances = Tolerances {
    pass: 1e-8,
    fail: 1e-4,
};

pub fn split_test(bg: &Background, points: &[ChartPoint], order: usize) -> Result<SplitReport> {
    let order = order.max(1);
    let rows = points
        .par_iter()
        .map(|x| {
            let (ms, sr) = bg.at(x, order)?;
            Ok(compute_structure(&ms, &sr)?.t.max_abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    let w = Worst::from_iter(rows.into_iter().zip(points));
    Ok(SplitReport {
        verdict: SPLIT_TOLERANCES.classify(w.residual),
        max_t: w.residual,
        worst_point: w.point,
        points: w.count,
    })
}

/// Variables of the normal system at one point.
#[derive(Debug, Clone)]
pub struct NormalState {
    /// `ξ^a`
    pub xi: TensorJet,
    /// `ξ_a`
    pub xi_low: TensorJet,
    /// `Ψ_ab`, antisymmetric part of `∇_aξ_b`
    pub psi: TensorJet,
    pub phi: Jet,
    pub chi: Jet,
}

impl NormalState {
    /// State of a vector field with given gauge jets.
    pub fn from_field(ms: &MetricStructure, xi: TensorJet, phi: Jet, chi: Jet) -> Result<Self> {
        let xi_low = ms.lower_vector(&xi);
        let dxi = covariant_derivative(&xi_low, &ms.gamma)?;
        let psi = dxi.antisymmetrize(0, 1);
        Ok(NormalState {
            xi,
            xi_low,
            psi,
            phi,
            chi,
        })
    }

    fn grad(j: &Jet) -> Result<TensorJet> {
        let t = Tensor::from_vec(j.nvars(), &[], vec![j.clone()])?;
        let g = partial_derivative(&t)?;
        Ok(g)
    }

    /// `φ_a` as jets.
    pub fn phi_r(&self) -> Result<TensorJet> {
        NormalState::grad(&self.phi)
    }

    pub fn chi_r(&self) -> Result<TensorJet> {
        NormalState::grad(&self.chi)
    }
}

fn rel_residual(l: &TensorValue, r: &TensorValue) -> f64 {
    let scale = 1f64.max(l.max_abs()).max(r.max_abs());
    l.minus(r).max_abs() / scale
}

/// Residuals of the three constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintResiduals {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        self.c1.max(self.c2).max(self.c3)
    }
}

/// - `ξ^c∇_cS_ab + Ψ_acS^c_b + Ψ_bcS^c_a = 0`
/// - `ξ^c∇_cE_a + Ψ_acE^c = −½χE_a − pΠ_apφ^p`
/// - `ξ^c∇_cW_a + Ψ_acW^c = −½φW_a − (n−p)P_apχ^p`
pub fn constraint_residuals(
    ms: &MetricStructure,
    sr: &SquareRootStructure,
    st: &StructureTensors,
    state: &NormalState,
) -> Result<ConstraintResiduals> {
    constraint_residuals_with(ms, sr, st, state, sr.p as f64, (sr.n - sr.p) as f64)
}

/// Constraints with explicit gradient coefficients `k_e` (for `Π_apφ^p`)
/// and `k_w` (for `P_apχ^p`).
pub fn constraint_residuals_with(
    ms: &MetricStructure,
    sr: &SquareRootStructure,
    st: &StructureTensors,
    state: &NormalState,
    k_e: f64,
    k_w: f64,
) -> Result<ConstraintResiduals> {
    let n = sr.n;
    let (pf, qf) = (k_e, k_w);
    let xi = state.xi.values();
    let psi = state.psi.values();
    let ds = covariant_derivative(&sr.s, &ms.gamma)?.values();
    let sm = sr.s_mixed.values();
    let c1 = Tensor::from_fn(n, &[D, D], |i| {
        let (a, b) = (i[0], i[1]);
        (0..n)
            .map(|c| {
                xi.get(&[c]) * ds.get(&[c, a, b])
                    + psi.get(&[a, c]) * sm.get(&[c, b])
                    + psi.get(&[b, c]) * sm.get(&[c, a])
            })
            .sum::<f64>()
    });
    let c1 = c1.max_abs() / 1f64.max(ds.max_abs());

    let gi = ms.g_inv.values();
    let phi = state.phi.value();
    let chi = state.chi.value();
    let phi_r = state.phi_r()?.values();
    let chi_r = state.chi_r()?.values();
    let pm = sr.p_mixed.values();
    let qm = sr.pi_mixed.values();
    let side = |v: &TensorJet, gauge: f64, proj: &TensorValue, grad: &TensorValue, k: f64| -> Result<f64> {
        let dv = covariant_derivative(v, &ms.gamma)?.values();
        let vv = v.values();
        let up: Vec<f64> = (0..n).map(|c| (0..n).map(|d| gi.get(&[c, d]) * vv.get(&[d])).sum()).collect();
        let lhs = Tensor::from_fn(n, &[D], |i| {
            let a = i[0];
            (0..n)
                .map(|c| xi.get(&[c]) * dv.get(&[c, a]) + psi.get(&[a, c]) * up[c])
                .sum::<f64>()
        });
        let rhs = Tensor::from_fn(n, &[D], |i| {
            let a = i[0];
            -0.5 * gauge * vv.get(&[a]) - k * (0..n).map(|q| proj.get(&[q, a]) * grad.get(&[q])).sum::<f64>()
        });
        Ok(rel_residual(&lhs, &rhs))
    };
    let c2 = side(&st.e, chi, &qm, &phi_r, pf)?;
    let c3 = side(&st.w, phi, &pm, &chi_r, qf)?;
    Ok(ConstraintResiduals { c1, c2, c3 })
}

/// Residuals of the normal system at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalResiduals {
    /// `∂_aφ = φ_a`
    pub phi_gradient: f64,
    /// `∂_aχ = χ_a`
    pub chi_gradient: f64,
    /// `∇_aξ_b = Ψ_ab + ½(φP_ab + χΠ_ab)`
    pub killing_split: f64,
    /// `∇_bΨ_ca = ξ_dR^d_bca + φ_[cP_a]b + χ_[cΠ_a]b + (φ−χ)∇_[cP_a]b`
    pub psi_derivative: f64,
    /// Second-derivative equation for `φ`.
    pub phi_second: f64,
    /// Its counterpart for `χ`.
    pub chi_second: f64,
}

impl NormalResiduals {
    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("normal-set-1", self.phi_gradient),
            ("normal-set-2", self.chi_gradient),
            ("normal-set-3", self.killing_split),
            ("normal-set-4", self.psi_derivative),
            ("phi-second", self.phi_second),
            ("chi-second", self.chi_second),
        ]
    }

    pub fn max(&self) -> f64 {
        self.entries().iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// Excluded values of `p` for the second-derivative equation.
pub fn check_normal_p(p: usize, n: usize) -> Result<()> {
    if p == 1 || p == 2 {
        return Err(Error::Excluded(format!(
            "p = {p}: the φ equation needs p ∉ {{1, 2}} (the symmetry algebra may be infinite-dimensional)"
        )));
    }
    if n - p == 1 || n - p == 2 {
        return Err(Error::Excluded(format!(
            "n − p = {}: the χ equation needs n − p ∉ {{1, 2}} (the symmetry algebra may be infinite-dimensional)",
            n - p
        )));
    }
    Ok(())
}

/// The second-derivative equation for `φ`, term by term:
///
/// ```text
/// ∇_cφ_b = 1/(2−p) £_ξ[2P^{ad}R_dcab − (2/p)∇_(cE_b) + R⁰/(1−p) P_bc − 1/(n−p) ∇_rW^r Π_cb]
///   + (1/(2p) E_rχ^r − 1/(2(n−p)) W_rφ^r + 1/(2−p) W_rχ^r) Π_cb
///   − (1/p) χ_(cE_b) − 1/(2−p) φ_(bE_c)
///   + (2/(2−p) ∇_(cP^r_b) + 1/(p(2−p)) E^r P_cb) φ_r
///   + (φ_r − χ_r)/(2−p) (−2P^{dr}∇_(bP_c)d + 2P^{pr}∇_pP_bc)
///   + (χ−φ)/(2−p) (P^{ad}∇_aM_dbc + ∇_bP^{ad}∇_cP_ad + (1/p)E_rM^r_cb
///                  + W⁰/(2(1−p)) P_bc + 1/(n−p) ∇_rW^r Π_cb)
/// ```
///
/// The `χ` counterpart is this function applied to the swapped root with
/// `φ ↔ χ`. Returns the relative residual.
pub fn second_derivative_residual(
    ms: &MetricStructure,
    sr: &SquareRootStructure,
    st: &StructureTensors,
    xi: &TensorJet,
    phi: &Jet,
    chi: &Jet,
) -> Result<f64> {
    let n = sr.n;
    let p = sr.p as f64;
    let q = (n - sr.p) as f64;
    let gamma = &ms.gamma;
    let r0 = st.r0.clone().ok_or(Error::InsufficientOrder {
        needed: 3,
        available: ms.order,
    })?;
    let w0 = st.w0.clone().ok_or(Error::InsufficientOrder {
        needed: 3,
        available: ms.order,
    })?;
    let riem = ms.riemann_lowered()?;
    let phi_t = Tensor::from_vec(n, &[], vec![phi.clone()])?;
    let chi_t = Tensor::from_vec(n, &[], vec![chi.clone()])?;
    let phi_r = partial_derivative(&phi_t)?; // [b]
    let chi_r = partial_derivative(&chi_t)?;
    let lhs = covariant_derivative(&phi_r, gamma)?.values(); // [c, b]

    // ∇_rW^r
    let w_up = st.w.raise(0, &ms.g_inv);
    let dw_up = covariant_derivative(&w_up, gamma)?;
    let div_w = (1..n).fold(dw_up.get(&[0, 0]).clone(), |acc, r| acc.plus(dw_up.get(&[r, r])));
    let de = covariant_derivative(&st.e, gamma)?; // [c, b]

    // bracket under the Lie derivative
    let bracket = Tensor::from_fn(n, &[D, D], |i| {
        let (c, b) = (i[0], i[1]);
        let mut v = de.get(&[c, b]).plus(de.get(&[b, c])).scaled(-1.0 / p);
        for a in 0..n {
            for d in 0..n {
                v.fma_acc_scaled(sr.p_up.get(&[a, d]), riem.get(&[d, c, a, b]), 2.0);
            }
        }
        v.fma_acc_scaled(&r0, sr.p_low.get(&[b, c]), 1.0 / (1.0 - p));
        v.fma_acc_scaled(&div_w, sr.pi_low.get(&[c, b]), -1.0 / q);
        v
    });
    let lie_bracket = lie_derivative(&bracket, xi)?.values();

    // values from here on
    let pv = |t: &TensorJet| t.values();
    let (p_low, pi_low, p_up) = (pv(&sr.p_low), pv(&sr.pi_low), pv(&sr.p_up));
    let (e, w) = (pv(&st.e), pv(&st.w));
    let gi = ms.g_inv.values();
    let e_up: Vec<f64> = (0..n).map(|r| (0..n).map(|s| gi.get(&[r, s]) * e.get(&[s])).sum()).collect();
    let phi_r = phi_r.values();
    let chi_r = chi_r.values();
    let phi_up: Vec<f64> = (0..n).map(|r| (0..n).map(|s| gi.get(&[r, s]) * phi_r.get(&[s])).sum()).collect();
    let chi_up: Vec<f64> = (0..n).map(|r| (0..n).map(|s| gi.get(&[r, s]) * chi_r.get(&[s])).sum()).collect();
    let (phi_v, chi_v) = (phi.value(), chi.value());
    let div_w = div_w.value();
    let (r0, w0) = (r0.value(), w0.value());
    let _ = r0;
    let dp = st.dp.values(); // [x, a, b]
    let dp_mixed = covariant_derivative(&sr.p_mixed, gamma)?.values(); // [c, r, b]
    let dp_up = covariant_derivative(&sr.p_up, gamma)?.values(); // [b, a, d]
    let dm = covariant_derivative(&st.m, gamma)?.values(); // [a, d, b, c]
    let m_up = st.m_up.values();

    let e_chi: f64 = (0..n).map(|r| e.get(&[r]) * chi_up[r]).sum();
    let w_phi: f64 = (0..n).map(|r| w.get(&[r]) * phi_up[r]).sum();
    let w_chi: f64 = (0..n).map(|r| w.get(&[r]) * chi_up[r]).sum();
    let k2 = e_chi / (2.0 * p) - w_phi / (2.0 * q) + w_chi / (2.0 - p);

    let rhs = Tensor::from_fn(n, &[D, D], |i| {
        let (c, b) = (i[0], i[1]);
        let mut v = lie_bracket.get(&[c, b]) / (2.0 - p);
        v += k2 * pi_low.get(&[c, b]);
        v -= (chi_r.get(&[c]) * e.get(&[b]) + chi_r.get(&[b]) * e.get(&[c])) / (2.0 * p);
        v -= (phi_r.get(&[b]) * e.get(&[c]) + phi_r.get(&[c]) * e.get(&[b])) / (2.0 * (2.0 - p));
        for r in 0..n {
            let sym = 0.5 * (dp_mixed.get(&[c, r, b]) + dp_mixed.get(&[b, r, c]));
            v += (2.0 / (2.0 - p) * sym + e_up[r] * p_low.get(&[c, b]) / (p * (2.0 - p))) * phi_r.get(&[r]);
        }
        for r in 0..n {
            let mut inner = 0.0;
            for d in 0..n {
                let sym = 0.5 * (dp.get(&[b, c, d]) + dp.get(&[c, b, d]));
                inner += -2.0 * p_up.get(&[d, r]) * sym;
            }
            for pp in 0..n {
                inner += 2.0 * p_up.get(&[pp, r]) * dp.get(&[pp, b, c]);
            }
            v += (phi_r.get(&[r]) - chi_r.get(&[r])) / (2.0 - p) * inner;
        }
        let mut last = 0.0;
        for a in 0..n {
            for d in 0..n {
                last += p_up.get(&[a, d]) * dm.get(&[a, d, b, c]);
                last += dp_up.get(&[b, a, d]) * dp.get(&[c, a, d]);
            }
        }
        for r in 0..n {
            last += e.get(&[r]) * m_up.get(&[r, c, b]) / p;
        }
        last += w0 / (2.0 * (1.0 - p)) * p_low.get(&[b, c]);
        last += div_w / q * pi_low.get(&[c, b]);
        v += (chi_v - phi_v) / (2.0 - p) * last;
        v
    });
    Ok(rel_residual(&lhs, &rhs))
}

/// All normal-system residuals at one point. `phi_r`/`chi_r` of the state
/// are compared with gradients of the supplied gauge jets.
pub fn normal_system_at(
    ms: &MetricStructure,
    sr: &SquareRootStructure,
    st: &StructureTensors,
    st_swapped: &StructureTensors,
    state: &NormalState,
    gauge_phi: &Jet,
    gauge_chi: &Jet,
) -> Result<NormalResiduals> {
    check_normal_p(sr.p, sr.n)?;
    let n = sr.n;
    let gamma = &ms.gamma;
    let grad = |j: &Jet| -> Vec<f64> { j.gradient() };
    let diff = |a: Vec<f64>, b: Vec<f64>| -> f64 {
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let phi_gradient = diff(state.phi_r()?.values().data().to_vec(), grad(gauge_phi));
    let chi_gradient = diff(state.chi_r()?.values().data().to_vec(), grad(gauge_chi));

    let (phi, chi) = (state.phi.value(), state.chi.value());
    let dxi = covariant_derivative(&state.xi_low, gamma)?;
    let p_low = sr.p_low.values();
    let pi_low = sr.pi_low.values();
    let lhs3 = dxi.values();
    let psi = state.psi.values();
    let rhs3 = Tensor::from_fn(n, &[D, D], |i| {
        psi.get(i) + 0.5 * (phi * p_low.get(i) + chi * pi_low.get(i))
    });
    let killing_split = rel_residual(&lhs3, &rhs3);

    let dpsi = covariant_derivative(&state.psi, gamma)?.values(); // [b, c, a]
    let riem = ms.riemann()?.values(); // [d, b, c, a]
    let xi_low = state.xi_low.values();
    let phi_r = state.phi_r()?.values();
    let chi_r = state.chi_r()?.values();
    let dp = st.dp.values();
    let rhs4 = Tensor::from_fn(n, &[D, D, D], |i| {
        let (b, c, a) = (i[0], i[1], i[2]);
        let mut v: f64 = (0..n).map(|d| xi_low.get(&[d]) * riem.get(&[d, b, c, a])).sum();
        v += 0.5 * (phi_r.get(&[c]) * p_low.get(&[a, b]) - phi_r.get(&[a]) * p_low.get(&[c, b]));
        v += 0.5 * (chi_r.get(&[c]) * pi_low.get(&[a, b]) - chi_r.get(&[a]) * pi_low.get(&[c, b]));
        v += (phi - chi) * 0.5 * (dp.get(&[c, a, b]) - dp.get(&[a, c, b]));
        v
    });
    let psi_derivative = rel_residual(&dpsi, &rhs4);

    let phi_second = second_derivative_residual(ms, sr, st, &state.xi, &state.phi, &state.chi)?;
    let swapped = sr.swapped();
    let chi_second = second_derivative_residual(ms, &swapped, st_swapped, &state.xi, &state.chi, &state.phi)?;
    Ok(NormalResiduals {
        phi_gradient,
        chi_gradient,
        killing_split,
        psi_derivative,
        phi_second,
        chi_second,
    })
}

/// Normal-system and constraint residuals for one field over points; gauges
/// must be given as expressions.
pub fn normal_system_residuals(
    bg: &Background,
    xi: &dyn VectorField,
    gauges: &GaugeExprs,
    points: &[ChartPoint],
    order: usize,
) -> Result<Vec<(NormalResiduals, ConstraintResiduals)>> {
    let order = order.max(3);
    points
        .par_iter()
        .map(|x| {
            let (ms, sr) = bg.at(x, order)?;
            check_normal_p(sr.p, sr.n)?;
            let st = compute_structure(&ms, &sr)?;
            let st2 = compute_structure(&ms, &sr.swapped())?;
            normal_at_point(&ms, &sr, &st, &st2, xi, gauges, order)
        })
        .collect()
}

/// Everything for one field at a point with precomputed structures.
pub fn normal_at_point(
    ms: &MetricStructure,
    sr: &SquareRootStructure,
    st: &StructureTensors,
    st_swapped: &StructureTensors,
    xi: &dyn VectorField,
    gauges: &GaugeExprs,
    order: usize,
) -> Result<(NormalResiduals, ConstraintResiduals)> {
    let (phi, chi) = gauges.phi_chi(&ms.point, order)?;
    let state = NormalState::from_field(ms, xi.jets(&ms.point, order)?, phi.clone(), chi.clone())?;
    let normal = normal_system_at(ms, sr, st, st_swapped, &state, &phi, &chi)?;
    let constraints = constraint_residuals(ms, sr, st, &state)?;
    Ok((normal, constraints))
}

/// Constraint residuals only (valid for every `p`).
pub fn constraints_for_field(
    bg: &Background,
    xi: &dyn VectorField,
    gauges: &GaugeSource,
    points: &[ChartPoint],
    order: usize,
) -> Result<Vec<ConstraintResiduals>> {
    let order = order.max(2);
    points
        .par_iter()
        .map(|x| {
            let (ms, sr) = bg.at(x, order)?;
            let st = compute_structure(&ms, &sr)?;
            let xj = xi.jets(x, order)?;
            let (phi, chi) = gauge_jets(&ms, &sr, &xj, gauges, order)?;
            let state = NormalState::from_field(&ms, xj, phi, chi)?;
            constraint_residuals(&ms, &sr, &st, &state)
        })
        .collect()
}

fn gauge_jets(
    ms: &MetricStructure,
    sr: &SquareRootStructure,
    xi: &TensorJet,
    gauges: &GaugeSource,
    order: usize,
) -> Result<(Jet, Jet)> {
    match gauges {
        GaugeSource::Expressions(e) => e.phi_chi(&ms.point, order),
        GaugeSource::Extracted => {
            let a = bcvf_at(ms, sr, xi)?;
            Ok((a.phi, a.chi))
        }
    }
}

/// Residuals of the Lie-derivative identities of the structure tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrabilityResiduals {
    /// `£M` against the `P`-weighted form.
    pub m_p_form: f64,
    /// `£M` against the `Π`-weighted form.
    pub m_pi_form: f64,
    /// Agreement of the two forms.
    pub m_forms_agree: f64,
    /// `£E_a = −pΠ_apφ^p`
    pub lie_e: f64,
    /// `£W_a = (p−n)P_apχ^p`
    pub lie_w: f64,
    /// Traceless part of the `£M` identity.
    pub integral_constraint: f64,
    /// `£T_abc = (φΠ_a^s + χP_a^s)T_sbc`
    pub lie_t: f64,
    /// `£A = χA`, `£B = φB`
    pub lie_a: f64,
    pub lie_b: f64,
    /// `£A^a_bc = (χ−φ)A^a_bc`, `£B^a_bc = (φ−χ)B^a_bc`
    pub lie_a_mixed: f64,
    pub lie_b_mixed: f64,
    /// `£(A^a_bc B^d_ef)`, `£(A_abc Π^de)`, `£(B_abc P^de)`
    pub inv_ab: f64,
    pub inv_a_pi: f64,
    pub inv_b_p: f64,
}

impl IntegrabilityResiduals {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("lie-m-p-form", self.m_p_form),
            ("lie-m-pi-form", self.m_pi_form),
            ("m-forms-agree", self.m_forms_agree),
            ("lie-e", self.lie_e),
            ("lie-w", self.lie_w),
            ("integral-constraint", self.integral_constraint),
            ("lie-t", self.lie_t),
            ("lie-a", self.lie_a),
            ("lie-b", self.lie_b),
            ("lie-a-mixed", self.lie_a_mixed),
            ("lie-b-mixed", self.lie_b_mixed),
            ("invariance-ab", self.inv_ab),
            ("invariance-a-pi", self.inv_a_pi),
            ("invariance-b-p", self.inv_b_p),
        ]
    }

    pub fn max(&self) -> f64 {
        self.entries().iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// Integrability identities at one point; gauges as jets of order ≥ 1.
pub fn integrability_at(
    ms: &MetricStructure,
    sr: &SquareRootStructure,
    st: &StructureTensors,
    xi: &TensorJet,
    phi: &Jet,
    chi: &Jet,
) -> Result<IntegrabilityResiduals> {
    let n = sr.n;
    let (pf, qf) = (sr.p as f64, (n - sr.p) as f64);
    let (phv, chv) = (phi.value(), chi.value());
    let phi_r = phi.gradient();
    let chi_r = chi.gradient();
    let pm = sr.p_mixed.values();
    let qm = sr.pi_mixed.values();
    let p_low = sr.p_low.values();
    let pi_low = sr.pi_low.values();
    let m = st.m.values();
    let e = st.e.values();
    let w = st.w.values();
    let proj = |mixed: &TensorValue, a: usize, v: &[f64]| -> f64 { (0..n).map(|q| mixed.get(&[q, a]) * v[q]).sum() };
    // X_a^q M_qbc
    let pm_m = |mixed: &TensorValue, a: usize, b: usize, c: usize| -> f64 {
        (0..n).map(|q| mixed.get(&[q, a]) * m.get(&[q, b, c])).sum()
    };

    let lie_m = lie_derivative(&st.m, xi)?.values();
    let tail = |a: usize, b: usize, c: usize| -> f64 {
        -p_low.get(&[b, c]) * proj(&qm, a, &phi_r) + pi_low.get(&[c, b]) * proj(&pm, a, &chi_r)
    };
    let r1 = Tensor::from_fn(n, &[D, D, D], |i| {
        let (a, b, c) = (i[0], i[1], i[2]);
        phv * m.get(i) + (chv - phv) * pm_m(&pm, a, b, c) + tail(a, b, c)
    });
    let r2 = Tensor::from_fn(n, &[D, D, D], |i| {
        let (a, b, c) = (i[0], i[1], i[2]);
        chv * m.get(i) + (phv - chv) * pm_m(&qm, a, b, c) + tail(a, b, c)
    });
    let m_p_form = rel_residual(&lie_m, &r1);
    let m_pi_form = rel_residual(&lie_m, &r2);
    let m_forms_agree = rel_residual(&r1, &r2);

    let lie_e_t = lie_derivative(&st.e, xi)?.values();
    let lie_w_t = lie_derivative(&st.w, xi)?.values();
    let want_e = Tensor::from_fn(n, &[D], |i| -pf * proj(&qm, i[0], &phi_r));
    let want_w = Tensor::from_fn(n, &[D], |i| -qf * proj(&pm, i[0], &chi_r));
    let lie_e = rel_residual(&lie_e_t, &want_e);
    let lie_w = rel_residual(&lie_w_t, &want_w);

    // £(M_acb − E_aP_bc/p + W_aΠ_cb/(n−p)) = £T_acb
    let lie_t_t = lie_derivative(&st.t, xi)?.values();
    let ic = Tensor::from_fn(n, &[D, D, D], |i| {
        let (a, c, b) = (i[0], i[1], i[2]);
        phv * (pm_m(&qm, a, c, b) - e.get(&[a]) * p_low.get(&[b, c]) / pf)
            + chv * (pm_m(&pm, a, b, c) + pi_low.get(&[c, b]) * w.get(&[a]) / qf)
    });
    let integral_constraint = rel_residual(&lie_t_t, &ic);

    let t = st.t.values();
    let want_t = Tensor::from_fn(n, &[D, D, D], |i| {
        (0..n)
            .map(|s| (phv * qm.get(&[s, i[0]]) + chv * pm.get(&[s, i[0]])) * t.get(&[s, i[1], i[2]]))
            .sum::<f64>()
    });
    let lie_t = rel_residual(&lie_t_t, &want_t);

    let lie_a_t = lie_derivative(&st.a, xi)?;
    let lie_b_t = lie_derivative(&st.b, xi)?;
    let (av, bv) = (st.a.values(), st.b.values());
    let lie_a = rel_residual(&lie_a_t.values(), &av.scaled(chv));
    let lie_b = rel_residual(&lie_b_t.values(), &bv.scaled(phv));
    let a_up = st.a.raise(0, &ms.g_inv);
    let b_up = st.b.raise(0, &ms.g_inv);
    let lie_a_up = lie_derivative(&a_up, xi)?.values();
    let lie_b_up = lie_derivative(&b_up, xi)?.values();
    let (a_up, b_up) = (a_up.values(), b_up.values());
    let lie_a_mixed = rel_residual(&lie_a_up, &a_up.scaled(chv - phv));
    let lie_b_mixed = rel_residual(&lie_b_up, &b_up.scaled(phv - chv));

    // product rule on the invariant combinations
    let lie_pi_up = lie_derivative(&sr.pi_up, xi)?.values();
    let lie_p_up = lie_derivative(&sr.p_up, xi)?.values();
    let (pi_up, p_up) = (sr.pi_up.values(), sr.p_up.values());
    let lie_a_low = lie_a_t.values();
    let lie_b_low = lie_b_t.values();
    let outer_residual = |x: &TensorValue, lx: &TensorValue, y: &TensorValue, ly: &TensorValue| -> f64 {
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for (xv, lxv) in x.data().iter().zip(lx.data()) {
            for (yv, lyv) in y.data().iter().zip(ly.data()) {
                let a = lxv * yv;
                let b = xv * lyv;
                scale = scale.max(a.abs()).max(b.abs());
                worst = worst.max((a + b).abs());
            }
        }
        worst / scale
    };
    let inv_ab = outer_residual(&a_up, &lie_a_up, &b_up, &lie_b_up);
    let inv_a_pi = outer_residual(&av, &lie_a_low, &pi_up, &lie_pi_up);
    let inv_b_p = outer_residual(&bv, &lie_b_low, &p_up, &lie_p_up);

    Ok(IntegrabilityResiduals {
        m_p_form,
        m_pi_form,
        m_forms_agree,
        lie_e,
        lie_w,
        integral_constraint,
        lie_t,
        lie_a,
        lie_b,
        lie_a_mixed,
        lie_b_mixed,
        inv_ab,
        inv_a_pi,
        inv_b_p,
    })
}

pub fn integrability_residuals(
    bg: &Background,
    xi: &dyn VectorField,
    gauges: &GaugeSource,
    points: &[ChartPoint],
    order: usize,
) -> Result<Vec<IntegrabilityResiduals>> {
    let order = order.max(2);
    points
        .par_iter()
        .map(|x| {
            let (ms, sr) = bg.at(x, order)?;
            let st = compute_structure(&ms, &sr)?;
            let xj = xi.jets(x, order)?;
            let (phi, chi) = gauge_jets(&ms, &sr, &xj, gauges, order)?;
            integrability_at(&ms, &sr, &st, &xj, &phi, &chi)
        })
        .collect()
}

/// Upper bound on the dimension of the symmetry algebra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimensionBound {
    Finite(usize),
    InfinitePossible,
}

pub fn dimension_bound(n: usize, p: usize) -> Result<DimensionBound> {
    if p == 0 || p >= n {
        return Err(Error::OutOfRange { n, p });
    }
    let q = n - p;
    if matches!(p, 1 | 2) || matches!(q, 1 | 2) {
        return Ok(DimensionBound::InfinitePossible);
    }
    Ok(DimensionBound::Finite((p + 1) * (p + 2) / 2 + (q + 1) * (q + 2) / 2))
}

/// Ranks of the algebraic constraint system in an orthonormal eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AppendixRank {
    pub p: usize,
    pub n: usize,
    /// Rank of `M_I^K`.
    pub m_rank: usize,
    /// Rank with the `(∇S)_I^c` block appended.
    pub combined_rank: usize,
}

/// `g`-orthonormal eigenbasis of `S^a_b`: columns `e_k` with signs `η_k`
/// and eigenvalues `s_k = ±1`.
pub fn eigenbasis(s: &TensorValue, g: &TensorValue) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    let n = g.dim();
    let g_inv = crate::square_root::invert(g)?;
    let gm = g.to_matrix();
    let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut eta = Vec::new();
    let mut sv = Vec::new();
    for (sign, proj) in [(1.0, g.plus(s)), (-1.0, g.minus(s))] {
        let mixed = proj.scaled(0.5).raise(0, &g_inv).to_matrix();
        let basis = column_space(&mixed, RANK_TOLERANCE);
        if basis.is_empty() {
            continue;
        }
        let v = DMatrix::from_fn(n, basis.len(), |i, j| basis[j][i]);
        let gram = v.transpose() * &gm * &v;
        let eig = SymmetricEigen::new(gram);
        for k in 0..basis.len() {
            let lam = eig.eigenvalues[k];
            if lam.abs() < 1e-10 {
                return Err(Error::Invalid("eigenbasis: null direction in an eigenspace".into()));
            }
            let col = &v * eig.eigenvectors.column(k) / lam.abs().sqrt();
            cols.push(col);
            eta.push(lam.signum());
            sv.push(sign);
        }
    }
    if cols.len() != n {
        return Err(Error::RankMismatch {
            expected: n,
            found: cols.len(),
        });
    }
    Ok((DMatrix::from_columns(&cols), eta, sv))
}

/// Ranks of `M_I^K = 2δ^[q_(a S^c]_b)` (`I = a ≤ b`, `K = q < c`) and of
/// `[M | ∇S]`, in the orthonormal eigenbasis. `grad_s[c, a, b] = ∇_cS_ab`.
pub fn appendix_rank(s: &TensorValue, g: &TensorValue, grad_s: Option<&TensorValue>) -> Result<AppendixRank> {
    let n = g.dim();
    let (e, _eta, sv) = eigenbasis(s, g)?;
    let p = sv.iter().filter(|v| **v > 0.0).count();
    // S^c_b = s_b δ^c_b in this basis
    let smix = |c: usize, b: usize| if c == b { sv[b] } else { 0.0 };
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let rows: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();
    let cols: Vec<(usize, usize)> = (0..n).flat_map(|q| (q + 1..n).map(move |c| (q, c))).collect();
    let extra = if grad_s.is_some() { n } else { 0 };
    let mut mat = DMatrix::zeros(rows.len(), cols.len() + extra);
    for (r, &(a, b)) in rows.iter().enumerate() {
        for (k, &(q, c)) in cols.iter().enumerate() {
            mat[(r, k)] = 0.5
                * (delta(q, a) * smix(c, b) + delta(q, b) * smix(c, a)
                    - delta(c, a) * smix(q, b)
                    - delta(c, b) * smix(q, a));
        }
    }
    if let Some(ds) = grad_s {
        // transform ∇_cS_ab to the eigenbasis
        for (r, &(a, b)) in rows.iter().enumerate() {
            for c in 0..n {
                let mut v = 0.0;
                for x in 0..n {
                    for y in 0..n {
                        for z in 0..n {
                            v += e[(z, c)] * e[(x, a)] * e[(y, b)] * ds.get(&[z, x, y]);
                        }
                    }
                }
                mat[(r, cols.len() + c)] = v;
            }
        }
    }
    let m_block = mat.columns(0, cols.len()).into_owned();
    let m_rank = numerical_rank(&m_block, RANK_TOLERANCE);
    let combined_rank = if extra > 0 { numerical_rank(&mat, RANK_TOLERANCE) } else { m_rank };
    Ok(AppendixRank {
        p,
        n,
        m_rank,
        combined_rank,
    })
}

/// `∇_cS = A_c×S − S×A_c` for random antisymmetric `A_c` (lowered), which
/// keeps `S×S = g` to first order.
pub fn random_root_gradient(s: &TensorValue, g: &TensorValue, seed: u64) -> Result<TensorValue> {
    let n = g.dim();
    let g_inv = crate::square_root::invert(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TensorValue::zeros(n, &[D, D, D]);
    for c in 0..n {
        let mut a = TensorValue::zeros(n, &[D, D]);
        for i in 0..n {
            for j in i + 1..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a.set(&[i, j], v);
                a.set(&[j, i], -v);
            }
        }
        let axs = crate::tensor::inner_product_x(&a, s, &g_inv)?;
        let sxa = crate::tensor::inner_product_x(s, &a, &g_inv)?;
        let d = axs.minus(&sxa);
        for i in 0..n {
            for j in 0..n {
                out.set(&[c, i, j], *d.get(&[i, j]));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::parse;
    use crate::geometry::{metric_at, MetricField};
    use crate::square_root::RootSource;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bound_table_entries() {
        assert_eq!(dimension_bound(7, 3).unwrap(), DimensionBound::Finite(25));
        assert_eq!(dimension_bound(6, 3).unwrap(), DimensionBound::Finite(20));
        for p in 1..5 {
            assert_eq!(dimension_bound(5, p).unwrap(), DimensionBound::InfinitePossible);
        }
        assert!(dimension_bound(4, 0).is_err());
        assert!(dimension_bound(4, 4).is_err());
    }

    #[test]
    fn flat_constant_root_has_no_structure() {
        let c = names(&["a", "b", "c", "d"]);
        let m = MetricField::diagonal(&c, &["1", "1", "-1", "-1"]).unwrap();
        let bg = Background::new(m, RootSource::Blocks { plus: vec![0, 2] });
        let (ms, sr) = bg.at(&ChartPoint::new(vec![0.1; 4]), 3).unwrap();
        let st = compute_structure(&ms, &sr).unwrap();
        assert_eq!(st.m.max_abs(), 0.0);
        assert_eq!(st.t.max_abs(), 0.0);
        assert_eq!(st.r0.unwrap().value(), 0.0);
    }

    #[test]
    fn block_metric_components() {
        // p = 2 block (x, y), n − p = 2 block (u, v)
        let c = names(&["x", "y", "u", "v"]);
        let m = MetricField::diagonal(&c, &["exp(u*x)", "1 + u^2 + y^2", "2 + sin(x*v)", "exp(y + u)"]).unwrap();
        let bg = Background::new(m.clone(), RootSource::Blocks { plus: vec![0, 1] });
        let x = ChartPoint::new(vec![0.3, -0.2, 0.5, 0.4]);
        let (ms, sr) = bg.at(&x, 2).unwrap();
        let st = compute_structure(&ms, &sr).unwrap();
        let dg = |i: usize, j: usize, k: usize| m.component(i, j).evaluate_jet(x.coords(), 1).unwrap().partial(&[k]).unwrap();
        // M_αAB = ∂_α g_AB, M_Aαβ = −∂_A g_αβ
        for al in 0..2 {
            for aa in 2..4 {
                assert!((st.m.get(&[al, aa, aa]).value() - dg(aa, aa, al)).abs() < 1e-12);
                assert!((st.m.get(&[aa, al, al]).value() + dg(al, al, aa)).abs() < 1e-12);
            }
        }
        // E_A = −∂_A log det g_αβ
        for aa in 2..4 {
            let want = -(dg(0, 0, aa) / m.component(0, 0).eval(x.coords()).unwrap()
                + dg(1, 1, aa) / m.component(1, 1).eval(x.coords()).unwrap());
            assert!((st.e.get(&[aa]).value() - want).abs() < 1e-12);
        }
        assert!(structure_invariants(&ms, &sr, &st) < 1e-12);
    }

    #[test]
    fn double_twisted_metric_has_vanishing_t() {
        let c = names(&["x", "y", "u", "v", "w"]);
        let f = "exp(x + u)";
        let h = "exp(x*u + v)";
        let g = [format!("{f}*(1 + x^2)"),
            format!("{f}"),
            format!("{h}"),
            format!("{h}*(2 + cos(w))"),
            format!("{h}")];
        let refs: Vec<&str> = g.iter().map(|s| s.as_str()).collect();
        let m = MetricField::diagonal(&c, &refs).unwrap();
        let bg = Background::new(m, RootSource::Blocks { plus: vec![0, 1] });
        let r = split_test(&bg, &[ChartPoint::new(vec![0.1, 0.2, 0.3, 0.4, 0.5])], 2).unwrap();
        assert!(r.max_t < 1e-12, "{r:?}");
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn appendix_rank_small_cases() {
        let g = Tensor::from_fn(4, &[D, D], |i| match (i[0] == i[1], i[0]) {
            (false, _) => 0.0,
            (true, 0) => -1.0,
            _ => 1.0,
        });
        let s = Tensor::from_fn(4, &[D, D], |i| if i[0] == i[1] && i[0] >= 2 { -*g.get(i) } else { *g.get(i) });
        let grad = random_root_gradient(&s, &g, 3).unwrap();
        let r = appendix_rank(&s, &g, Some(&grad)).unwrap();
        assert_eq!(r.p, 2);
        assert_eq!(r.m_rank, 4);
        assert_eq!(r.combined_rank, 4);
        let r = appendix_rank(&g, &g, None).unwrap();
        assert_eq!(r.m_rank, 0);
    }

    #[test]
    fn excluded_p_is_named() {
        assert!(matches!(check_normal_p(2, 7), Err(Error::Excluded(_))));
        assert!(matches!(check_normal_p(3, 5), Err(Error::Excluded(_))));
        assert!(check_normal_p(3, 7).is_ok());
    }

    #[test]
    fn killing_field_satisfies_constraints() {
        let c = names(&["a", "b", "c", "d"]);
        let m = MetricField::diagonal(&c, &["1", "1", "1", "1"]).unwrap();
        let bg = Background::new(m, RootSource::Blocks { plus: vec![0, 1] });
        let xi = crate::geometry::VectorFieldSpec::from_strings(&c, &["-b", "a", "1", "0"]).unwrap();
        let r = constraints_for_field(&bg, &xi, &GaugeSource::Extracted, &[ChartPoint::new(vec![0.2; 4])], 2).unwrap();
        assert!(r[0].max() < 1e-14);
        let ms = metric_at(&bg.metric, &ChartPoint::new(vec![0.2; 4]), 2).unwrap();
        let _ = parse("a", &c).unwrap();
        assert_eq!(ms.dim(), 4);
    }
}
