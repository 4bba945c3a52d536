//! Dense tensors at a point, p-forms on increasing multi-indices, and the
//! products used throughout: `×`, the rank-2 wedge, full form contractions
//! and the Hodge dual.

use std::collections::HashMap;
use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::field::Jet;

/// Component type of a tensor: plain reals or jets.
pub trait Scalar: Clone + Debug + Send + Sync {
    fn zero_like(&self) -> Self;
    fn constant_like(&self, c: f64) -> Self;
    fn value(&self) -> f64;
    fn plus(&self, o: &Self) -> Self;
    fn minus(&self, o: &Self) -> Self;
    fn times(&self, o: &Self) -> Self;
    fn scaled(&self, c: f64) -> Self;
    /// `self += a * b`
    fn fma_acc(&mut self, a: &Self, b: &Self);
    /// `self += c * a * b`
    fn fma_acc_scaled(&mut self, a: &Self, b: &Self, c: f64);
    fn acc(&mut self, o: &Self);
    fn recip(&self) -> Self;
}

impl Scalar for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn constant_like(&self, c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn plus(&self, o: &Self) -> Self {
        self + o
    }
    fn minus(&self, o: &Self) -> Self {
        self - o
    }
    fn times(&self, o: &Self) -> Self {
        self * o
    }
    fn scaled(&self, c: f64) -> Self {
        self * c
    }
    fn fma_acc(&mut self, a: &Self, b: &Self) {
        *self += a * b;
    }
    fn fma_acc_scaled(&mut self, a: &Self, b: &Self, c: f64) {
        *self += c * a * b;
    }
    fn acc(&mut self, o: &Self) {
        *self += o;
    }
    fn recip(&self) -> Self {
        1.0 / self
    }
}

impl Scalar for Jet {
    fn zero_like(&self) -> Self {
        Jet::zero_like(self)
    }
    fn constant_like(&self, c: f64) -> Self {
        Jet::constant_like(self, c)
    }
    fn value(&self) -> f64 {
        Jet::value(self)
    }
    fn plus(&self, o: &Self) -> Self {
        self + o
    }
    fn minus(&self, o: &Self) -> Self {
        self - o
    }
    fn times(&self, o: &Self) -> Self {
        self.mul_jet(o)
    }
    fn scaled(&self, c: f64) -> Self {
        self.scale(c)
    }
    fn fma_acc(&mut self, a: &Self, b: &Self) {
        self.add_mul_assign(a, b);
    }
    fn fma_acc_scaled(&mut self, a: &Self, b: &Self, c: f64) {
        self.add_scaled_mul_assign(a, b, c);
    }
    fn acc(&mut self, o: &Self) {
        *self += o;
    }
    fn recip(&self) -> Self {
        Jet::recip(self)
    }
}

/// Index position of a tensor slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    /// contravariant
    Up,
    /// covariant
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryKind {
    Symmetric,
    Antisymmetric,
}

/// A declared (anti)symmetry between two slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotSymmetry {
    pub slots: (usize, usize),
    pub kind: SymmetryKind,
}

/// Dense multi-index array over an `n`-dimensional tangent space.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    dim: usize,
    slots: Vec<Slot>,
    data: Vec<T>,
    symmetries: Vec<SlotSymmetry>,
}

pub type TensorValue = Tensor<f64>;
pub type TensorJet = Tensor<Jet>;

fn decode(mut flat: usize, dim: usize, out: &mut [usize]) {
    for k in (0..out.len()).rev() {
        out[k] = flat % dim;
        flat /= dim;
    }
}

impl<T: Clone> Tensor<T> {
    pub fn from_fn(dim: usize, slots: &[Slot], mut f: impl FnMut(&[usize]) -> T) -> Self {
        let len = dim.pow(slots.len() as u32);
        let mut idx = vec![0; slots.len()];
        let data = (0..len)
            .map(|flat| {
                decode(flat, dim, &mut idx);
                f(&idx)
            })
            .collect();
        Tensor {
            dim,
            slots: slots.to_vec(),
            data,
            symmetries: Vec::new(),
        }
    }

    pub fn from_vec(dim: usize, slots: &[Slot], data: Vec<T>) -> Result<Self> {
        let len = dim.pow(slots.len() as u32);
        if data.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: data.len(),
            });
        }
        Ok(Tensor {
            dim,
            slots: slots.to_vec(),
            data,
            symmetries: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn symmetries(&self) -> &[SlotSymmetry] {
        &self.symmetries
    }

    pub fn with_symmetry(mut self, a: usize, b: usize, kind: SymmetryKind) -> Self {
        self.symmetries.push(SlotSymmetry {
            slots: (a, b),
            kind,
        });
        self
    }

    /// Number of covariant slots.
    pub fn covariant_rank(&self) -> usize {
        self.slots.iter().filter(|s| **s == Slot::Down).count()
    }

    pub fn contravariant_rank(&self) -> usize {
        self.slots.iter().filter(|s| **s == Slot::Up).count()
    }

    fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.slots.len());
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> &T {
        &self.data[self.flat(idx)]
    }

    pub fn get_mut(&mut self, idx: &[usize]) -> &mut T {
        let f = self.flat(idx);
        &mut self.data[f]
    }

    pub fn set(&mut self, idx: &[usize], v: T) {
        let f = self.flat(idx);
        self.data[f] = v;
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Tensor<U> {
        Tensor {
            dim: self.dim,
            slots: self.slots.clone(),
            data: self.data.iter().map(f).collect(),
            symmetries: self.symmetries.clone(),
        }
    }

    /// Reorders slots: new slot `k` is old slot `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor<T> {
        let slots: Vec<Slot> = perm.iter().map(|&p| self.slots[p]).collect();
        let mut old = vec![0; perm.len()];
        Tensor::from_fn(self.dim, &slots, |idx| {
            for (k, &p) in perm.iter().enumerate() {
                old[p] = idx[k];
            }
            self.get(&old).clone()
        })
    }

    pub fn set_slots(mut self, slots: &[Slot]) -> Tensor<T> {
        assert_eq!(slots.len(), self.slots.len());
        self.slots = slots.to_vec();
        self
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn values(&self) -> TensorValue {
        self.map(|x| x.value())
    }

    fn zip_with(&self, other: &Tensor<T>, f: impl Fn(&T, &T) -> T) -> Result<Tensor<T>> {
        if self.dim != other.dim || self.slots.len() != other.slots.len() {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                found: other.data.len(),
            });
        }
        Ok(Tensor {
            dim: self.dim,
            slots: self.slots.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(a, b)).collect(),
            symmetries: Vec::new(),
        })
    }

    pub fn plus(&self, other: &Tensor<T>) -> Tensor<T> {
        self.zip_with(other, |a, b| a.plus(b)).expect("tensor shape mismatch")
    }

    pub fn minus(&self, other: &Tensor<T>) -> Tensor<T> {
        self.zip_with(other, |a, b| a.minus(b)).expect("tensor shape mismatch")
    }

    pub fn scaled(&self, c: f64) -> Tensor<T> {
        self.map(|x| x.scaled(c))
    }

    /// Multiplies every component by a scalar of the same kind.
    pub fn times_scalar(&self, s: &T) -> Tensor<T> {
        self.map(|x| x.times(s))
    }

    pub fn zero_like(&self) -> Tensor<T> {
        self.map(|x| x.zero_like())
    }

    pub fn outer(&self, other: &Tensor<T>) -> Tensor<T> {
        let mut slots = self.slots.clone();
        slots.extend_from_slice(&other.slots);
        let r = self.rank();
        Tensor::from_fn(self.dim, &slots, |idx| {
            self.get(&idx[..r]).times(other.get(&idx[r..]))
        })
    }

    /// Trace over slots `a` and `b`.
    pub fn contract(&self, a: usize, b: usize) -> Tensor<T> {
        assert!(a != b && a < self.rank() && b < self.rank());
        let (a, b) = (a.min(b), a.max(b));
        let slots: Vec<Slot> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != a && *k != b)
            .map(|(_, s)| *s)
            .collect();
        let mut full = vec![0; self.rank()];
        Tensor::from_fn(self.dim, &slots, |idx| {
            let mut j = 0;
            for (k, f) in full.iter_mut().enumerate() {
                if k != a && k != b {
                    *f = idx[j];
                    j += 1;
                }
            }
            full[a] = 0;
            full[b] = 0;
            let mut acc = self.get(&full).clone();
            for i in 1..self.dim {
                full[a] = i;
                full[b] = i;
                acc.acc(self.get(&full));
            }
            acc
        })
    }

    /// `new[.., a, ..] = Σ_b mat[a, b] · self[.., b, ..]` on slot `slot`.
    pub fn apply_on_slot(&self, slot: usize, mat: &Tensor<T>, kind: Slot) -> Tensor<T> {
        assert_eq!(mat.rank(), 2);
        let mut slots = self.slots.clone();
        slots[slot] = kind;
        let mut src = vec![0; self.rank()];
        Tensor::from_fn(self.dim, &slots, |idx| {
            src.copy_from_slice(idx);
            src[slot] = 0;
            let mut acc = mat.get(&[idx[slot], 0]).times(self.get(&src));
            for b in 1..self.dim {
                src[slot] = b;
                acc.fma_acc(mat.get(&[idx[slot], b]), self.get(&src));
            }
            acc
        })
    }

    pub fn raise(&self, slot: usize, g_inv: &Tensor<T>) -> Tensor<T> {
        self.apply_on_slot(slot, g_inv, Slot::Up)
    }

    pub fn lower(&self, slot: usize, g: &Tensor<T>) -> Tensor<T> {
        self.apply_on_slot(slot, g, Slot::Down)
    }

    /// Symmetrization over two slots, `T_(ab) = (T_ab + T_ba)/2`.
    pub fn symmetrize(&self, a: usize, b: usize) -> Tensor<T> {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.plus(&self.permute(&perm)).scaled(0.5)
    }

    pub fn antisymmetrize(&self, a: usize, b: usize) -> Tensor<T> {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.minus(&self.permute(&perm)).scaled(0.5)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.value().abs()).fold(0.0, f64::max)
    }

    /// Frobenius norm of the component array (values only).
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|x| x.value() * x.value())
            .sum::<f64>()
            .sqrt()
    }

    /// Verifies every declared slot symmetry within `tol`.
    pub fn check_symmetries(&self, tol: f64) -> Result<()> {
        for s in &self.symmetries {
            let mut perm: Vec<usize> = (0..self.rank()).collect();
            perm.swap(s.slots.0, s.slots.1);
            let swapped = self.permute(&perm);
            let dev = match s.kind {
                SymmetryKind::Symmetric => self.minus(&swapped).max_abs(),
                SymmetryKind::Antisymmetric => self.plus(&swapped).max_abs(),
            };
            if dev > tol {
                return Err(Error::Asymmetric(dev));
            }
        }
        Ok(())
    }
}

impl TensorValue {
    pub fn zeros(dim: usize, slots: &[Slot]) -> TensorValue {
        Tensor::from_fn(dim, slots, |_| 0.0)
    }

    pub fn identity(dim: usize) -> TensorValue {
        Tensor::from_fn(dim, &[Slot::Up, Slot::Down], |i| {
            if i[0] == i[1] {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn from_matrix(m: &[Vec<f64>], slots: [Slot; 2]) -> TensorValue {
        let n = m.len();
        Tensor::from_fn(n, &slots, |i| m[i[0]][i[1]])
    }

    pub fn to_matrix(&self) -> nalgebra::DMatrix<f64> {
        assert_eq!(self.rank(), 2);
        nalgebra::DMatrix::from_fn(self.dim, self.dim, |i, j| *self.get(&[i, j]))
    }

    pub fn max_abs_diff(&self, other: &TensorValue) -> f64 {
        self.minus(other).max_abs()
    }
}

impl TensorJet {
    /// Lowest jet order among the components.
    pub fn order(&self) -> usize {
        self.data.iter().map(|j| j.order()).min().unwrap_or(0)
    }
}

fn check_rank2<T>(t: &Tensor<T>, n: usize) -> Result<()>
where
    T: Clone,
{
    if t.rank() != 2 {
        return Err(Error::Invalid(format!("expected rank 2, got {}", t.rank())));
    }
    if t.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: t.dim(),
        });
    }
    Ok(())
}

/// Two-operand index contraction, e.g. `einsum("ad,dcab->cb", p, r)`.
/// Letters absent from the output are summed; the result slots are all
/// `Down` and can be relabelled with `set_slots`.
pub fn einsum<T: Scalar>(spec: &str, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (lhs, out) = spec.split_once("->").expect("einsum spec needs '->'");
    let (sa, sb) = lhs.split_once(',').expect("einsum spec needs two operands");
    let (sa, sb, out): (Vec<char>, Vec<char>, Vec<char>) =
        (sa.trim().chars().collect(), sb.trim().chars().collect(), out.trim().chars().collect());
    assert_eq!(sa.len(), a.rank(), "einsum operand rank");
    assert_eq!(sb.len(), b.rank(), "einsum operand rank");
    let mut letters: Vec<char> = out.clone();
    for c in sa.iter().chain(&sb) {
        if !letters.contains(c) {
            letters.push(*c);
        }
    }
    let pos = |c: &char| letters.iter().position(|l| l == c).unwrap();
    let ia: Vec<usize> = sa.iter().map(pos).collect();
    let ib: Vec<usize> = sb.iter().map(pos).collect();
    let nfree = out.len();
    let nsum = letters.len() - nfree;
    let n = a.dim();
    let mut vals = vec![0; letters.len()];
    let mut xa = vec![0; sa.len()];
    let mut xb = vec![0; sb.len()];
    let total = n.pow(nsum as u32);
    Tensor::from_fn(n, &vec![Slot::Down; nfree], |idx| {
        vals[..nfree].copy_from_slice(idx);
        let mut acc: Option<T> = None;
        for k in 0..total {
            let mut r = k;
            for v in vals[nfree..].iter_mut() {
                *v = r % n;
                r /= n;
            }
            for (x, i) in xa.iter_mut().zip(&ia) {
                *x = vals[*i];
            }
            for (x, i) in xb.iter_mut().zip(&ib) {
                *x = vals[*i];
            }
            match acc.as_mut() {
                None => acc = Some(a.get(&xa).times(b.get(&xb))),
                Some(s) => s.fma_acc(a.get(&xa), b.get(&xb)),
            }
        }
        acc.expect("non-empty sum")
    })
}

/// `(T × M)_ab = T_ac g^{cd} M_db`.
pub fn inner_product_x<T: Scalar>(t: &Tensor<T>, m: &Tensor<T>, g_inv: &Tensor<T>) -> Result<Tensor<T>> {
    let n = t.dim();
    check_rank2(t, n)?;
    check_rank2(m, n)?;
    check_rank2(g_inv, n)?;
    // raise the first index of M, then contract
    let m_up = m.raise(0, g_inv);
    Ok(Tensor::from_fn(n, &[Slot::Down, Slot::Down], |i| {
        let mut acc = t.get(&[i[0], 0]).times(m_up.get(&[0, i[1]]));
        for c in 1..n {
            acc.fma_acc(t.get(&[i[0], c]), m_up.get(&[c, i[1]]));
        }
        acc
    }))
}

/// `(T ∧ M)_abcd = T_ab M_cd − T_cd M_ab`.
pub fn wedge2<T: Scalar>(t: &Tensor<T>, m: &Tensor<T>) -> Result<Tensor<T>> {
    let n = t.dim();
    check_rank2(t, n)?;
    check_rank2(m, n)?;
    Ok(Tensor::from_fn(n, &[Slot::Down; 4], |i| {
        t.get(&i[..2])
            .times(m.get(&i[2..]))
            .minus(&t.get(&i[2..]).times(m.get(&i[..2])))
    }))
}

/// Magnitude of the triple wedge `A ∧ B ∧ C` of three rank-2 tensors viewed
/// as vectors of `n²` components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleWedge {
    /// Largest 3×3 minor of the stacked component vectors.
    pub max_component: f64,
    /// `max_component / (‖A‖‖B‖‖C‖)`, or 0 when any factor vanishes.
    pub normalized: f64,
}

pub fn wedge3(a: &TensorValue, b: &TensorValue, c: &TensorValue) -> Result<TripleWedge> {
    let n = a.dim();
    check_rank2(a, n)?;
    check_rank2(b, n)?;
    check_rank2(c, n)?;
    let (va, vb, vc) = (a.data(), b.data(), c.data());
    let len = va.len();
    let mut best: f64 = 0.0;
    for i in 0..len {
        for j in i + 1..len {
            // 2×2 minors of (A, B) over (i, j), reused across k
            let m_ab = va[i] * vb[j] - va[j] * vb[i];
            let m_ac = va[i] * vc[j] - va[j] * vc[i];
            let m_bc = vb[i] * vc[j] - vb[j] * vc[i];
            for k in j + 1..len {
                let det = va[k] * m_bc - vb[k] * m_ac + vc[k] * m_ab;
                best = best.max(det.abs());
            }
        }
    }
    let scale = a.norm() * b.norm() * c.norm();
    Ok(TripleWedge {
        max_component: best,
        normalized: if scale > 0.0 { best / scale } else { 0.0 },
    })
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut Vec::new(), &mut out);
    }
    out
}

/// All permutations of `0..k` with their signs.
pub fn permutations(k: usize) -> Vec<(Vec<usize>, f64)> {
    fn heap(k: usize, a: &mut Vec<usize>, sign: &mut f64, out: &mut Vec<(Vec<usize>, f64)>) {
        if k <= 1 {
            out.push((a.clone(), *sign));
            return;
        }
        for i in 0..k - 1 {
            heap(k - 1, a, sign, out);
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            *sign = -*sign;
        }
        heap(k - 1, a, sign, out);
    }
    let mut out = Vec::new();
    let mut a: Vec<usize> = (0..k).collect();
    let mut sign = 1.0;
    heap(k, &mut a, &mut sign, &mut out);
    out
}

/// Sign of the permutation sorting `idx`, or 0 when an index repeats.
pub fn permutation_sign(idx: &[usize]) -> f64 {
    let mut sign = 1.0;
    for i in 0..idx.len() {
        for j in i + 1..idx.len() {
            if idx[i] == idx[j] {
                return 0.0;
            }
            if idx[i] > idx[j] {
                sign = -sign;
            }
        }
    }
    sign
}

/// Determinant of a small square matrix by the Leibniz sum.
pub fn leibniz_det<T: Scalar>(m: &[Vec<T>], perms: &[(Vec<usize>, f64)]) -> T {
    let k = m.len();
    let mut acc = m[0][0].zero_like();
    for (perm, sign) in perms {
        let mut term = m[0][perm[0]].clone();
        for (r, &c) in perm.iter().enumerate().take(k).skip(1) {
            term = term.times(&m[r][c]);
        }
        if *sign > 0.0 {
            acc.acc(&term);
        } else {
            acc = acc.minus(&term);
        }
    }
    acc
}

/// A p-form stored on strictly increasing multi-indices.
#[derive(Debug, Clone)]
pub struct PForm<T> {
    dim: usize,
    degree: usize,
    index_sets: Vec<Vec<usize>>,
    lookup: HashMap<Vec<usize>, usize>,
    comps: Vec<T>,
}

pub type PFormValue = PForm<f64>;

impl<T: Scalar> PForm<T> {
    pub fn from_components(dim: usize, degree: usize, comps: Vec<T>) -> Result<Self> {
        let index_sets = combinations(dim, degree);
        if comps.len() != index_sets.len() {
            return Err(Error::DimensionMismatch {
                expected: index_sets.len(),
                found: comps.len(),
            });
        }
        let lookup = index_sets
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(PForm {
            dim,
            degree,
            index_sets,
            lookup,
            comps,
        })
    }

    /// `k_1 ∧ … ∧ k_p` from covector components; `Ω_I = det[k_j(i_m)]`.
    pub fn from_factors(factors: &[Vec<T>]) -> Result<Self> {
        let p = factors.len();
        if p == 0 {
            return Err(Error::Invalid("a simple form needs at least one factor".into()));
        }
        let n = factors[0].len();
        if factors.iter().any(|f| f.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: factors.iter().map(|f| f.len()).find(|&l| l != n).unwrap_or(n),
            });
        }
        let perms = permutations(p);
        let comps = combinations(n, p)
            .iter()
            .map(|set| {
                let m: Vec<Vec<T>> = factors
                    .iter()
                    .map(|k| set.iter().map(|&i| k[i].clone()).collect())
                    .collect();
                leibniz_det(&m, &perms)
            })
            .collect();
        PForm::from_components(n, p, comps)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> &[T] {
        &self.comps
    }

    pub fn index_sets(&self) -> &[Vec<usize>] {
        &self.index_sets
    }

    pub fn map<U: Scalar>(&self, f: impl FnMut(&T) -> U) -> PForm<U> {
        PForm {
            dim: self.dim,
            degree: self.degree,
            index_sets: self.index_sets.clone(),
            lookup: self.lookup.clone(),
            comps: self.comps.iter().map(f).collect(),
        }
    }

    pub fn values(&self) -> PFormValue {
        self.map(|x| x.value())
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|x| x.scaled(c))
    }

    pub fn times_scalar(&self, s: &T) -> Self {
        self.map(|x| x.times(s))
    }

    pub fn minus(&self, o: &Self) -> Self {
        let mut r = self.clone();
        for (a, b) in r.comps.iter_mut().zip(&o.comps) {
            *a = a.minus(b);
        }
        r
    }

    /// Component at an arbitrary index tuple, with antisymmetric sign.
    pub fn get(&self, idx: &[usize]) -> T {
        let s = permutation_sign(idx);
        if s == 0.0 {
            return self.comps[0].zero_like();
        }
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        let v = &self.comps[self.lookup[&sorted]];
        if s > 0.0 {
            v.clone()
        } else {
            v.scaled(-1.0)
        }
    }

    pub fn component(&self, sorted: &[usize]) -> &T {
        &self.comps[self.lookup[sorted]]
    }

    pub fn to_dense(&self) -> Tensor<T> {
        Tensor::from_fn(self.dim, &vec![Slot::Down; self.degree], |idx| self.get(idx))
            .with_symmetry(0, self.degree.saturating_sub(1), SymmetryKind::Antisymmetric)
    }

    /// Components with all indices raised: `Ω^I = Σ_J det(g^{-1}[I, J]) Ω_J`.
    pub fn raise_all(&self, g_inv: &Tensor<T>) -> PForm<T> {
        let perms = permutations(self.degree);
        let comps = self
            .index_sets
            .iter()
            .map(|i_set| {
                let mut acc = self.comps[0].zero_like();
                for (j, j_set) in self.index_sets.iter().enumerate() {
                    let m: Vec<Vec<T>> = i_set
                        .iter()
                        .map(|&a| j_set.iter().map(|&b| g_inv.get(&[a, b]).clone()).collect())
                        .collect();
                    acc.fma_acc(&leibniz_det(&m, &perms), &self.comps[j]);
                }
                acc
            })
            .collect();
        PForm {
            dim: self.dim,
            degree: self.degree,
            index_sets: self.index_sets.clone(),
            lookup: self.lookup.clone(),
            comps,
        }
    }

    pub fn norm(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| c.value() * c.value())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(|c| c.value().abs()).fold(0.0, f64::max)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `A·B = A_{c1…cp} B^{c1…cp}` (full unrestricted contraction).
pub fn form_dot<T: Scalar>(a: &PForm<T>, b: &PForm<T>, g_inv: &Tensor<T>) -> Result<T> {
    if a.degree != b.degree {
        return Err(Error::DegreeMismatch(a.degree, b.degree));
    }
    if a.dim != b.dim || g_inv.dim() != a.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            found: b.dim,
        });
    }
    let b_up = b.raise_all(g_inv);
    let mut acc = a.comps[0].zero_like();
    for (x, y) in a.comps.iter().zip(&b_up.comps) {
        acc.fma_acc(x, y);
    }
    Ok(acc.scaled(factorial(a.degree)))
}

/// Hodge dual of degree `n − p`, built with `√|det g| ε` in the coordinate
/// orientation; `orientation = ±1` flips it.
pub fn hodge_dual(a: &PFormValue, g: &TensorValue, orientation: f64) -> Result<PFormValue> {
    let n = a.dim;
    check_rank2(g, n)?;
    let gm = g.to_matrix();
    let det = gm.determinant();
    if det.abs() <= 1e-12 {
        return Err(Error::DegenerateMetric {
            point: Vec::new(),
            det,
        });
    }
    let g_inv = gm
        .try_inverse()
        .ok_or(Error::DegenerateMetric {
            point: Vec::new(),
            det,
        })?;
    let g_inv = Tensor::from_fn(n, &[Slot::Up, Slot::Up], |i| g_inv[(i[0], i[1])]);
    let up = a.raise_all(&g_inv);
    let vol = det.abs().sqrt() * orientation;
    let dual_sets = combinations(n, n - a.degree);
    let comps = dual_sets
        .iter()
        .map(|j_set| {
            let i_set: Vec<usize> = (0..n).filter(|k| !j_set.contains(k)).collect();
            let mut full = i_set.clone();
            full.extend_from_slice(j_set);
            vol * permutation_sign(&full) * up.component(&i_set)
        })
        .collect();
    PForm::from_components(n, n - a.degree, comps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minkowski() -> TensorValue {
        Tensor::from_fn(4, &[Slot::Down, Slot::Down], |i| {
            if i[0] != i[1] {
                0.0
            } else if i[0] == 0 {
                1.0
            } else {
                -1.0
            }
        })
    }

    fn inverse(g: &TensorValue) -> TensorValue {
        let m = g.to_matrix().try_inverse().unwrap();
        Tensor::from_fn(g.dim(), &[Slot::Up, Slot::Up], |i| m[(i[0], i[1])])
    }

    #[test]
    fn metric_is_identity_for_x() {
        let g = minkowski();
        let gx = inner_product_x(&g, &g, &inverse(&g)).unwrap();
        assert!(gx.max_abs_diff(&g) < 1e-15);
    }

    #[test]
    fn wedge_of_self_vanishes_and_flips() {
        let g = minkowski();
        let s = Tensor::from_fn(4, &[Slot::Down, Slot::Down], |i| (i[0] * 3 + i[1] * 3) as f64 * 0.1);
        assert_eq!(wedge2(&s, &s).unwrap().max_abs(), 0.0);
        let a = wedge2(&g, &s).unwrap();
        let b = wedge2(&s, &g).unwrap();
        assert!(a.plus(&b).max_abs() == 0.0);
    }

    #[test]
    fn form_dot_timelike_and_spacelike() {
        let g = minkowski();
        let gi = inverse(&g);
        let dt = PForm::from_components(4, 1, vec![2f64.sqrt(), 0.0, 0.0, 0.0]).unwrap();
        assert!((form_dot(&dt, &dt, &gi).unwrap() - 2.0).abs() < 1e-14);
        let dx = PForm::from_components(4, 1, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((form_dot(&dx, &dx, &gi).unwrap() + 1.0).abs() < 1e-15);
        assert!(form_dot(&dx, &PForm::from_components(4, 2, vec![0.0; 6]).unwrap(), &gi).is_err());
    }

    #[test]
    fn dual_of_dt_is_spatial_volume() {
        let g = minkowski();
        let dt = PForm::from_components(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let d = hodge_dual(&dt, &g, 1.0).unwrap();
        // ε_{t x y z} = +1; dt^t = +1
        assert_eq!(d.degree(), 3);
        assert!((d.component(&[1, 2, 3]) - 1.0).abs() < 1e-15);
        assert!(d.components()[..3].iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn permutation_helpers() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(permutations(4).len(), 24);
        let total: f64 = permutations(3).iter().map(|(_, s)| s).sum();
        assert_eq!(total, 0.0);
        assert_eq!(permutation_sign(&[1, 0, 2]), -1.0);
        assert_eq!(permutation_sign(&[1, 1, 2]), 0.0);
    }

    #[test]
    fn contraction_and_raising() {
        let g = minkowski();
        let gi = inverse(&g);
        let mixed = g.raise(0, &gi);
        assert!(mixed.max_abs_diff(&TensorValue::identity(4)) < 1e-15);
        assert_eq!(*mixed.contract(0, 1).get(&[]), 4.0);
    }

    #[test]
    fn symmetry_flags_are_checked() {
        let t = Tensor::from_fn(3, &[Slot::Down, Slot::Down], |i| (i[0] + 2 * i[1]) as f64)
            .with_symmetry(0, 1, SymmetryKind::Symmetric);
        assert!(t.check_symmetries(1e-12).is_err());
        let s = t.symmetrize(0, 1).with_symmetry(0, 1, SymmetryKind::Symmetric);
        assert!(s.check_symmetries(1e-12).is_ok());
    }
}
