//! Truncated multivariate Taylor polynomials ("jets").
//!
//! A jet of order `K` in `n` variables stores the Taylor coefficients
//! `c_α = ∂^α f / α!` for every multi-index `|α| ≤ K`. Monomials are laid out
//! in graded order (all degree-0 monomials, then degree 1, ...), and the
//! within-degree ordering does not depend on `K`, so truncating a jet to a
//! lower order is a prefix slice. Mixed partials are stored once per
//! unordered multi-index.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::sync::{Arc, OnceLock, RwLock};

/// Monomial bookkeeping shared by every jet over the same number of variables.
#[derive(Debug)]
pub struct JetLayout {
    nvars: usize,
    max_order: usize,
    exponents: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    /// `counts[k]` = number of monomials of degree `≤ k`.
    counts: Vec<usize>,
    /// `α!` per monomial.
    factorials: Vec<f64>,
    /// Product triples `(i, j, k)` with `x^i x^j = x^k`, sorted by `k`.
    products: Vec<(u32, u32, u32)>,
    /// `product_counts[k]` = number of triples whose result has degree `≤ k`.
    product_counts: Vec<usize>,
    /// Per variable: `(src, dst, factor)` with `∂_v x^src = factor · x^dst`, sorted by `src`.
    derivs: Vec<Vec<(u32, u32, f64)>>,
    /// `deriv_counts[v][k]` = entries of `derivs[v]` with `deg(src) ≤ k`.
    deriv_counts: Vec<Vec<usize>>,
}

fn monomials_of_degree(nvars: usize, degree: usize) -> Vec<Vec<u8>> {
    fn rec(var: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        let n = cur.len();
        if var == n - 1 {
            cur[var] = left as u8;
            out.push(cur.clone());
            cur[var] = 0;
            return;
        }
        for e in (0..=left).rev() {
            cur[var] = e as u8;
            rec(var + 1, left - e, cur, out);
        }
        cur[var] = 0;
    }
    let mut out = Vec::new();
    if nvars == 0 {
        if degree == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    let mut cur = vec![0u8; nvars];
    rec(0, degree, &mut cur, &mut out);
    out
}

impl JetLayout {
    fn build(nvars: usize, max_order: usize) -> Self {
        let mut exponents = Vec::new();
        let mut counts = Vec::with_capacity(max_order + 1);
        for d in 0..=max_order {
            exponents.extend(monomials_of_degree(nvars, d));
            counts.push(exponents.len());
        }
        let index: HashMap<Vec<u8>, usize> = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        let factorials = exponents
            .iter()
            .map(|e| e.iter().map(|&k| factorial(k as usize)).product())
            .collect();
        let degree = |e: &[u8]| e.iter().map(|&k| k as usize).sum::<usize>();

        let mut products = Vec::new();
        let mut sum = vec![0u8; nvars];
        for (i, ei) in exponents.iter().enumerate() {
            let di = degree(ei);
            for (j, ej) in exponents.iter().enumerate().take(counts[max_order - di]) {
                for v in 0..nvars {
                    sum[v] = ei[v] + ej[v];
                }
                let k = index[&sum];
                products.push((i as u32, j as u32, k as u32));
            }
        }
        products.sort_by_key(|&(i, j, k)| (k, i, j));
        let product_counts = (0..=max_order)
            .map(|ord| products.partition_point(|&(_, _, k)| (k as usize) < counts[ord]))
            .collect();

        let mut derivs = vec![Vec::new(); nvars];
        let mut deriv_counts = vec![Vec::new(); nvars];
        for v in 0..nvars {
            for (src, e) in exponents.iter().enumerate() {
                if e[v] > 0 {
                    let mut d = e.clone();
                    d[v] -= 1;
                    derivs[v].push((src as u32, index[&d] as u32, e[v] as f64));
                }
            }
            deriv_counts[v] = (0..=max_order)
                .map(|ord| derivs[v].partition_point(|&(s, _, _)| (s as usize) < counts[ord]))
                .collect();
        }

        JetLayout {
            nvars,
            max_order,
            exponents,
            index,
            counts,
            factorials,
            products,
            product_counts,
            derivs,
            deriv_counts,
        }
    }

    /// Shared layout for `nvars` variables covering at least `order`.
    pub fn get(nvars: usize, order: usize) -> Arc<JetLayout> {
        static CACHE: OnceLock<RwLock<HashMap<usize, Arc<JetLayout>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
        if let Some(l) = cache.read().expect("jet layout cache poisoned").get(&nvars) {
            if l.max_order >= order {
                return Arc::clone(l);
            }
        }
        let mut w = cache.write().expect("jet layout cache poisoned");
        if let Some(l) = w.get(&nvars) {
            if l.max_order >= order {
                return Arc::clone(l);
            }
        }
        let layout = Arc::new(JetLayout::build(nvars, order.max(4)));
        w.insert(nvars, Arc::clone(&layout));
        layout
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    /// Number of coefficients in a jet of the given order.
    pub fn len(&self, order: usize) -> usize {
        self.counts[order]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Exponent vector of the `i`-th monomial.
    pub fn exponents(&self, i: usize) -> &[u8] {
        &self.exponents[i]
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Value plus all mixed partial derivatives up to a fixed order at a point.
#[derive(Clone)]
pub struct Jet {
    layout: Arc<JetLayout>,
    order: usize,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("nvars", &self.layout.nvars)
            .field("order", &self.order)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl Jet {
    pub fn constant(nvars: usize, order: usize, value: f64) -> Jet {
        let layout = JetLayout::get(nvars, order);
        let mut coeffs = vec![0.0; layout.len(order)];
        coeffs[0] = value;
        Jet {
            layout,
            order,
            coeffs,
        }
    }

    /// Jet of the coordinate function `x^var` at a point where it equals `value`.
    pub fn variable(nvars: usize, order: usize, var: usize, value: f64) -> Jet {
        let mut j = Jet::constant(nvars, order, value);
        if order > 0 {
            // degree-1 monomials follow the constant term in variable order
            j.coeffs[1 + var] = 1.0;
        }
        j
    }

    pub fn zero_like(&self) -> Jet {
        Jet {
            layout: Arc::clone(&self.layout),
            order: self.order,
            coeffs: vec![0.0; self.coeffs.len()],
        }
    }

    pub fn constant_like(&self, value: f64) -> Jet {
        let mut z = self.zero_like();
        z.coeffs[0] = value;
        z
    }

    pub fn nvars(&self) -> usize {
        self.layout.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Raw Taylor coefficients in graded monomial order.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn layout(&self) -> &JetLayout {
        &self.layout
    }

    /// Mixed partial `∂^m f / ∂x^{i1}...∂x^{im}`; the index list is an unordered multiset.
    /// Returns `None` when `m` exceeds the jet order.
    pub fn partial(&self, vars: &[usize]) -> Option<f64> {
        if vars.len() > self.order {
            return None;
        }
        let mut e = vec![0u8; self.layout.nvars];
        for &v in vars {
            e[v] += 1;
        }
        let i = self.layout.index[&e];
        Some(self.coeffs[i] * self.layout.factorials[i])
    }

    pub fn gradient(&self) -> Vec<f64> {
        (0..self.nvars())
            .map(|v| self.partial(&[v]).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.order {
            return self.clone();
        }
        Jet {
            layout: Arc::clone(&self.layout),
            order,
            coeffs: self.coeffs[..self.layout.len(order)].to_vec(),
        }
    }

    /// `∂f/∂x^var` as a jet of one order less.
    ///
    /// Panics on an order-0 jet; callers check their order budget first.
    pub fn derivative(&self, var: usize) -> Jet {
        assert!(self.order > 0, "derivative of an order-0 jet");
        let ord = self.order - 1;
        let mut out = vec![0.0; self.layout.len(ord)];
        let table = &self.layout.derivs[var][..self.layout.deriv_counts[var][self.order]];
        for &(src, dst, f) in table {
            out[dst as usize] += f * self.coeffs[src as usize];
        }
        Jet {
            layout: Arc::clone(&self.layout),
            order: ord,
            coeffs: out,
        }
    }

    fn binary_layout(&self, other: &Jet) -> (Arc<JetLayout>, usize) {
        let order = self.order.min(other.order);
        let layout = if self.layout.max_order >= other.layout.max_order {
            Arc::clone(&self.layout)
        } else {
            Arc::clone(&other.layout)
        };
        (layout, order)
    }

    pub fn mul_jet(&self, other: &Jet) -> Jet {
        debug_assert_eq!(self.nvars(), other.nvars());
        let (layout, order) = self.binary_layout(other);
        let mut out = vec![0.0; layout.len(order)];
        let a = &self.coeffs;
        let b = &other.coeffs;
        for &(i, j, k) in &layout.products[..layout.product_counts[order]] {
            out[k as usize] += a[i as usize] * b[j as usize];
        }
        Jet {
            layout,
            order,
            coeffs: out,
        }
    }

    /// `self += a * b`, truncated to `self`'s order.
    pub fn add_mul_assign(&mut self, a: &Jet, b: &Jet) {
        self.add_scaled_mul_assign(a, b, 1.0);
    }

    /// `self += c * a * b`.
    pub fn add_scaled_mul_assign(&mut self, a: &Jet, b: &Jet, c: f64) {
        let order = self.order.min(a.order).min(b.order);
        if order < self.order {
            self.coeffs.truncate(self.layout.len(order));
            self.order = order;
        }
        let layout = if a.layout.max_order >= self.layout.max_order {
            Arc::clone(&a.layout)
        } else {
            Arc::clone(&self.layout)
        };
        let (ac, bc) = (&a.coeffs, &b.coeffs);
        for &(i, j, k) in &layout.products[..layout.product_counts[order]] {
            self.coeffs[k as usize] += c * ac[i as usize] * bc[j as usize];
        }
    }

    fn add_jet(&self, other: &Jet, sign: f64) -> Jet {
        let (layout, order) = self.binary_layout(other);
        let len = layout.len(order);
        let coeffs = self.coeffs[..len]
            .iter()
            .zip(&other.coeffs[..len])
            .map(|(a, b)| a + sign * b)
            .collect();
        Jet {
            layout,
            order,
            coeffs,
        }
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet {
            layout: Arc::clone(&self.layout),
            order: self.order,
            coeffs: self.coeffs.iter().map(|x| x * c).collect(),
        }
    }

    /// Evaluates `Σ_k taylor[k] · h^k` where `h = self − value`; `taylor[k] = f^(k)(value)/k!`.
    pub fn compose(&self, taylor: &[f64]) -> Jet {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let top = self.order.min(taylor.len() - 1);
        let mut acc = self.constant_like(taylor[top]);
        for k in (0..top).rev() {
            acc = acc.mul_jet(&h);
            acc.coeffs[0] += taylor[k];
        }
        acc
    }

    pub fn recip(&self) -> Jet {
        let x = self.value();
        let taylor: Vec<f64> = (0..=self.order)
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                s / x.powi(k as i32 + 1)
            })
            .collect();
        self.compose(&taylor)
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let taylor: Vec<f64> = (0..=self.order).map(|k| e / factorial(k)).collect();
        self.compose(&taylor)
    }

    pub fn ln(&self) -> Jet {
        let x = self.value();
        let taylor: Vec<f64> = (0..=self.order)
            .map(|k| {
                if k == 0 {
                    x.ln()
                } else {
                    let s = if k % 2 == 1 { 1.0 } else { -1.0 };
                    s / (k as f64 * x.powi(k as i32))
                }
            })
            .collect();
        self.compose(&taylor)
    }

    fn trig_like(&self, cycle: [f64; 4]) -> Jet {
        let taylor: Vec<f64> = (0..=self.order)
            .map(|k| cycle[k % 4] / factorial(k))
            .collect();
        self.compose(&taylor)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.trig_like([s, c, -s, -c])
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        self.trig_like([c, -s, -c, s])
    }

    pub fn sinh(&self) -> Jet {
        let x = self.value();
        let (s, c) = (x.sinh(), x.cosh());
        self.trig_like([s, c, s, c])
    }

    pub fn cosh(&self) -> Jet {
        let x = self.value();
        let (s, c) = (x.sinh(), x.cosh());
        self.trig_like([c, s, c, s])
    }

    pub fn tanh(&self) -> Jet {
        self.sinh().mul_jet(&self.cosh().recip())
    }

    /// Real power with `value > 0` (or an order-0 jet with `value ≥ 0`).
    pub fn powf(&self, a: f64) -> Jet {
        let x = self.value();
        let mut coef = 1.0;
        let taylor: Vec<f64> = (0..=self.order)
            .map(|k| {
                if k > 0 {
                    coef *= (a - (k as f64 - 1.0)) / k as f64;
                }
                coef * x.powf(a - k as f64)
            })
            .collect();
        self.compose(&taylor)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn powi(&self, k: i32) -> Jet {
        if k < 0 {
            return self.powi(-k).recip();
        }
        let mut result = self.constant_like(1.0);
        let mut base = self.clone();
        let mut e = k as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul_jet(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_jet(&base);
            }
        }
        result
    }

    /// Largest absolute coefficient difference, over the common order.
    pub fn max_abs_diff(&self, other: &Jet) -> f64 {
        let len = self.coeffs.len().min(other.coeffs.len());
        self.coeffs[..len]
            .iter()
            .zip(&other.coeffs[..len])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl PartialEq for Jet {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.coeffs == other.coeffs
    }
}

impl Add<&Jet> for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.add_jet(rhs, 1.0)
    }
}

impl Sub<&Jet> for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.add_jet(rhs, -1.0)
    }
}

impl Mul<&Jet> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        self.mul_jet(rhs)
    }
}

impl Div<&Jet> for &Jet {
    type Output = Jet;
    fn div(self, rhs: &Jet) -> Jet {
        self.mul_jet(&rhs.recip())
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Add<f64> for &Jet {
    type Output = Jet;
    fn add(self, rhs: f64) -> Jet {
        let mut j = self.clone();
        j.coeffs[0] += rhs;
        j
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                (&self).$m(rhs)
            }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                self.$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);
forward_owned!(Div, div);

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        if rhs.order < self.order {
            self.coeffs.truncate(self.layout.len(rhs.order));
            self.order = rhs.order;
        }
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
    }
}

impl SubAssign<&Jet> for Jet {
    fn sub_assign(&mut self, rhs: &Jet) {
        if rhs.order < self.order {
            self.coeffs.truncate(self.layout.len(rhs.order));
            self.order = rhs.order;
        }
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_graded_prefix() {
        let l = JetLayout::get(3, 4);
        assert_eq!(l.len(0), 1);
        assert_eq!(l.len(1), 4);
        assert_eq!(l.len(2), 10);
        assert_eq!(l.len(4), 35);
        for i in 0..l.len(4) {
            let d: u8 = l.exponents(i).iter().sum();
            let lo = if d == 0 { 0 } else { l.len(d as usize - 1) };
            assert!(i >= lo && i < l.len(d as usize));
        }
    }

    #[test]
    fn coordinate_jet_has_unit_gradient() {
        let x = Jet::variable(3, 3, 1, 0.7);
        assert_eq!(x.value(), 0.7);
        assert_eq!(x.gradient(), vec![0.0, 1.0, 0.0]);
        assert_eq!(x.partial(&[1, 1]), Some(0.0));
        assert_eq!(x.partial(&[0, 1, 2]), Some(0.0));
    }

    #[test]
    fn product_rule() {
        let x = Jet::variable(2, 2, 0, 2.0);
        let y = Jet::variable(2, 2, 1, 3.0);
        let p = &x * &y;
        assert_eq!(p.value(), 6.0);
        assert_eq!(p.partial(&[0]), Some(3.0));
        assert_eq!(p.partial(&[1]), Some(2.0));
        assert_eq!(p.partial(&[0, 1]), Some(1.0));
        assert_eq!(p.partial(&[0, 0]), Some(0.0));
        assert_eq!(p.partial(&[1, 1]), Some(0.0));
    }

    #[test]
    fn exp_partials_all_one() {
        let t = Jet::variable(1, 3, 0, 0.0);
        let e = t.exp();
        for m in 0..=3 {
            let idx = vec![0; m];
            assert!((e.partial(&idx).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_lowers_order() {
        let x = Jet::variable(2, 3, 0, 0.5);
        let f = x.powi(3);
        let d = f.derivative(0);
        assert_eq!(d.order(), 2);
        assert!((d.value() - 3.0 * 0.25).abs() < 1e-15);
        assert!((d.partial(&[0]).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn mixed_order_arithmetic_truncates() {
        let x = Jet::variable(2, 4, 0, 1.0);
        let y = Jet::variable(2, 2, 1, 1.0);
        assert_eq!((&x * &y).order(), 2);
        assert_eq!((&x + &y).order(), 2);
    }

    #[test]
    fn recip_and_division() {
        let x = Jet::variable(1, 4, 0, 2.0);
        let r = x.recip();
        // d^k/dx^k 1/x = (-1)^k k! / x^(k+1)
        for k in 0..=4usize {
            let expect = (-1f64).powi(k as i32) * factorial(k) / 2f64.powi(k as i32 + 1);
            assert!((r.partial(&vec![0; k]).unwrap() - expect).abs() < 1e-13);
        }
        let one = &x / &x;
        assert!((one.value() - 1.0).abs() < 1e-15);
        assert!(one.coeffs()[1..].iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn powi_handles_negative_base() {
        let x = Jet::variable(1, 3, 0, -1.5);
        let c = x.powi(3);
        assert!((c.value() + 3.375).abs() < 1e-14);
        assert!((c.partial(&[0]).unwrap() - 3.0 * 2.25).abs() < 1e-13);
    }
}
