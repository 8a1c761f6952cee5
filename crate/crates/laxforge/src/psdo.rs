//! Formal pseudodifferential operators with exact truncation
//! bookkeeping.
//!
//! A [`PsdOp`] is a graded map from integer order to a [`DiffPoly`]
//! coefficient, normalized with coefficients on the left: `sum a_i D^i`.
//! Composition uses the generalized Leibniz rule
//! `D^n ∘ f = sum_k C(n,k) f^(k) D^(n-k)` with the binomial coefficient
//! extended to negative `n` in exact rationals, so negative powers of
//! `D` expand to infinite series. Every operator therefore carries a
//! floor: either it is exact (all coefficients below the stored ones
//! are zero), or coefficients at orders >= floor are exact and orders
//! below are unknown.
//!
//! Operations take an explicit floor and either deliver coefficients
//! that are exact at all retained orders or fail with a depth error;
//! they never silently return polluted coefficients. Lax operators are
//! kept as regenerable constructors ([`LaxOp`]): a finite differential
//! part plus a structured integral tail `D^-1 ∘ w`, so any floor can be
//! materialized on demand.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::diffpoly::{DiffPoly, TermJson};
use crate::error::{Error, Result};
use crate::morphism::Morphism;
use crate::ring::Ring;

/// Truncation state of an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Floor {
    /// Finite expression: all unstored coefficients are zero.
    Exact,
    /// Coefficients at orders >= the value are exact; below, unknown.
    Truncated(i64),
}

impl Floor {
    fn merge(self, other: Floor) -> Floor {
        match (self, other) {
            (Floor::Exact, f) => f,
            (f, Floor::Exact) => f,
            (Floor::Truncated(a), Floor::Truncated(b)) => Floor::Truncated(a.max(b)),
        }
    }
}

/// A formal series `sum a_i D^i` in left normal form.
#[derive(Clone)]
pub struct PsdOp {
    ring: Arc<Ring>,
    coeffs: BTreeMap<i64, DiffPoly>,
    floor: Floor,
}

impl PartialEq for PsdOp {
    fn eq(&self, other: &Self) -> bool {
        self.ring.id() == other.ring.id()
            && self.floor == other.floor
            && self.coeffs == other.coeffs
    }
}

fn assert_same_ring(a: &PsdOp, b: &PsdOp) {
    assert_eq!(
        a.ring.id(),
        b.ring.id(),
        "ring context mismatch between operators"
    );
}

/// Generalized binomial coefficient C(n, k) for integer n (possibly
/// negative): n(n-1)...(n-k+1) / k!.
pub fn binomial(n: i64, k: u32) -> BigRational {
    let mut num = BigRational::one();
    for j in 0..k {
        num *= BigRational::from_integer((n - i64::from(j)).into());
        num /= BigRational::from_integer((i64::from(j) + 1).into());
    }
    num
}

impl PsdOp {
    pub fn zero(ring: &Arc<Ring>) -> Self {
        PsdOp {
            ring: Arc::clone(ring),
            coeffs: BTreeMap::new(),
            floor: Floor::Exact,
        }
    }

    pub fn identity(ring: &Arc<Ring>) -> Self {
        Self::from_parts(ring, vec![(0, DiffPoly::one(ring))])
    }

    /// The single term `D^n` (any integer n).
    pub fn d_power(ring: &Arc<Ring>, n: i64) -> Self {
        Self::from_parts(ring, vec![(n, DiffPoly::one(ring))])
    }

    /// Exact operator from explicit coefficients.
    pub fn from_parts(ring: &Arc<Ring>, parts: Vec<(i64, DiffPoly)>) -> Self {
        let mut coeffs = BTreeMap::new();
        for (ord, p) in parts {
            if p.is_zero() {
                continue;
            }
            assert_eq!(p.ring().id(), ring.id(), "coefficient from a foreign ring");
            let entry = coeffs.entry(ord).or_insert_with(|| DiffPoly::zero(ring));
            *entry = entry.add(&p);
            if entry.is_zero() {
                coeffs.remove(&ord);
            }
        }
        PsdOp {
            ring: Arc::clone(ring),
            coeffs,
            floor: Floor::Exact,
        }
    }

    /// An order-0 multiplication operator.
    pub fn from_poly(p: &DiffPoly) -> Self {
        Self::from_parts(p.ring(), vec![(0, p.clone())])
    }

    fn normalized(ring: &Arc<Ring>, coeffs: BTreeMap<i64, DiffPoly>, floor: Floor) -> Self {
        let mut op = PsdOp {
            ring: Arc::clone(ring),
            coeffs,
            floor,
        };
        op.coeffs.retain(|_, p| !p.is_zero());
        if let Floor::Truncated(f) = op.floor {
            op.coeffs.retain(|&ord, _| ord >= f);
        }
        op
    }

    /// Forget everything below `floor`, marking the operator truncated.
    pub fn truncate(&self, floor: i64) -> PsdOp {
        Self::normalized(
            &self.ring,
            self.coeffs.clone(),
            self.floor.merge(Floor::Truncated(floor)),
        )
    }

    pub fn ring(&self) -> &Arc<Ring> {
        &self.ring
    }

    pub fn floor(&self) -> Floor {
        self.floor
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.floor, Floor::Exact)
    }

    /// Max order with a nonzero coefficient, `None` for the zero
    /// operator (or an all-unknown truncation).
    pub fn top(&self) -> Option<i64> {
        self.coeffs.keys().next_back().copied()
    }

    /// True if no retained coefficient is nonzero.
    pub fn is_zero_retained(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn orders(&self) -> impl Iterator<Item = (i64, &DiffPoly)> {
        self.coeffs.iter().map(|(&o, p)| (o, p))
    }

    /// The exact coefficient at order `i`; zero if absent. Errors below
    /// the floor of a truncated operator.
    pub fn coeff_at(&self, i: i64) -> Result<DiffPoly> {
        if let Floor::Truncated(f) = self.floor {
            if i < f {
                return Err(Error::BelowFloor { order: i, floor: f });
            }
        }
        Ok(self
            .coeffs
            .get(&i)
            .cloned()
            .unwrap_or_else(|| DiffPoly::zero(&self.ring)))
    }

    /// Keep exactly the coefficients at orders >= s. The result is
    /// exact whenever `s` lies at or above the floor.
    pub fn project_geq(&self, s: i64) -> Result<PsdOp> {
        if let Floor::Truncated(f) = self.floor {
            if s < f {
                return Err(Error::BelowFloor { order: s, floor: f });
            }
        }
        Ok(PsdOp {
            ring: Arc::clone(&self.ring),
            coeffs: self.coeffs.range(s..).map(|(&o, p)| (o, p.clone())).collect(),
            floor: Floor::Exact,
        })
    }

    /// The strictly-below-s part, with the original floor.
    pub fn project_lt(&self, s: i64) -> PsdOp {
        PsdOp {
            ring: Arc::clone(&self.ring),
            coeffs: self.coeffs.range(..s).map(|(&o, p)| (o, p.clone())).collect(),
            floor: self.floor,
        }
    }

    pub fn neg(&self) -> PsdOp {
        PsdOp {
            ring: Arc::clone(&self.ring),
            coeffs: self.coeffs.iter().map(|(&o, p)| (o, p.neg())).collect(),
            floor: self.floor,
        }
    }

    pub fn add(&self, other: &PsdOp) -> PsdOp {
        assert_same_ring(self, other);
        let mut coeffs = self.coeffs.clone();
        for (&o, p) in &other.coeffs {
            let entry = coeffs.entry(o).or_insert_with(|| DiffPoly::zero(&self.ring));
            *entry = entry.add(p);
        }
        Self::normalized(&self.ring, coeffs, self.floor.merge(other.floor))
    }

    pub fn sub(&self, other: &PsdOp) -> PsdOp {
        self.add(&other.neg())
    }

    /// Left multiplication by a coefficient polynomial.
    pub fn scale_left(&self, c: &DiffPoly) -> PsdOp {
        if c.is_zero() {
            return Self::normalized(&self.ring, BTreeMap::new(), self.floor);
        }
        Self::normalized(
            &self.ring,
            self.coeffs.iter().map(|(&o, p)| (o, c.mul(p))).collect(),
            self.floor,
        )
    }

    /// Coefficient-wise image under a map; floor is preserved.
    pub fn map_coeffs<F>(&self, mut f: F) -> Result<PsdOp>
    where
        F: FnMut(&DiffPoly) -> Result<DiffPoly>,
    {
        let mut coeffs = BTreeMap::new();
        let mut ring: Option<Arc<Ring>> = None;
        for (&o, p) in &self.coeffs {
            let q = f(p)?;
            if ring.is_none() {
                ring = Some(Arc::clone(q.ring()));
            }
            if !q.is_zero() {
                coeffs.insert(o, q);
            }
        }
        Ok(PsdOp {
            ring: ring.unwrap_or_else(|| Arc::clone(&self.ring)),
            coeffs,
            floor: self.floor,
        })
    }

    /// Apply a purely differential operator to a function:
    /// `sum a_i D^i(f)`.
    pub fn apply(&self, f: &DiffPoly) -> Result<DiffPoly> {
        assert_eq!(self.ring.id(), f.ring().id(), "ring context mismatch");
        let has_unknown_negative = match self.floor {
            Floor::Exact => false,
            Floor::Truncated(fl) => fl < 0,
        };
        if has_unknown_negative || self.coeffs.keys().next().map_or(false, |&o| o < 0) {
            return Err(Error::NegativeOrderApply);
        }
        let mut acc = DiffPoly::zero(&self.ring);
        for (&o, c) in &self.coeffs {
            acc = acc.add(&c.mul(&f.nth_derivative(o as u32)));
        }
        Ok(acc)
    }

    /// Compose two operators, keeping every coefficient at orders >=
    /// `floor` exact. Truncated operands must be deep enough for that;
    /// otherwise the composition is refused.
    pub fn compose(a: &PsdOp, b: &PsdOp, floor: i64) -> Result<PsdOp> {
        assert_same_ring(a, b);
        if a.coeffs.is_empty() || b.coeffs.is_empty() {
            let fl = match a.floor.merge(b.floor) {
                Floor::Exact => Floor::Exact,
                Floor::Truncated(_) => Floor::Truncated(floor),
            };
            return Ok(Self::normalized(&a.ring, BTreeMap::new(), fl));
        }
        let ta = a.top().unwrap();
        let tb = b.top().unwrap();
        if let Floor::Truncated(fa) = a.floor {
            if fa > floor - tb {
                return Err(Error::DepthUnreachable {
                    needed: floor - tb,
                    floor: fa,
                });
            }
        }
        if let Floor::Truncated(fb) = b.floor {
            if fb > floor - ta {
                return Err(Error::DepthUnreachable {
                    needed: floor - ta,
                    floor: fb,
                });
            }
        }
        let mut acc: BTreeMap<i64, DiffPoly> = BTreeMap::new();
        let mut exact = a.is_exact() && b.is_exact();
        for (&n, f) in &a.coeffs {
            for (&m, g) in &b.coeffs {
                let mut dg = g.clone();
                let mut k: u32 = 0;
                loop {
                    if n >= 0 && i64::from(k) > n {
                        break;
                    }
                    if dg.is_zero() {
                        break;
                    }
                    let ord = n + m - i64::from(k);
                    if n < 0 && ord < floor {
                        // infinite expansion cut off at the working floor
                        exact = false;
                        break;
                    }
                    let c = binomial(n, k);
                    if !c.is_zero() {
                        let term = f.mul(&dg).scale(&c);
                        if !term.is_zero() {
                            let entry =
                                acc.entry(ord).or_insert_with(|| DiffPoly::zero(&a.ring));
                            *entry = entry.add(&term);
                        }
                    }
                    k += 1;
                    dg = dg.total_derivative();
                }
            }
        }
        let fl = if exact { Floor::Exact } else { Floor::Truncated(floor) };
        Ok(Self::normalized(&a.ring, acc, fl))
    }

    /// `[a, b] = a∘b - b∘a` at the given floor.
    pub fn commutator(a: &PsdOp, b: &PsdOp, floor: i64) -> Result<PsdOp> {
        Ok(Self::compose(a, b, floor)?.sub(&Self::compose(b, a, floor)?))
    }

    /// Normal form of `D^-1 ∘ w`:
    /// `sum_k (-1)^k D^k(w) D^(-1-k)` down to `floor`.
    pub fn expand_tail(w: &DiffPoly, floor: i64) -> Result<PsdOp> {
        if floor > -1 {
            return Err(Error::BadTailFloor(floor));
        }
        let ring = w.ring();
        let mut coeffs = BTreeMap::new();
        let mut dk = w.clone();
        let mut k: i64 = 0;
        let mut exact = false;
        loop {
            if dk.is_zero() {
                exact = true;
                break;
            }
            let ord = -1 - k;
            if ord < floor {
                break;
            }
            let term = if k % 2 == 0 { dk.clone() } else { dk.neg() };
            coeffs.insert(ord, term);
            k += 1;
            dk = dk.total_derivative();
        }
        let fl = if exact { Floor::Exact } else { Floor::Truncated(floor) };
        Ok(Self::normalized(ring, coeffs, fl))
    }

    /// Verify the negative part has the integral-tail shape down to the
    /// requested depth and recover the kernel `w` of `D^-1 ∘ w`.
    pub fn recognize_tail(&self, depth: u32) -> Result<IntegralTail> {
        if let Floor::Truncated(f) = self.floor {
            let needed = -1 - i64::from(depth);
            if f > needed {
                return Err(Error::DepthUnreachable { needed, floor: f });
            }
        }
        let kernel = self.coeff_at(-1)?;
        let mut expect = kernel.clone();
        for k in 1..=depth {
            expect = expect.total_derivative();
            let want = if k % 2 == 0 { expect.clone() } else { expect.neg() };
            let got = self.coeff_at(-1 - i64::from(k))?;
            if got != want {
                return Err(Error::TailInconsistent {
                    order: -1 - i64::from(k),
                    depth,
                });
            }
        }
        Ok(IntegralTail { kernel })
    }

    /// Replace `D` by `phi * D'` of the target ring and re-expand into
    /// left normal form. `phi` must be an invertible monomial of the
    /// target ring; `rewriter` converts coefficient jets (it must carry
    /// the same multiplier).
    pub fn substitute_symbol(
        &self,
        rewriter: &mut Morphism,
        phi: &DiffPoly,
        floor: i64,
    ) -> Result<PsdOp> {
        let dst = Arc::clone(rewriter.target());
        let phi_inv = phi
            .try_inverse()
            .map_err(|_| Error::BadMultiplier(phi.to_string()))?;
        if let Floor::Truncated(f) = self.floor {
            if f > floor {
                return Err(Error::DepthUnreachable {
                    needed: floor,
                    floor: f,
                });
            }
        }
        // powers of (phi D'): positive by iterated composition,
        // negative as k-fold composition of D'^-1 ∘ phi^-1
        let base = PsdOp::from_parts(&dst, vec![(1, phi.clone())]);
        let mut pos_powers: Vec<PsdOp> = vec![PsdOp::identity(&dst), base.clone()];
        let mut result = PsdOp::zero(&dst);
        let mut truncated = !self.is_exact();
        for (&n, c) in &self.coeffs {
            let tc = rewriter.apply(c)?;
            let factor = if n >= 0 {
                while (pos_powers.len() as i64) <= n {
                    let last = pos_powers.last().unwrap();
                    pos_powers.push(PsdOp::compose(last, &base, 0)?);
                }
                pos_powers[n as usize].clone()
            } else {
                truncated = true;
                let k = (-n) as u32;
                neg_power(&phi_inv, k, floor)?
            };
            result = result.add(&factor.scale_left(&tc));
        }
        if truncated {
            result = Self::normalized(&dst, result.coeffs, Floor::Truncated(floor));
        }
        Ok(result)
    }

    /// Compare two operators on the orders both retain.
    pub fn retained_equal(a: &PsdOp, b: &PsdOp) -> bool {
        assert_same_ring(a, b);
        let floor = a.floor.merge(b.floor);
        let check = |ord: i64| match floor {
            Floor::Exact => true,
            Floor::Truncated(f) => ord >= f,
        };
        for (&o, p) in &a.coeffs {
            if check(o) && b.coeffs.get(&o).map_or(true, |q| q != p) {
                return false;
            }
        }
        for (&o, q) in &b.coeffs {
            if check(o) && a.coeffs.get(&o).map_or(true, |p| p != q) {
                return false;
            }
        }
        true
    }

    /// Serializable canonical form (orders descending).
    pub fn to_json(&self) -> PsdOpJson {
        let floor = match self.floor {
            Floor::Exact => self.coeffs.keys().next().copied().unwrap_or(0),
            Floor::Truncated(f) => f,
        };
        PsdOpJson {
            floor,
            coeffs: self
                .coeffs
                .iter()
                .rev()
                .map(|(&o, p)| OrderJson {
                    order: o,
                    poly: p.to_json(),
                })
                .collect(),
        }
    }
}

/// `(D'^-1 ∘ phi^-1)^k`, exact at orders >= floor.
fn neg_power(phi_inv: &DiffPoly, k: u32, floor: i64) -> Result<PsdOp> {
    // top order is -k, so nothing lives above it
    let eff = floor.min(-i64::from(k));
    let mut acc = PsdOp::expand_tail(phi_inv, eff + i64::from(k) - 1)?;
    for j in 2..=k {
        let needed = eff + i64::from(k - j);
        let single = PsdOp::expand_tail(phi_inv, needed + i64::from(j) - 1)?;
        acc = PsdOp::compose(&acc, &single, needed)?;
    }
    Ok(if eff == floor { acc } else { acc.truncate(floor) })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderJson {
    pub order: i64,
    pub poly: Vec<TermJson>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PsdOpJson {
    pub floor: i64,
    pub coeffs: Vec<OrderJson>,
}

impl fmt::Display for PsdOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = format!("D_{}", self.ring.axis().letter());
        if self.coeffs.is_empty() {
            write!(f, "0")?;
        } else {
            for (i, (&o, p)) in self.coeffs.iter().rev().enumerate() {
                if i > 0 {
                    write!(f, " + ")?;
                }
                if o == 0 {
                    if p.terms().len() > 1 {
                        write!(f, "({})", p)?;
                    } else {
                        write!(f, "{}", p)?;
                    }
                    continue;
                }
                if p.is_one() {
                    // bare power of D
                } else if p.terms().len() > 1 {
                    write!(f, "({})*", p)?;
                } else {
                    write!(f, "{}*", p)?;
                }
                if o == 1 {
                    write!(f, "{}", d)?;
                } else {
                    write!(f, "{}^{}", d, o)?;
                }
            }
        }
        if let Floor::Truncated(fl) = self.floor {
            write!(f, " + O({}^{})", d, fl - 1)?;
        }
        Ok(())
    }
}

impl fmt::Debug for PsdOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// The structured integral term `D^-1 ∘ w`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralTail {
    pub kernel: DiffPoly,
}

/// The tail shape of a Lax constructor.
#[derive(Debug, Clone)]
pub enum LaxTail {
    None,
    /// `D^-1 ∘ w`, regenerable to any depth.
    Integral(DiffPoly),
    /// Independent coefficients at negative orders, declared down to
    /// `min_order`; deeper floors are unreachable.
    General { min_order: i64 },
}

/// A regenerable Lax operator: finite differential data plus a tail
/// that can be materialized to any requested floor.
#[derive(Clone)]
pub struct LaxOp {
    ring: Arc<Ring>,
    parts: BTreeMap<i64, DiffPoly>,
    tail: LaxTail,
}

impl LaxOp {
    pub fn new(ring: &Arc<Ring>, parts: Vec<(i64, DiffPoly)>, tail: LaxTail) -> Self {
        let mut map = BTreeMap::new();
        for (o, p) in parts {
            if let LaxTail::Integral(_) = tail {
                assert!(o >= 0, "integral-tail Lax parts must be differential");
            }
            if !p.is_zero() {
                assert_eq!(p.ring().id(), ring.id());
                map.insert(o, p);
            }
        }
        if let LaxTail::Integral(w) = &tail {
            assert_eq!(w.ring().id(), ring.id());
        }
        LaxOp {
            ring: Arc::clone(ring),
            parts: map,
            tail,
        }
    }

    pub fn ring(&self) -> &Arc<Ring> {
        &self.ring
    }

    pub fn tail(&self) -> &LaxTail {
        &self.tail
    }

    pub fn parts(&self) -> impl Iterator<Item = (i64, &DiffPoly)> {
        self.parts.iter().map(|(&o, p)| (o, p))
    }

    pub fn top_order(&self) -> i64 {
        self.parts.keys().next_back().copied().unwrap_or(-1)
    }

    /// Coefficient of the constructor at an order (not materialized).
    pub fn part_at(&self, order: i64) -> DiffPoly {
        self.parts
            .get(&order)
            .cloned()
            .unwrap_or_else(|| DiffPoly::zero(&self.ring))
    }

    /// Materialize to a floor. Structured tails expand on demand; a
    /// general tail cannot regenerate below its declared depth.
    pub fn materialize(&self, floor: i64) -> Result<PsdOp> {
        let base = PsdOp::from_parts(
            &self.ring,
            self.parts.iter().map(|(&o, p)| (o, p.clone())).collect(),
        );
        match &self.tail {
            LaxTail::None => Ok(base),
            LaxTail::Integral(w) => {
                if floor > -1 {
                    // nothing of the tail survives above order -1
                    Ok(base.truncate(floor))
                } else {
                    Ok(base.add(&PsdOp::expand_tail(w, floor)?))
                }
            }
            LaxTail::General { min_order } => {
                if floor < *min_order {
                    Err(Error::DepthUnreachable {
                        needed: floor,
                        floor: *min_order,
                    })
                } else {
                    Ok(base.truncate(floor))
                }
            }
        }
    }

    /// `L^q` with all retained coefficients exact at orders >= floor.
    /// Operand floors are derived so the result is trustworthy; the
    /// only failure mode is a general tail declared too shallow.
    pub fn power(&self, q: u32, floor: i64) -> Result<PsdOp> {
        let n = self.top_order().max(1);
        match q {
            0 => Ok(PsdOp::identity(&self.ring)),
            1 => self.materialize(floor),
            _ => {
                let a = self.power(q - 1, floor - n)?;
                let b = self.materialize(floor - i64::from(q - 1) * n)?;
                PsdOp::compose(&a, &b, floor)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{Axis, JetKey, RingBuilder};

    fn bk_ring() -> Arc<Ring> {
        let mut b = RingBuilder::new(Axis::X);
        b.jet("u", true).unwrap();
        b.jet("v", false).unwrap();
        b.jet("w", false).unwrap();
        b.constant("eps").unwrap();
        b.build()
    }

    fn p(r: &Arc<Ring>, s: &str) -> DiffPoly {
        DiffPoly::parse(r, s).unwrap()
    }

    /// The extended Broer-Kaup operator `u D + v + D^-1 ∘ w`.
    fn bk_lax(r: &Arc<Ring>) -> LaxOp {
        LaxOp::new(
            r,
            vec![(1, p(r, "u")), (0, p(r, "v"))],
            LaxTail::Integral(p(r, "w")),
        )
    }

    #[test]
    fn binomial_extends_to_negative_orders() {
        assert_eq!(binomial(3, 2), crate::ring::rat(3));
        assert_eq!(binomial(-1, 2), crate::ring::rat(1));
        assert_eq!(binomial(-1, 3), crate::ring::rat(-1));
        assert_eq!(binomial(-2, 2), crate::ring::rat(3));
    }

    #[test]
    fn expand_tail_leibniz() {
        let r = bk_ring();
        // kernel u: u D^-1 - u_x D^-2 + u_xx D^-3
        let t = PsdOp::expand_tail(&p(&r, "u"), -3).unwrap();
        assert_eq!(t.coeff_at(-1).unwrap(), p(&r, "u"));
        assert_eq!(t.coeff_at(-2).unwrap(), p(&r, "-u_x"));
        assert_eq!(t.coeff_at(-3).unwrap(), p(&r, "u_xx"));
        assert!(matches!(t.floor(), Floor::Truncated(-3)));
    }

    #[test]
    fn expand_tail_constant_kernel_is_exact() {
        let r = bk_ring();
        let t = PsdOp::expand_tail(&DiffPoly::one(&r), -4).unwrap();
        assert!(t.is_exact());
        assert_eq!(t.coeff_at(-1).unwrap(), DiffPoly::one(&r));
        assert!(t.coeff_at(-2).unwrap().is_zero());
    }

    #[test]
    fn expand_tail_broer_kaup_kernel() {
        // kernel w*u (the transformed tail): (wu) D^-1 - (w_x u + w u_x) D^-2
        let r = bk_ring();
        let t = PsdOp::expand_tail(&p(&r, "w*u"), -2).unwrap();
        assert_eq!(t.coeff_at(-1).unwrap(), p(&r, "u*w"));
        assert_eq!(t.coeff_at(-2).unwrap(), p(&r, "-u_x*w - u*w_x"));
    }

    #[test]
    fn expand_tail_rejects_positive_floor() {
        let r = bk_ring();
        assert!(matches!(
            PsdOp::expand_tail(&p(&r, "u"), 0),
            Err(Error::BadTailFloor(0))
        ));
    }

    #[test]
    fn compose_first_order_leibniz() {
        let r = bk_ring();
        let d = PsdOp::d_power(&r, 1);
        let u = PsdOp::from_poly(&p(&r, "u"));
        let got = PsdOp::compose(&d, &u, 0).unwrap();
        // D ∘ u = u D + u_x
        assert!(got.is_exact());
        assert_eq!(got.coeff_at(1).unwrap(), p(&r, "u"));
        assert_eq!(got.coeff_at(0).unwrap(), p(&r, "u_x"));
    }

    #[test]
    fn compose_square_of_ud() {
        let r = bk_ring();
        let ud = PsdOp::from_parts(&r, vec![(1, p(&r, "u"))]);
        let got = PsdOp::compose(&ud, &ud, 0).unwrap();
        assert_eq!(got.coeff_at(2).unwrap(), p(&r, "u^2"));
        assert_eq!(got.coeff_at(1).unwrap(), p(&r, "u*u_x"));
        assert!(got.coeff_at(0).unwrap().is_zero());
    }

    #[test]
    fn compose_dinv_with_function_matches_tail() {
        let r = bk_ring();
        let dinv = PsdOp::d_power(&r, -1);
        let u = PsdOp::from_poly(&p(&r, "u"));
        let got = PsdOp::compose(&dinv, &u, -3).unwrap();
        let want = PsdOp::expand_tail(&p(&r, "u"), -3).unwrap();
        assert!(PsdOp::retained_equal(&got, &want));
        assert_eq!(got.coeff_at(-3).unwrap(), p(&r, "u_xx"));
    }

    #[test]
    fn compose_depth_errors_are_detected() {
        let r = bk_ring();
        let t = PsdOp::expand_tail(&p(&r, "u"), -2).unwrap(); // floor -2
        let d2 = PsdOp::d_power(&r, 2);
        // composing with D^2 pollutes orders up to -2 + 2 = 0
        let err = PsdOp::compose(&t, &d2, -1);
        assert!(matches!(err, Err(Error::DepthUnreachable { .. })));
        let err2 = PsdOp::compose(&d2, &t, -3);
        assert!(matches!(err2, Err(Error::DepthUnreachable { .. })));
        // an order-0 right factor needs no extra depth
        assert!(PsdOp::compose(&PsdOp::identity(&r), &t, -2).is_ok());
    }

    #[test]
    fn projection_and_coefficient_extraction() {
        let r = bk_ring();
        let l = bk_lax(&r).materialize(-4).unwrap();
        // P>=1 keeps only u D
        let p1 = l.project_geq(1).unwrap();
        assert!(p1.is_exact());
        assert_eq!(p1.coeff_at(1).unwrap(), p(&r, "u"));
        assert_eq!(p1.top(), Some(1));
        // P>=2 of a first-order operator is zero
        assert!(l.project_geq(2).unwrap().is_zero_retained());
        // [L]_0 = v, [D]_0 = 0
        assert_eq!(l.coeff_at(0).unwrap(), p(&r, "v"));
        assert!(PsdOp::d_power(&r, 1).coeff_at(0).unwrap().is_zero());
        // below-floor extraction is refused
        assert!(matches!(
            l.coeff_at(-5),
            Err(Error::BelowFloor {
                order: -5,
                floor: -4
            })
        ));
        assert!(matches!(l.project_geq(-5), Err(Error::BelowFloor { .. })));
    }

    #[test]
    fn projection_split_reconstructs() {
        let r = bk_ring();
        let l = bk_lax(&r).materialize(-5).unwrap();
        let hi = l.project_geq(0).unwrap();
        let lo = l.project_lt(0);
        assert!(PsdOp::retained_equal(&hi.add(&lo), &l));
    }

    #[test]
    fn square_and_project_broer_kaup() {
        // P>=1(L^2) = u^2 D^2 + (u u_x + 2 u v) D
        let r = bk_ring();
        let l2 = bk_lax(&r).power(2, 0).unwrap();
        let proj = l2.project_geq(1).unwrap();
        assert_eq!(proj.coeff_at(2).unwrap(), p(&r, "u^2"));
        assert_eq!(proj.coeff_at(1).unwrap(), p(&r, "u*u_x + 2*u*v"));
        // [L^2]_0 = 2uw + u v_x + v^2
        assert_eq!(l2.coeff_at(0).unwrap(), p(&r, "2*u*w + u*v_x + v^2"));
    }

    #[test]
    fn commutator_with_d_is_coefficientwise_derivative() {
        let r = bk_ring();
        let l = bk_lax(&r).materialize(-6).unwrap();
        let d = PsdOp::d_power(&r, 1);
        let got = PsdOp::commutator(&d, &l, -4).unwrap();
        for ord in -4..=1 {
            assert_eq!(
                got.coeff_at(ord).unwrap(),
                l.coeff_at(ord).unwrap().total_derivative(),
                "order {}",
                ord
            );
        }
    }

    #[test]
    fn commutator_of_vector_fields() {
        let r = bk_ring();
        let ud = PsdOp::from_parts(&r, vec![(1, p(&r, "u"))]);
        let vd = PsdOp::from_parts(&r, vec![(1, p(&r, "v"))]);
        let got = PsdOp::commutator(&ud, &vd, 0).unwrap();
        assert_eq!(got.coeff_at(1).unwrap(), p(&r, "u*v_x - u_x*v"));
        assert!(got.coeff_at(2).unwrap().is_zero());
        // [A, A] = 0
        let zero = PsdOp::commutator(&ud, &ud, 0).unwrap();
        assert!(zero.is_zero_retained());
    }

    #[test]
    fn power_of_d_plus_v() {
        let r = bk_ring();
        let l = LaxOp::new(
            &r,
            vec![(1, DiffPoly::one(&r)), (0, p(&r, "v"))],
            LaxTail::None,
        );
        let sq = l.power(2, 0).unwrap();
        assert!(sq.is_exact());
        assert_eq!(sq.coeff_at(2).unwrap(), DiffPoly::one(&r));
        assert_eq!(sq.coeff_at(1).unwrap(), p(&r, "2*v"));
        assert_eq!(sq.coeff_at(0).unwrap(), p(&r, "v_x + v^2"));
        // q = 1 is the operator itself
        assert!(PsdOp::retained_equal(
            &l.power(1, 0).unwrap(),
            &l.materialize(0).unwrap()
        ));
    }

    #[test]
    fn apply_differential_operators() {
        let mut b = RingBuilder::new(Axis::X);
        b.jet("u", true).unwrap();
        b.jet("v", false).unwrap();
        b.jet("w", false).unwrap();
        b.jet("chi", false).unwrap();
        b.constant("eps").unwrap();
        let r = b.build();
        let ud = PsdOp::from_parts(&r, vec![(1, p(&r, "u"))]);
        assert_eq!(ud.apply(&p(&r, "chi")).unwrap(), p(&r, "u*chi_x"));
        let d2 = PsdOp::d_power(&r, 2);
        assert_eq!(d2.apply(&p(&r, "v")).unwrap(), p(&r, "v_xx"));
        // negative orders are not applicable
        let dinv = PsdOp::d_power(&r, -1);
        assert!(matches!(
            dinv.apply(&p(&r, "v")),
            Err(Error::NegativeOrderApply)
        ));
    }

    #[test]
    fn recognize_tail_roundtrip_and_rejection() {
        let r = bk_ring();
        let w = p(&r, "u_x*w + u*w_x + eps*v_x*w + eps*v*w_x");
        let t = PsdOp::expand_tail(&w, -6).unwrap();
        let tail = t.recognize_tail(4).unwrap();
        assert_eq!(tail.kernel, w);
        // perturb one deep coefficient: inconsistent
        let bad = t
            .add(&PsdOp::from_parts(&r, vec![(-3, p(&r, "u"))]))
            .truncate(-6);
        assert!(matches!(
            bad.recognize_tail(4),
            Err(Error::TailInconsistent { order: -3, .. })
        ));
        // insufficient floor
        assert!(matches!(
            t.recognize_tail(6),
            Err(Error::DepthUnreachable { .. })
        ));
    }

    #[test]
    fn substitute_symbol_broer_kaup() {
        // L = u D_x + v + D_x^-1 ∘ w with D_x = u^-1 D_z becomes
        // D_z + v + D_z^-1 ∘ (w u)
        let xr = bk_ring();
        let mut bz = RingBuilder::new(Axis::Z);
        bz.jet("u", true).unwrap();
        bz.jet("v", false).unwrap();
        bz.jet("w", false).unwrap();
        bz.constant("eps").unwrap();
        let zr = bz.build();
        let phi = DiffPoly::parse(&zr, "u^-1").unwrap();
        let mut m = Morphism::jet_rewrite(&xr, &zr, phi.clone(), vec![]);
        let l = bk_lax(&xr).materialize(-4).unwrap();
        let got = l.substitute_symbol(&mut m, &phi, -3).unwrap();
        assert_eq!(got.coeff_at(1).unwrap(), DiffPoly::one(&zr));
        assert_eq!(got.coeff_at(0).unwrap(), DiffPoly::parse(&zr, "v").unwrap());
        let tail = got.project_lt(0).recognize_tail(2).unwrap();
        assert_eq!(tail.kernel, DiffPoly::parse(&zr, "u*w").unwrap());
    }

    #[test]
    fn substitute_symbol_identity_multiplier_relabels() {
        let xr = bk_ring();
        let mut bz = RingBuilder::new(Axis::Z);
        bz.jet("u", true).unwrap();
        bz.jet("v", false).unwrap();
        bz.jet("w", false).unwrap();
        bz.constant("eps").unwrap();
        let zr = bz.build();
        let phi = DiffPoly::one(&zr);
        let mut m = Morphism::jet_rewrite(&xr, &zr, phi.clone(), vec![]);
        let l = bk_lax(&xr).materialize(-3).unwrap();
        let got = l.substitute_symbol(&mut m, &phi, -3).unwrap();
        for ord in -3..=1 {
            assert_eq!(
                got.coeff_at(ord).unwrap(),
                crate::morphism::transplant(&l.coeff_at(ord).unwrap(), &zr),
                "order {}",
                ord
            );
        }
    }

    #[test]
    fn substitute_symbol_second_derivative() {
        // (D_x^2)|_{D_x = chi_x D_z} = chi_x^2 D_z^2 + chi_x chi_xz D_z
        let mut bx = RingBuilder::new(Axis::X);
        bx.jet("chi", false).unwrap();
        let xr = bx.build();
        let mut bz = RingBuilder::new(Axis::Z);
        bz.with_display(
            "chi_x",
            "chi",
            "x",
            "\\chi",
            true,
            crate::ring::DerivativeRule::Jet,
        )
        .unwrap();
        let zr = bz.build();
        let phi = DiffPoly::parse(&zr, "chi_x").unwrap();
        let chi_x_jet = JetKey {
            gen: xr.lookup("chi").unwrap(),
            order: 1,
        };
        let mut m = Morphism::jet_rewrite(
            &xr,
            &zr,
            phi.clone(),
            vec![(chi_x_jet, DiffPoly::parse(&zr, "chi_x").unwrap())],
        );
        let d2 = PsdOp::d_power(&xr, 2);
        let got = d2.substitute_symbol(&mut m, &phi, 0).unwrap();
        assert_eq!(
            got.coeff_at(2).unwrap(),
            DiffPoly::parse(&zr, "chi_x^2").unwrap()
        );
        assert_eq!(
            got.coeff_at(1).unwrap(),
            DiffPoly::parse(&zr, "chi_x*chi_xz").unwrap()
        );
        assert!(got.coeff_at(0).unwrap().is_zero());
    }

    #[test]
    fn substitute_symbol_requires_invertible_multiplier() {
        let xr = bk_ring();
        let mut bz = RingBuilder::new(Axis::Z);
        bz.jet("u", true).unwrap();
        bz.jet("v", false).unwrap();
        bz.jet("w", false).unwrap();
        bz.constant("eps").unwrap();
        let zr = bz.build();
        let phi = DiffPoly::parse(&zr, "v").unwrap();
        let mut m = Morphism::jet_rewrite(&xr, &zr, phi.clone(), vec![]);
        let l = bk_lax(&xr).materialize(-3).unwrap();
        assert!(matches!(
            l.substitute_symbol(&mut m, &phi, -3),
            Err(Error::BadMultiplier(_))
        ));
    }

    #[test]
    fn general_tail_depth_is_bounded() {
        let mut b = RingBuilder::new(Axis::X);
        b.jet("u2", true).unwrap();
        b.jet("u1", false).unwrap();
        b.jet("u0", false).unwrap();
        let r = b.build();
        let l = LaxOp::new(
            &r,
            vec![(2, p(&r, "u2")), (1, p(&r, "u1")), (0, p(&r, "u0"))],
            LaxTail::General { min_order: -2 },
        );
        assert!(l.materialize(-2).is_ok());
        assert!(matches!(
            l.materialize(-3),
            Err(Error::DepthUnreachable { .. })
        ));
        // powers propagate the depth requirement
        assert!(matches!(l.power(2, -3), Err(Error::DepthUnreachable { .. })));
        assert!(l.power(2, 0).is_ok());
    }
}
