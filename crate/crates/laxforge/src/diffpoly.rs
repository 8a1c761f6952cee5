//! Exact arithmetic in a differential polynomial ring.
//!
//! A [`DiffPoly`] is a finite sum of monomials in the jet variables of
//! its ring, with arbitrary-precision rational coefficients. Laurent
//! exponents are allowed on order-0 jets of invertible generators only.
//! Values are immutable, fully collected, and kept in a canonical term
//! order (graded, then lexicographic over jets in declaration order),
//! so equality is plain term-list comparison.
//!
//! Binary operations panic on a ring-context mismatch; that is a
//! programming error, not a data error.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ring::{rat, DerivativeRule, GenId, JetKey, RawTerm, Ring};

/// One collected term: a rational coefficient times a product of jet
/// powers. Factors are sorted by `JetKey` and never have exponent 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Monomial {
    pub coeff: BigRational,
    pub factors: Vec<(JetKey, i64)>,
}

impl Monomial {
    pub fn constant(c: BigRational) -> Self {
        Monomial {
            coeff: c,
            factors: Vec::new(),
        }
    }

    /// Total degree: the signed sum of all exponents.
    pub fn degree(&self) -> i64 {
        self.factors.iter().map(|f| f.1).sum()
    }

    /// Total derivative weight: the sum of jet orders, counted with
    /// exponent multiplicity. Order-0 factors contribute nothing.
    pub fn jet_weight(&self) -> i64 {
        self.factors
            .iter()
            .map(|&(k, e)| i64::from(k.order) * e)
            .sum()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        let mut factors = Vec::with_capacity(self.factors.len() + other.factors.len());
        let (mut i, mut j) = (0, 0);
        while i < self.factors.len() && j < other.factors.len() {
            let (ka, ea) = self.factors[i];
            let (kb, eb) = other.factors[j];
            match ka.cmp(&kb) {
                Ordering::Less => {
                    factors.push((ka, ea));
                    i += 1;
                }
                Ordering::Greater => {
                    factors.push((kb, eb));
                    j += 1;
                }
                Ordering::Equal => {
                    if ea + eb != 0 {
                        factors.push((ka, ea + eb));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        factors.extend_from_slice(&self.factors[i..]);
        factors.extend_from_slice(&other.factors[j..]);
        Monomial {
            coeff: &self.coeff * &other.coeff,
            factors,
        }
    }
}

/// Canonical monomial comparison: total degree first, then the padded
/// exponent vectors compared lexicographically over jets in declaration
/// order (at the first jet where exponents differ, the larger exponent
/// ranks higher). `Greater` means "printed earlier".
pub fn cmp_monomial_keys(a: &Monomial, b: &Monomial) -> Ordering {
    let da = a.degree();
    let db = b.degree();
    if da != db {
        return da.cmp(&db);
    }
    let (mut i, mut j) = (0, 0);
    loop {
        match (a.factors.get(i), b.factors.get(j)) {
            (None, None) => return Ordering::Equal,
            (Some(&(_, ea)), None) => return ea.cmp(&0),
            (None, Some(&(_, eb))) => return 0.cmp(&eb),
            (Some(&(ka, ea)), Some(&(kb, eb))) => match ka.cmp(&kb) {
                Ordering::Less => {
                    if ea != 0 {
                        return ea.cmp(&0);
                    }
                    i += 1;
                }
                Ordering::Greater => {
                    if eb != 0 {
                        return 0.cmp(&eb);
                    }
                    j += 1;
                }
                Ordering::Equal => {
                    if ea != eb {
                        return ea.cmp(&eb);
                    }
                    i += 1;
                    j += 1;
                }
            },
        }
    }
}

/// An exact differential polynomial over a shared ring context.
#[derive(Clone)]
pub struct DiffPoly {
    ring: Arc<Ring>,
    terms: Vec<Monomial>,
}

impl PartialEq for DiffPoly {
    fn eq(&self, other: &Self) -> bool {
        self.ring.id() == other.ring.id() && self.terms == other.terms
    }
}

impl Eq for DiffPoly {}

fn assert_same_ring(a: &DiffPoly, b: &DiffPoly) {
    assert_eq!(
        a.ring.id(),
        b.ring.id(),
        "ring context mismatch: {:?} vs {:?}",
        a.ring,
        b.ring
    );
}

impl DiffPoly {
    pub fn ring(&self) -> &Arc<Ring> {
        &self.ring
    }

    pub fn zero(ring: &Arc<Ring>) -> Self {
        DiffPoly {
            ring: Arc::clone(ring),
            terms: Vec::new(),
        }
    }

    pub fn one(ring: &Arc<Ring>) -> Self {
        Self::constant(ring, BigRational::one())
    }

    pub fn constant(ring: &Arc<Ring>, c: BigRational) -> Self {
        let terms = if c.is_zero() {
            Vec::new()
        } else {
            vec![Monomial::constant(c)]
        };
        DiffPoly {
            ring: Arc::clone(ring),
            terms,
        }
    }

    pub fn int(ring: &Arc<Ring>, n: i64) -> Self {
        Self::constant(ring, rat(n))
    }

    /// A single jet variable with exponent 1.
    pub fn jet(ring: &Arc<Ring>, key: JetKey) -> Self {
        assert!(ring.jet_exists(key), "jet does not exist in ring");
        DiffPoly {
            ring: Arc::clone(ring),
            terms: vec![Monomial {
                coeff: BigRational::one(),
                factors: vec![(key, 1)],
            }],
        }
    }

    pub fn gen(ring: &Arc<Ring>, id: GenId) -> Self {
        Self::jet(ring, JetKey::base(id))
    }

    /// A single jet power; validates the Laurent-exponent invariant.
    pub fn jet_pow(ring: &Arc<Ring>, key: JetKey, exp: i64) -> Result<Self> {
        if exp == 0 {
            return Ok(Self::one(ring));
        }
        if !ring.jet_exists(key) {
            return Err(Error::UnknownGenerator(ring.jet_text(key)));
        }
        if exp < 0 && (key.order != 0 || !ring.generator(key.gen).invertible) {
            return Err(Error::NotInvertible(ring.jet_text(key)));
        }
        Ok(DiffPoly {
            ring: Arc::clone(ring),
            terms: vec![Monomial {
                coeff: BigRational::one(),
                factors: vec![(key, exp)],
            }],
        })
    }

    /// Normalizing constructor: sorts, collects, and drops zeros.
    pub fn from_terms(ring: &Arc<Ring>, mut terms: Vec<Monomial>) -> Self {
        terms.retain(|m| !m.coeff.is_zero());
        terms.sort_by(|a, b| cmp_monomial_keys(b, a));
        let mut out: Vec<Monomial> = Vec::with_capacity(terms.len());
        for m in terms {
            match out.last_mut() {
                Some(last) if cmp_monomial_keys(last, &m) == Ordering::Equal => {
                    last.coeff += m.coeff;
                    if last.coeff.is_zero() {
                        out.pop();
                    }
                }
                _ => out.push(m),
            }
        }
        DiffPoly {
            ring: Arc::clone(ring),
            terms: out,
        }
    }

    pub fn from_raw(ring: &Arc<Ring>, raw: &[RawTerm]) -> Self {
        let terms = raw
            .iter()
            .map(|t| {
                let mut factors = t.factors.clone();
                factors.sort_by_key(|f| f.0);
                Monomial {
                    coeff: t.coeff.clone(),
                    factors,
                }
            })
            .collect();
        Self::from_terms(ring, terms)
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && self.terms[0].factors.is_empty() && self.terms[0].coeff.is_one()
    }

    /// The constant coefficient as a rational, if the polynomial is a
    /// constant (including zero).
    pub fn as_constant(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 if self.terms[0].factors.is_empty() => Some(self.terms[0].coeff.clone()),
            _ => None,
        }
    }

    pub fn as_monomial(&self) -> Option<&Monomial> {
        if self.terms.len() == 1 {
            Some(&self.terms[0])
        } else {
            None
        }
    }

    pub fn neg(&self) -> DiffPoly {
        DiffPoly {
            ring: Arc::clone(&self.ring),
            terms: self
                .terms
                .iter()
                .map(|m| Monomial {
                    coeff: -m.coeff.clone(),
                    factors: m.factors.clone(),
                })
                .collect(),
        }
    }

    pub fn add(&self, other: &DiffPoly) -> DiffPoly {
        assert_same_ring(self, other);
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self::from_terms(&self.ring, terms)
    }

    pub fn sub(&self, other: &DiffPoly) -> DiffPoly {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &DiffPoly) -> DiffPoly {
        assert_same_ring(self, other);
        if self.is_zero() || other.is_zero() {
            return Self::zero(&self.ring);
        }
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(a.mul(b));
            }
        }
        Self::from_terms(&self.ring, terms)
    }

    pub fn scale(&self, c: &BigRational) -> DiffPoly {
        if c.is_zero() {
            return Self::zero(&self.ring);
        }
        DiffPoly {
            ring: Arc::clone(&self.ring),
            terms: self
                .terms
                .iter()
                .map(|m| Monomial {
                    coeff: &m.coeff * c,
                    factors: m.factors.clone(),
                })
                .collect(),
        }
    }

    /// Integer power. Negative exponents require a monomial inverse.
    pub fn pow(&self, e: i64) -> Result<DiffPoly> {
        if e == 0 {
            return Ok(Self::one(&self.ring));
        }
        let base = if e < 0 { self.try_inverse()? } else { self.clone() };
        let mut exp = e.unsigned_abs();
        let mut acc = Self::one(&self.ring);
        let mut sq = base;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc.mul(&sq);
            }
            exp >>= 1;
            if exp > 0 {
                sq = sq.mul(&sq);
            }
        }
        Ok(acc)
    }

    /// Inverse of a single-monomial polynomial whose factors are all
    /// invertible order-0 jets.
    pub fn try_inverse(&self) -> Result<DiffPoly> {
        let m = self
            .as_monomial()
            .ok_or_else(|| Error::NoInverse(self.to_string()))?;
        if m.coeff.is_zero() {
            return Err(Error::NoInverse(self.to_string()));
        }
        let mut factors = Vec::with_capacity(m.factors.len());
        for &(key, e) in &m.factors {
            if key.order != 0 || !self.ring.generator(key.gen).invertible {
                return Err(Error::NotInvertible(self.ring.jet_text(key)));
            }
            factors.push((key, -e));
        }
        Ok(DiffPoly {
            ring: Arc::clone(&self.ring),
            terms: vec![Monomial {
                coeff: m.coeff.recip(),
                factors,
            }],
        })
    }

    /// Derivative of a single jet under the ring's rules.
    pub fn jet_derivative(ring: &Arc<Ring>, key: JetKey) -> DiffPoly {
        match &ring.generator(key.gen).rule {
            DerivativeRule::Jet => Self::jet(
                ring,
                JetKey {
                    gen: key.gen,
                    order: key.order + 1,
                },
            ),
            DerivativeRule::Constant => Self::zero(ring),
            DerivativeRule::Defined(raw) => Self::from_raw(ring, raw),
        }
    }

    /// Total derivative along the ring's axis: the Leibniz expansion
    /// over every factor of every term.
    pub fn total_derivative(&self) -> DiffPoly {
        let mut acc = Self::zero(&self.ring);
        for m in &self.terms {
            for (idx, &(key, e)) in m.factors.iter().enumerate() {
                let d = Self::jet_derivative(&self.ring, key);
                if d.is_zero() {
                    continue;
                }
                let mut factors = Vec::with_capacity(m.factors.len());
                for (jdx, &(k2, e2)) in m.factors.iter().enumerate() {
                    let e2 = if jdx == idx { e2 - 1 } else { e2 };
                    if e2 != 0 {
                        factors.push((k2, e2));
                    }
                }
                let stem = DiffPoly {
                    ring: Arc::clone(&self.ring),
                    terms: vec![Monomial {
                        coeff: &m.coeff * rat(e),
                        factors,
                    }],
                };
                acc = acc.add(&stem.mul(&d));
            }
        }
        acc
    }

    /// n-fold total derivative.
    pub fn nth_derivative(&self, n: u32) -> DiffPoly {
        let mut p = self.clone();
        for _ in 0..n {
            p = p.total_derivative();
        }
        p
    }

    /// Keep only monomials of total derivative weight <= `max_weight`
    /// (the dispersionless principal part when `max_weight` = 1).
    pub fn restrict_jet_weight(&self, max_weight: i64) -> DiffPoly {
        DiffPoly {
            ring: Arc::clone(&self.ring),
            terms: self
                .terms
                .iter()
                .filter(|m| m.jet_weight() <= max_weight)
                .cloned()
                .collect(),
        }
    }

    /// Largest total degree in the jets of one generator over all
    /// monomials; zero for polynomials not involving the generator.
    pub fn max_degree_in_gen(&self, gen: GenId) -> i64 {
        self.terms
            .iter()
            .map(|m| {
                m.factors
                    .iter()
                    .filter(|(k, _)| k.gen == gen)
                    .map(|f| f.1)
                    .sum::<i64>()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn contains_gen(&self, gen: GenId) -> bool {
        self.terms
            .iter()
            .any(|m| m.factors.iter().any(|(k, _)| k.gen == gen))
    }

    /// Serializable canonical form.
    pub fn to_json(&self) -> Vec<TermJson> {
        self.terms
            .iter()
            .map(|m| TermJson {
                coeff: format_rational(&m.coeff),
                factors: m
                    .factors
                    .iter()
                    .map(|&(k, e)| FactorJson {
                        gen: self.ring.generator(k.gen).name.clone(),
                        jet: k.order,
                        exp: e,
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Canonical rational rendering: reduced, `/1` omitted.
pub fn format_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct FactorJson {
    pub gen: String,
    pub jet: u32,
    pub exp: i64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct TermJson {
    pub coeff: String,
    pub factors: Vec<FactorJson>,
}

impl fmt::Display for DiffPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, m) in self.terms.iter().enumerate() {
            let neg = m.coeff.is_negative();
            if i == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let abs = m.coeff.abs();
            if m.factors.is_empty() {
                write!(f, "{}", format_rational(&abs))?;
            } else {
                let mut first = true;
                if !abs.is_one() {
                    write!(f, "{}", format_rational(&abs))?;
                    first = false;
                }
                for &(k, e) in &m.factors {
                    if !first {
                        write!(f, "*")?;
                    }
                    first = false;
                    write!(f, "{}", self.ring.jet_text(k))?;
                    if e != 1 {
                        write!(f, "^{}", e)?;
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for DiffPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $inner:ident) => {
        impl std::ops::$trait<&DiffPoly> for &DiffPoly {
            type Output = DiffPoly;
            fn $method(self, rhs: &DiffPoly) -> DiffPoly {
                DiffPoly::$inner(self, rhs)
            }
        }
        impl std::ops::$trait<DiffPoly> for DiffPoly {
            type Output = DiffPoly;
            fn $method(self, rhs: DiffPoly) -> DiffPoly {
                DiffPoly::$inner(&self, &rhs)
            }
        }
        impl std::ops::$trait<&DiffPoly> for DiffPoly {
            type Output = DiffPoly;
            fn $method(self, rhs: &DiffPoly) -> DiffPoly {
                DiffPoly::$inner(&self, rhs)
            }
        }
    };
}

impl_binop!(Add, add, add);
impl_binop!(Sub, sub, sub);
impl_binop!(Mul, mul, mul);

impl std::ops::Neg for &DiffPoly {
    type Output = DiffPoly;
    fn neg(self) -> DiffPoly {
        DiffPoly::neg(self)
    }
}

impl std::ops::Neg for DiffPoly {
    type Output = DiffPoly;
    fn neg(self) -> DiffPoly {
        DiffPoly::neg(&self)
    }
}

// ---------------------------------------------------------------------
// Expression parser, mainly a convenience for tests and spec tooling.
// Grammar: sum of products; factors are rationals or jet tokens with an
// optional integer exponent (`u^2`, `u^-1`, `u^(4)` for high jets).
// ---------------------------------------------------------------------

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, msg: &str) -> Result<T> {
        let mut line = 1;
        let mut col = 1;
        for &b in &self.src[..self.pos.min(self.src.len())] {
            if b == b'\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        }
        Err(Error::Parse {
            line,
            col,
            msg: msg.to_string(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        Some(b)
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn integer(&mut self) -> Result<i64> {
        self.skip_ws();
        let neg = self.eat(b'-');
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return self.err("expected integer");
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let v: i64 = match digits.parse() {
            Ok(v) => v,
            Err(_) => return self.err("integer out of range"),
        };
        Ok(if neg { -v } else { v })
    }

    fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        let mut first = true;
        while self.pos < self.src.len() {
            let c = self.src[self.pos] as char;
            let ok = if first {
                c.is_ascii_alphabetic()
            } else {
                c.is_ascii_alphanumeric() || c == '_'
            };
            if !ok {
                break;
            }
            first = false;
            self.pos += 1;
        }
        if self.pos == start {
            None
        } else {
            Some(std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string())
        }
    }
}

impl DiffPoly {
    /// Parse an expression like `2*u*u_x*w - eps*v^2 + 1/2*w^-1`.
    pub fn parse(ring: &Arc<Ring>, text: &str) -> Result<DiffPoly> {
        let mut cur = Cursor {
            src: text.as_bytes(),
            pos: 0,
        };
        let p = parse_sum(ring, &mut cur)?;
        cur.skip_ws();
        if cur.pos != cur.src.len() {
            return cur.err("unexpected trailing input");
        }
        Ok(p)
    }
}

fn parse_sum(ring: &Arc<Ring>, cur: &mut Cursor) -> Result<DiffPoly> {
    let mut acc = DiffPoly::zero(ring);
    let mut sign = match cur.peek() {
        Some(b'-') => {
            cur.bump();
            -1
        }
        Some(b'+') => {
            cur.bump();
            1
        }
        _ => 1,
    };
    loop {
        let term = parse_product(ring, cur)?;
        acc = if sign < 0 {
            acc.sub(&term)
        } else {
            acc.add(&term)
        };
        match cur.peek() {
            Some(b'+') => {
                cur.bump();
                sign = 1;
            }
            Some(b'-') => {
                cur.bump();
                sign = -1;
            }
            _ => return Ok(acc),
        }
    }
}

fn parse_product(ring: &Arc<Ring>, cur: &mut Cursor) -> Result<DiffPoly> {
    let mut acc = parse_factor(ring, cur)?;
    while cur.eat(b'*') {
        let f = parse_factor(ring, cur)?;
        acc = acc.mul(&f);
    }
    Ok(acc)
}

fn parse_factor(ring: &Arc<Ring>, cur: &mut Cursor) -> Result<DiffPoly> {
    match cur.peek() {
        Some(b'(') => {
            cur.bump();
            let inner = parse_sum(ring, cur)?;
            if !cur.eat(b')') {
                return cur.err("expected `)`");
            }
            parse_exponent(cur, inner)
        }
        Some(c) if c.is_ascii_digit() => {
            let n = cur.integer()?;
            let v = if cur.eat(b'/') {
                let d = cur.integer()?;
                if d == 0 {
                    return cur.err("zero denominator");
                }
                BigRational::new(n.into(), d.into())
            } else {
                rat(n)
            };
            parse_exponent(cur, DiffPoly::constant(ring, v))
        }
        Some(c) if (c as char).is_ascii_alphabetic() => {
            let name = cur.ident().unwrap();
            let mut order_mark: Option<u32> = None;
            // `^(k)` marks a high-order jet; `^n` is an exponent
            let save = cur.pos;
            if cur.eat(b'^') {
                if cur.eat(b'(') {
                    let k = cur.integer()?;
                    if k < 0 || !cur.eat(b')') {
                        return cur.err("bad jet order marker");
                    }
                    order_mark = Some(k as u32);
                } else {
                    cur.pos = save;
                }
            }
            let key = match order_mark {
                Some(k) => match ring.lookup(&name) {
                    Some(id) => {
                        let key = JetKey { gen: id, order: k };
                        if !ring.jet_exists(key) {
                            return cur.err(&format!("no jet `{}^({})`", name, k));
                        }
                        key
                    }
                    None => return cur.err(&format!("unknown generator `{}`", name)),
                },
                None => match ring.resolve_jet(&name) {
                    Some(key) => key,
                    None => return cur.err(&format!("unknown jet `{}`", name)),
                },
            };
            let base = DiffPoly::jet(ring, key);
            parse_exponent(cur, base)
        }
        _ => cur.err("expected factor"),
    }
}

fn parse_exponent(cur: &mut Cursor, base: DiffPoly) -> Result<DiffPoly> {
    if cur.eat(b'^') {
        let e = cur.integer()?;
        match base.pow(e) {
            Ok(p) => Ok(p),
            Err(err) => cur.err(&err.to_string()),
        }
    } else {
        Ok(base)
    }
}
