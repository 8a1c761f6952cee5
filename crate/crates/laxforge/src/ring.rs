//! Ring contexts: the named generators of a differential polynomial ring.
//!
//! A [`Ring`] fixes the generator set once and is then shared immutably
//! (via `Arc`) by every value built over it. Each generator carries a
//! derivative rule telling the total derivative what to do with it:
//! ordinary fields are `Jet` generators (differentiating the k-th jet
//! yields the (k+1)-th jet), deformation parameters are `Constant`, and
//! a generator may have an explicit `Defined` derivative.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;

use crate::error::Error;

static RING_COUNTER: AtomicU64 = AtomicU64::new(0);

/// The independent variable a ring differentiates along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Z,
}

impl Axis {
    pub fn letter(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Z => 'z',
        }
    }
}

/// Index of a generator within its ring's declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GenId(pub u32);

impl GenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A jet variable: a generator together with a derivative order.
/// Order 0 is the generator itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JetKey {
    pub gen: GenId,
    pub order: u32,
}

impl JetKey {
    pub fn base(gen: GenId) -> Self {
        JetKey { gen, order: 0 }
    }
}

/// Raw (ring-pointer-free) monomial data, used to store defined
/// derivative rules inside the ring itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTerm {
    pub coeff: BigRational,
    pub factors: Vec<(JetKey, i64)>,
}

/// How the total derivative acts on a generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DerivativeRule {
    /// D maps the k-th jet to the (k+1)-th jet.
    Jet,
    /// D annihilates the generator; no jets of order > 0 exist.
    Constant,
    /// D of the generator equals a stored polynomial; no jets of
    /// order > 0 exist (higher derivatives are derived polynomials).
    Defined(Vec<RawTerm>),
}

/// One named generator of a ring.
#[derive(Debug, Clone)]
pub struct Generator {
    /// Unique name within the ring, e.g. `"u"`, `"chi_x"`, `"eps"`.
    pub name: String,
    /// Display base symbol; usually equals `name`.
    pub symbol: String,
    /// Derivative letters already baked into the symbol (e.g. `"x"` for
    /// the generator `chi_x` living in a z-ring, whose first jet
    /// displays as `chi_xz`).
    pub presub: String,
    /// LaTeX base symbol, e.g. `"\\epsilon"` for `eps`.
    pub latex: String,
    /// Whether negative exponents of the order-0 jet are allowed.
    pub invertible: bool,
    pub rule: DerivativeRule,
}

impl Generator {
    fn plain(name: &str, invertible: bool, rule: DerivativeRule) -> Self {
        Generator {
            name: name.to_string(),
            symbol: name.to_string(),
            presub: String::new(),
            latex: default_latex(name),
            invertible,
            rule,
        }
    }
}

fn default_latex(name: &str) -> String {
    match name {
        "eps" => "\\epsilon".to_string(),
        "chi" => "\\chi".to_string(),
        _ => name.to_string(),
    }
}

/// An immutable generator table shared by all values of one ring.
pub struct Ring {
    id: u64,
    axis: Axis,
    gens: Vec<Generator>,
    by_name: HashMap<String, GenId>,
}

impl fmt::Debug for Ring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.gens.iter().map(|g| g.name.as_str()).collect();
        write!(f, "Ring#{}({:?}, {:?})", self.id, self.axis, names)
    }
}

impl Ring {
    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.gens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gens.is_empty()
    }

    pub fn generator(&self, id: GenId) -> &Generator {
        &self.gens[id.index()]
    }

    pub fn generators(&self) -> impl Iterator<Item = (GenId, &Generator)> {
        self.gens
            .iter()
            .enumerate()
            .map(|(i, g)| (GenId(i as u32), g))
    }

    pub fn lookup(&self, name: &str) -> Option<GenId> {
        self.by_name.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<GenId, Error> {
        self.lookup(name)
            .ok_or_else(|| Error::UnknownGenerator(name.to_string()))
    }

    /// True if `key` is a legal jet of this ring: order 0 always, higher
    /// orders only for `Jet`-rule generators.
    pub fn jet_exists(&self, key: JetKey) -> bool {
        key.index_ok(self)
            && (key.order == 0
                || matches!(self.generator(key.gen).rule, DerivativeRule::Jet))
    }

    /// Text form of a jet: `u`, `u_x`, `u_xx`, `u_xxx`, `u^(4)`, and for
    /// generators with a presub, `chi_x`, `chi_xz`, ...
    pub fn jet_text(&self, key: JetKey) -> String {
        let g = self.generator(key.gen);
        if key.order == 0 {
            return if g.presub.is_empty() {
                g.symbol.clone()
            } else {
                format!("{}_{}", g.symbol, g.presub)
            };
        }
        let total = g.presub.len() + key.order as usize;
        if total <= 3 {
            let mut sub = g.presub.clone();
            for _ in 0..key.order {
                sub.push(self.axis.letter());
            }
            format!("{}_{}", g.symbol, sub)
        } else if g.presub.is_empty() {
            format!("{}^({})", g.symbol, key.order)
        } else {
            format!("{}_{}^({})", g.symbol, g.presub, key.order)
        }
    }

    /// LaTeX form of a jet: `u`, `u_x`, `u_{xx}`, `u^{(4)}`, `\chi_{xz}`.
    pub fn jet_latex(&self, key: JetKey) -> String {
        let g = self.generator(key.gen);
        if key.order == 0 {
            return if g.presub.is_empty() {
                g.latex.clone()
            } else if g.presub.len() == 1 {
                format!("{}_{}", g.latex, g.presub)
            } else {
                format!("{}_{{{}}}", g.latex, g.presub)
            };
        }
        let total = g.presub.len() + key.order as usize;
        if total <= 3 {
            let mut sub = g.presub.clone();
            for _ in 0..key.order {
                sub.push(self.axis.letter());
            }
            if sub.len() == 1 {
                format!("{}_{}", g.latex, sub)
            } else {
                format!("{}_{{{}}}", g.latex, sub)
            }
        } else if g.presub.is_empty() {
            format!("{}^{{({})}}", g.latex, key.order)
        } else {
            format!("{}_{{{}}}^{{({})}}", g.latex, g.presub, key.order)
        }
    }

    /// Resolve a token like `u`, `u_xx`, `chi_xz` to a jet of this ring.
    /// Tries the whole token as a generator name first, then strips a
    /// trailing run of axis letters.
    pub fn resolve_jet(&self, token: &str) -> Option<JetKey> {
        if let Some(id) = self.lookup(token) {
            return Some(JetKey::base(id));
        }
        let axis = self.axis.letter();
        let chars: Vec<char> = token.chars().collect();
        let mut k = 0usize;
        while k < chars.len() && chars[chars.len() - 1 - k] == axis {
            k += 1;
            let mut base: String = chars[..chars.len() - k].iter().collect();
            // accept both `u_zz` (separator underscore) and `chi_xz`
            // (jet letters appended to an existing subscript)
            if base.ends_with('_') {
                let trimmed = &base[..base.len() - 1];
                if let Some(id) = self.lookup(trimmed) {
                    let key = JetKey {
                        gen: id,
                        order: k as u32,
                    };
                    if self.jet_exists(key) {
                        return Some(key);
                    }
                }
            }
            if let Some(id) = self.lookup(&base) {
                let key = JetKey {
                    gen: id,
                    order: k as u32,
                };
                if self.jet_exists(key) {
                    return Some(key);
                }
            }
            base.clear();
        }
        None
    }
}

impl JetKey {
    fn index_ok(self, ring: &Ring) -> bool {
        self.gen.index() < ring.len()
    }
}

/// Incrementally declares generators, validating the ring invariants,
/// then freezes into an `Arc<Ring>`.
pub struct RingBuilder {
    axis: Axis,
    gens: Vec<Generator>,
    by_name: HashMap<String, GenId>,
}

impl RingBuilder {
    pub fn new(axis: Axis) -> Self {
        RingBuilder {
            axis,
            gens: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    fn push(&mut self, gen: Generator) -> Result<GenId, Error> {
        if self.by_name.contains_key(&gen.name) {
            return Err(Error::DuplicateGenerator(gen.name));
        }
        let id = GenId(self.gens.len() as u32);
        self.by_name.insert(gen.name.clone(), id);
        self.gens.push(gen);
        Ok(id)
    }

    /// Declare an ordinary field with jets.
    pub fn jet(&mut self, name: &str, invertible: bool) -> Result<GenId, Error> {
        self.push(Generator::plain(name, invertible, DerivativeRule::Jet))
    }

    /// Declare a constant generator (total derivative zero).
    pub fn constant(&mut self, name: &str) -> Result<GenId, Error> {
        self.push(Generator::plain(name, false, DerivativeRule::Constant))
    }

    /// Declare a generator whose derivative is the given polynomial in
    /// already-declared generators (self-reference allowed).
    pub fn defined(
        &mut self,
        name: &str,
        invertible: bool,
        rule: Vec<RawTerm>,
    ) -> Result<GenId, Error> {
        let next = GenId(self.gens.len() as u32);
        for term in &rule {
            for &(key, _) in &term.factors {
                if key.gen > next {
                    return Err(Error::ForwardReference(name.to_string()));
                }
                let jet_ok = if key.gen == next {
                    key.order == 0
                } else {
                    key.order == 0
                        || matches!(self.gens[key.gen.index()].rule, DerivativeRule::Jet)
                };
                if !jet_ok {
                    return Err(Error::ForwardReference(name.to_string()));
                }
            }
        }
        self.push(Generator::plain(
            name,
            invertible,
            DerivativeRule::Defined(rule),
        ))
    }

    /// Declare a generator with custom display metadata.
    pub fn with_display(
        &mut self,
        name: &str,
        symbol: &str,
        presub: &str,
        latex: &str,
        invertible: bool,
        rule: DerivativeRule,
    ) -> Result<GenId, Error> {
        self.push(Generator {
            name: name.to_string(),
            symbol: symbol.to_string(),
            presub: presub.to_string(),
            latex: latex.to_string(),
            invertible,
            rule,
        })
    }

    pub fn build(self) -> Arc<Ring> {
        Arc::new(Ring {
            id: RING_COUNTER.fetch_add(1, AtomicOrdering::Relaxed),
            axis: self.axis,
            gens: self.gens,
            by_name: self.by_name,
        })
    }
}

/// Shorthand for an integer rational.
pub fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Shorthand for the rational n/d.
pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}
