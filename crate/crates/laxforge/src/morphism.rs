//! Ring morphisms: substitution of generators, re-embedding into a
//! larger ring, and the jet rewrite induced by a change of independent
//! variable.
//!
//! A morphism maps every order-0 jet of the source ring to a polynomial
//! over the target ring. Higher jets are derived from the base images,
//! so bindings are closed under differentiation by construction:
//!
//! * [`Lift::Standard`] — image of the (k+1)-th jet is the target-ring
//!   total derivative of the image of the k-th jet. Used for plain
//!   substitutions (`eps -> 0`, `u -> 1`, variable maps).
//! * [`Lift::Scaled`] — image of the (k+1)-th jet is `phi` times the
//!   derivative of the image of the k-th jet. This realizes
//!   `D_x = phi * D_z` on generator jets: an x-jet of order k becomes a
//!   fixed polynomial in z-jets of order <= k, so the rewrite
//!   terminates. Images are cached per jet.

use std::collections::HashMap;
use std::sync::Arc;

use crate::diffpoly::{DiffPoly, Monomial};
use crate::error::{Error, Result};
use crate::ring::{GenId, JetKey, Ring};

/// How base-generator images extend to higher jets.
#[derive(Clone)]
pub enum Lift {
    Standard,
    Scaled(DiffPoly),
}

/// A generator-wise map from a source ring into a target ring.
pub struct Morphism {
    src: Arc<Ring>,
    dst: Arc<Ring>,
    images: HashMap<GenId, DiffPoly>,
    lift: Lift,
    cache: HashMap<JetKey, DiffPoly>,
}

impl Morphism {
    /// Substitution inside one ring: unbound generators map to
    /// themselves.
    pub fn substitution(ring: &Arc<Ring>, bindings: Vec<(GenId, DiffPoly)>) -> Self {
        let mut images = HashMap::new();
        for (id, _) in ring.generators() {
            images.insert(id, DiffPoly::gen(ring, id));
        }
        for (id, v) in bindings {
            assert_eq!(
                v.ring().id(),
                ring.id(),
                "substitution binding built over a foreign ring"
            );
            images.insert(id, v);
        }
        Morphism {
            src: Arc::clone(ring),
            dst: Arc::clone(ring),
            images,
            lift: Lift::Standard,
            cache: HashMap::new(),
        }
    }

    /// Map generators to the same-named generators of another ring.
    /// Generators missing from the target are left unmapped and only
    /// error if they actually occur.
    pub fn rename(src: &Arc<Ring>, dst: &Arc<Ring>) -> Self {
        let mut images = HashMap::new();
        for (id, g) in src.generators() {
            if let Some(did) = dst.lookup(&g.name) {
                images.insert(id, DiffPoly::gen(dst, did));
            }
        }
        Morphism {
            src: Arc::clone(src),
            dst: Arc::clone(dst),
            images,
            lift: Lift::Standard,
            cache: HashMap::new(),
        }
    }

    /// Jet rewrite for a change of independent variable with
    /// `D_src = phi * D_dst`; same-named generators map across, with
    /// explicit overrides applied on top (e.g. the x-jet `chi_x`
    /// becoming its own generator of the z-ring).
    pub fn jet_rewrite(
        src: &Arc<Ring>,
        dst: &Arc<Ring>,
        phi: DiffPoly,
        overrides: Vec<(JetKey, DiffPoly)>,
    ) -> Self {
        assert_eq!(phi.ring().id(), dst.id(), "phi must live in the target ring");
        let mut m = Morphism::rename(src, dst);
        m.lift = Lift::Scaled(phi);
        for (key, v) in overrides {
            assert_eq!(v.ring().id(), dst.id());
            m.cache.insert(key, v);
        }
        m
    }

    /// Override or add an image for one base generator.
    pub fn set_image(&mut self, gen: GenId, image: DiffPoly) {
        assert_eq!(image.ring().id(), self.dst.id());
        self.images.insert(gen, image);
        self.cache.clear();
    }

    pub fn target(&self) -> &Arc<Ring> {
        &self.dst
    }

    fn jet_image(&mut self, key: JetKey) -> Result<DiffPoly> {
        if let Some(p) = self.cache.get(&key) {
            return Ok(p.clone());
        }
        let image = if key.order == 0 {
            self.images
                .get(&key.gen)
                .cloned()
                .ok_or_else(|| {
                    Error::UnmappedGenerator(self.src.generator(key.gen).name.clone())
                })?
        } else {
            let below = self.jet_image(JetKey {
                gen: key.gen,
                order: key.order - 1,
            })?;
            let d = below.total_derivative();
            match &self.lift {
                Lift::Standard => d,
                Lift::Scaled(phi) => phi.mul(&d),
            }
        };
        self.cache.insert(key, image.clone());
        Ok(image)
    }

    /// Apply the morphism to a polynomial of the source ring.
    pub fn apply(&mut self, p: &DiffPoly) -> Result<DiffPoly> {
        assert_eq!(
            p.ring().id(),
            self.src.id(),
            "morphism applied to a foreign ring value"
        );
        let mut acc = DiffPoly::zero(&self.dst);
        for m in p.terms() {
            let mut term = DiffPoly::constant(&self.dst, m.coeff.clone());
            for &(key, e) in &m.factors {
                let image = self.jet_image(key)?;
                let powered = image.pow(e).map_err(|err| match err {
                    Error::NotInvertible(_) | Error::NoInverse(_) => {
                        Error::NonInvertibleBinding {
                            gen: self.src.jet_text(key),
                        }
                    }
                    other => other,
                })?;
                term = term.mul(&powered);
                if term.is_zero() {
                    break;
                }
            }
            acc = acc.add(&term);
        }
        Ok(acc)
    }
}

/// Substitute bound generators in `p`, deriving bindings for higher
/// jets automatically. Unbound generators stay fixed.
pub fn substitute(p: &DiffPoly, bindings: Vec<(GenId, DiffPoly)>) -> Result<DiffPoly> {
    Morphism::substitution(p.ring(), bindings).apply(p)
}

/// Re-embed a polynomial into a ring that declares at least the same
/// generator names.
pub fn embed(p: &DiffPoly, dst: &Arc<Ring>) -> Result<DiffPoly> {
    if p.ring().id() == dst.id() {
        return Ok(p.clone());
    }
    Morphism::rename(p.ring(), dst).apply(p)
}

/// Build a polynomial of `dst` from raw monomial data of `p`, assuming
/// identical generator tables (used when two rings are structural
/// copies; panics otherwise).
pub fn transplant(p: &DiffPoly, dst: &Arc<Ring>) -> DiffPoly {
    let terms: Vec<Monomial> = p.terms().to_vec();
    for m in &terms {
        for &(k, _) in &m.factors {
            let gsrc = p.ring().generator(k.gen);
            let gdst = dst.generator(k.gen);
            assert_eq!(gsrc.name, gdst.name, "transplant between unrelated rings");
        }
    }
    DiffPoly::from_terms(dst, terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{Axis, RingBuilder};

    fn bk_ring() -> Arc<Ring> {
        let mut b = RingBuilder::new(Axis::X);
        b.jet("u", true).unwrap();
        b.jet("v", false).unwrap();
        b.jet("w", false).unwrap();
        b.constant("eps").unwrap();
        b.build()
    }

    #[test]
    fn reduction_kills_deformation_terms() {
        // setting eps = 0 and u = 1 in the first extended flow row
        let r = bk_ring();
        let p = DiffPoly::parse(&r, "eps*u_x*v - eps*u*v_x").unwrap();
        let u = r.lookup("u").unwrap();
        let e = r.lookup("eps").unwrap();
        let out = substitute(
            &p,
            vec![
                (u, DiffPoly::one(&r)),
                (e, DiffPoly::zero(&r)),
            ],
        )
        .unwrap();
        assert!(out.is_zero());
    }

    #[test]
    fn reduction_of_second_flow_row() {
        let r = bk_ring();
        let p = DiffPoly::parse(
            &r,
            "2*u*u_x*w + 2*u*v*v_x + 2*u^2*w_x + u*u_x*v_x + u^2*v_xx \
             + eps*v^2*v_x + 2*eps*u*v_x*w + eps*u*v_x^2",
        )
        .unwrap();
        let u = r.lookup("u").unwrap();
        let e = r.lookup("eps").unwrap();
        let out = substitute(
            &p,
            vec![(u, DiffPoly::one(&r)), (e, DiffPoly::zero(&r))],
        )
        .unwrap();
        assert_eq!(out, DiffPoly::parse(&r, "2*v*v_x + 2*w_x + v_xx").unwrap());
    }

    #[test]
    fn identity_bindings_are_noop() {
        let r = bk_ring();
        let p = DiffPoly::parse(&r, "u^-2*v_xx - eps*w").unwrap();
        assert_eq!(substitute(&p, vec![]).unwrap(), p);
    }

    #[test]
    fn jets_of_bound_generator_follow_derivative() {
        // binding u -> v^2 must send u_x to 2 v v_x
        let r = bk_ring();
        let p = DiffPoly::parse(&r, "u_x").unwrap();
        let u = r.lookup("u").unwrap();
        let out = substitute(&p, vec![(u, DiffPoly::parse(&r, "v^2").unwrap())]).unwrap();
        assert_eq!(out, DiffPoly::parse(&r, "2*v*v_x").unwrap());
    }

    #[test]
    fn noninvertible_binding_with_negative_exponent_errors() {
        let r = bk_ring();
        let p = DiffPoly::parse(&r, "u^-1").unwrap();
        let u = r.lookup("u").unwrap();
        let err = substitute(&p, vec![(u, DiffPoly::parse(&r, "w").unwrap())]);
        assert!(matches!(err, Err(Error::NonInvertibleBinding { .. })));
        let err2 = substitute(&p, vec![(u, DiffPoly::parse(&r, "v + w").unwrap())]);
        assert!(matches!(err2, Err(Error::NonInvertibleBinding { .. })));
    }

    #[test]
    fn scaled_lift_rewrites_x_jets_to_z_jets() {
        // z-ring carries the same fields plus the invertible multiplier
        let mut b = RingBuilder::new(Axis::Z);
        b.jet("u", true).unwrap();
        b.jet("v", false).unwrap();
        let zr = b.build();

        let mut bx = RingBuilder::new(Axis::X);
        bx.jet("u", true).unwrap();
        bx.jet("v", false).unwrap();
        let xr = bx.build();

        // D_x = u^-1 D_z
        let phi = DiffPoly::parse(&zr, "u^-1").unwrap();
        let mut m = Morphism::jet_rewrite(&xr, &zr, phi, vec![]);
        let vx = DiffPoly::parse(&xr, "v_x").unwrap();
        assert_eq!(m.apply(&vx).unwrap(), DiffPoly::parse(&zr, "u^-1*v_z").unwrap());
        let vxx = DiffPoly::parse(&xr, "v_xx").unwrap();
        assert_eq!(
            m.apply(&vxx).unwrap(),
            DiffPoly::parse(&zr, "u^-2*v_zz - u^-3*u_z*v_z").unwrap()
        );
    }

    #[test]
    fn scaled_lift_is_a_chain_rule() {
        // defining property: m(D_x f) = phi * D_z(m(f))
        let mut bz = RingBuilder::new(Axis::Z);
        bz.jet("u", true).unwrap();
        bz.jet("v", false).unwrap();
        let zr = bz.build();
        let mut bx = RingBuilder::new(Axis::X);
        bx.jet("u", true).unwrap();
        bx.jet("v", false).unwrap();
        let xr = bx.build();
        let phi = DiffPoly::parse(&zr, "u^-1").unwrap();
        for src in ["u*v_x + v^2", "u^-1*v_xx", "v_x*v_xx - u"] {
            let f = DiffPoly::parse(&xr, src).unwrap();
            let mut m = Morphism::jet_rewrite(&xr, &zr, phi.clone(), vec![]);
            let lhs = m.apply(&f.total_derivative()).unwrap();
            let rhs = phi.mul(&m.apply(&f).unwrap().total_derivative());
            assert_eq!(lhs, rhs, "chain rule failed for {}", src);
        }
    }
}
