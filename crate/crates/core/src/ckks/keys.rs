use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::context::{CkksContext, ContextId};
use super::poly::{Representation, RingPoly};
use super::{CkksError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Plaintext {
    poly: RingPoly,
    scale: f64,
    context_id: ContextId,
}

impl Plaintext {
    pub(crate) fn new(poly: RingPoly, scale: f64, context_id: ContextId) -> Self {
        debug_assert!(scale > 0.0);
        Self {
            poly,
            scale,
            context_id,
        }
    }

    pub fn poly(&self) -> &RingPoly {
        &self.poly
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn context_id(&self) -> ContextId {
        self.context_id
    }
}

/// `(c0, c1)` in coefficient form, decrypting as `c0 + c1*s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub(crate) c0: RingPoly,
    pub(crate) c1: RingPoly,
    pub(crate) scale: f64,
    pub(crate) depth: u8,
    pub(crate) context_id: ContextId,
}

impl Ciphertext {
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Number of plaintext multiplications applied (0 or 1).
    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn slot_count(&self) -> usize {
        self.c0.degree() / 2
    }

    pub fn context_id(&self) -> ContextId {
        self.context_id
    }

    pub fn components(&self) -> (&RingPoly, &RingPoly) {
        (&self.c0, &self.c1)
    }

    /// Serialized size of both components as 64-bit words.
    pub fn byte_size(&self) -> usize {
        8 * (self.c0.all_residues().len() + self.c1.all_residues().len())
    }
}

/// Ternary secret, coefficient form.
#[derive(Clone, Debug, PartialEq)]
pub struct SecretKey {
    pub(crate) s: RingPoly,
    pub(crate) context_id: ContextId,
}

impl SecretKey {
    pub fn poly(&self) -> &RingPoly {
        &self.s
    }

    pub fn context_id(&self) -> ContextId {
        self.context_id
    }
}

/// `(b, a)` with `b = -a*s + e`, stored in NTT form.
#[derive(Clone, Debug, PartialEq)]
pub struct PublicKey {
    pub(crate) b: RingPoly,
    pub(crate) a: RingPoly,
    pub(crate) context_id: ContextId,
}

impl PublicKey {
    pub fn components(&self) -> (&RingPoly, &RingPoly) {
        (&self.b, &self.a)
    }

    pub fn context_id(&self) -> ContextId {
        self.context_id
    }
}

fn sample_ternary(ctx: &CkksContext, rng: &mut impl Rng) -> RingPoly {
    let coeffs: Vec<i64> = (0..ctx.degree())
        .map(|_| rng.random_range(-1i64..=1))
        .collect();
    RingPoly::from_signed(ctx, &coeffs)
}

/// Rounded Gaussian of width sigma, coefficient form.
fn sample_error(ctx: &CkksContext, rng: &mut impl Rng) -> RingPoly {
    let sigma = ctx.sigma();
    let coeffs: Vec<i64> = if sigma == 0.0 {
        vec![0; ctx.degree()]
    } else {
        let normal = Normal::new(0.0, sigma).expect("sigma validated by context");
        (0..ctx.degree())
            .map(|_| normal.sample(rng).round() as i64)
            .collect()
    };
    RingPoly::from_signed(ctx, &coeffs)
}

fn sample_uniform_ntt(ctx: &CkksContext, rng: &mut impl Rng) -> RingPoly {
    let mut residues = Vec::with_capacity(ctx.degree() * ctx.prime_count());
    for m in ctx.moduli() {
        residues.extend((0..ctx.degree()).map(|_| rng.random_range(0..m.value())));
    }
    RingPoly::from_residues(ctx, residues, Representation::Ntt).expect("sampled in range")
}

impl CkksContext {
    /// Deterministic for a fixed seed.
    pub fn keygen(&self, seed: u64) -> (SecretKey, PublicKey) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let s = sample_ternary(self, &mut rng);
        let a = sample_uniform_ntt(self, &mut rng);
        let mut e = sample_error(self, &mut rng);

        let mut s_ntt = s.clone();
        s_ntt.ntt_forward(self).expect("coefficient form");
        e.ntt_forward(self).expect("coefficient form");
        let mut b = a.mul_ntt(&s_ntt, self).expect("ntt form");
        b.neg_assign(self);
        b.add_assign(&e, self).expect("ntt form");

        (
            SecretKey {
                s,
                context_id: self.id(),
            },
            PublicKey {
                b,
                a,
                context_id: self.id(),
            },
        )
    }

    pub fn encrypt(&self, pk: &PublicKey, pt: &Plaintext, seed: u64) -> Result<Ciphertext> {
        self.check_id(pk.context_id)?;
        self.check_id(pt.context_id())?;
        if pt.poly().representation() != Representation::Coefficient {
            return Err(CkksError::Representation {
                expected: Representation::Coefficient,
            });
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut u = sample_ternary(self, &mut rng);
        let e0 = sample_error(self, &mut rng);
        let e1 = sample_error(self, &mut rng);
        u.ntt_forward(self)?;

        let mut c0 = pk.b.mul_ntt(&u, self)?;
        c0.ntt_inverse(self)?;
        c0.add_assign(&e0, self)?;
        c0.add_assign(pt.poly(), self)?;

        let mut c1 = pk.a.mul_ntt(&u, self)?;
        c1.ntt_inverse(self)?;
        c1.add_assign(&e1, self)?;

        Ok(Ciphertext {
            c0,
            c1,
            scale: pt.scale(),
            depth: 0,
            context_id: self.id(),
        })
    }

    pub fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Plaintext> {
        self.check_id(sk.context_id)?;
        self.check_id(ct.context_id)?;
        let mut s = sk.s.clone();
        s.ntt_forward(self)?;
        let mut c1 = ct.c1.clone();
        c1.ntt_forward(self)?;
        let mut m = c1.mul_ntt(&s, self)?;
        m.ntt_inverse(self)?;
        m.add_assign(&ct.c0, self)?;
        Ok(Plaintext::new(m, ct.scale, self.id()))
    }
}
