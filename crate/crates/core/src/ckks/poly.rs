use serde::{Deserialize, Serialize};

use super::context::CkksContext;
use super::{CkksError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    Coefficient,
    Ntt,
}

/// An element of `Z_Q[X]/(X^n + 1)` in RNS form, stored prime-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingPoly {
    degree: usize,
    residues: Vec<u64>,
    repr: Representation,
}

impl RingPoly {
    pub fn zero(ctx: &CkksContext, repr: Representation) -> Self {
        Self {
            degree: ctx.degree(),
            residues: vec![0; ctx.degree() * ctx.prime_count()],
            repr,
        }
    }

    /// Coefficient-domain polynomial from small signed coefficients.
    pub fn from_signed(ctx: &CkksContext, coeffs: &[i64]) -> Self {
        assert_eq!(coeffs.len(), ctx.degree());
        let mut residues = Vec::with_capacity(coeffs.len() * ctx.prime_count());
        for m in ctx.moduli() {
            residues.extend(coeffs.iter().map(|&c| m.from_i64(c)));
        }
        Self {
            degree: ctx.degree(),
            residues,
            repr: Representation::Coefficient,
        }
    }

    pub fn from_i128(ctx: &CkksContext, coeffs: &[i128]) -> Self {
        assert_eq!(coeffs.len(), ctx.degree());
        let mut residues = Vec::with_capacity(coeffs.len() * ctx.prime_count());
        for m in ctx.moduli() {
            residues.extend(coeffs.iter().map(|&c| m.from_i128(c)));
        }
        Self {
            degree: ctx.degree(),
            residues,
            repr: Representation::Coefficient,
        }
    }

    /// Wraps raw residues; every residue must already be reduced.
    pub fn from_residues(
        ctx: &CkksContext,
        residues: Vec<u64>,
        repr: Representation,
    ) -> Result<Self> {
        if residues.len() != ctx.degree() * ctx.prime_count() {
            return Err(CkksError::Format(format!(
                "expected {} residues, found {}",
                ctx.degree() * ctx.prime_count(),
                residues.len()
            )));
        }
        for (i, m) in ctx.moduli().iter().enumerate() {
            let row = &residues[i * ctx.degree()..(i + 1) * ctx.degree()];
            if row.iter().any(|&r| r >= m.value()) {
                return Err(CkksError::Format(format!(
                    "residue not reduced modulo prime {i}"
                )));
            }
        }
        Ok(Self {
            degree: ctx.degree(),
            residues,
            repr,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn representation(&self) -> Representation {
        self.repr
    }

    pub fn residues(&self, prime_index: usize) -> &[u64] {
        &self.residues[prime_index * self.degree..(prime_index + 1) * self.degree]
    }

    pub fn residues_mut(&mut self, prime_index: usize) -> &mut [u64] {
        &mut self.residues[prime_index * self.degree..(prime_index + 1) * self.degree]
    }

    pub fn all_residues(&self) -> &[u64] {
        &self.residues
    }

    fn rows_mut(&mut self) -> impl Iterator<Item = &mut [u64]> {
        self.residues.chunks_exact_mut(self.degree)
    }

    fn expect(&self, repr: Representation) -> Result<()> {
        if self.repr == repr {
            Ok(())
        } else {
            Err(CkksError::Representation { expected: repr })
        }
    }

    pub fn ntt_forward(&mut self, ctx: &CkksContext) -> Result<()> {
        self.expect(Representation::Coefficient)?;
        for (i, row) in self.rows_mut().enumerate() {
            ctx.ntt_table(i).forward(row);
        }
        self.repr = Representation::Ntt;
        Ok(())
    }

    pub fn ntt_inverse(&mut self, ctx: &CkksContext) -> Result<()> {
        self.expect(Representation::Ntt)?;
        for (i, row) in self.rows_mut().enumerate() {
            ctx.ntt_table(i).inverse(row);
        }
        self.repr = Representation::Coefficient;
        Ok(())
    }

    pub fn add_assign(&mut self, other: &RingPoly, ctx: &CkksContext) -> Result<()> {
        other.expect(self.repr)?;
        for (i, (row, orow)) in self
            .residues
            .chunks_exact_mut(self.degree)
            .zip(other.residues.chunks_exact(other.degree))
            .enumerate()
        {
            let m = ctx.moduli()[i];
            for (x, &y) in row.iter_mut().zip(orow) {
                *x = m.add(*x, y);
            }
        }
        Ok(())
    }

    pub fn neg_assign(&mut self, ctx: &CkksContext) {
        let degree = self.degree;
        for (i, row) in self.residues.chunks_exact_mut(degree).enumerate() {
            let m = ctx.moduli()[i];
            for x in row.iter_mut() {
                *x = m.neg(*x);
            }
        }
    }

    /// Pointwise product; both operands in NTT form.
    pub fn mul_ntt(&self, other: &RingPoly, ctx: &CkksContext) -> Result<RingPoly> {
        self.expect(Representation::Ntt)?;
        other.expect(Representation::Ntt)?;
        let mut out = self.clone();
        for (i, (row, orow)) in out
            .residues
            .chunks_exact_mut(self.degree)
            .zip(other.residues.chunks_exact(other.degree))
            .enumerate()
        {
            let m = ctx.moduli()[i];
            for (x, &y) in row.iter_mut().zip(orow) {
                *x = m.mul(*x, y);
            }
        }
        Ok(out)
    }

    /// Multiplies every coefficient by an integer constant.
    pub fn scalar_mul_assign(&mut self, k: i128, ctx: &CkksContext) {
        let degree = self.degree;
        for (i, row) in self.residues.chunks_exact_mut(degree).enumerate() {
            let m = ctx.moduli()[i];
            let kr = m.from_i128(k);
            let ks = m.shoup(kr);
            for x in row.iter_mut() {
                *x = m.mul_shoup(*x, kr, ks);
            }
        }
    }

    /// Adds an integer to the constant coefficient (coefficient form only).
    pub fn add_constant(&mut self, c: i128, ctx: &CkksContext) -> Result<()> {
        self.expect(Representation::Coefficient)?;
        let degree = self.degree;
        for (i, row) in self.residues.chunks_exact_mut(degree).enumerate() {
            let m = ctx.moduli()[i];
            row[0] = m.add(row[0], m.from_i128(c));
        }
        Ok(())
    }

    /// Centered lift of coefficient `k` (coefficient form only).
    pub fn centered_coefficient(&self, k: usize, ctx: &CkksContext) -> i128 {
        debug_assert_eq!(self.repr, Representation::Coefficient);
        ctx.crt()
            .centered(ctx.moduli(), |i| self.residues[i * self.degree + k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::{BigInt, BigUint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Big-integer CRT, independent of the wrapped-u128 route.
    fn bigint_centered(residues: &[u64], primes: &[u64]) -> BigInt {
        let q: BigUint = primes.iter().map(|&p| BigUint::from(p)).product();
        let mut acc = BigUint::from(0u32);
        for (&r, &p) in residues.iter().zip(primes) {
            let qi = &q / p;
            let qi_mod = (&qi % p).to_u64_digits().first().copied().unwrap_or(0);
            let inv = BigUint::from(qi_mod).modpow(&BigUint::from(p - 2), &BigUint::from(p));
            acc += BigUint::from(r) * inv * qi;
        }
        acc %= &q;
        let x = BigInt::from(acc);
        let qb = BigInt::from(q);
        if &x * 2 > qb {
            x - qb
        } else {
            x
        }
    }

    #[test]
    fn crt_lift_matches_bigint() {
        let ctx = CkksContext::new(1024, &[60, 40, 40, 60], 2f64.powi(40)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coeffs: Vec<i128> = (0..1024)
            .map(|i| match i % 3 {
                0 => rng.random_range(-(1i128 << 100)..(1i128 << 100)),
                1 => rng.random_range(-1000..1000),
                _ => rng.random_range(-(1i128 << 60)..(1i128 << 60)),
            })
            .collect();
        let poly = RingPoly::from_i128(&ctx, &coeffs);
        let primes = ctx.primes();
        for k in 0..1024 {
            let res: Vec<u64> = (0..primes.len()).map(|i| poly.residues(i)[k]).collect();
            let oracle = bigint_centered(&res, &primes);
            assert_eq!(oracle, BigInt::from(coeffs[k]));
            assert_eq!(poly.centered_coefficient(k, &ctx), coeffs[k]);
        }
    }

    #[test]
    fn representation_is_enforced() {
        let ctx = CkksContext::new(1024, &[40], 2f64.powi(20)).unwrap();
        let mut p = RingPoly::zero(&ctx, Representation::Coefficient);
        assert!(p.ntt_inverse(&ctx).is_err());
        p.ntt_forward(&ctx).unwrap();
        assert!(matches!(
            p.ntt_forward(&ctx),
            Err(CkksError::Representation { .. })
        ));
        let q = RingPoly::zero(&ctx, Representation::Coefficient);
        assert!(p.mul_ntt(&q, &ctx).is_err());
    }

    #[test]
    fn unreduced_residues_rejected() {
        let ctx = CkksContext::new(1024, &[40], 2f64.powi(20)).unwrap();
        let mut raw = vec![0u64; 1024];
        raw[5] = ctx.primes()[0];
        assert!(RingPoly::from_residues(&ctx, raw, Representation::Coefficient).is_err());
    }
}
