use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::arith::{find_ntt_prime, is_prime, Modulus};
use super::encoding::SpecialFft;
use super::ntt::NttTable;
use super::{CkksError, Result};

/// Smallest ring degree accepted.
pub const MIN_DEGREE: usize = 1024;
/// Degrees below this are usable for tests but not secure.
pub const SECURE_DEGREE: usize = 4096;

/// User-facing CKKS parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CkksParams {
    pub degree: usize,
    pub moduli_bits: Vec<u32>,
    pub scale_bits: u32,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    3.2
}

impl Default for CkksParams {
    /// Desk-scale default: degree 8192, four primes, scale 2^40.
    fn default() -> Self {
        Self {
            degree: 8192,
            moduli_bits: vec![60, 40, 40, 60],
            scale_bits: 40,
            sigma: default_sigma(),
        }
    }
}

impl CkksParams {
    /// Degree 16384 with primes of [60, 40, 40, 40, 60] bits.
    pub fn full_scale() -> Self {
        Self {
            degree: 16384,
            moduli_bits: vec![60, 40, 40, 40, 60],
            scale_bits: 40,
            sigma: default_sigma(),
        }
    }

    pub fn build(&self) -> Result<CkksContext> {
        CkksContext::with_sigma(
            self.degree,
            &self.moduli_bits,
            2f64.powi(self.scale_bits as i32),
            self.sigma,
        )
    }
}

/// Fingerprint used to detect operands from different contexts.
pub type ContextId = u64;

struct Inner {
    degree: usize,
    moduli: Vec<Modulus>,
    ntt: Vec<NttTable>,
    scale: f64,
    sigma: f64,
    id: ContextId,
    fft: SpecialFft,
    crt: CrtTables,
}

/// Immutable parameter set plus precomputed tables. Cheap to clone.
#[derive(Clone)]
pub struct CkksContext {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for CkksContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CkksContext")
            .field("degree", &self.inner.degree)
            .field("primes", &self.primes())
            .field("scale", &self.inner.scale)
            .finish()
    }
}

impl CkksContext {
    pub fn new(degree: usize, moduli_bits: &[u32], scale: f64) -> Result<Self> {
        Self::with_sigma(degree, moduli_bits, scale, default_sigma())
    }

    pub fn with_sigma(degree: usize, moduli_bits: &[u32], scale: f64, sigma: f64) -> Result<Self> {
        check_degree(degree)?;
        if moduli_bits.is_empty() {
            return Err(CkksError::Parameter("moduli_bits is empty".into()));
        }
        let step = 2 * degree as u64;
        let mut primes: Vec<u64> = Vec::with_capacity(moduli_bits.len());
        for &bits in moduli_bits {
            if !(20..=61).contains(&bits) {
                return Err(CkksError::Parameter(format!(
                    "prime bit size {bits} outside [20, 61]"
                )));
            }
            let p = find_ntt_prime(bits, step, &primes).ok_or_else(|| {
                CkksError::Parameter(format!("no {bits}-bit prime congruent to 1 mod {step}"))
            })?;
            primes.push(p);
        }
        Self::from_primes(degree, &primes, scale, sigma)
    }

    /// Builds a context from explicit primes (used when loading keys).
    pub fn from_primes(degree: usize, primes: &[u64], scale: f64, sigma: f64) -> Result<Self> {
        check_degree(degree)?;
        if primes.is_empty() {
            return Err(CkksError::Parameter("no primes".into()));
        }
        let step = 2 * degree as u64;
        for (i, &p) in primes.iter().enumerate() {
            if p >= 1 << 62 || !is_prime(p) || p % step != 1 {
                return Err(CkksError::Parameter(format!(
                    "{p} is not a prime congruent to 1 mod {step}"
                )));
            }
            if primes[..i].contains(&p) {
                return Err(CkksError::Parameter(format!("prime {p} repeated")));
            }
        }
        if !(scale.is_finite() && scale > 1.0) {
            return Err(CkksError::Parameter(format!("invalid scale {scale}")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(CkksError::Parameter(format!("invalid sigma {sigma}")));
        }
        // Last prime is the special prime when more than one is given.
        let data_primes = if primes.len() > 1 {
            &primes[..primes.len() - 1]
        } else {
            primes
        };
        let data_log2: f64 = data_primes.iter().map(|&p| (p as f64).log2()).sum();
        if scale.log2() >= data_log2 {
            return Err(CkksError::Parameter(format!(
                "scale 2^{:.1} not below the data modulus 2^{:.1}",
                scale.log2(),
                data_log2
            )));
        }

        let moduli: Vec<Modulus> = primes.iter().map(|&p| Modulus::new(p)).collect();
        let ntt = moduli.iter().map(|&m| NttTable::new(m, degree)).collect();
        let id = fingerprint(degree, primes, scale, sigma);
        Ok(Self {
            inner: Arc::new(Inner {
                degree,
                crt: CrtTables::new(&moduli),
                moduli,
                ntt,
                scale,
                sigma,
                id,
                fft: SpecialFft::new(degree),
            }),
        })
    }

    pub fn degree(&self) -> usize {
        self.inner.degree
    }

    pub fn slot_count(&self) -> usize {
        self.inner.degree / 2
    }

    pub fn scale(&self) -> f64 {
        self.inner.scale
    }

    pub fn sigma(&self) -> f64 {
        self.inner.sigma
    }

    pub fn id(&self) -> ContextId {
        self.inner.id
    }

    pub fn moduli(&self) -> &[Modulus] {
        &self.inner.moduli
    }

    pub fn primes(&self) -> Vec<u64> {
        self.inner.moduli.iter().map(|m| m.value()).collect()
    }

    pub fn prime_count(&self) -> usize {
        self.inner.moduli.len()
    }

    pub fn ntt_table(&self, prime_index: usize) -> &NttTable {
        &self.inner.ntt[prime_index]
    }

    /// `log2` of the full ciphertext modulus.
    pub fn log2_modulus(&self) -> f64 {
        self.inner
            .moduli
            .iter()
            .map(|m| (m.value() as f64).log2())
            .sum()
    }

    /// Toy degrees are allowed but give no meaningful security.
    pub fn is_insecure(&self) -> bool {
        self.inner.degree < SECURE_DEGREE
    }

    pub(crate) fn fft(&self) -> &SpecialFft {
        &self.inner.fft
    }

    pub(crate) fn crt(&self) -> &CrtTables {
        &self.inner.crt
    }

    pub(crate) fn check_id(&self, id: ContextId) -> Result<()> {
        if id == self.inner.id {
            Ok(())
        } else {
            Err(CkksError::ContextMismatch)
        }
    }
}

fn check_degree(degree: usize) -> Result<()> {
    if !degree.is_power_of_two() {
        return Err(CkksError::Parameter(format!(
            "degree {degree} is not a power of two"
        )));
    }
    if degree < MIN_DEGREE {
        return Err(CkksError::Parameter(format!(
            "degree {degree} below the minimum {MIN_DEGREE}"
        )));
    }
    Ok(())
}

fn fingerprint(degree: usize, primes: &[u64], scale: f64, sigma: f64) -> u64 {
    // FNV-1a, stable across builds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(degree as u64);
    for &p in primes {
        feed(p);
    }
    feed(scale.to_bits());
    feed(sigma.to_bits());
    h
}

/// CRT reconstruction of centered coefficients.
///
/// `x = sum_i y_i * (Q/q_i) - v*Q` with `y_i = r_i * (Q/q_i)^-1 mod q_i` and
/// `v = round(sum_i y_i / q_i)`. The products are evaluated modulo 2^128,
/// which yields `x` exactly whenever `|x| < 2^127`.
pub(crate) struct CrtTables {
    punctured_inv: Vec<(u64, u64)>,
    punctured_wrapped: Vec<u128>,
    modulus_wrapped: u128,
    inv_primes: Vec<f64>,
}

impl CrtTables {
    fn new(moduli: &[Modulus]) -> Self {
        let mut punctured_inv = Vec::with_capacity(moduli.len());
        let mut punctured_wrapped = Vec::with_capacity(moduli.len());
        let mut modulus_wrapped: u128 = 1;
        for (i, mi) in moduli.iter().enumerate() {
            let mut prod_mod_qi = 1u64;
            let mut prod_wrapped: u128 = 1;
            for (j, mj) in moduli.iter().enumerate() {
                if i != j {
                    prod_mod_qi = mi.mul(prod_mod_qi, mj.value() % mi.value());
                    prod_wrapped = prod_wrapped.wrapping_mul(mj.value() as u128);
                }
            }
            let inv = mi.inv(prod_mod_qi);
            punctured_inv.push((inv, mi.shoup(inv)));
            punctured_wrapped.push(prod_wrapped);
            modulus_wrapped = modulus_wrapped.wrapping_mul(mi.value() as u128);
        }
        Self {
            punctured_inv,
            punctured_wrapped,
            modulus_wrapped,
            inv_primes: moduli.iter().map(|m| 1.0 / m.value() as f64).collect(),
        }
    }

    #[inline]
    pub(crate) fn centered(&self, moduli: &[Modulus], residues: impl Fn(usize) -> u64) -> i128 {
        let mut acc: u128 = 0;
        let mut frac = 0.0f64;
        for (i, m) in moduli.iter().enumerate() {
            let (inv, inv_shoup) = self.punctured_inv[i];
            let y = m.mul_shoup(residues(i), inv, inv_shoup);
            acc = acc.wrapping_add((y as u128).wrapping_mul(self.punctured_wrapped[i]));
            frac += y as f64 * self.inv_primes[i];
        }
        let v = frac.round() as u128;
        acc.wrapping_sub(v.wrapping_mul(self.modulus_wrapped)) as i128
    }
}
