//! Word-sized modular arithmetic for the RNS primes.

/// A prime modulus below 2^62 with a precomputed Barrett constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    bits: u32,
    barrett: u64,
}

impl Modulus {
    pub fn new(value: u64) -> Self {
        assert!(
            value > 2 && value < (1 << 62),
            "modulus out of range: {value}"
        );
        let bits = 64 - value.leading_zeros();
        let barrett = ((1u128 << (2 * bits)) / value as u128) as u64;
        Self {
            value,
            bits,
            barrett,
        }
    }

    #[inline]
    pub fn value(&self) -> u64 {
        self.value
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Reduces `x < p^2`.
    #[inline]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let k = self.bits;
        let q = (((x >> (k - 1)) as u64 as u128) * self.barrett as u128) >> (k + 1);
        let mut r = (x - q * self.value as u128) as u64;
        while r >= self.value {
            r -= self.value;
        }
        r
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base %= self.value;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse via Fermat; the modulus is prime.
    pub fn inv(&self, a: u64) -> u64 {
        self.pow(a, self.value - 2)
    }

    /// Maps a signed integer into `[0, p)`.
    #[inline]
    pub fn from_i64(&self, x: i64) -> u64 {
        let r = x.rem_euclid(self.value as i64);
        r as u64
    }

    #[inline]
    pub fn from_i128(&self, x: i128) -> u64 {
        x.rem_euclid(self.value as i128) as u64
    }

    /// Shoup companion `floor(w * 2^64 / p)` for a fixed multiplicand `w`.
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `a * w mod p` using the Shoup companion of `w`.
    #[inline]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let q = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(q.wrapping_mul(self.value));
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }
}

fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod_u64(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod_u64(acc, base, m);
        }
        base = mul_mod_u64(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Largest prime `p < 2^bits`, `p >= 2^(bits-1)`, `p = 1 mod step`, not in `exclude`.
pub fn find_ntt_prime(bits: u32, step: u64, exclude: &[u64]) -> Option<u64> {
    let upper = 1u64 << bits;
    let lower = 1u64 << (bits - 1);
    if step >= upper {
        return None;
    }
    // Largest candidate of the form k*step + 1 below 2^bits.
    let mut candidate = ((upper - 1 - 1) / step) * step + 1;
    while candidate >= lower {
        if is_prime(candidate) && !exclude.contains(&candidate) {
            return Some(candidate);
        }
        if candidate < step {
            break;
        }
        candidate -= step;
    }
    None
}

/// A primitive `order`-th root of unity modulo prime `p` (`order | p - 1`, power of two).
pub fn primitive_root_of_unity(modulus: &Modulus, order: u64) -> u64 {
    let p = modulus.value();
    debug_assert_eq!((p - 1) % order, 0);
    let cofactor = (p - 1) / order;
    for x in 2..p {
        let g = modulus.pow(x, cofactor);
        // For power-of-two order, primitive iff g^(order/2) = -1.
        if modulus.pow(g, order / 2) == p - 1 {
            return g;
        }
    }
    unreachable!("prime {p} has no element of order {order}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miller_rabin_small() {
        let primes: Vec<u64> = (0..60).filter(|&n| is_prime(n)).collect();
        assert_eq!(
            primes,
            vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]
        );
        assert!(is_prime(0xFFFF_FFFF_0000_0001));
        assert!(!is_prime(3_215_031_751)); // strong pseudoprime to bases 2,3,5,7
    }

    #[test]
    fn barrett_matches_u128_remainder() {
        let m = Modulus::new(0x3FFF_FFFF_FFFF_FFC5);
        let p = find_ntt_prime(61, 1 << 14, &[]).unwrap();
        for modulus in [
            m,
            Modulus::new(p),
            Modulus::new(97),
            Modulus::new(1_048_609),
        ] {
            let pv = modulus.value();
            let mut x = 0x1234_5678_9abc_def1u64;
            for _ in 0..2000 {
                x = x
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let a = x % pv;
                let b = x.rotate_left(17) % pv;
                assert_eq!(modulus.mul(a, b), mul_mod_u64(a, b, pv));
                let ws = modulus.shoup(b);
                assert_eq!(modulus.mul_shoup(a, b, ws), mul_mod_u64(a, b, pv));
            }
        }
    }

    #[test]
    fn ntt_primes_are_congruent() {
        let step = 2 * 8192;
        let p = find_ntt_prime(40, step, &[]).unwrap();
        assert_eq!(p % step, 1);
        assert_eq!(64 - p.leading_zeros(), 40);
        let q = find_ntt_prime(40, step, &[p]).unwrap();
        assert!(q < p);
        assert!(find_ntt_prime(20, 1 << 21, &[]).is_none());
    }

    #[test]
    fn root_of_unity_has_exact_order() {
        let p = find_ntt_prime(30, 512, &[]).unwrap();
        let m = Modulus::new(p);
        let w = primitive_root_of_unity(&m, 512);
        assert_eq!(m.pow(w, 512), 1);
        assert_eq!(m.pow(w, 256), p - 1);
        assert_eq!(m.mul(w, m.inv(w)), 1);
    }
}
