//! Negacyclic number-theoretic transform over `Z_p[X]/(X^n + 1)`.
//!
//! Forward is Cooley-Tukey with natural-order input and bit-reversed output;
//! inverse is Gentleman-Sande taking bit-reversed input. Pointwise products
//! in the transformed domain are negacyclic convolutions.

use super::arith::{primitive_root_of_unity, Modulus};

#[derive(Clone, Debug)]
pub struct NttTable {
    modulus: Modulus,
    degree: usize,
    // psi^bitrev(i), with Shoup companions
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    psi_inv_rev_shoup: Vec<u64>,
    degree_inv: u64,
    degree_inv_shoup: u64,
}

fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    r
}

impl NttTable {
    pub fn new(modulus: Modulus, degree: usize) -> Self {
        assert!(degree.is_power_of_two() && degree >= 2);
        assert_eq!((modulus.value() - 1) % (2 * degree as u64), 0);
        let log_n = degree.trailing_zeros();
        let psi = primitive_root_of_unity(&modulus, 2 * degree as u64);
        let psi_inv = modulus.inv(psi);

        let mut psi_rev = vec![0u64; degree];
        let mut psi_inv_rev = vec![0u64; degree];
        let mut pw = 1u64;
        let mut pw_inv = 1u64;
        for i in 0..degree {
            let r = bit_reverse(i, log_n);
            psi_rev[r] = pw;
            psi_inv_rev[r] = pw_inv;
            pw = modulus.mul(pw, psi);
            pw_inv = modulus.mul(pw_inv, psi_inv);
        }
        let psi_rev_shoup = psi_rev.iter().map(|&w| modulus.shoup(w)).collect();
        let psi_inv_rev_shoup = psi_inv_rev.iter().map(|&w| modulus.shoup(w)).collect();
        let degree_inv = modulus.inv(degree as u64);
        Self {
            modulus,
            degree,
            psi_rev,
            psi_rev_shoup,
            psi_inv_rev,
            psi_inv_rev_shoup,
            degree_inv,
            degree_inv_shoup: modulus.shoup(degree_inv),
        }
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn forward(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.degree);
        let m = &self.modulus;
        let n = self.degree;
        let mut t = n;
        let mut groups = 1;
        while groups < n {
            t >>= 1;
            for i in 0..groups {
                let j1 = 2 * i * t;
                let w = self.psi_rev[groups + i];
                let ws = self.psi_rev_shoup[groups + i];
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = m.mul_shoup(*y, w, ws);
                    *x = m.add(u, v);
                    *y = m.sub(u, v);
                }
            }
            groups <<= 1;
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.degree);
        let m = &self.modulus;
        let n = self.degree;
        let mut t = 1;
        let mut groups = n;
        while groups > 1 {
            let half = groups >> 1;
            for i in 0..half {
                let j1 = 2 * i * t;
                let w = self.psi_inv_rev[half + i];
                let ws = self.psi_inv_rev_shoup[half + i];
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    *x = m.add(u, v);
                    *y = m.mul_shoup(m.sub(u, v), w, ws);
                }
            }
            t <<= 1;
            groups = half;
        }
        for x in a.iter_mut() {
            *x = m.mul_shoup(*x, self.degree_inv, self.degree_inv_shoup);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckks::arith::find_ntt_prime;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schoolbook_negacyclic(a: &[u64], b: &[u64], m: &Modulus) -> Vec<u64> {
        let n = a.len();
        let mut out = vec![0u64; n];
        for i in 0..n {
            for j in 0..n {
                let prod = m.mul(a[i], b[j]);
                let k = i + j;
                if k < n {
                    out[k] = m.add(out[k], prod);
                } else {
                    out[k - n] = m.sub(out[k - n], prod);
                }
            }
        }
        out
    }

    fn table(bits: u32, n: usize) -> NttTable {
        let p = find_ntt_prime(bits, 2 * n as u64, &[]).unwrap();
        NttTable::new(Modulus::new(p), n)
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (bits, n) in [(30, 16), (40, 1024), (60, 4096)] {
            let t = table(bits, n);
            let p = t.modulus().value();
            let orig: Vec<u64> = (0..n).map(|_| rng.random_range(0..p)).collect();
            let mut a = orig.clone();
            t.forward(&mut a);
            t.inverse(&mut a);
            assert_eq!(a, orig);
        }
    }

    #[test]
    fn round_trip_constant_poly() {
        let t = table(40, 256);
        let mut a = vec![0u64; 256];
        a[0] = 12345;
        let orig = a.clone();
        t.forward(&mut a);
        t.inverse(&mut a);
        assert_eq!(a, orig);
    }

    #[test]
    fn pointwise_product_is_negacyclic_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 256;
        for bits in [40, 60] {
            let t = table(bits, n);
            let m = *t.modulus();
            let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..m.value())).collect();
            let b: Vec<u64> = (0..n).map(|_| rng.random_range(0..m.value())).collect();
            let expected = schoolbook_negacyclic(&a, &b, &m);
            let (mut fa, mut fb) = (a.clone(), b.clone());
            t.forward(&mut fa);
            t.forward(&mut fb);
            let mut prod: Vec<u64> = fa.iter().zip(&fb).map(|(&x, &y)| m.mul(x, y)).collect();
            t.inverse(&mut prod);
            assert_eq!(prod, expected);
        }
    }

    #[test]
    fn x_times_x_pow_n_minus_one_wraps_to_minus_one() {
        let n = 64;
        let t = table(30, n);
        let m = *t.modulus();
        let mut a = vec![0u64; n];
        a[1] = 1;
        let mut b = vec![0u64; n];
        b[n - 1] = 1;
        t.forward(&mut a);
        t.forward(&mut b);
        let mut prod: Vec<u64> = a.iter().zip(&b).map(|(&x, &y)| m.mul(x, y)).collect();
        t.inverse(&mut prod);
        let mut expected = vec![0u64; n];
        expected[0] = m.value() - 1;
        assert_eq!(prod, expected);
    }
}
