//! Canonical embedding via the rotation-group ("special") FFT.
//!
//! Slot `j` of a plaintext holds `m(zeta^(5^j))` with `zeta = exp(2*pi*i / 2n)`.
//! Only the real parts of the `n/2` slots carry data.

use num_complex::Complex64;

use super::context::CkksContext;
use super::keys::Plaintext;
use super::poly::{Representation, RingPoly};
use super::{CkksError, Result};

pub(crate) struct SpecialFft {
    slots: usize,
    cyclotomic: usize,
    rot_group: Vec<usize>,
    ksi_pows: Vec<Complex64>,
}

fn bit_reverse_in_place<T>(vals: &mut [T]) {
    let n = vals.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j ^= bit;
        if i < j {
            vals.swap(i, j);
        }
    }
}

impl SpecialFft {
    pub(crate) fn new(degree: usize) -> Self {
        let slots = degree / 2;
        let cyclotomic = 2 * degree;
        let mut rot_group = Vec::with_capacity(slots);
        let mut five_pow = 1usize;
        for _ in 0..slots {
            rot_group.push(five_pow);
            five_pow = (five_pow * 5) % cyclotomic;
        }
        let ksi_pows = (0..=cyclotomic)
            .map(|j| {
                let angle = 2.0 * std::f64::consts::PI * j as f64 / cyclotomic as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        Self {
            slots,
            cyclotomic,
            rot_group,
            ksi_pows,
        }
    }

    /// Coefficient-pair vector -> slot values.
    pub(crate) fn forward(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        debug_assert_eq!(size, self.slots);
        bit_reverse_in_place(vals);
        let mut len = 2;
        while len <= size {
            let half = len >> 1;
            let quarter = len << 2;
            for i in (0..size).step_by(len) {
                for j in 0..half {
                    let idx = (self.rot_group[j] % quarter) * self.cyclotomic / quarter;
                    let u = vals[i + j];
                    let v = vals[i + j + half] * self.ksi_pows[idx];
                    vals[i + j] = u + v;
                    vals[i + j + half] = u - v;
                }
            }
            len <<= 1;
        }
    }

    /// Slot values -> coefficient-pair vector.
    pub(crate) fn inverse(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        debug_assert_eq!(size, self.slots);
        let mut len = size;
        while len >= 2 {
            let half = len >> 1;
            let quarter = len << 2;
            for i in (0..size).step_by(len) {
                for j in 0..half {
                    let idx = (quarter - (self.rot_group[j] % quarter)) * self.cyclotomic / quarter;
                    let u = vals[i + j] + vals[i + j + half];
                    let v = (vals[i + j] - vals[i + j + half]) * self.ksi_pows[idx];
                    vals[i + j] = u;
                    vals[i + j + half] = v;
                }
            }
            len >>= 1;
        }
        bit_reverse_in_place(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            *v *= inv;
        }
    }
}

/// Largest coefficient magnitude accepted by the encoder.
const MAX_COEFF_LOG2: f64 = 120.0;

impl CkksContext {
    /// Encodes up to `slot_count` reals at the context's default scale.
    pub fn encode(&self, values: &[f64]) -> Result<Plaintext> {
        self.encode_at_scale(values, self.scale())
    }

    pub fn encode_at_scale(&self, values: &[f64], scale: f64) -> Result<Plaintext> {
        let slots = self.slot_count();
        if values.len() > slots {
            return Err(CkksError::Capacity {
                len: values.len(),
                slots,
            });
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(CkksError::Input(format!("invalid scale {scale}")));
        }
        let mut max_abs = 0.0f64;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(CkksError::Input(format!("non-finite value at slot {i}")));
            }
            max_abs = max_abs.max(v.abs());
        }
        // Headroom: two bits below the modulus, and within the i128 lift.
        let limit = (self.log2_modulus() - 2.0).min(MAX_COEFF_LOG2);
        if max_abs > 0.0 && (max_abs * scale).log2() >= limit {
            return Err(CkksError::Input(format!(
                "|value| * scale = 2^{:.1} exceeds the modulus headroom 2^{limit:.1}",
                (max_abs * scale).log2()
            )));
        }

        let mut z: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        z.resize(slots, Complex64::new(0.0, 0.0));
        self.fft().inverse(&mut z);

        let mut coeffs = vec![0i128; self.degree()];
        for (i, u) in z.iter().enumerate() {
            // f64::round rounds half away from zero.
            coeffs[i] = (u.re * scale).round() as i128;
            coeffs[i + slots] = (u.im * scale).round() as i128;
        }
        Ok(Plaintext::new(
            RingPoly::from_i128(self, &coeffs),
            scale,
            self.id(),
        ))
    }

    /// Decodes all `slot_count` real slots.
    pub fn decode(&self, pt: &Plaintext) -> Result<Vec<f64>> {
        self.check_id(pt.context_id())?;
        let poly = pt.poly();
        if poly.representation() != Representation::Coefficient {
            return Err(CkksError::Representation {
                expected: Representation::Coefficient,
            });
        }
        let slots = self.slot_count();
        let scale = pt.scale();
        let mut z: Vec<Complex64> = (0..slots)
            .map(|i| {
                let re = poly.centered_coefficient(i, self) as f64 / scale;
                let im = poly.centered_coefficient(i + slots, self) as f64 / scale;
                Complex64::new(re, im)
            })
            .collect();
        self.fft().forward(&mut z);
        Ok(z.into_iter().map(|c| c.re).collect())
    }
}
