use super::context::CkksContext;
use super::keys::Ciphertext;
use super::{CkksError, Result};

/// Relative scale tolerance for addition.
const SCALE_TOLERANCE: f64 = 1e-9;

impl CkksContext {
    /// Slot-wise sum; scales must agree.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let mut out = a.clone();
        self.add_assign(&mut out, b)?;
        Ok(out)
    }

    pub fn add_assign(&self, acc: &mut Ciphertext, other: &Ciphertext) -> Result<()> {
        self.check_id(acc.context_id)?;
        self.check_id(other.context_id)?;
        if (acc.scale - other.scale).abs() / acc.scale >= SCALE_TOLERANCE {
            return Err(CkksError::ScaleMismatch(acc.scale, other.scale));
        }
        acc.c0.add_assign(&other.c0, self)?;
        acc.c1.add_assign(&other.c1, self)?;
        acc.depth = acc.depth.max(other.depth);
        Ok(())
    }

    /// Sums a non-empty list of ciphertexts.
    pub fn add_many<'a>(
        &self,
        cts: impl IntoIterator<Item = &'a Ciphertext>,
    ) -> Result<Ciphertext> {
        let mut iter = cts.into_iter();
        let mut acc = iter
            .next()
            .ok_or_else(|| CkksError::Input("nothing to add".into()))?
            .clone();
        for ct in iter {
            self.add_assign(&mut acc, ct)?;
        }
        Ok(acc)
    }

    /// Multiplies every slot by `k`, encoded at the context scale.
    ///
    /// The result scale is `ct.scale * scale()`. A second multiplication is
    /// rejected: there is no rescaling.
    pub fn multiply_plaintext_scalar(&self, ct: &Ciphertext, k: f64) -> Result<Ciphertext> {
        self.check_id(ct.context_id)?;
        if !k.is_finite() {
            return Err(CkksError::Input(format!("non-finite scalar {k}")));
        }
        if ct.depth >= 1 {
            return Err(CkksError::Depth);
        }
        let k_scale = self.scale();
        let new_scale = ct.scale * k_scale;
        // Keep ~20 bits above the combined scale for the slot values.
        let headroom = (self.log2_modulus() - 2.0).min(120.0);
        if new_scale.log2() + 20.0 >= headroom {
            return Err(CkksError::Parameter(format!(
                "modulus 2^{:.0} too small for product scale 2^{:.1}",
                self.log2_modulus(),
                new_scale.log2()
            )));
        }
        let k_int = (k * k_scale).round() as i128;
        let mut out = ct.clone();
        out.c0.scalar_mul_assign(k_int, self);
        out.c1.scalar_mul_assign(k_int, self);
        out.scale = new_scale;
        out.depth = ct.depth + 1;
        Ok(out)
    }

    /// Adds the constant `c` to every slot.
    pub fn add_plain_scalar(&self, ct: &Ciphertext, c: f64) -> Result<Ciphertext> {
        self.check_id(ct.context_id)?;
        if !c.is_finite() {
            return Err(CkksError::Input(format!("non-finite scalar {c}")));
        }
        let mut out = ct.clone();
        out.c0.add_constant((c * ct.scale).round() as i128, self)?;
        Ok(out)
    }
}
