//! Slot-packed encryption of long vectors.

use super::context::CkksContext;
use super::keys::{Ciphertext, PublicKey, SecretKey};
use super::Result;
use crate::par::{derive_seed, Exec};

/// Splits `len` values into `(start, end)` ranges of at most `slots` each.
pub fn slot_chunks(len: usize, slots: usize) -> Vec<(usize, usize)> {
    (0..len.div_ceil(slots))
        .map(|i| (i * slots, ((i + 1) * slots).min(len)))
        .collect()
}

/// Encrypts `values` into `ceil(len / slots)` ciphertexts. Chunk `i` uses a
/// seed derived from `(seed, i)`, so the output is independent of `exec`.
pub fn encrypt_vector(
    ctx: &CkksContext,
    pk: &PublicKey,
    values: &[f64],
    seed: u64,
    exec: Exec,
) -> Result<Vec<Ciphertext>> {
    let chunks = slot_chunks(values.len(), ctx.slot_count());
    exec.try_map(chunks.len(), |i| {
        let (start, end) = chunks[i];
        let pt = ctx.encode(&values[start..end])?;
        ctx.encrypt(pk, &pt, derive_seed(seed, &[i as u64]))
    })
}

/// Decrypts and concatenates chunks, truncated to `len` values.
pub fn decrypt_vector(
    ctx: &CkksContext,
    sk: &SecretKey,
    cts: &[Ciphertext],
    len: usize,
    exec: Exec,
) -> Result<Vec<f64>> {
    let parts = exec.try_map(cts.len(), |i| ctx.decode(&ctx.decrypt(sk, &cts[i])?))?;
    let mut out: Vec<f64> = parts.into_iter().flatten().collect();
    out.truncate(len);
    Ok(out)
}
