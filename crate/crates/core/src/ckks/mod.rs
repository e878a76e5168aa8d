//! Additive CKKS over the RNS ring `Z_Q[X]/(X^n + 1)`.
//!
//! Only the operations secure aggregation needs are provided: encoding,
//! key generation, encryption, decryption, ciphertext addition, and a single
//! level of ciphertext-by-scalar multiplication. There is no relinearization,
//! rotation, or rescaling; the decoder divides by the tracked scale instead.

mod arith;
mod batch;
mod context;
mod encoding;
mod keys;
mod ntt;
mod ops;
mod poly;
mod serialize;
mod timing;

pub use arith::{find_ntt_prime, is_prime, Modulus};
pub use batch::{decrypt_vector, encrypt_vector, slot_chunks};
pub use context::{CkksContext, CkksParams, ContextId};
pub use keys::{Ciphertext, Plaintext, PublicKey, SecretKey};
pub use ntt::NttTable;
pub use poly::{Representation, RingPoly};
pub use serialize::{
    read_public_key, read_secret_key, save_public_key, save_secret_key, write_public_key,
    write_secret_key, KEY_FORMAT_VERSION, KEY_MAGIC,
};

pub use timing::{measure, Measurement, TimingConfig, TimingReport};

pub type Result<T> = std::result::Result<T, CkksError>;

#[derive(Debug, thiserror::Error)]
pub enum CkksError {
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error("{len} values exceed the {slots} available slots")]
    Capacity { len: usize, slots: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("operands belong to different contexts")]
    ContextMismatch,
    #[error("scale mismatch: {0} vs {1}")]
    ScaleMismatch(f64, f64),
    #[error("ciphertext already carries a plaintext product; depth > 1 is unsupported")]
    Depth,
    #[error("polynomial must be in {expected:?} representation")]
    Representation { expected: Representation },
    #[error("malformed key file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
