//! Framed binary key files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "QCHE" | version u32 | kind u8 (1 = secret, 2 = public)
//! degree u64 | prime count u32 | primes u64... | scale f64 | sigma f64
//! poly count u32 | per poly: representation u8 (0 = coeff, 1 = NTT), residues u64...
//! ```

use std::fs::OpenOptions;
use std::io::{Read, Write};
use std::path::Path;

use super::context::CkksContext;
use super::keys::{PublicKey, SecretKey};
use super::poly::{Representation, RingPoly};
use super::{CkksError, Result};

pub const KEY_MAGIC: &[u8; 4] = b"QCHE";
pub const KEY_FORMAT_VERSION: u32 = 1;

const KIND_SECRET: u8 = 1;
const KIND_PUBLIC: u8 = 2;

fn write_header(w: &mut impl Write, ctx: &CkksContext, kind: u8) -> Result<()> {
    w.write_all(KEY_MAGIC)?;
    w.write_all(&KEY_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[kind])?;
    w.write_all(&(ctx.degree() as u64).to_le_bytes())?;
    w.write_all(&(ctx.prime_count() as u32).to_le_bytes())?;
    for p in ctx.primes() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.write_all(&ctx.scale().to_le_bytes())?;
    w.write_all(&ctx.sigma().to_le_bytes())?;
    Ok(())
}

fn write_polys(w: &mut impl Write, polys: &[&RingPoly]) -> Result<()> {
    w.write_all(&(polys.len() as u32).to_le_bytes())?;
    for p in polys {
        let tag = match p.representation() {
            Representation::Coefficient => 0u8,
            Representation::Ntt => 1u8,
        };
        w.write_all(&[tag])?;
        let mut buf = Vec::with_capacity(p.all_residues().len() * 8);
        for r in p.all_residues() {
            buf.extend_from_slice(&r.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn write_secret_key(w: &mut impl Write, ctx: &CkksContext, sk: &SecretKey) -> Result<()> {
    ctx.check_id(sk.context_id())?;
    write_header(w, ctx, KIND_SECRET)?;
    write_polys(w, &[sk.poly()])
}

pub fn write_public_key(w: &mut impl Write, ctx: &CkksContext, pk: &PublicKey) -> Result<()> {
    ctx.check_id(pk.context_id())?;
    write_header(w, ctx, KIND_PUBLIC)?;
    let (b, a) = pk.components();
    write_polys(w, &[b, a])
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> CkksError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        CkksError::Format("truncated key file".into())
    } else {
        CkksError::Io(e)
    }
}

fn read_header(r: &mut impl Read, expected_kind: u8) -> Result<CkksContext> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != KEY_MAGIC {
        return Err(CkksError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != KEY_FORMAT_VERSION {
        return Err(CkksError::Format(format!("unsupported version {version}")));
    }
    let kind = read_u8(r)?;
    if kind != expected_kind {
        return Err(CkksError::Format(format!(
            "key kind {kind}, expected {expected_kind}"
        )));
    }
    let degree = read_u64(r)?;
    let count = read_u32(r)?;
    if degree > 1 << 20 || count == 0 || count > 64 {
        return Err(CkksError::Format(format!(
            "implausible header: degree {degree}, {count} primes"
        )));
    }
    let primes = (0..count)
        .map(|_| read_u64(r))
        .collect::<Result<Vec<_>>>()?;
    let scale = f64::from_bits(read_u64(r)?);
    let sigma = f64::from_bits(read_u64(r)?);
    CkksContext::from_primes(degree as usize, &primes, scale, sigma)
}

fn read_polys(r: &mut impl Read, ctx: &CkksContext, expected: u32) -> Result<Vec<RingPoly>> {
    let count = read_u32(r)?;
    if count != expected {
        return Err(CkksError::Format(format!(
            "{count} polynomials, expected {expected}"
        )));
    }
    let words = ctx.degree() * ctx.prime_count();
    (0..count)
        .map(|_| {
            let repr = match read_u8(r)? {
                0 => Representation::Coefficient,
                1 => Representation::Ntt,
                t => return Err(CkksError::Format(format!("bad representation tag {t}"))),
            };
            let mut buf = vec![0u8; words * 8];
            r.read_exact(&mut buf).map_err(truncated)?;
            let residues = buf
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            RingPoly::from_residues(ctx, residues, repr)
        })
        .collect()
}

/// Reads a secret key together with the context its header describes.
pub fn read_secret_key(r: &mut impl Read) -> Result<(CkksContext, SecretKey)> {
    let ctx = read_header(r, KIND_SECRET)?;
    let mut polys = read_polys(r, &ctx, 1)?;
    let s = polys.pop().unwrap();
    if s.representation() != Representation::Coefficient {
        return Err(CkksError::Format(
            "secret key must be in coefficient form".into(),
        ));
    }
    let sk = SecretKey {
        s,
        context_id: ctx.id(),
    };
    Ok((ctx, sk))
}

pub fn read_public_key(r: &mut impl Read) -> Result<(CkksContext, PublicKey)> {
    let ctx = read_header(r, KIND_PUBLIC)?;
    let mut polys = read_polys(r, &ctx, 2)?;
    let a = polys.pop().unwrap();
    let b = polys.pop().unwrap();
    if a.representation() != Representation::Ntt || b.representation() != Representation::Ntt {
        return Err(CkksError::Format("public key must be in NTT form".into()));
    }
    let pk = PublicKey {
        b,
        a,
        context_id: ctx.id(),
    };
    Ok((ctx, pk))
}

/// Writes a secret key file readable only by its owner (on Unix).
pub fn save_secret_key(path: &Path, ctx: &CkksContext, sk: &SecretKey) -> Result<()> {
    let mut opts = OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let file = opts.open(path)?;
    #[cfg(unix)]
    {
        // mode() only applies on creation
        use std::os::unix::fs::PermissionsExt;
        file.set_permissions(std::fs::Permissions::from_mode(0o600))?;
    }
    let mut w = std::io::BufWriter::new(file);
    write_secret_key(&mut w, ctx, sk)?;
    w.flush()?;
    Ok(())
}

pub fn save_public_key(path: &Path, ctx: &CkksContext, pk: &PublicKey) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_public_key(&mut w, ctx, pk)?;
    w.flush()?;
    Ok(())
}
