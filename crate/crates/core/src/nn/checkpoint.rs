use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{LayerKind, LayerSpec, Model, ModelSchema, NnError, Result, Tensor};
use crate::shaping::{pack_bits, unpack_bits, PruneMask};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QCFL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A saved model plus the round and validation accuracy at save time.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub round: u32,
    pub val_acc: f64,
    pub mask: Option<PruneMask>,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

impl Checkpoint {
    /// `QCFL | version | round | val_acc | layers | tensors | mask`, little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(&mut w, CHECKPOINT_VERSION)?;
        put_u32(&mut w, self.round)?;
        w.write_all(&self.val_acc.to_le_bytes())?;
        let layers = self.model.schema().layers();
        put_u32(&mut w, layers.len() as u32)?;
        for l in layers {
            put_u32(&mut w, l.name.len() as u32)?;
            w.write_all(l.name.as_bytes())?;
            w.write_all(&[l.kind.tag()])?;
            for d in l.kind.dims() {
                put_u64(&mut w, d as u64)?;
            }
        }
        let params = self.model.params();
        put_u32(&mut w, params.len() as u32)?;
        for p in params {
            put_u64(&mut w, p.len() as u64)?;
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        match &self.mask {
            None => w.write_all(&[0])?,
            Some(mask) => {
                w.write_all(&[1])?;
                w.write_all(&mask.rate_used.to_le_bytes())?;
                put_u32(&mut w, mask.layers.len() as u32)?;
                for layer in &mask.layers {
                    put_u64(&mut w, layer.len() as u64)?;
                    w.write_all(&pack_bits(layer))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut c = Cursor {
            bytes: &bytes,
            at: 0,
        };
        if c.take(4)? != CHECKPOINT_MAGIC {
            return Err(NnError::Format("not a QCFL checkpoint".into()));
        }
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let round = c.u32()?;
        let val_acc = c.f64()?;
        let n_layers = c.u32()? as usize;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let len = c.u32()? as usize;
            let name = String::from_utf8(c.take(len)?.to_vec())
                .map_err(|_| NnError::Format("layer name is not UTF-8".into()))?;
            let tag = c.take(1)?[0];
            let count = LayerKind::dim_count(tag)
                .ok_or_else(|| NnError::Format(format!("unknown layer tag {tag}")))?;
            let dims = (0..count)
                .map(|_| c.u64().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let kind = LayerKind::from_tag(tag, &dims).expect("dim count checked");
            layers.push(LayerSpec { name, kind });
        }
        let schema = ModelSchema::new(layers)?;
        let shapes = schema.param_shapes();
        let n_params = c.u32()? as usize;
        if n_params != shapes.len() {
            return Err(NnError::Format(
                "parameter count does not match schema".into(),
            ));
        }
        let mut params = Vec::new();
        for shape in shapes {
            let len = c.u64()? as usize;
            if len != shape.iter().product::<usize>() {
                return Err(NnError::Format(
                    "tensor length does not match schema".into(),
                ));
            }
            let data = (0..len).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
            params.push(Tensor::new(shape, data)?);
        }
        let model = Model::from_params(schema, params)?;
        let mask = match c.take(1)?[0] {
            0 => None,
            1 => {
                let rate_used = c.f64()?;
                let n = c.u32()? as usize;
                let mut layers = Vec::new();
                for _ in 0..n {
                    let len = c.u64()? as usize;
                    layers.push(unpack_bits(c.take(len.div_ceil(8))?, len));
                }
                Some(PruneMask { layers, rate_used })
            }
            f => return Err(NnError::Format(format!("bad mask flag {f}"))),
        };
        if c.at != bytes.len() {
            return Err(NnError::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            model,
            round,
            val_acc,
            mask,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(mask: bool) -> Checkpoint {
        let model = Model::init(ModelSchema::tiny_conv(8, 2, 3).unwrap(), 3);
        let mask = mask.then(|| {
            let sizes: Vec<_> = model.params().iter().map(Tensor::len).collect();
            let mut m = PruneMask::all_ones(&sizes);
            m.layers[0][1] = false;
            m.rate_used = 0.25;
            m
        });
        Checkpoint {
            model,
            round: 7,
            val_acc: 0.8125,
            mask,
        }
    }

    #[test]
    fn round_trip_bit_exact() {
        for with_mask in [false, true] {
            let ck = sample(with_mask);
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            assert_eq!(&buf[..4], b"QCFL");
            assert_eq!(Checkpoint::read_from(&buf[..]).unwrap(), ck);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.qcfl");
        let ck = sample(true);
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        sample(false).write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&bad[..]).is_err());
        let mut extra = buf;
        extra.push(0);
        assert!(Checkpoint::read_from(&extra[..]).is_err());
    }
}
