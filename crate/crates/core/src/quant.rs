//! Affine quantization of clipped layer updates.
//!
//! Codes live in the unsigned range `[0, 2^b - 1]`. The map is
//! `q = clamp(round(x / s + z0))` and its inverse `x' = s * (q - z0)`, with a
//! real-valued zero point `z0 = clamp(q_min - x_min / s)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QuantError {
    #[error("unsupported bit width {0}; expected 8, 16 or 32")]
    BitWidth(u32),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("empty range: x_min {x_min} > x_max {x_max}")]
    InvertedRange { x_min: f64, x_max: f64 },
    #[error("degenerate negative range x_min = x_max = {0} gives a negative scale")]
    NegativeScale(f64),
    #[error("malformed quantized tensor: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, QuantError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub s: f64,
    pub z0: f64,
    pub q_min: u32,
    pub q_max: u32,
    pub bits: u32,
    pub x_min: f64,
    pub x_max: f64,
}

/// Three-case scale rule with a real-valued, clamped zero point.
pub fn derive_quant_params(x_min: f64, x_max: f64, bits: u32) -> Result<QuantParams> {
    if !matches!(bits, 8 | 16 | 32) {
        return Err(QuantError::BitWidth(bits));
    }
    if !x_min.is_finite() || !x_max.is_finite() {
        return Err(QuantError::NonFinite(format!("range [{x_min}, {x_max}]")));
    }
    if x_min > x_max {
        return Err(QuantError::InvertedRange { x_min, x_max });
    }
    let q_min = 0u32;
    let q_max = if bits == 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    };
    let span = (q_max - q_min) as f64;
    let s = if x_min == 0.0 && x_max == 0.0 {
        1.0 / span
    } else if x_min == x_max {
        if x_min < 0.0 {
            return Err(QuantError::NegativeScale(x_min));
        }
        x_min / span
    } else {
        (x_max - x_min) / span
    };
    let z0 = (q_min as f64 - x_min / s).clamp(q_min as f64, q_max as f64);
    Ok(QuantParams {
        s,
        z0,
        q_min,
        q_max,
        bits,
        x_min,
        x_max,
    })
}

impl QuantParams {
    #[inline]
    pub fn quantize_one(&self, x: f64) -> u32 {
        (x / self.s + self.z0)
            .round()
            .clamp(self.q_min as f64, self.q_max as f64) as u32
    }

    #[inline]
    pub fn dequantize_one(&self, q: f64) -> f64 {
        self.s * (q - self.z0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    pub codes: Vec<u32>,
    pub params: QuantParams,
    pub layer_index: usize,
}

impl QuantizedTensor {
    pub fn element_count(&self) -> usize {
        self.codes.len()
    }

    /// Fixed metadata size of the wire form in bytes.
    pub const HEADER_BYTES: usize = 4 + 1 + 4 * 8 + 8;

    /// Wire size in bytes: header plus `b` bits per code.
    pub fn wire_size(&self) -> usize {
        Self::HEADER_BYTES + self.codes.len() * (self.params.bits as usize / 8)
    }

    /// Header `layer u32 | bits u8 | s, z0, x_min, x_max f64 | count u64`,
    /// then little-endian codes at `b` bits each.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_size());
        out.extend_from_slice(&(self.layer_index as u32).to_le_bytes());
        out.push(self.params.bits as u8);
        for v in [
            self.params.s,
            self.params.z0,
            self.params.x_min,
            self.params.x_max,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.codes.len() as u64).to_le_bytes());
        match self.params.bits {
            8 => out.extend(self.codes.iter().map(|&c| c as u8)),
            16 => {
                for &c in &self.codes {
                    out.extend_from_slice(&(c as u16).to_le_bytes());
                }
            }
            _ => {
                for &c in &self.codes {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| QuantError::Format(m.to_string());
        if bytes.len() < Self::HEADER_BYTES {
            return Err(err("truncated header"));
        }
        let layer_index = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let bits = bytes[4] as u32;
        let f = |i: usize| f64::from_le_bytes(bytes[5 + 8 * i..13 + 8 * i].try_into().unwrap());
        let (s, z0, x_min, x_max) = (f(0), f(1), f(2), f(3));
        let count = u64::from_le_bytes(bytes[37..45].try_into().unwrap()) as usize;
        let params = derive_quant_params(x_min, x_max, bits)?;
        if params.s.to_bits() != s.to_bits() || params.z0.to_bits() != z0.to_bits() {
            return Err(err("scale or zero point inconsistent with range"));
        }
        let width = bits as usize / 8;
        let body = &bytes[Self::HEADER_BYTES..];
        if body.len() != count * width {
            return Err(err("code section length mismatch"));
        }
        let codes = match width {
            1 => body.iter().map(|&b| b as u32).collect(),
            2 => body
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
                .collect(),
            _ => body
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok(Self {
            codes,
            params,
            layer_index,
        })
    }
}

pub fn quantize(x: &[f64], params: &QuantParams, layer_index: usize) -> Result<QuantizedTensor> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(QuantError::NonFinite(format!("element {i} is {}", x[i])));
    }
    Ok(QuantizedTensor {
        codes: x.iter().map(|&v| params.quantize_one(v)).collect(),
        params: *params,
        layer_index,
    })
}

pub fn dequantize(qt: &QuantizedTensor) -> Vec<f64> {
    qt.codes
        .iter()
        .map(|&q| qt.params.dequantize_one(q as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_range() {
        let p = derive_quant_params(0.0, 0.0, 8).unwrap();
        assert_eq!(p.s, 1.0 / 255.0);
        assert_eq!(p.z0, 0.0);
        let qt = quantize(&[0.0; 5], &p, 0).unwrap();
        assert_eq!(qt.codes, vec![0; 5]);
        assert_eq!(dequantize(&qt), vec![0.0; 5]);
    }

    #[test]
    fn symmetric_unit_range() {
        let p = derive_quant_params(-1.0, 1.0, 8).unwrap();
        assert!((p.s - 2.0 / 255.0).abs() < 1e-15);
        assert!((p.s - 0.0078431).abs() < 1e-7);
        assert!((p.z0 - 127.5).abs() < 1e-12);
        let qt = quantize(&[-1.0, 0.0, 1.0], &p, 3).unwrap();
        // 127.5 rounds half away from zero
        assert_eq!(qt.codes, vec![0, 128, 255]);
        let x = dequantize(&qt);
        assert!((x[0] + 1.0).abs() < 1e-12);
        assert!((x[1] - 1.0 / 255.0).abs() < 1e-12);
        assert!((x[1] - 0.0039).abs() < 1e-4);
        assert!((x[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_positive_range() {
        let p = derive_quant_params(2.55, 2.55, 8).unwrap();
        assert!((p.s - 0.01).abs() < 1e-15);
        assert_eq!(p.z0, 0.0);
        let qt = quantize(&[2.55], &p, 0).unwrap();
        assert_eq!(qt.codes, vec![255]);
        assert!((dequantize(&qt)[0] - 2.55).abs() < 1e-12);
    }

    #[test]
    fn saturation() {
        let p = derive_quant_params(-1.0, 1.0, 8).unwrap();
        assert_eq!(quantize(&[10.0, -10.0], &p, 0).unwrap().codes, vec![255, 0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            derive_quant_params(1.0, -1.0, 8),
            Err(QuantError::InvertedRange { .. })
        ));
        assert!(matches!(
            derive_quant_params(f64::NAN, 1.0, 8),
            Err(QuantError::NonFinite(_))
        ));
        assert!(matches!(
            derive_quant_params(-1.0, 1.0, 12),
            Err(QuantError::BitWidth(12))
        ));
        assert!(matches!(
            derive_quant_params(-2.0, -2.0, 8),
            Err(QuantError::NegativeScale(_))
        ));
        let p = derive_quant_params(-1.0, 1.0, 8).unwrap();
        assert!(matches!(
            quantize(&[0.0, f64::NAN], &p, 0),
            Err(QuantError::NonFinite(_))
        ));
    }

    #[test]
    fn integral_zero_point_dequantizes_to_zero() {
        let p = derive_quant_params(-1.0, 254.0, 8).unwrap();
        assert_eq!(p.z0, 1.0);
        let qt = QuantizedTensor {
            codes: vec![1; 4],
            params: p,
            layer_index: 0,
        };
        assert_eq!(dequantize(&qt), vec![0.0; 4]);
    }

    #[test]
    fn wire_form_is_compact() {
        let p = derive_quant_params(-1.0, 1.0, 8).unwrap();
        let x: Vec<f64> = (0..10_000).map(|i| (i as f64 * 0.01).sin()).collect();
        let qt = quantize(&x, &p, 2).unwrap();
        let bytes = qt.to_bytes();
        assert_eq!(bytes.len(), qt.wire_size());
        let f32_source = 4 * x.len();
        assert!(bytes.len() <= f32_source / 4 + QuantizedTensor::HEADER_BYTES);
        assert_eq!(QuantizedTensor::from_bytes(&bytes).unwrap(), qt);
        assert!(QuantizedTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_half_step(
            lo in -100.0f64..=0.0,
            hi in 0.0f64..100.0,
            bits in prop::sample::select(vec![8u32, 16, 32]),
            t in prop::collection::vec(0.0f64..=1.0, 1..64),
        ) {
            let p = derive_quant_params(lo, hi, bits).unwrap();
            let x: Vec<f64> = t.iter().map(|u| lo + u * (hi - lo)).collect();
            let back = dequantize(&quantize(&x, &p, 0).unwrap());
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a - b).abs() <= p.s / 2.0 + 1e-12);
            }
        }

        #[test]
        fn monotone(
            r in 0.001f64..10.0,
            mut x in prop::collection::vec(-20.0f64..20.0, 2..64),
            bits in prop::sample::select(vec![8u32, 16, 32]),
        ) {
            let p = derive_quant_params(-r, r, bits).unwrap();
            x.sort_by(f64::total_cmp);
            let q = quantize(&x, &p, 0).unwrap().codes;
            prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn wire_round_trip(
            r in 0.001f64..10.0,
            x in prop::collection::vec(-20.0f64..20.0, 0..64),
            bits in prop::sample::select(vec![8u32, 16, 32]),
        ) {
            let p = derive_quant_params(-r, r, bits).unwrap();
            let qt = quantize(&x, &p, 7).unwrap();
            prop_assert_eq!(QuantizedTensor::from_bytes(&qt.to_bytes()).unwrap(), qt);
        }
    }
}
