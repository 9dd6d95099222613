//! 16-bit fixed-point arithmetic and depth-minor tensor storage.
//!
//! A word is a two's complement `i16` interpreted as `raw / 2^F` with a
//! global fraction-bit count `F` (default 8, i.e. Q8.8). Products are held
//! in a 32-bit accumulator at `2F` fraction bits. Accumulation wraps by
//! default; a saturating mode exists for experiments. Truncation back to 16
//! bits is an arithmetic shift right by `F` keeping the low 16 bits, so it
//! rounds toward negative infinity and out-of-range values wrap.

use crate::error::{Error, Result};
use std::io::{Read, Write};

/// Default number of fraction bits (Q8.8).
pub const FRAC_BITS: u32 = 8;

/// 16-bit fixed-point word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fx16(pub i16);

/// 32-bit accumulator holding values at `2F` fraction bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Acc32(pub i32);

/// Accumulator overflow behavior. The hardware adder wraps; saturation is
/// an experiment knob only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccMode {
    Wrap,
    Saturate,
}

impl Fx16 {
    pub fn from_f32(v: f32, frac_bits: u32) -> Fx16 {
        Fx16((v * (1i32 << frac_bits) as f32).round() as i16)
    }

    pub fn to_f32(self, frac_bits: u32) -> f32 {
        self.0 as f32 / (1i32 << frac_bits) as f32
    }
}

/// Exact product of two 16-bit words; 32 bits always suffice.
pub fn fx_mul(a: Fx16, b: Fx16) -> Acc32 {
    Acc32(a.0 as i32 * b.0 as i32)
}

/// Accumulator addition. `Wrap` models the plain 32-bit hardware adder.
pub fn acc_add(acc: Acc32, p: Acc32, mode: AccMode) -> Acc32 {
    match mode {
        AccMode::Wrap => Acc32(acc.0.wrapping_add(p.0)),
        AccMode::Saturate => Acc32(acc.0.saturating_add(p.0)),
    }
}

/// Truncate an accumulator back to a 16-bit word: arithmetic shift right by
/// `frac_bits`, keep the low 16 bits. Not rounded; out-of-range wraps.
pub fn truncate16(acc: Acc32, frac_bits: u32) -> Fx16 {
    Fx16((acc.0 >> frac_bits) as i16)
}

/// Depth-minor trace length of one kernel row: `iC * kW` words.
pub fn trace_length(ic: usize, kw: usize) -> usize {
    ic * kw
}

/// A contiguous region of words that one vector instruction operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trace {
    pub start: usize,
    pub len: usize,
}

/// 3-D feature-map volume in depth-minor layout: the channel index varies
/// fastest, then column, then row. Element (y, x, c) lives at linear index
/// `(y*iW + x)*iC + c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    pub ic: usize,
    pub ih: usize,
    pub iw: usize,
    pub data: Vec<i16>,
}

impl FixedTensor {
    pub fn zeroed(ic: usize, ih: usize, iw: usize) -> FixedTensor {
        FixedTensor {
            ic,
            ih,
            iw,
            data: vec![0; ic * ih * iw],
        }
    }

    pub fn random(ic: usize, ih: usize, iw: usize, rng: &mut crate::rng::SplitMix64) -> FixedTensor {
        let data = (0..ic * ih * iw).map(|_| rng.next_i16()).collect();
        FixedTensor { ic, ih, iw, data }
    }

    pub fn word_count(&self) -> usize {
        self.ic * self.ih * self.iw
    }

    pub fn lin_index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.iw + x) * self.ic + c
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> i16 {
        self.data[self.lin_index(y, x, c)]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: i16) {
        let i = self.lin_index(y, x, c);
        self.data[i] = v;
    }

    /// `len` consecutive words of linear storage.
    pub fn extract_trace(&self, tr: Trace) -> Result<&[i16]> {
        let end = tr.start.checked_add(tr.len).ok_or_else(|| {
            Error::Bounds(format!("trace start {} + len {} overflows", tr.start, tr.len))
        })?;
        if tr.len == 0 || end > self.data.len() {
            return Err(Error::Bounds(format!(
                "trace [{}, {}) exceeds tensor of {} words",
                tr.start,
                end,
                self.data.len()
            )));
        }
        Ok(&self.data[tr.start..end])
    }

    /// Binary dump: 3 x u32 little-endian header (iC, iH, iW) followed by
    /// the raw little-endian 16-bit words.
    pub fn write_bin<W: Write>(&self, w: &mut W) -> Result<()> {
        for dim in [self.ic as u32, self.ih as u32, self.iw as u32] {
            w.write_all(&dim.to_le_bytes())?;
        }
        for word in &self.data {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_bin<R: Read>(r: &mut R) -> Result<FixedTensor> {
        let mut hdr = [0u8; 12];
        r.read_exact(&mut hdr)?;
        let ic = u32::from_le_bytes(hdr[0..4].try_into().unwrap()) as usize;
        let ih = u32::from_le_bytes(hdr[4..8].try_into().unwrap()) as usize;
        let iw = u32::from_le_bytes(hdr[8..12].try_into().unwrap()) as usize;
        let mut bytes = vec![0u8; ic * ih * iw * 2];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]))
            .collect();
        Ok(FixedTensor { ic, ih, iw, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    const F: u32 = FRAC_BITS;

    #[test]
    fn mul_identity() {
        // 1.0 * 1.0 -> raw 65536 at 2F bits.
        let one = Fx16(256);
        assert_eq!(fx_mul(one, one), Acc32(65536));
        assert_eq!(fx_mul(Fx16(0), Fx16(-12345)), Acc32(0));
    }

    #[test]
    fn mul_negative_exact() {
        // -1.5 * 2.0 == -3.0 at 2F, checked against exact integer math:
        // raw(-1.5) = -384, raw(2.0) = 512, product = -196608 = -3 << 16.
        let p = fx_mul(Fx16::from_f32(-1.5, F), Fx16::from_f32(2.0, F));
        assert_eq!(p, Acc32(-3 << 16));
    }

    #[test]
    fn acc_add_wraps() {
        assert_eq!(acc_add(Acc32(0), Acc32(77), AccMode::Wrap), Acc32(77));
        assert_eq!(
            acc_add(Acc32(i32::MAX), Acc32(1), AccMode::Wrap),
            Acc32(i32::MIN)
        );
        assert_eq!(
            acc_add(Acc32(i32::MAX), Acc32(1), AccMode::Saturate),
            Acc32(i32::MAX)
        );
    }

    #[test]
    fn sum_of_256_unit_products() {
        // Loop oracle: 256 products of 1.0*1.0 accumulate to 256.0 at 2F.
        let one = Fx16(256);
        let mut acc = Acc32(0);
        for _ in 0..256 {
            acc = acc_add(acc, fx_mul(one, one), AccMode::Wrap);
        }
        assert_eq!(acc, Acc32(256 << 16));
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate16(Acc32(65536), F), Fx16(256)); // 1.0
        // Direct shift: 65792 >> 8 = 257; the low fraction bits drop.
        assert_eq!(truncate16(Acc32(65792), F), Fx16(257));
        // Arithmetic shift keeps -0.5 exact: -32768 >> 8 = -128.
        assert_eq!(truncate16(Acc32(-32768), F), Fx16(-128));
        // Truncation toward negative infinity on negatives.
        assert_eq!(truncate16(Acc32(-1), F), Fx16(-1));
    }

    #[test]
    fn trace_length_table_values() {
        assert_eq!(trace_length(3, 11), 33); // AlexNet layer 1
        assert_eq!(trace_length(2048, 1), 2048); // ResNet-50 widest
        assert_eq!(trace_length(1, 1), 1);
        assert_eq!(trace_length(256, 3), 768);
    }

    #[test]
    fn extract_trace_cases() {
        let mut t = FixedTensor::zeroed(1, 1, 1);
        t.data[0] = 9;
        assert_eq!(t.extract_trace(Trace { start: 0, len: 1 }).unwrap(), &[9]);
        assert!(t.extract_trace(Trace { start: 0, len: 2 }).is_err());
        assert!(t.extract_trace(Trace { start: 1, len: 1 }).is_err());
    }

    #[test]
    fn depth_minor_order() {
        // Words of a (y=0, x=0..2, c=0..2) trace come out c-fastest,
        // matching an explicit enumeration of the linear-index formula.
        let mut t = FixedTensor::zeroed(3, 2, 4);
        let mut expect = Vec::new();
        for x in 0..3 {
            for c in 0..3 {
                let v = (10 * x + c) as i16;
                t.set(0, x, c, v);
            }
        }
        for x in 0..3 {
            for c in 0..3 {
                expect.push(t.get(0, x, c));
            }
        }
        let got = t.extract_trace(Trace { start: 0, len: 9 }).unwrap();
        assert_eq!(got, &expect[..]);
    }

    #[test]
    fn roundtrip_storage_random() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..20 {
            let ic = 1 + rng.next_below(5) as usize;
            let ih = 1 + rng.next_below(4) as usize;
            let iw = 1 + rng.next_below(4) as usize;
            let mut t = FixedTensor::zeroed(ic, ih, iw);
            let mut shadow = vec![0i16; t.word_count()];
            for _ in 0..50 {
                let y = rng.next_below(ih as u64) as usize;
                let x = rng.next_below(iw as u64) as usize;
                let c = rng.next_below(ic as u64) as usize;
                let v = rng.next_i16();
                t.set(y, x, c, v);
                shadow[(y * iw + x) * ic + c] = v;
            }
            assert_eq!(t.data, shadow);
        }
    }

    #[test]
    fn binary_dump_roundtrip() {
        let mut rng = SplitMix64::new(3);
        let t = FixedTensor::random(5, 3, 2, &mut rng);
        let mut buf = Vec::new();
        t.write_bin(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + t.word_count() * 2);
        let back = FixedTensor::read_bin(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }
}
