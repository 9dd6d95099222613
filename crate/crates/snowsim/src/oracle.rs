//! Bit-exact fixed-point reference implementations and op counting.
//!
//! The oracle evaluates layers with exactly the arithmetic the compute
//! core uses: 16x16-bit products into a 32-bit accumulator, bias added at
//! the accumulator scale, arithmetic-shift truncation back to 16 bits, the
//! residual operand added after truncation, ReLU last. Accumulation
//! follows the depth-minor trace order (channel fastest, then kernel
//! column, then kernel row); with the default wrapping accumulator any
//! order gives the same words, but the order is pinned because saturating
//! mode is order-sensitive.

use crate::fixpoint::{acc_add, fx_mul, truncate16, AccMode, Acc32, FixedTensor, Fx16};
use crate::layers::{
    inception_convs, resgroup_convs, AvgPoolSpec, ConvSpec, Item, NetworkDescriptor, PadMode,
    PoolKind, PoolSpec,
};
use crate::rng::SplitMix64;

/// Kernel weights and biases for one convolution. Weight order matches
/// the hardware trace order: `[oc][ky][kx][c]` with the channel fastest.
#[derive(Debug, Clone)]
pub struct ConvWeights {
    pub oc: usize,
    pub ic: usize,
    pub kh: usize,
    pub kw: usize,
    pub w: Vec<i16>,
    pub bias: Vec<i16>,
}

impl ConvWeights {
    pub fn random(spec: &ConvSpec, rng: &mut SplitMix64) -> ConvWeights {
        let n = spec.oc * spec.ic * spec.kh * spec.kw;
        ConvWeights {
            oc: spec.oc,
            ic: spec.ic,
            kh: spec.kh,
            kw: spec.kw,
            w: (0..n).map(|_| rng.next_i16()).collect(),
            bias: (0..spec.oc).map(|_| rng.next_i16()).collect(),
        }
    }

    /// All-equal kernels used to lower average pooling: every tap is
    /// `round(2^F / (p*p))` and the bias is zero.
    pub fn avgpool(ic: usize, p: usize, frac_bits: u32) -> ConvWeights {
        let tap = (((1u32 << frac_bits) as f64) / (p * p) as f64).round() as i16;
        ConvWeights {
            oc: ic,
            ic: 1,
            kh: p,
            kw: p,
            w: vec![tap; ic * p * p],
            bias: vec![0; ic],
        }
    }

    pub fn at(&self, oc: usize, ky: usize, kx: usize, c: usize) -> i16 {
        self.w[((oc * self.kh + ky) * self.kw + kx) * self.ic + c]
    }
}

/// Reference convolution, optionally with ReLU and a residual operand that
/// is added element-wise after truncation.
pub fn oracle_conv(
    ifm: &FixedTensor,
    weights: &ConvWeights,
    spec: &ConvSpec,
    bypass: Option<&FixedTensor>,
    acc_mode: AccMode,
    frac_bits: u32,
) -> FixedTensor {
    oracle_conv_split(ifm, weights, spec, bypass, &[], acc_mode, frac_bits)
}

/// Reference convolution with the hardware's accumulation split points.
///
/// `splits` lists kernel-row boundaries where the weight stream forces a
/// new accumulation: each segment reduces independently, truncates, and
/// the truncated partials chain through 16-bit wrapping adds (the
/// third-operand path). The bias belongs to the first engaged segment;
/// ReLU and the residual operand apply once at the end.
pub fn oracle_conv_split(
    ifm: &FixedTensor,
    weights: &ConvWeights,
    spec: &ConvSpec,
    bypass: Option<&FixedTensor>,
    splits: &[usize],
    acc_mode: AccMode,
    frac_bits: u32,
) -> FixedTensor {
    assert_eq!(ifm.ic, spec.ic, "{}: input channel mismatch", spec.name);
    assert_eq!(ifm.ih, spec.ih);
    assert_eq!(ifm.iw, spec.iw);
    assert_eq!(weights.oc, spec.oc);
    let mut bounds = vec![0];
    bounds.extend_from_slice(splits);
    bounds.push(spec.kh);
    let (oh, ow) = (spec.oh(), spec.ow());
    let mut out = FixedTensor::zeroed(spec.oc, oh, ow);
    for oy in 0..oh {
        let (ky_lo, ky_hi) = spec.valid_ky(oy);
        for ox in 0..ow {
            let (kx_lo, kx_hi) = spec.valid_kx(ox);
            for oc in 0..spec.oc {
                let mut running: Option<i16> = None;
                let mut first = true;
                for seg in bounds.windows(2) {
                    let lo = seg[0].max(ky_lo);
                    let hi = seg[1].min(ky_hi);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = if first {
                        Acc32((weights.bias[oc] as i32) << frac_bits)
                    } else {
                        Acc32(0)
                    };
                    first = false;
                    for ky in lo..hi {
                        let y = oy * spec.stride + ky - spec.pad;
                        for kx in kx_lo..kx_hi {
                            let x = ox * spec.stride + kx - spec.pad;
                            for c in 0..spec.ic {
                                let p = fx_mul(Fx16(ifm.get(y, x, c)), Fx16(weights.at(oc, ky, kx, c)));
                                acc = acc_add(acc, p, acc_mode);
                            }
                        }
                    }
                    let t = truncate16(acc, frac_bits).0;
                    running = Some(match running {
                        None => t,
                        Some(prev) => t.wrapping_add(prev),
                    });
                }
                let mut v = running.unwrap_or_else(|| {
                    truncate16(Acc32((weights.bias[oc] as i32) << frac_bits), frac_bits).0
                });
                if let Some(b) = bypass {
                    v = v.wrapping_add(b.get(oy, ox, oc));
                }
                if spec.relu && v < 0 {
                    v = 0;
                }
                out.set(oy, ox, oc, v);
            }
        }
    }
    out
}

/// Reference max pooling. Under `Zero` padding the padded positions
/// contribute zero words to the window; under `Skip` they are ignored.
/// Windows overhanging the padded extent (ceil arithmetic) clamp.
pub fn oracle_maxpool(ifm: &FixedTensor, spec: &PoolSpec, pad_mode: PadMode) -> FixedTensor {
    assert_eq!(spec.kind, PoolKind::Max);
    let oh = spec.out_dim(ifm.ih);
    let ow = spec.out_dim(ifm.iw);
    let mut out = FixedTensor::zeroed(ifm.ic, oh, ow);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..ifm.ic {
                let mut best: Option<i16> = None;
                for dy in 0..spec.p {
                    let y = (oy * spec.stride + dy) as isize - spec.pad as isize;
                    for dx in 0..spec.p {
                        let x = (ox * spec.stride + dx) as isize - spec.pad as isize;
                        let v = if y >= 0 && x >= 0 && (y as usize) < ifm.ih && (x as usize) < ifm.iw {
                            Some(ifm.get(y as usize, x as usize, c))
                        } else if pad_mode == PadMode::Zero
                            && y >= -(spec.pad as isize)
                            && x >= -(spec.pad as isize)
                            && y < (ifm.ih + spec.pad) as isize
                            && x < (ifm.iw + spec.pad) as isize
                        {
                            Some(0)
                        } else {
                            None
                        };
                        if let Some(v) = v {
                            best = Some(best.map_or(v, |b| b.max(v)));
                        }
                    }
                }
                out.set(oy, ox, c, best.unwrap_or(0));
            }
        }
    }
    out
}

/// Reference average pooling lowered the way the compiler lowers it: a
/// per-channel window of constant `round(2^F/(p*p))` taps accumulated at
/// 2F bits and truncated.
pub fn oracle_avgpool(
    ifm: &FixedTensor,
    p: usize,
    acc_mode: AccMode,
    frac_bits: u32,
) -> FixedTensor {
    let tap = Fx16((((1u32 << frac_bits) as f64) / (p * p) as f64).round() as i16);
    let oh = ifm.ih - p + 1;
    let ow = ifm.iw - p + 1;
    let mut out = FixedTensor::zeroed(ifm.ic, oh, ow);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..ifm.ic {
                let mut acc = Acc32(0);
                for dy in 0..p {
                    for dx in 0..p {
                        acc = acc_add(acc, fx_mul(Fx16(ifm.get(oy + dy, ox + dx, c)), tap), acc_mode);
                    }
                }
                out.set(oy, ox, c, truncate16(acc, frac_bits).0);
            }
        }
    }
    out
}

/// Operation count of an average pool: the window reduce is `p*p - 1`
/// accumulate steps per output element, two ops each, with the constant
/// scale folded in.
pub fn avgpool_ops(spec: &AvgPoolSpec) -> u64 {
    let oh = (spec.input.h - spec.p + 1) as u64;
    let ow = (spec.input.w - spec.p + 1) as u64;
    2 * spec.input.c as u64 * (spec.p * spec.p - 1) as u64 * oh * ow
}

/// Per-row operation counts in M-ops for the benchmark rows of a network.
/// Convolutions sharing a `row` attribute merge; standalone pools and
/// classifier layers contribute no counted operations; residual groups
/// count `replicas x representative block + projection`.
pub fn opcount(net: &NetworkDescriptor) -> Vec<(String, f64)> {
    let mut rows: Vec<(String, u64)> = Vec::new();
    let mut add = |row: &str, ops: u64| match rows.iter_mut().find(|(n, _)| n == row) {
        Some((_, o)) => *o += ops,
        None => rows.push((row.to_string(), ops)),
    };
    for item in &net.items {
        match item {
            Item::Conv { spec, row, .. } => add(row, spec.ops()),
            Item::Pool { .. } | Item::Classifier(_) | Item::Fc(_) => {}
            Item::Inception(i) => {
                let ops = inception_convs(i, net.pad_mode).iter().map(|c| c.ops()).sum();
                add(&i.name, ops);
            }
            Item::ResGroup(g) => {
                let convs = resgroup_convs(g, net.pad_mode);
                let block: u64 = convs[..3].iter().map(|c| c.ops()).sum();
                let proj = convs[3].ops();
                add(&g.name, g.replicas as u64 * block + proj);
            }
            Item::AvgPool(a) => add(&a.name, avgpool_ops(a)),
        }
    }
    rows.into_iter().map(|(n, o)| (n, o as f64 / 1e6)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Shape;

    fn spec(ic: usize, hw: usize, oc: usize, k: usize, stride: usize, pad: usize) -> ConvSpec {
        ConvSpec {
            name: "t".into(),
            ic,
            ih: hw,
            iw: hw,
            oc,
            kh: k,
            kw: k,
            stride,
            pad,
            relu: false,
            pad_mode: PadMode::Skip,
        }
    }

    #[test]
    fn identity_kernel_passthrough() {
        let mut rng = SplitMix64::new(1);
        let ifm = FixedTensor::random(4, 5, 5, &mut rng);
        let s = spec(4, 5, 4, 1, 1, 0);
        // w[oc][c] = identity at 1.0, bias 0.
        let mut w = ConvWeights {
            oc: 4,
            ic: 4,
            kh: 1,
            kw: 1,
            w: vec![0; 16],
            bias: vec![0; 4],
        };
        for c in 0..4 {
            w.w[c * 4 + c] = 256;
        }
        let out = oracle_conv(&ifm, &w, &s, None, AccMode::Wrap, 8);
        assert_eq!(out.data, ifm.data);
    }

    #[test]
    fn relu_and_bypass_order() {
        // One pixel, one channel: conv yields -2.0, bypass adds +3.0,
        // ReLU keeps the positive sum; without bypass ReLU clamps to 0.
        let ifm = FixedTensor {
            ic: 1,
            ih: 1,
            iw: 1,
            data: vec![512],
        };
        let w = ConvWeights {
            oc: 1,
            ic: 1,
            kh: 1,
            kw: 1,
            w: vec![-256],
            bias: vec![0],
        };
        let mut s = spec(1, 1, 1, 1, 1, 0);
        s.relu = true;
        let bypass = FixedTensor {
            ic: 1,
            ih: 1,
            iw: 1,
            data: vec![768],
        };
        let with = oracle_conv(&ifm, &w, &s, Some(&bypass), AccMode::Wrap, 8);
        assert_eq!(with.data[0], 256);
        let without = oracle_conv(&ifm, &w, &s, None, AccMode::Wrap, 8);
        assert_eq!(without.data[0], 0);
    }

    #[test]
    fn conv_matches_independent_wide_evaluator() {
        // Replay the same quantization points with i128 arithmetic reduced
        // mod 2^32, iterating in a different loop order.
        let mut rng = SplitMix64::new(99);
        let s = spec(16, 6, 32, 3, 1, 1);
        let ifm = FixedTensor::random(16, 6, 6, &mut rng);
        let w = ConvWeights::random(&s, &mut rng);
        let got = oracle_conv(&ifm, &w, &s, None, AccMode::Wrap, 8);
        for oc in 0..32 {
            for oy in 0..s.oh() {
                for ox in 0..s.ow() {
                    let mut wide: i128 = (w.bias[oc] as i128) << 8;
                    for c in 0..16 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let y = (oy + ky) as isize - 1;
                                let x = (ox + kx) as isize - 1;
                                if y < 0 || x < 0 || y >= 6 || x >= 6 {
                                    continue;
                                }
                                wide += ifm.get(y as usize, x as usize, c) as i128
                                    * w.at(oc, ky, kx, c) as i128;
                            }
                        }
                    }
                    let wrapped = (wide as u128 & 0xffff_ffff) as u32 as i32;
                    assert_eq!(got.get(oy, ox, oc), (wrapped >> 8) as i16);
                }
            }
        }
    }

    #[test]
    fn maxpool_matches_brute_force() {
        let mut rng = SplitMix64::new(5);
        let ifm = FixedTensor::random(16, 8, 8, &mut rng);
        let p = PoolSpec {
            kind: PoolKind::Max,
            p: 3,
            stride: 2,
            pad: 0,
            ceil: false,
        };
        let out = oracle_maxpool(&ifm, &p, PadMode::Skip);
        assert_eq!((out.ih, out.iw), (3, 3));
        for oy in 0..3 {
            for ox in 0..3 {
                for c in 0..16 {
                    let mut m = i16::MIN;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            m = m.max(ifm.get(oy * 2 + dy, ox * 2 + dx, c));
                        }
                    }
                    assert_eq!(out.get(oy, ox, c), m);
                }
            }
        }
        // Constant input pools to the constant.
        let flat = FixedTensor {
            ic: 2,
            ih: 4,
            iw: 4,
            data: vec![-7; 32],
        };
        let p2 = PoolSpec {
            kind: PoolKind::Max,
            p: 2,
            stride: 2,
            pad: 0,
            ceil: false,
        };
        assert!(oracle_maxpool(&flat, &p2, PadMode::Skip).data.iter().all(|&v| v == -7));
    }

    #[test]
    fn avgpool_constants() {
        // 2x2 window: tap raw 64 is exactly 1/4, so constants are exact.
        let flat = FixedTensor {
            ic: 1,
            ih: 4,
            iw: 4,
            data: vec![300; 16],
        };
        let out = oracle_avgpool(&flat, 2, AccMode::Wrap, 8);
        assert!(out.data.iter().all(|&v| v == 300));
        // 1x1 average pool is the identity.
        let id = oracle_avgpool(&flat, 1, AccMode::Wrap, 8);
        assert_eq!(id.data, flat.data);
        // 7x7 tap rounds to raw 5.
        let w = ConvWeights::avgpool(3, 7, 8);
        assert!(w.w.iter().all(|&t| t == 5));
    }

    #[test]
    fn avgpool_op_accounting() {
        let spec = AvgPoolSpec {
            name: "gap".into(),
            input: Shape {
                c: 1024,
                h: 7,
                w: 7,
            },
            p: 7,
        };
        assert_eq!(avgpool_ops(&spec), 98_304);
    }
}
