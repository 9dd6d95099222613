//! Layer-to-instruction compiler.
//!
//! `conv` emits one convolution pass; `weights` lays out DRAM weight
//! images; `netcompile` turns network descriptors into benchmark pass
//! sequences. Mode selection follows the hardware's constraints: COOP
//! when the combined trace of one output reaches the 256 words that keep
//! the gather adder off the critical path (and the depth is a whole
//! number of lines), INDP otherwise.

pub mod asmgen;
pub mod conv;
pub mod netcompile;
pub mod pools;
pub mod weights;

use crate::error::Result;
use crate::fixpoint::FixedTensor;
use crate::layers::{ConvSpec, PadMode, PoolSpec};
use crate::machine::MachineConfig;
use crate::oracle::ConvWeights;
use conv::{ConvPass, PoolFuse};
use weights::{build_image, plan_weights, Mode, Split};

/// Pick the computation mode for a conv-family layer: COOP needs the
/// full-kernel trace to cover the 16-cycle gather reduce and a depth
/// that is a whole number of cache lines.
pub fn select_mode(spec: &ConvSpec) -> Mode {
    if spec.ic * spec.kh * spec.kw >= 256 && spec.ic % 16 == 0 {
        Mode::Coop
    } else {
        Mode::Indp
    }
}

/// Pick the work split: padded `Skip` convolutions with k > 1 need
/// identical border structure on every CU, so they split by output maps;
/// everything else splits by output rows.
pub fn select_split(spec: &ConvSpec, mode: Mode, single_pixel: bool) -> Split {
    if single_pixel {
        return Split::Map;
    }
    if mode == Mode::Coop && spec.pad_mode == PadMode::Skip && spec.pad > 0 && spec.kh > 1 {
        Split::Map
    } else {
        Split::Pixel
    }
}

fn oc_exec_for(oc: usize, mode: Mode, split: Split) -> usize {
    match (mode, split) {
        (Mode::Indp, _) => oc,
        (Mode::Coop, Split::Map) => oc.next_multiple_of(16),
        (Mode::Coop, Split::Pixel) => oc.next_multiple_of(4),
    }
}

/// A compiled pass: program plus its private DRAM image.
#[derive(Debug)]
pub struct BuiltPass {
    pub pass: ConvPass,
    pub program: Vec<u32>,
    pub dram: Vec<i16>,
    /// Kernel-row boundaries where the accumulation restarts through a
    /// truncated partial (wide kernels only).
    pub splits: Vec<usize>,
}

/// Compile one conv layer as a standalone pass with a fresh DRAM image.
pub fn build_conv_pass(
    cfg: &MachineConfig,
    spec: &ConvSpec,
    pool: Option<PoolSpec>,
    ifm: &FixedTensor,
    weights: &ConvWeights,
    bypass: Option<&FixedTensor>,
) -> Result<BuiltPass> {
    let mode = select_mode(spec);
    let split = select_split(spec, mode, spec.oh() == 1 && spec.ow() == 1);
    let oc_exec = oc_exec_for(spec.oc, mode, split);
    let wl = plan_weights(spec, mode, split, oc_exec);
    let image = build_image(&wl, spec, weights, oc_exec);

    let mut pass = ConvPass {
        name: spec.name.clone(),
        spec: spec.clone(),
        oc_exec,
        mode,
        split,
        wl,
        pool: pool.map(|p| {
            let oh = p.out_dim(spec.oh());
            let ow = p.out_dim(spec.ow());
            PoolFuse { spec: p, oh, ow }
        }),
        drip: None,
        bypass: bypass.is_some(),
        in_halo: 0,
        in_base: 0,
        w_base: 0,
        bypass_base: 0,
        out_base: 0,
        zero_base: 0,
        min_base: 0,
    };

    // DRAM layout: zero fill block, MIN block, input, weights, bypass,
    // output (+ slack so ceil-split garbage rows stay in bounds).
    let mut dram: Vec<i16> = Vec::new();
    let alloc = |data: &[i16], dram: &mut Vec<i16>| -> usize {
        let base = dram.len();
        dram.extend_from_slice(data);
        base
    };
    // Fill blocks: every fill load reads at most one trace (4096 words)
    // from the block's start.
    pass.zero_base = alloc(&vec![0i16; pass.row_words().max(4096)], &mut dram);
    pass.min_base = alloc(&vec![i16::MIN; 4096], &mut dram);
    pass.in_base = alloc(&ifm.data, &mut dram);
    pass.w_base = alloc(&image, &mut dram);
    if let Some(b) = bypass {
        // Bypass rows live at the executed channel stride.
        let mut padded = vec![0i16; b.ih * b.iw * oc_exec];
        for y in 0..b.ih {
            for x in 0..b.iw {
                for c in 0..b.ic {
                    padded[(y * b.iw + x) * oc_exec + c] = b.get(y, x, c);
                }
            }
        }
        pass.bypass_base = alloc(&padded, &mut dram);
    }
    pass.out_base = alloc(&vec![0i16; pass.out_words()], &mut dram);

    let splits: Vec<usize> = pass.wl.chunks.iter().skip(1).map(|c| c.ky_lo).collect();
    let program = emit_pass(&pass, cfg)?;
    Ok(BuiltPass {
        pass,
        program,
        dram,
        splits,
    })
}

/// Route a pass to its emitter.
pub fn emit_pass(pass: &ConvPass, cfg: &MachineConfig) -> Result<Vec<u32>> {
    let bw = cfg.bytes_per_cycle();
    if pass.pool.is_some() {
        if pass.groups() == 1 && pass.split == Split::Pixel {
            conv::emit_stem_pass(pass)
        } else {
            conv::emit_pooled_pass(pass, bw)
        }
    } else {
        conv::emit_plain_pass(pass, bw)
    }
}

/// Read a pass's finished output tensor back out of DRAM, stripping the
/// executed-channel padding and ceil-split slack rows.
pub fn read_output(pass: &ConvPass, dram: &[i16]) -> FixedTensor {
    let (oc, oh, ow) = match &pass.pool {
        Some(p) => (pass.spec.oc, p.oh, p.ow),
        None => (pass.spec.oc, pass.oh(), pass.ow()),
    };
    let mut t = FixedTensor::zeroed(oc, oh, ow);
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..oc {
                t.set(y, x, c, dram[pass.out_base + (y * ow + x) * pass.oc_exec + c]);
            }
        }
    }
    t
}
