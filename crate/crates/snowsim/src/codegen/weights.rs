//! Weight image construction.
//!
//! Weights live in DRAM in exactly the order the per-MAC buffers consume
//! them. A pass's image is round-major with a fixed stride per round so
//! the emitted round loop can advance one DRAM register:
//!
//! ```text
//! [round 0: cu 0 [vmac 0: chunk 0, chunk 1..] [vmac 1..] ..cu 3] [round 1: ..]
//! ```
//!
//! Pixel-split passes share one image across CUs (the dimension collapses
//! and loads are multicast). Within a block, word `k` feeds MAC `k % 16`
//! at slot `base + k/16`; slot 0 of chunk 0 holds the bias operand (zero
//! for continuation chunks of a split accumulation).
//!
//! COOP: MAC j of a vMAC serves channels congruent to j mod 16; the slot
//! sequence follows the trace order (channel block fastest, then kernel
//! column, then kernel row). INDP: MAC j of vMAC v owns output map
//! `64*round + 16*v + j` and its slots走 the whole kernel volume in trace
//! order, one word per slot.

use crate::layers::ConvSpec;
use crate::machine::{MACS_PER_VMAC, VMACS_PER_CU, WEIGHT_SLOTS};
use crate::oracle::ConvWeights;

/// One weight-streaming chunk: a kernel-row range forming one complete
/// sub-accumulation (bias slot + its lines).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub ky_lo: usize,
    pub ky_hi: usize,
    /// Slots per MAC including the leading bias slot.
    pub slots: usize,
}

/// Split a COOP round into chunks that fit the streaming half (or the
/// whole buffer when the pass loads weights statically).
pub fn coop_chunks(ic: usize, kh: usize, kw: usize, cap: usize) -> Vec<Chunk> {
    let lines_per_ky = ic * kw / MACS_PER_VMAC;
    let max_ky = ((cap - 1) / lines_per_ky).max(1);
    let mut chunks = Vec::new();
    let mut ky = 0;
    while ky < kh {
        let take = max_ky.min(kh - ky);
        chunks.push(Chunk {
            ky_lo: ky,
            ky_hi: ky + take,
            slots: 1 + take * lines_per_ky,
        });
        ky += take;
    }
    chunks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Output maps split across CUs; per-CU weight blocks.
    Map,
    /// Output rows split across CUs; one shared (multicast) weight image.
    Pixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Coop,
    Indp,
}

#[derive(Debug, Clone)]
pub struct WeightLayout {
    pub mode: Mode,
    pub split: Split,
    /// Rounds per CU (COOP: 4 maps each; INDP: 64 maps each).
    pub rounds: usize,
    pub chunks: Vec<Chunk>,
    /// Whether all rounds fit the weight buffers at once.
    pub static_load: bool,
    /// DRAM words per round across all CUs/vMACs/chunks.
    pub round_stride: usize,
    /// Words of one (vmac, chunk-set) block: chunk_slots_sum * 16.
    pub vmac_words: usize,
    pub image_words: usize,
}

impl WeightLayout {
    /// Slots one round occupies per MAC.
    pub fn round_slots(&self) -> usize {
        self.chunks.iter().map(|c| c.slots).sum()
    }

    /// Buffer slot where a chunk lands.
    /// Static: rounds pack sequentially. Streamed: chunks ping-pong the
    /// two 256-slot halves in (round, chunk) stream order.
    pub fn chunk_slot_base(&self, round: usize, chunk: usize) -> usize {
        if self.static_load {
            let mut s = round * self.round_slots();
            for c in 0..chunk {
                s += self.chunks[c].slots;
            }
            s
        } else {
            let step = round * self.chunks.len() + chunk;
            (step % 2) * (WEIGHT_SLOTS / 2)
        }
    }

    /// DRAM offset (words, relative to the image base) of a block.
    pub fn block_offset(&self, round: usize, cu: usize, vmac: usize, chunk: usize) -> usize {
        let cus = if self.split == Split::Map { 4 } else { 1 };
        let cu = if self.split == Split::Map { cu } else { 0 };
        let mut off = round * self.round_stride + (cu * VMACS_PER_CU + vmac) * self.vmac_words;
        let _ = cus;
        for c in 0..chunk {
            off += self.chunks[c].slots * MACS_PER_VMAC;
        }
        off
    }

    pub fn chunk_words(&self, chunk: usize) -> usize {
        self.chunks[chunk].slots * MACS_PER_VMAC
    }
}

/// Output map computed by (round, cu, vmac, mac) under a layout, or None
/// for padding lanes.
fn map_of(layout: &WeightLayout, oc_exec: usize, round: usize, cu: usize, vmac: usize, mac: usize) -> usize {
    match (layout.mode, layout.split) {
        (Mode::Coop, Split::Map) => {
            let per_cu = oc_exec / 4;
            cu * per_cu + round * VMACS_PER_CU + vmac
        }
        (Mode::Coop, Split::Pixel) => round * VMACS_PER_CU + vmac,
        (Mode::Indp, _) => round * 64 + vmac * MACS_PER_VMAC + mac,
    }
}

/// Plan the weight layout for a conv pass.
pub fn plan_weights(spec: &ConvSpec, mode: Mode, split: Split, oc_exec: usize) -> WeightLayout {
    let rounds = match (mode, split) {
        (Mode::Coop, Split::Map) => oc_exec / 4 / VMACS_PER_CU,
        (Mode::Coop, Split::Pixel) => oc_exec / VMACS_PER_CU,
        (Mode::Indp, _) => oc_exec.div_ceil(64),
    };
    let mut chunks = match mode {
        Mode::Coop => coop_chunks(spec.ic, spec.kh, spec.kw, WEIGHT_SLOTS / 2),
        Mode::Indp => vec![Chunk {
            ky_lo: 0,
            ky_hi: spec.kh,
            slots: 1 + spec.ic * spec.kh * spec.kw,
        }],
    };
    let mut static_load = rounds * chunks.iter().map(|c| c.slots).sum::<usize>() <= WEIGHT_SLOTS;
    if static_load && mode == Mode::Coop {
        // A static pass needs no chunking at all.
        chunks = coop_chunks(spec.ic, spec.kh, spec.kw, WEIGHT_SLOTS);
        static_load = rounds * chunks.iter().map(|c| c.slots).sum::<usize>() <= WEIGHT_SLOTS;
    }
    if !static_load {
        match mode {
            Mode::Coop => {
                chunks = coop_chunks(spec.ic, spec.kh, spec.kw, WEIGHT_SLOTS / 2);
            }
            Mode::Indp => {
                assert!(
                    chunks[0].slots <= WEIGHT_SLOTS / 2,
                    "{}: INDP round of {} slots cannot stream",
                    spec.name,
                    chunks[0].slots
                );
            }
        }
    }
    let vmac_words = chunks.iter().map(|c| c.slots).sum::<usize>() * MACS_PER_VMAC;
    let cus = if split == Split::Map { 4 } else { 1 };
    let round_stride = cus * VMACS_PER_CU * vmac_words;
    // Streamed layouts keep one zero round at the tail so the final
    // prefetch (one block past the end) reads defined data.
    let tail = if static_load { 0 } else { 1 };
    WeightLayout {
        mode,
        split,
        rounds,
        chunks,
        static_load,
        round_stride,
        vmac_words,
        image_words: (rounds + tail) * round_stride,
    }
}

/// Materialize the DRAM weight image for a pass.
pub fn build_image(
    layout: &WeightLayout,
    spec: &ConvSpec,
    w: &ConvWeights,
    oc_exec: usize,
) -> Vec<i16> {
    let mut img = vec![0i16; layout.image_words];
    let cus = if layout.split == Split::Map { 4 } else { 1 };
    let lines_per_ky = spec.ic * spec.kw / MACS_PER_VMAC;
    for round in 0..layout.rounds {
        for cu in 0..cus {
            for vmac in 0..VMACS_PER_CU {
                for (ci, chunk) in layout.chunks.iter().enumerate() {
                    let base = layout.block_offset(round, cu, vmac, ci);
                    for slot in 0..chunk.slots {
                        for mac in 0..MACS_PER_VMAC {
                            let map = map_of(layout, oc_exec, round, cu, vmac, mac);
                            let v: i16 = if map >= spec.oc {
                                0
                            } else if slot == 0 {
                                // Bias rides slot 0 of the first chunk only.
                                if ci == 0 {
                                    w.bias[map]
                                } else {
                                    0
                                }
                            } else {
                                match layout.mode {
                                    Mode::Coop => {
                                        let q = slot - 1;
                                        let ky = chunk.ky_lo + q / lines_per_ky;
                                        let rem = q % lines_per_ky;
                                        let kx = rem / (spec.ic / MACS_PER_VMAC);
                                        let cb = rem % (spec.ic / MACS_PER_VMAC);
                                        w.at(map, ky, kx, cb * MACS_PER_VMAC + mac)
                                    }
                                    Mode::Indp => {
                                        let q = slot - 1;
                                        let ky = q / (spec.ic * spec.kw);
                                        let rem = q % (spec.ic * spec.kw);
                                        let kx = rem / spec.ic;
                                        let c = rem % spec.ic;
                                        w.at(map, ky, kx, c)
                                    }
                                }
                            };
                            img[base + slot * MACS_PER_VMAC + mac] = v;
                        }
                    }
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::PadMode;
    use crate::rng::SplitMix64;

    fn spec(ic: usize, oc: usize, k: usize) -> ConvSpec {
        ConvSpec {
            name: "w".into(),
            ic,
            ih: 8,
            iw: 8,
            oc,
            kh: k,
            kw: k,
            stride: 1,
            pad: 0,
            relu: false,
            pad_mode: PadMode::Zero,
        }
    }

    #[test]
    fn chunking_splits_wide_kernels() {
        // 512 channels, 3x3: 96 lines per kernel row; two rows fit a
        // streaming half, the third spills to a second chunk.
        let ch = coop_chunks(512, 3, 3, WEIGHT_SLOTS / 2);
        assert_eq!(ch.len(), 2);
        assert_eq!(ch[0], Chunk { ky_lo: 0, ky_hi: 2, slots: 193 });
        assert_eq!(ch[1], Chunk { ky_lo: 2, ky_hi: 3, slots: 97 });
        // Small kernels stay whole.
        let ch = coop_chunks(64, 5, 5, WEIGHT_SLOTS / 2);
        assert_eq!(ch.len(), 1);
        assert_eq!(ch[0].slots, 1 + 100);
    }

    #[test]
    fn indp_static_when_it_fits() {
        let s = spec(3, 64, 11);
        let l = plan_weights(&s, Mode::Indp, Split::Pixel, 64);
        assert!(l.static_load);
        assert_eq!(l.rounds, 1);
        assert_eq!(l.chunks[0].slots, 1 + 363);
    }

    #[test]
    fn image_places_bias_and_taps() {
        let s = spec(16, 8, 1);
        let mut rng = SplitMix64::new(3);
        let w = ConvWeights::random(&s, &mut rng);
        let l = plan_weights(&s, Mode::Coop, Split::Pixel, 8);
        assert!(l.static_load);
        let img = build_image(&l, &s, &w, 8);
        // Round 0, vmac 0 computes map 0: slot 0 word 0 is its bias,
        // slot 1 word j is channel j's tap.
        assert_eq!(img[0], w.bias[0]);
        for j in 0..16 {
            assert_eq!(img[MACS_PER_VMAC + j], w.at(0, 0, 0, j));
        }
        // Round 1, vmac 2 computes map 6.
        let base = l.block_offset(1, 0, 2, 0);
        assert_eq!(img[base], w.bias[6]);
        // Padding maps are zero weights.
        let l2 = plan_weights(&s, Mode::Indp, Split::Pixel, 8);
        let img2 = build_image(&l2, &s, &w, 8);
        let pad_lane = 9; // map 9 >= oc 8
        assert_eq!(img2[pad_lane], 0);
    }
}
