//! Pool-only passes: the global average pool (lowered onto the vMACs
//! with a constant tap weight) and standalone max-pool layers.

use crate::asm::assemble;
use crate::codegen::asmgen::{Asm, SlotOp};
use crate::codegen::conv::{tgt, MAPS_WORDS};
use crate::error::{Error, Result};
use crate::isa::CU_BROADCAST;
use crate::layers::{PoolSpec, Shape};
use crate::machine::LINE_WORDS;

mod rr {
    pub const PX: u8 = 3;
    pub const SC1: u8 = 14;
    pub const SC2: u8 = 15;
    pub const SDRAM: u8 = 19;
    pub const STGT: u8 = 20;
    pub const POOLA: u8 = 26;
    pub const POOLS: u8 = 27;
    pub const WBB: u8 = 9;
    pub const SC3: u8 = 21;
    pub const SC4: u8 = 22;
}

/// A compiled pool-only pass.
#[derive(Debug, Clone)]
pub struct PoolPass {
    pub name: String,
    pub input: Shape,
    pub spec: PoolSpec,
    pub in_base: usize,
    pub out_base: usize,
    pub min_base: usize,
    /// Tap block for average pooling (16 copies of round(2^F/p^2)).
    pub tap_base: usize,
    pub avg: bool,
}

impl PoolPass {
    pub fn oh(&self) -> usize {
        if self.avg {
            self.input.h - self.spec.p + 1
        } else {
            self.spec.out_dim(self.input.h)
        }
    }
    pub fn ow(&self) -> usize {
        if self.avg {
            self.input.w - self.spec.p + 1
        } else {
            self.spec.out_dim(self.input.w)
        }
    }
    pub fn out_words(&self) -> usize {
        let rows = if self.avg {
            self.oh()
        } else {
            self.oh().div_ceil(4) * 4
        };
        rows * self.ow() * self.input.c
    }
}

/// The global average pool: channels split across the CUs, windows run
/// on the vMACs with the tap weight at slot 0 of vMAC 0, one 16-channel
/// group per job.
pub fn emit_avgpool_pass(pass: &PoolPass) -> Result<Vec<u32>> {
    assert!(pass.avg);
    assert_eq!(pass.oh(), 1, "{}: only global average pooling", pass.name);
    assert_eq!(pass.ow(), 1);
    let ic = pass.input.c;
    assert_eq!(ic % 64, 0, "{}: channel split needs ic % 64 == 0", pass.name);
    let icq = ic / 4;
    let (h, w) = (pass.input.h, pass.input.w);
    let out_stage: u32 = ((h * w * icq) as u32).next_multiple_of(16);
    if out_stage + icq as u32 > MAPS_WORDS {
        return Err(Error::Codegen(format!("{}: slice does not fit", pass.name)));
    }
    let mut a = Asm::new();
    a.comment(&format!("avgpool pass {}", pass.name));
    // Tap weights into slot 0 of vMAC 0 on every CU.
    a.load_const(rr::SC1, pass.tap_base as u32);
    a.load_const(rr::SC2, tgt(CU_BROADCAST, 8, 0));
    a.load(rr::SC1, rr::SC2, LINE_WORDS as u32);
    // Channel-sliced input: each CU loads its quarter of every pixel.
    for cu in 0..4u8 {
        for py in 0..h {
            for px in 0..w {
                a.load_const(
                    rr::SC1,
                    (pass.in_base + (py * w + px) * ic + cu as usize * icq) as u32,
                );
                a.load_const(rr::SC2, tgt(cu, 0, ((py * w + px) * icq) as u32));
                a.load(rr::SC1, rr::SC2, icq as u32);
            }
        }
    }
    // Writeback: one 16-word group per window job.
    a.load_const(rr::WBB, out_stage);
    a.mov(rr::SC3, 16);
    a.setwb(rr::WBB, rr::SC3, (16i32) << 4);
    a.load_const(rr::POOLS, (icq as u32) | (((w * icq) as u32) << 12));
    let imm = (pass.spec.p as i32) | (1 << 6); // average flavor
    for gch in 0..icq / 16 {
        a.load_const(rr::POOLA, (gch * 16) as u32);
        a.max(rr::POOLA, rr::POOLS, imm);
    }
    // Store each CU's finished slice.
    for cu in 0..4u8 {
        a.load_const(rr::SDRAM, (pass.out_base + cu as usize * icq) as u32);
        a.load_const(rr::STGT, tgt(cu, 0, out_stage));
        a.store(rr::SDRAM, rr::STGT, icq as u32);
    }
    a.halt();
    let text = a.text();
    assemble(&text).map_err(|e| Error::Codegen(format!("{}: {e}", pass.name)))
}

/// A standalone max-pool layer: output rows split across CUs, windows
/// read the loaded input tiles directly. Uncovered halo rows and the
/// ceil-overhang column read MIN so clamped windows ignore them.
pub fn emit_maxpool_pass(pass: &PoolPass) -> Result<Vec<u32>> {
    assert!(!pass.avg);
    assert_eq!(pass.spec.pad, 0, "{}: standalone pools are unpadded", pass.name);
    let ic = pass.input.c;
    let (ih, iw) = (pass.input.h, pass.input.w);
    let (oh, ow) = (pass.oh(), pass.ow());
    let p = pass.spec.p;
    let ps = pass.spec.stride;
    let ppc = oh.div_ceil(4);
    let over_x = ((ow - 1) * ps + p).saturating_sub(iw);
    let pitch = ((iw + over_x) * ic) as u32;
    let out_row = (ow * ic) as u32;
    // One pool row per tile; the overlapping halo rows reload.
    let in_alloc = p as u32 * pitch;
    let pool_stage = in_alloc.next_multiple_of(16);
    if pool_stage + 2 * out_row > MAPS_WORDS {
        return Err(Error::Codegen(format!("{}: pool tile does not fit", pass.name)));
    }
    let mut a = Asm::new();
    a.comment(&format!("pool pass {}", pass.name));
    // MIN-fill the input region once: pad columns and uncovered rows
    // keep it, loads overwrite the real cells.
    {
        let mut off = 0u32;
        while off < in_alloc {
            let take = (in_alloc - off).min(4096);
            a.load_const(rr::SC1, pass.min_base as u32);
            a.load_const(rr::SC2, tgt(CU_BROADCAST, 0, off));
            a.load(rr::SC1, rr::SC2, take);
            off += take;
        }
    }
    let row_words = iw * ic;
    for lp in 0..ppc {
        // Load the window rows of this pool row for each CU.
        for cu in 0..4usize {
            let gp = cu * ppc + lp;
            let y0 = gp * ps;
            for dy in 0..p {
                let y = y0 + dy;
                if y >= ih {
                    // Beyond the input: refresh MIN over the stale rows.
                    let mut off = 0u32;
                    while off < row_words as u32 {
                        let take = (row_words as u32 - off).min(4096);
                        a.load_const(rr::SC1, pass.min_base as u32);
                        a.load_const(rr::SC2, tgt(cu as u8, 0, dy as u32 * pitch + off));
                        a.load(rr::SC1, rr::SC2, take);
                        off += take;
                    }
                    continue;
                }
                let mut off = 0usize;
                while off < row_words {
                    let take = (row_words - off).min(4096);
                    a.load_const(rr::SC1, (pass.in_base + y * row_words + off) as u32);
                    a.load_const(rr::SC2, tgt(cu as u8, 0, dy as u32 * pitch + off as u32));
                    a.load(rr::SC1, rr::SC2, take as u32);
                    off += take;
                }
            }
        }
        let pstage = pool_stage + (lp as u32 % 2) * out_row;
        a.load_const(rr::POOLS, (ic as u32) | (pitch << 12));
        let imm = p as i32;
        for g16 in (0..ic).step_by(16) {
            a.load_const(rr::WBB, pstage + g16 as u32);
            a.load_const(rr::SC3, ic as u32);
            a.setwb(rr::WBB, rr::SC3, 1);
            a.load_const(rr::POOLA, g16 as u32);
            a.load_const(rr::SC4, (ps * ic) as u32);
            let l = a.loop_begin(rr::PX, ow as u32, "pw");
            a.max(rr::POOLA, rr::POOLS, imm);
            a.loop_end(l, &[SlotOp::AddR(rr::POOLA, rr::POOLA, rr::SC4)]);
        }
        for cu in 0..4u8 {
            let dram = pass.out_base + (cu as usize * ppc + lp) * out_row as usize;
            let mut off = 0u32;
            while off < out_row {
                let take = (out_row - off).min(4096);
                a.load_const(rr::SDRAM, dram as u32 + off);
                a.load_const(rr::STGT, tgt(cu, 0, pstage + off));
                a.store(rr::SDRAM, rr::STGT, take);
                off += take;
            }
        }
    }
    a.halt();
    let text = a.text();
    assemble(&text).map_err(|e| Error::Codegen(format!("{}: {e}", pass.name)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixpoint::{AccMode, FixedTensor};
    use crate::layers::{PadMode, PoolKind};
    use crate::machine::MachineConfig;
    use crate::oracle::{oracle_avgpool, oracle_maxpool};
    use crate::rng::SplitMix64;
    use crate::sim::Simulator;

    fn build_dram(pass: &mut PoolPass, ifm: &FixedTensor, tap: i16) -> Vec<i16> {
        let mut dram = vec![i16::MIN; 4096];
        pass.min_base = 0;
        pass.tap_base = dram.len();
        dram.extend(std::iter::repeat(tap).take(16));
        pass.in_base = dram.len();
        dram.extend_from_slice(&ifm.data);
        pass.out_base = dram.len();
        dram.extend(std::iter::repeat(0).take(pass.out_words()));
        dram
    }

    #[test]
    fn avgpool_matches_oracle() {
        let cfg = MachineConfig {
            mem_latency: 20,
            ..MachineConfig::default()
        };
        let mut rng = SplitMix64::new(41);
        let ifm = FixedTensor::random(256, 7, 7, &mut rng);
        let mut pass = PoolPass {
            name: "gap".into(),
            input: Shape { c: 256, h: 7, w: 7 },
            spec: PoolSpec {
                kind: PoolKind::Avg,
                p: 7,
                stride: 1,
                pad: 0,
                ceil: false,
            },
            in_base: 0,
            out_base: 0,
            min_base: 0,
            tap_base: 0,
            avg: true,
        };
        let tap = (256.0f64 / 49.0).round() as i16;
        let dram = build_dram(&mut pass, &ifm, tap);
        let words = emit_avgpool_pass(&pass).unwrap();
        let mut sim = Simulator::new(&cfg, &words, dram).unwrap();
        let (cycles, clean) = sim.run(10_000_000).unwrap();
        assert!(clean, "{cycles}");
        let want = oracle_avgpool(&ifm, 7, AccMode::Wrap, 8);
        assert_eq!(&sim.mem.dram[pass.out_base..pass.out_base + 256], &want.data[..]);
    }

    #[test]
    fn standalone_maxpool_matches_oracle() {
        let cfg = MachineConfig {
            mem_latency: 20,
            ..MachineConfig::default()
        };
        let mut rng = SplitMix64::new(42);
        let ifm = FixedTensor::random(64, 13, 13, &mut rng);
        let spec = PoolSpec {
            kind: PoolKind::Max,
            p: 3,
            stride: 2,
            pad: 0,
            ceil: true,
        };
        let mut pass = PoolPass {
            name: "pool3".into(),
            input: Shape { c: 64, h: 13, w: 13 },
            spec: spec.clone(),
            in_base: 0,
            out_base: 0,
            min_base: 0,
            tap_base: 0,
            avg: false,
        };
        let dram = build_dram(&mut pass, &ifm, 0);
        let words = emit_maxpool_pass(&pass).unwrap();
        let mut sim = Simulator::new(&cfg, &words, dram).unwrap();
        let (cycles, clean) = sim.run(10_000_000).unwrap();
        assert!(clean, "{cycles}");
        let want = oracle_maxpool(&ifm, &spec, PadMode::Zero);
        let (oh, ow) = (want.ih, want.iw);
        for y in 0..oh {
            for x in 0..ow {
                for c in 0..64 {
                    assert_eq!(
                        sim.mem.dram[pass.out_base + (y * ow + x) * 64 + c],
                        want.get(y, x, c),
                        "y{y} x{x} c{c}"
                    );
                }
            }
        }
    }
}
