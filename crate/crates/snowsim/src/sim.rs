//! One simulation instance: control core, compute cluster and memory
//! system advancing under a single logical clock.
//!
//! Per-cycle ordering is fixed: memory completions land first (fills
//! become visible and pending-load gates drop), the compute cluster
//! advances, then the control core commits, executes and fetches.
//! Identical programs and configurations therefore produce identical
//! cycle counts and final state.

use crate::compute::{ComputeCluster, Outbound};
use crate::control::ControlCore;
use crate::error::Result;
use crate::machine::MachineConfig;
use crate::memsys::{Completion, MemSys};

#[derive(Debug)]
pub struct Simulator {
    pub cfg: MachineConfig,
    pub ctrl: ControlCore,
    pub cluster: ComputeCluster,
    pub mem: MemSys,
    pub cycle: u64,
    /// Fills held back by the buffer write interlock, retried in order.
    deferred: Vec<Completion>,
}

impl Simulator {
    pub fn new(cfg: &MachineConfig, program: &[u32], dram: Vec<i16>) -> Result<Simulator> {
        Ok(Simulator {
            cfg: cfg.clone(),
            ctrl: ControlCore::new(program)?,
            cluster: ComputeCluster::new(cfg),
            mem: MemSys::new(cfg, dram),
            cycle: 0,
            deferred: Vec::new(),
        })
    }

    fn deliver(&mut self, c: Completion) -> Result<()> {
        match c {
            Completion::Fill {
                cu_mask,
                buffer_id,
                dst_addr,
                data,
            } => {
                if !self.cluster.apply_fill(cu_mask, buffer_id, dst_addr, &data)? {
                    self.deferred.push(Completion::Fill {
                        cu_mask,
                        buffer_id,
                        dst_addr,
                        data,
                    });
                }
            }
            Completion::IcacheFill { half } => self.ctrl.icache_filled(half),
            Completion::StoreDone => {}
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        let retry: Vec<Completion> = std::mem::take(&mut self.deferred);
        for c in retry {
            self.deliver(c)?;
        }
        for c in self.mem.drain(self.cycle) {
            self.deliver(c)?;
        }
        for out in self.cluster.tick(self.cycle, &self.cfg)? {
            match out {
                Outbound::Store { dram_addr, data } => {
                    self.mem.issue_store(self.cycle, dram_addr, data)?;
                }
                Outbound::MoveLine { .. } => unreachable!("moves stay inside the cluster"),
            }
        }
        self.ctrl.tick(self.cycle, &mut self.cluster, &mut self.mem)?;
        self.cycle += 1;
        Ok(())
    }

    /// Program halted and every queue, decoder and transfer drained.
    pub fn done(&self) -> bool {
        self.ctrl.drained()
            && self.cluster.quiescent()
            && self.mem.idle()
            && self.deferred.is_empty()
            && !self.cluster.pending_loads()
    }

    /// Step until clean completion or the cycle budget runs out. Returns
    /// the cycle count and whether the program halted cleanly.
    pub fn run(&mut self, max_cycles: u64) -> Result<(u64, bool)> {
        while self.cycle < max_cycles {
            if self.done() {
                return Ok((self.cycle, true));
            }
            self.step()?;
        }
        Ok((self.cycle, self.done()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::compute::Dispatch;
    use crate::fixpoint::AccMode;
    use crate::isa::{BufferTarget, CU_BROADCAST};
    use crate::machine::MachineConfig;
    use crate::oracle::{oracle_conv, ConvWeights};
    use crate::layers::{ConvSpec, PadMode};
    use crate::fixpoint::FixedTensor;
    use crate::rng::SplitMix64;

    fn quick_cfg() -> MachineConfig {
        // Short memory latency keeps unit tests brisk.
        MachineConfig {
            mem_latency: 4,
            ..MachineConfig::default()
        }
    }

    #[test]
    fn single_halt_runs_clean() {
        let words = assemble("halt\n").unwrap();
        let mut sim = Simulator::new(&quick_cfg(), &words, vec![0; 16]).unwrap();
        let (cycles, clean) = sim.run(10_000).unwrap();
        assert!(clean);
        assert_eq!(sim.ctrl.stats.commits, 1);
        // One icache fill plus the five pipeline stages.
        assert!(cycles < 300, "took {cycles}");
    }

    #[test]
    fn infinite_loop_exhausts_budget() {
        let words = assemble("loop: beq r0, r0, loop\nadd r1, r1, 1\nadd r1, r1, 1\nadd r1, r1, 1\nadd r1, r1, 1\nhalt\n").unwrap();
        let mut sim = Simulator::new(&quick_cfg(), &words, vec![0; 16]).unwrap();
        let (cycles, clean) = sim.run(1000).unwrap();
        assert_eq!(cycles, 1000);
        assert!(!clean);
    }

    #[test]
    fn raw_dependency_stalls_decode() {
        let a = assemble("add r1, r2, 3\nadd.1 r4, r1, r1, 0\nhalt\n").unwrap();
        let mut sim = Simulator::new(&quick_cfg(), &a, vec![0; 16]).unwrap();
        sim.run(10_000).unwrap();
        assert!(sim.ctrl.stats.raw_stalls >= 1);
        assert_eq!(sim.ctrl.regs[1], 3);
        assert_eq!(sim.ctrl.regs[4], 6);
    }

    #[test]
    fn straight_line_throughput() {
        // Ten independent scalars commit one per cycle after the pipeline
        // fills: last commit at fetch-start + 10 + depth - 1.
        let mut src = String::new();
        for i in 0..10 {
            src.push_str(&format!("mov r{}, {}\n", i + 1, i));
        }
        src.push_str("halt\n");
        let words = assemble(&src).unwrap();
        let mut sim = Simulator::new(&quick_cfg(), &words, vec![0; 16]).unwrap();
        sim.run(10_000).unwrap();
        assert_eq!(sim.ctrl.stats.commits, 11);
        assert_eq!(sim.ctrl.stats.raw_stalls, 0);
        for i in 0..10 {
            assert_eq!(sim.ctrl.regs[i + 1], i as i32);
        }
    }

    #[test]
    fn taken_branch_executes_four_delay_slots() {
        let src = "beq r0, r0, target\n\
                   add r1, r1, 1\n\
                   add r2, r2, 1\n\
                   add r3, r3, 1\n\
                   add r4, r4, 1\n\
                   add r5, r5, 1\n\
                   target: halt\n";
        let words = assemble(src).unwrap();
        let mut sim = Simulator::new(&quick_cfg(), &words, vec![0; 16]).unwrap();
        let (_, clean) = sim.run(10_000).unwrap();
        assert!(clean);
        // The four delay slots ran; the fifth instruction was skipped.
        assert_eq!(sim.ctrl.regs[1], 1);
        assert_eq!(sim.ctrl.regs[2], 1);
        assert_eq!(sim.ctrl.regs[3], 1);
        assert_eq!(sim.ctrl.regs[4], 1);
        assert_eq!(sim.ctrl.regs[5], 0);
    }

    #[test]
    fn deterministic_cycle_counts() {
        let src = "mov r1, 25\nloop: add r1, r1, -1\nbgt r0, r1, r0, loop\nadd r2, r2, 1\nadd r3, r3, 1\nadd r4, r4, 1\nadd r5, r5, 1\nhalt\n";
        let words = assemble(src).unwrap();
        let run = || {
            let mut sim = Simulator::new(&quick_cfg(), &words, vec![0; 16]).unwrap();
            let (cycles, clean) = sim.run(100_000).unwrap();
            assert!(clean);
            (cycles, sim.ctrl.regs)
        };
        assert_eq!(run(), run());
    }

    /// Hand-assembled 1x1 convolution microprogram verified against the
    /// oracle: load maps and weights, set the writeback registers, run one
    /// INDP trace, store the result.
    #[test]
    fn microprogram_indp_conv_matches_oracle() {
        let cfg = quick_cfg();
        let mut rng = SplitMix64::new(0x51);
        let ic = 16usize;
        let oc = 16usize;
        let ifm = FixedTensor::random(ic, 1, 1, &mut rng);
        let spec = ConvSpec {
            name: "micro".into(),
            ic,
            ih: 1,
            iw: 1,
            oc,
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
            relu: false,
            pad_mode: PadMode::Skip,
        };
        let weights = ConvWeights::random(&spec, &mut rng);
        let expect = oracle_conv(&ifm, &weights, &spec, None, AccMode::Wrap, 8);

        // DRAM image: [0..16) input, [16..304) weights for vMAC 0
        // (slot 0 = bias, slots 1..17 = taps, MAC-interleaved), output
        // region at 512.
        let mut dram = vec![0i16; 1024];
        dram[..ic].copy_from_slice(&ifm.data);
        for j in 0..oc {
            dram[16 + j] = weights.bias[j];
            for c in 0..ic {
                dram[16 + (1 + c) * 16 + j] = weights.at(j, 0, 0, c);
            }
        }

        let maps_tgt = BufferTarget {
            cu: CU_BROADCAST,
            buffer_id: 0,
            addr: 0,
        }
        .pack();
        let w_tgt = BufferTarget {
            cu: CU_BROADCAST,
            buffer_id: 8,
            addr: 0,
        }
        .pack();
        let out_tgt = BufferTarget {
            cu: 0,
            buffer_id: 0,
            addr: 256,
        }
        .pack();
        // The two broadcast targets have empty low bytes, so a mov of the
        // top byte plus a 24-bit shift builds them.
        assert_eq!(maps_tgt & 0xff_ffff, 0);
        assert_eq!(w_tgt & 0xff_ffff, 0);
        let src = format!(
            "mov r1, 0\n\
             mov r2, {m_hi}\n\
             mov.1 r2, r2, r0, 24\n\
             mov r3, 16\n\
             mov r4, {w_hi}\n\
             mov.1 r4, r4, r0, 24\n\
             load r0, r1, r2, {ic}\n\
             load r0, r3, r4, 272\n\
             mov r5, 256\n\
             mov r6, 0\n\
             setwb r0, r5, r6, {wbimm}\n\
             mov r7, 0\n\
             mov r8, {pack}\n\
             mac.0 r0, r7, r8, {ic}\n\
             mov r9, 512\n\
             mov r10, {out_tgt}\n\
             store r0, r9, r10, {oc}\n\
             halt\n",
            m_hi = (maps_tgt >> 24) as i32,
            w_hi = (w_tgt >> 24) as i32,
            out_tgt = out_tgt as i32,
            // setwb: target mac, no relu/bypass, active = 16.
            wbimm = 16 << 4,
            // wslot 1, emit bit.
            pack = 1 | (1 << 9),
        );
        let words = assemble(&src).unwrap();
        let mut sim = Simulator::new(&cfg, &words, dram).unwrap();
        let (cycles, clean) = sim.run(100_000).unwrap();
        assert!(clean, "did not drain after {cycles} cycles");
        assert_eq!(&sim.mem.dram[512..512 + oc], &expect.data[..]);
    }

    #[test]
    fn indp_offset_exact_dead_cycles() {
        // An INDP trace starting at word offset 4 incurs exactly 4
        // alignment dead cycles.
        let cfg = quick_cfg();
        let mut cluster = ComputeCluster::new(&cfg);
        cluster
            .try_dispatch(&Dispatch::Mac {
                maps_addr: 4,
                wslot: 1,
                bias_slot: 0,
                len: 33,
                coop: false,
                emit: false,
                wait_max: false,
                wait_tmov: false,
            })
            .unwrap();
        let mut cycle = 0;
        while !cluster.quiescent() {
            cluster.tick(cycle, &cfg).unwrap();
            cycle += 1;
            assert!(cycle < 1000);
        }
        assert_eq!(cluster.cus[0].stats.indp_align_stalls, 4);
        // Aligned trace: none.
        let mut cluster = ComputeCluster::new(&cfg);
        cluster
            .try_dispatch(&Dispatch::Mac {
                maps_addr: 16,
                wslot: 1,
                bias_slot: 0,
                len: 32,
                coop: false,
                emit: false,
                wait_max: false,
                wait_tmov: false,
            })
            .unwrap();
        let mut cycle = 0;
        while !cluster.quiescent() {
            cluster.tick(cycle, &cfg).unwrap();
            cycle += 1;
            assert!(cycle < 1000);
        }
        assert_eq!(cluster.cus[0].stats.indp_align_stalls, 0);
    }

    /// COOP output cadence: consecutive emits are max(16, words/16)
    /// cycles apart.
    #[test]
    fn coop_output_cadence() {
        for (words_per_output, expect_gap) in [(128u32, 16u64), (512, 32)] {
            let cfg = quick_cfg();
            let mut cluster = ComputeCluster::new(&cfg);
            for _ in 0..3 {
                assert!(cluster
                    .try_dispatch(&Dispatch::Mac {
                        maps_addr: 0,
                        wslot: 1,
                        bias_slot: 0,
                        len: words_per_output,
                        coop: true,
                        emit: true,
                        wait_max: false,
                        wait_tmov: false,
                    })
                    .unwrap());
            }
            let mut emits = Vec::new();
            let mut last = 0;
            let mut cycle = 0;
            while !cluster.quiescent() {
                cluster.tick(cycle, &cfg).unwrap();
                let done = cluster.cus[0].seq.mac_completed;
                if done > last {
                    emits.push(cycle);
                    last = done;
                }
                cycle += 1;
                assert!(cycle < 10_000);
            }
            assert_eq!(emits.len(), 3);
            assert_eq!(emits[1] - emits[0], expect_gap, "words {words_per_output}");
            assert_eq!(emits[2] - emits[1], expect_gap);
        }
    }

    /// A 3x3 pooling window costs exactly 36 cycles per 16 outputs.
    #[test]
    fn vmax_window_is_36_cycles() {
        let cfg = quick_cfg();
        let mut cluster = ComputeCluster::new(&cfg);
        for _ in 0..3 {
            assert!(cluster
                .try_dispatch(&Dispatch::Window {
                    addr: 0,
                    chunk_stride: 16,
                    row_stride: 64,
                    p: 3,
                    avg: false,
                    wait_mac: false,
                    wait_tmov: false,
                })
                .unwrap());
        }
        let mut outs = Vec::new();
        let mut last = 0;
        let mut cycle = 0;
        while !cluster.quiescent() {
            cluster.tick(cycle, &cfg).unwrap();
            if cluster.cus[0].seq.max_completed > last {
                outs.push(cycle);
                last = cluster.cus[0].seq.max_completed;
            }
            cycle += 1;
            assert!(cycle < 10_000);
        }
        assert_eq!(outs[1] - outs[0], 36);
        assert_eq!(outs[2] - outs[1], 36);
        // 2x2 windows: P*P*4 = 16 cycles.
        let mut cluster = ComputeCluster::new(&cfg);
        for _ in 0..2 {
            cluster
                .try_dispatch(&Dispatch::Window {
                    addr: 0,
                    chunk_stride: 16,
                    row_stride: 64,
                    p: 2,
                    avg: false,
                    wait_mac: false,
                    wait_tmov: false,
                })
                .unwrap();
        }
        let mut outs = Vec::new();
        let mut last = 0;
        let mut cycle = 0;
        while !cluster.quiescent() {
            cluster.tick(cycle, &cfg).unwrap();
            if cluster.cus[0].seq.max_completed > last {
                outs.push(cycle);
                last = cluster.cus[0].seq.max_completed;
            }
            cycle += 1;
            assert!(cycle < 10_000);
        }
        assert_eq!(outs[1] - outs[0], 16);
    }

    #[test]
    fn vmax_all_equal_inputs() {
        let cfg = quick_cfg();
        let mut cluster = ComputeCluster::new(&cfg);
        for cu in &mut cluster.cus {
            for w in cu.maps.iter_mut().take(256) {
                *w = -42;
            }
        }
        cluster
            .try_dispatch(&Dispatch::SetWb(crate::compute::SetWb {
                target: crate::compute::WbTarget::Max,
                base: 1024,
                offset: 16,
                relu: false,
                bypass_en: false,
                active: 0,
            }))
            .unwrap();
        cluster
            .try_dispatch(&Dispatch::Window {
                addr: 0,
                chunk_stride: 16,
                row_stride: 64,
                p: 2,
                avg: false,
                wait_mac: false,
                wait_tmov: false,
            })
            .unwrap();
        let mut cycle = 0;
        while !cluster.quiescent() {
            cluster.tick(cycle, &cfg).unwrap();
            cycle += 1;
            assert!(cycle < 1000);
        }
        assert_eq!(&cluster.cus[0].maps[1024..1040], &[-42i16; 16]);
    }

    /// A 64-word CU move is 4 line transfers; when a memory move and a CU
    /// move are both pending the decoder alternates between them.
    #[test]
    fn tmov_moves_and_alternation() {
        let cfg = quick_cfg();
        let mut cluster = ComputeCluster::new(&cfg);
        for (i, w) in cluster.cus[1].maps.iter_mut().enumerate().take(64) {
            *w = i as i16;
        }
        assert!(cluster
            .try_dispatch(&Dispatch::Tmov {
                src_cu: 1,
                src_addr: 0,
                dst_cu: 2,
                dst_addr: 512,
                len: 64,
            })
            .unwrap());
        let mut cycle = 0;
        while !cluster.quiescent() {
            cluster.tick(cycle, &cfg).unwrap();
            cycle += 1;
            assert!(cycle < 1000);
        }
        let expect: Vec<i16> = (0..64).collect();
        assert_eq!(&cluster.cus[2].maps[512..576], &expect[..]);
        assert_eq!(cluster.cus[2].seq.tmov_in_completed, 1);
        // Move to the same CU acts as a copy.
        let mut cluster = ComputeCluster::new(&cfg);
        cluster.cus[0].maps[..16].copy_from_slice(&[7i16; 16]);
        cluster
            .try_dispatch(&Dispatch::Tmov {
                src_cu: 0,
                src_addr: 0,
                dst_cu: 0,
                dst_addr: 128,
                len: 16,
            })
            .unwrap();
        let mut cycle = 0;
        while !cluster.quiescent() {
            cluster.tick(cycle, &cfg).unwrap();
            cycle += 1;
            assert!(cycle < 1000);
        }
        assert_eq!(&cluster.cus[0].maps[128..144], &[7i16; 16]);
        // Alternation: a store and a CU move in the same queue interleave
        // their granted cycles.
        let mut cluster = ComputeCluster::new(&cfg);
        cluster
            .try_dispatch(&Dispatch::Store {
                cu: 0,
                src_addr: 0,
                len: 64,
                dram_addr: 0,
            })
            .unwrap();
        cluster
            .try_dispatch(&Dispatch::Tmov {
                src_cu: 0,
                src_addr: 64,
                dst_cu: 1,
                dst_addr: 0,
                len: 64,
            })
            .unwrap();
        let mut kinds = Vec::new();
        let mut cycle = 0;
        while !cluster.quiescent() {
            for out in cluster.tick(cycle, &cfg).unwrap() {
                kinds.push('s');
                let _ = out;
            }
            cycle += 1;
            assert!(cycle < 1000);
        }
        // The store surfaces once fully collected; the alternation means
        // it takes about twice its solo line count to finish.
        assert_eq!(kinds, vec!['s']);
        assert!(cycle >= 8);
    }

    #[test]
    fn pending_load_gates_dispatch_and_defers_fills() {
        let cfg = quick_cfg();
        let mut cluster = ComputeCluster::new(&cfg);
        cluster.note_load(0xf, 0, 0, 64);
        // Dispatch of a reader is gated while the load is pending.
        let ok = cluster
            .try_dispatch(&Dispatch::Mac {
                maps_addr: 0,
                wslot: 1,
                bias_slot: 0,
                len: 16,
                coop: true,
                emit: false,
                wait_max: false,
                wait_tmov: false,
            })
            .unwrap();
        assert!(!ok);
        // A fill arriving while an earlier-dispatched instruction still
        // reads the region defers until that reader drains.
        let mut cluster = ComputeCluster::new(&cfg);
        let ok = cluster
            .try_dispatch(&Dispatch::Store {
                cu: 0,
                src_addr: 0,
                len: 64,
                dram_addr: 0,
            })
            .unwrap();
        assert!(ok);
        cluster.note_load(0x1, 0, 0, 64);
        let applied = cluster.apply_fill(0x1, 0, 0, &vec![5i16; 64]).unwrap();
        assert!(!applied, "fill must wait for the in-flight store");
        let mut cycle = 0;
        while !cluster.quiescent() {
            cluster.tick(cycle, &cfg).unwrap();
            cycle += 1;
            assert!(cycle < 1000);
        }
        assert!(cluster.apply_fill(0x1, 0, 0, &vec![5i16; 64]).unwrap());
        assert_eq!(cluster.cus[0].maps[0], 5);
    }
}
