//! Five-stage scalar pipeline: fetch, decode, dispatch, ALU, commit.
//!
//! There is no forwarding: an instruction whose source register has an
//! in-flight writer stalls in decode until that writer commits, exactly
//! the "stall fetch until the dependent instruction commits" behavior.
//! Scalar instructions commit in program order; vector instructions leave
//! the pipeline at dispatch and execute on the compute core, out of order
//! with respect to scalars but in order per trace decoder.
//!
//! Branches resolve in the ALU stage and are followed by exactly four
//! delay slots: the four instructions after a branch always execute, then
//! the PC moves to the target if the branch was taken. A branch inside a
//! delay slot is rejected.
//!
//! The 4 KB instruction cache holds two 512-instruction halves; fetch
//! stalls while the half containing the PC is being filled, and the other
//! half is prefetched when the PC enters the last quarter of the resident
//! half.

use crate::compute::{ComputeCluster, Dispatch, SetWb, WbTarget};
use crate::error::{Error, Result};
use crate::isa::{decode, BufferTarget, Instruction, Opcode, CU_BROADCAST};
use crate::memsys::MemSys;

const ICACHE_HALF: usize = 512;

#[derive(Debug, Clone, Copy)]
struct Slot {
    i: Instruction,
    pc: usize,
    /// Operand values latched at dispatch.
    src1: i32,
    src2: i32,
    /// Register writeback computed by the ALU.
    result: Option<(u8, i32)>,
}

#[derive(Debug, Clone, Copy)]
struct DelayState {
    slots_left: u8,
    resolved: Option<Option<usize>>, // None = unresolved; Some(target?) after ALU
}

/// One line of the pipeline trace log: PC occupying each stage, if any.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub cycle: u64,
    pub fetch: Option<usize>,
    pub decode: Option<usize>,
    pub dispatch: Option<usize>,
    pub alu: Option<usize>,
    pub commit: Option<usize>,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ControlStats {
    pub commits: u64,
    pub raw_stalls: u64,
    pub dispatch_stalls: u64,
    pub icache_stalls: u64,
}

#[derive(Debug)]
pub struct ControlCore {
    program: Vec<Instruction>,
    pub pc: usize,
    pub regs: [i32; 32],
    d: Option<Slot>,
    x: Option<Slot>,
    a: Option<Slot>,
    c: Option<Slot>,
    busy: u32,
    delay: Option<DelayState>,
    fetch_done: bool,
    pub halted: bool,
    resident: [Option<usize>; 2],
    fill_pending: Option<(usize, usize)>,
    prefetched: Option<usize>,
    pub stats: ControlStats,
    pub trace_log: Option<Vec<TraceRow>>,
}

impl ControlCore {
    pub fn new(words: &[u32]) -> Result<ControlCore> {
        let program = words.iter().map(|&w| decode(w)).collect::<Result<Vec<_>>>()?;
        if program.is_empty() {
            return Err(Error::Sim("empty program".into()));
        }
        Ok(ControlCore {
            program,
            pc: 0,
            regs: [0; 32],
            d: None,
            x: None,
            a: None,
            c: None,
            busy: 0,
            delay: None,
            fetch_done: false,
            halted: false,
            resident: [None, None],
            fill_pending: None,
            prefetched: None,
            stats: ControlStats::default(),
            trace_log: None,
        })
    }

    pub fn icache_filled(&mut self, half: usize) {
        let bank = half % 2;
        self.resident[bank] = Some(half);
        if self.fill_pending == Some((half, bank)) {
            self.fill_pending = None;
        }
    }

    fn reads(i: &Instruction) -> u32 {
        let mut m = 0u32;
        let r1 = 1u32 << i.rs1;
        let r2 = 1u32 << i.rs2;
        match i.opcode {
            Opcode::Mov => {
                if i.mode == 1 {
                    m |= r1;
                }
            }
            Opcode::Add | Opcode::Mul => {
                m |= r1;
                if i.mode == 1 {
                    m |= r2;
                }
            }
            Opcode::Bgt | Opcode::Ble | Opcode::Beq => m |= r1 | r2,
            Opcode::Mac | Opcode::Max | Opcode::Load | Opcode::Store | Opcode::Setwb | Opcode::Tmov => {
                m |= r1 | r2
            }
            Opcode::Vmov => m |= r1,
            Opcode::Halt => {}
        }
        m
    }

    fn writes(i: &Instruction) -> Option<u8> {
        match i.opcode {
            Opcode::Mov | Opcode::Add | Opcode::Mul => Some(i.rd),
            _ => None,
        }
    }

    /// Dispatch a vector instruction to the compute core or memory
    /// system; Ok(false) means the stage must hold and retry.
    fn dispatch_vector(
        &self,
        s: &Slot,
        cycle: u64,
        cluster: &mut ComputeCluster,
        mem: &mut MemSys,
    ) -> Result<bool> {
        let i = &s.i;
        match i.opcode {
            Opcode::Mac => {
                let pack = s.src2 as u32;
                cluster.try_dispatch(&Dispatch::Mac {
                    maps_addr: s.src1 as u32 & 0x7f_ffff,
                    wslot: (pack & 0x1ff) as u16,
                    bias_slot: ((pack >> 12) & 0x1ff) as u16,
                    len: i.imm as u32,
                    coop: i.mode == 1,
                    emit: pack & (1 << 9) != 0,
                    wait_max: pack & (1 << 10) != 0,
                    wait_tmov: pack & (1 << 11) != 0,
                })
            }
            Opcode::Max => {
                let spack = s.src2 as u32;
                cluster.try_dispatch(&Dispatch::Window {
                    addr: s.src1 as u32 & 0x7f_ffff,
                    chunk_stride: spack & 0xfff,
                    row_stride: (spack >> 12) & 0xffff,
                    p: (i.imm & 0xf) as u8,
                    avg: i.imm & (1 << 6) != 0,
                    wait_mac: i.imm & (1 << 4) != 0,
                    wait_tmov: i.imm & (1 << 5) != 0,
                })
            }
            Opcode::Vmov => cluster.try_dispatch(&Dispatch::Vmov {
                addr: s.src1 as u32 & 0x7f_ffff,
            }),
            Opcode::Setwb => {
                let target = match i.imm & 3 {
                    0 => WbTarget::Mac,
                    1 => WbTarget::Max,
                    _ => WbTarget::Bypass,
                };
                cluster.try_dispatch(&Dispatch::SetWb(SetWb {
                    target,
                    base: s.src1 as u32,
                    offset: s.src2 as u32,
                    relu: i.imm & (1 << 2) != 0,
                    bypass_en: i.imm & (1 << 3) != 0,
                    active: ((i.imm >> 4) & 0x7f) as u16,
                }))
            }
            Opcode::Load => {
                let tgt = BufferTarget::unpack(s.src2 as u32);
                let mask = if tgt.cu == CU_BROADCAST {
                    0xf
                } else {
                    1u8 << tgt.cu
                };
                let len = i.imm as usize;
                mem.issue_load(
                    cycle,
                    s.src1 as u32 as usize,
                    len,
                    mask,
                    tgt.buffer_id,
                    tgt.addr,
                )?;
                cluster.note_load(mask, tgt.buffer_id, tgt.addr, len as u32);
                Ok(true)
            }
            Opcode::Store => {
                let tgt = BufferTarget::unpack(s.src2 as u32);
                cluster.try_dispatch(&Dispatch::Store {
                    cu: tgt.cu,
                    src_addr: tgt.addr,
                    len: i.imm as u32,
                    dram_addr: s.src1 as u32 as usize,
                })
            }
            Opcode::Tmov => {
                let dst = BufferTarget::unpack(s.src2 as u32);
                cluster.try_dispatch(&Dispatch::Tmov {
                    src_cu: i.rd,
                    src_addr: s.src1 as u32 & 0x7f_ffff,
                    dst_cu: dst.cu,
                    dst_addr: dst.addr,
                    len: i.imm as u32,
                })
            }
            _ => unreachable!(),
        }
    }

    pub fn tick(&mut self, cycle: u64, cluster: &mut ComputeCluster, mem: &mut MemSys) -> Result<()> {
        // Commit.
        if let Some(s) = self.c.take() {
            if let Some((rd, v)) = s.result {
                self.regs[rd as usize] = v;
            }
            if let Some(rd) = Self::writes(&s.i) {
                self.busy &= !(1u32 << rd);
            }
            if s.i.opcode == Opcode::Halt {
                self.halted = true;
            }
            self.stats.commits += 1;
        }

        // ALU -> commit: arithmetic and branch resolution.
        if self.c.is_none() {
            if let Some(mut s) = self.a.take() {
                let i = &s.i;
                s.result = match i.opcode {
                    Opcode::Mov => {
                        if i.mode == 0 {
                            Some((i.rd, i.imm))
                        } else {
                            Some((i.rd, s.src1.wrapping_shl(i.shift as u32)))
                        }
                    }
                    Opcode::Add => {
                        let b = if i.mode == 0 { i.imm } else { s.src2 };
                        Some((i.rd, s.src1.wrapping_add(b)))
                    }
                    Opcode::Mul => {
                        let b = if i.mode == 0 { i.imm } else { s.src2 };
                        Some((i.rd, s.src1.wrapping_mul(b)))
                    }
                    Opcode::Bgt | Opcode::Ble | Opcode::Beq => {
                        let taken = match i.opcode {
                            Opcode::Bgt => s.src1 > s.src2,
                            Opcode::Ble => s.src1 <= s.src2,
                            _ => s.src1 == s.src2,
                        };
                        let target = (s.pc as i64 + i.imm as i64) as usize;
                        match &mut self.delay {
                            Some(ds) if ds.resolved.is_none() => {
                                ds.resolved = Some(if taken { Some(target) } else { None });
                            }
                            _ => {
                                return Err(Error::Sim(format!(
                                    "branch at pc {} has no delay tracker",
                                    s.pc
                                )))
                            }
                        }
                        None
                    }
                    _ => None,
                };
                self.c = Some(s);
            }
        }

        // Dispatch -> ALU.
        if self.a.is_none() {
            if let Some(s) = self.x.take() {
                if s.i.opcode.is_vector() {
                    if self.dispatch_vector(&s, cycle, cluster, mem)? {
                        // Vector instructions leave the scalar pipeline
                        // here; account the commit when dispatched.
                        self.a = Some(Slot {
                            result: None,
                            ..s
                        });
                    } else {
                        self.stats.dispatch_stalls += 1;
                        self.x = Some(s);
                    }
                } else {
                    self.a = Some(s);
                }
            }
        }

        // Decode -> dispatch, stalling on true data dependencies.
        if self.x.is_none() {
            if let Some(s) = self.d.take() {
                if Self::reads(&s.i) & self.busy != 0 {
                    self.stats.raw_stalls += 1;
                    self.d = Some(s);
                } else {
                    let mut s = s;
                    s.src1 = self.regs[s.i.rs1 as usize];
                    s.src2 = self.regs[s.i.rs2 as usize];
                    if let Some(rd) = Self::writes(&s.i) {
                        self.busy |= 1u32 << rd;
                    }
                    self.x = Some(s);
                }
            }
        }

        // Fetch.
        let mut fetched = None;
        if self.d.is_none() && !self.fetch_done {
            // Delay-slot bookkeeping happens on actual fetches.
            if let Some(ds) = self.delay {
                if ds.slots_left == 0 {
                    match ds.resolved {
                        Some(Some(target)) => {
                            self.pc = target;
                            self.delay = None;
                        }
                        Some(None) => {
                            self.delay = None;
                        }
                        None => {
                            return Err(Error::Sim("branch unresolved after delay slots".into()))
                        }
                    }
                }
            }
            if self.pc >= self.program.len() {
                return Err(Error::Sim(format!(
                    "pc {} runs past the {}-instruction program",
                    self.pc,
                    self.program.len()
                )));
            }
            let half = self.pc / ICACHE_HALF;
            let bank = half % 2;
            if self.resident[bank] != Some(half) {
                if self.fill_pending.is_none() {
                    mem.issue_icache_fill(cycle, half);
                    self.fill_pending = Some((half, bank));
                }
                self.stats.icache_stalls += 1;
            } else {
                let i = self.program[self.pc];
                if i.opcode.is_branch() {
                    if self.delay.is_some() {
                        return Err(Error::Sim(format!(
                            "branch in a delay slot at pc {}",
                            self.pc
                        )));
                    }
                    self.delay = Some(DelayState {
                        slots_left: 4,
                        resolved: None,
                    });
                } else if let Some(ds) = &mut self.delay {
                    ds.slots_left -= 1;
                }
                self.d = Some(Slot {
                    i,
                    pc: self.pc,
                    src1: 0,
                    src2: 0,
                    result: None,
                });
                fetched = Some(self.pc);
                if i.opcode == Opcode::Halt {
                    self.fetch_done = true;
                }
                self.pc += 1;
                // Prefetch the other half once this one is half spent,
                // covering the refill time of straight-line code.
                let next_half = half + 1;
                if self.pc % ICACHE_HALF >= ICACHE_HALF / 4
                    && next_half * ICACHE_HALF < self.program.len()
                    && self.resident[next_half % 2] != Some(next_half)
                    && self.fill_pending.is_none()
                    && self.prefetched != Some(next_half)
                {
                    mem.issue_icache_fill(cycle, next_half);
                    self.fill_pending = Some((next_half, next_half % 2));
                    self.prefetched = Some(next_half);
                }
            }
        }

        if let Some(log) = &mut self.trace_log {
            log.push(TraceRow {
                cycle,
                fetch: fetched,
                decode: self.d.map(|s| s.pc),
                dispatch: self.x.map(|s| s.pc),
                alu: self.a.map(|s| s.pc),
                commit: self.c.map(|s| s.pc),
            });
        }
        Ok(())
    }

    /// Pipeline fully drained after a HALT.
    pub fn drained(&self) -> bool {
        self.halted && self.d.is_none() && self.x.is_none() && self.a.is_none() && self.c.is_none()
    }
}
