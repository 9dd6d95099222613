//! Cycle-stepped model of one compute cluster: four compute units, each
//! with a banked maps buffer, four vMACs of 16 MACs with per-MAC weights
//! buffers, gather adders, one vMAX unit and three trace decoders.
//!
//! Vector compute instructions (MAC, MAX, VMOV, SETWB) broadcast to all
//! four CUs, which run them against their local buffer contents; loads,
//! stores and CU moves name their CU explicitly. Each decoder owns a FIFO
//! of dispatched instructions and executes them in dispatch order; cross-
//! decoder ordering is enforced by completion watermarks stamped at
//! dispatch (a pooling window can wait for the MACs that produced its
//! input, a store waits for every earlier MAC and MAX write, and so on).
//!
//! Timing rules modeled here:
//! * COOP consumes one full 16-word line per cycle; back-to-back traces
//!   stream with no gap.
//! * INDP consumes one broadcast word per cycle after a fixed restart
//!   (`indp_setup`) plus one dead cycle per word of misalignment at the
//!   trace start (the shift register aligning the first word).
//! * The gather adder needs 16 cycles per emitted result; an accumulation
//!   finishing earlier stalls, so the output cadence per vMAC is
//!   `max(16, trace_words/16)` in COOP mode.
//! * A vMAX window of P x P costs 4 cycles per 16-word chunk, 4*P*P total.
//! * The maps buffer grants the MAC decoder any lane; MAX and the trace-
//!   move decoder are granted only lanes that differ from MAC's and from
//!   each other's, MAX winning ties. The fourth port serves third-operand
//!   (residual) reads when its lane is free.
//! * One writeback write per CU per cycle, priority vMAC > vMAX > CU-move
//!   arrivals; DRAM fills are pre-staged through the wide write port and
//!   do not contend.
//!
//! Reading a buffer region with a load still pending to it is a hard
//! error, never silent corruption.

use crate::error::{Error, Result};
use crate::fixpoint::AccMode;
use crate::machine::{
    MachineConfig, CU_COUNT, LINE_WORDS, MACS_PER_VMAC, MAPS_REGION_WORDS, VMACS_PER_CU,
    WEIGHT_SLOTS,
};
use std::collections::VecDeque;

/// Pending-load gate granularity: 8 maps regions + 8 weight halves.
pub const PENDING_IDS: usize = 16;

/// Completion counts another instruction may wait on, captured at dispatch.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyncStamp {
    pub mac: u64,
    pub max: u64,
    pub tmov_in: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct MacTrace {
    pub maps_addr: u32,
    pub wslot: u16,
    /// Weight slot of the accumulation's bias operand, captured from the
    /// first trace of each accumulation.
    pub bias_slot: u16,
    pub len: u32,
    pub coop: bool,
    pub emit: bool,
    pub sync: SyncStamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WbTarget {
    Mac,
    Max,
    Bypass,
}

#[derive(Debug, Clone, Copy)]
pub struct SetWb {
    pub target: WbTarget,
    pub base: u32,
    pub offset: u32,
    pub relu: bool,
    pub bypass_en: bool,
    /// INDP active output words per emit; 0 means all 64.
    pub active: u16,
}

#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub addr: u32,
    pub chunk_stride: u32,
    pub row_stride: u32,
    pub p: u8,
    /// Average-pool flavor: runs on the vMACs with the tap weight at
    /// slot 0, accumulating per lane.
    pub avg: bool,
    pub sync: SyncStamp,
}

#[derive(Debug, Clone, Copy)]
pub struct CuMove {
    pub src_addr: u32,
    pub dst_cu: u8,
    pub dst_addr: u32,
    pub len: u32,
    pub sync: SyncStamp,
}

#[derive(Debug, Clone, Copy)]
pub struct StoreMem {
    pub src_addr: u32,
    pub len: u32,
    pub dram_addr: usize,
    pub sync: SyncStamp,
}

/// One dispatched vector instruction with resolved operands.
#[derive(Debug, Clone, Copy)]
pub enum VectorOp {
    Mac(MacTrace),
    SetWb(SetWb),
    Vmov { addr: u32 },
    Window(Window),
    CuMove(CuMove),
    Store(StoreMem),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SeqCounters {
    pub mac_dispatched: u64,
    pub mac_completed: u64,
    pub max_dispatched: u64,
    pub max_completed: u64,
    pub tmov_in_dispatched: u64,
    pub tmov_in_completed: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CuStats {
    /// Cycles where at least one vMAC consumed operands.
    pub busy_cycles: u64,
    /// Useful MAC operations executed.
    pub macs_executed: u64,
    /// Dead cycles spent aligning INDP trace starts.
    pub indp_align_stalls: u64,
    /// Cycles an emit-ready accumulation waited for the gather adder.
    pub gather_stalls: u64,
}

#[derive(Debug, Clone, Copy)]
struct WbRegs {
    base: u32,
    offset: u32,
}

impl Default for WbRegs {
    fn default() -> Self {
        WbRegs { base: 0, offset: 0 }
    }
}

#[derive(Debug)]
struct Vmac {
    acc: [i32; MACS_PER_VMAC],
    gather_free_at: u64,
}

impl Default for Vmac {
    fn default() -> Self {
        Vmac {
            acc: [0; MACS_PER_VMAC],
            gather_free_at: 0,
        }
    }
}

/// A completed accumulation draining through the gather adder, then
/// writing through the 1024-bit port (with an optional third-operand read
/// beforehand).
#[derive(Debug)]
struct WbEvent {
    ready_at: u64,
    addr: u32,
    words: Vec<i16>,
    relu: bool,
    bypass_addr: Option<u32>,
    bypass: Vec<i16>,
    /// Lines still to read through the fourth port for the bypass operand.
    bypass_lines_left: u32,
    counts_mac: bool,
    counts_max: bool,
}

#[derive(Debug)]
enum MacPhase {
    Stream,
    AwaitGather,
}

#[derive(Debug)]
struct MacJob {
    t: MacTrace,
    phase: MacPhase,
    // COOP: remaining lines; INDP: remaining words.
    left: u32,
    addr: u32,
    wslot: u32,
    setup_left: u64,
    align_left: u32,
}

#[derive(Debug)]
struct AvgJob {
    w: Window,
    chunks_done: u32,
    phase: MacPhase,
}

#[derive(Debug)]
struct MaxJob {
    w: Window,
    chunks_done: u32,
    next_chunk_at: u64,
    running: [i16; LINE_WORDS],
    /// Final comparator pass in flight; the unit is busy until then.
    done_at: Option<u64>,
}

#[derive(Debug)]
struct StoreJob {
    s: StoreMem,
    collected: Vec<i16>,
}

#[derive(Debug)]
struct MoveJob {
    m: CuMove,
    sent: u32,
}

/// A line leaving a CU this cycle, bound for another CU's write port or
/// for memory.
#[derive(Debug)]
pub enum Outbound {
    MoveLine {
        src_cu: usize,
        dst_cu: usize,
        dst_addr: u32,
        words: [i16; LINE_WORDS],
        last: bool,
    },
    Store {
        dram_addr: usize,
        data: Vec<i16>,
    },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LaneGrants {
    pub mac: Option<u32>,
    pub max: Option<u32>,
    pub tmov: Option<u32>,
}

/// Pending-load gate IDs a MAC trace reads: its maps regions plus the
/// weight halves its slots (and the bias slot before them) touch.
fn mac_gate_ids(maps_addr: u32, len: u32, wslot: u16, coop: bool) -> Vec<usize> {
    let mut ids = span_gate_ids(maps_addr, len);
    let slots = if coop { len / LINE_WORDS as u32 } else { len };
    let half = (WEIGHT_SLOTS / 2) as u32;
    let lo = ((wslot as u32).saturating_sub(1) / half) as usize;
    let hi = (((wslot as u32 + slots - 1) / half) as usize).min(1);
    for v in 0..VMACS_PER_CU {
        for h in lo..=hi {
            ids.push(8 + v * 2 + h);
        }
    }
    ids
}

fn window_gate_ids(w_addr: u32, chunk: u32, row: u32, p: u8, avg: bool) -> Vec<usize> {
    let mut ids = Vec::new();
    for dy in 0..p as u32 {
        for dx in 0..p as u32 {
            let a = w_addr + dy * row + dx * chunk;
            let r = (a as usize / MAPS_REGION_WORDS).min(7);
            if !ids.contains(&r) {
                ids.push(r);
            }
        }
    }
    if avg {
        // The tap weight sits in vMAC 0's lower half.
        ids.push(8);
    }
    ids
}

fn span_gate_ids(addr: u32, len: u32) -> Vec<usize> {
    let lo = addr as usize / MAPS_REGION_WORDS;
    let hi = (addr + len.max(1) - 1) as usize / MAPS_REGION_WORDS;
    (lo..=hi.min(7)).collect()
}

/// Lane arbitration: MAC is always granted; MAX and TMOV only when they
/// do not collide with MAC or each other, MAX winning the tie.
pub fn arbitrate(mac: Option<u32>, max: Option<u32>, tmov: Option<u32>) -> LaneGrants {
    let mac_lane = mac.map(|a| a & 3);
    let max_lane = max.map(|a| a & 3);
    let tmov_lane = tmov.map(|a| a & 3);
    let max_ok = match (max_lane, mac_lane) {
        (Some(m), Some(c)) => m != c,
        (Some(_), None) => true,
        (None, _) => false,
    };
    let tmov_ok = match tmov_lane {
        Some(t) => {
            Some(t) != mac_lane && !(max_ok && Some(t) == max_lane)
        }
        None => false,
    };
    LaneGrants {
        mac: mac_lane,
        max: if max_ok { max_lane } else { None },
        tmov: if tmov_ok { tmov_lane } else { None },
    }
}

#[derive(Debug)]
pub struct Cu {
    pub index: usize,
    pub maps: Vec<i16>,
    pub weights: Vec<i16>,
    pub pending: [u32; PENDING_IDS],
    /// In-flight readers per gate region: a fill may not land on a region
    /// an already-dispatched trace still reads.
    pub readers: [u32; PENDING_IDS],
    pub seq: SeqCounters,
    pub stats: CuStats,
    mac_wb: WbRegs,
    max_wb: WbRegs,
    bypass_wb: WbRegs,
    relu: bool,
    bypass_en: bool,
    active: u16,
    mac_q: VecDeque<VectorOp>,
    max_q: VecDeque<VectorOp>,
    tmov_q: VecDeque<VectorOp>,
    mac_cur: Option<MacJob>,
    avg_cur: Option<AvgJob>,
    max_cur: Option<MaxJob>,
    max_out: Option<(u32, [i16; LINE_WORDS])>,
    store_cur: Option<StoreJob>,
    move_cur: Option<MoveJob>,
    move_outstanding: bool,
    tmov_alt: bool,
    /// Bias slot of the running accumulation, from its first trace.
    acc_bias_slot: Option<u32>,
    wb_events: VecDeque<WbEvent>,
    vmacs: [Vmac; VMACS_PER_CU],
    pub vmov_latch: [i16; LINE_WORDS],
    maps_words: usize,
}

impl Cu {
    fn new(index: usize, cfg: &MachineConfig) -> Cu {
        Cu {
            index,
            maps: vec![0; cfg.maps_words],
            weights: vec![0; VMACS_PER_CU * MACS_PER_VMAC * WEIGHT_SLOTS],
            pending: [0; PENDING_IDS],
            readers: [0; PENDING_IDS],
            seq: SeqCounters::default(),
            stats: CuStats::default(),
            mac_wb: WbRegs::default(),
            max_wb: WbRegs::default(),
            bypass_wb: WbRegs::default(),
            relu: false,
            bypass_en: false,
            active: 0,
            mac_q: VecDeque::new(),
            max_q: VecDeque::new(),
            tmov_q: VecDeque::new(),
            mac_cur: None,
            avg_cur: None,
            max_cur: None,
            max_out: None,
            store_cur: None,
            move_cur: None,
            move_outstanding: false,
            tmov_alt: false,
            acc_bias_slot: None,
            wb_events: VecDeque::new(),
            vmacs: Default::default(),
            vmov_latch: [0; LINE_WORDS],
            maps_words: cfg.maps_words,
        }
    }

    fn weight(&self, vmac: usize, mac: usize, slot: u32) -> i16 {
        self.weights[(vmac * MACS_PER_VMAC + mac) * WEIGHT_SLOTS + slot as usize]
    }

    fn region_of(&self, addr: u32) -> usize {
        (addr as usize / MAPS_REGION_WORDS).min(7)
    }

    /// Reads are safe by construction: dispatch stalls while a source
    /// region has a pending load, and a fill defers while instructions
    /// dispatched earlier still read its region. Bounds remain checked.
    fn check_readable(&self, addr: u32, len: u32) -> Result<()> {
        if addr as usize + len as usize > self.maps_words {
            return Err(Error::Sim(format!(
                "cu{} maps read [{addr}, {}) out of bounds",
                self.index,
                addr + len
            )));
        }
        Ok(())
    }

    fn read_line(&self, line_addr: u32) -> Result<[i16; LINE_WORDS]> {
        let base = line_addr as usize * LINE_WORDS;
        self.check_readable((base) as u32, LINE_WORDS as u32)?;
        let mut out = [0i16; LINE_WORDS];
        out.copy_from_slice(&self.maps[base..base + LINE_WORDS]);
        Ok(out)
    }

    /// 16 words at an arbitrary word-aligned-to-16 address (pool chunk).
    fn read_chunk(&self, addr: u32) -> Result<[i16; LINE_WORDS]> {
        self.check_readable(addr, LINE_WORDS as u32)?;
        let mut out = [0i16; LINE_WORDS];
        out.copy_from_slice(&self.maps[addr as usize..addr as usize + LINE_WORDS]);
        Ok(out)
    }

    fn sync_ok(&self, s: &SyncStamp) -> bool {
        self.seq.mac_completed >= s.mac
            && self.seq.max_completed >= s.max
            && self.seq.tmov_in_completed >= s.tmov_in
    }

    fn dec_readers(&mut self, ids: &[usize]) {
        for &id in ids {
            debug_assert!(self.readers[id] > 0);
            self.readers[id] -= 1;
        }
    }

    fn apply_setwb(&mut self, s: &SetWb) {
        let regs = WbRegs {
            base: s.base,
            offset: s.offset,
        };
        match s.target {
            WbTarget::Mac => {
                self.mac_wb = regs;
                self.relu = s.relu;
                self.bypass_en = s.bypass_en;
                self.active = s.active;
            }
            WbTarget::Max => self.max_wb = regs,
            WbTarget::Bypass => self.bypass_wb = regs,
        }
    }

    /// Latch a finished accumulation into the gather adders.
    fn latch(&mut self, cycle: u64, frac_bits: u32, acc_mode: AccMode, coop: bool) {
        let bias_slot = self.acc_bias_slot.unwrap_or(0);
        let mut words = Vec::new();
        if coop {
            // Each vMAC reduces its 16 partials and adds one bias operand.
            for v in 0..VMACS_PER_CU {
                let mut total: i32 = 0;
                for j in 0..MACS_PER_VMAC {
                    total = match acc_mode {
                        AccMode::Wrap => total.wrapping_add(self.vmacs[v].acc[j]),
                        AccMode::Saturate => total.saturating_add(self.vmacs[v].acc[j]),
                    };
                }
                let bias = (self.weight(v, 0, bias_slot) as i32) << frac_bits;
                let total = match acc_mode {
                    AccMode::Wrap => total.wrapping_add(bias),
                    AccMode::Saturate => total.saturating_add(bias),
                };
                words.push((total >> frac_bits) as i16);
            }
        } else {
            // INDP: every MAC holds an independent output; all weights
            // buffers provide the bias operand.
            let active = if self.active == 0 {
                (VMACS_PER_CU * MACS_PER_VMAC) as u16
            } else {
                self.active
            };
            'outer: for v in 0..VMACS_PER_CU {
                for j in 0..MACS_PER_VMAC {
                    if words.len() == active as usize {
                        break 'outer;
                    }
                    let bias = (self.weight(v, j, bias_slot) as i32) << frac_bits;
                    let total = match acc_mode {
                        AccMode::Wrap => self.vmacs[v].acc[j].wrapping_add(bias),
                        AccMode::Saturate => self.vmacs[v].acc[j].saturating_add(bias),
                    };
                    words.push((total >> frac_bits) as i16);
                }
            }
        }
        for v in 0..VMACS_PER_CU {
            self.vmacs[v].acc = [0; MACS_PER_VMAC];
            self.vmacs[v].gather_free_at = cycle + MACS_PER_VMAC as u64;
        }
        let addr = self.mac_wb.base;
        self.mac_wb.base = self.mac_wb.base.wrapping_add(self.mac_wb.offset);
        let bypass_addr = if self.bypass_en {
            let a = self.bypass_wb.base;
            self.bypass_wb.base = self.bypass_wb.base.wrapping_add(self.bypass_wb.offset);
            Some(a)
        } else {
            None
        };
        let lines = if bypass_addr.is_some() {
            // Third-operand words for this output group, in whole lines.
            let a = bypass_addr.unwrap();
            let first = a / LINE_WORDS as u32;
            let last = (a + words.len() as u32 - 1) / LINE_WORDS as u32;
            last - first + 1
        } else {
            0
        };
        self.wb_events.push_back(WbEvent {
            ready_at: cycle + MACS_PER_VMAC as u64,
            addr,
            words,
            relu: self.relu,
            bypass_addr,
            bypass: Vec::new(),
            bypass_lines_left: lines,
            counts_mac: true,
            counts_max: false,
        });
        self.acc_bias_slot = None;
    }

    fn gathers_free(&self, cycle: u64) -> bool {
        self.vmacs.iter().all(|v| v.gather_free_at <= cycle)
    }

    /// The lane the MAC decoder will request this cycle, if any.
    fn mac_request(&mut self, cycle: u64, cfg: &MachineConfig) -> Option<u32> {
        // Pop queue entries that execute instantly (SETWB) or need no new
        // line this cycle.
        loop {
            if self.mac_cur.is_some() || self.avg_cur.is_some() {
                break;
            }
            match self.mac_q.front() {
                Some(VectorOp::SetWb(_)) => {
                    if let Some(VectorOp::SetWb(s)) = self.mac_q.pop_front() {
                        self.apply_setwb(&s);
                    }
                    // One register write per cycle.
                    return None;
                }
                Some(VectorOp::Mac(t)) => {
                    if !self.sync_ok(&t.sync) {
                        return None;
                    }
                    let t = *t;
                    self.mac_q.pop_front();
                    if self.acc_bias_slot.is_none() {
                        self.acc_bias_slot = Some(t.bias_slot as u32);
                    }
                    let (left, setup, align) = if t.coop {
                        (t.len / LINE_WORDS as u32, 0, 0)
                    } else {
                        (t.len, cfg.indp_setup, t.maps_addr % LINE_WORDS as u32)
                    };
                    self.mac_cur = Some(MacJob {
                        t,
                        phase: MacPhase::Stream,
                        left,
                        addr: t.maps_addr,
                        wslot: t.wslot as u32,
                        setup_left: setup,
                        align_left: align,
                    });
                    break;
                }
                Some(VectorOp::Window(w)) if w.avg => {
                    if !self.sync_ok(&w.sync) {
                        return None;
                    }
                    let w = *w;
                    self.mac_q.pop_front();
                    self.avg_cur = Some(AvgJob {
                        w,
                        chunks_done: 0,
                        phase: MacPhase::Stream,
                    });
                    break;
                }
                Some(VectorOp::Vmov { .. }) => {
                    break;
                }
                Some(_) => unreachable!("non-MAC op in MAC queue"),
                None => return None,
            }
        }
        if let Some(job) = &self.mac_cur {
            if matches!(job.phase, MacPhase::AwaitGather) {
                return None;
            }
            if job.t.coop {
                return Some(job.addr / LINE_WORDS as u32);
            }
            if job.setup_left == 0 && job.align_left == 0 {
                return Some(job.addr / LINE_WORDS as u32);
            }
            return None;
        }
        if let Some(job) = &self.avg_cur {
            if matches!(job.phase, MacPhase::AwaitGather) {
                return None;
            }
            let w = &job.w;
            let dy = job.chunks_done / w.p as u32;
            let dx = job.chunks_done % w.p as u32;
            return Some((w.addr + dy * w.row_stride + dx * w.chunk_stride) / LINE_WORDS as u32);
        }
        if let Some(VectorOp::Vmov { addr }) = self.mac_q.front() {
            let _ = cycle;
            return Some(*addr / LINE_WORDS as u32);
        }
        None
    }

    /// Advance the MAC pipeline one cycle. `granted` is always true for
    /// MAC requests; it is passed for symmetry.
    fn mac_advance(
        &mut self,
        cycle: u64,
        cfg: &MachineConfig,
        requested: bool,
        active_per_vmac: &mut [u16; VMACS_PER_CU],
    ) -> Result<()> {
        if let Some(mut job) = self.mac_cur.take() {
            match job.phase {
                MacPhase::AwaitGather => {
                    if self.gathers_free(cycle) {
                        self.latch(cycle, cfg.frac_bits, cfg.acc_mode, job.t.coop);
                        // Completion is counted when the write lands.
                    } else {
                        self.stats.gather_stalls += 1;
                        self.mac_cur = Some(job);
                    }
                    return Ok(());
                }
                MacPhase::Stream => {}
            }
            if !job.t.coop {
                if job.setup_left > 0 {
                    job.setup_left -= 1;
                    self.mac_cur = Some(job);
                    return Ok(());
                }
                if job.align_left > 0 {
                    job.align_left -= 1;
                    self.stats.indp_align_stalls += 1;
                    self.mac_cur = Some(job);
                    return Ok(());
                }
            }
            debug_assert!(requested);
            if job.t.coop {
                if job.wslot as usize >= WEIGHT_SLOTS {
                    return Err(Error::Sim(format!(
                        "cu{} COOP weight slot {} overflow",
                        self.index, job.wslot
                    )));
                }
                let line = self.read_line(job.addr / LINE_WORDS as u32)?;
                for v in 0..VMACS_PER_CU {
                    for j in 0..MACS_PER_VMAC {
                        let p = line[j] as i32 * self.weight(v, j, job.wslot) as i32;
                        self.vmacs[v].acc[j] = match cfg.acc_mode {
                            AccMode::Wrap => self.vmacs[v].acc[j].wrapping_add(p),
                            AccMode::Saturate => self.vmacs[v].acc[j].saturating_add(p),
                        };
                    }
                    active_per_vmac[v] += MACS_PER_VMAC as u16;
                }
                self.stats.macs_executed += (VMACS_PER_CU * MACS_PER_VMAC) as u64;
                job.addr += LINE_WORDS as u32;
                job.wslot += 1;
                job.left -= 1;
            } else {
                if job.wslot as usize >= WEIGHT_SLOTS {
                    return Err(Error::Sim(format!(
                        "cu{} INDP weight slot {} overflow",
                        self.index, job.wslot
                    )));
                }
                self.check_readable(job.addr, 1)?;
                let word = self.maps[job.addr as usize] as i32;
                let active = if self.active == 0 { 64 } else { self.active } as usize;
                for v in 0..VMACS_PER_CU {
                    for j in 0..MACS_PER_VMAC {
                        let p = word * self.weight(v, j, job.wslot) as i32;
                        self.vmacs[v].acc[j] = match cfg.acc_mode {
                            AccMode::Wrap => self.vmacs[v].acc[j].wrapping_add(p),
                            AccMode::Saturate => self.vmacs[v].acc[j].saturating_add(p),
                        };
                    }
                    let lane_base = v * MACS_PER_VMAC;
                    let used = active.saturating_sub(lane_base).min(MACS_PER_VMAC);
                    active_per_vmac[v] += used as u16;
                }
                self.stats.macs_executed += active as u64;
                job.addr += 1;
                job.wslot += 1;
                job.left -= 1;
            }
            if job.left == 0 {
                let ids = mac_gate_ids(job.t.maps_addr, job.t.len, job.t.wslot, job.t.coop);
                self.dec_readers(&ids);
                if job.t.emit {
                    if self.gathers_free(cycle + 1) {
                        // Gather can accept next cycle; latch immediately.
                        self.latch(cycle, cfg.frac_bits, cfg.acc_mode, job.t.coop);
                    } else {
                        job.phase = MacPhase::AwaitGather;
                        self.mac_cur = Some(job);
                    }
                } else {
                    self.seq.mac_completed += 1;
                }
            } else {
                self.mac_cur = Some(job);
            }
            return Ok(());
        }
        if let Some(mut job) = self.avg_cur.take() {
            if matches!(job.phase, MacPhase::AwaitGather) {
                if self.gathers_free(cycle) {
                    self.latch_avg(cycle, cfg, &job);
                } else {
                    self.stats.gather_stalls += 1;
                    self.avg_cur = Some(job);
                }
                return Ok(());
            }
            debug_assert!(requested);
            let w = &job.w;
            let dy = job.chunks_done / w.p as u32;
            let dx = job.chunks_done % w.p as u32;
            let addr = w.addr + dy * w.row_stride + dx * w.chunk_stride;
            let chunk = self.read_chunk(addr)?;
            // The tap weight sits at slot 0 of vMAC 0; 16 lanes accumulate
            // their own channel.
            for j in 0..MACS_PER_VMAC {
                let p = chunk[j] as i32 * self.weight(0, j, 0) as i32;
                self.vmacs[0].acc[j] = match cfg.acc_mode {
                    AccMode::Wrap => self.vmacs[0].acc[j].wrapping_add(p),
                    AccMode::Saturate => self.vmacs[0].acc[j].saturating_add(p),
                };
            }
            active_per_vmac[0] += MACS_PER_VMAC as u16;
            self.stats.macs_executed += MACS_PER_VMAC as u64;
            job.chunks_done += 1;
            if job.chunks_done == (w.p as u32) * (w.p as u32) {
                let ids = window_gate_ids(w.addr, w.chunk_stride, w.row_stride, w.p, true);
                self.dec_readers(&ids);
                if self.vmacs[0].gather_free_at <= cycle + 1 {
                    self.latch_avg(cycle, cfg, &job);
                } else {
                    job.phase = MacPhase::AwaitGather;
                    self.avg_cur = Some(job);
                }
            } else {
                self.avg_cur = Some(job);
            }
            return Ok(());
        }
        // VMOV: move one line into the staging latch.
        if let Some(VectorOp::Vmov { addr }) = self.mac_q.front().copied() {
            debug_assert!(requested);
            let line = self.read_line(addr / LINE_WORDS as u32)?;
            self.vmov_latch = line;
            self.dec_readers(&span_gate_ids(addr, LINE_WORDS as u32));
            self.mac_q.pop_front();
        }
        Ok(())
    }

    fn latch_avg(&mut self, cycle: u64, cfg: &MachineConfig, _job: &AvgJob) {
        let words: Vec<i16> = (0..MACS_PER_VMAC)
            .map(|j| (self.vmacs[0].acc[j] >> cfg.frac_bits) as i16)
            .collect();
        self.vmacs[0].acc = [0; MACS_PER_VMAC];
        self.vmacs[0].gather_free_at = cycle + MACS_PER_VMAC as u64;
        let addr = self.mac_wb.base;
        self.mac_wb.base = self.mac_wb.base.wrapping_add(self.mac_wb.offset);
        self.wb_events.push_back(WbEvent {
            ready_at: cycle + MACS_PER_VMAC as u64,
            addr,
            words,
            relu: false,
            bypass_addr: None,
            bypass: Vec::new(),
            bypass_lines_left: 0,
            counts_mac: true,
            counts_max: false,
        });
        self.avg_cur = None;
    }

    fn max_request(&mut self, cycle: u64) -> Option<u32> {
        // Retire a window whose final comparator pass has finished.
        if let Some(job) = &self.max_cur {
            if let Some(done) = job.done_at {
                if cycle >= done {
                    self.max_cur = None;
                } else {
                    return None;
                }
            }
        }
        if self.max_cur.is_none() && self.max_out.is_none() {
            match self.max_q.front() {
                Some(VectorOp::SetWb(_)) => {
                    if let Some(VectorOp::SetWb(s)) = self.max_q.pop_front() {
                        self.apply_setwb(&s);
                    }
                    return None;
                }
                Some(VectorOp::Window(w)) => {
                    if !self.sync_ok(&w.sync) {
                        return None;
                    }
                    let w = *w;
                    self.max_q.pop_front();
                    self.max_cur = Some(MaxJob {
                        w,
                        chunks_done: 0,
                        next_chunk_at: cycle,
                        running: [i16::MIN; LINE_WORDS],
                        done_at: None,
                    });
                }
                _ => return None,
            }
        }
        if let Some(job) = &self.max_cur {
            if job.done_at.is_none() && cycle >= job.next_chunk_at {
                let w = &job.w;
                let dy = job.chunks_done / w.p as u32;
                let dx = job.chunks_done % w.p as u32;
                return Some((w.addr + dy * w.row_stride + dx * w.chunk_stride) / LINE_WORDS as u32);
            }
        }
        None
    }

    fn max_advance(&mut self, cycle: u64, granted: bool) -> Result<()> {
        if let Some(mut job) = self.max_cur.take() {
            if job.done_at.is_none() && cycle >= job.next_chunk_at {
                if granted {
                    let w = job.w;
                    let dy = job.chunks_done / w.p as u32;
                    let dx = job.chunks_done % w.p as u32;
                    let chunk = self.read_chunk(w.addr + dy * w.row_stride + dx * w.chunk_stride)?;
                    for j in 0..LINE_WORDS {
                        job.running[j] = job.running[j].max(chunk[j]);
                    }
                    job.chunks_done += 1;
                    // Four comparator cycles per 16-word chunk.
                    job.next_chunk_at = cycle + 4;
                    if job.chunks_done == (w.p as u32) * (w.p as u32) {
                        let ids = window_gate_ids(w.addr, w.chunk_stride, w.row_stride, w.p, false);
                        self.dec_readers(&ids);
                        let addr = self.max_wb.base;
                        self.max_wb.base = self.max_wb.base.wrapping_add(self.max_wb.offset);
                        // Output is ready after the final comparator pass.
                        job.done_at = Some(cycle + 4);
                        self.wb_events.push_back(WbEvent {
                            ready_at: cycle + 4,
                            addr,
                            words: job.running.to_vec(),
                            relu: false,
                            bypass_addr: None,
                            bypass: Vec::new(),
                            bypass_lines_left: 0,
                            counts_mac: false,
                            counts_max: true,
                        });
                    }
                } else {
                    // Lane conflict: the schedule slips a cycle.
                    job.next_chunk_at = cycle + 1;
                }
            }
            self.max_cur = Some(job);
        }
        Ok(())
    }

    fn tmov_request(&mut self, _cycle: u64) -> Option<u32> {
        // Refill the two function slots from the queue head.
        while let Some(front) = self.tmov_q.front() {
            match front {
                VectorOp::Store(_) if self.store_cur.is_none() => {
                    if let Some(VectorOp::Store(s)) = self.tmov_q.pop_front() {
                        self.store_cur = Some(StoreJob {
                            s,
                            collected: Vec::with_capacity(s.len as usize),
                        });
                    }
                }
                VectorOp::CuMove(_) if self.move_cur.is_none() => {
                    if let Some(VectorOp::CuMove(m)) = self.tmov_q.pop_front() {
                        self.move_cur = Some(MoveJob { m, sent: 0 });
                    }
                }
                _ => break,
            }
        }
        // Alternate between the memory-move and CU-move functions when
        // both are in flight.
        let store_ready = self
            .store_cur
            .as_ref()
            .map(|j| self.sync_ok(&j.s.sync))
            .unwrap_or(false);
        let move_ready = !self.move_outstanding
            && self
                .move_cur
                .as_ref()
                .map(|j| self.sync_ok(&j.m.sync))
                .unwrap_or(false);
        let pick_store = match (store_ready, move_ready) {
            (true, true) => self.tmov_alt,
            (true, false) => true,
            (false, true) => false,
            (false, false) => return None,
        };
        if pick_store {
            let j = self.store_cur.as_ref().unwrap();
            let addr = j.s.src_addr + j.collected.len() as u32;
            Some(addr / LINE_WORDS as u32)
        } else {
            let j = self.move_cur.as_ref().unwrap();
            let addr = j.m.src_addr + j.sent * LINE_WORDS as u32;
            Some(addr / LINE_WORDS as u32)
        }
    }

    fn tmov_advance(&mut self, granted: bool, out: &mut Vec<Outbound>) -> Result<()> {
        if !granted {
            return Ok(());
        }
        let store_ready = self
            .store_cur
            .as_ref()
            .map(|j| self.sync_ok(&j.s.sync))
            .unwrap_or(false);
        let move_ready = !self.move_outstanding
            && self
                .move_cur
                .as_ref()
                .map(|j| self.sync_ok(&j.m.sync))
                .unwrap_or(false);
        let pick_store = match (store_ready, move_ready) {
            (true, true) => self.tmov_alt,
            (true, false) => true,
            (false, true) => false,
            (false, false) => return Ok(()),
        };
        self.tmov_alt = !self.tmov_alt;
        if pick_store {
            let mut job = self.store_cur.take().unwrap();
            let addr = job.s.src_addr + job.collected.len() as u32;
            let take = (job.s.len as usize - job.collected.len()).min(LINE_WORDS);
            self.check_readable(addr, take as u32)?;
            job.collected
                .extend_from_slice(&self.maps[addr as usize..addr as usize + take]);
            if job.collected.len() == job.s.len as usize {
                self.dec_readers(&span_gate_ids(job.s.src_addr, job.s.len));
                out.push(Outbound::Store {
                    dram_addr: job.s.dram_addr,
                    data: job.collected,
                });
            } else {
                self.store_cur = Some(job);
            }
        } else {
            let mut job = self.move_cur.take().unwrap();
            let addr = job.m.src_addr + job.sent * LINE_WORDS as u32;
            let line = self.read_chunk(addr)?;
            job.sent += 1;
            let last = job.sent * (LINE_WORDS as u32) >= job.m.len;
            if last {
                self.dec_readers(&span_gate_ids(job.m.src_addr, job.m.len));
            }
            out.push(Outbound::MoveLine {
                src_cu: self.index,
                dst_cu: job.m.dst_cu as usize,
                dst_addr: job.m.dst_addr + (job.sent - 1) * LINE_WORDS as u32,
                words: line,
                last,
            });
            self.move_outstanding = true;
            if !last {
                self.move_cur = Some(job);
            }
        }
        Ok(())
    }

    /// Third-operand reads for the writeback at the queue head, then one
    /// port write per cycle.
    fn writeback(&mut self, cycle: u64, grants: &LaneGrants) -> Result<bool> {
        // Fourth-port bypass reads, one line per cycle when the lane is
        // free; a pending load to the operand's region holds the read.
        let read_plan = match self.wb_events.front() {
            Some(ev) if ev.ready_at <= cycle && ev.bypass_lines_left > 0 => {
                let base = ev.bypass_addr.unwrap();
                let next = base + ev.bypass.len() as u32;
                let lane = (next / LINE_WORDS as u32) & 3;
                let free = Some(lane) != grants.mac
                    && Some(lane) != grants.max
                    && Some(lane) != grants.tmov;
                let loaded = self.pending[self.region_of(next)] == 0;
                if free && loaded {
                    let line_start = (next / LINE_WORDS as u32) * LINE_WORDS as u32;
                    let from = next.max(line_start);
                    let upto = (line_start + LINE_WORDS as u32).min(base + ev.words.len() as u32);
                    Some((from, upto - from))
                } else {
                    None
                }
            }
            _ => None,
        };
        if let Some((from, take)) = read_plan {
            self.check_readable(from, take)?;
            let tmp: Vec<i16> = self.maps[from as usize..(from + take) as usize].to_vec();
            let ev = self.wb_events.front_mut().unwrap();
            ev.bypass.extend_from_slice(&tmp);
            ev.bypass_lines_left -= 1;
        }
        // One write through the port.
        let ready = self
            .wb_events
            .front()
            .map(|e| e.ready_at <= cycle && e.bypass_lines_left == 0)
            .unwrap_or(false);
        if ready {
            let ev = self.wb_events.pop_front().unwrap();
            let addr = ev.addr as usize;
            if addr + ev.words.len() > self.maps_words {
                return Err(Error::Sim(format!(
                    "cu{} writeback [{addr}, {}) out of bounds",
                    self.index,
                    addr + ev.words.len()
                )));
            }
            for (k, &w) in ev.words.iter().enumerate() {
                let mut v = w;
                if ev.bypass_addr.is_some() {
                    v = v.wrapping_add(ev.bypass[k]);
                }
                if ev.relu && v < 0 {
                    v = 0;
                }
                self.maps[addr + k] = v;
            }
            if ev.counts_mac {
                self.seq.mac_completed += 1;
            }
            if ev.counts_max {
                self.seq.max_completed += 1;
            }
            return Ok(true);
        }
        Ok(false)
    }

    pub fn quiescent(&self) -> bool {
        self.mac_q.is_empty()
            && self.max_q.is_empty()
            && self.tmov_q.is_empty()
            && self.mac_cur.is_none()
            && self.avg_cur.is_none()
            && self.max_cur.is_none()
            && self.store_cur.is_none()
            && self.move_cur.is_none()
            && !self.move_outstanding
            && self.wb_events.is_empty()
    }
}

/// One line of the per-cycle utilization log.
#[derive(Debug, Clone, Copy)]
pub struct UtilRow {
    pub cycle: u64,
    pub cu: u8,
    pub active: [u16; VMACS_PER_CU],
    pub mac_lane: Option<u32>,
    pub max_lane: Option<u32>,
    pub tmov_lane: Option<u32>,
}

#[derive(Debug)]
pub struct ComputeCluster {
    pub cus: Vec<Cu>,
    /// CU-move lines awaiting delivery through the destination port.
    pending_moves: VecDeque<(usize, usize, u32, [i16; LINE_WORDS], bool)>,
    vq_depth: usize,
    max_vq_depth: usize,
    pub util_log: Option<Vec<UtilRow>>,
}

/// A vector instruction as resolved by the control core at dispatch.
#[derive(Debug, Clone, Copy)]
pub enum Dispatch {
    Mac {
        maps_addr: u32,
        wslot: u16,
        bias_slot: u16,
        len: u32,
        coop: bool,
        emit: bool,
        wait_max: bool,
        wait_tmov: bool,
    },
    SetWb(SetWb),
    Vmov {
        addr: u32,
    },
    Window {
        addr: u32,
        chunk_stride: u32,
        row_stride: u32,
        p: u8,
        avg: bool,
        wait_mac: bool,
        wait_tmov: bool,
    },
    Tmov {
        src_cu: u8,
        src_addr: u32,
        dst_cu: u8,
        dst_addr: u32,
        len: u32,
    },
    Store {
        cu: u8,
        src_addr: u32,
        len: u32,
        dram_addr: usize,
    },
}

impl ComputeCluster {
    pub fn new(cfg: &MachineConfig) -> ComputeCluster {
        ComputeCluster {
            cus: (0..CU_COUNT).map(|i| Cu::new(i, cfg)).collect(),
            pending_moves: VecDeque::new(),
            vq_depth: cfg.vq_depth,
            max_vq_depth: cfg.max_vq_depth,
            util_log: None,
        }
    }

    fn gated(&self, cus: &[usize], ids: &[usize]) -> bool {
        cus.iter()
            .any(|&c| ids.iter().any(|&id| self.cus[c].pending[id] > 0))
    }

    fn add_readers(&mut self, cus: &[usize], ids: &[usize]) {
        for &c in cus {
            for &id in ids {
                self.cus[c].readers[id] += 1;
            }
        }
    }

    /// Try to enqueue a dispatched vector instruction. Returns false when
    /// a queue is full or a source buffer has a pending load (the control
    /// core stalls and retries).
    pub fn try_dispatch(&mut self, d: &Dispatch) -> Result<bool> {
        let all: Vec<usize> = (0..CU_COUNT).collect();
        match *d {
            Dispatch::Mac {
                maps_addr,
                wslot,
                bias_slot,
                len,
                coop,
                emit,
                wait_max,
                wait_tmov,
            } => {
                let ids = mac_gate_ids(maps_addr, len, wslot, coop);
                if self.gated(&all, &ids) {
                    return Ok(false);
                }
                if self.cus.iter().any(|c| c.mac_q.len() >= self.vq_depth) {
                    return Ok(false);
                }
                self.add_readers(&all, &ids);
                for cu in &mut self.cus {
                    let sync = SyncStamp {
                        mac: 0,
                        max: if wait_max { cu.seq.max_dispatched } else { 0 },
                        tmov_in: if wait_tmov { cu.seq.tmov_in_dispatched } else { 0 },
                    };
                    cu.mac_q.push_back(VectorOp::Mac(MacTrace {
                        maps_addr,
                        wslot,
                        bias_slot,
                        len,
                        coop,
                        emit,
                        sync,
                    }));
                    cu.seq.mac_dispatched += 1;
                }
                Ok(true)
            }
            Dispatch::SetWb(s) => {
                let depth = if s.target == WbTarget::Max {
                    self.max_vq_depth
                } else {
                    self.vq_depth
                };
                let q = if s.target == WbTarget::Max {
                    |c: &Cu| c.max_q.len()
                } else {
                    |c: &Cu| c.mac_q.len()
                };
                if self.cus.iter().any(|c| q(c) >= depth) {
                    return Ok(false);
                }
                for cu in &mut self.cus {
                    if s.target == WbTarget::Max {
                        cu.max_q.push_back(VectorOp::SetWb(s));
                    } else {
                        cu.mac_q.push_back(VectorOp::SetWb(s));
                    }
                }
                Ok(true)
            }
            Dispatch::Vmov { addr } => {
                let ids = span_gate_ids(addr, LINE_WORDS as u32);
                if self.gated(&all, &ids) {
                    return Ok(false);
                }
                if self.cus.iter().any(|c| c.mac_q.len() >= self.vq_depth) {
                    return Ok(false);
                }
                self.add_readers(&all, &ids);
                for cu in &mut self.cus {
                    cu.mac_q.push_back(VectorOp::Vmov { addr });
                }
                Ok(true)
            }
            Dispatch::Window {
                addr,
                chunk_stride,
                row_stride,
                p,
                avg,
                wait_mac,
                wait_tmov,
            } => {
                let ids = window_gate_ids(addr, chunk_stride, row_stride, p, avg);
                if self.gated(&all, &ids) {
                    return Ok(false);
                }
                let depth = if avg { self.vq_depth } else { self.max_vq_depth };
                let q = if avg {
                    |c: &Cu| c.mac_q.len()
                } else {
                    |c: &Cu| c.max_q.len()
                };
                if self.cus.iter().any(|c| q(c) >= depth) {
                    return Ok(false);
                }
                self.add_readers(&all, &ids);
                for cu in &mut self.cus {
                    let sync = SyncStamp {
                        mac: if wait_mac { cu.seq.mac_dispatched } else { 0 },
                        max: 0,
                        tmov_in: if wait_tmov { cu.seq.tmov_in_dispatched } else { 0 },
                    };
                    let w = Window {
                        addr,
                        chunk_stride,
                        row_stride,
                        p,
                        avg,
                        sync,
                    };
                    if avg {
                        cu.mac_q.push_back(VectorOp::Window(w));
                        cu.seq.mac_dispatched += 1;
                    } else {
                        cu.max_q.push_back(VectorOp::Window(w));
                        cu.seq.max_dispatched += 1;
                    }
                }
                Ok(true)
            }
            Dispatch::Tmov {
                src_cu,
                src_addr,
                dst_cu,
                dst_addr,
                len,
            } => {
                if src_cu as usize >= CU_COUNT || dst_cu as usize >= CU_COUNT {
                    return Err(Error::Sim(format!(
                        "cu move {src_cu}->{dst_cu} outside the cluster"
                    )));
                }
                let ids = span_gate_ids(src_addr, len);
                if self.gated(&[src_cu as usize], &ids) {
                    return Ok(false);
                }
                if self.cus[src_cu as usize].tmov_q.len() >= self.vq_depth {
                    return Ok(false);
                }
                self.add_readers(&[src_cu as usize], &ids);
                let src = &mut self.cus[src_cu as usize];
                let sync = SyncStamp {
                    mac: src.seq.mac_dispatched,
                    max: src.seq.max_dispatched,
                    tmov_in: 0,
                };
                src.tmov_q.push_back(VectorOp::CuMove(CuMove {
                    src_addr,
                    dst_cu,
                    dst_addr,
                    len,
                    sync,
                }));
                self.cus[dst_cu as usize].seq.tmov_in_dispatched += 1;
                Ok(true)
            }
            Dispatch::Store {
                cu,
                src_addr,
                len,
                dram_addr,
            } => {
                let ids = span_gate_ids(src_addr, len);
                if self.gated(&[cu as usize], &ids) {
                    return Ok(false);
                }
                if self.cus[cu as usize].tmov_q.len() >= self.vq_depth {
                    return Ok(false);
                }
                self.add_readers(&[cu as usize], &ids);
                let c = &mut self.cus[cu as usize];
                let sync = SyncStamp {
                    mac: c.seq.mac_dispatched,
                    max: c.seq.max_dispatched,
                    tmov_in: 0,
                };
                c.tmov_q.push_back(VectorOp::Store(StoreMem {
                    src_addr,
                    len,
                    dram_addr,
                    sync,
                }));
                Ok(true)
            }
        }
    }

    fn fill_gate_ids(buffer_id: u8, dst_addr: u32, len: u32) -> Vec<usize> {
        if buffer_id == 0 {
            span_gate_ids(dst_addr, len)
        } else {
            let v = (buffer_id - 8) as usize;
            let slot_lo = dst_addr as usize / LINE_WORDS / (WEIGHT_SLOTS / 2);
            let slot_hi = ((dst_addr + len - 1) as usize / LINE_WORDS / (WEIGHT_SLOTS / 2)).min(1);
            (slot_lo..=slot_hi).map(|h| 8 + v * 2 + h).collect()
        }
    }

    /// Record a pending load on every gate region the fill will touch.
    pub fn note_load(&mut self, cu_mask: u8, buffer_id: u8, dst_addr: u32, len: u32) {
        let ids = Self::fill_gate_ids(buffer_id, dst_addr, len);
        for c in 0..CU_COUNT {
            if cu_mask & (1 << c) != 0 {
                for &id in &ids {
                    self.cus[c].pending[id] += 1;
                }
            }
        }
    }

    /// Deliver a completed DRAM fill into the target buffers. Returns
    /// false (defer) while an already-dispatched trace still reads one of
    /// the target regions; the write lands once those readers drain.
    pub fn apply_fill(
        &mut self,
        cu_mask: u8,
        buffer_id: u8,
        dst_addr: u32,
        data: &[i16],
    ) -> Result<bool> {
        let ids = Self::fill_gate_ids(buffer_id, dst_addr, data.len() as u32);
        for c in 0..CU_COUNT {
            if cu_mask & (1 << c) != 0 && ids.iter().any(|&id| self.cus[c].readers[id] > 0) {
                return Ok(false);
            }
        }
        for c in 0..CU_COUNT {
            if cu_mask & (1 << c) == 0 {
                continue;
            }
            let cu = &mut self.cus[c];
            if buffer_id == 0 {
                let a = dst_addr as usize;
                if a + data.len() > cu.maps.len() {
                    return Err(Error::Sim(format!(
                        "fill [{a}, {}) outside cu{c} maps buffer",
                        a + data.len()
                    )));
                }
                cu.maps[a..a + data.len()].copy_from_slice(data);
            } else {
                let v = (buffer_id - 8) as usize;
                if v >= VMACS_PER_CU {
                    return Err(Error::Sim(format!("bad weight buffer id {buffer_id}")));
                }
                for (k, &w) in data.iter().enumerate() {
                    let word = dst_addr as usize + k;
                    let slot = word / MACS_PER_VMAC;
                    let mac = word % MACS_PER_VMAC;
                    if slot >= WEIGHT_SLOTS {
                        return Err(Error::Sim(format!("weight fill slot {slot} overflow")));
                    }
                    cu.weights[(v * MACS_PER_VMAC + mac) * WEIGHT_SLOTS + slot] = w;
                }
            }
            for &id in &ids {
                if cu.pending[id] == 0 {
                    return Err(Error::Sim(format!("pending underflow on cu{c} id {id}")));
                }
                cu.pending[id] -= 1;
            }
        }
        Ok(true)
    }

    /// Advance every CU one cycle. Stores destined for memory come back to
    /// the caller for the memory channel.
    pub fn tick(&mut self, cycle: u64, cfg: &MachineConfig) -> Result<Vec<Outbound>> {
        let mut outbound = Vec::new();
        let mut delivered_src: Vec<usize> = Vec::new();
        for idx in 0..CU_COUNT {
            let cu = &mut self.cus[idx];
            let mac_req = cu.mac_request(cycle, cfg);
            let max_req = cu.max_request(cycle);
            let tmov_req = cu.tmov_request(cycle);
            let grants = arbitrate(mac_req, max_req, tmov_req);
            let mut active = [0u16; VMACS_PER_CU];
            cu.mac_advance(cycle, cfg, mac_req.is_some(), &mut active)?;
            cu.max_advance(cycle, max_req.is_some() && grants.max.is_some())?;
            cu.tmov_advance(tmov_req.is_some() && grants.tmov.is_some(), &mut outbound)?;
            let wrote = cu.writeback(cycle, &grants)?;
            if active.iter().any(|&a| a > 0) {
                cu.stats.busy_cycles += 1;
            }
            if let Some(log) = &mut self.util_log {
                log.push(UtilRow {
                    cycle,
                    cu: idx as u8,
                    active,
                    mac_lane: grants.mac,
                    max_lane: grants.max,
                    tmov_lane: grants.tmov,
                });
            }
            // Port already used this cycle by a writeback: CU-move
            // arrivals wait; otherwise deliver one pending line.
            if !wrote {
                if let Some(pos) = self
                    .pending_moves
                    .iter()
                    .position(|&(_, dst, _, _, _)| dst == idx)
                {
                    let (src, _dst, addr, words, last) =
                        self.pending_moves.remove(pos).unwrap();
                    let cu = &mut self.cus[idx];
                    let a = addr as usize;
                    if a + LINE_WORDS > cu.maps.len() {
                        return Err(Error::Sim(format!(
                            "cu move write [{a}, {}) outside cu{idx}",
                            a + LINE_WORDS
                        )));
                    }
                    cu.maps[a..a + LINE_WORDS].copy_from_slice(&words);
                    if last {
                        cu.seq.tmov_in_completed += 1;
                    }
                    delivered_src.push(src);
                }
            }
        }
        for out in outbound.drain(..).collect::<Vec<_>>() {
            match out {
                Outbound::MoveLine {
                    src_cu,
                    dst_cu,
                    dst_addr,
                    words,
                    last,
                } => self
                    .pending_moves
                    .push_back((src_cu, dst_cu, dst_addr, words, last)),
                store => outbound.push(store),
            }
        }
        for src in delivered_src {
            self.cus[src].move_outstanding = false;
        }
        Ok(outbound)
    }

    pub fn quiescent(&self) -> bool {
        self.pending_moves.is_empty() && self.cus.iter().all(|c| c.quiescent())
    }

    pub fn pending_loads(&self) -> bool {
        self.cus.iter().any(|c| c.pending.iter().any(|&p| p > 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arbitration_rules() {
        // MAC and MAX on the same lane: MAX denied.
        let g = arbitrate(Some(2), Some(6), None);
        assert_eq!(g.mac, Some(2));
        assert_eq!(g.max, None);
        // Distinct lanes: all granted.
        let g = arbitrate(Some(0), Some(1), Some(3));
        assert_eq!((g.mac, g.max, g.tmov), (Some(0), Some(1), Some(3)));
        // Only MAX requesting: granted.
        let g = arbitrate(None, Some(1), None);
        assert_eq!(g.max, Some(1));
        // MAX/TMOV tie: MAX wins.
        let g = arbitrate(None, Some(5), Some(1));
        assert_eq!(g.max, Some(1));
        assert_eq!(g.tmov, None);
        // In no cycle may two grants share a lane.
        for mac in 0..4u32 {
            for max in 0..4u32 {
                for tmov in 0..4u32 {
                    let g = arbitrate(Some(mac), Some(max), Some(tmov));
                    let mut lanes = vec![];
                    for l in [g.mac, g.max, g.tmov].into_iter().flatten() {
                        assert!(!lanes.contains(&l), "lane {l} granted twice");
                        lanes.push(l);
                    }
                }
            }
        }
    }
}
