//! Small helper for emitting assembly text: named registers, unique
//! labels, wide-constant construction and counted loops with their four
//! branch delay slots filled.

use std::fmt::Write;

#[derive(Debug, Default)]
pub struct Asm {
    out: String,
    next_label: usize,
}

/// Loop bookkeeping handed back by `loop_begin`.
pub struct Loop {
    label: String,
    counter: u8,
}

impl Asm {
    pub fn new() -> Asm {
        Asm::default()
    }

    pub fn text(self) -> String {
        self.out
    }

    pub fn raw(&mut self, line: &str) {
        self.out.push_str(line);
        self.out.push('\n');
    }

    pub fn comment(&mut self, c: &str) {
        let _ = writeln!(self.out, "; {c}");
    }

    pub fn label(&mut self, hint: &str) -> String {
        self.next_label += 1;
        format!("{hint}_{}", self.next_label)
    }

    pub fn place(&mut self, label: &str) {
        let _ = writeln!(self.out, "{label}:");
    }

    /// rd = imm (signed 12-bit).
    pub fn mov(&mut self, rd: u8, imm: i32) {
        debug_assert!((-2048..=2047).contains(&imm));
        let _ = writeln!(self.out, "mov r{rd}, {imm}");
    }

    /// rd = rs << shift.
    pub fn movs(&mut self, rd: u8, rs: u8, shift: u8) {
        let _ = writeln!(self.out, "mov.1 r{rd}, r{rs}, r0, {shift}");
    }

    /// rd = rs + imm.
    pub fn addi(&mut self, rd: u8, rs: u8, imm: i32) {
        debug_assert!((-2048..=2047).contains(&imm), "addi imm {imm}");
        let _ = writeln!(self.out, "add r{rd}, r{rs}, {imm}");
    }

    /// rd = rs1 + rs2.
    pub fn addr(&mut self, rd: u8, rs1: u8, rs2: u8) {
        let _ = writeln!(self.out, "add.1 r{rd}, r{rs1}, r{rs2}, 0");
    }

    /// rd = rs * imm.
    pub fn muli(&mut self, rd: u8, rs: u8, imm: i32) {
        debug_assert!((-2048..=2047).contains(&imm));
        let _ = writeln!(self.out, "mul r{rd}, r{rs}, {imm}");
    }

    pub fn nop(&mut self) {
        self.raw("add r0, r0, 0");
    }

    pub fn halt(&mut self) {
        self.raw("halt");
    }

    /// Build an arbitrary 32-bit constant, 11 bits at a time.
    pub fn load_const(&mut self, rd: u8, value: u32) {
        if value <= 2047 {
            self.mov(rd, value as i32);
            return;
        }
        // Top bits first, shifting 11 at a time.
        let mut chunks = Vec::new();
        let mut v = value;
        while v > 2047 {
            chunks.push((v & 0x7ff) as i32);
            v >>= 11;
        }
        self.mov(rd, v as i32);
        for c in chunks.iter().rev() {
            self.movs(rd, rd, 11);
            if *c != 0 {
                self.addi(rd, rd, *c);
            }
        }
    }

    /// rd = rs + delta, using a scratch register when the delta exceeds
    /// the immediate range.
    pub fn add_const(&mut self, rd: u8, rs: u8, delta: i64, scratch: u8) {
        if (-2048..=2047).contains(&delta) {
            if delta == 0 && rd == rs {
                return;
            }
            self.addi(rd, rs, delta as i32);
        } else {
            self.load_const(scratch, delta as i32 as u32);
            self.addr(rd, rs, scratch);
        }
    }

    /// `load rs_mem, rs_target, len` with the operands already in
    /// registers.
    pub fn load(&mut self, mem_reg: u8, tgt_reg: u8, len: u32) {
        debug_assert!((1..=4096).contains(&len));
        let _ = writeln!(self.out, "load r0, r{mem_reg}, r{tgt_reg}, {len}");
    }

    pub fn store(&mut self, mem_reg: u8, tgt_reg: u8, len: u32) {
        debug_assert!((1..=4096).contains(&len), "store len {len}");
        let _ = writeln!(self.out, "store r0, r{mem_reg}, r{tgt_reg}, {len}");
    }

    pub fn mac(&mut self, coop: bool, maps_reg: u8, pack_reg: u8, len: u32) {
        debug_assert!((1..=4096).contains(&len), "trace len {len}");
        let mode = if coop { 1 } else { 0 };
        let _ = writeln!(self.out, "mac.{mode} r0, r{maps_reg}, r{pack_reg}, {len}");
    }

    pub fn max(&mut self, addr_reg: u8, stride_reg: u8, imm: i32) {
        let _ = writeln!(self.out, "max r0, r{addr_reg}, r{stride_reg}, {imm}");
    }

    pub fn setwb(&mut self, base_reg: u8, offset_reg: u8, imm: i32) {
        let _ = writeln!(self.out, "setwb r0, r{base_reg}, r{offset_reg}, {imm}");
    }

    pub fn tmov(&mut self, src_cu: u8, src_reg: u8, dst_reg: u8, len: u32) {
        let _ = writeln!(self.out, "tmov r{src_cu}, r{src_reg}, r{dst_reg}, {len}");
    }

    /// Begin a counted loop; `count` iterations of the body follow.
    pub fn loop_begin(&mut self, counter: u8, count: u32, hint: &str) -> Loop {
        debug_assert!(count >= 1 && count <= 2047);
        self.mov(counter, count as i32);
        let label = self.label(hint);
        self.place(&label);
        Loop { label, counter }
    }

    /// Branch when rs1 > rs2 (branches carry no destination register).
    pub fn bgt(&mut self, rs1: u8, rs2: u8, label: &str) {
        let _ = writeln!(self.out, "bgt r0, r{rs1}, r{rs2}, {label}");
    }

    /// Close a counted loop. `slots` holds up to four instructions that
    /// are safe to run once more after the final iteration (pure address
    /// or counter updates); they fill the branch delay slots.
    pub fn loop_end(&mut self, l: Loop, slots: &[SlotOp]) {
        debug_assert!(slots.len() <= 4);
        self.addi(l.counter, l.counter, -1);
        self.bgt(l.counter, 0, &l.label);
        for s in slots {
            match *s {
                SlotOp::AddI(rd, rs, imm) => self.addi(rd, rs, imm),
                SlotOp::AddR(rd, rs1, rs2) => self.addr(rd, rs1, rs2),
            }
        }
        for _ in slots.len()..4 {
            self.nop();
        }
    }
}

/// Delay-slot-safe operations.
#[derive(Debug, Clone, Copy)]
pub enum SlotOp {
    AddI(u8, u8, i32),
    AddR(u8, u8, u8),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::sim::Simulator;
    use crate::machine::MachineConfig;

    #[test]
    fn load_const_builds_wide_values() {
        for value in [0u32, 5, 2047, 2048, 0x7f_ffff, 0xdead_beef, u32::MAX] {
            let mut a = Asm::new();
            a.load_const(1, value);
            a.halt();
            let words = assemble(&a.text()).unwrap();
            let mut sim = Simulator::new(
                &MachineConfig {
                    mem_latency: 2,
                    ..MachineConfig::default()
                },
                &words,
                vec![0; 16],
            )
            .unwrap();
            sim.run(10_000).unwrap();
            assert_eq!(sim.ctrl.regs[1] as u32, value, "value {value:#x}");
        }
    }

    #[test]
    fn counted_loop_runs_exact_iterations() {
        let mut a = Asm::new();
        a.mov(2, 0);
        let l = a.loop_begin(3, 7, "body");
        a.addi(2, 2, 1);
        a.loop_end(l, &[SlotOp::AddI(4, 4, 1)]);
        a.halt();
        let words = assemble(&a.text()).unwrap();
        let mut sim = Simulator::new(
            &MachineConfig {
                mem_latency: 2,
                ..MachineConfig::default()
            },
            &words,
            vec![0; 16],
        )
        .unwrap();
        sim.run(100_000).unwrap();
        assert_eq!(sim.ctrl.regs[2], 7);
        // The slot ops run with every branch execution, taken or not.
        assert_eq!(sim.ctrl.regs[4], 7);
    }
}
