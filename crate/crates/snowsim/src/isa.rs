//! The 32-bit Snowflake instruction set: encode, decode, pretty-print.
//!
//! Word layout (fixed so binaries are stable):
//!
//! ```text
//! [31:28] opcode   [27] mode   [26:22] rd   [21:17] rs1   [16:12] rs2   [11:0] imm
//! ```
//!
//! * MOV mode 1 repurposes imm bits [11:7] as a 5-bit left-shift amount;
//!   the remaining imm bits must be zero.
//! * Scalar immediates (MOV, ADD, MUL, branches, SETWB) are signed 12-bit.
//!   Branch immediates are PC-relative in instruction units.
//! * Vector trace lengths (MAC, LOAD, STORE, TMOV) are 1..=4096 words with
//!   0 in the field meaning 4096, so a TMOV can move its full 4096-word
//!   maximum.
//! * MAX packs the pooling window into the immediate: bits [3:0] window P,
//!   bits [5:4] completion-sync flags (see `compute`).
//!
//! Register operands index the control core's thirty-two 32-bit registers.

use crate::error::{Error, Result};

pub const NUM_REGS: usize = 32;

/// Vector trace lengths are limited by the 12-bit immediate convention.
pub const MAX_TRACE_LEN: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Mov = 0,
    Tmov = 1,
    Vmov = 2,
    Add = 3,
    Mul = 4,
    Mac = 5,
    Max = 6,
    Bgt = 7,
    Ble = 8,
    Beq = 9,
    Load = 10,
    Store = 11,
    Setwb = 12,
    Halt = 13,
}

pub const ALL_OPCODES: [Opcode; 14] = [
    Opcode::Mov,
    Opcode::Tmov,
    Opcode::Vmov,
    Opcode::Add,
    Opcode::Mul,
    Opcode::Mac,
    Opcode::Max,
    Opcode::Bgt,
    Opcode::Ble,
    Opcode::Beq,
    Opcode::Load,
    Opcode::Store,
    Opcode::Setwb,
    Opcode::Halt,
];

impl Opcode {
    pub fn from_nibble(n: u32) -> Option<Opcode> {
        ALL_OPCODES.get(n as usize).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Mov => "mov",
            Opcode::Tmov => "tmov",
            Opcode::Vmov => "vmov",
            Opcode::Add => "add",
            Opcode::Mul => "mul",
            Opcode::Mac => "mac",
            Opcode::Max => "max",
            Opcode::Bgt => "bgt",
            Opcode::Ble => "ble",
            Opcode::Beq => "beq",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Setwb => "setwb",
            Opcode::Halt => "halt",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        ALL_OPCODES.iter().copied().find(|o| o.mnemonic() == s)
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Opcode::Bgt | Opcode::Ble | Opcode::Beq)
    }

    /// Vector instructions execute on the compute core.
    pub fn is_vector(self) -> bool {
        matches!(
            self,
            Opcode::Mac
                | Opcode::Max
                | Opcode::Tmov
                | Opcode::Vmov
                | Opcode::Load
                | Opcode::Store
                | Opcode::Setwb
        )
    }

    /// Immediate field carries a trace length (1..=4096, 0 encodes 4096).
    fn imm_is_length(self) -> bool {
        matches!(self, Opcode::Mac | Opcode::Load | Opcode::Store | Opcode::Tmov)
    }
}

/// Decoded form of one 32-bit instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instruction {
    pub opcode: Opcode,
    pub mode: u8,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    /// Semantic immediate: signed offset/value, or trace length 1..=4096.
    pub imm: i32,
    /// Shift amount, MOV mode 1 only.
    pub shift: u8,
}

impl Instruction {
    pub fn new(opcode: Opcode, mode: u8, rd: u8, rs1: u8, rs2: u8, imm: i32) -> Instruction {
        Instruction {
            opcode,
            mode,
            rd,
            rs1,
            rs2,
            imm,
            shift: 0,
        }
    }

    fn is_shift_mov(&self) -> bool {
        self.opcode == Opcode::Mov && self.mode == 1
    }
}

pub fn encode(i: &Instruction) -> Result<u32> {
    if i.mode > 1 {
        return Err(Error::Encode(format!("mode {} exceeds the mode bit", i.mode)));
    }
    for (name, r) in [("rd", i.rd), ("rs1", i.rs1), ("rs2", i.rs2)] {
        if r as usize >= NUM_REGS {
            return Err(Error::Encode(format!("register field {name} = {r} out of range")));
        }
    }
    let imm_field: u32 = if i.is_shift_mov() {
        if i.shift > 31 {
            return Err(Error::Encode(format!("shift {} exceeds 5 bits", i.shift)));
        }
        if i.imm != 0 {
            return Err(Error::Encode("mov.1 carries a shift, not an immediate".into()));
        }
        (i.shift as u32) << 7
    } else if i.opcode.imm_is_length() {
        if i.imm < 1 || i.imm as u32 > MAX_TRACE_LEN {
            return Err(Error::Encode(format!(
                "trace length {} outside 1..={MAX_TRACE_LEN}",
                i.imm
            )));
        }
        (i.imm as u32) & 0xfff
    } else {
        if i.imm < -2048 || i.imm > 2047 {
            return Err(Error::Encode(format!("imm {} exceeds signed 12 bits", i.imm)));
        }
        (i.imm as u32) & 0xfff
    };
    if i.shift != 0 && !i.is_shift_mov() {
        return Err(Error::Encode("shift field is only legal on mov.1".into()));
    }
    Ok(((i.opcode as u32) << 28)
        | ((i.mode as u32) << 27)
        | ((i.rd as u32) << 22)
        | ((i.rs1 as u32) << 17)
        | ((i.rs2 as u32) << 12)
        | imm_field)
}

pub fn decode(w: u32) -> Result<Instruction> {
    let opcode = Opcode::from_nibble(w >> 28)
        .ok_or_else(|| Error::Decode(format!("illegal opcode nibble in word {w:#010x}")))?;
    let mode = ((w >> 27) & 1) as u8;
    let rd = ((w >> 22) & 0x1f) as u8;
    let rs1 = ((w >> 17) & 0x1f) as u8;
    let rs2 = ((w >> 12) & 0x1f) as u8;
    let field = w & 0xfff;
    let mut shift = 0u8;
    let imm: i32 = if opcode == Opcode::Mov && mode == 1 {
        if field & 0x7f != 0 {
            return Err(Error::Decode(format!(
                "mov.1 word {w:#010x} has nonzero bits below the shift field"
            )));
        }
        shift = ((field >> 7) & 0x1f) as u8;
        0
    } else if opcode.imm_is_length() {
        if field == 0 {
            MAX_TRACE_LEN as i32
        } else {
            field as i32
        }
    } else {
        // Sign-extend 12 bits.
        ((field as i32) << 20) >> 20
    };
    Ok(Instruction {
        opcode,
        mode,
        rd,
        rs1,
        rs2,
        imm,
        shift,
    })
}

/// Canonical text form, one per line: `op.mode rd, rs1, rs2, imm`.
/// For `mov.1` the final operand is the shift amount.
pub fn format_instruction(i: &Instruction) -> String {
    let last = if i.is_shift_mov() { i.shift as i32 } else { i.imm };
    format!(
        "{}.{} r{}, r{}, r{}, {}",
        i.opcode.mnemonic(),
        i.mode,
        i.rd,
        i.rs1,
        i.rs2,
        last
    )
}

/// Pack a load/store buffer target into one 32-bit register value:
/// word address in the low 23 bits, buffer ID in [27:23], CU in [31:28].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferTarget {
    pub cu: u8,
    pub buffer_id: u8,
    pub addr: u32,
}

/// CU field value meaning "all CUs in the cluster" (multicast fill).
pub const CU_BROADCAST: u8 = 0xf;

impl BufferTarget {
    pub fn pack(&self) -> u32 {
        debug_assert!(self.cu <= 0xf);
        debug_assert!(self.buffer_id <= 0x1f);
        debug_assert!(self.addr < (1 << 23));
        ((self.cu as u32) << 28) | ((self.buffer_id as u32) << 23) | (self.addr & 0x7f_ffff)
    }

    pub fn unpack(v: u32) -> BufferTarget {
        BufferTarget {
            cu: ((v >> 28) & 0xf) as u8,
            buffer_id: ((v >> 23) & 0x1f) as u8,
            addr: v & 0x7f_ffff,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn mov_zero_word_layout() {
        // MOV mode 0 rd=1 imm=0: opcode nibble 0, only the rd field set.
        let i = Instruction::new(Opcode::Mov, 0, 1, 0, 0, 0);
        let w = encode(&i).unwrap();
        assert_eq!(w, 1 << 22);
        // The all-zero word decodes as mov.0 r0, 0 by construction.
        assert_eq!(decode(0).unwrap(), Instruction::new(Opcode::Mov, 0, 0, 0, 0, 0));
    }

    #[test]
    fn illegal_opcode_rejected() {
        assert!(decode(0xf000_0000).is_err());
        assert!(decode(0xe000_0000).is_err());
    }

    #[test]
    fn imm_overflow_rejected() {
        let i = Instruction::new(Opcode::Mov, 0, 1, 0, 0, 4096);
        assert!(encode(&i).is_err());
        let i = Instruction::new(Opcode::Add, 0, 1, 1, 0, -2049);
        assert!(encode(&i).is_err());
    }

    #[test]
    fn trace_length_4096_roundtrips() {
        let i = Instruction::new(Opcode::Tmov, 0, 0, 1, 2, 4096);
        let w = encode(&i).unwrap();
        assert_eq!(w & 0xfff, 0);
        assert_eq!(decode(w).unwrap().imm, 4096);
        // Length 0 and 4097 are unencodable.
        assert!(encode(&Instruction::new(Opcode::Mac, 0, 0, 1, 2, 0)).is_err());
        assert!(encode(&Instruction::new(Opcode::Mac, 0, 0, 1, 2, 4097)).is_err());
    }

    fn random_legal(rng: &mut SplitMix64) -> Instruction {
        let opcode = ALL_OPCODES[rng.next_below(14) as usize];
        let mode = rng.next_below(2) as u8;
        let rd = rng.next_below(32) as u8;
        let rs1 = rng.next_below(32) as u8;
        let rs2 = rng.next_below(32) as u8;
        let mut i = Instruction::new(opcode, mode, rd, rs1, rs2, 0);
        if i.is_shift_mov() {
            i.shift = rng.next_below(32) as u8;
        } else if opcode.imm_is_length() {
            i.imm = 1 + rng.next_below(MAX_TRACE_LEN as u64) as i32;
        } else {
            i.imm = rng.next_below(4096) as i32 - 2048;
        }
        i
    }

    #[test]
    fn roundtrip_10k_random_instructions() {
        let mut rng = SplitMix64::new(0xdecaf);
        for _ in 0..10_000 {
            let i = random_legal(&mut rng);
            let w = encode(&i).unwrap();
            let back = decode(w).unwrap();
            assert_eq!(back, i, "word {w:#010x}");
            assert_eq!(encode(&back).unwrap(), w);
        }
    }

    #[test]
    fn buffer_target_pack_unpack() {
        let t = BufferTarget {
            cu: 3,
            buffer_id: 17,
            addr: 0x7f_ffff,
        };
        assert_eq!(BufferTarget::unpack(t.pack()), t);
        let t = BufferTarget {
            cu: 0,
            buffer_id: 0,
            addr: 0,
        };
        assert_eq!(t.pack(), 0);
    }
}
