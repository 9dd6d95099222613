//! Text assembler and disassembler for handwritten tests and program dumps.
//!
//! Grammar, one instruction per line:
//!
//! ```text
//! line    := [label ':'] [insn] [';' comment]
//! insn    := mnemonic ['.' mode] operand (',' operand)*
//! operand := 'r' num | num | label          ; labels only in the imm slot
//! ```
//!
//! The canonical form emitted by the disassembler is always
//! `op.mode rd, rs1, rs2, imm`; the assembler also accepts it with the
//! `.mode` suffix omitted (mode 0). Branch immediates written as labels
//! resolve to PC-relative offsets in instruction units. On `mov.1` the
//! final operand is the shift amount.
//!
//! The binary program format is a bare sequence of little-endian 32-bit
//! words.

use crate::error::{Error, Result};
use crate::isa::{decode, encode, format_instruction, Instruction, Opcode, NUM_REGS};
use std::collections::HashMap;

enum Operand {
    Reg(u8),
    Imm(i32),
    Label(String),
}

struct Parsed {
    line_no: usize,
    opcode: Opcode,
    mode: u8,
    operands: Vec<Operand>,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Asm {
        line,
        msg: msg.into(),
    }
}

fn parse_operand(tok: &str, line: usize) -> Result<Operand> {
    let tok = tok.trim();
    if let Some(rest) = tok.strip_prefix('r') {
        if let Ok(n) = rest.parse::<u8>() {
            if (n as usize) < NUM_REGS {
                return Ok(Operand::Reg(n));
            }
            return Err(err(line, format!("register r{n} out of range")));
        }
    }
    if let Ok(v) = tok.parse::<i32>() {
        return Ok(Operand::Imm(v));
    }
    if tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !tok.is_empty() {
        return Ok(Operand::Label(tok.to_string()));
    }
    Err(err(line, format!("cannot parse operand `{tok}`")))
}

/// Assemble a source listing into encoded words.
pub fn assemble(text: &str) -> Result<Vec<u32>> {
    let mut labels: HashMap<String, i32> = HashMap::new();
    let mut parsed: Vec<Parsed> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut line = raw;
        if let Some(p) = line.find([';', '#']) {
            line = &line[..p];
        }
        let mut line = line.trim();
        while let Some(colon) = line.find(':') {
            let name = line[..colon].trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(err(line_no, format!("bad label `{name}`")));
            }
            if labels.insert(name.to_string(), parsed.len() as i32).is_some() {
                return Err(err(line_no, format!("duplicate label `{name}`")));
            }
            line = line[colon + 1..].trim();
        }
        if line.is_empty() {
            continue;
        }
        let (head, rest) = match line.find(char::is_whitespace) {
            Some(p) => (&line[..p], line[p..].trim()),
            None => (line, ""),
        };
        let (mn, mode) = match head.split_once('.') {
            Some((m, "0")) => (m, 0),
            Some((m, "1")) => (m, 1),
            Some((_, other)) => return Err(err(line_no, format!("bad mode suffix `.{other}`"))),
            None => (head, 0),
        };
        let opcode = Opcode::from_mnemonic(mn)
            .ok_or_else(|| err(line_no, format!("unknown mnemonic `{mn}`")))?;
        let operands = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',')
                .map(|t| parse_operand(t, line_no))
                .collect::<Result<Vec<_>>>()?
        };
        parsed.push(Parsed {
            line_no,
            opcode,
            mode,
            operands,
        });
    }

    let mut words = Vec::with_capacity(parsed.len());
    for (pc, p) in parsed.iter().enumerate() {
        let mut i = Instruction::new(p.opcode, p.mode, 0, 0, 0, 0);
        let mut regs: Vec<u8> = Vec::new();
        let mut imm: Option<i32> = None;
        for op in &p.operands {
            match op {
                Operand::Reg(r) => {
                    if imm.is_some() {
                        return Err(err(p.line_no, "register operand after immediate"));
                    }
                    regs.push(*r);
                }
                Operand::Imm(v) => {
                    if imm.replace(*v).is_some() {
                        return Err(err(p.line_no, "more than one immediate"));
                    }
                }
                Operand::Label(name) => {
                    if !p.opcode.is_branch() {
                        return Err(err(p.line_no, "label operand on a non-branch"));
                    }
                    let target = *labels
                        .get(name)
                        .ok_or_else(|| err(p.line_no, format!("undefined label `{name}`")))?;
                    let off = target - pc as i32;
                    if !(-2048..=2047).contains(&off) {
                        return Err(err(
                            p.line_no,
                            format!("branch to `{name}` is {off} instructions away, beyond the 12-bit range"),
                        ));
                    }
                    if imm.replace(off).is_some() {
                        return Err(err(p.line_no, "more than one immediate"));
                    }
                }
            }
        }
        if regs.len() > 3 {
            return Err(err(p.line_no, "too many register operands"));
        }
        let mut it = regs.into_iter();
        i.rd = it.next().unwrap_or(0);
        i.rs1 = it.next().unwrap_or(0);
        i.rs2 = it.next().unwrap_or(0);
        let last = imm.unwrap_or(if p.opcode == Opcode::Mac
            || p.opcode == Opcode::Load
            || p.opcode == Opcode::Store
            || p.opcode == Opcode::Tmov
        {
            1
        } else {
            0
        });
        if i.opcode == Opcode::Mov && i.mode == 1 {
            if !(0..=31).contains(&last) {
                return Err(err(p.line_no, format!("shift {last} outside 0..=31")));
            }
            i.shift = last as u8;
        } else {
            i.imm = last;
        }
        words.push(encode(&i).map_err(|e| err(p.line_no, e.to_string()))?);
    }
    Ok(words)
}

/// Disassemble words into canonical text, one instruction per line.
pub fn disassemble(words: &[u32]) -> Result<String> {
    let mut out = String::new();
    for &w in words {
        let i = decode(w)?;
        out.push_str(&format_instruction(&i));
        out.push('\n');
    }
    Ok(out)
}

/// Largest PC-relative branch distance in a program, in instructions.
pub fn max_branch_distance(words: &[u32]) -> Result<i32> {
    let mut max = 0;
    for &w in words {
        let i = decode(w)?;
        if i.opcode.is_branch() {
            max = max.max(i.imm.abs());
        }
    }
    Ok(max)
}

pub fn write_program(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

pub fn read_program(bytes: &[u8]) -> Result<Vec<u32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Decode("program file length is not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beq_forward_label_offset() {
        // Branch to the next-next instruction resolves to imm = +2.
        let words = assemble(
            "beq r1, r2, target\n\
             add r3, r3, 1\n\
             target: halt\n",
        )
        .unwrap();
        let i = decode(words[0]).unwrap();
        assert_eq!(i.opcode, Opcode::Beq);
        assert_eq!(i.imm, 2);
    }

    #[test]
    fn undefined_label_is_an_error() {
        match assemble("beq r0, r0, nowhere\n") {
            Err(Error::Asm { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected asm error, got {other:?}"),
        }
    }

    #[test]
    fn branch_out_of_range() {
        let mut src = String::from("beq r0, r0, far\n");
        for _ in 0..2100 {
            src.push_str("add r1, r1, 1\n");
        }
        src.push_str("far: halt\n");
        assert!(assemble(&src).is_err());
    }

    #[test]
    fn five_instruction_loop_roundtrip() {
        let src = "mov r1, r0, r0, 5\n\
                   loop: add.0 r1, r1, r0, -1\n\
                   bgt.0 r0, r1, r0, loop\n\
                   mov.1 r2, r1, r0, 3\n\
                   halt.0 r0, r0, r0, 0\n";
        let words = assemble(src).unwrap();
        assert_eq!(words.len(), 5);
        let text = disassemble(&words).unwrap();
        let again = assemble(&text).unwrap();
        assert_eq!(again, words);
        // The loop branch is backwards by one instruction.
        assert_eq!(decode(words[2]).unwrap().imm, -1);
    }

    #[test]
    fn binary_format_roundtrip() {
        let words = assemble("mov r1, r0, r0, 1\nhalt\n").unwrap();
        let bytes = write_program(&words);
        assert_eq!(read_program(&bytes).unwrap(), words);
        assert!(read_program(&bytes[..3]).is_err());
    }
}
