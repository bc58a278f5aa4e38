//! Two-pass assembler for the instruction set in [`crate::isa`], plus the
//! flat binary image format.
//!
//! Source grammar, one statement per line:
//!
//! ```text
//! ; comment to end of line
//! .org 0x1000            ; set the image base address (once, before any word)
//! label:                  ; labels may stand alone or prefix a statement
//! loop:  addi r3, r3, 4
//!        lw   r2, 8(r3)   ; loads/stores use imm(reg) addressing
//!        bne  r2, r0, loop
//!        j    done
//!        halt
//! tab:   .word 1, 0x10, -3, tab   ; literal words; labels give their address
//! vals:  .float 1.0, 2.5          ; f32 bit patterns
//! buf:   .space 16                ; 16 zero words
//! ```
//!
//! Instructions and data share one image; kernels put data after the `halt`.
//! Branch targets may be labels or literal word offsets. An `addi` immediate
//! may be a label, which yields its absolute byte address (it must fit in a
//! signed 16-bit field — keep images low in memory).

use crate::isa::{self, BranchCond, FpOp, Instruction, IntOp, RegFile};
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_BASE: u32 = 0x1000;

/// An assembled program image: consecutive words starting at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub base: u32,
    pub words: Vec<u32>,
    pub labels: BTreeMap<String, u32>,
}

impl Program {
    /// Word at a byte address, if it falls inside the image.
    pub fn word_at(&self, addr: u32) -> Option<u32> {
        if addr < self.base || addr % 4 != 0 {
            return None;
        }
        self.words.get(((addr - self.base) / 4) as usize).copied()
    }

    pub fn end(&self) -> u32 {
        self.base + 4 * self.words.len() as u32
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && addr < self.end()
    }

    /// Serialize as a flat little-endian word array with a two-word header:
    /// base address, then word count.
    pub fn to_image_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.words.len());
        out.extend_from_slice(&self.base.to_le_bytes());
        out.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Parse the binary image format produced by [`Program::to_image_bytes`].
    /// Labels are not part of the format and come back empty.
    pub fn from_image_bytes(bytes: &[u8]) -> Result<Program, ImageError> {
        if bytes.len() < 8 || bytes.len() % 4 != 0 {
            return Err(ImageError::Truncated);
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let base = word(0);
        let count = word(1) as usize;
        if bytes.len() != 8 + 4 * count {
            return Err(ImageError::CountMismatch { header: count, actual: (bytes.len() - 8) / 4 });
        }
        if base % 4 != 0 {
            return Err(ImageError::MisalignedBase(base));
        }
        Ok(Program { base, words: (0..count).map(|i| word(2 + i)).collect(), labels: BTreeMap::new() })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image file is truncated or not word-sized")]
    Truncated,
    #[error("image header says {header} words but file holds {actual}")]
    CountMismatch { header: usize, actual: usize },
    #[error("image base address {0:#x} is not word-aligned")]
    MisalignedBase(u32),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("bad operand `{0}`")]
    BadOperand(String),
    #[error("expected {expected} operands, got {got}")]
    OperandCount { expected: usize, got: usize },
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("immediate {0} does not fit in 16 bits")]
    ImmRange(i64),
    #[error("branch to `{label}` is {off} words away, outside the 16-bit offset range")]
    BranchRange { label: String, off: i64 },
    #[error(".org must appear before any emitted word")]
    OrgAfterEmit,
    #[error(".org address {0:#x} is not word-aligned")]
    MisalignedOrg(i64),
    #[error("bad directive `{0}`")]
    BadDirective(String),
    #[error("jump target {0:#x} is not reachable by a 26-bit word address")]
    JumpRange(u32),
}

fn err(line: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, kind }
}

// A statement found during pass 1, with enough context to encode in pass 2.
enum Stmt<'a> {
    Inst { line: usize, addr: u32, mnemonic: &'a str, operands: Vec<&'a str> },
    Word { line: usize, value: &'a str },
    Float { value: f32 },
    Space { count: u32 },
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn parse_reg(s: &str, file: RegFile) -> Option<u8> {
    let prefix = match file {
        RegFile::Int => 'r',
        RegFile::Fp => 'f',
    };
    let rest = s.strip_prefix(prefix)?;
    let idx: u8 = rest.parse().ok()?;
    (idx < 32).then_some(idx)
}

fn is_label_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.'
}

fn valid_label(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if is_label_start(c))
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Assemble source text into a program image. Deterministic: identical input
/// yields identical output.
pub fn assemble(src: &str) -> Result<Program, AsmError> {
    let mut labels: BTreeMap<String, u32> = BTreeMap::new();
    let mut stmts: Vec<Stmt> = Vec::new();
    let mut base = DEFAULT_BASE;
    let mut pc = base;
    let mut emitted = false;

    // pass 1: resolve label addresses, collect statements
    for (lineno, raw) in src.lines().enumerate() {
        let line = lineno + 1;
        let mut text = raw.split(';').next().unwrap_or("").trim();

        while let Some(colon) = text.find(':') {
            let (label, rest) = text.split_at(colon);
            let label = label.trim();
            if !valid_label(label) {
                return Err(err(line, AsmErrorKind::BadOperand(label.to_string())));
            }
            if labels.insert(label.to_string(), pc).is_some() {
                return Err(err(line, AsmErrorKind::DuplicateLabel(label.to_string())));
            }
            text = rest[1..].trim();
        }
        if text.is_empty() {
            continue;
        }

        let (head, tail) = match text.find(char::is_whitespace) {
            Some(i) => (&text[..i], text[i..].trim()),
            None => (text, ""),
        };

        if let Some(directive) = head.strip_prefix('.') {
            match directive {
                "org" => {
                    if emitted {
                        return Err(err(line, AsmErrorKind::OrgAfterEmit));
                    }
                    let v = parse_int(tail)
                        .ok_or_else(|| err(line, AsmErrorKind::BadOperand(tail.to_string())))?;
                    if v < 0 || v % 4 != 0 {
                        return Err(err(line, AsmErrorKind::MisalignedOrg(v)));
                    }
                    base = v as u32;
                    pc = base;
                }
                "word" => {
                    for item in tail.split(',') {
                        let item = item.trim();
                        if item.is_empty() {
                            return Err(err(line, AsmErrorKind::BadOperand(tail.to_string())));
                        }
                        stmts.push(Stmt::Word { line, value: item });
                        pc += 4;
                    }
                    emitted = true;
                }
                "float" => {
                    for item in tail.split(',') {
                        let item = item.trim();
                        let v: f32 = item
                            .parse()
                            .map_err(|_| err(line, AsmErrorKind::BadOperand(item.to_string())))?;
                        stmts.push(Stmt::Float { value: v });
                        pc += 4;
                    }
                    emitted = true;
                }
                "space" => {
                    let n = parse_int(tail)
                        .filter(|&n| n >= 0)
                        .ok_or_else(|| err(line, AsmErrorKind::BadOperand(tail.to_string())))?;
                    stmts.push(Stmt::Space { count: n as u32 });
                    pc += 4 * n as u32;
                    emitted = true;
                }
                _ => return Err(err(line, AsmErrorKind::BadDirective(head.to_string()))),
            }
            continue;
        }

        let operands: Vec<&str> =
            if tail.is_empty() { Vec::new() } else { tail.split(',').map(str::trim).collect() };
        stmts.push(Stmt::Inst { line, addr: pc, mnemonic: head, operands });
        pc += 4;
        emitted = true;
    }

    // pass 2: encode
    let mut words = Vec::new();
    for stmt in &stmts {
        match stmt {
            Stmt::Word { line, value } => {
                let w = if let Some(v) = parse_int(value) {
                    if v < i32::MIN as i64 || v > u32::MAX as i64 {
                        return Err(err(*line, AsmErrorKind::ImmRange(v)));
                    }
                    v as u32
                } else if let Some(&addr) = labels.get(*value) {
                    addr
                } else {
                    return Err(err(*line, AsmErrorKind::UndefinedLabel(value.to_string())));
                };
                words.push(w);
            }
            Stmt::Float { value } => words.push(value.to_bits()),
            Stmt::Space { count } => words.extend(std::iter::repeat(0).take(*count as usize)),
            Stmt::Inst { line, addr, mnemonic, operands } => {
                let inst = encode_stmt(*line, *addr, mnemonic, operands, &labels)?;
                words.push(isa::encode(&inst));
            }
        }
    }

    Ok(Program { base, words, labels })
}

fn imm_operand(line: usize, s: &str, labels: &BTreeMap<String, u32>) -> Result<i16, AsmError> {
    let v = if let Some(v) = parse_int(s) {
        v
    } else if let Some(&addr) = labels.get(s) {
        addr as i64
    } else {
        return Err(err(line, AsmErrorKind::UndefinedLabel(s.to_string())));
    };
    i16::try_from(v).map_err(|_| err(line, AsmErrorKind::ImmRange(v)))
}

// `imm(rN)` memory operand
fn mem_operand(line: usize, s: &str, labels: &BTreeMap<String, u32>) -> Result<(i16, u8), AsmError> {
    let open = s.find('(').ok_or_else(|| err(line, AsmErrorKind::BadOperand(s.to_string())))?;
    if !s.ends_with(')') {
        return Err(err(line, AsmErrorKind::BadOperand(s.to_string())));
    }
    let imm_part = s[..open].trim();
    let reg_part = &s[open + 1..s.len() - 1];
    let imm = if imm_part.is_empty() { 0 } else { imm_operand(line, imm_part, labels)? };
    let rs = parse_reg(reg_part, RegFile::Int)
        .ok_or_else(|| err(line, AsmErrorKind::BadOperand(reg_part.to_string())))?;
    Ok((imm, rs))
}

fn branch_target(
    line: usize,
    addr: u32,
    s: &str,
    labels: &BTreeMap<String, u32>,
) -> Result<i16, AsmError> {
    if let Some(&target) = labels.get(s) {
        // offset is in words, relative to the instruction after the branch
        let off = (target as i64 - (addr as i64 + 4)) / 4;
        i16::try_from(off).map_err(|_| err(line, AsmErrorKind::BranchRange { label: s.to_string(), off }))
    } else if let Some(v) = parse_int(s) {
        i16::try_from(v).map_err(|_| err(line, AsmErrorKind::ImmRange(v)))
    } else {
        Err(err(line, AsmErrorKind::UndefinedLabel(s.to_string())))
    }
}

fn encode_stmt(
    line: usize,
    addr: u32,
    mnemonic: &str,
    ops: &[&str],
    labels: &BTreeMap<String, u32>,
) -> Result<Instruction, AsmError> {
    let want = |n: usize| {
        if ops.len() == n {
            Ok(())
        } else {
            Err(err(line, AsmErrorKind::OperandCount { expected: n, got: ops.len() }))
        }
    };
    let int_reg = |s: &str| {
        parse_reg(s, RegFile::Int).ok_or_else(|| err(line, AsmErrorKind::BadOperand(s.to_string())))
    };
    let fp_reg = |s: &str| {
        parse_reg(s, RegFile::Fp).ok_or_else(|| err(line, AsmErrorKind::BadOperand(s.to_string())))
    };

    let int_op = |op: IntOp, ops: &[&str]| -> Result<Instruction, AsmError> {
        Ok(Instruction::IntOp { op, rd: int_reg(ops[0])?, rs: int_reg(ops[1])?, rt: int_reg(ops[2])? })
    };
    let fp_op = |op: FpOp, ops: &[&str]| -> Result<Instruction, AsmError> {
        Ok(Instruction::FpOp { op, fd: fp_reg(ops[0])?, fs: fp_reg(ops[1])?, ft: fp_reg(ops[2])? })
    };
    let branch = |cond: BranchCond, ops: &[&str]| -> Result<Instruction, AsmError> {
        Ok(Instruction::Branch {
            cond,
            rs: int_reg(ops[0])?,
            rt: int_reg(ops[1])?,
            off: branch_target(line, addr, ops[2], labels)?,
        })
    };

    match mnemonic {
        "nop" => want(0).map(|_| Instruction::Nop),
        "halt" => want(0).map(|_| Instruction::Halt),
        "add" => want(3).and_then(|_| int_op(IntOp::Add, ops)),
        "sub" => want(3).and_then(|_| int_op(IntOp::Sub, ops)),
        "mul" => want(3).and_then(|_| int_op(IntOp::Mul, ops)),
        "div" => want(3).and_then(|_| int_op(IntOp::Div, ops)),
        "and" => want(3).and_then(|_| int_op(IntOp::And, ops)),
        "or" => want(3).and_then(|_| int_op(IntOp::Or, ops)),
        "xor" => want(3).and_then(|_| int_op(IntOp::Xor, ops)),
        "slt" => want(3).and_then(|_| int_op(IntOp::Slt, ops)),
        "fadd" => want(3).and_then(|_| fp_op(FpOp::Add, ops)),
        "fsub" => want(3).and_then(|_| fp_op(FpOp::Sub, ops)),
        "fmul" => want(3).and_then(|_| fp_op(FpOp::Mul, ops)),
        "fdiv" => want(3).and_then(|_| fp_op(FpOp::Div, ops)),
        "addi" => {
            want(3)?;
            Ok(Instruction::Addi {
                rt: int_reg(ops[0])?,
                rs: int_reg(ops[1])?,
                imm: imm_operand(line, ops[2], labels)?,
            })
        }
        "lw" | "flw" => {
            want(2)?;
            let file = if mnemonic == "lw" { RegFile::Int } else { RegFile::Fp };
            let dst = if file == RegFile::Int { int_reg(ops[0])? } else { fp_reg(ops[0])? };
            let (imm, rs) = mem_operand(line, ops[1], labels)?;
            Ok(Instruction::Load { file, dst, rs, imm })
        }
        "sw" | "fsw" => {
            want(2)?;
            let file = if mnemonic == "sw" { RegFile::Int } else { RegFile::Fp };
            let src = if file == RegFile::Int { int_reg(ops[0])? } else { fp_reg(ops[0])? };
            let (imm, rs) = mem_operand(line, ops[1], labels)?;
            Ok(Instruction::Store { file, src, rs, imm })
        }
        "beq" => want(3).and_then(|_| branch(BranchCond::Eq, ops)),
        "bne" => want(3).and_then(|_| branch(BranchCond::Ne, ops)),
        "blt" => want(3).and_then(|_| branch(BranchCond::Lt, ops)),
        "j" => {
            want(1)?;
            let target = if let Some(&t) = labels.get(ops[0]) {
                t
            } else if let Some(v) = parse_int(ops[0]).filter(|&v| v >= 0 && v % 4 == 0) {
                v as u32
            } else {
                return Err(err(line, AsmErrorKind::BadOperand(ops[0].to_string())));
            };
            let word = target / 4;
            if word >= 1 << 26 {
                return Err(err(line, AsmErrorKind::JumpRange(target)));
            }
            Ok(Instruction::Jump { target_word: word })
        }
        _ => Err(err(line, AsmErrorKind::UnknownMnemonic(mnemonic.to_string()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode;

    #[test]
    fn addi_line_encodes_to_expected_word() {
        let p = assemble("addi r3, r3, 4\n").unwrap();
        assert_eq!(p.words, vec![0x2063_0004]);
        assert_eq!(p.base, DEFAULT_BASE);
    }

    #[test]
    fn backward_branch_offset() {
        // three instructions between the label and the branch: offset -4 words
        let src = "loop: addi r1, r1, 1\n\
                   addi r2, r2, 1\n\
                   addi r3, r3, 1\n\
                   bne r1, r2, loop\n";
        let p = assemble(src).unwrap();
        match decode(p.words[3]).unwrap() {
            Instruction::Branch { cond: BranchCond::Ne, off, .. } => assert_eq!(off, -4),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn undefined_label_is_reported_with_line() {
        let e = assemble("nop\nbne r1, r2, nowhere\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(matches!(e.kind, AsmErrorKind::UndefinedLabel(ref l) if l == "nowhere"));
    }

    #[test]
    fn duplicate_label_rejected() {
        let e = assemble("a: nop\na: nop\n").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::DuplicateLabel(_)));
    }

    #[test]
    fn directives_emit_data() {
        let src = ".org 0x2000\n\
                   start: lw r1, tab(r0)\n\
                   halt\n\
                   tab: .word 7, -1, 0x10, start\n\
                   f:   .float 1.5\n\
                   b:   .space 2\n";
        let p = assemble(src).unwrap();
        assert_eq!(p.base, 0x2000);
        assert_eq!(p.labels["tab"], 0x2008);
        assert_eq!(&p.words[2..6], &[7, 0xFFFF_FFFF, 0x10, 0x2000]);
        assert_eq!(p.words[6], 1.5f32.to_bits());
        assert_eq!(&p.words[7..9], &[0, 0]);
        // the lw picked up the label address as its immediate
        match decode(p.words[0]).unwrap() {
            Instruction::Load { imm, rs: 0, .. } => assert_eq!(imm, 0x2008),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn assembly_is_deterministic() {
        let src = crate::kernels::VADD;
        let a = assemble(src).unwrap();
        let b = assemble(src).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_image_bytes(), b.to_image_bytes());
    }

    #[test]
    fn image_bytes_round_trip() {
        let p = assemble("addi r1, r0, 5\nhalt\n.word 9\n").unwrap();
        let bytes = p.to_image_bytes();
        assert_eq!(&bytes[..4], &DEFAULT_BASE.to_le_bytes());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        let q = Program::from_image_bytes(&bytes).unwrap();
        assert_eq!(q.base, p.base);
        assert_eq!(q.words, p.words);
    }

    #[test]
    fn image_header_mismatch_detected() {
        let p = assemble("nop\n").unwrap();
        let mut bytes = p.to_image_bytes();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            Program::from_image_bytes(&bytes),
            Err(ImageError::CountMismatch { .. })
        ));
    }

    #[test]
    fn org_after_code_rejected() {
        let e = assemble("nop\n.org 0x4000\n").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::OrgAfterEmit));
    }
}
