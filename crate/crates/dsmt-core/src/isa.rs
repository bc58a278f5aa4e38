//! Word-encoded RISC instruction set.
//!
//! Every instruction is one 32-bit word. Three layouts are used:
//!
//! ```text
//! R-type:  op:6 | rs:5 | rt:5 | rd:5 | 0:5 | funct:6     (op 0x00 int, 0x11 fp)
//! I-type:  op:6 | rs:5 | rt:5 | imm:16                   (imm is sign-extended)
//! J-type:  op:6 | target:26                               (target is a word address)
//! ```
//!
//! There are 32 integer registers (r0 reads as zero) and 32 floating-point
//! registers (f0 is ordinary). Branch offsets are in words, relative to the
//! instruction after the branch. Loads and stores use `imm(rs)` addressing
//! with byte addresses that must be word-aligned.

use thiserror::Error;

pub const OP_RTYPE: u8 = 0x00;
pub const OP_J: u8 = 0x02;
pub const OP_BEQ: u8 = 0x04;
pub const OP_BNE: u8 = 0x05;
pub const OP_BLT: u8 = 0x06;
pub const OP_ADDI: u8 = 0x08;
pub const OP_FP: u8 = 0x11;
pub const OP_LW: u8 = 0x23;
pub const OP_SW: u8 = 0x2B;
pub const OP_FLW: u8 = 0x31;
pub const OP_FSW: u8 = 0x39;
pub const OP_HALT: u8 = 0x3E;
/// 0x3F is permanently reserved; decoding it is always an error.
pub const OP_RESERVED: u8 = 0x3F;

pub const FUNCT_NOP: u8 = 0x00;
pub const FUNCT_MUL: u8 = 0x18;
pub const FUNCT_DIV: u8 = 0x1A;
pub const FUNCT_ADD: u8 = 0x20;
pub const FUNCT_SUB: u8 = 0x22;
pub const FUNCT_AND: u8 = 0x24;
pub const FUNCT_OR: u8 = 0x25;
pub const FUNCT_XOR: u8 = 0x26;
pub const FUNCT_SLT: u8 = 0x2A;

pub const FUNCT_FADD: u8 = 0x00;
pub const FUNCT_FSUB: u8 = 0x01;
pub const FUNCT_FMUL: u8 = 0x02;
pub const FUNCT_FDIV: u8 = 0x03;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntOp {
    Add,
    Sub,
    Mul,
    Div,
    And,
    Or,
    Xor,
    Slt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchCond {
    Eq,
    Ne,
    Lt,
}

/// Which register file an operand index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RegFile {
    Int,
    Fp,
}

/// A register operand: file plus index 0..=31.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Reg {
    pub file: RegFile,
    pub idx: u8,
}

impl Reg {
    pub fn int(idx: u8) -> Reg {
        debug_assert!(idx < 32);
        Reg { file: RegFile::Int, idx }
    }
    pub fn fp(idx: u8) -> Reg {
        debug_assert!(idx < 32);
        Reg { file: RegFile::Fp, idx }
    }
    /// Flat index 0..=63 used by tables that cover both files.
    pub fn flat(self) -> usize {
        match self.file {
            RegFile::Int => self.idx as usize,
            RegFile::Fp => 32 + self.idx as usize,
        }
    }
    pub fn from_flat(flat: usize) -> Reg {
        debug_assert!(flat < 64);
        if flat < 32 {
            Reg::int(flat as u8)
        } else {
            Reg::fp((flat - 32) as u8)
        }
    }
}

impl std::fmt::Display for Reg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.file {
            RegFile::Int => write!(f, "r{}", self.idx),
            RegFile::Fp => write!(f, "f{}", self.idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instruction {
    Nop,
    Halt,
    /// rd = rs `op` rt, integer file
    IntOp { op: IntOp, rd: u8, rs: u8, rt: u8 },
    /// fd = fs `op` ft, fp file
    FpOp { op: FpOp, fd: u8, fs: u8, ft: u8 },
    /// rt = rs + imm
    Addi { rt: u8, rs: u8, imm: i16 },
    /// dst = mem[rs + imm]; `file` picks lw vs flw
    Load { file: RegFile, dst: u8, rs: u8, imm: i16 },
    /// mem[rs + imm] = src; `file` picks sw vs fsw
    Store { file: RegFile, src: u8, rs: u8, imm: i16 },
    /// if cond(rs, rt): pc = pc + 4 + off*4
    Branch { cond: BranchCond, rs: u8, rt: u8, off: i16 },
    /// pc = target_word * 4
    Jump { target_word: u32 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("opcode 0x3f is reserved (word {0:#010x})")]
    Reserved(u32),
    #[error("unknown opcode {op:#04x} (word {word:#010x})")]
    UnknownOpcode { op: u8, word: u32 },
    #[error("unknown funct {funct:#04x} for opcode {op:#04x} (word {word:#010x})")]
    UnknownFunct { op: u8, funct: u8, word: u32 },
    #[error("nonzero shamt field in R-type word {0:#010x}")]
    NonZeroShamt(u32),
}

fn op_field(w: u32) -> u8 {
    (w >> 26) as u8
}
fn rs_field(w: u32) -> u8 {
    (w >> 21 & 0x1F) as u8
}
fn rt_field(w: u32) -> u8 {
    (w >> 16 & 0x1F) as u8
}
fn rd_field(w: u32) -> u8 {
    (w >> 11 & 0x1F) as u8
}
fn shamt_field(w: u32) -> u8 {
    (w >> 6 & 0x1F) as u8
}
fn funct_field(w: u32) -> u8 {
    (w & 0x3F) as u8
}
fn imm_field(w: u32) -> i16 {
    (w & 0xFFFF) as u16 as i16
}

fn encode_r(op: u8, rs: u8, rt: u8, rd: u8, funct: u8) -> u32 {
    (op as u32) << 26 | (rs as u32) << 21 | (rt as u32) << 16 | (rd as u32) << 11 | funct as u32
}
fn encode_i(op: u8, rs: u8, rt: u8, imm: i16) -> u32 {
    (op as u32) << 26 | (rs as u32) << 21 | (rt as u32) << 16 | (imm as u16 as u32)
}

pub fn decode(word: u32) -> Result<Instruction, DecodeError> {
    let op = op_field(word);
    match op {
        OP_RTYPE => {
            let funct = funct_field(word);
            if funct == FUNCT_NOP {
                // canonical nop is the all-zero word; any funct-0 word decodes as nop
                return Ok(Instruction::Nop);
            }
            if shamt_field(word) != 0 {
                return Err(DecodeError::NonZeroShamt(word));
            }
            let (rs, rt, rd) = (rs_field(word), rt_field(word), rd_field(word));
            let op2 = match funct {
                FUNCT_ADD => IntOp::Add,
                FUNCT_SUB => IntOp::Sub,
                FUNCT_MUL => IntOp::Mul,
                FUNCT_DIV => IntOp::Div,
                FUNCT_AND => IntOp::And,
                FUNCT_OR => IntOp::Or,
                FUNCT_XOR => IntOp::Xor,
                FUNCT_SLT => IntOp::Slt,
                _ => return Err(DecodeError::UnknownFunct { op, funct, word }),
            };
            Ok(Instruction::IntOp { op: op2, rd, rs, rt })
        }
        OP_FP => {
            if shamt_field(word) != 0 {
                return Err(DecodeError::NonZeroShamt(word));
            }
            let (fs, ft, fd) = (rs_field(word), rt_field(word), rd_field(word));
            let op2 = match funct_field(word) {
                FUNCT_FADD => FpOp::Add,
                FUNCT_FSUB => FpOp::Sub,
                FUNCT_FMUL => FpOp::Mul,
                FUNCT_FDIV => FpOp::Div,
                funct => return Err(DecodeError::UnknownFunct { op, funct, word }),
            };
            Ok(Instruction::FpOp { op: op2, fd, fs, ft })
        }
        OP_ADDI => Ok(Instruction::Addi { rt: rt_field(word), rs: rs_field(word), imm: imm_field(word) }),
        OP_LW => Ok(Instruction::Load { file: RegFile::Int, dst: rt_field(word), rs: rs_field(word), imm: imm_field(word) }),
        OP_FLW => Ok(Instruction::Load { file: RegFile::Fp, dst: rt_field(word), rs: rs_field(word), imm: imm_field(word) }),
        OP_SW => Ok(Instruction::Store { file: RegFile::Int, src: rt_field(word), rs: rs_field(word), imm: imm_field(word) }),
        OP_FSW => Ok(Instruction::Store { file: RegFile::Fp, src: rt_field(word), rs: rs_field(word), imm: imm_field(word) }),
        OP_BEQ => Ok(Instruction::Branch { cond: BranchCond::Eq, rs: rs_field(word), rt: rt_field(word), off: imm_field(word) }),
        OP_BNE => Ok(Instruction::Branch { cond: BranchCond::Ne, rs: rs_field(word), rt: rt_field(word), off: imm_field(word) }),
        OP_BLT => Ok(Instruction::Branch { cond: BranchCond::Lt, rs: rs_field(word), rt: rt_field(word), off: imm_field(word) }),
        OP_J => Ok(Instruction::Jump { target_word: word & 0x03FF_FFFF }),
        OP_HALT => Ok(Instruction::Halt),
        OP_RESERVED => Err(DecodeError::Reserved(word)),
        _ => Err(DecodeError::UnknownOpcode { op, word }),
    }
}

pub fn encode(inst: &Instruction) -> u32 {
    match *inst {
        Instruction::Nop => 0,
        Instruction::Halt => (OP_HALT as u32) << 26,
        Instruction::IntOp { op, rd, rs, rt } => {
            let funct = match op {
                IntOp::Add => FUNCT_ADD,
                IntOp::Sub => FUNCT_SUB,
                IntOp::Mul => FUNCT_MUL,
                IntOp::Div => FUNCT_DIV,
                IntOp::And => FUNCT_AND,
                IntOp::Or => FUNCT_OR,
                IntOp::Xor => FUNCT_XOR,
                IntOp::Slt => FUNCT_SLT,
            };
            encode_r(OP_RTYPE, rs, rt, rd, funct)
        }
        Instruction::FpOp { op, fd, fs, ft } => {
            let funct = match op {
                FpOp::Add => FUNCT_FADD,
                FpOp::Sub => FUNCT_FSUB,
                FpOp::Mul => FUNCT_FMUL,
                FpOp::Div => FUNCT_FDIV,
            };
            encode_r(OP_FP, fs, ft, fd, funct)
        }
        Instruction::Addi { rt, rs, imm } => encode_i(OP_ADDI, rs, rt, imm),
        Instruction::Load { file: RegFile::Int, dst, rs, imm } => encode_i(OP_LW, rs, dst, imm),
        Instruction::Load { file: RegFile::Fp, dst, rs, imm } => encode_i(OP_FLW, rs, dst, imm),
        Instruction::Store { file: RegFile::Int, src, rs, imm } => encode_i(OP_SW, rs, src, imm),
        Instruction::Store { file: RegFile::Fp, src, rs, imm } => encode_i(OP_FSW, rs, src, imm),
        Instruction::Branch { cond: BranchCond::Eq, rs, rt, off } => encode_i(OP_BEQ, rs, rt, off),
        Instruction::Branch { cond: BranchCond::Ne, rs, rt, off } => encode_i(OP_BNE, rs, rt, off),
        Instruction::Branch { cond: BranchCond::Lt, rs, rt, off } => encode_i(OP_BLT, rs, rt, off),
        Instruction::Jump { target_word } => (OP_J as u32) << 26 | (target_word & 0x03FF_FFFF),
    }
}

/// Number of functional-unit classes; indexes per-class config arrays.
pub const NUM_FU_CLASSES: usize = 7;

/// Functional-unit class an instruction executes on. Counts and latencies are
/// configured per class in [`crate::config::SimConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FuClass {
    IntAlu,
    IntMul,
    IntDiv,
    FpAdd,
    FpDiv,
    FpMul,
    LoadStore,
}

impl FuClass {
    pub const ALL: [FuClass; 7] = [
        FuClass::IntAlu,
        FuClass::IntMul,
        FuClass::IntDiv,
        FuClass::FpAdd,
        FuClass::FpDiv,
        FuClass::FpMul,
        FuClass::LoadStore,
    ];

    pub fn index(self) -> usize {
        match self {
            FuClass::IntAlu => 0,
            FuClass::IntMul => 1,
            FuClass::IntDiv => 2,
            FuClass::FpAdd => 3,
            FuClass::FpDiv => 4,
            FuClass::FpMul => 5,
            FuClass::LoadStore => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FuClass::IntAlu => "int-alu",
            FuClass::IntMul => "int-mul",
            FuClass::IntDiv => "int-div",
            FuClass::FpAdd => "fp-add",
            FuClass::FpDiv => "fp-div",
            FuClass::FpMul => "fp-mul",
            FuClass::LoadStore => "load-store",
        }
    }

    /// Divide units are not pipelined: one operation occupies the unit for its
    /// whole latency. Every other class accepts a new operation each cycle.
    pub fn pipelined(self) -> bool {
        !matches!(self, FuClass::IntDiv | FuClass::FpDiv)
    }
}

impl Instruction {
    pub fn fu_class(&self) -> FuClass {
        match self {
            Instruction::IntOp { op: IntOp::Mul, .. } => FuClass::IntMul,
            Instruction::IntOp { op: IntOp::Div, .. } => FuClass::IntDiv,
            Instruction::FpOp { op: FpOp::Add | FpOp::Sub, .. } => FuClass::FpAdd,
            Instruction::FpOp { op: FpOp::Mul, .. } => FuClass::FpMul,
            Instruction::FpOp { op: FpOp::Div, .. } => FuClass::FpDiv,
            Instruction::Load { .. } | Instruction::Store { .. } => FuClass::LoadStore,
            _ => FuClass::IntAlu,
        }
    }

    /// Source register operands, in operand order.
    pub fn sources(&self) -> Vec<Reg> {
        match *self {
            Instruction::IntOp { rs, rt, .. } => vec![Reg::int(rs), Reg::int(rt)],
            Instruction::FpOp { fs, ft, .. } => vec![Reg::fp(fs), Reg::fp(ft)],
            Instruction::Addi { rs, .. } => vec![Reg::int(rs)],
            Instruction::Load { rs, .. } => vec![Reg::int(rs)],
            Instruction::Store { file, src, rs, .. } => {
                vec![Reg::int(rs), Reg { file, idx: src }]
            }
            Instruction::Branch { rs, rt, .. } => vec![Reg::int(rs), Reg::int(rt)],
            Instruction::Nop | Instruction::Halt | Instruction::Jump { .. } => vec![],
        }
    }

    /// Destination register, if the instruction writes one. Writes to r0 are
    /// architecturally discarded but still reported here.
    pub fn dest(&self) -> Option<Reg> {
        match *self {
            Instruction::IntOp { rd, .. } => Some(Reg::int(rd)),
            Instruction::FpOp { fd, .. } => Some(Reg::fp(fd)),
            Instruction::Addi { rt, .. } => Some(Reg::int(rt)),
            Instruction::Load { file, dst, .. } => Some(Reg { file, idx: dst }),
            _ => None,
        }
    }

    pub fn is_branch(&self) -> bool {
        matches!(self, Instruction::Branch { .. })
    }

    pub fn is_load(&self) -> bool {
        matches!(self, Instruction::Load { .. })
    }

    pub fn is_store(&self) -> bool {
        matches!(self, Instruction::Store { .. })
    }

    /// The `addi rd, rd, imm` shape watched by the stride table.
    pub fn stride_update(&self) -> Option<(u8, i16)> {
        match *self {
            Instruction::Addi { rt, rs, imm } if rt == rs && rt != 0 => Some((rt, imm)),
            _ => None,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::Nop => "nop",
            Instruction::Halt => "halt",
            Instruction::IntOp { op, .. } => match op {
                IntOp::Add => "add",
                IntOp::Sub => "sub",
                IntOp::Mul => "mul",
                IntOp::Div => "div",
                IntOp::And => "and",
                IntOp::Or => "or",
                IntOp::Xor => "xor",
                IntOp::Slt => "slt",
            },
            Instruction::FpOp { op, .. } => match op {
                FpOp::Add => "fadd",
                FpOp::Sub => "fsub",
                FpOp::Mul => "fmul",
                FpOp::Div => "fdiv",
            },
            Instruction::Addi { .. } => "addi",
            Instruction::Load { file: RegFile::Int, .. } => "lw",
            Instruction::Load { file: RegFile::Fp, .. } => "flw",
            Instruction::Store { file: RegFile::Int, .. } => "sw",
            Instruction::Store { file: RegFile::Fp, .. } => "fsw",
            Instruction::Branch { cond, .. } => match cond {
                BranchCond::Eq => "beq",
                BranchCond::Ne => "bne",
                BranchCond::Lt => "blt",
            },
            Instruction::Jump { .. } => "j",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn addi_example_encoding() {
        // addi r3, r3, 4
        let inst = Instruction::Addi { rt: 3, rs: 3, imm: 4 };
        assert_eq!(encode(&inst), 0x2063_0004);
        assert_eq!(decode(0x2063_0004).unwrap(), inst);
    }

    #[test]
    fn zero_word_is_nop() {
        assert_eq!(decode(0).unwrap(), Instruction::Nop);
        assert_eq!(encode(&Instruction::Nop), 0);
    }

    #[test]
    fn reserved_opcode_fails() {
        let word = 0xFFFF_FFFF; // opcode field = 0x3F
        assert!(matches!(decode(word), Err(DecodeError::Reserved(_))));
    }

    #[test]
    fn unknown_opcode_fails() {
        let word = 0x0C00_0000; // opcode 0x03 is unassigned
        assert!(matches!(decode(word), Err(DecodeError::UnknownOpcode { op: 0x03, .. })));
    }

    #[test]
    fn fu_classes_cover_all_shapes() {
        let cases = [
            (Instruction::Addi { rt: 1, rs: 1, imm: 1 }, FuClass::IntAlu, false),
            (Instruction::IntOp { op: IntOp::Mul, rd: 1, rs: 2, rt: 3 }, FuClass::IntMul, true),
            (Instruction::IntOp { op: IntOp::Div, rd: 1, rs: 2, rt: 3 }, FuClass::IntDiv, false),
            (Instruction::FpOp { op: FpOp::Sub, fd: 1, fs: 2, ft: 3 }, FuClass::FpAdd, true),
            (Instruction::FpOp { op: FpOp::Mul, fd: 1, fs: 2, ft: 3 }, FuClass::FpMul, true),
            (Instruction::FpOp { op: FpOp::Div, fd: 1, fs: 2, ft: 3 }, FuClass::FpDiv, false),
            (Instruction::Load { file: RegFile::Fp, dst: 1, rs: 2, imm: 0 }, FuClass::LoadStore, true),
            (Instruction::Branch { cond: BranchCond::Lt, rs: 1, rt: 2, off: -1 }, FuClass::IntAlu, false),
        ];
        for (inst, class, _) in cases {
            assert_eq!(inst.fu_class(), class, "{:?}", inst);
        }
        // divides are the only unpipelined classes
        assert!(!FuClass::IntDiv.pipelined());
        assert!(!FuClass::FpDiv.pipelined());
        assert!(FuClass::IntMul.pipelined());
    }

    #[test]
    fn stride_update_shape() {
        assert_eq!(Instruction::Addi { rt: 3, rs: 3, imm: 4 }.stride_update(), Some((3, 4)));
        // rd != rs does not match
        assert_eq!(Instruction::Addi { rt: 5, rs: 2, imm: 4 }.stride_update(), None);
        // r0 writes never match
        assert_eq!(Instruction::Addi { rt: 0, rs: 0, imm: 4 }.stride_update(), None);
    }

    fn arb_reg() -> impl Strategy<Value = u8> {
        0u8..32
    }

    fn arb_instruction() -> impl Strategy<Value = Instruction> {
        prop_oneof![
            Just(Instruction::Nop),
            Just(Instruction::Halt),
            (
                prop_oneof![
                    Just(IntOp::Add),
                    Just(IntOp::Sub),
                    Just(IntOp::Mul),
                    Just(IntOp::Div),
                    Just(IntOp::And),
                    Just(IntOp::Or),
                    Just(IntOp::Xor),
                    Just(IntOp::Slt)
                ],
                arb_reg(),
                arb_reg(),
                arb_reg()
            )
                .prop_map(|(op, rd, rs, rt)| Instruction::IntOp { op, rd, rs, rt }),
            (
                prop_oneof![Just(FpOp::Add), Just(FpOp::Sub), Just(FpOp::Mul), Just(FpOp::Div)],
                arb_reg(),
                arb_reg(),
                arb_reg()
            )
                .prop_map(|(op, fd, fs, ft)| Instruction::FpOp { op, fd, fs, ft }),
            (arb_reg(), arb_reg(), any::<i16>())
                .prop_map(|(rt, rs, imm)| Instruction::Addi { rt, rs, imm }),
            (prop_oneof![Just(RegFile::Int), Just(RegFile::Fp)], arb_reg(), arb_reg(), any::<i16>())
                .prop_map(|(file, dst, rs, imm)| Instruction::Load { file, dst, rs, imm }),
            (prop_oneof![Just(RegFile::Int), Just(RegFile::Fp)], arb_reg(), arb_reg(), any::<i16>())
                .prop_map(|(file, src, rs, imm)| Instruction::Store { file, src, rs, imm }),
            (
                prop_oneof![Just(BranchCond::Eq), Just(BranchCond::Ne), Just(BranchCond::Lt)],
                arb_reg(),
                arb_reg(),
                any::<i16>()
            )
                .prop_map(|(cond, rs, rt, off)| Instruction::Branch { cond, rs, rt, off }),
            (0u32..1 << 26).prop_map(|target_word| Instruction::Jump { target_word }),
        ]
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(inst in arb_instruction()) {
            let word = encode(&inst);
            prop_assert_eq!(decode(word).unwrap(), inst);
        }
    }

    #[test]
    fn flat_reg_round_trip() {
        for flat in 0..64 {
            assert_eq!(Reg::from_flat(flat).flat(), flat);
        }
    }
}
