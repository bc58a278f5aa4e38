//! Sequential architectural reference model.
//!
//! [`ArchState`] executes one instruction per step with no timing, no
//! speculation and no caches.  The detailed machine must produce exactly
//! this architectural state and exactly this store trace for every
//! program; the equivalence harness diffs the two after every run.
//!
//! The pure value semantics ([`int_alu`], [`fp_alu`], [`takes_branch`],
//! [`jump_target`]) live here too so the detailed pipeline's execute
//! stage cannot drift from the reference.

use std::collections::BTreeMap;

use crate::asm::Program;
use crate::isa::{decode, BranchCond, DecodeError, FpOp, Instruction, IntOp, Reg, RegFile};

/// Architectural trap.  All of these abort a run; a correct kernel ends
/// with `halt` and never traps.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Trap {
    #[error("integer divide by zero at pc {pc:#x}")]
    IntDivByZero { pc: u32 },
    #[error("misaligned access to {addr:#x} at pc {pc:#x}")]
    Misaligned { pc: u32, addr: u32 },
    #[error("pc {pc:#x} left the program image")]
    RunawayPc { pc: u32 },
    #[error("decode failure at pc {pc:#x}: {err}")]
    Decode { pc: u32, err: DecodeError },
    #[error("fuel exhausted after {steps} steps without halting")]
    OutOfFuel { steps: u64 },
}

/// Integer ALU semantics.  `None` means divide by zero.
pub fn int_alu(op: IntOp, a: u32, b: u32) -> Option<u32> {
    let (sa, sb) = (a as i32, b as i32);
    Some(match op {
        IntOp::Add => sa.wrapping_add(sb) as u32,
        IntOp::Sub => sa.wrapping_sub(sb) as u32,
        IntOp::Mul => sa.wrapping_mul(sb) as u32,
        IntOp::Div => {
            if sb == 0 {
                return None;
            }
            sa.wrapping_div(sb) as u32
        }
        IntOp::And => a & b,
        IntOp::Or => a | b,
        IntOp::Xor => a ^ b,
        IntOp::Slt => (sa < sb) as u32,
    })
}

/// Floating-point semantics over raw bit patterns (IEEE f32).
pub fn fp_alu(op: FpOp, a: u32, b: u32) -> u32 {
    let (fa, fb) = (f32::from_bits(a), f32::from_bits(b));
    let r = match op {
        FpOp::Add => fa + fb,
        FpOp::Sub => fa - fb,
        FpOp::Mul => fa * fb,
        FpOp::Div => fa / fb,
    };
    r.to_bits()
}

/// Branch comparison semantics (`blt` is signed).
pub fn takes_branch(cond: BranchCond, a: u32, b: u32) -> bool {
    match cond {
        BranchCond::Eq => a == b,
        BranchCond::Ne => a != b,
        BranchCond::Lt => (a as i32) < (b as i32),
    }
}

/// Absolute byte target of a `j` instruction.
pub fn jump_target(target_word: u32) -> u32 {
    target_word << 2
}

/// Architectural machine state: registers, memory, and the committed
/// store trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchState {
    pub pc: u32,
    pub int_regs: [u32; 32],
    pub fp_regs: [u32; 32],
    /// Word-granular memory, keyed by aligned byte address.  Absent
    /// words read as zero.
    pub mem: BTreeMap<u32, u32>,
    pub halted: bool,
    /// Instructions executed so far.
    pub committed: u64,
    /// Every store in program order as `(addr, value)`.
    pub store_trace: Vec<(u32, u32)>,
    /// Image bounds; executing outside [start, end) is a runaway trap.
    image_start: u32,
    image_end: u32,
}

impl ArchState {
    pub fn new(prog: &Program) -> Self {
        let mut mem = BTreeMap::new();
        for (i, &w) in prog.words.iter().enumerate() {
            if w != 0 {
                mem.insert(prog.base + 4 * i as u32, w);
            }
        }
        ArchState {
            pc: prog.base,
            int_regs: [0; 32],
            fp_regs: [0; 32],
            mem,
            halted: false,
            committed: 0,
            store_trace: Vec::new(),
            image_start: prog.base,
            image_end: prog.end(),
        }
    }

    pub fn load_word(&self, addr: u32) -> u32 {
        debug_assert_eq!(addr & 3, 0);
        self.mem.get(&addr).copied().unwrap_or(0)
    }

    pub fn store_word(&mut self, addr: u32, val: u32) {
        debug_assert_eq!(addr & 3, 0);
        if val == 0 {
            self.mem.remove(&addr);
        } else {
            self.mem.insert(addr, val);
        }
    }

    pub fn read_reg(&self, r: Reg) -> u32 {
        match r.file {
            RegFile::Int => {
                if r.idx == 0 {
                    0
                } else {
                    self.int_regs[r.idx as usize]
                }
            }
            RegFile::Fp => self.fp_regs[r.idx as usize],
        }
    }

    pub fn write_reg(&mut self, r: Reg, val: u32) {
        match r.file {
            RegFile::Int => {
                if r.idx != 0 {
                    self.int_regs[r.idx as usize] = val;
                }
            }
            RegFile::Fp => self.fp_regs[r.idx as usize] = val,
        }
    }

    fn mem_addr(&self, rs: u8, imm: i16) -> Result<u32, Trap> {
        let addr = self.read_reg(Reg::int(rs)).wrapping_add(imm as i32 as u32);
        if addr & 3 != 0 {
            return Err(Trap::Misaligned { pc: self.pc, addr });
        }
        Ok(addr)
    }

    /// Execute one instruction.  Does nothing once halted.
    pub fn step(&mut self) -> Result<(), Trap> {
        if self.halted {
            return Ok(());
        }
        if self.pc < self.image_start || self.pc >= self.image_end {
            return Err(Trap::RunawayPc { pc: self.pc });
        }
        let word = self.load_word(self.pc);
        let inst = decode(word).map_err(|err| Trap::Decode { pc: self.pc, err })?;
        let mut next_pc = self.pc.wrapping_add(4);
        match inst {
            Instruction::Nop => {}
            Instruction::Halt => self.halted = true,
            Instruction::IntOp { op, rd, rs, rt } => {
                let v = int_alu(op, self.read_reg(Reg::int(rs)), self.read_reg(Reg::int(rt)))
                    .ok_or(Trap::IntDivByZero { pc: self.pc })?;
                self.write_reg(Reg::int(rd), v);
            }
            Instruction::FpOp { op, fd, fs, ft } => {
                let v = fp_alu(op, self.read_reg(Reg::fp(fs)), self.read_reg(Reg::fp(ft)));
                self.write_reg(Reg::fp(fd), v);
            }
            Instruction::Addi { rt, rs, imm } => {
                let v = self.read_reg(Reg::int(rs)).wrapping_add(imm as i32 as u32);
                self.write_reg(Reg::int(rt), v);
            }
            Instruction::Load { file, dst, rs, imm } => {
                let addr = self.mem_addr(rs, imm)?;
                let v = self.load_word(addr);
                self.write_reg(Reg { file, idx: dst }, v);
            }
            Instruction::Store { file, src, rs, imm } => {
                let addr = self.mem_addr(rs, imm)?;
                let v = self.read_reg(Reg { file, idx: src });
                self.store_word(addr, v);
                self.store_trace.push((addr, v));
            }
            Instruction::Branch { cond, rs, rt, off } => {
                if takes_branch(cond, self.read_reg(Reg::int(rs)), self.read_reg(Reg::int(rt))) {
                    next_pc = self
                        .pc
                        .wrapping_add(4)
                        .wrapping_add((off as i32 as u32).wrapping_mul(4));
                }
            }
            Instruction::Jump { target_word } => {
                next_pc = jump_target(target_word);
            }
        }
        self.committed += 1;
        if !self.halted {
            self.pc = next_pc;
        }
        Ok(())
    }

    /// Run until halt or until `fuel` instructions have executed.
    /// Returns the number of instructions executed.
    pub fn run(&mut self, fuel: u64) -> Result<u64, Trap> {
        let start = self.committed;
        while !self.halted {
            if self.committed - start >= fuel {
                return Err(Trap::OutOfFuel { steps: fuel });
            }
            self.step()?;
        }
        Ok(self.committed - start)
    }

    /// Human-readable differences between two architectural states.
    /// Empty means equivalent (pc and committed counts are compared by
    /// the caller if it cares; this covers registers, memory, halt).
    pub fn diff(&self, other: &ArchState) -> Vec<String> {
        let mut out = Vec::new();
        if self.halted != other.halted {
            out.push(format!("halted: {} vs {}", self.halted, other.halted));
        }
        for i in 0..32 {
            if self.int_regs[i] != other.int_regs[i] {
                out.push(format!(
                    "r{i}: {:#x} vs {:#x}",
                    self.int_regs[i], other.int_regs[i]
                ));
            }
            if self.fp_regs[i] != other.fp_regs[i] {
                out.push(format!(
                    "f{i}: {:#x} vs {:#x}",
                    self.fp_regs[i], other.fp_regs[i]
                ));
            }
        }
        let addrs: std::collections::BTreeSet<u32> = self
            .mem
            .keys()
            .chain(other.mem.keys())
            .copied()
            .collect();
        for addr in addrs {
            let (a, b) = (self.load_word(addr), other.load_word(addr));
            if a != b {
                out.push(format!("mem[{addr:#x}]: {a:#x} vs {b:#x}"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::kernels;

    fn run_kernel(src: &str) -> (Program, ArchState) {
        let prog = assemble(src).unwrap();
        let mut st = ArchState::new(&prog);
        st.run(50_000_000).unwrap();
        (prog, st)
    }

    #[test]
    fn vadd_stores_and_count() {
        let (prog, st) = run_kernel(kernels::VADD);
        assert!(st.halted);
        // 9 prologue + 12*512 init (two elements per pass) + 4 pointer
        // reloads + 9*1024 main + halt
        assert_eq!(st.committed, 9 + 12 * 512 + 4 + 9 * 1024 + 1);
        // trace: 2048 init stores then 1024 ascending stores to c
        assert_eq!(st.store_trace.len(), 3072);
        let c = prog.labels["c_arr"];
        for (i, &(addr, _)) in st.store_trace[2048..].iter().enumerate() {
            assert_eq!(addr, c + 4 * i as u32);
        }
        // c[0] = 1.0 + 2.0
        assert_eq!(st.load_word(c), 3.0f32.to_bits());
        // spot-check an interior element
        let i = 700u32;
        let a = f32::from_bits(0x3F80_0000 + 256 * i);
        let b = f32::from_bits(0x4000_0000 + 512 * i);
        assert_eq!(st.load_word(c + 4 * i), (a + b).to_bits());
    }

    #[test]
    fn dot_reduces() {
        let (prog, st) = run_kernel(kernels::DOT);
        assert!(st.halted);
        let mut acc = 0.0f32;
        for i in 0..1024u32 {
            let a = f32::from_bits(0x3F80_0000 + 128 * i);
            let b = f32::from_bits(0x3F00_0000 + 64 * i);
            acc += a * b;
        }
        assert_eq!(st.load_word(prog.labels["result"]), acc.to_bits());
        assert_eq!(st.committed, 9 + 8 * 1024 + 3 + 8 * 1024 + 2);
    }

    #[test]
    fn first_diff_prefix_sums() {
        let (prog, st) = run_kernel(kernels::FIRST_DIFF);
        assert!(st.halted);
        let x = prog.labels["x_arr"];
        // x[i] = 1 + 2 + ... + i
        assert_eq!(st.load_word(x), 0);
        assert_eq!(st.load_word(x + 4), 1);
        assert_eq!(st.load_word(x + 4 * 2048), 2048 * 2049 / 2);
    }

    #[test]
    fn cond_accumulators() {
        let (prog, st) = run_kernel(kernels::COND);
        assert!(st.halted);
        // independent recomputation of the guarded accumulators
        let (mut a, mut b, mut c) = (0i32, 0i32, 0i32);
        for i in 0..2048i32 {
            let v = (i * 37) & 63;
            if v & 1 != 0 {
                a += v;
            }
            if v & 2 != 0 {
                b += 1;
            }
            if v >= 40 {
                c -= v;
            }
            if v % 4 == 3 {
                a += b;
            }
            if v >= 8 {
                c += 2;
            }
        }
        assert_eq!(st.load_word(prog.labels["res_a"]), a as u32);
        assert_eq!(st.load_word(prog.labels["res_b"]), b as u32);
        assert_eq!(st.load_word(prog.labels["res_c"]), c as u32);
    }

    #[test]
    fn stride_irregular_walk() {
        let (prog, st) = run_kernel(kernels::STRIDE_IRREGULAR);
        assert!(st.halted);
        // replay the stride automaton: r2 starts at -2, resets at 3
        let arr = prog.labels["arr"];
        let seeded = [5u32, 7, 9, 11];
        let mut r2 = -2i32;
        let mut r3 = arr;
        let mut sum = 0u32;
        let mut committed = 5u64; // prologue
        for _ in 0..65536 {
            r2 += 1;
            if r2 < 3 {
                r3 += 4;
                committed += 7; // addi, blt, addi, lw, add, addi, bne
            } else {
                r2 = 0;
                r3 += 12;
                committed += 9; // reset leg adds addi + j
            }
            let idx = (r3 - arr) / 4;
            sum = sum.wrapping_add(*seeded.get(idx as usize).unwrap_or(&0));
        }
        committed += 2; // sw + halt
        assert_eq!(st.int_regs[3], r3);
        assert_eq!(st.load_word(prog.labels["sres"]), sum);
        assert_eq!(st.committed, committed);
        // the walk reads 7, 9, 11 from the seeded prefix and zeros after
        assert_eq!(sum, 27);
    }

    #[test]
    fn matmul_result() {
        let (prog, st) = run_kernel(kernels::MATMUL3);
        assert!(st.halted);
        // recompute c[i][j] with the same synthetic inputs
        let abits = |idx: u32| 0x3F80_0000u32 + 64 * idx;
        let bbits = |idx: u32| 0x4000_0000u32 + 32 * idx;
        let c = prog.labels["c_arr"];
        for &(i, j) in &[(0u32, 0u32), (3, 7), (15, 15)] {
            // same association order as the kernel: one mul + add per k
            let mut acc = 0.0f32;
            for k in 0..16u32 {
                let a = f32::from_bits(abits(i * 16 + k));
                let b = f32::from_bits(bbits(k * 16 + j));
                acc += a * b;
            }
            assert_eq!(st.load_word(c + 4 * (i * 16 + j)), acc.to_bits());
        }
    }

    #[test]
    fn misaligned_load_traps() {
        let prog = assemble(
            "        addi r2, r0, 2\n        lw r3, 0(r2)\n        halt\n",
        )
        .unwrap();
        let mut st = ArchState::new(&prog);
        let err = st.run(10).unwrap_err();
        assert!(matches!(err, Trap::Misaligned { addr: 2, .. }));
    }

    #[test]
    fn divide_by_zero_traps() {
        let prog = assemble(
            "        addi r2, r0, 7\n        div r4, r2, r3\n        halt\n",
        )
        .unwrap();
        let mut st = ArchState::new(&prog);
        let err = st.run(10).unwrap_err();
        assert!(matches!(err, Trap::IntDivByZero { .. }));
    }

    #[test]
    fn runaway_pc_traps() {
        // no halt: execution falls off the end of the image
        let prog = assemble("        addi r2, r0, 1\n").unwrap();
        let mut st = ArchState::new(&prog);
        let err = st.run(10).unwrap_err();
        assert!(matches!(err, Trap::RunawayPc { .. }));
    }

    #[test]
    fn fuel_runs_out() {
        let prog = assemble("spin:   j spin\n").unwrap();
        let mut st = ArchState::new(&prog);
        let err = st.run(100).unwrap_err();
        assert_eq!(err, Trap::OutOfFuel { steps: 100 });
    }

    #[test]
    fn r0_stays_zero() {
        let prog = assemble("        addi r0, r0, 5\n        addi r2, r0, 3\n        halt\n")
            .unwrap();
        let mut st = ArchState::new(&prog);
        st.run(10).unwrap();
        assert_eq!(st.int_regs[0], 0);
        assert_eq!(st.int_regs[2], 3);
    }

    #[test]
    fn int_alu_semantics() {
        assert_eq!(int_alu(IntOp::Add, 0xFFFF_FFFF, 1), Some(0));
        assert_eq!(int_alu(IntOp::Sub, 3, 5), Some(-2i32 as u32));
        assert_eq!(int_alu(IntOp::Mul, 0x10000, 0x10000), Some(0));
        assert_eq!(int_alu(IntOp::Div, 7, 2), Some(3));
        assert_eq!(int_alu(IntOp::Div, (-7i32) as u32, 2), Some((-3i32) as u32));
        assert_eq!(int_alu(IntOp::Div, 1, 0), None);
        assert_eq!(int_alu(IntOp::Slt, (-1i32) as u32, 0), Some(1));
        assert_eq!(int_alu(IntOp::Slt, 1, 0), Some(0));
    }

    #[test]
    fn branch_semantics() {
        assert!(takes_branch(BranchCond::Eq, 5, 5));
        assert!(!takes_branch(BranchCond::Eq, 5, 6));
        assert!(takes_branch(BranchCond::Ne, 5, 6));
        assert!(takes_branch(BranchCond::Lt, (-1i32) as u32, 0));
        assert!(!takes_branch(BranchCond::Lt, 0, (-1i32) as u32));
    }

    #[test]
    fn store_trace_records_values() {
        let prog = assemble(
            "        addi r2, r0, 0x40\n        addi r3, r0, 9\n        sw r3, 0(r2)\n        sw r0, 4(r2)\n        halt\n",
        )
        .unwrap();
        let mut st = ArchState::new(&prog);
        st.run(10).unwrap();
        assert_eq!(st.store_trace, vec![(0x40, 9), (0x44, 0)]);
        // storing zero erases the word from the sparse map
        assert_eq!(st.load_word(0x44), 0);
        assert!(!st.mem.contains_key(&0x44));
    }
}
