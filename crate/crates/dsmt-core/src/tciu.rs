//! Thread contexts and the inter-context speculation protocol.
//!
//! During a threading episode the machine keeps a ring of contexts in
//! iteration order: the front runs the oldest, non-speculative
//! iteration and owns architectural state; every other context runs a
//! future iteration cloned from the head's register file with
//! stride-predicted registers overwritten.  Contexts promote off the
//! front as iterations complete and are squashed (and immediately
//! re-cloned) from any position where a speculation check fails.
//!
//! Per-register speculation state lives in each context: an R bit
//! (locally committed write this iteration), a D bit (read-before-write
//! observed this iteration), and an L record remembering any value the
//! context consumed from outside itself — a predecessor's committed
//! write, a blind read of the head file, or a planted stride
//! prediction.  The cross-read and commit-check logic over these bits
//! lives in the register dependence module.

use std::collections::VecDeque;

use serde::Serialize;

use crate::config::SimConfig;
use crate::memory::StoreBuffer;
use crate::sat::SatCounter2;

/// Flat register count: integer file then floating-point file.
pub const NUM_REGS: usize = 64;

/// Why a context (and everything after it) was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum SquashReason {
    RegisterEarlyRead,
    MemoryEarlyRead,
    LsstMispredict,
    ControlMispeculation,
}

impl SquashReason {
    pub const ALL: [SquashReason; 4] = [
        SquashReason::RegisterEarlyRead,
        SquashReason::MemoryEarlyRead,
        SquashReason::LsstMispredict,
        SquashReason::ControlMispeculation,
    ];

    pub fn index(self) -> usize {
        match self {
            SquashReason::RegisterEarlyRead => 0,
            SquashReason::MemoryEarlyRead => 1,
            SquashReason::LsstMispredict => 2,
            SquashReason::ControlMispeculation => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SquashReason::RegisterEarlyRead => "register-early-read",
            SquashReason::MemoryEarlyRead => "memory-early-read",
            SquashReason::LsstMispredict => "lsst-mispredict",
            SquashReason::ControlMispeculation => "control-mispeculation",
        }
    }
}

/// Where an externally consumed register value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LKind {
    /// Planted stride prediction, to be verified against the immediate
    /// predecessor's final value.
    Seed,
    /// Read of a specific predecessor's locally committed write.
    Cross,
    /// Read of the head file without a committed write anywhere —
    /// gated by the read confidence table.
    Blind,
}

/// One consumed external value for one register.
#[derive(Debug, Clone, Copy)]
pub struct LRecord {
    pub kind: LKind,
    pub value: u32,
    pub src_slot: usize,
    pub src_iter: u64,
}

/// A single hardware context.
#[derive(Debug, Clone)]
pub struct Context {
    pub active: bool,
    /// Absolute iteration index within the current episode (head = oldest).
    pub iteration: u64,
    /// Clone generation, for diagnostics.
    pub gen: u64,
    /// This context's view of committed register state.  For the head
    /// this is architectural; clones start from a copy of the head's.
    pub committed_file: [u32; NUM_REGS],
    pub r_bit: [bool; NUM_REGS],
    pub d_bit: [bool; NUM_REGS],
    pub l_rec: [Option<LRecord>; NUM_REGS],
    /// Stride predictions planted at clone time, consumed on first read.
    pub seed: [Option<u32>; NUM_REGS],
    pub store_buffer: StoreBuffer,
    /// Iteration complete: the loop-closing branch committed.
    pub j_bit: bool,
    pub local_commits: u64,
    pub local_branches: u64,
    pub local_mispredicts: u64,
    /// Issue is held until this cycle: the register-file copy is in
    /// flight, so operands cannot be read yet. The front end (fetch,
    /// decode, dispatch) is context-private and proceeds immediately.
    pub hold_until: u64,
}

impl Context {
    fn new(store_cap: usize) -> Context {
        Context {
            active: false,
            iteration: 0,
            gen: 0,
            committed_file: [0; NUM_REGS],
            r_bit: [false; NUM_REGS],
            d_bit: [false; NUM_REGS],
            l_rec: [None; NUM_REGS],
            seed: [None; NUM_REGS],
            store_buffer: StoreBuffer::new(store_cap),
            j_bit: false,
            local_commits: 0,
            local_branches: 0,
            local_mispredicts: 0,
            hold_until: 0,
        }
    }

    fn clear_speculation(&mut self) {
        self.r_bit = [false; NUM_REGS];
        self.d_bit = [false; NUM_REGS];
        self.l_rec = [None; NUM_REGS];
        self.seed = [None; NUM_REGS];
        self.store_buffer.clear();
        self.j_bit = false;
        self.local_commits = 0;
        self.local_branches = 0;
        self.local_mispredicts = 0;
    }
}

/// Stride table entry for one integer register.
#[derive(Debug, Clone, Serialize)]
pub struct StrideEntry {
    pub reg: u8,
    pub stride: i16,
    pub conf: SatCounter2,
    /// Head file value frozen at episode entry; the prediction for
    /// iteration k is `base + k * stride`.
    pub base: u32,
    pub predictions: u64,
}

/// Loop stride speculation table.  Populated by committed
/// `addi rd, rd, imm` instructions during the observation phase; an
/// entry predicts once its confidence reaches the threshold, and
/// verified predictions push the confidence toward saturation.
#[derive(Debug, Clone, Default)]
pub struct Lsst {
    pub entries: Vec<StrideEntry>, // sorted by reg, small
    conf_init: u8,
    conf_threshold: u8,
    pub matches: u64,
    pub mismatches: u64,
    pub seeds_consumed: u64,
}

impl Lsst {
    pub fn new(cfg: &SimConfig) -> Lsst {
        Lsst {
            entries: Vec::new(),
            conf_init: cfg.lsst_conf_init,
            conf_threshold: cfg.lsst_conf_threshold,
            matches: 0,
            mismatches: 0,
            seeds_consumed: 0,
        }
    }

    pub fn reset_for_episode(&mut self) {
        self.entries.clear();
    }

    fn entry_mut(&mut self, reg: u8) -> Option<&mut StrideEntry> {
        self.entries.iter_mut().find(|e| e.reg == reg)
    }

    pub fn entry(&self, reg: u8) -> Option<&StrideEntry> {
        self.entries.iter().find(|e| e.reg == reg)
    }

    /// Observation-phase commit of `addi reg, reg, imm`.
    pub fn observe(&mut self, reg: u8, imm: i16) {
        let init = self.conf_init;
        match self.entry_mut(reg) {
            Some(e) if e.stride == imm => {
                e.conf.inc();
            }
            Some(e) => {
                e.stride = imm;
                e.conf = SatCounter2::new(init);
            }
            None => {
                let e = StrideEntry {
                    reg,
                    stride: imm,
                    conf: SatCounter2::new(init),
                    base: 0,
                    predictions: 0,
                };
                let pos = self.entries.partition_point(|x| x.reg < reg);
                self.entries.insert(pos, e);
            }
        }
    }

    /// Freeze prediction bases from the head file at episode entry.
    pub fn freeze_bases(&mut self, file: &[u32; NUM_REGS]) {
        for e in &mut self.entries {
            e.base = file[e.reg as usize];
        }
    }

    /// Prediction for iteration `k`, if the entry is confident.
    pub fn predict(&self, reg: u8, k: u64) -> Option<u32> {
        let e = self.entry(reg)?;
        if e.conf.get() < self.conf_threshold {
            return None;
        }
        Some(
            e.base
                .wrapping_add((e.stride as i32 as u32).wrapping_mul(k as u32)),
        )
    }

    /// Registers that currently predict.
    pub fn predicting_regs(&self) -> Vec<u8> {
        self.entries
            .iter()
            .filter(|e| e.conf.get() >= self.conf_threshold)
            .map(|e| e.reg)
            .collect()
    }

    pub fn note_consumed(&mut self, reg: u8) {
        self.seeds_consumed += 1;
        if let Some(e) = self.entry_mut(reg) {
            e.predictions += 1;
        }
    }

    pub fn note_match(&mut self, reg: u8) {
        self.matches += 1;
        if let Some(e) = self.entry_mut(reg) {
            e.conf.inc();
        }
    }

    pub fn note_mismatch(&mut self, _reg: u8) {
        self.mismatches += 1;
    }

    /// Fraction of resolved predictions that were correct.
    pub fn accuracy(&self) -> f64 {
        let resolved = self.matches + self.mismatches;
        if resolved == 0 {
            return 1.0;
        }
        self.matches as f64 / resolved as f64
    }
}

/// Result of one promotion.
#[derive(Debug, Clone, Copy)]
pub struct Promotion {
    pub old_head: usize,
    pub new_head: usize,
    /// Locally committed work that just became architectural.
    pub transferred_commits: u64,
    pub transferred_branches: u64,
    pub transferred_mispredicts: u64,
}

/// The thread context management unit: the context slots, the active
/// ring, anchor bits from the last completed non-speculative iteration,
/// the stride table, and the blind-read confidence table.
#[derive(Debug, Clone)]
pub struct Tciu {
    pub slots: Vec<Context>,
    /// Active contexts, head (non-speculative) at the front, in
    /// strictly ascending iteration order.
    pub ring: VecDeque<usize>,
    /// R/D bits latched from the most recently completed
    /// non-speculative iteration.
    pub anchors_r: [bool; NUM_REGS],
    pub anchors_d: [bool; NUM_REGS],
    /// Fetch address for fresh clones (the loop body entry).
    pub continuation: u32,
    /// Per-register confidence that a blind head-file read is safe.
    pub read_conf: [SatCounter2; NUM_REGS],
    pub lsst: Lsst,
    pub strict_lbit: bool,
    // lifetime counters
    pub clones: u64,
    pub promotions: u64,
    pub squashes: [u64; 4],
}

impl Tciu {
    pub fn new(cfg: &SimConfig) -> Tciu {
        let mut slots: Vec<Context> = (0..cfg.contexts)
            .map(|_| Context::new(cfg.store_buffer_size))
            .collect();
        slots[0].active = true;
        let mut ring = VecDeque::new();
        ring.push_back(0);
        Tciu {
            slots,
            ring,
            anchors_r: [false; NUM_REGS],
            anchors_d: [false; NUM_REGS],
            continuation: 0,
            read_conf: [SatCounter2::new(cfg.read_conf_init); NUM_REGS],
            lsst: Lsst::new(cfg),
            strict_lbit: cfg.strict_lbit_squash,
            clones: 0,
            promotions: 0,
            squashes: [0; 4],
        }
    }

    pub fn head(&self) -> usize {
        *self.ring.front().unwrap()
    }

    pub fn ring_pos(&self, slot: usize) -> Option<usize> {
        self.ring.iter().position(|&s| s == slot)
    }

    pub fn is_speculative(&self, slot: usize) -> bool {
        self.ring_pos(slot).map(|p| p > 0).unwrap_or(false)
    }

    /// Latch the head's R/D bits as the new anchors and clear them for
    /// its next iteration.  Called at every non-speculative iteration
    /// boundary (observation phase) and at every promotion.
    pub fn latch_anchors_from_head(&mut self) {
        let h = self.head();
        let head = &mut self.slots[h];
        self.anchors_r = head.r_bit;
        self.anchors_d = head.d_bit;
        head.r_bit = [false; NUM_REGS];
        head.d_bit = [false; NUM_REGS];
    }

    /// Start a full threading episode: the head begins iteration 0 at
    /// `continuation` (the loop body entry) and prediction bases are
    /// frozen from its file.
    pub fn begin_full_episode(&mut self, continuation: u32) {
        self.continuation = continuation;
        let h = self.head();
        self.slots[h].iteration = 0;
        self.slots[h].j_bit = false;
        let file = self.slots[h].committed_file;
        self.lsst.freeze_bases(&file);
    }

    /// Clone a fresh context at the ring tail for the next unclaimed
    /// iteration.  Returns the slot, or None when all slots are busy.
    pub fn clone_at_tail(&mut self, now: u64, clone_cost: u32) -> Option<usize> {
        let slot = (0..self.slots.len()).find(|s| !self.slots[*s].active)?;
        let head_file = self.slots[self.head()].committed_file;
        let tail_iter = self.slots[*self.ring.back().unwrap()].iteration;
        let iter = tail_iter + 1;

        let predictions: Vec<(u8, u32)> = self
            .lsst
            .predicting_regs()
            .into_iter()
            .filter_map(|r| self.lsst.predict(r, iter).map(|v| (r, v)))
            .collect();

        let ctx = &mut self.slots[slot];
        ctx.active = true;
        ctx.iteration = iter;
        ctx.gen += 1;
        ctx.committed_file = head_file;
        ctx.clear_speculation();
        ctx.hold_until = now + clone_cost as u64;
        for (r, v) in predictions {
            ctx.seed[r as usize] = Some(v);
        }
        self.ring.push_back(slot);
        self.clones += 1;
        Some(slot)
    }

    /// Promote the first speculative context to non-speculative head.
    /// Callers must have verified the head's iteration is complete,
    /// its store buffer drained, and the final read checks passed.
    pub fn promote(&mut self) -> Promotion {
        assert!(self.ring.len() > 1, "nothing to promote");
        let old_head = self.ring.pop_front().unwrap();
        let new_head = self.head();

        // anchors come from the departing iteration
        self.anchors_r = self.slots[old_head].r_bit;
        self.anchors_d = self.slots[old_head].d_bit;

        // transfer: registers the successor never wrote keep flowing
        // from the completed iteration's file
        let old_file = self.slots[old_head].committed_file;
        let n = &mut self.slots[new_head];
        for r in 0..NUM_REGS {
            if !n.r_bit[r] {
                n.committed_file[r] = old_file[r];
            }
            // consumed predictions were verified by the caller; pending
            // ones are superseded by the transferred values
            n.seed[r] = None;
            n.l_rec[r] = None;
        }
        let transferred_commits = n.local_commits;
        let transferred_branches = n.local_branches;
        let transferred_mispredicts = n.local_mispredicts;
        n.local_commits = 0;
        n.local_branches = 0;
        n.local_mispredicts = 0;

        let old = &mut self.slots[old_head];
        old.active = false;
        old.clear_speculation();
        self.promotions += 1;
        Promotion {
            old_head,
            new_head,
            transferred_commits,
            transferred_branches,
            transferred_mispredicts,
        }
    }

    /// Discard the context at ring position `pos` and everything after
    /// it.  Returns the freed slots (for pipeline and MDRT cleanup).
    /// The caller re-clones afterwards if the episode continues.
    pub fn squash_from_pos(&mut self, pos: usize, reason: SquashReason) -> Vec<usize> {
        assert!(pos >= 1, "the non-speculative head cannot be squashed");
        let killed: Vec<usize> = self.ring.iter().skip(pos).copied().collect();
        self.ring.truncate(pos);
        for &slot in &killed {
            self.squashes[reason.index()] += 1;
            let ctx = &mut self.slots[slot];
            ctx.active = false;
            ctx.clear_speculation();
        }
        killed
    }

    /// End the episode: discard all speculative contexts (control
    /// mispeculation — their iterations never existed).
    pub fn exit_episode(&mut self) -> Vec<usize> {
        let killed = if self.ring.len() > 1 {
            self.squash_from_pos(1, SquashReason::ControlMispeculation)
        } else {
            Vec::new()
        };
        let h = self.head();
        let head = &mut self.slots[h];
        head.r_bit = [false; NUM_REGS];
        head.d_bit = [false; NUM_REGS];
        head.j_bit = false;
        self.anchors_r = [false; NUM_REGS];
        self.anchors_d = [false; NUM_REGS];
        killed
    }
}
