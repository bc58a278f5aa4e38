//! Cycle-level execution model.  Each hardware context owns a small
//! out-of-order core (fetch buffer, ROB, renamed in-flight producers);
//! the contexts share the cache hierarchy, the fetch ports, the data
//! ports, and the speculation machinery (TCIU, MDRT, LSST).  The machine
//! walks the threading state machine per loop: observe two iterations,
//! clone the spare contexts onto future iterations, verify their reads
//! as the head commits, and promote or squash at cycle boundaries.
//!
//! Timing contract, all in one place:
//! - a fetch group lands `access_inst` cycles after it starts and at most
//!   one group per context is in flight;
//! - dispatch consumes a landed group the same cycle, up to `fetch_width`
//!   per context, stopping at a predicted-taken branch;
//! - an instruction issues no earlier than the cycle after dispatch, with
//!   operand values captured at issue; a consumer may issue the cycle
//!   after its producer's write-back;
//! - write-back happens at `issue + latency - 1`, so a latency-1 op
//!   writes back the cycle it issues;
//! - commit is in order per context, up to `issue_width` per cycle, no
//!   earlier than the cycle after write-back;
//! - structural speculation events (episode entry/exit, clone, promote,
//!   squash) apply at the end-of-cycle boundary, at most one per cycle,
//!   exits taking priority over squashes and squashes over promotions.

use std::collections::{BTreeMap, VecDeque};

use crate::asm::Program;
use crate::cache::CacheSim;
use crate::config::{FetchPolicy, SimConfig};
use crate::isa::{decode, Instruction, Reg, RegFile, NUM_FU_CLASSES};
use crate::loop_detector::{LoopTable, Quality};
use crate::memory::Mdrt;
use crate::oracle::{fp_alu, int_alu, jump_target, takes_branch, ArchState, Trap};
use crate::predictor::Btb;
use crate::regdep::ReadOutcome;
use crate::tciu::{SquashReason, Tciu, NUM_REGS};

/// Threading state of the whole machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Single context running; loop table watching committed branches.
    NonDsmt,
    /// Observation phase: the head runs the selected loop alone while
    /// anchors and strides are gathered.
    PreDsmt,
    /// Threading phase: clones run future iterations speculatively.
    FullDsmt,
}

impl Mode {
    pub fn index(self) -> usize {
        match self {
            Mode::NonDsmt => 0,
            Mode::PreDsmt => 1,
            Mode::FullDsmt => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::NonDsmt => "non-dsmt",
            Mode::PreDsmt => "pre-dsmt",
            Mode::FullDsmt => "full-dsmt",
        }
    }
}

/// Why `run` returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Halted,
    CycleLimit,
}

/// A fatal architectural event on the non-speculative path.  Speculative
/// contexts park on traps until they are squashed; the head cannot.
#[derive(Debug, Clone, thiserror::Error)]
pub enum SimError {
    #[error("trap on the non-speculative path at cycle {cycle}: {trap}")]
    Trap { cycle: u64, trap: Trap },
}

/// One threading episode of a single loop, from proposal to exit.
#[derive(Debug, Clone)]
pub struct Episode {
    /// The loop-closing backward branch.
    pub branch_pc: u32,
    /// Loop body entry (the branch target); clones fetch from here.
    pub target: u32,
    /// Cycle the observation phase began.
    pub start_cycle: u64,
    /// Architectural commits when observation began.
    pub pre_base_commits: u64,
    /// Completed observation iterations so far.
    pub pre_iters: u32,
    /// Cycle full threading began.
    pub full_start_cycle: u64,
    /// `dsmt_committed` when full threading began.
    pub full_base_commits: u64,
    /// Architectural loop iterations completed while threaded.
    pub iterations: u64,
    /// The one-shot speculative-IPC classification has been made.
    pub classified: bool,
}

/// A decoded instruction travelling with its fetch address and any trap
/// raised while producing it (runaway fetch, undecodable word).
type Fetched = (u32, Instruction, Option<Trap>);

/// An instruction-cache request in flight for one context.
#[derive(Debug, Clone)]
struct Group {
    insts: Vec<Fetched>,
    ready: u64,
}

/// One reorder-buffer entry.
#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    pc: u32,
    inst: Instruction,
    trap: Option<Trap>,
    dispatch_cycle: u64,
    issued: Option<u64>,
    /// Cycle the result becomes visible to consumers (issue+lat-1).
    wb_cycle: Option<u64>,
    result: u32,
    /// Operand values captured at issue, in `sources()` order.
    srcs: [u32; 2],
    /// In-flight producer of each source, captured at dispatch before
    /// the destination rename (a self-referencing op reads its elder).
    src_seq: [Option<u64>; 2],
    /// Effective address for loads/stores, known at `addr_cycle`.
    addr: Option<u32>,
    addr_cycle: u64,
    /// Load satisfied / store address finalized.
    mem_done: bool,
    /// A store's data operand has been captured (stores issue on the
    /// address alone and pick the value up by commit at the latest).
    value_known: bool,
    predicted_taken: bool,
    predicted_target: u32,
    /// Loop-closing branch dispatched under full threading: resolved by
    /// the episode protocol, not the branch predictor.
    frozen: bool,
    taken: bool,
    /// Static target of a branch or jump.
    target: u32,
}

impl Entry {
    fn new(seq: u64, pc: u32, inst: Instruction, trap: Option<Trap>, now: u64) -> Entry {
        Entry {
            seq,
            pc,
            inst,
            trap,
            dispatch_cycle: now,
            issued: None,
            wb_cycle: None,
            result: 0,
            srcs: [0; 2],
            src_seq: [None; 2],
            addr: None,
            addr_cycle: 0,
            mem_done: false,
            value_known: false,
            predicted_taken: false,
            predicted_target: 0,
            frozen: false,
            taken: false,
            target: 0,
        }
    }
}

/// Per-context front end and reorder buffer.
#[derive(Debug, Clone)]
struct Pipe {
    fetch_pc: Option<u32>,
    inflight: Option<Group>,
    fetch_buf: VecDeque<Fetched>,
    rob: VecDeque<Entry>,
    /// Newest in-flight producer of each register, by sequence number.
    rename: [Option<u64>; NUM_REGS],
    next_seq: u64,
    /// Observation-phase shadow of "written earlier this iteration, in
    /// program order"; drives dependence-bit marking at dispatch.
    disp_written: [bool; NUM_REGS],
    /// This context committed the loop-closing branch not-taken: the
    /// loop exits architecturally when the context is promoted.
    exit_pending: bool,
}

impl Pipe {
    fn new() -> Pipe {
        Pipe {
            fetch_pc: None,
            inflight: None,
            fetch_buf: VecDeque::new(),
            rob: VecDeque::new(),
            rename: [None; NUM_REGS],
            next_seq: 0,
            disp_written: [false; NUM_REGS],
            exit_pending: false,
        }
    }
}

/// Structural event decided at commit, applied at the cycle boundary.
#[derive(Debug, Clone, Copy)]
enum Event {
    /// A hot backward branch was selected: begin observing its loop.
    EnterPre { pc: u32 },
    /// Observation finished: flush, clone, and thread.
    FullEntry,
    /// The loop left before observation finished.
    PreAbort,
    /// The head committed the closing branch not-taken.
    LoopExit,
}

fn is_r0(r: Reg) -> bool {
    r.file == RegFile::Int && r.idx == 0
}

/// The whole machine: shared memory and speculation state plus one
/// `Pipe` per context.
pub struct Machine {
    pub cfg: SimConfig,
    pub program: Program,
    /// Committed memory, word-granular, absent words read as zero and
    /// zero stores remove the entry (mirrors the reference semantics).
    pub mem: BTreeMap<u32, u32>,
    pub store_trace: Vec<(u32, u32)>,
    pub cycle: u64,
    pub halted: bool,
    pub halt_pc: u32,
    /// Architectural commits: head commits plus promoted local commits.
    pub committed_total: u64,
    /// The subset of `committed_total` retired under full threading.
    pub dsmt_committed: u64,
    pub branches: u64,
    pub mispredicts: u64,
    pub tciu: Tciu,
    pub mdrt: Mdrt,
    pub caches: CacheSim,
    pub btb: Btb,
    pub loops: LoopTable,
    pub mode: Mode,
    pub episode: Option<Episode>,
    /// Cycles spent in each mode, indexed by `Mode::index`.
    pub mode_cycles: [u64; 3],
    /// Data-port grants over the whole run (loads from memory + drains).
    pub port_grants: u64,
    pub episodes_started: u64,
    pub episodes_aborted: u64,
    /// Per-cycle trace sink: one line per cycle when set.
    pub trace: Option<Box<dyn std::io::Write>>,
    pipes: Vec<Pipe>,
    /// Busy-until cycle per unpipelined functional unit, per class.
    fu_busy: Vec<Vec<u64>>,
    pend_squash: Option<(usize, SquashReason)>,
    pend_event: Option<Event>,
    fetch_log: Vec<(usize, u32)>,
    commit_log: Vec<u64>,
}

impl Machine {
    pub fn new(prog: &Program, cfg: &SimConfig) -> Machine {
        let mut mem = BTreeMap::new();
        for (i, &w) in prog.words.iter().enumerate() {
            if w != 0 {
                mem.insert(prog.base + 4 * i as u32, w);
            }
        }
        let slots = cfg.contexts;
        let mut pipes: Vec<Pipe> = (0..slots).map(|_| Pipe::new()).collect();
        pipes[0].fetch_pc = Some(prog.base);
        let fu_busy = (0..NUM_FU_CLASSES).map(|c| vec![0u64; cfg.fu_counts[c]]).collect();
        Machine {
            cfg: cfg.clone(),
            program: prog.clone(),
            mem,
            store_trace: Vec::new(),
            cycle: 0,
            halted: false,
            halt_pc: 0,
            committed_total: 0,
            dsmt_committed: 0,
            branches: 0,
            mispredicts: 0,
            tciu: Tciu::new(cfg),
            mdrt: Mdrt::new(cfg.mdrt_entries, cfg.contexts),
            caches: CacheSim::new(cfg),
            btb: Btb::new(cfg.btb_entries, cfg.btb_assoc),
            loops: LoopTable::new(),
            mode: Mode::NonDsmt,
            episode: None,
            mode_cycles: [0; 3],
            port_grants: 0,
            episodes_started: 0,
            episodes_aborted: 0,
            trace: None,
            pipes,
            fu_busy,
            pend_squash: None,
            pend_event: None,
            fetch_log: Vec::new(),
            commit_log: vec![0; slots],
        }
    }

    /// Run to halt (including the post-halt store-buffer drain) or to the
    /// cycle limit.
    pub fn run(&mut self) -> Result<StopReason, SimError> {
        loop {
            if self.halted && self.tciu.slots[self.tciu.head()].store_buffer.is_empty() {
                return Ok(StopReason::Halted);
            }
            if self.cycle >= self.cfg.max_cycles {
                return Ok(StopReason::CycleLimit);
            }
            self.step()?;
        }
    }

    /// Advance one cycle.
    pub fn step(&mut self) -> Result<(), SimError> {
        let now = self.cycle;
        self.fetch_log.clear();
        self.commit_log.iter_mut().for_each(|c| *c = 0);
        if !self.halted {
            let icnt = self.icount_snapshot();
            self.stage_fetch(now, &icnt);
            self.stage_dispatch(now);
            self.stage_issue(now);
        }
        self.stage_execute(now);
        if !self.halted {
            self.stage_commit(now)?;
        }
        self.stage_boundary(now);
        if self.trace.is_some() {
            self.write_trace_line(now);
        }
        self.mode_cycles[self.mode.index()] += 1;
        self.cycle += 1;
        Ok(())
    }

    /// Seed the machine from an architectural state: committed register
    /// file, memory, and the next fetch address.  Lets a functional
    /// prefix skip ahead before cycle simulation begins.
    pub fn warm_start(&mut self, st: &ArchState) {
        let h = self.tciu.head();
        for i in 0..32 {
            self.tciu.slots[h].committed_file[i] = st.int_regs[i];
            self.tciu.slots[h].committed_file[32 + i] = st.fp_regs[i];
        }
        self.mem = st.mem.clone();
        if st.halted {
            self.halted = true;
            self.halt_pc = st.pc;
            self.pipes[h].fetch_pc = None;
        } else {
            self.pipes[h].fetch_pc = Some(st.pc);
        }
    }

    /// Architectural state as seen after the run: the head's committed
    /// file plus drained memory.
    pub fn arch_state(&self) -> ArchState {
        let mut st = ArchState::new(&self.program);
        let h = self.tciu.head();
        let file = &self.tciu.slots[h].committed_file;
        for i in 0..32 {
            st.int_regs[i] = file[i];
            st.fp_regs[i] = file[32 + i];
        }
        st.mem = self.mem.clone();
        st.halted = self.halted;
        st.pc = if self.halted { self.halt_pc } else { 0 };
        st.committed = self.committed_total;
        st.store_trace = self.store_trace.clone();
        st
    }

    fn image_contains(&self, pc: u32) -> bool {
        pc & 3 == 0 && pc >= self.program.base && pc < self.program.end()
    }

    /// Unissued work per context: fetch buffer plus unissued ROB entries.
    fn icount_snapshot(&self) -> Vec<u64> {
        self.pipes
            .iter()
            .map(|p| {
                p.fetch_buf.len() as u64
                    + p.rob.iter().filter(|e| e.issued.is_none()).count() as u64
            })
            .collect()
    }

    /// Contexts granted a fetch port this cycle, in priority order: the
    /// head first when it can fetch, then speculative contexts by
    /// ascending instruction count (a frozen or busy context frees its
    /// port rather than idling it).
    fn pick_fetch_slots(&self, icnt: &[u64]) -> Vec<usize> {
        let mut cands: Vec<usize> = Vec::new();
        let mut spec: Vec<(u64, usize)> = Vec::new();
        for (pos, &s) in self.tciu.ring.iter().enumerate() {
            let p = &self.pipes[s];
            let ready = p.fetch_pc.is_some() && p.inflight.is_none() && p.fetch_buf.is_empty();
            if !ready {
                continue;
            }
            if pos == 0 {
                cands.push(s);
            } else {
                spec.push((icnt[s], s));
            }
        }
        spec.sort();
        cands.extend(spec.into_iter().map(|(_, s)| s));
        let ports = match self.cfg.fetch_policy {
            FetchPolicy::Ideal => cands.len(),
            _ => self.cfg.fetch_ports,
        };
        cands.truncate(ports);
        cands
    }

    fn stage_fetch(&mut self, now: u64, icnt: &[u64]) {
        // land completed groups first so dispatch can consume them
        for p in &mut self.pipes {
            let landed = p.inflight.as_ref().map_or(false, |g| g.ready <= now);
            if landed {
                let g = p.inflight.take().unwrap();
                p.fetch_buf.extend(g.insts);
            }
        }
        for s in self.pick_fetch_slots(icnt) {
            self.fetch_group(s, now);
        }
    }

    /// Start one fetch group for a context.  The group stops after a
    /// halt, a jump (redirected at dispatch), or the frozen loop-closing
    /// branch, and at the first runaway or undecodable word.
    fn fetch_group(&mut self, s: usize, now: u64) {
        let start = self.pipes[s].fetch_pc.unwrap();
        let lat = self.caches.access_inst(start) as u64;
        let frozen_pc = if self.mode == Mode::FullDsmt {
            self.episode.as_ref().map(|e| e.branch_pc)
        } else {
            None
        };
        let mut pc = start;
        let mut insts: Vec<Fetched> = Vec::new();
        let mut next: Option<u32> = None;
        for _ in 0..self.cfg.fetch_width {
            if !self.image_contains(pc) {
                insts.push((pc, Instruction::Nop, Some(Trap::RunawayPc { pc })));
                next = None;
                break;
            }
            let word = self.mem.get(&pc).copied().unwrap_or(0);
            let inst = match decode(word) {
                Ok(i) => i,
                Err(err) => {
                    insts.push((pc, Instruction::Nop, Some(Trap::Decode { pc, err })));
                    next = None;
                    break;
                }
            };
            insts.push((pc, inst, None));
            match inst {
                Instruction::Halt | Instruction::Jump { .. } => {
                    next = None;
                    break;
                }
                Instruction::Branch { .. } if frozen_pc == Some(pc) => {
                    next = None;
                    break;
                }
                _ => {
                    pc = pc.wrapping_add(4);
                    next = Some(pc);
                }
            }
        }
        self.pipes[s].fetch_pc = next;
        self.pipes[s].inflight = Some(Group { insts, ready: now + lat });
        self.fetch_log.push((s, start));
    }

    fn stage_dispatch(&mut self, now: u64) {
        let order: Vec<usize> = self.tciu.ring.iter().copied().collect();
        let closing_pc = self.episode.as_ref().map(|e| e.branch_pc);
        for (pos, &s) in order.iter().enumerate() {
            let pre_obs = pos == 0 && self.mode == Mode::PreDsmt;
            let mut budget = self.cfg.fetch_width;
            while budget > 0 {
                let (pc, inst, trap) = match self.pipes[s].fetch_buf.front() {
                    Some(f) => (f.0, f.1, f.2.clone()),
                    None => break,
                };
                {
                    let p = &self.pipes[s];
                    if p.rob.len() >= self.cfg.rob_size {
                        break;
                    }
                    let unissued = p.rob.iter().filter(|e| e.issued.is_none()).count();
                    if unissued >= self.cfg.iq_size {
                        break;
                    }
                    if (inst.is_load() || inst.is_store())
                        && p.rob.iter().filter(|e| e.inst.is_load() || e.inst.is_store()).count()
                            >= self.cfg.lsq_size
                    {
                        break;
                    }
                }
                self.pipes[s].fetch_buf.pop_front();
                let seq = self.pipes[s].next_seq;
                self.pipes[s].next_seq += 1;
                let mut e = Entry::new(seq, pc, inst, trap, now);
                match inst {
                    Instruction::Nop | Instruction::Halt => {
                        e.issued = Some(now);
                        e.wb_cycle = Some(now);
                    }
                    Instruction::Jump { target_word } => {
                        e.issued = Some(now);
                        e.wb_cycle = Some(now);
                        e.taken = true;
                        e.target = jump_target(target_word);
                        self.pipes[s].fetch_pc = Some(e.target);
                    }
                    Instruction::Branch { off, .. } => {
                        e.target = pc
                            .wrapping_add(4)
                            .wrapping_add((off as i32 as u32).wrapping_mul(4));
                        e.frozen = self.mode == Mode::FullDsmt && closing_pc == Some(pc);
                        if !e.frozen {
                            if let Some(t) = self.btb.predict(pc) {
                                e.predicted_taken = true;
                                e.predicted_target = t;
                            }
                        }
                    }
                    _ => {}
                }
                if pre_obs {
                    // read-before-write within the dispatch-delimited
                    // iteration marks a cross-iteration dependence
                    for r in inst.sources() {
                        let f = r.flat();
                        if !is_r0(r) && self.tciu.anchors_r[f] && !self.pipes[s].disp_written[f] {
                            self.tciu.slots[s].d_bit[f] = true;
                        }
                    }
                    if let Some(d) = inst.dest() {
                        if !is_r0(d) {
                            self.pipes[s].disp_written[d.flat()] = true;
                        }
                    }
                    if closing_pc == Some(pc) {
                        self.pipes[s].disp_written = [false; NUM_REGS];
                    }
                }
                for (k, &r) in inst.sources().iter().enumerate() {
                    if !is_r0(r) {
                        e.src_seq[k] = self.pipes[s].rename[r.flat()];
                    }
                }
                if let Some(d) = inst.dest() {
                    if !is_r0(d) {
                        self.pipes[s].rename[d.flat()] = Some(seq);
                    }
                }
                let redirect = if e.predicted_taken { Some(e.predicted_target) } else { None };
                self.pipes[s].rob.push_back(e);
                budget -= 1;
                if let Some(t) = redirect {
                    // everything behind a predicted-taken branch is the
                    // sequential wrong path
                    self.pipes[s].fetch_buf.clear();
                    self.pipes[s].inflight = None;
                    self.pipes[s].fetch_pc = Some(t);
                    break;
                }
            }
        }
    }

    /// Resolve one source operand for an instruction in context `s`.
    /// Precedence: the in-flight producer captured at dispatch, own
    /// committed state, then the cross-context protocol (seed,
    /// anchor-guided wait, or confidence-gated blind read).
    fn read_src(&mut self, s: usize, r: Reg, producer: Option<u64>, now: u64) -> Option<u32> {
        if is_r0(r) {
            return Some(0);
        }
        let f = r.flat();
        if let Some(seq) = producer {
            if let Some(e) = self.pipes[s].rob.iter().find(|e| e.seq == seq) {
                return match e.wb_cycle {
                    Some(w) if w + 1 <= now => Some(e.result),
                    _ => None,
                };
            }
            // the producer committed: in-order commit guarantees no
            // younger writer got there first, so fall through
        }
        if self.tciu.slots[s].r_bit[f] {
            return Some(self.tciu.slots[s].committed_file[f]);
        }
        match self.tciu.resolve_cross(s, f) {
            ReadOutcome::Value(v) => Some(v),
            ReadOutcome::Stall => None,
        }
    }

    fn stage_issue(&mut self, now: u64) {
        // per-class issue budget: reservation-station slots capped by
        // free functional units (unpipelined units block while busy)
        let mut avail = [0usize; NUM_FU_CLASSES];
        for (c, a) in avail.iter_mut().enumerate() {
            let units = if crate::isa::FuClass::ALL[c].pipelined() {
                self.cfg.fu_counts[c]
            } else {
                self.fu_busy[c].iter().filter(|&&b| b <= now).count()
            };
            *a = units.min(self.cfg.rs_sizes[c]);
        }
        let mut used = [0usize; NUM_FU_CLASSES];
        let order: Vec<usize> = self.tciu.ring.iter().copied().collect();
        for &s in &order {
            // register copy still in flight: operands unreadable
            if now < self.tciu.slots[s].hold_until {
                continue;
            }
            let mut left = self.cfg.issue_width;
            let mut i = 0;
            while i < self.pipes[s].rob.len() {
                if left == 0 {
                    break;
                }
                let (inst, src_seq, has_trap) = {
                    let e = &self.pipes[s].rob[i];
                    if e.issued.is_some() {
                        i += 1;
                        continue;
                    }
                    if e.dispatch_cycle >= now {
                        break;
                    }
                    (e.inst, e.src_seq, e.trap.is_some())
                };
                if has_trap {
                    // trap markers carry no work; let them reach commit
                    let e = &mut self.pipes[s].rob[i];
                    e.issued = Some(now);
                    e.wb_cycle = Some(now);
                    i += 1;
                    continue;
                }
                let ci = inst.fu_class().index();
                if used[ci] >= avail[ci] {
                    i += 1;
                    continue;
                }
                let srcs = inst.sources();
                let is_store = matches!(inst, Instruction::Store { .. });
                let mut vals = [0u32; 2];
                let mut known = [true; 2];
                let mut ready = true;
                for (k, &r) in srcs.iter().enumerate() {
                    match self.read_src(s, r, src_seq[k], now) {
                        Some(v) => vals[k] = v,
                        // a store needs only its address to issue; the
                        // data operand is picked up by commit time
                        None if is_store && k == 1 => known[1] = false,
                        None => {
                            ready = false;
                            break;
                        }
                    }
                }
                if !ready {
                    i += 1;
                    continue;
                }
                let lat = self.cfg.fu_latency[ci] as u64;
                if !crate::isa::FuClass::ALL[ci].pipelined() {
                    for b in &mut self.fu_busy[ci] {
                        if *b <= now {
                            *b = now + lat;
                            break;
                        }
                    }
                }
                used[ci] += 1;
                left -= 1;
                let e = &mut self.pipes[s].rob[i];
                e.issued = Some(now);
                e.srcs = vals;
                match e.inst {
                    Instruction::IntOp { op, .. } => match int_alu(op, vals[0], vals[1]) {
                        Some(v) => {
                            e.result = v;
                            e.wb_cycle = Some(now + lat - 1);
                        }
                        None => {
                            e.trap = Some(Trap::IntDivByZero { pc: e.pc });
                            e.wb_cycle = Some(now + lat - 1);
                        }
                    },
                    Instruction::FpOp { op, .. } => {
                        e.result = fp_alu(op, vals[0], vals[1]);
                        e.wb_cycle = Some(now + lat - 1);
                    }
                    Instruction::Addi { imm, .. } => {
                        e.result = vals[0].wrapping_add(imm as i32 as u32);
                        e.wb_cycle = Some(now + lat - 1);
                    }
                    Instruction::Branch { cond, .. } => {
                        e.taken = takes_branch(cond, vals[0], vals[1]);
                        e.wb_cycle = Some(now + lat - 1);
                    }
                    Instruction::Load { imm, .. } => {
                        let a = vals[0].wrapping_add(imm as i32 as u32);
                        e.addr = Some(a);
                        e.addr_cycle = now;
                        if a & 3 != 0 {
                            e.trap = Some(Trap::Misaligned { pc: e.pc, addr: a });
                        }
                    }
                    Instruction::Store { imm, .. } => {
                        let a = vals[0].wrapping_add(imm as i32 as u32);
                        e.addr = Some(a);
                        e.addr_cycle = now;
                        e.wb_cycle = Some(now + lat - 1);
                        e.value_known = known[1];
                        if a & 3 != 0 {
                            e.trap = Some(Trap::Misaligned { pc: e.pc, addr: a });
                        }
                    }
                    _ => {}
                }
                i += 1;
            }
        }
    }

    fn stage_execute(&mut self, now: u64) {
        let mut ports = self.cfg.data_ports;
        // the head's store buffer drains to memory first
        let head = self.tciu.head();
        while ports > 0 {
            let drained = self.tciu.slots[head].store_buffer.pop_oldest();
            let (addr, val) = match drained {
                Some(d) => d,
                None => break,
            };
            self.caches.access_data(addr);
            if val == 0 {
                self.mem.remove(&addr);
            } else {
                self.mem.insert(addr, val);
            }
            self.store_trace.push((addr, val));
            ports -= 1;
            self.port_grants += 1;
            if self.mode == Mode::FullDsmt && self.tciu.ring.len() > 1 {
                // a departed value is final: re-check speculative readers
                let readers = self.mdrt.readers(addr);
                for pos in 1..self.tciu.ring.len() {
                    let s2 = self.tciu.ring[pos];
                    if let Some(v) = readers[s2] {
                        if v != val {
                            self.req_squash(pos, SquashReason::MemoryEarlyRead);
                            break;
                        }
                    }
                }
            }
        }
        if self.halted {
            return;
        }
        let order: Vec<usize> = self.tciu.ring.iter().copied().collect();
        for &s in &order {
            for i in 0..self.pipes[s].rob.len() {
                let (is_load, addr) = {
                    let e = &self.pipes[s].rob[i];
                    let mem_op = e.inst.is_load() || e.inst.is_store();
                    if !mem_op || e.issued.is_none() || e.addr_cycle > now {
                        continue;
                    }
                    if e.inst.is_store() {
                        if e.trap.is_some() {
                            let e = &mut self.pipes[s].rob[i];
                            e.mem_done = true;
                            if e.wb_cycle.is_none() {
                                e.wb_cycle = Some(now);
                            }
                        } else if !e.value_known {
                            // capture the data operand as soon as it is
                            // produced so younger loads can forward from it
                            let vreg = e.inst.sources()[1];
                            let vseq = e.src_seq[1];
                            if let Some(v) = self.read_src(s, vreg, vseq, now) {
                                let e = &mut self.pipes[s].rob[i];
                                e.srcs[1] = v;
                                e.value_known = true;
                            }
                        }
                        let e = &mut self.pipes[s].rob[i];
                        e.mem_done = true;
                        continue;
                    }
                    if e.mem_done {
                        continue;
                    }
                    if e.trap.is_some() {
                        let e = &mut self.pipes[s].rob[i];
                        e.mem_done = true;
                        if e.wb_cycle.is_none() {
                            e.wb_cycle = Some(now);
                        }
                        continue;
                    }
                    (true, e.addr.unwrap())
                };
                debug_assert!(is_load);
                // a load waits until every older store in its own ROB has
                // a resolved address
                let mut blocked = false;
                let mut fwd: Option<u32> = None;
                for j in (0..i).rev() {
                    let o = &self.pipes[s].rob[j];
                    if !o.inst.is_store() {
                        continue;
                    }
                    if o.issued.is_none() || o.addr_cycle > now || o.trap.is_some() {
                        blocked = true;
                        break;
                    }
                    if fwd.is_none() && o.addr == Some(addr) {
                        if !o.value_known {
                            // matching store, data not yet produced
                            blocked = true;
                            break;
                        }
                        fwd = Some(o.srcs[1]);
                    }
                }
                if blocked {
                    continue;
                }
                let spec = self.mode == Mode::FullDsmt && self.tciu.is_speculative(s);
                // forwarding hierarchy: own ROB, own committed buffer,
                // predecessor buffers, then memory through a data port
                let mut resolved: Option<(u32, bool, bool)> = None; // (val, port, record)
                if let Some(v) = fwd {
                    resolved = Some((v, false, false));
                }
                if resolved.is_none() {
                    if let Some(v) = self.tciu.slots[s].store_buffer.lookup(addr) {
                        resolved = Some((v, false, false));
                    }
                }
                if resolved.is_none() && spec {
                    if let Some(v) = self.tciu.lookup_store_forward(s, addr) {
                        resolved = Some((v, false, true));
                    }
                }
                if resolved.is_none() {
                    let v = self.mem.get(&addr).copied().unwrap_or(0);
                    resolved = Some((v, true, spec));
                }
                let (val, needs_port, record) = resolved.unwrap();
                if needs_port && ports == 0 {
                    continue;
                }
                if record && self.mdrt.record_load(s, addr, val).is_err() {
                    continue; // table full: retry next cycle
                }
                let mut lat = 1u64;
                if needs_port {
                    ports -= 1;
                    self.port_grants += 1;
                    lat = self.caches.access_data(addr) as u64;
                }
                let e = &mut self.pipes[s].rob[i];
                e.result = val;
                e.mem_done = true;
                e.wb_cycle = Some(now + lat - 1);
            }
        }
    }

    fn stage_commit(&mut self, now: u64) -> Result<(), SimError> {
        let order: Vec<usize> = self.tciu.ring.iter().copied().collect();
        'ctxs: for (pos, &s) in order.iter().enumerate() {
            let is_head = pos == 0;
            // retire bandwidth matches the front end, not the issue ports
            let mut n = 0;
            while n < self.cfg.fetch_width {
                let (ready, trap, inst_peek) = match self.pipes[s].rob.front() {
                    Some(e) => (
                        e.issued.is_some() && e.wb_cycle.map_or(false, |w| w + 1 <= now),
                        e.trap.clone(),
                        e.inst,
                    ),
                    None => break,
                };
                if !ready {
                    break;
                }
                if let Some(t) = trap {
                    if is_head {
                        return Err(SimError::Trap { cycle: now, trap: t });
                    }
                    break; // park until squashed
                }
                if matches!(inst_peek, Instruction::Halt) && !is_head {
                    break; // a speculative iteration ran off the program
                }
                if inst_peek.is_store() {
                    if self.tciu.slots[s].store_buffer.is_full() {
                        break;
                    }
                    // a store that issued on its address alone resolves
                    // its data operand here at the latest
                    let (vk, vreg, vseq) = {
                        let e = self.pipes[s].rob.front().unwrap();
                        (e.value_known, e.inst.sources()[1], e.src_seq[1])
                    };
                    if !vk {
                        match self.read_src(s, vreg, vseq, now) {
                            Some(v) => {
                                let e = self.pipes[s].rob.front_mut().unwrap();
                                e.srcs[1] = v;
                                e.value_known = true;
                            }
                            None => break, // data still in flight
                        }
                    }
                }
                let e = self.pipes[s].rob.pop_front().unwrap();
                if let Some(d) = e.inst.dest() {
                    let f = d.flat();
                    if self.pipes[s].rename[f] == Some(e.seq) {
                        self.pipes[s].rename[f] = None;
                    }
                }
                if is_head {
                    self.committed_total += 1;
                    if self.mode == Mode::FullDsmt {
                        self.dsmt_committed += 1;
                    }
                } else {
                    self.tciu.slots[s].local_commits += 1;
                }
                self.commit_log[s] += 1;
                n += 1;
                match e.inst {
                    Instruction::Halt => {
                        self.halted = true;
                        self.halt_pc = e.pc;
                        break 'ctxs;
                    }
                    Instruction::Nop | Instruction::Jump { .. } => {}
                    Instruction::IntOp { .. }
                    | Instruction::FpOp { .. }
                    | Instruction::Addi { .. }
                    | Instruction::Load { .. } => {
                        let d = e.inst.dest().unwrap();
                        if !is_r0(d) {
                            if let Some((rp, why)) = self.tciu.commit_write(s, d.flat(), e.result)
                            {
                                self.req_squash(rp, why);
                            }
                        }
                        if self.mode == Mode::PreDsmt && is_head {
                            if let Some((rt, imm)) = e.inst.stride_update() {
                                self.tciu.lsst.observe(rt, imm);
                            }
                        }
                    }
                    Instruction::Store { .. } => {
                        let addr = e.addr.unwrap();
                        let val = e.srcs[1];
                        let pushed = self.tciu.slots[s].store_buffer.push(addr, val);
                        debug_assert!(pushed);
                        if self.mode == Mode::FullDsmt {
                            // bookkeeping only; the readers() check below
                            // carries correctness even when the table is full
                            let _ = self.mdrt.record_store(s, addr);
                            let readers = self.mdrt.readers(addr);
                            for p2 in pos + 1..self.tciu.ring.len() {
                                let s2 = self.tciu.ring[p2];
                                if let Some(v) = readers[s2] {
                                    if v != val {
                                        self.req_squash(p2, SquashReason::MemoryEarlyRead);
                                        break;
                                    }
                                }
                            }
                        }
                    }
                    Instruction::Branch { .. } => {
                        let taken = e.taken;
                        let pcb = e.pc;
                        let tgt = e.target;
                        self.btb.update(pcb, taken, tgt);
                        if is_head {
                            self.branches += 1;
                        } else {
                            self.tciu.slots[s].local_branches += 1;
                        }
                        let closing =
                            self.episode.as_ref().map_or(false, |ep| ep.branch_pc == pcb);
                        if self.mode == Mode::FullDsmt && closing {
                            if is_head {
                                self.loops.observe_branch(pcb, tgt, taken, false);
                                if taken {
                                    self.tciu.slots[s].j_bit = true;
                                    if let Some(ep) = self.episode.as_mut() {
                                        ep.iterations += 1;
                                    }
                                } else {
                                    self.pend_event = Some(Event::LoopExit);
                                    break 'ctxs;
                                }
                            } else {
                                self.tciu.slots[s].j_bit = true;
                                if !taken {
                                    self.pipes[s].exit_pending = true;
                                }
                                break; // iteration closed; fetch is frozen
                            }
                        } else {
                            if is_head {
                                let eligible =
                                    self.mode == Mode::NonDsmt && self.cfg.contexts > 1;
                                if let Some(lp) =
                                    self.loops.observe_branch(pcb, tgt, taken, eligible)
                                {
                                    self.pend_event = Some(Event::EnterPre { pc: lp });
                                }
                                if self.mode == Mode::PreDsmt && closing {
                                    if taken {
                                        self.tciu.latch_anchors_from_head();
                                        let full = {
                                            let ep = self.episode.as_mut().unwrap();
                                            ep.pre_iters += 1;
                                            ep.pre_iters >= self.cfg.pre_dsmt_iterations
                                        };
                                        if full {
                                            self.pend_event = Some(Event::FullEntry);
                                        }
                                    } else {
                                        self.pend_event = Some(Event::PreAbort);
                                    }
                                }
                            }
                            let mispred = e.frozen
                                || e.predicted_taken != taken
                                || (taken && e.predicted_taken && e.predicted_target != tgt);
                            if mispred {
                                if is_head {
                                    self.mispredicts += 1;
                                } else {
                                    self.tciu.slots[s].local_mispredicts += 1;
                                }
                                let next = if taken { tgt } else { pcb.wrapping_add(4) };
                                self.flush_pipe(s);
                                self.pipes[s].fetch_pc = Some(next);
                            }
                            if self.pend_event.is_some() {
                                break 'ctxs;
                            }
                        }
                    }
                }
                if self.pipes[s].rob.is_empty() {
                    break;
                }
            }
        }
        Ok(())
    }

    /// Record a squash request; the earliest ring position wins.
    fn req_squash(&mut self, pos: usize, reason: SquashReason) {
        debug_assert!(pos >= 1);
        match self.pend_squash {
            Some((p, _)) if p <= pos => {}
            _ => self.pend_squash = Some((pos, reason)),
        }
    }

    /// Drop every in-flight instruction of a context (its ROB head was a
    /// mispredicted branch that just committed, or the context restarts).
    fn flush_pipe(&mut self, s: usize) {
        let p = &mut self.pipes[s];
        p.rob.clear();
        p.fetch_buf.clear();
        p.inflight = None;
        p.rename = [None; NUM_REGS];
    }

    /// Full front-end reset for a fresh clone or a squashed context.
    fn reset_pipe(&mut self, s: usize) {
        self.flush_pipe(s);
        let p = &mut self.pipes[s];
        p.fetch_pc = None;
        p.disp_written = [false; NUM_REGS];
        p.exit_pending = false;
    }

    /// Fill every free slot with a clone of the next future iteration.
    fn spawn_clones(&mut self, now: u64, target: u32) {
        while let Some(slot) = self.tciu.clone_at_tail(now, self.cfg.clone_cost) {
            self.reset_pipe(slot);
            self.pipes[slot].fetch_pc = Some(target);
        }
    }

    fn apply_squash(&mut self, now: u64, pos: usize, reason: SquashReason) {
        if pos >= self.tciu.ring.len() {
            return;
        }
        for slot in self.tciu.squash_from_pos(pos, reason) {
            self.mdrt.clear_slot(slot);
            self.reset_pipe(slot);
        }
        let target = self.episode.as_ref().expect("squash outside an episode").target;
        self.spawn_clones(now, target);
    }

    /// One-shot speculative-IPC verdict for the current episode.
    fn classify_episode(&mut self, now: u64) -> Quality {
        let (bpc, sipc, iters) = {
            let ep = self.episode.as_mut().unwrap();
            ep.classified = true;
            let cyc = now.saturating_sub(ep.full_start_cycle).max(1) as f64;
            (
                ep.branch_pc,
                (self.dsmt_committed - ep.full_base_commits) as f64 / cyc,
                ep.iterations,
            )
        };
        self.loops
            .classify(bpc, sipc, iters, self.cfg.contexts as u64, self.cfg.min_run_length)
    }

    /// Tear down the current episode: classify if still pending, squash
    /// every speculative context, clear the dependence table, and point
    /// the head at `resume` when the exit decides the next fetch address.
    fn exit_episode_now(&mut self, now: u64, resume: Option<u32>) {
        let was_full = self.mode == Mode::FullDsmt;
        if was_full && self.episode.as_ref().map_or(false, |ep| !ep.classified) {
            self.classify_episode(now);
        }
        self.episode = None;
        for slot in self.tciu.exit_episode() {
            self.reset_pipe(slot);
        }
        if was_full {
            let peak = self.mdrt.peak;
            self.mdrt = Mdrt::new(self.cfg.mdrt_entries, self.cfg.contexts);
            self.mdrt.peak = peak;
        }
        self.mode = Mode::NonDsmt;
        if let Some(pc) = resume {
            let h = self.tciu.head();
            self.flush_pipe(h);
            self.pipes[h].fetch_pc = Some(pc);
        }
    }

    fn stage_boundary(&mut self, now: u64) {
        if self.halted {
            self.pend_event = None;
            self.pend_squash = None;
            if self.mode != Mode::NonDsmt {
                self.exit_episode_now(now, None);
            }
            return;
        }
        if let Some(ev) = self.pend_event.take() {
            self.pend_squash = None; // an exit supersedes same-cycle squashes
            match ev {
                Event::EnterPre { pc } => {
                    let target = self.loops.get(pc).expect("proposed loop exists").target;
                    self.episode = Some(Episode {
                        branch_pc: pc,
                        target,
                        start_cycle: now,
                        pre_base_commits: self.committed_total,
                        pre_iters: 0,
                        full_start_cycle: 0,
                        full_base_commits: 0,
                        iterations: 0,
                        classified: false,
                    });
                    self.mode = Mode::PreDsmt;
                    self.episodes_started += 1;
                    let h = self.tciu.head();
                    self.tciu.slots[h].r_bit = [false; NUM_REGS];
                    self.tciu.slots[h].d_bit = [false; NUM_REGS];
                    self.tciu.anchors_r = [false; NUM_REGS];
                    self.tciu.anchors_d = [false; NUM_REGS];
                    self.tciu.lsst.reset_for_episode();
                    self.pipes[h].disp_written = [false; NUM_REGS];
                }
                Event::PreAbort => {
                    let ep = self.episode.take().unwrap();
                    self.loops.classify(
                        ep.branch_pc,
                        0.0,
                        0,
                        self.cfg.contexts as u64,
                        self.cfg.min_run_length,
                    );
                    self.episodes_aborted += 1;
                    self.mode = Mode::NonDsmt;
                }
                Event::FullEntry => {
                    let (bpc, tgt) = {
                        let ep = self.episode.as_mut().unwrap();
                        let cyc = now.saturating_sub(ep.start_cycle).max(1) as f64;
                        let commits = (self.committed_total - ep.pre_base_commits) as f64;
                        ep.full_start_cycle = now;
                        ep.full_base_commits = self.dsmt_committed;
                        let pre_ipc = commits / cyc;
                        let run_len = commits / f64::from(ep.pre_iters.max(1));
                        (ep.branch_pc, {
                            self_note(&mut self.loops, ep.branch_pc, pre_ipc, run_len);
                            ep.target
                        })
                    };
                    self.mode = Mode::FullDsmt;
                    let h = self.tciu.head();
                    // the head's run-ahead spans future iterations; under
                    // threading it owns exactly one, so restart it there
                    self.flush_pipe(h);
                    self.pipes[h].fetch_pc = Some(tgt);
                    self.tciu.begin_full_episode(tgt);
                    self.spawn_clones(now, tgt);
                    self.loops.note_threaded(bpc);
                }
                Event::LoopExit => {
                    let fall = self.episode.as_ref().unwrap().branch_pc.wrapping_add(4);
                    self.exit_episode_now(now, Some(fall));
                }
            }
        } else if let Some((pos, reason)) = self.pend_squash.take() {
            self.apply_squash(now, pos, reason);
        } else if self.mode == Mode::FullDsmt && self.tciu.ring.len() > 1 {
            let h = self.tciu.head();
            if self.tciu.slots[h].j_bit && self.tciu.slots[h].store_buffer.is_empty() {
                match self.tciu.final_reads_check() {
                    Some((pos, reason)) => self.apply_squash(now, pos, reason),
                    None => {
                        let nh = self.tciu.ring[1];
                        let nh_j = self.tciu.slots[nh].j_bit;
                        let nh_exit = self.pipes[nh].exit_pending;
                        let prom = self.tciu.promote();
                        self.committed_total += prom.transferred_commits;
                        self.dsmt_committed += prom.transferred_commits;
                        self.branches += prom.transferred_branches;
                        self.mispredicts += prom.transferred_mispredicts;
                        if nh_j && !nh_exit {
                            if let Some(ep) = self.episode.as_mut() {
                                ep.iterations += 1;
                            }
                        }
                        self.mdrt.clear_slot(prom.old_head);
                        self.mdrt.clear_load_bits(prom.new_head);
                        self.reset_pipe(prom.old_head);
                        if nh_exit {
                            let fall =
                                self.episode.as_ref().unwrap().branch_pc.wrapping_add(4);
                            self.exit_episode_now(now, Some(fall));
                        } else {
                            let tgt = self.episode.as_ref().unwrap().target;
                            self.spawn_clones(now, tgt);
                        }
                    }
                }
            }
        }
        // first-episode quality window
        if self.mode == Mode::FullDsmt {
            let due = match &self.episode {
                Some(ep) => {
                    !ep.classified
                        && now.saturating_sub(ep.full_start_cycle) >= self.cfg.sipc_window
                }
                None => false,
            };
            if due && self.classify_episode(now) == Quality::Bad {
                let resume = if self.tciu.slots[self.tciu.head()].j_bit {
                    Some(self.episode.as_ref().unwrap().target)
                } else {
                    None // mid-iteration: the frozen branch resolves the refetch
                };
                self.exit_episode_now(now, resume);
            }
        }
    }

    fn write_trace_line(&mut self, now: u64) {
        let mut fetch = String::new();
        for (i, (s, pc)) in self.fetch_log.iter().enumerate() {
            if i > 0 {
                fetch.push(' ');
            }
            fetch.push_str(&format!("{}@{:#x}", s, pc));
        }
        let commits: Vec<String> = self.commit_log.iter().map(|c| c.to_string()).collect();
        let line = format!(
            "cycle {} mode {} fetch[{}] commits[{}]\n",
            now,
            self.mode.name(),
            fetch,
            commits.join(" ")
        );
        if let Some(w) = self.trace.as_mut() {
            let _ = w.write_all(line.as_bytes());
        }
    }
}

/// Free-function shim: record observation-phase quality numbers without
/// fighting the borrow on the episode above.
fn self_note(loops: &mut LoopTable, pc: u32, pre_ipc: f64, run_length: f64) {
    loops.note_pre_phase(pc, pre_ipc, run_length);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::oracle::ArchState;

    fn cfg_with(contexts: usize) -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.contexts = contexts;
        cfg
    }

    fn run_both(src: &str, cfg: &SimConfig) -> (Machine, ArchState) {
        let prog = assemble(src).expect("test program assembles");
        let mut m = Machine::new(&prog, cfg);
        let stop = m.run().expect("no trap");
        assert_eq!(stop, StopReason::Halted, "test program must halt");
        let mut oracle = ArchState::new(&prog);
        oracle.run(1_000_000).expect("reference run");
        (m, oracle)
    }

    fn assert_equivalent(m: &Machine, oracle: &ArchState) {
        let got = m.arch_state();
        let diffs = oracle.diff(&got);
        assert!(diffs.is_empty(), "state diverged: {:?}", diffs);
        assert_eq!(m.committed_total, oracle.committed, "committed counts");
        assert_eq!(m.store_trace, oracle.store_trace, "store order");
    }

    #[test]
    fn straightline_matches_reference() {
        let src = "
            addi r1, r0, 7
            addi r2, r0, 35
            add  r3, r1, r2
            mul  r4, r3, r2
            sub  r5, r4, r1
            sw   r5, out(r0)
            halt
            out: .word 0
        ";
        let (m, oracle) = run_both(src, &cfg_with(1));
        assert_equivalent(&m, &oracle);
        assert_eq!(m.arch_state().int_regs[4], 42 * 35);
    }

    #[test]
    fn writes_to_r0_are_discarded() {
        let src = "
            addi r0, r0, 7
            add  r1, r0, r0
            addi r2, r1, 3
            halt
        ";
        let (m, oracle) = run_both(src, &cfg_with(1));
        assert_equivalent(&m, &oracle);
        assert_eq!(m.arch_state().int_regs[1], 0);
        assert_eq!(m.arch_state().int_regs[2], 3);
    }

    #[test]
    fn dependent_pair_issues_after_writeback() {
        let src = "
            addi r1, r0, 5
            addi r2, r1, 1
            halt
        ";
        let prog = assemble(src).unwrap();
        let mut m = Machine::new(&prog, &cfg_with(1));
        let mut seen: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
        while !m.halted {
            m.step().unwrap();
            for e in &m.pipes[0].rob {
                if let (Some(i), Some(w)) = (e.issued, e.wb_cycle) {
                    seen.insert(e.pc, (i, w));
                }
            }
        }
        let a = seen[&prog.base];
        let b = seen[&(prog.base + 4)];
        assert_eq!(b.0, a.1 + 1, "consumer issues the cycle after write-back");
    }

    #[test]
    fn rob_capacity_throttles_dispatch() {
        let prog = assemble("halt").unwrap();
        let cfg = cfg_with(1);
        let mut m = Machine::new(&prog, &cfg);
        // 31 unfinished occupants and four arrivals leave room for one
        for k in 0..31u64 {
            let mut e = Entry::new(k, 0x100 + 4 * k as u32, Instruction::Nop, None, 0);
            e.issued = None;
            m.pipes[0].rob.push_back(e);
        }
        m.pipes[0].next_seq = 31;
        for k in 0..4u32 {
            m.pipes[0]
                .fetch_buf
                .push_back((0x200 + 4 * k, Instruction::Nop, None));
        }
        m.pipes[0].fetch_pc = None;
        m.stage_dispatch(5);
        assert_eq!(m.pipes[0].rob.len(), 32);
        assert_eq!(m.pipes[0].fetch_buf.len(), 3);
    }

    #[test]
    fn per_class_issue_caps_hold() {
        let prog = assemble("halt").unwrap();
        let mut cfg = cfg_with(1);
        cfg.rs_sizes[crate::isa::FuClass::IntMul.index()] = 2;
        let mut m = Machine::new(&prog, &cfg);
        let mul = Instruction::IntOp { op: crate::isa::IntOp::Mul, rd: 1, rs: 0, rt: 0 };
        for k in 0..3u64 {
            let e = Entry::new(k, 0x100 + 4 * k as u32, mul, None, 3);
            m.pipes[0].rob.push_back(e);
        }
        m.stage_issue(4);
        let issued = m.pipes[0].rob.iter().filter(|e| e.issued.is_some()).count();
        assert_eq!(issued, 2, "reservation stations cap per-cycle issue");
    }

    #[test]
    fn mispredicts_counted_and_recovered() {
        // three-iteration counted loop: the first taken and the final
        // not-taken closing branch both surprise the predictor
        let src = "
            addi r1, r0, 3
            loop:
            addi r1, r1, -1
            bne  r1, r0, loop
            addi r2, r0, 9
            halt
        ";
        let (m, oracle) = run_both(src, &cfg_with(1));
        assert_equivalent(&m, &oracle);
        assert_eq!(m.mispredicts, 2);
        assert_eq!(m.branches, 3);
    }

    #[test]
    fn cold_cache_misses_are_counted() {
        let src = "
            lw r1, x(r0)
            add r2, r1, r1
            halt
            x: .word 17
        ";
        let (m, oracle) = run_both(src, &cfg_with(1));
        assert_equivalent(&m, &oracle);
        assert!(m.caches.l1d.misses >= 1);
        assert!(m.caches.l1i.misses >= 1);
        assert_eq!(m.arch_state().int_regs[2], 34);
    }

    #[test]
    fn store_trace_preserves_program_order() {
        let src = "
            addi r1, r0, 5
            sw   r1, a(r0)
            addi r2, r0, 6
            sw   r2, b(r0)
            sw   r0, a(r0)
            lw   r3, b(r0)
            halt
            a: .word 0
            b: .word 0
        ";
        let (m, oracle) = run_both(src, &cfg_with(1));
        assert_equivalent(&m, &oracle);
        assert_eq!(m.store_trace.len(), 3);
        assert_eq!(m.arch_state().int_regs[3], 6);
    }

    #[test]
    fn own_rob_store_forwards_to_load() {
        let src = "
            addi r1, r0, 123
            sw   r1, slot(r0)
            lw   r2, slot(r0)
            halt
            slot: .word 0
        ";
        let (m, oracle) = run_both(src, &cfg_with(1));
        assert_equivalent(&m, &oracle);
        assert_eq!(m.arch_state().int_regs[2], 123);
    }

    #[test]
    fn halt_waits_for_the_store_buffer() {
        let src = "
            addi r1, r0, 77
            sw   r1, out(r0)
            halt
            out: .word 0
        ";
        let (m, oracle) = run_both(src, &cfg_with(1));
        assert_equivalent(&m, &oracle);
        let out = m.program.labels["out"];
        assert_eq!(m.mem.get(&out), Some(&77));
        assert!(m.tciu.slots[m.tciu.head()].store_buffer.is_empty());
    }

    #[test]
    fn runaway_fetch_traps_the_head() {
        let prog = assemble("addi r1, r0, 1").unwrap(); // no halt
        let mut m = Machine::new(&prog, &cfg_with(1));
        let err = m.run();
        assert!(matches!(
            err,
            Err(SimError::Trap { trap: Trap::RunawayPc { .. }, .. })
        ));
    }

    #[test]
    fn fetch_priority_prefers_light_contexts() {
        let prog = assemble("halt").unwrap();
        let mut cfg = cfg_with(4);
        cfg.fetch_ports = 2;
        let mut m = Machine::new(&prog, &cfg);
        for s in 1..3 {
            m.tciu.slots[s].active = true;
            m.tciu.ring.push_back(s);
        }
        for s in 0..3 {
            m.pipes[s].fetch_pc = Some(0x1000);
        }
        // head fetches first even when heavier
        let picked = m.pick_fetch_slots(&[10, 3, 9, 0]);
        assert_eq!(picked, vec![0, 1]);
        // a head that cannot fetch frees its port to the next-lightest
        m.pipes[0].fetch_pc = None;
        let picked = m.pick_fetch_slots(&[10, 9, 3, 0]);
        assert_eq!(picked, vec![2, 1]);
        // a freshly cloned context still fetches: the register copy
        // holds issue, not the front end
        m.tciu.slots[2].hold_until = 5;
        let picked = m.pick_fetch_slots(&[10, 9, 3, 0]);
        assert_eq!(picked, vec![2, 1]);
    }

    #[test]
    fn ideal_policy_grants_every_valid_context() {
        let prog = assemble("halt").unwrap();
        let mut cfg = cfg_with(4);
        cfg.fetch_ports = 2;
        cfg.fetch_policy = FetchPolicy::Ideal;
        let mut m = Machine::new(&prog, &cfg);
        for s in 1..4 {
            m.tciu.slots[s].active = true;
            m.tciu.ring.push_back(s);
            m.pipes[s].fetch_pc = Some(0x1000);
        }
        m.pipes[0].fetch_pc = Some(0x1000);
        let picked = m.pick_fetch_slots(&[4, 3, 2, 1]);
        assert_eq!(picked.len(), 4);
        assert_eq!(picked[0], 0);
    }

    #[test]
    fn loop_carried_memory_dependence_stays_correct() {
        // each iteration stores x[i] and reads x[i-1]; with one context
        // this exercises in-order forwarding through the store buffer
        let src = "
            addi r3, r0, x
            addi r4, r0, 8
            addi r1, r0, 1
            loop:
            sw   r1, 0(r3)
            lw   r2, -4(r3)
            add  r1, r1, r2
            addi r3, r3, 4
            addi r4, r4, -1
            bne  r4, r0, loop
            sw   r1, out(r0)
            halt
            out: .word 0
            guard: .word 0
            x: .space 40
        ";
        let (m, oracle) = run_both(src, &cfg_with(1));
        assert_equivalent(&m, &oracle);
    }
}
