//! Register dependence resolution between contexts.
//!
//! A speculative context that needs a register it has not produced
//! itself resolves the value against the ring, guided by the anchor
//! bits from the last completed non-speculative iteration:
//!
//! * a pending stride prediction (seed) is consumed first;
//! * if the anchor iteration read the register before writing it
//!   (D anchor set), the consumer waits for its immediate
//!   predecessor's committed write — and if the predecessor finished
//!   its whole iteration without one, scans deeper for the nearest
//!   committed version;
//! * with no dependence evidence the nearest committed version wins
//!   directly;
//! * when nothing upstream has committed the register, the consumer
//!   falls back to reading the head's file blindly, allowed only while
//!   the per-register read confidence is high.
//!
//! Every consumed external value leaves an L record.  Later committed
//! writes by predecessors compare their value against successor
//! records (any mismatch is an early read, squashing the reader), and
//! a promotion performs the final comparison of every record sourced
//! from the departing head.  In strict mode the presence of a
//! cross-context record at check time is itself a violation; planted
//! stride predictions keep value-based verification even then.

use crate::tciu::{LKind, LRecord, SquashReason, Tciu, NUM_REGS};

/// Result of a cross-context register read attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadOutcome {
    Value(u32),
    /// Not resolvable yet; retry next cycle.
    Stall,
}

impl Tciu {
    /// Resolve a register read for `slot` when the context has no
    /// in-flight or completed write of its own this iteration.
    pub fn resolve_cross(&mut self, slot: usize, reg: usize) -> ReadOutcome {
        let pos = self.ring_pos(slot).expect("read from inactive context");

        // read-before-write marking feeds the next anchor snapshot
        if self.anchors_r[reg] && !self.slots[slot].r_bit[reg] {
            self.slots[slot].d_bit[reg] = true;
        }

        if pos == 0 {
            return ReadOutcome::Value(self.slots[slot].committed_file[reg]);
        }

        // an iteration sees one consistent external version
        if let Some(rec) = self.slots[slot].l_rec[reg] {
            return ReadOutcome::Value(rec.value);
        }

        if let Some(v) = self.slots[slot].seed[reg] {
            let pred = self.ring[pos - 1];
            self.slots[slot].seed[reg] = None;
            self.slots[slot].l_rec[reg] = Some(LRecord {
                kind: LKind::Seed,
                value: v,
                src_slot: pred,
                src_iter: self.slots[pred].iteration,
            });
            self.lsst.note_consumed(reg as u8);
            return ReadOutcome::Value(v);
        }

        if self.anchors_d[reg] {
            // level 1: wait on the immediate predecessor
            let pred = self.ring[pos - 1];
            if self.slots[pred].r_bit[reg] {
                return self.take_cross(slot, pred, reg);
            }
            if !self.slots[pred].j_bit {
                return ReadOutcome::Stall;
            }
            // level 2: predecessor finished without writing — scan
            // deeper for the nearest committed version
            for p in (0..pos - 1).rev() {
                let q = self.ring[p];
                if self.slots[q].r_bit[reg] {
                    return self.take_cross(slot, q, reg);
                }
                if p > 0 && !self.slots[q].j_bit {
                    return ReadOutcome::Stall;
                }
            }
            self.take_blind(slot, reg)
        } else {
            // no dependence evidence: nearest committed version, else
            // a gated blind read of the head file
            for p in (0..pos).rev() {
                let q = self.ring[p];
                if self.slots[q].r_bit[reg] {
                    return self.take_cross(slot, q, reg);
                }
            }
            self.take_blind(slot, reg)
        }
    }

    fn take_cross(&mut self, slot: usize, src: usize, reg: usize) -> ReadOutcome {
        let value = self.slots[src].committed_file[reg];
        self.slots[slot].l_rec[reg] = Some(LRecord {
            kind: LKind::Cross,
            value,
            src_slot: src,
            src_iter: self.slots[src].iteration,
        });
        ReadOutcome::Value(value)
    }

    fn take_blind(&mut self, slot: usize, reg: usize) -> ReadOutcome {
        if !self.read_conf[reg].is_high() {
            return ReadOutcome::Stall;
        }
        let head = self.head();
        let value = self.slots[head].committed_file[reg];
        self.slots[slot].l_rec[reg] = Some(LRecord {
            kind: LKind::Blind,
            value,
            src_slot: head,
            src_iter: self.slots[head].iteration,
        });
        ReadOutcome::Value(value)
    }

    /// Is this record a version that a commit by the context at ring
    /// position `committer_pos` supersedes?
    fn version_applies(&self, rec: &LRecord, committer_pos: usize) -> bool {
        match self.ring_pos(rec.src_slot) {
            // source departed (promoted away): older than any live context
            None => true,
            Some(p) => {
                if self.slots[rec.src_slot].iteration != rec.src_iter {
                    true // slot was reused by a younger clone; source departed
                } else {
                    p <= committer_pos
                }
            }
        }
    }

    /// Locally commit a register write and check every successor's
    /// consumed values against it.  Returns the earliest ring position
    /// that read prematurely, with the squash reason; the caller
    /// squashes from there.  The write itself always stands.
    pub fn commit_write(
        &mut self,
        slot: usize,
        reg: usize,
        value: u32,
    ) -> Option<(usize, SquashReason)> {
        let pos = self.ring_pos(slot).expect("commit from inactive context");
        let iter = self.slots[slot].iteration;
        self.slots[slot].committed_file[reg] = value;
        self.slots[slot].r_bit[reg] = true;

        for p in pos + 1..self.ring.len() {
            let s = self.ring[p];
            let Some(rec) = self.slots[s].l_rec[reg] else { continue };
            match rec.kind {
                LKind::Seed => {
                    // a seed claims the source's final value; only the
                    // claimed source's own commits can contradict it
                    if rec.src_slot == slot && rec.src_iter == iter && rec.value != value {
                        self.lsst.note_mismatch(reg as u8);
                        return Some((p, SquashReason::LsstMispredict));
                    }
                }
                LKind::Cross | LKind::Blind => {
                    if !self.version_applies(&rec, pos) {
                        continue;
                    }
                    if self.strict_lbit || rec.value != value {
                        if rec.kind == LKind::Blind {
                            self.read_conf[reg].dec();
                        }
                        return Some((p, SquashReason::RegisterEarlyRead));
                    }
                }
            }
        }
        None
    }

    /// Final verification before promoting: every record sourced from
    /// the departing head is compared against its now-final file.
    /// Matches are counted (stride verification, blind-read confidence)
    /// and cleared; the first mismatch aborts with a squash request.
    pub fn final_reads_check(&mut self) -> Option<(usize, SquashReason)> {
        let h = self.head();
        let h_iter = self.slots[h].iteration;
        let h_file = self.slots[h].committed_file;

        for p in 1..self.ring.len() {
            let s = self.ring[p];
            for reg in 0..NUM_REGS {
                let Some(rec) = self.slots[s].l_rec[reg] else { continue };
                if rec.src_slot != h || rec.src_iter != h_iter {
                    continue;
                }
                let matched = rec.value == h_file[reg];
                match rec.kind {
                    LKind::Seed => {
                        if matched {
                            self.lsst.note_match(reg as u8);
                            self.slots[s].l_rec[reg] = None;
                        } else {
                            self.lsst.note_mismatch(reg as u8);
                            return Some((p, SquashReason::LsstMispredict));
                        }
                    }
                    LKind::Blind => {
                        if self.strict_lbit || !matched {
                            self.read_conf[reg].dec();
                            return Some((p, SquashReason::RegisterEarlyRead));
                        }
                        self.read_conf[reg].inc();
                        self.slots[s].l_rec[reg] = None;
                    }
                    LKind::Cross => {
                        if self.strict_lbit || !matched {
                            return Some((p, SquashReason::RegisterEarlyRead));
                        }
                        self.slots[s].l_rec[reg] = None;
                    }
                }
            }
        }
        None
    }

    /// Newest buffered store value visible to `slot` for an address:
    /// its own store buffer first, then each predecessor's, nearest
    /// first.  Memory is the fallback when this returns None.
    pub fn lookup_store_forward(&self, slot: usize, addr: u32) -> Option<u32> {
        let pos = self.ring_pos(slot)?;
        for p in (0..=pos).rev() {
            if let Some(v) = self.slots[self.ring[p]].store_buffer.lookup(addr) {
                return Some(v);
            }
        }
        None
    }
}
