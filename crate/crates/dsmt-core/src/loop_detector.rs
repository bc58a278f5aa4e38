//! Loop detection and speculation-quality tracking.
//!
//! The loop table watches backward conditional branches committed by
//! the non-speculative context.  A branch gets an entry on its first
//! taken commit and becomes a threading candidate on its second; from
//! then on every taken commit in sequential mode proposes entering
//! pre-threading observation, subject to nest arbitration.
//!
//! A nest stack (innermost loop at index 0) arbitrates between nested
//! candidates: loops already classified bad are excluded, the best
//! measured speculative IPC wins, unmeasured loops rank below measured
//! ones, and with no measurements at all the innermost loop wins.  A
//! candidate disjoint from the current nest resets the stack.

use std::collections::BTreeMap;

use serde::Serialize;

/// Speculation quality of a loop, decided after its first full
/// threading episode (or an aborted observation phase).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Quality {
    Unknown,
    Good,
    Bad,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopEntry {
    pub branch_pc: u32,
    pub target: u32,
    /// Consecutive taken commits; resets on a not-taken commit.
    pub iter_count: u64,
    /// Lifetime taken commits.
    pub total_iterations: u64,
    /// True once the branch has been seen taken at least twice.
    pub loop_flag: bool,
    pub quality: Quality,
    /// Speculative IPC from the most recent classification (gated to
    /// zero when the episode was too short or the body too small).
    pub measured_sipc: Option<f64>,
    /// Sequential IPC measured during the observation phase.
    pub pre_ipc: f64,
    /// Average instructions per iteration from the observation phase.
    pub run_length: f64,
    /// Completed threading episodes.
    pub times_threaded: u64,
}

impl LoopEntry {
    fn contains(&self, other: &LoopEntry) -> bool {
        self.target <= other.target && other.branch_pc <= self.branch_pc
    }
}

#[derive(Debug, Default)]
pub struct LoopTable {
    entries: BTreeMap<u32, LoopEntry>,
    /// Branch pcs of the active nest, innermost first.
    stack: Vec<u32>,
}

impl LoopTable {
    pub fn new() -> LoopTable {
        LoopTable::default()
    }

    pub fn get(&self, branch_pc: u32) -> Option<&LoopEntry> {
        self.entries.get(&branch_pc)
    }

    pub fn entries(&self) -> impl Iterator<Item = &LoopEntry> {
        self.entries.values()
    }

    pub fn nest_stack(&self) -> &[u32] {
        &self.stack
    }

    /// Record a committed conditional branch from the non-speculative
    /// context.  Returns the branch pc of a loop to start observing,
    /// if this commit should trigger pre-threading.  `eligible` is
    /// false when the machine cannot enter observation right now
    /// (already threading, or only one context exists).
    pub fn observe_branch(
        &mut self,
        pc: u32,
        target: u32,
        taken: bool,
        eligible: bool,
    ) -> Option<u32> {
        if target > pc {
            return None; // only backward branches close loops
        }
        match self.entries.get_mut(&pc) {
            None => {
                if taken {
                    self.entries.insert(
                        pc,
                        LoopEntry {
                            branch_pc: pc,
                            target,
                            iter_count: 1,
                            total_iterations: 1,
                            loop_flag: false,
                            quality: Quality::Unknown,
                            measured_sipc: None,
                            pre_ipc: 0.0,
                            run_length: 0.0,
                            times_threaded: 0,
                        },
                    );
                }
                None
            }
            Some(e) => {
                if !taken {
                    e.iter_count = 0; // flag persists
                    return None;
                }
                e.iter_count += 1;
                e.total_iterations += 1;
                e.loop_flag = true;
                e.target = target;
                if !eligible || e.quality == Quality::Bad {
                    return None;
                }
                self.push_nest(pc);
                if self.select() != Some(pc) {
                    return None;
                }
                // an unmeasured loop yields to a known inner loop that has
                // not bid yet: the innermost level is threaded first
                let me = &self.entries[&pc];
                if me.measured_sipc.is_none()
                    && self.entries.values().any(|e| {
                        e.branch_pc != pc
                            && e.loop_flag
                            && e.quality != Quality::Bad
                            && me.contains(e)
                    })
                {
                    return None;
                }
                Some(pc)
            }
        }
    }

    /// Insert a candidate into the nest stack, keeping the innermost
    /// loop at index 0.  A loop that neither contains nor is contained
    /// by the current nest resets the stack.
    fn push_nest(&mut self, pc: u32) {
        if self.stack.contains(&pc) {
            return;
        }
        let new = &self.entries[&pc];
        // how many existing levels does the new loop enclose?
        let mut inner = 0;
        while inner < self.stack.len() {
            let lvl = &self.entries[&self.stack[inner]];
            if new.contains(lvl) {
                inner += 1;
            } else {
                break;
            }
        }
        // every remaining level must enclose the new loop
        let nested = self.stack[inner..]
            .iter()
            .all(|p| self.entries[p].contains(new));
        if !nested {
            self.stack.clear();
            self.stack.push(pc);
        } else {
            self.stack.insert(inner, pc);
        }
    }

    /// Pick the best threading candidate from the nest stack: highest
    /// measured speculative IPC wins, unmeasured loops rank lowest,
    /// innermost wins ties, bad loops are skipped.
    pub fn select(&self) -> Option<u32> {
        let mut best: Option<(u32, Option<f64>)> = None;
        for &pc in &self.stack {
            let e = &self.entries[&pc];
            if e.quality == Quality::Bad {
                continue;
            }
            let score = e.measured_sipc;
            let better = match &best {
                None => true,
                Some((_, cur)) => match (score, cur) {
                    (Some(s), Some(c)) => s > *c, // strict: ties keep the inner one
                    (Some(_), None) => true,
                    _ => false,
                },
            };
            if better {
                best = Some((pc, score));
            }
        }
        best.map(|(pc, _)| pc)
    }

    /// Record the sequential IPC and body size measured during the
    /// observation phase.
    pub fn note_pre_phase(&mut self, pc: u32, pre_ipc: f64, run_length: f64) {
        if let Some(e) = self.entries.get_mut(&pc) {
            e.pre_ipc = pre_ipc;
            e.run_length = run_length;
        }
    }

    pub fn note_threaded(&mut self, pc: u32) {
        if let Some(e) = self.entries.get_mut(&pc) {
            e.times_threaded += 1;
        }
    }

    /// Classify a loop after a threading episode (or an aborted
    /// observation, with `sipc` 0).  The measured IPC is gated to zero
    /// when fewer iterations completed than contexts exist or when the
    /// body is below the minimum run length; the loop is good only if
    /// the surviving figure reaches the sequential baseline.
    pub fn classify(
        &mut self,
        pc: u32,
        sipc: f64,
        iterations: u64,
        min_iterations: u64,
        min_run_length: u32,
    ) -> Quality {
        let e = self.entries.get_mut(&pc).expect("classifying unknown loop");
        let gated = if iterations < min_iterations || e.run_length < min_run_length as f64 {
            0.0
        } else {
            sipc
        };
        e.measured_sipc = Some(gated);
        e.quality = if gated > 0.0 && gated >= e.pre_ipc {
            Quality::Good
        } else {
            Quality::Bad
        };
        e.quality
    }
}
