//! Standalone property suites for the speculation protocol.
//!
//! Each suite checks one protocol rule two ways: exhaustive enumeration
//! of every small instance (a few contexts, a few registers, a few
//! addresses), and randomized longer sequences via proptest. The oracle
//! in every case is a brute-force model written directly from the rules,
//! independent of the production data structures.

use dsmt_core::memory::Mdrt;
use dsmt_core::sat::SatCounter2;
use dsmt_core::tciu::{SquashReason, Tciu};
use dsmt_core::SimConfig;
use proptest::prelude::*;
use std::collections::BTreeMap;

// ---------------------------------------------------------------- counters

/// Clamped-integer model of a 2-bit saturating counter.
#[derive(Clone, Copy)]
struct CounterModel(i32);

impl CounterModel {
    fn inc(&mut self) {
        self.0 = (self.0 + 1).min(3);
    }
    fn dec(&mut self) {
        self.0 = (self.0 - 1).max(0);
    }
}

#[test]
fn sat_counter_matches_model_exhaustively() {
    // every initial state x every inc/dec sequence of length 10
    for init in 0u8..=3 {
        for seq in 0u32..(1 << 10) {
            let mut c = SatCounter2::new(init);
            let mut m = CounterModel(init as i32);
            for bit in 0..10 {
                if seq >> bit & 1 == 1 {
                    c.inc();
                    m.inc();
                } else {
                    c.dec();
                    m.dec();
                }
                assert_eq!(c.get() as i32, m.0);
                assert_eq!(c.is_high(), m.0 >= 2);
            }
        }
    }
}

proptest! {
    #[test]
    fn sat_counter_matches_model_randomized(init in 0u8..=3, ops in prop::collection::vec(any::<bool>(), 0..200)) {
        let mut c = SatCounter2::new(init);
        let mut m = CounterModel(init as i32);
        for up in ops {
            if up { c.inc(); m.inc(); } else { c.dec(); m.dec(); }
            prop_assert_eq!(c.get() as i32, m.0);
        }
    }
}

// ------------------------------------------------------ dependence table

/// One table operation in the enumerable alphabet.
#[derive(Clone, Copy, Debug)]
enum TableOp {
    Load { slot: usize, addr: u32, val: u32 },
    Store { slot: usize, addr: u32 },
    ClearSlot { slot: usize },
}

/// Brute-force model of the dependence table rules: at most one entry
/// per address, capacity-bounded, first load value per (address, slot)
/// wins, clearing a slot drops its marks and evicts entries that no
/// slot references any more.
#[derive(Default)]
struct TableModel {
    cap: usize,
    slots: usize,
    entries: BTreeMap<u32, (Vec<Option<u32>>, Vec<bool>)>,
}

impl TableModel {
    fn new(cap: usize, slots: usize) -> TableModel {
        TableModel {
            cap,
            slots,
            entries: BTreeMap::new(),
        }
    }

    fn has_room(&self, addr: u32) -> bool {
        self.entries.contains_key(&addr) || self.entries.len() < self.cap
    }

    fn apply(&mut self, op: TableOp) -> bool {
        match op {
            TableOp::Load { slot, addr, val } => {
                if !self.has_room(addr) {
                    return false;
                }
                let slots = self.slots;
                let e = self
                    .entries
                    .entry(addr)
                    .or_insert_with(|| (vec![None; slots], vec![false; slots]));
                if e.0[slot].is_none() {
                    e.0[slot] = Some(val);
                }
                true
            }
            TableOp::Store { slot, addr } => {
                if !self.has_room(addr) {
                    return false;
                }
                let slots = self.slots;
                let e = self
                    .entries
                    .entry(addr)
                    .or_insert_with(|| (vec![None; slots], vec![false; slots]));
                e.1[slot] = true;
                true
            }
            TableOp::ClearSlot { slot } => {
                for e in self.entries.values_mut() {
                    e.0[slot] = None;
                    e.1[slot] = false;
                }
                self.entries
                    .retain(|_, e| e.0.iter().any(Option::is_some) || e.1.iter().any(|&b| b));
                true
            }
        }
    }
}

fn check_against_model(table: &Mdrt, model: &TableModel, all_addrs: &[u32]) {
    assert_eq!(table.len(), model.entries.len(), "entry count diverged");
    for &a in all_addrs {
        match model.entries.get(&a) {
            Some((reads, stores)) => {
                assert_eq!(&table.readers(a), reads, "readers diverged at {a:#x}");
                let e = table.entry(a).expect("entry missing");
                assert_eq!(&e.s_bit, stores, "store bits diverged at {a:#x}");
            }
            None => {
                assert!(table.entry(a).is_none(), "ghost entry at {a:#x}");
            }
        }
    }
}

#[test]
fn dependence_table_matches_model_exhaustively() {
    // 2 slots, 3 addresses, capacity 2, every op sequence of length 4
    let addrs = [0u32, 4, 8];
    let mut alphabet = Vec::new();
    for slot in 0..2 {
        for &addr in &addrs {
            alphabet.push(TableOp::Load {
                slot,
                addr,
                val: 0, // fixed per-op value; uniqueness injected below
            });
            alphabet.push(TableOp::Store { slot, addr });
        }
        alphabet.push(TableOp::ClearSlot { slot });
    }
    let n = alphabet.len() as u64;
    for seq in 0..n.pow(4) {
        let mut table = Mdrt::new(2, 2);
        let mut model = TableModel::new(2, 2);
        let mut s = seq;
        for step in 0..4 {
            let mut op = alphabet[(s % n) as usize];
            s /= n;
            // give each load a distinct value so first-wins is observable
            if let TableOp::Load { val, .. } = &mut op {
                *val = 100 + step;
            }
            let accepted = match op {
                TableOp::Load { slot, addr, val } => table.record_load(slot, addr, val).is_ok(),
                TableOp::Store { slot, addr } => table.record_store(slot, addr).is_ok(),
                TableOp::ClearSlot { slot } => {
                    table.clear_slot(slot);
                    true
                }
            };
            assert_eq!(accepted, model.apply(op), "acceptance diverged on {op:?}");
            check_against_model(&table, &model, &addrs);
        }
    }
}

proptest! {
    #[test]
    fn dependence_table_matches_model_randomized(
        ops in prop::collection::vec(
            prop_oneof![
                (0usize..4, prop::sample::select(vec![0u32, 4, 8, 12, 16, 20, 24, 28]), any::<u32>())
                    .prop_map(|(slot, addr, val)| TableOp::Load { slot, addr, val }),
                (0usize..4, prop::sample::select(vec![0u32, 4, 8, 12, 16, 20, 24, 28]))
                    .prop_map(|(slot, addr)| TableOp::Store { slot, addr }),
                (0usize..4).prop_map(|slot| TableOp::ClearSlot { slot }),
            ],
            0..64,
        )
    ) {
        let addrs = [0u32, 4, 8, 12, 16, 20, 24, 28];
        let mut table = Mdrt::new(4, 4);
        let mut model = TableModel::new(4, 4);
        for op in ops {
            let accepted = match op {
                TableOp::Load { slot, addr, val } => table.record_load(slot, addr, val).is_ok(),
                TableOp::Store { slot, addr } => table.record_store(slot, addr).is_ok(),
                TableOp::ClearSlot { slot } => { table.clear_slot(slot); true }
            };
            prop_assert_eq!(accepted, model.apply(op));
            prop_assert_eq!(table.len(), model.entries.len());
            for &a in &addrs {
                prop_assert_eq!(table.readers(a), model.entries.get(&a).map_or(vec![None; 4], |e| e.0.clone()));
            }
        }
    }
}

// ------------------------------------------------------------ context ring

/// One context-ring operation.
#[derive(Clone, Copy, Debug)]
enum RingOp {
    Clone,
    Promote,
    Squash(usize),
}

/// Assert the two ring invariants: iteration numbers strictly ascend
/// from head to tail, and the head is the one and only non-speculative
/// active context.
fn assert_ring_invariants(t: &Tciu) {
    let iters: Vec<u64> = t.ring.iter().map(|&s| t.slots[s].iteration).collect();
    assert!(
        iters.windows(2).all(|w| w[0] < w[1]),
        "iterations not strictly ascending: {iters:?}"
    );
    assert_eq!(t.head(), t.ring[0]);
    for (pos, &s) in t.ring.iter().enumerate() {
        assert!(t.slots[s].active, "inactive context {s} on the ring");
        assert_eq!(
            t.is_speculative(s),
            pos != 0,
            "speculation flag wrong at ring position {pos}"
        );
    }
    let active = t.slots.iter().filter(|c| c.active).count();
    assert_eq!(active, t.ring.len(), "active contexts off the ring");
}

fn apply_ring_op(t: &mut Tciu, op: RingOp) -> bool {
    match op {
        RingOp::Clone => t.clone_at_tail(0, 2).is_some(),
        RingOp::Promote => {
            if t.ring.len() > 1 {
                t.promote();
                true
            } else {
                false
            }
        }
        RingOp::Squash(pos) => {
            if pos >= 1 && pos < t.ring.len() {
                t.squash_from_pos(pos, SquashReason::RegisterEarlyRead);
                true
            } else {
                false
            }
        }
    }
}

#[test]
fn ring_invariants_hold_exhaustively() {
    // depth-6 DFS over every applicable op sequence on a 4-context unit
    fn dfs(t: &Tciu, depth: usize, visited: &mut u64) {
        assert_ring_invariants(t);
        *visited += 1;
        if depth == 0 {
            return;
        }
        let mut ops = vec![RingOp::Clone, RingOp::Promote];
        for pos in 1..t.ring.len() {
            ops.push(RingOp::Squash(pos));
        }
        for op in ops {
            let mut c = t.clone();
            if apply_ring_op(&mut c, op) {
                dfs(&c, depth - 1, visited);
            }
        }
    }
    let mut cfg = SimConfig::default();
    cfg.contexts = 4;
    let mut t = Tciu::new(&cfg);
    t.begin_full_episode(0x1000);
    let mut visited = 0;
    dfs(&t, 12, &mut visited);
    assert!(visited > 10_000, "enumeration unexpectedly small: {visited}");
}

proptest! {
    #[test]
    fn ring_invariants_hold_randomized(
        contexts in 2usize..=4,
        ops in prop::collection::vec(
            prop_oneof![
                Just(RingOp::Clone),
                Just(RingOp::Promote),
                (1usize..4).prop_map(RingOp::Squash),
            ],
            0..128,
        )
    ) {
        let mut cfg = SimConfig::default();
        cfg.contexts = contexts;
        let mut t = Tciu::new(&cfg);
        t.begin_full_episode(0x2000);
        assert_ring_invariants(&t);
        for op in ops {
            apply_ring_op(&mut t, op);
            assert_ring_invariants(&t);
        }
    }
}

// ------------------------------------------------- promotion bookkeeping

proptest! {
    /// Work committed locally by speculative contexts becomes
    /// architectural exactly once, at promotion, regardless of the
    /// clone/squash traffic around it.
    #[test]
    fn promotion_transfers_local_work_once(
        commits in prop::collection::vec(1u64..50, 1..4),
    ) {
        let mut cfg = SimConfig::default();
        cfg.contexts = 4;
        let mut t = Tciu::new(&cfg);
        t.begin_full_episode(0x3000);
        let mut spawned = Vec::new();
        for &c in &commits {
            if let Some(s) = t.clone_at_tail(0, 2) {
                t.slots[s].local_commits = c;
                spawned.push((s, c));
            }
        }
        let mut seen = 0;
        for _ in 0..spawned.len() {
            let p = t.promote();
            let expect = spawned.iter().find(|(s, _)| *s == p.new_head).unwrap().1;
            prop_assert_eq!(p.transferred_commits, expect);
            prop_assert_eq!(t.slots[p.new_head].local_commits, 0);
            seen += 1;
        }
        prop_assert_eq!(seen, spawned.len());
    }
}
