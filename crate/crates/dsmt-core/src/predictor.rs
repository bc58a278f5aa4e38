//! Branch target buffer with 2-bit saturating direction counters.
//!
//! Conditional branches allocate an entry the first time they resolve
//! taken; until then (and on any lookup miss) the predictor says
//! not-taken.  Counters initialize weakly-taken so a freshly allocated
//! branch predicts taken on its next fetch.  Sets are LRU-managed.

use crate::sat::SatCounter2;

#[derive(Debug, Clone)]
struct BtbEntry {
    tag: u32,
    target: u32,
    counter: SatCounter2,
    last_used: u64,
}

#[derive(Debug, Clone)]
pub struct Btb {
    sets: Vec<Vec<BtbEntry>>,
    assoc: usize,
    set_mask: u32,
    tick: u64,
    pub lookups: u64,
    pub hits: u64,
}

impl Btb {
    pub fn new(entries: usize, assoc: usize) -> Btb {
        assert!(assoc > 0 && entries % assoc == 0);
        let nsets = entries / assoc;
        assert!(nsets.is_power_of_two());
        Btb {
            sets: vec![Vec::new(); nsets],
            assoc,
            set_mask: (nsets - 1) as u32,
            tick: 0,
            lookups: 0,
            hits: 0,
        }
    }

    fn set_index(&self, pc: u32) -> usize {
        ((pc >> 2) & self.set_mask) as usize
    }

    /// Fetch-time lookup.  `Some(target)` means predicted taken.
    pub fn predict(&mut self, pc: u32) -> Option<u32> {
        self.tick += 1;
        self.lookups += 1;
        let set = self.set_index(pc);
        let tick = self.tick;
        if let Some(e) = self.sets[set].iter_mut().find(|e| e.tag == pc) {
            e.last_used = tick;
            self.hits += 1;
            if e.counter.is_high() {
                return Some(e.target);
            }
        }
        None
    }

    /// Commit-time training with the resolved direction and target.
    pub fn update(&mut self, pc: u32, taken: bool, target: u32) {
        self.tick += 1;
        let set = self.set_index(pc);
        let (assoc, tick) = (self.assoc, self.tick);
        let ways = &mut self.sets[set];
        if let Some(e) = ways.iter_mut().find(|e| e.tag == pc) {
            if taken {
                e.counter.inc();
                e.target = target;
            } else {
                e.counter.dec();
            }
            e.last_used = tick;
            return;
        }
        if !taken {
            // not-taken branches never allocate
            return;
        }
        let entry = BtbEntry {
            tag: pc,
            target,
            counter: SatCounter2::new(2),
            last_used: tick,
        };
        if ways.len() < assoc {
            ways.push(entry);
        } else {
            // evict least recently used way
            let victim = ways
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(i, _)| i)
                .unwrap();
            ways[victim] = entry;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miss_predicts_not_taken() {
        let mut btb = Btb::new(2048, 2);
        assert_eq!(btb.predict(0x1000), None);
    }

    #[test]
    fn allocates_on_first_taken_and_predicts_taken() {
        let mut btb = Btb::new(2048, 2);
        assert_eq!(btb.predict(0x1000), None);
        btb.update(0x1000, true, 0x0800);
        // counter starts at 2 (weakly taken)
        assert_eq!(btb.predict(0x1000), Some(0x0800));
    }

    #[test]
    fn not_taken_never_allocates() {
        let mut btb = Btb::new(2048, 2);
        btb.update(0x1000, false, 0);
        assert_eq!(btb.predict(0x1000), None);
        assert_eq!(btb.hits, 0);
    }

    #[test]
    fn counter_trains_down_then_up() {
        let mut btb = Btb::new(2048, 2);
        btb.update(0x1000, true, 0x0800); // alloc at 2
        btb.update(0x1000, false, 0); // 1
        assert_eq!(btb.predict(0x1000), None); // present but low
        assert_eq!(btb.hits, 1); // still a tag hit
        btb.update(0x1000, false, 0); // 0
        btb.update(0x1000, true, 0x0800); // 1
        assert_eq!(btb.predict(0x1000), None);
        btb.update(0x1000, true, 0x0800); // 2
        assert_eq!(btb.predict(0x1000), Some(0x0800));
    }

    #[test]
    fn target_follows_latest_taken_update() {
        let mut btb = Btb::new(2048, 2);
        btb.update(0x1000, true, 0x0800);
        btb.update(0x1000, true, 0x0900);
        assert_eq!(btb.predict(0x1000), Some(0x0900));
    }

    #[test]
    fn lru_evicts_oldest_way() {
        let mut btb = Btb::new(2048, 2); // 1024 sets
        let stride = 1024 * 4; // same set index, different tags
        let (a, b, c) = (0x1000, 0x1000 + stride, 0x1000 + 2 * stride);
        btb.update(a, true, 0x10);
        btb.update(b, true, 0x20);
        btb.predict(a); // a is now more recently used than b
        btb.update(c, true, 0x30); // evicts b
        assert_eq!(btb.predict(a), Some(0x10));
        assert_eq!(btb.predict(c), Some(0x30));
        assert_eq!(btb.predict(b), None);
    }
}
