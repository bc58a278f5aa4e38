//! Memory-side speculation bookkeeping: the memory dependence table
//! and per-context store buffers.
//!
//! Stores never write memory directly.  Every context — including the
//! non-speculative head — locally commits stores into its own store
//! buffer; only the head's buffer drains to memory, port-limited, so
//! the global store order equals iteration order by construction.
//!
//! The memory dependence table (MDRT) is a small fully-associative
//! structure keyed by word address.  Speculative loads record the value
//! they observed; locally committed stores set a per-context store bit
//! and let the pipeline compare successor-observed values against the
//! stored value to catch premature reads.  A full table stalls
//! speculative loads that would need a new entry; head loads are never
//! recorded, so the head cannot deadlock on a full table.

use std::collections::VecDeque;

/// One tracked word address.
#[derive(Debug, Clone)]
pub struct MdrtEntry {
    pub addr: u32,
    /// Per-slot observed load value (first speculative read wins).
    pub l_read: Vec<Option<u32>>,
    /// Per-slot "has a buffered store to this address" bit.
    pub s_bit: Vec<bool>,
}

impl MdrtEntry {
    fn dead(&self) -> bool {
        self.l_read.iter().all(Option::is_none) && self.s_bit.iter().all(|b| !b)
    }
}

/// Table full and the access would need a new entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MdrtFull;

#[derive(Debug, Clone)]
pub struct Mdrt {
    entries: Vec<MdrtEntry>,
    capacity: usize,
    slots: usize,
    pub peak: usize,
}

impl Mdrt {
    pub fn new(capacity: usize, slots: usize) -> Mdrt {
        Mdrt { entries: Vec::new(), capacity, slots, peak: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, addr: u32) -> Option<&MdrtEntry> {
        self.entries.iter().find(|e| e.addr == addr)
    }

    fn entry_mut_or_alloc(&mut self, addr: u32) -> Result<&mut MdrtEntry, MdrtFull> {
        if let Some(i) = self.entries.iter().position(|e| e.addr == addr) {
            return Ok(&mut self.entries[i]);
        }
        if self.entries.len() >= self.capacity {
            return Err(MdrtFull);
        }
        self.entries.push(MdrtEntry {
            addr,
            l_read: vec![None; self.slots],
            s_bit: vec![false; self.slots],
        });
        self.peak = self.peak.max(self.entries.len());
        Ok(self.entries.last_mut().unwrap())
    }

    /// Record a speculative load observation; the first value a slot
    /// observes for an address sticks.
    pub fn record_load(&mut self, slot: usize, addr: u32, value: u32) -> Result<(), MdrtFull> {
        let e = self.entry_mut_or_alloc(addr)?;
        if e.l_read[slot].is_none() {
            e.l_read[slot] = Some(value);
        }
        Ok(())
    }

    /// Mark a locally committed store.
    pub fn record_store(&mut self, slot: usize, addr: u32) -> Result<(), MdrtFull> {
        let e = self.entry_mut_or_alloc(addr)?;
        e.s_bit[slot] = true;
        Ok(())
    }

    /// Observed load values for an address, indexed by slot (empty
    /// slice if untracked).
    pub fn readers(&self, addr: u32) -> Vec<Option<u32>> {
        self.entry(addr)
            .map(|e| e.l_read.clone())
            .unwrap_or_else(|| vec![None; self.slots])
    }

    /// Drop everything a slot contributed (squash, or promotion to
    /// non-speculative where its reads stop being speculative).
    pub fn clear_slot(&mut self, slot: usize) {
        for e in &mut self.entries {
            e.l_read[slot] = None;
            e.s_bit[slot] = false;
        }
        self.entries.retain(|e| !e.dead());
    }

    /// Drop only a slot's store bits (its buffer finished draining).
    pub fn clear_store_bits(&mut self, slot: usize) {
        for e in &mut self.entries {
            e.s_bit[slot] = false;
        }
        self.entries.retain(|e| !e.dead());
    }

    /// Drop only a slot's recorded loads (it became non-speculative;
    /// its pending stores stay tracked until its buffer drains).
    pub fn clear_load_bits(&mut self, slot: usize) {
        for e in &mut self.entries {
            e.l_read[slot] = None;
        }
        self.entries.retain(|e| !e.dead());
    }
}

/// FIFO of locally committed stores awaiting drain to memory.
#[derive(Debug, Clone)]
pub struct StoreBuffer {
    entries: VecDeque<(u32, u32)>,
    capacity: usize,
}

impl StoreBuffer {
    pub fn new(capacity: usize) -> StoreBuffer {
        StoreBuffer { entries: VecDeque::new(), capacity }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    /// Append a committed store; false if the buffer is full (the
    /// commit must retry next cycle).
    pub fn push(&mut self, addr: u32, value: u32) -> bool {
        if self.is_full() {
            return false;
        }
        self.entries.push_back((addr, value));
        true
    }

    /// Newest buffered value for an address, if any.
    pub fn lookup(&self, addr: u32) -> Option<u32> {
        self.entries
            .iter()
            .rev()
            .find(|(a, _)| *a == addr)
            .map(|(_, v)| *v)
    }

    /// Oldest store, for draining.
    pub fn pop_oldest(&mut self) -> Option<(u32, u32)> {
        self.entries.pop_front()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_records_first_value_only() {
        let mut m = Mdrt::new(4, 3);
        m.record_load(1, 0x100, 7).unwrap();
        m.record_load(1, 0x100, 9).unwrap();
        assert_eq!(m.readers(0x100)[1], Some(7));
        assert_eq!(m.readers(0x100)[2], None);
    }

    #[test]
    fn full_table_rejects_new_addresses_only() {
        let mut m = Mdrt::new(2, 2);
        m.record_load(0, 0x100, 1).unwrap();
        m.record_load(0, 0x200, 2).unwrap();
        assert_eq!(m.record_load(1, 0x300, 3), Err(MdrtFull));
        // existing addresses still update
        m.record_load(1, 0x100, 4).unwrap();
        m.record_store(1, 0x200).unwrap();
        assert_eq!(m.peak, 2);
    }

    #[test]
    fn clearing_a_slot_prunes_dead_entries() {
        let mut m = Mdrt::new(4, 2);
        m.record_load(1, 0x100, 7).unwrap();
        m.record_store(1, 0x200).unwrap();
        m.record_load(0, 0x200, 3).unwrap();
        assert_eq!(m.len(), 2);
        m.clear_slot(1);
        // 0x100 dies, 0x200 survives via slot 0's read
        assert_eq!(m.len(), 1);
        assert!(m.entry(0x200).is_some());
        m.clear_slot(0);
        assert!(m.is_empty());
    }

    #[test]
    fn store_bits_clear_independently() {
        let mut m = Mdrt::new(4, 2);
        m.record_store(0, 0x100).unwrap();
        m.record_load(1, 0x100, 5).unwrap();
        m.clear_store_bits(0);
        let e = m.entry(0x100).unwrap();
        assert!(!e.s_bit[0]);
        assert_eq!(e.l_read[1], Some(5));
    }

    #[test]
    fn store_buffer_forwards_newest_and_drains_oldest() {
        let mut sb = StoreBuffer::new(4);
        assert!(sb.push(0x40, 1));
        assert!(sb.push(0x44, 2));
        assert!(sb.push(0x40, 3));
        assert_eq!(sb.lookup(0x40), Some(3)); // newest wins
        assert_eq!(sb.lookup(0x48), None);
        assert_eq!(sb.pop_oldest(), Some((0x40, 1))); // FIFO drain
        assert_eq!(sb.len(), 2);
    }

    #[test]
    fn store_buffer_capacity() {
        let mut sb = StoreBuffer::new(2);
        assert!(sb.push(0, 0));
        assert!(sb.push(4, 0));
        assert!(!sb.push(8, 0));
        assert!(sb.is_full());
    }
}
