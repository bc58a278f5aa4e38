//! Two-level cache hierarchy, modeled for latency only.
//!
//! Tags and LRU state are tracked exactly; data always comes from the
//! backing store (the simulator's memory map), so a cache access
//! returns just the latency in cycles.  Speculative accesses fill the
//! caches like any other — wrong-path pollution is part of the model.

#[derive(Debug, Clone)]
struct CacheLine {
    tag: u32,
    last_used: u64,
}

#[derive(Debug, Clone)]
pub struct Cache {
    sets: Vec<Vec<CacheLine>>,
    assoc: usize,
    line_shift: u32,
    set_mask: u32,
    tick: u64,
    pub hits: u64,
    pub misses: u64,
}

impl Cache {
    pub fn new(bytes: usize, assoc: usize, line_bytes: usize) -> Cache {
        assert!(line_bytes.is_power_of_two() && assoc > 0);
        let nsets = bytes / (line_bytes * assoc);
        assert!(nsets.is_power_of_two() && nsets > 0);
        Cache {
            sets: vec![Vec::new(); nsets],
            assoc,
            line_shift: line_bytes.trailing_zeros(),
            set_mask: (nsets - 1) as u32,
            tick: 0,
            hits: 0,
            misses: 0,
        }
    }

    pub fn num_sets(&self) -> usize {
        self.sets.len()
    }

    /// Look up and fill on miss.  Returns true on hit.
    pub fn access(&mut self, addr: u32) -> bool {
        self.tick += 1;
        let tick = self.tick;
        let line = addr >> self.line_shift;
        let set = (line & self.set_mask) as usize;
        let ways = &mut self.sets[set];
        if let Some(l) = ways.iter_mut().find(|l| l.tag == line) {
            l.last_used = tick;
            self.hits += 1;
            return true;
        }
        self.misses += 1;
        let new = CacheLine { tag: line, last_used: tick };
        if ways.len() < self.assoc {
            ways.push(new);
        } else {
            let victim = ways
                .iter()
                .enumerate()
                .min_by_key(|(_, l)| l.last_used)
                .map(|(i, _)| i)
                .unwrap();
            ways[victim] = new;
        }
        false
    }
}

/// The instruction cache, data cache and shared second level, with the
/// configured hit latencies.
#[derive(Debug, Clone)]
pub struct CacheSim {
    pub l1i: Cache,
    pub l1d: Cache,
    pub l2: Cache,
    lat_l1: u32,
    lat_l2: u32,
    lat_mem: u32,
}

impl CacheSim {
    pub fn new(cfg: &crate::config::SimConfig) -> CacheSim {
        CacheSim {
            l1i: Cache::new(cfg.l1i_bytes, cfg.cache_assoc, cfg.line_bytes),
            l1d: Cache::new(cfg.l1d_bytes, cfg.cache_assoc, cfg.line_bytes),
            l2: Cache::new(cfg.l2_bytes, cfg.cache_assoc, cfg.line_bytes),
            lat_l1: cfg.lat_l1,
            lat_l2: cfg.lat_l2,
            lat_mem: cfg.lat_mem,
        }
    }

    /// Instruction fetch latency for one line.
    pub fn access_inst(&mut self, addr: u32) -> u32 {
        if self.l1i.access(addr) {
            self.lat_l1
        } else if self.l2.access(addr) {
            self.lat_l2
        } else {
            self.lat_mem
        }
    }

    /// Data access latency (loads and store drains).
    pub fn access_data(&mut self, addr: u32) -> u32 {
        if self.l1d.access(addr) {
            self.lat_l1
        } else if self.l2.access(addr) {
            self.lat_l2
        } else {
            self.lat_mem
        }
    }
}
