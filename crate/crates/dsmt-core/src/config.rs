//! Simulation configuration: machine geometry and speculation knobs.
//!
//! Defaults model a 4-context machine with shared function units, a
//! two-port fetch stage, and per-context instruction queues.  Every
//! field can be overridden from a flat `key = value` config file (see
//! [`SimConfig::from_str_config`]) or programmatically.

use serde::{Deserialize, Serialize};

use crate::isa::FuClass;

/// Fetch port allocation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FetchPolicy {
    /// Two ports: port 0 is reserved for the non-speculative context,
    /// port 1 goes to the speculative context with the fewest
    /// in-flight instructions (ICOUNT with a non-speculative bias).
    Icount2_8m,
    /// One private port per context (an upper bound, not hardware).
    Ideal,
}

impl FetchPolicy {
    pub fn parse(s: &str) -> Option<FetchPolicy> {
        match s.trim().to_ascii_lowercase().as_str() {
            "icount2.8m" | "icount2_8m" | "icount" => Some(FetchPolicy::Icount2_8m),
            "ideal" => Some(FetchPolicy::Ideal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FetchPolicy::Icount2_8m => "icount2.8m",
            FetchPolicy::Ideal => "ideal",
        }
    }
}

impl std::fmt::Display for FetchPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Bad configuration value.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: `{value}`")]
    BadValue { line: usize, key: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

/// Full machine + speculation configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Hardware contexts (1..=8).  One is always the non-speculative head.
    pub contexts: usize,
    pub fetch_policy: FetchPolicy,
    /// Fetch ports (ignored by the ideal policy, which has one per context).
    pub fetch_ports: usize,
    /// Instructions fetched per port per cycle.
    pub fetch_width: usize,
    /// Max instructions issued per context per cycle.
    pub issue_width: usize,
    /// Per-context instruction queue capacity.
    pub iq_size: usize,
    /// Per-context reorder buffer capacity.
    pub rob_size: usize,
    /// Per-context load/store queue capacity.
    pub lsq_size: usize,
    /// Per-context buffer of locally committed, undrained stores.
    pub store_buffer_size: usize,
    /// Function unit counts, indexed by `FuClass::index()`.
    pub fu_counts: [usize; 7],
    /// Reservation station entries per FU class.
    pub rs_sizes: [usize; 7],
    /// Execute latency per FU class (loads/stores add cache time).
    pub fu_latency: [u32; 7],
    /// Branch target buffer: total entries and associativity.
    pub btb_entries: usize,
    pub btb_assoc: usize,
    /// Cache geometry: sizes in bytes, shared line size, associativity.
    pub l1i_bytes: usize,
    pub l1d_bytes: usize,
    pub l2_bytes: usize,
    pub cache_assoc: usize,
    pub line_bytes: usize,
    /// Access latencies in cycles: L1 hit, L2 hit, memory.
    pub lat_l1: u32,
    pub lat_l2: u32,
    pub lat_mem: u32,
    /// Shared data cache ports per cycle.
    pub data_ports: usize,
    /// Memory dependence table entries (fully associative).
    pub mdrt_entries: usize,
    /// Loop iterations observed in pre-threading mode before cloning.
    pub pre_dsmt_iterations: u32,
    /// Stride predictor: initial confidence and prediction threshold
    /// on a 0..=3 saturating counter.
    pub lsst_conf_init: u8,
    pub lsst_conf_threshold: u8,
    /// Register read confidence table: initial value on a 0..=3
    /// saturating counter; blind cross-context reads need >= 2.
    pub read_conf_init: u8,
    /// Loops with fewer instructions per iteration are never threaded.
    pub min_run_length: u32,
    /// Speculation quality observation window, in cycles.
    pub sipc_window: u64,
    /// Cycles a fresh clone's fetch stays held.
    pub clone_cost: u32,
    /// Skip this many instructions on the reference model before
    /// detailed simulation starts (0 = run everything in detail).
    pub fast_skip: u64,
    /// Hard cycle limit; exceeding it marks the run incomplete.
    pub max_cycles: u64,
    /// Treat any early cross-context register read as a violation even
    /// when the value matched (presence-based instead of value-based).
    pub strict_lbit_squash: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            contexts: 4,
            fetch_policy: FetchPolicy::Icount2_8m,
            fetch_ports: 2,
            fetch_width: 8,
            issue_width: 4,
            iq_size: 64,
            rob_size: 32,
            lsq_size: 64,
            store_buffer_size: 64,
            // IntAlu, IntMul, IntDiv, FpAdd, FpDiv, FpMul, LoadStore
            fu_counts: [8, 2, 2, 2, 2, 2, 2],
            rs_sizes: [8, 2, 4, 4, 2, 4, 4],
            fu_latency: [1, 3, 12, 2, 12, 4, 1],
            btb_entries: 2048,
            btb_assoc: 2,
            l1i_bytes: 128 * 1024,
            l1d_bytes: 128 * 1024,
            l2_bytes: 256 * 1024,
            cache_assoc: 2,
            line_bytes: 32,
            lat_l1: 1,
            lat_l2: 6,
            lat_mem: 40,
            data_ports: 4,
            mdrt_entries: 64,
            pre_dsmt_iterations: 2,
            lsst_conf_init: 1,
            lsst_conf_threshold: 2,
            read_conf_init: 2,
            min_run_length: 4,
            sipc_window: 10_000,
            clone_cost: 2,
            fast_skip: 0,
            max_cycles: 10_000_000,
            strict_lbit_squash: false,
        }
    }
}

impl SimConfig {
    /// Sanity-check the geometry.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = |m: String| Err(ConfigError::Invalid(m));
        if !(1..=8).contains(&self.contexts) {
            return e(format!("contexts must be 1..=8, got {}", self.contexts));
        }
        if self.fetch_ports == 0 || self.fetch_width == 0 || self.issue_width == 0 {
            return e("fetch/issue widths must be nonzero".into());
        }
        if self.iq_size == 0 || self.rob_size == 0 || self.lsq_size == 0 {
            return e("queue sizes must be nonzero".into());
        }
        for fu in FuClass::ALL {
            let i = fu.index();
            if self.fu_counts[i] == 0 || self.rs_sizes[i] == 0 || self.fu_latency[i] == 0 {
                return e(format!("{} must have units, stations and latency", fu.name()));
            }
        }
        if self.btb_assoc == 0 || self.btb_entries % self.btb_assoc != 0 {
            return e("btb entries must divide evenly into ways".into());
        }
        if !(self.btb_entries / self.btb_assoc).is_power_of_two() {
            return e("btb set count must be a power of two".into());
        }
        if !self.line_bytes.is_power_of_two() || self.line_bytes < 4 {
            return e("line size must be a power of two >= 4".into());
        }
        for (name, bytes) in [
            ("l1i", self.l1i_bytes),
            ("l1d", self.l1d_bytes),
            ("l2", self.l2_bytes),
        ] {
            let sets = bytes / (self.line_bytes * self.cache_assoc.max(1));
            if self.cache_assoc == 0 || sets == 0 || !sets.is_power_of_two() {
                return e(format!("{name} geometry does not divide into power-of-two sets"));
            }
        }
        if self.data_ports == 0 {
            return e("need at least one data port".into());
        }
        if self.mdrt_entries == 0 || self.store_buffer_size == 0 {
            return e("mdrt and store buffer must be nonzero".into());
        }
        if self.pre_dsmt_iterations == 0 {
            return e("need at least one observation iteration".into());
        }
        if self.lsst_conf_threshold > 3 || self.lsst_conf_init > 3 || self.read_conf_init > 3 {
            return e("confidence values live on a 0..=3 counter".into());
        }
        if self.sipc_window == 0 || self.max_cycles == 0 {
            return e("windows must be nonzero".into());
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file into an override of
    /// `self`.  `#` starts a comment; blank lines are ignored.
    pub fn apply_str_config(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: stripped.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            self.set_key(key, value)
                .map_err(|kind| match kind {
                    SetErr::Unknown => ConfigError::UnknownKey { line, key: key.into() },
                    SetErr::Bad => ConfigError::BadValue {
                        line,
                        key: key.into(),
                        value: value.into(),
                    },
                })?;
        }
        Ok(())
    }

    /// Parse a full config file starting from defaults.
    pub fn from_str_config(text: &str) -> Result<SimConfig, ConfigError> {
        let mut cfg = SimConfig::default();
        cfg.apply_str_config(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set a single `key = value` pair (the config-file vocabulary).
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<(), SetErr> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, SetErr> {
            let v = v.trim();
            let parsed = if let Some(hex) = v.strip_prefix("0x") {
                // only integer fields use hex
                u64::from_str_radix(hex, 16)
                    .map_err(|_| SetErr::Bad)?
                    .to_string()
                    .parse::<T>()
            } else {
                v.parse::<T>()
            };
            parsed.map_err(|_| SetErr::Bad)
        }
        fn flag(v: &str) -> Result<bool, SetErr> {
            match v.trim() {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(SetErr::Bad),
            }
        }
        match key {
            "contexts" => self.contexts = num(value)?,
            "fetch_policy" => {
                self.fetch_policy = FetchPolicy::parse(value).ok_or(SetErr::Bad)?
            }
            "fetch_ports" => self.fetch_ports = num(value)?,
            "fetch_width" => self.fetch_width = num(value)?,
            "issue_width" => self.issue_width = num(value)?,
            "iq_size" => self.iq_size = num(value)?,
            "rob_size" => self.rob_size = num(value)?,
            "lsq_size" => self.lsq_size = num(value)?,
            "store_buffer_size" => self.store_buffer_size = num(value)?,
            "fu_int_alu" => self.fu_counts[0] = num(value)?,
            "fu_int_mul" => self.fu_counts[1] = num(value)?,
            "fu_int_div" => self.fu_counts[2] = num(value)?,
            "fu_fp_add" => self.fu_counts[3] = num(value)?,
            "fu_fp_div" => self.fu_counts[4] = num(value)?,
            "fu_fp_mul" => self.fu_counts[5] = num(value)?,
            "fu_ls" => self.fu_counts[6] = num(value)?,
            "rs_int_alu" => self.rs_sizes[0] = num(value)?,
            "rs_int_mul" => self.rs_sizes[1] = num(value)?,
            "rs_int_div" => self.rs_sizes[2] = num(value)?,
            "rs_fp_add" => self.rs_sizes[3] = num(value)?,
            "rs_fp_div" => self.rs_sizes[4] = num(value)?,
            "rs_fp_mul" => self.rs_sizes[5] = num(value)?,
            "rs_ls" => self.rs_sizes[6] = num(value)?,
            "lat_int_alu" => self.fu_latency[0] = num(value)?,
            "lat_int_mul" => self.fu_latency[1] = num(value)?,
            "lat_int_div" => self.fu_latency[2] = num(value)?,
            "lat_fp_add" => self.fu_latency[3] = num(value)?,
            "lat_fp_div" => self.fu_latency[4] = num(value)?,
            "lat_fp_mul" => self.fu_latency[5] = num(value)?,
            "lat_ls" => self.fu_latency[6] = num(value)?,
            "btb_entries" => self.btb_entries = num(value)?,
            "btb_assoc" => self.btb_assoc = num(value)?,
            "l1i_bytes" => self.l1i_bytes = num(value)?,
            "l1d_bytes" => self.l1d_bytes = num(value)?,
            "l2_bytes" => self.l2_bytes = num(value)?,
            "cache_assoc" => self.cache_assoc = num(value)?,
            "line_bytes" => self.line_bytes = num(value)?,
            "lat_l1" => self.lat_l1 = num(value)?,
            "lat_l2" => self.lat_l2 = num(value)?,
            "lat_mem" => self.lat_mem = num(value)?,
            "data_ports" => self.data_ports = num(value)?,
            "mdrt_entries" => self.mdrt_entries = num(value)?,
            "pre_dsmt_iterations" => self.pre_dsmt_iterations = num(value)?,
            "lsst_conf_init" => self.lsst_conf_init = num(value)?,
            "lsst_conf_threshold" => self.lsst_conf_threshold = num(value)?,
            "read_conf_init" => self.read_conf_init = num(value)?,
            "min_run_length" => self.min_run_length = num(value)?,
            "sipc_window" => self.sipc_window = num(value)?,
            "clone_cost" => self.clone_cost = num(value)?,
            "fast_skip" => self.fast_skip = num(value)?,
            "max_cycles" => self.max_cycles = num(value)?,
            "strict_lbit_squash" => self.strict_lbit_squash = flag(value)?,
            _ => return Err(SetErr::Unknown),
        }
        Ok(())
    }
}

/// Outcome of a single key assignment (internal to config parsing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetErr {
    Unknown,
    Bad,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn default_geometry() {
        let c = SimConfig::default();
        assert_eq!(c.contexts, 4);
        assert_eq!(c.fetch_policy, FetchPolicy::Icount2_8m);
        assert_eq!((c.fetch_ports, c.fetch_width, c.issue_width), (2, 8, 4));
        assert_eq!((c.iq_size, c.rob_size, c.lsq_size), (64, 32, 64));
        assert_eq!(c.fu_counts, [8, 2, 2, 2, 2, 2, 2]);
        assert_eq!(c.rs_sizes, [8, 2, 4, 4, 2, 4, 4]);
        assert_eq!(c.fu_latency, [1, 3, 12, 2, 12, 4, 1]);
        assert_eq!((c.btb_entries, c.btb_assoc), (2048, 2));
        assert_eq!((c.lat_l1, c.lat_l2, c.lat_mem), (1, 6, 40));
        assert_eq!(c.mdrt_entries, 64);
        assert_eq!(c.sipc_window, 10_000);
        assert_eq!(c.pre_dsmt_iterations, 2);
    }

    #[test]
    fn parse_config_text() {
        let cfg = SimConfig::from_str_config(
            "# comment\ncontexts = 8\nfetch_policy = ideal\nmax_cycles = 123456\nstrict_lbit_squash = true\n",
        )
        .unwrap();
        assert_eq!(cfg.contexts, 8);
        assert_eq!(cfg.fetch_policy, FetchPolicy::Ideal);
        assert_eq!(cfg.max_cycles, 123_456);
        assert!(cfg.strict_lbit_squash);
    }

    #[test]
    fn parse_rejects_unknown_key() {
        let err = SimConfig::from_str_config("bogus = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 1, .. }));
    }

    #[test]
    fn parse_rejects_bad_value() {
        let err = SimConfig::from_str_config("contexts = many\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { .. }));
    }

    #[test]
    fn validate_rejects_contexts_out_of_range() {
        let mut c = SimConfig::default();
        c.contexts = 9;
        assert!(c.validate().is_err());
        c.contexts = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fetch_policy_names_round_trip() {
        for p in [FetchPolicy::Icount2_8m, FetchPolicy::Ideal] {
            assert_eq!(FetchPolicy::parse(p.name()), Some(p));
        }
        assert_eq!(FetchPolicy::parse("icount"), Some(FetchPolicy::Icount2_8m));
        assert_eq!(FetchPolicy::parse("nope"), None);
    }
}
