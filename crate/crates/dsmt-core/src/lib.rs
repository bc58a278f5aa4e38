//! Cycle-accurate, execution-driven simulator of a dynamic simultaneous
//! multithreaded (DSMT) processor core.
//!
//! The modeled machine is an out-of-order SMT pipeline that speculatively
//! spawns future loop iterations onto idle hardware contexts: a loop detection
//! unit finds hot backward branches, a thread creation and initiation unit
//! clones register state (jump-started by a load/store stride table), and
//! per-register / per-address dependence bits catch values that were read too
//! early. Squashing rolls mis-speculated contexts back; one non-speculative
//! context always owns precise state, so the machine can never commit a state
//! that differs from plain in-order execution.
//!
//! The crate is organized bottom-up:
//!
//! * [`isa`] / [`asm`] — the word-encoded instruction set and its assembler
//! * [`oracle`] — an in-order functional interpreter used as the reference
//! * [`config`] — machine parameters, all overridable
//! * [`sat`], [`predictor`], [`cache`] — small shared hardware models
//! * [`loop_detector`], [`tciu`], [`regdep`], [`memory`] — the speculation
//!   machinery (loop table, context ring, register bits, dependence table)
//! * [`pipeline`] — the six-stage machine that ties everything together
//! * [`harness`] — experiment driver, statistics report, kernel suite

pub mod asm;
pub mod cache;
pub mod config;
pub mod harness;
pub mod isa;
pub mod kernels;
pub mod loop_detector;
pub mod memory;
pub mod oracle;
pub mod pipeline;
pub mod predictor;
pub mod regdep;
pub mod sat;
pub mod tciu;

pub use asm::{assemble, Program};
pub use config::{FetchPolicy, SimConfig};
pub use harness::{run_experiment, ReportFormat, SimReport};
pub use oracle::ArchState;
pub use pipeline::Machine;
