//! Experiment driver: run a program through the cycle model, replay it on
//! the in-order reference, and fold both into one serializable report.
//! Reports render to human text, JSON, or a CSV row, and render
//! byte-identically for identical inputs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::asm::Program;
use crate::config::SimConfig;
use crate::loop_detector::Quality;
use crate::oracle::{ArchState, Trap};
use crate::pipeline::{Machine, SimError, StopReason};

/// Output encoding for a finished report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<ReportFormat> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Some(ReportFormat::Text),
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReportFormat::Text => "text",
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

/// One loop the detector tracked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopReport {
    pub branch_pc: u32,
    pub target: u32,
    pub iterations: u64,
    pub times_threaded: u64,
    pub quality: String,
    pub pre_ipc: f64,
    pub run_length: f64,
    pub measured_sipc: Option<f64>,
}

/// One stride-table entry live at the end of the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrideReport {
    pub reg: u8,
    pub stride: i16,
    pub confidence: u8,
    pub predictions: u64,
}

/// Everything one run produced, flat enough to diff across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub kernel: String,
    pub contexts: usize,
    pub fetch_policy: String,
    pub strict_early_read: bool,
    pub cycles: u64,
    pub committed: u64,
    pub threaded_committed: u64,
    pub threaded_fraction: f64,
    pub ipc: f64,
    pub branches: u64,
    pub mispredicts: u64,
    /// Cycles spent in each threading mode: none, observation, full.
    pub mode_cycles: [u64; 3],
    pub episodes_started: u64,
    pub episodes_aborted: u64,
    pub clones: u64,
    pub promotions: u64,
    /// Squashed contexts by cause: register early read, memory early
    /// read, stride mispredict, control.
    pub squashes: [u64; 4],
    pub squash_total: u64,
    pub stride_accuracy: f64,
    pub stride_seeds: u64,
    pub stride_table: Vec<StrideReport>,
    pub loops: Vec<LoopReport>,
    pub dependence_table_peak: usize,
    /// Average data-port grants per cycle.
    pub data_ports_busy_avg: f64,
    pub fast_skipped: u64,
    /// The run reached halt (as opposed to the cycle limit).
    pub complete: bool,
    pub matches_reference: bool,
    pub divergences: Vec<String>,
}

fn quality_label(q: Quality) -> &'static str {
    match q {
        Quality::Unknown => "unknown",
        Quality::Good => "good",
        Quality::Bad => "bad",
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

/// First difference between two committed store sequences.
fn store_trace_divergence(reference: &[(u32, u32)], model: &[(u32, u32)]) -> String {
    let n = reference.len().min(model.len());
    for i in 0..n {
        if reference[i] != model[i] {
            return format!(
                "store {}: reference ({:#x}, {:#x}), model ({:#x}, {:#x})",
                i, reference[i].0, reference[i].1, model[i].0, model[i].1
            );
        }
    }
    format!(
        "store count: reference {}, model {}",
        reference.len(),
        model.len()
    )
}

/// Run `prog` under `cfg` and produce a full report.  `kernel` is a
/// display name only.  Fails only on a trap along the non-speculative
/// path; every speculative misadventure is a statistic, not an error.
pub fn run_experiment(
    prog: &Program,
    cfg: &SimConfig,
    kernel: &str,
) -> Result<SimReport, SimError> {
    run_experiment_with(prog, cfg, kernel, None)
}

/// [`run_experiment`] with an optional per-cycle trace sink.
pub fn run_experiment_with(
    prog: &Program,
    cfg: &SimConfig,
    kernel: &str,
    trace: Option<Box<dyn std::io::Write>>,
) -> Result<SimReport, SimError> {
    let mut m = Machine::new(prog, cfg);
    m.trace = trace;

    // functional prefix: skip cold start-up work at zero cycles
    let mut skipped = 0u64;
    let mut prefix_trace: Vec<(u32, u32)> = Vec::new();
    if cfg.fast_skip > 0 {
        let mut pre = ArchState::new(prog);
        match pre.run(cfg.fast_skip) {
            Ok(_) | Err(Trap::OutOfFuel { .. }) => {}
            Err(t) => return Err(SimError::Trap { cycle: 0, trap: t }),
        }
        skipped = pre.committed;
        prefix_trace = pre.store_trace.clone();
        m.warm_start(&pre);
    }

    let stop = m.run()?;
    let complete = stop == StopReason::Halted;
    let total_committed = skipped + m.committed_total;

    // equivalence: replay the whole program on the reference
    let mut divergences: Vec<String> = Vec::new();
    if complete {
        let mut oracle = ArchState::new(prog);
        match oracle.run(total_committed + 64) {
            Ok(_) => {
                let got = m.arch_state();
                divergences.extend(oracle.diff(&got));
                if oracle.pc != m.halt_pc {
                    divergences.push(format!(
                        "halt pc: reference {:#x}, model {:#x}",
                        oracle.pc, m.halt_pc
                    ));
                }
                if oracle.committed != total_committed {
                    divergences.push(format!(
                        "committed: reference {}, model {}",
                        oracle.committed, total_committed
                    ));
                }
                let mut full_trace = prefix_trace;
                full_trace.extend_from_slice(&m.store_trace);
                if oracle.store_trace != full_trace {
                    divergences.push(store_trace_divergence(&oracle.store_trace, &full_trace));
                }
            }
            Err(t) => divergences.push(format!("reference run failed: {t}")),
        }
    } else {
        divergences.push("cycle limit reached before halt".to_string());
    }

    let cycles = m.cycle;
    let fdiv = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let loops = m
        .loops
        .entries()
        .map(|e| LoopReport {
            branch_pc: e.branch_pc,
            target: e.target,
            iterations: e.total_iterations,
            times_threaded: e.times_threaded,
            quality: quality_label(e.quality).to_string(),
            pre_ipc: e.pre_ipc,
            run_length: e.run_length,
            measured_sipc: e.measured_sipc,
        })
        .collect();
    let stride_table = m
        .tciu
        .lsst
        .entries
        .iter()
        .map(|e| StrideReport {
            reg: e.reg,
            stride: e.stride,
            confidence: e.conf.get(),
            predictions: e.predictions,
        })
        .collect();

    Ok(SimReport {
        kernel: kernel.to_string(),
        contexts: cfg.contexts,
        fetch_policy: cfg.fetch_policy.name().to_string(),
        strict_early_read: cfg.strict_lbit_squash,
        cycles,
        committed: m.committed_total,
        threaded_committed: m.dsmt_committed,
        threaded_fraction: fdiv(m.dsmt_committed, m.committed_total),
        ipc: fdiv(m.committed_total, cycles),
        branches: m.branches,
        mispredicts: m.mispredicts,
        mode_cycles: m.mode_cycles,
        episodes_started: m.episodes_started,
        episodes_aborted: m.episodes_aborted,
        clones: m.tciu.clones,
        promotions: m.tciu.promotions,
        squashes: m.tciu.squashes,
        squash_total: m.tciu.squashes.iter().sum(),
        stride_accuracy: m.tciu.lsst.accuracy(),
        stride_seeds: m.tciu.lsst.seeds_consumed,
        stride_table,
        loops,
        dependence_table_peak: m.mdrt.peak,
        data_ports_busy_avg: fdiv(m.port_grants, cycles),
        fast_skipped: skipped,
        complete,
        matches_reference: complete && divergences.is_empty(),
        divergences,
    })
}

impl SimReport {
    pub fn csv_header() -> &'static str {
        "kernel,contexts,fetch_policy,strict,cycles,committed,threaded_committed,\
         threaded_fraction,ipc,branches,mispredicts,nonthreaded_cycles,observe_cycles,\
         threaded_cycles,episodes,aborts,clones,promotions,squash_reg,squash_mem,\
         squash_stride,squash_control,stride_accuracy,dependence_peak,ports_busy,\
         fast_skipped,complete,matches_reference"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{:.6},{},{},{}",
            self.kernel,
            self.contexts,
            self.fetch_policy,
            self.strict_early_read,
            self.cycles,
            self.committed,
            self.threaded_committed,
            self.threaded_fraction,
            self.ipc,
            self.branches,
            self.mispredicts,
            self.mode_cycles[0],
            self.mode_cycles[1],
            self.mode_cycles[2],
            self.episodes_started,
            self.episodes_aborted,
            self.clones,
            self.promotions,
            self.squashes[0],
            self.squashes[1],
            self.squashes[2],
            self.squashes[3],
            self.stride_accuracy,
            self.dependence_table_peak,
            self.data_ports_busy_avg,
            self.fast_skipped,
            self.complete,
            self.matches_reference
        )
    }

    fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "== dsmt-sim: {} ==", self.kernel);
        let _ = writeln!(
            s,
            "machine            {} contexts, fetch {}, strict early-read {}",
            self.contexts,
            self.fetch_policy,
            if self.strict_early_read { "on" } else { "off" }
        );
        let _ = writeln!(
            s,
            "cycles             {}{}",
            self.cycles,
            if self.complete { "" } else { "  (cycle limit hit)" }
        );
        if self.fast_skipped > 0 {
            let _ = writeln!(s, "fast-skipped       {} instructions", self.fast_skipped);
        }
        let _ = writeln!(
            s,
            "committed          {}  ipc {:.4}",
            self.committed, self.ipc
        );
        let _ = writeln!(
            s,
            "threaded commits   {}  ({:.2}% of total)",
            self.threaded_committed,
            100.0 * self.threaded_fraction
        );
        let _ = writeln!(
            s,
            "mode cycles        none {} | observe {} | threaded {}",
            self.mode_cycles[0], self.mode_cycles[1], self.mode_cycles[2]
        );
        let _ = writeln!(
            s,
            "episodes           {} started, {} aborted in observation",
            self.episodes_started, self.episodes_aborted
        );
        let _ = writeln!(
            s,
            "contexts           {} cloned, {} promoted, {} squashed \
             (reg {}, mem {}, stride {}, control {})",
            self.clones,
            self.promotions,
            self.squash_total,
            self.squashes[0],
            self.squashes[1],
            self.squashes[2],
            self.squashes[3]
        );
        let _ = writeln!(
            s,
            "branches           {} committed, {} mispredicted",
            self.branches, self.mispredicts
        );
        let _ = writeln!(
            s,
            "stride table       accuracy {:.4}, {} seeds consumed",
            self.stride_accuracy, self.stride_seeds
        );
        for e in &self.stride_table {
            let _ = writeln!(
                s,
                "  reg {:<3} stride {:<6} conf {}  predictions {}",
                e.reg, e.stride, e.confidence, e.predictions
            );
        }
        let _ = writeln!(
            s,
            "dependence table   peak {} entries;  data ports busy {:.3}/cycle",
            self.dependence_table_peak, self.data_ports_busy_avg
        );
        let _ = writeln!(s, "loops");
        for l in &self.loops {
            let _ = writeln!(
                s,
                "  {:#x} -> {:#x}  iters {:<8} threaded {:<3} {:<8} pre-ipc {:.4}  run {:.1}  sipc {}",
                l.branch_pc,
                l.target,
                l.iterations,
                l.times_threaded,
                l.quality,
                l.pre_ipc,
                l.run_length,
                fmt_opt(l.measured_sipc)
            );
        }
        let _ = writeln!(
            s,
            "reference check    {}",
            if self.matches_reference {
                "PASS"
            } else if self.complete {
                "FAIL"
            } else {
                "SKIPPED (incomplete run)"
            }
        );
        for d in &self.divergences {
            let _ = writeln!(s, "  {}", d);
        }
        s
    }

    pub fn render(&self, fmt: ReportFormat) -> String {
        match fmt {
            ReportFormat::Text => self.render_text(),
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Csv => format!("{}\n{}\n", Self::csv_header(), self.csv_row()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::kernels;

    fn run_named(name: &str, contexts: usize, fast_skip: u64) -> SimReport {
        let prog = assemble(kernels::by_name(name).unwrap()).unwrap();
        let mut cfg = SimConfig::default();
        cfg.contexts = contexts;
        cfg.fast_skip = fast_skip;
        run_experiment(&prog, &cfg, name).unwrap()
    }

    #[test]
    fn single_context_vadd_matches_reference() {
        let r = run_named("vadd", 1, 0);
        assert!(r.complete);
        assert!(r.matches_reference, "diverged: {:?}", r.divergences);
        assert_eq!(r.threaded_committed, 0, "one context never threads");
        assert!(r.ipc > 0.5);
    }

    #[test]
    fn fast_skip_preserves_equivalence() {
        let full = run_named("vadd", 2, 0);
        let skipped = run_named("vadd", 2, 1000);
        assert!(skipped.matches_reference, "diverged: {:?}", skipped.divergences);
        assert_eq!(skipped.fast_skipped, 1000);
        assert_eq!(skipped.committed + 1000, full.committed + full.fast_skipped);
    }

    #[test]
    fn reports_render_byte_identically() {
        let a = run_named("vadd", 4, 0);
        let b = run_named("vadd", 4, 0);
        for fmt in [ReportFormat::Text, ReportFormat::Json, ReportFormat::Csv] {
            assert_eq!(a.render(fmt), b.render(fmt), "{} differs", fmt.name());
        }
    }

    #[test]
    fn csv_row_matches_header_arity() {
        let r = run_named("vadd", 2, 0);
        let header_cols = SimReport::csv_header().split(',').count();
        let row_cols = r.csv_row().split(',').count();
        assert_eq!(header_cols, row_cols);
    }

    #[test]
    fn cycle_limit_marks_report_incomplete() {
        let prog = assemble(kernels::VADD).unwrap();
        let mut cfg = SimConfig::default();
        cfg.contexts = 1;
        cfg.max_cycles = 50;
        let r = run_experiment(&prog, &cfg, "vadd").unwrap();
        assert!(!r.complete);
        assert!(!r.matches_reference);
    }
}
