//! Built-in benchmark kernels, embedded as assembly source.
//!
//! Each kernel stresses a different corner of the speculation machinery:
//!
//! * [`VADD`] — independent iterations, every induction register
//!   stride-predictable; the best case for loop threading.
//! * [`DOT`] — a loop-carried floating-point accumulator that serializes
//!   contexts through the register wait path.
//! * [`STRIDE_IRREGULAR`] — a pointer whose stride pattern repeats
//!   +4, +4, +12; looks predictable for any two iterations and is not.
//! * [`COND`] — five data-dependent conditional branches guarding
//!   accumulator updates.
//! * [`MATMUL3`] — a 16×16×16 triple nest; the innermost loop carries an
//!   accumulator, so the middle loop is the profitable cloning level.
//! * [`FIRST_DIFF`] — a prefix sum carried through memory, invisible to
//!   the stride table.

pub const VADD: &str = include_str!("../kernels/vadd.asm");
pub const DOT: &str = include_str!("../kernels/dot.asm");
pub const STRIDE_IRREGULAR: &str = include_str!("../kernels/stride_irregular.asm");
pub const COND: &str = include_str!("../kernels/cond.asm");
pub const MATMUL3: &str = include_str!("../kernels/matmul3.asm");
pub const FIRST_DIFF: &str = include_str!("../kernels/first_diff.asm");

/// All built-in kernels as `(name, source)` pairs, in a stable order.
pub const ALL: &[(&str, &str)] = &[
    ("vadd", VADD),
    ("dot", DOT),
    ("stride_irregular", STRIDE_IRREGULAR),
    ("cond", COND),
    ("matmul3", MATMUL3),
    ("first_diff", FIRST_DIFF),
];

/// Look up a built-in kernel by name.
pub fn by_name(name: &str) -> Option<&'static str> {
    ALL.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
}
