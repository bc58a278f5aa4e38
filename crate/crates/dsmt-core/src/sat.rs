//! Two-bit saturating counter, shared by the branch predictor, the stride
//! table, and the register read-confidence table.

/// A counter clamped to 0..=3. `inc`/`dec` saturate instead of wrapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct SatCounter2(u8);

impl SatCounter2 {
    pub const MAX: u8 = 3;

    pub fn new(v: u8) -> Self {
        assert!(v <= Self::MAX, "counter value out of range");
        SatCounter2(v)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn inc(&mut self) {
        if self.0 < Self::MAX {
            self.0 += 1;
        }
    }

    pub fn dec(&mut self) {
        if self.0 > 0 {
            self.0 -= 1;
        }
    }

    /// Upper half of the range; the conventional "predict taken" test.
    pub fn is_high(self) -> bool {
        self.0 >= 2
    }
}
