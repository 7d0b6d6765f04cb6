use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Min-max statistics of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Self { min: lo, max: hi }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.max > self.min)
    }

    /// Range used for scaling; a degenerate channel is only centred.
    pub fn range(&self) -> f64 {
        if self.is_degenerate() {
            1.0
        } else {
            self.max - self.min
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / self.range()
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.min + y * self.range()
    }

    pub fn apply_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let c = tape.shift(x, -self.min)?;
        Ok(tape.scale(c, 1.0 / self.range())?)
    }

    pub fn invert_tape(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let s = tape.scale(y, self.range())?;
        Ok(tape.shift(s, self.min)?)
    }
}
