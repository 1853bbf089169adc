//! Branch history table: one 2-bit saturating counter per entry, indexed by
//! word-aligned PC bits.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BhtParams {
    /// Number of PC bits used for indexing; table holds `1 << index_bits`
    /// counters.
    pub index_bits: u32,
    /// Counter value after an invalidate (1 = weakly not-taken).
    pub reset_value: u8,
    pub invalidate_cost: u64,
    pub mispredict_penalty: u64,
}

impl Default for BhtParams {
    fn default() -> Self {
        BhtParams {
            index_bits: 7,
            reset_value: 1,
            invalidate_cost: 4,
            mispredict_penalty: 12,
        }
    }
}

impl BhtParams {
    pub fn validate(&self) -> Result<()> {
        if self.index_bits == 0 || self.index_bits > 20 {
            return Err(SimError::Config(format!(
                "bht index_bits must be in 1..=20, got {}",
                self.index_bits
            )));
        }
        if self.reset_value > 3 {
            return Err(SimError::Config(format!(
                "bht reset_value must be a 2-bit counter value, got {}",
                self.reset_value
            )));
        }
        Ok(())
    }

    pub fn entries(&self) -> usize {
        1 << self.index_bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BhtOutcome {
    pub predicted_taken: bool,
    pub mispredict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BhtState {
    counters: Vec<u8>,
    params: BhtParams,
}

impl BhtState {
    pub fn new(params: BhtParams) -> Result<Self> {
        params.validate()?;
        Ok(BhtState {
            counters: vec![params.reset_value; params.entries()],
            params,
        })
    }

    pub fn params(&self) -> &BhtParams {
        &self.params
    }

    pub fn entries(&self) -> usize {
        self.counters.len()
    }

    pub fn mispredict_penalty(&self) -> u64 {
        self.params.mispredict_penalty
    }

    fn index(&self, pc: u64) -> usize {
        // Branches are word-aligned; drop the low two bits before indexing.
        ((pc >> 2) as usize) & (self.entries() - 1)
    }

    /// Predict taken iff the counter is in the upper half, then train the
    /// counter with the actual outcome.
    pub fn predict_and_update(&mut self, pc: u64, actual_taken: bool) -> BhtOutcome {
        let idx = self.index(pc);
        let counter = self.counters[idx];
        let predicted_taken = counter >= 2;
        self.counters[idx] = if actual_taken {
            (counter + 1).min(3)
        } else {
            counter.saturating_sub(1)
        };
        BhtOutcome {
            predicted_taken,
            mispredict: predicted_taken != actual_taken,
        }
    }

    pub fn invalidate(&mut self) -> u64 {
        self.counters.fill(self.params.reset_value);
        self.params.invalidate_cost
    }

    #[cfg(test)]
    pub(crate) fn counter_at(&self, pc: u64) -> u8 {
        self.counters[self.index(pc)]
    }
}
