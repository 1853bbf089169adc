//! Models of the on-core state a time-shared core leaks through.
//!
//! Three flavours of state live here. Architectural state ([`ArchState`]) is
//! what the ISA promises software: registers, a scratch and a resume CSR, and
//! memory. Microarchitectural state ([`MicroarchState`]) is invisible to
//! software but carries timing history: both L1 caches, the branch history
//! table, and a pool of residual flip-flops. The register alias table is the
//! mixed case — timing-relevant like the rest, but resetting it moves the
//! architectural registers out from under the running program.

mod bht;
mod cache;
mod rat;
mod residual;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bht::{BhtOutcome, BhtParams, BhtState};
pub use cache::{AccessKind, AccessResult, CacheGeometry, CacheKind, CacheState};
pub use rat::{RatAlloc, RatParams, RatState, LOGICAL_REGS};
pub use residual::{NamedReg, ResidualParams, ResidualState, PREFETCH_STRIDE, STORE_BUFFER};

use crate::error::Result;

/// Everything needed to build a [`MicroarchState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct UarchConfig {
    pub l1d: CacheGeometry,
    pub l1i: CacheGeometry,
    pub bht: BhtParams,
    pub rat: RatParams,
    pub residual: ResidualParams,
}

impl UarchConfig {
    pub fn validate(&self) -> Result<()> {
        self.l1d.validate()?;
        self.l1i.validate()?;
        self.bht.validate()?;
        self.rat.validate()?;
        Ok(())
    }
}

/// The full clearable on-core state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroarchState {
    pub l1d: CacheState,
    pub l1i: CacheState,
    pub bht: BhtState,
    pub rat: RatState,
    pub residual: ResidualState,
}

/// Build the post-reset state: caches invalid, counters at the reset value,
/// identity rename map, residual pool zero. Clearing a reset state is a
/// fixed point.
pub fn reset_state(config: &UarchConfig) -> Result<MicroarchState> {
    config.validate()?;
    Ok(MicroarchState {
        l1d: CacheState::new(config.l1d, CacheKind::Data)?,
        l1i: CacheState::new(config.l1i, CacheKind::Instruction)?,
        bht: BhtState::new(config.bht)?,
        rat: RatState::new(config.rat),
        residual: ResidualState::new(config.residual),
    })
}

impl MicroarchState {
    /// Apply every clearing primitive at once: clean + invalidate the
    /// caches, reset the predictor, the rename map, and the flip-flop pool.
    /// Returns the summed cost.
    pub fn clear_all_state(&mut self) -> Result<u64> {
        let mut cycles = self.l1d.clean_all()?;
        cycles += self.l1d.invalidate_all();
        cycles += self.l1i.invalidate_all();
        cycles += self.bht.invalidate();
        self.rat.clear();
        cycles += self.residual.ff_clear();
        Ok(cycles)
    }
}

/// Default stack-pointer value for a fresh architectural context.
pub const STACK_TOP: u64 = 0x8000_0000;

/// Marker written to a register whose value was destroyed by clearing mixed
/// state without a prior spill.
pub const CORRUPT_SENTINEL: u64 = 0xDEAD_BEEF_DEAD_BEEF;

/// ISA-visible context: 32 logical registers, the two CSRs the fence needs,
/// and sparse memory. Microarchitectural clears never touch this except
/// through the explicit spill/restore path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchState {
    pub regs: [u64; LOGICAL_REGS],
    /// Which register acts as the stack pointer (x2 by convention).
    pub sp_index: usize,
    pub scratch_csr: u64,
    pub resume_csr: u64,
    pub memory: BTreeMap<u64, u64>,
    /// Bitmask of registers whose values were destroyed by a mixed-state
    /// clear; reads of these observe [`CORRUPT_SENTINEL`].
    poisoned: u32,
}

impl Default for ArchState {
    fn default() -> Self {
        let mut regs = [0u64; LOGICAL_REGS];
        regs[2] = STACK_TOP;
        ArchState {
            regs,
            sp_index: 2,
            scratch_csr: 0,
            resume_csr: 0,
            memory: BTreeMap::new(),
            poisoned: 0,
        }
    }
}

impl ArchState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sp(&self) -> u64 {
        self.regs[self.sp_index]
    }

    pub fn set_sp(&mut self, value: u64) {
        self.regs[self.sp_index] = value;
    }

    /// Destroy a register value: overwrite with the sentinel and remember
    /// the loss until something reloads the register.
    pub fn poison(&mut self, logical: usize) {
        self.regs[logical] = CORRUPT_SENTINEL;
        self.poisoned |= 1 << logical;
    }

    pub fn is_poisoned(&self, logical: usize) -> bool {
        self.poisoned & (1 << logical) != 0
    }

    pub fn clear_poison(&mut self, logical: usize) {
        self.poisoned &= !(1 << logical);
    }

    pub fn any_poisoned(&self) -> bool {
        self.poisoned != 0
    }
}
