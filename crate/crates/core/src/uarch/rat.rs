//! Register alias table: the logical-to-physical mapping used by register
//! renaming. The map plus the free list always form a permutation of the
//! physical register file. This is the mixed-state structure: it influences
//! timing, yet resetting it relocates every architectural register value.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const LOGICAL_REGS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatParams {
    /// Total physical registers; must exceed the 32 logical registers.
    pub phys_count: usize,
    pub rename_base: u64,
}

impl Default for RatParams {
    fn default() -> Self {
        RatParams {
            phys_count: 48,
            rename_base: 1,
        }
    }
}

impl RatParams {
    pub fn validate(&self) -> Result<()> {
        if self.phys_count <= LOGICAL_REGS {
            return Err(SimError::Config(format!(
                "phys_count must exceed {LOGICAL_REGS}, got {}",
                self.phys_count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatAlloc {
    pub physical: usize,
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatState {
    map: Vec<usize>,
    free_list: VecDeque<usize>,
    phys_count: usize,
    rename_base: u64,
}

impl RatState {
    pub fn new(params: RatParams) -> Self {
        RatState {
            map: (0..LOGICAL_REGS).collect(),
            free_list: (LOGICAL_REGS..params.phys_count).collect(),
            phys_count: params.phys_count,
            rename_base: params.rename_base,
        }
    }

    pub fn phys_count(&self) -> usize {
        self.phys_count
    }

    pub fn free_len(&self) -> usize {
        self.free_list.len()
    }

    pub fn mapping(&self, logical: usize) -> usize {
        self.map[logical]
    }

    /// Rename latency grows once the free list drains below a quarter of the
    /// physical file: +1 cycle per missing entry under that threshold.
    fn occupancy_penalty(&self, free_len: usize) -> u64 {
        (self.phys_count / 4).saturating_sub(free_len) as u64
    }

    /// Latency charged for an allocation that cannot be served.
    pub fn stall_latency(&self) -> u64 {
        self.rename_base + self.occupancy_penalty(0)
    }

    /// Map `logical` to the head of the free list and recycle the previous
    /// physical register to the tail.
    pub fn allocate(&mut self, logical: usize) -> Result<RatAlloc> {
        if logical >= LOGICAL_REGS {
            return Err(SimError::Contract(format!(
                "logical register index {logical} out of range"
            )));
        }
        let free_before = self.free_list.len();
        let physical = self.free_list.pop_front().ok_or(SimError::AllocStall)?;
        let latency = self.rename_base + self.occupancy_penalty(free_before);
        let previous = std::mem::replace(&mut self.map[logical], physical);
        self.free_list.push_back(previous);
        Ok(RatAlloc { physical, latency })
    }

    /// Reset to the identity map. Any register value held only under a
    /// non-identity mapping is lost; the fence layer models that loss.
    pub fn clear(&mut self) {
        for (logical, slot) in self.map.iter_mut().enumerate() {
            *slot = logical;
        }
        self.free_list = (LOGICAL_REGS..self.phys_count).collect();
    }

    pub fn map_is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(l, &p)| l == p)
    }

    /// Logical registers whose current physical home differs from the
    /// post-clear identity slot.
    pub fn displaced_logicals(&self) -> Vec<usize> {
        self.map
            .iter()
            .enumerate()
            .filter(|(l, &p)| *l != p)
            .map(|(l, _)| l)
            .collect()
    }

    /// Test hook: map and free list together must cover the physical file
    /// exactly once.
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.phys_count];
        for &p in self.map.iter().chain(self.free_list.iter()) {
            if p >= self.phys_count || seen[p] {
                return false;
            }
            seen[p] = true;
        }
        seen.iter().all(|&s| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fresh() -> RatState {
        RatState::new(RatParams::default())
    }

    #[test]
    fn fresh_allocation_has_no_penalty() {
        let mut rat = fresh();
        let alloc = rat.allocate(5).unwrap();
        assert!(alloc.physical >= LOGICAL_REGS);
        assert_eq!(alloc.latency, 1);
        assert_eq!(rat.mapping(5), alloc.physical);
    }

    #[test]
    fn recycling_keeps_free_list_at_steady_occupancy() {
        let mut rat = fresh();
        for k in 0..15 {
            rat.allocate(k % LOGICAL_REGS).unwrap();
        }
        let sixteenth = rat.allocate(15).unwrap();
        assert!(sixteenth.latency >= 1);
        assert_eq!(rat.free_len(), 16);
    }

    #[test]
    fn empty_free_list_stalls() {
        let mut rat = RatState::new(RatParams {
            phys_count: LOGICAL_REGS,
            rename_base: 1,
        });
        assert!(matches!(rat.allocate(0), Err(SimError::AllocStall)));
        assert!(rat.stall_latency() >= 1);
    }

    #[test]
    fn clear_is_identity_on_fresh_state() {
        let mut rat = fresh();
        let snap = rat.clone();
        rat.clear();
        assert_eq!(rat, snap);
    }

    #[test]
    fn clear_restores_identity_after_allocations() {
        let mut rat = fresh();
        for k in 0..10 {
            rat.allocate(k).unwrap();
        }
        assert!(!rat.map_is_identity());
        rat.clear();
        assert!(rat.map_is_identity());
        assert_eq!(rat.free_len(), 16);
        assert_eq!(rat, fresh());
    }

    #[test]
    fn occupancy_penalty_shape() {
        let rat = fresh();
        // threshold = 48/4 = 12
        assert_eq!(rat.occupancy_penalty(16), 0);
        assert_eq!(rat.occupancy_penalty(12), 0);
        assert_eq!(rat.occupancy_penalty(11), 1);
        assert_eq!(rat.occupancy_penalty(0), 12);
    }

    proptest! {
        #[test]
        fn allocate_and_clear_preserve_the_permutation(
            ops in proptest::collection::vec((0usize..LOGICAL_REGS, proptest::bool::ANY), 0..200)
        ) {
            let mut rat = fresh();
            for (logical, clear) in ops {
                if clear {
                    rat.clear();
                } else {
                    rat.allocate(logical).unwrap();
                }
                prop_assert!(rat.is_permutation());
            }
        }
    }
}
