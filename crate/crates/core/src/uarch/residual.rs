//! Residual flip-flop pool: small named registers that survive outside the
//! named SRAM structures and can only be scrubbed by `ff.clr`. Each declares
//! a width and an additive timing influence charged once at kernel start.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const STORE_BUFFER: &str = "store_buffer";
pub const PREFETCH_STRIDE: &str = "prefetch_stride";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualParams {
    pub clear_cost: u64,
}

impl Default for ResidualParams {
    fn default() -> Self {
        ResidualParams { clear_cost: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedReg {
    pub name: &'static str,
    pub value: u64,
    pub width_bits: u32,
    pub cycles_per_unit: u64,
}

impl NamedReg {
    fn max_value(&self) -> u64 {
        (1u64 << self.width_bits) - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualState {
    regs: Vec<NamedReg>,
    clear_cost: u64,
}

impl ResidualState {
    /// The two exemplar registers: a 4-bit store-buffer occupancy counter
    /// that costs one cycle per unit at the next kernel start, and an 8-bit
    /// prefetch stride with no timing influence of its own.
    pub fn new(params: ResidualParams) -> Self {
        ResidualState {
            regs: vec![
                NamedReg {
                    name: STORE_BUFFER,
                    value: 0,
                    width_bits: 4,
                    cycles_per_unit: 1,
                },
                NamedReg {
                    name: PREFETCH_STRIDE,
                    value: 0,
                    width_bits: 8,
                    cycles_per_unit: 0,
                },
            ],
            clear_cost: params.clear_cost,
        }
    }

    /// An empty pool, for hand-computable fence sums in tests.
    pub fn empty(clear_cost: u64) -> Self {
        ResidualState {
            regs: Vec::new(),
            clear_cost,
        }
    }

    pub fn influence(&self) -> u64 {
        self.regs.iter().map(|r| r.value * r.cycles_per_unit).sum()
    }

    /// Charge the pending influence and drain the store buffer; called once
    /// when a kernel starts executing.
    pub fn begin_kernel(&mut self) -> u64 {
        let influence = self.influence();
        if let Some(reg) = self.regs.iter_mut().find(|r| r.name == STORE_BUFFER) {
            reg.value = 0;
        }
        influence
    }

    /// Saturating occupancy bump, one per store.
    pub fn bump_store_buffer(&mut self) {
        if let Some(reg) = self.regs.iter_mut().find(|r| r.name == STORE_BUFFER) {
            reg.value = (reg.value + 1).min(reg.max_value());
        }
    }

    pub fn set(&mut self, name: &str, value: u64) -> Result<()> {
        let reg = self
            .regs
            .iter_mut()
            .find(|r| r.name == name)
            .ok_or_else(|| SimError::Contract(format!("no residual register named {name}")))?;
        if value > reg.max_value() {
            return Err(SimError::Contract(format!(
                "{name} is {} bits wide, cannot hold {value}",
                reg.width_bits
            )));
        }
        reg.value = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.regs.iter().find(|r| r.name == name).map(|r| r.value)
    }

    pub fn ff_clear(&mut self) -> u64 {
        for reg in &mut self.regs {
            reg.value = 0;
        }
        self.clear_cost
    }

    pub fn all_zero(&self) -> bool {
        self.regs.iter().all(|r| r.value == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clear_zeroes_everything() {
        let mut r = ResidualState::new(ResidualParams::default());
        r.set(STORE_BUFFER, 7).unwrap();
        r.set(PREFETCH_STRIDE, 3).unwrap();
        assert_eq!(r.ff_clear(), 4);
        assert!(r.all_zero());
        let snap = r.clone();
        r.ff_clear();
        assert_eq!(r, snap);
    }

    #[test]
    fn influence_is_linear_in_store_buffer_and_zero_after_clear() {
        let mut r = ResidualState::new(ResidualParams::default());
        r.set(STORE_BUFFER, 9).unwrap();
        r.set(PREFETCH_STRIDE, 200).unwrap();
        assert_eq!(r.influence(), 9);
        r.ff_clear();
        assert_eq!(r.influence(), 0);
    }

    #[test]
    fn store_buffer_saturates_at_fifteen() {
        let mut r = ResidualState::new(ResidualParams::default());
        for _ in 0..40 {
            r.bump_store_buffer();
        }
        assert_eq!(r.get(STORE_BUFFER), Some(15));
    }

    #[test]
    fn begin_kernel_charges_then_drains() {
        let mut r = ResidualState::new(ResidualParams::default());
        r.set(STORE_BUFFER, 5).unwrap();
        assert_eq!(r.begin_kernel(), 5);
        assert_eq!(r.begin_kernel(), 0);
    }

    #[test]
    fn widths_are_enforced() {
        let mut r = ResidualState::new(ResidualParams::default());
        assert!(r.set(STORE_BUFFER, 16).is_err());
        assert!(r.set(PREFETCH_STRIDE, 255).is_ok());
    }
}
