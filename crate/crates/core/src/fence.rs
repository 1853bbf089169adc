//! Temporal-fence procedures.
//!
//! `fence_t_s` is the software-supported sequence: spill the logical
//! registers to the stack, park the stack pointer in the scratch CSR, clean
//! and invalidate the SRAM structures, clear the flip-flops and the rename
//! map (safe, because every register value now lives on the stack), restore,
//! and pad to a fixed worst-case exit time. `naive_hw_fence` is the
//! monolithic hardware alternative that clears the same state without the
//! spill — demonstrating why mixed state corrupts architectural registers.
//!
//! Each step is an individually invocable primitive; [`run_step_sequence`]
//! executes an arbitrary ordering so tests can show that ordering matters.

use crate::error::{Result, SimError};
use crate::uarch::{AccessKind, ArchState, MicroarchState, UarchConfig, LOGICAL_REGS};

/// Value parked in the resume CSR so execution continues after the clear.
pub const RESUME_MARKER: u64 = 0x0000_0000_5AFE_C0DE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FenceVariant {
    FenceTS,
    NaiveHw,
    None,
}

impl std::str::FromStr for FenceVariant {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fence.t.s" => Ok(FenceVariant::FenceTS),
            "naive" => Ok(FenceVariant::NaiveHw),
            "none" => Ok(FenceVariant::None),
            other => Err(SimError::Config(format!(
                "unknown mitigation {other:?}; expected none, fence.t.s, or naive"
            ))),
        }
    }
}

impl FenceVariant {
    pub fn name(self) -> &'static str {
        match self {
            FenceVariant::FenceTS => "fence.t.s",
            FenceVariant::NaiveHw => "naive",
            FenceVariant::None => "none",
        }
    }
}

/// Which discrete steps a fence run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FenceSteps {
    pub spill_regs: bool,
    pub clean_l1d: bool,
    pub invalidate_srams: bool,
    pub clear_ffs: bool,
    pub clear_rat: bool,
    pub restore_regs: bool,
    pub pad: bool,
}

impl FenceSteps {
    pub fn all() -> Self {
        FenceSteps {
            spill_regs: true,
            clean_l1d: true,
            invalidate_srams: true,
            clear_ffs: true,
            clear_rat: true,
            restore_regs: true,
            pad: true,
        }
    }

    pub fn none() -> Self {
        FenceSteps {
            spill_regs: false,
            clean_l1d: false,
            invalidate_srams: false,
            clear_ffs: false,
            clear_rat: false,
            restore_regs: false,
            pad: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FenceConfig {
    pub pad_target: u64,
    pub steps: FenceSteps,
    pub variant: FenceVariant,
}

pub const DEFAULT_PAD_TARGET: u64 = 15_000;

impl FenceConfig {
    pub fn fence_t_s(pad_target: u64) -> Self {
        FenceConfig {
            pad_target,
            steps: FenceSteps::all(),
            variant: FenceVariant::FenceTS,
        }
    }

    /// The monolithic hardware clear: everything except the spill/restore.
    pub fn naive_hw(pad_target: u64) -> Self {
        FenceConfig {
            pad_target,
            steps: FenceSteps {
                spill_regs: false,
                restore_regs: false,
                ..FenceSteps::all()
            },
            variant: FenceVariant::NaiveHw,
        }
    }

    pub fn disabled() -> Self {
        FenceConfig {
            pad_target: 0,
            steps: FenceSteps::none(),
            variant: FenceVariant::None,
        }
    }

    pub fn for_variant(variant: FenceVariant, pad_target: u64) -> Self {
        match variant {
            FenceVariant::FenceTS => Self::fence_t_s(pad_target),
            FenceVariant::NaiveHw => Self::naive_hw(pad_target),
            FenceVariant::None => Self::disabled(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.pad && self.pad_target == 0 {
            return Err(SimError::Config(
                "pad_target must be positive when padding is enabled".into(),
            ));
        }
        Ok(())
    }
}

/// One discrete fence primitive, in the canonical order of the procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FenceStep {
    SpillRegs,
    CleanL1d,
    InvalidateSrams,
    ClearFfs,
    ClearRat,
    RestoreRegs,
    Pad,
}

impl FenceStep {
    pub fn name(self) -> &'static str {
        match self {
            FenceStep::SpillRegs => "spill_regs",
            FenceStep::CleanL1d => "clean_l1d",
            FenceStep::InvalidateSrams => "invalidate_srams",
            FenceStep::ClearFfs => "clear_ffs",
            FenceStep::ClearRat => "clear_rat",
            FenceStep::RestoreRegs => "restore_regs",
            FenceStep::Pad => "pad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FenceResult {
    pub raw_cycles: u64,
    /// What the scheduler observes; equals `pad_target` whenever padding ran.
    pub padded_cycles: u64,
    pub corrupted: bool,
    pub step_costs: Vec<(FenceStep, u64)>,
}

fn step_order(steps: FenceSteps) -> Vec<FenceStep> {
    let flags = [
        (steps.spill_regs, FenceStep::SpillRegs),
        (steps.clean_l1d, FenceStep::CleanL1d),
        (steps.invalidate_srams, FenceStep::InvalidateSrams),
        (steps.clear_ffs, FenceStep::ClearFfs),
        (steps.clear_rat, FenceStep::ClearRat),
        (steps.restore_regs, FenceStep::RestoreRegs),
        (steps.pad, FenceStep::Pad),
    ];
    flags
        .into_iter()
        .filter_map(|(on, step)| on.then_some(step))
        .collect()
}

/// Stack slot for the k-th spilled register. One register per cache line so
/// the spill and restore traffic is line-addressable and the worst case is
/// analytic.
fn stack_slot(sp: u64, k: u64, line_bytes: u64) -> u64 {
    sp - (k + 1) * line_bytes
}

/// Registers the fence spills, in order: every logical register except the
/// stack pointer, which travels through the scratch CSR instead.
fn spill_set(sp_index: usize) -> impl Iterator<Item = usize> {
    (0..LOGICAL_REGS).filter(move |&i| i != sp_index)
}

/// Execute fence steps in the given order. `fence_t_s` and `naive_hw_fence`
/// drive this with their canonical sequences; tests may pass reorderings to
/// show that clearing mixed state before the spill corrupts.
pub fn run_step_sequence(
    arch: &mut ArchState,
    uarch: &mut MicroarchState,
    order: &[FenceStep],
    pad_target: u64,
) -> Result<FenceResult> {
    let line_bytes = uarch.l1d.geometry().line_bytes;
    let mut raw = 0u64;
    let mut costs = Vec::with_capacity(order.len());
    let mut spilled = false;
    let mut corrupted = false;

    for &step in order {
        let cost = match step {
            FenceStep::SpillRegs => {
                let sp = arch.sp();
                if sp < (LOGICAL_REGS as u64 + 1) * line_bytes {
                    return Err(SimError::Contract(format!(
                        "stack pointer {sp:#x} leaves no room for the register save area"
                    )));
                }
                let mut cycles = 0;
                for (k, reg) in spill_set(arch.sp_index).enumerate() {
                    let addr = stack_slot(sp, k as u64, line_bytes);
                    let access = uarch.l1d.access(addr, AccessKind::Write)?;
                    cycles += access.latency;
                    arch.memory.insert(addr, arch.regs[reg]);
                }
                arch.scratch_csr = sp;
                arch.resume_csr = RESUME_MARKER;
                spilled = true;
                cycles + 2
            }
            FenceStep::CleanL1d => uarch.l1d.clean_all()?,
            FenceStep::InvalidateSrams => {
                uarch.l1d.invalidate_all() + uarch.l1i.invalidate_all() + uarch.bht.invalidate()
            }
            FenceStep::ClearFfs => uarch.residual.ff_clear(),
            FenceStep::ClearRat => {
                if !spilled {
                    for logical in uarch.rat.displaced_logicals() {
                        arch.poison(logical);
                        corrupted = true;
                    }
                }
                uarch.rat.clear();
                0
            }
            FenceStep::RestoreRegs => {
                arch.set_sp(arch.scratch_csr);
                let sp = arch.sp();
                let mut cycles = 1;
                for (k, reg) in spill_set(arch.sp_index).enumerate() {
                    let addr = stack_slot(sp, k as u64, line_bytes);
                    let access = uarch.l1d.access(addr, AccessKind::Read)?;
                    cycles += access.latency;
                    arch.regs[reg] = arch.memory.get(&addr).copied().unwrap_or(0);
                    arch.clear_poison(reg);
                }
                cycles
            }
            FenceStep::Pad => {
                let padded = pad_time(raw, pad_target)?;
                costs.push((FenceStep::Pad, padded - raw));
                return Ok(FenceResult {
                    raw_cycles: raw,
                    padded_cycles: padded,
                    corrupted,
                    step_costs: costs,
                });
            }
        };
        raw += cost;
        costs.push((step, cost));
    }

    Ok(FenceResult {
        raw_cycles: raw,
        padded_cycles: raw,
        corrupted,
        step_costs: costs,
    })
}

/// The software-supported temporal fence, step for step. Architectural
/// registers round-trip bit-exact; the microarchitecture leaves equal to
/// reset except for the L1D lines the restore itself touched.
pub fn fence_t_s(
    arch: &mut ArchState,
    uarch: &mut MicroarchState,
    cfg: &FenceConfig,
) -> Result<FenceResult> {
    if cfg.variant != FenceVariant::FenceTS {
        return Err(SimError::Contract(format!(
            "fence_t_s called with variant {}",
            cfg.variant.name()
        )));
    }
    cfg.validate()?;
    run_step_sequence(arch, uarch, &step_order(cfg.steps), cfg.pad_target)
}

/// The monolithic hardware clear: same scrubbing, no spill. Corrupts every
/// register whose value sits under a non-identity rename mapping.
pub fn naive_hw_fence(
    arch: &mut ArchState,
    uarch: &mut MicroarchState,
    cfg: &FenceConfig,
) -> Result<FenceResult> {
    if cfg.variant != FenceVariant::NaiveHw {
        return Err(SimError::Contract(format!(
            "naive_hw_fence called with variant {}",
            cfg.variant.name()
        )));
    }
    cfg.validate()?;
    run_step_sequence(arch, uarch, &step_order(cfg.steps), cfg.pad_target)
}

/// Stretch a raw duration to the fixed exit time.
pub fn pad_time(raw: u64, target: u64) -> Result<u64> {
    if target == 0 {
        return Err(SimError::Config("pad target must be positive".into()));
    }
    if raw > target {
        return Err(SimError::PadOverrun { raw, target });
    }
    Ok(target)
}

/// Analytic worst case of a full `fence.t.s` run: every spill store misses
/// and evicts a dirty line, the clean writes back a fully dirty L1D, and
/// every restore load misses. Matches the simulated fence exactly on the
/// adversarial fully-dirty state and bounds it on every other state.
pub fn worst_case_raw_cycles(cfg: &UarchConfig) -> u64 {
    let g = &cfg.l1d;
    let spills = LOGICAL_REGS as u64 - 1;
    let spill = spills * (g.miss_latency + g.writeback_latency) + 2;
    let clean = g.clean_base_cost + g.lines() as u64 * g.writeback_latency;
    let invalidate = g.invalidate_cost + cfg.l1i.invalidate_cost + cfg.bht.invalidate_cost;
    let clear = cfg.residual.clear_cost;
    let restore = 1 + spills * g.miss_latency;
    spill + clean + invalidate + clear + restore
}

/// Reject configurations whose pad budget cannot absorb the worst case.
pub fn validate_pad(fence: &FenceConfig, uarch: &UarchConfig) -> Result<()> {
    fence.validate()?;
    if fence.variant == FenceVariant::None || !fence.steps.pad {
        return Ok(());
    }
    let bound = worst_case_raw_cycles(uarch);
    if bound > fence.pad_target {
        return Err(SimError::Config(format!(
            "pad_target {} is below the worst-case fence time of {bound} cycles",
            fence.pad_target
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{execute, Kernel, KernelOp, TROJAN_DATA_BASE};
    use crate::uarch::{reset_state, CacheGeometry, ResidualState, STORE_BUFFER};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_cfg() -> UarchConfig {
        UarchConfig::default()
    }

    /// Random-but-seeded arch/uarch pair with some history on it.
    fn fuzzed_pair(rng: &mut ChaCha8Rng, cfg: &UarchConfig) -> (ArchState, MicroarchState) {
        let mut arch = ArchState::new();
        for i in 0..LOGICAL_REGS {
            if i != arch.sp_index {
                arch.regs[i] = rng.random();
            }
        }
        arch.memory.insert(0x9000_0000, rng.random());
        let mut uarch = reset_state(cfg).unwrap();
        let mut ops = Vec::new();
        for _ in 0..rng.random_range(1..60) {
            match rng.random_range(0..5) {
                0 => ops.push(KernelOp::Load(
                    TROJAN_DATA_BASE + rng.random_range(0..256u64) * 64,
                )),
                1 => ops.push(KernelOp::Store(
                    TROJAN_DATA_BASE + rng.random_range(0..256u64) * 64,
                )),
                2 => ops.push(KernelOp::Branch {
                    pc: rng.random_range(0..512u64) * 4,
                    taken: rng.random(),
                }),
                3 => ops.push(KernelOp::AllocReg(rng.random_range(0..LOGICAL_REGS))),
                _ => ops.push(KernelOp::Nop(1 + rng.random_range(0..4u64))),
            }
        }
        let kernel = Kernel::new("fuzz", ops).unwrap();
        execute(&kernel, &mut arch, &mut uarch).unwrap();
        (arch, uarch)
    }

    #[test]
    fn registers_round_trip_bit_exact() {
        let cfg = default_cfg();
        let mut arch = ArchState::new();
        for i in 0..LOGICAL_REGS {
            if i != arch.sp_index {
                arch.regs[i] = 0xDEAD_0000 + i as u64;
            }
        }
        let regs_before = arch.regs;
        let mut uarch = reset_state(&cfg).unwrap();
        let r = fence_t_s(&mut arch, &mut uarch, &FenceConfig::fence_t_s(15_000)).unwrap();
        assert_eq!(arch.regs, regs_before);
        assert!(!r.corrupted);
        assert_eq!(r.padded_cycles, 15_000);
        assert_eq!(
            r.raw_cycles,
            r.step_costs
                .iter()
                .filter(|(s, _)| *s != FenceStep::Pad)
                .map(|(_, c)| c)
                .sum::<u64>()
        );
    }

    #[test]
    fn post_fence_state_is_reset_plus_restore_residue() {
        let cfg = default_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut arch, mut uarch) = fuzzed_pair(&mut rng, &cfg);
        fence_t_s(&mut arch, &mut uarch, &FenceConfig::fence_t_s(15_000)).unwrap();
        let reset = reset_state(&cfg).unwrap();
        assert_eq!(uarch.l1i, reset.l1i);
        assert_eq!(uarch.bht, reset.bht);
        assert_eq!(uarch.rat, reset.rat);
        assert_eq!(uarch.residual, reset.residual);
        // L1D holds exactly the restore loads: clean lines in the stack area.
        assert_eq!(uarch.l1d.dirty_lines(), 0);
        assert_eq!(uarch.l1d.valid_lines(), LOGICAL_REGS - 1);
        let line = cfg.l1d.line_bytes;
        let sp = arch.sp();
        for addr in uarch.l1d.valid_line_addrs() {
            assert!(addr >= sp - 32 * line && addr < sp);
        }
    }

    #[test]
    fn naive_fence_on_fresh_rat_is_harmless() {
        let cfg = default_cfg();
        let mut arch = ArchState::new();
        arch.regs[5] = 999;
        let mut uarch = reset_state(&cfg).unwrap();
        let r = naive_hw_fence(&mut arch, &mut uarch, &FenceConfig::naive_hw(15_000)).unwrap();
        assert!(!r.corrupted);
        assert_eq!(arch.regs[5], 999);
    }

    #[test]
    fn naive_fence_corrupts_renamed_registers() {
        let cfg = default_cfg();
        let mut arch = ArchState::new();
        arch.regs[5] = 999;
        let mut uarch = reset_state(&cfg).unwrap();
        uarch.rat.allocate(5).unwrap();
        let r = naive_hw_fence(&mut arch, &mut uarch, &FenceConfig::naive_hw(15_000)).unwrap();
        assert!(r.corrupted);
        assert!(arch.is_poisoned(5));
        assert_eq!(arch.regs[5], crate::uarch::CORRUPT_SENTINEL);
    }

    #[test]
    fn fence_t_s_survives_the_same_renamed_state() {
        let cfg = default_cfg();
        let mut arch = ArchState::new();
        arch.regs[5] = 999;
        let mut uarch = reset_state(&cfg).unwrap();
        uarch.rat.allocate(5).unwrap();
        let r = fence_t_s(&mut arch, &mut uarch, &FenceConfig::fence_t_s(15_000)).unwrap();
        assert!(!r.corrupted);
        assert_eq!(arch.regs[5], 999);
    }

    #[test]
    fn pad_boundaries() {
        assert_eq!(pad_time(9_000, 15_000).unwrap(), 15_000);
        assert_eq!(pad_time(15_000, 15_000).unwrap(), 15_000);
        assert!(matches!(
            pad_time(15_001, 15_000),
            Err(SimError::PadOverrun {
                raw: 15_001,
                target: 15_000
            })
        ));
        assert!(pad_time(1, 0).is_err());
    }

    /// Build the adversarial state: every L1D line valid and dirty under
    /// tags foreign to the fence's stack area.
    fn fully_dirty(cfg: &UarchConfig) -> MicroarchState {
        let mut uarch = reset_state(cfg).unwrap();
        let mut arch = ArchState::new();
        let ops = (0..cfg.l1d.lines() as u64)
            .map(|k| KernelOp::Store(TROJAN_DATA_BASE + k * cfg.l1d.line_bytes))
            .collect();
        let kernel = Kernel::new("dirty", ops).unwrap();
        execute(&kernel, &mut arch, &mut uarch).unwrap();
        assert_eq!(uarch.l1d.dirty_lines(), cfg.l1d.lines());
        uarch
    }

    #[test]
    fn fully_dirty_fence_matches_the_analytic_worst_case() {
        let cfg = default_cfg();
        let mut arch = ArchState::new();
        let mut uarch = fully_dirty(&cfg);
        let r = fence_t_s(&mut arch, &mut uarch, &FenceConfig::fence_t_s(15_000)).unwrap();
        assert_eq!(r.raw_cycles, worst_case_raw_cycles(&cfg));
        assert!(r.raw_cycles <= 15_000);
    }

    #[test]
    fn one_line_cache_worst_case_is_hand_computable() {
        let mut cfg = default_cfg();
        cfg.l1d = CacheGeometry {
            sets: 1,
            ways: 1,
            ..CacheGeometry::default()
        };
        // 31*(20+8) + 2 spill, 10+8 clean, 4+4+4 invalidate, 4 ff,
        // 1+31*20 restore.
        assert_eq!(worst_case_raw_cycles(&cfg), 868 + 2 + 18 + 12 + 4 + 621);
        let mut arch = ArchState::new();
        let mut uarch = reset_state(&cfg).unwrap();
        uarch.residual = ResidualState::empty(cfg.residual.clear_cost);
        uarch
            .l1d
            .access(TROJAN_DATA_BASE, AccessKind::Write)
            .unwrap();
        let r = fence_t_s(&mut arch, &mut uarch, &FenceConfig::fence_t_s(15_000)).unwrap();
        assert_eq!(r.raw_cycles, worst_case_raw_cycles(&cfg));
    }

    #[test]
    fn raw_cycles_never_exceed_the_worst_case() {
        let cfg = default_cfg();
        let bound = worst_case_raw_cycles(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let (mut arch, mut uarch) = fuzzed_pair(&mut rng, &cfg);
            let r = fence_t_s(&mut arch, &mut uarch, &FenceConfig::fence_t_s(15_000)).unwrap();
            assert!(r.raw_cycles <= bound);
        }
    }

    #[test]
    fn padded_exit_time_is_constant_across_states() {
        let cfg = default_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut times = std::collections::BTreeSet::new();
        for _ in 0..100 {
            let (mut arch, mut uarch) = fuzzed_pair(&mut rng, &cfg);
            let r = fence_t_s(&mut arch, &mut uarch, &FenceConfig::fence_t_s(15_000)).unwrap();
            times.insert(r.padded_cycles);
        }
        assert_eq!(times.len(), 1);
        assert_eq!(times.into_iter().next(), Some(15_000));
    }

    #[test]
    fn clearing_rat_before_the_spill_corrupts() {
        let cfg = default_cfg();
        let order = [
            FenceStep::ClearRat,
            FenceStep::SpillRegs,
            FenceStep::CleanL1d,
            FenceStep::InvalidateSrams,
            FenceStep::ClearFfs,
            FenceStep::RestoreRegs,
            FenceStep::Pad,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut saw_corruption = false;
        for _ in 0..50 {
            let (mut arch, mut uarch) = fuzzed_pair(&mut rng, &cfg);
            let displaced = !uarch.rat.map_is_identity();
            let r = run_step_sequence(&mut arch, &mut uarch, &order, 15_000).unwrap();
            assert_eq!(r.corrupted, displaced);
            saw_corruption |= r.corrupted;
        }
        assert!(saw_corruption, "fuzz never produced a renamed register");
    }

    #[test]
    fn memory_outside_the_stack_area_is_untouched() {
        let cfg = default_cfg();
        let mut arch = ArchState::new();
        arch.memory.insert(0xA000_0000, 0x42);
        arch.memory.insert(0x0000_1000, 0x43);
        let mut uarch = reset_state(&cfg).unwrap();
        fence_t_s(&mut arch, &mut uarch, &FenceConfig::fence_t_s(15_000)).unwrap();
        assert_eq!(arch.memory.get(&0xA000_0000), Some(&0x42));
        assert_eq!(arch.memory.get(&0x0000_1000), Some(&0x43));
        let sp = arch.sp();
        let line = cfg.l1d.line_bytes;
        for &addr in arch.memory.keys() {
            let in_stack = addr >= sp - 32 * line && addr < sp;
            assert!(
                in_stack || addr == 0xA000_0000 || addr == 0x0000_1000,
                "unexpected memory write at {addr:#x}"
            );
        }
    }

    #[test]
    fn fence_clears_trojan_residue_in_the_store_buffer() {
        let cfg = default_cfg();
        let mut arch = ArchState::new();
        let mut uarch = reset_state(&cfg).unwrap();
        for _ in 0..9 {
            uarch.residual.bump_store_buffer();
        }
        fence_t_s(&mut arch, &mut uarch, &FenceConfig::fence_t_s(15_000)).unwrap();
        assert_eq!(uarch.residual.get(STORE_BUFFER), Some(0));
    }

    #[test]
    fn undersized_pad_is_rejected_with_the_bound() {
        let cfg = default_cfg();
        let bound = worst_case_raw_cycles(&cfg);
        let err = validate_pad(&FenceConfig::fence_t_s(bound - 1), &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&bound.to_string()), "message was {msg:?}");
        validate_pad(&FenceConfig::fence_t_s(bound), &cfg).unwrap();
        validate_pad(&FenceConfig::disabled(), &cfg).unwrap();
    }

    #[test]
    fn variant_mismatch_is_a_contract_violation() {
        let cfg = default_cfg();
        let mut arch = ArchState::new();
        let mut uarch = reset_state(&cfg).unwrap();
        let naive = FenceConfig::naive_hw(15_000);
        assert!(fence_t_s(&mut arch, &mut uarch, &naive).is_err());
        let ts = FenceConfig::fence_t_s(15_000);
        assert!(naive_hw_fence(&mut arch, &mut uarch, &ts).is_err());
    }
}
