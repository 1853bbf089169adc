//! Abstract instruction sequences and their cycle-accounting executor.
//!
//! A [`Kernel`] is an ordered list of primitive actions: cache-visible loads,
//! stores and fetches, predicted branches, rename allocations, register
//! spill/restore, CSR writes, and fixed-cost nops. `Load`/`Store`/`Fetch` are
//! timing-only (the payload never matters for the channel); `Spill`/`Restore`
//! are the valued path that moves registers through the data cache.

use crate::error::{Result, SimError};
use crate::uarch::{AccessKind, ArchState, MicroarchState, UarchConfig, LOGICAL_REGS};

/// Address-space layout used by the bench kernels. Spy and trojan data
/// regions alias in set index but never in tag; branch sites are shared so
/// both domains contend for the same BHT entries; the spill region and the
/// fence's stack area stay disjoint from all of them.
pub const SPY_DATA_BASE: u64 = 0x1000_0000;
pub const SPY_CODE_BASE: u64 = 0x1100_0000;
pub const TROJAN_DATA_BASE: u64 = 0x2000_0000;
pub const TROJAN_CODE_BASE: u64 = 0x2200_0000;
pub const BHT_PC_BASE: u64 = 0x3000_0000;
pub const WORKLOAD_DATA_BASE: u64 = 0x4000_0000;
pub const WORKLOAD_PC_BASE: u64 = 0x5000_0000;
pub const SPILL_BASE: u64 = 0x7000_0000;

const BRANCH_BASE_CYCLES: u64 = 1;
const CSR_WRITE_CYCLES: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Csr {
    Scratch,
    Resume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelOp {
    Load(u64),
    Store(u64),
    Fetch(u64),
    Branch { pc: u64, taken: bool },
    AllocReg(usize),
    Spill(usize),
    Restore(usize),
    WriteCsr(Csr, u64),
    Nop(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kernel {
    pub name: String,
    pub ops: Vec<KernelOp>,
}

impl Kernel {
    pub fn new(name: impl Into<String>, ops: Vec<KernelOp>) -> Result<Self> {
        if ops.is_empty() {
            return Err(SimError::Contract("kernel must not be empty".into()));
        }
        for op in &ops {
            match *op {
                KernelOp::Nop(c) if c < 1 => {
                    return Err(SimError::Contract("nop must cost at least 1 cycle".into()))
                }
                KernelOp::AllocReg(r) | KernelOp::Spill(r) | KernelOp::Restore(r)
                    if r >= LOGICAL_REGS =>
                {
                    return Err(SimError::Contract(format!(
                        "register index {r} out of range"
                    )))
                }
                _ => {}
            }
        }
        Ok(Kernel {
            name: name.into(),
            ops,
        })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// Cycle and event totals for one kernel execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunResult {
    pub cycles: u64,
    pub mispredicts: u64,
    pub misses: u64,
    /// Set when an op read a register destroyed by a mixed-state clear.
    pub corrupted: bool,
    /// Rename requests that found the free list empty.
    pub alloc_stalls: u64,
}

/// Apply one op to the pair of states, accumulating into `result`.
pub(crate) fn step_op(
    op: KernelOp,
    arch: &mut ArchState,
    uarch: &mut MicroarchState,
    result: &mut RunResult,
) -> Result<()> {
    match op {
        KernelOp::Load(addr) => {
            let access = uarch.l1d.access(addr, AccessKind::Read)?;
            result.cycles += access.latency;
            result.misses += (!access.hit) as u64;
        }
        KernelOp::Store(addr) => {
            let access = uarch.l1d.access(addr, AccessKind::Write)?;
            result.cycles += access.latency;
            result.misses += (!access.hit) as u64;
            uarch.residual.bump_store_buffer();
        }
        KernelOp::Fetch(addr) => {
            let access = uarch.l1i.access(addr, AccessKind::Fetch)?;
            result.cycles += access.latency;
            result.misses += (!access.hit) as u64;
        }
        KernelOp::Branch { pc, taken } => {
            let outcome = uarch.bht.predict_and_update(pc, taken);
            result.cycles += BRANCH_BASE_CYCLES;
            if outcome.mispredict {
                result.cycles += uarch.bht.mispredict_penalty();
                result.mispredicts += 1;
            }
        }
        KernelOp::AllocReg(logical) => match uarch.rat.allocate(logical) {
            Ok(alloc) => result.cycles += alloc.latency,
            Err(SimError::AllocStall) => {
                result.alloc_stalls += 1;
                result.cycles += uarch.rat.stall_latency();
            }
            Err(e) => return Err(e),
        },
        KernelOp::Spill(logical) => {
            if arch.is_poisoned(logical) {
                result.corrupted = true;
            }
            let addr = SPILL_BASE + 8 * logical as u64;
            let access = uarch.l1d.access(addr, AccessKind::Write)?;
            result.cycles += access.latency;
            result.misses += (!access.hit) as u64;
            uarch.residual.bump_store_buffer();
            arch.memory.insert(addr, arch.regs[logical]);
        }
        KernelOp::Restore(logical) => {
            if arch.is_poisoned(logical) {
                result.corrupted = true;
            }
            let addr = SPILL_BASE + 8 * logical as u64;
            let access = uarch.l1d.access(addr, AccessKind::Read)?;
            result.cycles += access.latency;
            result.misses += (!access.hit) as u64;
            arch.regs[logical] = arch.memory.get(&addr).copied().unwrap_or(0);
            arch.clear_poison(logical);
        }
        KernelOp::WriteCsr(csr, value) => {
            result.cycles += CSR_WRITE_CYCLES;
            match csr {
                Csr::Scratch => arch.scratch_csr = value,
                Csr::Resume => arch.resume_csr = value,
            }
        }
        KernelOp::Nop(cycles) => result.cycles += cycles,
    }
    Ok(())
}

/// Run a kernel to completion. The residual pool's influence is charged once
/// at kernel start, then the store buffer drains.
pub fn execute(kernel: &Kernel, arch: &mut ArchState, uarch: &mut MicroarchState) -> Result<RunResult> {
    let mut result = RunResult {
        cycles: uarch.residual.begin_kernel(),
        ..RunResult::default()
    };
    for &op in &kernel.ops {
        step_op(op, arch, uarch, &mut result)?;
    }
    Ok(result)
}

/// Which contended structure a bench targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    L1d,
    L1i,
    Bht,
    Rat,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::L1d => "l1d",
            Component::L1i => "l1i",
            Component::Bht => "bht",
            Component::Rat => "rat",
        }
    }

    /// Units the trojan can touch: cache lines, table entries, or physical
    /// registers.
    pub fn capacity(self, cfg: &UarchConfig) -> usize {
        match self {
            Component::L1d => cfg.l1d.lines(),
            Component::L1i => cfg.l1i.lines(),
            Component::Bht => cfg.bht.entries(),
            Component::Rat => cfg.rat.phys_count,
        }
    }

    /// Default secret range: one secret per unit plus the idle secret,
    /// capped at 129 for the predictor.
    pub fn default_secret_count(self, cfg: &UarchConfig) -> usize {
        match self {
            Component::Bht => (self.capacity(cfg) + 1).min(129),
            _ => self.capacity(cfg) + 1,
        }
    }
}

impl std::str::FromStr for Component {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1d" => Ok(Component::L1d),
            "l1i" => Ok(Component::L1i),
            "bht" => Ok(Component::Bht),
            "rat" => Ok(Component::Rat),
            other => Err(SimError::Config(format!(
                "unknown component {other:?}; expected l1d, l1i, bht, or rat"
            ))),
        }
    }
}

/// The trojan's encoding kernel: touch `intensity` distinct units of the
/// component. Intensity 0 encodes as a lone nop.
pub fn make_prime_kernel(
    component: Component,
    intensity: usize,
    cfg: &UarchConfig,
) -> Result<Kernel> {
    let capacity = component.capacity(cfg);
    if intensity > capacity {
        return Err(SimError::Config(format!(
            "trojan intensity {intensity} exceeds {} capacity {capacity}",
            component.name()
        )));
    }
    let name = format!("trojan-{}-{intensity}", component.name());
    if intensity == 0 {
        return Kernel::new(name, vec![KernelOp::Nop(1)]);
    }
    let ops = match component {
        Component::L1d => (0..intensity as u64)
            .map(|k| KernelOp::Store(TROJAN_DATA_BASE + k * cfg.l1d.line_bytes))
            .collect(),
        Component::L1i => (0..intensity as u64)
            .map(|k| KernelOp::Fetch(TROJAN_CODE_BASE + k * cfg.l1i.line_bytes))
            .collect(),
        Component::Bht => (0..intensity as u64)
            .map(|k| KernelOp::Branch {
                pc: BHT_PC_BASE + k * 4,
                taken: true,
            })
            .collect(),
        Component::Rat => (0..intensity)
            .map(|k| KernelOp::AllocReg(k % LOGICAL_REGS))
            .collect(),
    };
    Kernel::new(name, ops)
}

/// The spy's prime function: sweep the whole component and leave it in a
/// known state. Its execution time is the observation.
///
/// The branch probe visits every entry with three not-taken branches and one
/// taken branch: any 2-bit counter ends at 1 (weakly not-taken), so the probe
/// re-primes the table exactly, while its mispredict count still separates
/// entries the trojan trained.
pub fn make_probe_kernel(component: Component, cfg: &UarchConfig) -> Result<Kernel> {
    let name = format!("probe-{}", component.name());
    let ops = match component {
        Component::L1d => (0..cfg.l1d.lines() as u64)
            .map(|k| KernelOp::Load(SPY_DATA_BASE + k * cfg.l1d.line_bytes))
            .collect(),
        Component::L1i => (0..cfg.l1i.lines() as u64)
            .map(|k| KernelOp::Fetch(SPY_CODE_BASE + k * cfg.l1i.line_bytes))
            .collect(),
        Component::Bht => {
            let mut ops = Vec::with_capacity(cfg.bht.entries() * 4);
            for k in 0..cfg.bht.entries() as u64 {
                let pc = BHT_PC_BASE + k * 4;
                for _ in 0..3 {
                    ops.push(KernelOp::Branch { pc, taken: false });
                }
                ops.push(KernelOp::Branch { pc, taken: true });
            }
            ops
        }
        Component::Rat => (0..LOGICAL_REGS).map(KernelOp::AllocReg).collect(),
    };
    Kernel::new(name, ops)
}
