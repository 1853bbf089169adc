//! Slowdown measurement: a foreground workload time-sliced against an idle
//! domain, with the fence applied at every slice boundary. The direct cost
//! is the padded fence time itself; the indirect cost is whatever the cold
//! microarchitecture adds on top once the foreground resumes.

use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fence::{fence_t_s, naive_hw_fence, validate_pad, FenceConfig, FenceVariant};
use crate::kernel::{step_op, Kernel, KernelOp, RunResult, WORKLOAD_DATA_BASE, WORKLOAD_PC_BASE};
use crate::uarch::{reset_state, ArchState, MicroarchState, UarchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadKind {
    /// Loads chasing a seeded permutation cycle over the working set.
    PointerChase,
    /// Sequential loads over the working set.
    Streaming,
    /// Taken branches over a set of branch sites.
    BranchHeavy,
    /// Loads, stores, branches, and nops interleaved.
    Mixed,
}

impl WorkloadKind {
    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::PointerChase => "pointer_chase",
            WorkloadKind::Streaming => "streaming",
            WorkloadKind::BranchHeavy => "branch_heavy",
            WorkloadKind::Mixed => "mixed",
        }
    }

    pub fn all() -> [WorkloadKind; 4] {
        [
            WorkloadKind::PointerChase,
            WorkloadKind::Streaming,
            WorkloadKind::BranchHeavy,
            WorkloadKind::Mixed,
        ]
    }
}

impl std::str::FromStr for WorkloadKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointer_chase" => Ok(WorkloadKind::PointerChase),
            "streaming" => Ok(WorkloadKind::Streaming),
            "branch_heavy" => Ok(WorkloadKind::BranchHeavy),
            "mixed" => Ok(WorkloadKind::Mixed),
            other => Err(SimError::Config(format!(
                "unknown workload {other:?}; expected pointer_chase, streaming, branch_heavy, or mixed"
            ))),
        }
    }
}

/// A long-running foreground program: one loop body repeated many times.
#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub body: Kernel,
    pub iterations: u64,
}

/// Build a workload body. Working sets default to half the L1D so the cold
/// restart after a fence is visible but modest.
pub fn make_workload(kind: WorkloadKind, ucfg: &UarchConfig, seed: u64) -> Result<Workload> {
    let line = ucfg.l1d.line_bytes;
    let working_set = (ucfg.l1d.lines() / 2).max(1) as u64;
    let branch_sites = (ucfg.bht.entries() / 4).max(1) as u64;
    let ops = match kind {
        WorkloadKind::Streaming => (0..working_set)
            .map(|k| KernelOp::Load(WORKLOAD_DATA_BASE + k * line))
            .collect(),
        WorkloadKind::PointerChase => {
            let mut order: Vec<u64> = (0..working_set).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order
                .into_iter()
                .map(|k| KernelOp::Load(WORKLOAD_DATA_BASE + k * line))
                .collect()
        }
        WorkloadKind::BranchHeavy => (0..branch_sites * 2)
            .map(|k| KernelOp::Branch {
                pc: WORKLOAD_PC_BASE + (k % branch_sites) * 4,
                taken: true,
            })
            .collect(),
        WorkloadKind::Mixed => {
            let mut ops = Vec::new();
            for k in 0..working_set {
                ops.push(KernelOp::Load(WORKLOAD_DATA_BASE + k * line));
                if k % 4 == 0 {
                    ops.push(KernelOp::Store(WORKLOAD_DATA_BASE + k * line));
                }
                if k < branch_sites {
                    ops.push(KernelOp::Branch {
                        pc: WORKLOAD_PC_BASE + k * 4,
                        taken: true,
                    });
                }
                ops.push(KernelOp::Nop(1));
            }
            ops
        }
    };
    Ok(Workload {
        name: kind.name().to_string(),
        body: Kernel::new(format!("workload-{}", kind.name()), ops)?,
        iterations: 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverheadReport {
    pub workload: String,
    pub baseline_cycles: u64,
    pub mitigated_cycles: u64,
    /// Sum of padded fence exits: switches x pad_target.
    pub direct_cost_cycles: u64,
    /// mitigated - baseline - direct: the cold-microarchitecture tax.
    pub indirect_cost_cycles: i64,
    pub slowdown_percent: f64,
    pub switches: u64,
    pub slice_cycles: u64,
    pub pad_target: u64,
}

/// Wall cycles to run `work` foreground ops under a slice schedule,
/// alternating with an idle domain, fencing at every boundary when asked.
fn simulate(
    workload: &Workload,
    slice_cycles: u64,
    fence: &FenceConfig,
    ucfg: &UarchConfig,
) -> Result<(u64, u64)> {
    let mut fg_arch = ArchState::new();
    let mut idle_arch = ArchState::new();
    let mut uarch = reset_state(ucfg)?;

    let body = &workload.body;
    let total_ops = workload.iterations * body.len() as u64;
    let mut done = 0u64;
    let mut wall = 0u64;
    let mut switches = 0u64;

    let run_fence = |arch: &mut ArchState, uarch: &mut MicroarchState| -> Result<u64> {
        let result = match fence.variant {
            FenceVariant::FenceTS => fence_t_s(arch, uarch, fence)?,
            FenceVariant::NaiveHw => naive_hw_fence(arch, uarch, fence)?,
            FenceVariant::None => return Ok(0),
        };
        Ok(result.padded_cycles)
    };

    while done < total_ops {
        // Foreground slice: resume the op stream until the budget runs out.
        let mut used = uarch.residual.begin_kernel();
        let mut scratch = RunResult::default();
        while used < slice_cycles && done < total_ops {
            let op = body.ops[(done % body.len() as u64) as usize];
            scratch.cycles = 0;
            step_op(op, &mut fg_arch, &mut uarch, &mut scratch)?;
            used += scratch.cycles;
            done += 1;
        }
        wall += used;
        if done >= total_ops {
            break;
        }
        // Switch out, idle for a slice, switch back in.
        if fence.variant != FenceVariant::None {
            wall += run_fence(&mut fg_arch, &mut uarch)?;
            switches += 1;
        }
        wall += uarch.residual.begin_kernel() + slice_cycles;
        if fence.variant != FenceVariant::None {
            wall += run_fence(&mut idle_arch, &mut uarch)?;
            switches += 1;
        }
    }
    Ok((wall, switches))
}

/// Run the workload twice — without and with the mitigation — and report
/// direct, indirect, and total slowdown. `total_slices` sizes the workload:
/// enough loop iterations to fill that many warm foreground slices.
pub fn run_overhead(
    kind: WorkloadKind,
    slice_cycles: u64,
    cfg: &FenceConfig,
    total_slices: u64,
    ucfg: &UarchConfig,
    seed: u64,
) -> Result<OverheadReport> {
    if cfg.variant != FenceVariant::None && slice_cycles < cfg.pad_target.saturating_mul(10) {
        return Err(SimError::Config(format!(
            "slice_cycles {slice_cycles} must be at least 10x pad_target {}",
            cfg.pad_target
        )));
    }
    if total_slices == 0 {
        return Err(SimError::Config("total_slices must be positive".into()));
    }
    validate_pad(cfg, ucfg)?;

    let mut workload = make_workload(kind, ucfg, seed)?;
    // Calibrate the warm cost of one loop body, then size the run.
    let warm_lap = {
        let mut arch = ArchState::new();
        let mut uarch = reset_state(ucfg)?;
        crate::kernel::execute(&workload.body, &mut arch, &mut uarch)?;
        let warm = crate::kernel::execute(&workload.body, &mut arch, &mut uarch)?;
        warm.cycles.max(1)
    };
    workload.iterations = (total_slices * slice_cycles / warm_lap).max(1);

    let (baseline_cycles, _) = simulate(&workload, slice_cycles, &FenceConfig::disabled(), ucfg)?;
    let (mitigated_cycles, switches) = simulate(&workload, slice_cycles, cfg, ucfg)?;

    let direct_cost_cycles = if cfg.variant == FenceVariant::None {
        0
    } else {
        switches * cfg.pad_target
    };
    let indirect_cost_cycles =
        mitigated_cycles as i64 - baseline_cycles as i64 - direct_cost_cycles as i64;
    let slowdown_percent =
        100.0 * (mitigated_cycles as f64 - baseline_cycles as f64) / baseline_cycles as f64;

    Ok(OverheadReport {
        workload: workload.name,
        baseline_cycles,
        mitigated_cycles,
        direct_cost_cycles,
        indirect_cost_cycles,
        slowdown_percent,
        switches,
        slice_cycles,
        pad_target: cfg.pad_target,
    })
}
