//! A desk-scale laboratory for on-core microarchitectural timing channels.
//!
//! The crate models the clearable state of an out-of-order core (L1 caches,
//! branch history table, register alias table, residual flip-flops), mounts
//! prime-and-probe trojan/spy benches against it, quantifies leakage as
//! mutual information against a zero-leakage resampling bound, and
//! implements the software-supported temporal fence that closes every
//! modeled channel at a fixed, padded cost — plus the naive monolithic
//! clear that shows why mixed state needs the software support.

pub mod chanbench;
pub mod config;
pub mod error;
pub mod fence;
pub mod kernel;
pub mod leakage;
pub mod overhead;
pub mod uarch;

pub use chanbench::{run_bench, run_trial, BenchConfig, ChannelMatrix, Sample};
pub use config::{SimConfig, TOOL_MAJOR_VERSION};
pub use error::{Result, SimError};
pub use fence::{
    fence_t_s, naive_hw_fence, pad_time, worst_case_raw_cycles, FenceConfig, FenceResult,
    FenceStep, FenceVariant,
};
pub use kernel::{execute, make_prime_kernel, make_probe_kernel, Component, Kernel, KernelOp, RunResult};
pub use leakage::{detect, mutual_information, zero_leakage_bound, LeakageReport};
pub use overhead::{make_workload, run_overhead, OverheadReport, Workload, WorkloadKind};
pub use uarch::{reset_state, ArchState, MicroarchState, UarchConfig};
