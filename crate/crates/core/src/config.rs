//! JSON configuration: geometry, latency table, fence, bench, and leakage
//! settings in one versioned document. Unknown fields are rejected, the
//! version must match the tool's major version, and the pad budget is
//! checked against the analytic worst-case fence time.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fence::{validate_pad, FenceConfig, FenceVariant, DEFAULT_PAD_TARGET};
use crate::uarch::{BhtParams, CacheGeometry, RatParams, ResidualParams, UarchConfig};

pub const TOOL_MAJOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FenceParams {
    pub pad_target: u64,
}

impl Default for FenceParams {
    fn default() -> Self {
        FenceParams {
            pad_target: DEFAULT_PAD_TARGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchParams {
    /// `None` picks the component default: capacity + 1, capped at 129 for
    /// the predictor.
    pub secret_count: Option<usize>,
    pub samples_per_secret: usize,
    pub noise_cycles: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            secret_count: None,
            samples_per_secret: 1000,
            noise_cycles: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakageParams {
    pub trials: usize,
    pub confidence: f64,
}

impl Default for LeakageParams {
    fn default() -> Self {
        LeakageParams {
            trials: 100,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverheadParams {
    pub slice_cycles: u64,
    pub total_slices: u64,
}

impl Default for OverheadParams {
    fn default() -> Self {
        OverheadParams {
            slice_cycles: 10_000_000,
            total_slices: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Must equal the tool's major version.
    pub version: u32,
    #[serde(default)]
    pub l1d: CacheGeometry,
    #[serde(default)]
    pub l1i: CacheGeometry,
    #[serde(default)]
    pub bht: BhtParams,
    #[serde(default)]
    pub rat: RatParams,
    #[serde(default)]
    pub residual: ResidualParams,
    #[serde(default)]
    pub fence: FenceParams,
    #[serde(default)]
    pub bench: BenchParams,
    #[serde(default)]
    pub leakage: LeakageParams,
    #[serde(default)]
    pub overhead: OverheadParams,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            version: TOOL_MAJOR_VERSION,
            l1d: CacheGeometry::default(),
            l1i: CacheGeometry::default(),
            bht: BhtParams::default(),
            rat: RatParams::default(),
            residual: ResidualParams::default(),
            fence: FenceParams::default(),
            bench: BenchParams::default(),
            leakage: LeakageParams::default(),
            overhead: OverheadParams::default(),
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)
            .map_err(|e| SimError::Config(format!("bad config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn uarch(&self) -> UarchConfig {
        UarchConfig {
            l1d: self.l1d,
            l1i: self.l1i,
            bht: self.bht,
            rat: self.rat,
            residual: self.residual,
        }
    }

    pub fn fence_for(&self, variant: FenceVariant) -> FenceConfig {
        FenceConfig::for_variant(variant, self.fence.pad_target)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != TOOL_MAJOR_VERSION {
            return Err(SimError::Config(format!(
                "config version {} does not match tool major version {TOOL_MAJOR_VERSION}",
                self.version
            )));
        }
        let uarch = self.uarch();
        uarch.validate()?;
        if self.bench.samples_per_secret < 1 {
            return Err(SimError::Config(
                "samples_per_secret must be at least 1".into(),
            ));
        }
        if self.leakage.trials < 1 {
            return Err(SimError::Config("leakage trials must be at least 1".into()));
        }
        if !(self.leakage.confidence > 0.0 && self.leakage.confidence <= 1.0) {
            return Err(SimError::Config(format!(
                "confidence must be in (0, 1], got {}",
                self.leakage.confidence
            )));
        }
        // The pad budget must absorb the analytic worst case.
        validate_pad(
            &FenceConfig::fence_t_s(self.fence.pad_target),
            &uarch,
        )
    }
}
