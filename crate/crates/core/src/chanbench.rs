//! Trojan/spy experiment harness.
//!
//! One trial: the spy primes the component (its probe kernel doubles as the
//! prime), the trojan encodes a secret by touching that many units, a context
//! switch applies the selected mitigation, and the spy re-runs its probe,
//! timing it. Both domains share one [`MicroarchState`] — that sharing is the
//! channel. Sweeping all secrets yields a [`ChannelMatrix`].

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};
use crate::fence::{fence_t_s, naive_hw_fence, validate_pad, FenceConfig, FenceVariant};
use crate::kernel::{execute, make_prime_kernel, make_probe_kernel, Component, Kernel};
use crate::uarch::{reset_state, ArchState, MicroarchState, UarchConfig};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub component: Component,
    /// Number of distinct secrets; secret s makes the trojan touch s units.
    pub secret_count: usize,
    pub samples_per_secret: usize,
    pub mitigation: FenceConfig,
    pub seed: u64,
    /// Uniform jitter amplitude added to each observation; 0 keeps the
    /// engine fully deterministic.
    pub noise_cycles: u64,
    /// Optional fixed-width time bucketing; `None` keeps exact cycle bins.
    pub bucket_width: Option<u64>,
}

impl BenchConfig {
    pub fn new(component: Component, mitigation: FenceConfig, ucfg: &UarchConfig) -> Self {
        BenchConfig {
            component,
            secret_count: component.default_secret_count(ucfg),
            samples_per_secret: 1000,
            mitigation,
            seed: 1,
            noise_cycles: 0,
            bucket_width: None,
        }
    }

    pub fn validate(&self, ucfg: &UarchConfig) -> Result<()> {
        ucfg.validate()?;
        if self.secret_count < 2 {
            return Err(SimError::Config("secret_count must be at least 2".into()));
        }
        if self.samples_per_secret < 1 {
            return Err(SimError::Config(
                "samples_per_secret must be at least 1".into(),
            ));
        }
        let capacity = self.component.capacity(ucfg);
        if self.secret_count - 1 > capacity {
            return Err(SimError::Config(format!(
                "secret_count {} exceeds {} capacity {capacity} + 1",
                self.secret_count,
                self.component.name()
            )));
        }
        if let Some(w) = self.bucket_width {
            if w == 0 {
                return Err(SimError::Config("bucket width must be positive".into()));
            }
        }
        validate_pad(&self.mitigation, ucfg)
    }
}

/// One observation: the secret the trojan encoded and the spy's time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub secret: usize,
    pub time: u64,
}

/// Joint histogram of (secret, observed time). Horizontal structure is the
/// leak.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMatrix {
    pub secret_count: usize,
    /// Sorted distinct observed times (or bucket floors).
    pub time_bins: Vec<u64>,
    /// `counts[secret][bin]` occurrences.
    pub counts: Vec<Vec<u64>>,
    pub total_samples: u64,
}

impl ChannelMatrix {
    pub fn from_samples(secret_count: usize, samples: &[Sample]) -> Result<Self> {
        if secret_count == 0 || samples.is_empty() {
            return Err(SimError::Contract(
                "channel matrix needs at least one sample and one secret".into(),
            ));
        }
        let mut bins: Vec<u64> = samples.iter().map(|s| s.time).collect();
        bins.sort_unstable();
        bins.dedup();
        let mut counts = vec![vec![0u64; bins.len()]; secret_count];
        for sample in samples {
            if sample.secret >= secret_count {
                return Err(SimError::Contract(format!(
                    "sample secret {} out of range {secret_count}",
                    sample.secret
                )));
            }
            let bin = bins.binary_search(&sample.time).expect("bin exists");
            counts[sample.secret][bin] += 1;
        }
        Ok(ChannelMatrix {
            secret_count,
            time_bins: bins,
            counts,
            total_samples: samples.len() as u64,
        })
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn nonzero_columns(&self) -> usize {
        (0..self.time_bins.len())
            .filter(|&b| self.counts.iter().any(|row| row[b] > 0))
            .count()
    }

    /// Re-bin observations into fixed-width buckets keyed by bucket floor.
    pub fn bucketed(&self, width: u64) -> Result<ChannelMatrix> {
        if width == 0 {
            return Err(SimError::Config("bucket width must be positive".into()));
        }
        let mut bins: Vec<u64> = self.time_bins.iter().map(|t| (t / width) * width).collect();
        bins.sort_unstable();
        bins.dedup();
        let mut counts = vec![vec![0u64; bins.len()]; self.secret_count];
        for (s, row) in self.counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                if c > 0 {
                    let floor = (self.time_bins[b] / width) * width;
                    let nb = bins.binary_search(&floor).expect("bin exists");
                    counts[s][nb] += c;
                }
            }
        }
        Ok(ChannelMatrix {
            secret_count: self.secret_count,
            time_bins: bins,
            counts,
            total_samples: self.total_samples,
        })
    }

    /// Serialise as `secret,time_cycles,count` rows, sorted, nonzero cells
    /// only, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("secret,time_cycles,count\n");
        for (s, row) in self.counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                if c > 0 {
                    out.push_str(&format!("{s},{},{c}\n", self.time_bins[b]));
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "secret,time_cycles,count")) => {}
            Some((_, other)) => {
                return Err(SimError::Csv {
                    line: 1,
                    msg: format!("expected header secret,time_cycles,count, got {other:?}"),
                })
            }
            None => {
                return Err(SimError::Csv {
                    line: 1,
                    msg: "empty file".into(),
                })
            }
        }
        let mut cells: Vec<(usize, u64, u64)> = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let parse = |field: Option<&str>, what: &str| -> Result<u64> {
                field
                    .ok_or_else(|| SimError::Csv {
                        line: lineno,
                        msg: format!("missing {what}"),
                    })?
                    .parse::<u64>()
                    .map_err(|e| SimError::Csv {
                        line: lineno,
                        msg: format!("bad {what}: {e}"),
                    })
            };
            let secret = parse(fields.next(), "secret")? as usize;
            let time = parse(fields.next(), "time_cycles")?;
            let count = parse(fields.next(), "count")?;
            if fields.next().is_some() {
                return Err(SimError::Csv {
                    line: lineno,
                    msg: "too many fields".into(),
                });
            }
            cells.push((secret, time, count));
        }
        if cells.is_empty() {
            return Err(SimError::Csv {
                line: 2,
                msg: "no data rows".into(),
            });
        }
        let secret_count = cells.iter().map(|c| c.0).max().unwrap() + 1;
        let mut bins: Vec<u64> = cells.iter().map(|c| c.1).collect();
        bins.sort_unstable();
        bins.dedup();
        let mut counts = vec![vec![0u64; bins.len()]; secret_count];
        let mut total = 0u64;
        for (secret, time, count) in cells {
            let bin = bins.binary_search(&time).expect("bin exists");
            counts[secret][bin] += count;
            total += count;
        }
        Ok(ChannelMatrix {
            secret_count,
            time_bins: bins,
            counts,
            total_samples: total,
        })
    }

    /// Binary PGM (P5) heatmap: one column per secret, one row per time bin
    /// with the smallest time at row 0, intensity scaled to the matrix
    /// maximum.
    pub fn to_pgm(&self) -> Vec<u8> {
        let width = self.secret_count;
        let height = self.time_bins.len();
        let max = self
            .counts
            .iter()
            .flat_map(|row| row.iter())
            .copied()
            .max()
            .unwrap_or(0)
            .max(1);
        let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
        for bin in 0..height {
            for secret in 0..width {
                out.push((self.counts[secret][bin] * 255 / max) as u8);
            }
        }
        out
    }
}

/// One prime/encode/switch/probe round on a shared microarchitecture.
/// Architectural contexts are fresh per trial; only `uarch` carries history.
pub fn run_trial(
    secret: usize,
    cfg: &BenchConfig,
    ucfg: &UarchConfig,
    uarch: &mut MicroarchState,
    probe: &Kernel,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    if secret >= cfg.secret_count {
        return Err(SimError::Contract(format!(
            "secret {secret} out of range {}",
            cfg.secret_count
        )));
    }
    let mut spy_arch = ArchState::new();
    let mut trojan_arch = ArchState::new();

    execute(probe, &mut spy_arch, uarch)?;
    let trojan = make_prime_kernel(cfg.component, secret, ucfg)?;
    execute(&trojan, &mut trojan_arch, uarch)?;
    match cfg.mitigation.variant {
        FenceVariant::FenceTS => {
            fence_t_s(&mut trojan_arch, uarch, &cfg.mitigation)?;
        }
        FenceVariant::NaiveHw => {
            naive_hw_fence(&mut trojan_arch, uarch, &cfg.mitigation)?;
        }
        FenceVariant::None => {}
    }
    let observation = execute(probe, &mut spy_arch, uarch)?;
    let mut time = observation.cycles;
    if cfg.noise_cycles > 0 {
        time += rng.random_range(0..=cfg.noise_cycles);
    }
    Ok(Sample { secret, time })
}

/// Sweep every secret `samples_per_secret` times in a seeded random order
/// and assemble the channel matrix. Deterministic given the seed.
pub fn run_bench(cfg: &BenchConfig, ucfg: &UarchConfig) -> Result<ChannelMatrix> {
    cfg.validate(ucfg)?;
    let probe = make_probe_kernel(cfg.component, ucfg)?;
    let mut uarch = reset_state(ucfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut schedule: Vec<usize> = (0..cfg.secret_count)
        .flat_map(|s| std::iter::repeat_n(s, cfg.samples_per_secret))
        .collect();
    schedule.shuffle(&mut rng);

    let mut samples = Vec::with_capacity(schedule.len());
    for secret in schedule {
        samples.push(run_trial(secret, cfg, ucfg, &mut uarch, &probe, &mut rng)?);
    }
    let matrix = ChannelMatrix::from_samples(cfg.secret_count, &samples)?;
    match cfg.bucket_width {
        Some(w) => matrix.bucketed(w),
        None => Ok(matrix),
    }
}
