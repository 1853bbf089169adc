//! Leakage quantification for channel matrices.
//!
//! `mutual_information` is the plug-in Shannon estimator over the empirical
//! joint distribution, reported in millibits. A nonzero estimate can be pure
//! sampling noise, so `zero_leakage_bound` synthesises channel-less matrices
//! with the same output marginal and per-secret sample counts, and returns a
//! quantile of their estimates. A channel exists when the measured value
//! clears that bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chanbench::ChannelMatrix;
use crate::error::{Result, SimError};

/// Verdict for one channel matrix. `leaky` holds exactly when
/// `mi_millibits > m0_millibits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeakageReport {
    pub mi_millibits: f64,
    pub m0_millibits: f64,
    pub trials: usize,
    pub confidence: f64,
    pub leaky: bool,
    pub sample_count: u64,
}

/// Plug-in mutual information of the empirical joint distribution, in
/// millibits. Zero-count cells contribute nothing.
pub fn mutual_information(matrix: &ChannelMatrix) -> Result<f64> {
    if matrix.total_samples == 0 {
        return Err(SimError::Contract(
            "mutual information of an empty matrix".into(),
        ));
    }
    let total = matrix.total_samples as f64;
    let row_sums = matrix.row_sums();
    let mut col_sums = vec![0u64; matrix.time_bins.len()];
    for row in &matrix.counts {
        for (b, &c) in row.iter().enumerate() {
            col_sums[b] += c;
        }
    }
    let mut bits = 0.0f64;
    for (s, row) in matrix.counts.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let joint = c as f64 / total;
            let marginal = (row_sums[s] as f64 / total) * (col_sums[b] as f64 / total);
            bits += joint * (joint / marginal).log2();
        }
    }
    Ok(bits * 1000.0)
}

/// The mutual information explainable by estimation noise alone: resample
/// channel-less matrices from the empirical time marginal (same per-secret
/// sample counts), estimate each, and take the `confidence` quantile.
/// Deterministic given the seed; trial `t` draws from its own RNG stream.
pub fn zero_leakage_bound(
    matrix: &ChannelMatrix,
    trials: usize,
    confidence: f64,
    seed: u64,
) -> Result<f64> {
    if trials < 1 {
        return Err(SimError::Config("need at least one resample trial".into()));
    }
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(SimError::Config(format!(
            "confidence must be in (0, 1], got {confidence}"
        )));
    }
    if matrix.total_samples == 0 {
        return Err(SimError::Contract("resampling an empty matrix".into()));
    }

    let mut estimates = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        let synthetic = resample_channel_less(matrix, &mut rng);
        estimates.push(mutual_information(&synthetic)?);
    }
    estimates.sort_by(|a, b| a.partial_cmp(b).expect("mi is finite"));
    let rank = ((confidence * trials as f64).ceil() as usize).clamp(1, trials);
    Ok(estimates[rank - 1])
}

/// Draw one channel-less matrix: same per-secret sample counts, every
/// observation drawn independently from the input's time marginal.
fn resample_channel_less(matrix: &ChannelMatrix, rng: &mut ChaCha8Rng) -> ChannelMatrix {
    let bin_count = matrix.time_bins.len();
    let mut cumulative = Vec::with_capacity(bin_count);
    let mut running = 0u64;
    for b in 0..bin_count {
        running += matrix.counts.iter().map(|row| row[b]).sum::<u64>();
        cumulative.push(running);
    }
    let total = running;
    let mut counts = vec![vec![0u64; bin_count]; matrix.secret_count];
    for (secret, &n) in matrix.row_sums().iter().enumerate() {
        for _ in 0..n {
            let pick = rng.random_range(0..total);
            let bin = cumulative.partition_point(|&c| c <= pick);
            counts[secret][bin] += 1;
        }
    }
    ChannelMatrix {
        secret_count: matrix.secret_count,
        time_bins: matrix.time_bins.clone(),
        counts,
        total_samples: total,
    }
}

/// Estimate, bound, and compare.
pub fn detect(
    matrix: &ChannelMatrix,
    trials: usize,
    confidence: f64,
    seed: u64,
) -> Result<LeakageReport> {
    let mi = mutual_information(matrix)?;
    let m0 = zero_leakage_bound(matrix, trials, confidence, seed)?;
    Ok(LeakageReport {
        mi_millibits: mi,
        m0_millibits: m0,
        trials,
        confidence,
        leaky: mi > m0,
        sample_count: matrix.total_samples,
    })
}
