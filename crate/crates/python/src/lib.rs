//! Python extension module exposing the bench, leakage, fence, and overhead
//! operations. Build with `cargo build -p tcsim-python --release`; the
//! resulting cdylib imports as module `tcsim` (see python/smoke_test.py).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tcsim_core::chanbench::{run_bench, BenchConfig};
use tcsim_core::error::SimError;
use tcsim_core::fence::{
    fence_t_s, naive_hw_fence, worst_case_raw_cycles, FenceConfig, FenceVariant,
    DEFAULT_PAD_TARGET,
};
use tcsim_core::kernel::Component;
use tcsim_core::leakage::detect;
use tcsim_core::overhead::{run_overhead, WorkloadKind};
use tcsim_core::uarch::{reset_state, ArchState, UarchConfig};

fn to_py(err: SimError) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// Joint histogram of (secret, spy time) pairs.
#[pyclass(name = "ChannelMatrix", frozen)]
struct PyChannelMatrix {
    inner: tcsim_core::ChannelMatrix,
}

#[pymethods]
impl PyChannelMatrix {
    #[getter]
    fn secret_count(&self) -> usize {
        self.inner.secret_count
    }

    #[getter]
    fn total_samples(&self) -> u64 {
        self.inner.total_samples
    }

    /// Sorted distinct observed times (or bucket floors).
    fn time_bins(&self) -> Vec<u64> {
        self.inner.time_bins.clone()
    }

    /// counts[secret][bin] occurrence counts.
    fn counts(&self) -> Vec<Vec<u64>> {
        self.inner.counts.clone()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.inner.to_csv())
            .map_err(|e| PyValueError::new_err(format!("cannot write {path}: {e}")))
    }

    /// Binary PGM heatmap bytes (P5, secrets wide, time bins tall).
    fn to_pgm(&self) -> Vec<u8> {
        self.inner.to_pgm()
    }

    fn bucketed(&self, width: u64) -> PyResult<PyChannelMatrix> {
        Ok(PyChannelMatrix {
            inner: self.inner.bucketed(width).map_err(to_py)?,
        })
    }

    fn mutual_information(&self) -> PyResult<f64> {
        tcsim_core::mutual_information(&self.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "ChannelMatrix(secrets={}, time_bins={}, samples={})",
            self.inner.secret_count,
            self.inner.time_bins.len(),
            self.inner.total_samples
        )
    }
}

/// Leak verdict: mutual information vs the zero-leakage bound, in millibits.
#[pyclass(name = "LeakageReport", frozen)]
struct PyLeakageReport {
    #[pyo3(get)]
    mi_millibits: f64,
    #[pyo3(get)]
    m0_millibits: f64,
    #[pyo3(get)]
    trials: usize,
    #[pyo3(get)]
    confidence: f64,
    #[pyo3(get)]
    leaky: bool,
    #[pyo3(get)]
    sample_count: u64,
}

#[pymethods]
impl PyLeakageReport {
    fn __repr__(&self) -> String {
        format!(
            "LeakageReport(mi={:.3} mb, m0={:.3} mb, leaky={})",
            self.mi_millibits, self.m0_millibits, self.leaky
        )
    }
}

#[pyclass(name = "OverheadReport", frozen)]
struct PyOverheadReport {
    #[pyo3(get)]
    workload: String,
    #[pyo3(get)]
    baseline_cycles: u64,
    #[pyo3(get)]
    mitigated_cycles: u64,
    #[pyo3(get)]
    direct_cost_cycles: u64,
    #[pyo3(get)]
    indirect_cost_cycles: i64,
    #[pyo3(get)]
    slowdown_percent: f64,
    #[pyo3(get)]
    switches: u64,
    #[pyo3(get)]
    slice_cycles: u64,
    #[pyo3(get)]
    pad_target: u64,
}

#[pymethods]
impl PyOverheadReport {
    fn __repr__(&self) -> String {
        format!(
            "OverheadReport(workload={}, slowdown={:.3}%, direct={}, indirect={})",
            self.workload, self.slowdown_percent, self.direct_cost_cycles, self.indirect_cost_cycles
        )
    }
}

/// Outcome of one fence invocation on a state with renamed registers.
#[pyclass(name = "FenceOutcome", frozen)]
struct PyFenceOutcome {
    #[pyo3(get)]
    raw_cycles: u64,
    #[pyo3(get)]
    padded_cycles: u64,
    #[pyo3(get)]
    corrupted: bool,
}

#[pymethods]
impl PyFenceOutcome {
    fn __repr__(&self) -> String {
        format!(
            "FenceOutcome(raw={}, padded={}, corrupted={})",
            self.raw_cycles, self.padded_cycles, self.corrupted
        )
    }
}

/// Run a trojan/spy channel bench at the default desk-scale geometry.
#[pyfunction]
#[pyo3(signature = (component, mitigation="none", secrets=None, samples=1000, seed=1, noise=0, pad=DEFAULT_PAD_TARGET))]
fn run_channel(
    component: &str,
    mitigation: &str,
    secrets: Option<usize>,
    samples: usize,
    seed: u64,
    noise: u64,
    pad: u64,
) -> PyResult<PyChannelMatrix> {
    let component: Component = component.parse().map_err(to_py)?;
    let variant: FenceVariant = mitigation.parse().map_err(to_py)?;
    let ucfg = UarchConfig::default();
    let mut cfg = BenchConfig::new(component, FenceConfig::for_variant(variant, pad), &ucfg);
    if let Some(secrets) = secrets {
        cfg.secret_count = secrets;
    }
    cfg.samples_per_secret = samples;
    cfg.seed = seed;
    cfg.noise_cycles = noise;
    Ok(PyChannelMatrix {
        inner: run_bench(&cfg, &ucfg).map_err(to_py)?,
    })
}

/// Mutual information, zero-leakage bound, and the leak verdict.
#[pyfunction]
#[pyo3(signature = (matrix, trials=100, confidence=0.95, seed=1))]
fn analyze(
    matrix: &PyChannelMatrix,
    trials: usize,
    confidence: f64,
    seed: u64,
) -> PyResult<PyLeakageReport> {
    let report = detect(&matrix.inner, trials, confidence, seed).map_err(to_py)?;
    Ok(PyLeakageReport {
        mi_millibits: report.mi_millibits,
        m0_millibits: report.m0_millibits,
        trials: report.trials,
        confidence: report.confidence,
        leaky: report.leaky,
        sample_count: report.sample_count,
    })
}

/// Parse a channel matrix from its CSV serialisation.
#[pyfunction]
fn parse_csv(text: &str) -> PyResult<PyChannelMatrix> {
    Ok(PyChannelMatrix {
        inner: tcsim_core::ChannelMatrix::from_csv(text).map_err(to_py)?,
    })
}

#[pyfunction]
fn load_csv(path: &str) -> PyResult<PyChannelMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PyValueError::new_err(format!("cannot read {path}: {e}")))?;
    parse_csv(&text)
}

/// Slowdown of applying the fence at every context switch.
#[pyfunction]
#[pyo3(signature = (workload="mixed", slice_cycles=1_000_000, total_slices=4, mitigation="fence.t.s", pad=DEFAULT_PAD_TARGET, seed=1))]
fn overhead(
    workload: &str,
    slice_cycles: u64,
    total_slices: u64,
    mitigation: &str,
    pad: u64,
    seed: u64,
) -> PyResult<PyOverheadReport> {
    let kind: WorkloadKind = workload.parse().map_err(to_py)?;
    let variant: FenceVariant = mitigation.parse().map_err(to_py)?;
    let report = run_overhead(
        kind,
        slice_cycles,
        &FenceConfig::for_variant(variant, pad),
        total_slices,
        &UarchConfig::default(),
        seed,
    )
    .map_err(to_py)?;
    Ok(PyOverheadReport {
        workload: report.workload,
        baseline_cycles: report.baseline_cycles,
        mitigated_cycles: report.mitigated_cycles,
        direct_cost_cycles: report.direct_cost_cycles,
        indirect_cost_cycles: report.indirect_cost_cycles,
        slowdown_percent: report.slowdown_percent,
        switches: report.switches,
        slice_cycles: report.slice_cycles,
        pad_target: report.pad_target,
    })
}

/// Apply a fence to a state holding `renamed_regs` live renamed registers;
/// shows the mixed-state dichotomy from Python.
#[pyfunction]
#[pyo3(signature = (mitigation="fence.t.s", renamed_regs=4, pad=DEFAULT_PAD_TARGET))]
fn fence_demo(mitigation: &str, renamed_regs: usize, pad: u64) -> PyResult<PyFenceOutcome> {
    let variant: FenceVariant = mitigation.parse().map_err(to_py)?;
    let ucfg = UarchConfig::default();
    let mut arch = ArchState::new();
    let mut uarch = reset_state(&ucfg).map_err(to_py)?;
    for i in 0..renamed_regs.min(31) {
        let logical = if i >= arch.sp_index { i + 1 } else { i };
        arch.regs[logical] = 0x1000 + logical as u64;
        uarch.rat.allocate(logical).map_err(to_py)?;
    }
    let cfg = FenceConfig::for_variant(variant, pad);
    let result = match variant {
        FenceVariant::FenceTS => fence_t_s(&mut arch, &mut uarch, &cfg).map_err(to_py)?,
        FenceVariant::NaiveHw => naive_hw_fence(&mut arch, &mut uarch, &cfg).map_err(to_py)?,
        FenceVariant::None => {
            return Err(PyValueError::new_err(
                "fence_demo needs fence.t.s or naive",
            ))
        }
    };
    Ok(PyFenceOutcome {
        raw_cycles: result.raw_cycles,
        padded_cycles: result.padded_cycles,
        corrupted: result.corrupted,
    })
}

/// Analytic worst-case fence time at the default geometry.
#[pyfunction]
fn worst_case_cycles() -> u64 {
    worst_case_raw_cycles(&UarchConfig::default())
}

#[pymodule]
fn tcsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChannelMatrix>()?;
    m.add_class::<PyLeakageReport>()?;
    m.add_class::<PyOverheadReport>()?;
    m.add_class::<PyFenceOutcome>()?;
    m.add_function(wrap_pyfunction!(run_channel, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(parse_csv, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(overhead, m)?)?;
    m.add_function(wrap_pyfunction!(fence_demo, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_cycles, m)?)?;
    m.add("DEFAULT_PAD_TARGET", DEFAULT_PAD_TARGET)?;
    Ok(())
}
