//! Python bindings: the pipeline's main operations (phantom generation,
//! ingest, train/resume, evaluate, sort, Grad-CAM) plus small helpers.
//! Structured results cross the boundary as JSON strings so the Python side
//! can `json.loads` them without a schema dependency.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use seqsort::cli;
use seqsort::config::GlobalConfig;
use seqsort::error::Error;
use seqsort::evaluation::Head;
use seqsort::labeling::{LabelMap, LabelOutcome, PlaneClass, SequenceClass};
use seqsort::phantom::{self, PhantomSpec, WriteFormat};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidClass(..) | Error::VersionMismatch(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn config_from(config_toml: Option<&str>, seed: Option<u64>) -> PyResult<GlobalConfig> {
    let mut cfg = match config_toml {
        Some(text) => GlobalConfig::from_toml(text).map_err(to_py_err)?,
        None => GlobalConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializable result")
}

/// The built-in configuration as a TOML document (edit and pass back).
#[pyfunction]
fn default_config_toml() -> String {
    GlobalConfig::default().to_toml()
}

/// The class taxonomy: (sequence names, plane names).
#[pyfunction]
fn class_names() -> (Vec<String>, Vec<String>) {
    (
        SequenceClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        PlaneClass::ALL.iter().map(|c| c.name().to_string()).collect(),
    )
}

/// Apply the built-in label rules to a series description; returns
/// (sequence, plane) or None.
#[pyfunction]
#[pyo3(signature = (description, fallback=None))]
fn assign_label(description: &str, fallback: Option<&str>) -> Option<(String, String)> {
    match LabelMap::default_rules().assign(description, fallback) {
        LabelOutcome::Labeled(l) => {
            Some((l.sequence.name().to_string(), l.plane.name().to_string()))
        }
        LabelOutcome::Unlabeled => None,
    }
}

/// Generate the synthetic labeled dataset; returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, studies_per_class=10, slices_min=8, slices_max=8,
                    image_size=96, seed=0, format="dicom"))]
#[allow(clippy::too_many_arguments)]
fn generate_phantom(
    out_dir: PathBuf,
    studies_per_class: usize,
    slices_min: usize,
    slices_max: usize,
    image_size: usize,
    seed: u64,
    format: &str,
) -> PyResult<String> {
    let write_format = match format {
        "dicom" => WriteFormat::DicomFixture,
        "pgm" => WriteFormat::PgmTriplet,
        other => {
            return Err(PyValueError::new_err(format!(
                "format must be \"dicom\" or \"pgm\", got {other:?}"
            )))
        }
    };
    let spec = PhantomSpec {
        studies_per_class,
        slices_per_series: (slices_min, slices_max),
        image_size: (image_size, image_size),
        seed,
        write_format,
        ..PhantomSpec::default()
    };
    let manifest = phantom::generate(&spec, &out_dir).map_err(to_py_err)?;
    Ok(json(&manifest))
}

/// Scan a DICOM tree, group it into series and write a manifest JSON file;
/// returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (input_dir, out_path, config_toml=None, seed=None))]
fn ingest(
    input_dir: PathBuf,
    out_path: PathBuf,
    config_toml: Option<&str>,
    seed: Option<u64>,
) -> PyResult<String> {
    let cfg = config_from(config_toml, seed)?;
    let manifest = cli::cmd_ingest(&input_dir, &cfg, &out_path).map_err(to_py_err)?;
    Ok(json(&manifest))
}

/// Partition a labeled tree and train; returns JSON with the best epoch,
/// the checkpoint directory, and the per-epoch log.
#[pyfunction]
#[pyo3(signature = (input_dir, config_toml=None, seed=None))]
fn train(input_dir: PathBuf, config_toml: Option<&str>, seed: Option<u64>) -> PyResult<String> {
    let cfg = config_from(config_toml, seed)?;
    let outcome = cli::cmd_train(&input_dir, &cfg).map_err(to_py_err)?;
    Ok(json(&serde_json::json!({
        "best_epoch": outcome.best.epoch,
        "checkpoint_dir": cfg.train.checkpoint_dir,
        "log": outcome.log,
    })))
}

/// Continue training from the last checkpoint; same result shape as train.
#[pyfunction]
#[pyo3(signature = (input_dir, config_toml=None, seed=None))]
fn resume(input_dir: PathBuf, config_toml: Option<&str>, seed: Option<u64>) -> PyResult<String> {
    let cfg = config_from(config_toml, seed)?;
    let outcome = cli::cmd_resume(&input_dir, &cfg).map_err(to_py_err)?;
    Ok(json(&serde_json::json!({
        "best_epoch": outcome.best.epoch,
        "checkpoint_dir": cfg.train.checkpoint_dir,
        "log": outcome.log,
    })))
}

/// Evaluate a checkpoint against an ingest manifest; writes report.json and
/// confusion CSVs into out_dir and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (checkpoint, manifest, out_dir, config_toml=None))]
fn evaluate(
    checkpoint: PathBuf,
    manifest: PathBuf,
    out_dir: PathBuf,
    config_toml: Option<&str>,
) -> PyResult<String> {
    let cfg = config_from(config_toml, None)?;
    let report = cli::cmd_eval(&checkpoint, &manifest, &cfg, &out_dir).map_err(to_py_err)?;
    Ok(json(&report))
}

/// Classify a tree and file every series into labeled folders under
/// out_dir; returns the routing report as JSON.
#[pyfunction]
#[pyo3(signature = (input_dir, checkpoint, out_dir, config_toml=None))]
fn sort(
    input_dir: PathBuf,
    checkpoint: PathBuf,
    out_dir: PathBuf,
    config_toml: Option<&str>,
) -> PyResult<String> {
    let cfg = config_from(config_toml, None)?;
    let report = cli::cmd_sort(&input_dir, &checkpoint, &cfg, &out_dir).map_err(to_py_err)?;
    Ok(json(&report))
}

/// Render a Grad-CAM heatmap (PGM pair) for one series; returns the file
/// stem written into out_dir.
#[pyfunction]
#[pyo3(signature = (checkpoint, input_dir, series_key, head, class_name, out_dir,
                    config_toml=None))]
#[allow(clippy::too_many_arguments)]
fn gradcam(
    checkpoint: PathBuf,
    input_dir: PathBuf,
    series_key: &str,
    head: &str,
    class_name: &str,
    out_dir: PathBuf,
    config_toml: Option<&str>,
) -> PyResult<String> {
    let cfg = config_from(config_toml, None)?;
    let head = match head {
        "sequence" | "seq" => Head::Sequence,
        "plane" => Head::Plane,
        other => {
            return Err(PyValueError::new_err(format!(
                "head must be \"sequence\" or \"plane\", got {other:?}"
            )))
        }
    };
    cli::cmd_gradcam(
        &checkpoint,
        &input_dir,
        series_key,
        head,
        class_name,
        &cfg,
        &out_dir,
    )
    .map_err(to_py_err)
}

/// Derive a stage seed from a global seed (the scheme every stochastic
/// pipeline stage uses).
#[pyfunction]
fn derive_seed(global: u64, tag: &str, parts: Vec<u64>) -> u64 {
    seqsort::derive_seed(global, tag, &parts)
}

#[pymodule]
fn seqsort_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config_toml, m)?)?;
    m.add_function(wrap_pyfunction!(class_names, m)?)?;
    m.add_function(wrap_pyfunction!(assign_label, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(resume, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sort, m)?)?;
    m.add_function(wrap_pyfunction!(gradcam, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
