//! Command implementations behind the `seqsort` binary: scan a directory
//! tree, train/resume/evaluate a model, sort series into labeled folders,
//! and render Grad-CAM heatmaps. The binary is a thin argument-parsing
//! wrapper over these functions so tests and bindings can call them too.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::config::{GlobalConfig, TAXONOMY_VERSION};
use crate::dataset::{partition, write_split_manifest};
use crate::dicom::{
    group_series, is_secondary_capture, parse_dicom_header, sort_members, DicomImageMeta,
    SeriesRecord, Vendor,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, grad_cam, predict, write_confusion_csv, write_gradcam_pgm, write_report_json,
    EvalReport, Head, Prediction,
};
use crate::labeling::{LabelOutcome, PlaneClass, SequenceClass};
use crate::nn::checkpoint;
use crate::preprocess::{build_datapoint, Datapoint};
use crate::training::{self, TrainOutcome, LAST_CHECKPOINT};

/// One file the scanner could not parse.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileError {
    pub path: PathBuf,
    pub message: String,
}

/// Result of walking a tree: parsed files plus isolated per-file errors.
#[derive(Debug)]
pub struct ScanOutcome {
    pub metas: Vec<DicomImageMeta>,
    pub errors: Vec<FileError>,
    pub secondary_count: usize,
}

/// Walk `input_dir` and parse every regular file; per-file failures are
/// collected, never fatal. Files are visited in sorted order so reports are
/// stable across runs.
pub fn scan_tree(input_dir: &Path) -> Result<ScanOutcome> {
    if !input_dir.is_dir() {
        return Err(Error::Config(format!(
            "input directory {} does not exist",
            input_dir.display()
        )));
    }
    let mut metas = Vec::new();
    let mut errors = Vec::new();
    let mut secondary_count = 0;
    for entry in WalkDir::new(input_dir).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e.path().map(Path::to_path_buf).unwrap_or_default();
                errors.push(FileError { path, message: e.to_string() });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                errors.push(FileError { path: path.into(), message: e.to_string() });
                continue;
            }
        };
        match parse_dicom_header(&bytes, path) {
            Ok(meta) => {
                if is_secondary_capture(&meta) {
                    secondary_count += 1;
                }
                metas.push(meta);
            }
            Err(e) => errors.push(FileError { path: path.into(), message: e.to_string() }),
        }
    }
    Ok(ScanOutcome { metas, errors, secondary_count })
}

/// One grouped series in the ingest manifest; `sequence`/`plane` are `None`
/// when no label rule matched.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub series_key: String,
    pub study_instance_uid: String,
    pub vendor: Vendor,
    pub description: String,
    pub sequence: Option<SequenceClass>,
    pub plane: Option<PlaneClass>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestManifest {
    pub taxonomy_version: String,
    pub series: Vec<SeriesEntry>,
    pub secondary_dropped: usize,
    pub errors: Vec<FileError>,
}

impl IngestManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad ingest manifest: {e}")))
    }
}

fn label_series(record: &SeriesRecord, config: &GlobalConfig) -> Result<LabelOutcome> {
    let map = config.load_label_map()?;
    let fallback = record.members.first().and_then(|m| m.protocol_name.as_deref());
    Ok(map.assign(&record.representative_description, fallback))
}

/// Group a scanned tree into labeled series entries.
fn build_entries(scan: &ScanOutcome, config: &GlobalConfig) -> Result<Vec<SeriesEntry>> {
    let map = config.load_label_map()?;
    let records = match group_series(scan.metas.clone(), &config.vendor_map) {
        Ok(r) => r,
        Err(Error::EmptyInput) => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut entries = Vec::with_capacity(records.len());
    for record in &records {
        let fallback = record.members.first().and_then(|m| m.protocol_name.as_deref());
        let label = map.assign(&record.representative_description, fallback);
        let (sequence, plane) = match label {
            LabelOutcome::Labeled(l) => (Some(l.sequence), Some(l.plane)),
            LabelOutcome::Unlabeled => (None, None),
        };
        entries.push(SeriesEntry {
            series_key: record.group_key.clone(),
            study_instance_uid: record.study_instance_uid.clone(),
            vendor: record.vendor,
            description: record.representative_description.clone(),
            sequence,
            plane,
            files: record.members.iter().map(|m| m.file_path.clone()).collect(),
        });
    }
    Ok(entries)
}

/// Write bytes via a sibling temp file and rename, so readers never see a
/// half-written report.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Scan, group and label a tree; write the manifest JSON to `out_path`.
/// Per-file errors are listed in the manifest, not fatal.
pub fn cmd_ingest(
    input_dir: &Path,
    config: &GlobalConfig,
    out_path: &Path,
) -> Result<IngestManifest> {
    config.validate()?;
    let scan = scan_tree(input_dir)?;
    let manifest = IngestManifest {
        taxonomy_version: TAXONOMY_VERSION.into(),
        series: build_entries(&scan, config)?,
        secondary_dropped: scan.secondary_count,
        errors: scan.errors,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(out_path, text.as_bytes())?;
    Ok(manifest)
}

/// Build datapoints for every *labeled* series in a tree; unlabeled series
/// are skipped and counted.
pub fn load_labeled_datapoints(
    input_dir: &Path,
    config: &GlobalConfig,
    size: usize,
) -> Result<(Vec<Datapoint>, usize)> {
    let scan = scan_tree(input_dir)?;
    let records = match group_series(scan.metas, &config.vendor_map) {
        Ok(r) => r,
        Err(Error::EmptyInput) => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut dps = Vec::new();
    let mut unlabeled = 0;
    for record in &records {
        match label_series(record, config)? {
            LabelOutcome::Labeled(_) => {
                let label = label_series(record, config)?;
                dps.push(build_datapoint(record, label, size)?);
            }
            LabelOutcome::Unlabeled => unlabeled += 1,
        }
    }
    Ok((dps, unlabeled))
}

/// Name of the split manifest written next to the checkpoints.
pub const SPLIT_MANIFEST: &str = "split_manifest.json";

/// Partition a labeled tree, persist the split manifest, and train.
pub fn cmd_train(input_dir: &Path, config: &GlobalConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.split.val_fraction <= 0.0 {
        return Err(Error::Config(
            "validation fraction must be positive: model selection needs a validation split"
                .into(),
        ));
    }
    let train_cfg = config.train_config();
    let (dps, _) = load_labeled_datapoints(input_dir, config, train_cfg.net.input_size)?;
    let parts = partition(dps, &config.split)?;
    std::fs::create_dir_all(&train_cfg.checkpoint_dir)
        .map_err(|e| Error::io(&train_cfg.checkpoint_dir, e))?;
    write_split_manifest(&train_cfg.checkpoint_dir.join(SPLIT_MANIFEST), &parts)?;
    training::train(&parts.train, &parts.val, &train_cfg)
}

/// Rebuild the same pipeline and continue from the last checkpoint.
pub fn cmd_resume(input_dir: &Path, config: &GlobalConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.split.val_fraction <= 0.0 {
        return Err(Error::Config(
            "validation fraction must be positive: model selection needs a validation split"
                .into(),
        ));
    }
    let train_cfg = config.train_config();
    let (dps, _) = load_labeled_datapoints(input_dir, config, train_cfg.net.input_size)?;
    let parts = partition(dps, &config.split)?;
    training::resume(
        &train_cfg.checkpoint_dir.join(LAST_CHECKPOINT),
        &parts.train,
        &parts.val,
        &train_cfg,
    )
}

/// Rebuild a series record from the files listed in a manifest entry.
fn record_from_entry(entry: &SeriesEntry) -> Result<SeriesRecord> {
    let mut members = Vec::with_capacity(entry.files.len());
    for path in &entry.files {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        members.push(parse_dicom_header(&bytes, path)?);
    }
    if members.is_empty() {
        return Err(Error::EmptyInput);
    }
    sort_members(&mut members);
    Ok(SeriesRecord {
        group_key: entry.series_key.clone(),
        vendor: entry.vendor,
        study_instance_uid: entry.study_instance_uid.clone(),
        members,
        representative_description: entry.description.clone(),
    })
}

/// Evaluate a checkpoint on every labeled entry of an ingest manifest;
/// writes `report.json` plus confusion CSVs into `out_dir`.
pub fn cmd_eval(
    checkpoint_path: &Path,
    manifest_path: &Path,
    config: &GlobalConfig,
    out_dir: &Path,
) -> Result<EvalReport> {
    config.validate()?;
    let ck = checkpoint::load(checkpoint_path)?;
    let manifest = IngestManifest::load(manifest_path)?;
    let mut dps = Vec::new();
    for entry in &manifest.series {
        let (Some(seq), Some(plane)) = (entry.sequence, entry.plane) else {
            continue;
        };
        let record = record_from_entry(entry)?;
        let label = LabelOutcome::Labeled(crate::labeling::JointLabel::new(seq, plane)?);
        dps.push(build_datapoint(&record, label, ck.params.cfg.input_size)?);
    }
    let report = evaluate(&ck.params, &dps, config.train.batch_size)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_report_json(&out_dir.join("report.json"), &report)?;
    let seq_names: Vec<&str> = SequenceClass::ALL.iter().map(|c| c.name()).collect();
    let plane_names: Vec<&str> = PlaneClass::ALL.iter().map(|c| c.name()).collect();
    write_confusion_csv(
        &out_dir.join("confusion_sequence.csv"),
        &report.seq_confusion,
        &seq_names,
    )?;
    write_confusion_csv(
        &out_dir.join("confusion_plane.csv"),
        &report.plane_confusion,
        &plane_names,
    )?;
    Ok(report)
}

/// Replace path-hostile characters in a series key.
fn sanitize_key(key: &str) -> String {
    key.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutedSeries {
    pub series_key: String,
    pub destination: PathBuf,
    pub prediction: Prediction,
    pub n_files: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SortReport {
    pub routed: Vec<RoutedSeries>,
    pub unclassified: Vec<PathBuf>,
    pub errors: Vec<FileError>,
    pub files_seen: usize,
    pub files_placed: usize,
}

/// Hard-link `src` to `dst`, falling back to a copy across filesystems. The
/// source is never moved. Existing destinations are left alone so reruns
/// are idempotent.
fn place_file(src: &Path, dst: &Path) -> Result<()> {
    if dst.exists() {
        return Ok(());
    }
    if let Some(parent) = dst.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    if std::fs::hard_link(src, dst).is_ok() {
        return Ok(());
    }
    std::fs::copy(src, dst).map_err(|e| Error::io(dst, e))?;
    Ok(())
}

fn unclassified_dest(input_dir: &Path, out_dir: &Path, src: &Path) -> PathBuf {
    let rel = src.strip_prefix(input_dir).unwrap_or(src);
    let flat: Vec<String> = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    out_dir.join("unclassified").join(flat.join("_"))
}

/// Classify every series under `input_dir` and file its members into
/// `out_dir/<sequence>/<plane>/<series_key>/`. Unparseable and secondary
/// files land in `out_dir/unclassified/`. Every input file is placed
/// exactly once; sources are never modified.
pub fn cmd_sort(
    input_dir: &Path,
    checkpoint_path: &Path,
    config: &GlobalConfig,
    out_dir: &Path,
) -> Result<SortReport> {
    config.validate()?;
    let ck = checkpoint::load(checkpoint_path)?;
    let scan = scan_tree(input_dir)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut report = SortReport {
        routed: Vec::new(),
        unclassified: Vec::new(),
        errors: scan.errors.clone(),
        files_seen: 0,
        files_placed: 0,
    };
    // unparseable files
    for err in &scan.errors {
        let dst = unclassified_dest(input_dir, out_dir, &err.path);
        place_file(&err.path, &dst)?;
        report.unclassified.push(dst);
        report.files_seen += 1;
        report.files_placed += 1;
    }
    // secondary captures are excluded from grouping; file them unclassified
    for meta in scan.metas.iter().filter(|m| is_secondary_capture(m)) {
        let dst = unclassified_dest(input_dir, out_dir, &meta.file_path);
        place_file(&meta.file_path, &dst)?;
        report.unclassified.push(dst);
        report.files_seen += 1;
        report.files_placed += 1;
    }

    let records = match group_series(scan.metas, &config.vendor_map) {
        Ok(r) => r,
        Err(Error::EmptyInput) => Vec::new(),
        Err(e) => return Err(e),
    };
    for record in &records {
        report.files_seen += record.members.len();
        let routed = build_datapoint(record, LabelOutcome::Unlabeled, ck.params.cfg.input_size)
            .and_then(|dp| predict(&ck.params, &dp));
        match routed {
            Ok(prediction) => {
                let dest = out_dir
                    .join(prediction.seq_pred.name())
                    .join(prediction.plane_pred.name())
                    .join(sanitize_key(&record.group_key));
                for m in &record.members {
                    let name = m.file_path.file_name().expect("scanned files have names");
                    place_file(&m.file_path, &dest.join(name))?;
                    report.files_placed += 1;
                }
                report.routed.push(RoutedSeries {
                    series_key: record.group_key.clone(),
                    destination: dest,
                    prediction,
                    n_files: record.members.len(),
                });
            }
            Err(e) => {
                // classification failed: isolate the series, keep the files
                report.errors.push(FileError {
                    path: PathBuf::from(&record.group_key),
                    message: e.to_string(),
                });
                for m in &record.members {
                    let dst = unclassified_dest(input_dir, out_dir, &m.file_path);
                    place_file(&m.file_path, &dst)?;
                    report.unclassified.push(dst);
                    report.files_placed += 1;
                }
            }
        }
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&out_dir.join("sort_report.json"), text.as_bytes())?;
    Ok(report)
}

fn parse_class(head: Head, class: &str) -> Result<usize> {
    match head {
        Head::Sequence => SequenceClass::parse(class)
            .map(|c| c.index())
            .ok_or_else(|| Error::InvalidClass(class.into(), "sequence")),
        Head::Plane => PlaneClass::parse(class)
            .map(|c| c.index())
            .ok_or_else(|| Error::InvalidClass(class.into(), "plane")),
    }
}

/// Render a Grad-CAM heatmap (plus an overlay) for one series; returns the
/// written file stem.
pub fn cmd_gradcam(
    checkpoint_path: &Path,
    input_dir: &Path,
    series_key: &str,
    head: Head,
    class: &str,
    config: &GlobalConfig,
    out_dir: &Path,
) -> Result<String> {
    config.validate()?;
    let ck = checkpoint::load(checkpoint_path)?;
    let class_index = parse_class(head, class)?;
    let scan = scan_tree(input_dir)?;
    let records = group_series(scan.metas, &config.vendor_map)?;
    let record = records
        .iter()
        .find(|r| r.group_key == series_key)
        .ok_or_else(|| Error::Config(format!("series {series_key:?} not found")))?;
    let dp = build_datapoint(record, LabelOutcome::Unlabeled, ck.params.cfg.input_size)?;
    let map = grad_cam(&ck.params, &dp, head, class_index)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let head_name = match head {
        Head::Sequence => "sequence",
        Head::Plane => "plane",
    };
    let stem = format!("{}_{head_name}_{}", sanitize_key(series_key), sanitize_key(class));
    write_gradcam_pgm(&map, &dp, out_dir, &stem)?;
    Ok(stem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{self, PhantomSpec};
    use std::collections::BTreeMap;

    fn small_tree(dir: &Path, seed: u64) -> phantom::PhantomManifest {
        let spec = PhantomSpec {
            classes: phantom::default_classes()[..4].to_vec(),
            studies_per_class: 2,
            slices_per_series: (3, 3),
            image_size: (32, 32),
            seed,
            ..PhantomSpec::default()
        };
        phantom::generate(&spec, dir).unwrap()
    }

    fn test_config() -> GlobalConfig {
        let mut cfg = GlobalConfig::default();
        cfg.train.net.input_size = 32;
        cfg
    }

    #[test]
    fn ingest_matches_phantom_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_tree(dir.path(), 3);
        let out = dir.path().join("ingest.json");
        let cfg = test_config();
        let ingested = cmd_ingest(dir.path(), &cfg, &out).unwrap();
        assert!(ingested.errors.len() == 1, "only manifest.json fails to parse");
        assert_eq!(ingested.series.len(), manifest.series.len());
        let truth: BTreeMap<_, _> = manifest
            .series
            .iter()
            .map(|s| (s.series_key.clone(), (s.sequence, s.plane)))
            .collect();
        for entry in &ingested.series {
            let (seq, plane) = truth[&entry.series_key];
            assert_eq!(entry.sequence, Some(seq));
            assert_eq!(entry.plane, Some(plane));
        }
        // manifest round-trips
        let back = IngestManifest::load(&out).unwrap();
        assert_eq!(back.series.len(), ingested.series.len());
    }

    #[test]
    fn ingest_of_empty_directory_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ingest.json");
        let m = cmd_ingest(dir.path(), &test_config(), &out).unwrap();
        assert!(m.series.is_empty());
        assert!(m.errors.is_empty());
    }

    #[test]
    fn corrupt_file_is_reported_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        small_tree(dir.path(), 3);
        std::fs::remove_file(dir.path().join("manifest.json")).unwrap();
        std::fs::write(dir.path().join("junk.dcm"), b"not dicom at all").unwrap();
        let m = cmd_ingest(dir.path(), &test_config(), &dir.path().join("out.json")).unwrap();
        assert_eq!(m.errors.len(), 1);
        assert!(!m.series.is_empty());
    }

    #[test]
    fn train_rejects_zero_validation_fraction() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config();
        cfg.split.val_fraction = 0.0;
        cfg.split.train_fraction = 0.8;
        let err = cmd_train(dir.path(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn sort_conserves_files_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        small_tree(&data, 11);
        std::fs::remove_file(data.join("manifest.json")).unwrap();
        std::fs::write(data.join("junk.bin"), b"garbage").unwrap();
        let n_inputs = WalkDir::new(&data)
            .into_iter()
            .filter(|e| e.as_ref().unwrap().file_type().is_file())
            .count();

        // an untrained model still routes everything somewhere
        let cfg = test_config();
        let params =
            crate::nn::ModelParams::he_init(cfg.train.net, 1).unwrap();
        let ck = checkpoint::Checkpoint {
            params,
            adam: None,
            epoch: 0,
            seed: 1,
            best: None,
        };
        let ck_path = dir.path().join("model.ckpt");
        checkpoint::save(&ck, &ck_path).unwrap();

        let out = dir.path().join("sorted");
        let report = cmd_sort(&data, &ck_path, &cfg, &out).unwrap();
        assert_eq!(report.files_seen, n_inputs);
        assert_eq!(report.files_placed, n_inputs);
        let placed = WalkDir::new(&out)
            .into_iter()
            .filter(|e| e.as_ref().unwrap().file_type().is_file())
            .filter(|e| e.as_ref().unwrap().file_name() != "sort_report.json")
            .count();
        assert_eq!(placed, n_inputs);

        // second run: nothing new appears, nothing is lost
        let report2 = cmd_sort(&data, &ck_path, &cfg, &out).unwrap();
        assert_eq!(report2.files_placed, n_inputs);
        let placed2 = WalkDir::new(&out)
            .into_iter()
            .filter(|e| e.as_ref().unwrap().file_type().is_file())
            .filter(|e| e.as_ref().unwrap().file_name() != "sort_report.json")
            .count();
        assert_eq!(placed2, placed);
    }

    #[test]
    fn gradcam_rejects_unknown_class() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let manifest = small_tree(&data, 2);
        let cfg = test_config();
        let params = crate::nn::ModelParams::he_init(cfg.train.net, 1).unwrap();
        let ck_path = dir.path().join("model.ckpt");
        checkpoint::save(
            &checkpoint::Checkpoint { params, adam: None, epoch: 0, seed: 1, best: None },
            &ck_path,
        )
        .unwrap();
        let err = cmd_gradcam(
            &ck_path,
            &data,
            &manifest.series[0].series_key,
            Head::Sequence,
            "NotAClass",
            &cfg,
            &dir.path().join("cam"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidClass(..)), "{err}");
    }
}
