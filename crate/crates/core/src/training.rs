//! Training orchestration: epoch loop, per-batch schedule evaluation,
//! validation in inference mode, checkpointing, and best-model selection by
//! summed validation loss. Every random stream is derived from the run seed
//! and the epoch/batch position, so an interrupted run resumed from its
//! last checkpoint replays the remaining epochs bit-exactly.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{augment, oversample_indices, AugmentSpec, OversampleSpec};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::labeling::{JointLabel, LabelOutcome, NUM_PLANE_CLASSES, NUM_SEQUENCE_CLASSES};
use crate::nn::checkpoint::{self, Checkpoint};
use crate::nn::loss::two_head_loss;
use crate::nn::{
    backward, forward_infer, forward_train, AdamState, CyclicLrSpec, ModelParams, NetConfig,
    Tensor4,
};
use crate::preprocess::Datapoint;

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: CyclicLrSpec,
    pub oversample: OversampleSpec,
    pub augment: AugmentSpec,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig::default(),
            epochs: 480,
            batch_size: 32,
            lr: CyclicLrSpec::default(),
            oversample: OversampleSpec::default(),
            augment: AugmentSpec::default(),
            seed: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.lr.validate()?;
        self.oversample.validate()?;
        self.augment.validate()?;
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 (batch norm)".into(),
            ));
        }
        if self.val_every < 1 {
            return Err(Error::Config("val_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: u64,
    pub lr_at_epoch_end: f64,
    pub train_loss: f64,
    pub val_loss_seq: f64,
    pub val_loss_plane: f64,
    pub val_loss_sum: f64,
    pub val_acc_seq: f64,
    pub val_acc_plane: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub log: Vec<TrainLogRecord>,
}

fn labels_of(set: &[Datapoint], which: &'static str) -> Result<Vec<JointLabel>> {
    set.iter()
        .map(|dp| match dp.label {
            LabelOutcome::Labeled(l) => Ok(l),
            LabelOutcome::Unlabeled => Err(Error::Config(format!(
                "unlabeled datapoint {} in {which} set",
                dp.source_series
            ))),
        })
        .collect()
}

/// Stack datapoints into an NHWC batch tensor plus per-head target indices.
pub fn assemble_batch(dps: &[&Datapoint], size: usize) -> Result<(Tensor4, Vec<usize>, Vec<usize>)> {
    let n = dps.len();
    let mut data = Vec::with_capacity(n * size * size * 3);
    let mut seq = Vec::with_capacity(n);
    let mut plane = Vec::with_capacity(n);
    for dp in dps {
        if dp.size != size {
            return Err(Error::ShapeMismatch(format!(
                "datapoint size {} != configured {}",
                dp.size, size
            )));
        }
        data.extend_from_slice(&dp.pixels);
        match dp.label {
            LabelOutcome::Labeled(l) => {
                seq.push(l.sequence.index());
                plane.push(l.plane.index());
            }
            LabelOutcome::Unlabeled => {
                return Err(Error::Config("unlabeled datapoint in batch".into()))
            }
        }
    }
    Ok((Tensor4::from_vec(data, [n, size, size, 3]), seq, plane))
}

struct ValMetrics {
    loss_seq: f64,
    loss_plane: f64,
    acc_seq: f64,
    acc_plane: f64,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn validate_pass(params: &ModelParams, val: &[Datapoint], batch_size: usize) -> Result<ValMetrics> {
    let size = params.cfg.input_size;
    let mut loss_seq = 0.0;
    let mut loss_plane = 0.0;
    let mut correct_seq = 0usize;
    let mut correct_plane = 0usize;
    let total = val.len();
    for chunk in val.chunks(batch_size) {
        let refs: Vec<&Datapoint> = chunk.iter().collect();
        let (batch, seq_t, plane_t) = assemble_batch(&refs, size)?;
        let out = forward_infer(params, &batch)?;
        let l = two_head_loss(
            &out.seq_logits,
            &out.plane_logits,
            &seq_t,
            &plane_t,
            NUM_SEQUENCE_CLASSES,
            NUM_PLANE_CLASSES,
        )?;
        let n = chunk.len() as f64;
        loss_seq += l.seq_loss * n;
        loss_plane += l.plane_loss * n;
        for (i, (&st, &pt)) in seq_t.iter().zip(plane_t.iter()).enumerate() {
            let s_row = &out.seq_logits[i * NUM_SEQUENCE_CLASSES..(i + 1) * NUM_SEQUENCE_CLASSES];
            let p_row = &out.plane_logits[i * NUM_PLANE_CLASSES..(i + 1) * NUM_PLANE_CLASSES];
            if argmax(s_row) == st {
                correct_seq += 1;
            }
            if argmax(p_row) == pt {
                correct_plane += 1;
            }
        }
    }
    Ok(ValMetrics {
        loss_seq: loss_seq / total as f64,
        loss_plane: loss_plane / total as f64,
        acc_seq: correct_seq as f64 / total as f64,
        acc_plane: correct_plane as f64 / total as f64,
    })
}

fn check_study_disjoint(train: &[Datapoint], val: &[Datapoint]) -> Result<()> {
    let train_studies: std::collections::BTreeSet<&str> =
        train.iter().map(|d| d.study_instance_uid.as_str()).collect();
    for dp in val {
        if train_studies.contains(dp.study_instance_uid.as_str()) {
            return Err(Error::Config(format!(
                "study {} appears in both train and validation sets",
                dp.study_instance_uid
            )));
        }
    }
    Ok(())
}

fn read_log(path: &Path) -> Vec<TrainLogRecord> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

/// Train from scratch. Returns the checkpoint with minimum summed
/// validation loss (earliest epoch on ties) and the per-epoch log.
pub fn train(
    train_set: &[Datapoint],
    val_set: &[Datapoint],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let params = ModelParams::he_init(config.net, derive_seed(config.seed, "init", &[]))?;
    let adam = AdamState::new(&params);
    std::fs::create_dir_all(&config.checkpoint_dir)
        .map_err(|e| Error::io(&config.checkpoint_dir, e))?;
    // fresh run: start the log over
    let _ = std::fs::remove_file(config.checkpoint_dir.join(TRAIN_LOG));
    run_epochs(train_set, val_set, config, params, adam, 0, None, Vec::new())
}

/// Continue a run from its last checkpoint. A completed run is a no-op that
/// returns the stored best checkpoint.
pub fn resume(
    checkpoint_path: &Path,
    train_set: &[Datapoint],
    val_set: &[Datapoint],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let ck = checkpoint::load(checkpoint_path)?;
    if ck.params.cfg != config.net {
        return Err(Error::VersionMismatch(format!(
            "checkpoint network {:?} != configured {:?}",
            ck.params.cfg, config.net
        )));
    }
    if ck.seed != config.seed {
        return Err(Error::VersionMismatch(format!(
            "checkpoint seed {} != configured {}",
            ck.seed, config.seed
        )));
    }
    let log = read_log(&config.checkpoint_dir.join(TRAIN_LOG));
    if ck.epoch as usize >= config.epochs {
        let best = checkpoint::load(&config.checkpoint_dir.join(BEST_CHECKPOINT))?;
        return Ok(TrainOutcome { best, log });
    }
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let start = ck.epoch as usize;
    let adam = ck.adam.ok_or_else(|| {
        Error::CorruptCheckpoint("resume checkpoint lacks optimizer state".into())
    })?;
    run_epochs(train_set, val_set, config, ck.params, adam, start, ck.best, log)
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    train_set: &[Datapoint],
    val_set: &[Datapoint],
    config: &TrainConfig,
    mut params: ModelParams,
    mut adam: AdamState,
    start_epoch: usize,
    mut best: Option<(f64, u64)>,
    mut log: Vec<TrainLogRecord>,
) -> Result<TrainOutcome> {
    check_study_disjoint(train_set, val_set)?;
    let train_labels = labels_of(train_set, "train")?;
    labels_of(val_set, "validation")?;

    // oversampling plan is a pure function of the data and seed, so a
    // resumed run rebuilds the identical plan
    let items: Vec<_> = train_labels
        .iter()
        .zip(train_set.iter())
        .map(|(&l, dp)| (l, dp.vendor))
        .collect();
    let plan = oversample_indices(&items, &config.oversample);

    let size = config.net.input_size;
    let log_path = config.checkpoint_dir.join(TRAIN_LOG);
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    // carried validation metrics for epochs between validation passes
    let mut last_val = log.last().map(|r| ValMetrics {
        loss_seq: r.val_loss_seq,
        loss_plane: r.val_loss_plane,
        acc_seq: r.val_acc_seq,
        acc_plane: r.val_acc_plane,
    });

    for epoch in start_epoch..config.epochs {
        let t0 = Instant::now();
        let mut order = plan.clone();
        let shuffle_seed = derive_seed(config.seed, "shuffle", &[epoch as u64]);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

        // last partial batch is kept when it still satisfies batch norm
        let mut batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        if let Some(last) = batches.last() {
            if last.len() < 2 {
                batches.pop();
            }
        }
        let num_batches = batches.len();
        if num_batches == 0 {
            return Err(Error::EmptySplit("train (all batches below minimum size)"));
        }

        let mut train_loss_sum = 0.0;
        let mut seen = 0usize;
        for (bi, chunk) in batches.into_iter().enumerate() {
            let augmented: Vec<Datapoint> = chunk
                .iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let pos = (bi * config.batch_size + j) as u64;
                    let s = derive_seed(config.seed, "augment", &[epoch as u64, pos]);
                    augment(
                        &train_set[idx],
                        &config.augment,
                        &mut ChaCha8Rng::seed_from_u64(s),
                    )
                })
                .collect();
            let refs: Vec<&Datapoint> = augmented.iter().collect();
            let (batch, seq_t, plane_t) = assemble_batch(&refs, size)?;

            let progress = epoch as f64 + bi as f64 / num_batches as f64;
            let lr = config.lr.lr_at(progress);
            let dropout_seed = derive_seed(config.seed, "dropout", &[epoch as u64, bi as u64]);
            let out = forward_train(
                &mut params,
                &batch,
                &mut ChaCha8Rng::seed_from_u64(dropout_seed),
            )?;
            let loss = two_head_loss(
                &out.seq_logits,
                &out.plane_logits,
                &seq_t,
                &plane_t,
                NUM_SEQUENCE_CLASSES,
                NUM_PLANE_CLASSES,
            )?;
            let grads = backward(&params, &out.cache, &loss.d_seq_logits, &loss.d_plane_logits)?;
            adam.step(&mut params, &grads, lr)?;
            train_loss_sum += loss.loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = train_loss_sum / seen as f64;

        let is_val_epoch = (epoch + 1) % config.val_every == 0 || epoch + 1 == config.epochs;
        if is_val_epoch {
            last_val = Some(validate_pass(&params, val_set, config.batch_size)?);
        }
        let vm = last_val.as_ref().expect("validation runs on the final epoch");
        let val_loss_sum = vm.loss_seq + vm.loss_plane;

        if is_val_epoch && best.map_or(true, |(b, _)| val_loss_sum < b) {
            best = Some((val_loss_sum, epoch as u64));
            checkpoint::save(
                &Checkpoint {
                    params: params.clone(),
                    adam: Some(adam.clone()),
                    epoch: (epoch + 1) as u64,
                    seed: config.seed,
                    best,
                },
                &config.checkpoint_dir.join(BEST_CHECKPOINT),
            )?;
        }
        checkpoint::save(
            &Checkpoint {
                params: params.clone(),
                adam: Some(adam.clone()),
                epoch: (epoch + 1) as u64,
                seed: config.seed,
                best,
            },
            &config.checkpoint_dir.join(LAST_CHECKPOINT),
        )?;

        let record = TrainLogRecord {
            epoch: epoch as u64,
            lr_at_epoch_end: config.lr.lr_at((epoch + 1) as f64),
            train_loss,
            val_loss_seq: vm.loss_seq,
            val_loss_plane: vm.loss_plane,
            val_loss_sum,
            val_acc_seq: vm.acc_seq,
            val_acc_plane: vm.acc_plane,
        };
        if !record.train_loss.is_finite() || !record.val_loss_sum.is_finite() {
            return Err(Error::Config(format!(
                "non-finite loss at epoch {epoch}: train {} val {}",
                record.train_loss, record.val_loss_sum
            )));
        }
        let line = serde_json::to_string(&record).expect("log record serialization");
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        eprintln!(
            "epoch {:>4}/{}  train_loss {:.4}  val_loss {:.4}  val_acc {:.3}/{:.3}  {:.1}s",
            epoch + 1,
            config.epochs,
            record.train_loss,
            record.val_loss_sum,
            record.val_acc_seq,
            record.val_acc_plane,
            t0.elapsed().as_secs_f64()
        );
        log.push(record);
    }

    let best_ck = checkpoint::load(&config.checkpoint_dir.join(BEST_CHECKPOINT))?;
    Ok(TrainOutcome { best: best_ck, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dicom::Vendor;
    use crate::labeling::{PlaneClass, SequenceClass};
    use rand::Rng;

    fn tiny_config(dir: &Path, epochs: usize) -> TrainConfig {
        TrainConfig {
            net: NetConfig {
                input_size: 16,
                dropout_rate: 0.2,
            },
            epochs,
            batch_size: 4,
            lr: CyclicLrSpec {
                lr_min: 1e-4,
                lr_max: 1e-3,
                cycle_epochs: 4.0,
            },
            oversample: OversampleSpec::default(),
            augment: AugmentSpec::identity(),
            seed: 11,
            checkpoint_dir: dir.to_path_buf(),
            val_every: 1,
        }
    }

    fn synthetic_sets() -> (Vec<Datapoint>, Vec<Datapoint>) {
        let labels = [
            JointLabel::new(SequenceClass::CineBSSFP, PlaneClass::ShortAxis).unwrap(),
            JointLabel::new(SequenceClass::WBLGE, PlaneClass::FourChamber).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut make = |study: &str, l: JointLabel| Datapoint {
            pixels: (0..16 * 16 * 3).map(|_| rng.gen::<f64>()).collect(),
            size: 16,
            label: LabelOutcome::Labeled(l),
            study_instance_uid: study.into(),
            vendor: Vendor::VendorA,
            source_series: format!("{study}::se"),
        };
        let mut train = Vec::new();
        let mut val = Vec::new();
        for i in 0..8 {
            train.push(make(&format!("tr{i}"), labels[i % 2]));
        }
        for i in 0..4 {
            val.push(make(&format!("va{i}"), labels[i % 2]));
        }
        (train, val)
    }

    #[test]
    fn one_epoch_produces_one_record_and_best() {
        let dir = tempfile::tempdir().unwrap();
        let (train_set, val_set) = synthetic_sets();
        let out = train(&train_set, &val_set, &tiny_config(dir.path(), 1)).unwrap();
        assert_eq!(out.log.len(), 1);
        assert!(dir.path().join(BEST_CHECKPOINT).exists());
        assert!(dir.path().join(LAST_CHECKPOINT).exists());
        let r = &out.log[0];
        assert!((r.val_loss_sum - (r.val_loss_seq + r.val_loss_plane)).abs() < 1e-9);
        assert!(r.train_loss.is_finite());
        assert_eq!(out.best.best.unwrap().1, 0);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let (train_set, val_set) = synthetic_sets();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let o1 = train(&train_set, &val_set, &tiny_config(d1.path(), 3)).unwrap();
        let o2 = train(&train_set, &val_set, &tiny_config(d2.path(), 3)).unwrap();
        for (a, b) in o1.log.iter().zip(o2.log.iter()) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_loss_sum.to_bits(), b.val_loss_sum.to_bits());
        }
        let b1 = std::fs::read(d1.path().join(BEST_CHECKPOINT)).unwrap();
        let b2 = std::fs::read(d2.path().join(BEST_CHECKPOINT)).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (train_set, val_set) = synthetic_sets();
        let full_dir = tempfile::tempdir().unwrap();
        let full = train(&train_set, &val_set, &tiny_config(full_dir.path(), 4)).unwrap();

        let part_dir = tempfile::tempdir().unwrap();
        // interrupt after 2 epochs...
        train(&train_set, &val_set, &tiny_config(part_dir.path(), 2)).unwrap();
        // ...and resume to 4
        let resumed = resume(
            &part_dir.path().join(LAST_CHECKPOINT),
            &train_set,
            &val_set,
            &tiny_config(part_dir.path(), 4),
        )
        .unwrap();
        assert_eq!(full.log.len(), resumed.log.len());
        for (a, b) in full.log.iter().zip(resumed.log.iter()) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_loss_sum.to_bits(), b.val_loss_sum.to_bits());
            assert_eq!(a.val_acc_seq, b.val_acc_seq);
        }
        let b1 = std::fs::read(full_dir.path().join(BEST_CHECKPOINT)).unwrap();
        let b2 = std::fs::read(part_dir.path().join(BEST_CHECKPOINT)).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn resume_of_completed_run_is_noop() {
        let (train_set, val_set) = synthetic_sets();
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), 2);
        let first = train(&train_set, &val_set, &cfg).unwrap();
        let again = resume(&dir.path().join(LAST_CHECKPOINT), &train_set, &val_set, &cfg).unwrap();
        assert_eq!(first.best.best, again.best.best);
        assert_eq!(first.log, again.log);
    }

    #[test]
    fn resume_rejects_mismatched_network_or_seed() {
        let (train_set, val_set) = synthetic_sets();
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), 1);
        train(&train_set, &val_set, &cfg).unwrap();
        let mut other = cfg.clone();
        other.seed = 999;
        assert!(matches!(
            resume(&dir.path().join(LAST_CHECKPOINT), &train_set, &val_set, &other),
            Err(Error::VersionMismatch(_))
        ));
        let mut other = cfg.clone();
        other.net.dropout_rate = 0.5;
        assert!(matches!(
            resume(&dir.path().join(LAST_CHECKPOINT), &train_set, &val_set, &other),
            Err(Error::VersionMismatch(_))
        ));
    }

    #[test]
    fn best_is_min_of_log_and_lr_matches_schedule() {
        let (train_set, val_set) = synthetic_sets();
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), 5);
        let out = train(&train_set, &val_set, &cfg).unwrap();
        let (best_loss, best_epoch) = out.best.best.unwrap();
        let min = out
            .log
            .iter()
            .cloned()
            .reduce(|a, b| if b.val_loss_sum < a.val_loss_sum { b } else { a })
            .unwrap();
        assert_eq!(best_epoch, min.epoch);
        assert_eq!(best_loss.to_bits(), min.val_loss_sum.to_bits());
        for r in &out.log {
            assert_eq!(r.lr_at_epoch_end, cfg.lr.lr_at((r.epoch + 1) as f64));
        }
    }

    #[test]
    fn preconditions_enforced() {
        let (train_set, val_set) = synthetic_sets();
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path(), 1);
        assert!(matches!(
            train(&[], &val_set, &cfg),
            Err(Error::EmptySplit("train"))
        ));
        assert!(matches!(
            train(&train_set, &[], &cfg),
            Err(Error::EmptySplit("validation"))
        ));
        // shared study between train and val is rejected
        let mut leaky = val_set.clone();
        leaky[0].study_instance_uid = train_set[0].study_instance_uid.clone();
        assert!(train(&train_set, &leaky, &cfg).is_err());
    }

    #[test]
    fn training_reduces_loss_on_learnable_data() {
        // two well-separated classes: loss after several epochs must drop
        let labels = [
            JointLabel::new(SequenceClass::CineBSSFP, PlaneClass::ShortAxis).unwrap(),
            JointLabel::new(SequenceClass::WBLGE, PlaneClass::FourChamber).unwrap(),
        ];
        let make = |study: &str, l: JointLabel, bright: bool| {
            let mut pixels = vec![0.0; 16 * 16 * 3];
            for y in 0..16 {
                for x in 0..16 {
                    let v = if bright ^ (y < 8) { 0.9 } else { 0.1 };
                    for c in 0..3 {
                        pixels[(y * 16 + x) * 3 + c] = v;
                    }
                }
            }
            Datapoint {
                pixels,
                size: 16,
                label: LabelOutcome::Labeled(l),
                study_instance_uid: study.into(),
                vendor: Vendor::VendorA,
                source_series: format!("{study}::se"),
            }
        };
        let train_set: Vec<_> = (0..8)
            .map(|i| make(&format!("tr{i}"), labels[i % 2], i % 2 == 0))
            .collect();
        let val_set: Vec<_> = (0..4)
            .map(|i| make(&format!("va{i}"), labels[i % 2], i % 2 == 0))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path(), 12);
        cfg.lr = CyclicLrSpec {
            lr_min: 1e-3,
            lr_max: 5e-3,
            cycle_epochs: 12.0,
        };
        let out = train(&train_set, &val_set, &cfg).unwrap();
        let first = out.log.first().unwrap().val_loss_sum;
        let best = out.best.best.unwrap().0;
        assert!(best < first, "val loss should improve: {first} -> {best}");
    }
}
