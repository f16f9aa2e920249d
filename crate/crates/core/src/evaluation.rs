//! Metrics and attention maps: per-head and combined accuracy, per-class
//! recall, confusion matrices, a per-vendor breakdown, and
//! gradient-weighted class activation maps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dicom::Vendor;
use crate::error::{Error, Result};
use crate::labeling::{
    JointLabel, LabelOutcome, PlaneClass, SequenceClass, NUM_PLANE_CLASSES, NUM_SEQUENCE_CLASSES,
};
use crate::nn::loss::softmax_rows;
use crate::nn::{backward_to_conv_features, forward_infer, ModelParams, Tensor4};
use crate::preprocess::{resize_bilinear, write_pgm, Datapoint};
use crate::training::assemble_batch;

/// Correct/total pair; the percentage is derived, rounded to two decimals
/// only at serialization and display time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// 100 * correct/total, rounded to 2 decimal places.
    pub fn percent(&self) -> f64 {
        (self.fraction() * 10_000.0).round() / 100.0
    }
}

impl std::fmt::Display for Accuracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{} ({:.2})", self.correct, self.total, self.percent())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub datapoint_ref: String,
    pub seq_probs: Vec<f64>,
    pub plane_probs: Vec<f64>,
    pub seq_pred: SequenceClass,
    pub plane_pred: PlaneClass,
}

/// Argmax with lowest-index tie-break.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &ModelParams, dp: &Datapoint) -> Result<Prediction> {
    let batch = Tensor4::from_vec(dp.pixels.clone(), [1, dp.size, dp.size, 3]);
    let out = forward_infer(params, &batch)?;
    let seq_probs = softmax_rows(&out.seq_logits, NUM_SEQUENCE_CLASSES);
    let plane_probs = softmax_rows(&out.plane_logits, NUM_PLANE_CLASSES);
    Ok(Prediction {
        datapoint_ref: dp.source_series.clone(),
        seq_pred: SequenceClass::from_index(argmax(&seq_probs)).unwrap(),
        plane_pred: PlaneClass::from_index(argmax(&plane_probs)).unwrap(),
        seq_probs,
        plane_probs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VendorAccuracy {
    pub seq: Accuracy,
    pub plane: Accuracy,
    pub combined: Accuracy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seq_accuracy: Accuracy,
    pub plane_accuracy: Accuracy,
    pub combined_accuracy: Accuracy,
    pub per_class_seq: BTreeMap<String, Accuracy>,
    pub per_class_plane: BTreeMap<String, Accuracy>,
    /// [true][predicted]
    pub seq_confusion: Vec<Vec<u64>>,
    pub plane_confusion: Vec<Vec<u64>>,
    pub by_vendor: BTreeMap<String, VendorAccuracy>,
}

/// One scored test item: ground truth, predicted indices, vendor.
#[derive(Debug, Clone, Copy)]
pub struct Scored {
    pub truth: JointLabel,
    pub seq_pred: usize,
    pub plane_pred: usize,
    pub vendor: Vendor,
}

/// Pure report assembly from scored items; `evaluate` feeds it model
/// predictions. Order-invariant by construction (counting only).
pub fn report_from_scored(items: &[Scored]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let mut seq_confusion = vec![vec![0u64; NUM_SEQUENCE_CLASSES]; NUM_SEQUENCE_CLASSES];
    let mut plane_confusion = vec![vec![0u64; NUM_PLANE_CLASSES]; NUM_PLANE_CLASSES];
    let mut seq_correct = 0;
    let mut plane_correct = 0;
    let mut combined_correct = 0;
    let mut vendor_tally: BTreeMap<Vendor, (usize, usize, usize, usize)> = BTreeMap::new();
    for it in items {
        let st = it.truth.sequence.index();
        let pt = it.truth.plane.index();
        seq_confusion[st][it.seq_pred] += 1;
        plane_confusion[pt][it.plane_pred] += 1;
        let s_ok = it.seq_pred == st;
        let p_ok = it.plane_pred == pt;
        let v = vendor_tally.entry(it.vendor).or_insert((0, 0, 0, 0));
        v.3 += 1;
        if s_ok {
            seq_correct += 1;
            v.0 += 1;
        }
        if p_ok {
            plane_correct += 1;
            v.1 += 1;
        }
        if s_ok && p_ok {
            combined_correct += 1;
            v.2 += 1;
        }
    }
    let total = items.len();
    let per_class = |confusion: &[Vec<u64>], names: &mut dyn Iterator<Item = String>| {
        let mut map = BTreeMap::new();
        for (i, name) in names.enumerate() {
            let row_total: u64 = confusion[i].iter().sum();
            if row_total > 0 {
                map.insert(
                    name,
                    Accuracy {
                        correct: confusion[i][i] as usize,
                        total: row_total as usize,
                    },
                );
            }
        }
        map
    };
    let by_vendor = vendor_tally
        .into_iter()
        .map(|(v, (s, p, c, t))| {
            (
                v.name().to_string(),
                VendorAccuracy {
                    seq: Accuracy { correct: s, total: t },
                    plane: Accuracy { correct: p, total: t },
                    combined: Accuracy { correct: c, total: t },
                },
            )
        })
        .collect();
    Ok(EvalReport {
        seq_accuracy: Accuracy { correct: seq_correct, total },
        plane_accuracy: Accuracy { correct: plane_correct, total },
        combined_accuracy: Accuracy { correct: combined_correct, total },
        per_class_seq: per_class(
            &seq_confusion,
            &mut SequenceClass::ALL.iter().map(|c| c.name().to_string()),
        ),
        per_class_plane: per_class(
            &plane_confusion,
            &mut PlaneClass::ALL.iter().map(|c| c.name().to_string()),
        ),
        seq_confusion,
        plane_confusion,
        by_vendor,
    })
}

/// Score a labeled test set with the model in inference mode.
pub fn evaluate(params: &ModelParams, test_set: &[Datapoint], batch_size: usize) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let size = params.cfg.input_size;
    let mut scored = Vec::with_capacity(test_set.len());
    for chunk in test_set.chunks(batch_size.max(1)) {
        let refs: Vec<&Datapoint> = chunk.iter().collect();
        let (batch, _, _) = assemble_batch(&refs, size)?;
        let out = forward_infer(params, &batch)?;
        for (i, dp) in chunk.iter().enumerate() {
            let truth = match dp.label {
                LabelOutcome::Labeled(l) => l,
                LabelOutcome::Unlabeled => {
                    return Err(Error::Config(format!(
                        "unlabeled datapoint {} in test set",
                        dp.source_series
                    )))
                }
            };
            let s_row =
                &out.seq_logits[i * NUM_SEQUENCE_CLASSES..(i + 1) * NUM_SEQUENCE_CLASSES];
            let p_row = &out.plane_logits[i * NUM_PLANE_CLASSES..(i + 1) * NUM_PLANE_CLASSES];
            scored.push(Scored {
                truth,
                seq_pred: argmax(s_row),
                plane_pred: argmax(p_row),
                vendor: dp.vendor,
            });
        }
    }
    report_from_scored(&scored)
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serialization");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Confusion matrix as CSV: header row of predicted classes, one row per
/// true class.
pub fn write_confusion_csv(path: &Path, matrix: &[Vec<u64>], names: &[&str]) -> Result<()> {
    let mut out = String::new();
    out.push_str("true\\predicted");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        out.push_str(names[i]);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Sequence,
    Plane,
}

#[derive(Debug, Clone)]
pub struct GradCamMap {
    /// size x size heat values in [0,1], row major.
    pub heat: Vec<f64>,
    pub size: usize,
    pub target_head: Head,
    pub target_class: usize,
}

/// Gradient-weighted class activation map for one datapoint and target
/// class: backpropagate the target logit to the last conv block's output
/// features, weight each channel by the spatial mean of its gradient, sum,
/// rectify, bilinear-upsample to the input size, and max-normalize. An
/// all-zero map is returned when every weighted activation is rectified
/// away.
pub fn grad_cam(
    params: &ModelParams,
    dp: &Datapoint,
    target_head: Head,
    target_class: usize,
) -> Result<GradCamMap> {
    let classes = match target_head {
        Head::Sequence => NUM_SEQUENCE_CLASSES,
        Head::Plane => NUM_PLANE_CLASSES,
    };
    if target_class >= classes {
        return Err(Error::InvalidClass(
            target_class.to_string(),
            match target_head {
                Head::Sequence => "sequence",
                Head::Plane => "plane",
            },
        ));
    }
    let size = dp.size;
    let batch = Tensor4::from_vec(dp.pixels.clone(), [1, size, size, 3]);
    let out = forward_infer(params, &batch)?;

    let mut d_seq = vec![0.0; NUM_SEQUENCE_CLASSES];
    let mut d_plane = vec![0.0; NUM_PLANE_CLASSES];
    match target_head {
        Head::Sequence => d_seq[target_class] = 1.0,
        Head::Plane => d_plane[target_class] = 1.0,
    }
    let grads = backward_to_conv_features(params, &out.cache, &d_seq, &d_plane)?;
    let features = &out.cache.conv_features;
    let [_, fh, fw, fc] = features.shape;

    // channel weights: spatial mean of the gradient
    let mut weights = vec![0.0; fc];
    for y in 0..fh {
        for x in 0..fw {
            for k in 0..fc {
                weights[k] += grads.at(0, y, x, k);
            }
        }
    }
    let inv_area = 1.0 / (fh * fw) as f64;
    for w in weights.iter_mut() {
        *w *= inv_area;
    }

    let mut coarse = vec![0.0; fh * fw];
    for y in 0..fh {
        for x in 0..fw {
            let mut acc = 0.0;
            for k in 0..fc {
                acc += weights[k] * features.at(0, y, x, k);
            }
            coarse[y * fw + x] = acc.max(0.0);
        }
    }

    let mut heat = resize_bilinear(&coarse, fh, fw, size);
    let max = heat.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in heat.iter_mut() {
            *v /= max;
        }
    }
    Ok(GradCamMap {
        heat,
        size,
        target_head,
        target_class,
    })
}

/// Raw heatmap plus a 50/50 overlay on the first image channel, both PGM.
pub fn write_gradcam_pgm(map: &GradCamMap, dp: &Datapoint, dir: &Path, stem: &str) -> Result<()> {
    write_pgm(&dir.join(format!("{stem}_heat.pgm")), &map.heat, map.size, map.size)?;
    let overlay: Vec<f64> = map
        .heat
        .iter()
        .zip(dp.channel(0).iter())
        .map(|(&h, &p)| 0.5 * h + 0.5 * p)
        .collect();
    write_pgm(&dir.join(format!("{stem}_overlay.pgm")), &overlay, map.size, map.size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetConfig;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dp_with(pixels: Vec<f64>, size: usize, label: JointLabel) -> Datapoint {
        Datapoint {
            pixels,
            size,
            label: LabelOutcome::Labeled(label),
            study_instance_uid: "st".into(),
            vendor: Vendor::VendorA,
            source_series: "se".into(),
        }
    }

    fn cine_sa() -> JointLabel {
        JointLabel::new(SequenceClass::CineBSSFP, PlaneClass::ShortAxis).unwrap()
    }

    #[test]
    fn percent_format_matches_reporting_convention() {
        let a = Accuracy { correct: 1546, total: 1602 };
        assert_eq!(a.percent(), 96.50);
        assert_eq!(a.to_string(), "1546/1602 (96.50)");
        let b = Accuracy { correct: 1520, total: 1602 };
        assert_eq!(b.percent(), 94.88);
        assert_eq!(b.to_string(), "1520/1602 (94.88)");
    }

    #[test]
    fn zero_network_predicts_class_zero_with_uniform_probs() {
        let cfg = NetConfig { input_size: 16, dropout_rate: 0.0 };
        let params = ModelParams::zeros(cfg).unwrap();
        let dp = dp_with(vec![0.3; 16 * 16 * 3], 16, cine_sa());
        let p = predict(&params, &dp).unwrap();
        assert_eq!(p.seq_pred, SequenceClass::ALL[0]);
        assert_eq!(p.plane_pred, PlaneClass::ALL[0]);
        for &v in &p.seq_probs {
            assert!((v - 1.0 / 17.0).abs() < 1e-12);
        }
        assert!((p.seq_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((p.plane_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn perfect_predictions_give_perfect_report() {
        let labels = [
            cine_sa(),
            JointLabel::new(SequenceClass::WBLGE, PlaneClass::FourChamber).unwrap(),
        ];
        let items: Vec<Scored> = (0..10)
            .map(|i| {
                let l = labels[i % 2];
                Scored {
                    truth: l,
                    seq_pred: l.sequence.index(),
                    plane_pred: l.plane.index(),
                    vendor: Vendor::VendorA,
                }
            })
            .collect();
        let r = report_from_scored(&items).unwrap();
        assert_eq!(r.seq_accuracy.percent(), 100.0);
        assert_eq!(r.plane_accuracy.percent(), 100.0);
        assert_eq!(r.combined_accuracy.percent(), 100.0);
        for (i, row) in r.seq_confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!(i == j || v == 0);
            }
        }
    }

    #[test]
    fn report_identities_and_order_invariance() {
        let labels = [
            cine_sa(),
            JointLabel::new(SequenceClass::WBLGE, PlaneClass::FourChamber).unwrap(),
            JointLabel::new(SequenceClass::HASTE, PlaneClass::Axial).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut items: Vec<Scored> = (0..200)
            .map(|i| {
                use rand::Rng;
                let l = labels[i % 3];
                Scored {
                    truth: l,
                    seq_pred: rng.gen_range(0..NUM_SEQUENCE_CLASSES),
                    plane_pred: rng.gen_range(0..NUM_PLANE_CLASSES),
                    vendor: if i % 2 == 0 { Vendor::VendorA } else { Vendor::VendorB },
                }
            })
            .collect();
        let r = report_from_scored(&items).unwrap();

        // trace identity
        let trace: u64 = (0..NUM_SEQUENCE_CLASSES).map(|i| r.seq_confusion[i][i]).sum();
        assert_eq!(trace as usize, r.seq_accuracy.correct);
        // row sums equal per-class totals
        for (name, acc) in &r.per_class_seq {
            let i = SequenceClass::parse(name).unwrap().index();
            let row: u64 = r.seq_confusion[i].iter().sum();
            assert_eq!(row as usize, acc.total);
        }
        // combined <= min(seq, plane)
        assert!(r.combined_accuracy.correct <= r.seq_accuracy.correct.min(r.plane_accuracy.correct));
        // vendor tallies partition the total
        let vt: usize = r.by_vendor.values().map(|v| v.seq.total).sum();
        assert_eq!(vt, 200);

        // order invariance
        items.shuffle(&mut rng);
        let r2 = report_from_scored(&items).unwrap();
        assert_eq!(r.seq_confusion, r2.seq_confusion);
        assert_eq!(r.combined_accuracy, r2.combined_accuracy);
    }

    #[test]
    fn evaluate_rejects_empty_or_unlabeled() {
        let cfg = NetConfig { input_size: 16, dropout_rate: 0.0 };
        let params = ModelParams::zeros(cfg).unwrap();
        assert!(matches!(
            evaluate(&params, &[], 4),
            Err(Error::EmptySplit("test"))
        ));
        let mut dp = dp_with(vec![0.0; 16 * 16 * 3], 16, cine_sa());
        dp.label = LabelOutcome::Unlabeled;
        assert!(evaluate(&params, &[dp], 4).is_err());
    }

    #[test]
    fn gradcam_zero_network_is_all_zero() {
        let cfg = NetConfig { input_size: 16, dropout_rate: 0.0 };
        let params = ModelParams::zeros(cfg).unwrap();
        let dp = dp_with(vec![0.7; 16 * 16 * 3], 16, cine_sa());
        let map = grad_cam(&params, &dp, Head::Sequence, 3).unwrap();
        assert_eq!(map.heat.len(), 16 * 16);
        assert!(map.heat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradcam_normalized_and_class_guarded() {
        let cfg = NetConfig { input_size: 16, dropout_rate: 0.0 };
        let params = ModelParams::he_init(cfg, 21).unwrap();
        let pixels: Vec<f64> = (0..16 * 16 * 3).map(|i| (i % 9) as f64 / 8.0).collect();
        let dp = dp_with(pixels, 16, cine_sa());
        let map = grad_cam(&params, &dp, Head::Plane, 7).unwrap();
        assert_eq!(map.heat.len(), 16 * 16);
        assert!(map.heat.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let max = map.heat.iter().cloned().fold(0.0f64, f64::max);
        assert!(max == 1.0 || map.heat.iter().all(|&v| v == 0.0));

        assert!(matches!(
            grad_cam(&params, &dp, Head::Sequence, 17),
            Err(Error::InvalidClass(_, _))
        ));
        assert!(matches!(
            grad_cam(&params, &dp, Head::Plane, 10),
            Err(Error::InvalidClass(_, _))
        ));
    }

    #[test]
    fn gradcam_invariant_to_uniform_logit_shift() {
        let cfg = NetConfig { input_size: 16, dropout_rate: 0.0 };
        let mut params = ModelParams::he_init(cfg, 8).unwrap();
        let pixels: Vec<f64> = (0..16 * 16 * 3).map(|i| (i % 5) as f64 / 4.0).collect();
        let dp = dp_with(pixels, 16, cine_sa());
        let a = grad_cam(&params, &dp, Head::Sequence, 4).unwrap();
        // shifting every sequence-head bias by a constant shifts all logits
        // uniformly and must not move the attention map
        for b in params.head_seq.bias.iter_mut() {
            *b += 3.5;
        }
        let b = grad_cam(&params, &dp, Head::Sequence, 4).unwrap();
        assert_eq!(a.heat, b.heat);
    }

    #[test]
    fn report_and_csv_emission() {
        let items = vec![Scored {
            truth: cine_sa(),
            seq_pred: SequenceClass::CineBSSFP.index(),
            plane_pred: PlaneClass::ShortAxis.index(),
            vendor: Vendor::VendorB,
        }];
        let r = report_from_scored(&items).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report_json(&dir.path().join("report.json"), &r).unwrap();
        let names: Vec<&str> = SequenceClass::ALL.iter().map(|c| c.name()).collect();
        write_confusion_csv(&dir.path().join("seq.csv"), &r.seq_confusion, &names).unwrap();
        let text = std::fs::read_to_string(dir.path().join("seq.csv")).unwrap();
        assert_eq!(text.lines().count(), NUM_SEQUENCE_CLASSES + 1);
        assert!(text.starts_with("true\\predicted,B0Map,"));
        let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["combined_accuracy"]["correct"], 1);
    }
}
