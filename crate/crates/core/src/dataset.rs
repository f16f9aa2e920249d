//! Study-level stratified partitioning, minority oversampling, and
//! training-time augmentation. All randomness flows from explicit seeds.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::dicom::Vendor;
use crate::error::{Error, Result};
use crate::labeling::{JointLabel, LabelOutcome, ADMISSIBLE_PAIRS};
use crate::preprocess::Datapoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.64,
            val_fraction: 0.16,
            test_fraction: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fs = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fs.iter().any(|&f| f < 0.0) {
            return Err(Error::Config("split fractions must be >= 0".into()));
        }
        let sum: f64 = fs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PartitionResult {
    pub train: Vec<Datapoint>,
    pub val: Vec<Datapoint>,
    pub test: Vec<Datapoint>,
    /// study UID -> split, for the audit manifest.
    pub manifest: BTreeMap<String, Split>,
    /// strata too small to split; their studies all went to train.
    pub warnings: Vec<String>,
}

fn joint_index(label: JointLabel) -> usize {
    ADMISSIBLE_PAIRS
        .iter()
        .position(|&(s, p)| s == label.sequence && p == label.plane)
        .unwrap()
}

fn require_label(dp: &Datapoint) -> Result<JointLabel> {
    match dp.label {
        LabelOutcome::Labeled(l) => Ok(l),
        LabelOutcome::Unlabeled => Err(Error::Config(format!(
            "unlabeled datapoint {} in partition input",
            dp.source_series
        ))),
    }
}

/// Largest-remainder allocation of `n` studies to the three splits.
/// Remainder ties resolve in train, val, test order.
fn largest_remainder(n: usize, spec: &SplitSpec) -> [usize; 3] {
    let targets = [
        n as f64 * spec.train_fraction,
        n as f64 * spec.val_fraction,
        n as f64 * spec.test_fraction,
    ];
    let mut counts = [0usize; 3];
    let mut remainders = [0.0f64; 3];
    for i in 0..3 {
        counts[i] = targets[i].floor() as usize;
        remainders[i] = targets[i] - counts[i] as f64;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| remainders[b].partial_cmp(&remainders[a]).unwrap().then(a.cmp(&b)));
    for &i in &order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Partition datapoints into train/val/test at study granularity.
///
/// Each study is assigned to the stratum of its rarest label (smallest
/// global datapoint count, label order on ties); within each stratum the
/// studies are shuffled with a seed derived from the stratum and allocated
/// by largest-remainder rounding. Strata with fewer than 3 studies go
/// wholly to train with a warning.
pub fn partition(datapoints: Vec<Datapoint>, spec: &SplitSpec) -> Result<PartitionResult> {
    spec.validate()?;
    if datapoints.is_empty() {
        return Err(Error::EmptyInput);
    }

    let mut global_counts: BTreeMap<JointLabel, usize> = BTreeMap::new();
    let mut study_labels: BTreeMap<&str, BTreeSet<JointLabel>> = BTreeMap::new();
    for dp in &datapoints {
        let label = require_label(dp)?;
        *global_counts.entry(label).or_insert(0) += 1;
        study_labels
            .entry(dp.study_instance_uid.as_str())
            .or_default()
            .insert(label);
    }
    if study_labels.len() < 3 {
        return Err(Error::InsufficientStudies(format!(
            "{} distinct studies, need at least 3",
            study_labels.len()
        )));
    }

    // stratum = the study's rarest label
    let mut strata: BTreeMap<JointLabel, Vec<String>> = BTreeMap::new();
    for (study, labels) in &study_labels {
        let rarest = labels
            .iter()
            .copied()
            .min_by_key(|l| (global_counts[l], joint_index(*l)))
            .unwrap();
        strata.entry(rarest).or_default().push(study.to_string());
    }

    let mut manifest: BTreeMap<String, Split> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (label, mut studies) in strata {
        studies.sort();
        if studies.len() < 3 {
            warnings.push(format!(
                "stratum {label}: {} studies, all assigned to train",
                studies.len()
            ));
            for s in studies {
                manifest.insert(s, Split::Train);
            }
            continue;
        }
        let seed = derive_seed(spec.seed, "partition", &[joint_index(label) as u64]);
        studies.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let counts = largest_remainder(studies.len(), spec);
        for (i, study) in studies.into_iter().enumerate() {
            let split = if i < counts[0] {
                Split::Train
            } else if i < counts[0] + counts[1] {
                Split::Val
            } else {
                Split::Test
            };
            manifest.insert(study, split);
        }
    }

    let mut result = PartitionResult {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        manifest,
        warnings,
    };
    for dp in datapoints {
        match result.manifest[&dp.study_instance_uid] {
            Split::Train => result.train.push(dp),
            Split::Val => result.val.push(dp),
            Split::Test => result.test.push(dp),
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OversampleSpec {
    pub class_max_ratio: f64,
    pub vendor_max_ratio: f64,
    pub seed: u64,
}

impl Default for OversampleSpec {
    fn default() -> Self {
        OversampleSpec {
            class_max_ratio: 4.0,
            vendor_max_ratio: 2.0,
            seed: 0,
        }
    }
}

impl OversampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_max_ratio < 1.0 || self.vendor_max_ratio < 1.0 {
            return Err(Error::Config("oversample ratios must be >= 1".into()));
        }
        Ok(())
    }
}

/// Grow every group below ceil(max/ratio) by round-robin duplication over a
/// seeded shuffle of its original members. `groups` maps group key ->
/// original indices; `counts` are current totals per group.
fn grow_minorities<K: Ord + Clone>(
    plan: &mut Vec<usize>,
    groups: &BTreeMap<K, Vec<usize>>,
    counts: &mut BTreeMap<K, usize>,
    ratio: f64,
    seed: u64,
    pass: u64,
) {
    let max = counts.values().copied().max().unwrap_or(0);
    let target = (max as f64 / ratio).ceil() as usize;
    for (gi, (key, originals)) in groups.iter().enumerate() {
        let current = counts[key];
        if current >= target {
            continue;
        }
        let mut order = originals.clone();
        let s = derive_seed(seed, "oversample", &[pass, gi as u64]);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
        for i in 0..(target - current) {
            plan.push(order[i % order.len()]);
        }
        *counts.get_mut(key).unwrap() = target;
    }
}

/// Duplication plan over `(label, vendor)` tuples: the returned indices
/// always start with `0..n` (originals retained), followed by duplicates.
pub fn oversample_indices(items: &[(JointLabel, Vendor)], spec: &OversampleSpec) -> Vec<usize> {
    let mut plan: Vec<usize> = (0..items.len()).collect();
    if items.is_empty() {
        return plan;
    }
    let mut by_class: BTreeMap<JointLabel, Vec<usize>> = BTreeMap::new();
    let mut by_vendor: BTreeMap<Vendor, Vec<usize>> = BTreeMap::new();
    for (i, &(label, vendor)) in items.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
        by_vendor.entry(vendor).or_default().push(i);
    }

    let ratios_ok = |plan: &[usize]| {
        let mut c: BTreeMap<JointLabel, usize> = BTreeMap::new();
        let mut v: BTreeMap<Vendor, usize> = BTreeMap::new();
        for &i in plan {
            *c.entry(items[i].0).or_insert(0) += 1;
            *v.entry(items[i].1).or_insert(0) += 1;
        }
        fn bound<K>(m: &BTreeMap<K, usize>, r: f64) -> bool {
            let max = *m.values().max().unwrap() as f64;
            let min = *m.values().min().unwrap() as f64;
            max / min <= r + 1e-12
        }
        bound(&c, spec.class_max_ratio) && bound(&v, spec.vendor_max_ratio)
    };

    // class balancing can disturb vendor balance and vice versa; alternate
    // until both constraints hold (growth-only passes, converges quickly)
    for pass in 0..32u64 {
        let mut class_counts: BTreeMap<JointLabel, usize> = BTreeMap::new();
        let mut vendor_counts: BTreeMap<Vendor, usize> = BTreeMap::new();
        for &i in &plan {
            *class_counts.entry(items[i].0).or_insert(0) += 1;
        }
        grow_minorities(
            &mut plan,
            &by_class,
            &mut class_counts,
            spec.class_max_ratio,
            spec.seed,
            pass * 2,
        );
        for &i in &plan {
            *vendor_counts.entry(items[i].1).or_insert(0) += 1;
        }
        grow_minorities(
            &mut plan,
            &by_vendor,
            &mut vendor_counts,
            spec.vendor_max_ratio,
            spec.seed,
            pass * 2 + 1,
        );
        if ratios_ok(&plan) {
            break;
        }
    }
    plan
}

/// Materialized oversampling: originals plus duplicated minority datapoints.
pub fn oversample(train: &[Datapoint], spec: &OversampleSpec) -> Result<Vec<Datapoint>> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let items: Vec<(JointLabel, Vendor)> = train
        .iter()
        .map(|dp| Ok((require_label(dp)?, dp.vendor)))
        .collect::<Result<_>>()?;
    Ok(oversample_indices(&items, spec)
        .into_iter()
        .map(|i| train[i].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    /// Gaussian noise sigma upper bound, as a fraction of the [0,1] range.
    pub noise_sigma_max: f64,
    pub contrast_gamma_range: (f64, f64),
    pub rotation_max_deg: f64,
    pub scale_range: (f64, f64),
    pub translate_max_frac: f64,
    pub deform_grid: usize,
    pub deform_max_px: f64,
    pub channel_shuffle: bool,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            noise_sigma_max: 0.05,
            contrast_gamma_range: (0.7, 1.4),
            rotation_max_deg: 15.0,
            scale_range: (0.9, 1.1),
            translate_max_frac: 0.05,
            deform_grid: 4,
            deform_max_px: 8.0,
            channel_shuffle: true,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// Identity spec: a no-op augmentation that returns inputs bit-exactly.
    pub fn identity() -> Self {
        AugmentSpec {
            noise_sigma_max: 0.0,
            contrast_gamma_range: (1.0, 1.0),
            rotation_max_deg: 0.0,
            scale_range: (1.0, 1.0),
            translate_max_frac: 0.0,
            deform_grid: 0,
            deform_max_px: 0.0,
            channel_shuffle: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.noise_sigma_max >= 0.0
            && self.contrast_gamma_range.0 > 0.0
            && self.contrast_gamma_range.0 <= self.contrast_gamma_range.1
            && self.rotation_max_deg >= 0.0
            && self.scale_range.0 > 0.0
            && self.scale_range.0 <= self.scale_range.1
            && self.translate_max_frac >= 0.0
            && self.deform_max_px >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid augmentation magnitudes".into()))
        }
    }

    fn has_warp(&self) -> bool {
        self.rotation_max_deg > 0.0
            || self.scale_range != (1.0, 1.0)
            || self.translate_max_frac > 0.0
            || (self.deform_grid > 0 && self.deform_max_px > 0.0)
    }
}

fn sample_bilinear_clamped(img: &[f64], size: usize, y: f64, x: f64) -> f64 {
    let fy = y.clamp(0.0, (size - 1) as f64);
    let fx = x.clamp(0.0, (size - 1) as f64);
    let y0 = fy.floor() as usize;
    let x0 = fx.floor() as usize;
    let y1 = (y0 + 1).min(size - 1);
    let x1 = (x0 + 1).min(size - 1);
    let wy = fy - y0 as f64;
    let wx = fx - x0 as f64;
    let top = img[y0 * size + x0] * (1.0 - wx) + img[y0 * size + x1] * wx;
    let bot = img[y1 * size + x0] * (1.0 - wx) + img[y1 * size + x1] * wx;
    top * (1.0 - wy) + bot * wy
}

/// One stochastic training augmentation. Geometric transforms (shared
/// affine + shared smooth deformation field) are composed into a single
/// backward warp; then per-channel gamma, additive Gaussian noise, clamp to
/// [0,1], and optional channel-order shuffle. Label, study and vendor pass
/// through. With identity magnitudes each stage is skipped, so the output
/// is bit-exact to the input.
pub fn augment(dp: &Datapoint, spec: &AugmentSpec, rng: &mut ChaCha8Rng) -> Datapoint {
    let size = dp.size;
    let mut out = dp.clone();

    if spec.has_warp() {
        let theta = if spec.rotation_max_deg > 0.0 {
            rng.gen_range(-spec.rotation_max_deg..=spec.rotation_max_deg).to_radians()
        } else {
            0.0
        };
        let scale = if spec.scale_range != (1.0, 1.0) {
            rng.gen_range(spec.scale_range.0..=spec.scale_range.1)
        } else {
            1.0
        };
        let (tx, ty) = if spec.translate_max_frac > 0.0 {
            let t = spec.translate_max_frac * size as f64;
            (rng.gen_range(-t..=t), rng.gen_range(-t..=t))
        } else {
            (0.0, 0.0)
        };
        let grid = spec.deform_grid;
        let field: Vec<(f64, f64)> = if grid > 0 && spec.deform_max_px > 0.0 {
            (0..grid * grid)
                .map(|_| {
                    (
                        rng.gen_range(-spec.deform_max_px..=spec.deform_max_px),
                        rng.gen_range(-spec.deform_max_px..=spec.deform_max_px),
                    )
                })
                .collect()
        } else {
            Vec::new()
        };

        // backward map: inverse affine about the image center, then the
        // deformation displacement sampled from the control grid
        let c = (size as f64 - 1.0) / 2.0;
        let inv_s = 1.0 / scale;
        let (cos_t, sin_t) = (theta.cos(), theta.sin());
        let displacement = |y: f64, x: f64| -> (f64, f64) {
            if field.is_empty() {
                return (0.0, 0.0);
            }
            // control points span the image; bilinear interpolation
            let gy = y / (size - 1) as f64 * (grid - 1) as f64;
            let gx = x / (size - 1) as f64 * (grid - 1) as f64;
            let y0 = (gy.floor() as usize).min(grid - 1);
            let x0 = (gx.floor() as usize).min(grid - 1);
            let y1 = (y0 + 1).min(grid - 1);
            let x1 = (x0 + 1).min(grid - 1);
            let wy = gy - y0 as f64;
            let wx = gx - x0 as f64;
            let pick = |yy: usize, xx: usize| field[yy * grid + xx];
            let lerp = |a: (f64, f64), b: (f64, f64), w: f64| {
                (a.0 * (1.0 - w) + b.0 * w, a.1 * (1.0 - w) + b.1 * w)
            };
            let top = lerp(pick(y0, x0), pick(y0, x1), wx);
            let bot = lerp(pick(y1, x0), pick(y1, x1), wx);
            lerp(top, bot, wy)
        };

        let mut channels: Vec<Vec<f64>> = (0..3).map(|ch| dp.channel(ch)).collect();
        for ch_img in channels.iter_mut() {
            let src = ch_img.clone();
            for oy in 0..size {
                for ox in 0..size {
                    let (dy, dx) = displacement(oy as f64, ox as f64);
                    // invert rotation+scale about center, subtract translation
                    let py = oy as f64 + dy - c - ty;
                    let px = ox as f64 + dx - c - tx;
                    let sy = (cos_t * py - sin_t * px) * inv_s + c;
                    let sx = (sin_t * py + cos_t * px) * inv_s + c;
                    ch_img[oy * size + ox] = sample_bilinear_clamped(&src, size, sy, sx);
                }
            }
        }
        for ch in 0..3 {
            for i in 0..size * size {
                out.pixels[i * 3 + ch] = channels[ch][i];
            }
        }
    }

    if spec.contrast_gamma_range != (1.0, 1.0) {
        for ch in 0..3 {
            let gamma = rng.gen_range(spec.contrast_gamma_range.0..=spec.contrast_gamma_range.1);
            for i in 0..size * size {
                let v = &mut out.pixels[i * 3 + ch];
                *v = v.max(0.0).powf(gamma);
            }
        }
    }

    if spec.noise_sigma_max > 0.0 {
        let sigma = rng.gen_range(0.0..=spec.noise_sigma_max);
        for v in out.pixels.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += n * sigma;
        }
        for v in out.pixels.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    if spec.channel_shuffle {
        let mut perm = [0usize, 1, 2];
        perm.shuffle(rng);
        if perm != [0, 1, 2] {
            let before = out.pixels.clone();
            for i in 0..size * size {
                for ch in 0..3 {
                    out.pixels[i * 3 + ch] = before[i * 3 + perm[ch]];
                }
            }
        }
    }

    out
}

/// Write the study -> split manifest as pretty JSON.
pub fn write_split_manifest(path: &std::path::Path, result: &PartitionResult) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        studies: &'a BTreeMap<String, Split>,
        warnings: &'a [String],
    }
    let text = serde_json::to_string_pretty(&Manifest {
        studies: &result.manifest,
        warnings: &result.warnings,
    })
    .expect("manifest serialization");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::{PlaneClass, SequenceClass};

    fn label(seq: SequenceClass, plane: PlaneClass) -> JointLabel {
        JointLabel::new(seq, plane).unwrap()
    }

    fn dp(study: &str, l: JointLabel, vendor: Vendor) -> Datapoint {
        Datapoint {
            pixels: vec![0.5; 4 * 4 * 3],
            size: 4,
            label: LabelOutcome::Labeled(l),
            study_instance_uid: study.into(),
            vendor,
            source_series: format!("{study}::series"),
        }
    }

    fn cine_sa() -> JointLabel {
        label(SequenceClass::CineBSSFP, PlaneClass::ShortAxis)
    }

    #[test]
    fn largest_remainder_examples() {
        let spec = SplitSpec::default();
        // 25 * (0.64, 0.16, 0.20) is integral
        assert_eq!(largest_remainder(25, &spec), [16, 4, 5]);
        // 10 -> (6.4, 1.6, 2.0) -> floors (6,1,2), leftover to val
        assert_eq!(largest_remainder(10, &spec), [6, 2, 2]);
        // 3 -> (1.92, 0.48, 0.60): floors (1,0,0), leftovers by remainder
        assert_eq!(largest_remainder(3, &spec), [2, 0, 1]);
    }

    #[test]
    fn partition_is_study_disjoint_and_conserving() {
        let mut dps = Vec::new();
        for s in 0..10 {
            for k in 0..3 {
                let mut d = dp(&format!("study{s}"), cine_sa(), Vendor::VendorA);
                d.source_series = format!("study{s}::se{k}");
                dps.push(d);
            }
        }
        for seed in 0..20u64 {
            let spec = SplitSpec { seed, ..SplitSpec::default() };
            let r = partition(dps.clone(), &spec).unwrap();
            assert_eq!(r.train.len() + r.val.len() + r.test.len(), dps.len());
            let set = |v: &[Datapoint]| {
                v.iter().map(|d| d.study_instance_uid.clone()).collect::<BTreeSet<_>>()
            };
            let (a, b, c) = (set(&r.train), set(&r.val), set(&r.test));
            assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            // 10 single-label studies -> 6/2/2
            assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        }
    }

    #[test]
    fn twenty_five_studies_split_16_4_5() {
        let dps: Vec<_> = (0..25)
            .map(|s| dp(&format!("st{s:02}"), cine_sa(), Vendor::VendorA))
            .collect();
        let r = partition(dps, &SplitSpec::default()).unwrap();
        assert_eq!((r.train.len(), r.val.len(), r.test.len()), (16, 4, 5));
    }

    #[test]
    fn small_stratum_goes_to_train_with_warning() {
        let rare = label(SequenceClass::HASTE, PlaneClass::Axial);
        let mut dps: Vec<_> = (0..10)
            .map(|s| dp(&format!("st{s}"), cine_sa(), Vendor::VendorA))
            .collect();
        dps.push(dp("rare1", rare, Vendor::VendorA));
        dps.push(dp("rare2", rare, Vendor::VendorA));
        let r = partition(dps, &SplitSpec::default()).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.manifest["rare1"], Split::Train);
        assert_eq!(r.manifest["rare2"], Split::Train);
    }

    #[test]
    fn partition_preconditions() {
        assert!(matches!(
            partition(Vec::new(), &SplitSpec::default()),
            Err(Error::EmptyInput)
        ));
        let two = vec![
            dp("a", cine_sa(), Vendor::VendorA),
            dp("b", cine_sa(), Vendor::VendorA),
        ];
        assert!(matches!(
            partition(two, &SplitSpec::default()),
            Err(Error::InsufficientStudies(_))
        ));
        let mut unl = vec![
            dp("a", cine_sa(), Vendor::VendorA),
            dp("b", cine_sa(), Vendor::VendorA),
            dp("c", cine_sa(), Vendor::VendorA),
        ];
        unl[1].label = LabelOutcome::Unlabeled;
        assert!(partition(unl, &SplitSpec::default()).is_err());
    }

    #[test]
    fn multi_label_study_strata_by_rarest_label() {
        // one study holds both a common and a rare label; it must land in
        // the rare stratum (here: sent to train because the stratum is tiny)
        let rare = label(SequenceClass::B0Map, PlaneClass::Axial);
        let mut dps: Vec<_> = (0..12)
            .map(|s| dp(&format!("st{s:02}"), cine_sa(), Vendor::VendorA))
            .collect();
        dps.push(dp("st00", rare, Vendor::VendorA));
        let r = partition(dps, &SplitSpec::default()).unwrap();
        assert_eq!(r.manifest["st00"], Split::Train);
    }

    #[test]
    fn oversample_class_examples() {
        let spec = OversampleSpec::default();
        let a = cine_sa();
        let b = label(SequenceClass::HASTE, PlaneClass::Axial);
        let mut items = vec![(a, Vendor::VendorA); 100];
        items.extend(vec![(b, Vendor::VendorA); 10]);
        let plan = oversample_indices(&items, &spec);
        let count_b = plan.iter().filter(|&&i| items[i].0 == b).count();
        assert_eq!(count_b, 25); // ceil(100/4)
        let count_a = plan.iter().filter(|&&i| items[i].0 == a).count();
        assert_eq!(count_a, 100);

        // boundary no-op at exactly 1:4
        let mut items = vec![(a, Vendor::VendorA); 40];
        items.extend(vec![(b, Vendor::VendorA); 10]);
        assert_eq!(oversample_indices(&items, &spec).len(), 50);
    }

    #[test]
    fn oversample_vendor_example() {
        let spec = OversampleSpec::default();
        let a = cine_sa();
        let mut items = vec![(a, Vendor::VendorA); 200];
        items.extend(vec![(a, Vendor::VendorB); 60]);
        let plan = oversample_indices(&items, &spec);
        let count_b = plan.iter().filter(|&&i| items[i].1 == Vendor::VendorB).count();
        assert_eq!(count_b, 100);
    }

    #[test]
    fn oversample_retains_all_originals_and_meets_both_ratios() {
        let spec = OversampleSpec::default();
        let labels = [
            cine_sa(),
            label(SequenceClass::HASTE, PlaneClass::Axial),
            label(SequenceClass::MOLLIPost, PlaneClass::ShortAxis),
            label(SequenceClass::B0Map, PlaneClass::Axial),
        ];
        let vendors = [Vendor::VendorA, Vendor::VendorB, Vendor::VendorC];
        for trial in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let mut items = Vec::new();
            for &l in &labels {
                let n = rng.gen_range(1..200usize);
                for _ in 0..n {
                    items.push((l, vendors[rng.gen_range(0..3)]));
                }
            }
            let plan = oversample_indices(&items, &spec);
            for i in 0..items.len() {
                assert!(plan.contains(&i), "original {i} lost in trial {trial}");
            }
            let mut c: BTreeMap<JointLabel, usize> = BTreeMap::new();
            let mut v: BTreeMap<Vendor, usize> = BTreeMap::new();
            for &i in &plan {
                *c.entry(items[i].0).or_insert(0) += 1;
                *v.entry(items[i].1).or_insert(0) += 1;
            }
            fn ratio<K>(m: &BTreeMap<K, usize>) -> f64 {
                *m.values().max().unwrap() as f64 / *m.values().min().unwrap() as f64
            }
            assert!(ratio(&c) <= 4.0 + 1e-12, "class ratio breach in trial {trial}");
            assert!(ratio(&v) <= 2.0 + 1e-12, "vendor ratio breach in trial {trial}");
        }
    }

    fn textured_dp() -> Datapoint {
        let size = 16;
        let mut d = Datapoint {
            pixels: vec![0.0; size * size * 3],
            size,
            label: LabelOutcome::Labeled(cine_sa()),
            study_instance_uid: "st".into(),
            vendor: Vendor::VendorA,
            source_series: "se".into(),
        };
        for y in 0..size {
            for x in 0..size {
                for c in 0..3 {
                    d.pixels[(y * size + x) * 3 + c] =
                        ((y * 7 + x * 3 + c * 5) % 11) as f64 / 10.0;
                }
            }
        }
        d
    }

    #[test]
    fn identity_augmentation_is_bitwise() {
        let d = textured_dp();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&d, &AugmentSpec::identity(), &mut rng);
        assert_eq!(out.pixels, d.pixels);
    }

    #[test]
    fn channel_shuffle_is_pixel_exact_permutation() {
        let d = textured_dp();
        let spec = AugmentSpec {
            channel_shuffle: true,
            ..AugmentSpec::identity()
        };
        // find a seed that produces a non-identity permutation
        let mut permuted = false;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = augment(&d, &spec, &mut rng);
            let chans: Vec<Vec<f64>> = (0..3).map(|c| out.channel(c)).collect();
            let orig: Vec<Vec<f64>> = (0..3).map(|c| d.channel(c)).collect();
            let mut mapping = Vec::new();
            for ch in &chans {
                let m = orig.iter().position(|o| o == ch).expect("channel must be exact copy");
                mapping.push(m);
            }
            mapping.sort();
            assert_eq!(mapping, vec![0, 1, 2]);
            if out.pixels != d.pixels {
                permuted = true;
            }
        }
        assert!(permuted);
    }

    #[test]
    fn augmentation_deterministic_and_contract_preserving() {
        let d = textured_dp();
        let spec = AugmentSpec { seed: 7, ..AugmentSpec::default() };
        let a = augment(&d, &spec, &mut ChaCha8Rng::seed_from_u64(42));
        let b = augment(&d, &spec, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a.pixels, b.pixels);
        assert_ne!(a.pixels, d.pixels);
        assert_eq!(a.label, d.label);
        assert_eq!(a.size, d.size);
        assert_eq!(a.study_instance_uid, d.study_instance_uid);
        assert!(a.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let c = augment(&d, &spec, &mut ChaCha8Rng::seed_from_u64(43));
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn split_manifest_round_trips() {
        let dps: Vec<_> = (0..5)
            .map(|s| dp(&format!("st{s}"), cine_sa(), Vendor::VendorA))
            .collect();
        let r = partition(dps, &SplitSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        write_split_manifest(&path, &r).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["studies"].as_object().unwrap().len(), 5);
    }
}
