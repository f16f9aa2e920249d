//! Deterministic synthetic dataset generator. Each sequence class maps to a
//! fixed parametric texture family and each plane class to a global
//! geometry (rotation + aspect), so the classification task is learnable at
//! desk scale while per-study nuisance variation (intensity, mild rotation,
//! noise) keeps it non-trivial.
//!
//! Texture map (sequence -> family):
//!   CineBSSFP ring | DBLGE gradient field | FST2 noise band |
//!   WBLGE checker | MOLLINative radial sinusoid | MOLLIPost blob cluster |
//!   T2StarMap stripe set | Perfusion bright disc at a fixed location |
//!   (remaining classes get distinct auxiliary patterns)

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::dicom::{
    write::{pack_u16, write_dicom_fixture},
    FixtureSpec, Vendor,
};
use crate::error::{Error, Result};
use crate::labeling::{JointLabel, PlaneClass, SequenceClass};
use crate::preprocess::write_pgm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WriteFormat {
    DicomFixture,
    PgmTriplet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub classes: Vec<JointLabel>,
    pub studies_per_class: usize,
    /// inclusive (min, max) slices per series
    pub slices_per_series: (usize, usize),
    pub image_size: (usize, usize),
    pub seed: u64,
    pub write_format: WriteFormat,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            classes: default_classes(),
            studies_per_class: 10,
            slices_per_series: (8, 8),
            image_size: (96, 96),
            seed: 0,
            write_format: WriteFormat::DicomFixture,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.studies_per_class == 0 {
            return Err(Error::Config("phantom spec needs classes and studies".into()));
        }
        if self.slices_per_series.0 == 0 || self.slices_per_series.0 > self.slices_per_series.1 {
            return Err(Error::Config("bad slices_per_series range".into()));
        }
        if self.image_size.0 < 8 || self.image_size.1 < 8 {
            return Err(Error::Config("image_size too small".into()));
        }
        for c in &self.classes {
            JointLabel::new(c.sequence, c.plane)?;
        }
        Ok(())
    }
}

/// The default 20-class subset: four multi-plane sequences over four
/// planes, plus four short-axis-only mapping/perfusion sequences.
pub fn default_classes() -> Vec<JointLabel> {
    use PlaneClass as P;
    use SequenceClass as S;
    let mut out = Vec::new();
    for seq in [S::CineBSSFP, S::DBLGE, S::FST2, S::WBLGE] {
        for plane in [P::TwoChamber, P::ThreeChamber, P::FourChamber, P::ShortAxis] {
            out.push(JointLabel::new(seq, plane).unwrap());
        }
    }
    for seq in [S::MOLLINative, S::MOLLIPost, S::Perfusion, S::T2StarMap] {
        out.push(JointLabel::new(seq, P::ShortAxis).unwrap());
    }
    out
}

/// Series description understood by the default label map.
pub fn class_description(label: JointLabel) -> String {
    use PlaneClass as P;
    use SequenceClass as S;
    let seq = match label.sequence {
        S::B0Map => "B0",
        S::CineBSSFP => "CINE",
        S::DBLGE => "DBLGE",
        S::EGE => "EGE",
        S::FST2 => "FST2",
        S::HASTE => "HASTE",
        S::MOLLINative => "MOLLI NATIVE",
        S::MOLLIPost => "MOLLI POST",
        S::Perfusion => "PERF",
        S::PhaseContrast => "PC",
        S::ScoutImaging => "SCOUT",
        S::T2MapBright => "T2MAP BRIGHT",
        S::T2MapDark => "T2MAP DARK",
        S::T2StarMap => "T2STAR",
        S::TIScout => "TI_SCOUT",
        S::TestPerfusion => "TEST PERF",
        S::WBLGE => "WBLGE",
    };
    let plane = match label.plane {
        P::Aorta => "AO",
        P::Axial => "AXIAL",
        P::FourChamber => "4CH",
        P::LVOT => "LVOT",
        P::MPA => "MPA",
        P::Multiplanar => "MULTI",
        P::RVOT => "RVOT",
        P::ShortAxis => "SA",
        P::ThreeChamber => "3CH",
        P::TwoChamber => "2CH",
    };
    format!("{seq} {plane}")
}

/// Plane -> (rotation degrees, aspect x, aspect y).
fn plane_geometry(plane: PlaneClass) -> (f64, f64, f64) {
    use PlaneClass as P;
    match plane {
        P::TwoChamber => (0.0, 1.0, 1.0),
        P::ThreeChamber => (0.0, 1.0, 0.55),
        P::FourChamber => (0.0, 0.55, 1.0),
        P::ShortAxis => (45.0, 0.6, 0.6),
        P::Axial => (0.0, 0.9, 0.6),
        P::LVOT => (20.0, 1.0, 0.8),
        P::RVOT => (-20.0, 0.8, 1.0),
        P::Aorta => (10.0, 0.65, 0.65),
        P::MPA => (-10.0, 0.9, 0.9),
        P::Multiplanar => (30.0, 1.0, 0.7),
    }
}

/// Fixed location of the discriminative bright disc (texture coordinates).
pub const PERFUSION_DISC_CENTER: (f64, f64) = (0.35, -0.30);
pub const PERFUSION_DISC_RADIUS: f64 = 0.40;
const NOISE_GRID: usize = 16;

fn texture_value(
    seq: SequenceClass,
    uu: f64,
    vv: f64,
    slice_phase: f64,
    noise_grid: &[f64],
) -> f64 {
    use SequenceClass as S;
    let r = (uu * uu + vv * vv).sqrt();
    let angle = vv.atan2(uu);
    match seq {
        S::CineBSSFP => {
            // gaussian ring plus a small center blob
            let ring = (-((r - 0.6) * (r - 0.6)) / (2.0 * 0.08 * 0.08)).exp();
            let center = (-(r * r) / (2.0 * 0.12 * 0.12)).exp() * 0.6;
            (ring + center).min(1.0)
        }
        // diagonal so that both aspect axes influence the image
        S::DBLGE => ((uu + 0.6 * vv + 1.6) / 3.2).clamp(0.0, 1.0),
        S::FST2 => {
            // band with a soft edge; a hard cut would flip pixels under
            // small nuisance rotations
            let edge = ((0.35 - vv.abs()) / 0.12).clamp(0.0, 1.0);
            if edge > 0.0 {
                // bilinear grid lookup keeps the band smooth under small rotations
                let fy = ((vv + 1.0) / 2.0 * (NOISE_GRID - 1) as f64)
                    .clamp(0.0, (NOISE_GRID - 1) as f64);
                let fx = ((uu + 1.0) / 2.0 * (NOISE_GRID - 1) as f64)
                    .clamp(0.0, (NOISE_GRID - 1) as f64);
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(NOISE_GRID - 1), (x0 + 1).min(NOISE_GRID - 1));
                let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                let g = |y: usize, x: usize| noise_grid[y * NOISE_GRID + x];
                let top = g(y0, x0) * (1.0 - tx) + g(y0, x1) * tx;
                let bot = g(y1, x0) * (1.0 - tx) + g(y1, x1) * tx;
                let grain = top * (1.0 - ty) + bot * ty;
                // low-frequency carrier so the horizontal scale of the band
                // is visible through the grain
                let carrier = 0.5 + 0.5 * (1.5 * std::f64::consts::PI * uu).sin();
                let band = 0.15 + 0.55 * carrier + 0.25 * grain;
                0.08 + edge * (band - 0.08)
            } else {
                0.08
            }
        }
        S::WBLGE => {
            // smooth checkerboard; hard edges would be overly rotation-sensitive
            let f = 1.5 * std::f64::consts::PI;
            0.5 + 0.38 * (f * uu).sin() * (f * vv).sin()
        }
        S::MOLLINative => (0.5 + 0.5 * (6.0 * angle).sin()) * (-(r * r) / 0.8).exp(),
        S::MOLLIPost => {
            const BLOBS: [(f64, f64); 5] =
                [(-0.5, -0.5), (0.5, -0.4), (-0.4, 0.5), (0.45, 0.5), (0.0, 0.0)];
            let mut v: f64 = 0.05;
            for &(bx, by) in &BLOBS {
                let d2 = (uu - bx) * (uu - bx) + (vv - by) * (vv - by);
                v += 0.9 * (-d2 / (2.0 * 0.13 * 0.13)).exp();
            }
            v.min(1.0)
        }
        S::Perfusion => {
            let (cx, cy) = PERFUSION_DISC_CENTER;
            let d2 = (uu - cx) * (uu - cx) + (vv - cy) * (vv - cy);
            if d2.sqrt() < PERFUSION_DISC_RADIUS {
                0.95
            } else {
                0.08
            }
        }
        S::T2StarMap => 0.5 + 0.5 * (2.0 * std::f64::consts::PI * uu + slice_phase).sin(),
        S::B0Map => 0.5 + 0.5 * uu * vv,
        S::EGE => 0.5 + 0.5 * (3.0 * uu).cos(),
        S::HASTE => {
            let m = uu.abs().max(vv.abs());
            if ((m * 4.0).floor() as i64) % 2 == 0 {
                0.8
            } else {
                0.15
            }
        }
        S::PhaseContrast => 0.5 + 0.5 * (4.0 * std::f64::consts::PI * r * r).sin(),
        S::ScoutImaging => {
            if uu.abs() < 0.12 || vv.abs() < 0.12 {
                0.9
            } else {
                0.1
            }
        }
        S::T2MapBright => {
            // localized-shape family: the Perfusion disc plus the
            // TestPerfusion dot; against TestPerfusion alone the disc is
            // the only discriminative evidence in the image
            let (cx, cy) = PERFUSION_DISC_CENTER;
            let d = ((uu - cx) * (uu - cx) + (vv - cy) * (vv - cy)).sqrt();
            let e = ((uu + 0.35) * (uu + 0.35) + (vv - 0.30) * (vv - 0.30)).sqrt();
            if d < PERFUSION_DISC_RADIUS || e < 0.08 {
                0.95
            } else {
                0.08
            }
        }
        S::T2MapDark => {
            // localized-shape family: a bright horizontal bar
            if (uu + 0.35).abs() < 0.50 && (vv + 0.30).abs() < 0.09 {
                0.95
            } else {
                0.08
            }
        }
        S::TIScout => ((uu + vv + 2.0) / 4.0).clamp(0.0, 1.0),
        S::TestPerfusion => {
            // localized-shape family (with T2MapBright): a small bright dot
            // at the location mirroring the disc anchor, on the same dark
            // background and with the same peak intensity as the disc
            let d = ((uu + 0.35) * (uu + 0.35) + (vv - 0.30) * (vv - 0.30)).sqrt();
            if d < 0.08 {
                0.95
            } else {
                0.08
            }
        }
    }
}

/// Map image pixel (y, x) to texture coordinates under the plane geometry
/// and an extra nuisance rotation.
fn image_to_texture(
    y: usize,
    x: usize,
    h: usize,
    w: usize,
    plane: PlaneClass,
    nuisance_rot_deg: f64,
) -> (f64, f64) {
    let (rot, ax, ay) = plane_geometry(plane);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let half = 0.5 * h.min(w) as f64;
    let ny = (y as f64 - cy) / half;
    let nx = (x as f64 - cx) / half;
    let t = -(rot + nuisance_rot_deg).to_radians();
    let rx = t.cos() * nx - t.sin() * ny;
    let ry = t.sin() * nx + t.cos() * ny;
    (rx / ax, ry / ay)
}

/// Render one slice as u16 values in [0, 1000].
#[allow(clippy::too_many_arguments)]
fn render_slice(
    label: JointLabel,
    h: usize,
    w: usize,
    slice_phase: f64,
    nuisance_rot_deg: f64,
    intensity_scale: f64,
    intensity_offset: f64,
    noise_sigma: f64,
    noise_grid: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<u16> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (uu, vv) = image_to_texture(y, x, h, w, label.plane, nuisance_rot_deg);
            let mut v = texture_value(label.sequence, uu, vv, slice_phase, noise_grid);
            v = v * intensity_scale + intensity_offset;
            if noise_sigma > 0.0 {
                v += rng.gen_range(-1.0f64..1.0) * noise_sigma;
            }
            out.push((v.clamp(0.0, 1.2) * 1000.0).round() as u16);
        }
    }
    out
}

/// Boolean mask over a size x size image marking the (dilated) region of
/// the Perfusion disc under the short-axis geometry, for attention-map
/// localization checks. Dilation absorbs nuisance rotation and resampling
/// blur.
pub fn perfusion_disc_mask(size: usize) -> Vec<bool> {
    let (cx, cy) = PERFUSION_DISC_CENTER;
    let radius = PERFUSION_DISC_RADIUS * 1.8;
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let (uu, vv) = image_to_texture(y, x, size, size, PlaneClass::ShortAxis, 0.0);
            let d2 = (uu - cx) * (uu - cx) + (vv - cy) * (vv - cy);
            mask[y * size + x] = d2.sqrt() < radius;
        }
    }
    mask
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSeries {
    /// Matches the group key the ingest pipeline derives for these files.
    pub series_key: String,
    pub study_uid: String,
    pub vendor: Vendor,
    pub sequence: SequenceClass,
    pub plane: PlaneClass,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub series: Vec<PhantomSeries>,
}

pub fn load_manifest(path: &Path) -> Result<PhantomManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad phantom manifest: {e}")))
}

/// Render and write one study's series; all randomness comes from a seed
/// derived from the class and study indices.
fn generate_series(
    spec: &PhantomSpec,
    out_dir: &Path,
    noise_grid: &[f64],
    ci: usize,
    label: JointLabel,
    si: usize,
) -> Result<PhantomSeries> {
    let (h, w) = spec.image_size;
    let seed = derive_seed(spec.seed, "phantom-series", &[ci as u64, si as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let study_uid = format!("1.2.826.0.1.{}.{}", ci + 1, si + 1);
    let series_uid = format!("{study_uid}.100");
    let vendor_b = si % 2 == 1;
    let manufacturer = if vendor_b {
        "Vendor Beta Systems"
    } else {
        "Vendor Alpha Medical"
    };
    let description = class_description(label);
    let n_slices = rng.gen_range(spec.slices_per_series.0..=spec.slices_per_series.1);
    let nuisance_rot = rng.gen_range(-2.5f64..=2.5);
    let intensity_scale = rng.gen_range(0.7f64..=1.0);
    let intensity_offset = rng.gen_range(0.0f64..=0.15);
    let noise_sigma = rng.gen_range(0.005f64..=0.015);

    let dir = out_dir.join(&study_uid).join("s100");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::with_capacity(n_slices);
    for slice in 0..n_slices {
        let phase = slice as f64 / n_slices as f64 * std::f64::consts::TAU * 0.25;
        let pixels = render_slice(
            label,
            h,
            w,
            phase,
            nuisance_rot + slice as f64 * 0.2,
            intensity_scale,
            intensity_offset,
            noise_sigma,
            noise_grid,
            &mut rng,
        );
        match spec.write_format {
            WriteFormat::DicomFixture => {
                // vendor B: split the series into two UIDs sharing the
                // protocol name
                let this_uid = if vendor_b && slice >= n_slices / 2 {
                    format!("{study_uid}.101")
                } else {
                    series_uid.clone()
                };
                let fixture = FixtureSpec {
                    manufacturer: manufacturer.into(),
                    study_instance_uid: study_uid.clone(),
                    series_instance_uid: this_uid,
                    series_description: description.clone(),
                    protocol_name: Some(description.clone()),
                    instance_number: (slice + 1) as u32,
                    rows: h,
                    columns: w,
                    pixel_data: pack_u16(&pixels),
                    ..FixtureSpec::default()
                };
                let path = dir.join(format!("img{:03}.dcm", slice + 1));
                std::fs::write(&path, write_dicom_fixture(&fixture))
                    .map_err(|e| Error::io(&path, e))?;
                files.push(path);
            }
            WriteFormat::PgmTriplet => {
                let img: Vec<f64> = pixels.iter().map(|&v| v as f64 / 1200.0).collect();
                let path = dir.join(format!("img{:03}.pgm", slice + 1));
                write_pgm(&path, &img, h, w)?;
                files.push(path);
            }
        }
    }
    let series_key = if vendor_b && spec.write_format == WriteFormat::DicomFixture {
        format!("{study_uid}::protocol:{description}")
    } else {
        format!("{study_uid}::series:{series_uid}")
    };
    Ok(PhantomSeries {
        series_key,
        study_uid,
        vendor: if vendor_b { Vendor::VendorB } else { Vendor::VendorA },
        sequence: label.sequence,
        plane: label.plane,
        files,
    })
}

/// Generate the dataset into `out_dir` and write `manifest.json` there.
///
/// Studies alternate manufacturers: even studies export combined series
/// ("Vendor Alpha"), odd studies split each series across two series UIDs
/// that share a protocol name ("Vendor Beta"), exercising the merge rule.
pub fn generate(spec: &PhantomSpec, out_dir: &Path) -> Result<PhantomManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    // one noise pattern per run: the noise band is a stable class
    // fingerprint, not per-series variance
    let mut grid_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "noise-grid", &[]));
    let noise_grid: Vec<f64> =
        (0..NOISE_GRID * NOISE_GRID).map(|_| grid_rng.gen::<f64>()).collect();

    let jobs: Vec<(usize, JointLabel, usize)> = spec
        .classes
        .iter()
        .enumerate()
        .flat_map(|(ci, &label)| (0..spec.studies_per_class).map(move |si| (ci, label, si)))
        .collect();

    // series are self-contained (derived seeds), so they can render on any
    // worker without affecting the output bytes
    let threads = crate::worker_threads().min(jobs.len()).max(1);
    let mut series: Vec<Option<PhantomSeries>> = (0..jobs.len()).map(|_| None).collect();
    if threads == 1 {
        for (slot, &(ci, label, si)) in jobs.iter().enumerate() {
            series[slot] = Some(generate_series(spec, out_dir, &noise_grid, ci, label, si)?);
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let (tx, rx) = std::sync::mpsc::channel::<(usize, Result<PhantomSeries>)>();
        std::thread::scope(|scope| {
            for _ in 0..threads {
                let tx = tx.clone();
                let (next, jobs, noise_grid) = (&next, &jobs, &noise_grid);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    let Some(&(ci, label, si)) = jobs.get(i) else { break };
                    let r = generate_series(spec, out_dir, noise_grid, ci, label, si);
                    if tx.send((i, r)).is_err() {
                        break;
                    }
                });
            }
        });
        drop(tx);
        for (slot, r) in rx {
            series[slot] = Some(r?);
        }
    }
    let series: Vec<PhantomSeries> = series
        .into_iter()
        .map(|s| s.expect("every job completed"))
        .collect();

    let manifest = PhantomManifest { series };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
