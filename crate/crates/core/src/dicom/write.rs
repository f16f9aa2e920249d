//! Fixture writer: assembles minimal, valid Part-10 files byte by byte.
//! Used by the phantom generator and by the parser round-trip tests; no
//! clinical data ships with this repository.

use crate::dicom::{PixelRepresentation, MR_IMAGE_SOP_CLASS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferSyntax {
    ExplicitVrLittleEndian,
    ImplicitVrLittleEndian,
}

impl TransferSyntax {
    fn uid(self) -> &'static str {
        match self {
            TransferSyntax::ExplicitVrLittleEndian => "1.2.840.10008.1.2.1",
            TransferSyntax::ImplicitVrLittleEndian => "1.2.840.10008.1.2",
        }
    }
}

/// Everything the writer needs for one file.
#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub transfer_syntax: TransferSyntax,
    pub sop_class_uid: String,
    pub image_type_terms: Vec<String>,
    pub manufacturer: String,
    pub series_description: String,
    pub protocol_name: Option<String>,
    pub study_instance_uid: String,
    pub series_instance_uid: String,
    pub instance_number: u32,
    pub image_position: Option<[f64; 3]>,
    pub image_orientation: Option<[f64; 6]>,
    pub rows: usize,
    pub columns: usize,
    pub bits_allocated: u16,
    pub pixel_representation: PixelRepresentation,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    /// Raw stored values, little endian, length rows*columns*(bits/8).
    pub pixel_data: Vec<u8>,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            transfer_syntax: TransferSyntax::ExplicitVrLittleEndian,
            sop_class_uid: MR_IMAGE_SOP_CLASS.to_string(),
            image_type_terms: vec!["ORIGINAL".into(), "PRIMARY".into()],
            manufacturer: "Vendor Alpha Medical".into(),
            series_description: "CINE SA".into(),
            protocol_name: None,
            study_instance_uid: "1.2.3.1".into(),
            series_instance_uid: "1.2.3.1.1".into(),
            instance_number: 1,
            image_position: None,
            image_orientation: None,
            rows: 4,
            columns: 4,
            bits_allocated: 16,
            pixel_representation: PixelRepresentation::Unsigned,
            rescale_slope: 1.0,
            rescale_intercept: 0.0,
            pixel_data: vec![0; 4 * 4 * 2],
        }
    }
}

fn pad_even(mut v: Vec<u8>, pad: u8) -> Vec<u8> {
    if v.len() % 2 == 1 {
        v.push(pad);
    }
    v
}

fn element(out: &mut Vec<u8>, explicit: bool, group: u16, elem: u16, vr: &[u8; 2], value: &[u8]) {
    out.extend_from_slice(&group.to_le_bytes());
    out.extend_from_slice(&elem.to_le_bytes());
    let long_vr = matches!(vr, b"OB" | b"OW" | b"OF" | b"SQ" | b"UT" | b"UN");
    if explicit {
        out.extend_from_slice(vr);
        if long_vr {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&(value.len() as u32).to_le_bytes());
        } else {
            out.extend_from_slice(&(value.len() as u16).to_le_bytes());
        }
    } else {
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    }
    out.extend_from_slice(value);
}

fn text(s: &str) -> Vec<u8> {
    pad_even(s.as_bytes().to_vec(), b' ')
}

fn uid(s: &str) -> Vec<u8> {
    pad_even(s.as_bytes().to_vec(), 0)
}

fn us(v: u16) -> Vec<u8> {
    v.to_le_bytes().to_vec()
}

fn ds(values: &[f64]) -> Vec<u8> {
    let s = values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join("\\");
    text(&s)
}

pub fn write_dicom_fixture(spec: &FixtureSpec) -> Vec<u8> {
    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");

    // file meta group: always explicit VR
    element(&mut out, true, 0x0002, 0x0002, b"UI", &uid(&spec.sop_class_uid));
    element(&mut out, true, 0x0002, 0x0010, b"UI", &uid(spec.transfer_syntax.uid()));

    let explicit = spec.transfer_syntax == TransferSyntax::ExplicitVrLittleEndian;
    let e = &mut out;
    element(e, explicit, 0x0008, 0x0008, b"CS", &text(&spec.image_type_terms.join("\\")));
    element(e, explicit, 0x0008, 0x0016, b"UI", &uid(&spec.sop_class_uid));
    element(e, explicit, 0x0008, 0x0060, b"CS", &text("MR"));
    element(e, explicit, 0x0008, 0x0070, b"LO", &text(&spec.manufacturer));
    element(e, explicit, 0x0008, 0x103E, b"LO", &text(&spec.series_description));
    if let Some(p) = &spec.protocol_name {
        element(e, explicit, 0x0018, 0x1030, b"LO", &text(p));
    }
    element(e, explicit, 0x0020, 0x000D, b"UI", &uid(&spec.study_instance_uid));
    element(e, explicit, 0x0020, 0x000E, b"UI", &uid(&spec.series_instance_uid));
    element(e, explicit, 0x0020, 0x0013, b"IS", &text(&spec.instance_number.to_string()));
    if let Some(pos) = spec.image_position {
        element(e, explicit, 0x0020, 0x0032, b"DS", &ds(&pos));
    }
    if let Some(o) = spec.image_orientation {
        element(e, explicit, 0x0020, 0x0037, b"DS", &ds(&o));
    }
    element(e, explicit, 0x0028, 0x0002, b"US", &us(1));
    element(e, explicit, 0x0028, 0x0010, b"US", &us(spec.rows as u16));
    element(e, explicit, 0x0028, 0x0011, b"US", &us(spec.columns as u16));
    element(e, explicit, 0x0028, 0x0100, b"US", &us(spec.bits_allocated));
    element(e, explicit, 0x0028, 0x0101, b"US", &us(spec.bits_allocated));
    element(e, explicit, 0x0028, 0x0102, b"US", &us(spec.bits_allocated - 1));
    element(
        e,
        explicit,
        0x0028,
        0x0103,
        b"US",
        &us(match spec.pixel_representation {
            PixelRepresentation::Unsigned => 0,
            PixelRepresentation::Signed => 1,
        }),
    );
    element(e, explicit, 0x0028, 0x1052, b"DS", &ds(&[spec.rescale_intercept]));
    element(e, explicit, 0x0028, 0x1053, b"DS", &ds(&[spec.rescale_slope]));
    let vr = if spec.bits_allocated == 8 { b"OB" } else { b"OW" };
    element(e, explicit, 0x7FE0, 0x0010, vr, &pad_even(spec.pixel_data.clone(), 0));
    out
}

/// Pack u16 stored values little endian.
pub fn pack_u16(values: &[u16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Pack i16 stored values little endian.
pub fn pack_i16(values: &[i16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}
