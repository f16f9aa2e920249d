//! Part-10 reader for explicit and implicit VR little endian,
//! uncompressed pixel data. Anything else is an explicit error: compressed
//! transfer syntaxes surface data problems instead of being skipped.

use std::path::Path;

use crate::dicom::{DicomImageMeta, PixelRepresentation};
use crate::error::{Error, Result};

const IMPLICIT_LE: &str = "1.2.840.10008.1.2";
const EXPLICIT_LE: &str = "1.2.840.10008.1.2.1";

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::MalformedStream(format!(
                "truncated element at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn peek_u16(&self) -> Option<u16> {
        if self.remaining() < 2 {
            return None;
        }
        Some(u16::from_le_bytes([self.buf[self.pos], self.buf[self.pos + 1]]))
    }
}

struct Element<'a> {
    group: u16,
    element: u16,
    value: &'a [u8],
}

/// VRs carrying a 2-byte reserved field and 4-byte length in explicit VR.
fn is_long_vr(vr: &[u8]) -> bool {
    matches!(vr, b"OB" | b"OW" | b"OF" | b"SQ" | b"UT" | b"UN")
}

fn read_element<'a>(cur: &mut Cursor<'a>, explicit: bool) -> Result<Element<'a>> {
    let group = cur.u16()?;
    let element = cur.u16()?;
    let len = if explicit {
        let vr = cur.take(2)?;
        if !vr.iter().all(|b| b.is_ascii_uppercase()) {
            return Err(Error::MalformedStream(format!(
                "invalid VR bytes {vr:?} for tag ({group:04X},{element:04X})"
            )));
        }
        if is_long_vr(vr) {
            cur.take(2)?;
            cur.u32()?
        } else {
            cur.u16()? as u32
        }
    } else {
        cur.u32()?
    };
    if len == 0xFFFF_FFFF {
        return Err(Error::MalformedStream(format!(
            "undefined-length element ({group:04X},{element:04X}) unsupported"
        )));
    }
    let value = cur.take(len as usize)?;
    Ok(Element {
        group,
        element,
        value,
    })
}

fn string_value(v: &[u8]) -> String {
    String::from_utf8_lossy(v)
        .trim_end_matches(['\0', ' '])
        .trim_start()
        .to_string()
}

fn multi_string(v: &[u8]) -> Vec<String> {
    string_value(v)
        .split('\\')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn decimal_values(v: &[u8], tag: &str) -> Result<Vec<f64>> {
    multi_string(v)
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::MalformedStream(format!("bad decimal string {s:?} in {tag}")))
        })
        .collect()
}

fn ushort_value(v: &[u8], tag: &str) -> Result<u16> {
    if v.len() < 2 {
        return Err(Error::MalformedStream(format!("short US value in {tag}")));
    }
    Ok(u16::from_le_bytes([v[0], v[1]]))
}

/// Parse one DICOM stream. Accepts the 128-byte preamble + "DICM" form or a
/// stream starting directly at the group-2 file meta elements.
pub fn parse_dicom_header(bytes: &[u8], path: &Path) -> Result<DicomImageMeta> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if bytes.len() >= 132 && &bytes[128..132] == b"DICM" {
        cur.pos = 132;
    } else if cur.peek_u16() != Some(0x0002) {
        return Err(Error::MalformedStream(
            "no DICM magic and no leading group-2 meta element".into(),
        ));
    }

    // file meta group is always explicit VR little endian
    let mut transfer_syntax: Option<String> = None;
    while cur.peek_u16() == Some(0x0002) {
        let el = read_element(&mut cur, true)?;
        if el.element == 0x0010 {
            transfer_syntax = Some(string_value(el.value));
        }
    }
    let explicit = match transfer_syntax.as_deref() {
        Some(EXPLICIT_LE) => true,
        // headerless streams default to implicit little endian
        Some(IMPLICIT_LE) | None => false,
        Some(other) => return Err(Error::UnsupportedTransferSyntax(other.to_string())),
    };

    let mut meta = DicomImageMeta {
        file_path: path.to_path_buf(),
        series_description: String::new(),
        series_instance_uid: String::new(),
        instance_number: 0,
        protocol_name: None,
        manufacturer: String::new(),
        study_instance_uid: String::new(),
        sop_class_uid: None,
        image_position: None,
        image_orientation: None,
        image_type_terms: Vec::new(),
        rows: 0,
        columns: 0,
        samples_per_pixel: 1,
        pixel_bits_allocated: 16,
        pixel_representation: PixelRepresentation::Unsigned,
        rescale_slope: 1.0,
        rescale_intercept: 0.0,
        pixel_data: Vec::new(),
    };
    let mut saw_pixel_data = false;

    while cur.remaining() > 0 {
        let el = read_element(&mut cur, explicit)?;
        match (el.group, el.element) {
            (0x0008, 0x0008) => meta.image_type_terms = multi_string(el.value),
            (0x0008, 0x0016) => meta.sop_class_uid = Some(string_value(el.value)),
            (0x0008, 0x0070) => meta.manufacturer = string_value(el.value),
            (0x0008, 0x103E) => meta.series_description = string_value(el.value),
            (0x0018, 0x1030) => {
                let p = string_value(el.value);
                if !p.is_empty() {
                    meta.protocol_name = Some(p);
                }
            }
            (0x0020, 0x000D) => meta.study_instance_uid = string_value(el.value),
            (0x0020, 0x000E) => meta.series_instance_uid = string_value(el.value),
            (0x0020, 0x0013) => {
                let s = string_value(el.value);
                meta.instance_number = s.parse().map_err(|_| {
                    Error::MalformedStream(format!("bad InstanceNumber {s:?}"))
                })?;
            }
            (0x0020, 0x0032) => {
                let v = decimal_values(el.value, "ImagePositionPatient")?;
                if v.len() == 3 {
                    meta.image_position = Some([v[0], v[1], v[2]]);
                }
            }
            (0x0020, 0x0037) => {
                let v = decimal_values(el.value, "ImageOrientationPatient")?;
                if v.len() == 6 {
                    meta.image_orientation = Some([v[0], v[1], v[2], v[3], v[4], v[5]]);
                }
            }
            (0x0028, 0x0002) => meta.samples_per_pixel = ushort_value(el.value, "SamplesPerPixel")? as usize,
            (0x0028, 0x0010) => meta.rows = ushort_value(el.value, "Rows")? as usize,
            (0x0028, 0x0011) => meta.columns = ushort_value(el.value, "Columns")? as usize,
            (0x0028, 0x0100) => meta.pixel_bits_allocated = ushort_value(el.value, "BitsAllocated")?,
            (0x0028, 0x0103) => {
                meta.pixel_representation = match ushort_value(el.value, "PixelRepresentation")? {
                    0 => PixelRepresentation::Unsigned,
                    1 => PixelRepresentation::Signed,
                    other => {
                        return Err(Error::MalformedStream(format!(
                            "bad PixelRepresentation {other}"
                        )))
                    }
                };
            }
            (0x0028, 0x1052) => {
                let v = decimal_values(el.value, "RescaleIntercept")?;
                if let Some(&x) = v.first() {
                    meta.rescale_intercept = x;
                }
            }
            (0x0028, 0x1053) => {
                let v = decimal_values(el.value, "RescaleSlope")?;
                if let Some(&x) = v.first() {
                    meta.rescale_slope = x;
                }
            }
            (0x7FE0, 0x0010) => {
                meta.pixel_data = el.value.to_vec();
                saw_pixel_data = true;
            }
            _ => {} // tolerated and ignored
        }
    }

    if meta.series_instance_uid.is_empty() {
        return Err(Error::MissingMandatoryAttribute("SeriesInstanceUID"));
    }
    if meta.study_instance_uid.is_empty() {
        return Err(Error::MissingMandatoryAttribute("StudyInstanceUID"));
    }
    if !saw_pixel_data {
        return Err(Error::MissingMandatoryAttribute("PixelData"));
    }
    if meta.rows == 0 || meta.columns == 0 {
        return Err(Error::MissingMandatoryAttribute("Rows/Columns"));
    }
    if !matches!(meta.pixel_bits_allocated, 8 | 16) {
        return Err(Error::MalformedStream(format!(
            "BitsAllocated {} unsupported",
            meta.pixel_bits_allocated
        )));
    }
    let expected = meta.rows * meta.columns * meta.samples_per_pixel * (meta.pixel_bits_allocated as usize / 8);
    if meta.pixel_data.len() < expected {
        return Err(Error::MalformedStream(format!(
            "pixel data length {} < Rows*Columns expectation {}",
            meta.pixel_data.len(),
            expected
        )));
    }
    Ok(meta)
}
