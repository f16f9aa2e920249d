//! Minimal DICOM ingestion: Part-10 parsing of the attribute set the
//! pipeline needs, secondary-capture filtering, and vendor-aware grouping
//! of files into unique image series.

mod group;
mod parse;
pub mod write;

pub use group::{group_series, is_secondary_capture, sort_members};
pub use parse::parse_dicom_header;
pub use write::{write_dicom_fixture, FixtureSpec, TransferSyntax};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Secondary Capture Image Storage SOP class.
pub const SECONDARY_CAPTURE_SOP_CLASS: &str = "1.2.840.10008.5.1.4.1.1.7";
/// MR Image Storage SOP class, used by the fixture writer.
pub const MR_IMAGE_SOP_CLASS: &str = "1.2.840.10008.5.1.4.1.1.4";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelRepresentation {
    Unsigned,
    Signed,
}

/// The parsed attribute set for one image file, plus its raw pixel buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomImageMeta {
    pub file_path: std::path::PathBuf,
    pub series_description: String,
    pub series_instance_uid: String,
    pub instance_number: u32,
    pub protocol_name: Option<String>,
    pub manufacturer: String,
    pub study_instance_uid: String,
    pub sop_class_uid: Option<String>,
    pub image_position: Option<[f64; 3]>,
    pub image_orientation: Option<[f64; 6]>,
    pub image_type_terms: Vec<String>,
    pub rows: usize,
    pub columns: usize,
    pub samples_per_pixel: usize,
    pub pixel_bits_allocated: u16,
    pub pixel_representation: PixelRepresentation,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub pixel_data: Vec<u8>,
}

impl DicomImageMeta {
    /// Stored values with rescale slope/intercept applied, row major.
    pub fn decode_pixels(&self) -> Result<Vec<f64>> {
        let n = self.rows * self.columns * self.samples_per_pixel;
        let out: Vec<f64> = match self.pixel_bits_allocated {
            8 => {
                if self.pixel_data.len() < n {
                    return Err(Error::PixelDecodeFailure(format!(
                        "pixel buffer {} < expected {}",
                        self.pixel_data.len(),
                        n
                    )));
                }
                self.pixel_data[..n]
                    .iter()
                    .map(|&b| match self.pixel_representation {
                        PixelRepresentation::Unsigned => b as f64,
                        PixelRepresentation::Signed => b as i8 as f64,
                    })
                    .collect()
            }
            16 => {
                if self.pixel_data.len() < n * 2 {
                    return Err(Error::PixelDecodeFailure(format!(
                        "pixel buffer {} < expected {}",
                        self.pixel_data.len(),
                        n * 2
                    )));
                }
                self.pixel_data[..n * 2]
                    .chunks_exact(2)
                    .map(|c| {
                        let raw = u16::from_le_bytes([c[0], c[1]]);
                        match self.pixel_representation {
                            PixelRepresentation::Unsigned => raw as f64,
                            PixelRepresentation::Signed => raw as i16 as f64,
                        }
                    })
                    .collect()
            }
            other => {
                return Err(Error::PixelDecodeFailure(format!(
                    "unsupported bits allocated {other}"
                )))
            }
        };
        Ok(out
            .into_iter()
            .map(|v| v * self.rescale_slope + self.rescale_intercept)
            .collect())
    }

    /// Projection of the image position onto the slice normal, when both
    /// position and orientation are present.
    pub fn position_along_normal(&self) -> Option<f64> {
        let pos = self.image_position?;
        let o = self.image_orientation?;
        let row = [o[0], o[1], o[2]];
        let col = [o[3], o[4], o[5]];
        let normal = [
            row[1] * col[2] - row[2] * col[1],
            row[2] * col[0] - row[0] * col[2],
            row[0] * col[1] - row[1] * col[0],
        ];
        Some(pos[0] * normal[0] + pos[1] * normal[1] + pos[2] * normal[2])
    }
}

/// Vendor identity. `VendorA` and `VendorC` export sequences combined into a
/// single series; `VendorB` splits image types into separate series that
/// share a protocol name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vendor {
    VendorA,
    VendorB,
    VendorC,
    Unknown,
}

impl Vendor {
    /// Does this vendor merge series by shared protocol name?
    pub fn groups_by_protocol(self) -> bool {
        self == Vendor::VendorB
    }

    pub fn name(self) -> &'static str {
        match self {
            Vendor::VendorA => "VendorA",
            Vendor::VendorB => "VendorB",
            Vendor::VendorC => "VendorC",
            Vendor::Unknown => "Unknown",
        }
    }
}

impl std::fmt::Display for Vendor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered case-insensitive substring table mapping Manufacturer strings to
/// vendors. The mapping is total: no match means `Unknown`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VendorMap {
    pub rules: Vec<(String, Vendor)>,
}

impl Default for VendorMap {
    fn default() -> Self {
        VendorMap {
            rules: vec![
                ("philips".into(), Vendor::VendorA),
                ("siemens".into(), Vendor::VendorB),
                ("general electric".into(), Vendor::VendorC),
                ("ge medical".into(), Vendor::VendorC),
                ("ge healthcare".into(), Vendor::VendorC),
                ("vendor alpha".into(), Vendor::VendorA),
                ("vendor beta".into(), Vendor::VendorB),
                ("vendor gamma".into(), Vendor::VendorC),
            ],
        }
    }
}

impl VendorMap {
    pub fn classify(&self, manufacturer: &str) -> Vendor {
        let lower = manufacturer.to_ascii_lowercase();
        for (needle, vendor) in &self.rules {
            if lower.contains(needle.as_str()) {
                return *vendor;
            }
        }
        Vendor::Unknown
    }
}

/// One grouped image series with members in acquisition order.
#[derive(Debug, Clone)]
pub struct SeriesRecord {
    pub group_key: String,
    pub vendor: Vendor,
    pub study_instance_uid: String,
    pub members: Vec<DicomImageMeta>,
    pub representative_description: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vendor_mapping_is_total_and_case_insensitive() {
        let map = VendorMap::default();
        assert_eq!(map.classify("Philips Healthcare"), Vendor::VendorA);
        assert_eq!(map.classify("SIEMENS Medical"), Vendor::VendorB);
        assert_eq!(map.classify("GE HEALTHCARE"), Vendor::VendorC);
        assert_eq!(map.classify("Acme Scanners"), Vendor::Unknown);
        assert_eq!(map.classify(""), Vendor::Unknown);
    }

    #[test]
    fn protocol_grouping_only_for_vendor_b() {
        assert!(!Vendor::VendorA.groups_by_protocol());
        assert!(Vendor::VendorB.groups_by_protocol());
        assert!(!Vendor::VendorC.groups_by_protocol());
        assert!(!Vendor::Unknown.groups_by_protocol());
    }
}
