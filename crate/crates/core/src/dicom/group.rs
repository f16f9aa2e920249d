//! Secondary-capture filtering and vendor-aware series grouping.

use std::collections::BTreeMap;

use crate::dicom::{DicomImageMeta, SeriesRecord, VendorMap, SECONDARY_CAPTURE_SOP_CLASS};
use crate::error::{Error, Result};

/// Screenshots and derived renders are excluded from all grouping.
pub fn is_secondary_capture(meta: &DicomImageMeta) -> bool {
    meta.image_type_terms
        .iter()
        .any(|t| t.eq_ignore_ascii_case("SECONDARY"))
        || meta.sop_class_uid.as_deref() == Some(SECONDARY_CAPTURE_SOP_CLASS)
}

/// Acquisition order: projection along the mean slice normal when every
/// member carries position + orientation, then instance number, then file
/// path. The path tie-break makes the order total, so any permutation of
/// the same files sorts identically.
pub fn sort_members(members: &mut [DicomImageMeta]) {
    let use_position = !members.is_empty()
        && members.iter().all(|m| m.position_along_normal().is_some());
    members.sort_by(|a, b| {
        let key = |m: &DicomImageMeta| {
            (
                if use_position {
                    m.position_along_normal().unwrap()
                } else {
                    0.0
                },
                m.instance_number,
                m.file_path.clone(),
            )
        };
        let (pa, ia, fa) = key(a);
        let (pb, ib, fb) = key(b);
        pa.total_cmp(&pb).then(ia.cmp(&ib)).then(fa.cmp(&fb))
    });
}

/// Group parsed files into unique series. Secondary captures are dropped.
///
/// Combined-export vendors (A, C, Unknown) group by
/// (study UID, series UID). Split-export vendor B groups by
/// (study UID, protocol name) when a protocol name is present — merging
/// separate series that share one — and falls back to the series UID.
pub fn group_series(metas: Vec<DicomImageMeta>, vendor_map: &VendorMap) -> Result<Vec<SeriesRecord>> {
    if metas.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut groups: BTreeMap<String, Vec<DicomImageMeta>> = BTreeMap::new();
    for meta in metas {
        if is_secondary_capture(&meta) {
            continue;
        }
        let vendor = vendor_map.classify(&meta.manufacturer);
        let key = if vendor.groups_by_protocol() {
            match &meta.protocol_name {
                Some(p) => format!("{}::protocol:{}", meta.study_instance_uid, p),
                None => format!("{}::series:{}", meta.study_instance_uid, meta.series_instance_uid),
            }
        } else {
            format!("{}::series:{}", meta.study_instance_uid, meta.series_instance_uid)
        };
        groups.entry(key).or_default().push(meta);
    }
    let mut records = Vec::with_capacity(groups.len());
    for (group_key, mut members) in groups {
        sort_members(&mut members);
        let vendor = vendor_map.classify(&members[0].manufacturer);
        records.push(SeriesRecord {
            group_key,
            vendor,
            study_instance_uid: members[0].study_instance_uid.clone(),
            representative_description: members[0].series_description.clone(),
            members,
        });
    }
    Ok(records)
}
