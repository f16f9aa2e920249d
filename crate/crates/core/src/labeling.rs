//! Fixed label taxonomy and the series-description → label mapping.
//!
//! The taxonomy is a constant: 17 sequence classes, 10 imaging planes, and
//! 35 admissible (sequence, plane) pairs. Class indices follow the
//! alphabetical order of the variant names and are written into every
//! checkpoint so a model can never be evaluated against a shifted table.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MR acquisition protocol family. Variants are declared in byte-wise
/// alphabetical order; `index()` is the stable class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SequenceClass {
    B0Map,
    CineBSSFP,
    DBLGE,
    EGE,
    FST2,
    HASTE,
    MOLLINative,
    MOLLIPost,
    Perfusion,
    PhaseContrast,
    ScoutImaging,
    T2MapBright,
    T2MapDark,
    T2StarMap,
    TIScout,
    TestPerfusion,
    WBLGE,
}

/// Anatomical orientation of the slice stack, alphabetical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlaneClass {
    Aorta,
    Axial,
    FourChamber,
    LVOT,
    MPA,
    Multiplanar,
    RVOT,
    ShortAxis,
    ThreeChamber,
    TwoChamber,
}

pub const NUM_SEQUENCE_CLASSES: usize = 17;
pub const NUM_PLANE_CLASSES: usize = 10;

impl SequenceClass {
    pub const ALL: [SequenceClass; NUM_SEQUENCE_CLASSES] = [
        SequenceClass::B0Map,
        SequenceClass::CineBSSFP,
        SequenceClass::DBLGE,
        SequenceClass::EGE,
        SequenceClass::FST2,
        SequenceClass::HASTE,
        SequenceClass::MOLLINative,
        SequenceClass::MOLLIPost,
        SequenceClass::Perfusion,
        SequenceClass::PhaseContrast,
        SequenceClass::ScoutImaging,
        SequenceClass::T2MapBright,
        SequenceClass::T2MapDark,
        SequenceClass::T2StarMap,
        SequenceClass::TIScout,
        SequenceClass::TestPerfusion,
        SequenceClass::WBLGE,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SequenceClass::B0Map => "B0Map",
            SequenceClass::CineBSSFP => "CineBSSFP",
            SequenceClass::DBLGE => "DBLGE",
            SequenceClass::EGE => "EGE",
            SequenceClass::FST2 => "FST2",
            SequenceClass::HASTE => "HASTE",
            SequenceClass::MOLLINative => "MOLLINative",
            SequenceClass::MOLLIPost => "MOLLIPost",
            SequenceClass::Perfusion => "Perfusion",
            SequenceClass::PhaseContrast => "PhaseContrast",
            SequenceClass::ScoutImaging => "ScoutImaging",
            SequenceClass::T2MapBright => "T2MapBright",
            SequenceClass::T2MapDark => "T2MapDark",
            SequenceClass::T2StarMap => "T2StarMap",
            SequenceClass::TIScout => "TIScout",
            SequenceClass::TestPerfusion => "TestPerfusion",
            SequenceClass::WBLGE => "WBLGE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl PlaneClass {
    pub const ALL: [PlaneClass; NUM_PLANE_CLASSES] = [
        PlaneClass::Aorta,
        PlaneClass::Axial,
        PlaneClass::FourChamber,
        PlaneClass::LVOT,
        PlaneClass::MPA,
        PlaneClass::Multiplanar,
        PlaneClass::RVOT,
        PlaneClass::ShortAxis,
        PlaneClass::ThreeChamber,
        PlaneClass::TwoChamber,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&p| p == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PlaneClass::Aorta => "Aorta",
            PlaneClass::Axial => "Axial",
            PlaneClass::FourChamber => "FourChamber",
            PlaneClass::LVOT => "LVOT",
            PlaneClass::MPA => "MPA",
            PlaneClass::Multiplanar => "Multiplanar",
            PlaneClass::RVOT => "RVOT",
            PlaneClass::ShortAxis => "ShortAxis",
            PlaneClass::ThreeChamber => "ThreeChamber",
            PlaneClass::TwoChamber => "TwoChamber",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for SequenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for PlaneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A (sequence, plane) pair. Only the 35 admissible pairs may be built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JointLabel {
    pub sequence: SequenceClass,
    pub plane: PlaneClass,
}

impl JointLabel {
    pub fn new(sequence: SequenceClass, plane: PlaneClass) -> Result<Self> {
        let label = JointLabel { sequence, plane };
        if ADMISSIBLE_PAIRS.contains(&(sequence, plane)) {
            Ok(label)
        } else {
            Err(Error::Config(format!(
                "inadmissible joint label {}/{}",
                sequence, plane
            )))
        }
    }

    pub fn is_admissible(sequence: SequenceClass, plane: PlaneClass) -> bool {
        ADMISSIBLE_PAIRS.contains(&(sequence, plane))
    }
}

impl fmt::Display for JointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.sequence, self.plane)
    }
}

use PlaneClass as P;
use SequenceClass as S;

/// The 35 admissible sequence/plane combinations.
pub const ADMISSIBLE_PAIRS: [(SequenceClass, PlaneClass); 35] = [
    (S::B0Map, P::Axial),
    (S::CineBSSFP, P::TwoChamber),
    (S::CineBSSFP, P::ThreeChamber),
    (S::CineBSSFP, P::FourChamber),
    (S::CineBSSFP, P::LVOT),
    (S::CineBSSFP, P::RVOT),
    (S::CineBSSFP, P::ShortAxis),
    (S::DBLGE, P::TwoChamber),
    (S::DBLGE, P::ThreeChamber),
    (S::DBLGE, P::FourChamber),
    (S::DBLGE, P::ShortAxis),
    (S::EGE, P::TwoChamber),
    (S::EGE, P::ThreeChamber),
    (S::EGE, P::FourChamber),
    (S::FST2, P::TwoChamber),
    (S::FST2, P::ThreeChamber),
    (S::FST2, P::FourChamber),
    (S::FST2, P::ShortAxis),
    (S::HASTE, P::Axial),
    (S::MOLLINative, P::ShortAxis),
    (S::MOLLIPost, P::ShortAxis),
    (S::PhaseContrast, P::Aorta),
    (S::PhaseContrast, P::MPA),
    (S::Perfusion, P::ShortAxis),
    (S::ScoutImaging, P::Multiplanar),
    (S::T2MapBright, P::ShortAxis),
    (S::T2MapDark, P::ShortAxis),
    (S::T2StarMap, P::ShortAxis),
    (S::TestPerfusion, P::ShortAxis),
    (S::TIScout, P::FourChamber),
    (S::TIScout, P::ShortAxis),
    (S::WBLGE, P::TwoChamber),
    (S::WBLGE, P::ThreeChamber),
    (S::WBLGE, P::FourChamber),
    (S::WBLGE, P::ShortAxis),
];

/// One mapping rule: all tokens must occur (case-insensitively) in the text.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRule {
    pub tokens: Vec<String>,
    pub label: JointLabel,
}

impl LabelRule {
    fn matches(&self, text: &str) -> bool {
        let lower = text.to_ascii_lowercase();
        self.tokens.iter().all(|t| lower.contains(t.as_str()))
    }
}

/// Ordered, first-match-wins rule list mapping series descriptions to labels.
///
/// File grammar, one rule per line:
///
/// ```text
/// # comment
/// pattern => Sequence/Plane
/// ```
///
/// where `pattern` is one or more `&`-joined tokens, each matched as a
/// case-insensitive substring of the series description (protocol name as
/// fallback). Tokens may be double-quoted to preserve spaces.
#[derive(Debug, Clone, Default)]
pub struct LabelMap {
    pub rules: Vec<LabelRule>,
    pub provenance: String,
}

/// Outcome of label assignment; `Unlabeled` is a value, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelOutcome {
    Labeled(JointLabel),
    Unlabeled,
}

impl LabelMap {
    pub fn parse(text: &str, provenance: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (pat, lab) = line.split_once("=>").ok_or_else(|| Error::LabelMap {
                line: lineno + 1,
                msg: "missing '=>'".into(),
            })?;
            let tokens: Vec<String> = pat
                .split('&')
                .map(|t| t.trim().trim_matches('"').to_ascii_lowercase())
                .filter(|t| !t.is_empty())
                .collect();
            if tokens.is_empty() {
                return Err(Error::LabelMap {
                    line: lineno + 1,
                    msg: "empty pattern".into(),
                });
            }
            let (seq_s, plane_s) = lab.trim().split_once('/').ok_or_else(|| Error::LabelMap {
                line: lineno + 1,
                msg: "label must be Sequence/Plane".into(),
            })?;
            let sequence = SequenceClass::parse(seq_s.trim()).ok_or_else(|| Error::LabelMap {
                line: lineno + 1,
                msg: format!("unknown sequence class {seq_s:?}"),
            })?;
            let plane = PlaneClass::parse(plane_s.trim()).ok_or_else(|| Error::LabelMap {
                line: lineno + 1,
                msg: format!("unknown plane class {plane_s:?}"),
            })?;
            let label = JointLabel::new(sequence, plane).map_err(|e| Error::LabelMap {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            rules.push(LabelRule { tokens, label });
        }
        Ok(LabelMap {
            rules,
            provenance: provenance.to_string(),
        })
    }

    /// First matching rule against `description`, then against the optional
    /// fallback text (protocol name).
    pub fn assign(&self, description: &str, fallback: Option<&str>) -> LabelOutcome {
        for rule in &self.rules {
            if rule.matches(description) {
                return LabelOutcome::Labeled(rule.label);
            }
        }
        if let Some(fb) = fallback {
            for rule in &self.rules {
                if rule.matches(fb) {
                    return LabelOutcome::Labeled(rule.label);
                }
            }
        }
        LabelOutcome::Unlabeled
    }

    /// Built-in rule set covering common vendor naming idioms plus the
    /// canonical names emitted by the phantom generator. Sites override it
    /// with their own reviewed file.
    pub fn default_rules() -> Self {
        let text = include_str!("default_label_map.txt");
        LabelMap::parse(text, "built-in default").expect("embedded label map must parse")
    }
}

/// Labels whose datapoint count reaches `threshold` (inclusive).
pub fn enforce_class_threshold(
    counts: &BTreeMap<JointLabel, usize>,
    threshold: usize,
) -> Vec<JointLabel> {
    counts
        .iter()
        .filter(|(_, &n)| n >= threshold)
        .map(|(&l, _)| l)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_cardinalities() {
        assert_eq!(SequenceClass::ALL.len(), 17);
        assert_eq!(PlaneClass::ALL.len(), 10);
        assert_eq!(ADMISSIBLE_PAIRS.len(), 35);
        // pairs are unique
        let mut set: Vec<_> = ADMISSIBLE_PAIRS.to_vec();
        set.sort();
        set.dedup();
        assert_eq!(set.len(), 35);
    }

    #[test]
    fn indices_follow_alphabetical_names() {
        let mut seq_names: Vec<_> = SequenceClass::ALL.iter().map(|s| s.name()).collect();
        let sorted = {
            let mut v = seq_names.clone();
            v.sort();
            v
        };
        assert_eq!(seq_names, sorted);
        seq_names.dedup();
        assert_eq!(seq_names.len(), 17);

        let plane_names: Vec<_> = PlaneClass::ALL.iter().map(|p| p.name()).collect();
        let mut sorted = plane_names.clone();
        sorted.sort();
        assert_eq!(plane_names, sorted);

        for (i, s) in SequenceClass::ALL.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(SequenceClass::from_index(i), Some(*s));
        }
        for (i, p) in PlaneClass::ALL.iter().enumerate() {
            assert_eq!(p.index(), i);
        }
    }

    #[test]
    fn per_sequence_plane_counts_match_reference() {
        // Row structure of the admissible table: sequence -> #planes.
        let expect = [
            (S::B0Map, 1),
            (S::CineBSSFP, 6),
            (S::DBLGE, 4),
            (S::EGE, 3),
            (S::FST2, 4),
            (S::HASTE, 1),
            (S::MOLLINative, 1),
            (S::MOLLIPost, 1),
            (S::Perfusion, 1),
            (S::PhaseContrast, 2),
            (S::ScoutImaging, 1),
            (S::T2MapBright, 1),
            (S::T2MapDark, 1),
            (S::T2StarMap, 1),
            (S::TIScout, 2),
            (S::TestPerfusion, 1),
            (S::WBLGE, 4),
        ];
        for (seq, n) in expect {
            let got = ADMISSIBLE_PAIRS.iter().filter(|(s, _)| *s == seq).count();
            assert_eq!(got, n, "{seq}");
        }
    }

    #[test]
    fn inadmissible_pair_rejected() {
        assert!(JointLabel::new(S::B0Map, P::ShortAxis).is_err());
        assert!(JointLabel::new(S::CineBSSFP, P::ShortAxis).is_ok());
    }

    #[test]
    fn first_match_wins() {
        let map = LabelMap::parse(
            "\"psir\" & \"2ch\" => WBLGE/TwoChamber\npsir => WBLGE/ShortAxis\n",
            "test",
        )
        .unwrap();
        let got = map.assign("PSIR_TFE 2CH", None);
        assert_eq!(
            got,
            LabelOutcome::Labeled(JointLabel::new(S::WBLGE, P::TwoChamber).unwrap())
        );
    }

    #[test]
    fn compound_pattern_and_no_match() {
        let map = LabelMap::parse("cine & sa => CineBSSFP/ShortAxis\n", "test").unwrap();
        assert_eq!(
            map.assign("sBTFE_BH SA cine", None),
            LabelOutcome::Labeled(JointLabel::new(S::CineBSSFP, P::ShortAxis).unwrap())
        );
        assert_eq!(map.assign("surview", None), LabelOutcome::Unlabeled);
    }

    #[test]
    fn fallback_to_protocol_name() {
        let map = LabelMap::parse("molli & post => MOLLIPost/ShortAxis\n", "test").unwrap();
        assert_eq!(map.assign("series 4", None), LabelOutcome::Unlabeled);
        assert_eq!(
            map.assign("series 4", Some("MOLLI post contrast")),
            LabelOutcome::Labeled(JointLabel::new(S::MOLLIPost, P::ShortAxis).unwrap())
        );
    }

    #[test]
    fn default_map_parses_and_is_admissible() {
        let map = LabelMap::default_rules();
        assert!(!map.rules.is_empty());
    }

    #[test]
    fn threshold_boundary_inclusive() {
        let a = JointLabel::new(S::CineBSSFP, P::ShortAxis).unwrap();
        let b = JointLabel::new(S::WBLGE, P::ShortAxis).unwrap();
        let mut counts = BTreeMap::new();
        counts.insert(a, 25);
        counts.insert(b, 19);
        assert_eq!(enforce_class_threshold(&counts, 20), vec![a]);
        counts.insert(a, 20);
        counts.remove(&b);
        assert_eq!(enforce_class_threshold(&counts, 20), vec![a]);
    }

    #[test]
    fn threshold_excludes_rare_reference_class() {
        // Single-centre column with (CineBSSFP, RVOT) at 7 datapoints.
        let mut counts = BTreeMap::new();
        counts.insert(JointLabel::new(S::CineBSSFP, P::TwoChamber).unwrap(), 50);
        counts.insert(JointLabel::new(S::CineBSSFP, P::RVOT).unwrap(), 7);
        counts.insert(JointLabel::new(S::CineBSSFP, P::ShortAxis).unwrap(), 48);
        let kept = enforce_class_threshold(&counts, 20);
        assert!(!kept.contains(&JointLabel::new(S::CineBSSFP, P::RVOT).unwrap()));
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn threshold_monotone() {
        let a = JointLabel::new(S::HASTE, P::Axial).unwrap();
        let b = JointLabel::new(S::B0Map, P::Axial).unwrap();
        let mut counts = BTreeMap::new();
        counts.insert(a, 30);
        counts.insert(b, 12);
        for t in 1..40usize {
            let low = enforce_class_threshold(&counts, t);
            let high = enforce_class_threshold(&counts, t + 1);
            for l in &high {
                assert!(low.contains(l));
            }
        }
    }
}
