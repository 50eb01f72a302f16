//! Bias specifications: two index-paired social group term lists and two
//! attribute term lists.
//!
//! The order of the lists carries meaning. Group 1 paired with attribute
//! group 1 (and group 2 with attribute group 2) is the *stereotype*
//! orientation; the mixed pairings are *anti-stereotypes*. Position `i` of
//! `group1_terms` is the counterpart of position `i` of `group2_terms`, which
//! is what lets a sentence be rewritten into its paired alternative.
//!
//! ```
//! use biastest_core::specs::{validate_spec, BiasSpecification, SpecSource};
//!
//! let raw = BiasSpecification {
//!     name: "gender_science_arts".into(),
//!     group1_label: "Male terms".into(),
//!     group1_terms: vec!["he".into(), "brother".into()],
//!     group2_label: "Female terms".into(),
//!     group2_terms: vec!["she".into(), "sister".into()],
//!     attr1_label: "Science".into(),
//!     attr1_terms: vec!["science".into()],
//!     attr2_label: "Arts".into(),
//!     attr2_terms: vec!["art".into()],
//!     source: SpecSource::Custom,
//! };
//! let spec = validate_spec(raw).unwrap();
//! assert_eq!(spec.counterpart("sister").unwrap(), "brother");
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Where a specification came from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecSource {
    Predefined,
    /// The default when a file or request leaves `source` out.
    #[default]
    Custom,
    Discovered,
}

/// A raw, unvalidated bias specification as it appears on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasSpecification {
    pub name: String,
    pub group1_label: String,
    pub group1_terms: Vec<String>,
    pub group2_label: String,
    pub group2_terms: Vec<String>,
    pub attr1_label: String,
    pub attr1_terms: Vec<String>,
    pub attr2_label: String,
    pub attr2_terms: Vec<String>,
    #[serde(default)]
    pub source: SpecSource,
}

impl BiasSpecification {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Which social group list a term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupIndex {
    G1,
    G2,
}

impl GroupIndex {
    pub fn opposite(self) -> Self {
        match self {
            GroupIndex::G1 => GroupIndex::G2,
            GroupIndex::G2 => GroupIndex::G1,
        }
    }
}

/// Which attribute list a term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttributeGroupIndex {
    A1,
    A2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Stereotype,
    AntiStereotype,
}

/// The role a phrase plays inside one specification, with its list position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermRole {
    Group(GroupIndex, usize),
    Attribute(AttributeGroupIndex, usize),
}

/// Identifies one of the four term lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermList {
    Group1,
    Group2,
    Attr1,
    Attr2,
}

impl fmt::Display for TermList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TermList::Group1 => "group1_terms",
            TermList::Group2 => "group2_terms",
            TermList::Attr1 => "attr1_terms",
            TermList::Attr2 => "attr2_terms",
        })
    }
}

/// One invariant violation found by [`validate_spec`].
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SpecIssue {
    #[error("specification name {name:?} must be non-empty and use only letters, digits, '-', '_' or '.'")]
    InvalidName { name: String },
    #[error("{list} is empty")]
    EmptyGroup { list: TermList },
    #[error("group lists differ in length ({group1} vs {group2}); counterparts are paired by index")]
    UnequalGroupLengths { group1: usize, group2: usize },
    #[error("{list}[{position}] is blank")]
    EmptyTerm { list: TermList, position: usize },
    #[error("{term:?} appears more than once in {list}")]
    DuplicateTerm { list: TermList, term: String },
    #[error("{term:?} appears in both {first} and {second}")]
    AmbiguousTerm {
        term: String,
        first: TermList,
        second: TermList,
    },
}

/// The complete list of violations for a rejected specification.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("invalid bias specification: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationErrorList(pub Vec<SpecIssue>);

impl ValidationErrorList {
    pub fn issues(&self) -> &[SpecIssue] {
        &self.0
    }
}

/// Accepted but suspicious content.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SpecWarning {
    /// The same phrase is listed under both attribute groups, so its
    /// orientation resolves to attribute group 1.
    #[error("{term:?} is listed under both attribute groups; it is treated as attribute group 1")]
    AttributeOverlap { term: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("{0:?} is not a term of this specification")]
    UnknownTerm(String),
}

/// A specification that satisfies every invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BiasSpecification", into = "BiasSpecification")]
pub struct ValidatedSpec {
    spec: BiasSpecification,
    warnings: Vec<SpecWarning>,
    roles: HashMap<String, TermRole>,
}

impl TryFrom<BiasSpecification> for ValidatedSpec {
    type Error = ValidationErrorList;

    fn try_from(raw: BiasSpecification) -> Result<Self, Self::Error> {
        validate_spec(raw)
    }
}

impl From<ValidatedSpec> for BiasSpecification {
    fn from(v: ValidatedSpec) -> Self {
        v.spec
    }
}

fn key(term: &str) -> String {
    term.trim().to_lowercase()
}

pub(crate) fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Checks every invariant of a raw specification and reports all violations
/// at once.
pub fn validate_spec(raw: BiasSpecification) -> Result<ValidatedSpec, ValidationErrorList> {
    let mut issues = Vec::new();
    let mut warnings = Vec::new();

    if !valid_name(&raw.name) {
        issues.push(SpecIssue::InvalidName {
            name: raw.name.clone(),
        });
    }

    let lists = [
        (TermList::Group1, &raw.group1_terms),
        (TermList::Group2, &raw.group2_terms),
        (TermList::Attr1, &raw.attr1_terms),
        (TermList::Attr2, &raw.attr2_terms),
    ];

    for (list, terms) in lists {
        if terms.is_empty() {
            issues.push(SpecIssue::EmptyGroup { list });
        }
        let mut seen = HashSet::new();
        let mut reported = HashSet::new();
        for (position, term) in terms.iter().enumerate() {
            let k = key(term);
            if k.is_empty() {
                issues.push(SpecIssue::EmptyTerm { list, position });
            } else if !seen.insert(k.clone()) && reported.insert(k) {
                issues.push(SpecIssue::DuplicateTerm {
                    list,
                    term: term.trim().to_string(),
                });
            }
        }
    }

    if !raw.group1_terms.is_empty()
        && !raw.group2_terms.is_empty()
        && raw.group1_terms.len() != raw.group2_terms.len()
    {
        issues.push(SpecIssue::UnequalGroupLengths {
            group1: raw.group1_terms.len(),
            group2: raw.group2_terms.len(),
        });
    }

    let mut roles: HashMap<String, TermRole> = HashMap::new();
    let mut owner: HashMap<String, TermList> = HashMap::new();
    let role_of = |list: TermList, i: usize| match list {
        TermList::Group1 => TermRole::Group(GroupIndex::G1, i),
        TermList::Group2 => TermRole::Group(GroupIndex::G2, i),
        TermList::Attr1 => TermRole::Attribute(AttributeGroupIndex::A1, i),
        TermList::Attr2 => TermRole::Attribute(AttributeGroupIndex::A2, i),
    };
    for (list, terms) in lists {
        for (i, term) in terms.iter().enumerate() {
            let k = key(term);
            if k.is_empty() {
                continue;
            }
            match owner.get(&k) {
                None => {
                    owner.insert(k.clone(), list);
                    roles.insert(k, role_of(list, i));
                }
                Some(&first) if first == list => {}
                Some(&TermList::Attr1) if list == TermList::Attr2 => {
                    warnings.push(SpecWarning::AttributeOverlap {
                        term: term.trim().to_string(),
                    });
                }
                Some(&first) => {
                    issues.push(SpecIssue::AmbiguousTerm {
                        term: term.trim().to_string(),
                        first,
                        second: list,
                    });
                }
            }
        }
    }

    if issues.is_empty() {
        Ok(ValidatedSpec {
            spec: raw,
            warnings,
            roles,
        })
    } else {
        Err(ValidationErrorList(issues))
    }
}

/// Stereotype for (G1, A1) and (G2, A2); anti-stereotype for the mixed pairs.
pub fn orientation(group: GroupIndex, attribute: AttributeGroupIndex) -> Orientation {
    match (group, attribute) {
        (GroupIndex::G1, AttributeGroupIndex::A1) | (GroupIndex::G2, AttributeGroupIndex::A2) => {
            Orientation::Stereotype
        }
        _ => Orientation::AntiStereotype,
    }
}

impl ValidatedSpec {
    pub fn spec(&self) -> &BiasSpecification {
        &self.spec
    }

    pub fn into_inner(self) -> BiasSpecification {
        self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn warnings(&self) -> &[SpecWarning] {
        &self.warnings
    }

    pub fn group_terms(&self, group: GroupIndex) -> &[String] {
        match group {
            GroupIndex::G1 => &self.spec.group1_terms,
            GroupIndex::G2 => &self.spec.group2_terms,
        }
    }

    pub fn attribute_terms(&self, attribute: AttributeGroupIndex) -> &[String] {
        match attribute {
            AttributeGroupIndex::A1 => &self.spec.attr1_terms,
            AttributeGroupIndex::A2 => &self.spec.attr2_terms,
        }
    }

    /// Number of index-paired group terms.
    pub fn pair_count(&self) -> usize {
        self.spec.group1_terms.len()
    }

    /// All attribute terms, attribute group 1 first, in list order.
    pub fn attributes(&self) -> impl Iterator<Item = (AttributeGroupIndex, &str)> {
        self.spec
            .attr1_terms
            .iter()
            .map(|t| (AttributeGroupIndex::A1, t.as_str()))
            .chain(
                self.spec
                    .attr2_terms
                    .iter()
                    .map(|t| (AttributeGroupIndex::A2, t.as_str())),
            )
    }

    /// Case-insensitive role lookup.
    pub fn role(&self, term: &str) -> Option<TermRole> {
        self.roles.get(&key(term)).copied()
    }

    pub fn group_role(&self, term: &str) -> Result<(GroupIndex, usize), SpecError> {
        match self.role(term) {
            Some(TermRole::Group(g, i)) => Ok((g, i)),
            _ => Err(SpecError::UnknownTerm(term.to_string())),
        }
    }

    pub fn attribute_role(&self, term: &str) -> Result<(AttributeGroupIndex, usize), SpecError> {
        match self.role(term) {
            Some(TermRole::Attribute(a, i)) => Ok((a, i)),
            _ => Err(SpecError::UnknownTerm(term.to_string())),
        }
    }

    /// The phrase at the same index in the opposite group list.
    pub fn counterpart(&self, term: &str) -> Result<&str, SpecError> {
        let (group, i) = self.group_role(term)?;
        Ok(&self.group_terms(group.opposite())[i])
    }

    pub fn orientation(&self, group: GroupIndex, attribute: AttributeGroupIndex) -> Orientation {
        orientation(group, attribute)
    }
}

macro_rules! bundled {
    ($($file:literal),* $(,)?) => {
        &[$(($file, include_str!(concat!("../resources/specs/", $file, ".json")))),*]
    };
}

const PREDEFINED: &[(&str, &str)] = bundled!(
    "gender_science_arts",
    "gender_math_arts",
    "gender_care_expertise",
    "infant_adult_vaccination",
    "hispanic_european_treatment_adherence",
    "african_european_risky_health",
);

/// The specifications shipped with the crate.
pub fn predefined() -> Vec<ValidatedSpec> {
    PREDEFINED
        .iter()
        .map(|(name, text)| {
            let raw = BiasSpecification::from_json(text)
                .unwrap_or_else(|e| panic!("bundled spec {name} is not valid JSON: {e}"));
            validate_spec(raw).unwrap_or_else(|e| panic!("bundled spec {name} is invalid: {e}"))
        })
        .collect()
}

pub fn predefined_by_name(name: &str) -> Option<ValidatedSpec> {
    predefined().into_iter().find(|s| s.name() == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(g1: &[&str], g2: &[&str], a1: &[&str], a2: &[&str]) -> BiasSpecification {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        BiasSpecification {
            name: "t".into(),
            group1_label: "G1".into(),
            group1_terms: v(g1),
            group2_label: "G2".into(),
            group2_terms: v(g2),
            attr1_label: "A1".into(),
            attr1_terms: v(a1),
            attr2_label: "A2".into(),
            attr2_terms: v(a2),
            source: SpecSource::Custom,
        }
    }

    fn gender() -> ValidatedSpec {
        validate_spec(raw(&["he", "brother"], &["she", "sister"], &["science"], &["art"])).unwrap()
    }

    #[test]
    fn valid_gender_spec() {
        let s = gender();
        assert!(s.warnings().is_empty());
        assert_eq!(s.pair_count(), 2);
    }

    #[test]
    fn unequal_groups_rejected() {
        let err = validate_spec(raw(&["he"], &["she", "sister"], &["science"], &["art"])).unwrap_err();
        assert_eq!(
            err.issues(),
            &[SpecIssue::UnequalGroupLengths { group1: 1, group2: 2 }]
        );
    }

    #[test]
    fn attribute_overlap_is_warning() {
        let s = validate_spec(raw(&["he"], &["she"], &["math"], &["math"])).unwrap();
        assert_eq!(
            s.warnings(),
            &[SpecWarning::AttributeOverlap { term: "math".into() }]
        );
        assert_eq!(s.attribute_role("math").unwrap().0, AttributeGroupIndex::A1);
    }

    #[test]
    fn reports_every_violation() {
        let err = validate_spec(raw(&["he", "He", " "], &[], &["he"], &[])).unwrap_err();
        let issues = err.issues();
        assert!(issues.contains(&SpecIssue::EmptyGroup { list: TermList::Group2 }));
        assert!(issues.contains(&SpecIssue::EmptyGroup { list: TermList::Attr2 }));
        assert!(issues.contains(&SpecIssue::EmptyTerm { list: TermList::Group1, position: 2 }));
        assert!(issues.contains(&SpecIssue::DuplicateTerm { list: TermList::Group1, term: "He".into() }));
        assert!(issues.contains(&SpecIssue::AmbiguousTerm {
            term: "he".into(),
            first: TermList::Group1,
            second: TermList::Attr1
        }));
    }

    #[test]
    fn bad_name() {
        let mut r = raw(&["he"], &["she"], &["a"], &["b"]);
        r.name = "../etc".into();
        assert!(matches!(validate_spec(r).unwrap_err().issues()[0], SpecIssue::InvalidName { .. }));
    }

    #[test]
    fn counterparts() {
        let s = gender();
        assert_eq!(s.counterpart("he").unwrap(), "she");
        assert_eq!(s.counterpart("sister").unwrap(), "brother");
        assert_eq!(s.counterpart("Sister").unwrap(), "brother");
        assert_eq!(
            s.counterpart("doctor").unwrap_err(),
            SpecError::UnknownTerm("doctor".into())
        );
        assert!(s.counterpart("science").is_err());
    }

    #[test]
    fn orientation_convention() {
        use AttributeGroupIndex::*;
        use GroupIndex::*;
        assert_eq!(orientation(G1, A1), Orientation::Stereotype);
        assert_eq!(orientation(G1, A2), Orientation::AntiStereotype);
        assert_eq!(orientation(G2, A2), Orientation::Stereotype);
        assert_eq!(orientation(G2, A1), Orientation::AntiStereotype);
    }

    #[test]
    fn validation_is_idempotent() {
        let s = gender();
        let again = validate_spec(s.clone().into_inner()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn serde_goes_through_validation() {
        let s = gender();
        let json = serde_json::to_string(&s).unwrap();
        let back: ValidatedSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let bad = json.replace("\"brother\"", "\"he\"");
        assert!(serde_json::from_str::<ValidatedSpec>(&bad).is_err());
    }

    #[test]
    fn bundled_specs_load() {
        let all = predefined();
        assert_eq!(all.len(), PREDEFINED.len());
        for s in &all {
            assert_eq!(s.spec().source, SpecSource::Predefined);
        }
        let care = predefined_by_name("gender_care_expertise").unwrap();
        assert_eq!(care.counterpart("daughter").unwrap(), "son");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn counterpart_is_involution(n in 1usize..8, pick in 0usize..16) {
                let g1: Vec<String> = (0..n).map(|i| format!("alpha{i}")).collect();
                let g2: Vec<String> = (0..n).map(|i| format!("beta{i}")).collect();
                let r = BiasSpecification {
                    name: "p".into(),
                    group1_label: "a".into(),
                    group1_terms: g1.clone(),
                    group2_label: "b".into(),
                    group2_terms: g2.clone(),
                    attr1_label: "x".into(),
                    attr1_terms: vec!["x".into()],
                    attr2_label: "y".into(),
                    attr2_terms: vec!["y".into()],
                    source: SpecSource::Custom,
                };
                let s = validate_spec(r).unwrap();
                let all: Vec<&String> = g1.iter().chain(g2.iter()).collect();
                let t = all[pick % all.len()];
                let c = s.counterpart(t).unwrap().to_string();
                prop_assert_eq!(s.counterpart(&c).unwrap(), t.as_str());
            }
        }
    }
}
