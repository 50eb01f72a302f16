//! Manual-template baselines such as `"[T] likes [A]"`.

use super::sentence::{SentenceSource, TestSentence};
use super::GenError;
use crate::specs::{GroupIndex, ValidatedSpec};

const GROUP_SLOT: &str = "[T]";
const ATTR_SLOT: &str = "[A]";

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../resources/templates/", $name, ".txt")))),*]
    };
}

const BUNDLED: &[(&str, &str)] = bundled!(
    "gender_science_arts",
    "gender_math_arts",
    "gender_care_expertise",
    "infant_adult_vaccination",
    "hispanic_european_treatment_adherence",
    "african_european_risky_health",
);

/// One pattern per non-empty line; `#` lines are comments.
pub fn parse_templates(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

/// The baseline templates shipped for a predefined specification.
pub fn bundled_templates(spec_name: &str) -> Option<Vec<String>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == spec_name)
        .map(|(_, t)| parse_templates(t))
}

fn check(template: &str) -> Result<(), GenError> {
    for slot in [GROUP_SLOT, ATTR_SLOT] {
        let n = template.matches(slot).count();
        if n != 1 {
            return Err(GenError::MalformedTemplate {
                template: template.to_string(),
                reason: format!("expected exactly one {slot}, found {n}"),
            });
        }
    }
    Ok(())
}

/// Fills every template with every (group term, attribute term)
/// combination, on both group sides. The paired text fills the same
/// template with the counterpart. Combinations whose fill breaks the
/// sentence invariants (an attribute phrase that itself contains a group
/// term, say) are skipped.
pub fn fill_templates<S: AsRef<str>>(
    spec: &ValidatedSpec,
    templates: &[S],
) -> Result<Vec<TestSentence>, GenError> {
    for t in templates {
        check(t.as_ref())?;
    }
    let mut out = Vec::new();
    for (attr_group, attribute) in spec.attributes() {
        for template in templates {
            let template = template.as_ref();
            for group in [GroupIndex::G1, GroupIndex::G2] {
                let terms = spec.group_terms(group);
                let counterparts = spec.group_terms(group.opposite());
                for (term, counterpart) in terms.iter().zip(counterparts) {
                    let with_attr = template.replace(ATTR_SLOT, attribute);
                    let sentence = TestSentence {
                        spec_name: spec.name().to_string(),
                        group_term: term.clone(),
                        group_index: group,
                        counterpart_term: counterpart.clone(),
                        attribute_term: attribute.to_string(),
                        attribute_group_index: attr_group,
                        text: with_attr.replace(GROUP_SLOT, term),
                        paired_text: with_attr.replace(GROUP_SLOT, counterpart),
                        source: SentenceSource::Template,
                        gen_metadata: None,
                    };
                    if sentence.check().is_ok() {
                        out.push(sentence);
                    }
                }
            }
        }
    }
    Ok(out)
}
