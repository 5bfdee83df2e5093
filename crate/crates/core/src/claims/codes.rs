//! Code normalization and the cohort inclusion rules.
//!
//! Overdose: ICD-10-CM T36–T50 poisoning codes, excluding adverse effect
//! and underdosing (intent character '5'/'6' — the 6th character of the
//! dotless code, e.g. T402X5A); ICD-9 965/968/969/970/E850/E853/E854/E858.
//! Exposure: opioid or stimulant use-disorder diagnoses (F11/F14/F15,
//! ICD-9 304.x/305.x subsets) or fills in the two MEDISPAN root classes
//! below.

use super::{CodeSystem, CodedItem, Prescription};
use crate::error::{Error, Result};

pub const ICD9_OVERDOSE_PREFIXES: [&str; 8] =
    ["965", "968", "969", "970", "E850", "E853", "E854", "E858"];

pub const ICD9_EXPOSURE_PREFIXES: [&str; 8] = [
    "3040", "3042", "3044", "3047", "3055", "3056", "3057", "3058",
];

pub const EXPOSURE_CLASS_STIMULANT: &str = "ADHD/Anti-Narcolepsy/Anti-Obesity/Anorexiant Agents";
pub const EXPOSURE_CLASS_OPIOID: &str = "Analgesics – Opioid";

/// Canonicalize a raw code: uppercase, for ICD systems strip the dot,
/// then trim (dot removal can expose edge whitespace). Idempotent; a
/// code that normalizes to nothing is rejected.
pub fn normalize_code(raw: &str, system: CodeSystem) -> Result<String> {
    let upper = raw.to_uppercase();
    let stripped = if system.is_icd() {
        upper.replace('.', "")
    } else {
        upper
    };
    let trimmed = stripped.trim();
    if trimmed.is_empty() {
        return Err(Error::Validation("empty code".into()));
    }
    Ok(trimmed.to_string())
}

/// True iff the item is a drug overdose/poisoning diagnosis under the
/// cohort inclusion rules. Non-diagnosis systems are never overdoses.
pub fn is_overdose_diagnosis(item: &CodedItem) -> bool {
    match item.system {
        CodeSystem::Icd10Dx => icd10_overdose(&item.code),
        CodeSystem::Icd9Dx => ICD9_OVERDOSE_PREFIXES
            .iter()
            .any(|p| item.code.starts_with(p)),
        _ => false,
    }
}

fn icd10_overdose(code: &str) -> bool {
    let bytes = code.as_bytes();
    if bytes.len() < 3 || bytes[0] != b'T' {
        return false;
    }
    let stem: u32 = match code[1..3].parse() {
        Ok(n) => n,
        Err(_) => return false,
    };
    if !(36..=50).contains(&stem) {
        return false;
    }
    // Intent character sits right after the 5-character stem+placeholder.
    // Codes too short to carry one are kept: exclusion needs positive
    // evidence of adverse effect ('5') or underdosing ('6').
    !matches!(bytes.get(5), Some(b'5') | Some(b'6'))
}

/// True iff the item is an opioid or stimulant use-disorder diagnosis.
pub fn is_exposure_diagnosis(item: &CodedItem) -> bool {
    match item.system {
        CodeSystem::Icd10Dx => ["F11", "F14", "F15"]
            .iter()
            .any(|p| item.code.starts_with(p)),
        CodeSystem::Icd9Dx => ICD9_EXPOSURE_PREFIXES
            .iter()
            .any(|p| item.code.starts_with(p)),
        _ => false,
    }
}

/// Collapse whitespace runs and unify dash variants so class matching is
/// robust to the source table's encoding.
pub fn normalize_therapeutic_class(class: &str) -> String {
    let mut out = String::with_capacity(class.len());
    let mut last_space = false;
    for c in class.trim().chars() {
        let c = match c {
            '\u{2013}' | '\u{2014}' => '-',
            c => c,
        };
        if c.is_whitespace() {
            if !last_space {
                out.push(' ');
                last_space = true;
            }
        } else {
            out.push(c);
            last_space = false;
        }
    }
    out
}

/// True iff the fill is in one of the two exposure MEDISPAN root classes
/// (opioid analgesics, ADHD/stimulant agents).
pub fn is_exposure_prescription(rx: &Prescription) -> bool {
    let class = normalize_therapeutic_class(&rx.therapeutic_class);
    class == normalize_therapeutic_class(EXPOSURE_CLASS_OPIOID)
        || class == normalize_therapeutic_class(EXPOSURE_CLASS_STIMULANT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn dx10(code: &str) -> CodedItem {
        CodedItem::new(CodeSystem::Icd10Dx, code).unwrap()
    }

    fn dx9(code: &str) -> CodedItem {
        CodedItem::new(CodeSystem::Icd9Dx, code).unwrap()
    }

    fn rx(class: &str) -> Prescription {
        Prescription {
            fill_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            drug_name: "X".into(),
            therapeutic_class: class.into(),
            strength: "1".into(),
            route: "ORAL".into(),
        }
    }

    #[test]
    fn normalize_strips_dots_and_uppercases() {
        assert_eq!(
            normalize_code("T40.2X5A", CodeSystem::Icd10Dx).unwrap(),
            "T402X5A"
        );
        assert_eq!(
            normalize_code("t402x5a", CodeSystem::Icd10Dx).unwrap(),
            "T402X5A"
        );
        assert_eq!(normalize_code("304.0", CodeSystem::Icd9Dx).unwrap(), "3040");
        // non-ICD systems keep the dot
        assert_eq!(normalize_code("99.213", CodeSystem::Cpt).unwrap(), "99.213");
        assert!(normalize_code("   ", CodeSystem::Icd10Dx).is_err());
    }

    #[test]
    fn overdose_rule_examples() {
        assert!(is_overdose_diagnosis(&dx10("T402X1A")));
        assert!(!is_overdose_diagnosis(&dx10("T402X5A")));
        assert!(!is_overdose_diagnosis(&dx10("T402X6A")));
        assert!(is_overdose_diagnosis(&dx9("96501")));
        assert!(!is_overdose_diagnosis(&dx10("T510X1")));
        // short code: no intent character to exclude on
        assert!(is_overdose_diagnosis(&dx10("T402")));
        // boundary stems
        assert!(is_overdose_diagnosis(&dx10("T360X1A")));
        assert!(is_overdose_diagnosis(&dx10("T509X1A")));
        assert!(!is_overdose_diagnosis(&dx10("T350X1A")));
        // overdose codes on a non-diagnosis system do not count
        assert!(!is_overdose_diagnosis(
            &CodedItem::new(CodeSystem::Cpt, "T402X1A").unwrap()
        ));
    }

    #[test]
    fn exposure_rule_examples() {
        assert!(is_exposure_diagnosis(&dx10("F1123")));
        assert!(is_exposure_diagnosis(&dx9("30400")));
        assert!(!is_exposure_diagnosis(&dx10("E119")));
        assert!(!is_exposure_diagnosis(&dx10("F129")));
        assert!(is_exposure_diagnosis(&dx9("30551")));
    }

    #[test]
    fn exposure_class_matching() {
        assert!(is_exposure_prescription(&rx("Analgesics – Opioid")));
        assert!(is_exposure_prescription(&rx("Analgesics - Opioid")));
        assert!(is_exposure_prescription(&rx("  Analgesics  –  Opioid ")));
        assert!(is_exposure_prescription(&rx(
            "ADHD/Anti-Narcolepsy/Anti-Obesity/Anorexiant Agents"
        )));
        assert!(!is_exposure_prescription(&rx(
            "Antihyperlipidemic Drugs, NEC"
        )));
        assert!(!is_exposure_prescription(&rx(
            "Psychother, Antidepressants"
        )));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "[A-Za-z0-9. ]{1,12}", sys_idx in 0usize..6) {
            let system = CodeSystem::ALL[sys_idx];
            if let Ok(once) = normalize_code(&raw, system) {
                let twice = normalize_code(&once, system).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
