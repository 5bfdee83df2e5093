//! Code and field-name dictionary for the descriptive prompt formats.
//!
//! Lookups are total: a missing entry falls back to the canonical code
//! or raw field name, so partial dictionaries never block rendering.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::claims::CodeSystem;
use crate::error::{Error, Result};
use crate::synth::vocab::SynthVocab;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CodeEntry {
    system: CodeSystem,
    code: String,
    description: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DictFile {
    codes: Vec<CodeEntry>,
    fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default)]
pub struct CodeDictionary {
    codes: BTreeMap<(CodeSystem, String), String>,
    fields: BTreeMap<String, String>,
}

/// Raw field name -> human-readable label for the descriptive formats.
const FIELD_LABELS: [(&str, &str); 11] = [
    ("SVCDATE", "service date"),
    ("ENCOUNTERID", "encounter id"),
    ("DIAG_CD", "diagnosis code"),
    ("DIAG1_CD", "primary diagnosis"),
    ("PROC_CD", "procedure code"),
    ("FILLDATE", "fill date"),
    ("DRUGNAME", "drug name"),
    ("THERCLS", "therapeutic class"),
    ("STRENGTH", "strength"),
    ("ROUTE", "route"),
    ("AGE", "age"),
];

impl CodeDictionary {
    pub fn insert_code(&mut self, system: CodeSystem, code: &str, description: &str) {
        self.codes
            .insert((system, code.to_string()), description.to_string());
    }

    pub fn insert_field(&mut self, raw: &str, label: &str) {
        self.fields.insert(raw.to_string(), label.to_string());
    }

    /// Description of a code, falling back to the code itself.
    pub fn describe<'a>(&'a self, system: CodeSystem, code: &'a str) -> &'a str {
        self.codes
            .get(&(system, code.to_string()))
            .map(String::as_str)
            .unwrap_or(code)
    }

    /// Description of a code whose system is unknown, scanning systems in
    /// a fixed order; falls back to the code itself.
    pub fn describe_any<'a>(&'a self, code: &'a str) -> &'a str {
        for system in CodeSystem::ALL {
            if let Some(desc) = self.codes.get(&(system, code.to_string())) {
                return desc;
            }
        }
        code
    }

    /// Readable label of a raw field name, falling back to the raw name.
    pub fn field_label<'a>(&'a self, raw: &'a str) -> &'a str {
        self.fields.get(raw).map(String::as_str).unwrap_or(raw)
    }

    /// Dictionary covering the built-in synthetic vocabulary plus the
    /// standard field labels. Also mapped: "SEX" -> "sex".
    pub fn synthetic_default() -> Self {
        let mut dict = CodeDictionary::default();
        for (raw, label) in FIELD_LABELS {
            dict.insert_field(raw, label);
        }
        dict.insert_field("SEX", "sex");
        let vocab = SynthVocab::default();
        for spec in vocab
            .common_dx
            .iter()
            .chain(&vocab.risk_dx)
            .chain(&vocab.exposure_dx)
            .chain(&vocab.overdose_dx)
            .chain(&vocab.adverse_dx)
        {
            dict.insert_code(spec.system, &spec.code, &spec.description);
        }
        for spec in &vocab.procedures {
            dict.insert_code(spec.system, &spec.code, &spec.description);
        }
        dict
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DictFile = serde_json::from_str(&text)?;
        let mut dict = CodeDictionary::default();
        for entry in file.codes {
            dict.codes
                .insert((entry.system, entry.code), entry.description);
        }
        dict.fields = file.fields;
        Ok(dict)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DictFile {
            codes: self
                .codes
                .iter()
                .map(|((system, code), description)| CodeEntry {
                    system: *system,
                    code: code.clone(),
                    description: description.clone(),
                })
                .collect(),
            fields: self.fields.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}
