//! Domain types for longitudinal insurance-claims data.
//!
//! A [`PatientRecord`] is the unit of all downstream processing: one
//! enrollee's demographics plus chronologically ordered encounters and
//! prescription fills. Encounters aggregate the coded diagnoses and
//! procedures billed under one Encounter ID.

mod codes;
mod ingest;

pub use codes::{
    is_exposure_diagnosis, is_exposure_prescription, is_overdose_diagnosis, normalize_code,
    normalize_therapeutic_class, EXPOSURE_CLASS_OPIOID, EXPOSURE_CLASS_STIMULANT,
    ICD9_EXPOSURE_PREFIXES, ICD9_OVERDOSE_PREFIXES,
};
pub use ingest::{
    parse_claims_tables, read_tables, DemographicsRow, DiagnosisRow, EncounterRow, IngestReport,
    PrescriptionRow, ProcedureRow, RawTables, RowRejection,
};

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coding system of a [`CodedItem`]. Closed enumeration; the string forms
/// below are the wire format used in the CSV tables and JSON artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CodeSystem {
    #[serde(rename = "ICD9-DX")]
    Icd9Dx,
    #[serde(rename = "ICD10-DX")]
    Icd10Dx,
    #[serde(rename = "ICD9-PCS")]
    Icd9Pcs,
    #[serde(rename = "CPT")]
    Cpt,
    #[serde(rename = "THERA-CLASS")]
    TheraClass,
    #[serde(rename = "NDC-NAME")]
    NdcName,
}

impl CodeSystem {
    pub const ALL: [CodeSystem; 6] = [
        CodeSystem::Icd9Dx,
        CodeSystem::Icd10Dx,
        CodeSystem::Icd9Pcs,
        CodeSystem::Cpt,
        CodeSystem::TheraClass,
        CodeSystem::NdcName,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CodeSystem::Icd9Dx => "ICD9-DX",
            CodeSystem::Icd10Dx => "ICD10-DX",
            CodeSystem::Icd9Pcs => "ICD9-PCS",
            CodeSystem::Cpt => "CPT",
            CodeSystem::TheraClass => "THERA-CLASS",
            CodeSystem::NdcName => "NDC-NAME",
        }
    }

    /// Diagnosis systems are the only ones the overdose/exposure rules
    /// apply to.
    pub fn is_diagnosis(self) -> bool {
        matches!(self, CodeSystem::Icd9Dx | CodeSystem::Icd10Dx)
    }

    /// ICD code families carry an embedded dot that is stripped during
    /// normalization.
    pub fn is_icd(self) -> bool {
        matches!(
            self,
            CodeSystem::Icd9Dx | CodeSystem::Icd10Dx | CodeSystem::Icd9Pcs
        )
    }
}

impl fmt::Display for CodeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodeSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CodeSystem::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown code system {s:?}")))
    }
}

/// One coded diagnosis or procedure. `code` is always in canonical form
/// (uppercase, dot-stripped for ICD systems).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CodedItem {
    pub system: CodeSystem,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl CodedItem {
    /// Build from a raw code string, normalizing it for `system`.
    pub fn new(system: CodeSystem, raw: &str) -> Result<Self> {
        Ok(CodedItem {
            system,
            code: normalize_code(raw, system)?,
            description: None,
        })
    }
}

/// One healthcare visit: all diagnoses and procedures billed under a
/// single Encounter ID on a service date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encounter {
    pub encounter_id: String,
    pub date: NaiveDate,
    pub diagnoses: Vec<CodedItem>,
    pub procedures: Vec<CodedItem>,
}

/// One prescription fill. Not tied to an encounter; ordered by fill date.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prescription {
    pub fill_date: NaiveDate,
    pub drug_name: String,
    pub therapeutic_class: String,
    pub strength: String,
    pub route: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
    U,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::F => "F",
            Sex::M => "M",
            Sex::U => "U",
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            "U" => Ok(Sex::U),
            other => Err(Error::Validation(format!("unknown sex code {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age_years: u32,
    pub sex: Sex,
}

/// One enrollee's full longitudinal record.
///
/// Canonical ordering invariants, established by [`PatientRecord::new`]
/// and preserved by ingestion:
/// - encounters ascend by `(date, encounter_id)`;
/// - diagnoses and procedures within an encounter ascend by
///   `(system, code)` — the first diagnosis in this order is treated as
///   the primary diagnosis downstream;
/// - prescriptions ascend by `(fill_date, drug_name, class, strength, route)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub enrol_id: String,
    pub demographics: Demographics,
    pub encounters: Vec<Encounter>,
    pub prescriptions: Vec<Prescription>,
}

impl PatientRecord {
    pub fn new(
        enrol_id: String,
        demographics: Demographics,
        encounters: Vec<Encounter>,
        prescriptions: Vec<Prescription>,
    ) -> Self {
        let mut record = PatientRecord {
            enrol_id,
            demographics,
            encounters,
            prescriptions,
        };
        record.normalize_order();
        record
    }

    /// Re-establish the canonical ordering invariants in place.
    pub fn normalize_order(&mut self) {
        for enc in &mut self.encounters {
            enc.diagnoses.sort();
            enc.procedures.sort();
        }
        self.encounters
            .sort_by(|a, b| (a.date, &a.encounter_id).cmp(&(b.date, &b.encounter_id)));
        self.prescriptions.sort();
    }

    /// Earliest event date over encounters and prescription fills.
    pub fn first_event_date(&self) -> Option<NaiveDate> {
        let enc = self.encounters.first().map(|e| e.date);
        let rx = self.prescriptions.first().map(|p| p.fill_date);
        match (enc, rx) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Latest event date over encounters and prescription fills.
    pub fn last_event_date(&self) -> Option<NaiveDate> {
        let enc = self.encounters.last().map(|e| e.date);
        let rx = self.prescriptions.last().map(|p| p.fill_date);
        match (enc, rx) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    /// Days between the first and last recorded event.
    pub fn span_days(&self) -> i64 {
        match (self.first_event_date(), self.last_event_date()) {
            (Some(first), Some(last)) => (last - first).num_days(),
            _ => 0,
        }
    }

    /// Total medical events: diagnoses + procedures + prescription fills.
    pub fn event_count(&self) -> usize {
        self.encounters
            .iter()
            .map(|e| e.diagnoses.len() + e.procedures.len())
            .sum::<usize>()
            + self.prescriptions.len()
    }
}
