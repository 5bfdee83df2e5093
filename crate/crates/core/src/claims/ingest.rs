//! Ingestion of the five raw claims tables into per-patient records.
//!
//! Malformed rows (bad dates, unknown systems, dangling Encounter IDs)
//! are rejected individually and reported; everything else in the
//! patient's history is kept. Output ordering is canonical, so parsing
//! is invariant under row-order permutation of the inputs.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{CodeSystem, CodedItem, Demographics, Encounter, PatientRecord, Prescription, Sex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncounterRow {
    #[serde(rename = "ENROLID")]
    pub enrol_id: String,
    #[serde(rename = "ENCOUNTERID")]
    pub encounter_id: String,
    #[serde(rename = "SVCDATE")]
    pub svc_date: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosisRow {
    #[serde(rename = "ENROLID")]
    pub enrol_id: String,
    #[serde(rename = "ENCOUNTERID")]
    pub encounter_id: String,
    #[serde(rename = "DIAG_CD")]
    pub code: String,
    #[serde(rename = "DIAG_SYS")]
    pub system: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcedureRow {
    #[serde(rename = "ENROLID")]
    pub enrol_id: String,
    #[serde(rename = "ENCOUNTERID")]
    pub encounter_id: String,
    #[serde(rename = "PROC_CD")]
    pub code: String,
    #[serde(rename = "PROC_SYS")]
    pub system: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrescriptionRow {
    #[serde(rename = "ENROLID")]
    pub enrol_id: String,
    #[serde(rename = "FILLDATE")]
    pub fill_date: String,
    #[serde(rename = "DRUGNAME")]
    pub drug_name: String,
    #[serde(rename = "THERCLS")]
    pub therapeutic_class: String,
    #[serde(rename = "STRENGTH")]
    pub strength: String,
    #[serde(rename = "ROUTE")]
    pub route: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemographicsRow {
    #[serde(rename = "ENROLID")]
    pub enrol_id: String,
    #[serde(rename = "AGE")]
    pub age: String,
    #[serde(rename = "SEX")]
    pub sex: String,
}

/// The five raw tables as read from disk, still unvalidated.
#[derive(Debug, Clone, Default)]
pub struct RawTables {
    pub encounters: Vec<EncounterRow>,
    pub diagnoses: Vec<DiagnosisRow>,
    pub procedures: Vec<ProcedureRow>,
    pub prescriptions: Vec<PrescriptionRow>,
    pub demographics: Vec<DemographicsRow>,
}

/// One rejected input row and why it was dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowRejection {
    pub table: String,
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub enrol_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub patients: usize,
    pub accepted_encounters: usize,
    pub accepted_diagnoses: usize,
    pub accepted_procedures: usize,
    pub accepted_prescriptions: usize,
    pub rejections: Vec<RowRejection>,
}

impl IngestReport {
    fn reject(&mut self, table: &str, row: usize, enrol_id: &str, reason: impl Into<String>) {
        self.rejections.push(RowRejection {
            table: table.to_string(),
            row,
            enrol_id: enrol_id.to_string(),
            reason: reason.into(),
        });
    }
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::csv(path, e))
}

/// Read the five claims CSVs (`encounter.csv`, `diagnosis.csv`,
/// `procedure.csv`, `prescription.csv`, `demographics.csv`) from `dir`.
pub fn read_tables(dir: &Path) -> Result<RawTables> {
    Ok(RawTables {
        encounters: read_csv(&dir.join("encounter.csv"))?,
        diagnoses: read_csv(&dir.join("diagnosis.csv"))?,
        procedures: read_csv(&dir.join("procedure.csv"))?,
        prescriptions: read_csv(&dir.join("prescription.csv"))?,
        demographics: read_csv(&dir.join("demographics.csv"))?,
    })
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

/// Group the raw rows into per-patient longitudinal records.
///
/// Diagnosis and procedure rows join to encounters by Encounter ID within
/// the patient; rows that cannot be joined or parsed are rejected
/// individually. Conflicting duplicates (same key, different content) are
/// rejected as a group so the output never depends on input row order.
pub fn parse_claims_tables(tables: &RawTables) -> (Vec<PatientRecord>, IngestReport) {
    let mut report = IngestReport::default();

    // Demographics: reject conflicting duplicates deterministically.
    let mut demo_rows: BTreeMap<&str, Vec<(usize, &DemographicsRow)>> = BTreeMap::new();
    for (i, row) in tables.demographics.iter().enumerate() {
        demo_rows
            .entry(&row.enrol_id)
            .or_default()
            .push((i + 1, row));
    }
    let mut demographics: BTreeMap<&str, Demographics> = BTreeMap::new();
    for (enrol_id, rows) in demo_rows {
        let distinct: std::collections::BTreeSet<(&str, &str)> = rows
            .iter()
            .map(|(_, r)| (r.age.trim(), r.sex.trim()))
            .collect();
        if distinct.len() > 1 {
            for (row, _) in &rows {
                report.reject("demographics", *row, enrol_id, "conflicting duplicate");
            }
            continue;
        }
        let (row_no, row) = rows[0];
        let age = match row.age.trim().parse::<u32>() {
            Ok(a) => a,
            Err(_) => {
                report.reject(
                    "demographics",
                    row_no,
                    enrol_id,
                    format!("bad age {:?}", row.age),
                );
                continue;
            }
        };
        let sex = match row.sex.trim().parse::<Sex>() {
            Ok(s) => s,
            Err(_) => {
                report.reject(
                    "demographics",
                    row_no,
                    enrol_id,
                    format!("bad sex {:?}", row.sex),
                );
                continue;
            }
        };
        demographics.insert(
            enrol_id,
            Demographics {
                age_years: age,
                sex,
            },
        );
    }

    // Encounters keyed by (patient, encounter id); conflicting dates
    // reject the whole encounter id.
    let mut enc_rows: BTreeMap<(&str, &str), Vec<(usize, &EncounterRow)>> = BTreeMap::new();
    for (i, row) in tables.encounters.iter().enumerate() {
        enc_rows
            .entry((&row.enrol_id, &row.encounter_id))
            .or_default()
            .push((i + 1, row));
    }
    let mut encounters: BTreeMap<(&str, &str), Encounter> = BTreeMap::new();
    for ((enrol_id, encounter_id), rows) in enc_rows {
        let distinct: std::collections::BTreeSet<&str> =
            rows.iter().map(|(_, r)| r.svc_date.trim()).collect();
        if distinct.len() > 1 {
            for (row, _) in &rows {
                report.reject("encounter", *row, enrol_id, "conflicting duplicate");
            }
            continue;
        }
        let (row_no, row) = rows[0];
        let date = match parse_date(&row.svc_date) {
            Some(d) => d,
            None => {
                report.reject(
                    "encounter",
                    row_no,
                    enrol_id,
                    format!("bad date {:?}", row.svc_date),
                );
                continue;
            }
        };
        encounters.insert(
            (enrol_id, encounter_id),
            Encounter {
                encounter_id: encounter_id.to_string(),
                date,
                diagnoses: Vec::new(),
                procedures: Vec::new(),
            },
        );
        report.accepted_encounters += 1;
    }

    for (i, row) in tables.diagnoses.iter().enumerate() {
        let row_no = i + 1;
        let Some(enc) = encounters.get_mut(&(row.enrol_id.as_str(), row.encounter_id.as_str()))
        else {
            report.reject(
                "diagnosis",
                row_no,
                &row.enrol_id,
                format!("dangling encounter id {:?}", row.encounter_id),
            );
            continue;
        };
        let system = match row.system.trim().parse::<CodeSystem>() {
            Ok(s) => s,
            Err(_) => {
                report.reject(
                    "diagnosis",
                    row_no,
                    &row.enrol_id,
                    format!("bad system {:?}", row.system),
                );
                continue;
            }
        };
        match CodedItem::new(system, &row.code) {
            Ok(item) => {
                enc.diagnoses.push(item);
                report.accepted_diagnoses += 1;
            }
            Err(_) => report.reject("diagnosis", row_no, &row.enrol_id, "empty code"),
        }
    }

    for (i, row) in tables.procedures.iter().enumerate() {
        let row_no = i + 1;
        let Some(enc) = encounters.get_mut(&(row.enrol_id.as_str(), row.encounter_id.as_str()))
        else {
            report.reject(
                "procedure",
                row_no,
                &row.enrol_id,
                format!("dangling encounter id {:?}", row.encounter_id),
            );
            continue;
        };
        let system = match row.system.trim().parse::<CodeSystem>() {
            Ok(s) => s,
            Err(_) => {
                report.reject(
                    "procedure",
                    row_no,
                    &row.enrol_id,
                    format!("bad system {:?}", row.system),
                );
                continue;
            }
        };
        match CodedItem::new(system, &row.code) {
            Ok(item) => {
                enc.procedures.push(item);
                report.accepted_procedures += 1;
            }
            Err(_) => report.reject("procedure", row_no, &row.enrol_id, "empty code"),
        }
    }

    let mut prescriptions: BTreeMap<&str, Vec<Prescription>> = BTreeMap::new();
    for (i, row) in tables.prescriptions.iter().enumerate() {
        let row_no = i + 1;
        let Some(fill_date) = parse_date(&row.fill_date) else {
            report.reject(
                "prescription",
                row_no,
                &row.enrol_id,
                format!("bad date {:?}", row.fill_date),
            );
            continue;
        };
        prescriptions
            .entry(&row.enrol_id)
            .or_default()
            .push(Prescription {
                fill_date,
                drug_name: row.drug_name.trim().to_string(),
                therapeutic_class: row.therapeutic_class.trim().to_string(),
                strength: row.strength.trim().to_string(),
                route: row.route.trim().to_string(),
            });
        report.accepted_prescriptions += 1;
    }

    // Assemble per patient. A patient is any Enrol ID seen in any table;
    // records without a demographics row cannot be built and are
    // reported once.
    let mut patient_ids: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
    patient_ids.extend(demographics.keys().copied());
    patient_ids.extend(encounters.keys().map(|(p, _)| *p));
    patient_ids.extend(prescriptions.keys().copied());

    let mut patients = Vec::new();
    for enrol_id in patient_ids {
        let Some(demo) = demographics.get(enrol_id) else {
            report.reject("demographics", 0, enrol_id, "missing demographics row");
            continue;
        };
        let encs: Vec<Encounter> = encounters
            .range((enrol_id, "")..)
            .take_while(|((p, _), _)| *p == enrol_id)
            .map(|(_, e)| e.clone())
            .collect();
        let rx = prescriptions.remove(enrol_id).unwrap_or_default();
        patients.push(PatientRecord::new(enrol_id.to_string(), *demo, encs, rx));
    }
    report.patients = patients.len();

    (patients, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables_fixture() -> RawTables {
        let enc = |p: &str, e: &str, d: &str| EncounterRow {
            enrol_id: p.into(),
            encounter_id: e.into(),
            svc_date: d.into(),
        };
        let dx = |p: &str, e: &str, c: &str| DiagnosisRow {
            enrol_id: p.into(),
            encounter_id: e.into(),
            code: c.into(),
            system: "ICD10-DX".into(),
        };
        let proc_ = |p: &str, e: &str, c: &str| ProcedureRow {
            enrol_id: p.into(),
            encounter_id: e.into(),
            code: c.into(),
            system: "CPT".into(),
        };
        let rx = |p: &str, d: &str, n: &str| PrescriptionRow {
            enrol_id: p.into(),
            fill_date: d.into(),
            drug_name: n.into(),
            therapeutic_class: "Vaccines, NEC".into(),
            strength: "1".into(),
            route: "ORAL".into(),
        };
        let demo = |p: &str, a: &str| DemographicsRow {
            enrol_id: p.into(),
            age: a.into(),
            sex: "F".into(),
        };

        RawTables {
            encounters: vec![
                enc("P1", "E1", "2021-01-05"),
                enc("P1", "E2", "2021-03-10"),
                enc("P2", "E1", "2021-02-01"),
                enc("P3", "E1", "2021-04-01"),
                enc("P3", "E2", "2021-05-01"),
                enc("P3", "E3", "2021-06-01"),
            ],
            diagnoses: vec![
                dx("P1", "E1", "I10"),
                dx("P1", "E1", "E11.9"),
                dx("P1", "E2", "Z23"),
                dx("P2", "E1", "F41.9"),
                dx("P3", "E2", "N18.9"),
            ],
            procedures: vec![proc_("P1", "E1", "99213"), proc_("P3", "E3", "80053")],
            prescriptions: vec![
                rx("P2", "2021-02-03", "AMOXICILLIN"),
                rx("P2", "2021-02-20", "IBUPROFEN"),
            ],
            demographics: vec![demo("P1", "40"), demo("P2", "55"), demo("P3", "33")],
        }
    }

    #[test]
    fn joins_rows_sharing_an_encounter_id() {
        let (patients, report) = parse_claims_tables(&tables_fixture());
        assert!(report.rejections.is_empty());
        let p1 = &patients[0];
        assert_eq!(p1.enrol_id, "P1");
        assert_eq!(p1.encounters[0].diagnoses.len(), 2);
        assert_eq!(p1.encounters[0].procedures.len(), 1);
        // normalization applied during ingestion
        assert_eq!(p1.encounters[0].diagnoses[0].code, "E119");
    }

    #[test]
    fn three_patient_fixture_counts() {
        // Hand-counted from the fixture: P1 has 2 encounters and 0 fills,
        // P2 has 1 encounter and 2 fills, P3 has 3 encounters and 0 fills.
        let (patients, report) = parse_claims_tables(&tables_fixture());
        assert_eq!(report.patients, 3);
        let counts: Vec<(usize, usize)> = patients
            .iter()
            .map(|p| (p.encounters.len(), p.prescriptions.len()))
            .collect();
        assert_eq!(counts, [(2, 0), (1, 2), (3, 0)]);
        assert_eq!(report.accepted_encounters, 6);
        assert_eq!(report.accepted_diagnoses, 5);
        assert_eq!(report.accepted_procedures, 2);
        assert_eq!(report.accepted_prescriptions, 2);
    }

    #[test]
    fn empty_prescription_table_gives_empty_fill_lists() {
        let mut tables = tables_fixture();
        tables.prescriptions.clear();
        let (patients, _) = parse_claims_tables(&tables);
        assert!(patients.iter().all(|p| p.prescriptions.is_empty()));
    }

    #[test]
    fn dangling_and_malformed_rows_are_rejected_individually() {
        let mut tables = tables_fixture();
        tables.diagnoses.push(DiagnosisRow {
            enrol_id: "P1".into(),
            encounter_id: "E99".into(),
            code: "I10".into(),
            system: "ICD10-DX".into(),
        });
        tables.encounters.push(EncounterRow {
            enrol_id: "P2".into(),
            encounter_id: "E7".into(),
            svc_date: "02/01/2021".into(),
        });
        let (patients, report) = parse_claims_tables(&tables);
        assert_eq!(patients.len(), 3);
        assert_eq!(report.rejections.len(), 2);
        assert!(report
            .rejections
            .iter()
            .any(|r| r.reason.contains("dangling")));
        assert!(report
            .rejections
            .iter()
            .any(|r| r.reason.contains("bad date")));
        // the rest of P1/P2's history survives
        assert_eq!(patients[0].encounters.len(), 2);
    }

    #[test]
    fn output_is_invariant_under_row_permutation() {
        let tables = tables_fixture();
        let mut shuffled = tables.clone();
        shuffled.encounters.reverse();
        shuffled.diagnoses.rotate_left(2);
        shuffled.procedures.reverse();
        shuffled.prescriptions.reverse();
        shuffled.demographics.rotate_left(1);
        let (a, _) = parse_claims_tables(&tables);
        let (b, _) = parse_claims_tables(&shuffled);
        assert_eq!(a, b);
    }

    #[test]
    fn missing_demographics_drops_patient_with_report() {
        let mut tables = tables_fixture();
        tables.demographics.retain(|d| d.enrol_id != "P3");
        let (patients, report) = parse_claims_tables(&tables);
        assert_eq!(patients.len(), 2);
        assert!(report
            .rejections
            .iter()
            .any(|r| r.enrol_id == "P3" && r.reason.contains("missing demographics")));
    }

    #[test]
    fn encounters_sorted_by_date_within_patient() {
        let (patients, _) = parse_claims_tables(&tables_fixture());
        for p in &patients {
            for pair in p.encounters.windows(2) {
                assert!(pair[0].date <= pair[1].date);
            }
        }
    }
}
