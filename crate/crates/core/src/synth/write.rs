//! Emit a generated population as the five claims CSVs plus the
//! `labels.csv` sidecar. Row order is canonical (patients by enrol id,
//! events in record order), so parsing the files back reproduces the
//! population exactly.

use std::path::Path;

use crate::cohort::CohortLabel;
use crate::error::{Error, Result};

use super::{LabeledPopulation, Split};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write `encounter.csv`, `diagnosis.csv`, `procedure.csv`,
/// `prescription.csv`, `demographics.csv`, and `labels.csv` into `dir`.
pub fn write_population_tables(population: &LabeledPopulation, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let enc_path = dir.join("encounter.csv");
    let dx_path = dir.join("diagnosis.csv");
    let proc_path = dir.join("procedure.csv");
    let rx_path = dir.join("prescription.csv");
    let demo_path = dir.join("demographics.csv");
    let labels_path = dir.join("labels.csv");

    let mut enc_w = writer(&enc_path)?;
    let mut dx_w = writer(&dx_path)?;
    let mut proc_w = writer(&proc_path)?;
    let mut rx_w = writer(&rx_path)?;
    let mut demo_w = writer(&demo_path)?;
    let mut labels_w = writer(&labels_path)?;

    enc_w
        .write_record(["ENROLID", "ENCOUNTERID", "SVCDATE"])
        .map_err(|e| Error::csv(&enc_path, e))?;
    dx_w.write_record(["ENROLID", "ENCOUNTERID", "DIAG_CD", "DIAG_SYS"])
        .map_err(|e| Error::csv(&dx_path, e))?;
    proc_w
        .write_record(["ENROLID", "ENCOUNTERID", "PROC_CD", "PROC_SYS"])
        .map_err(|e| Error::csv(&proc_path, e))?;
    rx_w.write_record([
        "ENROLID", "FILLDATE", "DRUGNAME", "THERCLS", "STRENGTH", "ROUTE",
    ])
    .map_err(|e| Error::csv(&rx_path, e))?;
    demo_w
        .write_record(["ENROLID", "AGE", "SEX"])
        .map_err(|e| Error::csv(&demo_path, e))?;
    labels_w
        .write_record(["ENROLID", "SPLIT", "INTENDED_LABEL"])
        .map_err(|e| Error::csv(&labels_path, e))?;

    for (patient, (label_id, intended)) in population.patients.iter().zip(&population.labels) {
        let id = &patient.enrol_id;
        demo_w
            .write_record([
                id.as_str(),
                &patient.demographics.age_years.to_string(),
                patient.demographics.sex.as_str(),
            ])
            .map_err(|e| Error::csv(&demo_path, e))?;

        for enc in &patient.encounters {
            let date = enc.date.format("%Y-%m-%d").to_string();
            enc_w
                .write_record([id.as_str(), &enc.encounter_id, &date])
                .map_err(|e| Error::csv(&enc_path, e))?;
            for d in &enc.diagnoses {
                dx_w.write_record([id.as_str(), &enc.encounter_id, &d.code, d.system.as_str()])
                    .map_err(|e| Error::csv(&dx_path, e))?;
            }
            for p in &enc.procedures {
                proc_w
                    .write_record([id.as_str(), &enc.encounter_id, &p.code, p.system.as_str()])
                    .map_err(|e| Error::csv(&proc_path, e))?;
            }
        }

        for rx in &patient.prescriptions {
            rx_w.write_record([
                id.as_str(),
                &rx.fill_date.format("%Y-%m-%d").to_string(),
                &rx.drug_name,
                &rx.therapeutic_class,
                &rx.strength,
                &rx.route,
            ])
            .map_err(|e| Error::csv(&rx_path, e))?;
        }

        labels_w
            .write_record([
                label_id.as_str(),
                population.split.as_str(),
                intended_token(*intended),
            ])
            .map_err(|e| Error::csv(&labels_path, e))?;
    }

    finish(enc_w, &enc_path)?;
    finish(dx_w, &dx_path)?;
    finish(proc_w, &proc_path)?;
    finish(rx_w, &rx_path)?;
    finish(demo_w, &demo_path)?;
    finish(labels_w, &labels_path)
}

fn intended_token(label: CohortLabel) -> &'static str {
    match label {
        CohortLabel::Case => "case",
        CohortLabel::ControlExposed => "control-exposed",
        CohortLabel::ControlNonExposed => "control-nonexposed",
    }
}

fn intended_from_token(s: &str) -> Result<CohortLabel> {
    match s {
        "case" => Ok(CohortLabel::Case),
        "control-exposed" => Ok(CohortLabel::ControlExposed),
        "control-nonexposed" => Ok(CohortLabel::ControlNonExposed),
        other => Err(Error::Validation(format!(
            "unknown intended label {other:?}"
        ))),
    }
}

/// Read the labels sidecar back.
pub fn read_labels(path: &Path) -> Result<Vec<(String, Split, CohortLabel)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        if record.len() != 3 {
            return Err(Error::Validation(format!(
                "labels row with {} fields",
                record.len()
            )));
        }
        let split: Split = record[1].parse()?;
        rows.push((
            record[0].to_string(),
            split,
            intended_from_token(&record[2])?,
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::{parse_claims_tables, read_tables};
    use crate::synth::{generate_population, GeneratorConfig};

    #[test]
    fn write_then_parse_is_the_identity() {
        let cfg = GeneratorConfig {
            n_case: 10,
            n_control: 20,
            ..GeneratorConfig::default()
        };
        let pop = generate_population(&cfg, Split::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_population_tables(&pop, dir.path()).unwrap();

        let tables = read_tables(dir.path()).unwrap();
        let (parsed, report) = parse_claims_tables(&tables);
        assert!(report.rejections.is_empty());
        assert_eq!(parsed, pop.patients);

        let labels = read_labels(&dir.path().join("labels.csv")).unwrap();
        assert_eq!(labels.len(), 30);
        assert!(labels.iter().all(|(_, split, _)| *split == Split::Train));
    }

    #[test]
    fn single_patient_row_counts() {
        let cfg = GeneratorConfig {
            n_case: 1,
            n_control: 1,
            ..GeneratorConfig::default()
        };
        let pop = generate_population(&cfg, Split::Test).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_population_tables(&pop, dir.path()).unwrap();

        let text = std::fs::read_to_string(dir.path().join("encounter.csv")).unwrap();
        let data_rows = text.lines().count() - 1;
        let expected: usize = pop.patients.iter().map(|p| p.encounters.len()).sum();
        assert_eq!(data_rows, expected);
    }

    #[test]
    fn empty_prescriptions_leave_header_only() {
        let cfg = GeneratorConfig {
            n_case: 1,
            n_control: 1,
            ..GeneratorConfig::default()
        };
        let mut pop = generate_population(&cfg, Split::Test).unwrap();
        for p in &mut pop.patients {
            p.prescriptions.clear();
        }
        let dir = tempfile::tempdir().unwrap();
        write_population_tables(&pop, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("prescription.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("ENROLID,FILLDATE"));
    }

    #[test]
    fn writes_are_deterministic() {
        let cfg = GeneratorConfig {
            n_case: 5,
            n_control: 10,
            ..GeneratorConfig::default()
        };
        let pop = generate_population(&cfg, Split::Test).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_population_tables(&pop, dir_a.path()).unwrap();
        write_population_tables(&pop, dir_b.path()).unwrap();
        for file in [
            "encounter.csv",
            "diagnosis.csv",
            "procedure.csv",
            "prescription.csv",
            "demographics.csv",
            "labels.csv",
        ] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs");
        }
    }
}
