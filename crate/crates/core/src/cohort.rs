//! Cohort screening and temporal cutoff alignment.
//!
//! A patient becomes a [`PredictionInstance`] by anchoring on an event
//! (first overdose encounter for cases, last visit for controls),
//! checking that the immediately preceding encounter falls within the
//! prediction window, and truncating all history after that preceding
//! encounter's date — the cutoff. Nothing dated after the cutoff is ever
//! visible to a predictor.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::claims::{
    is_exposure_diagnosis, is_exposure_prescription, is_overdose_diagnosis, Encounter,
    PatientRecord,
};
use crate::error::{Error, Result};

/// Prediction horizon in days after the cutoff date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionWindow(u32);

impl PredictionWindow {
    pub fn new(days: u32) -> Result<Self> {
        if days == 0 {
            return Err(Error::Validation(
                "prediction window must be at least 1 day".into(),
            ));
        }
        Ok(PredictionWindow(days))
    }

    pub fn days(self) -> u32 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CohortLabel {
    Case,
    ControlExposed,
    ControlNonExposed,
}

impl CohortLabel {
    pub fn is_control(self) -> bool {
        !matches!(self, CohortLabel::Case)
    }
}

/// Binary prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeLabel {
    Overdose,
    NoOverdose,
}

impl OutcomeLabel {
    /// The answer token a predictor is expected to produce.
    pub fn answer_token(self) -> &'static str {
        match self {
            OutcomeLabel::Overdose => "yes",
            OutcomeLabel::NoOverdose => "no",
        }
    }
}

/// One patient history truncated at a cutoff date, labeled for a window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionInstance {
    pub enrol_id: String,
    pub cutoff_date: NaiveDate,
    #[serde(rename = "window_days")]
    pub window: PredictionWindow,
    pub label: OutcomeLabel,
    pub cohort: CohortLabel,
    pub history: PatientRecord,
}

/// Eligibility: adult, at least 12 months of data, at least five medical
/// events (diagnoses + procedures + prescription fills).
pub fn check_eligibility(patient: &PatientRecord) -> bool {
    patient.demographics.age_years >= 18 && patient.span_days() >= 365 && patient.event_count() >= 5
}

/// Case if any encounter carries an overdose diagnosis; otherwise exposed
/// control if any exposure prescription or diagnosis exists; otherwise
/// non-exposed control.
pub fn classify_cohort(patient: &PatientRecord) -> CohortLabel {
    let has_overdose = patient
        .encounters
        .iter()
        .any(|e| e.diagnoses.iter().any(is_overdose_diagnosis));
    if has_overdose {
        return CohortLabel::Case;
    }
    let exposed = patient.prescriptions.iter().any(is_exposure_prescription)
        || patient
            .encounters
            .iter()
            .any(|e| e.diagnoses.iter().any(is_exposure_diagnosis));
    if exposed {
        CohortLabel::ControlExposed
    } else {
        CohortLabel::ControlNonExposed
    }
}

fn first_overdose_encounter(patient: &PatientRecord) -> Option<&Encounter> {
    patient
        .encounters
        .iter()
        .find(|e| e.diagnoses.iter().any(is_overdose_diagnosis))
}

/// Truncate a record to events dated on or before `cutoff`.
fn truncate_history(patient: &PatientRecord, cutoff: NaiveDate) -> PatientRecord {
    PatientRecord {
        enrol_id: patient.enrol_id.clone(),
        demographics: patient.demographics,
        encounters: patient
            .encounters
            .iter()
            .filter(|e| e.date <= cutoff)
            .cloned()
            .collect(),
        prescriptions: patient
            .prescriptions
            .iter()
            .filter(|p| p.fill_date <= cutoff)
            .cloned()
            .collect(),
    }
}

/// Align a case patient: anchor on the first overdose encounter, cut at
/// the latest encounter strictly before it. Returns nothing when no
/// encounter precedes the overdose or the gap exceeds the window.
pub fn align_case(patient: &PatientRecord, window: PredictionWindow) -> Option<PredictionInstance> {
    let overdose = first_overdose_encounter(patient)?;
    let prev = patient
        .encounters
        .iter()
        .rfind(|e| e.date < overdose.date)?;
    let gap = (overdose.date - prev.date).num_days();
    if gap > i64::from(window.days()) {
        return None;
    }
    Some(PredictionInstance {
        enrol_id: patient.enrol_id.clone(),
        cutoff_date: prev.date,
        window,
        label: OutcomeLabel::Overdose,
        cohort: CohortLabel::Case,
        history: truncate_history(patient, prev.date),
    })
}

/// Align a control patient: anchor on the most recent visit, cut at the
/// encounter immediately preceding it in `(date, encounter_id)` order.
/// A same-day predecessor (gap 0) is allowed.
pub fn align_control(
    patient: &PatientRecord,
    window: PredictionWindow,
) -> Option<PredictionInstance> {
    let n = patient.encounters.len();
    if n < 2 {
        return None;
    }
    let last = &patient.encounters[n - 1];
    let prev = &patient.encounters[n - 2];
    let gap = (last.date - prev.date).num_days();
    if gap > i64::from(window.days()) {
        return None;
    }
    Some(PredictionInstance {
        enrol_id: patient.enrol_id.clone(),
        cutoff_date: prev.date,
        window,
        label: OutcomeLabel::NoOverdose,
        cohort: classify_cohort(patient),
        history: truncate_history(patient, prev.date),
    })
}

/// Why a patient produced no instance for a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    Ineligible,
    CaseNoPredecessor,
    CaseGapExceedsWindow,
    ControlTooFewEncounters,
    ControlGapExceedsWindow,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskSetSummary {
    pub instances: usize,
    pub cases: usize,
    pub controls_exposed: usize,
    pub controls_non_exposed: usize,
    pub dropped: Vec<(String, DropReason)>,
}

/// Build the prediction task set for one window: classify every patient,
/// align per cohort, and return instances sorted by enrol id plus a
/// summary of drops.
pub fn build_task_set(
    patients: &[PatientRecord],
    window: PredictionWindow,
) -> (Vec<PredictionInstance>, TaskSetSummary) {
    let mut summary = TaskSetSummary::default();
    let mut instances = Vec::new();

    for patient in patients {
        if !check_eligibility(patient) {
            summary
                .dropped
                .push((patient.enrol_id.clone(), DropReason::Ineligible));
            continue;
        }
        let cohort = classify_cohort(patient);
        let aligned = if cohort == CohortLabel::Case {
            align_case(patient, window)
        } else {
            align_control(patient, window)
        };
        match aligned {
            Some(instance) => {
                match instance.cohort {
                    CohortLabel::Case => summary.cases += 1,
                    CohortLabel::ControlExposed => summary.controls_exposed += 1,
                    CohortLabel::ControlNonExposed => summary.controls_non_exposed += 1,
                }
                instances.push(instance);
            }
            None => {
                let reason = match cohort {
                    CohortLabel::Case => {
                        let overdose_date = first_overdose_encounter(patient).map(|e| e.date);
                        let has_predecessor = overdose_date
                            .is_some_and(|od| patient.encounters.iter().any(|e| e.date < od));
                        if has_predecessor {
                            DropReason::CaseGapExceedsWindow
                        } else {
                            DropReason::CaseNoPredecessor
                        }
                    }
                    _ => {
                        if patient.encounters.len() < 2 {
                            DropReason::ControlTooFewEncounters
                        } else {
                            DropReason::ControlGapExceedsWindow
                        }
                    }
                };
                summary.dropped.push((patient.enrol_id.clone(), reason));
            }
        }
    }

    instances.sort_by(|a, b| a.enrol_id.cmp(&b.enrol_id));
    summary.instances = instances.len();
    (instances, summary)
}

/// The portion of an instance's history a renderer or vectorizer may see:
/// the last `max_visits` encounters plus prescriptions filled between the
/// first included encounter and the cutoff.
pub struct IncludedWindow<'a> {
    pub encounters: &'a [Encounter],
    pub prescriptions: Vec<&'a crate::claims::Prescription>,
}

impl PredictionInstance {
    pub fn included_window(&self, max_visits: usize) -> IncludedWindow<'_> {
        let n = self.history.encounters.len();
        let start = n.saturating_sub(max_visits.max(1));
        let encounters = &self.history.encounters[start..];
        let prescriptions = match encounters.first() {
            Some(first) => self
                .history
                .prescriptions
                .iter()
                .filter(|p| p.fill_date >= first.date && p.fill_date <= self.cutoff_date)
                .collect(),
            None => Vec::new(),
        };
        IncludedWindow {
            encounters,
            prescriptions,
        }
    }
}
