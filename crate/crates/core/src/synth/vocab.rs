//! Built-in code pools for the synthetic population.
//!
//! Pool composition mirrors the qualitative structure of real claims:
//! a shared pool of routine-care codes, a risk pool (anxiety, depression,
//! psychotropic fills) that cases draw from at an elevated rate, the
//! opioid/stimulant exposure items, overdose anchor codes, and a few
//! adverse-effect/underdosing T-codes that must NOT classify as overdose.

use serde::{Deserialize, Serialize};

use crate::claims::{CodeSystem, EXPOSURE_CLASS_OPIOID, EXPOSURE_CLASS_STIMULANT};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DxSpec {
    pub system: CodeSystem,
    pub code: String,
    pub description: String,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcSpec {
    pub system: CodeSystem,
    pub code: String,
    pub description: String,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RxSpec {
    pub drug_name: String,
    pub therapeutic_class: String,
    pub strength: String,
    pub route: String,
}

fn one() -> f64 {
    1.0
}

/// Code pools the generator samples from. Defaults to the built-in
/// synthetic vocabulary; fully overridable through configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthVocab {
    pub common_dx: Vec<DxSpec>,
    pub risk_dx: Vec<DxSpec>,
    pub exposure_dx: Vec<DxSpec>,
    pub overdose_dx: Vec<DxSpec>,
    pub adverse_dx: Vec<DxSpec>,
    pub procedures: Vec<ProcSpec>,
    pub common_rx: Vec<RxSpec>,
    pub risk_rx: Vec<RxSpec>,
    pub exposure_rx: Vec<RxSpec>,
}

fn dx(system: CodeSystem, code: &str, description: &str, weight: f64) -> DxSpec {
    DxSpec {
        system,
        code: code.into(),
        description: description.into(),
        weight,
    }
}

fn proc_(system: CodeSystem, code: &str, description: &str, weight: f64) -> ProcSpec {
    ProcSpec {
        system,
        code: code.into(),
        description: description.into(),
        weight,
    }
}

fn rx(drug: &str, class: &str, strength: &str, route: &str) -> RxSpec {
    RxSpec {
        drug_name: drug.into(),
        therapeutic_class: class.into(),
        strength: strength.into(),
        route: route.into(),
    }
}

impl Default for SynthVocab {
    fn default() -> Self {
        use CodeSystem::{Cpt, Icd10Dx, Icd9Dx, Icd9Pcs};
        SynthVocab {
            common_dx: vec![
                dx(Icd10Dx, "I10", "Essential (primary) hypertension", 3.0),
                dx(Icd10Dx, "Z0000", "Encounter for general adult medical examination without abnormal findings", 2.5),
                dx(Icd10Dx, "Z23", "Encounter for immunization", 2.5),
                dx(Icd10Dx, "E785", "Hyperlipidemia, unspecified", 2.0),
                dx(Icd10Dx, "Z20822", "Contact with and (suspected) exposure to COVID-19", 2.0),
                dx(Icd10Dx, "E119", "Type 2 diabetes mellitus without complications", 1.5),
                dx(Icd10Dx, "E559", "Vitamin D deficiency, unspecified", 1.5),
                dx(Icd10Dx, "Z1231", "Encounter for screening mammogram for malignant neoplasm of breast", 1.0),
                dx(Icd10Dx, "E782", "Mixed hyperlipidemia", 1.0),
                dx(Icd10Dx, "J069", "Acute upper respiratory infection, unspecified", 1.5),
                dx(Icd10Dx, "M545", "Low back pain", 1.5),
                dx(Icd10Dx, "K219", "Gastro-esophageal reflux disease without esophagitis", 1.0),
                dx(Icd10Dx, "N189", "Chronic kidney disease, unspecified", 0.8),
                dx(Icd9Dx, "4019", "Unspecified essential hypertension", 0.5),
            ],
            risk_dx: vec![
                dx(Icd10Dx, "F419", "Anxiety disorder, unspecified", 1.0),
                dx(Icd10Dx, "F411", "Generalized anxiety disorder", 1.0),
                dx(Icd10Dx, "F329", "Major depressive disorder, single episode, unspecified", 1.0),
                dx(Icd10Dx, "Z79899", "Other long term (current) drug therapy", 1.0),
                dx(Icd10Dx, "R0602", "Shortness of breath", 1.0),
                dx(Icd10Dx, "F1720", "Nicotine dependence, unspecified, uncomplicated", 1.0),
                dx(Icd10Dx, "G4700", "Insomnia, unspecified", 1.0),
                dx(Icd10Dx, "F319", "Bipolar disorder, unspecified", 1.0),
            ],
            exposure_dx: vec![
                dx(Icd10Dx, "F1120", "Opioid dependence, uncomplicated", 1.0),
                dx(Icd10Dx, "F1490", "Cocaine use, unspecified, uncomplicated", 1.0),
                dx(Icd10Dx, "F1510", "Other stimulant abuse, uncomplicated", 1.0),
                dx(Icd9Dx, "30400", "Opioid type dependence, unspecified", 1.0),
                dx(Icd9Dx, "30550", "Opioid abuse, unspecified", 1.0),
            ],
            overdose_dx: vec![
                dx(Icd10Dx, "T402X1A", "Poisoning by other opioids, accidental (unintentional), initial encounter", 1.0),
                dx(Icd10Dx, "T402X2A", "Poisoning by other opioids, intentional self-harm, initial encounter", 1.0),
                dx(Icd10Dx, "T40491A", "Poisoning by other synthetic narcotics, accidental (unintentional), initial encounter", 1.0),
                dx(Icd10Dx, "T424X1A", "Poisoning by benzodiazepines, accidental (unintentional), initial encounter", 1.0),
                dx(Icd10Dx, "T43591A", "Poisoning by other antipsychotics and neuroleptics, accidental (unintentional), initial encounter", 1.0),
                dx(Icd10Dx, "T509X1A", "Poisoning by other drugs, medicaments and biological substances, accidental (unintentional), initial encounter", 1.0),
                dx(Icd9Dx, "96509", "Poisoning by opium (alkaloids), unspecified", 1.0),
                dx(Icd9Dx, "9694", "Poisoning by benzodiazepine-based tranquilizers", 1.0),
                dx(Icd9Dx, "E8502", "Accidental poisoning by opiates and related narcotics", 1.0),
            ],
            adverse_dx: vec![
                dx(Icd10Dx, "T402X5A", "Adverse effect of other opioids, initial encounter", 1.0),
                dx(Icd10Dx, "T424X6A", "Underdosing of benzodiazepines, initial encounter", 1.0),
                dx(Icd10Dx, "T509X5A", "Adverse effect of other drugs, medicaments and biological substances, initial encounter", 1.0),
            ],
            procedures: vec![
                proc_(Cpt, "99213", "Office or other outpatient visit, established patient, low complexity", 3.0),
                proc_(Cpt, "99214", "Office or other outpatient visit, established patient, moderate complexity", 2.0),
                proc_(Cpt, "80053", "Comprehensive metabolic panel", 1.5),
                proc_(Cpt, "85025", "Complete blood count with automated differential", 1.5),
                proc_(Cpt, "93000", "Electrocardiogram, routine, with interpretation and report", 1.0),
                proc_(Cpt, "36415", "Collection of venous blood by venipuncture", 1.5),
                proc_(Cpt, "90834", "Psychotherapy, 45 minutes with patient", 0.8),
                proc_(Cpt, "80307", "Presumptive drug class screening by instrument chemistry analyzers", 0.8),
                proc_(Icd9Pcs, "8952", "Electrocardiogram", 0.5),
                proc_(Icd9Pcs, "9925", "Prophylactic administration of vaccine against other diseases", 0.5),
            ],
            common_rx: vec![
                rx("ATORVASTATIN CALCIUM", "Antihyperlipidemic Drugs, NEC", "20 MG", "ORAL"),
                rx("METOPROLOL SUCCINATE", "Cardiac, Beta Blockers", "50 MG", "ORAL"),
                rx("INFLUENZA VACCINE", "Vaccines, NEC", "0.5 ML", "INTRAMUSCULAR"),
                rx("OMEPRAZOLE", "Gastrointestinal Drugs Misc, NEC", "20 MG", "ORAL"),
                rx("AMOXICILLIN", "Antibiot, Penicillins", "500 MG", "ORAL"),
                rx("IBUPROFEN", "Analg/Antipyr, Nonsteroid/Antiinflam", "600 MG", "ORAL"),
                rx("LISINOPRIL", "ACE Inhibitors", "10 MG", "ORAL"),
            ],
            risk_rx: vec![
                rx("SERTRALINE HCL", "Psychother, Antidepressants", "50 MG", "ORAL"),
                rx("ESCITALOPRAM OXALATE", "Psychother, Antidepressants", "10 MG", "ORAL"),
                rx("PREDNISONE", "Adrenals & Comb, NEC", "10 MG", "ORAL"),
                rx("GABAPENTIN", "Anticonvulsants, Misc", "300 MG", "ORAL"),
                rx("ONDANSETRON HCL", "Antiemetics, NEC", "4 MG", "ORAL"),
                rx("ZOLPIDEM TARTRATE", "Anxiolytic/Sedative/Hypnotic NEC", "10 MG", "ORAL"),
            ],
            exposure_rx: vec![
                rx("OXYCODONE HCL", EXPOSURE_CLASS_OPIOID, "5 MG", "ORAL"),
                rx("HYDROCODONE-ACETAMINOPHEN", EXPOSURE_CLASS_OPIOID, "5-325 MG", "ORAL"),
                rx("TRAMADOL HCL", EXPOSURE_CLASS_OPIOID, "50 MG", "ORAL"),
                rx("AMPHETAMINE-DEXTROAMPHETAMINE", EXPOSURE_CLASS_STIMULANT, "20 MG", "ORAL"),
                rx("METHYLPHENIDATE HCL", EXPOSURE_CLASS_STIMULANT, "10 MG", "ORAL"),
            ],
        }
    }
}

impl SynthVocab {
    pub fn validate(&self) -> crate::error::Result<()> {
        let pools: [(&str, usize); 9] = [
            ("common_dx", self.common_dx.len()),
            ("risk_dx", self.risk_dx.len()),
            ("exposure_dx", self.exposure_dx.len()),
            ("overdose_dx", self.overdose_dx.len()),
            ("adverse_dx", self.adverse_dx.len()),
            ("procedures", self.procedures.len()),
            ("common_rx", self.common_rx.len()),
            ("risk_rx", self.risk_rx.len()),
            ("exposure_rx", self.exposure_rx.len()),
        ];
        for (name, len) in pools {
            if len == 0 {
                return Err(crate::error::Error::Config(format!(
                    "empty vocab pool {name}"
                )));
            }
        }
        Ok(())
    }
}
