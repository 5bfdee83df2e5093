//! Patient-level generation.
//!
//! RNG discipline: every probabilistic slot draws its uniforms and pool
//! picks unconditionally, and inclusion is decided by comparing a drawn
//! uniform against the (possibly signal-scaled) rate. The draw sequence
//! therefore never depends on `signal_strength`, which makes the planted
//! case/control frequency gap pointwise monotone in the signal.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::claims::{CodedItem, Demographics, Encounter, PatientRecord, Prescription, Sex};
use crate::cohort::CohortLabel;
use crate::error::Result;

use super::vocab::{DxSpec, ProcSpec, RxSpec};
use super::{GeneratorConfig, LabeledPopulation, Split};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn patient_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mixed = splitmix64(seed ^ splitmix64(split.ordinal()) ^ splitmix64(index as u64 + 1));
    ChaCha8Rng::seed_from_u64(mixed)
}

fn weighted_pick<'a, T>(pool: &'a [T], weight: impl Fn(&T) -> f64, rng: &mut ChaCha8Rng) -> &'a T {
    let total: f64 = pool.iter().map(&weight).sum();
    let mut target = rng.gen::<f64>() * total;
    for entry in pool {
        target -= weight(entry);
        if target <= 0.0 {
            return entry;
        }
    }
    pool.last().expect("pool validated non-empty")
}

fn uniform_pick<'a, T>(pool: &'a [T], rng: &mut ChaCha8Rng) -> &'a T {
    &pool[rng.gen_range(0..pool.len())]
}

fn pick_dx(pool: &[DxSpec], rng: &mut ChaCha8Rng) -> CodedItem {
    let spec = weighted_pick(pool, |d| d.weight, rng);
    CodedItem {
        system: spec.system,
        code: spec.code.clone(),
        description: None,
    }
}

fn pick_proc(pool: &[ProcSpec], rng: &mut ChaCha8Rng) -> CodedItem {
    let spec = weighted_pick(pool, |p| p.weight, rng);
    CodedItem {
        system: spec.system,
        code: spec.code.clone(),
        description: None,
    }
}

fn fill_from(spec: &RxSpec, date: NaiveDate) -> Prescription {
    Prescription {
        fill_date: date,
        drug_name: spec.drug_name.clone(),
        therapeutic_class: spec.therapeutic_class.clone(),
        strength: spec.strength.clone(),
        route: spec.route.clone(),
    }
}

fn sample_visit_count(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let p = cfg.visits.geom_p;
    let geometric = ((1.0 - u).ln() / (1.0 - p).ln()).floor() as u32;
    (cfg.visits.min + geometric).min(cfg.visits.max) as usize
}

fn generate_patient(
    cfg: &GeneratorConfig,
    split: Split,
    index: usize,
    role: CohortLabel,
) -> PatientRecord {
    let mut rng = patient_rng(cfg.seed, split, index);
    let rates = &cfg.rates;
    let vocab = &cfg.vocab;
    let is_case = role == CohortLabel::Case;
    let signal = if is_case { cfg.signal_strength } else { 0.0 };

    let age = rng.gen_range(18u32..=85);
    let sex = {
        let u: f64 = rng.gen();
        if u < 0.49 {
            Sex::F
        } else if u < 0.98 {
            Sex::M
        } else {
            Sex::U
        }
    };

    let n_visits = sample_visit_count(cfg, &mut rng);
    let range_days = (cfg.date_end - cfg.date_start).num_days();
    let gap = i64::from(rng.gen_range(1..=cfg.window_days));
    let extra_max = (range_days - 365).min(180);
    let span = 365 + rng.gen_range(0..=extra_max);

    let anchor = cfg.date_start + Days::new(rng.gen_range(span..=range_days) as u64);
    let first = anchor - Days::new(span as u64);
    let prev = anchor - Days::new(gap as u64);

    // interior visits live strictly between the first visit and the
    // pre-anchor visit; same-day repeats are allowed
    let mut interior: Vec<NaiveDate> = (0..n_visits.saturating_sub(3))
        .map(|_| first + Days::new(rng.gen_range(1..span - gap) as u64))
        .collect();
    interior.sort();

    let mut dates = Vec::with_capacity(n_visits);
    dates.push(first);
    dates.extend(interior);
    dates.push(prev);
    dates.push(anchor);

    // patient-level plants
    let exposed = match role {
        CohortLabel::Case => rng.gen::<f64>() < cfg.exposed_fraction,
        CohortLabel::ControlExposed => {
            let _ = rng.gen::<f64>();
            true
        }
        CohortLabel::ControlNonExposed => {
            let _ = rng.gen::<f64>();
            false
        }
    };
    let has_adverse = rng.gen::<f64>() < rates.adverse_rate && !is_case;
    let adverse_visit = rng.gen_range(0..dates.len().saturating_sub(1).max(1));
    let adverse_code = pick_dx(&vocab.adverse_dx, &mut rng);

    let wants_exposure_dx = rng.gen::<f64>() < rates.exposure_dx_rate;
    let exposure_dx_visit = rng.gen_range(0..dates.len().saturating_sub(1).max(1));
    let exposure_dx = pick_dx(&vocab.exposure_dx, &mut rng);

    let risk_dx_rate = rates.risk_dx_base + signal * rates.risk_dx_lift;
    let risk_rx_rate = rates.risk_rx_base + signal * rates.risk_rx_lift;
    let opioid_rate = signal * rates.opioid_lift;

    let mut encounters = Vec::with_capacity(dates.len());
    let mut prescriptions = Vec::new();

    for (i, &date) in dates.iter().enumerate() {
        let is_anchor = i == dates.len() - 1;
        let mut diagnoses = Vec::new();

        if is_anchor && is_case {
            diagnoses.push(pick_dx(&vocab.overdose_dx, &mut rng));
            diagnoses.push(pick_dx(&vocab.common_dx, &mut rng));
        } else {
            diagnoses.push(pick_dx(&vocab.common_dx, &mut rng));
            let u_extra: f64 = rng.gen();
            let extra_a = pick_dx(&vocab.common_dx, &mut rng);
            let extra_b = pick_dx(&vocab.common_dx, &mut rng);
            if u_extra >= 0.45 {
                diagnoses.push(extra_a);
            }
            if u_extra >= 0.85 {
                diagnoses.push(extra_b);
            }
            for _ in 0..2 {
                let u: f64 = rng.gen();
                let pick = pick_dx(&vocab.risk_dx, &mut rng);
                if u < risk_dx_rate {
                    diagnoses.push(pick);
                }
            }
            if has_adverse && i == adverse_visit {
                diagnoses.push(adverse_code.clone());
            }
            if exposed && wants_exposure_dx && i == exposure_dx_visit {
                diagnoses.push(exposure_dx.clone());
            }
        }

        let mut procedures = Vec::new();
        let u_proc: f64 = rng.gen();
        let proc_a = pick_proc(&vocab.procedures, &mut rng);
        let proc_b = pick_proc(&vocab.procedures, &mut rng);
        if u_proc >= 0.35 {
            procedures.push(proc_a);
        }
        if u_proc >= 0.80 {
            procedures.push(proc_b);
        }

        encounters.push(Encounter {
            encounter_id: format!("E{:03}", i + 1),
            date,
            diagnoses,
            procedures,
        });

        // fills are anchored to non-final visits so planted exposure
        // survives truncation at the pre-anchor cutoff
        if !is_anchor {
            let u_fill: f64 = rng.gen();
            let jitter = rng.gen_range(0..=3u64);
            let u_kind: f64 = rng.gen();
            let risk_pick = uniform_pick(&vocab.risk_rx, &mut rng).clone();
            let common_pick = uniform_pick(&vocab.common_rx, &mut rng).clone();
            if u_fill < rates.fill_rate {
                let fill_date = (date + Days::new(jitter)).min(anchor);
                let spec = if u_kind < risk_rx_rate {
                    &risk_pick
                } else {
                    &common_pick
                };
                prescriptions.push(fill_from(spec, fill_date));
            }
            let u_opioid: f64 = rng.gen();
            let opioid_pick = uniform_pick(&vocab.exposure_rx, &mut rng).clone();
            if u_opioid < opioid_rate {
                prescriptions.push(fill_from(&opioid_pick, date));
            }
        }
    }

    if exposed {
        // guaranteed exposure fills, dated at pre-anchor visits
        let n_fills = 1 + usize::from(rng.gen::<f64>() < rates.second_exposure_fill_rate);
        for k in 0..2 {
            let visit = rng.gen_range(0..dates.len() - 1);
            let spec = uniform_pick(&vocab.exposure_rx, &mut rng).clone();
            if k < n_fills {
                prescriptions.push(fill_from(&spec, dates[visit]));
            }
        }
    }

    let enrol_id = format!("{}{:05}", split.ordinal(), index + 1);
    PatientRecord::new(
        enrol_id,
        Demographics {
            age_years: age,
            sex,
        },
        encounters,
        prescriptions,
    )
}

/// Generate one split. Deterministic for a fixed `(config.seed, split)`;
/// patients are generated in parallel from independent streams.
pub fn generate_population(cfg: &GeneratorConfig, split: Split) -> Result<LabeledPopulation> {
    cfg.validate()?;
    let n_exposed = cfg.n_exposed();
    let total = cfg.n_case + cfg.n_control;

    let roles: Vec<CohortLabel> = (0..total)
        .map(|i| {
            if i < cfg.n_case {
                CohortLabel::Case
            } else if i < cfg.n_case + n_exposed {
                CohortLabel::ControlExposed
            } else {
                CohortLabel::ControlNonExposed
            }
        })
        .collect();

    let patients: Vec<PatientRecord> = roles
        .par_iter()
        .enumerate()
        .map(|(index, role)| generate_patient(cfg, split, index, *role))
        .collect();

    let labels = patients
        .iter()
        .zip(&roles)
        .map(|(p, role)| (p.enrol_id.clone(), *role))
        .collect();

    Ok(LabeledPopulation {
        split,
        patients,
        labels,
    })
}
