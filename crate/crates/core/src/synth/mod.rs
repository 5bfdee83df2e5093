//! Deterministic synthetic claims populations with a planted overdose
//! signal.
//!
//! Every patient derives an independent RNG stream from
//! `(seed, split, patient index)`, so generation is reproducible
//! bit-for-bit and parallelizable. Case patients end with an overdose
//! encounter whose predecessor falls inside the configured window, so
//! the whole population survives cutoff alignment by construction.

mod generate;
pub mod vocab;
mod write;

pub use generate::generate_population;
pub use write::{read_labels, write_population_tables};

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::claims::PatientRecord;
use crate::cohort::CohortLabel;
use crate::error::{Error, Result};
use vocab::SynthVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    /// Numeric prefix for enrol ids, keeping ids unique across splits.
    pub(crate) fn ordinal(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Valid => 2,
            Split::Test => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

/// Visit-count distribution: `min + Geometric(geom_p)`, clamped to
/// `[min, max]`. Small `geom_p` produces the heavy-utilizer profile the
/// visit-limit sweep needs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VisitDistribution {
    pub min: u32,
    pub max: u32,
    pub geom_p: f64,
}

impl Default for VisitDistribution {
    fn default() -> Self {
        VisitDistribution {
            min: 5,
            max: 60,
            geom_p: 0.0035,
        }
    }
}

/// Per-event probabilities. Case patients add `signal_strength * *_lift`
/// on top of the shared base rates; at signal 0 the case and control
/// content distributions are identical.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalRates {
    /// Chance per risk slot (two per visit) of drawing a risk-marker diagnosis.
    pub risk_dx_base: f64,
    pub risk_dx_lift: f64,
    /// Chance per visit of a prescription fill.
    pub fill_rate: f64,
    /// Chance a fill comes from the risk pool rather than the common pool.
    pub risk_rx_base: f64,
    pub risk_rx_lift: f64,
    /// Extra case-only opioid fills, scaled by signal strength.
    pub opioid_lift: f64,
    /// Chance a control carries an adverse-effect/underdosing T-code.
    pub adverse_rate: f64,
    /// Chance an exposed patient carries a use-disorder diagnosis too.
    pub exposure_dx_rate: f64,
    /// Chance an exposed patient gets a second exposure fill.
    pub second_exposure_fill_rate: f64,
}

impl Default for SignalRates {
    fn default() -> Self {
        SignalRates {
            risk_dx_base: 0.06,
            risk_dx_lift: 0.5,
            fill_rate: 0.55,
            risk_rx_base: 0.18,
            risk_rx_lift: 0.45,
            opioid_lift: 0.15,
            adverse_rate: 0.15,
            exposure_dx_rate: 0.35,
            second_exposure_fill_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Case/control counts per split.
    pub n_case: usize,
    pub n_control: usize,
    /// Fraction of controls in the exposed cohort.
    pub exposed_fraction: f64,
    /// Strength of the planted case signal, in [0, 1].
    pub signal_strength: f64,
    /// Planted anchor gap bound: the final encounter gap is drawn from
    /// [1, window_days], guaranteeing alignment for windows this long or
    /// longer.
    pub window_days: u32,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
    pub visits: VisitDistribution,
    pub rates: SignalRates,
    pub vocab: SynthVocab,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 7,
            n_case: 300,
            n_control: 600,
            exposed_fraction: 0.5,
            signal_strength: 0.8,
            window_days: 7,
            date_start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            date_end: NaiveDate::from_ymd_opt(2022, 12, 31).unwrap(),
            visits: VisitDistribution::default(),
            rates: SignalRates::default(),
            vocab: SynthVocab::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_case == 0 || self.n_control == 0 {
            return Err(Error::Config(
                "n_case and n_control must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.exposed_fraction) {
            return Err(Error::Config("exposed_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(Error::Config("signal_strength must lie in [0, 1]".into()));
        }
        if self.window_days == 0 || self.window_days > 180 {
            return Err(Error::Config("window_days must lie in [1, 180]".into()));
        }
        let range_days = (self.date_end - self.date_start).num_days();
        // every patient needs >= 12 months of history plus the anchor gap
        if range_days < 365 + i64::from(self.window_days) + 2 {
            return Err(Error::Config(format!(
                "date range of {range_days} days is too short for a 12-month history \
                 plus a {}-day window",
                self.window_days
            )));
        }
        if self.visits.min < 5 || self.visits.max < self.visits.min {
            return Err(Error::Config(
                "visit distribution needs 5 <= min <= max".into(),
            ));
        }
        if !(self.visits.geom_p > 0.0 && self.visits.geom_p < 1.0) {
            return Err(Error::Config("visit geom_p must lie in (0, 1)".into()));
        }
        self.vocab.validate()
    }

    /// Exact number of exposed controls for this configuration.
    pub fn n_exposed(&self) -> usize {
        (self.n_control as f64 * self.exposed_fraction).round() as usize
    }
}

/// A generated split with its per-patient intended cohort labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPopulation {
    pub split: Split,
    pub patients: Vec<PatientRecord>,
    /// `(enrol_id, intended label)` aligned with `patients`.
    pub labels: Vec<(String, CohortLabel)>,
}

impl LabeledPopulation {
    pub fn intended_of(&self, enrol_id: &str) -> Option<CohortLabel> {
        self.labels
            .binary_search_by(|(id, _)| id.as_str().cmp(enrol_id))
            .ok()
            .map(|i| self.labels[i].1)
    }
}
