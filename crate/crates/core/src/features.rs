//! Frequency-thresholded count features for the tree baselines.
//!
//! The vocabulary keeps every feature item that appeared in at least
//! `min_support` distinct visits of the training instances (a visit
//! contributes at most once per key, however often the key repeats
//! inside it). Vectorization then counts raw occurrences of vocabulary
//! items over the last `max_visits` encounters and in-span fills.
//!
//! The same item extraction backs the summarized prompt formats, so
//! summarized counts and feature vectors agree by construction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::claims::{Encounter, Prescription};
use crate::cohort::PredictionInstance;
use crate::error::{Error, Result};
use crate::serialize::FieldMask;
use crate::synth::Split;

/// The five feature families: primary/secondary diagnosis codes,
/// procedure codes, drug names, and the class+strength+route composite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    #[serde(rename = "primary-dx")]
    PrimaryDx,
    #[serde(rename = "secondary-dx")]
    SecondaryDx,
    #[serde(rename = "procedure")]
    Procedure,
    #[serde(rename = "drug-name")]
    DrugName,
    #[serde(rename = "thera-class-strength-route")]
    TheraClassStrengthRoute,
}

impl FeatureKind {
    pub fn token(self) -> &'static str {
        match self {
            FeatureKind::PrimaryDx => "primary-dx",
            FeatureKind::SecondaryDx => "secondary-dx",
            FeatureKind::Procedure => "procedure",
            FeatureKind::DrugName => "drug-name",
            FeatureKind::TheraClassStrengthRoute => "thera-class-strength-route",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One vocabulary key. Ordering is lexicographic by
/// `(kind token, value)`, which fixes the persisted feature order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub kind: FeatureKind,
    pub value: String,
}

impl FeatureKey {
    pub fn new(kind: FeatureKind, value: impl Into<String>) -> Self {
        FeatureKey {
            kind,
            value: value.into(),
        }
    }
}

impl Ord for FeatureKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.kind.token(), &self.value).cmp(&(other.kind.token(), &other.value))
    }
}

impl PartialOrd for FeatureKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Feature items of one encounter, honoring the field mask. The first
/// diagnosis in the encounter's canonical order is the primary one.
pub fn encounter_items(enc: &Encounter, mask: &FieldMask) -> Vec<FeatureKey> {
    let mut items = Vec::new();
    if mask.diagnoses {
        for (i, d) in enc.diagnoses.iter().enumerate() {
            let kind = if i == 0 {
                FeatureKind::PrimaryDx
            } else {
                FeatureKind::SecondaryDx
            };
            items.push(FeatureKey::new(kind, d.code.clone()));
        }
    }
    if mask.procedures {
        for p in &enc.procedures {
            items.push(FeatureKey::new(FeatureKind::Procedure, p.code.clone()));
        }
    }
    items
}

/// Feature items of one prescription fill.
pub fn prescription_items(rx: &Prescription, mask: &FieldMask) -> Vec<FeatureKey> {
    if !mask.prescriptions {
        return Vec::new();
    }
    vec![
        FeatureKey::new(FeatureKind::DrugName, rx.drug_name.clone()),
        FeatureKey::new(
            FeatureKind::TheraClassStrengthRoute,
            format!("{}|{}|{}", rx.therapeutic_class, rx.strength, rx.route),
        ),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    pub min_support: u32,
    pub keys: Vec<FeatureKey>,
    #[serde(skip)]
    index: HashMap<FeatureKey, usize>,
}

impl Vocabulary {
    fn from_keys(keys: Vec<FeatureKey>, min_support: u32) -> Self {
        let index = keys
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, k)| (k, i))
            .collect();
        Vocabulary {
            min_support,
            keys,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn position(&self, key: &FeatureKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Digest of the ordered key list, embedded in model artifacts so a
    /// model is never applied to vectors from a different vocabulary.
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.min_support.to_le_bytes());
        for key in &self.keys {
            hasher.update(key.kind.token().as_bytes());
            hasher.update([0u8]);
            hasher.update(key.value.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vocabulary = serde_json::from_str(text)?;
        Ok(Vocabulary::from_keys(raw.keys, raw.min_support))
    }
}

/// Build the vocabulary from training instances only. `input_split` is
/// the caller's declaration of which split the instances came from;
/// anything but the training split is rejected.
pub fn build_vocabulary(
    instances: &[PredictionInstance],
    input_split: Split,
    min_support: u32,
) -> Result<Vocabulary> {
    if input_split != Split::Train {
        return Err(Error::Validation(format!(
            "vocabulary must be built from the train split, got {input_split}"
        )));
    }
    if instances.is_empty() {
        return Err(Error::Validation(
            "cannot build a vocabulary from zero instances".into(),
        ));
    }

    let mask = FieldMask::all();
    let mut support: BTreeMap<FeatureKey, u32> = BTreeMap::new();
    for instance in instances {
        for enc in &instance.history.encounters {
            let present: BTreeSet<FeatureKey> = encounter_items(enc, &mask).into_iter().collect();
            for key in present {
                *support.entry(key).or_insert(0) += 1;
            }
        }
        for rx in &instance.history.prescriptions {
            // one fill is one visit unit; its two keys are distinct
            for key in prescription_items(rx, &mask) {
                *support.entry(key).or_insert(0) += 1;
            }
        }
    }

    let keys: Vec<FeatureKey> = support
        .into_iter()
        .filter(|(_, n)| *n >= min_support)
        .map(|(k, _)| k)
        .collect();
    Ok(Vocabulary::from_keys(keys, min_support))
}

/// Sparse count vector over a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub dimension: usize,
    /// position -> count, counts always >= 1
    pub counts: BTreeMap<usize, u32>,
}

impl FeatureVector {
    pub fn total_count(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dimension];
        for (&pos, &count) in &self.counts {
            dense[pos] = f64::from(count);
        }
        dense
    }
}

/// Count vocabulary-item occurrences over the last `max_visits`
/// encounters and the prescriptions filled in that span.
pub fn vectorize(
    instance: &PredictionInstance,
    vocab: &Vocabulary,
    max_visits: usize,
    mask: &FieldMask,
) -> FeatureVector {
    let window = instance.included_window(max_visits);
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    let mut bump = |key: &FeatureKey| {
        if let Some(pos) = vocab.position(key) {
            *counts.entry(pos).or_insert(0) += 1;
        }
    };
    for enc in window.encounters {
        for key in encounter_items(enc, mask) {
            bump(&key);
        }
    }
    for rx in &window.prescriptions {
        for key in prescription_items(rx, mask) {
            bump(&key);
        }
    }
    FeatureVector {
        dimension: vocab.len(),
        counts,
    }
}
