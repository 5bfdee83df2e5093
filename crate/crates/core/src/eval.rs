//! Evaluation harness: confusion-matrix metrics, exposed-subgroup
//! accuracy, the visit-limit sweep, the field-combination ablation, and
//! per-instance cost estimation.
//!
//! Positive class is overdose throughout. Undefined ratios (zero
//! denominator) are reported as null, never coerced to 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortLabel, OutcomeLabel, PredictionInstance};
use crate::error::{Error, Result};
use crate::predict::Prediction;
use crate::serialize::{
    render_prompt, CodeDictionary, FieldMask, PromptDocument, PromptFormat, Templates,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubgroupAccuracy {
    pub exposed: Option<f64>,
    pub non_exposed: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub subgroup_accuracy: SubgroupAccuracy,
    /// Parse/transport failures scored or excluded by the failure policy.
    pub n_errors: u64,
}

fn ratio(numerator: u64, denominator: u64) -> Option<f64> {
    if denominator == 0 {
        None
    } else {
        Some(numerator as f64 / denominator as f64)
    }
}

/// Exact confusion-matrix metrics over predictions aligned to gold
/// labels by instance id. The two id sets must match exactly.
pub fn compute_metrics(
    predictions: &[Prediction],
    gold: &[(String, OutcomeLabel)],
) -> Result<EvalReport> {
    if predictions.len() != gold.len() {
        return Err(Error::Eval(format!(
            "{} predictions vs {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    let gold_map: BTreeMap<&str, OutcomeLabel> = gold
        .iter()
        .map(|(id, label)| (id.as_str(), *label))
        .collect();
    if gold_map.len() != gold.len() {
        return Err(Error::Eval("duplicate instance id in gold labels".into()));
    }

    let mut confusion = ConfusionMatrix::default();
    let mut seen = std::collections::BTreeSet::new();
    for prediction in predictions {
        let Some(&truth) = gold_map.get(prediction.instance_id.as_str()) else {
            return Err(Error::Eval(format!(
                "prediction for unknown instance {}",
                prediction.instance_id
            )));
        };
        if !seen.insert(prediction.instance_id.as_str()) {
            return Err(Error::Eval(format!(
                "duplicate prediction for instance {}",
                prediction.instance_id
            )));
        }
        match (prediction.label, truth) {
            (OutcomeLabel::Overdose, OutcomeLabel::Overdose) => confusion.tp += 1,
            (OutcomeLabel::Overdose, OutcomeLabel::NoOverdose) => confusion.fp += 1,
            (OutcomeLabel::NoOverdose, OutcomeLabel::NoOverdose) => confusion.tn += 1,
            (OutcomeLabel::NoOverdose, OutcomeLabel::Overdose) => confusion.fn_ += 1,
        }
    }

    let precision = ratio(confusion.tp, confusion.tp + confusion.fp);
    let recall = ratio(confusion.tp, confusion.tp + confusion.fn_);
    let specificity = ratio(confusion.tn, confusion.tn + confusion.fp);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };

    Ok(EvalReport {
        precision,
        recall,
        specificity,
        f1,
        confusion,
        subgroup_accuracy: SubgroupAccuracy::default(),
        n_errors: 0,
    })
}

/// Accuracy of predicting no-overdose, split over the exposed and
/// non-exposed control subgroups. Case instances are ignored. An empty
/// subgroup reports null.
pub fn subgroup_accuracy(
    predictions: &[Prediction],
    cohorts: &BTreeMap<String, CohortLabel>,
) -> Result<SubgroupAccuracy> {
    let mut exposed = (0u64, 0u64); // (correct, total)
    let mut non_exposed = (0u64, 0u64);
    for prediction in predictions {
        let Some(cohort) = cohorts.get(&prediction.instance_id) else {
            return Err(Error::Eval(format!(
                "missing cohort tag for instance {}",
                prediction.instance_id
            )));
        };
        let bucket = match cohort {
            CohortLabel::ControlExposed => &mut exposed,
            CohortLabel::ControlNonExposed => &mut non_exposed,
            CohortLabel::Case => continue,
        };
        bucket.1 += 1;
        if prediction.label == OutcomeLabel::NoOverdose {
            bucket.0 += 1;
        }
    }
    Ok(SubgroupAccuracy {
        exposed: ratio(exposed.0, exposed.1),
        non_exposed: ratio(non_exposed.0, non_exposed.1),
    })
}

/// What to do with per-instance prediction failures when scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Score failures as no-overdose (conservative default).
    #[default]
    ScoreAsNegative,
    /// Drop failed instances from scoring.
    Exclude,
}

/// Apply the failure policy to per-instance outcomes, yielding scoreable
/// predictions plus the failure count.
pub fn apply_failure_policy(
    outcomes: Vec<(String, Result<Prediction>)>,
    policy: FailurePolicy,
) -> (Vec<Prediction>, u64) {
    let mut predictions = Vec::with_capacity(outcomes.len());
    let mut n_errors = 0;
    for (instance_id, outcome) in outcomes {
        match outcome {
            Ok(prediction) => predictions.push(prediction),
            Err(_) => {
                n_errors += 1;
                if policy == FailurePolicy::ScoreAsNegative {
                    predictions.push(Prediction {
                        instance_id,
                        label: OutcomeLabel::NoOverdose,
                        score: None,
                        raw_response: None,
                    });
                }
            }
        }
    }
    (predictions, n_errors)
}

/// A predictor over rendered prompts; the evaluation drivers are
/// agnostic to what sits behind it.
pub trait InstancePredictor: Sync {
    fn predict(&self, document: &PromptDocument) -> Result<Prediction>;
}

impl<F> InstancePredictor for F
where
    F: Fn(&PromptDocument) -> Result<Prediction> + Sync,
{
    fn predict(&self, document: &PromptDocument) -> Result<Prediction> {
        self(document)
    }
}

/// Prompt-driven LLM predictor (real or mock client).
pub struct LlmPredictor<'a> {
    pub config: &'a crate::predict::LlmConfig,
    pub client: &'a dyn crate::predict::ChatCompletion,
}

impl InstancePredictor for LlmPredictor<'_> {
    fn predict(&self, document: &PromptDocument) -> Result<Prediction> {
        crate::predict::llm_predict(self.config, self.client, document)
    }
}

fn gold_of(instances: &[PredictionInstance]) -> Vec<(String, OutcomeLabel)> {
    instances
        .iter()
        .map(|i| (i.enrol_id.clone(), i.label))
        .collect()
}

fn cohorts_of(instances: &[PredictionInstance]) -> BTreeMap<String, CohortLabel> {
    instances
        .iter()
        .map(|i| (i.enrol_id.clone(), i.cohort))
        .collect()
}

/// Render, predict, and score one configuration of the corpus.
#[allow(clippy::too_many_arguments)]
fn evaluate_rendered(
    predictor: &dyn InstancePredictor,
    instances: &[PredictionInstance],
    format: PromptFormat,
    max_visits: usize,
    mask: &FieldMask,
    dict: &CodeDictionary,
    templates: &Templates,
    policy: FailurePolicy,
) -> Result<(EvalReport, f64)> {
    let mut outcomes = Vec::with_capacity(instances.len());
    let mut token_total = 0usize;
    for instance in instances {
        let document = render_prompt(instance, format, max_visits, mask, dict, templates)?;
        token_total += document.token_estimate;
        outcomes.push((instance.enrol_id.clone(), predictor.predict(&document)));
    }
    let mean_tokens = token_total as f64 / instances.len().max(1) as f64;

    let (predictions, n_errors) = apply_failure_policy(outcomes, policy);
    let gold: Vec<(String, OutcomeLabel)> = match policy {
        FailurePolicy::ScoreAsNegative => gold_of(instances),
        FailurePolicy::Exclude => {
            let kept: std::collections::BTreeSet<&str> =
                predictions.iter().map(|p| p.instance_id.as_str()).collect();
            gold_of(instances)
                .into_iter()
                .filter(|(id, _)| kept.contains(id.as_str()))
                .collect()
        }
    };
    let mut report = compute_metrics(&predictions, &gold)?;
    report.subgroup_accuracy = subgroup_accuracy(&predictions, &cohorts_of(instances))?;
    report.n_errors = n_errors;
    Ok((report, mean_tokens))
}

pub const DEFAULT_VISIT_LIMITS: [usize; 5] = [5, 10, 20, 30, 40];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub max_visits: usize,
    pub mean_tokens: f64,
    pub report: EvalReport,
}

/// Re-render and score the corpus at each visit limit.
#[allow(clippy::too_many_arguments)]
pub fn run_visits_sweep(
    predictor: &dyn InstancePredictor,
    instances: &[PredictionInstance],
    visit_limits: &[usize],
    format: PromptFormat,
    mask: &FieldMask,
    dict: &CodeDictionary,
    templates: &Templates,
    policy: FailurePolicy,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(visit_limits.len());
    for &max_visits in visit_limits {
        let (report, mean_tokens) = evaluate_rendered(
            predictor, instances, format, max_visits, mask, dict, templates, policy,
        )
        .map_err(|e| Error::Eval(format!("sweep cell at limit {max_visits}: {e}")))?;
        rows.push(SweepRow {
            max_visits,
            mean_tokens,
            report,
        });
    }
    Ok(rows)
}

/// The seven non-empty field combinations, in table order.
pub fn ablation_masks() -> Vec<(String, FieldMask)> {
    let mk = |dx, proc_, rx| FieldMask {
        diagnoses: dx,
        procedures: proc_,
        prescriptions: rx,
    };
    vec![
        ("dx".to_string(), mk(true, false, false)),
        ("proc".to_string(), mk(false, true, false)),
        ("rx".to_string(), mk(false, false, true)),
        ("dx+proc".to_string(), mk(true, true, false)),
        ("dx+rx".to_string(), mk(true, false, true)),
        ("proc+rx".to_string(), mk(false, true, true)),
        ("dx+proc+rx".to_string(), mk(true, true, true)),
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub mask: String,
    pub mean_tokens: f64,
    pub report: EvalReport,
}

/// Score every non-empty field combination at a fixed visit limit.
pub fn run_field_ablation(
    predictor: &dyn InstancePredictor,
    instances: &[PredictionInstance],
    format: PromptFormat,
    max_visits: usize,
    dict: &CodeDictionary,
    templates: &Templates,
    policy: FailurePolicy,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, mask) in ablation_masks() {
        let (report, mean_tokens) = evaluate_rendered(
            predictor, instances, format, max_visits, &mask, dict, templates, policy,
        )
        .map_err(|e| Error::Eval(format!("ablation row {name}: {e}")))?;
        rows.push(AblationRow {
            mask: name,
            mean_tokens,
            report,
        });
    }
    Ok(rows)
}

/// Per-instance API pricing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub input_price_per_1k_tokens: f64,
    pub output_price_per_1k_tokens: f64,
    pub assumed_output_tokens: u32,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            input_price_per_1k_tokens: 0.0025,
            output_price_per_1k_tokens: 0.01,
            assumed_output_tokens: 5,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if self.input_price_per_1k_tokens < 0.0 || self.output_price_per_1k_tokens < 0.0 {
            return Err(Error::Config("token prices must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mean USD per instance over the rendered prompts.
pub fn estimate_cost(documents: &[PromptDocument], cost: &CostModel) -> f64 {
    if documents.is_empty() {
        return 0.0;
    }
    let per_instance: f64 = documents
        .iter()
        .map(|doc| {
            doc.token_estimate as f64 / 1000.0 * cost.input_price_per_1k_tokens
                + f64::from(cost.assumed_output_tokens) / 1000.0 * cost.output_price_per_1k_tokens
        })
        .sum();
    per_instance / documents.len() as f64
}

fn pct(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "null".to_string(),
    }
}

/// Plain-text metrics table: Precision, Recall, Specificity, F1-score.
pub fn render_metrics_table(rows: &[(String, &EvalReport)]) -> String {
    let mut out = String::new();
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
    out.push_str(&format!(
        "{:<label_width$}  {:>9}  {:>7}  {:>11}  {:>8}\n",
        "", "Precision", "Recall", "Specificity", "F1-score"
    ));
    for (label, report) in rows {
        out.push_str(&format!(
            "{:<label_width$}  {:>9}  {:>7}  {:>11}  {:>8}\n",
            label,
            pct(report.precision),
            pct(report.recall),
            pct(report.specificity),
            pct(report.f1)
        ));
    }
    out
}
