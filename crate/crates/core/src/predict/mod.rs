//! Predictors: the two tree-ensemble baselines with grid search, the
//! chat-completion LLM client (plus deterministic mocks), the response
//! parser, and the fine-tuning exporter.

mod export;
mod llm;
mod mock;
mod parse;
mod tree;

pub use export::export_finetune_dataset;
pub use llm::{
    llm_predict, llm_predict_batch, ChatCompletion, ChatMessage, ChatRequest, HttpChatClient,
    LlmConfig, TransportError,
};
pub use mock::MockChatClient;
pub use parse::parse_llm_response;
pub use tree::{Node, Tree};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::OutcomeLabel;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use tree::{grow_classification_tree, grow_regression_tree, GrowParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    RandomForest,
    GradientBoosted,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::RandomForest => "random-forest",
            ModelKind::GradientBoosted => "gradient-boosted",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grid-search candidate lists. `learning_rate` only applies to
/// boosting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub min_leaf: Vec<usize>,
}

impl HyperGrid {
    pub fn default_forest() -> Self {
        HyperGrid {
            n_trees: vec![100, 300],
            max_depth: vec![8, 16],
            learning_rate: vec![],
            min_leaf: vec![1, 5],
        }
    }

    pub fn default_boosted() -> Self {
        HyperGrid {
            n_trees: vec![100, 300],
            max_depth: vec![3, 6],
            learning_rate: vec![0.1, 0.3],
            min_leaf: vec![1],
        }
    }

    /// Expand into grid points in declared order (trees, depth, rate,
    /// leaf size).
    pub fn points(&self, kind: ModelKind) -> Result<Vec<GridPoint>> {
        if self.n_trees.is_empty() || self.max_depth.is_empty() || self.min_leaf.is_empty() {
            return Err(Error::Config(
                "hyperparameter grid has an empty candidate list".into(),
            ));
        }
        let rates: Vec<Option<f64>> = match kind {
            ModelKind::RandomForest => vec![None],
            ModelKind::GradientBoosted => {
                if self.learning_rate.is_empty() {
                    return Err(Error::Config("boosting grid needs learning rates".into()));
                }
                self.learning_rate.iter().map(|&r| Some(r)).collect()
            }
        };
        let mut points = Vec::new();
        for &n_trees in &self.n_trees {
            for &max_depth in &self.max_depth {
                for &learning_rate in &rates {
                    for &min_leaf in &self.min_leaf {
                        points.push(GridPoint {
                            n_trees,
                            max_depth,
                            min_leaf,
                            learning_rate,
                        });
                    }
                }
            }
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub learning_rate: Option<f64>,
}

/// A trained ensemble. For boosting, tree leaves are already scaled by
/// the learning rate and `base_score` carries the prior log-odds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub kind: ModelKind,
    pub n_features: usize,
    pub point: GridPoint,
    pub grid_index: usize,
    pub seed: u64,
    pub validation_f1: f64,
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

/// One prediction for one instance. `label` is always present; `score`
/// only for predictors that produce one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub label: OutcomeLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

struct Dataset {
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
    /// Balanced class weights: n / (2 * n_class).
    weights: Vec<f64>,
    n_features: usize,
}

fn build_dataset(vectors: &[FeatureVector], labels: &[OutcomeLabel]) -> Result<Dataset> {
    if vectors.is_empty() || vectors.len() != labels.len() {
        return Err(Error::Training(format!(
            "vector/label count mismatch: {} vs {}",
            vectors.len(),
            labels.len()
        )));
    }
    let n_features = vectors[0].dimension;
    if vectors.iter().any(|v| v.dimension != n_features) {
        return Err(Error::Training("inconsistent vector dimensions".into()));
    }
    let rows: Vec<Vec<f64>> = vectors.iter().map(FeatureVector::to_dense).collect();
    let y: Vec<u8> = labels
        .iter()
        .map(|&l| u8::from(l == OutcomeLabel::Overdose))
        .collect();
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Training("training labels are a single class".into()));
    }
    let n = y.len() as f64;
    let w_pos = n / (2.0 * n_pos as f64);
    let w_neg = n / (2.0 * n_neg as f64);
    let weights = y
        .iter()
        .map(|&l| if l == 1 { w_pos } else { w_neg })
        .collect();
    Ok(Dataset {
        rows,
        labels: y,
        weights,
        n_features,
    })
}

fn fit(kind: ModelKind, data: &Dataset, point: &GridPoint, seed: u64) -> TreeEnsembleModel {
    let indices: Vec<usize> = (0..data.rows.len()).collect();
    match kind {
        ModelKind::RandomForest => {
            let mtry = (data.n_features as f64).sqrt().ceil() as usize;
            let params = GrowParams {
                max_depth: point.max_depth,
                min_leaf: point.min_leaf,
                mtry: mtry.max(1),
            };
            let trees: Vec<Tree> = (0..point.n_trees)
                .into_par_iter()
                .map(|t| {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9));
                    let sample: Vec<usize> = (0..data.rows.len())
                        .map(|_| rand::Rng::gen_range(&mut rng, 0..data.rows.len()))
                        .collect();
                    grow_classification_tree(
                        &data.rows,
                        &data.labels,
                        &data.weights,
                        &sample,
                        &params,
                        &mut rng,
                    )
                })
                .collect();
            TreeEnsembleModel {
                kind,
                n_features: data.n_features,
                point: *point,
                grid_index: 0,
                seed,
                validation_f1: 0.0,
                base_score: 0.0,
                trees,
            }
        }
        ModelKind::GradientBoosted => {
            let rate = point.learning_rate.unwrap_or(0.1);
            let params = GrowParams {
                max_depth: point.max_depth,
                min_leaf: point.min_leaf,
                mtry: data.n_features,
            };
            let w_pos: f64 = data
                .labels
                .iter()
                .zip(&data.weights)
                .filter(|(&l, _)| l == 1)
                .map(|(_, &w)| w)
                .sum();
            let w_total: f64 = data.weights.iter().sum();
            let prior = (w_pos / (w_total - w_pos)).ln();

            let mut margins = vec![prior; data.rows.len()];
            let mut trees = Vec::with_capacity(point.n_trees);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..point.n_trees {
                let mut gradients = Vec::with_capacity(margins.len());
                let mut hessians = Vec::with_capacity(margins.len());
                for ((&margin, &weight), &label) in
                    margins.iter().zip(&data.weights).zip(&data.labels)
                {
                    let p = sigmoid(margin);
                    gradients.push(weight * (p - f64::from(label)));
                    hessians.push(weight * p * (1.0 - p));
                }
                let mut tree = grow_regression_tree(
                    &data.rows, &gradients, &hessians, &indices, &params, 1.0, &mut rng,
                );
                // bake the learning rate into the leaves
                for node in &mut tree.nodes {
                    if let Node::Leaf { value } = node {
                        *value *= rate;
                    }
                }
                for (margin, row) in margins.iter_mut().zip(&data.rows) {
                    *margin += tree.predict(row);
                }
                trees.push(tree);
            }
            TreeEnsembleModel {
                kind,
                n_features: data.n_features,
                point: *point,
                grid_index: 0,
                seed,
                validation_f1: 0.0,
                base_score: prior,
                trees,
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn score_row(model: &TreeEnsembleModel, row: &[f64]) -> f64 {
    match model.kind {
        ModelKind::RandomForest => {
            // majority vote: fraction of trees voting positive
            let votes = model.trees.iter().filter(|t| t.predict(row) >= 0.5).count();
            votes as f64 / model.trees.len() as f64
        }
        ModelKind::GradientBoosted => {
            let margin: f64 =
                model.base_score + model.trees.iter().map(|t| t.predict(row)).sum::<f64>();
            sigmoid(margin)
        }
    }
}

/// F1 with the convention that an undefined score counts as 0 during
/// grid selection.
fn selection_f1(predicted: &[bool], gold: &[bool]) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&p, &g) in predicted.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    if 2.0 * tp + fp + fn_ == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Grid-search training: fit one model per grid point, keep the argmax
/// of validation F1 (ties go to the earlier point in declared order).
pub fn train_ensemble(
    kind: ModelKind,
    train_vectors: &[FeatureVector],
    train_labels: &[OutcomeLabel],
    grid: &HyperGrid,
    valid_vectors: &[FeatureVector],
    valid_labels: &[OutcomeLabel],
    seed: u64,
) -> Result<TreeEnsembleModel> {
    let data = build_dataset(train_vectors, train_labels)?;
    if valid_vectors.len() != valid_labels.len() || valid_vectors.is_empty() {
        return Err(Error::Training(
            "validation vectors and labels must align".into(),
        ));
    }
    if valid_vectors.iter().any(|v| v.dimension != data.n_features) {
        return Err(Error::Training(
            "validation dimension differs from training".into(),
        ));
    }
    let valid_rows: Vec<Vec<f64>> = valid_vectors.iter().map(FeatureVector::to_dense).collect();
    let valid_gold: Vec<bool> = valid_labels
        .iter()
        .map(|&l| l == OutcomeLabel::Overdose)
        .collect();

    let points = grid.points(kind)?;
    let mut best: Option<(f64, usize, TreeEnsembleModel)> = None;
    for (index, point) in points.iter().enumerate() {
        let point_seed = seed ^ (index as u64).wrapping_mul(0x94D0_49BB);
        let mut model = fit(kind, &data, point, point_seed);
        let predicted: Vec<bool> = valid_rows
            .iter()
            .map(|row| score_row(&model, row) >= 0.5)
            .collect();
        let f1 = selection_f1(&predicted, &valid_gold);
        model.grid_index = index;
        model.validation_f1 = f1;
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, index, model));
        }
    }
    Ok(best.expect("grid validated non-empty").2)
}

/// Score one vector. Forest: positive-vote fraction; boosting: sigmoid
/// of the additive margin. Label threshold is 0.5.
pub fn predict_ensemble(
    model: &TreeEnsembleModel,
    instance_id: &str,
    vector: &FeatureVector,
) -> Result<Prediction> {
    if vector.dimension != model.n_features {
        return Err(Error::Validation(format!(
            "vector dimension {} does not match model dimension {}",
            vector.dimension, model.n_features
        )));
    }
    let row = vector.to_dense();
    let score = score_row(model, &row);
    let label = if score >= 0.5 {
        OutcomeLabel::Overdose
    } else {
        OutcomeLabel::NoOverdose
    };
    Ok(Prediction {
        instance_id: instance_id.to_string(),
        label,
        score: Some(score),
        raw_response: None,
    })
}

const ARTIFACT_VERSION: u32 = 1;

/// Versioned on-disk form of a trained model, carrying the vocabulary
/// digest it was trained against.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub vocab_sha256: String,
    pub model: TreeEnsembleModel,
}

pub fn save_model(
    path: &std::path::Path,
    model: &TreeEnsembleModel,
    vocab_sha256: &str,
) -> Result<()> {
    let artifact = ModelArtifact {
        version: ARTIFACT_VERSION,
        vocab_sha256: vocab_sha256.to_string(),
        model: model.clone(),
    };
    let json = serde_json::to_string(&artifact)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(
    path: &std::path::Path,
    expected_vocab_sha256: Option<&str>,
) -> Result<TreeEnsembleModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let artifact: ModelArtifact = serde_json::from_str(&text)?;
    if artifact.version != ARTIFACT_VERSION {
        return Err(Error::Validation(format!(
            "model artifact version {} (expected {ARTIFACT_VERSION})",
            artifact.version
        )));
    }
    if let Some(expected) = expected_vocab_sha256 {
        if artifact.vocab_sha256 != expected {
            return Err(Error::Validation(
                "model was trained against a different vocabulary".into(),
            ));
        }
    }
    Ok(artifact.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn vector(dim: usize, entries: &[(usize, u32)]) -> FeatureVector {
        FeatureVector {
            dimension: dim,
            counts: entries.iter().copied().collect::<BTreeMap<_, _>>(),
        }
    }

    /// Separable toy data: feature 0 high for positives.
    fn toy_data(n: usize) -> (Vec<FeatureVector>, Vec<OutcomeLabel>) {
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let positive = i % 3 == 0;
            let bump = (i % 5) as u32;
            if positive {
                vectors.push(vector(4, &[(0, 5 + bump), (1, 1)]));
                labels.push(OutcomeLabel::Overdose);
            } else {
                vectors.push(vector(4, &[(1, 2 + bump), (2, 1)]));
                labels.push(OutcomeLabel::NoOverdose);
            }
        }
        (vectors, labels)
    }

    #[test]
    fn single_grid_point_is_chosen() {
        let (x, y) = toy_data(60);
        let grid = HyperGrid {
            n_trees: vec![20],
            max_depth: vec![4],
            learning_rate: vec![0.2],
            min_leaf: vec![1],
        };
        for kind in [ModelKind::RandomForest, ModelKind::GradientBoosted] {
            let model = train_ensemble(kind, &x, &y, &grid, &x, &y, 3).unwrap();
            assert_eq!(model.grid_index, 0);
            assert_eq!(model.point.n_trees, 20);
            assert!(
                model.validation_f1 > 0.9,
                "{kind} f1 = {}",
                model.validation_f1
            );
        }
    }

    #[test]
    fn identical_grid_points_tie_break_to_the_first() {
        let (x, y) = toy_data(60);
        let grid = HyperGrid {
            n_trees: vec![20, 20],
            max_depth: vec![4],
            learning_rate: vec![0.2],
            min_leaf: vec![1],
        };
        let model = train_ensemble(ModelKind::GradientBoosted, &x, &y, &grid, &x, &y, 3).unwrap();
        assert_eq!(model.grid_index, 0);
    }

    #[test]
    fn degenerate_labels_error() {
        let (x, _) = toy_data(10);
        let y = vec![OutcomeLabel::NoOverdose; 10];
        let err = train_ensemble(
            ModelKind::RandomForest,
            &x,
            &y,
            &HyperGrid::default_forest(),
            &x,
            &y,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Training(_)));
    }

    #[test]
    fn forest_score_is_the_positive_vote_fraction() {
        let all_yes = Tree {
            nodes: vec![Node::Leaf { value: 1.0 }],
        };
        let model = TreeEnsembleModel {
            kind: ModelKind::RandomForest,
            n_features: 2,
            point: GridPoint {
                n_trees: 3,
                max_depth: 1,
                min_leaf: 1,
                learning_rate: None,
            },
            grid_index: 0,
            seed: 0,
            validation_f1: 0.0,
            base_score: 0.0,
            trees: vec![all_yes.clone(), all_yes.clone(), all_yes],
        };
        let p = predict_ensemble(&model, "i1", &vector(2, &[])).unwrap();
        assert_eq!(p.label, OutcomeLabel::Overdose);
        assert_eq!(p.score, Some(1.0));
    }

    #[test]
    fn empty_sparse_vector_is_still_scored() {
        let (x, y) = toy_data(30);
        let grid = HyperGrid {
            n_trees: vec![10],
            max_depth: vec![3],
            learning_rate: vec![0.2],
            min_leaf: vec![1],
        };
        let model = train_ensemble(ModelKind::RandomForest, &x, &y, &grid, &x, &y, 5).unwrap();
        let p = predict_ensemble(&model, "probe", &vector(4, &[])).unwrap();
        assert!(p.score.unwrap() >= 0.0 && p.score.unwrap() <= 1.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (x, y) = toy_data(30);
        let grid = HyperGrid {
            n_trees: vec![5],
            max_depth: vec![3],
            learning_rate: vec![0.1],
            min_leaf: vec![1],
        };
        let model = train_ensemble(ModelKind::RandomForest, &x, &y, &grid, &x, &y, 5).unwrap();
        assert!(predict_ensemble(&model, "probe", &vector(9, &[])).is_err());
    }

    #[test]
    fn two_tree_fixture_scores_match_a_hand_trace() {
        let tree_a = Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    threshold: 1.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: 0.25 },
                Node::Leaf { value: 0.75 },
            ],
        };
        let tree_b = Tree {
            nodes: vec![
                Node::Split {
                    feature: 1,
                    threshold: 4.0,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: 1.0 },
                Node::Leaf { value: 0.0 },
            ],
        };
        let model = TreeEnsembleModel {
            kind: ModelKind::RandomForest,
            n_features: 2,
            point: GridPoint {
                n_trees: 2,
                max_depth: 2,
                min_leaf: 1,
                learning_rate: None,
            },
            grid_index: 0,
            seed: 0,
            validation_f1: 0.0,
            base_score: 0.0,
            trees: vec![tree_a, tree_b],
        };
        // row [1, 3]: A -> 0.25 (no vote), B -> 1.0 (vote): fraction 0.5
        let p = predict_ensemble(&model, "i", &vector(2, &[(0, 1), (1, 3)])).unwrap();
        assert_eq!(p.score, Some(0.5));
        assert_eq!(p.label, OutcomeLabel::Overdose); // threshold inclusive
                                                     // row [2, 9]: A -> 0.75 (vote), B -> 0.0 (no vote): fraction 0.5
        let p = predict_ensemble(&model, "i", &vector(2, &[(0, 2), (1, 9)])).unwrap();
        assert_eq!(p.score, Some(0.5));
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let (x, y) = toy_data(45);
        let grid = HyperGrid {
            n_trees: vec![15],
            max_depth: vec![4],
            learning_rate: vec![0.2],
            min_leaf: vec![1],
        };
        for kind in [ModelKind::RandomForest, ModelKind::GradientBoosted] {
            let a = train_ensemble(kind, &x, &y, &grid, &x, &y, 11).unwrap();
            let b = train_ensemble(kind, &x, &y, &grid, &x, &y, 11).unwrap();
            let probe = vector(4, &[(0, 3), (1, 1)]);
            assert_eq!(
                predict_ensemble(&a, "p", &probe).unwrap(),
                predict_ensemble(&b, "p", &probe).unwrap()
            );
        }
    }

    #[test]
    fn grid_selection_is_scale_invariant() {
        // replicating the validation set must not change the argmax
        let (x, y) = toy_data(45);
        let grid = HyperGrid {
            n_trees: vec![10, 30],
            max_depth: vec![2, 4],
            learning_rate: vec![0.1],
            min_leaf: vec![1],
        };
        let (vx, vy) = toy_data(30);
        let mut vx3 = vx.clone();
        let mut vy3 = vy.clone();
        for _ in 0..2 {
            vx3.extend(vx.clone());
            vy3.extend(vy.clone());
        }
        let a = train_ensemble(ModelKind::GradientBoosted, &x, &y, &grid, &vx, &vy, 2).unwrap();
        let b = train_ensemble(ModelKind::GradientBoosted, &x, &y, &grid, &vx3, &vy3, 2).unwrap();
        assert_eq!(a.grid_index, b.grid_index);
    }

    #[test]
    fn artifacts_round_trip_and_check_the_vocab_digest() {
        let (x, y) = toy_data(30);
        let grid = HyperGrid {
            n_trees: vec![5],
            max_depth: vec![3],
            learning_rate: vec![0.1],
            min_leaf: vec![1],
        };
        let model = train_ensemble(ModelKind::GradientBoosted, &x, &y, &grid, &x, &y, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &model, "abc123").unwrap();
        let back = load_model(&path, Some("abc123")).unwrap();
        assert_eq!(back.trees.len(), model.trees.len());
        assert!(load_model(&path, Some("other")).is_err());
    }
}
