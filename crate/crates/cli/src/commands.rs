//! One function per subcommand, plus the JSONL plumbing they share.
//! Every command reads its declared inputs, writes its declared outputs
//! under the out directory, and prints a one-line summary. Data
//! artifacts are byte-deterministic; wall-clock time goes only to the
//! run manifest.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use odx_core::claims::{parse_claims_tables, read_tables};
use odx_core::cohort::{build_task_set, OutcomeLabel, PredictionInstance, PredictionWindow};
use odx_core::error::{Error, Result};
use odx_core::eval::{
    apply_failure_policy, compute_metrics, estimate_cost, render_metrics_table, run_field_ablation,
    run_visits_sweep, subgroup_accuracy, EvalReport, FailurePolicy, LlmPredictor,
    DEFAULT_VISIT_LIMITS,
};
use odx_core::features::{build_vocabulary, vectorize, FeatureVector, Vocabulary};
use odx_core::predict::{
    export_finetune_dataset, llm_predict_batch, load_model, predict_ensemble, save_model,
    train_ensemble, ChatCompletion, HttpChatClient, MockChatClient, ModelKind, Prediction,
};
use odx_core::serialize::{render_prompt, PromptRecord};
use odx_core::synth::{generate_population, write_population_tables, Split};

use crate::config::PipelineConfig;

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn split_dir(base: &Path, split: Split) -> PathBuf {
    base.join(split.as_str())
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<usize> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut count = 0;
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        count += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(count)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut items = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        items.push(item);
    }
    Ok(items)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn instances_path(config: &PipelineConfig, split: Split) -> PathBuf {
    split_dir(&config.paths.out_dir, split).join("instances.jsonl")
}

fn read_instances(config: &PipelineConfig, split: Split) -> Result<Vec<PredictionInstance>> {
    let path = instances_path(config, split);
    if !path.exists() {
        return Err(Error::Validation(format!(
            "{} not found; run `odx cohort --split {split}` first",
            path.display()
        )));
    }
    read_jsonl(&path)
}

fn vocabulary_path(config: &PipelineConfig) -> PathBuf {
    config.paths.out_dir.join("vocabulary.json")
}

fn read_vocabulary(config: &PipelineConfig) -> Result<Vocabulary> {
    let path = vocabulary_path(config);
    if !path.exists() {
        return Err(Error::Validation(format!(
            "{} not found; run `odx featurize` first",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Vocabulary::from_json(&text)
}

fn model_path(config: &PipelineConfig, kind: ModelKind) -> PathBuf {
    config
        .paths
        .out_dir
        .join(format!("model_{}.json", short_kind(kind)))
}

fn short_kind(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::RandomForest => "forest",
        ModelKind::GradientBoosted => "boost",
    }
}

/// Build the chat client named by the endpoint: `mock:<behavior>` for
/// the in-process mocks, anything else as a live HTTP endpoint.
pub fn make_chat_client(config: &PipelineConfig) -> Result<Box<dyn ChatCompletion>> {
    let endpoint = config.llm.endpoint.as_str();
    if let Some(behavior) = endpoint.strip_prefix("mock:") {
        let client = match behavior {
            "always-no" => MockChatClient::always(OutcomeLabel::NoOverdose),
            "always-yes" => MockChatClient::always(OutcomeLabel::Overdose),
            "risk-keyed" => MockChatClient::risk_keyed(),
            "risk-dx-keyed" => MockChatClient::risk_dx_keyed(),
            "exposure-biased" => MockChatClient::exposure_biased(),
            other => {
                return Err(Error::Config(format!(
                    "unknown mock behavior {other:?} (expected always-no, always-yes, \
                     risk-keyed, risk-dx-keyed, exposure-biased)"
                )))
            }
        };
        Ok(Box::new(client))
    } else {
        Ok(Box::new(HttpChatClient::new(&config.llm)?))
    }
}

/// Wall-clock bookkeeping lives here and only here.
pub fn append_run_manifest(config: &PipelineConfig, command: &str) -> Result<()> {
    ensure_dir(&config.paths.out_dir)?;
    let path = config.paths.out_dir.join("run_manifest.jsonl");
    let unix_secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let line = serde_json::to_string(&serde_json::json!({
        "command": command,
        "seed": config.seed,
        "unix_time": unix_secs,
    }))?;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(file, "{line}").map_err(|e| Error::io(&path, e))
}

pub fn cmd_synth(config: &PipelineConfig) -> Result<()> {
    let mut counts = Vec::new();
    for split in Split::ALL {
        let population = generate_population(&config.generator, split)?;
        let dir = split_dir(&config.paths.data_dir, split);
        write_population_tables(&population, &dir)?;
        counts.push(format!("{split}={}", population.patients.len()));
    }
    println!(
        "synth: wrote {} under {} (seed {})",
        counts.join(" "),
        config.paths.data_dir.display(),
        config.seed
    );
    Ok(())
}

fn checked_data_dir(config: &PipelineConfig, split: Split) -> Result<PathBuf> {
    let dir = split_dir(&config.paths.data_dir, split);
    if !dir.join("encounter.csv").exists() {
        return Err(Error::Validation(format!(
            "{} has no claims tables; run `odx synth` or point data_dir at an extract",
            dir.display()
        )));
    }
    Ok(dir)
}

pub fn cmd_ingest(config: &PipelineConfig, split: Split) -> Result<()> {
    let tables = read_tables(&checked_data_dir(config, split)?)?;
    let (patients, report) = parse_claims_tables(&tables);
    let dir = split_dir(&config.paths.out_dir, split);
    ensure_dir(&dir)?;
    write_jsonl(&dir.join("patients.jsonl"), &patients)?;
    write_json(&dir.join("ingest_report.json"), &report)?;
    println!(
        "ingest {split}: {} patients, {} encounters, {} fills, {} rejected rows",
        report.patients,
        report.accepted_encounters,
        report.accepted_prescriptions,
        report.rejections.len()
    );
    Ok(())
}

pub fn cmd_cohort(config: &PipelineConfig, split: Split) -> Result<()> {
    let tables = read_tables(&checked_data_dir(config, split)?)?;
    let (patients, _) = parse_claims_tables(&tables);
    let window = PredictionWindow::new(config.window_days)?;
    let (instances, summary) = build_task_set(&patients, window);
    let dir = split_dir(&config.paths.out_dir, split);
    ensure_dir(&dir)?;
    write_jsonl(&dir.join("instances.jsonl"), &instances)?;
    write_json(&dir.join("cohort_summary.json"), &summary)?;
    println!(
        "cohort {split}: {} instances ({} case / {} control: {} exposed + {} non-exposed), {} dropped, window {}d",
        summary.instances,
        summary.cases,
        summary.controls_exposed + summary.controls_non_exposed,
        summary.controls_exposed,
        summary.controls_non_exposed,
        summary.dropped.len(),
        config.window_days
    );
    Ok(())
}

pub fn cmd_render(config: &PipelineConfig, split: Split) -> Result<()> {
    let instances = read_instances(config, split)?;
    let mask = config.field_mask()?;
    let dict = config.dictionary()?;
    let templates = config.templates()?;
    let mut records = Vec::with_capacity(instances.len());
    let mut token_total = 0usize;
    for instance in &instances {
        let doc = render_prompt(
            instance,
            config.format,
            config.max_visits,
            &mask,
            &dict,
            &templates,
        )?;
        token_total += doc.token_estimate;
        records.push(PromptRecord::from(&doc));
    }
    let dir = split_dir(&config.paths.out_dir, split);
    ensure_dir(&dir)?;
    let count = write_jsonl(&dir.join("prompts.jsonl"), &records)?;
    println!(
        "render {split}: {count} prompts ({}, max {} visits, mask {}), mean {:.1} tokens",
        config.format,
        config.max_visits,
        mask,
        token_total as f64 / count.max(1) as f64
    );
    Ok(())
}

pub fn cmd_featurize(config: &PipelineConfig) -> Result<()> {
    let train = read_instances(config, Split::Train)?;
    let vocab = build_vocabulary(&train, Split::Train, config.min_support)?;
    ensure_dir(&config.paths.out_dir)?;
    std::fs::write(vocabulary_path(config), vocab.to_json()?)
        .map_err(|e| Error::io(vocabulary_path(config), e))?;

    let mask = config.field_mask()?;
    let mut vectorized = Vec::new();
    for split in Split::ALL {
        if !instances_path(config, split).exists() {
            continue;
        }
        let instances = read_instances(config, split)?;
        let dir = split_dir(&config.paths.out_dir, split);
        let path = dir.join("vectors.tsv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for instance in &instances {
            let vector = vectorize(instance, &vocab, config.max_visits, &mask);
            let cells: Vec<String> = vector
                .counts
                .iter()
                .map(|(pos, count)| format!("{pos}:{count}"))
                .collect();
            writeln!(out, "{}\t{}", instance.enrol_id, cells.join(" "))
                .map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        vectorized.push(format!("{split}={}", instances.len()));
    }
    println!(
        "featurize: vocabulary of {} keys (min support {}), vectors {}",
        vocab.len(),
        config.min_support,
        vectorized.join(" ")
    );
    Ok(())
}

fn vectorize_split(
    config: &PipelineConfig,
    vocab: &Vocabulary,
    split: Split,
) -> Result<(
    Vec<PredictionInstance>,
    Vec<FeatureVector>,
    Vec<OutcomeLabel>,
)> {
    let instances = read_instances(config, split)?;
    let mask = config.field_mask()?;
    let vectors = instances
        .iter()
        .map(|i| vectorize(i, vocab, config.max_visits, &mask))
        .collect();
    let labels = instances.iter().map(|i| i.label).collect();
    Ok((instances, vectors, labels))
}

pub fn cmd_train(config: &PipelineConfig, which: &str) -> Result<()> {
    let kinds: Vec<ModelKind> = match which {
        "forest" => vec![ModelKind::RandomForest],
        "boost" => vec![ModelKind::GradientBoosted],
        "both" => vec![ModelKind::RandomForest, ModelKind::GradientBoosted],
        other => {
            return Err(Error::Validation(format!(
                "unknown model {other:?} (expected forest, boost, both)"
            )))
        }
    };
    let vocab = read_vocabulary(config)?;
    let (_, train_x, train_y) = vectorize_split(config, &vocab, Split::Train)?;
    let (_, valid_x, valid_y) = vectorize_split(config, &vocab, Split::Valid)?;

    for kind in kinds {
        let grid = match kind {
            ModelKind::RandomForest => &config.forest_grid,
            ModelKind::GradientBoosted => &config.boost_grid,
        };
        let model = train_ensemble(
            kind,
            &train_x,
            &train_y,
            grid,
            &valid_x,
            &valid_y,
            config.seed,
        )?;
        let path = model_path(config, kind);
        save_model(&path, &model, &vocab.sha256())?;
        println!(
            "train {kind}: grid point #{} (trees {}, depth {}, min leaf {}{}) valid F1 {:.4} -> {}",
            model.grid_index,
            model.point.n_trees,
            model.point.max_depth,
            model.point.min_leaf,
            model
                .point
                .learning_rate
                .map(|r| format!(", rate {r}"))
                .unwrap_or_default(),
            model.validation_f1,
            path.display()
        );
    }
    Ok(())
}

/// Wire record for predictions: a successful prediction or a recorded
/// failure, one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutcomeRecord {
    Ok(Prediction),
    Failed { instance_id: String, error: String },
}

fn predictions_path(config: &PipelineConfig, split: Split, predictor: &str) -> PathBuf {
    split_dir(&config.paths.out_dir, split).join(format!("predictions_{predictor}.jsonl"))
}

pub fn cmd_predict(config: &PipelineConfig, predictor: &str, split: Split) -> Result<()> {
    let instances = read_instances(config, split)?;
    let records: Vec<OutcomeRecord> = match predictor {
        "forest" | "boost" => {
            let kind = if predictor == "forest" {
                ModelKind::RandomForest
            } else {
                ModelKind::GradientBoosted
            };
            let vocab = read_vocabulary(config)?;
            let model = load_model(&model_path(config, kind), Some(&vocab.sha256()))?;
            let mask = config.field_mask()?;
            instances
                .iter()
                .map(|instance| {
                    let vector = vectorize(instance, &vocab, config.max_visits, &mask);
                    predict_ensemble(&model, &instance.enrol_id, &vector).map(OutcomeRecord::Ok)
                })
                .collect::<Result<Vec<_>>>()?
        }
        "llm" => {
            let mask = config.field_mask()?;
            let dict = config.dictionary()?;
            let templates = config.templates()?;
            let docs = instances
                .iter()
                .map(|i| {
                    render_prompt(
                        i,
                        config.format,
                        config.max_visits,
                        &mask,
                        &dict,
                        &templates,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let client = make_chat_client(config)?;
            llm_predict_batch(&config.llm, client.as_ref(), &docs)
                .into_iter()
                .zip(&docs)
                .map(|(result, doc)| match result {
                    Ok(prediction) => OutcomeRecord::Ok(prediction),
                    Err(error) => OutcomeRecord::Failed {
                        instance_id: doc.instance_id.clone(),
                        error: error.to_string(),
                    },
                })
                .collect()
        }
        other => {
            return Err(Error::Validation(format!(
                "unknown predictor {other:?} (expected forest, boost, llm)"
            )))
        }
    };

    let failures = records
        .iter()
        .filter(|r| matches!(r, OutcomeRecord::Failed { .. }))
        .count();
    let path = predictions_path(config, split, predictor);
    ensure_dir(path.parent().expect("split dir"))?;
    let count = write_jsonl(&path, &records)?;
    println!(
        "predict {predictor} {split}: {count} instances, {failures} failures -> {}",
        path.display()
    );
    Ok(())
}

pub fn cmd_evaluate(
    config: &PipelineConfig,
    split: Split,
    predictor: &str,
    predictions_file: Option<&Path>,
) -> Result<()> {
    let instances = read_instances(config, split)?;
    let path = match predictions_file {
        Some(path) => path.to_path_buf(),
        None => predictions_path(config, split, predictor),
    };
    if !path.exists() {
        return Err(Error::Validation(format!(
            "{} not found; run `odx predict --predictor {predictor} --split {split}` first",
            path.display()
        )));
    }
    let records: Vec<OutcomeRecord> = read_jsonl(&path)?;
    let outcomes: Vec<(String, Result<Prediction>)> = records
        .into_iter()
        .map(|record| match record {
            OutcomeRecord::Ok(p) => (p.instance_id.clone(), Ok(p)),
            OutcomeRecord::Failed { instance_id, error } => {
                (instance_id.clone(), Err(Error::Eval(error)))
            }
        })
        .collect();
    let (predictions, n_errors) = apply_failure_policy(outcomes, config.failure_policy);

    let gold: Vec<(String, OutcomeLabel)> = match config.failure_policy {
        FailurePolicy::ScoreAsNegative => instances
            .iter()
            .map(|i| (i.enrol_id.clone(), i.label))
            .collect(),
        FailurePolicy::Exclude => {
            let kept: std::collections::BTreeSet<&str> =
                predictions.iter().map(|p| p.instance_id.as_str()).collect();
            instances
                .iter()
                .filter(|i| kept.contains(i.enrol_id.as_str()))
                .map(|i| (i.enrol_id.clone(), i.label))
                .collect()
        }
    };
    let cohorts: BTreeMap<String, odx_core::cohort::CohortLabel> = instances
        .iter()
        .map(|i| (i.enrol_id.clone(), i.cohort))
        .collect();

    let mut report: EvalReport = compute_metrics(&predictions, &gold)?;
    report.subgroup_accuracy = subgroup_accuracy(&predictions, &cohorts)?;
    report.n_errors = n_errors;

    let out = split_dir(&config.paths.out_dir, split).join(format!("report_{predictor}.json"));
    write_json(&out, &report)?;
    print!(
        "{}",
        render_metrics_table(&[(predictor.to_string(), &report)])
    );
    println!(
        "evaluate {predictor} {split}: {} scored, {} errors ({}), subgroup no-overdose accuracy exposed {} / non-exposed {} -> {}",
        report.confusion.total(),
        n_errors,
        match config.failure_policy {
            FailurePolicy::ScoreAsNegative => "scored as negative",
            FailurePolicy::Exclude => "excluded",
        },
        fmt_pct(report.subgroup_accuracy.exposed),
        fmt_pct(report.subgroup_accuracy.non_exposed),
        out.display()
    );
    Ok(())
}

fn fmt_pct(value: Option<f64>) -> String {
    value
        .map(|v| format!("{:.2}", v * 100.0))
        .unwrap_or_else(|| "null".into())
}

pub fn cmd_sweep(config: &PipelineConfig, split: Split) -> Result<()> {
    let instances = read_instances(config, split)?;
    let client = make_chat_client(config)?;
    let predictor = LlmPredictor {
        config: &config.llm,
        client: client.as_ref(),
    };
    let rows = run_visits_sweep(
        &predictor,
        &instances,
        &DEFAULT_VISIT_LIMITS,
        config.format,
        &config.field_mask()?,
        &config.dictionary()?,
        &config.templates()?,
        config.failure_policy,
    )?;
    let dir = split_dir(&config.paths.out_dir, split);
    ensure_dir(&dir)?;
    write_json(&dir.join("sweep.json"), &rows)?;
    let table: Vec<(String, &EvalReport)> = rows
        .iter()
        .map(|row| {
            (
                format!("visits<={} ({:.0} tok)", row.max_visits, row.mean_tokens),
                &row.report,
            )
        })
        .collect();
    print!("{}", render_metrics_table(&table));
    println!(
        "sweep {split}: {} rows -> {}",
        rows.len(),
        dir.join("sweep.json").display()
    );
    Ok(())
}

pub fn cmd_ablate(config: &PipelineConfig, split: Split) -> Result<()> {
    let instances = read_instances(config, split)?;
    let client = make_chat_client(config)?;
    let predictor = LlmPredictor {
        config: &config.llm,
        client: client.as_ref(),
    };
    let rows = run_field_ablation(
        &predictor,
        &instances,
        config.format,
        config.max_visits,
        &config.dictionary()?,
        &config.templates()?,
        config.failure_policy,
    )?;
    let dir = split_dir(&config.paths.out_dir, split);
    ensure_dir(&dir)?;
    write_json(&dir.join("ablation.json"), &rows)?;
    let table: Vec<(String, &EvalReport)> = rows
        .iter()
        .map(|row| (row.mask.clone(), &row.report))
        .collect();
    print!("{}", render_metrics_table(&table));
    println!(
        "ablate {split}: {} rows -> {}",
        rows.len(),
        dir.join("ablation.json").display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct CostRow {
    format: String,
    mean_tokens: f64,
    avg_cost_usd: f64,
}

pub fn cmd_cost(config: &PipelineConfig, split: Split) -> Result<()> {
    let instances = read_instances(config, split)?;
    let mask = config.field_mask()?;
    let dict = config.dictionary()?;
    let templates = config.templates()?;
    let mut rows = Vec::new();
    for format in odx_core::serialize::PromptFormat::ALL {
        let docs = instances
            .iter()
            .map(|i| render_prompt(i, format, config.max_visits, &mask, &dict, &templates))
            .collect::<Result<Vec<_>>>()?;
        let mean_tokens =
            docs.iter().map(|d| d.token_estimate as f64).sum::<f64>() / docs.len().max(1) as f64;
        let avg = estimate_cost(&docs, &config.cost_model);
        rows.push(CostRow {
            format: format.to_string(),
            mean_tokens,
            avg_cost_usd: avg,
        });
    }
    let dir = split_dir(&config.paths.out_dir, split);
    ensure_dir(&dir)?;
    write_json(&dir.join("cost.json"), &rows)?;
    for row in &rows {
        println!(
            "{:<24} mean {:>7.1} tokens  ${:.4} per instance",
            row.format, row.mean_tokens, row.avg_cost_usd
        );
    }
    println!(
        "cost {split}: {} formats -> {}",
        rows.len(),
        dir.join("cost.json").display()
    );
    Ok(())
}

pub fn cmd_export_finetune(config: &PipelineConfig, split: Split) -> Result<()> {
    let instances = read_instances(config, split)?;
    let dir = split_dir(&config.paths.out_dir, split);
    ensure_dir(&dir)?;
    let path = dir.join("finetune.jsonl");
    let lines = export_finetune_dataset(
        &instances,
        config.format,
        config.max_visits,
        &config.field_mask()?,
        &config.dictionary()?,
        &config.templates()?,
        &path,
    )?;
    println!(
        "export-finetune {split}: {lines} chat records -> {}",
        path.display()
    );
    Ok(())
}
