//! Fine-tuning dataset export: one JSONL chat record per labeled
//! instance, with the gold answer as the assistant turn.

use std::io::Write;
use std::path::Path;

use serde_json::json;

use crate::cohort::PredictionInstance;
use crate::error::{Error, Result};
use crate::serialize::{render_prompt, CodeDictionary, FieldMask, PromptFormat, Templates};

/// Write `{"messages": [system, user, assistant]}` per instance and
/// return the line count.
#[allow(clippy::too_many_arguments)]
pub fn export_finetune_dataset(
    instances: &[PredictionInstance],
    format: PromptFormat,
    max_visits: usize,
    mask: &FieldMask,
    dict: &CodeDictionary,
    templates: &Templates,
    out_path: &Path,
) -> Result<usize> {
    let file = std::fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut lines = 0;
    for instance in instances {
        let doc = render_prompt(instance, format, max_visits, mask, dict, templates)?;
        let record = json!({
            "messages": [
                { "role": "system", "content": doc.instruction },
                { "role": "user", "content": doc.body },
                { "role": "assistant", "content": instance.label.answer_token() },
            ]
        });
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(out_path, e))?;
        lines += 1;
    }
    out.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{build_task_set, OutcomeLabel, PredictionWindow};
    use crate::synth::{generate_population, GeneratorConfig, Split};

    #[test]
    fn export_writes_one_valid_record_per_instance() {
        let cfg = GeneratorConfig {
            n_case: 6,
            n_control: 12,
            ..GeneratorConfig::default()
        };
        let pop = generate_population(&cfg, Split::Train).unwrap();
        let (instances, _) = build_task_set(&pop.patients, PredictionWindow::new(7).unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("finetune.jsonl");
        let lines = export_finetune_dataset(
            &instances,
            PromptFormat::DetailedDescriptive,
            30,
            &FieldMask::all(),
            &CodeDictionary::synthetic_default(),
            &Templates::default(),
            &path,
        )
        .unwrap();
        assert_eq!(lines, instances.len());

        let text = std::fs::read_to_string(&path).unwrap();
        let mut parsed = 0;
        for (line, instance) in text.lines().zip(&instances) {
            let value: serde_json::Value = serde_json::from_str(line).unwrap();
            let messages = value["messages"].as_array().unwrap();
            assert_eq!(messages.len(), 3);
            assert_eq!(messages[0]["role"], "system");
            assert_eq!(messages[1]["role"], "user");
            assert_eq!(messages[2]["role"], "assistant");
            let expected = match instance.label {
                OutcomeLabel::Overdose => "yes",
                OutcomeLabel::NoOverdose => "no",
            };
            assert_eq!(messages[2]["content"], expected);
            parsed += 1;
        }
        assert_eq!(parsed, instances.len());
    }
}
