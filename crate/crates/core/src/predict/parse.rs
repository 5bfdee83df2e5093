//! Response parsing for the fixed answer schema.
//!
//! Accepted, case-insensitively: a leading "yes"/"no" token, or an
//! `overdose_risk` key valued "yes"/"no" anywhere in the text. Anything
//! else is a parse error; text matching both answers is ambiguous and
//! also an error. Responses are never silently coerced.

use crate::cohort::OutcomeLabel;
use crate::error::{Error, Result};

const KEY: &str = "overdose_risk";

fn token_label(token: &str) -> Option<OutcomeLabel> {
    if token.eq_ignore_ascii_case("yes") {
        Some(OutcomeLabel::Overdose)
    } else if token.eq_ignore_ascii_case("no") {
        Some(OutcomeLabel::NoOverdose)
    } else {
        None
    }
}

pub fn parse_llm_response(text: &str) -> Result<OutcomeLabel> {
    let mut yes = false;
    let mut no = false;
    let mut record = |label: OutcomeLabel| match label {
        OutcomeLabel::Overdose => yes = true,
        OutcomeLabel::NoOverdose => no = true,
    };

    let leading: String = text
        .trim_start()
        .chars()
        .take_while(char::is_ascii_alphanumeric)
        .collect();
    if let Some(label) = token_label(&leading) {
        record(label);
    }

    let lower = text.to_ascii_lowercase();
    let mut from = 0;
    while let Some(at) = lower[from..].find(KEY) {
        let after = from + at + KEY.len();
        let value: String = lower[after..]
            .chars()
            .skip_while(|&c| {
                matches!(c, ':' | '=' | '"' | '\'' | '{' | '}' | ',') || c.is_whitespace()
            })
            .take_while(char::is_ascii_alphanumeric)
            .collect();
        if let Some(label) = token_label(&value) {
            record(label);
        }
        from = after;
    }

    match (yes, no) {
        (true, false) => Ok(OutcomeLabel::Overdose),
        (false, true) => Ok(OutcomeLabel::NoOverdose),
        (true, true) => Err(Error::ResponseParse {
            reason: "ambiguous: both yes and no present".into(),
            raw: text.to_string(),
        }),
        (false, false) => Err(Error::ResponseParse {
            reason: "no yes/no answer found".into(),
            raw: text.to_string(),
        }),
    }
}
