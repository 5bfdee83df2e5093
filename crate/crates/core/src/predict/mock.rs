//! Deterministic in-process stand-ins for the chat endpoint.
//!
//! The keyword mocks answer "yes" when the user message contains any of
//! their marker strings, which makes prediction behavior a pure function
//! of the rendered prompt — the property every evaluation test relies
//! on. Counters track total calls and peak concurrent calls.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use crate::cohort::OutcomeLabel;
use crate::synth::vocab::SynthVocab;

use super::{ChatCompletion, ChatRequest, TransportError};

enum Behavior {
    Always(OutcomeLabel),
    /// "yes" when total keyword occurrences reach the threshold.
    YesIfCount {
        keywords: Vec<String>,
        threshold: usize,
    },
    Scripted(Mutex<VecDeque<std::result::Result<String, TransportError>>>),
}

pub struct MockChatClient {
    behavior: Behavior,
    hold: Option<Duration>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl MockChatClient {
    fn new(behavior: Behavior) -> Self {
        MockChatClient {
            behavior,
            hold: None,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    /// Constant answer regardless of input (the unbiased mock).
    pub fn always(label: OutcomeLabel) -> Self {
        MockChatClient::new(Behavior::Always(label))
    }

    /// Answer "yes" iff the user message contains any keyword.
    pub fn yes_if_contains(keywords: Vec<String>) -> Self {
        MockChatClient::new(Behavior::YesIfCount {
            keywords,
            threshold: 1,
        })
    }

    /// Answer "yes" iff keyword occurrences total at least `threshold`.
    pub fn yes_if_count(keywords: Vec<String>, threshold: usize) -> Self {
        MockChatClient::new(Behavior::YesIfCount {
            keywords,
            threshold,
        })
    }

    /// Serve scripted replies in order; panics when exhausted.
    pub fn scripted(replies: Vec<std::result::Result<String, TransportError>>) -> Self {
        MockChatClient::new(Behavior::Scripted(Mutex::new(
            replies.into_iter().collect(),
        )))
    }

    /// Hold each call open for `duration` so tests can observe
    /// concurrency.
    pub fn with_hold(mut self, duration: Duration) -> Self {
        self.hold = Some(duration);
        self
    }

    /// Keyed on the planted risk markers (codes, descriptions, and risk
    /// drug names): a predictor that reads marker density the way a
    /// model that learned the signal would. Controls carry a handful of
    /// background markers, so a low threshold would answer "yes" for
    /// everyone.
    pub fn risk_keyed() -> Self {
        let vocab = SynthVocab::default();
        let mut keywords = Vec::new();
        for spec in &vocab.risk_dx {
            keywords.push(spec.code.clone());
            keywords.push(spec.description.clone());
        }
        for spec in &vocab.risk_rx {
            keywords.push(spec.drug_name.clone());
        }
        MockChatClient::yes_if_count(keywords, 8)
    }

    /// Keyed on risk diagnoses only; used by the field ablation, where
    /// masks without diagnoses must underperform.
    pub fn risk_dx_keyed() -> Self {
        let vocab = SynthVocab::default();
        let mut keywords = Vec::new();
        for spec in &vocab.risk_dx {
            keywords.push(spec.code.clone());
            keywords.push(spec.description.clone());
        }
        MockChatClient::yes_if_count(keywords, 8)
    }

    /// Mimics the zero-shot bias: opioid/stimulant exposure reads as
    /// overdose risk, so exposed controls draw false positives.
    pub fn exposure_biased() -> Self {
        let vocab = SynthVocab::default();
        let mut keywords = Vec::new();
        for spec in &vocab.exposure_rx {
            keywords.push(spec.drug_name.clone());
            keywords.push(spec.therapeutic_class.clone());
        }
        for spec in &vocab.exposure_dx {
            keywords.push(spec.code.clone());
            keywords.push(spec.description.clone());
        }
        MockChatClient::yes_if_contains(keywords)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl ChatCompletion for MockChatClient {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(hold) = self.hold {
            std::thread::sleep(hold);
        }

        let user_content = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or_default();

        let result = match &self.behavior {
            Behavior::Always(label) => Ok(label.answer_token().to_string()),
            Behavior::YesIfCount {
                keywords,
                threshold,
            } => {
                let occurrences: usize = keywords
                    .iter()
                    .map(|k| user_content.matches(k.as_str()).count())
                    .sum();
                Ok(if occurrences >= *threshold {
                    "yes".to_string()
                } else {
                    "no".to_string()
                })
            }
            Behavior::Scripted(queue) => queue
                .lock()
                .expect("script queue")
                .pop_front()
                .expect("script exhausted"),
        };

        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}
