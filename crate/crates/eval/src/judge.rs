//! Answer grading.

use serde::{Deserialize, Serialize};

use emtree_core::agent::QaResult;
use emtree_core::lm::parse::{parse_judge, JudgeCategory};
use emtree_core::lm::{Bindings, Gateway, PromptKind};
use emtree_core::text::normalize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grade {
    Correct,
    PartiallyCorrect,
    Wrong,
    NoAnswer,
    ForgottenIndicated,
}

impl Grade {
    /// 2 for correct, 1 for partially correct, 0 otherwise.
    pub fn score(self) -> u8 {
        match self {
            Grade::Correct => 2,
            Grade::PartiallyCorrect => 1,
            _ => 0,
        }
    }
}

const FORGOTTEN_MARKERS: &[&str] = &["no record", "forgotten", "forgot", "no longer remember"];
const NO_ANSWER_MARKERS: &[&str] = &["don t know", "do not know", "could not find", "cannot tell"];

fn mentions(text: &str, markers: &[&str]) -> bool {
    let t = normalize(text);
    markers.iter().any(|m| t.contains(m))
}

/// Sorts out refusals first, then asks the judge model. A judge reply that
/// names no grade counts as wrong.
pub fn judge(question: &str, reference: &str, result: &QaResult, gateway: &Gateway) -> Grade {
    if result.forgotten_indicated || mentions(&result.answer, FORGOTTEN_MARKERS) {
        return Grade::ForgottenIndicated;
    }
    if result.gave_up || result.answer.trim().is_empty() || mentions(&result.answer, NO_ANSWER_MARKERS) {
        return Grade::NoAnswer;
    }
    judge_text(question, reference, &result.answer, gateway)
}

pub fn judge_text(question: &str, reference: &str, answer: &str, gateway: &Gateway) -> Grade {
    let bindings = Bindings::new()
        .with("question", question)
        .with("reference", reference)
        .with("answer", answer);
    match gateway.run(PromptKind::Judge, &bindings).ok().map(|c| parse_judge(&c.text)) {
        Some(Ok(JudgeCategory::Correct)) => Grade::Correct,
        Some(Ok(JudgeCategory::Partial)) => Grade::PartiallyCorrect,
        _ => Grade::Wrong,
    }
}
