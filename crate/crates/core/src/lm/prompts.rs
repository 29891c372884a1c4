//! Prompt templates. Slots are written `{name}`; any other brace text is
//! literal, so JSON examples need no escaping.

use std::collections::BTreeMap;

use super::{LmError, Message, PromptKind, Role};

pub const RULES_ANCHOR: &str = "Rules about what is relevant and what not:";
pub const PREVIOUS_ANCHOR: &str = "Previous actions:";
pub const CURRENT_ANCHOR: &str = "Current:";
pub const ITEM_ANCHOR: &str = "Item for which the relevance needs to be estimated:";
pub const CONTEXT_ANCHOR: &str = "Additional Context:";
pub const EXISTING_RULES_ANCHOR: &str = "Existing set of rules:";
pub const FEEDBACK_ANCHOR: &str = "User feedback:";
pub const QUESTION_ANCHOR: &str = "Question:";
pub const MEMORY_ANCHOR: &str = "Memory:";
pub const UTTERANCE_ANCHOR: &str = "User:";
pub const ITEMS_ANCHOR: &str = "Entries:";

struct Template {
    parts: &'static [(Role, &'static str)],
}

const GROUPING: Template = Template {
    parts: &[
        (
            Role::System,
            "You keep the memory of a household robot tidy. Consecutive memory items that belong to the same \
activity are put into one group, and each group gets a short first-person summary of what happened. \
Keep details that the rules below call relevant.",
        ),
        (
            Role::Human,
            "Rules about what is relevant and what not:
{rules}

Previous actions:
{previous}

Current:
{current}

Items are numbered from the oldest down to 0, the newest. Put every item listed under \"Current\" into a group. \
Name a group by its item range written oldest first, like {\"4-0\": \"summary\"}, or by a single number \
like {\"2\": \"summary\"}. The groups must be consecutive and the last one must end at item 0. You may \
extend or regroup the most recent existing groups, but a range may not cut an existing group in two.

Answer like this:
Reasoning: ...
JSON: ...",
        ),
    ],
};

const RELEVANCE: Template = Template {
    parts: &[
        (
            Role::System,
            "You decide for how much longer a household robot keeps one of its memories. Give a number of extra \
time units to keep it, 0 if it can go now, or inf if it must never be dropped.",
        ),
        (
            Role::Human,
            "Rules about what is relevant and what not:
{rules}

Item for which the relevance needs to be estimated:
{item}

Additional Context:
Parent item: {parent}
Now: {now}

Answer like this:
Reasoning: ...
Relevance: <number>",
        ),
    ],
};

const RULE_LEARNING: Template = Template {
    parts: &[
        (
            Role::System,
            "You maintain the rules that tell a household robot which memories to keep. Rewrite the rules so that \
they account for the user's feedback. Keep rules that still apply and make new ones concrete.",
        ),
        (
            Role::Human,
            "Existing set of rules:
{rules}

User feedback: \"{feedback}\"

Produce a modified set of rules as a numbered list with each item on a new line.",
        ),
    ],
};

const QA_AGENT: Template = Template {
    parts: &[
        (
            Role::System,
            "You answer questions about your own past as a household robot by browsing your memory. Each memory \
line starts with an id in brackets, then the kind of entry, its time span and a summary. A line \
\"forgotten: <span>\" marks a period whose details were dropped on purpose.
Reply with exactly one action per turn:
expand(<id>) shows the entries inside an entry
search(<keywords>) lists entries that mention the keywords
answer(<text>) ends the conversation with your answer
If the details you need were forgotten, say that there is no record of them.
Now: {now}",
        ),
        (
            Role::Human,
            "Question: {question}

Memory:
{frontier}",
        ),
    ],
};

const DIALOG_ROUTING: Template = Template {
    parts: &[
        (
            Role::System,
            "You are the conversational front end of a household robot. For the user's latest utterance reply \
with exactly one call:
answer_question_about_my_past('<question>') if the user asks about something the robot did, saw or heard
handle_forgetting_feedback('You should always remember <what>') if the user says the robot should have kept \
something in memory; restate what should be kept so that it is understandable without the conversation
reply('<text>') for anything else",
        ),
        (
            Role::Human,
            "Conversation so far:
{context}

User: {utterance}",
        ),
    ],
};

const JUDGE: Template = Template {
    parts: &[
        (
            Role::System,
            "You grade answers to questions about past robot activities. Compare the answer with the reference. \
Reply with one word: correct, partial or wrong.",
        ),
        (
            Role::Human,
            "Question: {question}
Reference: {reference}
Answer: {answer}

Grade:",
        ),
    ],
};

const SIMPLE_SUMMARIZE: Template = Template {
    parts: &[
        (Role::System, "You write short first-person summaries of what a household robot did."),
        (
            Role::Human,
            "Summarize these entries in one or two sentences.
Entries:
{items}

Answer like this:
Summary: ...",
        ),
    ],
};

fn template(kind: PromptKind) -> &'static Template {
    match kind {
        PromptKind::Grouping => &GROUPING,
        PromptKind::RelevanceEstimation => &RELEVANCE,
        PromptKind::RuleLearning => &RULE_LEARNING,
        PromptKind::QaAgent => &QA_AGENT,
        PromptKind::DialogRouting => &DIALOG_ROUTING,
        PromptKind::Judge => &JUDGE,
        PromptKind::SimpleSummarize => &SIMPLE_SUMMARIZE,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bindings(BTreeMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Bindings::default()
    }

    pub fn with(mut self, slot: &str, value: impl Into<String>) -> Self {
        self.0.insert(slot.to_string(), value.into());
        self
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.0.get(slot).map(String::as_str)
    }
}

/// Names of the slots a template expects, in order of first appearance.
pub fn slots(kind: PromptKind) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (_, text) in template(kind).parts {
        scan(text, |name| {
            if !out.iter().any(|s| s == name) {
                out.push(name.to_string());
            }
        });
    }
    out
}

fn scan(text: &str, mut f: impl FnMut(&str)) {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(len) = slot_len(&bytes[i + 1..]) {
                f(&text[i + 1..i + 1 + len]);
                i += len + 2;
                continue;
            }
        }
        i += 1;
    }
}

/// Length of a `name}` slot body, if `rest` starts with one.
fn slot_len(rest: &[u8]) -> Option<usize> {
    let len = rest.iter().take_while(|b| b.is_ascii_lowercase() || **b == b'_').count();
    (len > 0 && rest.get(len) == Some(&b'}')).then_some(len)
}

pub fn render_prompt(kind: PromptKind, bindings: &Bindings) -> Result<Vec<Message>, LmError> {
    template(kind)
        .parts
        .iter()
        .map(|(role, text)| {
            let mut out = String::with_capacity(text.len());
            let bytes = text.as_bytes();
            let mut i = 0;
            let mut copied = 0;
            while i < bytes.len() {
                if bytes[i] == b'{' {
                    if let Some(len) = slot_len(&bytes[i + 1..]) {
                        let name = &text[i + 1..i + 1 + len];
                        let value = bindings
                            .get(name)
                            .ok_or_else(|| LmError::MissingBinding { kind, slot: name.to_string() })?;
                        out.push_str(&text[copied..i]);
                        out.push_str(value);
                        i += len + 2;
                        copied = i;
                        continue;
                    }
                }
                i += 1;
            }
            out.push_str(&text[copied..]);
            Ok(Message::new(*role, out))
        })
        .collect()
}
