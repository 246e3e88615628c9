//! Prompt templates, rendering, demonstration selection and label parsing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::corpus::{DatasetSplit, LabelVocab, TaskId};

/// Registry version; bump whenever any template text changes so cached
/// exchanges from older wording are never mistaken for current ones.
pub const PROMPT_VERSION: &str = "v1";

const QUERY_MARKER: &str = "Text: ";
const LABEL_MARKER: &str = "Label:";

/// Instruction shown before every prompt of a task.
pub fn instruction(task_id: TaskId) -> String {
    let vocab = task_id.vocab();
    let question = match task_id {
        TaskId::Persuasion1A => {
            "Decide whether the following Arabic text (a tweet or a news paragraph) uses any persuasion technique, \
             such as loaded language, appeal to fear, name calling, exaggeration, doubt, straw man or red herring."
        }
        TaskId::Disinfo2A => {
            "Decide whether the following Arabic tweet is disinformative, i.e. contains hate speech, offensive \
             content, rumours or spam."
        }
    };
    format!(
        "{question}\nAnswer with exactly one label: \"{}\" or \"{}\". Do not explain.",
        vocab.name(0),
        vocab.name(1)
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task_id: TaskId,
    pub system_instruction: String,
    /// Rendered in this order before the query. Empty for zero-shot.
    pub shots: Vec<Demonstration>,
    pub query_text: String,
}

impl PromptSpec {
    /// Spec using the registry instruction for `task_id`.
    pub fn new(task_id: TaskId, shots: Vec<Demonstration>, query_text: impl Into<String>) -> Self {
        PromptSpec { task_id, system_instruction: instruction(task_id), shots, query_text: query_text.into() }
    }

    pub fn shot_count(&self) -> usize {
        self.shots.len()
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders the full prompt. Texts are flattened to one line so a
/// demonstration can never be confused with the block structure.
pub fn build_prompt(spec: &PromptSpec) -> Result<String, ProbeError> {
    let query = one_line(&spec.query_text);
    if query.is_empty() {
        return Err(ProbeError::EmptyQuery);
    }
    let mut out = String::new();
    out.push_str(spec.system_instruction.trim());
    out.push_str("\n\n");
    for (i, shot) in spec.shots.iter().enumerate() {
        out.push_str(&format!("Example {}\n{QUERY_MARKER}{}\n{LABEL_MARKER} {}\n\n", i + 1, one_line(&shot.text), shot.label));
    }
    out.push_str(&format!("{QUERY_MARKER}{query}\n{LABEL_MARKER}"));
    Ok(out)
}

/// Query text of a prompt produced by [`build_prompt`].
pub fn query_of(prompt: &str) -> Option<&str> {
    let start = prompt.rfind(&format!("\n{QUERY_MARKER}"))? + 1 + QUERY_MARKER.len();
    let rest = &prompt[start..];
    Some(&rest[..rest.find(&format!("\n{LABEL_MARKER}"))?])
}

/// Picks `k` demonstrations from `train`, spreading them over classes as
/// evenly as availability allows. Which classes receive the remainder, the
/// samples drawn and their final order all follow `seed`.
pub fn select_shots(train: &DatasetSplit, k: usize, seed: u64) -> Result<Vec<Demonstration>, ProbeError> {
    if k > train.len() {
        return Err(ProbeError::InsufficientData { requested: k, available: train.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = train.vocab().len();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, label) in train.label_indices().into_iter().enumerate() {
        pools[label].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut class_order: Vec<usize> = (0..classes).collect();
    class_order.shuffle(&mut rng);

    // Round-robin over classes; a drained class is skipped.
    let mut taken = vec![0usize; classes];
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k {
        for &c in &class_order {
            if picked.len() < k && taken[c] < pools[c].len() {
                picked.push(pools[c][taken[c]]);
                taken[c] += 1;
            }
        }
    }
    picked.shuffle(&mut rng);
    let samples = train.samples();
    Ok(picked.into_iter().map(|i| Demonstration { text: samples[i].text.clone(), label: samples[i].label.clone() }).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedLabel {
    Label(String),
    Unparseable,
}

impl ParsedLabel {
    pub fn label(&self) -> Option<&str> {
        match self {
            ParsedLabel::Label(l) => Some(l),
            ParsedLabel::Unparseable => None,
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Finds the earliest class name or alias in `raw`, ignoring case and
/// requiring word boundaries on both sides. At equal positions the longer
/// candidate wins, so "no-disinfo" is not read as "no".
pub fn parse_label(raw: &str, vocab: &LabelVocab) -> ParsedLabel {
    let hay = raw.to_lowercase();
    let mut candidates: Vec<(String, usize)> = vocab.classes().iter().enumerate().map(|(i, c)| (c.to_lowercase(), i)).collect();
    candidates.extend(vocab.aliases().iter().cloned());

    let mut best: Option<(usize, usize, usize)> = None;
    for (needle, class) in &candidates {
        if needle.is_empty() {
            continue;
        }
        for (pos, _) in hay.match_indices(needle.as_str()) {
            let end = pos + needle.len();
            let before_ok = hay[..pos].chars().next_back().is_none_or(|c| !is_word_char(c));
            let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word_char(c));
            if before_ok && after_ok {
                let better = match best {
                    None => true,
                    Some((p, len, _)) => pos < p || (pos == p && needle.len() > len),
                };
                if better {
                    best = Some((pos, needle.len(), *class));
                }
                break;
            }
        }
    }
    match best {
        Some((_, _, class)) => ParsedLabel::Label(vocab.name(class).to_string()),
        None => ParsedLabel::Unparseable,
    }
}
