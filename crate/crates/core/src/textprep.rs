//! Text normalisation for Arabic tweets and news paragraphs, and
//! encoder-ready tokenization with head-keeping truncation.

mod tokenizer;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, LabeledSample};

pub use tokenizer::{tokenizer_for, HashingTokenizer, Tokenizer, WordPieceTokenizer, SPECIAL_TOKENS};

pub const URL_PLACEHOLDER: &str = "[URL]";
pub const USER_PLACEHOLDER: &str = "[USER]";

#[derive(Debug, thiserror::Error)]
pub enum TextprepError {
    #[error("no tokenizer available for encoder {0:?}")]
    TokenizerUnavailable(String),
    #[error("max_seq_len must be at least 2 (got {0})")]
    MaxLenTooSmall(usize),
}

/// Each normalisation step as an explicit flag. All flags off is the
/// identity transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    pub replace_urls: bool,
    pub replace_user_mentions: bool,
    pub strip_diacritics: bool,
    /// Alef variants to bare alef, teh marbuta to heh, alef maksura to yeh.
    pub normalize_letter_variants: bool,
    pub collapse_whitespace: bool,
    pub strip_tatweel: bool,
}

impl NormalizationConfig {
    pub fn identity() -> Self {
        NormalizationConfig {
            replace_urls: false,
            replace_user_mentions: false,
            strip_diacritics: false,
            normalize_letter_variants: false,
            collapse_whitespace: false,
            strip_tatweel: false,
        }
    }

    pub fn all() -> Self {
        NormalizationConfig {
            replace_urls: true,
            replace_user_mentions: true,
            strip_diacritics: true,
            normalize_letter_variants: true,
            collapse_whitespace: true,
            strip_tatweel: true,
        }
    }
}

impl Default for NormalizationConfig {
    /// URLs, mentions, diacritics, tatweel and whitespace are handled; letter
    /// variants are left alone.
    fn default() -> Self {
        NormalizationConfig { normalize_letter_variants: false, ..Self::all() }
    }
}

pub const TATWEEL: char = '\u{0640}';

/// Arabic harakat, Quranic annotation marks and the superscript alef.
pub fn is_arabic_diacritic(c: char) -> bool {
    matches!(c,
        '\u{0610}'..='\u{061A}'
        | '\u{064B}'..='\u{065F}'
        | '\u{0670}'
        | '\u{06D6}'..='\u{06DC}'
        | '\u{06DF}'..='\u{06E8}'
        | '\u{06EA}'..='\u{06ED}')
}

fn unify_letter(c: char) -> char {
    match c {
        '\u{0622}' | '\u{0623}' | '\u{0625}' | '\u{0671}' => '\u{0627}',
        '\u{0629}' => '\u{0647}',
        '\u{0649}' => '\u{064A}',
        other => other,
    }
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").expect("valid regex"))
}

fn mention_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").expect("valid regex"))
}

/// Applies the enabled transforms. Deterministic and idempotent.
///
/// Character filters run before the URL and mention patterns so that
/// removing a tatweel or diacritic can never reveal a new match on a second
/// pass; whitespace is collapsed last.
pub fn normalize(text: &str, config: &NormalizationConfig) -> String {
    let mut out: String = if config.strip_tatweel || config.strip_diacritics || config.normalize_letter_variants {
        text.chars()
            .filter(|&c| !(config.strip_tatweel && c == TATWEEL))
            .filter(|&c| !(config.strip_diacritics && is_arabic_diacritic(c)))
            .map(|c| if config.normalize_letter_variants { unify_letter(c) } else { c })
            .collect()
    } else {
        text.to_string()
    };
    if config.replace_urls {
        out = url_regex().replace_all(&out, URL_PLACEHOLDER).into_owned();
    }
    if config.replace_user_mentions {
        out = mention_regex().replace_all(&out, USER_PLACEHOLDER).into_owned();
    }
    if config.collapse_whitespace {
        out = out.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    out
}

/// Encoder input for one sample. Sequences are unpadded, so the attention
/// mask is all ones until a batch pads them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub id: String,
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    /// Token count including begin/end markers, before truncation.
    pub original_length: usize,
}

impl TokenizedSample {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn is_truncated(&self) -> bool {
        self.original_length > self.token_ids.len()
    }
}

/// Wraps the tokenizer output in begin/end markers and keeps the head of the
/// sequence when it exceeds `max_seq_len`.
pub fn tokenize(text: &str, tokenizer: &dyn Tokenizer, max_seq_len: usize) -> Result<TokenizedSample, TextprepError> {
    if max_seq_len < 2 {
        return Err(TextprepError::MaxLenTooSmall(max_seq_len));
    }
    let pieces = tokenizer.encode(text);
    let original_length = pieces.len() + 2;
    let keep = pieces.len().min(max_seq_len - 2);
    let mut token_ids = Vec::with_capacity(keep + 2);
    token_ids.push(tokenizer.cls_id());
    token_ids.extend_from_slice(&pieces[..keep]);
    token_ids.push(tokenizer.sep_id());
    let attention_mask = vec![1; token_ids.len()];
    Ok(TokenizedSample { id: String::new(), token_ids, attention_mask, original_length })
}

/// Normalises then tokenizes one sample, carrying its id.
pub fn prepare_sample(
    sample: &LabeledSample,
    normalization: &NormalizationConfig,
    tokenizer: &dyn Tokenizer,
    max_seq_len: usize,
) -> Result<TokenizedSample, TextprepError> {
    Ok(tokenize(&normalize(&sample.text, normalization), tokenizer, max_seq_len)?.with_id(&sample.id))
}

pub fn prepare_split(
    split: &DatasetSplit,
    normalization: &NormalizationConfig,
    tokenizer: &dyn Tokenizer,
    max_seq_len: usize,
) -> Result<Vec<TokenizedSample>, TextprepError> {
    split.samples().iter().map(|s| prepare_sample(s, normalization, tokenizer, max_seq_len)).collect()
}

/// Fraction of samples whose token sequence had to be cut.
pub fn truncation_report(split: &DatasetSplit, tokenizer: &dyn Tokenizer, max_seq_len: usize) -> Result<f64, TextprepError> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let mut truncated = 0usize;
    for sample in split.samples() {
        if tokenize(&sample.text, tokenizer, max_seq_len)?.is_truncated() {
            truncated += 1;
        }
    }
    Ok(truncated as f64 / split.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SplitName, TaskId};
    use proptest::prelude::*;

    #[test]
    fn url_replaced() {
        let cfg = NormalizationConfig { replace_urls: true, ..NormalizationConfig::identity() };
        assert_eq!(normalize("check http://t.co/abc", &cfg), "check [URL]");
        assert_eq!(normalize("see WWW.example.com now", &cfg), "see [URL] now");
    }

    #[test]
    fn mentions_replaced() {
        let cfg = NormalizationConfig { replace_user_mentions: true, ..NormalizationConfig::identity() };
        assert_eq!(normalize("@user_1 قال @محمد", &cfg), "[USER] قال [USER]");
    }

    #[test]
    fn identity_config_is_identity() {
        let text = "  ٱلْعَرَبِيَّةُ ـــ http://x.y @a  ";
        assert_eq!(normalize(text, &NormalizationConfig::identity()), text);
    }

    #[test]
    fn tatweel_strip_matches_character_filter() {
        let cfg = NormalizationConfig { strip_tatweel: true, ..NormalizationConfig::identity() };
        let text = "جمـــيل جداً ـ نعم";
        let oracle: String = text.chars().filter(|&c| c as u32 != 0x0640).collect();
        assert_eq!(normalize(text, &cfg), oracle);
        assert_eq!(oracle, "جميل جداً  نعم");
    }

    #[test]
    fn diacritics_and_letters() {
        let cfg = NormalizationConfig { strip_diacritics: true, normalize_letter_variants: true, ..NormalizationConfig::identity() };
        assert_eq!(normalize("أَحْمَد إلى مدرسةٍ", &cfg), "احمد الي مدرسه");
    }

    #[test]
    fn whitespace_collapsed() {
        let cfg = NormalizationConfig { collapse_whitespace: true, ..NormalizationConfig::identity() };
        assert_eq!(normalize(" a \t\n b  ", &cfg), "a b");
    }

    #[test]
    fn empty_text_yields_only_markers() {
        let tok = HashingTokenizer::default();
        let t = tokenize("", &tok, 128).unwrap();
        assert_eq!(t.token_ids, vec![tok.cls_id(), tok.sep_id()]);
        assert_eq!(t.attention_mask, vec![1, 1]);
        assert_eq!(t.original_length, 2);
    }

    #[test]
    fn long_text_truncated_to_128() {
        let tok = HashingTokenizer::default();
        let text = (0..300).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let t = tokenize(&text, &tok, 128).unwrap();
        assert_eq!(t.token_ids.len(), 128);
        assert_eq!(t.original_length, 302);
        assert!(t.original_length > 128);
        assert_eq!(*t.token_ids.last().unwrap(), tok.sep_id());
        // head is kept
        assert_eq!(t.token_ids[1], tok.encode("w0")[0]);
    }

    #[test]
    fn short_text_count_matches_word_split_oracle() {
        let tok = HashingTokenizer::default();
        let text = "هذا خبر عاجل من المصدر";
        let oracle = text.split_whitespace().count() + 2;
        assert_eq!(tokenize(text, &tok, 128).unwrap().token_ids.len(), oracle);
    }

    #[test]
    fn max_len_below_two_rejected() {
        assert!(matches!(tokenize("a", &HashingTokenizer::default(), 1), Err(TextprepError::MaxLenTooSmall(1))));
    }

    fn split_with_lengths(words: &[usize]) -> DatasetSplit {
        let samples = words
            .iter()
            .enumerate()
            .map(|(i, &n)| LabeledSample::new(format!("{i}"), vec!["كلمة"; n].join(" "), "prop"))
            .collect();
        DatasetSplit::new(SplitName::Train, TaskId::Persuasion1A, TaskId::Persuasion1A.vocab(), samples).unwrap()
    }

    #[test]
    fn truncation_fractions() {
        let tok = HashingTokenizer::default();
        assert_eq!(truncation_report(&split_with_lengths(&[3, 4, 5]), &tok, 16).unwrap(), 0.0);
        assert_eq!(truncation_report(&split_with_lengths(&[30, 40]), &tok, 16).unwrap(), 1.0);
        assert_eq!(truncation_report(&split_with_lengths(&[30, 1, 2, 3]), &tok, 16).unwrap(), 0.25);
    }

    fn config_strategy() -> impl Strategy<Value = NormalizationConfig> {
        prop::array::uniform6(any::<bool>()).prop_map(|f| NormalizationConfig {
            replace_urls: f[0],
            replace_user_mentions: f[1],
            strip_diacritics: f[2],
            normalize_letter_variants: f[3],
            collapse_whitespace: f[4],
            strip_tatweel: f[5],
        })
    }

    fn tricky_text() -> impl Strategy<Value = String> {
        let pieces = prop::sample::select(vec![
            "h", "t", "p", "s", ":", "/", "w", ".", "@", " ", "\t", "\n", "ـ", "َ", "ٌ", "ّ", "أ", "إ", "ة", "ى", "ا", "ب",
            "http://", "www.", "[", "]", "_", "x", "1",
        ]);
        prop::collection::vec(pieces, 0..40).prop_map(|v| v.concat())
    }

    fn removable(c: char, cfg: &NormalizationConfig) -> bool {
        c.is_whitespace() || (cfg.strip_tatweel && c == TATWEEL) || (cfg.strip_diacritics && is_arabic_diacritic(c))
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(text in tricky_text(), cfg in config_strategy()) {
            let once = normalize(&text, &cfg);
            prop_assert_eq!(normalize(&once, &cfg), once.clone());
            prop_assert_eq!(normalize(&text, &cfg), once);
        }

        #[test]
        fn normalize_idempotent_on_arbitrary_unicode(text in "\\PC{0,60}", cfg in config_strategy()) {
            let once = normalize(&text, &cfg);
            prop_assert_eq!(normalize(&once, &cfg), once);
        }

        #[test]
        fn nonremovable_content_survives(text in tricky_text(), cfg in config_strategy()) {
            if text.chars().any(|c| !removable(c, &cfg)) {
                prop_assert!(!normalize(&text, &cfg).is_empty());
            }
        }

        #[test]
        fn tokenized_length_bounded(text in "\\PC{0,400}", max in 2usize..200) {
            let t = tokenize(&text, &HashingTokenizer::default(), max).unwrap();
            prop_assert!(t.token_ids.len() <= max);
            prop_assert_eq!(t.token_ids.len(), t.attention_mask.len());
            prop_assert!(t.original_length >= t.token_ids.len());
        }
    }
}
