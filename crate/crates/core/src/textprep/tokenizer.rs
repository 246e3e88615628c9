use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{TextprepError, URL_PLACEHOLDER, USER_PLACEHOLDER};

/// `[PAD]`, `[UNK]`, `[CLS]`, `[SEP]` occupy ids 0..4 in every tokenizer
/// built here.
pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Splits text into subword ids. Begin/end markers are added by
/// [`super::tokenize`], not by implementations.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;
    fn vocab_size(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<u32>;
    fn pad_id(&self) -> u32;
    fn unk_id(&self) -> u32;
    fn cls_id(&self) -> u32;
    fn sep_id(&self) -> u32;
}

/// Whitespace split, then punctuation characters split off as their own
/// words. Placeholder tokens stay whole.
fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk == URL_PLACEHOLDER || chunk == USER_PLACEHOLDER {
            words.push(chunk);
            continue;
        }
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_punctuation(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                words.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '،' | '؛' | '؟' | '«' | '»' | '…' | '“' | '”' | '‘' | '’')
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Word-level tokenizer that hashes each pre-token into a fixed number of
/// buckets. Needs no vocabulary file; pairs with the stub encoder.
#[derive(Debug, Clone)]
pub struct HashingTokenizer {
    buckets: u32,
    name: String,
}

impl HashingTokenizer {
    pub fn new(buckets: u32) -> Self {
        assert!(buckets > 0);
        HashingTokenizer { buckets, name: format!("hashing-{buckets}") }
    }
}

impl Default for HashingTokenizer {
    fn default() -> Self {
        HashingTokenizer::new(4096)
    }
}

impl Tokenizer for HashingTokenizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab_size(&self) -> usize {
        SPECIAL_TOKENS.len() + self.buckets as usize
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        pre_tokenize(text)
            .into_iter()
            .map(|w| SPECIAL_TOKENS.len() as u32 + (fnv1a(w.to_lowercase().as_bytes()) % u64::from(self.buckets)) as u32)
            .collect()
    }

    fn pad_id(&self) -> u32 {
        0
    }
    fn unk_id(&self) -> u32 {
        1
    }
    fn cls_id(&self) -> u32 {
        2
    }
    fn sep_id(&self) -> u32 {
        3
    }
}

/// Greedy longest-match-first subword tokenizer over a `vocab.txt` file, the
/// format shipped with BERT-style encoders. Continuation pieces carry a `##`
/// prefix.
#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    name: String,
    vocab: HashMap<String, u32>,
    special: [u32; 4],
    max_word_chars: usize,
}

impl WordPieceTokenizer {
    pub fn from_tokens<I, S>(name: impl Into<String>, tokens: I) -> Result<Self, TextprepError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let name = name.into();
        let vocab: HashMap<String, u32> =
            tokens.into_iter().enumerate().map(|(i, t)| (t.into(), i as u32)).collect();
        let mut special = [0u32; 4];
        for (slot, tok) in special.iter_mut().zip(SPECIAL_TOKENS) {
            *slot = *vocab
                .get(tok)
                .ok_or_else(|| TextprepError::TokenizerUnavailable(format!("{name}: vocabulary lacks {tok}")))?;
        }
        Ok(WordPieceTokenizer { name, vocab, special, max_word_chars: 100 })
    }

    pub fn from_vocab_file(path: impl AsRef<Path>) -> Result<Self, TextprepError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| TextprepError::TokenizerUnavailable(format!("{}: {e}", path.display())))?;
        Self::from_tokens(path.display().to_string(), text.lines().map(str::trim_end))
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.len() > self.max_word_chars {
            out.push(self.unk_id());
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let from = chars[start].0;
                let to = chars.get(end).map_or(word.len(), |&(b, _)| b);
                let candidate = if start == 0 { word[from..to].to_string() } else { format!("##{}", &word[from..to]) };
                if let Some(&id) = self.vocab.get(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => pieces.push(id),
                None => {
                    out.push(self.unk_id());
                    return;
                }
            }
            start = end;
        }
        out.extend(pieces);
    }
}

impl Tokenizer for WordPieceTokenizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in pre_tokenize(text) {
            match self.vocab.get(word) {
                Some(&id) => out.push(id),
                None => self.encode_word(word, &mut out),
            }
        }
        out
    }

    fn pad_id(&self) -> u32 {
        self.special[0]
    }
    fn unk_id(&self) -> u32 {
        self.special[1]
    }
    fn cls_id(&self) -> u32 {
        self.special[2]
    }
    fn sep_id(&self) -> u32 {
        self.special[3]
    }
}

/// Resolves the tokenizer paired with an encoder id.
///
/// * `stub:*` ids use a [`HashingTokenizer`] (`stub:tiny` or
///   `stub:tiny:<buckets>`).
/// * An id naming a local directory containing `vocab.txt` uses
///   [`WordPieceTokenizer`].
pub fn tokenizer_for(encoder_id: &str) -> Result<Box<dyn Tokenizer>, TextprepError> {
    if let Some(rest) = encoder_id.strip_prefix("stub:") {
        let buckets = match rest.split(':').nth(1) {
            None => 4096,
            Some(n) => n.parse().map_err(|_| TextprepError::TokenizerUnavailable(encoder_id.to_string()))?,
        };
        return Ok(Box::new(HashingTokenizer::new(buckets)));
    }
    let vocab = Path::new(encoder_id).join("vocab.txt");
    if vocab.is_file() {
        return Ok(Box::new(WordPieceTokenizer::from_vocab_file(vocab)?));
    }
    Err(TextprepError::TokenizerUnavailable(encoder_id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> WordPieceTokenizer {
        WordPieceTokenizer::from_tokens(
            "toy",
            ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "ال", "##مدرس", "##ة", "كتب", "!", "[URL]"],
        )
        .unwrap()
    }

    #[test]
    fn pre_tokenize_splits_punctuation_but_not_placeholders() {
        assert_eq!(pre_tokenize("مرحبا، عالم! [URL] a.b"), vec!["مرحبا", "،", "عالم", "!", "[URL]", "a", ".", "b"]);
    }

    #[test]
    fn wordpiece_greedy_longest_match() {
        let t = toy();
        // ال + ##مدرس + ##ة ; كتب ; ! ; unknown word -> [UNK]
        assert_eq!(t.encode("المدرسة كتب! xyz [URL]"), vec![4, 5, 6, 7, 8, 1, 9]);
    }

    #[test]
    fn wordpiece_requires_special_tokens() {
        assert!(WordPieceTokenizer::from_tokens("bad", ["a", "b"]).is_err());
    }

    #[test]
    fn hashing_is_case_insensitive_and_in_range() {
        let t = HashingTokenizer::new(16);
        let ids = t.encode("Word word WORD other");
        assert_eq!(ids[0], ids[1]);
        assert_eq!(ids[1], ids[2]);
        assert!(ids.iter().all(|&i| (4..20).contains(&i)));
    }

    #[test]
    fn registry() {
        assert_eq!(tokenizer_for("stub:tiny").unwrap().vocab_size(), 4100);
        assert_eq!(tokenizer_for("stub:tiny:64").unwrap().vocab_size(), 68);
        assert!(matches!(
            tokenizer_for("aubmindlab/bert-base-arabertv02"),
            Err(TextprepError::TokenizerUnavailable(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("vocab.txt"), "[PAD]\n[UNK]\n[CLS]\n[SEP]\nكتب\n").unwrap();
        let t = tokenizer_for(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(t.encode("كتب"), vec![4]);
    }
}
