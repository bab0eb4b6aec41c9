use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{AttentionMode, LmError};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const MASK: usize = 4;

pub const MASK_TOKEN: &str = "<MASK>";
pub const RESERVED_TOKENS: [&str; 5] = ["<PAD>", "<UNK>", "<BOS>", "<EOS>", MASK_TOKEN];

/// Splits text into word and punctuation tokens.
///
/// Words are maximal runs of alphanumerics and apostrophes; every other
/// non-whitespace character is its own token. Reserved tokens such as
/// `<MASK>` are recognized verbatim.
pub fn split_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let is_word = c.is_alphanumeric() || c == '\'';
        if is_word {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(start) = word_start.take() {
            out.push(&text[start..i]);
        }
        if c.is_whitespace() {
            continue;
        }
        if c == '<' {
            if let Some(reserved) = RESERVED_TOKENS.iter().find(|r| text[i..].starts_with(**r)) {
                out.push(&text[i..i + reserved.len()]);
                for _ in 1..reserved.chars().count() {
                    chars.next();
                }
                continue;
            }
        }
        out.push(&text[i..i + c.len_utf8()]);
    }
    if let Some(start) = word_start {
        out.push(&text[start..]);
    }
    out
}

/// Token inventory with reserved ids 0..5 for PAD, UNK, BOS, EOS, MASK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from every token in `texts`, sorted for
    /// determinism.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for text in texts {
            for tok in split_tokens(text) {
                if !RESERVED_TOKENS.contains(&tok) {
                    words.insert(tok.to_string());
                }
            }
        }
        let tokens = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Self::from_tokens(tokens).expect("reserved prefix and unique words")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, LmError> {
        if tokens.len() < RESERVED_TOKENS.len()
            || tokens.iter().zip(RESERVED_TOKENS).any(|(a, b)| a != b)
        {
            return Err(LmError::InvalidVocabulary("reserved tokens must come first".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(LmError::InvalidVocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids of `text`; out-of-vocabulary tokens map to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_tokens(text)
            .into_iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Like [`encode`](Self::encode) but fails on any OOV token.
    pub fn encode_known(&self, text: &str) -> Option<Vec<usize>> {
        split_tokens(text).into_iter().map(|t| self.id(t)).collect()
    }

    pub fn tokenize(&self, text: &str, mode: AttentionMode, max_len: usize) -> Result<TokenSequence, LmError> {
        TokenSequence::new(self.encode(text), mode, max_len)
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED_TOKENS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = LmError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Token ids checked against the model's length limit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
    mask_positions: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>, mode: AttentionMode, max_len: usize) -> Result<Self, LmError> {
        if ids.len() > max_len {
            return Err(LmError::SequenceTooLong {
                len: ids.len(),
                max_len,
            });
        }
        let mask_positions: Vec<usize> = ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == MASK)
            .map(|(i, _)| i)
            .collect();
        if mode == AttentionMode::Causal && !mask_positions.is_empty() {
            return Err(LmError::MaskInCausalMode);
        }
        Ok(Self { ids, mask_positions })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn mask_positions(&self) -> &[usize] {
        &self.mask_positions
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.ids
    }
}

/// Which end of an over-long document survives truncation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    #[default]
    Head,
    Tail,
}

/// Keeps the first `budget` tokens (head) or the last `budget` (tail).
pub fn truncate_document(doc: &[usize], budget: usize, side: Truncation) -> Vec<usize> {
    if doc.len() <= budget {
        return doc.to_vec();
    }
    match side {
        Truncation::Head => doc[..budget].to_vec(),
        Truncation::Tail => doc[doc.len() - budget..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(split_tokens("Diagnosis is <MASK>."), ["Diagnosis", "is", "<MASK>", "."]);
        assert_eq!(split_tokens("Response:"), ["Response", ":"]);
        assert_eq!(split_tokens("boy's  cookie-jar"), ["boy's", "cookie", "-", "jar"]);
        assert_eq!(split_tokens("a <b"), ["a", "<", "b"]);
        assert!(split_tokens("   ").is_empty());
    }

    #[test]
    fn round_trip() {
        let vocab = Vocabulary::build(["the boy fell ."]);
        let seq = vocab.tokenize("the boy fell .", AttentionMode::Causal, 512).unwrap();
        assert_eq!(seq.len(), 4);
        assert_eq!(vocab.detokenize(seq.ids()), "the boy fell .");
    }

    #[test]
    fn oov_maps_to_unk() {
        let vocab = Vocabulary::build(["the boy"]);
        assert_eq!(vocab.encode("zzzq"), [UNK]);
        assert_eq!(vocab.encode_known("zzzq"), None);
    }

    #[test]
    fn too_long() {
        let text = vec!["a"; 600].join(" ");
        let vocab = Vocabulary::build([text.as_str()]);
        let err = vocab.tokenize(&text, AttentionMode::Causal, 512).unwrap_err();
        assert!(matches!(err, LmError::SequenceTooLong { len: 600, max_len: 512 }));
    }

    #[test]
    fn reserved_ids() {
        let vocab = Vocabulary::build(["x"]);
        assert_eq!(vocab.id("<MASK>"), Some(MASK));
        assert_eq!(vocab.id("<BOS>"), Some(BOS));
        let seq = vocab.tokenize("x <MASK> x", AttentionMode::Masked, 10).unwrap();
        assert_eq!(seq.mask_positions(), [1]);
        assert!(vocab.tokenize("x <MASK>", AttentionMode::Causal, 10).is_err());
    }

    #[test]
    fn serde_as_token_list() {
        let vocab = Vocabulary::build(["b a"]);
        let json = serde_json::to_string(&vocab).unwrap();
        assert_eq!(json, r#"["<PAD>","<UNK>","<BOS>","<EOS>","<MASK>","a","b"]"#);
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vocab);
        assert!(serde_json::from_str::<Vocabulary>(r#"["a"]"#).is_err());
    }

    #[test]
    fn truncation() {
        let doc: Vec<usize> = (0..600).collect();
        assert_eq!(truncate_document(&doc[..10], 512, Truncation::Head).len(), 10);
        assert_eq!(truncate_document(&doc, 500, Truncation::Head), doc[..500]);
        assert_eq!(truncate_document(&doc, 500, Truncation::Tail), doc[100..]);
        assert!(truncate_document(&doc, 0, Truncation::Head).is_empty());
    }
}
