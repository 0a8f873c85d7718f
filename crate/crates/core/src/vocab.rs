//! Word-level vocabulary with reserved control ids.
//!
//! Tokens are whitespace-separated words; punctuation characters are
//! peeled off as single-character tokens, except that the literal
//! prompt-control words (`predict:`, `explain:`, `label:`) keep their
//! trailing colon. Unknown surface forms map to `UNK`. Detokenization
//! joins with single spaces, so `detokenize(tokenize(s)) == s` holds
//! exactly for strings that are space-joined sequences of vocabulary
//! tokens.

use std::collections::HashMap;
use std::fmt;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Prompt-template words registered in every vocabulary, directly
/// after the reserved control tokens.
pub const PROMPT_WORDS: [&str; 5] = ["predict:", "explain:", "given", "label:", ","];

#[derive(Debug, Clone, PartialEq)]
pub enum VocabError {
    Malformed(String),
    NonDenseIds { expected: usize, got: Vec<u32> },
    ReservedMismatch { id: u32, expected: &'static str, got: String },
}

impl fmt::Display for VocabError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Malformed(msg) => write!(f, "malformed vocabulary: {msg}"),
            Self::NonDenseIds { expected, got } => {
                write!(f, "ids must be a permutation of 0..{expected}, got {got:?}")
            }
            Self::ReservedMismatch { id, expected, got } => {
                write!(f, "reserved id {id} must be '{expected}', got '{got}'")
            }
        }
    }
}

impl std::error::Error for VocabError {}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from corpus texts: reserved ids first, then
    /// the prompt words, then corpus tokens in first-seen order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut v = Vocab { token_to_id: HashMap::new(), id_to_token: Vec::new() };
        for t in RESERVED {
            v.intern(t);
        }
        for t in PROMPT_WORDS {
            v.intern(t);
        }
        for text in texts {
            for tok in surface_tokens(text) {
                v.intern(&tok);
            }
        }
        v
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.to_string(), id);
        self.id_to_token.push(token.to_string());
        id
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        surface_tokens(text)
            .into_iter()
            .map(|tok| self.id(&tok).unwrap_or(UNK))
            .collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(id));
        }
        out
    }

    /// Token-to-id map with sorted keys.
    pub fn to_map(&self) -> std::collections::BTreeMap<String, u32> {
        self.id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect()
    }

    /// Serializes as a JSON object mapping token to id.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_map()).expect("vocab serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Vocab, VocabError> {
        let map: std::collections::BTreeMap<String, u32> =
            serde_json::from_str(json).map_err(|e| VocabError::Malformed(e.to_string()))?;
        Vocab::from_map(map)
    }

    /// Rebuilds from a token-to-id map, validating the bijection and
    /// the reserved ids.
    pub fn from_map(map: std::collections::BTreeMap<String, u32>) -> Result<Vocab, VocabError> {
        let n = map.len();
        let mut id_to_token = vec![String::new(); n];
        let mut seen = vec![false; n];
        for (tok, &id) in &map {
            if id as usize >= n || seen[id as usize] {
                let mut ids: Vec<u32> = map.values().copied().collect();
                ids.sort_unstable();
                return Err(VocabError::NonDenseIds { expected: n, got: ids });
            }
            seen[id as usize] = true;
            id_to_token[id as usize] = tok.clone();
        }
        for (i, expected) in RESERVED.iter().enumerate() {
            if i >= n || id_to_token[i] != *expected {
                return Err(VocabError::ReservedMismatch {
                    id: i as u32,
                    expected,
                    got: id_to_token.get(i).cloned().unwrap_or_default(),
                });
            }
        }
        let token_to_id = map.into_iter().collect();
        Ok(Vocab { token_to_id, id_to_token })
    }
}

/// Splits text into word-level tokens: whitespace-separated chunks,
/// with punctuation peeled into single-character tokens. Chunks that
/// are a bare word plus a trailing colon stay whole, which covers the
/// prompt-control words.
pub fn surface_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if let Some(word) = chunk.strip_suffix(':') {
            if !word.is_empty() && word.chars().all(|c| c.is_alphanumeric()) {
                out.push(chunk.to_string());
                continue;
            }
        }
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() || c == '<' || c == '>' || c == '-' || c == '\'' {
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vocab {
        Vocab::build(["patient reports severe headache , advise home care"])
    }

    #[test]
    fn empty_string_roundtrip() {
        let v = sample();
        assert_eq!(v.tokenize(""), Vec::<u32>::new());
        assert_eq!(v.detokenize(&[]), "");
    }

    #[test]
    fn known_sentence_roundtrips() {
        let v = sample();
        let s = "patient reports severe headache";
        assert_eq!(v.detokenize(&v.tokenize(s)), s);
        let with_punct = "headache , home care";
        assert_eq!(v.detokenize(&v.tokenize(with_punct)), with_punct);
    }

    #[test]
    fn prompt_words_are_single_tokens() {
        let v = sample();
        for w in PROMPT_WORDS {
            let ids = v.tokenize(w);
            assert_eq!(ids.len(), 1, "{w} split into {ids:?}");
            assert_ne!(ids[0], UNK);
        }
        assert_eq!(
            v.tokenize("predict: patient"),
            vec![v.id("predict:").unwrap(), v.id("patient").unwrap()]
        );
    }

    #[test]
    fn unknown_word_maps_to_unk() {
        let v = sample();
        assert_eq!(v.tokenize("zeppelin"), vec![UNK]);
    }

    #[test]
    fn punctuation_peels_off() {
        let v = Vocab::build(["fever , ."]);
        let ids = v.tokenize("fever,.");
        assert_eq!(
            ids,
            vec![v.id("fever").unwrap(), v.id(",").unwrap(), v.id(".").unwrap()]
        );
    }

    #[test]
    fn reserved_ids_stable_across_save_load() {
        let v = sample();
        let json = v.to_json();
        let back = Vocab::from_json(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.token(PAD), "<pad>");
        assert_eq!(back.token(BOS), "<bos>");
        assert_eq!(back.token(EOS), "<eos>");
        assert_eq!(back.token(UNK), "<unk>");
    }

    #[test]
    fn from_json_rejects_broken_tables() {
        // duplicate id
        let err =
            Vocab::from_json(r#"{"<pad>":0,"<bos>":1,"<eos>":2,"<unk>":3,"a":3}"#).unwrap_err();
        assert!(matches!(err, VocabError::NonDenseIds { .. }));
        // reserved id relocated
        let err = Vocab::from_json(r#"{"<pad>":1,"<bos>":0,"<eos>":2,"<unk>":3}"#).unwrap_err();
        assert!(matches!(err, VocabError::ReservedMismatch { .. }));
    }

    #[test]
    fn build_is_deterministic() {
        let a = Vocab::build(["one two three", "two four"]);
        let b = Vocab::build(["one two three", "two four"]);
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }
}
