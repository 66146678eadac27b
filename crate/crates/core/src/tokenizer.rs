//! Word-level vocabulary and sequence encoding.
//!
//! Ids 0..=10 are reserved for `[PAD] [UNK] [CLS] [SEP] [MASK]` and the six
//! entity marker tokens. Every numeral seen at build time gets an id regardless
//! of frequency, so masked-numeral prediction can name any answer.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{is_numeral, Corpus, EntityLabel, Sentence};
use crate::error::{Error, Result};

pub const VOCAB_FORMAT: &str = "nuer-vocab-v1";
pub const DEFAULT_MAX_LEN: usize = 64;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;

pub const RESERVED: [&str; 11] = [
    "[PAD]",
    "[UNK]",
    "[CLS]",
    "[SEP]",
    "[MASK]",
    "<size>",
    "<age>",
    "<count>",
    "<date>",
    "<year>",
    "<percentage>",
];

/// Id of the marker token announcing `label`; `None` for `Other`.
pub fn marker_id(label: EntityLabel) -> Option<u32> {
    match label {
        EntityLabel::Other => None,
        EntityLabel::Size => Some(5),
        EntityLabel::Age => Some(6),
        EntityLabel::Count => Some(7),
        EntityLabel::Date => Some(8),
        EntityLabel::Year => Some(9),
        EntityLabel::Percentage => Some(10),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    numeral_ids: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    format: String,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds from an id-ordered token list whose first entries are [`RESERVED`].
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::invalid("vocabulary must start with the reserved tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        let numeral_ids = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| is_numeral(t))
            .map(|(i, _)| i as u32)
            .collect();
        Ok(Vocabulary {
            tokens,
            index,
            numeral_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sorted ids of numeral tokens.
    pub fn numeral_ids(&self) -> &[u32] {
        &self.numeral_ids
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(String::from)
                    .ok_or_else(|| Error::invalid(format!("unknown token id {id}")))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabFile {
            format: VOCAB_FORMAT.into(),
            tokens: self.tokens.clone(),
        })
        .expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("bad vocabulary file: {e}")))?;
        if f.format != VOCAB_FORMAT {
            return Err(Error::Version {
                expected: VOCAB_FORMAT.into(),
                found: f.format,
            });
        }
        Self::from_tokens(f.tokens)
    }

    /// SHA-256 of the canonical JSON form; checkpoints record it.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Tokens with frequency >= `min_freq` plus every numeral, most frequent first
/// (ties lexicographic), after the reserved block.
pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for s in &corpus.sentences {
        let q = s.question.iter().flatten();
        for t in s.tokens.iter().chain(q) {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|(t, n)| (*n >= min_freq || is_numeral(t)) && !RESERVED.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// Where an encoded position came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenRef {
    Question(usize),
    Context(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    pub positions: Vec<usize>,
    pub alignment: Vec<Option<TokenRef>>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of non-PAD positions.
    pub fn content_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Copy with trailing padding removed. Non-PAD outputs of the encoder are
    /// identical for both forms since PAD keys are masked.
    pub fn trimmed(&self) -> EncodedSequence {
        let n = self.content_len();
        EncodedSequence {
            token_ids: self.token_ids[..n].to_vec(),
            segment_ids: self.segment_ids[..n].to_vec(),
            attention_mask: self.attention_mask[..n].to_vec(),
            positions: self.positions[..n].to_vec(),
            alignment: self.alignment[..n].to_vec(),
        }
    }

    /// Encoded position of context token `i`, if it survived truncation.
    pub fn context_position(&self, i: usize) -> Option<usize> {
        self.alignment
            .iter()
            .position(|a| *a == Some(TokenRef::Context(i)))
    }

    /// Encoded positions of context tokens, in order.
    pub fn context_positions(&self) -> Vec<usize> {
        self.alignment
            .iter()
            .enumerate()
            .filter_map(|(p, a)| matches!(a, Some(TokenRef::Context(_))).then_some(p))
            .collect()
    }

    pub fn has_pair(&self) -> bool {
        self.alignment
            .iter()
            .any(|a| matches!(a, Some(TokenRef::Question(_))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncodeOptions {
    pub max_len: usize,
    /// Marker token placed right after `[CLS]`.
    pub entity_marker: Option<EntityLabel>,
    /// Replace the sentence's masked numeral with `[MASK]`.
    pub mask_numeral: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            max_len: DEFAULT_MAX_LEN,
            entity_marker: None,
            mask_numeral: false,
        }
    }
}

pub fn encode(
    sentence: &Sentence,
    vocab: &Vocabulary,
    max_len: usize,
    entity_marker: Option<EntityLabel>,
) -> Result<EncodedSequence> {
    encode_with(
        sentence,
        vocab,
        &EncodeOptions {
            max_len,
            entity_marker,
            mask_numeral: false,
        },
    )
}

/// Layout: `[CLS] (marker) question [SEP] context [SEP] [PAD]*`, or
/// `[CLS] (marker) context [SEP] [PAD]*` without a question. Truncation only
/// drops the context tail.
pub fn encode_with(sentence: &Sentence, vocab: &Vocabulary, opts: &EncodeOptions) -> Result<EncodedSequence> {
    let max_len = opts.max_len;
    if max_len < 4 {
        return Err(Error::invalid(format!("max_len {max_len} is below 4")));
    }
    let marker = match opts.entity_marker {
        Some(l) => Some(marker_id(l).ok_or_else(|| Error::invalid("entity marker cannot be O"))?),
        None => None,
    };
    let masked = if opts.mask_numeral {
        Some(
            sentence
                .mask_index
                .ok_or_else(|| Error::invalid(format!("sentence `{}` has no mask_index", sentence.id)))?,
        )
    } else {
        None
    };

    let mut ids = Vec::with_capacity(max_len);
    let mut segs = Vec::with_capacity(max_len);
    let mut align = Vec::with_capacity(max_len);
    let push = |ids: &mut Vec<u32>, segs: &mut Vec<u8>, align: &mut Vec<Option<TokenRef>>, id, seg, a| {
        ids.push(id);
        segs.push(seg);
        align.push(a);
    };

    push(&mut ids, &mut segs, &mut align, CLS, 0, None);
    if let Some(m) = marker {
        push(&mut ids, &mut segs, &mut align, m, 0, None);
    }
    let context_seg = match &sentence.question {
        Some(q) => {
            for (i, t) in q.iter().enumerate() {
                push(&mut ids, &mut segs, &mut align, vocab.id(t), 0, Some(TokenRef::Question(i)));
            }
            push(&mut ids, &mut segs, &mut align, SEP, 0, None);
            1
        }
        None => 0,
    };
    // room for the context plus its closing [SEP]
    if ids.len() + 1 > max_len {
        return Err(Error::invalid(format!(
            "sentence `{}`: question does not fit in max_len {max_len}",
            sentence.id
        )));
    }
    let room = max_len - ids.len() - 1;
    let kept = sentence.tokens.len().min(room);
    if let Some((_, end)) = sentence.answer_span {
        if end >= kept {
            return Err(Error::invalid(format!(
                "sentence `{}`: answer span truncated at max_len {max_len}",
                sentence.id
            )));
        }
    }
    if let Some(mi) = sentence.mask_index {
        if mi >= kept {
            return Err(Error::invalid(format!(
                "sentence `{}`: masked token truncated at max_len {max_len}",
                sentence.id
            )));
        }
    }
    for (i, t) in sentence.tokens[..kept].iter().enumerate() {
        let id = if masked == Some(i) { MASK } else { vocab.id(t) };
        push(&mut ids, &mut segs, &mut align, id, context_seg, Some(TokenRef::Context(i)));
    }
    push(&mut ids, &mut segs, &mut align, SEP, context_seg, None);

    let content = ids.len();
    let mut attention_mask = vec![1u8; content];
    while ids.len() < max_len {
        push(&mut ids, &mut segs, &mut align, PAD, 0, None);
        attention_mask.push(0);
    }
    Ok(EncodedSequence {
        positions: (0..ids.len()).collect(),
        token_ids: ids,
        segment_ids: segs,
        attention_mask,
        alignment: align,
    })
}

/// Splits raw text on whitespace and punctuation, keeping numerals such as
/// "1,000" and "45.7" whole. "%" and unit words come out as separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_ascii_digit() {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let joins = (d == ',' || d == '.')
                        && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
                    if d.is_ascii_digit() || joins {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push(chars[start..i].iter().collect());
            } else if c.is_alphanumeric() || c == '_' || c == '\'' && i > 0 {
                let start = i;
                while i < chars.len() && (chars[i].is_alphabetic() || chars[i] == '_' || chars[i] == '\'') {
                    i += 1;
                }
                if i == start {
                    i += 1;
                }
                out.push(chars[start..i].iter().collect());
            } else {
                out.push(c.to_string());
                i += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityLabel::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn one(tokens: &str, labels: Vec<EntityLabel>) -> Sentence {
        Sentence::new("x", toks(tokens), labels)
    }

    #[test]
    fn reserved_layout() {
        let c = Corpus::new(vec![one("in 2003", vec![Other, Year])], "t");
        let v = build_vocab(&c, 1).unwrap();
        assert_eq!(v.len(), 13);
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.get(r), Some(i as u32));
        }
        assert_eq!(v.token(marker_id(Year).unwrap()), Some("<year>"));
        assert_eq!(v.token(marker_id(Percentage).unwrap()), Some("<percentage>"));
        assert_eq!(v.numeral_ids(), &[v.get("2003").unwrap()]);
    }

    #[test]
    fn min_freq_keeps_numerals() {
        let c = Corpus::new(vec![one("in 2003 and 5", vec![Other, Year, Other, Count])], "t");
        let v = build_vocab(&c, 2).unwrap();
        assert_eq!(v.len(), 13);
        assert!(v.get("in").is_none());
        assert!(v.get("2003").is_some() && v.get("5").is_some());
        assert!(build_vocab(&Corpus::default(), 1).is_err());
    }

    #[test]
    fn single_sentence_layout() {
        let s = one("in 2003", vec![Other, Year]);
        let v = build_vocab(&Corpus::new(vec![s.clone()], "t"), 1).unwrap();
        let e = encode(&s, &v, 8, None).unwrap();
        let (i_in, i_y) = (v.id("in"), v.id("2003"));
        assert_eq!(e.token_ids, vec![CLS, i_in, i_y, SEP, PAD, PAD, PAD, PAD]);
        assert_eq!(e.attention_mask, vec![1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(e.segment_ids, vec![0; 8]);

        let m = encode(&s, &v, 8, Some(Year)).unwrap();
        assert_eq!(m.token_ids[..5], [CLS, marker_id(Year).unwrap(), i_in, i_y, SEP]);
        assert_eq!(m.context_position(1), Some(3));
    }

    #[test]
    fn pair_layout_segments() {
        let mut s = one("in 2003", vec![Other, Year]);
        s.question = Some(toks("what year"));
        let v = build_vocab(&Corpus::new(vec![s.clone()], "t"), 1).unwrap();
        let e = encode(&s, &v, 7, None).unwrap();
        assert_eq!(e.segment_ids, vec![0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(
            v.decode(&e.token_ids).unwrap(),
            toks("[CLS] what year [SEP] in 2003 [SEP]")
        );
        assert_eq!(e.alignment[1], Some(TokenRef::Question(0)));
        assert_eq!(e.alignment[5], Some(TokenRef::Context(1)));
        assert!(e.has_pair());
    }

    #[test]
    fn truncation_guards() {
        let mut s = one("a b c d 2003", vec![Other, Other, Other, Other, Year]);
        let v = build_vocab(&Corpus::new(vec![s.clone()], "t"), 1).unwrap();
        let e = encode(&s, &v, 4, None).unwrap();
        assert_eq!(v.decode(&e.token_ids).unwrap(), toks("[CLS] a b [SEP]"));
        s.mask_index = Some(4);
        s.mask_entity = Some(Year);
        assert!(encode(&s, &v, 4, None).is_err());
        assert!(encode(&s, &v, 3, None).is_err());
        assert!(encode(&s, &v, 8, None).is_ok());
    }

    #[test]
    fn masking_and_unknowns() {
        let mut s = one("in 2003", vec![Other, Year]);
        s.mask_index = Some(1);
        s.mask_entity = Some(Year);
        let v = build_vocab(&Corpus::new(vec![s.clone()], "t"), 1).unwrap();
        let opts = EncodeOptions {
            max_len: 8,
            entity_marker: Some(Year),
            mask_numeral: true,
        };
        let e = encode_with(&s, &v, &opts).unwrap();
        assert_eq!(e.token_ids[3], MASK);
        let unk = one("zebra", vec![Other]);
        assert_eq!(encode(&unk, &v, 8, None).unwrap().token_ids[1], UNK);
        assert!(v.decode(&[999]).is_err());
        assert_eq!(v.decode(&[PAD]).unwrap(), vec!["[PAD]"]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let c = Corpus::new(vec![one("in 2003", vec![Other, Year])], "t");
        let v = build_vocab(&c, 1).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.sha256(), v.sha256());
        assert!(Vocabulary::from_json(&v.to_json().replace("nuer-vocab-v1", "nuer-vocab-v0")).is_err());
    }

    #[test]
    fn raw_text_tokenization() {
        assert_eq!(
            tokenize("In 2003, 45.7% of 1,000 people ran 12km."),
            toks("In 2003 , 45.7 % of 1,000 people ran 12 km .")
        );
    }
}
