//! Requirement corpus handling: tokenization, keyword extraction, copy
//! labels, vocabulary, encoded training pairs and cross-validation folds.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{RoleSpec, SyntaxReference};
use crate::{Error, Result};

pub type TokenId = usize;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const CLS_ID: TokenId = 2;
pub const SEP_ID: TokenId = 3;

const PUNCTUATION: &[char] = &['.', ',', ';', ':', '(', ')', '?', '!'];

pub fn is_punctuation(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCTUATION.contains(&c))
}

/// Lowercases, splits on whitespace and splits off `.,;:()?!` as tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if PUNCTUATION.contains(&c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.extend(c.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

// Closed-class words plus the verbs and modifiers that recur in requirement
// statements. Anything else counts as nominal.
const NON_NOMINAL: &[&str] = &[
    // determiners and quantifiers
    "a", "an", "the", "this", "that", "these", "those", "each", "every", "any", "all", "some",
    "no", "none", "both", "either", "neither", "another", "other", "such", "own", "same",
    "many", "much", "more", "most", "few", "fewer", "less", "least", "several", "enough",
    // pronouns
    "i", "me", "my", "we", "us", "our", "you", "your", "he", "him", "his", "she", "her", "it",
    "its", "they", "them", "their", "itself", "themselves", "which", "who", "whom", "whose",
    "what", "whatever", "whichever", "one", "ones",
    // prepositions
    "about", "above", "across", "after", "against", "along", "among", "around", "at",
    "before", "behind", "below", "beneath", "beside", "between", "beyond", "by", "down",
    "during", "except", "for", "from", "in", "inside", "into", "near", "of", "off", "on",
    "onto", "out", "outside", "over", "past", "per", "since", "through", "throughout", "to",
    "toward", "towards", "under", "until", "up", "upon", "via", "with", "within", "without",
    // conjunctions and subordinators
    "and", "or", "but", "nor", "so", "yet", "if", "then", "else", "when", "whenever", "while",
    "where", "wherever", "whether", "because", "although", "though", "unless", "once", "than",
    "as", "how", "why",
    // modals and auxiliaries
    "shall", "should", "will", "would", "can", "could", "may", "might", "must", "be", "is",
    "are", "was", "were", "been", "being", "am", "have", "has", "had", "having", "do", "does",
    "did", "done", "not",
    // frequent requirement verbs
    "provide", "provides", "allow", "allows", "enable", "enables", "support", "supports",
    "display", "displays", "displayed", "move", "moves", "compute", "computes", "send",
    "sends", "receive", "receives", "record", "records", "store", "stores", "update",
    "updates", "notify", "notifies", "generate", "generates", "given", "give", "ensure",
    "ensures", "use", "used", "uses", "activate", "activated", "assign", "assigned", "load",
    "loaded", "request", "requested", "select", "selected", "set", "show", "shows", "start",
    "stop", "check", "checks", "maintain", "maintains", "respond", "responds", "return",
    "returns", "transmit", "transmits", "calculate", "calculates", "issue", "issued",
    "detect", "detects", "detected", "prevent", "prevents", "reach", "reaches", "reached",
    "land", "lands", "turn", "turns", "corresponding", "able", "capable",
    // adverbs and common modifiers
    "also", "only", "just", "very", "too", "again", "always", "never", "immediately", "now",
    "here", "there", "not", "within", "automatically", "currently", "least", "new",
];

fn is_nominal(token: &str) -> bool {
    token.chars().any(char::is_alphabetic)
        && !is_punctuation(token)
        && !NON_NOMINAL.contains(&token)
}

/// Maximal runs of nominal tokens, deduplicated by text, as
/// `(start, length)` spans over `tokens`.
pub fn noun_phrase_spans(tokens: &[String]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut seen = HashSet::new();
    let mut i = 0;
    while i < tokens.len() {
        if !is_nominal(&tokens[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < tokens.len() && is_nominal(&tokens[i]) {
            i += 1;
        }
        if seen.insert(tokens[start..i].join(" ")) {
            spans.push((start, i - start));
        }
    }
    spans
}

/// Samples between two and all candidate noun phrases from `text`.
pub fn extract_keywords(text: &str, rng_seed: u64) -> Result<Vec<String>> {
    let tokens = tokenize(text);
    let spans = noun_phrase_spans(&tokens);
    if spans.len() < 2 {
        return Err(Error::InsufficientNounPhrases { found: spans.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = rng.gen_range(2..=spans.len());
    let mut picked = index::sample(&mut rng, spans.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| {
            let (start, len) = spans[i];
            tokens[start..start + len].join(" ")
        })
        .collect())
}

/// Marks every target position covered by any occurrence of any keyword.
pub fn mark_copy_labels(keywords: &[Vec<String>], target: &[String]) -> Vec<bool> {
    let mut labels = vec![false; target.len()];
    for phrase in keywords {
        if phrase.is_empty() || phrase.len() > target.len() {
            continue;
        }
        for (start, window) in target.windows(phrase.len()).enumerate() {
            if window == phrase.as_slice() {
                labels[start..start + phrase.len()].fill(true);
            }
        }
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequirementRecord {
    pub id: String,
    pub text: String,
    /// Keyword phrases as surface strings; empty when not yet extracted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "roles_serde")]
    pub roles: Option<SyntaxReference>,
}

mod roles_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        roles: &Option<SyntaxReference>,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        roles.as_ref().map(SyntaxReference::to_roles).serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Option<SyntaxReference>, D::Error> {
        let raw: Option<BTreeMap<String, RoleSpec>> = Option::deserialize(deserializer)?;
        raw.map(|r| SyntaxReference::from_roles(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl RequirementRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        RequirementRecord {
            id: id.into(),
            text: text.into(),
            keywords: Vec::new(),
            roles: None,
        }
    }

    pub fn with_keywords<S: Into<String>>(mut self, keywords: impl IntoIterator<Item = S>) -> Self {
        self.keywords = keywords.into_iter().map(Into::into).collect();
        self
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }

    pub fn keyword_tokens(&self) -> Vec<Vec<String>> {
        self.keywords.iter().map(|k| tokenize(k)).collect()
    }
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<RequirementRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RequirementRecord =
            serde_json::from_str(&line).map_err(|e| Error::InvalidRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_records(path: impl AsRef<Path>, records: &[RequirementRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        writeln!(out).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Token ↔ id bijection with the four special tokens at ids 0..=3.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds from raw texts (requirements and pseudo-sentences alike).
    /// Ids follow descending count, then lexicographic order.
    pub fn build<S: AsRef<str>>(texts: impl IntoIterator<Item = S>, min_count: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for token in tokenize(text.as_ref()) {
                *counts.entry(token).or_default() += 1;
            }
        }
        let specials = [PAD, UNK, CLS, SEP];
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !specials.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = specials
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect::<Vec<_>>();
        Vocabulary::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

/// One training example laid out for the seq2seq model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedPair {
    /// `[CLS] k1 [SEP] k2 [SEP] ... kn [SEP]`
    pub src_ids: Vec<TokenId>,
    /// Target tokens followed by `[SEP]`.
    pub tgt_ids: Vec<TokenId>,
    pub segments: Vec<u8>,
    pub copy_labels: Vec<bool>,
    pub positions: Vec<usize>,
}

impl EncodedPair {
    pub fn len(&self) -> usize {
        self.src_ids.len() + self.tgt_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Source ids followed by target ids.
    pub fn input_ids(&self) -> Vec<TokenId> {
        self.src_ids.iter().chain(&self.tgt_ids).copied().collect()
    }

    /// Builds a pair from already-encoded parts; used at decode time where
    /// the target is a growing prefix without labels.
    pub fn from_parts(src_ids: Vec<TokenId>, tgt_ids: Vec<TokenId>) -> Self {
        let n = src_ids.len() + tgt_ids.len();
        let segments = std::iter::repeat_n(0, src_ids.len())
            .chain(std::iter::repeat_n(1, tgt_ids.len()))
            .collect();
        EncodedPair {
            copy_labels: vec![false; tgt_ids.len()],
            src_ids,
            tgt_ids,
            segments,
            positions: (0..n).collect(),
        }
    }
}

pub fn encode_source(keywords: &[Vec<String>], vocab: &Vocabulary) -> Vec<TokenId> {
    let mut src = vec![CLS_ID];
    for phrase in keywords {
        src.extend(phrase.iter().map(|t| vocab.id(t)));
        src.push(SEP_ID);
    }
    src
}

pub fn encode_pair(
    record: &RequirementRecord,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<EncodedPair> {
    let keywords = record.keyword_tokens();
    let src_ids = encode_source(&keywords, vocab);
    // Room for at least the closing separator.
    if src_ids.len() + 1 > max_len {
        return Err(Error::SourceTooLong {
            len: src_ids.len(),
            max_len,
        });
    }
    let mut target = record.tokens();
    target.truncate(max_len - src_ids.len() - 1);
    let mut copy_labels = mark_copy_labels(&keywords, &target);
    copy_labels.push(false);
    let mut tgt_ids = vocab.encode(&target);
    tgt_ids.push(SEP_ID);
    let mut pair = EncodedPair::from_parts(src_ids, tgt_ids);
    pair.copy_labels = copy_labels;
    Ok(pair)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub folds: Vec<Vec<String>>,
}

/// Shuffles record ids with `rng_seed` and deals them round-robin.
pub fn make_folds(records: &[RequirementRecord], k: usize, rng_seed: u64) -> Result<FoldSplit> {
    if k < 2 || k > records.len() {
        return Err(Error::InvalidFolds {
            k,
            records: records.len(),
        });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut folds = vec![Vec::new(); k];
    for (i, r) in order.into_iter().enumerate() {
        folds[i % k].push(records[r].id.clone());
    }
    Ok(FoldSplit { k, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("The UAV shall land."), toks("the uav shall land ."));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("internal simulator"), toks("internal simulator"));
        assert_eq!(tokenize("(a,b);c!"), toks("( a , b ) ; c !"));
    }

    #[test]
    fn copy_labels() {
        let target = toks("when the internal simulator shall stop");
        assert_eq!(
            mark_copy_labels(&[toks("internal simulator")], &target),
            vec![false, false, true, true, false, false]
        );
        assert_eq!(mark_copy_labels(&[toks("zzz")], &target), vec![false; 6]);
        assert_eq!(
            mark_copy_labels(&[toks("a b")], &toks("a b c a b")),
            vec![true, true, false, true, true]
        );
    }

    #[test]
    fn keyword_extraction() {
        let text = "When given a landing command the internal simulator shall move the UAV to the ground altitude.";
        let spans = noun_phrase_spans(&tokenize(text));
        let tokens = tokenize(text);
        let phrases: Vec<String> = spans
            .iter()
            .map(|&(s, l)| tokens[s..s + l].join(" "))
            .collect();
        assert_eq!(
            phrases,
            vec!["landing command", "internal simulator", "uav", "ground altitude"]
        );
        let a = extract_keywords(text, 7).unwrap();
        assert_eq!(a, extract_keywords(text, 7).unwrap());
        assert!(a.len() >= 2 && a.len() <= 4);

        let two = "The pump shall notify the operator.";
        for seed in 0..20 {
            assert_eq!(extract_keywords(two, seed).unwrap(), vec!["pump", "operator"]);
        }
        assert!(matches!(
            extract_keywords("It shall stop.", 1),
            Err(Error::InsufficientNounPhrases { found: 0 })
        ));
    }

    #[test]
    fn vocabulary_order_and_min_count() {
        let v = Vocabulary::build(["a b", "a"], 1);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id(SEP), SEP_ID);
        let v = Vocabulary::build(["a b", "a"], 2);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK_ID);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn encode_layout() {
        let v = Vocabulary::build(["x y z w"], 1);
        let r = RequirementRecord::new("r1", "w").with_keywords(["x", "y z"]);
        let p = encode_pair(&r, &v, 32).unwrap();
        assert_eq!(
            v.decode(&p.src_ids),
            toks("[CLS] x [SEP] y z [SEP]")
        );
        assert_eq!(v.decode(&p.tgt_ids), toks("w [SEP]"));
        assert_eq!(p.segments, vec![0, 0, 0, 0, 0, 0, 1, 1]);
        assert_eq!(p.copy_labels.len(), p.tgt_ids.len());
        assert_eq!(p.positions, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn encode_unknown_and_truncation() {
        let v = Vocabulary::build(["alpha beta"], 1);
        let r = RequirementRecord::new("r", "alpha gamma beta alpha").with_keywords(["gamma", "beta"]);
        let p = encode_pair(&r, &v, 32).unwrap();
        assert_eq!(p.tgt_ids[1], UNK_ID);
        assert_eq!(p.copy_labels, vec![false, true, true, false, false]);

        // src has 5 ids; 7 leaves room for one target token plus the separator.
        let p = encode_pair(&r, &v, 7).unwrap();
        assert_eq!(v.decode(&p.tgt_ids), toks("alpha [SEP]"));
        assert!(matches!(
            encode_pair(&r, &v, 5),
            Err(Error::SourceTooLong { .. })
        ));
    }

    #[test]
    fn folds() {
        let records: Vec<_> = (0..10)
            .map(|i| RequirementRecord::new(format!("r{i}"), "x"))
            .collect();
        let f = make_folds(&records, 10, 3).unwrap();
        assert!(f.folds.iter().all(|f| f.len() == 1));
        let f = make_folds(&records, 5, 3).unwrap();
        assert!(f.folds.iter().all(|f| f.len() == 2));
        assert_eq!(f, make_folds(&records, 5, 3).unwrap());
        assert!(make_folds(&records, 11, 3).is_err());
        assert!(make_folds(&records, 1, 3).is_err());
    }

    #[test]
    fn record_json_schema() {
        let line = r#"{"id":"u1","text":"The UAV shall land.","keywords":["uav","ground"],"roles":{"agent":{"words":["uav"],"alpha":0.4},"action":{"words":["land"],"alpha":0.6}}}"#;
        let r: RequirementRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.keywords, vec!["uav", "ground"]);
        assert_eq!(r.roles.as_ref().unwrap().elements.len(), 2);
        let back: RequirementRecord =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);

        let bare: RequirementRecord = serde_json::from_str(r#"{"id":"u2","text":"x"}"#).unwrap();
        assert!(bare.keywords.is_empty() && bare.roles.is_none());

        let bad = r#"{"id":"u3","text":"x","roles":{"a":{"words":["x"],"alpha":0.3}}}"#;
        assert!(serde_json::from_str::<RequirementRecord>(bad).is_err());
    }
}
