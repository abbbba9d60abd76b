//! Keyword-constrained beam search.
//!
//! Each step mixes the language-model distribution with a copy
//! distribution that points at the next token of the keyword phrase in
//! progress (or the first tokens of the phrases still pending). The end
//! token stays masked while any phrase is unfinished, so every complete
//! hypothesis contains all keyword phrases contiguously. Finished
//! hypotheses are ranked by length-normalized log-probability plus a
//! weighted syntax-element agreement score.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{is_punctuation, tokenize, TokenId, Vocabulary, CLS_ID, PAD_ID, SEP, SEP_ID};
use crate::{Error, Result};

/// One semantic element as written in corpus and request files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub words: Vec<String>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntaxElement {
    pub name: String,
    pub words: BTreeSet<String>,
    pub alpha: f64,
}

/// Reference word sets per semantic element, with weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntaxReference {
    pub elements: Vec<SyntaxElement>,
}

const ALPHA_TOLERANCE: f64 = 1e-9;

impl SyntaxReference {
    pub fn new(elements: Vec<SyntaxElement>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidReference("no elements".into()));
        }
        for e in &elements {
            if e.words.is_empty() {
                return Err(Error::InvalidReference(format!("element {} has no words", e.name)));
            }
            if !(e.alpha > 0.0 && e.alpha <= 1.0) {
                return Err(Error::InvalidReference(format!(
                    "element {} weight {} outside (0, 1]",
                    e.name, e.alpha
                )));
            }
        }
        let total: f64 = elements.iter().map(|e| e.alpha).sum();
        if (total - 1.0).abs() > ALPHA_TOLERANCE {
            return Err(Error::InvalidReference(format!("weights sum to {total}, not 1")));
        }
        Ok(SyntaxReference { elements })
    }

    /// Builds from the `{name: {words, alpha}}` file form. Words are
    /// tokenized and lowercased; punctuation is dropped.
    pub fn from_roles(roles: &BTreeMap<String, RoleSpec>) -> Result<Self> {
        let elements = roles
            .iter()
            .map(|(name, spec)| SyntaxElement {
                name: name.clone(),
                words: spec
                    .words
                    .iter()
                    .flat_map(|w| tokenize(w))
                    .filter(|t| !is_punctuation(t))
                    .collect(),
                alpha: spec.alpha,
            })
            .collect();
        Self::new(elements)
    }

    pub fn to_roles(&self) -> BTreeMap<String, RoleSpec> {
        self.elements
            .iter()
            .map(|e| {
                (
                    e.name.clone(),
                    RoleSpec {
                        words: e.words.iter().cloned().collect(),
                        alpha: e.alpha,
                    },
                )
            })
            .collect()
    }
}

/// Per-element overlap ratios `|E_i ∩ candidate| / |E_i|`.
pub fn rs4re_breakdown<S: AsRef<str>>(candidate: &[S], reference: &SyntaxReference) -> Vec<(String, f64)> {
    let present: BTreeSet<String> = candidate.iter().map(|t| t.as_ref().to_lowercase()).collect();
    reference
        .elements
        .iter()
        .map(|e| {
            let hit = e.words.iter().filter(|w| present.contains(*w)).count();
            (e.name.clone(), hit as f64 / e.words.len() as f64)
        })
        .collect()
}

/// Weighted agreement of the candidate with each reference element, in
/// `[0, 1]`.
pub fn rs4re<S: AsRef<str>>(candidate: &[S], reference: &SyntaxReference) -> f64 {
    rs4re_breakdown(candidate, reference)
        .iter()
        .zip(&reference.elements)
        .map(|((_, ratio), e)| e.alpha * ratio)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConstraints {
    pub keyword_phrases: Vec<Vec<TokenId>>,
    pub beam_size: usize,
    /// Maximum number of generated tokens, including the end token.
    pub max_len: usize,
    pub lambda_rs: f64,
    pub length_norm: bool,
    /// Scales the copy head; 0 disables copy mixing.
    pub copy: bool,
}

impl GenerationConstraints {
    pub fn new(keyword_phrases: Vec<Vec<TokenId>>) -> Self {
        GenerationConstraints {
            keyword_phrases,
            beam_size: 5,
            max_len: 40,
            lambda_rs: 1.0,
            length_norm: true,
            copy: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Usage("beam size must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Usage("max_len must be at least 1".into()));
        }
        if self.keyword_phrases.len() < 2 {
            return Err(Error::Usage("at least two keywords are required".into()));
        }
        if self.keyword_phrases.iter().any(Vec::is_empty) {
            return Err(Error::Usage("empty keyword phrase".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhraseState {
    Pending,
    /// Number of tokens of the phrase already emitted.
    InProgress(usize),
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub phrase_state: Vec<PhraseState>,
    pub finished: bool,
}

impl BeamHypothesis {
    pub fn start(phrases: usize) -> Self {
        BeamHypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            phrase_state: vec![PhraseState::Pending; phrases],
            finished: false,
        }
    }

    pub fn in_progress(&self) -> Option<(usize, usize)> {
        self.phrase_state.iter().enumerate().find_map(|(i, s)| match s {
            PhraseState::InProgress(k) => Some((i, *k)),
            _ => None,
        })
    }

    pub fn all_done(&self) -> bool {
        self.phrase_state.iter().all(|s| *s == PhraseState::Done)
    }

    /// Fewest further tokens that can finish every phrase and close the
    /// sequence; zero once finished.
    pub fn tokens_needed(&self, phrases: &[Vec<TokenId>]) -> usize {
        if self.finished {
            return 0;
        }
        let open: usize = self
            .phrase_state
            .iter()
            .zip(phrases)
            .map(|(s, p)| match s {
                PhraseState::Pending => p.len(),
                PhraseState::InProgress(k) => p.len() - k,
                PhraseState::Done => 0,
            })
            .sum();
        open + 1
    }

    /// Appends `token` with probability `prob`, advancing phrase tracking.
    /// A phrase in progress that is not continued falls back to pending.
    pub fn extend(&self, token: TokenId, prob: f64, phrases: &[Vec<TokenId>]) -> Self {
        let mut states = self.phrase_state.clone();
        let mut consumed = false;
        if let Some((p, k)) = self.in_progress() {
            if phrases[p][k] == token {
                states[p] = if k + 1 == phrases[p].len() {
                    PhraseState::Done
                } else {
                    PhraseState::InProgress(k + 1)
                };
                consumed = true;
            } else {
                states[p] = PhraseState::Pending;
            }
        }
        if !consumed && token != SEP_ID {
            if let Some(p) = (0..phrases.len())
                .find(|&p| states[p] == PhraseState::Pending && phrases[p][0] == token)
            {
                states[p] = if phrases[p].len() == 1 {
                    PhraseState::Done
                } else {
                    PhraseState::InProgress(1)
                };
            }
        }
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        BeamHypothesis {
            tokens,
            log_prob: self.log_prob + prob.ln(),
            phrase_state: states,
            finished: token == SEP_ID,
        }
    }
}

/// `(1 - p_copy) * lm + p_copy * C` where `C` points at the forced next
/// token of the phrase in progress, else spreads evenly over the first
/// tokens of the pending phrases, else equals `lm`.
pub fn mix_distribution(
    lm_probs: &[f64],
    p_copy: f64,
    hyp: &BeamHypothesis,
    phrases: &[Vec<TokenId>],
) -> Vec<f64> {
    let mut copy = vec![0.0; lm_probs.len()];
    if let Some((p, k)) = hyp.in_progress() {
        copy[phrases[p][k]] = 1.0;
    } else {
        let pending: Vec<usize> = (0..phrases.len())
            .filter(|&p| hyp.phrase_state[p] == PhraseState::Pending)
            .collect();
        if pending.is_empty() {
            copy.copy_from_slice(lm_probs);
        } else {
            let share = 1.0 / pending.len() as f64;
            for p in pending {
                copy[phrases[p][0]] += share;
            }
        }
    }
    lm_probs
        .iter()
        .zip(&copy)
        .map(|(&l, &c)| (1.0 - p_copy) * l + p_copy * c)
        .collect()
}

/// The legal next-token distribution for `hyp`: the copy mixture with
/// padding and `[CLS]` removed, the end token withheld while phrases are
/// unfinished, and the end token forced in the last slot. While the
/// remaining phrases still fit in `max_len`, tokens after which they no
/// longer fit are removed too. Renormalized; all zeros when nothing is
/// legal.
pub fn step_distribution(
    lm_probs: &[f64],
    p_copy: f64,
    hyp: &BeamHypothesis,
    constraints: &GenerationConstraints,
) -> Vec<f64> {
    let mut dist = vec![0.0; lm_probs.len()];
    if hyp.tokens.len() + 1 >= constraints.max_len {
        dist[SEP_ID] = 1.0;
        return dist;
    }
    let p_copy = if constraints.copy { p_copy.clamp(0.0, 1.0) } else { 0.0 };
    dist = mix_distribution(lm_probs, p_copy, hyp, &constraints.keyword_phrases);
    dist[PAD_ID] = 0.0;
    dist[CLS_ID] = 0.0;
    if !hyp.all_done() {
        dist[SEP_ID] = 0.0;
    }
    let phrases = &constraints.keyword_phrases;
    if hyp.tokens_needed(phrases) <= constraints.max_len - hyp.tokens.len() {
        let room = constraints.max_len - hyp.tokens.len() - 1;
        for (token, p) in dist.iter_mut().enumerate() {
            if *p > 0.0 && hyp.extend(token, 1.0, phrases).tokens_needed(phrases) > room {
                *p = 0.0;
            }
        }
    }
    let total: f64 = dist.iter().sum();
    if total > 0.0 {
        dist.iter_mut().for_each(|p| *p /= total);
    } else {
        dist.iter_mut().for_each(|p| *p = 0.0);
    }
    dist
}

/// Supplies next-token distributions for a fixed source.
pub trait NextTokenModel {
    fn vocab_size(&self) -> usize;

    /// LM distribution over the vocabulary and copy probability after the
    /// generated `prefix`.
    fn next(&self, prefix: &[TokenId]) -> Result<(Vec<f64>, f64)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedHypothesis {
    /// Generated ids, ending with `[SEP]`.
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub log_prob: f64,
    pub rs4re: Option<f64>,
    /// All keyword phrases were emitted.
    pub complete: bool,
}

/// Final score of a finished token sequence.
pub fn hypothesis_score(
    tokens: &[TokenId],
    log_prob: f64,
    constraints: &GenerationConstraints,
    reference: Option<&SyntaxReference>,
    vocab: &Vocabulary,
) -> (f64, Option<f64>) {
    let base = if constraints.length_norm && !tokens.is_empty() {
        log_prob / tokens.len() as f64
    } else {
        log_prob
    };
    match reference {
        Some(r) => {
            let value = rs4re(&vocab.decode(tokens), r);
            (base + constraints.lambda_rs * value, Some(value))
        }
        None => (base, None),
    }
}

/// Complete hypotheses first, then higher score, then token order.
pub fn rank_order(a: &RankedHypothesis, b: &RankedHypothesis) -> Ordering {
    b.complete
        .cmp(&a.complete)
        .then_with(|| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

pub fn beam_search(
    model: &impl NextTokenModel,
    vocab: &Vocabulary,
    constraints: &GenerationConstraints,
    reference: Option<&SyntaxReference>,
) -> Result<Vec<RankedHypothesis>> {
    constraints.validate()?;
    let phrases = &constraints.keyword_phrases;
    let mut active = vec![BeamHypothesis::start(phrases.len())];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    let mut steps = 0;

    while !active.is_empty() {
        steps += 1;
        let mut candidates = Vec::new();
        for hyp in &active {
            let (lm, p_copy) = model.next(&hyp.tokens)?;
            let dist = step_distribution(&lm, p_copy, hyp, constraints);
            for (token, &prob) in dist.iter().enumerate() {
                if prob > 0.0 {
                    candidates.push(hyp.extend(token, prob, phrases));
                }
            }
        }
        let (done, open): (Vec<_>, Vec<_>) = candidates.into_iter().partition(|h| h.finished);
        finished.extend(done);
        let mut open = open;
        open.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        open.truncate(constraints.beam_size);
        active = open;
    }

    if finished.is_empty() {
        return Err(Error::BeamCollapse { steps, finished: 0 });
    }
    let mut ranked: Vec<RankedHypothesis> = finished
        .into_iter()
        .map(|h| {
            let (score, rs) = hypothesis_score(&h.tokens, h.log_prob, constraints, reference, vocab);
            RankedHypothesis {
                complete: h.all_done(),
                tokens: h.tokens,
                score,
                log_prob: h.log_prob,
                rs4re: rs,
            }
        })
        .collect();
    ranked.sort_by(rank_order);
    Ok(ranked)
}

/// True when `phrase` occurs as a contiguous run of `tokens`.
pub fn contains_phrase<T: PartialEq>(tokens: &[T], phrase: &[T]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

/// Joins tokens into a sentence: no space before closing punctuation, a
/// trailing `[SEP]` dropped, first character capitalized.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    if tokens.last() == Some(&SEP) {
        tokens.pop();
    }
    let mut out = String::new();
    let mut after_open = false;
    for (i, t) in tokens.iter().enumerate() {
        let closing = is_punctuation(t) && *t != "(";
        if i > 0 && !closing && !after_open {
            out.push(' ');
        }
        out.push_str(t);
        after_open = *t == "(";
    }
    let mut chars = out.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Generation request, as accepted on the command line or as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<BTreeMap<String, RoleSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_rs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rs4re: Option<f64>,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub score: f64,
    pub rs4re: Option<f64>,
    pub complete: bool,
    pub candidates: Vec<Candidate>,
    /// Overlap ratio per semantic element, when roles were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_overlap: Option<BTreeMap<String, f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn reference(elements: &[(&str, &str, f64)]) -> SyntaxReference {
        SyntaxReference::new(
            elements
                .iter()
                .map(|(n, w, a)| SyntaxElement {
                    name: n.to_string(),
                    words: w.split_whitespace().map(String::from).collect(),
                    alpha: *a,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mixture_identity_and_forced_continuation() {
        let phrases = vec![vec![4, 5], vec![6]];
        let lm = vec![0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2];
        let hyp = BeamHypothesis::start(2);
        assert_eq!(mix_distribution(&lm, 0.0, &hyp, &phrases), lm);

        let hyp = hyp.extend(4, 0.5, &phrases);
        assert_eq!(hyp.phrase_state[0], PhraseState::InProgress(1));
        let mixed = mix_distribution(&lm, 1.0, &hyp, &phrases);
        assert_eq!(mixed[5], 1.0);
        assert!((mixed.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_over_pending_first_tokens() {
        // vocabulary of 4 with x = 2 and y = 3 starting two pending phrases
        let phrases = vec![vec![2], vec![3]];
        let lm = vec![0.25; 4];
        let mixed = mix_distribution(&lm, 0.5, &BeamHypothesis::start(2), &phrases);
        assert_eq!(mixed, vec![0.125, 0.125, 0.375, 0.375]);
    }

    #[test]
    fn mixture_without_pending_phrases_is_lm() {
        let phrases = vec![vec![4], vec![5]];
        let hyp = BeamHypothesis::start(2)
            .extend(4, 1.0, &phrases)
            .extend(5, 1.0, &phrases);
        assert!(hyp.all_done());
        let lm = vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.1];
        let mixed = mix_distribution(&lm, 0.7, &hyp, &phrases);
        for (a, b) in mixed.iter().zip(&lm) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn broken_phrase_reverts_to_pending() {
        let phrases = vec![vec![4, 5], vec![6, 7]];
        let h = BeamHypothesis::start(2).extend(4, 1.0, &phrases).extend(6, 1.0, &phrases);
        assert_eq!(h.phrase_state, vec![PhraseState::Pending, PhraseState::InProgress(1)]);
        let h = h.extend(7, 1.0, &phrases);
        assert_eq!(h.phrase_state[1], PhraseState::Done);
        assert!(h.in_progress().is_none());
    }

    #[test]
    fn rs4re_cases() {
        let r = reference(&[("agent", "system shall", 0.5), ("action", "display altitude", 0.5)]);
        assert_eq!(rs4re(&toks("the system shall display speed"), &r), 0.75);
        assert_eq!(rs4re::<String>(&[], &r), 0.0);
        assert_eq!(rs4re(&toks("system shall display altitude"), &r), 1.0);
        assert_eq!(rs4re(&toks("The SYSTEM Shall"), &r), 0.5);
    }

    #[test]
    fn reference_validation() {
        let e = |a: f64| SyntaxElement {
            name: "x".into(),
            words: ["w".to_string()].into(),
            alpha: a,
        };
        assert!(SyntaxReference::new(vec![e(0.5)]).is_err());
        assert!(SyntaxReference::new(vec![]).is_err());
        assert!(SyntaxReference::new(vec![e(0.5), e(0.5)]).is_ok());
        let mut empty = e(1.0);
        empty.words.clear();
        assert!(SyntaxReference::new(vec![empty]).is_err());
    }

    #[test]
    fn step_distribution_masks_end_until_done() {
        let phrases = vec![vec![4], vec![5]];
        let c = GenerationConstraints {
            max_len: 6,
            ..GenerationConstraints::new(phrases.clone())
        };
        let lm = vec![0.1, 0.1, 0.1, 0.4, 0.1, 0.1, 0.1];
        let d = step_distribution(&lm, 0.3, &BeamHypothesis::start(2), &c);
        assert_eq!(d[SEP_ID], 0.0);
        assert_eq!(d[PAD_ID], 0.0);
        assert_eq!(d[CLS_ID], 0.0);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let done = BeamHypothesis::start(2).extend(4, 1.0, &phrases).extend(5, 1.0, &phrases);
        assert!(step_distribution(&lm, 0.3, &done, &c)[SEP_ID] > 0.0);

        let mut long = BeamHypothesis::start(2);
        for _ in 0..5 {
            long = long.extend(6, 1.0, &phrases);
        }
        let d = step_distribution(&lm, 0.3, &long, &c);
        assert_eq!(d[SEP_ID], 1.0);
    }

    #[test]
    fn detokenize_rules() {
        assert_eq!(detokenize(&toks("the uav shall land . [SEP]")), "The uav shall land.");
        assert_eq!(detokenize::<String>(&[]), "");
        assert_eq!(detokenize(&toks("a , b")), "A, b");
        assert_eq!(detokenize(&toks("see ( a ) now")), "See (a) now");
    }

    #[test]
    fn ranking_prefers_complete_then_score() {
        let h = |complete, score: f64, tokens: Vec<usize>| RankedHypothesis {
            tokens,
            score,
            log_prob: score,
            rs4re: None,
            complete,
        };
        let mut v = [h(false, 0.0, vec![1]), h(true, -2.0, vec![2]), h(true, -1.0, vec![3])];
        v.sort_by(rank_order);
        assert_eq!(v.iter().map(|r| r.tokens[0]).collect::<Vec<_>>(), vec![3, 2, 1]);
    }

    struct Stubborn;

    impl NextTokenModel for Stubborn {
        fn vocab_size(&self) -> usize {
            8
        }

        fn next(&self, _: &[TokenId]) -> Result<(Vec<f64>, f64)> {
            let mut lm = vec![1e-9; 8];
            lm[7] = 1.0;
            Ok((lm, 0.0))
        }
    }

    #[test]
    fn phrases_are_placed_before_the_budget_runs_out() {
        let vocab = Vocabulary::build(["a b c d"], 1);
        let phrases = vec![vec![4, 5], vec![6]];
        let c = GenerationConstraints {
            beam_size: 2,
            max_len: 6,
            copy: false,
            ..GenerationConstraints::new(phrases.clone())
        };
        let hyp = BeamHypothesis::start(2).extend(7, 1.0, &phrases).extend(7, 1.0, &phrases);
        assert_eq!(hyp.tokens_needed(&phrases), 4);
        let dist = step_distribution(&[0.125; 8], 0.0, &hyp, &c);
        assert_eq!(dist.iter().filter(|&&p| p > 0.0).count(), 2);
        assert!(dist[4] > 0.0 && dist[6] > 0.0);

        let ranked = beam_search(&Stubborn, &vocab, &c, None).unwrap();
        assert!(ranked.iter().all(|h| h.complete));
        assert!(contains_phrase(&ranked[0].tokens, &[4, 5]));
        assert_eq!(ranked[0].tokens.len(), 6);
    }
}
