//! Experiment orchestration behind the `reqgen` commands.
//!
//! All commands take an [`ExperimentConfig`]. Prepared data lives in the
//! output directory as `prepared.jsonl`, `vocab.json` and `coverage.json`;
//! training writes `checkpoint.json` there unless another path is given.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    encode_pair, encode_source, extract_keywords, load_records, make_folds, mark_copy_labels,
    tokenize, RequirementRecord, TokenId, Vocabulary, SEP_ID, UNK_ID,
};
use crate::decoder::{
    beam_search, detokenize, rs4re_breakdown, Candidate, GenerationConstraints, GenerationResponse,
    NextTokenModel, SyntaxReference,
};
use crate::metrics::{evaluate_corpus, format_table, MetricsReport};
use crate::model::{
    knowledge_token_ids, train_with, Checkpoint, KnowledgeEncoding, LayerKnowledge, Model,
    ModelConfig, TrainingExample, TrainingLog,
};
use crate::ontology::{build_injection_knowledge, triples_to_pseudo_sentences, InjectionPlan, OntologyGraph};
use crate::{Error, Result};

pub const PREPARED_FILE: &str = "prepared.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const COVERAGE_FILE: &str = "coverage.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// `(layer, hop limit)` pairs, e.g. `[[1,5],[2,2],[4,1]]`.
    pub layer_hops: Vec<(usize, usize)>,
    pub freq_threshold: u64,
    pub token_cap: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            layer_hops: vec![(1, 5), (2, 2), (4, 1)],
            freq_threshold: 10,
            token_cap: 512,
        }
    }
}

impl PlanConfig {
    pub fn plan(&self) -> InjectionPlan {
        InjectionPlan::from_layer_hops(&self.layer_hops, self.freq_threshold, self.token_cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Generated tokens including the end token.
    pub max_len: usize,
    pub lambda_rs: f64,
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            max_len: 40,
            lambda_rs: 1.0,
            length_norm: true,
        }
    }
}

/// Model components that can be switched off for ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub injection: bool,
    pub copy: bool,
    pub syntax_decoding: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            injection: true,
            copy: true,
            syntax_decoding: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub layer_plans: Vec<Vec<(usize, usize)>>,
    pub freq_thresholds: Vec<u64>,
    pub toggles: Vec<Toggles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub ontology: PathBuf,
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `out_dir/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    pub plan: PlanConfig,
    pub decode: DecodeConfig,
    pub toggles: Toggles,
    pub k_folds: usize,
    /// Seeds keyword extraction, fold assignment and training.
    pub rng_seed: u64,
    pub min_count: usize,
    pub ablation: AblationGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ontology: PathBuf::from("ontology.jsonl"),
            corpus: PathBuf::from("corpus.jsonl"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            model: ModelConfig::default(),
            plan: PlanConfig::default(),
            decode: DecodeConfig::default(),
            toggles: Toggles::default(),
            k_folds: 10,
            rng_seed: 0,
            min_count: 1,
            ablation: AblationGrid::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative paths are taken relative to the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.ontology, &mut config.corpus, &mut config.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(c) = config.checkpoint.as_mut() {
            if c.is_relative() {
                *c = base.join(&*c);
            }
        }
        Ok(config)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join(CHECKPOINT_FILE))
    }

    /// The plan actually used: empty when injection is switched off.
    pub fn effective_plan(&self) -> InjectionPlan {
        if self.toggles.injection {
            self.plan.plan()
        } else {
            InjectionPlan::none()
        }
    }

    /// Model config with vocabulary size, injection layers, copy weight and
    /// seed filled in from the experiment.
    pub fn effective_model(&self, vocab_size: usize) -> ModelConfig {
        let mut m = self.model.clone();
        m.vocab_size = vocab_size;
        m.injection_layers = self.effective_plan().layers();
        if !self.toggles.copy {
            m.copy_loss_weight = 0.0;
        }
        m.rng_seed = self.rng_seed;
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_plan().validate(self.model.depth)?;
        if self.decode.beam_size == 0 || self.decode.max_len == 0 {
            return Err(Error::InvalidConfig("beam size and max_len must be positive".into()));
        }
        Ok(())
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} not found: {}", path.display())))
    }
}

/// A prepared record with its target tokens and copy labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedRecord {
    #[serde(flatten)]
    pub record: RequirementRecord,
    pub tokens: Vec<String>,
    pub copy_labels: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub records: usize,
    pub prepared: usize,
    pub skipped: usize,
    pub keywords: usize,
    pub keywords_matched: usize,
    /// Fraction of keywords found in the ontology.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub records: Vec<RequirementRecord>,
    pub vocabulary: Vocabulary,
    pub coverage: CoverageReport,
}

/// Extracts missing keywords, builds the vocabulary and measures keyword
/// coverage, without touching the file system beyond reading inputs.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData> {
    require_file(&config.corpus, "corpus")?;
    require_file(&config.ontology, "ontology")?;
    let graph = OntologyGraph::load(&config.ontology)?;
    let raw = load_records(&config.corpus)?;
    let mut records = Vec::with_capacity(raw.len());
    let mut skipped = 0;
    for (i, mut record) in raw.iter().cloned().enumerate() {
        if record.keywords.is_empty() {
            match extract_keywords(&record.text, config.rng_seed.wrapping_add(i as u64)) {
                Ok(k) => record.keywords = k,
                Err(e) => {
                    log::warn!("record {}: {e}", record.id);
                    skipped += 1;
                    continue;
                }
            }
        }
        records.push(record);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} of {} records", raw.len());
    }

    let keywords: Vec<&String> = records.iter().flat_map(|r| &r.keywords).collect();
    let matched = keywords
        .iter()
        .filter(|k| graph.match_keyword(k).is_some())
        .count();
    let coverage = CoverageReport {
        records: raw.len(),
        prepared: records.len(),
        skipped,
        keywords: keywords.len(),
        keywords_matched: matched,
        coverage: if keywords.is_empty() {
            0.0
        } else {
            matched as f64 / keywords.len() as f64
        },
    };

    let knowledge_text: Vec<String> = triples_to_pseudo_sentences(graph.triples(), &BTreeMap::new())
        .into_iter()
        .map(|s| s.text)
        .collect();
    let texts = records
        .iter()
        .map(|r| r.text.clone())
        .chain(records.iter().flat_map(|r| r.keywords.clone()))
        .chain(knowledge_text);
    let vocabulary = Vocabulary::build(texts, config.min_count.max(1));
    Ok(PreparedData {
        records,
        vocabulary,
        coverage,
    })
}

pub fn cmd_prepare(config: &ExperimentConfig) -> Result<CoverageReport> {
    let data = prepare(config)?;
    ensure_dir(&config.out_dir)?;
    let prepared: Vec<PreparedRecord> = data
        .records
        .iter()
        .map(|r| {
            let tokens = r.tokens();
            PreparedRecord {
                copy_labels: mark_copy_labels(&r.keyword_tokens(), &tokens),
                tokens,
                record: r.clone(),
            }
        })
        .collect();
    let mut lines = String::new();
    for p in &prepared {
        lines.push_str(&serde_json::to_string(p)?);
        lines.push('\n');
    }
    write_text(&config.out_dir.join(PREPARED_FILE), &lines)?;
    write_json(&config.out_dir.join(VOCAB_FILE), &data.vocabulary)?;
    write_json(&config.out_dir.join(COVERAGE_FILE), &data.coverage)?;
    Ok(data.coverage)
}

/// Loads what [`cmd_prepare`] wrote. Missing files are a usage error.
pub fn load_prepared(config: &ExperimentConfig) -> Result<(Vec<RequirementRecord>, Vocabulary)> {
    let prepared = config.out_dir.join(PREPARED_FILE);
    let vocab = config.out_dir.join(VOCAB_FILE);
    require_file(&prepared, "prepared dataset (run `prepare` first)")?;
    require_file(&vocab, "vocabulary (run `prepare` first)")?;
    let records = load_records(&prepared)?;
    let text = fs::read_to_string(&vocab).map_err(|e| Error::io(&vocab, e))?;
    Ok((records, serde_json::from_str(&text)?))
}

/// Knowledge token ids per injection layer for one keyword set.
pub fn layer_knowledge<S: AsRef<str>>(
    graph: &OntologyGraph,
    keywords: &[S],
    plan: &InjectionPlan,
    vocab: &Vocabulary,
) -> Result<LayerKnowledge> {
    Ok(build_injection_knowledge(graph, keywords, plan)?
        .iter()
        .map(|(&l, s)| (l, knowledge_token_ids(s, vocab, plan.token_cap_per_layer)))
        .collect())
}

pub fn training_examples(
    records: &[RequirementRecord],
    vocab: &Vocabulary,
    graph: &OntologyGraph,
    plan: &InjectionPlan,
    max_len: usize,
) -> Result<Vec<TrainingExample>> {
    records
        .iter()
        .map(|r| {
            Ok(TrainingExample {
                pair: encode_pair(r, vocab, max_len)?,
                knowledge: layer_knowledge(graph, &r.keywords, plan, vocab)?,
            })
        })
        .collect()
}

fn train_model(
    config: &ExperimentConfig,
    records: &[RequirementRecord],
    vocab: &Vocabulary,
    graph: &OntologyGraph,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(Model, TrainingLog)> {
    let model_config = config.effective_model(vocab.len());
    let examples = training_examples(
        records,
        vocab,
        graph,
        &config.effective_plan(),
        model_config.max_len,
    )?;
    train_with(&examples, &model_config, on_epoch)
}

/// Trains on the prepared set and writes the checkpoint and loss log.
/// `on_epoch` receives each epoch's mean loss.
pub fn cmd_train(
    config: &ExperimentConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(Checkpoint, TrainingLog)> {
    config.validate()?;
    let (records, vocab) = load_prepared(config)?;
    let graph = OntologyGraph::load(&config.ontology)?;
    let (model, log) = train_model(config, &records, &vocab, &graph, on_epoch)?;
    let checkpoint = Checkpoint::new(model, vocab);
    let path = config.checkpoint_path();
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    checkpoint.save(&path)?;
    ensure_dir(&config.out_dir)?;
    write_json(&config.out_dir.join("training_log.json"), &log)?;
    Ok((checkpoint, log))
}

/// Adapts a trained model with a fixed source and knowledge to the
/// decoder's step interface.
pub struct ModelScorer<'a> {
    model: &'a Model,
    src_ids: Vec<TokenId>,
    encodings: BTreeMap<usize, KnowledgeEncoding>,
    copy: bool,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model, src_ids: Vec<TokenId>, knowledge: &LayerKnowledge, copy: bool) -> Self {
        ModelScorer {
            encodings: model.encode_knowledge(knowledge),
            model,
            src_ids,
            copy,
        }
    }
}

impl NextTokenModel for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn next(&self, prefix: &[TokenId]) -> Result<(Vec<f64>, f64)> {
        let pair = crate::corpus::EncodedPair::from_parts(self.src_ids.clone(), prefix.to_vec());
        let (probs, p_copy) = self.model.next_token_distribution(&pair, &self.encodings)?;
        Ok((probs.to_vec(), if self.copy { p_copy } else { 0.0 }))
    }
}

/// A decoded requirement together with its surface tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub response: GenerationResponse,
    /// Tokens of the top candidate without the end token.
    pub tokens: Vec<String>,
}

/// Everything needed to turn keywords into a requirement.
pub struct Generator<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocabulary,
    pub graph: &'a OntologyGraph,
    pub plan: InjectionPlan,
    pub decode: DecodeConfig,
    pub copy: bool,
    pub syntax_decoding: bool,
}

/// Decoded ids to strings, restoring keyword words that fell outside the
/// vocabulary inside each occurrence of a keyword phrase.
fn surface_tokens(ids: &[TokenId], vocab: &Vocabulary, phrases: &[(Vec<TokenId>, Vec<String>)]) -> Vec<String> {
    let mut out = vocab.decode(ids);
    for (phrase_ids, words) in phrases {
        if !phrase_ids.contains(&UNK_ID) || phrase_ids.len() > ids.len() {
            continue;
        }
        for start in 0..=ids.len() - phrase_ids.len() {
            if ids[start..start + phrase_ids.len()] == phrase_ids[..] {
                for (k, &id) in phrase_ids.iter().enumerate() {
                    if id == UNK_ID {
                        out[start + k] = words[k].clone();
                    }
                }
            }
        }
    }
    out
}

impl<'a> Generator<'a> {
    pub fn new(config: &ExperimentConfig, checkpoint: &'a Checkpoint, graph: &'a OntologyGraph) -> Self {
        let plan = if checkpoint.model.config.injection_layers.is_empty() {
            InjectionPlan::none()
        } else {
            config.effective_plan()
        };
        Generator {
            model: &checkpoint.model,
            vocab: &checkpoint.vocabulary,
            graph,
            plan,
            decode: config.decode.clone(),
            copy: config.toggles.copy,
            syntax_decoding: config.toggles.syntax_decoding,
        }
    }

    pub fn generate<S: AsRef<str>>(
        &self,
        keywords: &[S],
        roles: Option<&SyntaxReference>,
    ) -> Result<Generated> {
        let phrases: Vec<Vec<String>> = keywords
            .iter()
            .map(|k| tokenize(k.as_ref()))
            .filter(|p| !p.is_empty())
            .collect();
        if phrases.len() < 2 {
            return Err(Error::Usage("at least two keywords are required".into()));
        }
        let src_ids = encode_source(&phrases, self.vocab);
        let room = (self.model.config.max_len + 1).saturating_sub(src_ids.len());
        if room < 2 {
            return Err(Error::SourceTooLong {
                len: src_ids.len(),
                max_len: self.model.config.max_len,
            });
        }
        let phrase_ids: Vec<Vec<TokenId>> = phrases.iter().map(|p| self.vocab.encode(p)).collect();
        let constraints = GenerationConstraints {
            keyword_phrases: phrase_ids.clone(),
            beam_size: self.decode.beam_size,
            max_len: self.decode.max_len.min(room),
            lambda_rs: self.decode.lambda_rs,
            length_norm: self.decode.length_norm,
            copy: self.copy,
        };
        let knowledge = layer_knowledge(self.graph, keywords, &self.plan, self.vocab)?;
        let scorer = ModelScorer::new(self.model, src_ids, &knowledge, self.copy);
        let reference = if self.syntax_decoding { roles } else { None };
        let ranked = beam_search(&scorer, self.vocab, &constraints, reference)?;

        let surface: Vec<(Vec<TokenId>, Vec<String>)> = phrase_ids.into_iter().zip(phrases).collect();
        let words = |ids: &[TokenId]| {
            let mut t = surface_tokens(ids, self.vocab, &surface);
            if ids.last() == Some(&SEP_ID) {
                t.pop();
            }
            t
        };
        let candidates: Vec<Candidate> = ranked
            .iter()
            .take(self.decode.beam_size)
            .map(|h| Candidate {
                text: detokenize(&words(&h.tokens)),
                score: h.score,
                rs4re: h.rs4re,
                complete: h.complete,
            })
            .collect();
        let best = &ranked[0];
        let tokens = words(&best.tokens);
        let rs4re = roles.map(|r| crate::decoder::rs4re(&tokens, r));
        let element_overlap =
            roles.map(|r| rs4re_breakdown(&tokens, r).into_iter().collect::<BTreeMap<_, _>>());
        Ok(Generated {
            response: GenerationResponse {
                text: detokenize(&tokens),
                score: best.score,
                rs4re,
                complete: best.complete,
                candidates,
                element_overlap,
            },
            tokens,
        })
    }
}

pub fn load_checkpoint(config: &ExperimentConfig) -> Result<Checkpoint> {
    let path = config.checkpoint_path();
    require_file(&path, "checkpoint (run `train` first)")?;
    Checkpoint::load(&path)
}

pub fn cmd_generate<S: AsRef<str>>(
    config: &ExperimentConfig,
    keywords: &[S],
    roles: Option<&SyntaxReference>,
) -> Result<GenerationResponse> {
    if keywords.iter().filter(|k| !k.as_ref().trim().is_empty()).count() < 2 {
        return Err(Error::Usage("at least two keywords are required".into()));
    }
    let checkpoint = load_checkpoint(config)?;
    require_file(&config.ontology, "ontology")?;
    let graph = OntologyGraph::load(&config.ontology)?;
    let generator = Generator::new(config, &checkpoint, &graph);
    Ok(generator.generate(keywords, roles)?.response)
}

/// Generates for every record and scores against its text and roles.
pub fn evaluate_records(generator: &Generator<'_>, records: &[RequirementRecord]) -> Result<MetricsReport> {
    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        let generated = generator.generate(&r.keywords, r.roles.as_ref())?;
        pairs.push((generated.tokens, r));
    }
    Ok(evaluate_corpus(&pairs))
}

/// Scores the trained checkpoint on the prepared set.
pub fn cmd_evaluate(config: &ExperimentConfig) -> Result<MetricsReport> {
    let (records, _) = load_prepared(config)?;
    let checkpoint = load_checkpoint(config)?;
    let graph = OntologyGraph::load(&config.ontology)?;
    let generator = Generator::new(config, &checkpoint, &graph);
    let report = evaluate_records(&generator, &records)?;
    ensure_dir(&config.out_dir)?;
    write_json(&config.out_dir.join("evaluation.json"), &report)?;
    write_text(
        &config.out_dir.join("evaluation.txt"),
        &format_table(&[("all".to_string(), report.clone())]),
    )?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub k: usize,
    pub folds: Vec<FoldOutcome>,
    /// Mean over folds that completed.
    pub mean: Option<MetricsReport>,
}

impl CrossvalReport {
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, MetricsReport)> = self
            .folds
            .iter()
            .filter_map(|f| f.report.clone().map(|r| (format!("fold {}", f.fold + 1), r)))
            .collect();
        if let Some(m) = &self.mean {
            rows.push(("mean".to_string(), m.clone()));
        }
        let mut out = format_table(&rows);
        for f in &self.folds {
            if let Some(e) = &f.error {
                let _ = writeln!(out, "fold {} failed: {e}", f.fold + 1);
            }
        }
        out
    }
}

fn run_fold(
    config: &ExperimentConfig,
    fold: usize,
    train: &[RequirementRecord],
    test: &[RequirementRecord],
    vocab: &Vocabulary,
    graph: &OntologyGraph,
) -> Result<MetricsReport> {
    let mut fold_config = config.clone();
    fold_config.rng_seed = config.rng_seed.wrapping_add(fold as u64);
    let (model, _) = train_model(&fold_config, train, vocab, graph, |_, _| {})?;
    let checkpoint = Checkpoint::new(model, vocab.clone());
    let generator = Generator::new(&fold_config, &checkpoint, graph);
    let mut report = evaluate_records(&generator, test)?;
    report.per_example.clear();
    Ok(report)
}

fn crossval_with(
    config: &ExperimentConfig,
    records: &[RequirementRecord],
    vocab: &Vocabulary,
    graph: &OntologyGraph,
) -> Result<CrossvalReport> {
    config.validate()?;
    let split = make_folds(records, config.k_folds, config.rng_seed)?;
    let mut folds = Vec::with_capacity(split.k);
    for (i, ids) in split.folds.iter().enumerate() {
        let (test, train): (Vec<RequirementRecord>, Vec<RequirementRecord>) =
            records.iter().cloned().partition(|r| ids.contains(&r.id));
        let outcome = run_fold(config, i, &train, &test, vocab, graph);
        if let Err(e) = &outcome {
            log::warn!("fold {}: {e}", i + 1);
        }
        folds.push(FoldOutcome {
            fold: i,
            test_ids: ids.clone(),
            error: outcome.as_ref().err().map(ToString::to_string),
            report: outcome.ok(),
        });
    }
    let done: Vec<MetricsReport> = folds.iter().filter_map(|f| f.report.clone()).collect();
    Ok(CrossvalReport {
        k: split.k,
        mean: (!done.is_empty()).then(|| MetricsReport::mean_of(&done)),
        folds,
    })
}

pub fn cmd_crossval(config: &ExperimentConfig) -> Result<CrossvalReport> {
    let (records, vocab) = load_prepared(config)?;
    let graph = OntologyGraph::load(&config.ontology)?;
    let report = crossval_with(config, &records, &vocab, &graph)?;
    ensure_dir(&config.out_dir)?;
    write_json(&config.out_dir.join("crossval.json"), &report)?;
    write_text(&config.out_dir.join("crossval.txt"), &report.table())?;
    Ok(report)
}

/// `"no"` for a zero threshold, else the number.
pub fn threshold_label(threshold: u64) -> String {
    if threshold == 0 {
        "no".to_string()
    } else {
        threshold.to_string()
    }
}

/// Component-row label such as `Layer 1,2,4+ 10 Fre.+Copy`.
pub fn settings_label(layers: &[usize], threshold: u64, toggles: Toggles) -> String {
    let mut label = if toggles.injection && !layers.is_empty() {
        let list: Vec<String> = layers.iter().map(ToString::to_string).collect();
        let mut l = format!("Layer {}", list.join(","));
        if threshold > 0 {
            let _ = write!(l, "+ {threshold} Fre.");
        }
        l
    } else {
        "No injection".to_string()
    };
    if toggles.copy {
        label.push_str("+Copy");
    }
    if toggles.syntax_decoding {
        label.push_str("+ Syntax cons.");
    }
    if toggles.injection && toggles.copy && toggles.syntax_decoding {
        label.push_str(" (ReqGen)");
    }
    label
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub layers: String,
    pub threshold: String,
    pub setting: String,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn table(&self) -> String {
        let width = |f: fn(&AblationRow) -> &str, head: &str| {
            self.rows
                .iter()
                .map(|r| f(r).chars().count())
                .chain([head.len()])
                .max()
                .unwrap_or(0)
        };
        let wl = width(|r| &r.layers, "Layers");
        let wt = width(|r| &r.threshold, "Fre.");
        let rows: Vec<(String, MetricsReport)> = self
            .rows
            .iter()
            .map(|r| {
                (
                    format!("{:<wl$} | {:<wt$} | {}", r.layers, r.threshold, r.setting),
                    r.report.clone().unwrap_or_default(),
                )
            })
            .collect();
        let mut out = format_table(&rows);
        for r in &self.rows {
            if let Some(e) = &r.error {
                let _ = writeln!(out, "{} | {} | {} failed: {e}", r.layers, r.threshold, r.setting);
            }
        }
        out
    }
}

fn ablate_with(
    config: &ExperimentConfig,
    records: &[RequirementRecord],
    vocab: &Vocabulary,
    graph: &OntologyGraph,
) -> Result<AblationTable> {
    let grid = &config.ablation;
    if grid.layer_plans.is_empty() || grid.freq_thresholds.is_empty() || grid.toggles.is_empty() {
        return Err(Error::InvalidConfig("ablation grids must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for layer_hops in &grid.layer_plans {
        for &threshold in &grid.freq_thresholds {
            for &toggles in &grid.toggles {
                let mut point = config.clone();
                point.plan.layer_hops = layer_hops.clone();
                point.plan.freq_threshold = threshold;
                point.toggles = toggles;
                let plan = point.plan.plan();
                let result = crossval_with(&point, records, vocab, graph);
                let (report, error) = match result {
                    Ok(cv) => match cv.mean {
                        Some(m) => (Some(m), None),
                        None => (None, Some("every fold failed".to_string())),
                    },
                    Err(e) => (None, Some(e.to_string())),
                };
                if let Some(e) = &error {
                    log::warn!("ablation point {}: {e}", plan.label());
                }
                rows.push(AblationRow {
                    layers: plan.label(),
                    threshold: threshold_label(threshold),
                    setting: settings_label(&plan.layers(), threshold, toggles),
                    report,
                    error,
                });
            }
        }
    }
    Ok(AblationTable { rows })
}

pub fn cmd_ablate(config: &ExperimentConfig) -> Result<AblationTable> {
    let (records, vocab) = load_prepared(config)?;
    let graph = OntologyGraph::load(&config.ontology)?;
    let table = ablate_with(config, &records, &vocab, &graph)?;
    ensure_dir(&config.out_dir)?;
    write_json(&config.out_dir.join("ablation.json"), &table)?;
    write_text(&config.out_dir.join("ablation.txt"), &table.table())?;
    Ok(table)
}

/// Parses a comma-separated keyword list.
pub fn parse_keywords(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .map(String::from)
        .collect()
}

/// Reads a roles file in the corpus `{name: {words, alpha}}` form.
pub fn load_roles(path: impl AsRef<Path>) -> Result<SyntaxReference> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read roles {}: {e}", path.display())))?;
    let roles = serde_json::from_str(&text)?;
    SyntaxReference::from_roles(&roles)
}
