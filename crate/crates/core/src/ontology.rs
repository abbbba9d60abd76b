//! Domain ontology: triples, keyword-rooted multi-hop retrieval and the
//! pseudo-sentences that carry retrieved knowledge into the model.
//!
//! Traversal treats every triple as an undirected edge. Retrieval counts how
//! often each entity is reached by walks of length `1..=max_hops` starting at
//! the keyword seeds; that count drives frequency filtering and the
//! per-layer token budget.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::{Error, Result};

/// Coarse relation category used to pick a pseudo-sentence template.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    Subclass,
    SuperClass,
    SubProperty,
    HasDomain,
    HasRange,
    Other,
}

/// Lowercase and collapse runs of whitespace to a single space.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn classify_relation(relation: &str) -> RelationKind {
    match normalize_name(relation).as_str() {
        "subclassof" => RelationKind::Subclass,
        "hassuperclasses" => RelationKind::SuperClass,
        "subpropertyof" => RelationKind::SubProperty,
        "hasdomain" | "has domain" => RelationKind::HasDomain,
        "hasrange" | "has range" => RelationKind::HasRange,
        _ => RelationKind::Other,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub kind: RelationKind,
}

impl Triple {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Option<Self> {
        let (subject, relation, object) = (subject.into(), relation.into(), object.into());
        if subject.is_empty() || relation.is_empty() || object.is_empty() {
            return None;
        }
        let kind = classify_relation(&relation);
        Some(Triple {
            subject,
            relation,
            object,
            kind,
        })
    }
}

#[derive(Deserialize)]
struct TripleLine {
    s: String,
    r: String,
    o: String,
}

/// One adjacency entry: the relation, the entity at the other end and the
/// index of the triple that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub relation: String,
    pub neighbor: usize,
    pub triple: usize,
}

/// Immutable undirected multigraph over ontology entities.
#[derive(Clone, Debug, Default)]
pub struct OntologyGraph {
    entities: Vec<String>,
    index: HashMap<String, usize>,
    by_normalized: HashMap<String, usize>,
    adjacency: Vec<Vec<Edge>>,
    triples: Vec<Triple>,
}

impl OntologyGraph {
    /// Builds a graph from triples, dropping exact duplicates and keeping
    /// first-seen order.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut graph = OntologyGraph::default();
        let mut seen = HashSet::new();
        for triple in triples {
            if !seen.insert((
                triple.subject.clone(),
                triple.relation.clone(),
                triple.object.clone(),
            )) {
                continue;
            }
            let s = graph.intern(&triple.subject);
            let o = graph.intern(&triple.object);
            let t = graph.triples.len();
            graph.adjacency[s].push(Edge {
                relation: triple.relation.clone(),
                neighbor: o,
                triple: t,
            });
            if s != o {
                graph.adjacency[o].push(Edge {
                    relation: triple.relation.clone(),
                    neighbor: s,
                    triple: t,
                });
            }
            graph.triples.push(triple);
        }
        graph
    }

    /// Reads a JSON-lines file of `{"s": .., "r": .., "o": ..}` objects.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut triples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TripleLine =
                serde_json::from_str(&line).map_err(|_| Error::InvalidTriple { line: i + 1 })?;
            let triple = Triple::new(parsed.s, parsed.r, parsed.o)
                .ok_or(Error::InvalidTriple { line: i + 1 })?;
            triples.push(triple);
        }
        Ok(Self::from_triples(triples))
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.entities.len();
        self.entities.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.by_normalized.entry(normalize_name(name)).or_insert(id);
        self.adjacency.push(Vec::new());
        id
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entities[id]
    }

    /// Looks an entity up by normalized exact name.
    pub fn match_keyword(&self, keyword: &str) -> Option<usize> {
        self.by_normalized.get(&normalize_name(keyword)).copied()
    }

    pub fn edges(&self, id: usize) -> &[Edge] {
        &self.adjacency[id]
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Names of the properties that carry a domain or range constraint.
    pub fn constrained_properties(&self) -> BTreeSet<&str> {
        self.triples
            .iter()
            .filter(|t| matches!(t.kind, RelationKind::HasDomain | RelationKind::HasRange))
            .map(|t| t.subject.as_str())
            .collect()
    }
}

/// Result of a keyword-rooted traversal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopResult {
    /// Shortest undirected distance from the seed set; seeds are excluded.
    pub hop_of: BTreeMap<String, usize>,
    /// Number of walks of length `1..=max_hops` from the seeds ending here.
    pub frequency: BTreeMap<String, u64>,
    pub max_hops: usize,
    pub seeds: Vec<String>,
    /// Keywords with no matching entity.
    pub unmatched: Vec<String>,
}

pub fn multi_hop_search<S: AsRef<str>>(
    graph: &OntologyGraph,
    keywords: &[S],
    max_hops: usize,
) -> Result<HopResult> {
    if max_hops == 0 {
        return Err(Error::InvalidPlan("max_hops must be at least 1".into()));
    }
    let mut seeds = Vec::new();
    let mut unmatched = Vec::new();
    for keyword in keywords {
        match graph.match_keyword(keyword.as_ref()) {
            Some(id) if !seeds.contains(&id) => seeds.push(id),
            Some(_) => {}
            None => unmatched.push(keyword.as_ref().to_string()),
        }
    }
    if seeds.is_empty() {
        return Err(Error::NoSeedMatched);
    }

    let n = graph.entities.len();

    // BFS from the whole seed set.
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for &s in &seeds {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == max_hops {
            continue;
        }
        for edge in graph.edges(u) {
            if dist[edge.neighbor] == usize::MAX {
                dist[edge.neighbor] = dist[u] + 1;
                queue.push_back(edge.neighbor);
            }
        }
    }

    // Walk counts: c_0 = indicator of the seeds, c_d(v) = sum over edges of c_{d-1}.
    let mut current = vec![0u64; n];
    for &s in &seeds {
        current[s] = 1;
    }
    let mut total = vec![0u64; n];
    for _ in 0..max_hops {
        let mut next = vec![0u64; n];
        for (v, slot) in next.iter_mut().enumerate() {
            *slot = graph.adjacency[v]
                .iter()
                .fold(0u64, |acc, e| acc.saturating_add(current[e.neighbor]));
        }
        for (t, c) in total.iter_mut().zip(&next) {
            *t = t.saturating_add(*c);
        }
        current = next;
    }

    let mut hop_of = BTreeMap::new();
    let mut frequency = BTreeMap::new();
    for v in 0..n {
        if dist[v] >= 1 && dist[v] <= max_hops {
            let name = graph.entities[v].clone();
            hop_of.insert(name.clone(), dist[v]);
            frequency.insert(name, total[v]);
        }
    }
    Ok(HopResult {
        hop_of,
        frequency,
        max_hops,
        seeds: seeds.iter().map(|&s| graph.entities[s].clone()).collect(),
        unmatched,
    })
}

/// Keeps entities retrieved strictly more than `threshold` times.
pub fn filter_by_frequency(result: &HopResult, threshold: u64) -> HopResult {
    let keep: BTreeSet<&String> = result
        .frequency
        .iter()
        .filter(|(_, &f)| f > threshold)
        .map(|(e, _)| e)
        .collect();
    HopResult {
        hop_of: result
            .hop_of
            .iter()
            .filter(|(e, _)| keep.contains(e))
            .map(|(e, &h)| (e.clone(), h))
            .collect(),
        frequency: result
            .frequency
            .iter()
            .filter(|(e, _)| keep.contains(e))
            .map(|(e, &f)| (e.clone(), f))
            .collect(),
        max_hops: result.max_hops,
        seeds: result.seeds.clone(),
        unmatched: result.unmatched.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoSentence {
    pub text: String,
    pub hop: usize,
    pub sources: Vec<Triple>,
}

fn capitalize_first(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn render_single(triple: &Triple) -> String {
    let (a, r, b) = (&triple.subject, &triple.relation, &triple.object);
    match triple.kind {
        RelationKind::Subclass => format!("{a} is subclass of {b}"),
        RelationKind::SuperClass => format!("{a} has super class {b}"),
        RelationKind::SubProperty => format!("{a} is subproperty of {b}"),
        RelationKind::HasDomain => format!("{a} has domain {b}"),
        RelationKind::HasRange => format!("{a} has range {b}"),
        RelationKind::Other => format!("{a} {r} {b}"),
    }
}

fn render_pair(domain: &Triple, range: &Triple) -> String {
    let text = format!("{} is {} {}", domain.object, domain.subject, range.object);
    format!("{}.", capitalize_first(&text))
}

/// Renders triples with the fixed templates, pairing `hasDomain` and
/// `hasRange` triples that share a property. Output follows input order;
/// a paired sentence sits at the position of the earlier triple of its pair.
pub fn triples_to_pseudo_sentences(
    triples: &[Triple],
    hop_of: &BTreeMap<String, usize>,
) -> Vec<PseudoSentence> {
    let mut domains: HashMap<&str, VecDeque<usize>> = HashMap::new();
    let mut ranges: HashMap<&str, VecDeque<usize>> = HashMap::new();
    for (i, t) in triples.iter().enumerate() {
        match t.kind {
            RelationKind::HasDomain => domains.entry(&t.subject).or_default().push_back(i),
            RelationKind::HasRange => ranges.entry(&t.subject).or_default().push_back(i),
            _ => {}
        }
    }
    // partner[i] = index of the triple paired with i
    let mut partner: Vec<Option<usize>> = vec![None; triples.len()];
    for (property, ds) in &domains {
        if let Some(rs) = ranges.get(property) {
            for (&d, &r) in ds.iter().zip(rs) {
                partner[d] = Some(r);
                partner[r] = Some(d);
            }
        }
    }

    let hop_for = |sources: &[&Triple]| -> usize {
        sources
            .iter()
            .flat_map(|t| [&t.subject, &t.object])
            .filter_map(|e| hop_of.get(e).copied())
            .min()
            .unwrap_or(1)
            .max(1)
    };

    let mut out = Vec::with_capacity(triples.len());
    for (i, t) in triples.iter().enumerate() {
        match partner[i] {
            Some(j) if j < i => continue,
            Some(j) => {
                let (d, r) = if t.kind == RelationKind::HasDomain {
                    (t, &triples[j])
                } else {
                    (&triples[j], t)
                };
                out.push(PseudoSentence {
                    text: render_pair(d, r),
                    hop: hop_for(&[d, r]),
                    sources: vec![d.clone(), r.clone()],
                });
            }
            None => out.push(PseudoSentence {
                text: render_single(t),
                hop: hop_for(&[t]),
                sources: vec![t.clone()],
            }),
        }
    }
    out
}

/// Recovers the entity names mentioned by a pseudo-sentence.
///
/// Paired sentences come back as `[domain, property, range]` with the first
/// letter of the domain lowercased; every other template as
/// `[subject, object]`. `Other` relations and paired properties are resolved
/// against the names present in `graph`.
pub fn parse_pseudo_sentence(text: &str, graph: &OntologyGraph) -> Option<Vec<String>> {
    if let Some(body) = text.strip_suffix('.') {
        let body = {
            let mut chars = body.chars();
            match chars.next() {
                Some(c) => c.to_lowercase().chain(chars).collect::<String>(),
                None => String::new(),
            }
        };
        for property in graph.constrained_properties() {
            let needle = format!(" is {property} ");
            if let Some((a, b)) = body.split_once(&needle) {
                return Some(vec![a.to_string(), property.to_string(), b.to_string()]);
            }
        }
    }
    for sep in [
        " is subclass of ",
        " has super class ",
        " is subproperty of ",
        " has domain ",
        " has range ",
    ] {
        if let Some((a, b)) = text.split_once(sep) {
            return Some(vec![a.to_string(), b.to_string()]);
        }
    }
    let relations: BTreeSet<&str> = graph
        .triples()
        .iter()
        .filter(|t| t.kind == RelationKind::Other)
        .map(|t| t.relation.as_str())
        .collect();
    for relation in relations {
        if let Some((a, b)) = text.split_once(&format!(" {relation} ")) {
            return Some(vec![a.to_string(), b.to_string()]);
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    /// 1-based encoder layer.
    pub layer: usize,
    pub hop_limit: usize,
    pub freq_threshold: u64,
}

/// Which knowledge goes into which encoder layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionPlan {
    pub entries: Vec<PlanEntry>,
    pub token_cap_per_layer: usize,
}

impl Default for InjectionPlan {
    fn default() -> Self {
        InjectionPlan::from_layer_hops(&[(1, 5), (2, 2), (4, 1)], 10, 512)
    }
}

impl InjectionPlan {
    pub fn from_layer_hops(layer_hops: &[(usize, usize)], threshold: u64, cap: usize) -> Self {
        InjectionPlan {
            entries: layer_hops
                .iter()
                .map(|&(layer, hop_limit)| PlanEntry {
                    layer,
                    hop_limit,
                    freq_threshold: threshold,
                })
                .collect(),
            token_cap_per_layer: cap,
        }
    }

    /// An empty plan injects nothing.
    pub fn none() -> Self {
        InjectionPlan {
            entries: Vec::new(),
            token_cap_per_layer: 0,
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        for entry in &self.entries {
            if entry.layer == 0 || entry.layer > depth {
                return Err(Error::InvalidPlan(format!(
                    "layer {} outside 1..={depth}",
                    entry.layer
                )));
            }
            if entry.hop_limit == 0 {
                return Err(Error::InvalidPlan("hop limit must be at least 1".into()));
            }
        }
        for pair in self.entries.windows(2) {
            if pair[1].layer <= pair[0].layer {
                return Err(Error::InvalidPlan(
                    "layers must be strictly increasing".into(),
                ));
            }
            if pair[1].hop_limit > pair[0].hop_limit {
                return Err(Error::InvalidPlan(
                    "hop limits must be non-increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.layer).collect()
    }

    pub fn max_hop(&self) -> usize {
        self.entries.iter().map(|e| e.hop_limit).max().unwrap_or(0)
    }

    /// Row label in `layer(hop)` form, e.g. `1(5),2(2),4(1)`.
    pub fn label(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}({})", e.layer, e.hop_limit))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Per-layer pseudo-sentences for one keyword set. Layers with no knowledge
/// map to an empty list; unmatched keywords simply contribute nothing.
pub fn build_injection_knowledge<S: AsRef<str>>(
    graph: &OntologyGraph,
    keywords: &[S],
    plan: &InjectionPlan,
) -> Result<BTreeMap<usize, Vec<PseudoSentence>>> {
    let mut out: BTreeMap<usize, Vec<PseudoSentence>> =
        plan.entries.iter().map(|e| (e.layer, Vec::new())).collect();
    if plan.entries.is_empty() {
        return Ok(out);
    }
    let full = match multi_hop_search(graph, keywords, plan.max_hop()) {
        Ok(r) => r,
        Err(Error::NoSeedMatched) => return Ok(out),
        Err(e) => return Err(e),
    };
    let seeds: HashSet<usize> = full
        .seeds
        .iter()
        .filter_map(|s| graph.entity_id(s))
        .collect();
    let in_radius = |id: usize| {
        seeds.contains(&id) || full.hop_of.contains_key(graph.entity_name(id))
    };

    for entry in &plan.entries {
        let filtered = filter_by_frequency(&full, entry.freq_threshold);
        let mut kept: Vec<(&String, u64)> = filtered
            .hop_of
            .iter()
            .filter(|(_, &h)| h <= entry.hop_limit)
            .map(|(e, _)| (e, filtered.frequency[e]))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut chosen = HashSet::new();
        let mut selected = Vec::new();
        for (name, _) in kept {
            let id = graph.entity_id(name).expect("retrieved entity exists");
            for edge in graph.edges(id) {
                if in_radius(edge.neighbor) && chosen.insert(edge.triple) {
                    selected.push(graph.triples()[edge.triple].clone());
                }
            }
        }

        let sentences = triples_to_pseudo_sentences(&selected, &full.hop_of);
        let mut budget = plan.token_cap_per_layer;
        let layer_sentences = out.get_mut(&entry.layer).expect("layer present");
        for sentence in sentences {
            // Each sentence is followed by a separator token.
            let cost = tokenize(&sentence.text).len() + 1;
            if cost > budget {
                break;
            }
            budget -= cost;
            layer_sentences.push(sentence);
        }
    }
    Ok(out)
}
