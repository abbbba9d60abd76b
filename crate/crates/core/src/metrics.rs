//! BLEU, ROUGE and corpus-level RS4RE. Every score is scaled to `[0, 100]`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::RequirementRecord;
use crate::decoder::rs4re;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Multiset intersection size of the two n-gram bags.
fn clipped_overlap<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> usize {
    let reference = ngram_counts(reference, n);
    ngram_counts(candidate, n)
        .iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

fn ngram_total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

/// Single-reference BLEU with brevity penalty, uniform weights over
/// `1..=max_n`. Zero when any n-gram precision is zero.
pub fn bleu<T: Eq + Hash>(candidate: &[T], reference: &[T], max_n: usize) -> f64 {
    if candidate.is_empty() || reference.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let total = ngram_total(candidate.len(), n);
        let hits = clipped_overlap(candidate, reference, n);
        if total == 0 || hits == 0 {
            return 0.0;
        }
        log_sum += (hits as f64 / total as f64).ln() / max_n as f64;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    100.0 * bp * log_sum.exp()
}

/// Recall, precision and F-measure, each in `[0, 100]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub r: f64,
    pub p: f64,
    pub f: f64,
}

impl Prf {
    pub fn from_counts(hits: usize, reference_total: usize, candidate_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let r = ratio(hits, reference_total);
        let p = ratio(hits, candidate_total);
        let f = if r + p > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Prf {
            r: 100.0 * r,
            p: 100.0 * p,
            f: 100.0 * f,
        }
    }
}

pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    Prf::from_counts(
        clipped_overlap(candidate, reference, n),
        ngram_total(reference.len(), n),
        ngram_total(candidate.len(), n),
    )
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), reference.len(), candidate.len())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub id: String,
    pub generated: String,
    pub bleu1: f64,
    pub bleu2: f64,
    pub rouge: BTreeMap<String, Prf>,
    /// `[0, 100]`; absent when the record has no roles.
    pub rs4re: Option<f64>,
}

impl ExampleMetrics {
    pub fn compute(id: &str, generated: &[String], reference: &RequirementRecord) -> Self {
        let target = reference.tokens();
        let rouge = BTreeMap::from([
            ("1".to_string(), rouge_n(generated, &target, 1)),
            ("2".to_string(), rouge_n(generated, &target, 2)),
            ("L".to_string(), rouge_l(generated, &target)),
        ]);
        ExampleMetrics {
            id: id.to_string(),
            generated: generated.join(" "),
            bleu1: bleu(generated, &target, 1),
            bleu2: bleu(generated, &target, 2),
            rouge,
            rs4re: reference.roles.as_ref().map(|r| 100.0 * rs4re(generated, r)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu1: f64,
    pub bleu2: f64,
    /// Keyed by `"1"`, `"2"` and `"L"`.
    pub rouge: BTreeMap<String, Prf>,
    /// Mean over records carrying roles; absent if none do.
    pub rs4re_mean: Option<f64>,
    pub examples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_example: Vec<ExampleMetrics>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn mean_prf<'a>(values: impl Iterator<Item = &'a Prf> + Clone) -> Prf {
    Prf {
        r: mean(values.clone().map(|x| x.r)).unwrap_or(0.0),
        p: mean(values.clone().map(|x| x.p)).unwrap_or(0.0),
        f: mean(values.map(|x| x.f)).unwrap_or(0.0),
    }
}

pub const ROUGE_KEYS: [&str; 3] = ["1", "2", "L"];

impl MetricsReport {
    /// Arithmetic mean of per-example rows.
    pub fn from_examples(per_example: Vec<ExampleMetrics>) -> Self {
        let rouge = ROUGE_KEYS
            .iter()
            .map(|k| (k.to_string(), mean_prf(per_example.iter().map(|e| &e.rouge[*k]))))
            .collect();
        MetricsReport {
            bleu1: mean(per_example.iter().map(|e| e.bleu1)).unwrap_or(0.0),
            bleu2: mean(per_example.iter().map(|e| e.bleu2)).unwrap_or(0.0),
            rouge,
            rs4re_mean: mean(per_example.iter().filter_map(|e| e.rs4re)),
            examples: per_example.len(),
            per_example,
        }
    }

    /// Arithmetic mean of several reports (fold rows), without per-example
    /// detail.
    pub fn mean_of(reports: &[MetricsReport]) -> Self {
        let rouge = ROUGE_KEYS
            .iter()
            .map(|k| (k.to_string(), mean_prf(reports.iter().map(|r| &r.rouge[*k]))))
            .collect();
        MetricsReport {
            bleu1: mean(reports.iter().map(|r| r.bleu1)).unwrap_or(0.0),
            bleu2: mean(reports.iter().map(|r| r.bleu2)).unwrap_or(0.0),
            rouge,
            rs4re_mean: mean(reports.iter().filter_map(|r| r.rs4re_mean)),
            examples: reports.iter().map(|r| r.examples).sum(),
            per_example: Vec::new(),
        }
    }

    /// All headline values, in table column order.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.bleu1, self.bleu2];
        for k in ROUGE_KEYS {
            let prf = self.rouge.get(k).copied().unwrap_or_default();
            v.extend([prf.r, prf.p, prf.f]);
        }
        if let Some(x) = self.rs4re_mean {
            v.push(x);
        }
        v
    }

    pub fn in_range(&self) -> bool {
        self.values()
            .iter()
            .all(|v| v.is_finite() && (0.0..=100.0 + 1e-9).contains(v))
    }
}

/// Scores generated token sequences against their reference records.
pub fn evaluate_corpus(pairs: &[(Vec<String>, &RequirementRecord)]) -> MetricsReport {
    MetricsReport::from_examples(
        pairs
            .iter()
            .map(|(generated, record)| ExampleMetrics::compute(&record.id, generated, record))
            .collect(),
    )
}

pub const TABLE_COLUMNS: [&str; 12] = [
    "BLEU1", "BLEU2", "R-1 R", "R-1 P", "R-1 F", "R-2 R", "R-2 P", "R-2 F", "R-L R", "R-L P",
    "R-L F", "RS4RE",
];

/// Aligned plain-text table with one row per labelled report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let label_width = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain(["Setting".len()])
        .max()
        .unwrap_or(0);
    let mut out = format!("{:<label_width$}", "Setting");
    for c in TABLE_COLUMNS {
        let _ = write!(out, " {c:>7}");
    }
    out.push('\n');
    for (label, report) in rows {
        let _ = write!(out, "{label:<label_width$}");
        let mut cells = vec![report.bleu1, report.bleu2];
        for k in ROUGE_KEYS {
            let prf = report.rouge.get(k).copied().unwrap_or_default();
            cells.extend([prf.r, prf.p, prf.f]);
        }
        for v in cells {
            let _ = write!(out, " {v:>7.2}");
        }
        match report.rs4re_mean {
            Some(v) => {
                let _ = write!(out, " {v:>7.2}");
            }
            None => {
                let _ = write!(out, " {:>7}", "-");
            }
        }
        out.push('\n');
    }
    out
}
