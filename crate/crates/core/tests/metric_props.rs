use proptest::prelude::*;

use reqgen::corpus::RequirementRecord;
use reqgen::metrics::{bleu, evaluate_corpus, rouge_l, rouge_n, MetricsReport, Prf};

fn tokens(min: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, min..12)
}

proptest! {
    #[test]
    fn self_overlap_is_perfect(x in tokens(1)) {
        let full = Prf { r: 100.0, p: 100.0, f: 100.0 };
        prop_assert_eq!(rouge_n(&x, &x, 1), full);
        prop_assert_eq!(rouge_l(&x, &x), full);
        prop_assert_eq!(bleu(&x, &x, 1), 100.0);
        if x.len() >= 2 {
            prop_assert_eq!(rouge_n(&x, &x, 2), full);
            prop_assert_eq!(bleu(&x, &x, 2), 100.0);
        }
    }

    #[test]
    fn scores_stay_in_range(c in tokens(0), r in tokens(1)) {
        for n in [1, 2] {
            let b = bleu(&c, &r, n);
            prop_assert!((0.0..=100.0).contains(&b));
            let p = rouge_n(&c, &r, n);
            for v in [p.r, p.p, p.f] {
                prop_assert!((0.0..=100.0 + 1e-9).contains(&v));
            }
        }
        let l = rouge_l(&c, &r);
        prop_assert!(l.f <= l.r.max(l.p) + 1e-9);
    }

    #[test]
    fn f_is_harmonic_mean(c in tokens(0), r in tokens(0)) {
        let p = rouge_l(&c, &r);
        let expected = if p.r + p.p > 0.0 { 2.0 * p.r * p.p / (p.r + p.p) } else { 0.0 };
        prop_assert!((p.f - expected).abs() < 1e-9);
    }
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn corpus_report_averages_examples() {
    let a = RequirementRecord::new("a", "the uav shall land");
    let b = RequirementRecord::new("b", "the uav shall hover");
    let report = evaluate_corpus(&[
        (toks("the uav shall land"), &a),
        (toks("x y"), &b),
    ]);
    assert_eq!(report.bleu1, 50.0);
    assert_eq!(report.examples, 2);
    assert_eq!(report.per_example.len(), 2);
    assert!(report.in_range());

    let mean = MetricsReport::mean_of(&[report.clone(), report.clone()]);
    assert_eq!(mean.bleu1, report.bleu1);
    assert_eq!(mean.rouge["L"], report.rouge["L"]);
}

#[test]
fn rs4re_mean_uses_only_records_with_roles() {
    let with_roles: RequirementRecord = serde_json::from_str(
        r#"{"id":"r","text":"the system shall display altitude",
            "roles":{"agent":{"words":["system","shall"],"alpha":0.5},
                     "action":{"words":["display","altitude"],"alpha":0.5}}}"#,
    )
    .unwrap();
    let plain = RequirementRecord::new("p", "anything");
    let report = evaluate_corpus(&[
        (toks("the system shall display speed"), &with_roles),
        (toks("anything"), &plain),
    ]);
    assert_eq!(report.rs4re_mean, Some(75.0));
}
