//! BLEU, ROUGE and RS4RE on a few hand-written candidates.

use reqgen::corpus::{tokenize, RequirementRecord};
use reqgen::decoder::{rs4re, rs4re_breakdown, SyntaxReference};
use reqgen::metrics::{bleu, evaluate_corpus, format_table, rouge_l, rouge_n};

fn main() -> reqgen::Result<()> {
    let reference = tokenize("The internal simulator shall simulate the landing on the ground.");
    let candidate = tokenize("The internal simulator shall perform the landing on the ground.");
    println!("BLEU-1 {:.2}  BLEU-2 {:.2}", bleu(&candidate, &reference, 1), bleu(&candidate, &reference, 2));
    println!("ROUGE-1 {:?}", rouge_n(&candidate, &reference, 1));
    println!("ROUGE-2 {:?}", rouge_n(&candidate, &reference, 2));
    println!("ROUGE-L {:?}", rouge_l(&candidate, &reference));

    let roles: SyntaxReference = serde_json::from_str::<std::collections::BTreeMap<_, _>>(
        r#"{"agent":{"words":["internal simulator"],"alpha":0.5},
            "action":{"words":["simulate"],"alpha":0.25},
            "object":{"words":["landing"],"alpha":0.25}}"#,
    )
    .map_err(reqgen::Error::from)
    .and_then(|m| SyntaxReference::from_roles(&m))?;
    println!("\nRS4RE {:.3}", rs4re(&candidate, &roles));
    for (element, overlap) in rs4re_breakdown(&candidate, &roles) {
        println!("  {element:<8} {overlap:.2}");
    }

    let record: RequirementRecord = serde_json::from_str(
        r#"{"id":"uav-02","text":"The internal simulator shall simulate the landing on the ground.",
            "roles":{"agent":{"words":["internal simulator"],"alpha":0.5},
                     "action":{"words":["simulate"],"alpha":0.25},
                     "object":{"words":["landing"],"alpha":0.25}}}"#,
    )?;
    let other = RequirementRecord::new("uav-03", "The ground control station shall display the altitude.");
    let report = evaluate_corpus(&[
        (candidate, &record),
        (tokenize("The station shall display the altitude."), &other),
    ]);
    println!("\n{}", format_table(&[("two examples".into(), report)]));
    Ok(())
}
