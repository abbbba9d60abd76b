//! Trains a small knowledge-injected model on part of the corpus and reports
//! the loss curve and teacher-forced token accuracy.
//!
//!     cargo run --release --example train_model

use std::path::Path;

use reqgen::corpus::{load_records, Vocabulary};
use reqgen::model::{train_with, ModelConfig};
use reqgen::ontology::{InjectionPlan, OntologyGraph};
use reqgen::pipeline::training_examples;

fn main() -> reqgen::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let graph = OntologyGraph::load(data.join("ontology.jsonl"))?;
    let records: Vec<_> = load_records(data.join("corpus.jsonl"))?
        .into_iter()
        .filter(|r| r.keywords.len() >= 2)
        .take(12)
        .collect();

    let plan = InjectionPlan::from_layer_hops(&[(1, 5), (2, 2), (4, 1)], 10, 48);
    let mut texts: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
    for sentences in records
        .iter()
        .map(|r| reqgen::ontology::build_injection_knowledge(&graph, &r.keywords, &plan))
    {
        texts.extend(sentences?.into_values().flatten().map(|s| s.text));
    }
    let vocab = Vocabulary::build(&texts, 1);

    let config = ModelConfig {
        depth: 4,
        d_model: 32,
        heads: 4,
        d_ffn: 64,
        max_len: 48,
        vocab_size: vocab.len(),
        injection_layers: plan.layers(),
        knowledge_hidden: 8,
        learning_rate: 3e-3,
        batch_size: 4,
        epochs: 60,
        ..ModelConfig::default()
    };
    let examples = training_examples(&records, &vocab, &graph, &plan, config.max_len)?;
    let (model, log) = train_with(&examples, &config, |epoch, loss| {
        if epoch % 10 == 0 {
            println!("epoch {epoch:>3}  loss {loss:.4}");
        }
    })?;
    println!("first loss {:.4}, last {:.4}", log.epoch_losses[0], log.epoch_losses.last().unwrap());

    let (mut hits, mut total) = (0, 0);
    for ex in &examples {
        let (out, _) = model.forward(&ex.pair, &ex.knowledge)?;
        for (row, &gold) in out.lm_logits.rows().into_iter().zip(&ex.pair.tgt_ids) {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            hits += usize::from(best == gold);
            total += 1;
        }
    }
    println!("teacher-forced accuracy {:.3} over {total} tokens", hits as f64 / total as f64);
    Ok(())
}
