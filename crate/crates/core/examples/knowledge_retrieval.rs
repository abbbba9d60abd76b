//! Multi-hop retrieval over the bundled UAV ontology and the pseudo-sentences
//! each injection layer would receive.
//!
//!     cargo run --example knowledge_retrieval -- landing "internal simulator" ground

use std::path::Path;

use reqgen::ontology::{
    build_injection_knowledge, filter_by_frequency, multi_hop_search, InjectionPlan, OntologyGraph,
};

fn main() -> reqgen::Result<()> {
    let mut keywords: Vec<String> = std::env::args().skip(1).collect();
    if keywords.is_empty() {
        keywords = vec!["landing".into(), "internal simulator".into(), "ground".into()];
    }
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/ontology.jsonl");
    let graph = OntologyGraph::load(path)?;
    println!("{} entities, {} triples", graph.entities().len(), graph.triples().len());

    let hops = multi_hop_search(&graph, &keywords, 5)?;
    if !hops.unmatched.is_empty() {
        println!("unmatched: {:?}", hops.unmatched);
    }
    let kept = filter_by_frequency(&hops, 10);
    println!("{} entities within 5 hops, {} with more than 10 walks", hops.hop_of.len(), kept.hop_of.len());
    for (entity, hop) in &kept.hop_of {
        println!("  {entity:<24} hop {hop}  walks {}", kept.frequency[entity]);
    }

    let plan = InjectionPlan::from_layer_hops(&[(1, 5), (2, 2), (4, 1)], 10, 512);
    println!("\nplan {}", plan.label());
    for (layer, sentences) in build_injection_knowledge(&graph, &keywords, &plan)? {
        println!("layer {layer}: {} sentences", sentences.len());
        for s in sentences.iter().take(6) {
            println!("  [hop {}] {}", s.hop, s.text);
        }
    }
    Ok(())
}
